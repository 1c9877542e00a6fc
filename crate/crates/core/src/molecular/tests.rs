use super::*;
use crate::numerics::{finite_difference_check, optimizer_step, Binder, Graph, OptimizerState, ParameterStore};
use crate::rng::{substream, INIT};

fn small(mode: MolMode) -> MolecularConfig {
    MolecularConfig {
        d_model: 16,
        d_embed: 8,
        layers: 2,
        heads: 4,
        ffn_hidden: 32,
        max_len: 24,
        lora_rank: 2,
        lora_alpha: 2.0,
        mode,
        ..MolecularConfig::default()
    }
}

fn build(config: MolecularConfig) -> (MolecularEncoder, ParameterStore) {
    let mut store = ParameterStore::new();
    let mut rng = substream(3, INIT);
    let enc = MolecularEncoder::init(config, &mut store, &mut rng).unwrap();
    (enc, store)
}

/// Nudges every adapter `up` matrix away from zero.
fn perturb_adapters(store: &mut ParameterStore) {
    for (path, t) in store.iter_mut() {
        if path.ends_with(".lora_up") {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v = 0.05 * ((i % 7) as f64 - 3.0);
            }
        }
    }
}

#[test]
fn unit_norm_and_pad_invariant() {
    let (enc, store) = build(small(MolMode::Lora));
    let short = enc.vocab.tokenize("CC(=O)O", 12).unwrap();
    let long = enc.vocab.tokenize("CC(=O)O", 24).unwrap();
    let a = enc.encode_tokens(&store, &[&short]).unwrap().remove(0);
    let b = enc.encode_tokens(&store, &[&long]).unwrap().remove(0);
    assert!((a.norm() - 1.0).abs() < 1e-12);
    assert!(a.bitwise_eq(&b));
}

#[test]
fn zero_adapters_match_base_model_bitwise() {
    let (enc, store) = build(small(MolMode::Lora));
    let t = enc.tokenize("ClC1=CC=CC=C1").unwrap();
    let run = |adapters| {
        let mut g = Graph::new();
        let mut b = Binder::inference(&store);
        let z = enc.forward_with(&mut g, &mut b, &[&t], adapters).unwrap();
        g.value(z).clone()
    };
    assert!(run(true).bitwise_eq(&run(false)));
}

#[test]
fn nonzero_adapters_change_the_output() {
    let (enc, mut store) = build(small(MolMode::Lora));
    let before = enc.encode(&store, "CCN").unwrap();
    perturb_adapters(&mut store);
    let after = enc.encode(&store, "CCN").unwrap();
    assert!(!before.bitwise_eq(&after));
}

#[test]
fn trainable_masks_per_mode() {
    let (_, store) = build(small(MolMode::Lora));
    for path in store.trainable_paths() {
        assert!(is_adapter(path) || is_output_projection(path), "{path}");
    }
    assert!(!store.is_trainable("mol.block0.attn.q.weight"));
    assert!(store.is_trainable("mol.block0.attn.k.lora_up"));
    assert!(!store.contains("mol.block0.attn.o.lora_up"));
    assert!(!store.contains("mol.block0.ffn.w1.lora_up"));

    let (_, store) = build(small(MolMode::Frozen));
    let t: Vec<_> = store.trainable_paths().cloned().collect();
    assert_eq!(t, vec!["mol.out.bias".to_string(), "mol.out.weight".to_string()]);
    assert_eq!(adapter_parameter_count(&store), 0);

    let (_, store) = build(small(MolMode::Full));
    assert_eq!(store.trainable_paths().count(), store.len());
}

#[test]
fn parameter_fraction_from_shape_arithmetic() {
    let config = MolecularConfig::default();
    let (enc, store) = build(config.clone());
    let (d, r, f, v, e) = (128, 4, 256, 41, 128);
    let block = 2 * 2 * d + 4 * d * d + (d * f + f + f * d + d) + 3 * (d * r + r * d);
    let total = v * d + config.max_len * d + 4 * block + 2 * d + d * e + e;
    let trainable = 4 * 3 * (d * r + r * d) + d * e + e;
    assert_eq!(store.count_where(|p| p.starts_with("mol.")), total);
    let frac = trainable_parameter_fraction(&enc, &store).unwrap();
    assert_eq!(frac, trainable as f64 / total as f64);
    assert!(frac < 0.10);
}

#[test]
fn adapter_count_is_linear_in_rank() {
    let (_, s2) = build(small(MolMode::Lora));
    let (_, s4) = build(MolecularConfig {
        lora_rank: 4,
        ..small(MolMode::Lora)
    });
    assert_eq!(adapter_parameter_count(&s4), 2 * adapter_parameter_count(&s2));
    let mut store = ParameterStore::new();
    let bad = MolecularEncoder::init(
        MolecularConfig {
            lora_rank: 0,
            ..small(MolMode::Lora)
        },
        &mut store,
        &mut substream(0, INIT),
    );
    assert!(bad.is_err());
}

#[test]
fn one_step_moves_adapters_but_not_base() {
    let (enc, mut store) = build(small(MolMode::Lora));
    let base_before = store.get("mol.block0.attn.q.weight").unwrap().clone();
    let up_before = store.get("mol.block1.attn.v.lora_up").unwrap().clone();
    let toks: Vec<Vec<usize>> = ["CCO", "c1ccccc1", "NC(=O)C"]
        .iter()
        .map(|s| enc.tokenize(s).unwrap())
        .collect();
    let refs: Vec<&[usize]> = toks.iter().map(Vec::as_slice).collect();
    let grads = {
        let mut g = Graph::new();
        let mut b = Binder::new(&store);
        let z = enc.forward(&mut g, &mut b, &refs).unwrap();
        let first = g.select_rows(z, &[0]).unwrap();
        let loss = g.sum(first);
        let mut grads = g.backward(loss).unwrap();
        b.gradients(&mut grads)
    };
    assert!(grads.iter().all(|(p, _)| is_adapter(p) || is_output_projection(p)));
    for (p, gr) in &grads {
        store.accumulate_grad(p, gr).unwrap();
    }
    let mut opt = OptimizerState::new(Default::default());
    optimizer_step(&mut store, &mut opt).unwrap();
    assert!(store.get("mol.block0.attn.q.weight").unwrap().bitwise_eq(&base_before));
    assert!(!store.get("mol.block1.attn.v.lora_up").unwrap().bitwise_eq(&up_before));
}

#[test]
fn adapter_gradient_matches_finite_differences() {
    let (enc, mut store) = build(small(MolMode::Lora));
    perturb_adapters(&mut store);
    let toks: Vec<Vec<usize>> = ["CCO", "ClCBr"].iter().map(|s| enc.tokenize(s).unwrap()).collect();
    let refs: Vec<&[usize]> = toks.iter().map(Vec::as_slice).collect();
    for path in [
        "mol.block0.attn.q.lora_down",
        "mol.block1.attn.k.lora_up",
        "mol.tok_emb",
    ] {
        let x = store.get(path).unwrap().clone();
        let err = finite_difference_check(
            |g, xv| {
                let mut b = Binder::inference(&store);
                b.bind(path, xv);
                let z = enc.forward(g, &mut b, &refs)?;
                let a = g.select_rows(z, &[0])?;
                let c = g.select_rows(z, &[1])?;
                let prod = g.mul(a, c)?;
                Ok(g.sum(prod))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{path}: {err}");
    }
}
