use super::*;
use crate::corpus::{Peak, SpectrumRecord};
use crate::numerics::{finite_difference_check, Binder, Graph, ParameterStore};
use crate::rng::{substream, INIT};

fn small() -> SpectralConfig {
    SpectralConfig {
        d_model: 16,
        d_embed: 8,
        fourier_d: 4,
        max_peaks: 8,
        layers: 2,
        heads: 4,
        ffn_hidden: 32,
        intensity_hidden: 4,
        ..SpectralConfig::default()
    }
}

fn build(config: SpectralConfig) -> (SpectralEncoder, ParameterStore) {
    let mut store = ParameterStore::new();
    let mut rng = substream(7, INIT);
    let enc = SpectralEncoder::init(config, 7, &mut store, &mut rng).unwrap();
    (enc, store)
}

fn record(peaks: &[(f64, f64)]) -> SpectrumRecord {
    SpectrumRecord {
        record_id: "r".into(),
        peaks: peaks.iter().map(|&(m, i)| Peak::new(m, i).unwrap()).collect(),
        smiles: "CCO".into(),
        inchikey: "LFQSCWFLJHTTHZ-UHFFFAOYSA-N".into(),
        instrument_tag: None,
    }
}

#[test]
fn embeddings_are_unit_norm() {
    let (enc, store) = build(small());
    let s = preprocess(&record(&[(100.0, 5.0), (250.5, 20.0), (40.0, 1.0)]), 8).unwrap();
    let e = enc.encode(&store, &s).unwrap();
    assert_eq!(e.dim(), 8);
    assert!((e.norm() - 1.0).abs() < 1e-12);
}

#[test]
fn peak_order_and_padding_do_not_matter() {
    let (enc, store) = build(small());
    let a = preprocess(&record(&[(100.0, 5.0), (250.5, 20.0), (40.0, 1.0)]), 8).unwrap();
    let b = preprocess(&record(&[(40.0, 1.0), (100.0, 5.0), (250.5, 20.0)]), 32).unwrap();
    let ea = enc.encode(&store, &a).unwrap();
    let eb = enc.encode(&store, &b).unwrap();
    assert!(ea.bitwise_eq(&eb));
}

#[test]
fn batched_matches_single() {
    let (enc, store) = build(small());
    let specs = [
        preprocess(&record(&[(100.0, 5.0), (250.5, 20.0)]), 8).unwrap(),
        preprocess(&record(&[(77.0, 3.0)]), 8).unwrap(),
        preprocess(&record(&[(10.0, 1.0), (20.0, 2.0), (30.0, 3.0), (40.0, 4.0)]), 8).unwrap(),
    ];
    let refs: Vec<_> = specs.iter().collect();
    let batch = enc.encode_batch(&store, &refs).unwrap();
    for (s, e) in specs.iter().zip(&batch) {
        let single = enc.encode(&store, s).unwrap();
        for (x, y) in single.values.iter().zip(&e.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn no_fourier_variant_has_lift_and_no_basis() {
    let (enc, store) = build(SpectralConfig {
        fourier: false,
        ..small()
    });
    assert!(enc.basis.is_none());
    assert!(store.contains("spec.lift.weight"));
    let s = preprocess(&record(&[(100.0, 5.0)]), 8).unwrap();
    assert!((enc.encode(&store, &s).unwrap().norm() - 1.0).abs() < 1e-12);
}

#[test]
fn raw_intensity_variant_skips_mlp() {
    let (enc, store) = build(SpectralConfig {
        intensity_mlp: false,
        ..small()
    });
    assert!(!store.contains("spec.intensity.w1"));
    assert_eq!(store.get("spec.fusion.weight").unwrap().shape(), &[9, 16]);
    let s = preprocess(&record(&[(100.0, 5.0)]), 8).unwrap();
    enc.encode(&store, &s).unwrap();
}

#[test]
fn fusion_gradient_matches_finite_differences() {
    let (enc, store) = build(small());
    let s = preprocess(&record(&[(100.0, 5.0), (250.5, 20.0), (40.0, 1.0)]), 8).unwrap();
    let other = preprocess(&record(&[(60.0, 2.0), (90.0, 9.0)]), 8).unwrap();
    let w = store.get("spec.fusion.weight").unwrap().clone();
    let err = finite_difference_check(
        |g, wv| {
            let mut b = Binder::inference(&store);
            b.bind("spec.fusion.weight", wv);
            let z = enc.forward(g, &mut b, &[&s, &other])?;
            let t = g.select_rows(z, &[0])?;
            let u = g.select_rows(z, &[1])?;
            let prod = g.mul(t, u)?;
            Ok(g.sum(prod))
        },
        &w,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn all_masked_spectrum_is_rejected() {
    let (enc, store) = build(small());
    let mut s = preprocess(&record(&[(100.0, 5.0)]), 8).unwrap();
    s.mask.iter_mut().for_each(|m| *m = false);
    let mut g = Graph::new();
    let mut b = Binder::inference(&store);
    assert!(enc.forward(&mut g, &mut b, &[&s]).is_err());
}
