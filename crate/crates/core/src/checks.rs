//! Registered finite-difference checks for every differentiable operation
//! and for both encoders trained through the alignment loss.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::alignment::{info_nce, mse_alignment};
use crate::corpus::{Peak, SpectrumRecord};
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::molecular::{MolMode, MolecularConfig};
use crate::numerics::{finite_difference_check, Binder, CustomOp, GradCheck, Graph, Segment, Tensor, Var};
use crate::rng::{substream, StreamRng};
use crate::spectral::{preprocess, SpectralConfig};
use crate::transformer::{lora_linear, multi_head_attention};

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Maximum accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

fn rng(seed: u64, name: &str) -> StreamRng {
    substream(seed, &format!("gradcheck/{name}"))
}

fn normal(rng: &mut StreamRng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}

/// Reduces any output to a scalar through a fixed random weighting, so
/// every output coordinate contributes a distinct gradient.
fn project(g: &mut Graph<'_>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let (r, c) = if shape.len() == 2 {
        (shape[0], shape[1])
    } else {
        (1, shape[0])
    };
    let w = normal(&mut rng(seed, "projection"), r, c);
    let w = if shape.len() == 2 {
        w
    } else {
        Tensor::new(shape, w.into_data())?
    };
    let wv = g.constant(w);
    let p = g.mul(y, wv)?;
    Ok(g.sum(p))
}

/// Worst error over `seeds` for one input of a one-input-varied function.
fn over_seeds<F>(seeds: &[u64], f: F) -> Result<f64>
where
    F: Fn(u64) -> Result<f64>,
{
    let mut worst = 0.0f64;
    for &s in seeds {
        worst = worst.max(f(s)?);
    }
    Ok(worst)
}

type Build = fn(&mut Graph<'_>, &[Var]) -> Result<Var>;

/// An operation under test: input shapes and a builder. Each input is
/// checked separately.
struct OpCase {
    name: &'static str,
    inputs: Vec<(usize, usize)>,
    build: Build,
}

fn op_check(case: OpCase, seeds: Vec<u64>) -> Vec<GradCheck> {
    let n = case.inputs.len();
    (0..n)
        .map(|which| {
            let inputs = case.inputs.clone();
            let build = case.build;
            let seeds = seeds.clone();
            let label = if n == 1 {
                case.name.to_string()
            } else {
                format!("{}[input {which}]", case.name)
            };
            GradCheck::new(label, move || {
                over_seeds(&seeds, |seed| {
                    let mut r = rng(seed, "inputs");
                    let values: Vec<Tensor> = inputs.iter().map(|&(a, b)| normal(&mut r, a, b)).collect();
                    finite_difference_check(
                        |g, x| {
                            let vars: Vec<Var> = values
                                .iter()
                                .enumerate()
                                .map(|(i, t)| if i == which { x } else { g.constant(t.clone()) })
                                .collect();
                            let y = build(g, &vars)?;
                            if g.value(y).is_scalar() {
                                Ok(y)
                            } else {
                                project(g, y, seed)
                            }
                        },
                        &values[which],
                        STEP,
                    )
                })
            })
        })
        .collect()
}

fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            inputs: vec![(3, 4), (4, 2)],
            build: |g, v| g.matmul(v[0], v[1]),
        },
        OpCase {
            name: "matmul_nt",
            inputs: vec![(3, 4), (2, 4)],
            build: |g, v| g.matmul_nt(v[0], v[1]),
        },
        OpCase {
            name: "add",
            inputs: vec![(3, 4), (3, 4)],
            build: |g, v| g.add(v[0], v[1]),
        },
        OpCase {
            name: "sub",
            inputs: vec![(3, 4), (3, 4)],
            build: |g, v| g.sub(v[0], v[1]),
        },
        OpCase {
            name: "mul",
            inputs: vec![(3, 4), (3, 4)],
            build: |g, v| g.mul(v[0], v[1]),
        },
        OpCase {
            name: "add_bias",
            inputs: vec![(3, 4), (1, 4)],
            build: |g, v| {
                let bias = reshape_vector(g, v[1])?;
                g.add_bias(v[0], bias)
            },
        },
        OpCase {
            name: "scale",
            inputs: vec![(3, 4)],
            build: |g, v| Ok(g.scale(v[0], -1.7)),
        },
        OpCase {
            name: "gelu",
            inputs: vec![(3, 4)],
            build: |g, v| Ok(g.gelu(v[0])),
        },
        OpCase {
            name: "relu",
            inputs: vec![(3, 4)],
            build: |g, v| Ok(g.relu(v[0])),
        },
        OpCase {
            name: "layer_norm",
            inputs: vec![(3, 5), (1, 5), (1, 5)],
            build: |g, v| {
                let gain = reshape_vector(g, v[1])?;
                let bias = reshape_vector(g, v[2])?;
                g.layer_norm(v[0], gain, bias, 1e-5)
            },
        },
        OpCase {
            name: "softmax_rows",
            inputs: vec![(3, 5)],
            build: |g, v| g.softmax_rows(v[0]),
        },
        OpCase {
            name: "log_softmax_rows",
            inputs: vec![(3, 5)],
            build: |g, v| g.log_softmax_rows(v[0]),
        },
        OpCase {
            name: "attention",
            inputs: vec![(7, 4), (7, 4), (7, 4)],
            build: |g, v| {
                let segs = [
                    Segment {
                        start: 0,
                        mask: vec![true, false, true, true],
                    },
                    Segment::dense(4, 3),
                ];
                g.attention(v[0], v[1], v[2], &segs, 2)
            },
        },
        OpCase {
            name: "concat_cols",
            inputs: vec![(3, 2), (3, 4)],
            build: |g, v| g.concat_cols(&[v[0], v[1]]),
        },
        OpCase {
            name: "concat_rows",
            inputs: vec![(2, 3), (4, 3)],
            build: |g, v| g.concat_rows(&[v[0], v[1]]),
        },
        OpCase {
            name: "slice_rows",
            inputs: vec![(5, 3)],
            build: |g, v| g.slice_rows(v[0], 1, 3),
        },
        OpCase {
            name: "select_rows",
            inputs: vec![(4, 3)],
            build: |g, v| g.select_rows(v[0], &[2, 0, 2, 3]),
        },
        OpCase {
            name: "l2_normalize_rows",
            inputs: vec![(3, 4)],
            build: |g, v| g.l2_normalize_rows(v[0]),
        },
        OpCase {
            name: "sum",
            inputs: vec![(3, 4)],
            build: |g, v| Ok(g.sum(v[0])),
        },
        OpCase {
            name: "mean",
            inputs: vec![(3, 4)],
            build: |g, v| Ok(g.mean(v[0])),
        },
        OpCase {
            name: "diag",
            inputs: vec![(4, 4)],
            build: |g, v| g.diag(v[0]),
        },
        OpCase {
            name: "lora_linear",
            inputs: vec![(3, 6), (6, 6), (6, 2), (2, 6)],
            build: |g, v| lora_linear(g, v[0], v[1], Some((v[2], v[3], 0.5))),
        },
        OpCase {
            name: "multi_head_attention",
            inputs: vec![(5, 4), (4, 4), (4, 4), (4, 4), (4, 4)],
            build: |g, v| {
                let segs = [Segment::dense(0, 2), Segment::dense(2, 3)];
                multi_head_attention(g, v[0], v[1], v[2], v[3], v[4], &segs, 2)
            },
        },
        OpCase {
            name: "info_nce",
            inputs: vec![(3, 4), (3, 4)],
            build: |g, v| {
                let a = g.l2_normalize_rows(v[0])?;
                let b = g.l2_normalize_rows(v[1])?;
                info_nce(g, a, b, 0.07)
            },
        },
        OpCase {
            name: "mse_alignment",
            inputs: vec![(3, 4), (3, 4)],
            build: |g, v| mse_alignment(g, v[0], v[1]),
        },
    ]
}

/// `[1×d]` to `[d]`, differentiably: diag(ones[d×1] · row).
fn reshape_vector(g: &mut Graph<'_>, row: Var) -> Result<Var> {
    let d = g.value(row).cols();
    let ones = g.constant(Tensor::filled(&[d, 1], 1.0));
    let square = g.matmul(ones, row)?;
    g.diag(square)
}

fn small_model_config(mode: MolMode, fourier: bool) -> ModelConfig {
    ModelConfig {
        spectral: SpectralConfig {
            d_model: 8,
            d_embed: 4,
            fourier_d: 4,
            max_peaks: 6,
            layers: 2,
            heads: 2,
            ffn_hidden: 8,
            intensity_hidden: 3,
            fourier,
            ..SpectralConfig::default()
        },
        molecular: MolecularConfig {
            d_model: 8,
            d_embed: 4,
            layers: 2,
            heads: 2,
            ffn_hidden: 8,
            max_len: 12,
            lora_rank: 2,
            lora_alpha: 2.0,
            mode,
            ..MolecularConfig::default()
        },
    }
}

const SMILES: [&str; 3] = ["CCO", "ClC(=O)N", "c1ccccc1Br"];

fn random_records(seed: u64) -> Vec<SpectrumRecord> {
    let mut r = rng(seed, "records");
    SMILES
        .iter()
        .enumerate()
        .map(|(i, s)| SpectrumRecord {
            record_id: format!("gc{i}"),
            peaks: (0..2 + i)
                .map(|_| Peak::new(r.random_range(30.0..500.0), r.random_range(1.0..100.0)).expect("valid peak"))
                .collect(),
            smiles: s.to_string(),
            inchikey: "AAAAAAAAAAAAAA-BBBBBBBBBB-N".into(),
            instrument_tag: None,
        })
        .collect()
}

fn model_for(seed: u64, mode: MolMode, fourier: bool) -> Result<Model> {
    let mut model = Model::init(&small_model_config(mode, fourier), seed)?;
    // Adapters start at zero; move them so every path carries signal.
    let mut r = rng(seed, "adapters");
    for (path, t) in model.store.iter_mut() {
        if path.ends_with(".lora_up") {
            for v in t.data_mut() {
                *v = 0.3 * r.sample::<f64, _>(StandardNormal);
            }
        }
    }
    Ok(model)
}

/// InfoNCE over a 3-pair batch, differentiated with respect to `path`.
fn encoder_path_error(seed: u64, path: &str, mode: MolMode, fourier: bool) -> Result<f64> {
    let model = model_for(seed, mode, fourier)?;
    let recs = random_records(seed);
    let specs = recs
        .iter()
        .map(|r| preprocess(r, model.spectral.config.max_peaks))
        .collect::<Result<Vec<_>>>()?;
    let spec_refs: Vec<_> = specs.iter().collect();
    let toks = recs
        .iter()
        .map(|r| model.molecular.tokenize(&r.smiles))
        .collect::<Result<Vec<_>>>()?;
    let tok_refs: Vec<&[usize]> = toks.iter().map(Vec::as_slice).collect();
    let x = model.store.get(path)?.clone();
    finite_difference_check(
        |g, xv| {
            let mut b = Binder::inference(&model.store);
            b.bind(path, xv);
            let zs = model.spectral.forward(g, &mut b, &spec_refs)?;
            let zm = model.molecular.forward(g, &mut b, &tok_refs)?;
            info_nce(g, zs, zm, 0.07)
        },
        &x,
        STEP,
    )
}

const SPECTRAL_PATHS: [&str; 10] = [
    "spec.intensity.w1",
    "spec.intensity.b2",
    "spec.fusion.weight",
    "spec.cls",
    "spec.block0.attn.q.weight",
    "spec.block0.attn.k.weight",
    "spec.block1.attn.v.weight",
    "spec.block1.ffn.w1",
    "spec.final_ln.gain",
    "spec.out.weight",
];

const MOLECULAR_PATHS: [&str; 8] = [
    "mol.tok_emb",
    "mol.pos_emb",
    "mol.block0.attn.q.lora_down",
    "mol.block0.attn.k.lora_up",
    "mol.block1.attn.v.lora_down",
    "mol.block1.ln2.bias",
    "mol.block1.ffn.w2",
    "mol.out.weight",
];

/// Every registered check, each evaluated at all `seeds`.
pub fn registry(seeds: &[u64]) -> Vec<GradCheck> {
    let seeds = seeds.to_vec();
    let mut checks = Vec::new();
    for case in op_cases() {
        checks.extend(op_check(case, seeds.clone()));
    }
    for path in SPECTRAL_PATHS {
        let s = seeds.clone();
        checks.push(GradCheck::new(
            format!("spectral_encoder->info_nce[{path}]"),
            move || over_seeds(&s, |seed| encoder_path_error(seed, path, MolMode::Lora, true)),
        ));
    }
    let s = seeds.clone();
    checks.push(GradCheck::new(
        "spectral_encoder(no_fourier)->info_nce[spec.lift.weight]",
        move || {
            over_seeds(&s, |seed| {
                encoder_path_error(seed, "spec.lift.weight", MolMode::Lora, false)
            })
        },
    ));
    for path in MOLECULAR_PATHS {
        let s = seeds.clone();
        checks.push(GradCheck::new(
            format!("molecular_encoder->info_nce[{path}]"),
            move || over_seeds(&s, |seed| encoder_path_error(seed, path, MolMode::Lora, true)),
        ));
    }
    checks
}

/// Default seeds: ten consecutive values.
pub fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

/// A deliberately wrong derivative for `x²`.
pub struct BrokenSquare;

impl CustomOp for BrokenSquare {
    fn name(&self) -> &str {
        "broken_square"
    }
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Tensor::new(
            inputs[0].shape().to_vec(),
            inputs[0].data().iter().map(|v| v * v).collect(),
        )
    }
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, gy: &[f64]) -> Vec<Vec<f64>> {
        vec![inputs[0]
            .data()
            .iter()
            .zip(gy)
            .map(|(x, g)| (2.0 * x + 1.0) * g)
            .collect()]
    }
}

/// A check that must fail: it differentiates [`BrokenSquare`].
pub fn negative_control() -> GradCheck {
    GradCheck::new("broken_square", || {
        let x = Tensor::from_rows(&[vec![0.3, -1.0, 2.0]])?;
        finite_difference_check(
            |g, x| {
                let y = g.custom(&[x], Box::new(BrokenSquare))?;
                Ok(g.sum(y))
            },
            &x,
            STEP,
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::run_checks;

    #[test]
    fn every_check_passes_on_two_seeds() {
        let outcomes = run_checks(&registry(&[0, 1]), TOLERANCE);
        let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed).collect();
        assert!(failed.is_empty(), "{failed:?}");
    }

    #[test]
    fn negative_control_fails() {
        let o = run_checks(&[negative_control()], TOLERANCE);
        assert!(!o[0].passed);
        assert_eq!(o[0].name, "broken_square");
    }
}
