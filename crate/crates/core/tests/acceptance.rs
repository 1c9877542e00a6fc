//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if
//! any criterion fails.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use msalign::alignment::{info_nce_loss, train, train_with, TrainConfig};
use msalign::checks::{default_seeds, registry, TOLERANCE};
use msalign::corpus::{
    generate_synthetic_corpus, scaffold_disjoint_split, scaffold_key, Peak, Side, SpectrumRecord, SynthParams,
};
use msalign::evaluation::{binomial_interval, fewshot, fixed_pool_retrieval, EmbeddingIndex};
use msalign::molecular::{is_adapter, is_output_projection};
use msalign::numerics::{run_checks, Binder, Graph, Tensor};
use msalign::spectral::{fourier_project, normalize_intensity, preprocess, transform_mass, FourierBasis};
use msalign::{Checkpoint, Embedding, Model, RunConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn e<T: std::fmt::Display>(x: T) -> String {
    x.to_string()
}

fn random_record(rng: &mut ChaCha8Rng, id: usize) -> SpectrumRecord {
    let n = rng.random_range(1..=100);
    SpectrumRecord {
        record_id: format!("r{id}"),
        peaks: (0..n)
            .map(|_| Peak::new(rng.random_range(0.0..1000.0), rng.random_range(1e-3..1e4)).unwrap())
            .collect(),
        smiles: "CCO".into(),
        inchikey: "LFQSCWFLJHTTHZ-UHFFFAOYSA-N".into(),
        instrument_tag: None,
    }
}

fn gradient_oracle() -> Verdict {
    let t0 = Instant::now();
    let seeds = default_seeds();
    let outcomes = run_checks(&registry(&seeds), TOLERANCE);
    let secs = t0.elapsed().as_secs_f64();
    let worst = outcomes
        .iter()
        .filter_map(|o| o.max_rel_error.as_ref().ok())
        .fold(0.0f64, |a, &b| a.max(b));
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    let detail = format!(
        "{} checks x {} seeds, max rel error {worst:.2e}, {secs:.1}s, failed: {failed:?}",
        outcomes.len(),
        seeds.len()
    );
    check(failed.is_empty() && seeds.len() >= 10 && secs <= 120.0, detail)
}

fn preprocessing_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::init(&Default::default(), 0).map_err(e)?;
    let max_peaks = model.spectral.config.max_peaks;
    let n = 1000;
    let records: Vec<SpectrumRecord> = (0..n).map(|i| random_record(&mut rng, i)).collect();
    let mut violations = 0usize;
    for r in &records {
        let mut masses: Vec<f64> = r.peaks.iter().map(|p| p.mz).collect();
        masses.sort_by(f64::total_cmp);
        for w in masses.windows(2) {
            if w[0] < w[1] && transform_mass(w[0]).map_err(e)? >= transform_mass(w[1]).map_err(e)? {
                violations += 1;
            }
        }
        let ints: Vec<f64> = r.peaks.iter().map(|p| p.intensity).collect();
        let base = normalize_intensity(&ints).map_err(e)?;
        let c = rng.random_range(1e-3..1e3);
        let scaled = normalize_intensity(&ints.iter().map(|v| v * c).collect::<Vec<_>>()).map_err(e)?;
        if base.iter().zip(&scaled).any(|(a, b)| (a - b).abs() > 1e-12) {
            violations += 1;
        }
        if base.iter().any(|v| !(0.0..=1.0).contains(v)) || !base.contains(&1.0) {
            violations += 1;
        }
        let p = preprocess(r, max_peaks).map_err(e)?;
        let xs: Vec<f64> = p.real_positions().map(|(x, _)| x).collect();
        if xs.windows(2).any(|w| w[0] > w[1]) || xs.len() != r.peaks.len().min(max_peaks) {
            violations += 1;
        }
    }
    let shuffled: Vec<SpectrumRecord> = records
        .iter()
        .map(|r| {
            let mut s = r.clone();
            s.peaks.shuffle(&mut rng);
            s
        })
        .collect();
    let a = model.encode_spectra(&records.iter().collect::<Vec<_>>()).map_err(e)?;
    let b = model.encode_spectra(&shuffled.iter().collect::<Vec<_>>()).map_err(e)?;
    violations += a.iter().zip(&b).filter(|(x, y)| !x.bitwise_eq(y)).count();
    check(violations == 0, format!("{n} random spectra, {violations} violations"))
}

fn fourier_norm() -> Verdict {
    let d = 64;
    let basis = FourierBasis::new(d, 30.0, 3).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let x = rng.random_range(0.0..10.0);
        let g = fourier_project(x, &basis);
        let sq: f64 = g.iter().map(|v| v * v).sum();
        worst = worst.max((sq - d as f64).abs());
    }
    check(
        worst <= 1e-9,
        format!("10000 draws, sigma 30, D {d}, max |norm^2 - D| {worst:.2e}"),
    )
}

fn infonce_calibration() -> Verdict {
    let tau = 0.07;
    let mut worst = 0.0f64;
    for n in [2usize, 8, 64] {
        let mut same = vec![0.0; n * n];
        for r in 0..n {
            same[r * n] = 1.0;
        }
        let same = Tensor::matrix(n, n, same).map_err(e)?;
        let flat = info_nce_loss(&same, &same, tau).map_err(e)?;
        worst = worst.max((flat - (n as f64).ln()).abs());
        let eye = Tensor::identity(n);
        let aligned = info_nce_loss(&eye, &eye, tau).map_err(e)?;
        let closed = (1.0 + (n as f64 - 1.0) * (-1.0 / tau).exp()).ln();
        worst = worst.max((aligned - closed).abs());
    }
    check(worst <= 1e-9, format!("N in {{2, 8, 64}}, max deviation {worst:.2e}"))
}

fn lora_identity() -> Verdict {
    let records = generate_synthetic_corpus(
        &SynthParams {
            n_scaffolds: 100,
            spectra_per_scaffold: 2,
            ..Default::default()
        },
        5,
    )
    .map_err(e)?;
    let mut seen = std::collections::BTreeMap::new();
    for r in &records {
        seen.entry(r.inchikey.clone()).or_insert(r);
    }
    let molecules: Vec<&SpectrumRecord> = seen.into_values().collect();
    let model = Model::init(&Default::default(), 5).map_err(e)?;
    let mut mismatches = 0;
    for r in &molecules {
        let with = model.molecular.encode(&model.store, &r.smiles).map_err(e)?;
        let toks = model.tokenize(&r.smiles).map_err(e)?;
        let mut g = Graph::new();
        let mut b = Binder::inference(&model.store);
        let z = model
            .molecular
            .forward_with(&mut g, &mut b, &[&toks], false)
            .map_err(e)?;
        let base = Embedding::normalized(g.value(z).row(0).to_vec());
        if !with.bitwise_eq(&base) {
            mismatches += 1;
        }
    }

    let batch: Vec<&SpectrumRecord> = molecules.iter().take(16).copied().collect();
    let mut trained = model.clone();
    let config = TrainConfig {
        epochs: 1,
        batch_size: batch.len(),
        ..Default::default()
    };
    train(&mut trained, &batch, &config).map_err(e)?;
    let mut base_changed = 0;
    let mut adapters_changed = 0;
    for (path, before) in model.store.iter().filter(|(p, _)| p.starts_with("mol.")) {
        let after = trained.store.get(path).map_err(e)?;
        let same = before
            .data()
            .iter()
            .zip(after.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if is_adapter(path) {
            adapters_changed += usize::from(!same);
        } else if !is_output_projection(path) {
            base_changed += usize::from(!same);
        }
    }
    check(
        molecules.len() >= 100 && mismatches == 0 && base_changed == 0 && adapters_changed > 0,
        format!(
            "{} SMILES, {mismatches} mismatches; after one step {base_changed} base tensors changed, {adapters_changed} adapter tensors changed",
            molecules.len()
        ),
    )
}

fn random_key(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| char::from(b'A' + rng.random_range(0..26u8))).collect()
}

fn scaffold_disjointness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut overlaps = 0;
    let mut split_groups = 0;
    for trial in 0..100u64 {
        let n_scaffolds = rng.random_range(2..30);
        let firsts: Vec<String> = (0..n_scaffolds).map(|_| random_key(&mut rng, 14)).collect();
        let n = rng.random_range(n_scaffolds..200);
        let records: Vec<SpectrumRecord> = (0..n)
            .map(|i| {
                let first = if i < n_scaffolds {
                    &firsts[i]
                } else {
                    &firsts[rng.random_range(0..n_scaffolds)]
                };
                let mut r = random_record(&mut rng, i);
                r.inchikey = format!("{first}-{}-N", random_key(&mut rng, 10));
                r
            })
            .collect();
        let fraction = rng.random_range(0.05..0.95);
        let split = scaffold_disjoint_split(&records, fraction, trial).map_err(e)?;
        overlaps += split.scaffold_overlap();
        let mut side_of: HashMap<String, Side> = HashMap::new();
        for r in &records {
            let side = split.side(&r.record_id).ok_or("record missing from split")?;
            let key = scaffold_key(&r.inchikey).map_err(e)?.as_str().to_string();
            if *side_of.entry(key).or_insert(side) != side {
                split_groups += 1;
            }
        }
    }
    check(
        overlaps == 0 && split_groups == 0,
        format!("100 corpora, scaffold overlap {overlaps}, first-block groups split across sides {split_groups}"),
    )
}

fn chance_calibration() -> Verdict {
    let records = generate_synthetic_corpus(
        &SynthParams {
            n_scaffolds: 1200,
            spectra_per_scaffold: 2,
            ..Default::default()
        },
        7,
    )
    .map_err(e)?;
    let split = scaffold_disjoint_split(&records, 0.5, 7).map_err(e)?;
    let test = split.select(&records, Side::Test);
    let model = Model::init(&Default::default(), 7).map_err(e)?;
    let index = EmbeddingIndex::build(&model, &test).map_err(e)?;
    let report = fixed_pool_retrieval(&index, &test, 256, false, 7, "untrained").map_err(e)?;
    let n = report.count as u64;
    let hits = report.values.iter().filter(|v| **v == 1.0).count() as u64;
    let (lo, hi) = binomial_interval(n, 1.0 / 256.0, 0.99);
    check(
        n >= 1024 && (lo..=hi).contains(&hits),
        format!(
            "{n} tasks, {hits} hits ({:.2}%), 99% interval [{lo}, {hi}]",
            100.0 * hits as f64 / n as f64
        ),
    )
}

/// Shared between criteria 8 and 9: the trained synthetic checkpoint.
struct Synthetic {
    config: RunConfig,
    records: Vec<SpectrumRecord>,
    checkpoint: Vec<u8>,
    test_ids: Vec<String>,
}

const SYNTH_EPOCHS: usize = 20;

fn synthetic_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.apply_text(&format!(
        "spectral.d_model = 128\nspectral.fourier_d = 64\ntrain.epochs = {SYNTH_EPOCHS}\nsplit.test_fraction = 0.25\neval.pool_size = 16\n"
    ))
    .unwrap();
    c
}

fn synthetic_learning(slot: &mut Option<Synthetic>) -> Verdict {
    let t0 = Instant::now();
    let config = synthetic_config();
    let records = generate_synthetic_corpus(&config.synth, config.seed).map_err(e)?;
    let split = scaffold_disjoint_split(&records, config.test_fraction, config.seed).map_err(e)?;
    let train_recs = split.select(&records, Side::Train);
    let test = split.select(&records, Side::Test);
    let mut model = Model::init(&config.model_config(), config.seed).map_err(e)?;
    let history = train_with(&mut model, &train_recs, &config.train_config(), |_, _| Ok(())).map_err(e)?;
    let index = EmbeddingIndex::build(&model, &test).map_err(e)?;
    let report = fixed_pool_retrieval(&index, &test, 16, false, config.seed, &config.fingerprint()).map_err(e)?;
    let secs = t0.elapsed().as_secs_f64();
    let hit1 = report.hit_at_k[&1];
    let losses = history.iter().map(|h| h.mean_loss).collect();
    *slot = Some(Synthetic {
        checkpoint: Checkpoint::new(&config, model, losses).to_bytes().map_err(e)?,
        test_ids: test.iter().map(|r| r.record_id.clone()).collect(),
        config,
        records: records.clone(),
    });
    check(
        hit1 >= 0.40 && secs <= 600.0,
        format!(
            "{} test spectra, 16-way Hit@1 {:.1}% after {SYNTH_EPOCHS} epochs (chance 6.25%), {secs:.0}s",
            report.count,
            100.0 * hit1
        ),
    )
}

fn fewshot_direction(slot: &Option<Synthetic>) -> Verdict {
    let s = slot
        .as_ref()
        .ok_or("no synthetic checkpoint (criterion 8 did not run)")?;
    let ckpt = Checkpoint::from_bytes(&s.checkpoint).map_err(e)?;
    let test: Vec<&SpectrumRecord> = s.records.iter().filter(|r| s.test_ids.contains(&r.record_id)).collect();
    let embeddings: HashMap<String, Embedding> = test
        .iter()
        .map(|r| r.record_id.clone())
        .zip(ckpt.model.encode_spectra(&test).map_err(e)?)
        .collect();
    let fp = s.config.fingerprint();
    let queries = 3;
    let one = fewshot(&embeddings, &test, 5, 1, queries, 600, s.config.seed, &fp).map_err(e)?;
    let five = fewshot(&embeddings, &test, 5, 5, queries, 600, s.config.seed, &fp).map_err(e)?;
    check(
        five.mean >= one.mean && one.mean >= 0.40 && five.mean >= 0.40 && one.count == 600 && five.count == 600,
        format!(
            "5-way, {queries} queries, 600 episodes: 1-shot {:.1}%, 5-shot {:.1}% (chance 20%)",
            100.0 * one.mean,
            100.0 * five.mean
        ),
    )
}

const ABLATION_EPOCHS: usize = 15;

fn ablation_direction() -> Verdict {
    use msalign::evaluation::{run_ablations, variant_means, Variant};
    let mut config = synthetic_config();
    config.set("train.epochs", &ABLATION_EPOCHS.to_string()).map_err(e)?;
    config.apply_text("eval.episodes = 50\neval.queries = 3\n").map_err(e)?;
    let records = generate_synthetic_corpus(&config.synth, config.seed).map_err(e)?;
    let split = scaffold_disjoint_split(&records, config.test_fraction, config.seed).map_err(e)?;
    let seeds = [0, 1, 2];
    let runs = run_ablations(&records, &split, &config, &seeds, &[Variant::Full, Variant::NoFourier]);
    if let Some(r) = runs.iter().find(|r| r.outcome.is_err()) {
        return Err(format!("{} seed {} failed: {:?}", r.variant.name(), r.seed, r.outcome));
    }
    let means = variant_means(&runs);
    let (full, _, nf) = means[&Variant::Full];
    let (no_fourier, _, nn) = means[&Variant::NoFourier];
    check(
        full >= no_fourier && nf == 3 && nn == 3,
        format!(
            "3 seeds, {ABLATION_EPOCHS} epochs: mean Hit@1 full {:.1}%, no_fourier {:.1}%",
            100.0 * full,
            100.0 * no_fourier
        ),
    )
}

fn determinism() -> Verdict {
    let config = RunConfig::from_text(
        "spectral.d_model = 16\nspectral.d_embed = 8\nspectral.fourier_d = 8\nspectral.layers = 1\n\
         spectral.heads = 2\nspectral.ffn_hidden = 16\nmol.d_model = 16\nmol.layers = 1\nmol.heads = 2\n\
         mol.ffn_hidden = 16\ntrain.epochs = 3\ntrain.batch_size = 16\nsynth.n_scaffolds = 24\n\
         synth.spectra_per_scaffold = 6\nsplit.test_fraction = 0.5\neval.pool_size = 8\neval.episodes = 30\n\
         eval.way = 3\neval.shot = 2\neval.queries = 2\n",
    )
    .map_err(e)?;
    let run = || -> msalign::Result<(Vec<u8>, String)> {
        let records = generate_synthetic_corpus(&config.synth, config.seed)?;
        let split = scaffold_disjoint_split(&records, config.test_fraction, config.seed)?;
        let mut model = Model::init(&config.model_config(), config.seed)?;
        let history = train(&mut model, &split.select(&records, Side::Train), &config.train_config())?;
        let test = split.select(&records, Side::Test);
        let index = EmbeddingIndex::build(&model, &test)?;
        let fp = config.fingerprint();
        let ev = &config.eval;
        let r = fixed_pool_retrieval(&index, &test, ev.pool_size, false, config.seed, &fp)?;
        let f = fewshot(
            &index.spectra,
            &test,
            ev.way,
            ev.shot,
            ev.queries,
            ev.episodes,
            config.seed,
            &fp,
        )?;
        let reports = [r.units_text(), r.summary_text(), f.units_text(), f.summary_text()].concat();
        let losses = history.iter().map(|h| h.mean_loss).collect();
        Ok((Checkpoint::new(&config, model, losses).to_bytes()?, reports))
    };
    let (ckpt_a, rep_a) = run().map_err(e)?;
    let (ckpt_b, rep_b) = run().map_err(e)?;

    let dir = tempfile::tempdir().map_err(e)?;
    let path = dir.path().join("model.ckpt");
    let original = Checkpoint::from_bytes(&ckpt_a).map_err(e)?;
    original.save(&path).map_err(e)?;
    let loaded = Checkpoint::load(&path).map_err(e)?;
    let records = generate_synthetic_corpus(&config.synth, config.seed).map_err(e)?;
    let refs: Vec<&SpectrumRecord> = records.iter().collect();
    let smiles: Vec<&str> = records.iter().map(|r| r.smiles.as_str()).collect();
    let same = |a: Vec<Embedding>, b: Vec<Embedding>| a.iter().zip(&b).all(|(x, y)| x.bitwise_eq(y));
    let spectra_equal = same(
        original.model.encode_spectra(&refs).map_err(e)?,
        loaded.model.encode_spectra(&refs).map_err(e)?,
    );
    let molecules_equal = same(
        original.model.encode_molecules(&smiles).map_err(e)?,
        loaded.model.encode_molecules(&smiles).map_err(e)?,
    );
    check(
        ckpt_a == ckpt_b && rep_a == rep_b && spectra_equal && molecules_equal,
        format!(
            "checkpoints identical {}, reports identical {}, reloaded spectrum embeddings bitwise {}, molecule embeddings bitwise {}",
            ckpt_a == ckpt_b,
            rep_a == rep_b,
            spectra_equal,
            molecules_equal
        ),
    )
}

type Criterion<'a> = Box<dyn FnOnce() -> Verdict + 'a>;

fn main() {
    let mut synthetic = None;
    let criteria: Vec<(&str, Criterion)> = vec![
        ("gradient oracle", Box::new(gradient_oracle)),
        ("preprocessing invariants", Box::new(preprocessing_invariants)),
        ("Fourier norm", Box::new(fourier_norm)),
        ("InfoNCE calibration", Box::new(infonce_calibration)),
        ("LoRA identity", Box::new(lora_identity)),
        ("scaffold disjointness", Box::new(scaffold_disjointness)),
        ("chance calibration", Box::new(chance_calibration)),
        (
            "synthetic end-to-end learning",
            Box::new(|| synthetic_learning(&mut synthetic)),
        ),
    ];
    let mut failures = 0;
    let mut report = |i: usize, name: &str, verdict: std::thread::Result<Verdict>| {
        let (status, detail) = match verdict {
            Ok(Ok(d)) => ("PASS", d),
            Ok(Err(d)) => ("FAIL", d),
            Err(_) => ("FAIL", "panicked".to_string()),
        };
        if status == "FAIL" {
            failures += 1;
        }
        println!("criterion {i:>2} {status} {name}: {detail}");
    };
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        report(i + 1, name, catch_unwind(AssertUnwindSafe(f)));
    }
    report(
        9,
        "few-shot direction",
        catch_unwind(AssertUnwindSafe(|| fewshot_direction(&synthetic))),
    );
    report(
        10,
        "ablation direction",
        catch_unwind(AssertUnwindSafe(ablation_direction)),
    );
    report(
        11,
        "determinism and persistence",
        catch_unwind(AssertUnwindSafe(determinism)),
    );
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
