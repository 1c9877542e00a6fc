//! The `msalign` command line: dataset operations, training, evaluation,
//! ablations and gradient self-checks driven by one flat config file.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use msalign::alignment::{train_with, EpochLog};
use msalign::checks::{default_seeds, negative_control, registry, TOLERANCE};
use msalign::corpus::{
    generate_synthetic_corpus, read_records, scaffold_disjoint_split, write_records, DatasetSplit, Side, SpectrumRecord,
};
use msalign::evaluation::{
    ablation_error_bars, ablation_table, fewshot, fixed_pool_retrieval, global_retrieval, run_ablations,
    EmbeddingIndex, MetricsReport, Variant,
};
use msalign::numerics::run_checks;
use msalign::{Checkpoint, Error, Model, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const TRAIN_LOG: &str = "train_log.tsv";
pub const ABLATION_TABLE: &str = "ablation.tsv";
pub const ABLATION_ERROR_BARS: &str = "ablation_error_bars.tsv";

#[derive(Debug, Parser)]
#[command(
    name = "msalign",
    version,
    about = "Contrastive alignment of mass spectra with molecular structures"
)]
pub struct Cli {
    /// Flat `key = value` config file; defaults apply to absent keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; replaces the directory of every written path.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    #[value(name = "retrieval_fixed")]
    RetrievalFixed,
    #[value(name = "retrieval_global")]
    RetrievalGlobal,
    #[value(name = "fewshot")]
    Fewshot,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scaffold-disjoint train/test split of the corpus, with a leakage audit.
    Split,
    /// Synthetic corpus in the record file format.
    Synth,
    /// Trains the dual encoder; writes the checkpoint and a per-epoch log.
    Train,
    /// Evaluates a checkpoint on the test split.
    Eval {
        #[arg(long, value_enum)]
        protocol: Protocol,
        /// Checkpoint to evaluate; defaults to `paths.checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides `eval.shot`.
        #[arg(long)]
        shot: Option<usize>,
    },
    /// Trains and evaluates every ablation variant for each seed.
    Ablate {
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Comma-separated subset of full, no_fourier, mse, frozen_mol.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Runs every registered finite-difference gradient check.
    Gradcheck {
        /// Seeds per check.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Adds a check with a deliberately wrong derivative.
        #[arg(long, hide = true)]
        with_negative_control: bool,
    },
}

/// A failed command: exit code plus message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Messages go to the given streams.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(stdout, "{}", e.render());
            return EXIT_OK;
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

/// Loads the config file (or defaults) and applies the seed override.
pub fn load_config(cli: &Cli) -> std::result::Result<RunConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure {
                code: EXIT_USAGE,
                message: format!("{}: {e}", path.display()),
            })?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    if let Command::Gradcheck {
        seeds,
        with_negative_control,
    } = &cli.command
    {
        return cmd_gradcheck(*seeds, *with_negative_control, stdout);
    }
    let config = load_config(cli)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Split => cmd_split(&config, out, stdout, stderr),
        Command::Synth => cmd_synth(&config, out, stdout),
        Command::Train => cmd_train(&config, out, stdout, stderr),
        Command::Eval {
            protocol,
            checkpoint,
            shot,
        } => cmd_eval(&config, *protocol, checkpoint.as_deref(), *shot, out, stdout, stderr),
        Command::Ablate { seeds, variants } => cmd_ablate(&config, seeds, variants, out, stdout, stderr),
        Command::Gradcheck { .. } => unreachable!(),
    }
}

/// `path` relocated into `out` when given.
fn output_path(path: &Path, out: Option<&Path>) -> PathBuf {
    match (out, path.file_name()) {
        (Some(dir), Some(name)) => dir.join(name),
        _ => path.to_path_buf(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn load_corpus(config: &RunConfig, stderr: &mut dyn Write) -> std::result::Result<Vec<SpectrumRecord>, Failure> {
    let (records, report) = read_records(&config.paths.corpus)?;
    if !report.is_empty() {
        let _ = writeln!(
            stderr,
            "{}: {} records rejected",
            config.paths.corpus.display(),
            report.len()
        );
        let _ = write!(stderr, "{}", report.to_text());
    }
    Ok(records)
}

fn load_split(config: &RunConfig, records: &[SpectrumRecord]) -> std::result::Result<DatasetSplit, Failure> {
    let path = &config.paths.split;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let split = DatasetSplit::from_text(&text)?;
    split.audit(records)?;
    Ok(split)
}

pub fn cmd_split(config: &RunConfig, out: Option<&Path>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    let records = load_corpus(config, stderr)?;
    let split = scaffold_disjoint_split(&records, config.test_fraction, config.seed)?;
    split.audit(&records)?;
    let path = output_path(&config.paths.split, out);
    write_file(&path, split.to_text(&records)?.as_bytes())?;
    let _ = writeln!(
        stdout,
        "{}: {} train / {} test records, scaffold overlap {}",
        path.display(),
        split.select(&records, Side::Train).len(),
        split.select(&records, Side::Test).len(),
        split.scaffold_overlap()
    );
    Ok(())
}

pub fn cmd_synth(config: &RunConfig, out: Option<&Path>, stdout: &mut dyn Write) -> Outcome {
    let records = generate_synthetic_corpus(&config.synth, config.seed)?;
    let path = output_path(&config.paths.corpus, out);
    write_file(&path, write_records(&records).as_bytes())?;
    let _ = writeln!(stdout, "{}: {} records", path.display(), records.len());
    Ok(())
}

fn log_text(history: &[EpochLog]) -> String {
    let mut text = String::from("epoch\tmean_loss\twall_seconds\n");
    for h in history {
        text.push_str(&h.to_line());
        text.push('\n');
    }
    text
}

pub fn cmd_train(config: &RunConfig, out: Option<&Path>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    config.validate()?;
    let records = load_corpus(config, stderr)?;
    let split = load_split(config, &records)?;
    let train_recs = split.select(&records, Side::Train);
    let ckpt_path = output_path(&config.paths.checkpoint, out);
    let log_path = ckpt_path.with_file_name(TRAIN_LOG);
    let train_config = config.train_config();
    let mut model = Model::init(&config.model_config(), config.seed)?;
    let every = train_config.checkpoint_every;
    let history = train_with(&mut model, &train_recs, &train_config, |m, logs| {
        let last = logs.last().expect("called after an epoch");
        let _ = writeln!(stdout, "{}", last.to_line());
        if every > 0 && logs.len() % every == 0 {
            let losses = logs.iter().map(|h| h.mean_loss).collect();
            Checkpoint::new(config, m.clone(), losses).save(&ckpt_path)?;
            write_file(&log_path, log_text(logs).as_bytes()).map_err(|f| Error::InvalidArgument(f.message))?;
        }
        Ok(())
    })?;
    let losses = history.iter().map(|h| h.mean_loss).collect();
    write_file(&log_path, log_text(&history).as_bytes())?;
    Checkpoint::new(config, model, losses).save(&ckpt_path)?;
    let _ = writeln!(stdout, "{}: {} epochs", ckpt_path.display(), history.len());
    Ok(())
}

pub fn cmd_eval(
    config: &RunConfig,
    protocol: Protocol,
    checkpoint: Option<&Path>,
    shot: Option<usize>,
    out: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Outcome {
    let mut config = config.clone();
    if let Some(s) = shot {
        config.set("eval.shot", &s.to_string())?;
    }
    config.validate()?;
    let ckpt = Checkpoint::load(checkpoint.unwrap_or(&config.paths.checkpoint))?;
    ckpt.check_compatible(&config)?;
    let records = load_corpus(&config, stderr)?;
    let split = load_split(&config, &records)?;
    let test = split.select(&records, Side::Test);
    let fp = config.fingerprint();
    let e = &config.eval;
    let report: MetricsReport = match protocol {
        Protocol::RetrievalFixed => {
            let index = EmbeddingIndex::build(&ckpt.model, &test)?;
            fixed_pool_retrieval(&index, &test, e.pool_size, e.shared_pool, config.seed, &fp)?
        }
        Protocol::RetrievalGlobal => {
            let index = EmbeddingIndex::build(&ckpt.model, &test)?;
            global_retrieval(&index, &test, config.seed, &fp)?
        }
        Protocol::Fewshot => {
            let embeddings = ckpt.model.encode_spectra(&test)?;
            let by_id: HashMap<String, _> = test.iter().map(|r| r.record_id.clone()).zip(embeddings).collect();
            fewshot(&by_id, &test, e.way, e.shot, e.queries, e.episodes, config.seed, &fp)?
        }
    };
    let dir = out.map_or_else(|| config.paths.reports.clone(), Path::to_path_buf);
    let written = report.write(&dir)?;
    let _ = write!(stdout, "{}", report.summary_text());
    for p in written {
        let _ = writeln!(stdout, "wrote {}", p.display());
    }
    Ok(())
}

pub fn cmd_ablate(
    config: &RunConfig,
    seeds: &[u64],
    variants: &[String],
    out: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Outcome {
    config.validate()?;
    let variants = if variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        variants
            .iter()
            .map(|v| v.parse::<Variant>())
            .collect::<msalign::Result<Vec<_>>>()
            .map_err(|e| Failure {
                code: EXIT_USAGE,
                message: e.to_string(),
            })?
    };
    let seeds = if seeds.is_empty() {
        vec![config.seed]
    } else {
        seeds.to_vec()
    };
    let records = load_corpus(config, stderr)?;
    let split = load_split(config, &records)?;
    let runs = run_ablations(&records, &split, config, &seeds, &variants);
    let table = ablation_table(&runs);
    let dir = out.map_or_else(|| config.paths.reports.clone(), Path::to_path_buf);
    write_file(&dir.join(ABLATION_TABLE), table.as_bytes())?;
    write_file(&dir.join(ABLATION_ERROR_BARS), ablation_error_bars(&runs).as_bytes())?;
    let _ = write!(stdout, "{table}");
    for r in &runs {
        if let Err(msg) = &r.outcome {
            let _ = writeln!(stderr, "{} seed {} failed: {msg}", r.variant.name(), r.seed);
        }
    }
    if runs.iter().all(|r| r.outcome.is_err()) {
        return Err(Failure {
            code: EXIT_FAILURE,
            message: "every ablation run failed".into(),
        });
    }
    Ok(())
}

pub fn cmd_gradcheck(n_seeds: usize, with_negative_control: bool, stdout: &mut dyn Write) -> Outcome {
    if n_seeds == 0 {
        return Err(Failure {
            code: EXIT_USAGE,
            message: "--seeds must be positive".into(),
        });
    }
    let seeds: Vec<u64> = default_seeds().into_iter().chain(10..).take(n_seeds).collect();
    let mut checks = registry(&seeds);
    if with_negative_control {
        checks.push(negative_control());
    }
    let outcomes = run_checks(&checks, TOLERANCE);
    let _ = writeln!(stdout, "check\tmax_rel_error\tstatus");
    for o in &outcomes {
        let err = match &o.max_rel_error {
            Ok(v) => format!("{v:.3e}"),
            Err(msg) => format!("error: {msg}"),
        };
        let _ = writeln!(stdout, "{}\t{err}\t{}", o.name, if o.passed { "pass" } else { "FAIL" });
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_FAILURE,
            message: format!("gradient check failed: {}", failed.join(", ")),
        })
    }
}
