use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ebm_ssl::data::{gen_hmm, gen_mixture, write_continuous, write_sequences};
use ebm_ssl::diffcore::checkpoint::Checkpoint;
use ebm_ssl::pipelines::{EvalSet, LogRow, Method};
use harness::criteria::{self, CRITERIA};
use harness::grid::{execute, sweep, RunKey};
use harness::report::write_report;
use harness::tasks::TaskName;
use harness::{selftest, ExperimentConfig, HarnessError, Result};

#[derive(Parser)]
#[command(
    name = "ebm-ssl",
    version,
    about = "Semi-supervised learning with energy-based models"
)]
struct Cli {
    /// Experiment config (TOML); defaults apply to omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the global seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a synthetic dataset with its generator descriptor.
    GenData {
        #[arg(long)]
        task: TaskName,
        /// Points per class (mixture) or sequences (hmm).
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
    /// Trains and evaluates one grid run; writes its log, metrics and parameters.
    Train {
        #[arg(long)]
        task: TaskName,
        #[arg(long, default_value = "joint")]
        method: Method,
        #[arg(long, default_value_t = 0.1)]
        proportion: f64,
        #[arg(long, default_value_t = 50.0)]
        ratio: f64,
        /// Joint-training weight; defaults to the config value.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0)]
        replicate: usize,
    },
    /// Runs (or resumes) the whole grid, then writes the report.
    Sweep,
    /// Rebuilds the tables and label curve from existing results.
    Report,
    /// Checks every module invariant.
    Selftest,
    /// Runs the acceptance criteria, or the listed ones.
    Acceptance { ids: Vec<usize> },
    /// Prints the effective config as TOML.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn gen_data(cfg: &ExperimentConfig, out: &Path, task: TaskName, n: usize) -> Result<PathBuf> {
    let path = out.join(format!("{task}.txt"));
    let text = match task {
        TaskName::Mixture => {
            let d = gen_mixture(&cfg.mixture.spec, n, cfg.seed)?;
            write_continuous(&d, &cfg.mixture.spec.descriptor())
        }
        TaskName::Hmm => {
            let (hmm, d) = gen_hmm(&cfg.hmm.spec, n, cfg.seed)?;
            write_sequences(&d, &hmm.descriptor())
        }
    };
    write(&path, &text)?;
    Ok(path)
}

fn train_one(cfg: &ExperimentConfig, out: &Path, key: RunKey) -> Result<()> {
    let (model, test) = execute(cfg, &key, None)?;
    let id = key.id();
    let mut log = format!("{}\n", LogRow::HEADER);
    for row in &model.log {
        log.push_str(&row.csv_line());
        log.push('\n');
    }
    write(&out.join(format!("{id}.log.csv")), &log)?;
    Checkpoint::from_params(&model.params).save(&out.join(format!("{id}.params")))?;
    let m = model.evaluate(&test)?;
    let n = match &test {
        EvalSet::Continuous(d) => d.xs.len(),
        EvalSet::Sequence(d) => d.xs.len(),
    };
    println!("{id}: test accuracy {:.4} on {n} items", m.accuracy);
    if let Some(f) = m.span_f1 {
        println!("{id}: test span F1 {f:.4}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load_config(&cli)?;
    let out = &cli.out;
    match cli.command {
        Command::GenData { task, n } => {
            println!("wrote {}", gen_data(&cfg, out, task, n)?.display());
        }
        Command::Train {
            task,
            method,
            proportion,
            ratio,
            lambda,
            replicate,
        } => {
            cfg.validate()?;
            train_one(
                &cfg,
                out,
                RunKey {
                    task,
                    proportion,
                    ul_ratio: ratio,
                    method,
                    lambda: if method == Method::Joint { lambda } else { None },
                    replicate,
                },
            )?;
        }
        Command::Sweep => {
            let s = sweep(&cfg, out, |key, reused| {
                eprintln!("{} {}", if reused { "reused" } else { "done  " }, key.id());
            })?;
            for (task, p, r, l) in &s.chosen_lambda {
                eprintln!("{task} p={p} r={r}: λ = {l}");
            }
            for (id, e) in &s.failed {
                eprintln!("FAILED {id}: {e}");
            }
            println!(
                "{} runs: {} trained, {} reused, {} failed",
                s.total,
                s.ran,
                s.reused,
                s.failed.len()
            );
            println!("{}", write_report(&cfg, out)?);
        }
        Command::Report => println!("{}", write_report(&cfg, out)?),
        Command::Selftest => {
            let report = selftest::run(|v| {
                println!(
                    "{} {:<10} {} ({:.1} s): {}",
                    if v.passed { "PASS" } else { "FAIL" },
                    v.module,
                    v.statement,
                    v.seconds,
                    v.detail
                );
            });
            for (m, want, got) in &report.coverage_gaps {
                println!("FAIL coverage: {m} lists {want} invariants, {got} registered");
            }
            return Ok(report.passed());
        }
        Command::Acceptance { ids } => {
            let mut all = true;
            for c in CRITERIA.iter().filter(|c| ids.is_empty() || ids.contains(&c.id)) {
                let v = criteria::evaluate(c);
                println!("{}", v.line());
                all &= v.passed;
            }
            return Ok(all);
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
