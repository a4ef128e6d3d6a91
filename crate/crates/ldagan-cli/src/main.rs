//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! error, 2 training divergence, 3 I/O failure.

mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ldagan::data::{
    read_dataset_csv, ring_spec, sample_lda_mixture, sample_mixture, write_dataset_csv,
};
use ldagan::gan::{generate, FakeBatch, NoiseBatch};
use ldagan::inference::DirichletParams;
use ldagan::metrics::{default_min_count, estimate_spec_from_labeled, CoverageReport, DEFAULT_CAPTURE_SIGMAS};
use ldagan::neural::Matrix;
use ldagan::oracle::{bounds_suite, estep_suite, gradients_suite};
use ldagan::special_math::RngStream;
use ldagan::trainer::{load_checkpoint, save_checkpoint, train, TrainConfig, TrainState};
use ldagan::{Error, Result};

const MANIFEST_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "ldagan", version, about = "Dirichlet-mixture GAN: synthesize, train, evaluate, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// 8 Gaussians on a radius-2 ring, equal weights, variance 0.08
    Ring,
    /// ring geometry with per-sample mixture weights from Dir([8,4,...])
    LdaRing,
    /// radius-0.5 ring, variance 0.02
    SmallRing,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    /// variational E-step vs. exact posterior argmax fidelity
    Estep,
    /// finite-difference checks of every analytic gradient
    Gradients,
    /// lower bound vs. exact marginal, monotone sweeps, KL gap sign
    Bounds,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic 2-D dataset as x,y,label CSV
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        /// sample count
        #[arg(long)]
        n: usize,
        /// RNG seed (falls back to LDAGAN_SEED, then 0)
        #[arg(long)]
        seed: Option<u64>,
        /// output CSV path
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset CSV; writes checkpoint, metrics JSONL, manifest
    Train {
        /// JSON config document; `K` is required, all other fields optional
        #[arg(long)]
        config: PathBuf,
        /// training dataset CSV
        #[arg(long)]
        data: PathBuf,
        /// directory for checkpoint.json, metrics.jsonl, manifest.json
        #[arg(long)]
        out_dir: PathBuf,
        /// overrides the config seed (precedence: flag, file, LDAGAN_SEED, 0)
        #[arg(long)]
        seed: Option<u64>,
        /// overrides total_iterations
        #[arg(long)]
        iterations: Option<u64>,
        /// overrides eval_interval
        #[arg(long)]
        eval_interval: Option<u64>,
        /// overrides warmup_iterations
        #[arg(long)]
        warmup: Option<u64>,
        /// overrides the discriminator learning rate
        #[arg(long)]
        lr_d: Option<f64>,
        /// overrides the generator learning rate
        #[arg(long)]
        lr_g: Option<f64>,
        /// overrides the Dirichlet-parameter learning rate
        #[arg(long)]
        lr_alpha: Option<f64>,
    },
    /// Sample a checkpoint and score coverage against a labeled dataset
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// labeled dataset CSV the mixture is estimated from
        #[arg(long)]
        data: PathBuf,
        /// fake samples to draw (stratified across heads)
        #[arg(long, default_value_t = 512)]
        n_samples: usize,
        /// directory for samples.csv, report.json, scatter.svg
        #[arg(long)]
        out_dir: PathBuf,
        /// RNG seed for the evaluation draws (LDAGAN_SEED, then 0)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a verification suite and print its pass/fail table
    Oracle {
        #[arg(value_enum)]
        suite: Suite,
        /// random instances for the estep/bounds suites
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // --help/--version land here with harmless kinds
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Divergence { .. } => 2,
                Error::Io(_) => 3,
                _ => 1,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Synth { kind, n, seed, out } => cmd_synth(kind, n, seed, &out),
        Command::Train {
            config,
            data,
            out_dir,
            seed,
            iterations,
            eval_interval,
            warmup,
            lr_d,
            lr_g,
            lr_alpha,
        } => {
            let o = TrainOverrides { seed, iterations, eval_interval, warmup, lr_d, lr_g, lr_alpha };
            cmd_train(&config, &data, &out_dir, &o)
        }
        Command::Eval { checkpoint, data, n_samples, out_dir, seed } => {
            cmd_eval(&checkpoint, &data, n_samples, &out_dir, seed)
        }
        Command::Oracle { suite, instances, seed } => cmd_oracle(suite, instances, seed),
    }
}

/// LDAGAN_SEED, when set, must parse as a nonnegative integer.
fn env_seed() -> Result<Option<u64>> {
    match std::env::var("LDAGAN_SEED") {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::domain(format!("LDAGAN_SEED must be a nonnegative integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>, file: Option<u64>, env: Option<u64>) -> u64 {
    flag.or(file).or(env).unwrap_or(0)
}

fn cmd_synth(kind: SynthKind, n: usize, seed: Option<u64>, out: &Path) -> Result<i32> {
    if n == 0 {
        return Err(Error::domain("--n must be at least 1"));
    }
    let seed = resolve_seed(seed, None, env_seed()?);
    let mut rng = RngStream::new(seed);
    let dataset = match kind {
        SynthKind::Ring => sample_mixture(&ring_spec(8, 2.0, 0.08), n, &mut rng),
        SynthKind::SmallRing => sample_mixture(&ring_spec(8, 0.5, 0.02), n, &mut rng),
        SynthKind::LdaRing => {
            let alpha = DirichletParams::new(vec![8.0, 4.0, 8.0, 4.0, 8.0, 4.0, 8.0, 4.0])?;
            sample_lda_mixture(&alpha, &ring_spec(8, 2.0, 0.08), n, &mut rng)?
        }
    };
    write_dataset_csv(&dataset, out)?;
    println!("wrote {} samples to {}", n, out.display());
    Ok(0)
}

struct TrainOverrides {
    seed: Option<u64>,
    iterations: Option<u64>,
    eval_interval: Option<u64>,
    warmup: Option<u64>,
    lr_d: Option<f64>,
    lr_g: Option<f64>,
    lr_alpha: Option<f64>,
}

/// Parse the config document with field-path error messages, then let CLI
/// flags override file values.
fn load_config(path: &Path, o: &TrainOverrides) -> Result<TrainConfig> {
    let text = read_text(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::domain(format!("config {}: {e}", path.display())))?;
    let file_has_seed = value.get("seed").is_some();
    let mut de = serde_json::Deserializer::from_str(&text);
    let mut cfg: TrainConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let p = e.path().to_string();
        if p == "." {
            Error::domain(format!("config {}: {}", path.display(), e.inner()))
        } else {
            Error::domain(format!("config {}: {} (at {p})", path.display(), e.inner()))
        }
    })?;

    cfg.seed = resolve_seed(o.seed, file_has_seed.then_some(cfg.seed), env_seed()?);
    if let Some(v) = o.iterations {
        cfg.total_iterations = v;
    }
    if let Some(v) = o.eval_interval {
        cfg.eval_interval = v;
    }
    if let Some(v) = o.warmup {
        cfg.warmup_iterations = v;
    }
    if let Some(v) = o.lr_d {
        cfg.lr_d = v;
    }
    if let Some(v) = o.lr_g {
        cfg.lr_g = v;
    }
    if let Some(v) = o.lr_alpha {
        cfg.lr_alpha = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct RunManifest<'a> {
    artifact_version: u32,
    command: &'a str,
    seed: u64,
    started_unix: u64,
    finished_unix: u64,
    config: &'a TrainConfig,
    data_path: String,
    outputs: Vec<String>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// fs wrappers that name the offending path in the error message.
fn annotate(path: &Path) -> impl FnOnce(std::io::Error) -> std::io::Error + '_ {
    move |e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path).map_err(annotate(path))?)
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    Ok(fs::write(path, body).map_err(annotate(path))?)
}

fn ensure_dir(path: &Path) -> Result<()> {
    Ok(fs::create_dir_all(path).map_err(annotate(path))?)
}

fn cmd_train(config: &Path, data: &Path, out_dir: &Path, o: &TrainOverrides) -> Result<i32> {
    let cfg = load_config(config, o)?;
    let dataset = read_dataset_csv(data)?;
    ensure_dir(out_dir)?;
    let started = unix_now();

    let (state, records) = train(&cfg, &dataset)?;

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut body = String::new();
    for r in &records {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    write_text(&metrics_path, &body)?;

    let checkpoint_path = out_dir.join("checkpoint.json");
    save_checkpoint(&state, &checkpoint_path)?;

    let manifest_path = out_dir.join("manifest.json");
    let manifest = RunManifest {
        artifact_version: MANIFEST_VERSION,
        command: "train",
        seed: cfg.seed,
        started_unix: started,
        finished_unix: unix_now(),
        config: &cfg,
        data_path: data.display().to_string(),
        outputs: vec![
            checkpoint_path.display().to_string(),
            metrics_path.display().to_string(),
        ],
    };
    let mut doc = serde_json::to_string_pretty(&manifest)?;
    doc.push('\n');
    write_text(&manifest_path, &doc)?;

    match records.last() {
        Some(r) => println!(
            "trained {} iterations: modes {}, hq {}, entropy {}",
            state.iteration,
            r.modes_covered.map_or("n/a".into(), |v| v.to_string()),
            r.hq_ratio.map_or("n/a".into(), |v| format!("{v:.4}")),
            r.usage_entropy.map_or("n/a".into(), |v| format!("{v:.3}")),
        ),
        None => println!("trained {} iterations", state.iteration),
    }
    println!("wrote {}", checkpoint_path.display());
    println!("wrote {}", metrics_path.display());
    println!("wrote {}", manifest_path.display());
    Ok(0)
}

/// Exactly `n` fakes, stratified head-major with the per-head counts as
/// even as possible (heads 0..n%K receive one extra when K does not divide n).
fn stratified_exact(state: &TrainState, n: usize, rng: &mut RngStream) -> Result<FakeBatch> {
    let k = state.bank.heads.len();
    let dim = state.bank.heads[0].in_dim();
    let base = n / k;
    let extra = n % k;
    let mut samples = Matrix::zeros(n, 2);
    let mut noise = Matrix::zeros(n, dim);
    let mut mode_ids = Vec::with_capacity(n);
    let mut row = 0;
    for h in 0..k {
        let count = base + usize::from(h < extra);
        if count == 0 {
            continue;
        }
        let z = NoiseBatch::uniform(count, dim, rng)?;
        for r in 0..count {
            let pt = generate(&state.bank, h, z.matrix().row(r))?;
            samples.row_mut(row).copy_from_slice(&pt);
            noise.row_mut(row).copy_from_slice(z.matrix().row(r));
            mode_ids.push(h);
            row += 1;
        }
    }
    Ok(FakeBatch { samples, mode_ids, noise: NoiseBatch::new(noise)? })
}

fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    n_samples: usize,
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<i32> {
    if n_samples == 0 {
        return Err(Error::domain("--n-samples must be at least 1"));
    }
    let state = load_checkpoint(checkpoint)?;
    let dataset = read_dataset_csv(data)?;
    let spec = estimate_spec_from_labeled(&dataset)?;
    let k = state.bank.heads.len();
    if spec.n_modes() != k {
        return Err(Error::domain(format!(
            "checkpoint has {k} generators but the dataset labels {} modes",
            spec.n_modes()
        )));
    }

    let seed = resolve_seed(seed, None, env_seed()?);
    let mut rng = RngStream::new(seed);
    let fakes = stratified_exact(&state, n_samples, &mut rng)?;
    let report =
        CoverageReport::compute(&fakes, &spec, DEFAULT_CAPTURE_SIGMAS, default_min_count(n_samples))?;

    ensure_dir(out_dir)?;
    let csv_path = out_dir.join("samples.csv");
    let mut csv = String::from("x,y,generator_id\n");
    for r in 0..n_samples {
        let row = fakes.samples.row(r);
        csv.push_str(&format!("{},{},{}\n", row[0], row[1], fakes.mode_ids[r]));
    }
    write_text(&csv_path, &csv)?;

    let report_path = out_dir.join("report.json");
    let mut doc = serde_json::to_string_pretty(&report)?;
    doc.push('\n');
    write_text(&report_path, &doc)?;

    // cap plotted real points so huge datasets stay readable and small
    let stride = (dataset.len() / 2000).max(1);
    let reals: Vec<(f64, f64)> = (0..dataset.len())
        .step_by(stride)
        .map(|r| (dataset.samples().at(r, 0), dataset.samples().at(r, 1)))
        .collect();
    let fake_pts: Vec<(f64, f64, usize)> = (0..n_samples)
        .map(|r| (fakes.samples.at(r, 0), fakes.samples.at(r, 1), fakes.mode_ids[r]))
        .collect();
    let svg_path = out_dir.join("scatter.svg");
    let title = format!("{} fakes from {} generators", n_samples, k);
    write_text(&svg_path, &svg::scatter(&reals, &fake_pts, &title))?;

    println!(
        "modes covered {}/{}, hq ratio {:.4}, usage entropy {:.3}",
        report.modes_covered,
        spec.n_modes(),
        report.hq_ratio,
        report.usage_entropy
    );
    println!("wrote {}", csv_path.display());
    println!("wrote {}", report_path.display());
    println!("wrote {}", svg_path.display());
    Ok(0)
}

fn cmd_oracle(suite: Suite, instances: usize, seed: Option<u64>) -> Result<i32> {
    if instances == 0 {
        return Err(Error::domain("--instances must be at least 1"));
    }
    let seed = resolve_seed(seed, None, env_seed()?);
    let report = match suite {
        Suite::Estep => estep_suite(instances, seed)?,
        Suite::Gradients => gradients_suite(seed)?,
        Suite::Bounds => bounds_suite(instances, seed)?,
    };
    print!("{report}");
    Ok(if report.passed() { 0 } else { 1 })
}
