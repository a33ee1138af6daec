use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use n2n_core::config::ExperimentConfig;
use n2n_core::experiment::{
    evaluate, generate_dataset, load_model, plan_for, read_dataset, run_dir, run_sweep, save_evaluation,
    save_training, train_point, write_dataset, Dataset,
};
use n2n_core::oracle::run_claim_suite;
use n2n_core::trainer::Regime;
use n2n_core::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_ORACLE: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

#[derive(Parser)]
#[command(name = "n2n", version, about = "Self-supervised k-space reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration; missing sections take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunSelect {
    /// Overrides the config regime.
    #[arg(long)]
    regime: Option<Regime>,
    /// Overrides masks.r_tilde.
    #[arg(long)]
    r_tilde: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the phantom dataset and its manifest under <out>/dataset.
    GenData(Common),
    /// Run the randomized oracle suites and print the JSON report.
    VerifyClaims {
        #[command(flatten)]
        common: Common,
        /// Scales every k_j by (1 + x) before the Claim 1 check.
        #[arg(long, default_value_t = 0.0)]
        k_perturbation: f64,
    },
    /// Train one regime on the stored dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        select: RunSelect,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        select: RunSelect,
        /// Checkpoint to load (defaults to the run directory's checkpoint.bin).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every (regime, R̃) pair of the sweep section.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Number of sweep points trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Comma-separated R̃ list overriding sweep.r_tilde.
        #[arg(long, value_delimiter = ',')]
        r_tilde: Option<Vec<f64>>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Divergence { .. } | Error::NonFiniteGradient { .. } => EXIT_DIVERGENCE,
            e if e.is_validation() => EXIT_VALIDATION,
            _ => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn validation(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_VALIDATION, message: message.into() }
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| validation(format!("cannot read config {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.display().to_string();
    }
    cfg.validate()?;
    let out = PathBuf::from(&cfg.output.dir);
    Ok((cfg, out))
}

fn apply_select(cfg: &mut ExperimentConfig, select: &RunSelect) -> Result<(), Failure> {
    if let Some(regime) = select.regime {
        cfg.regime = regime;
    }
    if let Some(rt) = select.r_tilde {
        if !(rt.is_finite() && rt >= 1.0) {
            return Err(validation(format!("R̃ must be >= 1, got {rt}")));
        }
        cfg.masks.r_tilde = rt;
    }
    Ok(())
}

fn load_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset, Failure> {
    let dir = out.join("dataset");
    let ds = read_dataset(&dir).map_err(|e| match e {
        Error::Io(io) if io.kind() == ErrorKind::NotFound => {
            validation(format!("no dataset in {}; run gen-data first", dir.display()))
        }
        e => e.into(),
    })?;
    if ds.shape != cfg.shape() {
        return Err(validation(format!(
            "dataset grid {:?} does not match config grid {:?}",
            ds.shape,
            cfg.shape()
        )));
    }
    Ok(ds)
}

fn gen_data(common: &Common) -> Result<(), Failure> {
    let (cfg, out) = load_config(common)?;
    let ds = generate_dataset(&cfg)?;
    let manifest = write_dataset(&out.join("dataset"), &ds, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&manifest).map_err(Error::from)?);
    Ok(())
}

fn verify_claims(common: &Common, k_perturbation: f64) -> Result<(), Failure> {
    let (mut cfg, out) = load_config(common)?;
    if !k_perturbation.is_finite() {
        return Err(validation("--k-perturbation must be finite"));
    }
    cfg.oracle.seed = common.seed.unwrap_or(cfg.oracle.seed);
    cfg.oracle.k_perturbation = k_perturbation;
    let report = run_claim_suite(&cfg.oracle)?;
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    println!("{json}");
    if common.out.is_some() {
        fs::create_dir_all(&out).map_err(Error::from)?;
        fs::write(out.join("claims_report.json"), json + "\n").map_err(Error::from)?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure { code: EXIT_ORACLE, message: "oracle checks exceeded their tolerances".into() })
    }
}

fn train(common: &Common, select: &RunSelect) -> Result<(), Failure> {
    let (mut cfg, out) = load_config(common)?;
    apply_select(&mut cfg, select)?;
    let ds = load_dataset(&cfg, &out)?;
    let (regime, rt) = (cfg.regime, cfg.masks.r_tilde);
    let outcome = train_point(&cfg, regime, rt, &ds)?;
    let dir = run_dir(&out, regime, cfg.masks.r, rt);
    save_training(&dir, &cfg, regime, rt, &outcome)?;
    if let Some(last) = outcome.trace.last() {
        log::info!("final training loss {:.6e}", last.train_loss);
    }
    println!("{}", dir.join("checkpoint.bin").display());
    Ok(())
}

fn eval(common: &Common, select: &RunSelect, checkpoint: Option<&Path>) -> Result<(), Failure> {
    let (mut cfg, out) = load_config(common)?;
    apply_select(&mut cfg, select)?;
    let ds = load_dataset(&cfg, &out)?;
    let (regime, rt) = (cfg.regime, cfg.masks.r_tilde);
    let dir = run_dir(&out, regime, cfg.masks.r, rt);
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| dir.join("checkpoint.bin"));
    let (_, model) = load_model(&ckpt, &cfg, regime).map_err(|e| match e {
        Error::Io(io) if io.kind() == ErrorKind::NotFound => {
            validation(format!("no checkpoint at {}; run train first", ckpt.display()))
        }
        e => e.into(),
    })?;
    let plan = plan_for(&cfg, regime, rt)?;
    let records = evaluate(&cfg, &plan, model.as_ref(), &ds.test)?;
    let summary = save_evaluation(&dir, &cfg, regime, rt, &records, None)?;
    println!("{}", serde_json::to_string_pretty(&summary).map_err(Error::from)?);
    Ok(())
}

fn sweep(common: &Common, jobs: usize, r_tilde: Option<&[f64]>) -> Result<(), Failure> {
    let (mut cfg, out) = load_config(common)?;
    if jobs == 0 {
        return Err(validation("--jobs must be at least 1"));
    }
    if let Some(list) = r_tilde {
        cfg.sweep.r_tilde = list.to_vec();
        cfg.validate()?;
    }
    let ds = if out.join("dataset").join("manifest.json").exists() {
        load_dataset(&cfg, &out)?
    } else {
        log::info!("generating dataset under {}", out.join("dataset").display());
        let ds = generate_dataset(&cfg)?;
        write_dataset(&out.join("dataset"), &ds, &cfg)?;
        ds
    };
    let rows = run_sweep(&cfg, &ds, Some(&out), jobs)?;
    for r in &rows {
        let rt = r.r_tilde.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        println!("{:<16} R={} Rtilde={:<5} nmse={:.6} ssim={:.4}", r.method, r.r, rt, r.mean_nmse, r.mean_ssim);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("N2N_LOG_LEVEL", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(c) => gen_data(c),
        Command::VerifyClaims { common, k_perturbation } => verify_claims(common, *k_perturbation),
        Command::Train { common, select } => train(common, select),
        Command::Eval { common, select, checkpoint } => eval(common, select, checkpoint.as_deref()),
        Command::Sweep { common, jobs, r_tilde } => sweep(common, *jobs, r_tilde.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
