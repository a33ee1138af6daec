//! Dataset generation, training runs, evaluation and R̃ sweeps, with their
//! on-disk layout.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::kspace::{make_phantom, read_cks1, write_cks1, KGrid, Shape};
use crate::masking::{sample_mask, Mask};
use crate::metrics::{aggregate, nmse, ssim_cropped, MetricRecord, MetricSummary};
use crate::trainer::{
    infer_all, read_checkpoint, train_regime, write_checkpoint, CheckpointHeader, EpochRecord, ReconModel,
    Regime, RegimePlan, Sample,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn offset(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1 << 20,
            Split::Test => 2 << 20,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub shape: Shape,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn generate_split(cfg: &ExperimentConfig, split: Split, count: usize) -> Result<Vec<Sample>> {
    let density = cfg.primary_density()?;
    (0..count as u64)
        .map(|i| {
            let id = split.offset() + i;
            let y0 = make_phantom(&cfg.phantom_spec(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ id))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(id + 1);
            Sample::new(y0, sample_mask(&density, &mut rng))
        })
        .collect()
}

/// Phantoms and their fixed Ω masks, determined by the config and seed.
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    Ok(Dataset {
        shape: cfg.shape(),
        train: generate_split(cfg, Split::Train, cfg.data.train)?,
        val: generate_split(cfg, Split::Val, cfg.data.val)?,
        test: generate_split(cfg, Split::Test, cfg.data.test)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub file: String,
    pub count: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub shape: Shape,
    pub config_hash: String,
    pub seed: u64,
    pub splits: Vec<(Split, SplitManifest)>,
}

#[derive(Serialize, Deserialize)]
struct OmegaFile {
    train: Vec<Mask>,
    val: Vec<Mask>,
    test: Vec<Mask>,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Writes `<dir>/{train,val,test}.cks`, `omega.json` and `manifest.json`.
pub fn write_dataset(dir: &Path, ds: &Dataset, cfg: &ExperimentConfig) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let mut splits = Vec::new();
    for (split, samples) in [(Split::Train, &ds.train), (Split::Val, &ds.val), (Split::Test, &ds.test)] {
        if samples.is_empty() {
            continue;
        }
        let file = format!("{}.cks", split.name());
        let path = dir.join(&file);
        let grids: Vec<KGrid> = samples.iter().map(|s| s.y0.clone()).collect();
        write_cks1(BufWriter::new(File::create(&path)?), &grids)?;
        splits.push((split, SplitManifest { file, count: samples.len(), sha256: sha256_file(&path)? }));
    }
    let masks = |v: &[Sample]| v.iter().map(|s| s.omega.clone()).collect::<Vec<_>>();
    write_json(
        &dir.join("omega.json"),
        &OmegaFile { train: masks(&ds.train), val: masks(&ds.val), test: masks(&ds.test) },
    )?;
    let manifest = DatasetManifest { shape: ds.shape, config_hash: cfg.hash()?, seed: cfg.seed, splits };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Reads a dataset written by [`write_dataset`], checking every split file
/// against the manifest's digest.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = serde_json::from_reader(BufReader::new(File::open(dir.join("manifest.json"))?))?;
    let omega: OmegaFile = serde_json::from_reader(BufReader::new(File::open(dir.join("omega.json"))?))?;
    let mut ds = Dataset { shape: manifest.shape, train: vec![], val: vec![], test: vec![] };
    for (split, entry) in &manifest.splits {
        let path = dir.join(&entry.file);
        if sha256_file(&path)? != entry.sha256 {
            return Err(Error::Format(format!("{} does not match its manifest digest", entry.file)));
        }
        let grids = read_cks1(BufReader::new(File::open(&path)?))?;
        if grids.len() != entry.count {
            return Err(Error::Format(format!("{} holds {} samples, manifest says {}", entry.file, grids.len(), entry.count)));
        }
        let (masks, target) = match split {
            Split::Train => (&omega.train, &mut ds.train),
            Split::Val => (&omega.val, &mut ds.val),
            Split::Test => (&omega.test, &mut ds.test),
        };
        if masks.len() != grids.len() {
            return Err(Error::Format(format!("omega.json has {} {} masks for {} samples", masks.len(), split.name(), grids.len())));
        }
        for (g, m) in grids.into_iter().zip(masks) {
            if g.shape() != manifest.shape {
                return Err(Error::shape(manifest.shape, g.shape()));
            }
            target.push(Sample::new(g, m.clone())?);
        }
    }
    Ok(ds)
}

pub fn plan_for(cfg: &ExperimentConfig, regime: Regime, r_tilde: f64) -> Result<RegimePlan> {
    RegimePlan::new(
        regime,
        &cfg.primary_density()?,
        r_tilde,
        cfg.masks.epsilon,
        cfg.masks.ssdu_center,
        cfg.data.rows,
    )
}

/// Per-sample NMSE and SSIM of reconstructions against `y0`.
pub fn score(cfg: &ExperimentConfig, estimates: &[KGrid], samples: &[Sample]) -> Result<Vec<MetricRecord>> {
    estimates
        .iter()
        .zip(samples)
        .enumerate()
        .map(|(i, (e, s))| {
            Ok(MetricRecord { sample_id: i, nmse: nmse(e, &s.y0)?, ssim: ssim_cropped(e, &s.y0, cfg.crop())? })
        })
        .collect()
}

pub struct TrainOutcome {
    pub plan: RegimePlan,
    pub model: Box<dyn ReconModel>,
    pub trace: Vec<EpochRecord>,
}

/// Trains a fresh model; validation NMSE is recorded per epoch when the
/// dataset has a validation split.
pub fn train_point(cfg: &ExperimentConfig, regime: Regime, r_tilde: f64, ds: &Dataset) -> Result<TrainOutcome> {
    let plan = plan_for(cfg, regime, r_tilde)?;
    let mut model = cfg.training.model.build(ds.shape)?;
    let val_seed = cfg.seed ^ 0xa11d;
    let mut validate = |_: usize, m: &dyn ReconModel| -> Result<Option<f64>> {
        if ds.val.is_empty() {
            return Ok(None);
        }
        let out = infer_all(&plan, m, &ds.val, val_seed)?;
        let total: f64 = out.iter().zip(&ds.val).map(|(e, s)| nmse(e, &s.y0)).sum::<Result<f64>>()?;
        Ok(Some(total / ds.val.len() as f64))
    };
    let trace = train_regime(model.as_mut(), &plan, &ds.train, &cfg.fit_options(), &mut validate)?;
    Ok(TrainOutcome { plan, model, trace })
}

pub fn evaluate(cfg: &ExperimentConfig, plan: &RegimePlan, model: &dyn ReconModel, test: &[Sample]) -> Result<Vec<MetricRecord>> {
    let out = infer_all(plan, model, test, cfg.seed ^ 0x7e57)?;
    score(cfg, &out, test)
}

pub fn run_name(regime: Regime, r: f64, r_tilde: f64) -> String {
    if regime.uses_lambda() {
        format!("{}_R{}_Rt{}", regime, r, r_tilde)
    } else {
        format!("{}_R{}", regime, r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sample_id: usize,
    pub method: String,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "Rtilde")]
    pub r_tilde: Option<f64>,
    pub nmse: f64,
    pub ssim: f64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub r: f64,
    pub r_tilde: Option<f64>,
    pub config_hash: String,
    pub ssim_window: String,
    pub metrics: MetricSummary,
    pub final_train_loss: Option<f64>,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn r_tilde_for(regime: Regime, r_tilde: f64) -> Option<f64> {
    regime.uses_lambda().then_some(r_tilde)
}

/// Writes `checkpoint.bin`, `loss_trace.csv` and `config.resolved.json`
/// into `dir`.
pub fn save_training(dir: &Path, cfg: &ExperimentConfig, regime: Regime, r_tilde: f64, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let header = CheckpointHeader {
        regime,
        model: cfg.training.model.clone(),
        shape: cfg.shape(),
        r: cfg.masks.r,
        r_tilde: r_tilde_for(regime, r_tilde),
        epsilon: cfg.masks.epsilon,
        seed: cfg.seed,
        epochs: outcome.trace.len(),
        num_params: outcome.model.num_params(),
        config_hash: cfg.hash()?,
    };
    write_checkpoint(BufWriter::new(File::create(dir.join("checkpoint.bin"))?), &header, outcome.model.params())?;
    write_csv(&dir.join("loss_trace.csv"), &outcome.trace)?;
    fs::write(dir.join("config.resolved.json"), cfg.resolved_json()? + "\n")?;
    Ok(())
}

/// Rebuilds a model from a checkpoint, checking it matches the config.
pub fn load_model(path: &Path, cfg: &ExperimentConfig, regime: Regime) -> Result<(CheckpointHeader, Box<dyn ReconModel>)> {
    let (header, params) = read_checkpoint(BufReader::new(File::open(path)?))?;
    if header.regime != regime {
        return Err(Error::RegimeMismatch(format!(
            "checkpoint was trained as {}, config asks for {}",
            header.regime, regime
        )));
    }
    if header.shape != cfg.shape() {
        return Err(Error::RegimeMismatch(format!(
            "checkpoint grid {:?} differs from config grid {:?}",
            header.shape,
            cfg.shape()
        )));
    }
    let mut model = header.model.build(header.shape)?;
    if model.num_params() != params.len() {
        return Err(Error::RegimeMismatch(format!(
            "checkpoint holds {} parameters, architecture needs {}",
            params.len(),
            model.num_params()
        )));
    }
    model.params_mut().copy_from_slice(&params);
    Ok((header, model))
}

/// Writes `metrics.csv` and `summary.json`; returns the summary.
pub fn save_evaluation(
    dir: &Path,
    cfg: &ExperimentConfig,
    regime: Regime,
    r_tilde: f64,
    records: &[MetricRecord],
    final_train_loss: Option<f64>,
) -> Result<RunSummary> {
    fs::create_dir_all(dir)?;
    let hash = cfg.hash()?;
    let rt = r_tilde_for(regime, r_tilde);
    let rows: Vec<MetricRow> = records
        .iter()
        .map(|m| MetricRow {
            sample_id: m.sample_id,
            method: regime.to_string(),
            r: cfg.masks.r,
            r_tilde: rt,
            nmse: m.nmse,
            ssim: m.ssim,
            config_hash: hash.clone(),
        })
        .collect();
    write_csv(&dir.join("metrics.csv"), &rows)?;
    let summary = RunSummary {
        method: regime.to_string(),
        r: cfg.masks.r,
        r_tilde: rt,
        config_hash: hash,
        ssim_window: format!("uniform {0}x{0}", crate::metrics::SSIM_WINDOW),
        metrics: aggregate(records)?,
        final_train_loss,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn run_dir(out: &Path, regime: Regime, r: f64, r_tilde: f64) -> PathBuf {
    out.join("runs").join(run_name(regime, r, r_tilde))
}

/// Train, save, evaluate and save for one sweep point.
pub fn run_point(cfg: &ExperimentConfig, regime: Regime, r_tilde: f64, ds: &Dataset, out: Option<&Path>) -> Result<RunSummary> {
    let outcome = train_point(cfg, regime, r_tilde, ds)?;
    let records = evaluate(cfg, &outcome.plan, outcome.model.as_ref(), &ds.test)?;
    let last = outcome.trace.last().map(|e| e.train_loss);
    match out {
        Some(out) => {
            let dir = run_dir(out, regime, cfg.masks.r, r_tilde);
            save_training(&dir, cfg, regime, r_tilde, &outcome)?;
            save_evaluation(&dir, cfg, regime, r_tilde, &records, last)
        }
        None => Ok(RunSummary {
            method: regime.to_string(),
            r: cfg.masks.r,
            r_tilde: r_tilde_for(regime, r_tilde),
            config_hash: cfg.hash()?,
            ssim_window: format!("uniform {0}x{0}", crate::metrics::SSIM_WINDOW),
            metrics: aggregate(&records)?,
            final_train_loss: last,
        }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "Rtilde")]
    pub r_tilde: Option<f64>,
    pub mean_nmse: f64,
    pub mean_ssim: f64,
    pub config_hash: String,
}

/// One run per (regime, R̃); the supervised regime ignores R̃ and runs once.
/// All points share the dataset, hence the Ω masks. Rows are sorted by
/// (method, R̃).
pub fn run_sweep(cfg: &ExperimentConfig, ds: &Dataset, out: Option<&Path>, jobs: usize) -> Result<Vec<SweepRow>> {
    let mut points = Vec::new();
    for &regime in &cfg.sweep.regimes {
        if regime.uses_lambda() {
            points.extend(cfg.sweep.r_tilde.iter().map(|&rt| (regime, rt)));
        } else {
            points.push((regime, 1.0));
        }
    }
    let run = |&(regime, rt): &(Regime, f64)| -> Result<SweepRow> {
        log::info!("sweep point {}", run_name(regime, cfg.masks.r, rt));
        let s = run_point(cfg, regime, rt, ds, out)?;
        Ok(SweepRow {
            method: s.method,
            r: s.r,
            r_tilde: s.r_tilde,
            mean_nmse: s.metrics.nmse.mean,
            mean_ssim: s.metrics.ssim.mean,
            config_hash: s.config_hash,
        })
    };
    let mut rows: Vec<SweepRow> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        pool.install(|| points.par_iter().map(run).collect::<Result<_>>())?
    } else {
        points.iter().map(run).collect::<Result<_>>()?
    };
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.r_tilde.unwrap_or(0.0).total_cmp(&b.r_tilde.unwrap_or(0.0)))
    });
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        write_csv(&out.join("sweep.csv"), &rows)?;
    }
    Ok(rows)
}
