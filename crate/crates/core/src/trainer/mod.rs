//! Reconstructor models, the optimiser and the training loop for the five
//! training regimes.

mod adam;
mod checkpoint;
mod conv;
mod linear;
mod model;
mod tabular;
mod toy;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use conv::{ConvModel, ConvSpec, MAX_CONV_PARAMS};
pub use linear::LinearModel;
pub use model::{grad_check, ReconModel};
pub use tabular::TabularModel;
pub use toy::enumerated_examples;

use std::fmt;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correction::{compute_k, infer_noisier2noise, infer_ssdu, infer_supervised, CorrectionDiag};
use crate::error::{Error, Result};
use crate::kspace::{KGrid, Shape};
use crate::losses::WeightSpec;
use crate::masking::{build_bernoulli2d_density, sample_mask, secondary_density_from, Mask, SamplingDensity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Supervised,
    #[serde(rename = "unweighted_n2n")]
    UnweightedN2N,
    #[serde(rename = "weighted_n2n")]
    WeightedN2N,
    SsduOriginal,
    SsduProposed,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::Supervised,
        Regime::UnweightedN2N,
        Regime::WeightedN2N,
        Regime::SsduOriginal,
        Regime::SsduProposed,
    ];

    pub fn uses_lambda(self) -> bool {
        self != Regime::Supervised
    }

    pub fn is_n2n(self) -> bool {
        matches!(self, Regime::UnweightedN2N | Regime::WeightedN2N)
    }

    pub fn is_ssdu(self) -> bool {
        matches!(self, Regime::SsduOriginal | Regime::SsduProposed)
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::Supervised => "supervised",
            Regime::UnweightedN2N => "unweighted_n2n",
            Regime::WeightedN2N => "weighted_n2n",
            Regime::SsduOriginal => "ssdu_original",
            Regime::SsduProposed => "ssdu_proposed",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.label() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown regime {s:?}")))
    }
}

/// The loss weighting, Λ distribution and correction implied by a regime.
#[derive(Clone, Debug)]
pub struct RegimePlan {
    pub regime: Regime,
    pub omega_density: SamplingDensity,
    pub lambda_density: Option<SamplingDensity>,
    pub k: Option<CorrectionDiag>,
}

impl RegimePlan {
    /// `ssdu_center` is the fully sampled square of the 2D Bernoulli Λ used
    /// by Original SSDU; `grid_rows` is the k-space height.
    pub fn new(
        regime: Regime,
        omega_density: &SamplingDensity,
        r_tilde: f64,
        epsilon: f64,
        ssdu_center: usize,
        grid_rows: usize,
    ) -> Result<Self> {
        let (lambda_density, k) = match regime {
            Regime::Supervised => (None, None),
            Regime::UnweightedN2N | Regime::WeightedN2N => {
                let lam = secondary_density_from(omega_density, r_tilde, epsilon)?;
                let k = compute_k(omega_density, &lam)?;
                (Some(lam), Some(k))
            }
            Regime::SsduProposed => (Some(secondary_density_from(omega_density, r_tilde, epsilon)?), None),
            Regime::SsduOriginal => (
                Some(build_bernoulli2d_density(grid_rows, omega_density.cols(), ssdu_center, r_tilde)?),
                None,
            ),
        };
        Ok(Self { regime, omega_density: omega_density.clone(), lambda_density, k })
    }

    pub fn weight_spec(&self) -> WeightSpec {
        match self.regime {
            Regime::Supervised | Regime::UnweightedN2N => WeightSpec::identity(),
            Regime::WeightedN2N => WeightSpec::inv_one_minus_k(self.k.clone().expect("n2n plans carry K")),
            Regime::SsduOriginal | Regime::SsduProposed => WeightSpec::ssdu_residual(),
        }
    }

    fn draw_lambda(&self, rng: &mut ChaCha8Rng) -> Result<Mask> {
        let d = self
            .lambda_density
            .as_ref()
            .ok_or_else(|| Error::RegimeMismatch(format!("{} has no second mask", self.regime)))?;
        Ok(sample_mask(d, rng))
    }

    /// One training example for `(y, Ω)`; `y0` is needed only by the
    /// supervised regime.
    pub fn make_example(&self, y0: Option<&KGrid>, y: &KGrid, omega: &Mask, rng: &mut ChaCha8Rng) -> Result<Example> {
        let shape = y.shape();
        omega.check_grid(shape)?;
        if self.regime == Regime::Supervised {
            let y0 = y0.ok_or_else(|| Error::RegimeMismatch("supervised training needs y0".into()))?;
            y0.check_same_shape(y)?;
            return Ok(Example {
                input: y.clone(),
                combined: omega.clone(),
                target: y0.clone(),
                weights: vec![1.0; shape.plane()],
                prob: 1.0,
            });
        }
        let lambda = self.draw_lambda(rng)?;
        let combined = omega.product(&lambda)?;
        Ok(Example {
            input: y.masked(&combined)?,
            weights: self.weight_spec().entry_weights(shape, omega, &lambda)?,
            combined,
            target: y.clone(),
            prob: 1.0,
        })
    }

    /// Data-consistent estimate of fully sampled k-space from `(y, Ω)`.
    /// Λ-based regimes draw a fresh Λ from `rng`.
    pub fn infer(&self, model: &dyn ReconModel, y: &KGrid, omega: &Mask, rng: &mut ChaCha8Rng) -> Result<KGrid> {
        match self.regime {
            Regime::Supervised => {
                let f = model.forward(y, omega)?;
                infer_supervised(&f, y, omega)
            }
            _ => {
                let lambda = self.draw_lambda(rng)?;
                let combined = omega.product(&lambda)?;
                let y_tilde = y.masked(&combined)?;
                let f = model.forward(&y_tilde, &combined)?;
                match &self.k {
                    Some(k) => infer_noisier2noise(&f, &y_tilde, y, omega, k),
                    None => infer_ssdu(&f, y, omega),
                }
            }
        }
    }
}

/// A weighted training pair: the loss is `prob * Σ w² |f(input) - target|²`.
#[derive(Clone, Debug)]
pub struct Example {
    pub input: KGrid,
    pub combined: Mask,
    pub target: KGrid,
    /// Per-location weights over the `rows x cols` plane.
    pub weights: Vec<f64>,
    pub prob: f64,
}

/// `(loss, ∂loss/∂f)` for one example without the probability factor.
pub fn example_loss(model: &dyn ReconModel, ex: &Example) -> Result<(f64, KGrid)> {
    let f = model.forward(&ex.input, &ex.combined)?;
    let shape = f.shape();
    let plane = shape.plane();
    if ex.weights.len() != plane {
        return Err(Error::shape(plane, ex.weights.len()));
    }
    f.check_same_shape(&ex.target)?;
    let mut loss = 0.0;
    let grad: Vec<Complex64> = f
        .as_slice()
        .iter()
        .zip(ex.target.as_slice())
        .enumerate()
        .map(|(i, (a, t))| {
            let w2 = ex.weights[i % plane].powi(2);
            let r = a - t;
            loss += w2 * r.norm_sqr();
            2.0 * w2 * r
        })
        .collect();
    Ok((loss, KGrid::from_vec(shape, grad)?))
}

/// Probability-weighted mean loss over a set of examples.
pub fn mean_loss(model: &dyn ReconModel, examples: &[Example]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for ex in examples {
        num += ex.prob * example_loss(model, ex)?.0;
        den += ex.prob;
    }
    Ok(num / den)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Abort when a batch loss exceeds this multiple of the first one.
    pub divergence_factor: f64,
    /// Accumulate batch gradients on the rayon pool.
    pub parallel: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 4,
            optimizer: AdamConfig::default(),
            seed: 0,
            divergence_factor: 1e6,
            parallel: false,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput("epochs and batch_size must be positive".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::InvalidInput("divergence_factor must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nmse: Option<f64>,
}

fn batch_gradient(model: &dyn ReconModel, batch: &[Example], parallel: bool) -> Result<(f64, Vec<f64>)> {
    let n = model.num_params();
    let den: f64 = batch.iter().map(|e| e.prob).sum();
    let one = |acc: &mut (f64, Vec<f64>), ex: &Example| -> Result<()> {
        let (l, g) = example_loss(model, ex)?;
        acc.0 += ex.prob * l / den;
        model.backward_into(&ex.input, &ex.combined, &g, ex.prob / den, &mut acc.1)
    };
    if parallel {
        batch
            .par_iter()
            .try_fold(
                || (0.0, vec![0.0; n]),
                |mut acc, ex| one(&mut acc, ex).map(|_| acc),
            )
            .try_reduce(
                || (0.0, vec![0.0; n]),
                |mut a, b| {
                    a.0 += b.0;
                    a.1.iter_mut().zip(b.1).for_each(|(x, y)| *x += y);
                    Ok(a)
                },
            )
    } else {
        let mut acc = (0.0, vec![0.0; n]);
        for ex in batch {
            one(&mut acc, ex)?;
        }
        Ok(acc)
    }
}

/// Minimises the probability-weighted loss with Adam. `examples_for` builds
/// the example set of an epoch (fresh Λ draws live there); `on_epoch` may
/// return a validation NMSE for the trace.
pub fn fit(
    model: &mut dyn ReconModel,
    opts: &FitOptions,
    examples_for: &mut dyn FnMut(usize) -> Result<Vec<Example>>,
    on_epoch: &mut dyn FnMut(usize, &dyn ReconModel) -> Result<Option<f64>>,
) -> Result<Vec<EpochRecord>> {
    opts.validate()?;
    let mut state = AdamState::new(model.num_params());
    let mut lr = opts.optimizer.learning_rate;
    let mut initial: Option<f64> = None;
    let mut trace = Vec::with_capacity(opts.epochs);
    let mut step = 0usize;
    for epoch in 0..opts.epochs {
        let mut examples = examples_for(epoch)?;
        if examples.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        let mut order_rng = ChaCha8Rng::seed_from_u64(opts.seed);
        order_rng.set_stream(epoch as u64);
        examples.shuffle(&mut order_rng);

        let mut num = 0.0;
        let mut den = 0.0;
        for batch in examples.chunks(opts.batch_size) {
            let (loss, grad) = batch_gradient(model, batch, opts.parallel)?;
            let reference = *initial.get_or_insert(loss);
            if !loss.is_finite() || loss > opts.divergence_factor * reference {
                return Err(Error::Divergence { epoch, loss, initial: reference });
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient { epoch, step });
            }
            adam_step(model.params_mut(), &grad, &mut state, &opts.optimizer, lr)?;
            step += 1;
            let w: f64 = batch.iter().map(|e| e.prob).sum();
            num += loss * w;
            den += w;
        }
        lr *= opts.optimizer.lr_decay;
        let val_nmse = on_epoch(epoch, model)?;
        let train_loss = num / den;
        log::debug!("epoch {epoch}: train loss {train_loss:.6e}");
        trace.push(EpochRecord { epoch, train_loss, val_nmse });
    }
    Ok(trace)
}

/// A sub-sampled training or test item: `y = M_Ω y0` with its fixed Ω.
#[derive(Clone, Debug)]
pub struct Sample {
    pub y0: KGrid,
    pub omega: Mask,
    pub y: KGrid,
}

impl Sample {
    pub fn new(y0: KGrid, omega: Mask) -> Result<Self> {
        let y = y0.masked(&omega)?;
        Ok(Self { y0, omega, y })
    }
}

/// Seeded per-(epoch, sample) generator for Λ draws.
pub fn lambda_rng(seed: u64, epoch: u64, sample: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((epoch << 32) | sample);
    rng
}

/// Generator for the Λ drawn at inference for a given sample.
pub fn inference_rng(seed: u64, sample: u64) -> ChaCha8Rng {
    lambda_rng(seed ^ 0x5eed_1f0e_5eed_1f0e, u32::MAX as u64, sample)
}

/// Trains on a dataset with a fresh Λ per sample and epoch. `validate` is
/// called after every epoch.
pub fn train_regime(
    model: &mut dyn ReconModel,
    plan: &RegimePlan,
    train: &[Sample],
    opts: &FitOptions,
    validate: &mut dyn FnMut(usize, &dyn ReconModel) -> Result<Option<f64>>,
) -> Result<Vec<EpochRecord>> {
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let shape = train[0].y.shape();
    if let Some(s) = train.iter().find(|s| s.y.shape() != shape) {
        return Err(Error::shape(shape, s.y.shape()));
    }
    let mut examples_for = |epoch: usize| -> Result<Vec<Example>> {
        train
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = lambda_rng(opts.seed, epoch as u64, i as u64);
                plan.make_example(Some(&s.y0), &s.y, &s.omega, &mut rng)
            })
            .collect()
    };
    fit(model, opts, &mut examples_for, validate)
}

/// Reconstructs every sample with the regime's inference rule.
pub fn infer_all(plan: &RegimePlan, model: &dyn ReconModel, samples: &[Sample], seed: u64) -> Result<Vec<KGrid>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| plan.infer(model, &s.y, &s.omega, &mut inference_rng(seed, i as u64)))
        .collect()
}

/// Model architecture selector for configs and checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Conv(ConvSpec),
    Linear,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Conv(ConvSpec::default())
    }
}

impl ModelSpec {
    pub fn build(&self, shape: Shape) -> Result<Box<dyn ReconModel>> {
        Ok(match self {
            ModelSpec::Conv(spec) => Box::new(ConvModel::new(shape, spec.clone())?),
            ModelSpec::Linear => Box::new(LinearModel::new(shape)),
        })
    }
}

#[cfg(test)]
mod tests;
