//! Exact enumeration over small ensembles of ground truths and independent
//! Bernoulli masks, used to certify the conditional-expectation identities
//! behind Noisier2Noise and SSDU, plus a Monte-Carlo check of `k_j`.
//!
//! A toy ensemble has `N <= 8` atoms. Every `(truth, Ω, Λ)` triple is
//! enumerated (`T * 4^N` terms) and grouped by the exact observed `ỹ`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correction::k_from_probs;
use crate::error::{Error, Result};

pub const MAX_ATOMS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyEnsemble {
    atoms: usize,
    truths: Vec<Vec<Complex64>>,
    weights: Vec<f64>,
    p: Vec<f64>,
    p_tilde: Vec<f64>,
}

impl ToyEnsemble {
    /// Truth entries must be non-zero: an observed zero is read as "not
    /// sampled", which is ambiguous when a truth is itself zero.
    pub fn new(
        truths: Vec<Vec<Complex64>>,
        weights: Vec<f64>,
        p: Vec<f64>,
        p_tilde: Vec<f64>,
    ) -> Result<Self> {
        let atoms = p.len();
        if atoms == 0 || atoms > MAX_ATOMS {
            return Err(Error::InvalidInput(format!("toy ensembles need 1..={MAX_ATOMS} atoms, got {atoms}")));
        }
        if p_tilde.len() != atoms {
            return Err(Error::shape(atoms, p_tilde.len()));
        }
        if truths.is_empty() || truths.len() != weights.len() {
            return Err(Error::InvalidInput("need one weight per truth and at least one truth".into()));
        }
        if let Some(t) = truths.iter().find(|t| t.len() != atoms) {
            return Err(Error::shape(atoms, t.len()));
        }
        if truths.iter().flatten().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite("toy truths"));
        }
        if truths.iter().flatten().any(|z| z.norm_sqr() == 0.0) {
            return Err(Error::Precondition("toy truths must not contain exact zeros".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("truth weights must be positive and sum to 1".into()));
        }
        if p.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::Precondition("every p_j must lie in (0, 1]".into()));
        }
        if p_tilde.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidInput("every p̃_j must lie in [0, 1]".into()));
        }
        Ok(Self { atoms, truths, weights, p, p_tilde })
    }

    /// Random ensemble: each atom's truth value is drawn from a two-value
    /// pool so that different truths overlap and posteriors stay mixed.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, spec: &RandomEnsembleSpec) -> Self {
        let atoms = rng.random_range(1..=spec.max_atoms.clamp(1, MAX_ATOMS));
        let n_truths = rng.random_range(1..=spec.max_truths.max(1));
        let pools: Vec<[Complex64; 2]> = (0..atoms)
            .map(|_| {
                let mut v = || {
                    Complex64::from_polar(
                        rng.random_range(0.2..2.0),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                };
                [v(), v()]
            })
            .collect();
        let truths = (0..n_truths)
            .map(|_| pools.iter().map(|pool| pool[rng.random_range(0..2)]).collect())
            .collect();
        let raw: Vec<f64> = (0..n_truths).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        // push rounding into the last weight so the sum is exactly 1 +- ulp
        let head: f64 = weights[..n_truths - 1].iter().sum();
        weights[n_truths - 1] = 1.0 - head;
        let (lo, hi) = spec.p_range;
        let p = (0..atoms).map(|_| rng.random_range(lo..=hi)).collect();
        let p_tilde = (0..atoms)
            .map(|_| {
                if rng.random_bool(spec.extreme_p_tilde_fraction) {
                    spec.p_tilde_max
                } else {
                    rng.random_range(lo..=hi.min(spec.p_tilde_max))
                }
            })
            .collect();
        Self::new(truths, weights, p, p_tilde).expect("generator respects ensemble invariants")
    }

    pub fn atoms(&self) -> usize {
        self.atoms
    }

    pub fn truths(&self) -> &[Vec<Complex64>] {
        &self.truths
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn p_tilde(&self) -> &[f64] {
        &self.p_tilde
    }

    /// Same truths and `P̃`, different `P`.
    pub fn with_p(&self, p: Vec<f64>) -> Result<Self> {
        Self::new(self.truths.clone(), self.weights.clone(), p, self.p_tilde.clone())
    }

    /// Probability of each bit pattern under independent Bernoulli(probs).
    fn pattern_probs(probs: &[f64]) -> Vec<f64> {
        (0..1usize << probs.len())
            .map(|bits| {
                probs
                    .iter()
                    .enumerate()
                    .map(|(j, &q)| if bits >> j & 1 == 1 { q } else { 1.0 - q })
                    .product()
            })
            .collect()
    }

    /// Visits every `(truth index, Ω bits, Λ bits, probability)` with
    /// non-zero probability.
    pub fn for_each_triple(&self, mut f: impl FnMut(usize, usize, usize, f64)) {
        let po = Self::pattern_probs(&self.p);
        let pl = Self::pattern_probs(&self.p_tilde);
        for (t, &wt) in self.weights.iter().enumerate() {
            for (omega, &a) in po.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (lambda, &b) in pl.iter().enumerate() {
                    let prob = wt * a * b;
                    if prob > 0.0 {
                        f(t, omega, lambda, prob);
                    }
                }
            }
        }
    }

    /// `m ⊙ truth` for a bit pattern.
    pub fn apply_bits(&self, truth: usize, bits: usize) -> Vec<Complex64> {
        self.truths[truth]
            .iter()
            .enumerate()
            .map(|(j, &z)| if bits >> j & 1 == 1 { z } else { Complex64::new(0.0, 0.0) })
            .collect()
    }
}

/// Randomisation ranges for [`ToyEnsemble::random`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomEnsembleSpec {
    pub max_atoms: usize,
    pub max_truths: usize,
    pub p_range: (f64, f64),
    pub p_tilde_max: f64,
    /// Fraction of atoms given `p̃ = p_tilde_max`, where `(1 - k)^-1` is
    /// largest.
    pub extreme_p_tilde_fraction: f64,
}

impl Default for RandomEnsembleSpec {
    fn default() -> Self {
        Self {
            max_atoms: 6,
            max_truths: 4,
            p_range: (0.1, 0.9),
            p_tilde_max: 1.0 - 1e-5,
            extreme_p_tilde_fraction: 0.15,
        }
    }
}

impl RandomEnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.p_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidInput(format!("p_range must satisfy 0 < lo <= hi <= 1, got {:?}", self.p_range)));
        }
        if !(self.p_tilde_max > 0.0 && self.p_tilde_max < 1.0) {
            return Err(Error::Precondition(format!(
                "p̃ must stay below 1 for (1 - K) to be invertible, got p_tilde_max = {}",
                self.p_tilde_max
            )));
        }
        if self.max_atoms == 0 || self.max_atoms > MAX_ATOMS || self.max_truths == 0 {
            return Err(Error::InvalidInput("ensemble sizes out of range".into()));
        }
        if !(0.0..=1.0).contains(&self.extreme_p_tilde_fraction) {
            return Err(Error::InvalidInput("extreme_p_tilde_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn key_of(v: &[Complex64]) -> Vec<[u64; 2]> {
    // +0.0 for unsampled entries; truths carry no zeros so the key is exact
    v.iter().map(|z| [z.re.to_bits(), z.im.to_bits()]).collect()
}

/// Conditional moments for one reachable observation `ỹ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationPosterior {
    pub y_tilde: Vec<Complex64>,
    pub prob: f64,
    /// `E[Y | Ỹ = ỹ]`.
    pub e_y: Vec<Complex64>,
    /// `E[Y0 | Ỹ = ỹ]`.
    pub e_y0: Vec<Complex64>,
    /// `E[(1 - m̃_j) m_j | Ỹ = ỹ]`.
    pub ssdu_weight: Vec<f64>,
    /// `E[(1 - m̃_j) m_j Y_j | Ỹ = ỹ] / E[(1 - m̃_j) m_j | Ỹ = ỹ]`, `None` where
    /// the weight has no conditional mass.
    pub ssdu_minimizer: Vec<Option<Complex64>>,
}

#[derive(Default)]
struct Accum {
    prob: f64,
    // sums of prob * (value - ỹ), so exactly-known entries stay exact
    y: Vec<Complex64>,
    y0: Vec<Complex64>,
    w: Vec<f64>,
    wy: Vec<Complex64>,
}

/// Every reachable observation with its exact posterior moments, ordered by
/// the bit pattern of `ỹ`.
pub fn all_posteriors(ens: &ToyEnsemble) -> Vec<ObservationPosterior> {
    let n = ens.atoms;
    let zero = Complex64::new(0.0, 0.0);
    let mut groups: BTreeMap<Vec<[u64; 2]>, (Vec<Complex64>, Accum)> = BTreeMap::new();
    ens.for_each_triple(|t, omega, lambda, prob| {
        let y_tilde = ens.apply_bits(t, omega & lambda);
        let entry = groups.entry(key_of(&y_tilde)).or_insert_with(|| {
            (
                y_tilde.clone(),
                Accum {
                    y: vec![zero; n],
                    y0: vec![zero; n],
                    w: vec![0.0; n],
                    wy: vec![zero; n],
                    ..Default::default()
                },
            )
        });
        let acc = &mut entry.1;
        acc.prob += prob;
        let truth = &ens.truths[t];
        for j in 0..n {
            let in_omega = omega >> j & 1 == 1;
            let in_lambda = lambda >> j & 1 == 1;
            let y_j = if in_omega { truth[j] } else { zero };
            acc.y[j] += (y_j - y_tilde[j]) * prob;
            acc.y0[j] += (truth[j] - y_tilde[j]) * prob;
            if in_omega && !in_lambda {
                acc.w[j] += prob;
                acc.wy[j] += truth[j] * prob;
            }
        }
    });

    groups
        .into_values()
        .map(|(y_tilde, acc)| {
            let z = acc.prob;
            let e_y = y_tilde.iter().zip(&acc.y).map(|(yt, s)| yt + s / z).collect();
            let e_y0 = y_tilde.iter().zip(&acc.y0).map(|(yt, s)| yt + s / z).collect();
            let ssdu_minimizer = acc
                .w
                .iter()
                .zip(&acc.wy)
                .map(|(&w, &wy)| if w > 0.0 { Some(wy / w) } else { None })
                .collect();
            ObservationPosterior {
                y_tilde,
                prob: z,
                e_y,
                e_y0,
                ssdu_weight: acc.w.iter().map(|w| w / z).collect(),
                ssdu_minimizer,
            }
        })
        .collect()
}

/// Total enumerated probability mass; one up to rounding.
pub fn total_probability(ens: &ToyEnsemble) -> f64 {
    all_posteriors(ens).iter().map(|o| o.prob).sum()
}

fn posterior_for(ens: &ToyEnsemble, y_obs: &[Complex64]) -> Result<ObservationPosterior> {
    if y_obs.len() != ens.atoms {
        return Err(Error::shape(ens.atoms, y_obs.len()));
    }
    let key = key_of(y_obs);
    all_posteriors(ens)
        .into_iter()
        .find(|o| key_of(&o.y_tilde) == key)
        .ok_or(Error::ZeroProbability)
}

/// Exact `(E[Y | Ỹ = ỹ], E[Y0 | Ỹ = ỹ])`.
pub fn enumerate_posteriors(
    ens: &ToyEnsemble,
    y_obs: &[Complex64],
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    posterior_for(ens, y_obs).map(|o| (o.e_y, o.e_y0))
}

/// Pointwise minimiser of `E[(1 - m̃_j) m_j |f_j - Y_j|² | Ỹ = ỹ]`; `None`
/// marks entries the SSDU loss leaves unconstrained.
pub fn ssdu_pointwise_minimizer(ens: &ToyEnsemble, y_obs: &[Complex64]) -> Result<Vec<Option<Complex64>>> {
    posterior_for(ens, y_obs).map(|o| o.ssdu_minimizer)
}

/// Applies the Noisier2Noise correction `(1 - K)^-1 (E[Y | Ỹ] - K Ỹ)`.
///
/// Evaluated as `Ỹ + (1 - K)^-1 (E[Y | Ỹ] - Ỹ)`, which is algebraically the
/// same but does not amplify the rounding of `K Ỹ` when `1 - k_j` is tiny.
pub fn corrected_estimate(e_y: &[Complex64], y_tilde: &[Complex64], inv_one_minus_k: &[f64]) -> Vec<Complex64> {
    e_y.iter()
        .zip(y_tilde)
        .zip(inv_one_minus_k)
        .map(|((ey, yt), inv)| yt + (ey - yt) * *inv)
        .collect()
}

/// Max over reachable observations of `‖(1 - K)^-1 (E[Y|Ỹ] - K Ỹ) - E[Y0|Ỹ]‖_∞`
/// using the closed-form `K`.
pub fn verify_claim1(ens: &ToyEnsemble) -> Result<f64> {
    let (_, inv) = k_from_probs(&ens.p, &ens.p_tilde)?;
    Ok(verify_claim1_with(ens, &inv))
}

/// [`verify_claim1`] with a caller-supplied `(1 - K)^-1`.
pub fn verify_claim1_with(ens: &ToyEnsemble, inv_one_minus_k: &[f64]) -> f64 {
    all_posteriors(ens)
        .iter()
        .flat_map(|o| {
            corrected_estimate(&o.e_y, &o.y_tilde, inv_one_minus_k)
                .into_iter()
                .zip(o.e_y0.clone())
                .map(|(a, b)| (a - b).norm())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// Max over reachable observations and atoms with `ỹ_j = 0` of
/// `|SSDU minimiser_j - E[Y0_j | Ỹ]|`; infinite if any such entry is
/// unconstrained.
pub fn verify_claim2(ens: &ToyEnsemble) -> f64 {
    let mut worst: f64 = 0.0;
    for o in all_posteriors(ens) {
        for j in 0..ens.atoms {
            if o.y_tilde[j].norm_sqr() != 0.0 {
                continue;
            }
            let dev = match o.ssdu_minimizer[j] {
                Some(m) => (m - o.e_y0[j]).norm(),
                None => f64::INFINITY,
            };
            worst = worst.max(dev);
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KjEstimate {
    pub p: f64,
    pub p_tilde: f64,
    pub estimate: f64,
    pub closed_form: f64,
    /// Binomial standard error at the closed-form value.
    pub std_error: f64,
    pub qualifying: u64,
}

impl KjEstimate {
    /// Deviation in standard errors; zero when both are exact.
    pub fn z_score(&self) -> f64 {
        let dev = (self.estimate - self.closed_form).abs();
        if dev == 0.0 {
            0.0
        } else {
            dev / self.std_error
        }
    }
}

/// Empirical `P[Y_j = 0 | Ỹ_j = 0]` from scalar mask draws.
pub fn mc_estimate_kj<R: Rng + ?Sized>(p: f64, p_tilde: f64, draws: u64, rng: &mut R) -> Result<KjEstimate> {
    if draws < 10_000 {
        return Err(Error::InvalidInput(format!("need at least 1e4 draws, got {draws}")));
    }
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&p_tilde) {
        return Err(Error::InvalidInput(format!("probabilities out of range: p={p}, p̃={p_tilde}")));
    }
    let (mut qualifying, mut unsampled) = (0u64, 0u64);
    for _ in 0..draws {
        let m = rng.random::<f64>() < p;
        let mt = rng.random::<f64>() < p_tilde;
        if !(m && mt) {
            qualifying += 1;
            unsampled += !m as u64;
        }
    }
    if qualifying == 0 {
        return Err(Error::Precondition(format!(
            "no draws with Ỹ_j = 0 (p̃ p = {})",
            p_tilde * p
        )));
    }
    let closed_form = (1.0 - p) / (1.0 - p_tilde * p);
    Ok(KjEstimate {
        p,
        p_tilde,
        estimate: unsampled as f64 / qualifying as f64,
        closed_form,
        std_error: (closed_form * (1.0 - closed_form) / qualifying as f64).sqrt(),
        qualifying,
    })
}

/// Settings for the randomized claim-certification suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSuiteConfig {
    pub seed: u64,
    pub ensembles: usize,
    pub ensemble: RandomEnsembleSpec,
    pub claim1_tolerance: f64,
    pub claim2_tolerance: f64,
    /// `(p, p̃)` points for the Monte-Carlo `k_j` check.
    pub kj_grid: Vec<(f64, f64)>,
    pub kj_draws: u64,
    pub kj_sigmas: f64,
    /// Relative perturbation of `k_j` (fault injection); zero in normal runs.
    pub k_perturbation: f64,
}

impl Default for OracleSuiteConfig {
    fn default() -> Self {
        let kj_grid = [0.1, 0.3, 0.5, 0.7, 0.9]
            .iter()
            .flat_map(|&p| [0.2, 0.5, 0.8, 0.95].map(|pt| (p, pt)))
            .collect();
        Self {
            seed: 20220101,
            ensembles: 50,
            ensemble: RandomEnsembleSpec::default(),
            claim1_tolerance: 1e-10,
            claim2_tolerance: 1e-8,
            kj_grid,
            kj_draws: 1_000_000,
            kj_sigmas: 3.0,
            k_perturbation: 0.0,
        }
    }
}

impl OracleSuiteConfig {
    pub fn validate(&self) -> Result<()> {
        self.ensemble.validate()?;
        if self.ensembles == 0 {
            return Err(Error::InvalidInput("need at least one ensemble".into()));
        }
        if self.kj_draws < 10_000 {
            return Err(Error::InvalidInput("kj_draws must be at least 1e4".into()));
        }
        for &(p, pt) in &self.kj_grid {
            if !(p > 0.0 && p <= 1.0 && (0.0..1.0).contains(&pt)) {
                return Err(Error::Precondition(format!("k_j grid point ({p}, {pt}) out of range")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub config: OracleSuiteConfig,
    pub probability_mass_error: f64,
    pub claim1: CheckSummary,
    pub claim2: CheckSummary,
    pub kj: Vec<KjEstimate>,
    pub kj_passed: bool,
    pub passed: bool,
}

/// Runs Claim-1, Claim-2 and `k_j` checks over randomized ensembles.
pub fn run_claim_suite(cfg: &OracleSuiteConfig) -> Result<OracleReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut c1, mut c2, mut mass): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..cfg.ensembles {
        let ens = ToyEnsemble::random(&mut rng, &cfg.ensemble);
        let (k, _) = k_from_probs(&ens.p, &ens.p_tilde)?;
        let inv: Vec<f64> = k
            .iter()
            .map(|&kj| 1.0 / (1.0 - (kj * (1.0 + cfg.k_perturbation)).min(1.0 - 1e-15)))
            .collect();
        let inv = if cfg.k_perturbation == 0.0 { k_from_probs(&ens.p, &ens.p_tilde)?.1 } else { inv };
        c1 = c1.max(verify_claim1_with(&ens, &inv));
        c2 = c2.max(verify_claim2(&ens));
        mass = mass.max((total_probability(&ens) - 1.0).abs());
    }
    let mut kj = Vec::with_capacity(cfg.kj_grid.len());
    for (i, &(p, pt)) in cfg.kj_grid.iter().enumerate() {
        let mut stream = ChaCha8Rng::seed_from_u64(cfg.seed);
        stream.set_stream(1 + i as u64);
        kj.push(mc_estimate_kj(p, pt, cfg.kj_draws, &mut stream)?);
    }
    let kj_passed = kj.iter().all(|e| e.z_score() <= cfg.kj_sigmas);
    let claim1 = CheckSummary {
        max_deviation: c1,
        tolerance: cfg.claim1_tolerance,
        passed: c1 <= cfg.claim1_tolerance,
    };
    let claim2 = CheckSummary {
        max_deviation: c2,
        tolerance: cfg.claim2_tolerance,
        passed: c2 <= cfg.claim2_tolerance,
    };
    let passed = claim1.passed && claim2.passed && kj_passed && mass <= 1e-12;
    Ok(OracleReport {
        config: cfg.clone(),
        probability_mass_error: mass,
        claim1,
        claim2,
        kj,
        kj_passed,
        passed,
    })
}
