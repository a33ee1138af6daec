//! The diagonal `K` with `k_j = P[Y_j = 0 | Ỹ_j = 0]` and the
//! data-consistent inference estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::{ComplexGrid, KGrid};
use crate::masking::{Mask, SamplingDensity, Scheme};

/// Per-atom `k_j` and `(1 - k_j)^-1`, broadcast to entries like a mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionDiag {
    scheme: Scheme,
    rows: usize,
    cols: usize,
    k: Vec<f64>,
    inv_one_minus_k: Vec<f64>,
}

/// `k = (1 - p) / (1 - p̃ p)` and `(1 - k)^-1 = (1 - p̃ p) / (p (1 - p̃))`.
pub fn k_pair(p: f64, p_tilde: f64) -> Result<(f64, f64)> {
    if !(p > 0.0 && p <= 1.0) || !(0.0..=1.0).contains(&p_tilde) {
        return Err(Error::InvalidInput(format!(
            "need p in (0, 1] and p̃ in [0, 1], got p={p}, p̃={p_tilde}"
        )));
    }
    if p == 1.0 {
        // never masked by Ω
        return Ok((0.0, 1.0));
    }
    if p_tilde == 1.0 {
        return Err(Error::Precondition(format!(
            "p̃ = 1 with p = {p} < 1 makes (1 - K) singular"
        )));
    }
    let denom = 1.0 - p_tilde * p;
    Ok(((1.0 - p) / denom, denom / (p * (1.0 - p_tilde))))
}

/// Per-atom `(k, (1 - k)^-1)` from raw probability vectors.
pub fn k_from_probs(p: &[f64], p_tilde: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if p.len() != p_tilde.len() {
        return Err(Error::shape(p.len(), p_tilde.len()));
    }
    p.iter().zip(p_tilde).map(|(&a, &b)| k_pair(a, b)).collect::<Result<Vec<_>>>().map(|v| v.into_iter().unzip())
}

pub fn compute_k(p: &SamplingDensity, p_tilde: &SamplingDensity) -> Result<CorrectionDiag> {
    if !p.same_layout(p_tilde) {
        return Err(Error::shape(
            (p.scheme(), p.rows(), p.cols()),
            (p_tilde.scheme(), p_tilde.rows(), p_tilde.cols()),
        ));
    }
    let (k, inv_one_minus_k) = k_from_probs(p.probs(), p_tilde.probs())?;
    Ok(CorrectionDiag {
        scheme: p.scheme(),
        rows: p.rows(),
        cols: p.cols(),
        k,
        inv_one_minus_k,
    })
}

impl CorrectionDiag {
    /// Builds a correction from explicit per-atom values (fault injection and
    /// toy problems).
    pub fn from_k(scheme: Scheme, rows: usize, cols: usize, k: Vec<f64>) -> Result<Self> {
        // reuse mask validation for the atom layout
        Mask::new(scheme, rows, cols, vec![false; k.len()])?;
        if let Some(v) = k.iter().find(|&&v| !(0.0..1.0).contains(&v)) {
            return Err(Error::InvalidInput(format!("k must lie in [0, 1), got {v}")));
        }
        let inv_one_minus_k = k.iter().map(|&v| 1.0 / (1.0 - v)).collect();
        Ok(Self { scheme, rows, cols, k, inv_one_minus_k })
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn inv_one_minus_k(&self) -> &[f64] {
        &self.inv_one_minus_k
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Row-major `grid_rows x cols` map of `(1 - k)^-1` per entry.
    pub fn entry_correction(&self, grid_rows: usize) -> Vec<f64> {
        match self.scheme {
            Scheme::ColumnPoly => (0..grid_rows).flat_map(|_| self.inv_one_minus_k.iter().copied()).collect(),
            Scheme::Bernoulli2D => self.inv_one_minus_k.clone(),
        }
    }

    pub fn check_grid(&self, shape: crate::kspace::Shape) -> Result<()> {
        let ok = self.cols == shape.cols && (self.scheme == Scheme::ColumnPoly || self.rows == shape.rows);
        if ok {
            Ok(())
        } else {
            Err(Error::shape((self.scheme, self.rows, self.cols), (shape.rows, shape.cols)))
        }
    }
}

fn data_consistent(f_out: &KGrid, y: &KGrid, omega: &Mask, scale: Option<&[f64]>) -> Result<KGrid> {
    f_out.check_same_shape(y)?;
    let shape = y.shape();
    omega.check_grid(shape)?;
    let sampled = omega.entry_indicator(shape.rows);
    let plane = shape.plane();
    let data = f_out
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .enumerate()
        .map(|(i, (&f, &yv))| {
            let e = i % plane;
            if sampled[e] {
                yv
            } else {
                match scale {
                    Some(s) => f * s[e] + yv,
                    None => f + yv,
                }
            }
        })
        .collect();
    Ok(KGrid(ComplexGrid::from_vec(shape, data)?))
}

/// Supervised data-consistent estimate `(1 - M_Ω) f(y) + y`.
pub fn infer_supervised(f_out: &KGrid, y: &KGrid, omega: &Mask) -> Result<KGrid> {
    data_consistent(f_out, y, omega, None)
}

/// SSDU estimate `(1 - M_Ω) f(M_B y) + y`; same operator as
/// [`infer_supervised`], kept separate because `f_out` comes from the
/// sub-sampled input.
pub fn infer_ssdu(f_out: &KGrid, y: &KGrid, omega: &Mask) -> Result<KGrid> {
    data_consistent(f_out, y, omega, None)
}

/// Corrected Noisier2Noise estimate `(1 - M_Ω)(1 - K)^-1 f(ỹ) + y`.
///
/// `y_tilde` is accepted for bookkeeping: the `-K ỹ` term of the
/// uncorrected estimator vanishes off Ω because `ỹ` is zero there.
pub fn infer_noisier2noise(
    f_out: &KGrid,
    y_tilde: &KGrid,
    y: &KGrid,
    omega: &Mask,
    k: &CorrectionDiag,
) -> Result<KGrid> {
    y_tilde.check_same_shape(y)?;
    k.check_grid(y.shape())?;
    let scale = k.entry_correction(y.shape().rows);
    data_consistent(f_out, y, omega, Some(&scale))
}
