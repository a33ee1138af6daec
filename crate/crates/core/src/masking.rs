//! Sampling densities, mask realisations and the disjoint (A, B) split.
//!
//! A density assigns a sampling probability to each *atom*: a whole k-space
//! column for [`Scheme::ColumnPoly`], a single `(row, col)` location for
//! [`Scheme::Bernoulli2D`]. A sampled atom is sampled on every coil.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::Shape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Whole columns, polynomial variable density decaying from the centre.
    ColumnPoly,
    /// Independent entries, density rising with distance from the centre.
    Bernoulli2D,
}

/// Exponent of the radial profile used by [`build_bernoulli2d_density`].
pub const BERNOULLI2D_ORDER: i32 = 2;

/// Per-atom sampling probabilities `P = E[M]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingDensity {
    scheme: Scheme,
    rows: usize,
    cols: usize,
    probs: Vec<f64>,
    /// Atoms of the fully sampled centre region.
    center: Vec<bool>,
    /// Deficit below one applied to the centre; zero for a primary density.
    epsilon: f64,
    /// Unscaled shape of the density; recalibration rescales this profile.
    profile: Vec<f64>,
}

impl SamplingDensity {
    /// Density from explicit probabilities. Atoms with probability one form
    /// the centre region; the probabilities double as the profile.
    pub fn from_probs(scheme: Scheme, rows: usize, cols: usize, probs: Vec<f64>) -> Result<Self> {
        let center = probs.iter().map(|&p| p == 1.0).collect();
        let d = Self {
            scheme,
            rows,
            cols,
            profile: probs.clone(),
            probs,
            center,
            epsilon: 0.0,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        check_atom_shape(self.scheme, self.rows, self.cols)?;
        let n = atom_count(self.scheme, self.rows, self.cols);
        if self.probs.len() != n || self.center.len() != n || self.profile.len() != n {
            return Err(Error::shape(n, self.probs.len()));
        }
        if let Some(p) = self.probs.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::InvalidInput(format!(
                "sampling probabilities must lie in (0, 1], found {p}"
            )));
        }
        if !(0.0..=0.1).contains(&self.epsilon) {
            return Err(Error::InvalidInput(format!("epsilon {} outside [0, 0.1]", self.epsilon)));
        }
        Ok(())
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Atom rows: 1 for column densities.
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn center(&self) -> &[bool] {
        &self.center
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn same_layout(&self, other: &SamplingDensity) -> bool {
        self.scheme == other.scheme && self.rows == other.rows && self.cols == other.cols
    }

    /// Probability that entry `(row, col)` is sampled.
    pub fn entry_prob(&self, row: usize, col: usize) -> f64 {
        self.probs[atom_index(self.scheme, self.cols, row, col)]
    }
}

fn atom_count(scheme: Scheme, rows: usize, cols: usize) -> usize {
    match scheme {
        Scheme::ColumnPoly => cols,
        Scheme::Bernoulli2D => rows * cols,
    }
}

#[inline]
fn atom_index(scheme: Scheme, cols: usize, row: usize, col: usize) -> usize {
    match scheme {
        Scheme::ColumnPoly => col,
        Scheme::Bernoulli2D => row * cols + col,
    }
}

fn check_atom_shape(scheme: Scheme, rows: usize, cols: usize) -> Result<()> {
    if cols == 0 || rows == 0 {
        return Err(Error::InvalidInput("atom grid must be non-empty".into()));
    }
    if scheme == Scheme::ColumnPoly && rows != 1 {
        return Err(Error::InvalidInput(format!(
            "column schemes have a single atom row, got {rows}"
        )));
    }
    Ok(())
}

/// Rescales `profile` off the centre so the probabilities sum to `target`.
///
/// Off-centre values are `c + (1 - c) * profile` when the target is at
/// least the profile sum, and `s * profile` below it. Both are closed-form.
fn calibrate(
    profile: &[f64],
    center: &[bool],
    center_value: f64,
    target: f64,
    require_below_one: bool,
) -> Result<Vec<f64>> {
    let n_center = center.iter().filter(|&&c| c).count();
    let off: Vec<f64> = profile
        .iter()
        .zip(center)
        .filter(|(_, &c)| !c)
        .map(|(&b, _)| b)
        .collect();
    let n_off = off.len() as f64;
    let need = target - n_center as f64 * center_value;
    let tol = 1e-9 * profile.len() as f64;

    let (offset, scale) = if off.is_empty() {
        if need.abs() > tol {
            return Err(Error::Infeasible(format!(
                "no atoms outside the centre, cannot reach sum {target:.6}"
            )));
        }
        (0.0, 0.0)
    } else if need <= 0.0 {
        return Err(Error::Infeasible(format!(
            "required sum {target:.6} does not exceed the centre contribution {:.6}",
            n_center as f64 * center_value
        )));
    } else if need > n_off + tol {
        return Err(Error::Infeasible(format!(
            "required sum {target:.6} exceeds the number of atoms"
        )));
    } else {
        let profile_sum: f64 = off.iter().sum();
        if need >= profile_sum {
            let room = n_off - profile_sum;
            let c = if room <= tol { 1.0 } else { ((need - profile_sum) / room).min(1.0) };
            (c, 1.0 - c)
        } else {
            (0.0, need / profile_sum)
        }
    };

    let probs: Vec<f64> = profile
        .iter()
        .zip(center)
        .map(|(&b, &c)| if c { center_value } else { offset + scale * b })
        .collect();
    if let Some(p) = probs.iter().zip(center).find(|(&p, &c)| !c && p <= 0.0) {
        return Err(Error::Infeasible(format!(
            "required sum {target:.6} forces a zero probability ({}) on the polynomial floor",
            p.0
        )));
    }
    if require_below_one && probs.iter().zip(center).any(|(&p, &c)| !c && p >= 1.0) {
        return Err(Error::Infeasible(format!(
            "required sum {target:.6} saturates atoms outside the centre"
        )));
    }
    Ok(probs)
}

fn centred_range(n: usize, width: usize) -> std::ops::Range<usize> {
    let start = (n / 2).saturating_sub(width / 2);
    start..(start + width).min(n)
}

/// Column density: `center_cols` central columns fully sampled, the rest
/// following `(1 - d)^poly_order` (`d` the normalised distance from the DC
/// column), affinely rescaled so that `sum(p) = cols / target_r`.
pub fn build_column_density(
    cols: usize,
    center_cols: usize,
    poly_order: u32,
    target_r: f64,
) -> Result<SamplingDensity> {
    if cols == 0 || center_cols >= cols {
        return Err(Error::InvalidInput(format!(
            "need cols > center_cols, got cols={cols}, center_cols={center_cols}"
        )));
    }
    if !(target_r >= 1.0 && target_r.is_finite()) {
        return Err(Error::InvalidInput(format!("acceleration must be >= 1, got {target_r}")));
    }
    let half = cols as f64 / 2.0;
    let dc = cols / 2;
    let profile: Vec<f64> = (0..cols)
        .map(|j| {
            // one column of headroom keeps the outermost profile value positive
            let d = (j as f64 - dc as f64).abs() / (half + 1.0);
            (1.0 - d).max(0.0).powi(poly_order as i32)
        })
        .collect();
    let range = centred_range(cols, center_cols);
    let center: Vec<bool> = (0..cols).map(|j| range.contains(&j)).collect();
    let probs = calibrate(&profile, &center, 1.0, cols as f64 / target_r, false)?;
    Ok(SamplingDensity {
        scheme: Scheme::ColumnPoly,
        rows: 1,
        cols,
        probs,
        center,
        epsilon: 0.0,
        profile,
    })
}

/// 2D Bernoulli density: a fully sampled `center x center` square, and
/// probability growing as `rho^2` (normalised radius) outside it, rescaled so
/// that `sum(p) = rows * cols / target_r`.
pub fn build_bernoulli2d_density(
    rows: usize,
    cols: usize,
    center: usize,
    target_r: f64,
) -> Result<SamplingDensity> {
    if rows == 0 || cols == 0 || center > rows.min(cols) {
        return Err(Error::InvalidInput(format!(
            "centre square {center} does not fit a {rows}x{cols} grid"
        )));
    }
    if !(target_r >= 1.0 && target_r.is_finite()) {
        return Err(Error::InvalidInput(format!("acceleration must be >= 1, got {target_r}")));
    }
    let (r0, c0) = ((rows / 2) as f64, (cols / 2) as f64);
    let rho_max = (rows as f64 / 2.0).hypot(cols as f64 / 2.0);
    let (rr, cr) = (centred_range(rows, center), centred_range(cols, center));
    let mut profile = Vec::with_capacity(rows * cols);
    let mut in_center = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let rho = (r as f64 - r0).hypot(c as f64 - c0) / rho_max;
            profile.push(rho.powi(BERNOULLI2D_ORDER));
            in_center.push(rr.contains(&r) && cr.contains(&c));
        }
    }
    let probs = calibrate(&profile, &in_center, 1.0, (rows * cols) as f64 / target_r, false)?;
    Ok(SamplingDensity {
        scheme: Scheme::Bernoulli2D,
        rows,
        cols,
        probs,
        center: in_center,
        epsilon: 0.0,
        profile,
    })
}

/// Second-mask density `P̃` of the same family as `primary`, recalibrated
/// to acceleration `target_r_tilde`, with the primary's fully sampled atoms
/// set to `1 - epsilon` so that `1 - p̃ p` never vanishes.
pub fn secondary_density_from(
    primary: &SamplingDensity,
    target_r_tilde: f64,
    epsilon: f64,
) -> Result<SamplingDensity> {
    if !(epsilon > 0.0 && epsilon <= 0.1) {
        return Err(Error::InvalidInput(format!("epsilon must lie in (0, 0.1], got {epsilon}")));
    }
    if !(target_r_tilde >= 1.0 && target_r_tilde.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "acceleration must be >= 1, got {target_r_tilde}"
        )));
    }
    let target = primary.len() as f64 / target_r_tilde;
    let probs = calibrate(&primary.profile, &primary.center, 1.0 - epsilon, target, true)?;
    Ok(SamplingDensity {
        probs,
        epsilon,
        ..primary.clone()
    })
}

/// `atoms / sum(p)`: the reciprocal of the expected sampled fraction.
pub fn expected_acceleration(density: &SamplingDensity) -> f64 {
    density.len() as f64 / density.probs.iter().sum::<f64>()
}

/// Draws each atom independently as Bernoulli(p).
pub fn sample_mask<R: Rng + ?Sized>(density: &SamplingDensity, rng: &mut R) -> Mask {
    let atoms = density.probs.iter().map(|&p| rng.random::<f64>() < p).collect();
    Mask {
        scheme: density.scheme,
        rows: density.rows,
        cols: density.cols,
        atoms,
    }
}

/// Binary realisation of a density: the diagonal of `M_Ω` or `M_Λ`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    scheme: Scheme,
    rows: usize,
    cols: usize,
    atoms: Vec<bool>,
}

impl Mask {
    pub fn new(scheme: Scheme, rows: usize, cols: usize, atoms: Vec<bool>) -> Result<Self> {
        check_atom_shape(scheme, rows, cols)?;
        let n = atom_count(scheme, rows, cols);
        if atoms.len() != n {
            return Err(Error::shape(n, atoms.len()));
        }
        Ok(Self { scheme, rows, cols, atoms })
    }

    /// Mask sampling every atom.
    pub fn full(scheme: Scheme, rows: usize, cols: usize) -> Result<Self> {
        Self::new(scheme, rows, cols, vec![true; atom_count(scheme, rows, cols)])
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn atoms(&self) -> &[bool] {
        &self.atoms
    }

    pub fn count(&self) -> usize {
        self.atoms.iter().filter(|&&a| a).count()
    }

    #[inline]
    pub fn is_sampled(&self, row: usize, col: usize) -> bool {
        self.atoms[atom_index(self.scheme, self.cols, row, col)]
    }

    /// Checks the mask can be applied to a k-space grid of this shape.
    pub fn check_grid(&self, shape: Shape) -> Result<()> {
        let ok = self.cols == shape.cols
            && (self.scheme == Scheme::ColumnPoly || self.rows == shape.rows);
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                (self.scheme, self.rows, self.cols),
                (shape.rows, shape.cols),
            ))
        }
    }

    /// Row-major `grid_rows x cols` indicator of sampled locations, shared by
    /// all coils.
    pub fn entry_indicator(&self, grid_rows: usize) -> Vec<bool> {
        match self.scheme {
            Scheme::ColumnPoly => {
                let mut out = Vec::with_capacity(grid_rows * self.cols);
                for _ in 0..grid_rows {
                    out.extend_from_slice(&self.atoms);
                }
                out
            }
            Scheme::Bernoulli2D => self.atoms.clone(),
        }
    }

    pub(crate) fn zero_unsampled(&self, data: &mut [Complex64], shape: Shape) {
        self.zero_where(data, shape, false);
    }

    pub(crate) fn zero_sampled(&self, data: &mut [Complex64], shape: Shape) {
        self.zero_where(data, shape, true);
    }

    fn zero_where(&self, data: &mut [Complex64], shape: Shape, sampled: bool) {
        let ind = self.entry_indicator(shape.rows);
        for plane in data.chunks_exact_mut(shape.plane()) {
            for (z, &s) in plane.iter_mut().zip(&ind) {
                if s == sampled {
                    *z = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    /// The same mask expressed with one atom per `(row, col)` location.
    pub fn to_grid(&self, rows: usize) -> Result<Mask> {
        match self.scheme {
            Scheme::Bernoulli2D if self.rows == rows => Ok(self.clone()),
            Scheme::Bernoulli2D => Err(Error::shape(rows, self.rows)),
            Scheme::ColumnPoly => Mask::new(Scheme::Bernoulli2D, rows, self.cols, self.entry_indicator(rows)),
        }
    }

    fn aligned(a: &Mask, b: &Mask) -> Result<(Mask, Mask)> {
        if a.cols != b.cols {
            return Err(Error::shape((a.rows, a.cols), (b.rows, b.cols)));
        }
        match (a.scheme, b.scheme) {
            (x, y) if x == y => {
                if a.rows != b.rows {
                    return Err(Error::shape((a.rows, a.cols), (b.rows, b.cols)));
                }
                Ok((a.clone(), b.clone()))
            }
            (Scheme::ColumnPoly, _) => Ok((a.to_grid(b.rows)?, b.clone())),
            (_, Scheme::ColumnPoly) => Ok((a.clone(), b.to_grid(a.rows)?)),
            _ => unreachable!(),
        }
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask> {
        let (a, b) = Self::aligned(self, other)?;
        let atoms = a.atoms.iter().zip(&b.atoms).map(|(&x, &y)| f(x, y)).collect();
        Ok(Mask { atoms, ..a })
    }

    /// Elementwise product `M_self M_other`; column masks are promoted to the
    /// per-entry layout when combined with a 2D mask.
    pub fn product(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |x, y| x && y)
    }

    /// `(1 - M_other) M_self`.
    pub fn minus(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |x, y| x && !y)
    }
}

/// SSDU's disjoint subsets of Ω: `A = Ω \ Λ` (loss set) and `B = Ω ∩ Λ`
/// (network input set).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisjointSplit {
    pub a: Mask,
    pub b: Mask,
}

pub fn split_sets(omega: &Mask, lambda: &Mask) -> Result<DisjointSplit> {
    Ok(DisjointSplit {
        a: omega.minus(lambda)?,
        b: omega.product(lambda)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sum(d: &SamplingDensity) -> f64 {
        d.probs().iter().sum()
    }

    #[test]
    fn unit_acceleration_samples_everything() {
        let d = build_column_density(64, 10, 8, 1.0).unwrap();
        assert!(d.probs().iter().all(|&p| p == 1.0));
        let b = build_bernoulli2d_density(32, 32, 10, 1.0).unwrap();
        assert!(b.probs().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn column_density_calibrates_and_decays() {
        let d = build_column_density(64, 10, 8, 4.0).unwrap();
        assert!((sum(&d) - 16.0).abs() < 1e-6);
        assert!((expected_acceleration(&d) - 4.0).abs() < 1e-6);
        assert_eq!(d.center().iter().filter(|&&c| c).count(), 10);
        assert!(d.probs().iter().all(|&p| p > 0.0 && p <= 1.0));
        for j in 27..37 {
            assert_eq!(d.probs()[j], 1.0);
        }
        // monotone away from the centre on both sides
        for j in 37..63 {
            assert!(d.probs()[j] >= d.probs()[j + 1]);
        }
        for j in 1..27 {
            assert!(d.probs()[j] >= d.probs()[j - 1]);
        }
    }

    #[test]
    fn wide_grid_column_density() {
        let d = build_column_density(368, 10, 8, 4.0).unwrap();
        assert!((expected_acceleration(&d) - 4.0).abs() < 1e-6);
        let p = d.probs();
        assert!(p[184] == 1.0 && p[0] < 0.3 && p[0] > 0.0);
        assert!(p[190] > p[250] && p[250] > p[300]);
        let d8 = build_column_density(64, 4, 8, 8.0).unwrap();
        assert!((expected_acceleration(&d8) - 8.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_targets_are_rejected() {
        // 10 centre columns already exceed 64 / 8
        let err = build_column_density(64, 10, 8, 8.0).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err}");
        assert!(build_column_density(64, 10, 8, 0.5).is_err());
        assert!(build_column_density(10, 10, 8, 2.0).is_err());
        assert!(build_bernoulli2d_density(16, 16, 10, 4.0).is_err());
    }

    #[test]
    fn bernoulli2d_centre_and_growth() {
        let d = build_bernoulli2d_density(64, 64, 10, 4.0).unwrap();
        assert_eq!(d.probs().iter().filter(|&&p| p == 1.0).count(), 100);
        assert!((sum(&d) - 1024.0).abs() < 1e-6);
        // rises with distance outside the square
        let row = 32 * 64;
        for c in 38..63 {
            assert!(d.probs()[row + c] <= d.probs()[row + c + 1]);
        }
        assert!(d.probs()[0] > d.probs()[row + 40]);
    }

    #[test]
    fn secondary_density_marks_centre_with_epsilon() {
        let p = build_column_density(64, 10, 8, 4.0).unwrap();
        let q = secondary_density_from(&p, 2.0, 1e-5).unwrap();
        for j in 27..37 {
            assert_eq!(q.probs()[j], 1.0 - 1e-5);
        }
        assert!((expected_acceleration(&q) - 2.0).abs() < 1e-6);
        assert!(q.probs().iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(secondary_density_from(&p, 2.0, 0.0).is_err());
        assert!(secondary_density_from(&p, 2.0, 0.2).is_err());
    }

    #[test]
    fn secondary_density_near_unit_acceleration() {
        let p = build_column_density(64, 10, 8, 4.0).unwrap();
        let q = secondary_density_from(&p, 1.001, 1e-5).unwrap();
        for (j, &x) in q.probs().iter().enumerate() {
            if !q.center()[j] {
                assert!(x > 0.99 && x < 1.0);
            }
        }
        assert!(secondary_density_from(&p, 1.0, 1e-5).is_err());
    }

    #[test]
    fn expected_acceleration_half_and_third() {
        let mut probs = vec![1.0; 10];
        probs.extend(vec![1.0 / 3.0; 10]);
        let d = SamplingDensity::from_probs(Scheme::ColumnPoly, 1, 20, probs).unwrap();
        assert!((expected_acceleration(&d) - 1.5).abs() < 1e-12);
        // cross-check by Monte Carlo mean sampled fraction
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws = 20_000;
        let sampled: usize = (0..draws).map(|_| sample_mask(&d, &mut rng).count()).sum();
        let frac = sampled as f64 / (draws * 20) as f64;
        assert!((1.0 / frac - 1.5).abs() < 0.01);
    }

    #[test]
    fn calibrated_r8_is_self_consistent() {
        let d = build_column_density(368, 10, 8, 8.0).unwrap();
        assert!((expected_acceleration(&d) - 8.0).abs() < 1e-6);
    }

    #[test]
    fn full_density_gives_full_mask_and_seed_reproduces() {
        let d = build_column_density(32, 4, 8, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_mask(&d, &mut rng).count(), 32);
        let d = build_column_density(32, 4, 8, 3.0).unwrap();
        let a = sample_mask(&d, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_mask(&d, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_quarter_frequency() {
        let d = SamplingDensity::from_probs(Scheme::ColumnPoly, 1, 8, vec![0.25; 8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 100_000;
        let mut hits = [0usize; 8];
        for _ in 0..draws {
            let m = sample_mask(&d, &mut rng);
            for (h, &a) in hits.iter_mut().zip(m.atoms()) {
                *h += a as usize;
            }
        }
        let sigma = (0.25f64 * 0.75 / draws as f64).sqrt();
        for h in hits {
            assert!((h as f64 / draws as f64 - 0.25).abs() <= 3.0 * sigma);
        }
    }

    #[test]
    fn bernoulli2d_frequencies_match_probs() {
        let d = build_bernoulli2d_density(8, 8, 2, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let draws = 100_000;
        let mut hits = vec![0usize; 64];
        for _ in 0..draws {
            for (h, &a) in hits.iter_mut().zip(sample_mask(&d, &mut rng).atoms()) {
                *h += a as usize;
            }
        }
        for (h, &p) in hits.iter().zip(d.probs()) {
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            // 3.5 standard errors over 64 atoms keeps the family-wise false
            // alarm rate low
            assert!((*h as f64 / draws as f64 - p).abs() <= 3.5 * se + 1e-12, "p={p}");
        }
    }

    #[test]
    fn split_small_example() {
        let omega = Mask::new(Scheme::ColumnPoly, 1, 6, vec![false, true, true, true, false, false]).unwrap();
        let lambda = Mask::new(Scheme::ColumnPoly, 1, 6, vec![false, false, true, true, false, true]).unwrap();
        let s = split_sets(&omega, &lambda).unwrap();
        assert_eq!(s.a.atoms(), &[false, true, false, false, false, false]);
        assert_eq!(s.b.atoms(), &[false, false, true, true, false, false]);
        let empty = Mask::new(Scheme::ColumnPoly, 1, 6, vec![false; 6]).unwrap();
        let s = split_sets(&omega, &empty).unwrap();
        assert_eq!(s.a, omega);
        assert_eq!(s.b.count(), 0);
        let wrong = Mask::new(Scheme::ColumnPoly, 1, 7, vec![false; 7]).unwrap();
        assert!(split_sets(&omega, &wrong).is_err());
    }

    #[test]
    fn column_times_grid_promotes_to_entries() {
        let omega = Mask::new(Scheme::ColumnPoly, 1, 4, vec![true, false, true, true]).unwrap();
        let lambda = Mask::new(Scheme::Bernoulli2D, 2, 4, vec![true, true, false, true, false, true, true, false]).unwrap();
        let m = omega.product(&lambda).unwrap();
        assert_eq!(m.scheme(), Scheme::Bernoulli2D);
        assert_eq!(m.atoms(), &[true, false, false, true, false, false, true, false]);
        assert!(m.check_grid(Shape::new(3, 2, 4)).is_ok());
        assert!(m.check_grid(Shape::new(3, 4, 4)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let d = build_column_density(16, 2, 8, 2.0).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        let back: SamplingDensity = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        let m = sample_mask(&d, &mut ChaCha8Rng::seed_from_u64(0));
        let back: Mask = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn split_partitions_omega(a in proptest::collection::vec(any::<bool>(), 20),
                                  b in proptest::collection::vec(any::<bool>(), 20)) {
            let omega = Mask::new(Scheme::ColumnPoly, 1, 20, a.clone()).unwrap();
            let lambda = Mask::new(Scheme::ColumnPoly, 1, 20, b).unwrap();
            let s = split_sets(&omega, &lambda).unwrap();
            for j in 0..20 {
                let (ia, ib) = (s.a.atoms()[j], s.b.atoms()[j]);
                prop_assert!(!(ia && ib));
                prop_assert_eq!(ia || ib, a[j]);
            }
        }

        #[test]
        fn calibration_hits_target(cols in 24usize..200, center in 0usize..8, r in 1.0f64..4.0) {
            if let Ok(d) = build_column_density(cols, center, 8, r) {
                prop_assert!((expected_acceleration(&d) - r).abs() <= 1e-6);
                prop_assert!(d.probs().iter().all(|&p| p > 0.0 && p <= 1.0));
            }
        }

        #[test]
        fn entry_indicator_is_atom_faithful(atoms in proptest::collection::vec(any::<bool>(), 6), rows in 1usize..5) {
            let m = Mask::new(Scheme::ColumnPoly, 1, 6, atoms.clone()).unwrap();
            let ind = m.entry_indicator(rows);
            for r in 0..rows {
                for c in 0..6 {
                    prop_assert_eq!(ind[r * 6 + c], atoms[c]);
                }
            }
        }
    }
}
