//! Weighted ℓ2 losses `‖W (f - y)‖²` with diagonal weightings, the
//! supervised loss and the split of the loss over the held-out and
//! unsampled parts of k-space.

use serde::{Deserialize, Serialize};

use crate::correction::CorrectionDiag;
use crate::error::{Error, Result};
use crate::kspace::{KGrid, Shape};
use crate::masking::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// `W = 1` (unweighted Noisier2Noise, supervised).
    Identity,
    /// `W = (1 - K)^-1` (weighted Noisier2Noise).
    InvOneMinusK,
    /// `W = (1 - M̃) M`: SSDU's loss on `A = Ω \ Λ`.
    SsduResidual,
    /// `W = M`.
    MOnly,
}

impl WeightKind {
    pub fn is_full_rank(self) -> bool {
        matches!(self, WeightKind::Identity | WeightKind::InvOneMinusK)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightSpec {
    pub kind: WeightKind,
    pub k: Option<CorrectionDiag>,
}

impl WeightSpec {
    pub fn identity() -> Self {
        Self { kind: WeightKind::Identity, k: None }
    }

    pub fn inv_one_minus_k(k: CorrectionDiag) -> Self {
        Self { kind: WeightKind::InvOneMinusK, k: Some(k) }
    }

    pub fn ssdu_residual() -> Self {
        Self { kind: WeightKind::SsduResidual, k: None }
    }

    pub fn m_only() -> Self {
        Self { kind: WeightKind::MOnly, k: None }
    }

    /// Diagonal of `W` over the `rows x cols` plane (shared by coils).
    pub fn entry_weights(&self, shape: Shape, omega: &Mask, lambda: &Mask) -> Result<Vec<f64>> {
        let plane = shape.plane();
        Ok(match self.kind {
            WeightKind::Identity => vec![1.0; plane],
            WeightKind::InvOneMinusK => {
                let k = self.k.as_ref().ok_or_else(|| {
                    Error::InvalidInput("InvOneMinusK weighting needs a correction diagonal".into())
                })?;
                k.check_grid(shape)?;
                k.entry_correction(shape.rows)
            }
            WeightKind::SsduResidual => {
                omega.check_grid(shape)?;
                lambda.check_grid(shape)?;
                indicator(&omega.minus(lambda)?, shape.rows)
            }
            WeightKind::MOnly => {
                omega.check_grid(shape)?;
                indicator(omega, shape.rows)
            }
        })
    }
}

fn indicator(m: &Mask, rows: usize) -> Vec<f64> {
    m.entry_indicator(rows).into_iter().map(|s| if s { 1.0 } else { 0.0 }).collect()
}

/// `Σ_e w_e² |f_e - y_e|²` with `w` broadcast over coils.
pub(crate) fn weighted_sq_norm(f_out: &KGrid, y: &KGrid, weights: &[f64]) -> f64 {
    let plane = f_out.shape().plane();
    f_out
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .enumerate()
        .map(|(i, (f, yv))| {
            let w = weights[i % plane];
            if w == 0.0 {
                0.0
            } else {
                w * w * (f - yv).norm_sqr()
            }
        })
        .sum()
}

/// `‖W (f_out - y)‖²`.
pub fn weighted_l2(w: &WeightSpec, f_out: &KGrid, y: &KGrid, omega: &Mask, lambda: &Mask) -> Result<f64> {
    f_out.check_same_shape(y)?;
    let weights = w.entry_weights(y.shape(), omega, lambda)?;
    Ok(weighted_sq_norm(f_out, y, &weights))
}

/// `‖f_out - y0‖²`.
pub fn supervised_l2(f_out: &KGrid, y0: &KGrid) -> Result<f64> {
    f_out.check_same_shape(y0)?;
    Ok(f_out
        .as_slice()
        .iter()
        .zip(y0.as_slice())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum())
}

/// The weighted loss of a data-consistent output split over disjoint index
/// sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossDecomposition {
    /// `‖W (1 - M̃) M (f - y)‖²`: the held-out set `Ω \ Λ`.
    pub term_b: f64,
    /// `‖W (1 - M) f‖²`: the complement of Ω.
    pub term_c: f64,
}

impl LossDecomposition {
    pub fn total(&self) -> f64 {
        self.term_b + self.term_c
    }
}

/// Splits `weighted_l2` for an `f_out` that already agrees with `y` on
/// `Ω ∩ Λ`, so that set contributes nothing.
pub fn decompose_loss(
    w: &WeightSpec,
    f_out: &KGrid,
    y: &KGrid,
    omega: &Mask,
    lambda: &Mask,
) -> Result<LossDecomposition> {
    f_out.check_same_shape(y)?;
    let shape = y.shape();
    let weights = w.entry_weights(shape, omega, lambda)?;
    let rows = shape.rows;
    let both = omega.product(lambda)?.entry_indicator(rows);
    let held_out = omega.minus(lambda)?.entry_indicator(rows);
    let in_omega = omega.entry_indicator(rows);
    let plane = shape.plane();

    let mut dec = LossDecomposition { term_b: 0.0, term_c: 0.0 };
    for (i, (f, yv)) in f_out.as_slice().iter().zip(y.as_slice()).enumerate() {
        let e = i % plane;
        if both[e] {
            if f != yv {
                return Err(Error::Precondition(
                    "f_out is not data consistent with ỹ on Ω ∩ Λ".into(),
                ));
            }
            continue;
        }
        let wsq = weights[e] * weights[e];
        if held_out[e] {
            dec.term_b += wsq * (f - yv).norm_sqr();
        } else if !in_omega[e] {
            dec.term_c += wsq * f.norm_sqr();
        }
    }
    Ok(dec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correction::compute_k;
    use crate::kspace::dc_wrap;
    use crate::masking::{build_column_density, sample_mask, secondary_density_from, Scheme};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(shape: Shape, rng: &mut ChaCha8Rng) -> KGrid {
        let d = (0..shape.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        KGrid::from_vec(shape, d).unwrap()
    }

    struct Case {
        y: KGrid,
        omega: Mask,
        lambda: Mask,
        f: KGrid,
        k: CorrectionDiag,
    }

    fn case(rng: &mut ChaCha8Rng) -> Case {
        let shape = Shape::new(2, 6, 6);
        let p = build_column_density(6, 2, 8, 1.6).unwrap();
        let q = secondary_density_from(&p, 1.6, 1e-3).unwrap();
        let omega = sample_mask(&p, rng);
        let lambda = if rng.random_bool(0.5) {
            sample_mask(&q, rng)
        } else {
            let atoms = (0..36).map(|_| rng.random_bool(0.6)).collect();
            Mask::new(Scheme::Bernoulli2D, 6, 6, atoms).unwrap()
        };
        let y = random_grid(shape, rng).masked(&omega).unwrap();
        let f = random_grid(shape, rng);
        Case { y, omega, lambda, f, k: compute_k(&p, &q).unwrap() }
    }

    fn all_kinds(k: &CorrectionDiag) -> Vec<WeightSpec> {
        vec![
            WeightSpec::identity(),
            WeightSpec::inv_one_minus_k(k.clone()),
            WeightSpec::ssdu_residual(),
            WeightSpec::m_only(),
        ]
    }

    #[test]
    fn zero_at_target_for_every_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = case(&mut rng);
        for w in all_kinds(&c.k) {
            assert_eq!(weighted_l2(&w, &c.y, &c.y, &c.omega, &c.lambda).unwrap(), 0.0);
            assert!(weighted_l2(&w, &c.f, &c.y, &c.omega, &c.lambda).unwrap() >= 0.0);
        }
    }

    #[test]
    fn pythagoras() {
        let shape = Shape::new(1, 4, 4);
        let mut f = KGrid::zeros(shape);
        f.as_mut_slice()[5] = Complex64::new(3.0, 4.0);
        let m = Mask::full(Scheme::ColumnPoly, 1, 4).unwrap();
        let l = weighted_l2(&WeightSpec::identity(), &f, &KGrid::zeros(shape), &m, &m).unwrap();
        assert_eq!(l, 25.0);
    }

    #[test]
    fn missing_correction_is_rejected() {
        let shape = Shape::new(1, 4, 4);
        let m = Mask::full(Scheme::ColumnPoly, 1, 4).unwrap();
        let w = WeightSpec { kind: WeightKind::InvOneMinusK, k: None };
        let z = KGrid::zeros(shape);
        assert!(matches!(weighted_l2(&w, &z, &z, &m, &m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn ssdu_weighting_equals_disjoint_set_loss() {
        // ‖M_A f(M_B y) - M_A y‖² built directly from the (A, B) sets
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let c = case(&mut rng);
            let split = crate::masking::split_sets(&c.omega, &c.lambda).unwrap();
            let shape = c.y.shape();
            let mut direct = 0.0;
            for ch in 0..shape.coils {
                for r in 0..shape.rows {
                    for col in 0..shape.cols {
                        if split.a.is_sampled(r, col) {
                            direct += (c.f.get(ch, r, col) - c.y.get(ch, r, col)).norm_sqr();
                        }
                    }
                }
            }
            let l = weighted_l2(&WeightSpec::ssdu_residual(), &c.f, &c.y, &c.omega, &c.lambda).unwrap();
            assert!((l - direct).abs() <= 1e-12 * direct.max(1.0));
        }
    }

    #[test]
    fn supervised_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = Shape::new(2, 4, 5);
        let y0 = random_grid(shape, &mut rng);
        assert_eq!(supervised_l2(&y0, &y0).unwrap(), 0.0);
        let mut f = y0.clone();
        f.as_mut_slice()[0] += Complex64::new(1.0, 0.0);
        assert!((supervised_l2(&f, &y0).unwrap() - 1.0).abs() < 1e-15);
        let f = random_grid(shape, &mut rng);
        let mut naive = 0.0;
        for i in 0..shape.len() {
            let d = f.as_slice()[i] - y0.as_slice()[i];
            naive += d.re * d.re + d.im * d.im;
        }
        assert!((supervised_l2(&f, &y0).unwrap() - naive).abs() < 1e-12);
        assert!(supervised_l2(&f, &KGrid::zeros(Shape::new(1, 4, 5))).is_err());
    }

    #[test]
    fn decomposition_sums_to_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let c = case(&mut rng);
            let yt = c.y.masked(&c.lambda).unwrap();
            let comb = c.omega.product(&c.lambda).unwrap();
            let f = dc_wrap(&c.f, &yt, &comb).unwrap();
            for w in all_kinds(&c.k) {
                let d = decompose_loss(&w, &f, &c.y, &c.omega, &c.lambda).unwrap();
                let l = weighted_l2(&w, &f, &c.y, &c.omega, &c.lambda).unwrap();
                assert!((d.total() - l).abs() <= 1e-12 * l.max(f64::MIN_POSITIVE));
                if matches!(w.kind, WeightKind::SsduResidual | WeightKind::MOnly) {
                    assert_eq!(d.term_c, 0.0);
                }
            }
            // W = M and W = (1 - M̃) M agree on data-consistent outputs
            let a = weighted_l2(&WeightSpec::m_only(), &f, &c.y, &c.omega, &c.lambda).unwrap();
            let b = weighted_l2(&WeightSpec::ssdu_residual(), &f, &c.y, &c.omega, &c.lambda).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn decomposition_of_zero_filled_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = case(&mut rng);
        let d = decompose_loss(&WeightSpec::identity(), &c.y, &c.y, &c.omega, &c.lambda).unwrap();
        assert_eq!(d.term_b, 0.0);
        assert_eq!(d.term_c, 0.0);
    }

    #[test]
    fn decomposition_rejects_inconsistent_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut c = case(&mut rng);
        c.lambda = Mask::full(c.lambda.scheme(), c.lambda.rows(), c.lambda.cols()).unwrap();
        let err = decompose_loss(&WeightSpec::identity(), &c.f, &c.y, &c.omega, &c.lambda);
        if c.omega.count() > 0 {
            assert!(matches!(err, Err(Error::Precondition(_))));
        }
    }

    #[test]
    fn weighted_equals_identity_on_prescaled_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = case(&mut rng);
        let w = WeightSpec::inv_one_minus_k(c.k.clone());
        let scale = c.k.entry_correction(c.y.shape().rows);
        let plane = c.y.shape().plane();
        let scaled: Vec<_> = c
            .f
            .as_slice()
            .iter()
            .zip(c.y.as_slice())
            .enumerate()
            .map(|(i, (f, y))| (f - y) * scale[i % plane])
            .collect();
        let scaled = KGrid::from_vec(c.y.shape(), scaled).unwrap();
        let zero = KGrid::zeros(c.y.shape());
        let a = weighted_l2(&w, &c.f, &c.y, &c.omega, &c.lambda).unwrap();
        let b = weighted_l2(&WeightSpec::identity(), &scaled, &zero, &c.omega, &c.lambda).unwrap();
        assert!((a - b).abs() <= 1e-12 * a);
    }
}
