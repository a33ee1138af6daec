//! The reconstructor contract shared by every model.

use num_complex::Complex64;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::kspace::{dc_wrap, KGrid, Shape};
use crate::masking::Mask;

/// A network `g_θ` wrapped as `f_θ(ỹ) = (1 - M) g_θ(ỹ) + ỹ`.
///
/// Gradients of a real loss with respect to a complex value `z` use the
/// convention `∂L/∂Re z + i ∂L/∂Im z`.
pub trait ReconModel: Send + Sync {
    fn name(&self) -> &'static str;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn num_params(&self) -> usize {
        self.params().len()
    }

    /// The unwrapped network `g_θ`.
    fn raw_forward(&self, input: &KGrid) -> Result<KGrid>;

    /// Parameter gradient given the gradient with respect to `g_θ(input)`.
    fn raw_backward(&self, input: &KGrid, grad_out: &KGrid) -> Result<Vec<f64>>;

    /// Adds `scale` times the parameter gradient into `acc`.
    fn raw_backward_into(&self, input: &KGrid, grad_out: &KGrid, scale: f64, acc: &mut [f64]) -> Result<()> {
        let g = self.raw_backward(input, grad_out)?;
        if g.len() != acc.len() {
            return Err(Error::shape(acc.len(), g.len()));
        }
        acc.iter_mut().zip(g).for_each(|(a, v)| *a += scale * v);
        Ok(())
    }

    /// Data-consistent output; sampled entries are exactly `ỹ`.
    fn forward(&self, y_tilde: &KGrid, combined_mask: &Mask) -> Result<KGrid> {
        dc_wrap(&self.raw_forward(y_tilde)?, y_tilde, combined_mask)
    }

    /// Parameter gradient given the gradient with respect to `forward`.
    fn backward(&self, y_tilde: &KGrid, combined_mask: &Mask, grad_out: &KGrid) -> Result<Vec<f64>> {
        let shape = y_tilde.shape();
        grad_out.check_same_shape(y_tilde)?;
        combined_mask.check_grid(shape)?;
        let mut g = grad_out.clone();
        // the wrapper passes g_θ through only where ỹ is not sampled
        combined_mask.zero_sampled(g.as_mut_slice(), shape);
        self.raw_backward(y_tilde, &g)
    }

    /// [`ReconModel::backward`] accumulated into `acc` with a scale factor.
    fn backward_into(
        &self,
        y_tilde: &KGrid,
        combined_mask: &Mask,
        grad_out: &KGrid,
        scale: f64,
        acc: &mut [f64],
    ) -> Result<()> {
        let shape = y_tilde.shape();
        grad_out.check_same_shape(y_tilde)?;
        combined_mask.check_grid(shape)?;
        let mut g = grad_out.clone();
        combined_mask.zero_sampled(g.as_mut_slice(), shape);
        self.raw_backward_into(y_tilde, &g, scale, acc)
    }
}

pub(crate) fn as_complex(p: &[f64]) -> Vec<Complex64> {
    p.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

pub(crate) fn push_complex(out: &mut Vec<f64>, z: &[Complex64]) {
    for v in z {
        out.push(v.re);
        out.push(v.im);
    }
}

pub(crate) fn random_grid<R: Rng + ?Sized>(rng: &mut R, shape: Shape, scale: f64) -> KGrid {
    let data = (0..shape.len())
        .map(|_| Complex64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
        .collect();
    KGrid::from_vec(shape, data).expect("finite random grid")
}

/// Compares `backward` against central finite differences of
/// `L = Σ |f - t|²` on `probe_count` random parameter coordinates, for a
/// random target `t`. Returns the largest relative deviation; parameters are
/// restored before returning.
pub fn grad_check(
    model: &mut dyn ReconModel,
    input: &KGrid,
    mask: &Mask,
    probe_count: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if model.num_params() == 0 {
        return Err(Error::InvalidInput("model has no parameters".into()));
    }
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("model parameters"));
    }
    let shape = input.shape();
    let target = random_grid(rng, shape, 1.0);
    let loss = |m: &dyn ReconModel| -> Result<f64> {
        let f = m.forward(input, mask)?;
        Ok(f.as_slice().iter().zip(target.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum())
    };
    let f = model.forward(input, mask)?;
    let g_f: Vec<Complex64> = f.as_slice().iter().zip(target.as_slice()).map(|(a, b)| 2.0 * (a - b)).collect();
    let analytic = model.backward(input, mask, &KGrid::from_vec(shape, g_f)?)?;

    let mut worst: f64 = 0.0;
    for _ in 0..probe_count {
        let i = rng.random_range(0..model.num_params());
        let orig = model.params()[i];
        let h = 1e-3 * orig.abs().max(1.0);
        model.params_mut()[i] = orig + h;
        let up = loss(model)?;
        model.params_mut()[i] = orig - h;
        let down = loss(model)?;
        model.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        let dev = if scale < 1e-7 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
        worst = worst.max(dev);
    }
    Ok(worst)
}
