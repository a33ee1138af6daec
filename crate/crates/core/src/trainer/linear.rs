//! Image-domain per-pixel complex gain plus bias.

use num_complex::Complex64;
use rand::Rng;

use super::model::{as_complex, push_complex, ReconModel};
use crate::error::{Error, Result};
use crate::kspace::{dft2, idft2, ImageGrid, KGrid, Shape};

/// `g(x) = F (a ⊙ F⁻¹ x + b)` with one complex gain and bias per coil pixel.
#[derive(Clone, Debug)]
pub struct LinearModel {
    shape: Shape,
    params: Vec<f64>,
}

impl LinearModel {
    /// Identity gain, zero bias.
    pub fn new(shape: Shape) -> Self {
        let n = shape.len();
        let mut params = vec![0.0; 4 * n];
        for i in 0..n {
            params[2 * i] = 1.0;
        }
        Self { shape, params }
    }

    pub fn random<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Self {
        let mut m = Self::new(shape);
        m.params.iter_mut().for_each(|p| *p += rng.random_range(-0.5..0.5));
        m
    }

    fn split(&self) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = 2 * self.shape.len();
        (as_complex(&self.params[..n]), as_complex(&self.params[n..]))
    }

    fn check(&self, k: &KGrid) -> Result<()> {
        if k.shape() != self.shape {
            return Err(Error::shape(self.shape, k.shape()));
        }
        Ok(())
    }
}

impl ReconModel for LinearModel {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn raw_forward(&self, input: &KGrid) -> Result<KGrid> {
        self.check(input)?;
        let (a, b) = self.split();
        let u = idft2(input);
        let z = u.as_slice().iter().zip(&a).zip(&b).map(|((u, a), b)| a * u + b).collect();
        Ok(dft2(&ImageGrid::from_vec(self.shape, z)?))
    }

    fn raw_backward(&self, input: &KGrid, grad_out: &KGrid) -> Result<Vec<f64>> {
        self.check(input)?;
        self.check(grad_out)?;
        let u = idft2(input);
        let g_z = idft2(grad_out);
        let g_a: Vec<Complex64> = g_z.as_slice().iter().zip(u.as_slice()).map(|(g, u)| g * u.conj()).collect();
        let mut out = Vec::with_capacity(self.params.len());
        push_complex(&mut out, &g_a);
        push_complex(&mut out, g_z.as_slice());
        Ok(out)
    }
}
