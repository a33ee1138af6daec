//! Small unrolled network: each stage mixes coils with a residual k-space
//! convolution, then refines the image with a two-layer complex CNN.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use super::model::{as_complex, push_complex, ReconModel};
use crate::error::{Error, Result};
use crate::kspace::{ComplexGrid, KGrid, Shape};
use crate::kspace::fft::centred_transform;

pub const MAX_CONV_PARAMS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvSpec {
    pub stages: usize,
    pub features: usize,
    /// `(rows, cols)` of the k-space kernel.
    pub kspace_kernel: (usize, usize),
    pub image_kernel: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            stages: 2,
            features: 8,
            kspace_kernel: (3, 5),
            image_kernel: 3,
            init_scale: 0.5,
            seed: 0,
        }
    }
}

impl ConvSpec {
    /// Real parameter count for `coils` input channels.
    pub fn param_count(&self, coils: usize) -> usize {
        let (kh, kw) = self.kspace_kernel;
        let k2 = self.image_kernel * self.image_kernel;
        let f = self.features;
        2 * self.stages * (coils * coils * kh * kw + f * coils * k2 + f + coils * f * k2 + coils)
    }

    pub fn validate(&self, coils: usize) -> Result<()> {
        let (kh, kw) = self.kspace_kernel;
        if self.stages == 0 || self.features == 0 || coils == 0 {
            return Err(Error::InvalidInput("conv model needs stages, features and coils >= 1".into()));
        }
        if kh % 2 == 0 || kw % 2 == 0 || self.image_kernel % 2 == 0 {
            return Err(Error::InvalidInput("kernel sizes must be odd".into()));
        }
        let n = self.param_count(coils);
        if n > MAX_CONV_PARAMS {
            return Err(Error::InvalidInput(format!(
                "conv model has {n} parameters, limit is {MAX_CONV_PARAMS}"
            )));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidInput("init_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Zero-padded "same" cross-correlation over `cin` planes of `rows x cols`.
#[derive(Clone, Copy, Debug)]
struct Conv {
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    rows: usize,
    cols: usize,
}

impl Conv {
    fn weights(&self) -> usize {
        self.cout * self.cin * self.kh * self.kw
    }

    /// For kernel tap `d` of size `k` on an axis of length `n`: output range
    /// and input offset.
    fn span(d: usize, k: usize, n: usize) -> (usize, usize, isize) {
        let s = d as isize - (k / 2) as isize;
        let lo = (-s).max(0) as usize;
        let hi = (n as isize - s).min(n as isize).max(0) as usize;
        (lo, hi.max(lo), s)
    }

    fn forward(&self, input: &[Complex64], w: &[Complex64], out: &mut [Complex64]) {
        let plane = self.rows * self.cols;
        for co in 0..self.cout {
            let o = &mut out[co * plane..(co + 1) * plane];
            for ci in 0..self.cin {
                let inp = &input[ci * plane..(ci + 1) * plane];
                for dy in 0..self.kh {
                    let (y0, y1, sy) = Self::span(dy, self.kh, self.rows);
                    for dx in 0..self.kw {
                        let wv = w[((co * self.cin + ci) * self.kh + dy) * self.kw + dx];
                        let (x0, x1, sx) = Self::span(dx, self.kw, self.cols);
                        for y in y0..y1 {
                            let iy = (y as isize + sy) as usize;
                            let orow = &mut o[y * self.cols + x0..y * self.cols + x1];
                            let start = (iy * self.cols) as isize + x0 as isize + sx;
                            let irow = &inp[start as usize..start as usize + (x1 - x0)];
                            for (a, b) in orow.iter_mut().zip(irow) {
                                *a += wv * b;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates input and weight gradients.
    fn backward(
        &self,
        input: &[Complex64],
        w: &[Complex64],
        g_out: &[Complex64],
        g_in: &mut [Complex64],
        g_w: &mut [Complex64],
    ) {
        let plane = self.rows * self.cols;
        for co in 0..self.cout {
            let go = &g_out[co * plane..(co + 1) * plane];
            for ci in 0..self.cin {
                let inp = &input[ci * plane..(ci + 1) * plane];
                let gi = &mut g_in[ci * plane..(ci + 1) * plane];
                for dy in 0..self.kh {
                    let (y0, y1, sy) = Self::span(dy, self.kh, self.rows);
                    for dx in 0..self.kw {
                        let wi = ((co * self.cin + ci) * self.kh + dy) * self.kw + dx;
                        let wc = w[wi].conj();
                        let (x0, x1, sx) = Self::span(dx, self.kw, self.cols);
                        let mut acc = Complex64::new(0.0, 0.0);
                        for y in y0..y1 {
                            let iy = (y as isize + sy) as usize;
                            let grow = &go[y * self.cols + x0..y * self.cols + x1];
                            let start = ((iy * self.cols) as isize + x0 as isize + sx) as usize;
                            let irow = &inp[start..start + (x1 - x0)];
                            let girow = &mut gi[start..start + (x1 - x0)];
                            for ((g, i), gi) in grow.iter().zip(irow).zip(girow.iter_mut()) {
                                acc += g * i.conj();
                                *gi += wc * g;
                            }
                        }
                        g_w[wi] += acc;
                    }
                }
            }
        }
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

#[derive(Clone, Copy, Debug)]
struct StageLayout {
    kspace: Conv,
    expand: Conv,
    reduce: Conv,
}

struct StageParams {
    wk: Vec<Complex64>,
    w1: Vec<Complex64>,
    b1: Vec<Complex64>,
    w2: Vec<Complex64>,
    b2: Vec<Complex64>,
}

struct StageCache {
    x: Vec<Complex64>,
    u: Vec<Complex64>,
    h: Vec<Complex64>,
    a: Vec<Complex64>,
}

#[derive(Clone, Debug)]
pub struct ConvModel {
    shape: Shape,
    spec: ConvSpec,
    layout: StageLayout,
    params: Vec<f64>,
}

impl ConvModel {
    pub fn new(shape: Shape, spec: ConvSpec) -> Result<Self> {
        shape.check_image_scale()?;
        spec.validate(shape.coils)?;
        let (c, f, k) = (shape.coils, spec.features, spec.image_kernel);
        let (rows, cols) = (shape.rows, shape.cols);
        let layout = StageLayout {
            kspace: Conv { cin: c, cout: c, kh: spec.kspace_kernel.0, kw: spec.kspace_kernel.1, rows, cols },
            expand: Conv { cin: c, cout: f, kh: k, kw: k, rows, cols },
            reduce: Conv { cin: f, cout: c, kh: k, kw: k, rows, cols },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = Vec::with_capacity(spec.param_count(c));
        let mut fill = |n: usize, scale: f64, params: &mut Vec<f64>| {
            for _ in 0..2 * n {
                params.push(if scale == 0.0 { 0.0 } else { rng.random_range(-scale..scale) });
            }
        };
        for _ in 0..spec.stages {
            let l = &layout;
            fill(l.kspace.weights(), 0.01 * spec.init_scale, &mut params);
            fill(l.expand.weights(), spec.init_scale / ((c * k * k) as f64).sqrt(), &mut params);
            fill(f, 0.0, &mut params);
            fill(l.reduce.weights(), 0.1 * spec.init_scale / ((f * k * k) as f64).sqrt(), &mut params);
            fill(c, 0.0, &mut params);
        }
        debug_assert_eq!(params.len(), spec.param_count(c));
        Ok(Self { shape, spec, layout, params })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    fn stage_len(&self) -> usize {
        let l = &self.layout;
        2 * (l.kspace.weights() + l.expand.weights() + self.spec.features + l.reduce.weights() + self.shape.coils)
    }

    fn stage_params(&self, s: usize) -> StageParams {
        let l = &self.layout;
        let p = &self.params[s * self.stage_len()..(s + 1) * self.stage_len()];
        let mut off = 0;
        let mut take = |n: usize| {
            let v = as_complex(&p[off..off + 2 * n]);
            off += 2 * n;
            v
        };
        StageParams {
            wk: take(l.kspace.weights()),
            w1: take(l.expand.weights()),
            b1: take(self.spec.features),
            w2: take(l.reduce.weights()),
            b2: take(self.shape.coils),
        }
    }

    fn transform(&self, data: Vec<Complex64>, coils: usize, dir: FftDirection) -> Vec<Complex64> {
        let shape = Shape::new(coils, self.shape.rows, self.shape.cols);
        let grid = ComplexGrid::from_vec(shape, data).expect("finite intermediate");
        centred_transform(&grid, dir).into_vec()
    }

    fn stage_forward(&self, p: &StageParams, x: Vec<Complex64>) -> (Vec<Complex64>, StageCache) {
        let l = &self.layout;
        let plane = self.shape.plane();
        let mut xk = x.clone();
        l.kspace.forward(&x, &p.wk, &mut xk);
        let u = self.transform(xk, self.shape.coils, FftDirection::Inverse);
        let mut h = vec![Complex64::new(0.0, 0.0); self.spec.features * plane];
        for (ch, b) in h.chunks_exact_mut(plane).zip(&p.b1) {
            ch.iter_mut().for_each(|v| *v = *b);
        }
        l.expand.forward(&u, &p.w1, &mut h);
        let a: Vec<Complex64> = h.iter().map(|z| Complex64::new(silu(z.re), silu(z.im))).collect();
        let mut v = u.clone();
        for (ch, b) in v.chunks_exact_mut(plane).zip(&p.b2) {
            ch.iter_mut().for_each(|z| *z += b);
        }
        l.reduce.forward(&a, &p.w2, &mut v);
        let out = self.transform(v, self.shape.coils, FftDirection::Forward);
        (out, StageCache { x, u, h, a })
    }

    fn check(&self, k: &KGrid) -> Result<()> {
        if k.shape() != self.shape {
            return Err(Error::shape(self.shape, k.shape()));
        }
        Ok(())
    }
}

impl ReconModel for ConvModel {
    fn name(&self) -> &'static str {
        "conv"
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn raw_forward(&self, input: &KGrid) -> Result<KGrid> {
        self.check(input)?;
        let mut x = input.as_slice().to_vec();
        for s in 0..self.spec.stages {
            x = self.stage_forward(&self.stage_params(s), x).0;
        }
        let out = KGrid::from_vec(self.shape, x);
        out.map_err(|_| Error::NonFinite("conv model output"))
    }

    fn raw_backward(&self, input: &KGrid, grad_out: &KGrid) -> Result<Vec<f64>> {
        self.check(input)?;
        self.check(grad_out)?;
        let l = &self.layout;
        let plane = self.shape.plane();
        let zero = Complex64::new(0.0, 0.0);
        let params: Vec<StageParams> = (0..self.spec.stages).map(|s| self.stage_params(s)).collect();
        let mut caches = Vec::with_capacity(self.spec.stages);
        let mut x = input.as_slice().to_vec();
        for p in &params {
            let (next, cache) = self.stage_forward(p, x);
            caches.push(cache);
            x = next;
        }

        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(self.spec.stages);
        let mut g_x = grad_out.as_slice().to_vec();
        for (p, cache) in params.iter().zip(&caches).rev() {
            let g_v = self.transform(g_x, self.shape.coils, FftDirection::Inverse);
            let g_b2: Vec<Complex64> = g_v.chunks_exact(plane).map(|ch| ch.iter().sum()).collect();
            let mut g_a = vec![zero; cache.a.len()];
            let mut g_w2 = vec![zero; p.w2.len()];
            l.reduce.backward(&cache.a, &p.w2, &g_v, &mut g_a, &mut g_w2);
            let g_h: Vec<Complex64> = g_a
                .iter()
                .zip(&cache.h)
                .map(|(g, h)| Complex64::new(g.re * silu_grad(h.re), g.im * silu_grad(h.im)))
                .collect();
            let g_b1: Vec<Complex64> = g_h.chunks_exact(plane).map(|ch| ch.iter().sum()).collect();
            let mut g_u = g_v;
            let mut g_w1 = vec![zero; p.w1.len()];
            l.expand.backward(&cache.u, &p.w1, &g_h, &mut g_u, &mut g_w1);
            let g_xk = self.transform(g_u, self.shape.coils, FftDirection::Forward);
            let mut g_in = g_xk.clone();
            let mut g_wk = vec![zero; p.wk.len()];
            l.kspace.backward(&cache.x, &p.wk, &g_xk, &mut g_in, &mut g_wk);

            let mut flat = Vec::with_capacity(self.stage_len());
            for part in [&g_wk, &g_w1, &g_b1, &g_w2, &g_b2] {
                push_complex(&mut flat, part);
            }
            grads.push(flat);
            g_x = g_in;
        }
        Ok(grads.into_iter().rev().flatten().collect())
    }
}
