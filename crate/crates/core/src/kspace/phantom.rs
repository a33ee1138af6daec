use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dft2, ImageGrid, KGrid, Shape};
use crate::error::{Error, Result};

/// Parameters of the random-ellipse multi-coil phantom generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub rows: usize,
    pub cols: usize,
    pub num_coils: usize,
    pub num_ellipses: usize,
    /// Additive intensity of each inner ellipse.
    pub intensity: (f64, f64),
    /// Semi-axis lengths of inner ellipses, in units of the half field of view.
    pub semi_axis: (f64, f64),
    /// Spatial scale of the phase map; larger is smoother.
    pub phase_smoothness: f64,
    /// Peak phase excursion in radians.
    pub phase_amplitude: f64,
    /// Width of the Gaussian coil profiles, in units of the half field of view.
    pub coil_width: f64,
    pub rng_seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            num_coils: 4,
            num_ellipses: 6,
            intensity: (0.1, 0.6),
            semi_axis: (0.06, 0.35),
            phase_smoothness: 1.5,
            phase_amplitude: 0.8,
            coil_width: 0.9,
            rng_seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn shape(&self) -> Shape {
        Shape::new(self.num_coils, self.rows, self.cols)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape().check_image_scale()?;
        let bad = |what: &str| Err(Error::InvalidInput(format!("phantom: {what}")));
        if !(self.intensity.0 <= self.intensity.1) || !self.intensity.0.is_finite() {
            return bad("intensity range must be ordered and finite");
        }
        if !(0.0 < self.semi_axis.0 && self.semi_axis.0 <= self.semi_axis.1 && self.semi_axis.1 < 0.9) {
            return bad("semi-axis range must satisfy 0 < lo <= hi < 0.9");
        }
        if !(self.phase_smoothness > 0.0 && self.phase_smoothness.is_finite()) {
            return bad("phase_smoothness must be positive");
        }
        if !self.phase_amplitude.is_finite() {
            return bad("phase_amplitude must be finite");
        }
        if !(self.coil_width > 0.0 && self.coil_width.is_finite()) {
            return bad("coil_width must be positive");
        }
        Ok(())
    }
}

/// A generated phantom with its ingredients kept for inspection.
#[derive(Clone, Debug)]
pub struct Phantom {
    /// Fully sampled multi-coil k-space.
    pub kspace: KGrid,
    /// Shared complex object, `rows x cols`.
    pub object: Vec<Complex64>,
    /// Coil sensitivities, `[coil, row, col]`, unit sum of squares per pixel.
    pub sensitivities: Vec<Complex64>,
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.a;
        let v = (-s * dx + c * dy) / self.b;
        u * u + v * v <= 1.0
    }
}

impl Phantom {
    pub fn generate(spec: &PhantomSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let (rows, cols) = (spec.rows, spec.cols);
        let coord = |i: usize, n: usize| (i as f64 - (n / 2) as f64) / (n as f64 / 2.0);

        // outer "head" plus random interior structure
        let mut ellipses = vec![Ellipse {
            cx: rng.random_range(-0.05..0.05),
            cy: rng.random_range(-0.05..0.05),
            a: rng.random_range(0.62..0.78),
            b: rng.random_range(0.70..0.85),
            angle: rng.random_range(-0.3..0.3),
            value: 1.0,
        }];
        while ellipses.len() < spec.num_ellipses + 1 {
            let e = Ellipse {
                cx: rng.random_range(-0.45..0.45),
                cy: rng.random_range(-0.5..0.5),
                a: rng.random_range(spec.semi_axis.0..=spec.semi_axis.1),
                b: rng.random_range(spec.semi_axis.0..=spec.semi_axis.1),
                angle: rng.random_range(0.0..PI),
                value: rng.random_range(spec.intensity.0..=spec.intensity.1),
            };
            // degenerate or out-of-bounds draws are resampled
            let area = PI * e.a * e.b;
            let reach = e.cx.hypot(e.cy) + e.a.max(e.b);
            if area > 1e-6 && reach < 0.95 {
                ellipses.push(e);
            }
        }

        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(-1.0..1.0) / spec.phase_smoothness,
                    rng.random_range(-1.0..1.0) / spec.phase_smoothness,
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.3..1.0),
                )
            })
            .collect();
        let wave_norm: f64 = waves.iter().map(|w| w.3).sum();

        let mut object = vec![Complex64::new(0.0, 0.0); rows * cols];
        for r in 0..rows {
            let y = coord(r, rows);
            for c in 0..cols {
                let x = coord(c, cols);
                let mag: f64 = ellipses
                    .iter()
                    .filter(|e| e.contains(x, y))
                    .map(|e| e.value)
                    .sum();
                if mag == 0.0 {
                    continue;
                }
                let phase = spec.phase_amplitude / wave_norm
                    * waves
                        .iter()
                        .map(|&(u, v, p, amp)| amp * (PI * (u * x + v * y) + p).sin())
                        .sum::<f64>();
                object[r * cols + c] = Complex64::from_polar(mag, phase);
            }
        }

        let coil_offset = rng.random_range(0.0..2.0 * PI);
        let coils: Vec<(f64, f64, f64)> = (0..spec.num_coils)
            .map(|k| {
                let theta = coil_offset + 2.0 * PI * k as f64 / spec.num_coils as f64;
                (1.1 * theta.cos(), 1.1 * theta.sin(), rng.random_range(0.0..2.0 * PI))
            })
            .collect();
        let plane = rows * cols;
        let mut sens = vec![Complex64::new(0.0, 0.0); spec.num_coils * plane];
        let two_sigma_sq = 2.0 * spec.coil_width * spec.coil_width;
        for r in 0..rows {
            let y = coord(r, rows);
            for c in 0..cols {
                let x = coord(c, cols);
                let mut total = 0.0;
                for (k, &(px, py, psi)) in coils.iter().enumerate() {
                    let d2 = (x - px).powi(2) + (y - py).powi(2);
                    // single-coil data gets a flat profile
                    let g = if spec.num_coils == 1 { 1.0 } else { (-d2 / two_sigma_sq).exp() };
                    let s = Complex64::from_polar(g, psi + 0.4 * (x * py - y * px));
                    total += s.norm_sqr();
                    sens[k * plane + r * cols + c] = s;
                }
                let inv = 1.0 / total.sqrt();
                for k in 0..spec.num_coils {
                    sens[k * plane + r * cols + c] *= inv;
                }
            }
        }

        let mut coil_images = Vec::with_capacity(spec.num_coils * plane);
        for k in 0..spec.num_coils {
            coil_images.extend(
                object
                    .iter()
                    .zip(&sens[k * plane..(k + 1) * plane])
                    .map(|(o, s)| o * s),
            );
        }
        let image = ImageGrid::from_vec(spec.shape(), coil_images)?;
        Ok(Self {
            kspace: dft2(&image),
            object,
            sensitivities: sens,
        })
    }
}

/// Fully sampled ground-truth k-space for a phantom; a deterministic
/// function of the `PhantomSpec`, including its seed.
pub fn make_phantom(spec: &PhantomSpec) -> Result<KGrid> {
    Phantom::generate(spec).map(|p| p.kspace)
}
