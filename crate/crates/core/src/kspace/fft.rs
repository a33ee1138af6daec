use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use super::{ComplexGrid, ImageGrid, KGrid};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Centred unitary 2D DFT applied per coil. The DC term lands at
/// `(rows / 2, cols / 2)`.
pub fn dft2(image: &ImageGrid) -> KGrid {
    KGrid(centred_transform(&image.0, FftDirection::Forward))
}

/// Exact inverse of [`dft2`].
pub fn idft2(k: &KGrid) -> ImageGrid {
    ImageGrid(centred_transform(&k.0, FftDirection::Inverse))
}

pub(crate) fn centred_transform(input: &ComplexGrid, direction: FftDirection) -> ComplexGrid {
    let shape = input.shape();
    let (rows, cols) = (shape.rows, shape.cols);
    let mut out = input.clone();
    let scale = 1.0 / ((rows * cols) as f64).sqrt();

    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft(cols, direction);
        let col_fft = planner.plan_fft(rows, direction);
        let mut buf = vec![Complex64::new(0.0, 0.0); rows.max(cols)];
        let mut scratch = vec![
            Complex64::new(0.0, 0.0);
            row_fft
                .get_inplace_scratch_len()
                .max(col_fft.get_inplace_scratch_len())
        ];

        for c in 0..shape.coils {
            let plane = out.coil_mut(c);
            // ifftshift -> fft -> fftshift along each axis in turn
            for r in 0..rows {
                let line = &mut plane[r * cols..(r + 1) * cols];
                let b = &mut buf[..cols];
                for (i, v) in b.iter_mut().enumerate() {
                    *v = line[(i + cols / 2) % cols];
                }
                row_fft.process_with_scratch(b, &mut scratch);
                for (i, v) in b.iter().enumerate() {
                    line[(i + cols / 2) % cols] = *v;
                }
            }
            for col in 0..cols {
                let b = &mut buf[..rows];
                for (i, v) in b.iter_mut().enumerate() {
                    *v = plane[((i + rows / 2) % rows) * cols + col];
                }
                col_fft.process_with_scratch(b, &mut scratch);
                for (i, v) in b.iter().enumerate() {
                    plane[((i + rows / 2) % rows) * cols + col] = *v * scale;
                }
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(shape: Shape, rng: &mut ChaCha8Rng) -> ImageGrid {
        let data = (0..shape.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ImageGrid::from_vec(shape, data).unwrap()
    }

    /// Direct O(N^2) centred unitary DFT.
    fn naive_dft2(x: &ImageGrid) -> Vec<Complex64> {
        let s = x.shape();
        let (h, w) = (s.rows as i64, s.cols as i64);
        let norm = 1.0 / ((h * w) as f64).sqrt();
        let mut out = vec![Complex64::new(0.0, 0.0); s.len()];
        for c in 0..s.coils {
            for ku in 0..h {
                for kv in 0..w {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for u in 0..h {
                        for v in 0..w {
                            let phase = -2.0
                                * std::f64::consts::PI
                                * (((ku - h / 2) * (u - h / 2)) as f64 / h as f64
                                    + ((kv - w / 2) * (v - w / 2)) as f64 / w as f64);
                            acc += x.get(c, u as usize, v as usize) * Complex64::from_polar(1.0, phase);
                        }
                    }
                    out[s.index(c, ku as usize, kv as usize)] = acc * norm;
                }
            }
        }
        out
    }

    #[test]
    fn dc_only_signal_lands_at_centre() {
        let shape = Shape::new(1, 4, 4);
        let ones = ImageGrid::from_vec(shape, vec![Complex64::new(1.0, 0.0); 16]).unwrap();
        let k = dft2(&ones);
        for r in 0..4 {
            for c in 0..4 {
                let v = k.get(0, r, c);
                if (r, c) == (2, 2) {
                    assert!((v.re - 4.0).abs() < 1e-12 && v.im.abs() < 1e-12);
                } else {
                    assert!(v.norm() < 1e-12, "({r},{c}) = {v}");
                }
            }
        }
    }

    #[test]
    fn matches_direct_sum_and_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for shape in [Shape::new(2, 8, 8), Shape::new(1, 5, 7), Shape::new(1, 4, 6)] {
            let x = random_image(shape, &mut rng);
            let fast = dft2(&x);
            let slow = naive_dft2(&x);
            for (a, b) in fast.as_slice().iter().zip(&slow) {
                assert!((a - b).norm() < 1e-12);
            }
            assert!((fast.norm() - x.norm()).abs() <= 1e-12 * x.norm());
        }
    }

    #[test]
    fn round_trip_and_parseval_over_many_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for i in 0..1000 {
            let shape = Shape::new(1 + i % 3, 4 + i % 5, 4 + (i / 5) % 6);
            let x = random_image(shape, &mut rng);
            let k = dft2(&x);
            assert!((k.norm() - x.norm()).abs() <= 1e-10 * x.norm());
            if i % 10 == 0 {
                let back = idft2(&k);
                let err: f64 = back
                    .as_slice()
                    .iter()
                    .zip(x.as_slice())
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                assert!(err <= 1e-12 * x.norm());
            }
        }
    }
}
