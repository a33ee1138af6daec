//! Multi-coil k-space and image grids, the centred unitary DFT, coil
//! combination, synthetic phantoms and the CKS1 dataset format.

mod cks1;
pub(crate) mod fft;
mod phantom;

pub use cks1::{read_cks1, write_cks1, CKS1_MAGIC};
pub use fft::{dft2, idft2};
pub use phantom::{make_phantom, Phantom, PhantomSpec};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::Mask;

/// Grid extent as (coils, rows, columns).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub coils: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const fn new(coils: usize, rows: usize, cols: usize) -> Self {
        Self { coils, rows, cols }
    }

    pub const fn len(&self) -> usize {
        self.coils * self.rows * self.cols
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub const fn index(&self, coil: usize, row: usize, col: usize) -> usize {
        (coil * self.rows + row) * self.cols + col
    }

    /// Image-scale grids need at least 4x4 pixels; toy vectors use 1xN.
    pub fn check_image_scale(&self) -> Result<()> {
        if self.coils == 0 || self.rows < 4 || self.cols < 4 {
            return Err(Error::InvalidInput(format!(
                "image grids need C >= 1 and H, W >= 4, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Complex array indexed `[coil, row, column]`, row-major within a coil.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexGrid {
    shape: Shape,
    data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![Complex64::new(0.0, 0.0); shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<Complex64>) -> Result<Self> {
        if shape.coils == 0 || shape.rows == 0 || shape.cols == 0 {
            return Err(Error::InvalidInput(format!("empty grid shape {shape:?}")));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(shape.len(), data.len()));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("grid data"));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn coil(&self, c: usize) -> &[Complex64] {
        let n = self.shape.plane();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn coil_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.shape.plane();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, coil: usize, row: usize, col: usize) -> Complex64 {
        self.data[self.shape.index(coil, row, col)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub(crate) fn check_same_shape(&self, other: &ComplexGrid) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(self.shape, other.shape));
        }
        Ok(())
    }
}

macro_rules! grid_newtype {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub(crate) ComplexGrid);

        impl $name {
            pub fn zeros(shape: Shape) -> Self {
                Self(ComplexGrid::zeros(shape))
            }

            pub fn from_vec(shape: Shape, data: Vec<Complex64>) -> Result<Self> {
                ComplexGrid::from_vec(shape, data).map(Self)
            }

            pub fn grid(&self) -> &ComplexGrid {
                &self.0
            }

            pub fn into_grid(self) -> ComplexGrid {
                self.0
            }
        }

        impl std::ops::Deref for $name {
            type Target = ComplexGrid;
            fn deref(&self) -> &ComplexGrid {
                &self.0
            }
        }

        impl std::ops::DerefMut for $name {
            fn deref_mut(&mut self) -> &mut ComplexGrid {
                &mut self.0
            }
        }
    };
}

grid_newtype!(
    /// Multi-coil k-space. Holds fully sampled `y0`, singly sub-sampled `y`
    /// and doubly sub-sampled `ỹ` alike.
    KGrid
);
grid_newtype!(
    /// Image-domain counterpart of a [`KGrid`].
    ImageGrid
);

impl KGrid {
    /// Zeroes every entry the mask does not sample.
    pub fn masked(&self, mask: &Mask) -> Result<KGrid> {
        mask.check_grid(self.shape())?;
        let mut out = self.clone();
        mask.zero_unsampled(out.as_mut_slice(), self.shape());
        Ok(out)
    }
}

/// Root-sum-of-squares coil combination of the inverse DFT, as a real
/// `rows x cols` image in row-major order.
pub fn rss(k: &KGrid) -> Vec<f64> {
    let img = idft2(k);
    let shape = img.shape();
    let mut out = vec![0.0; shape.plane()];
    for c in 0..shape.coils {
        for (acc, z) in out.iter_mut().zip(img.coil(c)) {
            *acc += z.norm_sqr();
        }
    }
    out.iter_mut().for_each(|v| *v = v.sqrt());
    out
}

/// Data-consistent network wrapper: `(1 - M) g + ỹ` where `M` is the mask
/// of `ỹ` (the product of the Λ and Ω masks).
///
/// Sampled entries are copied from `ỹ` without arithmetic, so consistency
/// holds bit-exactly.
pub fn dc_wrap(g_out: &KGrid, y_tilde: &KGrid, combined_mask: &Mask) -> Result<KGrid> {
    g_out.check_same_shape(y_tilde)?;
    let shape = g_out.shape();
    combined_mask.check_grid(shape)?;
    let sampled = combined_mask.entry_indicator(shape.rows);
    let plane = shape.plane();
    let data = g_out
        .as_slice()
        .iter()
        .zip(y_tilde.as_slice())
        .enumerate()
        .map(|(i, (&g, &yt))| if sampled[i % plane] { yt } else { g + yt })
        .collect();
    Ok(KGrid(ComplexGrid { shape, data }))
}
