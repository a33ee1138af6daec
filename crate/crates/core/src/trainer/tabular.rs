//! Lookup-table reconstructor over an enumerable set of inputs.

use std::collections::HashMap;

use num_complex::Complex64;

use super::model::ReconModel;
use crate::error::{Error, Result};
use crate::kspace::{KGrid, Shape};
use crate::oracle::{all_posteriors, ToyEnsemble};

type Key = Vec<[u64; 2]>;

fn key_of(v: &[Complex64]) -> Key {
    v.iter().map(|z| [z.re.to_bits(), z.im.to_bits()]).collect()
}

/// One free output vector per known input; unknown inputs map to zero.
#[derive(Clone, Debug)]
pub struct TabularModel {
    shape: Shape,
    slots: HashMap<Key, usize>,
    params: Vec<f64>,
}

impl TabularModel {
    pub fn new(shape: Shape, inputs: &[KGrid]) -> Result<Self> {
        let mut slots = HashMap::new();
        for k in inputs {
            if k.shape() != shape {
                return Err(Error::shape(shape, k.shape()));
            }
            let next = slots.len();
            slots.entry(key_of(k.as_slice())).or_insert(next);
        }
        let params = vec![0.0; 2 * shape.len() * slots.len()];
        Ok(Self { shape, slots, params })
    }

    /// A table over every reachable `ỹ` of a toy ensemble, on the grid
    /// `(1, 1, N)`.
    pub fn for_ensemble(ens: &ToyEnsemble) -> Result<Self> {
        let shape = Shape::new(1, 1, ens.atoms());
        let inputs = all_posteriors(ens)
            .into_iter()
            .map(|o| KGrid::from_vec(shape, o.y_tilde))
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, &inputs)
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    fn slot(&self, input: &KGrid) -> Result<Option<usize>> {
        if input.shape() != self.shape {
            return Err(Error::shape(self.shape, input.shape()));
        }
        Ok(self.slots.get(&key_of(input.as_slice())).copied())
    }
}

impl ReconModel for TabularModel {
    fn name(&self) -> &'static str {
        "tabular"
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn raw_forward(&self, input: &KGrid) -> Result<KGrid> {
        let n = self.shape.len();
        let data = match self.slot(input)? {
            Some(s) => self.params[2 * n * s..2 * n * (s + 1)]
                .chunks_exact(2)
                .map(|c| Complex64::new(c[0], c[1]))
                .collect(),
            None => vec![Complex64::new(0.0, 0.0); n],
        };
        KGrid::from_vec(self.shape, data)
    }

    fn raw_backward_into(&self, input: &KGrid, grad_out: &KGrid, scale: f64, acc: &mut [f64]) -> Result<()> {
        if acc.len() != self.params.len() {
            return Err(Error::shape(self.params.len(), acc.len()));
        }
        let n = self.shape.len();
        if let Some(s) = self.slot(input)? {
            let dst = &mut acc[2 * n * s..2 * n * (s + 1)];
            for (d, g) in dst.chunks_exact_mut(2).zip(grad_out.as_slice()) {
                d[0] += scale * g.re;
                d[1] += scale * g.im;
            }
        }
        Ok(())
    }

    fn raw_backward(&self, input: &KGrid, grad_out: &KGrid) -> Result<Vec<f64>> {
        let n = self.shape.len();
        let mut out = vec![0.0; self.params.len()];
        if let Some(s) = self.slot(input)? {
            for (i, g) in grad_out.as_slice().iter().enumerate() {
                out[2 * n * s + 2 * i] = g.re;
                out[2 * n * s + 2 * i + 1] = g.im;
            }
        }
        Ok(out)
    }
}
