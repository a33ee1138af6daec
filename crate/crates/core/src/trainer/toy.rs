//! Exact expected-loss training sets for toy ensembles.

use std::collections::HashMap;

use super::{Example, Regime};
use crate::correction::k_from_probs;
use crate::error::{Error, Result};
use crate::kspace::{KGrid, Shape};
use crate::masking::{Mask, Scheme};
use crate::oracle::ToyEnsemble;

fn bits_mask(n: usize, bits: usize) -> Result<Mask> {
    Mask::new(Scheme::ColumnPoly, 1, n, (0..n).map(|j| bits >> j & 1 == 1).collect())
}

/// Every `(truth, Ω, Λ)` triple as an example weighted by its probability,
/// so the mean loss over the set is the exact expected loss. Triples giving
/// identical examples are merged.
pub fn enumerated_examples(ens: &ToyEnsemble, regime: Regime) -> Result<Vec<Example>> {
    let n = ens.atoms();
    let shape = Shape::new(1, 1, n);
    let inv = match regime {
        Regime::WeightedN2N => Some(k_from_probs(ens.p(), ens.p_tilde())?.1),
        Regime::SsduOriginal => {
            return Err(Error::RegimeMismatch(
                "toy ensembles define a single Λ distribution; use ssdu_proposed".into(),
            ))
        }
        _ => None,
    };
    let mut merged: HashMap<Vec<u64>, Example> = HashMap::new();
    let mut failure = None;
    ens.for_each_triple(|t, omega, lambda, prob| {
        if failure.is_some() {
            return;
        }
        let built = (|| -> Result<Example> {
            let truth = KGrid::from_vec(shape, ens.truths()[t].clone())?;
            let y = KGrid::from_vec(shape, ens.apply_bits(t, omega))?;
            let (input_bits, target, weights) = match regime {
                Regime::Supervised => (omega, truth, vec![1.0; n]),
                Regime::UnweightedN2N => (omega & lambda, y, vec![1.0; n]),
                Regime::WeightedN2N => (omega & lambda, y, inv.clone().expect("weighted plan has K")),
                _ => {
                    let w = (0..n)
                        .map(|j| if omega >> j & 1 == 1 && lambda >> j & 1 == 0 { 1.0 } else { 0.0 })
                        .collect();
                    (omega & lambda, y, w)
                }
            };
            let combined = bits_mask(n, input_bits)?;
            Ok(Example {
                input: KGrid::from_vec(shape, ens.apply_bits(t, input_bits))?,
                combined,
                target,
                weights,
                prob,
            })
        })();
        match built {
            Ok(ex) => {
                let mut key: Vec<u64> = Vec::with_capacity(5 * n);
                for z in ex.input.as_slice().iter().chain(ex.target.as_slice()) {
                    key.push(z.re.to_bits());
                    key.push(z.im.to_bits());
                }
                key.extend(ex.weights.iter().map(|w| w.to_bits()));
                key.extend(ex.combined.atoms().iter().map(|&b| b as u64));
                merged
                    .entry(key)
                    .and_modify(|e| e.prob += ex.prob)
                    .or_insert(ex);
            }
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let mut out: Vec<Example> = merged.into_values().collect();
    // HashMap order is random; sort for reproducible training
    out.sort_by(|a, b| {
        let ka: Vec<u64> = a.input.as_slice().iter().chain(a.target.as_slice()).flat_map(|z| [z.re.to_bits(), z.im.to_bits()]).collect();
        let kb: Vec<u64> = b.input.as_slice().iter().chain(b.target.as_slice()).flat_map(|z| [z.re.to_bits(), z.im.to_bits()]).collect();
        ka.cmp(&kb).then(a.prob.total_cmp(&b.prob))
    });
    Ok(out)
}
