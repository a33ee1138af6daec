//! Reference computations written independently of the library: per-atom
//! state tabulation for toy ensembles and closed forms.

#![allow(dead_code)]

use std::collections::HashMap;

use n2n_core::Complex64;

pub struct RefPosterior {
    pub prob: f64,
    pub e_y: Vec<Complex64>,
    pub e_y0: Vec<Complex64>,
    /// `None` where `(1 - m̃) m` has no conditional mass.
    pub ssdu: Vec<Option<Complex64>>,
}

/// Walks all `4^N` joint (m_j, m̃_j) states per truth; state code per atom:
/// 0 = neither, 1 = Ω only, 2 = Λ only, 3 = both.
pub fn tabulate(
    truths: &[Vec<Complex64>],
    weights: &[f64],
    p: &[f64],
    pt: &[f64],
) -> HashMap<Vec<(u64, u64)>, RefPosterior> {
    let n = p.len();
    let zero = Complex64::new(0.0, 0.0);
    #[derive(Default)]
    struct Acc {
        prob: f64,
        y: Vec<Complex64>,
        y0: Vec<Complex64>,
        w: Vec<f64>,
        wy: Vec<Complex64>,
    }
    let mut table: HashMap<Vec<(u64, u64)>, Acc> = HashMap::new();
    for (truth, &wt) in truths.iter().zip(weights) {
        for code in 0..4usize.pow(n as u32) {
            let mut prob = wt;
            let mut states = Vec::with_capacity(n);
            let mut c = code;
            for j in 0..n {
                let s = c % 4;
                c /= 4;
                let (m, mt) = (s & 1 == 1, s & 2 == 2);
                prob *= if m { p[j] } else { 1.0 - p[j] };
                prob *= if mt { pt[j] } else { 1.0 - pt[j] };
                states.push((m, mt));
            }
            if prob == 0.0 {
                continue;
            }
            let obs: Vec<Complex64> = (0..n).map(|j| if states[j].0 && states[j].1 { truth[j] } else { zero }).collect();
            let key = obs.iter().map(|z| (z.re.to_bits(), z.im.to_bits())).collect();
            let acc = table.entry(key).or_insert_with(|| Acc {
                y: vec![zero; n],
                y0: vec![zero; n],
                w: vec![0.0; n],
                wy: vec![zero; n],
                ..Default::default()
            });
            acc.prob += prob;
            for j in 0..n {
                let (m, mt) = states[j];
                if m {
                    acc.y[j] += truth[j] * prob;
                }
                acc.y0[j] += truth[j] * prob;
                if m && !mt {
                    acc.w[j] += prob;
                    acc.wy[j] += truth[j] * prob;
                }
            }
        }
    }
    table
        .into_iter()
        .map(|(k, a)| {
            let post = RefPosterior {
                prob: a.prob,
                e_y: a.y.iter().map(|v| v / a.prob).collect(),
                e_y0: a.y0.iter().map(|v| v / a.prob).collect(),
                ssdu: a.w.iter().zip(&a.wy).map(|(&w, &wy)| (w > 0.0).then(|| wy / w)).collect(),
            };
            (k, post)
        })
        .collect()
}

pub fn key(v: &[Complex64]) -> Vec<(u64, u64)> {
    v.iter().map(|z| (z.re.to_bits(), z.im.to_bits())).collect()
}

/// `P[M_j = 0 | M̃_j M_j = 0]` from Bayes' rule.
pub fn k_closed_form(p: f64, pt: f64) -> f64 {
    let p_unsampled = 1.0 - p;
    let p_obs_zero = 1.0 - pt * p;
    p_unsampled / p_obs_zero
}

pub fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
