//! Grouped categorical distributions.
//!
//! A latent with `G` groups of `C` classes is stored as a `rows × (G·C)`
//! logit matrix; softmax is taken independently over each run of `C`
//! columns.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::array::DenseArray;
use crate::error::GraphError;

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-8;

#[inline]
pub(crate) fn ln_clamped(p: f64) -> f64 {
    libm::log(if p > PROB_FLOOR { p } else { PROB_FLOOR })
}

/// Softmax over consecutive groups of `classes` entries.
pub fn softmax_groups(logits: &[f64], classes: usize, out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    for (lg, o) in logits.chunks_exact(classes).zip(out.chunks_exact_mut(classes)) {
        let max = lg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (oi, &l) in o.iter_mut().zip(lg) {
            *oi = libm::exp(l - max);
            sum += *oi;
        }
        for oi in o.iter_mut() {
            *oi /= sum;
        }
    }
}

/// `log_softmax` over consecutive groups of `classes` entries.
pub fn log_softmax_groups(logits: &[f64], classes: usize, out: &mut [f64]) {
    for (lg, o) in logits.chunks_exact(classes).zip(out.chunks_exact_mut(classes)) {
        let max = lg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(lg.iter().map(|&l| libm::exp(l - max)).sum::<f64>());
        for (oi, &l) in o.iter_mut().zip(lg) {
            *oi = l - lse;
        }
    }
}

/// One-hot at the argmax of each group; ties go to the lowest index.
pub fn mode_groups(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (lg, o) in logits.chunks_exact(classes).zip(out.chunks_exact_mut(classes)) {
        let mut best = 0;
        for (i, &l) in lg.iter().enumerate() {
            if l > lg[best] {
                best = i;
            }
        }
        o[best] = 1.0;
    }
    out
}

/// Draws a one-hot sample per group from probabilities.
pub fn sample_groups<R: Rng + ?Sized>(probs: &[f64], classes: usize, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    for (p, o) in probs.chunks_exact(classes).zip(out.chunks_exact_mut(classes)) {
        o[sample_index(p, rng)] = 1.0;
    }
    out
}

/// Inverse-CDF draw from one probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    // Rounding left the cumulative sum short of u; take the last class with mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// `Σ_c q_c (ln q_c − ln p_c)` for one group, with clamped logs.
pub fn kl_probs(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .map(|(&qc, &pc)| qc * (ln_clamped(qc) - ln_clamped(pc)))
        .sum()
}

/// `−Σ_c p_c ln p_c` for one group, with clamped logs.
pub fn entropy_probs(p: &[f64]) -> f64 {
    -p.iter().map(|&pc| pc * ln_clamped(pc)).sum::<f64>()
}

/// Categorical distribution over `groups` independent groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    logits: DenseArray,
    groups: usize,
}

impl Categorical {
    pub fn new(logits: DenseArray, groups: usize) -> Result<Self, GraphError> {
        let classes = check_groups(logits.cols(), groups)?;
        if classes < 2 {
            return Err(GraphError::BadGroups { cols: logits.cols(), groups });
        }
        Ok(Self { logits, groups })
    }

    pub fn logits(&self) -> &DenseArray {
        &self.logits
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn classes(&self) -> usize {
        self.logits.cols() / self.groups
    }

    pub fn probs(&self) -> DenseArray {
        let mut out = DenseArray::zeros(self.logits.rows(), self.logits.cols());
        softmax_groups(self.logits.data(), self.classes(), out.data_mut());
        out
    }

    pub fn mode(&self) -> DenseArray {
        let (r, c) = self.logits.shape();
        DenseArray::new(r, c, mode_groups(self.logits.data(), self.classes()))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DenseArray {
        let (r, c) = self.logits.shape();
        DenseArray::new(r, c, sample_groups(self.probs().data(), self.classes(), rng))
    }

    /// KL(self ‖ other) summed over groups, one value per row.
    pub fn kl(&self, other: &Categorical) -> Result<Vec<f64>, GraphError> {
        if self.logits.shape() != other.logits.shape() || self.groups != other.groups {
            return Err(GraphError::ShapeMismatch {
                op: "kl",
                lhs: self.logits.shape(),
                rhs: other.logits.shape(),
            });
        }
        let (q, p) = (self.probs(), other.probs());
        let c = self.classes();
        Ok((0..q.rows())
            .map(|r| {
                q.row(r)
                    .chunks_exact(c)
                    .zip(p.row(r).chunks_exact(c))
                    .map(|(qg, pg)| kl_probs(qg, pg))
                    .sum()
            })
            .collect())
    }

    /// Entropy summed over groups, one value per row.
    pub fn entropy(&self) -> Vec<f64> {
        let p = self.probs();
        let c = self.classes();
        (0..p.rows())
            .map(|r| p.row(r).chunks_exact(c).map(entropy_probs).sum())
            .collect()
    }
}

pub(crate) fn check_groups(cols: usize, groups: usize) -> Result<usize, GraphError> {
    if groups == 0 || cols % groups != 0 {
        return Err(GraphError::BadGroups { cols, groups });
    }
    Ok(cols / groups)
}
