//! Pixel masks for cross-validation losses and measurement splits for
//! multi-operator splitting losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RealVector;
use crate::operators::{LinearOperator, OpKind};
use crate::rng::RngStream;

/// How the input of a split denoiser is formed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskGenerator {
    /// Hold out each pixel with probability `fraction` (at least one) and
    /// replace it by a random 4-neighbour on an `h x w` grid.
    Noise2Void { fraction: f64, h: usize, w: usize },
    /// `j` disjoint masks `{i : i mod j = s}`; one is drawn per evaluation.
    Noise2Self { j: usize },
    /// One input and one different target pixel per 2x2 block.
    Neighbor2Neighbor { h: usize, w: usize },
    /// Keep pixel `i` with probability `q[i]`; held-out pixels are zeroed.
    Bernoulli { q: Vec<f64> },
}

/// A drawn mask: `keep[i]` marks input pixels, `input` is the denoiser input.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskDraw {
    pub keep: Vec<bool>,
    pub input: RealVector,
}

impl MaskGenerator {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            MaskGenerator::Noise2Void { fraction, h, w } => {
                if h * w != n {
                    return Err(Error::shape("mask grid does not match the signal"));
                }
                if !(*fraction > 0.0 && *fraction <= 1.0) {
                    return Err(Error::param("fraction", "must lie in (0, 1]"));
                }
                if n < 2 {
                    return Err(Error::param("h", "need at least two pixels"));
                }
            }
            MaskGenerator::Noise2Self { j } => {
                if *j < 2 || *j > n {
                    return Err(Error::param("j", "need 2 <= j <= n masks"));
                }
            }
            MaskGenerator::Neighbor2Neighbor { h, w } => {
                if h * w != n || h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::shape("neighbour sub-sampling needs an even h x w grid matching n"));
                }
            }
            MaskGenerator::Bernoulli { q } => {
                if q.len() != n {
                    return Err(Error::shape("keep probabilities do not match the signal"));
                }
                if q.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::param("q", "probabilities must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Masks of the `j`-th noise2self group, as held-out indicators.
    pub fn noise2self_masks(n: usize, j: usize) -> Vec<Vec<bool>> {
        (0..j).map(|s| (0..n).map(|i| i % j == s).collect()).collect()
    }

    pub fn generate(&self, y: &RealVector, rng: &mut RngStream) -> Result<MaskDraw> {
        let n = y.len();
        self.validate(n)?;
        match self {
            MaskGenerator::Noise2Void { fraction, h, w } => {
                let mut keep: Vec<bool> = (0..n).map(|_| !rng.bernoulli(*fraction)).collect();
                if keep.iter().all(|k| *k) {
                    keep[rng.index(n)] = false;
                }
                let mut input = y.clone();
                for i in 0..n {
                    if !keep[i] {
                        input[i] = y[random_neighbour(i, *h, *w, rng)];
                    }
                }
                Ok(MaskDraw { keep, input })
            }
            MaskGenerator::Noise2Self { j } => {
                let s = rng.index(*j);
                let keep: Vec<bool> = (0..n).map(|i| i % j != s).collect();
                Ok(MaskDraw { input: zero_fill(y, &keep), keep })
            }
            MaskGenerator::Bernoulli { q } => {
                let keep: Vec<bool> = q.iter().map(|p| rng.bernoulli(*p)).collect();
                Ok(MaskDraw { input: zero_fill(y, &keep), keep })
            }
            MaskGenerator::Neighbor2Neighbor { .. } => Err(Error::Capability(
                "neighbour sub-sampling changes the signal size; use neighbor_pairs".into(),
            )),
        }
    }
}

fn random_neighbour(i: usize, h: usize, w: usize, rng: &mut RngStream) -> usize {
    let (r, c) = (i / w, i % w);
    let mut cands = Vec::with_capacity(4);
    if w > 1 {
        cands.push(r * w + (c + 1) % w);
        cands.push(r * w + (c + w - 1) % w);
    }
    if h > 1 {
        cands.push(((r + 1) % h) * w + c);
        cands.push(((r + h - 1) % h) * w + c);
    }
    cands.retain(|&k| k != i);
    cands[rng.index(cands.len())]
}

/// Input and target pixel indices, one pair per 2x2 block, block-major order.
pub fn neighbor_pairs(h: usize, w: usize, rng: &mut RngStream) -> (Vec<usize>, Vec<usize>) {
    let mut inp = Vec::with_capacity(h * w / 4);
    let mut tgt = Vec::with_capacity(h * w / 4);
    for br in 0..h / 2 {
        for bc in 0..w / 2 {
            let cells = [
                (2 * br) * w + 2 * bc,
                (2 * br) * w + 2 * bc + 1,
                (2 * br + 1) * w + 2 * bc,
                (2 * br + 1) * w + 2 * bc + 1,
            ];
            let a = rng.index(4);
            let b = (a + 1 + rng.index(3)) % 4;
            inp.push(cells[a]);
            tgt.push(cells[b]);
        }
    }
    (inp, tgt)
}

pub fn zero_fill(y: &RealVector, keep: &[bool]) -> RealVector {
    RealVector::from_iterator(y.len(), y.iter().zip(keep).map(|(v, k)| if *k { *v } else { 0.0 }))
}

/// Random partition of the measurement rows into `(A1, y1)` and `(A2, y2)`.
///
/// Row `r` goes to the first part with probability `q[r]`; rows in
/// `always_keep` always do. Real and imaginary rows of one frequency move together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitDistribution {
    pub q: Vec<f64>,
    #[serde(default)]
    pub always_keep: Vec<usize>,
    /// Keep probabilities of the operator masks, when known; enables the
    /// closed-form weighting matrices of pixel-mask problems.
    #[serde(default)]
    pub mask_prior: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Split {
    pub a1: LinearOperator,
    pub a2: LinearOperator,
    pub y1: RealVector,
    pub y2: RealVector,
    pub rows1: Vec<bool>,
}

impl SplitDistribution {
    pub fn uniform(q: f64, groups: usize) -> Self {
        SplitDistribution { q: vec![q; groups], always_keep: vec![], mask_prior: None }
    }

    pub fn with_mask_prior(mut self, p: Vec<f64>) -> Self {
        self.mask_prior = Some(p);
        self
    }

    pub fn with_always_keep(mut self, rows: Vec<usize>) -> Self {
        self.always_keep = rows;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param("q", "probabilities must lie in [0, 1]"));
        }
        if let Some(p) = &self.mask_prior {
            if p.len() != self.q.len() || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::param("mask_prior", "one probability in [0, 1] per row"));
            }
        }
        Ok(())
    }

    fn groups(op: &LinearOperator) -> usize {
        match op.kind() {
            OpKind::MaskedDft { .. } => op.n(),
            _ => op.m(),
        }
    }

    /// Draw the first-part indicator for every row group.
    pub fn draw_groups(&self, op: &LinearOperator, rng: &mut RngStream) -> Result<Vec<bool>> {
        self.validate()?;
        let g = Self::groups(op);
        if self.q.len() != g && self.q.len() != 1 {
            return Err(Error::shape(format!("split has {} probabilities, operator has {g} row groups", self.q.len())));
        }
        let mut out: Vec<bool> = (0..g)
            .map(|r| rng.bernoulli(if self.q.len() == 1 { self.q[0] } else { self.q[r] }))
            .collect();
        for &r in &self.always_keep {
            if r < g {
                out[r] = true;
            }
        }
        Ok(out)
    }

    /// Split given the group indicators.
    pub fn split_with(&self, op: &LinearOperator, y: &RealVector, groups: &[bool]) -> Result<Split> {
        let rows: Vec<bool> = match op.kind() {
            OpKind::MaskedDft { .. } => groups.iter().chain(groups.iter()).cloned().collect(),
            _ => groups.to_vec(),
        };
        let support = op.row_support();
        let rows1: Vec<bool> = rows.iter().zip(&support).map(|(r, s)| *r && *s).collect();
        let rows2: Vec<bool> = rows.iter().zip(&support).map(|(r, s)| !*r && *s).collect();
        Ok(Split {
            a1: op.split_rows(&rows1)?,
            a2: op.split_rows(&rows2)?,
            y1: zero_fill(y, &rows1),
            y2: zero_fill(y, &rows2),
            rows1,
        })
    }

    pub fn sample(&self, op: &LinearOperator, y: &RealVector, rng: &mut RngStream) -> Result<Split> {
        let g = self.draw_groups(op, rng)?;
        self.split_with(op, y, &g)
    }

    fn q_at(&self, i: usize) -> f64 {
        if self.q.len() == 1 { self.q[0] } else { self.q[i] }
    }

    /// Diagonal of `Q_{A1} = E[A^T A | A1]` for pixel masks with a known mask prior.
    pub fn q_diagonal(&self, a1: &LinearOperator) -> Result<Vec<f64>> {
        let b1 = a1
            .diagonal_mask_bits()
            .ok_or_else(|| Error::Capability("weighting matrices need pixel-mask operators".into()))?;
        let p = self
            .mask_prior
            .as_ref()
            .ok_or_else(|| Error::Capability("weighting matrices need the mask prior".into()))?;
        if p.len() != b1.len() {
            return Err(Error::shape("mask prior does not match the operator"));
        }
        Ok(q_diagonal_bernoulli(&b1, p, &(0..b1.len()).map(|i| self.q_at(i)).collect::<Vec<_>>()))
    }
}

/// `Q_{A1}` for Bernoulli masks `b_i ~ Ber(p_i)` split by `w_i ~ Ber(q_i)`:
/// 1 on observed pixels of `A1`, `p (1 - q) / (1 - p q)` elsewhere.
pub fn q_diagonal_bernoulli(b1: &[bool], p: &[f64], q: &[f64]) -> Vec<f64> {
    b1.iter()
        .zip(p.iter().zip(q))
        .map(|(b, (p, q))| if *b { 1.0 } else { p * (1.0 - q) / (1.0 - p * q) })
        .collect()
}

/// `E[Q_{A1} | A]` for the same model, given the operator mask `b`.
pub fn q_bar_bernoulli(b: &[bool], p: &[f64], q: &[f64]) -> Vec<f64> {
    b.iter()
        .zip(p.iter().zip(q))
        .map(|(b, (p, q))| {
            let off = p * (1.0 - q) / (1.0 - p * q);
            if *b { q + (1.0 - q) * off } else { off }
        })
        .collect()
}
