//! Finite group actions on signals: circular shifts, flips, quarter rotations
//! and amplitude scalings. Signals are flattened row-major with shape `(h, w)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{RealMatrix, RealVector};
use crate::rng::RngStream;

/// One group element acting linearly on `R^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity { n: usize },
    /// Entry `(r, c)` moves to `((r + dy) mod h, (c + dx) mod w)`.
    Shift { h: usize, w: usize, dy: usize, dx: usize },
    /// Mirror every row: column `c` moves to `w - 1 - c`.
    Flip { h: usize, w: usize },
    /// `k` counter-clockwise quarter turns of a `side x side` image.
    Rot90 { side: usize, k: usize },
    Scale { n: usize, gain: f64 },
}

impl Transform {
    pub fn n(&self) -> usize {
        match *self {
            Transform::Identity { n } | Transform::Scale { n, .. } => n,
            Transform::Shift { h, w, .. } | Transform::Flip { h, w } => h * w,
            Transform::Rot90 { side, .. } => side * side,
        }
    }

    /// Index map: output position of input index `i` (permutation elements only).
    fn destination(&self, i: usize) -> usize {
        match *self {
            Transform::Identity { .. } | Transform::Scale { .. } => i,
            Transform::Shift { h, w, dy, dx } => {
                let (r, c) = (i / w, i % w);
                ((r + dy) % h) * w + (c + dx) % w
            }
            Transform::Flip { w, .. } => {
                let (r, c) = (i / w, i % w);
                r * w + (w - 1 - c)
            }
            Transform::Rot90 { side, k } => {
                let (mut r, mut c) = (i / side, i % side);
                for _ in 0..(k % 4) {
                    // counter-clockwise: (r, c) -> (side - 1 - c, r)
                    let nr = side - 1 - c;
                    c = r;
                    r = nr;
                }
                r * side + c
            }
        }
    }

    pub fn apply(&self, x: &RealVector) -> RealVector {
        let n = self.n();
        assert_eq!(x.len(), n, "transform dimension");
        if let Transform::Scale { gain, .. } = *self {
            return x * gain;
        }
        let mut out = RealVector::zeros(n);
        for i in 0..n {
            out[self.destination(i)] = x[i];
        }
        out
    }

    pub fn apply_transpose(&self, x: &RealVector) -> RealVector {
        let n = self.n();
        assert_eq!(x.len(), n, "transform dimension");
        if let Transform::Scale { gain, .. } = *self {
            return x * gain;
        }
        let mut out = RealVector::zeros(n);
        for i in 0..n {
            out[i] = x[self.destination(i)];
        }
        out
    }

    pub fn apply_inverse(&self, x: &RealVector) -> RealVector {
        match *self {
            Transform::Scale { gain, .. } => x / gain,
            _ => self.apply_transpose(x),
        }
    }

    pub fn inverse(&self) -> Transform {
        match *self {
            Transform::Identity { n } => Transform::Identity { n },
            Transform::Shift { h, w, dy, dx } => Transform::Shift {
                h,
                w,
                dy: (h - dy % h) % h,
                dx: (w - dx % w) % w,
            },
            Transform::Flip { h, w } => Transform::Flip { h, w },
            Transform::Rot90 { side, k } => Transform::Rot90 { side, k: (4 - k % 4) % 4 },
            Transform::Scale { n, gain } => Transform::Scale { n, gain: 1.0 / gain },
        }
    }

    pub fn matrix(&self) -> RealMatrix {
        let n = self.n();
        let mut m = RealMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = RealVector::zeros(n);
            e[j] = 1.0;
            m.set_column(j, &self.apply(&e));
        }
        m
    }

    /// Orthogonal transforms satisfy `T^{-1} = T^T`.
    pub fn is_orthogonal(&self) -> bool {
        match *self {
            Transform::Scale { gain, .. } => (gain.abs() - 1.0).abs() < 1e-15,
            _ => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    CircularShifts,
    Flips,
    Rotations90,
    AmplitudeScalings,
}

/// A finite list of transforms with the identity first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAction {
    pub kind: GroupKind,
    pub elements: Vec<Transform>,
}

impl GroupAction {
    /// All `h * w` circular shifts of a 2D signal (`h = 1` for 1D).
    pub fn circular_shifts(h: usize, w: usize) -> Self {
        let mut elements = Vec::with_capacity(h * w);
        for dy in 0..h {
            for dx in 0..w {
                elements.push(Transform::Shift { h, w, dy, dx });
            }
        }
        GroupAction { kind: GroupKind::CircularShifts, elements }
    }

    pub fn flips(h: usize, w: usize) -> Self {
        GroupAction {
            kind: GroupKind::Flips,
            elements: vec![Transform::Identity { n: h * w }, Transform::Flip { h, w }],
        }
    }

    pub fn rotations90(side: usize) -> Self {
        GroupAction {
            kind: GroupKind::Rotations90,
            elements: (0..4).map(|k| Transform::Rot90 { side, k }).collect(),
        }
    }

    /// Scalings by the given gains. The unit gain is inserted first if absent.
    pub fn amplitude_scalings(n: usize, gains: &[f64]) -> Result<Self> {
        if gains.iter().any(|g| !g.is_finite() || *g == 0.0) {
            return Err(Error::param("gains", "must be finite and non-zero"));
        }
        let mut elements = vec![Transform::Scale { n, gain: 1.0 }];
        for &g in gains {
            if g != 1.0 {
                elements.push(Transform::Scale { n, gain: g });
            }
        }
        Ok(GroupAction { kind: GroupKind::AmplitudeScalings, elements })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn n(&self) -> usize {
        self.elements[0].n()
    }

    pub fn sample(&self, rng: &mut RngStream) -> &Transform {
        &self.elements[rng.index(self.len())]
    }

    fn find(&self, m: &RealMatrix) -> Option<usize> {
        self.elements
            .iter()
            .position(|t| (t.matrix() - m).amax() <= 1e-12)
    }

    /// `table[a][b]` is the index of `T_a T_b`, or `None` if the set is not closed.
    pub fn closure_table(&self) -> Option<Vec<Vec<usize>>> {
        let mats: Vec<RealMatrix> = self.elements.iter().map(|t| t.matrix()).collect();
        let mut table = vec![vec![0; self.len()]; self.len()];
        for a in 0..self.len() {
            for b in 0..self.len() {
                table[a][b] = self.find(&(&mats[a] * &mats[b]))?;
            }
        }
        Some(table)
    }

    /// Index of the inverse of every element, or `None` if some inverse is missing.
    pub fn inverse_indices(&self) -> Option<Vec<usize>> {
        self.elements
            .iter()
            .map(|t| self.find(&t.inverse().matrix()))
            .collect()
    }
}
