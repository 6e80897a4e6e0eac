//! Fully connected network on the back-projected input.
//!
//! Hidden layers use the shifted softplus `ln(1 + e^a) - ln 2`, which is
//! smooth and vanishes at zero. The last layer is linear.

use crate::error::{Error, Result};
use crate::linalg::{RealMatrix, RealVector};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub weights: Vec<RealMatrix>,
    pub biases: Vec<RealVector>,
}

fn act(a: f64) -> f64 {
    let sp = if a > 30.0 { a } else { a.exp().ln_1p() };
    sp - std::f64::consts::LN_2
}

fn act_d1(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn act_d2(a: f64) -> f64 {
    let s = act_d1(a);
    s * (1.0 - s)
}

struct Tape {
    pre: Vec<RealVector>,
    post: Vec<RealVector>,
}

impl Mlp {
    /// Widths `[n_in, hidden..., n_out]`; weights `N(0, 1/fan_in)`, zero biases.
    pub fn new(widths: &[usize], rng: &mut RngStream) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::param("widths", "need at least input and output widths, all positive"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 1..widths.len() {
            let (fo, fi) = (widths[l], widths[l - 1]);
            let s = 1.0 / (fi as f64).sqrt();
            weights.push(RealMatrix::from_fn(fo, fi, |_, _| s * rng.normal()));
            biases.push(RealVector::zeros(fo));
        }
        Ok(Mlp { weights, biases })
    }

    pub fn n_in(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.last().expect("layers").nrows()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Per layer: row-major weights, then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    p.push(w[(i, j)]);
                }
            }
            p.extend(b.iter());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let c = w.ncols();
            for i in 0..w.nrows() {
                for j in 0..c {
                    w[(i, j)] = p[k + i * c + j];
                }
            }
            k += w.len();
            for i in 0..b.len() {
                b[i] = p[k + i];
            }
            k += b.len();
        }
    }

    fn layers(&self) -> usize {
        self.weights.len()
    }

    fn tape(&self, z: &RealVector) -> Tape {
        let mut pre = Vec::with_capacity(self.layers());
        let mut post = vec![z.clone()];
        for l in 0..self.layers() {
            let a = &self.weights[l] * &post[l] + &self.biases[l];
            let h = if l + 1 < self.layers() { a.map(act) } else { a.clone() };
            pre.push(a);
            post.push(h);
        }
        Tape { pre, post }
    }

    pub fn forward(&self, z: &RealVector) -> RealVector {
        self.tape(z).post.pop().expect("output")
    }

    fn tangents(&self, tape: &Tape, t: &RealVector) -> Vec<RealVector> {
        let mut hd = vec![t.clone()];
        for l in 0..self.layers() {
            let ad = &self.weights[l] * &hd[l];
            let h = if l + 1 < self.layers() { ad.zip_map(&tape.pre[l], |d, a| d * act_d1(a)) } else { ad };
            hd.push(h);
        }
        hd
    }

    pub fn jvp(&self, z: &RealVector, t: &RealVector) -> RealVector {
        let tape = self.tape(z);
        self.tangents(&tape, t).pop().expect("output")
    }

    fn backward(&self, tape: &Tape, c: &RealVector, grad: Option<&mut Vec<f64>>) -> RealVector {
        let offsets = self.offsets();
        let mut lam = c.clone();
        let mut grad = grad;
        for l in (0..self.layers()).rev() {
            let adj_a = if l + 1 < self.layers() { lam.zip_map(&tape.pre[l], |g, a| g * act_d1(a)) } else { lam.clone() };
            if let Some(g) = grad.as_deref_mut() {
                add_outer(g, offsets[l], &adj_a, &tape.post[l]);
            }
            lam = self.weights[l].transpose() * &adj_a;
        }
        lam
    }

    fn offsets(&self) -> Vec<usize> {
        let mut k = 0;
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| {
                let o = k;
                k += w.len() + b.len();
                o
            })
            .collect()
    }

    pub fn vjp_params(&self, z: &RealVector, c: &RealVector) -> Vec<f64> {
        let tape = self.tape(z);
        let mut g = vec![0.0; self.num_params()];
        self.backward(&tape, c, Some(&mut g));
        g
    }

    pub fn vjp_input(&self, z: &RealVector, c: &RealVector) -> RealVector {
        let tape = self.tape(z);
        self.backward(&tape, c, None)
    }

    /// Gradient with respect to the parameters of `u^T J(z) v`.
    pub fn mixed(&self, z: &RealVector, u: &RealVector, v: &RealVector) -> Vec<f64> {
        let tape = self.tape(z);
        let hd = self.tangents(&tape, v);
        let offsets = self.offsets();
        let mut g = vec![0.0; self.num_params()];
        let last = self.layers() - 1;
        let mut lam_hd = u.clone();
        let mut lam_h = RealVector::zeros(u.len());
        for l in (0..self.layers()).rev() {
            let (adj_ad, adj_a) = if l == last {
                (lam_hd.clone(), lam_h.clone())
            } else {
                let a = &tape.pre[l];
                // hd_l = act'(a_l) * ad_l, with ad_l = W_l hd_{l-1}
                let ad = &self.weights[l] * &hd[l];
                let adj_ad = lam_hd.zip_map(a, |g, x| g * act_d1(x));
                let mut adj_a = lam_h.zip_map(a, |g, x| g * act_d1(x));
                for i in 0..a.len() {
                    adj_a[i] += act_d2(a[i]) * ad[i] * lam_hd[i];
                }
                (adj_ad, adj_a)
            };
            add_outer_weights(&mut g, offsets[l], &adj_ad, &hd[l]);
            add_outer(&mut g, offsets[l], &adj_a, &tape.post[l]);
            lam_hd = self.weights[l].transpose() * &adj_ad;
            lam_h = self.weights[l].transpose() * &adj_a;
        }
        g
    }
}

/// Accumulate `u v^T` into the weights and `u` into the biases of one layer.
fn add_outer(g: &mut [f64], offset: usize, u: &RealVector, v: &RealVector) {
    add_outer_weights(g, offset, u, v);
    let k = offset + u.len() * v.len();
    for i in 0..u.len() {
        g[k + i] += u[i];
    }
}

fn add_outer_weights(g: &mut [f64], offset: usize, u: &RealVector, v: &RealVector) {
    let c = v.len();
    for i in 0..u.len() {
        for j in 0..c {
            g[offset + i * c + j] += u[i] * v[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_vanishes_at_zero() {
        assert_eq!(act(0.0), 0.0);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut r = RngStream::new(0, 0);
        let mut m = Mlp::new(&[3, 5, 3], &mut r).unwrap();
        m.set_params(&vec![0.0; m.num_params()]);
        assert_eq!(m.forward(&RealVector::from_vec(vec![1.0, 2.0, 3.0])), RealVector::zeros(3));
    }
}
