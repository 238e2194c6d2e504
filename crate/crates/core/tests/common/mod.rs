//! Shared fixtures and independent oracles for the integration tests.
//!
//! The oracles work on plain `Vec`s with scalar loops and never call into
//! the crate's operators.

#![allow(dead_code)]

use ddc_core::ModelSpec;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_stochastic(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0f64));
    // Sprinkle exact zeros so sparse rows are covered too.
    for v in m.iter_mut() {
        if *v < 0.2 {
            *v = 0.0;
        }
    }
    for (x, mut r) in m.row_iter_mut().enumerate() {
        if r.sum() == 0.0 {
            r[x] = 1.0;
        }
        let s = r.sum();
        r /= s;
    }
    m
}

/// Random valid model with utilities in [-3, 3].
pub fn random_model(rng: &mut impl Rng, n_states: usize, n_choices: usize, beta: f64) -> ModelSpec {
    let u = DMatrix::from_fn(n_choices, n_states, |_, _| rng.gen_range(-3.0..3.0));
    let f = (0..n_choices).map(|_| random_stochastic(rng, n_states)).collect();
    ModelSpec::new(beta, u, f).unwrap()
}

/// Plain nested-Vec copy of a model for the scalar oracles.
pub struct Plain {
    pub beta: f64,
    /// `u[j][x]`
    pub u: Vec<Vec<f64>>,
    /// `f[j][x][y]`
    pub f: Vec<Vec<Vec<f64>>>,
}

impl Plain {
    pub fn of(spec: &ModelSpec) -> Self {
        let n = spec.n_states();
        let nj = spec.n_choices();
        Plain {
            beta: spec.beta(),
            u: (0..nj)
                .map(|j| (0..n).map(|x| spec.utility()[(j, x)]).collect())
                .collect(),
            f: (0..nj)
                .map(|j| {
                    (0..n)
                        .map(|x| (0..n).map(|y| spec.transition(j)[(x, y)]).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.u[0].len()
    }

    pub fn nj(&self) -> usize {
        self.u.len()
    }

    fn expect(&self, j: usize, x: usize, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for y in 0..self.n() {
            s += self.f[j][x][y] * v[y];
        }
        s
    }

    fn lse(vals: &[f64]) -> f64 {
        let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }

    pub fn lambda(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|x| {
                let vals: Vec<f64> = (0..self.nj())
                    .map(|j| self.u[j][x] + self.beta * self.expect(j, x, w))
                    .collect();
                Self::lse(&vals)
            })
            .collect()
    }

    /// `ev` flat, block-by-choice.
    pub fn gamma(&self, ev: &[f64]) -> Vec<f64> {
        let n = self.n();
        let m: Vec<f64> = (0..n)
            .map(|x| {
                let vals: Vec<f64> = (0..self.nj())
                    .map(|j| self.u[j][x] + self.beta * ev[j * n + x])
                    .collect();
                Self::lse(&vals)
            })
            .collect();
        let mut out = vec![0.0; n * self.nj()];
        for a in 0..self.nj() {
            for x in 0..n {
                out[a * n + x] = self.expect(a, x, &m);
            }
        }
        out
    }

    pub fn ccp_w(&self, w: &[f64]) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut p = vec![vec![0.0; n]; self.nj()];
        for x in 0..n {
            let vals: Vec<f64> = (0..self.nj())
                .map(|j| self.u[j][x] + self.beta * self.expect(j, x, w))
                .collect();
            let l = Self::lse(&vals);
            for j in 0..self.nj() {
                p[j][x] = (vals[j] - l).exp();
            }
        }
        p
    }

    /// Brute-force successive approximations from zero.
    pub fn vfi_w(&self, iters: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.n()];
        for _ in 0..iters {
            w = self.lambda(&w);
        }
        w
    }

    pub fn vfi_ev(&self, iters: usize) -> Vec<f64> {
        let mut ev = vec![0.0; self.n() * self.nj()];
        for _ in 0..iters {
            ev = self.gamma(&ev);
        }
        ev
    }
}

/// Central-difference Jacobian of `op` at `x`.
pub fn fd_jacobian(op: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let m = op(x).len();
    let mut jac = DMatrix::zeros(m, n);
    for c in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[c] += h;
        xm[c] -= h;
        let (fp, fm) = (op(&xp), op(&xm));
        for r in 0..m {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac
}

pub fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
