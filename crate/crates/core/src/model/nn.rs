//! Dense-layer kernels over flat parameter vectors, and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Location of an affine layer `y = W x + b` inside a flat parameter vector.
/// `W` is `rows × cols`, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Dense {
    /// Reserves space for the layer at the end of a parameter vector of length `*len`.
    pub fn alloc(len: &mut usize, rows: usize, cols: usize) -> Dense {
        let d = Dense { w: *len, b: *len + rows * cols, rows, cols };
        *len += rows * cols + rows;
        d
    }

    pub fn size(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    /// Scaled-uniform weights in `±1/sqrt(cols)`, zero biases.
    pub fn init(&self, p: &mut [f64], rng: &mut impl Rng) {
        let a = 1.0 / (self.cols.max(1) as f64).sqrt();
        for w in &mut p[self.w..self.w + self.rows * self.cols] {
            *w = rng.gen_range(-a..a);
        }
        p[self.b..self.b + self.rows].fill(0.0);
    }

    #[inline]
    pub fn forward(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        let w = &p[self.w..self.w + self.rows * self.cols];
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &w[r * self.cols..(r + 1) * self.cols];
            let mut s = p[self.b + r];
            for (a, b) in row.iter().zip(x) {
                s += a * b;
            }
            *o = s;
        }
    }

    /// Accumulates parameter gradients for upstream gradient `dy` at input `x`
    /// and, when `dx` is given, adds `Wᵀ dy` to it.
    #[inline]
    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        for (r, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g[self.b + r] += d;
            let gw = &mut g[self.w + r * self.cols..self.w + (r + 1) * self.cols];
            for (gw, &xv) in gw.iter_mut().zip(x) {
                *gw += d * xv;
            }
        }
        if let Some(dx) = dx {
            let w = &p[self.w..self.w + self.rows * self.cols];
            for (r, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (dx, &wv) in dx.iter_mut().zip(&w[r * self.cols..(r + 1) * self.cols]) {
                    *dx += d * wv;
                }
            }
        }
    }
}

#[inline]
pub fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_forward_backward() {
        let mut len = 0;
        let d = Dense::alloc(&mut len, 2, 3);
        assert_eq!(len, 8);
        let p = [1.0, 2.0, 3.0, -1.0, 0.0, 1.0, 0.5, -0.5];
        let mut y = [0.0; 2];
        d.forward(&p, &[1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, [6.5, -0.5]);
        let mut g = [0.0; 8];
        let mut dx = [0.0; 3];
        d.backward(&p, &mut g, &[1.0, 2.0, 3.0], &[1.0, 2.0], Some(&mut dx));
        assert_eq!(g, [1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 1.0, 2.0]);
        assert_eq!(dx, [-1.0, 2.0, 5.0]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = [3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g = [2.0 * x[0], 2.0 * x[1]];
            opt.step(&mut x, &g);
        }
        assert!(x[0].abs() < 1e-2 && x[1].abs() < 1e-2, "{x:?}");
    }
}
