//! A small dense order-3 tensor over `f64`, sized k*k*k for class counts k.
//! Supports exactly the contractions the whitened tensor decomposition
//! needs; k stays in the single digits, so nothing here is optimized beyond
//! flat storage.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    k: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(k: usize) -> Self {
        Self { k, data: vec![0.0; k * k * k] }
    }

    pub fn from_fn(k: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(k);
        for p in 0..k {
            for q in 0..k {
                for r in 0..k {
                    let i = t.idx(p, q, r);
                    t.data[i] = f(p, q, r);
                }
            }
        }
        t
    }

    #[inline]
    fn idx(&self, p: usize, q: usize, r: usize) -> usize {
        (p * self.k + q) * self.k + r
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize, r: usize) -> f64 {
        self.data[self.idx(p, q, r)]
    }

    #[inline]
    pub fn set(&mut self, p: usize, q: usize, r: usize, v: f64) {
        let i = self.idx(p, q, r);
        self.data[i] = v;
    }

    /// Accumulates `w * x (x) y (x) z` into the tensor.
    pub fn add_outer3(&mut self, w: f64, x: &[f64], y: &[f64], z: &[f64]) {
        debug_assert!(x.len() == self.k && y.len() == self.k && z.len() == self.k);
        let k = self.k;
        for p in 0..k {
            let wx = w * x[p];
            if wx == 0.0 {
                continue;
            }
            for q in 0..k {
                let wxy = wx * y[q];
                if wxy == 0.0 {
                    continue;
                }
                let base = (p * k + q) * k;
                for r in 0..k {
                    self.data[base + r] += wxy * z[r];
                }
            }
        }
    }

    /// The vector T(I, theta, theta): component p is
    /// sum_{q,r} T[p,q,r] * theta[q] * theta[r].
    pub fn contract_vv(&self, theta: &DVector<f64>) -> DVector<f64> {
        let k = self.k;
        let mut out = DVector::zeros(k);
        for p in 0..k {
            let mut acc = 0.0;
            for q in 0..k {
                let tq = theta[q];
                if tq == 0.0 {
                    continue;
                }
                let base = (p * k + q) * k;
                let mut inner = 0.0;
                for r in 0..k {
                    inner += self.data[base + r] * theta[r];
                }
                acc += tq * inner;
            }
            out[p] = acc;
        }
        out
    }

    /// The scalar T(theta, theta, theta).
    pub fn contract_vvv(&self, theta: &DVector<f64>) -> f64 {
        self.contract_vv(theta).dot(theta)
    }

    /// The multilinear transform T(Q, Q, Q): entry (i, j, l) is
    /// sum_{p,q,r} T[p,q,r] * Q[p,i] * Q[q,j] * Q[r,l].
    pub fn apply_matrix(&self, qm: &DMatrix<f64>) -> Tensor3 {
        let k = self.k;
        debug_assert!(qm.nrows() == k && qm.ncols() == k);
        // Contract one mode at a time.
        let mut a = Tensor3::zeros(k); // over (i, q, r)
        for i in 0..k {
            for q in 0..k {
                for r in 0..k {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += self.get(p, q, r) * qm[(p, i)];
                    }
                    a.set(i, q, r, acc);
                }
            }
        }
        let mut b = Tensor3::zeros(k); // over (i, j, r)
        for i in 0..k {
            for j in 0..k {
                for r in 0..k {
                    let mut acc = 0.0;
                    for q in 0..k {
                        acc += a.get(i, q, r) * qm[(q, j)];
                    }
                    b.set(i, j, r, acc);
                }
            }
        }
        let mut c = Tensor3::zeros(k); // over (i, j, l)
        for i in 0..k {
            for j in 0..k {
                for l in 0..k {
                    let mut acc = 0.0;
                    for r in 0..k {
                        acc += b.get(i, j, r) * qm[(r, l)];
                    }
                    c.set(i, j, l, acc);
                }
            }
        }
        c
    }

    /// Subtracts the rank-one component `alpha * v (x) v (x) v`.
    pub fn deflate(&mut self, alpha: f64, v: &DVector<f64>) {
        let k = self.k;
        for p in 0..k {
            for q in 0..k {
                let base = (p * k + q) * k;
                let apq = alpha * v[p] * v[q];
                for r in 0..k {
                    self.data[base + r] -= apq * v[r];
                }
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
