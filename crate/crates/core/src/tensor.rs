//! Dense third-order tensors stored in row-major order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A dense `d0 × d1 × d2` array; entry `(i, j, k)` lives at `(i * d1 + j) * d2 + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d0: usize, d1: usize, d2: usize) -> Self {
        Self {
            dims: [d0, d1, d2],
            data: vec![0.0; d0 * d1 * d2],
        }
    }

    pub fn from_fn(d0: usize, d1: usize, d2: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(d0, d1, d2);
        for i in 0..d0 {
            for j in 0..d1 {
                for k in 0..d2 {
                    t.data[(i * d1 + j) * d2 + k] = f(i, j, k);
                }
            }
        }
        t
    }

    /// Builds a tensor from nested `[i][j][k]` vectors. Returns `None` on ragged input.
    pub fn from_nested(nested: &[Vec<Vec<f64>>]) -> Option<Self> {
        let d0 = nested.len();
        let d1 = nested.first().map_or(0, Vec::len);
        let d2 = nested.first().and_then(|p| p.first()).map_or(0, Vec::len);
        let mut data = Vec::with_capacity(d0 * d1 * d2);
        for plane in nested {
            if plane.len() != d1 {
                return None;
            }
            for fiber in plane {
                if fiber.len() != d2 {
                    return None;
                }
                data.extend_from_slice(fiber);
            }
        }
        Some(Self {
            dims: [d0, d1, d2],
            data,
        })
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        let [d0, d1, d2] = self.dims;
        (0..d0)
            .map(|i| {
                (0..d1)
                    .map(|j| self.data[(i * d1 + j) * d2..(i * d1 + j + 1) * d2].to_vec())
                    .collect()
            })
            .collect()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = value;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let o = self.offset(i, j, k);
        self.data[o] += value;
    }

    /// Contiguous last-mode fiber `(i, j, :)`.
    pub fn fiber(&self, i: usize, j: usize) -> &[f64] {
        let start = self.offset(i, j, 0);
        &self.data[start..start + self.dims[2]]
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// Adds `weight · a ⊗ b ⊗ c`.
    pub fn add_outer(&mut self, weight: f64, a: &[f64], b: &[f64], c: &[f64]) {
        assert_eq!([a.len(), b.len(), c.len()], self.dims);
        for (i, &ai) in a.iter().enumerate() {
            let wa = weight * ai;
            if wa == 0.0 {
                continue;
            }
            for (j, &bj) in b.iter().enumerate() {
                let wab = wa * bj;
                if wab == 0.0 {
                    continue;
                }
                let base = (i * self.dims[1] + j) * self.dims[2];
                for (k, &ck) in c.iter().enumerate() {
                    self.data[base + k] += wab * ck;
                }
            }
        }
    }

    /// Multilinear transform `T(W1, W2, W3)` with entry
    /// `Σ_{a,b,c} T[a,b,c] W1[a,i] W2[b,j] W3[c,k]`.
    pub fn multilinear(&self, w1: &DMatrix<f64>, w2: &DMatrix<f64>, w3: &DMatrix<f64>) -> Tensor3 {
        let [d0, d1, d2] = self.dims;
        assert_eq!((w1.nrows(), w2.nrows(), w3.nrows()), (d0, d1, d2));
        let (n0, n1, n2) = (w1.ncols(), w2.ncols(), w3.ncols());

        // contract the last mode, then the middle, then the first
        let mut stage1 = vec![0.0; d0 * d1 * n2];
        for ab in 0..d0 * d1 {
            let fiber = &self.data[ab * d2..(ab + 1) * d2];
            for k in 0..n2 {
                stage1[ab * n2 + k] = fiber.iter().enumerate().map(|(c, &t)| t * w3[(c, k)]).sum();
            }
        }
        let mut stage2 = vec![0.0; d0 * n1 * n2];
        for a in 0..d0 {
            for j in 0..n1 {
                for k in 0..n2 {
                    stage2[(a * n1 + j) * n2 + k] =
                        (0..d1).map(|b| stage1[(a * d1 + b) * n2 + k] * w2[(b, j)]).sum();
                }
            }
        }
        Tensor3::from_fn(n0, n1, n2, |i, j, k| {
            (0..d0).map(|a| stage2[(a * n1 + j) * n2 + k] * w1[(a, i)]).sum()
        })
    }

    /// `T(I, u, u)`: contracts the last two modes with `u`.
    pub fn contract_last_two(&self, u: &DVector<f64>) -> DVector<f64> {
        let [d0, d1, d2] = self.dims;
        assert_eq!((d1, d2), (u.len(), u.len()));
        DVector::from_fn(d0, |i, _| {
            (0..d1)
                .map(|j| u[j] * self.fiber(i, j).iter().zip(u.iter()).map(|(t, v)| t * v).sum::<f64>())
                .sum()
        })
    }

    /// `T(u, u, u)`.
    pub fn contract_all(&self, u: &DVector<f64>) -> f64 {
        self.contract_last_two(u).dot(u)
    }

    /// Average over the six index permutations. Requires a cubic tensor.
    pub fn symmetrized(&self) -> Tensor3 {
        let [d, d1, d2] = self.dims;
        assert!(d == d1 && d == d2, "symmetrization needs a cubic tensor");
        Tensor3::from_fn(d, d, d, |i, j, k| {
            (self.get(i, j, k)
                + self.get(i, k, j)
                + self.get(j, i, k)
                + self.get(j, k, i)
                + self.get(k, i, j)
                + self.get(k, j, i))
                / 6.0
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &Tensor3) -> Tensor3 {
        assert_eq!(self.dims, other.dims);
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor3) {
        assert_eq!(self.dims, other.dims);
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}
