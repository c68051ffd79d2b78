//! Small dense linear algebra for 2- and 3-dimensional covariances, plus
//! the float helpers a `no_std` build needs.

use crate::error::{Error, Result};

/// Maximum spatial dimensionality supported by the model.
pub const MAX_DIM: usize = 3;

/// A fixed-capacity spatial vector; only the first `dim` entries are used.
pub type Vec3 = [f64; MAX_DIM];

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

/// Logistic sigmoid, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))`, stable in both tails.
#[inline]
pub fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -ln_1p(exp(-x))
    } else {
        x - ln_1p(exp(x))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric positive-definite matrix of size `dim` (2 or 3) with its
/// inverse and log-determinant precomputed from a Cholesky factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdMatrix {
    dim: usize,
    entries: [[f64; MAX_DIM]; MAX_DIM],
    inverse: [[f64; MAX_DIM]; MAX_DIM],
    chol: [[f64; MAX_DIM]; MAX_DIM],
    log_det: f64,
}

impl SpdMatrix {
    /// Builds from a row-major `dim × dim` slice.
    pub fn new(dim: usize, row_major: &[f64]) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidConfig("dim must be 2 or 3"));
        }
        if row_major.len() != dim * dim {
            return Err(Error::InvalidConfig("covariance has wrong number of entries"));
        }
        if row_major.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariance"));
        }
        let mut a = [[0.0; MAX_DIM]; MAX_DIM];
        for r in 0..dim {
            for c in 0..dim {
                a[r][c] = row_major[r * dim + c];
            }
        }
        for r in 0..dim {
            for c in 0..r {
                let scale = abs(a[r][c]).max(abs(a[c][r])).max(1.0);
                if abs(a[r][c] - a[c][r]) > 1e-12 * scale {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }

        // Cholesky: a = l lᵀ
        let mut l = [[0.0; MAX_DIM]; MAX_DIM];
        for j in 0..dim {
            let mut d = a[j][j];
            for k in 0..j {
                d -= l[j][k] * l[j][k];
            }
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite);
            }
            let ljj = sqrt(d);
            l[j][j] = ljj;
            for i in (j + 1)..dim {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                l[i][j] = s / ljj;
            }
        }
        let log_det = 2.0 * (0..dim).map(|i| ln(l[i][i])).sum::<f64>();

        // inverse via triangular solves against the identity columns
        let mut inverse = [[0.0; MAX_DIM]; MAX_DIM];
        for col in 0..dim {
            let mut y = [0.0; MAX_DIM];
            for i in 0..dim {
                let mut s = if i == col { 1.0 } else { 0.0 };
                for k in 0..i {
                    s -= l[i][k] * y[k];
                }
                y[i] = s / l[i][i];
            }
            let mut x = [0.0; MAX_DIM];
            for i in (0..dim).rev() {
                let mut s = y[i];
                for k in (i + 1)..dim {
                    s -= l[k][i] * x[k];
                }
                x[i] = s / l[i][i];
            }
            for row in 0..dim {
                inverse[row][col] = x[row];
            }
        }
        // symmetrize away rounding asymmetry
        for r in 0..dim {
            for c in 0..r {
                let m = 0.5 * (inverse[r][c] + inverse[c][r]);
                inverse[r][c] = m;
                inverse[c][r] = m;
            }
        }

        Ok(Self { dim, entries: a, inverse, chol: l, log_det })
    }

    /// `scale · I`.
    pub fn isotropic(dim: usize, scale: f64) -> Result<Self> {
        let mut m = [0.0; MAX_DIM * MAX_DIM];
        for i in 0..dim {
            m[i * dim + i] = scale;
        }
        Self::new(dim, &m[..dim * dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r][c]
    }

    /// Entry `(r, c)` of the inverse.
    pub fn inverse_get(&self, r: usize, c: usize) -> f64 {
        self.inverse[r][c]
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn det(&self) -> f64 {
        exp(self.log_det)
    }

    /// Row-major entries, `dim²` long.
    pub fn to_row_major(&self) -> alloc::vec::Vec<f64> {
        let mut out = alloc::vec::Vec::with_capacity(self.dim * self.dim);
        for r in 0..self.dim {
            for c in 0..self.dim {
                out.push(self.entries[r][c]);
            }
        }
        out
    }

    /// `L z` with `L` the lower Cholesky factor, mapping standard normal
    /// draws onto `N(0, Σ)`.
    #[inline]
    pub fn correlate(&self, z: &Vec3) -> Vec3 {
        let mut out = [0.0; MAX_DIM];
        for r in 0..self.dim {
            out[r] = (0..=r).map(|c| self.chol[r][c] * z[c]).sum();
        }
        out
    }

    /// `Σ⁻¹ v`.
    #[inline]
    pub fn solve(&self, v: &Vec3) -> Vec3 {
        let mut out = [0.0; MAX_DIM];
        for r in 0..self.dim {
            let mut s = 0.0;
            for c in 0..self.dim {
                s += self.inverse[r][c] * v[c];
            }
            out[r] = s;
        }
        out
    }

    /// `vᵀ Σ⁻¹ v`.
    #[inline]
    pub fn inv_quad(&self, v: &Vec3) -> f64 {
        let w = self.solve(v);
        (0..self.dim).map(|i| v[i] * w[i]).sum()
    }

    /// Largest eigenvalue, via the characteristic polynomial.
    pub fn max_eigenvalue(&self) -> f64 {
        let a = &self.entries;
        if self.dim == 2 {
            let tr = a[0][0] + a[1][1];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            let disc = (0.25 * tr * tr - det).max(0.0);
            0.5 * tr + sqrt(disc)
        } else {
            // symmetric 3x3 closed form (trigonometric)
            let p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
            let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
            if p1 == 0.0 {
                return a[0][0].max(a[1][1]).max(a[2][2]);
            }
            let p2 = (a[0][0] - q) * (a[0][0] - q)
                + (a[1][1] - q) * (a[1][1] - q)
                + (a[2][2] - q) * (a[2][2] - q)
                + 2.0 * p1;
            let p = sqrt(p2 / 6.0);
            let mut b = [[0.0; 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    b[r][c] = (a[r][c] - if r == c { q } else { 0.0 }) / p;
                }
            }
            let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
                - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
                + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
            let r = (det_b / 2.0).clamp(-1.0, 1.0);
            let phi = libm::acos(r) / 3.0;
            q + 2.0 * p * libm::cos(phi)
        }
    }
}
