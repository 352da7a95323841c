//! Seven-point stencil systems on a structured grid and a DILU-preconditioned
//! BiCGSTAB solver.

use crate::error::SolverError;

/// Neighbour directions: -x, +x, -y, +y, -z, +z.
pub const DIRECTIONS: usize = 6;

/// `a_P phi_P - sum_nb a_nb phi_nb = b` for every cell.
#[derive(Debug, Clone)]
pub struct StencilSystem {
    dims: [usize; 3],
    pub ap: Vec<f64>,
    /// `anb[d][n]` couples cell `n` to its neighbour in direction `d`.
    pub anb: [Vec<f64>; DIRECTIONS],
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearStats {
    pub iterations: usize,
    /// `||b - A x|| / ||b||` at exit.
    pub relative_residual: f64,
}

impl StencilSystem {
    pub fn zeros(dims: [usize; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        StencilSystem {
            dims,
            ap: vec![0.0; n],
            anb: std::array::from_fn(|_| vec![0.0; n]),
            b: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.ap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ap.is_empty()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn strides(&self) -> [usize; 3] {
        [1, self.dims[0], self.dims[0] * self.dims[1]]
    }

    /// Neighbour index of `n` in direction `d`, if the coefficient may be nonzero.
    #[inline]
    fn neighbour(&self, n: usize, d: usize) -> usize {
        let s = self.strides()[d / 2];
        if d % 2 == 0 {
            n - s
        } else {
            n + s
        }
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let [nx, ny, nz] = self.dims;
        let sx = 1;
        let sy = nx;
        let sz = nx * ny;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let n = i + nx * (j + ny * k);
                    let mut v = self.ap[n] * x[n];
                    if i > 0 {
                        v -= self.anb[0][n] * x[n - sx];
                    }
                    if i + 1 < nx {
                        v -= self.anb[1][n] * x[n + sx];
                    }
                    if j > 0 {
                        v -= self.anb[2][n] * x[n - sy];
                    }
                    if j + 1 < ny {
                        v -= self.anb[3][n] * x[n + sy];
                    }
                    if k > 0 {
                        v -= self.anb[4][n] * x[n - sz];
                    }
                    if k + 1 < nz {
                        v -= self.anb[5][n] * x[n + sz];
                    }
                    y[n] = v;
                }
            }
        }
    }

    /// Scaled residual `sum |a_P x_P - sum a_nb x_nb - b| / sum |a_P x_P|`.
    /// A vanishing denominator counts as converged and returns 0.
    pub fn scaled_residual(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; x.len()];
        self.apply(x, &mut ax);
        let mut num = 0.0;
        let mut den = 0.0;
        for n in 0..x.len() {
            num += (ax[n] - self.b[n]).abs();
            den += (self.ap[n] * x[n]).abs();
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    fn dilu_diagonal(&self) -> Vec<f64> {
        let [nx, ny, _] = self.dims;
        let mut d = self.ap.clone();
        for n in 0..self.len() {
            let i = n % nx;
            let j = (n / nx) % ny;
            let k = n / (nx * ny);
            let mut v = d[n];
            // Lower neighbours l < n: A[n][l] A[l][n] / d_l.
            for (dir, present) in [(0, i > 0), (2, j > 0), (4, k > 0)] {
                if present {
                    let l = self.neighbour(n, dir);
                    v -= self.anb[dir][n] * self.anb[dir + 1][l] / d[l];
                }
            }
            d[n] = v;
        }
        d
    }

    fn dilu_solve(&self, diag: &[f64], r: &[f64], z: &mut [f64]) {
        let [nx, ny, _] = self.dims;
        let len = self.len();
        for n in 0..len {
            let i = n % nx;
            let j = (n / nx) % ny;
            let k = n / (nx * ny);
            let mut v = r[n];
            if i > 0 {
                v += self.anb[0][n] * z[n - 1];
            }
            if j > 0 {
                v += self.anb[2][n] * z[n - nx];
            }
            if k > 0 {
                v += self.anb[4][n] * z[n - nx * ny];
            }
            z[n] = v / diag[n];
        }
        let [_, _, nz] = self.dims;
        for n in (0..len).rev() {
            let i = n % nx;
            let j = (n / nx) % ny;
            let k = n / (nx * ny);
            let mut v = 0.0;
            if i + 1 < nx {
                v += self.anb[1][n] * z[n + 1];
            }
            if j + 1 < ny {
                v += self.anb[3][n] * z[n + nx];
            }
            if k + 1 < nz {
                v += self.anb[5][n] * z[n + nx * ny];
            }
            z[n] += v / diag[n];
        }
    }

    /// Solves in place starting from the current `x`. Stops once
    /// `||r|| <= tol ||b||` or after `max_iter` iterations.
    pub fn solve_bicgstab(&self, x: &mut [f64], tol: f64, max_iter: usize) -> Result<LinearStats, SolverError> {
        let n = self.len();
        let b_norm = norm(&self.b);
        if b_norm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok(LinearStats {
                iterations: 0,
                relative_residual: 0.0,
            });
        }
        let diag = self.dilu_diagonal();
        if diag.iter().any(|d| !d.is_finite() || *d == 0.0) {
            return Err(SolverError::LinearBreakdown {
                iterations: 0,
                residual: f64::NAN,
            });
        }
        let mut r = vec![0.0; n];
        self.apply(x, &mut r);
        for i in 0..n {
            r[i] = self.b[i] - r[i];
        }
        let target = tol * b_norm;
        let mut r_norm = norm(&r);
        if r_norm <= target {
            return Ok(LinearStats {
                iterations: 0,
                relative_residual: r_norm / b_norm,
            });
        }
        let r_hat = r.clone();
        let mut p = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut t = vec![0.0; n];
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        let breakdown = |it: usize, res: f64| SolverError::LinearBreakdown {
            iterations: it,
            residual: res / b_norm,
        };

        for it in 1..=max_iter {
            let rho_new = dot(&r_hat, &r);
            if rho_new == 0.0 || !rho_new.is_finite() {
                return Err(breakdown(it, r_norm));
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            self.dilu_solve(&diag, &p, &mut y);
            self.apply(&y, &mut v);
            let rv = dot(&r_hat, &v);
            if rv == 0.0 || !rv.is_finite() {
                return Err(breakdown(it, r_norm));
            }
            alpha = rho / rv;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            let s_norm = norm(&s);
            if s_norm <= target {
                for i in 0..n {
                    x[i] += alpha * y[i];
                }
                return Ok(LinearStats {
                    iterations: it,
                    relative_residual: s_norm / b_norm,
                });
            }
            self.dilu_solve(&diag, &s, &mut z);
            self.apply(&z, &mut t);
            let tt = dot(&t, &t);
            if tt == 0.0 || !tt.is_finite() {
                return Err(breakdown(it, s_norm));
            }
            omega = dot(&t, &s) / tt;
            for i in 0..n {
                x[i] += alpha * y[i] + omega * z[i];
                r[i] = s[i] - omega * t[i];
            }
            r_norm = norm(&r);
            if !r_norm.is_finite() {
                return Err(breakdown(it, r_norm));
            }
            if r_norm <= target {
                return Ok(LinearStats {
                    iterations: it,
                    relative_residual: r_norm / b_norm,
                });
            }
            if omega == 0.0 {
                return Err(breakdown(it, r_norm));
            }
        }
        // Reaching the iteration cap is acceptable; a residual that has
        // not dropped meaningfully is not.
        let rel = r_norm / b_norm;
        if rel > 1e-6 {
            return Err(SolverError::LinearNotConverged {
                iterations: max_iter,
                residual: rel,
            });
        }
        Ok(LinearStats {
            iterations: max_iter,
            relative_residual: rel,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
