//! Small dense linear algebra helpers.
//!
//! All matrices involved (temporal Gram matrices, face coupling matrices,
//! local candidate projections) are tiny, so a plain row-major matrix with
//! partial-pivoting Gaussian elimination is sufficient.

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            a: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let v = self[(i, k)];
                if v == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += v * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        for i in 0..self.rows {
            let mut s = 0.0;
            for j in 0..self.cols {
                s += self[(i, j)] * x[j];
            }
            out[i] = s;
        }
    }

    /// Max absolute deviation from the identity (rectangular: from delta_ij).
    pub fn identity_deviation(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let t = if i == j { 1.0 } else { 0.0 };
                d = d.max((self[(i, j)] - t).abs());
            }
        }
        d
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.a[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.a[i * self.cols + j]
    }
}

/// Solve A x = b in place by Gaussian elimination with partial pivoting.
/// Returns None if the matrix is numerically singular.
pub fn solve_dense(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows;
    assert_eq!(a.rows, a.cols);
    assert_eq!(b.len(), n);
    let mut m = a.a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        let mut best = m[col * n + col].abs();
        for r in col + 1..n {
            let v = m[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-300 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                m.swap(col * n + j, piv * n + j);
            }
            x.swap(col, piv);
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[r * n + j] -= f * m[col * n + j];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for j in col + 1..n {
            s -= m[col * n + j] * x[j];
        }
        x[col] = s / m[col * n + col];
    }
    Some(x)
}

/// Solve the weighted least squares / normal equations
/// (E^T diag(w) E) a = E^T diag(w) u, returning both the coefficients and
/// the weighted squared norm of the defect u - E a.
pub fn weighted_normal_solve(e: &Mat, w: &[f64], u: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = e.cols;
    assert_eq!(e.rows, w.len());
    assert_eq!(e.rows, u.len());
    let mut gram = Mat::zeros(n, n);
    let mut rhs = vec![0.0; n];
    for r in 0..e.rows {
        let wr = w[r];
        for i in 0..n {
            let ei = e[(r, i)];
            if ei == 0.0 {
                continue;
            }
            rhs[i] += wr * ei * u[r];
            for j in i..n {
                gram[(i, j)] += wr * ei * e[(r, j)];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    let a = solve_dense(&gram, &rhs)?;
    let mut defect = 0.0;
    for r in 0..e.rows {
        let mut v = u[r];
        for i in 0..n {
            v -= e[(r, i)] * a[i];
        }
        defect += w[r] * v * v;
    }
    Some((a, defect.max(0.0)))
}
