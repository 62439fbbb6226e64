//! One-dimensional Legendre and integrated Legendre polynomials on [0,1],
//! Gauss quadrature and the coupling matrices consumed by the tensor-product
//! kernels.
//!
//! The Legendre family used throughout is orthoNORMAL on [0,1]:
//! L_i(x) = sqrt(2i+1) P_i(2x-1), so that int_0^1 L_i L_j dx = delta_ij.
//! The integrated family is l_0 = 1-x, l_1 = x, l_i = int_0^x L_{i-1}(s) ds
//! for i >= 2, which vanishes at both endpoints for i >= 2.

use crate::linalg::Mat;
use thiserror::Error;

/// Default cap on polynomial degrees; tables are built once up to this value.
pub const DEFAULT_MAX_DEGREE: usize = 12;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("degree {degree} exceeds maximum {max}")]
    DegreeOutOfRange { degree: usize, max: usize },
    #[error("quadrature rule must have at least one point")]
    EmptyRule,
    #[error("mapped interval [{lo}, {hi}] escapes [0,1] (tolerance 1e-12)")]
    MappedIntervalEscapes { lo: f64, hi: f64 },
}

/// Orthonormal Legendre polynomial L_i on [0,1], by three-term recurrence.
pub fn legendre_eval(i: usize, x: f64) -> f64 {
    legendre_unnormalized(i, x) * ((2 * i + 1) as f64).sqrt()
}

/// Shifted (unnormalized) Legendre polynomial P_i(2x-1).
fn legendre_unnormalized(i: usize, x: f64) -> f64 {
    let xi = 2.0 * x - 1.0;
    let mut prev = 1.0;
    if i == 0 {
        return prev;
    }
    let mut cur = xi;
    for k in 1..i {
        let next = (((2 * k + 1) as f64) * xi * cur - (k as f64) * prev) / ((k + 1) as f64);
        prev = cur;
        cur = next;
    }
    cur
}

/// Derivative of the orthonormal Legendre polynomial L_i on [0,1].
pub fn legendre_deriv(i: usize, x: f64) -> f64 {
    if i == 0 {
        return 0.0;
    }
    let xi = 2.0 * x - 1.0;
    let p = legendre_unnormalized(i, x);
    let pm1 = legendre_unnormalized(i - 1, x);
    // P_i'(xi) = i (xi P_i - P_{i-1}) / (xi^2 - 1); chain rule gives factor 2.
    let dp = if (xi * xi - 1.0).abs() < 1e-12 {
        let e = 0.5 * (i * (i + 1)) as f64;
        if xi > 0.0 {
            e
        } else if i % 2 == 0 {
            -e
        } else {
            e
        }
    } else {
        (i as f64) * (xi * p - pm1) / (xi * xi - 1.0)
    };
    2.0 * dp * ((2 * i + 1) as f64).sqrt()
}

/// Evaluate L_0..L_p at x in a single recurrence pass.
pub fn legendre_eval_all(p: usize, x: f64, out: &mut [f64]) {
    assert!(out.len() > p);
    let xi = 2.0 * x - 1.0;
    let mut prev = 1.0;
    out[0] = 1.0;
    if p == 0 {
        return;
    }
    let mut cur = xi;
    out[1] = 3f64.sqrt() * cur;
    for k in 1..p {
        let next = (((2 * k + 1) as f64) * xi * cur - (k as f64) * prev) / ((k + 1) as f64);
        prev = cur;
        cur = next;
        out[k + 1] = ((2 * (k + 1) + 1) as f64).sqrt() * cur;
    }
}

/// Integrated Legendre polynomial l_i on [0,1].
///
/// For i >= 2 the antiderivative identity
/// l_i = L_i / (2 sqrt((2i-1)(2i+1))) - L_{i-2} / (2 sqrt((2i-1)(2i-3)))
/// is used; it follows from int P_{n} = (P_{n+1} - P_{n-1})/(2n+1).
pub fn ilegendre_eval(i: usize, x: f64) -> f64 {
    match i {
        0 => 1.0 - x,
        1 => x,
        _ => {
            let m = i as f64;
            legendre_eval(i, x) / (2.0 * ((2.0 * m - 1.0) * (2.0 * m + 1.0)).sqrt())
                - legendre_eval(i - 2, x) / (2.0 * ((2.0 * m - 1.0) * (2.0 * m - 3.0)).sqrt())
        }
    }
}

/// Derivative of l_i: -1, +1, or L_{i-1}.
pub fn ilegendre_deriv(i: usize, x: f64) -> f64 {
    match i {
        0 => -1.0,
        1 => 1.0,
        _ => legendre_eval(i - 1, x),
    }
}

/// Evaluate l_0..l_p at x.
pub fn ilegendre_eval_all(p: usize, x: f64, out: &mut [f64]) {
    assert!(out.len() > p);
    for i in 0..=p {
        out[i] = ilegendre_eval(i, x);
    }
}

/// n-point Gauss-Legendre rule on [0,1]; exact for degree <= 2n-1.
pub fn gauss_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>), BasisError> {
    if n == 0 {
        return Err(BasisError::EmptyRule);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        // Newton iteration on P_n over [-1,1].
        let mut x = (std::f64::consts::PI * (4 * k + 3) as f64 / (4 * n + 2) as f64).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_value_deriv_pm1(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_value_deriv_pm1(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - k] = 0.5 * (x + 1.0);
        weights[n - 1 - k] = 0.5 * w;
    }
    Ok((nodes, weights))
}

/// (P_n(x), P_n'(x)) on [-1,1].
fn legendre_value_deriv_pm1(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 1.0;
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut cur = x;
    for k in 1..n {
        let next = (((2 * k + 1) as f64) * x * cur - (k as f64) * prev) / ((k + 1) as f64);
        prev = cur;
        cur = next;
    }
    let dp = (n as f64) * (x * cur - prev) / (x * x - 1.0);
    (cur, dp)
}

/// Moment matrix with entry (n, j) = int_I L_j(s x + b) L_n(x) dx, computed
/// by Gauss quadrature of exact order on the sub-interval I = [lo, hi].
pub fn subinterval_transfer_matrix(
    p_row: usize,
    p_col: usize,
    s: f64,
    b: f64,
    lo: f64,
    hi: f64,
) -> Result<Mat, BasisError> {
    let mapped_lo = s * lo + b;
    let mapped_hi = s * hi + b;
    let (mlo, mhi) = if mapped_lo <= mapped_hi {
        (mapped_lo, mapped_hi)
    } else {
        (mapped_hi, mapped_lo)
    };
    if mlo < -1e-12 || mhi > 1.0 + 1e-12 {
        return Err(BasisError::MappedIntervalEscapes { lo: mlo, hi: mhi });
    }
    let nq = (p_row + p_col).div_ceil(2) + 1;
    let (nodes, weights) = gauss_rule(nq)?;
    let mut m = Mat::zeros(p_row + 1, p_col + 1);
    let mut row_vals = vec![0.0; p_row + 1];
    let mut col_vals = vec![0.0; p_col + 1];
    let len = hi - lo;
    for q in 0..nq {
        let x = lo + len * nodes[q];
        let w = len * weights[q];
        legendre_eval_all(p_row, x, &mut row_vals);
        legendre_eval_all(p_col, (s * x + b).clamp(0.0, 1.0), &mut col_vals);
        for n in 0..=p_row {
            let wn = w * row_vals[n];
            for j in 0..=p_col {
                m[(n, j)] += wn * col_vals[j];
            }
        }
    }
    Ok(m)
}

/// Precomputed 1D tables shared by all kernels. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Basis1DTables {
    pub max_degree: usize,
    /// Gauss rules for sizes 1..=max_degree+4 (index n-1).
    pub gauss: Vec<(Vec<f64>, Vec<f64>)>,
    /// Legendre values at the nodes of each stored rule: one (n x max+1) matrix per rule.
    pub legendre_at_nodes: Vec<Mat>,
    /// Integrated-Legendre values at the nodes of each stored rule.
    pub ilegendre_at_nodes: Vec<Mat>,
    /// Endpoint values L_i(0), L_i(1), l_i(0), l_i(1).
    pub leg_at_0: Vec<f64>,
    pub leg_at_1: Vec<f64>,
    pub ileg_at_0: Vec<f64>,
    pub ileg_at_1: Vec<f64>,
    /// Coupling D[i][m] = int L_i l_m'.
    pub coupling: Mat,
    /// Temporal mass T[i][m] = int L_i l_m.
    pub temporal_mass: Mat,
    /// Change of basis C[j][m]: l_m = sum_j C[j][m] L_j.
    pub conversion: Mat,
    /// Derivative pairing G[n][j] = int L_j' L_n.
    pub deriv_pair: Mat,
}

impl Basis1DTables {
    pub fn new(max_degree: usize) -> Self {
        let n_rules = max_degree + 4;
        let mut gauss = Vec::with_capacity(n_rules);
        let mut legendre_at_nodes = Vec::with_capacity(n_rules);
        let mut ilegendre_at_nodes = Vec::with_capacity(n_rules);
        for n in 1..=n_rules {
            let (nodes, weights) = gauss_rule(n).expect("n >= 1");
            let mut lv = Mat::zeros(n, max_degree + 1);
            let mut iv = Mat::zeros(n, max_degree + 1);
            let mut buf = vec![0.0; max_degree + 1];
            for (q, &x) in nodes.iter().enumerate() {
                legendre_eval_all(max_degree, x, &mut buf);
                for i in 0..=max_degree {
                    lv[(q, i)] = buf[i];
                }
                ilegendre_eval_all(max_degree, x, &mut buf);
                for i in 0..=max_degree {
                    iv[(q, i)] = buf[i];
                }
            }
            gauss.push((nodes, weights));
            legendre_at_nodes.push(lv);
            ilegendre_at_nodes.push(iv);
        }

        let leg_at_0: Vec<f64> = (0..=max_degree).map(|i| legendre_eval(i, 0.0)).collect();
        let leg_at_1: Vec<f64> = (0..=max_degree).map(|i| legendre_eval(i, 1.0)).collect();
        let ileg_at_0: Vec<f64> = (0..=max_degree).map(|i| ilegendre_eval(i, 0.0)).collect();
        let ileg_at_1: Vec<f64> = (0..=max_degree).map(|i| ilegendre_eval(i, 1.0)).collect();

        // Quadrature of exact order for all product integrals.
        let nq = max_degree + 1;
        let (nodes, weights) = gauss_rule(nq).expect("nq >= 1");
        let dim = max_degree + 1;
        let mut coupling = Mat::zeros(dim, dim);
        let mut conversion = Mat::zeros(dim, dim);
        let mut deriv_pair = Mat::zeros(dim, dim);
        let mut lv = vec![0.0; dim];
        for q in 0..nq {
            let x = nodes[q];
            let w = weights[q];
            legendre_eval_all(max_degree, x, &mut lv);
            for i in 0..dim {
                let wi = w * lv[i];
                for m in 0..dim {
                    coupling[(i, m)] += wi * ilegendre_deriv(m, x);
                    conversion[(i, m)] += wi * ilegendre_eval(m, x);
                    deriv_pair[(i, m)] += wi * legendre_deriv(m, x);
                }
            }
        }
        let temporal_mass = conversion.clone();

        Basis1DTables {
            max_degree,
            gauss,
            legendre_at_nodes,
            ilegendre_at_nodes,
            leg_at_0,
            leg_at_1,
            ileg_at_0,
            ileg_at_1,
            coupling,
            temporal_mass,
            conversion,
            deriv_pair,
        }
    }

    pub fn check_degree(&self, p: usize) -> Result<(), BasisError> {
        if p > self.max_degree {
            Err(BasisError::DegreeOutOfRange {
                degree: p,
                max: self.max_degree,
            })
        } else {
            Ok(())
        }
    }

    /// (p_t) x (p_t + 1) matrix mapping integrated-Legendre coefficients to
    /// the Legendre coefficients of the temporal L2-best approximation of
    /// degree p_t - 1: convert via C, drop the top Legendre mode.
    pub fn trial_to_test_projection(&self, p_t: usize) -> Mat {
        assert!(p_t >= 1 && p_t <= self.max_degree);
        Mat::from_fn(p_t, p_t + 1, |i, m| self.conversion[(i, m)])
    }

    /// Endpoint trace values of the Legendre basis at a reference face.
    pub fn leg_endpoint(&self, at_one: bool) -> &[f64] {
        if at_one {
            &self.leg_at_1
        } else {
            &self.leg_at_0
        }
    }
}

/// Fast application of the derivative pairing G along a contiguous slice:
/// out[n] = sum_{j > n, j-n odd} 2 sqrt((2n+1)(2j+1)) in[j].
/// Runs in O(p) using suffix sums split by parity.
pub fn deriv_pair_apply(input: &[f64], out: &mut [f64]) {
    let p = input.len();
    debug_assert_eq!(out.len(), p);
    // suffix[parity] = sum of sqrt(2j+1) in[j] over j > n with j % 2 == parity
    let mut suffix = [0.0f64; 2];
    for n in (0..p).rev() {
        out[n] = 2.0 * ((2 * n + 1) as f64).sqrt() * suffix[1 - n % 2];
        suffix[n % 2] += ((2 * n + 1) as f64).sqrt() * input[n];
    }
}

/// Transposed derivative pairing: out[n] = sum_{j < n, n-j odd} 2 sqrt((2n+1)(2j+1)) in[j].
pub fn deriv_pair_apply_transpose(input: &[f64], out: &mut [f64]) {
    let p = input.len();
    debug_assert_eq!(out.len(), p);
    let mut prefix = [0.0f64; 2];
    for n in 0..p {
        out[n] = 2.0 * ((2 * n + 1) as f64).sqrt() * prefix[1 - n % 2];
        prefix[n % 2] += ((2 * n + 1) as f64).sqrt() * input[n];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn legendre_point_values() {
        assert_abs_diff_eq!(legendre_eval(0, 0.3), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(legendre_eval(1, 1.0), 3f64.sqrt(), epsilon = 1e-14);
        // L_2(x) = sqrt(5)(6x^2 - 6x + 1)
        assert_abs_diff_eq!(legendre_eval(2, 0.5), -5f64.sqrt() / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn ilegendre_point_values() {
        assert_abs_diff_eq!(ilegendre_eval(0, 0.25), 0.75, epsilon = 1e-15);
        // int_0^0.5 sqrt(3)(2s-1) ds = -sqrt(3)/4
        assert_abs_diff_eq!(ilegendre_eval(2, 0.5), -3f64.sqrt() / 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ilegendre_eval(3, 1.0), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn gauss_midpoint_and_exactness() {
        let (n, w) = gauss_rule(1).unwrap();
        assert_abs_diff_eq!(n[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-15);
        // 2-point rule integrates x^3 exactly
        let (n, w) = gauss_rule(2).unwrap();
        let v: f64 = n.iter().zip(&w).map(|(x, w)| w * x * x * x).sum();
        assert_abs_diff_eq!(v, 0.25, epsilon = 1e-14);
        // weights always sum to 1
        for k in 1..=20 {
            let (_, w) = gauss_rule(k).unwrap();
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        }
        assert!(gauss_rule(0).is_err());
    }

    #[test]
    fn orthonormality_up_to_max_degree() {
        let p = DEFAULT_MAX_DEGREE;
        let (nodes, weights) = gauss_rule(p + 1).unwrap();
        for i in 0..=p {
            for j in 0..=p {
                let v: f64 = nodes
                    .iter()
                    .zip(&weights)
                    .map(|(&x, &w)| w * legendre_eval(i, x) * legendre_eval(j, x))
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (v - expect).abs() < 1e-13,
                    "orthonormality failed at ({i},{j}): {v}"
                );
            }
        }
    }

    #[test]
    fn bubble_property() {
        for i in 2..=DEFAULT_MAX_DEGREE {
            assert!(ilegendre_eval(i, 0.0).abs() < 1e-14);
            assert!(ilegendre_eval(i, 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn coupling_matrix_structure() {
        let t = Basis1DTables::new(DEFAULT_MAX_DEGREE);
        let d = &t.coupling;
        assert_abs_diff_eq!(d[(0, 0)], -1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(d[(0, 1)], 1.0, epsilon = 1e-13);
        for m in 2..=DEFAULT_MAX_DEGREE {
            for i in 0..=DEFAULT_MAX_DEGREE {
                let expect = if i + 1 == m { 1.0 } else { 0.0 };
                assert!(
                    (d[(i, m)] - expect).abs() < 1e-13,
                    "D[{i}][{m}] = {}",
                    d[(i, m)]
                );
            }
        }
        // rows below 0 for columns 0,1 vanish
        for i in 1..=DEFAULT_MAX_DEGREE {
            assert!(d[(i, 0)].abs() < 1e-13);
            assert!(d[(i, 1)].abs() < 1e-13);
        }
    }

    #[test]
    fn temporal_mass_sparsity() {
        let t = Basis1DTables::new(DEFAULT_MAX_DEGREE);
        for m in 2..=DEFAULT_MAX_DEGREE {
            for i in 0..=DEFAULT_MAX_DEGREE {
                if i != m && i + 2 != m {
                    assert!(
                        t.temporal_mass[(i, m)].abs() < 1e-13,
                        "T[{i}][{m}] = {}",
                        t.temporal_mass[(i, m)]
                    );
                }
            }
        }
    }

    #[test]
    fn recurrence_consistency_unnormalized() {
        // (i+1) Pbar_{i+1} = (2i+1) xi Pbar_i - i Pbar_{i-1} on the shifted domain
        for i in 1..DEFAULT_MAX_DEGREE {
            for k in 0..20 {
                let x = (k as f64 + 0.5) / 20.0;
                let xi = 2.0 * x - 1.0;
                let lhs = (i + 1) as f64 * legendre_unnormalized(i + 1, x);
                let rhs = (2 * i + 1) as f64 * xi * legendre_unnormalized(i, x)
                    - i as f64 * legendre_unnormalized(i - 1, x);
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ilegendre_derivative_matches_finite_difference() {
        let h = 1e-6;
        for i in 2..=DEFAULT_MAX_DEGREE {
            for k in 1..10 {
                let x = k as f64 / 10.0;
                let fd = (ilegendre_eval(i, x + h) - ilegendre_eval(i, x - h)) / (2.0 * h);
                assert!(
                    (fd - legendre_eval(i - 1, x)).abs() < 1e-6,
                    "dl_{i}/dx at {x}"
                );
            }
        }
    }

    #[test]
    fn transfer_matrix_identity_and_oracle() {
        for p in 0..=4 {
            let m = subinterval_transfer_matrix(p, p, 1.0, 0.0, 0.0, 1.0).unwrap();
            assert!(m.identity_deviation() < 1e-13);
        }
        // (1,1, s=2, b=0, I=[0,0.5]) against a dense high-order quadrature oracle
        let m = subinterval_transfer_matrix(1, 1, 2.0, 0.0, 0.0, 0.5).unwrap();
        let (nodes, weights) = gauss_rule(20).unwrap();
        for n in 0..=1 {
            for j in 0..=1 {
                let v: f64 = nodes
                    .iter()
                    .zip(&weights)
                    .filter(|(&x, _)| x <= 0.5)
                    .map(|(&x, &w)| w * legendre_eval(j, 2.0 * x) * legendre_eval(n, x))
                    .sum();
                // the filtered 20-point rule is not exact on the half interval;
                // use an affinely mapped rule instead
                let _ = v;
                let exact: f64 = nodes
                    .iter()
                    .zip(&weights)
                    .map(|(&x, &w)| {
                        let xx = 0.5 * x;
                        0.5 * w * legendre_eval(j, 2.0 * xx) * legendre_eval(n, xx)
                    })
                    .sum();
                assert!((m[(n, j)] - exact).abs() < 1e-13);
            }
        }
        assert!(subinterval_transfer_matrix(1, 1, 2.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn projection_matrix_values_and_idempotence() {
        let t = Basis1DTables::new(8);
        let pi = t.trial_to_test_projection(1);
        assert_abs_diff_eq!(pi[(0, 0)], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(pi[(0, 1)], 0.5, epsilon = 1e-14);
        // idempotence of convert -> truncate -> embed, realized on Legendre
        // coefficients: applying C then truncating fixes polynomials of
        // degree <= p_t - 1 expressed in the l basis.
        let p_t = 3;
        let pi = t.trial_to_test_projection(p_t);
        // random trial coefficients
        let u = [0.3, -1.2, 0.7, 0.25];
        let mut leg = vec![0.0; p_t];
        pi.apply(&u, &mut leg);
        // evaluate both representations where the projected polynomial should
        // reproduce the L2-best approximation: check via quadrature that the
        // defect is orthogonal to the test space
        let (nodes, weights) = gauss_rule(10).unwrap();
        for i in 0..p_t {
            let mut inner = 0.0;
            for (&x, &w) in nodes.iter().zip(&weights) {
                let mut trial = 0.0;
                for m in 0..=p_t {
                    trial += u[m] * ilegendre_eval(m, x);
                }
                let mut proj = 0.0;
                for q in 0..p_t {
                    proj += leg[q] * legendre_eval(q, x);
                }
                inner += w * (trial - proj) * legendre_eval(i, x);
            }
            assert!(inner.abs() < 1e-13, "defect not orthogonal to L_{i}");
        }
    }

    #[test]
    fn fast_deriv_pair_matches_table() {
        let t = Basis1DTables::new(10);
        let p = 10;
        let input: Vec<f64> = (0..=p).map(|k| (k as f64 * 0.7).sin() + 0.3).collect();
        let mut fast = vec![0.0; p + 1];
        deriv_pair_apply(&input, &mut fast);
        for n in 0..=p {
            let mut dense = 0.0;
            for j in 0..=p {
                dense += t.deriv_pair[(n, j)] * input[j];
            }
            assert!((fast[n] - dense).abs() < 1e-10 * dense.abs().max(1.0));
        }
        let mut fast_t = vec![0.0; p + 1];
        deriv_pair_apply_transpose(&input, &mut fast_t);
        for n in 0..=p {
            let mut dense = 0.0;
            for j in 0..=p {
                dense += t.deriv_pair[(j, n)] * input[j];
            }
            assert!((fast_t[n] - dense).abs() < 1e-10 * dense.abs().max(1.0));
        }
    }
}
