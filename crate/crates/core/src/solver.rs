//! Restarted GMRES over the slab unknowns with left preconditioning by the
//! exact inverse of the time-derivative (mass) block, convergence control in
//! the dual norm of the discrete test space, and the guaranteed iteration
//! error bound
//!   eta_it^2 = 4 sum_n [ (2 t_N / eps_min + dt^2 / (2 t_N eps_min)) ||R_E^n||^2
//!                      + (2 t_N / mu_min  + dt^2 / (2 t_N mu_min )) ||R_H^n||^2 ].
//!
//! The Arnoldi process uses modified Gram-Schmidt in the mass-weighted
//! discrete L2 inner product of the test space, so the least-squares residual
//! tracked by the Givens rotations is the W-norm of the preconditioned
//! residual. Convergence is always certified against the true (dual-norm)
//! residual of the unpreconditioned system.

use crate::residual::SlabOperator;
use std::time::Instant;

/// Error conditions of the iteration-error bound.
#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    /// The bound requires a globally uniform temporal partition.
    #[error("iteration error bound is not valid under local time refinement")]
    LocalTimeRefinement,
}

/// Convergence control for a slab solve.
#[derive(Debug, Clone, Copy)]
pub enum ToleranceMode {
    /// Iterate until the combined dual norm drops below `rel_tol` times the
    /// dual norm of the right-hand side.
    Exact { rel_tol: f64 },
    /// Iterate until this slab's contribution to eta_it^2, namely
    /// `coef_e ||R_E||^2 + coef_h ||R_H||^2`, drops below `budget_sq`.
    /// A budget of zero behaves as the exact mode.
    Bounded {
        budget_sq: f64,
        coef_e: f64,
        coef_h: f64,
    },
}

/// GMRES parameters.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Restart length n_r.
    pub restart: usize,
    pub max_iterations: usize,
    pub mode: ToleranceMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            restart: 10,
            max_iterations: 4000,
            mode: ToleranceMode::Exact { rel_tol: 1e-10 },
        }
    }
}

/// Outcome of one slab solve.
#[derive(Debug, Clone, Copy)]
pub struct IterationReport {
    pub iterations: usize,
    /// Dual norms of the final residual per field.
    pub dual_e: f64,
    pub dual_h: f64,
    /// This slab's contribution to eta_it^2 (0 when the coefficients are not
    /// supplied, i.e. in exact mode).
    pub eta_contribution_sq: f64,
    pub converged: bool,
    pub stagnated: bool,
    pub wall_seconds: f64,
}

/// Coefficients of the iteration error bound for one run:
/// `coef = 4 (2 t_N / w_min + dt^2 / (2 t_N w_min))` with w = eps or mu.
pub fn eta_coefficients(dt: f64, t_n: f64, eps_min: f64, mu_min: f64) -> (f64, f64) {
    let f = |w: f64| 4.0 * (2.0 * t_n / w + dt * dt / (2.0 * t_n * w));
    (f(eps_min), f(mu_min))
}

/// Guaranteed bound on the iteration error at the final time from the
/// per-slab dual norms of the unresolved residuals.
///
/// Refuses when local time refinement is present: the underlying estimate
/// requires a temporally unrefined test space.
pub fn iteration_error_bound(
    dual_norms: &[(f64, f64)],
    dt: f64,
    t_n: f64,
    eps_min: f64,
    mu_min: f64,
    local_time_refinement: bool,
) -> Result<f64, SolverError> {
    if local_time_refinement {
        return Err(SolverError::LocalTimeRefinement);
    }
    let (ce, ch) = eta_coefficients(dt, t_n, eps_min, mu_min);
    let mut sum = 0.0;
    for &(re, rh) in dual_norms {
        sum += ce * re * re + ch * rh * rh;
    }
    Ok(sum.sqrt())
}

fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += w[i] * a[i] * b[i];
    }
    s
}

/// Whether the true residual `r = rhs - A x` satisfies the stopping rule.
fn accepted(mode: &ToleranceMode, dual_e: f64, dual_h: f64, rhs_dual: f64) -> bool {
    match *mode {
        ToleranceMode::Exact { rel_tol } => {
            (dual_e * dual_e + dual_h * dual_h).sqrt() <= rel_tol * rhs_dual
        }
        ToleranceMode::Bounded {
            budget_sq,
            coef_e,
            coef_h,
        } => {
            if budget_sq <= 0.0 {
                (dual_e * dual_e + dual_h * dual_h).sqrt() <= 1e-10 * rhs_dual
            } else {
                coef_e * dual_e * dual_e + coef_h * dual_h * dual_h <= budget_sq
            }
        }
    }
}

/// Solve the slab system `A u = rhs` (A = linear part of the residual) with
/// restarted, left-preconditioned GMRES. `warm_start` seeds the iteration;
/// otherwise the preconditioned right-hand side is used.
pub fn solve_slab(
    op: &SlabOperator,
    rhs: &[f64],
    warm_start: Option<&[f64]>,
    config: &SolverConfig,
) -> (Vec<f64>, IterationReport) {
    let t0 = Instant::now();
    let n = rhs.len();
    let weights = op.inner_weights();
    let (rhs_e, rhs_h) = op.dual_norm(rhs);
    let rhs_dual = (rhs_e * rhs_e + rhs_h * rhs_h).sqrt().max(f64::MIN_POSITIVE);

    let mut x = match warm_start {
        Some(w) => w.to_vec(),
        None => op.apply_preconditioner(rhs),
    };

    let residual_of = |x: &[f64]| -> Vec<f64> {
        let ax = op.apply_linear(x);
        (0..n).map(|i| rhs[i] - ax[i]).collect()
    };

    let mut iterations = 0usize;
    let mut converged = false;
    let mut stagnated = false;
    let mut r = residual_of(&x);
    let (mut de, mut dh) = op.dual_norm(&r);

    'outer: while iterations < config.max_iterations {
        if accepted(&config.mode, de, dh, rhs_dual) {
            converged = true;
            break;
        }
        // preconditioned residual starts the Krylov basis
        let z = op.apply_preconditioner(&r);
        let beta = weighted_dot(&weights, &z, &z).sqrt();
        if beta == 0.0 {
            converged = true;
            break;
        }
        // scale relating the true dual norm to the Givens estimate; used only
        // to decide when a candidate solution is worth certifying
        let dual_here = (de * de + dh * dh).sqrt();
        let scale = dual_here / beta;

        let m = config.restart;
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(z.iter().map(|v| v / beta).collect());
        let mut hess = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut prev_est = beta;
        #[allow(unused_assignments)]
        let mut cols = 0usize;

        for j in 0..m {
            if iterations >= config.max_iterations {
                break;
            }
            iterations += 1;
            let av = op.apply_linear(&basis[j]);
            let mut w = op.apply_preconditioner(&av);
            for i in 0..=j {
                let hij = weighted_dot(&weights, &w, &basis[i]);
                hess[i][j] = hij;
                for (wk, bk) in w.iter_mut().zip(&basis[i]) {
                    *wk -= hij * bk;
                }
            }
            let hnext = weighted_dot(&weights, &w, &w).sqrt();
            hess[j + 1][j] = hnext;
            cols = j + 1;
            let happy = hnext < 1e-14 * beta.max(1.0);
            if !happy {
                basis.push(w.iter().map(|v| v / hnext).collect());
            }
            // apply previous Givens rotations to the new column
            for i in 0..j {
                let t = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = t;
            }
            let denom = (hess[j][j] * hess[j][j] + hess[j + 1][j] * hess[j + 1][j]).sqrt();
            if denom == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = hess[j][j] / denom;
                sn[j] = hess[j + 1][j] / denom;
            }
            hess[j][j] = denom;
            hess[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            let est = g[j + 1].abs();
            // the least-squares residual cannot grow within a cycle
            assert!(
                est <= prev_est * (1.0 + 1e-12) + 1e-300,
                "GMRES residual estimate increased within a restart cycle"
            );
            prev_est = est;

            // certify the true residual when the estimate suggests the
            // stopping rule may hold, on happy breakdown, or at cycle end
            let candidate_dual = est * scale;
            let promising = match config.mode {
                ToleranceMode::Exact { rel_tol } => candidate_dual <= rel_tol * rhs_dual,
                ToleranceMode::Bounded { budget_sq, .. } => {
                    budget_sq <= 0.0 && candidate_dual <= 1e-10 * rhs_dual
                        || budget_sq > 0.0
                            && candidate_dual * candidate_dual
                                <= budget_sq / eta_scale(&config.mode)
                }
            };
            let last = happy || j + 1 == m || iterations >= config.max_iterations;
            if promising || last {
                let y = back_substitute(&hess, &g, cols);
                let mut xc = x.clone();
                for (i, yi) in y.iter().enumerate() {
                    for (xk, bk) in xc.iter_mut().zip(&basis[i]) {
                        *xk += yi * bk;
                    }
                }
                let rc = residual_of(&xc);
                let (ce, ch) = op.dual_norm(&rc);
                if accepted(&config.mode, ce, ch, rhs_dual) {
                    x = xc;
                    de = ce;
                    dh = ch;
                    converged = true;
                    break 'outer;
                }
                if last {
                    // stagnation: a whole cycle without meaningful progress
                    let old = (de * de + dh * dh).sqrt();
                    let new = (ce * ce + ch * ch).sqrt();
                    if new > 0.999 * old {
                        stagnated = true;
                    }
                    x = xc;
                    r = rc;
                    de = ce;
                    dh = ch;
                    if happy || stagnated && new >= old {
                        break 'outer;
                    }
                    break;
                }
            }
            if happy {
                break;
            }
        }
    }
    if accepted(&config.mode, de, dh, rhs_dual) {
        converged = true;
    }

    let eta_contribution_sq = match config.mode {
        ToleranceMode::Bounded { coef_e, coef_h, .. } => coef_e * de * de + coef_h * dh * dh,
        ToleranceMode::Exact { .. } => 0.0,
    };
    let report = IterationReport {
        iterations,
        dual_e: de,
        dual_h: dh,
        eta_contribution_sq,
        converged,
        stagnated,
        wall_seconds: t0.elapsed().as_secs_f64(),
    };
    (x, report)
}

/// Larger of the two bound coefficients, used to translate a Givens estimate
/// into a conservative eta contribution guess.
fn eta_scale(mode: &ToleranceMode) -> f64 {
    match *mode {
        ToleranceMode::Bounded { coef_e, coef_h, .. } => coef_e.max(coef_h).max(1e-300),
        ToleranceMode::Exact { .. } => 1.0,
    }
}

fn back_substitute(hess: &[Vec<f64>], g: &[f64], cols: usize) -> Vec<f64> {
    let mut y = vec![0.0f64; cols];
    for i in (0..cols).rev() {
        let mut s = g[i];
        for j in i + 1..cols {
            s -= hess[i][j] * y[j];
        }
        y[i] = if hess[i][i] != 0.0 { s / hess[i][i] } else { 0.0 };
    }
    y
}
