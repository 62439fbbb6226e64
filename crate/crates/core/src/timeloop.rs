//! Slab-by-slab time marching: initial data by L2 projection, per-slab
//! solves, inter-slab transfer, and diagnostics.
//!
//! The discrete electromagnetic energy at a slab node,
//!   E(t_n) = 1/2 ( ||sqrt(eps) E_h(t_n)||^2 + ||sqrt(mu) H_h(t_n)||^2 ),
//! is evaluated exactly from the expansion coefficients because the spatial
//! basis is orthonormal in reference coordinates. With zero sources and
//! homogeneous boundary data the scheme conserves this energy exactly (up to
//! solver tolerance), including under local time refinement, as long as the
//! dissipative penalty is switched off.

use crate::basis1d::{gauss_rule, ilegendre_eval_all, legendre_eval_all};
use crate::fespace::{
    dof_layout, state_from_unknowns, transfer_between_slabs, DegreeVector, DofLayout, FieldState,
    SpaceDescriptor, SpatialField,
};
use crate::mesh::{element_jacobian, set_temporal_levels, SpatialMesh};
use crate::residual::{SlabOperator, FIELD_E};
use crate::solver::{
    eta_coefficients, iteration_error_bound, solve_slab, IterationReport, SolverConfig,
    ToleranceMode,
};
use std::sync::Arc;

type FieldFn = Box<dyn Fn([f64; 3], f64) -> [f64; 3] + Send + Sync>;

/// Closed-form reference solution with source and boundary data.
pub struct AnalyticSolution {
    pub tag: String,
    /// Electric field E(x, t).
    pub e: FieldFn,
    /// Magnetic field H(x, t).
    pub h: FieldFn,
    /// Volume current J(x, t); `None` means identically zero.
    pub j: Option<FieldFn>,
    /// Prescribed tangential boundary field g(x, t); `None` means PEC (g = 0).
    pub g: Option<FieldFn>,
}

/// Standing TM(m, n) cavity mode on the unit square cross-section:
/// E_z = sin(m pi x) sin(n pi y) cos(w t) with w = pi sqrt(m^2 + n^2);
/// H follows from integrating the induction law; J = 0, g = 0 (PEC).
pub fn make_tm_mode(m: usize, n: usize) -> AnalyticSolution {
    let mf = m as f64;
    let nf = n as f64;
    let omega = std::f64::consts::PI * (mf * mf + nf * nf).sqrt();
    let pi = std::f64::consts::PI;
    AnalyticSolution {
        tag: format!("tm_{m}_{n}"),
        e: Box::new(move |x, t| {
            [
                0.0,
                0.0,
                (mf * pi * x[0]).sin() * (nf * pi * x[1]).sin() * (omega * t).cos(),
            ]
        }),
        h: Box::new(move |x, t| {
            let s = (omega * t).sin();
            [
                -(nf * pi / omega) * (mf * pi * x[0]).sin() * (nf * pi * x[1]).cos() * s,
                (mf * pi / omega) * (mf * pi * x[0]).cos() * (nf * pi * x[1]).sin() * s,
                0.0,
            ]
        }),
        j: None,
        g: None,
    }
}

/// Polynomial-in-space test solution on the unit cube:
/// E = e^t x(x-1) z(1-z) e_y, H = e^t x(x-1)(1-2z) e_x - e^t (2x-1) z(1-z) e_z,
/// driven by the current J = eps dE/dt - curl H. The tangential electric
/// field vanishes on the whole boundary, so g = 0.
pub fn make_verwer(eps: f64) -> AnalyticSolution {
    AnalyticSolution {
        tag: "verwer".to_string(),
        e: Box::new(|x, t| [0.0, t.exp() * x[0] * (x[0] - 1.0) * x[2] * (1.0 - x[2]), 0.0]),
        h: Box::new(|x, t| {
            let et = t.exp();
            [
                et * x[0] * (x[0] - 1.0) * (1.0 - 2.0 * x[2]),
                0.0,
                -et * (2.0 * x[0] - 1.0) * x[2] * (1.0 - x[2]),
            ]
        }),
        j: Some(Box::new(move |x, t| {
            let et = t.exp();
            let xx = x[0] * (x[0] - 1.0);
            let zz = x[2] * (1.0 - x[2]);
            // (curl H)_y = d_z H_x - d_x H_z = -2 e^t x(x-1) + 2 e^t z(1-z)
            [0.0, eps * et * xx * zz + 2.0 * et * xx - 2.0 * et * zz, 0.0]
        })),
        g: None,
    }
}

/// Spatial L2 projection of analytic fields at one time instant.
pub fn l2_project_spatial(
    space: &SpaceDescriptor,
    layout: &DofLayout,
    f: &dyn Fn(usize, [f64; 3]) -> [f64; 3],
) -> SpatialField {
    let mut data = vec![0.0; layout.spatial_total];
    for (e, m) in layout.meta.iter().enumerate() {
        let elem = &space.mesh.elements[e];
        let nq = [m.np[0] + 1, m.np[1] + 1, m.np[2] + 1];
        let rules: Vec<(Vec<f64>, Vec<f64>)> = nq.iter().map(|&n| gauss_rule(n).unwrap()).collect();
        let mut lx: Vec<Vec<f64>> = (0..3).map(|d| vec![0.0; m.np[d]]).collect();
        for q0 in 0..nq[0] {
            for q1 in 0..nq[1] {
                for q2 in 0..nq[2] {
                    let qs = [q0, q1, q2];
                    let mut x = [0.0; 3];
                    let mut w = 1.0;
                    for d in 0..3 {
                        let xr = rules[d].0[qs[d]];
                        x[d] = elem.origin[d] + elem.h[d] * xr;
                        w *= rules[d].1[qs[d]];
                        legendre_eval_all(m.np[d] - 1, xr, &mut lx[d]);
                    }
                    for field in 0..2 {
                        let v = f(field, x);
                        for c in 0..3 {
                            if v[c] == 0.0 {
                                continue;
                            }
                            // reference coefficients carry the factor h_c
                            let vc = elem.h[c] * v[c] * w;
                            for j0 in 0..m.np[0] {
                                for j1 in 0..m.np[1] {
                                    let wj = vc * lx[0][j0] * lx[1][j1];
                                    for j2 in 0..m.np[2] {
                                        data[m.sp_idx(field, c, m.spatial_idx([j0, j1, j2]))] +=
                                            wj * lx[2][j2];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    SpatialField { data }
}

/// Discrete electromagnetic energy of a slab-node trace.
pub fn energy(space: &SpaceDescriptor, layout: &DofLayout, trace: &SpatialField) -> f64 {
    let mut total = 0.0;
    for (e, m) in layout.meta.iter().enumerate() {
        let elem = &space.mesh.elements[e];
        let (_, jac) = element_jacobian(elem);
        for field in 0..2 {
            let mat = if field == FIELD_E { elem.eps } else { elem.mu };
            for c in 0..3 {
                let w = mat * jac / (elem.h[c] * elem.h[c]);
                for s in 0..m.n_sp {
                    let v = trace.data[m.sp_idx(field, c, s)];
                    total += w * v * v;
                }
            }
        }
    }
    0.5 * total
}

/// Evaluate a spatial tensor-product expansion at all tensor quadrature
/// points by successive single-axis contractions.
pub(crate) fn tensor_eval(
    coeffs: &[f64],
    np: [usize; 3],
    tabs: &[Vec<Vec<f64>>; 3],
    nq: [usize; 3],
) -> Vec<f64> {
    // axis 0
    let mut a = vec![0.0; nq[0] * np[1] * np[2]];
    for q0 in 0..nq[0] {
        for j0 in 0..np[0] {
            let l = tabs[0][q0][j0];
            if l == 0.0 {
                continue;
            }
            let src = &coeffs[j0 * np[1] * np[2]..(j0 + 1) * np[1] * np[2]];
            let dst = &mut a[q0 * np[1] * np[2]..(q0 + 1) * np[1] * np[2]];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += l * s;
            }
        }
    }
    // axis 1
    let mut b = vec![0.0; nq[0] * nq[1] * np[2]];
    for q0 in 0..nq[0] {
        for q1 in 0..nq[1] {
            for j1 in 0..np[1] {
                let l = tabs[1][q1][j1];
                if l == 0.0 {
                    continue;
                }
                let src = &a[(q0 * np[1] + j1) * np[2]..(q0 * np[1] + j1 + 1) * np[2]];
                let dst =
                    &mut b[(q0 * nq[1] + q1) * np[2]..(q0 * nq[1] + q1 + 1) * np[2]];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += l * s;
                }
            }
        }
    }
    // axis 2
    let mut out = vec![0.0; nq[0] * nq[1] * nq[2]];
    for qq in 0..nq[0] * nq[1] {
        for q2 in 0..nq[2] {
            let mut v = 0.0;
            for j2 in 0..np[2] {
                v += tabs[2][q2][j2] * b[qq * np[2] + j2];
            }
            out[qq * nq[2] + q2] = v;
        }
    }
    out
}

/// Error norms of a slab solution against an analytic reference:
/// the nodal L2(Omega) error at the slab end and the squared
/// L2(slab; L2(Omega)) error, by Gauss quadrature with p+3 points per
/// direction in space and time.
pub fn slab_error_norms(
    space: &SpaceDescriptor,
    layout: &DofLayout,
    trial: &FieldState,
    analytic: &AnalyticSolution,
) -> (f64, f64) {
    let t_end = space.partition.t_end;
    let mut nodal_sq = 0.0;
    let mut slab_sq = 0.0;
    for (e, m) in layout.meta.iter().enumerate() {
        let elem = &space.mesh.elements[e];
        let (_, jac) = element_jacobian(elem);
        let nq = [m.np[0] + 2, m.np[1] + 2, m.np[2] + 2];
        let nq_t = m.p_t + 3;
        let rules: Vec<(Vec<f64>, Vec<f64>)> = nq.iter().map(|&n| gauss_rule(n).unwrap()).collect();
        let (tn, tw) = gauss_rule(nq_t).unwrap();
        // spatial basis at quadrature nodes
        let mut tabs: [Vec<Vec<f64>>; 3] = [vec![], vec![], vec![]];
        for d in 0..3 {
            tabs[d] = (0..nq[d])
                .map(|q| {
                    let mut row = vec![0.0; m.np[d]];
                    legendre_eval_all(m.np[d] - 1, rules[d].0[q], &mut row);
                    row
                })
                .collect();
        }
        let n_q = nq[0] * nq[1] * nq[2];
        // physical quadrature points and weights
        let mut pts = vec![[0.0f64; 3]; n_q];
        let mut wts = vec![0.0f64; n_q];
        let mut idx = 0;
        for q0 in 0..nq[0] {
            for q1 in 0..nq[1] {
                for q2 in 0..nq[2] {
                    pts[idx] = [
                        elem.origin[0] + elem.h[0] * rules[0].0[q0],
                        elem.origin[1] + elem.h[1] * rules[1].0[q1],
                        elem.origin[2] + elem.h[2] * rules[2].0[q2],
                    ];
                    wts[idx] = jac * rules[0].1[q0] * rules[1].1[q1] * rules[2].1[q2];
                    idx += 1;
                }
            }
        }
        let mut lt = vec![0.0; m.p_t + 1];
        let mut coeffs = vec![0.0f64; m.n_sp];
        for field in 0..2 {
            let af = if field == FIELD_E {
                &analytic.e
            } else {
                &analytic.h
            };
            for c in 0..3 {
                // accumulated error over the slab
                for k in 0..m.n_sub {
                    let (t0, t1) = space.partition.sub_interval(e, k);
                    for (qt, (&tr, &twt)) in tn.iter().zip(tw.iter()).enumerate() {
                        let _ = qt;
                        let t = t0 + (t1 - t0) * tr;
                        ilegendre_eval_all(m.p_t, tr, &mut lt);
                        for s in 0..m.n_sp {
                            let mut v = 0.0;
                            for i in 0..=m.p_t {
                                v += lt[i] * trial.data[m.trial_idx(field, k, c, i, s)];
                            }
                            coeffs[s] = v;
                        }
                        let vals = tensor_eval(&coeffs, m.np, &tabs, nq);
                        let mut acc = 0.0;
                        for (q, &v) in vals.iter().enumerate() {
                            let exact = af(pts[q], t)[c];
                            let d = v / elem.h[c] - exact;
                            acc += wts[q] * d * d;
                        }
                        slab_sq += (t1 - t0) * twt * acc;
                    }
                }
                // nodal error at the slab end (l_1 block of the last
                // sub-interval carries the end values)
                let k = m.n_sub - 1;
                for s in 0..m.n_sp {
                    coeffs[s] = trial.data[m.trial_idx(field, k, c, 1, s)];
                }
                let vals = tensor_eval(&coeffs, m.np, &tabs, nq);
                for (q, &v) in vals.iter().enumerate() {
                    let exact = af(pts[q], t_end)[c];
                    let d = v / elem.h[c] - exact;
                    nodal_sq += wts[q] * d * d;
                }
            }
        }
    }
    (nodal_sq.sqrt(), slab_sq)
}

/// Nodal L2 error of a spatial trace against the analytic fields at time t.
pub fn trace_error(
    space: &SpaceDescriptor,
    layout: &DofLayout,
    trace: &SpatialField,
    analytic: &AnalyticSolution,
    t: f64,
) -> f64 {
    let mut sq = 0.0;
    for (e, m) in layout.meta.iter().enumerate() {
        let elem = &space.mesh.elements[e];
        let (_, jac) = element_jacobian(elem);
        let nq = [m.np[0] + 2, m.np[1] + 2, m.np[2] + 2];
        let rules: Vec<(Vec<f64>, Vec<f64>)> = nq.iter().map(|&n| gauss_rule(n).unwrap()).collect();
        let mut tabs: [Vec<Vec<f64>>; 3] = [vec![], vec![], vec![]];
        for d in 0..3 {
            tabs[d] = (0..nq[d])
                .map(|q| {
                    let mut row = vec![0.0; m.np[d]];
                    legendre_eval_all(m.np[d] - 1, rules[d].0[q], &mut row);
                    row
                })
                .collect();
        }
        let mut coeffs = vec![0.0f64; m.n_sp];
        for field in 0..2 {
            let af = if field == FIELD_E {
                &analytic.e
            } else {
                &analytic.h
            };
            for c in 0..3 {
                for s in 0..m.n_sp {
                    coeffs[s] = trace.data[m.sp_idx(field, c, s)];
                }
                let vals = tensor_eval(&coeffs, m.np, &tabs, nq);
                let mut idx = 0;
                for q0 in 0..nq[0] {
                    for q1 in 0..nq[1] {
                        for q2 in 0..nq[2] {
                            let x = [
                                elem.origin[0] + elem.h[0] * rules[0].0[q0],
                                elem.origin[1] + elem.h[1] * rules[1].0[q1],
                                elem.origin[2] + elem.h[2] * rules[2].0[q2],
                            ];
                            let w = jac * rules[0].1[q0] * rules[1].1[q1] * rules[2].1[q2];
                            let d = vals[idx] / elem.h[c] - af(x, t)[c];
                            sq += w * d * d;
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
    sq.sqrt()
}

/// One record per completed slab.
#[derive(Debug, Clone, Copy)]
pub struct SlabRecord {
    pub t_end: f64,
    pub energy: f64,
    pub nodal_error: f64,
    pub slab_error_sq: f64,
    pub report: IterationReport,
}

/// Accumulated results of a fixed-space run.
pub struct RunTrace {
    pub initial_energy: f64,
    pub initial_error: f64,
    pub records: Vec<SlabRecord>,
    pub eta_it: Option<f64>,
    pub final_trace: SpatialField,
    pub final_state: FieldState,
    pub total_iterations: usize,
    pub total_volume_flux_flops: u64,
}

impl RunTrace {
    /// Accumulated L2(time; L2(Omega)) error over the whole run.
    pub fn accumulated_error(&self) -> f64 {
        self.records.iter().map(|r| r.slab_error_sq).sum::<f64>().sqrt()
    }
    pub fn max_nodal_error(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.nodal_error)
            .fold(self.initial_error, f64::max)
    }
    pub fn final_energy(&self) -> f64 {
        self.records.last().map_or(self.initial_energy, |r| r.energy)
    }
}

/// Options of a fixed-space run.
pub struct RunOptions {
    pub t_end: f64,
    pub n_slabs: usize,
    pub dissipation_c: f64,
    pub solver: SolverConfig,
    /// Total iteration-error budget eta_it*; `Some` switches the solver to
    /// bounded mode with an equal per-slab allocation.
    pub eta_budget: Option<f64>,
    /// Warm-start each slab from the previous slab's unknowns.
    pub warm_start: bool,
    /// Skip error quadrature (diagnostics only need energy/iterations).
    pub compute_errors: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            t_end: 1.0,
            n_slabs: 1,
            dissipation_c: 0.0,
            solver: SolverConfig::default(),
            eta_budget: None,
            warm_start: true,
            compute_errors: true,
        }
    }
}

/// Default slab length h_min / (2 p_max + 1).
pub fn default_dt(mesh: &SpatialMesh, degrees: &[DegreeVector]) -> f64 {
    let p_max = degrees
        .iter()
        .flat_map(|d| d.p.iter().copied())
        .max()
        .unwrap_or(1);
    mesh.h_min() / (2.0 * p_max as f64 + 1.0)
}

/// March a fixed discretization over [0, t_end] with n_slabs uniform slabs.
pub fn run_fixed_space(
    mesh: Arc<SpatialMesh>,
    levels: Vec<u8>,
    degrees: Vec<DegreeVector>,
    analytic: Option<&AnalyticSolution>,
    opts: &RunOptions,
) -> RunTrace {
    let dt = opts.t_end / opts.n_slabs as f64;
    let local_time_refinement = levels.iter().any(|&l| l != levels[0]);
    let eps_min = mesh.eps_min();
    let mu_min = mesh.mu_min();
    let (ce, ch) = eta_coefficients(dt, opts.t_end, eps_min, mu_min);

    // initial data
    let part0 = set_temporal_levels(0.0, dt, levels.clone());
    let space0 = SpaceDescriptor::new(mesh.clone(), part0, degrees.clone());
    let layout0 = dof_layout(&space0);
    let mut trace = match analytic {
        Some(a) => l2_project_spatial(&space0, &layout0, &|field, x| {
            if field == FIELD_E {
                (a.e)(x, 0.0)
            } else {
                (a.h)(x, 0.0)
            }
        }),
        None => SpatialField::zeros(&layout0),
    };
    let initial_energy = energy(&space0, &layout0, &trace);
    let initial_error = match (analytic, opts.compute_errors) {
        (Some(a), true) => trace_error(&space0, &layout0, &trace, a, 0.0),
        _ => 0.0,
    };

    let mut records = Vec::with_capacity(opts.n_slabs);
    let mut dual_norms: Vec<(f64, f64)> = Vec::new();
    let mut warm: Option<Vec<f64>> = None;
    let mut total_iterations = 0usize;
    let mut flops = 0u64;
    let mut final_state = None;

    for s in 0..opts.n_slabs {
        let t0 = s as f64 * dt;
        let part = set_temporal_levels(t0, t0 + dt, levels.clone());
        let space = SpaceDescriptor::new(mesh.clone(), part, degrees.clone());
        let op = SlabOperator::new(space, opts.dissipation_c);
        let loads = match analytic {
            Some(a) => op.build_loads(
                a.j.as_ref().map(|f| f as &dyn Fn([f64; 3], f64) -> [f64; 3]),
                a.g.as_ref().map(|f| f as &dyn Fn([f64; 3], f64) -> [f64; 3]),
            ),
            None => vec![0.0; op.layout.total],
        };
        let rhs = op.rhs(&trace, &loads);
        let mode = match opts.eta_budget {
            Some(budget) => ToleranceMode::Bounded {
                budget_sq: budget * budget / opts.n_slabs as f64,
                coef_e: ce,
                coef_h: ch,
            },
            None => opts.solver.mode,
        };
        let cfg = SolverConfig { mode, ..opts.solver };
        let (u, report) = solve_slab(&op, &rhs, warm.as_deref(), &cfg);
        total_iterations += report.iterations;
        flops += op.counters.borrow().total_volume_flux();
        dual_norms.push((report.dual_e, report.dual_h));
        let state = state_from_unknowns(&op.layout, &u, &trace);
        trace = crate::fespace::end_trace(&op.layout, &state);
        let en = energy(&op.space, &op.layout, &trace);
        let (nodal, slab_sq) = match (analytic, opts.compute_errors) {
            (Some(a), true) => slab_error_norms(&op.space, &op.layout, &state, a),
            _ => (0.0, 0.0),
        };
        records.push(SlabRecord {
            t_end: t0 + dt,
            energy: en,
            nodal_error: nodal,
            slab_error_sq: slab_sq,
            report,
        });
        if opts.warm_start {
            warm = Some(u);
        }
        final_state = Some(state);
    }

    let eta_it = iteration_error_bound(
        &dual_norms,
        dt,
        opts.t_end,
        eps_min,
        mu_min,
        local_time_refinement,
    )
    .ok();
    let final_state = final_state.unwrap_or(FieldState {
        basis: crate::fespace::TimeBasis::Trial,
        data: vec![0.0; layout0.trial_total],
    });
    RunTrace {
        initial_energy,
        initial_error,
        records,
        eta_it,
        final_trace: trace,
        final_state,
        total_iterations,
        total_volume_flux_flops: flops,
    }
}

/// Advance one slab on a possibly different space than the previous one:
/// the incoming trace is L2-projected onto the new space first.
#[allow(clippy::too_many_arguments)]
pub fn advance_slab(
    old_space: &SpaceDescriptor,
    old_layout: &DofLayout,
    trace: &SpatialField,
    op: &SlabOperator,
    analytic: Option<&AnalyticSolution>,
    warm: Option<&[f64]>,
    cfg: &SolverConfig,
) -> (FieldState, Vec<f64>, IterationReport) {
    let init = transfer_between_slabs(old_space, old_layout, trace, &op.space, &op.layout);
    let loads = match analytic {
        Some(a) => op.build_loads(
            a.j.as_ref().map(|f| f as &dyn Fn([f64; 3], f64) -> [f64; 3]),
            a.g.as_ref().map(|f| f as &dyn Fn([f64; 3], f64) -> [f64; 3]),
        ),
        None => vec![0.0; op.layout.total],
    };
    let rhs = op.rhs(&init, &loads);
    let (u, report) = solve_slab(op, &rhs, warm, cfg);
    let state = state_from_unknowns(&op.layout, &u, &init);
    (state, u, report)
}

/// Source term of the discrete energy identity over one slab:
/// <J, pi E> - <n x g, pi H>, evaluated as the load vector contracted with
/// the test-space projection of the discrete solution.
pub fn energy_source_term(op: &SlabOperator, state: &FieldState, loads: &[f64]) -> f64 {
    let pu = crate::fespace::project_trial_to_test(&op.layout, &op.tables, state);
    loads.iter().zip(&pu.data).map(|(l, c)| l * c).sum()
}

pub use crate::fespace::end_trace;
