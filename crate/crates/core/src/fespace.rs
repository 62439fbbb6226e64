//! Degree bookkeeping, DOF layout, temporal continuity chaining and the
//! temporal projections coupling trial, test and face-common spaces.
//!
//! Per space-time element I_k x K the trial space uses integrated-Legendre
//! polynomials l_0..l_{p_t} in time (time-continuous within the slab after
//! chaining) and orthonormal Legendre tensor products in space; the test
//! space uses Legendre L_0..L_{p_t-1} in time with the same spatial part.
//! Fields transform covariantly, v = DF^{-T} v_ref o F^{-1}, so reference
//! coefficients carry a factor h_c on component c.

use crate::basis1d::{
    gauss_rule, ilegendre_eval_all, legendre_eval_all, subinterval_transfer_matrix, Basis1DTables,
};
use crate::linalg::{solve_dense, Mat};
use crate::mesh::{SpatialMesh, TemporalPartition};
use std::sync::Arc;

/// Per-element polynomial degrees: temporal p_t >= 1 and spatial (p_x, p_y, p_z).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DegreeVector {
    pub p_t: usize,
    pub p: [usize; 3],
}

impl DegreeVector {
    pub fn n_sp(&self) -> usize {
        (self.p[0] + 1) * (self.p[1] + 1) * (self.p[2] + 1)
    }
}

/// A complete discrete space for one slab: mesh, temporal partition and
/// per-element degrees.
#[derive(Debug, Clone)]
pub struct SpaceDescriptor {
    pub mesh: Arc<SpatialMesh>,
    pub partition: TemporalPartition,
    pub degrees: Vec<DegreeVector>,
}

impl SpaceDescriptor {
    pub fn new(mesh: Arc<SpatialMesh>, partition: TemporalPartition, degrees: Vec<DegreeVector>) -> Self {
        assert_eq!(mesh.n_elements(), partition.levels.len());
        assert_eq!(mesh.n_elements(), degrees.len());
        assert!(degrees.iter().all(|d| d.p_t >= 1));
        SpaceDescriptor {
            mesh,
            partition,
            degrees,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.mesh.n_elements()
    }

    pub fn max_degree(&self) -> usize {
        self.degrees
            .iter()
            .flat_map(|d| [d.p_t, d.p[0], d.p[1], d.p[2]])
            .max()
            .unwrap_or(1)
    }
}

/// Per-element layout metadata. Unknown/test vectors carry temporal modes
/// 0..p_t-1 (l_{m+1} for unknowns, L_m for test rows); trial vectors carry
/// 0..=p_t. Block order within an element: (field, sub-interval, component,
/// temporal, spatial), spatial linearized x-major / z-innermost.
#[derive(Debug, Clone, Copy)]
pub struct ElemMeta {
    pub n_sub: usize,
    pub p_t: usize,
    pub np: [usize; 3],
    pub n_sp: usize,
    /// Start of the element block in unknown/test vectors.
    pub offset: usize,
    /// Start of the element block in trial vectors.
    pub trial_offset: usize,
    /// Start of the element block in spatial-trace vectors.
    pub spatial_offset: usize,
}

impl ElemMeta {
    #[inline]
    pub fn spatial_idx(&self, j: [usize; 3]) -> usize {
        (j[0] * self.np[1] + j[1]) * self.np[2] + j[2]
    }

    /// Index into unknown/test vectors; m in 0..p_t.
    #[inline]
    pub fn idx(&self, field: usize, k: usize, c: usize, m: usize, s: usize) -> usize {
        self.offset + ((((field * self.n_sub + k) * 3 + c) * self.p_t) + m) * self.n_sp + s
    }

    /// Index into trial vectors; i in 0..=p_t.
    #[inline]
    pub fn trial_idx(&self, field: usize, k: usize, c: usize, i: usize, s: usize) -> usize {
        self.trial_offset
            + ((((field * self.n_sub + k) * 3 + c) * (self.p_t + 1)) + i) * self.n_sp
            + s
    }

    /// Index into spatial-trace vectors.
    #[inline]
    pub fn sp_idx(&self, field: usize, c: usize, s: usize) -> usize {
        self.spatial_offset + (field * 3 + c) * self.n_sp + s
    }
}

#[derive(Debug, Clone)]
pub struct DofLayout {
    pub meta: Vec<ElemMeta>,
    /// Length of unknown/test vectors.
    pub total: usize,
    /// Length of trial vectors.
    pub trial_total: usize,
    /// Length of spatial-trace vectors.
    pub spatial_total: usize,
}

/// Deterministic contiguous layout over all elements of a slab space.
pub fn dof_layout(space: &SpaceDescriptor) -> DofLayout {
    let mut meta = Vec::with_capacity(space.n_elements());
    let (mut off, mut toff, mut soff) = (0usize, 0usize, 0usize);
    for e in 0..space.n_elements() {
        let d = space.degrees[e];
        let n_sub = space.partition.n_sub(e);
        let n_sp = d.n_sp();
        let m = ElemMeta {
            n_sub,
            p_t: d.p_t,
            np: [d.p[0] + 1, d.p[1] + 1, d.p[2] + 1],
            n_sp,
            offset: off,
            trial_offset: toff,
            spatial_offset: soff,
        };
        off += 2 * n_sub * 3 * d.p_t * n_sp;
        toff += 2 * n_sub * 3 * (d.p_t + 1) * n_sp;
        soff += 2 * 3 * n_sp;
        meta.push(m);
    }
    DofLayout {
        meta,
        total: off,
        trial_total: toff,
        spatial_total: soff,
    }
}

/// Which temporal basis a coefficient vector is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeBasis {
    /// Integrated Legendre l_0..l_{p_t}, chained across sub-intervals.
    Trial,
    /// Legendre L_0..L_{p_t-1} per sub-interval (also used for residuals).
    Test,
}

/// Coefficient vector for both fields on one slab space.
#[derive(Debug, Clone)]
pub struct FieldState {
    pub basis: TimeBasis,
    pub data: Vec<f64>,
}

/// Purely spatial coefficient vector (slab-node traces, initial data).
#[derive(Debug, Clone)]
pub struct SpatialField {
    pub data: Vec<f64>,
}

impl SpatialField {
    pub fn zeros(layout: &DofLayout) -> Self {
        SpatialField {
            data: vec![0.0; layout.spatial_total],
        }
    }
}

/// Expand an unknown vector into a chained trial state: within each
/// macro-element the l_0 block of sub-interval k+1 equals the l_1 block of
/// sub-interval k, and the first l_0 block carries the initial data.
pub fn state_from_unknowns(
    layout: &DofLayout,
    u: &[f64],
    initial: &SpatialField,
) -> FieldState {
    assert_eq!(u.len(), layout.total);
    let mut data = vec![0.0; layout.trial_total];
    for m in &layout.meta {
        for field in 0..2 {
            for c in 0..3 {
                for s in 0..m.n_sp {
                    let mut left = initial.data[m.sp_idx(field, c, s)];
                    for k in 0..m.n_sub {
                        data[m.trial_idx(field, k, c, 0, s)] = left;
                        for mm in 1..=m.p_t {
                            data[m.trial_idx(field, k, c, mm, s)] =
                                u[m.idx(field, k, c, mm - 1, s)];
                        }
                        left = data[m.trial_idx(field, k, c, 1, s)];
                    }
                }
            }
        }
    }
    FieldState {
        basis: TimeBasis::Trial,
        data,
    }
}

/// Inverse of [`state_from_unknowns`]: strip the chained l_0 blocks.
pub fn unknowns_from_state(layout: &DofLayout, state: &FieldState) -> Vec<f64> {
    assert_eq!(state.basis, TimeBasis::Trial);
    let mut u = vec![0.0; layout.total];
    for m in &layout.meta {
        for field in 0..2 {
            for k in 0..m.n_sub {
                for c in 0..3 {
                    for mm in 1..=m.p_t {
                        for s in 0..m.n_sp {
                            u[m.idx(field, k, c, mm - 1, s)] =
                                state.data[m.trial_idx(field, k, c, mm, s)];
                        }
                    }
                }
            }
        }
    }
    u
}

/// L2-orthogonal projection in time from the trial onto the test space:
/// convert integrated-Legendre coefficients to Legendre and drop the top mode.
pub fn project_trial_to_test(
    layout: &DofLayout,
    tables: &Basis1DTables,
    trial: &FieldState,
) -> FieldState {
    assert_eq!(trial.basis, TimeBasis::Trial);
    let mut data = vec![0.0; layout.total];
    for m in &layout.meta {
        for field in 0..2 {
            for k in 0..m.n_sub {
                for c in 0..3 {
                    for i in 0..m.p_t {
                        for mm in 0..=m.p_t {
                            let conv = tables.conversion[(i, mm)];
                            if conv == 0.0 {
                                continue;
                            }
                            for s in 0..m.n_sp {
                                data[m.idx(field, k, c, i, s)] +=
                                    conv * trial.data[m.trial_idx(field, k, c, mm, s)];
                            }
                        }
                    }
                }
            }
        }
    }
    FieldState {
        basis: TimeBasis::Test,
        data,
    }
}

/// Temporal coupling matrix of a space-time face.
///
/// Rows are indexed by (sub-interval k_row, test mode i < p_test) of the row
/// side; columns by (sub-interval k_col, Legendre trace mode q <= p_trace) of
/// the column side. The entry is the physical time integral over the slab of
/// L_i(row param) against either the raw column trace (projection = None;
/// only meaningful when both sides share the partition) or its L2 projection
/// onto the common space of dyadic level `lc` with per-interval degree `pd`
/// (projection = Some((lc, pd))).
pub fn temporal_face_matrix(
    slab_len: f64,
    l_row: u8,
    p_test: usize,
    l_col: u8,
    p_trace: usize,
    projection: Option<(u8, usize)>,
) -> Mat {
    let n_row = 1usize << l_row;
    let n_col = 1usize << l_col;
    let tau_row = slab_len / n_row as f64;
    match projection {
        None => {
            assert_eq!(l_row, l_col, "plain pairing requires a shared partition");
            let mut out = Mat::zeros(n_row * p_test, n_col * (p_trace + 1));
            for k in 0..n_row {
                for i in 0..p_test.min(p_trace + 1) {
                    out[(k * p_test + i, k * (p_trace + 1) + i)] = tau_row;
                }
            }
            out
        }
        Some((lc, pd)) => {
            assert!(lc <= l_row && lc <= l_col);
            let n_c = 1usize << lc;
            // physical moments of row tests against the common basis
            let mut m_row = Mat::zeros(n_row * p_test, n_c * (pd + 1));
            let s_a = (n_c as f64) / (n_row as f64);
            for ka in 0..n_row {
                let jc = ka >> (l_row - lc);
                let b_a = (ka - (jc << (l_row - lc))) as f64 * s_a;
                let t = subinterval_transfer_matrix(p_test.max(1) - 1, pd, s_a, b_a, 0.0, 1.0)
                    .expect("mapped interval inside [0,1] by dyadic nesting");
                for i in 0..p_test {
                    for r in 0..=pd {
                        m_row[(ka * p_test + i, jc * (pd + 1) + r)] = tau_row * t[(i, r)];
                    }
                }
            }
            // projection coefficients of column traces in the common basis
            let mut proj = Mat::zeros(n_c * (pd + 1), n_col * (p_trace + 1));
            let s_b = (n_c as f64) / (n_col as f64);
            for kb in 0..n_col {
                let jc = kb >> (l_col - lc);
                let b_b = (kb - (jc << (l_col - lc))) as f64 * s_b;
                let t = subinterval_transfer_matrix(p_trace, pd, s_b, b_b, 0.0, 1.0)
                    .expect("mapped interval inside [0,1] by dyadic nesting");
                for r in 0..=pd {
                    for q in 0..=p_trace {
                        proj[(jc * (pd + 1) + r, kb * (p_trace + 1) + q)] = s_b * t[(q, r)];
                    }
                }
            }
            m_row.matmul(&proj)
        }
    }
}

/// Temporal Gram matrix of the integrated-Legendre basis, G = C^T C.
pub fn trial_temporal_gram(tables: &Basis1DTables, p_t: usize) -> Mat {
    Mat::from_fn(p_t + 1, p_t + 1, |m, n| {
        let mut s = 0.0;
        for j in 0..=tables.max_degree {
            s += tables.conversion[(j, m)] * tables.conversion[(j, n)];
        }
        s
    })
}

/// Element-wise space-time L2 projection of analytic fields onto the trial
/// space. `f(field, x, t)` returns the physical E (field 0) or H (field 1)
/// vector; coefficients are stored in covariant reference form (component c
/// scaled by h_c).
pub fn l2_project_function(
    space: &SpaceDescriptor,
    layout: &DofLayout,
    tables: &Basis1DTables,
    f: &dyn Fn(usize, [f64; 3], f64) -> [f64; 3],
) -> FieldState {
    let mut data = vec![0.0; layout.trial_total];
    for (e, m) in layout.meta.iter().enumerate() {
        let elem = &space.mesh.elements[e];
        let p_t = m.p_t;
        let gram = trial_temporal_gram(tables, p_t);
        let nq = [m.np[0] + 1, m.np[1] + 1, m.np[2] + 1];
        let nq_t = p_t + 2;
        let rules: Vec<(Vec<f64>, Vec<f64>)> =
            nq.iter().map(|&n| gauss_rule(n).unwrap()).collect();
        let (tn, tw) = gauss_rule(nq_t).unwrap();
        let mut lt = vec![0.0; p_t + 1];
        let mut lx: Vec<Vec<f64>> = (0..3).map(|d| vec![0.0; m.np[d]]).collect();
        for k in 0..m.n_sub {
            let (t0, t1) = space.partition.sub_interval(e, k);
            // moments[field][c][i][s]
            let mut moments = vec![0.0; 2 * 3 * (p_t + 1) * m.n_sp];
            let midx = |field: usize, c: usize, i: usize, s: usize| {
                ((field * 3 + c) * (p_t + 1) + i) * m.n_sp + s
            };
            for (qt, &xt) in tn.iter().enumerate() {
                let t = t0 + (t1 - t0) * xt;
                ilegendre_eval_all(p_t, xt, &mut lt);
                for q0 in 0..nq[0] {
                    for q1 in 0..nq[1] {
                        for q2 in 0..nq[2] {
                            let xr = [rules[0].0[q0], rules[1].0[q1], rules[2].0[q2]];
                            let w = tw[qt] * rules[0].1[q0] * rules[1].1[q1] * rules[2].1[q2];
                            let x = [
                                elem.origin[0] + elem.h[0] * xr[0],
                                elem.origin[1] + elem.h[1] * xr[1],
                                elem.origin[2] + elem.h[2] * xr[2],
                            ];
                            for d in 0..3 {
                                legendre_eval_all(m.np[d] - 1, xr[d], &mut lx[d]);
                            }
                            for field in 0..2 {
                                let v = f(field, x, t);
                                for c in 0..3 {
                                    let vc = elem.h[c] * v[c];
                                    if vc == 0.0 {
                                        continue;
                                    }
                                    for i in 0..=p_t {
                                        let wt = w * vc * lt[i];
                                        if wt == 0.0 {
                                            continue;
                                        }
                                        for j0 in 0..m.np[0] {
                                            for j1 in 0..m.np[1] {
                                                let wj = wt * lx[0][j0] * lx[1][j1];
                                                let base =
                                                    midx(field, c, i, (j0 * m.np[1] + j1) * m.np[2]);
                                                for j2 in 0..m.np[2] {
                                                    moments[base + j2] += wj * lx[2][j2];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            // temporal Gram solve per (field, c, spatial mode)
            let mut rhs = vec![0.0; p_t + 1];
            for field in 0..2 {
                for c in 0..3 {
                    for s in 0..m.n_sp {
                        for i in 0..=p_t {
                            rhs[i] = moments[midx(field, c, i, s)];
                        }
                        let a = solve_dense(&gram, &rhs).expect("Gram matrix is SPD");
                        for i in 0..=p_t {
                            data[m.trial_idx(field, k, c, i, s)] = a[i];
                        }
                    }
                }
            }
        }
    }
    FieldState {
        basis: TimeBasis::Trial,
        data,
    }
}

/// Spatial field at the slab end node: by the endpoint values of the
/// integrated-Legendre basis this is the l_1 block of the last sub-interval.
pub fn end_trace(layout: &DofLayout, trial: &FieldState) -> SpatialField {
    assert_eq!(trial.basis, TimeBasis::Trial);
    let mut out = vec![0.0; layout.spatial_total];
    for m in &layout.meta {
        let k = m.n_sub - 1;
        for field in 0..2 {
            for c in 0..3 {
                for s in 0..m.n_sp {
                    out[m.sp_idx(field, c, s)] = trial.data[m.trial_idx(field, k, c, 1, s)];
                }
            }
        }
    }
    SpatialField { data: out }
}

/// Evaluate a spatial field (physical components) at a physical point inside
/// a given element.
pub fn eval_spatial_at(
    space: &SpaceDescriptor,
    layout: &DofLayout,
    field_vec: &SpatialField,
    e: usize,
    field: usize,
    x: [f64; 3],
) -> [f64; 3] {
    let elem = &space.mesh.elements[e];
    let m = &layout.meta[e];
    let xr = [
        (x[0] - elem.origin[0]) / elem.h[0],
        (x[1] - elem.origin[1]) / elem.h[1],
        (x[2] - elem.origin[2]) / elem.h[2],
    ];
    let mut lx: Vec<Vec<f64>> = (0..3).map(|d| vec![0.0; m.np[d]]).collect();
    for d in 0..3 {
        legendre_eval_all(m.np[d] - 1, xr[d].clamp(0.0, 1.0), &mut lx[d]);
    }
    let mut out = [0.0; 3];
    for c in 0..3 {
        let mut v = 0.0;
        for j0 in 0..m.np[0] {
            for j1 in 0..m.np[1] {
                for j2 in 0..m.np[2] {
                    v += field_vec.data[m.sp_idx(field, c, m.spatial_idx([j0, j1, j2]))]
                        * lx[0][j0]
                        * lx[1][j1]
                        * lx[2][j2];
                }
            }
        }
        out[c] = v / elem.h[c];
    }
    out
}

/// Evaluate a trial state (physical components) at a physical point and time
/// inside a given space-time element.
pub fn eval_trial_at(
    space: &SpaceDescriptor,
    layout: &DofLayout,
    trial: &FieldState,
    e: usize,
    field: usize,
    x: [f64; 3],
    t: f64,
) -> [f64; 3] {
    assert_eq!(trial.basis, TimeBasis::Trial);
    let elem = &space.mesh.elements[e];
    let m = &layout.meta[e];
    let tau = space.partition.tau(e);
    let mut k = ((t - space.partition.t_start) / tau).floor() as isize;
    k = k.clamp(0, m.n_sub as isize - 1);
    let k = k as usize;
    let (t0, t1) = space.partition.sub_interval(e, k);
    let tr = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
    let mut lt = vec![0.0; m.p_t + 1];
    ilegendre_eval_all(m.p_t, tr, &mut lt);
    let xr = [
        ((x[0] - elem.origin[0]) / elem.h[0]).clamp(0.0, 1.0),
        ((x[1] - elem.origin[1]) / elem.h[1]).clamp(0.0, 1.0),
        ((x[2] - elem.origin[2]) / elem.h[2]).clamp(0.0, 1.0),
    ];
    let mut lx: Vec<Vec<f64>> = (0..3).map(|d| vec![0.0; m.np[d]]).collect();
    for d in 0..3 {
        legendre_eval_all(m.np[d] - 1, xr[d], &mut lx[d]);
    }
    let mut out = [0.0; 3];
    for c in 0..3 {
        let mut v = 0.0;
        for i in 0..=m.p_t {
            if lt[i] == 0.0 {
                continue;
            }
            let mut sp = 0.0;
            for j0 in 0..m.np[0] {
                for j1 in 0..m.np[1] {
                    for j2 in 0..m.np[2] {
                        sp += trial.data[m.trial_idx(field, k, c, i, m.spatial_idx([j0, j1, j2]))]
                            * lx[0][j0]
                            * lx[1][j1]
                            * lx[2][j2];
                    }
                }
            }
            v += lt[i] * sp;
        }
        out[c] = v / elem.h[c];
    }
    out
}

/// Spatial L2 projection of a slab-node trace from one space onto another
/// (possibly different mesh/degrees). Integration is performed exactly over
/// element overlaps, so nested transfers reproduce the field and general
/// transfers are orthogonal projections.
pub fn transfer_between_slabs(
    old_space: &SpaceDescriptor,
    old_layout: &DofLayout,
    trace: &SpatialField,
    new_space: &SpaceDescriptor,
    new_layout: &DofLayout,
) -> SpatialField {
    let mut out = vec![0.0; new_layout.spatial_total];
    for (en, mn) in new_layout.meta.iter().enumerate() {
        let ne = &new_space.mesh.elements[en];
        let n_hi = [
            ne.origin[0] + ne.h[0],
            ne.origin[1] + ne.h[1],
            ne.origin[2] + ne.h[2],
        ];
        for (eo, mo) in old_layout.meta.iter().enumerate() {
            let oe = &old_space.mesh.elements[eo];
            // physical intersection
            let mut lo = [0.0; 3];
            let mut hi = [0.0; 3];
            let mut empty = false;
            for d in 0..3 {
                lo[d] = ne.origin[d].max(oe.origin[d]);
                hi[d] = n_hi[d].min(oe.origin[d] + oe.h[d]);
                if hi[d] - lo[d] <= 1e-14 * ne.h[d] {
                    empty = true;
                    break;
                }
            }
            if empty {
                continue;
            }
            // exact quadrature for products of both polynomial spaces
            let nq = [
                (mn.np[0] + mo.np[0]) / 2 + 1,
                (mn.np[1] + mo.np[1]) / 2 + 1,
                (mn.np[2] + mo.np[2]) / 2 + 1,
            ];
            let rules: Vec<(Vec<f64>, Vec<f64>)> =
                nq.iter().map(|&n| gauss_rule(n).unwrap()).collect();
            let mut lnew: Vec<Vec<f64>> = (0..3).map(|d| vec![0.0; mn.np[d]]).collect();
            let mut lold: Vec<Vec<f64>> = (0..3).map(|d| vec![0.0; mo.np[d]]).collect();
            for q0 in 0..nq[0] {
                for q1 in 0..nq[1] {
                    for q2 in 0..nq[2] {
                        let qs = [q0, q1, q2];
                        let mut x = [0.0; 3];
                        let mut w = 1.0;
                        for d in 0..3 {
                            x[d] = lo[d] + (hi[d] - lo[d]) * rules[d].0[qs[d]];
                            // weight in the NEW element's reference measure
                            w *= (hi[d] - lo[d]) / ne.h[d] * rules[d].1[qs[d]];
                            legendre_eval_all(
                                mn.np[d] - 1,
                                (x[d] - ne.origin[d]) / ne.h[d],
                                &mut lnew[d],
                            );
                            legendre_eval_all(
                                mo.np[d] - 1,
                                (x[d] - oe.origin[d]) / oe.h[d],
                                &mut lold[d],
                            );
                        }
                        for field in 0..2 {
                            for c in 0..3 {
                                // physical value of the old field component
                                let mut v = 0.0;
                                for j0 in 0..mo.np[0] {
                                    for j1 in 0..mo.np[1] {
                                        for j2 in 0..mo.np[2] {
                                            v += trace.data[mo.sp_idx(
                                                field,
                                                c,
                                                mo.spatial_idx([j0, j1, j2]),
                                            )] * lold[0][j0]
                                                * lold[1][j1]
                                                * lold[2][j2];
                                        }
                                    }
                                }
                                v /= oe.h[c];
                                if v == 0.0 {
                                    continue;
                                }
                                let vc = ne.h[c] * v * w;
                                for j0 in 0..mn.np[0] {
                                    for j1 in 0..mn.np[1] {
                                        let wj = vc * lnew[0][j0] * lnew[1][j1];
                                        for j2 in 0..mn.np[2] {
                                            out[mn.sp_idx(
                                                field,
                                                c,
                                                mn.spatial_idx([j0, j1, j2]),
                                            )] += wj * lnew[2][j2];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    SpatialField { data: out }
}
