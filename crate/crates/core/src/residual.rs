//! Matrix-free evaluation of the slab residual
//! R(U)(V) = B(U, V) - L(V)
//! with sum-factorized mass, curl and face kernels, plus the exact
//! block-diagonal preconditioner built from the time-derivative terms.
//!
//! All volume integrals are quadrature-free: with covariant transforms on
//! axis-aligned bricks the reference curl pairing is metric-free and the
//! spatial mass matrix is diagonal with entries (eps or mu) |J| / h_c^2 per
//! component. Face terms use the algebraically combined stabilized central
//! flux: self traces are paired with the plain temporal test functions while
//! neighbor traces are first projected onto the largest common temporal test
//! space of the face.

use crate::basis1d::{
    deriv_pair_apply, deriv_pair_apply_transpose, gauss_rule, legendre_eval_all,
    subinterval_transfer_matrix, Basis1DTables,
};
use crate::fespace::{
    dof_layout, state_from_unknowns, temporal_face_matrix, DofLayout, FieldState, SpaceDescriptor,
    SpatialField, TimeBasis,
};
use crate::linalg::Mat;
use crate::mesh::{build_faces, element_jacobian, Face};
use std::cell::RefCell;

/// Field indices in all layouts.
pub const FIELD_E: usize = 0;
pub const FIELD_H: usize = 1;

/// Flop counts per kernel class (analytic loop-size products).
#[derive(Debug, Default, Clone, Copy)]
pub struct FlopCounters {
    pub mass: u64,
    pub curl: u64,
    pub flux: u64,
    pub precond: u64,
}

impl FlopCounters {
    pub fn total_volume_flux(&self) -> u64 {
        self.mass + self.curl + self.flux
    }
}

/// Levi-Civita symbol eps_{abc} for distinct indices, 0 otherwise.
fn levi_civita(a: usize, b: usize, c: usize) -> f64 {
    match (a, b, c) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Precomputed data for one face and one choice of test side.
struct SideKernel {
    test_elem: usize,
    other_elem: usize,
    /// Normal axis.
    axis: usize,
    /// Sign of the test side's outward normal along `axis`.
    sigma: f64,
    /// Face sits at local coordinate 1 (true) or 0 (false) of each element.
    test_at_one: bool,
    other_at_one: bool,
    /// Tangential axes in increasing order.
    tang: [usize; 2],
    /// Spatial moment matrices over the overlap, test rows x other columns.
    s_cross: [Mat; 2],
    /// Spatial moment matrices over the overlap, test rows x test columns.
    s_self: [Mat; 2],
    /// Plain temporal pairing (test rows x test-side trace columns).
    t_plain: Mat,
    /// Projected temporal pairing against the other side's traces.
    t_pi_cross: Option<Mat>,
    /// Projected temporal pairing against the test side's own traces
    /// (dissipative self term).
    t_pi_self: Option<Mat>,
    /// Central-flux weight: 1/2 on interior faces, 1 on the boundary.
    half: f64,
    /// Dissipation coefficients (0 when disabled).
    alpha_e: f64,
    alpha_h: f64,
    boundary: bool,
}

/// Matrix-free residual operator for one slab on a fixed space.
pub struct SlabOperator {
    pub space: SpaceDescriptor,
    pub layout: DofLayout,
    pub tables: Basis1DTables,
    pub faces: Vec<Face>,
    pub dissipation_c: f64,
    side_kernels: Vec<SideKernel>,
    pub counters: RefCell<FlopCounters>,
    /// Disable curl and face terms (pure mass operator) for diagnostics.
    pub mass_only: bool,
}

impl SlabOperator {
    pub fn new(space: SpaceDescriptor, dissipation_c: f64) -> Self {
        let tables = Basis1DTables::new(space.max_degree().max(4) + 2);
        let layout = dof_layout(&space);
        let faces = build_faces(&space.mesh);
        let mut side_kernels = Vec::new();
        let slab = space.partition.slab_length();
        for face in &faces {
            match face.plus {
                Some(plus) => {
                    for test_is_minus in [true, false] {
                        let (a, b) = if test_is_minus {
                            (face.minus, plus)
                        } else {
                            (plus, face.minus)
                        };
                        side_kernels.push(make_side_kernel(
                            &space,
                            face,
                            a,
                            b,
                            test_is_minus,
                            slab,
                            dissipation_c,
                        ));
                    }
                }
                None => {
                    let a = face.minus;
                    let da = space.degrees[a];
                    let la = space.partition.levels[a];
                    let elem = &space.mesh.elements[a];
                    let tang = face.tangential_axes();
                    let ident = |p: usize| Mat::identity(p + 1);
                    let alpha_e = dissipation_c / (elem.mu / elem.eps).sqrt();
                    let alpha_h = dissipation_c / (elem.eps / elem.mu).sqrt();
                    side_kernels.push(SideKernel {
                        test_elem: a,
                        other_elem: a,
                        axis: face.axis,
                        sigma: if face.boundary_at_one { 1.0 } else { -1.0 },
                        test_at_one: face.boundary_at_one,
                        other_at_one: face.boundary_at_one,
                        tang,
                        s_cross: [ident(da.p[tang[0]]), ident(da.p[tang[1]])],
                        s_self: [ident(da.p[tang[0]]), ident(da.p[tang[1]])],
                        t_plain: temporal_face_matrix(slab, la, da.p_t, la, da.p_t, None),
                        t_pi_cross: None,
                        t_pi_self: None,
                        half: 1.0,
                        alpha_e,
                        alpha_h,
                        boundary: true,
                    });
                }
            }
        }
        SlabOperator {
            space,
            layout,
            tables,
            faces,
            dissipation_c,
            side_kernels,
            counters: RefCell::new(FlopCounters::default()),
            mass_only: false,
        }
    }

    /// Diagonal spatial mass weight of (element, field, component):
    /// (eps or mu) |J| / h_c^2.
    #[inline]
    fn mass_weight(&self, e: usize, field: usize, c: usize) -> f64 {
        let elem = &self.space.mesh.elements[e];
        let (_, jac) = element_jacobian(elem);
        let mat = if field == FIELD_E { elem.eps } else { elem.mu };
        mat * jac / (elem.h[c] * elem.h[c])
    }

    /// Unweighted test-space L2 weight of (element, sub-interval, component):
    /// tau_k |J| / h_c^2.
    #[inline]
    fn l2_weight(&self, e: usize, c: usize) -> f64 {
        let elem = &self.space.mesh.elements[e];
        let (_, jac) = element_jacobian(elem);
        self.space.partition.tau(e) * jac / (elem.h[c] * elem.h[c])
    }

    /// B(U, V) for a chained trial state, written into test rows.
    pub fn apply_bilinear(&self, state: &FieldState) -> Vec<f64> {
        assert_eq!(state.basis, TimeBasis::Trial);
        let mut out = vec![0.0; self.layout.total];
        self.add_mass(state, &mut out);
        if !self.mass_only {
            self.add_curl(state, &mut out);
            self.add_faces(state, &mut out);
        }
        out
    }

    /// Full residual R(U) = B(U, V) - loads, U given by unknowns + initial data.
    pub fn full_residual(
        &self,
        u: &[f64],
        initial: &SpatialField,
        loads: &[f64],
    ) -> Vec<f64> {
        let state = state_from_unknowns(&self.layout, u, initial);
        let mut r = self.apply_bilinear(&state);
        for (ri, li) in r.iter_mut().zip(loads) {
            *ri -= li;
        }
        r
    }

    /// Linear part of the residual: B applied with zero initial data.
    pub fn apply_linear(&self, u: &[f64]) -> Vec<f64> {
        let zero = SpatialField {
            data: vec![0.0; self.layout.spatial_total],
        };
        let state = state_from_unknowns(&self.layout, u, &zero);
        self.apply_bilinear(&state)
    }

    /// Right-hand side of the linear system A u = b equivalent to R(U) = 0.
    pub fn rhs(&self, initial: &SpatialField, loads: &[f64]) -> Vec<f64> {
        let zero_u = vec![0.0; self.layout.total];
        let state = state_from_unknowns(&self.layout, &zero_u, initial);
        let affine = self.apply_bilinear(&state);
        loads.iter().zip(&affine).map(|(l, a)| l - a).collect()
    }

    fn add_mass(&self, state: &FieldState, out: &mut [f64]) {
        let mut flops = 0u64;
        for (e, m) in self.layout.meta.iter().enumerate() {
            for field in 0..2 {
                for c in 0..3 {
                    let w = self.mass_weight(e, field, c);
                    for k in 0..m.n_sub {
                        for i in 0..m.p_t {
                            let src = m.trial_idx(field, k, c, i + 1, 0);
                            let dst = m.idx(field, k, c, i, 0);
                            for s in 0..m.n_sp {
                                out[dst + s] += w * state.data[src + s];
                            }
                            if i == 0 {
                                let src0 = m.trial_idx(field, k, c, 0, 0);
                                for s in 0..m.n_sp {
                                    out[dst + s] -= w * state.data[src0 + s];
                                }
                            }
                        }
                    }
                }
            }
            flops += (2 * 3 * m.n_sub * (m.p_t + 1) * m.n_sp * 2) as u64;
        }
        self.counters.borrow_mut().mass += flops;
    }

    fn add_curl(&self, state: &FieldState, out: &mut [f64]) {
        let mut flops = 0u64;
        for (e, m) in self.layout.meta.iter().enumerate() {
            let tau = self.space.partition.tau(e);
            let p_t = m.p_t;
            let n_sp = m.n_sp;
            let mut curl = vec![0.0; 3 * n_sp];
            let mut tmp = vec![0.0; n_sp];
            for k in 0..m.n_sub {
                for mm in 0..=p_t {
                    // rows i < p_t with T[i][mm] != 0
                    let rows: Vec<(usize, f64)> = (0..p_t)
                        .filter_map(|i| {
                            let t = self.tables.temporal_mass[(i, mm)];
                            if t.abs() > 1e-300 {
                                Some((i, t))
                            } else {
                                None
                            }
                        })
                        .collect();
                    if rows.is_empty() {
                        continue;
                    }
                    // reference curl of E -> H rows
                    curl.iter_mut().for_each(|v| *v = 0.0);
                    for c in 0..3 {
                        let a = (c + 1) % 3;
                        let b = (c + 2) % 3;
                        // (curl X)_c = d_a X_b - d_b X_a
                        self.apply_deriv(
                            m,
                            a,
                            &state.data[m.trial_idx(FIELD_E, k, b, mm, 0)..]
                                [..n_sp],
                            &mut tmp,
                            false,
                        );
                        for s in 0..n_sp {
                            curl[c * n_sp + s] += tmp[s];
                        }
                        self.apply_deriv(
                            m,
                            b,
                            &state.data[m.trial_idx(FIELD_E, k, a, mm, 0)..]
                                [..n_sp],
                            &mut tmp,
                            false,
                        );
                        for s in 0..n_sp {
                            curl[c * n_sp + s] -= tmp[s];
                        }
                    }
                    for &(i, t) in &rows {
                        let w = tau * t;
                        for c in 0..3 {
                            let dst = m.idx(FIELD_H, k, c, i, 0);
                            for s in 0..n_sp {
                                out[dst + s] += w * curl[c * n_sp + s];
                            }
                        }
                    }
                    // adjoint curl of H -> E rows (minus sign)
                    curl.iter_mut().for_each(|v| *v = 0.0);
                    for b in 0..3 {
                        let c1 = (b + 1) % 3;
                        let a1 = (b + 2) % 3;
                        // (curl^T h)_b = sum_{c,a} eps_{cab} d_a^T h_c
                        // nonzero pairs: (c, a) = (c1, a1) with eps_{c1 a1 b}
                        // and (a1, c1) with eps_{a1 c1 b}
                        let s1 = levi_civita(c1, a1, b);
                        self.apply_deriv(
                            m,
                            a1,
                            &state.data[m.trial_idx(FIELD_H, k, c1, mm, 0)..]
                                [..n_sp],
                            &mut tmp,
                            true,
                        );
                        for s in 0..n_sp {
                            curl[b * n_sp + s] += s1 * tmp[s];
                        }
                        let s2 = levi_civita(a1, c1, b);
                        self.apply_deriv(
                            m,
                            c1,
                            &state.data[m.trial_idx(FIELD_H, k, a1, mm, 0)..]
                                [..n_sp],
                            &mut tmp,
                            true,
                        );
                        for s in 0..n_sp {
                            curl[b * n_sp + s] += s2 * tmp[s];
                        }
                    }
                    for &(i, t) in &rows {
                        let w = tau * t;
                        for c in 0..3 {
                            let dst = m.idx(FIELD_E, k, c, i, 0);
                            for s in 0..n_sp {
                                out[dst + s] -= w * curl[c * n_sp + s];
                            }
                        }
                    }
                    flops += (12 * n_sp * 4 + rows.len() * 6 * n_sp * 2) as u64;
                }
            }
        }
        self.counters.borrow_mut().curl += flops;
    }

    /// Apply the 1D derivative pairing G (or its transpose) along one axis of
    /// a spatial coefficient tensor.
    fn apply_deriv(
        &self,
        m: &crate::fespace::ElemMeta,
        axis: usize,
        input: &[f64],
        out: &mut [f64],
        transpose: bool,
    ) {
        let np = m.np;
        let len = np[axis];
        let mut line_in = [0.0f64; 16];
        let mut line_out = [0.0f64; 16];
        assert!(len <= 16);
        let (stride, outer0, outer1, st0, st1) = match axis {
            0 => (np[1] * np[2], np[1], np[2], np[2], 1),
            1 => (np[2], np[0], np[2], np[1] * np[2], 1),
            _ => (1, np[0], np[1], np[1] * np[2], np[2]),
        };
        for o0 in 0..outer0 {
            for o1 in 0..outer1 {
                let base = o0 * st0 + o1 * st1;
                for j in 0..len {
                    line_in[j] = input[base + j * stride];
                }
                if transpose {
                    deriv_pair_apply_transpose(&line_in[..len], &mut line_out[..len]);
                } else {
                    deriv_pair_apply(&line_in[..len], &mut line_out[..len]);
                }
                for j in 0..len {
                    out[base + j * stride] = line_out[j];
                }
            }
        }
    }

    fn add_faces(&self, state: &FieldState, out: &mut [f64]) {
        let mut flops = 0u64;
        for sk in &self.side_kernels {
            flops += self.apply_side_kernel(sk, state, out);
        }
        self.counters.borrow_mut().flux += flops;
    }

    /// Extract the space-time face trace of one field component of `elem`:
    /// returns coefficients indexed by (sub-interval, temporal Legendre mode
    /// q <= p_t, tangential spatial modes j1, j2).
    fn face_trace(
        &self,
        state: &FieldState,
        e: usize,
        field: usize,
        comp: usize,
        axis: usize,
        at_one: bool,
        tang: [usize; 2],
    ) -> Vec<f64> {
        let m = &self.layout.meta[e];
        let np = m.np;
        let nt = [np[tang[0]], np[tang[1]]];
        let endv = if at_one {
            &self.tables.leg_at_1
        } else {
            &self.tables.leg_at_0
        };
        let p_t = m.p_t;
        let n_face = nt[0] * nt[1];
        let mut out = vec![0.0; m.n_sub * (p_t + 1) * n_face];
        let mut tmp = vec![0.0; (p_t + 1) * n_face];
        for k in 0..m.n_sub {
            tmp.iter_mut().for_each(|v| *v = 0.0);
            // contract normal index with endpoint values
            for i in 0..=p_t {
                let src = m.trial_idx(field, k, comp, i, 0);
                for j1 in 0..nt[0] {
                    for j2 in 0..nt[1] {
                        let mut v = 0.0;
                        for l in 0..np[axis] {
                            let mut j = [0usize; 3];
                            j[axis] = l;
                            j[tang[0]] = j1;
                            j[tang[1]] = j2;
                            v += endv[l] * state.data[src + m.spatial_idx(j)];
                        }
                        tmp[i * n_face + j1 * nt[1] + j2] = v;
                    }
                }
            }
            // convert integrated-Legendre time coefficients to Legendre
            for q in 0..=p_t {
                let dst = (k * (p_t + 1) + q) * n_face;
                for i in 0..=p_t {
                    let c = self.tables.conversion[(q, i)];
                    if c == 0.0 {
                        continue;
                    }
                    for s in 0..n_face {
                        out[dst + s] += c * tmp[i * n_face + s];
                    }
                }
            }
        }
        out
    }

    /// Apply one face/side kernel; returns the flop count.
    fn apply_side_kernel(&self, sk: &SideKernel, state: &FieldState, out: &mut [f64]) -> u64 {
        let mt = &self.layout.meta[sk.test_elem];
        let mo = &self.layout.meta[sk.other_elem];
        let d = sk.axis;
        let tang = sk.tang;
        let nt = [mt.np[tang[0]], mt.np[tang[1]]];
        let no = [mo.np[tang[0]], mo.np[tang[1]]];
        let n_face_t = nt[0] * nt[1];
        let elem_t = &self.space.mesh.elements[sk.test_elem];
        // physical tangential area factor of the test element's full side
        let area_scale = elem_t.h[tang[0]] * elem_t.h[tang[1]];
        let mut flops = 0u64;

        // accumulated moments per (test sub-interval, test row i, n1, n2) and
        // test component c, to be scattered once at the end
        let n_rows = mt.n_sub * mt.p_t;
        let mut acc = vec![vec![0.0; n_rows * n_face_t]; 6]; // field*3 + c

        // --- helper to process one trace source ---
        let mut add_term = |src_field: usize,
                            src_comp: usize,
                            from_other: bool,
                            tmat: &Mat,
                            smats: &[Mat; 2],
                            dst_field: usize,
                            dst_comp: usize,
                            coeff: f64,
                            fl: &mut u64| {
            if coeff == 0.0 {
                return;
            }
            let (e_src, at_one, nsrc) = if from_other {
                (sk.other_elem, sk.other_at_one, no)
            } else {
                (sk.test_elem, sk.test_at_one, nt)
            };
            let trace = self.face_trace(state, e_src, src_field, src_comp, d, at_one, tang);
            let msrc = &self.layout.meta[e_src];
            let p_src = msrc.p_t;
            let n_face_s = nsrc[0] * nsrc[1];
            // spatial stage 1: contract axis tang[0]
            let s0 = &smats[0];
            let s1 = &smats[1];
            let n_cols_t = msrc.n_sub * (p_src + 1);
            let mut stage1 = vec![0.0; n_cols_t * nt[0] * nsrc[1]];
            for col in 0..n_cols_t {
                let src_base = col * n_face_s;
                let dst_base = col * nt[0] * nsrc[1];
                for n1 in 0..nt[0] {
                    for j1 in 0..nsrc[0] {
                        let w = s0[(n1, j1)];
                        if w == 0.0 {
                            continue;
                        }
                        let sb = src_base + j1 * nsrc[1];
                        let db = dst_base + n1 * nsrc[1];
                        for j2 in 0..nsrc[1] {
                            stage1[db + j2] += w * trace[sb + j2];
                        }
                    }
                }
            }
            // spatial stage 2: contract axis tang[1]
            let mut stage2 = vec![0.0; n_cols_t * n_face_t];
            for col in 0..n_cols_t {
                let src_base = col * nt[0] * nsrc[1];
                let dst_base = col * n_face_t;
                for n1 in 0..nt[0] {
                    for n2 in 0..nt[1] {
                        let mut v = 0.0;
                        for j2 in 0..nsrc[1] {
                            v += s1[(n2, j2)] * stage1[src_base + n1 * nsrc[1] + j2];
                        }
                        stage2[dst_base + n1 * nt[1] + n2] = v;
                    }
                }
            }
            // temporal stage
            let a = &mut acc[dst_field * 3 + dst_comp];
            for row in 0..n_rows {
                for col in 0..n_cols_t {
                    let w = coeff * tmat[(row, col)];
                    if w == 0.0 {
                        continue;
                    }
                    let sb = col * n_face_t;
                    let db = row * n_face_t;
                    for s in 0..n_face_t {
                        a[db + s] += w * stage2[sb + s];
                    }
                }
            }
            *fl += (n_cols_t * (nt[0] * nsrc[0] * nsrc[1] + n_face_t * nsrc[1]) * 2
                + n_rows * n_cols_t * n_face_t * 2) as u64;
        };

        // --- central flux terms ---
        // All pairings are written in the test element's tangential reference
        // coordinates; the metric factor of <X^src_b, v_c> over the face is
        // (h_t1 h_t2)^test / (h^test_c h^src_b).
        let elem_o = &self.space.mesh.elements[sk.other_elem];
        for &c in &tang {
            let b = tang[0] + tang[1] - c; // the other tangential axis
            let sgn = sk.sigma * levi_civita(c, d, b);
            let metric_self = area_scale / (elem_t.h[c] * elem_t.h[b]); // = 1
            let metric_cross = area_scale / (elem_t.h[c] * elem_o.h[b]);
            // E rows self: -(1/2 or 1) <n x H^A, v>
            add_term(
                FIELD_H,
                b,
                false,
                &sk.t_plain,
                &sk.s_self,
                FIELD_E,
                c,
                -sk.half * sgn * metric_self,
                &mut flops,
            );
            // H rows self: -(1/2 or 1) <n x E^A, w> (volume-curl correction)
            add_term(
                FIELD_E,
                b,
                false,
                &sk.t_plain,
                &sk.s_self,
                FIELD_H,
                c,
                -sk.half * sgn * metric_self,
                &mut flops,
            );
            if !sk.boundary {
                let tpi = sk.t_pi_cross.as_ref().unwrap();
                // E rows cross: -1/2 <pi(n x H^B), v>
                add_term(
                    FIELD_H,
                    b,
                    true,
                    tpi,
                    &sk.s_cross,
                    FIELD_E,
                    c,
                    -sk.half * sgn * metric_cross,
                    &mut flops,
                );
                // H rows cross: +1/2 <pi(n x E^B), w>
                add_term(
                    FIELD_E,
                    b,
                    true,
                    tpi,
                    &sk.s_cross,
                    FIELD_H,
                    c,
                    sk.half * sgn * metric_cross,
                    &mut flops,
                );
            }
        }

        // --- dissipative jump penalties ---
        if sk.alpha_e > 0.0 || sk.alpha_h > 0.0 {
            for &c in &tang {
                let metric_self = area_scale / (elem_t.h[c] * elem_t.h[c]);
                let metric_cross = area_scale / (elem_t.h[c] * elem_o.h[c]);
                if sk.boundary {
                    // alpha_E <E_tang, v> with plain temporal pairing; the g
                    // part lives in the loads
                    add_term(
                        FIELD_E,
                        c,
                        false,
                        &sk.t_plain,
                        &sk.s_self,
                        FIELD_E,
                        c,
                        sk.alpha_e * metric_self,
                        &mut flops,
                    );
                } else {
                    let tpis = sk.t_pi_self.as_ref().unwrap();
                    let tpic = sk.t_pi_cross.as_ref().unwrap();
                    for (field, alpha) in [(FIELD_E, sk.alpha_e), (FIELD_H, sk.alpha_h)] {
                        if alpha == 0.0 {
                            continue;
                        }
                        add_term(
                            field,
                            c,
                            false,
                            tpis,
                            &sk.s_self,
                            field,
                            c,
                            alpha * metric_self,
                            &mut flops,
                        );
                        add_term(
                            field,
                            c,
                            true,
                            tpic,
                            &sk.s_cross,
                            field,
                            c,
                            -alpha * metric_cross,
                            &mut flops,
                        );
                    }
                }
            }
        }

        // --- scatter accumulated face moments to test rows ---
        let endv = if sk.test_at_one {
            &self.tables.leg_at_1
        } else {
            &self.tables.leg_at_0
        };
        for field in 0..2 {
            for c in 0..3 {
                let a = &acc[field * 3 + c];
                if a.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for k in 0..mt.n_sub {
                    for i in 0..mt.p_t {
                        let row = k * mt.p_t + i;
                        let dst = mt.idx(field, k, c, i, 0);
                        for l in 0..mt.np[d] {
                            let w = endv[l];
                            if w == 0.0 {
                                continue;
                            }
                            for n1 in 0..nt[0] {
                                for n2 in 0..nt[1] {
                                    let mut j = [0usize; 3];
                                    j[d] = l;
                                    j[tang[0]] = n1;
                                    j[tang[1]] = n2;
                                    out[dst + mt.spatial_idx(j)] +=
                                        w * a[row * n_face_t + n1 * nt[1] + n2];
                                }
                            }
                        }
                    }
                }
                flops += (mt.n_sub * mt.p_t * mt.np[d] * n_face_t * 2) as u64;
            }
        }
        flops
    }

    /// Exact inverse of the preconditioner P (the time-derivative part of B):
    /// blockwise diagonal mass solve with forward substitution over
    /// sub-intervals to undo the continuity chaining.
    pub fn apply_preconditioner(&self, r: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.layout.total];
        let mut flops = 0u64;
        for (e, m) in self.layout.meta.iter().enumerate() {
            for field in 0..2 {
                for c in 0..3 {
                    let w = self.mass_weight(e, field, c);
                    for s in 0..m.n_sp {
                        let mut prev_l1 = 0.0;
                        for k in 0..m.n_sub {
                            for mm in 1..=m.p_t {
                                let mut v = r[m.idx(field, k, c, mm - 1, s)] / w;
                                if mm == 1 {
                                    v += prev_l1;
                                }
                                u[m.idx(field, k, c, mm - 1, s)] = v;
                                if mm == 1 {
                                    prev_l1 = v;
                                }
                            }
                        }
                    }
                }
            }
            flops += (2 * 3 * m.n_sp * m.n_sub * m.p_t * 2) as u64;
        }
        self.counters.borrow_mut().precond += flops;
        u
    }

    /// Apply P itself (for tests): the mass part of B on chained unknowns.
    pub fn apply_mass_part(&self, u: &[f64]) -> Vec<f64> {
        let zero = SpatialField {
            data: vec![0.0; self.layout.spatial_total],
        };
        let state = state_from_unknowns(&self.layout, u, &zero);
        let mut out = vec![0.0; self.layout.total];
        self.add_mass(&state, &mut out);
        out
    }

    /// Dual norms (||R_E||_{W'}, ||R_H||_{W'}) of a residual vector in test
    /// rows: sqrt(r^T M^{-1} r) with the unweighted test-space L2 mass.
    pub fn dual_norm(&self, r: &[f64]) -> (f64, f64) {
        let mut s = [0.0f64; 2];
        for (e, m) in self.layout.meta.iter().enumerate() {
            for field in 0..2 {
                for c in 0..3 {
                    let w = self.l2_weight(e, c);
                    for k in 0..m.n_sub {
                        for mm in 0..m.p_t {
                            let base = m.idx(field, k, c, mm, 0);
                            for q in 0..m.n_sp {
                                let v = r[base + q];
                                s[field] += v * v / w;
                            }
                        }
                    }
                }
            }
        }
        (s[0].sqrt(), s[1].sqrt())
    }

    /// Weights of the mass-weighted (discrete test-space L2) inner product
    /// used by the iterative solver.
    pub fn inner_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.layout.total];
        for (e, m) in self.layout.meta.iter().enumerate() {
            for field in 0..2 {
                for c in 0..3 {
                    let wv = self.l2_weight(e, c);
                    for k in 0..m.n_sub {
                        for mm in 0..m.p_t {
                            let base = m.idx(field, k, c, mm, 0);
                            for q in 0..m.n_sp {
                                w[base + q] = wv;
                            }
                        }
                    }
                }
            }
        }
        w
    }

    /// Space-time load vector: <J, v> into E rows plus the boundary terms
    /// from the prescribed tangential trace g (central flux part into H rows
    /// and, when dissipation is on, the penalty part into E rows).
    pub fn build_loads(
        &self,
        j_fn: Option<&dyn Fn([f64; 3], f64) -> [f64; 3]>,
        g_fn: Option<&dyn Fn([f64; 3], f64) -> [f64; 3]>,
    ) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.total];
        if let Some(j_fn) = j_fn {
            self.add_volume_load(j_fn, &mut out);
        }
        if let Some(g_fn) = g_fn {
            self.add_boundary_load(g_fn, &mut out);
        }
        out
    }

    fn add_volume_load(&self, j_fn: &dyn Fn([f64; 3], f64) -> [f64; 3], out: &mut [f64]) {
        for (e, m) in self.layout.meta.iter().enumerate() {
            let elem = &self.space.mesh.elements[e];
            let (_, jac) = element_jacobian(elem);
            let nq = [m.np[0] + 1, m.np[1] + 1, m.np[2] + 1];
            let nq_t = m.p_t + 2;
            let rules: Vec<(Vec<f64>, Vec<f64>)> =
                nq.iter().map(|&n| gauss_rule(n).unwrap()).collect();
            let (tn, tw) = gauss_rule(nq_t).unwrap();
            let mut lt = vec![0.0; m.p_t];
            let mut lx: Vec<Vec<f64>> = (0..3).map(|d| vec![0.0; m.np[d]]).collect();
            for k in 0..m.n_sub {
                let (t0, t1) = self.space.partition.sub_interval(e, k);
                let tau = t1 - t0;
                for (qt, &xt) in tn.iter().enumerate() {
                    let t = t0 + tau * xt;
                    legendre_eval_all(m.p_t - 1, xt, &mut lt);
                    for q0 in 0..nq[0] {
                        for q1 in 0..nq[1] {
                            for q2 in 0..nq[2] {
                                let xr = [rules[0].0[q0], rules[1].0[q1], rules[2].0[q2]];
                                // test function v = v_ref / h_c; dx = |J| dref
                                let w = tau * tw[qt] * jac
                                    * rules[0].1[q0]
                                    * rules[1].1[q1]
                                    * rules[2].1[q2];
                                let x = [
                                    elem.origin[0] + elem.h[0] * xr[0],
                                    elem.origin[1] + elem.h[1] * xr[1],
                                    elem.origin[2] + elem.h[2] * xr[2],
                                ];
                                let jv = j_fn(x, t);
                                if jv == [0.0; 3] {
                                    continue;
                                }
                                for d in 0..3 {
                                    legendre_eval_all(m.np[d] - 1, xr[d], &mut lx[d]);
                                }
                                for c in 0..3 {
                                    let vc = w * jv[c] / elem.h[c];
                                    if vc == 0.0 {
                                        continue;
                                    }
                                    for i in 0..m.p_t {
                                        let wt = vc * lt[i];
                                        let dst = m.idx(FIELD_E, k, c, i, 0);
                                        for j0 in 0..m.np[0] {
                                            for j1 in 0..m.np[1] {
                                                let wj = wt * lx[0][j0] * lx[1][j1];
                                                let base = dst
                                                    + (j0 * m.np[1] + j1) * m.np[2];
                                                for j2 in 0..m.np[2] {
                                                    out[base + j2] += wj * lx[2][j2];
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
        }
    }

    fn add_boundary_load(&self, g_fn: &dyn Fn([f64; 3], f64) -> [f64; 3], out: &mut [f64]) {
        for sk in &self.side_kernels {
            if !sk.boundary {
                continue;
            }
            let e = sk.test_elem;
            let m = &self.layout.meta[e];
            let elem = &self.space.mesh.elements[e];
            let d = sk.axis;
            let tang = sk.tang;
            let nq = [m.np[tang[0]] + 1, m.np[tang[1]] + 1];
            let nq_t = m.p_t + 2;
            let r0 = gauss_rule(nq[0]).unwrap();
            let r1 = gauss_rule(nq[1]).unwrap();
            let (tn, tw) = gauss_rule(nq_t).unwrap();
            let area = elem.h[tang[0]] * elem.h[tang[1]];
            let endv = if sk.test_at_one {
                &self.tables.leg_at_1
            } else {
                &self.tables.leg_at_0
            };
            let xnorm = if sk.test_at_one {
                elem.origin[d] + elem.h[d]
            } else {
                elem.origin[d]
            };
            let mut lt = vec![0.0; m.p_t];
            let mut l1 = vec![0.0; m.np[tang[0]]];
            let mut l2 = vec![0.0; m.np[tang[1]]];
            for k in 0..m.n_sub {
                let (t0, t1) = self.space.partition.sub_interval(e, k);
                let tau = t1 - t0;
                for (qt, &xt) in tn.iter().enumerate() {
                    let t = t0 + tau * xt;
                    legendre_eval_all(m.p_t - 1, xt, &mut lt);
                    for qa in 0..nq[0] {
                        for qb in 0..nq[1] {
                            let w = tau * tw[qt] * area * r0.1[qa] * r1.1[qb];
                            let mut x = [0.0; 3];
                            x[d] = xnorm;
                            x[tang[0]] = elem.origin[tang[0]] + elem.h[tang[0]] * r0.0[qa];
                            x[tang[1]] = elem.origin[tang[1]] + elem.h[tang[1]] * r1.0[qb];
                            let g = g_fn(x, t);
                            if g == [0.0; 3] {
                                continue;
                            }
                            legendre_eval_all(m.np[tang[0]] - 1, r0.0[qa], &mut l1);
                            legendre_eval_all(m.np[tang[1]] - 1, r1.0[qb], &mut l2);
                            for &c in &tang {
                                let b = tang[0] + tang[1] - c;
                                // the H-row boundary term is -<n x (E - g), w>;
                                // its B part is -<n x E, w>, so the load
                                // vector (subtracted from B) carries -<n x g, w>
                                let sgn = sk.sigma * levi_civita(c, d, b);
                                let flux_w = -sk.half * sgn * g[b] * w / elem.h[c];
                                // dissipative part: alpha_E <g_c, v_c>
                                let diss_w = sk.alpha_e * g[c] * w / elem.h[c];
                                for i in 0..m.p_t {
                                    for l in 0..m.np[d] {
                                        if endv[l] == 0.0 {
                                            continue;
                                        }
                                        for n1 in 0..m.np[tang[0]] {
                                            for n2 in 0..m.np[tang[1]] {
                                                let mut j = [0usize; 3];
                                                j[d] = l;
                                                j[tang[0]] = n1;
                                                j[tang[1]] = n2;
                                                let bas = endv[l] * lt[i] * l1[n1] * l2[n2];
                                                out[m.idx(FIELD_H, k, c, i, m.spatial_idx(j))] +=
                                                    flux_w * bas;
                                                if sk.alpha_e > 0.0 {
                                                    out[m.idx(
                                                        FIELD_E,
                                                        k,
                                                        c,
                                                        i,
                                                        m.spatial_idx(j),
                                                    )] += diss_w * bas;
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
        }
    }
}

fn make_side_kernel(
    space: &SpaceDescriptor,
    face: &Face,
    a: usize,
    b: usize,
    test_is_minus: bool,
    slab: f64,
    dissipation_c: f64,
) -> SideKernel {
    let da = space.degrees[a];
    let db = space.degrees[b];
    let la = space.partition.levels[a];
    let lb = space.partition.levels[b];
    let elem_a = &space.mesh.elements[a];
    let elem_b = &space.mesh.elements[b];
    let tang = face.tangential_axes();
    // overlap geometry in the test element's reference coordinates
    let (range_a, s_ab, b_ab): ([[f64; 2]; 2], [f64; 2], [f64; 2]) = if test_is_minus {
        (face.range_minus, face.scale, face.offset)
    } else {
        (
            face.range_plus,
            [1.0 / face.scale[0], 1.0 / face.scale[1]],
            [
                -face.offset[0] / face.scale[0],
                -face.offset[1] / face.scale[1],
            ],
        )
    };
    let mut s_cross = [Mat::zeros(0, 0), Mat::zeros(0, 0)];
    let mut s_self = [Mat::zeros(0, 0), Mat::zeros(0, 0)];
    for t in 0..2 {
        let pa = da.p[tang[t]];
        let pb = db.p[tang[t]];
        s_cross[t] = subinterval_transfer_matrix(
            pa,
            pb,
            s_ab[t],
            b_ab[t],
            range_a[t][0],
            range_a[t][1],
        )
        .expect("face overlap maps into [0,1]");
        s_self[t] =
            subinterval_transfer_matrix(pa, pa, 1.0, 0.0, range_a[t][0], range_a[t][1])
                .expect("self overlap");
    }
    let common = (la.min(lb), da.p_t.min(db.p_t) - 1);
    let t_plain = temporal_face_matrix(slab, la, da.p_t, la, da.p_t, None);
    let t_pi_cross = Some(temporal_face_matrix(
        slab,
        la,
        da.p_t,
        lb,
        db.p_t,
        Some(common),
    ));
    let t_pi_self = Some(temporal_face_matrix(
        slab,
        la,
        da.p_t,
        la,
        da.p_t,
        Some(common),
    ));
    let mean_zi = 0.5 * ((elem_a.mu / elem_a.eps).sqrt() + (elem_b.mu / elem_b.eps).sqrt());
    let mean_yi = 0.5 * ((elem_a.eps / elem_a.mu).sqrt() + (elem_b.eps / elem_b.mu).sqrt());
    SideKernel {
        test_elem: a,
        other_elem: b,
        axis: face.axis,
        sigma: if test_is_minus { 1.0 } else { -1.0 },
        test_at_one: test_is_minus,
        other_at_one: !test_is_minus,
        tang,
        s_cross,
        s_self,
        t_plain,
        t_pi_cross,
        t_pi_self,
        half: 0.5,
        alpha_e: dissipation_c / mean_zi,
        alpha_h: dissipation_c / mean_yi,
        boundary: false,
    }
}
