//! Shared helpers for integration tests: a brute-force quadrature
//! implementation of the space-time bilinear form, independent of the
//! sum-factorized kernels, plus small fixtures.
//!
//! The reference implementation here evaluates the space-time bilinear form
//! by brute-force physical quadrature: trial states are evaluated pointwise
//! from their coefficients, volume terms integrate eps dE/dt . v - H . curl v
//! and mu dH/dt . w + curl E . w directly, and face terms integrate the
//! stabilized central flux with the temporal L2 projection of cross traces
//! onto the common test space rebuilt from first principles. Nothing of the
//! sum-factorized kernels, precomputed 1D tables or transfer matrices is
//! reused, so agreement to near machine precision on random data checks the
//! full operator entrywise.


// Each test target includes only the pieces it needs.
#![allow(dead_code)]
use stdg::basis1d::{gauss_rule, ilegendre_deriv, ilegendre_eval, legendre_eval_all};
use stdg::fespace::{
    dof_layout, state_from_unknowns, DegreeVector, DofLayout, SpaceDescriptor, SpatialField,
};
use stdg::mesh::{build_faces, build_mesh, set_temporal_levels, MeshSpec, RegionSpec};
use stdg::residual::{SlabOperator, FIELD_E, FIELD_H};
use std::sync::Arc;

pub const NQ_T: usize = 8;

pub fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed;
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

pub fn levi(a: usize, b: usize, c: usize) -> f64 {
    match (a, b, c) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Scalar spatial basis products of one element at a reference point.
pub fn basis_products(np: [usize; 3], xr: [f64; 3]) -> Vec<f64> {
    let mut l: Vec<Vec<f64>> = (0..3).map(|d| vec![0.0; np[d]]).collect();
    for d in 0..3 {
        legendre_eval_all(np[d] - 1, xr[d], &mut l[d]);
    }
    let mut out = vec![0.0; np[0] * np[1] * np[2]];
    for j0 in 0..np[0] {
        for j1 in 0..np[1] {
            for j2 in 0..np[2] {
                out[(j0 * np[1] + j1) * np[2] + j2] = l[0][j0] * l[1][j1] * l[2][j2];
            }
        }
    }
    out
}

/// Same products with the derivative factor along one axis (reference scale).
pub fn basis_products_deriv(np: [usize; 3], xr: [f64; 3], axis: usize) -> Vec<f64> {
    let mut l: Vec<Vec<f64>> = (0..3).map(|d| vec![0.0; np[d]]).collect();
    for d in 0..3 {
        legendre_eval_all(np[d] - 1, xr[d], &mut l[d]);
    }
    // derivative of the normalized shifted Legendre along `axis`
    let mut ld = vec![0.0; np[axis]];
    for (j, v) in ld.iter_mut().enumerate() {
        *v = stdg::basis1d::legendre_deriv(j, xr[axis]);
    }
    let mut out = vec![0.0; np[0] * np[1] * np[2]];
    for j0 in 0..np[0] {
        for j1 in 0..np[1] {
            for j2 in 0..np[2] {
                let f = [
                    if axis == 0 { ld[j0] } else { l[0][j0] },
                    if axis == 1 { ld[j1] } else { l[1][j1] },
                    if axis == 2 { ld[j2] } else { l[2][j2] },
                ];
                out[(j0 * np[1] + j1) * np[2] + j2] = f[0] * f[1] * f[2];
            }
        }
    }
    out
}

/// Spatially contracted temporal coefficients of one field component at a
/// fixed reference point: s[k][i] such that the physical component equals
/// sum_i l_i(t_ref) s[k][i] / h_c on sub-interval k.
pub fn contract_time(
    layout: &DofLayout,
    state: &[f64],
    e: usize,
    field: usize,
    comp: usize,
    bas: &[f64],
) -> Vec<Vec<f64>> {
    let m = &layout.meta[e];
    (0..m.n_sub)
        .map(|k| {
            (0..=m.p_t)
                .map(|i| {
                    let base = m.trial_idx(field, k, comp, i, 0);
                    (0..m.n_sp).map(|s| state[base + s] * bas[s]).sum()
                })
                .collect()
        })
        .collect()
}

/// Evaluate a contracted trace at slab time `t` (plain, no projection).
pub fn eval_contracted(
    space: &SpaceDescriptor,
    e: usize,
    s: &[Vec<f64>],
    p_t: usize,
    t: f64,
) -> f64 {
    let n_sub = s.len();
    let (t0, t1) = space.partition.sub_interval(e, 0);
    let tau = t1 - t0;
    let k = (((t - space.partition.t_start) / tau) as usize).min(n_sub - 1);
    let (k0, _) = space.partition.sub_interval(e, k);
    let tr = (t - k0) / tau;
    (0..=p_t).map(|i| ilegendre_eval(i, tr) * s[k][i]).sum()
}

/// Piecewise-polynomial L2 projection in time of a contracted trace onto the
/// space of level `lc`, degree `pd`, returned as Legendre coefficients per
/// common sub-interval.
pub fn project_time(
    space: &SpaceDescriptor,
    e: usize,
    s: &[Vec<f64>],
    p_t: usize,
    lc: u8,
    pd: usize,
) -> Vec<Vec<f64>> {
    let t_start = space.partition.t_start;
    let slab = space.partition.t_end - t_start;
    let nc = 1usize << lc;
    let tau_c = slab / nc as f64;
    let nb = s.len();
    let tau_b = slab / nb as f64;
    let per = nb / nc;
    let (qx, qw) = gauss_rule(NQ_T).unwrap();
    let mut lvals = vec![0.0; pd + 1];
    (0..nc)
        .map(|kc| {
            let c0 = t_start + kc as f64 * tau_c;
            let mut mom = vec![0.0; pd + 1];
            for kb in kc * per..(kc + 1) * per {
                let b0 = t_start + kb as f64 * tau_b;
                for (q, &x) in qx.iter().enumerate() {
                    let t = b0 + tau_b * x;
                    let v = eval_contracted(space, e, s, p_t, t);
                    legendre_eval_all(pd, (t - c0) / tau_c, &mut lvals);
                    for (m, lv) in lvals.iter().enumerate() {
                        mom[m] += qw[q] * tau_b * v * lv;
                    }
                }
            }
            // normalized Legendre: the Gram on [c0, c0 + tau_c] is tau_c I
            mom.iter().map(|v| v / tau_c).collect()
        })
        .collect()
}

pub fn eval_projected(proj: &[Vec<f64>], t_start: f64, slab: f64, t: f64) -> f64 {
    let nc = proj.len();
    let tau_c = slab / nc as f64;
    let kc = (((t - t_start) / tau_c) as usize).min(nc - 1);
    let tr = (t - t_start - kc as f64 * tau_c) / tau_c;
    let mut lvals = vec![0.0; proj[kc].len()];
    legendre_eval_all(proj[kc].len() - 1, tr, &mut lvals);
    proj[kc].iter().zip(&lvals).map(|(c, l)| c * l).sum()
}

/// Volume terms by direct quadrature:
/// E rows: int eps dE/dt . v - H . curl v; H rows: int mu dH/dt . w + curl E . w.
pub fn oracle_volume(
    space: &SpaceDescriptor,
    layout: &DofLayout,
    state: &[f64],
    out: &mut [f64],
) {
    let (tq, tw) = gauss_rule(NQ_T).unwrap();
    for (e, m) in layout.meta.iter().enumerate() {
        let elem = &space.mesh.elements[e];
        let jac = elem.h[0] * elem.h[1] * elem.h[2];
        let nq = [m.np[0] + 2, m.np[1] + 2, m.np[2] + 2];
        let rules: Vec<(Vec<f64>, Vec<f64>)> = nq.iter().map(|&n| gauss_rule(n).unwrap()).collect();
        let mut lt = vec![0.0; m.p_t];
        for q0 in 0..nq[0] {
            for q1 in 0..nq[1] {
                for q2 in 0..nq[2] {
                    let xr = [rules[0].0[q0], rules[1].0[q1], rules[2].0[q2]];
                    let wx = rules[0].1[q0] * rules[1].1[q1] * rules[2].1[q2] * jac;
                    let bas = basis_products(m.np, xr);
                    let basd: Vec<Vec<f64>> =
                        (0..3).map(|a| basis_products_deriv(m.np, xr, a)).collect();
                    // contracted temporal coefficients for values and gradients
                    let cval: Vec<Vec<Vec<Vec<f64>>>> = (0..2)
                        .map(|f| {
                            (0..3)
                                .map(|c| contract_time(layout, state, e, f, c, &bas))
                                .collect()
                        })
                        .collect();
                    // gradient contractions: d/dx_a of component b (reference
                    // derivative; physical scale applied at use site)
                    let cgrad: Vec<Vec<Vec<Vec<Vec<f64>>>>> = (0..2)
                        .map(|f| {
                            (0..3)
                                .map(|a| {
                                    (0..3)
                                        .map(|b| {
                                            contract_time(layout, state, e, f, b, &basd[a])
                                        })
                                        .collect()
                                })
                                .collect()
                        })
                        .collect();
                    for k in 0..m.n_sub {
                        let (t0, t1) = space.partition.sub_interval(e, k);
                        let tau = t1 - t0;
                        for (qt, &xt) in tq.iter().enumerate() {
                            let w = wx * tw[qt] * tau;
                            legendre_eval_all(m.p_t - 1, xt, &mut lt);
                            // field values, time derivatives and curls
                            let mut dt = [[0.0; 3]; 2];
                            let mut val = [[0.0; 3]; 2];
                            let mut curl = [[0.0; 3]; 2];
                            for f in 0..2 {
                                for c in 0..3 {
                                    for i in 0..=m.p_t {
                                        let li = ilegendre_eval(i, xt);
                                        let di = ilegendre_deriv(i, xt) / tau;
                                        val[f][c] += li * cval[f][c][k][i] / elem.h[c];
                                        dt[f][c] += di * cval[f][c][k][i] / elem.h[c];
                                    }
                                }
                                for c in 0..3 {
                                    for a in 0..3 {
                                        for b in 0..3 {
                                            let s = levi(c, a, b);
                                            if s == 0.0 {
                                                continue;
                                            }
                                            for i in 0..=m.p_t {
                                                let li = ilegendre_eval(i, xt);
                                                curl[f][c] += s * li * cgrad[f][a][b][k][i]
                                                    / (elem.h[a] * elem.h[b]);
                                            }
                                        }
                                    }
                                }
                            }
                            // accumulate test rows
                            for c in 0..3 {
                                // E rows: eps dE/dt . v - H . curl v
                                let se = elem.eps * dt[FIELD_E][c];
                                let mut ge = [0.0; 3];
                                for a in 0..3 {
                                    for b in 0..3 {
                                        ge[a] -= levi(b, a, c) * val[FIELD_H][b];
                                    }
                                }
                                // H rows: mu dH/dt . w + (curl E) . w
                                let sh = elem.mu * dt[FIELD_H][c] + curl[FIELD_E][c];
                                for i in 0..m.p_t {
                                    let wi = w * lt[i] / elem.h[c];
                                    let dst_e = m.idx(FIELD_E, k, c, i, 0);
                                    let dst_h = m.idx(FIELD_H, k, c, i, 0);
                                    for (j, &bj) in bas.iter().enumerate() {
                                        let mut ve = se * bj;
                                        for a in 0..3 {
                                            if ge[a] != 0.0 {
                                                ve += ge[a] * basd[a][j] / elem.h[a];
                                            }
                                        }
                                        out[dst_e + j] += wi * ve;
                                        out[dst_h + j] += wi * sh * bj;
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

/// Face terms by direct quadrature over each face/test-side pair.
pub fn oracle_faces(
    space: &SpaceDescriptor,
    layout: &DofLayout,
    state: &[f64],
    dissipation_c: f64,
    out: &mut [f64],
) {
    let faces = build_faces(&space.mesh);
    let t_start = space.partition.t_start;
    let slab = space.partition.t_end - t_start;
    for face in &faces {
        let sides: Vec<(usize, usize, bool, bool, f64, f64, bool)> = match face.plus {
            // (test, other, test_at_one, other_at_one, sigma, half, boundary)
            Some(plus) => vec![
                (face.minus, plus, true, false, 1.0, 0.5, false),
                (plus, face.minus, false, true, -1.0, 0.5, false),
            ],
            None => vec![(
                face.minus,
                face.minus,
                face.boundary_at_one,
                face.boundary_at_one,
                if face.boundary_at_one { 1.0 } else { -1.0 },
                1.0,
                true,
            )],
        };
        for &(ea, eb, a_at_one, b_at_one, sigma, half, boundary) in &sides {
            let ma = &layout.meta[ea];
            let mb = &layout.meta[eb];
            let elem_a = &space.mesh.elements[ea];
            let elem_b = &space.mesh.elements[eb];
            let d = face.axis;
            let tang = face.tangential_axes();
            let la = space.partition.levels[ea];
            let lb = space.partition.levels[eb];
            let lc = la.min(lb);
            let pd = ma.p_t.min(mb.p_t) - 1;
            let lmax = la.max(lb);
            // overlap in the test element's tangential reference coordinates
            let range = if ea == face.minus {
                face.range_minus
            } else {
                face.range_plus
            };
            let alpha = if boundary {
                [dissipation_c / (elem_a.mu / elem_a.eps).sqrt(), 0.0]
            } else {
                let zi = 0.5 * ((elem_a.mu / elem_a.eps).sqrt() + (elem_b.mu / elem_b.eps).sqrt());
                let yi = 0.5 * ((elem_a.eps / elem_a.mu).sqrt() + (elem_b.eps / elem_b.mu).sqrt());
                [dissipation_c / zi, dissipation_c / yi]
            };
            let nq = [
                ma.np[tang[0]].max(mb.np[tang[0]]) + 2,
                ma.np[tang[1]].max(mb.np[tang[1]]) + 2,
            ];
            let r0 = gauss_rule(nq[0]).unwrap();
            let r1 = gauss_rule(nq[1]).unwrap();
            let (tq, twq) = gauss_rule(NQ_T).unwrap();
            let nfine = 1usize << lmax;
            let tau_fine = slab / nfine as f64;
            let mut lt = vec![0.0; ma.p_t];
            for qa in 0..nq[0] {
                for qb in 0..nq[1] {
                    // test-side reference point on the overlap
                    let xa_t0 = range[0][0] + (range[0][1] - range[0][0]) * r0.0[qa];
                    let xa_t1 = range[1][0] + (range[1][1] - range[1][0]) * r1.0[qb];
                    let w_sp = (range[0][1] - range[0][0])
                        * (range[1][1] - range[1][0])
                        * r0.1[qa]
                        * r1.1[qb]
                        * elem_a.h[tang[0]]
                        * elem_a.h[tang[1]];
                    let mut xra = [0.0; 3];
                    xra[d] = if a_at_one { 1.0 } else { 0.0 };
                    xra[tang[0]] = xa_t0;
                    xra[tang[1]] = xa_t1;
                    // physical point and the other side's reference point
                    let mut x = [0.0; 3];
                    for dd in 0..3 {
                        x[dd] = elem_a.origin[dd] + elem_a.h[dd] * xra[dd];
                    }
                    let mut xrb = [0.0; 3];
                    for dd in 0..3 {
                        xrb[dd] = (x[dd] - elem_b.origin[dd]) / elem_b.h[dd];
                    }
                    xrb[d] = if b_at_one { 1.0 } else { 0.0 };
                    let bas_a = basis_products(ma.np, xra);
                    let bas_b = basis_products(mb.np, xrb);
                    // contracted traces of every tangential component
                    let mut ca = vec![vec![Vec::new(); 3]; 2];
                    let mut cb = vec![vec![Vec::new(); 3]; 2];
                    let mut proj_b = vec![vec![Vec::new(); 3]; 2];
                    let mut proj_a = vec![vec![Vec::new(); 3]; 2];
                    for f in 0..2 {
                        for &c in &tang {
                            ca[f][c] = contract_time(layout, state, ea, f, c, &bas_a);
                            cb[f][c] = contract_time(layout, state, eb, f, c, &bas_b);
                            if !boundary {
                                proj_b[f][c] = project_time(space, eb, &cb[f][c], mb.p_t, lc, pd);
                                if dissipation_c > 0.0 {
                                    proj_a[f][c] =
                                        project_time(space, ea, &ca[f][c], ma.p_t, lc, pd);
                                }
                            }
                        }
                    }
                    for kf in 0..nfine {
                        let f0 = t_start + kf as f64 * tau_fine;
                        for (qt, &xt) in tq.iter().enumerate() {
                            let t = f0 + tau_fine * xt;
                            let w = w_sp * twq[qt] * tau_fine;
                            // locate the test sub-interval and reference time
                            let tau_a = slab / ma.n_sub as f64;
                            let ka = (((t - t_start) / tau_a) as usize).min(ma.n_sub - 1);
                            let tra = (t - t_start - ka as f64 * tau_a) / tau_a;
                            legendre_eval_all(ma.p_t - 1, tra, &mut lt);
                            for &c in &tang {
                                let b = tang[0] + tang[1] - c;
                                let sgn = sigma * levi(c, d, b);
                                // plain self traces (physical values)
                                let ha =
                                    eval_contracted(space, ea, &ca[FIELD_H][b], ma.p_t, t)
                                        / elem_a.h[b];
                                let ea_v =
                                    eval_contracted(space, ea, &ca[FIELD_E][b], ma.p_t, t)
                                        / elem_a.h[b];
                                // central flux sources
                                let (mut s_e, mut s_h);
                                if boundary {
                                    s_e = -half * sgn * ha;
                                    s_h = -half * sgn * ea_v;
                                } else {
                                    let hb = eval_projected(&proj_b[FIELD_H][b], t_start, slab, t)
                                        / elem_b.h[b];
                                    let eb_v =
                                        eval_projected(&proj_b[FIELD_E][b], t_start, slab, t)
                                            / elem_b.h[b];
                                    s_e = -half * sgn * (ha + hb);
                                    s_h = -half * sgn * (ea_v - eb_v);
                                }
                                // dissipative jump penalties (component c)
                                if dissipation_c > 0.0 {
                                    if boundary {
                                        let ec =
                                            eval_contracted(space, ea, &ca[FIELD_E][c], ma.p_t, t)
                                                / elem_a.h[c];
                                        s_e += alpha[0] * ec;
                                    } else {
                                        let pa_e =
                                            eval_projected(&proj_a[FIELD_E][c], t_start, slab, t)
                                                / elem_a.h[c];
                                        let pb_e =
                                            eval_projected(&proj_b[FIELD_E][c], t_start, slab, t)
                                                / elem_b.h[c];
                                        let pa_h =
                                            eval_projected(&proj_a[FIELD_H][c], t_start, slab, t)
                                                / elem_a.h[c];
                                        let pb_h =
                                            eval_projected(&proj_b[FIELD_H][c], t_start, slab, t)
                                                / elem_b.h[c];
                                        s_e += alpha[0] * (pa_e - pb_e);
                                        s_h += alpha[1] * (pa_h - pb_h);
                                    }
                                }
                                for i in 0..ma.p_t {
                                    let wi = w * lt[i] / elem_a.h[c];
                                    let dst_e = ma.idx(FIELD_E, ka, c, i, 0);
                                    let dst_h = ma.idx(FIELD_H, ka, c, i, 0);
                                    for (j, &bj) in bas_a.iter().enumerate() {
                                        out[dst_e + j] += wi * s_e * bj;
                                        out[dst_h + j] += wi * s_h * bj;
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

/// Reference bilinear form B(U, .) on a raw trial coefficient vector.
pub fn oracle_apply(
    space: &SpaceDescriptor,
    layout: &DofLayout,
    dissipation_c: f64,
    state: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; layout.total];
    oracle_volume(space, layout, state, &mut out);
    oracle_faces(space, layout, state, dissipation_c, &mut out);
    out
}

pub struct Config {
    pub label: &'static str,
    pub coarse: [usize; 3],
    pub regions: Vec<RegionSpec>,
    pub deg_of_level: [DegreeVector; 2],
    pub level_of_level: [u8; 2],
    pub dissipation_c: f64,
}

pub fn build(cfg: &Config) -> (SpaceDescriptor, SlabOperator) {
    let mesh = Arc::new(
        build_mesh(&MeshSpec {
            box_size: [1.0, 1.0, 1.0],
            coarse: cfg.coarse,
            eps: 1.0,
            mu: 1.0,
            regions: cfg.regions.clone(),
        })
        .unwrap(),
    );
    let degrees: Vec<DegreeVector> = mesh
        .elements
        .iter()
        .map(|e| cfg.deg_of_level[(e.key.level as usize).min(1)])
        .collect();
    let levels: Vec<u8> = mesh
        .elements
        .iter()
        .map(|e| cfg.level_of_level[(e.key.level as usize).min(1)])
        .collect();
    let part = set_temporal_levels(0.0, 0.5, levels);
    let space = SpaceDescriptor::new(mesh, part, degrees);
    let op = SlabOperator::new(space.clone(), cfg.dissipation_c);
    (space, op)
}

/// Largest entrywise discrepancy (relative to the residual scale) between
/// the matrix-free residual and the quadrature reference on random data.
pub fn relative_discrepancy(cfg: &Config, seed: u64) -> f64 {
    let (space, op) = build(cfg);
    let layout = dof_layout(&space);
    let u = pseudo_random(layout.total, seed);
    let initial = SpatialField {
        data: pseudo_random(layout.spatial_total, seed ^ 0xabcdef),
    };
    let loads = pseudo_random(layout.total, seed ^ 0x123456);
    let r_mf = op.full_residual(&u, &initial, &loads);
    let state = state_from_unknowns(&layout, &u, &initial);
    let r_or: Vec<f64> = oracle_apply(&space, &layout, cfg.dissipation_c, &state.data)
        .iter()
        .zip(&loads)
        .map(|(b, l)| b - l)
        .collect();
    let scale = r_or.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let max_diff = r_mf
        .iter()
        .zip(&r_or)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    max_diff / scale
}

pub fn check_equivalence(cfg: &Config, seed: u64) {
    let rel = relative_discrepancy(cfg, seed);
    assert!(rel <= 1e-11, "{}: entrywise mismatch ratio {rel:.3e}", cfg.label);
}

/// The standard verification suite: conforming and 2:1 nonconforming meshes,
/// material jumps, mixed temporal degrees and levels, with and without the
/// dissipative penalty.
pub fn equivalence_suite() -> Vec<Config> {
    vec![
        Config {
            label: "2x2x1 conforming uniform c=0",
            coarse: [2, 2, 1],
            regions: vec![],
            deg_of_level: [
                DegreeVector { p_t: 2, p: [1, 1, 0] };
                2
            ],
            level_of_level: [0, 0],
            dissipation_c: 0.0,
        },
        Config {
            label: "2x1x1 material jump c=0.5",
            coarse: [2, 1, 1],
            regions: vec![RegionSpec {
                lo: [0.0, 0.0, 0.0],
                hi: [0.5, 1.0, 1.0],
                level: 0,
                eps: 2.0,
                mu: 1.0,
            }],
            deg_of_level: [
                Config::deg(2, [1, 1, 1]),
                Config::deg(2, [1, 1, 1]),
            ],
            level_of_level: [0, 0],
            dissipation_c: 0.5,
        },
        Config {
            label: "2:1 nonconforming c=0",
            coarse: [2, 1, 1],
            regions: vec![RegionSpec {
                lo: [0.0, 0.0, 0.0],
                hi: [0.5, 1.0, 1.0],
                level: 1,
                eps: 2.0,
                mu: 1.0,
            }],
            deg_of_level: [Config::deg(2, [1, 0, 1]), Config::deg(1, [1, 0, 1])],
            level_of_level: [0, 1],
            dissipation_c: 0.0,
        },
        Config {
            label: "2:1 nonconforming c=0.5",
            coarse: [2, 1, 1],
            regions: vec![RegionSpec {
                lo: [0.0, 0.0, 0.0],
                hi: [0.5, 1.0, 1.0],
                level: 1,
                eps: 2.0,
                mu: 1.0,
            }],
            deg_of_level: [Config::deg(2, [1, 0, 1]), Config::deg(1, [1, 0, 1])],
            level_of_level: [0, 1],
            dissipation_c: 0.5,
        },
        Config {
            label: "single element p=3 p_t=3 c=0.5",
            coarse: [1, 1, 1],
            regions: vec![],
            deg_of_level: [Config::deg(3, [3, 2, 1]); 2],
            level_of_level: [1, 1],
            dissipation_c: 0.5,
        },
    ]
}

impl Config {
    pub fn deg(p_t: usize, p: [usize; 3]) -> DegreeVector {
        DegreeVector { p_t, p }
    }
}

