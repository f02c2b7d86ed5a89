//! Primal-dual interior-point method with Nesterov-Todd scaling.
//!
//! Solves `min c'y  s.t.  F0_b + sum_i y_i F_i_b <= 0` for every block b.
//! Infeasible start, Mehrotra-style adaptive centering, and a Schur
//! complement `H_ij = sum_b <F_i, W^-1 F_j W^-1>` factored by sparse LDL^T.
//! Blocks never couple except through H, so per-block work stays at the
//! block's own dimension.
//!
//! When the main solve stalls with a stagnant primal residual, a phase-1
//! problem `min t  s.t.  F0 + sum y F <= t I` is solved; a positive optimum
//! certifies primal infeasibility, and its dual iterate is the certificate
//! ray (`A*(Z) = 0`, `<F0, Z> > 0`, `Z >= 0`).

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::ldl::LdlFactor;
use super::{check_solution, scale_program, ConicProgram, Solution, SolveStatus, SolverSettings};

struct BlockData {
    dim: usize,
    f0: DMatrix<f64>,
    /// Global variable indices with nonzero coefficients, ascending.
    active: Vec<usize>,
    mats: Vec<DMatrix<f64>>,
    /// Start of this block's segment in the Schur values array.
    h_offset: usize,
}

struct BlockState {
    s: DMatrix<f64>,
    z: DMatrix<f64>,
    /// Inverse NT scaling W^-1 (satisfies W Z W = S).
    v: DMatrix<f64>,
    s_inv: DMatrix<f64>,
    r_p: DMatrix<f64>,
    /// V r_p V, shared by both solves of one iteration.
    vrv: DMatrix<f64>,
}

enum CoreExit {
    Converged,
    DualRay,
    Stalled,
    IterLimit,
}

struct CoreResult {
    exit: CoreExit,
    y: Vec<f64>,
    z: Vec<DMatrix<f64>>,
    iterations: usize,
    pinf: f64,
    dinf: f64,
    relgap: f64,
    dual_objective: f64,
}

pub fn solve(program: &ConicProgram, settings: &SolverSettings) -> Solution {
    if program.num_vars == 0 || program.blocks.is_empty() {
        let y = vec![0.0; program.num_vars];
        let rep = check_solution(program, &y);
        let feasible = rep.worst_matrix_residual <= settings.tol_feas
            && rep.worst_linear_residual <= settings.tol_feas;
        return Solution {
            status: if feasible { SolveStatus::Optimal } else { SolveStatus::Infeasible },
            y,
            objective: rep.objective,
            dual_objective: rep.objective,
            iterations: 0,
            max_block_residual: rep.worst_matrix_residual,
            max_linear_residual: rep.worst_linear_residual,
            infeasibility_certificate: None,
        };
    }

    let (scaled, map) = scale_program(program);
    let o = map.objective_scale;
    let blocks = flatten(&scaled);
    let core = ipm_core(
        scaled.num_vars,
        &blocks,
        &scaled.objective,
        settings,
        settings.max_iter,
        scaled.ordering_positions.as_deref(),
    );

    let mut status;
    let mut certificate = None;
    match core.exit {
        CoreExit::Converged => status = SolveStatus::Optimal,
        CoreExit::DualRay => {
            status = SolveStatus::Infeasible;
            certificate = certificate_string(&blocks, &core.z, scaled.num_vars);
        }
        CoreExit::Stalled | CoreExit::IterLimit => {
            // Degenerate optimal faces can stall the gap at a small plateau
            // while the iterate is already feasible; accept it with the
            // achieved (reported) duality gap.
            if core.pinf <= settings.tol_feas
                && core.dinf <= 1e-3
                && core.relgap <= 100.0 * settings.tol_gap
            {
                status = SolveStatus::Optimal;
            } else {
                status = SolveStatus::NumericalTrouble;
                // A stagnant primal residual with a collapsed gap suggests
                // infeasibility; certify it through the phase-1 problem.
                if core.pinf > 10.0 * settings.tol_feas {
                    if let Some(cert) = phase_one_certificate(&scaled, &blocks, settings) {
                        status = SolveStatus::Infeasible;
                        certificate = Some(cert);
                    }
                }
            }
        }
    }

    let y_orig = map.unscale_vars(&core.y);
    let report = check_solution(program, &y_orig);
    if status == SolveStatus::Optimal {
        // Certify the status against the original program's residuals.
        let ok = report.worst_matrix_residual <= 10.0 * settings.tol_feas
            && report.worst_linear_residual <= 10.0 * settings.tol_feas;
        if !ok {
            status = SolveStatus::NumericalTrouble;
        }
    }

    Solution {
        status,
        objective: report.objective,
        dual_objective: o * core.dual_objective + program.objective_constant,
        y: y_orig,
        iterations: core.iterations,
        max_block_residual: report.worst_matrix_residual,
        max_linear_residual: report.worst_linear_residual,
        infeasibility_certificate: certificate,
    }
}

fn flatten(p: &ConicProgram) -> Vec<BlockData> {
    let mut blocks = Vec::with_capacity(p.blocks.len());
    let mut offset = 0usize;
    for b in &p.blocks {
        let active: Vec<usize> = b.coeffs.iter().map(|(id, _)| id.0).collect();
        let mats: Vec<DMatrix<f64>> = b.coeffs.iter().map(|(_, f)| f.clone()).collect();
        let k = active.len();
        blocks.push(BlockData { dim: b.dim, f0: b.f0.clone(), active, mats, h_offset: offset });
        offset += k * (k + 1) / 2;
    }
    blocks
}

/// Solves `min t  s.t.  F0 + sum y F <= t I, t >= -1`; returns a certificate
/// description when the optimum is strictly positive.
fn phase_one_certificate(
    scaled: &ConicProgram,
    blocks: &[BlockData],
    settings: &SolverSettings,
) -> Option<String> {
    let n = scaled.num_vars;
    let t_idx = n;
    let mut p1_blocks = Vec::with_capacity(blocks.len() + 1);
    let mut offset = 0usize;
    for b in blocks {
        let mut active = b.active.clone();
        let mut mats = b.mats.clone();
        active.push(t_idx);
        mats.push(-DMatrix::<f64>::identity(b.dim, b.dim));
        let k = active.len();
        p1_blocks.push(BlockData {
            dim: b.dim,
            f0: b.f0.clone(),
            active,
            mats,
            h_offset: offset,
        });
        offset += k * (k + 1) / 2;
    }
    // t >= -1 keeps the phase-1 problem bounded.
    p1_blocks.push(BlockData {
        dim: 1,
        f0: DMatrix::from_element(1, 1, -1.0),
        active: vec![t_idx],
        mats: vec![DMatrix::from_element(1, 1, -1.0)],
        h_offset: offset,
    });
    let mut c = vec![0.0; n + 1];
    c[t_idx] = 1.0;
    let core = ipm_core(n + 1, &p1_blocks, &c, settings, settings.max_iter.min(100), None);
    if !matches!(core.exit, CoreExit::Converged) {
        return None;
    }
    let t_star = core.y[t_idx];
    if t_star <= 10.0 * settings.tol_feas {
        return None;
    }
    // The phase-1 dual iterate restricted to the matrix blocks is the ray.
    let z_mat = &core.z[..blocks.len()];
    certificate_string(blocks, z_mat, n).map(|s| format!("phase-1 optimum {t_star:.3e}; {s}"))
}

fn certificate_string(blocks: &[BlockData], z: &[DMatrix<f64>], n: usize) -> Option<String> {
    let z_norm: f64 = z.iter().map(|m| m.trace()).sum();
    if z_norm <= 0.0 {
        return None;
    }
    let mut adj = vec![0.0f64; n];
    let mut pos = 0.0;
    for (b, zb) in blocks.iter().zip(z) {
        for (idx, f) in b.active.iter().zip(&b.mats) {
            if *idx < n {
                adj[*idx] += f.dot(zb);
            }
        }
        pos += b.f0.dot(zb);
    }
    let viol = adj.iter().map(|v| v.abs()).fold(0.0, f64::max) / z_norm;
    Some(format!(
        "dual ray: <F0,Z>/tr(Z) = {:.3e}, ||A*(Z)||/tr(Z) = {:.3e}",
        pos / z_norm,
        viol
    ))
}

fn ipm_core(
    n: usize,
    blocks: &[BlockData],
    objective: &[f64],
    settings: &SolverSettings,
    max_iter: usize,
    positions: Option<&[Option<Vec<f64>>]>,
) -> CoreResult {
    let mut h_entries: Vec<(usize, usize)> = Vec::new();
    for b in blocks {
        for a in 0..b.active.len() {
            for c in a..b.active.len() {
                let (i, j) = (b.active[a], b.active[c]);
                h_entries.push(if i <= j { (i, j) } else { (j, i) });
            }
        }
    }
    let pair_count = h_entries.len();
    for i in 0..n {
        h_entries.push((i, i));
    }
    let mut ldl = LdlFactor::symbolic_with_positions(n, &h_entries, positions);
    let mut h_values = vec![0.0f64; h_entries.len()];

    let nu: f64 = blocks.iter().map(|b| b.dim as f64).sum();
    let c_norm = objective.iter().map(|v| v.abs()).fold(0.0, f64::max);

    let mut y = vec![0.0f64; n];
    let mut state: Vec<BlockState> = blocks
        .iter()
        .map(|b| {
            let tau = 1.0 + b.f0.amax();
            BlockState {
                s: DMatrix::identity(b.dim, b.dim) * tau,
                z: DMatrix::identity(b.dim, b.dim),
                v: DMatrix::identity(b.dim, b.dim),
                s_inv: DMatrix::identity(b.dim, b.dim),
                r_p: DMatrix::zeros(b.dim, b.dim),
                vrv: DMatrix::zeros(b.dim, b.dim),
            }
        })
        .collect();
    let z0_norm: f64 = state.iter().map(|st| st.z.trace()).sum();

    let mut exit = CoreExit::IterLimit;
    let mut iterations = 0;
    let mut stalls = 0;
    let mut merit_history: Vec<f64> = Vec::new();
    let mut best = BestIterate {
        merit: f64::INFINITY,
        y: y.clone(),
        z: Vec::new(),
        pinf: f64::INFINITY,
        dinf: f64::INFINITY,
        relgap: f64::INFINITY,
        dual_objective: 0.0,
    };

    for iter in 0..max_iter {
        iterations = iter + 1;

        // Residuals.
        let rp_norms: Vec<f64> = blocks
            .par_iter()
            .zip(state.par_iter_mut())
            .map(|(b, st)| {
                let mut rp = b.f0.clone();
                for (idx, f) in b.active.iter().zip(&b.mats) {
                    rp += f * y[*idx];
                }
                rp += &st.s;
                let norm = rp.norm();
                st.r_p = rp;
                norm / (1.0 + b.f0.norm())
            })
            .collect();
        let pinf = rp_norms.iter().cloned().fold(0.0, f64::max);

        let mut r_d = objective.to_vec();
        for (b, st) in blocks.iter().zip(&state) {
            for (idx, f) in b.active.iter().zip(&b.mats) {
                r_d[*idx] += f.dot(&st.z);
            }
        }
        let dinf = r_d.iter().map(|v| v.abs()).fold(0.0, f64::max) / (1.0 + c_norm);

        let gap: f64 = state.iter().map(|st| st.s.dot(&st.z)).sum();
        let mu = gap / nu;
        let obj: f64 = objective.iter().zip(&y).map(|(c, v)| c * v).sum();
        // Corrected dual bound, valid for any Z >= 0 regardless of the dual
        // residual: <F0, Z> + r_d' y <= c'y + <A(y), Z> and A(y) <= r_p.
        let dual_obj: f64 = blocks
            .iter()
            .zip(&state)
            .map(|(b, st)| b.f0.dot(&st.z))
            .sum::<f64>()
            + r_d.iter().zip(&y).map(|(r, v)| r * v).sum::<f64>();
        let relgap = (obj - dual_obj).abs().max(gap.min(f64::INFINITY))
            / (1.0 + obj.abs().max(dual_obj.abs()));
        let merit = pinf.max(dinf / 100.0).max(relgap);
        merit_history.push(merit);
        if merit < best.merit {
            best = BestIterate {
                merit,
                y: y.clone(),
                z: state.iter().map(|st| st.z.clone()).collect(),
                pinf,
                dinf,
                relgap,
                dual_objective: dual_obj,
            };
        }
        // Stop once the best iterate has acceptable quality and nothing
        // improved recently; the caller grades the best iterate.
        let good_enough = best.pinf <= settings.tol_feas
            && best.dinf <= 1e-3
            && best.relgap <= 100.0 * settings.tol_gap;
        let flat_short = iter >= 30 && best.merit > 0.9 * merit_history[iter - 10];
        if good_enough && flat_short {
            exit = CoreExit::Stalled;
            break;
        }

        if settings.verbosity >= 2 {
            eprintln!(
                "ipm iter {iter:3}  pinf {pinf:9.2e}  dinf {dinf:9.2e}  gap {relgap:9.2e}  obj {obj:13.6e}"
            );
        }

        if pinf <= settings.tol_feas
            && dinf <= (100.0 * settings.tol_feas).max(1e-9)
            && relgap <= settings.tol_gap
        {
            exit = CoreExit::Converged;
            break;
        }

        // Growing dual iterate aligned with a certificate ray.
        let z_norm: f64 = state.iter().map(|st| st.z.trace()).sum();
        if z_norm > 1e4 * (1.0 + z0_norm) {
            let mut adj = vec![0.0f64; n];
            for (b, st) in blocks.iter().zip(&state) {
                for (idx, f) in b.active.iter().zip(&b.mats) {
                    adj[*idx] += f.dot(&st.z);
                }
            }
            let viol = adj.iter().map(|v| v.abs()).fold(0.0, f64::max) / z_norm;
            if viol <= 1e-7 * (1.0 + c_norm) && dual_obj / z_norm > 1e-9 {
                exit = CoreExit::DualRay;
                break;
            }
        }

        // NT scalings.
        blocks
            .par_iter()
            .zip(state.par_iter_mut())
            .for_each(|(b, st)| {
                if b.dim == 1 {
                    let (s, z) = (st.s[(0, 0)], st.z[(0, 0)]);
                    st.v[(0, 0)] = (z / s).sqrt();
                    st.s_inv[(0, 0)] = 1.0 / s;
                    st.vrv[(0, 0)] = st.v[(0, 0)] * st.v[(0, 0)] * st.r_p[(0, 0)];
                } else {
                    let (v, s_inv) = nt_inverse_scaling(&st.s, &st.z);
                    st.vrv = &v * &st.r_p * &v;
                    st.v = v;
                    st.s_inv = s_inv;
                }
            });

        // Schur complement values (block segments are disjoint).
        let local_h: Vec<Vec<f64>> = blocks
            .par_iter()
            .zip(state.par_iter())
            .map(|(b, st)| {
                let k = b.active.len();
                let mut vals = Vec::with_capacity(k * (k + 1) / 2);
                if b.dim == 1 {
                    let v2 = st.v[(0, 0)] * st.v[(0, 0)];
                    for a in 0..k {
                        let fa = b.mats[a][(0, 0)];
                        for c in a..k {
                            vals.push(fa * b.mats[c][(0, 0)] * v2);
                        }
                    }
                } else {
                    for a in 0..k {
                        let t = &st.v * &b.mats[a] * &st.v;
                        for c in a..k {
                            vals.push(t.dot(&b.mats[c]));
                        }
                    }
                }
                vals
            })
            .collect();
        for (b, vals) in blocks.iter().zip(&local_h) {
            h_values[b.h_offset..b.h_offset + vals.len()].copy_from_slice(vals);
        }
        let h_max = h_values.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        let mut reg = 1e-13 * h_max;
        for attempt in 0..4 {
            for v in h_values[pair_count..].iter_mut() {
                *v = reg;
            }
            ldl.set_values(&h_values);
            ldl.factor(reg).ok();
            if ldl.regularized_pivots == 0 || attempt == 3 {
                break;
            }
            reg *= 1e3;
        }

        // Predictor (sigma = 0).
        let rhs_aff = build_rhs(blocks, &state, &r_d, |st| st.vrv.clone() - &st.z);
        let dy_aff = solve_refined(&ldl, &rhs_aff);
        let (ds_aff, dz_aff) = directions(blocks, &state, &dy_aff, |st| -st.z.clone());
        let (alpha_aff_p, alpha_aff_d) = step_lengths(&state, &ds_aff, &dz_aff, 1.0);
        let gap_aff: f64 = state
            .iter()
            .zip(ds_aff.iter().zip(&dz_aff))
            .map(|(st, (ds, dz))| {
                (&st.s + ds * alpha_aff_p).dot(&(&st.z + dz * alpha_aff_d))
            })
            .sum();
        // Mehrotra exponent 2 with a cap: timid centering stalls the middle
        // phase when affine steps are partially blocked, and the residual
        // safeguard below still raises sigma when infeasibility lags.
        let mut sigma = (gap_aff / gap).max(0.0).powi(2).clamp(1e-6, 0.8);
        let alpha_aff = alpha_aff_p.min(alpha_aff_d);
        // Keep the gap from outrunning the infeasibility residuals: they
        // only contract linearly in the step length, and letting mu
        // collapse first destroys the Schur conditioning.
        let resmax = pinf.max(dinf);
        if resmax > 10.0 * relgap {
            sigma = sigma.max(0.9);
        } else if resmax > relgap {
            sigma = sigma.max(0.5);
        }

        // Corrector with adaptive centering plus a Mehrotra second-order
        // term built from the affine direction; fall back to the plain
        // corrector when the second-order term shortens the step.
        let smu = sigma * mu;
        let so_terms: Vec<DMatrix<f64>> = state
            .par_iter()
            .zip(ds_aff.par_iter().zip(&dz_aff))
            .map(|(st, (dsb, dzb))| {
                let x = &st.s_inv * dsb * dzb;
                (&x + x.transpose()).scale(0.5)
            })
            .collect();
        let rhs = build_rhs_indexed(blocks, &state, &r_d, |bi, st| {
            &st.vrv + &(&st.s_inv * smu) - &st.z - &so_terms[bi]
        });
        let dy = solve_refined(&ldl, &rhs);
        let (ds, dz) =
            directions_indexed(blocks, &state, &dy, |bi, st| {
                &st.s_inv * smu - &st.z - &so_terms[bi]
            });
        let (ap, ad) = step_lengths(&state, &ds, &dz, 1.0 / 0.99);

        // Recompute without the second-order term only when it crippled
        // the step.
        let (dy, ds, dz, ap, ad) = if ap.min(ad) >= 0.05 {
            (dy, ds, dz, ap, ad)
        } else {
            let rhs_plain = build_rhs_indexed(blocks, &state, &r_d, |_, st| {
                &st.vrv + &(&st.s_inv * smu) - &st.z
            });
            let dy_plain = solve_refined(&ldl, &rhs_plain);
            let (ds_plain, dz_plain) =
                directions_indexed(blocks, &state, &dy_plain, |_, st| &st.s_inv * smu - &st.z);
            let (app, adp) = step_lengths(&state, &ds_plain, &dz_plain, 1.0 / 0.99);
            if app.min(adp) > ap.min(ad) {
                (dy_plain, ds_plain, dz_plain, app, adp)
            } else {
                (dy, ds, dz, ap, ad)
            }
        };
        let (alpha_p, alpha_d) = (0.99 * ap, 0.99 * ad);
        let alpha = alpha_p.min(alpha_d);
        if settings.verbosity >= 3 {
            eprintln!(
                "      sigma {sigma:9.2e}  alpha_aff {alpha_aff:9.2e}  alpha_p {alpha_p:9.2e}  alpha_d {alpha_d:9.2e}"
            );
        }

        if alpha < 1e-8 {
            stalls += 1;
            if stalls >= 3 {
                exit = CoreExit::Stalled;
                break;
            }
        } else {
            stalls = 0;
        }

        // Separate primal and dual step lengths: y and S move together (the
        // primal residual contracts by their common step), Z by its own.
        for (i, d) in dy.iter().enumerate() {
            y[i] += alpha_p * d;
        }
        state
            .iter_mut()
            .zip(ds.iter().zip(&dz))
            .for_each(|(st, (dsb, dzb))| {
                st.s += dsb * alpha_p;
                st.z += dzb * alpha_d;
            });

        // A collapsed gap with stuck primal residual cannot recover.
        if mu < 1e-14 && pinf > 100.0 * settings.tol_feas {
            exit = CoreExit::Stalled;
            break;
        }
    }

    if best.z.is_empty() {
        best.z = state.iter().map(|st| st.z.clone()).collect();
        best.y = y;
    }
    CoreResult {
        exit,
        y: best.y,
        z: best.z,
        iterations,
        pinf: best.pinf,
        dinf: best.dinf,
        relgap: best.relgap,
        dual_objective: best.dual_objective,
    }
}

struct BestIterate {
    merit: f64,
    y: Vec<f64>,
    z: Vec<DMatrix<f64>>,
    pinf: f64,
    dinf: f64,
    relgap: f64,
    dual_objective: f64,
}

/// W^-1 = Z^{1/2} (Z^{1/2} S Z^{1/2})^{-1/2} Z^{1/2}, plus S^-1.
fn nt_inverse_scaling(s: &DMatrix<f64>, z: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let dim = s.nrows();
    let ez = z.clone().symmetric_eigen();
    let mut zh = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let lam = ez.eigenvalues[k].max(1e-300).sqrt();
        let col = ez.eigenvectors.column(k);
        for r in 0..dim {
            for c in 0..dim {
                zh[(r, c)] += lam * col[r] * col[c];
            }
        }
    }
    let a = &zh * s * &zh;
    let ea = a.symmetric_eigen();
    let mut a_inv_h = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let lam = 1.0 / ea.eigenvalues[k].max(1e-300).sqrt();
        let col = ea.eigenvectors.column(k);
        for r in 0..dim {
            for c in 0..dim {
                a_inv_h[(r, c)] += lam * col[r] * col[c];
            }
        }
    }
    let v = &zh * &a_inv_h * &zh;
    let s_inv = s
        .clone()
        .cholesky()
        .map(|ch| ch.inverse())
        .unwrap_or_else(|| pseudo_inverse_sym(s));
    (v, s_inv)
}

fn pseudo_inverse_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = m.nrows();
    let e = m.clone().symmetric_eigen();
    let mut out = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let lam = e.eigenvalues[k];
        if lam.abs() > 1e-300 {
            let w = 1.0 / lam;
            let col = e.eigenvectors.column(k);
            for r in 0..dim {
                for c in 0..dim {
                    out[(r, c)] += w * col[r] * col[c];
                }
            }
        }
    }
    out
}

/// rhs_i = -r_d_i - sum_b <F_i, D_b + V r_p V>, with the closure supplying
/// `D_b + V r_p V` per block.
fn build_rhs<F>(blocks: &[BlockData], state: &[BlockState], r_d: &[f64], common_of: F) -> Vec<f64>
where
    F: Fn(&BlockState) -> DMatrix<f64> + Sync,
{
    build_rhs_indexed(blocks, state, r_d, |_, st| common_of(st))
}

fn build_rhs_indexed<F>(
    blocks: &[BlockData],
    state: &[BlockState],
    r_d: &[f64],
    common_of: F,
) -> Vec<f64>
where
    F: Fn(usize, &BlockState) -> DMatrix<f64> + Sync,
{
    let per_block: Vec<Vec<f64>> = blocks
        .par_iter()
        .zip(state.par_iter())
        .enumerate()
        .map(|(bi, (b, st))| {
            let common = common_of(bi, st);
            b.mats.iter().map(|f| f.dot(&common)).collect()
        })
        .collect();
    let mut rhs: Vec<f64> = r_d.iter().map(|v| -v).collect();
    for (b, vals) in blocks.iter().zip(per_block) {
        for (idx, v) in b.active.iter().zip(vals) {
            rhs[*idx] -= v;
        }
    }
    rhs
}

fn solve_refined(ldl: &LdlFactor, rhs: &[f64]) -> Vec<f64> {
    let mut x = ldl.solve(rhs);
    for _ in 0..2 {
        let ax = ldl.mat_vec(&x);
        let res: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let rn = res.iter().map(|v| v * v).sum::<f64>().sqrt();
        let bn = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        if rn <= 1e-11 * bn {
            break;
        }
        let corr = ldl.solve(&res);
        x.iter_mut().zip(corr).for_each(|(xi, c)| *xi += c);
    }
    x
}

/// ds_b = -r_p - sum dy F; dz_b = D + V (r_p + sum dy F) V, with the closure
/// supplying the centering matrix D per block.
fn directions<F>(
    blocks: &[BlockData],
    state: &[BlockState],
    dy: &[f64],
    d_of: F,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)
where
    F: Fn(&BlockState) -> DMatrix<f64> + Sync,
{
    directions_indexed(blocks, state, dy, |_, st| d_of(st))
}

fn directions_indexed<F>(
    blocks: &[BlockData],
    state: &[BlockState],
    dy: &[f64],
    d_of: F,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)
where
    F: Fn(usize, &BlockState) -> DMatrix<f64> + Sync,
{
    let pairs: Vec<(DMatrix<f64>, DMatrix<f64>)> = blocks
        .par_iter()
        .zip(state.par_iter())
        .enumerate()
        .map(|(bi, (b, st))| {
            let mut step = DMatrix::zeros(b.dim, b.dim);
            for (idx, f) in b.active.iter().zip(&b.mats) {
                step += f * dy[*idx];
            }
            let ds = -(&st.r_p) - &step;
            let dz = d_of(bi, st) + &st.v * (&st.r_p + &step) * &st.v;
            (ds, dz)
        })
        .collect();
    pairs.into_iter().unzip()
}

/// Largest (alpha_p, alpha_d) <= cap keeping S + alpha_p dS and
/// Z + alpha_d dZ positive semidefinite across all blocks.
fn step_lengths(
    state: &[BlockState],
    ds: &[DMatrix<f64>],
    dz: &[DMatrix<f64>],
    cap: f64,
) -> (f64, f64) {
    let per: Vec<(f64, f64)> = state
        .par_iter()
        .zip(ds.par_iter().zip(dz.par_iter()))
        .map(|(st, (dsb, dzb))| (max_step(&st.s, dsb), max_step(&st.z, dzb)))
        .collect();
    per.into_iter()
        .fold((cap, cap), |(ap, ad), (p, d)| (ap.min(p), ad.min(d)))
}

fn max_step(m: &DMatrix<f64>, dm: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        let (v, d) = (m[(0, 0)], dm[(0, 0)]);
        return if d >= 0.0 { f64::INFINITY } else { -v / d };
    }
    match m.clone().cholesky() {
        Some(ch) => {
            let l_inv = ch.l().try_inverse().expect("triangular inverse");
            let w = &l_inv * dm * l_inv.transpose();
            let lam_min = w
                .symmetric_eigenvalues()
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if lam_min >= 0.0 {
                f64::INFINITY
            } else {
                -1.0 / lam_min
            }
        }
        None => {
            // Fall back to backtracking when the iterate lost definiteness.
            let mut alpha = 1.0;
            for _ in 0..60 {
                if (m + dm * alpha).clone().cholesky().is_some() {
                    return alpha;
                }
                alpha *= 0.5;
            }
            0.0
        }
    }
}
