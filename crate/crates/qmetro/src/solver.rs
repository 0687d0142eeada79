//! Primal–dual interior-point solver for the conic problems in [`crate::sdp`].
//!
//! The method is a Mehrotra predictor–corrector iteration in the
//! Nesterov–Todd scaling, solving the standard-form pair
//!
//! ```text
//!   min ⟨C, X⟩ + c_fᵀu   s.t.  A(X) + F u = b,  X ⪰ 0
//!   max bᵀy              s.t.  Aᵀ(y) + Z = C,  Fᵀy = c_f,  Z ⪰ 0
//! ```
//!
//! simultaneously from the infeasible identity start `X = Z = I`, `y = 0`,
//! `u = 0`.  Each iteration forms the Schur complement
//! `M_ij = ⟨A_i, W A_j W⟩` in the NT scaling point `W`, factors it by
//! Cholesky, and eliminates the free variables through the bordered system
//!
//! ```text
//!   [ M   F ] [Δy]   [g]
//!   [ Fᵀ  0 ] [Δu] = [r_f]
//! ```
//!
//! Every operation is deterministic — fixed sweep orders, no randomized
//! pivoting — so a given problem always produces bit-identical iterates,
//! which the exact certification layer depends on.
//!
//! Set `QMETRO_SOLVER_TRACE=1` to print per-iteration convergence
//! diagnostics (μ, gap, residuals, objectives) to stderr.

use crate::error::{Error, Result};
use crate::linalg::{cholesky, chol_solve, sym_eig, RMat};
use crate::sdp::{svec_pack, ConicProblem, ConicSolution, SolverStatus};

// ═══════════════════════════════════════════════════════════════════
// Configuration and backend trait
// ═══════════════════════════════════════════════════════════════════

/// Interior-point stopping and stepping parameters.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Relative duality-gap tolerance.
    pub gap_tol: f64,
    /// Relative primal/dual feasibility tolerance.
    pub feas_tol: f64,
    /// Relaxed tolerance at which an iterate stranded by a numerical
    /// breakdown or the iteration cap still counts as solved
    /// ([`SolverStatus::NearOptimal`]).  Problems whose optimal
    /// multipliers are non-unique stall at the machine-precision floor a
    /// few digits short of `gap_tol`; their final iterate is still far
    /// more accurate than this threshold.
    pub accept_tol: f64,
    /// Iteration cap.
    pub max_iterations: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gap_tol: 1e-9,
            feas_tol: 1e-9,
            accept_tol: 1e-6,
            max_iterations: 200,
            step_fraction: 0.98,
        }
    }
}

/// Anything that can solve a [`ConicProblem`].
pub trait SdpBackend {
    /// Solve to the configured tolerances.
    fn solve(&self, problem: &ConicProblem, config: &SolverConfig) -> Result<ConicSolution>;
}

/// The built-in dense interior-point backend.
#[derive(Debug, Clone, Default)]
pub struct InteriorPoint;

/// Convenience: solve and accept [`SolverStatus::Optimal`] or
/// [`SolverStatus::NearOptimal`] (within [`SolverConfig::accept_tol`]).
pub fn solve_to_optimal(problem: &ConicProblem, config: &SolverConfig) -> Result<ConicSolution> {
    let sol = InteriorPoint.solve(problem, config)?;
    match sol.status {
        SolverStatus::Optimal | SolverStatus::NearOptimal => Ok(sol),
        SolverStatus::MaxIterations => Err(Error::solver(format!(
            "'{}' did not converge in {} iterations (gap {:.3e}, primal {:.3e}, dual {:.3e})",
            problem.name, sol.iterations, sol.gap, sol.primal_residual, sol.dual_residual
        ))),
        SolverStatus::Numerical(msg) => Err(Error::solver(format!(
            "'{}' hit a numerical failure after {} iterations: {msg}",
            problem.name, sol.iterations
        ))),
    }
}

// ═══════════════════════════════════════════════════════════════════
// Implementation
// ═══════════════════════════════════════════════════════════════════

/// Row data in matrix-entry form: `(block, i, j, entry)` with `i ≤ j`,
/// where `entry` is the actual matrix element (svec scaling undone).
type EntryRow = Vec<(usize, usize, usize, f64)>;

struct Workspace<'p> {
    p: &'p ConicProblem,
    offsets: Vec<usize>,
    entry_rows: Vec<EntryRow>,
    /// Blocks touched by each row.
    row_blocks: Vec<Vec<usize>>,
    svec_len: usize,
    n_total: usize,
    b_norm: f64,
    c_norm: f64,
    cf_norm: f64,
}

impl SdpBackend for InteriorPoint {
    fn solve(&self, problem: &ConicProblem, config: &SolverConfig) -> Result<ConicSolution> {
        validate(problem)?;
        let ws = Workspace::new(problem);
        ws.run(config)
    }
}

fn validate(p: &ConicProblem) -> Result<()> {
    let m = p.rows.len();
    if p.rhs.len() != m {
        return Err(Error::shape("rhs length does not match row count"));
    }
    if p.f_mat.rows != m && !(m == 0 && p.f_mat.rows == 0) {
        return Err(Error::shape("free coupling row count does not match rows"));
    }
    if p.cost_free.len() != p.f_mat.cols {
        return Err(Error::shape("free cost length does not match free columns"));
    }
    if p.cost.len() != p.blocks.len() {
        return Err(Error::shape("cost block count does not match block count"));
    }
    for (c, &n) in p.cost.iter().zip(&p.blocks) {
        if c.rows != n || c.cols != n {
            return Err(Error::shape("cost block dimension mismatch"));
        }
    }
    let sv = p.svec_len();
    for row in &p.rows {
        for &(i, _) in row {
            if i as usize >= sv {
                return Err(Error::shape("row coordinate out of svec range"));
            }
        }
    }
    if m == 0 {
        return Err(Error::config("conic problem has no equality rows"));
    }
    Ok(())
}

impl<'p> Workspace<'p> {
    fn new(p: &'p ConicProblem) -> Self {
        let offsets = p.svec_offsets();
        let svec_len = p.svec_len();
        let n_total: usize = p.blocks.iter().sum();
        // Convert each sparse svec row to matrix-entry form once.
        let mut entry_rows = Vec::with_capacity(p.rows.len());
        let mut row_blocks = Vec::with_capacity(p.rows.len());
        for row in &p.rows {
            let mut entries: EntryRow = Vec::with_capacity(row.len());
            let mut blocks: Vec<usize> = Vec::new();
            for &(idx, v) in row {
                let (k, i, j) = locate(&offsets, &p.blocks, idx as usize);
                let entry = if i == j { v } else { v / std::f64::consts::SQRT_2 };
                entries.push((k, i, j, entry));
                if !blocks.contains(&k) {
                    blocks.push(k);
                }
            }
            entry_rows.push(entries);
            row_blocks.push(blocks);
        }
        let b_norm = p.rhs.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        let c_norm = p
            .cost
            .iter()
            .flat_map(|c| c.data.iter())
            .fold(0.0f64, |a, &x| a.max(x.abs()));
        let cf_norm = p.cost_free.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        Workspace { p, offsets, entry_rows, row_blocks, svec_len, n_total, b_norm, c_norm, cf_norm }
    }

    /// `A(X)` for per-block symmetric `X` given its packed svec.
    fn a_apply(&self, sv: &[f64]) -> Vec<f64> {
        self.p
            .rows
            .iter()
            .map(|row| row.iter().map(|&(i, v)| v * sv[i as usize]).sum())
            .collect()
    }

    /// `Aᵀ(y)` as dense per-block symmetric matrices.
    fn at_apply(&self, y: &[f64]) -> Vec<RMat> {
        let mut out: Vec<RMat> = self.p.blocks.iter().map(|&n| RMat::zeros(n, n)).collect();
        for (row, &yi) in self.entry_rows.iter().zip(y) {
            if yi == 0.0 {
                continue;
            }
            for &(k, i, j, e) in row {
                out[k][(i, j)] += yi * e;
                if i != j {
                    out[k][(j, i)] += yi * e;
                }
            }
        }
        out
    }

    fn pack_all(&self, xs: &[RMat]) -> Vec<f64> {
        let mut sv = vec![0.0; self.svec_len];
        for (k, x) in xs.iter().enumerate() {
            let packed = svec_pack(x);
            sv[self.offsets[k]..self.offsets[k] + packed.len()].copy_from_slice(&packed);
        }
        sv
    }

    fn run(&self, cfg: &SolverConfig) -> Result<ConicSolution> {
        let p = self.p;
        let m = p.rows.len();
        let f = p.free_vars();

        let mut x: Vec<RMat> = p.blocks.iter().map(|&n| RMat::identity(n)).collect();
        let mut z: Vec<RMat> = p.blocks.iter().map(|&n| RMat::identity(n)).collect();
        let mut y = vec![0.0; m];
        let mut u = vec![0.0; f];

        let status;
        let mut iterations = 0;
        let (mut gap, mut rp_rel, mut rd_rel);
        let (mut pobj, mut dobj);

        loop {
            // ─── Residuals and convergence test ───
            let svx = self.pack_all(&x);
            pobj = dot(&self.pack_cost(), &svx) + dot(&p.cost_free, &u);
            dobj = dot(&p.rhs, &y);
            let ax = self.a_apply(&svx);
            let mut r_p: Vec<f64> = (0..m).map(|i| p.rhs[i] - ax[i]).collect();
            for i in 0..m {
                for k in 0..f {
                    r_p[i] -= p.f_mat[(i, k)] * u[k];
                }
            }
            let aty = self.at_apply(&y);
            let r_d: Vec<RMat> = (0..p.blocks.len())
                .map(|k| p.cost[k].sub(&z[k]).sub(&aty[k]))
                .collect();
            let r_f: Vec<f64> = (0..f)
                .map(|k| {
                    p.cost_free[k] - (0..m).map(|i| p.f_mat[(i, k)] * y[i]).sum::<f64>()
                })
                .collect();

            let mu = x
                .iter()
                .zip(&z)
                .map(|(xk, zk)| xk.trace_prod(zk))
                .sum::<f64>()
                / self.n_total as f64;
            gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            rp_rel = r_p.iter().fold(0.0f64, |a, &v| a.max(v.abs())) / (1.0 + self.b_norm);
            let rd_mat = r_d
                .iter()
                .flat_map(|rk| rk.data.iter())
                .fold(0.0f64, |a, &v| a.max(v.abs()))
                / (1.0 + self.c_norm);
            let rf_rel =
                r_f.iter().fold(0.0f64, |a, &v| a.max(v.abs())) / (1.0 + self.cf_norm);
            rd_rel = rd_mat.max(rf_rel);

            if std::env::var_os("QMETRO_SOLVER_TRACE").is_some() {
                eprintln!(
                    "[{}] it={iterations:3} mu={mu:9.2e} gap={gap:9.2e} rp={rp_rel:9.2e} \
                     rd={rd_rel:9.2e} pobj={pobj:+.9e} dobj={dobj:+.9e}",
                    p.name
                );
            }

            if gap < cfg.gap_tol && rp_rel < cfg.feas_tol && rd_rel < cfg.feas_tol {
                status = SolverStatus::Optimal;
                break;
            }
            if iterations >= cfg.max_iterations {
                status = SolverStatus::MaxIterations;
                break;
            }
            iterations += 1;

            // ─── NT scaling point per block ───
            let scalings: Result<Vec<Scaling>> =
                x.iter().zip(&z).map(|(xk, zk)| Scaling::new(xk, zk)).collect();
            let scalings = match scalings {
                Ok(s) => s,
                Err(e) => {
                    status = SolverStatus::Numerical(format!("scaling point failed: {e}"));
                    break;
                }
            };

            // ─── Schur complement and factorizations ───
            let mut schur = self.assemble_schur(&scalings);
            let l_m = match factor_with_ridge(&mut schur) {
                Ok(l) => l,
                Err(e) => {
                    status =
                        SolverStatus::Numerical(format!("Schur factorization failed: {e}"));
                    break;
                }
            };
            // Free-variable border: P = M⁻¹F and K = FᵀP.
            let (p_cols, l_k) = if f > 0 {
                let mut p_cols = RMat::zeros(m, f);
                for k in 0..f {
                    let col: Vec<f64> = (0..m).map(|i| p.f_mat[(i, k)]).collect();
                    let sol = chol_solve(&l_m, &col);
                    for i in 0..m {
                        p_cols[(i, k)] = sol[i];
                    }
                }
                let mut kmat = RMat::zeros(f, f);
                for a in 0..f {
                    for bq in a..f {
                        let v = (0..m).map(|i| p.f_mat[(i, a)] * p_cols[(i, bq)]).sum();
                        kmat[(a, bq)] = v;
                        kmat[(bq, a)] = v;
                    }
                }
                let l_k = match factor_with_ridge(&mut kmat) {
                    Ok(l) => l,
                    Err(e) => {
                        status = SolverStatus::Numerical(format!(
                            "free-variable reduction failed: {e}"
                        ));
                        break;
                    }
                };
                (p_cols, Some(l_k))
            } else {
                (RMat::zeros(m, 0), None)
            };

            let newton = |rprime: &[RMat]| -> (Vec<f64>, Vec<f64>, Vec<RMat>, Vec<RMat>) {
                // g = r_p − A(R') + A(W R_d W)
                let mut diff: Vec<RMat> = Vec::with_capacity(p.blocks.len());
                for k in 0..p.blocks.len() {
                    let t = scalings[k].w_sandwich(&r_d[k]);
                    diff.push(t.sub(&rprime[k]));
                }
                let adiff = self.a_apply(&self.pack_all(&diff));
                let g: Vec<f64> = (0..m).map(|i| r_p[i] + adiff[i]).collect();
                let s = chol_solve(&l_m, &g);
                let (dy, du);
                if let Some(l_k) = &l_k {
                    let rhs_u: Vec<f64> = (0..f)
                        .map(|k| {
                            (0..m).map(|i| p.f_mat[(i, k)] * s[i]).sum::<f64>() - r_f[k]
                        })
                        .collect();
                    let du_v = chol_solve(l_k, &rhs_u);
                    let mut dy_v = s;
                    for i in 0..m {
                        for k in 0..f {
                            dy_v[i] -= p_cols[(i, k)] * du_v[k];
                        }
                    }
                    dy = dy_v;
                    du = du_v;
                } else {
                    dy = s;
                    du = Vec::new();
                }
                let atdy = self.at_apply(&dy);
                let mut dz = Vec::with_capacity(p.blocks.len());
                let mut dx = Vec::with_capacity(p.blocks.len());
                for k in 0..p.blocks.len() {
                    let dzk = r_d[k].sub(&atdy[k]);
                    let mut dxk = rprime[k].sub(&scalings[k].w_sandwich(&dzk));
                    dxk.symmetrize();
                    dz.push(dzk);
                    dx.push(dxk);
                }
                (dy, du, dz, dx)
            };

            // ─── Predictor ───
            let rp_aff: Vec<RMat> = x.iter().map(|xk| xk.scale(-1.0)).collect();
            let (_, _, dz_a, dx_a) = newton(&rp_aff);
            let ap_aff = max_step_set(&x, &dx_a).min(1.0);
            let ad_aff = max_step_set(&z, &dz_a).min(1.0);
            let mut mu_aff = 0.0;
            for k in 0..p.blocks.len() {
                let xn = x[k].add(&dx_a[k].scale(ap_aff));
                let zn = z[k].add(&dz_a[k].scale(ad_aff));
                mu_aff += xn.trace_prod(&zn);
            }
            mu_aff = (mu_aff / self.n_total as f64).max(0.0);
            // Recentering guard: if the equality residuals lag the true
            // complementarity (μ racing into the numerical floor while the
            // iterate is still infeasible), take a pure centering step
            // (σ = 1) that holds μ and lets the long feasibility-restoring
            // component of the Newton direction act.  Without this the
            // iterate slides along the cone boundary and the NT scaling
            // eventually breaks down with the residuals still unconverged.
            let mu_rel = (mu * self.n_total as f64) / (1.0 + pobj.abs() + dobj.abs());
            let infeas = rp_rel.max(rd_rel);
            let sigma = if infeas > 10.0 * mu_rel {
                1.0
            } else {
                ((mu_aff / mu).powi(3)).clamp(1e-10, 1.0)
            };

            // ─── Corrector ───
            let mut rprime = Vec::with_capacity(p.blocks.len());
            for k in 0..p.blocks.len() {
                let sc = &scalings[k];
                let dxh = sc.g_inv.matmul(&dx_a[k]).matmul(&sc.g_inv);
                let dzh = sc.g.matmul(&dz_a[k]).matmul(&sc.g);
                let mut cross = dxh.matmul(&dzh);
                cross = cross.add(&cross.transpose()).scale(0.5);
                // Rc = σμI − V² − sym(ΔX̂ ΔẐ)
                let n = p.blocks[k];
                let mut rc = sc.v_squared().add(&cross).scale(-1.0);
                for a in 0..n {
                    rc[(a, a)] += sigma * mu;
                }
                // R' = G · L_V⁻¹(Rc) · G
                let solved = sc.lyapunov_solve(&rc);
                let mut rp = sc.g.matmul(&solved).matmul(&sc.g);
                rp.symmetrize();
                rprime.push(rp);
            }
            let (dy, du, dz, dx) = newton(&rprime);

            let a_p = (cfg.step_fraction * max_step_set(&x, &dx)).min(1.0);
            let a_d = (cfg.step_fraction * max_step_set(&z, &dz)).min(1.0);
            if a_p < 1e-10 || a_d < 1e-10 {
                status = SolverStatus::Numerical(format!(
                    "step length collapsed (primal {a_p:.3e}, dual {a_d:.3e})"
                ));
                break;
            }
            for k in 0..p.blocks.len() {
                x[k] = x[k].add(&dx[k].scale(a_p));
                x[k].symmetrize();
                z[k] = z[k].add(&dz[k].scale(a_d));
                z[k].symmetrize();
            }
            for i in 0..m {
                y[i] += a_d * dy[i];
            }
            for k in 0..f {
                u[k] += a_p * du[k];
            }
        }

        // Every non-Optimal break happens before the iterate update, so
        // (gap, rp_rel, rd_rel) describe the returned point exactly.  An
        // iterate stranded inside the relaxed tolerance is still a solve.
        let status = match status {
            SolverStatus::Optimal => SolverStatus::Optimal,
            other => {
                if gap < cfg.accept_tol && rp_rel < cfg.accept_tol && rd_rel < cfg.accept_tol {
                    SolverStatus::NearOptimal
                } else {
                    other
                }
            }
        };

        Ok(ConicSolution {
            x_blocks: x,
            u,
            y,
            z_blocks: z,
            sfp_objective: pobj,
            sfd_objective: dobj,
            gap,
            primal_residual: rp_rel,
            dual_residual: rd_rel,
            iterations,
            status,
        })
    }

    fn pack_cost(&self) -> Vec<f64> {
        self.pack_all(&self.p.cost)
    }

    /// Lower triangle of `M_ij = Σ_blocks ⟨A_i, W A_j W⟩`.
    fn assemble_schur(&self, scalings: &[Scaling]) -> RMat {
        let m = self.p.rows.len();
        let mut schur = RMat::zeros(m, m);
        let mut svbuf = vec![0.0; self.svec_len];
        for j in 0..m {
            // S_j = W A_j W, accumulated blockwise from A_j's entries.
            for &k in &self.row_blocks[j] {
                let n = self.p.blocks[k];
                let w = &scalings[k].w;
                let mut s = RMat::zeros(n, n);
                for &(bk, ei, ej, e) in &self.entry_rows[j] {
                    if bk != k {
                        continue;
                    }
                    // e·(W[:,ei] W[ej,:] + W[:,ej] W[ei,:]), halved on diag.
                    for r in 0..n {
                        let wri = w[(r, ei)] * e;
                        let wrj = w[(r, ej)] * e;
                        let srow = &mut s.data[r * n..(r + 1) * n];
                        if ei == ej {
                            for c in 0..n {
                                srow[c] += wri * w[(ej, c)];
                            }
                        } else {
                            for c in 0..n {
                                srow[c] += wri * w[(ej, c)] + wrj * w[(ei, c)];
                            }
                        }
                    }
                }
                let packed = svec_pack(&s);
                svbuf[self.offsets[k]..self.offsets[k] + packed.len()]
                    .copy_from_slice(&packed);
            }
            for i in j..m {
                let mut acc = 0.0;
                for &(idx, v) in &self.p.rows[i] {
                    acc += v * svbuf[idx as usize];
                }
                schur[(i, j)] = acc;
            }
            // Clear only what this column touched.
            for &k in &self.row_blocks[j] {
                let n = self.p.blocks[k];
                let len = n * (n + 1) / 2;
                svbuf[self.offsets[k]..self.offsets[k] + len].fill(0.0);
            }
        }
        schur
    }
}

fn locate(offsets: &[usize], blocks: &[usize], idx: usize) -> (usize, usize, usize) {
    let mut k = offsets.len() - 1;
    while offsets[k] > idx {
        k -= 1;
    }
    let mut rem = idx - offsets[k];
    // Column-major upper triangle: find j with j(j+1)/2 ≤ rem.
    let mut j = 0usize;
    while (j + 1) * (j + 2) / 2 <= rem {
        j += 1;
    }
    rem -= j * (j + 1) / 2;
    debug_assert!(rem <= j && j < blocks[k]);
    (k, rem, j)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cholesky with one diagonal-ridge retry, as the Schur complement can go
/// numerically semidefinite near convergence.
fn factor_with_ridge(m: &mut RMat) -> Result<RMat> {
    match cholesky(m) {
        Ok(l) => Ok(l),
        Err(_) => {
            let scale = (0..m.rows).map(|i| m[(i, i)]).fold(0.0f64, f64::max).max(1.0);
            let ridge = 1e-12 * scale;
            for i in 0..m.rows {
                m[(i, i)] += ridge;
            }
            cholesky(m)
        }
    }
}

// ═══════════════════════════════════════════════════════════════════
// NT scaling
// ═══════════════════════════════════════════════════════════════════

/// Per-block Nesterov–Todd scaling point and the spectral data the
/// corrector needs.
struct Scaling {
    /// `W = X^{1/2}(X^{1/2} Z X^{1/2})^{-1/2} X^{1/2}`.
    w: RMat,
    /// `G = W^{1/2}`.
    g: RMat,
    /// `G⁻¹`.
    g_inv: RMat,
    /// Eigenvalues of `V = G Z G`.
    v_vals: Vec<f64>,
    /// Eigenvectors of `V` (columns).
    v_vecs: RMat,
}

impl Scaling {
    fn new(x: &RMat, z: &RMat) -> Result<Self> {
        let x_half = spectral_power(x, 0.5, "X^(1/2)")?;
        let t = x_half.matmul(z).matmul(&x_half);
        let t_neg_half = spectral_power(&t, -0.5, "(X^(1/2) Z X^(1/2))^(-1/2)")?;
        let mut w = x_half.matmul(&t_neg_half).matmul(&x_half);
        w.symmetrize();
        let g = spectral_power(&w, 0.5, "W^(1/2)")?;
        let g_inv = spectral_power(&w, -0.5, "W^(-1/2)")?;
        let mut v = g.matmul(z).matmul(&g);
        v.symmetrize();
        let (v_vals, v_vecs) = sym_eig(&v)?;
        if v_vals.last().copied().unwrap_or(0.0) <= 0.0 {
            return Err(Error::numeric("NT scaled matrix V lost positive definiteness"));
        }
        Ok(Scaling { w, g, g_inv, v_vals, v_vecs })
    }

    /// `V² = Q diag(λ²) Qᵀ` from the stored eigendecomposition.
    fn v_squared(&self) -> RMat {
        let n = self.v_vals.len();
        let mut out = RMat::zeros(n, n);
        for t in 0..n {
            let lt2 = self.v_vals[t] * self.v_vals[t];
            for r in 0..n {
                let vr = self.v_vecs[(r, t)] * lt2;
                if vr == 0.0 {
                    continue;
                }
                for c in 0..n {
                    out[(r, c)] += vr * self.v_vecs[(c, t)];
                }
            }
        }
        out.symmetrize();
        out
    }

    /// `W · K · W`, symmetrized.
    fn w_sandwich(&self, k: &RMat) -> RMat {
        let mut s = self.w.matmul(k).matmul(&self.w);
        s.symmetrize();
        s
    }

    /// Solve the Lyapunov equation `(V K + K V)/2 = R` for `K` in `V`'s
    /// eigenbasis.
    fn lyapunov_solve(&self, r: &RMat) -> RMat {
        let q = &self.v_vecs;
        let inner = q.transpose().matmul(r).matmul(q);
        let n = r.rows;
        let scaled = RMat::from_fn(n, n, |a, b| {
            2.0 * inner[(a, b)] / (self.v_vals[a] + self.v_vals[b])
        });
        q.matmul(&scaled).matmul(&q.transpose())
    }
}

/// Symmetric spectral power `A^p` via eigendecomposition, guarding against
/// nonpositive eigenvalues for negative/fractional powers.
fn spectral_power(a: &RMat, p: f64, what: &str) -> Result<RMat> {
    let (vals, vecs) = sym_eig(a)?;
    let n = a.rows;
    let floor: f64 = 1e-300;
    let mut powered = Vec::with_capacity(n);
    for &v in &vals {
        if v <= 0.0 && p != p.trunc() {
            if v < -1e-9 * vals[0].abs().max(1.0) {
                return Err(Error::numeric(format!(
                    "{what}: matrix has negative eigenvalue {v:.3e}"
                )));
            }
            powered.push(floor.powf(p));
        } else {
            powered.push(v.max(floor).powf(p));
        }
    }
    let mut out = RMat::zeros(n, n);
    for t in 0..n {
        let pt = powered[t];
        for r in 0..n {
            let vr = vecs[(r, t)] * pt;
            if vr == 0.0 {
                continue;
            }
            for c in 0..n {
                out[(r, c)] += vr * vecs[(c, t)];
            }
        }
    }
    out.symmetrize();
    Ok(out)
}

/// Largest `α` with `X + αΔX ⪰ 0` for every block (∞ if unbounded),
/// located by bisection on Cholesky feasibility.
fn max_step_set(xs: &[RMat], dxs: &[RMat]) -> f64 {
    let mut alpha = f64::INFINITY;
    for (x, dx) in xs.iter().zip(dxs) {
        alpha = alpha.min(max_step(x, dx));
    }
    alpha
}

fn max_step(x: &RMat, dx: &RMat) -> f64 {
    let hi_probe = 1.2;
    if is_pd(&x.add(&dx.scale(hi_probe))) {
        return f64::INFINITY; // full step available (≥ 1/step_fraction)
    }
    let (mut lo, mut hi) = (0.0f64, hi_probe);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if is_pd(&x.add(&dx.scale(mid))) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn is_pd(a: &RMat) -> bool {
    cholesky(a).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{C64, CMat};
    use crate::sdp::{
        complex_eigenvalue_problem, eigenvalue_problem, push_herm_coords, realify,
        ReportSide, SparseRow,
    };
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// min tr(diag(1,2)·X) s.t. tr X = 1, X ⪰ 0 → 1 at X = diag(1,0).
    #[test]
    fn smallest_eigenvalue_program() {
        let problem = ConicProblem {
            name: "min-eig".into(),
            blocks: vec![2],
            rows: vec![vec![(0, 1.0), (2, 1.0)]],
            rhs: vec![1.0],
            f_mat: RMat::zeros(1, 0),
            cost_free: vec![],
            cost: vec![RMat::from_fn(2, 2, |r, c| {
                if r == c {
                    (r + 1) as f64
                } else {
                    0.0
                }
            })],
            report: ReportSide::Sfp,
            report_negate: false,
            variables: vec!["trace".into()],
        };
        problem.verify_row_independence().unwrap();
        let sol = solve_to_optimal(&problem, &SolverConfig::default()).unwrap();
        assert!((problem.reported_value(&sol) - 1.0).abs() < 1e-8);
        assert!((sol.x_blocks[0][(0, 0)] - 1.0).abs() < 1e-7);
        assert!(sol.x_blocks[0][(1, 1)].abs() < 1e-7);
        // SFD multiplier is the eigenvalue bound: max y s.t. diag(1,2) − yI ⪰ 0.
        assert!((sol.y[0] - 1.0).abs() < 1e-7);
    }

    /// max tr(σx·X) s.t. tr X = 1, X ⪰ 0 → 1, through the complex embedding.
    #[test]
    fn pauli_x_expectation_maximization() {
        let sx = CMat::from_fn(2, 2, |r, c| {
            if r != c {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let problem = complex_eigenvalue_problem(&sx);
        let sol = solve_to_optimal(&problem, &SolverConfig::default()).unwrap();
        assert!((problem.reported_value(&sol) - 1.0).abs() < 1e-8);
        // The optimizer is |+⟩⟨+| recovered through the embedding.
        let rho = crate::sdp::derealify(&sol.x_blocks[0]);
        assert!((rho[(0, 1)].re - 0.5).abs() < 1e-6);
        assert!((rho.trace().re - 1.0).abs() < 1e-7);
    }

    /// λ_max via SDP agrees with the dense eigensolver on random symmetric
    /// matrices.
    #[test]
    fn eigenvalue_sdp_matches_eigensolver() {
        let mut rng = StdRng::seed_from_u64(31);
        for trial in 0..10 {
            let n = 3 + (trial % 4);
            let a0 = RMat::from_fn(n, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let mut a = a0.add(&a0.transpose());
            a.symmetrize();
            let problem = eigenvalue_problem(&a);
            let sol = solve_to_optimal(&problem, &SolverConfig::default()).unwrap();
            let (vals, _) = sym_eig(&a).unwrap();
            assert!(
                (problem.reported_value(&sol) - vals[0]).abs() < 1e-7,
                "trial {trial}: sdp {} vs eig {}",
                problem.reported_value(&sol),
                vals[0]
            );
        }
    }

    /// Free variables: min x₁₁ s.t. x₁₁ + u = 3 and u = 2 (second row has no
    /// cone part) forces x₁₁ = 1.
    #[test]
    fn free_variables_enter_equalities() {
        let problem = ConicProblem {
            name: "free-var".into(),
            blocks: vec![1],
            rows: vec![vec![(0, 1.0)], vec![]],
            rhs: vec![3.0, 2.0],
            f_mat: RMat::from_fn(2, 1, |r, _| if r == 0 { 1.0 } else { 1.0 }),
            cost_free: vec![0.0],
            cost: vec![RMat::identity(1)],
            report: ReportSide::Sfp,
            report_negate: false,
            variables: vec!["sum".into(), "pin".into()],
        };
        let sol = solve_to_optimal(&problem, &SolverConfig::default()).unwrap();
        assert!((sol.sfp_objective - 1.0).abs() < 1e-7);
        assert!((sol.u[0] - 2.0).abs() < 1e-7);
    }

    /// Weak duality holds at the returned iterate of every solve, and the two
    /// objectives agree to the gap tolerance.
    #[test]
    fn returned_iterates_certify_weak_duality() {
        let mut rng = StdRng::seed_from_u64(32);
        for _ in 0..5 {
            let n = 4;
            let a0 = RMat::from_fn(n, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let mut a = a0.add(&a0.transpose());
            a.symmetrize();
            let problem = eigenvalue_problem(&a);
            let sol = solve_to_optimal(&problem, &SolverConfig::default()).unwrap();
            // SFP minimizes; its objective must (weakly) dominate the SFD one.
            assert!(sol.sfp_objective - sol.sfd_objective > -1e-8);
            assert!(sol.gap < 1e-9);
            // Cone membership of the returned blocks.
            let (xv, _) = sym_eig(&sol.x_blocks[0]).unwrap();
            let (zv, _) = sym_eig(&sol.z_blocks[0]).unwrap();
            assert!(xv.last().unwrap() > &-1e-9);
            assert!(zv.last().unwrap() > &-1e-9);
        }
    }

    /// Bit-identical solves on repeated runs.
    #[test]
    fn solver_is_deterministic() {
        let mut rng = StdRng::seed_from_u64(33);
        let a0 = RMat::from_fn(6, 6, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let mut a = a0.add(&a0.transpose());
        a.symmetrize();
        let problem = eigenvalue_problem(&a);
        let s1 = solve_to_optimal(&problem, &SolverConfig::default()).unwrap();
        let s2 = solve_to_optimal(&problem, &SolverConfig::default()).unwrap();
        assert_eq!(s1.sfp_objective.to_bits(), s2.sfp_objective.to_bits());
        assert_eq!(s1.iterations, s2.iterations);
        for (x1, x2) in s1.x_blocks[0].data.iter().zip(&s2.x_blocks[0].data) {
            assert_eq!(x1.to_bits(), x2.to_bits());
        }
    }

    /// A Hermitian-embedded equality constraint drives the complex block to
    /// the expected value: fix the full 2×2 Hermitian matrix to ρ and
    /// minimize tr(diag(0,1)·M) — the objective must be ρ₂₂.
    #[test]
    fn complex_embedding_round_trips_through_solver() {
        let rho = CMat::from_fn(2, 2, |r, c| match (r, c) {
            (0, 0) => C64::new(0.7, 0.0),
            (1, 1) => C64::new(0.3, 0.0),
            (0, 1) => C64::new(0.2, 0.1),
            _ => C64::new(0.2, -0.1),
        });
        let basis = crate::linalg::hermitian_basis(2);
        let offsets = [0usize];
        let mut rows: Vec<SparseRow> = Vec::new();
        let mut rhs = Vec::new();
        let mut variables = Vec::new();
        for (k, e) in basis.iter().enumerate() {
            let mut row = SparseRow::new();
            push_herm_coords(&mut row, e, 0, &offsets);
            rows.push(row);
            rhs.push(e.matmul(&rho).trace().re);
            variables.push(format!("pin[{k}]"));
        }
        let cost_c = CMat::diag(&[0.0, 1.0]);
        let problem = ConicProblem {
            name: "pin-complex".into(),
            blocks: vec![4],
            rows,
            rhs,
            f_mat: RMat::zeros(4, 0),
            cost_free: vec![],
            cost: vec![realify(&cost_c).scale(0.5)],
            report: ReportSide::Sfp,
            report_negate: false,
            variables,
        };
        problem.verify_row_independence().unwrap();
        let sol = solve_to_optimal(&problem, &SolverConfig::default()).unwrap();
        assert!((problem.reported_value(&sol) - 0.3).abs() < 1e-7);
        let m = crate::sdp::derealify(&sol.x_blocks[0]);
        assert!(m.sub(&rho).max_abs() < 1e-6);
    }
}
