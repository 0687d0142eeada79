//! Conic problem data model, complex→real reduction, and the bound SDPs.
//!
//! Everything the solver consumes is a *real* standard-form pair
//!
//! ```text
//!   (SFP)  min ⟨C, X⟩ + c_fᵀu   s.t.  A(X) + F u = b,   X ⪰ 0
//!   (SFD)  max bᵀy              s.t.  Aᵀ(y) + Z = C,  Fᵀy = c_f,  Z ⪰ 0
//! ```
//!
//! with `X, Z` block-diagonal symmetric and `u` free.  Each bound problem
//! is assembled on the side that makes its variables the *raw coordinates*:
//!
//! * the maximization over strategies (variables `X̃, B, C`) is encoded on
//!   the SFD side — `y` holds the coordinates of `X̃` inside the constraint
//!   map's fixed space (so the fixed-point and trace constraints hold by
//!   construction), the entries of `B`, and of `C`; the slack
//!   `Z = [[X̃, B†],[B, C]]` is the one PSD block, and the Hermiticity side
//!   condition on `BΦ*` enters as the free-variable rows `Fᵀy = 0`;
//! * the minimization over `(λ, Ỹ, h)` is encoded on the SFP side — the
//!   PSD block is `S = [[λI/d_O + Ỹ, 2(H*Φ*−iΦ*h)],[·†, I_q]]` itself,
//!   with `λ, Ỹ, h` eliminated into linear equalities on `S` and recovered
//!   from the solution afterwards.
//!
//! Complex Hermitian blocks are realified as `M ↦ [[Re M, −Im M],[Im M,
//! Re M]]`; every functional carries the accompanying factor ½ so reported
//! optima equal the complex-model values.  Relaxing the embedded structure
//! to general symmetric matrices is exact: averaging any feasible `X` with
//! `J X Jᵀ` (`J` the embedding's rotation) restores the structure without
//! changing objective or feasibility.

use crate::error::{Error, Result};
use crate::linalg::{herm_eig, hermitian_basis, pinv, sym_eig, C64, CMat, RMat, RANK_TOL};
use crate::priors::AveragedData;
use crate::solver::SolverConfig;
use crate::spaces::{LabeledOperator, SpaceRegistry};
use crate::testers::{StrategyClass, TesterMap};
use serde_json::{json, Value};

/// Tolerance for declaring assembled equality rows linearly dependent.
pub const ROW_INDEPENDENCE_TOL: f64 = 1e-10;

// ═══════════════════════════════════════════════════════════════════
// Problem and solution data model
// ═══════════════════════════════════════════════════════════════════

/// Sparse vector over packed `svec` coordinates of all blocks.
pub type SparseRow = Vec<(u32, f64)>;

/// Which standard-form side carries the problem's reported objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportSide {
    /// Report `⟨C, X⟩ + c_fᵀu` (minimization encodings).
    Sfp,
    /// Report `bᵀy` (maximization encodings).
    Sfd,
}

/// A real standard-form semidefinite program (see module docs).
#[derive(Debug, Clone)]
pub struct ConicProblem {
    /// Human-readable problem label.
    pub name: String,
    /// Real symmetric block dimensions.
    pub blocks: Vec<usize>,
    /// Equality rows `A_i` in packed svec coordinates.
    pub rows: Vec<SparseRow>,
    /// Right-hand side `b`.
    pub rhs: Vec<f64>,
    /// Free-variable coupling `F` (`rows.len() × free_vars`), dense.
    pub f_mat: RMat,
    /// Free-variable cost `c_f`.
    pub cost_free: Vec<f64>,
    /// Cost matrices `C`, dense per block.
    pub cost: Vec<RMat>,
    /// Side whose objective is the quantity of interest.
    pub report: ReportSide,
    /// Negate the reported objective (for max problems posed as SFP min).
    pub report_negate: bool,
    /// Names of the SFD coordinates `y` (one per row), for debugging dumps.
    pub variables: Vec<String>,
}

/// Solution statuses a solve can end in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolverStatus {
    /// Feasibility and gap tolerances met.
    Optimal,
    /// Progress stopped at machine precision a few digits short of the
    /// target tolerances, but the final iterate satisfies the relaxed
    /// acceptance tolerance.  Degenerate optimal faces (non-unique
    /// multipliers) routinely end here.
    NearOptimal,
    /// Iteration cap reached before convergence.
    MaxIterations,
    /// Linear algebra broke down (message says where).
    Numerical(String),
}

/// Joint primal/dual iterate returned by a backend.
#[derive(Debug, Clone)]
pub struct ConicSolution {
    /// SFP matrix variable, one per block.
    pub x_blocks: Vec<RMat>,
    /// SFP free variables `u`.
    pub u: Vec<f64>,
    /// SFD multipliers `y`.
    pub y: Vec<f64>,
    /// SFD slack blocks `Z`.
    pub z_blocks: Vec<RMat>,
    /// `⟨C, X⟩ + c_fᵀu`.
    pub sfp_objective: f64,
    /// `bᵀy`.
    pub sfd_objective: f64,
    /// Relative duality gap.
    pub gap: f64,
    /// SFP equality residual (relative ∞-norm).
    pub primal_residual: f64,
    /// SFD residual (relative max-norm over matrix and free parts).
    pub dual_residual: f64,
    /// Iterations used.
    pub iterations: usize,
    /// Termination status.
    pub status: SolverStatus,
}

impl ConicProblem {
    /// Total svec length across blocks.
    pub fn svec_len(&self) -> usize {
        self.blocks.iter().map(|&n| n * (n + 1) / 2).sum()
    }

    /// svec offset of each block.
    pub fn svec_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.blocks.len());
        let mut acc = 0;
        for &n in &self.blocks {
            off.push(acc);
            acc += n * (n + 1) / 2;
        }
        off
    }

    /// Number of free variables.
    pub fn free_vars(&self) -> usize {
        self.f_mat.cols
    }

    /// The objective of interest extracted from a solution.
    pub fn reported_value(&self, sol: &ConicSolution) -> f64 {
        let v = match self.report {
            ReportSide::Sfp => sol.sfp_objective,
            ReportSide::Sfd => sol.sfd_objective,
        };
        if self.report_negate {
            -v
        } else {
            v
        }
    }

    /// Check that the stacked equality system `[A | F]` has full row rank
    /// (rows of `A` extended by the matching row of `F`), via the Gram
    /// matrix's Cholesky with a relative pivot threshold.  Construction is
    /// full-rank by design; this is the verification utility used in tests
    /// and debugging dumps.
    pub fn verify_row_independence(&self) -> Result<()> {
        let m = self.rows.len();
        if m == 0 {
            return Ok(());
        }
        let f = self.free_vars();
        let mut gram = RMat::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let mut dot = sparse_dot(&self.rows[i], &self.rows[j]);
                for k in 0..f {
                    dot += self.f_mat[(i, k)] * self.f_mat[(j, k)];
                }
                gram[(i, j)] = dot;
                gram[(j, i)] = dot;
            }
        }
        let scale = (0..m).map(|i| gram[(i, i)]).fold(0.0f64, f64::max).max(1.0);
        // Pivoted outer-product Cholesky; a tiny pivot flags dependence.
        for k in 0..m {
            let d = gram[(k, k)];
            if d < ROW_INDEPENDENCE_TOL * scale {
                return Err(Error::numeric(format!(
                    "equality rows are numerically dependent (pivot {d:.3e} at row {k}, \
                     variable '{}')",
                    self.variables.get(k).map(String::as_str).unwrap_or("?")
                )));
            }
            let dk = d.sqrt();
            for i in (k + 1)..m {
                gram[(i, k)] /= dk;
            }
            gram[(k, k)] = dk;
            for j in (k + 1)..m {
                let l = gram[(j, k)];
                for i in j..m {
                    let v = gram[(i, k)] * l;
                    gram[(i, j)] -= v;
                }
            }
        }
        Ok(())
    }

    /// Self-describing JSON dump of the problem data, for debugging against
    /// external solvers.
    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                Value::Array(
                    r.iter().map(|&(i, v)| json!([i, v])).collect(),
                )
            })
            .collect();
        let cost: Vec<Value> = self
            .cost
            .iter()
            .map(|c| {
                json!({
                    "dim": c.rows,
                    "entries": c.data.clone(),
                })
            })
            .collect();
        json!({
            "name": self.name,
            "blocks": self.blocks,
            "svec_convention": "diagonal as-is, off-diagonal scaled by sqrt(2), \
                                column-major upper triangle per block",
            "rows": rows,
            "rhs": self.rhs,
            "free_coupling": {
                "rows": self.f_mat.rows,
                "cols": self.f_mat.cols,
                "entries": self.f_mat.data.clone(),
            },
            "cost_free": self.cost_free,
            "cost": cost,
            "report": match self.report { ReportSide::Sfp => "sfp", ReportSide::Sfd => "sfd" },
            "report_negate": self.report_negate,
            "variables": self.variables,
        })
    }
}

fn sparse_dot(a: &SparseRow, b: &SparseRow) -> f64 {
    // Rows are built with ascending coordinates.
    let mut sum = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                sum += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    sum
}

// ═══════════════════════════════════════════════════════════════════
// Complex → real reduction
// ═══════════════════════════════════════════════════════════════════

/// Which real part of a complex pairing a functional extracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    /// `Re tr(W† M)`.
    Re,
    /// `Im tr(W† M)`.
    Im,
}

/// Hermitian representer `G` of the functional `M ↦ Re/Im tr(W† M)` on
/// Hermitian `M`, i.e. the unique Hermitian `G` with `tr(G M)` equal to the
/// requested part.
pub fn herm_functional(w: &CMat, part: Part) -> CMat {
    match part {
        Part::Re => w.add(&w.adjoint()).scale(C64::new(0.5, 0.0)),
        Part::Im => {
            let iw = w.scale(C64::new(0.0, 1.0));
            iw.add(&iw.adjoint()).scale(C64::new(0.5, 0.0))
        }
    }
}

/// Real symmetric embedding `[[Re M, −Im M],[Im M, Re M]]` of a complex
/// matrix (Hermitian input ⇒ symmetric output).
pub fn realify(m: &CMat) -> RMat {
    let n = m.rows;
    assert_eq!(m.rows, m.cols);
    RMat::from_fn(2 * n, 2 * n, |r, c| {
        let (rr, rb) = (r % n, r / n);
        let (cc, cb) = (c % n, c / n);
        match (rb, cb) {
            (0, 0) | (1, 1) => m[(rr, cc)].re,
            (0, 1) => -m[(rr, cc)].im,
            _ => m[(rr, cc)].im,
        }
    })
}

/// Recover the complex Hermitian matrix represented by a real symmetric
/// block, averaging over the embedding's rotation so general symmetric
/// solver output maps back exactly.
pub fn derealify(x: &RMat) -> CMat {
    let n2 = x.rows;
    assert_eq!(n2 % 2, 0);
    let n = n2 / 2;
    CMat::from_fn(n, n, |r, c| {
        let re = 0.5 * (x[(r, c)] + x[(n + r, n + c)]);
        let im = 0.25 * ((x[(n + r, c)] - x[(r, n + c)]) - (x[(n + c, r)] - x[(c, n + r)]));
        C64::new(re, im)
    })
}

/// svec index of entry `(i ≤ j)` in an `n×n` block (column-major upper
/// triangle).
#[inline]
fn svec_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * (j + 1) / 2 + i
}

/// Append the sparse svec coordinates of the functional
/// `M_block ↦ tr(G M_block)` (complex Hermitian `G` on block `block`) to a
/// row.  Coefficients are `svec(realify(G))/2`, so pairing with the
/// realified block returns the complex value.
pub fn push_herm_coords(
    row: &mut SparseRow,
    g: &CMat,
    block: usize,
    offsets: &[usize],
) {
    let gr = realify(g);
    let off = offsets[block] as u32;
    let n2 = gr.rows;
    for j in 0..n2 {
        for i in 0..=j {
            let v = gr[(i, j)];
            if v == 0.0 {
                continue;
            }
            let coeff = if i == j { v / 2.0 } else { v * std::f64::consts::SQRT_2 / 2.0 };
            row.push((off + svec_index(i, j) as u32, coeff));
        }
    }
    row.sort_by_key(|&(i, _)| i);
}

/// Pack a real symmetric matrix into svec coordinates.
pub fn svec_pack(m: &RMat) -> Vec<f64> {
    let n = m.rows;
    let mut v = vec![0.0; n * (n + 1) / 2];
    for j in 0..n {
        for i in 0..=j {
            v[svec_index(i, j)] =
                if i == j { m[(i, j)] } else { m[(i, j)] * std::f64::consts::SQRT_2 };
        }
    }
    v
}

/// Inverse of [`svec_pack`].
pub fn svec_unpack(v: &[f64], n: usize) -> RMat {
    let mut m = RMat::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let x = v[svec_index(i, j)];
            if i == j {
                m[(i, j)] = x;
            } else {
                let e = x / std::f64::consts::SQRT_2;
                m[(i, j)] = e;
                m[(j, i)] = e;
            }
        }
    }
    m
}

// ═══════════════════════════════════════════════════════════════════
// Eigenvalue programs (calibration problems)
// ═══════════════════════════════════════════════════════════════════

/// `max tr(A·X)` over density-normalized `X ⪰ 0` — the SDP form of
/// `λ_max(A)` for real symmetric `A`, used to calibrate the solver against
/// the dense eigensolver.
pub fn eigenvalue_problem(a: &RMat) -> ConicProblem {
    let n = a.rows;
    assert_eq!(a.rows, a.cols);
    let mut sym = a.clone();
    sym.symmetrize();
    let trace_row: SparseRow =
        (0..n).map(|i| ((svec_index(i, i)) as u32, 1.0)).collect();
    ConicProblem {
        name: "lambda-max".into(),
        blocks: vec![n],
        rows: vec![trace_row],
        rhs: vec![1.0],
        f_mat: RMat::zeros(1, 0),
        cost_free: vec![],
        cost: vec![sym.scale(-1.0)],
        report: ReportSide::Sfp,
        report_negate: true,
        variables: vec!["trace".into()],
    }
}

/// Complex Hermitian version of [`eigenvalue_problem`], through the real
/// embedding with its factor-½ pairing correction.
pub fn complex_eigenvalue_problem(a: &CMat) -> ConicProblem {
    let n = a.rows;
    assert_eq!(a.rows, a.cols);
    let offsets = [0usize];
    let mut trace_row = SparseRow::new();
    push_herm_coords(&mut trace_row, &CMat::identity(n), 0, &offsets);
    ConicProblem {
        name: "lambda-max-hermitian".into(),
        blocks: vec![2 * n],
        rows: vec![trace_row],
        rhs: vec![1.0],
        f_mat: RMat::zeros(1, 0),
        cost_free: vec![],
        cost: vec![realify(&a.hermitize()).scale(-0.5)],
        report: ReportSide::Sfp,
        report_negate: true,
        variables: vec!["trace".into()],
    }
}

/// svec offset of each block (free-function form of
/// [`ConicProblem::svec_offsets`], usable before the problem exists).
fn svec_block_offsets(blocks: &[usize]) -> Vec<usize> {
    let mut off = Vec::with_capacity(blocks.len());
    let mut acc = 0;
    for &n in blocks {
        off.push(acc);
        acc += n * (n + 1) / 2;
    }
    off
}

// ═══════════════════════════════════════════════════════════════════
// Shared assembly context
// ═══════════════════════════════════════════════════════════════════

/// Channel-side data shared by every bound program.
///
/// Everything is phrased in terms of the conjugated ensemble factor
/// `Φ* (d×q)`, the pinned off-diagonal target `T = 2·H*Φ*`, and the
/// orthonormal Hermitian basis `{f_k}` of `q×q` matrices.  The common
/// geometry is the `(d+q)`-dimensional bound block
///
/// ```text
///       ⎡ 11-corner (d×d)   12-corner (d×q) ⎤
///   S = ⎢                                   ⎥ ⪰ 0 ,
///       ⎣ 21 = 12†          22-corner (q×q) ⎦
/// ```
///
/// whose 22-corner is pinned to `I_q` and whose 12-corner is pinned (or
/// constrained) to `T − 2iΦ*h` for Hermitian `h`; the Schur complement then
/// says exactly `S11 ⪰ Ω(h)`.
struct BoundContext {
    d: usize,
    q: usize,
    d_out: usize,
    /// `Φ*`, `d×q`, full column rank.
    phis: CMat,
    /// `T = 2·H*Φ*`, `d×q`.
    target: CMat,
    /// `(Φ*)⁺`, `q×d`.
    phis_pinv: CMat,
    /// Orthonormal basis of `range(Φ*)^⊥ ⊂ ℂ^d` (`d−q` vectors).
    cokernel: Vec<Vec<C64>>,
    /// Orthonormal Hermitian basis of `q×q` (identity direction first).
    basis_q: Vec<CMat>,
}

impl BoundContext {
    fn new(data: &AveragedData) -> Result<Self> {
        let d = data.c_bar.registry.total_dim();
        let q = data.q;
        if data.phi.rows != d || data.phi.cols != q {
            return Err(Error::shape(format!(
                "ensemble factor is {}×{}, expected {d}×{q}",
                data.phi.rows, data.phi.cols
            )));
        }
        let d_out = data.c_bar.registry.output_dim();
        let phis = data.phi.conj();
        let target = data.h.data.conj().matmul(&phis).scale(C64::new(2.0, 0.0));
        let phis_pinv = pinv(&phis)?;
        // range(Φ*)^⊥ = null(Φ*†): the small eigenvectors of Φ*Φ*†.
        let gram = phis.matmul(&phis.adjoint());
        let (vals, vecs) = herm_eig(&gram)?;
        let tol = RANK_TOL * vals.first().copied().unwrap_or(0.0).max(1e-300);
        let mut cokernel: Vec<Vec<C64>> = Vec::new();
        for (k, &v) in vals.iter().enumerate() {
            if v <= tol {
                cokernel.push((0..d).map(|r| vecs[(r, k)]).collect());
            }
        }
        if cokernel.len() != d - q {
            return Err(Error::numeric(format!(
                "ensemble factor rank mismatch: {} null directions, expected {}",
                cokernel.len(),
                d - q
            )));
        }
        Ok(BoundContext {
            d,
            q,
            d_out,
            phis,
            target,
            phis_pinv,
            cokernel,
            basis_q: hermitian_basis(q),
        })
    }

    /// A `d×d` matrix embedded in the 11-corner of the bound block.
    fn corner11(&self, g: &CMat) -> CMat {
        let (d, q) = (self.d, self.q);
        CMat::from_fn(d + q, d + q, |r, c| {
            if r < d && c < d {
                g[(r, c)]
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    /// A `q×q` matrix embedded in the 22-corner of the bound block.
    fn corner22(&self, g: &CMat) -> CMat {
        let (d, q) = (self.d, self.q);
        CMat::from_fn(d + q, d + q, |r, c| {
            if r >= d && c >= d {
                g[(r - d, c - d)]
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    /// A `d×q` matrix placed at the 12-corner of an otherwise-zero bound
    /// block (**not** Hermitian — feed it to [`herm_functional`]).
    fn corner12(&self, w: &CMat) -> CMat {
        let (d, q) = (self.d, self.q);
        CMat::from_fn(d + q, d + q, |r, c| {
            if r < d && c >= d {
                w[(r, c - d)]
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    // ——— Row groups on the min side (upper bound / evaluation) ———

    /// `S22 = I_q`: one row per Hermitian basis element,
    /// `⟨f_k ⊕ 22, S⟩ = tr f_k`.
    fn push_s22_rows(
        &self,
        block: usize,
        offsets: &[usize],
        rows: &mut Vec<SparseRow>,
        rhs: &mut Vec<f64>,
        names: &mut Vec<String>,
    ) {
        for (k, f) in self.basis_q.iter().enumerate() {
            let mut row = SparseRow::new();
            push_herm_coords(&mut row, &self.corner22(f), block, offsets);
            rows.push(row);
            rhs.push(f.trace().re);
            names.push(format!("s22[{block};{k}]"));
        }
    }

    /// `S12 − T ∈ range(Φ*)` columnwise: `u†(S12 − T)e_c = 0` for every
    /// cokernel vector `u` (one real and one imaginary row per column).
    fn push_range_rows(
        &self,
        block: usize,
        offsets: &[usize],
        rows: &mut Vec<SparseRow>,
        rhs: &mut Vec<f64>,
        names: &mut Vec<String>,
    ) {
        let (d, q) = (self.d, self.q);
        for (iu, u) in self.cokernel.iter().enumerate() {
            for c in 0..q {
                let mut t = C64::new(0.0, 0.0);
                for a in 0..d {
                    t += u[a].conj() * self.target[(a, c)];
                }
                for part in [Part::Re, Part::Im] {
                    let w = CMat::from_fn(d, q, |r, cc| {
                        if cc == c {
                            u[r]
                        } else {
                            C64::new(0.0, 0.0)
                        }
                    });
                    let g = herm_functional(&self.corner12(&w), part);
                    let mut row = SparseRow::new();
                    push_herm_coords(&mut row, &g, block, offsets);
                    rows.push(row);
                    rhs.push(match part {
                        Part::Re => t.re,
                        Part::Im => t.im,
                    });
                    names.push(format!("rng[{iu};{c};{part:?}]"));
                }
            }
        }
    }

    /// Hermiticity of the recovered gauge `h = (i/2)Φ*⁺(S12 − T)`:
    /// `Re tr(f_k Φ*⁺ S12) = Re tr(f_k Φ*⁺ T)` for every basis element.
    fn push_gauge_herm_rows(
        &self,
        block: usize,
        offsets: &[usize],
        rows: &mut Vec<SparseRow>,
        rhs: &mut Vec<f64>,
        names: &mut Vec<String>,
    ) {
        for (k, f) in self.basis_q.iter().enumerate() {
            let kmat = f.matmul(&self.phis_pinv); // q×d
            let g = herm_functional(&self.corner12(&kmat.adjoint()), Part::Re);
            let mut row = SparseRow::new();
            push_herm_coords(&mut row, &g, block, offsets);
            rows.push(row);
            rhs.push(kmat.matmul(&self.target).trace().re);
            names.push(format!("gauge[{k}]"));
        }
    }

    /// `⟨e, S11⟩ = 0` for every traceless fixed-space element of `map`.
    fn push_fixed_kernel_rows(
        &self,
        map: &TesterMap,
        registry: &SpaceRegistry,
        block: usize,
        offsets: &[usize],
        rows: &mut Vec<SparseRow>,
        rhs: &mut Vec<f64>,
        names: &mut Vec<String>,
    ) -> Result<()> {
        let patterns = map.fixed_support_patterns()?;
        let mut idx = 0usize;
        for_each_fixed_element(registry, &patterns, true, |_, e| {
            let mut row = SparseRow::new();
            push_herm_coords(&mut row, &self.corner11(e), block, offsets);
            rows.push(row);
            rhs.push(0.0);
            names.push(format!("fix[{block};{idx}]"));
            idx += 1;
            Ok(())
        })
    }

    /// The per-causal-order tester maps a class constrains against; see
    /// [`crate::testers::constraint_maps`].
    fn class_maps(class: &StrategyClass, registry: &SpaceRegistry) -> Result<Vec<TesterMap>> {
        crate::testers::constraint_maps(class, registry)
    }
}

/// Visit the orthonormal product-basis elements whose support is one of
/// `patterns`, in a fixed order: patterns as listed; within a pattern,
/// mixed-radix digits over the in-pattern subsystems with the last one
/// fastest.  Out-of-pattern subsystems carry the normalized identity
/// `I/√dim`; in-pattern subsystems run over the traceless tail of the local
/// Hermitian basis.  `skip_identity` drops pattern 0 (the all-identity
/// element).  The visitor receives `(pattern, element)`.
fn for_each_fixed_element(
    registry: &SpaceRegistry,
    patterns: &[u32],
    skip_identity: bool,
    mut visit: impl FnMut(u32, &CMat) -> Result<()>,
) -> Result<()> {
    let npos = registry.len();
    // Local Hermitian bases, cached per distinct dimension.
    let mut cache: Vec<(usize, Vec<CMat>)> = Vec::new();
    let mut local = Vec::with_capacity(npos);
    for j in 0..npos {
        let dj = registry.dim(j);
        if !cache.iter().any(|(dim, _)| *dim == dj) {
            cache.push((dj, hermitian_basis(dj)));
        }
        local.push(cache.iter().position(|(dim, _)| *dim == dj).unwrap());
    }
    for &pattern in patterns {
        let members: Vec<usize> = (0..npos).filter(|j| pattern & (1 << j) != 0).collect();
        if pattern == 0 {
            if skip_identity {
                continue;
            }
        }
        let radix: Vec<usize> =
            members.iter().map(|&j| registry.dim(j) * registry.dim(j) - 1).collect();
        let count: usize = radix.iter().product();
        let mut digits = vec![0usize; members.len()];
        for idx in 0..count {
            let mut rem = idx;
            for (slot, &r) in radix.iter().enumerate().rev() {
                digits[slot] = rem % r;
                rem /= r;
            }
            let mut e = CMat::identity(1);
            let mut mslot = 0usize;
            for j in 0..npos {
                let basis = &cache[local[j]].1;
                let f = if pattern & (1 << j) != 0 {
                    let f = &basis[1 + digits[mslot]];
                    mslot += 1;
                    f
                } else {
                    &basis[0]
                };
                e = e.kron(f);
            }
            visit(pattern, &e)?;
        }
    }
    Ok(())
}

// ═══════════════════════════════════════════════════════════════════
// Lower-bound program (optimize over testers)
// ═══════════════════════════════════════════════════════════════════

/// Assembled lower-bound program for a strategy class, living on the `max`
/// side of the conic pair.  Any feasible point — in particular the returned
/// optimum — certifies `J_max ≥ value` via its recovered tester.
pub struct PrimalBuild {
    /// The conic program; solve it and read [`ConicProblem::reported_value`].
    pub problem: ConicProblem,
    registry: SpaceRegistry,
    split: bool,
    patterns: Vec<Vec<u32>>,
    b_base: usize,
    d: usize,
    q: usize,
    d_out: usize,
    target: CMat,
}

/// A feasible strategy-side point recovered from the lower-bound program.
#[derive(Debug, Clone)]
pub struct PrimalWitness {
    /// Testers: a single entry for the definite classes, the two
    /// causal-order components for the superposition class (their sum is
    /// the class tester).
    pub x_tildes: Vec<LabeledOperator>,
    /// Auxiliary `q×d` block achieving the objective.
    pub b: CMat,
    /// Auxiliary `q×q` Hermitian block.
    pub c: CMat,
    /// `−tr C − 2·Re tr(T·B)`, recomputed from the blocks.
    pub objective: f64,
}

/// Build the lower-bound program for `class` on the averaged channel data.
///
/// Maximizes `−tr C − 4·Re tr(H*Φ*·B)` over class testers `X̃` and auxiliary
/// blocks `(B, C)` subject to
///
/// ```text
///   ⎡ X̃   B† ⎤
///   ⎢        ⎥ ⪰ 0 ,    tr X̃ = d_O ,    Λ(X̃) = X̃ ,    BΦ* Hermitian,
///   ⎣ B   C  ⎦
/// ```
///
/// with the optimum equal to `J_max` for the class: eliminating `(B, C)` at
/// fixed `X̃` recovers `min_h tr(X̃·Ω(h))`.  For the superposition class the
/// tester splits as `X̃_1 + X̃_2` with each branch PSD and fixed under one
/// causal ordering (separate cone blocks), sharing the joint trace.
///
/// The fixed-space constraints are enforced by *parametrizing* `X̃` in the
/// fixed space's product basis rather than by equality rows, so the
/// program's coordinates are exactly the free strategy directions.
pub fn build_primal(class: &StrategyClass, data: &AveragedData) -> Result<PrimalBuild> {
    let registry = data.c_bar.registry.clone();
    let n = registry.len() / 2;
    class.validate(n)?;
    let ctx = BoundContext::new(data)?;
    let (d, q) = (ctx.d, ctx.q);
    let maps = BoundContext::class_maps(class, &registry)?;
    let split = maps.len() == 2;
    let mut patterns = Vec::with_capacity(maps.len());
    for map in &maps {
        patterns.push(map.fixed_support_patterns()?);
    }

    // Cone geometry: per-branch tester blocks (split only) plus the bound
    // block M whose 11-corner carries the (total) tester.
    let (blocks, mblock) = if split {
        (vec![2 * d, 2 * d, 2 * (d + q)], 2)
    } else {
        (vec![2 * (d + q)], 0)
    };
    let offsets = svec_block_offsets(&blocks);

    let mut rows: Vec<SparseRow> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut names: Vec<String> = Vec::new();

    // Trace-splitting coordinate (split only): X̃_1 gains t/d·I, X̃_2 loses
    // it; the bound block sees the sum and is untouched.
    if split {
        let eye_over_d = CMat::identity(d).scale(C64::new(1.0 / d as f64, 0.0));
        let mut row = SparseRow::new();
        push_herm_coords(&mut row, &eye_over_d.scale(C64::new(-1.0, 0.0)), 0, &offsets);
        push_herm_coords(&mut row, &eye_over_d, 1, &offsets);
        rows.push(row);
        rhs.push(0.0);
        names.push("t".into());
    }

    // Fixed-space coordinates: one per traceless product-basis element of
    // each branch's fixed space.
    for (br, pat) in patterns.iter().enumerate() {
        let mut idx = 0usize;
        for_each_fixed_element(&registry, pat, true, |_, e| {
            let neg = e.scale(C64::new(-1.0, 0.0));
            let mut row = SparseRow::new();
            if split {
                push_herm_coords(&mut row, &neg, br, &offsets);
            }
            push_herm_coords(&mut row, &ctx.corner11(&neg), mblock, &offsets);
            rows.push(row);
            rhs.push(0.0);
            names.push(format!("x{br}[{idx}]"));
            idx += 1;
            Ok(())
        })?;
    }

    // Auxiliary B block (q×d complex), entering the 21-corner.  Objective
    // coefficients read off `−4·Re tr(H*Φ*·B) = −2·Re tr(T·E)` per
    // direction.
    let b_base = rows.len();
    for r in 0..q {
        for c in 0..d {
            for part in [Part::Re, Part::Im] {
                let v = match part {
                    Part::Re => C64::new(-1.0, 0.0),
                    Part::Im => C64::new(0.0, -1.0),
                };
                let mut g = CMat::zeros(d + q, d + q);
                g[(d + r, c)] = v;
                g[(c, d + r)] = v.conj();
                let mut row = SparseRow::new();
                push_herm_coords(&mut row, &g, mblock, &offsets);
                rows.push(row);
                rhs.push(match part {
                    Part::Re => -2.0 * ctx.target[(c, r)].re,
                    Part::Im => 2.0 * ctx.target[(c, r)].im,
                });
                names.push(format!("{part:?}B[{r};{c}]"));
            }
        }
    }

    // Auxiliary C block (q×q Hermitian), objective −tr C.
    for (k, f) in ctx.basis_q.iter().enumerate() {
        let mut row = SparseRow::new();
        push_herm_coords(
            &mut row,
            &ctx.corner22(&f.scale(C64::new(-1.0, 0.0))),
            mblock,
            &offsets,
        );
        rows.push(row);
        rhs.push(-f.trace().re);
        names.push(format!("c[{k}]"));
    }

    // Gauge-Hermiticity functionals: `Im tr(f_k·BΦ*) = 0` for every basis
    // element ⇔ BΦ* Hermitian.  These are the free columns of the pair.
    let m = rows.len();
    let mut f_mat = RMat::zeros(m, q * q);
    for (k, f) in ctx.basis_q.iter().enumerate() {
        let phif = ctx.phis.matmul(f); // d×q
        for r in 0..q {
            for c in 0..d {
                f_mat[(b_base + 2 * (r * d + c), k)] = phif[(c, r)].im;
                f_mat[(b_base + 2 * (r * d + c) + 1, k)] = phif[(c, r)].re;
            }
        }
    }

    // Base point (all coordinates zero): the maximally mixed tester
    // normalization (d_O/d)·I, carried by the cost side of the pair.
    let idc = ctx.d_out as f64 / d as f64;
    let mixed = CMat::identity(d).scale(C64::new(idc, 0.0));
    let base_m = ctx.corner11(&mixed);
    let cost: Vec<RMat> = if split {
        vec![
            RMat::zeros(2 * d, 2 * d),
            realify(&mixed).scale(0.5),
            realify(&base_m).scale(0.5),
        ]
    } else {
        vec![realify(&base_m).scale(0.5)]
    };

    let problem = ConicProblem {
        name: format!("lower[{}]", class.label()),
        blocks,
        rows,
        rhs,
        f_mat,
        cost_free: vec![0.0; q * q],
        cost,
        report: ReportSide::Sfd,
        report_negate: false,
        variables: names,
    };
    Ok(PrimalBuild {
        problem,
        registry,
        split,
        patterns,
        b_base,
        d,
        q,
        d_out: ctx.d_out,
        target: ctx.target,
    })
}

impl PrimalBuild {
    /// Recover the tester(s) and auxiliary blocks from a solved program.
    pub fn witness(&self, sol: &ConicSolution) -> Result<PrimalWitness> {
        let y = &sol.y;
        if y.len() != self.problem.rows.len() {
            return Err(Error::shape(format!(
                "solution has {} multipliers, program has {} rows",
                y.len(),
                self.problem.rows.len()
            )));
        }
        let (d, q) = (self.d, self.q);
        let mut pos = 0usize;
        let t = if self.split {
            pos = 1;
            y[0]
        } else {
            self.d_out as f64
        };
        let mut x_tildes = Vec::with_capacity(self.patterns.len());
        for (br, pat) in self.patterns.iter().enumerate() {
            let idc = if !self.split {
                self.d_out as f64 / d as f64
            } else if br == 0 {
                t / d as f64
            } else {
                (self.d_out as f64 - t) / d as f64
            };
            let mut x = CMat::identity(d).scale(C64::new(idc, 0.0));
            for_each_fixed_element(&self.registry, pat, true, |_, e| {
                x = x.add(&e.scale(C64::new(y[pos], 0.0)));
                pos += 1;
                Ok(())
            })?;
            x_tildes.push(LabeledOperator::new(self.registry.clone(), x)?);
        }
        if pos != self.b_base {
            return Err(Error::shape(
                "fixed-space enumeration drifted between build and recovery",
            ));
        }
        let b = CMat::from_fn(q, d, |r, c| {
            C64::new(y[self.b_base + 2 * (r * d + c)], y[self.b_base + 2 * (r * d + c) + 1])
        });
        let c_base = self.b_base + 2 * q * d;
        let mut cmat = CMat::zeros(q, q);
        for (k, f) in hermitian_basis(q).iter().enumerate() {
            cmat = cmat.add(&f.scale(C64::new(y[c_base + k], 0.0)));
        }
        let objective = -cmat.trace().re - 2.0 * self.target.matmul(&b).trace().re;
        Ok(PrimalWitness { x_tildes, b, c: cmat, objective })
    }
}

// ═══════════════════════════════════════════════════════════════════
// Upper-bound program (certify over all testers)
// ═══════════════════════════════════════════════════════════════════

/// Assembled upper-bound program for a strategy class, living on the `min`
/// side of the conic pair.  Any feasible point certifies `J_max ≤ λ`.
pub struct DualBuild {
    /// The conic program; solve it and read [`ConicProblem::reported_value`].
    pub problem: ConicProblem,
    nb: usize,
    d: usize,
    q: usize,
    d_out: usize,
    phis_pinv: CMat,
    target: CMat,
}

/// Certificate data recovered from an upper-bound solution.
#[derive(Debug, Clone)]
pub struct DualWitness {
    /// The bound `λ` (equals the program optimum).
    pub lambda: f64,
    /// Fixed-space-orthogonal multipliers `Ỹ_j`, one per causal order.
    pub y_tildes: Vec<CMat>,
    /// The Hermitian `q×q` gauge achieving the bound.
    pub h: CMat,
}

/// Build the upper-bound program for `class` on the averaged channel data.
///
/// Minimizes `λ` over Hermitian `h` and per-order multipliers `Ỹ_j` with
/// `Λ_j(Ỹ_j) = 0` subject to
///
/// ```text
///   ⎡ λ/d_O·I + Ỹ_j   T − 2iΦ*h ⎤
///   ⎢                           ⎥ ⪰ 0    for every causal order j.
///   ⎣ (T − 2iΦ*h)†    I_q       ⎦
/// ```
///
/// Pairing block `j` against any class tester `X̃_j ⊕ auxiliary` shows
/// `λ ≥ tr(X̃·Ω(h)) ≥ J(X̃)`, so the optimum upper-bounds `J_max`.  The
/// encoding works directly on the block `S_j`: `λ = d_O/d · tr S11` is the
/// (shared) linear objective, `Ỹ_j = S11_j − λ/d_O·I` vanishes on the fixed
/// space iff every traceless fixed element pairs to zero with `S11_j`, and
/// the 12-corner rows pin `S12` to `range(Φ*)` with Hermitian recovered
/// gauge.  The superposition class carries two blocks sharing `λ` (equal
/// 11-traces) and `h` (entrywise-equal 12-corners).
pub fn build_dual(class: &StrategyClass, data: &AveragedData) -> Result<DualBuild> {
    let registry = &data.c_bar.registry;
    let n = registry.len() / 2;
    class.validate(n)?;
    let ctx = BoundContext::new(data)?;
    let (d, q) = (ctx.d, ctx.q);
    let maps = BoundContext::class_maps(class, registry)?;
    let nb = maps.len();
    let blocks = vec![2 * (d + q); nb];
    let offsets = svec_block_offsets(&blocks);

    let mut rows: Vec<SparseRow> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut names: Vec<String> = Vec::new();

    for b in 0..nb {
        ctx.push_s22_rows(b, &offsets, &mut rows, &mut rhs, &mut names);
    }
    for (b, map) in maps.iter().enumerate() {
        ctx.push_fixed_kernel_rows(map, registry, b, &offsets, &mut rows, &mut rhs, &mut names)?;
    }
    if nb == 2 {
        // Shared λ: equal 11-corner traces.
        let eye = CMat::identity(d);
        let mut row = SparseRow::new();
        push_herm_coords(&mut row, &ctx.corner11(&eye), 0, &offsets);
        push_herm_coords(&mut row, &ctx.corner11(&eye.scale(C64::new(-1.0, 0.0))), 1, &offsets);
        rows.push(row);
        rhs.push(0.0);
        names.push("treq".into());
        // Shared h: entrywise-equal 12-corners.
        for a in 0..d {
            for r in 0..q {
                for part in [Part::Re, Part::Im] {
                    let mut w = CMat::zeros(d, q);
                    w[(a, r)] = C64::new(1.0, 0.0);
                    let g = herm_functional(&ctx.corner12(&w), part);
                    let mut row = SparseRow::new();
                    push_herm_coords(&mut row, &g, 0, &offsets);
                    push_herm_coords(&mut row, &g.scale(C64::new(-1.0, 0.0)), 1, &offsets);
                    rows.push(row);
                    rhs.push(0.0);
                    names.push(format!("s12eq[{a};{r};{part:?}]"));
                }
            }
        }
    }
    ctx.push_range_rows(0, &offsets, &mut rows, &mut rhs, &mut names);
    ctx.push_gauge_herm_rows(0, &offsets, &mut rows, &mut rhs, &mut names);

    // Objective λ = d_O/(nb·d) · Σ_j tr S11_j.
    let scale = ctx.d_out as f64 / (nb as f64 * d as f64);
    let obj = ctx.corner11(&CMat::identity(d).scale(C64::new(scale, 0.0)));
    let cost: Vec<RMat> = (0..nb).map(|_| realify(&obj).scale(0.5)).collect();

    let m = rows.len();
    let problem = ConicProblem {
        name: format!("upper[{}]", class.label()),
        blocks,
        rows,
        rhs,
        f_mat: RMat::zeros(m, 0),
        cost_free: vec![],
        cost,
        report: ReportSide::Sfp,
        report_negate: false,
        variables: names,
    };
    Ok(DualBuild {
        problem,
        nb,
        d,
        q,
        d_out: ctx.d_out,
        phis_pinv: ctx.phis_pinv,
        target: ctx.target,
    })
}

impl DualBuild {
    /// Recover `(λ, Ỹ_j, h)` from a solved program.
    pub fn witness(&self, sol: &ConicSolution) -> Result<DualWitness> {
        if sol.x_blocks.len() != self.nb {
            return Err(Error::shape(format!(
                "solution has {} cone blocks, program has {}",
                sol.x_blocks.len(),
                self.nb
            )));
        }
        let (d, q) = (self.d, self.q);
        let mut s11s = Vec::with_capacity(self.nb);
        let mut s12 = CMat::zeros(d, q);
        let mut trace_sum = 0.0;
        for (j, xb) in sol.x_blocks.iter().enumerate() {
            let s = derealify(xb);
            let s11 = CMat::from_fn(d, d, |r, c| s[(r, c)]);
            trace_sum += s11.trace().re;
            if j == 0 {
                s12 = CMat::from_fn(d, q, |r, c| s[(r, d + c)]);
            }
            s11s.push(s11);
        }
        let lambda = self.d_out as f64 * trace_sum / (self.nb as f64 * d as f64);
        let shift = lambda / self.d_out as f64;
        let y_tildes = s11s
            .into_iter()
            .map(|s11| {
                CMat::from_fn(d, d, |r, c| {
                    if r == c {
                        s11[(r, c)] - C64::new(shift, 0.0)
                    } else {
                        s11[(r, c)]
                    }
                })
            })
            .collect();
        let h = self
            .phis_pinv
            .matmul(&s12.sub(&self.target))
            .scale(C64::new(0.0, 0.5))
            .hermitize();
        Ok(DualWitness { lambda, y_tildes, h })
    }
}

// ═══════════════════════════════════════════════════════════════════
// Strategy evaluation (fixed tester)
// ═══════════════════════════════════════════════════════════════════

/// Evaluation program for a fixed tester: `J(X̃) = min_h tr(X̃·Ω(h))`.
pub struct InnerBuild {
    /// The conic program; solve it and read [`ConicProblem::reported_value`].
    pub problem: ConicProblem,
    d: usize,
    q: usize,
    phis_pinv: CMat,
    target: CMat,
}

/// Optimality certificate recovered from an evaluation solution.
#[derive(Debug, Clone)]
pub struct InnerWitness {
    /// `Γ ⪰ Ω(h)` with `tr(X̃·Γ)` equal to the optimum.
    pub gamma: CMat,
    /// The minimizing Hermitian gauge.
    pub h: CMat,
}

/// Build the evaluation program `min tr(X̃·Γ)` over
/// `[[Γ, T − 2iΦ*h], [·†, I_q]] ⪰ 0` — by the Schur complement exactly
/// `min_h tr(X̃·Ω(h))` when `X̃ ⪰ 0`.
///
/// For rank-deficient testers the minimum is still the program's value but
/// the cone loses strict complementarity; prefer [`tester_information`]
/// (same quantity, direct least squares) when only the value and gauge are
/// needed.
pub fn build_inner(x: &LabeledOperator, data: &AveragedData) -> Result<InnerBuild> {
    if x.registry != data.c_bar.registry {
        return Err(Error::config(
            "tester and channel data live on different registries",
        ));
    }
    if x.data.herm_defect() > 1e-8 * x.data.max_abs().max(1.0) {
        return Err(Error::config(format!(
            "tester is not Hermitian (defect {:.3e})",
            x.data.herm_defect()
        )));
    }
    let ctx = BoundContext::new(data)?;
    let blocks = vec![2 * (ctx.d + ctx.q)];
    let offsets = svec_block_offsets(&blocks);
    let mut rows: Vec<SparseRow> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    ctx.push_s22_rows(0, &offsets, &mut rows, &mut rhs, &mut names);
    ctx.push_range_rows(0, &offsets, &mut rows, &mut rhs, &mut names);
    ctx.push_gauge_herm_rows(0, &offsets, &mut rows, &mut rhs, &mut names);
    let m = rows.len();
    let cost = vec![realify(&ctx.corner11(&x.data.hermitize())).scale(0.5)];
    let problem = ConicProblem {
        name: "evaluate[tester]".into(),
        blocks,
        rows,
        rhs,
        f_mat: RMat::zeros(m, 0),
        cost_free: vec![],
        cost,
        report: ReportSide::Sfp,
        report_negate: false,
        variables: names,
    };
    Ok(InnerBuild { problem, d: ctx.d, q: ctx.q, phis_pinv: ctx.phis_pinv, target: ctx.target })
}

impl InnerBuild {
    /// Recover `(Γ, h)` from a solved program.
    pub fn witness(&self, sol: &ConicSolution) -> Result<InnerWitness> {
        let (d, q) = (self.d, self.q);
        let s = derealify(
            sol.x_blocks
                .first()
                .ok_or_else(|| Error::shape("evaluation solution has no cone block"))?,
        );
        let gamma = CMat::from_fn(d, d, |r, c| s[(r, c)]);
        let s12 = CMat::from_fn(d, q, |r, c| s[(r, d + c)]);
        let h = self
            .phis_pinv
            .matmul(&s12.sub(&self.target))
            .scale(C64::new(0.0, 0.5))
            .hermitize();
        Ok(InnerWitness { gamma, h })
    }
}

/// `J(X̃) = min_h tr(X̃·Ω(h))` by direct least squares.
///
/// With `X̃ = Y†Y`, `tr(X̃·Ω(h)) = ‖Y(T − 2iΦ*h)‖²_F` is a linear
/// least-squares problem in the real coordinates of Hermitian `h`; the
/// minimizer solves the (possibly singular) normal equations through the
/// spectral pseudoinverse.  Exact for rank-deficient testers, where the
/// conic form of [`build_inner`] loses strict complementarity.  Returns the
/// value and a minimizing gauge.
pub fn tester_information(x: &LabeledOperator, data: &AveragedData) -> Result<(f64, CMat)> {
    if x.registry != data.c_bar.registry {
        return Err(Error::config(
            "tester and channel data live on different registries",
        ));
    }
    let xh = x.data.hermitize();
    if x.data.herm_defect() > 1e-8 * x.data.max_abs().max(1.0) {
        return Err(Error::config(format!(
            "tester is not Hermitian (defect {:.3e})",
            x.data.herm_defect()
        )));
    }
    let ctx = BoundContext::new(data)?;
    let (d, q) = (ctx.d, ctx.q);
    let (vals, vecs) = herm_eig(&xh)?;
    let vmax = vals.first().copied().unwrap_or(0.0).max(0.0);
    if let Some(&vmin) = vals.last() {
        if vmin < -1e-8 * vmax.max(1.0) {
            return Err(Error::config(format!(
                "tester has negative eigenvalue {vmin:.3e}"
            )));
        }
    }
    // Y = Λ^{1/2}V† so that Y†Y = X̃.
    let yfac = CMat::from_fn(d, d, |r, c| {
        vecs[(c, r)].conj() * C64::new(vals[r].max(0.0).sqrt(), 0.0)
    });
    let r0 = yfac.matmul(&ctx.target);
    let cols: Vec<CMat> = ctx
        .basis_q
        .iter()
        .map(|f| yfac.matmul(&ctx.phis.matmul(f)).scale(C64::new(0.0, 2.0)))
        .collect();
    let q2 = q * q;
    let mut gram = RMat::zeros(q2, q2);
    let mut rv = vec![0.0; q2];
    for k in 0..q2 {
        rv[k] = re_inner(&cols[k], &r0);
        for l in k..q2 {
            let g = re_inner(&cols[k], &cols[l]);
            gram[(k, l)] = g;
            gram[(l, k)] = g;
        }
    }
    let (w, u) = sym_eig(&gram)?;
    let wtol = RANK_TOL * w.first().copied().unwrap_or(0.0).max(1e-300);
    let mut coeff = vec![0.0; q2];
    for k in 0..q2 {
        if w[k] <= wtol {
            continue;
        }
        let mut proj = 0.0;
        for i in 0..q2 {
            proj += u[(i, k)] * rv[i];
        }
        let s = proj / w[k];
        for i in 0..q2 {
            coeff[i] += s * u[(i, k)];
        }
    }
    let mut residual = r0;
    let mut h = CMat::zeros(q, q);
    for (k, f) in ctx.basis_q.iter().enumerate() {
        if coeff[k] != 0.0 {
            residual = residual.sub(&cols[k].scale(C64::new(coeff[k], 0.0)));
            h = h.add(&f.scale(C64::new(coeff[k], 0.0)));
        }
    }
    Ok((re_inner(&residual, &residual), h))
}

/// Real inner product `Re tr(A†B) = Σ Re(a)Re(b) + Im(a)Im(b)`.
fn re_inner(a: &CMat, b: &CMat) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| x.re * y.re + x.im * y.im)
        .sum()
}

// ═══════════════════════════════════════════════════════════════════
// Causal-superposition membership margin
// ═══════════════════════════════════════════════════════════════════

/// Convex-split membership margin for the causal-superposition class.
///
/// `X̃` belongs to the class iff it splits as `X̃ = X̃_1 + X̃_2` with each
/// branch PSD and fixed under one of the two causal orderings.  The
/// feasibility program maximizes a uniform slack `t` over `X̃_j = S_j + tI`
/// with `S_j ⪰ 0`: a split exists iff the optimum satisfies `t* ≥ 0`.
/// Returns `max(0, −t*)` — zero for members, the uniform-shift distance to
/// feasibility otherwise — or the projection residual directly when `X̃`
/// already sticks out of the joint fixed-space span.
pub fn superposition_split_infeasibility(x: &LabeledOperator) -> Result<f64> {
    let registry = &x.registry;
    let n = registry.len() / 2;
    StrategyClass::CausalSuperposition.validate(n)?;
    let d = registry.total_dim();
    let xh = x.data.hermitize();
    let scale = xh.max_abs().max(1.0);
    let maps = BoundContext::class_maps(&StrategyClass::CausalSuperposition, registry)?;
    let fixed: Vec<std::collections::BTreeSet<u32>> = maps
        .iter()
        .map(|m| Ok(m.fixed_support_patterns()?.into_iter().collect()))
        .collect::<Result<_>>()?;

    let blocks = vec![2 * d, 2 * d];
    let offsets = svec_block_offsets(&blocks);
    let mut rows: Vec<SparseRow> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut span_residual = 0.0f64;
    let mut id_row = None;
    let all_patterns: Vec<u32> = (0..(1u32 << registry.len())).collect();
    for_each_fixed_element(registry, &all_patterns, false, |pattern, e| {
        let coef = e.re_trace_prod(&xh);
        let in1 = fixed[0].contains(&pattern);
        let in2 = fixed[1].contains(&pattern);
        if in1 || in2 {
            // The joint projection must reproduce X̃ on the union support
            // (the slack enters through the identity element only).
            let mut row = SparseRow::new();
            push_herm_coords(&mut row, e, 0, &offsets);
            push_herm_coords(&mut row, e, 1, &offsets);
            if pattern == 0 {
                id_row = Some(rows.len());
            }
            rows.push(row);
            rhs.push(coef);
            names.push(format!("eq[{pattern:b}]"));
        } else {
            // Outside the union no equality row is emitted (it would be the
            // sum of the two kernel rows); the span check handles it.
            span_residual = span_residual.max(coef.abs());
        }
        // Each branch vanishes outside its own fixed support.
        if !in1 {
            let mut row = SparseRow::new();
            push_herm_coords(&mut row, e, 0, &offsets);
            rows.push(row);
            rhs.push(0.0);
            names.push(format!("k0[{pattern:b}]"));
        }
        if !in2 {
            let mut row = SparseRow::new();
            push_herm_coords(&mut row, e, 1, &offsets);
            rows.push(row);
            rhs.push(0.0);
            names.push(format!("k1[{pattern:b}]"));
        }
        Ok(())
    })?;
    if span_residual > 1e-8 * scale {
        return Ok(span_residual);
    }
    let id_row = id_row.ok_or_else(|| {
        Error::numeric("identity pattern missing from both fixed supports")
    })?;
    let m = rows.len();
    let mut f_mat = RMat::zeros(m, 1);
    f_mat[(id_row, 0)] = 2.0 * (d as f64).sqrt();
    let problem = ConicProblem {
        name: "superposition-split".into(),
        blocks,
        rows,
        rhs,
        f_mat,
        cost_free: vec![-1.0],
        cost: vec![RMat::zeros(2 * d, 2 * d), RMat::zeros(2 * d, 2 * d)],
        report: ReportSide::Sfp,
        report_negate: true,
        variables: names,
    };
    let sol = crate::solver::solve_to_optimal(&problem, &SolverConfig::default())?;
    let t_star = problem.reported_value(&sol);
    Ok((-t_star).max(0.0))
}

// ═══════════════════════════════════════════════════════════════════
// Ω(h)
// ═══════════════════════════════════════════════════════════════════

/// The information operator `Ω(h) = 4(H*Φ* − iΦ*h)(H*Φ* − iΦ*h)†` whose
/// minimum pairing with a tester is the strategy's information.
pub fn build_omega(h_small: &CMat, h_big: &CMat, phi: &CMat) -> Result<CMat> {
    let (d, q) = (phi.rows, phi.cols);
    if h_big.rows != d || h_big.cols != d || h_small.rows != q || h_small.cols != q {
        return Err(Error::shape(format!(
            "Ω shapes: H {}×{}, Φ {}×{}, h {}×{}",
            h_big.rows, h_big.cols, d, q, h_small.rows, h_small.cols
        )));
    }
    let m = omega_factor(h_small, h_big, phi);
    Ok(m.matmul(&m.adjoint()).scale(C64::new(4.0, 0.0)))
}

/// The `d×q` factor `H*Φ* − iΦ*h` of `Ω(h)`.
pub fn omega_factor(h_small: &CMat, h_big: &CMat, phi: &CMat) -> CMat {
    let phis = phi.conj();
    h_big
        .conj()
        .matmul(&phis)
        .sub(&phis.matmul(h_small).scale(C64::new(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_cmat(r: usize, c: usize, rng: &mut StdRng) -> CMat {
        CMat::from_fn(r, c, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
    }

    fn rand_herm(n: usize, rng: &mut StdRng) -> CMat {
        let g = rand_cmat(n, n, rng);
        g.add(&g.adjoint()).scale(C64::new(0.5, 0.0))
    }

    #[test]
    fn realify_preserves_spectrum_and_roundtrips() {
        let mut rng = StdRng::seed_from_u64(5);
        let m = rand_herm(6, &mut rng);
        let (cv, _) = herm_eig(&m).unwrap();
        let mr = realify(&m);
        let (rv, _) = crate::linalg::sym_eig(&mr).unwrap();
        // Every complex eigenvalue appears twice.
        for k in 0..6 {
            assert!((rv[2 * k] - cv[k]).abs() < 1e-12);
            assert!((rv[2 * k + 1] - cv[k]).abs() < 1e-12);
        }
        assert!(derealify(&mr).sub(&m).max_abs() < 1e-14);
        // Hermitian diag(1,2) embeds to diag(1,2,1,2) up to ordering.
        let d = CMat::diag(&[1.0, 2.0]);
        let dr = realify(&d);
        for i in 0..4 {
            let want = if i % 2 == 0 { 1.0 } else { 2.0 };
            assert!((dr[(i, i)] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn herm_functional_extracts_requested_part() {
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..20 {
            let w = rand_cmat(5, 5, &mut rng);
            let m = rand_herm(5, &mut rng);
            let z = w.adjoint().matmul(&m).trace();
            let gre = herm_functional(&w, Part::Re);
            let gim = herm_functional(&w, Part::Im);
            assert!(gre.herm_defect() < 1e-14);
            assert!(gim.herm_defect() < 1e-14);
            assert!((gre.matmul(&m).trace().re - z.re).abs() < 1e-12);
            assert!((gim.matmul(&m).trace().re - z.im).abs() < 1e-12);
        }
    }

    #[test]
    fn svec_coordinates_reproduce_complex_pairings() {
        let mut rng = StdRng::seed_from_u64(7);
        let offsets = [0usize, 10]; // block 0 is a real dim-3 block (svec 6), say
        for _ in 0..20 {
            let g = rand_herm(4, &mut rng);
            let m = rand_herm(4, &mut rng);
            let mut row = SparseRow::new();
            push_herm_coords(&mut row, &g, 1, &offsets);
            let x = svec_pack(&realify(&m));
            let mut val = 0.0;
            for &(i, v) in &row {
                val += v * x[i as usize - 10];
            }
            let want = g.matmul(&m).trace().re;
            assert!((val - want).abs() < 1e-12);
        }
    }

    #[test]
    fn svec_pack_unpack_roundtrip_and_inner_product() {
        let mut rng = StdRng::seed_from_u64(8);
        let a = RMat::from_fn(5, 5, |_, _| rng.gen::<f64>() - 0.5);
        let sym = a.add(&a.transpose()).scale(0.5);
        let packed = svec_pack(&sym);
        assert!(svec_unpack(&packed, 5).sub(&sym).fro_norm() < 1e-14);
        let b = RMat::from_fn(5, 5, |_, _| rng.gen::<f64>() - 0.5);
        let symb = b.add(&b.transpose()).scale(0.5);
        let dot: f64 =
            packed.iter().zip(&svec_pack(&symb)).map(|(x, y)| x * y).sum();
        assert!((dot - sym.trace_prod(&symb)).abs() < 1e-12);
    }

    #[test]
    fn omega_examples() {
        let mut rng = StdRng::seed_from_u64(9);
        // h = 0 reduces to 4 H*Φ*(H*Φ*)†.
        let h_big = rand_herm(6, &mut rng);
        let phi = rand_cmat(6, 3, &mut rng);
        let zero = CMat::zeros(3, 3);
        let omega0 = build_omega(&zero, &h_big, &phi).unwrap();
        let hp = h_big.conj().matmul(&phi.conj());
        let want = hp.matmul(&hp.adjoint()).scale(C64::new(4.0, 0.0));
        assert!(omega0.sub(&want).max_abs() < 1e-12);
        // H = 0, h = 0 gives 0.
        let omega00 = build_omega(&zero, &CMat::zeros(6, 6), &phi).unwrap();
        assert!(omega00.max_abs() < 1e-15);
        // PSD by construction for random inputs.
        for _ in 0..100 {
            let h_small = rand_herm(3, &mut rng);
            let om = build_omega(&h_small, &rand_herm(6, &mut rng), &rand_cmat(6, 3, &mut rng))
                .unwrap();
            let (vals, _) = herm_eig(&om).unwrap();
            assert!(vals.last().copied().unwrap() > -1e-12);
        }
        // Shape errors.
        assert!(build_omega(&zero, &h_big, &rand_cmat(5, 3, &mut rng)).is_err());
    }

    // ——— Bound-program builders ———

    use crate::channels::ChannelSpec;
    use crate::priors::{Prior, QPolicy};
    use crate::solver::solve_to_optimal;
    use crate::spaces::embed;
    use crate::testers::{is_valid_tester, tester_registry};

    fn averaged(spec: &ChannelSpec, n: usize) -> AveragedData {
        AveragedData::compute(spec, n, &Prior::uniform(), QPolicy::Rank).unwrap()
    }

    /// `X̃ = ρᵀ ⊗ I_O` for a probe state on the inputs — the tester of the
    /// strategy that feeds `ρ` through the queries in parallel and measures.
    fn probe_tester(rho: &CMat, registry: &SpaceRegistry) -> LabeledOperator {
        let n = registry.len() / 2;
        let inputs: Vec<(String, usize)> = (1..=n)
            .map(|j| (format!("I{j}"), registry.dim(registry.position(&format!("I{j}")).unwrap())))
            .collect();
        let sub = SpaceRegistry::new(inputs.iter().map(|(s, d)| (s.as_str(), *d)).collect())
            .unwrap();
        let op = LabeledOperator::new(sub, rho.transpose()).unwrap();
        LabeledOperator::new(registry.clone(), embed(&op, registry).unwrap()).unwrap()
    }

    fn random_density(n: usize, rng: &mut StdRng) -> CMat {
        let g = rand_cmat(n, n, rng);
        let p = g.matmul(&g.adjoint());
        let t = p.trace().re;
        p.scale(C64::new(1.0 / t, 0.0))
    }

    fn random_pure_density(n: usize, rng: &mut StdRng) -> CMat {
        let g = rand_cmat(n, 1, rng);
        let p = g.matmul(&g.adjoint());
        let t = p.trace().re;
        p.scale(C64::new(1.0 / t, 0.0))
    }

    #[test]
    fn fixed_element_enumeration_is_orthonormal_fixed_and_complete() {
        let registry = tester_registry(2, 2, 2).unwrap();
        for class in [
            StrategyClass::Parallel,
            StrategyClass::sequential_canonical(2),
            StrategyClass::GeneralIco,
        ] {
            let map = TesterMap::for_class(&class, &registry).unwrap();
            let patterns = map.fixed_support_patterns().unwrap();
            let mut elems: Vec<CMat> = Vec::new();
            for_each_fixed_element(&registry, &patterns, false, |_, e| {
                elems.push(e.clone());
                Ok(())
            })
            .unwrap();
            assert_eq!(elems.len(), map.fixed_space_dimension().unwrap());
            // Every element is exactly fixed by the class projector.
            for e in elems.iter().step_by(7) {
                let op = LabeledOperator::new(registry.clone(), e.clone()).unwrap();
                let diff = map.apply(&op).unwrap().data.sub(e).max_abs();
                assert!(diff < 1e-12, "{}: fixed-element residual {diff:.3e}", class.label());
            }
            // Orthonormal on a sample of pairs.
            for i in (0..elems.len()).step_by(11) {
                for j in (i..elems.len()).step_by(13) {
                    let want = if i == j { 1.0 } else { 0.0 };
                    let got = elems[i].re_trace_prod(&elems[j]);
                    assert!((got - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn assembled_programs_have_independent_rows() {
        let data = averaged(&ChannelSpec::unitary(), 1);
        let class = StrategyClass::Parallel;
        build_primal(&class, &data).unwrap().problem.verify_row_independence().unwrap();
        build_dual(&class, &data).unwrap().problem.verify_row_independence().unwrap();
        let registry = data.c_bar.registry.clone();
        let mut rng = StdRng::seed_from_u64(7);
        let x = probe_tester(&random_density(2, &mut rng), &registry);
        build_inner(&x, &data).unwrap().problem.verify_row_independence().unwrap();
    }

    #[test]
    fn single_query_bounds_agree_for_noiseless_rotation() {
        let data = averaged(&ChannelSpec::unitary(), 1);
        let class = StrategyClass::Parallel;
        let config = SolverConfig::default();

        let pb = build_primal(&class, &data).unwrap();
        let psol = solve_to_optimal(&pb.problem, &config).unwrap();
        let lower = pb.problem.reported_value(&psol);

        let db = build_dual(&class, &data).unwrap();
        let dsol = solve_to_optimal(&db.problem, &config).unwrap();
        let upper = db.problem.reported_value(&dsol);

        // Weak duality with a tight gap, and the uniform-prior rotation
        // admits the balanced probe |+⟩ with information exactly 1.
        assert!(lower <= upper + 1e-7, "lower {lower} > upper {upper}");
        assert!(upper - lower < 1e-6, "gap {:.3e}", upper - lower);
        assert!(lower > 1.0 - 1e-6, "lower bound {lower} misses the balanced probe");
        assert!(upper < data.m2, "bound exceeds the prior variance");

        // The recovered tester is feasible and achieves the optimum.
        let pw = pb.witness(&psol).unwrap();
        assert!((pw.objective - lower).abs() < 1e-8);
        let diag = is_valid_tester(&class, &pw.x_tildes[0], 1e-6).unwrap();
        assert!(diag.valid, "witness tester invalid: {}", diag.detail);
        let (j_witness, _) = tester_information(&pw.x_tildes[0], &data).unwrap();
        assert!((j_witness - lower).abs() < 1e-5, "witness evaluates to {j_witness}, bound {lower}");

        // The balanced probe itself evaluates to 1.
        let plus = CMat::from_fn(2, 2, |_, _| C64::new(0.5, 0.0));
        let x_plus = probe_tester(&plus, &data.c_bar.registry);
        let (j_plus, h_plus) = tester_information(&x_plus, &data).unwrap();
        assert!((j_plus - 1.0).abs() < 1e-7, "balanced probe information {j_plus}");
        assert!(h_plus.herm_defect() < 1e-10);

        // The upper-bound certificate: λ matches, Ỹ is fixed-space
        // orthogonal, and the bound block is PSD at the recovered gauge.
        let dw = db.witness(&dsol).unwrap();
        assert!((dw.lambda - upper).abs() < 1e-9);
        assert!(dw.h.herm_defect() < 1e-8);
        let map = TesterMap::for_class(&class, &data.c_bar.registry).unwrap();
        let y_op = LabeledOperator::new(data.c_bar.registry.clone(), dw.y_tildes[0].clone())
            .unwrap();
        assert!(map.apply(&y_op).unwrap().data.max_abs() < 1e-7);
        let (d, q) = (4, data.q);
        let f = omega_factor(&dw.h, &data.h.data, &data.phi).scale(C64::new(2.0, 0.0));
        let block = CMat::from_fn(d + q, d + q, |r, c| {
            if r < d && c < d {
                dw.y_tildes[0][(r, c)]
                    + if r == c { C64::new(dw.lambda / 2.0, 0.0) } else { C64::new(0.0, 0.0) }
            } else if r < d {
                f[(r, c - d)]
            } else if c < d {
                f[(c, r - d)].conj()
            } else if r == c {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let (vals, _) = herm_eig(&block).unwrap();
        assert!(
            vals.last().copied().unwrap() > -1e-7,
            "certificate block has negative eigenvalue {:.3e}",
            vals.last().unwrap()
        );
    }

    #[test]
    fn evaluation_program_matches_least_squares() {
        let data = averaged(&ChannelSpec::theorem3(), 1);
        let registry = data.c_bar.registry.clone();
        let config = SolverConfig::default();
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..6 {
            let x = probe_tester(&random_density(2, &mut rng), &registry);
            let ib = build_inner(&x, &data).unwrap();
            let sol = solve_to_optimal(&ib.problem, &config).unwrap();
            let j_sdp = ib.problem.reported_value(&sol);
            let (j_ls, h_ls) = tester_information(&x, &data).unwrap();
            assert!((j_sdp - j_ls).abs() < 1e-6, "conic {j_sdp} vs least-squares {j_ls}");
            // The recovered gauge reproduces the value through Ω directly.
            let omega = build_omega(&h_ls, &data.h.data, &data.phi).unwrap();
            let direct = x.data.re_trace_prod(&omega);
            assert!((direct - j_ls).abs() < 1e-8);
            // The conic witness certifies from above: Γ ⪰ Ω(h_w).
            let iw = ib.witness(&sol).unwrap();
            let omega_w = build_omega(&iw.h, &data.h.data, &data.phi).unwrap();
            let (vals, _) = herm_eig(&iw.gamma.sub(&omega_w)).unwrap();
            assert!(vals.last().copied().unwrap() > -1e-6);
        }
    }

    /// Information carried by the bare channel output when the probe `ρ`
    /// is fed in and nothing else is kept, through the estimator
    /// equation: `ρ̄ = tr_in[(ρᵀ⊗I)C̄]`, `M̄ = tr_in[(ρᵀ⊗I)·θC̄]`, solve
    /// `(ρ̄S + Sρ̄)/2 = M̄`, report `tr(M̄S)` — a route entirely independent
    /// of the gauge-minimization machinery.  For a *pure* probe this is
    /// the full information of the parallel strategy; a mixed probe's
    /// strategy operator `ρᵀ ⊗ I` implicitly keeps a purifying reference
    /// that this route discards, so it only lower-bounds the gauge value.
    fn probe_information_via_estimator(rho: &CMat, data: &AveragedData) -> f64 {
        let registry = &data.c_bar.registry;
        let x = probe_tester(rho, registry);
        let inputs: Vec<&str> = registry.names().filter(|s| s.starts_with('I')).collect();
        let rho_bar = LabeledOperator::new(
            registry.clone(),
            x.data.matmul(&data.c_bar.data),
        )
        .unwrap()
        .partial_trace(&inputs)
        .unwrap();
        let m_bar = LabeledOperator::new(
            registry.clone(),
            x.data.matmul(&data.theta_c_bar.data),
        )
        .unwrap()
        .partial_trace(&inputs)
        .unwrap();
        let sld = crate::spaces::solve_sld(&rho_bar, &m_bar).unwrap();
        assert!(sld.residual < 1e-9, "estimator equation residual {:.3e}", sld.residual);
        m_bar.data.re_trace_prod(&sld.s.data)
    }

    #[test]
    fn entangled_probe_information_matches_reported_value() {
        // For the noiseless rotation at two queries, the maximally entangled
        // probe gains exactly 1/4 under the uniform prior — far below the
        // class optimum, unlike the locally-optimal folklore.
        let data = averaged(&ChannelSpec::unitary(), 2);
        let mut ghz = CMat::zeros(4, 4);
        for (r, c) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            ghz[(r, c)] = C64::new(0.5, 0.0);
        }
        let x = probe_tester(&ghz, &data.c_bar.registry);
        let (j, _) = tester_information(&x, &data).unwrap();
        assert!((j - 0.25).abs() < 1e-9, "maximally entangled probe: J = {j}");
        let j_est = probe_information_via_estimator(&ghz, &data);
        assert!((j - j_est).abs() < 1e-9, "gauge route {j} vs estimator route {j_est}");
    }

    #[test]
    fn gauge_and_estimator_routes_agree_on_random_probes() {
        let mut rng = StdRng::seed_from_u64(41);
        for spec in [ChannelSpec::unitary(), ChannelSpec::theorem3()] {
            for n in [1usize, 2] {
                let data = averaged(&spec, n);
                let dim = 1 << n;
                for _ in 0..3 {
                    // Pure probes: the strategy keeps nothing beyond the
                    // channel output, so the estimator equation on that
                    // output must reproduce the gauge minimization exactly.
                    let psi = random_pure_density(dim, &mut rng);
                    let x = probe_tester(&psi, &data.c_bar.registry);
                    let (j_gauge, _) = tester_information(&x, &data).unwrap();
                    let j_est = probe_information_via_estimator(&psi, &data);
                    assert!(
                        (j_gauge - j_est).abs() < 1e-8,
                        "{spec:?} N={n}: gauge {j_gauge} vs estimator {j_est}"
                    );
                    // Mixed probes: the strategy operator ρᵀ ⊗ I keeps a
                    // purifying reference the bare-output estimator cannot
                    // see, so the gauge value dominates (data processing).
                    let rho = random_density(dim, &mut rng);
                    let xm = probe_tester(&rho, &data.c_bar.registry);
                    let (j_keep, _) = tester_information(&xm, &data).unwrap();
                    let j_drop = probe_information_via_estimator(&rho, &data);
                    assert!(
                        j_keep > j_drop - 1e-8,
                        "{spec:?} N={n}: reference-kept {j_keep} beaten by discarded {j_drop}"
                    );
                }
            }
        }
    }

    #[test]
    fn superposition_split_margin_separates_members_from_outsiders() {
        let registry = tester_registry(2, 2, 2).unwrap();
        let d = registry.total_dim();
        let d_out = registry.output_dim() as f64;

        // A parallel tester lies in both causal orders' fixed spaces.
        let mut ghz = CMat::zeros(4, 4);
        for (r, c) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            ghz[(r, c)] = C64::new(0.5, 0.0);
        }
        let member = probe_tester(&ghz, &registry);
        let margin = superposition_split_infeasibility(&member).unwrap();
        assert!(margin < 1e-7, "member flagged with margin {margin:.3e}");

        // A direction fixed under one order only: small amplitudes split,
        // large ones cannot keep both branches PSD.
        let maps = BoundContext::class_maps(&StrategyClass::CausalSuperposition, &registry)
            .unwrap();
        let fixed: Vec<std::collections::BTreeSet<u32>> = maps
            .iter()
            .map(|m| m.fixed_support_patterns().unwrap().into_iter().collect())
            .collect();
        let only_first: Vec<u32> =
            fixed[0].difference(&fixed[1]).copied().collect();
        assert!(!only_first.is_empty());
        let mut e_dir = None;
        for_each_fixed_element(&registry, &only_first[..1], false, |_, e| {
            if e_dir.is_none() {
                e_dir = Some(e.clone());
            }
            Ok(())
        })
        .unwrap();
        let e_dir = e_dir.unwrap();
        let base = CMat::identity(d).scale(C64::new(d_out / d as f64, 0.0));

        let gentle = LabeledOperator::new(
            registry.clone(),
            base.add(&e_dir.scale(C64::new(0.02, 0.0))),
        )
        .unwrap();
        let m_gentle = superposition_split_infeasibility(&gentle).unwrap();
        assert!(m_gentle < 1e-7, "splittable tester flagged with margin {m_gentle:.3e}");

        // At amplitude α the branch forced to carry the direction needs
        // trace at least α/λ_max(e) ≥ α (normalized traceless direction),
        // while the joint trace budget is d_O − 2td; α = 6 > d_O makes the
        // split infeasible regardless of the direction's spectrum.
        let extreme = LabeledOperator::new(
            registry.clone(),
            base.add(&e_dir.scale(C64::new(6.0, 0.0))),
        )
        .unwrap();
        let m_extreme = superposition_split_infeasibility(&extreme).unwrap();
        assert!(m_extreme > 1e-2, "unsplittable tester passed with margin {m_extreme:.3e}");

        // Sticking out of the joint span is reported as the projection
        // residual without a solve.
        let ico_map = TesterMap::for_class(&StrategyClass::GeneralIco, &registry).unwrap();
        let ico_only: Vec<u32> = ico_map
            .fixed_support_patterns()
            .unwrap()
            .into_iter()
            .filter(|p| !fixed[0].contains(p) && !fixed[1].contains(p))
            .collect();
        if !ico_only.is_empty() {
            let mut e_out = None;
            for_each_fixed_element(&registry, &ico_only[..1], false, |_, e| {
                if e_out.is_none() {
                    e_out = Some(e.clone());
                }
                Ok(())
            })
            .unwrap();
            let outside = LabeledOperator::new(
                registry.clone(),
                base.add(&e_out.unwrap().scale(C64::new(0.3, 0.0))),
            )
            .unwrap();
            let m_outside = superposition_split_infeasibility(&outside).unwrap();
            assert!((m_outside - 0.3).abs() < 1e-8);
        }
    }

    #[test]
    fn split_bound_programs_are_consistent_for_noiseless_rotation() {
        let data = averaged(&ChannelSpec::unitary(), 2);
        let config = SolverConfig::default();
        let class = StrategyClass::CausalSuperposition;

        let pb = build_primal(&class, &data).unwrap();
        pb.problem.verify_row_independence().unwrap();
        let psol = solve_to_optimal(&pb.problem, &config).unwrap();
        let lower = pb.problem.reported_value(&psol);

        let db = build_dual(&class, &data).unwrap();
        db.problem.verify_row_independence().unwrap();
        let dsol = solve_to_optimal(&db.problem, &config).unwrap();
        let upper = db.problem.reported_value(&dsol);

        assert!(lower <= upper + 1e-7);
        assert!(upper - lower < 1e-6, "split-class gap {:.3e}", upper - lower);

        // The superposition class contains both definite orderings.
        let seq = build_dual(&StrategyClass::sequential_canonical(2), &data).unwrap();
        let seq_sol = solve_to_optimal(&seq.problem, &config).unwrap();
        let seq_upper = seq.problem.reported_value(&seq_sol);
        assert!(upper > seq_upper - 1e-7, "superposition {upper} below sequential {seq_upper}");

        // Witness branches: each PSD, fixed under its own ordering, with the
        // joint trace and a vanishing split margin.
        let pw = pb.witness(&psol).unwrap();
        assert_eq!(pw.x_tildes.len(), 2);
        let maps = BoundContext::class_maps(&class, &data.c_bar.registry).unwrap();
        let mut total_trace = 0.0;
        for (branch, map) in pw.x_tildes.iter().zip(&maps) {
            total_trace += branch.data.trace().re;
            let (vals, _) = herm_eig(&branch.data.hermitize()).unwrap();
            assert!(vals.last().copied().unwrap() > -1e-7);
            let residual = map.apply(branch).unwrap().data.sub(&branch.data).max_abs();
            assert!(residual < 1e-7, "branch leaves its fixed space by {residual:.3e}");
        }
        assert!((total_trace - 4.0).abs() < 1e-7);
        let joint = LabeledOperator::new(
            data.c_bar.registry.clone(),
            pw.x_tildes[0].data.add(&pw.x_tildes[1].data),
        )
        .unwrap();
        assert!(superposition_split_infeasibility(&joint).unwrap() < 1e-6);
        let diag = is_valid_tester(&class, &joint, 1e-6).unwrap();
        assert!(diag.valid, "joint witness invalid: {}", diag.detail);
    }
}
