//! Labeled tensor-product spaces and the operator calculus on them.
//!
//! Every operator in the estimation pipeline lives on an ordered list of
//! named subsystems (`I1, O1, …, IN, ON, F…` by convention, inputs/outputs
//! of the queried channel plus a final register).  [`SpaceRegistry`] tracks
//! that list; [`LabeledOperator`] pairs a registry with a dense matrix whose
//! Kronecker layout puts the **first listed subsystem most significant**.
//!
//! Provided calculus: Kronecker products, partial traces, the
//! trace-and-replace map `R_Q(A) = tr_Q(A) ⊗ I_Q/d_Q` (the building block of
//! the strategy-class projections), the link product contracting a tester
//! against a channel operator, and the symmetric-logarithmic-derivative
//! solve `(R·S + S·R)/2 = M` restricted to `R`'s support.

use crate::error::{Error, Result};
use crate::linalg::{herm_eig, C64, CMat, RANK_TOL};

// ═══════════════════════════════════════════════════════════════════
// Registry
// ═══════════════════════════════════════════════════════════════════

/// Ordered list of named tensor factors.
///
/// Names must be unique and dimensions ≥ 1.  Derived totals classify
/// subsystems by name prefix: `I…` are channel inputs, `O…` channel outputs,
/// `F…` final registers; other prefixes simply don't contribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpaceRegistry {
    subsystems: Vec<(String, usize)>,
}

impl SpaceRegistry {
    /// Build a registry, validating name uniqueness and dimensions.
    pub fn new(subsystems: Vec<(impl Into<String>, usize)>) -> Result<Self> {
        let subsystems: Vec<(String, usize)> =
            subsystems.into_iter().map(|(n, d)| (n.into(), d)).collect();
        let mut seen = std::collections::HashSet::new();
        let mut total: usize = 1;
        for (name, dim) in &subsystems {
            if !seen.insert(name.clone()) {
                return Err(Error::config(format!("duplicate subsystem name '{name}'")));
            }
            if *dim == 0 {
                return Err(Error::config(format!("subsystem '{name}' has dimension 0")));
            }
            total = total
                .checked_mul(*dim)
                .filter(|&t| t <= 1 << 16)
                .ok_or_else(|| Error::config("total dimension exceeds 65536"))?;
        }
        Ok(SpaceRegistry { subsystems })
    }

    /// Number of subsystems.
    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    /// Whether the registry has no subsystems (total dimension 1).
    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    /// Subsystem names in order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.subsystems.iter().map(|(n, _)| n.as_str())
    }

    /// Name of subsystem `k`.
    pub fn name(&self, k: usize) -> &str {
        &self.subsystems[k].0
    }

    /// Dimension of subsystem `k`.
    pub fn dim(&self, k: usize) -> usize {
        self.subsystems[k].1
    }

    /// Total Hilbert-space dimension (product of all subsystem dimensions).
    pub fn total_dim(&self) -> usize {
        self.subsystems.iter().map(|(_, d)| d).product()
    }

    /// Position of a named subsystem.
    pub fn position(&self, name: &str) -> Result<usize> {
        self.subsystems
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::config(format!("unknown subsystem '{name}'")))
    }

    /// Positions of several named subsystems, sorted ascending.
    pub fn positions(&self, names: &[&str]) -> Result<Vec<usize>> {
        let mut ps: Vec<usize> = names.iter().map(|n| self.position(n)).collect::<Result<_>>()?;
        ps.sort_unstable();
        ps.dedup();
        if ps.len() != names.len() {
            return Err(Error::config("repeated subsystem name in selection"));
        }
        Ok(ps)
    }

    /// Product of dimensions over names with the given prefix class.
    fn prefix_dim(&self, prefix: char) -> usize {
        self.subsystems
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, d)| d)
            .product()
    }

    /// Product of channel-input dimensions (`I…` subsystems).
    pub fn input_dim(&self) -> usize {
        self.prefix_dim('I')
    }

    /// Product of channel-output dimensions (`O…` subsystems); this is the
    /// `d_O` entering the tester normalization `tr X̃ = d_O`.
    pub fn output_dim(&self) -> usize {
        self.prefix_dim('O')
    }

    /// Product of final-register dimensions (`F…` subsystems).
    pub fn final_dim(&self) -> usize {
        self.prefix_dim('F')
    }

    /// Row-major strides: `stride[k]` = product of dims after position `k`.
    pub fn strides(&self) -> Vec<usize> {
        let n = self.subsystems.len();
        let mut s = vec![1usize; n];
        for k in (0..n.saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.subsystems[k + 1].1;
        }
        s
    }

    /// Full-space index offsets enumerating the multi-indices of the listed
    /// positions, **first listed position most significant**.  Every full
    /// index decomposes uniquely as `offsets(P)[a] + offsets(Pᶜ)[b]`.
    pub fn offsets_for(&self, positions: &[usize]) -> Vec<usize> {
        let strides = self.strides();
        let dims: Vec<usize> = positions.iter().map(|&p| self.subsystems[p].1).collect();
        let total: usize = dims.iter().product();
        let mut out = Vec::with_capacity(total);
        for mut idx in 0..total {
            let mut off = 0usize;
            for k in (0..dims.len()).rev() {
                off += (idx % dims[k]) * strides[positions[k]];
                idx /= dims[k];
            }
            out.push(off);
        }
        out
    }

    /// Complement of a sorted position list, ascending.
    pub fn complement(&self, positions: &[usize]) -> Vec<usize> {
        (0..self.subsystems.len()).filter(|p| !positions.contains(p)).collect()
    }

    /// Concatenate two registries (disjoint names required).
    pub fn concat(&self, other: &SpaceRegistry) -> Result<SpaceRegistry> {
        let mut subs = self.subsystems.clone();
        subs.extend(other.subsystems.iter().cloned());
        SpaceRegistry::new(subs)
    }

    /// Sub-registry over the given positions, in the given order.
    pub fn select(&self, positions: &[usize]) -> SpaceRegistry {
        SpaceRegistry {
            subsystems: positions.iter().map(|&p| self.subsystems[p].clone()).collect(),
        }
    }
}

// ═══════════════════════════════════════════════════════════════════
// Labeled operators
// ═══════════════════════════════════════════════════════════════════

/// Dense operator attached to a [`SpaceRegistry`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledOperator {
    /// Tensor-factor layout of `data`.
    pub registry: SpaceRegistry,
    /// Square matrix of the registry's total dimension.
    pub data: CMat,
}

impl LabeledOperator {
    /// Attach a matrix to a registry, validating the dimension.
    pub fn new(registry: SpaceRegistry, data: CMat) -> Result<Self> {
        let d = registry.total_dim();
        if data.rows != d || data.cols != d {
            return Err(Error::shape(format!(
                "operator is {}×{} but registry dimension is {d}",
                data.rows, data.cols
            )));
        }
        Ok(LabeledOperator { registry, data })
    }

    /// Identity operator on a registry.
    pub fn identity(registry: SpaceRegistry) -> Self {
        let d = registry.total_dim();
        LabeledOperator { registry, data: CMat::identity(d) }
    }

    /// Trace.
    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    /// Hermiticity check at relative tolerance `tol`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.data.is_hermitian(tol)
    }

    /// Kronecker product; registries concatenate (names must be disjoint).
    pub fn kron(&self, other: &LabeledOperator) -> Result<LabeledOperator> {
        let registry = self.registry.concat(&other.registry)?;
        Ok(LabeledOperator { registry, data: self.data.kron(&other.data) })
    }

    /// Partial trace over the named subsystems; the result lives on the
    /// remaining subsystems in their original order.
    pub fn partial_trace(&self, names: &[&str]) -> Result<LabeledOperator> {
        let sel = self.registry.positions(names)?;
        Ok(self.partial_trace_positions(&sel))
    }

    /// [`Self::partial_trace`] with pre-resolved sorted positions.
    pub fn partial_trace_positions(&self, sel: &[usize]) -> LabeledOperator {
        let keep = self.registry.complement(sel);
        let keep_off = self.registry.offsets_for(&keep);
        let sel_off = self.registry.offsets_for(sel);
        let dk = keep_off.len();
        let mut out = CMat::zeros(dk, dk);
        for (r, &ro) in keep_off.iter().enumerate() {
            for (c, &co) in keep_off.iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for &q in &sel_off {
                    acc += self.data[(ro + q, co + q)];
                }
                out[(r, c)] = acc;
            }
        }
        LabeledOperator { registry: self.registry.select(&keep), data: out }
    }

    /// Partial transpose on the named subsystems: row and column indices of
    /// the selected legs are exchanged while the remaining legs stay put.
    ///
    /// An involution that preserves Hermiticity and the trace but not
    /// positivity (`|Ω⟩⟨Ω|` on two legs maps to the swap operator).
    pub fn partial_transpose(&self, names: &[&str]) -> Result<LabeledOperator> {
        let sel = self.registry.positions(names)?;
        let keep = self.registry.complement(&sel);
        let keep_off = self.registry.offsets_for(&keep);
        let sel_off = self.registry.offsets_for(&sel);
        let n = self.data.rows;
        let mut out = CMat::zeros(n, n);
        for &kr in &keep_off {
            for &kc in &keep_off {
                for &tr in &sel_off {
                    for &tc in &sel_off {
                        out[(kr + tc, kc + tr)] = self.data[(kr + tr, kc + tc)];
                    }
                }
            }
        }
        Ok(LabeledOperator { registry: self.registry.clone(), data: out })
    }

    /// Trace-and-replace map `R_Q(A) = tr_Q(A) ⊗ I_Q/d_Q`, re-embedded at
    /// `Q`'s original tensor slots.  Unital, trace-preserving, idempotent,
    /// and self-adjoint for the Hilbert–Schmidt inner product.
    pub fn trace_replace(&self, names: &[&str]) -> Result<LabeledOperator> {
        let sel = self.registry.positions(names)?;
        Ok(self.trace_replace_positions(&sel))
    }

    /// [`Self::trace_replace`] with pre-resolved sorted positions.
    pub fn trace_replace_positions(&self, sel: &[usize]) -> LabeledOperator {
        let keep = self.registry.complement(sel);
        let keep_off = self.registry.offsets_for(&keep);
        let sel_off = self.registry.offsets_for(sel);
        let dq = sel_off.len() as f64;
        let n = self.data.rows;
        let mut out = CMat::zeros(n, n);
        for &ro in &keep_off {
            for &co in &keep_off {
                let mut acc = C64::new(0.0, 0.0);
                for &q in &sel_off {
                    acc += self.data[(ro + q, co + q)];
                }
                let avg = acc / dq;
                for &q in &sel_off {
                    out[(ro + q, co + q)] = avg;
                }
            }
        }
        LabeledOperator { registry: self.registry.clone(), data: out }
    }
}

/// Embed `op ⊗ I_rest` into `target`'s layout, permuting subsystems by name.
///
/// Every subsystem of `op` must appear in `target` with the same dimension.
pub fn embed(op: &LabeledOperator, target: &SpaceRegistry) -> Result<CMat> {
    let mut positions = Vec::with_capacity(op.registry.len());
    for k in 0..op.registry.len() {
        let p = target.position(op.registry.name(k))?;
        if target.dim(p) != op.registry.dim(k) {
            return Err(Error::shape(format!(
                "subsystem '{}' has dimension {} in target but {} in operand",
                op.registry.name(k),
                target.dim(p),
                op.registry.dim(k)
            )));
        }
        positions.push(p);
    }
    // Offsets in op's own digit order; complement taken sorted.
    let sel_off = target.offsets_for(&positions);
    let mut sorted = positions.clone();
    sorted.sort_unstable();
    let rest = target.complement(&sorted);
    let rest_off = target.offsets_for(&rest);
    let dt = target.total_dim();
    let mut out = CMat::zeros(dt, dt);
    for (r, &ro) in sel_off.iter().enumerate() {
        for (c, &co) in sel_off.iter().enumerate() {
            let v = op.data[(r, c)];
            if v.re == 0.0 && v.im == 0.0 {
                continue;
            }
            for &e in &rest_off {
                out[(ro + e, co + e)] = v;
            }
        }
    }
    Ok(out)
}

/// Link product `x ⋆ c = tr_shared[x · (cᵀ ⊗ I)]`, contracting over every
/// subsystem of `c` (all of which must appear in `x`).  The transpose is
/// taken in `c`'s computational basis.  The result lives on `x`'s remaining
/// subsystems.
pub fn link_product(x: &LabeledOperator, c: &LabeledOperator) -> Result<LabeledOperator> {
    let ct = LabeledOperator { registry: c.registry.clone(), data: c.data.transpose() };
    let erected = embed(&ct, &x.registry)?;
    let prod = x.data.matmul(&erected);
    let shared: Vec<&str> = c.registry.names().collect();
    LabeledOperator { registry: x.registry.clone(), data: prod }.partial_trace(&shared)
}

// ═══════════════════════════════════════════════════════════════════
// Symmetric logarithmic derivative
// ═══════════════════════════════════════════════════════════════════

/// Result of the support-restricted solve `(R·S + S·R)/2 = M`.
#[derive(Debug, Clone)]
pub struct SldResult {
    /// Hermitian solution, zero on directions outside `R`'s support pairs.
    pub s: LabeledOperator,
    /// Frobenius norm of `M`'s component outside `R`'s support — the part
    /// the linear form cannot reproduce.
    pub residual: f64,
    /// Number of eigenvalues of `R` above the rank tolerance.
    pub support_rank: usize,
}

/// Solve `(R·S + S·R)/2 = M` for Hermitian `S` on the support of the
/// Hermitian PSD operator `R`.
///
/// In `R`'s eigenbasis, `S̃_ij = 2 M̃_ij/(λ_i+λ_j)` whenever
/// `λ_i+λ_j > 1e-10·λ_max`, else `0`.  The reported residual is
/// `‖M − P M P‖_F` for `P` the support projector, quantifying any component
/// of `M` the equation cannot see.
pub fn solve_sld(r: &LabeledOperator, m: &LabeledOperator) -> Result<SldResult> {
    if r.registry != m.registry {
        return Err(Error::shape("solve_sld: operands on different registries"));
    }
    let (vals, v) = herm_eig(&r.data)?;
    let lam_max = vals.first().copied().unwrap_or(0.0).max(0.0);
    let tol = RANK_TOL * lam_max;
    if vals.iter().any(|&l| l < -tol.max(1e-12)) {
        return Err(Error::numeric(format!(
            "solve_sld: R has negative eigenvalue {:.3e}",
            vals.last().copied().unwrap_or(0.0)
        )));
    }
    let n = vals.len();
    let m_tilde = v.adjoint().matmul(&m.data).matmul(&v);
    let mut s_tilde = CMat::zeros(n, n);
    let mut out_norm2 = 0.0f64;
    let support_rank = vals.iter().filter(|&&l| l > tol).count();
    for i in 0..n {
        for j in 0..n {
            let denom = vals[i] + vals[j];
            if denom > tol {
                s_tilde[(i, j)] = m_tilde[(i, j)] * (2.0 / denom);
            } else {
                out_norm2 += m_tilde[(i, j)].norm_sqr();
            }
        }
    }
    let s_data = v.matmul(&s_tilde).matmul(&v.adjoint()).hermitize();
    Ok(SldResult {
        s: LabeledOperator { registry: r.registry.clone(), data: s_data },
        residual: out_norm2.sqrt(),
        support_rank,
    })
}
