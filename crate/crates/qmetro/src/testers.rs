//! Strategy classes and their tester constraint maps.
//!
//! A strategy interrogating `N` channel uses is summarized by its tester
//! `X̃` on `I₁O₁⋯I_NO_N`.  Each strategy class `k` carves out a convex set
//! `X̃^(k) = {X̃ ⪰ 0, Λ^(k)(X̃) = X̃, tr X̃ = d_O}` via a linear projection
//! `Λ^(k)` built from trace-and-replace maps `R_Q(X̃) = tr_Q X̃ ⊗ I_Q/d_Q`:
//!
//! * **parallel**: `Λ = R_{O₁⋯O_N}` — all outputs are discarded at once;
//! * **sequential** (a fixed causal order `π₁ ≺ ⋯ ≺ π_N`):
//!   `Λ = R_{O_{π_N}} − Σ_{j<N} (R_{tail_j} − R_{O_{π_j} ∪ tail_j})` with
//!   `tail_j = {I,O of all later slots}` — the single-map equivalent of the
//!   usual chain of comb conditions;
//! * **general** (indefinite causal order): the subscript-algebra expansion
//!   of `1 − ∏_j (1 − O_j + I_jO_j) + ∏_j I_jO_j`;
//! * **causal superposition** has no single projection: membership means a
//!   convex split `p X̃^{1≺2} + (1−p) X̃^{2≺1}`, decided by a feasibility
//!   program elsewhere.
//!
//! Every `R_Q` is diagonal in the product basis of local orthonormal
//! Hermitian operators: it annihilates a basis element iff the element's
//! traceless support touches `Q`.  Each `Λ^(k)` is therefore a 0/1-diagonal
//! projector over *support patterns*, which is what the SDP layer consumes.

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::spaces::{LabeledOperator, SpaceRegistry};

// ═══════════════════════════════════════════════════════════════════
// Strategy classes
// ═══════════════════════════════════════════════════════════════════

/// The four strategy classes, ordered by increasing generality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StrategyClass {
    /// All `N` channel uses probed side by side on one entangled input.
    Parallel,
    /// Channel uses wired in the fixed causal order `order[0] ≺ order[1] ≺ …`
    /// (1-based slot labels).
    Sequential {
        /// Permutation of `1..=N`.
        order: Vec<usize>,
    },
    /// Coherent superposition of the two causal orders (N = 2 only).
    CausalSuperposition,
    /// General indefinite-causal-order strategies.
    GeneralIco,
}

impl StrategyClass {
    /// Sequential with the canonical order `1 ≺ 2 ≺ ⋯ ≺ N`.
    pub fn sequential_canonical(n: usize) -> Self {
        StrategyClass::Sequential { order: (1..=n).collect() }
    }

    /// Check the class is well-formed for `n` channel uses.
    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::config("need at least one channel use"));
        }
        match self {
            StrategyClass::Sequential { order } => {
                let mut seen = order.clone();
                seen.sort_unstable();
                if seen != (1..=n).collect::<Vec<_>>() {
                    return Err(Error::config(format!(
                        "sequential order {order:?} is not a permutation of 1..={n}"
                    )));
                }
            }
            StrategyClass::CausalSuperposition if n != 2 => {
                return Err(Error::config(
                    "causal superposition is characterized for exactly 2 channel uses",
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// Short machine-readable label (`parallel`, `sequential`,
    /// `sequential:2,1`, `superposition`, `general`).
    pub fn label(&self) -> String {
        match self {
            StrategyClass::Parallel => "parallel".into(),
            StrategyClass::Sequential { order } => {
                let canonical = (1..=order.len()).collect::<Vec<_>>();
                if *order == canonical {
                    "sequential".into()
                } else {
                    let parts: Vec<String> = order.iter().map(|j| j.to_string()).collect();
                    format!("sequential:{}", parts.join(","))
                }
            }
            StrategyClass::CausalSuperposition => "superposition".into(),
            StrategyClass::GeneralIco => "general".into(),
        }
    }

    /// Parse a label produced by [`Self::label`]; `n` fixes the canonical
    /// sequential order when none is spelled out.
    pub fn parse(s: &str, n: usize) -> Result<Self> {
        let k = match s {
            "parallel" => StrategyClass::Parallel,
            "sequential" => StrategyClass::sequential_canonical(n),
            "superposition" => StrategyClass::CausalSuperposition,
            "general" => StrategyClass::GeneralIco,
            other => {
                if let Some(spec) = other.strip_prefix("sequential:") {
                    let order = spec
                        .split(',')
                        .map(|p| {
                            p.trim().parse::<usize>().map_err(|_| {
                                Error::config(format!("bad sequential order entry '{p}'"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    StrategyClass::Sequential { order }
                } else {
                    return Err(Error::config(format!(
                        "unknown strategy class '{other}' (expected parallel, sequential, \
                         sequential:<order>, superposition, or general)"
                    )));
                }
            }
        };
        k.validate(n)?;
        Ok(k)
    }
}

/// Registry `I₁, O₁, …, I_N, O_N` for a tester over `n` uses of a channel
/// with the given input/output dimensions.
pub fn tester_registry(n: usize, d_in: usize, d_out: usize) -> Result<SpaceRegistry> {
    let mut subsystems = Vec::with_capacity(2 * n);
    let mut names = Vec::with_capacity(2 * n);
    for j in 1..=n {
        names.push((format!("I{j}"), d_in));
        names.push((format!("O{j}"), d_out));
    }
    for (name, d) in &names {
        subsystems.push((name.as_str(), *d));
    }
    SpaceRegistry::new(subsystems)
}

// ═══════════════════════════════════════════════════════════════════
// Tester constraint maps as signed trace-replace combinations
// ═══════════════════════════════════════════════════════════════════

/// A linear map `Λ = Σ_t α_t R_{Q_t}` with integer coefficients and subsystem
/// subsets encoded as bitmasks over registry positions.
#[derive(Debug, Clone)]
pub struct TesterMap {
    /// Number of channel uses.
    pub n: usize,
    /// Registry the map acts on (`I₁, O₁, …, I_N, O_N`).
    pub registry: SpaceRegistry,
    /// `(coefficient, subsystem bitmask)` terms, zero coefficients pruned.
    pub terms: Vec<(i64, u32)>,
}

impl TesterMap {
    /// Build the constraint map of a class on a tester registry.  The
    /// superposition class has no single projection and is rejected.
    pub fn for_class(class: &StrategyClass, registry: &SpaceRegistry) -> Result<Self> {
        let n = registry.len() / 2;
        class.validate(n)?;
        if registry.len() != 2 * n {
            return Err(Error::shape("tester registry must hold I/O pairs"));
        }
        // Positions of I_j / O_j by name (1-based slot j).
        let pos = |prefix: &str, j: usize| registry.position(&format!("{prefix}{j}"));
        let mut mask_i = vec![0u32; n + 1];
        let mut mask_o = vec![0u32; n + 1];
        for j in 1..=n {
            mask_i[j] = 1 << pos("I", j)?;
            mask_o[j] = 1 << pos("O", j)?;
        }
        let terms = match class {
            StrategyClass::Parallel => {
                let all_o = (1..=n).fold(0u32, |m, j| m | mask_o[j]);
                vec![(1i64, all_o)]
            }
            StrategyClass::Sequential { order } => {
                // Λ = R_{O_last} − Σ_{j<N} (R_{tail_j} − R_{O_{π_j}∪tail_j}),
                // tail_j = I/O of every slot after position j in the order.
                let mut terms = vec![(1i64, mask_o[order[n - 1]])];
                let mut tail = 0u32;
                for j in (0..n - 1).rev() {
                    let slot_after = order[j + 1];
                    tail |= mask_i[slot_after] | mask_o[slot_after];
                    terms.push((-1, tail));
                    terms.push((1, tail | mask_o[order[j]]));
                }
                terms
            }
            StrategyClass::GeneralIco => {
                // 1 − ∏_j (1 − O_j + I_jO_j) + ∏_j I_jO_j, expanded over the
                // 3^N factor choices then merged.
                let mut product = vec![(1i64, 0u32)];
                for j in 1..=n {
                    let mut next = Vec::with_capacity(product.len() * 3);
                    for &(c, m) in &product {
                        next.push((c, m));
                        next.push((-c, m | mask_o[j]));
                        next.push((c, m | mask_i[j] | mask_o[j]));
                    }
                    product = next;
                }
                let mut terms = vec![(1i64, 0u32)];
                terms.extend(product.into_iter().map(|(c, m)| (-c, m)));
                let all_io = (1..=n).fold(0u32, |m, j| m | mask_i[j] | mask_o[j]);
                terms.push((1, all_io));
                terms
            }
            StrategyClass::CausalSuperposition => {
                return Err(Error::config(
                    "causal superposition has no single constraint map; membership is a \
                     convex-split feasibility check",
                ));
            }
        };
        Ok(TesterMap { n, registry: registry.clone(), terms: merge_terms(terms) })
    }

    /// Apply `Λ` to an operator on the same registry.
    pub fn apply(&self, x: &LabeledOperator) -> Result<LabeledOperator> {
        if x.registry.names().ne(self.registry.names()) {
            return Err(Error::shape("operator registry does not match the tester map"));
        }
        let d = x.registry.total_dim();
        let mut acc = CMat::zeros(d, d);
        for &(coeff, mask) in &self.terms {
            let term = x.trace_replace_positions(&mask_positions(mask));
            acc = acc.add(&term.data.scale(crate::linalg::C64::new(coeff as f64, 0.0)));
        }
        Ok(LabeledOperator { registry: x.registry.clone(), data: acc })
    }

    /// Eigenvalue of `Λ` on any product-basis element whose traceless
    /// support is exactly the subsystems in `pattern`: `R_Q` fixes the
    /// element iff the support avoids `Q`, so the eigenvalue is
    /// `Σ_t α_t·[pattern ∩ Q_t = ∅]`.
    pub fn eigenvalue(&self, pattern: u32) -> i64 {
        self.terms
            .iter()
            .map(|&(c, mask)| if pattern & mask == 0 { c } else { 0 })
            .sum()
    }

    /// Support patterns spanning the fixed space (`eigenvalue = 1`),
    /// ascending.  Errors if any pattern sees an eigenvalue outside {0, 1},
    /// which would mean the map is not a projector.
    pub fn fixed_support_patterns(&self) -> Result<Vec<u32>> {
        let mut fixed = Vec::new();
        for pattern in 0..(1u32 << self.registry.len()) {
            match self.eigenvalue(pattern) {
                1 => fixed.push(pattern),
                0 => {}
                v => {
                    return Err(Error::numeric(format!(
                        "constraint map eigenvalue {v} on pattern {pattern:#b}; not a projector"
                    )));
                }
            }
        }
        Ok(fixed)
    }

    /// Support patterns spanning the kernel (`eigenvalue = 0`), ascending.
    pub fn kernel_support_patterns(&self) -> Result<Vec<u32>> {
        let fixed = self.fixed_support_patterns()?;
        Ok((0..(1u32 << self.registry.len())).filter(|p| !fixed.contains(p)).collect())
    }

    /// Dimension of the fixed space: `Σ_{patterns} ∏_{j ∈ pattern}(d_j²−1)`.
    pub fn fixed_space_dimension(&self) -> Result<usize> {
        Ok(self
            .fixed_support_patterns()?
            .iter()
            .map(|&p| self.pattern_multiplicity(p))
            .sum())
    }

    /// Number of independent basis elements carrying a support pattern.
    pub fn pattern_multiplicity(&self, pattern: u32) -> usize {
        (0..self.registry.len())
            .filter(|&k| pattern & (1 << k) != 0)
            .map(|k| self.registry.dim(k) * self.registry.dim(k) - 1)
            .product()
    }
}

/// Residual of the chain-of-equalities form of the sequential constraints:
/// `max_j ‖R_{tail_j}(X̃) − R_{O_{π_j} ∪ tail_j}(X̃)‖_∞` over the `N` comb
/// conditions (with `tail_N = ∅`).  Zero exactly on the sequential fixed
/// space; used to cross-check the single-map form.
pub fn sequential_chain_residual(x: &LabeledOperator, order: &[usize]) -> Result<f64> {
    let n = order.len();
    let mut tail: Vec<usize> = Vec::new();
    let mut worst = 0.0f64;
    for j in (0..n).rev() {
        let o_name = format!("O{}", order[j]);
        let mut with_o: Vec<&str> = tail.iter().map(|&p| x.registry.name(p)).collect();
        let tail_names: Vec<&str> = with_o.clone();
        with_o.push(&o_name);
        let lhs = x.trace_replace(&tail_names)?;
        let rhs = x.trace_replace(&with_o)?;
        worst = worst.max(lhs.data.sub(&rhs.data).max_abs());
        tail.push(x.registry.position(&o_name)?);
        tail.push(x.registry.position(&format!("I{}", order[j]))?);
    }
    Ok(worst)
}

fn merge_terms(terms: Vec<(i64, u32)>) -> Vec<(i64, u32)> {
    let mut merged: Vec<(i64, u32)> = Vec::new();
    for (c, m) in terms {
        match merged.iter_mut().find(|(_, mm)| *mm == m) {
            Some(entry) => entry.0 += c,
            None => merged.push((c, m)),
        }
    }
    merged.retain(|&(c, _)| c != 0);
    merged.sort_by_key(|&(_, m)| m);
    merged
}

pub(crate) fn mask_positions(mask: u32) -> Vec<usize> {
    (0..32).filter(|&b| mask & (1 << b) != 0).collect()
}

/// The constraint maps whose joint fixed structure carves out a class:
/// the two definite orderings for the superposition class, the class's
/// own single map otherwise.
pub fn constraint_maps(
    class: &StrategyClass,
    registry: &SpaceRegistry,
) -> Result<Vec<TesterMap>> {
    match class {
        StrategyClass::CausalSuperposition => Ok(vec![
            TesterMap::for_class(&StrategyClass::Sequential { order: vec![1, 2] }, registry)?,
            TesterMap::for_class(&StrategyClass::Sequential { order: vec![2, 1] }, registry)?,
        ]),
        _ => Ok(vec![TesterMap::for_class(class, registry)?]),
    }
}

// ═══════════════════════════════════════════════════════════════════
// Membership checks
// ═══════════════════════════════════════════════════════════════════

/// Diagnostics from a tester membership check.
#[derive(Debug, Clone)]
pub struct TesterDiagnostics {
    /// Overall verdict at the requested tolerance.
    pub valid: bool,
    /// Smallest eigenvalue (should be ≥ −tol).
    pub min_eigenvalue: f64,
    /// `‖Λ(X̃) − X̃‖_∞` (for superposition: the convex-split infeasibility).
    pub fixed_point_residual: f64,
    /// `|tr X̃ − d_O|`.
    pub trace_error: f64,
    /// Human-readable failure summary (empty when valid).
    pub detail: String,
}

/// Check `X̃ ⪰ 0`, `Λ^(k)(X̃) = X̃`, `tr X̃ = d_O` at tolerance `tol`.
///
/// For the causal-superposition class the fixed-point condition is replaced
/// by existence of a convex split across the two causal orders, decided by
/// the feasibility program in the SDP layer.
pub fn is_valid_tester(
    class: &StrategyClass,
    x: &LabeledOperator,
    tol: f64,
) -> Result<TesterDiagnostics> {
    let n = x.registry.len() / 2;
    class.validate(n)?;
    let d_o = x.registry.output_dim();
    let herm = x.data.herm_defect();
    let (vals, _) = crate::linalg::herm_eig(&x.data.hermitize())?;
    let min_eigenvalue = vals.last().copied().unwrap_or(0.0);
    let trace_error = (x.data.trace().re - d_o as f64).abs().max(x.data.trace().im.abs());
    let fixed_point_residual = match class {
        StrategyClass::CausalSuperposition => {
            crate::sdp::superposition_split_infeasibility(x)?
        }
        _ => {
            let map = TesterMap::for_class(class, &x.registry)?;
            map.apply(x)?.data.sub(&x.data).max_abs()
        }
    };
    let mut detail = String::new();
    if herm > tol {
        detail.push_str(&format!("not Hermitian (defect {herm:.3e}); "));
    }
    if min_eigenvalue < -tol {
        detail.push_str(&format!("not PSD (min eigenvalue {min_eigenvalue:.3e}); "));
    }
    if trace_error > tol {
        detail.push_str(&format!("trace off by {trace_error:.3e}; "));
    }
    if fixed_point_residual > tol {
        detail.push_str(&format!("constraint residual {fixed_point_residual:.3e}; "));
    }
    Ok(TesterDiagnostics {
        valid: detail.is_empty(),
        min_eigenvalue,
        fixed_point_residual,
        trace_error,
        detail,
    })
}
