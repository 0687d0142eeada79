//! Repair approximate solver witnesses into exact rational certificates.
//!
//! The interior-point solver returns floating-point witnesses that satisfy
//! the bound programs' constraints only to ~10⁻⁹.  This module turns them
//! into *rigorous* statements: every inequality below is decided by
//! [`exact_psd`] over arbitrary-precision rationals, so a returned
//! certificate is a machine-checkable proof about the rationalized problem
//! instance — not a numerical claim.
//!
//! The repair pipeline, per bound side:
//!
//! * **lower** ([`certify_lower`]): truncate the strategy-side witness
//!   `(X̃, B, C)` onto the decimal grid, restore each broken equality
//!   exactly (Hermitize, re-project onto the class's fixed space, rescale
//!   the trace, rotate `B` so `BΦ*` is exactly Hermitian), then blend with
//!   the maximally mixed strategy `I/d_I ⊕ I_q` at the smallest dyadic
//!   weight `ε` that makes the big block exactly PSD.  The blended point is
//!   exactly feasible, so its objective is a true lower bound.  The
//!   superposition class repairs its two causal-order branches separately
//!   (each must be PSD and order-fixed on its own) before the joint blend.
//! * **upper** ([`certify_upper`]): truncate `(λ, Ỹ, h)`, Hermitize,
//!   project `Ỹ` exactly onto the orthogonal complement of the fixed
//!   space, then raise `λ` — first by doubling steps of `10^{−digits}`,
//!   then by dyadic bisection — until the dual block(s) pass [`exact_psd`].
//!   Weak duality makes the final `λ` a true upper bound.
//!
//! Both repairs converge because the blends are monotone: if a blend
//! passes at `ε` it passes at every `ε' ≥ ε` (the difference is a
//! nonnegative combination of PSD matrices), and likewise in `λ`, so
//! bisection over the dyadic grid finds the smallest passing weight.
//!
//! Certificates refer to the *rationalized* data `(H_Q, Φ_Q)` — the
//! channel generator and ensemble factor rounded at `digits` decimal
//! digits — and carry a hash of that data, because exact feasibility is
//! only meaningful relative to exact problem data.  Every certificate is
//! re-checked from scratch by an independent verifier
//! ([`verify_lower_certificate`] / [`verify_upper_certificate`]) before it
//! is returned.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exact::{
    exact_psd, exact_solve, rat_from_f64, rat_int, rat_to_f64, rat_to_string, rationalize, QMat,
    Rat, QC,
};
use crate::priors::AveragedData;
use crate::sdp::{DualWitness, PrimalWitness};
use crate::spaces::SpaceRegistry;
use crate::testers::{constraint_maps, mask_positions, StrategyClass, TesterMap};
use num_traits::{One, Signed, Zero};

// ═══════════════════════════════════════════════════════════════════
// Rationalized problem instance
// ═══════════════════════════════════════════════════════════════════

/// The exact problem data a certificate refers to: the prior-averaged
/// channel generator and ensemble factor, rounded onto the decimal grid
/// and frozen.
///
/// All certified bounds produced from one instance are exact statements
/// about the semidefinite programs built from `(h_q, phis_q)`; the
/// [`Self::data_hash`] field names that instance unambiguously.
#[derive(Debug, Clone)]
pub struct ExactInstance {
    /// Tensor-factor layout `I₁, O₁, …, I_N, O_N` of the strategy space.
    pub registry: SpaceRegistry,
    /// Total strategy-space dimension `d = d_I·d_O`.
    pub d: usize,
    /// Ensemble rank `q` (columns of `Φ*`).
    pub q: usize,
    /// Product of channel-output dimensions `d_O` (the tester trace).
    pub d_out: usize,
    /// Product of channel-input dimensions `d_I`.
    pub d_in: usize,
    /// Decimal digits used when rounding the data (and witnesses).
    pub digits: u32,
    /// Rationalized Hermitian generator `H_Q`, `d×d`.
    pub h_q: QMat,
    /// Rationalized ensemble factor `Φ*_Q`, `d×q`, exactly full column rank.
    pub phis_q: QMat,
    /// Exact left inverse `(Φ*_Q)⁺ = (Φ*_Q†Φ*_Q)⁻¹Φ*_Q†`, `q×d`.
    pub phis_pinv_q: QMat,
    /// Exact objective kernel `T_Q = 2·H_Q*·Φ*_Q`, `d×q`.
    pub target_q: QMat,
    /// SHA-256 over the canonical serialization of `(digits, layout, H_Q,
    /// Φ*_Q)` — the instance's identity.
    pub data_hash: String,
}

impl ExactInstance {
    /// Round the averaged channel data at `digits` decimal digits and
    /// precompute the exact kernels certification needs.
    ///
    /// Errors when the rounded ensemble factor loses column independence
    /// (raise `digits`) or when an entry leaves the exactly-representable
    /// range.
    pub fn new(data: &AveragedData, digits: u32) -> Result<Self> {
        if digits == 0 {
            return Err(Error::config("certification needs at least one decimal digit"));
        }
        let registry = data.c_bar.registry.clone();
        let d = registry.total_dim();
        let q = data.q;
        if data.phi.rows != d || data.phi.cols != q {
            return Err(Error::shape(format!(
                "ensemble factor is {}×{}, expected {d}×{q}",
                data.phi.rows, data.phi.cols
            )));
        }
        let h_q = rationalize(&data.h.data, digits)?.hermitize();
        let phis_q = rationalize(&data.phi.conj(), digits)?;
        // Exact Moore–Penrose left inverse of a full-column-rank matrix:
        // (Φ†Φ)⁻¹Φ†.  A singular Gram matrix means the rounding collapsed
        // the column space.
        let gram = phis_q.adjoint().matmul(&phis_q);
        let phis_pinv_q = exact_solve(&gram, &phis_q.adjoint()).map_err(|_| {
            Error::certify(format!(
                "ensemble factor columns are no longer independent after rounding \
                 at {digits} digits; increase the precision"
            ))
        })?;
        if phis_pinv_q.matmul(&phis_q) != QMat::identity(q) {
            return Err(Error::certify(
                "exact pseudoinverse failed the left-inverse identity",
            ));
        }
        let target_q = h_q.conj().matmul(&phis_q).scale_rat(&rat_int(2));
        let data_hash = hash_instance(&registry, digits, &h_q, &phis_q);
        Ok(ExactInstance {
            d_out: registry.output_dim(),
            d_in: registry.input_dim(),
            registry,
            d,
            q,
            digits,
            h_q,
            phis_q,
            phis_pinv_q,
            target_q,
            data_hash,
        })
    }
}

/// Canonical SHA-256 identity of a rationalized instance.
fn hash_instance(registry: &SpaceRegistry, digits: u32, h_q: &QMat, phis_q: &QMat) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("digits={digits};"));
    for k in 0..registry.len() {
        hasher.update(format!("{}:{};", registry.name(k), registry.dim(k)));
    }
    for (tag, m) in [("H", h_q), ("PHIS", phis_q)] {
        hasher.update(format!("{tag}[{}x{}]=", m.rows, m.cols));
        for v in &m.data {
            hasher.update(rat_to_string(&v.re));
            hasher.update(",");
            hasher.update(rat_to_string(&v.im));
            hasher.update(";");
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ═══════════════════════════════════════════════════════════════════
// Exact constraint maps
// ═══════════════════════════════════════════════════════════════════

/// Exact trace-and-replace `R_Q(A) = tr_Q(A) ⊗ I_Q/d_Q` at the subsystem
/// positions `sel`, mirroring the floating-point kernel index for index.
fn exact_trace_replace(m: &QMat, registry: &SpaceRegistry, sel: &[usize]) -> QMat {
    let keep = registry.complement(sel);
    let keep_off = registry.offsets_for(&keep);
    let sel_off = registry.offsets_for(sel);
    let dq = rat_int(sel_off.len() as i64);
    let mut out = QMat::zeros(m.rows, m.cols);
    for &ro in &keep_off {
        for &co in &keep_off {
            let mut acc = QC::zero();
            for &s in &sel_off {
                acc = acc.add(&m[(ro + s, co + s)]);
            }
            let avg = QC::new(acc.re / &dq, acc.im / &dq);
            for &s in &sel_off {
                out[(ro + s, co + s)] = avg.clone();
            }
        }
    }
    out
}

/// Apply a class constraint map `Λ = Σ cᵢ·R_{Qᵢ}` exactly.
///
/// The map is an exact projector on rational matrices — its trace-replace
/// identities hold over ℚ — so `Λ(Λ(M)) = Λ(M)` with no error term, which
/// is what lets the repairs below restore fixed-space membership *exactly*.
pub fn exact_apply_map(map: &TesterMap, m: &QMat) -> QMat {
    let mut acc = QMat::zeros(m.rows, m.cols);
    for &(coeff, mask) in &map.terms {
        if coeff == 0 {
            continue;
        }
        let term = exact_trace_replace(m, &map.registry, &mask_positions(mask));
        acc = acc.add(&term.scale_rat(&rat_int(coeff)));
    }
    acc
}

// ═══════════════════════════════════════════════════════════════════
// Block assembly
// ═══════════════════════════════════════════════════════════════════

/// Strategy-side block `[[X̃, B†],[B, C]]`, `(d+q)×(d+q)`.
fn lower_block(x: &QMat, b: &QMat, c: &QMat) -> QMat {
    let (d, q) = (x.rows, c.rows);
    let bdag = b.adjoint();
    QMat::from_fn(d + q, d + q, |r, cc| {
        if r < d && cc < d {
            x[(r, cc)].clone()
        } else if r < d {
            bdag[(r, cc - d)].clone()
        } else if cc < d {
            b[(r - d, cc)].clone()
        } else {
            c[(r - d, cc - d)].clone()
        }
    })
}

/// Dual-side block `[[λ/d_O·I + Ỹ, K],[K†, I_q]]` with corner
/// `K = T_Q − 2iΦ*_Q·h`.
fn upper_block(lambda: &Rat, d_out: usize, y: &QMat, corner: &QMat) -> QMat {
    let (d, q) = (y.rows, corner.cols);
    let shift = lambda / rat_int(d_out as i64);
    let kdag = corner.adjoint();
    QMat::from_fn(d + q, d + q, |r, cc| {
        if r < d && cc < d {
            let mut v = y[(r, cc)].clone();
            if r == cc {
                v.re += &shift;
            }
            v
        } else if r < d {
            corner[(r, cc - d)].clone()
        } else if cc < d {
            kdag[(r - d, cc)].clone()
        } else if r == cc {
            QC::one()
        } else {
            QC::zero()
        }
    })
}

/// The dual corner `K = T_Q − 2i·Φ*_Q·h` for an exactly Hermitian gauge.
fn dual_corner(inst: &ExactInstance, h: &QMat) -> QMat {
    let two_i = QC::new(Rat::zero(), rat_int(2));
    inst.target_q.sub(&inst.phis_q.matmul(h).scale(&two_i))
}

// ═══════════════════════════════════════════════════════════════════
// Dyadic searches
// ═══════════════════════════════════════════════════════════════════

/// Number of bisection steps for every dyadic search: the returned weight
/// is within `2⁻⁴⁰` of the smallest passing one.
const BISECTION_STEPS: usize = 40;

/// Smallest dyadic `ε ∈ [0, 1]` for which `passes(ε)` holds.
///
/// `passes` must be monotone (an up-set in `ε`); the searches here blend
/// with PSD matrices, which guarantees it.  The returned value was itself
/// verified passing.  Errors when even `ε = 1` fails — the witness is then
/// grossly infeasible and no blend can repair it.
fn smallest_dyadic(mut passes: impl FnMut(&Rat) -> Result<bool>) -> Result<Rat> {
    let zero = Rat::zero();
    if passes(&zero)? {
        return Ok(zero);
    }
    let one = Rat::one();
    if !passes(&one)? {
        return Err(Error::certify(
            "blend fails even at full mixing weight ε = 1; the witness is grossly infeasible",
        ));
    }
    let (mut lo, mut hi) = (zero, one);
    for _ in 0..BISECTION_STEPS {
        let mid = (&lo + &hi) / rat_int(2);
        if passes(&mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Smallest passing `λ ≥ λ₀` for a monotone PSD condition: doubling steps
/// of `10^{−digits}` find a passing value, then bisection tightens it.
fn smallest_passing_lambda(
    lambda0: Rat,
    digits: u32,
    mut passes: impl FnMut(&Rat) -> Result<bool>,
) -> Result<Rat> {
    if passes(&lambda0)? {
        return Ok(lambda0);
    }
    let mut step = Rat::new(num_bigint::BigInt::one(), num_bigint::BigInt::from(10).pow(digits));
    let mut hi = &lambda0 + &step;
    let mut doublings = 0usize;
    while !passes(&hi)? {
        doublings += 1;
        if doublings > 80 {
            return Err(Error::certify(
                "dual witness cannot be repaired: the block stays indefinite \
                 under any reasonable bound increase",
            ));
        }
        step = step * rat_int(2);
        hi = &lambda0 + &step;
    }
    let mut lo = if doublings == 0 { lambda0 } else { &hi - &step / rat_int(2) };
    for _ in 0..BISECTION_STEPS {
        let mid = (&lo + &hi) / rat_int(2);
        if passes(&mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

// ═══════════════════════════════════════════════════════════════════
// Certificates
// ═══════════════════════════════════════════════════════════════════

/// An exactly feasible strategy-side point and the lower bound it proves.
///
/// Soundness: [`verify_lower_certificate`] rechecks every constraint with
/// exact arithmetic, so holding a `LowerCertificate` that verifies is a
/// proof that the rationalized instance's maximal information is at least
/// [`Self::bound`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowerCertificate {
    /// Strategy-class label (see `StrategyClass::label`).
    pub class_label: String,
    /// The certified lower bound `−tr C − 2·Re tr(T_Q·B)`.
    #[serde(with = "crate::exact::rat_string")]
    pub bound: Rat,
    /// Final blend weight against the maximally mixed strategy.
    #[serde(with = "crate::exact::rat_string")]
    pub eps: Rat,
    /// Per-branch pre-blend weights (superposition class only; empty for
    /// the single-tester classes).
    #[serde(with = "crate::exact::rat_string_vec")]
    pub branch_eps: Vec<Rat>,
    /// Repaired tester branches (one per causal order for the
    /// superposition class, otherwise a single entry).
    pub x_tildes: Vec<QMat>,
    /// Repaired auxiliary block, `q×d`, with `B·Φ*_Q` exactly Hermitian.
    pub b: QMat,
    /// Repaired auxiliary block, `q×q`, exactly Hermitian.
    pub c: QMat,
    /// Decimal digits of the truncation grid.
    pub digits: u32,
    /// Identity of the rationalized instance this certificate refers to.
    pub data_hash: String,
}

impl LowerCertificate {
    /// The certified bound as the nearest float.
    pub fn bound_f64(&self) -> f64 {
        rat_to_f64(&self.bound)
    }
}

/// An exactly feasible dual point and the upper bound it proves.
///
/// Soundness: pairing the PSD dual block against any strategy of the class
/// shows its information is at most [`Self::bound`]; the pairing argument
/// needs exactly `Λ(Ỹ) = 0`, `h` Hermitian, and the block PSD — all of
/// which [`verify_upper_certificate`] rechecks exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpperCertificate {
    /// Strategy-class label (see `StrategyClass::label`).
    pub class_label: String,
    /// The certified upper bound `λ`.
    #[serde(with = "crate::exact::rat_string")]
    pub bound: Rat,
    /// Fixed-space-orthogonal multipliers, one per causal-order block.
    pub y_tildes: Vec<QMat>,
    /// Exactly Hermitian gauge, `q×q`.
    pub h: QMat,
    /// Decimal digits of the truncation grid.
    pub digits: u32,
    /// Identity of the rationalized instance this certificate refers to.
    pub data_hash: String,
}

impl UpperCertificate {
    /// The certified bound as the nearest float.
    pub fn bound_f64(&self) -> f64 {
        rat_to_f64(&self.bound)
    }
}

/// A two-sided certified bracket `lower ≤ J_max^(k) ≤ upper` on one
/// rationalized instance, with both endpoints exact rationals.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CertifiedInterval {
    /// Strategy-class label.
    pub class_label: String,
    /// Exact certified lower bound.
    #[serde(with = "crate::exact::rat_string")]
    pub lower: Rat,
    /// Exact certified upper bound.
    #[serde(with = "crate::exact::rat_string")]
    pub upper: Rat,
    /// Blend weights spent on the lower side (branch weights, then the
    /// final joint weight).
    #[serde(with = "crate::exact::rat_string_vec")]
    pub blend_eps: Vec<Rat>,
    /// Decimal digits of the truncation grid.
    pub digits: u32,
    /// Identity of the rationalized instance both bounds refer to.
    pub data_hash: String,
}

impl CertifiedInterval {
    /// Combine matching lower and upper certificates into an interval.
    ///
    /// Errors when the certificates disagree on class, precision, or
    /// instance, or when they fail the `lower ≤ upper` invariant — which
    /// would mean at least one of them is not what it claims.
    pub fn from_certificates(lo: &LowerCertificate, hi: &UpperCertificate) -> Result<Self> {
        if lo.class_label != hi.class_label {
            return Err(Error::certify(format!(
                "certificates are for different classes: '{}' vs '{}'",
                lo.class_label, hi.class_label
            )));
        }
        if lo.data_hash != hi.data_hash || lo.digits != hi.digits {
            return Err(Error::certify(
                "certificates refer to different rationalized instances",
            ));
        }
        if lo.bound > hi.bound {
            return Err(Error::certify(format!(
                "certified interval is empty: lower {} > upper {}",
                rat_to_string(&lo.bound),
                rat_to_string(&hi.bound)
            )));
        }
        let mut blend_eps = lo.branch_eps.clone();
        blend_eps.push(lo.eps.clone());
        Ok(CertifiedInterval {
            class_label: lo.class_label.clone(),
            lower: lo.bound.clone(),
            upper: hi.bound.clone(),
            blend_eps,
            digits: lo.digits,
            data_hash: lo.data_hash.clone(),
        })
    }

    /// Lower endpoint as the nearest float.
    pub fn lower_f64(&self) -> f64 {
        rat_to_f64(&self.lower)
    }

    /// Upper endpoint as the nearest float.
    pub fn upper_f64(&self) -> f64 {
        rat_to_f64(&self.upper)
    }
}

// ═══════════════════════════════════════════════════════════════════
// Lower-bound certification
// ═══════════════════════════════════════════════════════════════════

/// Repair a numeric strategy-side witness into an exact lower bound.
///
/// Pipeline (single-tester classes): truncate `(X̃, B, C)` at
/// `inst.digits`; Hermitize `X̃` and `C`; rotate
/// `B ← Herm(BΦ*)·Φ*⁺ + B(I − Φ*Φ*⁺)` so `BΦ*` is exactly Hermitian;
/// re-project `X̃` onto the class's fixed space and rescale its trace to
/// `d_O`; then find the smallest dyadic `ε` making
/// `(1−ε)·[[X̃,B†],[B,C]] + ε·(I/d_I ⊕ I_q)` exactly PSD and blend.  The
/// blended point satisfies every primal constraint exactly, so its
/// objective is a valid lower bound on the rationalized instance.
///
/// The superposition class carries two causal-order branches: each branch
/// is re-projected under its own ordering map, the pair is jointly
/// rescaled, each branch is pre-blended PSD with its own smallest dyadic
/// weight, the joint trace is restored, and the final blend splits its
/// mixing weight `ε/2` per branch so branch PSD-ness, per-order
/// fixed-ness, and the joint trace survive exactly.
pub fn certify_lower(
    class: &StrategyClass,
    witness: &PrimalWitness,
    inst: &ExactInstance,
) -> Result<LowerCertificate> {
    let maps = constraint_maps(class, &inst.registry)?;
    let nb = maps.len();
    if witness.x_tildes.len() != nb {
        return Err(Error::config(format!(
            "witness has {} tester branch(es), class '{}' needs {nb}",
            witness.x_tildes.len(),
            class.label()
        )));
    }
    let (d, q) = (inst.d, inst.q);
    let digits = inst.digits;

    // 1. Truncate onto the decimal grid and restore Hermiticity exactly.
    let mut xs: Vec<QMat> = Vec::with_capacity(nb);
    for xt in &witness.x_tildes {
        if xt.data.rows != d {
            return Err(Error::shape("tester branch has the wrong dimension"));
        }
        xs.push(rationalize(&xt.data, digits)?.hermitize());
    }
    let b0 = rationalize(&witness.b, digits)?;
    if b0.rows != q || b0.cols != d {
        return Err(Error::shape("auxiliary block B has the wrong shape"));
    }
    let c = rationalize(&witness.c, digits)?.hermitize();
    if c.rows != q {
        return Err(Error::shape("auxiliary block C has the wrong shape"));
    }

    // 2. Rotate B so BΦ* is exactly Hermitian: keep its range component's
    //    Hermitian part and its cokernel component untouched.
    let bphi = b0.matmul(&inst.phis_q);
    let range_part = bphi.hermitize().matmul(&inst.phis_pinv_q);
    let proj = inst.phis_q.matmul(&inst.phis_pinv_q); // range(Φ*) projector
    let b = range_part.add(&b0.sub(&b0.matmul(&proj)));

    // 3. Re-project every branch onto its fixed space (exact projector).
    for (x, map) in xs.iter_mut().zip(&maps) {
        *x = exact_apply_map(map, x);
    }

    // 4. Rescale the joint trace to d_O.
    let d_o = rat_int(inst.d_out as i64);
    rescale_joint_trace(&mut xs, &d_o)?;

    // The maximally mixed strategy I/d_I: trace d_O, fixed under every
    // constraint map, positive definite — the universal blend partner.
    let mix = QMat::identity(d).scale_rat(&Rat::new(
        num_bigint::BigInt::one(),
        num_bigint::BigInt::from(inst.d_in as i64),
    ));

    // 5. Superposition branches must be PSD individually; pre-blend each
    //    with its own smallest dyadic weight, then restore the joint trace.
    let mut branch_eps = Vec::new();
    if nb > 1 {
        for x in xs.iter_mut() {
            let eps_j = smallest_dyadic(|e| {
                let blended = blend(x, &mix, e);
                exact_psd(&blended)
            })?;
            *x = blend(x, &mix, &eps_j);
            branch_eps.push(eps_j);
        }
        rescale_joint_trace(&mut xs, &d_o)?;
    }

    // 6. Final blend: smallest dyadic ε with the big block exactly PSD.
    let x_sum = xs.iter().skip(1).fold(xs[0].clone(), |acc, x| acc.add(x));
    let iq = QMat::identity(q);
    let eps = smallest_dyadic(|e| {
        let block = lower_block(
            &blend(&x_sum, &mix, e),
            &b.scale_rat(&(Rat::one() - e)),
            &blend(&c, &iq, e),
        );
        exact_psd(&block)
    })?;

    // Accumulate the blend into the witness, splitting the tester mixing
    // weight evenly across branches.
    let eps_share = &eps / rat_int(nb as i64);
    let one_minus = Rat::one() - &eps;
    let xs_acc: Vec<QMat> = xs
        .iter()
        .map(|x| x.scale_rat(&one_minus).add(&mix.scale_rat(&eps_share)))
        .collect();
    let b_acc = b.scale_rat(&one_minus);
    let c_acc = blend(&c, &iq, &eps);

    // 7. The exact objective of the repaired point.
    let bound = objective(&inst.target_q, &b_acc, &c_acc);

    let cert = LowerCertificate {
        class_label: class.label(),
        bound,
        eps,
        branch_eps,
        x_tildes: xs_acc,
        b: b_acc,
        c: c_acc,
        digits,
        data_hash: inst.data_hash.clone(),
    };
    verify_lower_certificate(&cert, inst)?;
    Ok(cert)
}

/// `(1−ε)·A + ε·B` exactly.
fn blend(a: &QMat, b: &QMat, eps: &Rat) -> QMat {
    a.scale_rat(&(Rat::one() - eps)).add(&b.scale_rat(eps))
}

/// Rescale all branches by one factor so their joint trace is exactly `t`.
fn rescale_joint_trace(xs: &mut [QMat], t: &Rat) -> Result<()> {
    let mut total = Rat::zero();
    for x in xs.iter() {
        let tr = x.trace();
        if !tr.im.is_zero() {
            return Err(Error::certify("tester branch trace is not real"));
        }
        total += tr.re;
    }
    if !total.is_positive() {
        return Err(Error::certify(
            "tester trace is not positive after projection; the witness is unusable",
        ));
    }
    let scale = t / total;
    for x in xs.iter_mut() {
        *x = x.scale_rat(&scale);
    }
    Ok(())
}

/// Exact strategy-side objective `−tr C − 2·Re tr(T_Q·B)`.
fn objective(target_q: &QMat, b: &QMat, c: &QMat) -> Rat {
    let tb = b.matmul(target_q).trace(); // tr(B·T) = tr(T·B)
    -c.trace().re - rat_int(2) * tb.re
}

// ═══════════════════════════════════════════════════════════════════
// Upper-bound certification
// ═══════════════════════════════════════════════════════════════════

/// Repair a numeric dual witness into an exact upper bound.
///
/// Pipeline: truncate `(λ, Ỹ_j, h)` at `inst.digits`; Hermitize `Ỹ_j` and
/// `h`; project each `Ỹ_j ← (id − Λ_j)(Ỹ_j)` so it is exactly orthogonal
/// to its fixed space; then raise `λ` until every block
/// `[[λ/d_O·I + Ỹ_j, T_Q − 2iΦ*_Q h],[·†, I_q]]` passes [`exact_psd`] —
/// doubling steps of `10^{−digits}` first, dyadic bisection after.  The
/// superposition class checks both causal-order blocks under one shared
/// `λ` and `h`.
pub fn certify_upper(
    class: &StrategyClass,
    witness: &DualWitness,
    inst: &ExactInstance,
) -> Result<UpperCertificate> {
    let maps = constraint_maps(class, &inst.registry)?;
    let nb = maps.len();
    if witness.y_tildes.len() != nb {
        return Err(Error::config(format!(
            "witness has {} multiplier block(s), class '{}' needs {nb}",
            witness.y_tildes.len(),
            class.label()
        )));
    }
    let digits = inst.digits;

    // 1. Truncate and restore the exact equalities.
    let mut ys: Vec<QMat> = Vec::with_capacity(nb);
    for (y, map) in witness.y_tildes.iter().zip(&maps) {
        if y.rows != inst.d {
            return Err(Error::shape("multiplier block has the wrong dimension"));
        }
        let herm = rationalize(y, digits)?.hermitize();
        // (id − Λ) of an exact projector output is exactly fixed-orthogonal.
        ys.push(herm.sub(&exact_apply_map(map, &herm)));
    }
    let h = rationalize(&witness.h, digits)?.hermitize();
    if h.rows != inst.q {
        return Err(Error::shape("gauge block has the wrong shape"));
    }
    let corner = dual_corner(inst, &h);
    let lambda0 = rat_from_f64(witness.lambda, digits)?;

    // 2. Raise λ until every causal-order block is exactly PSD.
    let bound = smallest_passing_lambda(lambda0, digits, |lam| {
        for y in &ys {
            if !exact_psd(&upper_block(lam, inst.d_out, y, &corner))? {
                return Ok(false);
            }
        }
        Ok(true)
    })?;

    let cert = UpperCertificate {
        class_label: class.label(),
        bound,
        y_tildes: ys,
        h,
        digits,
        data_hash: inst.data_hash.clone(),
    };
    verify_upper_certificate(&cert, inst)?;
    Ok(cert)
}

// ═══════════════════════════════════════════════════════════════════
// Independent verification
// ═══════════════════════════════════════════════════════════════════

/// Recheck a lower certificate from scratch with exact arithmetic.
///
/// Confirms, with no tolerance anywhere: branch dimensions and exact
/// Hermiticity; each branch exactly fixed under its causal-order map and
/// exactly PSD; joint trace exactly `d_O`; `B·Φ*_Q` exactly Hermitian;
/// the big block `[[ΣX̃, B†],[B, C]]` exactly PSD; and the stated bound
/// exactly equal to the objective of the stored witness.
pub fn verify_lower_certificate(cert: &LowerCertificate, inst: &ExactInstance) -> Result<()> {
    if cert.data_hash != inst.data_hash {
        return Err(Error::certify(
            "certificate refers to a different rationalized instance",
        ));
    }
    let n = inst.registry.len() / 2;
    let class = StrategyClass::parse(&cert.class_label, n)?;
    let maps = constraint_maps(&class, &inst.registry)?;
    if cert.x_tildes.len() != maps.len() {
        return Err(Error::certify(format!(
            "certificate has {} tester branch(es), class '{}' needs {}",
            cert.x_tildes.len(),
            cert.class_label,
            maps.len()
        )));
    }
    let mut joint_trace = Rat::zero();
    for (x, map) in cert.x_tildes.iter().zip(&maps) {
        if x.rows != inst.d || x.cols != inst.d {
            return Err(Error::certify("tester branch has the wrong dimension"));
        }
        if !x.is_hermitian() {
            return Err(Error::certify("tester branch is not exactly Hermitian"));
        }
        if exact_apply_map(map, x) != *x {
            return Err(Error::certify(
                "tester branch is not exactly fixed under its causal-order map",
            ));
        }
        if !exact_psd(x)? {
            return Err(Error::certify("tester branch is not PSD"));
        }
        joint_trace += x.trace().re;
    }
    if joint_trace != rat_int(inst.d_out as i64) {
        return Err(Error::certify(format!(
            "tester trace is {}, expected {}",
            rat_to_string(&joint_trace),
            inst.d_out
        )));
    }
    if cert.b.rows != inst.q || cert.b.cols != inst.d {
        return Err(Error::certify("auxiliary block B has the wrong shape"));
    }
    if !cert.b.matmul(&inst.phis_q).is_hermitian() {
        return Err(Error::certify("B·Φ* is not exactly Hermitian"));
    }
    if cert.c.rows != inst.q || cert.c.cols != inst.q || !cert.c.is_hermitian() {
        return Err(Error::certify("auxiliary block C is not exactly Hermitian"));
    }
    let x_sum = cert
        .x_tildes
        .iter()
        .skip(1)
        .fold(cert.x_tildes[0].clone(), |acc, x| acc.add(x));
    if !exact_psd(&lower_block(&x_sum, &cert.b, &cert.c))? {
        return Err(Error::certify("strategy-side block is not PSD"));
    }
    if objective(&inst.target_q, &cert.b, &cert.c) != cert.bound {
        return Err(Error::certify(
            "stated bound does not match the witness objective",
        ));
    }
    Ok(())
}

/// Recheck an upper certificate from scratch with exact arithmetic.
///
/// Confirms `h` exactly Hermitian, every multiplier exactly annihilated by
/// its causal-order map, and every dual block exactly PSD at the stated
/// bound.
pub fn verify_upper_certificate(cert: &UpperCertificate, inst: &ExactInstance) -> Result<()> {
    if cert.data_hash != inst.data_hash {
        return Err(Error::certify(
            "certificate refers to a different rationalized instance",
        ));
    }
    let n = inst.registry.len() / 2;
    let class = StrategyClass::parse(&cert.class_label, n)?;
    let maps = constraint_maps(&class, &inst.registry)?;
    if cert.y_tildes.len() != maps.len() {
        return Err(Error::certify(format!(
            "certificate has {} multiplier block(s), class '{}' needs {}",
            cert.y_tildes.len(),
            cert.class_label,
            maps.len()
        )));
    }
    if cert.h.rows != inst.q || cert.h.cols != inst.q || !cert.h.is_hermitian() {
        return Err(Error::certify("gauge block is not exactly Hermitian"));
    }
    let corner = dual_corner(inst, &cert.h);
    let zero = QMat::zeros(inst.d, inst.d);
    for (y, map) in cert.y_tildes.iter().zip(&maps) {
        if y.rows != inst.d || y.cols != inst.d {
            return Err(Error::certify("multiplier block has the wrong dimension"));
        }
        if !y.is_hermitian() {
            return Err(Error::certify("multiplier block is not exactly Hermitian"));
        }
        if exact_apply_map(map, y) != zero {
            return Err(Error::certify(
                "multiplier block is not exactly orthogonal to the fixed space",
            ));
        }
        if !exact_psd(&upper_block(&cert.bound, inst.d_out, y, &corner))? {
            return Err(Error::certify("dual block is not PSD at the stated bound"));
        }
    }
    Ok(())
}

// ═══════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::ChannelSpec;
    use crate::linalg::{C64, CMat};
    use crate::priors::{Prior, QPolicy};
    use crate::sdp::{build_dual, build_primal};
    use crate::solver::{solve_to_optimal, SolverConfig};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn averaged(spec: &ChannelSpec, n: usize) -> AveragedData {
        AveragedData::compute(spec, n, &Prior::uniform(), QPolicy::Rank).unwrap()
    }

    fn solve_lower(class: &StrategyClass, data: &AveragedData) -> (f64, PrimalWitness) {
        let pb = build_primal(class, data).unwrap();
        let sol = solve_to_optimal(&pb.problem, &SolverConfig::default()).unwrap();
        (pb.problem.reported_value(&sol), pb.witness(&sol).unwrap())
    }

    fn solve_upper(class: &StrategyClass, data: &AveragedData) -> (f64, DualWitness) {
        let db = build_dual(class, data).unwrap();
        let sol = solve_to_optimal(&db.problem, &SolverConfig::default()).unwrap();
        (db.problem.reported_value(&sol), db.witness(&sol).unwrap())
    }

    /// The maximally mixed strategy with zero auxiliaries is exactly
    /// feasible on its own: certification must return bound 0 at ε = 0,
    /// running the zero-pivot branch of the exact PSD test.
    #[test]
    fn trivial_feasible_point_certifies_zero_at_zero_blend() {
        let data = averaged(&ChannelSpec::unitary(), 1);
        let inst = ExactInstance::new(&data, 6).unwrap();
        let registry = data.c_bar.registry.clone();
        let d = registry.total_dim();
        let mix = CMat::identity(d).scale(C64::new(1.0 / inst.d_in as f64, 0.0));
        let witness = PrimalWitness {
            x_tildes: vec![crate::spaces::LabeledOperator {
                registry,
                data: mix,
            }],
            b: CMat::zeros(inst.q, d),
            c: CMat::zeros(inst.q, inst.q),
            objective: 0.0,
        };
        let cert = certify_lower(&StrategyClass::Parallel, &witness, &inst).unwrap();
        assert!(cert.bound.is_zero(), "bound {}", rat_to_string(&cert.bound));
        assert!(cert.eps.is_zero(), "eps {}", rat_to_string(&cert.eps));
        verify_lower_certificate(&cert, &inst).unwrap();
    }

    /// A zero generator admits the all-zero dual witness: certified upper
    /// bound exactly 0.
    #[test]
    fn zero_generator_certifies_upper_zero() {
        let data = averaged(&ChannelSpec::unitary(), 1);
        let mut inst = ExactInstance::new(&data, 6).unwrap();
        inst.h_q = QMat::zeros(inst.d, inst.d);
        inst.target_q = QMat::zeros(inst.d, inst.q);
        let witness = DualWitness {
            lambda: 0.0,
            y_tildes: vec![CMat::zeros(inst.d, inst.d)],
            h: CMat::zeros(inst.q, inst.q),
        };
        let cert = certify_upper(&StrategyClass::Parallel, &witness, &inst).unwrap();
        assert!(cert.bound.is_zero(), "bound {}", rat_to_string(&cert.bound));
        verify_upper_certificate(&cert, &inst).unwrap();
    }

    /// Certified bounds must bracket the numeric optimum from outside but
    /// stay close to it: lower ≤ primal + 1e-6, upper ≥ dual − 1e-6, and
    /// the interval itself must be valid and tight.
    #[test]
    fn certificates_bracket_solver_values_on_noiseless_rotation() {
        let data = averaged(&ChannelSpec::unitary(), 1);
        let inst = ExactInstance::new(&data, 9).unwrap();
        for class in [StrategyClass::Parallel, StrategyClass::sequential_canonical(1)] {
            let (p_val, pw) = solve_lower(&class, &data);
            let (d_val, dw) = solve_upper(&class, &data);
            let lo = certify_lower(&class, &pw, &inst).unwrap();
            let hi = certify_upper(&class, &dw, &inst).unwrap();
            let (lo_f, hi_f) = (lo.bound_f64(), hi.bound_f64());
            assert!(lo_f <= p_val + 1e-6, "{}: {lo_f} > {p_val}", class.label());
            assert!(hi_f >= d_val - 1e-6, "{}: {hi_f} < {d_val}", class.label());
            assert!(lo.bound <= hi.bound);
            assert!(hi_f - lo_f < 1e-4, "{}: loose interval [{lo_f}, {hi_f}]", class.label());
            // The noiseless rotation admits the balanced probe with
            // information exactly 1 at one query.
            assert!(lo_f > 1.0 - 1e-5, "{}: certified lower {lo_f}", class.label());
            let interval = CertifiedInterval::from_certificates(&lo, &hi).unwrap();
            assert_eq!(interval.lower, lo.bound);
            assert_eq!(interval.upper, hi.bound);
        }
    }

    /// All four strategy classes at two queries, including the two-branch
    /// superposition pipelines on both sides.
    #[test]
    fn certificates_cover_all_classes_at_two_queries() {
        let data = averaged(&ChannelSpec::unitary(), 2);
        let inst = ExactInstance::new(&data, 9).unwrap();
        let classes = [
            StrategyClass::Parallel,
            StrategyClass::sequential_canonical(2),
            StrategyClass::CausalSuperposition,
            StrategyClass::GeneralIco,
        ];
        let mut intervals = Vec::new();
        for class in &classes {
            let (p_val, pw) = solve_lower(class, &data);
            let (d_val, dw) = solve_upper(class, &data);
            let lo = certify_lower(class, &pw, &inst).unwrap();
            let hi = certify_upper(class, &dw, &inst).unwrap();
            assert!(lo.bound_f64() <= p_val + 1e-6, "{}", class.label());
            assert!(hi.bound_f64() >= d_val - 1e-6, "{}", class.label());
            assert!(
                hi.bound_f64() - lo.bound_f64() < 1e-4,
                "{}: loose interval [{}, {}]",
                class.label(),
                lo.bound_f64(),
                hi.bound_f64()
            );
            intervals.push(CertifiedInterval::from_certificates(&lo, &hi).unwrap());
        }
        // Class inclusions survive certification: parallel ⊆ sequential ⊆
        // superposition ⊆ general, so certified uppers must not violate
        // the known orderings from below.
        let upper = |k: usize| intervals[k].upper_f64();
        let lower = |k: usize| intervals[k].lower_f64();
        assert!(upper(0) >= lower(0));
        assert!(upper(1) + 1e-9 >= lower(0), "sequential upper below parallel lower");
        assert!(upper(2) + 1e-9 >= lower(1), "superposition upper below sequential lower");
        assert!(upper(3) + 1e-9 >= lower(2), "general upper below superposition lower");
    }

    /// Perturbing a witness by 1e-7 noise must not move the certified
    /// bound by more than 1e-5: the repair pipeline is continuous.
    #[test]
    fn certification_is_stable_under_small_witness_noise() {
        let data = averaged(&ChannelSpec::unitary(), 1);
        let inst = ExactInstance::new(&data, 9).unwrap();
        let class = StrategyClass::Parallel;
        let (_, pw) = solve_lower(&class, &data);
        let clean = certify_lower(&class, &pw, &inst).unwrap();

        let mut rng = StdRng::seed_from_u64(41);
        let mut noisy = pw.clone();
        let mut jiggle = |m: &mut CMat| {
            for v in m.data.iter_mut() {
                *v += C64::new(rng.gen_range(-1e-7..1e-7), rng.gen_range(-1e-7..1e-7));
            }
        };
        for x in noisy.x_tildes.iter_mut() {
            jiggle(&mut x.data);
        }
        jiggle(&mut noisy.b);
        jiggle(&mut noisy.c);

        let perturbed = certify_lower(&class, &noisy, &inst).unwrap();
        let drift = (perturbed.bound_f64() - clean.bound_f64()).abs();
        assert!(drift < 1e-5, "certified bound drifted by {drift:.3e}");
    }

    /// Certificates survive a JSON round trip bit for bit, and the
    /// verifier rejects any tampering with the stored witness or bound.
    #[test]
    fn certificates_serialize_and_verifier_rejects_tampering() {
        let data = averaged(&ChannelSpec::unitary(), 1);
        let inst = ExactInstance::new(&data, 6).unwrap();
        let class = StrategyClass::Parallel;
        let (_, pw) = solve_lower(&class, &data);
        let (_, dw) = solve_upper(&class, &data);
        let lo = certify_lower(&class, &pw, &inst).unwrap();
        let hi = certify_upper(&class, &dw, &inst).unwrap();

        let json = serde_json::to_string(&lo).unwrap();
        let back: LowerCertificate = serde_json::from_str(&json).unwrap();
        assert_eq!(back.bound, lo.bound);
        assert_eq!(back.x_tildes, lo.x_tildes);
        verify_lower_certificate(&back, &inst).unwrap();

        let interval = CertifiedInterval::from_certificates(&lo, &hi).unwrap();
        let ij = serde_json::to_string(&interval).unwrap();
        let iback: CertifiedInterval = serde_json::from_str(&ij).unwrap();
        assert_eq!(iback, interval);
        // The JSON carries rationals as strings, not floats.
        assert!(ij.contains("\"lower\":\""));

        // Inflate the claimed lower bound: the objective no longer matches.
        let mut forged = lo.clone();
        forged.bound += rat_int(1);
        assert!(verify_lower_certificate(&forged, &inst).is_err());

        // Corrupt the tester: fixed-space membership breaks.
        let mut forged = lo.clone();
        forged.x_tildes[0][(0, 1)] = QC::one();
        assert!(verify_lower_certificate(&forged, &inst).is_err());

        // Deflate the claimed upper bound: the dual block goes indefinite.
        let mut forged = hi.clone();
        forged.bound -= Rat::new(num_bigint::BigInt::one(), num_bigint::BigInt::from(100));
        assert!(verify_upper_certificate(&forged, &inst).is_err());

        // Cross-instance use is refused outright.
        let other = ExactInstance::new(&data, 7).unwrap();
        assert!(verify_lower_certificate(&lo, &other).is_err());
    }

    /// The exact constraint maps agree entry for entry with the float
    /// tester maps on rational inputs, and are exactly idempotent.
    #[test]
    fn exact_maps_match_float_maps_and_are_projectors() {
        let registry = crate::testers::tester_registry(2, 2, 2).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        let g = CMat::from_fn(16, 16, |_, _| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let gq = rationalize(&g, 3).unwrap();
        for class in [
            StrategyClass::Parallel,
            StrategyClass::sequential_canonical(2),
            StrategyClass::Sequential { order: vec![2, 1] },
            StrategyClass::GeneralIco,
        ] {
            let map = TesterMap::for_class(&class, &registry).unwrap();
            let exact = exact_apply_map(&map, &gq);
            // Exactly idempotent over the rationals.
            assert_eq!(exact_apply_map(&map, &exact), exact, "{}", class.label());
            // Entrywise agreement with the float kernel on the same input.
            let float = map
                .apply(&crate::spaces::LabeledOperator {
                    registry: registry.clone(),
                    data: gq.approx(),
                })
                .unwrap();
            let diff = exact.approx().sub(&float.data).max_abs();
            assert!(diff < 1e-12, "{}: exact vs float defect {diff:.3e}", class.label());
        }
    }
}
