//! Prior densities, quadrature, and prior-averaged channel data.
//!
//! The Bayesian figure of merit depends on the channel family only through
//! three averages over the prior `p(θ)`: the averaged Choi operator
//! `C̄ = ∫dθ p(θ) C_θ`, its first-moment companion `θC̄ = ∫dθ p(θ) θ C_θ`,
//! and the scalar second moment `m2 = ∫dθ p(θ) θ²`.  From those this module
//! derives the generator `H` solving `θC̄ + HC̄ + C̄H = 0` on `C̄`'s support
//! and the ensemble factor `Φ` with `ΦΦ† = C̄`, which together parametrize
//! every bound computed downstream.
//!
//! Supported families: uniform, (truncated) Gaussian, Gaussian mixture, and
//! Beta on a configurable window.  Smooth families integrate with
//! Gauss–Legendre; the Beta family uses Gauss–Jacobi so its possibly
//! singular endpoint factors are absorbed exactly into the quadrature
//! weights.  Every average carries a node-doubling convergence certificate.

use crate::channels::{tensor_power_choi, ChannelSpec};
use crate::error::{Error, Result};
use crate::linalg::{herm_eig, tridiag_eig_first, C64, CMat, RANK_TOL};
use crate::spaces::{solve_sld, LabeledOperator};
use serde_json::{json, Value};
use std::f64::consts::PI;

/// Default quadrature node count; integrands are smooth once the density's
/// weight is absorbed, so convergence is spectral long before this.
pub const DEFAULT_NODES: usize = 201;

/// Default prior window `[−π, π)` for the periodic phase.
pub const DEFAULT_SUPPORT: (f64, f64) = (-PI, PI);

/// Maximum allowed change of `C̄`/`θC̄` entries under node doubling.
pub const QUADRATURE_CONVERGENCE_TOL: f64 = 1e-8;

/// Gaussian components are truncated at ±10 standard deviations.
const GAUSSIAN_TAIL_SIGMAS: f64 = 10.0;

// ═══════════════════════════════════════════════════════════════════
// Quadrature rules
// ═══════════════════════════════════════════════════════════════════

/// Gauss–Legendre nodes and weights on `[a, b]`.
///
/// Roots of the Legendre polynomial `P_n` found by Newton iteration from
/// the Chebyshev-like initial guess; exact for polynomials of degree
/// `≤ 2n−1`.  Fully deterministic.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1 && b > a, "need n ≥ 1 and b > a");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and P_{n−1} by the three-term recurrence.
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // Map [−1,1] → [a,b]; ascending node order.
    nodes.reverse();
    weights.reverse();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    for i in 0..n {
        nodes[i] = mid + half * nodes[i];
        weights[i] *= half;
    }
    (nodes, weights)
}

/// Gauss–Jacobi nodes and weights on `[−1, 1]` for the weight function
/// `(1−x)^α (1+x)^β`, `α, β > −1`:  `Σ w_i f(x_i) ≈ ∫ (1−x)^α(1+x)^β f`.
///
/// Golub–Welsch: nodes are the eigenvalues of the symmetric tridiagonal
/// Jacobi matrix built from the three-term recurrence, and each weight is
/// `μ_0·v²` for the first component `v` of the matching eigenvector, with
/// `μ_0 = 2^{α+β+1} B(α+1, β+1)` the weight's total mass.  Deterministic
/// through the fixed-sweep eigensolver.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(alpha > -1.0 && beta > -1.0) {
        return Err(Error::config("Gauss–Jacobi requires α, β > −1"));
    }
    assert!(n >= 1);
    let s = alpha + beta;
    let mut diag = vec![0.0f64; n];
    let mut off = vec![0.0f64; n.saturating_sub(1)];
    diag[0] = (beta - alpha) / (s + 2.0);
    for k in 1..n {
        let kf = k as f64;
        let denom = (2.0 * kf + s) * (2.0 * kf + s + 2.0);
        diag[k] = if alpha == beta { 0.0 } else { (beta * beta - alpha * alpha) / denom };
        // Squared off-diagonal β_k of the monic recurrence.
        let b2 = if k == 1 {
            4.0 * (alpha + 1.0) * (beta + 1.0) / ((s + 2.0) * (s + 2.0) * (s + 3.0))
        } else {
            4.0 * kf * (kf + alpha) * (kf + beta) * (kf + s)
                / ((2.0 * kf + s) * (2.0 * kf + s) * (2.0 * kf + s + 1.0) * (2.0 * kf + s - 1.0))
        };
        off[k - 1] = b2.sqrt();
    }
    let (vals, first) = tridiag_eig_first(&diag, &off)?;
    let mu0 = 2f64.powf(s + 1.0)
        * (ln_gamma(alpha + 1.0) + ln_gamma(beta + 1.0) - ln_gamma(s + 2.0)).exp();
    let mut out: Vec<(f64, f64)> =
        (0..n).map(|k| (vals[k], mu0 * first[k] * first[k])).collect();
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok((out.iter().map(|p| p.0).collect(), out.iter().map(|p| p.1).collect()))
}

/// Natural logarithm of the Gamma function (Lanczos approximation, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = 0.999_999_999_999_809_93;
    for (i, &c) in COEFFS.iter().enumerate() {
        a += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

// ═══════════════════════════════════════════════════════════════════
// Priors
// ═══════════════════════════════════════════════════════════════════

/// Prior family over the phase parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorFamily {
    /// Flat density on the support window.
    Uniform,
    /// Gaussian with mean `μ` and standard deviation `Δ`, truncated to
    /// `[μ−10Δ, μ+10Δ]` intersected with the window and renormalized.
    Gaussian {
        /// Mean.
        mu: f64,
        /// Standard deviation (> 0).
        delta: f64,
    },
    /// Weighted Gaussian mixture `p(θ) ∝ Σ w_i f(θ|μ_i, Δ_i)`, renormalized
    /// over the window.
    GaussianMixture {
        /// `(weight, μ, Δ)` per component; weights nonnegative, not all 0.
        components: Vec<(f64, f64, f64)>,
    },
    /// Beta density `p(θ) ∝ u^{a−1}(1−u)^{b−1}` with `u = (θ−lo)/(hi−lo)`.
    Beta {
        /// First shape parameter (> 0).
        a: f64,
        /// Second shape parameter (> 0).
        b: f64,
    },
}

/// A normalized prior with its quadrature rule.
///
/// Construction precomputes two *density-absorbed* rules (base and doubled
/// node count): pairs `(θ_i, ω_i)` with `∫p(θ)g(θ)dθ ≈ Σ ω_i g(θ_i)` for
/// smooth `g` and `Σ ω_i = 1` exactly.
#[derive(Debug, Clone)]
pub struct Prior {
    /// Density family.
    pub family: PriorFamily,
    /// Declared support window `(lo, hi)`.
    pub support: (f64, f64),
    /// Quadrature node count.
    pub nodes: usize,
    /// Cached reciprocal normalization for [`Self::pdf`].
    norm: f64,
    /// Density-absorbed rule at `nodes` points.
    rule: (Vec<f64>, Vec<f64>),
    /// Density-absorbed rule at `2·nodes+1` points (convergence checks).
    rule_doubled: (Vec<f64>, Vec<f64>),
}

impl Prior {
    fn build(family: PriorFamily, support: (f64, f64), nodes: usize) -> Result<Self> {
        let mut p = Prior {
            family,
            support,
            nodes,
            norm: 1.0,
            rule: (vec![], vec![]),
            rule_doubled: (vec![], vec![]),
        };
        p.finalize()?;
        Ok(p)
    }

    /// Uniform prior on `[−π, π)` with the default quadrature.
    pub fn uniform() -> Self {
        Prior::build(PriorFamily::Uniform, DEFAULT_SUPPORT, DEFAULT_NODES)
            .expect("static preset")
    }

    /// Truncated Gaussian prior on the default window.
    pub fn gaussian(mu: f64, delta: f64) -> Result<Self> {
        Prior::build(PriorFamily::Gaussian { mu, delta }, DEFAULT_SUPPORT, DEFAULT_NODES)
    }

    /// Gaussian mixture prior on the default window.
    pub fn gaussian_mixture(components: Vec<(f64, f64, f64)>) -> Result<Self> {
        Prior::build(
            PriorFamily::GaussianMixture { components },
            DEFAULT_SUPPORT,
            DEFAULT_NODES,
        )
    }

    /// Beta prior on the default window.
    pub fn beta(a: f64, b: f64) -> Result<Self> {
        Prior::build(PriorFamily::Beta { a, b }, DEFAULT_SUPPORT, DEFAULT_NODES)
    }

    /// Replace the support window.
    pub fn with_support(mut self, lo: f64, hi: f64) -> Result<Self> {
        self.support = (lo, hi);
        self.finalize()?;
        Ok(self)
    }

    /// Replace the quadrature node count.
    pub fn with_nodes(mut self, nodes: usize) -> Result<Self> {
        self.nodes = nodes;
        self.finalize()?;
        Ok(self)
    }

    /// Validate parameters and precompute normalization and rules.
    fn finalize(&mut self) -> Result<()> {
        let (lo, hi) = self.support;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::config(format!("invalid prior support [{lo}, {hi}]")));
        }
        if self.nodes < 2 {
            return Err(Error::config("quadrature needs at least 2 nodes"));
        }
        match &self.family {
            PriorFamily::Uniform => {}
            PriorFamily::Gaussian { delta, .. } => {
                if *delta <= 0.0 {
                    return Err(Error::config(format!("Gaussian Δ={delta} must be positive")));
                }
            }
            PriorFamily::GaussianMixture { components } => {
                if components.is_empty() {
                    return Err(Error::config("empty Gaussian mixture"));
                }
                for &(w, _, d) in components {
                    if w < 0.0 || d <= 0.0 {
                        return Err(Error::config(
                            "mixture needs nonnegative weights and positive Δ",
                        ));
                    }
                }
                if components.iter().map(|c| c.0).sum::<f64>() <= 0.0 {
                    return Err(Error::config("mixture weights sum to zero"));
                }
            }
            PriorFamily::Beta { a, b } => {
                if *a <= 0.0 || *b <= 0.0 {
                    return Err(Error::config(format!("Beta shapes a={a}, b={b} must be > 0")));
                }
            }
        }
        self.rule = self.absorbed_rule(self.nodes)?;
        self.rule_doubled = self.absorbed_rule(2 * self.nodes + 1)?;
        // pdf normalization: exact Beta function for the Beta family (its
        // quadrature never evaluates the density), quadrature mass for the
        // Gauss–Legendre families.
        self.norm = match &self.family {
            PriorFamily::Beta { a, b } => {
                let ln_b = ln_gamma(*a) + ln_gamma(*b) - ln_gamma(a + b);
                1.0 / ((hi - lo) * ln_b.exp())
            }
            _ => {
                let (elo, ehi) = self.effective_support()?;
                let (x, w) = gauss_legendre(self.nodes, elo, ehi);
                let z: f64 =
                    x.iter().zip(&w).map(|(&t, &wt)| wt * self.unnormalized(t)).sum();
                if !(z.is_finite() && z > 0.0) {
                    return Err(Error::config(format!(
                        "prior normalization failed (Z = {z})"
                    )));
                }
                1.0 / z
            }
        };
        Ok(())
    }

    /// Density-absorbed rule at an arbitrary node count.
    fn absorbed_rule(&self, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let (lo, hi) = self.support;
        match &self.family {
            PriorFamily::Beta { a, b } => {
                // u = (1+x)/2 maps the Jacobi weight (1−x)^{b−1}(1+x)^{a−1}
                // onto u^{a−1}(1−u)^{b−1}; constants cancel on normalizing.
                let (x, w) = gauss_jacobi(n, b - 1.0, a - 1.0)?;
                let total: f64 = w.iter().sum();
                let theta: Vec<f64> =
                    x.iter().map(|&xi| lo + (hi - lo) * 0.5 * (1.0 + xi)).collect();
                let omega: Vec<f64> = w.iter().map(|&wi| wi / total).collect();
                Ok((theta, omega))
            }
            _ => {
                let (elo, ehi) = self.effective_support()?;
                let (x, w) = gauss_legendre(n, elo, ehi);
                let raw: Vec<f64> =
                    x.iter().zip(&w).map(|(&t, &wt)| wt * self.unnormalized(t)).collect();
                let total: f64 = raw.iter().sum();
                if !(total.is_finite() && total > 0.0) {
                    return Err(Error::config("prior has no mass on its support"));
                }
                Ok((x, raw.iter().map(|&r| r / total).collect()))
            }
        }
    }

    /// Integration domain: the window, shrunk to the ±10Δ envelope for
    /// Gaussian families so narrow priors keep full node resolution.
    pub fn effective_support(&self) -> Result<(f64, f64)> {
        let (lo, hi) = self.support;
        let clip = |a: f64, b: f64| -> Result<(f64, f64)> {
            let (l, h) = (a.max(lo), b.min(hi));
            if h <= l {
                return Err(Error::config(
                    "prior mass lies entirely outside the support window",
                ));
            }
            Ok((l, h))
        };
        match &self.family {
            PriorFamily::Uniform | PriorFamily::Beta { .. } => Ok((lo, hi)),
            PriorFamily::Gaussian { mu, delta } => {
                clip(mu - GAUSSIAN_TAIL_SIGMAS * delta, mu + GAUSSIAN_TAIL_SIGMAS * delta)
            }
            PriorFamily::GaussianMixture { components } => {
                let a = components
                    .iter()
                    .map(|&(_, m, d)| m - GAUSSIAN_TAIL_SIGMAS * d)
                    .fold(f64::INFINITY, f64::min);
                let b = components
                    .iter()
                    .map(|&(_, m, d)| m + GAUSSIAN_TAIL_SIGMAS * d)
                    .fold(f64::NEG_INFINITY, f64::max);
                clip(a, b)
            }
        }
    }

    /// Unnormalized density (already truncated for Gaussian families).
    fn unnormalized(&self, theta: f64) -> f64 {
        fn gauss(theta: f64, mu: f64, delta: f64) -> f64 {
            if (theta - mu).abs() > GAUSSIAN_TAIL_SIGMAS * delta {
                return 0.0;
            }
            let z = (theta - mu) / delta;
            (-0.5 * z * z).exp() / (delta * (2.0 * PI).sqrt())
        }
        match &self.family {
            PriorFamily::Uniform => 1.0,
            PriorFamily::Gaussian { mu, delta } => gauss(theta, *mu, *delta),
            PriorFamily::GaussianMixture { components } => {
                components.iter().map(|&(w, m, d)| w * gauss(theta, m, d)).sum()
            }
            PriorFamily::Beta { a, b } => {
                let (lo, hi) = self.support;
                let u = (theta - lo) / (hi - lo);
                if u <= 0.0 || u >= 1.0 {
                    // Integrable endpoints; quadrature never lands here.
                    if (*a - 1.0).abs() < 1e-15 && (*b - 1.0).abs() < 1e-15 {
                        return 1.0;
                    }
                    return 0.0;
                }
                u.powf(a - 1.0) * (1.0 - u).powf(b - 1.0)
            }
        }
    }

    /// Normalized density at θ; errors outside the declared support.
    pub fn pdf(&self, theta: f64) -> Result<f64> {
        let (lo, hi) = self.support;
        if theta < lo || theta > hi {
            return Err(Error::config(format!(
                "θ = {theta} outside prior support [{lo}, {hi}]"
            )));
        }
        Ok(self.unnormalized(theta) * self.norm)
    }

    /// Density-absorbed quadrature `(θ_i, ω_i)`: for smooth `g`,
    /// `∫p(θ)g(θ)dθ ≈ Σ ω_i g(θ_i)`, and `Σ ω_i = 1` exactly.
    pub fn nodes_weights(&self) -> (Vec<f64>, Vec<f64>) {
        self.rule.clone()
    }

    /// The density-absorbed rule at `2·nodes+1` points, for convergence
    /// certificates.
    pub fn nodes_weights_doubled(&self) -> (Vec<f64>, Vec<f64>) {
        self.rule_doubled.clone()
    }

    /// Prior second moment `m2 = ∫ p(θ) θ² dθ` (doubled-rule quadrature).
    pub fn second_moment(&self) -> f64 {
        let (x, w) = &self.rule_doubled;
        x.iter().zip(w).map(|(&t, &wt)| wt * t * t).sum()
    }

    /// Serialize to the prior-spec JSON schema.
    pub fn to_json(&self) -> Value {
        let mut v = match &self.family {
            PriorFamily::Uniform => json!({"family": "uniform"}),
            PriorFamily::Gaussian { mu, delta } => {
                json!({"family": "gaussian", "mu": mu, "delta": delta})
            }
            PriorFamily::GaussianMixture { components } => {
                let comps: Vec<Value> = components
                    .iter()
                    .map(|&(w, m, d)| json!({"weight": w, "mu": m, "delta": d}))
                    .collect();
                json!({"family": "gaussian_mixture", "components": comps})
            }
            PriorFamily::Beta { a, b } => json!({"family": "beta", "a": a, "b": b}),
        };
        v["support"] = json!([self.support.0, self.support.1]);
        v["nodes"] = json!(self.nodes);
        v
    }

    /// Parse the prior-spec JSON schema.
    pub fn from_json(v: &Value) -> Result<Self> {
        let family = v
            .get("family")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::config("prior spec missing string field 'family'"))?;
        let get = |name: &str| -> Result<f64> {
            v.get(name)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::config(format!("prior spec missing numeric '{name}'")))
        };
        let fam = match family {
            "uniform" => PriorFamily::Uniform,
            "gaussian" => PriorFamily::Gaussian { mu: get("mu")?, delta: get("delta")? },
            "gaussian_mixture" => {
                let comps = v
                    .get("components")
                    .and_then(Value::as_array)
                    .ok_or_else(|| Error::config("mixture needs 'components' array"))?;
                let components = comps
                    .iter()
                    .map(|c| -> Result<(f64, f64, f64)> {
                        let f = |n: &str| {
                            c.get(n).and_then(Value::as_f64).ok_or_else(|| {
                                Error::config(format!("mixture component missing '{n}'"))
                            })
                        };
                        Ok((f("weight")?, f("mu")?, f("delta")?))
                    })
                    .collect::<Result<_>>()?;
                PriorFamily::GaussianMixture { components }
            }
            "beta" => PriorFamily::Beta { a: get("a")?, b: get("b")? },
            other => return Err(Error::config(format!("unknown prior family '{other}'"))),
        };
        let support = match v.get("support") {
            None => DEFAULT_SUPPORT,
            Some(s) => {
                let arr = s
                    .as_array()
                    .filter(|a| a.len() == 2)
                    .ok_or_else(|| Error::config("prior support must be [lo, hi]"))?;
                let lo = arr[0].as_f64().ok_or_else(|| Error::config("non-numeric support"))?;
                let hi = arr[1].as_f64().ok_or_else(|| Error::config("non-numeric support"))?;
                (lo, hi)
            }
        };
        let nodes = match v.get("nodes") {
            None => DEFAULT_NODES,
            Some(n) => n
                .as_u64()
                .ok_or_else(|| Error::config("prior nodes must be a positive integer"))?
                as usize,
        };
        Prior::build(fam, support, nodes)
    }
}

// ═══════════════════════════════════════════════════════════════════
// Averaged channel data
// ═══════════════════════════════════════════════════════════════════

/// How many ensemble columns `q` to keep in the factorization `C̄ = ΦΦ†`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QPolicy {
    /// Minimal choice `q = rank(C̄)` (default).
    #[default]
    Rank,
    /// Explicit `q`; must equal the rank — zero-padding `Φ` is rejected
    /// because larger `q` is realized downstream by enlarging `h`, never by
    /// degenerate ensemble columns.
    Fixed(usize),
}

/// Everything the bound SDPs need from a channel–prior pair.
#[derive(Debug, Clone)]
pub struct AveragedData {
    /// Averaged Choi operator `C̄` (Hermitian PSD).
    pub c_bar: LabeledOperator,
    /// First-moment average `θC̄` (Hermitian).
    pub theta_c_bar: LabeledOperator,
    /// Prior second moment `∫p(θ)θ²dθ`.
    pub m2: f64,
    /// Generator solving `θC̄ + HC̄ + C̄H = 0` on `C̄`'s support.
    pub h: LabeledOperator,
    /// Residual of that generator equation (Frobenius norm).
    pub h_residual: f64,
    /// Ensemble factor with `ΦΦ† = C̄`, one column per kept eigenmode.
    pub phi: CMat,
    /// Number of ensemble columns (`= rank C̄` under the default policy).
    pub q: usize,
}

impl AveragedData {
    /// Average the channel over the prior and derive `H`, `Φ`, `q`.
    pub fn compute(
        spec: &ChannelSpec,
        n: usize,
        prior: &Prior,
        q_policy: QPolicy,
    ) -> Result<Self> {
        let (c_bar, theta_c_bar, m2) = average_choi(spec, n, prior)?;
        let (h, h_residual) = solve_h(&c_bar, &theta_c_bar)?;
        let (phi, q) = ensemble_factor(&c_bar, q_policy)?;
        Ok(AveragedData { c_bar, theta_c_bar, m2, h, h_residual, phi, q })
    }
}

/// Quadrature averages `(C̄, θC̄, m2)` of the `N`-copy Choi operator, with a
/// node-doubling convergence certificate: the run fails if doubling the
/// node count moves any matrix entry by more than
/// [`QUADRATURE_CONVERGENCE_TOL`].
pub fn average_choi(
    spec: &ChannelSpec,
    n: usize,
    prior: &Prior,
) -> Result<(LabeledOperator, LabeledOperator, f64)> {
    let coarse = weighted_choi_sums(spec, n, prior.nodes_weights())?;
    let fine = weighted_choi_sums(spec, n, prior.nodes_weights_doubled())?;
    let drift = fine
        .0
        .data
        .sub(&coarse.0.data)
        .max_abs()
        .max(fine.1.data.sub(&coarse.1.data).max_abs());
    if drift > QUADRATURE_CONVERGENCE_TOL {
        return Err(Error::numeric(format!(
            "quadrature not converged: node doubling moved entries by {drift:.3e}"
        )));
    }
    Ok(fine)
}

fn weighted_choi_sums(
    spec: &ChannelSpec,
    n: usize,
    (x, w): (Vec<f64>, Vec<f64>),
) -> Result<(LabeledOperator, LabeledOperator, f64)> {
    let mut c_sum: Option<LabeledOperator> = None;
    let mut t_sum: Option<CMat> = None;
    let mut m2 = 0.0f64;
    for (&theta, &wt) in x.iter().zip(&w) {
        if wt == 0.0 {
            continue;
        }
        let choi = tensor_power_choi(&spec.choi(theta)?, n)?;
        let weighted = choi.op.data.scale(C64::new(wt, 0.0));
        m2 += wt * theta * theta;
        match (&mut c_sum, &mut t_sum) {
            (Some(c), Some(t)) => {
                *t = t.add(&weighted.scale(C64::new(theta, 0.0)));
                c.data = c.data.add(&weighted);
            }
            _ => {
                t_sum = Some(weighted.scale(C64::new(theta, 0.0)));
                c_sum = Some(LabeledOperator {
                    registry: choi.op.registry.clone(),
                    data: weighted,
                });
            }
        }
    }
    let c = c_sum.ok_or_else(|| Error::numeric("prior has no mass on its support"))?;
    let registry = c.registry.clone();
    Ok((
        LabeledOperator { registry: registry.clone(), data: c.data.hermitize() },
        LabeledOperator { registry, data: t_sum.expect("set with c_sum").hermitize() },
        m2,
    ))
}

/// Solve `θC̄ + HC̄ + C̄H = 0` for Hermitian `H` on `C̄`'s support; returns
/// `(H, residual)` where the residual is the Frobenius norm of the part of
/// `θC̄` outside the support (the equation's unreachable component).
pub fn solve_h(
    c_bar: &LabeledOperator,
    theta_c_bar: &LabeledOperator,
) -> Result<(LabeledOperator, f64)> {
    let minus_half = LabeledOperator {
        registry: theta_c_bar.registry.clone(),
        data: theta_c_bar.data.scale(C64::new(-0.5, 0.0)),
    };
    let sld = solve_sld(c_bar, &minus_half)?;
    Ok((sld.s, sld.residual))
}

/// Factor `C̄ = ΦΦ†` with `Φ = [√λ_1 v_1, …, √λ_q v_q]` over the eigenpairs
/// above the rank tolerance, eigenvalues descending.
pub fn ensemble_factor(c_bar: &LabeledOperator, q_policy: QPolicy) -> Result<(CMat, usize)> {
    let (vals, vecs) = herm_eig(&c_bar.data)?;
    let lam_max = vals.first().copied().unwrap_or(0.0).max(0.0);
    let tol = RANK_TOL * lam_max;
    let rank = vals.iter().filter(|&&l| l > tol).count();
    if rank == 0 {
        return Err(Error::numeric("averaged Choi operator is numerically zero"));
    }
    let q = match q_policy {
        QPolicy::Rank => rank,
        QPolicy::Fixed(q) if q == rank => rank,
        QPolicy::Fixed(q) => {
            return Err(Error::config(format!(
                "q = {q} requested but rank(C̄) = {rank}; zero-padded ensemble columns are \
                 rejected (a larger effective q is realized by enlarging h, and q < rank \
                 cannot reproduce C̄)"
            )));
        }
    };
    let d = c_bar.data.rows;
    let phi = CMat::from_fn(d, q, |r, c| vecs[(r, c)] * vals[c].sqrt());
    Ok((phi, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qr;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(5, -1.0, 1.0);
        let quad: f64 = x.iter().zip(&w).map(|(&t, &wt)| wt * t * t).sum();
        assert!((quad - 2.0 / 3.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);

        let (x, w) = gauss_legendre(30, 0.0, PI / 2.0);
        let quad: f64 = x.iter().zip(&w).map(|(&t, &wt)| wt * t.cos()).sum();
        assert!((quad - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gauss_jacobi_reduces_to_legendre_and_absorbs_singular_weights() {
        let (xj, wj) = gauss_jacobi(15, 0.0, 0.0).unwrap();
        let (xl, wl) = gauss_legendre(15, -1.0, 1.0);
        for i in 0..15 {
            assert!((xj[i] - xl[i]).abs() < 1e-11);
            assert!((wj[i] - wl[i]).abs() < 1e-11);
        }
        // ∫(1−x)^{−1/2} dx over [−1,1] = 2√2: weight fully absorbed.
        let (_, w) = gauss_jacobi(20, -0.5, 0.0).unwrap();
        assert!((w.iter().sum::<f64>() - 2.0 * 2.0f64.sqrt()).abs() < 1e-12);
        // ∫(1−x)^{−1/2}·x dx = 2√2/3 (substitute s = 1−x).
        let (x, w) = gauss_jacobi(20, -0.5, 0.0).unwrap();
        let m1: f64 = x.iter().zip(&w).map(|(&t, &wt)| wt * t).sum();
        assert!((m1 - 2.0 * 2.0f64.sqrt() / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ln_gamma_matches_known_values() {
        assert!((ln_gamma(4.0) - 6.0f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-12);
        assert!((ln_gamma(1.5) - (PI.sqrt() / 2.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_prior_density_and_moment() {
        let p = Prior::uniform();
        assert!((p.pdf(0.3).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-14);
        assert!((p.second_moment() - PI * PI / 3.0).abs() < 1e-12);
        assert!(p.pdf(4.0).is_err());
    }

    #[test]
    fn gaussian_prior_matches_textbook_density_on_wide_window() {
        let p = Prior::gaussian(0.0, 1.0).unwrap().with_support(-20.0, 20.0).unwrap();
        assert!((p.pdf(0.0).unwrap() - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-8);
        // m2 = Δ² + μ² when truncation is negligible.
        let q = Prior::gaussian(0.3, 0.5).unwrap().with_support(-20.0, 20.0).unwrap();
        assert!((q.second_moment() - (0.25 + 0.09)).abs() < 1e-9);
    }

    #[test]
    fn narrow_gaussian_keeps_quadrature_resolution() {
        // Δ = 0.02 on the default window: effective support shrinks to
        // ±10Δ, so the absorbed weights still sum to 1 with full accuracy.
        let p = Prior::gaussian(0.0, 0.02).unwrap();
        let (_, w) = p.nodes_weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((p.second_moment() - 4e-4).abs() < 1e-10);
    }

    #[test]
    fn beta_priors_match_closed_form_moments() {
        // Beta(1,1) is the uniform density.
        let flat = Prior::beta(1.0, 1.0).unwrap();
        assert!((flat.pdf(1.2).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-12);
        assert!((flat.second_moment() - PI * PI / 3.0).abs() < 1e-10);

        // θ = 2πu − π ⇒ E[θ²] = 4π²E[u²] − 4π²E[u] + π², exactly integrated
        // by Gauss–Jacobi even for singular shapes (a < 1).
        for (a, b) in [(2.0, 2.0), (1.5, 2.0), (0.7, 2.0), (0.2, 2.0)] {
            let p = Prior::beta(a, b).unwrap();
            let eu = a / (a + b);
            let eu2 = a * (a + 1.0) / ((a + b) * (a + b + 1.0));
            let want = 4.0 * PI * PI * eu2 - 4.0 * PI * PI * eu + PI * PI;
            assert!(
                (p.second_moment() - want).abs() < 1e-9,
                "beta({a},{b}): {} vs {want}",
                p.second_moment()
            );
        }

        // Density normalization against Γ.
        let (a, b) = (1.5, 2.0);
        let p = Prior::beta(a, b).unwrap();
        let u = 0.3f64;
        let theta = 2.0 * PI * u - PI;
        let ln_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
        let want_pdf =
            u.powf(a - 1.0) * (1.0 - u).powf(b - 1.0) / ((2.0 * PI) * ln_beta.exp());
        assert!((p.pdf(theta).unwrap() - want_pdf).abs() < 1e-12);
    }

    #[test]
    fn mixture_preset_is_normalized_and_nonnegative() {
        // w·f(−π/2, 1) + (1−w)·f(π/2, 2) on the default window.
        let w = 0.4;
        let p = Prior::gaussian_mixture(vec![(w, -PI / 2.0, 1.0), (1.0 - w, PI / 2.0, 2.0)])
            .unwrap();
        let (x, wts) = p.nodes_weights();
        assert!((wts.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(x.iter().all(|&t| p.pdf(t).unwrap() >= 0.0));
        assert!(wts.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn invalid_priors_are_rejected() {
        assert!(Prior::gaussian(0.0, 0.0).is_err());
        assert!(Prior::beta(0.0, 1.0).is_err());
        assert!(Prior::gaussian_mixture(vec![]).is_err());
        assert!(Prior::gaussian_mixture(vec![(-1.0, 0.0, 1.0)]).is_err());
        assert!(Prior::uniform().with_support(1.0, 1.0).is_err());
        // Gaussian mass entirely outside the window.
        assert!(Prior::gaussian(100.0, 0.1).is_err());
    }

    #[test]
    fn prior_json_round_trip() {
        let priors = [
            Prior::uniform(),
            Prior::gaussian(0.5, 2.0).unwrap(),
            Prior::gaussian_mixture(vec![(0.3, -1.0, 1.0), (0.7, 1.0, 2.0)]).unwrap(),
            Prior::beta(1.2, 2.0).unwrap().with_nodes(301).unwrap(),
        ];
        for p in &priors {
            let v = p.to_json();
            let back = Prior::from_json(&v).unwrap();
            assert_eq!(back.family, p.family);
            assert_eq!(back.support, p.support);
            assert_eq!(back.nodes, p.nodes);
        }
    }

    // ═══ averaged data ═══

    #[test]
    fn phase_channel_uniform_average_matches_analytic_integrals() {
        let (c_bar, t_bar, m2) =
            average_choi(&ChannelSpec::unitary(), 1, &Prior::uniform()).unwrap();
        // Off-diagonal phases average to zero: C̄ = |00⟩⟨00| + |11⟩⟨11|.
        let expected = CMat::diag(&[1.0, 0.0, 0.0, 1.0]);
        assert!(c_bar.data.sub(&expected).max_abs() < 1e-10);
        // ∫θ e^{−iθ} dθ/(2π) = −i on the (00,11) entry.
        assert!((t_bar.data[(0, 3)] - C64::new(0.0, -1.0)).norm() < 1e-10);
        assert!((t_bar.data[(0, 3)].norm() - 1.0).abs() < 1e-10);
        assert!((m2 - PI * PI / 3.0).abs() < 1e-10);
    }

    #[test]
    fn flagship_uniform_average_matches_closed_form() {
        let (c_bar, t_bar, _) =
            average_choi(&ChannelSpec::theorem3(), 1, &Prior::uniform()).unwrap();
        // C̄ = diag(η+(1−η)γ, (1−η)(1−γ), (1−η)+ηγ, η(1−γ)) at η=1/2, γ=7/10.
        assert!(c_bar.data.sub(&CMat::diag(&[0.85, 0.15, 0.85, 0.15])).max_abs() < 1e-10);
        // θC̄ = −i√(1−γ)[η|00⟩⟨11| + (1−η)|01⟩⟨10|] + h.c.
        let amp = 0.5 * 0.3f64.sqrt();
        assert!((t_bar.data[(0, 3)] - C64::new(0.0, -amp)).norm() < 1e-10);
        assert!((t_bar.data[(1, 2)] - C64::new(0.0, -amp)).norm() < 1e-10);
        assert!((t_bar.data[(3, 0)] - C64::new(0.0, amp)).norm() < 1e-10);
        assert!(t_bar.data[(0, 1)].norm() < 1e-10);
        assert!(t_bar.data[(0, 2)].norm() < 1e-10);
    }

    #[test]
    fn beta_prior_average_passes_convergence_certificate() {
        // Singular-density Beta shapes converge spectrally under the
        // weight-absorbing rule.
        for a in [0.2, 0.7, 1.5] {
            let p = Prior::beta(a, 2.0).unwrap();
            let res = average_choi(&ChannelSpec::theorem3(), 1, &p);
            assert!(res.is_ok(), "beta({a},2) failed: {:?}", res.err());
        }
    }

    #[test]
    fn solve_h_examples() {
        let reg = crate::spaces::SpaceRegistry::new(vec![("Q", 2)]).unwrap();
        let id = LabeledOperator::identity(reg.clone());
        let zero = LabeledOperator::new(reg.clone(), CMat::zeros(2, 2)).unwrap();
        let (h0, _) = solve_h(&id, &zero).unwrap();
        assert!(h0.data.max_abs() < 1e-14);

        let sz = LabeledOperator::new(reg, CMat::diag(&[1.0, -1.0])).unwrap();
        let (h1, _) = solve_h(&id, &sz).unwrap();
        assert!(h1.data.sub(&CMat::diag(&[-0.5, 0.5])).max_abs() < 1e-14);
    }

    #[test]
    fn phase_channel_generator_lives_on_support_with_half_modulus() {
        let data =
            AveragedData::compute(&ChannelSpec::unitary(), 1, &Prior::uniform(), QPolicy::Rank)
                .unwrap();
        // H has off-diagonal modulus 1/2 on the {|00⟩, |11⟩} block and
        // vanishes elsewhere.
        assert!((data.h.data[(0, 3)].norm() - 0.5).abs() < 1e-9);
        assert!(data.h.data[(1, 2)].norm() < 1e-9);
        assert!(data.h.data[(0, 1)].norm() < 1e-9);
        assert!(data.h_residual < 1e-8);
        assert_eq!(data.q, 2);
    }

    #[test]
    fn generator_equation_holds_for_flagship_copies() {
        for n in [1usize, 2] {
            let data = AveragedData::compute(
                &ChannelSpec::theorem3(),
                n,
                &Prior::uniform(),
                QPolicy::Rank,
            )
            .unwrap();
            let hc = data.h.data.matmul(&data.c_bar.data);
            let ch = data.c_bar.data.matmul(&data.h.data);
            let defect = data.theta_c_bar.data.add(&hc).add(&ch).fro_norm();
            assert!(defect < 1e-8, "N={n} generator defect {defect:.3e}");
            assert!(data.h_residual < 1e-8);
            // Flagship C̄ is full rank: q = d.
            assert_eq!(data.q, 4usize.pow(n as u32));
            // ΦΦ† = C̄.
            let recon = data.phi.matmul(&data.phi.adjoint());
            assert!(recon.sub(&data.c_bar.data).max_abs() < 1e-9);
        }
    }

    #[test]
    fn unitary_two_copies_has_binomial_rank() {
        let data =
            AveragedData::compute(&ChannelSpec::unitary(), 2, &Prior::uniform(), QPolicy::Rank)
                .unwrap();
        // C̄ = Σ_w v_w v_w† over Hamming sectors: rank N+1 = 3 with
        // eigenvalues {2, 1, 1} (binomial multiplicities).
        assert_eq!(data.q, 3);
        let (vals, _) = herm_eig(&data.c_bar.data).unwrap();
        assert!((vals[0] - 2.0).abs() < 1e-9);
        assert!((vals[1] - 1.0).abs() < 1e-9);
        assert!((vals[2] - 1.0).abs() < 1e-9);
        assert!(vals[3].abs() < 1e-9);
    }

    #[test]
    fn ensemble_factor_examples_and_policies() {
        let reg2 = crate::spaces::SpaceRegistry::new(vec![("Q", 2)]).unwrap();
        let (phi, q) = ensemble_factor(&LabeledOperator::identity(reg2), QPolicy::Rank).unwrap();
        assert_eq!(q, 2);
        assert!(phi.matmul(&phi.adjoint()).sub(&CMat::identity(2)).max_abs() < 1e-12);

        let reg4 = crate::spaces::SpaceRegistry::new(vec![("A", 2), ("B", 2)]).unwrap();
        let diag = LabeledOperator::new(reg4.clone(), CMat::diag(&[1.0, 0.0, 0.0, 1.0])).unwrap();
        let (phi, q) = ensemble_factor(&diag, QPolicy::Rank).unwrap();
        assert_eq!(q, 2);
        // Columns are the two supported basis vectors (up to phase).
        assert!((phi[(0, 0)].norm() - 1.0).abs() < 1e-12);
        assert!((phi[(3, 1)].norm() - 1.0).abs() < 1e-12);

        // Rank-5 synthetic 16×16.
        let mut rng = StdRng::seed_from_u64(7);
        let g = CMat::from_fn(16, 5, |_, _| {
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let psd = g.matmul(&g.adjoint());
        let reg16 = crate::spaces::SpaceRegistry::new(vec![("A", 4), ("B", 4)]).unwrap();
        let op = LabeledOperator::new(reg16, psd.clone()).unwrap();
        let (phi, q) = ensemble_factor(&op, QPolicy::Rank).unwrap();
        assert_eq!(q, 5);
        assert!(phi.matmul(&phi.adjoint()).sub(&psd).max_abs() < 1e-9);

        assert!(ensemble_factor(&op, QPolicy::Fixed(5)).is_ok());
        assert!(ensemble_factor(&op, QPolicy::Fixed(3)).is_err());
        assert!(ensemble_factor(&op, QPolicy::Fixed(7)).is_err());
    }

    #[test]
    fn averaging_respects_unitary_invariance_of_m2() {
        // m2 depends only on the prior, not the channel.
        let p = Prior::gaussian(0.0, 1.5).unwrap();
        let (_, _, m2a) = average_choi(&ChannelSpec::unitary(), 1, &p).unwrap();
        let (_, _, m2b) = average_choi(&ChannelSpec::theorem3(), 2, &p).unwrap();
        assert!((m2a - m2b).abs() < 1e-12);
        assert!((m2a - p.second_moment()).abs() < 1e-10);
    }

    #[test]
    fn haar_random_channel_average_passes_convergence_certificate() {
        let spec = ChannelSpec::random_composed(3);
        let (c_bar, t_bar, _) = average_choi(&spec, 1, &Prior::uniform()).unwrap();
        assert!(c_bar.is_hermitian(1e-12));
        assert!(t_bar.is_hermitian(1e-12));
        let (vals, _) = herm_eig(&c_bar.data).unwrap();
        assert!(vals.last().copied().unwrap() > -1e-10);
        // Q-R sanity on the dilation unitary reused by the channel.
        let (qm, _) = qr(&crate::channels::haar_unitary(8, 3));
        assert!(qm.adjoint().matmul(&qm).sub(&CMat::identity(8)).max_abs() < 1e-12);
    }
}
