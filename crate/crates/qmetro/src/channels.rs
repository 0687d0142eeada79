//! Parametrized channel representations.
//!
//! A [`ChannelSpec`] describes a one-parameter family of channels `E_θ`
//! through its Kraus operators; the only θ-dependent primitive is the phase
//! unitary with Kraus `e^{−iθσ_z/2}`, and noisy families arise by composing
//! it with constant channels.  The module converts specs to Choi operators
//! `E_θ = (id ⊗ E_θ)(|I⟩⟩⟨⟨I|)`, forms `N`-fold tensor powers on relabeled
//! subsystem pairs `I1,O1,…,IN,ON`, and generates Haar-random channels via
//! Stinespring dilation for census experiments.
//!
//! Conventions: the flagship noisy family is amplitude-damping ∘ bit-flip ∘
//! phase-unitary; composition lists are written in **application order**
//! (first stage acts first); transposes inside link products are taken in
//! the computational basis.

use crate::error::{Error, Result};
use crate::linalg::{herm_eig, C64, CMat};
use crate::spaces::{LabeledOperator, SpaceRegistry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

pub use crate::spaces::link_product;

/// Tolerance for Kraus completeness `Σ K†K = I`.
pub const KRAUS_COMPLETENESS_TOL: f64 = 1e-12;

/// Tolerance on the Choi operator's positivity and trace-preservation.
pub const CHOI_VALIDATION_TOL: f64 = 1e-10;

// ═══════════════════════════════════════════════════════════════════
// Channel specifications
// ═══════════════════════════════════════════════════════════════════

/// The channel family's structural kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelKind {
    /// Unitary `U_θ` with Kraus `e^{−iθσ_z/2} = diag(e^{−iθ/2}, e^{iθ/2})`.
    PhaseUnitary,
    /// Bit flip: Kraus `{√η·I, √(1−η)·σ_x}`.
    BitFlip {
        /// Probability of applying the identity branch, `0 ≤ η ≤ 1`.
        eta: f64,
    },
    /// Amplitude damping: Kraus `{diag(1, √(1−γ)), √γ·|0⟩⟨1|}`.
    AmplitudeDamping {
        /// Damping strength, `0 ≤ γ ≤ 1`.
        gamma: f64,
    },
    /// Composition of stages in application order (first acts first).
    Composition {
        /// Stages; input of the whole chain is stage 0's input.
        stages: Vec<ChannelKind>,
    },
    /// Haar-random qubit channel `ρ ↦ tr_aux[U(ρ ⊗ |0⟩⟨0|)U†]`.
    RandomStinespring {
        /// Seed for the Haar unitary (bit-reproducible).
        seed: u64,
        /// Ancilla dimension; 4 reaches every qubit channel, 1 is unitary.
        ancilla_dim: usize,
    },
    /// Explicit constant Kraus set.
    CustomKraus {
        /// Kraus operators, all of the same output×input shape.
        kraus: Vec<CMat>,
    },
}

/// A validated one-parameter channel family.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    /// Structural description.
    pub kind: ChannelKind,
    /// Input dimension.
    pub input_dim: usize,
    /// Output dimension.
    pub output_dim: usize,
}

impl ChannelKind {
    /// (input, output) dimensions, validating parameter ranges and
    /// composition chains.
    fn dims(&self) -> Result<(usize, usize)> {
        match self {
            ChannelKind::PhaseUnitary => Ok((2, 2)),
            ChannelKind::BitFlip { eta } => {
                if !(0.0..=1.0).contains(eta) {
                    return Err(Error::config(format!("bit-flip η={eta} outside [0,1]")));
                }
                Ok((2, 2))
            }
            ChannelKind::AmplitudeDamping { gamma } => {
                if !(0.0..=1.0).contains(gamma) {
                    return Err(Error::config(format!("damping γ={gamma} outside [0,1]")));
                }
                Ok((2, 2))
            }
            ChannelKind::Composition { stages } => {
                if stages.is_empty() {
                    return Err(Error::config("empty composition"));
                }
                let mut dims = stages[0].dims()?;
                for stage in &stages[1..] {
                    let (di, do_) = stage.dims()?;
                    if di != dims.1 {
                        return Err(Error::config(format!(
                            "composition chain mismatch: stage expects input {di}, got {}",
                            dims.1
                        )));
                    }
                    dims.1 = do_;
                }
                Ok(dims)
            }
            ChannelKind::RandomStinespring { ancilla_dim, .. } => {
                if *ancilla_dim == 0 {
                    return Err(Error::config("ancilla dimension must be ≥ 1"));
                }
                Ok((2, 2))
            }
            ChannelKind::CustomKraus { kraus } => {
                let first = kraus.first().ok_or_else(|| Error::config("empty Kraus set"))?;
                if first.rows == 0 || first.cols == 0 {
                    return Err(Error::config("zero-dimensional Kraus operator"));
                }
                for k in kraus {
                    if (k.rows, k.cols) != (first.rows, first.cols) {
                        return Err(Error::config("inconsistent Kraus shapes"));
                    }
                }
                Ok((first.cols, first.rows))
            }
        }
    }

    /// Kraus operators at parameter value θ.
    fn kraus(&self, theta: f64) -> Vec<CMat> {
        match self {
            ChannelKind::PhaseUnitary => {
                let mut u = CMat::zeros(2, 2);
                u[(0, 0)] = C64::from_polar(1.0, -theta / 2.0);
                u[(1, 1)] = C64::from_polar(1.0, theta / 2.0);
                vec![u]
            }
            ChannelKind::BitFlip { eta } => {
                let k1 = CMat::identity(2).scale(C64::new(eta.sqrt(), 0.0));
                let mut k2 = CMat::zeros(2, 2);
                k2[(0, 1)] = C64::new((1.0 - eta).sqrt(), 0.0);
                k2[(1, 0)] = C64::new((1.0 - eta).sqrt(), 0.0);
                vec![k1, k2]
            }
            ChannelKind::AmplitudeDamping { gamma } => {
                let k1 = CMat::diag(&[1.0, (1.0 - gamma).sqrt()]);
                let mut k2 = CMat::zeros(2, 2);
                k2[(0, 1)] = C64::new(gamma.sqrt(), 0.0);
                vec![k1, k2]
            }
            ChannelKind::Composition { stages } => {
                // Kraus of a composition: all ordered products, last stage
                // leftmost.
                let mut acc = stages[0].kraus(theta);
                for stage in &stages[1..] {
                    let ks = stage.kraus(theta);
                    let mut next = Vec::with_capacity(acc.len() * ks.len());
                    for k_outer in &ks {
                        for k_inner in &acc {
                            next.push(k_outer.matmul(k_inner));
                        }
                    }
                    acc = next;
                }
                acc
            }
            ChannelKind::RandomStinespring { seed, ancilla_dim } => {
                let anc = *ancilla_dim;
                let u = haar_unitary(2 * anc, *seed);
                // K_a[i,j] = U[(i,a),(j,0)] with system most significant.
                (0..anc)
                    .map(|a| {
                        CMat::from_fn(2, 2, |i, j| u[(i * anc + a, j * anc)])
                    })
                    .collect()
            }
            ChannelKind::CustomKraus { kraus } => kraus.clone(),
        }
    }
}

impl ChannelSpec {
    /// Validate and wrap a channel kind.
    pub fn new(kind: ChannelKind) -> Result<Self> {
        let (input_dim, output_dim) = kind.dims()?;
        Ok(ChannelSpec { kind, input_dim, output_dim })
    }

    /// Pure phase rotation `U_θ` — the noiseless unitary family.
    pub fn unitary() -> Self {
        ChannelSpec::new(ChannelKind::PhaseUnitary).expect("static preset")
    }

    /// Noisy flagship family: amplitude-damping(γ) ∘ bit-flip(η) ∘ `U_θ`.
    pub fn flagship(eta: f64, gamma: f64) -> Result<Self> {
        ChannelSpec::new(ChannelKind::Composition {
            stages: vec![
                ChannelKind::PhaseUnitary,
                ChannelKind::BitFlip { eta },
                ChannelKind::AmplitudeDamping { gamma },
            ],
        })
    }

    /// The hierarchy-separating preset: flagship with η = 1/2, γ = 7/10.
    pub fn theorem3() -> Self {
        ChannelSpec::flagship(0.5, 0.7).expect("static preset")
    }

    /// Haar-random qubit channel composed after the phase rotation,
    /// `E ∘ U_θ`, as used by the census over random channels.
    pub fn random_composed(seed: u64) -> Self {
        ChannelSpec::new(ChannelKind::Composition {
            stages: vec![
                ChannelKind::PhaseUnitary,
                ChannelKind::RandomStinespring { seed, ancilla_dim: 4 },
            ],
        })
        .expect("static preset")
    }

    /// Kraus operators at parameter θ.
    pub fn kraus(&self, theta: f64) -> Vec<CMat> {
        self.kind.kraus(theta)
    }

    /// Choi operator at parameter θ (see [`kraus_to_choi`]).
    pub fn choi(&self, theta: f64) -> Result<ChoiOperator> {
        kraus_to_choi(self, theta)
    }

    /// Serialize to the channel-spec JSON schema.
    pub fn to_json(&self) -> Value {
        kind_to_json(&self.kind)
    }

    /// Parse the channel-spec JSON schema, including the `"theorem3"` and
    /// `"unitary"` preset names.
    pub fn from_json(v: &Value) -> Result<Self> {
        ChannelSpec::new(kind_from_json(v)?)
    }
}

fn kind_to_json(kind: &ChannelKind) -> Value {
    match kind {
        ChannelKind::PhaseUnitary => json!({"kind": "phase_unitary"}),
        ChannelKind::BitFlip { eta } => json!({"kind": "bit_flip", "params": {"eta": eta}}),
        ChannelKind::AmplitudeDamping { gamma } => {
            json!({"kind": "amplitude_damping", "params": {"gamma": gamma}})
        }
        ChannelKind::Composition { stages } => {
            let stages: Vec<Value> = stages.iter().map(kind_to_json).collect();
            json!({"kind": "composition", "params": {"stages": stages}})
        }
        ChannelKind::RandomStinespring { seed, ancilla_dim } => {
            json!({"kind": "random_stinespring", "params": {"seed": seed, "ancilla_dim": ancilla_dim}})
        }
        ChannelKind::CustomKraus { kraus } => {
            let ks: Vec<Value> = kraus.iter().map(cmat_to_json).collect();
            json!({"kind": "custom_kraus", "kraus": ks})
        }
    }
}

fn kind_from_json(v: &Value) -> Result<ChannelKind> {
    let kind = v
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::config("channel spec missing string field 'kind'"))?;
    let params = v.get("params").cloned().unwrap_or_else(|| json!({}));
    let get_f64 = |name: &str| -> Result<f64> {
        params
            .get(name)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::config(format!("channel spec missing numeric param '{name}'")))
    };
    match kind {
        "phase_unitary" | "unitary" => Ok(ChannelKind::PhaseUnitary),
        "theorem3" => Ok(ChannelSpec::theorem3().kind),
        "bit_flip" => Ok(ChannelKind::BitFlip { eta: get_f64("eta")? }),
        "amplitude_damping" => Ok(ChannelKind::AmplitudeDamping { gamma: get_f64("gamma")? }),
        "composition" => {
            let stages = params
                .get("stages")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::config("composition needs params.stages array"))?;
            Ok(ChannelKind::Composition {
                stages: stages.iter().map(kind_from_json).collect::<Result<_>>()?,
            })
        }
        "random_stinespring" => {
            let seed = params
                .get("seed")
                .and_then(Value::as_u64)
                .ok_or_else(|| Error::config("random_stinespring needs integer param 'seed'"))?;
            let ancilla_dim = params.get("ancilla_dim").and_then(Value::as_u64).unwrap_or(4);
            Ok(ChannelKind::RandomStinespring { seed, ancilla_dim: ancilla_dim as usize })
        }
        "custom_kraus" => {
            let ks = v
                .get("kraus")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::config("custom_kraus needs 'kraus' array"))?;
            Ok(ChannelKind::CustomKraus {
                kraus: ks.iter().map(cmat_from_json).collect::<Result<_>>()?,
            })
        }
        other => Err(Error::config(format!("unknown channel kind '{other}'"))),
    }
}

/// Serialize a complex matrix as row-major `[re, im]` pairs.
pub fn cmat_to_json(m: &CMat) -> Value {
    let rows: Vec<Value> = (0..m.rows)
        .map(|r| {
            let row: Vec<Value> =
                (0..m.cols).map(|c| json!([m[(r, c)].re, m[(r, c)].im])).collect();
            Value::Array(row)
        })
        .collect();
    Value::Array(rows)
}

/// Parse a complex matrix from row-major `[re, im]` pairs.
pub fn cmat_from_json(v: &Value) -> Result<CMat> {
    let rows = v.as_array().ok_or_else(|| Error::config("matrix JSON must be an array"))?;
    let nrows = rows.len();
    let ncols = rows
        .first()
        .and_then(Value::as_array)
        .map(Vec::len)
        .ok_or_else(|| Error::config("matrix JSON must be an array of rows"))?;
    let mut m = CMat::zeros(nrows, ncols);
    for (r, row) in rows.iter().enumerate() {
        let row = row.as_array().filter(|a| a.len() == ncols).ok_or_else(|| {
            Error::config("matrix JSON rows must all have the same length")
        })?;
        for (c, entry) in row.iter().enumerate() {
            let pair = entry.as_array().filter(|a| a.len() == 2).ok_or_else(|| {
                Error::config("matrix entries must be [re, im] pairs")
            })?;
            let re = pair[0].as_f64().ok_or_else(|| Error::config("non-numeric entry"))?;
            let im = pair[1].as_f64().ok_or_else(|| Error::config("non-numeric entry"))?;
            m[(r, c)] = C64::new(re, im);
        }
    }
    Ok(m)
}

// ═══════════════════════════════════════════════════════════════════
// Choi operators
// ═══════════════════════════════════════════════════════════════════

/// Choi operator of `N` channel copies on subsystems `I1,O1,…,IN,ON`.
#[derive(Debug, Clone)]
pub struct ChoiOperator {
    /// PSD operator with `tr_O = I_I`.
    pub op: LabeledOperator,
    /// Number of channel copies.
    pub copies: usize,
}

/// Convert a channel spec to its Choi operator at parameter θ:
/// `E_θ[(i,o),(i′,o′)] = Σ_k K_k[o,i]·conj(K_k[o′,i′])` on registry
/// `(I1, O1)`.
///
/// Validates Kraus completeness, positivity, and trace preservation.
pub fn kraus_to_choi(spec: &ChannelSpec, theta: f64) -> Result<ChoiOperator> {
    let ks = spec.kraus(theta);
    let (di, do_) = (spec.input_dim, spec.output_dim);
    // Completeness: Σ K†K = I.
    let mut sum = CMat::zeros(di, di);
    for k in &ks {
        sum = sum.add(&k.adjoint().matmul(k));
    }
    let defect = sum.sub(&CMat::identity(di)).max_abs();
    if defect > KRAUS_COMPLETENESS_TOL {
        return Err(Error::config(format!(
            "Kraus set incomplete: ‖ΣK†K − I‖_max = {defect:.3e}"
        )));
    }
    let d = di * do_;
    let mut choi = CMat::zeros(d, d);
    for k in &ks {
        // Vectorized Kraus: v[(i,o)] = K[o,i].
        let v: Vec<C64> = (0..d).map(|idx| k[(idx % do_, idx / do_)]).collect();
        choi = choi.add(&CMat::outer(&v, &v));
    }
    let registry = SpaceRegistry::new(vec![("I1".to_string(), di), ("O1".to_string(), do_)])?;
    let op = LabeledOperator::new(registry, choi)?;
    validate_choi(&op, 1)?;
    Ok(ChoiOperator { op, copies: 1 })
}

/// Check positivity and `tr_O C = I_I` of a Choi operator.
fn validate_choi(op: &LabeledOperator, copies: usize) -> Result<()> {
    let (vals, _) = herm_eig(&op.data)?;
    let min = vals.last().copied().unwrap_or(0.0);
    if min < -CHOI_VALIDATION_TOL {
        return Err(Error::numeric(format!("Choi operator has eigenvalue {min:.3e}")));
    }
    let out_names: Vec<String> = (1..=copies).map(|k| format!("O{k}")).collect();
    let out_refs: Vec<&str> = out_names.iter().map(String::as_str).collect();
    let reduced = op.partial_trace(&out_refs)?;
    let defect = reduced.data.sub(&CMat::identity(reduced.data.rows)).max_abs();
    if defect > CHOI_VALIDATION_TOL {
        return Err(Error::numeric(format!(
            "channel not trace-preserving: ‖tr_O C − I‖_max = {defect:.3e}"
        )));
    }
    Ok(())
}

/// `N`-fold tensor power of a single-copy Choi operator, relabeling copy
/// `k`'s subsystems to `Ik, Ok` so the result lives on `I1,O1,…,IN,ON`.
pub fn tensor_power_choi(e: &ChoiOperator, n: usize) -> Result<ChoiOperator> {
    if e.copies != 1 {
        return Err(Error::shape("tensor_power_choi expects a single-copy Choi operator"));
    }
    if n == 0 {
        return Err(Error::config("tensor power requires N ≥ 1"));
    }
    let di = e.op.registry.dim(0);
    let do_ = e.op.registry.dim(1);
    let mut acc = e.op.clone();
    for k in 2..=n {
        let registry = SpaceRegistry::new(vec![
            (format!("I{k}"), di),
            (format!("O{k}"), do_),
        ])?;
        let copy = LabeledOperator::new(registry, e.op.data.clone())?;
        acc = acc.kron(&copy)?;
    }
    Ok(ChoiOperator { op: acc, copies: n })
}

// ═══════════════════════════════════════════════════════════════════
// Haar-random generation
// ═══════════════════════════════════════════════════════════════════

/// Haar-distributed `d×d` unitary from a seeded generator.
///
/// Standard-complex-Gaussian matrix (Box–Muller), Householder QR, then the
/// diagonal phase fix `Q ← Q·diag(r_ii/|r_ii|)` that makes the distribution
/// exactly Haar.  Fixed seeds give bit-identical output.
pub fn haar_unitary(d: usize, seed: u64) -> CMat {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut normals = move || -> (f64, f64) {
        // Box–Muller with u1 ∈ (0,1].
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let phi = 2.0 * std::f64::consts::PI * u2;
        (r * phi.cos(), r * phi.sin())
    };
    let g = CMat::from_fn(d, d, |_, _| {
        let (re, im) = normals();
        C64::new(re, im)
    });
    let (q, r) = crate::linalg::qr(&g);
    // Phase fix: multiply column i by r_ii/|r_ii|.
    let mut u = q;
    for i in 0..d {
        let rii = r[(i, i)];
        let phase = if rii.norm() > 0.0 { rii / rii.norm() } else { C64::new(1.0, 0.0) };
        for row in 0..d {
            u[(row, i)] *= phase;
        }
    }
    u
}

/// Seeded Haar-random qubit channel via Stinespring dilation with the
/// default ancilla dimension 4 (large enough for every qubit channel).
pub fn random_channel(seed: u64) -> ChannelSpec {
    ChannelSpec::new(ChannelKind::RandomStinespring { seed, ancilla_dim: 4 })
        .expect("static construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::link_product;

    fn identity_channel() -> ChannelSpec {
        ChannelSpec::new(ChannelKind::CustomKraus { kraus: vec![CMat::identity(2)] }).unwrap()
    }

    fn max_entangled_choi() -> CMat {
        let v = [1.0, 0.0, 0.0, 1.0].map(|x| C64::new(x, 0.0));
        CMat::outer(&v, &v)
    }

    #[test]
    fn identity_channel_choi_is_maximally_entangled() {
        let choi = identity_channel().choi(0.3).unwrap();
        assert!(choi.op.data.sub(&max_entangled_choi()).max_abs() < 1e-14);
        assert!((choi.op.trace().re - 2.0).abs() < 1e-14);
    }

    #[test]
    fn phase_unitary_at_zero_is_identity_choi() {
        let choi = ChannelSpec::unitary().choi(0.0).unwrap();
        assert!(choi.op.data.sub(&max_entangled_choi()).max_abs() < 1e-14);
    }

    #[test]
    fn full_damping_choi_has_rank_two_on_expected_sector() {
        let spec = ChannelSpec::new(ChannelKind::AmplitudeDamping { gamma: 1.0 }).unwrap();
        let choi = spec.choi(0.0).unwrap();
        // Support only on |i,o⟩ ∈ {|00⟩, |10⟩}: both inputs decay to |0⟩.
        let expected = CMat::diag(&[1.0, 0.0, 1.0, 0.0]);
        assert!(choi.op.data.sub(&expected).max_abs() < 1e-14);
        let (vals, _) = herm_eig(&choi.op.data).unwrap();
        assert_eq!(vals.iter().filter(|&&l| l > 1e-10).count(), 2);
        assert!((choi.op.trace().re - 2.0).abs() < 1e-14);
    }

    #[test]
    fn tensor_power_relabels_and_multiplies_trace() {
        let e = identity_channel().choi(0.0).unwrap();
        let one = tensor_power_choi(&e, 1).unwrap();
        assert!(one.op.data.sub(&e.op.data).max_abs() < 1e-15);

        let two = tensor_power_choi(&e, 2).unwrap();
        assert_eq!(two.copies, 2);
        let names: Vec<&str> = two.op.registry.names().collect();
        assert_eq!(names, ["I1", "O1", "I2", "O2"]);
        assert!((two.op.trace().re - 4.0).abs() < 1e-12);
        let (vals, _) = herm_eig(&two.op.data).unwrap();
        assert_eq!(vals.iter().filter(|&&l| l > 1e-10 * vals[0]).count(), 1);

        let three = tensor_power_choi(&ChannelSpec::theorem3().choi(0.7).unwrap(), 3).unwrap();
        assert!((three.op.trace().re - 8.0).abs() < 1e-10);
    }

    #[test]
    fn every_spec_yields_valid_choi() {
        let specs = [
            ChannelSpec::unitary(),
            ChannelSpec::theorem3(),
            ChannelSpec::new(ChannelKind::BitFlip { eta: 0.3 }).unwrap(),
            ChannelSpec::new(ChannelKind::AmplitudeDamping { gamma: 0.6 }).unwrap(),
            ChannelSpec::random_composed(17),
            random_channel(5),
        ];
        for spec in &specs {
            for &theta in &[-2.0, 0.0, 0.9] {
                let choi = spec.choi(theta).unwrap();
                // Construction validates PSD and trace preservation; spot
                // check the trace here.
                assert!((choi.op.trace().re - spec.input_dim as f64).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn flagship_without_noise_reduces_to_phase_unitary() {
        let noiseless = ChannelSpec::flagship(1.0, 0.0).unwrap();
        for &theta in &[-1.1, 0.4, 2.7] {
            let a = noiseless.choi(theta).unwrap();
            let b = ChannelSpec::unitary().choi(theta).unwrap();
            assert!(a.op.data.sub(&b.op.data).max_abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_ranges_are_validated() {
        assert!(ChannelSpec::new(ChannelKind::BitFlip { eta: 1.5 }).is_err());
        assert!(ChannelSpec::new(ChannelKind::AmplitudeDamping { gamma: -0.1 }).is_err());
        assert!(ChannelSpec::new(ChannelKind::Composition { stages: vec![] }).is_err());
        assert!(ChannelSpec::new(ChannelKind::CustomKraus { kraus: vec![] }).is_err());
        // Incomplete Kraus set caught at Choi conversion.
        let bad = ChannelSpec::new(ChannelKind::CustomKraus {
            kraus: vec![CMat::identity(2).scale(C64::new(0.5, 0.0))],
        })
        .unwrap();
        assert!(bad.choi(0.0).is_err());
    }

    #[test]
    fn haar_unitary_properties() {
        // d=1: a pure phase.
        let u1 = haar_unitary(1, 3);
        assert!((u1[(0, 0)].norm() - 1.0).abs() < 1e-12);

        // Unitarity and determinism.
        let u = haar_unitary(6, 42);
        let defect = u.adjoint().matmul(&u).sub(&CMat::identity(6)).max_abs();
        assert!(defect < 1e-12);
        assert_eq!(u.data, haar_unitary(6, 42).data);
        assert_ne!(u.data, haar_unitary(6, 43).data);
    }

    #[test]
    fn haar_trace_moment_matches_known_value() {
        // E[|tr U|²] = 1 for Haar-distributed U.
        let samples = 10_000;
        let mean: f64 = (0..samples)
            .map(|s| haar_unitary(4, 1_000 + s as u64).trace().norm_sqr())
            .sum::<f64>()
            / samples as f64;
        assert!((mean - 1.0).abs() < 0.05, "Haar moment estimate {mean}");
    }

    #[test]
    fn random_channel_is_complete_and_unitary_with_trivial_ancilla() {
        let spec = random_channel(9);
        let choi = spec.choi(0.0).unwrap();
        assert!((choi.op.trace().re - 2.0).abs() < 1e-12);

        let unit = ChannelSpec::new(ChannelKind::RandomStinespring { seed: 9, ancilla_dim: 1 })
            .unwrap();
        let (vals, _) = herm_eig(&unit.choi(0.0).unwrap().op.data).unwrap();
        assert_eq!(vals.iter().filter(|&&l| l > 1e-10 * vals[0]).count(), 1);
    }

    #[test]
    fn link_product_reproduces_state_evolution() {
        // Tester: prepare ρ on I1, forward the channel output to F.
        // X = ρᵀ_{I1} ⊗ |I⟩⟩⟨⟨I|_{O1,F}; then X ⋆ C = E(ρ).
        let amp = std::f64::consts::FRAC_1_SQRT_2;
        let plus = [amp, amp].map(|x| C64::new(x, 0.0));
        let rho = CMat::outer(&plus, &plus);
        let reg_i = SpaceRegistry::new(vec![("I1", 2)]).unwrap();
        let reg_of = SpaceRegistry::new(vec![("O1", 2), ("F", 2)]).unwrap();
        let prep = LabeledOperator::new(reg_i, rho.transpose()).unwrap();
        let wire = LabeledOperator::new(reg_of, max_entangled_choi()).unwrap();
        let x = prep.kron(&wire).unwrap();

        let theta = std::f64::consts::FRAC_PI_2;
        let choi = ChannelSpec::unitary().choi(theta).unwrap();
        let out = link_product(&x, &choi.op).unwrap();

        // State-vector reference: U|+⟩ for U = diag(e^{−iθ/2}, e^{iθ/2}).
        let psi = [
            C64::from_polar(amp, -theta / 2.0),
            C64::from_polar(amp, theta / 2.0),
        ];
        let expected = CMat::outer(&psi, &psi);
        assert!(out.data.sub(&expected).max_abs() < 1e-12);
        assert!((out.trace().re - 1.0).abs() < 1e-12);

        // Same wiring through the noisy flagship channel: compare against
        // direct Kraus evolution.
        let spec = ChannelSpec::theorem3();
        let choi_n = spec.choi(0.8).unwrap();
        let out_n = link_product(&x, &choi_n.op).unwrap();
        let mut direct = CMat::zeros(2, 2);
        for k in spec.kraus(0.8) {
            direct = direct.add(&k.matmul(&rho).matmul(&k.adjoint()));
        }
        assert!(out_n.data.sub(&direct).max_abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_preserves_spec() {
        let specs = [
            ChannelSpec::theorem3(),
            ChannelSpec::unitary(),
            ChannelSpec::random_composed(11),
            ChannelSpec::new(ChannelKind::CustomKraus {
                kraus: ChannelSpec::theorem3().kraus(0.25),
            })
            .unwrap(),
        ];
        for spec in &specs {
            let v = spec.to_json();
            let back = ChannelSpec::from_json(&v).unwrap();
            assert_eq!(&back, spec);
        }
        // Preset names parse.
        let preset = ChannelSpec::from_json(&json!({"kind": "theorem3"})).unwrap();
        assert_eq!(preset, ChannelSpec::theorem3());
    }
}
