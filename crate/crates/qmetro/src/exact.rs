//! Exact Gaussian-rational matrices: the arithmetic substrate that turns
//! approximate solver output into rigorous bounds.
//!
//! Everything in this module is exact.  [`Rat`] is an arbitrary-precision
//! rational, [`QC`] a complex number over it, and [`QMat`] a dense matrix
//! of them, closed under addition, multiplication, conjugate transpose,
//! and linear solves.  The single bridge from floating point is
//! [`rationalize`], which rounds every entry to a fraction with
//! denominator `10^digits`; all decisions after that bridge — above all
//! the positive-semidefiniteness test [`exact_psd`] — are made by integer
//! arithmetic and therefore carry no rounding error at all.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::linalg::{C64, CMat};

/// Arbitrary-precision rational number.
pub type Rat = BigRational;

/// `10^digits` as an exact integer.
fn ten_pow(digits: u32) -> BigInt {
    (0..digits).fold(BigInt::one(), |acc, _| acc * 10)
}

/// `r` as an exact rational with denominator 2 (used by dyadic searches).
pub fn rat_half() -> Rat {
    Rat::new(BigInt::one(), BigInt::from(2))
}

/// Exact rational from an integer.
pub fn rat_int(v: i64) -> Rat {
    Rat::from_integer(BigInt::from(v))
}

/// Round a float to the nearest fraction with denominator `10^digits`.
///
/// The scaled value must stay inside the 2⁵³ range where `f64` holds
/// integers exactly, which bounds `digits` in practice to ≲ 12 for
/// order-one data.
pub fn rat_from_f64(x: f64, digits: u32) -> Result<Rat> {
    if !x.is_finite() {
        return Err(Error::numeric("cannot rationalize a non-finite value"));
    }
    let scaled = x * 10f64.powi(digits as i32);
    if scaled.abs() >= 9.0e15 {
        return Err(Error::numeric(format!(
            "rationalizing {x:.3e} at {digits} digits leaves the exact-integer range"
        )));
    }
    Ok(Rat::new(BigInt::from(scaled.round() as i64), ten_pow(digits)))
}

/// Canonical `numerator/denominator` form (plain integer when the
/// denominator is 1), parseable by [`rat_from_str`].
pub fn rat_to_string(r: &Rat) -> String {
    r.to_string()
}

/// Parse the output of [`rat_to_string`].
pub fn rat_from_str(s: &str) -> Result<Rat> {
    s.parse::<Rat>()
        .map_err(|e| Error::Io(format!("cannot parse rational '{s}': {e}")))
}

/// Nearest float to an exact rational (for display and tolerance checks).
pub fn rat_to_f64(r: &Rat) -> f64 {
    // Scale into a window where both parts convert safely, then divide.
    let n = r.numer();
    let d = r.denom();
    let nb = n.bits() as i64;
    let db = d.bits() as i64;
    // Shift so both mantissas fit in f64's exact range.
    let shift = (nb.max(db) - 52).max(0) as u64;
    let nf = bigint_to_f64(&(n >> shift));
    let df = bigint_to_f64(&(d >> shift));
    if df == 0.0 {
        return 0.0;
    }
    nf / df
}

fn bigint_to_f64(v: &BigInt) -> f64 {
    // Digits are emitted most-significant first by to_radix_be.
    let (sign, mag) = v.to_radix_be(256);
    let mut acc = 0.0f64;
    for byte in mag {
        acc = acc * 256.0 + byte as f64;
    }
    match sign {
        num_bigint::Sign::Minus => -acc,
        _ => acc,
    }
}

/// Serde adapter storing a [`Rat`] as its canonical `p/q` decimal string.
pub mod rat_string {
    use super::{rat_from_str, rat_to_string, Rat};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    /// Serialize as a string.
    pub fn serialize<S: Serializer>(r: &Rat, s: S) -> std::result::Result<S::Ok, S::Error> {
        rat_to_string(r).serialize(s)
    }

    /// Parse back from the string form.
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Rat, D::Error> {
        let s = String::deserialize(d)?;
        rat_from_str(&s).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for vectors of [`Rat`], elementwise [`rat_string`].
pub mod rat_string_vec {
    use super::{rat_from_str, rat_to_string, Rat};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    /// Serialize as a string array.
    pub fn serialize<S: Serializer>(v: &[Rat], s: S) -> std::result::Result<S::Ok, S::Error> {
        v.iter().map(rat_to_string).collect::<Vec<_>>().serialize(s)
    }

    /// Parse back from the string array.
    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<Rat>, D::Error> {
        let strings = Vec::<String>::deserialize(d)?;
        strings
            .iter()
            .map(|s| rat_from_str(s).map_err(serde::de::Error::custom))
            .collect()
    }
}

// ═══════════════════════════════════════════════════════════════════
// Gaussian rationals
// ═══════════════════════════════════════════════════════════════════

/// Complex number with exact rational real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QC {
    /// Real part.
    pub re: Rat,
    /// Imaginary part.
    pub im: Rat,
}

impl QC {
    /// Exact zero.
    pub fn zero() -> Self {
        QC { re: Rat::zero(), im: Rat::zero() }
    }

    /// Exact one.
    pub fn one() -> Self {
        QC { re: Rat::one(), im: Rat::zero() }
    }

    /// Purely real value.
    pub fn from_rat(re: Rat) -> Self {
        QC { re, im: Rat::zero() }
    }

    /// Both parts given.
    pub fn new(re: Rat, im: Rat) -> Self {
        QC { re, im }
    }

    /// Round a float complex number at `digits` decimal digits.
    pub fn from_c64(v: C64, digits: u32) -> Result<Self> {
        Ok(QC { re: rat_from_f64(v.re, digits)?, im: rat_from_f64(v.im, digits)? })
    }

    /// Complex conjugate.
    pub fn conj(&self) -> Self {
        QC { re: self.re.clone(), im: -self.im.clone() }
    }

    /// Exact sum.
    pub fn add(&self, o: &QC) -> Self {
        QC { re: &self.re + &o.re, im: &self.im + &o.im }
    }

    /// Exact difference.
    pub fn sub(&self, o: &QC) -> Self {
        QC { re: &self.re - &o.re, im: &self.im - &o.im }
    }

    /// Exact product.
    pub fn mul(&self, o: &QC) -> Self {
        QC {
            re: &self.re * &o.re - &self.im * &o.im,
            im: &self.re * &o.im + &self.im * &o.re,
        }
    }

    /// Exact quotient (errors on division by exact zero).
    pub fn div(&self, o: &QC) -> Result<Self> {
        let norm = &o.re * &o.re + &o.im * &o.im;
        if norm.is_zero() {
            return Err(Error::numeric("exact division by zero"));
        }
        let num = self.mul(&o.conj());
        Ok(QC { re: num.re / &norm, im: num.im / &norm })
    }

    /// Negation.
    pub fn neg(&self) -> Self {
        QC { re: -self.re.clone(), im: -self.im.clone() }
    }

    /// Scale by a real rational.
    pub fn scale(&self, s: &Rat) -> Self {
        QC { re: &self.re * s, im: &self.im * s }
    }

    /// Exactly zero?
    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    /// Nearest float.
    pub fn approx(&self) -> C64 {
        C64::new(rat_to_f64(&self.re), rat_to_f64(&self.im))
    }
}

impl serde::Serialize for QC {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        serde::Serialize::serialize(&(rat_to_string(&self.re), rat_to_string(&self.im)), s)
    }
}

impl<'de> serde::Deserialize<'de> for QC {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (re, im) = <(String, String) as serde::Deserialize>::deserialize(d)?;
        Ok(QC {
            re: rat_from_str(&re).map_err(serde::de::Error::custom)?,
            im: rat_from_str(&im).map_err(serde::de::Error::custom)?,
        })
    }
}

// ═══════════════════════════════════════════════════════════════════
// Exact matrices
// ═══════════════════════════════════════════════════════════════════

/// Dense matrix over the Gaussian rationals, row-major like [`CMat`].
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct QMat {
    /// Number of rows.
    pub rows: usize,
    /// Number of columns.
    pub cols: usize,
    /// Row-major entries, `data[r * cols + c]`.
    pub data: Vec<QC>,
}

impl std::ops::Index<(usize, usize)> for QMat {
    type Output = QC;
    fn index(&self, (r, c): (usize, usize)) -> &QC {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for QMat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut QC {
        &mut self.data[r * self.cols + c]
    }
}

impl QMat {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        QMat { rows, cols, data: vec![QC::zero(); rows * cols] }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = QMat::zeros(n, n);
        for k in 0..n {
            m[(k, k)] = QC::one();
        }
        m
    }

    /// Build from a closure.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> QC) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        QMat { rows, cols, data }
    }

    /// Entrywise sum.
    pub fn add(&self, o: &QMat) -> Self {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        QMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a.add(b)).collect(),
        }
    }

    /// Entrywise difference.
    pub fn sub(&self, o: &QMat) -> Self {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        QMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a.sub(b)).collect(),
        }
    }

    /// Matrix product.
    pub fn matmul(&self, o: &QMat) -> Self {
        assert_eq!(self.cols, o.rows);
        let mut out = QMat::zeros(self.rows, o.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(r, k)];
                if a.is_zero() {
                    continue;
                }
                for c in 0..o.cols {
                    let term = a.mul(&o[(k, c)]);
                    out[(r, c)] = out[(r, c)].add(&term);
                }
            }
        }
        out
    }

    /// Scale by a complex rational.
    pub fn scale(&self, s: &QC) -> Self {
        QMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a.mul(s)).collect(),
        }
    }

    /// Scale by a real rational.
    pub fn scale_rat(&self, s: &Rat) -> Self {
        QMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a.scale(s)).collect(),
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        QMat::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    /// Transpose without conjugation.
    pub fn transpose(&self) -> Self {
        QMat::from_fn(self.cols, self.rows, |r, c| self[(c, r)].clone())
    }

    /// Entrywise conjugate.
    pub fn conj(&self) -> Self {
        QMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(QC::conj).collect(),
        }
    }

    /// Trace.
    pub fn trace(&self) -> QC {
        assert_eq!(self.rows, self.cols);
        let mut acc = QC::zero();
        for k in 0..self.rows {
            acc = acc.add(&self[(k, k)]);
        }
        acc
    }

    /// Exact Hermitian part `(M + M†)/2`.
    pub fn hermitize(&self) -> Self {
        self.add(&self.adjoint()).scale_rat(&rat_half())
    }

    /// Exactly Hermitian?
    pub fn is_hermitian(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for r in 0..self.rows {
            for c in r..self.cols {
                if self[(r, c)] != self[(c, r)].conj() {
                    return false;
                }
            }
        }
        true
    }

    /// Nearest float matrix.
    pub fn approx(&self) -> CMat {
        CMat::from_fn(self.rows, self.cols, |r, c| self[(r, c)].approx())
    }

    /// Largest entry magnitude of the float image (diagnostics only).
    pub fn approx_max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.approx().norm()).fold(0.0, f64::max)
    }
}

/// Round every entry of a float matrix to denominator `10^digits`.
pub fn rationalize(m: &CMat, digits: u32) -> Result<QMat> {
    let mut data = Vec::with_capacity(m.rows * m.cols);
    for v in &m.data {
        data.push(QC::from_c64(*v, digits)?);
    }
    Ok(QMat { rows: m.rows, cols: m.cols, data })
}

// ═══════════════════════════════════════════════════════════════════
// Exact decisions
// ═══════════════════════════════════════════════════════════════════

/// Decide `M ⪰ 0` exactly for an exactly Hermitian rational matrix.
///
/// Symmetric (diagonal-pivot) elimination: at each step the pivot must be
/// a nonnegative real rational; a zero pivot is admissible only when its
/// entire remaining row vanishes, in which case the row and column are
/// skipped.  This is the exact LDL* criterion — no tolerance anywhere.
pub fn exact_psd(m: &QMat) -> Result<bool> {
    if m.rows != m.cols {
        return Err(Error::shape("exact_psd requires a square matrix"));
    }
    if !m.is_hermitian() {
        return Err(Error::config("exact_psd requires an exactly Hermitian matrix"));
    }
    let n = m.rows;
    // Work on the upper triangle only; rows above k are already final.
    let mut a = m.clone();
    for k in 0..n {
        let pivot = a[(k, k)].re.clone();
        if pivot.is_negative() {
            return Ok(false);
        }
        if pivot.is_zero() {
            // A PSD matrix with a zero diagonal entry has a zero row there.
            for j in k + 1..n {
                if !a[(k, j)].is_zero() {
                    return Ok(false);
                }
            }
            continue;
        }
        for i in k + 1..n {
            let lik = a[(k, i)].conj();
            if lik.is_zero() {
                continue;
            }
            for j in i..n {
                // A[i][j] ← A[i][j] − conj(A[k][i])·A[k][j] / pivot
                let num = lik.mul(&a[(k, j)]);
                let upd = QC { re: num.re / &pivot, im: num.im / &pivot };
                a[(i, j)] = a[(i, j)].sub(&upd);
            }
        }
    }
    Ok(true)
}

/// Solve `A·X = B` exactly by Gaussian elimination with row pivoting.
///
/// The pivot choice (largest float magnitude) only affects intermediate
/// entry growth, never the exact result.  Errors when `A` is singular.
pub fn exact_solve(a: &QMat, b: &QMat) -> Result<QMat> {
    if a.rows != a.cols {
        return Err(Error::shape("exact_solve requires a square system"));
    }
    if a.rows != b.rows {
        return Err(Error::shape("right-hand side height does not match the system"));
    }
    let n = a.rows;
    let w = b.cols;
    let mut lhs = a.clone();
    let mut rhs = b.clone();
    for k in 0..n {
        // Pivot: the remaining entry in column k with the largest float image.
        let mut best = k;
        let mut best_mag = lhs[(k, k)].approx().norm();
        for i in k + 1..n {
            let mag = lhs[(i, k)].approx().norm();
            if mag > best_mag {
                best = i;
                best_mag = mag;
            }
        }
        if lhs[(best, k)].is_zero() {
            // Float magnitude can underflow for huge rationals; fall back to
            // the first exactly nonzero entry before declaring singularity.
            best = match (k..n).find(|&i| !lhs[(i, k)].is_zero()) {
                Some(i) => i,
                None => return Err(Error::numeric("exact_solve: singular system")),
            };
        }
        if best != k {
            for j in 0..n {
                lhs.data.swap(k * n + j, best * n + j);
            }
            for j in 0..w {
                rhs.data.swap(k * w + j, best * w + j);
            }
        }
        let pivot = lhs[(k, k)].clone();
        for i in 0..n {
            if i == k || lhs[(i, k)].is_zero() {
                continue;
            }
            let factor = lhs[(i, k)].div(&pivot)?;
            for j in k..n {
                let upd = factor.mul(&lhs[(k, j)]);
                lhs[(i, j)] = lhs[(i, j)].sub(&upd);
            }
            for j in 0..w {
                let upd = factor.mul(&rhs[(k, j)]);
                rhs[(i, j)] = rhs[(i, j)].sub(&upd);
            }
        }
    }
    let mut out = QMat::zeros(n, w);
    for i in 0..n {
        let pivot = lhs[(i, i)].clone();
        for j in 0..w {
            out[(i, j)] = rhs[(i, j)].div(&pivot)?;
        }
    }
    Ok(out)
}

// ═══════════════════════════════════════════════════════════════════
// Tests
// ═══════════════════════════════════════════════════════════════════
