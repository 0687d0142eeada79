//! Dense complex/real linear algebra with deterministic kernels.
//!
//! Everything here is hand-rolled on purpose: the certification layer needs
//! bit-reproducible pipelines (same input bits ⇒ same eigenbasis ⇒ same
//! rationalized witnesses), so the eigensolvers are cyclic Jacobi sweeps with
//! a fixed traversal order rather than whatever a LAPACK build happens to
//! ship.  Dimensions stay ≤ 256, so O(n³) dense kernels are more than fast
//! enough.
//!
//! Contents: [`CMat`] (complex dense matrix), [`RMat`] (real dense matrix),
//! Hermitian/symmetric eigendecomposition, Cholesky, complex QR and LU,
//! Moore–Penrose pseudoinverse, and a scaling-and-squaring matrix
//! exponential.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// Complex scalar used throughout the crate.
pub type C64 = Complex64;

/// Relative eigenvalue threshold below which a mode counts as rank-deficient.
///
/// Problem scales are O(1) after trace normalization, so `1e-10·λ_max` keeps
/// genuine support while discarding quadrature/rounding dust.
pub const RANK_TOL: f64 = 1e-10;

// ═══════════════════════════════════════════════════════════════════
// Complex dense matrices
// ═══════════════════════════════════════════════════════════════════

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    /// Number of rows.
    pub rows: usize,
    /// Number of columns.
    pub cols: usize,
    /// Row-major entries, `data[r * cols + c]`.
    pub data: Vec<C64>,
}

impl CMat {
    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    /// Build from a function of (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = CMat::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    /// Build a square diagonal matrix from real entries.
    pub fn diag(d: &[f64]) -> Self {
        let mut m = CMat::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &CMat) -> CMat {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = CMat::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                let row_k = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let row_o = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
                for c in 0..rhs.cols {
                    row_o[c] += a * row_k[c];
                }
            }
        }
        out
    }

    /// Conjugate transpose `A†`.
    pub fn adjoint(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    /// Transpose (no conjugation), taken in the computational basis.
    pub fn transpose(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> CMat {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    /// Sum of two matrices.
    pub fn add(&self, rhs: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "add shape mismatch");
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }

    /// Difference `self − rhs`.
    pub fn sub(&self, rhs: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "sub shape mismatch");
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Scale by a complex factor.
    pub fn scale(&self, s: C64) -> CMat {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    /// Trace (square matrices).
    pub fn trace(&self) -> C64 {
        assert_eq!(self.rows, self.cols, "trace of non-square matrix");
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    /// Frobenius norm.
    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Hermitian deviation `max|A − A†|`.
    pub fn herm_defect(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut d = 0.0f64;
        for r in 0..self.rows {
            for c in r..self.cols {
                d = d.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        d
    }

    /// Whether `max|A − A†| ≤ tol·max(1, max|A|)`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.herm_defect() <= tol * self.max_abs().max(1.0)
    }

    /// Symmetrized matrix `(A + A†)/2`.
    pub fn hermitize(&self) -> CMat {
        let adj = self.adjoint();
        self.add(&adj).scale(C64::new(0.5, 0.0))
    }

    /// Kronecker product `self ⊗ rhs` (first factor most significant).
    pub fn kron(&self, rhs: &CMat) -> CMat {
        let mut out = CMat::zeros(self.rows * rhs.rows, self.cols * rhs.cols);
        for r1 in 0..self.rows {
            for c1 in 0..self.cols {
                let a = self[(r1, c1)];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                for r2 in 0..rhs.rows {
                    for c2 in 0..rhs.cols {
                        out[(r1 * rhs.rows + r2, c1 * rhs.cols + c2)] = a * rhs[(r2, c2)];
                    }
                }
            }
        }
        out
    }

    /// Matrix–vector product.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len(), "apply shape mismatch");
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self[(r, c)] * v[c]).sum())
            .collect()
    }

    /// Outer product `u v†` of two vectors.
    pub fn outer(u: &[C64], v: &[C64]) -> CMat {
        CMat::from_fn(u.len(), v.len(), |r, c| u[r] * v[c].conj())
    }

    /// Real part of `tr(self · rhs)`.
    pub fn re_trace_prod(&self, rhs: &CMat) -> f64 {
        assert_eq!(self.cols, rhs.rows);
        assert_eq!(self.rows, rhs.cols);
        let mut acc = 0.0;
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                let b = rhs.data[k * rhs.cols + r];
                acc += a.re * b.re - a.im * b.im;
            }
        }
        acc
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

// ═══════════════════════════════════════════════════════════════════
// Hermitian eigendecomposition (cyclic Jacobi, fixed sweep order)
// ═══════════════════════════════════════════════════════════════════

/// Eigendecomposition `A = V diag(λ) V†` of a Hermitian matrix.
///
/// Eigenvalues are returned in **descending** order; `V`'s columns are the
/// matching orthonormal eigenvectors.  The implementation is a cyclic Jacobi
/// iteration with a fixed row-major sweep order, so identical input bits
/// always produce the identical decomposition — a prerequisite for
/// reproducible rationalized certificates downstream.
///
/// Errors if `A` is not square or not Hermitian to `1e-12·max(1, max|A|)`.
pub fn herm_eig(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    if a.rows != a.cols {
        return Err(Error::shape("herm_eig: matrix not square"));
    }
    if !a.is_hermitian(1e-12) {
        return Err(Error::numeric(format!(
            "herm_eig: input not Hermitian (defect {:.3e})",
            a.herm_defect()
        )));
    }
    let n = a.rows;
    let mut m = a.hermitize(); // kill rounding-level asymmetry exactly
    let mut v = CMat::identity(n);
    let scale = m.fro_norm().max(1e-300);

    for _sweep in 0..100 {
        // Off-diagonal Frobenius mass; converged when negligible.
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                let mag = apq.norm();
                if mag <= 1e-18 * scale {
                    continue;
                }
                let u = apq / mag; // unit phase of the pivot entry
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                // A'_pq = u[cs(App−Aqq) + (c²−s²)|a_pq|] vanishes at the
                // smaller-magnitude root of t² − 2τt − 1 = 0.
                let tau = (app - aqq) / (2.0 * mag);
                let t = if tau >= 0.0 {
                    -1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // A ← R† A R with R = [[c, s·u], [−s·ū, c]] in the (p,q) plane.
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = m[(r, p)];
                    let arq = m[(r, q)];
                    let new_rp = arp * c - arq * s * u.conj();
                    let new_rq = arp * (s * u) + arq * c;
                    m[(r, p)] = new_rp;
                    m[(p, r)] = new_rp.conj();
                    m[(r, q)] = new_rq;
                    m[(q, r)] = new_rq.conj();
                }
                let new_pp = c * c * app - 2.0 * c * s * mag + s * s * aqq;
                let new_qq = c * c * aqq + 2.0 * c * s * mag + s * s * app;
                m[(p, p)] = C64::new(new_pp, 0.0);
                m[(q, q)] = C64::new(new_qq, 0.0);
                m[(p, q)] = C64::new(0.0, 0.0);
                m[(q, p)] = C64::new(0.0, 0.0);

                // V ← V R.
                for r in 0..n {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = vrp * c - vrq * s * u.conj();
                    v[(r, q)] = vrp * (s * u) + vrq * c;
                }
            }
        }
    }

    // Sort eigenpairs descending; stable tie-break on original index.
    let mut order: Vec<usize> = (0..n).collect();
    let evals: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    order.sort_by(|&i, &j| evals[j].partial_cmp(&evals[i]).unwrap().then(i.cmp(&j)));
    let sorted_vals: Vec<f64> = order.iter().map(|&i| evals[i]).collect();
    let sorted_vecs = CMat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((sorted_vals, sorted_vecs))
}

/// Moore–Penrose pseudoinverse via the eigendecomposition of `A†A`.
///
/// Singular modes with `σ² ≤ 1e-10·σ_max²` are treated as zero.  For
/// full-column-rank `A` this satisfies `pinv(A)·A = I` to ~1e-10.
pub fn pinv(a: &CMat) -> Result<CMat> {
    let gram = a.adjoint().matmul(a); // q×q Hermitian PSD
    let (vals, vecs) = herm_eig(&gram)?;
    let vmax = vals.first().copied().unwrap_or(0.0).max(0.0);
    let tol = RANK_TOL * vmax;
    // pinv(A) = V Σ⁻² V† A† on the support of A†A.
    let mut inv_gram = CMat::zeros(gram.rows, gram.cols);
    for (k, &lam) in vals.iter().enumerate() {
        if lam > tol && lam > 0.0 {
            let col: Vec<C64> = (0..gram.rows).map(|r| vecs[(r, k)]).collect();
            let p = CMat::outer(&col, &col).scale(C64::new(1.0 / lam, 0.0));
            inv_gram = inv_gram.add(&p);
        }
    }
    Ok(inv_gram.matmul(&a.adjoint()))
}

/// Householder QR of a complex matrix: `A = Q R` with `Q` unitary (m×m)
/// and `R` upper-triangular (m×n).
pub fn qr(a: &CMat) -> (CMat, CMat) {
    let m = a.rows;
    let n = a.cols;
    let mut r = a.clone();
    let mut q = CMat::identity(m);
    for k in 0..n.min(m.saturating_sub(1)) {
        // Householder vector for column k below the diagonal.
        let mut norm_x = 0.0f64;
        for i in k..m {
            norm_x += r[(i, k)].norm_sqr();
        }
        let norm_x = norm_x.sqrt();
        if norm_x <= 1e-300 {
            continue;
        }
        let x0 = r[(k, k)];
        let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { C64::new(1.0, 0.0) };
        let alpha = -phase * norm_x;
        let mut vvec: Vec<C64> = (k..m).map(|i| r[(i, k)]).collect();
        vvec[0] -= alpha;
        let vnorm2: f64 = vvec.iter().map(|z| z.norm_sqr()).sum();
        if vnorm2 <= 1e-300 {
            continue;
        }
        // Apply H = I − 2vv†/|v|² to R (left) and accumulate into Q (right).
        for c in k..n {
            let dot: C64 = (k..m).map(|i| vvec[i - k].conj() * r[(i, c)]).sum();
            let f = dot * (2.0 / vnorm2);
            for i in k..m {
                let d = vvec[i - k] * f;
                r[(i, c)] -= d;
            }
        }
        for row in 0..m {
            let dot: C64 = (k..m).map(|i| q[(row, i)] * vvec[i - k]).sum();
            let f = dot * (2.0 / vnorm2);
            for i in k..m {
                let d = f * vvec[i - k].conj();
                q[(row, i)] -= d;
            }
        }
    }
    (q, r)
}

/// Solve `A X = B` for square complex `A` by LU with partial pivoting.
pub fn lu_solve(a: &CMat, b: &CMat) -> Result<CMat> {
    if a.rows != a.cols || a.rows != b.rows {
        return Err(Error::shape("lu_solve: shape mismatch"));
    }
    let n = a.rows;
    let mut lu = a.clone();
    let mut x = b.clone();
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        // Partial pivot: largest magnitude in column k.
        let mut best = k;
        let mut best_mag = lu[(k, k)].norm();
        for i in (k + 1)..n {
            let mag = lu[(i, k)].norm();
            if mag > best_mag {
                best = i;
                best_mag = mag;
            }
        }
        if best_mag <= 1e-300 {
            return Err(Error::numeric("lu_solve: singular matrix"));
        }
        if best != k {
            for c in 0..n {
                lu.data.swap(k * n + c, best * n + c);
            }
            for c in 0..x.cols {
                x.data.swap(k * x.cols + c, best * x.cols + c);
            }
            piv.swap(k, best);
        }
        let pivot = lu[(k, k)];
        for i in (k + 1)..n {
            let factor = lu[(i, k)] / pivot;
            lu[(i, k)] = factor;
            for c in (k + 1)..n {
                let d = factor * lu[(k, c)];
                lu[(i, c)] -= d;
            }
            for c in 0..x.cols {
                let d = factor * x[(k, c)];
                x[(i, c)] -= d;
            }
        }
    }
    // Back substitution.
    for c in 0..x.cols {
        for i in (0..n).rev() {
            let mut acc = x[(i, c)];
            for k in (i + 1)..n {
                acc -= lu[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = acc / lu[(i, i)];
        }
    }
    Ok(x)
}

/// Matrix exponential `e^A` by scaling-and-squaring with the degree-13 Padé
/// approximant (relative accuracy ~1e-13 for the O(1)-norm inputs used by
/// the imaginary-time checks).
pub fn expm(a: &CMat) -> Result<CMat> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    // 1-norm based scaling: ‖A/2^s‖₁ ≤ θ₁₃ ≈ 5.37.
    let norm1 = (0..n)
        .map(|c| (0..n).map(|r| a[(r, c)].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm1 > 5.37 { ((norm1 / 5.37).log2().ceil() as i32).max(0) } else { 0 };
    let a_s = a.scale(C64::new(0.5f64.powi(s), 0.0));

    // Padé-13 coefficients (Higham).
    const B: [f64; 14] = [
        64_764_752_532_480_000.0,
        32_382_376_266_240_000.0,
        7_771_770_303_897_600.0,
        1_187_353_796_428_800.0,
        129_060_195_264_000.0,
        10_559_470_521_600.0,
        670_442_572_800.0,
        33_522_128_640.0,
        1_323_241_920.0,
        40_840_800.0,
        960_960.0,
        16_380.0,
        182.0,
        1.0,
    ];
    let id = CMat::identity(n);
    let a2 = a_s.matmul(&a_s);
    let a4 = a2.matmul(&a2);
    let a6 = a2.matmul(&a4);
    let w1 = a6.scale(C64::new(B[13], 0.0))
        .add(&a4.scale(C64::new(B[11], 0.0)))
        .add(&a2.scale(C64::new(B[9], 0.0)));
    let w2 = a6.scale(C64::new(B[7], 0.0))
        .add(&a4.scale(C64::new(B[5], 0.0)))
        .add(&a2.scale(C64::new(B[3], 0.0)))
        .add(&id.scale(C64::new(B[1], 0.0)));
    let u = a_s.matmul(&a6.matmul(&w1).add(&w2));
    let z1 = a6.scale(C64::new(B[12], 0.0))
        .add(&a4.scale(C64::new(B[10], 0.0)))
        .add(&a2.scale(C64::new(B[8], 0.0)));
    let v = a6.matmul(&z1)
        .add(&a6.scale(C64::new(B[6], 0.0)))
        .add(&a4.scale(C64::new(B[4], 0.0)))
        .add(&a2.scale(C64::new(B[2], 0.0)))
        .add(&id.scale(C64::new(B[0], 0.0)));
    // e^{A_s} ≈ (V − U)⁻¹ (V + U), then square s times.
    let mut e = lu_solve(&v.sub(&u), &v.add(&u))?;
    for _ in 0..s {
        e = e.matmul(&e);
    }
    Ok(e)
}

// ═══════════════════════════════════════════════════════════════════
// Real dense matrices (interior-point workhorse)
// ═══════════════════════════════════════════════════════════════════

/// Dense real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RMat {
    /// Number of rows.
    pub rows: usize,
    /// Number of columns.
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl RMat {
    /// Zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RMat { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = RMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from a function of (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = RMat::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    /// Matrix product.
    pub fn matmul(&self, rhs: &RMat) -> RMat {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = RMat::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let row_a = &self.data[r * self.cols..(r + 1) * self.cols];
            let row_o = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for (k, &a) in row_a.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let row_b = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for c in 0..rhs.cols {
                    row_o[c] += a * row_b[c];
                }
            }
        }
        out
    }

    /// Transpose.
    pub fn transpose(&self) -> RMat {
        RMat::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// Sum.
    pub fn add(&self, rhs: &RMat) -> RMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        RMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }

    /// Difference.
    pub fn sub(&self, rhs: &RMat) -> RMat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        RMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Scale by a real factor.
    pub fn scale(&self, s: f64) -> RMat {
        RMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    /// Trace.
    pub fn trace(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    /// Frobenius norm.
    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Symmetrize in place: `A ← (A + Aᵀ)/2`.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                let v = 0.5 * (self[(r, c)] + self[(c, r)]);
                self[(r, c)] = v;
                self[(c, r)] = v;
            }
        }
    }

    /// `tr(self · rhs)` (both square, same size).
    pub fn trace_prod(&self, rhs: &RMat) -> f64 {
        assert_eq!(self.cols, rhs.rows);
        assert_eq!(self.rows, rhs.cols);
        let mut acc = 0.0;
        for r in 0..self.rows {
            for k in 0..self.cols {
                acc += self.data[r * self.cols + k] * rhs.data[k * rhs.cols + r];
            }
        }
        acc
    }
}

impl std::ops::Index<(usize, usize)> for RMat {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for RMat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Eigendecomposition of a real symmetric matrix (cyclic Jacobi, descending
/// eigenvalues); same determinism contract as [`herm_eig`].
pub fn sym_eig(a: &RMat) -> Result<(Vec<f64>, RMat)> {
    if a.rows != a.cols {
        return Err(Error::shape("sym_eig: matrix not square"));
    }
    let n = a.rows;
    let mut m = a.clone();
    m.symmetrize();
    let mut v = RMat::identity(n);
    let scale = m.fro_norm().max(1e-300);

    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-18 * scale {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                // Same root selection as the Hermitian case, with the signed
                // pivot playing the role of u·|a_pq|.
                let tau = (app - aqq) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    -1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = m[(r, p)];
                    let arq = m[(r, q)];
                    let new_rp = c * arp - s * arq;
                    let new_rq = s * arp + c * arq;
                    m[(r, p)] = new_rp;
                    m[(p, r)] = new_rp;
                    m[(r, q)] = new_rq;
                    m[(q, r)] = new_rq;
                }
                let new_pp = c * c * app - 2.0 * c * s * apq + s * s * aqq;
                let new_qq = c * c * aqq + 2.0 * c * s * apq + s * s * app;
                m[(p, p)] = new_pp;
                m[(q, q)] = new_qq;
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for r in 0..n {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
    }

    let evals: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| evals[j].partial_cmp(&evals[i]).unwrap().then(i.cmp(&j)));
    let sorted_vals: Vec<f64> = order.iter().map(|&i| evals[i]).collect();
    let sorted_vecs = RMat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((sorted_vals, sorted_vecs))
}

/// Orthonormal Hermitian operator basis of a `d`-dimensional system under
/// the Hilbert–Schmidt inner product `⟨A,B⟩ = tr(A†B)`.
///
/// Element 0 is the normalized identity `I/√d`; elements `1..d²` are
/// traceless: the symmetric pairs `(E_ij+E_ji)/√2`, the antisymmetric pairs
/// `(−iE_ij+iE_ji)/√2` (`i < j`), and the diagonal ladder
/// `(Σ_{m<k} E_mm − k·E_kk)/√(k(k+1))`.  For `d = 2` this is
/// `{I, σx, σy, σz}/√2`.  The fixed ordering makes every product-basis
/// enumeration downstream deterministic.
pub fn hermitian_basis(d: usize) -> Vec<CMat> {
    assert!(d >= 1);
    let mut basis = Vec::with_capacity(d * d);
    let norm = 1.0 / (d as f64).sqrt();
    basis.push(CMat::from_fn(d, d, |r, c| {
        if r == c { C64::new(norm, 0.0) } else { C64::new(0.0, 0.0) }
    }));
    let s = C64::new(1.0 / 2f64.sqrt(), 0.0);
    for i in 0..d {
        for j in (i + 1)..d {
            let mut x = CMat::zeros(d, d);
            x[(i, j)] = s;
            x[(j, i)] = s;
            basis.push(x);
            let mut y = CMat::zeros(d, d);
            y[(i, j)] = C64::new(0.0, -1.0) * s;
            y[(j, i)] = C64::new(0.0, 1.0) * s;
            basis.push(y);
        }
    }
    for k in 1..d {
        let norm = 1.0 / ((k * (k + 1)) as f64).sqrt();
        let mut z = CMat::zeros(d, d);
        for m in 0..k {
            z[(m, m)] = C64::new(norm, 0.0);
        }
        z[(k, k)] = C64::new(-(k as f64) * norm, 0.0);
        basis.push(z);
    }
    basis
}

/// Eigenvalues of a symmetric tridiagonal matrix together with the *first
/// component* of each eigenvector — exactly what Golub–Welsch quadrature
/// construction needs, in `O(n²)` instead of a dense `O(n³)` solve.
///
/// `diag` holds the `n` diagonal entries, `off` the `n−1` sub/super-diagonal
/// entries.  Implicit-shift QL iteration; the rotation product is tracked
/// only on its first row.  Returns `(eigenvalues, first_components)` in the
/// iteration's order (unsorted); components carry arbitrary signs.
pub fn tridiag_eig_first(diag: &[f64], off: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    assert_eq!(off.len() + 1, n.max(1), "off-diagonal length must be n−1");
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(0.0);
    let mut z = vec![0.0; n];
    if n == 0 {
        return Ok((d, z));
    }
    z[0] = 1.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            // Smallest m ≥ l with negligible coupling e[m].
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::numeric("tridiagonal QL failed to converge"));
            }
            // Wilkinson-style shift from the leading 2×2 block.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r } else { -r });
            let (mut s, mut c, mut p) = (1.0f64, 1.0f64, 0.0f64);
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    // Negligible rotation: deflate and restart this sweep.
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                // Same rotation on columns (i, i+1) of the accumulated
                // orthogonal factor, first row only.
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok((d, z))
}

/// Cholesky factorization `A = L Lᵀ` (lower triangular) of a symmetric
/// positive-definite matrix.  Fails on a non-positive pivot, reporting its
/// value so callers can regularize and retry.
pub fn cholesky(a: &RMat) -> Result<RMat> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut l = RMat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 {
            return Err(Error::numeric(format!("cholesky: pivot {d:.3e} at index {j}")));
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut acc = a[(i, j)];
            let (ri, rj) = (i * n, j * n);
            for k in 0..j {
                acc -= l.data[ri + k] * l.data[rj + k];
            }
            l[(i, j)] = acc / dj;
        }
    }
    Ok(l)
}

/// Solve `L y = b` (forward) then `Lᵀ x = y` (backward) for Cholesky `L`.
pub fn chol_solve(l: &RMat, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    assert_eq!(b.len(), n);
    let mut y = b.to_vec();
    for i in 0..n {
        let mut acc = y[i];
        let row = &l.data[i * n..i * n + i];
        for (k, &lik) in row.iter().enumerate() {
            acc -= lik * y[k];
        }
        y[i] = acc / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut acc = y[i];
        for k in (i + 1)..n {
            acc -= l[(k, i)] * y[k];
        }
        y[i] = acc / l[(i, i)];
    }
    y
}
