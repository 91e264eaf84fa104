//! Dense small-matrix numerical kernel shared by all other modules:
//! Kronecker products, symmetric eigendecomposition (cyclic Jacobi),
//! definiteness tests, pivoted LU solves, and the matrix exponential.
//!
//! Everything here is plain `f64` row-major storage. The problems this crate
//! deals in stay well under 50x50, so simplicity and determinism win over
//! cache blocking or sparsity.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Index, IndexMut};
use thiserror::Error;

/// Relative symmetry tolerance accepted by [`sym_eig`] and [`is_pd`].
pub const SYM_TOL: f64 = 1e-10;
/// Jacobi convergence threshold: off-diagonal Frobenius mass relative to the
/// input norm.
pub const JACOBI_TOL: f64 = 1e-12;
/// Hard cap on Jacobi sweeps; never reached on sane input.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Condition-number estimate above which [`solve`] refuses the system.
pub const COND_LIMIT: f64 = 1e12;
/// Scaled-norm target for the exponential's scaling-and-squaring step.
pub const EXPM_NORM_TARGET: f64 = 0.5;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("matrix not symmetric: asymmetry {residual:.3e} exceeds tolerance")]
    NotSymmetric { residual: f64 },
    #[error("Jacobi iteration hit the sweep limit before converging")]
    NoConvergence,
    #[error("singular or ill-conditioned system (condition estimate {0:.3e})")]
    Singular(f64),
    #[error("matrix exponential overflowed")]
    Overflow,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatRepr", into = "MatRepr")]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Serialized form: explicit dimensions plus a flat row-major array.
#[derive(Serialize, Deserialize)]
struct MatRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatRepr> for Mat {
    type Error = String;

    fn try_from(r: MatRepr) -> Result<Self, String> {
        Mat::from_row_major(r.rows, r.cols, r.data).map_err(|e| e.to_string())
    }
}

impl From<Mat> for MatRepr {
    fn from(m: Mat) -> MatRepr {
        MatRepr { rows: m.rows, cols: m.cols, data: m.data }
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from nested rows. Panics on ragged or non-finite input; meant
    /// for literals and internally generated data. Use [`Mat::from_row_major`]
    /// for anything user-supplied.
    pub fn from_rows(rows: &[Vec<f64>]) -> Mat {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged row in Mat::from_rows");
            for &v in row {
                assert!(v.is_finite(), "non-finite entry in Mat::from_rows");
                data.push(v);
            }
        }
        Mat { rows: r, cols: c, data }
    }

    /// Checked construction from a flat row-major array.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat, NumError> {
        if data.len() != rows * cols {
            return Err(NumError::Shape(format!(
                "{}x{} needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        for (k, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(NumError::NonFinite(k / cols.max(1), k % cols.max(1)));
            }
        }
        Ok(Mat { rows, cols, data })
    }

    /// n x n matrix with the given diagonal.
    pub fn diag(d: &[f64]) -> Mat {
        let n = d.len();
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = d[i];
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: f64) -> Mat {
        let data = self.data.iter().map(|a| a * s).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(
            self.cols, other.rows,
            "mul: {}x{} by {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = k * other.cols;
                let crow = i * other.cols;
                for j in 0..other.cols {
                    out.data[crow + j] += a * other.data[orow + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut acc = 0.0;
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..self.cols {
                acc += row[j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn trace(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        (0..self.rows).map(|i| self.data[i * self.cols + i]).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Maximum absolute row sum (induced infinity norm).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.data[i * self.cols..(i + 1) * self.cols].iter().map(|v| v.abs()).sum())
            .fold(0.0_f64, f64::max)
    }

    /// Maximum absolute column sum (induced 1-norm).
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.data[i * self.cols + j].abs()).sum())
            .fold(0.0_f64, f64::max)
    }

    /// Asymmetry measure relative to the matrix magnitude.
    pub fn sym_residual(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst / self.max_abs().max(1.0)
    }

    /// (A + A') / 2.
    pub fn symmetrize(&self) -> Mat {
        assert_eq!(self.rows, self.cols);
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                s.data[i * self.cols + j] =
                    0.5 * (self.get(i, j) + self.get(j, i));
            }
        }
        s
    }

    /// Copy `block` into self with its upper-left corner at (i0, j0).
    pub fn place(&mut self, i0: usize, j0: usize, block: &Mat) {
        assert!(i0 + block.rows <= self.rows && j0 + block.cols <= self.cols);
        for i in 0..block.rows {
            for j in 0..block.cols {
                self.data[(i0 + i) * self.cols + (j0 + j)] = block.data[i * block.cols + j];
            }
        }
    }

    /// Extract the block of shape (r, c) at (i0, j0).
    pub fn slice(&self, i0: usize, j0: usize, r: usize, c: usize) -> Mat {
        assert!(i0 + r <= self.rows && j0 + c <= self.cols);
        let mut out = Mat::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                out.data[i * c + j] = self.data[(i0 + i) * self.cols + (j0 + j)];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  [")?;
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{:.6}", self.get(i, j))?;
            }
            writeln!(f, "]")?;
        }
        write!(f, "]")
    }
}

/// Kronecker product a (x) b.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(a.rows * b.rows, a.cols * b.cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let aij = a.get(i, j);
            if aij == 0.0 {
                continue;
            }
            for p in 0..b.rows {
                for q in 0..b.cols {
                    out.data[(i * b.rows + p) * out.cols + (j * b.cols + q)] = aij * b.get(p, q);
                }
            }
        }
    }
    out
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEig {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, matching `values`.
    pub vectors: Mat,
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Unconditionally stable at the sizes this crate handles; converges when the
/// off-diagonal Frobenius mass drops below `JACOBI_TOL` relative to the input
/// norm. Eigenvectors are sign-canonicalized (largest-magnitude component
/// positive) so results are reproducible.
pub fn sym_eig(s: &Mat) -> Result<SymEig, NumError> {
    if s.rows != s.cols {
        return Err(NumError::Shape(format!("sym_eig needs square, got {}x{}", s.rows, s.cols)));
    }
    let residual = s.sym_residual();
    if residual > SYM_TOL {
        return Err(NumError::NotSymmetric { residual });
    }
    let n = s.rows;
    if n == 0 {
        return Ok(SymEig { values: vec![], vectors: Mat::zeros(0, 0) });
    }
    let mut a = s.symmetrize();
    let mut v = Mat::identity(n);
    let scale = a.frob_norm().max(f64::MIN_POSITIVE);

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * a.get(i, j) * a.get(i, j);
            }
        }
        if off.sqrt() <= JACOBI_TOL * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                // Rotation angle via the stable tangent formula.
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                // Update rows/columns p and q of a.
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - sn * akq);
                    a.set(k, q, sn * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - sn * aqk);
                    a.set(q, k, sn * apk + c * aqk);
                }
                // Accumulate the rotation into v.
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - sn * vkq);
                    v.set(k, q, sn * vkp + c * vkq);
                }
            }
        }
    }
    if !converged {
        return Err(NumError::NoConvergence);
    }

    // Sort eigenpairs ascending, stably.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).partial_cmp(&a.get(j, j)).unwrap());
    let mut values = Vec::with_capacity(n);
    let mut vectors = Mat::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        values.push(a.get(k, k));
        // Canonical sign: make the largest-magnitude component positive.
        let mut best = 0;
        for i in 1..n {
            if v.get(i, k).abs() > v.get(best, k).abs() {
                best = i;
            }
        }
        let flip = if v.get(best, k) < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors.set(i, col, flip * v.get(i, k));
        }
    }
    Ok(SymEig { values, vectors })
}

/// Definiteness report from [`is_pd`].
#[derive(Clone, Copy, Debug)]
pub struct PdReport {
    /// True when the smallest eigenvalue exceeds the requested margin.
    pub positive: bool,
    pub min_eig: f64,
}

/// Tests whether the smallest eigenvalue of symmetric `s` exceeds `margin`.
pub fn is_pd(s: &Mat, margin: f64) -> Result<PdReport, NumError> {
    let eig = sym_eig(s)?;
    let min_eig = eig.values.first().copied().unwrap_or(f64::INFINITY);
    Ok(PdReport { positive: min_eig > margin, min_eig })
}

/// Pivoted LU factorization; shared by [`solve`] and the condition estimate.
struct Lu {
    lu: Mat,
    perm: Vec<usize>,
}

fn lu_factor(a: &Mat) -> Result<Lu, NumError> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut piv = k;
        let mut pmax = lu.get(k, k).abs();
        for i in (k + 1)..n {
            let v = lu.get(i, k).abs();
            if v > pmax {
                piv = i;
                pmax = v;
            }
        }
        if pmax == 0.0 {
            return Err(NumError::Singular(f64::INFINITY));
        }
        if piv != k {
            for j in 0..n {
                let t = lu.get(k, j);
                lu.set(k, j, lu.get(piv, j));
                lu.set(piv, j, t);
            }
            perm.swap(k, piv);
        }
        let d = lu.get(k, k);
        for i in (k + 1)..n {
            let f = lu.get(i, k) / d;
            lu.set(i, k, f);
            for j in (k + 1)..n {
                lu.set(i, j, lu.get(i, j) - f * lu.get(k, j));
            }
        }
    }
    Ok(Lu { lu, perm })
}

impl Lu {
    fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu.get(i, j) * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu.get(i, j) * x[j];
            }
            x[i] = acc / self.lu.get(i, i);
        }
        x
    }
}

/// Solves a x = b for square `a` (b may hold multiple right-hand columns).
///
/// Refuses systems whose 1-norm condition estimate exceeds `COND_LIMIT`.
pub fn solve(a: &Mat, b: &Mat) -> Result<Mat, NumError> {
    if a.rows != a.cols {
        return Err(NumError::Shape(format!("solve needs square a, got {}x{}", a.rows, a.cols)));
    }
    if a.rows != b.rows {
        return Err(NumError::Shape(format!(
            "solve: a is {}x{} but b has {} rows",
            a.rows, a.cols, b.rows
        )));
    }
    let n = a.rows;
    let lu = lu_factor(a)?;
    // Condition estimate: ||a||_1 * ||a^-1||_1 with the inverse formed
    // column-by-column (cheap at these sizes).
    let mut inv_norm: f64 = 0.0;
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = lu.solve_vec(&e);
        e[j] = 0.0;
        let s: f64 = col.iter().map(|v| v.abs()).sum();
        inv_norm = inv_norm.max(s);
    }
    let cond = a.norm_one() * inv_norm;
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(NumError::Singular(cond));
    }
    let mut x = Mat::zeros(n, b.cols);
    let mut rhs = vec![0.0; n];
    for j in 0..b.cols {
        for i in 0..n {
            rhs[i] = b.get(i, j);
        }
        let col = lu.solve_vec(&rhs);
        for i in 0..n {
            x.set(i, j, col[i]);
        }
    }
    Ok(x)
}

/// Convenience inverse via [`solve`] against the identity.
pub fn inverse(a: &Mat) -> Result<Mat, NumError> {
    solve(a, &Mat::identity(a.rows))
}

/// Matrix exponential e^{a t} by scaling-and-squaring with a degree-6
/// diagonal Pade approximant; the squaring count brings the scaled norm
/// under `EXPM_NORM_TARGET`.
pub fn expm(a: &Mat, t: f64) -> Result<Mat, NumError> {
    if a.rows != a.cols {
        return Err(NumError::Shape(format!("expm needs square, got {}x{}", a.rows, a.cols)));
    }
    let n = a.rows;
    let m = a.scale(t);
    let norm = m.norm_inf();
    if !norm.is_finite() {
        return Err(NumError::Overflow);
    }
    let s = if norm > EXPM_NORM_TARGET {
        (norm / EXPM_NORM_TARGET).log2().ceil() as u32
    } else {
        0
    };
    if s > 200 {
        return Err(NumError::Overflow);
    }
    let ms = m.scale(0.5_f64.powi(s as i32));

    // Degree-6 diagonal Pade coefficients for e^x.
    const B: [f64; 7] = [
        1.0,
        0.5,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15840.0,
        1.0 / 665280.0,
    ];
    let m2 = ms.mul(&ms);
    let m4 = m2.mul(&m2);
    let m6 = m4.mul(&m2);
    // Even part V, odd part U = ms * (odd polynomial in m2).
    let ident = Mat::identity(n);
    let v = ident.scale(B[0]).add(&m2.scale(B[2])).add(&m4.scale(B[4])).add(&m6.scale(B[6]));
    let u_inner = ident.scale(B[1]).add(&m2.scale(B[3])).add(&m4.scale(B[5]));
    let u = ms.mul(&u_inner);
    let p = v.add(&u);
    let q = v.sub(&u);
    let mut r = solve(&q, &p).map_err(|_| NumError::Overflow)?;
    for _ in 0..s {
        r = r.mul(&r);
        if !r.is_finite() {
            return Err(NumError::Overflow);
        }
    }
    if !r.is_finite() || r.max_abs() > 1e300 {
        return Err(NumError::Overflow);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }

    fn mat_close(a: &Mat, b: &Mat, tol: f64) {
        assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                approx(a.get(i, j), b.get(i, j), tol);
            }
        }
    }

    /// Deterministic xorshift for test data.
    struct Rng(u64);

    impl Rng {
        fn next_f64(&mut self) -> f64 {
            self.0 ^= self.0 << 13;
            self.0 ^= self.0 >> 7;
            self.0 ^= self.0 << 17;
            (self.0 >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        }

        fn mat(&mut self, r: usize, c: usize) -> Mat {
            let mut m = Mat::zeros(r, c);
            for i in 0..r {
                for j in 0..c {
                    m.set(i, j, self.next_f64());
                }
            }
            m
        }

        fn sym(&mut self, n: usize) -> Mat {
            self.mat(n, n).symmetrize()
        }
    }

    fn cycle_laplacian(n: usize) -> Mat {
        let mut l = Mat::zeros(n, n);
        for i in 0..n {
            let j = (i + 1) % n;
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
        }
        l
    }

    #[test]
    fn kron_identity_blocks() {
        let i2 = Mat::identity(2);
        mat_close(&kron(&i2, &i2), &Mat::identity(4), 0.0);
    }

    #[test]
    fn kron_diag_times_ones() {
        let a = Mat::diag(&[2.0, 3.0]);
        let b = Mat::from_rows(&[vec![1.0], vec![1.0]]);
        let k = kron(&a, &b);
        let expect = Mat::from_rows(&[
            vec![2.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, 3.0],
            vec![0.0, 3.0],
        ]);
        mat_close(&k, &expect, 0.0);
    }

    #[test]
    fn kron_dims() {
        let l = cycle_laplacian(6);
        let q = Mat::identity(3);
        let k = kron(&l, &q);
        assert_eq!((k.rows(), k.cols()), (18, 18));
    }

    #[test]
    fn sym_eig_sorted_diag() {
        let e = sym_eig(&Mat::diag(&[3.0, 1.0, 2.0])).unwrap();
        approx(e.values[0], 1.0, 1e-12);
        approx(e.values[1], 2.0, 1e-12);
        approx(e.values[2], 3.0, 1e-12);
    }

    #[test]
    fn sym_eig_cycle_laplacian() {
        // 2 - 2cos(2 pi k / 6) for k = 0..5, sorted.
        let e = sym_eig(&cycle_laplacian(6)).unwrap();
        let expect = [0.0, 1.0, 1.0, 3.0, 3.0, 4.0];
        for (v, want) in e.values.iter().zip(expect) {
            approx(*v, want, 1e-9);
        }
    }

    #[test]
    fn sym_eig_complete_graph_projector() {
        // I6 - (1/6) 1 1' has eigenvalues {0, 1 x5}.
        let n = 6;
        let mut m = Mat::identity(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] -= 1.0 / n as f64;
            }
        }
        let e = sym_eig(&m).unwrap();
        approx(e.values[0], 0.0, 1e-10);
        for k in 1..n {
            approx(e.values[k], 1.0, 1e-10);
        }
    }

    #[test]
    fn sym_eig_rejects_asymmetric() {
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]);
        assert!(matches!(sym_eig(&m), Err(NumError::NotSymmetric { .. })));
    }

    #[test]
    fn sym_eig_reconstruction_20x20() {
        let mut rng = Rng(0x9e3779b97f4a7c15);
        let s = rng.sym(20);
        let e = sym_eig(&s).unwrap();
        let recon = e.vectors.mul(&Mat::diag(&e.values)).mul(&e.vectors.transpose());
        let err = recon.sub(&s).frob_norm();
        assert!(err <= 1e-9 * s.frob_norm().max(1.0), "residual {}", err);
        // Orthonormality.
        let vtv = e.vectors.transpose().mul(&e.vectors);
        mat_close(&vtv, &Mat::identity(20), 1e-10);
    }

    #[test]
    fn is_pd_examples() {
        let r = is_pd(&Mat::identity(3), 0.0).unwrap();
        assert!(r.positive);
        approx(r.min_eig, 1.0, 1e-12);

        let r = is_pd(&Mat::zeros(2, 2), 0.0).unwrap();
        assert!(!r.positive);
        approx(r.min_eig, 0.0, 1e-15);

        let r = is_pd(&Mat::diag(&[1e-8, 1.0]), 1e-7).unwrap();
        assert!(!r.positive);
    }

    #[test]
    fn solve_identity_passthrough() {
        let b = Mat::from_rows(&[vec![2.0, 0.0], vec![-1.5, 4.0], vec![0.0, -0.4]]);
        let x = solve(&Mat::identity(3), &b).unwrap();
        mat_close(&x, &b, 1e-14);
    }

    #[test]
    fn solve_diagonal() {
        let x = solve(&Mat::diag(&[2.0, 4.0]), &Mat::identity(2)).unwrap();
        mat_close(&x, &Mat::diag(&[0.5, 0.25]), 1e-15);
    }

    #[test]
    fn solve_residual_random() {
        let mut rng = Rng(42);
        let mut a = rng.mat(5, 5);
        for i in 0..5 {
            a[(i, i)] += 6.0; // diagonally dominant => well-conditioned
        }
        let b = rng.mat(5, 3);
        let x = solve(&a, &b).unwrap();
        let resid = a.mul(&x).sub(&b).frob_norm();
        assert!(resid <= 1e-9 * b.frob_norm().max(1.0), "residual {}", resid);
    }

    #[test]
    fn solve_rejects_singular() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(solve(&a, &Mat::identity(2)), Err(NumError::Singular(_))));
    }

    #[test]
    fn solve_rejects_ill_conditioned() {
        let a = Mat::diag(&[1.0, 1e-13]);
        assert!(matches!(solve(&a, &Mat::identity(2)), Err(NumError::Singular(_))));
    }

    #[test]
    fn expm_zero_is_identity() {
        let e = expm(&Mat::zeros(3, 3), 5.0).unwrap();
        mat_close(&e, &Mat::identity(3), 1e-15);
    }

    #[test]
    fn expm_diagonal() {
        let e = expm(&Mat::diag(&[-1.0, 0.5]), 2.0).unwrap();
        approx(e.get(0, 0), (-2.0_f64).exp(), 1e-12);
        approx(e.get(1, 1), 1.0_f64.exp(), 1e-12);
        approx(e.get(0, 1), 0.0, 1e-15);
    }

    #[test]
    fn expm_overflow_reported() {
        let a = Mat::from_rows(&[vec![1000.0]]);
        assert!(matches!(expm(&a, 1.0), Err(NumError::Overflow)));
    }

    /// RK4 fundamental-matrix oracle for expm.
    fn rk4_expm(a: &Mat, t: f64, steps: usize) -> Mat {
        let n = a.rows();
        let h = t / steps as f64;
        let mut x = Mat::identity(n);
        for _ in 0..steps {
            let k1 = a.mul(&x);
            let k2 = a.mul(&x.add(&k1.scale(h / 2.0)));
            let k3 = a.mul(&x.add(&k2.scale(h / 2.0)));
            let k4 = a.mul(&x.add(&k3.scale(h)));
            x = x.add(&k1.add(&k2.scale(2.0)).add(&k3.scale(2.0)).add(&k4).scale(h / 6.0));
        }
        x
    }

    #[test]
    fn expm_matches_ode_oracle() {
        let a = Mat::from_rows(&[
            vec![0.2, 3.5, 0.0],
            vec![-1.5, 0.8, -1.3],
            vec![1.0, 0.0, -2.6],
        ]);
        let e = expm(&a, 1.0).unwrap();
        let oracle = rk4_expm(&a, 1.0, 4000);
        let rel = e.sub(&oracle).frob_norm() / oracle.frob_norm();
        assert!(rel <= 1e-6, "relative error {}", rel);
    }

    proptest! {
        #[test]
        fn kron_associative(seed in 0u64..1000) {
            let mut rng = Rng(seed.wrapping_mul(0x2545f4914f6cdd1d).max(1));
            let a = rng.mat(2, 3);
            let b = rng.mat(3, 2);
            let c = rng.mat(2, 2);
            let lhs = kron(&kron(&a, &b), &c);
            let rhs = kron(&a, &kron(&b, &c));
            prop_assert!(lhs.sub(&rhs).max_abs() <= 1e-12);
        }

        #[test]
        fn kron_mixed_product(seed in 0u64..1000) {
            let mut rng = Rng(seed.wrapping_mul(0x9e3779b9).max(1));
            let a = rng.mat(2, 3);
            let c = rng.mat(3, 2);
            let b = rng.mat(2, 2);
            let d = rng.mat(2, 3);
            let lhs = kron(&a, &b).mul(&kron(&c, &d));
            let rhs = kron(&a.mul(&c), &b.mul(&d));
            let denom = rhs.frob_norm().max(1.0);
            prop_assert!(lhs.sub(&rhs).frob_norm() / denom <= 1e-10);
        }

        #[test]
        fn sym_eig_reconstructs(seed in 0u64..500, n in 2usize..9) {
            let mut rng = Rng(seed.wrapping_mul(0x853c49e6748fea9b).max(1));
            let s = rng.sym(n);
            let e = sym_eig(&s).unwrap();
            let recon = e.vectors.mul(&Mat::diag(&e.values)).mul(&e.vectors.transpose());
            prop_assert!(recon.sub(&s).frob_norm() <= 1e-9 * s.frob_norm().max(1.0));
        }

        #[test]
        fn is_pd_matches_minor_oracle(seed in 0u64..500, n in 2usize..6) {
            let mut rng = Rng(seed.wrapping_mul(0xd1342543de82ef95).max(1));
            let mut s = rng.sym(n);
            // Mix in occasional definite shifts so both outcomes appear.
            if seed % 2 == 0 {
                for i in 0..n {
                    let v = s.get(i, i) + n as f64;
                    s.set(i, i, v);
                }
            }
            // Sylvester criterion oracle: all leading principal minors > 0.
            let mut minors_positive = true;
            for k in 1..=n {
                let sub = s.slice(0, 0, k, k);
                let det = det_oracle(&sub);
                if det <= 0.0 {
                    minors_positive = false;
                    break;
                }
            }
            let r = is_pd(&s, 0.0).unwrap();
            // Skip the comparison in the rare near-singular case where the
            // two criteria disagree inside floating-point noise.
            if r.min_eig.abs() > 1e-9 {
                prop_assert_eq!(r.positive, minors_positive);
            }
        }

        #[test]
        fn expm_semigroup(seed in 0u64..200) {
            let mut rng = Rng(seed.wrapping_mul(0xa0761d6478bd642f).max(1));
            let mut a = rng.mat(3, 3);
            for i in 0..3 {
                a[(i, i)] -= 2.0; // keep it stable
            }
            let (t1, t2) = (0.4, 0.9);
            let lhs = expm(&a, t1 + t2).unwrap();
            let rhs = expm(&a, t1).unwrap().mul(&expm(&a, t2).unwrap());
            let rel = lhs.sub(&rhs).frob_norm() / rhs.frob_norm().max(1e-300);
            prop_assert!(rel <= 1e-8, "relative error {}", rel);
        }
    }

    /// Cofactor-expansion determinant, fine for n <= 5 test oracles.
    fn det_oracle(m: &Mat) -> f64 {
        let n = m.rows();
        if n == 1 {
            return m.get(0, 0);
        }
        let mut acc = 0.0;
        for j in 0..n {
            let mut sub = Mat::zeros(n - 1, n - 1);
            for i in 1..n {
                let mut cj = 0;
                for k in 0..n {
                    if k == j {
                        continue;
                    }
                    sub.set(i - 1, cj, m.get(i, k));
                    cj += 1;
                }
            }
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * m.get(0, j) * det_oracle(&sub);
        }
        acc
    }
}
