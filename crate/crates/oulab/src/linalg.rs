//! Dense real matrix kernels: norms, symmetric part, log norm, PSD square
//! roots, matrix exponential, Lyapunov solves.
//!
//! Everything is plain row-major `f64` storage at desk scale (r <= 64).
//! Symmetric eigenproblems go through a cyclic Jacobi sweep so results are
//! deterministic and bit-stable across runs and thread counts.

use crate::error::{Error, Result};

/// Relative tolerance used for norm-type computations.
pub const NORM_REL_TOL: f64 = 1e-10;

/// Symmetry / PSD tolerance scale: `tol_sym = 1e-12 * (1 + ||A||)`.
pub fn sym_tol(norm: f64) -> f64 {
    1e-12 * (1.0 + norm)
}

/// Dense real square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be >= 1");
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Build from row-major data; rejects NaN/Inf entries and bad lengths.
    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim < 1 {
            return Err(Error::InvalidInput("dimension must be >= 1".into()));
        }
        if data.len() != dim * dim {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("matrix entries must be finite".into()));
        }
        Ok(Self { dim, data })
    }

    /// Build from nested rows, e.g. `&[&[1.0, 2.0], &[3.0, 4.0]]`.
    pub fn from_nested(rows: &[&[f64]]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::InvalidInput("rows must form a square matrix".into()));
            }
            data.extend_from_slice(row);
        }
        Self::from_rows(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Self {
            dim: self.dim,
            data,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Self {
            dim: self.dim,
            data,
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        let data = self.data.iter().map(|a| a * c).collect();
        Self {
            dim: self.dim,
            data,
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self[(i, k)];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += aik * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        let n = self.dim;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self[(i, j)] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for SquareMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SquareMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }
}

/// Positive semi-definite matrix. Construction validates symmetry (to
/// `tol_sym`) and that the minimum eigenvalue is >= `-tol_sym`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix {
    base: SquareMatrix,
}

impl PsdMatrix {
    pub fn new(base: SquareMatrix) -> Result<Self> {
        let norm = spectral_norm(&base);
        let tol = sym_tol(norm);
        let n = base.dim();
        for i in 0..n {
            for j in (i + 1)..n {
                if (base[(i, j)] - base[(j, i)]).abs() > tol {
                    return Err(Error::InvalidInput(format!(
                        "matrix not symmetric: |A[{i},{j}] - A[{j},{i}]| = {:.3e} > {tol:.3e}",
                        (base[(i, j)] - base[(j, i)]).abs()
                    )));
                }
            }
        }
        let (eigs, _) = symmetric_eigen(&sym_part(&base));
        let min_eig = eigs.iter().copied().fold(f64::INFINITY, f64::min);
        if min_eig < -tol {
            return Err(Error::NotPsd { min_eig });
        }
        Ok(Self { base })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            base: SquareMatrix::zeros(dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            base: SquareMatrix::identity(dim),
        }
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.base
    }

    pub fn into_matrix(self) -> SquareMatrix {
        self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn trace(&self) -> f64 {
        self.base.trace()
    }
}

/// Symmetric part `(A + A') / 2`, exactly symmetric entrywise.
pub fn sym_part(a: &SquareMatrix) -> SquareMatrix {
    let n = a.dim();
    let mut out = SquareMatrix::zeros(n);
    for i in 0..n {
        out[(i, i)] = a[(i, i)];
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// Returns eigenvalues in descending order and the matching orthonormal
/// eigenvectors as columns. Sweep order is fixed, so the output is
/// deterministic for a given input.
pub fn symmetric_eigen(a: &SquareMatrix) -> (Vec<f64>, SquareMatrix) {
    let n = a.dim();
    let mut m = a.clone();
    let mut v = SquareMatrix::identity(n);
    if n == 1 {
        return (vec![m[(0, 0)]], v);
    }
    let scale = m.max_abs_entry().max(1.0);
    let stop = 1e-15 * scale;
    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[(p, q)].abs());
            }
        }
        if off <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable rotation: t = sign(theta) / (|theta| + sqrt(1 + theta^2))
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    idx.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());
    let eigs: Vec<f64> = idx.iter().map(|&i| diag[i]).collect();
    let mut vecs = SquareMatrix::zeros(n);
    for (col, &i) in idx.iter().enumerate() {
        for row in 0..n {
            vecs[(row, col)] = v[(row, i)];
        }
    }
    (eigs, vecs)
}

/// Spectral norm `sqrt(lambda_1(A A'))`.
pub fn spectral_norm(a: &SquareMatrix) -> f64 {
    let n = a.dim();
    if n == 1 {
        return a[(0, 0)].abs();
    }
    // Scale out the magnitude so the Gram matrix cannot overflow.
    let scale = a.max_abs_entry();
    if scale == 0.0 {
        return 0.0;
    }
    let b = a.scale(1.0 / scale);
    let gram = b.matmul(&b.transpose());
    if n == 2 {
        return scale * sym2_max_eig(&gram).max(0.0).sqrt();
    }
    let (eigs, _) = symmetric_eigen(&gram);
    scale * eigs[0].max(0.0).sqrt()
}

/// Largest eigenvalue of a symmetric 2x2 matrix, closed form.
fn sym2_max_eig(m: &SquareMatrix) -> f64 {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    0.5 * (a + d) + (0.25 * (a - d) * (a - d) + b * b).sqrt()
}

/// Logarithmic norm `mu(A) = lambda_1((A + A') / 2)`.
pub fn log_norm(a: &SquareMatrix) -> f64 {
    let s = sym_part(a);
    if a.dim() == 1 {
        return s[(0, 0)];
    }
    if a.dim() == 2 {
        return sym2_max_eig(&s);
    }
    let (eigs, _) = symmetric_eigen(&s);
    eigs[0]
}

/// Principal symmetric PSD square root.
///
/// Rejects inputs whose minimum eigenvalue is below `-tol_sym`; eigenvalues
/// in `[-tol_sym, 0)` are clamped to zero.
pub fn principal_sqrt(b: &PsdMatrix) -> Result<PsdMatrix> {
    let base = b.matrix();
    let n = base.dim();
    let s = sym_part(base);
    let (eigs, vecs) = symmetric_eigen(&s);
    let tol = sym_tol(eigs[0].max(0.0));
    let min_eig = eigs[n - 1];
    if min_eig < -tol {
        return Err(Error::NotPsd { min_eig });
    }
    let mut out = SquareMatrix::zeros(n);
    for k in 0..n {
        let lk = eigs[k].max(0.0).sqrt();
        if lk == 0.0 {
            continue;
        }
        for i in 0..n {
            let w = lk * vecs[(i, k)];
            for j in i..n {
                out[(i, j)] += w * vecs[(j, k)];
            }
        }
    }
    // Mirror the upper triangle so the result is symmetric exactly.
    for i in 0..n {
        for j in (i + 1)..n {
            out[(j, i)] = out[(i, j)];
        }
    }
    Ok(PsdMatrix { base: out })
}

/// Matrix exponential `exp(A t)` by Pade-13 scaling and squaring.
pub fn matrix_exp(a: &SquareMatrix, t: f64) -> SquareMatrix {
    let m = a.scale(t);
    expm(&m)
}

fn expm(a: &SquareMatrix) -> SquareMatrix {
    // Pade-13 coefficients (Higham).
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA_13: f64 = 5.371920351148152;
    let n = a.dim();
    let norm = one_norm(a);
    let mut squarings = 0u32;
    let scaled = if norm > THETA_13 {
        squarings = (norm / THETA_13).log2().ceil() as u32;
        a.scale(2f64.powi(-(squarings as i32)))
    } else {
        a.clone()
    };
    let ident = SquareMatrix::identity(n);
    let a2 = scaled.matmul(&scaled);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);
    // U = A (A6 (b13 A6 + b11 A4 + b9 A2) + b7 A6 + b5 A4 + b3 A2 + b1 I)
    let w1 = a6.scale(B[13]).add(&a4.scale(B[11])).add(&a2.scale(B[9]));
    let w2 = a6
        .scale(B[7])
        .add(&a4.scale(B[5]))
        .add(&a2.scale(B[3]))
        .add(&ident.scale(B[1]));
    let u = scaled.matmul(&a6.matmul(&w1).add(&w2));
    // V = A6 (b12 A6 + b10 A4 + b8 A2) + b6 A6 + b4 A4 + b2 A2 + b0 I
    let z1 = a6.scale(B[12]).add(&a4.scale(B[10])).add(&a2.scale(B[8]));
    let z2 = a6
        .scale(B[6])
        .add(&a4.scale(B[4]))
        .add(&a2.scale(B[2]))
        .add(&ident.scale(B[0]));
    let v = a6.matmul(&z1).add(&z2);
    let numer = v.add(&u);
    let denom = v.sub(&u);
    let lu = LuFactors::new(&denom).expect("Pade denominator is nonsingular by construction");
    let mut result = lu.solve_matrix(&numer);
    for _ in 0..squarings {
        result = result.matmul(&result);
    }
    result
}

fn one_norm(a: &SquareMatrix) -> f64 {
    let n = a.dim();
    let mut best = 0.0f64;
    for j in 0..n {
        let mut col = 0.0;
        for i in 0..n {
            col += a[(i, j)].abs();
        }
        best = best.max(col);
    }
    best
}

/// LU factorization with partial pivoting.
pub struct LuFactors {
    lu: SquareMatrix,
    piv: Vec<usize>,
    sign: f64,
}

impl LuFactors {
    pub fn new(a: &SquareMatrix) -> Result<Self> {
        let n = a.dim();
        let mut lu = a.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for i in (k + 1)..n {
                if lu[(i, k)].abs() > best {
                    best = lu[(i, k)].abs();
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::InvalidInput(
                    "singular matrix in LU factorization".into(),
                ));
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                piv.swap(k, p);
                sign = -sign;
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                for j in (k + 1)..n {
                    let sub = f * lu[(k, j)];
                    lu[(i, j)] -= sub;
                }
            }
        }
        Ok(Self { lu, piv, sign })
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.dim();
        let mut x: Vec<f64> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc / self.lu[(i, i)];
        }
        x
    }

    /// Solve `A X = B` column by column.
    pub fn solve_matrix(&self, b: &SquareMatrix) -> SquareMatrix {
        let n = self.lu.dim();
        let mut out = SquareMatrix::zeros(n);
        let mut col = vec![0.0; n];
        for j in 0..n {
            for i in 0..n {
                col[i] = b[(i, j)];
            }
            let x = self.solve_vec(&col);
            for i in 0..n {
                out[(i, j)] = x[i];
            }
        }
        out
    }

    pub fn inverse(&self) -> SquareMatrix {
        self.solve_matrix(&SquareMatrix::identity(self.lu.dim()))
    }

    pub fn det(&self) -> f64 {
        let n = self.lu.dim();
        let mut d = self.sign;
        for i in 0..n {
            d *= self.lu[(i, i)];
        }
        d
    }
}

/// Solve the continuous Lyapunov equation `A P + P A' + B = 0` for Hurwitz A.
///
/// Uses the Newton sign-function iteration with determinantal scaling; the
/// limit of the iteration doubles as the Hurwitz check (sign(A) must be -I).
pub fn solve_lyapunov(a: &SquareMatrix, b: &PsdMatrix) -> Result<PsdMatrix> {
    let n = a.dim();
    if b.dim() != n {
        return Err(Error::InvalidInput(
            "dimension mismatch in Lyapunov solve".into(),
        ));
    }
    let mut ak = a.clone();
    let mut qk = b.matrix().clone();
    let mut converged = false;
    for _ in 0..100 {
        let lu = LuFactors::new(&ak).map_err(|_| Error::NotHurwitz)?;
        let det = lu.det();
        if det == 0.0 || !det.is_finite() {
            return Err(Error::NotHurwitz);
        }
        let gamma = det.abs().powf(-1.0 / n as f64);
        let inv = lu.inverse();
        let next_a = ak.scale(0.5 * gamma).add(&inv.scale(0.5 / gamma));
        // Q update: (gamma Q + gamma^{-1} A^{-1} Q A^{-T}) / 2
        let next_q = qk
            .scale(0.5 * gamma)
            .add(&inv.matmul(&qk).matmul(&inv.transpose()).scale(0.5 / gamma));
        let diff = next_a.sub(&ak).frobenius_norm();
        let scale = ak.frobenius_norm().max(1.0);
        ak = next_a;
        qk = next_q;
        if !ak.is_finite() {
            return Err(Error::NotHurwitz);
        }
        if diff <= 1e-14 * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotHurwitz);
    }
    // sign(A) = -I exactly when A is Hurwitz.
    let sign_dev = ak.add(&SquareMatrix::identity(n)).frobenius_norm();
    if sign_dev > 1e-6 * (n as f64).sqrt() {
        return Err(Error::NotHurwitz);
    }
    let p = sym_part(&qk.scale(0.5));
    let norm_b = spectral_norm(b.matrix());
    let residual = a.matmul(&p).add(&p.matmul(&a.transpose())).add(b.matrix());
    let res_norm = spectral_norm(&residual);
    if res_norm > 1e-9 * (1.0 + norm_b) {
        return Err(Error::InvalidInput(format!(
            "Lyapunov residual {res_norm:.3e} exceeds tolerance"
        )));
    }
    PsdMatrix::new(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn to_na(a: &SquareMatrix) -> DMatrix<f64> {
        DMatrix::from_fn(a.dim(), a.dim(), |i, j| a[(i, j)])
    }

    fn random_matrix(dim: usize, rng: &mut impl rand::Rng, scale: f64) -> SquareMatrix {
        let data: Vec<f64> = (0..dim * dim)
            .map(|_| (rng.random::<f64>() - 0.5) * 2.0 * scale)
            .collect();
        SquareMatrix::from_rows(dim, data).unwrap()
    }

    fn seeded(seed: u64) -> impl rand::Rng {
        use rand::SeedableRng;
        rand_chacha::ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn sym_part_fixed_point_on_symmetric() {
        let a = SquareMatrix::from_nested(&[&[2.0, 1.0], &[1.0, -3.0]]).unwrap();
        assert_eq!(sym_part(&a), a);
    }

    #[test]
    fn sym_part_kills_skew() {
        let a = SquareMatrix::from_nested(&[&[0.0, 3.0], &[-3.0, 0.0]]).unwrap();
        assert_eq!(sym_part(&a), SquareMatrix::zeros(2));
    }

    #[test]
    fn sym_part_entrywise_average() {
        let a = SquareMatrix::from_nested(&[&[1.0, 2.0], &[0.0, 1.0]]).unwrap();
        let expected = SquareMatrix::from_nested(&[&[1.0, 1.0], &[1.0, 1.0]]).unwrap();
        assert_eq!(sym_part(&a), expected);
    }

    #[test]
    fn spectral_norm_identity_and_diag() {
        assert!((spectral_norm(&SquareMatrix::identity(3)) - 1.0).abs() < 1e-12);
        let d = SquareMatrix::diag(&[3.0, -5.0]);
        assert!((spectral_norm(&d) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_matches_svd_oracle() {
        // Fixed case from the nilpotent family plus random cases.
        let a = SquareMatrix::from_nested(&[&[0.0, 2.0], &[0.0, 0.0]]).unwrap();
        assert!((spectral_norm(&a) - 2.0).abs() < 1e-12);
        let mut rng = seeded(17);
        for dim in [2usize, 3, 5, 8] {
            for _ in 0..20 {
                let m = random_matrix(dim, &mut rng, 3.0);
                let ours = spectral_norm(&m);
                let svd = to_na(&m).svd(false, false);
                let oracle = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
                assert!(
                    (ours - oracle).abs() <= 1e-10 * (1.0 + oracle),
                    "dim {dim}: {ours} vs oracle {oracle}"
                );
            }
        }
    }

    #[test]
    fn log_norm_examples() {
        let neg_id = SquareMatrix::diag(&[-1.0, -1.0]);
        assert!((log_norm(&neg_id) + 1.0).abs() < 1e-12);
        let skew = SquareMatrix::from_nested(&[&[0.0, 3.0], &[-3.0, 0.0]]).unwrap();
        assert!(log_norm(&skew).abs() < 1e-12);
        // sym part of [[1,2],[0,1]] is [[1,1],[1,1]] with top eigenvalue 2.
        let a = SquareMatrix::from_nested(&[&[1.0, 2.0], &[0.0, 1.0]]).unwrap();
        assert!((log_norm(&a) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn log_norm_matches_eigen_oracle() {
        let mut rng = seeded(23);
        for dim in [2usize, 4, 7] {
            for _ in 0..20 {
                let m = random_matrix(dim, &mut rng, 2.0);
                let ours = log_norm(&m);
                let sym = to_na(&sym_part(&m));
                let oracle = sym
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((ours - oracle).abs() <= 1e-10 * (1.0 + oracle.abs()));
            }
        }
    }

    #[test]
    fn log_norm_shift_and_dominance() {
        let mut rng = seeded(5);
        for _ in 0..50 {
            let m = random_matrix(4, &mut rng, 3.0);
            let c = (rng.random::<f64>() - 0.5) * 4.0;
            let shifted = m.add(&SquareMatrix::identity(4).scale(c));
            assert!((log_norm(&shifted) - (log_norm(&m) + c)).abs() < 1e-9);
            assert!(log_norm(&m) <= spectral_norm(&m) + 1e-12);
        }
    }

    #[test]
    fn rayleigh_quotient_below_log_norm() {
        let mut rng = seeded(31);
        let m = random_matrix(5, &mut rng, 2.0);
        let mu = log_norm(&m);
        let s = sym_part(&m);
        for _ in 0..100 {
            let mut x: Vec<f64> = (0..5).map(|_| rng.random::<f64>() - 0.5).collect();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            x.iter_mut().for_each(|v| *v /= norm);
            let sx = s.mul_vec(&x);
            let quad: f64 = x.iter().zip(&sx).map(|(a, b)| a * b).sum();
            assert!(quad <= mu + 1e-9);
        }
    }

    #[test]
    fn principal_sqrt_examples() {
        let id = PsdMatrix::identity(3);
        let root = principal_sqrt(&id).unwrap();
        assert!(
            root.matrix()
                .sub(&SquareMatrix::identity(3))
                .frobenius_norm()
                < 1e-12
        );

        let d = PsdMatrix::new(SquareMatrix::diag(&[4.0, 9.0])).unwrap();
        let root = principal_sqrt(&d).unwrap();
        assert!(
            root.matrix()
                .sub(&SquareMatrix::diag(&[2.0, 3.0]))
                .frobenius_norm()
                < 1e-12
        );
    }

    #[test]
    fn principal_sqrt_eigen_oracle() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1 on (1,1)/sqrt2 and (1,-1)/sqrt2.
        let b = PsdMatrix::new(SquareMatrix::from_nested(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap())
            .unwrap();
        let s = principal_sqrt(&b).unwrap();
        let na = to_na(s.matrix()).symmetric_eigen();
        let mut eigs: Vec<f64> = na.eigenvalues.iter().cloned().collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((eigs[0] - 1.0).abs() < 1e-10);
        assert!((eigs[1] - 3.0f64.sqrt()).abs() < 1e-10);
        let prod = s.matrix().matmul(s.matrix());
        assert!(prod.sub(b.matrix()).frobenius_norm() < 1e-10 * (1.0 + spectral_norm(b.matrix())));
    }

    #[test]
    fn principal_sqrt_rejects_indefinite() {
        let m = SquareMatrix::diag(&[1.0, -0.5]);
        let err = PsdMatrix::new(m).unwrap_err();
        assert!(matches!(err, Error::NotPsd { .. }));
    }

    #[test]
    fn matrix_exp_examples() {
        let mut rng = seeded(7);
        let a = random_matrix(3, &mut rng, 2.0);
        let e0 = matrix_exp(&a, 0.0);
        assert!(e0.sub(&SquareMatrix::identity(3)).frobenius_norm() < 1e-14);

        let d = SquareMatrix::diag(&[-1.0, -2.0]);
        let ed = matrix_exp(&d, 1.0);
        assert!((ed[(0, 0)] - (-1.0f64).exp()).abs() < 1e-12);
        assert!((ed[(1, 1)] - (-2.0f64).exp()).abs() < 1e-12);

        let nil = SquareMatrix::from_nested(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap();
        let en = matrix_exp(&nil, 1.0);
        let expected = SquareMatrix::from_nested(&[&[1.0, 1.0], &[0.0, 1.0]]).unwrap();
        assert!(en.sub(&expected).frobenius_norm() < 1e-13);
    }

    #[test]
    fn matrix_exp_semigroup() {
        let mut rng = seeded(41);
        for _ in 0..20 {
            let a = random_matrix(4, &mut rng, 1.2);
            let s = rng.random::<f64>() * 2.0;
            let t = rng.random::<f64>() * 2.0;
            let lhs = matrix_exp(&a, s).matmul(&matrix_exp(&a, t));
            let rhs = matrix_exp(&a, s + t);
            assert!(lhs.sub(&rhs).frobenius_norm() <= 1e-8 * (1.0 + rhs.frobenius_norm()));
        }
    }

    #[test]
    fn lyapunov_trivial_cases() {
        // A = -I, B = 2I => P = I.
        let a = SquareMatrix::identity(2).scale(-1.0);
        let b = PsdMatrix::new(SquareMatrix::identity(2).scale(2.0)).unwrap();
        let p = solve_lyapunov(&a, &b).unwrap();
        assert!(p.matrix().sub(&SquareMatrix::identity(2)).frobenius_norm() < 1e-10);

        // Scalar a = -1, b = 2 => p = 1.
        let a = SquareMatrix::diag(&[-1.0]);
        let b = PsdMatrix::new(SquareMatrix::diag(&[2.0])).unwrap();
        let p = solve_lyapunov(&a, &b).unwrap();
        assert!((p.matrix()[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lyapunov_residual_on_random_stable() {
        let mut rng = seeded(97);
        for dim in [2usize, 3, 6] {
            for _ in 0..10 {
                // Random Hurwitz drift: strictly negative log norm by shifting.
                let m = random_matrix(dim, &mut rng, 1.0);
                let shift = log_norm(&m) + 0.5 + rng.random::<f64>();
                let a = m.sub(&SquareMatrix::identity(dim).scale(shift));
                let g = random_matrix(dim, &mut rng, 1.0);
                let b = PsdMatrix::new(g.matmul(&g.transpose())).unwrap();
                let p = solve_lyapunov(&a, &b).unwrap();
                let residual = a
                    .matmul(p.matrix())
                    .add(&p.matrix().matmul(&a.transpose()))
                    .add(b.matrix());
                let tol = 1e-9 * (1.0 + spectral_norm(b.matrix()));
                assert!(spectral_norm(&residual) <= tol);
            }
        }
    }

    #[test]
    fn lyapunov_rejects_non_hurwitz() {
        let a = SquareMatrix::diag(&[1.0, -2.0]);
        let b = PsdMatrix::identity(2);
        assert!(matches!(solve_lyapunov(&a, &b), Err(Error::NotHurwitz)));
    }

    #[test]
    fn rejects_non_finite_entries() {
        assert!(SquareMatrix::from_rows(2, vec![1.0, f64::NAN, 0.0, 1.0]).is_err());
        assert!(SquareMatrix::from_rows(2, vec![1.0, f64::INFINITY, 0.0, 1.0]).is_err());
    }
}
