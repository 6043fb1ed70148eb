//! Dense symmetric linear algebra.
//!
//! Everything here works on small-to-medium dense matrices (a few thousand
//! rows at most). The eigensolver is a cyclic Jacobi method, which is slow
//! compared to tridiagonal QR but gives small eigenvalues to full absolute
//! accuracy, and the alignment analysis lives at the bottom of the spectrum.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::format::fmt_f64;

/// Relative off-diagonal Frobenius norm at which Jacobi sweeps stop.
pub const JACOBI_TOLERANCE: f64 = 1e-13;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Components smaller than this are skipped when fixing eigenvector signs.
const SIGN_THRESHOLD: f64 = 1e-12;

/// A real symmetric matrix. Symmetry is exact: construction replaces the
/// input by `(A + Aᵀ) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: Array2<f64>,
}

impl SymMatrix {
    pub fn new(a: Array2<f64>) -> Result<Self> {
        let (rows, cols) = a.dim();
        if rows != cols {
            return Err(Error::ShapeMismatch {
                what: "square matrix",
                expected: rows,
                found: cols,
            });
        }
        if rows == 0 {
            return Err(Error::InvalidSize("matrix order must be at least 1".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        let mut data = a;
        for i in 0..rows {
            for j in (i + 1)..rows {
                let m = 0.5 * (data[[i, j]] + data[[j, i]]);
                data[[i, j]] = m;
                data[[j, i]] = m;
            }
        }
        Ok(Self { data })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(Array2::from_shape_fn((n, n), |(i, j)| f(i, j)))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            data: Array2::eye(n),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(Array2::from_diag(&ArrayView1::from(diag)))
    }

    pub fn order(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn trace(&self) -> f64 {
        self.data.diag().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn matvec(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.order() {
            return Err(Error::ShapeMismatch {
                what: "matrix-vector product",
                expected: self.order(),
                found: x.len(),
            });
        }
        Ok(self.data.dot(&x))
    }

    /// Principal submatrix with the listed rows/columns removed.
    pub fn without(&self, removed: &[usize]) -> Result<Self> {
        let keep: Vec<usize> = (0..self.order()).filter(|i| !removed.contains(i)).collect();
        let n = keep.len();
        Self::new(Array2::from_shape_fn((n, n), |(a, b)| {
            self.data[[keep[a], keep[b]]]
        }))
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
/// Column `i` of `eigenvectors` belongs to `eigenvalues[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Array2<f64>,
}

impl SpectralDecomposition {
    pub fn order(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[self.order() - 1]
    }

    pub fn vector(&self, i: usize) -> ArrayView1<'_, f64> {
        self.eigenvectors.column(i)
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.sum()
    }

    /// `V Λ Vᵀ`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let scaled = &self.eigenvectors * &self.eigenvalues.view().insert_axis(ndarray::Axis(0));
        scaled.dot(&self.eigenvectors.t())
    }

    /// `max |VᵀV − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.eigenvectors.t().dot(&self.eigenvectors);
        gram.indexed_iter()
            .map(|((i, j), v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }

    /// Clamp tiny negative eigenvalues (magnitude ≤ `rel_tol·λ_max`) to zero.
    /// Larger negative eigenvalues mean the input was not PSD.
    pub fn clamp_psd(mut self, rel_tol: f64) -> Result<Self> {
        let tol = rel_tol * self.lambda_max().abs().max(f64::MIN_POSITIVE);
        for v in self.eigenvalues.iter_mut() {
            if *v < 0.0 {
                if -*v > tol {
                    return Err(Error::NotPsd {
                        value: *v,
                        tolerance: tol,
                    });
                }
                *v = 0.0;
            }
        }
        Ok(self)
    }
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += a[i * n + j] * a[i * n + j];
        }
    }
    (2.0 * s).sqrt()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps run until the off-diagonal Frobenius norm drops below
/// `JACOBI_TOLERANCE · ‖A‖_F` and give up after `JACOBI_MAX_SWEEPS`.
/// Eigenvalues come back descending; each eigenvector is signed so its first
/// component with magnitude above 1e-12 is positive.
pub fn eigh_symmetric(a: &SymMatrix) -> Result<SpectralDecomposition> {
    let n = a.order();
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigensolver input"));
    }
    // Row-major working copy; the rotated basis is kept transposed so that
    // every rotation touches contiguous rows only.
    let mut m: Vec<f64> = a.data.iter().copied().collect();
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        vt[i * n + i] = 1.0;
    }
    let norm = a.frobenius_norm();
    let target = JACOBI_TOLERANCE * norm;

    let mut converged = n == 1 || norm == 0.0;
    let mut sweeps = 0;
    while !converged {
        if off_diagonal_norm(&m, n) <= target {
            converged = true;
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                off_norm: off_diagonal_norm(&m, n),
            });
        }
        sweeps += 1;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                rotate(&mut m, &mut vt, n, p, q);
            }
        }
    }
    debug_assert!(converged);
    log::trace!("jacobi converged after {sweeps} sweeps (n = {n})");

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));

    let eigenvalues = Array1::from_iter(order.iter().map(|&i| m[i * n + i]));
    let mut eigenvectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        let row = &vt[src * n..(src + 1) * n];
        let flip = row
            .iter()
            .find(|v| v.abs() > SIGN_THRESHOLD)
            .is_some_and(|v| *v < 0.0);
        let sign = if flip { -1.0 } else { 1.0 };
        for k in 0..n {
            eigenvectors[[k, col]] = sign * row[k];
        }
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// One Jacobi rotation annihilating `m[p][q]`.
fn rotate(m: &mut [f64], vt: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = m[p * n + q];
    if apq == 0.0 {
        return;
    }
    let app = m[p * n + p];
    let aqq = m[q * n + q];
    // Entries already below the rounding level of both diagonals are dropped.
    if apq.abs() <= 0.25 * f64::EPSILON * (app.abs().min(aqq.abs())) {
        m[p * n + q] = 0.0;
        m[q * n + p] = 0.0;
        return;
    }
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta.is_infinite() { 0.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let (head, tail) = m.split_at_mut(q * n);
    let row_p = &mut head[p * n..(p + 1) * n];
    let row_q = &mut tail[..n];
    for k in 0..n {
        let xp = row_p[k];
        let xq = row_q[k];
        row_p[k] = c * xp - s * xq;
        row_q[k] = s * xp + c * xq;
    }
    for k in 0..n {
        if k != p && k != q {
            m[k * n + p] = m[p * n + k];
            m[k * n + q] = m[q * n + k];
        }
    }
    m[p * n + p] = app - t * apq;
    m[q * n + q] = aqq + t * apq;
    m[p * n + q] = 0.0;
    m[q * n + p] = 0.0;

    let (head, tail) = vt.split_at_mut(q * n);
    let vp = &mut head[p * n..(p + 1) * n];
    let vq = &mut tail[..n];
    for k in 0..n {
        let xp = vp[k];
        let xq = vq[k];
        vp[k] = c * xp - s * xq;
        vq[k] = s * xp + c * xq;
    }
}

/// Solve `A x = b` for symmetric positive definite `A` by Cholesky.
///
/// A pivot at or below `1e-12 · max diag(A)` is treated as loss of positive
/// definiteness.
pub fn solve_spd(a: &SymMatrix, b: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let n = a.order();
    if b.len() != n {
        return Err(Error::ShapeMismatch {
            what: "SPD right-hand side",
            expected: n,
            found: b.len(),
        });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SPD right-hand side"));
    }
    let max_diag = a.data.diag().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = 1e-12 * max_diag;

    // Lower-triangular factor, row-major.
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a.data[[j, j]];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > floor) {
            return Err(Error::NotSpd { index: j, value: d });
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a.data[[i, j]];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * z[k];
        }
        z[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Ok(Array1::from(x))
}

/// `(I − ηA)ᵗ p` by `t` explicit matrix-vector products.
pub fn apply_matrix_power(
    a: &SymMatrix,
    p: ArrayView1<'_, f64>,
    t: usize,
    eta: f64,
) -> Result<Array1<f64>> {
    let mut x = p.to_owned();
    for _ in 0..t {
        let ax = a.matvec(x.view())?;
        x.scaled_add(-eta, &ax);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix power result"));
    }
    Ok(x)
}

pub fn write_matrix_csv(path: &Path, a: ArrayView2<'_, f64>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in a.rows() {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .enumerate()
            .map(|(col, cell)| {
                cell.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    column: col + 1,
                    message: format!("{e}: {cell:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: lineno + 1,
                    column: row.len().min(first.len()) + 1,
                    message: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat)
        .map_err(|e| Error::InvalidSize(e.to_string()))
}

pub fn write_vector_csv(path: &Path, v: ArrayView1<'_, f64>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for x in v {
        writeln!(out, "{}", fmt_f64(*x))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_vector_csv(path: &Path) -> Result<Array1<f64>> {
    let m = read_matrix_csv(path)?;
    if m.ncols() != 1 && m.nrows() > 0 {
        return Err(Error::ShapeMismatch {
            what: "single-column vector file",
            expected: 1,
            found: m.ncols(),
        });
    }
    Ok(m.column(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_symmetric(n: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        SymMatrix::new(&a + &a.t()).unwrap()
    }

    fn random_spd(n: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        let mut a = g.dot(&g.t());
        for i in 0..n {
            a[[i, i]] += 0.5;
        }
        SymMatrix::new(a).unwrap()
    }

    fn recon_rel(a: &SymMatrix, d: &SpectralDecomposition) -> f64 {
        let diff = &a.view() - &d.reconstruct();
        diff.iter().map(|v| v * v).sum::<f64>().sqrt() / a.frobenius_norm().max(1.0)
    }

    #[test]
    fn construction_symmetrizes() {
        let s = SymMatrix::new(array![[1.0, 2.0], [4.0, 1.0]]).unwrap();
        assert_eq!(s.get(0, 1), 3.0);
        assert_eq!(s.get(1, 0), 3.0);
        assert!(matches!(
            SymMatrix::new(array![[1.0, f64::NAN], [0.0, 1.0]]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn diagonal_matrix_gives_permuted_identity() {
        let a = SymMatrix::from_diagonal(&[3.0, 1.0, 2.0]).unwrap();
        let d = eigh_symmetric(&a).unwrap();
        assert_eq!(d.eigenvalues.to_vec(), vec![3.0, 2.0, 1.0]);
        assert_eq!(
            d.eigenvectors,
            array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
        );
    }

    #[test]
    fn two_by_two_cosine_block() {
        let c = 0.9;
        let a = SymMatrix::new(array![[1.0, c], [c, 1.0]]).unwrap();
        let d = eigh_symmetric(&a).unwrap();
        assert!((d.eigenvalues[0] - 1.9).abs() < 1e-14);
        assert!((d.eigenvalues[1] - 0.1).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d.vector(0)[0] - h).abs() < 1e-14 && (d.vector(0)[1] - h).abs() < 1e-14);
        assert!((d.vector(1)[0] - h).abs() < 1e-14 && (d.vector(1)[1] + h).abs() < 1e-14);
    }

    #[test]
    fn random_reconstruction_and_orthonormality() {
        for (n, seed) in [(1, 1), (2, 2), (8, 3), (33, 4), (64, 5)] {
            let a = random_symmetric(n, seed);
            let d = eigh_symmetric(&a).unwrap();
            assert!(recon_rel(&a, &d) <= 1e-10, "n={n}");
            assert!(d.orthonormality_error() <= 1e-10, "n={n}");
            assert!(d.eigenvalues.windows(2).into_iter().all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn eigh_is_deterministic_and_sign_fixed() {
        let a = random_symmetric(12, 9);
        let d1 = eigh_symmetric(&a).unwrap();
        let d2 = eigh_symmetric(&a).unwrap();
        assert_eq!(d1, d2);
        for i in 0..12 {
            let first = d1.vector(i).iter().find(|v| v.abs() > 1e-12).copied().unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn gram_product_is_numerically_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let j = Array2::from_shape_fn((40, 7), |_| rng.random_range(-1.0..1.0));
        let k = SymMatrix::new(j.dot(&j.t())).unwrap();
        let d = eigh_symmetric(&k).unwrap();
        assert!(d.lambda_min() >= -1e-10 * d.lambda_max());
        let clamped = d.clamp_psd(1e-10).unwrap();
        assert!(clamped.eigenvalues.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn clamp_rejects_real_negatives() {
        let a = SymMatrix::from_diagonal(&[1.0, -0.5]).unwrap();
        let d = eigh_symmetric(&a).unwrap();
        assert!(matches!(d.clamp_psd(1e-10), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let b = array![0.3, -2.0, 5.5];
        let x = solve_spd(&SymMatrix::identity(3), b.view()).unwrap();
        assert_eq!(x, b);
        let a = SymMatrix::from_diagonal(&[2.0, 4.0]).unwrap();
        let x = solve_spd(&a, array![2.0, 8.0].view()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn solve_matches_eigen_inverse() {
        let a = random_spd(6, 21);
        let b = array![1.0, -1.0, 0.5, 2.0, 0.0, -0.25];
        let x = solve_spd(&a, b.view()).unwrap();
        // oracle: V Λ⁻¹ Vᵀ b
        let d = eigh_symmetric(&a).unwrap();
        let coeff = d.eigenvectors.t().dot(&b) / &d.eigenvalues;
        let oracle = d.eigenvectors.dot(&coeff);
        let rel = (&x - &oracle).mapv(f64::abs).fold(0.0, |m: f64, v| m.max(*v))
            / oracle.mapv(f64::abs).fold(0.0, |m: f64, v| m.max(*v));
        assert!(rel <= 1e-8, "rel = {rel}");
        let resid = &a.matvec(x.view()).unwrap() - &b;
        let bnorm = b.dot(&b).sqrt();
        assert!(resid.dot(&resid).sqrt() <= 1e-9 * bnorm.max(1.0));
    }

    #[test]
    fn solve_rejects_indefinite() {
        let a = SymMatrix::new(array![[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(
            solve_spd(&a, array![1.0, 1.0].view()),
            Err(Error::NotSpd { index: 1, .. })
        ));
    }

    #[test]
    fn matrix_power_cases() {
        let p = array![1.0, 1.0];
        let a = SymMatrix::identity(2);
        assert_eq!(apply_matrix_power(&a, p.view(), 0, 0.1).unwrap(), p);
        let x = apply_matrix_power(&a, p.view(), 3, 0.1).unwrap();
        assert!((x[0] - 0.729).abs() < 1e-15 && (x[1] - 0.729).abs() < 1e-15);
    }

    #[test]
    fn matrix_power_matches_spectral_form() {
        let a = random_symmetric(8, 31);
        let p = Array1::from_iter((0..8).map(|i| (i as f64).sin()));
        let eta = 0.05;
        let direct = apply_matrix_power(&a, p.view(), 10, eta).unwrap();
        let d = eigh_symmetric(&a).unwrap();
        let mut spectral = Array1::zeros(8);
        for i in 0..8 {
            let v = d.vector(i);
            let w = (1.0 - eta * d.eigenvalues[i]).powi(10) * v.dot(&p);
            spectral.scaled_add(w, &v);
        }
        let err = (&direct - &spectral).mapv(f64::abs).fold(0.0, |m: f64, v| m.max(*v));
        assert!(err <= 1e-9, "err = {err}");
    }

    #[test]
    fn matrix_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        let a = random_symmetric(5, 3);
        write_matrix_csv(&path, a.view()).unwrap();
        let back = read_matrix_csv(&path).unwrap();
        assert_eq!(back, a.view());
        let vpath = dir.path().join("v.csv");
        let v = array![0.1, 1.0 / 3.0, -2e-300];
        write_vector_csv(&vpath, v.view()).unwrap();
        assert_eq!(read_vector_csv(&vpath).unwrap(), v);
    }

    #[test]
    fn matrix_csv_reports_bad_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,2\n3,abc\n").unwrap();
        match read_matrix_csv(&path) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
