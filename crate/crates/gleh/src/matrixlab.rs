//! Dense small-matrix numerics shared by all modules: Lyapunov solves,
//! spectral checks, matrix exponentials, and a few block-assembly helpers.
//!
//! Matrices here are small (n rarely above ~15, never above 100), so the
//! solvers favor simplicity and exactness over asymptotic speed: the
//! Lyapunov equation is solved by Kronecker vectorization and a dense LU.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::real::{convert, Real};

/// Eigenvalue real parts must exceed this for a matrix to count as positive
/// stable; absorbs eigenvalue roundoff while rejecting marginal spectra.
pub const STABILITY_TOL: f64 = 1e-9;

/// Condition numbers above this are treated as numerically singular.
pub const SINGULAR_COND: f64 = 1e12;

/// Outcome of an eigenvalue-based positive-stability check.
#[derive(Debug, Clone)]
pub struct SpectralReport<T: Real> {
    /// Eigenvalues of the matrix (complex, unordered).
    pub eigenvalues: Vec<Complex<T>>,
    /// Smallest real part over all eigenvalues.
    pub min_real_part: T,
    /// True iff `min_real_part` exceeds [`STABILITY_TOL`].
    pub positive_stable: bool,
}

/// Computes the spectrum of a square matrix and reports whether all
/// eigenvalue real parts exceed the stability tolerance.
pub fn spectral_check<T: Real>(m: &DMatrix<T>) -> SpectralReport<T> {
    assert!(m.is_square(), "spectral_check requires a square matrix");
    let eigenvalues: Vec<Complex<T>> = m.complex_eigenvalues().iter().copied().collect();
    let min_real_part = eigenvalues
        .iter()
        .map(|ev| ev.re)
        .fold(T::of(f64::INFINITY), |a, b| if b < a { b } else { a });
    SpectralReport {
        eigenvalues,
        min_real_part,
        positive_stable: min_real_part > convert(STABILITY_TOL),
    }
}

fn check_positive_stable<T: Real>(gamma: &DMatrix<T>) -> Result<()> {
    let report = spectral_check(gamma);
    if !report.positive_stable {
        return Err(Error::NotPositiveStable {
            min_real_part: report.min_real_part.to_f64_lossy(),
            tolerance: STABILITY_TOL,
        });
    }
    Ok(())
}

/// Kronecker product `a (x) b`.
pub fn kron<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

/// Solves `gamma J + J gamma* = q` for `J` by Kronecker vectorization.
///
/// `gamma` must be positive stable (checked) so the solution exists and is
/// unique. When `q` is symmetric the returned `J` is symmetrized, which the
/// equation structure guarantees is still a solution.
pub fn solve_lyapunov<T: Real>(gamma: &DMatrix<T>, q: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = gamma.nrows();
    if !gamma.is_square() || q.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "lyapunov: gamma is {}x{}, q is {}x{}",
            gamma.nrows(),
            gamma.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    check_positive_stable(gamma)?;

    // vec(gamma J) = (I (x) gamma) vec(J), vec(J gamma^T) = (gamma (x) I) vec(J)
    let eye = DMatrix::<T>::identity(n, n);
    let system = kron(&eye, gamma) + kron(gamma, &eye);
    let rhs = DVector::from_column_slice(q.as_slice());
    let solution = system.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
    let j = DMatrix::from_column_slice(n, n, solution.as_slice());

    let q_symmetric = (q - q.transpose()).norm() <= convert::<T>(1e-14) * (T::one() + q.norm());
    if q_symmetric {
        Ok((&j + j.transpose()) * convert::<T>(0.5))
    } else {
        Ok(j)
    }
}

/// Residual `||gamma J + J gamma* - q||` (Frobenius) of a candidate solution.
pub fn lyapunov_residual<T: Real>(gamma: &DMatrix<T>, q: &DMatrix<T>, j: &DMatrix<T>) -> T {
    (gamma * j + j * gamma.transpose() - q).norm()
}

/// Independent Lyapunov oracle: assembles the n^2 x n^2 linear system
/// entry by entry from the defining equation and solves it with its own
/// Gaussian elimination. Shares no code with [`solve_lyapunov`]; used by
/// tests to cross-check the production route.
pub fn solve_lyapunov_oracle<T: Real>(gamma: &DMatrix<T>, q: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = gamma.nrows();
    if !gamma.is_square() || q.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "lyapunov oracle: gamma is {}x{}, q is {}x{}",
            gamma.nrows(),
            gamma.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }

    // Row (i,k): sum_j gamma[i][j] J[j][k] + sum_l J[i][l] gamma[k][l] = q[i][k],
    // with unknowns J[a][b] flattened as a*n + b.
    let m = n * n;
    let mut a = vec![T::zero(); m * m];
    let mut b = vec![T::zero(); m];
    for i in 0..n {
        for k in 0..n {
            let row = i * n + k;
            for j in 0..n {
                a[row * m + (j * n + k)] += gamma[(i, j)];
            }
            for l in 0..n {
                a[row * m + (i * n + l)] += gamma[(k, l)];
            }
            b[row] = q[(i, k)];
        }
    }

    // Gaussian elimination with partial pivoting.
    for col in 0..m {
        let mut pivot = col;
        let mut best = a[col * m + col].abs();
        for row in (col + 1)..m {
            let mag = a[row * m + col].abs();
            if mag > best {
                best = mag;
                pivot = row;
            }
        }
        if best <= T::of(f64::MIN_POSITIVE) {
            return Err(Error::SingularSystem);
        }
        if pivot != col {
            for j in 0..m {
                a.swap(pivot * m + j, col * m + j);
            }
            b.swap(pivot, col);
        }
        for row in (col + 1)..m {
            let factor = a[row * m + col] / a[col * m + col];
            if factor == T::zero() {
                continue;
            }
            for j in col..m {
                let update = factor * a[col * m + j];
                a[row * m + j] -= update;
            }
            let update = factor * b[col];
            b[row] -= update;
        }
    }
    let mut x = vec![T::zero(); m];
    for row in (0..m).rev() {
        let mut acc = b[row];
        for j in (row + 1)..m {
            acc -= a[row * m + j] * x[j];
        }
        x[row] = acc / a[row * m + row];
    }

    Ok(DMatrix::from_fn(n, n, |i, j| x[i * n + j]))
}

// Pade-13 coefficients and order thresholds for expm (Higham 2005).
const PADE13_B: [f64; 14] = [
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
const THETA13: f64 = 5.371920351148152;
const MAX_SQUARINGS: u32 = 64;

/// Matrix exponential `e^{m t}` by Pade-13 approximation with scaling and
/// squaring. Accurate to ~1e-12 relative (in `f64`) for moderate `||m t||`.
pub fn expm<T: Real>(m: &DMatrix<T>, t: T) -> Result<DMatrix<T>> {
    assert!(m.is_square(), "expm requires a square matrix");
    let n = m.nrows();
    let a = m * t;
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow { norm: f64::NAN });
    }
    let norm = one_norm(&a);
    let squarings = if norm <= convert(THETA13) {
        0
    } else {
        let s = (norm.to_f64_lossy() / THETA13).log2().ceil() as i64;
        if s < 0 || s as u32 > MAX_SQUARINGS {
            return Err(Error::Overflow {
                norm: norm.to_f64_lossy(),
            });
        }
        s as u32
    };
    let scaled = &a * convert::<T>(0.5f64.powi(squarings as i32));
    let mut result = pade13(&scaled, n);
    for _ in 0..squarings {
        result = &result * &result;
    }
    if result.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow {
            norm: norm.to_f64_lossy(),
        });
    }
    Ok(result)
}

fn pade13<T: Real>(a: &DMatrix<T>, n: usize) -> DMatrix<T> {
    let eye = DMatrix::<T>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let b: Vec<T> = PADE13_B.iter().map(|&v| convert(v)).collect();

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &eye * b[1];
    let u = a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &eye * b[0];

    let denom = &v - &u;
    let numer = &v + &u;
    denom
        .lu()
        .solve(&numer)
        .expect("Pade denominator is nonsingular for scaled input")
}

fn one_norm<T: Real>(m: &DMatrix<T>) -> T {
    let mut best = T::zero();
    for j in 0..m.ncols() {
        let mut sum = T::zero();
        for i in 0..m.nrows() {
            sum += m[(i, j)].abs();
        }
        if sum > best {
            best = sum;
        }
    }
    best
}

/// Symmetric positive-semidefinite square root, via the symmetric
/// eigendecomposition with negative eigenvalues clamped to zero.
pub fn sym_sqrt<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    assert!(m.is_square(), "sym_sqrt requires a square matrix");
    let sym = (m + m.transpose()) * convert::<T>(0.5);
    let asym = (m - m.transpose()).norm();
    if asym > convert::<T>(1e-8) * (T::one() + m.norm()) {
        return Err(Error::DomainViolation(format!(
            "sym_sqrt on a non-symmetric matrix (asymmetry {:e})",
            asym
        )));
    }
    let eig = sym.symmetric_eigen();
    let scale = m.norm();
    for ev in eig.eigenvalues.iter() {
        if *ev < -convert::<T>(1e-8) * (T::one() + scale) {
            return Err(Error::DomainViolation(format!(
                "sym_sqrt of an indefinite matrix (eigenvalue {:e})",
                *ev
            )));
        }
    }
    let roots: Vec<T> = eig
        .eigenvalues
        .iter()
        .map(|&ev| if ev > T::zero() { ev.sqrt() } else { T::zero() })
        .collect();
    let d = DMatrix::from_diagonal(&DVector::from_vec(roots));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// 2-norm condition number from the SVD; returns `inf` for exactly singular
/// matrices.
pub fn condition_number<T: Real>(m: &DMatrix<T>) -> T {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(T::zero(), |a, b| if b > a { b } else { a });
    let min = sv
        .iter()
        .cloned()
        .fold(T::of(f64::INFINITY), |a, b| if b < a { b } else { a });
    if min <= T::zero() {
        T::of(f64::INFINITY)
    } else {
        max / min
    }
}

/// Solves `m x = b` by LU, reporting singularity as an error.
pub fn solve_linear<T: Real>(m: &DMatrix<T>, b: &DVector<T>) -> Result<DVector<T>> {
    m.clone().lu().solve(b).ok_or(Error::SingularSystem)
}

/// Matrix inverse by LU, reporting singularity as an error.
pub fn invert<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    m.clone().try_inverse().ok_or(Error::SingularSystem)
}

/// Writes `block` into `target` with its upper-left corner at `(row, col)`.
pub fn set_block<T: Real>(target: &mut DMatrix<T>, row: usize, col: usize, block: &DMatrix<T>) {
    target
        .view_mut((row, col), (block.nrows(), block.ncols()))
        .copy_from(block);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat(n: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, data)
    }

    #[test]
    fn lyapunov_identity_case() {
        let gamma = DMatrix::<f64>::identity(3, 3);
        let q = DMatrix::<f64>::identity(3, 3) * 2.0;
        let j = solve_lyapunov(&gamma, &q).unwrap();
        assert_relative_eq!(j, DMatrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_explicit_three_by_three() {
        // gamma is the extended damping matrix of the unit-parameter scalar
        // model; J has an exact rational solution.
        let gamma = mat(3, &[0.0, 1.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 0.0, 1.0]));
        let j = solve_lyapunov(&gamma, &q).unwrap();
        let expected = mat(
            3,
            &[
                0.5,
                1.0 / 3.0,
                1.0 / 3.0,
                1.0 / 3.0,
                1.0 / 3.0,
                1.0 / 6.0,
                1.0 / 3.0,
                1.0 / 6.0,
                0.5,
            ],
        );
        assert_relative_eq!(j, expected, epsilon = 1e-12);
        assert!(lyapunov_residual(&gamma, &q, &j) <= 1e-10 * (1.0 + q.norm()));
        let oracle = solve_lyapunov_oracle(&gamma, &q).unwrap();
        assert_relative_eq!(j, oracle, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_rejects_rotation() {
        let gamma = mat(2, &[0.0, 1.0, -1.0, 0.0]);
        let q = DMatrix::<f64>::identity(2, 2);
        match solve_lyapunov(&gamma, &q) {
            Err(Error::NotPositiveStable { .. }) => {}
            other => panic!("expected NotPositiveStable, got {other:?}"),
        }
    }

    #[test]
    fn lyapunov_rejects_dimension_mismatch() {
        let gamma = DMatrix::<f64>::identity(3, 3);
        let q = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            solve_lyapunov(&gamma, &q),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn oracle_scalar_and_diagonal() {
        let j = solve_lyapunov_oracle(
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        assert_relative_eq!(j[(0, 0)], 1.0, epsilon = 1e-14);

        let gamma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let j = solve_lyapunov_oracle(&gamma, &q).unwrap();
        assert_relative_eq!(j, DMatrix::identity(2, 2), epsilon = 1e-13);
    }

    #[test]
    fn oracle_agrees_on_random_instance() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = 4;
            let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let shift = raw.norm() + 0.1;
            let gamma = raw + DMatrix::identity(n, n) * shift;
            let half = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let q = &half * half.transpose();
            let j = solve_lyapunov(&gamma, &q).unwrap();
            let oracle = solve_lyapunov_oracle(&gamma, &q).unwrap();
            let rel = (&j - &oracle).norm() / (1.0 + j.norm());
            assert!(rel <= 1e-9, "solver/oracle disagreement {rel:e}");
        }
    }

    #[test]
    fn spectral_check_reports_identity_and_nilpotent() {
        let report = spectral_check(&DMatrix::<f64>::identity(2, 2));
        assert!(report.positive_stable);
        assert_relative_eq!(report.min_real_part, 1.0, epsilon = 1e-12);

        let nilpotent = mat(2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(!spectral_check(&nilpotent).positive_stable);
    }

    #[test]
    fn spectral_check_unit_parameter_extended_matrix() {
        // Eigenvalues are 1 and 1/2 +- i sqrt(3)/2.
        let gamma = mat(3, &[0.0, 1.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let report = spectral_check(&gamma);
        assert!(report.positive_stable);
        let mut reals: Vec<f64> = report.eigenvalues.iter().map(|e| e.re).collect();
        reals.sort_by(f64::total_cmp);
        assert_relative_eq!(reals[0], 0.5, epsilon = 1e-10);
        assert_relative_eq!(reals[1], 0.5, epsilon = 1e-10);
        assert_relative_eq!(reals[2], 1.0, epsilon = 1e-10);
        let max_imag = report
            .eigenvalues
            .iter()
            .map(|e| e.im.abs())
            .fold(0.0, f64::max);
        assert_relative_eq!(max_imag, 3.0f64.sqrt() / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn expm_basics() {
        let m = mat(2, &[0.3, -0.7, 1.1, 0.2]);
        let at_zero = expm(&m, 0.0).unwrap();
        assert_relative_eq!(at_zero, DMatrix::identity(2, 2), epsilon = 1e-14);

        let d = DMatrix::from_element(1, 1, -2.0);
        let e = expm(&d, 1.0).unwrap();
        assert_relative_eq!(e[(0, 0)], (-2.0f64).exp(), epsilon = 1e-13);

        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![0.4, -1.3]));
        let e = expm(&diag, 2.0).unwrap();
        assert_relative_eq!(e[(0, 0)], (0.8f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(e[(1, 1)], (-2.6f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(e[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn expm_overflow_detected() {
        let m = DMatrix::from_element(1, 1, 1.0);
        match expm(&m, 1e25) {
            Err(Error::Overflow { .. }) => {}
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn sym_sqrt_roundtrip() {
        let half = mat(3, &[1.0, 0.2, 0.0, -0.4, 2.0, 0.3, 0.1, 0.0, 0.5]);
        let m = &half * half.transpose();
        let root = sym_sqrt(&m).unwrap();
        assert_relative_eq!(&root * &root, m, epsilon = 1e-10);
    }
}
