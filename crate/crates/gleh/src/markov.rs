//! Markovianization of the GLE: the extended system on
//! `(x, v, y, beta)` whose velocity block carries the damping matrix
//! `gamma_hat`, plus the closed-form block inverse and the sampled
//! resolvent condition used to verify the homogenization hypotheses.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrixlab::{self, condition_number, set_block, spectral_check, SINGULAR_COND};
use crate::model::{effective_constants, GleSystem};
use crate::real::{convert, Real};

/// Offsets of the (v, y, beta) blocks inside the extended velocity state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub d: usize,
    pub d1: usize,
    pub d2: usize,
}

impl BlockLayout {
    pub fn v_offset(&self) -> usize {
        0
    }

    pub fn y_offset(&self) -> usize {
        self.d
    }

    pub fn beta_offset(&self) -> usize {
        self.d + self.d1
    }

    /// Total extended dimension `n = d + d1 + d2`.
    pub fn n(&self) -> usize {
        self.d + self.d1 + self.d2
    }
}

/// The extended Markovian form of a GLE at a given scale `epsilon`.
///
/// The dynamics are `dx = v dt` and
/// `epsilon du = -gamma_hat(x) u dt + F_hat(x) dt + sigma_hat dW` for the
/// stacked velocity state `u = (v, y, beta)`. `epsilon` is carried as a
/// plain parameter so a single model yields the whole scale family.
#[derive(Debug, Clone)]
pub struct ExtendedSystem<T: Real> {
    pub system: GleSystem<T>,
    pub epsilon: T,
    pub layout: BlockLayout,
}

/// Assembles the extended system; dimensions are validated against the
/// coefficient field.
pub fn build_extended<T: Real>(system: &GleSystem<T>, epsilon: T) -> Result<ExtendedSystem<T>> {
    if epsilon <= T::zero() {
        return Err(Error::InvalidModel("epsilon must be positive".into()));
    }
    let layout = BlockLayout {
        d: system.dim(),
        d1: system.kernel.state_dim(),
        d2: system.noise.state_dim(),
    };
    Ok(ExtendedSystem {
        system: system.clone(),
        epsilon,
        layout,
    })
}

impl<T: Real> ExtendedSystem<T> {
    /// The block damping matrix of the extended velocity equation:
    ///
    /// ```text
    /// [      0          g C1 / m0    -sigma C2 / m0 ]
    /// [ -M1 C1* h / tk   Gamma1 / tk        0       ]
    /// [      0               0         Gamma2 / tx  ]
    /// ```
    pub fn gamma_hat(&self, x: &DVector<T>) -> DMatrix<T> {
        let s = &self.system;
        let lay = self.layout;
        let n = lay.n();
        let mut out = DMatrix::<T>::zeros(n, n);
        let inv_m0 = T::one() / s.m0;
        let inv_tk = T::one() / s.tau_kappa;
        let inv_tx = T::one() / s.tau_xi;

        let g = s.coeffs.g(x);
        let h = s.coeffs.h(x);
        let sigma = s.coeffs.sigma(x);

        set_block(&mut out, 0, lay.y_offset(), &(&g * &s.kernel.c * inv_m0));
        set_block(
            &mut out,
            0,
            lay.beta_offset(),
            &(-(&sigma * &s.noise.c) * inv_m0),
        );
        set_block(
            &mut out,
            lay.y_offset(),
            0,
            &(-(&s.kernel.m * s.kernel.c.transpose() * &h) * inv_tk),
        );
        set_block(
            &mut out,
            lay.y_offset(),
            lay.y_offset(),
            &(&s.kernel.gamma * inv_tk),
        );
        set_block(
            &mut out,
            lay.beta_offset(),
            lay.beta_offset(),
            &(&s.noise.gamma * inv_tx),
        );
        out
    }

    /// Extended force vector `[F/m0; 0; 0]`.
    pub fn f_hat(&self, x: &DVector<T>) -> DVector<T> {
        let lay = self.layout;
        let mut out = DVector::<T>::zeros(lay.n());
        let f = self.system.coeffs.force(x) / self.system.m0;
        out.rows_mut(0, lay.d).copy_from(&f);
        out
    }

    /// Constant extended noise factor `[0; 0; Sigma2 / tx]`.
    pub fn sigma_hat(&self) -> DMatrix<T> {
        let lay = self.layout;
        let q2 = self.system.noise.wiener_dim();
        let mut out = DMatrix::<T>::zeros(lay.n(), q2);
        set_block(
            &mut out,
            lay.beta_offset(),
            0,
            &(&self.system.noise.sigma / self.system.tau_xi),
        );
        out
    }

    /// Checks positive stability of `gamma_hat` at every probe state.
    pub fn verify_stability(&self) -> Result<()> {
        for x in self.system.probes.points() {
            let report = spectral_check(&self.gamma_hat(&x));
            if !report.positive_stable {
                return Err(Error::NotPositiveStable {
                    min_real_part: report.min_real_part.to_f64_lossy(),
                    tolerance: matrixlab::STABILITY_TOL,
                });
            }
        }
        Ok(())
    }
}

/// theta(x) = g(x) K1 h(x), failing if it is numerically singular.
pub fn theta<T: Real>(system: &GleSystem<T>, x: &DVector<T>) -> Result<DMatrix<T>> {
    let constants = effective_constants(system)?;
    theta_with_k1(system, &constants.k1, x)
}

pub(crate) fn theta_with_k1<T: Real>(
    system: &GleSystem<T>,
    k1: &DMatrix<T>,
    x: &DVector<T>,
) -> Result<DMatrix<T>> {
    let th = system.coeffs.g(x) * k1 * system.coeffs.h(x);
    let cond = condition_number(&th);
    if !(cond < convert(SINGULAR_COND)) {
        return Err(Error::SingularTheta {
            state: format!(
                "{:?}",
                x.as_slice()
                    .iter()
                    .map(|v| v.to_f64_lossy())
                    .collect::<Vec<_>>()
            ),
            condition: cond.to_f64_lossy(),
        });
    }
    Ok(th)
}

/// Closed-form block inverse of `gamma_hat(x)`:
///
/// ```text
/// [ m0 th^-1                 -tk th^-1 g C1 G1^-1                          tx th^-1 s C2 G2^-1              ]
/// [ m0 G1^-1 M1 C1* h th^-1   tk G1^-1 (I - M1 C1* h th^-1 g C1 G1^-1)     tx G1^-1 M1 C1* h th^-1 s C2 G2^-1 ]
/// [ 0                         0                                            tx G2^-1                         ]
/// ```
pub fn gamma_hat_inverse<T: Real>(system: &GleSystem<T>, x: &DVector<T>) -> Result<DMatrix<T>> {
    let th = theta(system, x)?;
    let th_inv = matrixlab::invert(&th)?;
    let g = system.coeffs.g(x);
    let h = system.coeffs.h(x);
    let sigma = system.coeffs.sigma(x);
    let g1_inv = matrixlab::invert(&system.kernel.gamma)?;
    let g2_inv = matrixlab::invert(&system.noise.gamma)?;
    let c1 = &system.kernel.c;
    let c2 = &system.noise.c;
    let m1 = &system.kernel.m;
    let m0 = system.m0;
    let tk = system.tau_kappa;
    let tx = system.tau_xi;

    let d = system.dim();
    let d1 = system.kernel.state_dim();
    let d2 = system.noise.state_dim();
    let n = d + d1 + d2;
    let mut out = DMatrix::<T>::zeros(n, n);

    let m1c1h = m1 * c1.transpose() * &h;
    let sc2g2 = &sigma * c2 * &g2_inv;

    set_block(&mut out, 0, 0, &(&th_inv * m0));
    set_block(&mut out, 0, d, &(-(&th_inv * &g * c1 * &g1_inv) * tk));
    set_block(&mut out, 0, d + d1, &(&th_inv * &sc2g2 * tx));

    set_block(&mut out, d, 0, &(&g1_inv * &m1c1h * &th_inv * m0));
    let middle = &g1_inv
        * (DMatrix::<T>::identity(d1, d1) - &m1c1h * &th_inv * &g * c1 * &g1_inv)
        * tk;
    set_block(&mut out, d, d, &middle);
    set_block(
        &mut out,
        d,
        d + d1,
        &(&g1_inv * &m1c1h * &th_inv * &sc2g2 * tx),
    );

    set_block(&mut out, d + d1, d + d1, &(&g2_inv * tx));
    Ok(out)
}

/// One sampled point of the resolvent condition.
#[derive(Debug, Clone)]
pub struct BLambdaSample<T: Real> {
    pub lambda: Complex<T>,
    pub probe_index: usize,
    pub min_singular_value: T,
}

/// Report of the sampled resolvent condition: `B_lambda(x)` must be
/// invertible on the right half plane. Sampling a finite grid is a
/// heuristic, not a proof; pair it with the stability check at probes.
#[derive(Debug, Clone)]
pub struct BLambdaReport<T: Real> {
    pub samples: Vec<BLambdaSample<T>>,
    pub threshold: T,
    pub verdict: bool,
}

impl<T: Real> BLambdaReport<T> {
    pub fn worst(&self) -> Option<&BLambdaSample<T>> {
        self.samples.iter().min_by(|a, b| {
            a.min_singular_value
                .partial_cmp(&b.min_singular_value)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    }
}

/// Default sampling grid: 12 log-spaced radii in `[1e-3, 1e3]` crossed with
/// 9 angles interior to `(-pi/2, pi/2)`.
pub fn default_lambda_grid<T: Real>() -> Vec<Complex<T>> {
    let mut grid = Vec::with_capacity(12 * 9);
    for i in 0..12 {
        let exponent = -3.0 + 6.0 * (i as f64) / 11.0;
        let radius = 10.0f64.powf(exponent);
        for j in 1..=9 {
            let angle = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * (j as f64) / 10.0;
            grid.push(Complex::new(
                convert(radius * angle.cos()),
                convert(radius * angle.sin()),
            ));
        }
    }
    grid
}

fn to_complex<T: Real>(m: &DMatrix<T>) -> DMatrix<Complex<T>> {
    m.map(|v| Complex::new(v, T::zero()))
}

/// Laplace transform of the memory kernel,
/// `kappa_tilde(z) = C1 (z I + Gamma1)^{-1} M1 C1*`.
pub fn kernel_laplace<T: Real>(
    kernel: &crate::model::RealizationTriple<T>,
    z: Complex<T>,
) -> Result<DMatrix<Complex<T>>> {
    let d1 = kernel.state_dim();
    let shifted = to_complex(&kernel.gamma) + DMatrix::<Complex<T>>::identity(d1, d1) * z;
    let inv = shifted.try_inverse().ok_or(Error::SingularSystem)?;
    Ok(to_complex(&kernel.c) * inv * to_complex(&kernel.m) * to_complex(&kernel.c).transpose())
}

/// Samples `B_lambda(x) = I + g(x) kappa_tilde(lambda tau_kappa) h(x) / (lambda m0)`
/// over the probe states and the lambda grid, recording the smallest
/// singular value at each sample.
pub fn check_b_lambda<T: Real>(
    system: &GleSystem<T>,
    x_probes: &[DVector<T>],
    lambda_grid: &[Complex<T>],
) -> Result<BLambdaReport<T>> {
    if x_probes.is_empty() || lambda_grid.is_empty() {
        return Err(Error::InvalidModel(
            "resolvent check requires nonempty probe and lambda grids".into(),
        ));
    }
    let threshold = convert::<T>(1e-8);
    let d = system.dim();
    let mut samples = Vec::with_capacity(x_probes.len() * lambda_grid.len());
    let mut verdict = true;
    for (probe_index, x) in x_probes.iter().enumerate() {
        let g = to_complex(&system.coeffs.g(x));
        let h = to_complex(&system.coeffs.h(x));
        for &lambda in lambda_grid {
            let kt = kernel_laplace(&system.kernel, lambda * Complex::new(system.tau_kappa, T::zero()))?;
            let scale = (lambda * Complex::new(system.m0, T::zero())).inv();
            let b = DMatrix::<Complex<T>>::identity(d, d) + (&g * &kt * &h) * scale;
            let sv = b.singular_values();
            let min_sv = sv
                .iter()
                .cloned()
                .fold(T::of(f64::INFINITY), |a, b| if b < a { b } else { a });
            if !(min_sv > threshold) {
                verdict = false;
            }
            samples.push(BLambdaSample {
                lambda,
                probe_index,
                min_singular_value: min_sv,
            });
        }
    }
    Ok(BLambdaReport {
        samples,
        threshold,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::model::{harmonic_realization, ou_realization, CoefficientField};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn diag(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(values))
    }

    fn ou_scalar_system(
        g_expr: &str,
        sigma_expr: &str,
        alpha: f64,
        m0: f64,
        tk: f64,
        te: f64,
    ) -> GleSystem<f64> {
        let (kernel, noise) = ou_realization(&diag(&[alpha])).unwrap();
        let coeffs = CoefficientField::scalar_1d(
            Expr::constant(0.0),
            Expr::parse(g_expr).unwrap(),
            Expr::parse(g_expr).unwrap(),
            Expr::parse(sigma_expr).unwrap(),
        );
        GleSystem::new(coeffs, kernel, noise, m0, tk, te).unwrap()
    }

    #[test]
    fn gamma_hat_matches_scalar_ou_template() {
        let m0 = 0.7;
        let tk = 1.3;
        let te = 0.4;
        let alpha = 1.9;
        let system = ou_scalar_system("sqrt(2 + sin(x))", "exp(cos(x))", alpha, m0, tk, te);
        let ext = build_extended(&system, 0.1).unwrap();
        let x = DVector::from_element(1, 0.3);
        let g = (2.0 + 0.3f64.sin()).sqrt();
        let sigma = (0.3f64.cos()).exp();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[
                0.0,
                g / m0,
                -sigma / m0,
                -alpha * g / tk,
                alpha / tk,
                0.0,
                0.0,
                0.0,
                alpha / te,
            ],
        );
        assert_relative_eq!(ext.gamma_hat(&x), expected, epsilon = 1e-12);
        assert_relative_eq!(ext.f_hat(&x), DVector::zeros(3), epsilon = 1e-15);
        let sig_hat = ext.sigma_hat();
        assert_relative_eq!(sig_hat[(2, 0)], alpha / te, epsilon = 1e-12);
        assert_relative_eq!(sig_hat[(0, 0)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(sig_hat[(1, 0)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gamma_hat_harmonic_five_by_five_template() {
        let omega = 1.4f64;
        let m0 = 0.9;
        let tk = 0.6;
        let th = 1.1;
        let (kernel, noise) = harmonic_realization(&diag(&[omega]), 1.0).unwrap();
        let coeffs = CoefficientField::scalar_1d(
            Expr::constant(0.0),
            Expr::parse("sqrt(2 + sin(x))").unwrap(),
            Expr::parse("sqrt(2 + sin(x))").unwrap(),
            Expr::parse("1 + x * x").unwrap(),
        );
        let system = GleSystem::new(coeffs, kernel, noise, m0, tk, th).unwrap();
        let ext = build_extended(&system, 0.05).unwrap();
        let x = DVector::from_element(1, -0.4);
        let g = (2.0 + (-0.4f64).sin()).sqrt();
        let sigma = 1.0 + 0.16;
        let w2 = omega * omega;
        let expected = DMatrix::from_row_slice(
            5,
            5,
            &[
                0.0, g / m0, g / m0, -sigma / m0, 0.0,
                -g / tk, w2 / (2.0 * tk), 2.0 / tk - w2 / (2.0 * tk), 0.0, 0.0,
                0.0, -w2 / (2.0 * tk), w2 / (2.0 * tk), 0.0, 0.0,
                0.0, 0.0, 0.0, 0.0, -1.0 / th,
                0.0, 0.0, 0.0, w2 / th, w2 / th,
            ],
        );
        assert_relative_eq!(ext.gamma_hat(&x), expected, epsilon = 1e-12);
    }

    #[test]
    fn inverse_agrees_with_dense_solve() {
        let system = ou_scalar_system("sqrt(2 + sin(x))", "sqrt(2 + sin(x))", 1.0, 1.0, 1.0, 1.0);
        let ext = build_extended(&system, 1.0).unwrap();
        for &xv in &[-1.2, 0.0, 0.8] {
            let x = DVector::from_element(1, xv);
            let closed = gamma_hat_inverse(&system, &x).unwrap();
            let gamma = ext.gamma_hat(&x);
            let dense = gamma.clone().try_inverse().unwrap();
            assert_relative_eq!(closed, dense, epsilon = 1e-10);
            let product = gamma * &closed;
            assert!((product - DMatrix::<f64>::identity(3, 3)).norm() <= 1e-9);
        }
    }

    #[test]
    fn inverse_top_left_block_is_m0_theta_inverse() {
        let m0 = 2.3;
        let system = ou_scalar_system("sqrt(3 + cos(x))", "1", 1.2, m0, 0.7, 0.9);
        let x = DVector::from_element(1, 0.5);
        let inv = gamma_hat_inverse(&system, &x).unwrap();
        let g2 = 3.0 + 0.5f64.cos();
        assert_relative_eq!(inv[(0, 0)], m0 / g2, epsilon = 1e-12);
    }

    #[test]
    fn inverse_rejects_vanishing_g() {
        let system = ou_scalar_system("x", "1", 1.0, 1.0, 1.0, 1.0);
        let x = DVector::from_element(1, 0.0);
        assert!(matches!(
            gamma_hat_inverse(&system, &x),
            Err(Error::SingularTheta { .. })
        ));
    }

    #[test]
    fn b_lambda_scalar_constant_case() {
        // g = h = sqrt(gamma0): both roots of m0 tk l^2 + m0 a l + g0 a have
        // negative real parts, so the resolvent condition holds.
        let gamma0 = 2.5f64;
        let system = ou_scalar_system(
            &format!("sqrt({gamma0})"),
            "1",
            1.0,
            1.0,
            1.0,
            1.0,
        );
        let probes = vec![DVector::from_element(1, 0.0)];
        let report = check_b_lambda(&system, &probes, &default_lambda_grid()).unwrap();
        assert!(report.verdict);

        // Root-analysis oracle for the same quadratic.
        let (m0, tk, alpha) = (1.0f64, 1.0, 1.0);
        let disc = (m0 * alpha).powi(2) - 4.0 * m0 * tk * gamma0 * alpha;
        if disc >= 0.0 {
            let r1 = (-m0 * alpha + disc.sqrt()) / (2.0 * m0 * tk);
            let r2 = (-m0 * alpha - disc.sqrt()) / (2.0 * m0 * tk);
            assert!(r1 < 0.0 && r2 < 0.0);
        } else {
            assert!(-m0 * alpha / (2.0 * m0 * tk) < 0.0);
        }
    }

    #[test]
    fn b_lambda_zero_coupling_is_identity() {
        let (kernel, noise) = ou_realization(&diag(&[1.0])).unwrap();
        let coeffs = CoefficientField::constant(
            DVector::zeros(1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
        );
        let system = GleSystem::new(coeffs, kernel, noise, 1.0, 1.0, 1.0).unwrap();
        let probes = vec![DVector::from_element(1, 0.0)];
        let report = check_b_lambda(&system, &probes, &default_lambda_grid()).unwrap();
        assert!(report.verdict);
        for sample in &report.samples {
            assert_relative_eq!(sample.min_singular_value, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn b_lambda_commuting_positive_definite_case() {
        let (kernel, noise) = ou_realization(&diag(&[1.0, 2.0])).unwrap();
        let g = diag(&[1.5, 0.8]);
        let coeffs = CoefficientField::constant(
            DVector::zeros(2),
            g.clone(),
            g,
            DMatrix::identity(2, 2),
        );
        let system = GleSystem::new(coeffs, kernel, noise, 0.8, 1.1, 0.9).unwrap();
        let probes = vec![DVector::zeros(2)];
        let report = check_b_lambda(&system, &probes, &default_lambda_grid()).unwrap();
        assert!(report.verdict);
        let ext = build_extended(&system, 0.1).unwrap();
        ext.verify_stability().unwrap();
    }
}
