//! The GLE data model: realization triples for memory kernels and noise
//! covariances, state-dependent coefficient fields, full pre-limit systems,
//! and the Ornstein-Uhlenbeck / harmonic-noise special constructions.
//!
//! A memory kernel (and likewise a stationary Gaussian noise covariance) is
//! specified by a triple of matrices `(Gamma, M, C)` through
//! `kappa(t) = C e^{-Gamma |t|} M C*`; the driving-noise factor `Sigma`
//! closes the Lyapunov identity `Gamma M + M Gamma* = Sigma Sigma*`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrixlab::{self, condition_number, set_block, SINGULAR_COND};
use crate::real::{convert, Real};
use crate::sobol;

type VecFn<T> = Arc<dyn Fn(&DVector<T>) -> DVector<T> + Send + Sync>;
type MatFn<T> = Arc<dyn Fn(&DVector<T>) -> DMatrix<T> + Send + Sync>;
type JacFn<T> = Arc<dyn Fn(&DVector<T>) -> Vec<DMatrix<T>> + Send + Sync>;

/// Lyapunov-consistency and symmetry tolerance for triple validation.
const TRIPLE_TOL: f64 = 1e-10;

/// Relative residual accepted by proportionality fits in the FDT check.
const FDT_FIT_TOL: f64 = 1e-6;

/// Stochastic realization of a memory kernel or stationary noise process.
#[derive(Debug, Clone)]
pub struct RealizationTriple<T: Real> {
    /// Positive-stable state matrix (inverse-time units).
    pub gamma: DMatrix<T>,
    /// Symmetric positive-definite stationary covariance of the latent state.
    pub m: DMatrix<T>,
    /// Readout matrix mapping latent state to observed kernel/noise space.
    pub c: DMatrix<T>,
    /// Noise injection factor with `Gamma M + M Gamma* = Sigma Sigma*`.
    pub sigma: DMatrix<T>,
}

impl<T: Real> RealizationTriple<T> {
    /// Builds a triple, recovering `Sigma` as the symmetric square root of
    /// `Gamma M + M Gamma*` when it is not supplied.
    pub fn new(
        gamma: DMatrix<T>,
        m: DMatrix<T>,
        c: DMatrix<T>,
        sigma: Option<DMatrix<T>>,
    ) -> Result<Self> {
        let n = gamma.nrows();
        if !gamma.is_square() || m.shape() != (n, n) || c.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "realization triple: gamma {}x{}, m {}x{}, c {}x{}",
                gamma.nrows(),
                gamma.ncols(),
                m.nrows(),
                m.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        let sigma = match sigma {
            Some(s) => {
                if s.nrows() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "sigma has {} rows, expected {}",
                        s.nrows(),
                        n
                    )));
                }
                s
            }
            None => matrixlab::sym_sqrt(&(&gamma * &m + &m * gamma.transpose()))?,
        };
        let triple = RealizationTriple { gamma, m, c, sigma };
        triple.validate()?;
        Ok(triple)
    }

    /// Latent state dimension.
    pub fn state_dim(&self) -> usize {
        self.gamma.nrows()
    }

    /// Observed dimension (rows of `C`).
    pub fn out_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Dimension of the Wiener process driving the realization.
    pub fn wiener_dim(&self) -> usize {
        self.sigma.ncols()
    }

    /// Checks positive stability, symmetry/definiteness of `M`, the Lyapunov
    /// identity, and full row rank of `C`.
    pub fn validate(&self) -> Result<()> {
        let report = matrixlab::spectral_check(&self.gamma);
        if !report.positive_stable {
            return Err(Error::NotPositiveStable {
                min_real_part: report.min_real_part.to_f64_lossy(),
                tolerance: matrixlab::STABILITY_TOL,
            });
        }
        let scale = T::one() + self.m.norm();
        if (&self.m - self.m.transpose()).norm() > convert::<T>(TRIPLE_TOL) * scale {
            return Err(Error::InvalidModel("M is not symmetric".into()));
        }
        let eig = self.m.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&ev| ev <= T::zero()) {
            return Err(Error::InvalidModel(
                "M is not positive definite".into(),
            ));
        }
        let residual =
            (&self.gamma * &self.m + &self.m * self.gamma.transpose() - &self.sigma * self.sigma.transpose())
                .norm();
        let rhs_scale = T::one() + (&self.sigma * self.sigma.transpose()).norm();
        if residual > convert::<T>(TRIPLE_TOL) * rhs_scale {
            return Err(Error::InvalidModel(format!(
                "Lyapunov consistency violated: residual {:e}",
                residual
            )));
        }
        if self.c.nrows() > self.c.ncols() {
            return Err(Error::InvalidModel(format!(
                "C is {}x{}: cannot have full row rank",
                self.c.nrows(),
                self.c.ncols()
            )));
        }
        let sv = self.c.clone().singular_values();
        let smallest = sv
            .iter()
            .cloned()
            .fold(T::of(f64::INFINITY), |a, b| if b < a { b } else { a });
        if smallest <= convert::<T>(1e-12) * (T::one() + self.c.norm()) {
            return Err(Error::InvalidModel("C is row-rank deficient".into()));
        }
        Ok(())
    }

    /// Time integral `int_0^inf kappa(t) dt = C Gamma^{-1} M C*`.
    pub fn effective_integral(&self) -> Result<DMatrix<T>> {
        let inv = matrixlab::invert(&self.gamma)?;
        Ok(&self.c * inv * &self.m * self.c.transpose())
    }

    /// Applies the similarity transformation
    /// `(T Gamma T^{-1}, T M T*, C T^{-1}, T Sigma)`, which leaves the
    /// kernel unchanged.
    pub fn transformed(&self, t: &DMatrix<T>) -> Result<Self> {
        let tinv = matrixlab::invert(t)?;
        RealizationTriple::new(
            t * &self.gamma * &tinv,
            t * &self.m * t.transpose(),
            &self.c * &tinv,
            Some(t * &self.sigma),
        )
    }
}

/// Evaluates the memory kernel `kappa(t) = C e^{-Gamma |t|} M C*`.
///
/// Negative lags return the conjugate-transposed value, so
/// `kappa(t) = kappa(-t)*` holds exactly on the matrix form.
pub fn kernel_eval<T: Real>(triple: &RealizationTriple<T>, t: T) -> DMatrix<T> {
    if t < T::zero() {
        return kernel_eval(triple, -t).transpose();
    }
    let decay = matrixlab::expm(&(-&triple.gamma), t)
        .expect("kernel evaluation cannot overflow for a positive-stable Gamma");
    &triple.c * decay * &triple.m * triple.c.transpose()
}

/// Evaluates the stationary noise covariance `R(t) = C e^{-Gamma |t|} M C*`.
/// Identical contract to [`kernel_eval`]; both names exist because kernel
/// and covariance are distinct model ingredients that happen to share the
/// realization formula.
pub fn covariance_eval<T: Real>(triple: &RealizationTriple<T>, t: T) -> DMatrix<T> {
    kernel_eval(triple, t)
}

/// State-dependent coefficients of the GLE, with optional analytic
/// Jacobians. Callables must be safe for concurrent evaluation.
#[derive(Clone)]
pub struct CoefficientField<T: Real> {
    dim: usize,
    q: usize,
    r: usize,
    force: VecFn<T>,
    g: MatFn<T>,
    h: MatFn<T>,
    sigma: MatFn<T>,
    jac_g: Option<JacFn<T>>,
    jac_h: Option<JacFn<T>>,
    jac_sigma: Option<JacFn<T>>,
    allow_fd: bool,
}

impl<T: Real> std::fmt::Debug for CoefficientField<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientField")
            .field("dim", &self.dim)
            .field("q", &self.q)
            .field("r", &self.r)
            .field("analytic_jacobians", &self.has_analytic_jacobians())
            .finish()
    }
}

impl<T: Real> CoefficientField<T> {
    pub fn new(
        dim: usize,
        q: usize,
        r: usize,
        force: VecFn<T>,
        g: MatFn<T>,
        h: MatFn<T>,
        sigma: MatFn<T>,
    ) -> Self {
        CoefficientField {
            dim,
            q,
            r,
            force,
            g,
            h,
            sigma,
            jac_g: None,
            jac_h: None,
            jac_sigma: None,
            allow_fd: true,
        }
    }

    /// Installs analytic Jacobians; each callback returns the list of
    /// partial-derivative matrices with respect to the state components.
    pub fn with_jacobians(mut self, jac_g: JacFn<T>, jac_h: JacFn<T>, jac_sigma: JacFn<T>) -> Self {
        self.jac_g = Some(jac_g);
        self.jac_h = Some(jac_h);
        self.jac_sigma = Some(jac_sigma);
        self
    }

    /// Disables the finite-difference fallback; derivative requests without
    /// analytic Jacobians then fail with `JacobianUnavailable`.
    pub fn analytic_only(mut self) -> Self {
        self.allow_fd = false;
        self
    }

    /// Constant coefficients (all spatial derivatives vanish).
    pub fn constant(force: DVector<T>, g: DMatrix<T>, h: DMatrix<T>, sigma: DMatrix<T>) -> Self {
        let dim = force.len();
        let q = g.ncols();
        let r = sigma.ncols();
        let zeros_g = vec![DMatrix::zeros(g.nrows(), g.ncols()); dim];
        let zeros_h = vec![DMatrix::zeros(h.nrows(), h.ncols()); dim];
        let zeros_s = vec![DMatrix::zeros(sigma.nrows(), sigma.ncols()); dim];
        CoefficientField::new(
            dim,
            q,
            r,
            Arc::new(move |_| force.clone()),
            Arc::new(move |_| g.clone()),
            Arc::new(move |_| h.clone()),
            Arc::new(move |_| sigma.clone()),
        )
        .with_jacobians(
            Arc::new(move |_| zeros_g.clone()),
            Arc::new(move |_| zeros_h.clone()),
            Arc::new(move |_| zeros_s.clone()),
        )
    }

    /// One-dimensional coefficients from expressions, with exact analytic
    /// derivatives from the expression trees.
    pub fn scalar_1d(
        force: crate::expr::Expr,
        g: crate::expr::Expr,
        h: crate::expr::Expr,
        sigma: crate::expr::Expr,
    ) -> Self {
        let dg = g.derivative();
        let dh = h.derivative();
        let dsigma = sigma.derivative();
        let eval_mat = |e: crate::expr::Expr| -> MatFn<T> {
            Arc::new(move |x: &DVector<T>| DMatrix::from_element(1, 1, e.eval(x[0])))
        };
        let eval_jac = |e: crate::expr::Expr| -> JacFn<T> {
            Arc::new(move |x: &DVector<T>| vec![DMatrix::from_element(1, 1, e.eval(x[0]))])
        };
        CoefficientField::new(
            1,
            1,
            1,
            Arc::new(move |x: &DVector<T>| DVector::from_element(1, force.eval(x[0]))),
            eval_mat(g),
            eval_mat(h),
            eval_mat(sigma),
        )
        .with_jacobians(eval_jac(dg), eval_jac(dh), eval_jac(dsigma))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn has_analytic_jacobians(&self) -> bool {
        self.jac_g.is_some() && self.jac_h.is_some() && self.jac_sigma.is_some()
    }

    pub fn force(&self, x: &DVector<T>) -> DVector<T> {
        (self.force)(x)
    }

    pub fn g(&self, x: &DVector<T>) -> DMatrix<T> {
        (self.g)(x)
    }

    pub fn h(&self, x: &DVector<T>) -> DMatrix<T> {
        (self.h)(x)
    }

    pub fn sigma(&self, x: &DVector<T>) -> DMatrix<T> {
        (self.sigma)(x)
    }

    pub fn g_jacobian(&self, x: &DVector<T>) -> Result<Vec<DMatrix<T>>> {
        self.jacobian_of(&self.jac_g, &self.g, "g", x)
    }

    pub fn h_jacobian(&self, x: &DVector<T>) -> Result<Vec<DMatrix<T>>> {
        self.jacobian_of(&self.jac_h, &self.h, "h", x)
    }

    pub fn sigma_jacobian(&self, x: &DVector<T>) -> Result<Vec<DMatrix<T>>> {
        self.jacobian_of(&self.jac_sigma, &self.sigma, "sigma", x)
    }

    fn jacobian_of(
        &self,
        jac: &Option<JacFn<T>>,
        field: &MatFn<T>,
        name: &'static str,
        x: &DVector<T>,
    ) -> Result<Vec<DMatrix<T>>> {
        if let Some(j) = jac {
            return Ok(j(x));
        }
        if !self.allow_fd {
            return Err(Error::JacobianUnavailable(name));
        }
        Ok(fd_matrix_jacobian(field.as_ref(), x))
    }

    /// Checks supplied analytic Jacobians against central differences on the
    /// probe points (relative tolerance 1e-6).
    pub fn validate_jacobians(&self, probes: &[DVector<T>]) -> Result<()> {
        let tol = convert::<T>(1e-6);
        let fields: [(&str, &MatFn<T>, &Option<JacFn<T>>); 3] = [
            ("g", &self.g, &self.jac_g),
            ("h", &self.h, &self.jac_h),
            ("sigma", &self.sigma, &self.jac_sigma),
        ];
        for (name, field, jac) in fields {
            let Some(jac) = jac else { continue };
            for x in probes {
                let analytic = jac(x);
                let numeric = fd_matrix_jacobian(field.as_ref(), x);
                for (a, n) in analytic.iter().zip(&numeric) {
                    let err = (a - n).norm() / (T::one() + a.norm());
                    if err > tol {
                        return Err(Error::InvalidModel(format!(
                            "analytic jacobian of {name} disagrees with finite differences \
                             ({:e} relative) at {:?}",
                            err,
                            x.as_slice()
                                .iter()
                                .map(|v| v.to_f64_lossy())
                                .collect::<Vec<_>>()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks that all coefficient evaluations are finite on the probes.
    pub fn validate_finite(&self, probes: &[DVector<T>]) -> Result<()> {
        for x in probes {
            let finite = self.force(x).iter().all(|v| v.is_finite())
                && self.g(x).iter().all(|v| v.is_finite())
                && self.h(x).iter().all(|v| v.is_finite())
                && self.sigma(x).iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidModel(format!(
                    "coefficient evaluation not finite at {:?}",
                    x.as_slice()
                        .iter()
                        .map(|v| v.to_f64_lossy())
                        .collect::<Vec<_>>()
                )));
            }
        }
        Ok(())
    }
}

/// Central finite differences of a matrix-valued field, one derivative
/// matrix per state component, with step `eps^(1/3) * max(1, |x_l|)`.
pub fn fd_matrix_jacobian<T: Real>(
    field: &(dyn Fn(&DVector<T>) -> DMatrix<T> + Send + Sync),
    x: &DVector<T>,
) -> Vec<DMatrix<T>> {
    let base_step = T::default_epsilon().powf(convert(1.0 / 3.0));
    (0..x.len())
        .map(|l| {
            let step = base_step * if x[l].abs() > T::one() { x[l].abs() } else { T::one() };
            let mut plus = x.clone();
            plus[l] += step;
            let mut minus = x.clone();
            minus[l] -= step;
            (field(&plus) - field(&minus)) / (step * convert::<T>(2.0))
        })
        .collect()
}

/// Probe-point policy: explicit states, or Sobol points in a box.
#[derive(Debug, Clone)]
pub struct Probes<T: Real> {
    pub explicit: Option<Vec<DVector<T>>>,
    pub lo: DVector<T>,
    pub hi: DVector<T>,
    pub count: usize,
}

impl<T: Real> Probes<T> {
    /// Default policy: 32 Sobol points in `[-1, 1]^dim`.
    pub fn default_box(dim: usize) -> Self {
        Probes {
            explicit: None,
            lo: DVector::from_element(dim, convert(-1.0)),
            hi: DVector::from_element(dim, convert(1.0)),
            count: 32,
        }
    }

    pub fn in_box(lo: DVector<T>, hi: DVector<T>, count: usize) -> Self {
        Probes {
            explicit: None,
            lo,
            hi,
            count,
        }
    }

    pub fn explicit(points: Vec<DVector<T>>) -> Self {
        let dim = points.first().map_or(1, |p| p.len());
        Probes {
            explicit: Some(points),
            lo: DVector::from_element(dim, convert(-1.0)),
            hi: DVector::from_element(dim, convert(1.0)),
            count: 32,
        }
    }

    pub fn points(&self) -> Vec<DVector<T>> {
        if let Some(list) = &self.explicit {
            return list.clone();
        }
        let lo: Vec<f64> = self.lo.iter().map(|v| v.to_f64_lossy()).collect();
        let hi: Vec<f64> = self.hi.iter().map(|v| v.to_f64_lossy()).collect();
        sobol::sobol_in_box(&lo, &hi, self.count)
            .into_iter()
            .map(|p| DVector::from_iterator(p.len(), p.into_iter().map(convert)))
            .collect()
    }
}

/// The full pre-limit GLE model: coefficients, kernel and noise
/// realizations, and the three characteristic scales.
#[derive(Debug, Clone)]
pub struct GleSystem<T: Real> {
    pub coeffs: CoefficientField<T>,
    pub kernel: RealizationTriple<T>,
    pub noise: RealizationTriple<T>,
    pub m0: T,
    pub tau_kappa: T,
    pub tau_xi: T,
    pub probes: Probes<T>,
}

impl<T: Real> GleSystem<T> {
    pub fn new(
        coeffs: CoefficientField<T>,
        kernel: RealizationTriple<T>,
        noise: RealizationTriple<T>,
        m0: T,
        tau_kappa: T,
        tau_xi: T,
    ) -> Result<Self> {
        if m0 <= T::zero() || tau_kappa <= T::zero() || tau_xi <= T::zero() {
            return Err(Error::InvalidModel(
                "scales m0, tau_kappa, tau_xi must be positive".into(),
            ));
        }
        if kernel.out_dim() != coeffs.q() {
            return Err(Error::DimensionMismatch(format!(
                "kernel readout dimension {} != coefficient q {}",
                kernel.out_dim(),
                coeffs.q()
            )));
        }
        if noise.out_dim() != coeffs.r() {
            return Err(Error::DimensionMismatch(format!(
                "noise readout dimension {} != coefficient r {}",
                noise.out_dim(),
                coeffs.r()
            )));
        }
        let dim = coeffs.dim();
        Ok(GleSystem {
            coeffs,
            kernel,
            noise,
            m0,
            tau_kappa,
            tau_xi,
            probes: Probes::default_box(dim),
        })
    }

    pub fn with_probes(mut self, probes: Probes<T>) -> Self {
        self.probes = probes;
        self
    }

    pub fn dim(&self) -> usize {
        self.coeffs.dim()
    }

    /// Largest model time constant (used for burn-in heuristics): the
    /// slowest decay among the two realizations, times its scale.
    pub fn max_timescale(&self) -> T {
        let slowest = |triple: &RealizationTriple<T>, scale: T| -> T {
            let report = matrixlab::spectral_check(&triple.gamma);
            let re = report.min_real_part;
            if re > T::zero() {
                scale / re
            } else {
                scale
            }
        };
        let a = slowest(&self.kernel, self.tau_kappa);
        let b = slowest(&self.noise, self.tau_xi);
        if a > b {
            a
        } else {
            b
        }
    }
}

/// Effective damping and diffusion constants of the model.
#[derive(Debug, Clone)]
pub struct EffectiveConstants<T: Real> {
    /// `K1 = C1 Gamma1^{-1} M1 C1*` (q x q).
    pub k1: DMatrix<T>,
    /// `K2 = C2 Gamma2^{-1} M2 C2*` (r x r).
    pub k2: DMatrix<T>,
}

/// Computes the effective constants and verifies both are invertible
/// (condition number below 1e12).
pub fn effective_constants<T: Real>(system: &GleSystem<T>) -> Result<EffectiveConstants<T>> {
    let k1 = system.kernel.effective_integral()?;
    let k2 = system.noise.effective_integral()?;
    let c1 = condition_number(&k1);
    if !(c1 < convert(SINGULAR_COND)) {
        return Err(Error::SingularEffectiveConstant {
            which: "K1",
            condition: c1.to_f64_lossy(),
        });
    }
    let c2 = condition_number(&k2);
    if !(c2 < convert(SINGULAR_COND)) {
        return Err(Error::SingularEffectiveConstant {
            which: "K2",
            condition: c2.to_f64_lossy(),
        });
    }
    Ok(EffectiveConstants { k1, k2 })
}

fn require_positive_diagonal<T: Real>(a: &DMatrix<T>, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!("{what} must be square")));
    }
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if i != j && a[(i, j)] != T::zero() {
                return Err(Error::NonPositiveRate(format!(
                    "{what} must be diagonal; entry ({i},{j}) is {:e}",
                    a[(i, j)]
                )));
            }
        }
        if a[(i, i)] <= T::zero() {
            return Err(Error::NonPositiveRate(format!(
                "{what} diagonal entry {i} is {:e}",
                a[(i, i)]
            )));
        }
    }
    Ok(())
}

/// Ornstein-Uhlenbeck sub-class realization for a diagonal positive rate
/// matrix `A`: kernel triple `(A, A, I)` and noise triple `(A, A/2, I)`,
/// giving `kappa(t) = A e^{-A|t|}` and `R(t) = (1/2) kappa(t)`.
pub fn ou_realization<T: Real>(
    a: &DMatrix<T>,
) -> Result<(RealizationTriple<T>, RealizationTriple<T>)> {
    require_positive_diagonal(a, "OU rate matrix")?;
    let d = a.nrows();
    let eye = DMatrix::<T>::identity(d, d);
    let kernel = RealizationTriple::new(
        a.clone(),
        a.clone(),
        eye.clone(),
        Some(a * convert::<T>(std::f64::consts::SQRT_2)),
    )?;
    let noise = RealizationTriple::new(
        a.clone(),
        a * convert::<T>(0.5),
        eye,
        Some(a.clone()),
    )?;
    Ok((kernel, noise))
}

/// Harmonic-noise sub-class realization for diagonal `Omega` and time scale
/// `tau`. The noise is the stationary output of a damped stochastic
/// oscillator; the kernel triple is its similarity transform with twice the
/// stationary covariance, so `R(t) = (1/2) kappa(t)`.
///
/// Frequencies with `|Omega_ii| = 2` are rejected (the oscillatory kernel
/// formula degenerates at critical damping), as are zero frequencies.
pub fn harmonic_realization<T: Real>(
    omega: &DMatrix<T>,
    tau: T,
) -> Result<(RealizationTriple<T>, RealizationTriple<T>)> {
    if !omega.is_square() {
        return Err(Error::DimensionMismatch("Omega must be square".into()));
    }
    if tau <= T::zero() {
        return Err(Error::InvalidModel("tau must be positive".into()));
    }
    let d = omega.nrows();
    for i in 0..d {
        for j in 0..d {
            if i != j && omega[(i, j)] != T::zero() {
                return Err(Error::InvalidModel(
                    "Omega must be diagonal".into(),
                ));
            }
        }
        let w = omega[(i, i)];
        if w == T::zero() {
            return Err(Error::ZeroFrequency);
        }
        if (w.abs() - convert::<T>(2.0)).abs() <= convert::<T>(1e-12) {
            return Err(Error::CriticalDamping);
        }
    }

    let eye = DMatrix::<T>::identity(d, d);
    let zero = DMatrix::<T>::zeros(d, d);
    let omega2 = omega * omega;

    // Noise: d(h, u) = -Gamma2 (h, u) dt + Sigma2 dW with stationary
    // covariance M2; observed output is the h block.
    let mut gamma2 = DMatrix::<T>::zeros(2 * d, 2 * d);
    set_block(&mut gamma2, 0, d, &(-&eye));
    set_block(&mut gamma2, d, 0, &omega2);
    set_block(&mut gamma2, d, d, &omega2);

    let mut m2 = DMatrix::<T>::zeros(2 * d, 2 * d);
    set_block(&mut m2, 0, 0, &(&eye * convert::<T>(0.5)));
    set_block(&mut m2, d, d, &(&omega2 * convert::<T>(0.5)));

    let mut c2 = DMatrix::<T>::zeros(d, 2 * d);
    set_block(&mut c2, 0, 0, &eye);

    let mut sigma2 = DMatrix::<T>::zeros(2 * d, d);
    set_block(&mut sigma2, d, 0, &omega2);

    // Kernel triple: similarity transform with M1 = 2 T M2 T*, chosen so the
    // extended system drives velocities through M1 C1* = [I; 0].
    let mut t_mat = DMatrix::<T>::zeros(2 * d, 2 * d);
    set_block(&mut t_mat, 0, 0, &eye);
    set_block(&mut t_mat, 0, d, &(&eye * convert::<T>(0.5)));
    set_block(&mut t_mat, d, d, &(&eye * convert::<T>(-0.5)));
    let mut t_inv = DMatrix::<T>::zeros(2 * d, 2 * d);
    set_block(&mut t_inv, 0, 0, &eye);
    set_block(&mut t_inv, 0, d, &eye);
    set_block(&mut t_inv, d, d, &(&eye * convert::<T>(-2.0)));

    let gamma1 = &t_mat * &gamma2 * &t_inv;
    let m1 = &t_mat * (&m2 * convert::<T>(2.0)) * t_mat.transpose();
    let c1 = &c2 * &t_inv;
    let sigma1 = &t_mat * &sigma2 * convert::<T>(std::f64::consts::SQRT_2);

    let _ = zero;
    let inv_tau = T::one() / tau;
    let kernel = RealizationTriple::new(
        &gamma1 * inv_tau,
        &m1 * inv_tau,
        c1,
        Some(&sigma1 * inv_tau),
    )?;
    let noise = RealizationTriple::new(
        &gamma2 * inv_tau,
        &m2 * inv_tau,
        c2,
        Some(&sigma2 * inv_tau),
    )?;
    Ok((kernel, noise))
}

/// Closed-form harmonic memory kernel for a single diagonal entry: the
/// trigonometric branch for `|omega| < 2`, the hyperbolic branch for
/// `|omega| > 2`.
pub fn harmonic_kernel_closed_form<T: Real>(omega: T, tau: T, t: T) -> Result<T> {
    if omega == T::zero() {
        return Err(Error::ZeroFrequency);
    }
    let two = convert::<T>(2.0);
    let four = convert::<T>(4.0);
    if (omega.abs() - two).abs() <= convert::<T>(1e-12) {
        return Err(Error::CriticalDamping);
    }
    let at = t.abs();
    let damp = (-(omega * omega) * at / (two * tau)).exp();
    let value = if omega.abs() < two {
        let root = (T::one() - omega * omega / four).sqrt();
        let w0 = omega * root;
        let w1 = omega / root;
        damp * ((w0 * t / tau).cos() + w1 / two * (w0 * at / tau).sin())
    } else {
        let root = (omega * omega / four - T::one()).sqrt();
        let w0 = omega * root;
        let w1 = omega / root;
        damp * ((w0 * t / tau).cosh() + w1 / two * (w0 * at / tau).sinh())
    };
    Ok(value / tau)
}

/// Outcome of the fluctuation-dissipation check.
#[derive(Debug, Clone)]
pub struct FdtReport<T: Real> {
    /// True iff the model satisfies the fluctuation-dissipation structure.
    pub passed: bool,
    /// Fitted constant `c` with `sigma = c * g` on the probes, when it exists.
    pub sigma_over_g: Option<T>,
    /// Fitted constant with `R(t) = c * kappa(t)` on the probe lags.
    pub covariance_over_kernel: Option<T>,
    /// Human-readable reasons for failure (empty on success).
    pub failures: Vec<String>,
}

fn proportionality_fit<T: Real>(pairs: &[(DMatrix<T>, DMatrix<T>)]) -> (Option<T>, T) {
    // Least-squares c minimizing sum ||target - c * reference||^2.
    let mut num = T::zero();
    let mut den = T::zero();
    let mut scale = T::zero();
    for (target, reference) in pairs {
        num += target.dot(reference);
        den += reference.dot(reference);
        scale += target.dot(target);
    }
    if den <= T::zero() {
        return (None, T::of(f64::INFINITY));
    }
    let c = num / den;
    let mut residual = T::zero();
    for (target, reference) in pairs {
        residual += (target - reference * c).norm_squared();
    }
    let rel = (residual / (T::one() + scale)).sqrt();
    (Some(c), rel)
}

/// Checks the fluctuation-dissipation structure: equal time scales, `sigma`
/// a constant multiple of `g`, `h = g*`, and noise covariance proportional
/// to the memory kernel on a probe grid of lags.
pub fn check_fdt<T: Real>(system: &GleSystem<T>) -> FdtReport<T> {
    let mut failures = Vec::new();

    let tau_rel = (system.tau_kappa - system.tau_xi).abs()
        / (system.tau_kappa.abs() + system.tau_xi.abs());
    if tau_rel > convert(1e-12) {
        failures.push(format!(
            "time scales differ: tau_kappa = {:e}, tau_xi = {:e}",
            system.tau_kappa, system.tau_xi
        ));
    }

    let probes = system.probes.points();
    let mut sigma_pairs = Vec::new();
    let mut h_ok = true;
    for x in &probes {
        let g = system.coeffs.g(x);
        let h = system.coeffs.h(x);
        let sigma = system.coeffs.sigma(x);
        if (h - g.transpose()).norm() > convert::<T>(FDT_FIT_TOL) * (T::one() + g.norm()) {
            h_ok = false;
        }
        if sigma.shape() == g.shape() {
            sigma_pairs.push((sigma, g));
        } else {
            failures.push(format!(
                "sigma is {}x{} but g is {}x{}: cannot be proportional",
                sigma.nrows(),
                sigma.ncols(),
                g.nrows(),
                g.ncols()
            ));
            break;
        }
    }
    if !h_ok {
        failures.push("h != g* on probe states".into());
    }
    let (sigma_over_g, sigma_res) = proportionality_fit(&sigma_pairs);
    if sigma_res > convert(FDT_FIT_TOL) {
        failures.push(format!(
            "sigma is not a constant multiple of g (relative residual {:e})",
            sigma_res
        ));
    }

    let mut covariance_over_kernel = None;
    if system.kernel.out_dim() != system.noise.out_dim() {
        failures.push("kernel and noise dimensions differ".into());
    } else {
        let horizon = convert::<T>(5.0) * system.max_timescale();
        let lag_pairs: Vec<(DMatrix<T>, DMatrix<T>)> = (0..16)
            .map(|k| {
                let t = horizon * convert::<T>(k as f64 / 15.0);
                (covariance_eval(&system.noise, t), kernel_eval(&system.kernel, t))
            })
            .collect();
        let (ratio, res) = proportionality_fit(&lag_pairs);
        covariance_over_kernel = ratio;
        if res > convert(FDT_FIT_TOL) {
            failures.push(format!(
                "noise covariance is not proportional to the memory kernel \
                 (relative residual {:e})",
                res
            ));
        }
    }

    FdtReport {
        passed: failures.is_empty(),
        sigma_over_g,
        covariance_over_kernel,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use approx::assert_relative_eq;

    fn diag(values: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(values))
    }

    #[test]
    fn ou_kernel_values() {
        let (kernel, noise) = ou_realization(&diag(&[1.0, 1.0])).unwrap();
        // t = 0: kappa = A, R = A/2.
        assert_relative_eq!(kernel_eval(&kernel, 0.0), diag(&[1.0, 1.0]), epsilon = 1e-12);
        assert_relative_eq!(
            covariance_eval(&noise, 0.0),
            diag(&[0.5, 0.5]),
            epsilon = 1e-12
        );
        // alpha = 1, t = ln 2: kappa = I/2.
        let t = 2.0f64.ln();
        assert_relative_eq!(kernel_eval(&kernel, t), diag(&[0.5, 0.5]), epsilon = 1e-11);
    }

    #[test]
    fn ou_componentwise_rates() {
        let (kernel, _) = ou_realization(&diag(&[1.0, 3.0])).unwrap();
        let t = 0.7;
        let k = kernel_eval(&kernel, t);
        assert_relative_eq!(k[(0, 0)], (-t).exp(), epsilon = 1e-11);
        assert_relative_eq!(k[(1, 1)], 3.0 * (-3.0 * t).exp(), epsilon = 1e-11);
        assert_relative_eq!(k[(0, 1)], 0.0, epsilon = 1e-13);
    }

    #[test]
    fn ou_requires_positive_diagonal() {
        assert!(matches!(
            ou_realization(&diag(&[1.0, 0.0])),
            Err(Error::NonPositiveRate(_))
        ));
    }

    #[test]
    fn ou_noise_covariance_is_half_kernel() {
        let (kernel, noise) = ou_realization(&diag(&[0.7, 2.2])).unwrap();
        for &t in &[0.0, 0.3, 1.5, 4.0] {
            let k = kernel_eval(&kernel, t);
            let r = covariance_eval(&noise, t);
            assert_relative_eq!(r, k * 0.5, epsilon = 1e-11);
        }
    }

    #[test]
    fn harmonic_kernel_matches_closed_form_both_branches() {
        for &omega in &[0.8, 1.0, 3.5] {
            let (kernel, _) = harmonic_realization(&diag(&[omega]), 1.0).unwrap();
            for &t in &[0.0, 0.25, 1.0, 2.5] {
                let matrix_form = kernel_eval(&kernel, t)[(0, 0)];
                let closed = harmonic_kernel_closed_form(omega, 1.0, t).unwrap();
                assert_relative_eq!(matrix_form, closed, epsilon = 1e-9, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn harmonic_specific_value_at_unit_parameters() {
        // omega = 1, tau = 1, t = 1: exp(-1/2)(cos(sqrt(3)/2) + sin(sqrt(3)/2)/sqrt(3)).
        let (kernel, _) = harmonic_realization(&diag(&[1.0]), 1.0).unwrap();
        assert_relative_eq!(kernel_eval(&kernel, 0.0)[(0, 0)], 1.0, epsilon = 1e-11);
        let w0 = 3.0f64.sqrt() / 2.0;
        let expected = (-0.5f64).exp() * (w0.cos() + w0.sin() / 3.0f64.sqrt());
        assert_relative_eq!(kernel_eval(&kernel, 1.0)[(0, 0)], expected, epsilon = 1e-10);
    }

    #[test]
    fn harmonic_noise_covariance_at_zero() {
        let (_, noise) = harmonic_realization(&diag(&[1.0, 1.6]), 1.0).unwrap();
        assert_relative_eq!(covariance_eval(&noise, 0.0), diag(&[0.5, 0.5]), epsilon = 1e-12);
    }

    #[test]
    fn harmonic_rejects_degenerate_frequencies() {
        assert!(matches!(
            harmonic_realization(&diag(&[2.0]), 1.0),
            Err(Error::CriticalDamping)
        ));
        assert!(matches!(
            harmonic_realization(&diag(&[0.0]), 1.0),
            Err(Error::ZeroFrequency)
        ));
    }

    #[test]
    fn harmonic_approaches_ou_at_large_omega() {
        let (kernel, _) = harmonic_realization(&diag(&[100.0]), 1.0).unwrap();
        let mut t = 0.1;
        while t <= 3.0 {
            let k = kernel_eval(&kernel, t)[(0, 0)];
            assert!(
                (k - (-t).exp()).abs() < 0.05,
                "harmonic kernel at t={t}: {k} vs {}",
                (-t).exp()
            );
            t += 0.145;
        }
    }

    fn ou_system_1d(sigma_expr: &str, tau_kappa: f64, tau_xi: f64) -> GleSystem<f64> {
        let (kernel, noise) = ou_realization(&diag(&[1.0])).unwrap();
        let g = Expr::parse("sqrt(2 + sin(x))").unwrap();
        let coeffs = CoefficientField::scalar_1d(
            Expr::constant(0.0),
            g.clone(),
            g,
            Expr::parse(sigma_expr).unwrap(),
        );
        GleSystem::new(coeffs, kernel, noise, 1.0, tau_kappa, tau_xi).unwrap()
    }

    #[test]
    fn fdt_detects_structure_and_scale_mismatch() {
        let report = check_fdt(&ou_system_1d("sqrt(2 + sin(x))", 1.0, 1.0));
        assert!(report.passed, "{:?}", report.failures);
        assert_relative_eq!(report.sigma_over_g.unwrap(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(report.covariance_over_kernel.unwrap(), 0.5, epsilon = 1e-9);

        let report = check_fdt(&ou_system_1d("sqrt(2 + sin(x))", 2.0, 1.0));
        assert!(!report.passed);

        // Constant multiple is accepted, with the constant reported.
        let report = check_fdt(&ou_system_1d("2 * sqrt(2 + sin(x))", 1.0, 1.0));
        assert!(report.passed, "{:?}", report.failures);
        assert_relative_eq!(report.sigma_over_g.unwrap(), 2.0, epsilon = 1e-9);

        // sigma not proportional to g.
        let report = check_fdt(&ou_system_1d("1", 1.0, 1.0));
        assert!(!report.passed);
    }

    #[test]
    fn effective_constants_for_both_subclasses() {
        let (kernel, noise) = ou_realization(&diag(&[1.3, 0.4])).unwrap();
        let coeffs = CoefficientField::constant(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        );
        let system = GleSystem::new(coeffs, kernel, noise, 1.0, 1.0, 1.0).unwrap();
        let constants = effective_constants(&system).unwrap();
        assert_relative_eq!(constants.k1, DMatrix::identity(2, 2), epsilon = 1e-11);
        assert_relative_eq!(constants.k2, DMatrix::identity(2, 2) * 0.5, epsilon = 1e-11);

        let (kernel, noise) = harmonic_realization(&diag(&[1.0, 3.0]), 1.0).unwrap();
        let coeffs = CoefficientField::constant(
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        );
        let system = GleSystem::new(coeffs, kernel, noise, 1.0, 1.0, 1.0).unwrap();
        let constants = effective_constants(&system).unwrap();
        assert_relative_eq!(constants.k1, DMatrix::identity(2, 2), epsilon = 1e-10);
        assert_relative_eq!(constants.k2, DMatrix::identity(2, 2) * 0.5, epsilon = 1e-10);
    }

    #[test]
    fn rank_deficient_readout_is_rejected() {
        let gamma = diag(&[1.0, 2.0]);
        let m = diag(&[1.0, 1.0]);
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            RealizationTriple::new(gamma, m, c, None),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn kernel_time_integral_matches_effective_constant() {
        let (kernel, _) = ou_realization(&diag(&[0.9])).unwrap();
        let integral = crate::quad::integrate_decaying_tail(
            &|t: f64| kernel_eval(&kernel, t)[(0, 0)],
            1e-9,
        )
        .unwrap();
        let closed = kernel.effective_integral().unwrap()[(0, 0)];
        assert_relative_eq!(integral, closed, epsilon = 1e-6);
    }

    #[test]
    fn transformation_invariance_of_kernel() {
        let (kernel, _) = harmonic_realization(&diag(&[1.2]), 0.8).unwrap();
        let t_mat = DMatrix::from_row_slice(2, 2, &[1.4, -0.3, 0.2, 0.9]);
        let transformed = kernel.transformed(&t_mat).unwrap();
        for &t in &[0.0, 0.4, 1.7] {
            let a = kernel_eval(&kernel, t);
            let b = kernel_eval(&transformed, t);
            assert!((a - b).norm() <= 1e-10);
        }
    }

    #[test]
    fn fd_jacobian_step_matches_expression_derivative() {
        let g = Expr::parse("sqrt(2 + sin(x))").unwrap();
        let coeffs = CoefficientField::scalar_1d(
            Expr::constant(0.0),
            g.clone(),
            g.clone(),
            Expr::constant(1.0),
        );
        let probes: Vec<DVector<f64>> = vec![
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 1.1),
            DVector::from_element(1, -2.3),
        ];
        coeffs.validate_jacobians(&probes).unwrap();
        coeffs.validate_finite(&probes).unwrap();
    }
}
