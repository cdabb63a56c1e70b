//! The homogenized (limiting) SDE of the GLE: noise-induced drift terms
//! derived from a block Lyapunov solve on the extended damping matrix, the
//! diffusion field, and explicit one-dimensional closed forms for the
//! Ornstein-Uhlenbeck and harmonic sub-classes.
//!
//! Ground truth for the drift blocks is the single Lyapunov solve
//! `gamma_hat J + J gamma_hat* = sigma_hat sigma_hat*`; the per-block
//! matrix-equation system is kept as an independent residual oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::markov::{build_extended, check_b_lambda, default_lambda_grid, theta_with_k1};
use crate::matrixlab::{self, solve_lyapunov};
use crate::model::{
    check_fdt, effective_constants, fd_matrix_jacobian, FdtReport, GleSystem,
};
use crate::real::{convert, Real};

/// Blocks of the extended Lyapunov solution, in the (v, y, beta) ordering.
#[derive(Debug, Clone)]
pub struct JBlocks<T: Real> {
    pub j11: DMatrix<T>,
    pub j12: DMatrix<T>,
    pub j13: DMatrix<T>,
    pub j22: DMatrix<T>,
    pub j23: DMatrix<T>,
    pub j33: DMatrix<T>,
    /// The full extended solution the blocks were cut from.
    pub full: DMatrix<T>,
}

/// Solves the extended Lyapunov equation at state `x` and extracts the
/// upper-triangular blocks.
pub fn j_blocks<T: Real>(system: &GleSystem<T>, x: &DVector<T>) -> Result<JBlocks<T>> {
    let ext = build_extended(system, T::one())?;
    let gamma = ext.gamma_hat(x);
    let sigma_hat = ext.sigma_hat();
    let q = &sigma_hat * sigma_hat.transpose();
    let full = solve_lyapunov(&gamma, &q)?;
    let d = system.dim();
    let d1 = system.kernel.state_dim();
    let d2 = system.noise.state_dim();
    let j11 = full.view((0, 0), (d, d)).into_owned();
    let j12 = full.view((0, d), (d, d1)).into_owned();
    let j13 = full.view((0, d + d1), (d, d2)).into_owned();
    let j22 = full.view((d, d), (d1, d1)).into_owned();
    let j23 = full.view((d, d + d1), (d1, d2)).into_owned();
    let j33 = full.view((d + d1, d + d1), (d2, d2)).into_owned();
    Ok(JBlocks {
        j11,
        j12,
        j13,
        j22,
        j23,
        j33,
        full,
    })
}

/// Frobenius residuals of the five per-block matrix equations (plus the
/// `J33` stationarity identity), evaluated on extracted blocks. Used as an
/// independent oracle on the big Lyapunov solve.
pub fn block_equation_residuals<T: Real>(
    system: &GleSystem<T>,
    x: &DVector<T>,
    jb: &JBlocks<T>,
) -> Vec<T> {
    let g = system.coeffs.g(x);
    let h = system.coeffs.h(x);
    let sigma = system.coeffs.sigma(x);
    let c1 = &system.kernel.c;
    let c2 = &system.noise.c;
    let m1 = &system.kernel.m;
    let m2 = &system.noise.m;
    let g1 = &system.kernel.gamma;
    let g2 = &system.noise.gamma;
    let m0 = system.m0;
    let tk = system.tau_kappa;
    let tx = system.tau_xi;

    let gc1 = &g * c1;
    let sc2 = &sigma * c2;
    let m1c1h = m1 * c1.transpose() * &h;

    let e1 = &gc1 * jb.j12.transpose() + &jb.j12 * gc1.transpose()
        - (&sc2 * jb.j13.transpose() + &jb.j13 * sc2.transpose());
    let e2 = &jb.j11 * h.transpose() * c1 * m1 * m0 + &sc2 * jb.j23.transpose() * tk
        - (&gc1 * &jb.j22 * tk + &jb.j12 * g1.transpose() * m0);
    let e3 = &gc1 * &jb.j23 * tx + &jb.j13 * g2.transpose() * m0 - &sc2 * m2;
    let e4 = &m1c1h * &jb.j12 + (&m1c1h * &jb.j12).transpose()
        - (g1 * &jb.j22 + &jb.j22 * g1.transpose());
    let e5 = &m1c1h * &jb.j13 * tx - (g1 * &jb.j23 * tx + &jb.j23 * g2.transpose() * tk);
    let e6 = &jb.j33 * tx - m2;

    vec![e1.norm(), e2.norm(), e3.norm(), e4.norm(), e5.norm(), e6.norm()]
}

/// How derivatives of the coefficient products are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DerivativeRoute {
    Analytic,
    FiniteDifference,
}

struct DriftContext<T: Real> {
    k1: DMatrix<T>,
    c1_g1inv: DMatrix<T>,
    c2_g2inv: DMatrix<T>,
    route: DerivativeRoute,
}

impl<T: Real> DriftContext<T> {
    fn new(system: &GleSystem<T>) -> Result<Self> {
        let constants = effective_constants(system)?;
        let c1_g1inv = &system.kernel.c * matrixlab::invert(&system.kernel.gamma)?;
        let c2_g2inv = &system.noise.c * matrixlab::invert(&system.noise.gamma)?;
        let route = if system.coeffs.has_analytic_jacobians() {
            DerivativeRoute::Analytic
        } else {
            DerivativeRoute::FiniteDifference
        };
        Ok(DriftContext {
            k1: constants.k1,
            c1_g1inv,
            c2_g2inv,
            route,
        })
    }

    /// Derivative matrices of theta^{-1}, theta^{-1} g and theta^{-1} sigma
    /// with respect to each state component.
    #[allow(clippy::type_complexity)]
    fn product_derivatives(
        &self,
        system: &GleSystem<T>,
        x: &DVector<T>,
    ) -> Result<(Vec<DMatrix<T>>, Vec<DMatrix<T>>, Vec<DMatrix<T>>)> {
        match self.route {
            DerivativeRoute::Analytic => {
                let g = system.coeffs.g(x);
                let h = system.coeffs.h(x);
                let sigma = system.coeffs.sigma(x);
                let theta = theta_with_k1(system, &self.k1, x)?;
                let theta_inv = matrixlab::invert(&theta)?;
                let dg = system.coeffs.g_jacobian(x)?;
                let dh = system.coeffs.h_jacobian(x)?;
                let dsigma = system.coeffs.sigma_jacobian(x)?;
                let mut d_theta_inv = Vec::with_capacity(x.len());
                let mut d_theta_inv_g = Vec::with_capacity(x.len());
                let mut d_theta_inv_sigma = Vec::with_capacity(x.len());
                for l in 0..x.len() {
                    let d_theta = &dg[l] * &self.k1 * &h + &g * &self.k1 * &dh[l];
                    let dti = -(&theta_inv * d_theta * &theta_inv);
                    d_theta_inv_g.push(&dti * &g + &theta_inv * &dg[l]);
                    d_theta_inv_sigma.push(&dti * &sigma + &theta_inv * &dsigma[l]);
                    d_theta_inv.push(dti);
                }
                Ok((d_theta_inv, d_theta_inv_g, d_theta_inv_sigma))
            }
            DerivativeRoute::FiniteDifference => {
                // Differences are taken on the final products so error does
                // not accumulate across factors.
                let sys = system.clone();
                let k1 = self.k1.clone();
                let theta_inv_field = move |y: &DVector<T>| -> DMatrix<T> {
                    let th = theta_with_k1(&sys, &k1, y).expect("theta invertible near probe");
                    matrixlab::invert(&th).expect("theta invertible near probe")
                };
                let sys_g = system.clone();
                let k1_g = self.k1.clone();
                let tig_field = move |y: &DVector<T>| -> DMatrix<T> {
                    let th = theta_with_k1(&sys_g, &k1_g, y).expect("theta invertible near probe");
                    matrixlab::invert(&th).expect("theta invertible near probe") * sys_g.coeffs.g(y)
                };
                let sys_s = system.clone();
                let k1_s = self.k1.clone();
                let tis_field = move |y: &DVector<T>| -> DMatrix<T> {
                    let th = theta_with_k1(&sys_s, &k1_s, y).expect("theta invertible near probe");
                    matrixlab::invert(&th).expect("theta invertible near probe")
                        * sys_s.coeffs.sigma(y)
                };
                Ok((
                    fd_matrix_jacobian(&theta_inv_field, x),
                    fd_matrix_jacobian(&tig_field, x),
                    fd_matrix_jacobian(&tis_field, x),
                ))
            }
        }
    }
}

fn contract<T: Real>(derivs: &[DMatrix<T>], weights: &DMatrix<T>, scale: T) -> DVector<T> {
    // out_i = scale * sum_{j,l} d_l[..]_{ij} weights_{jl}
    let d = derivs.len();
    let mut out = DVector::<T>::zeros(derivs[0].nrows());
    for (l, dm) in derivs.iter().enumerate() {
        let _ = l;
        debug_assert_eq!(dm.ncols(), weights.nrows());
    }
    for i in 0..out.len() {
        let mut acc = T::zero();
        for (l, dm) in derivs.iter().enumerate().take(d) {
            for j in 0..dm.ncols() {
                acc += dm[(i, j)] * weights[(j, l)];
            }
        }
        out[i] = acc * scale;
    }
    out
}

/// The three noise-induced drift terms at state `x`.
pub fn noise_induced_drift<T: Real>(
    system: &GleSystem<T>,
    x: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>, DVector<T>)> {
    let ctx = DriftContext::new(system)?;
    noise_induced_drift_with(system, &ctx, x)
}

fn noise_induced_drift_with<T: Real>(
    system: &GleSystem<T>,
    ctx: &DriftContext<T>,
    x: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>, DVector<T>)> {
    let jb = j_blocks(system, x)?;
    let (d_theta_inv, d_theta_inv_g, d_theta_inv_sigma) = ctx.product_derivatives(system, x)?;

    let j21 = jb.j12.transpose();
    let j31 = jb.j13.transpose();
    let s1 = contract(&d_theta_inv, &jb.j11, system.m0);
    let s2 = contract(&d_theta_inv_g, &(&ctx.c1_g1inv * j21), -system.tau_kappa);
    let s3 = contract(&d_theta_inv_sigma, &(&ctx.c2_g2inv * j31), system.tau_xi);
    Ok((s1, s2, s3))
}

/// Which route produced a homogenized SDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Generic,
    Fdt,
    ClosedForm1dOu,
    ClosedForm1dHarmonic,
}

/// Drift and diffusion fields of the limiting equation.
pub struct HomogenizedSde<T: Real> {
    system: GleSystem<T>,
    ctx: DriftContext<T>,
    /// Constant diffusion factor `C2 Gamma2^{-1} Sigma2`.
    noise_readout: DMatrix<T>,
    provenance: Provenance,
    fdt: FdtReport<T>,
    /// Closed-form scalar drift override (thermophoresis models install one).
    closed_form: Option<ClosedForm1d<T>>,
}

struct ClosedForm1d<T: Real> {
    g: crate::expr::Expr,
    sigma: crate::expr::Expr,
    alpha_or_omega: T,
    kind: Provenance,
}

impl<T: Real> std::fmt::Debug for HomogenizedSde<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HomogenizedSde")
            .field("dim", &self.system.dim())
            .field("provenance", &self.provenance)
            .finish()
    }
}

/// Individually addressable pieces of the limiting drift at one state.
#[derive(Debug, Clone)]
pub struct DriftParts<T: Real> {
    pub s1: DVector<T>,
    pub s2: DVector<T>,
    pub s3: DVector<T>,
    pub theta_inv_force: DVector<T>,
}

impl<T: Real> DriftParts<T> {
    pub fn total(&self) -> DVector<T> {
        &self.s1 + &self.s2 + &self.s3 + &self.theta_inv_force
    }
}

/// Builds the limiting SDE of a validated system: checks the effective
/// constants, samples the resolvent condition on the probe states, and
/// routes fluctuation-dissipation models through the single-drift-term
/// reduction.
pub fn homogenized_sde<T: Real>(system: &GleSystem<T>) -> Result<HomogenizedSde<T>> {
    let ctx = DriftContext::new(system)?;
    let probes = system.probes.points();
    let report = check_b_lambda(system, &probes, &default_lambda_grid())?;
    if !report.verdict {
        let worst = report.worst().expect("nonempty sample grid");
        return Err(Error::InvalidModel(format!(
            "resolvent condition failed: min singular value {:e} at lambda = {:?}",
            worst.min_singular_value, worst.lambda
        )));
    }
    let fdt = check_fdt(system);
    let provenance = if fdt.passed {
        Provenance::Fdt
    } else {
        Provenance::Generic
    };
    let noise_readout =
        &system.noise.c * matrixlab::invert(&system.noise.gamma)? * &system.noise.sigma;
    Ok(HomogenizedSde {
        system: system.clone(),
        ctx,
        noise_readout,
        provenance,
        fdt,
        closed_form: None,
    })
}

impl<T: Real> HomogenizedSde<T> {
    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn wiener_dim(&self) -> usize {
        self.noise_readout.ncols()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn fdt_report(&self) -> &FdtReport<T> {
        &self.fdt
    }

    pub fn system(&self) -> &GleSystem<T> {
        &self.system
    }

    /// Installs a 1D closed-form drift route (`kind` selects OU or harmonic;
    /// `alpha_or_omega` is the corresponding rate or frequency). The system
    /// must be scalar with `h = g`.
    pub fn with_closed_form_1d(
        mut self,
        g: crate::expr::Expr,
        sigma: crate::expr::Expr,
        alpha_or_omega: T,
        kind: Provenance,
    ) -> Result<Self> {
        if self.system.dim() != 1 {
            return Err(Error::DimensionMismatch(
                "closed-form drift routes are one-dimensional".into(),
            ));
        }
        if !matches!(kind, Provenance::ClosedForm1dOu | Provenance::ClosedForm1dHarmonic) {
            return Err(Error::InvalidModel(
                "closed-form provenance must name a 1d sub-class".into(),
            ));
        }
        self.provenance = kind;
        self.closed_form = Some(ClosedForm1d {
            g,
            sigma,
            alpha_or_omega,
            kind,
        });
        Ok(self)
    }

    /// All drift pieces at `x`. `S2`/`S3` are always evaluated generically,
    /// including for FDT models where they cancel.
    pub fn drift_parts(&self, x: &DVector<T>) -> Result<DriftParts<T>> {
        if let Some(cf) = &self.closed_form {
            let at = Coeffs1dAt::from_exprs(&cf.g, &cf.sigma, x[0]);
            let (s1, s2, s3) = match cf.kind {
                Provenance::ClosedForm1dOu => drift_1d_ou(
                    &at,
                    self.system.m0,
                    self.system.tau_kappa,
                    self.system.tau_xi,
                    cf.alpha_or_omega,
                )?,
                _ => drift_1d_harmonic(
                    &at,
                    self.system.m0,
                    self.system.tau_kappa,
                    self.system.tau_xi,
                    cf.alpha_or_omega,
                )?,
            };
            let theta_inv_force = self.theta_inv_force(x)?;
            return Ok(DriftParts {
                s1: DVector::from_element(1, s1),
                s2: DVector::from_element(1, s2),
                s3: DVector::from_element(1, s3),
                theta_inv_force,
            });
        }
        let (s1, s2, s3) = noise_induced_drift_with(&self.system, &self.ctx, x)?;
        Ok(DriftParts {
            s1,
            s2,
            s3,
            theta_inv_force: self.theta_inv_force(x)?,
        })
    }

    fn theta_inv_force(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let theta = theta_with_k1(&self.system, &self.ctx.k1, x)?;
        let force = self.system.coeffs.force(x);
        matrixlab::solve_linear(&theta, &force)
    }

    /// Total drift. For FDT models this is the reduced single-term form
    /// `S1 + theta^{-1} F` (the cross terms cancel identically).
    pub fn drift(&self, x: &DVector<T>) -> Result<DVector<T>> {
        let parts = self.drift_parts(x)?;
        if self.provenance == Provenance::Fdt {
            Ok(&parts.s1 + &parts.theta_inv_force)
        } else {
            Ok(parts.total())
        }
    }

    /// Diffusion field `theta^{-1}(x) sigma(x) C2 Gamma2^{-1} Sigma2`.
    pub fn diffusion(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        let theta = theta_with_k1(&self.system, &self.ctx.k1, x)?;
        let theta_inv = matrixlab::invert(&theta)?;
        Ok(theta_inv * self.system.coeffs.sigma(x) * &self.noise_readout)
    }
}

/// Scalar coefficient values and first derivatives at one state, the inputs
/// to the closed-form 1D drifts.
#[derive(Debug, Clone, Copy)]
pub struct Coeffs1dAt<T: Real> {
    pub g: T,
    pub dg: T,
    pub sigma: T,
    pub dsigma: T,
}

impl<T: Real> Coeffs1dAt<T> {
    pub fn from_exprs(g: &crate::expr::Expr, sigma: &crate::expr::Expr, x: T) -> Self {
        Coeffs1dAt {
            g: g.eval(x),
            dg: g.derivative().eval(x),
            sigma: sigma.eval(x),
            dsigma: sigma.derivative().eval(x),
        }
    }
}

/// Closed-form noise-induced drift for the scalar OU sub-class (`h = g`,
/// rate `alpha`). Returns `(S1, S2, S3)`.
pub fn drift_1d_ou<T: Real>(
    at: &Coeffs1dAt<T>,
    m0: T,
    tau_kappa: T,
    tau_eta: T,
    alpha: T,
) -> Result<(T, T, T)> {
    let g = at.g;
    if g == T::zero() {
        return Err(Error::ZeroDamping(f64::NAN));
    }
    let two = convert::<T>(2.0);
    let g2 = g * g;
    let sig = at.sigma;
    let tsum = tau_kappa + tau_eta;
    let den = tau_eta * tau_eta * g2 + m0 * alpha * tsum;
    if den == T::zero() {
        return Err(Error::DegenerateDenominator(f64::NAN));
    }
    let inv_g2_prime = -two * at.dg / (g2 * g);
    let inv_g_prime = -at.dg / g2;
    let sig_over_g2_prime = at.dsigma / g2 - two * sig * at.dg / (g2 * g);

    let s1 = inv_g2_prime * sig * sig / (two * g2)
        * ((tau_kappa * tau_kappa * g2 + m0 * alpha * tsum) / den);
    let s2 = -inv_g_prime * sig * sig * tau_kappa * tsum / (two * g * den);
    let s3 = sig_over_g2_prime * sig * tau_eta * tsum / (two * den);
    Ok((s1, s2, s3))
}

/// Closed-form noise-induced drift for the scalar harmonic sub-class
/// (`h = g`, frequency `omega`, noise time scale `tau_h`).
///
/// All five J-entries carry the common rational denominator `R(x)`; the
/// published display drops it from two of them, but both the big-Lyapunov
/// solve and the large-frequency degeneration to the OU forms pin it down.
pub fn drift_1d_harmonic<T: Real>(
    at: &Coeffs1dAt<T>,
    m0: T,
    tau_kappa: T,
    tau_h: T,
    omega: T,
) -> Result<(T, T, T)> {
    let g = at.g;
    if g == T::zero() {
        return Err(Error::ZeroDamping(f64::NAN));
    }
    if omega == T::zero() {
        return Err(Error::ZeroFrequency);
    }
    let one = T::one();
    let two = convert::<T>(2.0);
    let three = convert::<T>(3.0);
    let four = convert::<T>(4.0);

    let tk = tau_kappa;
    let th = tau_h;
    let g2 = g * g;
    let g4 = g2 * g2;
    let w2 = omega * omega;
    let w4 = w2 * w2;
    let sig = at.sigma;
    let tsum = tk + th;
    let p = tk * tk + th * th + tk * th * (w2 - two);

    let tk2 = tk * tk;
    let tk3 = tk2 * tk;
    let tk4 = tk3 * tk;
    let th2 = th * th;
    let th3 = th2 * th;
    let th4 = th3 * th;

    let r = g4 * th4 * (tk2 + tk * th * w2 + th2 * w2)
        + m0 * m0 * w4 * tsum * tsum * p
        + g2 * m0 * th2 * w2
            * (th3 * w2 + tk3 * (w2 - two) + tk2 * th * w2 * (w2 - two)
                + tk * th2 * (two - two * w2 + w4));
    if r.abs() <= T::of(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateR(f64::NAN));
    }

    let j11 = sig * sig / (two * m0 * g2 * r)
        * (g4 * tk4 * (tk2 + tk * th * w2 + th2 * w2)
            + m0 * m0 * w4 * tsum * tsum * p
            + m0 * w2 * g2 * tsum
                * (th4 + tk2 * th2 * (w2 - two) + tk4 * (w2 - one)
                    + tk3 * th * (two - three * w2 + w4)));
    let j21 = sig * sig * tsum * w2 / (four * g * r)
        * (m0 * w2 * tsum * p + g2 * (tk4 + tk2 * th2 + th4 + tk3 * th * (w2 - one)));
    let j31 = -(sig * sig * tsum * w2) / (four * g * r)
        * (-(m0 * w2 * tsum * p) + g2 * (tk4 + tk2 * th2 - th4 + tk3 * th * (w2 - one)));
    let j41 = sig * w2 * tsum / (two * r) * (g2 * th4 + m0 * w2 * tsum * p);
    let j51 = -(sig * w2 * tsum) / (two * r)
        * (m0 * w2 * tsum * p - g2 * tk * th2 * (tk + th * (w2 - one)));

    let inv_g2_prime = -two * at.dg / (g2 * g);
    let inv_g_prime = -at.dg / g2;
    let sig_over_g2_prime = at.dsigma / g2 - two * sig * at.dg / (g2 * g);

    let s1 = m0 * inv_g2_prime * j11;
    let s2 = -tk * inv_g_prime * (j21 + (one - two / w2) * j31);
    let s3 = th * sig_over_g2_prime * (j41 + j51 / w2);
    Ok((s1, s2, s3))
}
