//! Thermophoresis of a Brownian particle in a nonequilibrium heat bath:
//! one-dimensional GLE models built from diffusion/temperature profiles,
//! closed-form thermophoretic drifts for the Ornstein-Uhlenbeck and
//! harmonic noise kinds, stationary densities under reflecting boundaries,
//! and critical damping-to-mass ratios where the drift changes sign.
//!
//! Physics conventions: the damping obeys `gamma = kB T / D` and the noise
//! amplitude `sigma = kB T sqrt(2) / sqrt(D)` (a generalized
//! fluctuation-dissipation identity `sigma^2 = 2 kB T gamma`); with a
//! viscosity law `mu(T)` the Stokes relation `gamma = 6 pi mu R` fixes `D`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::homogenize::{homogenized_sde, HomogenizedSde, Provenance};
use crate::model::{harmonic_realization, ou_realization, CoefficientField, GleSystem, Probes};
use crate::quad::adaptive_simpson;
use crate::real::{convert, Real};

/// Colored-noise kind driving the thermophoresis model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind<T: Real> {
    /// Ornstein-Uhlenbeck noise with rate `alpha`.
    Ou { alpha: T },
    /// Harmonic noise with frequency `omega` (`|omega| != 2`, nonzero).
    Harmonic { omega: T },
}

/// Viscosity as a function of temperature.
#[derive(Debug, Clone)]
pub enum ViscosityLaw {
    Constant(f64),
    /// Expression in the temperature (the expression variable is `T`).
    OfTemperature(Expr),
}

impl ViscosityLaw {
    pub fn eval<T: Real>(&self, temperature: T) -> T {
        match self {
            ViscosityLaw::Constant(v) => convert(*v),
            ViscosityLaw::OfTemperature(e) => e.eval(temperature),
        }
    }

    pub fn derivative<T: Real>(&self, temperature: T) -> T {
        match self {
            ViscosityLaw::Constant(_) => T::zero(),
            ViscosityLaw::OfTemperature(e) => e.derivative().eval(temperature),
        }
    }
}

/// One-dimensional thermophoresis model.
///
/// `tau` may be zero: the closed-form drifts and densities then describe
/// the `r = tau/m0 -> 0` regime, though no pre-limit GLE exists for it.
#[derive(Debug, Clone)]
pub struct ThermoModel<T: Real> {
    /// Diffusion coefficient profile `D(x) > 0`.
    pub diffusion: Expr,
    /// Temperature profile `T(x) > 0`.
    pub temperature: Expr,
    /// Boltzmann constant (1 in nondimensional units).
    pub kb: T,
    /// Particle radius entering the Stokes law.
    pub radius: T,
    /// Viscosity law, if the model is tied to the Stokes relation.
    pub viscosity: Option<ViscosityLaw>,
    pub m0: T,
    pub tau: T,
    pub noise: NoiseKind<T>,
}

impl<T: Real> ThermoModel<T> {
    /// Model from explicit diffusion and temperature profiles.
    pub fn from_profiles(
        diffusion: Expr,
        temperature: Expr,
        kb: T,
        radius: T,
        m0: T,
        tau: T,
        noise: NoiseKind<T>,
    ) -> Result<Self> {
        if kb <= T::zero() || radius <= T::zero() || m0 <= T::zero() || tau < T::zero() {
            return Err(Error::InvalidModel(
                "thermophoresis scales kb, radius, m0 must be positive and tau nonnegative".into(),
            ));
        }
        Ok(ThermoModel {
            diffusion,
            temperature,
            kb,
            radius,
            viscosity: None,
            m0,
            tau,
            noise,
        })
    }

    /// Model from a temperature profile and a viscosity law; the diffusion
    /// profile follows from the Stokes relation
    /// `D = kB T / (6 pi R mu(T))`.
    pub fn from_viscosity(
        temperature: Expr,
        viscosity: ViscosityLaw,
        kb: T,
        radius: T,
        m0: T,
        tau: T,
        noise: NoiseKind<T>,
    ) -> Result<Self> {
        let mu_of_x = match &viscosity {
            ViscosityLaw::Constant(v) => Expr::constant(*v),
            ViscosityLaw::OfTemperature(e) => e.substitute(&temperature),
        };
        let stokes = convert::<T>(6.0) * T::pi() * radius;
        let diffusion = Expr::Div(
            Arc::new(Expr::Mul(
                Arc::new(Expr::constant(kb.to_f64_lossy() / stokes.to_f64_lossy())),
                Arc::new(temperature.clone()),
            )),
            Arc::new(mu_of_x),
        );
        let mut model = Self::from_profiles(diffusion, temperature, kb, radius, m0, tau, noise)?;
        model.viscosity = Some(viscosity);
        Ok(model)
    }

    /// The ratio `r = tau / m0` controlling the competition of time scales.
    pub fn r(&self) -> T {
        self.tau / self.m0
    }

    fn d_at(&self, x: T) -> Result<(T, T)> {
        let d = self.diffusion.eval(x);
        if !(d > T::zero()) {
            return Err(Error::DomainViolation(format!(
                "diffusion D({:e}) = {:e} is not positive",
                x, d
            )));
        }
        Ok((d, self.diffusion.derivative().eval(x)))
    }

    fn t_at(&self, x: T) -> Result<(T, T)> {
        let t = self.temperature.eval(x);
        if !(t > T::zero()) {
            return Err(Error::DomainViolation(format!(
                "temperature T({:e}) = {:e} is not positive",
                x, t
            )));
        }
        Ok((t, self.temperature.derivative().eval(x)))
    }

    /// Builds the corresponding 1D GLE system: `g = h = sqrt(gamma)`,
    /// `sigma = kB T sqrt(2/D)`, no external force, both time scales `tau`.
    pub fn to_gle_system(&self) -> Result<GleSystem<T>> {
        if self.tau <= T::zero() {
            return Err(Error::InvalidModel(
                "the r -> 0 preset has no pre-limit GLE; tau must be positive".into(),
            ));
        }
        let g_expr = self.g_expr();
        let sigma_expr = self.sigma_expr();
        let coeffs = CoefficientField::scalar_1d(
            Expr::constant(0.0),
            g_expr.clone(),
            g_expr,
            sigma_expr,
        );
        let (kernel, noise) = match self.noise {
            NoiseKind::Ou { alpha } => {
                ou_realization(&DMatrix::from_element(1, 1, alpha))?
            }
            NoiseKind::Harmonic { omega } => {
                harmonic_realization(&DMatrix::from_element(1, 1, omega), T::one())?
            }
        };
        GleSystem::new(coeffs, kernel, noise, self.m0, self.tau, self.tau)
    }

    /// `g(x) = sqrt(kB T / D)` as an expression.
    pub fn g_expr(&self) -> Expr {
        Expr::Sqrt(Arc::new(Expr::Div(
            Arc::new(Expr::Mul(
                Arc::new(Expr::constant(self.kb.to_f64_lossy())),
                Arc::new(self.temperature.clone()),
            )),
            Arc::new(self.diffusion.clone()),
        )))
    }

    /// `sigma(x) = kB T sqrt(2) / sqrt(D)` as an expression.
    pub fn sigma_expr(&self) -> Expr {
        Expr::Div(
            Arc::new(Expr::Mul(
                Arc::new(Expr::constant(
                    self.kb.to_f64_lossy() * std::f64::consts::SQRT_2,
                )),
                Arc::new(self.temperature.clone()),
            )),
            Arc::new(Expr::Sqrt(Arc::new(self.diffusion.clone()))),
        )
    }

    /// Limiting SDE via the generic homogenization pipeline, with probe
    /// states placed inside the working interval.
    pub fn homogenized_on(&self, a: T, b: T) -> Result<HomogenizedSde<T>> {
        let system = self.to_gle_system()?.with_probes(Probes::in_box(
            DVector::from_element(1, a + (b - a) * convert(0.05)),
            DVector::from_element(1, b - (b - a) * convert(0.05)),
            16,
        ));
        homogenized_sde(&system)
    }

    /// Limiting SDE with the closed-form 1D drift route installed
    /// (fast evaluation for long occupancy runs).
    pub fn homogenized_closed_form_on(&self, a: T, b: T) -> Result<HomogenizedSde<T>> {
        let hsde = self.homogenized_on(a, b)?;
        let (value, kind) = match self.noise {
            NoiseKind::Ou { alpha } => (alpha, Provenance::ClosedForm1dOu),
            NoiseKind::Harmonic { omega } => (omega, Provenance::ClosedForm1dHarmonic),
        };
        hsde.with_closed_form_1d(self.g_expr(), self.sigma_expr(), value, kind)
    }
}

/// Damping and noise coefficients `(gamma, sigma)` at `x`:
/// `gamma = kB T / D`, `sigma = kB T sqrt(2) / sqrt(D)`.
pub fn damping_and_noise<T: Real>(model: &ThermoModel<T>, x: T) -> Result<(T, T)> {
    let (d, _) = model.d_at(x)?;
    let (t, _) = model.t_at(x)?;
    let gamma = model.kb * t / d;
    let sigma = model.kb * t * convert::<T>(std::f64::consts::SQRT_2) / d.sqrt();
    Ok((gamma, sigma))
}

/// Thermophoretic drift for the Ornstein-Uhlenbeck noise kind:
/// `b1 = D' - [2 m0 alpha D^2 / (tau kB T + 2 m0 alpha D)] T'/T`.
pub fn drift_b1<T: Real>(model: &ThermoModel<T>, x: T) -> Result<T> {
    let NoiseKind::Ou { alpha } = model.noise else {
        return Err(Error::WrongNoiseKind {
            expected: "ou",
            actual: "harmonic",
        });
    };
    let (d, dd) = model.d_at(x)?;
    let (t, dt) = model.t_at(x)?;
    let two = convert::<T>(2.0);
    let den = model.tau * model.kb * t + two * model.m0 * alpha * d;
    if den == T::zero() {
        return Err(Error::DegenerateDenominator(x.to_f64_lossy()));
    }
    Ok(dd - two * model.m0 * alpha * d * d / den * (dt / t))
}

/// Thermophoretic drift for the harmonic noise kind (Omega-dependent
/// rational correction to the temperature-gradient term).
pub fn drift_b2<T: Real>(model: &ThermoModel<T>, x: T) -> Result<T> {
    let NoiseKind::Harmonic { omega } = model.noise else {
        return Err(Error::WrongNoiseKind {
            expected: "harmonic",
            actual: "ou",
        });
    };
    let (d, dd) = model.d_at(x)?;
    let (t, dt) = model.t_at(x)?;
    let two = convert::<T>(2.0);
    let four = convert::<T>(4.0);
    let w2 = omega * omega;
    let w4 = w2 * w2;
    let w6 = w4 * w2;
    let m0 = model.m0;
    let tau = model.tau;
    let kbt = model.kb * t;
    let numerator = (four * m0 * m0 * w6 * d * d + tau * tau * kbt * kbt) * d;
    let denominator = four * m0 * m0 * w6 * d * d
        + two * kbt * m0 * tau * w4 * (w2 - T::one()) * d
        + tau * tau * (T::one() + two * w2) * kbt * kbt;
    if denominator == T::zero() {
        return Err(Error::DegenerateDenominator(x.to_f64_lossy()));
    }
    Ok(dd - numerator / denominator * (dt / t))
}

/// Thermophoretic drift for whichever noise kind the model uses.
pub fn drift<T: Real>(model: &ThermoModel<T>, x: T) -> Result<T> {
    match model.noise {
        NoiseKind::Ou { .. } => drift_b1(model, x),
        NoiseKind::Harmonic { .. } => drift_b2(model, x),
    }
}

/// Exponent integrand of the stationary density under reflecting
/// boundaries: `rho(x) ~ exp(-int_a^x phi(y) dy)`.
fn density_integrand<T: Real>(model: &ThermoModel<T>, y: T) -> Result<T> {
    let (d, _) = model.d_at(y)?;
    let (t, dt) = model.t_at(y)?;
    let r = model.r();
    match model.noise {
        NoiseKind::Ou { alpha } => {
            let gamma = model.kb * t / d;
            let two = convert::<T>(2.0);
            Ok(two * alpha / (r * gamma + two * alpha) * (dt / t))
        }
        NoiseKind::Harmonic { omega } => {
            let two = convert::<T>(2.0);
            let four = convert::<T>(4.0);
            let w2 = omega * omega;
            let w4 = w2 * w2;
            let w6 = w4 * w2;
            let kbt = model.kb * t;
            let num = four * w6 * d * d + r * r * kbt * kbt;
            let den = four * w6 * d * d
                + two * r * w4 * (w2 - T::one()) * d * kbt
                + r * r * (T::one() + two * w2) * kbt * kbt;
            if den == T::zero() {
                return Err(Error::DegenerateDenominator(y.to_f64_lossy()));
            }
            Ok(num / den * (dt / t))
        }
    }
}

/// Normalized stationary density table on `[a, b]`.
#[derive(Debug, Clone)]
pub struct DensityTable<T: Real> {
    pub xs: Vec<T>,
    pub pdf: Vec<T>,
    /// Cumulative distribution at the same nodes (0 at `a`, 1 at `b`).
    pub cdf: Vec<T>,
}

impl<T: Real> DensityTable<T> {
    /// CDF at arbitrary points by linear interpolation.
    pub fn cdf_at(&self, x: T) -> T {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return T::zero();
        }
        if x >= self.xs[n - 1] {
            return T::one();
        }
        let mut lo = 0;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.xs[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let frac = (x - self.xs[lo]) / (self.xs[hi] - self.xs[lo]);
        self.cdf[lo] + frac * (self.cdf[hi] - self.cdf[lo])
    }
}

/// Computes the stationary density of the particle position on `(a, b)`
/// with reflecting boundaries, normalized to unit mass (tolerance 1e-8).
pub fn stationary_density<T: Real>(
    model: &ThermoModel<T>,
    a: T,
    b: T,
    grid: usize,
) -> Result<DensityTable<T>> {
    if !(a < b) {
        return Err(Error::DomainViolation(format!(
            "interval ({:e}, {:e}) is empty",
            a, b
        )));
    }
    let n = grid.max(16);
    let h = (b - a) / convert(n as f64);
    let tol = convert::<T>(1e-12);
    let mut xs = Vec::with_capacity(n + 1);
    let mut exponent = Vec::with_capacity(n + 1);
    let mut acc = T::zero();
    xs.push(a);
    exponent.push(T::zero());
    for i in 0..n {
        let lo = a + h * convert(i as f64);
        let hi = lo + h;
        acc += adaptive_simpson(
            &|y: T| density_integrand(model, y).unwrap_or_else(|_| T::of(f64::NAN)),
            lo,
            hi,
            tol,
        )?;
        xs.push(hi);
        exponent.push(acc);
    }
    // Shift before exponentiating for numerical range.
    let min_exp = exponent
        .iter()
        .cloned()
        .fold(T::of(f64::INFINITY), |m, v| if v < m { v } else { m });
    let unnorm: Vec<T> = exponent.iter().map(|&e| (-(e - min_exp)).exp()).collect();
    // Normalize with composite Simpson on the uniform grid (n is even by
    // construction below; force it).
    let mass = trapezoid_mass(&unnorm, h);
    if !(mass > T::zero()) || !mass.is_finite() {
        return Err(Error::QuadratureFailure(
            "stationary density has vanishing or non-finite mass".into(),
        ));
    }
    let pdf: Vec<T> = unnorm.iter().map(|&v| v / mass).collect();
    let mut cdf = Vec::with_capacity(pdf.len());
    let mut cum = T::zero();
    cdf.push(T::zero());
    for i in 1..pdf.len() {
        cum += (pdf[i - 1] + pdf[i]) * h * convert(0.5);
        cdf.push(cum);
    }
    // Pin the endpoint exactly.
    let total = *cdf.last().expect("nonempty");
    let cdf: Vec<T> = cdf.iter().map(|&c| c / total).collect();
    Ok(DensityTable { xs, pdf, cdf })
}

fn trapezoid_mass<T: Real>(values: &[T], h: T) -> T {
    let mut acc = T::zero();
    for i in 1..values.len() {
        acc += (values[i - 1] + values[i]) * h * convert(0.5);
    }
    acc
}

/// Positive ratios `r = tau/m0` at which the thermophoretic drift changes
/// sign at `x`. Empty when the drift keeps one sign for all `r > 0` (for
/// instance constant viscosity in the OU model). One root at most for the
/// OU kind, up to two for the harmonic kind.
pub fn critical_ratio<T: Real>(model: &ThermoModel<T>, x: T) -> Result<Vec<T>> {
    let (d, dd) = model.d_at(x)?;
    let (t, dt) = model.t_at(x)?;
    let kbt = model.kb * t;
    let two = convert::<T>(2.0);
    let four = convert::<T>(4.0);
    match model.noise {
        NoiseKind::Ou { alpha } => {
            // b1 = 0 is linear in r: r kB T D' = 2 alpha D (D T'/T - D').
            if dd == T::zero() {
                return Ok(Vec::new());
            }
            let r = two * alpha * d * (d * dt / t - dd) / (dd * kbt);
            Ok(if r > T::zero() && r.is_finite() {
                vec![r]
            } else {
                Vec::new()
            })
        }
        NoiseKind::Harmonic { omega } => {
            let w2 = omega * omega;
            let w4 = w2 * w2;
            let w6 = w4 * w2;
            // b2 = 0 is quadratic in r.
            let a_coef = kbt * kbt * (dd * (T::one() + two * w2) - d * dt / t);
            let b_coef = two * kbt * w4 * (w2 - T::one()) * d * dd;
            let c_coef = four * w6 * d * d * (dd - d * dt / t);
            let mut roots = Vec::new();
            if a_coef == T::zero() {
                if b_coef != T::zero() {
                    let r = -c_coef / b_coef;
                    if r > T::zero() {
                        roots.push(r);
                    }
                }
            } else {
                let disc = b_coef * b_coef - four * a_coef * c_coef;
                if disc >= T::zero() {
                    let sq = disc.sqrt();
                    for r in [
                        (-b_coef + sq) / (two * a_coef),
                        (-b_coef - sq) / (two * a_coef),
                    ] {
                        if r > T::zero() && r.is_finite() {
                            roots.push(r);
                        }
                    }
                }
            }
            roots.sort_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));
            roots.dedup_by(|p, q| (*p - *q).abs() <= convert::<T>(1e-12) * (T::one() + q.abs()));
            Ok(roots)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear_temperature() -> Expr {
        Expr::parse("1 + x / 2").unwrap()
    }

    fn ou_model(tau: f64) -> ThermoModel<f64> {
        // Constant viscosity mu0 = 1/(6 pi) so gamma = 1 with R = 1.
        ThermoModel::from_viscosity(
            linear_temperature(),
            ViscosityLaw::Constant(1.0 / (6.0 * std::f64::consts::PI)),
            1.0,
            1.0,
            1.0,
            tau,
            NoiseKind::Ou { alpha: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn damping_unit_plug_in() {
        let model = ThermoModel::from_profiles(
            Expr::constant(1.0),
            Expr::constant(1.0),
            1.0,
            1.0,
            1.0,
            1.0,
            NoiseKind::Ou { alpha: 1.0 },
        )
        .unwrap();
        let (gamma, sigma) = damping_and_noise(&model, 0.3).unwrap();
        assert_relative_eq!(gamma, 1.0, epsilon = 1e-14);
        assert_relative_eq!(sigma, std::f64::consts::SQRT_2, epsilon = 1e-14);
    }

    #[test]
    fn generalized_fdt_identity_on_grid() {
        let model = ThermoModel::from_profiles(
            Expr::parse("1 + x * x / 3").unwrap(),
            Expr::parse("2 + sin(x)").unwrap(),
            1.0,
            1.0,
            1.0,
            0.7,
            NoiseKind::Ou { alpha: 1.3 },
        )
        .unwrap();
        for i in 0..40 {
            let x = -2.0 + 4.0 * i as f64 / 39.0;
            let (gamma, sigma) = damping_and_noise(&model, x).unwrap();
            let t = model.temperature.eval(x);
            assert_relative_eq!(
                sigma * sigma / (2.0 * gamma),
                model.kb * t,
                epsilon = 1e-12,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn stokes_law_constant_viscosity_gives_constant_damping() {
        let model = ou_model(1.0);
        let expected = 6.0 * std::f64::consts::PI * (1.0 / (6.0 * std::f64::consts::PI)) * 1.0;
        for &x in &[0.1, 0.4, 0.9] {
            let (gamma, _) = damping_and_noise(&model, x).unwrap();
            assert_relative_eq!(gamma, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn drift_b1_limits() {
        // Constant temperature: b1 = D'.
        let model = ThermoModel::from_profiles(
            Expr::parse("1 + x / 4").unwrap(),
            Expr::constant(2.0),
            1.0,
            1.0,
            1.0,
            0.8,
            NoiseKind::Ou { alpha: 1.0 },
        )
        .unwrap();
        assert_relative_eq!(drift_b1(&model, 0.5).unwrap(), 0.25, epsilon = 1e-13);

        // r -> infinity: b1 -> D'.
        let model = ThermoModel::from_profiles(
            Expr::parse("1 + x / 4").unwrap(),
            linear_temperature(),
            1.0,
            1.0,
            1.0,
            1e12,
            NoiseKind::Ou { alpha: 1.0 },
        )
        .unwrap();
        assert_relative_eq!(drift_b1(&model, 0.5).unwrap(), 0.25, epsilon = 1e-9);
    }

    #[test]
    fn drift_b1_constant_viscosity_display() {
        // b1 = kB T' / (6 pi R mu0) * [1 - alpha/(alpha + 3 pi r R mu0)].
        let mu0 = 1.0 / (6.0 * std::f64::consts::PI);
        let model = ou_model(1.0);
        let r = 1.0;
        let expected = 0.5 * (1.0 - 1.0 / (1.0 + 3.0 * std::f64::consts::PI * r * mu0));
        for &x in &[0.2, 0.7] {
            assert_relative_eq!(drift_b1(&model, x).unwrap(), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn drift_b2_limits_and_omega_to_infinity() {
        let t_expr = linear_temperature();
        let d_expr = Expr::parse("1 + x * x / 5").unwrap();
        // Constant temperature: b2 = D'.
        let model = ThermoModel::from_profiles(
            d_expr.clone(),
            Expr::constant(1.5),
            1.0,
            1.0,
            1.0,
            0.8,
            NoiseKind::Harmonic { omega: 1.3 },
        )
        .unwrap();
        assert_relative_eq!(
            drift_b2(&model, 0.5).unwrap(),
            d_expr.derivative().eval(0.5),
            epsilon = 1e-13
        );

        // Omega -> infinity: b2 -> b1 with alpha = 1.
        let harmonic = ThermoModel::from_profiles(
            d_expr.clone(),
            t_expr.clone(),
            1.0,
            1.0,
            1.0,
            0.8,
            NoiseKind::Harmonic { omega: 1e3 },
        )
        .unwrap();
        let ou = ThermoModel::from_profiles(
            d_expr,
            t_expr,
            1.0,
            1.0,
            1.0,
            0.8,
            NoiseKind::Ou { alpha: 1.0 },
        )
        .unwrap();
        for &x in &[0.1f64, 0.6] {
            let b2: f64 = drift_b2(&harmonic, x).unwrap();
            let b1: f64 = drift_b1(&ou, x).unwrap();
            assert!((b2 - b1).abs() <= 1e-3 * (1.0 + b1.abs()));
        }
    }

    #[test]
    fn drift_b2_sign_matches_temperature_gradient_for_large_omega() {
        // Constant viscosity and |Omega| >= 1: sign(b2) = sign(T').
        for &omega in &[1.0f64, 1.7, 3.0] {
            let model = ThermoModel::from_viscosity(
                linear_temperature(),
                ViscosityLaw::Constant(0.05),
                1.0,
                1.0,
                1.0,
                0.6,
                NoiseKind::Harmonic { omega },
            )
            .unwrap();
            for i in 0..12 {
                let x = 0.05 + 0.9 * i as f64 / 11.0;
                let b2 = drift_b2(&model, x).unwrap();
                assert!(b2 > 0.0, "omega {omega}: b2({x}) = {b2}");
            }
        }
    }

    #[test]
    fn wrong_noise_kind_is_reported() {
        let model = ou_model(1.0);
        assert!(matches!(
            drift_b2(&model, 0.5),
            Err(Error::WrongNoiseKind { .. })
        ));
    }

    #[test]
    fn stationary_density_uniform_when_temperature_constant() {
        let model = ThermoModel::from_profiles(
            Expr::parse("1 + x / 7").unwrap(),
            Expr::constant(1.0),
            1.0,
            1.0,
            1.0,
            0.5,
            NoiseKind::Ou { alpha: 1.0 },
        )
        .unwrap();
        let table = stationary_density(&model, 0.0, 1.0, 200).unwrap();
        for &p in &table.pdf {
            assert_relative_eq!(p, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn stationary_density_power_law_when_damping_constant() {
        // Constant viscosity (gamma = 1): rho ~ T^[-2 alpha/(2 alpha + r gamma)].
        let model = ou_model(1.0);
        let alpha = 1.0;
        let r = 1.0;
        let exponent = -2.0 * alpha / (2.0 * alpha + r * 1.0);
        let table = stationary_density(&model, 0.0, 1.0, 256).unwrap();
        // Normalize the reference the same way and compare pointwise.
        let t = |x: f64| 1.0 + x / 2.0;
        let ref_mass: f64 = {
            let n = 256;
            let h = 1.0 / n as f64;
            let vals: Vec<f64> = (0..=n).map(|i| t(i as f64 * h).powf(exponent)).collect();
            vals.windows(2).map(|w| (w[0] + w[1]) * h / 2.0).sum()
        };
        for (i, &x) in table.xs.iter().enumerate() {
            let expected = t(x).powf(exponent) / ref_mass;
            assert_relative_eq!(table.pdf[i], expected, max_relative = 1e-6);
        }
    }

    #[test]
    fn stationary_density_inverse_temperature_at_small_r() {
        let model = ou_model(0.0);
        let table = stationary_density(&model, 0.0, 1.0, 256).unwrap();
        let t = |x: f64| 1.0 + x / 2.0;
        let ref_mass: f64 = {
            let n = 256;
            let h = 1.0 / n as f64;
            let vals: Vec<f64> = (0..=n).map(|i| 1.0 / t(i as f64 * h)).collect();
            vals.windows(2).map(|w| (w[0] + w[1]) * h / 2.0).sum()
        };
        for (i, &x) in table.xs.iter().enumerate() {
            let expected = 1.0 / t(x) / ref_mass;
            assert_relative_eq!(table.pdf[i], expected, max_relative = 1e-6);
        }
    }

    #[test]
    fn critical_ratio_empty_for_constant_viscosity_ou() {
        let model = ou_model(1.0);
        assert!(critical_ratio(&model, 0.5).unwrap().is_empty());
    }

    #[test]
    fn critical_ratio_harmonic_constant_viscosity() {
        // Sign flip at r = Omega^2 (1 - Omega^2) / (6 pi R mu0) for |Omega| < 1.
        let mu0 = 0.03;
        let omega = 0.6f64;
        let model = ThermoModel::from_viscosity(
            linear_temperature(),
            ViscosityLaw::Constant(mu0),
            1.0,
            1.0,
            1.0,
            0.5,
            NoiseKind::Harmonic { omega },
        )
        .unwrap();
        let roots = critical_ratio(&model, 0.4).unwrap();
        let expected = omega.powi(2) * (1.0 - omega.powi(2)) / (6.0 * std::f64::consts::PI * mu0);
        assert_eq!(roots.len(), 1, "{roots:?}");
        assert_relative_eq!(roots[0], expected, max_relative = 1e-10);

        // Drift changes sign across the root.
        let mut below = model.clone();
        below.tau = 0.9 * expected * below.m0;
        let mut above = model.clone();
        above.tau = 1.1 * expected * above.m0;
        let b_below = drift_b2(&below, 0.4).unwrap();
        let b_above = drift_b2(&above, 0.4).unwrap();
        assert!(b_below * b_above < 0.0, "{b_below} vs {b_above}");
    }

    #[test]
    fn critical_ratio_ou_matches_stokes_form_and_bisection() {
        // mu(T) = mu0 (1 + c T): closed form
        // r_c = alpha/(3 pi R mu) * mu' T / (mu - mu' T).
        let mu0 = 0.02;
        let c = 0.8;
        let law = ViscosityLaw::OfTemperature(Expr::parse(&format!("{mu0} * (1 + {c} * x)")).unwrap());
        let alpha = 1.2;
        let radius = 1.5;
        let model = ThermoModel::from_viscosity(
            linear_temperature(),
            law,
            1.0,
            radius,
            1.0,
            0.5,
            NoiseKind::Ou { alpha },
        )
        .unwrap();
        let x = 0.4;
        let t = model.temperature.eval(x);
        let mu = mu0 * (1.0 + c * t);
        let mu_prime = mu0 * c;
        let expected = alpha / (3.0 * std::f64::consts::PI * radius * mu) * (mu_prime * t)
            / (mu - mu_prime * t);
        let roots = critical_ratio(&model, x).unwrap();
        assert_eq!(roots.len(), 1);
        assert_relative_eq!(roots[0], expected, max_relative = 1e-9);

        // Bisection oracle on b1 as a function of r.
        let b1_of_r = |r: f64| {
            let mut m = model.clone();
            m.tau = r * m.m0;
            drift_b1(&m, x).unwrap()
        };
        let (mut lo, mut hi) = (expected * 0.2, expected * 5.0);
        assert!(b1_of_r(lo) * b1_of_r(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if b1_of_r(lo) * b1_of_r(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert_relative_eq!(0.5 * (lo + hi), expected, max_relative = 1e-6);
    }

    #[test]
    fn closed_form_drift_matches_homogenized_pipeline() {
        // OU kind on a 50-point grid.
        let model = ThermoModel::from_profiles(
            Expr::parse("1 + x * x / 6").unwrap(),
            Expr::parse("2 + sin(x) / 2").unwrap(),
            1.0,
            1.0,
            0.9,
            1.3,
            NoiseKind::Ou { alpha: 1.1 },
        )
        .unwrap();
        let hsde = model.homogenized_on(0.0, 1.0).unwrap();
        for i in 0..50 {
            let x = 0.02 + 0.96 * i as f64 / 49.0;
            let b1 = drift_b1(&model, x).unwrap();
            let generic = hsde.drift(&DVector::from_element(1, x)).unwrap()[0];
            assert!(
                (b1 - generic).abs() <= 1e-9 * (1.0 + b1.abs()),
                "x = {x}: b1 {b1} vs generic {generic}"
            );
        }

        // Harmonic kind.
        let model = ThermoModel::from_profiles(
            Expr::parse("1 + x * x / 6").unwrap(),
            Expr::parse("2 + sin(x) / 2").unwrap(),
            1.0,
            1.0,
            0.9,
            1.3,
            NoiseKind::Harmonic { omega: 1.4 },
        )
        .unwrap();
        let hsde = model.homogenized_on(0.0, 1.0).unwrap();
        for i in 0..50 {
            let x = 0.02 + 0.96 * i as f64 / 49.0;
            let b2 = drift_b2(&model, x).unwrap();
            let generic = hsde.drift(&DVector::from_element(1, x)).unwrap()[0];
            assert!(
                (b2 - generic).abs() <= 1e-9 * (1.0 + b2.abs()),
                "x = {x}: b2 {b2} vs generic {generic}"
            );
        }
    }

    #[test]
    fn limit_sde_diffusion_is_two_d() {
        // The limiting SDE is dX = b dt + sqrt(2 D) dW.
        let model = ThermoModel::from_profiles(
            Expr::parse("1 + x / 3").unwrap(),
            Expr::parse("1 + x / 2").unwrap(),
            1.0,
            1.0,
            1.0,
            1.0,
            NoiseKind::Ou { alpha: 1.0 },
        )
        .unwrap();
        let hsde = model.homogenized_on(0.0, 1.0).unwrap();
        for &x in &[0.2, 0.8] {
            let diff = hsde.diffusion(&DVector::from_element(1, x)).unwrap()[(0, 0)];
            let d = model.diffusion.eval(x);
            assert_relative_eq!(diff * diff, 2.0 * d, max_relative = 1e-10);
        }
    }
}
