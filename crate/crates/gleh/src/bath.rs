//! Finite Kac-Zwanzig heat bath: a particle coupled to N harmonic
//! oscillators with Gibbs-distributed initial data. Its induced memory
//! kernel `kappa_N(t) = sum_k (c_k^2/omega_k^2) cos(omega_k t)` and
//! reconstructed noise converge to a target GLE kernel and its
//! fluctuation-dissipation covariance, which makes the bath a statistical
//! validation target for the rest of the library.
//!
//! Only the scalar case is implemented; one dimension is all the
//! validation needs.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::matrixlab::expm;
use crate::real::{convert, Real};

/// Minimum number of oscillator modes for a meaningful discretization.
pub const MIN_MODES: usize = 10;

/// Kernel target for the bath spectrum.
#[derive(Debug, Clone, Copy)]
pub enum BathTarget<T: Real> {
    /// Exponential kernel `alpha e^{-alpha |t|}`.
    Ou { alpha: T },
    /// Oscillatory kernel of the damped stochastic oscillator.
    Harmonic { omega: T, tau: T },
}

impl<T: Real> BathTarget<T> {
    /// Fastest decay/oscillation rate, which sets the frequency cutoff.
    fn fastest_rate(&self) -> T {
        match *self {
            BathTarget::Ou { alpha } => alpha,
            BathTarget::Harmonic { omega, tau } => {
                let osc = omega.abs() / tau;
                let decay = omega * omega / (convert::<T>(2.0) * tau);
                if osc > decay {
                    osc
                } else {
                    decay
                }
            }
        }
    }

    /// Target kernel value at `t`.
    pub fn kernel(&self, t: T) -> Result<T> {
        match *self {
            BathTarget::Ou { alpha } => Ok(alpha * (-alpha * t.abs()).exp()),
            BathTarget::Harmonic { omega, tau } => {
                crate::model::harmonic_kernel_closed_form(omega, tau, t)
            }
        }
    }
}

/// Particle + oscillator-bath model (scalar coupling).
#[derive(Debug, Clone)]
pub struct BathModel<T: Real> {
    /// Oscillator frequencies, all positive.
    pub omegas: Vec<T>,
    /// Coupling strengths `c_k`.
    pub couplings: Vec<T>,
    /// Inverse temperature `1/(kB T)`.
    pub beta: T,
    /// Particle mass.
    pub mass: T,
    /// External potential `U(x)`.
    pub potential: Expr,
    /// Coupling function `f(x)`; the GLE damping factor is `g = f'`.
    pub coupling_fn: Expr,
}

impl<T: Real> BathModel<T> {
    pub fn n(&self) -> usize {
        self.omegas.len()
    }

    pub fn kb_t(&self) -> T {
        T::one() / self.beta
    }

    /// Induced memory kernel `kappa_N(t) = sum_k (c_k^2/omega_k^2) cos(omega_k t)`.
    pub fn kernel_at(&self, t: T) -> T {
        self.omegas
            .iter()
            .zip(&self.couplings)
            .map(|(&w, &c)| c * c / (w * w) * (w * t).cos())
            .fold(T::zero(), |a, b| a + b)
    }

    pub fn max_frequency(&self) -> T {
        self.omegas
            .iter()
            .cloned()
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }
}

/// Discretizes the Debye-spectrum integral representation of the target
/// kernel with `n` midpoint nodes on `[0, omega_max]`,
/// `omega_max = 50 * fastest target rate`. The density of states is
/// `n(omega) = 2 omega^2 / pi`; couplings come from the target's spectral
/// factor `c(omega)`.
pub fn debye_sampling<T: Real>(
    target: BathTarget<T>,
    n: usize,
    beta: T,
    mass: T,
    potential: Expr,
    coupling_fn: Expr,
) -> Result<BathModel<T>> {
    if n < MIN_MODES {
        return Err(Error::InsufficientModes {
            minimum: MIN_MODES,
            got: n,
        });
    }
    let omega_max = convert::<T>(50.0) * target.fastest_rate();
    let dw = omega_max / convert(n as f64);
    let two_over_pi = convert::<T>(2.0) / T::pi();
    let mut omegas = Vec::with_capacity(n);
    let mut couplings = Vec::with_capacity(n);
    for k in 0..n {
        let w = (convert::<T>(k as f64) + convert(0.5)) * dw;
        // c_k^2 = dw * n(w) * c(w)^2 so that kappa_N is the midpoint rule
        // for the continuum kernel integral.
        let c_of_w_sq = match target {
            BathTarget::Ou { alpha } => {
                let a2 = alpha * alpha;
                a2 / (a2 + w * w)
            }
            BathTarget::Harmonic { omega, tau } => {
                let w0 = omega * omega / tau;
                let rate = omega / tau;
                let num = (rate * rate) * (rate * rate);
                let den = w * w * w0 * w0 + (w * w - rate * rate) * (w * w - rate * rate);
                num / den
            }
        };
        let ck_sq = dw * two_over_pi * w * w * c_of_w_sq;
        omegas.push(w);
        couplings.push(ck_sq.sqrt());
    }
    Ok(BathModel {
        omegas,
        couplings,
        beta,
        mass,
        potential,
        coupling_fn,
    })
}

/// Initial bath phase-space state.
#[derive(Debug, Clone)]
pub struct BathState<T: Real> {
    pub positions: Vec<T>,
    pub momenta: Vec<T>,
}

/// Draws the bath from the Gibbs measure conditioned on the particle
/// position: shifted positions `x_k - c_k f(x0)/omega_k^2` are centered
/// Gaussians of variance `kB T / omega_k^2`, momenta of variance `kB T`.
pub fn sample_gibbs_initial<T: Real, R: Rng>(
    model: &BathModel<T>,
    x0: T,
    rng: &mut R,
) -> BathState<T> {
    let kbt = model.kb_t();
    let f0 = model.coupling_fn.eval(x0);
    let sd_p = kbt.sqrt();
    let positions = model
        .omegas
        .iter()
        .zip(&model.couplings)
        .map(|(&w, &c)| {
            let center = c * f0 / (w * w);
            let z: f64 = rng.sample(StandardNormal);
            center + sd_p / w * convert(z)
        })
        .collect();
    let momenta = model
        .omegas
        .iter()
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            sd_p * convert(z)
        })
        .collect();
    BathState { positions, momenta }
}

/// Reconstructs the GLE noise from the initial bath data:
/// `xi(t) = sum_k c_k (x'_k(0) cos(omega_k t) + p_k(0) sin(omega_k t)/omega_k)`.
pub fn reconstruct_noise<T: Real>(
    model: &BathModel<T>,
    initial: &BathState<T>,
    x0: T,
    times: &[T],
) -> Vec<T> {
    let f0 = model.coupling_fn.eval(x0);
    let shifted: Vec<T> = model
        .omegas
        .iter()
        .zip(&model.couplings)
        .zip(&initial.positions)
        .map(|((&w, &c), &xk)| xk - c * f0 / (w * w))
        .collect();
    times
        .iter()
        .map(|&t| {
            let mut acc = T::zero();
            for k in 0..model.n() {
                let w = model.omegas[k];
                let c = model.couplings[k];
                acc += c * (shifted[k] * (w * t).cos() + initial.momenta[k] * (w * t).sin() / w);
            }
            acc
        })
        .collect()
}

/// Output of a Hamiltonian run: particle trajectory, reconstructed noise,
/// and total energy along the way.
#[derive(Debug, Clone)]
pub struct HamiltonianRun<T: Real> {
    pub times: Vec<T>,
    pub positions: Vec<T>,
    pub velocities: Vec<T>,
    /// Noise `xi(t)` reconstructed from the initial bath data.
    pub noise: Vec<T>,
    pub energy: Vec<T>,
}

impl<T: Real> HamiltonianRun<T> {
    /// Largest relative energy drift over the run.
    pub fn max_energy_drift(&self) -> T {
        let e0 = self.energy[0];
        let scale = T::one() + e0.abs();
        self.energy
            .iter()
            .map(|&e| (e - e0).abs() / scale)
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }
}

fn total_energy<T: Real>(
    model: &BathModel<T>,
    x: T,
    p: T,
    bath: &BathState<T>,
) -> T {
    let half = convert::<T>(0.5);
    let f = model.coupling_fn.eval(x);
    let mut e = p * p / (convert::<T>(2.0) * model.mass) + model.potential.eval(x);
    for k in 0..model.n() {
        let w = model.omegas[k];
        let c = model.couplings[k];
        let dx = bath.positions[k] - c * f / (w * w);
        e += half * bath.momenta[k] * bath.momenta[k] + half * w * w * dx * dx;
    }
    e
}

/// Symplectic (velocity-Verlet) integration of the particle-plus-bath
/// Hamiltonian starting from the given initial data.
pub fn integrate_hamiltonian<T: Real>(
    model: &BathModel<T>,
    x0: T,
    v0: T,
    initial: &BathState<T>,
    dt: T,
    t_final: T,
) -> Result<HamiltonianRun<T>> {
    let wmax = model.max_frequency();
    if wmax > T::zero() && dt > convert::<T>(0.1) / wmax {
        return Err(Error::InvalidModel(format!(
            "dt = {:e} does not resolve the fastest oscillator (need <= {:e})",
            dt,
            convert::<T>(0.1) / wmax
        )));
    }
    let n_steps = (t_final / dt).to_f64_lossy().floor() as usize;
    let du = model.potential.derivative();
    let g = model.coupling_fn.derivative();

    let particle_force = |x: T, bath: &BathState<T>| -> T {
        let f = model.coupling_fn.eval(x);
        let mut coupling_sum = T::zero();
        for k in 0..model.n() {
            let w = model.omegas[k];
            let c = model.couplings[k];
            coupling_sum += c * (bath.positions[k] - c * f / (w * w));
        }
        -du.eval(x) + g.eval(x) * coupling_sum
    };

    let mut x = x0;
    let mut p = model.mass * v0;
    let mut bath = initial.clone();
    let mut fx = particle_force(x, &bath);
    let mut fbath: Vec<T> = (0..model.n())
        .map(|k| {
            let w = model.omegas[k];
            -w * w * bath.positions[k] + model.couplings[k] * model.coupling_fn.eval(x)
        })
        .collect();

    let half = convert::<T>(0.5);
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut positions = Vec::with_capacity(n_steps + 1);
    let mut velocities = Vec::with_capacity(n_steps + 1);
    let mut energy = Vec::with_capacity(n_steps + 1);
    times.push(T::zero());
    positions.push(x);
    velocities.push(v0);
    energy.push(total_energy(model, x, p, &bath));

    for step in 0..n_steps {
        let time = dt * convert((step + 1) as f64);
        p += half * dt * fx;
        for k in 0..model.n() {
            bath.momenta[k] += half * dt * fbath[k];
        }
        x += dt * p / model.mass;
        for k in 0..model.n() {
            bath.positions[k] += dt * bath.momenta[k];
        }
        fx = particle_force(x, &bath);
        let f_of_x = model.coupling_fn.eval(x);
        for k in 0..model.n() {
            let w = model.omegas[k];
            fbath[k] = -w * w * bath.positions[k] + model.couplings[k] * f_of_x;
        }
        p += half * dt * fx;
        for k in 0..model.n() {
            bath.momenta[k] += half * dt * fbath[k];
        }

        if !x.is_finite() || x.abs() > convert(1e8) {
            return Err(Error::UnstableStep {
                time: time.to_f64_lossy(),
                magnitude: x.abs().to_f64_lossy(),
            });
        }
        times.push(time);
        positions.push(x);
        velocities.push(p / model.mass);
        energy.push(total_energy(model, x, p, &bath));
    }

    let noise = reconstruct_noise(model, initial, x0, &times);
    Ok(HamiltonianRun {
        times,
        positions,
        velocities,
        noise,
        energy,
    })
}

/// Exact solution of the linear single-oscillator case (`U = 0`,
/// `f(x) = x`) via the matrix exponential of the 4x4 Hamiltonian flow;
/// used as an oracle for the Verlet integrator.
pub fn single_oscillator_exact<T: Real>(
    model: &BathModel<T>,
    x0: T,
    v0: T,
    initial: &BathState<T>,
    t: T,
) -> Result<(T, T)> {
    if model.n() != 1 {
        return Err(Error::DimensionMismatch(
            "exact solution covers exactly one oscillator".into(),
        ));
    }
    let w = model.omegas[0];
    let c = model.couplings[0];
    let m = model.mass;
    // State (x, p, x1, p1): linear ODE z' = A z.
    let a = DMatrix::<T>::from_row_slice(
        4,
        4,
        &[
            T::zero(),
            T::one() / m,
            T::zero(),
            T::zero(),
            -c * c / (w * w),
            T::zero(),
            c,
            T::zero(),
            T::zero(),
            T::zero(),
            T::zero(),
            T::one(),
            c,
            T::zero(),
            -w * w,
            T::zero(),
        ],
    );
    let flow = expm(&a, t)?;
    let z0 = nalgebra::DVector::from_vec(vec![
        x0,
        m * v0,
        initial.positions[0],
        initial.momenta[0],
    ]);
    let z = flow * z0;
    Ok((z[0], z[1] / m))
}
