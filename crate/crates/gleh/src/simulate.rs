//! SDE integration for the pre-limit and limiting dynamics, coupled-path
//! convergence experiments, reflecting boundaries, and statistical
//! estimators.
//!
//! Reproducibility contract: all randomness flows from a 64-bit seed
//! through counter-addressed ChaCha streams, one stream per ensemble
//! member, so results are independent of thread scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::homogenize::HomogenizedSde;
use crate::markov::ExtendedSystem;
use crate::matrixlab::{expm, sym_sqrt};
use crate::model::RealizationTriple;
use crate::real::{convert, Real};

/// Divergence guard: integration aborts when any state magnitude passes this.
const DIVERGENCE_LIMIT: f64 = 1e8;

/// Integration scheme for the pre-limit dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Explicit Euler-Maruyama on the full extended system; requires
    /// `dt` below the stability bound.
    EulerMaruyama,
    /// Backward-Euler update of the stiff linear (v, y, beta) block with
    /// coefficients frozen at the current position; `dt` may be chosen
    /// independently of `epsilon`.
    SemiImplicitFastBlock,
}

/// Simulation parameters shared by the integrators.
#[derive(Debug, Clone)]
pub struct SimulationConfig<T: Real> {
    /// Scale of the pre-limit system this configuration targets.
    pub epsilon: T,
    /// Time step.
    pub dt: T,
    /// Horizon; trajectories have `floor(t_final/dt) + 1` points.
    pub t_final: T,
    /// Master seed; every random draw derives from it.
    pub seed: u64,
    pub scheme: Scheme,
    pub ensemble_size: usize,
    /// Deterministic initial position.
    pub x0: DVector<T>,
    /// Deterministic initial velocity (v block only; y starts at zero and
    /// beta is drawn from its scaled stationary law).
    pub v0: DVector<T>,
    /// Burn-in for stationary estimates, in units of the largest model
    /// time constant.
    pub burn_in_factor: T,
}

impl<T: Real> SimulationConfig<T> {
    pub fn new(epsilon: T, dt: T, t_final: T, seed: u64, dim: usize) -> Self {
        SimulationConfig {
            epsilon,
            dt,
            t_final,
            seed,
            scheme: Scheme::SemiImplicitFastBlock,
            ensemble_size: 1,
            x0: DVector::zeros(dim),
            v0: DVector::zeros(dim),
            burn_in_factor: convert(10.0),
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).to_f64_lossy().floor() as usize
    }
}

/// A Brownian path on a fine grid, with exact coarse-grained views.
#[derive(Debug, Clone)]
pub struct PathBundle<T: Real> {
    pub dt: T,
    pub wiener_dim: usize,
    /// Increments `W(t_{k+1}) - W(t_k)`, each of covariance `dt * I`.
    pub increments: Vec<DVector<T>>,
}

impl<T: Real> PathBundle<T> {
    /// Draws `n_steps` Gaussian increments of covariance `dt I`.
    pub fn generate<R: Rng>(wiener_dim: usize, n_steps: usize, dt: T, rng: &mut R) -> Self {
        let scale = dt.sqrt();
        let increments = (0..n_steps)
            .map(|_| {
                DVector::from_iterator(
                    wiener_dim,
                    (0..wiener_dim)
                        .map(|_| convert::<T>(rng.sample::<f64, _>(StandardNormal)) * scale),
                )
            })
            .collect();
        PathBundle {
            dt,
            wiener_dim,
            increments,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn horizon(&self) -> T {
        self.dt * convert(self.n_steps() as f64)
    }

    /// Sums consecutive groups of `factor` increments. The telescoping is
    /// exact: the coarse path visits the same Wiener values.
    pub fn coarsen(&self, factor: usize) -> PathBundle<T> {
        assert!(factor >= 1 && self.n_steps() % factor == 0);
        let increments = self
            .increments
            .chunks(factor)
            .map(|chunk| {
                let mut sum = DVector::zeros(self.wiener_dim);
                for inc in chunk {
                    sum += inc;
                }
                sum
            })
            .collect();
        PathBundle {
            dt: self.dt * convert(factor as f64),
            wiener_dim: self.wiener_dim,
            increments,
        }
    }
}

/// A time grid and the states along it.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    pub times: Vec<T>,
    pub states: Vec<DVector<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Position block of the final state.
    pub fn last_position(&self, d: usize) -> DVector<T> {
        self.states
            .last()
            .expect("nonempty trajectory")
            .rows(0, d)
            .into_owned()
    }
}

fn check_finite_bounded<T: Real>(state: &DVector<T>, time: T) -> Result<()> {
    let mag = state.amax();
    if !mag.is_finite() || mag > convert(DIVERGENCE_LIMIT) {
        return Err(Error::UnstableStep {
            time: time.to_f64_lossy(),
            magnitude: mag.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Explicit-Euler stability bound for the extended system at the
/// configured initial state:
/// `dt <= epsilon * min(m0, tk, tx) / (20 * max(1, ||gamma_hat(x0)||))`.
pub fn stability_dt_bound<T: Real>(ext: &ExtendedSystem<T>, x0: &DVector<T>) -> T {
    let s = &ext.system;
    let min_scale = s.m0.min(s.tau_kappa).min(s.tau_xi);
    let gamma_norm = ext.gamma_hat(x0).norm();
    let denom = if gamma_norm > T::one() {
        gamma_norm
    } else {
        T::one()
    };
    ext.epsilon * min_scale / (convert::<T>(20.0) * denom)
}

/// Draws the stationary initial auxiliary state `beta_0` from
/// `N(0, M2 / (tau_xi epsilon))` given a standard normal vector.
pub fn beta_initial<T: Real>(ext: &ExtendedSystem<T>, z: &DVector<T>) -> Result<DVector<T>> {
    let scale = T::one() / (ext.system.tau_xi * ext.epsilon);
    let cov = &ext.system.noise.m * scale;
    Ok(sym_sqrt(&cov)? * z)
}

/// Integrates the pre-limit extended system along a Brownian path. The
/// returned trajectory carries the full extended state `(x, v, y, beta)`.
///
/// `beta` starts from `N(0, M2/(tau_xi epsilon))` (drawn from the config
/// seed) and `y` starts at zero.
pub fn integrate_prelimit<T: Real>(
    ext: &ExtendedSystem<T>,
    cfg: &SimulationConfig<T>,
    paths: &PathBundle<T>,
) -> Result<Trajectory<T>> {
    let mut rng = member_rng(cfg.seed, 0);
    let d2 = ext.system.noise.state_dim();
    let z: DVector<T> = DVector::from_iterator(
        d2,
        (0..d2).map(|_| convert(rng.sample::<f64, _>(StandardNormal))),
    );
    let beta0 = beta_initial(ext, &z)?;
    integrate_prelimit_from(ext, cfg, paths, &beta0)
}

/// As [`integrate_prelimit`], with the initial `beta` supplied by the
/// caller (the coupling device used by the convergence experiment).
pub fn integrate_prelimit_from<T: Real>(
    ext: &ExtendedSystem<T>,
    cfg: &SimulationConfig<T>,
    paths: &PathBundle<T>,
    beta0: &DVector<T>,
) -> Result<Trajectory<T>> {
    let eps_mismatch = (cfg.epsilon - ext.epsilon).abs()
        > convert::<T>(1e-12) * (cfg.epsilon.abs() + ext.epsilon.abs());
    if eps_mismatch {
        return Err(Error::InvalidModel(format!(
            "config epsilon {:e} disagrees with extended system epsilon {:e}",
            cfg.epsilon, ext.epsilon
        )));
    }
    let lay = ext.layout;
    let (d, d1, d2) = (lay.d, lay.d1, lay.d2);
    let n = lay.n();
    if cfg.x0.len() != d || cfg.v0.len() != d || beta0.len() != d2 {
        return Err(Error::DimensionMismatch(
            "initial condition dimensions do not match the model".into(),
        ));
    }
    if paths.wiener_dim != ext.system.noise.wiener_dim() {
        return Err(Error::DimensionMismatch(format!(
            "path bundle carries {} Wiener components, model needs {}",
            paths.wiener_dim,
            ext.system.noise.wiener_dim()
        )));
    }
    let dt = paths.dt;
    if cfg.scheme == Scheme::EulerMaruyama {
        let bound = stability_dt_bound(ext, &cfg.x0);
        if dt > bound {
            return Err(Error::InvalidModel(format!(
                "dt = {:e} exceeds the Euler-Maruyama stability bound {:e}; \
                 reduce dt or use the semi-implicit scheme",
                dt, bound
            )));
        }
    }

    let inv_eps = T::one() / ext.epsilon;
    let sigma_hat = ext.sigma_hat();
    let mut x = cfg.x0.clone();
    let mut u = DVector::<T>::zeros(n);
    u.rows_mut(0, d).copy_from(&cfg.v0);
    u.rows_mut(d + d1, d2).copy_from(beta0);

    let n_steps = paths.n_steps();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut stack = DVector::<T>::zeros(d + n);
    stack.rows_mut(0, d).copy_from(&x);
    stack.rows_mut(d, n).copy_from(&u);
    times.push(T::zero());
    states.push(stack.clone());

    let eye = DMatrix::<T>::identity(n, n);
    for (k, dw) in paths.increments.iter().enumerate() {
        let time = dt * convert((k + 1) as f64);
        let gamma = ext.gamma_hat(&x);
        let f_hat = ext.f_hat(&x);
        let noise = &sigma_hat * dw * inv_eps;
        match cfg.scheme {
            Scheme::EulerMaruyama => {
                let new_x = &x + u.rows(0, d) * dt;
                let du = (-(&gamma * &u) + &f_hat) * (dt * inv_eps) + noise;
                u += du;
                x = new_x;
            }
            Scheme::SemiImplicitFastBlock => {
                let lhs = &eye + &gamma * (dt * inv_eps);
                let rhs = &u + &f_hat * (dt * inv_eps) + noise;
                u = lhs.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
                x += u.rows(0, d) * dt;
            }
        }
        stack.rows_mut(0, d).copy_from(&x);
        stack.rows_mut(d, n).copy_from(&u);
        check_finite_bounded(&stack, time)?;
        times.push(time);
        states.push(stack.clone());
    }
    Ok(Trajectory { times, states })
}

/// Euler-Maruyama integration of the limiting SDE along a Brownian path.
pub fn integrate_limit<T: Real>(
    hsde: &HomogenizedSde<T>,
    cfg: &SimulationConfig<T>,
    paths: &PathBundle<T>,
) -> Result<Trajectory<T>> {
    let d = hsde.dim();
    if cfg.x0.len() != d {
        return Err(Error::DimensionMismatch(
            "initial condition does not match model dimension".into(),
        ));
    }
    if paths.wiener_dim != hsde.wiener_dim() {
        return Err(Error::DimensionMismatch(format!(
            "path bundle carries {} Wiener components, limit SDE needs {}",
            paths.wiener_dim,
            hsde.wiener_dim()
        )));
    }
    let dt = paths.dt;
    let mut x = cfg.x0.clone();
    let n_steps = paths.n_steps();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    times.push(T::zero());
    states.push(x.clone());
    for (k, dw) in paths.increments.iter().enumerate() {
        let time = dt * convert((k + 1) as f64);
        let drift = hsde.drift(&x)?;
        let diffusion = hsde.diffusion(&x)?;
        x += drift * dt + diffusion * dw;
        check_finite_bounded(&x, time)?;
        times.push(time);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// Per-epsilon summary of the coupled sup-error experiment. Serialized as
/// the JSON convergence report.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRecord {
    pub epsilon: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// ChaCha stream for one ensemble member: same seed, distinct stream index,
/// so members are independent and reproducible regardless of scheduling.
pub fn member_rng(seed: u64, member: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member.wrapping_add(1));
    rng
}

/// Runs the coupled convergence experiment: every epsilon in `eps_list`
/// (and the limiting SDE) consumes the same fine Brownian path, and the
/// per-path statistic is `sup_t |x^eps_t - X_t|` on the coarse grid of
/// that epsilon. Step counts are powers of two so coarse grids nest
/// exactly inside the fine one.
pub fn coupled_sup_error<T: Real>(
    system: &crate::model::GleSystem<T>,
    hsde: &HomogenizedSde<T>,
    eps_list: &[T],
    cfg: &SimulationConfig<T>,
) -> Result<Vec<ConvergenceRecord>> {
    if eps_list.is_empty() {
        return Err(Error::InvalidModel("empty epsilon list".into()));
    }
    let d = system.dim();
    let d2 = system.noise.state_dim();
    let t_final = cfg.t_final;

    // Steps per epsilon: at least 32 steps per unit of the fastest scaled
    // time constant, rounded up to a power of two for exact nesting.
    let min_scale = system.m0.min(system.tau_kappa).min(system.tau_xi);
    let steps_for = |eps: T| -> usize {
        let needed = (t_final * convert::<T>(32.0) / (eps * min_scale)).to_f64_lossy();
        (needed.max(2.0).ceil() as usize).next_power_of_two()
    };
    let step_counts: Vec<usize> = eps_list.iter().map(|&e| steps_for(e)).collect();
    let fine_steps = *step_counts.iter().max().expect("nonempty");
    let fine_dt = t_final / convert(fine_steps as f64);

    let mut per_eps_errors: Vec<Vec<f64>> = vec![Vec::new(); eps_list.len()];
    let results: Vec<Result<Vec<f64>>> = (0..cfg.ensemble_size as u64)
        .into_par_iter()
        .map(|member| {
            let mut rng = member_rng(cfg.seed, member);
            let z: DVector<T> = DVector::from_iterator(
                d2,
                (0..d2).map(|_| convert(rng.sample::<f64, _>(StandardNormal))),
            );
            let fine =
                PathBundle::generate(system.noise.wiener_dim(), fine_steps, fine_dt, &mut rng);
            let mut limit_cfg = cfg.clone();
            limit_cfg.dt = fine_dt;
            let limit = integrate_limit(hsde, &limit_cfg, &fine)?;

            let mut errors = Vec::with_capacity(eps_list.len());
            for (i, &eps) in eps_list.iter().enumerate() {
                let steps = step_counts[i];
                let factor = fine_steps / steps;
                let coarse = fine.coarsen(factor);
                let ext = crate::markov::build_extended(system, eps)?;
                let mut pre_cfg = cfg.clone();
                pre_cfg.epsilon = eps;
                pre_cfg.dt = coarse.dt;
                let beta0 = beta_initial(&ext, &z)?;
                let pre = integrate_prelimit_from(&ext, &pre_cfg, &coarse, &beta0)?;
                let mut sup = 0.0f64;
                for (k, state) in pre.states.iter().enumerate() {
                    let x_pre = state.rows(0, d);
                    let x_lim = limit.states[k * factor].rows(0, d);
                    let diff = (x_pre - x_lim).norm().to_f64_lossy();
                    sup = sup.max(diff);
                }
                errors.push(sup);
            }
            Ok(errors)
        })
        .collect();

    for member in results {
        let errors = member?;
        for (i, e) in errors.into_iter().enumerate() {
            per_eps_errors[i].push(e);
        }
    }

    Ok(eps_list
        .iter()
        .zip(step_counts)
        .zip(per_eps_errors)
        .map(|((&eps, steps), mut errors)| {
            errors.sort_by(f64::total_cmp);
            ConvergenceRecord {
                epsilon: eps.to_f64_lossy(),
                median: quantile(&errors, 0.5),
                q25: quantile(&errors, 0.25),
                q75: quantile(&errors, 0.75),
                n_paths: errors.len(),
                dt: (t_final / convert::<T>(steps as f64)).to_f64_lossy(),
                seed: cfg.seed,
            }
        })
        .collect())
}

/// Occupancy histogram over `[a, b)` with uniform bins.
#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub a: f64,
    pub b: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(a: f64, b: f64, bins: usize) -> Self {
        Histogram {
            a,
            b,
            counts: vec![0; bins],
        }
    }

    pub fn record(&mut self, x: f64) {
        let bins = self.counts.len();
        let u = (x - self.a) / (self.b - self.a);
        let idx = ((u * bins as f64) as usize).min(bins - 1);
        self.counts[idx] += 1;
    }

    pub fn merge(mut self, other: &Histogram) -> Histogram {
        for (c, o) in self.counts.iter_mut().zip(&other.counts) {
            *c += o;
        }
        self
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        let bins = self.counts.len();
        let w = (self.b - self.a) / bins as f64;
        (0..bins).map(|i| self.a + (i as f64 + 0.5) * w).collect()
    }

    /// Normalized density per bin.
    pub fn density(&self) -> Vec<f64> {
        let total = self.total() as f64;
        let w = (self.b - self.a) / self.counts.len() as f64;
        self.counts
            .iter()
            .map(|&c| c as f64 / (total * w))
            .collect()
    }

    /// Empirical cumulative distribution evaluated at the upper edge of
    /// each bin.
    pub fn cdf_at_edges(&self) -> Vec<f64> {
        let total = self.total() as f64;
        let mut acc = 0.0;
        self.counts
            .iter()
            .map(|&c| {
                acc += c as f64;
                acc / total
            })
            .collect()
    }
}

fn reflect_into(mut x: f64, a: f64, b: f64) -> f64 {
    // Fold overshoot back into (a, b); excursions longer than the interval
    // are reduced modulo the doubled width first.
    let width = b - a;
    if x < a || x > b {
        let span = (x - a).rem_euclid(2.0 * width);
        x = if span <= width {
            a + span
        } else {
            a + 2.0 * width - span
        };
    }
    x
}

/// Piecewise-linear tabulation of a scalar field on a closed interval.
struct Tabulated {
    a: f64,
    inv_dx: f64,
    values: Vec<f64>,
}

impl Tabulated {
    fn build<T: Real>(
        f: &dyn Fn(T) -> Result<T>,
        a: f64,
        b: f64,
        cells: usize,
    ) -> Result<Tabulated> {
        let dx = (b - a) / cells as f64;
        let values = (0..=cells)
            .map(|i| f(convert(a + i as f64 * dx)).map(|v| v.to_f64_lossy()))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Tabulated {
            a,
            inv_dx: 1.0 / dx,
            values,
        })
    }

    fn eval(&self, x: f64) -> f64 {
        let u = (x - self.a) * self.inv_dx;
        let i = (u.floor().max(0.0) as usize).min(self.values.len() - 2);
        let frac = (u - i as f64).clamp(0.0, 1.0);
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

/// Number of tabulation cells used by [`reflecting_sim`].
const REFLECT_TABLE_CELLS: usize = 4096;

/// Simulates the 1D limiting SDE on `(a, b)` with reflecting boundaries and
/// accumulates an occupancy histogram. Samples are recorded every
/// `sample_every` steps after a burn-in of `burn_in_factor` model time
/// constants, across the configured ensemble.
///
/// Drift and diffusion are tabulated on a 4096-cell grid and interpolated
/// linearly, which keeps long occupancy runs cheap; the interpolation error
/// is far below the statistical resolution of any feasible histogram.
pub fn reflecting_sim<T: Real>(
    hsde: &HomogenizedSde<T>,
    interval: (T, T),
    cfg: &SimulationConfig<T>,
    bins: usize,
    sample_every: usize,
) -> Result<Histogram> {
    let (a, b) = interval;
    if hsde.dim() != 1 {
        return Err(Error::DimensionMismatch(
            "reflecting boundary simulation is one-dimensional".into(),
        ));
    }
    if !(a < b) {
        return Err(Error::DomainViolation(format!(
            "interval ({:e}, {:e}) is empty",
            a, b
        )));
    }
    let af = a.to_f64_lossy();
    let bf = b.to_f64_lossy();
    let drift_tab = Tabulated::build(
        &|x: T| hsde.drift(&DVector::from_element(1, x)).map(|v| v[0]),
        af,
        bf,
        REFLECT_TABLE_CELLS,
    )?;
    let diff_tab = Tabulated::build(
        &|x: T| hsde.diffusion(&DVector::from_element(1, x)).map(|m| m[(0, 0)]),
        af,
        bf,
        REFLECT_TABLE_CELLS,
    )?;

    let dt = cfg.dt.to_f64_lossy();
    let sqrt_dt = dt.sqrt();
    let n_steps = cfg.n_steps();
    let burn_steps = ((hsde.system().max_timescale() * cfg.burn_in_factor)
        .to_f64_lossy()
        / dt)
        .ceil()
        .max(0.0) as usize;
    let burn_steps = burn_steps.min(n_steps / 2);

    let histograms: Vec<Histogram> = (0..cfg.ensemble_size as u64)
        .into_par_iter()
        .map(|member| {
            let mut rng = member_rng(cfg.seed, member);
            let mut hist = Histogram::new(af, bf, bins);
            let mut x = cfg.x0[0].to_f64_lossy();
            if x <= af || x >= bf {
                x = 0.5 * (af + bf);
            }
            for step in 0..n_steps {
                let z: f64 = rng.sample(StandardNormal);
                let proposal =
                    x + drift_tab.eval(x) * dt + diff_tab.eval(x) * sqrt_dt * z;
                x = reflect_into(proposal, af, bf);
                if step >= burn_steps && (step - burn_steps) % sample_every == 0 {
                    hist.record(x);
                }
            }
            hist
        })
        .collect();

    let mut merged = Histogram::new(af, bf, bins);
    for h in histograms {
        merged = merged.merge(&h);
    }
    Ok(merged)
}

/// Kolmogorov-Smirnov statistic between two CDFs sampled on a common grid.
pub fn ks_statistic(empirical_cdf: &[f64], theoretical_cdf: &[f64]) -> f64 {
    empirical_cdf
        .iter()
        .zip(theoretical_cdf)
        .map(|(e, t)| (e - t).abs())
        .fold(0.0, f64::max)
}

/// Simulates stationary noise trajectories `xi_t = C beta_t` of a
/// realization triple with the exact Gaussian transition (no time-step
/// bias): `beta' = e^{-Gamma dt} beta + N(0, M - e^{-Gamma dt} M e^{-Gamma* dt})`.
pub fn simulate_noise_exact<T: Real>(
    triple: &RealizationTriple<T>,
    dt: T,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Trajectory<T>>> {
    let propagator = expm(&(-&triple.gamma), dt)?;
    let step_cov = &triple.m - &propagator * &triple.m * propagator.transpose();
    let step_root = sym_sqrt(&step_cov)?;
    let init_root = sym_sqrt(&triple.m)?;
    let d = triple.state_dim();

    let trajectories: Vec<Trajectory<T>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|member| {
            let mut rng = member_rng(seed, member);
            let draw = |rng: &mut ChaCha8Rng| -> DVector<T> {
                DVector::from_iterator(
                    d,
                    (0..d).map(|_| convert(rng.sample::<f64, _>(StandardNormal))),
                )
            };
            let mut beta = &init_root * draw(&mut rng);
            let mut times = Vec::with_capacity(n_steps + 1);
            let mut states = Vec::with_capacity(n_steps + 1);
            times.push(T::zero());
            states.push(&triple.c * &beta);
            for k in 0..n_steps {
                beta = &propagator * beta + &step_root * draw(&mut rng);
                times.push(dt * convert((k + 1) as f64));
                states.push(&triple.c * &beta);
            }
            Trajectory { times, states }
        })
        .collect();
    Ok(trajectories)
}

/// Empirical covariance at the requested lags with per-entry standard
/// errors across the ensemble.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate<T: Real> {
    pub lags: Vec<T>,
    pub values: Vec<DMatrix<T>>,
    pub standard_errors: Vec<DMatrix<T>>,
}

/// Estimates `R(lag) = E[xi_{t+lag} xi_t*]` from an ensemble of stationary
/// noise trajectories. Each path contributes a time-averaged product over
/// the post-burn-in window; the standard error is computed across paths.
pub fn estimate_covariance<T: Real>(
    trajectories: &[Trajectory<T>],
    lags: &[T],
    burn_in: T,
) -> Result<CovarianceEstimate<T>> {
    let n_paths = trajectories.len();
    if n_paths < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            available: n_paths,
        });
    }
    let len = trajectories[0].len();
    if len < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            available: len,
        });
    }
    let dt = trajectories[0].times[1] - trajectories[0].times[0];
    let r = trajectories[0].states[0].len();
    let start = (burn_in / dt).to_f64_lossy().ceil() as usize;

    let mut values = Vec::with_capacity(lags.len());
    let mut errors = Vec::with_capacity(lags.len());
    for &lag in lags {
        let offset = (lag / dt).to_f64_lossy().round() as usize;
        if start + offset + 1 >= len {
            return Err(Error::InsufficientSamples {
                needed: start + offset + 2,
                available: len,
            });
        }
        let per_path: Vec<DMatrix<T>> = trajectories
            .iter()
            .map(|traj| {
                let mut acc = DMatrix::<T>::zeros(r, r);
                let window = len - offset - start;
                for i in start..(len - offset) {
                    acc += &traj.states[i + offset] * traj.states[i].transpose();
                }
                acc / convert::<T>(window as f64)
            })
            .collect();
        let mut mean = DMatrix::<T>::zeros(r, r);
        for m in &per_path {
            mean += m;
        }
        mean /= convert::<T>(n_paths as f64);
        let mut var = DMatrix::<T>::zeros(r, r);
        for m in &per_path {
            let diff = m - &mean;
            var += diff.component_mul(&diff);
        }
        var /= convert::<T>((n_paths - 1) as f64);
        let se = var.map(|v| (v / convert(n_paths as f64)).sqrt());
        values.push(mean);
        errors.push(se);
    }
    Ok(CovarianceEstimate {
        lags: lags.to_vec(),
        values,
        standard_errors: errors,
    })
}
