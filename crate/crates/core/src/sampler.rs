//! Grand-canonical hard-sphere equilibrium: configurations with particle
//! number weighted by `mu^N / N!`, uniform non-overlapping positions and
//! standard Gaussian velocities.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::cells::CellGrid;
use crate::fields::TestFunction;
use crate::par::{self, Execution};
use crate::rng::stream_rng;
use crate::stats::Moments;
use crate::torus::{torus_distance, unit_ball_volume, ParticleState, VecD};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("rejection backend exhausted: {accepted} accepted in {attempts} attempts")]
    BackendExhausted { attempts: u64, accepted: u64 },
    #[error("invalid sampler parameters: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrandCanonicalParams<const D: usize> {
    pub eps: f64,
    pub mu: f64,
    /// Set when `mu = eps^{-(D-1)}` is required.
    pub scaling_locked: bool,
}

impl<const D: usize> GrandCanonicalParams<D> {
    /// Boltzmann-Grad scaling `mu = eps^{-(D-1)}`.
    pub fn boltzmann_grad(eps: f64) -> Result<Self, SamplerError> {
        let p = Self {
            eps,
            mu: eps.powi(-(D as i32 - 1)),
            scaling_locked: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn new(eps: f64, mu: f64) -> Result<Self, SamplerError> {
        let p = Self {
            eps,
            mu,
            scaling_locked: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if D < 2 {
            return Err(SamplerError::InvalidParams(format!("dimension {D} < 2")));
        }
        let eps_ok = if self.scaling_locked {
            self.eps > 0.0 && self.eps < 0.5
        } else {
            self.eps >= 0.0 && self.eps < 0.5
        };
        if !eps_ok {
            return Err(SamplerError::InvalidParams(format!(
                "eps {} outside the admissible range",
                self.eps
            )));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(SamplerError::InvalidParams(format!("mu {}", self.mu)));
        }
        if self.scaling_locked && (self.mu * self.eps.powi(D as i32 - 1) - 1.0).abs() > 1e-12 {
            return Err(SamplerError::InvalidParams(
                "mu does not match the Boltzmann-Grad scaling".into(),
            ));
        }
        Ok(())
    }

    /// Expected occupied volume fraction `mu c_D eps^D` ignoring exclusion.
    pub fn occupied_fraction(&self) -> f64 {
        self.mu * unit_ball_volume(D) * self.eps.powi(D as i32)
    }

    /// Leading-order acceptance probability of the rejection backend,
    /// `exp(-mu^2 c_D eps^D / 2)`.
    pub fn rejection_acceptance_estimate(&self) -> f64 {
        (-0.5 * self.mu * self.occupied_fraction()).exp()
    }
}

/// A finite set of hard spheres on the torus.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration<const D: usize> {
    pub particles: Vec<ParticleState<D>>,
    pub eps: f64,
}

impl<const D: usize> Configuration<D> {
    pub fn new(particles: Vec<ParticleState<D>>, eps: f64) -> Self {
        Self { particles, eps }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Smallest minimal-image center distance over all pairs.
    pub fn min_pair_distance(&self) -> Option<f64> {
        let n = self.particles.len();
        let mut best: Option<f64> = None;
        for i in 0..n {
            for j in i + 1..n {
                let d = torus_distance(&self.particles[i].x, &self.particles[j].x);
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
        best
    }

    /// True when every pair is farther apart than `eps - tol`.
    pub fn satisfies_exclusion(&self, tol: f64) -> bool {
        self.min_pair_distance().is_none_or(|d| d > self.eps - tol)
    }

    pub fn total_momentum(&self) -> VecD<D> {
        self.particles.iter().fold(VecD::zero(), |s, p| s + p.v)
    }

    /// Kinetic energy `sum |v|^2 / 2`.
    pub fn total_energy(&self) -> f64 {
        0.5 * self.particles.iter().map(|p| p.v.norm2()).sum::<f64>()
    }

    pub fn negate_velocities(&mut self) {
        for p in self.particles.iter_mut() {
            p.v = -p.v;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Backend {
    Rejection,
    BirthDeath,
    /// Rejection when its estimated acceptance is comfortable, else birth–death.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerOptions {
    pub backend: Backend,
    /// Birth–death burn-in, in units of the expected particle number.
    pub burn_in_factor: f64,
    pub max_attempts: u64,
    pub min_acceptance: f64,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            backend: Backend::Auto,
            burn_in_factor: 50.0,
            max_attempts: 100_000,
            min_acceptance: 1e-4,
        }
    }
}

/// Standard Gaussian variates by the Marsaglia polar method.
#[derive(Clone, Debug, Default)]
pub struct PolarGaussian {
    spare: Option<f64>,
}

impl PolarGaussian {
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        loop {
            let u: f64 = 2.0 * rng.random::<f64>() - 1.0;
            let v: f64 = 2.0 * rng.random::<f64>() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }

    pub fn maxwellian<const D: usize, R: Rng + ?Sized>(&mut self, rng: &mut R) -> VecD<D> {
        let mut v = VecD::zero();
        for k in 0..D {
            v.0[k] = self.sample(rng);
        }
        v
    }
}

/// Maxwellian `(2 pi)^{-D/2} exp(-|v|^2 / 2)`.
pub fn maxwellian_pdf<const D: usize>(v: &VecD<D>) -> f64 {
    (2.0 * std::f64::consts::PI).powf(-(D as f64) / 2.0) * (-0.5 * v.norm2()).exp()
}

/// Draw one equilibrium configuration on stream 0 of `seed`.
pub fn sample_equilibrium<const D: usize>(
    params: &GrandCanonicalParams<D>,
    seed: u64,
) -> Result<Configuration<D>, SamplerError> {
    let mut rng = stream_rng(seed, 0);
    sample_with(params, &SamplerOptions::default(), &mut rng)
}

pub fn sample_with<const D: usize, R: Rng + ?Sized>(
    params: &GrandCanonicalParams<D>,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<Configuration<D>, SamplerError> {
    params.validate()?;
    let positions = match choose_backend(params, opts.backend) {
        Backend::Rejection => rejection_positions(params, opts, rng)?,
        _ => birth_death_positions(params, opts.burn_in_factor, rng),
    };
    let mut g = PolarGaussian::default();
    let particles = positions
        .into_iter()
        .map(|x| ParticleState {
            x,
            v: g.maxwellian(rng),
        })
        .collect();
    Ok(Configuration::new(particles, params.eps))
}

pub fn choose_backend<const D: usize>(params: &GrandCanonicalParams<D>, b: Backend) -> Backend {
    match b {
        Backend::Auto => {
            if params.eps == 0.0
                || (params.occupied_fraction() < 0.3 && params.rejection_acceptance_estimate() > 1e-3)
            {
                Backend::Rejection
            } else {
                Backend::BirthDeath
            }
        }
        other => other,
    }
}

fn grid_for<const D: usize>(eps: f64, expected: f64) -> CellGrid<D> {
    // Roughly one particle per cell is enough; finer grids only cost memory.
    let cap = (4.0 * expected.max(1.0)).powf(1.0 / D as f64).ceil() as usize;
    CellGrid::new(eps, cap.max(3))
}

fn poisson_count<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> usize {
    if mu <= 0.0 {
        0
    } else {
        Poisson::new(mu).expect("positive mean").sample(rng) as usize
    }
}

/// One rejection attempt: Poisson count, uniform positions, early exit on the
/// first overlap.
fn rejection_attempt<const D: usize, R: Rng + ?Sized>(
    params: &GrandCanonicalParams<D>,
    grid: &mut CellGrid<D>,
    rng: &mut R,
) -> Option<Vec<VecD<D>>> {
    let n = poisson_count(params.mu, rng);
    grid.clear();
    let mut xs: Vec<VecD<D>> = Vec::with_capacity(n);
    for id in 0..n {
        let x = VecD(std::array::from_fn(|_| rng.random::<f64>()));
        if params.eps > 0.0 && grid.any_near(&x, |j| torus_distance(&x, &xs[j]) <= params.eps) {
            return None;
        }
        grid.insert(id, grid.cell_of(&x));
        xs.push(x);
    }
    Some(xs)
}

fn rejection_positions<const D: usize, R: Rng + ?Sized>(
    params: &GrandCanonicalParams<D>,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<Vec<VecD<D>>, SamplerError> {
    let mut grid = grid_for::<D>(params.eps, params.mu);
    let mut attempts = 0u64;
    loop {
        attempts += 1;
        if let Some(xs) = rejection_attempt(params, &mut grid, rng) {
            return Ok(xs);
        }
        if attempts >= opts.max_attempts && 1.0 / (attempts as f64) < opts.min_acceptance {
            return Err(SamplerError::BackendExhausted {
                attempts,
                accepted: 0,
            });
        }
    }
}

/// Fraction of accepted rejection attempts over `attempts` tries.
pub fn rejection_acceptance_rate<const D: usize, R: Rng + ?Sized>(
    params: &GrandCanonicalParams<D>,
    attempts: u64,
    rng: &mut R,
) -> f64 {
    let mut grid = grid_for::<D>(params.eps, params.mu);
    let acc = (0..attempts)
        .filter(|_| rejection_attempt(params, &mut grid, rng).is_some())
        .count();
    acc as f64 / attempts as f64
}

/// Spatial birth–death chain started from the empty configuration.
///
/// Births at a uniform point are accepted with probability
/// `min(1, mu / (N + 1))` when they do not overlap, deaths of a uniformly
/// chosen particle with `min(1, N / mu)`. The target is the hard-core Gibbs
/// point process with activity `mu` on the unit torus.
fn birth_death_positions<const D: usize, R: Rng + ?Sized>(
    params: &GrandCanonicalParams<D>,
    burn_in_factor: f64,
    rng: &mut R,
) -> Vec<VecD<D>> {
    let mu = params.mu;
    let mut grid = grid_for::<D>(params.eps, mu);
    let mut xs: Vec<VecD<D>> = Vec::new();
    let mut cells: Vec<usize> = Vec::new();
    let moves = (burn_in_factor * mu).ceil().max(100.0) as u64;
    for _ in 0..moves {
        let n = xs.len();
        if rng.random::<bool>() {
            let x = VecD(std::array::from_fn(|_| rng.random::<f64>()));
            if rng.random::<f64>() * (n as f64 + 1.0) >= mu {
                continue;
            }
            if params.eps > 0.0 && grid.any_near(&x, |j| torus_distance(&x, &xs[j]) <= params.eps) {
                continue;
            }
            let c = grid.cell_of(&x);
            grid.insert(n, c);
            xs.push(x);
            cells.push(c);
        } else {
            if n == 0 {
                continue;
            }
            let i = rng.random_range(0..n);
            if rng.random::<f64>() * mu >= n as f64 {
                continue;
            }
            grid.remove(i, cells[i]);
            let last = n - 1;
            if i != last {
                grid.relabel(last, i, cells[last]);
            }
            xs.swap_remove(i);
            cells.swap_remove(i);
        }
    }
    xs
}

/// Monte Carlo estimate of `E(pi_0(h)) / <h>`, with standard error.
pub fn estimate_c_eps<const D: usize>(
    params: &GrandCanonicalParams<D>,
    h: &TestFunction<D>,
    replicas: usize,
    seed: u64,
    exec: Execution,
) -> Result<(f64, f64), SamplerError> {
    let mean = h.mean();
    if mean.abs() < 1e-12 {
        return Err(SamplerError::InvalidParams("test function has zero mean".into()));
    }
    if replicas < 2 {
        return Err(SamplerError::InvalidParams("need at least two replicas".into()));
    }
    let opts = SamplerOptions::default();
    let values = par::try_map_range(exec, replicas, |r| {
        let mut rng = stream_rng(seed, r as u64);
        let cfg = sample_with(params, &opts, &mut rng)?;
        Ok(crate::fields::empirical_field(&cfg, h, params.mu))
    })?;
    let m = Moments::from_slice(&values);
    Ok((m.mean() / mean, m.stderr() / mean.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxwellian_at_origin() {
        let v = VecD::<3>::zero();
        let expected = (2.0 * std::f64::consts::PI).powf(-1.5);
        assert!((maxwellian_pdf(&v) - expected).abs() < 1e-15);
    }

    #[test]
    fn scaling_lock_is_checked() {
        assert!(GrandCanonicalParams::<3>::boltzmann_grad(0.1).is_ok());
        let bad = GrandCanonicalParams::<3> {
            eps: 0.1,
            mu: 99.0,
            scaling_locked: true,
        };
        assert!(bad.validate().is_err());
        assert!(GrandCanonicalParams::<3>::new(0.6, 1.0).is_err());
    }

    #[test]
    fn doubling_mu_under_scaling() {
        let p = GrandCanonicalParams::<3>::boltzmann_grad(0.1).unwrap();
        let q = GrandCanonicalParams::<3>::boltzmann_grad(0.1 * 2f64.powf(-0.5)).unwrap();
        assert!((q.mu / p.mu - 2.0).abs() < 1e-12);
    }

    #[test]
    fn samples_respect_exclusion_with_both_backends() {
        let p = GrandCanonicalParams::<2>::new(0.05, 60.0).unwrap();
        for (k, backend) in [Backend::Rejection, Backend::BirthDeath].into_iter().enumerate() {
            let opts = SamplerOptions {
                backend,
                ..Default::default()
            };
            for r in 0..20 {
                let mut rng = stream_rng(11 + k as u64, r);
                let c = sample_with(&p, &opts, &mut rng).unwrap();
                assert!(c.satisfies_exclusion(0.0));
            }
        }
    }

    #[test]
    fn exhaustion_is_reported() {
        let p = GrandCanonicalParams::<2>::new(0.2, 40.0).unwrap();
        let opts = SamplerOptions {
            backend: Backend::Rejection,
            max_attempts: 2000,
            min_acceptance: 1e-2,
            ..Default::default()
        };
        let mut rng = stream_rng(1, 0);
        assert!(matches!(
            sample_with(&p, &opts, &mut rng),
            Err(SamplerError::BackendExhausted { .. })
        ));
    }

    #[test]
    fn polar_method_variance() {
        let mut rng = stream_rng(3, 0);
        let mut g = PolarGaussian::default();
        let xs: Vec<f64> = (0..100_000).map(|_| g.sample(&mut rng)).collect();
        let m = Moments::from_slice(&xs);
        assert!(m.mean().abs() < 3.0 * m.stderr());
        // Var of the sample variance for N(0,1) is 2/(n-1).
        let se_var = (2.0 / 99_999.0f64).sqrt();
        assert!((m.variance() - 1.0).abs() < 3.0 * se_var);
    }
}
