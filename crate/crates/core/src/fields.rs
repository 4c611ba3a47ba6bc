//! Test functions on `T^D x R^D`, the empirical measure, the fluctuation
//! field and two-time covariance estimators.

use std::sync::Arc;

use thiserror::Error;

use crate::dynamics::TrajectoryLog;
use crate::quadrature::gauss_hermite;
use crate::sampler::Configuration;
use crate::stats::Moments;
use crate::torus::VecD;

/// Mean-free tolerance on the cached mean.
pub const MEAN_FREE_TOL: f64 = 1e-10;
/// Agreement required between successive quadrature refinements.
pub const QUADRATURE_TOL: f64 = 1e-8;

/// `(Gauss–Hermite nodes per velocity axis, uniform points per space axis)`,
/// from coarse to the finest allowed grid.
const LEVELS: [(usize, usize); 5] = [(6, 4), (10, 8), (14, 16), (20, 32), (20, 64)];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("test function `{name}` is not mean-free (mean {mean})")]
    NotMeanFree { name: String, mean: f64 },
    #[error("quadrature did not converge: last refinements {prev} and {last}")]
    QuadratureNonConvergence { prev: f64, last: f64 },
    #[error("need at least two replicas, got {0}")]
    InsufficientReplicas(usize),
    #[error("trajectory log ends at {have}, needed {needed}")]
    LogTooShort { needed: f64, have: f64 },
    #[error("unsupported moment order {0}")]
    InvalidMoment(u32),
}

type Evaluator<const D: usize> = dyn Fn(&VecD<D>, &VecD<D>) -> f64 + Send + Sync;

/// A function `h(x, v)` with its cached Maxwellian average
/// `<h> = ∫ M(v) h(x, v) dx dv`.
#[derive(Clone)]
pub struct TestFunction<const D: usize> {
    name: String,
    eval: Arc<Evaluator<D>>,
    spatial: bool,
    mean: f64,
}

impl<const D: usize> std::fmt::Debug for TestFunction<D> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("spatial", &self.spatial)
            .field("mean", &self.mean)
            .finish()
    }
}

impl<const D: usize> TestFunction<D> {
    /// Wrap `f`, computing its mean by quadrature. Set `spatial` when `f`
    /// depends on the position.
    pub fn new<F>(name: impl Into<String>, spatial: bool, f: F) -> Result<Self, FieldError>
    where
        F: Fn(&VecD<D>, &VecD<D>) -> f64 + Send + Sync + 'static,
    {
        let eval: Arc<Evaluator<D>> = Arc::new(f);
        let mean = maxwellian_average(eval.as_ref(), spatial)?;
        Ok(Self {
            name: name.into(),
            eval,
            spatial,
            mean,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, x: &VecD<D>, v: &VecD<D>) -> f64 {
        (self.eval)(x, v)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn is_mean_free(&self) -> bool {
        self.mean.abs() <= MEAN_FREE_TOL
    }

    pub fn depends_on_x(&self) -> bool {
        self.spatial
    }

    /// `lambda * h`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let inner = self.eval.clone();
        Self {
            name: format!("{lambda}*{}", self.name),
            eval: Arc::new(move |x, v| lambda * inner(x, v)),
            spatial: self.spatial,
            mean: lambda * self.mean,
        }
    }

    /// `h1 + h2`, with exact mean bookkeeping.
    pub fn sum(&self, other: &Self) -> Self {
        let (a, b) = (self.eval.clone(), other.eval.clone());
        Self {
            name: format!("{}+{}", self.name, other.name),
            eval: Arc::new(move |x, v| a(x, v) + b(x, v)),
            spatial: self.spatial || other.spatial,
            mean: self.mean + other.mean,
        }
    }
}

fn average_at_level<const D: usize>(f: &Evaluator<D>, spatial: bool, nv: usize, nx: usize) -> f64 {
    let gh = gauss_hermite(nv);
    let nx = if spatial { nx } else { 1 };
    let xs_total = nx.pow(D as u32);
    let vs_total = nv.pow(D as u32);
    let mut sum = 0.0;
    for ix in 0..xs_total {
        let mut x = VecD::zero();
        let mut r = ix;
        for k in 0..D {
            x.0[k] = (r % nx) as f64 / nx as f64;
            r /= nx;
        }
        let mut inner = 0.0;
        for iv in 0..vs_total {
            let mut v = VecD::zero();
            let mut w = 1.0;
            let mut r = iv;
            for k in 0..D {
                let j = r % nv;
                r /= nv;
                v.0[k] = gh.nodes[j];
                w *= gh.weights[j];
            }
            inner += w * f(&x, &v);
        }
        sum += inner;
    }
    sum / xs_total as f64
}

/// `∫ M h dx dv`, refined until two successive grids agree to `1e-8`.
fn maxwellian_average<const D: usize>(f: &Evaluator<D>, spatial: bool) -> Result<f64, FieldError> {
    let mut levels: Vec<(usize, usize)> = LEVELS.to_vec();
    if !spatial {
        // Without x-dependence only the velocity refinement matters.
        levels.dedup_by_key(|l| l.0);
    }
    let mut prev = average_at_level(f, spatial, levels[0].0, levels[0].1);
    for &(nv, nx) in &levels[1..] {
        let cur = average_at_level(f, spatial, nv, nx);
        if (cur - prev).abs() <= QUADRATURE_TOL {
            return Ok(cur);
        }
        if (nv, nx) == *levels.last().expect("non-empty") {
            return Err(FieldError::QuadratureNonConvergence { prev, last: cur });
        }
        prev = cur;
    }
    unreachable!("loop returns on the last level")
}

/// `h - <h>`, flagged mean-free after re-checking the new mean.
pub fn mean_free_project<const D: usize>(h: &TestFunction<D>) -> Result<TestFunction<D>, FieldError> {
    if h.is_mean_free() {
        return Ok(h.clone());
    }
    let m = h.mean;
    let inner = h.eval.clone();
    let eval: Arc<Evaluator<D>> = Arc::new(move |x, v| inner(x, v) - m);
    let residual = maxwellian_average(eval.as_ref(), h.spatial)?;
    if residual.abs() > MEAN_FREE_TOL {
        return Err(FieldError::QuadratureNonConvergence {
            prev: 0.0,
            last: residual,
        });
    }
    Ok(TestFunction {
        name: format!("{}-<.>", h.name),
        eval,
        spatial: h.spatial,
        mean: residual,
    })
}

/// `(1 / mu) sum_i h(z_i)`.
pub fn empirical_field<const D: usize>(config: &Configuration<D>, h: &TestFunction<D>, mu: f64) -> f64 {
    config.particles.iter().map(|p| h.eval(&p.x, &p.v)).sum::<f64>() / mu
}

/// `sqrt(mu) pi(h)` for a mean-free `h`.
pub fn fluctuation_field<const D: usize>(
    config: &Configuration<D>,
    h: &TestFunction<D>,
    mu: f64,
) -> Result<f64, FieldError> {
    if !h.is_mean_free() {
        return Err(FieldError::NotMeanFree {
            name: h.name.clone(),
            mean: h.mean,
        });
    }
    Ok(mu.sqrt() * empirical_field(config, h, mu))
}

fn require_mean_free<const D: usize>(h: &TestFunction<D>) -> Result<(), FieldError> {
    if h.is_mean_free() {
        Ok(())
    } else {
        Err(FieldError::NotMeanFree {
            name: h.name.clone(),
            mean: h.mean,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovarianceEstimate {
    pub value: f64,
    pub stderr: f64,
    pub replicas: usize,
    pub t: f64,
    pub seed_root: u64,
}

impl CovarianceEstimate {
    /// Estimate from one product `zeta_0(g0) zeta_t(h)` per replica.
    pub fn from_replica_products(products: &[f64], t: f64, seed_root: u64) -> Result<Self, FieldError> {
        if products.len() < 2 {
            return Err(FieldError::InsufficientReplicas(products.len()));
        }
        let m = Moments::from_slice(products);
        Ok(Self {
            value: m.mean(),
            stderr: m.stderr(),
            replicas: products.len(),
            t,
            seed_root,
        })
    }
}

/// Average of `zeta_s(g0) zeta_{s+t}(h)` over replicas and time origins `s`.
///
/// Origins within one log are averaged first; the standard error comes from
/// the spread across replicas only.
pub fn covariance<const D: usize>(
    logs: &[TrajectoryLog<D>],
    t: f64,
    g0: &TestFunction<D>,
    h: &TestFunction<D>,
    mu: f64,
    origins: &[f64],
    seed_root: u64,
) -> Result<CovarianceEstimate, FieldError> {
    require_mean_free(g0)?;
    require_mean_free(h)?;
    if logs.len() < 2 {
        return Err(FieldError::InsufficientReplicas(logs.len()));
    }
    let origins: &[f64] = if origins.is_empty() { &[0.0] } else { origins };
    let needed = origins.iter().cloned().fold(0.0, f64::max) + t;
    let mut per_replica = Vec::with_capacity(logs.len());
    for log in logs {
        if log.final_time + 1e-12 < needed {
            return Err(FieldError::LogTooShort {
                needed,
                have: log.final_time,
            });
        }
        let mut times: Vec<f64> = origins.iter().flat_map(|&s| [s, s + t]).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let states = log.states_at(&times);
        let at = |s: f64| {
            let k = times.iter().position(|&u| u == s).expect("requested time");
            &states[k]
        };
        let mut acc = 0.0;
        for &s in origins {
            let a = fluctuation_field(at(s), g0, mu)?;
            let b = fluctuation_field(at(s + t), h, mu)?;
            acc += a * b;
        }
        per_replica.push(acc / origins.len() as f64);
    }
    CovarianceEstimate::from_replica_products(&per_replica, t, seed_root)
}

/// Monte Carlo estimate of `E(zeta_0(h)^p)` for `p` in `{2, 4}`, with its
/// standard error.
pub fn moment_probe<const D: usize>(
    replicas: &[Configuration<D>],
    h: &TestFunction<D>,
    p: u32,
    mu: f64,
) -> Result<(f64, f64), FieldError> {
    if p != 2 && p != 4 {
        return Err(FieldError::InvalidMoment(p));
    }
    if replicas.len() < 2 {
        return Err(FieldError::InsufficientReplicas(replicas.len()));
    }
    let mut m = Moments::default();
    for c in replicas {
        m.push(fluctuation_field(c, h, mu)?.powi(p as i32));
    }
    Ok((m.mean(), m.stderr()))
}

/// Built-in test functions.
pub mod catalog {
    use super::*;
    use std::f64::consts::TAU;

    /// `v_k`.
    pub fn velocity<const D: usize>(k: usize) -> TestFunction<D> {
        TestFunction::new(format!("v{}", k + 1), false, move |_, v| v.0[k]).expect("exact")
    }

    pub fn v1<const D: usize>() -> TestFunction<D> {
        velocity(0)
    }

    /// `|v|^2 - D`.
    pub fn energy<const D: usize>() -> TestFunction<D> {
        TestFunction::new("|v|^2-d", false, |_, v| v.norm2() - D as f64).expect("exact")
    }

    /// `cos(2 pi x_1) v_1`.
    pub fn cos_x1_v1<const D: usize>() -> TestFunction<D> {
        TestFunction::new("cos(2pi x1) v1", true, |x, v| (TAU * x.0[0]).cos() * v.0[0]).expect("exact")
    }

    /// `v_1 v_2`, a shear moment.
    pub fn shear<const D: usize>() -> TestFunction<D> {
        TestFunction::new("v1 v2", false, |_, v| v.0[0] * v.0[1]).expect("exact")
    }

    /// `v_1 (|v|^2 - (D + 2))`, a heat-flux moment.
    pub fn heat_flux<const D: usize>() -> TestFunction<D> {
        TestFunction::new("v1(|v|^2-d-2)", false, |_, v| v.0[0] * (v.norm2() - (D + 2) as f64))
            .expect("exact")
    }

    pub fn constant<const D: usize>(c: f64) -> TestFunction<D> {
        TestFunction::new(format!("{c}"), false, move |_, _| c).expect("exact")
    }

    /// Polynomial in the velocity, `sum_k c_k prod_j v_j^{p_kj}`.
    pub fn polynomial<const D: usize>(terms: Vec<(f64, [u32; D])>) -> Result<TestFunction<D>, FieldError> {
        let name = terms
            .iter()
            .map(|(c, p)| format!("{c}*v^{p:?}"))
            .collect::<Vec<_>>()
            .join("+");
        TestFunction::new(name, false, move |_, v| {
            terms
                .iter()
                .map(|(c, p)| c * (0..D).map(|j| v.0[j].powi(p[j] as i32)).product::<f64>())
                .sum()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::ParticleState;

    #[test]
    fn catalog_means() {
        assert!(catalog::v1::<3>().is_mean_free());
        assert!((catalog::energy::<3>().mean()).abs() < 1e-12);
        assert!(catalog::heat_flux::<3>().is_mean_free());
        let sq = TestFunction::<3>::new("|v|^2", false, |_, v| v.norm2()).unwrap();
        assert!((sq.mean() - 3.0).abs() < 1e-12);
        let p = mean_free_project(&sq).unwrap();
        assert!(p.is_mean_free());
        let z = VecD([0.1, 0.2, 0.3]);
        assert!((p.eval(&z, &z) - (z.norm2() - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn spatial_average_vanishes() {
        let h = TestFunction::<2>::new("cos v1^2", true, |x, v| {
            (std::f64::consts::TAU * x.0[0]).cos() * v.0[0] * v.0[0]
        })
        .unwrap();
        assert!(h.is_mean_free());
        let same = mean_free_project(&h).unwrap();
        let z = VecD([0.3, 0.4]);
        assert_eq!(same.eval(&z, &z), h.eval(&z, &z));
    }

    #[test]
    fn non_polynomial_fails_to_converge() {
        let h = TestFunction::<2>::new("|v1|", false, |_, v| v.0[0].abs());
        assert!(matches!(h, Err(FieldError::QuadratureNonConvergence { .. })));
    }

    #[test]
    fn fields_on_small_configurations() {
        let h = catalog::v1::<3>();
        let empty = Configuration::<3>::new(vec![], 0.1);
        assert_eq!(empirical_field(&empty, &h, 10.0), 0.0);
        let one = Configuration::new(vec![ParticleState::new([0.1; 3], [2.0, 0.0, 0.0])], 0.1);
        assert!((empirical_field(&one, &h, 10.0) - 0.2).abs() < 1e-15);
        assert!((fluctuation_field(&one, &h, 4.0).unwrap() - 1.0).abs() < 1e-15);
        let sq = TestFunction::<3>::new("|v|^2", false, |_, v| v.norm2()).unwrap();
        assert!(fluctuation_field(&one, &sq, 4.0).is_err());
    }
}
