//! Invariant suite across all modules, one row per check.

use crate::config::ExperimentConfig;
use crate::experiments::sweep_seed;
use crate::table::{provenance, ResultTable};
use crate::HarnessError;
use bglab_core::combinatorics::{
    count_collision_trees, count_labeled_trees, count_trees_with_degrees, penrose_sweep, tree_degree_sequences,
};
use bglab_core::dynamics::{evolve, reverse_check_report};
use bglab_core::fields::{catalog, TestFunction};
use bglab_core::kinetic::KineticSolver;
use bglab_core::par::{map_range, Execution};
use bglab_core::pseudo::{
    build_backward, forward_reconstruct, sample_creation_params, RecollisionIndexSet, Survivor, VelocityLaw,
};
use bglab_core::rng::stream_rng;
use bglab_core::sampler::{sample_with, GrandCanonicalParams, PolarGaussian, SamplerOptions};
use bglab_core::torus::{minimal_image, specular_reflect, torus_distance, ParticleState, VecD};
use bglab_core::trees::{CollisionTree, Sign};
use rand::Rng;

pub type ReflectFn<const D: usize> = fn(&VecD<D>, &VecD<D>, &VecD<D>) -> (VecD<D>, VecD<D>);

pub fn exact_reflect<const D: usize>(vi: &VecD<D>, vj: &VecD<D>, omega: &VecD<D>) -> (VecD<D>, VecD<D>) {
    specular_reflect(vi, vj, omega).expect("unit omega")
}

/// Sizes and injection points of the suite.
#[derive(Clone, Copy, Debug)]
pub struct SuiteOptions<const D: usize> {
    /// Reflection under test in the collision-rule checks.
    pub reflect: ReflectFn<D>,
    pub reflections: usize,
    pub gas_runs: usize,
    pub round_trips: usize,
    pub penrose_samples: usize,
}

impl<const D: usize> Default for SuiteOptions<D> {
    fn default() -> Self {
        Self {
            reflect: exact_reflect::<D>,
            reflections: 10_000,
            gas_runs: 8,
            round_trips: 500,
            penrose_samples: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub residual: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn pass(&self) -> bool {
        self.residual <= self.tolerance
    }
}

fn unit<const D: usize, R: Rng>(g: &mut PolarGaussian, rng: &mut R) -> VecD<D> {
    let v: VecD<D> = g.maxwellian(rng);
    v * (1.0 / v.norm())
}

fn reflection_checks<const D: usize>(opts: &SuiteOptions<D>, seed: u64) -> Vec<Check> {
    let mut rng = stream_rng(seed, 0);
    let mut g = PolarGaussian::default();
    let (mut energy, mut momentum, mut involution, mut normal) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..opts.reflections {
        let vi: VecD<D> = g.maxwellian(&mut rng) * 2.0;
        let vj: VecD<D> = g.maxwellian(&mut rng) * 2.0;
        let om = unit::<D, _>(&mut g, &mut rng);
        let scale = 1.0 + vi.norm2() + vj.norm2();
        let (a, b) = (opts.reflect)(&vi, &vj, &om);
        energy = energy.max((a.norm2() + b.norm2() - vi.norm2() - vj.norm2()).abs() / scale);
        momentum = momentum.max(((a + b) - (vi + vj)).max_abs() / scale);
        normal = normal.max(((a - b).dot(&om) + (vi - vj).dot(&om)).abs() / scale);
        let (c, e) = (opts.reflect)(&a, &b, &om);
        involution = involution.max((c - vi).max_abs().max((e - vj).max_abs()) / scale);
    }
    vec![
        Check { name: "reflect-energy", residual: energy, tolerance: 1e-12 },
        Check { name: "reflect-momentum", residual: momentum, tolerance: 1e-12 },
        Check { name: "reflect-normal-flip", residual: normal, tolerance: 1e-12 },
        Check { name: "reflect-involution", residual: involution, tolerance: 1e-12 },
    ]
}

fn geometry_checks<const D: usize>(seed: u64) -> Vec<Check> {
    let mut rng = stream_rng(seed, 1);
    let mut excess = 0.0f64;
    let mut symmetry = 0.0f64;
    for _ in 0..10_000 {
        let a = VecD::<D>(std::array::from_fn(|_| rng.random()));
        let b = VecD::<D>(std::array::from_fn(|_| rng.random()));
        let d = minimal_image(&a, &b);
        excess = excess.max(d.norm() - (D as f64).sqrt() / 2.0);
        symmetry = symmetry.max((torus_distance(&a, &b) - torus_distance(&b, &a)).abs());
    }
    vec![
        Check { name: "minimal-image-bound", residual: excess.max(0.0), tolerance: 1e-14 },
        Check { name: "torus-distance-symmetry", residual: symmetry, tolerance: 1e-15 },
    ]
}

fn gas_checks<const D: usize>(opts: &SuiteOptions<D>, seed: u64, exec: Execution) -> Result<Vec<Check>, HarnessError> {
    let params = GrandCanonicalParams::<D>::new(0.05, 50.0)?;
    let sopts = SamplerOptions::default();
    let runs = map_range(exec, opts.gas_runs, |r| -> Result<[f64; 5], HarnessError> {
        let c = sample_with(&params, &sopts, &mut stream_rng(seed, r as u64))?;
        let (s, log) = evolve(&c, 1.0)?;
        let speed: f64 = c.particles.iter().map(|p| p.v.norm()).sum::<f64>().max(1e-300);
        let de = (s.total_energy() - c.total_energy()).abs() / c.total_energy().max(1e-300);
        let dp = (s.total_momentum() - c.total_momentum()).max_abs() / speed;
        let times: Vec<f64> = (0..=50).map(|k| k as f64 * 0.02).collect();
        let overlap = log
            .states_at(&times)
            .iter()
            .filter_map(|st| st.min_pair_distance())
            .map(|d| (c.eps - d).max(0.0))
            .fold(0.0, f64::max);
        let rev = reverse_check_report(&c, 1.0)?;
        let reversal = if rev.grazing == 0 { rev.deviation } else { 0.0 };
        let excl = if c.satisfies_exclusion(0.0) { 0.0 } else { 1.0 };
        Ok([de, dp, overlap, reversal, excl])
    });
    let mut worst = [0.0f64; 5];
    for r in runs {
        let r = r?;
        for k in 0..5 {
            worst[k] = worst[k].max(r[k]);
        }
    }
    Ok(vec![
        Check { name: "dynamics-energy", residual: worst[0], tolerance: 1e-10 },
        Check { name: "dynamics-momentum", residual: worst[1], tolerance: 1e-10 },
        Check { name: "dynamics-exclusion", residual: worst[2], tolerance: 1e-10 },
        Check { name: "dynamics-reversibility", residual: worst[3], tolerance: 1e-6 },
        Check { name: "sampler-exclusion", residual: worst[4], tolerance: 0.0 },
    ])
}

/// Backward construction then forward reconstruction, on well-conditioned
/// samples: at most two creations with cross-sections at least 1e-2.
fn round_trip_check<const D: usize>(opts: &SuiteOptions<D>, seed: u64, exec: Execution) -> Check {
    let eps = 0.05;
    let errs = map_range(exec, opts.round_trips, |i| {
        let mut rng = stream_rng(seed, i as u64);
        let mut g = PolarGaussian::default();
        let m = rng.random_range(1..=2usize);
        for _ in 0..1000 {
            let signs: Vec<Sign> = (0..m).map(|_| Sign::from_bit(rng.random())).collect();
            let tree = CollisionTree::random_shape(1, &signs, &mut rng);
            let root = ParticleState {
                x: VecD::<D>(std::array::from_fn(|_| rng.random())),
                v: g.maxwellian(&mut rng),
            };
            let (p, _) = sample_creation_params(m, 1.0, &VelocityLaw::Maxwellian, &mut g, &mut rng);
            let Ok(tr) = build_backward(&root, &tree, &p, eps, 1.0) else {
                continue;
            };
            if tr.creations.iter().any(|c| c.cross_section < 1e-2) {
                continue;
            }
            let kappa = RecollisionIndexSet::from_trajectory(&tr);
            let pairs: Vec<(Sign, Survivor)> = tr.tree.entries.iter().map(|e| (e.1, Survivor::Parent)).collect();
            return match forward_reconstruct(&tr.terminal, &tr.tree, &pairs, 1.0, Some(&kappa)) {
                Some(b) => b
                    .params
                    .max_difference(&tr.params)
                    .max(minimal_image(&b.root.x, &tr.root.x).max_abs())
                    .max((b.root.v - tr.root.v).max_abs()),
                None => f64::INFINITY,
            };
        }
        f64::INFINITY
    });
    Check {
        name: "pseudo-round-trip",
        residual: errs.into_iter().fold(0.0, f64::max),
        tolerance: 1e-9,
    }
}

fn kinetic_checks<const D: usize>() -> Result<Vec<Check>, HarnessError> {
    let s = KineticSolver::<D>::new(8, 4, 4)?;
    let mut invariants = s.norm(&s.apply_l(&s.constant(1.0)));
    let mut fs: Vec<TestFunction<D>> = (0..D).map(catalog::velocity::<D>).collect();
    fs.push(catalog::energy());
    for f in &fs {
        invariants = invariants.max(s.norm(&s.apply_l(&s.field(f)?)));
    }
    let probes = [catalog::shear::<D>(), catalog::heat_flux(), catalog::cos_x1_v1(), catalog::energy()];
    let mut adjoint = 0.0f64;
    for a in &probes {
        for b in &probes {
            let (ga, gb) = (s.field(a)?, s.field(b)?);
            let r = s.inner(&s.apply_collision(&ga), &gb) - s.inner(&ga, &s.apply_collision(&gb));
            adjoint = adjoint.max(r.abs());
        }
    }
    Ok(vec![
        Check { name: "kinetic-collision-invariants", residual: invariants, tolerance: 1e-8 },
        Check { name: "kinetic-self-adjoint", residual: adjoint, tolerance: 1e-8 },
        Check { name: "kinetic-max-eigenvalue", residual: s.max_collision_eigenvalue(), tolerance: 1e-10 },
    ])
}

fn counting_checks<const D: usize>(opts: &SuiteOptions<D>, seed: u64, exec: Execution) -> Result<Vec<Check>, HarnessError> {
    let mut cayley = 0.0f64;
    for n in 2..=6 {
        let mut sum = 0u128;
        for ds in tree_degree_sequences(n) {
            sum += count_trees_with_degrees(&ds)?;
        }
        cayley = cayley.max((sum as f64 - count_labeled_trees(n)? as f64).abs());
    }
    let mut trees = 0.0f64;
    for n in 1..=5u32 {
        for m in 0..=5 - n {
            let e = CollisionTree::enumerate(n as usize, m as usize).len() as f64;
            trees = trees.max((e - count_collision_trees(n, m)? as f64).abs());
        }
    }
    let bad = penrose_sweep::<D>(opts.penrose_samples, &[2, 3, 4, 5, 6], &[0.05, 0.1, 0.2], seed, exec)?;
    Ok(vec![
        Check { name: "cayley-degree-sum", residual: cayley, tolerance: 0.0 },
        Check { name: "collision-tree-count", residual: trees, tolerance: 0.0 },
        Check { name: "penrose-violations", residual: bad as f64, tolerance: 0.0 },
    ])
}

pub fn suite_checks<const D: usize>(seed: u64, opts: &SuiteOptions<D>, exec: Execution) -> Result<Vec<Check>, HarnessError> {
    let mut out = reflection_checks(opts, sweep_seed(seed, 0));
    out.extend(geometry_checks::<D>(sweep_seed(seed, 1)));
    out.extend(gas_checks(opts, sweep_seed(seed, 2), exec)?);
    out.push(round_trip_check(opts, sweep_seed(seed, 3), exec));
    out.extend(kinetic_checks::<D>()?);
    out.extend(counting_checks(opts, sweep_seed(seed, 4), exec)?);
    Ok(out)
}

pub fn run_verification_suite<const D: usize>(
    cfg: &ExperimentConfig,
    config_text: &str,
    opts: &SuiteOptions<D>,
    exec: Execution,
) -> Result<ResultTable, HarnessError> {
    let checks = suite_checks(cfg.master_seed, opts, exec)?;
    let mut table = ResultTable::new(&["check", "residual", "tolerance", "pass"]);
    provenance(&mut table, "invariants", config_text, cfg.master_seed);
    let failed = checks.iter().filter(|c| !c.pass()).count();
    table.meta("failed", failed);
    for c in checks {
        table.push(vec![c.name.into(), c.residual.into(), c.tolerance.into(), c.pass().into()]);
    }
    Ok(table)
}

/// Whether every row of a suite table passed.
pub fn all_passed(table: &ResultTable) -> bool {
    table.get_meta("failed") == Some("0")
}
