//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines land in `cargo test`
//! output. Set `BGLAB_ACCEPTANCE=1,7` to run a subset. The process fails
//! only on criteria outside `KNOWN_RED`, which are reported but expected.

use bglab_core::combinatorics::{penrose_check, penrose_sweep, PointSet};
use bglab_core::dynamics::{reverse_check_report, EventDrivenSim, SimOptions};
use bglab_core::fields::{catalog, fluctuation_field, TestFunction};
use bglab_core::kinetic::{covariance_prediction, solve_tree_mc, KineticSolver};
use bglab_core::par::{map_range, Execution};
use bglab_core::pseudo::{
    build_backward, estimate_recollision_measure, forward_reconstruct, sample_creation_params, RecollisionIndexSet,
    Survivor, VelocityLaw,
};
use bglab_core::rng::stream_rng;
use bglab_core::sampler::{sample_with, GrandCanonicalParams, PolarGaussian, SamplerOptions};
use bglab_core::stats::ks_two_sample;
use bglab_core::torus::{minimal_image, ParticleState, VecD};
use bglab_core::trees::{CollisionTree, CreationParams, Sign};
use bglab_harness::config::ExperimentConfig;
use bglab_harness::experiments::{run_covariance_experiment, run_scaling_study, run_trees, scaling_regime};
use bglab_harness::table::Cell;
use rand::Rng;
use std::time::Instant;

/// Criteria that fail at desk scale; see the project notes.
const KNOWN_RED: &[&str] = &["2", "4a"];

const PAR: Execution = Execution::Parallel;

struct Report {
    lines: Vec<(String, bool)>,
}

impl Report {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id.to_string(), pass));
    }
}

fn num(c: &Cell) -> f64 {
    match c {
        Cell::F(x) => *x,
        Cell::I(x) => *x as f64,
        _ => f64::NAN,
    }
}

fn sample(p: &GrandCanonicalParams<3>, seed: u64, r: u64) -> bglab_core::sampler::Configuration<3> {
    sample_with(p, &SamplerOptions::default(), &mut stream_rng(seed, r)).unwrap()
}

// 1. Energy, momentum and exclusion over 1e5 collisions, N ≈ 100.
fn conservation(rep: &mut Report) {
    let start = Instant::now();
    let p = GrandCanonicalParams::<3>::boltzmann_grad(0.085).unwrap();
    let c = sample(&p, 101, 0);
    let opts = SimOptions {
        record: false,
        max_events: 1 << 40,
        ..SimOptions::default()
    };
    let mut sim = EventDrivenSim::new(&c, opts).unwrap();
    let (e0, p0) = (c.total_energy(), c.total_momentum());
    let speed: f64 = c.particles.iter().map(|q| q.v.norm()).sum();
    let (mut de, mut dp, mut overlap) = (0.0f64, 0.0f64, 0.0f64);
    let mut t = 0.0;
    while sim.stats().collisions < 100_000 {
        t += 0.5;
        sim.advance_to(t).unwrap();
        let s = sim.state();
        de = de.max((s.total_energy() - e0).abs() / e0);
        dp = dp.max((s.total_momentum() - p0).max_abs() / speed);
        overlap = overlap.max(s.min_pair_distance().map_or(0.0, |d| c.eps - d));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = de <= 1e-10 && dp <= 1e-10 && overlap <= 1e-10 && secs <= 300.0;
    rep.record(
        "1",
        pass,
        format!(
            "N = {}, {} collisions to t = {t}: energy drift {de:.2e}, momentum drift {dp:.2e} (of sum |v|), worst overlap {overlap:.2e}, {secs:.1} s",
            c.len(),
            sim.stats().collisions
        ),
    );
}

// 2. Reversal over T = 2 at N ≈ 50, 100 runs. Judged in the dilute regime
// eps = 0.05, mu = 50; denser gases are shown for reference.
fn reversibility(rep: &mut Report) {
    let sweep = |p: GrandCanonicalParams<3>| {
        let runs = map_range(PAR, 100, |r| {
            let c = sample(&p, 102, r as u64);
            (c.len(), reverse_check_report(&c, 2.0).unwrap())
        });
        let grazing = runs.iter().filter(|r| r.1.grazing > 0).count();
        let mut devs: Vec<f64> = runs.iter().map(|r| r.1.deviation).collect();
        devs.sort_by(f64::total_cmp);
        let above = devs.iter().filter(|d| **d > 1e-6).count();
        let mean_n = runs.iter().map(|r| r.0 as f64).sum::<f64>() / 100.0;
        let collisions = runs.iter().map(|r| r.1.collisions).sum::<u64>() / 100;
        let line = format!(
            "eps {:.3}, mean N {mean_n:.1}, {collisions} collisions per run: median {:.1e}, worst {:.1e}, {above} runs above 1e-6, {grazing} grazing",
            p.eps, devs[50], devs[99]
        );
        (above == 0 && grazing == 0, line)
    };
    let (pass, main) = sweep(GrandCanonicalParams::new(0.05, 50.0).unwrap());
    let (_, dilute) = sweep(GrandCanonicalParams::new(0.03, 50.0).unwrap());
    let (_, bg) = sweep(GrandCanonicalParams::boltzmann_grad(50f64.powf(-0.5)).unwrap());
    rep.record("2", pass, format!("{main} [reference: {dilute}; Boltzmann-Grad {bg}]"));
}

// 3. Law of ζ_t(v1) at t = 0 and t = 1, independent replica sets.
fn stationarity(rep: &mut Report) {
    let p = GrandCanonicalParams::<3>::boltzmann_grad(0.05).unwrap();
    let h = catalog::v1::<3>();
    let at = |t: f64, seed: u64| {
        map_range(PAR, 2000, |r| {
            let c = sample(&p, seed, r as u64);
            let s = if t > 0.0 {
                bglab_core::dynamics::evolve(&c, t).unwrap().0
            } else {
                c
            };
            fluctuation_field(&s, &h, p.mu).unwrap()
        })
    };
    let ks = ks_two_sample(&at(0.0, 103), &at(1.0, 1103));
    rep.record(
        "3",
        ks.p_value > 0.01,
        format!("eps 0.05, 2000 + 2000 replicas: KS D = {:.4}, p = {:.3}", ks.statistic, ks.p_value),
    );
}

fn covariance_rows(toml: &str) -> Vec<Vec<Cell>> {
    let cfg = ExperimentConfig::from_toml(toml).unwrap();
    run_covariance_experiment::<3>(&cfg, toml, PAR).unwrap().table.rows
}

// 4. Equal-time covariances at eps = 0.05, Boltzmann-Grad mu.
fn equal_time(rep: &mut Report) {
    let base = |g0: &str, h: &str| {
        format!(
            "kind = \"covariance\"\nmaster_seed = 104\nreplicas = 10000\n[gas]\neps = [0.05]\n[observables]\ng0 = \"{g0}\"\nh = \"{h}\"\ntimes = [0.0]\n[kinetic]\nnodes = 8\ndegree = 4\nnx = 1\n"
        )
    };
    let r = &covariance_rows(&base("v1", "v1"))[0];
    let (v, se) = (num(&r[3]), num(&r[4]));
    rep.record(
        "4a",
        (v - 1.0).abs() <= 3.0 * se,
        format!("Cov(0, v1, v1) = {v:.4} +- {se:.4}, target 1 (mu = {:.1})", num(&r[1])),
    );
    let r = &covariance_rows(&base("v1", "v2"))[0];
    let (v, se) = (num(&r[3]), num(&r[4]));
    rep.record("4b", v.abs() <= 3.0 * se, format!("Cov(0, v1, v2) = {v:.4} +- {se:.4}, target 0"));
}

// 5. Distance to the limit shrinks along eps = 0.2, 0.1, 0.05.
fn trend(rep: &mut Report) {
    let toml = "kind = \"covariance\"\nmaster_seed = 105\nreplicas = 10000\n[gas]\neps = [0.2, 0.1, 0.05]\n[observables]\ng0 = \"v1\"\nh = \"v1\"\ntimes = [0.25, 0.5, 1.0]\n[kinetic]\nnodes = 8\ndegree = 4\nnx = 1\n";
    let rows = covariance_rows(toml);
    let mut pass = true;
    let mut detail = Vec::new();
    for ti in 0..3 {
        let pick = |ei: usize| &rows[ei * 3 + ti];
        let gaps: Vec<(f64, f64)> = (0..3).map(|e| (num(&pick(e)[7]).abs(), num(&pick(e)[4]))).collect();
        for k in 0..2 {
            let tol = (gaps[k].1.powi(2) + gaps[k + 1].1.powi(2)).sqrt();
            pass &= gaps[k + 1].0 <= gaps[k].0 + tol;
        }
        detail.push(format!(
            "t = {}: |gap| {:.3}, {:.3}, {:.3}",
            num(&pick(0)[2]),
            gaps[0].0,
            gaps[1].0,
            gaps[2].0
        ));
    }
    rep.record("5", pass, detail.join("; "));
}

// 6. Collision invariants, symmetry and sign of the linearized operator.
fn operator(rep: &mut Report) {
    let s = KineticSolver::<3>::new(10, 6, 8).unwrap();
    let mut inv = s.norm(&s.apply_l(&s.constant(1.0)));
    for f in [catalog::velocity::<3>(0), catalog::velocity(1), catalog::velocity(2), catalog::energy()] {
        inv = inv.max(s.norm(&s.apply_l(&s.field(&f).unwrap())));
    }
    let probes: Vec<TestFunction<3>> = vec![
        catalog::shear(),
        catalog::heat_flux(),
        catalog::cos_x1_v1(),
        catalog::polynomial(vec![(1.0, [2, 0, 0]), (-1.0, [0, 2, 0])]).unwrap(),
    ];
    let mut sa = 0.0f64;
    for a in &probes {
        for b in &probes {
            let (ga, gb) = (s.field(a).unwrap(), s.field(b).unwrap());
            sa = sa.max((s.inner(&s.apply_collision(&ga), &gb) - s.inner(&ga, &s.apply_collision(&gb))).abs());
        }
    }
    let lam = s.max_collision_eigenvalue();
    rep.record(
        "6",
        inv <= 1e-8 && sa <= 1e-8 && lam <= 1e-10,
        format!("invariant residual {inv:.2e}, self-adjointness {sa:.2e}, largest eigenvalue {lam:.2e}"),
    );
}

// 7. Tree Monte Carlo (m ≤ 3) against the deterministic solve at theta = 0.1.
fn backends(rep: &mut Report) {
    let theta = 0.1;
    let s = KineticSolver::<3>::new(10, 6, 8).unwrap();
    // Sample counts sized so each stderr lands inside the 2% envelope; the
    // cubic heat flux has by far the largest variance.
    let pairs = [
        (catalog::shear::<3>(), 4_000_000),
        (catalog::heat_flux(), 10_000_000),
        (catalog::cos_x1_v1(), 1_000_000),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, (f, samples)) in pairs.iter().enumerate() {
        let det = covariance_prediction(&s, f, f, theta).unwrap();
        let mc = solve_tree_mc(f, f, theta, 3, *samples, 107 + k as u64, PAR).unwrap();
        let diff = (mc.value - det).abs();
        let ok = diff <= 3.0 * mc.stderr + 0.02 * det.abs() && mc.stderr <= 0.02 * det.abs();
        pass &= ok;
        detail.push(format!("{} ({samples}): mc {:.4} +- {:.4} vs {det:.4}", f.name(), mc.value, mc.stderr));
    }
    rep.record("7", pass, format!("theta {theta}: {}", detail.join("; ")));
}

// 8. Round trip on recollision-free samples; non-injectivity without kappa.
fn injectivity(rep: &mut Report) {
    let eps = 0.05;
    let errs = map_range(PAR, 1000, |i| {
        let mut rng = stream_rng(108, i as u64);
        let mut g = PolarGaussian::default();
        let m = rng.random_range(1..=3usize);
        loop {
            let signs: Vec<Sign> = (0..m).map(|_| Sign::from_bit(rng.random())).collect();
            let tree = CollisionTree::random_shape(1, &signs, &mut rng);
            let root = ParticleState {
                x: VecD(std::array::from_fn(|_| rng.random())),
                v: g.maxwellian::<3, _>(&mut rng),
            };
            let (p, _) = sample_creation_params(m, 1.0, &VelocityLaw::Maxwellian, &mut g, &mut rng);
            let Ok(tr) = build_backward(&root, &tree, &p, eps, 1.0) else {
                continue;
            };
            if !tr.recollisions.is_empty() {
                continue;
            }
            let pairs: Vec<(Sign, Survivor)> = tr.tree.entries.iter().map(|e| (e.1, Survivor::Parent)).collect();
            return match forward_reconstruct(&tr.terminal, &tr.tree, &pairs, 1.0, None) {
                Some(b) => b
                    .params
                    .max_difference(&tr.params)
                    .max(minimal_image(&b.root.x, &tr.root.x).max_abs())
                    .max((b.root.v - tr.root.v).max_abs()),
                None => f64::INFINITY,
            };
        }
    });
    let failures = errs.iter().filter(|e| !(**e <= 1e-9)).count();
    let worst = errs.iter().cloned().fold(0.0, f64::max);

    // A pair flying apart meets again through the boundary.
    let z = ParticleState::new([0.5, 0.5, 0.5], [0.0, 0.0, 0.0]);
    let tree = CollisionTree::new(1, vec![(0, Sign::Minus)]).unwrap();
    let p = CreationParams {
        times: vec![0.9],
        omegas: vec![VecD([1.0, 0.0, 0.0])],
        velocities: vec![VecD([2.0, 0.001, 0.0])],
    };
    let tr = build_backward(&z, &tree, &p, eps, 1.0).unwrap();
    let signs = [(Sign::Minus, Survivor::Parent)];
    let naive = forward_reconstruct(&tr.terminal, &tree, &signs, 1.0, None).unwrap();
    let other = build_backward(&naive.root, &tree, &naive.params, eps, 1.0).unwrap();
    let same_end = other
        .terminal
        .particles
        .iter()
        .zip(&tr.terminal.particles)
        .all(|(a, b)| minimal_image(&a.x, &b.x).max_abs() < 1e-9 && (a.v - b.v).max_abs() < 1e-9);
    let kappa = RecollisionIndexSet::from_trajectory(&tr);
    let back = forward_reconstruct(&tr.terminal, &tree, &signs, 1.0, Some(&kappa)).unwrap();
    let non_injective = naive.params.max_difference(&p) > 0.1 && same_end && back.params.max_difference(&p) < 1e-9;
    rep.record(
        "8",
        failures == 0 && non_injective,
        format!(
            "1000 samples: worst error {worst:.2e}, {failures} above 1e-9; recollision example: two parameter sets, one terminal state ({}), kappa recovers the original ({:.1e})",
            non_injective,
            back.params.max_difference(&p)
        ),
    );
}

// 9. Tree-graph bound on random point sets.
fn penrose(rep: &mut Report) {
    let bad = penrose_sweep::<3>(10_000, &[2, 3, 4, 5, 6], &[0.05, 0.1, 0.2], 109, PAR).unwrap();
    let r = penrose_check(&PointSet::new(vec![VecD::<3>::zero(); 3], 0.1).unwrap()).unwrap();
    rep.record(
        "9",
        bad == 0 && r.phi == 2.0 && r.tree_bound == 3.0,
        format!("1e4 sets, {bad} violations; three coincident points phi = {} <= {}", r.phi, r.tree_bound),
    );
}

// 10. Exact counting identities.
fn counting(rep: &mut Report) {
    let toml = "kind = \"trees\"\n[trees]\nn_max = 6\nnm_max = 7\npenrose_samples = 0\n";
    let cfg = ExperimentConfig::from_toml(toml).unwrap();
    let t = run_trees::<3>(&cfg, toml, PAR).unwrap();
    let bad: Vec<String> = t
        .rows
        .iter()
        .filter(|r| r[5] != Cell::B(true))
        .map(|r| format!("{} n={} m={}", r[0], r[1], r[2]))
        .collect();
    rep.record(
        "10",
        bad.is_empty(),
        format!("{} identities checked, mismatches: {:?}", t.rows.len(), bad),
    );
}

// 11. Recollision measure under eps -> eps / 2.
fn scaling(rep: &mut Report) {
    let regime = scaling_regime::<3>(0.5, bglab_core::pseudo::RecollisionKind::Direct);
    let a = estimate_recollision_measure(0.05, &regime, 1_000_000, 111, PAR);
    let b = estimate_recollision_measure(0.025, &regime, 1_000_000, 112, PAR);
    let ratio = a.value / b.value;
    let se = ratio * ((a.stderr / a.value).powi(2) + (b.stderr / b.value).powi(2)).sqrt();
    rep.record(
        "11",
        (1.6..=2.4).contains(&ratio),
        format!(
            "measure {:.3e} +- {:.1e} at eps 0.05, {:.3e} +- {:.1e} at 0.025: ratio {ratio:.3} +- {se:.3}, band [1.6, 2.4]",
            a.value, a.stderr, b.value, b.stderr
        ),
    );
}

// 12. Cluster-violation frequency against the evaluated bound.
fn clusters(rep: &mut Report) {
    let toml = "kind = \"clusters\"\nmaster_seed = 112\nreplicas = 200\n[gas]\neps = [0.2, 0.1, 0.05]\n[schedule]\ntheta = \"1\"\ntau = \"1/2\"\ndelta = \"1/100\"\ngamma = 3\nv_max = 5.0\n";
    let cfg = ExperimentConfig::from_toml(toml).unwrap();
    let t = run_scaling_study::<3>(&cfg, toml, PAR).unwrap();
    let pass = t.rows.iter().all(|r| r[6] == Cell::B(true));
    let detail: Vec<String> = t
        .rows
        .iter()
        .map(|r| format!("eps {}: P(not U) {:.3} <= bound {:.3e}", num(&r[0]), num(&r[2]), num(&r[5])))
        .collect();
    rep.record("12", pass, detail.join("; "));
}

fn main() {
    let only: Option<Vec<String>> = std::env::var("BGLAB_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').map(|x| x.trim().to_string()).collect());
    let want = |id: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == id));
    let criteria: [(&str, fn(&mut Report)); 12] = [
        ("1", conservation),
        ("2", reversibility),
        ("3", stationarity),
        ("4", equal_time),
        ("5", trend),
        ("6", operator),
        ("7", backends),
        ("8", injectivity),
        ("9", penrose),
        ("10", counting),
        ("11", scaling),
        ("12", clusters),
    ];
    let mut rep = Report { lines: Vec::new() };
    for (id, f) in criteria {
        if want(id) {
            f(&mut rep);
        }
    }
    let failed: Vec<&str> = rep.lines.iter().filter(|l| !l.1).map(|l| l.0.as_str()).collect();
    let unexpected: Vec<&&str> = failed.iter().filter(|id| !KNOWN_RED.contains(id)).collect();
    println!(
        "acceptance: {} passed, {} failed {:?} (known red: {:?})",
        rep.lines.len() - failed.len(),
        failed.len(),
        failed,
        KNOWN_RED
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
