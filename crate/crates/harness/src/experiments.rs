//! Experiment drivers. Each returns a [`ResultTable`]; nothing here writes files.

use crate::config::{ConfigError, ExperimentConfig, ExperimentKind};
use crate::snapshot::Snapshot;
use crate::table::{provenance, Cell, ResultTable};
use crate::HarnessError;
use bglab_core::combinatorics::{
    count_collision_trees, count_labeled_trees, count_trees_with_degrees, penrose_check, penrose_sweep,
    tree_degree_sequences, PointSet,
};
use bglab_core::dynamics::{evolve, evolve_with, SimOptions};
use bglab_core::fields::fluctuation_field;
use bglab_core::kinetic::{covariance_prediction, solve_tree_mc, KineticSolver};
use bglab_core::par::{map_range, Execution};
use bglab_core::pseudo::{
    estimate_recollision_measure, upsilon_complement_bound, upsilon_membership, RecollisionKind, RecollisionRegime,
    VelocityLaw,
};
use bglab_core::rng::{child_seed, stream_rng};
use bglab_core::sampler::{sample_with, GrandCanonicalParams, SamplerOptions};
use bglab_core::stats::weighted_line_fit;
use bglab_core::torus::VecD;
use bglab_core::trees::{CollisionTree, Sign};

/// Fraction of faulting replicas above which a run is rejected.
pub const MAX_FAULT_FRACTION: f64 = 1e-3;

pub fn gas_params<const D: usize>(cfg: &ExperimentConfig, eps: f64) -> Result<GrandCanonicalParams<D>, HarnessError> {
    let g = cfg.gas()?;
    Ok(if g.scaling_locked {
        GrandCanonicalParams::boltzmann_grad(eps)?
    } else {
        GrandCanonicalParams::new(eps, g.mu.expect("validated"))?
    })
}

/// Seed of sub-experiment `tag`; replica `r` then uses stream `r` of it.
pub fn sweep_seed(master: u64, tag: usize) -> u64 {
    child_seed(master, tag as u64)
}

pub fn check_faults(faults: usize, replicas: usize) -> Result<(), HarnessError> {
    if faults as f64 > MAX_FAULT_FRACTION * replicas as f64 {
        return Err(HarnessError::TooManyFaults { faults, replicas });
    }
    Ok(())
}

/// Covariance sweep and the limit prediction curve.
pub struct CovarianceOutput {
    pub table: ResultTable,
    pub prediction: ResultTable,
}

pub fn run_covariance_experiment<const D: usize>(
    cfg: &ExperimentConfig,
    config_text: &str,
    exec: Execution,
) -> Result<CovarianceOutput, HarnessError> {
    if cfg.kind != ExperimentKind::Covariance {
        return Err(ConfigError::Invalid("not a covariance config".into()).into());
    }
    cfg.validate()?;
    let obs = cfg.observables()?;
    let g0 = obs.g0.build::<D>()?;
    let h = obs.h.build::<D>()?;
    let mut times = obs.times.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let t_max = *times.last().expect("validated non-empty");

    let k = &cfg.kinetic;
    let solver = KineticSolver::<D>::new(k.nodes, k.degree, k.nx)?;
    let mut prediction = ResultTable::new(&["t", "prediction", "stderr", "backend", "grid_id"]);
    provenance(&mut prediction, "prediction", config_text, cfg.master_seed);
    let mut det = Vec::with_capacity(times.len());
    for &t in &times {
        let p = covariance_prediction(&solver, &g0, &h, t)?;
        det.push(p);
        prediction.push(vec![t.into(), p.into(), 0.0.into(), "deterministic".into(), k.grid_id().into()]);
    }
    if k.tree_samples > 0 {
        for (i, &t) in times.iter().enumerate().filter(|(_, t)| **t > 0.0) {
            let mc = solve_tree_mc(&g0, &h, t, k.m_max, k.tree_samples, sweep_seed(cfg.master_seed, 1000 + i), exec)?;
            prediction.push(vec![
                t.into(),
                mc.value.into(),
                mc.stderr.into(),
                "tree-mc".into(),
                format!("m{}-s{}", k.m_max, k.tree_samples).into(),
            ]);
        }
    }

    let mut table = ResultTable::new(&["eps", "mu", "t", "cov", "stderr", "replicas", "prediction", "gap"]);
    provenance(&mut table, "covariance", config_text, cfg.master_seed);
    table.meta("g0", &obs.g0);
    table.meta("h", &obs.h);
    table.meta("grid_id", k.grid_id());
    let opts = SamplerOptions::default();
    for (ei, &eps) in cfg.gas()?.eps.iter().enumerate() {
        let params = gas_params::<D>(cfg, eps)?;
        let seed = sweep_seed(cfg.master_seed, ei);
        let per = map_range(exec, cfg.replicas, |r| -> Result<Vec<f64>, HarnessError> {
            let mut rng = stream_rng(seed, r as u64);
            let c = sample_with(&params, &opts, &mut rng)?;
            let z0 = fluctuation_field(&c, &g0, params.mu)?;
            let states = if t_max > 0.0 {
                evolve(&c, t_max)?.1.states_at(&times)
            } else {
                vec![c; times.len()]
            };
            states
                .iter()
                .map(|s| Ok(z0 * fluctuation_field(s, &h, params.mu)?))
                .collect()
        });
        let ok: Vec<Vec<f64>> = per.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
        let faults = per.len() - ok.len();
        check_faults(faults, cfg.replicas)?;
        table.meta(&format!("faults_eps_{eps}"), faults);
        for (ti, &t) in times.iter().enumerate() {
            let products: Vec<f64> = ok.iter().map(|p| p[ti]).collect();
            let est = bglab_core::fields::CovarianceEstimate::from_replica_products(&products, t, seed)?;
            table.push(vec![
                eps.into(),
                params.mu.into(),
                t.into(),
                est.value.into(),
                est.stderr.into(),
                est.replicas.into(),
                det[ti].into(),
                (est.value - det[ti]).into(),
            ]);
        }
    }
    Ok(CovarianceOutput { table, prediction })
}

fn recollision_kind(s: &str) -> RecollisionKind {
    match s {
        "periodic" => RecollisionKind::Periodic,
        "any" => RecollisionKind::Any,
        _ => RecollisionKind::Direct,
    }
}

/// Two creations on the root, on opposite hemispheres: the smallest tree
/// with a recollision between siblings.
pub fn scaling_regime<const D: usize>(theta: f64, kind: RecollisionKind) -> RecollisionRegime<D> {
    RecollisionRegime {
        tree: CollisionTree::new(1, vec![(0, Sign::Minus), (0, Sign::Plus)]).expect("valid tree"),
        theta,
        kind,
        v_max: None,
        velocities: VelocityLaw::Maxwellian,
    }
}

/// Exponent fit of `value ~ eps^a` with a 95% interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentFit {
    pub exponent: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Interval wider than 0.5.
    pub underpowered: bool,
}

pub fn fit_exponent(eps: &[f64], values: &[f64], stderrs: &[f64]) -> ExponentFit {
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let s: Vec<f64> = values.iter().zip(stderrs).map(|(v, e)| e / v).collect();
    let fit = weighted_line_fit(&x, &y, &s);
    let half = 1.96 * fit.slope_stderr;
    ExponentFit {
        exponent: fit.slope,
        ci_low: fit.slope - half,
        ci_high: fit.slope + half,
        underpowered: !(2.0 * half <= 0.5),
    }
}

/// Recollision-measure sweep (geometry scaling) and cluster-violation
/// frequencies against the evaluated bound.
pub fn run_scaling_study<const D: usize>(
    cfg: &ExperimentConfig,
    config_text: &str,
    exec: Execution,
) -> Result<ResultTable, HarnessError> {
    cfg.validate()?;
    let eps_list = cfg.gas()?.eps.clone();
    let geometry = cfg.kind == ExperimentKind::GeometryScaling;
    let cluster_replicas = if cfg.scaling.cluster_replicas > 0 {
        cfg.scaling.cluster_replicas
    } else {
        cfg.replicas
    };
    let clusters = cfg.schedule.is_some() && cluster_replicas >= 2 && (!geometry || cfg.scaling.cluster_replicas > 0);
    let mut cols = vec!["eps", "mu"];
    if geometry {
        cols.extend(["measure", "measure_stderr", "hits", "samples", "ratio_to_half"]);
    }
    if clusters {
        cols.extend(["not_upsilon", "not_upsilon_stderr", "replicas", "bound", "within_bound"]);
    }
    let mut table = ResultTable::new(&cols);
    let kind_name = if geometry { "geometry-scaling" } else { "clusters" };
    provenance(&mut table, kind_name, config_text, cfg.master_seed);

    let mut measures = Vec::new();
    if geometry {
        let regime = scaling_regime::<D>(cfg.scaling.theta, recollision_kind(&cfg.scaling.recollision));
        table.meta("theta", cfg.scaling.theta);
        table.meta("recollision", &cfg.scaling.recollision);
        for (ei, &eps) in eps_list.iter().enumerate() {
            measures.push(estimate_recollision_measure(
                eps,
                &regime,
                cfg.scaling.samples,
                sweep_seed(cfg.master_seed, ei),
                exec,
            ));
        }
        let fit = fit_exponent(
            &eps_list,
            &measures.iter().map(|m| m.value).collect::<Vec<_>>(),
            &measures.iter().map(|m| m.stderr).collect::<Vec<_>>(),
        );
        table.meta("exponent", fit.exponent);
        table.meta("exponent_ci", format!("[{}, {}]", fit.ci_low, fit.ci_high));
        table.meta("underpowered", fit.underpowered);
    }

    let schedule = cfg.schedule.as_ref().map(|s| s.build()).transpose()?;
    for (ei, &eps) in eps_list.iter().enumerate() {
        let params = gas_params::<D>(cfg, eps)?;
        let mut row: Vec<Cell> = vec![eps.into(), params.mu.into()];
        if geometry {
            let m = &measures[ei];
            // Ratio to the entry at eps / 2, when the sweep has one.
            let half = eps_list
                .iter()
                .position(|e| (e * 2.0 - eps).abs() < 1e-12 * eps)
                .map(|j| m.value / measures[j].value)
                .unwrap_or(f64::NAN);
            row.extend([m.value.into(), m.stderr.into(), m.hits.into(), m.samples.into(), half.into()]);
        }
        if clusters {
            let s = schedule.as_ref().expect("checked");
            let seed = sweep_seed(cfg.master_seed, 100 + ei);
            let opts = SamplerOptions::default();
            let theta = s.theta_f64();
            let per = map_range(exec, cluster_replicas, |r| -> Result<bool, HarnessError> {
                let mut rng = stream_rng(seed, r as u64);
                let c = sample_with(&params, &opts, &mut rng)?;
                let (_, log, _) = evolve_with(&c, theta, SimOptions::default())?;
                Ok(!upsilon_membership(&log, s, s.gamma))
            });
            let ok: Vec<bool> = per.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
            check_faults(per.len() - ok.len(), cluster_replicas)?;
            let n = ok.len() as f64;
            let p = ok.iter().filter(|b| **b).count() as f64 / n;
            let bound = upsilon_complement_bound(D, s, params.mu);
            row.extend([
                p.into(),
                (p * (1.0 - p) / n).sqrt().into(),
                ok.len().into(),
                bound.into(),
                (p <= bound).into(),
            ]);
        }
        table.push(row);
    }
    Ok(table)
}

/// Exact counting identities and the tree-graph inequality.
pub fn run_trees<const D: usize>(
    cfg: &ExperimentConfig,
    config_text: &str,
    exec: Execution,
) -> Result<ResultTable, HarnessError> {
    let t = &cfg.trees;
    let mut table = ResultTable::new(&["check", "n", "m", "expected", "observed", "ok"]);
    provenance(&mut table, "trees", config_text, cfg.master_seed);
    for n in 2..=t.n_max {
        let cayley = count_labeled_trees(n)?;
        let mut sum = 0u128;
        for ds in tree_degree_sequences(n) {
            sum += count_trees_with_degrees(&ds)?;
        }
        table.push(vec!["degree-sum".into(), n.into(), 0u32.into(), cayley.into(), sum.into(), (cayley == sum).into()]);
    }
    for n in 1..=t.nm_max {
        for m in 0..=t.nm_max - n {
            let closed = count_collision_trees(n, m)?;
            let enumerated = CollisionTree::enumerate(n as usize, m as usize).len() as u128;
            table.push(vec![
                "collision-trees".into(),
                n.into(),
                m.into(),
                closed.into(),
                enumerated.into(),
                (closed == enumerated).into(),
            ]);
        }
    }
    if t.penrose_samples > 0 {
        let bad = penrose_sweep::<D>(t.penrose_samples, &[2, 3, 4, 5, 6], &[0.05, 0.1, 0.2], cfg.master_seed, exec)?;
        table.push(vec![
            "penrose-violations".into(),
            6u32.into(),
            0u32.into(),
            0u128.into(),
            (bad as u128).into(),
            (bad == 0).into(),
        ]);
    }
    let close = PointSet::new(vec![VecD::<D>::zero(); 3], 0.1)?;
    let r = penrose_check(&close)?;
    table.push(vec![
        "penrose-triangle".into(),
        3u32.into(),
        0u32.into(),
        format!("|phi|=2<={}", 3).into(),
        format!("|phi|={}<={}", r.phi.abs(), r.tree_bound).into(),
        (r.phi.abs() == 2.0 && r.tree_bound == 3.0).into(),
    ]);
    Ok(table)
}

/// Equilibrium draw of replica `replica` at the first `eps` of the sweep.
pub fn sample_snapshot<const D: usize>(cfg: &ExperimentConfig, replica: u64) -> Result<Snapshot<D>, HarnessError> {
    let eps = cfg.gas()?.eps[0];
    let params = gas_params::<D>(cfg, eps)?;
    let mut rng = stream_rng(sweep_seed(cfg.master_seed, 0), replica);
    let config = sample_with(&params, &SamplerOptions::default(), &mut rng)?;
    Ok(Snapshot {
        config,
        time: 0.0,
        records: vec![],
    })
}

/// [`sample_snapshot`] evolved to `t`, with its collision records.
pub fn evolve_snapshot<const D: usize>(cfg: &ExperimentConfig, replica: u64, t: f64) -> Result<Snapshot<D>, HarnessError> {
    let s = sample_snapshot::<D>(cfg, replica)?;
    let (config, log) = evolve(&s.config, t)?;
    Ok(Snapshot {
        config,
        time: t,
        records: log.records,
    })
}
