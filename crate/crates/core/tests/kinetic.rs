use bglab_core::fields::{catalog, TestFunction};
use bglab_core::kinetic::{
    covariance_prediction, solve_tree_mc, DensityField, KineticError, KineticSolver,
};
use bglab_core::par::Execution;
use bglab_core::rng::stream_rng;
use bglab_core::sampler::PolarGaussian;
use bglab_core::torus::{unit_sphere_area, VecD};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use std::sync::OnceLock;

fn spatial() -> &'static KineticSolver<3> {
    static S: OnceLock<KineticSolver<3>> = OnceLock::new();
    S.get_or_init(|| KineticSolver::<3>::new(8, 4, 6).unwrap())
}

fn homogeneous() -> &'static KineticSolver<3> {
    static S: OnceLock<KineticSolver<3>> = OnceLock::new();
    S.get_or_init(|| KineticSolver::<3>::new(10, 6, 1).unwrap())
}

fn random_field<R: Rng>(s: &KineticSolver<3>, rng: &mut R) -> DensityField {
    let nv = s.grid.len();
    DensityField {
        values: DMatrix::from_fn(nv, s.nx, |_, _| rng.random::<f64>() - 0.5),
    }
}

#[test]
fn constants_are_annihilated() {
    let s = spatial();
    let g = s.constant(1.0);
    assert!(s.apply_l(&g).values.amax() < 1e-12);
}

#[test]
fn collision_invariants() {
    let s = spatial();
    for f in [
        catalog::velocity::<3>(0),
        catalog::velocity::<3>(1),
        catalog::velocity::<3>(2),
        catalog::energy::<3>(),
    ] {
        let g = s.field(&f).unwrap();
        assert!(s.norm(&s.apply_l(&g)) <= 1e-8, "{}", f.name());
    }
}

#[test]
fn collision_part_is_symmetric_and_transport_skew() {
    let s = spatial();
    let mut rng = stream_rng(11, 0);
    for _ in 0..5 {
        let g = random_field(s, &mut rng);
        let h = random_field(s, &mut rng);
        let c = s.inner(&s.apply_collision(&g), &h) - s.inner(&g, &s.apply_collision(&h));
        assert!(c.abs() <= 1e-8, "collision residual {c:e}");
        let t = s.inner(&s.apply_transport(&g), &h) + s.inner(&g, &s.apply_transport(&h));
        assert!(t.abs() <= 1e-8, "transport residual {t:e}");
    }
}

#[test]
fn largest_collision_eigenvalue_is_nonpositive() {
    assert!(homogeneous().max_collision_eigenvalue() <= 1e-10);
    assert!(spatial().max_collision_eigenvalue() <= 1e-10);
}

#[test]
fn constant_data_is_stationary() {
    let s = spatial();
    let g = s.solve_deterministic(&s.constant(1.0), 0.3, s.default_dt()).unwrap();
    assert!((g.values.add_scalar(-1.0)).amax() < 1e-12);
}

#[test]
fn taylor_residual_is_second_order() {
    let s = spatial();
    let g0 = s.field(&catalog::cos_x1_v1::<3>()).unwrap();
    let lg = s.apply_l(&g0);
    let residual = |dt: f64| {
        let g = s.solve_fixed(&g0, dt, dt).unwrap();
        let lin = DensityField {
            values: &g0.values + &lg.values * dt,
        };
        s.norm(&g.sub(&lin))
    };
    let dt = 0.004;
    let ratio = residual(dt) / residual(dt / 2.0);
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn homogeneous_norm_does_not_increase() {
    let s = homogeneous();
    let mut g = s.field(&catalog::shear::<3>()).unwrap();
    let mut prev = s.norm(&g);
    for _ in 0..20 {
        g = s.solve_auto(&g, 0.1, 6).unwrap();
        let n = s.norm(&g);
        assert!(n <= prev + 1e-12);
        prev = n;
    }
    assert!(prev < 0.1);
}

#[test]
fn conserved_projections() {
    let s = spatial();
    let g0 = TestFunction::<3>::new("mixed", true, |x, v| {
        (1.0 + (std::f64::consts::TAU * x.0[0]).sin()) * (1.0 + v.0[0] + 0.3 * v.norm2() + v.0[1] * v.0[2])
    })
    .unwrap();
    let g0 = s.field(&g0).unwrap();
    let g1 = s.solve_auto(&g0, 0.5, 6).unwrap();
    for f in [
        catalog::constant::<3>(1.0),
        catalog::velocity::<3>(0),
        catalog::velocity::<3>(1),
        catalog::energy::<3>(),
    ] {
        let p = s.field(&f).unwrap();
        let d = s.inner(&p, &g1) - s.inner(&p, &g0);
        assert!(d.abs() <= 1e-8, "{}: {d:e}", f.name());
    }
}

#[test]
fn oversized_steps_are_rejected() {
    let s = spatial();
    let g0 = s.field(&catalog::cos_x1_v1::<3>()).unwrap();
    let bound = s.stability_bound();
    assert!(matches!(
        s.solve_fixed(&g0, 1.0, 2.0 * bound),
        Err(KineticError::Unstable { .. })
    ));
    assert!(matches!(
        s.solve_deterministic(&g0, 1.0, bound),
        Err(KineticError::StepDoubling { .. })
    ));
}

// Independent estimate of <v1 v2, C v1 v2>_M by sampling (v, w, ω) directly.
#[test]
fn shear_entry_matches_direct_sampling() {
    let s = homogeneous();
    let g = s.field(&catalog::shear::<3>()).unwrap();
    let galerkin = s.inner(&g, &s.apply_collision(&g));
    let psi = |v: &VecD<3>| v.0[0] * v.0[1];
    let mut rng = stream_rng(5, 0);
    let mut pg = PolarGaussian::default();
    let n = 400_000;
    let mut acc = Vec::with_capacity(n);
    for _ in 0..n {
        let v: VecD<3> = pg.maxwellian(&mut rng);
        let w: VecD<3> = pg.maxwellian(&mut rng);
        let mut om = pg.maxwellian::<3, _>(&mut rng);
        om = om * (1.0 / om.norm());
        let c = (v - w).dot(&om);
        if c <= 0.0 {
            acc.push(0.0);
            continue;
        }
        let vp = v - om * c;
        let wp = w + om * c;
        let d = psi(&vp) + psi(&wp) - psi(&v) - psi(&w);
        acc.push(-0.25 * unit_sphere_area(3) * c * d * d);
    }
    let m = bglab_core::stats::Moments::from_slice(&acc);
    assert!(
        (m.mean() - galerkin).abs() < 4.0 * m.stderr(),
        "{} vs {} +- {}",
        galerkin,
        m.mean(),
        m.stderr()
    );
}

#[test]
fn tree_mc_free_transport_term() {
    // ∫ M cos(2π(x - vθ)) v1 cos(2πx) v1 = (1 - a²) e^{-a²/2} / 2, a = 2πθ.
    let theta = 0.1;
    let a = std::f64::consts::TAU * theta;
    let exact = 0.5 * (1.0 - a * a) * (-0.5 * a * a).exp();
    let f = catalog::cos_x1_v1::<3>();
    let e = solve_tree_mc(&f, &f, theta, 0, 200_000, 3, Execution::Parallel).unwrap();
    assert!((e.value - exact).abs() < 4.0 * e.stderr, "{} +- {} vs {exact}", e.value, e.stderr);
    assert!(!e.blow_up);
}

#[test]
fn constant_data_cancels_order_by_order() {
    let one = catalog::constant::<3>(1.0);
    let h = catalog::energy::<3>();
    let e = solve_tree_mc(&one, &h, 0.3, 3, 2_000, 9, Execution::Parallel).unwrap();
    for (m, (mean, err)) in e.per_order.iter().enumerate().skip(1) {
        assert!(mean.abs() < 1e-9 && *err < 1e-9, "order {m}: {mean} +- {err}");
    }
    assert!((e.value - e.per_order[0].0).abs() < 1e-9);
}

#[test]
fn tree_mc_matches_deterministic_for_momentum() {
    let f = catalog::v1::<3>();
    let s = homogeneous();
    let det = covariance_prediction(s, &f, &f, 0.3).unwrap();
    let e = solve_tree_mc(&f, &f, 0.3, 2, 100_000, 21, Execution::Parallel).unwrap();
    assert!((e.value - det).abs() <= 3.0 * e.stderr + 1e-4, "{} +- {} vs {det}", e.value, e.stderr);
}

#[test]
fn prediction_at_zero_and_orthogonality() {
    let s = homogeneous();
    let heat = catalog::heat_flux::<3>();
    let p = covariance_prediction(s, &heat, &heat, 0.0).unwrap();
    // E[v1² (|v|² - 5)²] = 10 for the standard Gaussian in d = 3.
    assert!((p - 10.0).abs() < 1e-10);
    let v1 = catalog::v1::<3>();
    let en = catalog::energy::<3>();
    assert!(covariance_prediction(s, &v1, &en, 0.0).unwrap().abs() < 1e-12);
    let c = catalog::constant::<3>(1.0);
    assert!(matches!(
        covariance_prediction(s, &c, &v1, 0.1),
        Err(KineticError::NotMeanFree { .. })
    ));
}

#[test]
fn foreign_spatial_dependence_is_rejected() {
    let f = TestFunction::<3>::new("x2", true, |x, _| (std::f64::consts::TAU * x.0[1]).cos()).unwrap();
    assert!(matches!(spatial().field(&f), Err(KineticError::SpatialDependence(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn collision_form_is_symmetric_nonpositive(seed in any::<u64>()) {
        let s = spatial();
        let mut rng = stream_rng(seed, 1);
        let g = random_field(s, &mut rng);
        let h = random_field(s, &mut rng);
        let r = s.inner(&s.apply_collision(&g), &h) - s.inner(&g, &s.apply_collision(&h));
        prop_assert!(r.abs() <= 1e-8);
        prop_assert!(s.inner(&g, &s.apply_collision(&g)) <= 1e-10);
    }
}
