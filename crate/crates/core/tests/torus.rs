use bglab_core::torus::*;
use proptest::prelude::*;

fn brute_minimal_image(a: &VecD<3>, b: &VecD<3>) -> VecD<3> {
    let mut best = VecD([f64::INFINITY; 3]);
    for i in -1..=1 {
        for j in -1..=1 {
            for k in -1..=1 {
                let c = (*b - *a).shifted(&[i, j, k]);
                if c.norm() < best.norm() {
                    best = c;
                }
            }
        }
    }
    best
}

// Dense stepping oracle: first step at which the minimal-image distance has
// dropped below eps.
fn fine_step_contact(z1: &ParticleState<3>, z2: &ParticleState<3>, eps: f64, horizon: f64) -> Option<f64> {
    let dt = 1e-6;
    let steps = (horizon / dt) as usize;
    for n in 1..=steps {
        let t = n as f64 * dt;
        let x1 = (z1.x + z1.v * t).wrapped();
        let x2 = (z2.x + z2.v * t).wrapped();
        if torus_distance(&x1, &x2) <= eps {
            return Some(t);
        }
    }
    None
}

#[test]
fn wrap_examples() {
    let a = VecD([0.95, 0.5]);
    let b = VecD([0.05, 0.5]);
    let d = minimal_image(&a, &b);
    assert!((d.0[0] - 0.1).abs() < 1e-12 && d.0[1] == 0.0);
    assert_eq!(minimal_image(&a, &a), VecD::zero());
}

#[test]
fn head_on_contact() {
    let z1 = ParticleState::new([0.4, 0.5, 0.5], [1.0, 0.0, 0.0]);
    let z2 = ParticleState::new([0.6, 0.5, 0.5], [-1.0, 0.0, 0.0]);
    let ev = sphere_collision_time(&z1, &z2, 0.1, 1.0).unwrap().event.unwrap();
    assert!((ev.time - 0.05).abs() < 1e-12);
    assert!((ev.omega - VecD([-1.0, 0.0, 0.0])).max_abs() < 1e-12);
    let same = ParticleState::new([0.6, 0.5, 0.5], [1.0, 0.0, 0.0]);
    assert!(sphere_collision_time(&z1, &same, 0.1, 10.0).unwrap().event.is_none());
}

#[test]
fn wrap_around_contact_matches_fine_steps() {
    // Moving apart from the nearest image; the contact happens through the boundary.
    let z1 = ParticleState::new([0.45, 0.5, 0.5], [-1.3, 0.02, 0.0]);
    let z2 = ParticleState::new([0.55, 0.52, 0.5], [1.1, 0.0, 0.01]);
    let eps = 0.06;
    let ev = sphere_collision_time(&z1, &z2, eps, 1.0).unwrap().event.unwrap();
    assert!(ev.shift.iter().any(|&s| s != 0));
    let oracle = fine_step_contact(&z1, &z2, eps, 1.0).unwrap();
    assert!((ev.time - oracle).abs() <= 1e-6, "{} vs {oracle}", ev.time);
}

#[test]
fn reflect_examples() {
    let (a, b) = specular_reflect(&VecD([1.0, 0.0, 0.0]), &VecD([-1.0, 0.0, 0.0]), &VecD([1.0, 0.0, 0.0])).unwrap();
    assert_eq!((a, b), (VecD([-1.0, 0.0, 0.0]), VecD([1.0, 0.0, 0.0])));
    let vi = VecD([1.0, 2.0, 0.0]);
    let vj = VecD([0.0, 2.0, 0.0]);
    let (a, b) = specular_reflect(&vi, &vj, &VecD([0.0, 0.0, 1.0])).unwrap();
    assert_eq!((a, b), (vi, vj));
    assert!(specular_reflect(&vi, &vj, &VecD([0.0, 0.0, 1.1])).is_err());
}

#[test]
fn ball_and_sphere_constants() {
    assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-12);
    assert!((unit_ball_volume(3) - 4.0 / 3.0 * std::f64::consts::PI).abs() < 1e-12);
    assert!((unit_sphere_area(3) - 4.0 * std::f64::consts::PI).abs() < 1e-12);
}

fn unit(v: [f64; 3]) -> VecD<3> {
    let v = VecD(v);
    v * (1.0 / v.norm())
}

proptest! {
    #[test]
    fn minimal_image_is_the_lattice_argmin(a in prop::array::uniform3(0.0f64..1.0), b in prop::array::uniform3(0.0f64..1.0)) {
        let (a, b) = (VecD(a), VecD(b));
        let d = minimal_image(&a, &b);
        let brute = brute_minimal_image(&a, &b);
        prop_assert!((d.norm() - brute.norm()).abs() < 1e-14);
        prop_assert!(d.norm() <= 3f64.sqrt() / 2.0 + 1e-14);
    }

    #[test]
    fn reflection_conserves_and_inverts(
        vi in prop::array::uniform3(-5.0f64..5.0),
        vj in prop::array::uniform3(-5.0f64..5.0),
        w in prop::array::uniform3(-1.0f64..1.0),
    ) {
        prop_assume!(VecD(w).norm() > 1e-3);
        let om = unit(w);
        let (vi, vj) = (VecD(vi), VecD(vj));
        let (a, b) = specular_reflect(&vi, &vj, &om).unwrap();
        let scale = 1.0 + vi.norm2() + vj.norm2();
        prop_assert!(((a + b) - (vi + vj)).max_abs() <= 1e-12 * scale);
        prop_assert!((a.norm2() + b.norm2() - vi.norm2() - vj.norm2()).abs() <= 1e-12 * scale);
        prop_assert!(((a - b).dot(&om) + (vi - vj).dot(&om)).abs() <= 1e-12 * scale);
        let (c, e) = specular_reflect(&a, &b, &om).unwrap();
        prop_assert!((c - vi).max_abs() <= 1e-12 * scale && (e - vj).max_abs() <= 1e-12 * scale);
    }

    #[test]
    fn contacts_sit_at_distance_eps(
        x1 in prop::array::uniform3(0.0f64..1.0),
        x2 in prop::array::uniform3(0.0f64..1.0),
        v1 in prop::array::uniform3(-3.0f64..3.0),
        v2 in prop::array::uniform3(-3.0f64..3.0),
        eps in 0.01f64..0.2,
    ) {
        let z1 = ParticleState::new(x1, v1);
        let z2 = ParticleState::new(x2, v2);
        prop_assume!(torus_distance(&z1.x, &z2.x) > eps);
        let pred = sphere_collision_time(&z1, &z2, eps, 2.0).unwrap();
        if let Some(ev) = pred.event {
            prop_assert!(ev.time > 0.0 && ev.time <= 2.0);
            let a = (z1.x + z1.v * ev.time).wrapped();
            let b = (z2.x + z2.v * ev.time).wrapped();
            prop_assert!((torus_distance(&a, &b) - eps).abs() <= 1e-10);
            prop_assert!((ev.omega.norm() - 1.0).abs() <= 1e-12);
            // Approaching at contact.
            prop_assert!((z1.v - z2.v).dot(&ev.omega) < 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn contact_time_matches_fine_steps(
        x1 in prop::array::uniform3(0.0f64..1.0),
        x2 in prop::array::uniform3(0.0f64..1.0),
        v1 in prop::array::uniform3(-3.0f64..3.0),
        v2 in prop::array::uniform3(-3.0f64..3.0),
    ) {
        let eps = 0.1;
        let z1 = ParticleState::new(x1, v1);
        let z2 = ParticleState::new(x2, v2);
        prop_assume!(torus_distance(&z1.x, &z2.x) > eps);
        let ev = sphere_collision_time(&z1, &z2, eps, 0.5).unwrap();
        let oracle = fine_step_contact(&z1, &z2, eps, 0.5);
        match (ev.event, oracle) {
            (Some(e), Some(t)) => prop_assert!((e.time - t).abs() <= 1.01e-6, "{} vs {}", e.time, t),
            (None, None) => {}
            // A contact within one fine step of a grazing or the horizon.
            (a, b) => prop_assert!(ev.grazing || a.is_some_and(|e| e.time > 0.5 - 1e-6) || b.is_some_and(|t| t > 0.5 - 1e-6), "{a:?} vs {b:?}"),
        }
    }
}
