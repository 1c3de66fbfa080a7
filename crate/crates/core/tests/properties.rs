use proptest::prelude::*;
use spatial_bd::certificate::{u_theta, u_theta_increment};
use spatial_bd::dynamics::{ModelSpec, Simulation};
use spatial_bd::geometry::{PointId, Torus, TorusConfiguration};
use spatial_bd::kernels::Kernel;
use spatial_bd::rng;
use spatial_bd::statistics::{factorial_from_power, power_from_factorial};

#[derive(Debug, Clone)]
enum Op {
    Insert(f64, f64),
    Remove(usize),
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![
            (-5.0..15.0f64, -5.0..15.0f64).prop_map(|(x, y)| Op::Insert(x, y)),
            (0..64usize).prop_map(Op::Remove),
        ],
        1..120,
    )
}

proptest! {
    #[test]
    fn index_survives_insert_remove(ops in ops()) {
        let torus = Torus::with_cell_size(10.0, 2, 1.3).unwrap();
        let mut cfg = TorusConfiguration::new(torus);
        let mut live: Vec<PointId> = Vec::new();
        for op in ops {
            match op {
                Op::Insert(x, y) => {
                    let mut p = [x, y];
                    torus.wrap(&mut p);
                    live.push(cfg.insert(&p).unwrap());
                }
                Op::Remove(k) if !live.is_empty() => {
                    let id = live.remove(k % live.len());
                    prop_assert!(cfg.remove(id).is_some());
                    prop_assert!(cfg.position(id).is_none());
                }
                Op::Remove(_) => {}
            }
            prop_assert!(cfg.index_consistent());
            prop_assert_eq!(cfg.len(), live.len());
        }
    }

    #[test]
    fn neighbors_match_brute_force(
        pts in prop::collection::vec((0.0..10.0f64, 0.0..10.0f64), 0..60),
        q in (0.0..10.0f64, 0.0..10.0f64),
        radius in 0.1..4.9f64,
    ) {
        let torus = Torus::with_cell_size(10.0, 2, 1.0).unwrap();
        let cfg = TorusConfiguration::from_points(torus, pts.iter().map(|(x, y)| [*x, *y]).collect::<Vec<_>>().iter().map(|p| &p[..])).unwrap();
        let x = [q.0, q.1];
        let mut got: Vec<usize> = cfg.neighbors_within(&x, radius).into_iter().map(|(s, _)| s).collect();
        got.sort();
        let want: Vec<usize> = (0..cfg.len()).filter(|&s| torus.periodic_distance(&x, cfg.point_at(s)) <= radius).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn periodic_distance_is_a_metric(
        a in prop::collection::vec(-20.0..20.0f64, 3),
        b in prop::collection::vec(-20.0..20.0f64, 3),
        c in prop::collection::vec(-20.0..20.0f64, 3),
    ) {
        let t = Torus::new(7.0, 3).unwrap();
        let (ab, ba) = (t.periodic_distance(&a, &b), t.periodic_distance(&b, &a));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(t.periodic_distance(&a, &a) < 1e-12);
        prop_assert!(ab <= t.periodic_distance(&a, &c) + t.periodic_distance(&c, &b) + 1e-12);
        prop_assert!(ab <= 3f64.sqrt() * 3.5 + 1e-12);
    }

    #[test]
    fn mass_scales_linearly(alpha in 0.01..50.0f64, w in 0.1..5.0f64, s in 0.1..3.0f64, d in 1usize..4) {
        for k in [Kernel::gaussian(w, s, d).unwrap(), Kernel::triangular(w, s, d).unwrap(), Kernel::exponential(w, s, d).unwrap()] {
            let scaled = k.scaled(alpha).unwrap();
            prop_assert!((scaled.mass() - alpha * k.mass()).abs() <= 1e-12 * alpha * k.mass());
            prop_assert!((scaled.sup_norm() - alpha * k.sup_norm()).abs() <= 1e-12 * alpha * k.sup_norm());
        }
    }

    #[test]
    fn u_theta_is_order_free_and_telescopes(
        pts in prop::collection::vec((0.0..4.0f64, 0.0..4.0f64), 2..25),
        theta in 0.0..2.0f64,
        shift in 0usize..25,
    ) {
        let ap = Kernel::gaussian(1.0, 0.8, 2).unwrap();
        let am = Kernel::triangular(1.5, 1.0, 2).unwrap();
        let pts: Vec<Vec<f64>> = pts.into_iter().map(|(x, y)| vec![x, y]).collect();
        let u = u_theta(&pts, &ap, &am, 1.0, theta);
        let mut rotated = pts.clone();
        rotated.rotate_left(shift % pts.len());
        prop_assert!((u - u_theta(&rotated, &ap, &am, 1.0, theta)).abs() <= 1e-10 * (1.0 + u.abs()));
        let sum: f64 = (0..rotated.len()).map(|k| u_theta_increment(&rotated[k], &rotated[..k], &ap, &am, 1.0, theta)).sum();
        prop_assert!((u - sum).abs() <= 1e-10 * (1.0 + u.abs()));
    }

    #[test]
    fn stirling_conversions_invert(f in prop::collection::vec(0.0..1e3f64, 1..8)) {
        let back = factorial_from_power(&power_from_factorial(&f));
        for (a, b) in back.iter().zip(&f) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()) * 10f64.powi(f.len() as i32));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn death_rate_caches_match_recomputation(seed in 0u64..1000, steps in 1usize..800) {
        let torus = Torus::for_interaction(8.0, 2, Some(1.2)).unwrap();
        let model = ModelSpec::BolkerPacala {
            dispersal: Kernel::exponential(1.2, 0.4, 2).unwrap(),
            competition: Some(Kernel::triangular(0.7, 1.2, 2).unwrap()),
            mortality: 0.3,
        };
        let mut r = rng::stream(seed, 0);
        let init = spatial_bd::geometry::sample_poisson(torus, 1.0, &mut r).unwrap();
        let mut sim = Simulation::new(model, init, r).unwrap();
        for _ in 0..steps {
            if sim.step().unwrap().is_none() {
                break;
            }
        }
        prop_assert!(sim.audit().unwrap() < 1e-9);
        prop_assert!(sim.configuration().index_consistent());
    }
}
