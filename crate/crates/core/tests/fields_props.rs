use std::sync::Arc;

use conflow::fields::{integrate_flow_map, integrate_trajectories, Grid, IntegrationOptions, NoisePath, SampledField, ScalarField, VectorField};
use conflow::geometry::jacobian_matrix;
use conflow::Point;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_jets_track_analytic_jets(k in 0.5f64..2.0, c in -1.0f64..1.0, x in 0.1f64..0.9, y in 0.1f64..0.9) {
        let src = format!("sin({k}*s0 + {c}) * cos(s1)");
        let exact = ScalarField::expr(&src, 1).unwrap();
        let grid = Grid::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![41, 41]).unwrap();
        let sampled = SampledField::from_fn(grid, 4, |p| exact.eval(p).unwrap()).unwrap();
        let a = exact.jet(&[x, y]).unwrap();
        let b = sampled.jet(&[x, y]).unwrap();
        prop_assert!((a.v - b.v).abs() < 1e-6);
        for i in 0..2 {
            prop_assert!((a.g[i] - b.g[i]).abs() < 1e-5);
        }
        prop_assert!(a.h.max_abs_diff(&b.h) < 1e-4);
    }

    #[test]
    fn uniform_velocity_is_translated_exactly(vx in -1.0f64..1.0, vy in -1.0f64..1.0, t in 0.0f64..1.0) {
        let u = VectorField::exprs(&[&format!("{vx}"), &format!("{vy}")], 2).unwrap();
        let grid = Grid::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![5, 5]).unwrap();
        let flow = integrate_flow_map(&u, &grid, 0.0, 1.0, 10).unwrap();
        let p = Point::new(vec![t, 0.4, 0.6]).unwrap();
        let x = flow.eval(&p);
        prop_assert!((x[1] - 0.4 - vx * t).abs() < 1e-10);
        prop_assert!((x[2] - 0.6 - vy * t).abs() < 1e-10);
        prop_assert!((jacobian_matrix(&flow, &p).unwrap().det() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn noise_paths_are_reproducible(seed in any::<u64>()) {
        let grid = Grid::new(vec![0.0], vec![1.0], vec![6]).unwrap();
        let a = NoisePath::new(seed, 0.3, &grid, 0.0, 1.0, 20).unwrap();
        let b = NoisePath::new(seed, 0.3, &grid, 0.0, 1.0, 20).unwrap();
        for node in 0..6 {
            prop_assert_eq!(a.eval_node(node, 0.37), b.eval_node(node, 0.37));
            prop_assert_eq!(a.eval_node(node, 0.0), vec![0.0]);
        }
    }
}

#[test]
fn zero_noise_matches_deterministic_trajectories() {
    let u = VectorField::exprs(&["sin(x) + t"], 1).unwrap();
    let grid = Grid::new(vec![0.0], vec![1.0], vec![7]).unwrap();
    let quiet = NoisePath::new(3, 0.0, &grid, 0.0, 1.0, 16).unwrap();
    let opts = IntegrationOptions::default();
    let a = integrate_trajectories(&u, None, &grid, 0.0, 1.0, 16, &opts).unwrap();
    let b = integrate_trajectories(&u, Some(&quiet), &grid, 0.0, 1.0, 16, &opts).unwrap();
    for node in 0..7 {
        assert_eq!(a.position(16, node), b.position(16, node));
    }
    let flow = Arc::new(a).flow_map();
    assert!(flow.time_identity());
}
