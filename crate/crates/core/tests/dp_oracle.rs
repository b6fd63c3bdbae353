//! Exact checks of the optimal queuing oracle on small grid-noise
//! instances against a brute-force expectimax over full noise histories.

mod common;

use aoi_control::queuing::{
    dp_oracle_build, expected_queue_cost, DpLimits, Greedy, NoiseGrid, QueuingPolicy, ZeroWait,
};
use common::{brute_force, close, scalar_instance as instance};

#[test]
fn dp_matches_brute_force_on_small_instances() {
    let grids = [
        NoiseGrid::two_atom(4.0),
        NoiseGrid::new(vec![-2.0, 0.0, 2.0], vec![0.25, 0.5, 0.25]).unwrap(),
        NoiseGrid::new(vec![-3.0, -0.5, 1.0, 2.5], vec![0.1, 0.4, 0.3, 0.2]).unwrap(),
    ];
    for grid in &grids {
        for horizon in 1..=5 {
            for &(a, lambda) in &[(1.5, 0.1), (1.5, 0.01), (0.8, 0.05), (-1.2, 1.0)] {
                let (model, weights, sol) = instance(a, horizon, lambda);
                let dp = dp_oracle_build(&model, &weights, &sol, grid, &DpLimits::default()).unwrap();
                let bf = brute_force(&model, &weights, grid);
                assert!(
                    close(dp.expected_cost(), bf, 1e-10),
                    "N={horizon} a={a} lambda={lambda} grid={:?}: dp {} vs brute force {bf}",
                    grid.atoms(),
                    dp.expected_cost()
                );
                let replay =
                    expected_queue_cost(&dp, &model, &weights, &sol, grid, &DpLimits::default()).unwrap();
                assert!(close(dp.expected_cost(), replay, 1e-10));
            }
        }
    }
}

#[test]
fn exact_ordering_dp_greedy_zero_wait() {
    let grid = NoiseGrid::two_atom(4.0);
    let limits = DpLimits::default();
    for horizon in 1..=6 {
        for &lambda in &[0.005, 0.01, 0.1, 1.0, 10.0] {
            let (model, weights, sol) = instance(1.5, horizon, lambda);
            let dp = dp_oracle_build(&model, &weights, &sol, &grid, &limits).unwrap();
            let greedy = Greedy::new(&model, &weights, &sol);
            let g = expected_queue_cost(&greedy, &model, &weights, &sol, &grid, &limits).unwrap();
            let z = expected_queue_cost(&ZeroWait, &model, &weights, &sol, &grid, &limits).unwrap();
            // same evaluator for all three, so no slack is needed
            let d = expected_queue_cost(&dp, &model, &weights, &sol, &grid, &limits).unwrap();
            assert_eq!(z, 0.0);
            assert!(d <= g, "N={horizon} lambda={lambda}: {d} > {g}");
            assert!(g <= z, "N={horizon} lambda={lambda}");
        }
    }
}

/// Expected χ differs from the expected queuing cost by a constant that
/// does not depend on the queuing policy, so monotonicity in the memory
/// bound is checked on the queuing cost.
#[test]
fn bounded_memory_cost_is_non_increasing_in_kbar() {
    let grids = [
        NoiseGrid::two_atom(4.0),
        NoiseGrid::new(vec![-2.0, 0.0, 2.0], vec![0.25, 0.5, 0.25]).unwrap(),
    ];
    let limits = DpLimits::default();
    for grid in &grids {
        for horizon in 2..=6 {
            for &lambda in &[0.01, 0.05, 0.1, 1.0] {
                let (model, weights, sol) = instance(1.5, horizon, lambda);
                let costs: Vec<f64> = (0..=horizon + 1)
                    .map(|kbar| {
                        let p = Greedy::new(&model, &weights, &sol).bounded(kbar);
                        expected_queue_cost(&p, &model, &weights, &sol, grid, &limits).unwrap()
                    })
                    .collect();
                for w in costs.windows(2) {
                    assert!(
                        w[1] <= w[0] + 1e-12,
                        "N={horizon} lambda={lambda} grid={:?}: {costs:?}",
                        grid.atoms()
                    );
                }
                let unbounded = Greedy::new(&model, &weights, &sol);
                let g = expected_queue_cost(&unbounded, &model, &weights, &sol, grid, &limits).unwrap();
                assert_eq!(*costs.last().unwrap(), g);
                assert_eq!(costs[0], 0.0);
            }
        }
    }
}

#[test]
fn dp_policy_is_admissible_on_every_reachable_state() {
    let (model, weights, sol) = instance(1.5, 6, 0.01);
    let grid = NoiseGrid::new(vec![-2.0, 0.0, 2.0], vec![0.25, 0.5, 0.25]).unwrap();
    let dp = dp_oracle_build(&model, &weights, &sol, &grid, &DpLimits::default()).unwrap();
    // expected_queue_cost rejects inadmissible ages along every path
    expected_queue_cost(&dp, &model, &weights, &sol, &grid, &DpLimits::default()).unwrap();
    assert_eq!(dp.name(), "dp-oracle");
}

#[test]
fn example_plant_small_horizon() {
    // example plant with N = 4 and two atoms at ±2
    let grid = NoiseGrid::new(vec![-2.0, 2.0], vec![0.5, 0.5]).unwrap();
    let limits = DpLimits::default();
    for lambda in [0.1, 0.01, 0.001] {
        let (model, weights, sol) = instance(1.5, 4, lambda);
        let dp = dp_oracle_build(&model, &weights, &sol, &grid, &limits).unwrap();
        let bf = brute_force(&model, &weights, &grid);
        assert!(close(dp.expected_cost(), bf, 1e-10));
        let d = expected_queue_cost(&dp, &model, &weights, &sol, &grid, &limits).unwrap();
        let g = expected_queue_cost(
            &Greedy::new(&model, &weights, &sol),
            &model,
            &weights,
            &sol,
            &grid,
            &limits,
        )
        .unwrap();
        assert!(d <= g && g <= 0.0, "lambda={lambda}");
    }
}
