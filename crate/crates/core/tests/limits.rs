//! Limit behaviour checked beyond the acceptance grids, and the two-atom
//! misspecification example against hand-derived rationals.

use sse_core::analysis::misspec_detector;
use sse_core::corpus;
use sse_core::equilibrium::{cost_sweep, ExtendedGame, SolveOptions};
use sse_core::{matching_pennies, MixedProfile, PolicyKind, Prior};

#[test]
fn pennies_equilibrium_approaches_nash_on_finer_grid() {
    let ext = ExtendedGame::uniform(matching_pennies(4.0, 1.0), 0.005).unwrap();
    let grid = [0.005, 0.002, 0.001, 0.0005, 0.0002];
    let pts = cost_sweep(&ext, &grid, PolicyKind::Optimal, &SolveOptions::default(), true).unwrap();
    let nash = MixedProfile::new(vec![vec![0.5, 0.5], vec![0.2, 0.8]]);
    let dist: Vec<f64> = pts.iter().map(|p| p.result.sigma.distance(&nash)).collect();
    assert!(pts.iter().all(|p| p.result.converged()));
    assert!(dist.windows(2).all(|w| w[1] <= w[0]), "{dist:?}");
    assert!(dist[dist.len() - 1] < 0.05, "{dist:?}");
}

/// Stop value of the row player at a finite-support belief.
fn stop_value(atoms: &[Vec<f64>], weights: &[f64]) -> f64 {
    let mean: Vec<f64> = (0..3).map(|y| atoms.iter().zip(weights).map(|(a, w)| a[y] * w).sum()).collect();
    mean[0].max(mean[1])
}

#[test]
fn two_atom_example_rationals() {
    let (game, prior) = corpus::misspec_example();
    let Prior::Finite { atoms, weights } = prior.clone() else { panic!("finite prior expected") };

    let v = stop_value(&atoms, &weights);
    let mut after = 0.0;
    let mut after_a = 0.0;
    for y in 0..3 {
        let p: f64 = atoms.iter().zip(&weights).map(|(a, w)| a[y] * w).sum();
        let post: Vec<f64> = atoms.iter().zip(&weights).map(|(a, w)| a[y] * w / p).collect();
        let vy = stop_value(&atoms, &post);
        if y == 0 {
            after_a = vy;
        }
        after += p * vy;
    }
    let full_info: f64 = atoms.iter().zip(&weights).map(|(a, w)| w * a[0].max(a[1])).sum();
    assert!((v - 1.0 / 3.0).abs() < 1e-15);
    assert!((after_a - 5.0 / 12.0).abs() < 1e-15);
    assert!((after - 7.0 / 18.0).abs() < 1e-15);
    assert!((full_info - v - 1.0 / 6.0).abs() < 1e-15);

    let truth = [0.0, 0.0, 1.0];
    let r = misspec_detector(&game, 0, &prior, 0.2, &truth, 10).unwrap();
    assert!((r.gain_trace[0] - 1.0 / 18.0).abs() < 1e-15);
    // Observing only c never moves the belief, so the gain is the same forever.
    let r = misspec_detector(&game, 0, &prior, 0.05, &truth, 10).unwrap();
    assert_eq!((r.never_stop_mass, r.exact), (1.0, true));
    for c in [0.2, 0.4] {
        let r = misspec_detector(&game, 0, &prior, c, &truth, 10).unwrap();
        assert_eq!((r.never_stop_mass, r.stopped_mass, r.exact), (0.0, 1.0, true), "c={c}");
    }
}
