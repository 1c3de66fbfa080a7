use rayon::prelude::*;
use spatial_bd::dynamics::{run, ModelSpec, RunOptions};
use spatial_bd::geometry::{sample_poisson, Snapshot, Torus, TorusConfiguration, Window};
use spatial_bd::kernels::{ImmigrationField, Kernel};
use spatial_bd::rng;
use spatial_bd::statistics::{density, factorial_moments, moment_report, pair_correlation, RadialBins};

fn poisson(torus: Torus, reps: u64, seed: u64) -> Vec<Snapshot> {
    (0..reps)
        .map(|i| sample_poisson(torus, 1.0, &mut rng::stream(seed, i)).unwrap().snapshot(0.0))
        .collect()
}

#[test]
fn standard_errors_shrink_like_inverse_root() {
    let torus = Torus::new(5.0, 2).unwrap();
    let pts: Vec<(f64, f64)> = [50u64, 100, 200, 400, 800, 1600]
        .iter()
        .map(|&k| ((k as f64).ln(), density(&poisson(torus, k, k), &torus).unwrap().se.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() < 0.1, "slope {slope}");
}

#[test]
fn competition_suppresses_close_pairs() {
    let torus = Torus::for_interaction(12.0, 2, Some(1.0)).unwrap();
    let model = ModelSpec::BolkerPacala {
        dispersal: Kernel::gaussian(1.0, 1.0, 2).unwrap(),
        competition: Some(Kernel::triangular(0.5, 1.0, 2).unwrap()),
        mortality: 0.1,
    };
    let mut opts = RunOptions::new(15.0);
    opts.snapshot_times = vec![15.0];
    let snaps: Vec<Snapshot> = (0..24u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(13, i);
            let init = sample_poisson(torus, 0.5, &mut r).unwrap();
            run(&model, init, &opts, r).unwrap().snapshots.remove(0)
        })
        .collect();
    let g = pair_correlation(&snaps, &torus, &RadialBins::uniform(1.0, 4).unwrap()).unwrap();
    let first = g.bins[0];
    assert!(first.g + 3.0 * first.se < 1.0, "{first:?}");
}

#[test]
fn migration_moments_plateau() {
    let torus = Torus::for_interaction(10.0, 2, Some(1.0)).unwrap();
    let model = ModelSpec::Migration {
        immigration: ImmigrationField::constant(2.0).unwrap(),
        competition: Some(Kernel::triangular(1.0, 1.0, 2).unwrap()),
        mortality: 0.2,
    };
    let mut opts = RunOptions::new(12.0);
    opts.snapshot_times = vec![6.0, 12.0];
    let traces: Vec<_> = (0..100u64)
        .into_par_iter()
        .map(|i| run(&model, TorusConfiguration::new(torus), &opts, rng::stream(17, i)).unwrap())
        .collect();
    let w = Window::cube(0.0, 3.0, 2).unwrap();
    let at = |j: usize| -> Vec<Snapshot> { traces.iter().map(|t| t.snapshots[j].clone()).collect() };
    let (a, b) = (factorial_moments(&at(0), &w, 3).unwrap(), factorial_moments(&at(1), &w, 3).unwrap());
    for (x, y) in a.iter().zip(&b) {
        let se = (x.se * x.se + y.se * y.se).sqrt();
        assert!((x.value - y.value).abs() <= 3.0 * se, "{x:?} vs {y:?}");
    }
    let report = moment_report(&at(1), &torus, &w, 3, None).unwrap();
    let fit = report.envelope.unwrap();
    // sub-Poissonian: the fitted activity stays below the Poisson one at the
    // observed density
    assert!(fit.theta < report.density.value.ln() + 0.1, "{fit:?}");
    assert!(fit.exponential);
}
