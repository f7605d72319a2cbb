use super::*;
use crate::gp::rbf_kernel;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};
use std::collections::HashSet;

fn small_config(seed: u64) -> SuiteConfig {
    SuiteConfig {
        n_tuning: 3,
        n_test: 4,
        tuning_evals: 12,
        n_start: 5,
        grid_side: 8,
        seed,
        ..SuiteConfig::default()
    }
}

fn two_by_two(values: [f64; 4]) -> GridTask {
    GridTask::from_lattice("t", Lattice::square(2, [0.0, 0.0], [1.0, 1.0]), &values).unwrap()
}

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn lattice_points_are_row_major() {
    let lat = Lattice::square(4, [0.0, 0.0], [1.0, 1.0]);
    assert_eq!(lat.n_cells(), 16);
    assert_eq!(lat.point(0), [0.0, 0.0]);
    let p1 = lat.point(1);
    let p4 = lat.point(4);
    assert!(p1[0] > 0.0 && p1[1] == 0.0);
    assert!(p4[0] == 0.0 && p4[1] > 0.0);
}

#[test]
fn default_config_matches_benchmark_protocol() {
    let c = SuiteConfig::default();
    assert_eq!((c.n_tuning, c.n_test, c.tuning_evals, c.n_start, c.grid_side), (10, 100, 20, 10, 32));
    assert_eq!(c.prior, HyperPrior::SYNTHETIC);
    assert_eq!(c.noise_variance, 1e-4);
    assert!(c.validate().is_ok());
    assert!(SuiteConfig { tuning_evals: 65, grid_side: 8, ..c.clone() }.validate().is_err());
    assert!(SuiteConfig { grid_side: 0, ..c }.validate().is_err());
}

#[test]
fn gp_sample_on_single_point_has_prior_variance() {
    let theta = HyperParams::new(0.1, 2.0, 1e-4).unwrap();
    let grid = PointSet::from_points(2, &[vec![0.5, 0.5]]).unwrap();
    let n = 10_000;
    let xs: Vec<f64> = (0..n)
        .map(|s| sample_gp_on_grid(&theta, &grid, &mut seeding::stream(s, &[])).unwrap()[0])
        .collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((var / 2.0001 - 1.0).abs() < 0.05, "{var}");
}

#[test]
fn gp_sample_with_vanishing_variance_is_flat() {
    let theta = HyperParams::new(0.1, 1e-12, 0.0).unwrap();
    let lat = Lattice::square(6, [0.0, 0.0], [1.0, 1.0]);
    let grid = PointSet::from_flat(2, (0..36).flat_map(|c| lat.point(c)).collect()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = sample_gp_on_grid(&theta, &grid, &mut rng).unwrap();
    assert!(v.iter().all(|x| x.abs() < 1e-3));
}

#[test]
fn gp_sample_covariance_matches_kernel() {
    let theta = HyperParams::new(0.3, 1.5, 1e-4).unwrap();
    let grid = PointSet::from_points(2, &[vec![0.2, 0.2], vec![0.4, 0.3]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 20_000;
    let draws: Vec<Vec<f64>> = (0..n).map(|_| sample_gp_on_grid(&theta, &grid, &mut rng).unwrap()).collect();
    let cov = draws.iter().map(|d| d[0] * d[1]).sum::<f64>() / n as f64;
    let k = rbf_kernel(&[0.2, 0.1], &theta);
    // Standard error of a product moment of two unit-scale normals is below √(2·1.5²/n).
    let se = (2.0 * 1.5 * 1.5 / n as f64).sqrt();
    assert!((cov - k).abs() < 4.0 * se, "{cov} vs {k}");
}

#[test]
fn default_suite_has_expected_shape() {
    let suite = generate_suite(&SuiteConfig {
        n_test: 100,
        ..SuiteConfig::default()
    })
    .unwrap();
    assert_eq!(suite.tuning.len(), 10);
    assert_eq!(suite.test.len(), 100);
    for t in &suite.tuning {
        assert_eq!(t.start_indices().len(), 20);
        assert_eq!(t.len(), 1024);
    }
    assert!(suite.test.iter().all(|t| t.start_indices().len() == 10 && t.true_theta.is_some()));
    let ds = suite.tuning_datasets();
    assert!(ds.iter().all(|d| d.len() == 20));
}

#[test]
fn suite_without_test_tasks() {
    let suite = generate_suite(&SuiteConfig { n_test: 0, ..small_config(0) }).unwrap();
    assert!(suite.test.is_empty());
    assert_eq!(suite.tuning.len(), 3);
}

#[test]
fn suite_generation_is_deterministic() {
    let a = generate_suite(&small_config(7)).unwrap();
    let b = generate_suite(&small_config(7)).unwrap();
    assert_eq!(a, b);
    let c = generate_suite(&small_config(8)).unwrap();
    assert_ne!(a.test[0].values(), c.test[0].values());
}

#[test]
fn generated_indices_are_distinct() {
    let suite = generate_suite(&small_config(3)).unwrap();
    for t in suite.tuning.iter().chain(&suite.test) {
        let set: HashSet<_> = t.start_indices().iter().collect();
        assert_eq!(set.len(), t.start_indices().len());
        assert!(t.start_indices().iter().all(|&i| i < t.len()));
        assert_eq!(t.y_max(), t.values().iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
}

#[test]
fn generated_thetas_pass_ks_test() {
    let cfg = SuiteConfig {
        n_tuning: 1,
        tuning_evals: 2,
        n_test: 500,
        grid_side: 3,
        n_start: 1,
        seed: 11,
        ..SuiteConfig::default()
    };
    let suite = generate_suite(&cfg).unwrap();
    let critical = 1.628 / (500f64).sqrt();
    let l = GammaDist::new(5.0, 1.0 / 0.01).unwrap();
    let v = GammaDist::new(2.0, 1.0 / 2.0).unwrap();
    let ls: Vec<f64> = suite.test.iter().map(|t| t.true_theta.unwrap().lengthscale).collect();
    let vs: Vec<f64> = suite.test.iter().map(|t| t.true_theta.unwrap().signal_variance).collect();
    let dl = ks_statistic(ls, |x| l.cdf(x));
    let dv = ks_statistic(vs, |x| v.cdf(x));
    assert!(dl < critical, "lengthscale KS {dl}");
    assert!(dv < critical, "signal variance KS {dv}");
}

#[test]
fn grid_csv_examples() {
    let text = "# name=demo\n# rows=2 cols=2 x0=0 y0=0 dx=1 dy=1\n1,2\n3,4\n";
    let t = parse_grid_csv(text).unwrap();
    assert_eq!(t.len(), 4);
    assert_eq!(t.y_max(), 4.0);
    assert_eq!(t.name, "demo");
    let t = parse_grid_csv(&text.replace('3', "nan")).unwrap();
    assert_eq!(t.len(), 3);
    assert_eq!(t.cells(), &[0, 1, 3]);
    assert!(matches!(
        parse_grid_csv(&text.replace(['1', '2', '3', '4'], "nan").replace("nan=", "1=")),
        Err(_)
    ));
    let all_missing = "# name=x\n# rows=1 cols=2 x0=0 y0=0 dx=1 dy=1\nnan,nan\n";
    assert!(matches!(parse_grid_csv(all_missing), Err(BenchmarkError::EmptyTask(_))));
}

#[test]
fn grid_csv_errors_carry_position() {
    let bad = "# name=demo\n# rows=2 cols=2 x0=0 y0=0 dx=1 dy=1\n1,2\n3,abc\n";
    match parse_grid_csv(bad) {
        Err(BenchmarkError::Parse { line, column, .. }) => assert_eq!((line, column), (4, 2)),
        other => panic!("unexpected {other:?}"),
    }
    let short = "# name=demo\n# rows=2 cols=2 x0=0 y0=0 dx=1 dy=1\n1,2\n3\n";
    assert!(matches!(parse_grid_csv(short), Err(BenchmarkError::Parse { line: 4, .. })));
    assert!(matches!(parse_grid_csv("name=demo\n"), Err(BenchmarkError::Parse { line: 1, .. })));
    let no_rows = "# name=demo\n# cols=2 x0=0 y0=0 dx=1 dy=1\n1,2\n";
    assert!(matches!(parse_grid_csv(no_rows), Err(BenchmarkError::Parse { line: 2, .. })));
}

#[test]
fn grid_csv_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let suite = generate_suite(&small_config(5)).unwrap();
    for task in &suite.test {
        let path = dir.path().join("t.csv");
        write_grid_csv(task, &path).unwrap();
        let back = load_grid_csv(&path).unwrap();
        assert_eq!(back.name, task.name);
        assert_eq!(back.grid(), task.grid());
        assert_eq!(back.values(), task.values());
        assert_eq!(back.y_max(), task.y_max());
    }
    let mut cells = suite.test[0].cell_values();
    cells[3] = f64::NAN;
    let holed = GridTask::from_lattice("holed", *suite.test[0].lattice(), &cells).unwrap();
    let back = parse_grid_csv(&format_grid_csv(&holed)).unwrap();
    assert_eq!(back.len(), 63);
    assert_eq!(back.values(), holed.values());
}

#[test]
fn suite_write_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let suite = generate_suite(&small_config(6)).unwrap();
    let manifest = suite.write(dir.path()).unwrap();
    let loaded = Suite::load(&manifest).unwrap();
    assert_eq!(loaded.tuning.len(), 3);
    assert_eq!(loaded.test.len(), 4);
    for (a, b) in loaded.test.iter().zip(&suite.test) {
        assert_eq!(a.values(), b.values());
        assert_eq!(a.start_indices(), b.start_indices());
        assert_eq!(a.true_theta, b.true_theta);
    }
    for (a, b) in loaded.tuning_datasets().iter().zip(suite.tuning_datasets()) {
        assert_eq!(a, &b);
    }
    assert_eq!(loaded.manifest.true_eta, Some(HyperPrior::SYNTHETIC));
    assert_eq!(loaded.noise_variance(), 1e-4);
}

#[test]
fn manifest_without_start_indices_uses_whole_tuning_grid() {
    let dir = tempfile::tempdir().unwrap();
    let task = two_by_two([1.0, 2.0, 3.0, 4.0]);
    write_grid_csv(&task, &dir.path().join("a.csv")).unwrap();
    let manifest = r#"{"noise_variance": 0.0001, "tasks": [
        {"name": "a", "file": "a.csv", "role": "tuning"},
        {"name": "b", "file": "a.csv", "role": "test", "start_indices": [1, 2], "preprocess": true}
    ]}"#;
    std::fs::write(dir.path().join("m.json"), manifest).unwrap();
    let suite = Suite::load(&dir.path().join("m.json")).unwrap();
    assert_eq!(suite.tuning[0].start_indices(), &[0, 1, 2, 3]);
    assert_eq!(suite.test[0].start_indices(), &[1, 2]);
    assert!(suite.test[0].log_applied());
    assert!(suite.test[0].true_theta.is_none());
}

#[test]
fn start_indices_are_validated() {
    let mut t = two_by_two([1.0, 2.0, 3.0, 4.0]);
    assert!(t.set_start_indices(vec![0, 0]).is_err());
    assert!(t.set_start_indices(vec![4]).is_err());
    assert!(t.set_start_indices(vec![3, 1]).is_ok());
    let d = t.start_dataset();
    assert_eq!(d.targets(), &[4.0, 2.0]);
}

#[test]
fn preprocess_examples() {
    assert!(matches!(
        preprocess_pollution(&two_by_two([2.0; 4])),
        Err(BenchmarkError::DegenerateTask(_))
    ));
    assert!(matches!(
        preprocess_pollution(&two_by_two([1.0, -2.0, 3.0, 4.0])),
        Err(BenchmarkError::Domain(_))
    ));
    let e = std::f64::consts::E;
    let t = preprocess_pollution(&two_by_two([e, e * e, e.powi(3), e.powi(4)])).unwrap();
    let v = t.values();
    let step = v[1] - v[0];
    for w in v.windows(2) {
        assert_abs_diff_eq!(w[1] - w[0], step, epsilon = 1e-12);
    }
    let mean = v.iter().sum::<f64>() / 4.0;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(std, 1.0, epsilon = 1e-12);
    assert_eq!(t.y_max(), v[3]);
}

proptest! {
    #[test]
    fn preprocess_standardises_and_is_idempotent(vals in prop::collection::vec(0.01..1000.0f64, 9)) {
        prop_assume!(vals.iter().any(|v| (v / vals[0] - 1.0).abs() > 1e-6));
        let task = GridTask::from_lattice("p", Lattice::square(3, [0.0, 0.0], [1.0, 1.0]), &vals).unwrap();
        let once = preprocess_pollution(&task).unwrap();
        let n = once.len() as f64;
        let mean = once.values().iter().sum::<f64>() / n;
        let std = (once.values().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() < 1e-12);
        prop_assert!((std - 1.0).abs() < 1e-12);
        let twice = preprocess_pollution(&once).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert_eq!(twice.y_max(), twice.values().iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }

    #[test]
    fn missing_cells_are_excluded(mask in prop::collection::vec(prop::bool::ANY, 9), seed in 0u64..100) {
        prop_assume!(mask.iter().any(|m| !m));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = mask.iter().map(|&m| if m { f64::NAN } else { rng.random() }).collect();
        let task = GridTask::from_lattice("m", Lattice::square(3, [0.0, 0.0], [1.0, 1.0]), &vals).unwrap();
        prop_assert_eq!(task.len(), mask.iter().filter(|m| !**m).count());
        prop_assert!(task.values().iter().all(|v| v.is_finite()));
        prop_assert_eq!(task.cell_values().iter().filter(|v| v.is_nan()).count(), 9 - task.len());
    }
}
