use super::*;
use super::report::LML_TOLERANCE_NATS;
use crate::benchmarks::Lattice;
use crate::gp::{log_marginal_likelihood, Dataset, HyperParams, PointSet};
use crate::prior::{HyperPrior, PosteriorSamples};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn run(task: &str, strategy: &str, replicate: usize, r: &[f64]) -> RunResult {
    RunResult {
        task_name: task.into(),
        strategy: strategy.into(),
        seed: 0,
        replicate,
        n_start: 0,
        initial_r: None,
        iterations: r
            .iter()
            .enumerate()
            .map(|(i, &r)| IterationRecord {
                iteration: i + 1,
                chosen_index: i,
                observed_y: r,
                r,
                regret: 1.0 - r,
                step_seconds: 0.0,
            })
            .collect(),
        failure: None,
    }
}

fn small_task(values: &[f64]) -> GridTask {
    GridTask::from_lattice("t", Lattice::square(3, [0.0, 0.0], [1.0, 1.0]), values).unwrap()
}

/// Straightforward two-pass mean and sample standard error of one column.
fn column_stats(traces: &[Vec<f64>], t: usize) -> (f64, f64) {
    let n = traces.len() as f64;
    let mut sum = 0.0;
    for tr in traces {
        sum += tr[t];
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for tr in traces {
        ss += (tr[t] - mean) * (tr[t] - mean);
    }
    let se = if traces.len() > 1 { (ss / (n - 1.0) / n).sqrt() } else { 0.0 };
    (mean, se)
}

#[test]
fn normalized_best_examples() {
    assert_eq!(normalized_best(&[3.0, 10.0, 1.0], 10.0).unwrap(), 1.0);
    assert_eq!(normalized_best(&[2.0, 5.0, 5.0], 10.0).unwrap(), 0.5);
    assert_eq!(normalized_best(&[-1.0, -3.0], 4.0).unwrap(), -0.25);
}

#[test]
fn normalized_best_errors() {
    assert_eq!(normalized_best(&[1.0], 0.0), Err(RunnerError::MetricUndefined(0.0)));
    assert_eq!(normalized_best(&[1.0], -2.0), Err(RunnerError::MetricUndefined(-2.0)));
    assert!(matches!(normalized_best(&[1.0], f64::NAN), Err(RunnerError::MetricUndefined(_))));
    assert_eq!(normalized_best(&[], 1.0), Err(RunnerError::NoObservations));
}

#[test]
fn exhaustive_random_search_reaches_one() {
    let values: Vec<f64> = (1..=9).map(|v| v as f64).collect();
    let task = small_task(&values);
    let cfg = StrategyConfig::new(StrategyKind::RandomSearch);
    for seed in 0..5 {
        let res = run_bo(&task, &cfg, 9, seed).unwrap();
        assert!(!res.failed());
        assert_eq!(res.iterations.len(), 9);
        assert_eq!(res.iterations.last().unwrap().r, 1.0);
        assert_eq!(res.iterations.last().unwrap().regret, 0.0);
        let mut chosen: Vec<usize> = res.iterations.iter().map(|it| it.chosen_index).collect();
        chosen.sort_unstable();
        assert_eq!(chosen, (0..9).collect::<Vec<_>>());
        assert_eq!(res.initial_r, None);
        assert_eq!(res.n_start, 0);
    }
}

#[test]
fn trace_records_running_best() {
    let values: Vec<f64> = (1..=9).map(|v| v as f64).collect();
    let task = small_task(&values).with_start_indices(vec![4]).unwrap();
    let res = run_bo(&task, &StrategyConfig::new(StrategyKind::RandomSearch), 8, 3).unwrap();
    assert_eq!(res.initial_r, Some(5.0 / 9.0));
    let mut best = 5.0f64;
    for it in &res.iterations {
        assert_eq!(it.observed_y, values[it.chosen_index]);
        best = best.max(it.observed_y);
        assert_eq!(it.r, best / 9.0);
        assert_eq!(it.regret, 9.0 - best);
        assert_ne!(it.chosen_index, 4);
    }
}

#[test]
fn run_is_deterministic_apart_from_timing() {
    let values: Vec<f64> = (0..9).map(|v| ((v * 7) % 9) as f64 + 0.5).collect();
    let task = small_task(&values).with_start_indices(vec![0, 8]).unwrap();
    for kind in [StrategyKind::RandomSearch, StrategyKind::Ei] {
        let cfg = StrategyConfig::new(kind);
        let a = run_bo(&task, &cfg, 5, 11).unwrap();
        let b = run_bo(&task, &cfg, 5, 11).unwrap();
        assert_eq!(a.without_timings(), b.without_timings());
        assert!(a.without_timings().iterations.iter().all(|it| it.step_seconds == 0.0));
    }
}

#[test]
fn run_rejects_bad_inputs() {
    let values: Vec<f64> = (1..=9).map(|v| v as f64).collect();
    let task = small_task(&values);
    let cfg = StrategyConfig::new(StrategyKind::RandomSearch);
    assert!(matches!(run_bo(&task, &cfg, 0, 0), Err(RunnerError::InvalidRun(_))));
    assert!(matches!(run_bo(&task, &cfg, 10, 0), Err(RunnerError::InvalidRun(_))));
    let negative = small_task(&values.iter().map(|v| -v).collect::<Vec<_>>());
    assert!(matches!(run_bo(&negative, &cfg, 1, 0), Err(RunnerError::MetricUndefined(_))));
}

#[test]
fn strategy_failure_is_recorded_not_raised() {
    let values: Vec<f64> = (1..=9).map(|v| v as f64).collect();
    let task = small_task(&values);
    // PLeBO without candidates cannot propose.
    let res = run_bo(&task, &StrategyConfig::new(StrategyKind::Plebo), 3, 0).unwrap();
    assert!(res.failed());
    assert!(res.iterations.is_empty());
}

#[test]
fn run_many_matches_sequential_runs() {
    let values: Vec<f64> = (0..9).map(|v| (v as f64 * 1.3).sin() + 2.0).collect();
    let task = small_task(&values);
    let jobs: Vec<RunJob> = (0..4)
        .map(|i| RunJob {
            task: &task,
            config: StrategyConfig::new(StrategyKind::RandomSearch),
            iterations: 4,
            seed: run_seed(9, 0, StrategyKind::RandomSearch, i),
            replicate: i,
        })
        .collect();
    let par = run_many(&jobs, 2);
    for (job, out) in jobs.iter().zip(par) {
        let seq = run_bo_replicate(job.task, &job.config, 4, job.seed, job.replicate).unwrap();
        assert_eq!(out.unwrap().without_timings(), seq.without_timings());
    }
}

#[test]
fn run_seeds_separate_runs() {
    let a = run_seed(1, 0, StrategyKind::Ei, 0);
    assert_eq!(a, run_seed(1, 0, StrategyKind::Ei, 0));
    assert_ne!(a, run_seed(1, 1, StrategyKind::Ei, 0));
    assert_ne!(a, run_seed(1, 0, StrategyKind::Ucb, 0));
    assert_ne!(a, run_seed(1, 0, StrategyKind::Ei, 1));
    assert_ne!(a, run_seed(2, 0, StrategyKind::Ei, 0));
}

#[test]
fn aggregate_single_trace_has_zero_stderr() {
    let c = aggregate(&[run("a", "EI", 0, &[0.2, 0.5, 0.9])]).unwrap();
    assert_eq!(c.mean, vec![0.2, 0.5, 0.9]);
    assert_eq!(c.stderr, vec![0.0; 3]);
    assert_eq!(c.j, 1);
    assert_eq!(c.strategy, "EI");
}

#[test]
fn aggregate_two_traces() {
    let c = aggregate(&[run("a", "EI", 0, &[0.4]), run("b", "EI", 0, &[0.6])]).unwrap();
    assert_abs_diff_eq!(c.mean[0], 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(c.stderr[0], 0.1, epsilon = 1e-15);
    assert_eq!(c.j, 2);
}

#[test]
fn aggregate_matches_two_pass_oracle() {
    let traces: Vec<Vec<f64>> = (0..30)
        .map(|k| (0..6).map(|t| ((k * 31 + t * 17) % 23) as f64 / 23.0).collect())
        .collect();
    let runs: Vec<RunResult> = traces.iter().enumerate().map(|(k, tr)| run(&format!("t{k}"), "PLeBO", 0, tr)).collect();
    let c = aggregate(&runs).unwrap();
    for t in 0..6 {
        let (m, se) = column_stats(&traces, t);
        assert_abs_diff_eq!(c.mean[t], m, epsilon = 1e-14);
        assert_abs_diff_eq!(c.stderr[t], se, epsilon = 1e-14);
    }
}

#[test]
fn aggregate_skips_failed_runs_and_checks_lengths() {
    let mut bad = run("c", "EI", 0, &[0.0]);
    bad.failure = Some("boom".into());
    let c = aggregate(&[run("a", "EI", 0, &[0.4, 0.5]), bad.clone()]).unwrap();
    assert_eq!(c.j, 1);
    assert_eq!(aggregate(&[bad]), Err(RunnerError::NothingToAggregate));
    assert_eq!(aggregate(&[]), Err(RunnerError::NothingToAggregate));
    assert!(matches!(
        aggregate(&[run("a", "EI", 0, &[0.4, 0.5]), run("b", "EI", 0, &[0.4])]),
        Err(RunnerError::LengthMismatch(_))
    ));
}

#[test]
fn difference_with_itself_is_zero() {
    let runs = vec![run("a", "EI", 0, &[0.1, 0.7]), run("b", "EI", 0, &[0.3, 0.4])];
    let d = difference_curve(&runs, &runs).unwrap();
    assert_eq!(d.mean, vec![0.0, 0.0]);
    assert_eq!(d.stderr, vec![0.0, 0.0]);
    assert_eq!(d.reference.as_deref(), Some("EI"));
}

#[test]
fn difference_of_constant_offset() {
    let reference = vec![run("a", "RS", 0, &[0.1, 0.2]), run("b", "RS", 0, &[0.5, 0.6])];
    let method = vec![run("b", "PLeBO", 0, &[0.6, 0.7]), run("a", "PLeBO", 0, &[0.2, 0.3])];
    let d = difference_curve(&method, &reference).unwrap();
    for t in 0..2 {
        assert_abs_diff_eq!(d.mean[t], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(d.stderr[t], 0.0, epsilon = 1e-12);
    }
    assert_eq!(d.strategy, "PLeBO");
    assert_eq!(d.j, 2);
}

#[test]
fn difference_pairs_by_task_and_replicate() {
    let reference = vec![run("a", "RS", 0, &[0.1]), run("a", "RS", 1, &[0.5]), run("b", "RS", 0, &[0.2])];
    let method = vec![run("a", "X", 1, &[0.9]), run("b", "X", 0, &[0.2]), run("a", "X", 0, &[0.4])];
    let d = difference_curve(&method, &reference).unwrap();
    let diffs = vec![vec![0.3], vec![0.4], vec![0.0]];
    let (m, se) = column_stats(&diffs, 0);
    assert_abs_diff_eq!(d.mean[0], m, epsilon = 1e-14);
    assert_abs_diff_eq!(d.stderr[0], se, epsilon = 1e-14);
}

#[test]
fn difference_requires_matching_tasks() {
    let reference = vec![run("a", "RS", 0, &[0.1]), run("b", "RS", 0, &[0.2])];
    let method = vec![run("a", "X", 0, &[0.1]), run("c", "X", 0, &[0.2])];
    assert!(matches!(difference_curve(&method, &reference), Err(RunnerError::TaskSetMismatch(_))));
    assert!(matches!(difference_curve(&method[..1], &reference), Err(RunnerError::TaskSetMismatch(_))));
}

#[test]
fn difference_drops_pairs_with_a_failed_side() {
    let reference = vec![run("a", "RS", 0, &[0.1]), run("b", "RS", 0, &[0.2])];
    let mut method = vec![run("a", "X", 0, &[0.4]), run("b", "X", 0, &[0.9])];
    method[1].failure = Some("x".into());
    let d = difference_curve(&method, &reference).unwrap();
    assert_eq!(d.j, 1);
    assert_abs_diff_eq!(d.mean[0], 0.3, epsilon = 1e-15);
}

#[test]
fn csv_headers_and_rows() {
    let r = run("a", "EI", 0, &[0.5, 1.0]);
    let text = results_csv(std::slice::from_ref(&r));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], RESULTS_HEADER);
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2], "a,EI,0,2,1,1,1,0,0");

    let c = aggregate(&[r.clone()]).unwrap();
    let text = aggregate_csv(&[c]);
    assert_eq!(text.lines().next(), Some(AGGREGATE_HEADER));
    assert_eq!(text.lines().nth(1), Some("EI,1,0.5,0,1"));

    let d = difference_curve(&[r.clone()], &[r]).unwrap();
    let text = difference_csv(&[d]);
    assert_eq!(text.lines().next(), Some(DIFFERENCE_HEADER));
    assert_eq!(text.lines().nth(2), Some("EI,EI,2,0,0,1"));
}

fn report_fixture() -> (PosteriorSamples, Vec<Dataset<f64>>) {
    let noise = 1e-4;
    let theta = |l: f64, v: f64| HyperParams::new(l, v, noise).unwrap();
    let post = PosteriorSamples {
        eta_draws: vec![
            HyperPrior::new(2.0, 0.02, 3.0, 1.0).unwrap(),
            HyperPrior::new(4.0, 0.01, 5.0, 1.0).unwrap(),
        ],
        theta_draws: vec![
            vec![theta(0.04, 3.0), theta(0.06, 5.0)],
            vec![theta(0.1, 1.0), theta(0.2, 2.0)],
        ],
        chain_ids: vec![0, 1],
        log_joint_values: vec![0.0, 0.0],
        n_filtered: 0,
        seed: 0,
        noise_variance: noise,
        diagnostics: Vec::new(),
    };
    let inputs = PointSet::from_points(2, &[vec![0.1, 0.2], vec![0.5, 0.5], vec![0.9, 0.3]]).unwrap();
    let data = vec![
        Dataset::new(inputs.clone(), vec![0.3, -0.2, 1.1]).unwrap(),
        Dataset::new(inputs, vec![1.0, 0.8, -0.4]).unwrap(),
    ];
    (post, data)
}

#[test]
fn report_truth_equal_to_posterior_means() {
    let (post, data) = report_fixture();
    let truth_eta = HyperPrior::new(3.0, 0.015, 4.0, 1.0).unwrap();
    let truth_thetas = vec![
        HyperParams::new(0.05, 4.0, 1e-4).unwrap(),
        HyperParams::new(0.15, 1.5, 1e-4).unwrap(),
    ];
    let rep = prior_quality_report(&post, Some((&truth_eta, &truth_thetas)), &data).unwrap();
    assert_eq!(rep.fraction_within_tolerance, Some(1.0));
    for (t, truth) in rep.tasks.iter().zip(&truth_thetas) {
        assert_abs_diff_eq!(t.inferred_l, truth.lengthscale, epsilon = 1e-12);
        assert_abs_diff_eq!(t.inferred_v, truth.signal_variance, epsilon = 1e-12);
        assert_abs_diff_eq!(t.lml_inferred, t.lml_true.unwrap(), epsilon = 1e-9);
    }
    assert_abs_diff_eq!(rep.eta_posterior_mean.l_shape, 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(rep.lengthscale_mean_inferred, (0.04 + 0.04) / 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(rep.signal_variance_mean_inferred, 4.0, epsilon = 1e-12);
    let lml0 = log_marginal_likelihood(&data[0], &truth_thetas[0]).unwrap();
    assert_abs_diff_eq!(rep.tasks[0].lml_true.unwrap(), lml0, epsilon = 1e-12);
    assert!(rep.tasks_csv().starts_with("task,inferred_l,inferred_v,lml_inferred,true_l,true_v,lml_true\n"));
    assert!(rep.density_csv().starts_with("parameter,x,q05,q50,q95,truth\n"));
    let c = &rep.lengthscale_density;
    assert!(c.q05.iter().zip(&c.q50).zip(&c.q95).all(|((a, b), d)| a <= b && b <= d));
    assert!(rep.to_json().unwrap().contains("\"eta_true\""));
}

#[test]
fn report_without_truth_omits_truth_columns() {
    let (post, data) = report_fixture();
    let rep = prior_quality_report(&post, None, &data).unwrap();
    assert_eq!(rep.fraction_within_tolerance, None);
    assert!(rep.tasks.iter().all(|t| t.lml_true.is_none() && t.true_l.is_none()));
    assert_eq!(rep.tasks_csv().lines().next(), Some("task,inferred_l,inferred_v,lml_inferred"));
    assert_eq!(rep.density_csv().lines().next(), Some("parameter,x,q05,q50,q95"));
    assert_eq!(rep.density_csv().lines().count(), 1 + 200);
    let json = rep.to_json().unwrap();
    assert!(!json.contains("eta_true") && !json.contains("lml_true"));
}

#[test]
fn report_counts_tasks_outside_tolerance() {
    let (mut post, data) = report_fixture();
    // Task 1 gets a posterior far too wide in amplitude for its unit-scale data.
    post.theta_draws[1] = vec![HyperParams::new(0.01, 400.0, 1e-4).unwrap(); 2];
    let eta = HyperPrior::new(3.0, 0.015, 4.0, 1.0).unwrap();
    let thetas = vec![
        HyperParams::new(0.05, 4.0, 1e-4).unwrap(),
        HyperParams::new(0.01, 1.0, 1e-4).unwrap(),
    ];
    let rep = prior_quality_report(&post, Some((&eta, &thetas)), &data).unwrap();
    let t1 = &rep.tasks[1];
    assert!(t1.lml_true.unwrap() > t1.lml_inferred + LML_TOLERANCE_NATS);
    assert_eq!(rep.fraction_within_tolerance, Some(0.5));
}

#[test]
fn report_needs_draws() {
    let (mut post, data) = report_fixture();
    post.eta_draws.clear();
    assert!(prior_quality_report(&post, None, &data).is_err());
}

proptest! {
    #[test]
    fn metric_is_monotone_and_bounded(values in prop::collection::vec(0.01f64..10.0, 9), seed in 0u64..1000, n in 1usize..=9) {
        let task = small_task(&values);
        let res = run_bo(&task, &StrategyConfig::new(StrategyKind::RandomSearch), n, seed).unwrap();
        let r = res.r_trace();
        prop_assert_eq!(r.len(), n);
        for w in r.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        prop_assert!(r.iter().all(|&x| x <= 1.0 && x > 0.0));
    }

    #[test]
    fn mean_difference_is_difference_of_means(
        a in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 1..12),
        shift in prop::collection::vec(-0.5f64..0.5, 4),
    ) {
        let b: Vec<Vec<f64>> = a.iter().enumerate()
            .map(|(k, tr)| tr.iter().zip(&shift).map(|(x, s)| x * (1.0 + k as f64 * 0.01) + s).collect())
            .collect();
        let ra: Vec<RunResult> = a.iter().enumerate().map(|(k, tr)| run(&format!("t{k}"), "A", 0, tr)).collect();
        let rb: Vec<RunResult> = b.iter().enumerate().map(|(k, tr)| run(&format!("t{k}"), "B", 0, tr)).collect();
        let d = difference_curve(&ra, &rb).unwrap();
        let ma = aggregate(&ra).unwrap();
        let mb = aggregate(&rb).unwrap();
        for t in 0..4 {
            prop_assert!((d.mean[t] - (ma.mean[t] - mb.mean[t])).abs() < 1e-12);
        }
    }
}
