use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

#[test]
fn rmse_examples() {
    let x = [1.0, 2.0, 3.0];
    assert_eq!(rmse(&x, &x).unwrap(), 0.0);
    assert_eq!(rmse(&[2.0, 3.0, 4.0], &x).unwrap(), 1.0);
    assert!((rmse(&x, &[2.0, 2.0, 5.0]).unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert!((rmse(&x, &[2.0, 2.0, 5.0]).unwrap() - 1.29099).abs() < 1e-5);
    assert!(rmse(&[], &[]).is_err());
    assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn median_aggregation_examples() {
    let run = vec![1.0, 4.0, 2.5];
    let agg = n_median_aggregate(&[run.clone(), run.clone(), run.clone()]).unwrap();
    assert_eq!(agg, run);
    assert_eq!(n_median_aggregate(&[vec![1.0], vec![2.0], vec![9.0]]).unwrap(), vec![2.0]);
    assert_eq!(n_median_aggregate(&[vec![1.0], vec![2.0], vec![9.0], vec![4.0]]).unwrap(), vec![3.0]);
    assert!(n_median_aggregate(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    assert!(n_median_aggregate(&[]).is_err());

    let truth = [0.5, 3.0, 2.0];
    assert_eq!(n_median_rmse(&[run.clone(), run.clone()], &truth).unwrap(), rmse(&run, &truth).unwrap());
}

#[test]
fn relative_gain_examples() {
    assert_eq!(relative_gain(0.95, 0.80).unwrap(), 15.8);
    assert_eq!(relative_gain(0.95, 0.95).unwrap(), 0.0);
    assert_eq!(relative_gain(0.95, 0.96).unwrap(), -1.1);
    assert_eq!(relative_gain(0.95, 0.89).unwrap(), 6.3);
    assert!(relative_gain(0.0, 0.5).is_err());
    assert!(relative_gain(-1.0, 0.5).is_err());
}

#[test]
fn hourly_profile_examples() {
    let truth = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
    assert_eq!(hourly_error_profile(&truth, &truth).unwrap(), vec![0.0; 3]);
    let shifted: Vec<Vec<f64>> = truth.iter().map(|w| w.iter().map(|v| v + 1.0).collect()).collect();
    assert_eq!(hourly_error_profile(&shifted, &truth).unwrap(), vec![1.0; 3]);
}

#[test]
fn deoverlap_averages_covering_windows() {
    let out = deoverlap(&[vec![1.0, 2.0], vec![4.0, 6.0]], &[0, 1], 4).unwrap();
    assert_eq!(out, vec![Some(1.0), Some(3.0), Some(6.0), None]);
    assert!(deoverlap(&[vec![1.0, 2.0]], &[3], 4).is_err());
}

#[test]
fn summary_statistics() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(m, 2.5);
    assert!((s.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(mean_std(&[2.0]).unwrap(), (2.0, None));
    assert_eq!(quartiles(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), [2.0, 3.0, 4.0]);
    assert_eq!(quartiles(&[7.0]).unwrap(), [7.0; 3]);
}

#[test]
fn report_and_consolidation() {
    let truth = vec![5.0, 6.0, 7.0, 8.0];
    let runs = vec![vec![5.5, 6.0, 7.0, 8.0], vec![5.0, 6.5, 7.0, 8.0]];
    let r = EvalReport::from_runs("a", 0.0, "h", &[0, 1], &runs, &truth, vec![0.0; 24], 0.95).unwrap();
    assert_eq!(r.per_seed_rmse.len(), 2);
    assert_eq!(r.eta_percent, relative_gain(0.95, r.n_median_rmse).unwrap());
    let single = EvalReport::from_runs("b", 0.0, "h", &[3], &runs[..1], &truth, vec![], 0.95).unwrap();
    assert_eq!(single.n_median_rmse, single.per_seed_rmse[0]);
    assert!(single.std_rmse.is_none());
    let matched = EvalReport::from_runs("c", 0.1, "h", &[3], &runs[..1], &truth, vec![], single.n_median_rmse).unwrap();
    assert_eq!(matched.eta_percent, 0.0);

    let rows = ConsolidatedRow::consolidate(&[matched.clone(), r.clone(), single.clone()]).unwrap();
    assert_eq!(rows.iter().map(|r| r.model.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
    for row in &rows {
        assert_eq!(row.eta_percent, row.stored_eta_percent);
    }
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().contains("n_median_rmse,"));
    assert!(r.to_table().contains("n-Median"));
}

fn sort_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn aggregation_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let runs: Vec<Vec<f64>> = (0..10).map(|_| (0..7).map(|_| rng.gen_range(0.0..20.0)).collect()).collect();
        let agg = n_median_aggregate(&runs).unwrap();
        for (i, a) in agg.iter().enumerate() {
            assert_eq!(*a, sort_median(runs.iter().map(|r| r[i]).collect()));
        }
    }
}

proptest! {
    #[test]
    fn rmse_detects_translation(xs in prop::collection::vec(-50.0f64..50.0, 1..40), c in -10.0f64..10.0) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        prop_assert!((rmse(&shifted, &xs).unwrap() - c.abs()).abs() < 1e-9);
    }

    #[test]
    fn gain_decreases_in_score(pb in 0.1f64..5.0, a in 0.0f64..5.0, d in 1e-6f64..1.0) {
        prop_assert!(relative_gain_exact(pb, a + d).unwrap() < relative_gain_exact(pb, a).unwrap());
    }

    #[test]
    fn identical_runs_give_single_run_rmse(xs in prop::collection::vec(0.0f64..20.0, 1..30), k in 1usize..6) {
        let truth: Vec<f64> = xs.iter().map(|x| x * 0.9 + 0.3).collect();
        let runs = vec![xs.clone(); k];
        prop_assert_eq!(n_median_rmse(&runs, &truth).unwrap(), rmse(&xs, &truth).unwrap());
    }
}
