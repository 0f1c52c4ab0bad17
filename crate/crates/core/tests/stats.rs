use eeg_audit::numeric::quantile_sorted;
use eeg_audit::seed::SeedContext;
use eeg_audit::stats::{
    bh_fdr, macro_f1, paired_bootstrap, percentile_ci, roc_auc, smoothed_p, BootstrapPlan, MetricKind, ResampleMetric,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn brute_auc(scores: &[f64], labels: &[usize]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Step-up rule written out directly: reject the k smallest where k is the
/// largest rank with p_(k) ≤ kα/m.
fn textbook_bh(p: &[f64], alpha: f64) -> Vec<bool> {
    let m = p.len();
    let mut sorted: Vec<(f64, usize)> = p.iter().copied().zip(0..).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut k = 0;
    for (rank, (pv, _)) in sorted.iter().enumerate() {
        if *pv <= (rank + 1) as f64 * alpha / m as f64 {
            k = rank + 1;
        }
    }
    let mut reject = vec![false; m];
    for (_, i) in &sorted[..k] {
        reject[*i] = true;
    }
    reject
}

fn textbook_q(p: &[f64]) -> Vec<f64> {
    let m = p.len() as f64;
    p.iter()
        .map(|&pi| {
            // q_i = min over p_j ≥ p_i of m p_j / rank_j, with rank the count of p ≤ p_j.
            p.iter()
                .filter(|&&pj| pj >= pi)
                .map(|&pj| {
                    let rank = p.iter().filter(|&&x| x <= pj).count() as f64;
                    (m * pj / rank).min(1.0)
                })
                .fold(1.0, f64::min)
        })
        .collect()
}

fn panel() -> impl Strategy<Value = Vec<f64>> {
    let p = prop_oneof![
        3 => 0.0f64..1.0,
        1 => 0.0f64..0.002,
        1 => prop::sample::select(vec![0.01, 0.02, 0.05, 1.0]),
    ];
    prop::collection::vec(p, 1..80)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_equals_pair_counting(
        raw in prop::collection::vec((0u8..12, any::<bool>()), 2..200)
    ) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| f64::from(*s) / 4.0).collect();
        let labels: Vec<usize> = raw.iter().map(|(_, l)| usize::from(*l)).collect();
        let pos = labels.iter().filter(|&&l| l == 1).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let got = roc_auc(&scores, &labels).unwrap();
        prop_assert_eq!(got, brute_auc(&scores, &labels));
    }

    #[test]
    fn bh_rejections_match_step_up(p in panel()) {
        let r = bh_fdr(&p, 0.05);
        prop_assert_eq!(&r.reject, &textbook_bh(&p, 0.05));
        let q = textbook_q(&p);
        for (a, b) in r.q.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12, "q {a} vs {b}");
        }
        // p ≤ kα/m and m·p/k ≤ α round differently when p sits exactly on a
        // boundary, e.g. p = [0, 0.05, 0]; away from ties they must agree.
        for (rej, qv) in r.reject.iter().zip(&r.q) {
            if *rej != (*qv <= 0.05) {
                prop_assert!((qv - 0.05).abs() <= 4.0 * f64::EPSILON * 0.05, "reject {rej} with q {qv}");
            }
        }
    }

    #[test]
    fn ci_shifts_with_the_replicates(
        v in prop::collection::vec(-1.0f64..1.0, 2..128),
        c in -5.0f64..5.0
    ) {
        let (lo, hi) = percentile_ci(&v);
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let (lo2, hi2) = percentile_ci(&shifted);
        prop_assert!((lo2 - lo - c).abs() < 1e-9);
        prop_assert!((hi2 - hi - c).abs() < 1e-9);
        prop_assert!(lo <= hi);
    }

    #[test]
    fn smoothed_p_is_never_zero(v in prop::collection::vec(-1.0f64..1.0, 0..200)) {
        let p = smoothed_p(&v);
        prop_assert!(p > 0.0 && p <= 1.0);
        prop_assert!(p >= 1.0 / (1.0 + v.len() as f64));
    }

    #[test]
    fn macro_f1_in_unit_interval(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..100)
    ) {
        let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let lab: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let f = macro_f1(&pred, &lab, 3).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(macro_f1(&lab, &lab, 3).unwrap() > 0.0, true);
    }
}

#[test]
fn bh_small_panels() {
    let r = bh_fdr(&[0.01, 0.04, 0.03, 0.2], 0.05);
    assert_eq!(r.reject, vec![true, false, false, false]);
    assert!((r.q[0] - 0.04).abs() < 1e-15);
    let all = bh_fdr(&[0.01, 0.02, 0.03, 0.04], 0.05);
    assert!(all.reject.iter().all(|&r| r));
    let none = bh_fdr(&[0.5, 0.9], 0.05);
    assert!(none.reject.iter().all(|r| !r));
}

#[test]
fn quantiles_interpolate_linearly() {
    let s = [0.0, 1.0, 2.0, 3.0];
    assert_eq!(quantile_sorted(&s, 0.5), 1.5);
    assert_eq!(quantile_sorted(&s, 0.0), 0.0);
    assert_eq!(quantile_sorted(&s, 1.0), 3.0);
}

#[test]
fn bootstrap_plan_is_seeded_and_shared() {
    let seed = SeedContext::new(4311, "t", "m", "f", "bootstrap");
    let a = BootstrapPlan::new(50, 128, &seed).unwrap();
    let b = BootstrapPlan::new(50, 128, &seed).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.digest(), b.digest());
    let other = BootstrapPlan::new(50, 128, &seed.with_purpose("other")).unwrap();
    assert_ne!(a.digest(), other.digest());
    for r in 0..a.n_resamples() {
        assert_eq!(a.counts(r).iter().sum::<u32>(), 50);
    }
}

#[test]
fn paired_bootstrap_of_identical_models_is_zero() {
    let preds = DMatrix::from_fn(40, 2, |r, c| if c == 1 { (r as f64 * 0.37).sin() } else { 0.0 });
    let labels: Vec<usize> = (0..40).map(|r| usize::from(r % 3 == 0)).collect();
    let m = ResampleMetric::new(MetricKind::RocAuc, &preds, &labels, 2).unwrap();
    let plan = BootstrapPlan::new(40, 128, &SeedContext::new(1, "t", "m", "f", "bootstrap")).unwrap();
    let rep = paired_bootstrap(&m, &m, &plan).unwrap();
    assert!(rep.valid().iter().all(|&d| d == 0.0));
    assert_eq!(rep.plan_digest, plan.digest());
    assert_eq!(smoothed_p(&rep.valid()), 1.0);
}

#[test]
fn resample_metric_full_matches_direct() {
    let preds = DMatrix::from_fn(60, 2, |r, c| if c == 1 { ((r * 7919) % 61) as f64 } else { 0.0 });
    let labels: Vec<usize> = (0..60).map(|r| usize::from(r % 2 == 0)).collect();
    let m = ResampleMetric::new(MetricKind::RocAuc, &preds, &labels, 2).unwrap();
    let scores: Vec<f64> = (0..60).map(|r| preds[(r, 1)]).collect();
    assert_eq!(m.full().unwrap(), roc_auc(&scores, &labels).unwrap());
}
