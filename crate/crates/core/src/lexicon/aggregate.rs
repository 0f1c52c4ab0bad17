//! Channel and pair aggregation into expansion columns.

use super::registry::Scope;
use crate::numeric::{mean, pop_std, quantile_sorted, sorted};

/// Aggregates raw per-channel, per-pair or global values into the scope's
/// expansion columns. An empty input yields zeros.
pub fn aggregate(values: &[f64], scope: Scope) -> Vec<f64> {
    let dim = scope.expansion_dim();
    if values.is_empty() {
        return vec![0.0; dim];
    }
    match scope {
        Scope::Global => vec![values[0]],
        Scope::PerChannel => {
            let s = sorted(values);
            vec![
                mean(values),
                pop_std(values),
                quantile_sorted(&s, 0.5),
                quantile_sorted(&s, 0.25),
                quantile_sorted(&s, 0.75),
                s[s.len() - 1],
            ]
        }
        Scope::PerPair => {
            let s = sorted(values);
            let k = (values.len() as f64 * 0.1).ceil().max(1.0) as usize;
            let top = &s[s.len() - k..];
            vec![
                mean(values),
                pop_std(values),
                quantile_sorted(&s, 0.5),
                quantile_sorted(&s, 0.75),
                mean(top),
            ]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_statistics_of_one_two_three() {
        let a = aggregate(&[3.0, 1.0, 2.0], Scope::PerChannel);
        let expect = [2.0, (2.0f64 / 3.0).sqrt(), 2.0, 1.5, 2.5, 3.0];
        for (x, e) in a.iter().zip(expect) {
            assert!((x - e).abs() < 1e-12, "{a:?}");
        }
    }

    #[test]
    fn single_pair_repeats_value() {
        let a = aggregate(&[0.37], Scope::PerPair);
        assert_eq!(a, vec![0.37, 0.0, 0.37, 0.37, 0.37]);
    }

    #[test]
    fn ten_pairs_top_mean_is_max() {
        let v: Vec<f64> = (0..10).map(|i| (i * 7 % 10) as f64 * 0.1).collect();
        let a = aggregate(&v, Scope::PerPair);
        assert!((a[4] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn top_decile_rounds_up() {
        // 11 pairs: ceil(1.1) = 2 largest values are averaged.
        let v: Vec<f64> = (0..11).map(f64::from).collect();
        assert!((aggregate(&v, Scope::PerPair)[4] - 9.5).abs() < 1e-12);
    }

    #[test]
    fn global_passthrough() {
        assert_eq!(aggregate(&[4.5], Scope::Global), vec![4.5]);
    }
}
