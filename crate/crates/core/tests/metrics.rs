use proptest::prelude::*;
use tcnn::metrics::{accuracy, confusion, macro_prf, roc_auc_binary, roc_auc_macro_ovr, MetricsReport};
use tcnn::Tensor;

/// Fraction of positive/negative pairs ranked correctly, ties counting half.
fn pair_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &pi) in positive.iter().enumerate() {
        for (j, &pj) in positive.iter().enumerate() {
            if pi && !pj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

fn labeled_scores() -> impl Strategy<Value = (usize, Vec<usize>, Vec<f32>)> {
    (2usize..5, 2usize..40).prop_flat_map(|(c, n)| {
        (
            Just(c),
            prop::collection::vec(0..c, n),
            // a coarse grid so ties are common
            prop::collection::vec((0u8..6).prop_map(|v| v as f32 / 5.0), n * c),
        )
    })
}

proptest! {
    #[test]
    fn binary_auc_matches_pair_counting(v in prop::collection::vec((0u8..8, any::<bool>()), 1..40)) {
        let scores: Vec<f64> = v.iter().map(|(s, _)| *s as f64).collect();
        let pos: Vec<bool> = v.iter().map(|(_, p)| *p).collect();
        let got = roc_auc_binary(&scores, &pos);
        let want = pair_auc(&scores, &pos);
        prop_assert_eq!(got.is_some(), want.is_some());
        if let (Some(a), Some(b)) = (got, want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_is_invariant_under_increasing_maps((c, labels, scores) in labeled_scores()) {
        let n = labels.len();
        let s = Tensor::from_vec(&[n, c], scores.clone()).unwrap();
        let t = Tensor::from_vec(&[n, c], scores.iter().map(|v| (3.0 * v).exp() + 1.0).collect()).unwrap();
        let (a, b) = (roc_auc_macro_ovr(&s, &labels).unwrap(), roc_auc_macro_ovr(&t, &labels).unwrap());
        prop_assert_eq!(a.is_some(), b.is_some());
        if let (Some(a), Some(b)) = (a, b) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_ignore_sample_order((c, labels, scores) in labeled_scores(), seed in any::<u64>()) {
        let n = labels.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = seed | 1;
        for i in (1..n).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            order.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let s = Tensor::from_vec(&[n, c], scores.clone()).unwrap();
        let shuffled: Vec<f32> = order.iter().flat_map(|&i| scores[i * c..(i + 1) * c].to_vec()).collect();
        let t = Tensor::from_vec(&[n, c], shuffled).unwrap();
        let l2: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let a = MetricsReport::from_scores(&s, &labels).unwrap();
        let b = MetricsReport::from_scores(&t, &l2).unwrap();
        prop_assert_eq!(a.confusion, b.confusion);
        prop_assert_eq!(a.accuracy, b.accuracy);
        prop_assert!((a.f1 - b.f1).abs() < 1e-12);
        match (a.auc, b.auc) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
    }

    #[test]
    fn trace_over_n_is_accuracy(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
        let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let m = confusion(&pred, &truth, 4).unwrap();
        let trace: u64 = (0..4).map(|k| m[k][k]).sum();
        prop_assert_eq!(trace as f64 / pred.len() as f64, accuracy(&pred, &truth).unwrap());
        for k in 0..4 {
            prop_assert_eq!(m[k].iter().sum::<u64>() as usize, truth.iter().filter(|&&t| t == k).count());
        }
        let (p, r, f) = macro_prf(&pred, &truth, 4).unwrap();
        for v in [p, r, f] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn constant_scores_give_one_half() {
    let s = Tensor::full(&[6, 3], 0.2).unwrap();
    assert_eq!(roc_auc_macro_ovr(&s, &[0, 1, 2, 0, 1, 2]).unwrap(), Some(0.5));
}

#[test]
fn single_class_auc_is_absent() {
    let s = Tensor::from_vec(&[3, 2], vec![0.1, 0.9, 0.4, 0.6, 0.8, 0.2]).unwrap();
    assert_eq!(roc_auc_macro_ovr(&s, &[1, 1, 1]).unwrap(), None);
    let r = MetricsReport::from_scores(&s, &[1, 1, 1]).unwrap();
    assert!(r.to_json().contains("\"auc\": null"));
    assert_eq!(r.to_csv().lines().nth(1).unwrap().split(',').nth(1), Some(""));
}
