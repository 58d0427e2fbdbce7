mod common {
    pub mod oracles;
}

use common::oracles;
use ctxppi_core::metrics::*;
use proptest::prelude::*;

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() < 1e-12,
        (None, None) => true,
        _ => false,
    }
}

/// Scores drawn from a small grid so ties are common.
fn case() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..=50).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..12).prop_map(|v| v as f64 / 11.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn auroc_matches_pair_counting((s, l) in case()) {
        prop_assert!(close(auroc(&s, &l), oracles::auroc(&s, &l)));
    }

    #[test]
    fn ap_matches_threshold_enumeration((s, l) in case()) {
        prop_assert!(close(average_precision(&s, &l), oracles::average_precision(&s, &l)));
    }

    #[test]
    fn truncated_metrics_match_prefix_enumeration(
        ranked in prop::collection::vec(any::<bool>(), 1..=50),
        k in 1usize..60,
    ) {
        let (p, r, ap) = oracles::ranking_at_k(&ranked, k);
        prop_assert!(close(precision_at_k(&ranked, k), p));
        prop_assert!(close(recall_at_k(&ranked, k), r));
        prop_assert!(close(ap_at_k(&ranked, k), ap));
    }

    #[test]
    fn monotone_maps_leave_ranking_metrics_unchanged((s, l) in case()) {
        let items: Vec<(String, f64, bool)> = s.iter().zip(&l).enumerate()
            .map(|(i, (&x, &y))| (format!("g{i:03}"), x, y)).collect();
        let mapped: Vec<(String, f64, bool)> = items.iter()
            .map(|(g, x, y)| (g.clone(), (3.0 * x - 1.0).exp(), *y)).collect();
        prop_assert_eq!(ranking_metrics(&items), ranking_metrics(&mapped));
    }

    #[test]
    fn flipping_labels_complements_auroc((s, l) in case()) {
        let flipped: Vec<bool> = l.iter().map(|x| !x).collect();
        if let Some(a) = auroc(&s, &l) {
            prop_assert!((a + auroc(&s, &flipped).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn perfect_separation() {
    let s = [0.9, 0.8, 0.2, 0.1];
    let l = [true, true, false, false];
    assert_eq!(auroc(&s, &l), Some(1.0));
    assert_eq!(average_precision(&s, &l), Some(1.0));
    let m = link_metrics(&s, &l).unwrap();
    assert_eq!((m.acc, m.f1), (1.0, 1.0));
}

#[test]
fn all_positives_first() {
    let items: Vec<(&str, f64, bool)> = vec![
        ("a", 0.9, true),
        ("b", 0.8, true),
        ("c", 0.3, false),
        ("d", 0.2, false),
    ];
    let m = ranking_metrics(&items).unwrap();
    assert_eq!((m.ap5, m.ap10, m.auprc, m.auroc), (1.0, 1.0, 1.0, 1.0));
    assert_eq!((m.p5, m.r5), (0.5, 1.0));
}

#[test]
fn top_five_with_three_positives() {
    let ranked = [true, false, true, false, true, false, false];
    assert_eq!(precision_at_k(&ranked, 5), Some(0.6));
}

#[test]
fn shuffled_scores_give_chance_auroc() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let n = 20_000;
    let s: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let l: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
    assert!((auroc(&s, &l).unwrap() - 0.5).abs() < 0.05);
}

#[test]
fn ties_in_ranking_break_by_id() {
    let items = vec![("b", 0.5, false), ("a", 0.5, true)];
    assert_eq!(ranked_labels(&items), vec![true, false]);
}
