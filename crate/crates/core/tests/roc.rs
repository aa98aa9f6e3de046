use proptest::prelude::*;
use pue_detect::detector::DetectionScore;
use pue_detect::eval::roc_curve;
use pue_detect::rng::substream;
use rand::Rng;

fn score(loss: f64, contaminated: bool) -> DetectionScore {
    DetectionScore {
        step: 0,
        slot_index: 0,
        loss,
        contaminated,
    }
}

/// Mann-Whitney statistic by exhaustive pair counting, ties worth one half.
fn pair_counting_auc(scores: &[DetectionScore]) -> f64 {
    let pos: Vec<f64> = scores
        .iter()
        .filter(|s| s.contaminated)
        .map(|s| s.loss)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .filter(|s| !s.contaminated)
        .map(|s| s.loss)
        .collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn quantized(seed: u64, n: usize, levels: u32, shift: f64) -> Vec<DetectionScore> {
    let mut rng = substream(seed, "fixture");
    (0..n)
        .map(|i| {
            let contaminated = i % 3 == 0;
            let base = f64::from(rng.random_range(0..levels)) / f64::from(levels);
            score(base + if contaminated { shift } else { 0.0 }, contaminated)
        })
        .collect()
}

#[test]
fn auc_matches_pair_counting_on_2000_scores() {
    for (seed, levels, shift) in [
        (1, 1000, 0.1),
        (2, 20, 0.05),
        (3, 5, 0.0),
        (4, 1 << 20, 0.3),
    ] {
        let scores = quantized(seed, 2000, levels, shift);
        let (_, auc) = roc_curve(&scores).unwrap();
        let oracle = pair_counting_auc(&scores);
        assert!(
            (auc - oracle).abs() < 1e-9,
            "seed {seed}: {auc} vs {oracle}"
        );
    }
}

#[test]
fn uninformative_scores_give_half() {
    let mut rng = substream(7, "fixture");
    let scores: Vec<DetectionScore> = (0..10_000)
        .map(|i| score(rng.random::<f64>(), i % 2 == 0))
        .collect();
    let (_, auc) = roc_curve(&scores).unwrap();
    assert!((auc - 0.5).abs() < 0.02, "auc {auc}");
}

#[test]
fn separated_scores_give_one() {
    let scores: Vec<DetectionScore> = (0..100).map(|i| score(f64::from(i), i >= 60)).collect();
    let (points, auc) = roc_curve(&scores).unwrap();
    assert_eq!(auc, 1.0);
    assert!(points
        .iter()
        .any(|p| p.false_positive_rate == 0.0 && p.true_positive_rate == 1.0));
}

proptest! {
    #[test]
    fn roc_properties(
        raw in prop::collection::vec((0u8..12, any::<bool>()), 2..300),
        perm_seed in any::<u64>(),
    ) {
        let mut scores: Vec<DetectionScore> = raw.iter().map(|&(l, c)| score(f64::from(l) / 11.0, c)).collect();
        prop_assume!(scores.iter().any(|s| s.contaminated) && scores.iter().any(|s| !s.contaminated));
        let (points, auc) = roc_curve(&scores).unwrap();
        prop_assert!((auc - pair_counting_auc(&scores)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&auc));

        let first = points[0];
        let last = points[points.len() - 1];
        prop_assert_eq!((first.false_positive_rate, first.true_positive_rate), (0.0, 0.0));
        prop_assert_eq!((last.false_positive_rate, last.true_positive_rate), (1.0, 1.0));
        for w in points.windows(2) {
            prop_assert!(w[1].false_positive_rate >= w[0].false_positive_rate);
            prop_assert!(w[1].true_positive_rate >= w[0].true_positive_rate);
            prop_assert!(w[1].threshold < w[0].threshold);
        }

        // input order is irrelevant
        let mut rng = substream(perm_seed, "perm");
        use rand::seq::SliceRandom;
        scores.shuffle(&mut rng);
        let (shuffled, auc2) = roc_curve(&scores).unwrap();
        prop_assert_eq!(auc, auc2);
        prop_assert_eq!(points, shuffled);
    }
}
