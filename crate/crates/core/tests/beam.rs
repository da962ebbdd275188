use fusion_scales::decode::{beam_search, BeamConfig, EosRule};
use fusion_scales::fusion::sequence_score;
use fusion_scales::providers::{PositionwiseToyAM, ScoreSource};
use fusion_scales::{ScaleSet, TokenId};
use proptest::prelude::*;

/// A bigram table: row `k` is the start context, row `w` follows token `w`.
#[derive(Debug)]
struct Bigram(Vec<Vec<f64>>);

impl ScoreSource for Bigram {
    fn vocab_size(&self) -> usize {
        self.0[0].len()
    }

    fn log_probs(&self, history: &[TokenId]) -> Vec<f64> {
        let ctx = history.last().map_or(self.0.len() - 1, |&w| w as usize);
        self.0[ctx].clone()
    }
}

fn normalize(weights: &[f64]) -> Vec<f64> {
    let s: f64 = weights.iter().sum();
    weights.iter().map(|w| (w / s).ln()).collect()
}

fn top_score(
    am: &PositionwiseToyAM,
    lm: &Bigram,
    sc: &ScaleSet,
    beam: usize,
    len: usize,
) -> (Vec<TokenId>, f64) {
    let cfg = BeamConfig::new(beam, len, EosRule::Ignore).unwrap();
    let best = beam_search(am, lm, sc, &cfg).unwrap().remove(0);
    (best.tokens().0.clone(), sequence_score(&best, sc))
}

fn row(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, k).prop_map(|w| normalize(&w))
}

fn instance() -> impl Strategy<Value = (PositionwiseToyAM, Bigram, ScaleSet, usize)> {
    (2usize..5, 1usize..=2).prop_flat_map(|(k, n)| {
        (
            prop::collection::vec(row(k), n),
            prop::collection::vec(row(k), k + 1),
            prop::collection::vec(0.0f64..2.0, 2 * k),
        )
            .prop_map(move |(am, lm, s)| {
                let sc = ScaleSet::subword(s[..k].to_vec(), s[k..].to_vec()).unwrap();
                (PositionwiseToyAM::new(am).unwrap(), Bigram(lm), sc, n)
            })
    })
}

proptest! {
    // With at most two steps a wider beam keeps a superset of the narrower
    // beam's first-step prefixes, so the top-1 score cannot drop.
    #[test]
    fn wider_beam_never_loses_up_to_two_steps((am, lm, sc, n) in instance()) {
        let k = am.rows()[0].len();
        let mut prev = f64::NEG_INFINITY;
        for b in 1..=k * k {
            let (_, s) = top_score(&am, &lm, &sc, b, n);
            prop_assert!(s >= prev - 1e-12, "beam {} scored {} < {}", b, s, prev);
            prev = s;
        }
    }
}

#[test]
fn wider_beam_can_lose_at_three_steps() {
    // Found by randomized search and frozen. Beam 2 keeps prefixes (2) and (0)
    // after step 1, then (2, 0) and (2, 2) after step 2, pruning the greedy
    // path (0, 1, 2).
    let am = PositionwiseToyAM::new(vec![
        normalize(&[5.0, 2.0, 5.0]),
        normalize(&[5.0, 2.0, 5.0]),
        normalize(&[2.0, 2.0, 5.0]),
    ])
    .unwrap();
    let lm = Bigram(vec![
        normalize(&[1.0, 3.0, 1.0]),
        normalize(&[1.0, 2.0, 4.0]),
        normalize(&[5.0, 4.0, 3.0]),
        normalize(&[2.0, 3.0, 2.0]),
    ]);
    let sc = ScaleSet::agnostic(3, 1.0, 1.0).unwrap();
    let (narrow, s1) = top_score(&am, &lm, &sc, 1, 3);
    let (wide, s2) = top_score(&am, &lm, &sc, 2, 3);
    assert_eq!(narrow, vec![0, 1, 2]);
    assert_eq!(wide, vec![2, 0, 1]);
    // independent recomputation of both path scores
    let ln = f64::ln;
    let greedy = ln(5.0 / 12.0)
        + ln(2.0 / 7.0)
        + ln(2.0 / 12.0)
        + ln(3.0 / 5.0)
        + ln(5.0 / 9.0)
        + ln(4.0 / 7.0);
    let other = ln(5.0 / 12.0)
        + ln(2.0 / 7.0)
        + ln(5.0 / 12.0)
        + ln(5.0 / 12.0)
        + ln(2.0 / 9.0)
        + ln(3.0 / 5.0);
    assert!((s1 - greedy).abs() < 1e-12 && (s2 - other).abs() < 1e-12);
    assert!(s2 < s1);
}
