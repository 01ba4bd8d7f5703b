//! The MLE combiner against posterior enumeration, and its flip-rate law.

use props_core::mechanisms::{
    props_label, randomized_response, BinaryLabel, CombinerParams, RRParams,
};
use props_core::seeded_rng;
use proptest::prelude::*;
use rand::Rng;

const LABELS: [BinaryLabel; 2] = [BinaryLabel::Zero, BinaryLabel::One];

fn grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 * 0.05).collect()
}

fn likelihood(observed: BinaryLabel, truth: BinaryLabel, flip: f64) -> f64 {
    if observed == truth {
        1.0 - flip
    } else {
        flip
    }
}

/// Posterior argmax over the joint table of (l*, l_rr, l_model) with a
/// uniform prior on l*; ties go to 1.
fn posterior_argmax(
    l_rr: BinaryLabel,
    l_model: BinaryLabel,
    gamma_eps: f64,
    gamma_model: f64,
) -> BinaryLabel {
    let joint =
        |truth| 0.5 * likelihood(l_rr, truth, gamma_eps) * likelihood(l_model, truth, gamma_model);
    if joint(BinaryLabel::One) >= joint(BinaryLabel::Zero) {
        BinaryLabel::One
    } else {
        BinaryLabel::Zero
    }
}

#[test]
fn matches_posterior_table_on_grid() {
    let mut checked = 0;
    for &ge in &grid() {
        for &gm in &grid() {
            let params = CombinerParams::new(ge, gm).unwrap();
            for rr in LABELS {
                for m in LABELS {
                    assert_eq!(
                        props_label(rr, m, &params),
                        posterior_argmax(rr, m, ge, gm),
                        "rr={rr} model={m} gamma_eps={ge} gamma_model={gm}"
                    );
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 4 * 81);
}

fn flip(label: BinaryLabel, gamma: f64, rng: &mut impl Rng) -> BinaryLabel {
    if rng.random::<f64>() < gamma {
        !label
    } else {
        label
    }
}

#[test]
fn flip_rate_is_min_of_the_two_rates() {
    let n = 200_000;
    for (i, &ge) in [0.1f64, 0.25, 0.4].iter().enumerate() {
        for (j, &gm) in [0.1, 0.25, 0.4].iter().enumerate() {
            let mut rng = seeded_rng(1000 + (3 * i + j) as u64, 0);
            let truth: Vec<BinaryLabel> = (0..n)
                .map(|_| BinaryLabel::from_bool(rng.random()))
                .collect();
            let rr = RRParams::new(((1.0 - ge) / ge).ln()).unwrap();
            let l_rr = randomized_response(&truth, &rr, &mut rng);
            let l_model: Vec<BinaryLabel> = truth.iter().map(|&l| flip(l, gm, &mut rng)).collect();
            let params = CombinerParams::new(rr.gamma_eps(), gm).unwrap();
            let wrong = truth
                .iter()
                .zip(&l_rr)
                .zip(&l_model)
                .filter(|((&t, &r), &m)| props_label(r, m, &params) != t)
                .count();
            let rate = wrong as f64 / n as f64;
            let expected = ge.min(gm);
            assert!(
                (rate - expected).abs() <= 0.01,
                "gamma_eps={ge} gamma_model={gm}: rate {rate} vs {expected}"
            );
        }
    }
}

fn label() -> impl Strategy<Value = BinaryLabel> {
    any::<bool>().prop_map(BinaryLabel::from_bool)
}

proptest! {
    #[test]
    fn selector_property(ge in 0.001f64..0.499, gm in 0.001f64..0.499, rr in label(), m in label()) {
        prop_assume!(ge != gm);
        let params = CombinerParams::new(ge, gm).unwrap();
        let chosen = props_label(rr, m, &params);
        if gm < ge {
            prop_assert_eq!(chosen, m);
        } else {
            prop_assert_eq!(chosen, rr);
        }
    }

    #[test]
    fn agreement_is_kept(ge in 0.001f64..0.499, gm in 0.001f64..0.499, l in label()) {
        let params = CombinerParams::new(ge, gm).unwrap();
        prop_assert_eq!(props_label(l, l, &params), l);
    }

    #[test]
    fn equal_rates_tie_to_one(g in 0.001f64..0.499, l in label()) {
        let params = CombinerParams::new(g, g).unwrap();
        prop_assert_eq!(props_label(l, !l, &params), BinaryLabel::One);
    }
}
