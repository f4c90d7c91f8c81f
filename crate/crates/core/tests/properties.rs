use bonlab::bon::{binary_bon_dist, bon_dist, TieBreak};
use bonlab::estimators::{g_minus, g_plus, g_plus_bar};
use bonlab::oracle::brute_force_bon_probs;
use bonlab::policies::{softmax, Policy, Temperature};
use proptest::prelude::*;

fn logits(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0f64..4.0, m)
}

proptest! {
    #[test]
    fn bon_dist_is_normalised(l in (2usize..12).prop_flat_map(logits), n in 1u64..300, t in 0.1f64..3.0, seed in any::<u64>()) {
        let p = softmax(&l, Temperature::new(t).unwrap());
        let scores: Vec<f64> = (0..p.len()).map(|i| ((seed >> (i % 60)) & 3) as f64).collect();
        let d = bon_dist(&p, &scores, n);
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(d.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn score_function_has_zero_mean(l in (2usize..10).prop_flat_map(logits), t in 0.2f64..3.0) {
        let m = l.len();
        let pol = Policy::tabular(1, m, l).unwrap();
        let t = Temperature::new(t).unwrap();
        let p = pol.prob_dist(0, t).unwrap();
        let mut acc = vec![0.0; m];
        for y in 0..m {
            for (a, g) in acc.iter_mut().zip(pol.grad_log_prob(0, y, t).unwrap()) {
                *a += p[y] * g;
            }
        }
        prop_assert!(acc.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn weight_identities(n in 1u64..64, p in 0.001f64..0.999) {
        let nf = n as f64;
        let gp = g_plus(n, p).unwrap();
        prop_assert!(((1.0 - p.powf(nf)) * gp - nf * p.powf(nf - 1.0)).abs() <= 1e-10 * nf);
        prop_assert!((g_minus(n, p).unwrap() * (1.0 - p) - nf * p).abs() <= 1e-10 * nf);
        prop_assert!((g_plus_bar(n, p).unwrap() - gp * (1.0 - p)).abs() <= 1e-12 * gp.max(1.0));
    }

    #[test]
    fn three_way_agreement(l in (2usize..5).prop_flat_map(logits), n in 1u64..5, bits in any::<u8>()) {
        let m = l.len();
        let p = softmax(&l, Temperature::ONE);
        let mut reward: Vec<bool> = (0..m).map(|i| bits >> i & 1 == 1).collect();
        if !reward.iter().any(|r| *r) {
            reward[0] = true;
        }
        let scores: Vec<f64> = reward.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect();
        let exact = bon_dist(&p, &scores, n);
        let brute = brute_force_bon_probs(&p, &scores, n, TieBreak::UniformAmongMax).unwrap();
        let binary = binary_bon_dist(&p, &reward, n);
        for y in 0..m {
            prop_assert!((exact[y] - brute[y]).abs() < 1e-12);
            prop_assert!((exact[y] - binary[y]).abs() < 1e-12);
        }
    }
}
