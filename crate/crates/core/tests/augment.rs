use gel_core::augment::{ssa, wildcard, Augmentation, EmbeddedBatch, SsaConfig, WtConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn normal_batch(n: usize, c: usize, d: usize, seed: u64) -> EmbeddedBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * c * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    EmbeddedBatch::new(n, c, d, data, vec![true; n * c]).unwrap()
}

/// (dimension, delta) for every position that changed.
fn changes(before: &EmbeddedBatch, after: &EmbeddedBatch) -> Vec<(usize, f64)> {
    let d = before.d;
    let mut out = Vec::new();
    for (a, b) in before.data.chunks(d).zip(after.data.chunks(d)) {
        let diff: Vec<usize> = (0..d).filter(|&j| a[j].to_bits() != b[j].to_bits()).collect();
        assert!(diff.len() <= 1, "{} coordinates changed", diff.len());
        if let Some(&j) = diff.first() {
            out.push((j, b[j] as f64 - a[j] as f64));
        }
    }
    out
}

#[test]
fn zero_gamma_is_bit_identity() {
    let mut b = normal_batch(4, 20, 10, 1);
    b.data[3] = -0.0;
    b.data[7] = f32::MIN_POSITIVE / 2.0;
    let out = ssa(&b, &SsaConfig::new(0.0), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&out.data), bits(&b.data));
}

#[test]
fn perturbation_is_uniform_in_value_and_dimension() {
    let (n, d, gamma) = (100_000, 10, 2.0);
    let b = normal_batch(1, n, d, 3);
    let out = ssa(&b, &SsaConfig::new(gamma), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let ch = changes(&b, &out);
    // u == 0 exactly would go unseen; with continuous u it never happens here
    assert_eq!(ch.len(), n);

    let mut u: Vec<f64> = ch.iter().map(|&(_, du)| du).collect();
    assert!(u.iter().all(|x| x.abs() <= gamma));
    u.sort_by(f64::total_cmp);
    let mut ks: f64 = 0.0;
    for (i, &x) in u.iter().enumerate() {
        let f = (x + gamma) / (2.0 * gamma);
        ks = ks.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
    }
    let alpha: f64 = 0.01;
    let ks_crit = (-0.5 * (alpha / 2.0).ln()).sqrt() / (n as f64).sqrt();
    assert!(ks < ks_crit, "KS {ks} >= {ks_crit}");

    let mut counts = vec![0usize; d];
    for &(j, _) in &ch {
        counts[j] += 1;
    }
    let expected = n as f64 / d as f64;
    let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let crit = ChiSquared::new((d - 1) as f64).unwrap().inverse_cdf(1.0 - alpha);
    assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
}

#[test]
fn rate_controls_fraction_of_perturbed_positions() {
    let n = 100_000;
    let b = normal_batch(1, n, 4, 5);
    let cfg = SsaConfig { gamma: 1.0, rate: 0.3, seed: 0 };
    let k = changes(&b, &ssa(&b, &cfg, &mut ChaCha8Rng::seed_from_u64(6)).unwrap()).len() as f64;
    let sd = (n as f64 * 0.3 * 0.7).sqrt();
    assert!((k - 0.3 * n as f64).abs() < 5.0 * sd, "{k}");
}

#[test]
fn fresh_randomness_each_call() {
    let b = normal_batch(2, 10, 4, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = ssa(&b, &SsaConfig::new(1.0), &mut rng).unwrap();
    let c = ssa(&b, &SsaConfig::new(1.0), &mut rng).unwrap();
    assert_ne!(a, c);
}

#[test]
fn wildcard_zeroes_expected_fraction() {
    let n = 100_000;
    let b = normal_batch(1, n, 4, 9);
    let out = wildcard(&b, &WtConfig { p_wt: 0.1, seed: 0 }, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    let zeroed = out.data.chunks(4).filter(|v| v.iter().all(|&x| x == 0.0)).count();
    let frac = zeroed as f64 / n as f64;
    assert!((0.094..=0.106).contains(&frac), "{frac}");
    for (a, o) in b.data.chunks(4).zip(out.data.chunks(4)) {
        assert!(a == o || o.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn wildcard_extremes() {
    let b = normal_batch(3, 7, 5, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    assert_eq!(wildcard(&b, &WtConfig { p_wt: 0.0, seed: 0 }, &mut rng).unwrap(), b);
    let all = wildcard(&b, &WtConfig { p_wt: 1.0, seed: 0 }, &mut rng).unwrap();
    assert!(all.data.iter().all(|&x| x == 0.0));
}

#[test]
fn invalid_configs_are_rejected() {
    for a in [
        Augmentation::Ssa(SsaConfig::new(-1.0)),
        Augmentation::Ssa(SsaConfig { gamma: 1.0, rate: 1.5, seed: 0 }),
        Augmentation::Wt(WtConfig { p_wt: -0.1, seed: 0 }),
    ] {
        assert!(a.validate().is_err(), "{a:?}");
    }
}

#[test]
fn perturbed_values_stay_within_widened_range() {
    let gamma = 2.0;
    let b = normal_batch(8, 50, 10, 13);
    let out = ssa(&b, &SsaConfig::new(gamma), &mut ChaCha8Rng::seed_from_u64(14)).unwrap();
    for j in 0..10 {
        let col = |e: &EmbeddedBatch| e.data.iter().skip(j).step_by(10).map(|&v| v as f64).collect::<Vec<_>>();
        let (lo, hi) = col(&b).into_iter().fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(v), h.max(v)));
        assert!(col(&out).iter().all(|&v| v >= lo - gamma && v <= hi + gamma));
    }
}

proptest! {
    #[test]
    fn at_most_one_coordinate_moves_by_at_most_gamma(
        seed in any::<u64>(),
        gamma in 0.0f64..5.0,
        d in 1usize..12,
        values in prop::collection::vec(-1e3f32..1e3, 1..40),
        pad_every in 2usize..6,
    ) {
        let c = values.len();
        let data: Vec<f32> = values.iter().flat_map(|&v| (0..d).map(move |j| v * (j as f32 + 1.0) / 7.0)).collect();
        let mask: Vec<bool> = (0..c).map(|p| p % pad_every != 0).collect();
        let b = EmbeddedBatch::new(1, c, d, data, mask.clone()).unwrap();
        let out = ssa(&b, &SsaConfig::new(gamma), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for (p, (a, o)) in b.data.chunks(d).zip(out.data.chunks(d)).enumerate() {
            let moved: Vec<usize> = (0..d).filter(|&j| a[j].to_bits() != o[j].to_bits()).collect();
            prop_assert!(moved.len() <= 1);
            if !mask[p] {
                prop_assert!(moved.is_empty());
            }
            for j in moved {
                prop_assert!((o[j] as f64 - a[j] as f64).abs() <= gamma);
            }
        }
    }
}
