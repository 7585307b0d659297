use gencache_bench::catalog::Catalog;
use gencache_bench::generate::{gen_param_only, gen_param_w_synonym, generate_family, SPLIT_PROBABILITY};
use gencache_bench::oracle::{classify, extract, HitClass};
use gencache_bench::{run_bench, run_strategy, BenchOptions, Family, Strategy};
use proptest::prelude::*;

#[test]
fn split_sentences_are_about_one_in_ten() {
    for seed in 0..5 {
        let v = gen_param_w_synonym(&Catalog::builtin(), 1000, seed).unwrap();
        let share = v.iter().filter(|i| i.split).count() as f64 / 1000.0;
        assert!((share - SPLIT_PROBABILITY).abs() <= 0.03, "seed {seed}: {share}");
    }
}

#[test]
fn param_only_text_contains_its_ground_truth() {
    for i in gen_param_only(&Catalog::builtin(), 1000, 5).unwrap() {
        assert!(i.text.contains(&i.ground_truth.item) && i.text.contains(&i.ground_truth.price));
        assert!(!i.ground_truth.item.is_empty());
    }
}

#[test]
fn reports_are_identical_across_runs() {
    let opts = BenchOptions::default();
    for family in Family::ALL {
        let a = run_bench(family, 400, Strategy::GencacheFeedback, 21, &opts).unwrap();
        let b = run_bench(family, 400, Strategy::GencacheFeedback, 21, &opts).unwrap();
        assert_eq!(a.to_json(), b.to_json(), "{family}");
    }
}

#[test]
fn hit_shares_add_up() {
    let opts = BenchOptions::default();
    for strategy in Strategy::ALL {
        let r = run_bench(Family::ParamWithSynonym, 500, strategy, 4, &opts).unwrap();
        assert_eq!(r.hits + r.misses, r.n as u64);
        assert_eq!(r.positive_hits + r.negative_hits, r.hits);
        if r.hits > 0 {
            assert!((r.positive_hit_rate + r.negative_hit_rate - 100.0).abs() < 1e-9, "{strategy}");
        }
    }
}

#[test]
fn feedback_never_raises_the_negative_share() {
    let opts = BenchOptions::default();
    for seed in 0..4 {
        let plain = run_bench(Family::ParamWithSynonym, 600, Strategy::Gencache, seed, &opts).unwrap();
        let fb = run_bench(Family::ParamWithSynonym, 600, Strategy::GencacheFeedback, seed, &opts).unwrap();
        assert!(fb.negative_hit_rate <= plain.negative_hit_rate, "seed {seed}");
        assert_eq!(fb.reissued_requests, fb.negative_hits);
    }
}

#[test]
fn steady_hits_drive_the_ratio_down() {
    let r = run_bench(Family::ParamOnly, 2000, Strategy::Gencache, 3, &BenchOptions::default()).unwrap();
    let tail: Vec<f64> = r.ratio_series.iter().filter_map(|p| p.ratio).collect();
    assert!(tail.len() > 5);
    assert!(tail.windows(2).all(|w| w[1] < w[0]), "{tail:?}");
    assert!(*tail.last().unwrap() < 1.0);
}

#[test]
fn exact_and_semantic_baselines_behave() {
    let opts = BenchOptions::default();
    let catalog = Catalog::builtin();
    for family in Family::ALL {
        let stream = generate_family(&catalog, family, 600, 9).unwrap();
        let exact = run_strategy(Strategy::Exact, family, &stream, 9, &opts).unwrap();
        assert_eq!(exact.hits, 0);
        assert_eq!(exact.negative_hits, 0);
        let semantic = run_strategy(Strategy::Semantic, family, &stream, 9, &opts).unwrap();
        assert_eq!(semantic.positive_hits, 0, "{family}");
    }
}

#[test]
fn exact_repeats_are_positive_hits() {
    let mut stream = gen_param_only(&Catalog::builtin(), 50, 2).unwrap();
    stream.extend(stream.clone());
    let r = run_strategy(Strategy::Exact, Family::ParamOnly, &stream, 2, &BenchOptions::default()).unwrap();
    assert_eq!((r.hits, r.positive_hits), (50, 50));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn oracle_is_sound_for_any_seed(seed in any::<u64>()) {
        for family in Family::ALL {
            for i in generate_family(&Catalog::builtin(), family, 100, seed).unwrap() {
                prop_assert_eq!(extract(family, &i.text), Some(i.ground_truth.clone()));
                let answer = gencache_bench::generate::expected_response(&i.ground_truth);
                prop_assert_eq!(classify(&answer, &i.ground_truth), HitClass::Positive);
            }
        }
    }
}
