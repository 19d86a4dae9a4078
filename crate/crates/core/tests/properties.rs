use std::collections::HashSet;

use csrm::corpus::{
    generate_world, inject_label_noise, true_label, LabeledPair, Language, Market, RelevanceLabel,
    SoftLabel, SyntheticWorldSpec,
};
use csrm::metrics::{accuracy, defect_at_5, em_at_1, micro_f1, transfer_gap_auto, RankedResult};
use csrm::model::{
    binary_kd_loss, blended_loss, blended_target, calibrate, contrastive_distill_loss, encode_ids,
    loss, mse_distill_loss, norm, soft_ce, softmax3, BinaryKdObjective, KdExample, ModelConfig,
    Tower, TowerParams,
};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = RelevanceLabel> {
    (0usize..3).prop_map(RelevanceLabel::from_simplex_index)
}

fn simplex() -> impl Strategy<Value = SoftLabel> {
    (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_filter_map("degenerate", |(a, b, c)| {
        let s = a + b + c;
        (s > 1e-3)
            .then(|| SoftLabel::new(a / s, b / s, 1.0 - a / s - b / s).ok())
            .flatten()
    })
}

fn labelled_pairs() -> impl Strategy<Value = Vec<(RelevanceLabel, RelevanceLabel)>> {
    prop::collection::vec((label(), label()), 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn micro_f1_equals_accuracy(pairs in labelled_pairs()) {
        let (p, y): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let f = micro_f1(&p, &y).unwrap();
        prop_assert!((f - accuracy(&p, &y).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn micro_f1_ignores_order(pairs in labelled_pairs(), rot in 0usize..60) {
        let (p, y): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let mut shuffled = pairs.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let (p2, y2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
        prop_assert_eq!(micro_f1(&p, &y).unwrap(), micro_f1(&p2, &y2).unwrap());
    }

    #[test]
    fn ranking_metrics_are_monotone(
        lists in prop::collection::vec(prop::collection::vec(0usize..20, 1..8), 1..10),
        bad in prop::collection::hash_set(0usize..20, 0..20),
        cured in 0usize..20,
    ) {
        let results: Vec<RankedResult> = lists
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut seen = HashSet::new();
                let ids: Vec<String> = l.iter().filter(|p| seen.insert(**p)).map(|p| format!("p{p}")).collect();
                RankedResult { query_id: format!("q{i}"), product_ids: ids }
            })
            .collect();
        let oracle = |bad: &HashSet<usize>| {
            let bad = bad.clone();
            move |_: &str, p: &str| {
                let n: usize = p[1..].parse().unwrap();
                Some(if bad.contains(&n) { RelevanceLabel::Irrelevant } else { RelevanceLabel::Exact })
            }
        };
        let before = defect_at_5(&results, oracle(&bad)).unwrap();
        let em_before = em_at_1(&results, oracle(&bad)).unwrap();
        let mut fewer = bad.clone();
        fewer.remove(&cured);
        let after = defect_at_5(&results, oracle(&fewer)).unwrap();
        let em_after = em_at_1(&results, oracle(&fewer)).unwrap();
        prop_assert!(after >= before);
        prop_assert!(em_after >= em_before);
        for v in [before, after, em_before, em_after] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn transfer_gap_vanishes_on_identical_pairs(
        vs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 3..12),
        shift in prop::collection::vec(-0.5f64..0.5, 4),
    ) {
        let same: Vec<(Vec<f64>, Vec<f64>)> = vs.iter().map(|v| (v.clone(), v.clone())).collect();
        if let Ok(g) = transfer_gap_auto(&same) {
            prop_assert_eq!(g.gap, 0.0);
        }
        let moved: Vec<(Vec<f64>, Vec<f64>)> =
            vs.iter().map(|v| (v.iter().zip(&shift).map(|(a, b)| a + b).collect(), v.clone())).collect();
        if let Ok(g) = transfer_gap_auto(&moved) {
            prop_assert!(g.gap >= 0.0);
        }
    }

    #[test]
    fn encodings_have_unit_norm(ids in prop::collection::vec(0usize..64, 1..12), seed in 0u64..1000) {
        let t = TowerParams::init(&ModelConfig { vocab_size: 64, d_emb: 6, d_out: 5, ..ModelConfig::default() }, seed).unwrap();
        for tower in [Tower::Query, Tower::Product] {
            let e = encode_ids(&t, tower, &ids).unwrap();
            prop_assert!((norm(&e.output) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn calibration_is_symmetric(c in -1.0f64..1.0, s in 0.1f64..20.0) {
        prop_assert!((calibrate(c, s) + calibrate(-c, s) - 1.0).abs() < 1e-12);
        prop_assert!(calibrate(c, s) > 0.0 && calibrate(c, s) < 1.0);
    }

    #[test]
    fn softmax_is_shift_invariant(z in prop::array::uniform3(-30.0f64..30.0), k in -100.0f64..100.0) {
        let p = softmax3(z);
        let q = softmax3(z.map(|v| v + k));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for c in 0..3 {
            prop_assert!((p[c] - q[c]).abs() < 1e-9);
        }
        let argmax = |a: [f64; 3]| (0..3).fold(0, |b, c| if a[c] > a[b] { c } else { b });
        prop_assert_eq!(argmax(p), argmax(z));
    }

    #[test]
    fn blended_loss_is_linear_in_alpha(hard in label(), soft in simplex(), pred in simplex(), a in 0.0f64..1.0) {
        let l0 = blended_loss(hard, &soft, &pred, 0.0).unwrap();
        let l1 = blended_loss(hard, &soft, &pred, 1.0).unwrap();
        let la = blended_loss(hard, &soft, &pred, a).unwrap();
        prop_assert!((la - (a * l1 + (1.0 - a) * l0)).abs() < 1e-9);
        let t = blended_target(hard, Some(&soft), a);
        let t = SoftLabel::new(t[0], t[1], t[2]).unwrap();
        t.validate(1e-9).unwrap();
        prop_assert!((soft_ce(&t, &pred).unwrap() - la).abs() < 1e-9);
        prop_assert!(blended_loss(hard, &soft, &pred, 1.5).is_err());
    }

    #[test]
    fn losses_are_nonnegative(
        target in simplex(),
        pred in simplex(),
        p in 0.0f64..=1.0,
        q in 0.0f64..=1.0,
        pos in -1.0f64..1.0,
        negs in prop::collection::vec(-1.0f64..1.0, 1..6),
        cvr in 0.0f64..=1.0,
    ) {
        prop_assert!(soft_ce(&target, &pred).unwrap() >= 0.0);
        prop_assert!(binary_kd_loss(p, q).unwrap() >= 0.0);
        prop_assert!(contrastive_distill_loss(pos, &negs, cvr).unwrap() >= 0.0);
        prop_assert!(mse_distill_loss(pos, cvr, 8.0, false) >= 0.0);
        prop_assert!(binary_kd_loss(1.5, q).is_err());
    }

    #[test]
    fn kd_loss_is_bounded_below_by_teacher_entropy(
        seed in 0u64..1000,
        rows in prop::collection::vec((prop::collection::vec(0usize..32, 1..5), prop::collection::vec(0usize..32, 1..5), 0.0f64..=1.0), 1..8),
    ) {
        let t = TowerParams::init(&ModelConfig { vocab_size: 32, d_emb: 5, d_out: 4, ..ModelConfig::default() }, seed).unwrap();
        let examples: Vec<KdExample> =
            rows.into_iter().map(|(query, product, target)| KdExample { query, product, target }).collect();
        let entropy = |p: f64| if p <= 0.0 || p >= 1.0 { 0.0 } else { -(p * p.ln() + (1.0 - p) * (1.0 - p).ln()) };
        let floor = examples.iter().map(|e| entropy(e.target)).sum::<f64>() / examples.len() as f64;
        let objective = BinaryKdObjective { examples, scale: 8.0 };
        prop_assert!(loss(&objective, &t).unwrap() >= floor - 1e-12);
    }

    #[test]
    fn soft_ce_is_minimized_by_the_target(target in simplex(), pred in simplex()) {
        let lo = soft_ce(&target, &target).unwrap();
        prop_assert!(soft_ce(&target, &pred).unwrap() >= lo - 1e-9);
    }
}

fn pairs(n: usize) -> Vec<LabeledPair> {
    (0..n)
        .map(|i| LabeledPair {
            query: format!("q{i}"),
            product: format!("p{i}"),
            label: RelevanceLabel::from_simplex_index(i % 3),
            market: Market::Target,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noise_flips_at_the_configured_rate(rate in 0.0f64..0.5, seed in 0u64..10_000) {
        let clean = pairs(4000);
        let noisy = inject_label_noise(&clean, rate, seed).unwrap();
        prop_assert_eq!(noisy.len(), clean.len());
        let flipped = clean.iter().zip(&noisy).filter(|(a, b)| a.label != b.label).count() as f64;
        let n = clean.len() as f64;
        let sd = (n * rate * (1.0 - rate)).sqrt();
        prop_assert!((flipped - n * rate).abs() <= 5.0 * sd + 1.0, "{flipped} flips at rate {rate}");
        for (a, b) in clean.iter().zip(&noisy) {
            prop_assert_eq!(&a.query, &b.query);
            prop_assert_eq!(&a.product, &b.product);
        }
        prop_assert_eq!(&inject_label_noise(&clean, rate, seed).unwrap(), &noisy);
    }

    #[test]
    fn translation_round_trips_and_keeps_labels(seed in 0u64..1000) {
        let spec = SyntheticWorldSpec {
            n_categories: 5,
            n_brands: 6,
            n_attribute_tokens: 25,
            n_products: 60,
            n_queries: 20,
            brands_per_category: 3,
            seed,
            ..SyntheticWorldSpec::default()
        };
        let w = generate_world(&spec).unwrap();
        let lex = &w.world.lexicon;
        for pair in w.pairs.iter().filter(|p| p.market == Market::Source) {
            let q = w.query(&pair.query).unwrap();
            let p = w.product(&pair.product).unwrap();
            prop_assert_eq!(true_label(q, p), pair.label);
            let back = lex.translate(&lex.translate(&q.text, Language::L2).unwrap(), Language::L1).unwrap();
            prop_assert_eq!(&back, &q.text);
            let mut tq = q.clone();
            tq.brand = q.brand.as_ref().map(|b| lex.translate(b, Language::L2).unwrap());
            tq.category = lex.translate(&q.category, Language::L2).unwrap();
            let mut tp = p.clone();
            tp.brand = lex.translate(&p.brand, Language::L2).unwrap();
            tp.category = lex.translate(&p.category, Language::L2).unwrap();
            prop_assert_eq!(true_label(&tq, &tp), pair.label);
        }
    }
}

#[test]
fn zero_noise_is_identity() {
    let clean = pairs(300);
    assert_eq!(inject_label_noise(&clean, 0.0, 7).unwrap(), clean);
    assert!(inject_label_noise(&clean, 1.0, 7).is_err());
}
