use csrm::corpus::{generate_world, Corpus, Product};
use csrm::model::{calibrate, Checkpoint, ModelConfig, ModelParams, TowerParams};
use csrm::pipeline::PipelineConfig;
use csrm::serving::{offline_scores, ScoreEntry, ServingOptions, ServingState, StudentPair};
use csrm::training::{eval_pairs, student_scores};

fn world() -> Corpus {
    let mut c = PipelineConfig::default();
    c.world.n_products = 200;
    c.world.n_queries = 60;
    generate_world(&c.resolved().world).unwrap()
}

fn model_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 512,
        d_emb: 12,
        d_out: 8,
        ..ModelConfig::default()
    }
}

fn checkpoint(t: TowerParams) -> Checkpoint {
    Checkpoint::new(
        ModelParams::Towers(t),
        serde_json::json!({}),
        "accuracy",
        0.0,
        0,
        0,
    )
}

fn students(seed: u64) -> StudentPair {
    StudentPair {
        em: checkpoint(TowerParams::init(&model_config(), seed).unwrap()),
        defect: checkpoint(TowerParams::init(&model_config(), seed + 100).unwrap()),
    }
}

fn scored(e: &ScoreEntry) -> (f64, f64, bool) {
    match e {
        ScoreEntry::Scored {
            em_score,
            defect_score,
            filtered,
            ..
        } => (*em_score, *defect_score, *filtered),
        ScoreEntry::Failed { product_id, error } => panic!("{product_id}: {error}"),
    }
}

fn ids(products: &[Product]) -> Vec<String> {
    products.iter().map(|p| p.id.clone()).collect()
}

#[test]
fn identical_towers_and_text_give_sigmoid_of_scale() {
    let mut t = TowerParams::init(&model_config(), 1).unwrap();
    t.product_proj = t.query_proj.clone();
    let corpus = world();
    let p = corpus.products[0].clone();
    let pair = StudentPair {
        em: checkpoint(t.clone()),
        defect: checkpoint(t),
    };
    let state =
        ServingState::new(pair, std::slice::from_ref(&p), ServingOptions::default()).unwrap();
    let out = state
        .score(&p.relevance_text(), std::slice::from_ref(&p.id))
        .unwrap();
    let (em, defect, filtered) = scored(&out.results[0]);
    let expected = 1.0 / (1.0 + (-8.0f64).exp());
    assert!((em - expected).abs() < 1e-9, "{em} vs {expected}");
    assert_eq!(em, defect);
    assert!(filtered);
    assert_eq!(calibrate(0.0, 8.0), 0.5);
}

#[test]
fn empty_and_unknown_ids() {
    let corpus = world();
    let state =
        ServingState::new(students(1), &corpus.products, ServingOptions::default()).unwrap();
    let out = state.score("anything", &[]).unwrap();
    assert_eq!(out.generation, 1);
    assert!(out.results.is_empty());

    let req = vec![corpus.products[3].id.clone(), "no-such-product".to_string()];
    let out = state.score(&corpus.queries[0].text, &req).unwrap();
    assert_eq!(out.results.len(), 2);
    assert!(matches!(out.results[0], ScoreEntry::Scored { .. }));
    match &out.results[1] {
        ScoreEntry::Failed { product_id, error } => {
            assert_eq!(product_id, "no-such-product");
            assert!(error.contains("no-such-product"));
        }
        other => panic!("expected a failure entry, got {other:?}"),
    }
}

#[test]
fn options_are_validated() {
    let corpus = world();
    for bad in [
        ServingOptions {
            defect_threshold: 2.0,
            ..ServingOptions::default()
        },
        ServingOptions {
            cache_capacity: 0,
            ..ServingOptions::default()
        },
        ServingOptions {
            scale: 0.0,
            ..ServingOptions::default()
        },
    ] {
        assert!(matches!(
            ServingState::new(students(1), &corpus.products, bad),
            Err(csrm::Error::Validation(_))
        ));
    }
    let mut dup = corpus.products[..2].to_vec();
    dup[1].id = dup[0].id.clone();
    assert!(ServingState::new(students(1), &dup, ServingOptions::default()).is_err());
}

#[test]
fn threshold_one_filters_nothing() {
    let corpus = world();
    let options = ServingOptions {
        defect_threshold: 1.0,
        ..ServingOptions::default()
    };
    let state = ServingState::new(students(2), &corpus.products, options).unwrap();
    for q in corpus.queries.iter().take(10) {
        let out = state.score(&q.text, &ids(&corpus.products)).unwrap();
        assert!(out.results.iter().all(|e| !scored(e).2));
    }
}

#[test]
fn refresh_with_same_inputs_keeps_scores() {
    let corpus = world();
    let state =
        ServingState::new(students(3), &corpus.products, ServingOptions::default()).unwrap();
    let all = ids(&corpus.products);
    let q = &corpus.queries[5].text;
    let before = state.score(q, &all).unwrap();
    assert_eq!(state.refresh_index(&corpus.products, None).unwrap(), 2);
    let after = state.score(q, &all).unwrap();
    assert_eq!(after.generation, 2);
    assert_eq!(before.results, after.results);
}

#[test]
fn retitling_one_product_changes_only_its_scores() {
    let corpus = world();
    let state =
        ServingState::new(students(4), &corpus.products, ServingOptions::default()).unwrap();
    let all = ids(&corpus.products);
    let q = &corpus.queries[7].text;
    let before = state.score(q, &all).unwrap();
    let mut products = corpus.products.clone();
    products[11].title = format!("{} refurbished edition", products[11].title);
    state.refresh_index(&products, None).unwrap();
    let after = state.score(q, &all).unwrap();
    for (i, (b, a)) in before.results.iter().zip(&after.results).enumerate() {
        if i == 11 {
            assert_ne!(scored(b).0, scored(a).0);
        } else {
            assert_eq!(b, a);
        }
    }
}

#[test]
fn refresh_can_swap_students() {
    let corpus = world();
    let state =
        ServingState::new(students(5), &corpus.products, ServingOptions::default()).unwrap();
    let all = ids(&corpus.products);
    let q = &corpus.queries[1].text;
    let before = state.score(q, &all).unwrap();
    state
        .refresh_index(&corpus.products, Some(students(6)))
        .unwrap();
    let after = state.score(q, &all).unwrap();
    assert_ne!(before.results, after.results);

    let fresh =
        ServingState::new(students(6), &corpus.products, ServingOptions::default()).unwrap();
    assert_eq!(fresh.score(q, &all).unwrap().results, after.results);
}

#[test]
fn cache_is_transparent_and_bounded() {
    let corpus = world();
    let options = ServingOptions {
        cache_capacity: 8,
        ..ServingOptions::default()
    };
    let state = ServingState::new(students(7), &corpus.products, options).unwrap();
    let sample = ids(&corpus.products[..20]);
    let cold: Vec<_> = corpus
        .queries
        .iter()
        .take(30)
        .map(|q| state.score(&q.text, &sample).unwrap())
        .collect();
    assert_eq!(state.cache_size(), 8);
    for (q, c) in corpus.queries.iter().take(30).zip(&cold) {
        assert_eq!(&state.score(&q.text, &sample).unwrap(), c);
        assert!(state.cache_size() <= 8);
    }
}

#[test]
fn online_scores_match_offline_references() {
    let corpus = world();
    let pair = students(8);
    let state =
        ServingState::new(pair.clone(), &corpus.products, ServingOptions::default()).unwrap();
    let vocab = model_config().vocab_size;
    let labeled: Vec<_> = corpus.pairs.iter().take(200).cloned().collect();
    let eval = eval_pairs(&corpus, &labeled, None, vocab).unwrap();
    let reference = student_scores(pair.em.towers(), &eval, 8.0).unwrap();
    let texts: Vec<(&str, &Product)> = labeled
        .iter()
        .map(|l| {
            (
                corpus.query(&l.query).unwrap().text.as_str(),
                corpus.product(&l.product).unwrap(),
            )
        })
        .collect();
    let offline = offline_scores(pair.em.towers(), &texts, 8.0).unwrap();
    let defect_offline = offline_scores(pair.defect.towers(), &texts, 8.0).unwrap();
    for (i, (q, p)) in texts.iter().enumerate() {
        let out = state.score(q, std::slice::from_ref(&p.id)).unwrap();
        let (em, defect, filtered) = scored(&out.results[0]);
        assert!((em - offline[i]).abs() <= 1e-6);
        assert!((em - reference[i]).abs() <= 1e-6);
        assert!((defect - defect_offline[i]).abs() <= 1e-6);
        assert_eq!(filtered, defect >= 0.5);
    }
}
