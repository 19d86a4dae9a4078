//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use csrm::corpus::{tokenize, Language, Product, RelevanceLabel};
use csrm::metrics::{accuracy, micro_f1, transfer_gap};
use csrm::model::{
    blended_target, calibrate, check_grad, AlignmentObjective, BinaryKdObjective, CvrExample,
    EbrDistillObjective, KdExample, ModelConfig, RelevanceExample, RelevanceModel,
    RelevanceObjective,
};
use csrm::pipeline::{self, run_ablation, AblationReport, Context, PipelineConfig};
use csrm::retrieval::{bm25_search, build_bm25, RetrieverTag};
use csrm::serving::{offline_scores, ScoreEntry, ScoreResponse};
use csrm_server::{AppState, RoutePaths, RunningServer, ScoreRequest};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fmt(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

// ---------------------------------------------------------------- AC-1

fn ids(rng: &mut ChaCha8Rng, vocab: usize) -> Vec<usize> {
    (0..rng.random_range(1..5))
        .map(|_| rng.random_range(0..vocab))
        .collect()
}

fn simplex(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let w: [f64; 3] = [rng.random(), rng.random(), rng.random::<f64>() + 1e-3];
    let s: f64 = w.iter().sum();
    w.map(|x| x / s)
}

fn tiny_model(rng: &mut ChaCha8Rng) -> RelevanceModel {
    let cfg = ModelConfig {
        vocab_size: 32,
        d_emb: 5,
        d_out: 4,
        init_std: 0.7,
    };
    let mut m = RelevanceModel::init(&cfg, rng.random()).unwrap();
    for v in m.head.data.iter_mut() {
        *v += rng.random_range(-0.5..0.5);
    }
    m
}

fn ac1() -> Outcome {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = [0.0f64; 5];
    let names = [
        "soft_ce",
        "blended",
        "binary_kd",
        "contrastive+mse",
        "alignment",
    ];
    for _ in 0..100 {
        let m = tiny_model(&mut rng);
        let n = rng.random_range(1..4);

        let examples = (0..n)
            .map(|_| RelevanceExample {
                query: ids(&mut rng, 32),
                product: ids(&mut rng, 32),
                target: simplex(&mut rng),
            })
            .collect();
        worst[0] = worst[0].max(check_grad(&RelevanceObjective { examples }, &m, H).unwrap());

        let examples = (0..n)
            .map(|_| {
                let soft = simplex(&mut rng);
                let soft = csrm::corpus::SoftLabel::new(soft[0], soft[1], soft[2]).unwrap();
                let hard = RelevanceLabel::from_simplex_index(rng.random_range(0..3));
                RelevanceExample {
                    query: ids(&mut rng, 32),
                    product: ids(&mut rng, 32),
                    target: blended_target(hard, Some(&soft), 0.5),
                }
            })
            .collect();
        worst[1] = worst[1].max(check_grad(&RelevanceObjective { examples }, &m, H).unwrap());

        let examples = (0..n)
            .map(|_| KdExample {
                query: ids(&mut rng, 32),
                product: ids(&mut rng, 32),
                target: rng.random(),
            })
            .collect();
        let kd = BinaryKdObjective {
            examples,
            scale: 8.0,
        };
        worst[2] = worst[2].max(check_grad(&kd, &m.towers, H).unwrap());

        let examples = (0..n + 1)
            .map(|_| CvrExample {
                query: ids(&mut rng, 32),
                product: ids(&mut rng, 32),
                cvr: rng.random_range(0.0..0.5),
            })
            .collect();
        let ebr = EbrDistillObjective {
            examples,
            negatives: rng.random_range(1..4),
            scale: 8.0,
            raw_inner_product: rng.random(),
        };
        worst[3] = worst[3].max(check_grad(&ebr, &m.towers, H).unwrap());

        let pairs = (0..n)
            .map(|_| (ids(&mut rng, 32), ids(&mut rng, 32)))
            .collect();
        worst[4] = worst[4].max(check_grad(&AlignmentObjective { pairs }, &m.towers, H).unwrap());
    }
    let detail = names
        .iter()
        .zip(&worst)
        .map(|(n, w)| format!("{n} {w:.2e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        worst.iter().all(|w| *w <= TOL),
        format!("max relative error over 100 instances each: {detail}"),
    )
}

// ---------------------------------------------------------------- AC-2

fn okapi(docs: &[Product], query: &str) -> Vec<(String, f64)> {
    let (k1, b) = (1.2, 0.75);
    let toks: Vec<Vec<String>> = docs.iter().map(|d| tokenize(&d.title)).collect();
    let n = docs.len() as f64;
    let avgdl = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut out = Vec::new();
    for (d, t) in docs.iter().zip(&toks) {
        let mut score = 0.0;
        let mut hit = false;
        for term in tokenize(query) {
            let tf = t.iter().filter(|x| **x == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            hit = true;
            let df = toks.iter().filter(|ts| ts.contains(&term)).count() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * t.len() as f64 / avgdl));
        }
        if hit {
            out.push((d.id.clone(), score));
        }
    }
    out.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    out
}

fn ac2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
    let mut worst = 0.0f64;
    let mut order_mismatches = 0;
    for c in 0..100 {
        let docs: Vec<Product> = (0..rng.random_range(1..=20))
            .map(|i| Product {
                id: format!("c{c}-d{i:02}"),
                title: (0..rng.random_range(1..=6))
                    .map(|_| words.choose(&mut rng).unwrap().as_str())
                    .collect::<Vec<_>>()
                    .join(" "),
                description: String::new(),
                brand: "b".into(),
                category: "x/y".into(),
                language: Language::L1,
            })
            .collect();
        let index = build_bm25(&docs, 1.2, 0.75).unwrap();
        for _ in 0..5 {
            let q: Vec<&str> = (0..rng.random_range(1..=4))
                .map(|_| words.choose(&mut rng).unwrap().as_str())
                .collect();
            let q = q.join(" ");
            let got = bm25_search(&index, &q, docs.len());
            let want = okapi(&docs, &q);
            if got.len() != want.len() || got.iter().zip(&want).any(|(g, w)| g.0 != w.0) {
                order_mismatches += 1;
                continue;
            }
            for (g, w) in got.iter().zip(&want) {
                worst = worst.max((g.1 - w.1).abs());
            }
        }
    }
    outcome(
        order_mismatches == 0 && worst <= 1e-9,
        format!("100 corpora x 5 queries: {order_mismatches} order mismatches, max score diff {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- AC-3

fn ac3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..50);
        let draw =
            |rng: &mut ChaCha8Rng| RelevanceLabel::from_simplex_index(rng.random_range(0..3));
        let y: Vec<_> = (0..n).map(|_| draw(&mut rng)).collect();
        let p: Vec<_> = (0..n).map(|_| draw(&mut rng)).collect();
        worst = worst.max((micro_f1(&p, &y).unwrap() - accuracy(&p, &y).unwrap()).abs());
    }
    let pairs = vec![
        (vec![1.0, 0.0], vec![1.0, 0.0]),
        (vec![0.0, 0.0], vec![-1.0, 0.0]),
    ];
    let gap = transfer_gap(&pairs, &[0.0, 0.0]).unwrap().gap;
    let mid = calibrate(0.0, 8.0);
    outcome(
        worst <= 1e-12 && (gap - 0.5).abs() <= 1e-9 && mid == 0.5,
        format!("|micro_f1 - accuracy| max {worst:.1e} over 1000 sets; 2-pair gap {gap}; calibrate(0, 8) = {mid}"),
    )
}

// ---------------------------------------------------------------- AC-4..7

fn row(r: &AblationReport, name: &str) -> csrm::pipeline::AblationRow {
    r.row(name)
        .unwrap_or_else(|| panic!("row {name} missing"))
        .clone()
}

fn ac4(reports: &[AblationReport]) -> Outcome {
    let gap0: Vec<f64> = reports.iter().map(|r| row(r, "SFT").transfer_gap).collect();
    let gap1: Vec<f64> = reports
        .iter()
        .map(|r| row(r, "SFT+MT").transfer_gap)
        .collect();
    let f0: Vec<f64> = reports
        .iter()
        .map(|r| row(r, "SFT").scores.l2_dev_f1)
        .collect();
    let f1: Vec<f64> = reports
        .iter()
        .map(|r| row(r, "SFT+MT").scores.l2_dev_f1)
        .collect();
    let (g0, g1, d0, d1) = (
        median(gap0.clone()),
        median(gap1.clone()),
        median(f0.clone()),
        median(f1.clone()),
    );
    outcome(
        g1 < g0 && d1 >= d0,
        format!(
            "median gap {g0:.3} -> {g1:.3} [{} | {}]; median L2 dev F1 {d0:.3} -> {d1:.3} [{} | {}]",
            fmt(&gap0),
            fmt(&gap1),
            fmt(&f0),
            fmt(&f1)
        ),
    )
}

fn ac5(reports: &[AblationReport]) -> Outcome {
    let bm: Vec<f64> = reports.iter().map(|r| r.rqa_accuracy.bm25).collect();
    let eb: Vec<f64> = reports.iter().map(|r| r.rqa_accuracy.ebr).collect();
    let a0: Vec<f64> = reports
        .iter()
        .map(|r| row(r, "SFT+MT").scores.l2_dev_ambiguous_f1)
        .collect();
    let a1: Vec<f64> = reports
        .iter()
        .map(|r| row(r, "SFT+MT+RQA").scores.l2_dev_ambiguous_f1)
        .collect();
    let (b, e, x0, x1) = (
        median(bm.clone()),
        median(eb.clone()),
        median(a0.clone()),
        median(a1.clone()),
    );
    outcome(
        e > b && x1 >= x0,
        format!(
            "(a) median RQA accuracy bm25 {b:.3} < ebr {e:.3} [{} | {}]; (b) median ambiguous L2 dev F1 {x0:.3} -> {x1:.3} [{} | {}]",
            fmt(&bm),
            fmt(&eb),
            fmt(&a0),
            fmt(&a1)
        ),
    )
}

fn ac6(reports: &[AblationReport]) -> Outcome {
    let sd = |name: &str| -> Vec<f64> {
        reports
            .iter()
            .map(|r| row(r, name).scores.l2_test_f1)
            .collect()
    };
    let (s0, s2, s3) = (sd("RQA*"), sd("+SD-2"), sd("+SD-3"));
    let (m0, m2, m3) = (median(s0.clone()), median(s2.clone()), median(s3.clone()));
    outcome(
        m2 > m0 && (m3 - m2).abs() <= 0.01,
        format!(
            "median L2 test F1 SD-0 {m0:.3}, SD-2 {m2:.3}, SD-3 {m3:.3} [{} | {} | {}]",
            fmt(&s0),
            fmt(&s2),
            fmt(&s3)
        ),
    )
}

fn ac7(reports: &[AblationReport]) -> Outcome {
    let gap = |f: fn(&AblationReport) -> &csrm::training::StudentSummary| -> Vec<f64> {
        reports
            .iter()
            .map(|r| (f(r).dev_accuracy - f(r).teacher_accuracy).abs())
            .collect()
    };
    let d = gap(|r| &r.online.defect);
    let e = gap(|r| &r.online.em);
    let (md, me) = (median(d.clone()), median(e.clone()));
    outcome(
        md <= 0.02 && me <= 0.05,
        format!(
            "median |student - teacher| dev accuracy: defect {md:.4} (<= 0.02) [{}], em {me:.4} (<= 0.05) [{}]",
            fmt(&d),
            fmt(&e)
        ),
    )
}

// ---------------------------------------------------------------- AC-8

const TINY: &str = r#"{
  "name": "acceptance-serving",
  "world": {"n_products": 240, "n_queries": 120, "impressions_per_query": 10},
  "model": {"vocab_size": 1024, "d_emb": 16, "d_out": 16},
  "train": {"max_steps": 150, "eval_every": 50, "sd_rounds": 1},
  "ebr_train": {"max_steps": 150, "eval_every": 50},
  "online": {"m": 10, "n": 20, "train": {"max_steps": 150, "eval_every": 50}},
  "stages": {"rqa_retriever": "ebr_local", "target_market": true}
}"#;

fn parity_round(
    server: &RunningServer,
    students: &csrm::serving::StudentPair,
    catalog: &[Product],
    queries: &[String],
    rng: &mut ChaCha8Rng,
    scale: f64,
) -> (f64, u64) {
    let pairs: Vec<(&str, &Product)> = (0..1000)
        .map(|_| {
            (
                queries.choose(rng).unwrap().as_str(),
                catalog.choose(rng).unwrap(),
            )
        })
        .collect();
    let em = offline_scores(students.em.towers(), &pairs, scale).unwrap();
    let defect = offline_scores(students.defect.towers(), &pairs, scale).unwrap();
    let url = server.url("/score");
    let mut worst = 0.0f64;
    let mut generation = 0;
    for (i, (q, p)) in pairs.iter().enumerate() {
        let req = ScoreRequest {
            query: q.to_string(),
            product_ids: vec![p.id.clone()],
        };
        let resp: ScoreResponse = ureq::post(&url)
            .send_json(&req)
            .unwrap()
            .body_mut()
            .read_json()
            .unwrap();
        generation = resp.generation;
        match &resp.results[0] {
            ScoreEntry::Scored {
                em_score,
                defect_score,
                ..
            } => {
                worst = worst
                    .max((em_score - em[i]).abs())
                    .max((defect_score - defect[i]).abs())
            }
            ScoreEntry::Failed { error, .. } => panic!("{error}"),
        }
    }
    (worst, generation)
}

fn ac8(dir: &Path) -> Outcome {
    let config = PipelineConfig::from_json(TINY, Path::new("acceptance")).unwrap();
    let ctx = Context::new(config, Some(dir.join("serving-run"))).unwrap();
    pipeline::gen(&ctx).unwrap();
    pipeline::index(&ctx).unwrap();
    pipeline::train_ebr_stage(&ctx, true).unwrap();
    pipeline::rqa_stage(&ctx, RetrieverTag::EbrLocal).unwrap();
    pipeline::label_stage(&ctx).unwrap();
    pipeline::train_stage(&ctx).unwrap();
    pipeline::self_distill_stage(&ctx).unwrap();
    pipeline::distill_online_stage(&ctx).unwrap();

    let (students, corpus) = pipeline::load_students(&ctx).unwrap();
    let scale = ctx.config.serving_options().scale;
    let state = Arc::new(pipeline::serving_state(&ctx).unwrap());
    let app = AppState {
        serving: state,
        reload: None,
    };
    let server = RunningServer::start("127.0.0.1:0", app, RoutePaths::default()).unwrap();
    let queries: Vec<String> = corpus.queries.iter().map(|q| q.text.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (before, g1) = parity_round(
        &server,
        &students,
        &corpus.products,
        &queries,
        &mut rng,
        scale,
    );

    let mut catalog = corpus.products.clone();
    catalog.truncate(catalog.len() - 20);
    for p in catalog.iter_mut().take(60) {
        p.title = format!("{} deluxe", p.title);
    }
    let body = serde_json::json!({ "products": catalog });
    ureq::post(server.url("/refresh")).send_json(&body).unwrap();
    let (after, g2) = parity_round(&server, &students, &catalog, &queries, &mut rng, scale);
    server.shutdown().unwrap();
    outcome(
        before <= 1e-6 && after <= 1e-6 && (g1, g2) == (1, 2),
        format!("1000 pairs per generation: max |online - offline| {before:.1e} (gen {g1}), {after:.1e} (gen {g2})"),
    )
}

// ---------------------------------------------------------------- AC-9

fn ac9(first: &AblationReport) -> Outcome {
    let config = PipelineConfig {
        seed: first.seed,
        ..PipelineConfig::default()
    };
    let again = run_ablation(&config).unwrap();
    let a = serde_json::to_string(first).unwrap();
    let b = serde_json::to_string(&again).unwrap();
    outcome(
        a == b,
        format!(
            "seed {} re-run: report JSON identical = {}",
            first.seed,
            a == b
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut failed = 0;
    let mut report = |name: &str, started: Instant, o: Outcome| {
        let status = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "{name} {status} ({:.1}s) {}",
            started.elapsed().as_secs_f64(),
            o.detail
        );
    };

    let t = Instant::now();
    report("AC-1", t, ac1());
    let t = Instant::now();
    report("AC-2", t, ac2());
    let t = Instant::now();
    report("AC-3", t, ac3());

    let t = Instant::now();
    let reports: Vec<AblationReport> = (1..=5)
        .map(|seed| {
            let config = PipelineConfig {
                seed,
                ..PipelineConfig::default()
            };
            run_ablation(&config).unwrap()
        })
        .collect();
    println!(
        "ablation over seeds 1-5 took {:.1}s",
        t.elapsed().as_secs_f64()
    );
    let t = Instant::now();
    report("AC-4", t, ac4(&reports));
    report("AC-5", t, ac5(&reports));
    report("AC-6", t, ac6(&reports));
    report("AC-7", t, ac7(&reports));

    let t = Instant::now();
    report("AC-8", t, ac8(tmp.path()));
    let t = Instant::now();
    report("AC-9", t, ac9(&reports[0]));

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
