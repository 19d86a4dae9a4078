use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use csrm::corpus::{Language, Product, Query, SoftLabel};
use csrm::teacher::{
    batch_cvr, batch_label, oracle_teacher, Capabilities, LabelCache, PairRequest, PromptTemplate,
    RemoteTeacher, RemoteTeacherConfig, TeacherScorer,
};
use csrm::Error;

fn query(i: usize) -> Query {
    Query {
        id: format!("q{i}"),
        text: format!("shoe {i}"),
        brand: None,
        category: "a/b".into(),
        language: Language::L1,
    }
}

fn product(i: usize) -> Product {
    Product {
        id: format!("p{i}"),
        title: format!("red shoe {i}"),
        description: String::new(),
        brand: "n".into(),
        category: if i.is_multiple_of(2) { "a/b" } else { "c/d" }.into(),
        language: Language::L1,
    }
}

/// Counts backend calls; fails on pairs whose product id is listed.
struct Counting {
    calls: AtomicUsize,
    fail: Vec<String>,
}

impl TeacherScorer for Counting {
    fn identity(&self) -> String {
        "counting".into()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            soft_label: true,
            cvr: false,
        }
    }

    fn soft_label(&self, req: &PairRequest<'_>) -> csrm::Result<SoftLabel> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail.contains(&req.product.id) {
            return Err(Error::Teacher {
                pair_ids: vec![req.pair_id()],
                message: "boom".into(),
            });
        }
        let x = (req.product.id.len() % 5) as f64 / 10.0;
        SoftLabel::new(x, 0.5, 0.5 - x)
    }
}

fn fixtures(n: usize) -> (Vec<Query>, Vec<Product>) {
    ((0..n).map(query).collect(), (0..n).map(product).collect())
}

fn requests<'a>(qs: &'a [Query], ps: &'a [Product]) -> Vec<PairRequest<'a>> {
    qs.iter()
        .zip(ps)
        .map(|(q, p)| PairRequest {
            query: q,
            rqa: None,
            product: p,
        })
        .collect()
}

#[test]
fn cache_counts_backend_calls() {
    let (qs, ps) = fixtures(100);
    let reqs = requests(&qs, &ps);
    let dir = tempfile::tempdir().unwrap();
    let t = Counting {
        calls: AtomicUsize::new(0),
        fail: vec![],
    };

    let mut cache = LabelCache::open(dir.path(), &t.identity()).unwrap();
    batch_label(&t, &reqs[..40], &mut cache, 4).unwrap();
    assert_eq!(t.calls.load(Ordering::SeqCst), 40);

    let mut reopened = LabelCache::open(dir.path(), &t.identity()).unwrap();
    assert_eq!(reopened.len(), 40);
    let first = batch_label(&t, &reqs, &mut reopened, 4).unwrap();
    assert_eq!(t.calls.load(Ordering::SeqCst), 100);

    let second = batch_label(&t, &reqs, &mut reopened, 4).unwrap();
    assert_eq!(t.calls.load(Ordering::SeqCst), 100);
    assert_eq!(first, second);
    for (r, s) in reqs.iter().zip(&first) {
        assert_eq!(*s, t.soft_label(r).unwrap());
    }
    assert!(batch_label(&t, &[], &mut reopened, 4).unwrap().is_empty());
}

#[test]
fn failures_list_pair_ids_and_cvr_needs_capability() {
    let (qs, ps) = fixtures(6);
    let reqs = requests(&qs, &ps);
    let t = Counting {
        calls: AtomicUsize::new(0),
        fail: vec!["p2".into(), "p4".into()],
    };
    let mut cache = LabelCache::in_memory();
    match batch_label(&t, &reqs, &mut cache, 3) {
        Err(Error::Teacher { pair_ids, .. }) => assert_eq!(pair_ids, ["q2::p2", "q4::p4"]),
        other => panic!("expected teacher error, got {other:?}"),
    }
    assert!(matches!(
        batch_cvr(&t, &reqs, &mut cache, 3),
        Err(Error::Capability(_))
    ));
}

#[test]
fn oracle_cvr_is_cached() {
    let (qs, ps) = fixtures(10);
    let reqs = requests(&qs, &ps);
    let t = oracle_teacher(1.0, 3).unwrap();
    let mut cache = LabelCache::in_memory();
    let a = batch_cvr(&t, &reqs, &mut cache, 2).unwrap();
    assert_eq!(cache.len(), 10);
    let b = batch_cvr(&t, &reqs, &mut cache, 2).unwrap();
    assert_eq!(a, b);
}

/// Serves `responses` in order (the last one repeats), counting connections.
fn stub(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let n = h.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let (status, text) = &responses[n.min(responses.len() - 1)];
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (format!("http://{addr}/label"), hits)
}

fn remote(endpoint: String, max_retries: u32) -> RemoteTeacher {
    let cfg = RemoteTeacherConfig {
        endpoint,
        timeout_ms: 2000,
        max_retries,
        backoff_ms: 1,
    };
    RemoteTeacher::new(cfg, PromptTemplate::default()).unwrap()
}

#[test]
fn remote_label_conversion() {
    let (url, _) = stub(vec![(200, r#"{"label": 2}"#.into())]);
    let (q, p) = (query(1), product(1));
    let s = remote(url, 0)
        .soft_label(&PairRequest {
            query: &q,
            rqa: None,
            product: &p,
        })
        .unwrap();
    assert_eq!(s.to_array(), [0.9, 0.05, 0.05]);
}

#[test]
fn remote_rejects_off_simplex() {
    let (url, hits) = stub(vec![(200, r#"{"p_e":0.5,"p_s":0.5,"p_i":0.1}"#.into())]);
    let (q, p) = (query(1), product(1));
    let err = remote(url, 2)
        .soft_label(&PairRequest {
            query: &q,
            rqa: None,
            product: &p,
        })
        .unwrap_err();
    match err {
        Error::Teacher { pair_ids, message } => {
            assert_eq!(pair_ids, ["q1::p1"]);
            assert!(message.contains("sum"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn remote_retries_then_succeeds() {
    let (url, hits) = stub(vec![
        (503, "{}".into()),
        (200, r#"{"p_e":0.2,"p_s":0.3,"p_i":0.5}"#.into()),
    ]);
    let (q, p) = (query(1), product(1));
    let s = remote(url, 2)
        .soft_label(&PairRequest {
            query: &q,
            rqa: None,
            product: &p,
        })
        .unwrap();
    assert_eq!(s.to_array(), [0.2, 0.3, 0.5]);
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn remote_gives_up_after_retries() {
    let (url, hits) = stub(vec![(503, "{}".into())]);
    let (q, p) = (query(1), product(1));
    let err = remote(url, 2)
        .soft_label(&PairRequest {
            query: &q,
            rqa: None,
            product: &p,
        })
        .unwrap_err();
    assert!(matches!(err, Error::Teacher { .. }));
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn remote_unreachable_endpoint() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let (q, p) = (query(1), product(1));
    let t = remote(format!("http://127.0.0.1:{port}/label"), 2);
    let err = t
        .soft_label(&PairRequest {
            query: &q,
            rqa: None,
            product: &p,
        })
        .unwrap_err();
    match err {
        Error::Teacher { message, .. } => assert!(message.contains("3 attempts"), "{message}"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(!t.capabilities().cvr);
    assert!(RemoteTeacher::new(
        RemoteTeacherConfig {
            endpoint: "nope".into(),
            ..Default::default()
        },
        PromptTemplate::default()
    )
    .is_err());
}
