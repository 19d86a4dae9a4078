use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PairRequest, TeacherScorer};
use crate::corpus::SoftLabel;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

/// One cached teacher output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub query_id: String,
    pub product_id: String,
    pub rqa_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_label: Option<SoftLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cvr: Option<f64>,
}

/// Persistent teacher outputs for one teacher identity, stored as
/// `<dir>/<identity>.jsonl` and appended to as new pairs are scored.
#[derive(Debug)]
pub struct LabelCache {
    path: Option<PathBuf>,
    soft: BTreeMap<String, SoftLabel>,
    cvr: BTreeMap<String, f64>,
}

fn rqa_hash(req: &PairRequest<'_>) -> String {
    match req.rqa {
        None => "none".into(),
        Some(r) => hex::encode(&Sha256::digest(r.joined().as_bytes())[..8]),
    }
}

fn key(query_id: &str, product_id: &str, rqa_hash: &str) -> String {
    format!("{query_id}\u{0}{product_id}\u{0}{rqa_hash}")
}

impl LabelCache {
    /// A cache that lives only in memory.
    pub fn in_memory() -> Self {
        LabelCache {
            path: None,
            soft: BTreeMap::new(),
            cvr: BTreeMap::new(),
        }
    }

    /// Opens (or starts) the cache file for `identity` under `dir`.
    pub fn open(dir: &Path, identity: &str) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{identity}.jsonl"));
        let mut cache = LabelCache {
            path: Some(path.clone()),
            soft: BTreeMap::new(),
            cvr: BTreeMap::new(),
        };
        if path.exists() {
            let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                cache.absorb(&entry);
            }
        }
        Ok(cache)
    }

    fn absorb(&mut self, e: &CacheEntry) {
        let k = key(&e.query_id, &e.product_id, &e.rqa_hash);
        if let Some(s) = e.soft_label {
            self.soft.insert(k.clone(), s);
        }
        if let Some(c) = e.cvr {
            self.cvr.insert(k, c);
        }
    }

    pub fn len(&self) -> usize {
        self.soft.len() + self.cvr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_soft(&self, req: &PairRequest<'_>) -> Option<SoftLabel> {
        self.soft
            .get(&key(&req.query.id, &req.product.id, &rqa_hash(req)))
            .copied()
    }

    pub fn get_cvr(&self, req: &PairRequest<'_>) -> Option<f64> {
        self.cvr
            .get(&key(&req.query.id, &req.product.id, &rqa_hash(req)))
            .copied()
    }

    fn persist(&mut self, entries: &[CacheEntry]) -> Result<()> {
        for e in entries {
            self.absorb(e);
        }
        let Some(path) = &self.path else {
            return Ok(());
        };
        if entries.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for e in entries {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }
}

/// Scores every request with at most `max_in_flight` concurrent calls;
/// output order matches input order.
fn score_parallel<T: Send>(
    reqs: &[&PairRequest<'_>],
    max_in_flight: usize,
    f: &(dyn Fn(&PairRequest<'_>) -> Result<T> + Sync),
) -> Vec<Result<T>> {
    let slots: Vec<Mutex<Option<Result<T>>>> = reqs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.clamp(1, reqs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= reqs.len() {
                    break;
                }
                let r = f(reqs[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("slot lock")
                .expect("every slot filled")
        })
        .collect()
}

fn collect_failures<T>(results: Vec<Result<T>>, reqs: &[&PairRequest<'_>]) -> Result<Vec<T>> {
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    let mut first: Option<Error> = None;
    for (r, req) in results.into_iter().zip(reqs) {
        match r {
            Ok(v) => ok.push(v),
            Err(Error::Teacher { pair_ids, message }) => {
                failed.extend(pair_ids);
                first.get_or_insert(Error::Teacher {
                    pair_ids: vec![],
                    message,
                });
            }
            Err(e) => {
                failed.push(req.pair_id());
                first.get_or_insert(e);
            }
        }
    }
    match first {
        None => Ok(ok),
        Some(Error::Capability(m)) => Err(Error::Capability(m)),
        Some(e) => Err(Error::Teacher {
            pair_ids: failed,
            message: match e {
                Error::Teacher { message, .. } => message,
                other => other.to_string(),
            },
        }),
    }
}

/// Soft labels for `pairs`, served from `cache` where possible; newly scored
/// labels are added to the cache in input order.
pub fn batch_label(
    teacher: &dyn TeacherScorer,
    pairs: &[PairRequest<'_>],
    cache: &mut LabelCache,
    max_in_flight: usize,
) -> Result<Vec<SoftLabel>> {
    let mut out: Vec<Option<SoftLabel>> = pairs.iter().map(|r| cache.get_soft(r)).collect();
    let miss_idx: Vec<usize> = (0..pairs.len()).filter(|&i| out[i].is_none()).collect();
    let misses: Vec<&PairRequest<'_>> = miss_idx.iter().map(|&i| &pairs[i]).collect();
    let scored = collect_failures(
        score_parallel(&misses, max_in_flight, &|r| {
            let s = teacher.soft_label(r)?;
            s.validate(1e-9)?;
            Ok(s)
        }),
        &misses,
    )?;
    let mut entries = Vec::with_capacity(scored.len());
    let mut seen = std::collections::BTreeSet::new();
    for (&i, s) in miss_idx.iter().zip(scored) {
        out[i] = Some(s);
        let r = &pairs[i];
        let h = rqa_hash(r);
        if seen.insert(key(&r.query.id, &r.product.id, &h)) {
            entries.push(CacheEntry {
                query_id: r.query.id.clone(),
                product_id: r.product.id.clone(),
                rqa_hash: h,
                soft_label: Some(s),
                cvr: None,
            });
        }
    }
    cache.persist(&entries)?;
    Ok(out.into_iter().map(|s| s.expect("filled")).collect())
}

/// Conversion estimates for `pairs`, cache-first like [`batch_label`].
pub fn batch_cvr(
    teacher: &dyn TeacherScorer,
    pairs: &[PairRequest<'_>],
    cache: &mut LabelCache,
    max_in_flight: usize,
) -> Result<Vec<f64>> {
    if !teacher.capabilities().cvr {
        return Err(Error::Capability(format!(
            "teacher {} has no cvr output",
            teacher.identity()
        )));
    }
    let mut out: Vec<Option<f64>> = pairs.iter().map(|r| cache.get_cvr(r)).collect();
    let miss_idx: Vec<usize> = (0..pairs.len()).filter(|&i| out[i].is_none()).collect();
    let misses: Vec<&PairRequest<'_>> = miss_idx.iter().map(|&i| &pairs[i]).collect();
    let scored = collect_failures(
        score_parallel(&misses, max_in_flight, &|r| {
            let c = teacher.cvr(r)?;
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::validation(format!("cvr {c} outside [0, 1]")));
            }
            Ok(c)
        }),
        &misses,
    )?;
    let mut entries = Vec::with_capacity(scored.len());
    let mut seen = std::collections::BTreeSet::new();
    for (&i, c) in miss_idx.iter().zip(scored) {
        out[i] = Some(c);
        let r = &pairs[i];
        let h = rqa_hash(r);
        if seen.insert(key(&r.query.id, &r.product.id, &h)) {
            entries.push(CacheEntry {
                query_id: r.query.id.clone(),
                product_id: r.product.id.clone(),
                rqa_hash: h,
                soft_label: None,
                cvr: Some(c),
            });
        }
    }
    cache.persist(&entries)?;
    Ok(out.into_iter().map(|c| c.expect("filled")).collect())
}
