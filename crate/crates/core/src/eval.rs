//! Full-catalog top-K evaluation.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::data::SplitDataset;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::numkit::dot;

pub const DEFAULT_KS: [usize; 2] = [10, 20];

/// Descending score, ascending index on ties.
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn candidate_scores<E: Encoder + ?Sized>(u: usize, enc: &E, exclude: &[u32]) -> Vec<(f64, usize)> {
    let e_u = enc.embed_user(u);
    let mut excluded = exclude.to_vec();
    excluded.sort_unstable();
    (0..enc.n_items())
        .filter(|j| excluded.binary_search(&(*j as u32)).is_err())
        .map(|j| {
            let s = dot(&e_u, &enc.embed_item(j));
            // total_cmp orders -0.0 below 0.0; equal scores must tie.
            (if s == 0.0 { 0.0 } else { s }, j)
        })
        .collect()
}

/// Every non-excluded item ordered by descending score.
pub fn rank_items<E: Encoder + ?Sized>(u: usize, enc: &E, exclude: &[u32]) -> Result<Vec<usize>> {
    let mut scored = candidate_scores(u, enc, exclude);
    if scored.is_empty() {
        return Err(Error::ExhaustedNegatives { user: u });
    }
    scored.sort_by(rank_order);
    Ok(scored.into_iter().map(|(_, j)| j).collect())
}

/// The first `k` entries of the full ranking, without sorting the tail.
pub fn top_k<E: Encoder + ?Sized>(u: usize, enc: &E, exclude: &[u32], k: usize) -> Vec<usize> {
    let mut scored = candidate_scores(u, enc, exclude);
    if k < scored.len() {
        scored.select_nth_unstable_by(k, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    scored.into_iter().map(|(_, j)| j).collect()
}

fn distinct(relevant: &[u32]) -> Result<Vec<u32>> {
    let mut rel = relevant.to_vec();
    rel.sort_unstable();
    rel.dedup();
    if rel.is_empty() {
        return Err(Error::UndefinedMetric);
    }
    Ok(rel)
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    Ok(())
}

/// 1-indexed ranks of relevant items within the top `k`, ascending.
fn hit_ranks<'a>(
    ranked: &'a [usize],
    rel: &'a [u32],
    k: usize,
) -> impl Iterator<Item = usize> + 'a {
    ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, j)| rel.binary_search(&(**j as u32)).is_ok())
        .map(|(pos, _)| pos + 1)
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

pub fn recall_at_k(ranked: &[usize], relevant: &[u32], k: usize) -> Result<f64> {
    check_k(k)?;
    let rel = distinct(relevant)?;
    let hits = hit_ranks(ranked, &rel, k).count();
    Ok(hits as f64 / rel.len() as f64)
}

pub fn ndcg_at_k(ranked: &[usize], relevant: &[u32], k: usize) -> Result<f64> {
    check_k(k)?;
    let rel = distinct(relevant)?;
    let dcg = hit_ranks(ranked, &rel, k)
        .map(discount)
        .fold(0.0, |a, b| a + b);
    let idcg = (1..=k.min(rel.len())).map(discount).fold(0.0, |a, b| a + b);
    Ok(dcg / idcg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub n_users_evaluated: usize,
    pub n_users_skipped: usize,
    pub fingerprint: String,
}

impl MetricsReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|p| self.recall[p])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|p| self.ndcg[p])
    }

    pub fn to_json_value(&self) -> Value {
        let mut m = Map::new();
        for (k, v) in self.ks.iter().zip(&self.recall) {
            m.insert(format!("recall@{k}"), json!(v));
        }
        for (k, v) in self.ks.iter().zip(&self.ndcg) {
            m.insert(format!("ndcg@{k}"), json!(v));
        }
        m.insert("n_users".into(), json!(self.n_users_evaluated));
        m.insert("n_users_skipped".into(), json!(self.n_users_skipped));
        m.insert("fingerprint".into(), json!(self.fingerprint));
        Value::Object(m)
    }

    /// Single-line JSON object.
    pub fn to_json(&self) -> String {
        self.to_json_value().to_string()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Format("metrics must be a JSON object".into()))?;
        let mut ks = Vec::new();
        let mut recall = Vec::new();
        for (key, val) in obj {
            if let Some(k) = key.strip_prefix("recall@") {
                ks.push(
                    k.parse::<usize>()
                        .map_err(|e| Error::Format(e.to_string()))?,
                );
                recall.push(as_f64(val, key)?);
            }
        }
        let ndcg = ks
            .iter()
            .map(|k| {
                let key = format!("ndcg@{k}");
                obj.get(&key)
                    .ok_or_else(|| Error::Format(format!("missing `{key}`")))
                    .and_then(|v| as_f64(v, &key))
            })
            .collect::<Result<Vec<_>>>()?;
        let count = |key: &str| {
            obj.get(key)
                .and_then(Value::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| Error::Format(format!("missing `{key}`")))
        };
        Ok(Self {
            ks,
            recall,
            ndcg,
            n_users_evaluated: count("n_users")?,
            n_users_skipped: count("n_users_skipped")?,
            fingerprint: obj
                .get("fingerprint")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string(),
        })
    }

    /// Header matching [`MetricsReport::csv_row`].
    pub fn csv_header(&self) -> String {
        Self::csv_columns(&self.ks)
    }

    /// Header for reports with cutoffs `ks`.
    pub fn csv_columns(ks: &[usize]) -> String {
        let mut cols: Vec<String> = ks.iter().map(|k| format!("recall@{k}")).collect();
        cols.extend(ks.iter().map(|k| format!("ndcg@{k}")));
        cols.push("n_users".into());
        cols.push("fingerprint".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols: Vec<String> = self.recall.iter().map(f64::to_string).collect();
        cols.extend(self.ndcg.iter().map(f64::to_string));
        cols.push(self.n_users_evaluated.to_string());
        cols.push(self.fingerprint.clone());
        cols.join(",")
    }
}

fn as_f64(v: &Value, key: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::Format(format!("`{key}` is not a number")))
}

/// Mean Recall@K and NDCG@K over users with at least one test item. The
/// sum runs in user-index order so the result does not depend on threads.
pub fn evaluate<E: Encoder + ?Sized>(
    enc: &E,
    split: &SplitDataset,
    ks: &[usize],
) -> Result<MetricsReport> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("need at least one cutoff".into()));
    }
    for &k in ks {
        check_k(k)?;
    }
    if split.train.n_users() != enc.n_users() || split.train.n_items() > enc.n_items() {
        return Err(Error::ShapeMismatch(format!(
            "split has {}x{}, encoder {}x{}",
            split.train.n_users(),
            split.train.n_items(),
            enc.n_users(),
            enc.n_items()
        )));
    }
    let k_max = *ks.iter().max().expect("non-empty");
    let per_user: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..split.train.n_users())
        .into_par_iter()
        .map(|u| {
            let relevant = &split.test[u];
            if relevant.is_empty() {
                return Ok(None);
            }
            let ranked = top_k(u, enc, split.train.items_of(u), k_max);
            let r = ks
                .iter()
                .map(|&k| recall_at_k(&ranked, relevant, k))
                .collect::<Result<Vec<_>>>()?;
            let n = ks
                .iter()
                .map(|&k| ndcg_at_k(&ranked, relevant, k))
                .collect::<Result<Vec<_>>>()?;
            Ok(Some((r, n)))
        })
        .collect::<Result<_>>()?;
    let mut recall = vec![0.0; ks.len()];
    let mut ndcg = vec![0.0; ks.len()];
    let mut evaluated = 0;
    for (r, n) in per_user.iter().flatten() {
        evaluated += 1;
        for p in 0..ks.len() {
            recall[p] += r[p];
            ndcg[p] += n[p];
        }
    }
    if evaluated == 0 {
        return Err(Error::NoEvaluableUsers);
    }
    for p in 0..ks.len() {
        recall[p] /= evaluated as f64;
        ndcg[p] /= evaluated as f64;
    }
    Ok(MetricsReport {
        ks: ks.to_vec(),
        recall,
        ndcg,
        n_users_evaluated: evaluated,
        n_users_skipped: split.train.n_users() - evaluated,
        fingerprint: String::new(),
    })
}

/// Exhaustive re-implementation of [`evaluate`] that ranks each test item
/// by counting the candidates that beat it. Kept independent on purpose.
pub fn brute_force_evaluate<E: Encoder + ?Sized>(
    enc: &E,
    split: &SplitDataset,
    ks: &[usize],
) -> Result<MetricsReport> {
    let mut recall = vec![0.0; ks.len()];
    let mut ndcg = vec![0.0; ks.len()];
    let mut evaluated = 0usize;
    for u in 0..split.train.n_users() {
        let test = &split.test[u];
        if test.is_empty() {
            continue;
        }
        evaluated += 1;
        let score = |j: usize| enc.score(u, j);
        let mut ranks: Vec<usize> = test
            .iter()
            .map(|&i| {
                let (si, i) = (score(i as usize), i as usize);
                let better = (0..enc.n_items())
                    .filter(|&j| j != i && !split.train.contains(u, j))
                    .filter(|&j| {
                        let sj = score(j);
                        sj > si || (sj == si && j < i)
                    })
                    .count();
                better + 1
            })
            .collect();
        ranks.sort_unstable();
        for (p, &k) in ks.iter().enumerate() {
            let hits: Vec<usize> = ranks.iter().copied().filter(|&r| r <= k).collect();
            recall[p] += hits.len() as f64 / test.len() as f64;
            let mut dcg = 0.0;
            for r in &hits {
                dcg += 1.0 / ((r + 1) as f64).log2();
            }
            let mut idcg = 0.0;
            for r in 1..=k.min(test.len()) {
                idcg += 1.0 / ((r + 1) as f64).log2();
            }
            ndcg[p] += dcg / idcg;
        }
    }
    if evaluated == 0 {
        return Err(Error::NoEvaluableUsers);
    }
    for p in 0..ks.len() {
        recall[p] /= evaluated as f64;
        ndcg[p] /= evaluated as f64;
    }
    Ok(MetricsReport {
        ks: ks.to_vec(),
        recall,
        ndcg,
        n_users_evaluated: evaluated,
        n_users_skipped: split.train.n_users() - evaluated,
        fingerprint: String::new(),
    })
}
