//! Shape retrieval: signatures from a trained model, an optional LFDA
//! projection, Euclidean ranking, and mean average precision.

mod lfda;
mod store;

use rayon::prelude::*;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::trainer::Model;

pub use lfda::{lfda_fit, Lfda, DEFAULT_NEIGHBORS};
pub use store::{read_retrieval_csv, read_signatures, write_retrieval_csv, write_signatures, RetrievalRow};

#[derive(Clone, Debug, PartialEq)]
pub struct Signature {
    pub id: String,
    pub label: usize,
    pub vector: Vec<f64>,
}

/// Signature of every shape, in dataset order.
pub fn extract_signatures(model: &Model, dataset: &Dataset) -> Result<Vec<Signature>> {
    dataset
        .samples
        .par_iter()
        .map(|s| {
            let vector = model.infer(&s.cloud)?.signature;
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite signature for {:?}", s.id)));
            }
            Ok(Signature { id: s.id.clone(), label: s.label, vector })
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gallery indices with their distances, nearest first; equal distances
/// keep gallery order.
pub fn rank(query: &[f64], gallery: &[Vec<f64>]) -> Result<Vec<(usize, f64)>> {
    if gallery.is_empty() {
        return Err(Error::InvalidArgument("empty gallery".into()));
    }
    if let Some(g) = gallery.iter().find(|g| g.len() != query.len()) {
        return Err(Error::ShapeMismatch(format!("query has {} dimensions, gallery item {}", query.len(), g.len())));
    }
    let mut out: Vec<(usize, f64)> = gallery.iter().enumerate().map(|(i, g)| (i, sq_dist(query, g))).collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(out.into_iter().map(|(i, d)| (i, d.sqrt())).collect())
}

pub fn retrieve(query: &[f64], gallery: &[Vec<f64>]) -> Result<Vec<usize>> {
    Ok(rank(query, gallery)?.into_iter().map(|(i, _)| i).collect())
}

fn check_gtp(gtp: usize) -> Result<()> {
    if gtp == 0 {
        return Err(Error::InvalidArgument("average precision needs at least one ground-truth positive".into()));
    }
    Ok(())
}

/// `(1/GTP) Σ precision@n` over the ranks `n` holding a relevant item.
pub fn average_precision(relevant: &[bool], gtp: usize) -> Result<f64> {
    check_gtp(gtp)?;
    let mut hits = 0;
    let mut sum = 0.0;
    for (n, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (n + 1) as f64;
        }
    }
    Ok(sum / gtp as f64)
}

/// `(1/GTP) Σ 1/n` over the relevant ranks `n`. Kept for comparison only;
/// it is not a precision average.
pub fn average_precision_literal(relevant: &[bool], gtp: usize) -> Result<f64> {
    check_gtp(gtp)?;
    let s: f64 = relevant.iter().enumerate().filter(|(_, r)| **r).map(|(n, _)| 1.0 / (n + 1) as f64).sum();
    Ok(s / gtp as f64)
}

/// Per-query ranking against the gallery, with AP.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub ranking: Vec<(usize, f64)>,
    pub ap: f64,
}

/// Ranks every query against the whole gallery. A query is relevant to a
/// gallery item when their labels match.
pub fn run_queries(queries: &[Signature], gallery: &[Signature], literal: bool) -> Result<Vec<QueryResult>> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no queries".into()));
    }
    let vectors: Vec<Vec<f64>> = gallery.iter().map(|g| g.vector.clone()).collect();
    queries
        .par_iter()
        .map(|q| {
            let ranking = rank(&q.vector, &vectors)?;
            let flags: Vec<bool> = ranking.iter().map(|(i, _)| gallery[*i].label == q.label).collect();
            let gtp = flags.iter().filter(|f| **f).count();
            if gtp == 0 {
                return Err(Error::InvalidArgument(format!("query {:?} has no positives in the gallery", q.id)));
            }
            let ap = if literal { average_precision_literal(&flags, gtp)? } else { average_precision(&flags, gtp)? };
            Ok(QueryResult { ranking, ap })
        })
        .collect()
}

pub fn mean_ap(queries: &[Signature], gallery: &[Signature], literal: bool) -> Result<f64> {
    let r = run_queries(queries, gallery, literal)?;
    Ok(r.iter().map(|q| q.ap).sum::<f64>() / r.len() as f64)
}

/// Applies `proj` to every signature.
pub fn project_all(proj: &Lfda, sigs: &[Signature]) -> Result<Vec<Signature>> {
    sigs.iter().map(|s| Ok(Signature { id: s.id.clone(), label: s.label, vector: proj.project(&s.vector)? })).collect()
}

/// Report rows for the first `top` gallery items of each query.
pub fn report_rows(queries: &[Signature], gallery: &[Signature], results: &[QueryResult], top: usize) -> Vec<RetrievalRow> {
    let mut rows = Vec::new();
    for (q, r) in queries.iter().zip(results) {
        for (k, &(i, d)) in r.ranking.iter().take(top).enumerate() {
            rows.push(RetrievalRow {
                query_id: q.id.clone(),
                rank: k + 1,
                gallery_id: gallery[i].id.clone(),
                distance: d,
                relevant: gallery[i].label == q.label,
            });
        }
    }
    rows
}
