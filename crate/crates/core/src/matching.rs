//! Dictionary matching: cluster-wise search in the reduced dictionary,
//! exhaustive search over the full dictionary, and error metrics.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::block::RowBlock;
use crate::error::{Error, Result};
use crate::io::compressed::normalize_in_place;
use crate::io::{CompressedDictionary, DictionaryReader};

/// Best dictionary entry for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub query: usize,
    /// Cluster searched, `None` for exhaustive matching.
    pub cluster: Option<usize>,
    pub dict_index: u64,
    /// Squared Euclidean distance in the space the search ran in.
    pub distance: f64,
    pub params: Vec<f64>,
    /// The most probable cluster was empty and a lower-ranked one was used.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub results: Vec<MatchResult>,
    /// Multiply-adds spent in distance evaluations.
    pub multiply_adds: u64,
}

impl MatchOutcome {
    pub fn params(&self) -> RowBlock {
        let l = self.results.first().map_or(0, |r| r.params.len());
        let mut out = RowBlock::with_capacity(l, self.results.len());
        for r in &self.results {
            out.push_row(&r.params).expect("results share a parameter length");
        }
        out
    }

    pub fn indices(&self) -> Vec<u64> {
        self.results.iter().map(|r| r.dict_index).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CompressedMatchOptions {
    /// Number of non-empty clusters searched per query, by decreasing
    /// responsibility. Distances from different clusters are compared as is.
    pub top_clusters: usize,
}

impl Default for CompressedMatchOptions {
    fn default() -> Self {
        Self { top_clusters: 1 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FullMatchOptions {
    pub chunk_rows: usize,
    /// Scale dictionary rows and queries to unit ℓ2 norm.
    pub normalize: bool,
}

impl Default for FullMatchOptions {
    fn default() -> Self {
        Self { chunk_rows: 8192, normalize: false }
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..4 {
            let d = x[j] - y[j];
            acc[j] += d * d;
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| (x - y) * (x - y)).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn check_queries(queries: &RowBlock, m: usize) -> Result<()> {
    if queries.dim() != m {
        return Err(Error::dim(m, queries.dim()));
    }
    if queries.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite query value".into()));
    }
    Ok(())
}

/// Assigns each query to its most probable cluster, projects it with that
/// cluster's operator and scans the cluster's reduced rows for the nearest
/// one. Ties resolve to the lowest dictionary index.
pub fn match_compressed(
    cd: &CompressedDictionary,
    queries: &RowBlock,
    opts: &CompressedMatchOptions,
) -> Result<MatchOutcome> {
    let model = cd.model();
    check_queries(queries, model.dim())?;
    if opts.top_clusters == 0 {
        return Err(Error::InvalidArgument("top_clusters must be at least 1".into()));
    }
    let per_query: Vec<Result<(MatchResult, u64)>> = (0..queries.rows())
        .into_par_iter()
        .map(|j| {
            let mut y = queries.row(j).to_vec();
            if cd.normalized() {
                normalize_in_place(&mut y);
            }
            let resp = model.responsibilities(&y)?;
            let mut order: Vec<usize> = (0..model.n_components()).collect();
            order.sort_by(|&a, &b| resp.0[b].total_cmp(&resp.0[a]).then(a.cmp(&b)));
            let mut best: Option<(f64, u64, usize, usize)> = None;
            let mut searched = 0;
            let mut cost = 0u64;
            let mut reduced = Vec::new();
            for &k in &order {
                let part = &cd.clusters()[k];
                if part.is_empty() {
                    continue;
                }
                let op = &cd.operators()[k];
                reduced.resize(op.reduced_dim(), 0.0);
                op.project_into(&y, &mut reduced);
                for (i, row) in part.reduced.iter_rows().enumerate() {
                    let dist = squared_distance(&reduced, row);
                    let idx = part.indices[i];
                    let better = match best {
                        None => true,
                        Some((bd, bi, _, _)) => dist < bd || (dist == bd && idx < bi),
                    };
                    if better {
                        best = Some((dist, idx, k, i));
                    }
                }
                cost += (part.len() * op.reduced_dim()) as u64;
                searched += 1;
                if searched == opts.top_clusters {
                    break;
                }
            }
            let (distance, dict_index, k, i) = best.ok_or(Error::EmptyStream)?;
            let fallback = cd.clusters()[order[0]].is_empty();
            Ok((
                MatchResult {
                    query: j,
                    cluster: Some(k),
                    dict_index,
                    distance,
                    params: cd.clusters()[k].params.row(i).to_vec(),
                    fallback,
                },
                cost,
            ))
        })
        .collect();
    let mut results = Vec::with_capacity(queries.rows());
    let mut multiply_adds = 0;
    for item in per_query {
        let (r, c) = item?;
        results.push(r);
        multiply_adds += c;
    }
    Ok(MatchOutcome { results, multiply_adds })
}

/// Exact nearest neighbour over the whole dictionary in squared Euclidean
/// distance, streaming the store once. Ties resolve to the lowest index.
pub fn full_match(store: &DictionaryReader, queries: &RowBlock, opts: &FullMatchOptions) -> Result<MatchOutcome> {
    let h = store.header();
    check_queries(queries, h.signal_len())?;
    if h.n == 0 {
        return Err(Error::EmptyStream);
    }
    let mut q = queries.clone();
    if opts.normalize {
        q.map_rows_in_place(normalize_in_place);
    }
    let mut best: Vec<(f64, u64, Vec<f64>)> = vec![(f64::INFINITY, u64::MAX, Vec::new()); q.rows()];
    for chunk in store.chunks(opts.chunk_rows.max(1))? {
        let mut chunk = chunk?;
        if opts.normalize {
            chunk.signals.map_rows_in_place(normalize_in_place);
        }
        best.par_iter_mut().enumerate().for_each(|(j, slot)| {
            let y = q.row(j);
            let mut local: Option<(f64, usize)> = None;
            for (i, row) in chunk.signals.iter_rows().enumerate() {
                let d = squared_distance(y, row);
                if local.is_none_or(|(bd, _)| d < bd) {
                    local = Some((d, i));
                }
            }
            if let Some((d, i)) = local {
                if d < slot.0 {
                    *slot = (d, chunk.start_row + i as u64, chunk.params.row(i).to_vec());
                }
            }
        });
    }
    let results = best
        .into_iter()
        .enumerate()
        .map(|(j, (distance, dict_index, params))| MatchResult {
            query: j,
            cluster: None,
            dict_index,
            distance,
            params,
            fallback: false,
        })
        .collect();
    let multiply_adds = q.rows() as u64 * h.n * h.signal_len() as u64;
    Ok(MatchOutcome { results, multiply_adds })
}

/// Per-parameter mean absolute error against reference parameters.
pub fn mae(estimated: &RowBlock, reference: &RowBlock) -> Result<Vec<f64>> {
    if estimated.dim() != reference.dim() {
        return Err(Error::dim(reference.dim(), estimated.dim()));
    }
    if estimated.rows() != reference.rows() {
        return Err(Error::dim(reference.rows(), estimated.rows()));
    }
    if estimated.is_empty() {
        return Err(Error::EmptyStream);
    }
    let mut out = vec![0.0; reference.dim()];
    for (e, r) in estimated.iter_rows().zip(reference.iter_rows()) {
        for ((o, x), y) in out.iter_mut().zip(e).zip(r) {
            *o += (x - y).abs();
        }
    }
    let n = reference.rows() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// Root of the mean over all entries of the squared differences.
pub fn rmse_signals(a: &RowBlock, b: &RowBlock) -> Result<f64> {
    if a.dim() != b.dim() || a.rows() != b.rows() {
        return Err(Error::InvalidArgument(format!(
            "shape {}x{} vs {}x{}",
            a.rows(),
            a.dim(),
            b.rows(),
            b.dim()
        )));
    }
    if a.is_empty() || a.dim() == 0 {
        return Err(Error::EmptyStream);
    }
    let sum: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.as_slice().len() as f64).sqrt())
}

/// Writes results as tab-separated text with a header line. Exhaustive
/// matches report cluster `-1`.
pub fn write_results<W: Write>(mut out: W, results: &[MatchResult]) -> Result<()> {
    let l = results.first().map_or(0, |r| r.params.len());
    write!(out, "query_id\tcluster\tdict_index\tdistance")?;
    for p in 0..l {
        write!(out, "\tt_{p}")?;
    }
    writeln!(out)?;
    for r in results {
        let cluster = r.cluster.map_or(-1, |k| k as i64);
        write!(out, "{}\t{}\t{}\t{:e}", r.query, cluster, r.dict_index, r.distance)?;
        for v in &r.params {
            write!(out, "\t{v:e}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses the output of [`write_results`].
pub fn read_results<R: BufRead>(input: R) -> Result<Vec<MatchResult>> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty result file".into()))??;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.len() < 4 || cols[..4] != ["query_id", "cluster", "dict_index", "distance"] {
        return Err(Error::Format("unexpected result header".into()));
    }
    let l = cols.len() - 4;
    let bad = |n: usize| Error::Format(format!("malformed result line {n}"));
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != l + 4 {
            return Err(bad(n + 2));
        }
        let cluster: i64 = f[1].parse().map_err(|_| bad(n + 2))?;
        let params = f[4..].iter().map(|v| v.parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad(n + 2))?;
        out.push(MatchResult {
            query: f[0].parse().map_err(|_| bad(n + 2))?,
            cluster: usize::try_from(cluster).ok(),
            dict_index: f[2].parse().map_err(|_| bad(n + 2))?,
            distance: f[3].parse().map_err(|_| bad(n + 2))?,
            params,
            fallback: false,
        });
    }
    Ok(out)
}
