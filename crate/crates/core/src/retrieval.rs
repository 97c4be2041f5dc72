//! Exact descriptor search and average-recall evaluation.
//!
//! AR@x is the percentage of test queries whose top-x retrievals contain at
//! least one ground-truth id. Queries without ground truth are left out of
//! the denominator and reported separately.

use std::collections::HashSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::benchmark::TestQuery;
use crate::descriptor::DescriptorSet;
use crate::exec::Execution;
use crate::losses::{squared_distance, Descriptor};
use crate::{Error, Result};

pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 20];

/// Database descriptors in one contiguous buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    ids: Vec<String>,
    data: Vec<f32>,
    dim: usize,
}

impl RetrievalIndex {
    pub fn build(set: &DescriptorSet, database_ids: &[String]) -> Result<Self> {
        let mut seen = HashSet::with_capacity(database_ids.len());
        let mut data = Vec::with_capacity(database_ids.len() * set.dim());
        for id in database_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Argument(format!("database id {id} listed twice")));
            }
            let d = set
                .get(id)
                .ok_or_else(|| Error::Lookup(format!("no descriptor for database id {id}")))?;
            data.extend_from_slice(d.values());
        }
        Ok(RetrievalIndex {
            ids: database_ids.to_vec(),
            data,
            dim: set.dim(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// `(id, squared distance)` of the `k` nearest entries, ascending; equal
    /// distances are ordered by id.
    pub fn top_k(&self, query: &Descriptor, k: usize) -> Result<Vec<(&str, f64)>> {
        if k == 0 {
            return Err(Error::Argument("k must be >= 1".into()));
        }
        if query.dim() != self.dim {
            return Err(Error::Shape(format!(
                "query descriptor has dim {}, index has {}",
                query.dim(),
                self.dim
            )));
        }
        let mut scored: Vec<(f64, usize)> = if self.dim == 0 {
            (0..self.ids.len()).map(|i| (0.0, i)).collect()
        } else {
            self.data
                .chunks_exact(self.dim)
                .map(|row| squared_distance(row, query.values()))
                .zip(0..)
                .collect()
        };
        let order =
            |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1]));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored.into_iter().map(|(d, i)| (self.ids[i].as_str(), d)).collect())
    }
}

pub fn build_index(set: &DescriptorSet, database_ids: &[String]) -> Result<RetrievalIndex> {
    RetrievalIndex::build(set, database_ids)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query: String,
    /// 1-based rank of the first ground-truth hit within the largest x, if
    /// any. Always `None` for queries without ground truth.
    pub rank: Option<usize>,
    pub gt_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub n_query: usize,
    pub excluded_empty_gt: usize,
    /// AR@x in percent, keyed by x in ascending order.
    pub recall: IndexMap<usize, f64>,
    pub per_query: Vec<QueryOutcome>,
}

impl RecallReport {
    pub fn at(&self, x: usize) -> Option<f64> {
        self.recall.get(&x).copied()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,AR\n");
        for (x, ar) in &self.recall {
            s.push_str(&format!("{x},{ar}\n"));
        }
        s
    }
}

pub fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument(format!(
            "recall cut-offs must be strictly ascending positive integers (got {ks:?})"
        )));
    }
    Ok(())
}

/// AR@x for every x in `ks` over the test queries.
pub fn evaluate_recall(
    index: &RetrievalIndex,
    test: &[TestQuery],
    descriptors: &DescriptorSet,
    ks: &[usize],
    exec: Execution,
) -> Result<RecallReport> {
    check_ks(ks)?;
    let k_max = *ks.last().unwrap();
    let per_query = exec.try_map(test, |q| {
        let d = descriptors
            .get(&q.query)
            .ok_or_else(|| Error::Lookup(format!("no descriptor for test query {}", q.query)))?;
        let rank = if q.gt.is_empty() || index.is_empty() {
            None
        } else {
            let gt: HashSet<&str> = q.gt.iter().map(String::as_str).collect();
            index
                .top_k(d, k_max)?
                .iter()
                .position(|(id, _)| gt.contains(id))
                .map(|p| p + 1)
        };
        Ok(QueryOutcome {
            query: q.query.clone(),
            rank,
            gt_size: q.gt.len(),
        })
    })?;
    let excluded = per_query.iter().filter(|o| o.gt_size == 0).count();
    let n_query = per_query.len() - excluded;
    if excluded > 0 {
        log::info!("{excluded} test queries have no ground truth and are excluded");
    }
    let recall = ks
        .iter()
        .map(|&x| {
            let n_suc = per_query.iter().filter(|o| o.rank.is_some_and(|r| r <= x)).count();
            let ar = if n_query == 0 {
                0.0
            } else {
                n_suc as f64 / n_query as f64 * 100.0
            };
            (x, ar)
        })
        .collect();
    Ok(RecallReport {
        n_query,
        excluded_empty_gt: excluded,
        recall,
        per_query,
    })
}

/// Expected AR@x of a uniformly random ranking of a database of `db_size`
/// entries: the mean over queries with ground truth of
/// `1 - C(N - g, x) / C(N, x)`.
pub fn random_ranking_recall(test: &[TestQuery], db_size: usize, x: usize) -> f64 {
    let with_gt: Vec<usize> = test.iter().map(|q| q.gt.len()).filter(|&g| g > 0).collect();
    if with_gt.is_empty() || db_size == 0 {
        return 0.0;
    }
    let n = db_size as f64;
    let total: f64 = with_gt
        .iter()
        .map(|&g| {
            let g = g.min(db_size) as f64;
            let miss: f64 = (0..x.min(db_size))
                .map(|i| ((n - g - i as f64) / (n - i as f64)).max(0.0))
                .product();
            1.0 - miss
        })
        .sum();
    total / with_gt.len() as f64 * 100.0
}
