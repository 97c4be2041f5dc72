//! Training tuple mining and test ground truth.
//!
//! Two organizations of a set of dated driving scenes:
//!
//! - **Supervised** (distance metric). Samples are streamed in order; a sample
//!   at least `delta` away from every database sample joins the database,
//!   otherwise it becomes a training query (scene dated before `gamma`) or a
//!   test query. Training queries get random positives within `rho_pos` and
//!   random negatives beyond `rho_neg`; test queries get every database
//!   sample within `rho_pos` as ground truth.
//! - **Self-supervised** (time metric). Scenes before `gamma` are "old" and
//!   provide tuples whose positives are the immediately preceding samples and
//!   whose negatives come from a delayed buffer; scenes from `gamma` on are
//!   test queries against all old samples.
//!
//! Random choices draw from a per-query ChaCha stream seeded by the global
//! seed and a stable hash of the query id, so results do not depend on how the
//! per-query work is scheduled.

use std::collections::HashMap;

use chrono::NaiveDate;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::geometry::Pose;
use crate::{Error, Result};

/// One timestamped multi-sensor capture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    /// Microseconds since the Unix epoch.
    pub timestamp: i64,
    /// `T_world_ego`.
    pub pose: Pose,
    /// LiDAR cloud path relative to the dataset root.
    pub lidar: String,
    /// One image path per rig camera, relative to the dataset root.
    pub images: Vec<String>,
    /// Number of distinct landmarks in the cloud (synthetic datasets only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmark_count: Option<usize>,
}

impl Sample {
    /// Ground-plane position used for every distance threshold.
    pub fn position(&self) -> [f64; 2] {
        let [x, y, _] = self.pose.translation();
        [x, y]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub date: NaiveDate,
    pub samples: Vec<Sample>,
}

/// A sample id with its ground-plane position.
#[derive(Debug, Clone, PartialEq)]
pub struct Place {
    pub id: String,
    pub position: [f64; 2],
}

impl Place {
    pub fn new(id: impl Into<String>, position: [f64; 2]) -> Self {
        Place {
            id: id.into(),
            position,
        }
    }

    fn of(sample: &Sample) -> Self {
        Place::new(sample.id.clone(), sample.position())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedParams {
    pub delta: f64,
    pub gamma: NaiveDate,
    pub rho_pos: f64,
    pub rho_neg: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub seed: u64,
    pub val_fraction: f64,
}

impl SupervisedParams {
    pub const DELTA: f64 = 1.0;
    pub const RHO_POS: f64 = 9.0;
    pub const RHO_NEG: f64 = 18.0;
    pub const N_POS: usize = 2;
    pub const N_NEG: usize = 4;

    pub fn with_gamma(gamma: NaiveDate) -> Self {
        SupervisedParams {
            delta: Self::DELTA,
            gamma,
            rho_pos: Self::RHO_POS,
            rho_neg: Self::RHO_NEG,
            n_pos: Self::N_POS,
            n_neg: Self::N_NEG,
            seed: 0,
            val_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Argument(format!("delta must be > 0 (got {})", self.delta)));
        }
        if !(self.rho_pos > 0.0 && self.rho_pos < self.rho_neg && self.rho_neg.is_finite()) {
            return Err(Error::Argument(format!(
                "need 0 < rho_pos < rho_neg (got {} and {})",
                self.rho_pos, self.rho_neg
            )));
        }
        if self.n_pos == 0 || self.n_neg == 0 {
            return Err(Error::Argument("n_pos and n_neg must be >= 1".into()));
        }
        check_fraction(self.val_fraction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeBufferMode {
    /// The delayed buffer exactly as listed, duplicates and all.
    #[default]
    Faithful,
    /// Only samples more than `sigma_neg` (and the positive window) before the
    /// query are candidates.
    Sanitized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfSupervisedParams {
    pub gamma: NaiveDate,
    pub rho_pos: f64,
    pub sigma_neg: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub seed: u64,
    pub mode: NegativeBufferMode,
    pub val_fraction: f64,
}

impl SelfSupervisedParams {
    /// 6 samples, i.e. 3 s at 2 Hz.
    pub const SIGMA_NEG: usize = 6;

    pub fn with_gamma(gamma: NaiveDate) -> Self {
        SelfSupervisedParams {
            gamma,
            rho_pos: SupervisedParams::RHO_POS,
            sigma_neg: Self::SIGMA_NEG,
            n_pos: SupervisedParams::N_POS,
            n_neg: SupervisedParams::N_NEG,
            seed: 0,
            mode: NegativeBufferMode::Faithful,
            val_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_neg == 0 {
            return Err(Error::Argument("sigma_neg must be >= 1".into()));
        }
        if !(self.rho_pos > 0.0 && self.rho_pos.is_finite()) {
            return Err(Error::Argument(format!("rho_pos must be > 0 (got {})", self.rho_pos)));
        }
        if self.n_pos == 0 || self.n_neg == 0 {
            return Err(Error::Argument("n_pos and n_neg must be >= 1".into()));
        }
        check_fraction(self.val_fraction)
    }

    /// First sample index in a scene that yields a tuple.
    pub fn first_query_index(&self) -> usize {
        self.sigma_neg + self.n_pos + self.n_neg
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::Argument(format!(
            "validation fraction must lie in [0, 1] (got {f})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTuple {
    pub query: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestQuery {
    pub query: String,
    pub gt: Vec<String>,
}

/// Database, training-query and test-query sets of the supervised scheme.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SupervisedPartition {
    pub database: Vec<Place>,
    pub train_queries: Vec<Place>,
    pub test_queries: Vec<Place>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MiningSummary {
    pub queries: usize,
    pub mined: usize,
    pub skipped_few_positives: usize,
    pub skipped_few_negatives: usize,
    /// Self-supervised only: old scenes too short to yield any tuple.
    pub short_scenes: usize,
}

/// 2-d k-d tree over sample positions for exact radius queries.
#[derive(Debug, Clone)]
pub struct PlanarIndex {
    /// (position, index into the input slice), arranged as an implicit tree.
    nodes: Vec<([f64; 2], usize)>,
}

impl PlanarIndex {
    pub fn new(positions: &[[f64; 2]]) -> Self {
        let mut nodes: Vec<_> = positions.iter().copied().zip(0..).collect();
        build_kd(&mut nodes, 0);
        PlanarIndex { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(squared distance, index)` of every point within `radius` (inclusive),
    /// unordered.
    pub fn within(&self, query: [f64; 2], radius: f64) -> Vec<(f64, usize)> {
        let mut out = Vec::new();
        search_kd(&self.nodes, 0, query, radius * radius, &mut out);
        out
    }

    pub fn nearest_distance(&self, query: [f64; 2]) -> Option<f64> {
        let mut best = f64::INFINITY;
        nearest_kd(&self.nodes, 0, query, &mut best);
        best.is_finite().then(|| best.sqrt())
    }
}

fn build_kd(nodes: &mut [([f64; 2], usize)], depth: usize) {
    if nodes.len() <= 1 {
        return;
    }
    let axis = depth % 2;
    let mid = nodes.len() / 2;
    nodes.select_nth_unstable_by(mid, |a, b| a.0[axis].total_cmp(&b.0[axis]));
    let (left, right) = nodes.split_at_mut(mid);
    build_kd(left, depth + 1);
    build_kd(&mut right[1..], depth + 1);
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn search_kd(nodes: &[([f64; 2], usize)], depth: usize, q: [f64; 2], r2: f64, out: &mut Vec<(f64, usize)>) {
    if nodes.is_empty() {
        return;
    }
    let mid = nodes.len() / 2;
    let (p, idx) = nodes[mid];
    let d2 = dist2(p, q);
    if d2 <= r2 {
        out.push((d2, idx));
    }
    let axis = depth % 2;
    let diff = q[axis] - p[axis];
    let (near, far) = if diff <= 0.0 {
        (&nodes[..mid], &nodes[mid + 1..])
    } else {
        (&nodes[mid + 1..], &nodes[..mid])
    };
    search_kd(near, depth + 1, q, r2, out);
    if diff * diff <= r2 {
        search_kd(far, depth + 1, q, r2, out);
    }
}

fn nearest_kd(nodes: &[([f64; 2], usize)], depth: usize, q: [f64; 2], best: &mut f64) {
    if nodes.is_empty() {
        return;
    }
    let mid = nodes.len() / 2;
    let p = nodes[mid].0;
    *best = best.min(dist2(p, q));
    let axis = depth % 2;
    let diff = q[axis] - p[axis];
    let (near, far) = if diff <= 0.0 {
        (&nodes[..mid], &nodes[mid + 1..])
    } else {
        (&nodes[mid + 1..], &nodes[..mid])
    };
    nearest_kd(near, depth + 1, q, best);
    if diff * diff < *best {
        nearest_kd(far, depth + 1, q, best);
    }
}

/// Ids of the candidates within `radius` (inclusive) of `query`, nearest
/// first; equal distances are ordered by id. Linear scan.
pub fn knn_within(query: [f64; 2], candidates: &[(String, [f64; 2])], radius: f64) -> Vec<String> {
    let r2 = radius * radius;
    let mut hits: Vec<(f64, &str)> = candidates
        .iter()
        .filter_map(|(id, p)| {
            let d2 = dist2(*p, query);
            (d2 <= r2).then_some((d2, id.as_str()))
        })
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    hits.into_iter().map(|(_, id)| id.to_string()).collect()
}

/// Sorted `(distance, id)` hits from the k-d tree; same ordering contract as
/// [`knn_within`].
fn ranked_within<'a>(index: &PlanarIndex, places: &'a [Place], query: [f64; 2], radius: f64) -> Vec<&'a Place> {
    let mut hits = index.within(query, radius);
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| places[a.1].id.cmp(&places[b.1].id)));
    hits.into_iter().map(|(_, i)| &places[i]).collect()
}

/// Streams samples in input order into database / training / test sets.
pub fn split_supervised(scenes: &[Scene], p: &SupervisedParams) -> SupervisedPartition {
    let mut grid = AdmissionGrid::new(p.delta);
    let mut out = SupervisedPartition::default();
    for scene in scenes {
        for sample in &scene.samples {
            let place = Place::of(sample);
            if grid.is_clear(place.position) {
                grid.insert(place.position);
                out.database.push(place);
            } else if scene.date < p.gamma {
                out.train_queries.push(place);
            } else {
                out.test_queries.push(place);
            }
        }
    }
    out
}

/// Uniform hash grid with cell size `delta`: checks whether any stored point
/// lies strictly closer than `delta`.
struct AdmissionGrid {
    delta: f64,
    cells: HashMap<(i64, i64), Vec<[f64; 2]>>,
}

impl AdmissionGrid {
    fn new(delta: f64) -> Self {
        AdmissionGrid {
            delta,
            cells: HashMap::new(),
        }
    }

    fn key(&self, p: [f64; 2]) -> (i64, i64) {
        ((p[0] / self.delta).floor() as i64, (p[1] / self.delta).floor() as i64)
    }

    fn is_clear(&self, p: [f64; 2]) -> bool {
        let (cx, cy) = self.key(p);
        let d2 = self.delta * self.delta;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(pts) = self.cells.get(&(cx + dx, cy + dy)) {
                    if pts.iter().any(|&q| dist2(p, q) < d2) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn insert(&mut self, p: [f64; 2]) {
        let k = self.key(p);
        self.cells.entry(k).or_default().push(p);
    }
}

/// Stable 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Random stream for one query.
pub fn query_rng(seed: u64, query_id: &str) -> ChaCha8Rng {
    let mut z = seed ^ fnv1a(query_id.as_bytes());
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningOutcome {
    pub tuples: Vec<TrainingTuple>,
    pub summary: MiningSummary,
}

enum Mined {
    Tuple(TrainingTuple),
    FewPositives,
    FewNegatives,
}

/// Random positives within `rho_pos` and negatives beyond `rho_neg` from the
/// database for every training query. Queries with too few candidates are
/// skipped and counted.
pub fn mine_supervised(database: &[Place], queries: &[Place], p: &SupervisedParams, exec: Execution) -> MiningOutcome {
    let positions: Vec<[f64; 2]> = database.iter().map(|pl| pl.position).collect();
    let index = PlanarIndex::new(&positions);
    let results = exec.map(queries, |q| {
        let positives = ranked_within(&index, database, q.position, p.rho_pos);
        if positives.len() < p.n_pos {
            return Mined::FewPositives;
        }
        let mut near: Vec<usize> = index
            .within(q.position, p.rho_neg)
            .into_iter()
            .map(|(_, i)| i)
            .collect();
        near.sort_unstable();
        let far_count = database.len() - near.len();
        if far_count < p.n_neg {
            return Mined::FewNegatives;
        }
        let mut rng = query_rng(p.seed, &q.id);
        let pos = index::sample(&mut rng, positives.len(), p.n_pos)
            .into_iter()
            .map(|i| positives[i].id.clone())
            .collect();
        let neg = index::sample(&mut rng, far_count, p.n_neg)
            .into_iter()
            .map(|rank| database[nth_outside(&near, rank)].id.clone())
            .collect();
        Mined::Tuple(TrainingTuple {
            query: q.id.clone(),
            positives: pos,
            negatives: neg,
        })
    });
    let mut summary = MiningSummary {
        queries: queries.len(),
        ..Default::default()
    };
    let mut tuples = Vec::new();
    for (q, r) in queries.iter().zip(results) {
        match r {
            Mined::Tuple(t) => {
                summary.mined += 1;
                tuples.push(t);
            }
            Mined::FewPositives => {
                log::debug!(
                    "skipping {}: fewer than {} positives within {} m",
                    q.id,
                    p.n_pos,
                    p.rho_pos
                );
                summary.skipped_few_positives += 1;
            }
            Mined::FewNegatives => {
                log::debug!(
                    "skipping {}: fewer than {} negatives beyond {} m",
                    q.id,
                    p.n_neg,
                    p.rho_neg
                );
                summary.skipped_few_negatives += 1;
            }
        }
    }
    if summary.mined < summary.queries {
        log::info!(
            "supervised mining skipped {} of {} queries",
            summary.queries - summary.mined,
            summary.queries
        );
    }
    MiningOutcome { tuples, summary }
}

/// Index of the `rank`-th element of `0..n` not contained in sorted `excluded`.
fn nth_outside(excluded: &[usize], rank: usize) -> usize {
    // Smallest i with i - |{e in excluded : e < i}| == rank and i not excluded.
    let mut i = rank;
    let mut skipped = 0;
    loop {
        let below = excluded.partition_point(|&e| e <= i);
        if below == skipped {
            return i;
        }
        i += below - skipped;
        skipped = below;
    }
}

/// Every database id within `rho_pos` of each query, nearest first. Queries
/// with no match keep an empty list.
pub fn ground_truth(queries: &[Place], database: &[Place], rho_pos: f64, exec: Execution) -> Vec<TestQuery> {
    let positions: Vec<[f64; 2]> = database.iter().map(|pl| pl.position).collect();
    let index = PlanarIndex::new(&positions);
    exec.map(queries, |q| TestQuery {
        query: q.id.clone(),
        gt: ranked_within(&index, database, q.position, rho_pos)
            .into_iter()
            .map(|pl| pl.id.clone())
            .collect(),
    })
}

/// Indices of old (dated before `gamma`) and new scenes.
pub fn split_selfsupervised(scenes: &[Scene], gamma: NaiveDate) -> (Vec<usize>, Vec<usize>) {
    (0..scenes.len()).partition(|&i| scenes[i].date < gamma)
}

/// Index-level tuple of one scene plus the candidate pool the negatives were
/// drawn from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneTuple {
    pub query: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub pool: Vec<usize>,
}

/// Time-metric mining over one scene of `len` samples. `rng_for(j)` supplies
/// the random stream of the query at index `j`.
pub fn mine_scene_indices<F>(len: usize, p: &SelfSupervisedParams, mut rng_for: F) -> Vec<SceneTuple>
where
    F: FnMut(usize) -> ChaCha8Rng,
{
    let first = p.first_query_index();
    let mut buffer: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for j in 0..len {
        if j >= first {
            let pool = match p.mode {
                NegativeBufferMode::Faithful => buffer.clone(),
                NegativeBufferMode::Sanitized => (0..j - p.sigma_neg.max(p.n_pos)).collect(),
            };
            let mut rng = rng_for(j);
            let negatives = index::sample(&mut rng, pool.len(), p.n_neg)
                .into_iter()
                .map(|k| pool[k])
                .collect();
            out.push(SceneTuple {
                query: j,
                positives: (j - p.n_pos..j).collect(),
                negatives,
                pool,
            });
            buffer.push(j - p.sigma_neg);
        } else {
            buffer.push(j);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfSupervisedOutcome {
    pub tuples: Vec<TrainingTuple>,
    /// Every sample of every old scene, in order.
    pub old_samples: Vec<Place>,
    pub summary: MiningSummary,
}

pub fn mine_selfsupervised(old_scenes: &[&Scene], p: &SelfSupervisedParams, exec: Execution) -> SelfSupervisedOutcome {
    let per_scene = exec.map(old_scenes, |scene| {
        let ids: Vec<&str> = scene.samples.iter().map(|s| s.id.as_str()).collect();
        mine_scene_indices(ids.len(), p, |j| query_rng(p.seed, ids[j]))
            .into_iter()
            .map(|t| TrainingTuple {
                query: ids[t.query].to_string(),
                positives: t.positives.iter().map(|&k| ids[k].to_string()).collect(),
                negatives: t.negatives.iter().map(|&k| ids[k].to_string()).collect(),
            })
            .collect::<Vec<_>>()
    });
    let mut summary = MiningSummary::default();
    let mut tuples = Vec::new();
    for (scene, mined) in old_scenes.iter().zip(per_scene) {
        summary.queries += scene.samples.len();
        if mined.is_empty() {
            log::info!(
                "scene {} has {} samples, fewer than the {} needed for a tuple",
                scene.id,
                scene.samples.len(),
                p.first_query_index() + 1
            );
            summary.short_scenes += 1;
        }
        summary.mined += mined.len();
        tuples.extend(mined);
    }
    let old_samples = old_scenes
        .iter()
        .flat_map(|s| s.samples.iter().map(Place::of))
        .collect();
    SelfSupervisedOutcome {
        tuples,
        old_samples,
        summary,
    }
}

/// Seeded split of the test queries into (validation, test). The validation
/// share is `floor(fraction * n)`; both parts keep the input order.
pub fn split_validation(test: &[TestQuery], fraction: f64, seed: u64) -> Result<(Vec<TestQuery>, Vec<TestQuery>)> {
    check_fraction(fraction)?;
    let n = test.len();
    let n_val = ((fraction * n as f64) + 1e-9).floor().min(n as f64) as usize;
    let mut rng = query_rng(seed, "validation-split");
    let mut chosen = vec![false; n];
    for i in index::sample(&mut rng, n, n_val) {
        chosen[i] = true;
    }
    let (val, rest): (Vec<_>, Vec<_>) = test.iter().cloned().zip(chosen).partition(|(_, c)| *c);
    Ok((
        val.into_iter().map(|(t, _)| t).collect(),
        rest.into_iter().map(|(t, _)| t).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Supervised,
    SelfSupervised,
}

/// Everything needed to write the train and test split files.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSplit {
    pub scheme: Scheme,
    pub database: Vec<String>,
    pub train: Vec<TrainingTuple>,
    /// All test queries including the validation share.
    pub test: Vec<TestQuery>,
    pub validation: Vec<String>,
    pub summary: MiningSummary,
}

impl BenchmarkSplit {
    /// Test queries outside the validation share.
    pub fn test_only(&self) -> Vec<TestQuery> {
        let val: std::collections::HashSet<&str> = self.validation.iter().map(String::as_str).collect();
        self.test
            .iter()
            .filter(|q| !val.contains(q.query.as_str()))
            .cloned()
            .collect()
    }
}

fn validation_ids(test: &[TestQuery], fraction: f64, seed: u64) -> Result<Vec<String>> {
    let (val, _) = split_validation(test, fraction, seed)?;
    Ok(val.into_iter().map(|q| q.query).collect())
}

pub fn build_supervised(
    scenes: &[Scene],
    p: &SupervisedParams,
    exec: Execution,
) -> Result<(BenchmarkSplit, SupervisedPartition)> {
    p.validate()?;
    let part = split_supervised(scenes, p);
    let mined = mine_supervised(&part.database, &part.train_queries, p, exec);
    let test = ground_truth(&part.test_queries, &part.database, p.rho_pos, exec);
    let validation = validation_ids(&test, p.val_fraction, p.seed)?;
    let split = BenchmarkSplit {
        scheme: Scheme::Supervised,
        database: part.database.iter().map(|pl| pl.id.clone()).collect(),
        train: mined.tuples,
        test,
        validation,
        summary: mined.summary,
    };
    Ok((split, part))
}

pub fn build_selfsupervised(scenes: &[Scene], p: &SelfSupervisedParams, exec: Execution) -> Result<BenchmarkSplit> {
    p.validate()?;
    let (old, new) = split_selfsupervised(scenes, p.gamma);
    let old: Vec<&Scene> = old.into_iter().map(|i| &scenes[i]).collect();
    let mined = mine_selfsupervised(&old, p, exec);
    let queries: Vec<Place> = new
        .iter()
        .flat_map(|&i| scenes[i].samples.iter().map(Place::of))
        .collect();
    let test = ground_truth(&queries, &mined.old_samples, p.rho_pos, exec);
    let validation = validation_ids(&test, p.val_fraction, p.seed)?;
    Ok(BenchmarkSplit {
        scheme: Scheme::SelfSupervised,
        database: mined.old_samples.iter().map(|pl| pl.id.clone()).collect(),
        train: mined.tuples,
        test,
        validation,
        summary: mined.summary,
    })
}
