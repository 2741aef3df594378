//! Baseline coreference systems: cosine thresholding with transitive
//! inference, and agglomerative clustering of external pairwise scores.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{round10, Clusters};
use crate::exec::Execution;
use crate::ingestion::RecordError;
use crate::model::MentionId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("empty development set")]
    EmptyDevSet,
    #[error("invalid sweep range [{min}, {max}] with step {step}")]
    InvalidSweep { min: f64, max: f64, step: f64 },
    #[error("threshold must not be NaN")]
    NanThreshold,
    #[error("score matrix is not symmetric at ({a}, {b}): {x} vs {y}")]
    Asymmetric { a: MentionId, b: MentionId, x: f64, y: f64 },
    #[error("score matrix entry ({a}, {b}) is not finite")]
    NonFinite { a: MentionId, b: MentionId },
    #[error("matrix has {ids} ids but {cells} cells")]
    Shape { ids: usize, cells: usize },
    #[error("contradictory scores for {a} and {b}: {x} vs {y}")]
    ContradictoryDuplicate { a: MentionId, b: MentionId, x: f64, y: f64 },
}

/// `f = 1` iff `similarity ≥ t`; unscored pairs are negative.
pub fn threshold_classify(similarity: Option<f64>, t: f64) -> bool {
    similarity.is_some_and(|s| s >= t)
}

/// Union-find over `0..n` with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    /// Groups of indices, each sorted, ordered by smallest member.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..self.parent.len() {
            let r = self.find(i);
            by_root.entry(r).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = by_root.into_values().collect();
        out.sort_by_key(|g| g[0]);
        out
    }
}

/// Connected components of the positive-link graph over `universe`.
/// Mentions named only in links are added to the universe.
pub fn transitive_inference<T: Ord + Clone>(
    universe: impl IntoIterator<Item = T>,
    positive: &[(T, T)],
) -> Clusters<T> {
    let mut ids: BTreeSet<T> = universe.into_iter().collect();
    for (a, b) in positive {
        ids.insert(a.clone());
        ids.insert(b.clone());
    }
    let ids: Vec<T> = ids.into_iter().collect();
    let index = |m: &T| ids.binary_search(m).expect("collected above");
    let mut ds = DisjointSet::new(ids.len());
    for (a, b) in positive {
        ds.union(index(a), index(b));
    }
    ds.groups()
        .into_iter()
        .map(|g| g.into_iter().map(|i| ids[i].clone()).collect())
        .collect()
}

/// Every link implied by a clustering (the transitive closure), as ordered
/// pairs `(a, b)` with `a < b`.
pub fn closure_links<T: Ord + Clone>(clusters: &[BTreeSet<T>]) -> Vec<(T, T)> {
    let mut out = Vec::new();
    for c in clusters {
        let v: Vec<&T> = c.iter().collect();
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                out.push((v[i].clone(), v[j].clone()));
            }
        }
    }
    out
}

/// A scored mention pair from a dev or test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub a: MentionId,
    pub b: MentionId,
    pub similarity: Option<f64>,
}

/// Thresholds every pair at `t` and closes the positive links transitively.
pub fn bcos_cluster(universe: impl IntoIterator<Item = MentionId>, pairs: &[ScoredPair], t: f64) -> Clusters {
    let positive: Vec<(MentionId, MentionId)> = pairs
        .iter()
        .filter(|p| threshold_classify(p.similarity, t))
        .map(|p| (p.a.clone(), p.b.clone()))
        .collect();
    transitive_inference(universe, &positive)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRange {
    pub t_min: f64,
    pub t_max: f64,
    pub step: f64,
}

impl Default for SweepRange {
    fn default() -> Self {
        Self {
            t_min: 0.30,
            t_max: 0.80,
            step: 0.01,
        }
    }
}

impl SweepRange {
    /// Thresholds from `t_min` to `t_max` inclusive, each rounded to 10
    /// decimals so that accumulated step error cannot drop the endpoint.
    pub fn thresholds(&self) -> Result<Vec<f64>, BaselineError> {
        let bad = || BaselineError::InvalidSweep {
            min: self.t_min,
            max: self.t_max,
            step: self.step,
        };
        if !(self.step > 0.0 && self.t_min.is_finite() && self.t_max.is_finite() && self.t_min <= self.t_max) {
            return Err(bad());
        }
        let n = ((self.t_max - self.t_min) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| round10(self.t_min + i as f64 * self.step)).collect())
    }
}

/// A dev pair: similarity and gold label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub similarity: Option<f64>,
    pub coreferent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best_t: f64,
    pub best_accuracy: f64,
    /// `(t, pairwise accuracy)` for every evaluated threshold.
    pub curve: Vec<(f64, f64)>,
}

pub fn pairwise_accuracy(pairs: &[LabeledPair], t: f64) -> f64 {
    let correct = pairs
        .iter()
        .filter(|p| threshold_classify(p.similarity, t) == p.coreferent)
        .count();
    correct as f64 / pairs.len() as f64
}

/// Pairwise accuracy at each threshold; the best is the maximum, ties going
/// to the lowest threshold.
pub fn sweep_threshold(
    pairs: &[LabeledPair],
    range: SweepRange,
    exec: Execution,
) -> Result<SweepResult, BaselineError> {
    if pairs.is_empty() {
        return Err(BaselineError::EmptyDevSet);
    }
    let ts = range.thresholds()?;
    let curve: Vec<(f64, f64)> = exec.map(&ts, |&t| (t, pairwise_accuracy(pairs, t)));
    let (best_t, best_accuracy) = curve
        .iter()
        .copied()
        .fold(None, |best: Option<(f64, f64)>, (t, acc)| match best {
            Some((_, b)) if b >= acc => best,
            _ => Some((t, acc)),
        })
        .expect("at least one threshold");
    Ok(SweepResult {
        best_t,
        best_accuracy,
        curve,
    })
}

/// Dense symmetric matrix of pairwise scores over sorted mention ids.
/// Missing pairs hold `f64::NEG_INFINITY`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    ids: Vec<MentionId>,
    cells: Vec<f64>,
    pub source_tag: String,
}

impl ScoreMatrix {
    /// Builds a matrix from a full row-major grid. Entries must be finite or
    /// negative infinity (missing); the diagonal is ignored.
    pub fn from_dense(ids: Vec<MentionId>, cells: Vec<f64>, source_tag: impl Into<String>) -> Result<Self, BaselineError> {
        let n = ids.len();
        if cells.len() != n * n {
            return Err(BaselineError::Shape { ids: n, cells: cells.len() });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        let mut sorted = vec![f64::NEG_INFINITY; n * n];
        for (i, &oi) in order.iter().enumerate() {
            for (j, &oj) in order.iter().enumerate() {
                sorted[i * n + j] = cells[oi * n + oj];
            }
        }
        let ids: Vec<MentionId> = order.iter().map(|&i| ids[i].clone()).collect();
        for i in 0..n {
            for j in i + 1..n {
                let (x, y) = (sorted[i * n + j], sorted[j * n + i]);
                let ok = |v: f64| v.is_finite() || v == f64::NEG_INFINITY;
                if !ok(x) || !ok(y) {
                    return Err(BaselineError::NonFinite { a: ids[i].clone(), b: ids[j].clone() });
                }
                let close = x == y || (x - y).abs() <= 1e-6;
                if !close {
                    return Err(BaselineError::Asymmetric { a: ids[i].clone(), b: ids[j].clone(), x, y });
                }
            }
        }
        Ok(Self { ids, cells: sorted, source_tag: source_tag.into() })
    }

    pub fn ids(&self) -> &[MentionId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.ids.len() + j]
    }

    pub fn score(&self, a: &MentionId, b: &MentionId) -> Option<f64> {
        let i = self.ids.binary_search(a).ok()?;
        let j = self.ids.binary_search(b).ok()?;
        Some(self.get(i, j))
    }
}

/// One line of an external score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub mention_id_a: MentionId,
    pub mention_id_b: MentionId,
    pub score: f64,
}

#[derive(Debug)]
pub struct LoadedScores {
    pub matrix: ScoreMatrix,
    pub errors: Vec<RecordError>,
}

/// Reads pairwise scores. With `known`, the matrix covers exactly those
/// mentions and records naming others are rejected; otherwise it covers the
/// mentions named in the file.
pub fn load_external_scores(
    reader: impl BufRead,
    known: Option<&BTreeSet<MentionId>>,
    source_tag: &str,
) -> Result<LoadedScores, BaselineError> {
    let mut errors = Vec::new();
    let mut scores: BTreeMap<(MentionId, MentionId), f64> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let mut reject = |message: String| errors.push(RecordError { line: line_no, message });
        let text = match line {
            Ok(t) if t.trim().is_empty() => continue,
            Ok(t) => t,
            Err(e) => {
                reject(e.to_string());
                continue;
            }
        };
        let rec: ScoreRecord = match serde_json::from_str(&text) {
            Ok(r) => r,
            Err(e) => {
                reject(e.to_string());
                continue;
            }
        };
        if let Some(k) = known {
            if let Some(m) = [&rec.mention_id_a, &rec.mention_id_b].into_iter().find(|m| !k.contains(*m)) {
                reject(format!("unknown mention {m}"));
                continue;
            }
        }
        if rec.mention_id_a == rec.mention_id_b {
            reject("a mention cannot be scored against itself".into());
            continue;
        }
        if !rec.score.is_finite() {
            reject(format!("score {} is not finite", rec.score));
            continue;
        }
        let key = if rec.mention_id_a < rec.mention_id_b {
            (rec.mention_id_a, rec.mention_id_b)
        } else {
            (rec.mention_id_b, rec.mention_id_a)
        };
        match scores.get(&key) {
            Some(&prev) if prev != rec.score => {
                return Err(BaselineError::ContradictoryDuplicate {
                    a: key.0,
                    b: key.1,
                    x: prev,
                    y: rec.score,
                })
            }
            Some(_) => {}
            None => {
                scores.insert(key, rec.score);
            }
        }
    }
    let ids: BTreeSet<MentionId> = match known {
        Some(k) => k.clone(),
        None => scores.keys().flat_map(|(a, b)| [a.clone(), b.clone()]).collect(),
    };
    let ids: Vec<MentionId> = ids.into_iter().collect();
    let n = ids.len();
    let mut cells = vec![f64::NEG_INFINITY; n * n];
    for ((a, b), s) in &scores {
        let i = ids.binary_search(a).expect("id collected");
        let j = ids.binary_search(b).expect("id collected");
        cells[i * n + j] = *s;
        cells[j * n + i] = *s;
    }
    Ok(LoadedScores {
        matrix: ScoreMatrix::from_dense(ids, cells, source_tag)?,
        errors,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

impl std::str::FromStr for Linkage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(format!("unknown linkage {other:?}; expected single, complete or average")),
        }
    }
}

/// Bottom-up clustering from singletons. At each step the two clusters with
/// the highest linkage score merge, provided that score is at least `tau`.
/// Clusters are identified by their smallest mention id; among equal
/// scores the lexicographically smallest pair of cluster ids merges first.
pub fn agglomerative_cluster(
    matrix: &ScoreMatrix,
    tau: f64,
    linkage: Linkage,
    exec: Execution,
) -> Result<Clusters, BaselineError> {
    if tau.is_nan() {
        return Err(BaselineError::NanThreshold);
    }
    let n = matrix.len();
    // Ids are sorted, so the smallest index in a cluster is its id.
    let mut dist = matrix.cells.clone();
    let mut size = vec![1usize; n];
    let mut alive = vec![true; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        let rows = exec.map_range(n, |i| {
            if !alive[i] {
                return None;
            }
            let mut best: Option<(f64, usize)> = None;
            for j in i + 1..n {
                if !alive[j] {
                    continue;
                }
                let s = dist[i * n + j];
                if best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, j));
                }
            }
            best.map(|(s, j)| (s, i, j))
        });
        let best = rows.into_iter().flatten().fold(None, |acc: Option<(f64, usize, usize)>, cand| match acc {
            Some(a) if a.0 >= cand.0 => Some(a),
            _ => Some(cand),
        });
        let Some((score, i, j)) = best else { break };
        if score < tau {
            break;
        }
        // Merge j into i (i < j, so i stays the cluster id).
        for k in 0..n {
            if !alive[k] || k == i || k == j {
                continue;
            }
            let (a, b) = (dist[i * n + k], dist[j * n + k]);
            let merged = match linkage {
                Linkage::Single => a.max(b),
                Linkage::Complete => a.min(b),
                Linkage::Average => {
                    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
                        f64::NEG_INFINITY
                    } else {
                        (size[i] as f64 * a + size[j] as f64 * b) / (size[i] + size[j]) as f64
                    }
                }
            };
            dist[i * n + k] = merged;
            dist[k * n + i] = merged;
        }
        size[i] += size[j];
        alive[j] = false;
        let moved = std::mem::take(&mut members[j]);
        members[i].extend(moved);
    }
    Ok(members
        .into_iter()
        .zip(alive)
        .filter(|(_, a)| *a)
        .map(|(m, _)| m.into_iter().map(|i| matrix.ids[i].clone()).collect())
        .collect())
}
