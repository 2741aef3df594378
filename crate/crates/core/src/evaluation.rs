//! Clustering metrics (MUC and B³), the capability-test harness, similarity
//! histograms and the cluster file format shared with corpus export.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CharSpan, DocId, MentionId, Verdict};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("not a partition: {0}")]
    NotPartition(String),
    #[error("no mentions left to score")]
    EmptyUniverse,
    #[error("bin width must be positive and finite, got {0}")]
    InvalidBinWidth(f64),
    #[error("similarity {0} outside [-1, 1]")]
    SimilarityOutOfRange(f64),
    #[error("no prediction for {} case(s): {}", .0.len(), .0.join(", "))]
    MissingPrediction(Vec<String>),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Clusters as sets of mention ids; every mention appears at most once.
pub type Clusters<T = MentionId> = Vec<BTreeSet<T>>;

/// Rejects empty clusters and mentions that belong to two clusters.
pub fn check_partition<T: Ord + std::fmt::Debug>(clusters: &[BTreeSet<T>]) -> Result<(), EvalError> {
    let mut seen = BTreeSet::new();
    for (i, c) in clusters.iter().enumerate() {
        if c.is_empty() {
            return Err(EvalError::NotPartition(format!("cluster {i} is empty")));
        }
        for m in c {
            if !seen.insert(m) {
                return Err(EvalError::NotPartition(format!("{m:?} appears in more than one cluster")));
            }
        }
    }
    Ok(())
}

/// Sorts members and clusters so equal partitions compare equal.
pub fn canonical<T: Ord + Clone>(clusters: &[BTreeSet<T>]) -> Clusters<T> {
    let mut out: Vec<BTreeSet<T>> = clusters.iter().filter(|c| !c.is_empty()).cloned().collect();
    out.sort();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Muc,
    B3,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "muc" => Ok(Metric::Muc),
            "b3" | "bcubed" => Ok(Metric::B3),
            other => Err(format!("unknown metric {other:?}; expected muc or b3")),
        }
    }
}

/// Numerators and denominators behind a score. For MUC they are link
/// counts; for B³ the numerators are summed per-mention fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreCounts {
    pub recall_num: f64,
    pub recall_den: f64,
    pub precision_num: f64,
    pub precision_den: f64,
    /// Mentions in the scored universe.
    pub mentions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metric: Metric,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ScoreCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn ratio(num: u64, den: u64, what: &str, notes: &mut Vec<String>) -> f64 {
    if den == 0 {
        notes.push(format!("{what} is 0/0, reported as 0"));
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Σ_K (|K| − |p(K)|) and Σ_K (|K| − 1) over the clusters in `key`, where
/// p(K) is K partitioned by `response` (unlisted mentions are singletons).
fn muc_counts<T: Ord>(key: &[BTreeSet<T>], response: &[BTreeSet<T>]) -> (u64, u64) {
    let owner: BTreeMap<&T, usize> = response
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.iter().map(move |m| (m, i)))
        .collect();
    let mut num = 0;
    let mut den = 0;
    for k in key {
        let mut parts = BTreeSet::new();
        let mut loose = 0u64;
        for m in k {
            match owner.get(m) {
                Some(i) => {
                    parts.insert(*i);
                }
                None => loose += 1,
            }
        }
        let p = parts.len() as u64 + loose;
        num += k.len() as u64 - p;
        den += k.len() as u64 - 1;
    }
    (num, den)
}

/// Link-based MUC score (Vilain et al., 1995).
pub fn muc_score<T: Ord + std::fmt::Debug>(
    gold: &[BTreeSet<T>],
    system: &[BTreeSet<T>],
) -> Result<ScoreReport, EvalError> {
    check_partition(gold)?;
    check_partition(system)?;
    let (rn, rd) = muc_counts(gold, system);
    let (pn, pd) = muc_counts(system, gold);
    let mut notes = Vec::new();
    let recall = ratio(rn, rd, "recall", &mut notes);
    let precision = ratio(pn, pd, "precision", &mut notes);
    // Exact rational form of 2PR/(P+R) so that equal fractions stay exact.
    let f1 = if rd == 0 || pd == 0 || rn == 0 || pn == 0 {
        0.0
    } else {
        (2 * u128::from(pn) * u128::from(rn)) as f64
            / (u128::from(pn) * u128::from(rd) + u128::from(rn) * u128::from(pd)) as f64
    };
    let mentions = gold.iter().map(BTreeSet::len).sum();
    Ok(ScoreReport {
        metric: Metric::Muc,
        precision,
        recall,
        f1,
        counts: ScoreCounts {
            recall_num: rn as f64,
            recall_den: rd as f64,
            precision_num: pn as f64,
            precision_den: pd as f64,
            mentions,
        },
        notes,
    })
}

/// Mention-based B³ score (Bagga and Baldwin, 1998) over the gold mention
/// universe. With `remove_singletons`, mentions in gold singletons are
/// dropped first; system clusters are always restricted to the universe,
/// and universe mentions missing from the system count as system singletons.
pub fn b3_score<T: Ord + std::fmt::Debug>(
    gold: &[BTreeSet<T>],
    system: &[BTreeSet<T>],
    remove_singletons: bool,
) -> Result<ScoreReport, EvalError> {
    check_partition(gold)?;
    check_partition(system)?;
    let gold: Vec<&BTreeSet<T>> = gold
        .iter()
        .filter(|c| !remove_singletons || c.len() > 1)
        .collect();
    let gold_of: BTreeMap<&T, usize> = gold
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.iter().map(move |m| (m, i)))
        .collect();
    if gold_of.is_empty() {
        return Err(EvalError::EmptyUniverse);
    }
    let restricted: Vec<BTreeSet<&T>> = system
        .iter()
        .map(|c| c.iter().filter(|m| gold_of.contains_key(m)).collect::<BTreeSet<_>>())
        .filter(|c| !c.is_empty())
        .collect();
    let sys_of: BTreeMap<&T, usize> = restricted
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.iter().map(move |m| (*m, i)))
        .collect();
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    for (m, &g) in &gold_of {
        let g_set = gold[g];
        let (overlap, sys_len) = match sys_of.get(m) {
            Some(&s) => {
                let s_set = &restricted[s];
                (s_set.iter().filter(|x| g_set.contains(**x)).count(), s_set.len())
            }
            None => (1, 1),
        };
        p_sum += overlap as f64 / sys_len as f64;
        r_sum += overlap as f64 / g_set.len() as f64;
    }
    let n = gold_of.len() as f64;
    let precision = p_sum / n;
    let recall = r_sum / n;
    Ok(ScoreReport {
        metric: Metric::B3,
        precision,
        recall,
        f1: f1(precision, recall),
        counts: ScoreCounts {
            recall_num: r_sum,
            recall_den: n,
            precision_num: p_sum,
            precision_den: n,
            mentions: gold_of.len(),
        },
        notes: Vec::new(),
    })
}

/// One line of a cluster file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub doc_id: DocId,
    pub start_char: usize,
    pub end_char: usize,
    #[serde(deserialize_with = "string_or_number")]
    pub cluster_id: String,
}

fn string_or_number<'de, D: serde::Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        S(String),
        N(i64),
    }
    Ok(match Raw::deserialize(d)? {
        Raw::S(s) => s,
        Raw::N(n) => n.to_string(),
    })
}

impl ClusterRecord {
    pub fn mention_id(&self) -> Result<MentionId, EvalError> {
        let span = CharSpan::new(self.start_char, self.end_char)
            .map_err(|e| EvalError::NotPartition(e.to_string()))?;
        Ok(MentionId::for_span(&self.doc_id, span))
    }
}

pub fn read_cluster_file(reader: impl BufRead) -> Result<Vec<ClusterRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ClusterRecord = serde_json::from_str(&line).map_err(|e| EvalError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.start_char >= rec.end_char {
            return Err(EvalError::Format {
                line: i + 1,
                message: format!("empty range [{}, {})", rec.start_char, rec.end_char),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_cluster_file(records: &[ClusterRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Groups records by cluster id. A mention listed twice in one cluster is
/// kept once; a mention in two clusters is an error.
pub fn clusters_from_records(records: &[ClusterRecord]) -> Result<Clusters, EvalError> {
    let mut by_id: BTreeMap<&str, BTreeSet<MentionId>> = BTreeMap::new();
    let mut owner: BTreeMap<MentionId, &str> = BTreeMap::new();
    for r in records {
        let m = r.mention_id()?;
        if let Some(prev) = owner.insert(m.clone(), &r.cluster_id) {
            if prev != r.cluster_id {
                return Err(EvalError::NotPartition(format!(
                    "{m} is in clusters {prev} and {}",
                    r.cluster_id
                )));
            }
        }
        by_id.entry(&r.cluster_id).or_default().insert(m);
    }
    Ok(by_id.into_values().collect())
}

/// Converts clusters back to records; mention ids must be span-derived.
pub fn records_from_clusters(clusters: &[BTreeSet<MentionId>]) -> Result<Vec<ClusterRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, c) in canonical(clusters).iter().enumerate() {
        for m in c {
            let (doc, span) = parse_mention_id(m)
                .ok_or_else(|| EvalError::NotPartition(format!("{m} is not a span-derived mention id")))?;
            out.push(ClusterRecord {
                doc_id: doc,
                start_char: span.start,
                end_char: span.end,
                cluster_id: i.to_string(),
            });
        }
    }
    Ok(out)
}

/// Splits `doc@start-end` back into its parts.
pub fn parse_mention_id(id: &MentionId) -> Option<(DocId, CharSpan)> {
    let (doc, range) = id.as_str().rsplit_once(crate::model::MENTION_ID_SEPARATOR)?;
    let (s, e) = range.split_once('-')?;
    let span = CharSpan::new(s.parse().ok()?, e.parse().ok()?).ok()?;
    Some((DocId::from(doc), span))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapabilityCategory {
    AnaphoraExophora,
    SubsetRelationship,
    Paraphrase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    Coreferent,
    NotCoreferent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityCase {
    pub category: CapabilityCategory,
    pub expected: Expected,
    pub mention_id_a: MentionId,
    pub mention_id_b: MentionId,
}

impl CapabilityCase {
    fn label(&self) -> String {
        format!("{}|{}", self.mention_id_a, self.mention_id_b)
    }
}

pub fn read_capability_cases(reader: impl BufRead) -> Result<Vec<CapabilityCase>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let fail = |message: String| EvalError::Format { line: i + 1, message };
        let line = line.map_err(|e| fail(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityCell {
    pub category: CapabilityCategory,
    pub expected: Expected,
    pub passes: usize,
    pub total: usize,
    pub pass_rate: f64,
}

impl CapabilityCell {
    /// e.g. "47.1% (16/34)".
    pub fn display_rate(&self) -> String {
        format!("{:.1}% ({}/{})", self.pass_rate * 100.0, self.passes, self.total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityReport {
    pub cells: Vec<CapabilityCell>,
    pub total: usize,
}

/// Pass rates per (category, expected) cell. `predict` says whether the
/// system puts the two mentions in one cluster, or `None` if it cannot tell.
pub fn capability_report(
    cases: &[CapabilityCase],
    predict: impl Fn(&CapabilityCase) -> Option<bool>,
) -> Result<CapabilityReport, EvalError> {
    let mut cells: BTreeMap<(CapabilityCategory, Expected), (usize, usize)> = BTreeMap::new();
    let mut missing = Vec::new();
    for case in cases {
        let Some(linked) = predict(case) else {
            missing.push(case.label());
            continue;
        };
        let pass = linked == (case.expected == Expected::Coreferent);
        let cell = cells.entry((case.category, case.expected)).or_default();
        cell.0 += pass as usize;
        cell.1 += 1;
    }
    if !missing.is_empty() {
        return Err(EvalError::MissingPrediction(missing));
    }
    Ok(CapabilityReport {
        cells: cells
            .into_iter()
            .map(|((category, expected), (passes, total))| CapabilityCell {
                category,
                expected,
                passes,
                total,
                pass_rate: passes as f64 / total as f64,
            })
            .collect(),
        total: cases.len(),
    })
}

/// Co-reference prediction from a clustering; mentions absent from every
/// cluster are singletons.
pub fn cluster_predictor(clusters: &[BTreeSet<MentionId>]) -> impl Fn(&CapabilityCase) -> Option<bool> + '_ {
    let owner: BTreeMap<&MentionId, usize> = clusters
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.iter().map(move |m| (m, i)))
        .collect();
    move |case| {
        Some(match (owner.get(&case.mention_id_a), owner.get(&case.mention_id_b)) {
            (Some(a), Some(b)) => a == b,
            _ => case.mention_id_a == case.mention_id_b,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_start: f64,
    pub count_yes: usize,
    pub count_no: usize,
}

/// Counts labelled similarities in half-open bins `[start, start + width)`
/// covering [-1, 1]; 1.0 falls into the last bin.
pub fn similarity_histogram(
    pairs: &[(f64, Verdict)],
    bin_width: f64,
) -> Result<Vec<HistogramBin>, EvalError> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(EvalError::InvalidBinWidth(bin_width));
    }
    let n_bins = ((2.0 / bin_width) - 1e-9).ceil().max(1.0) as usize;
    let mut bins: Vec<HistogramBin> = (0..n_bins)
        .map(|i| HistogramBin {
            bin_start: round10(-1.0 + i as f64 * bin_width),
            count_yes: 0,
            count_no: 0,
        })
        .collect();
    for &(s, label) in pairs {
        if !(-1.0..=1.0).contains(&s) {
            return Err(EvalError::SimilarityOutOfRange(s));
        }
        let i = (((s + 1.0) / bin_width + 1e-9).floor() as usize).min(n_bins - 1);
        match label {
            Verdict::Yes => bins[i].count_yes += 1,
            Verdict::No => bins[i].count_no += 1,
        }
    }
    Ok(bins)
}

/// Rounds to 10 decimal places, removing accumulated step error.
pub fn round10(x: f64) -> f64 {
    (x * 1e10).round() / 1e10
}

/// Histogram as CSV with a header row.
pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut s = String::from("bin_start,count_yes,count_no\n");
    for b in bins {
        s.push_str(&format!("{:.2},{},{}\n", b.bin_start, b.count_yes, b.count_no));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn part(spec: &str) -> Clusters<char> {
        spec.split_whitespace().map(|c| c.chars().collect()).collect()
    }

    /// Vilain recall by explicit graph search: the system-link graph restricted
    /// to each key cluster, components counted by depth-first search.
    fn muc_oracle(key: &Clusters<char>, resp: &Clusters<char>) -> (u64, u64) {
        let same = |a: char, b: char| resp.iter().any(|c| c.contains(&a) && c.contains(&b));
        let (mut num, mut den) = (0, 0);
        for k in key {
            let v: Vec<char> = k.iter().copied().collect();
            let mut seen = vec![false; v.len()];
            let mut comps = 0;
            for s in 0..v.len() {
                if seen[s] {
                    continue;
                }
                comps += 1;
                let mut stack = vec![s];
                seen[s] = true;
                while let Some(x) = stack.pop() {
                    for y in 0..v.len() {
                        if !seen[y] && same(v[x], v[y]) {
                            seen[y] = true;
                            stack.push(y);
                        }
                    }
                }
            }
            num += v.len() as u64 - comps;
            den += v.len() as u64 - 1;
        }
        (num, den)
    }

    fn b3_oracle(gold: &Clusters<char>, sys: &Clusters<char>) -> (f64, f64) {
        let universe: Vec<char> = gold.iter().flatten().copied().collect();
        let cluster = |p: &Clusters<char>, m: char| -> BTreeSet<char> {
            p.iter()
                .find(|c| c.contains(&m))
                .map(|c| c.iter().filter(|x| universe.contains(x)).copied().collect())
                .unwrap_or_else(|| BTreeSet::from([m]))
        };
        let (mut p, mut r) = (0.0, 0.0);
        for &m in &universe {
            let g = cluster(gold, m);
            let s = cluster(sys, m);
            let both = g.intersection(&s).count() as f64;
            p += both / s.len() as f64;
            r += both / g.len() as f64;
        }
        let n = universe.len() as f64;
        (p / n, r / n)
    }

    #[test]
    fn muc_worked_case() {
        let r = muc_score(&part("ABC DE"), &part("AB CDE")).unwrap();
        assert_eq!(r.recall, 2.0 / 3.0);
        assert_eq!(r.precision, 2.0 / 3.0);
        assert_eq!(r.f1, 2.0 / 3.0);
        let same = muc_score(&part("ABC DE"), &part("ABC DE")).unwrap();
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn muc_all_singletons_and_empty_links() {
        let r = muc_score(&part("ABC DE"), &part("A B C D E")).unwrap();
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.f1, 0.0);
        assert!(r.notes.iter().any(|n| n.contains("precision")));
    }

    #[test]
    fn b3_worked_cases() {
        let r = b3_score(&part("ABC DE"), &part("AB CDE"), false).unwrap();
        assert!((r.precision - 11.0 / 15.0).abs() < 1e-12);
        assert!((r.recall - 11.0 / 15.0).abs() < 1e-12);
        let r = b3_score(&part("AB C"), &part("AB C"), true).unwrap();
        assert_eq!(r.counts.mentions, 2);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        assert!(matches!(
            b3_score(&part("A B"), &part("AB"), true),
            Err(EvalError::EmptyUniverse)
        ));
    }

    #[test]
    fn singleton_removal_restricts_system() {
        // C is a gold singleton: the system linking it to A,B is not scored.
        let r = b3_score(&part("AB C"), &part("ABC"), true).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 1.0));
        let kept = b3_score(&part("AB C"), &part("ABC"), false).unwrap();
        assert!(kept.precision < 1.0);
    }

    #[test]
    fn partitions_checked() {
        assert!(muc_score(&part("AB BC"), &part("A")).is_err());
        assert!(b3_score(&part("AB"), &part("AB A"), false).is_err());
    }

    #[test]
    fn cluster_file_round_trip() {
        let text = "{\"doc_id\":\"d1\",\"start_char\":0,\"end_char\":4,\"cluster_id\":7}\n\
                    {\"doc_id\":\"d2\",\"start_char\":3,\"end_char\":9,\"cluster_id\":\"7\"}\n\
                    \n\
                    {\"doc_id\":\"d1\",\"start_char\":5,\"end_char\":6,\"cluster_id\":\"x\"}\n";
        let recs = read_cluster_file(text.as_bytes()).unwrap();
        let clusters = clusters_from_records(&recs).unwrap();
        assert_eq!(clusters.len(), 2);
        let back = records_from_clusters(&clusters).unwrap();
        let mut buf = Vec::new();
        write_cluster_file(&back, &mut buf).unwrap();
        let again = clusters_from_records(&read_cluster_file(&buf[..]).unwrap()).unwrap();
        assert_eq!(canonical(&clusters), canonical(&again));
    }

    #[test]
    fn cluster_file_rejects_conflicts() {
        let text = "{\"doc_id\":\"d1\",\"start_char\":0,\"end_char\":4,\"cluster_id\":1}\n\
                    {\"doc_id\":\"d1\",\"start_char\":0,\"end_char\":4,\"cluster_id\":2}\n";
        let recs = read_cluster_file(text.as_bytes()).unwrap();
        assert!(clusters_from_records(&recs).is_err());
        let bad = "{\"doc_id\":\"d1\",\"start_char\":4,\"end_char\":4,\"cluster_id\":1}\n";
        assert!(matches!(read_cluster_file(bad.as_bytes()), Err(EvalError::Format { line: 1, .. })));
    }

    fn case(cat: CapabilityCategory, expected: Expected, i: usize) -> CapabilityCase {
        CapabilityCase {
            category: cat,
            expected,
            mention_id_a: format!("n@{i}-{}", i + 1).into(),
            mention_id_b: format!("s@{i}-{}", i + 1).into(),
        }
    }

    #[test]
    fn capability_arithmetic() {
        use CapabilityCategory::*;
        let mut cases: Vec<CapabilityCase> = (0..34).map(|i| case(Paraphrase, Expected::Coreferent, i)).collect();
        cases.extend((34..40).map(|i| case(AnaphoraExophora, Expected::NotCoreferent, i)));
        let report = capability_report(&cases, |c| {
            let i: usize = c.mention_id_a.as_str()[2..].split('-').next().unwrap().parse().unwrap();
            Some(i < 16)
        })
        .unwrap();
        let cell = report.cells.iter().find(|c| c.category == Paraphrase).unwrap();
        assert_eq!((cell.passes, cell.total), (16, 34));
        assert_eq!(cell.display_rate(), "47.1% (16/34)");
        let other = report.cells.iter().find(|c| c.category == AnaphoraExophora).unwrap();
        assert_eq!(other.display_rate(), "100.0% (6/6)");
        assert_eq!(report.cells.iter().map(|c| c.total).sum::<usize>(), report.total);

        let none = capability_report(&cases[..5], |_| Some(false)).unwrap();
        assert_eq!(none.cells[0].pass_rate, 0.0);
        assert!(matches!(
            capability_report(&cases[..3], |_| None),
            Err(EvalError::MissingPrediction(v)) if v.len() == 3
        ));
    }

    #[test]
    fn histogram_bins() {
        let bins = similarity_histogram(
            &[(0.62, Verdict::Yes), (0.63, Verdict::No), (1.0, Verdict::Yes), (-1.0, Verdict::No), (0.60, Verdict::No)],
            0.05,
        )
        .unwrap();
        assert_eq!(bins.len(), 40);
        let b = bins.iter().find(|b| (b.bin_start - 0.60).abs() < 1e-9).unwrap();
        assert_eq!((b.count_yes, b.count_no), (1, 2));
        assert_eq!(bins.last().unwrap().count_yes, 1);
        assert_eq!(bins[0].count_no, 1);
        let total: usize = bins.iter().map(|b| b.count_yes + b.count_no).sum();
        assert_eq!(total, 5);
        assert!(similarity_histogram(&[], 0.0).is_err());
        assert!(histogram_csv(&bins).starts_with("bin_start,count_yes,count_no\n-1.00,0,1\n"));
    }

    fn arb_partition(n: usize) -> impl Strategy<Value = Clusters<char>> {
        prop::collection::vec(0..n, n).prop_map(move |labels| {
            let mut by: BTreeMap<usize, BTreeSet<char>> = BTreeMap::new();
            for (i, l) in labels.into_iter().enumerate() {
                by.entry(l).or_default().insert((b'A' + i as u8) as char);
            }
            by.into_values().collect()
        })
    }

    fn pairs() -> impl Strategy<Value = (Clusters<char>, Clusters<char>)> {
        (1usize..=8).prop_flat_map(|n| (arb_partition(n), arb_partition(n)))
    }

    proptest! {
        #[test]
        fn muc_matches_oracle((g, s) in pairs()) {
            let r = muc_score(&g, &s).unwrap();
            let (rn, rd) = muc_oracle(&g, &s);
            let (pn, pd) = muc_oracle(&s, &g);
            let er = if rd == 0 { 0.0 } else { rn as f64 / rd as f64 };
            let ep = if pd == 0 { 0.0 } else { pn as f64 / pd as f64 };
            prop_assert!((r.recall - er).abs() < 1e-9);
            prop_assert!((r.precision - ep).abs() < 1e-9);
            prop_assert!((r.f1 - f1(ep, er)).abs() < 1e-9);
        }

        #[test]
        fn b3_matches_oracle((g, s) in pairs()) {
            let r = b3_score(&g, &s, false).unwrap();
            let (p, rc) = b3_oracle(&g, &s);
            prop_assert!((r.precision - p).abs() < 1e-9);
            prop_assert!((r.recall - rc).abs() < 1e-9);
        }

        #[test]
        fn perfect_iff_equal((g, s) in pairs()) {
            let b = b3_score(&g, &s, false).unwrap();
            let equal = canonical(&g) == canonical(&s);
            prop_assert_eq!(b.f1 == 1.0, equal);
            let m = muc_score(&g, &s).unwrap();
            if equal && g.iter().any(|c| c.len() > 1) {
                prop_assert_eq!(m.f1, 1.0);
            }
        }

        #[test]
        fn relabeling_invariant((g, s) in pairs()) {
            let mut g2 = g.clone();
            g2.reverse();
            let mut s2 = s.clone();
            s2.rotate_left(s.len() / 2);
            prop_assert_eq!(muc_score(&g, &s).unwrap(), muc_score(&g2, &s2).unwrap());
            let (a, b) = (b3_score(&g, &s, true), b3_score(&g2, &s2, true));
            prop_assert_eq!(a.map(|r| r.f1).ok(), b.map(|r| r.f1).ok());
        }

        #[test]
        fn merging_gold_clusters_never_raises_b3_precision(g in (2usize..=8).prop_flat_map(arb_partition), i in 0usize..8, j in 0usize..8) {
            prop_assume!(g.len() >= 2);
            let (i, j) = (i % g.len(), j % g.len());
            prop_assume!(i != j);
            let mut merged: Clusters<char> = g.iter().enumerate().filter(|(k, _)| *k != i && *k != j).map(|(_, c)| c.clone()).collect();
            merged.push(g[i].union(&g[j]).copied().collect());
            let exact = b3_score(&g, &g, false).unwrap().precision;
            prop_assert!(b3_score(&g, &merged, false).unwrap().precision <= exact);
        }

        #[test]
        fn muc_ignores_shared_singletons((g, s) in pairs()) {
            let mut g2 = g.clone();
            g2.push(BTreeSet::from(['z']));
            let mut s2 = s.clone();
            s2.push(BTreeSet::from(['z']));
            let a = muc_score(&g, &s).unwrap();
            let b = muc_score(&g2, &s2).unwrap();
            prop_assert_eq!((a.precision, a.recall, a.f1), (b.precision, b.recall, b.f1));
        }
    }
}
