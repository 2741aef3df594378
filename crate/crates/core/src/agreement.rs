//! Inter-annotator agreement: Cohen's kappa for annotator pairs, Fleiss'
//! kappa across all annotators, and Landis–Koch interpretation bands.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AnnotatorId, PairKey, Verdict};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgreementError {
    #[error("no items rated by both annotators")]
    InsufficientOverlap,
    #[error("verdict lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("chance agreement is 1 while observed agreement is {observed}; kappa is undefined")]
    Undefined { observed: f64 },
    #[error("no items to rate")]
    NoItems,
    #[error("at least two raters per item are required, found {0}")]
    TooFewRaters(u32),
    #[error("item {item} has {found} ratings, expected {expected}")]
    RaggedRaters { item: usize, expected: u32, found: u32 },
    #[error("kappa {0} is outside [-1, 1]")]
    OutOfRange(f64),
}

fn kappa(observed: f64, chance: f64) -> Result<f64, AgreementError> {
    if (1.0 - chance).abs() < 1e-12 {
        return if (1.0 - observed).abs() < 1e-12 {
            Ok(1.0)
        } else {
            Err(AgreementError::Undefined { observed })
        };
    }
    Ok(((observed - chance) / (1.0 - chance)).clamp(-1.0, 1.0))
}

/// Cohen's kappa from a 2x2 contingency table (rows: annotator a,
/// columns: annotator b).
pub fn cohen_from_counts(yy: u64, yn: u64, ny: u64, nn: u64) -> Result<f64, AgreementError> {
    let n = (yy + yn + ny + nn) as f64;
    if n == 0.0 {
        return Err(AgreementError::InsufficientOverlap);
    }
    let po = (yy + nn) as f64 / n;
    let a_yes = (yy + yn) as f64 / n;
    let b_yes = (yy + ny) as f64 / n;
    let pe = a_yes * b_yes + (1.0 - a_yes) * (1.0 - b_yes);
    kappa(po, pe)
}

/// Cohen's kappa over two aligned verdict lists.
pub fn cohen_kappa(a: &[Verdict], b: &[Verdict]) -> Result<f64, AgreementError> {
    if a.len() != b.len() {
        return Err(AgreementError::LengthMismatch(a.len(), b.len()));
    }
    let mut t = [[0u64; 2]; 2];
    for (x, y) in a.iter().zip(b) {
        t[(*x == Verdict::No) as usize][(*y == Verdict::No) as usize] += 1;
    }
    cohen_from_counts(t[0][0], t[0][1], t[1][0], t[1][1])
}

/// Fleiss' kappa. Each item lists how many raters chose each category;
/// every item must have the same total number of raters.
pub fn fleiss_kappa<C: AsRef<[u32]>>(items: &[C]) -> Result<f64, AgreementError> {
    let first = items.first().ok_or(AgreementError::NoItems)?.as_ref();
    let n: u32 = first.iter().sum();
    if n < 2 {
        return Err(AgreementError::TooFewRaters(n));
    }
    let k = first.len();
    let mut totals = vec![0u64; k];
    let mut p_bar = 0.0;
    for (i, item) in items.iter().enumerate() {
        let item = item.as_ref();
        let found: u32 = item.iter().sum();
        if found != n || item.len() != k {
            return Err(AgreementError::RaggedRaters {
                item: i,
                expected: n,
                found,
            });
        }
        let sq: u64 = item.iter().map(|&c| u64::from(c) * u64::from(c)).sum();
        p_bar += (sq - u64::from(n)) as f64 / (f64::from(n) * f64::from(n - 1));
        for (t, &c) in totals.iter_mut().zip(item) {
            *t += u64::from(c);
        }
    }
    let big_n = items.len() as f64;
    p_bar /= big_n;
    let all = big_n * f64::from(n);
    let pe: f64 = totals.iter().map(|&t| (t as f64 / all).powi(2)).sum();
    kappa(p_bar, pe)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaBand {
    Poor,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl KappaBand {
    pub fn name(self) -> &'static str {
        match self {
            KappaBand::Poor => "poor",
            KappaBand::Slight => "slight",
            KappaBand::Fair => "fair",
            KappaBand::Moderate => "moderate",
            KappaBand::Substantial => "substantial",
            KappaBand::AlmostPerfect => "almost perfect",
        }
    }

    /// e.g. "moderate agreement".
    pub fn label(self) -> String {
        format!("{} agreement", self.name())
    }
}

impl std::fmt::Display for KappaBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// Landis & Koch (1977) band. Upper bounds are inclusive: 0.20 slight,
/// 0.40 fair, 0.60 moderate, 0.80 substantial.
pub fn interpret_kappa(value: f64) -> Result<KappaBand, AgreementError> {
    if !(-1.0..=1.0).contains(&value) {
        return Err(AgreementError::OutOfRange(value));
    }
    Ok(match value {
        v if v < 0.0 => KappaBand::Poor,
        v if v <= 0.20 => KappaBand::Slight,
        v if v <= 0.40 => KappaBand::Fair,
        v if v <= 0.60 => KappaBand::Moderate,
        v if v <= 0.80 => KappaBand::Substantial,
        _ => KappaBand::AlmostPerfect,
    })
}

/// One IAA pair and every verdict recorded on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IaaItem {
    pub pair_key: PairKey,
    pub votes: BTreeMap<AnnotatorId, Verdict>,
    /// Flagged difficult by at least one annotator.
    pub difficult: bool,
}

/// A kappa value, or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaValue {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl KappaValue {
    fn from_result(r: Result<f64, AgreementError>) -> Self {
        match r {
            Ok(k) => Self {
                kappa: Some(k),
                band: interpret_kappa(k).ok().map(KappaBand::label),
                note: None,
            },
            Err(e) => Self {
                kappa: None,
                band: None,
                note: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseAgreement {
    pub a: AnnotatorId,
    pub b: AnnotatorId,
    pub overlap: usize,
    #[serde(flatten)]
    pub value: KappaValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleissAgreement {
    pub raters: usize,
    pub items: usize,
    #[serde(flatten)]
    pub value: KappaValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub annotators: Vec<AnnotatorId>,
    pub pairwise: Vec<PairwiseAgreement>,
    /// Over items answered by every annotator.
    pub fleiss: FleissAgreement,
    /// Same, restricted to items flagged difficult.
    pub difficult_fleiss: FleissAgreement,
}

fn fleiss_over<'a>(annotators: &[AnnotatorId], items: impl Iterator<Item = &'a IaaItem>) -> FleissAgreement {
    let tables: Vec<[u32; 2]> = items
        .filter(|it| annotators.iter().all(|a| it.votes.contains_key(a)))
        .map(|it| {
            let yes = annotators.iter().filter(|a| it.votes[*a] == Verdict::Yes).count() as u32;
            [yes, annotators.len() as u32 - yes]
        })
        .collect();
    FleissAgreement {
        raters: annotators.len(),
        items: tables.len(),
        value: KappaValue::from_result(fleiss_kappa(&tables)),
    }
}

/// Agreement over IAA items. Annotators are everyone with at least one
/// verdict; Fleiss uses only items answered by all of them.
pub fn agreement_report(items: &[IaaItem]) -> AgreementReport {
    let annotators: Vec<AnnotatorId> = items
        .iter()
        .flat_map(|it| it.votes.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut pairwise = Vec::new();
    for (i, a) in annotators.iter().enumerate() {
        for b in &annotators[i + 1..] {
            let (va, vb): (Vec<Verdict>, Vec<Verdict>) = items
                .iter()
                .filter_map(|it| Some((*it.votes.get(a)?, *it.votes.get(b)?)))
                .unzip();
            pairwise.push(PairwiseAgreement {
                a: a.clone(),
                b: b.clone(),
                overlap: va.len(),
                value: KappaValue::from_result(cohen_kappa(&va, &vb)),
            });
        }
    }
    AgreementReport {
        fleiss: fleiss_over(&annotators, items.iter()),
        difficult_fleiss: fleiss_over(&annotators, items.iter().filter(|it| it.difficult)),
        annotators,
        pairwise,
    }
}
