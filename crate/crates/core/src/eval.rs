//! Scores a finished tree against expert judgments: link precision, recall and mAP,
//! orphan counts, and concept coverage.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ArtifactTree, TraceLink};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{what}: {message}")]
    Csv { what: String, message: String },
    #[error("{what} row {row}: unknown verdict {verdict:?} (expected approved, added or declined)")]
    Verdict { what: String, row: usize, verdict: String },
    #[error("{what}: duplicate concept label {label:?}")]
    DuplicateConcept { what: String, label: String },
    #[error("unknown artifact id {0}")]
    UnknownId(String),
}

pub type Pair = (String, String);

/// Expert-approved and expert-added links. Their union is the truth set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub approved: BTreeSet<Pair>,
    pub added: BTreeSet<Pair>,
}

impl GroundTruth {
    pub fn truth(&self) -> BTreeSet<Pair> {
        self.approved.union(&self.added).cloned().collect()
    }

    /// Reads `parent_id,child_id,verdict` rows; declined rows are dropped.
    pub fn from_csv(reader: impl Read, what: &str) -> Result<Self, EvalError> {
        #[derive(Deserialize)]
        struct Row {
            parent_id: String,
            child_id: String,
            verdict: String,
        }
        let mut gt = GroundTruth::default();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| EvalError::Csv { what: what.into(), message: e.to_string() })?;
            let pair = (row.parent_id, row.child_id);
            match row.verdict.to_ascii_lowercase().as_str() {
                "approved" => {
                    gt.approved.insert(pair);
                }
                "added" => {
                    gt.added.insert(pair);
                }
                "declined" => {}
                _ => return Err(EvalError::Verdict { what: what.into(), row: i + 1, verdict: row.verdict }),
            }
        }
        Ok(gt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptAnnotation {
    pub concept: String,
    pub present_in_ids: BTreeSet<String>,
}

/// Reads `concept,artifact_ids` rows with `;`-joined ids.
pub fn concepts_from_csv(reader: impl Read, what: &str) -> Result<Vec<ConceptAnnotation>, EvalError> {
    #[derive(Deserialize)]
    struct Row {
        concept: String,
        #[serde(default)]
        artifact_ids: String,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out: Vec<ConceptAnnotation> = Vec::new();
    let mut seen = BTreeSet::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| EvalError::Csv { what: what.into(), message: e.to_string() })?;
        if !seen.insert(row.concept.clone()) {
            return Err(EvalError::DuplicateConcept { what: what.into(), label: row.concept });
        }
        let ids = row.artifact_ids.split(';').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        out.push(ConceptAnnotation { concept: row.concept, present_in_ids: ids });
    }
    Ok(out)
}

/// `(precision, recall)`; each is `None` when its denominator is zero.
pub fn precision_recall(predicted: &BTreeSet<Pair>, truth: &BTreeSet<Pair>) -> (Option<f64>, Option<f64>) {
    let hits = predicted.intersection(truth).count() as f64;
    let precision = (!predicted.is_empty()).then(|| hits / predicted.len() as f64);
    let recall = (!truth.is_empty()).then(|| hits / truth.len() as f64);
    (precision, recall)
}

/// Precision at each correct hit, averaged over the hits. No hits gives 0.
pub fn average_precision(ranked_correct: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &ok) in ranked_correct.iter().enumerate() {
        if ok {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Mean of per-parent AP over parents with at least one true link. Each parent's
/// predicted children are ranked by score, descending, ties by child id. A parent with
/// true links but no predicted ones contributes 0.
pub fn mean_average_precision(predicted: &[TraceLink], truth: &BTreeSet<Pair>) -> Option<f64> {
    let mut by_parent: BTreeMap<&str, Vec<&TraceLink>> = BTreeMap::new();
    for l in predicted {
        by_parent.entry(l.parent_id.as_str()).or_default().push(l);
    }
    let queries: BTreeSet<&str> = truth.iter().map(|(p, _)| p.as_str()).collect();
    if queries.is_empty() {
        return None;
    }
    let total: f64 = queries
        .iter()
        .map(|p| {
            let mut list = by_parent.get(p).cloned().unwrap_or_default();
            list.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.child_id.cmp(&b.child_id)));
            list.dedup_by(|a, b| a.child_id == b.child_id);
            let ranked: Vec<bool> =
                list.iter().map(|l| truth.contains(&(p.to_string(), l.child_id.clone()))).collect();
            average_precision(&ranked)
        })
        .sum();
    Some(total / queries.len() as f64)
}

/// Artifacts of `layer_index` that no link names as a child.
pub fn count_orphans(tree: &ArtifactTree, layer_index: usize) -> usize {
    let Some(layer) = tree.layers.iter().find(|l| l.index == layer_index) else {
        return 0;
    };
    let linked: BTreeSet<&str> = tree.links.iter().map(|l| l.child_id.as_str()).collect();
    layer.artifacts.iter().filter(|a| !linked.contains(a.id.as_str())).count()
}

/// `(coverage, covered_by)` as fractions. Coverage is the share of concepts found in at
/// least one artifact; covered_by the share of the `generated` artifacts named by at
/// least one concept. `None` when the respective denominator is zero.
pub fn concept_coverage(
    annotations: &[ConceptAnnotation],
    generated: &BTreeSet<String>,
) -> (Option<f64>, Option<f64>) {
    if annotations.is_empty() {
        return (None, None);
    }
    let covered = annotations.iter().filter(|a| !a.present_in_ids.is_empty()).count();
    let coverage = covered as f64 / annotations.len() as f64;
    let named: BTreeSet<&String> = annotations.iter().flat_map(|a| &a.present_in_ids).collect();
    let covered_by = (!generated.is_empty())
        .then(|| generated.iter().filter(|id| named.contains(id)).count() as f64 / generated.len() as f64);
    (Some(coverage), covered_by)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(rename = "mAP", skip_serializing_if = "Option::is_none")]
    pub map: Option<f64>,
    /// Orphans per non-top layer, keyed by layer index.
    pub orphans: BTreeMap<usize, usize>,
    pub orphan_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covered_by_pct: Option<f64>,
}

/// Everything that can be computed from the tree and whichever inputs are given.
/// Annotation ids must exist in the tree; covered_by counts artifacts above layer 0.
pub fn evaluate(
    tree: &ArtifactTree,
    truth: Option<&GroundTruth>,
    concepts: Option<&[ConceptAnnotation]>,
) -> Result<EvalReport, EvalError> {
    let mut report = EvalReport::default();
    let top = tree.layers.iter().map(|l| l.index).max();
    for layer in &tree.layers {
        if Some(layer.index) != top {
            let n = count_orphans(tree, layer.index);
            report.orphans.insert(layer.index, n);
            report.orphan_count += n;
        }
    }
    if let Some(gt) = truth {
        let truth = gt.truth();
        if let Some(bad) = truth.iter().flat_map(|(p, c)| [p, c]).find(|id| tree.find(id).is_none()) {
            return Err(EvalError::UnknownId(bad.clone()));
        }
        let predicted: BTreeSet<Pair> =
            tree.links.iter().map(|l| (l.parent_id.clone(), l.child_id.clone())).collect();
        (report.precision, report.recall) = precision_recall(&predicted, &truth);
        report.map = mean_average_precision(&tree.links, &truth);
    }
    if let Some(concepts) = concepts {
        if let Some(bad) = concepts.iter().flat_map(|c| &c.present_in_ids).find(|id| tree.find(id).is_none()) {
            return Err(EvalError::UnknownId(bad.clone()));
        }
        let generated: BTreeSet<String> = tree.artifacts().filter(|a| a.layer_index > 0).map(|a| a.id.clone()).collect();
        (report.coverage_pct, report.covered_by_pct) = concept_coverage(concepts, &generated);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[(&str, &str)]) -> BTreeSet<Pair> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn precision_recall_cases() {
        let truth = pairs(&[("p", "a"), ("p", "b"), ("q", "c"), ("q", "d")]);
        assert_eq!(precision_recall(&truth, &truth), (Some(1.0), Some(1.0)));
        let mut plus = truth.clone();
        plus.insert(("q".into(), "x".into()));
        assert_eq!(precision_recall(&plus, &truth), (Some(0.8), Some(1.0)));
        assert_eq!(precision_recall(&pairs(&[("z", "z")]), &truth), (Some(0.0), Some(0.0)));
        assert_eq!(precision_recall(&BTreeSet::new(), &truth), (None, Some(0.0)));
        assert_eq!(precision_recall(&truth, &BTreeSet::new()), (Some(0.0), None));
    }

    #[test]
    fn ap_of_hit_miss_hit() {
        assert!((average_precision(&[true, false, true]) - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(average_precision(&[true, true, false]), 1.0);
    }

    #[test]
    fn verdict_parsing() {
        let csv = "parent_id,child_id,verdict\np,a,approved\np,b,added\np,c,declined\n";
        let gt = GroundTruth::from_csv(csv.as_bytes(), "truth").unwrap();
        assert_eq!(gt.truth(), pairs(&[("p", "a"), ("p", "b")]));
        let bad = "parent_id,child_id,verdict\np,a,maybe\n";
        assert!(matches!(GroundTruth::from_csv(bad.as_bytes(), "t"), Err(EvalError::Verdict { row: 1, .. })));
    }

    #[test]
    fn concepts_parsing() {
        let csv = "concept,artifact_ids\nflight,a;b\nsafety,\n";
        let c = concepts_from_csv(csv.as_bytes(), "c").unwrap();
        assert_eq!(c[0].present_in_ids.len(), 2);
        assert!(c[1].present_in_ids.is_empty());
        let dup = "concept,artifact_ids\nx,a\nx,b\n";
        assert!(concepts_from_csv(dup.as_bytes(), "c").is_err());
    }
}
