//! Span-based evaluation: token accuracy, exact-match micro P/R/F1, per-class
//! and macro-averaged P/R/F1, and the span-aware matcher for un-prefixed
//! attribute sequences.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::tags::{unprefixed_runs, Span, TagError, TagSequence};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sequence lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty class set")]
    EmptyClassSet,
    #[error(transparent)]
    Tag(#[from] TagError),
}

/// TP/FP/FN counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Per-class tallies; mergeable by addition, so per-document tallies can be
/// aggregated.
#[derive(Debug, Clone, Default)]
pub struct ConfusionTally {
    pub per_class: BTreeMap<String, Counts>,
}

impl ConfusionTally {
    pub fn merge(&mut self, other: &ConfusionTally) {
        for (class, counts) in &other.per_class {
            self.per_class.entry(class.clone()).or_default().add(*counts);
        }
    }

    pub fn pooled(&self) -> Counts {
        let mut total = Counts::default();
        for counts in self.per_class.values() {
            total.add(*counts);
        }
        total
    }
}

/// Precision / recall / F1 triple. F1 is 0 when both P and R are 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn zero() -> Prf {
        Prf {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        }
    }

    pub fn from_counts(c: Counts) -> Prf {
        let precision = if c.tp + c.fp == 0 {
            0.0
        } else {
            c.tp as f64 / (c.tp + c.fp) as f64
        };
        let recall = if c.tp + c.fn_ == 0 {
            0.0
        } else {
            c.tp as f64 / (c.tp + c.fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

fn span_set(spans: &[Span]) -> BTreeSet<(usize, usize, &str)> {
    spans
        .iter()
        .map(|s| (s.start, s.end, s.label.as_str()))
        .collect()
}

/// Exact-match span scoring: a predicted span is correct only when its
/// (start, end, label) triple equals a gold span. Boundary mismatches count
/// as both a false positive and a false negative.
pub fn span_micro_f1(gold: &[Span], pred: &[Span]) -> (Prf, ConfusionTally) {
    let gold_set = span_set(gold);
    let pred_set = span_set(pred);
    let mut tally = ConfusionTally::default();
    for span in &pred_set {
        let counts = tally.per_class.entry(span.2.to_string()).or_default();
        if gold_set.contains(span) {
            counts.tp += 1;
        } else {
            counts.fp += 1;
        }
    }
    for span in &gold_set {
        if !pred_set.contains(span) {
            tally.per_class.entry(span.2.to_string()).or_default().fn_ += 1;
        }
    }
    (Prf::from_counts(tally.pooled()), tally)
}

/// Per-class P/R/F1 over a fixed class set, with the unweighted mean as the
/// macro score. A class absent from both gold and pred contributes F1 = 0
/// unless `skip_absent` is set.
pub fn macro_f1(
    gold: &[Span],
    pred: &[Span],
    classes: &[String],
    skip_absent: bool,
) -> Result<(Prf, BTreeMap<String, Prf>), MetricsError> {
    if classes.is_empty() {
        return Err(MetricsError::EmptyClassSet);
    }
    let (_, tally) = span_micro_f1(gold, pred);
    let mut per_class = BTreeMap::new();
    let mut sum_p = 0.0;
    let mut sum_r = 0.0;
    let mut sum_f = 0.0;
    let mut counted = 0usize;
    for class in classes {
        let counts = tally.per_class.get(class).copied().unwrap_or_default();
        let absent = counts.tp + counts.fp + counts.fn_ == 0;
        let prf = Prf::from_counts(counts);
        per_class.insert(class.clone(), prf);
        if absent && skip_absent {
            continue;
        }
        sum_p += prf.precision;
        sum_r += prf.recall;
        sum_f += prf.f1;
        counted += 1;
    }
    let macro_prf = if counted == 0 {
        Prf::zero()
    } else {
        Prf {
            precision: sum_p / counted as f64,
            recall: sum_r / counted as f64,
            f1: sum_f / counted as f64,
        }
    };
    Ok((macro_prf, per_class))
}

/// The span-aware matcher for un-prefixed attribute tags: a maximal unbroken
/// run of one attribute tag yields an attributed span only when its extent
/// equals some entity span's extent exactly.
pub fn extract_attributed_spans(
    entity_spans: &[Span],
    attr_tags: &TagSequence,
) -> Result<Vec<Span>, MetricsError> {
    let extents: BTreeSet<(usize, usize)> =
        entity_spans.iter().map(|s| (s.start, s.end)).collect();
    let runs = unprefixed_runs(attr_tags)?;
    Ok(runs
        .into_iter()
        .filter(|run| extents.contains(&(run.start, run.end)))
        .collect())
}

/// Micro-averaged P/R/F1 for single-label multi-class sequences collapses to
/// one number: every disagreement is simultaneously an FP for the predicted
/// class and an FN for the gold class, so pooled FP = FN and P = R = F1.
/// Verifies the identity exactly and returns the common value.
pub fn micro_identity_check(gold: &[usize], pred: &[usize]) -> Result<f64, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch(gold.len(), pred.len()));
    }
    let mut tally = ConfusionTally::default();
    for (g, p) in gold.iter().zip(pred) {
        if g == p {
            tally.per_class.entry(g.to_string()).or_default().tp += 1;
        } else {
            tally.per_class.entry(p.to_string()).or_default().fp += 1;
            tally.per_class.entry(g.to_string()).or_default().fn_ += 1;
        }
    }
    let pooled = tally.pooled();
    assert_eq!(pooled.fp, pooled.fn_, "pooled FP must equal pooled FN");
    if gold.is_empty() {
        return Ok(1.0);
    }
    // FP = FN makes precision and recall the same division, and the harmonic
    // mean of two equal numbers is that number, so P = R = F1 exactly
    Ok(pooled.tp as f64 / (pooled.tp + pooled.fp) as f64)
}

/// Fraction of positions with equal tags, "O" included.
pub fn token_accuracy(gold: &[usize], pred: &[usize]) -> Result<f64, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch(gold.len(), pred.len()));
    }
    if gold.is_empty() {
        return Ok(1.0);
    }
    let agree = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(agree as f64 / gold.len() as f64)
}

/// Metrics for one tagging head.
#[derive(Debug, Clone)]
pub struct HeadMetrics {
    pub token_accuracy: f64,
    pub micro: Prf,
    pub per_class: BTreeMap<String, Prf>,
    pub macro_: Prf,
    pub tally: ConfusionTally,
}

/// Per-head evaluation report.
#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub heads: BTreeMap<String, HeadMetrics>,
}

impl MetricsReport {
    /// Human-readable flat table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:<20} {:>9} {:>9} {:>9} {:>9}\n",
            "head", "class", "accuracy", "P", "R", "F1"
        ));
        for (head, m) in &self.heads {
            out.push_str(&format!(
                "{:<12} {:<20} {:>9.4} {:>9.4} {:>9.4} {:>9.4}\n",
                head, "<micro>", m.token_accuracy, m.micro.precision, m.micro.recall, m.micro.f1
            ));
            for (class, prf) in &m.per_class {
                out.push_str(&format!(
                    "{:<12} {:<20} {:>9} {:>9.4} {:>9.4} {:>9.4}\n",
                    head, class, "", prf.precision, prf.recall, prf.f1
                ));
            }
            out.push_str(&format!(
                "{:<12} {:<20} {:>9} {:>9.4} {:>9.4} {:>9.4}\n",
                head, "<macro>", "", m.macro_.precision, m.macro_.recall, m.macro_.f1
            ));
        }
        out
    }

    /// Machine-readable line-delimited records: head, metric, class, value.
    pub fn render_records(&self) -> String {
        let mut out = String::new();
        for (head, m) in &self.heads {
            let mut push = |metric: &str, class: &str, value: f64| {
                out.push_str(&format!("{head}\t{metric}\t{class}\t{value:.6}\n"));
            };
            push("token_accuracy", "-", m.token_accuracy);
            push("span_micro_p", "-", m.micro.precision);
            push("span_micro_r", "-", m.micro.recall);
            push("span_micro_f1", "-", m.micro.f1);
            for (class, prf) in &m.per_class {
                push("span_class_p", class, prf.precision);
                push("span_class_r", class, prf.recall);
                push("span_class_f1", class, prf.f1);
            }
            push("span_macro_p", "-", m.macro_.precision);
            push("span_macro_r", "-", m.macro_.recall);
            push("span_macro_f1", "-", m.macro_.f1);
        }
        out
    }
}
