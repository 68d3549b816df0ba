//! Compare predicted event runs against ground truth.
//!
//! Events match one-to-one within a clip and class when they agree on state
//! and overlap well enough in time (temporal IoU at or above the threshold);
//! among all valid pairings the one with the highest total overlap wins.
//! Whatever fails to match is explained: a leftover prediction is a false
//! positive, leftover ground truth a false negative — unless the two line up
//! in time and merely disagree on the state, which is reported as a state
//! mismatch. Matched pairs that are not frame-exact carry their boundary
//! shifts.

use crate::assignment::max_weight_matching;
use crate::events::EventState;
use crate::tracking::ObjectClass;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

pub const DEFAULT_T_IOU_THRESHOLD: f64 = 0.5;
pub const SWEEP_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

/// One event as the evaluator sees it: a state over a time interval,
/// clip-relative seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledEvent {
    pub state: EventState,
    pub start_s: f64,
    pub end_s: f64,
}

/// Event lists keyed by clip and class. Missing keys mean "no events".
pub type EventSet = BTreeMap<(String, ObjectClass), Vec<LabeledEvent>>;

/// Temporal IoU of two intervals: overlap length over union length.
pub fn t_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = a.1.max(b.1) - a.0.min(b.0);
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchedPair {
    pub pred_idx: usize,
    pub gt_idx: usize,
    pub t_iou: f64,
}

fn interval(e: &LabeledEvent) -> (f64, f64) {
    (e.start_s, e.end_s)
}

/// One-to-one event matching maximizing total temporal IoU. Pairs below
/// `threshold` never match (at the threshold they do); pairs with differing
/// states never match unless `state_blind`.
pub fn match_events(
    pred: &[LabeledEvent],
    gt: &[LabeledEvent],
    threshold: f64,
    state_blind: bool,
) -> Vec<MatchedPair> {
    let weights: Vec<Vec<f64>> = pred
        .iter()
        .map(|p| {
            gt.iter()
                .map(|g| {
                    if state_blind || p.state == g.state {
                        t_iou(interval(p), interval(g))
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    max_weight_matching(&weights, threshold)
        .into_iter()
        .map(|(pi, gi)| MatchedPair {
            pred_idx: pi,
            gt_idx: gi,
            t_iou: weights[pi][gi],
        })
        .collect()
}

/// Why a prediction and the ground truth disagree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiffKind {
    /// Predicted event with no counterpart in the ground truth.
    FalsePositive,
    /// Ground-truth event the prediction misses entirely.
    FalseNegative,
    /// Matched, but the boundaries are off (pred minus ground truth).
    TemporalShift { start_delta_s: f64, end_delta_s: f64 },
    /// Right time, wrong state.
    StateMismatch {
        pred_state: EventState,
        gt_state: EventState,
    },
}

impl DiffKind {
    pub fn label(&self) -> &'static str {
        match self {
            DiffKind::FalsePositive => "false_positive",
            DiffKind::FalseNegative => "false_negative",
            DiffKind::TemporalShift { .. } => "temporal_shift",
            DiffKind::StateMismatch { .. } => "state_mismatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventDiff {
    #[serde(flatten)]
    pub kind: DiffKind,
    pub pred_idx: Option<usize>,
    pub gt_idx: Option<usize>,
    pub t_iou: Option<f64>,
}

/// Explain every imperfection in `pred` against `gt`: boundary shifts on
/// matched pairs, then state mismatches among the leftovers, then false
/// positives/negatives for whatever remains.
pub fn error_report(pred: &[LabeledEvent], gt: &[LabeledEvent], threshold: f64) -> Vec<EventDiff> {
    let matches = match_events(pred, gt, threshold, false);
    let mut pred_taken = vec![false; pred.len()];
    let mut gt_taken = vec![false; gt.len()];
    let mut diffs = Vec::new();

    for m in &matches {
        pred_taken[m.pred_idx] = true;
        gt_taken[m.gt_idx] = true;
        if m.t_iou < 1.0 {
            let p = &pred[m.pred_idx];
            let g = &gt[m.gt_idx];
            diffs.push(EventDiff {
                kind: DiffKind::TemporalShift {
                    start_delta_s: p.start_s - g.start_s,
                    end_delta_s: p.end_s - g.end_s,
                },
                pred_idx: Some(m.pred_idx),
                gt_idx: Some(m.gt_idx),
                t_iou: Some(m.t_iou),
            });
        }
    }

    // Second pass: leftovers that overlap in time but disagree on state.
    let left_pred: Vec<usize> = (0..pred.len()).filter(|i| !pred_taken[*i]).collect();
    let left_gt: Vec<usize> = (0..gt.len()).filter(|j| !gt_taken[*j]).collect();
    let weights: Vec<Vec<f64>> = left_pred
        .iter()
        .map(|&i| {
            left_gt
                .iter()
                .map(|&j| {
                    if pred[i].state == gt[j].state {
                        0.0
                    } else {
                        t_iou(interval(&pred[i]), interval(&gt[j]))
                    }
                })
                .collect()
        })
        .collect();
    for (pi, gi) in max_weight_matching(&weights, threshold) {
        let (i, j) = (left_pred[pi], left_gt[gi]);
        pred_taken[i] = true;
        gt_taken[j] = true;
        diffs.push(EventDiff {
            kind: DiffKind::StateMismatch {
                pred_state: pred[i].state,
                gt_state: gt[j].state,
            },
            pred_idx: Some(i),
            gt_idx: Some(j),
            t_iou: Some(weights[pi][gi]),
        });
    }

    for (i, taken) in pred_taken.iter().enumerate() {
        if !taken {
            diffs.push(EventDiff {
                kind: DiffKind::FalsePositive,
                pred_idx: Some(i),
                gt_idx: None,
                t_iou: None,
            });
        }
    }
    for (j, taken) in gt_taken.iter().enumerate() {
        if !taken {
            diffs.push(EventDiff {
                kind: DiffKind::FalseNegative,
                pred_idx: None,
                gt_idx: Some(j),
                t_iou: None,
            });
        }
    }
    diffs
}

/// Match-quality numbers for one prediction/ground-truth pair of event
/// lists (or a micro-aggregate of several).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub n_pred: usize,
    pub n_gt: usize,
    pub n_matched: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean temporal IoU over matched pairs; absent when nothing matched.
    pub mean_t_iou: Option<f64>,
    /// Same event count and every pair frame-exact.
    pub fully_correct: bool,
}

fn ratio_or_vacuous(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn metrics_from_counts(n_pred: usize, n_gt: usize, t_ious: &[f64]) -> ClassMetrics {
    let n_matched = t_ious.len();
    let precision = ratio_or_vacuous(n_matched, n_pred);
    let recall = ratio_or_vacuous(n_matched, n_gt);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let mean_t_iou = if n_matched == 0 {
        None
    } else {
        Some(t_ious.iter().sum::<f64>() / n_matched as f64)
    };
    let fully_correct =
        n_pred == n_gt && n_matched == n_pred && t_ious.iter().all(|&t| t == 1.0);
    ClassMetrics {
        n_pred,
        n_gt,
        n_matched,
        precision,
        recall,
        f1,
        mean_t_iou,
        fully_correct,
    }
}

pub fn class_metrics(
    pred: &[LabeledEvent],
    gt: &[LabeledEvent],
    threshold: f64,
    state_blind: bool,
) -> ClassMetrics {
    let t_ious: Vec<f64> = match_events(pred, gt, threshold, state_blind)
        .iter()
        .map(|m| m.t_iou)
        .collect();
    metrics_from_counts(pred.len(), gt.len(), &t_ious)
}

/// Evaluation of one clip-and-class pair: its numbers plus the explained
/// differences.
#[derive(Debug, Clone, Serialize)]
pub struct ClipEval {
    pub metrics: ClassMetrics,
    pub diffs: Vec<EventDiff>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub state_blind: bool,
    pub per_clip: BTreeMap<String, BTreeMap<ObjectClass, ClipEval>>,
    pub per_class: BTreeMap<ObjectClass, ClassMetrics>,
    pub overall: ClassMetrics,
    /// Overall metrics at each of [`SWEEP_THRESHOLDS`], in order.
    pub sweep: Vec<(f64, ClassMetrics)>,
    /// Total diffs of each kind across all clips and classes.
    pub diff_counts: BTreeMap<String, usize>,
}

struct Accumulator {
    n_pred: usize,
    n_gt: usize,
    t_ious: Vec<f64>,
    all_fully_correct: bool,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            n_pred: 0,
            n_gt: 0,
            t_ious: Vec::new(),
            all_fully_correct: true,
        }
    }

    fn add(&mut self, pred: &[LabeledEvent], gt: &[LabeledEvent], matches: &[MatchedPair]) {
        self.n_pred += pred.len();
        self.n_gt += gt.len();
        self.t_ious.extend(matches.iter().map(|m| m.t_iou));
        let m = metrics_from_counts(
            pred.len(),
            gt.len(),
            &matches.iter().map(|m| m.t_iou).collect::<Vec<_>>(),
        );
        self.all_fully_correct &= m.fully_correct;
    }

    fn finish(&self) -> ClassMetrics {
        let mut m = metrics_from_counts(self.n_pred, self.n_gt, &self.t_ious);
        // A micro-aggregate is exact only if every member pair was.
        m.fully_correct = self.all_fully_correct && m.fully_correct;
        m
    }
}

/// Evaluate predictions against ground truth over every clip and class
/// present on either side.
pub fn evaluate(pred: &EventSet, gt: &EventSet, threshold: f64, state_blind: bool) -> EvalReport {
    static EMPTY: Vec<LabeledEvent> = Vec::new();
    let keys: std::collections::BTreeSet<&(String, ObjectClass)> =
        pred.keys().chain(gt.keys()).collect();

    let mut per_clip: BTreeMap<String, BTreeMap<ObjectClass, ClipEval>> = BTreeMap::new();
    let mut per_class_acc: BTreeMap<ObjectClass, Accumulator> = BTreeMap::new();
    let mut overall_acc = Accumulator::new();
    let mut sweep_accs: Vec<(f64, Accumulator)> = SWEEP_THRESHOLDS
        .iter()
        .map(|&t| (t, Accumulator::new()))
        .collect();
    let mut diff_counts: BTreeMap<String, usize> = BTreeMap::new();

    for key in keys {
        let (clip_id, class) = key;
        let p = pred.get(key).unwrap_or(&EMPTY);
        let g = gt.get(key).unwrap_or(&EMPTY);

        let matches = match_events(p, g, threshold, state_blind);
        overall_acc.add(p, g, &matches);
        per_class_acc
            .entry(*class)
            .or_insert_with(Accumulator::new)
            .add(p, g, &matches);
        for (t, acc) in sweep_accs.iter_mut() {
            let m = match_events(p, g, *t, state_blind);
            acc.add(p, g, &m);
        }

        let diffs = error_report(p, g, threshold);
        for d in &diffs {
            *diff_counts.entry(d.kind.label().to_string()).or_insert(0) += 1;
        }
        let metrics = metrics_from_counts(
            p.len(),
            g.len(),
            &matches.iter().map(|m| m.t_iou).collect::<Vec<_>>(),
        );
        per_clip
            .entry(clip_id.clone())
            .or_default()
            .insert(*class, ClipEval { metrics, diffs });
    }

    EvalReport {
        threshold,
        state_blind,
        per_clip,
        per_class: per_class_acc
            .iter()
            .map(|(c, a)| (*c, a.finish()))
            .collect(),
        overall: overall_acc.finish(),
        sweep: sweep_accs.iter().map(|(t, a)| (*t, a.finish())).collect(),
        diff_counts,
    }
}

fn fmt_event(e: &LabeledEvent) -> String {
    format!("[{:6.1}s, {:6.1}s) {}", e.start_s, e.end_s, e.state)
}

/// Plain-text account of one clip-and-class diff, one line per problem.
pub fn render_diff_table(
    clip_id: &str,
    class: ObjectClass,
    pred: &[LabeledEvent],
    gt: &[LabeledEvent],
    diffs: &[EventDiff],
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{clip_id} / {class}:");
    if diffs.is_empty() {
        let _ = writeln!(out, "  all {} events exact", pred.len());
        return out;
    }
    for d in diffs {
        let lhs = d.pred_idx.map(|i| fmt_event(&pred[i]));
        let rhs = d.gt_idx.map(|j| fmt_event(&gt[j]));
        let detail = match d.kind {
            DiffKind::FalsePositive => format!("pred {} has no counterpart", lhs.unwrap()),
            DiffKind::FalseNegative => format!("gt   {} never predicted", rhs.unwrap()),
            DiffKind::TemporalShift {
                start_delta_s,
                end_delta_s,
            } => format!(
                "pred {} vs gt {}  (start {start_delta_s:+.1}s, end {end_delta_s:+.1}s)",
                lhs.unwrap(),
                rhs.unwrap()
            ),
            DiffKind::StateMismatch {
                pred_state,
                gt_state,
            } => format!(
                "pred {} vs gt {}  ({pred_state} should be {gt_state})",
                lhs.unwrap(),
                rhs.unwrap()
            ),
        };
        let _ = writeln!(out, "  {:<14} {detail}", d.kind.label());
    }
    out
}
