//! Scene-graph metrics: Recall@K, mean Recall@K, Set Match, triple-level F1
//! and association accuracy@k.
//!
//! Recall matching is greedy and one-to-one: predictions are visited in
//! descending score order (stable) and each consumes the first unconsumed
//! ground truth it hits.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::MaskRegion;
use crate::tensor::Matrix;

pub const DEFAULT_IOU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("sample {sample}: {msg}")]
    Invalid { sample: String, msg: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateSample(String),
    #[error("sample ids differ: missing from predictions {missing:?}, unknown in predictions {extra:?}")]
    IdMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("IoU threshold {0} outside (0, 1]")]
    IouThreshold(f64),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("shape {0:?} does not match {1:?}")]
    Shape((usize, usize), (usize, usize)),
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn unit_score() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletPrediction {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    #[serde(default = "unit_score")]
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_mask: Option<MaskRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_mask: Option<MaskRegion>,
}

impl TripletPrediction {
    pub fn new(subject: &str, predicate: &str, object: &str, score: f64) -> Self {
        Self {
            subject: subject.into(),
            predicate: predicate.into(),
            object: object.into(),
            score,
            subject_mask: None,
            object_mask: None,
        }
    }

    pub fn with_masks(mut self, subject: MaskRegion, object: MaskRegion) -> Self {
        self.subject_mask = Some(subject);
        self.object_mask = Some(object);
        self
    }

    pub fn key(&self) -> (String, String, String) {
        (self.subject.clone(), self.predicate.clone(), self.object.clone())
    }

    fn check(&self) -> std::result::Result<(), String> {
        if !self.score.is_finite() {
            return Err(format!("non-finite score in {:?}", self.key()));
        }
        if self.subject.is_empty() || self.predicate.is_empty() || self.object.is_empty() {
            return Err(format!("empty label in {:?}", self.key()));
        }
        for m in [&self.subject_mask, &self.object_mask].into_iter().flatten() {
            m.check()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    #[serde(default)]
    pub triplets: Vec<TripletPrediction>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleFile {
    pub samples: Vec<Sample>,
}

impl SampleFile {
    /// Parses and validates scores, labels and masks.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SampleFile = serde_json::from_str(text)?;
        let mut seen = BTreeSet::new();
        for s in &file.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(EvalError::DuplicateSample(s.id.clone()));
            }
            for t in &s.triplets {
                t.check().map_err(|msg| EvalError::Invalid { sample: s.id.clone(), msg })?;
            }
        }
        Ok(file)
    }
}

/// Whether a hit also requires mask overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Labels and predicate only.
    Labels,
    /// Labels, plus IoU on every mask the ground truth carries.
    #[default]
    LabelsAndMasks,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOptions {
    pub iou_threshold: f64,
    pub mode: MatchMode,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU,
            mode: MatchMode::LabelsAndMasks,
        }
    }
}

impl MatchOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(EvalError::IouThreshold(self.iou_threshold));
        }
        Ok(())
    }
}

fn ratio(inter: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Intersection over union. Masks of different kinds, or grids of
/// different size, do not overlap. Two empty masks of the same kind count as
/// identical.
pub fn mask_iou(a: &MaskRegion, b: &MaskRegion) -> f64 {
    match (a, b) {
        (
            MaskRegion::Grid2d { height: ha, width: wa, cells: ca },
            MaskRegion::Grid2d { height: hb, width: wb, cells: cb },
        ) => {
            if (ha, wa) != (hb, wb) {
                return 0.0;
            }
            let inter = ca.iter().zip(cb).filter(|(x, y)| **x && **y).count();
            let union = ca.iter().zip(cb).filter(|(x, y)| **x || **y).count();
            ratio(inter, union)
        }
        (MaskRegion::Pointset { points: pa }, MaskRegion::Pointset { points: pb }) => {
            let n = pa.len().max(pb.len());
            let at = |p: &[bool], i: usize| p.get(i).copied().unwrap_or(false);
            let inter = (0..n).filter(|&i| at(pa, i) && at(pb, i)).count();
            let union = (0..n).filter(|&i| at(pa, i) || at(pb, i)).count();
            ratio(inter, union)
        }
        (MaskRegion::Textspan { start: sa, end: ea }, MaskRegion::Textspan { start: sb, end: eb }) => {
            let inter = ea.min(eb).saturating_sub(*sa.max(sb));
            let union = (ea - sa) + (eb - sb) - inter;
            ratio(inter, union)
        }
        _ => 0.0,
    }
}

fn mask_ok(pred: &Option<MaskRegion>, gt: &Option<MaskRegion>, threshold: f64) -> bool {
    match (pred, gt) {
        (_, None) => true,
        (None, Some(_)) => false,
        (Some(p), Some(g)) => mask_iou(p, g) >= threshold,
    }
}

/// Labels and predicate equal, and every mask present on the ground truth
/// overlaps the prediction's by at least the threshold (mask mode only).
pub fn triplet_hit(pred: &TripletPrediction, gt: &TripletPrediction, opts: &MatchOptions) -> bool {
    if pred.subject != gt.subject || pred.predicate != gt.predicate || pred.object != gt.object {
        return false;
    }
    match opts.mode {
        MatchMode::Labels => true,
        MatchMode::LabelsAndMasks => {
            mask_ok(&pred.subject_mask, &gt.subject_mask, opts.iou_threshold)
                && mask_ok(&pred.object_mask, &gt.object_mask, opts.iou_threshold)
        }
    }
}

/// Indices of `preds` in descending score order; ties keep input order.
pub fn rank(preds: &[TripletPrediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order
}

/// Which ground truths are hit by the top-k predictions.
pub fn hit_flags(preds: &[TripletPrediction], gts: &[TripletPrediction], k: usize, opts: &MatchOptions) -> Vec<bool> {
    let mut hit = vec![false; gts.len()];
    for &p in rank(preds).iter().take(k) {
        if let Some(g) = (0..gts.len()).find(|&g| !hit[g] && triplet_hit(&preds[p], &gts[g], opts)) {
            hit[g] = true;
        }
    }
    hit
}

/// Fraction of ground truths hit in the top-k; `None` when there is no
/// ground truth.
pub fn recall_at_k(preds: &[TripletPrediction], gts: &[TripletPrediction], k: usize, opts: &MatchOptions) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let hits = hit_flags(preds, gts, k, opts).iter().filter(|&&h| h).count();
    Some(hits as f64 / gts.len() as f64)
}

/// A prediction sample paired with its ground truth.
#[derive(Debug, Clone, Copy)]
pub struct SamplePair<'a> {
    pub pred: &'a [TripletPrediction],
    pub gt: &'a [TripletPrediction],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub k: Option<usize>,
    /// In `[0, 1]`; `None` when undefined on the split.
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_predicate: BTreeMap<String, f64>,
}

/// Mean per-sample recall over samples with nonempty ground truth.
pub fn split_recall_at_k(pairs: &[SamplePair<'_>], k: usize, opts: &MatchOptions) -> MetricReport {
    let recalls: Vec<f64> = pairs.iter().filter_map(|p| recall_at_k(p.pred, p.gt, k, opts)).collect();
    MetricReport {
        metric: format!("R@{k}"),
        k: Some(k),
        value: (!recalls.is_empty()).then(|| recalls.iter().sum::<f64>() / recalls.len() as f64),
        per_predicate: BTreeMap::new(),
    }
}

/// Recall per predicate class pooled over the split, averaged over classes
/// with at least one ground truth.
pub fn mean_recall_at_k(pairs: &[SamplePair<'_>], k: usize, opts: &MatchOptions) -> MetricReport {
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for p in pairs {
        for (g, hit) in p.gt.iter().zip(hit_flags(p.pred, p.gt, k, opts)) {
            let e = tally.entry(g.predicate.clone()).or_default();
            e.0 += usize::from(hit);
            e.1 += 1;
        }
    }
    let per_predicate: BTreeMap<String, f64> =
        tally.into_iter().map(|(name, (h, n))| (name, h as f64 / n as f64)).collect();
    let value = (!per_predicate.is_empty()).then(|| per_predicate.values().sum::<f64>() / per_predicate.len() as f64);
    MetricReport {
        metric: format!("mR@{k}"),
        k: Some(k),
        value,
        per_predicate,
    }
}

pub type TripleSet = BTreeSet<(String, String, String)>;

pub fn triple_set(triplets: &[TripletPrediction]) -> TripleSet {
    triplets.iter().map(TripletPrediction::key).collect()
}

pub fn set_match(pred: &TripleSet, gt: &TripleSet) -> bool {
    pred == gt
}

/// F1 of the set intersection; 1.0 when both sets are empty.
pub fn triple_f1(pred: &TripleSet, gt: &TripleSet) -> f64 {
    if pred.is_empty() && gt.is_empty() {
        return 1.0;
    }
    let common = pred.intersection(gt).count() as f64;
    if common == 0.0 {
        return 0.0;
    }
    let precision = common / pred.len() as f64;
    let recall = common / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Fraction of samples whose predicted and ground-truth triple sets agree.
pub fn split_set_match(pairs: &[SamplePair<'_>]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let hits = pairs
        .iter()
        .filter(|p| set_match(&triple_set(p.pred), &triple_set(p.gt)))
        .count();
    Some(hits as f64 / pairs.len() as f64)
}

pub fn split_triple_f1(pairs: &[SamplePair<'_>]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let sum: f64 = pairs.iter().map(|p| triple_f1(&triple_set(p.pred), &triple_set(p.gt))).sum();
    Some(sum / pairs.len() as f64)
}

/// Fraction of rows with a ground-truth partner whose partner ranks among
/// the row's top-k scores (ties favour the smaller column). `None` when no
/// row has a partner.
pub fn association_accuracy_at_k(refined: &Matrix, gt: &Matrix, k: usize) -> Result<Option<f64>> {
    if k < 1 {
        return Err(EvalError::ZeroK);
    }
    if refined.shape() != gt.shape() {
        return Err(EvalError::Shape(refined.shape(), gt.shape()));
    }
    let (mut rows, mut hits) = (0usize, 0usize);
    for r in 0..refined.rows() {
        let partners: Vec<usize> = (0..gt.cols()).filter(|&c| gt.get(r, c) > 0.5).collect();
        if partners.is_empty() {
            continue;
        }
        rows += 1;
        let scores = refined.row(r);
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        if order.iter().take(k).any(|c| partners.contains(c)) {
            hits += 1;
        }
    }
    Ok((rows > 0).then(|| hits as f64 / rows as f64))
}

/// Pairs prediction samples with ground-truth samples by id, in
/// ground-truth order. Both sides must list the same ids.
pub fn pair_samples<'a>(pred: &'a SampleFile, gt: &'a SampleFile) -> Result<Vec<SamplePair<'a>>> {
    let by_id: BTreeMap<&str, &Sample> = pred.samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let gt_ids: BTreeSet<&str> = gt.samples.iter().map(|s| s.id.as_str()).collect();
    let missing: Vec<String> = gt_ids.iter().filter(|id| !by_id.contains_key(*id)).map(|s| s.to_string()).collect();
    let extra: Vec<String> = by_id.keys().filter(|id| !gt_ids.contains(*id)).map(|s| s.to_string()).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(EvalError::IdMismatch { missing, extra });
    }
    Ok(gt
        .samples
        .iter()
        .map(|g| SamplePair {
            pred: &by_id[g.id.as_str()].triplets,
            gt: &g.triplets,
        })
        .collect())
}

/// Every metric of a split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub recall: Vec<MetricReport>,
    pub mean_recall: Vec<MetricReport>,
    pub set_match: Option<f64>,
    pub triple_f1: Option<f64>,
}

pub fn evaluate(pred: &SampleFile, gt: &SampleFile, ks: &[usize], opts: &MatchOptions) -> Result<EvalReport> {
    opts.validate()?;
    if ks.contains(&0) {
        return Err(EvalError::ZeroK);
    }
    let pairs = pair_samples(pred, gt)?;
    Ok(EvalReport {
        recall: ks.iter().map(|&k| split_recall_at_k(&pairs, k, opts)).collect(),
        mean_recall: ks.iter().map(|&k| mean_recall_at_k(&pairs, k, opts)).collect(),
        set_match: split_set_match(&pairs),
        triple_f1: split_triple_f1(&pairs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngSeed;
    use proptest::prelude::*;

    fn t(s: &str, p: &str, o: &str, score: f64) -> TripletPrediction {
        TripletPrediction::new(s, p, o, score)
    }

    fn grid(cells: [bool; 4]) -> MaskRegion {
        MaskRegion::Grid2d { height: 2, width: 2, cells: cells.to_vec() }
    }

    const LABELS: MatchOptions = MatchOptions { iou_threshold: 0.5, mode: MatchMode::Labels };

    #[test]
    fn hit_cases() {
        let opts = MatchOptions::default();
        let a = t("man", "on", "horse", 0.9);
        assert!(triplet_hit(&a, &a.clone(), &opts));
        assert!(!triplet_hit(&t("man", "near", "horse", 0.9), &a, &opts));

        // 2 shared of 5 cells in the union, object masks identical
        let gt = a.clone().with_masks(grid([true, true, true, false]), grid([true; 4]));
        let pred = a.clone().with_masks(grid([true, false, false, true]), grid([true; 4]));
        let subj_iou = mask_iou(pred.subject_mask.as_ref().unwrap(), gt.subject_mask.as_ref().unwrap());
        assert_eq!(subj_iou, 1.0 / 4.0);
        assert!(!triplet_hit(&pred, &gt, &opts));
        assert!(triplet_hit(&pred, &gt, &LABELS));

        // IoU 2/5 = 0.4 with 3x2 grids
        let g = MaskRegion::Grid2d { height: 3, width: 2, cells: vec![true, true, true, true, false, false] };
        let p = MaskRegion::Grid2d { height: 3, width: 2, cells: vec![true, false, false, true, true, false] };
        assert!((mask_iou(&p, &g) - 0.4).abs() < 1e-15);
        let gt = a.clone().with_masks(g.clone(), g.clone());
        let pred = a.clone().with_masks(p, g);
        assert!(!triplet_hit(&pred, &gt, &opts));

        // gt masks but no predicted masks
        assert!(!triplet_hit(&a, &gt, &opts));
        // predicted masks but none on the gt
        assert!(triplet_hit(&pred, &a, &opts));
    }

    #[test]
    fn iou_kinds() {
        let span = |s, e| MaskRegion::Textspan { start: s, end: e };
        assert_eq!(mask_iou(&span(0, 10), &span(5, 15)), 5.0 / 15.0);
        assert_eq!(mask_iou(&span(0, 4), &span(4, 8)), 0.0);
        let pts = |v: &[bool]| MaskRegion::Pointset { points: v.to_vec() };
        assert_eq!(mask_iou(&pts(&[true, true]), &pts(&[true, false, true])), 1.0 / 3.0);
        assert_eq!(mask_iou(&pts(&[true]), &span(0, 1)), 0.0);
        assert_eq!(mask_iou(&grid([true; 4]), &MaskRegion::Grid2d { height: 1, width: 4, cells: vec![true; 4] }), 0.0);
    }

    #[test]
    fn recall_cases() {
        let opts = MatchOptions::default();
        let gts = vec![t("a", "on", "b", 1.0), t("c", "on", "d", 1.0), t("e", "has", "f", 1.0), t("g", "has", "h", 1.0)];
        assert_eq!(recall_at_k(&gts, &gts, 50, &opts), Some(1.0));
        assert_eq!(recall_at_k(&gts, &gts, 0, &opts), Some(0.0));
        assert_eq!(recall_at_k(&gts, &[], 50, &opts), None);

        let preds = vec![
            t("a", "on", "b", 0.9),
            t("x", "on", "y", 0.8),
            t("e", "has", "f", 0.7),
            t("a", "on", "b", 0.6),
        ];
        assert_eq!(recall_at_k(&preds, &gts, 50, &opts), Some(0.5));
        assert_eq!(recall_at_k(&preds, &gts, 1, &opts), Some(0.25));
        // duplicate prediction does not consume a second copy
        let dup_gt = vec![t("a", "on", "b", 1.0), t("a", "on", "b", 1.0)];
        assert_eq!(recall_at_k(&preds, &dup_gt, 4, &opts), Some(1.0));
        assert_eq!(recall_at_k(&preds, &dup_gt, 3, &opts), Some(0.5));
    }

    #[test]
    fn ranking_is_stable() {
        let preds = vec![t("a", "p", "b", 0.5), t("c", "p", "d", 0.9), t("e", "p", "f", 0.5)];
        assert_eq!(rank(&preds), vec![1, 0, 2]);
    }

    #[test]
    fn mean_recall_cases() {
        let opts = MatchOptions::default();
        let gt = vec![t("a", "on", "b", 1.0), t("c", "has", "d", 1.0)];
        let pred = vec![t("a", "on", "b", 1.0)];
        let pairs = [SamplePair { pred: &pred, gt: &gt }];
        let r = mean_recall_at_k(&pairs, 20, &opts);
        assert_eq!(r.value, Some(0.5));
        assert_eq!(r.per_predicate["on"], 1.0);
        assert_eq!(r.per_predicate["has"], 0.0);

        // 3 classes over 2 samples, pooled per class
        let g1 = vec![t("a", "on", "b", 1.0), t("a", "near", "c", 1.0), t("b", "has", "c", 1.0)];
        let p1 = vec![t("a", "on", "b", 0.9), t("b", "has", "c", 0.8)];
        let g2 = vec![t("x", "on", "y", 1.0), t("x", "near", "z", 1.0), t("y", "near", "z", 1.0)];
        let p2 = vec![t("x", "near", "z", 0.7)];
        let pairs = [SamplePair { pred: &p1, gt: &g1 }, SamplePair { pred: &p2, gt: &g2 }];
        let r = mean_recall_at_k(&pairs, 20, &opts);
        // on 1/2, near 1/3, has 1/1
        let want = (0.5 + 1.0 / 3.0 + 1.0) / 3.0;
        assert!((r.value.unwrap() - want).abs() < 1e-15);
        let avg = r.per_predicate.values().sum::<f64>() / r.per_predicate.len() as f64;
        assert!((avg - r.value.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn set_metrics() {
        let s = |v: &[(&str, &str, &str)]| -> TripleSet {
            v.iter().map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string())).collect()
        };
        let g = s(&[("a", "on", "b"), ("b", "has", "c")]);
        assert!(set_match(&g, &g));
        assert!(!set_match(&s(&[("a", "on", "b"), ("b", "has", "c"), ("c", "x", "d")]), &g));
        assert_eq!(triple_f1(&g, &g), 1.0);
        assert_eq!(triple_f1(&s(&[("q", "r", "s")]), &g), 0.0);
        assert_eq!(triple_f1(&TripleSet::new(), &TripleSet::new()), 1.0);
        let p4 = s(&[("a", "on", "b"), ("b", "has", "c"), ("1", "2", "3"), ("4", "5", "6")]);
        let g4 = s(&[("a", "on", "b"), ("b", "has", "c"), ("7", "8", "9"), ("0", "0", "0")]);
        assert_eq!(triple_f1(&p4, &g4), 0.5);

        let same = vec![t("a", "on", "b", 1.0)];
        let other = vec![t("a", "on", "c", 1.0)];
        let pairs = [
            SamplePair { pred: &same, gt: &same },
            SamplePair { pred: &same, gt: &same },
            SamplePair { pred: &other, gt: &same },
            SamplePair { pred: &[], gt: &[] },
        ];
        assert_eq!(split_set_match(&pairs), Some(0.75));
    }

    #[test]
    fn association_accuracy_cases() {
        let refined = Matrix::from_rows(&[[0.9, 0.1], [0.3, 0.2]]).unwrap();
        let gt = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(association_accuracy_at_k(&refined, &gt, 1).unwrap(), Some(0.5));
        assert_eq!(association_accuracy_at_k(&refined, &gt, 2).unwrap(), Some(1.0));
        assert_eq!(association_accuracy_at_k(&refined, &Matrix::zeros(2, 2), 1).unwrap(), None);
        assert!(matches!(association_accuracy_at_k(&refined, &gt, 0), Err(EvalError::ZeroK)));
        // tie goes to the smaller column
        let tie = Matrix::filled(1, 3, 0.5);
        let gt = Matrix::from_rows(&[[0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(association_accuracy_at_k(&tie, &gt, 1).unwrap(), Some(0.0));
        assert_eq!(association_accuracy_at_k(&tie, &gt, 2).unwrap(), Some(1.0));
    }

    #[test]
    fn association_accuracy_random_oracle() {
        let s = RngSeed(3);
        for case in 0..20 {
            let refined = s.uniform_matrix(&format!("r{case}"), 4, 4, 1);
            let mut st = s.stream(&format!("g{case}"));
            let gt = Matrix::from_fn(4, 4, |_, _| f64::from(u8::from(st.below(3) == 0)));
            let mut rows = 0;
            let mut hits = 0;
            for r in 0..4 {
                if (0..4).all(|c| gt.get(r, c) == 0.0) {
                    continue;
                }
                rows += 1;
                let mut cols: Vec<(f64, usize)> = (0..4).map(|c| (refined.get(r, c), c)).collect();
                cols.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                if cols[..2].iter().any(|&(_, c)| gt.get(r, c) == 1.0) {
                    hits += 1;
                }
            }
            let want = (rows > 0).then(|| hits as f64 / rows as f64);
            assert_eq!(association_accuracy_at_k(&refined, &gt, 2).unwrap(), want);
        }
    }

    #[test]
    fn file_parsing_and_pairing() {
        let pred = SampleFile::from_json(r#"{"samples":[{"id":"1","triplets":[{"subject":"a","predicate":"on","object":"b"}]}]}"#).unwrap();
        assert_eq!(pred.samples[0].triplets[0].score, 1.0);
        let gt = SampleFile::from_json(r#"{"samples":[{"id":"2","triplets":[]}]}"#).unwrap();
        assert!(matches!(pair_samples(&pred, &gt), Err(EvalError::IdMismatch { .. })));
        assert!(SampleFile::from_json(r#"{"samples":[{"id":"1"},{"id":"1"}]}"#).is_err());
        assert!(SampleFile::from_json(r#"{"samples":[{"id":"1","triplets":[{"subject":"","predicate":"on","object":"b"}]}]}"#).is_err());

        let report = evaluate(&pred, &pred, &[20, 50], &MatchOptions::default()).unwrap();
        assert_eq!(report.recall[1].value, Some(1.0));
        assert_eq!(report.set_match, Some(1.0));
    }

    fn arb_triplets(max: usize) -> impl Strategy<Value = Vec<TripletPrediction>> {
        prop::collection::vec((0u8..3, 0u8..3, 0u8..3, 0.0f64..1.0), 0..max).prop_map(|v| {
            v.into_iter()
                .map(|(s, p, o, score)| t(&format!("s{s}"), &format!("p{p}"), &format!("o{o}"), score))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn recall_monotone_and_rank_only(preds in arb_triplets(12), gts in arb_triplets(8), k in 0usize..12) {
            let r1 = recall_at_k(&preds, &gts, k, &LABELS);
            let r2 = recall_at_k(&preds, &gts, k + 1, &LABELS);
            if let (Some(a), Some(b)) = (r1, r2) {
                prop_assert!(a <= b);
                prop_assert!((0.0..=1.0).contains(&a));
            }
            let squashed: Vec<_> = preds.iter().map(|p| TripletPrediction { score: p.score.powi(3) * 7.0 - 2.0, ..p.clone() }).collect();
            prop_assert_eq!(recall_at_k(&squashed, &gts, k, &LABELS), r1);
        }

        #[test]
        fn mean_recall_single_class_is_recall(preds in arb_triplets(12), gts in arb_triplets(8), k in 1usize..12) {
            let one = |v: &[TripletPrediction]| -> Vec<TripletPrediction> {
                v.iter().map(|x| TripletPrediction { predicate: "p".into(), ..x.clone() }).collect()
            };
            let (preds, gts) = (one(&preds), one(&gts));
            let pairs = [SamplePair { pred: &preds, gt: &gts }];
            prop_assert_eq!(mean_recall_at_k(&pairs, k, &LABELS).value, recall_at_k(&preds, &gts, k, &LABELS));
        }

        #[test]
        fn set_match_implies_full_f1(preds in arb_triplets(6), gts in arb_triplets(6)) {
            let (p, g) = (triple_set(&preds), triple_set(&gts));
            let f = triple_f1(&p, &g);
            prop_assert!((0.0..=1.0).contains(&f));
            if set_match(&p, &g) {
                prop_assert_eq!(f, 1.0);
            }
        }
    }
}
