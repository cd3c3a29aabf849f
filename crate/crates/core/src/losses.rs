//! Training objectives: Hungarian assignment of queries to ground truth, the
//! object, association, relation and contrastive losses, and their weighted
//! total.
//!
//! Every log term clamps probabilities to `[PROB_EPS, 1 - PROB_EPS]`. The
//! sigmoid cross-entropy works on logits directly and needs no clamp.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::solve_min;
use crate::model::{DetectionOutput, PairConfidenceMatrix};
use crate::tensor::{dot, sigmoid, Matrix};

pub const PROB_EPS: f64 = 1e-7;
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("{op}: shape {left:?} does not match {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{0}: NaN input")]
    NaN(&'static str),
    #[error("{0}: probabilities must lie in [0, 1]")]
    Probability(&'static str),
    #[error("contrastive loss needs at least one positive")]
    NoPositives,
    #[error("inconsistent assignment: {0}")]
    Assignment(String),
}

pub type Result<T> = std::result::Result<T, LossError>;

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(LossError::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_cls: f64,
    /// Classification weight for queries matched to "no object".
    pub lambda_no_object: f64,
    pub lambda_ce: f64,
    pub lambda_dice: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    /// Positive-entry weight for the weighted BCE terms; `None` derives it
    /// from the target (see [`default_pos_weight`]).
    pub pos_weight: Option<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 2.0,
            lambda_no_object: 0.1,
            lambda_ce: 5.0,
            lambda_dice: 5.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.8,
            eta: 0.6,
            pos_weight: None,
        }
    }
}

impl LossWeights {
    pub fn pos_weight_for(&self, target: &Matrix) -> f64 {
        self.pos_weight.unwrap_or_else(|| default_pos_weight(target))
    }
}

/// Query-to-ground-truth assignment.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchAssignment {
    /// `(query, ground truth)` pairs sorted by query.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_queries: Vec<usize>,
}

impl MatchAssignment {
    pub fn total_cost(&self, cost: &Matrix) -> f64 {
        self.pairs.iter().map(|&(q, g)| cost.get(q, g)).sum()
    }

    fn check(&self, queries: usize, gts: usize) -> Result<()> {
        let mut seen_q = vec![false; queries];
        let mut seen_g = vec![false; gts];
        for &(q, g) in &self.pairs {
            if q >= queries || g >= gts {
                return Err(LossError::Assignment(format!("pair ({q}, {g}) out of range")));
            }
            if std::mem::replace(&mut seen_q[q], true) || std::mem::replace(&mut seen_g[g], true) {
                return Err(LossError::Assignment(format!("pair ({q}, {g}) reuses an index")));
            }
        }
        Ok(())
    }
}

/// Exact minimum-cost assignment of queries (rows) to ground truth (columns).
pub fn hungarian_match(cost: &Matrix) -> Result<MatchAssignment> {
    if cost.data().iter().any(|v| v.is_nan()) {
        return Err(LossError::NaN("hungarian_match"));
    }
    if !cost.is_finite() {
        return Err(LossError::Assignment("costs must be finite".into()));
    }
    let pairs = solve_min(cost);
    let mut matched = vec![false; cost.rows()];
    for &(q, _) in &pairs {
        matched[q] = true;
    }
    Ok(MatchAssignment {
        unmatched_queries: (0..cost.rows()).filter(|&q| !matched[q]).collect(),
        pairs,
    })
}

/// Mean binary cross-entropy between probabilities and binary targets.
fn bce_rows(pred: &[f64], target: &[f64]) -> f64 {
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = clamp_prob(p);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    mean(sum, pred.len())
}

fn dice_rows(pred: &[f64], gt: &[f64]) -> f64 {
    let inter: f64 = dot(pred, gt);
    let total: f64 = pred.iter().sum::<f64>() + gt.iter().sum::<f64>();
    1.0 - (2.0 * inter + DICE_SMOOTH) / (total + DICE_SMOOTH)
}

fn check_detection(det: &DetectionOutput, gt_labels: &[usize], gt_masks: &Matrix) -> Result<()> {
    let n = det.class_logits.rows();
    if det.mask_logits.rows() != n {
        return Err(LossError::Shape {
            op: "detection",
            left: det.class_logits.shape(),
            right: det.mask_logits.shape(),
        });
    }
    if gt_masks.rows() != gt_labels.len() || (gt_masks.rows() > 0 && gt_masks.cols() != det.mask_logits.cols()) {
        return Err(LossError::Shape {
            op: "ground truth masks",
            left: det.mask_logits.shape(),
            right: gt_masks.shape(),
        });
    }
    if let Some(&bad) = gt_labels.iter().find(|&&l| l >= det.class_logits.cols()) {
        return Err(LossError::Assignment(format!("ground truth class {bad} out of range")));
    }
    Ok(())
}

/// Matching cost between every query and every ground-truth object:
/// `λ_cls·(−ln p_class) + λ_ce·BCE(mask) + λ_dice·dice`.
pub fn match_cost(
    det: &DetectionOutput,
    gt_labels: &[usize],
    gt_masks: &Matrix,
    weights: &LossWeights,
) -> Result<Matrix> {
    check_detection(det, gt_labels, gt_masks)?;
    let probs = det.mask_logits.map(sigmoid);
    Ok(Matrix::from_fn(det.class_logits.rows(), gt_labels.len(), |i, j| {
        let p_cls = clamp_prob(sigmoid(det.class_logits.get(i, gt_labels[j])));
        weights.lambda_cls * -p_cls.ln()
            + weights.lambda_ce * bce_rows(probs.row(i), gt_masks.row(j))
            + weights.lambda_dice * dice_rows(probs.row(i), gt_masks.row(j))
    }))
}

/// Mean sigmoid cross-entropy over all entries.
pub fn sigmoid_ce(logits: &Matrix, targets: &Matrix) -> Result<f64> {
    same_shape("sigmoid_ce", logits, targets)?;
    if logits.data().iter().chain(targets.data()).any(|v| v.is_nan()) {
        return Err(LossError::NaN("sigmoid_ce"));
    }
    let sum: f64 = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&x, &t)| softplus(x) - x * t)
        .sum();
    Ok(mean(sum, logits.data().len()))
}

/// Derivative of each entry's sigmoid cross-entropy term: `σ(x) − t`.
pub fn sigmoid_ce_grad(logits: &Matrix, targets: &Matrix) -> Result<Matrix> {
    same_shape("sigmoid_ce_grad", logits, targets)?;
    Ok(logits.zip_with("sigmoid_ce_grad", targets, |x, t| sigmoid(x) - t).expect("shapes checked"))
}

/// `1 − (2 Σ p g + ε) / (Σ p + Σ g + ε)` with `ε = 1`.
pub fn dice_loss(pred: &Matrix, gt: &Matrix) -> Result<f64> {
    same_shape("dice_loss", pred, gt)?;
    if pred.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(LossError::Probability("dice_loss"));
    }
    Ok(dice_rows(pred.data(), gt.data()))
}

/// Mean of `−[w t ln p + (1 − t) ln(1 − p)]`.
pub fn weighted_bce(pred: &Matrix, target: &Matrix, pos_weight: f64) -> Result<f64> {
    same_shape("weighted_bce", pred, target)?;
    if pred.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(LossError::Probability("weighted_bce"));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = clamp_prob(p);
            -(pos_weight * t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(mean(sum, pred.data().len()))
}

/// Entries per positive, clamped to `[1, 100]`; 1 when there are no
/// positives.
pub fn default_pos_weight(target: &Matrix) -> f64 {
    let positives = target.data().iter().filter(|&&t| t > 0.5).count();
    if positives == 0 {
        return 1.0;
    }
    (target.data().len() as f64 / positives as f64).clamp(1.0, 100.0)
}

/// Association loss: weighted BCE of the refined association matrix against
/// the binary ground-truth association matrix.
pub fn association_loss(refined: &Matrix, gt: &Matrix, weights: &LossWeights) -> Result<f64> {
    weighted_bce(refined, gt, weights.pos_weight_for(gt))
}

/// Weighted BCE on pair confidences mapped from `[-1, 1]` to `[0, 1]`.
pub fn pair_loss(c: &PairConfidenceMatrix, gt_pairs: &Matrix, pos_weight: f64) -> Result<f64> {
    let mapped = c.values.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0));
    weighted_bce(&mapped, gt_pairs, pos_weight)
}

/// `−Σ_{y+} ln( exp(x·y+) / (exp(x·y+) + Σ_{y−} exp(x·y−)) )` on raw dot
/// products.
pub fn info_nce<P: AsRef<[f64]>, N: AsRef<[f64]>>(anchor: &[f64], positives: &[P], negatives: &[N]) -> Result<f64> {
    if positives.is_empty() {
        return Err(LossError::NoPositives);
    }
    let neg: Vec<f64> = negatives.iter().map(|n| dot(anchor, n.as_ref())).collect();
    let mut loss = 0.0;
    for p in positives {
        let pos = dot(anchor, p.as_ref());
        let max = neg.iter().copied().fold(pos, f64::max);
        let denom: f64 = (pos - max).exp() + neg.iter().map(|&s| (s - max).exp()).sum::<f64>();
        let log_ratio = (pos - max) - denom.ln();
        loss -= log_ratio;
    }
    if loss.is_nan() {
        return Err(LossError::NaN("info_nce"));
    }
    Ok(loss)
}

/// Text-centric contrastive term: every text query matched to a query of the
/// other modality is an anchor; its matches are positives and up to
/// `max_negatives` unmatched rows (lowest indices first) are negatives.
pub fn text_contrastive_loss(
    text: &Matrix,
    other: &Matrix,
    matches: &[(usize, usize)],
    max_negatives: Option<usize>,
) -> Result<f64> {
    if text.cols() != other.cols() {
        return Err(LossError::Shape {
            op: "text_contrastive_loss",
            left: text.shape(),
            right: other.shape(),
        });
    }
    let mut total = 0.0;
    for t in 0..text.rows() {
        let pos: Vec<usize> = matches.iter().filter(|m| m.0 == t).map(|m| m.1).collect();
        if pos.is_empty() {
            continue;
        }
        if let Some(&bad) = pos.iter().find(|&&j| j >= other.rows()) {
            return Err(LossError::Assignment(format!("match ({t}, {bad}) out of range")));
        }
        let negs: Vec<&[f64]> = (0..other.rows())
            .filter(|j| !pos.contains(j))
            .take(max_negatives.unwrap_or(usize::MAX))
            .map(|j| other.row(j))
            .collect();
        let positives: Vec<&[f64]> = pos.iter().map(|&j| other.row(j)).collect();
        total += info_nce(text.row(t), &positives, &negs)?;
    }
    Ok(total)
}

/// Object loss over one modality. Classification covers every query: matched
/// queries target their ground-truth class with weight `λ_cls`, unmatched
/// queries target the final "no object" class with `λ_no_object`. Mask BCE
/// and dice average over matched pairs.
pub fn object_loss(
    det: &DetectionOutput,
    gt_labels: &[usize],
    gt_masks: &Matrix,
    assignment: &MatchAssignment,
    weights: &LossWeights,
) -> Result<f64> {
    check_detection(det, gt_labels, gt_masks)?;
    let (n, classes) = det.class_logits.shape();
    assignment.check(n, gt_labels.len())?;
    if classes == 0 {
        return Err(LossError::Assignment("no classes".into()));
    }
    let no_object = classes - 1;

    let mut target_class = vec![no_object; n];
    let mut row_weight = vec![weights.lambda_no_object; n];
    for &(q, g) in &assignment.pairs {
        target_class[q] = gt_labels[g];
        row_weight[q] = weights.lambda_cls;
    }
    let mut cls = 0.0;
    for q in 0..n {
        let logits = Matrix::row_vector(det.class_logits.row(q));
        let target = Matrix::from_fn(1, classes, |_, c| f64::from(u8::from(c == target_class[q])));
        cls += row_weight[q] * sigmoid_ce(&logits, &target)?;
    }
    let cls = mean(cls, n);

    let probs = det.mask_logits.map(sigmoid);
    let (mut ce, mut dice) = (0.0, 0.0);
    for &(q, g) in &assignment.pairs {
        ce += bce_rows(probs.row(q), gt_masks.row(g));
        dice += dice_rows(probs.row(q), gt_masks.row(g));
    }
    let m = assignment.pairs.len();
    Ok(cls + weights.lambda_ce * mean(ce, m) + weights.lambda_dice * mean(dice, m))
}

/// Predicate sigmoid cross-entropy over the matched pairs plus the pair
/// confidence loss.
pub fn relation_loss(
    rel_logits: &Matrix,
    gt_predicates: &Matrix,
    c: &PairConfidenceMatrix,
    gt_pairs: &Matrix,
    pos_weight: f64,
) -> Result<f64> {
    Ok(sigmoid_ce(rel_logits, gt_predicates)? + pair_loss(c, gt_pairs, pos_weight)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_obj: f64,
    pub l_ass: f64,
    pub l_rel: f64,
    pub l_cons: f64,
    pub total: f64,
}

/// `α L_obj + β L_ass + γ L_rel + η L_cons`.
pub fn total_loss(l_obj: f64, l_ass: f64, l_rel: f64, l_cons: f64, weights: &LossWeights) -> Result<LossReport> {
    if [l_obj, l_ass, l_rel, l_cons].iter().any(|v| v.is_nan()) {
        return Err(LossError::NaN("total_loss"));
    }
    Ok(LossReport {
        l_obj,
        l_ass,
        l_rel,
        l_cons,
        total: weights.alpha * l_obj + weights.beta * l_ass + weights.gamma * l_rel + weights.eta * l_cons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngSeed;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn hungarian_examples() {
        let cost = Matrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        let a = hungarian_match(&cost).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        assert_eq!(a.total_cost(&cost), 0.0);

        let a = hungarian_match(&m(&[&[3.5]])).unwrap();
        assert_eq!(a.pairs, vec![(0, 0)]);

        let mut s = RngSeed(17).stream("costs");
        let cost = Matrix::from_fn(5, 5, |_, _| s.below(20) as f64);
        let best = permutations(5)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(hungarian_match(&cost).unwrap().total_cost(&cost), best);
        assert_eq!(permutations(5).len(), 120);
    }

    #[test]
    fn hungarian_rectangular_and_nan() {
        let cost = m(&[&[1.0, 9.0], &[2.0, 0.5], &[0.1, 4.0]]);
        let a = hungarian_match(&cost).unwrap();
        assert_eq!(a.pairs, vec![(1, 1), (2, 0)]);
        assert_eq!(a.unmatched_queries, vec![0]);
        assert!(matches!(hungarian_match(&m(&[&[f64::NAN]])), Err(LossError::NaN(_))));
        let empty = hungarian_match(&Matrix::zeros(3, 0)).unwrap();
        assert_eq!(empty.unmatched_queries, vec![0, 1, 2]);
    }

    #[test]
    fn sigmoid_ce_examples() {
        assert!((sigmoid_ce(&m(&[&[0.0]]), &m(&[&[1.0]])).unwrap() - LN2).abs() < 1e-15);
        assert!((sigmoid_ce(&m(&[&[0.0]]), &m(&[&[0.0]])).unwrap() - LN2).abs() < 1e-15);
        // softplus(-1) = ln(1 + e^-1)
        let want = (1.0 + (-1.0f64).exp()).ln();
        let got = sigmoid_ce(&m(&[&[1.0, -1.0]]), &m(&[&[1.0, 0.0]])).unwrap();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.3132617).abs() < 1e-7);
        assert!(sigmoid_ce(&m(&[&[0.0]]), &m(&[&[0.0, 1.0]])).is_err());
    }

    #[test]
    fn dice_examples() {
        let g = Matrix::from_fn(8, 8, |r, c| f64::from(u8::from((r + c) % 3 == 0)));
        assert!(dice_loss(&g, &g).unwrap() < 1e-3);
        let a = Matrix::from_fn(16, 16, |r, _| f64::from(u8::from(r < 8)));
        let b = a.map(|v| 1.0 - v);
        assert!((dice_loss(&a, &b).unwrap() - 1.0).abs() < 1e-2);
        // pred [[0.5, 1], [0, 0.25]], gt [[1, 1], [0, 0]]:
        // 1 - (2 * 1.5 + 1) / (1.75 + 2 + 1) = 1 - 4 / 4.75
        let got = dice_loss(&m(&[&[0.5, 1.0], &[0.0, 0.25]]), &m(&[&[1.0, 1.0], &[0.0, 0.0]])).unwrap();
        assert!((got - (1.0 - 4.0 / 4.75)).abs() < 1e-15);
        assert!(dice_loss(&m(&[&[1.5]]), &m(&[&[1.0]])).is_err());
    }

    #[test]
    fn weighted_bce_examples() {
        let t = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(weighted_bce(&t, &t, 3.0).unwrap() < 1e-5);
        let p = m(&[&[0.3, 0.8], &[0.6, 0.1]]);
        let plain: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&p, &t)| -(t * f64::ln(p) + (1.0 - t) * f64::ln(1.0 - p)))
            .sum::<f64>()
            / 4.0;
        assert!((weighted_bce(&p, &t, 1.0).unwrap() - plain).abs() < 1e-15);
        let half = Matrix::filled(2, 2, 0.5);
        let one_pos = m(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let got = weighted_bce(&half, &one_pos, 4.0).unwrap();
        assert!((got - 7.0 * LN2 / 4.0).abs() < 1e-15);
        assert!((got - 1.2130076).abs() < 1e-7);
        assert!(matches!(weighted_bce(&m(&[&[1.2]]), &m(&[&[1.0]]), 1.0), Err(LossError::Probability(_))));
        assert_eq!(default_pos_weight(&one_pos), 4.0);
        assert_eq!(default_pos_weight(&Matrix::zeros(2, 2)), 1.0);
        assert_eq!(default_pos_weight(&Matrix::from_fn(1, 500, |_, c| f64::from(u8::from(c == 0)))), 100.0);
    }

    #[test]
    fn pair_loss_examples() {
        let gt = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let perfect = PairConfidenceMatrix { values: gt.map(|t| 2.0 * t - 1.0) };
        let best = pair_loss(&perfect, &gt, 2.0).unwrap();
        for bits in 0..16u32 {
            let c = Matrix::from_fn(2, 2, |r, col| if bits >> (r * 2 + col) & 1 == 1 { 1.0 } else { -1.0 });
            assert!(pair_loss(&PairConfidenceMatrix { values: c }, &gt, 2.0).unwrap() >= best);
        }
        let all_neg = PairConfidenceMatrix { values: Matrix::filled(2, 2, -1.0) };
        assert!(pair_loss(&all_neg, &Matrix::zeros(2, 2), 1.0).unwrap() < 1e-6);

        let c = PairConfidenceMatrix { values: m(&[&[0.2, -0.6], &[0.0, 0.9]]) };
        let mapped = [0.6, 0.2, 0.5, 0.95];
        let want = -(2.0 * f64::ln(mapped[0]) + f64::ln(1.0 - mapped[1]) + f64::ln(1.0 - mapped[2]) + 2.0 * f64::ln(mapped[3])) / 4.0;
        assert!((pair_loss(&c, &gt, 2.0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn info_nce_examples() {
        let x = [1.0, 0.0];
        let none: [&[f64]; 0] = [];
        assert_eq!(info_nce(&x, &[[3.0, 1.0]], &none).unwrap(), 0.0);
        let negs = [[0.0, 5.0], [0.0, -2.0], [0.0, 1.0]];
        // all dot products zero
        let got = info_nce(&x, &[[0.0, 4.0]], &negs).unwrap();
        assert!((got - 4.0f64.ln()).abs() < 1e-12);
        let got = info_nce(&x, &[[2.0, 0.0]], &[[0.0, 1.0], [0.0, 3.0]]).unwrap();
        assert!((got - (1.0 + 2.0 * (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!((got - 0.2395448).abs() < 1e-7);
        let empty: [&[f64]; 0] = [];
        assert!(matches!(info_nce(&x, &empty, &negs), Err(LossError::NoPositives)));
    }

    #[test]
    fn text_contrastive_sums_anchors() {
        let text = m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let other = m(&[&[2.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let got = text_contrastive_loss(&text, &other, &[(0, 0), (1, 1)], None).unwrap();
        let want = info_nce(text.row(0), &[other.row(0)], &[other.row(1), other.row(2)]).unwrap()
            + info_nce(text.row(1), &[other.row(1)], &[other.row(0), other.row(2)]).unwrap();
        assert!((got - want).abs() < 1e-15);
        let capped = text_contrastive_loss(&text, &other, &[(0, 0)], Some(1)).unwrap();
        let want = info_nce(text.row(0), &[other.row(0)], &[other.row(1)]).unwrap();
        assert!((capped - want).abs() < 1e-15);
    }

    fn det(class_logits: Matrix, mask_logits: Matrix) -> DetectionOutput {
        DetectionOutput { class_logits, mask_logits }
    }

    #[test]
    fn match_cost_terms() {
        let w = LossWeights::default();
        let big = 40.0;
        let gt = m(&[&[1.0, 0.0, 1.0, 1.0]]);
        let perfect = det(m(&[&[big, -big]]), gt.map(|t| if t > 0.5 { big } else { -big }));
        let c = match_cost(&perfect, &[0], &gt, &w).unwrap();
        // dice keeps an epsilon-size residue: 1 - 7/7 = 0 exactly here
        assert!(c.get(0, 0) < 1e-5, "{c:?}");

        let disjoint = det(m(&[&[big, -big]]), gt.map(|t| if t > 0.5 { -big } else { big }));
        let c = match_cost(&disjoint, &[0], &gt, &w).unwrap();
        let dice_term = w.lambda_dice * (1.0 - 1.0 / (1.0 + 3.0 + 1.0));
        assert!(c.get(0, 0) >= dice_term);

        // 2 queries x 2 gts, term by term
        let d = det(m(&[&[0.5, -1.0, 0.0], &[2.0, 0.3, -0.4]]), m(&[&[0.2, -0.7], &[1.5, 0.0]]));
        let gts = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let labels = [1usize, 0];
        let c = match_cost(&d, &labels, &gts, &w).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let s = |x: f64| 1.0 / (1.0 + (-x).exp());
                let pc = s(d.class_logits.get(i, labels[j]));
                let p: Vec<f64> = (0..2).map(|k| s(d.mask_logits.get(i, k))).collect();
                let g = gts.row(j);
                let bce = -(0..2).map(|k| g[k] * p[k].ln() + (1.0 - g[k]) * (1.0 - p[k]).ln()).sum::<f64>() / 2.0;
                let dice = 1.0 - (2.0 * (p[0] * g[0] + p[1] * g[1]) + 1.0) / (p[0] + p[1] + g[0] + g[1] + 1.0);
                let want = 2.0 * -pc.ln() + 5.0 * bce + 5.0 * dice;
                assert!((c.get(i, j) - want).abs() < 1e-9);
            }
        }
        let none = match_cost(&d, &[], &Matrix::zeros(0, 2), &w).unwrap();
        assert_eq!(none.shape(), (2, 0));
    }

    #[test]
    fn object_loss_cases() {
        let w = LossWeights::default();
        // empty ground truth: only the no-object classification term
        let d = det(m(&[&[0.3, -0.2], &[1.0, 0.4]]), m(&[&[0.1, 0.2], &[0.3, 0.4]]));
        let a = hungarian_match(&Matrix::zeros(2, 0)).unwrap();
        let got = object_loss(&d, &[], &Matrix::zeros(0, 2), &a, &w).unwrap();
        let ce = |x: f64, t: f64| (1.0 + (-x).exp()).ln() + (1.0 - t) * x;
        let want = (0.1 * (ce(0.3, 0.0) + ce(-0.2, 1.0)) / 2.0 + 0.1 * (ce(1.0, 0.0) + ce(0.4, 1.0)) / 2.0) / 2.0;
        assert!((got - want).abs() < 1e-12);

        // 2 queries, 1 gt matched to query 1
        let gt_masks = m(&[&[1.0, 0.0]]);
        let a = MatchAssignment { pairs: vec![(1, 0)], unmatched_queries: vec![0] };
        let got = object_loss(&d, &[0], &gt_masks, &a, &w).unwrap();
        let cls = (0.1 * (ce(0.3, 0.0) + ce(-0.2, 1.0)) / 2.0 + 2.0 * (ce(1.0, 1.0) + ce(0.4, 0.0)) / 2.0) / 2.0;
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        let (p0, p1) = (s(0.3), s(0.4));
        let bce = -(p0.ln() + (1.0 - p1).ln()) / 2.0;
        let dice = 1.0 - (2.0 * p0 + 1.0) / (p0 + p1 + 1.0 + 1.0);
        assert!((got - (cls + 5.0 * bce + 5.0 * dice)).abs() < 1e-9);

        let bad = MatchAssignment { pairs: vec![(0, 0), (1, 0)], unmatched_queries: vec![] };
        assert!(matches!(object_loss(&d, &[0], &gt_masks, &bad, &w), Err(LossError::Assignment(_))));
    }

    #[test]
    fn object_loss_perfect_prediction_limit() {
        let w = LossWeights::default();
        let big = 30.0;
        let d = det(m(&[&[big, -big]]), m(&[&[big, -big, big]]));
        let a = MatchAssignment { pairs: vec![(0, 0)], unmatched_queries: vec![] };
        let got = object_loss(&d, &[0], &m(&[&[1.0, 0.0, 1.0]]), &a, &w).unwrap();
        assert!(got < 1e-5, "{got}");
    }

    #[test]
    fn relation_loss_cases() {
        let empty = relation_loss(
            &Matrix::zeros(0, 3),
            &Matrix::zeros(0, 3),
            &PairConfidenceMatrix { values: Matrix::filled(2, 2, -1.0) },
            &Matrix::zeros(2, 2),
            1.0,
        )
        .unwrap();
        assert!(empty < 1e-6);

        let logits = m(&[&[0.5, -1.0, 2.0]]);
        let targets = m(&[&[0.0, 0.0, 1.0]]);
        let c = PairConfidenceMatrix { values: m(&[&[0.4]]) };
        let got = relation_loss(&logits, &targets, &c, &m(&[&[1.0]]), 3.0).unwrap();
        let ce = |x: f64, t: f64| (1.0 + (-x).exp()).ln() + (1.0 - t) * x;
        let want = (ce(0.5, 0.0) + ce(-1.0, 0.0) + ce(2.0, 1.0)) / 3.0 - 3.0 * 0.7f64.ln();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn total_loss_cases() {
        let w = LossWeights::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, &w).unwrap().total, 0.0);
        assert!((total_loss(1.0, 1.0, 1.0, 1.0, &w).unwrap().total - 3.4).abs() < 1e-12);
        assert!(total_loss(f64::NAN, 0.0, 0.0, 0.0, &w).is_err());
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(x in -8.0f64..8.0, t in 0u8..=1) {
            let t = f64::from(t);
            let h = 1e-5;
            let term = |x: f64| sigmoid_ce(&m(&[&[x]]), &m(&[&[t]])).unwrap();
            let fd = (term(x + h) - term(x - h)) / (2.0 * h);
            let g = sigmoid_ce_grad(&m(&[&[x]]), &m(&[&[t]])).unwrap().get(0, 0);
            prop_assert!((fd - g).abs() < 1e-6);
        }

        #[test]
        fn dice_in_unit_interval(p in prop::collection::vec(0.0f64..=1.0, 9), g in prop::collection::vec(0u8..=1, 9)) {
            let p = Matrix::new(3, 3, p).unwrap();
            let g = Matrix::new(3, 3, g.into_iter().map(f64::from).collect()).unwrap();
            let d = dice_loss(&p, &g).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!(dice_loss(&g, &g).unwrap() <= d + 1e-6);
        }

        #[test]
        fn info_nce_nonnegative_and_monotone(
            anchor in prop::collection::vec(-2.0f64..2.0, 3),
            pos in prop::collection::vec(-2.0f64..2.0, 3),
            negs in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 1..5),
        ) {
            let base = info_nce(&anchor, &[&pos], &negs[..negs.len() - 1]).unwrap();
            let more = info_nce(&anchor, &[&pos], &negs).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!(more > 0.0);
            prop_assert!(more >= base);
        }

        #[test]
        fn total_is_linear(a in prop::collection::vec(-5.0f64..5.0, 4), b in prop::collection::vec(-5.0f64..5.0, 4), s in -3.0f64..3.0) {
            let w = LossWeights::default();
            let f = |v: &[f64]| total_loss(v[0], v[1], v[2], v[3], &w).unwrap().total;
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
            prop_assert!((f(&mix) - (f(&a) + s * f(&b))).abs() < 1e-12);
        }
    }
}
