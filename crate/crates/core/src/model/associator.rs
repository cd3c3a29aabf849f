use super::params::AssociatorParams;
use super::{AssociationMatrix, ModelError, QuerySet, Result};
use crate::assignment::solve_max;
use crate::tensor::{conv2d, cosine_matrix, matmul, relu, sigmoid, Matrix};

/// Bidirectional projected cosine association between two query sets:
/// the mean of `cos(F_fwd(a), b)` and `cos(F_bwd(b), a)^T`. Shape `|a| x |b|`.
pub fn associate_objects(qa: &QuerySet, qb: &QuerySet, params: &AssociatorParams) -> Result<Matrix> {
    if qa.dim() != qb.dim() {
        return Err(ModelError::Shape(format!(
            "cannot associate {}-d {} queries with {}-d {} queries",
            qa.dim(),
            qa.modality,
            qb.dim(),
            qb.modality
        )));
    }
    let a_to_b = cosine_matrix(&params.forward.forward(&qa.queries)?, &qb.queries)?;
    let b_to_a = cosine_matrix(&params.backward.forward(&qb.queries)?, &qa.queries)?;
    Ok(a_to_b.zip_with("associate", &b_to_a.transpose(), |x, y| (x + y) / 2.0)?)
}

/// Convolutional refinement: ReLU between layers, logistic output in [0, 1].
pub fn filter_associations(raw: &Matrix, params: &AssociatorParams) -> Result<Matrix> {
    let mut x = raw.clone();
    let last = params.filter.len().saturating_sub(1);
    for (i, layer) in params.filter.iter().enumerate() {
        let b = layer.bias_value();
        x = conv2d(&x, &layer.kernel)?.map(|v| v + b);
        if i < last {
            x = x.map(relu);
        }
    }
    Ok(x.map(sigmoid))
}

pub fn associate(qa: &QuerySet, qb: &QuerySet, params: &AssociatorParams) -> Result<AssociationMatrix> {
    let raw = associate_objects(qa, qb, params)?;
    let refined = filter_associations(&raw, params)?;
    Ok(AssociationMatrix { raw, refined })
}

/// `q_i + sum_j A[i, j] * partner_j`, summed over all partner modalities.
pub fn fuse_queries(q: &QuerySet, partners: &[(&Matrix, &QuerySet)]) -> Result<QuerySet> {
    let mut fused = q.queries.clone();
    for (refined, partner) in partners {
        if refined.shape() != (q.len(), partner.len()) {
            return Err(ModelError::Shape(format!(
                "association matrix {:?} does not match {} x {} queries",
                refined.shape(),
                q.len(),
                partner.len()
            )));
        }
        fused = fused.add(&matmul(refined, &partner.queries)?)?;
    }
    Ok(QuerySet::new(q.modality, fused))
}

/// Maximum-score one-to-one association, keeping pairs scoring at least
/// `threshold`. Returns `(row, col, score)` sorted by row.
pub fn infer_associations(refined: &Matrix, threshold: f64) -> Vec<(usize, usize, f64)> {
    solve_max(refined)
        .into_iter()
        .map(|(r, c)| (r, c, refined.get(r, c)))
        .filter(|&(_, _, s)| s >= threshold)
        .collect()
}
