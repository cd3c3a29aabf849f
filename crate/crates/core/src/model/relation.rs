//! Relation proposal constructor and relation decoder.

use super::decoder::attend;
use super::params::{ProjectorParams, RelationLayer, RpcLayer};
use super::{ModelError, PairConfidenceMatrix, RelationQuerySet, Result};
use crate::tensor::{cosine_matrix, matmul_transposed, Matrix};

/// Subject and object embeddings from two independent MLPs.
pub fn project_subject_object(queries: &Matrix, params: &ProjectorParams) -> Result<(Matrix, Matrix)> {
    Ok((
        params.subject.forward(queries)?,
        params.object.forward(queries)?,
    ))
}

/// Two-way subject/object refinement. Within a layer both cross-attention
/// updates read the previous layer's states; self-attention follows. Every
/// sub-block is residual.
pub fn rpc_refine(e_sub: &Matrix, e_obj: &Matrix, layers: &[RpcLayer]) -> Result<(Matrix, Matrix)> {
    if e_sub.shape() != e_obj.shape() {
        return Err(ModelError::Shape(format!(
            "subject embeddings {:?} and object embeddings {:?} differ",
            e_sub.shape(),
            e_obj.shape()
        )));
    }
    let (mut sub, mut obj) = (e_sub.clone(), e_obj.clone());
    for layer in layers {
        let next_sub = sub.add(&attend(&sub, &obj, None, &layer.obj_to_sub)?)?;
        let next_obj = obj.add(&attend(&obj, &sub, None, &layer.sub_to_obj)?)?;
        sub = next_sub.add(&attend(&next_sub, &next_sub, None, &layer.sub_self)?)?;
        obj = next_obj.add(&attend(&next_obj, &next_obj, None, &layer.obj_self)?)?;
    }
    Ok((sub, obj))
}

pub fn pair_confidence(x_sub: &Matrix, x_obj: &Matrix) -> Result<PairConfidenceMatrix> {
    Ok(PairConfidenceMatrix {
        values: cosine_matrix(x_sub, x_obj)?,
    })
}

/// The `k` highest-confidence `(subject, object)` pairs, best first; ties go
/// to the smaller subject index, then the smaller object index.
pub fn select_top_k_pairs(c: &PairConfidenceMatrix, k: usize) -> Result<Vec<(usize, usize)>> {
    let (rows, cols) = c.values.shape();
    let available = rows * cols;
    if k > available {
        return Err(ModelError::TooManyPairs { k, available });
    }
    let mut pairs: Vec<(usize, usize)> = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .collect();
    let score = |&(i, j): &(usize, usize)| c.values.get(i, j);
    pairs.sort_by(|a, b| score(b).total_cmp(&score(a)).then(a.cmp(b)));
    pairs.truncate(k);
    Ok(pairs)
}

/// `[x_sub + e_sub ; x_obj + e_obj]` over the selected pairs.
pub fn build_relation_queries(
    pairs: &[(usize, usize)],
    x_sub: &Matrix,
    x_obj: &Matrix,
    e_sub: &Matrix,
    e_obj: &Matrix,
) -> Result<RelationQuerySet> {
    if x_sub.shape() != e_sub.shape() || x_obj.shape() != e_obj.shape() || x_sub.cols() != x_obj.cols() {
        return Err(ModelError::Shape(format!(
            "relation query inputs disagree: {:?} {:?} {:?} {:?}",
            x_sub.shape(),
            e_sub.shape(),
            x_obj.shape(),
            e_obj.shape()
        )));
    }
    for &(i, j) in pairs {
        if i >= x_sub.rows() || j >= x_obj.rows() {
            return Err(ModelError::PairIndex(i, j));
        }
    }
    let d = x_sub.cols();
    let k = pairs.len();
    let tokens = Matrix::from_fn(2 * k, d, |r, c| {
        if r < k {
            let i = pairs[r].0;
            x_sub.get(i, c) + e_sub.get(i, c)
        } else {
            let j = pairs[r - k].1;
            x_obj.get(j, c) + e_obj.get(j, c)
        }
    });
    Ok(RelationQuerySet {
        tokens,
        pairs: pairs.to_vec(),
    })
}

/// Relation decoder: per layer, cross-attention to the fused multimodal
/// context, self-attention over relation tokens, then a feed-forward block,
/// each with a residual connection.
pub fn relation_decode(q_rel: &RelationQuerySet, context: &Matrix, layers: &[RelationLayer]) -> Result<Matrix> {
    if !layers.is_empty() && context.rows() == 0 {
        return Err(ModelError::EmptyContext);
    }
    let mut x = q_rel.tokens.clone();
    for layer in layers {
        x = x.add(&attend(&x, context, None, &layer.cross)?)?;
        x = x.add(&attend(&x, &x, None, &layer.self_attn)?)?;
        x = x.add(&layer.ffn.forward(&x)?)?;
    }
    Ok(x)
}

/// Predicate logits per pair: the two tokens of a pair are averaged and
/// scored against each predicate embedding.
pub fn classify_relations(x_rel: &Matrix, predicate_embeddings: &Matrix) -> Result<Matrix> {
    if !x_rel.rows().is_multiple_of(2) {
        return Err(ModelError::OddTokens(x_rel.rows()));
    }
    let k = x_rel.rows() / 2;
    let pooled = Matrix::from_fn(k, x_rel.cols(), |i, c| (x_rel.get(i, c) + x_rel.get(k + i, c)) / 2.0);
    Ok(matmul_transposed(&pooled, predicate_embeddings)?)
}
