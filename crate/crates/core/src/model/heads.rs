use super::params::Mlp;
use super::{DetectionOutput, ModelError, Result};
use crate::tensor::{cosine_matrix, matmul_transposed, sigmoid, Matrix};

/// Class logits as inner products of queries with label text embeddings.
/// The final row of `label_embeddings` stands for "no object".
pub fn classify_objects(queries: &Matrix, label_embeddings: &Matrix) -> Result<Matrix> {
    Ok(matmul_transposed(queries, label_embeddings)?)
}

/// `MLP(q) . pixel_features^T`, one row of logits per query.
pub fn mask_logits(queries: &Matrix, pixel_features: &Matrix, head: &Mlp) -> Result<Matrix> {
    let embedded = head.forward(queries)?;
    Ok(matmul_transposed(&embedded, pixel_features)?)
}

/// Per-query mask probabilities over the rows of `pixel_features`.
pub fn predict_masks(queries: &Matrix, pixel_features: &Matrix, head: &Mlp) -> Result<Matrix> {
    Ok(mask_logits(queries, pixel_features, head)?.map(sigmoid))
}

pub fn detect(
    queries: &Matrix,
    label_embeddings: &Matrix,
    pixel_features: &Matrix,
    head: &Mlp,
) -> Result<DetectionOutput> {
    Ok(DetectionOutput {
        class_logits: classify_objects(queries, label_embeddings)?,
        mask_logits: mask_logits(queries, pixel_features, head)?,
    })
}

/// Index of the most cosine-similar class per query; ties go to the smaller
/// index.
pub fn open_vocab_indices(queries: &Matrix, class_embeddings: &Matrix) -> Result<Vec<usize>> {
    if class_embeddings.rows() == 0 {
        return Err(ModelError::EmptyVocabulary);
    }
    let sims = cosine_matrix(queries, class_embeddings)?;
    Ok(sims.row_iter().map(first_argmax).collect())
}

pub fn open_vocab_label(
    queries: &Matrix,
    class_embeddings: &Matrix,
    class_names: &[String],
) -> Result<Vec<String>> {
    if class_names.len() != class_embeddings.rows() {
        return Err(ModelError::Shape(format!(
            "{} class names for {} embeddings",
            class_names.len(),
            class_embeddings.rows()
        )));
    }
    Ok(open_vocab_indices(queries, class_embeddings)?
        .into_iter()
        .map(|i| class_names[i].clone())
        .collect())
}

pub(crate) fn first_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
