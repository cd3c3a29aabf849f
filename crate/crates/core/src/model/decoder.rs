use super::heads::predict_masks;
use super::params::{AttentionParams, MaskDecoderParams};
use super::{AttentionMask, ModelConfig, ModelError, QuerySet, Result};
use crate::tensor::{matmul, matmul_transposed, row_softmax, Matrix};

/// `softmax(mask + Q K^T) V` with `Q = F_q(x)`, `K = F_k(y)`, `V = F_v(y)`.
/// No residual, no temperature.
pub fn attend(
    x: &Matrix,
    y: &Matrix,
    mask: Option<&AttentionMask>,
    params: &AttentionParams,
) -> Result<Matrix> {
    let q = params.query.forward(x)?;
    let k = params.key.forward(y)?;
    let v = params.value.forward(y)?;
    let mut logits = matmul_transposed(&q, &k)?;
    if let Some(mask) = mask {
        logits = logits.zip_with("attention mask", mask.values(), |l, m| l + m)?;
    }
    Ok(matmul(&row_softmax(&logits)?, &v)?)
}

/// Entries at or above `threshold` become 0 (attend), the rest `-inf`.
pub fn binarize_attention_mask(mask_probs: &Matrix, threshold: f64) -> Result<AttentionMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ModelError::Threshold(threshold));
    }
    AttentionMask::new(mask_probs.map(|p| {
        if p >= threshold {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }))
}

/// One masked cross-attention layer with residual:
/// `x_prev + softmax(M + Q K^T) V`.
pub fn mask_decoder_step(
    x_prev: &Matrix,
    features: &Matrix,
    attn_mask: &AttentionMask,
    params: &AttentionParams,
) -> Result<Matrix> {
    let expect = (x_prev.rows(), features.rows());
    if attn_mask.values().shape() != expect {
        return Err(ModelError::Shape(format!(
            "attention mask is {:?}, expected {:?}",
            attn_mask.values().shape(),
            expect
        )));
    }
    let update = attend(x_prev, features, Some(attn_mask), params)?;
    Ok(x_prev.add(&update)?)
}

/// Cascaded masked-attention decoder. Layer `l` reads feature scale
/// `l mod scales`; its mask is the binarised mask prediction of the previous
/// layer's output at that scale. The first layer attends everywhere.
pub fn run_mask_decoder(
    x0: &QuerySet,
    multiscale_features: &[Matrix],
    config: &ModelConfig,
    params: &MaskDecoderParams,
) -> Result<QuerySet> {
    if params.layers.len() != config.mask_decoder_layers {
        return Err(ModelError::Config(format!(
            "config asks for {} mask decoder layers, parameters hold {}",
            config.mask_decoder_layers,
            params.layers.len()
        )));
    }
    if params.layers.is_empty() {
        return Ok(x0.clone());
    }
    if multiscale_features.is_empty() {
        return Err(ModelError::NoFeatures);
    }
    let mut x = x0.queries.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let features = &multiscale_features[l % multiscale_features.len()];
        let mask = if l == 0 {
            AttentionMask::open(x.rows(), features.rows())
        } else {
            let probs = predict_masks(&x, features, &params.mask_head)?;
            binarize_attention_mask(&probs, config.mask_threshold)?
        };
        x = mask_decoder_step(&x, features, &mask, layer)?;
    }
    Ok(QuerySet::new(x0.modality, x))
}

/// One temporal self-attention layer: each query index attends over its own
/// states across frames, `x + softmax(Q K^T) V`.
pub fn temporal_encode(frames: &[QuerySet], params: &AttentionParams) -> Result<Vec<QuerySet>> {
    let Some(first) = frames.first() else {
        return Err(ModelError::Shape("temporal encoder needs at least one frame".into()));
    };
    let shape = first.queries.shape();
    if let Some(bad) = frames.iter().find(|f| f.queries.shape() != shape) {
        return Err(ModelError::Shape(format!(
            "ragged frames: {:?} vs {:?}",
            shape,
            bad.queries.shape()
        )));
    }
    let (n, d) = shape;
    let mut out: Vec<Matrix> = frames.iter().map(|f| f.queries.clone()).collect();
    for i in 0..n {
        let track = Matrix::from_fn(frames.len(), d, |f, c| frames[f].queries.get(i, c));
        let updated = track.add(&attend(&track, &track, None, params)?)?;
        for (f, dst) in out.iter_mut().enumerate() {
            dst.row_mut(i).copy_from_slice(updated.row(f));
        }
    }
    Ok(frames
        .iter()
        .zip(out)
        .map(|(f, q)| QuerySet::new(f.modality, q))
        .collect())
}
