//! Weight containers. Every tensor has a stable dotted name, used for seeded
//! initialisation and for parameter files.

use std::collections::BTreeMap;

use super::{ModelConfig, ModelError, Result};
use crate::tensor::{affine, relu, Matrix, RngSeed};

/// `x * weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            weight: Matrix::identity(n),
            bias: Matrix::zeros(1, n),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(affine(x, &self.weight, &self.bias)?)
    }

    fn visit(&mut self, name: &str, f: &mut dyn FnMut(&str, &mut Matrix, usize)) {
        let fan_in = self.weight.rows();
        f(&format!("{name}.weight"), &mut self.weight, fan_in);
        f(&format!("{name}.bias"), &mut self.bias, fan_in);
    }
}

/// Two affine layers with a ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            hidden: Linear::zeros(input, hidden),
            output: Linear::zeros(hidden, output),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            hidden: Linear::identity(n),
            output: Linear::identity(n),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.output.forward(&self.hidden.forward(x)?.map(relu))
    }

    fn visit(&mut self, name: &str, f: &mut dyn FnMut(&str, &mut Matrix, usize)) {
        self.hidden.visit(&format!("{name}.hidden"), f);
        self.output.visit(&format!("{name}.output"), f);
    }
}

/// Query, key and value projections of one single-head attention.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

impl AttentionParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            query: Linear::zeros(d, d),
            key: Linear::zeros(d, d),
            value: Linear::zeros(d, d),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            query: Linear::identity(d),
            key: Linear::identity(d),
            value: Linear::identity(d),
        }
    }

    /// Copy with the value path zeroed, turning a residual block into the
    /// identity.
    pub fn without_values(&self) -> Self {
        let (i, o) = self.value.weight.shape();
        Self {
            value: Linear::zeros(i, o),
            ..self.clone()
        }
    }

    fn visit(&mut self, name: &str, f: &mut dyn FnMut(&str, &mut Matrix, usize)) {
        self.query.visit(&format!("{name}.query"), f);
        self.key.visit(&format!("{name}.key"), f);
        self.value.visit(&format!("{name}.value"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskDecoderParams {
    pub layers: Vec<AttentionParams>,
    /// MLP applied to queries before the dot product with pixel features.
    pub mask_head: Mlp,
}

/// Single-channel convolution layer of the association filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel: Matrix,
    /// 1x1 scalar bias.
    pub bias: Matrix,
}

impl ConvLayer {
    pub fn identity(k: usize) -> Self {
        let mut kernel = Matrix::zeros(k, k);
        kernel.set(k / 2, k / 2, 1.0);
        Self {
            kernel,
            bias: Matrix::zeros(1, 1),
        }
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            kernel: Matrix::zeros(k, k),
            bias: Matrix::zeros(1, 1),
        }
    }

    pub fn bias_value(&self) -> f64 {
        self.bias.get(0, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociatorParams {
    /// Projects queries of the first modality into the second's space.
    pub forward: Linear,
    /// Projects queries of the second modality into the first's space.
    pub backward: Linear,
    pub filter: Vec<ConvLayer>,
}

impl AssociatorParams {
    /// Identity projections and identity filter kernels.
    pub fn identity(d: usize, layers: usize, kernel: usize) -> Self {
        Self {
            forward: Linear::identity(d),
            backward: Linear::identity(d),
            filter: (0..layers).map(|_| ConvLayer::identity(kernel)).collect(),
        }
    }

    /// The same associator with the two projection directions exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            forward: self.backward.clone(),
            backward: self.forward.clone(),
            filter: self.filter.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorParams {
    pub subject: Mlp,
    pub object: Mlp,
}

/// One layer of the two-way subject/object interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct RpcLayer {
    /// Subjects attend to objects.
    pub obj_to_sub: AttentionParams,
    /// Objects attend to subjects.
    pub sub_to_obj: AttentionParams,
    pub sub_self: AttentionParams,
    pub obj_self: AttentionParams,
}

impl RpcLayer {
    pub fn zeros(d: usize) -> Self {
        Self {
            obj_to_sub: AttentionParams::zeros(d),
            sub_to_obj: AttentionParams::zeros(d),
            sub_self: AttentionParams::zeros(d),
            obj_self: AttentionParams::zeros(d),
        }
    }

    pub fn without_values(&self) -> Self {
        Self {
            obj_to_sub: self.obj_to_sub.without_values(),
            sub_to_obj: self.sub_to_obj.without_values(),
            sub_self: self.sub_self.without_values(),
            obj_self: self.obj_self.without_values(),
        }
    }
}

/// Cross-attention to context, self-attention, feed-forward; each residual.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationLayer {
    pub cross: AttentionParams,
    pub self_attn: AttentionParams,
    pub ffn: Mlp,
}

impl RelationLayer {
    pub fn zeros(d: usize, ffn: usize) -> Self {
        Self {
            cross: AttentionParams::zeros(d),
            self_attn: AttentionParams::zeros(d),
            ffn: Mlp::zeros(d, ffn, d),
        }
    }

    /// Zeroes value projections and the FFN output layer.
    pub fn without_values(&self) -> Self {
        let (h, d) = self.ffn.output.weight.shape();
        Self {
            cross: self.cross.without_values(),
            self_attn: self.self_attn.without_values(),
            ffn: Mlp {
                hidden: self.ffn.hidden.clone(),
                output: Linear::zeros(h, d),
            },
        }
    }
}

/// All weights of the parser.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub mask_decoder: MaskDecoderParams,
    pub temporal: AttentionParams,
    pub associator: AssociatorParams,
    pub projector: ProjectorParams,
    pub rpc: Vec<RpcLayer>,
    pub relation: Vec<RelationLayer>,
}

impl ModelParams {
    /// All-zero weights shaped by `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.embed_dim;
        let h = config.mlp_hidden();
        Self {
            mask_decoder: MaskDecoderParams {
                layers: (0..config.mask_decoder_layers)
                    .map(|_| AttentionParams::zeros(d))
                    .collect(),
                mask_head: Mlp::zeros(d, h, d),
            },
            temporal: AttentionParams::zeros(d),
            associator: AssociatorParams {
                forward: Linear::zeros(d, d),
                backward: Linear::zeros(d, d),
                filter: (0..config.associator_layers)
                    .map(|_| ConvLayer::zeros(config.associator_kernel))
                    .collect(),
            },
            projector: ProjectorParams {
                subject: Mlp::zeros(d, h, d),
                object: Mlp::zeros(d, h, d),
            },
            rpc: (0..config.rpc_layers).map(|_| RpcLayer::zeros(d)).collect(),
            relation: (0..config.relation_decoder_layers)
                .map(|_| RelationLayer::zeros(d, config.ffn_dim()))
                .collect(),
        }
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, one independent
    /// stream per tensor name.
    pub fn init(config: &ModelConfig, seed: RngSeed) -> Self {
        let mut p = Self::zeros(config);
        p.visit(&mut |name, m, fan_in| {
            *m = seed.uniform_matrix(name, m.rows(), m.cols(), fan_in);
        });
        p
    }

    /// Walks every tensor with its name and fan-in.
    pub fn visit(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, usize)) {
        for (i, l) in self.mask_decoder.layers.iter_mut().enumerate() {
            l.visit(&format!("mask_decoder.{i}"), f);
        }
        self.mask_decoder.mask_head.visit("mask_decoder.mask_head", f);
        self.temporal.visit("temporal", f);
        self.associator.forward.visit("associator.forward", f);
        self.associator.backward.visit("associator.backward", f);
        for (i, c) in self.associator.filter.iter_mut().enumerate() {
            let fan_in = c.kernel.rows() * c.kernel.cols();
            f(&format!("associator.filter.{i}.kernel"), &mut c.kernel, fan_in);
            f(&format!("associator.filter.{i}.bias"), &mut c.bias, fan_in);
        }
        self.projector.subject.visit("projector.subject", f);
        self.projector.object.visit("projector.object", f);
        for (i, l) in self.rpc.iter_mut().enumerate() {
            l.obj_to_sub.visit(&format!("rpc.{i}.obj_to_sub"), f);
            l.sub_to_obj.visit(&format!("rpc.{i}.sub_to_obj"), f);
            l.sub_self.visit(&format!("rpc.{i}.sub_self"), f);
            l.obj_self.visit(&format!("rpc.{i}.obj_self"), f);
        }
        for (i, l) in self.relation.iter_mut().enumerate() {
            l.cross.visit(&format!("relation.{i}.cross"), f);
            l.self_attn.visit(&format!("relation.{i}.self_attn"), f);
            l.ffn.visit(&format!("relation.{i}.ffn"), f);
        }
    }

    pub fn to_named(&self) -> BTreeMap<String, Matrix> {
        let mut out = BTreeMap::new();
        self.clone().visit(&mut |name, m, _| {
            out.insert(name.to_owned(), m.clone());
        });
        out
    }

    /// Rebuilds parameters from named tensors; every expected name must be
    /// present with the shape `config` implies.
    pub fn from_named(config: &ModelConfig, named: &BTreeMap<String, Matrix>) -> Result<Self> {
        let mut p = Self::zeros(config);
        let mut problems = Vec::new();
        p.visit(&mut |name, m, _| match named.get(name) {
            Some(src) if src.shape() == m.shape() => *m = src.clone(),
            Some(src) => problems.push(format!(
                "{name}: expected {:?}, found {:?}",
                m.shape(),
                src.shape()
            )),
            None => problems.push(format!("{name}: missing")),
        });
        if problems.is_empty() {
            Ok(p)
        } else {
            Err(ModelError::Shape(format!(
                "parameter set does not match config: {}",
                problems.join("; ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let c = ModelConfig::tiny(4, 3);
        let a = ModelParams::init(&c, RngSeed(1));
        assert_eq!(a, ModelParams::init(&c, RngSeed(1)));
        assert_ne!(a, ModelParams::init(&c, RngSeed(2)));
        let w = &a.mask_decoder.layers[0].query.weight;
        assert!(w.data().iter().all(|v| v.abs() <= 0.5));
        assert!(w.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn named_round_trip() {
        let c = ModelConfig::tiny(3, 2);
        let p = ModelParams::init(&c, RngSeed(9));
        let named = p.to_named();
        assert!(named.contains_key("rpc.1.sub_self.value.bias"));
        assert!(named.contains_key("associator.filter.2.kernel"));
        assert_eq!(ModelParams::from_named(&c, &named).unwrap(), p);

        let mut broken = named.clone();
        broken.remove("temporal.key.weight");
        broken.insert("relation.0.ffn.output.bias".into(), Matrix::zeros(1, 9));
        let err = ModelParams::from_named(&c, &broken).unwrap_err().to_string();
        assert!(err.contains("temporal.key.weight: missing"), "{err}");
        assert!(err.contains("relation.0.ffn.output.bias"), "{err}");
    }
}
