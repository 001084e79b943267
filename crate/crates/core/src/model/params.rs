use rand::Rng;
use rand_distr::{StandardNormal, Uniform};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::molgraph::{ATOM_FEATURE_DIM, EDGE_INPUT_DIM};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Matrix, uniform in ±√(6/(fan_in+fan_out)).
    Weight,
    /// Layer-norm gain, ones.
    Gain,
    /// Zeros.
    Bias,
    /// Unit-norm Gaussian vector.
    Cls,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub gain: usize,
    pub bias: usize,
}

/// `layernorm(W·x)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct NormedLinear {
    pub w: usize,
    pub ln: Norm,
}

#[derive(Clone, Debug)]
pub(crate) struct Block {
    pub wq: Vec<usize>,
    pub wk: Vec<usize>,
    pub wv: Vec<usize>,
    pub w0: usize,
    pub ln_attn: Norm,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub ln_ffn: Norm,
}

/// Indices of every parameter, grouped by role.
#[derive(Clone, Debug)]
pub struct Layout {
    pub(crate) edge1: NormedLinear,
    pub(crate) edge2: NormedLinear,
    pub(crate) geo1: NormedLinear,
    pub(crate) geo2: NormedLinear,
    pub(crate) geo3: NormedLinear,
    pub(crate) interaction: Vec<Block>,
    pub(crate) atom1: NormedLinear,
    pub(crate) atom2: NormedLinear,
    pub(crate) output: Block,
    pub(crate) pos1: NormedLinear,
    pub(crate) pos2: NormedLinear,
    pub(crate) pos3: NormedLinear,
    pub(crate) cls: usize,
    pub(crate) transformer: Vec<Block>,
    pub(crate) head_w1: usize,
    pub(crate) head_b1: usize,
    pub(crate) head_w2: usize,
    pub(crate) head_b2: usize,
}

struct Builder {
    specs: Vec<(String, ParamKind, Vec<usize>)>,
}

impl Builder {
    fn add(&mut self, name: String, kind: ParamKind, shape: Vec<usize>) -> usize {
        self.specs.push((name, kind, shape));
        self.specs.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Norm {
        Norm {
            gain: self.add(format!("{}.ln.gain", prefix), ParamKind::Gain, vec![d]),
            bias: self.add(format!("{}.ln.bias", prefix), ParamKind::Bias, vec![d]),
        }
    }

    fn normed_linear(&mut self, prefix: &str, out: usize, inp: usize) -> NormedLinear {
        NormedLinear {
            w: self.add(format!("{}.w", prefix), ParamKind::Weight, vec![out, inp]),
            ln: self.norm(prefix, out),
        }
    }

    fn block(&mut self, prefix: &str, c: &ModelConfig) -> Block {
        let (d, h, f) = (c.d_model, c.d_out(), c.d_ffn());
        let heads = |tag: &str, b: &mut Builder| -> Vec<usize> {
            (0..c.n_heads)
                .map(|i| b.add(format!("{}.{}.{}", prefix, tag, i), ParamKind::Weight, vec![h, d]))
                .collect()
        };
        let wq = heads("wq", self);
        let wk = heads("wk", self);
        let wv = heads("wv", self);
        Block {
            wq,
            wk,
            wv,
            w0: self.add(format!("{}.w0", prefix), ParamKind::Weight, vec![d, d]),
            ln_attn: self.norm(&format!("{}.attn", prefix), d),
            w1: self.add(format!("{}.ffn.w1", prefix), ParamKind::Weight, vec![f, d]),
            b1: self.add(format!("{}.ffn.b1", prefix), ParamKind::Bias, vec![f]),
            w2: self.add(format!("{}.ffn.w2", prefix), ParamKind::Weight, vec![d, f]),
            ln_ffn: self.norm(&format!("{}.ffn", prefix), d),
        }
    }
}

impl Layout {
    /// Parameter names, kinds and shapes in storage order.
    pub fn build(c: &ModelConfig) -> (Layout, Vec<(String, ParamKind, Vec<usize>)>) {
        let (d, h) = (c.d_model, c.d_out());
        let mut b = Builder { specs: Vec::new() };
        let layout = Layout {
            edge1: b.normed_linear("embed.edge1", h, EDGE_INPUT_DIM),
            edge2: b.normed_linear("embed.edge2", d, h),
            geo1: b.normed_linear("embed.geo1", h, 3),
            geo2: b.normed_linear("embed.geo2", h, h),
            geo3: b.normed_linear("embed.geo3", d, h),
            interaction: (0..c.n_interaction)
                .map(|l| b.block(&format!("interaction.{}", l), c))
                .collect(),
            atom1: b.normed_linear("output.atom1", h, ATOM_FEATURE_DIM),
            atom2: b.normed_linear("output.atom2", d, h),
            output: b.block("output.attn", c),
            pos1: b.normed_linear("readout.pos1", h, 3),
            pos2: b.normed_linear("readout.pos2", h, h),
            pos3: b.normed_linear("readout.pos3", d, h),
            cls: b.add("readout.cls".into(), ParamKind::Cls, vec![1, d]),
            transformer: (0..c.n_transformer)
                .map(|t| b.block(&format!("readout.layer.{}", t), c))
                .collect(),
            head_w1: b.add("head.w1".into(), ParamKind::Weight, vec![d, d]),
            head_b1: b.add("head.b1".into(), ParamKind::Bias, vec![d]),
            head_w2: b.add("head.w2".into(), ParamKind::Weight, vec![1, d]),
            head_b2: b.add("head.b2".into(), ParamKind::Bias, vec![1]),
        };
        (layout, b.specs)
    }
}

/// Model configuration, parameter values and their structural layout.
#[derive(Clone, Debug)]
pub struct Dgann {
    pub config: ModelConfig,
    pub params: Vec<Param>,
    pub(crate) layout: Layout,
}

fn init_value<R: Rng + ?Sized>(kind: ParamKind, shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = match kind {
        ParamKind::Weight => {
            let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            let u = Uniform::new_inclusive(-bound, bound);
            (0..n).map(|_| rng.sample(u)).collect()
        }
        ParamKind::Gain => vec![1.0; n],
        ParamKind::Bias => vec![0.0; n],
        ParamKind::Cls => {
            let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        }
    };
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

impl Dgann {
    /// Freshly initialized model.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = Layout::build(&config);
        let params = specs
            .into_iter()
            .map(|(name, kind, shape)| Param {
                value: init_value(kind, &shape, rng),
                name,
                kind,
            })
            .collect();
        Ok(Dgann {
            config,
            params,
            layout,
        })
    }

    /// Rebuilds a model from named tensors, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = Layout::build(&config);
        if named.len() != specs.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                specs.len(),
                named.len()
            )));
        }
        let params = specs
            .into_iter()
            .zip(named)
            .map(|((name, kind, shape), (got_name, value))| {
                if name != got_name || value.shape() != shape.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "parameter '{}' {:?} does not match expected '{}' {:?}",
                        got_name,
                        value.shape(),
                        name,
                        shape
                    )));
                }
                Ok(Param { name, kind, value })
            })
            .collect::<Result<_>>()?;
        Ok(Dgann {
            config,
            params,
            layout,
        })
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
