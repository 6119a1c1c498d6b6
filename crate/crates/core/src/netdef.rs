//! The Deep and Wide part-network families.
//!
//! Every network is a stack of pooled convolution stages followed by fully
//! connected layers and a bias-free logits layer with two outputs per
//! attribute. Convolutions are same-padded with stride 1, pooling is a valid
//! 3x3 window with stride 2, and every conv and FC layer is followed by relu.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::ops::{self, pool_out_dim};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvDef {
    pub kernel: usize,
    pub channels: usize,
}

/// Layer stack shared by a network family. Each stage is a run of convs
/// followed by one max pool; the last `fc` width is the embedding size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub in_channels: usize,
    pub stages: Vec<Vec<ConvDef>>,
    pub fc: Vec<usize>,
}

impl Arch {
    pub fn deep() -> Self {
        let c = |kernel| ConvDef { kernel, channels: 32 };
        Self {
            in_channels: 3,
            stages: vec![vec![c(7)], vec![c(5); 3], vec![c(3); 4]],
            fc: vec![64, 32],
        }
    }

    pub fn wide() -> Self {
        let c = |kernel| ConvDef { kernel, channels: 128 };
        Self { in_channels: 3, stages: vec![vec![c(7)], vec![c(5)], vec![c(3)]], fc: vec![128, 128] }
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.stages.is_empty() || self.fc.is_empty() {
            return Err(Error::Spec("architecture needs input channels, a conv stage and an FC layer".into()));
        }
        for conv in self.stages.iter().flatten() {
            if conv.kernel % 2 == 0 || conv.channels == 0 {
                return Err(Error::Spec(format!("invalid conv layer {conv:?}")));
            }
        }
        if self.stages.iter().any(Vec::is_empty) || self.fc.contains(&0) {
            return Err(Error::Spec("empty stage or zero-width FC layer".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Deep,
    Wide,
    Custom(Arch),
}

impl Family {
    pub fn arch(&self) -> Arch {
        match self {
            Family::Deep => Arch::deep(),
            Family::Wide => Arch::wide(),
            Family::Custom(a) => a.clone(),
        }
    }

    pub fn prefix(&self) -> &'static str {
        match self {
            Family::Deep => "D",
            Family::Wide => "W",
            Family::Custom(_) => "C",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Binary,
    Multi,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub family: Family,
    pub mode: Mode,
    pub input_h: usize,
    pub input_w: usize,
    pub num_attrs: usize,
}

impl NetworkSpec {
    pub fn new(family: Family, mode: Mode, input_h: usize, input_w: usize, num_attrs: usize) -> Result<Self> {
        let spec = Self { family, mode, input_h, input_w, num_attrs };
        spec.validate()?;
        Ok(spec)
    }

    pub fn multi(family: Family, input_h: usize, input_w: usize, num_attrs: usize) -> Result<Self> {
        Self::new(family, Mode::Multi, input_h, input_w, num_attrs)
    }

    pub fn binary(family: Family, input_h: usize, input_w: usize) -> Result<Self> {
        Self::new(family, Mode::Binary, input_h, input_w, 1)
    }

    pub fn validate(&self) -> Result<()> {
        let arch = self.family.arch();
        arch.validate()?;
        if self.num_attrs == 0 {
            return Err(Error::Spec("a network needs at least one attribute".into()));
        }
        if self.mode == Mode::Binary && self.num_attrs != 1 {
            return Err(Error::Spec(format!("binary networks predict one attribute, got {}", self.num_attrs)));
        }
        self.final_spatial().map(|_| ())
    }

    /// Spatial size after the last pool.
    pub fn final_spatial(&self) -> Result<(usize, usize)> {
        let (mut h, mut w) = (self.input_h, self.input_w);
        for stage in 0..self.family.arch().stages.len() {
            match (pool_out_dim(h), pool_out_dim(w)) {
                (Some(a), Some(b)) => (h, w) = (a, b),
                _ => {
                    return Err(Error::Spec(format!(
                        "input {}x{} is too small: pool {} sees {}x{}",
                        self.input_h,
                        self.input_w,
                        stage + 1,
                        h,
                        w
                    )))
                }
            }
        }
        Ok((h, w))
    }

    pub fn embedding_dim(&self) -> usize {
        *self.family.arch().fc.last().expect("validated arch has an FC layer")
    }

    /// Width of the first FC layer's input: flattened post-pool activation.
    pub fn flat_dim(&self) -> Result<usize> {
        let (h, w) = self.final_spatial()?;
        let arch = self.family.arch();
        let channels = arch.stages.last().and_then(|s| s.last()).map_or(arch.in_channels, |c| c.channels);
        Ok(h * w * channels)
    }

    pub fn layer_plan(&self) -> Result<Vec<LayerPlan>> {
        self.validate()?;
        let arch = self.family.arch();
        let mut plan = Vec::new();
        let (mut h, mut w, mut cin) = (self.input_h, self.input_w, arch.in_channels);
        for (s, stage) in arch.stages.iter().enumerate() {
            for (l, conv) in stage.iter().enumerate() {
                let name = if stage.len() == 1 { format!("conv{}", s + 1) } else { format!("conv{}_{}", s + 1, l + 1) };
                plan.push(LayerPlan {
                    name,
                    kind: LayerKind::Conv { pool_after: l + 1 == stage.len() },
                    weight_shape: vec![conv.kernel, conv.kernel, cin, conv.channels],
                    bias: Some(conv.channels),
                    in_hw: (h, w),
                });
                cin = conv.channels;
            }
            h = pool_out_dim(h).expect("validated");
            w = pool_out_dim(w).expect("validated");
        }
        let mut din = h * w * cin;
        for (i, &width) in arch.fc.iter().enumerate() {
            plan.push(LayerPlan {
                name: format!("fc{}", i + 1),
                kind: LayerKind::Dense { relu: true },
                weight_shape: vec![din, width],
                bias: Some(width),
                in_hw: (1, 1),
            });
            din = width;
        }
        plan.push(LayerPlan {
            name: "logits".into(),
            kind: LayerKind::Dense { relu: false },
            weight_shape: vec![din, 2 * self.num_attrs],
            bias: None,
            in_hw: (1, 1),
        });
        Ok(plan)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv { pool_after: bool },
    Dense { relu: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerPlan {
    pub name: String,
    pub kind: LayerKind,
    pub weight_shape: Vec<usize>,
    pub bias: Option<usize>,
    /// Spatial size the layer sees (1x1 for dense layers).
    pub in_hw: (usize, usize),
}

impl LayerPlan {
    pub fn param_count(&self) -> usize {
        self.weight_shape.iter().product::<usize>() + self.bias.unwrap_or(0)
    }

    pub fn fan_in(&self) -> usize {
        self.weight_shape[..self.weight_shape.len() - 1].iter().product()
    }
}

/// Trainable parameter count of `spec`.
pub fn count_params(spec: &NetworkSpec) -> Result<usize> {
    Ok(spec.layer_plan()?.iter().map(LayerPlan::param_count).sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T = f32> {
    pub name: String,
    pub kind: LayerKind,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer<T>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T = f32> {
    /// `num_attrs x 2`.
    pub logits: Tensor<T>,
    pub embedding: Tensor<T>,
}

/// Per-layer activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace<T = f32> {
    steps: Vec<LayerTrace<T>>,
}

#[derive(Clone, Debug)]
struct LayerTrace<T> {
    input: Tensor<T>,
    activated: Tensor<T>,
    argmax: Option<Vec<usize>>,
}

/// Gradient tensors in [`Network::params`] order.
pub type Gradients<T = f32> = Vec<Tensor<T>>;

/// Zero biases, He-normal weights from a ChaCha stream seeded with `seed`.
pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    build_as::<f32>(spec, seed)
}

pub fn build_as<T: Real>(spec: &NetworkSpec, seed: u64) -> Result<Network<T>> {
    let plan = spec.layer_plan()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = plan
        .into_iter()
        .map(|p| {
            let std = (2.0 / p.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let weight = Tensor::from_fn(&p.weight_shape, |_| T::from_f64_lossy(normal.sample(&mut rng)));
            Layer { name: p.name, kind: p.kind, weight, bias: p.bias.map(|n| Tensor::zeros(&[n])) }
        })
        .collect();
    Ok(Network { spec: spec.clone(), layers })
}

impl<T: Real> Network<T> {
    /// Assembles a network from named tensors, checking them against the plan.
    pub fn from_parts(spec: NetworkSpec, mut tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let plan = spec.layer_plan()?;
        let expected: usize = plan.iter().map(|p| 1 + usize::from(p.bias.is_some())).sum();
        if tensors.len() != expected {
            return Err(Error::Format(format!("expected {expected} tensors, found {}", tensors.len())));
        }
        let mut it = tensors.drain(..);
        let mut take = |name: String, shape: &[usize]| -> Result<Tensor<T>> {
            let (got_name, t) = it.next().expect("count checked");
            if got_name != name || t.shape() != shape {
                return Err(Error::Format(format!(
                    "tensor {got_name} {:?} does not match expected {name} {:?}",
                    t.shape(),
                    shape
                )));
            }
            Ok(t)
        };
        let mut layers = Vec::with_capacity(plan.len());
        for p in plan {
            let weight = take(format!("{}.weight", p.name), &p.weight_shape)?;
            let bias = match p.bias {
                Some(n) => Some(take(format!("{}.bias", p.name), &[n])?),
                None => None,
            };
            layers.push(Layer { name: p.name, kind: p.kind, weight, bias });
        }
        Ok(Self { spec, layers })
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((format!("{}.weight", l.name), &l.weight));
            if let Some(b) = &l.bias {
                out.push((format!("{}.bias", l.name), b));
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| std::iter::once(&l.weight).chain(l.bias.as_ref())).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| std::iter::once(&mut l.weight).chain(l.bias.as_mut())).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    kind: l.kind,
                    weight: l.weight.cast(),
                    bias: l.bias.as_ref().map(Tensor::cast),
                })
                .collect(),
        }
    }

    fn check_input(&self, image: &Tensor<T>) -> Result<()> {
        let want = [self.spec.input_h, self.spec.input_w, self.spec.family.arch().in_channels];
        if image.shape() != want {
            return Err(shape_err!("network expects input {:?}, got {:?}", want, image.shape()));
        }
        Ok(())
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<ForwardOutput<T>> {
        self.forward_traced(image).map(|(out, _)| out)
    }

    pub fn forward_traced(&self, image: &Tensor<T>) -> Result<(ForwardOutput<T>, Trace<T>)> {
        self.check_input(image)?;
        let mut x = image.clone();
        let mut steps = Vec::with_capacity(self.layers.len());
        let mut embedding = None;
        for layer in &self.layers {
            let (activated, next, argmax) = match layer.kind {
                LayerKind::Conv { pool_after } => {
                    let bias = layer.bias.as_ref().expect("conv layers carry a bias");
                    let a = ops::relu(&ops::conv2d(&x, &layer.weight, bias)?);
                    if pool_after {
                        let pooled = ops::maxpool3x3s2_indexed(&a)?;
                        (a, pooled.output, Some(pooled.argmax))
                    } else {
                        (a.clone(), a, None)
                    }
                }
                LayerKind::Dense { relu } => {
                    let z = ops::dense(&x, &layer.weight, layer.bias.as_ref())?;
                    let a = if relu { ops::relu(&z) } else { z };
                    if relu {
                        embedding = Some(a.clone());
                    }
                    (a.clone(), a, None)
                }
            };
            steps.push(LayerTrace { input: std::mem::replace(&mut x, next), activated, argmax });
        }
        let logits = x.reshape(vec![self.spec.num_attrs, 2])?;
        let embedding = embedding.expect("validated arch has an FC layer");
        Ok((ForwardOutput { logits, embedding }, Trace { steps }))
    }

    /// Backpropagates `grad_logits` (`num_attrs x 2`) through a recorded trace.
    pub fn backward(&self, trace: &Trace<T>, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        if grad_logits.len() != 2 * self.spec.num_attrs {
            return Err(shape_err!("logit gradient has {} entries, expected {}", grad_logits.len(), 2 * self.spec.num_attrs));
        }
        if trace.steps.len() != self.layers.len() {
            return Err(shape_err!("trace does not belong to this network"));
        }
        let mut per_layer: Vec<(Tensor<T>, Option<Tensor<T>>)> = Vec::with_capacity(self.layers.len());
        let mut grad = grad_logits.clone().reshape(vec![grad_logits.len()])?;
        for (layer, step) in self.layers.iter().zip(&trace.steps).rev() {
            match layer.kind {
                LayerKind::Conv { pool_after } => {
                    let g_act = match &step.argmax {
                        Some(argmax) => ops::maxpool3x3s2_backward(step.activated.shape(), argmax, &grad)?,
                        None => grad,
                    };
                    let g_pre = ops::relu_backward(&step.activated, &g_act)?;
                    debug_assert_eq!(pool_after, step.argmax.is_some());
                    let g = ops::conv2d_backward(&step.input, &layer.weight, &g_pre)?;
                    per_layer.push((g.kernel, Some(g.bias)));
                    grad = g.input;
                }
                LayerKind::Dense { relu } => {
                    let g_pre = if relu { ops::relu_backward(&step.activated, &grad)? } else { grad };
                    let g = ops::dense_backward(&step.input, &layer.weight, &g_pre)?;
                    per_layer.push((g.weight, layer.bias.as_ref().map(|_| g.bias)));
                    grad = g.input;
                }
            }
        }
        per_layer.reverse();
        Ok(per_layer.into_iter().flat_map(|(w, b)| std::iter::once(w).chain(b)).collect())
    }
}
