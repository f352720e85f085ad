use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::BagNetConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Precision, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    NormScale,
    NormShift,
    HeadWeight,
    HeadBias,
}

impl ParamKind {
    /// Conv and head weights; the parameters that L2 regularization covers by default.
    pub fn is_weight(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::HeadWeight)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

/// A conv followed by instance norm. Fields index into `Model::params`.
#[derive(Debug, Clone, Copy)]
struct ConvNorm {
    weight: usize,
    bias: usize,
    scale: usize,
    shift: usize,
    stride: usize,
    padding: usize,
}

#[derive(Debug, Clone)]
struct Block {
    stage: usize,
    conv1: ConvNorm,
    conv2: ConvNorm,
    conv3: ConvNorm,
    projection: Option<ConvNorm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// Also return the pre-pool feature map.
    pub keep_features: bool,
    /// Record the input as a gradient-receiving leaf.
    pub input_requires_grad: bool,
    /// Treat instance-norm statistics as constants in the backward pass.
    pub detach_norm_stats: bool,
}

impl ForwardOptions {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            keep_features: false,
            input_requires_grad: false,
            detach_norm_stats: false,
        }
    }

    pub fn keep_features(mut self, keep: bool) -> Self {
        self.keep_features = keep;
        self
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[N, output_dim]`.
    pub logits: Var,
    /// `[N, feature_dim, d, h, w]`, exactly the tensor that was pooled.
    pub features: Option<Var>,
    pub input: Var,
    /// Tape handles of the parameters, in `Model::params` order.
    pub params: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: BagNetConfig,
    output_dim: usize,
    params: Vec<Param<T>>,
    stem: Vec<ConvNorm>,
    blocks: Vec<Block>,
    head_weight: usize,
    head_bias: usize,
}

struct Builder<'a, T, R> {
    params: Vec<Param<T>>,
    rng: &'a mut R,
}

impl<T: Real, R: Rng> Builder<'_, T, R> {
    fn push(&mut self, name: String, kind: ParamKind, value: Tensor<T>) -> usize {
        self.params.push(Param { name, kind, value });
        self.params.len() - 1
    }

    fn conv_norm(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> ConvNorm {
        let fan_in = (cin * k * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let w = Tensor::from_fn([cout, cin, k, k, k], |_| T::from_f64(normal.sample(self.rng)));
        ConvNorm {
            weight: self.push(format!("{name}.weight"), ParamKind::ConvWeight, w),
            bias: self.push(format!("{name}.bias"), ParamKind::ConvBias, Tensor::zeros([cout])),
            scale: self.push(format!("{name}.norm.scale"), ParamKind::NormScale, Tensor::ones([cout])),
            shift: self.push(format!("{name}.norm.shift"), ParamKind::NormShift, Tensor::zeros([cout])),
            stride,
            padding: (k - 1) / 2,
        }
    }
}

/// Builds a model with deterministic initialization from `seed`: He-normal
/// conv weights, zero conv biases, unit norm scales, zero norm shifts, a
/// uniform `+-1/sqrt(fan_in)` head and a zero head bias.
pub fn build_bagnet3d<T: Real>(config: &BagNetConfig, output_dim: usize, seed: u64) -> Result<Model<T>> {
    config.validate()?;
    if output_dim == 0 {
        return Err(Error::config("output_dim must be >= 1"));
    }
    let mut init_rng = rng::stream(seed, rng::INIT);
    let mut b = Builder {
        params: Vec::new(),
        rng: &mut init_rng,
    };
    let sw = config.stem_width;
    let stem = vec![
        b.conv_norm("stem.conv_a", 1, sw, 1, 1),
        b.conv_norm("stem.conv_b", sw, sw, config.stem_kernel, 1),
    ];
    let mut blocks = Vec::new();
    let mut cin = sw;
    for (s, row) in config.kernel3_pattern.iter().enumerate() {
        let width = config.stage_widths[s];
        let cout = width * config.expansion;
        for (bi, &wide) in row.iter().enumerate() {
            let stride = if bi == 0 { config.stage_strides[s] } else { 1 };
            let prefix = format!("stage{}.block{}", s + 1, bi + 1);
            let conv1 = b.conv_norm(&format!("{prefix}.conv1"), cin, width, 1, 1);
            let conv2 = b.conv_norm(&format!("{prefix}.conv2"), width, width, if wide { 3 } else { 1 }, stride);
            let conv3 = b.conv_norm(&format!("{prefix}.conv3"), width, cout, 1, 1);
            let projection = (stride != 1 || cin != cout)
                .then(|| b.conv_norm(&format!("{prefix}.projection"), cin, cout, 1, stride));
            blocks.push(Block {
                stage: s + 1,
                conv1,
                conv2,
                conv3,
                projection,
            });
            cin = cout;
        }
    }
    let bound = 1.0 / (cin as f64).sqrt();
    let hw = Tensor::from_fn([output_dim, cin], |_| T::from_f64(b.rng.random_range(-bound..bound)));
    let head_weight = b.push("head.weight".into(), ParamKind::HeadWeight, hw);
    let head_bias = b.push("head.bias".into(), ParamKind::HeadBias, Tensor::zeros([output_dim]));
    Ok(Model {
        config: config.clone(),
        output_dim,
        params: b.params,
        stem,
        blocks,
        head_weight,
        head_bias,
    })
}

fn conv_norm_params(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k * k + cout + 2 * cout
}

/// Closed-form parameter count of everything before the head.
pub fn count_backbone_params(config: &BagNetConfig) -> usize {
    let sw = config.stem_width;
    let mut total = conv_norm_params(1, sw, 1) + conv_norm_params(sw, sw, config.stem_kernel);
    let mut cin = sw;
    for (s, row) in config.kernel3_pattern.iter().enumerate() {
        let width = config.stage_widths[s];
        let cout = width * config.expansion;
        for (bi, &wide) in row.iter().enumerate() {
            let stride = if bi == 0 { config.stage_strides[s] } else { 1 };
            total += conv_norm_params(cin, width, 1)
                + conv_norm_params(width, width, if wide { 3 } else { 1 })
                + conv_norm_params(width, cout, 1);
            if stride != 1 || cin != cout {
                total += conv_norm_params(cin, cout, 1);
            }
            cin = cout;
        }
    }
    total
}

/// Closed-form parameter count of the built model, head included.
pub fn count_params(config: &BagNetConfig, output_dim: usize) -> usize {
    count_backbone_params(config) + (config.feature_dim() + 1) * output_dim
}

impl<T: Real> Model<T> {
    pub fn config(&self) -> &BagNetConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn config_hash(&self) -> String {
        self.config.hash_hex()
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn param_values(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Mutable parameter tensors, in `params()` order.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.iter_mut().map(|p| &mut p.value)
    }

    /// Replaces all parameter values; shapes must match.
    pub fn set_param_values(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape(format!(
                "{} tensors for {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter().zip(&values) {
            if p.value.shape() != v.shape() {
                return Err(Error::shape(format!(
                    "parameter `{}` has shape {:?}, got {:?}",
                    p.name,
                    p.value.shape(),
                    v.shape()
                )));
            }
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    pub fn head_weight(&self) -> &Tensor<T> {
        &self.params[self.head_weight].value
    }

    pub fn head_bias(&self) -> &Tensor<T> {
        &self.params[self.head_bias].value
    }

    pub fn head_weight_mut(&mut self) -> &mut Tensor<T> {
        &mut self.params[self.head_weight].value
    }

    pub fn head_bias_mut(&mut self) -> &mut Tensor<T> {
        &mut self.params[self.head_bias].value
    }

    /// Cast to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            output_dim: self.output_dim,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    value: p.value.cast(),
                })
                .collect(),
            stem: self.stem.clone(),
            blocks: self.blocks.clone(),
            head_weight: self.head_weight,
            head_bias: self.head_bias,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, d, h, w] = x.dims5()?;
        if c != 1 {
            return Err(Error::shape(format!("model input must have 1 channel, got {c}")));
        }
        let mut ext = [d, h, w];
        for (s, &stride) in self.config.stage_strides.iter().enumerate() {
            if ext.iter().any(|&e| e < stride) {
                return Err(Error::shape(format!(
                    "input {:?} too small: stage {} receives extent {:?}, needs >= {stride} per axis",
                    [d, h, w],
                    s + 1,
                    ext
                )));
            }
            ext = ext.map(|e| (e - 1) / stride + 1);
        }
        Ok(())
    }

    /// Spatial extent of the pre-pool feature map for a given input extent.
    pub fn feature_extent(&self, input: [usize; 3]) -> [usize; 3] {
        let mut ext = input;
        for &s in &self.config.stage_strides {
            ext = ext.map(|e| (e - 1) / s + 1);
        }
        ext
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Tensor<T>, mode: Mode, keep_features: bool) -> Result<ForwardOutput> {
        self.forward_with(tape, x, ForwardOptions::new(mode).keep_features(keep_features))
    }

    /// Records the forward pass on `tape`. In [`Mode::Train`] parameters are
    /// gradient-receiving leaves; in [`Mode::Eval`] they are constants. The
    /// computed values are identical in both modes.
    pub fn forward_with(&self, tape: &mut Tape<T>, x: Tensor<T>, opts: ForwardOptions) -> Result<ForwardOutput> {
        self.check_input(&x)?;
        let train = opts.mode == Mode::Train;
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), train))
            .collect();
        let input = tape.leaf(x, opts.input_requires_grad);
        let eps = self.config.norm_eps;
        let detach = opts.detach_norm_stats;
        let conv_norm = |tape: &mut Tape<T>, x: Var, u: &ConvNorm| -> Result<Var> {
            let y = tape.conv3d(x, params[u.weight], Some(params[u.bias]), u.stride, u.padding)?;
            tape.instance_norm3d_with(y, params[u.scale], params[u.shift], eps, detach)
        };

        let mut h = input;
        for unit in &self.stem {
            h = conv_norm(tape, h, unit)?;
            h = tape.relu(h)?;
        }
        for block in &self.blocks {
            let stage_err = |e: Error| match e {
                Error::Shape(msg) => Error::Shape(format!("stage {}: {msg}", block.stage)),
                other => other,
            };
            let mut m = conv_norm(tape, h, &block.conv1).map_err(stage_err)?;
            m = tape.relu(m)?;
            m = conv_norm(tape, m, &block.conv2).map_err(stage_err)?;
            m = tape.relu(m)?;
            m = conv_norm(tape, m, &block.conv3).map_err(stage_err)?;
            let skip = match &block.projection {
                Some(p) => conv_norm(tape, h, p).map_err(stage_err)?,
                None => h,
            };
            let sum = tape.add(m, skip)?;
            h = tape.relu(sum)?;
        }
        let pooled = tape.global_avg_pool(h)?;
        let logits = tape.linear(pooled, params[self.head_weight], params[self.head_bias])?;
        Ok(ForwardOutput {
            logits,
            features: opts.keep_features.then_some(h),
            input,
            params,
        })
    }

    /// Logits of an eval-mode forward pass.
    pub fn predict(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, x, Mode::Eval, false)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Logits and pre-pool feature map of an eval-mode forward pass.
    pub fn predict_with_features(&self, x: Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, x, Mode::Eval, true)?;
        let features = out.features.expect("features requested");
        Ok((tape.value(out.logits).clone(), tape.value(features).clone()))
    }
}
