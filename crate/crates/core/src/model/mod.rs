//! Network assembly: per-modality branches fused by a dense head.
//!
//! A branch turns one modality window `[B, w, 1]` into a representation
//! `[B, H]`. For the multimodal model each branch is
//! `conv1d → relu → maxpool → gru → attention` (or the last GRU state when
//! attention is off); the branch outputs are concatenated and passed through
//! `dense(relu) → dropout → dense(linear)` to give one prediction per sample.
//!
//! The single-modality baselines reuse the same pieces. `cnn_gru` and
//! `cnn_gru_attention` are literally a one-branch multimodal model, so they
//! share its head; `rnn`, `gru` and `cnn` map their branch straight to a
//! linear output unit.

mod io;
mod loss;

pub use io::{load_model, read_model, save_model, write_model, Checkpoint, FORMAT_VERSION, MAGIC};
pub use loss::{l2_penalty, loss, mse_gradient, LossValue};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    Activation, Attention, Conv1d, Dense, Dropout, Flatten, Gru, LastStep, Layer, MaxPool1d, Param, Relu, Rnn,
};
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Multimodal CNN-GRU(-attention) branches with a fusion head.
    Hmdlf,
    Rnn,
    Gru,
    Cnn,
    CnnGru,
    CnnGruAttention,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Hmdlf,
        ModelKind::Rnn,
        ModelKind::Gru,
        ModelKind::Cnn,
        ModelKind::CnnGru,
        ModelKind::CnnGruAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hmdlf => "hmdlf",
            ModelKind::Rnn => "rnn",
            ModelKind::Gru => "gru",
            ModelKind::Cnn => "cnn",
            ModelKind::CnnGru => "cnn_gru",
            ModelKind::CnnGruAttention => "cnn_gru_attention",
        }
    }

    pub fn is_multimodal(self) -> bool {
        self == ModelKind::Hmdlf
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BranchConfig {
    pub conv_filters: usize,
    pub kernel_width: usize,
    pub pool_width: usize,
    pub hidden: usize,
    pub attention_width: usize,
    pub use_attention: bool,
}

impl Default for BranchConfig {
    fn default() -> Self {
        BranchConfig {
            conv_filters: 64,
            kernel_width: 3,
            pool_width: 2,
            hidden: 128,
            attention_width: 128,
            use_attention: true,
        }
    }
}

impl BranchConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("conv_filters", self.conv_filters),
            ("kernel_width", self.kernel_width),
            ("pool_width", self.pool_width),
            ("hidden", self.hidden),
            ("attention_width", self.attention_width),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("branch.{name} must be at least 1")));
            }
        }
        if self.kernel_width % 2 == 0 {
            return Err(Error::Config(format!(
                "branch.kernel_width must be odd, got {}",
                self.kernel_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Input modalities in branch order; the first is the forecast target.
    pub modalities: Vec<String>,
    /// Window length `w`.
    pub lookup: usize,
    #[serde(default)]
    pub branch: BranchConfig,
    #[serde(default = "default_head_hidden")]
    pub head_hidden: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Adds bias vectors to the recurrent gates.
    #[serde(default)]
    pub recurrent_bias: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_head_hidden() -> usize {
    128
}

fn default_dropout() -> f64 {
    0.2
}

impl ModelConfig {
    pub fn new(kind: ModelKind, modalities: &[&str], lookup: usize) -> Self {
        ModelConfig {
            kind,
            modalities: modalities.iter().map(|m| m.to_string()).collect(),
            lookup,
            branch: BranchConfig::default(),
            head_hidden: default_head_hidden(),
            dropout: default_dropout(),
            recurrent_bias: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.branch.validate()?;
        if self.modalities.is_empty() {
            return Err(Error::Config("model needs at least one modality".into()));
        }
        if !self.kind.is_multimodal() && self.modalities.len() != 1 {
            return Err(Error::Config(format!(
                "{} is a single-modality model, got modalities {:?}",
                self.kind, self.modalities
            )));
        }
        let mut seen = self.modalities.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.modalities.len() {
            return Err(Error::Config(format!("duplicate modality in {:?}", self.modalities)));
        }
        if self.lookup == 0 {
            return Err(Error::Config("lookup must be at least 1".into()));
        }
        let convolutional = !matches!(self.kind, ModelKind::Rnn | ModelKind::Gru);
        if convolutional && self.lookup < self.branch.pool_width {
            return Err(Error::Config(format!(
                "lookup {} is shorter than pool width {}",
                self.lookup, self.branch.pool_width
            )));
        }
        if self.head_hidden == 0 {
            return Err(Error::Config("head_hidden must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// Whether the branches end in attention pooling.
    pub fn uses_attention(&self) -> bool {
        match self.kind {
            ModelKind::Hmdlf => self.branch.use_attention,
            ModelKind::CnnGruAttention => true,
            _ => false,
        }
    }

    fn has_fusion_head(&self) -> bool {
        matches!(self.kind, ModelKind::Hmdlf | ModelKind::CnnGru | ModelKind::CnnGruAttention)
    }
}

/// One layer slot in a branch or the head.
#[derive(Debug, Clone)]
pub enum Node {
    Conv1d(Conv1d),
    Relu(Relu),
    MaxPool(MaxPool1d),
    Gru(Gru),
    Rnn(Rnn),
    Attention(Attention),
    LastStep(LastStep),
    Flatten(Flatten),
    Dense(Dense),
    Dropout(Dropout),
}

macro_rules! each_node {
    ($node:expr, $layer:ident => $body:expr) => {
        match $node {
            Node::Conv1d($layer) => $body,
            Node::Relu($layer) => $body,
            Node::MaxPool($layer) => $body,
            Node::Gru($layer) => $body,
            Node::Rnn($layer) => $body,
            Node::Attention($layer) => $body,
            Node::LastStep($layer) => $body,
            Node::Flatten($layer) => $body,
            Node::Dense($layer) => $body,
            Node::Dropout($layer) => $body,
        }
    };
}

impl Node {
    pub fn kind(&self) -> &'static str {
        match self {
            Node::Conv1d(_) => "conv",
            Node::Relu(_) => "relu",
            Node::MaxPool(_) => "pool",
            Node::Gru(_) => "gru",
            Node::Rnn(_) => "rnn",
            Node::Attention(_) => "attention",
            Node::LastStep(_) => "last",
            Node::Flatten(_) => "flatten",
            Node::Dense(_) => "dense",
            Node::Dropout(_) => "dropout",
        }
    }
}

impl Layer for Node {
    fn forward(&mut self, input: &Tensor, training: bool) -> Result<Tensor> {
        each_node!(self, l => l.forward(input, training))
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        each_node!(self, l => l.backward(grad_output))
    }

    fn params(&self) -> Vec<&Param> {
        each_node!(self, l => l.params())
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        each_node!(self, l => l.params_mut())
    }
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub modality: String,
    pub nodes: Vec<Node>,
    output_width: usize,
}

impl Branch {
    fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        let mut h = x.clone();
        for node in &mut self.nodes {
            h = node.forward(&h, training)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for node in self.nodes.iter_mut().rev() {
            g = node.backward(&g)?;
        }
        Ok(g)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    branches: Vec<Branch>,
    head: Vec<Node>,
}

impl Model {
    /// Builds a freshly initialized network. Weights are a pure function of
    /// the configuration (including its seed).
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let branches = config
            .modalities
            .iter()
            .map(|m| build_branch(&config, m, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let fused: usize = branches.iter().map(|b| b.output_width).sum();
        let head = if config.has_fusion_head() {
            vec![
                Node::Dense(Dense::new(fused, config.head_hidden, Activation::Relu, &mut rng)?),
                Node::Dropout(Dropout::new(config.dropout, rng.fork())?),
                Node::Dense(Dense::new(config.head_hidden, 1, Activation::Linear, &mut rng)?),
            ]
        } else {
            vec![Node::Dense(Dense::new(fused, 1, Activation::Linear, &mut rng)?)]
        };
        Ok(Model {
            config,
            branches,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn modalities(&self) -> &[String] {
        &self.config.modalities
    }

    pub fn lookup(&self) -> usize {
        self.config.lookup
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branches_mut(&mut self) -> &mut [Branch] {
        &mut self.branches
    }

    pub fn head(&self) -> &[Node] {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut [Node] {
        &mut self.head
    }

    /// Every trainable tensor with its qualified name, in a fixed order:
    /// branches in modality order, then the head.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for b in &self.branches {
            push_named(&mut out, &b.modality, &b.nodes);
        }
        push_named(&mut out, "head", &self.head);
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }

    /// Same order as [`Model::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for b in &mut self.branches {
            for n in &mut b.nodes {
                out.extend(n.params_mut());
            }
        }
        for n in &mut self.head {
            out.extend(n.params_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Current parameter values, in enumeration order.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Tensor]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(Error::shape(format!(
                "snapshot has {} tensors, model has {}",
                values.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::shape(format!(
                    "snapshot tensor {:?} does not fit {} {:?}",
                    v.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    /// Reseeds the dropout mask generators.
    pub fn reseed_dropout(&mut self, seed: u64) {
        let mut rng = Rng::new(seed);
        for node in self.branches.iter_mut().flat_map(|b| b.nodes.iter_mut()).chain(&mut self.head) {
            if let Node::Dropout(d) = node {
                d.reseed(rng.fork());
            }
        }
    }

    /// Runs the network on one window tensor per modality (`[B, w]` or
    /// `[B, w, 1]`, in [`Model::modalities`] order) and returns `[B]`.
    pub fn forward(&mut self, inputs: &[Tensor], training: bool) -> Result<Tensor> {
        if inputs.len() != self.branches.len() {
            return Err(Error::shape(format!(
                "model expects {} modality inputs ({}), got {}",
                self.branches.len(),
                self.config.modalities.join(", "),
                inputs.len()
            )));
        }
        let batch = self.check_inputs(inputs)?;
        let mut reps = Vec::with_capacity(inputs.len());
        for (branch, x) in self.branches.iter_mut().zip(inputs) {
            let x = x.clone().reshape(&[batch, self.config.lookup, 1])?;
            let r = branch.forward(&x, training)?;
            reps.push(r);
        }
        let mut h = concat_features(&reps, batch)?;
        for node in &mut self.head {
            h = node.forward(&h, training)?;
        }
        h.reshape(&[batch])
    }

    pub fn predict(&mut self, inputs: &[Tensor]) -> Result<Tensor> {
        self.forward(inputs, false)
    }

    /// Backpropagates `d loss / d prediction` (`[B]`), accumulating parameter
    /// gradients. Returns the gradient with respect to each modality input.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Vec<Tensor>> {
        let batch = grad.len();
        let mut g = grad.clone().reshape(&[batch, 1])?;
        for node in self.head.iter_mut().rev() {
            g = node.backward(&g)?;
        }
        let widths: Vec<usize> = self.branches.iter().map(|b| b.output_width).collect();
        let parts = split_features(&g, batch, &widths)?;
        let lookup = self.config.lookup;
        self.branches
            .iter_mut()
            .zip(parts)
            .map(|(b, part)| b.backward(&part)?.reshape(&[batch, lookup]))
            .collect()
    }

    fn check_inputs(&self, inputs: &[Tensor]) -> Result<usize> {
        let mut batch = None;
        for (x, name) in inputs.iter().zip(&self.config.modalities) {
            let (b, w) = match *x.shape() {
                [b, w] | [b, w, 1] => (b, w),
                _ => {
                    return Err(Error::shape(format!(
                        "{name} input must be [batch, window] or [batch, window, 1], got {:?}",
                        x.shape()
                    )))
                }
            };
            if w != self.config.lookup {
                return Err(Error::shape(format!(
                    "{name} window has {w} steps, model lookup is {}",
                    self.config.lookup
                )));
            }
            if *batch.get_or_insert(b) != b {
                return Err(Error::shape(format!(
                    "{name} batch size {b} differs from {}",
                    batch.unwrap_or(0)
                )));
            }
        }
        Ok(batch.unwrap_or(0))
    }
}

fn push_named<'a>(out: &mut Vec<(String, &'a Param)>, prefix: &str, nodes: &'a [Node]) {
    for (i, n) in nodes.iter().enumerate() {
        for p in n.params() {
            out.push((format!("{prefix}/{i}.{}/{}", n.kind(), p.name), p));
        }
    }
}

fn build_branch(config: &ModelConfig, modality: &str, rng: &mut Rng) -> Result<Branch> {
    let bc = &config.branch;
    let h = bc.hidden;
    let bias = config.recurrent_bias;
    let (nodes, output_width) = match config.kind {
        ModelKind::Rnn => (
            vec![Node::Rnn(Rnn::new(1, h, bias, rng)?), Node::LastStep(LastStep::new())],
            h,
        ),
        ModelKind::Gru => (
            vec![Node::Gru(Gru::new(1, h, bias, rng)?), Node::LastStep(LastStep::new())],
            h,
        ),
        ModelKind::Cnn => (
            vec![
                Node::Conv1d(Conv1d::new(bc.kernel_width, 1, bc.conv_filters, rng)?),
                Node::Relu(Relu::new()),
                Node::MaxPool(MaxPool1d::new(bc.pool_width)?),
                Node::Flatten(Flatten::new()),
            ],
            (config.lookup / bc.pool_width) * bc.conv_filters,
        ),
        ModelKind::Hmdlf | ModelKind::CnnGru | ModelKind::CnnGruAttention => {
            let mut nodes = vec![
                Node::Conv1d(Conv1d::new(bc.kernel_width, 1, bc.conv_filters, rng)?),
                Node::Relu(Relu::new()),
                Node::MaxPool(MaxPool1d::new(bc.pool_width)?),
                Node::Gru(Gru::new(bc.conv_filters, h, bias, rng)?),
            ];
            if config.uses_attention() {
                nodes.push(Node::Attention(Attention::new(h, bc.attention_width, rng)?));
            } else {
                nodes.push(Node::LastStep(LastStep::new()));
            }
            (nodes, h)
        }
    };
    Ok(Branch {
        modality: modality.to_string(),
        nodes,
        output_width,
    })
}

/// Builds one of the single-modality reference networks on `modality`.
pub fn build_baseline(kind: ModelKind, modality: &str, template: &ModelConfig) -> Result<Model> {
    if kind == ModelKind::Hmdlf {
        return Err(Error::Config("hmdlf is not a single-modality baseline".into()));
    }
    let mut config = template.clone();
    config.kind = kind;
    config.modalities = vec![modality.to_string()];
    Model::new(config)
}

fn concat_features(parts: &[Tensor], batch: usize) -> Result<Tensor> {
    if parts.len() == 1 {
        return Ok(parts[0].clone());
    }
    let width: usize = parts.iter().map(|p| p.len() / batch.max(1)).sum();
    let mut out = Vec::with_capacity(batch * width);
    for b in 0..batch {
        for p in parts {
            let w = p.len() / batch;
            out.extend_from_slice(&p.data()[b * w..(b + 1) * w]);
        }
    }
    Tensor::new(&[batch, width], out)
}

fn split_features(g: &Tensor, batch: usize, widths: &[usize]) -> Result<Vec<Tensor>> {
    let total: usize = widths.iter().sum();
    if g.shape() != [batch, total] {
        return Err(Error::shape(format!(
            "fused gradient {:?}, expected [{batch}, {total}]",
            g.shape()
        )));
    }
    let mut parts: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(batch * w)).collect();
    for row in g.data().chunks_exact(total.max(1)).take(batch) {
        let mut off = 0;
        for (part, &w) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&row[off..off + w]);
            off += w;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(p, &w)| Tensor::new(&[batch, w], p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(kind: ModelKind, modalities: &[&str]) -> ModelConfig {
        let mut c = ModelConfig::new(kind, modalities, 8);
        c.branch = BranchConfig {
            conv_filters: 3,
            kernel_width: 3,
            pool_width: 2,
            hidden: 4,
            attention_width: 4,
            use_attention: true,
        };
        c.head_hidden = 5;
        c.seed = 17;
        c
    }

    #[test]
    fn gru_baseline_parameter_count() {
        let h = 128;
        let model = Model::new(ModelConfig::new(ModelKind::Gru, &["flow"], 20)).unwrap();
        assert_eq!(model.param_count(), 3 * (h + 1) * h + h + 1);
    }

    #[test]
    fn every_param_enumerated_once() {
        let model = Model::new(toy(ModelKind::Hmdlf, &["flow", "speed", "journey_time"])).unwrap();
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        // conv(2) + gru(3) + attention(3) per branch, 2 dense layers x 2 in the head
        assert_eq!(names.len(), 3 * 8 + 4);
        assert_eq!(names[0], "flow/0.conv/kernel");
    }

    #[test]
    fn zero_weights_collapse_to_final_bias() {
        let mut model = Model::new(toy(ModelKind::Hmdlf, &["flow", "speed"])).unwrap();
        for p in model.params_mut() {
            p.value.fill(0.0);
        }
        if let Some(Node::Dense(_)) = model.head.last() {
            let last = model.params_mut().pop().unwrap();
            last.value.fill(0.37);
        }
        let x = Rng::new(1).uniform_tensor(&[1, 8], 0.0, 1.0);
        let y = model.predict(&[x.clone(), x]).unwrap();
        assert_eq!(y.data(), &[0.37]);
    }

    #[test]
    fn degenerate_single_step_without_attention() {
        let mut c = toy(ModelKind::Hmdlf, &["flow"]);
        c.lookup = 2;
        c.branch.use_attention = false;
        let mut model = Model::new(c).unwrap();
        let y = model.predict(&[Tensor::new(&[3, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap()]).unwrap();
        assert_eq!(y.shape(), &[3]);
        assert!(y.all_finite());
        assert!(model.branches()[0].nodes.iter().all(|n| !matches!(n, Node::Attention(_))));
    }

    #[test]
    fn baselines_share_multimodal_construction() {
        let c = toy(ModelKind::Hmdlf, &["flow"]);
        let mut hm = Model::new(c.clone()).unwrap();
        let mut base = build_baseline(ModelKind::CnnGruAttention, "flow", &c).unwrap();
        let x = Rng::new(4).uniform_tensor(&[5, 8], 0.0, 1.0);
        assert_eq!(hm.predict(&[x.clone()]).unwrap(), base.predict(&[x]).unwrap());
    }

    #[test]
    fn all_kinds_predict_finite_values() {
        let x = Rng::new(6).uniform_tensor(&[4, 8], 0.0, 1.0);
        for kind in ModelKind::ALL {
            let mut model = Model::new(toy(kind, &["flow"])).unwrap();
            let y = model.predict(&[x.clone()]).unwrap();
            assert_eq!(y.shape(), &[4], "{kind}");
            assert!(y.all_finite(), "{kind}");
        }
    }

    #[test]
    fn input_validation() {
        let mut model = Model::new(toy(ModelKind::Hmdlf, &["flow", "speed"])).unwrap();
        let x = Tensor::zeros(&[2, 8]);
        assert!(matches!(model.predict(&[x.clone()]), Err(Error::Shape(_))));
        assert!(matches!(model.predict(&[x.clone(), Tensor::zeros(&[3, 8])]), Err(Error::Shape(_))));
        assert!(matches!(model.predict(&[x, Tensor::zeros(&[2, 7])]), Err(Error::Shape(_))));
        assert!(Model::new(toy(ModelKind::Gru, &["flow", "speed"])).is_err());
        assert!("lstm".parse::<ModelKind>().is_err());
    }
}
