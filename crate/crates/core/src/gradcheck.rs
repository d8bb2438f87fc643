//! Finite-difference verification of every backward pass.
//!
//! Each layer is reduced to a scalar `f(x, θ) = ⟨forward(x), P⟩` with a fixed
//! random projection `P`, so `backward(P)` must reproduce `∂f/∂x` and every
//! `∂f/∂θ`. Layers are cloned for each probe; clones carry the same dropout
//! generator state, so training-mode masks repeat across probes.

use std::fmt;

use serde::Serialize;

use crate::error::Result;
use crate::layers::{Activation, Attention, Conv1d, Dense, Dropout, Gru, Layer, MaxPool1d, Relu, Rnn};
use crate::model::{loss, mse_gradient, BranchConfig, Model, ModelConfig, ModelKind};
use crate::tensor::{fd_gradient, max_relative_error, Rng, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const FLOOR: f64 = 1e-8;
pub const SEEDS: [u64; 3] = [11, 23, 47];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Conv1d,
    Relu,
    Maxpool,
    Dense,
    Dropout,
    Rnn,
    Gru,
    Attention,
    EndToEnd,
}

impl Component {
    pub const ALL: [Component; 9] = [
        Component::Conv1d,
        Component::Relu,
        Component::Maxpool,
        Component::Dense,
        Component::Dropout,
        Component::Rnn,
        Component::Gru,
        Component::Attention,
        Component::EndToEnd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Conv1d => "conv1d",
            Component::Relu => "relu",
            Component::Maxpool => "maxpool",
            Component::Dense => "dense",
            Component::Dropout => "dropout",
            Component::Rnn => "rnn",
            Component::Gru => "gru",
            Component::Attention => "attention",
            Component::EndToEnd => "hmdlf_end_to_end",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct Options {
    pub seeds: Vec<u64>,
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
    /// Test hook: perturbs the analytic gradients of one component so the
    /// suite can be shown to catch a broken backward pass.
    pub corrupt: Option<Component>,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            seeds: SEEDS.to_vec(),
            step: STEP,
            tolerance: TOLERANCE,
            floor: FLOOR,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub component: Component,
    pub max_rel_error: f64,
    /// Gradient entries compared, over all seeds.
    pub entries: usize,
    pub passed: bool,
}

pub fn run(options: &Options) -> Result<Vec<Row>> {
    Component::ALL.iter().map(|&c| check_component(c, options)).collect()
}

pub fn check_component(component: Component, options: &Options) -> Result<Row> {
    let mut worst = 0.0f64;
    let mut entries = 0;
    for &seed in &options.seeds {
        let (err, n) = check_once(component, seed, options)?;
        worst = worst.max(err);
        entries += n;
    }
    Ok(Row {
        component,
        max_rel_error: worst,
        entries,
        passed: worst < options.tolerance,
    })
}

fn check_once(component: Component, seed: u64, o: &Options) -> Result<(f64, usize)> {
    let mut rng = Rng::new(seed);
    let corrupt = o.corrupt == Some(component);
    match component {
        Component::Conv1d => {
            let layer = Conv1d::new(3, 2, 3, &mut rng)?;
            let layer = with_random_bias(layer, &mut rng);
            let x = rng.uniform_tensor(&[2, 7, 2], -1.0, 1.0);
            check_layer(&layer, &x, true, &mut rng, o, corrupt)
        }
        Component::Relu => {
            let x = rng.uniform_tensor(&[2, 6, 3], -1.0, 1.0);
            check_layer(&Relu::new(), &x, true, &mut rng, o, corrupt)
        }
        Component::Maxpool => {
            let x = rng.uniform_tensor(&[2, 7, 3], -1.0, 1.0);
            check_layer(&MaxPool1d::new(2)?, &x, true, &mut rng, o, corrupt)
        }
        Component::Dense => {
            let mut worst = (0.0, 0);
            for act in [Activation::Linear, Activation::Tanh, Activation::Relu] {
                let layer = with_random_bias(Dense::new(4, 5, act, &mut rng)?, &mut rng);
                let x = rng.uniform_tensor(&[3, 4], -1.0, 1.0);
                worst = merge(worst, check_layer(&layer, &x, true, &mut rng, o, corrupt)?);
            }
            Ok(worst)
        }
        Component::Dropout => {
            let x = rng.uniform_tensor(&[3, 5], -1.0, 1.0);
            let layer = Dropout::new(0.3, rng.fork())?;
            let train = check_layer(&layer, &x, true, &mut rng, o, corrupt)?;
            let eval = check_layer(&layer, &x, false, &mut rng, o, corrupt)?;
            Ok(merge(train, eval))
        }
        Component::Rnn => {
            let layer = with_random_bias(Rnn::new(3, 4, true, &mut rng)?, &mut rng);
            let x = rng.uniform_tensor(&[2, 5, 3], -1.0, 1.0);
            check_layer(&layer, &x, true, &mut rng, o, corrupt)
        }
        Component::Gru => {
            let layer = with_random_bias(Gru::new(3, 4, true, &mut rng)?, &mut rng);
            let x = rng.uniform_tensor(&[2, 5, 3], -1.0, 1.0);
            check_layer(&layer, &x, true, &mut rng, o, corrupt)
        }
        Component::Attention => {
            let layer = with_random_bias(Attention::new(3, 4, &mut rng)?, &mut rng);
            let x = rng.uniform_tensor(&[2, 4, 3], -1.0, 1.0);
            check_layer(&layer, &x, true, &mut rng, o, corrupt)
        }
        Component::EndToEnd => check_end_to_end(seed, o, corrupt),
    }
}

fn merge(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    (a.0.max(b.0), a.1 + b.1)
}

/// Zero-initialized biases would leave their gradient paths untested at the
/// origin; give them random values.
fn with_random_bias<L: Layer>(mut layer: L, rng: &mut Rng) -> L {
    for p in layer.params_mut().into_iter().filter(|p| !p.decay) {
        p.value = rng.uniform_tensor(p.value.shape(), -0.5, 0.5);
    }
    layer
}

fn check_layer<L: Layer + Clone>(
    layer: &L,
    x: &Tensor,
    training: bool,
    rng: &mut Rng,
    o: &Options,
    corrupt: bool,
) -> Result<(f64, usize)> {
    let mut probe = layer.clone();
    let out_shape = probe.forward(x, training)?.shape().to_vec();
    let proj = rng.uniform_tensor(&out_shape, -1.0, 1.0);

    let mut analytic = layer.clone();
    analytic.zero_grad();
    analytic.forward(x, training)?;
    let mut dx = analytic.backward(&proj)?;
    let mut grads: Vec<Tensor> = analytic.params().iter().map(|p| p.grad.clone()).collect();
    if corrupt {
        dx = dx.scale(1.1);
        grads = grads.iter().map(|g| g.scale(1.1)).collect();
    }

    let objective = |l: &mut L, input: &Tensor| -> Result<f64> { l.forward(input, training)?.dot(&proj) };
    let num_dx = fd_gradient(|xx| objective(&mut layer.clone(), xx), x, o.step)?;
    let mut worst = max_relative_error(&dx, &num_dx, o.floor)?;
    let mut count = dx.len();
    for (i, g) in grads.iter().enumerate() {
        let base = layer.params()[i].value.clone();
        let num = fd_gradient(
            |v| {
                let mut l = layer.clone();
                l.params_mut()[i].value = v.clone();
                objective(&mut l, x)
            },
            &base,
            o.step,
        )?;
        worst = worst.max(max_relative_error(g, &num, o.floor)?);
        count += g.len();
    }
    Ok((worst, count))
}

/// Small two-modality network used for the end-to-end check.
pub fn toy_config(seed: u64) -> ModelConfig {
    ModelConfig {
        kind: ModelKind::Hmdlf,
        modalities: vec!["flow".into(), "speed".into()],
        lookup: 8,
        branch: BranchConfig {
            conv_filters: 3,
            kernel_width: 3,
            pool_width: 2,
            hidden: 4,
            attention_width: 4,
            use_attention: true,
        },
        head_hidden: 5,
        dropout: 0.2,
        recurrent_bias: true,
        seed,
    }
}

fn check_end_to_end(seed: u64, o: &Options, corrupt: bool) -> Result<(f64, usize)> {
    const LAMBDA: f64 = 0.01;
    let mut model = Model::new(toy_config(seed))?;
    let mut rng = Rng::new(seed ^ 0x5eed);
    for p in model.params_mut().into_iter().filter(|p| !p.decay) {
        p.value = rng.uniform_tensor(p.value.shape(), -0.3, 0.3);
    }
    let inputs = vec![
        rng.uniform_tensor(&[2, 8], 0.0, 1.0),
        rng.uniform_tensor(&[2, 8], 0.0, 1.0),
    ];
    let target = rng.uniform_tensor(&[2], 0.0, 1.0);

    let objective = |m: &mut Model, xs: &[Tensor]| -> Result<f64> {
        let pred = m.forward(xs, true)?;
        Ok(loss(&pred, &target, &m.params(), LAMBDA)?.total)
    };

    let mut analytic = model.clone();
    analytic.zero_grad();
    let pred = analytic.forward(&inputs, true)?;
    let mut dxs = analytic.backward(&mse_gradient(&pred, &target)?)?;
    let mut grads: Vec<Tensor> = analytic
        .params()
        .iter()
        .map(|p| {
            if p.decay {
                p.grad.add(&p.value.scale(LAMBDA))
            } else {
                Ok(p.grad.clone())
            }
        })
        .collect::<Result<_>>()?;
    if corrupt {
        dxs = dxs.iter().map(|g| g.scale(1.1)).collect();
        grads = grads.iter().map(|g| g.scale(1.1)).collect();
    }

    let mut worst = 0.0f64;
    let mut count = 0;
    for (m, dx) in dxs.iter().enumerate() {
        let num = fd_gradient(
            |xm| {
                let mut xs = inputs.clone();
                xs[m] = xm.clone();
                objective(&mut model.clone(), &xs)
            },
            &inputs[m],
            o.step,
        )?;
        worst = worst.max(max_relative_error(dx, &num, o.floor)?);
        count += dx.len();
    }
    for (i, g) in grads.iter().enumerate() {
        let base = model.params()[i].value.clone();
        let num = fd_gradient(
            |v| {
                let mut m = model.clone();
                m.params_mut()[i].value = v.clone();
                objective(&mut m, &inputs)
            },
            &base,
            o.step,
        )?;
        worst = worst.max(max_relative_error(g, &num, o.floor)?);
        count += g.len();
    }
    Ok((worst, count))
}
