//! Small fully connected two-head network trained with the squared max-hinge
//! loss, optionally against an inner PGD adversary.
//!
//! The trunk is shared; the last layer has two outputs, `f` (index 0) and
//! `r` (index 1). Gradients are computed by hand-written backpropagation.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackMethod, AttackSpec, Candidate, LossOracle, WorstCase};
use crate::error::{AtroError, Result};
use crate::eval::{metrics, EvalReport, RejectConfusion};
use crate::ingest::{Dataset, Label, NormStats};
use crate::linalg::add;
use crate::loss::{self, SurrogateParams};
use crate::model::Decision;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation value `a`.
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[o]
            })
            .collect()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyNet {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<Layer>,
    /// Input normalization fitted at training time; metadata only, `forward` does not apply it.
    #[serde(default)]
    pub norm_stats: Option<NormStats>,
}

/// Parameter gradient, laid out like [`ToyNet::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrad {
    pub layers: Vec<Layer>,
}

impl NetGrad {
    /// Flattened in the order of [`ToyNet::param`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    fn add_scaled(&mut self, other: &NetGrad, s: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += s * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += s * y;
            }
        }
    }
}

impl ToyNet {
    pub fn zeros(input_dim: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden.iter().chain(std::iter::once(&2)) {
            layers.push(Layer::zeros(prev, h));
            prev = h;
        }
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            activation,
            layers,
            norm_stats: None,
        }
    }

    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn new(input_dim: usize, hidden: &[usize], activation: Activation, seed_value: u64) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(AtroError::config("net.hidden", "layer sizes must be positive"));
        }
        let mut net = Self::zeros(input_dim, hidden, activation);
        let mut rng = seed::rng(seed_value);
        for layer in &mut net.layers {
            let normal = Normal::new(0.0, 1.0 / (layer.inputs as f64).sqrt()).expect("positive std");
            for w in &mut layer.weights {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn locate(&self, mut i: usize) -> (usize, bool, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            if i < l.weights.len() {
                return (li, true, i);
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return (li, false, i);
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    /// Flat parameter access: per layer, weights then biases.
    pub fn param(&self, i: usize) -> f64 {
        let (l, w, k) = self.locate(i);
        if w {
            self.layers[l].weights[k]
        } else {
            self.layers[l].bias[k]
        }
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        let (l, w, k) = self.locate(i);
        if w {
            self.layers[l].weights[k] = v;
        } else {
            self.layers[l].bias[k] = v;
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(AtroError::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Activations of every layer; the last entry is the raw `(f, r)` output.
    fn forward_cache(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(acts.last().expect("non-empty"));
            acts.push(if li == last {
                z
            } else {
                z.into_iter().map(|v| self.activation.apply(v)).collect()
            });
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_input(x)?;
        let out = self.forward_cache(x).pop().expect("output layer");
        Ok((out[0], out[1]))
    }

    pub fn decide(&self, x: &[f64]) -> Result<Decision> {
        let (f, r) = self.forward(x)?;
        Ok(Decision::from_scores(f, r))
    }

    /// Backpropagates `∂L/∂(f, r) = g_out`. Parameter gradients are skipped
    /// when `want_params` is false.
    fn backward(&self, acts: &[Vec<f64>], g_out: [f64; 2], want_params: bool) -> (Option<NetGrad>, Vec<f64>) {
        let mut grads = want_params.then(|| NetGrad {
            layers: self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
        });
        let mut delta = g_out.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &acts[li];
            if let Some(g) = grads.as_mut() {
                let gl = &mut g.layers[li];
                for o in 0..layer.outputs {
                    gl.bias[o] = delta[o];
                    let row = &mut gl.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (w, a) in row.iter_mut().zip(input) {
                        *w = delta[o] * a;
                    }
                }
            }
            let mut back = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (b, w) in back.iter_mut().zip(row) {
                    *b += delta[o] * w;
                }
            }
            if li > 0 {
                for (b, a) in back.iter_mut().zip(input) {
                    *b *= self.activation.slope(*a);
                }
            }
            delta = back;
        }
        (grads, delta)
    }

    fn top_f_weights(&self) -> &[f64] {
        let top = self.layers.last().expect("output layer");
        &top.weights[..top.inputs]
    }
}

/// Squared max-hinge loss with weight decay on the `f` row of the top layer:
/// `max(1 + (α/2)(r − y·f), c(1 − β·r), 0)² + (λ_w/2)‖w_f‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquaredMh {
    pub params: SurrogateParams,
    pub lambda_w: f64,
}

/// Which branch of the max is active, with ties going to the classification branch.
fn active_branch(f: f64, r: f64, y: Label, p: &SurrogateParams) -> (f64, [f64; 2]) {
    let (a, b) = loss::mh_branches(f, r, y, p);
    let m = a.max(b).max(0.0);
    if m <= 0.0 {
        (0.0, [0.0, 0.0])
    } else if a >= b {
        (m, [-p.alpha / 2.0 * y.value(), p.alpha / 2.0])
    } else {
        (m, [0.0, -p.c * p.beta])
    }
}

impl SquaredMh {
    fn regularizer(&self, net: &ToyNet) -> f64 {
        self.lambda_w / 2.0 * net.top_f_weights().iter().map(|w| w * w).sum::<f64>()
    }

    pub fn value(&self, net: &ToyNet, x: &[f64], y: Label) -> Result<f64> {
        let (f, r) = net.forward(x)?;
        let mh = loss::loss_mh(f, r, y, &self.params);
        let v = mh * mh + self.regularizer(net);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(AtroError::NonFinite("network loss".into()))
        }
    }

    fn output_grad(&self, out: &[f64], y: Label) -> [f64; 2] {
        let (m, dm) = active_branch(out[0], out[1], y, &self.params);
        [2.0 * m * dm[0], 2.0 * m * dm[1]]
    }
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(AtroError::NonFinite(what.into()))
    }
}

pub fn grad_params(net: &ToyNet, x: &[f64], y: Label, l: &SquaredMh) -> Result<NetGrad> {
    net.check_input(x)?;
    let acts = net.forward_cache(x);
    check_finite(acts.last().expect("output"), "network output")?;
    let g_out = l.output_grad(acts.last().expect("output"), y);
    let (grads, _) = net.backward(&acts, g_out, true);
    let mut grads = grads.expect("requested");
    let top = grads.layers.last_mut().expect("output layer");
    for (g, w) in top.weights[..top.inputs].iter_mut().zip(net.top_f_weights()) {
        *g += l.lambda_w * w;
    }
    check_finite(&grads.flat(), "parameter gradient")?;
    Ok(grads)
}

pub fn grad_input(net: &ToyNet, x: &[f64], y: Label, l: &SquaredMh) -> Result<Vec<f64>> {
    net.check_input(x)?;
    let acts = net.forward_cache(x);
    check_finite(acts.last().expect("output"), "network output")?;
    let g_out = l.output_grad(acts.last().expect("output"), y);
    let (_, gx) = net.backward(&acts, g_out, false);
    check_finite(&gx, "input gradient")?;
    Ok(gx)
}

/// Objective an attacker ascends on a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NetObjective {
    SquaredMh(SquaredMh),
    /// `−y·f`: pushes toward misclassification.
    Classifier,
    /// `−r`: pushes toward rejection.
    Rejector,
}

pub struct NetOracle<'a> {
    pub net: &'a ToyNet,
    pub y: Label,
    pub objective: NetObjective,
}

impl LossOracle for NetOracle<'_> {
    fn loss(&self, x: &[f64]) -> f64 {
        let out = self.net.forward_cache(x).pop().expect("output");
        match self.objective {
            NetObjective::SquaredMh(l) => {
                let mh = loss::loss_mh(out[0], out[1], self.y, &l.params);
                mh * mh
            }
            NetObjective::Classifier => -self.y.value() * out[0],
            NetObjective::Rejector => -out[1],
        }
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let acts = self.net.forward_cache(x);
        let out = acts.last().expect("output");
        let g_out = match self.objective {
            NetObjective::SquaredMh(l) => l.output_grad(out, self.y),
            NetObjective::Classifier => [-self.y.value(), 0.0],
            NetObjective::Rejector => [0.0, -1.0],
        };
        self.net.backward(&acts, g_out, false).1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuralTrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
    pub lambda_w: f64,
    /// Inner adversary; method must be `none` or `pgd`.
    pub attack: AttackSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for NeuralTrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            c: 0.3,
            lambda_w: 1e-3,
            attack: AttackSpec::none(),
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            seed: 0,
        }
    }
}

impl NeuralTrainConfig {
    pub fn params(&self) -> SurrogateParams {
        SurrogateParams {
            alpha: self.alpha,
            beta: self.beta,
            c: self.c,
        }
    }

    pub fn loss(&self) -> SquaredMh {
        SquaredMh {
            params: self.params(),
            lambda_w: self.lambda_w,
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        self.params().validate(prefix)?;
        if !(self.lambda_w >= 0.0 && self.lambda_w.is_finite()) {
            return Err(AtroError::config(format!("{prefix}lambda_w"), "must be non-negative"));
        }
        if !matches!(self.attack.method, AttackMethod::None | AttackMethod::Pgd) {
            return Err(AtroError::config(
                format!("{prefix}attack.method"),
                "must be none or pgd",
            ));
        }
        self.attack.validate(&format!("{prefix}attack."))?;
        if self.epochs == 0 {
            return Err(AtroError::config(format!("{prefix}epochs"), "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(AtroError::config(format!("{prefix}batch_size"), "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AtroError::config(format!("{prefix}learning_rate"), "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(AtroError::config(format!("{prefix}momentum"), "must lie in [0, 1)"));
        }
        if self.hidden.contains(&0) {
            return Err(AtroError::config(
                format!("{prefix}hidden"),
                "layer sizes must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralTrace {
    /// Mean training loss at the (possibly perturbed) inputs, per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Input the outer step is taken at: `x` itself, or the inner PGD maximizer
/// of the squared max-hinge loss.
fn training_point(net: &ToyNet, x: &[f64], y: Label, cfg: &NeuralTrainConfig, attack_seed: u64) -> Result<Vec<f64>> {
    if cfg.attack.method == AttackMethod::None {
        return Ok(x.to_vec());
    }
    let oracle = NetOracle {
        net,
        y,
        objective: NetObjective::SquaredMh(cfg.loss()),
    };
    let spec = AttackSpec {
        random_start: cfg.attack.random_start.map(|_| attack_seed),
        ..cfg.attack
    };
    let p = attack::pgd(&oracle, x, &spec)?;
    Ok(add(x, &p.delta))
}

/// Minibatch SGD with momentum on the (adversarial) squared max-hinge loss.
pub fn train_neural(ds: &Dataset, cfg: &NeuralTrainConfig) -> Result<(ToyNet, NeuralTrace)> {
    cfg.validate("neural.")?;
    if ds.is_empty() {
        return Err(AtroError::EmptyDataset);
    }
    let seeds = seed::RunSeeds::from_master(cfg.seed);
    let mut net = ToyNet::new(ds.d, &cfg.hidden, cfg.activation, seeds.init)?;
    let l = cfg.loss();
    let mut velocity = NetGrad {
        layers: net.layers.iter().map(|x| Layer::zeros(x.inputs, x.outputs)).collect(),
    };
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = seed::rng(seeds.split);
    let mut trace = NeuralTrace {
        epoch_loss: Vec::with_capacity(cfg.epochs),
    };
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = NetGrad {
                layers: net.layers.iter().map(|x| Layer::zeros(x.inputs, x.outputs)).collect(),
            };
            for &i in batch {
                let s = &ds.samples[i];
                let tag = (epoch * ds.len() + i) as u64;
                let x_adv = training_point(&net, &s.x, s.y, cfg, seed::derive_indexed(seeds.attack, "pgd", tag))?;
                let v = l.value(&net, &x_adv, s.y).map_err(|_| AtroError::Diverged {
                    step,
                    rate: cfg.learning_rate,
                })?;
                epoch_sum += v;
                g.add_scaled(&grad_params(&net, &x_adv, s.y, &l)?, 1.0 / batch.len() as f64);
            }
            for (vl, gl) in velocity.layers.iter_mut().zip(&g.layers) {
                for (v, gv) in vl.weights.iter_mut().zip(&gl.weights) {
                    *v = cfg.momentum * *v - cfg.learning_rate * gv;
                }
                for (v, gv) in vl.bias.iter_mut().zip(&gl.bias) {
                    *v = cfg.momentum * *v - cfg.learning_rate * gv;
                }
            }
            for (nl, vl) in net.layers.iter_mut().zip(&velocity.layers) {
                for (w, v) in nl.weights.iter_mut().zip(&vl.weights) {
                    *w += v;
                }
                for (b, v) in nl.bias.iter_mut().zip(&vl.bias) {
                    *b += v;
                }
            }
            step += 1;
        }
        let mean_loss = epoch_sum / ds.len() as f64;
        if !mean_loss.is_finite() {
            return Err(AtroError::Diverged {
                step,
                rate: cfg.learning_rate,
            });
        }
        trace.epoch_loss.push(mean_loss);
    }
    Ok((net, trace))
}

/// What a test-time attacker on a network ascends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetAttackGoal {
    /// `−y·f` only: untargeted misclassification.
    Misclassify,
    /// The squared max-hinge training loss.
    Surrogate,
    /// Worst 0-1-c over `−y·f`, `−r` and the surrogate.
    #[default]
    WorstOf,
}

impl NetAttackGoal {
    fn objectives(self, p: &SurrogateParams) -> Vec<(NetObjective, Candidate)> {
        let surrogate = (
            NetObjective::SquaredMh(SquaredMh {
                params: *p,
                lambda_w: 0.0,
            }),
            Candidate::Pgd,
        );
        match self {
            NetAttackGoal::Misclassify => vec![(NetObjective::Classifier, Candidate::ClassifierTerm)],
            NetAttackGoal::Surrogate => vec![surrogate],
            NetAttackGoal::WorstOf => vec![
                (NetObjective::Classifier, Candidate::ClassifierTerm),
                (NetObjective::Rejector, Candidate::RejectorTerm),
                surrogate,
            ],
        }
    }
}

/// Worst 0-1-c loss over the clean point and gradient attacks on the
/// objectives of `goal`. Earlier candidates win ties.
pub fn worst_case_net(
    net: &ToyNet,
    x: &[f64],
    y: Label,
    spec: &AttackSpec,
    p: &SurrogateParams,
    goal: NetAttackGoal,
) -> Result<WorstCase> {
    net.check_input(x)?;
    let score = |delta: &[f64]| -> Result<f64> {
        let (f, r) = net.forward(&add(x, delta))?;
        Ok(loss::loss_01c_unchecked(f, r, y, p.c))
    };
    let zero = vec![0.0; x.len()];
    let mut best = WorstCase {
        loss: score(&zero)?,
        winner: Candidate::Clean,
        delta: zero,
    };
    if spec.method == AttackMethod::None || spec.eps == 0.0 {
        return Ok(best);
    }
    for (objective, who) in goal.objectives(p) {
        let oracle = NetOracle { net, y, objective };
        let delta = match spec.method {
            AttackMethod::Fgsm => attack::fgsm(&oracle, x, spec.eps)?.delta,
            _ => {
                let s = AttackSpec {
                    method: AttackMethod::Pgd,
                    ..*spec
                };
                attack::pgd(&oracle, x, &s)?.delta
            }
        };
        let l = score(&delta)?;
        if l > best.loss {
            best = WorstCase {
                loss: l,
                winner: who,
                delta,
            };
        }
    }
    Ok(best)
}

/// Rejection-aware report for a network under `spec`, attacks taken in input space.
pub fn evaluate_net(
    net: &ToyNet,
    ds: &Dataset,
    spec: &AttackSpec,
    p: &SurrogateParams,
    goal: NetAttackGoal,
) -> Result<EvalReport> {
    spec.validate("attack.")?;
    p.validate("")?;
    if ds.is_empty() {
        return Err(AtroError::EmptyDataset);
    }
    let mut counts = RejectConfusion::default();
    let mut wins = std::collections::BTreeMap::new();
    let (mut loss_sum, mut clean_sum) = (0.0, 0.0);
    for s in &ds.samples {
        let (f0, r0) = net.forward(&s.x)?;
        clean_sum += loss::loss_01c_unchecked(f0, r0, s.y, p.c);
        let worst = worst_case_net(net, &s.x, s.y, spec, p, goal)?;
        loss_sum += worst.loss;
        *wins.entry(worst.winner).or_insert(0) += 1;
        let d = net.decide(&add(&s.x, &worst.delta))?;
        let wrong = d.classifier_label() != s.y;
        match (d.is_reject(), wrong) {
            (true, true) => counts.tr += 1,
            (true, false) => counts.fr += 1,
            (false, false) => counts.ta += 1,
            (false, true) => counts.fa += 1,
        }
    }
    let mt = metrics(&counts)?;
    let n = ds.len() as f64;
    Ok(EvalReport {
        err: mt.err,
        rej: mt.rej,
        pr: mt.pr,
        counts,
        attack: *spec,
        wins,
        mean_loss_01c: loss_sum / n,
        clean_mean_loss_01c: clean_sum / n,
    })
}
