//! Training linear `(f, r)` pairs.
//!
//! The regularized problem
//!
//! ```text
//! min  λ/2‖θ‖² + λ′/2‖γ‖² + Σᵢ max(Ãᵢ, B̃ᵢ, 0)
//! ```
//!
//! is convex and piecewise linear plus quadratic, so it is minimized directly
//! by full-batch subgradient descent with `ηₜ = η₀/√(t+1)`. Descent runs on the
//! objective divided by `n` (same minimizer, step sizes independent of sample
//! count); the trace records the undivided objective. Kinks take the zero
//! element of the subdifferential: `sgn(0) = 0` and an inactive hinge
//! contributes nothing. Ties between the two max-hinge branches go to the
//! classification branch.
//!
//! Modes without rejection (`svm`, `at`) train only `γ` on the hinge
//! `max(0, 1 − y·f + ε‖γ‖₁)` and fix the rejector at `r ≡ 1`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attack::{worst_case_01c, WorstCaseMode};
use crate::error::{AtroError, Result};
use crate::ingest::{self, Dataset, Label};
use crate::linalg::{l2, pairwise_sum, sgn};
use crate::loss::{self, SurrogateParams};
use crate::model::{FeatureMap, FeatureMapSpec, RejectionModel};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Hinge loss, no attack, no rejection.
    Svm,
    /// Adversarial hinge loss, no rejection.
    At,
    /// Max-hinge loss with rejection, no attack.
    Mh,
    /// Adversarial max-hinge loss with rejection.
    #[default]
    Atro,
}

impl TrainMode {
    pub fn has_rejection(self) -> bool {
        matches!(self, TrainMode::Mh | TrainMode::Atro)
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Svm => "SVM",
            TrainMode::At => "AT",
            TrainMode::Mh => "MH",
            TrainMode::Atro => "ATRO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepDecay {
    /// `η₀/√(t+1)`
    #[default]
    InvSqrt,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
    /// Training radius ε.
    pub eps: f64,
    /// ℓ2 penalty on θ.
    pub lambda: f64,
    /// ℓ2 penalty on γ.
    pub lambda_prime: f64,
    pub epochs: usize,
    pub eta0: f64,
    pub decay: StepDecay,
    pub feature_map: FeatureMapSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Atro,
            alpha: 1.0,
            beta: 1.0,
            c: 0.3,
            eps: 0.0,
            lambda: 1e-3,
            lambda_prime: 1e-3,
            epochs: 2000,
            eta0: 0.1,
            decay: StepDecay::InvSqrt,
            feature_map: FeatureMapSpec::Identity,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn params(&self) -> SurrogateParams {
        SurrogateParams {
            alpha: self.alpha,
            beta: self.beta,
            c: self.c,
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        self.params().validate(prefix)?;
        let path = |f: &str| format!("{prefix}{f}");
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(AtroError::config(path("eps"), "must be non-negative"));
        }
        if matches!(self.mode, TrainMode::Svm | TrainMode::Mh) && self.eps != 0.0 {
            return Err(AtroError::config(
                path("eps"),
                format!("must be 0 in {} mode", self.mode.name()),
            ));
        }
        for (name, v) in [("lambda", self.lambda), ("lambda_prime", self.lambda_prime)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(AtroError::config(path(name), "must be non-negative"));
            }
        }
        if self.epochs == 0 {
            return Err(AtroError::config(path("epochs"), "must be positive"));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(AtroError::config(path("eta0"), "must be positive"));
        }
        if let FeatureMapSpec::RandomFourier { dim, bandwidth, .. } = self.feature_map {
            if dim == 0 {
                return Err(AtroError::config(path("feature_map.dim"), "must be positive"));
            }
            if !(bandwidth > 0.0 && bandwidth.is_finite()) {
                return Err(AtroError::config(path("feature_map.bandwidth"), "must be positive"));
            }
        }
        Ok(())
    }

    pub fn build_feature_map(&self, input_dim: usize) -> Result<FeatureMap> {
        self.feature_map
            .build(input_dim, seed::derive(self.seed, "feature-map"))
    }

    fn rate(&self, t: usize) -> f64 {
        match self.decay {
            StepDecay::InvSqrt => self.eta0 / ((t + 1) as f64).sqrt(),
            StepDecay::Constant => self.eta0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub objective: Vec<f64>,
    pub best: Vec<f64>,
    pub theta_norm: Vec<f64>,
    pub gamma_norm: Vec<f64>,
}

impl TrainTrace {
    pub fn best_objective(&self) -> f64 {
        self.best.last().copied().unwrap_or(f64::INFINITY)
    }

    /// `epoch,objective,best` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,objective,best\n");
        for (i, (o, b)) in self.objective.iter().zip(&self.best).enumerate() {
            let _ = writeln!(out, "{i},{o},{b}");
        }
        out
    }
}

/// Featurized training set.
pub(crate) struct Features {
    pub phi: Vec<Vec<f64>>,
    pub y: Vec<Label>,
}

impl Features {
    pub fn new(fm: &FeatureMap, ds: &Dataset) -> Result<Self> {
        let phi = ds
            .samples
            .iter()
            .map(|s| fm.featurize(&s.x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            phi,
            y: ds.samples.iter().map(|s| s.y).collect(),
        })
    }
}

fn sample_loss(m: &RejectionModel, phi: &[f64], y: Label, cfg: &TrainConfig, p: &SurrogateParams) -> f64 {
    match cfg.mode {
        TrainMode::Atro | TrainMode::Mh => loss::adv_terms_unchecked(m, phi, y, cfg.eps, p).loss(),
        TrainMode::At | TrainMode::Svm => loss::adv_hinge_linear(m, phi, y, cfg.eps),
    }
}

fn regularizer(m: &RejectionModel, cfg: &TrainConfig) -> f64 {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let gamma_term = cfg.lambda_prime / 2.0 * sq(&m.gamma);
    if cfg.mode.has_rejection() {
        cfg.lambda / 2.0 * sq(&m.theta) + gamma_term
    } else {
        gamma_term
    }
}

fn objective_features(m: &RejectionModel, data: &Features, cfg: &TrainConfig) -> f64 {
    let p = cfg.params();
    let losses: Vec<f64> = data
        .phi
        .iter()
        .zip(&data.y)
        .map(|(phi, y)| sample_loss(m, phi, *y, cfg, &p))
        .collect();
    regularizer(m, cfg) + pairwise_sum(&losses)
}

/// The regularized training objective (a sum over samples, not a mean).
pub fn objective(m: &RejectionModel, ds: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    cfg.validate("train.")?;
    if ds.is_empty() {
        return Err(AtroError::EmptyDataset);
    }
    let data = Features::new(&m.feature_map, ds)?;
    Ok(objective_features(m, &data, cfg))
}

struct Grad {
    theta: Vec<f64>,
    gamma: Vec<f64>,
    bias_theta: f64,
    bias_gamma: f64,
}

fn subgradient(m: &RejectionModel, data: &Features, cfg: &TrainConfig) -> Grad {
    let dim = m.feature_dim();
    let p = cfg.params();
    let eps = cfg.eps;
    let mut g = Grad {
        theta: vec![0.0; dim],
        gamma: vec![0.0; dim],
        bias_theta: 0.0,
        bias_gamma: 0.0,
    };
    let theta_sign: Vec<f64> = m.theta.iter().map(|v| sgn(*v)).collect();
    let gamma_sign: Vec<f64> = m.gamma.iter().map(|v| sgn(*v)).collect();
    let zeta_sign = |y: Label| -> Vec<f64> { m.zeta(y).iter().map(|v| sgn(*v)).collect() };
    let zeta_sign_pos = zeta_sign(Label::Pos);
    let zeta_sign_neg = zeta_sign(Label::Neg);

    for (phi, &y) in data.phi.iter().zip(&data.y) {
        let yv = y.value();
        match cfg.mode {
            TrainMode::Atro | TrainMode::Mh => {
                let t = loss::adv_terms_unchecked(m, phi, y, eps, &p);
                if t.a_tilde.max(t.b_tilde) <= 0.0 {
                    continue;
                }
                if t.a_tilde >= t.b_tilde {
                    let s = match y {
                        Label::Pos => &zeta_sign_pos,
                        Label::Neg => &zeta_sign_neg,
                    };
                    let h = p.alpha / 2.0;
                    for j in 0..dim {
                        g.theta[j] += h * (phi[j] + eps * yv * s[j]);
                        g.gamma[j] += h * (-yv * phi[j] - eps * s[j]);
                    }
                    g.bias_theta += h;
                    g.bias_gamma -= h * yv;
                } else {
                    let k = p.c * p.beta;
                    for j in 0..dim {
                        g.theta[j] -= k * (phi[j] - eps * theta_sign[j]);
                    }
                    g.bias_theta -= k;
                }
            }
            TrainMode::At | TrainMode::Svm => {
                if loss::adv_hinge_linear(m, phi, y, eps) <= 0.0 {
                    continue;
                }
                for j in 0..dim {
                    g.gamma[j] += -yv * phi[j] + eps * gamma_sign[j];
                }
                g.bias_gamma -= yv;
            }
        }
    }
    if cfg.mode.has_rejection() {
        for j in 0..dim {
            g.theta[j] += cfg.lambda * m.theta[j];
        }
    }
    for j in 0..dim {
        g.gamma[j] += cfg.lambda_prime * m.gamma[j];
    }
    g
}

/// Subgradient descent on the regularized objective; returns the best iterate.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(RejectionModel, TrainTrace)> {
    cfg.validate("train.")?;
    if ds.is_empty() {
        return Err(AtroError::EmptyDataset);
    }
    let fm = cfg.build_feature_map(ds.d)?;
    let data = Features::new(&fm, ds)?;
    train_features(fm, &data, cfg)
}

pub(crate) fn train_features(
    fm: FeatureMap,
    data: &Features,
    cfg: &TrainConfig,
) -> Result<(RejectionModel, TrainTrace)> {
    let mut m = if cfg.mode.has_rejection() {
        RejectionModel::zeros(fm)
    } else {
        let d = fm.output_dim();
        RejectionModel::without_rejector(fm, vec![0.0; d], 0.0)?
    };
    let inv_n = 1.0 / data.phi.len() as f64;
    let mut trace = TrainTrace::default();
    let mut best_model = m.clone();
    let mut best = f64::INFINITY;

    let mut record = |m: &RejectionModel, trace: &mut TrainTrace, step: usize, rate: f64| -> Result<()> {
        let obj = objective_features(m, data, cfg);
        if !obj.is_finite() {
            return Err(AtroError::Diverged { step, rate });
        }
        if obj < best {
            best = obj;
            best_model = m.clone();
        }
        trace.objective.push(obj);
        trace.best.push(best);
        trace.theta_norm.push(l2(&m.theta));
        trace.gamma_norm.push(l2(&m.gamma));
        Ok(())
    };

    for t in 0..cfg.epochs {
        record(&m, &mut trace, t, if t == 0 { cfg.eta0 } else { cfg.rate(t - 1) })?;
        let g = subgradient(&m, data, cfg);
        let rate = cfg.rate(t) * inv_n;
        if cfg.mode.has_rejection() {
            for (w, d) in m.theta.iter_mut().zip(&g.theta) {
                *w -= rate * d;
            }
            m.bias_theta -= rate * g.bias_theta;
        }
        for (w, d) in m.gamma.iter_mut().zip(&g.gamma) {
            *w -= rate * d;
        }
        m.bias_gamma -= rate * g.bias_gamma;
    }
    record(&m, &mut trace, cfg.epochs, cfg.rate(cfg.epochs - 1))?;
    Ok((best_model, trace))
}

/// One row of the cross-validation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub index: usize,
    pub config: TrainConfig,
    pub fold_risks: Vec<f64>,
    pub mean_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best: TrainConfig,
    pub best_index: usize,
    pub table: Vec<CvRow>,
}

/// k-fold selection by mean validation adversarial 0-1-c risk at `eval_eps`
/// (heuristic candidate-set attack). Ties go to the earliest grid entry.
pub fn cross_validate(ds: &Dataset, grid: &[TrainConfig], k: usize, seed: u64, eval_eps: f64) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(AtroError::config("grid", "must not be empty"));
    }
    let folds = ingest::folds(ds, k, seed)?;
    let mut table = Vec::with_capacity(grid.len());
    for (index, cfg) in grid.iter().enumerate() {
        let p = cfg.params();
        let mut fold_risks = Vec::with_capacity(k);
        for (train_set, val_set) in &folds {
            let (m, _) = train(train_set, cfg)?;
            let mut total = 0.0;
            for s in &val_set.samples {
                let phi = m.featurize(&s.x)?;
                total += worst_case_01c(&m, &phi, s.y, eval_eps, &p, WorstCaseMode::Heuristic)?.loss;
            }
            fold_risks.push(total / val_set.len() as f64);
        }
        let mean_risk = crate::linalg::mean(&fold_risks);
        table.push(CvRow {
            index,
            config: cfg.clone(),
            fold_risks,
            mean_risk,
        });
    }
    let best_index = table.iter().fold(0, |b, row| {
        if row.mean_risk < table[b].mean_risk {
            row.index
        } else {
            b
        }
    });
    Ok(CvResult {
        best: grid[best_index].clone(),
        best_index,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::LabeledSample;

    fn sample(x: Vec<f64>, y: Label) -> LabeledSample {
        LabeledSample { x, y }
    }

    fn toy() -> Dataset {
        Dataset::new(
            "toy",
            vec![
                sample(vec![1.0, 0.2], Label::Pos),
                sample(vec![0.8, -0.1], Label::Pos),
                sample(vec![-1.0, 0.3], Label::Neg),
                sample(vec![-0.7, -0.4], Label::Neg),
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_model_objective_is_n() {
        let ds = toy();
        let cfg = TrainConfig {
            eps: 0.1,
            ..TrainConfig::default()
        };
        let m = RejectionModel::zeros(FeatureMap::identity(2));
        assert_eq!(objective(&m, &ds, &cfg).unwrap(), ds.len() as f64);
    }

    #[test]
    fn objective_zero_when_both_branches_inactive() {
        // y=+1, f=10, r=2: max(1 + 0.5·(2 − 10), 0.3·(1 − 2), 0) = 0
        let ds = Dataset::new("one", vec![sample(vec![1.0], Label::Pos)]).unwrap();
        let m = RejectionModel::linear(vec![2.0], vec![10.0]).unwrap();
        let cfg = TrainConfig {
            lambda: 0.0,
            lambda_prime: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(objective(&m, &ds, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn lambda_enters_linearly() {
        let ds = toy();
        let m = RejectionModel::linear(vec![0.5, -2.0], vec![1.0, 1.0]).unwrap();
        let a = TrainConfig {
            lambda: 0.3,
            ..TrainConfig::default()
        };
        let b = TrainConfig {
            lambda: 0.6,
            ..a.clone()
        };
        let diff = objective(&m, &ds, &b).unwrap() - objective(&m, &ds, &a).unwrap();
        assert!((diff - 0.3 / 2.0 * (0.25 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn config_invariants() {
        let bad = |f: fn(&mut TrainConfig)| {
            let mut c = TrainConfig::default();
            f(&mut c);
            c.validate("train.").unwrap_err().to_string()
        };
        assert_eq!(bad(|c| c.c = 0.6), "train.c must lie in (0, 0.5)");
        assert!(bad(|c| {
            c.mode = TrainMode::Svm;
            c.eps = 0.1
        })
        .starts_with("train.eps"));
        assert!(bad(|c| {
            c.mode = TrainMode::Mh;
            c.eps = 0.1
        })
        .starts_with("train.eps"));
        assert!(bad(|c| c.eps = -0.1).starts_with("train.eps"));
        assert!(bad(|c| c.epochs = 0).starts_with("train.epochs"));
    }

    #[test]
    fn svm_never_rejects() {
        let ds = toy();
        let cfg = TrainConfig {
            mode: TrainMode::Svm,
            epochs: 50,
            ..TrainConfig::default()
        };
        let (m, _) = train(&ds, &cfg).unwrap();
        assert!(m.rejection_disabled());
        for x in [[5.0, 5.0], [-3.0, 0.0], [0.0, 0.0]] {
            assert!(!m.decide(&x).unwrap().is_reject());
        }
    }

    #[test]
    fn best_envelope_and_reported_objective() {
        let ds = toy();
        let cfg = TrainConfig {
            eps: 0.05,
            epochs: 300,
            ..TrainConfig::default()
        };
        let (m, trace) = train(&ds, &cfg).unwrap();
        assert_eq!(trace.objective.len(), 301);
        assert!(trace.best.windows(2).all(|w| w[1] <= w[0]));
        let obj = objective(&m, &ds, &cfg).unwrap();
        assert!((obj - trace.best_objective()).abs() < 1e-9);
        assert!(trace.to_csv().starts_with("epoch,objective,best\n0,4,4\n"));
    }

    #[test]
    fn divergence_is_reported() {
        let ds = toy();
        let cfg = TrainConfig {
            eta0: 1e308,
            epochs: 5,
            decay: StepDecay::Constant,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&ds, &cfg), Err(AtroError::Diverged { .. })));
    }

    #[test]
    fn cv_tie_goes_to_first() {
        let ds = toy();
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let r = cross_validate(&ds, &[cfg.clone(), cfg.clone()], 2, 1, 0.0).unwrap();
        assert_eq!(r.best_index, 0);
        assert_eq!(r.table[0].mean_risk, r.table[1].mean_risk);
        let single = cross_validate(&ds, std::slice::from_ref(&cfg), 2, 1, 0.0).unwrap();
        assert_eq!(single.best, cfg);
        assert!(cross_validate(&ds, &[], 2, 1, 0.0).is_err());
    }
}
