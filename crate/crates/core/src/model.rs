//! The `(f, r)` pair: a linear classifier and a linear rejector over a shared
//! feature map.
//!
//! Biases are kept apart from the weight vectors. They act like an appended
//! constant-1 feature that is never perturbed and never enters an `‖·‖₁`
//! penalty.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{AtroError, Result};
use crate::ingest::{Label, NormStats};
use crate::linalg::dot;
use crate::seed;

/// Unbuilt feature-map description, as it appears in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMapSpec {
    #[default]
    Identity,
    RandomFourier {
        dim: usize,
        bandwidth: f64,
        /// Falls back to the run's init seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

impl FeatureMapSpec {
    pub fn build(&self, input_dim: usize, fallback_seed: u64) -> Result<FeatureMap> {
        match *self {
            FeatureMapSpec::Identity => Ok(FeatureMap::Identity { dim: input_dim }),
            FeatureMapSpec::RandomFourier { dim, bandwidth, seed } => Ok(FeatureMap::RandomFourier(
                RandomFourier::new(input_dim, dim, bandwidth, seed.unwrap_or(fallback_seed))?,
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    Identity { dim: usize },
    RandomFourier(RandomFourier),
}

impl FeatureMap {
    pub fn identity(dim: usize) -> Self {
        FeatureMap::Identity { dim }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::RandomFourier(rff) => rff.params.input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::RandomFourier(rff) => rff.params.output_dim,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, FeatureMap::Identity { .. })
    }

    pub fn featurize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(AtroError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(match self {
            FeatureMap::Identity { .. } => x.to_vec(),
            FeatureMap::RandomFourier(rff) => rff.apply(x),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RffParams {
    pub input_dim: usize,
    pub output_dim: usize,
    pub bandwidth: f64,
    pub seed: u64,
}

/// `φ(x) = √(2/D) · cos(Wx + b)` with `W ~ N(0, 1/σ²)` and `b ~ U[0, 2π)`,
/// approximating the Gaussian kernel of bandwidth `σ`. Only the parameters
/// are serialized; the projection is regenerated from the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "RffParams", into = "RffParams")]
pub struct RandomFourier {
    params: RffParams,
    /// Row-major `output_dim × input_dim`.
    weights: Vec<f64>,
    offsets: Vec<f64>,
}

impl PartialEq for RandomFourier {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl From<RffParams> for RandomFourier {
    fn from(p: RffParams) -> Self {
        Self::generate(p)
    }
}

impl From<RandomFourier> for RffParams {
    fn from(r: RandomFourier) -> Self {
        r.params
    }
}

impl RandomFourier {
    pub fn new(input_dim: usize, output_dim: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        if output_dim == 0 {
            return Err(AtroError::config("feature_map.dim", "must be positive"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(AtroError::config("feature_map.bandwidth", "must be positive"));
        }
        Ok(Self::generate(RffParams {
            input_dim,
            output_dim,
            bandwidth,
            seed,
        }))
    }

    fn generate(params: RffParams) -> Self {
        let mut rng = seed::rng(params.seed);
        let normal = Normal::new(0.0, 1.0 / params.bandwidth).expect("bandwidth validated");
        let weights = (0..params.output_dim * params.input_dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        let offsets = (0..params.output_dim)
            .map(|_| rng.random_range(0.0..2.0 * PI))
            .collect();
        Self {
            params,
            weights,
            offsets,
        }
    }

    pub fn params(&self) -> RffParams {
        self.params
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let scale = (2.0 / self.params.output_dim as f64).sqrt();
        self.weights
            .chunks_exact(self.params.input_dim.max(1))
            .zip(&self.offsets)
            .map(|(row, b)| scale * (dot(row, x) + b).cos())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept(Label),
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub f_value: f64,
    pub r_value: f64,
}

impl Decision {
    /// Reject iff `r ≤ 0`; otherwise `sign(f)` with `sign(0) = +1`.
    pub fn from_scores(f_value: f64, r_value: f64) -> Self {
        let verdict = if r_value <= 0.0 {
            Verdict::Reject
        } else {
            Verdict::Accept(Label::of_score(f_value))
        };
        Self {
            verdict,
            f_value,
            r_value,
        }
    }

    pub fn is_reject(&self) -> bool {
        self.verdict == Verdict::Reject
    }

    /// The label the classifier would output, ignoring the rejector.
    pub fn classifier_label(&self) -> Label {
        Label::of_score(self.f_value)
    }
}

/// Rejector `r(φ) = ⟨φ, θ⟩ + b_θ`, classifier `f(φ) = ⟨φ, γ⟩ + b_γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionModel {
    pub feature_map: FeatureMap,
    pub theta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub bias_theta: f64,
    pub bias_gamma: f64,
    #[serde(default)]
    pub norm_stats: Option<NormStats>,
}

impl RejectionModel {
    pub fn new(
        feature_map: FeatureMap,
        theta: Vec<f64>,
        gamma: Vec<f64>,
        bias_theta: f64,
        bias_gamma: f64,
    ) -> Result<Self> {
        let d = feature_map.output_dim();
        for v in [&theta, &gamma] {
            if v.len() != d {
                return Err(AtroError::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        let m = Self {
            feature_map,
            theta,
            gamma,
            bias_theta,
            bias_gamma,
            norm_stats: None,
        };
        m.check_finite()?;
        Ok(m)
    }

    /// Linear model over identity features without biases.
    pub fn linear(theta: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        Self::new(FeatureMap::identity(gamma.len()), theta, gamma, 0.0, 0.0)
    }

    pub fn zeros(feature_map: FeatureMap) -> Self {
        let d = feature_map.output_dim();
        Self {
            feature_map,
            theta: vec![0.0; d],
            gamma: vec![0.0; d],
            bias_theta: 0.0,
            bias_gamma: 0.0,
            norm_stats: None,
        }
    }

    /// A model whose rejector is the constant `r ≡ 1`: it never abstains and
    /// no perturbation can make it abstain.
    pub fn without_rejector(feature_map: FeatureMap, gamma: Vec<f64>, bias_gamma: f64) -> Result<Self> {
        let d = feature_map.output_dim();
        Self::new(feature_map, vec![0.0; d], gamma, 1.0, bias_gamma)
    }

    pub fn rejection_disabled(&self) -> bool {
        self.bias_theta > 0.0 && self.theta.iter().all(|t| *t == 0.0)
    }

    pub fn feature_dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        let ok = self
            .theta
            .iter()
            .chain(&self.gamma)
            .chain([&self.bias_theta, &self.bias_gamma])
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(AtroError::NonFinite("model parameters".into()))
        }
    }

    pub fn featurize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.feature_map.featurize(x)
    }

    /// `(f, r)` at an already featurized point.
    pub fn scores(&self, phi: &[f64]) -> (f64, f64) {
        (
            dot(phi, &self.gamma) + self.bias_gamma,
            dot(phi, &self.theta) + self.bias_theta,
        )
    }

    pub fn decide(&self, x: &[f64]) -> Result<Decision> {
        let phi = self.featurize(x)?;
        Ok(self.decide_features(&phi))
    }

    pub fn decide_features(&self, phi: &[f64]) -> Decision {
        let (f, r) = self.scores(phi);
        Decision::from_scores(f, r)
    }

    /// `ζ(y) = θ/y − γ`, so that `r − y·f = y·(⟨φ, ζ(y)⟩ + ζ_b(y))`.
    pub fn zeta(&self, y: Label) -> Vec<f64> {
        let yv = y.value();
        self.theta.iter().zip(&self.gamma).map(|(t, g)| t / yv - g).collect()
    }

    /// Bias component of `ζ(y)`, i.e. the coefficient of the constant feature.
    pub fn zeta_bias(&self, y: Label) -> f64 {
        self.bias_theta / y.value() - self.bias_gamma
    }
}
