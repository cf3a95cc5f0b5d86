//! Perturbation search inside an `ε`-ball.
//!
//! Gradient attacks (FGSM, PGD) work through any [`LossOracle`]. For linear
//! models the two surrogate terms have exact maximizers at ball corners
//! ([`analytic_candidates`]). The discontinuous 0-1-c loss is attacked by
//! taking the worst of a small candidate set ([`worst_case_01c`]), with a
//! grid-and-corner enumeration kept as a small-dimension oracle.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{AtroError, Result};
use crate::ingest::Label;
use crate::linalg::{add, l2, linf, sgn};
use crate::loss::{self, SurrogateParams};
use crate::model::RejectionModel;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    #[default]
    None,
    AnalyticLinear,
    Fgsm,
    Pgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Linf,
    L2,
}

/// PGD step size: a fixed value or `"auto"` (`ε/√steps`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum StepSize {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for StepSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            StepSize::Auto => s.serialize_str("auto"),
            StepSize::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for StepSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(StepSize::Fixed(v)),
            Raw::Str(s) if s == "auto" => Ok(StepSize::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "step_size must be a number or \"auto\", got \"{s}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub method: AttackMethod,
    pub eps: f64,
    pub norm: Norm,
    pub steps: usize,
    pub step_size: StepSize,
    /// Uniform random start inside the ball; `None` starts at `δ = 0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_start: Option<u64>,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            method: AttackMethod::None,
            eps: 0.0,
            norm: Norm::Linf,
            steps: 20,
            step_size: StepSize::Auto,
            random_start: None,
        }
    }
}

impl AttackSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn pgd(eps: f64, steps: usize) -> Self {
        Self {
            method: AttackMethod::Pgd,
            eps,
            steps,
            ..Self::default()
        }
    }

    pub fn analytic(eps: f64) -> Self {
        Self {
            method: AttackMethod::AnalyticLinear,
            eps,
            ..Self::default()
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(AtroError::config(format!("{prefix}eps"), "must be non-negative"));
        }
        if self.steps == 0 {
            return Err(AtroError::config(format!("{prefix}steps"), "must be positive"));
        }
        if let StepSize::Fixed(v) = self.step_size {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AtroError::config(
                    format!("{prefix}step_size"),
                    "must be positive or \"auto\"",
                ));
            }
        }
        if matches!(self.method, AttackMethod::AnalyticLinear | AttackMethod::Fgsm) && self.norm != Norm::Linf {
            return Err(AtroError::config(
                format!("{prefix}norm"),
                "analytic_linear and fgsm require linf",
            ));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        match self.step_size {
            StepSize::Auto => self.eps / (self.steps as f64).sqrt(),
            StepSize::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub delta: Vec<f64>,
    pub achieved_loss: f64,
}

/// Loss and input-gradient at a point, for a fixed label and model.
pub trait LossOracle {
    fn loss(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> Vec<f64>;
}

fn checked_grad(oracle: &impl LossOracle, x: &[f64], step: usize) -> Result<Vec<f64>> {
    let g = oracle.grad(x);
    if g.iter().all(|v| v.is_finite()) {
        Ok(g)
    } else {
        Err(AtroError::NonFinite(format!("input gradient at attack step {step}")))
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps >= 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(AtroError::config("eps", "must be non-negative"))
    }
}

/// `δ = ε·sgn(∇ₓL)` with `sgn(0) = 0`.
pub fn fgsm(oracle: &impl LossOracle, x: &[f64], eps: f64) -> Result<Perturbation> {
    check_eps(eps)?;
    let g = checked_grad(oracle, x, 0)?;
    let delta: Vec<f64> = g.iter().map(|v| eps * sgn(*v)).collect();
    let achieved_loss = oracle.loss(&add(x, &delta));
    Ok(Perturbation { delta, achieved_loss })
}

fn project(delta: &mut [f64], eps: f64, norm: Norm) {
    match norm {
        Norm::Linf => {
            for v in delta.iter_mut() {
                *v = v.clamp(-eps, eps);
            }
        }
        Norm::L2 => {
            let n = l2(delta);
            if n > eps {
                let s = if n > 0.0 { eps / n } else { 0.0 };
                for v in delta.iter_mut() {
                    *v *= s;
                }
            }
        }
    }
}

fn random_start(dim: usize, eps: f64, norm: Norm, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    match norm {
        Norm::Linf => (0..dim).map(|_| rng.random_range(-eps..=eps)).collect(),
        Norm::L2 => {
            let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = l2(&dir);
            let u: f64 = rng.random();
            let radius = eps * u.powf(1.0 / dim.max(1) as f64);
            if n == 0.0 {
                vec![0.0; dim]
            } else {
                dir.iter().map(|v| v * radius / n).collect()
            }
        }
    }
}

/// Projected gradient ascent. Returns the best iterate seen, including the start.
pub fn pgd(oracle: &impl LossOracle, x: &[f64], spec: &AttackSpec) -> Result<Perturbation> {
    check_eps(spec.eps)?;
    if spec.steps == 0 {
        return Err(AtroError::config("steps", "must be positive"));
    }
    let mut delta = match spec.random_start {
        Some(s) if spec.eps > 0.0 => random_start(x.len(), spec.eps, spec.norm, s),
        _ => vec![0.0; x.len()],
    };
    let mut best = Perturbation {
        achieved_loss: oracle.loss(&add(x, &delta)),
        delta: delta.clone(),
    };
    if spec.eps == 0.0 {
        return Ok(best);
    }
    let step = spec.step();
    for t in 0..spec.steps {
        let g = checked_grad(oracle, &add(x, &delta), t)?;
        match spec.norm {
            Norm::Linf => {
                for (d, gi) in delta.iter_mut().zip(&g) {
                    *d += step * sgn(*gi);
                }
            }
            Norm::L2 => {
                let n = l2(&g);
                if n > 0.0 {
                    for (d, gi) in delta.iter_mut().zip(&g) {
                        *d += step * gi / n;
                    }
                }
            }
        }
        project(&mut delta, spec.eps, spec.norm);
        let l = oracle.loss(&add(x, &delta));
        if !l.is_finite() {
            return Err(AtroError::NonFinite(format!("attack loss at step {}", t + 1)));
        }
        if l > best.achieved_loss {
            best = Perturbation {
                delta: delta.clone(),
                achieved_loss: l,
            };
        }
    }
    Ok(best)
}

/// Max-hinge loss of a linear model as a function of the (feature-space) input.
pub struct MhLinearOracle<'a> {
    pub model: &'a RejectionModel,
    pub y: Label,
    pub params: SurrogateParams,
}

impl LossOracle for MhLinearOracle<'_> {
    fn loss(&self, x: &[f64]) -> f64 {
        let (f, r) = self.model.scores(x);
        loss::loss_mh(f, r, self.y, &self.params)
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let (f, r) = self.model.scores(x);
        let (a, b) = loss::mh_branches(f, r, self.y, &self.params);
        let p = &self.params;
        let yv = self.y.value();
        if a >= b && a > 0.0 {
            // ∂/∂x of α/2·(r − y·f)
            self.model
                .theta
                .iter()
                .zip(&self.model.gamma)
                .map(|(t, g)| p.alpha / 2.0 * (t - yv * g))
                .collect()
        } else if b > 0.0 {
            self.model.theta.iter().map(|t| -p.c * p.beta * t).collect()
        } else {
            vec![0.0; x.len()]
        }
    }
}

/// Which candidate produced the reported worst case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Candidate {
    Clean,
    /// `δ_A = y·ε·sgn(ζ(y))`, maximizing `r − y·f`.
    ClassifierTerm,
    /// `δ_B = −ε·sgn(θ)`, minimizing `r`.
    RejectorTerm,
    Fgsm,
    Pgd,
    Grid,
}

impl Candidate {
    pub const ALL: [Candidate; 6] = [
        Candidate::Clean,
        Candidate::ClassifierTerm,
        Candidate::RejectorTerm,
        Candidate::Fgsm,
        Candidate::Pgd,
        Candidate::Grid,
    ];
}

fn loss_01c_at(m: &RejectionModel, phi: &[f64], delta: &[f64], y: Label, c: f64) -> f64 {
    let (f, r) = m.scores(&add(phi, delta));
    loss::loss_01c_unchecked(f, r, y, c)
}

/// The two corner maximizers for a linear model under L∞:
/// `[δ_A, δ_B]`, each scored by the 0-1-c loss at `φ + δ`.
pub fn analytic_candidates(m: &RejectionModel, phi: &[f64], y: Label, eps: f64, c: f64) -> Result<Vec<Perturbation>> {
    check_eps(eps)?;
    loss::check_cost(c, "c")?;
    let yv = y.value();
    let delta_a: Vec<f64> = m.zeta(y).iter().map(|z| yv * eps * sgn(*z)).collect();
    let delta_b: Vec<f64> = m.theta.iter().map(|t| -eps * sgn(*t)).collect();
    Ok([delta_a, delta_b]
        .into_iter()
        .map(|delta| Perturbation {
            achieved_loss: loss_01c_at(m, phi, &delta, y, c),
            delta,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorstCaseMode {
    #[default]
    Heuristic,
    ExactSmallD,
}

/// Largest dimension accepted by [`WorstCaseMode::ExactSmallD`].
pub const EXACT_MAX_DIM: usize = 6;
/// Grid points per axis used by [`WorstCaseMode::ExactSmallD`].
pub const EXACT_GRID_POINTS: usize = 21;
/// PGD steps used inside the heuristic candidate set.
pub const HEURISTIC_PGD_STEPS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub loss: f64,
    pub winner: Candidate,
    pub delta: Vec<f64>,
}

/// Maximum of the 0-1-c loss over the L∞ ball around `phi`.
///
/// `Heuristic` takes the worst of `{0, δ_A, δ_B, δ_PGD}` (PGD on the max-hinge
/// surrogate); earlier candidates win ties. `ExactSmallD` enumerates a
/// 21-point-per-axis grid plus all corners and is meant as a test oracle.
pub fn worst_case_01c(
    m: &RejectionModel,
    phi: &[f64],
    y: Label,
    eps: f64,
    p: &SurrogateParams,
    mode: WorstCaseMode,
) -> Result<WorstCase> {
    check_eps(eps)?;
    p.validate("")?;
    if phi.len() != m.feature_dim() {
        return Err(AtroError::DimensionMismatch {
            expected: m.feature_dim(),
            got: phi.len(),
        });
    }
    match mode {
        WorstCaseMode::Heuristic => {
            let spec = AttackSpec::pgd(eps, HEURISTIC_PGD_STEPS);
            Ok(candidate_set(m, phi, y, p, &spec, true)?)
        }
        WorstCaseMode::ExactSmallD => exact_small_d(m, phi, y, eps, p.c),
    }
}

/// Worst 0-1-c loss over the clean point, the analytic corners (when
/// `with_analytic`) and the gradient attack described by `spec`.
pub(crate) fn candidate_set(
    m: &RejectionModel,
    phi: &[f64],
    y: Label,
    p: &SurrogateParams,
    spec: &AttackSpec,
    with_analytic: bool,
) -> Result<WorstCase> {
    let dim = phi.len();
    let mut best = WorstCase {
        loss: loss_01c_at(m, phi, &vec![0.0; dim], y, p.c),
        winner: Candidate::Clean,
        delta: vec![0.0; dim],
    };
    let mut consider = |delta: Vec<f64>, who: Candidate| {
        let l = loss_01c_at(m, phi, &delta, y, p.c);
        if l > best.loss {
            best = WorstCase {
                loss: l,
                winner: who,
                delta,
            };
        }
    };
    if spec.eps == 0.0 {
        return Ok(best);
    }
    if with_analytic {
        let mut cands = analytic_candidates(m, phi, y, spec.eps, p.c)?.into_iter();
        consider(cands.next().expect("two candidates").delta, Candidate::ClassifierTerm);
        consider(cands.next().expect("two candidates").delta, Candidate::RejectorTerm);
    }
    let oracle = MhLinearOracle {
        model: m,
        y,
        params: *p,
    };
    match spec.method {
        AttackMethod::Fgsm => consider(fgsm(&oracle, phi, spec.eps)?.delta, Candidate::Fgsm),
        AttackMethod::Pgd | AttackMethod::AnalyticLinear => {
            let pgd_spec = AttackSpec {
                method: AttackMethod::Pgd,
                ..*spec
            };
            consider(pgd(&oracle, phi, &pgd_spec)?.delta, Candidate::Pgd)
        }
        AttackMethod::None => {}
    }
    Ok(best)
}

fn exact_small_d(m: &RejectionModel, phi: &[f64], y: Label, eps: f64, c: f64) -> Result<WorstCase> {
    let d = phi.len();
    if d > EXACT_MAX_DIM {
        return Err(AtroError::SizeLimit(format!(
            "exact worst case needs d ≤ {EXACT_MAX_DIM}, got {d}"
        )));
    }
    let (f0, r0) = m.scores(phi);
    let eval = |delta: &[f64]| {
        let f = f0 + crate::linalg::dot(delta, &m.gamma);
        let r = r0 + crate::linalg::dot(delta, &m.theta);
        loss::loss_01c_unchecked(f, r, y, c)
    };
    let mut best = WorstCase {
        loss: eval(&vec![0.0; d]),
        winner: Candidate::Clean,
        delta: vec![0.0; d],
    };
    if eps == 0.0 {
        return Ok(best);
    }
    let g = EXACT_GRID_POINTS;
    let axis: Vec<f64> = (0..g)
        .map(|i| (-eps + 2.0 * eps * i as f64 / (g - 1) as f64).clamp(-eps, eps))
        .collect();
    let mut idx = vec![0usize; d];
    let mut delta = vec![0.0; d];
    loop {
        for (dv, &i) in delta.iter_mut().zip(&idx) {
            *dv = axis[i];
        }
        let l = eval(&delta);
        if l > best.loss {
            best = WorstCase {
                loss: l,
                winner: Candidate::Grid,
                delta: delta.clone(),
            };
        }
        // odometer increment
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] < g {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == d {
            break;
        }
    }
    // corners, with exact ±ε coordinates
    for mask in 0u32..(1u32 << d) {
        for (j, dv) in delta.iter_mut().enumerate() {
            *dv = if mask >> j & 1 == 1 { eps } else { -eps };
        }
        let l = eval(&delta);
        if l > best.loss {
            best = WorstCase {
                loss: l,
                winner: Candidate::Grid,
                delta: delta.clone(),
            };
        }
    }
    debug_assert!(linf(&best.delta) <= eps);
    Ok(best)
}
