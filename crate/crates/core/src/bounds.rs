//! Rademacher complexities of norm-bounded linear classes and the resulting
//! generalization bound for the adversarial convex surrogate risk.
//!
//! For `{x ↦ ⟨w, x⟩ : ‖w‖_p ≤ W}` the supremum inside the expectation has the
//! closed form `W‖Σσᵢxᵢ‖_q`. The adversarial class
//! `{x ↦ min_{‖δ‖∞≤ε} ⟨w, x + δ⟩}` gives `sup_w ⟨u, w⟩ − ν‖w‖₁` with
//! `u = Σσᵢxᵢ` and `ν = εΣσᵢ`, which equals `W‖max(|u| − ν, 0)‖_q`.

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{AtroError, Result};
use crate::ingest::{Dataset, Label, LabeledSample};
use crate::linalg::{dot, l1, lp};
use crate::loss::{self, SurrogateFn, SurrogateParams};
use crate::model::RejectionModel;
use crate::seed;

/// Lipschitz constant of the hinge pieces of the convex surrogate.
pub const LIPSCHITZ: f64 = 1.0;

/// Largest sample size accepted by [`rademacher_exhaustive`].
pub const EXHAUSTIVE_MAX_N: usize = 12;
/// Largest dimension accepted by [`rademacher_exhaustive`].
pub const EXHAUSTIVE_MAX_DIM: usize = 3;

/// Hölder conjugate of `p`, with `1 ↔ ∞`.
pub fn dual_exponent(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

/// `d^{1/q}`, which is 1 for `q = ∞`.
fn dim_factor(d: usize, q: f64) -> f64 {
    if q.is_infinite() {
        1.0
    } else {
        (d as f64).powf(1.0 / q)
    }
}

mod exponent {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "infinity") => Ok(f64::INFINITY),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid exponent {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundConfig {
    /// Parameter-norm radius. `None` means: take it from the model.
    pub w: Option<f64>,
    /// Norm on the parameters; `"inf"` is accepted in JSON.
    #[serde(with = "exponent")]
    pub p: f64,
    pub delta: f64,
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
    pub mc_draws: usize,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            w: None,
            p: 2.0,
            delta: 0.05,
            eps: 0.0,
            alpha: 1.0,
            beta: 1.0,
            c: 0.3,
            mc_draws: 1000,
        }
    }
}

impl BoundConfig {
    pub fn params(&self) -> SurrogateParams {
        SurrogateParams {
            alpha: self.alpha,
            beta: self.beta,
            c: self.c,
        }
    }

    pub fn q(&self) -> f64 {
        dual_exponent(self.p)
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        if let Some(w) = self.w {
            if !(w > 0.0 && w.is_finite()) {
                return Err(AtroError::config(format!("{prefix}w"), "must be positive"));
            }
        }
        if !(self.p >= 1.0) {
            return Err(AtroError::config(format!("{prefix}p"), "must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(AtroError::config(format!("{prefix}delta"), "must lie in (0, 1)"));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(AtroError::config(format!("{prefix}eps"), "must be non-negative"));
        }
        if self.mc_draws == 0 {
            return Err(AtroError::config(format!("{prefix}mc_draws"), "must be at least 1"));
        }
        self.params().validate(prefix)
    }
}

fn signed_sum(points: &[Vec<f64>], sigma: impl Fn(usize) -> f64, d: usize) -> (Vec<f64>, f64) {
    let mut u = vec![0.0; d];
    let mut s = 0.0;
    for (i, x) in points.iter().enumerate() {
        let si = sigma(i);
        s += si;
        for (uj, xj) in u.iter_mut().zip(x) {
            *uj += si * xj;
        }
    }
    (u, s)
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let d = points.first().ok_or(AtroError::EmptyDataset)?.len();
    if let Some(x) = points.iter().find(|x| x.len() != d) {
        return Err(AtroError::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    Ok(d)
}

/// Monte-Carlo estimate of `(W/n)·E‖Σσᵢxᵢ‖_q`.
pub fn rademacher_linear_mc(ds: &Dataset, w: f64, q: f64, mc_draws: usize, seed_value: u64) -> Result<f64> {
    let points: Vec<Vec<f64>> = ds.samples.iter().map(|s| s.x.clone()).collect();
    rademacher_points_mc(&points, w, q, mc_draws, seed_value)
}

fn rademacher_points_mc(points: &[Vec<f64>], w: f64, q: f64, mc_draws: usize, seed_value: u64) -> Result<f64> {
    let d = check_points(points)?;
    if mc_draws == 0 {
        return Err(AtroError::config("mc_draws", "must be at least 1"));
    }
    let mut total = 0.0;
    for k in 0..mc_draws {
        let mut rng = seed::rng(seed::derive_indexed(seed_value, "rademacher", k as u64));
        let sigma: Vec<f64> = (0..points.len())
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let (u, _) = signed_sum(points, |i| sigma[i], d);
        total += lp(&u, q);
    }
    Ok(w / points.len() as f64 * total / mc_draws as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearClass {
    /// `x ↦ ⟨w, x⟩`
    StandardLinear,
    /// `x ↦ min_{‖δ‖∞≤ε} ⟨w, x + δ⟩ = ⟨w, x⟩ − ε‖w‖₁`
    AdversarialLinear,
}

/// Closed-form `sup_{‖w‖_p≤W} ⟨u, w⟩ − ν‖w‖₁`.
pub fn adversarial_sup_closed_form(u: &[f64], nu: f64, w: f64, q: f64) -> f64 {
    let shrunk: Vec<f64> = u.iter().map(|v| (v.abs() - nu).max(0.0)).collect();
    w * lp(&shrunk, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveResult {
    pub value: f64,
    /// Directions evaluated on the coarse sphere grid per sign vector.
    pub grid_directions: usize,
    /// Final angular step of the local refinement, in radians.
    pub refine_step: f64,
}

const REFINE_FLOOR: f64 = 1e-9;

fn direction(angles: &[f64], d: usize, p: f64) -> Vec<f64> {
    let v = match d {
        1 => vec![if angles[0] < 0.5 { 1.0 } else { -1.0 }],
        2 => vec![angles[0].cos(), angles[0].sin()],
        _ => {
            let (polar, azimuth) = (angles[0], angles[1]);
            vec![polar.sin() * azimuth.cos(), polar.sin() * azimuth.sin(), polar.cos()]
        }
    };
    let n = lp(&v, p);
    v.into_iter().map(|c| c / n).collect()
}

fn coarse_grid(d: usize) -> Vec<Vec<f64>> {
    use std::f64::consts::PI;
    match d {
        1 => vec![vec![0.0], vec![1.0]],
        2 => (0..72).map(|k| vec![2.0 * PI * k as f64 / 72.0]).collect(),
        _ => {
            let mut g = vec![vec![0.0, 0.0], vec![PI, 0.0]];
            for i in 1..18 {
                for j in 0..36 {
                    g.push(vec![PI * i as f64 / 18.0, 2.0 * PI * j as f64 / 36.0]);
                }
            }
            g
        }
    }
}

/// Nonzero points of `{-1, 0, 1}^d` scaled to the unit p-sphere. The ball's
/// kinks sit on these for `p ∈ {1, ∞}`, where compass search can stall.
fn lattice_directions(d: usize, p: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for code in 0..3usize.pow(d as u32) {
        let v: Vec<f64> = (0..d).map(|k| (code / 3usize.pow(k as u32) % 3) as f64 - 1.0).collect();
        let n = lp(&v, p);
        if n > 0.0 {
            out.push(v.into_iter().map(|c| c / n).collect());
        }
    }
    out
}

/// Maximizes `g` over the unit p-sphere: lattice points and a coarse angular
/// grid, then compass search from the three best grid points.
fn sphere_max(g: impl Fn(&[f64]) -> f64, d: usize, p: f64, grid: &[Vec<f64>], lattice: &[Vec<f64>], step0: f64) -> f64 {
    let eval = |a: &[f64]| g(&direction(a, d, p));
    let lattice_best = lattice.iter().map(|v| g(v)).fold(f64::NEG_INFINITY, f64::max);
    let mut scored: Vec<(f64, &Vec<f64>)> = grid.iter().map(|a| (eval(a), a)).collect();
    if d == 1 {
        return lattice_best;
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = scored[0].0.max(lattice_best);
    for (start_val, start) in scored.iter().take(3) {
        let mut a = (*start).clone();
        let mut val = *start_val;
        let mut h = step0;
        while h > REFINE_FLOOR {
            let mut moved = false;
            for k in 0..a.len() {
                for s in [h, -h] {
                    let mut trial = a.clone();
                    trial[k] += s;
                    let v = eval(&trial);
                    if v > val {
                        val = v;
                        a = trial;
                        moved = true;
                    }
                }
            }
            if !moved {
                h *= 0.5;
            }
        }
        best = best.max(val);
    }
    best
}

/// Exact empirical Rademacher complexity by enumeration of all `2ⁿ` sign
/// vectors, with the supremum over the `W`-ball found numerically on the unit
/// sphere (the objective is positively homogeneous in `w`).
pub fn rademacher_exhaustive(ds: &Dataset, class: LinearClass, w: f64, p: f64, eps: f64) -> Result<ExhaustiveResult> {
    let n = ds.len();
    if n == 0 {
        return Err(AtroError::EmptyDataset);
    }
    if n > EXHAUSTIVE_MAX_N || ds.d > EXHAUSTIVE_MAX_DIM || ds.d == 0 {
        return Err(AtroError::SizeLimit(format!(
            "exhaustive enumeration needs n <= {EXHAUSTIVE_MAX_N} and 1 <= d <= {EXHAUSTIVE_MAX_DIM}, got n={n}, d={}",
            ds.d
        )));
    }
    let points: Vec<Vec<f64>> = ds.samples.iter().map(|s| s.x.clone()).collect();
    let d = ds.d;
    let grid = coarse_grid(d);
    let lattice = lattice_directions(d, p);
    let step0 = match d {
        2 => std::f64::consts::PI / 72.0,
        _ => std::f64::consts::PI / 36.0,
    };
    let mut total = 0.0;
    for mask in 0u32..(1u32 << n) {
        let (u, s) = signed_sum(&points, |i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }, d);
        let nu = match class {
            LinearClass::StandardLinear => 0.0,
            LinearClass::AdversarialLinear => eps * s,
        };
        let sup_unit = sphere_max(|v| dot(&u, v) - nu * l1(v), d, p, &grid, &lattice, step0);
        total += w * sup_unit.max(0.0);
    }
    Ok(ExhaustiveResult {
        value: total / (n as f64 * (1u64 << n) as f64),
        grid_directions: grid.len() + lattice.len(),
        refine_step: REFINE_FLOOR,
    })
}

/// Exhaustive evaluation through the closed-form supremum.
pub fn rademacher_exhaustive_closed_form(ds: &Dataset, class: LinearClass, w: f64, p: f64, eps: f64) -> Result<f64> {
    let n = ds.len();
    if n == 0 {
        return Err(AtroError::EmptyDataset);
    }
    if n > 20 {
        return Err(AtroError::SizeLimit(format!(
            "closed-form enumeration needs n <= 20, got {n}"
        )));
    }
    let points: Vec<Vec<f64>> = ds.samples.iter().map(|s| s.x.clone()).collect();
    let q = dual_exponent(p);
    let mut total = 0.0;
    for mask in 0u32..(1u32 << n) {
        let (u, s) = signed_sum(&points, |i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }, ds.d);
        let nu = match class {
            LinearClass::StandardLinear => 0.0,
            LinearClass::AdversarialLinear => eps * s,
        };
        total += adversarial_sup_closed_form(&u, nu, w, q);
    }
    Ok(total / (n as f64 * (1u64 << n) as f64))
}

/// `εW·d^{1/q}/√n`, the slack between the standard and adversarial classes.
pub fn adversarial_gap(eps: f64, w: f64, d: usize, q: f64, n: usize) -> f64 {
    eps * w * dim_factor(d, q) / (n as f64).sqrt()
}

/// `√(ln(1/δ)/(2n))`.
pub fn confidence_term(delta: f64, n: usize) -> f64 {
    ((1.0 / delta).ln() / (2.0 * n as f64)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub empirical_risk: f64,
    pub rad_zeta: f64,
    pub rad_gamma: f64,
    pub eps_term: f64,
    pub conf_term: f64,
    pub total: f64,
    pub w: f64,
    #[serde(with = "exponent")]
    pub p: f64,
    #[serde(with = "exponent")]
    pub q: f64,
    pub n: usize,
    pub d: usize,
    /// Sample the first complexity term was estimated on.
    pub rad_zeta_points: String,
    /// Sample the second complexity term was estimated on.
    pub rad_gamma_points: String,
}

/// Itemized bound on the adversarial surrogate risk.
///
/// `S` holds the (featurized) points; `cfg.w` must be set.
pub fn theorem1_bound(s: &Dataset, empirical_risk: f64, cfg: &BoundConfig, seed_value: u64) -> Result<BoundReport> {
    cfg.validate("bound.")?;
    let w = cfg
        .w
        .ok_or_else(|| AtroError::config("bound.w", "must be set when no model is given"))?;
    if s.is_empty() {
        return Err(AtroError::EmptyDataset);
    }
    if !empirical_risk.is_finite() || empirical_risk < 0.0 {
        return Err(AtroError::NonFinite(format!("empirical risk {empirical_risk}")));
    }
    let q = cfg.q();
    let n = s.len();
    let signed: Vec<Vec<f64>> = s
        .samples
        .iter()
        .map(|smp| smp.x.iter().map(|v| v * smp.y.value()).collect())
        .collect();
    let plain: Vec<Vec<f64>> = s.samples.iter().map(|smp| smp.x.clone()).collect();
    let rad_zeta = rademacher_points_mc(&signed, w, q, cfg.mc_draws, seed::derive(seed_value, "rad-zeta"))?;
    let rad_gamma = rademacher_points_mc(&plain, w, q, cfg.mc_draws, seed::derive(seed_value, "rad-gamma"))?;
    let zeta_part = cfg.alpha * LIPSCHITZ / 2.0 * rad_zeta;
    let gamma_part = cfg.beta * cfg.c * LIPSCHITZ * rad_gamma;
    let eps_term = 2.0 * adversarial_gap(cfg.eps, w, s.d, q, n);
    let conf_term = confidence_term(cfg.delta, n);
    Ok(BoundReport {
        empirical_risk,
        rad_zeta,
        rad_gamma,
        eps_term,
        conf_term,
        total: empirical_risk + zeta_part + gamma_part + eps_term + conf_term,
        w,
        p: cfg.p,
        q,
        n,
        d: s.d,
        rad_zeta_points: "y_i * x_i".into(),
        rad_gamma_points: "x_i".into(),
    })
}

/// Mean over the sample of `min(L̃_conv, 1)` with hinge pieces, at radius `eps`.
pub fn clipped_empirical_risk(m: &RejectionModel, ds: &Dataset, eps: f64, p: &SurrogateParams) -> Result<f64> {
    if ds.is_empty() {
        return Err(AtroError::EmptyDataset);
    }
    let mut sum = 0.0;
    for s in &ds.samples {
        let phi = m.featurize(&s.x)?;
        let l = loss::adv_surrogate_conv_linear(m, &phi, s.y, eps, p, SurrogateFn::Hinge, SurrogateFn::Hinge);
        sum += l.min(1.0);
    }
    Ok(sum / ds.len() as f64)
}

/// `max(‖θ‖_p, ‖ζ(+1)‖_p, ‖ζ(−1)‖_p, ‖γ‖_p)` over the augmented parameter
/// vectors (bias as the last coordinate).
pub fn model_norm_radius(m: &RejectionModel, p: f64) -> f64 {
    let aug = |v: Vec<f64>, b: f64| {
        let mut v = v;
        v.push(b);
        lp(&v, p)
    };
    let mut w = aug(m.gamma.clone(), m.bias_gamma);
    if !m.rejection_disabled() {
        w = w.max(aug(m.theta.clone(), m.bias_theta));
        for y in [Label::Pos, Label::Neg] {
            w = w.max(aug(m.zeta(y), m.zeta_bias(y)));
        }
    }
    w
}

/// Bound for a trained model on its training sample.
///
/// Points are the featurized inputs with a constant coordinate appended for
/// the bias; the radius defaults to [`model_norm_radius`].
pub fn model_bound(m: &RejectionModel, ds: &Dataset, cfg: &BoundConfig, seed_value: u64) -> Result<BoundReport> {
    cfg.validate("bound.")?;
    let empirical = clipped_empirical_risk(m, ds, cfg.eps, &cfg.params())?;
    let mut samples = Vec::with_capacity(ds.len());
    for s in &ds.samples {
        let mut x = m.featurize(&s.x)?;
        x.push(1.0);
        samples.push(LabeledSample { x, y: s.y });
    }
    let feats = Dataset::new(format!("{}-features", ds.name), samples)?;
    let w = cfg
        .w
        .unwrap_or_else(|| model_norm_radius(m, cfg.p))
        .max(f64::MIN_POSITIVE);
    theorem1_bound(&feats, empirical, &BoundConfig { w: Some(w), ..*cfg }, seed_value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(points: &[(&[f64], Label)]) -> Dataset {
        Dataset::new(
            "t",
            points
                .iter()
                .map(|(x, y)| LabeledSample { x: x.to_vec(), y: *y })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn dual_exponents() {
        assert_eq!(dual_exponent(1.0), f64::INFINITY);
        assert_eq!(dual_exponent(f64::INFINITY), 1.0);
        assert_eq!(dual_exponent(2.0), 2.0);
        assert!((dual_exponent(3.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn single_point_mc_is_exact() {
        let s = ds(&[(&[0.0, 2.0], Label::Pos)]);
        assert_eq!(rademacher_linear_mc(&s, 1.0, 2.0, 17, 3).unwrap(), 2.0);
    }

    #[test]
    fn two_equal_points_exhaustive() {
        let s = ds(&[(&[1.0, 0.0], Label::Pos), (&[1.0, 0.0], Label::Neg)]);
        let v = rademacher_exhaustive_closed_form(&s, LinearClass::StandardLinear, 1.0, 2.0, 0.0).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let g = rademacher_exhaustive(&s, LinearClass::StandardLinear, 1.0, 2.0, 0.0).unwrap();
        assert!((g.value - 0.5).abs() < 1e-9);
    }

    #[test]
    fn mc_homogeneous_in_w() {
        let s = ds(&[
            (&[0.3, -1.0], Label::Pos),
            (&[0.5, 0.2], Label::Neg),
            (&[-0.1, 0.9], Label::Pos),
        ]);
        let a = rademacher_linear_mc(&s, 1.5, 2.0, 64, 9).unwrap();
        let b = rademacher_linear_mc(&s, 3.0, 2.0, 64, 9).unwrap();
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn grid_matches_closed_form() {
        let s = ds(&[
            (&[0.3, -1.0, 0.2], Label::Pos),
            (&[0.5, 0.2, -0.7], Label::Neg),
            (&[-0.1, 0.9, 0.4], Label::Pos),
            (&[0.8, 0.1, 0.1], Label::Neg),
        ]);
        for p in [1.0, 1.5, 2.0, 4.0, f64::INFINITY] {
            for (class, eps) in [
                (LinearClass::StandardLinear, 0.0),
                (LinearClass::AdversarialLinear, 0.1),
                (LinearClass::AdversarialLinear, 0.5),
            ] {
                let g = rademacher_exhaustive(&s, class, 1.0, p, eps).unwrap().value;
                let c = rademacher_exhaustive_closed_form(&s, class, 1.0, p, eps).unwrap();
                assert!((g - c).abs() < 1e-6, "p={p} {class:?} eps={eps}: {g} vs {c}");
            }
        }
    }

    #[test]
    fn exhaustive_size_limits() {
        let big = ds(&[(&[0.0, 0.0, 0.0, 0.0], Label::Pos)]);
        assert!(matches!(
            rademacher_exhaustive(&big, LinearClass::StandardLinear, 1.0, 2.0, 0.0),
            Err(AtroError::SizeLimit(_))
        ));
    }

    #[test]
    fn confidence_term_value() {
        assert!((confidence_term(0.01, 50) - 0.2146).abs() < 5e-5);
    }

    #[test]
    fn zero_eps_has_zero_eps_term() {
        let s = ds(&[(&[0.3, -1.0], Label::Pos), (&[0.5, 0.2], Label::Neg)]);
        let cfg = BoundConfig {
            w: Some(2.0),
            ..BoundConfig::default()
        };
        let r = theorem1_bound(&s, 0.25, &cfg, 1).unwrap();
        assert_eq!(r.eps_term, 0.0);
        assert!(r.total >= r.empirical_risk);
    }

    #[test]
    fn config_errors() {
        let bad = BoundConfig {
            delta: 1.0,
            ..BoundConfig::default()
        };
        assert_eq!(
            bad.validate("bound.").unwrap_err().to_string(),
            "bound.delta must lie in (0, 1)"
        );
        assert!(BoundConfig {
            p: 0.5,
            ..BoundConfig::default()
        }
        .validate("")
        .is_err());
        assert!(BoundConfig {
            mc_draws: 0,
            ..BoundConfig::default()
        }
        .validate("")
        .is_err());
    }

    #[test]
    fn exponent_serde() {
        let cfg = BoundConfig {
            p: f64::INFINITY,
            ..BoundConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"p\":\"inf\""));
        let back: BoundConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
