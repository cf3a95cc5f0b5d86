//! Rejection-aware losses.
//!
//! `loss_01c` is the target loss; `loss_mh` (max-hinge) and `surrogate_conv`
//! are convex upper bounds of it. For linear models the worst case of each
//! hinge argument over an L∞ ball is available in closed form, which is what
//! [`adv_terms_linear`] assembles.

use serde::{Deserialize, Serialize};

use crate::error::{AtroError, Result};
use crate::ingest::Label;
use crate::linalg::{dot, l1};
use crate::model::RejectionModel;

/// `α, β > 0` scale the two hinge branches; `c ∈ (0, ½)` is the rejection cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            c: 0.3,
        }
    }
}

impl SurrogateParams {
    pub fn new(alpha: f64, beta: f64, c: f64) -> Result<Self> {
        let p = Self { alpha, beta, c };
        p.validate("")?;
        Ok(p)
    }

    /// Checks the invariants, prefixing error paths with `prefix` (e.g. `"train."`).
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(AtroError::config(format!("{prefix}alpha"), "must be positive"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(AtroError::config(format!("{prefix}beta"), "must be positive"));
        }
        check_cost(self.c, &format!("{prefix}c"))
    }
}

pub(crate) fn check_cost(c: f64, path: &str) -> Result<()> {
    // c ≥ ½ leaves no incentive to reject; c = 0 rejects everything.
    if c > 0.0 && c < 0.5 {
        Ok(())
    } else {
        Err(AtroError::config(path, "must lie in (0, 0.5)"))
    }
}

/// `1{y·f ≤ 0}·1{r ≥ 0} + c·1{r ≤ 0}`.
///
/// Both indicators fire at `r = 0`, so the value there can be `1 + c`.
pub fn loss_01c(f_val: f64, r_val: f64, y: Label, c: f64) -> Result<f64> {
    check_cost(c, "c")?;
    Ok(loss_01c_unchecked(f_val, r_val, y, c))
}

pub(crate) fn loss_01c_unchecked(f_val: f64, r_val: f64, y: Label, c: f64) -> f64 {
    let wrong = y.value() * f_val <= 0.0;
    let accepted = r_val >= 0.0;
    let rejected = r_val <= 0.0;
    f64::from(u8::from(wrong && accepted)) + c * f64::from(u8::from(rejected))
}

/// Max-hinge loss `max(1 + α/2·(r − y·f), c·(1 − β·r), 0)`.
pub fn loss_mh(f_val: f64, r_val: f64, y: Label, p: &SurrogateParams) -> f64 {
    let (a, b) = mh_branches(f_val, r_val, y, p);
    a.max(b).max(0.0)
}

/// The classification and rejection branches of the max-hinge loss.
pub fn mh_branches(f_val: f64, r_val: f64, y: Label, p: &SurrogateParams) -> (f64, f64) {
    (
        1.0 + p.alpha / 2.0 * (r_val - y.value() * f_val),
        p.c * (1.0 - p.beta * r_val),
    )
}

/// Worst-case branch values of the max-hinge loss over an L∞ ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvTerms {
    pub a_tilde: f64,
    pub b_tilde: f64,
}

impl AdvTerms {
    pub fn loss(&self) -> f64 {
        self.a_tilde.max(self.b_tilde).max(0.0)
    }
}

/// Closed-form worst case over `‖δ‖∞ ≤ ε` for a model linear in the features `phi`:
///
/// - `Ã = 1 + α/2·(y⟨φ, ζ(y)⟩ + y·ζ_b + ε‖ζ(y)‖₁)`
/// - `B̃ = c·(1 − β·(⟨φ, θ⟩ + b_θ − ε‖θ‖₁))`
///
/// The rejection branch depends on `r` only, so it uses the rejector weights `θ`.
pub fn adv_terms_linear(m: &RejectionModel, phi: &[f64], y: Label, eps: f64, p: &SurrogateParams) -> Result<AdvTerms> {
    if !(eps >= 0.0) {
        return Err(AtroError::config("eps", "must be non-negative"));
    }
    if phi.len() != m.feature_dim() {
        return Err(AtroError::DimensionMismatch {
            expected: m.feature_dim(),
            got: phi.len(),
        });
    }
    Ok(adv_terms_unchecked(m, phi, y, eps, p))
}

pub(crate) fn adv_terms_unchecked(
    m: &RejectionModel,
    phi: &[f64],
    y: Label,
    eps: f64,
    p: &SurrogateParams,
) -> AdvTerms {
    // r − y·f equals y·(⟨φ, ζ⟩ + ζ_b); computing it from the scores keeps
    // the ε = 0 case bit-identical to `loss_mh`.
    let (f, r) = m.scores(phi);
    let margin = r - y.value() * f;
    let zeta = m.zeta(y);
    AdvTerms {
        a_tilde: 1.0 + p.alpha / 2.0 * (margin + eps * l1(&zeta)),
        b_tilde: p.c * (1.0 - p.beta * (r - eps * l1(&m.theta))),
    }
}

/// `max(Ã, B̃, 0)`: the exact maximum of `loss_mh` over the ball for linear models.
pub fn adv_loss_mh_linear(m: &RejectionModel, phi: &[f64], y: Label, eps: f64, p: &SurrogateParams) -> Result<f64> {
    Ok(adv_terms_linear(m, phi, y, eps, p)?.loss())
}

/// Plain hinge `max(0, 1 − y·f)`.
pub fn hinge(f_val: f64, y: Label) -> f64 {
    (1.0 - y.value() * f_val).max(0.0)
}

/// Worst-case hinge of a linear classifier: `max(0, 1 − y·f(φ) + ε‖γ‖₁)`.
pub fn adv_hinge_linear(m: &RejectionModel, phi: &[f64], y: Label, eps: f64) -> f64 {
    let f = dot(phi, &m.gamma) + m.bias_gamma;
    (1.0 - y.value() * f + eps * l1(&m.gamma)).max(0.0)
}

/// Convex, non-decreasing upper bounds of the step `1{u ≥ 0}` used for `Φ` and `Ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateFn {
    /// `u ↦ max(1 + u, 0)`
    #[default]
    Hinge,
    /// `u ↦ max(1 + u, 0)²`
    SquaredHinge,
}

impl SurrogateFn {
    pub fn eval(self, u: f64) -> f64 {
        let h = (1.0 + u).max(0.0);
        match self {
            SurrogateFn::Hinge => h,
            SurrogateFn::SquaredHinge => h * h,
        }
    }
}

/// `Φ(α/2·(r − y·f)) + c·Ψ(−β·r)`.
pub fn surrogate_conv(
    f_val: f64,
    r_val: f64,
    y: Label,
    p: &SurrogateParams,
    phi_fn: SurrogateFn,
    psi_fn: SurrogateFn,
) -> f64 {
    phi_fn.eval(p.alpha / 2.0 * (r_val - y.value() * f_val)) + p.c * psi_fn.eval(-p.beta * r_val)
}

/// Adversarial version of [`surrogate_conv`] for linear models: each term
/// takes its own worst case over the ball.
pub fn adv_surrogate_conv_linear(
    m: &RejectionModel,
    phi: &[f64],
    y: Label,
    eps: f64,
    p: &SurrogateParams,
    phi_fn: SurrogateFn,
    psi_fn: SurrogateFn,
) -> f64 {
    let (f, r) = m.scores(phi);
    let margin = r - y.value() * f + eps * l1(&m.zeta(y));
    let r_worst = r - eps * l1(&m.theta);
    phi_fn.eval(p.alpha / 2.0 * margin) + p.c * psi_fn.eval(-p.beta * r_worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: SurrogateParams = SurrogateParams {
        alpha: 1.0,
        beta: 1.0,
        c: 0.3,
    };

    #[test]
    fn zero_one_c_cases() {
        assert_eq!(loss_01c(2.0, 1.0, Label::Pos, 0.3).unwrap(), 0.0);
        assert_eq!(loss_01c(2.0, -1.0, Label::Pos, 0.3).unwrap(), 0.3);
        assert_eq!(loss_01c(-2.0, 1.0, Label::Pos, 0.3).unwrap(), 1.0);
        assert_eq!(loss_01c(-2.0, 0.0, Label::Pos, 0.3).unwrap(), 1.3);
        assert!(loss_01c(1.0, 1.0, Label::Pos, 0.5).is_err());
        assert!(loss_01c(1.0, 1.0, Label::Pos, 0.0).is_err());
    }

    #[test]
    fn max_hinge_values() {
        assert_eq!(loss_mh(0.0, 0.0, Label::Pos, &P), 1.0);
        // max(1 + 0.5·(−3 − 4), 0.3·(1 + 3), 0) = max(−2.5, 1.2, 0)
        assert!((loss_mh(4.0, -3.0, Label::Pos, &P) - 1.2).abs() < 1e-15);
        // max(1 + 0.5·(10 − 10), 0.3·(1 − 10), 0) = max(1, −2.7, 0)
        assert_eq!(loss_mh(10.0, 10.0, Label::Pos, &P), 1.0);
    }

    #[test]
    fn closed_form_terms() {
        let m = RejectionModel::linear(vec![1.0, -1.0], vec![2.0, 0.0]).unwrap();
        let x = [1.0, 1.0];
        let t = adv_terms_linear(&m, &x, Label::Pos, 0.1, &P).unwrap();
        assert!((t.a_tilde - 0.1).abs() < 1e-12, "{t:?}");
        assert!((t.b_tilde - 0.36).abs() < 1e-12, "{t:?}");
        assert!((t.loss() - 0.36).abs() < 1e-12);

        let t = adv_terms_linear(&m, &x, Label::Neg, 0.1, &P).unwrap();
        assert!((t.a_tilde - 2.2).abs() < 1e-12, "{t:?}");

        assert!(adv_terms_linear(&m, &x, Label::Pos, -0.1, &P).is_err());
        assert!(adv_terms_linear(&m, &[1.0], Label::Pos, 0.1, &P).is_err());
    }

    #[test]
    fn zero_radius_is_clean_loss() {
        let m = RejectionModel::new(
            crate::model::FeatureMap::identity(2),
            vec![1.0, -1.0],
            vec![2.0, 0.0],
            0.25,
            -0.5,
        )
        .unwrap();
        for (x, y) in [([1.0, 1.0], Label::Pos), ([-0.3, 2.0], Label::Neg)] {
            let (f, r) = m.scores(&x);
            let (a, b) = mh_branches(f, r, y, &P);
            let t = adv_terms_linear(&m, &x, y, 0.0, &P).unwrap();
            assert_eq!((t.a_tilde, t.b_tilde), (a, b));
            assert_eq!(adv_loss_mh_linear(&m, &x, y, 0.0, &P).unwrap(), loss_mh(f, r, y, &P));
        }
    }

    #[test]
    fn hinge_floor() {
        let t = AdvTerms {
            a_tilde: -1.0,
            b_tilde: -0.2,
        };
        assert_eq!(t.loss(), 0.0);
    }

    #[test]
    fn conv_surrogate_values() {
        let v = surrogate_conv(0.0, 0.0, Label::Pos, &P, SurrogateFn::Hinge, SurrogateFn::Hinge);
        assert!((v - 1.3).abs() < 1e-15);
        let far = surrogate_conv(1e6, 1e3, Label::Pos, &P, SurrogateFn::Hinge, SurrogateFn::Hinge);
        assert_eq!(far, 0.0);
        // hinge/hinge is the sum of the two max-hinge branches (clipped at 0)
        for (f, r) in [(0.3, -0.7), (-2.0, 0.4), (5.0, 1.0)] {
            let s = surrogate_conv(f, r, Label::Neg, &P, SurrogateFn::Hinge, SurrogateFn::Hinge);
            assert!(s >= loss_mh(f, r, Label::Neg, &P));
        }
    }
}
