//! Rejection-aware evaluation.
//!
//! Each sample is perturbed first, then decided. Outcomes follow
//! error-prevention semantics: a rejection is *true* when the classifier
//! would have been wrong on the perturbed input.
//!
//! | decision | classifier on perturbed input | outcome |
//! |----------|-------------------------------|---------|
//! | reject   | wrong                         | TR      |
//! | reject   | right                         | FR      |
//! | accept   | right                         | TA      |
//! | accept   | wrong                         | FA      |
//!
//! `Err = FA / total`, `Rej = (TR + FR) / total`, `PR = TR / (TR + FR)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attack::{self, AttackMethod, AttackSpec, Candidate, WorstCase};
use crate::error::{AtroError, Result};
use crate::ingest::{self, Dataset, NormScheme};
use crate::linalg::{mean, std_dev};
use crate::loss::{self, SurrogateParams};
use crate::model::RejectionModel;
use crate::seed;
use crate::solver::{self, TrainConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectConfusion {
    pub ta: u64,
    pub tr: u64,
    pub fa: u64,
    pub fr: u64,
}

impl RejectConfusion {
    pub fn total(&self) -> u64 {
        self.ta + self.tr + self.fa + self.fr
    }

    pub fn merge(&self, other: &RejectConfusion) -> RejectConfusion {
        RejectConfusion {
            ta: self.ta + other.ta,
            tr: self.tr + other.tr,
            fa: self.fa + other.fa,
            fr: self.fr + other.fr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub err: f64,
    pub rej: f64,
    /// `None` when nothing was rejected.
    pub pr: Option<f64>,
}

pub fn metrics(conf: &RejectConfusion) -> Result<Metrics> {
    let total = conf.total();
    if total == 0 {
        return Err(AtroError::EmptyDataset);
    }
    let n = total as f64;
    let rejected = conf.tr + conf.fr;
    Ok(Metrics {
        err: conf.fa as f64 / n,
        rej: rejected as f64 / n,
        pr: (rejected > 0).then(|| conf.tr as f64 / rejected as f64),
    })
}

/// Worst-case perturbation of one featurized sample under `attack`.
///
/// The clean point is always a candidate, so the returned 0-1-c loss is never
/// below the clean loss.
pub fn attack_sample(
    m: &RejectionModel,
    phi: &[f64],
    y: ingest::Label,
    attack: &AttackSpec,
    p: &SurrogateParams,
) -> Result<WorstCase> {
    let spec = match attack.method {
        AttackMethod::None => AttackSpec { eps: 0.0, ..*attack },
        _ => *attack,
    };
    let with_analytic = spec.method == AttackMethod::AnalyticLinear;
    attack::candidate_set(m, phi, y, p, &spec, with_analytic)
}

/// Per-sample outcome counts plus the attack bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcomes {
    pub counts: RejectConfusion,
    pub wins: BTreeMap<Candidate, u64>,
    pub mean_loss_01c: f64,
    pub clean_mean_loss_01c: f64,
}

pub fn classify_outcomes(
    m: &RejectionModel,
    ds: &Dataset,
    attack: &AttackSpec,
    p: &SurrogateParams,
) -> Result<Outcomes> {
    attack.validate("attack.")?;
    p.validate("")?;
    if ds.is_empty() {
        return Err(AtroError::EmptyDataset);
    }
    let mut counts = RejectConfusion::default();
    let mut wins = BTreeMap::new();
    let (mut loss_sum, mut clean_sum) = (0.0, 0.0);
    for s in &ds.samples {
        let phi = m.featurize(&s.x)?;
        let (f0, r0) = m.scores(&phi);
        clean_sum += loss::loss_01c_unchecked(f0, r0, s.y, p.c);
        let worst = attack_sample(m, &phi, s.y, attack, p)?;
        loss_sum += worst.loss;
        *wins.entry(worst.winner).or_insert(0) += 1;
        let perturbed = crate::linalg::add(&phi, &worst.delta);
        let d = m.decide_features(&perturbed);
        let wrong = d.classifier_label() != s.y;
        match (d.is_reject(), wrong) {
            (true, true) => counts.tr += 1,
            (true, false) => counts.fr += 1,
            (false, false) => counts.ta += 1,
            (false, true) => counts.fa += 1,
        }
    }
    let n = ds.len() as f64;
    Ok(Outcomes {
        counts,
        wins,
        mean_loss_01c: loss_sum / n,
        clean_mean_loss_01c: clean_sum / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub err: f64,
    pub rej: f64,
    pub pr: Option<f64>,
    pub counts: RejectConfusion,
    pub attack: AttackSpec,
    pub wins: BTreeMap<Candidate, u64>,
    pub mean_loss_01c: f64,
    pub clean_mean_loss_01c: f64,
}

pub fn evaluate(m: &RejectionModel, ds: &Dataset, attack: &AttackSpec, p: &SurrogateParams) -> Result<EvalReport> {
    let o = classify_outcomes(m, ds, attack, p)?;
    let mt = metrics(&o.counts)?;
    Ok(EvalReport {
        err: mt.err,
        rej: mt.rej,
        pr: mt.pr,
        counts: o.counts,
        attack: *attack,
        wins: o.wins,
        mean_loss_01c: o.mean_loss_01c,
        clean_mean_loss_01c: o.clean_mean_loss_01c,
    })
}

/// A named training recipe in a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    pub config: TrainConfig,
}

impl MethodSpec {
    pub fn new(config: TrainConfig) -> Self {
        Self {
            name: config.mode.name().to_string(),
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub trials: usize,
    /// Training samples per trial; the rest of the data is the test set.
    pub n_train: usize,
    pub attack_eps: Vec<f64>,
    pub attack_method: AttackMethod,
    pub normalization: NormScheme,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            trials: 10,
            n_train: 500,
            attack_eps: vec![0.0, 0.001, 0.01, 0.1],
            attack_method: AttackMethod::AnalyticLinear,
            normalization: NormScheme::Minmax01,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.trials == 0 {
            return Err(AtroError::config(format!("{prefix}trials"), "must be at least 1"));
        }
        if self.attack_eps.is_empty() {
            return Err(AtroError::config(format!("{prefix}attack_eps"), "must not be empty"));
        }
        if let Some(e) = self.attack_eps.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return Err(AtroError::config(
                format!("{prefix}attack_eps"),
                format!("entries must be non-negative, got {e}"),
            ));
        }
        Ok(())
    }
}

/// One `(method, cost, attack ε)` cell aggregated over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub method: String,
    /// `None` for methods without rejection.
    pub cost: Option<f64>,
    pub attack_eps: f64,
    pub err_mean: f64,
    pub err_std: f64,
    pub rej_mean: f64,
    pub rej_std: f64,
    pub loss_01c_mean: f64,
    pub clean_loss_01c_mean: f64,
    pub err: Vec<f64>,
    pub rej: Vec<f64>,
    /// Per-trial attacked and clean mean 0-1-c loss.
    pub loss_01c: Vec<f64>,
    pub clean_loss_01c: Vec<f64>,
    pub wins: BTreeMap<Candidate, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub dataset: String,
    pub config: BenchConfig,
    pub cells: Vec<BenchCell>,
}

/// Multi-trial protocol: per trial, draw a seeded train/test split, fit
/// normalization on the training side, train every method, and evaluate each
/// model on the test side under every attack radius.
pub fn benchmark(methods: &[MethodSpec], ds: &Dataset, cfg: &BenchConfig) -> Result<BenchTable> {
    if methods.is_empty() {
        return Err(AtroError::config("methods", "must not be empty"));
    }
    cfg.validate("bench.")?;
    let mut per_cell: Vec<Vec<(EvalReport, f64)>> = vec![Vec::new(); methods.len() * cfg.attack_eps.len()];
    for t in 0..cfg.trials {
        let trial_seed = seed::derive_indexed(cfg.seed, "trial", t as u64);
        let (train_raw, test_raw) = ingest::split_count(ds, cfg.n_train, seed::derive(trial_seed, "split"))?;
        let (train_set, stats) = ingest::normalize(&train_raw, cfg.normalization)?;
        let test_set = stats.apply(&test_raw)?;
        for (mi, method) in methods.iter().enumerate() {
            let tc = TrainConfig {
                seed: seed::derive(trial_seed, "init"),
                ..method.config.clone()
            };
            let (mut model, _) = solver::train(&train_set, &tc)?;
            model.norm_stats = Some(stats.clone());
            let p = tc.params();
            for (ei, &eps) in cfg.attack_eps.iter().enumerate() {
                let spec = AttackSpec {
                    method: if eps == 0.0 {
                        AttackMethod::None
                    } else {
                        cfg.attack_method
                    },
                    eps,
                    ..AttackSpec::default()
                };
                let report = evaluate(&model, &test_set, &spec, &p)?;
                per_cell[mi * cfg.attack_eps.len() + ei].push((report, eps));
            }
        }
    }
    let mut cells = Vec::with_capacity(per_cell.len());
    for (mi, method) in methods.iter().enumerate() {
        for (ei, &eps) in cfg.attack_eps.iter().enumerate() {
            let reports = &per_cell[mi * cfg.attack_eps.len() + ei];
            let err: Vec<f64> = reports.iter().map(|(r, _)| r.err).collect();
            let rej: Vec<f64> = reports.iter().map(|(r, _)| r.rej).collect();
            let loss_01c: Vec<f64> = reports.iter().map(|(r, _)| r.mean_loss_01c).collect();
            let clean_loss_01c: Vec<f64> = reports.iter().map(|(r, _)| r.clean_mean_loss_01c).collect();
            let mut wins = BTreeMap::new();
            for (r, _) in reports {
                for (k, v) in &r.wins {
                    *wins.entry(*k).or_insert(0) += v;
                }
            }
            cells.push(BenchCell {
                method: method.name.clone(),
                cost: method.config.mode.has_rejection().then_some(method.config.c),
                attack_eps: eps,
                err_mean: mean(&err),
                err_std: std_dev(&err),
                rej_mean: mean(&rej),
                rej_std: std_dev(&rej),
                loss_01c_mean: mean(&loss_01c),
                clean_loss_01c_mean: mean(&clean_loss_01c),
                err,
                rej,
                loss_01c,
                clean_loss_01c,
                wins,
            });
        }
    }
    Ok(BenchTable {
        dataset: ds.name.clone(),
        config: cfg.clone(),
        cells,
    })
}

impl BenchTable {
    pub fn cell(&self, method: &str, cost: Option<f64>, attack_eps: f64) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.cost == cost && c.attack_eps == attack_eps)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "dataset,method,cost,attack_eps,err_mean,err_std,rej_mean,rej_std,loss01c_mean,clean_loss01c_mean\n",
        );
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                self.dataset,
                c.method,
                c.cost.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                c.attack_eps,
                c.err_mean,
                c.err_std,
                c.rej_mean,
                c.rej_std,
                c.loss_01c_mean,
                c.clean_loss_01c_mean,
            );
        }
        out
    }

    /// Text layout: one row per (method, cost), column groups per attack radius.
    pub fn to_text(&self) -> String {
        let mut radii: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !radii.contains(&c.attack_eps) {
                radii.push(c.attack_eps);
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "Dataset: {}", self.dataset);
        let _ = write!(out, "{:<8} {:<5}", "Method", "Cost");
        for e in &radii {
            let _ = write!(out, " | {:^27}", format!("Attack eps={e}"));
        }
        out.push('\n');
        let _ = write!(out, "{:<8} {:<5}", "", "");
        for _ in &radii {
            let _ = write!(out, " | {:>6} {:>6} {:>6} {:>6}", "Err", "Std", "Rej", "Std");
        }
        out.push('\n');
        let mut last_method = String::new();
        let mut seen: Vec<(String, Option<f64>)> = Vec::new();
        for c in &self.cells {
            let key = (c.method.clone(), c.cost);
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            let label = if c.method == last_method { "" } else { c.method.as_str() };
            let cost = c.cost.map(|v| format!("{v}")).unwrap_or_else(|| "-".into());
            let _ = write!(out, "{label:<8} {cost:<5}");
            for e in &radii {
                if let Some(cell) = self.cell(&c.method, c.cost, *e) {
                    if cell.cost.is_some() {
                        let _ = write!(
                            out,
                            " | {:>6.3} {:>6.3} {:>6.3} {:>6.3}",
                            cell.err_mean, cell.err_std, cell.rej_mean, cell.rej_std
                        );
                    } else {
                        let _ = write!(
                            out,
                            " | {:>6.3} {:>6.3} {:>6} {:>6}",
                            cell.err_mean, cell.err_std, "-", "-"
                        );
                    }
                }
            }
            out.push('\n');
            last_method = c.method.clone();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Label, LabeledSample};
    use crate::model::FeatureMap;

    fn ds() -> Dataset {
        Dataset::new(
            "t",
            vec![
                LabeledSample {
                    x: vec![1.0],
                    y: Label::Pos,
                },
                LabeledSample {
                    x: vec![2.0],
                    y: Label::Pos,
                },
                LabeledSample {
                    x: vec![-1.0],
                    y: Label::Neg,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn metric_arithmetic() {
        let m = metrics(&RejectConfusion {
            ta: 70,
            tr: 10,
            fa: 15,
            fr: 5,
        })
        .unwrap();
        assert!((m.err - 0.15).abs() < 1e-15);
        assert!((m.rej - 0.15).abs() < 1e-15);
        assert!((m.pr.unwrap() - 2.0 / 3.0).abs() < 1e-15);

        let m = metrics(&RejectConfusion {
            ta: 5,
            tr: 0,
            fa: 1,
            fr: 0,
        })
        .unwrap();
        assert_eq!(m.pr, None);
        assert_eq!(m.rej, 0.0);

        let m = metrics(&RejectConfusion {
            ta: 0,
            tr: 3,
            fa: 0,
            fr: 4,
        })
        .unwrap();
        assert_eq!((m.err, m.rej), (0.0, 1.0));

        assert!(metrics(&RejectConfusion::default()).is_err());
    }

    #[test]
    fn accept_all_correct() {
        let m = RejectionModel::without_rejector(FeatureMap::identity(1), vec![1.0], 0.0).unwrap();
        let o = classify_outcomes(&m, &ds(), &AttackSpec::none(), &SurrogateParams::default()).unwrap();
        assert_eq!(
            o.counts,
            RejectConfusion {
                ta: 3,
                tr: 0,
                fa: 0,
                fr: 0
            }
        );
    }

    #[test]
    fn reject_all_wrong() {
        let m = RejectionModel::new(FeatureMap::identity(1), vec![0.0], vec![-1.0], -1.0, 0.0).unwrap();
        let o = classify_outcomes(&m, &ds(), &AttackSpec::none(), &SurrogateParams::default()).unwrap();
        assert_eq!(
            o.counts,
            RejectConfusion {
                ta: 0,
                tr: 3,
                fa: 0,
                fr: 0
            }
        );
        assert!((o.mean_loss_01c - 0.3).abs() < 1e-15);
    }

    #[test]
    fn mixed_partition_and_attack_dominance() {
        let m = RejectionModel::new(FeatureMap::identity(1), vec![1.0], vec![1.0], -0.5, 0.2).unwrap();
        let p = SurrogateParams::default();
        let clean = classify_outcomes(&m, &ds(), &AttackSpec::none(), &p).unwrap();
        assert_eq!(clean.counts.total(), 3);
        let attacked = classify_outcomes(&m, &ds(), &AttackSpec::analytic(0.6), &p).unwrap();
        assert_eq!(attacked.counts.total(), 3);
        assert!(attacked.mean_loss_01c >= clean.mean_loss_01c);
        assert_eq!(attacked.clean_mean_loss_01c, clean.mean_loss_01c);
    }

    #[test]
    fn dimension_mismatch() {
        let m = RejectionModel::linear(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            classify_outcomes(&m, &ds(), &AttackSpec::none(), &SurrogateParams::default()),
            Err(AtroError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_trial_has_zero_std() {
        let data = ingest::synthetic::two_clusters(40, 2, 3.0, 0.7, 2);
        let cfg = BenchConfig {
            trials: 1,
            n_train: 30,
            attack_eps: vec![0.0, 0.1],
            ..BenchConfig::default()
        };
        let methods = [MethodSpec::new(TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        })];
        let t = benchmark(&methods, &data, &cfg).unwrap();
        assert_eq!(t.cells.len(), 2);
        assert!(t.cells.iter().all(|c| c.err_std == 0.0 && c.rej_std == 0.0));
        assert!(t.to_csv().lines().count() == 3);
        assert!(t.to_text().contains("ATRO"));
        assert!(benchmark(&[], &data, &cfg).is_err());
        assert!(benchmark(
            &methods,
            &data,
            &BenchConfig {
                attack_eps: vec![],
                ..cfg
            }
        )
        .is_err());
    }
}
