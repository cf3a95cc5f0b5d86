use proptest::prelude::*;

use atro::attack::{AttackMethod, AttackSpec};
use atro::bounds::{self, BoundConfig};
use atro::eval;
use atro::ingest::{self, Dataset, Label, LabeledSample, NormScheme};
use atro::loss::{self, SurrogateFn, SurrogateParams};
use atro::model::{FeatureMap, RejectionModel};

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Pos), Just(Label::Neg)]
}

fn params() -> impl Strategy<Value = SurrogateParams> {
    (0.1f64..4.0, 0.1f64..4.0, 0.01f64..0.49).prop_map(|(alpha, beta, c)| SurrogateParams { alpha, beta, c })
}

fn model(d: usize) -> impl Strategy<Value = RejectionModel> {
    (
        prop::collection::vec(-3.0f64..3.0, d),
        prop::collection::vec(-3.0f64..3.0, d),
        -2.0f64..2.0,
        -2.0f64..2.0,
    )
        .prop_map(move |(t, g, bt, bg)| RejectionModel::new(FeatureMap::identity(d), t, g, bt, bg).unwrap())
}

fn model_and_point() -> impl Strategy<Value = (RejectionModel, Vec<f64>)> {
    (1usize..7).prop_flat_map(|d| (model(d), prop::collection::vec(-2.0f64..2.0, d)))
}

fn dataset(max_n: usize, max_d: usize) -> impl Strategy<Value = Dataset> {
    (1usize..=max_d).prop_flat_map(move |d| {
        prop::collection::vec((prop::collection::vec(-5.0f64..5.0, d), label()), 1..=max_n).prop_map(|rows| {
            let samples = rows.into_iter().map(|(x, y)| LabeledSample { x, y }).collect();
            Dataset::new("p", samples).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn libsvm_round_trip(ds in dataset(20, 6)) {
        let back = ingest::parse_libsvm(&ingest::to_libsvm(&ds)).unwrap();
        // trailing all-zero dimensions are not representable in sparse form
        prop_assert!(back.d <= ds.d);
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            prop_assert_eq!(a.y, b.y);
            prop_assert_eq!(&a.x[..back.d], &b.x[..]);
            prop_assert!(a.x[back.d..].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn split_is_a_seeded_partition(ds in dataset(40, 3), frac in 0.1f64..0.9, seed in any::<u64>()) {
        let (a, b) = match ingest::split(&ds, frac, seed) {
            Ok(v) => v,
            Err(e) => {
                // tiny sets can round to an empty side, which must be refused
                prop_assert!(matches!(e, atro::error::AtroError::InvalidSplit(_)), "{e}");
                return Ok(());
            }
        };
        let (a2, b2) = ingest::split(&ds, frac, seed).unwrap();
        prop_assert_eq!(&a, &a2);
        prop_assert_eq!(&b, &b2);
        prop_assert_eq!(a.len() + b.len(), ds.len());
        let mut all: Vec<String> = a.samples.iter().chain(&b.samples).map(|s| format!("{:?}", s)).collect();
        let mut orig: Vec<String> = ds.samples.iter().map(|s| format!("{:?}", s)).collect();
        all.sort();
        orig.sort();
        prop_assert_eq!(all, orig);
    }

    #[test]
    fn minmax_maps_training_data_into_unit_box(ds in dataset(30, 5)) {
        let (n, stats) = ingest::normalize(&ds, NormScheme::Minmax01).unwrap();
        for s in &n.samples {
            for (k, v) in s.x.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(v), "{v}");
                if stats.is_constant(k) {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }
        prop_assert_eq!(stats.apply(&ds).unwrap(), n);
    }

    #[test]
    fn zeta_rewrites_the_margin((m, phi) in model_and_point(), y in label()) {
        let (f, r) = m.scores(&phi);
        let zeta = m.zeta(y);
        let lin: f64 = phi.iter().zip(&zeta).map(|(a, b)| a * b).sum::<f64>() + m.zeta_bias(y);
        prop_assert!((r - y.value() * f - y.value() * lin).abs() < 1e-9);
    }

    #[test]
    fn surrogates_dominate_01c(f in -5.0f64..5.0, r in -5.0f64..5.0, y in label(), p in params()) {
        prop_assume!(r != 0.0);
        let target = loss::loss_01c(f, r, y, p.c).unwrap();
        prop_assert!(loss::loss_mh(f, r, y, &p) >= target);
        for a in [SurrogateFn::Hinge, SurrogateFn::SquaredHinge] {
            for b in [SurrogateFn::Hinge, SurrogateFn::SquaredHinge] {
                prop_assert!(loss::surrogate_conv(f, r, y, &p, a, b) >= target);
            }
        }
    }

    #[test]
    fn adversarial_loss_grows_with_eps(
        (m, phi) in model_and_point(), y in label(), p in params(), e1 in 0.0f64..1.0, e2 in 0.0f64..1.0,
    ) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let a = loss::adv_loss_mh_linear(&m, &phi, y, lo, &p).unwrap();
        let b = loss::adv_loss_mh_linear(&m, &phi, y, hi, &p).unwrap();
        prop_assert!(a <= b);
        let (f, r) = m.scores(&phi);
        prop_assert!(loss::loss_mh(f, r, y, &p) <= a);
    }

    #[test]
    fn closed_form_bounds_every_point_in_the_box(
        (m, phi) in model_and_point(), y in label(), p in params(), eps in 0.0f64..1.0,
        u in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let delta: Vec<f64> = u.iter().take(phi.len()).map(|v| v * eps).collect();
        let moved: Vec<f64> = phi.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let (f, r) = m.scores(&moved);
        let closed = loss::adv_loss_mh_linear(&m, &phi, y, eps, &p).unwrap();
        prop_assert!(loss::loss_mh(f, r, y, &p) <= closed + 1e-9);
    }

    #[test]
    fn evaluation_partitions_and_attacks_never_help(
        d in 1usize..4, seed in any::<u64>(), eps in 0.0f64..0.5, p in params(),
        method in prop_oneof![
            Just(AttackMethod::None), Just(AttackMethod::AnalyticLinear),
            Just(AttackMethod::Fgsm), Just(AttackMethod::Pgd)
        ],
    ) {
        let ds = ingest::synthetic::two_clusters(30, d, 1.0, 0.8, seed);
        let m = RejectionModel::new(
            FeatureMap::identity(d),
            (0..d).map(|k| 0.3 - 0.2 * k as f64).collect(),
            (0..d).map(|k| 1.0 - 0.5 * k as f64).collect(),
            0.1,
            0.0,
        ).unwrap();
        let spec = AttackSpec { method, eps, steps: 5, ..AttackSpec::default() };
        let r = eval::evaluate(&m, &ds, &spec, &p).unwrap();
        prop_assert_eq!(r.counts.total(), 30);
        prop_assert!(r.mean_loss_01c >= r.clean_mean_loss_01c);
        prop_assert!((r.err + r.rej) <= 1.0 + 1e-12);
        let again = eval::evaluate(&m, &ds, &spec, &p).unwrap();
        prop_assert_eq!(r, again);
    }

    #[test]
    fn bound_terms_are_nonnegative_and_eps_monotone(
        ds in dataset(15, 3), w in 0.1f64..5.0, e1 in 0.0f64..0.5, e2 in 0.0f64..0.5,
        p in prop_oneof![Just(1.0), Just(2.0), Just(f64::INFINITY)],
    ) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let cfg = |eps| BoundConfig { w: Some(w), p, eps, mc_draws: 50, ..BoundConfig::default() };
        let a = bounds::theorem1_bound(&ds, 0.3, &cfg(lo), 5).unwrap();
        let b = bounds::theorem1_bound(&ds, 0.3, &cfg(hi), 5).unwrap();
        for t in [a.rad_zeta, a.rad_gamma, a.eps_term, a.conf_term] {
            prop_assert!(t >= 0.0);
        }
        prop_assert!(a.total >= a.empirical_risk);
        prop_assert!(a.total <= b.total);
    }

    #[test]
    fn confidence_term_shrinks_with_n(delta in 0.001f64..0.5, n in 1usize..10_000) {
        prop_assert!(bounds::confidence_term(delta, n + 1) < bounds::confidence_term(delta, n));
    }

    #[test]
    fn dual_exponent_is_an_involution(p in 1.0f64..50.0) {
        let q = bounds::dual_exponent(p);
        let back = bounds::dual_exponent(q);
        prop_assert!((back - p).abs() <= 1e-9 * p.max(1.0) || (p == 1.0 && back == 1.0));
        if p > 1.0 {
            prop_assert!((1.0 / p + 1.0 / q - 1.0).abs() < 1e-12);
        }
    }
}
