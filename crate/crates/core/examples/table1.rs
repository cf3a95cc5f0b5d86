//! Runs the ATRO vs MH comparison on a LIBSVM file.
//!
//! usage: table1 <file.libsvm> [rff_dim] [bandwidth] [lambda] [epochs] [trials] [eta0] [quick]

use atro::eval::{benchmark, BenchConfig, MethodSpec};
use atro::ingest::parse_libsvm;
use atro::model::FeatureMapSpec;
use atro::solver::{TrainConfig, TrainMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let path = args.get(1).ok_or("missing dataset path")?;
    let arg = |i: usize, d: f64| {
        args.get(i)
            .map(|s| s.parse::<f64>())
            .transpose()
            .map(|v| v.unwrap_or(d))
    };
    let dim = arg(2, 100.0)? as usize;
    let bandwidth = arg(3, 0.3)?;
    let lambda = arg(4, 1e-3)?;
    let epochs = arg(5, 5000.0)? as usize;
    let trials = arg(6, 10.0)? as usize;
    let eta0 = arg(7, 1000.0)?;

    let ds = parse_libsvm(&std::fs::read_to_string(path)?)?;
    let feature_map = if dim == 0 {
        FeatureMapSpec::Identity
    } else {
        FeatureMapSpec::RandomFourier {
            dim,
            bandwidth,
            seed: None,
        }
    };
    let base = TrainConfig {
        lambda,
        lambda_prime: lambda,
        epochs,
        eta0,
        feature_map,
        ..TrainConfig::default()
    };
    let mut methods = Vec::new();
    let quick = args.get(8).is_some_and(|s| s == "quick");
    let costs: &[f64] = if quick { &[0.2] } else { &[0.2, 0.3, 0.4] };
    for &c in costs {
        methods.push(MethodSpec::new(TrainConfig {
            mode: TrainMode::Atro,
            c,
            eps: 0.001,
            ..base.clone()
        }));
        methods.push(MethodSpec::new(TrainConfig {
            mode: TrainMode::Mh,
            c,
            eps: 0.0,
            ..base.clone()
        }));
    }
    if !quick {
        methods.push(MethodSpec::new(TrainConfig {
            mode: TrainMode::At,
            eps: 0.001,
            ..base.clone()
        }));
        methods.push(MethodSpec::new(TrainConfig {
            mode: TrainMode::Svm,
            eps: 0.0,
            ..base
        }));
    }
    let cfg = BenchConfig {
        trials,
        n_train: 500,
        attack_eps: if quick {
            vec![0.001, 0.01]
        } else {
            vec![0.0, 0.001, 0.01, 0.1]
        },
        ..BenchConfig::default()
    };
    let table = benchmark(&methods, &ds, &cfg)?;
    print!("{}", table.to_text());
    Ok(())
}
