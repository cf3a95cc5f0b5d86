//! Trains a defended and an undefended network on seeded 2-D clusters and
//! reports the attacked 0-1-c risk of each.
//!
//! usage: neural_toy [separation] [std] [eps_train] [epochs] [lr] [cost]

use atro::attack::AttackSpec;
use atro::ingest::synthetic::two_clusters;
use atro::neural::{evaluate_net, train_neural, NetAttackGoal, NeuralTrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| {
        args.get(i)
            .map(|s| s.parse::<f64>())
            .transpose()
            .map(|v| v.unwrap_or(d))
    };
    let separation = arg(1, 1.2)?;
    let std = arg(2, 0.2)?;
    let eps_train = arg(3, 0.1)?;
    let epochs = arg(4, 200.0)? as usize;
    let learning_rate = arg(5, 0.05)?;
    let c = arg(6, 0.3)?;
    for seed in 0..3u64 {
        let train = two_clusters(400, 2, separation, std, seed);
        let test = two_clusters(2000, 2, separation, std, 1000 + seed);
        let base = NeuralTrainConfig {
            epochs,
            learning_rate,
            c,
            seed,
            ..NeuralTrainConfig::default()
        };
        let defended = NeuralTrainConfig {
            attack: AttackSpec::pgd(eps_train, 10),
            ..base.clone()
        };
        let attack = AttackSpec::pgd(0.1, 20);
        let p = base.params();
        for (name, cfg) in [("plain", &base), ("atro", &defended)] {
            let (net, trace) = train_neural(&train, cfg)?;
            let clean = evaluate_net(&net, &test, &AttackSpec::none(), &p, NetAttackGoal::WorstOf)?;
            print!(
                "seed={seed} {name:5} loss={:.4} clean01c={:.3} clean_rej={:.3}",
                trace.epoch_loss.last().copied().unwrap_or(f64::NAN),
                clean.mean_loss_01c,
                clean.rej
            );
            for goal in [
                NetAttackGoal::Misclassify,
                NetAttackGoal::Surrogate,
                NetAttackGoal::WorstOf,
            ] {
                let adv = evaluate_net(&net, &test, &attack, &p, goal)?;
                print!(
                    " | {goal:?} 01c={:.4} err={:.4} rej={:.4}",
                    adv.mean_loss_01c, adv.err, adv.rej
                );
            }
            println!();
        }
    }
    Ok(())
}
