//! Seeded toy datasets for tests and the neural experiments.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Label, LabeledSample};
use crate::seed;

/// Two isotropic Gaussian clusters in `d` dimensions centred at `±separation/2 · e₁`,
/// alternating labels. Overlap is controlled by `std`.
pub fn two_clusters(n: usize, d: usize, separation: f64, std: f64, seed: u64) -> Dataset {
    assert!(d >= 1 && n >= 1);
    let mut rng = seed::rng(seed);
    let noise = Normal::new(0.0, std).expect("std must be finite and non-negative");
    let samples = (0..n)
        .map(|i| {
            let y = if i % 2 == 0 { Label::Pos } else { Label::Neg };
            let mut x: Vec<f64> = (0..d).map(|_| noise.sample(&mut rng)).collect();
            x[0] += y.value() * separation / 2.0;
            LabeledSample { x, y }
        })
        .collect();
    Dataset {
        name: format!("two-clusters-{seed}"),
        d,
        samples,
    }
}

/// Classic interleaving half-moons in 2-D with Gaussian jitter.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = seed::rng(seed);
    let jitter = Normal::new(0.0, noise).expect("noise must be finite and non-negative");
    let samples = (0..n)
        .map(|i| {
            let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let (y, mut x) = if i % 2 == 0 {
                (Label::Pos, vec![t.cos(), t.sin()])
            } else {
                (Label::Neg, vec![1.0 - t.cos(), 0.5 - t.sin()])
            };
            for v in &mut x {
                *v += jitter.sample(&mut rng);
            }
            LabeledSample { x, y }
        })
        .collect();
    Dataset {
        name: format!("two-moons-{seed}"),
        d: 2,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_balanced() {
        let a = two_clusters(400, 2, 2.0, 1.0, 5);
        assert_eq!(a, two_clusters(400, 2, 2.0, 1.0, 5));
        assert_ne!(a, two_clusters(400, 2, 2.0, 1.0, 6));
        let pos = a.samples.iter().filter(|s| s.y == Label::Pos).count();
        assert_eq!(pos, 200);
        let m = two_moons(50, 0.1, 1);
        assert_eq!(m.d, 2);
        assert_eq!(m.len(), 50);
    }
}
