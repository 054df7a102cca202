//! False-positive rate of the pairwise test on independent series.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use stgc::granger::{granger_test, GrangerConfig};

fn ar1(rng: &mut ChaCha8Rng, n: usize, phi: f64) -> Vec<f64> {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut x = vec![0.0; n];
    for t in 1..n {
        x[t] = phi * x[t - 1] + noise.sample(rng);
    }
    x
}

fn main() -> stgc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let trials = 2000;
    for m in [1, 2, 4] {
        let cfg = GrangerConfig {
            var_order: m,
            significance: 0.05,
        };
        let mut hits = 0;
        for _ in 0..trials {
            let x = ar1(&mut rng, 300, 0.6);
            let y = ar1(&mut rng, 300, 0.6);
            if granger_test(&x, &y, &cfg)?.significant {
                hits += 1;
            }
        }
        println!("m = {m}: rejected {hits} of {trials} ({:.3})", hits as f64 / trials as f64);
    }
    Ok(())
}
