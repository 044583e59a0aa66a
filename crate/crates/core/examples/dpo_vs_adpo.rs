//! DPO against its segmented variants on one batch of log-ratios.
//!
//! Adaptive segmentation with a single part and a static window wider than
//! both sides give back DPO exactly; finer segmentations do not.

use adpo::autodiff::Graph;
use adpo::composition::Family;
use adpo::losses::{preference_loss, LogRatioBatch, LossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss_value(cfg: &LossConfig, pairs: &[(Vec<f64>, Vec<f64>)], scores: Option<&[Vec<f64>]>) -> f64 {
    let mut g = Graph::new();
    let batch = LogRatioBatch::constants(&mut g, pairs, scores, cfg.beta);
    let lens: Vec<_> = pairs.iter().map(|(w, l)| (w.len(), l.len())).collect();
    let out = preference_loss(&mut g, &batch, cfg, &lens).expect("valid batch");
    g.value(out).item()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..8)
        .map(|_| {
            let side = |rng: &mut ChaCha8Rng| {
                let n = rng.random_range(1..=12);
                (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            (side(&mut rng), side(&mut rng))
        })
        .collect();
    let beta = 1.0;
    let dpo = loss_value(&LossConfig::dpo(beta), &pairs, None);
    println!("dpo                    {dpo:.15}");

    for (name, family) in [
        ("adaptive m=1", Family::Adaptive { m: 1 }),
        ("static k=12", Family::Static { k: 12 }),
        ("adaptive m=4", Family::Adaptive { m: 4 }),
        ("static k=1", Family::Static { k: 1 }),
    ] {
        let v = loss_value(&LossConfig::adpo(family, beta), &pairs, None);
        println!("adpo {name:<17} {v:.15}  diff {:.1e}", (v - dpo).abs());
    }

    let zeros: Vec<Vec<f64>> = pairs.iter().map(|(_, l)| vec![0.0; l.len()]).collect();
    let family = Family::Static { k: 2 };
    let adpo = loss_value(&LossConfig::adpo(family, beta), &pairs, None);
    let cadpo = loss_value(&LossConfig::cadpo(family, beta), &pairs, Some(&zeros));
    println!("cadpo with zero scores vs adpo: diff {:.1e}", (adpo - cadpo).abs());
}
