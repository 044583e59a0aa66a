//! Central-difference gradient check of the DPO and ADPO losses with the
//! per-token log-ratios as the parameters.

use adpo::autodiff::{grad_check, Tensor};
use adpo::composition::Family;
use adpo::losses::{preference_loss, LogRatioBatch, LossConfig, PairLogRatios};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let chosen = Tensor::vector(vec![0.3, -0.7, 1.1, 0.05, -0.4]);
    let rejected = Tensor::vector(vec![-0.2, 0.9, 0.4]);
    let lens = [(chosen.len(), rejected.len())];

    let configs = [
        ("dpo", LossConfig::dpo(0.5)),
        ("adpo static k=1", LossConfig::adpo(Family::Static { k: 1 }, 0.5)),
        ("adpo static k=2", LossConfig::adpo(Family::Static { k: 2 }, 1.0)),
        ("adpo adaptive m=2", LossConfig::adpo(Family::Adaptive { m: 2 }, 1.5)),
    ];
    for (name, cfg) in configs {
        let report = grad_check(
            |g, vars| {
                let batch = LogRatioBatch {
                    pairs: vec![PairLogRatios {
                        chosen: vars[0],
                        rejected: vars[1],
                        rejected_scores: None,
                    }],
                    beta: cfg.beta,
                };
                Ok(preference_loss(g, &batch, &cfg, &lens).expect("valid batch"))
            },
            &[chosen.clone(), rejected.clone()],
            1e-5,
            1e-6,
        )?;
        println!(
            "{name:<20} coords {:>2}  max rel err {:.2e}  {}",
            report.coordinates,
            report.max_rel_error,
            if report.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
