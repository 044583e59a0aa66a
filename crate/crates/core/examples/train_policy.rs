//! Train a small neural policy with DPO and token-level ADPO on the default
//! synthetic task and compare their logs.
//!
//! Pass a step count as the first argument (default 300).

use adpo::composition::Family;
use adpo::data::{generate_dataset, GroundTruthTask, Labeling};
use adpo::lm::{AnyPolicy, ModelSpec};
use adpo::losses::LossConfig;
use adpo::rng;
use adpo::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(300);
    let task = GroundTruthTask::default();
    let data = generate_dataset(&task, 256, Labeling::Deterministic)?;
    let spec = ModelSpec::Neural {
        context: 8,
        embed_dim: 16,
        hidden_dim: 16,
    };
    let cfg = TrainConfig {
        steps,
        eval_every: 50,
        cache_reference: true,
        ..TrainConfig::default()
    };

    for (name, loss) in [
        ("dpo", LossConfig::dpo(0.5)),
        ("adpo k=1", LossConfig::adpo(Family::Static { k: 1 }, 0.5)),
    ] {
        let init = AnyPolicy::init(task.vocab()?, &spec, &mut rng::child(0, rng::INIT_STREAM))?;
        let out = train(&data, init, &loss, &cfg, "example")?;
        println!("{name}");
        for r in &out.log.rows {
            println!(
                "  step {:>5}  loss {:.4}  acc {:.3}  chosen {:+.2}  rejected {:+.2}",
                r.step, r.loss, r.accuracy, r.chosen_logp, r.rejected_logp
            );
        }
    }
    Ok(())
}
