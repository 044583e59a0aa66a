//! Implicit prefix-reward profile of a briefly trained policy: reward
//! variance and chosen-minus-rejected margin per normalized position bin.

use adpo::data::{generate_dataset, GroundTruthTask, Labeling};
use adpo::lm::{clone_frozen, AnyPolicy, ModelSpec};
use adpo::losses::LossConfig;
use adpo::rng;
use adpo::trainer::{prefix_reward_profile, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let task = GroundTruthTask::default();
    let data = generate_dataset(&task, 128, Labeling::Deterministic)?;
    let spec = ModelSpec::Neural {
        context: 8,
        embed_dim: 16,
        hidden_dim: 16,
    };
    let init = AnyPolicy::init(task.vocab()?, &spec, &mut rng::child(0, rng::INIT_STREAM))?;
    let reference = clone_frozen(&init);
    let cfg = TrainConfig {
        steps: 200,
        eval_every: 200,
        cache_reference: true,
        ..TrainConfig::default()
    };
    let out = train(&data, init, &LossConfig::dpo(0.5), &cfg, "example")?;
    let named = vec![("trained".to_string(), out.policy)];
    let profile = prefix_reward_profile(&named, &reference, &data, 0.5, 10)?;
    print!("{}", profile.to_csv());
    Ok(())
}
