//! Sample a small labeled dataset, attach rejected-token scores and print it
//! as JSONL.

use adpo::data::{attach_scores, fit_score_models, generate_dataset, to_jsonl, GroundTruthTask, Labeling};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let task = GroundTruthTask {
        max_response_len: 8,
        ..GroundTruthTask::default()
    };
    let mut data = generate_dataset(&task, 4, Labeling::Deterministic)?;
    for p in &data {
        println!(
            "reward chosen {:+.2} rejected {:+.2}",
            task.reward(&p.prompt, &p.chosen),
            task.reward(&p.prompt, &p.rejected)
        );
    }
    let (pos, neg) = fit_score_models(task.vocab()?, &data, 1.0)?;
    attach_scores(&mut data, &pos, &neg)?;
    print!("{}", to_jsonl(&data));
    Ok(())
}
