//! End-to-end library walkthrough on the builtin toy model and the
//! synthetic echo task: optimize a prompt, compare against the random
//! selection ablation and the reasoning ablation, and evaluate accuracy.
//!
//!     cargo run --release -p promptgrad --example toy_run

use promptgrad::data::{synthetic_echo_dataset, EchoTaskConfig, Split};
use promptgrad::eval::evaluate;
use promptgrad::loss::hard_loss;
use promptgrad::model::Model;
use promptgrad::optimizer::{optimize, RunConfig, SelectionStrategy};
use promptgrad::reasoning::{generate_reasoning, ExtractionTemplate};

fn training_loss(
    model: &Model,
    dataset: &promptgrad::data::TaskDataset,
    config: &RunConfig,
    prompt_tokens: &[u32],
) -> f64 {
    let template =
        ExtractionTemplate::for_task(dataset.kind, dataset.extraction_template.as_deref()).unwrap();
    let decode = config.decode_config();
    let traces: Vec<_> = dataset
        .split(Split::Train)
        .iter()
        .map(|s| generate_reasoning(model, s, prompt_tokens, &template, &decode, false).unwrap())
        .collect();
    hard_loss(model, &traces, config.lambda).unwrap().total
}

fn main() {
    let model = Model::load("toy:v1", "cpu").unwrap();
    let decode_eval = promptgrad::model::DecodeConfig::greedy(6).unwrap();

    println!("seed  init_loss  grad_loss  rand_loss  acc(grad)  acc(ablate)");
    for seed in 0..5u64 {
        let dataset = synthetic_echo_dataset(&EchoTaskConfig {
            dev: 60,
            seed,
            ..EchoTaskConfig::default()
        });
        let base = RunConfig {
            steps: 24,
            k: 12,
            q: 24,
            mu: 3,
            lambda: 0.0,
            seed,
            max_new_tokens: 8,
            init_prompt: "answer answer answer answer answer .".into(),
            ..RunConfig::default()
        };

        let init_tokens = model.tokenize(&base.init_prompt);
        let init_loss = training_loss(&model, &dataset, &base, &init_tokens);

        let grad = optimize(&model, &dataset, &base, None).unwrap();
        let grad_loss = training_loss(&model, &dataset, &base, &grad.best_prompt_tokens);

        let rand_cfg = RunConfig {
            selection: SelectionStrategy::Random,
            ..base.clone()
        };
        let rand = optimize(&model, &dataset, &rand_cfg, None).unwrap();
        let rand_loss = training_loss(&model, &dataset, &rand_cfg, &rand.best_prompt_tokens);

        let ablate_cfg = RunConfig {
            ablate_reasoning: true,
            ..base.clone()
        };
        let ablate = optimize(&model, &dataset, &ablate_cfg, None).unwrap();

        let acc_grad = evaluate(&model, &dataset, Split::Dev, &grad.best_prompt, &decode_eval)
            .unwrap()
            .accuracy;
        let acc_ablate = evaluate(
            &model,
            &dataset,
            Split::Dev,
            &ablate.best_prompt,
            &decode_eval,
        )
        .unwrap()
        .accuracy;

        println!(
            "{seed:>4}  {init_loss:>9.4}  {grad_loss:>9.4}  {rand_loss:>9.4}  {acc_grad:>9.3}  {acc_ablate:>11.3}"
        );
        println!("      best(grad):   {}", grad.best_prompt);
        println!("      best(ablate): {}", ablate.best_prompt);
    }
}
