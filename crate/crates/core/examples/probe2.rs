//! Scratch: does a trailing prompt token hijack the generation race?

use promptgrad::data::{synthetic_echo_dataset, EchoTaskConfig, Split};
use promptgrad::model::{DecodeConfig, Model};

fn main() {
    let m = Model::load("toy:v1", "cpu").unwrap();
    let ds = synthetic_echo_dataset(&EchoTaskConfig::default());
    let decode = DecodeConfig::greedy(8).unwrap();

    for prompt in [
        "think step by step .",
        "think step by step k",
        "think step by step w",
        "think and answer z",
        "use logical reasoning t",
    ] {
        let prompt_tokens = m.tokenize(prompt);
        let mut hijacked = 0;
        let mut payload = 0;
        let mut other = 0;
        let trailing = m.token_text(*prompt_tokens.last().unwrap());
        for s in ds.split(Split::Dev).iter().take(15) {
            let mut ctx = m.tokenize(&s.input);
            ctx.extend_from_slice(&prompt_tokens);
            let r = m.generate(&ctx, &decode).unwrap();
            let r_text = m.detokenize(&r.tokens);
            let first_word = r_text.split_whitespace().next().unwrap_or("").to_string();
            if first_word == trailing {
                hijacked += 1;
            } else if first_word == s.target {
                payload += 1;
            } else {
                other += 1;
            }
        }
        println!(
            "prompt {prompt:?}: r starts with trailing {hijacked}/15, payload {payload}/15, other {other}/15"
        );
    }
}
