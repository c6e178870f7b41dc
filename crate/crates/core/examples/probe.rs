//! Scratch probe for toy-model internals (deleted before release).

use promptgrad::model::{DecodeConfig, Model, ToyConfig, ToyLm};

fn main() {
    let contexts = [
        ("d", "b", "say d d d then b b b . use proper logical reasoning ."),
        ("g", "m", "say g g g then m m m . use proper logical reasoning ."),
        ("c", "x", "say c c c then x x x . think step by step ."),
        ("f", "r", "say f f f then r r r . say the actual answer ."),
        ("w", "b", "say w w w then b b b . give the correct answer ."),
        ("a", "s", "say a a a then s s s . give the actual correct answer ."),
        ("k", "e", "say k k k then e e e . think and answer ."),
        ("p", "t", "say p p p then t t t . use logical reasoning ."),
    ];
    for d_model in [32usize, 48] {
        for copy_gain in [2.0, 3.0, 4.0] {
            for sigma_qk in [0.05, 0.1, 0.15] {
                let mut cfg = ToyConfig::v1("toy:probe");
                cfg.d_model = d_model;
                cfg.copy_gain = copy_gain;
                cfg.sigma_qk = sigma_qk;
                let m = Model::Toy(ToyLm::new(cfg));
                let mut payload_hits = 0;
                let mut distractor_hits = 0;
                let mut junk = 0;
                let mut echo_payload = 0;
                let mut mean_p_payload = 0.0;
                for (p, q, ctx_text) in contexts {
                    let mut ctx = m.tokenize(ctx_text);
                    let r = m.generate(&ctx, &DecodeConfig::greedy(6).unwrap()).unwrap();
                    let r_text = m.detokenize(&r.tokens);
                    if r_text.contains(p) {
                        echo_payload += 1;
                    }
                    ctx.extend_from_slice(&r.tokens);
                    ctx.extend_from_slice(&m.tokenize("the answer is"));
                    let lp = m.next_token_distribution(&ctx).unwrap();
                    let payload_id = m.tokenize(p)[0] as usize;
                    mean_p_payload += lp[payload_id].exp();
                    let best = lp
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .unwrap()
                        .0;
                    let best = m.token_text(best as u32);
                    if best == p {
                        payload_hits += 1;
                    } else if best == q {
                        distractor_hits += 1;
                    } else {
                        junk += 1;
                    }
                }
                mean_p_payload /= contexts.len() as f64;
                println!(
                    "d {d_model} gain {copy_gain:>4.1} qk {sigma_qk:>5.2}: payload {payload_hits}/8 distractor {distractor_hits}/8 junk {junk}/8 echo_r {echo_payload}/8 P(payload) {mean_p_payload:.3}"
                );
            }
        }
    }
}
