//! Times one inference forward pass at a given input size and one training
//! step (forward + backward) at another.
//!
//! `cargo run --release -p tinydet-detector --example throughput -- 416 128 16`

use std::time::Instant;

use tinydet_detector::{build_model, ModelConfig, ParamGroup, Tensor};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let (infer, train, batch) = (args.first().copied().unwrap_or(416), args.get(1).copied().unwrap_or(128), args.get(2).copied().unwrap_or(16));

    let m = build_model(ModelConfig::with_input_size(infer)).expect("model");
    let x = Tensor::zeros(1, 3, infer, infer);
    m.forward(&x).expect("warm-up");
    let t = Instant::now();
    let reps = 3;
    for _ in 0..reps {
        m.forward(&x).expect("forward");
    }
    let per = t.elapsed().as_secs_f64() / reps as f64;
    println!("forward {infer}px: {:.3} s ({:.2} FPS), {} weights", per, 1.0 / per, m.n_weights());

    let m = build_model(ModelConfig::with_input_size(train)).expect("model");
    let x = Tensor::zeros(batch, 3, train, train);
    let mut grads = m.zero_grads();
    for frozen in [true, false] {
        let t = Instant::now();
        let acts = m.forward_train(&x).expect("forward");
        let o = acts.output(&m);
        let d = Tensor::from_vec(o.n, o.c, o.h, o.w, vec![1e-3; o.data.len()]);
        m.backward(&acts, d, &mut grads, &|g| !(frozen && g == ParamGroup::Backbone));
        println!("train step {train}px x{batch} (backbone frozen: {frozen}): {:.3} s", t.elapsed().as_secs_f64());
    }
}
