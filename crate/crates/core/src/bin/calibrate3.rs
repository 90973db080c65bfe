use std::time::Instant;

use restoreib::data::{make_dataset, DegradationSpec};
use restoreib::nn::{build_generator, forward, GeneratorConfig, ParamSet};
use restoreib::tensor::Tape;
use restoreib::train::{l1_loss, to_net};

fn main() {
    let ds = make_dataset(&DegradationSpec::rain(), 4, 32, 1).unwrap();
    let cfg = GeneratorConfig::unet(5, 8);
    let graph = build_generator(&cfg).unwrap();
    let params = ParamSet::init(&graph, 1);
    let (x, y) = &ds.train[0];

    let reps = 100;

    // Forward only, untracked.
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let xi = tape.constant(to_net(x));
        let _ = forward(&graph, &params, &mut tape, xi, false).unwrap();
    }
    println!("fwd untracked: {:?}/iter", t0.elapsed() / reps);

    // Forward tracked.
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let xi = tape.constant(to_net(x));
        let _ = forward(&graph, &params, &mut tape, xi, true).unwrap();
    }
    println!("fwd tracked:   {:?}/iter", t0.elapsed() / reps);

    // Forward + backward.
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let xi = tape.constant(to_net(x));
        let yi = tape.constant(to_net(y));
        let pass = forward(&graph, &params, &mut tape, xi, true).unwrap();
        let loss = l1_loss(&mut tape, pass.output, yi).unwrap();
        tape.backward(loss).unwrap();
    }
    println!("fwd+bwd:       {:?}/iter", t0.elapsed() / reps);

    // InfoAccum-heavy model.
    let cfg = GeneratorConfig::unet(5, 16).with_infoaccum(15).with_subpix();
    let graph = build_generator(&cfg).unwrap();
    let params = ParamSet::init(&graph, 1);
    let reps = 10;
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let xi = tape.constant(to_net(x));
        let _ = forward(&graph, &params, &mut tape, xi, false).unwrap();
    }
    println!("ia15 fwd:      {:?}/iter", t0.elapsed() / reps);
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let xi = tape.constant(to_net(x));
        let yi = tape.constant(to_net(y));
        let pass = forward(&graph, &params, &mut tape, xi, true).unwrap();
        let loss = l1_loss(&mut tape, pass.output, yi).unwrap();
        tape.backward(loss).unwrap();
    }
    println!("ia15 fwd+bwd:  {:?}/iter", t0.elapsed() / reps);
}
