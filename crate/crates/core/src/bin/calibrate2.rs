use std::time::Instant;

use restoreib::data::{make_dataset, DegradationSpec};
use restoreib::metrics::{psnr, ssim};
use restoreib::nn::{build_generator, build_patchgan, GenKind, GeneratorConfig, ParamSet};
use restoreib::train::{infer, train_gan, LossKind, TrainConfig};

fn eval(
    gen: &restoreib::nn::ModuleGraph,
    params: &ParamSet,
    pairs: &[(restoreib::tensor::Tensor, restoreib::tensor::Tensor)],
) -> (f64, f64) {
    let mut p = 0.0;
    let mut s = 0.0;
    for (x, y) in pairs {
        let out = infer(gen, params, x).unwrap();
        p += psnr(&out, y, 1.0) / pairs.len() as f64;
        s += ssim(&out, y) / pairs.len() as f64;
    }
    (p, s)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let count: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let base: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);

    let specs = [
        ("noise", DegradationSpec::noise(0.1)),
        ("rain", DegradationSpec::rain()),
        ("haze", DegradationSpec::haze()),
    ];
    let t_total = Instant::now();
    for (name, spec) in &specs {
        let ds = make_dataset(spec, count, 32, 11).unwrap();
        // Degraded-input baseline.
        let mut bp = 0.0;
        let mut bs = 0.0;
        for (x, y) in &ds.test {
            bp += psnr(x, y, 1.0) / ds.test.len() as f64;
            bs += ssim(x, y) / ds.test.len() as f64;
        }
        println!("== {name}: identity psnr {bp:.2} ssim {bs:.4}");
        for kind in [GenKind::Unet, GenKind::Endecoder] {
            let mut line = format!("  {kind:>9}: ");
            for depth in 1..=5 {
                let t0 = Instant::now();
                let mut cfg = GeneratorConfig::unet(depth, base);
                cfg.kind = kind;
                let graph = build_generator(&cfg).unwrap();
                let disc = build_patchgan(6, base);
                let tcfg = TrainConfig {
                    loss_kind: LossKind::L1Only,
                    epochs,
                    crop_size: 32,
                    seed: 21,
                    ..Default::default()
                };
                let (gp, _, _) = train_gan(
                    &graph,
                    ParamSet::init(&graph, 31),
                    &disc,
                    ParamSet::init(&disc, 32),
                    &ds.train,
                    &tcfg,
                )
                .unwrap();
                let (_, s) = eval(&graph, &gp, &ds.test);
                line.push_str(&format!("N{depth} {s:.4} ({:.0?}) ", t0.elapsed()));
            }
            println!("{line}");
        }
    }
    println!("total {:?}", t_total.elapsed());
}
