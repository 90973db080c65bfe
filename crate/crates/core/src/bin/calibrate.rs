use std::time::Instant;

use restoreib::data::{make_dataset, DegradationSpec};
use restoreib::metrics::{psnr, ssim};
use restoreib::nn::{build_generator, build_patchgan, GeneratorConfig, ParamSet};
use restoreib::train::{infer, pretrain_reconstruction, train_gan, LossKind, TrainConfig};

fn eval(gen: &restoreib::nn::ModuleGraph, params: &ParamSet, pairs: &[(restoreib::tensor::Tensor, restoreib::tensor::Tensor)]) -> (f64, f64) {
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
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("all");

    if mode == "all" || mode == "sweep" {
        // One depth-sweep point: L1-only, 32x32.
        let ds = make_dataset(&DegradationSpec::rain(), 20, 32, 1).unwrap();
        for depth in [1usize, 3, 5] {
            let t0 = Instant::now();
            let cfg = GeneratorConfig::unet(depth, 8);
            let graph = build_generator(&cfg).unwrap();
            let disc = build_patchgan(6, 8);
            let tcfg = TrainConfig {
                loss_kind: LossKind::L1Only,
                epochs: 6,
                crop_size: 32,
                seed: 1,
                ..Default::default()
            };
            let (gp, _, _) = train_gan(&graph, ParamSet::init(&graph, 1), &disc, ParamSet::init(&disc, 2), &ds.train, &tcfg).unwrap();
            let (p, s) = eval(&graph, &gp, &ds.test);
            println!("sweep unet-{depth}: {:?}  psnr {p:.2} ssim {s:.4}", t0.elapsed());
        }
    }

    if mode == "all" || mode == "recon" {
        // Reconstruction: UNet5 + IA15 + subpix at 32x32, track PSNR over epochs.
        let n_img: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
        let rounds: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(10);
        let per_round: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(40);
        let ds = make_dataset(&DegradationSpec::rain(), n_img + 3, 32, 2).unwrap();
        let images: Vec<_> = ds.train.iter().take(n_img).map(|(_, y)| y.clone()).collect();
        let cfg = GeneratorConfig::unet(5, 16).with_infoaccum(15).with_subpix();
        let graph = build_generator(&cfg).unwrap();
        let mut params = ParamSet::init(&graph, 3);
        let tcfg = TrainConfig { crop_size: 32, seed: 3, ..Default::default() };
        let test_images: Vec<_> = ds.test.iter().map(|(_, y)| (y.clone(), y.clone())).collect();
        let train_pairs: Vec<_> = images.iter().map(|y| (y.clone(), y.clone())).collect();
        let t0 = Instant::now();
        for round in 0..rounds {
            let (p2, curve) = pretrain_reconstruction(&graph, params, &images, &tcfg, per_round).unwrap();
            params = p2;
            let (pt, st) = eval(&graph, &params, &test_images);
            let (ptr, _) = eval(&graph, &params, &train_pairs);
            println!(
                "recon epoch {:3}: mse {:.3e}  test-psnr {pt:.2} test-ssim {st:.5} train-psnr {ptr:.2}  ({:?})",
                (round + 1) * per_round,
                curve.last().unwrap(),
                t0.elapsed()
            );
        }
    }

    if mode == "all" || mode == "gan" {
        // LSGAN vs JSGAN on rain.
        let ds = make_dataset(&DegradationSpec::rain(), 20, 32, 4).unwrap();
        for kind in [LossKind::Lsgan, LossKind::Jsgan] {
            let t0 = Instant::now();
            let cfg = GeneratorConfig::unet(5, 8);
            let graph = build_generator(&cfg).unwrap();
            let disc = build_patchgan(6, 8);
            let tcfg = TrainConfig {
                loss_kind: kind,
                epochs: 10,
                crop_size: 32,
                seed: 5,
                ..Default::default()
            };
            let (gp, _, trace) = train_gan(&graph, ParamSet::init(&graph, 5), &disc, ParamSet::init(&disc, 6), &ds.train, &tcfg).unwrap();
            let (p, s) = eval(&graph, &gp, &ds.test);
            let last = trace.records.last().unwrap();
            println!(
                "gan {kind}: {:?}  psnr {p:.2} ssim {s:.4}  d_loss {:.4} adv {:.4}",
                t0.elapsed(),
                last.d_loss,
                last.adv
            );
        }
    }
}
