use std::time::Instant;

use restoreib::data::{make_dataset, DegradationSpec};
use restoreib::metrics::psnr;
use restoreib::nn::{build_generator, GeneratorConfig, ParamSet, Step};
use restoreib::train::{infer, pretrain_reconstruction, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant = args.get(1).map(|s| s.as_str()).unwrap_or("unet5+subpix");
    let n_img: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(100);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(2e-4);
    let norm_mode = args.get(5).map(|s| s.as_str()).unwrap_or("full"); // full|light|none

    let ds = make_dataset(&DegradationSpec::rain(), n_img + 3, 32, 2).unwrap();
    let images: Vec<_> = ds.train.iter().take(n_img).map(|(_, y)| y.clone()).collect();

    let mut cfg = match variant {
        "unet5+subpix" => GeneratorConfig::unet(5, 16).with_subpix(),
        "unet5" => GeneratorConfig::unet(5, 16),
        "unet5+ia15+subpix" => GeneratorConfig::unet(5, 16).with_infoaccum(15).with_subpix(),
        other => panic!("unknown variant {other}"),
    };
    cfg.base_channels = 16;
    let mut graph = build_generator(&cfg).unwrap();

    // Norm ablation: strip norm steps (and their params) by level.
    let keep = |param: &str| -> bool {
        match norm_mode {
            "full" => true,
            "none" => false,
            "light" => {
                // Keep norms only at levels 2..=3.
                let lvl: Option<usize> = param
                    .trim_start_matches(|c: char| !c.is_ascii_digit())
                    .chars()
                    .next()
                    .and_then(|c| c.to_digit(10))
                    .map(|d| d as usize);
                matches!(lvl, Some(2) | Some(3))
            }
            _ => panic!("bad norm mode"),
        }
    };
    graph.steps.retain(|s| match s {
        Step::Norm { param } => keep(param),
        _ => true,
    });
    let kept: Vec<String> = graph
        .steps
        .iter()
        .filter_map(|s| match s {
            Step::Norm { param } => Some(param.clone()),
            _ => None,
        })
        .collect();
    graph.params.retain(|p| {
        !(p.name.ends_with(".gamma") || p.name.ends_with(".beta"))
            || kept.iter().any(|k| p.name.starts_with(k.as_str()))
    });

    let mut params = ParamSet::init(&graph, 3);
    let tcfg = TrainConfig { crop_size: 32, seed: 3, lr, ..Default::default() };
    let train_pairs: Vec<_> = images.iter().map(|y| (y.clone(), y.clone())).collect();
    let t0 = Instant::now();
    let rounds = 6;
    for round in 0..rounds {
        let (p2, curve) = pretrain_reconstruction(&graph, params, &images, &tcfg, epochs).unwrap();
        params = p2;
        let mut ptr = 0.0;
        for (x, y) in &train_pairs {
            ptr += psnr(&infer(&graph, &params, x).unwrap(), y, 1.0) / train_pairs.len() as f64;
        }
        println!(
            "{variant} lr={lr} norm={norm_mode} imgs={n_img} epoch {:4}: mse {:.3e} train-psnr {ptr:.2} ({:.0?})",
            (round + 1) * epochs,
            curve.last().unwrap(),
            t0.elapsed()
        );
    }
}
