// Scratch probe for calibrating the toy task (not part of the deliverable).
use std::time::Instant;

use spot_core::encoder;
use spot_core::oracle::{self, Objective, OracleConfig, SearchMode};
use spot_core::priors::PriorKind;
use spot_core::subpixel;
use spot_core::toytask::{self, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(800);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6);

    let t0 = Instant::now();
    let ds = toytask::gen_dataset(n, 11).unwrap();
    let eval = toytask::gen_dataset(200, 999).unwrap();
    println!("gen: {:?}", t0.elapsed());

    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let t1 = Instant::now();
    let out = toytask::train_toy(&cfg, &ds).unwrap();
    println!("train: {:?}  best_val={:.4}", t1.elapsed(), out.best_val_top1);
    for (e, (loss, val)) in out.history.iter().enumerate() {
        println!("  epoch {e}: loss {loss:.4} val {val:.4}");
    }
    let params = out.params;

    // sparse eval across priors at m=8, dense at m=64
    let t2 = Instant::now();
    for m in [8usize, 64] {
        for prior in [
            PriorKind::Uniform,
            PriorKind::Gaussian,
            PriorKind::Sobol,
            PriorKind::Isotropic,
            PriorKind::Center,
            PriorKind::Salient,
            PriorKind::Background,
            PriorKind::Boundary,
        ] {
            let mut accs = Vec::new();
            for seed in [1u64, 2, 3] {
                let acc =
                    toytask::eval_top1(&params, &cfg.tokenizer, &eval, prior, m, seed).unwrap();
                accs.push(acc);
            }
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            println!("m={m:2} {:10} top1 = {:.4} (seeds {:?})", prior.name(), mean, accs);
        }
    }
    println!("evals: {:?}", t2.elapsed());

    // oracle probe at m=8, isotropic start
    let t3 = Instant::now();
    let short = OracleConfig::short();
    let long = OracleConfig::long();
    let grid_short = OracleConfig { mode: SearchMode::GridSnap, ..short.clone() };
    let grid_long = OracleConfig { mode: SearchMode::GridSnap, ..long.clone() };
    let ascent = OracleConfig { objective: Objective::Ascent, ..short.clone() };
    let obf = OracleConfig { objective: Objective::Obfuscated, ..short.clone() };
    for (name, ocfg) in [
        ("subpix short", &short),
        ("subpix long", &long),
        ("grid short", &grid_short),
        ("grid long", &grid_long),
        ("ascent", &ascent),
        ("obfuscate", &obf),
    ] {
        let mut correct = 0;
        let mut improved = 0;
        let mut moves = 0.0;
        for (i, s) in eval.iter().enumerate() {
            let init = spot_core::priors::sample_isotropic(8, 64, 64).unwrap();
            let mut oc = ocfg.clone();
            oc.seed = 7 ^ i as u64;
            let traj =
                oracle::spot_on_search(&params, &s.image, s.label, &init, &cfg.tokenizer, &oc)
                    .unwrap();
            if traj.final_prediction == s.label {
                correct += 1;
            }
            if traj.losses.last().unwrap() <= traj.losses.first().unwrap() {
                improved += 1;
            }
            let a = traj.initial();
            let b = traj.last();
            moves += a
                .iter()
                .zip(b)
                .map(|(p, q)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
                .sum::<f64>()
                / a.len() as f64;
        }
        println!(
            "oracle {name:12} top1 = {:.4}  loss-improved = {:.2}  mean-move = {:.2} px",
            correct as f64 / eval.len() as f64,
            improved as f64 / eval.len() as f64,
            moves / eval.len() as f64
        );
    }
    println!("oracle: {:?}", t3.elapsed());

    // oracle delta per prior (criterion 6 probe)
    for prior in [
        PriorKind::Uniform,
        PriorKind::Gaussian,
        PriorKind::Sobol,
        PriorKind::Isotropic,
        PriorKind::Center,
        PriorKind::Salient,
    ] {
        let mut base = 0;
        let mut after = 0;
        for (i, s) in eval.iter().enumerate() {
            let mut spec = spot_core::priors::PriorSpec::new(prior, 8, 0);
            spec.seed = 1 ^ (i as u64).wrapping_mul(0xA076_1D64_78BD_642F);
            let init = spec.sample(64, 64, Some(&s.saliency)).unwrap();
            let tokens = subpixel::tokenize(&s.image, &init, &cfg.tokenizer).unwrap();
            let (logits, _) = encoder::forward(&params, &tokens).unwrap();
            if spot_core::oracle::argmax(&logits) == s.label {
                base += 1;
            }
            let mut oc = short.clone();
            oc.seed = 7 ^ i as u64;
            let traj =
                oracle::spot_on_search(&params, &s.image, s.label, &init, &cfg.tokenizer, &oc)
                    .unwrap();
            if traj.final_prediction == s.label {
                after += 1;
            }
        }
        println!(
            "prior {:10} base {:.4} -> oracle {:.4}",
            prior.name(),
            base as f64 / eval.len() as f64,
            after as f64 / eval.len() as f64
        );
    }
    println!("total: {:?}", t0.elapsed());
}
