//! Implementations of the CLI subcommands.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use spot_core::encoder::EncoderParams;
use spot_core::error::{Error, Result};
use spot_core::imagery::Image;
use spot_core::metrics;
use spot_core::oracle::{self, Objective, OracleConfig, SearchMode, SnapWhen, Trajectory};
use spot_core::priors::{self, PriorKind, PriorSpec};
use spot_core::subpixel::{self, TokenizerConfig};
use spot_core::toytask::{self, ToySample, TrainConfig};

use rayon::prelude::*;

use crate::manifest::RunManifest;
use crate::render;

pub const KNN_K: usize = 20;
pub const KNN_TEMPERATURE: f64 = 0.07;

/// Per-image seed derivation shared by all commands (matches the trainer).
fn image_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64).wrapping_mul(0xA076_1D64_78BD_642F)
}

fn prior_placements(
    kind: PriorKind,
    m: usize,
    base_seed: u64,
    index: usize,
    sample: &ToySample,
) -> Result<priors::PlacementSet> {
    let mut spec = PriorSpec::new(kind, m, image_seed(base_seed, index));
    spec.m = m;
    spec.sample(sample.image.height(), sample.image.width(), Some(&sample.saliency))
}

/// 90/10 split by index, matching the trainer.
fn split(dataset: &[ToySample]) -> (&[ToySample], &[ToySample]) {
    dataset.split_at(dataset.len() * 9 / 10)
}

pub struct GenDataArgs {
    pub n: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

pub fn cmd_gen_data(args: &GenDataArgs, manifest: &mut RunManifest) -> Result<Vec<PathBuf>> {
    manifest.set("n", args.n);
    manifest.set("seed", args.seed);
    manifest.set("out_dir", args.out_dir.display());
    manifest.seed(args.seed);
    manifest.write_running().map_err(|e| Error::io(&args.out_dir, e))?;
    let samples = toytask::gen_dataset(args.n, args.seed)?;
    toytask::save_dataset(&samples, &args.out_dir)?;
    Ok(vec![args.out_dir.clone()])
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub m: usize,
    pub prior: PriorKind,
    pub budget_jitter: bool,
    pub window: usize,
}

pub fn cmd_train(args: &TrainArgs, manifest: &mut RunManifest) -> Result<Vec<PathBuf>> {
    let mut config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        seed: args.seed,
        prior: args.prior,
        train_m: args.m,
        budget_jitter: args.budget_jitter,
        ..TrainConfig::default()
    };
    config.tokenizer.window = args.window;
    config.encoder.token_feature_dim = args.window * args.window * 3;
    manifest.set("data", args.data.display());
    manifest.set("epochs", config.epochs);
    manifest.set("batch_size", config.batch_size);
    manifest.set("lr", config.lr);
    manifest.set("prior", config.prior.name());
    manifest.set("train_m", config.train_m);
    manifest.set("budget_jitter", config.budget_jitter);
    manifest.set("window", config.tokenizer.window);
    manifest.seed(args.seed);
    manifest.input(&args.data).map_err(|e| Error::io(&args.data, e))?;
    manifest.write_running().map_err(|e| Error::io(&args.out, e))?;

    let dataset = toytask::load_dataset(&args.data)?;
    let outcome = toytask::train_toy(&config, &dataset)?;
    outcome.params.save(&args.out)?;

    // training curve next to the weights
    let curve_path = args.out.with_extension("history.csv");
    let mut curve = String::from("epoch,train_loss,val_top1\n");
    for (e, (loss, val)) in outcome.history.iter().enumerate() {
        let _ = writeln!(curve, "{e},{loss},{val}");
    }
    std::fs::write(&curve_path, curve).map_err(|e| Error::io(&curve_path, e))?;
    println!("best_val_top1={}", outcome.best_val_top1);
    Ok(vec![args.out.clone(), curve_path])
}

pub struct EvalArgs {
    pub data: PathBuf,
    pub params: PathBuf,
    pub prior: PriorKind,
    pub m: usize,
    pub seed: u64,
    pub oracle: bool,
    pub lr: f64,
    pub steps: usize,
    pub out: PathBuf,
}

/// Accuracy of oracle-refined placements over the query split.
fn oracle_top1(
    params: &EncoderParams,
    tokcfg: &TokenizerConfig,
    queries: &[ToySample],
    prior: PriorKind,
    m: usize,
    seed: u64,
    ocfg: &OracleConfig,
) -> Result<f64> {
    let results: Vec<Result<bool>> = queries
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let init = prior_placements(prior, m, seed, i, s)?;
            let mut oc = ocfg.clone();
            oc.seed = image_seed(seed, i);
            let traj = oracle::spot_on_search(params, &s.image, s.label, &init, tokcfg, &oc)?;
            Ok(traj.final_prediction == s.label)
        })
        .collect();
    let mut correct = 0usize;
    for r in results {
        if r? {
            correct += 1;
        }
    }
    Ok(correct as f64 / queries.len() as f64)
}

pub fn cmd_eval(args: &EvalArgs, manifest: &mut RunManifest) -> Result<Vec<PathBuf>> {
    manifest.set("data", args.data.display());
    manifest.set("params", args.params.display());
    manifest.set("prior", args.prior.name());
    manifest.set("m", args.m);
    manifest.set("oracle", args.oracle);
    if args.oracle {
        manifest.set("lr", args.lr);
        manifest.set("steps", args.steps);
    }
    manifest.seed(args.seed);
    manifest.input(&args.data).map_err(|e| Error::io(&args.data, e))?;
    manifest.input(&args.params).map_err(|e| Error::io(&args.params, e))?;
    manifest.write_running().map_err(|e| Error::io(&args.out, e))?;

    let dataset = toytask::load_dataset(&args.data)?;
    let params = EncoderParams::load(&args.params)?;
    let tokcfg = tokenizer_for(&params);
    let (db, queries) = split(&dataset);

    // stochastic priors report mean and spread over three seeds
    let seeds: Vec<u64> = if args.prior.is_stochastic() {
        vec![args.seed, args.seed + 1, args.seed + 2]
    } else {
        vec![args.seed]
    };
    let mut kv = String::new();
    let mut csv = String::new();
    let mut top1s = Vec::new();
    let mut knns = Vec::new();
    let mut oracles = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        let report = toytask::evaluate(
            &params,
            &tokcfg,
            db,
            queries,
            args.prior,
            args.m,
            seed,
            KNN_K,
            KNN_TEMPERATURE,
        )?;
        if i == 0 {
            csv.push_str(&report.csv_header());
            csv.push_str(",seed");
            if args.oracle {
                csv.push_str(",oracle_top1");
            }
            csv.push('\n');
        }
        let _ = write!(kv, "seed{seed}_top1={}\nseed{seed}_knn_top1={}\n", report.top1, report.knn_top1);
        csv.push_str(&report.csv_row());
        let _ = write!(csv, ",{seed}");
        if args.oracle {
            let ocfg = OracleConfig { lr: args.lr, steps: args.steps, ..OracleConfig::short() };
            let otop = oracle_top1(&params, &tokcfg, queries, args.prior, args.m, seed, &ocfg)?;
            let _ = write!(kv, "seed{seed}_oracle_top1={otop}\n");
            let _ = write!(csv, ",{otop}");
            oracles.push(otop);
        }
        csv.push('\n');
        top1s.push(report.top1);
        knns.push(report.knn_top1);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let spread = |v: &[f64]| {
        if v.len() < 2 {
            0.0
        } else {
            let m = mean(v);
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        }
    };
    let _ = write!(kv, "top1_mean={}\ntop1_spread={}\n", mean(&top1s), spread(&top1s));
    let _ = write!(kv, "knn_top1_mean={}\nknn_top1_spread={}\n", mean(&knns), spread(&knns));
    if args.oracle {
        let _ = write!(kv, "oracle_top1_mean={}\n", mean(&oracles));
        let _ = write!(kv, "oracle_delta={}\n", mean(&oracles) - mean(&top1s));
    }
    let _ = write!(kv, "prior={}\nm={}\nn_seeds={}\n", args.prior.name(), args.m, seeds.len());

    let kv_path = args.out.with_extension("txt");
    let csv_path = args.out.with_extension("csv");
    std::fs::write(&kv_path, kv).map_err(|e| Error::io(&kv_path, e))?;
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    Ok(vec![kv_path, csv_path])
}

pub struct OracleArgs {
    pub data: PathBuf,
    pub params: PathBuf,
    pub prior: PriorKind,
    pub m: usize,
    pub lr: f64,
    pub steps: usize,
    pub mode: SearchMode,
    pub snap_when: SnapWhen,
    pub objective: Objective,
    pub grid_g: usize,
    pub seed: u64,
    pub limit: Option<usize>,
    pub out_dir: PathBuf,
}

pub fn cmd_oracle(args: &OracleArgs, manifest: &mut RunManifest) -> Result<Vec<PathBuf>> {
    manifest.set("data", args.data.display());
    manifest.set("params", args.params.display());
    manifest.set("prior", args.prior.name());
    manifest.set("m", args.m);
    manifest.set("lr", args.lr);
    manifest.set("steps", args.steps);
    manifest.set("mode", format!("{:?}", args.mode));
    manifest.set("snap_when", format!("{:?}", args.snap_when));
    manifest.set("objective", format!("{:?}", args.objective));
    manifest.set("grid_g", args.grid_g);
    if let Some(limit) = args.limit {
        manifest.set("limit", limit);
    }
    manifest.seed(args.seed);
    manifest.input(&args.data).map_err(|e| Error::io(&args.data, e))?;
    manifest.input(&args.params).map_err(|e| Error::io(&args.params, e))?;
    manifest.write_running().map_err(|e| Error::io(&args.out_dir, e))?;

    let dataset = toytask::load_dataset(&args.data)?;
    let params = EncoderParams::load(&args.params)?;
    let tokcfg = tokenizer_for(&params);
    let (_, queries) = split(&dataset);
    let queries = &queries[..args.limit.unwrap_or(queries.len()).min(queries.len())];

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let ocfg = OracleConfig {
        lr: args.lr,
        steps: args.steps,
        mode: args.mode,
        snap_when: args.snap_when,
        objective: args.objective,
        grid_g: args.grid_g,
        seed: 0,
        use_embedding_path: true,
    };
    let trajs: Vec<Result<Trajectory>> = queries
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let init = prior_placements(args.prior, args.m, args.seed, i, s)?;
            let mut oc = ocfg.clone();
            oc.seed = image_seed(args.seed, i);
            oracle::spot_on_search(&params, &s.image, s.label, &init, &tokcfg, &oc)
        })
        .collect();
    let mut correct_init = 0usize;
    let mut correct_final = 0usize;
    let mut improved = 0usize;
    let mut outputs = Vec::new();
    for (i, (traj, sample)) in trajs.into_iter().zip(queries).enumerate() {
        let traj = traj?;
        // initial accuracy from the first row
        let init = traj.final_placements(64, 64).and(Ok(()));
        drop(init);
        let init_set = priors::PlacementSet::new(
            traj.initial().to_vec(),
            sample.image.height(),
            sample.image.width(),
        )?;
        let tokens = subpixel::tokenize(&sample.image, &init_set, &tokcfg)?;
        let (logits, _) = spot_core::encoder::forward(&params, &tokens)?;
        if oracle::argmax(&logits) == sample.label {
            correct_init += 1;
        }
        if traj.final_prediction == sample.label {
            correct_final += 1;
        }
        if traj.losses.last().unwrap() <= traj.losses.first().unwrap() {
            improved += 1;
        }
        let path = args.out_dir.join(format!("trajectory_{i:05}.csv"));
        traj.save_csv(&path)?;
        outputs.push(path.clone());
        outputs.push(oracle::sidecar_path(&path));
    }
    let n = queries.len() as f64;
    let summary = format!(
        "initial_top1={}\nfinal_top1={}\noracle_delta={}\nloss_improved_fraction={}\nn_images={}\n",
        correct_init as f64 / n,
        correct_final as f64 / n,
        (correct_final as f64 - correct_init as f64) / n,
        improved as f64 / n,
        queries.len()
    );
    let summary_path = args.out_dir.join("summary.txt");
    std::fs::write(&summary_path, summary).map_err(|e| Error::io(&summary_path, e))?;
    outputs.push(summary_path);
    Ok(outputs)
}

pub struct TransferArgs {
    pub data: PathBuf,
    pub source: PathBuf,
    pub target: PathBuf,
    pub m: usize,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn cmd_transfer(args: &TransferArgs, manifest: &mut RunManifest) -> Result<Vec<PathBuf>> {
    manifest.set("data", args.data.display());
    manifest.set("source", args.source.display());
    manifest.set("target", args.target.display());
    manifest.set("m", args.m);
    manifest.set("lr", args.lr);
    manifest.set("steps", args.steps);
    manifest.seed(args.seed);
    manifest.input(&args.data).map_err(|e| Error::io(&args.data, e))?;
    manifest.input(&args.source).map_err(|e| Error::io(&args.source, e))?;
    manifest.input(&args.target).map_err(|e| Error::io(&args.target, e))?;
    manifest.write_running().map_err(|e| Error::io(&args.out, e))?;

    let dataset = toytask::load_dataset(&args.data)?;
    let source = EncoderParams::load(&args.source)?;
    let target = EncoderParams::load(&args.target)?;
    let tokcfg = tokenizer_for(&target);
    let (_, queries) = split(&dataset);

    let ocfg = OracleConfig { lr: args.lr, steps: args.steps, ..OracleConfig::short() };
    // both models start from the same isotropic placements
    let trajs: Vec<Result<Trajectory>> = queries
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let init = prior_placements(PriorKind::Isotropic, args.m, args.seed, i, s)?;
            let mut oc = ocfg.clone();
            oc.seed = image_seed(args.seed, i);
            oracle::spot_on_search(&source, &s.image, s.label, &init, &tokcfg, &oc)
        })
        .collect();
    let trajs: Vec<Trajectory> = trajs.into_iter().collect::<Result<_>>()?;

    // original: target model at the shared initial placements
    let original = toytask::eval_top1(
        &target,
        &tokcfg,
        queries,
        PriorKind::Isotropic,
        args.m,
        args.seed,
    )?;
    let images: Vec<Image> = queries.iter().map(|s| s.image.clone()).collect();
    let labels: Vec<usize> = queries.iter().map(|s| s.label).collect();
    let transfer = oracle::transfer_positions(&target, &images, &labels, &trajs, &tokcfg)?;
    let delta = metrics::transfer_delta(original, transfer);

    let text = format!(
        "original_top1={original}\ntransfer_top1={transfer}\ndelta={delta}\nm={}\nn_images={}\n",
        args.m,
        queries.len()
    );
    std::fs::write(&args.out, text).map_err(|e| Error::io(&args.out, e))?;
    Ok(vec![args.out.clone()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblateWhich {
    Background,
    Boundary,
    Ascent,
    Obfuscate,
}

impl AblateWhich {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "background" => Ok(AblateWhich::Background),
            "boundary" => Ok(AblateWhich::Boundary),
            "ascent" => Ok(AblateWhich::Ascent),
            "obfuscate" => Ok(AblateWhich::Obfuscate),
            other => Err(Error::InvalidArgument(format!("unknown ablation '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AblateWhich::Background => "background",
            AblateWhich::Boundary => "boundary",
            AblateWhich::Ascent => "ascent",
            AblateWhich::Obfuscate => "obfuscate",
        }
    }
}

pub struct AblateArgs {
    pub data: PathBuf,
    pub params: PathBuf,
    pub which: AblateWhich,
    pub m: usize,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn cmd_ablate(args: &AblateArgs, manifest: &mut RunManifest) -> Result<Vec<PathBuf>> {
    manifest.set("data", args.data.display());
    manifest.set("params", args.params.display());
    manifest.set("which", args.which.name());
    manifest.set("m", args.m);
    manifest.set("lr", args.lr);
    manifest.set("steps", args.steps);
    manifest.seed(args.seed);
    manifest.input(&args.data).map_err(|e| Error::io(&args.data, e))?;
    manifest.input(&args.params).map_err(|e| Error::io(&args.params, e))?;
    manifest.write_running().map_err(|e| Error::io(&args.out, e))?;

    let dataset = toytask::load_dataset(&args.data)?;
    let params = EncoderParams::load(&args.params)?;
    let tokcfg = tokenizer_for(&params);
    let (_, queries) = split(&dataset);

    let baseline =
        toytask::eval_top1(&params, &tokcfg, queries, PriorKind::Isotropic, args.m, args.seed)?;
    let ablated = match args.which {
        AblateWhich::Background => toytask::eval_top1(
            &params,
            &tokcfg,
            queries,
            PriorKind::Background,
            args.m,
            args.seed,
        )?,
        AblateWhich::Boundary => toytask::eval_top1(
            &params,
            &tokcfg,
            queries,
            PriorKind::Boundary,
            args.m,
            args.seed,
        )?,
        AblateWhich::Ascent | AblateWhich::Obfuscate => {
            let objective = if args.which == AblateWhich::Ascent {
                Objective::Ascent
            } else {
                Objective::Obfuscated
            };
            let ocfg = OracleConfig {
                lr: args.lr,
                steps: args.steps,
                objective,
                ..OracleConfig::short()
            };
            oracle_top1(&params, &tokcfg, queries, PriorKind::Isotropic, args.m, args.seed, &ocfg)?
        }
    };
    let text = format!(
        "which={}\nbaseline_top1={baseline}\nablated_top1={ablated}\ndrop={}\nm={}\nn_images={}\n",
        args.which.name(),
        baseline - ablated,
        args.m,
        queries.len()
    );
    std::fs::write(&args.out, text).map_err(|e| Error::io(&args.out, e))?;
    Ok(vec![args.out.clone()])
}

pub struct RsgArgs {
    pub data: PathBuf,
    pub params: PathBuf,
    pub m: usize,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn cmd_rsg(args: &RsgArgs, manifest: &mut RunManifest) -> Result<Vec<PathBuf>> {
    manifest.set("data", args.data.display());
    manifest.set("params", args.params.display());
    manifest.set("m", args.m);
    manifest.set("lr", args.lr);
    manifest.set("steps", args.steps);
    manifest.seed(args.seed);
    manifest.input(&args.data).map_err(|e| Error::io(&args.data, e))?;
    manifest.input(&args.params).map_err(|e| Error::io(&args.params, e))?;
    manifest.write_running().map_err(|e| Error::io(&args.out, e))?;

    let dataset = toytask::load_dataset(&args.data)?;
    let params = EncoderParams::load(&args.params)?;
    let tokcfg = tokenizer_for(&params);
    let (_, queries) = split(&dataset);

    let ocfg = OracleConfig { lr: args.lr, steps: args.steps, ..OracleConfig::short() };
    let reports: Vec<Result<metrics::RsgReport>> = queries
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let init = prior_placements(PriorKind::Isotropic, args.m, args.seed, i, s)?;
            let mut oc = ocfg.clone();
            oc.seed = image_seed(args.seed, i);
            let traj = oracle::spot_on_search(&params, &s.image, s.label, &init, &tokcfg, &oc)?;
            metrics::rsg(&traj, &s.saliency, tokcfg.window)
        })
        .collect();

    // aggregation: per-token -> per-image mean -> dataset mean
    let mut raw = String::from("image,token,rsg\n");
    let mut image_means = Vec::new();
    let mut excluded_total = 0usize;
    for (i, r) in reports.into_iter().enumerate() {
        let r = r?;
        for (t, v) in r.per_token.iter().enumerate() {
            let _ = writeln!(raw, "{i},{t},{v}");
        }
        excluded_total += r.excluded;
        if let Some(m) = r.mean() {
            image_means.push(m);
        }
    }
    let dataset_mean = image_means.iter().sum::<f64>() / image_means.len().max(1) as f64;
    let text = format!(
        "mean_rsg={dataset_mean}\nn_images={}\nimages_with_tokens={}\nexcluded_tokens={excluded_total}\nm={}\n",
        queries.len(),
        image_means.len(),
        args.m
    );
    std::fs::write(&args.out, text).map_err(|e| Error::io(&args.out, e))?;
    let raw_path = args.out.with_extension("tokens.csv");
    std::fs::write(&raw_path, raw).map_err(|e| Error::io(&raw_path, e))?;
    Ok(vec![args.out.clone(), raw_path])
}

pub struct RenderArgs {
    pub trajectory: PathBuf,
    pub image: PathBuf,
    pub out: PathBuf,
    pub window: usize,
}

pub fn cmd_render(args: &RenderArgs, manifest: &mut RunManifest) -> Result<Vec<PathBuf>> {
    manifest.set("trajectory", args.trajectory.display());
    manifest.set("image", args.image.display());
    manifest.set("window", args.window);
    manifest.input(&args.trajectory).map_err(|e| Error::io(&args.trajectory, e))?;
    manifest.input(&args.image).map_err(|e| Error::io(&args.image, e))?;
    manifest.write_running().map_err(|e| Error::io(&args.out, e))?;

    let image = Image::load(&args.image)?;
    let rows = priors::load_placements(&args.trajectory, image.height(), image.width())?;
    if rows.is_empty() {
        return Err(Error::format(&args.trajectory, "trajectory has no rows"));
    }
    let svg = render::render_svg(&image, &rows.iter().map(|r| r.points().to_vec()).collect::<Vec<_>>(), args.window);
    std::fs::write(&args.out, svg).map_err(|e| Error::io(&args.out, e))?;
    Ok(vec![args.out.clone()])
}

pub struct BenchArgs {
    pub data: PathBuf,
    pub params: PathBuf,
    pub m_list: Vec<usize>,
    pub repeats: usize,
    pub parallel: bool,
    pub images: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn cmd_bench(args: &BenchArgs, manifest: &mut RunManifest) -> Result<Vec<PathBuf>> {
    manifest.set("data", args.data.display());
    manifest.set("params", args.params.display());
    manifest.set("m_list", format!("{:?}", args.m_list));
    manifest.set("repeats", args.repeats);
    manifest.set("parallel", args.parallel);
    manifest.set("images", args.images);
    manifest.seed(args.seed);
    manifest.input(&args.data).map_err(|e| Error::io(&args.data, e))?;
    manifest.input(&args.params).map_err(|e| Error::io(&args.params, e))?;
    manifest.write_running().map_err(|e| Error::io(&args.out, e))?;

    let dataset = toytask::load_dataset(&args.data)?;
    let params = EncoderParams::load(&args.params)?;
    let tokcfg = tokenizer_for(&params);
    let subset = &dataset[..args.images.min(dataset.len())];
    if subset.is_empty() {
        return Err(Error::InvalidArgument("bench needs at least one image".into()));
    }

    let mut csv = String::from("m,images_per_sec\n");
    for &m in &args.m_list {
        let throughput = bench_throughput(&params, &tokcfg, subset, m, args.repeats, args.parallel, args.seed)?;
        let _ = writeln!(csv, "{m},{throughput}");
        println!("m={m} images/sec={throughput:.2}");
    }
    std::fs::write(&args.out, csv).map_err(|e| Error::io(&args.out, e))?;
    Ok(vec![args.out.clone()])
}

/// Median-of-repeats forward-only throughput at a token budget. The default
/// path is strictly sequential for comparability; the parallel mode spreads
/// images over the rayon pool.
pub fn bench_throughput(
    params: &EncoderParams,
    tokcfg: &TokenizerConfig,
    samples: &[ToySample],
    m: usize,
    repeats: usize,
    parallel: bool,
    seed: u64,
) -> Result<f64> {
    // placements fixed outside the timed region
    let placements: Vec<priors::PlacementSet> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| prior_placements(PriorKind::Isotropic, m, seed, i, s))
        .collect::<Result<_>>()?;
    let mut rates = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let t0 = Instant::now();
        if parallel {
            let sink: Vec<Result<usize>> = samples
                .par_iter()
                .zip(placements.par_iter())
                .map(|(s, p)| {
                    let tokens = subpixel::tokenize(&s.image, p, tokcfg)?;
                    let (logits, _) = spot_core::encoder::forward(params, &tokens)?;
                    Ok(oracle::argmax(&logits))
                })
                .collect();
            for r in sink {
                r?;
            }
        } else {
            for (s, p) in samples.iter().zip(&placements) {
                let tokens = subpixel::tokenize(&s.image, p, tokcfg)?;
                let (logits, _) = spot_core::encoder::forward(params, &tokens)?;
                std::hint::black_box(oracle::argmax(&logits));
            }
        }
        rates.push(samples.len() as f64 / t0.elapsed().as_secs_f64());
    }
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(rates[rates.len() / 2])
}

/// Tokenizer settings implied by a parameter file: the window comes from the
/// stored feature length (RGB), the embedding width from the model width.
pub fn tokenizer_for(params: &EncoderParams) -> TokenizerConfig {
    let cfg = params.config();
    let window = ((cfg.token_feature_dim / 3) as f64).sqrt().round() as usize;
    TokenizerConfig { window, embed_dim: cfg.width, ..TokenizerConfig::default() }
}
