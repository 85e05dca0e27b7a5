//! The six subcommands. Each resolves its settings as explicit flag >
//! config-file key > documented default, then drives the library crate.

use crate::config::FileConfig;
use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;
use tbnet_core::dataset::{
    build_case, gen_synthetic, read_manifest, scan_pool_dir, split, write_manifest, CaseId, Label,
    Provenance, SampleRecord, Split, SplitMode, SplitSummary,
};
use tbnet_core::features::{
    feature_image, match_template, RoiMethod, DEFAULT_BLOCK_WINDOW, DEFAULT_TAU,
};
use tbnet_core::imaging::{crop, decode_pgm, encode_pgm, GrayImage};
use tbnet_core::models::{build_deep_convnet, build_resnet18, Arch, NetworkSpec};
use tbnet_core::nn::{grad_check, read_checkpoint, write_checkpoint, GradCheckOptions, Tensor};
use tbnet_core::training::{
    class_index, evaluate, export_curves, load_split, train, AdamHyper, TrainConfig,
};

fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).with_context(|| path.display().to_string())?;
    decode_pgm(&bytes).with_context(|| path.display().to_string())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| path.display().to_string())
}

// ---------------------------------------------------------------- extract

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Input tree laid out as <DIR>/<label>/*.pgm with labels TB and Normal
    #[arg(long = "in", value_name = "DIR")]
    pub input: Option<PathBuf>,
    /// Feature space to extract: haar, lbp, or both [default: both]
    #[arg(long)]
    pub method: Option<String>,
    /// Reference template PGM, already in the matching feature space
    #[arg(long, value_name = "FILE")]
    pub template: Option<PathBuf>,
    /// Odd window size for the block-mean (haar) map [default: 15]
    #[arg(long)]
    pub k: Option<usize>,
    /// NCC score a detection must reach to count as success [default: 0.6]
    #[arg(long)]
    pub tau: Option<f64>,
    /// Output directory for feature pools and detections.csv
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

pub fn cmd_extract(args: ExtractArgs, mut cfg: FileConfig) -> Result<ExitCode> {
    let input: PathBuf = cfg.require(args.input, "in")?;
    let method: String = cfg.pick(args.method, "method", "both".into())?;
    let template_path: PathBuf = cfg.require(args.template, "template")?;
    let k: usize = cfg.pick(args.k, "k", DEFAULT_BLOCK_WINDOW)?;
    let tau: f64 = cfg.pick(args.tau, "tau", DEFAULT_TAU)?;
    let out: PathBuf = cfg.require(args.out, "out")?;
    cfg.finish()?;

    let methods: &[RoiMethod] = match method.as_str() {
        "haar" => &[RoiMethod::Haar],
        "lbp" => &[RoiMethod::Lbp],
        "both" => &[RoiMethod::Haar, RoiMethod::Lbp],
        other => bail!("unknown method {other:?} (expected haar|lbp|both)"),
    };
    let template = read_pgm(&template_path)?;
    let records = scan_pool_dir(&input, Provenance::Original)?;

    // Lay the pools out up front so downstream `build` can point at them
    // even when a pool ends up empty. Successes land in `<method>/`,
    // failures in `noisy-<method>/`, and original-image ROI crops from the
    // first requested method in `crop/`.
    for label in [Label::TB, Label::Normal] {
        for m in methods {
            std::fs::create_dir_all(out.join(m.to_string()).join(label.to_string()))?;
            std::fs::create_dir_all(out.join(format!("noisy-{m}")).join(label.to_string()))?;
        }
        std::fs::create_dir_all(out.join("crop").join(label.to_string()))?;
    }

    let mut csv = String::from("path,method,x,y,w,h,score,success\n");
    let mut errors = 0usize;
    let mut hits = 0usize;
    let mut rows = 0usize;
    for rec in &records {
        let src = Path::new(&rec.path);
        let stem = src
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        let img = match read_pgm(src) {
            Ok(i) => i,
            Err(e) => {
                eprintln!("error: {e:#}");
                errors += 1;
                continue;
            }
        };
        let mut primary_box = None;
        for (mi, &m) in methods.iter().enumerate() {
            let feat = match feature_image(&img, m, k) {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("error: {}: {e}", rec.path);
                    errors += 1;
                    continue;
                }
            };
            let res = match match_template(&feat, &template, tau) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {}: {e}", rec.path);
                    errors += 1;
                    continue;
                }
            };
            let pool = if res.success {
                m.to_string()
            } else {
                format!("noisy-{m}")
            };
            let dst = out
                .join(&pool)
                .join(rec.label.to_string())
                .join(format!("{stem}.pgm"));
            write_file(&dst, encode_pgm(&feat))?;
            let b = res.best;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{:.6},{}\n",
                rec.path, m, b.x, b.y, b.w, b.h, res.score, res.success
            ));
            rows += 1;
            if res.success {
                hits += 1;
                if mi == 0 {
                    primary_box = Some(b);
                }
            }
        }
        if let Some(b) = primary_box {
            let cropped = crop(&img, b).with_context(|| rec.path.clone())?;
            let dst = out
                .join("crop")
                .join(rec.label.to_string())
                .join(format!("{stem}.pgm"));
            write_file(&dst, encode_pgm(&cropped))?;
        }
    }
    write_file(&out.join("detections.csv"), csv)?;

    println!(
        "{} files scanned, {rows} detections attempted, {hits} succeeded, {errors} errors",
        records.len()
    );
    println!("pools and detections.csv under {}", out.display());
    Ok(if errors > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

// ---------------------------------------------------------------- build

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Augmentation case: original, 1, 2, or 3
    #[arg(long)]
    pub case: Option<String>,
    /// Pool directories in case order: original [haar [lbp crop [noisy...]]]
    #[arg(long, num_args = 1.., value_name = "DIR")]
    pub pools: Option<Vec<PathBuf>>,
    /// Records drawn into the training split [default: 0]
    #[arg(long)]
    pub train: Option<usize>,
    /// Records drawn into the validation split [default: 0]
    #[arg(long)]
    pub val: Option<usize>,
    /// Records drawn into the test split [default: 0]
    #[arg(long)]
    pub test: Option<usize>,
    /// Shuffle seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sample validation from inside the training split (duplicated records)
    #[arg(long)]
    pub overlap_val: bool,
    /// Manifest CSV to write
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

pub fn cmd_build(args: BuildArgs, mut cfg: FileConfig) -> Result<ExitCode> {
    let case_s: String = cfg.require(args.case, "case")?;
    let pools: Vec<PathBuf> = match args.pools {
        Some(v) => {
            cfg.take_raw("pools");
            v
        }
        None => match cfg.take_raw("pools") {
            Some(raw) => raw.split_whitespace().map(PathBuf::from).collect(),
            None => bail!("missing required setting --pools (flag or config key)"),
        },
    };
    let train_n: usize = cfg.pick(args.train, "train", 0)?;
    let val_n: usize = cfg.pick(args.val, "val", 0)?;
    let test_n: usize = cfg.pick(args.test, "test", 0)?;
    let seed: u64 = cfg.pick(args.seed, "seed", 0)?;
    let overlap = cfg.pick_switch(args.overlap_val, "overlap-val")?;
    let out: PathBuf = cfg.require(args.out, "out")?;
    cfg.finish()?;

    let case: CaseId = case_s.parse()?;
    let expected: &str = match case {
        CaseId::Original => "exactly 1 pool (original)",
        CaseId::Case1 => "exactly 2 pools (original haar)",
        CaseId::Case3 => "exactly 4 pools (original haar lbp crop)",
        CaseId::Case2 => "at least 5 pools (original haar lbp crop noisy...)",
    };
    let arity_ok = match case {
        CaseId::Original => pools.len() == 1,
        CaseId::Case1 => pools.len() == 2,
        CaseId::Case3 => pools.len() == 4,
        CaseId::Case2 => pools.len() >= 5,
    };
    if !arity_ok {
        bail!("{case} takes {expected}, got {}", pools.len());
    }

    let original = scan_pool_dir(&pools[0], Provenance::Original)?;
    let mut audit = vec![(original.len(), "original".to_string())];
    let mut scan_into = |idx: usize, prov: Provenance, tag: &str| -> Result<Vec<SampleRecord>> {
        let recs = scan_pool_dir(&pools[idx], prov)?;
        audit.push((recs.len(), tag.to_string()));
        Ok(recs)
    };
    let haar = if pools.len() >= 2 {
        scan_into(1, Provenance::HaarFeature, "haar")?
    } else {
        Vec::new()
    };
    let lbp = if pools.len() >= 3 {
        scan_into(2, Provenance::LBPFeature, "lbp")?
    } else {
        Vec::new()
    };
    let crops = if pools.len() >= 4 {
        scan_into(3, Provenance::Crop, "crop")?
    } else {
        Vec::new()
    };
    let mut noisy = Vec::new();
    for dir in pools.iter().skip(4) {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        // The basename says which feature space the failed detections came
        // from; require it rather than guess.
        let prov = if name.contains("lbp") {
            Provenance::NoisyLBP
        } else if name.contains("haar") {
            Provenance::NoisyHaar
        } else {
            bail!(
                "noisy pool {} must carry 'haar' or 'lbp' in its directory name",
                dir.display()
            );
        };
        noisy.extend(scan_pool_dir(dir, prov)?);
    }
    if pools.len() >= 5 {
        audit.push((noisy.len(), "noisy".to_string()));
    }

    let manifest = build_case(&original, &haar, &lbp, &crops, &noisy, case)?;
    let terms: Vec<String> = audit.iter().map(|(n, tag)| format!("{n} {tag}")).collect();
    println!(
        "{case}: {} = {} samples",
        terms.join(" + "),
        manifest.records.len()
    );

    let mode = if overlap {
        SplitMode::OverlapVal
    } else {
        SplitMode::Disjoint
    };
    let manifest = split(manifest, train_n, val_n, test_n, seed, mode)?;
    write_manifest(&manifest, &out)?;
    print!("{}", SplitSummary::of(&manifest));
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- train

/// Architecture metadata written next to each checkpoint so `eval` can
/// rebuild the right network before loading the weights.
#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    arch: Arch,
    resolution: usize,
    width_mult: f64,
    classes: usize,
}

fn sidecar_path(checkpoint: &Path) -> PathBuf {
    PathBuf::from(format!("{}.json", checkpoint.display()))
}

fn build_net_spec(arch: Arch, res: usize, width_mult: f64, classes: usize) -> Result<NetworkSpec> {
    Ok(match arch {
        Arch::Convnet => build_deep_convnet((1, res, res), classes)?,
        Arch::Resnet18 => build_resnet18((1, res, res), classes, width_mult)?,
    })
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest CSV (paths resolve relative to its directory)
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Network: convnet or resnet18 [default: convnet]
    #[arg(long)]
    pub net: Option<String>,
    /// Square input resolution [default: 64]
    #[arg(long)]
    pub res: Option<usize>,
    /// Batch size [default: 50]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Epochs [default: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for init and epoch shuffles [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// ResNet width multiplier in (0, 1] [default: 0.25]
    #[arg(long)]
    pub width_mult: Option<f64>,
    /// Output directory: model.tbnet (+ .json), curves.csv, summary.json
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

pub fn cmd_train(args: TrainArgs, mut cfg: FileConfig) -> Result<ExitCode> {
    let manifest_path: PathBuf = cfg.require(args.manifest, "manifest")?;
    let net_s: String = cfg.pick(args.net, "net", "convnet".into())?;
    let res: usize = cfg.pick(args.res, "res", 64)?;
    let batch: usize = cfg.pick(args.batch, "batch", 50)?;
    let epochs: usize = cfg.pick(args.epochs, "epochs", 10)?;
    let lr: f64 = cfg.pick(args.lr, "lr", 1e-3)?;
    let seed: u64 = cfg.pick(args.seed, "seed", 0)?;
    let width_mult: f64 = cfg.pick(args.width_mult, "width-mult", 0.25)?;
    let out: PathBuf = cfg.require(args.out, "out")?;
    cfg.finish()?;

    let arch: Arch = net_s.parse().map_err(|e: String| anyhow!(e))?;
    let manifest = read_manifest(&manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let config = TrainConfig {
        batch_size: batch,
        epochs,
        seed,
        hyper: AdamHyper {
            lr,
            ..AdamHyper::default()
        },
        case_id: manifest.case_id.to_string(),
        network: arch,
        resolution: res,
        width_mult,
    };

    let train_set = load_split(&manifest, Split::Train, res, root)?;
    let val_set = load_split(&manifest, Split::Val, res, root)?;
    println!(
        "{} ({}): {} train / {} val at {res}x{res}",
        manifest.case_id,
        arch,
        train_set.len(),
        val_set.len()
    );

    let report = train(&config, &train_set, &val_set)?;
    for r in &report.records {
        println!(
            "epoch {:>3}: loss {:.6}  val {:.2}%  ({:.1}s)",
            r.epoch, r.train_loss, r.val_accuracy, r.seconds
        );
    }

    std::fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
    let ckpt = out.join("model.tbnet");
    write_checkpoint(&report.network, &ckpt)?;
    let meta = ModelMeta {
        arch,
        resolution: res,
        width_mult,
        classes: 2,
    };
    write_file(&sidecar_path(&ckpt), serde_json::to_string_pretty(&meta)? + "\n")?;
    export_curves(&report.records, &out.join("curves.csv"))?;

    let last = report.records.last().expect("epochs >= 1");
    let summary = serde_json::json!({
        "config": config,
        "case": config.case_id,
        "param_count": report.spec.param_count(),
        "train_samples": train_set.len(),
        "val_samples": val_set.len(),
        "final_train_loss": last.train_loss,
        "final_val_accuracy": last.val_accuracy,
        "epochs": report.records,
    });
    write_file(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    println!(
        "wrote {}, curves.csv, summary.json under {}",
        ckpt.file_name().unwrap().to_string_lossy(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// TBNET1 checkpoint written by `train`
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset manifest CSV
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Split to score: train, val, test, or unassigned [default: test]
    #[arg(long)]
    pub split: Option<String>,
    /// Emit a JSON report instead of text
    #[arg(long)]
    pub json: bool,
}

pub fn cmd_eval(args: EvalArgs, mut cfg: FileConfig) -> Result<ExitCode> {
    let ckpt: PathBuf = cfg.require(args.checkpoint, "checkpoint")?;
    let manifest_path: PathBuf = cfg.require(args.manifest, "manifest")?;
    let split_s: String = cfg.pick(args.split, "split", "test".into())?;
    let json = cfg.pick_switch(args.json, "json")?;
    cfg.finish()?;

    let which = match split_s.to_ascii_lowercase().as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        "unassigned" => Split::Unassigned,
        other => bail!("unknown split {other:?} (expected train|val|test|unassigned)"),
    };
    let meta_path = sidecar_path(&ckpt);
    let meta: ModelMeta = serde_json::from_str(
        &std::fs::read_to_string(&meta_path)
            .with_context(|| format!("{} (written by `tbnet train` next to the checkpoint)", meta_path.display()))?,
    )
    .with_context(|| meta_path.display().to_string())?;

    let spec = build_net_spec(meta.arch, meta.resolution, meta.width_mult, meta.classes)?;
    let mut net = spec.instantiate::<f32>(0)?;
    read_checkpoint(&mut net, &ckpt)?;

    let manifest = read_manifest(&manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let set = load_split(&manifest, which, meta.resolution, root)?;
    if set.is_empty() {
        bail!(
            "manifest {} has no records in the {split_s} split",
            manifest_path.display()
        );
    }
    let r = evaluate(&mut net, &set)?;
    if json {
        println!(
            "{}",
            serde_json::json!({
                "split": split_s,
                "n": set.len(),
                "accuracy": r.accuracy,
                "tp": r.tp,
                "fp": r.fp,
                "tn": r.tn,
                "fn": r.fn_,
            })
        );
    } else {
        println!("split {split_s}: {} samples", set.len());
        println!("accuracy {:.5}%", r.accuracy);
        println!(
            "confusion (TB positive): tp {} fp {} tn {} fn {}",
            r.tp, r.fp, r.tn, r.fn_
        );
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- gradcheck

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Network: convnet or resnet18 [default: convnet]
    #[arg(long)]
    pub net: Option<String>,
    /// Square input resolution, minimum 16 [default: 16]
    #[arg(long)]
    pub res: Option<usize>,
    /// ResNet width multiplier [default: 0.25]
    #[arg(long)]
    pub width_mult: Option<f64>,
    /// Seed for init and coordinate sampling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Coordinates sampled per parameter tensor [default: 8]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Central-difference step [default: 1e-6]
    #[arg(long)]
    pub eps: Option<f64>,
    /// Negative-control hook: corrupt the analytic gradients first.
    #[arg(long, hide = true)]
    pub corrupt_backward: bool,
}

pub fn cmd_gradcheck(args: GradcheckArgs, mut cfg: FileConfig) -> Result<ExitCode> {
    let net_s: String = cfg.pick(args.net, "net", "convnet".into())?;
    let res: usize = cfg.pick(args.res, "res", 16)?;
    let width_mult: f64 = cfg.pick(args.width_mult, "width-mult", 0.25)?;
    let seed: u64 = cfg.pick(args.seed, "seed", 0)?;
    let samples: usize = cfg.pick(args.samples, "samples", 8)?;
    let eps: f64 = cfg.pick(args.eps, "eps", 1e-6)?;
    let corrupt = cfg.pick_switch(args.corrupt_backward, "corrupt-backward")?;
    cfg.finish()?;

    if res < 16 {
        bail!("resolution {res} below the 16-pixel minimum for gradient checking");
    }
    let arch: Arch = net_s.parse().map_err(|e: String| anyhow!(e))?;
    let spec = build_net_spec(arch, res, width_mult, 2)?;
    let mut net = spec.instantiate::<f64>(seed)?;

    // Eight synthetic images (four per class) make a deterministic batch.
    // The batch must not be tiny: resnet18 reaches 1x1 spatial resolution by
    // stage 4, where batchnorm statistics run over the batch alone, and a
    // near-zero channel variance there turns 1/sqrt(var+eps) into a numeric
    // amplifier that drowns the finite-difference probe.
    let batch = gen_synthetic(4, res, seed);
    let mut data = Vec::with_capacity(batch.len() * res * res);
    for s in &batch {
        data.extend(s.image.data().iter().map(|&v| v as f64));
    }
    let input = Tensor::from_vec(&[batch.len(), 1, res, res], data)?;
    let labels: Vec<usize> = batch.iter().map(|s| class_index(s.label)).collect();

    let opts = GradCheckOptions {
        eps,
        samples_per_param: samples,
        seed,
        corrupt_analytic: corrupt,
    };
    let started = Instant::now();
    let report = grad_check(&mut net, &input, &labels, &opts)?;
    println!(
        "{arch} at {res}x{res}: max relative error {:.3e} over {} coordinates (worst {}[{}])",
        report.max_rel_err, report.coords_checked, report.worst_param, report.worst_index
    );
    println!("elapsed {:.1}s", started.elapsed().as_secs_f64());
    if report.max_rel_err > 1e-4 {
        bail!(
            "max relative error {:.3e} exceeds the 1e-4 bound",
            report.max_rel_err
        );
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Images generated per class
    #[arg(long)]
    pub n: Option<usize>,
    /// Square image size, minimum 16 [default: 64]
    #[arg(long)]
    pub size: Option<usize>,
    /// Generator seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory: TB/, Normal/, boxes.csv
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

pub fn cmd_synth(args: SynthArgs, mut cfg: FileConfig) -> Result<ExitCode> {
    let n: usize = cfg.require(args.n, "n")?;
    let size: usize = cfg.pick(args.size, "size", 64)?;
    let seed: u64 = cfg.pick(args.seed, "seed", 0)?;
    let out: PathBuf = cfg.require(args.out, "out")?;
    cfg.finish()?;

    if n == 0 {
        bail!("--n must be at least 1");
    }
    if size < 16 {
        bail!("--size {size} below the 16-pixel minimum");
    }

    let samples = gen_synthetic(n, size, seed);
    for label in [Label::TB, Label::Normal] {
        std::fs::create_dir_all(out.join(label.to_string()))?;
    }
    let mut boxes = String::from("path,x,y,w,h\n");
    let (mut tb_i, mut normal_i) = (0usize, 0usize);
    for s in &samples {
        let rel = match s.label {
            Label::TB => {
                tb_i += 1;
                format!("TB/tb_{:04}.pgm", tb_i - 1)
            }
            Label::Normal => {
                normal_i += 1;
                format!("Normal/normal_{:04}.pgm", normal_i - 1)
            }
        };
        write_file(&out.join(&rel), encode_pgm(&s.image))?;
        if let Some(b) = s.bbox {
            boxes.push_str(&format!("{rel},{},{},{},{}\n", b.x, b.y, b.w, b.h));
        }
    }
    write_file(&out.join("boxes.csv"), boxes)?;
    println!(
        "wrote {} TB + {} Normal images at {size}x{size} and boxes.csv under {}",
        tb_i,
        normal_i,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}
