use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use medfuse_core::fusion::FusionRegistry;
use medfuse_core::imaging::{
    load_nifti, load_source_image, normalize_min_max, resample_trilinear, retained_slice_indices,
    save_gray_png, DatasetManifest, GrayImage, ImagePair, PairedDataset, SourceImage, Split,
};
use medfuse_core::metrics::{aggregate_runs, MetricReport, MetricSummary};
use medfuse_core::network::{write_tensors, AutoEncoder, TensorArchive};
use medfuse_core::pipeline::{
    ablate, benchmark_fusion_time, evaluate, fuse_pipeline, resume_stage1, save_fusion_output,
    train_stage1, EvalOptions, RunManifest, TrainConfig,
};
use medfuse_core::{DType, Device};

#[derive(Parser)]
#[command(name = "medfuse", version, about = "Two-stage multimodal medical image fusion")]
struct Cli {
    /// Training config (TOML). Defaults to the selected preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = DeviceKind::Cpu)]
    device: DeviceKind,
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DeviceKind {
    Cpu,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Harvard,
    Brats,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pair images by id, optionally slicing NIfTI volumes first, and write a split manifest.
    PrepareData(PrepareArgs),
    /// Stage-1 reconstruction training on the train split.
    Train(TrainArgs),
    /// Fuses one image pair.
    Fuse(FuseArgs),
    /// Fuses every test pair and writes metric reports per strategy.
    Evaluate(EvaluateArgs),
    /// Times the full fusion pipeline per pair.
    Benchmark(BenchmarkArgs),
    /// Trains and evaluates the three ablation arms.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Directory holding `<modality>/<id>.<ext>` images.
    #[arg(long)]
    root: PathBuf,
    #[arg(long, default_value = "mri")]
    modality_a: String,
    #[arg(long, default_value = "ct")]
    modality_b: String,
    /// Number of pairs held out for testing.
    #[arg(long)]
    holdout: usize,
    /// Subject directories with `<modality>.nii[.gz]` volumes to slice into `root`.
    #[arg(long)]
    nifti_dir: Option<PathBuf>,
    /// Minimum nonzero-pixel fraction for a slice to be kept.
    #[arg(long, default_value_t = 0.1)]
    min_nonzero: f64,
    /// Resample volumes to this cube side before slicing.
    #[arg(long)]
    resample: Option<usize>,
    /// Manifest path; defaults to `<out-dir>/dataset.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset manifest written by `prepare-data`.
    #[arg(long)]
    manifest: PathBuf,
    /// Base directory for relative paths in the manifest.
    #[arg(long, default_value = ".")]
    data_root: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = Preset::Harvard)]
    preset: Preset,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Continue from a training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Grayscale source.
    #[arg(long)]
    a: PathBuf,
    /// Grayscale or color source.
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "sfnn-max")]
    strategy: String,
    /// Output PNG; defaults to `<out-dir>/fused.png`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also writes both latents and the fused latent as safetensors.
    #[arg(long)]
    save_latents: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// One per run; pairs with `--manifest` in order.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    /// One per run, or a single manifest shared by every run.
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    data_root: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "sfnn-max,sfnn-mean,sfnn-sum")]
    strategies: Vec<String>,
    /// Writes fused images under `<out-dir>/run<i>/images`.
    #[arg(long)]
    save_images: bool,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long, default_value = "sfnn-max")]
    strategy: String,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = Preset::Harvard)]
    preset: Preset,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, default_value = "sfnn-max")]
    strategy: String,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let device = match cli.device {
        DeviceKind::Cpu => Device::Cpu,
    };
    match &cli.command {
        Command::PrepareData(a) => prepare_data(&cli, a),
        Command::Train(a) => train(&cli, a, &device),
        Command::Fuse(a) => fuse(&cli, a, &device),
        Command::Evaluate(a) => evaluate_cmd(&cli, a, &device),
        Command::Benchmark(a) => benchmark(&cli, a, &device),
        Command::Ablate(a) => ablate_cmd(&cli, a, &device),
    }
}

fn train_config(cli: &Cli, preset: Preset, epochs: Option<usize>, max_steps: Option<usize>) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(path) => TrainConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => match preset {
            Preset::Harvard => TrainConfig::harvard(),
            Preset::Brats => TrainConfig::brats(),
        },
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if max_steps.is_some() {
        cfg.max_steps = max_steps;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_split(data: &DataArgs, split: Split) -> Result<(PairedDataset, String)> {
    let manifest = DatasetManifest::load(&data.manifest)
        .with_context(|| format!("reading dataset manifest {}", data.manifest.display()))?;
    let ds = manifest.load_split(split, &data.data_root)?;
    Ok((ds, manifest.hash()?))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn find_volume(dir: &Path, modality: &str) -> Result<PathBuf> {
    for ext in ["nii.gz", "nii"] {
        let p = dir.join(format!("{modality}.{ext}"));
        if p.exists() {
            return Ok(p);
        }
    }
    bail!("{}: no {modality}.nii or {modality}.nii.gz", dir.display())
}

fn slice_volumes(a: &PrepareArgs, nifti_dir: &Path) -> Result<usize> {
    let mut subjects: Vec<PathBuf> = std::fs::read_dir(nifti_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subjects.sort();
    let mut written = 0;
    for dir in subjects {
        let subject = dir.file_name().and_then(|s| s.to_str()).unwrap_or("subject").to_string();
        let mut vols = Vec::new();
        for m in [&a.modality_a, &a.modality_b] {
            let mut v = normalize_min_max(&load_nifti(&find_volume(&dir, m)?)?);
            if let Some(side) = a.resample {
                v = resample_trilinear(&v, side, side, side)?;
            }
            vols.push(v);
        }
        ensure!(vols[0].dims() == vols[1].dims(), "{subject}: volume shapes differ");
        let keep_b = retained_slice_indices(&vols[1], a.min_nonzero)?;
        let keep: Vec<usize> = retained_slice_indices(&vols[0], a.min_nonzero)?
            .into_iter()
            .filter(|z| keep_b.contains(z))
            .collect();
        let (_, h, w) = vols[0].dims();
        for z in keep {
            for (m, v) in [&a.modality_a, &a.modality_b].into_iter().zip(&vols) {
                let img = GrayImage::new(h, w, v.slice(z).to_vec())?;
                save_gray_png(&img, &a.root.join(m).join(format!("{subject}_{z:03}.png")))?;
            }
            written += 1;
        }
    }
    Ok(written)
}

fn prepare_data(cli: &Cli, a: &PrepareArgs) -> Result<()> {
    if let Some(dir) = &a.nifti_dir {
        let n = slice_volumes(a, dir)?;
        log::info!("wrote {n} slice pairs under {}", a.root.display());
    }
    let root = a.root.canonicalize().with_context(|| format!("{} not found", a.root.display()))?;
    let seed = cli.seed.unwrap_or(0);
    let manifest = DatasetManifest::from_directory(&root, &a.modality_a, &a.modality_b, a.holdout, seed)?;
    let path = a.manifest.clone().unwrap_or_else(|| cli.out_dir.join("dataset.json"));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    manifest.save(&path)?;
    let test = manifest.records.iter().filter(|r| r.split == Split::Test).count();
    println!(
        "{} pairs ({} train, {test} test), hash {}, written to {}",
        manifest.records.len(),
        manifest.records.len() - test,
        manifest.hash()?,
        path.display()
    );
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs, device: &Device) -> Result<()> {
    let (data, hash) = load_split(&a.data, Split::Train)?;
    let out = &cli.out_dir;
    let outcome = match &a.resume {
        Some(ckpt) => resume_stage1(ckpt, &data, Some(hash), Some(out), device)?,
        None => {
            let cfg = train_config(cli, a.preset, a.epochs, a.max_steps)?;
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
            train_stage1(&cfg, &data, Some(hash), Some(out), device)?
        }
    };
    let last = outcome.state.epochs.last();
    println!(
        "trained {} epochs ({} steps), final loss {}, best validation loss {}",
        outcome.state.epochs_done,
        outcome.state.global_step,
        last.map_or("n/a".into(), |e| format!("{:.6}", e.mean_train_loss)),
        outcome.state.best_val_loss.map_or("n/a".into(), |v| format!("{v:.6}")),
    );
    if let Some(p) = &outcome.manifest.checkpoint_path {
        println!("checkpoint: {}", p.display());
    }
    Ok(())
}

fn load_model(path: &Path, device: &Device) -> Result<AutoEncoder> {
    AutoEncoder::load(path, None, device).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn fuse(cli: &Cli, a: &FuseArgs, device: &Device) -> Result<()> {
    let model = load_model(&a.checkpoint, device)?;
    let registry = FusionRegistry::default();
    let rule = registry.get(&a.strategy)?;
    let src_a = match load_source_image(&a.a)? {
        SourceImage::Gray(g) => g,
        SourceImage::Color(_) => bail!("{}: the first source must be grayscale", a.a.display()),
    };
    let pair = ImagePair::new("pair", src_a, load_source_image(&a.b)?)?;
    let started = Instant::now();
    let out = fuse_pipeline(&model, &pair, rule, a.save_latents)?;
    let secs = started.elapsed().as_secs_f64();
    let output = a.output.clone().unwrap_or_else(|| cli.out_dir.join("fused.png"));
    save_fusion_output(&out, &output)?;
    let mut manifest = RunManifest::new("fuse", cli.seed.unwrap_or(0), serde_json::json!({
        "checkpoint": a.checkpoint,
        "a": a.a,
        "b": a.b,
        "strategy": a.strategy,
    }), model.config().hash());
    manifest.checkpoint_path = Some(a.checkpoint.clone());
    manifest.timings.insert("fuse_seconds".into(), secs);
    manifest.notes.insert("color_path".into(), out.used_color_path.to_string());
    if let Some(lat) = &out.latents {
        let mut archive = TensorArchive::default();
        for (name, f) in [("a", &lat.a), ("b", &lat.b), ("fused", &lat.fused)] {
            archive.tensors.insert(name.into(), f.to_tensor(DType::F64, &Device::Cpu)?);
        }
        let path = output.with_extension("latents.safetensors");
        write_tensors(&path, &archive)?;
        manifest.notes.insert("latents".into(), path.display().to_string());
    }
    manifest.save(&output.with_extension("manifest.json"))?;
    println!("fused image written to {} ({secs:.3}s)", output.display());
    Ok(())
}

fn print_summaries(title: &str, rows: &BTreeMap<String, MetricSummary>) {
    println!("{title}");
    for (name, s) in rows {
        println!("  {name:<14} {s}");
    }
}

fn evaluate_cmd(cli: &Cli, a: &EvaluateArgs, device: &Device) -> Result<()> {
    let runs = a.checkpoint.len();
    ensure!(
        a.manifest.len() == runs || a.manifest.len() == 1,
        "give one --manifest per --checkpoint, or a single shared one"
    );
    let registry = FusionRegistry::default();
    let mut per_strategy: BTreeMap<String, Vec<MetricReport>> = BTreeMap::new();
    for (i, ckpt) in a.checkpoint.iter().enumerate() {
        let data = DataArgs {
            manifest: a.manifest[i.min(a.manifest.len() - 1)].clone(),
            data_root: a.data_root.clone(),
        };
        let ds_manifest = DatasetManifest::load(&data.manifest)?;
        let (test, hash) = load_split(&data, Split::Test)?;
        let model = load_model(ckpt, device)?;
        let run_dir = cli.out_dir.join(format!("run{i}"));
        let opts = EvalOptions {
            seed: cli.seed.unwrap_or(ds_manifest.seed),
            checkpoint_id: ckpt.display().to_string(),
            image_dir: a.save_images.then(|| run_dir.join("images")),
        };
        let started = Instant::now();
        let reports = evaluate(&model, &test, &a.strategies, &registry, &opts)?;
        let mut manifest = RunManifest::new("evaluate", opts.seed, serde_json::json!({
            "strategies": a.strategies,
            "checkpoint": ckpt,
            "manifest": data.manifest,
        }), model.config().hash());
        manifest.dataset_manifest_hash = Some(hash);
        manifest.checkpoint_path = Some(ckpt.clone());
        manifest.metric_report_path = Some(run_dir.clone());
        manifest.timings.insert("evaluate_seconds".into(), started.elapsed().as_secs_f64());
        for (name, report) in &reports {
            report.save(&run_dir, &format!("metrics_{name}"))?;
        }
        manifest.save(&run_dir.join("evaluate_manifest.json"))?;
        let rows = reports.iter().map(|(k, r)| (k.clone(), r.aggregate)).collect();
        print_summaries(&format!("run {i}: {} test pairs ({})", test.len(), ckpt.display()), &rows);
        for (name, report) in reports {
            per_strategy.entry(name).or_default().push(report);
        }
    }
    if runs > 1 {
        let mut rows = BTreeMap::new();
        for (name, reports) in &per_strategy {
            rows.insert(name.clone(), aggregate_runs(reports)?);
        }
        write_json(&cli.out_dir.join("aggregate.json"), &rows)?;
        print_summaries(&format!("mean ± std over {runs} runs"), &rows);
    }
    Ok(())
}

fn benchmark(cli: &Cli, a: &BenchmarkArgs, device: &Device) -> Result<()> {
    let model = load_model(&a.checkpoint, device)?;
    let (data, hash) = load_split(&a.data, a.split.into())?;
    let registry = FusionRegistry::default();
    let report = benchmark_fusion_time(&model, &data.pairs, registry.get(&a.strategy)?)?;
    let path = cli.out_dir.join("benchmark.json");
    write_json(&path, &report)?;
    let mut manifest = RunManifest::new("benchmark", cli.seed.unwrap_or(0), serde_json::json!({
        "strategy": a.strategy,
        "pairs": report.pairs,
        "warmup": report.warmup,
    }), model.config().hash());
    manifest.dataset_manifest_hash = Some(hash);
    manifest.checkpoint_path = Some(a.checkpoint.clone());
    manifest.metric_report_path = Some(path);
    manifest.timings.insert("mean_seconds_per_pair".into(), report.time.mean);
    manifest.save(&cli.out_dir.join("benchmark_manifest.json"))?;
    println!("{report}");
    Ok(())
}

fn ablate_cmd(cli: &Cli, a: &AblateArgs, device: &Device) -> Result<()> {
    let cfg = train_config(cli, a.preset, a.epochs, a.max_steps)?;
    let (train_set, hash) = load_split(&a.data, Split::Train)?;
    let (test_set, _) = load_split(&a.data, Split::Test)?;
    let registry = FusionRegistry::default();
    let (report, mut manifest) = ablate(&cfg, &train_set, &test_set, &a.strategy, &registry, Some(&cli.out_dir), device)?;
    manifest.dataset_manifest_hash = Some(hash);
    manifest.save(&cli.out_dir.join("ablation_manifest.json"))?;
    println!("{report}");
    Ok(())
}
