//! Command-line front end: checkpoint adaptation, toy training, inference,
//! evaluation, visualization and synthetic-data generation.

mod cams;
mod config;
mod imgio;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use geovit_core::error::TrainError;
use geovit_core::geometry::FieldKind;
use geovit_core::io::checkpoint::{
    load_encoder, load_model, read_checkpoint_file, save_encoder, save_model,
};
use geovit_core::io::color::flow_to_color;
use geovit_core::io::flo::{read_flo_file, write_flo_file};
use geovit_core::io::kitti::{read_kitti_png, write_kitti_png};
use geovit_core::io::pfm::{read_pfm_file, write_pfm_file};
use geovit_core::io::tile::{tiled_infer, TilePlan};
use geovit_core::io::write_loss_curve;
use geovit_core::metrics::{bad_np, depth_metrics, epe, f1_all, F1Rule, MetricReport, MetricValues};
use geovit_core::refine::GeoVit;
use geovit_core::synth::make_synthetic;
use geovit_core::train::train_toy;
use geovit_core::vit::{adapt_checkpoint, ViTConfig};

#[derive(Parser)]
#[command(
    name = "geovit",
    about = "Two-frame geometric vision: optical flow, stereo and two-view depth",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Flow,
    Stereo,
    Depth,
}

impl TaskArg {
    fn kind(self) -> FieldKind {
        match self {
            TaskArg::Flow => FieldKind::Flow,
            TaskArg::Stereo => FieldKind::Disparity,
            TaskArg::Depth => FieldKind::Depth,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Refine,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum F1RuleArg {
    KittiAnd,
    PaperOr,
}

#[derive(Subcommand)]
enum Command {
    /// Adapt a pretrained video checkpoint to a two-frame geometry model.
    Adapt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        image_h: usize,
        #[arg(long)]
        image_w: usize,
        #[arg(long, default_value_t = 16)]
        patch: usize,
        /// Override the head count carried in the checkpoint metadata.
        #[arg(long)]
        num_heads: Option<usize>,
        #[arg(long)]
        mlp_ratio: Option<f64>,
    },
    /// Train the toy preset on generated synthetic data.
    TrainToy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Loss-curve output (newline-delimited `step lr loss`).
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Initialize the encoder from an adapted checkpoint.
        #[arg(long)]
        init_encoder: Option<PathBuf>,
    },
    /// Run inference on an image pair.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        i1: PathBuf,
        #[arg(long)]
        i2: PathBuf,
        /// Camera-pair file (required for depth).
        #[arg(long)]
        cams: Option<PathBuf>,
        /// Refinement iterations; defaults to 6 (1 for depth).
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, value_enum, default_value_t = HeadArg::Refine)]
        head: HeadArg,
        /// Evaluate with overlapping tiles at the model's input size.
        #[arg(long)]
        tiled: bool,
        #[arg(long, default_value_t = TilePlan::DEFAULT_STRIDE)]
        stride: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare predictions against ground truth directories.
    Eval {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = F1RuleArg::KittiAnd)]
        f1_rule: F1RuleArg,
    },
    /// Render a flow field file as a color-wheel PNG.
    Viz {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        max_norm: Option<f32>,
    },
    /// Generate synthetic samples with exact ground truth.
    MakeData {
        #[arg(long, value_enum)]
        kind: TaskArg,
        #[arg(long, default_value_t = 64)]
        h: usize,
        #[arg(long, default_value_t = 96)]
        w: usize,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3.0)]
        max_disp: f64,
        #[arg(long, default_value_t = 16)]
        multiple_of: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Data(String),
    Divergence(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Data(m) | CliError::Divergence(m) => m,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("GEOVIT_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            // --help / --version land here
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Adapt {
            input,
            output,
            image_h,
            image_w,
            patch,
            num_heads,
            mlp_ratio,
        } => cmd_adapt(input, output, image_h, image_w, patch, num_heads, mlp_ratio),
        Command::TrainToy {
            config,
            output,
            curve,
            init_encoder,
        } => cmd_train_toy(config, output, curve, init_encoder),
        Command::Infer {
            checkpoint,
            task,
            i1,
            i2,
            cams,
            iters,
            head,
            tiled,
            stride,
            output,
        } => cmd_infer(
            checkpoint, task, i1, i2, cams, iters, head, tiled, stride, output,
        ),
        Command::Eval {
            task,
            pred,
            gt,
            f1_rule,
        } => cmd_eval(task, pred, gt, f1_rule),
        Command::Viz {
            input,
            output,
            max_norm,
        } => cmd_viz(input, output, max_norm),
        Command::MakeData {
            kind,
            h,
            w,
            count,
            seed,
            max_disp,
            multiple_of,
            out,
        } => cmd_make_data(kind, h, w, count, seed, max_disp, multiple_of, out),
    }
}

fn meta_lookup<T: std::str::FromStr>(
    meta: &BTreeMap<String, String>,
    key: &str,
    flag: Option<T>,
) -> Result<T, CliError> {
    if let Some(v) = flag {
        return Ok(v);
    }
    meta.get(key).and_then(|v| v.parse().ok()).ok_or_else(|| {
        CliError::Data(format!(
            "checkpoint metadata lacks `{key}`; pass --{} explicitly",
            key.replace('_', "-")
        ))
    })
}

fn cmd_adapt(
    input: PathBuf,
    output: PathBuf,
    image_h: usize,
    image_w: usize,
    patch: usize,
    num_heads: Option<usize>,
    mlp_ratio: Option<f64>,
) -> Result<(), CliError> {
    let ckpt = read_checkpoint_file(&input).map_err(data)?;
    let embed_dim = ckpt
        .params
        .get("patch_embed.bias")
        .map(|t| t.numel())
        .ok_or_else(|| CliError::Data("checkpoint lacks patch_embed.bias".into()))?;
    let depth = (0..)
        .take_while(|i| ckpt.params.contains_key(&format!("blocks.{i}.norm1.weight")))
        .count();
    let meta = &ckpt.meta;
    let cfg = ViTConfig {
        image_h,
        image_w,
        patch,
        pretrain_frames: meta_lookup(meta, "pretrain_frames", None).unwrap_or(8),
        temporal_patch: ckpt
            .params
            .get("patch_embed.weight")
            .map(|t| t.shape()[2])
            .unwrap_or(2),
        embed_dim,
        depth,
        num_heads: meta_lookup(meta, "num_heads", num_heads)?,
        mlp_ratio: meta_lookup(meta, "mlp_ratio", mlp_ratio).unwrap_or(4.0),
        layernorm_eps: meta_lookup(meta, "layernorm_eps", None).unwrap_or(1e-6),
    };
    let weights = adapt_checkpoint(&ckpt, &cfg).map_err(data)?;
    save_encoder(&output, &cfg, &weights, &ckpt.norm).map_err(data)?;
    println!(
        "adapted encoder: dim {embed_dim}, depth {depth}, grid {}x{} -> {}",
        cfg.grid().0,
        cfg.grid().1,
        output.display()
    );
    Ok(())
}

fn cmd_train_toy(
    config: PathBuf,
    output: PathBuf,
    curve: Option<PathBuf>,
    init_encoder: Option<PathBuf>,
) -> Result<(), CliError> {
    let spec = config::load_train_spec(&config).map_err(CliError::Data)?;
    let params = config::synth_params(&spec);
    let dataset: Result<Vec<_>, TrainError> = (0..spec.samples as u64)
        .map(|i| {
            make_synthetic(
                spec.train.task,
                spec.vit.image_h,
                spec.vit.image_w,
                spec.sample_seed.wrapping_add(i),
                &params,
            )
        })
        .collect();
    let dataset = dataset.map_err(data)?;

    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(spec.train.seed);
    let mut model =
        GeoVit::random_init(spec.vit.clone(), spec.dec.clone(), &mut rng).map_err(data)?;
    if let Some(enc_path) = init_encoder {
        let (cfg, weights, norm) = load_encoder(&enc_path).map_err(data)?;
        if cfg.image_h != spec.vit.image_h
            || cfg.image_w != spec.vit.image_w
            || cfg.embed_dim != spec.vit.embed_dim
            || cfg.depth != spec.vit.depth
        {
            return Err(CliError::Data(
                "encoder checkpoint geometry does not match the training config".into(),
            ));
        }
        model.enc = weights;
        model.norm = norm;
    }

    let outcome = train_toy(model, &spec.train, &dataset).map_err(data)?;
    save_model(&output, &outcome.model).map_err(data)?;
    if let Some(curve_path) = &curve {
        write_loss_curve(curve_path, &outcome.curve).map_err(data)?;
    }
    if let Some(step) = outcome.diverged_at {
        return Err(CliError::Divergence(format!(
            "loss diverged at step {step}; last-good checkpoint written to {}",
            output.display()
        )));
    }
    let last = outcome.curve.last().map(|p| p.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} steps, final loss {last:.4} -> {}",
        outcome.curve.len(),
        output.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    checkpoint: PathBuf,
    task: TaskArg,
    i1: PathBuf,
    i2: PathBuf,
    cams_path: Option<PathBuf>,
    iters: Option<usize>,
    head: HeadArg,
    tiled: bool,
    stride: usize,
    output: PathBuf,
) -> Result<(), CliError> {
    let task = task.kind();
    let model = load_model(&checkpoint).map_err(data)?;
    let i1 = imgio::load_image(&i1).map_err(CliError::Data)?;
    let i2 = imgio::load_image(&i2).map_err(CliError::Data)?;
    if i1.shape() != i2.shape() {
        return Err(CliError::Data(format!(
            "image sizes differ: {:?} vs {:?}",
            i1.shape(),
            i2.shape()
        )));
    }
    let iters = iters.unwrap_or(match task {
        FieldKind::Depth => 1,
        _ => 6,
    });
    let cams = match (&cams_path, task) {
        (Some(p), _) => Some(cams::read_cams(p).map_err(CliError::Data)?),
        (None, FieldKind::Depth) => {
            return Err(CliError::Data("depth inference requires --cams".into()))
        }
        _ => None,
    };

    let field = match (head, tiled) {
        (HeadArg::Linear, false) => model
            .run_linear_inference(&i1, &i2, task, cams.as_ref())
            .map_err(data)?,
        (HeadArg::Linear, true) => {
            return Err(CliError::Data(
                "tiled inference is supported for the refinement head only".into(),
            ))
        }
        (HeadArg::Refine, false) => model
            .run_inference(&i1, &i2, task, iters, cams.as_ref())
            .map_err(data)?,
        (HeadArg::Refine, true) => {
            let (h, w) = (i1.shape()[1], i1.shape()[2]);
            let plan = TilePlan::new(h, w, model.vit_cfg.image_h, model.vit_cfg.image_w, stride)
                .map_err(data)?;
            tiled_infer(&model, &i1, &i2, task, iters, cams.as_ref(), &plan).map_err(data)?
        }
    };
    write_field(&output, &field)?;
    println!("wrote {} field -> {}", field.kind.name(), output.display());
    Ok(())
}

fn write_field(path: &Path, field: &geovit_core::geometry::GeoField<f32>) -> Result<(), CliError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match (ext.as_str(), field.kind) {
        ("flo", FieldKind::Flow) => write_flo_file(path, field).map_err(data),
        ("png", FieldKind::Flow) => write_kitti_png(path, field).map_err(data),
        ("pfm", FieldKind::Disparity | FieldKind::Depth) => {
            write_pfm_file(path, field).map_err(data)
        }
        _ => Err(CliError::Data(format!(
            "extension `.{ext}` cannot hold a {} field (.flo/.png for flow, .pfm for stereo/depth)",
            field.kind.name()
        ))),
    }
}

fn read_field(
    path: &Path,
    kind: FieldKind,
) -> Result<geovit_core::geometry::GeoField<f32>, CliError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match (ext.as_str(), kind) {
        ("flo", FieldKind::Flow) => read_flo_file(path).map_err(data),
        ("png", FieldKind::Flow) => read_kitti_png(path).map_err(data),
        ("pfm", FieldKind::Disparity | FieldKind::Depth) => read_pfm_file(path, kind).map_err(data),
        _ => Err(CliError::Data(format!(
            "cannot read a {} field from `.{ext}`",
            kind.name()
        ))),
    }
}

fn cmd_eval(task: TaskArg, pred: PathBuf, gt: PathBuf, rule: F1RuleArg) -> Result<(), CliError> {
    let task = task.kind();
    let rule = match rule {
        F1RuleArg::KittiAnd => F1Rule::KittiAnd,
        F1RuleArg::PaperOr => F1Rule::PaperOr,
    };
    let wanted_ext = |ext: &str| match task {
        FieldKind::Flow => ext == "flo" || ext == "png",
        _ => ext == "pfm",
    };
    let mut gt_files: Vec<PathBuf> = std::fs::read_dir(&gt)
        .map_err(data)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(wanted_ext)
        })
        .collect();
    gt_files.sort();
    if gt_files.is_empty() {
        return Err(CliError::Data(format!(
            "no ground-truth {} files in {}",
            task.name(),
            gt.display()
        )));
    }
    let mut report = MetricReport::default();
    for gt_path in &gt_files {
        let name = gt_path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("sample");
        let pred_path = pred.join(name);
        if !pred_path.exists() {
            return Err(CliError::Data(format!(
                "missing prediction for {name} in {}",
                pred.display()
            )));
        }
        let gt_field = read_field(gt_path, task)?;
        let pred_field = read_field(&pred_path, task)?;
        let values = match task {
            FieldKind::Flow => MetricValues {
                epe: Some(epe(&pred_field, &gt_field, None).map_err(data)?),
                f1_all: Some(f1_all(&pred_field, &gt_field, None, rule).map_err(data)?),
                ..Default::default()
            },
            FieldKind::Disparity => MetricValues {
                bad1: Some(bad_np(&pred_field, &gt_field, 1.0, None).map_err(data)?),
                bad2: Some(bad_np(&pred_field, &gt_field, 2.0, None).map_err(data)?),
                bad4: Some(bad_np(&pred_field, &gt_field, 4.0, None).map_err(data)?),
                ..Default::default()
            },
            FieldKind::Depth => MetricValues::from_depth(
                depth_metrics(&pred_field, &gt_field, None).map_err(data)?,
            ),
        };
        report.push(name, values);
    }
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_viz(input: PathBuf, output: PathBuf, max_norm: Option<f32>) -> Result<(), CliError> {
    let field = read_field(&input, FieldKind::Flow)?;
    let img = flow_to_color(&field, max_norm).map_err(data)?;
    img.save(&output).map_err(data)?;
    println!("wrote {}", output.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_make_data(
    kind: TaskArg,
    h: usize,
    w: usize,
    count: usize,
    seed: u64,
    max_disp: f64,
    multiple_of: usize,
    out: PathBuf,
) -> Result<(), CliError> {
    let kind = kind.kind();
    std::fs::create_dir_all(&out).map_err(data)?;
    let params = geovit_core::synth::SynthParams {
        max_disp,
        texture_scale: 8,
        multiple_of,
    };
    for i in 0..count as u64 {
        let sample = make_synthetic(kind, h, w, seed.wrapping_add(i), &params).map_err(data)?;
        let stem = format!("{i:03}");
        imgio::save_image(out.join(format!("{stem}_img1.png")), &sample.i1)
            .map_err(CliError::Data)?;
        imgio::save_image(out.join(format!("{stem}_img2.png")), &sample.i2)
            .map_err(CliError::Data)?;
        match kind {
            FieldKind::Flow => {
                write_flo_file(out.join(format!("{stem}_flow.flo")), &sample.gt).map_err(data)?
            }
            FieldKind::Disparity => {
                write_pfm_file(out.join(format!("{stem}_disp.pfm")), &sample.gt).map_err(data)?
            }
            FieldKind::Depth => {
                write_pfm_file(out.join(format!("{stem}_depth.pfm")), &sample.gt).map_err(data)?;
                cams::write_cams(
                    out.join(format!("{stem}.cams")),
                    sample.cams.as_ref().expect("depth samples carry cameras"),
                )
                .map_err(CliError::Data)?;
            }
        }
    }
    println!("wrote {count} {} samples -> {}", kind.name(), out.display());
    Ok(())
}
