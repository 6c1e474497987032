use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use predrecon::baselines::Method;
use predrecon::harness::{
    design_masks, evaluate, generate_corpus, load_masks, load_task_items, render_report, requested_threads,
    run_pipeline, train_role, with_pool, EvalOptions, ExperimentConfig, MaskKind, Models, Pipeline, PipelineRequest,
    PriorMode, Role, TaskItem, TrainTarget,
};
use predrecon::phantom::{write_pgm16, write_png16, Corpus, Split, Task};
use predrecon::register::RigidTransform2D;
use predrecon::{CartesianMask, RealImage};

#[derive(Parser)]
#[command(name = "predrecon", version, about = "Prediction-prior rectified-flow MRI reconstruction on synthetic phantoms")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Experiment settings shared by every command. A JSON config supplies the
/// defaults; these flags override it.
#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Corpus directory.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Experiment directory for checkpoints, masks and results.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// flair-analog or longitudinal-analog.
    #[arg(long, global = true)]
    task: Option<String>,
    /// Seeds the corpus, network initialization and samplers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated acceleration factors.
    #[arg(long, global = true, value_delimiter = ',')]
    accelerations: Option<Vec<usize>>,
    /// Simulate this many receive coils and combine them before reconstruction.
    #[arg(long, global = true)]
    coils: Option<usize>,
    /// Use priors as given instead of registering them to the acquisition.
    #[arg(long, global = true)]
    no_register: bool,
    /// Also search neighbouring slices when aligning a direct prior.
    #[arg(long, global = true)]
    z_search: bool,
    /// Flow sampling steps.
    #[arg(long, global = true)]
    sample_steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom corpus.
    Generate(GenerateArgs),
    /// Train one network role: prediction, reconstruction, lightrecon or unet.
    Train(TrainArgs),
    /// Design the sampling mask for every acceleration.
    DesignMask(MaskArgs),
    /// Run predict -> register -> reconstruct on one corpus image.
    Pipeline(PipelineArgs),
    /// Sweep methods and accelerations over the test split.
    Evaluate(EvaluateArgs),
    /// Print the report of the last evaluation.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    n_ellipses: Option<usize>,
    /// Scale of the follow-up's rigid offset (longitudinal task).
    #[arg(long)]
    offset_scale: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    role: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct MaskArgs {
    /// greedy, uniform, random or gaussian-random.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    design_sample: Option<usize>,
    /// Score greedy candidates on zero-filled images even if a light net exists.
    #[arg(long)]
    no_light: bool,
}

#[derive(Args)]
struct PipelineArgs {
    /// Corpus image id, e.g. test-00003.
    #[arg(long)]
    image: String,
    /// Acceleration; must have a designed mask unless it is 1.
    #[arg(long)]
    r: usize,
    /// Feed the raw condition contrast instead of the predicted prior.
    #[arg(long)]
    skip_prediction: bool,
    /// Pre-misalign the prior by `deg,dx,dy`.
    #[arg(long, allow_hyphen_values = true)]
    misalign: Option<String>,
    /// Directory for images and the JSON result.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write 16-bit PNGs.
    #[arg(long)]
    png: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Fail when flow-predprior is below flow-noprior at R = 8.
    #[arg(long)]
    assert_directional: bool,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Evaluate only the first `n` test images.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Usage errors exit with 2, everything else with 1.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn build_config(c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)
            .with_context(|| format!("reading config {}", p.display()))
            .map_err(usage)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &c.corpus {
        cfg.corpus = v.clone();
    }
    if let Some(v) = &c.output {
        cfg.output = v.clone();
    }
    if let Some(v) = &c.task {
        cfg.task = v.parse::<Task>().map_err(usage)?;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
        cfg.generate.seed = v;
    }
    if let Some(v) = &c.accelerations {
        cfg.accelerations = v.clone();
    }
    if c.coils.is_some() {
        cfg.coils = c.coils;
    }
    if c.no_register {
        cfg.register = false;
    }
    if c.z_search {
        cfg.z_search = true;
    }
    if let Some(v) = c.sample_steps {
        cfg.flow.sample_steps = v;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(usage)?;
    let probe = dir.join(".predrecon-write-probe");
    std::fs::write(&probe, b"")
        .with_context(|| format!("{} is not writable", dir.display()))
        .map_err(usage)?;
    let _ = std::fs::remove_file(probe);
    Ok(())
}

fn cmd_generate(mut cfg: ExperimentConfig, a: &GenerateArgs) -> Result<(), Failure> {
    let g = &mut cfg.generate;
    g.n_train = a.n_train.unwrap_or(g.n_train);
    g.n_val = a.n_val.unwrap_or(g.n_val);
    g.n_test = a.n_test.unwrap_or(g.n_test);
    g.size = a.size.unwrap_or(g.size);
    g.noise_sigma = a.noise_sigma.unwrap_or(g.noise_sigma);
    g.n_ellipses = a.n_ellipses.unwrap_or(g.n_ellipses);
    g.offset_scale = a.offset_scale.unwrap_or(g.offset_scale);
    cfg.validate().map_err(usage)?;
    ensure_dir(&cfg.corpus)?;
    let m = generate_corpus(&cfg)?;
    println!(
        "wrote {} images ({} / {} / {}) to {}",
        m.entries.len(),
        m.counts[0],
        m.counts[1],
        m.counts[2],
        cfg.corpus.display()
    );
    Ok(())
}

fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus, Failure> {
    Corpus::load(&cfg.corpus).with_context(|| format!("loading corpus {}", cfg.corpus.display())).map_err(Failure::Runtime)
}

fn cmd_train(mut cfg: ExperimentConfig, a: &TrainArgs) -> Result<(), Failure> {
    let target: TrainTarget = a.role.parse().map_err(usage)?;
    for role in target.roles() {
        let rc = match role {
            Role::Prediction => &mut cfg.nets.prediction,
            Role::LightRecon => &mut cfg.nets.lightrecon,
            Role::Unet => &mut cfg.nets.unet,
            _ => &mut cfg.nets.reconstruction,
        };
        rc.train.epochs = a.epochs.unwrap_or(rc.train.epochs);
        rc.train.steps_per_epoch = a.steps_per_epoch.unwrap_or(rc.train.steps_per_epoch);
        rc.train.batch_size = a.batch_size.unwrap_or(rc.train.batch_size);
        rc.train.lr = a.lr.unwrap_or(rc.train.lr);
        if rc.train.batch_size == 0 || rc.train.lr.is_nan() || rc.train.lr <= 0.0 {
            return Err(usage(anyhow!("batch size and learning rate must be positive")));
        }
    }
    cfg.validate().map_err(usage)?;
    ensure_dir(&cfg.output)?;
    let corpus = load_corpus(&cfg)?;
    for &role in target.roles() {
        let out = train_role(role, &cfg, &corpus).with_context(|| format!("training {role}"))?;
        for e in &out.report.curve {
            println!(
                "{role} epoch {:>3}  train {:.6}  val {:.6}  lr {:.3e}",
                e.epoch, e.train_loss, e.val_loss, e.lr
            );
        }
        println!(
            "{role}: best epoch {} (val {:.6}) in {:.1} s -> {}",
            out.report.best_epoch,
            out.report.best_val_loss,
            out.seconds,
            out.checkpoint.display()
        );
    }
    Ok(())
}

fn cmd_design_mask(mut cfg: ExperimentConfig, a: &MaskArgs) -> Result<(), Failure> {
    if let Some(k) = &a.kind {
        cfg.mask.kind = serde_json::from_value::<MaskKind>(serde_json::Value::String(k.clone()))
            .map_err(|_| usage(anyhow!("unknown mask kind `{k}`")))?;
    }
    cfg.mask.design_sample = a.design_sample.unwrap_or(cfg.mask.design_sample);
    cfg.validate().map_err(usage)?;
    ensure_dir(&cfg.output)?;
    let corpus = load_corpus(&cfg)?;
    let train = load_task_items(&cfg, &corpus, Split::Train)?;
    let models = Models::load(&cfg.output)?;
    let light = if a.no_light { None } else { models.get(Role::LightRecon) };
    let set = design_masks(&cfg, &train, light)?;
    for &r in &cfg.accelerations {
        let m = set.get(r)?;
        println!("R = {r}: {} of {} lines {:?}", m.count(), m.line_count(), m.lines());
    }
    Ok(())
}

fn find_item(cfg: &ExperimentConfig, corpus: &Corpus, id: &str) -> Result<TaskItem, Failure> {
    for split in Split::ALL {
        if let Some(item) = load_task_items(cfg, corpus, split)?.into_iter().find(|i| i.id == id) {
            return Ok(item);
        }
    }
    Err(usage(anyhow!("no image `{id}` in {}", cfg.corpus.display())))
}

fn parse_transform(s: &str) -> Result<RigidTransform2D, Failure> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(anyhow!("--misalign expects `deg,dx,dy`, got `{s}`")))?;
    match v.as_slice() {
        [t, x, y] => Ok(RigidTransform2D::new(*t, *x, *y)),
        _ => Err(usage(anyhow!("--misalign expects three numbers, got `{s}`"))),
    }
}

fn write_image(dir: &Path, name: &str, img: &RealImage, range: (f64, f64), png: bool) -> Result<(), Failure> {
    write_pgm16(&dir.join(format!("{name}.pgm")), img, Some(range))?;
    if png {
        write_png16(&dir.join(format!("{name}.png")), img, Some(range))?;
    }
    Ok(())
}

fn cmd_pipeline(cfg: ExperimentConfig, a: &PipelineArgs) -> Result<(), Failure> {
    cfg.validate().map_err(usage)?;
    if a.r == 0 {
        return Err(usage(anyhow!("acceleration must be >= 1")));
    }
    let misalign = a.misalign.as_deref().map(parse_transform).transpose()?;
    let corpus = load_corpus(&cfg)?;
    let item = find_item(&cfg, &corpus, &a.image)?;
    let mask = if a.r == 1 {
        CartesianMask::full(item.size())
    } else {
        load_masks(&cfg.output, &[a.r])?.get(a.r)?.clone()
    };
    let models = Models::load(&cfg.output)?;
    let pipe = Pipeline {
        models: &models,
        register: cfg.register,
        z_search: cfg.z_search,
        sample_steps: cfg.flow.sample_steps,
        cs: cfg.cs.base.clone(),
    };
    let mode = if a.skip_prediction { PriorMode::Direct } else { PriorMode::Predicted };
    let out = run_pipeline(
        &pipe,
        &PipelineRequest {
            item: &item,
            mask: &mask,
            mode,
            misalign,
            coils: cfg.coils,
            seed: cfg.seed,
        },
    )?;
    let dir = a
        .out_dir
        .clone()
        .unwrap_or_else(|| cfg.output.join("pipeline").join(format!("{}-R{}", item.id, a.r)));
    ensure_dir(&dir)?;
    let hi = item.truth.data().iter().cloned().fold(0.0, f64::max);
    let recon = out.image.magnitude_image();
    let max_abs_error = out.image.max_abs_diff(&item.truth.to_complex()?);
    write_image(&dir, "recon", &recon, (0.0, hi), a.png)?;
    write_image(&dir, "prior", &out.prior, (0.0, hi), a.png)?;
    write_image(&dir, "truth", &item.truth, (0.0, hi), a.png)?;
    let summary = serde_json::json!({
        "image": item.id,
        "R": a.r,
        "mode": mode,
        "transform": out.transform,
        "z_shift": out.z_shift,
        "psnr": out.psnr,
        "ssim": out.ssim,
        "consistency_error": out.consistency_error,
        "max_abs_error": max_abs_error,
    });
    let text = serde_json::to_string_pretty(&summary)?;
    std::fs::write(dir.join("pipeline.json"), &text)?;
    println!("{text}");
    Ok(())
}

fn cmd_evaluate(mut cfg: ExperimentConfig, a: &EvaluateArgs) -> Result<(), Failure> {
    if let Some(ms) = &a.methods {
        cfg.methods = ms.iter().map(|m| m.parse::<Method>()).collect::<Result<_, _>>().map_err(usage)?;
    }
    if a.limit.is_some() {
        cfg.eval_limit = a.limit;
    }
    cfg.validate().map_err(usage)?;
    let result = evaluate(
        &cfg,
        &EvalOptions {
            assert_directional: a.assert_directional,
        },
    );
    let eval = result?;
    print!("{}", predrecon::metrics::format_table(&eval.rows));
    println!("results in {}", cfg.output.join(predrecon::harness::EVAL_DIR).display());
    Ok(())
}

fn cmd_report(cfg: ExperimentConfig, a: &ReportArgs) -> Result<(), Failure> {
    let text = render_report(&cfg)?;
    if let Some(p) = &a.out {
        std::fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?;
    }
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = build_config(&cli.common)?;
    let threads = requested_threads().map_err(usage)?;
    with_pool(threads, move || match &cli.command {
        Command::Generate(a) => cmd_generate(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::DesignMask(a) => cmd_design_mask(cfg, a),
        Command::Pipeline(a) => cmd_pipeline(cfg, a),
        Command::Evaluate(a) => cmd_evaluate(cfg, a),
        Command::Report(a) => cmd_report(cfg, a),
    })
    .map_err(|e| Failure::Runtime(e.into()))?
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
