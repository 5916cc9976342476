use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use hexst::config::HexstConfig;
use hexst::dataset::{read_matrix, write_matrix, SpotDataset};
use hexst::metrics::evaluate;
use hexst::model::{load_checkpoint, save_checkpoint, slide_scale, Model, ModelConfig};
use hexst::numerics::Tensor;
use hexst::render::render_heatmap;
use hexst::synth::{generate as synth_generate, holdout_split, TokenRule};
use hexst::trainer::{grad_check, grad_check_fixture, predict, train as run_training, GradCheckOptions};
use hexst::windowing::{lattice_spots, window_strategy, write_partition_records, CollisionPolicy, Shift, render_partition};
use hexst::HexstError;

use crate::{ConfigArg, Failure};

type CmdResult = Result<(), Failure>;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LAST_CHECKPOINT_FILE: &str = "last.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

fn load_config(arg: &ConfigArg) -> Result<HexstConfig, Failure> {
    match &arg.config {
        Some(p) => Ok(HexstConfig::load(p)?),
        None => Ok(HexstConfig::default()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| HexstError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::from(HexstError::io(path, e)))
}

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Failure::from(HexstError::io("<stdout>", e)))
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Tissue seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Section index (overrides the config).
    #[arg(long)]
    pub section: Option<u64>,
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long, value_parser = ["informative", "pure-noise"])]
    pub token_rule: Option<String>,
}

pub fn generate(a: GenerateArgs) -> CmdResult {
    let mut cfg = load_config(&a.config)?.synth;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.section {
        cfg.section = s;
    }
    if let Some(r) = a.radius {
        cfg.radius = r;
    }
    match a.token_rule.as_deref() {
        Some("pure-noise") => cfg.token_rule = TokenRule::PureNoise,
        Some(_) => cfg.token_rule = TokenRule::Informative,
        None => {}
    }
    let data = synth_generate(&cfg)?;
    data.write(&a.out)?;
    eprintln!("{} spots, {} genes -> {}", data.len(), data.gene_count(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// Slide directory.
    #[arg(long, short = 'd')]
    pub data: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Window radius K; partitions a single block. Without it every
    /// windowed (stage, block) of the model config is exported.
    #[arg(long)]
    pub k: Option<usize>,
    /// Shift id with --k: 0 none, 1 half e1, 2 half e2.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=2))]
    pub shift: u8,
    /// Window strategy (overrides the config).
    #[arg(long)]
    pub window: Option<String>,
    /// Resolve slot collisions instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Check every partition's invariants; a violation exits with code 3.
    #[arg(long)]
    pub verify: bool,
    /// CSV output (stdout if omitted).
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
    /// PPM picture of the first exported partition.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
}

pub fn partition(a: PartitionArgs) -> CmdResult {
    let cfg = load_config(&a.config)?.model;
    let data = SpotDataset::read(&a.data)?;
    let policy = if a.lenient { CollisionPolicy::Lenient } else { cfg.collision };
    let strategy = window_strategy(a.window.as_deref().unwrap_or(&cfg.window), policy)?;
    let scale = slide_scale(&data.coords, cfg.scale_k)?;
    let spots = lattice_spots(&data.coords, &scale);

    let jobs: Vec<(usize, usize, usize, Shift)> = match a.k {
        Some(k) => {
            if k == 0 {
                return Err(Failure::usage("--k must be at least 1"));
            }
            vec![(0, 0, k, Shift::from_id(a.shift)?)]
        }
        None => cfg
            .radii
            .iter()
            .enumerate()
            .flat_map(|(s, &k)| (0..cfg.blocks).map(move |b| (s, b, k, Shift::for_block(b))))
            .collect(),
    };
    let mut parts = Vec::with_capacity(jobs.len());
    for (stage, block, k, shift) in jobs {
        let part = strategy.partition(&spots, &scale, k, shift)?.with_stage(stage, block);
        if a.verify {
            part.verify(&spots)?;
        }
        eprintln!(
            "stage {stage} block {block}: K={k} shift={} windows={} overflow={}",
            shift.id(),
            part.windows.len(),
            part.overflow_singletons
        );
        parts.push(part);
    }
    let mut csv = Vec::new();
    write_partition_records(&mut csv, &parts, &data.spot_ids).expect("writing to memory");
    emit(a.out.as_deref(), &String::from_utf8(csv).expect("utf-8 records"))?;
    if let (Some(path), Some(first)) = (&a.image, parts.first()) {
        let mut img = render_partition(&spots, first, a.width);
        img.add_comment(format!("{} windows, stage {} block {}", first.windows.len(), first.stage, first.block));
        write_file(path, &img.to_ppm())?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training slide directory.
    #[arg(long, short = 'd')]
    pub data: PathBuf,
    /// Separate validation slide; without it a fraction of the training slide is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Output directory for checkpoints, log and resolved config.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Split seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
}

fn model_for(cfg: ModelConfig, data: &SpotDataset) -> Result<Model, Failure> {
    let cfg = cfg.with_data_dims(data.token_dim(), data.gene_count(), data.transcriptomic.as_ref().map(|t| t.cols()));
    Ok(Model::new(cfg)?)
}

pub fn train(a: TrainArgs) -> CmdResult {
    let mut cfg = load_config(&a.config)?;
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    if let Some(o) = a.optimizer {
        cfg.train.optimizer = o;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let data = SpotDataset::read(&a.data)?;
    let val = a.val.as_deref().map(SpotDataset::read).transpose()?;
    let model = model_for(cfg.model.clone(), &data)?;
    cfg.model = model.config().clone();
    let outcome = run_training(&model, model.init_params(), &data, val.as_ref(), &cfg.train)?;

    fs::create_dir_all(&a.out).map_err(|e| HexstError::io(&a.out, e))?;
    save_checkpoint(&a.out.join(CHECKPOINT_FILE), model.config(), &outcome.best)?;
    save_checkpoint(&a.out.join(LAST_CHECKPOINT_FILE), model.config(), &outcome.last)?;
    write_file(&a.out.join(TRAIN_LOG_FILE), outcome.log_text().as_bytes())?;
    write_file(&a.out.join(RESOLVED_CONFIG_FILE), cfg.to_toml().as_bytes())?;
    eprintln!(
        "{} steps{}; best total {:.6} at step {}",
        outcome.steps_run,
        if outcome.stopped_early { " (early stop)" } else { "" },
        outcome.best_loss.total,
        outcome.best_step
    );
    Ok(())
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false, args = ["checkpoint", "predictions"])]
pub struct PredictionSource {
    /// Model checkpoint to run on the slide.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Precomputed N×G prediction matrix (f64 little-endian with .meta sidecar).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

fn predictions_for(src: &PredictionSource, data: &SpotDataset) -> Result<Tensor, Failure> {
    if let Some(path) = &src.checkpoint {
        let (cfg, params) = load_checkpoint(path)?;
        let model = Model::new(cfg)?;
        return Ok(predict(&model, &params, data)?);
    }
    let path = src.predictions.as_ref().expect("clap enforces one source");
    let y = read_matrix(path)?;
    if y.shape() != data.expression.shape() {
        return Err(HexstError::format(
            path,
            format!("prediction shape {:?} does not match slide {:?}", y.shape(), data.expression.shape()),
        )
        .into());
    }
    Ok(y)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, short = 'd')]
    pub data: PathBuf,
    #[command(flatten)]
    pub source: PredictionSource,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Score only the held-out spots of the config's train/held-out split.
    #[arg(long)]
    pub holdout: bool,
    /// Report output (stdout if omitted).
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
    /// Also write the full prediction matrix here.
    #[arg(long)]
    pub save_predictions: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let cfg = load_config(&a.config)?;
    let data = SpotDataset::read(&a.data)?;
    let y_hat = predictions_for(&a.source, &data)?;
    if let Some(p) = &a.save_predictions {
        write_matrix(p, &y_hat)?;
    }
    let rows: Vec<usize> = if a.holdout {
        holdout_split(data.len(), cfg.train.holdout_fraction, cfg.train.seed).1
    } else {
        (0..data.len()).collect()
    };
    let report = evaluate(&y_hat.select_rows(&rows), &data.expression.select_rows(&rows), &data.genes, &cfg.eval)?;
    emit(a.out.as_deref(), &report.to_text())
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// First fixture seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = hexst::trainer::GRAD_CHECK_TOLERANCE)]
    pub tolerance: f64,
    /// Scale this parameter tensor's analytic gradient by 1.01 (negative control).
    #[arg(long)]
    pub corrupt: Option<String>,
    /// Per-group report output (stdout if omitted).
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let cfg = load_config(&a.config)?;
    let weights = cfg.train.effective_weights();
    let opts = GradCheckOptions {
        step: a.step,
        tolerance: a.tolerance,
        corrupt: a.corrupt.clone(),
    };
    let mut text = String::new();
    let mut worst = 0.0f64;
    let mut passed = true;
    for seed in a.seed..a.seed + a.seeds.max(1) {
        let (model, params, data) = grad_check_fixture(seed)?;
        let rows: Vec<usize> = (0..data.len()).collect();
        let report = grad_check(&model, &params, &data, &rows, &weights, cfg.train.dev_eps, &opts)?;
        text.push_str(&format!("# seed {seed}\n"));
        text.push_str(&report.to_text());
        worst = worst.max(report.max_rel_err);
        passed &= report.passed;
    }
    emit(a.out.as_deref(), &text)?;
    if passed {
        eprintln!("gradient check passed: max relative error {worst:e} < {:e}", a.tolerance);
        Ok(())
    } else {
        Err(Failure::numeric(format!(
            "gradient check failed: max relative error {worst:e} >= {:e}",
            a.tolerance
        )))
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long, short = 'd')]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "checkpoint")]
    pub predictions: Option<PathBuf>,
    /// Gene to draw (repeatable); all genes if omitted.
    #[arg(long)]
    pub gene: Vec<String>,
    /// Output directory; writes <gene>_truth.ppm and, with predictions, <gene>_pred.ppm.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    #[arg(long, default_value_t = 384)]
    pub width: usize,
}

pub fn render(a: RenderArgs) -> CmdResult {
    let data = SpotDataset::read(&a.data)?;
    let src = PredictionSource {
        checkpoint: a.checkpoint.clone(),
        predictions: a.predictions.clone(),
    };
    let y_hat = if src.checkpoint.is_some() || src.predictions.is_some() {
        Some(predictions_for(&src, &data)?)
    } else {
        None
    };
    let genes: Vec<usize> = if a.gene.is_empty() {
        (0..data.gene_count()).collect()
    } else {
        a.gene
            .iter()
            .map(|g| {
                data.genes
                    .iter()
                    .position(|n| n == g)
                    .ok_or_else(|| Failure::usage(format!("unknown gene '{g}'")))
            })
            .collect::<Result<_, _>>()?
    };
    if a.width < 16 {
        return Err(Failure::usage("--width must be at least 16"));
    }
    for j in genes {
        let name = &data.genes[j];
        let truth = render_heatmap(&data.coords, &data.expression.column(j), a.width, &format!("{name} ground truth"));
        write_file(&a.out.join(format!("{name}_truth.ppm")), &truth.to_ppm())?;
        if let Some(y) = &y_hat {
            let pred = render_heatmap(&data.coords, &y.column(j), a.width, &format!("{name} predicted"));
            write_file(&a.out.join(format!("{name}_pred.ppm")), &pred.to_ppm())?;
        }
    }
    Ok(())
}
