//! Full-batch training over one slide, optimizers, and the finite-difference
//! gradient check.

use serde::{Deserialize, Serialize};

use crate::dataset::SpotDataset;
use crate::error::{HexstError, Result};
use crate::losses::{LossReport, LossToggles, LossWeights, DEFAULT_DEV_EPS};
use crate::metrics::pcc_genewise;
use crate::model::{Geometry, Model, ModelConfig, ModelParams};
use crate::numerics::Tensor;
use crate::objective::objective;
use crate::synth::{generate, holdout_split, GenePattern, SynthConfig};

pub trait Optimizer: Send {
    fn name(&self) -> &'static str;

    /// Updates `params` in place from `grads` (same length).
    fn step(&mut self, params: &mut [f64], grads: &[f64]);
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        for (p, g) in params.iter_mut().zip(grads) {
            *p -= self.lr * g;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        if self.m.len() != params.len() {
            self.m = vec![0.0; params.len()];
            self.v = vec![0.0; params.len()];
            self.t = 0;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

pub const OPTIMIZERS: [&str; 2] = ["sgd", "adam"];

pub fn optimizer(name: &str, lr: f64) -> Result<Box<dyn Optimizer>> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(HexstError::Input(format!("learning rate {lr}")));
    }
    match name {
        "sgd" => Ok(Box::new(Sgd { lr })),
        "adam" => Ok(Box::new(Adam::new(lr))),
        other => Err(HexstError::Input(format!(
            "unknown optimizer '{other}' (known: {})",
            OPTIMIZERS.join(", ")
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub optimizer: String,
    /// Seed of the train/held-out split.
    pub seed: u64,
    pub weights: LossWeights,
    pub toggles: LossToggles,
    /// Held-out evaluation period in steps; 0 disables evaluation and early stopping.
    pub eval_every: usize,
    pub holdout_fraction: f64,
    /// Evaluations without held-out improvement before stopping; 0 disables.
    pub patience: usize,
    pub dev_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            lr: 1e-3,
            optimizer: "adam".into(),
            seed: 0,
            weights: LossWeights::default(),
            toggles: LossToggles::default(),
            eval_every: 10,
            holdout_fraction: 0.3,
            patience: 50,
            dev_eps: DEFAULT_DEV_EPS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(HexstError::Input(format!("holdout_fraction {} not in [0, 1)", self.holdout_fraction)));
        }
        if !(self.dev_eps > 0.0) {
            return Err(HexstError::Input("dev_eps must be positive".into()));
        }
        optimizer(&self.optimizer, self.lr).map(|_| ())
    }

    pub fn effective_weights(&self) -> LossWeights {
        self.weights.masked(&self.toggles)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the step with the lowest training total loss.
    pub best: ModelParams,
    pub best_step: usize,
    pub best_loss: LossReport,
    pub last: ModelParams,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub train_rows: Vec<usize>,
    /// Held-out spots of the training slide; empty when a validation slide is used.
    pub holdout_rows: Vec<usize>,
    /// One JSON object per line: every step's losses, plus `holdout_pcc` on evaluation steps.
    pub log: Vec<String>,
}

impl TrainOutcome {
    pub fn log_text(&self) -> String {
        let mut s = self.log.join("\n");
        s.push('\n');
        s
    }
}

/// Predicted expression for every spot of `data`.
pub fn predict(model: &Model, params: &ModelParams, data: &SpotDataset) -> Result<Tensor> {
    let geom = model.geometry(&data.coords)?;
    Ok(model.forward(params, &data.tokens, &geom)?.y_hat)
}

fn non_finite_error(step: usize, report: &LossReport, params: &ModelParams) -> HexstError {
    let bad: Vec<&str> = report
        .terms()
        .iter()
        .filter(|(_, v)| !v.is_finite())
        .map(|(n, _)| *n)
        .collect();
    let (name, mag) = params.max_abs_entry();
    HexstError::Numeric(format!(
        "non-finite loss at step {step} (terms: {}); largest parameter |{name}| = {mag:e}",
        if bad.is_empty() { "total".to_string() } else { bad.join(", ") }
    ))
}

struct Holdout<'a> {
    data: &'a SpotDataset,
    geom: Geometry,
    rows: Vec<usize>,
}

impl Holdout<'_> {
    fn pcc(&self, model: &Model, params: &ModelParams) -> Result<f64> {
        let out = model.forward(params, &self.data.tokens, &self.geom)?;
        pcc_genewise(&out.y_hat.select_rows(&self.rows), &self.data.expression.select_rows(&self.rows))
    }
}

/// Trains from `init`, one full-slide step per iteration.
///
/// With a `validation` slide, every spot of `data` is trained on and the
/// held-out score comes from the other slide. Without one, a seeded
/// fraction of `data` is held out; those spots stay in the slide as
/// attention context but never enter the loss, so their score includes
/// interpolation from trained neighbours.
pub fn train(
    model: &Model,
    init: ModelParams,
    data: &SpotDataset,
    validation: Option<&SpotDataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let weights = cfg.effective_weights();
    let geom = model.geometry(&data.coords)?;
    let (train_rows, holdout_rows, holdout) = match validation {
        Some(v) => {
            if v.genes != data.genes || v.token_dim() != data.token_dim() {
                return Err(HexstError::Structural("validation slide has different genes or token width".into()));
            }
            let h = Holdout {
                data: v,
                geom: model.geometry(&v.coords)?,
                rows: (0..v.len()).collect(),
            };
            ((0..data.len()).collect(), Vec::new(), h)
        }
        None => {
            let (train_rows, hold) = holdout_split(data.len(), cfg.holdout_fraction, cfg.seed);
            let h = Holdout {
                data,
                geom: geom.clone(),
                rows: hold.clone(),
            };
            (train_rows, hold, h)
        }
    };
    if train_rows.len() < 2 {
        return Err(HexstError::Input(format!("{} training spots; need at least 2", train_rows.len())));
    }
    let evaluate = cfg.eval_every > 0 && holdout.rows.len() >= 2;
    let mut opt = optimizer(&cfg.optimizer, cfg.lr)?;
    let mut params = init;
    let mut best: Option<(ModelParams, usize, LossReport)> = None;
    let mut log = Vec::with_capacity(cfg.steps);
    let mut best_pcc = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;
    let mut steps_run = 0;

    for step in 0..cfg.steps {
        let out = model.forward(&params, &data.tokens, &geom)?;
        let (report, out_grads) = objective(&out, data, &train_rows, &weights, cfg.dev_eps)?;
        if !report.total.is_finite() {
            return Err(non_finite_error(step, &report, &params));
        }
        let mut line: serde_json::Value = serde_json::from_str(&report.log_line(step)).expect("valid json");
        if best.as_ref().is_none_or(|(_, _, b)| report.total < b.total) {
            best = Some((params.clone(), step, report));
        }
        let grads = model.backward(&params, &out, &geom, &out_grads)?;
        if grads.values.iter().any(|g| !g.is_finite()) {
            return Err(non_finite_error(step, &report, &params));
        }
        opt.step(&mut params.values, &grads.values);
        steps_run = step + 1;

        if evaluate && (step + 1) % cfg.eval_every == 0 {
            let pcc = holdout.pcc(model, &params)?;
            line["holdout_pcc"] = serde_json::json!(pcc);
            if pcc > best_pcc {
                best_pcc = pcc;
                stale = 0;
            } else {
                stale += 1;
            }
            log.push(line.to_string());
            if cfg.patience > 0 && stale >= cfg.patience {
                log::info!("held-out pcc flat for {stale} evaluations; stopping at step {step}");
                stopped_early = true;
                break;
            }
        } else {
            log.push(line.to_string());
        }
    }

    let last = params;
    let (best, best_step, best_loss) = best.unwrap_or_else(|| (last.clone(), 0, LossReport::default()));
    Ok(TrainOutcome {
        best,
        best_step,
        best_loss,
        last,
        steps_run,
        stopped_early,
        train_rows,
        holdout_rows,
        log,
    })
}

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
/// Floor of the relative-error denominator so that vanishing gradients
/// compare in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Scale the analytic gradient of this parameter tensor by 1.01 (negative control).
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: GRAD_CHECK_TOLERANCE,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("group,len,max_rel_err,worst_index\n");
        for g in &self.groups {
            s.push_str(&format!("{},{},{:e},{}\n", g.name, g.len, g.max_rel_err, g.worst_index));
        }
        s.push_str(&format!(
            "overall,{},{:e},{}\n",
            self.groups.iter().map(|g| g.len).sum::<usize>(),
            self.max_rel_err,
            if self.passed { "pass" } else { "fail" }
        ));
        s
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares the analytic gradient of the weighted objective on `rows` with
/// central differences, one parameter at a time.
pub fn grad_check(
    model: &Model,
    params: &ModelParams,
    data: &SpotDataset,
    rows: &[usize],
    weights: &LossWeights,
    dev_eps: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.step > 0.0) {
        return Err(HexstError::Input("finite-difference step must be positive".into()));
    }
    let geom = model.geometry(&data.coords)?;
    let loss = |p: &ModelParams| -> Result<f64> {
        let out = model.forward(p, &data.tokens, &geom)?;
        Ok(objective(&out, data, rows, weights, dev_eps)?.0.total)
    };
    let out = model.forward(params, &data.tokens, &geom)?;
    let (_, og) = objective(&out, data, rows, weights, dev_eps)?;
    let mut analytic = model.backward(params, &out, &geom, &og)?;
    if let Some(name) = &opts.corrupt {
        for g in analytic.get_mut(&params.layout.entry(name)?.name.clone()) {
            *g *= 1.01;
        }
    }

    let mut probe = params.clone();
    let mut groups = Vec::new();
    for e in params.layout.entries() {
        let mut worst = (0.0f64, 0usize);
        for (k, i) in e.range().enumerate() {
            let orig = probe.values[i];
            probe.values[i] = orig + opts.step;
            let plus = loss(&probe)?;
            probe.values[i] = orig - opts.step;
            let minus = loss(&probe)?;
            probe.values[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = relative_error(analytic.values[i], numeric);
            if !err.is_finite() {
                return Err(HexstError::Numeric(format!("non-finite gradient comparison at {}[{k}]", e.name)));
            }
            if err > worst.0 {
                worst = (err, k);
            }
        }
        groups.push(GroupCheck {
            name: e.name.clone(),
            len: e.len(),
            max_rel_err: worst.0,
            worst_index: worst.1,
        });
    }
    let max_rel_err = groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        groups,
        max_rel_err,
        tolerance: opts.tolerance,
        passed: max_rel_err < opts.tolerance,
    })
}

/// Spots in the gradient-check fixture.
pub const GRAD_CHECK_SPOTS: usize = 20;

/// Small model and slide for gradient checking: 20 spots, two stages
/// (one windowed, one global), two heads, every head and loss active.
pub fn grad_check_fixture(seed: u64) -> Result<(Model, ModelParams, SpotDataset)> {
    use GenePattern::*;
    let synth = SynthConfig {
        radius: 3,
        genes: vec![Boundary, Gradient, Sparse, Noise],
        token_dim: 6,
        transcriptomic_dim: 5,
        seed,
        ..SynthConfig::default()
    };
    let data = generate(&synth)?.truncated(GRAD_CHECK_SPOTS);
    let cfg = ModelConfig {
        stages: 2,
        blocks: 1,
        dim: 12,
        heads: 2,
        radii: vec![1],
        d_out: 8,
        init_seed: seed.wrapping_add(1),
        ..ModelConfig::default()
    }
    .with_data_dims(data.token_dim(), data.gene_count(), data.transcriptomic.as_ref().map(|t| t.cols()));
    let model = Model::new(cfg)?;
    let params = model.init_params();
    Ok((model, params, data))
}
