//! Alternating adversarial optimization, checkpointing and metrics.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::networks::{ArchConfig, ModelBundle, ModelDims, Variant, DISCRIMINATOR_ROLES, GENERATOR_ROLES};
use crate::objectives::{
    discriminator_objective, generator_objective, supervised_losses, BoundBundle, GenLossForm, LossReport,
    LossWeights, StepBatch,
};
use crate::optim::{OptimConfig, OptimState};
use crate::rng::{sample_gaussian, Rng};
use crate::synth::{sample_paired, sample_unpaired, Domain, JointSpec, PairedBatch, TaskConfig};
use crate::tape::Tape;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const FINAL_CHECKPOINT: &str = "final.augc";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// How supervised terms enter the generator update on supervised steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupervisedMode {
    /// Added to the unsupervised objective in one update.
    #[default]
    Joint,
    /// A second generator update on the supervised terms alone.
    Separate,
}

fn default_latent() -> usize {
    4
}
fn default_batch() -> usize {
    64
}
fn default_optimizer() -> OptimConfig {
    OptimConfig::adam(1e-3)
}
fn default_pool() -> usize {
    1000
}
fn default_one() -> usize {
    1
}
fn default_checkpoint_every() -> u64 {
    1000
}
fn default_metrics_every() -> u64 {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub task: TaskConfig,
    #[serde(default = "default_latent")]
    pub dim_za: usize,
    #[serde(default = "default_latent")]
    pub dim_zb: usize,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "default_optimizer")]
    pub gen_optimizer: OptimConfig,
    #[serde(default = "default_optimizer")]
    pub disc_optimizer: OptimConfig,
    #[serde(default)]
    pub gen_loss: GenLossForm,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub total_steps: u64,
    /// Fraction `s` of steps that also see a paired batch.
    #[serde(default)]
    pub paired_fraction: f64,
    /// Size of the fixed paired subset paired batches are drawn from.
    #[serde(default = "default_pool")]
    pub paired_pool: usize,
    /// Discriminator updates per generator update.
    #[serde(default = "default_one")]
    pub disc_steps: usize,
    #[serde(default)]
    pub supervised_mode: SupervisedMode,
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    #[serde(default = "default_metrics_every")]
    pub metrics_every: u64,
}

impl ExperimentConfig {
    /// Defaults for a task and variant; the caller sets steps and seed.
    pub fn new(variant: Variant, task: TaskConfig, total_steps: u64, seed: u64) -> Self {
        ExperimentConfig {
            variant,
            task,
            dim_za: default_latent(),
            dim_zb: default_latent(),
            arch: ArchConfig::default(),
            weights: LossWeights::default(),
            gen_optimizer: default_optimizer(),
            disc_optimizer: default_optimizer(),
            gen_loss: GenLossForm::default(),
            batch_size: default_batch(),
            total_steps,
            paired_fraction: 0.0,
            paired_pool: default_pool(),
            disc_steps: 1,
            supervised_mode: SupervisedMode::default(),
            seed,
            out_dir: None,
            checkpoint_every: default_checkpoint_every(),
            metrics_every: default_metrics_every(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("`{key}` {why}")));
        if self.batch_size < 2 {
            return bad("batch_size", "must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.paired_fraction) {
            return bad("paired_fraction", "must lie in [0, 1]");
        }
        if self.paired_fraction > 0.0 && self.variant != Variant::AugCyclegan {
            return bad("paired_fraction", "must be 0 unless variant is aug-cyclegan");
        }
        if self.paired_fraction > 0.0 && self.paired_pool == 0 {
            return bad("paired_pool", "must be positive when paired_fraction > 0");
        }
        if self.variant.is_stochastic() && (self.dim_za == 0 || self.dim_zb == 0) {
            return bad("dim_za", "and `dim_zb` must be positive for stochastic variants");
        }
        if self.disc_steps == 0 {
            return bad("disc_steps", "must be at least 1");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every", "must be at least 1");
        }
        if self.metrics_every == 0 {
            return bad("metrics_every", "must be at least 1");
        }
        for (key, o) in [("gen_optimizer", &self.gen_optimizer), ("disc_optimizer", &self.disc_optimizer)] {
            if !(o.lr() > 0.0 && o.lr().is_finite()) {
                return bad(key, "needs a positive learning rate");
            }
        }
        self.weights.validate()
    }

    pub fn model_dims(&self, spec: &JointSpec) -> ModelDims {
        ModelDims {
            dim_a: spec.dim_a,
            dim_b: spec.dim_b,
            dim_za: self.dim_za,
            dim_zb: self.dim_zb,
        }
    }

    /// Whether step `t` (1-based) carries a paired batch. Supervised steps are
    /// spread evenly: step `t` is supervised iff `floor(t s)` increments, so
    /// exactly `floor(T s)` of the first `T` steps are, and `s = 1/n` gives
    /// every `n`-th step.
    pub fn supervised_at(&self, t: u64) -> bool {
        let s = self.paired_fraction;
        s > 0.0 && t > 0 && (t as f64 * s).floor() > ((t - 1) as f64 * s).floor()
    }

    /// The same config with the fields that do not affect the trajectory
    /// cleared; used to match a checkpoint against a resume config.
    fn trajectory_key(&self) -> Result<serde_json::Value> {
        let mut c = self.clone();
        c.total_steps = 0;
        c.out_dir = None;
        c.checkpoint_every = 1;
        c.metrics_every = 1;
        Ok(serde_json::to_value(c)?)
    }
}

/// Step-level switches shared by every update.
#[derive(Clone, Copy, Debug)]
pub struct StepOptions {
    pub weights: LossWeights,
    pub form: GenLossForm,
    pub disc_steps: usize,
    pub supervised_mode: SupervisedMode,
}

impl StepOptions {
    pub fn from_config(c: &ExperimentConfig) -> Self {
        StepOptions {
            weights: c.weights,
            form: c.gen_loss,
            disc_steps: c.disc_steps,
            supervised_mode: c.supervised_mode,
        }
    }
}

fn check_finite(r: &LossReport, step: u64) -> Result<()> {
    match r.first_non_finite() {
        Some(term) => Err(Error::NonFinite(format!("loss term `{term}` at step {step}"))),
        None => Ok(()),
    }
}

/// One discriminator update on detached fakes (repeated `disc_steps` times on
/// the same batch), then one generator and encoder update.
pub fn train_step(
    bundle: &mut ModelBundle,
    batch: &StepBatch,
    gen_opt: &mut OptimState,
    disc_opt: &mut OptimState,
    opts: &StepOptions,
    step: u64,
) -> Result<LossReport> {
    let mut report = LossReport::default();
    for _ in 0..opts.disc_steps {
        let mut tape = Tape::new();
        let grads = {
            let nets = BoundBundle::new(&mut tape, bundle, false, true);
            let (terms, total) = discriminator_objective(&mut tape, &nets, batch)?;
            report.fill_disc(&tape, &terms, total);
            check_finite(&report, step)?;
            let g = tape.backward(total)?;
            nets.gradients(&DISCRIMINATOR_ROLES, &tape, &g)
        };
        let mut params = bundle.collect_params(&DISCRIMINATOR_ROLES);
        disc_opt.step(&mut params, &grads)?;
        bundle.scatter_params(&params)?;
    }

    let separate = opts.supervised_mode == SupervisedMode::Separate && batch.paired.is_some();
    let unsup;
    let main_batch = if separate {
        unsup = StepBatch {
            paired: None,
            ..batch.clone()
        };
        &unsup
    } else {
        batch
    };
    gen_update(bundle, gen_opt, step, &mut report, |tape, nets| {
        generator_objective(tape, nets, main_batch, &opts.weights, opts.form)
    })?;
    if separate {
        let (pa, pb) = batch.paired.as_ref().expect("checked above");
        let main = report;
        gen_update(bundle, gen_opt, step, &mut report, |tape, nets| {
            let need = |t: &Option<crate::tensor::Tensor>| {
                t.clone()
                    .ok_or_else(|| Error::Invalid("step batch is missing latent prior draws".into()))
            };
            let (pza, pzb) = (need(&batch.prior_za)?, need(&batch.prior_zb)?);
            let (a, b) = (tape.constant(pa), tape.constant(pb));
            let (za, zb) = (tape.constant(&pza), tape.constant(&pzb));
            let (terms, _) = supervised_losses(tape, nets, a, b, za, zb, opts.form)?;
            let total = terms.total(tape, &opts.weights, Variant::AugCyclegan)?;
            Ok((terms, total))
        })?;
        let sup = report;
        report = LossReport {
            sup_a: sup.sup_a,
            sup_b: sup.sup_b,
            sup_gan_za: sup.sup_gan_za,
            sup_gan_zb: sup.sup_gan_zb,
            total_gen: main.total_gen + sup.total_gen,
            ..main
        };
    }
    Ok(report)
}

fn gen_update<F>(
    bundle: &mut ModelBundle,
    gen_opt: &mut OptimState,
    step: u64,
    report: &mut LossReport,
    objective: F,
) -> Result<()>
where
    F: FnOnce(&mut Tape, &BoundBundle<'_>) -> Result<(crate::objectives::GenTerms, crate::tape::Var)>,
{
    let mut tape = Tape::new();
    let grads = {
        let nets = BoundBundle::new(&mut tape, bundle, true, false);
        let (terms, total) = objective(&mut tape, &nets)?;
        report.fill_gen(&tape, &terms, total);
        check_finite(report, step)?;
        let g = tape.backward(total)?;
        nets.gradients(&GENERATOR_ROLES, &tape, &g)
    };
    let mut params = bundle.collect_params(&GENERATOR_ROLES);
    gen_opt.step(&mut params, &grads)?;
    bundle.scatter_params(&params)
}

/// Mutable state of one run.
pub struct Trainer {
    pub config: ExperimentConfig,
    pub spec: JointSpec,
    pub bundle: ModelBundle,
    pub gen_opt: OptimState,
    pub disc_opt: OptimState,
    pub rng: Rng,
    pub step: u64,
    paired_pool: Option<PairedBatch>,
}

impl Trainer {
    /// Fresh run. Stream 0 of the seed initializes the networks, stream 1
    /// drives training batches, stream 2 draws the paired subset.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let spec = JointSpec::from_config(&config.task)?;
        let root = Rng::new(config.seed);
        let bundle = ModelBundle::build(
            config.variant,
            config.model_dims(&spec),
            &config.arch,
            &mut root.split(0),
        )?;
        let paired_pool = if config.paired_fraction > 0.0 {
            Some(sample_paired(&spec, config.paired_pool, &mut root.split(2))?)
        } else {
            None
        };
        let gen_opt = OptimState::new(config.gen_optimizer, &bundle.collect_params(&GENERATOR_ROLES));
        let disc_opt = OptimState::new(config.disc_optimizer, &bundle.collect_params(&DISCRIMINATOR_ROLES));
        Ok(Trainer {
            rng: root.split(1),
            config,
            spec,
            bundle,
            gen_opt,
            disc_opt,
            step: 0,
            paired_pool,
        })
    }

    /// Restores a run. `config` may differ from the stored echo only in
    /// step count, output directory and cadences.
    pub fn from_checkpoint(config: ExperimentConfig, ck: &Checkpoint) -> Result<Self> {
        let stored: ExperimentConfig = serde_json::from_str(&ck.config_json)?;
        if stored.trajectory_key()? != config.trajectory_key()? {
            return Err(Error::Config(
                "checkpoint was written by a different experiment configuration".into(),
            ));
        }
        if ck.step > config.total_steps {
            return Err(Error::Config(format!(
                "resume-step mismatch: checkpoint is at step {} but total_steps is {}",
                ck.step, config.total_steps
            )));
        }
        let mut t = Trainer::new(config)?;
        let expected = t.bundle.all_params();
        if ck.params.len() != expected.len() || ck.params.iter().any(|(k, _)| expected.get(k).is_none()) {
            return Err(Error::Invalid("checkpoint parameters do not match the model".into()));
        }
        t.bundle.scatter_params(&ck.params)?;
        let opt = |name: &str| {
            ck.optimizer(name)
                .cloned()
                .ok_or_else(|| Error::Invalid(format!("checkpoint has no `{name}` optimizer")))
        };
        t.gen_opt = opt("gen")?;
        t.disc_opt = opt("disc")?;
        t.rng = Rng::from_state(ck.rng);
        t.step = ck.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            config_json: self.config.to_json()?,
            step: self.step,
            params: self.bundle.all_params(),
            optimizers: vec![("gen".into(), self.gen_opt.clone()), ("disc".into(), self.disc_opt.clone())],
            rng: self.rng.state(),
        })
    }

    pub fn paired_pool(&self) -> Option<&PairedBatch> {
        self.paired_pool.as_ref()
    }

    /// Unpaired data, latent draws and (on supervised steps) a paired batch
    /// for step `t`.
    pub fn draw_batch(&mut self, t: u64) -> Result<StepBatch> {
        let n = self.config.batch_size;
        let rng = &mut self.rng;
        let a = sample_unpaired(&self.spec, Domain::A, n, rng)?;
        let b = sample_unpaired(&self.spec, Domain::B, n, rng)?;
        let (za, zb) = (self.bundle.dims.dim_za, self.bundle.dims.dim_zb);
        let mut draw = |w: usize, on: bool| on.then(|| sample_gaussian(rng, &[n, w]));
        let variant = self.config.variant;
        let stoch = variant == Variant::StochCyclegan;
        let aug = variant == Variant::AugCyclegan;
        let z_a = draw(za, variant.is_stochastic());
        let z_b = draw(zb, variant.is_stochastic());
        let z_a_cycle = draw(za, stoch);
        let z_b_cycle = draw(zb, stoch);
        let prior_za = draw(za, aug);
        let prior_zb = draw(zb, aug);
        let paired = match &self.paired_pool {
            Some(pool) if self.config.supervised_at(t) => {
                let idx: Vec<usize> = (0..n).map(|_| self.rng.below(pool.a.rows())).collect();
                Some((pool.a.gather_rows(&idx), pool.b.gather_rows(&idx)))
            }
            _ => None,
        };
        Ok(StepBatch {
            a,
            b,
            z_a,
            z_b,
            z_a_cycle,
            z_b_cycle,
            prior_za,
            prior_zb,
            paired,
        })
    }

    /// Advances one step and returns its report.
    pub fn step(&mut self) -> Result<LossReport> {
        let t = self.step + 1;
        let batch = self.draw_batch(t)?;
        let opts = StepOptions::from_config(&self.config);
        let report = train_step(&mut self.bundle, &batch, &mut self.gen_opt, &mut self.disc_opt, &opts, t)?;
        self.step = t;
        Ok(report)
    }
}

pub fn metrics_header() -> String {
    let mut h = String::from("step");
    for c in LossReport::COLUMNS {
        h.push(',');
        h.push_str(c);
    }
    h
}

pub fn metrics_line(step: u64, r: &LossReport) -> String {
    let mut s = step.to_string();
    for v in r.values() {
        s.push(',');
        s.push_str(&v.to_string());
    }
    s
}

/// Parses a metrics file into `(step, report)` rows.
pub fn read_metrics(path: &Path) -> Result<Vec<(u64, LossReport)>> {
    let f = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != metrics_header() {
                return Err(Error::Invalid(format!("{}: unexpected metrics header", path.display())));
            }
            continue;
        }
        let bad = || Error::Invalid(format!("{}: malformed metrics line {}", path.display(), i + 1));
        let mut it = line.split(',');
        let step: u64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let vals: Vec<f64> = it.map(|s| s.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        rows.push((step, LossReport::from_values(&vals).ok_or_else(bad)?));
    }
    Ok(rows)
}

/// Keeps the header and every row whose leading step is `<= step`;
/// returns the last value of column `col` kept (for timing offsets).
fn truncate_csv(path: &Path, header: &str, step: u64, col: usize) -> Result<f64> {
    let mut kept = vec![header.to_string()];
    let mut last = 0.0;
    if path.exists() {
        for line in BufReader::new(File::open(path)?).lines().skip(1) {
            let line = line?;
            let mut fields = line.split(',');
            let s: Option<u64> = fields.next().and_then(|s| s.parse().ok());
            match s {
                Some(s) if s <= step => {
                    if let Some(v) = line.split(',').nth(col).and_then(|v| v.parse().ok()) {
                        last = v;
                    }
                    kept.push(line);
                }
                Some(_) => break,
                None => return Err(Error::Invalid(format!("{}: malformed row", path.display()))),
            }
        }
    }
    let mut f = BufWriter::new(File::create(path)?);
    for l in kept {
        writeln!(f, "{l}")?;
    }
    f.flush()?;
    Ok(last)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub final_checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    pub timing_path: PathBuf,
    /// Every file written by this call, in write order (deduplicated).
    pub files: Vec<PathBuf>,
}

fn writable_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("output directory {} is not writable: {e}", dir.display()),
        ))
    })
}

/// Runs `total_steps` steps (continuing from `resume` when given), writing
/// metrics and timing rows at `metrics_every`, checkpoints at
/// `checkpoint_every`, and a final checkpoint. Wall-clock seconds go to a
/// separate timing file so the metrics file is a pure function of the config.
pub fn train_loop(config: &ExperimentConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let out = config
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("`out_dir` is required for training".into()))?;
    writable_dir(&out)?;
    let metrics_path = out.join(METRICS_FILE);
    let timing_path = out.join(TIMING_FILE);
    let mut trainer = match resume {
        Some(p) => Trainer::from_checkpoint(config.clone(), &Checkpoint::load(p)?)?,
        None => Trainer::new(config.clone())?,
    };
    let start_step = trainer.step;
    truncate_csv(&metrics_path, &metrics_header(), start_step, 0)?;
    let clock_offset = truncate_csv(&timing_path, "step,seconds", start_step, 1)?;
    let mut metrics = BufWriter::new(OpenOptions::new().append(true).open(&metrics_path)?);
    let mut timing = BufWriter::new(OpenOptions::new().append(true).open(&timing_path)?);
    let mut files = vec![metrics_path.clone(), timing_path.clone()];
    let clock = Instant::now();

    while trainer.step < config.total_steps {
        let report = trainer.step()?;
        let t = trainer.step;
        if t % config.metrics_every == 0 || t == config.total_steps {
            writeln!(metrics, "{}", metrics_line(t, &report))?;
            writeln!(timing, "{t},{}", clock_offset + clock.elapsed().as_secs_f64())?;
        }
        if t % config.checkpoint_every == 0 {
            metrics.flush()?;
            timing.flush()?;
            let p = out.join(CHECKPOINT_DIR).join(format!("step-{t:08}.augc"));
            trainer.checkpoint()?.save(&p)?;
            files.push(p);
        }
    }
    metrics.flush()?;
    timing.flush()?;
    let checkpoint = trainer.checkpoint()?;
    let final_checkpoint_path = out.join(FINAL_CHECKPOINT);
    checkpoint.save(&final_checkpoint_path)?;
    files.push(final_checkpoint_path.clone());
    Ok(TrainOutcome {
        checkpoint,
        final_checkpoint_path,
        metrics_path,
        timing_path,
        files,
    })
}

/// Rebuilds the model stored in a checkpoint.
pub fn load_model(ck: &Checkpoint) -> Result<(ExperimentConfig, JointSpec, ModelBundle)> {
    let config: ExperimentConfig = serde_json::from_str(&ck.config_json)?;
    let t = Trainer::from_checkpoint(
        ExperimentConfig {
            total_steps: config.total_steps.max(ck.step),
            ..config.clone()
        },
        ck,
    )?;
    Ok((config, t.spec, t.bundle))
}
