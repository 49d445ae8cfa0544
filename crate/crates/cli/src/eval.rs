//! Evaluation config and per-op runners for `augcycle eval`.

use std::path::PathBuf;

use augcycle::evaluation::{
    attribute_prediction_eval, chain_cycle, chain_style_coverage, collapse_probe, corruption_curve, diversity_score,
    fixed_code_errors, infer_via_opt, normalized_slope, sample_groups, EvalReport, InferOptions, Summary,
};
use augcycle::networks::ModelBundle;
use augcycle::synth::{read_dataset, sample_paired, Dataset, JointSpec, TaskKind};
use augcycle::{Error, Result, Rng, Tensor};
use serde::{Deserialize, Serialize};

use crate::svg::Point;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalOp {
    InferViaOpt,
    Corruption,
    Diversity,
    Collapse,
    Chain,
    Attributes,
}

impl EvalOp {
    pub const ALL: [EvalOp; 6] = [
        EvalOp::InferViaOpt,
        EvalOp::Corruption,
        EvalOp::Diversity,
        EvalOp::Collapse,
        EvalOp::Chain,
        EvalOp::Attributes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EvalOp::InferViaOpt => "infer-via-opt",
            EvalOp::Corruption => "corruption",
            EvalOp::Diversity => "diversity",
            EvalOp::Collapse => "collapse",
            EvalOp::Chain => "chain",
            EvalOp::Attributes => "attributes",
        }
    }

    /// Stream id of the op's RNG; stable regardless of which ops run.
    fn stream(self) -> u64 {
        Self::ALL.iter().position(|&o| o == self).unwrap() as u64 + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Ops to run; all ops valid for the task when absent.
    pub ops: Option<Vec<EvalOp>>,
    pub seed: u64,
    /// Paired test set size drawn from the task when `test_data` is absent.
    pub test_size: usize,
    /// Paired dataset file to evaluate on instead.
    pub test_data: Option<PathBuf>,
    pub infer: InferOptions,
    pub eps: Vec<f64>,
    pub diversity_inputs: usize,
    pub samples_per_input: usize,
    pub collapse_inputs: usize,
    pub collapse_draws: usize,
    pub chains: usize,
    pub chain_rounds: usize,
    pub k: usize,
    pub attribute_draws: usize,
    /// Conditioning inputs drawn in the diversity scatter plot.
    pub plot_inputs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ops: None,
            seed: 0,
            test_size: 200,
            test_data: None,
            infer: InferOptions::default(),
            eps: vec![0.0, 0.05, 0.1, 0.2],
            diversity_inputs: 100,
            samples_per_input: 20,
            collapse_inputs: 100,
            collapse_draws: 10,
            chains: 10,
            chain_rounds: 50,
            k: 3,
            attribute_draws: 16,
            plot_inputs: 8,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("`{key}` {why}")));
        if self.test_data.is_none() && self.test_size == 0 {
            return bad("test_size", "must be positive");
        }
        if self.samples_per_input < 2 {
            return bad("samples_per_input", "must be at least 2");
        }
        if self.collapse_draws < 2 {
            return bad("collapse_draws", "must be at least 2");
        }
        if self.chain_rounds == 0 {
            return bad("chain_rounds", "must be at least 1");
        }
        if self.eps.is_empty() || self.eps.iter().any(|e| !e.is_finite() || *e < 0.0) || self.eps.windows(2).any(|w| w[1] < w[0]) {
            return bad("eps", "must be a non-empty ascending list of non-negative values");
        }
        if self.k == 0 {
            return bad("k", "must be positive");
        }
        if let Some(ops) = &self.ops {
            if ops.is_empty() {
                return bad("ops", "must name at least one op");
            }
        }
        Ok(())
    }

    pub fn selected_ops(&self, task: TaskKind) -> Vec<EvalOp> {
        let mut ops = match &self.ops {
            Some(o) => o.clone(),
            None => EvalOp::ALL
                .into_iter()
                .filter(|&o| (o == EvalOp::Attributes) == (task == TaskKind::AttributeVector) || o == EvalOp::Diversity)
                .collect(),
        };
        ops.sort();
        ops.dedup();
        ops
    }
}

pub struct TestSet {
    pub a: Tensor,
    pub b: Tensor,
}

/// The paired test set: read from `test_data` (widths checked against the
/// model) or drawn from the task on stream 0 of the eval seed.
pub fn test_set(cfg: &EvalConfig, spec: &JointSpec, bundle: &ModelBundle) -> Result<TestSet> {
    match &cfg.test_data {
        Some(p) => match read_dataset(p, Some(&[bundle.dims.dim_a, bundle.dims.dim_b]))? {
            Dataset::Paired { a, b } => Ok(TestSet { a, b }),
            Dataset::Single(_) => Err(Error::Config("`test_data` must be a paired dataset".into())),
        },
        None => {
            let p = sample_paired(spec, cfg.test_size, &mut Rng::new(cfg.seed).split(0))?;
            Ok(TestSet { a: p.a, b: p.b })
        }
    }
}

pub struct Table {
    pub file: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }
}

pub struct Plot {
    pub file: String,
    pub title: String,
    pub points: Vec<Point>,
}

#[derive(Default)]
pub struct OpOutput {
    pub report: EvalReport,
    pub tables: Vec<Table>,
    pub plots: Vec<Plot>,
}

fn head(t: &Tensor, n: usize) -> Tensor {
    t.gather_rows(&(0..n.min(t.rows())).collect::<Vec<_>>())
}

fn project(spec: &JointSpec, t: &Tensor, group: impl Fn(usize) -> usize) -> Vec<Point> {
    t.row_iter()
        .enumerate()
        .map(|(i, r)| {
            let [x, y] = spec.project_style_plane(r);
            Point { x, y, group: group(i) }
        })
        .collect()
}

pub fn run_op(op: EvalOp, cfg: &EvalConfig, bundle: &ModelBundle, spec: &JointSpec, test: &TestSet) -> Result<OpOutput> {
    let mut rng = Rng::new(cfg.seed).split(op.stream());
    let mut out = OpOutput::default();
    let r = &mut out.report;
    match op {
        EvalOp::InferViaOpt => {
            if bundle.variant.is_stochastic() {
                let inf = infer_via_opt(&bundle.f_ab, &test.a, &test.b, &cfg.infer, &mut rng)?;
                r.metrics.insert("infer_via_opt.error".into(), Summary::of(&inf.errors));
                out.tables.push(Table {
                    file: "infer_trace.csv".into(),
                    header: vec!["evaluation", "mean_best_error"],
                    rows: inf.trace.iter().enumerate().map(|(i, e)| vec![i as f64, *e]).collect(),
                });
            } else {
                let e = fixed_code_errors(&bundle.f_ab, &test.a, &test.b, None)?;
                r.metrics.insert("infer_via_opt.error".into(), Summary::of(&e));
            }
        }
        EvalOp::Corruption => {
            let curve = corruption_curve(bundle, &test.b, &cfg.eps, &mut rng)?;
            r.scalars.insert("corruption.normalized_slope".into(), normalized_slope(&curve, &test.b));
            r.traces.insert("corruption.error".into(), curve.iter().map(|p| p.error.mean).collect());
            out.tables.push(Table {
                file: "corruption_curve.csv".into(),
                header: vec!["eps", "mean_error", "stderr", "n"],
                rows: curve
                    .iter()
                    .map(|p| vec![p.eps, p.error.mean, p.error.stderr, p.error.n as f64])
                    .collect(),
            });
        }
        EvalOp::Diversity => {
            let inputs = head(&test.a, cfg.diversity_inputs);
            let groups = sample_groups(bundle, &inputs, cfg.samples_per_input, &mut rng)?;
            r.scalars.insert("diversity.score".into(), diversity_score(&groups)?);
            let shown = cfg.plot_inputs.min(groups.len());
            let points = groups[..shown]
                .iter()
                .enumerate()
                .flat_map(|(g, t)| project(spec, t, move |_| g))
                .collect();
            out.plots.push(Plot {
                file: "diversity_samples.svg".into(),
                title: format!("B samples for {shown} inputs, style-plane projection"),
                points,
            });
        }
        EvalOp::Collapse => {
            let n = cfg.collapse_inputs;
            let c = collapse_probe(bundle, &head(&test.a, n), &head(&test.b, n), cfg.collapse_draws, &mut rng)?;
            r.metrics.insert("collapse.real_variance".into(), Summary::of(&c.real));
            r.metrics.insert("collapse.generated_variance".into(), Summary::of(&c.generated));
            if let Some(ratio) = c.ratio {
                r.scalars.insert("collapse.ratio".into(), ratio);
            }
            out.tables.push(Table {
                file: "collapse.csv".into(),
                header: vec!["input", "real_variance", "generated_variance"],
                rows: c
                    .real
                    .iter()
                    .zip(&c.generated)
                    .enumerate()
                    .map(|(i, (x, y))| vec![i as f64, *x, *y])
                    .collect(),
            });
        }
        EvalOp::Chain => {
            let start = head(&test.b, cfg.chains);
            let traj = chain_cycle(bundle, &start, cfg.chain_rounds, &mut rng)?;
            let cov: Vec<f64> = chain_style_coverage(spec, &traj).into_iter().map(|c| c as f64).collect();
            r.metrics.insert("chain.styles_visited".into(), Summary::of(&cov));
            r.traces.insert("chain.styles_visited".into(), cov);
            let chains = start.rows();
            let mut rows = Vec::with_capacity(chains * traj.len());
            let mut points = Vec::with_capacity(chains * traj.len());
            for (k, t) in traj.iter().enumerate() {
                for c in 0..chains {
                    let [x, y] = spec.project_style_plane(t.row(c));
                    rows.push(vec![c as f64, (k + 1) as f64, spec.classify_style(t.row(c)) as f64, x, y]);
                    points.push(Point { x, y, group: c });
                }
            }
            out.tables.push(Table {
                file: "chain.csv".into(),
                header: vec!["chain", "round", "style", "x", "y"],
                rows,
            });
            out.plots.push(Plot {
                file: "chain.svg".into(),
                title: format!("{chains} chains over {} rounds, style-plane projection", traj.len()),
                points,
            });
        }
        EvalOp::Attributes => {
            let s = attribute_prediction_eval(bundle, spec, &test.a, &test.b, cfg.k, cfg.attribute_draws, &mut rng)?;
            r.metrics.insert(format!("attributes.precision_at_{}", cfg.k), s.precision);
            r.metrics.insert(format!("attributes.ndcg_at_{}", cfg.k), s.ndcg);
        }
    }
    Ok(out)
}
