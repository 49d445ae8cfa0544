//! Central finite-difference checks of the tape's gradients.

use serde::Serialize;

use crate::error::Result;
use crate::networks::{ArchConfig, ModelBundle, ModelDims, Variant, DISCRIMINATOR_ROLES, GENERATOR_ROLES};
use crate::objectives::{discriminator_objective, generator_objective, BoundBundle, GenLossForm, LossWeights, StepBatch};
use crate::params::ParamStore;
use crate::rng::{sample_gaussian, Rng};
use crate::tape::{Primitive, Tape, Var};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error.
const FLOOR: f64 = 1e-4;
/// Coordinates sampled per network objective.
const OBJECTIVE_COORDS: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub coords: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub entries: Vec<CheckEntry>,
    pub max_rel_error: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Multiplies every analytic gradient by `1 + bias`; a negative control.
#[derive(Clone, Copy, Debug, Default)]
pub struct Corruption {
    pub bias: f64,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Inputs, parameter and a sampler that keeps values away from kinks.
fn primitive_case(prim: Primitive, rng: &mut Rng) -> (Vec<Tensor>, f64) {
    let g = |rng: &mut Rng, shape: &[usize]| sample_gaussian(rng, shape);
    let away = |mut t: Tensor, from: f64| {
        for v in t.data_mut() {
            if (v.abs() - from).abs() < 0.05 {
                *v += 0.1 * v.signum();
            }
        }
        t
    };
    match prim {
        Primitive::MatMul => (vec![g(rng, &[3, 4]), g(rng, &[4, 2])], 0.0),
        Primitive::Add => (vec![g(rng, &[3, 4]), g(rng, &[4])], 0.0),
        Primitive::Sub => (vec![g(rng, &[3, 4]), g(rng, &[1, 4])], 0.0),
        Primitive::Mul => (vec![g(rng, &[3, 4]), g(rng, &[3, 4])], 0.0),
        Primitive::Concat => (vec![g(rng, &[3, 2]), g(rng, &[3, 3])], 0.0),
        Primitive::Scale => (vec![g(rng, &[3, 4])], -1.7),
        Primitive::Slice => (vec![g(rng, &[3, 5])], 3.0),
        Primitive::Abs | Primitive::Relu | Primitive::LeakyRelu => (vec![away(g(rng, &[3, 4]), 0.0)], 0.0),
        Primitive::Clamp => (vec![away(g(rng, &[3, 4]), 0.5)], 0.5),
        Primitive::Log => {
            let mut t = g(rng, &[3, 4]);
            t.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.5);
            (vec![t], 0.0)
        }
        Primitive::Square
        | Primitive::Mean
        | Primitive::Tanh
        | Primitive::Sigmoid
        | Primitive::FeatureNormalize => (vec![g(rng, &[3, 5])], 0.0),
    }
}

/// Scalarizes `out` as `sum(out * w)` with fixed random weights so every
/// output coordinate contributes a distinct gradient.
fn project(tape: &mut Tape, out: Var, w: &Tensor) -> Result<Var> {
    let wv = tape.constant(w);
    let p = tape.mul(out, wv)?;
    let m = tape.mean(p);
    Ok(tape.scale(m, w.len() as f64))
}

pub fn check_primitive(prim: Primitive, corrupt: Corruption) -> Result<CheckEntry> {
    let mut rng = Rng::new(0x6772_6164).split(prim as u64);
    let (inputs, param) = primitive_case(prim, &mut rng);
    let eval = |inputs: &[Tensor], w: Option<&Tensor>| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
        let out = tape.apply(prim, &vars, param)?;
        let loss = match w {
            Some(w) => project(&mut tape, out, w)?,
            None => out,
        };
        Ok((tape, vars, loss))
    };
    let (tape, _, out) = eval(&inputs, None)?;
    let w = sample_gaussian(&mut rng, tape.shape(out));
    let (tape, vars, loss) = eval(&inputs, Some(&w))?;
    let grads = tape.backward(loss)?;
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.tensor(&tape, *v);
        for i in 0..inputs[k].len() {
            let mut shifted = inputs.to_vec();
            shifted[k].data_mut()[i] += STEP;
            let up = eval(&shifted, Some(&w))?;
            shifted[k].data_mut()[i] -= 2.0 * STEP;
            let down = eval(&shifted, Some(&w))?;
            let numeric = (up.0.scalar(up.2) - down.0.scalar(down.2)) / (2.0 * STEP);
            let a = analytic.data()[i] * (1.0 + corrupt.bias);
            worst = worst.max(rel_error(a, numeric));
            coords += 1;
        }
    }
    Ok(CheckEntry {
        name: prim.name().to_string(),
        coords,
        max_rel_error: worst,
    })
}

fn check_bundle_group<F>(
    name: &str,
    bundle: &ModelBundle,
    roles: &[&str],
    objective: F,
    corrupt: Corruption,
    rng: &mut Rng,
) -> Result<CheckEntry>
where
    F: Fn(&mut Tape, &BoundBundle<'_>) -> Result<Var>,
{
    let track_gen = roles == GENERATOR_ROLES;
    let value = |m: &ModelBundle| -> Result<f64> {
        let mut tape = Tape::new();
        let nets = BoundBundle::new(&mut tape, m, track_gen, !track_gen);
        let l = objective(&mut tape, &nets)?;
        Ok(tape.scalar(l))
    };
    let analytic = {
        let mut tape = Tape::new();
        let nets = BoundBundle::new(&mut tape, bundle, track_gen, !track_gen);
        let l = objective(&mut tape, &nets)?;
        let g = tape.backward(l)?;
        nets.gradients(roles, &tape, &g)
    };
    let params: ParamStore = bundle.collect_params(roles);
    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(k, t)| (0..t.len()).map(move |i| (k.clone(), i)))
        .collect();
    let picks: Vec<usize> = if coords.len() <= OBJECTIVE_COORDS {
        (0..coords.len()).collect()
    } else {
        (0..OBJECTIVE_COORDS).map(|_| rng.below(coords.len())).collect()
    };
    let mut worst: f64 = 0.0;
    for &p in &picks {
        let (key, i) = &coords[p];
        let mut shifted = bundle.clone();
        let mut store = ParamStore::new();
        let mut t = params.get(key).expect("collected").clone();
        t.data_mut()[*i] += STEP;
        store.insert(key.clone(), t.clone());
        shifted.scatter_params(&store)?;
        let up = value(&shifted)?;
        t.data_mut()[*i] -= 2.0 * STEP;
        store.insert(key.clone(), t);
        shifted.scatter_params(&store)?;
        let down = value(&shifted)?;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[key].data()[*i] * (1.0 + corrupt.bias);
        worst = worst.max(rel_error(a, numeric));
    }
    Ok(CheckEntry {
        name: name.to_string(),
        coords: picks.len(),
        max_rel_error: worst,
    })
}

/// A small augmented bundle with weights large enough that every path,
/// including the latent codes, carries signal.
fn objective_fixture() -> Result<(ModelBundle, StepBatch)> {
    let dims = ModelDims {
        dim_a: 3,
        dim_b: 4,
        dim_za: 2,
        dim_zb: 2,
    };
    let arch = ArchConfig {
        gen_hidden: vec![6, 6],
        enc_hidden: vec![6],
        disc_hidden: vec![6],
        latent_disc_hidden: vec![6],
        ..ArchConfig::default()
    };
    let mut rng = Rng::new(0x006f_626a);
    let mut m = ModelBundle::build(Variant::AugCyclegan, dims, &arch, &mut rng)?;
    let mut all = m.all_params();
    for (_, t) in all.iter_mut() {
        let g = sample_gaussian(&mut rng, t.shape());
        t.data_mut().iter_mut().zip(g.data()).for_each(|(x, n)| *x += 0.4 * n);
    }
    m.scatter_params(&all)?;
    let n = 5;
    let mut g = |w: usize| sample_gaussian(&mut rng, &[n, w]);
    let batch = StepBatch {
        a: g(3),
        b: g(4),
        z_a: Some(g(2)),
        z_b: Some(g(2)),
        z_a_cycle: None,
        z_b_cycle: None,
        prior_za: Some(g(2)),
        prior_zb: Some(g(2)),
        paired: Some((g(3), g(4))),
    };
    Ok((m, batch))
}

/// Every primitive, then the full augmented objective (both update groups,
/// supervised terms included).
pub fn run_suite(corrupt: Corruption) -> Result<GradcheckReport> {
    let mut entries = Vec::new();
    for prim in Primitive::ALL {
        entries.push(check_primitive(prim, corrupt)?);
    }
    let (m, batch) = objective_fixture()?;
    let w = LossWeights::default();
    let mut rng = Rng::new(5);
    entries.push(check_bundle_group(
        "aug-cyclegan generator objective",
        &m,
        &GENERATOR_ROLES,
        |tape, nets| generator_objective(tape, nets, &batch, &w, GenLossForm::NonSaturating).map(|r| r.1),
        corrupt,
        &mut rng,
    )?);
    entries.push(check_bundle_group(
        "aug-cyclegan discriminator objective",
        &m,
        &DISCRIMINATOR_ROLES,
        |tape, nets| discriminator_objective(tape, nets, &batch).map(|r| r.1),
        corrupt,
        &mut rng,
    )?);
    let max_rel_error = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport { entries, max_rel_error })
}
