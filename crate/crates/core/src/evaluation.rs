//! Measurement battery over trained bundles. Every function takes the bundle
//! by shared reference; parameters are never modified.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{encode, ModelBundle, Network, Variant};
use crate::rng::{sample_gaussian, Rng};
use crate::synth::{JointSpec, TaskKind};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Mean with standard error over `n` items.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Summary {
        let n = xs.len();
        if n == 0 {
            return Summary {
                mean: f64::NAN,
                stderr: f64::NAN,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Summary { mean, stderr, n }
    }
}

fn l1_rows(x: &Tensor, y: &Tensor) -> Vec<f64> {
    x.row_iter()
        .zip(y.row_iter())
        .map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v).abs()).sum())
        .collect()
}

fn l2(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
}

fn prior(rng: &mut Rng, n: usize, dim: usize) -> Option<Tensor> {
    (dim > 0).then(|| sample_gaussian(rng, &[n, dim]))
}

fn check_rows(what: &str, x: &Tensor, y: &Tensor) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::DimMismatch {
            what: what.into(),
            expected: x.rows(),
            found: y.rows(),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferOptions {
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions {
            steps: 200,
            lr: 0.01,
            restarts: 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Inference {
    /// Best-seen code per row.
    pub z: Tensor,
    /// Per-row L1 error at the best-seen code.
    pub errors: Vec<f64>,
    /// Mean best-seen error after every evaluation, across all restarts.
    pub trace: Vec<f64>,
}

impl Inference {
    pub fn mean_error(&self) -> f64 {
        Summary::of(&self.errors).mean
    }
}

/// `z* = argmin_z ||mapping(a, z) - b||_1` by RMSProp on `z` alone, from
/// prior draws, keeping the best code seen per row over all restarts.
pub fn infer_via_opt(mapping: &Network, a: &Tensor, b: &Tensor, opts: &InferOptions, rng: &mut Rng) -> Result<Inference> {
    let dz = mapping.spec.latent_dim;
    if dz == 0 {
        return Err(Error::Invalid("infer_via_opt needs a stochastic mapping; this one has no latent input".into()));
    }
    check_rows("infer_via_opt rows of a vs b", a, b)?;
    if opts.restarts == 0 {
        return Err(Error::Config("`restarts` must be at least 1".into()));
    }
    let n = a.rows();
    let mut best_z = Tensor::zeros(&[n, dz]);
    let mut best = vec![f64::INFINITY; n];
    let mut trace = Vec::with_capacity(opts.restarts * (opts.steps + 1));
    const RHO: f64 = 0.9;
    const EPS: f64 = 1e-8;
    for _ in 0..opts.restarts {
        let mut z = sample_gaussian(rng, &[n, dz]);
        let mut ms = vec![0.0; z.len()];
        for it in 0..=opts.steps {
            let mut tape = Tape::new();
            let net = mapping.bind_frozen(&mut tape);
            let av = tape.constant(a);
            let bv = tape.constant(b);
            let zv = tape.param(&z);
            let out = net.forward(&mut tape, &[av], Some(zv))?;
            let d = tape.sub(out, bv)?;
            let ad = tape.abs(d);
            let errs: Vec<f64> = tape.value(ad).chunks(b.cols()).map(|r| r.iter().sum()).collect();
            for (i, &e) in errs.iter().enumerate() {
                if e < best[i] {
                    best[i] = e;
                    best_z.data_mut()[i * dz..(i + 1) * dz].copy_from_slice(z.row(i));
                }
            }
            trace.push(best.iter().sum::<f64>() / n as f64);
            if it == opts.steps {
                break;
            }
            // Sum of per-row losses, so each row's gradient is its own.
            let m = tape.mean(ad);
            let loss = tape.scale(m, (n * b.cols()) as f64);
            let grads = tape.backward(loss)?;
            let g = grads.tensor(&tape, zv);
            for ((w, s), gi) in z.data_mut().iter_mut().zip(ms.iter_mut()).zip(g.data()) {
                *s = RHO * *s + (1.0 - RHO) * gi * gi;
                *w -= opts.lr * gi / (s.sqrt() + EPS);
            }
        }
    }
    Ok(Inference {
        z: best_z,
        errors: best,
        trace,
    })
}

/// Per-row L1 error of a mapping evaluated at a fixed code (or none).
pub fn fixed_code_errors(mapping: &Network, a: &Tensor, b: &Tensor, z: Option<&Tensor>) -> Result<Vec<f64>> {
    check_rows("fixed_code_errors rows of a vs b", a, b)?;
    let out = mapping.predict(&[a], z)?;
    Ok(l1_rows(&out, b))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub eps: f64,
    pub error: Summary,
}

/// Reconstruction error of `b -> a~ -> b^` when `a~` is corrupted by
/// `N(0, eps^2)` noise. The augmented variant completes the cycle with
/// `E_B(a~, b)` computed on the clean intermediate; the stochastic variant
/// resamples `z_b`. One noise draw is shared across all `eps`.
pub fn corruption_curve(bundle: &ModelBundle, test_b: &Tensor, eps: &[f64], rng: &mut Rng) -> Result<Vec<CurvePoint>> {
    if eps.iter().any(|e| !e.is_finite() || *e < 0.0) || eps.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("`eps` must be non-negative and sorted ascending".into()));
    }
    let n = test_b.rows();
    let d = bundle.dims;
    let za = prior(rng, n, d.dim_za);
    let a_gen = bundle.map_ba(test_b, za.as_ref())?;
    let zb = match bundle.variant {
        Variant::AugCyclegan => Some(encode(bundle.e_b.as_ref().expect("aug bundle"), &a_gen, test_b)?),
        _ => prior(rng, n, d.dim_zb),
    };
    let noise = sample_gaussian(rng, &[n, d.dim_a]);
    eps.iter()
        .map(|&e| {
            let mut noisy = a_gen.clone();
            noisy.data_mut().iter_mut().zip(noise.data()).for_each(|(x, g)| *x += e * g);
            let b_hat = bundle.map_ab(&noisy, zb.as_ref())?;
            Ok(CurvePoint {
                eps: e,
                error: Summary::of(&l1_rows(test_b, &b_hat)),
            })
        })
        .collect()
}

/// Least-squares slope of mean error against `eps`, divided by the mean L1
/// deviation of the test set from its mean.
pub fn normalized_slope(curve: &[CurvePoint], test_b: &Tensor) -> f64 {
    let k = curve.len() as f64;
    let mx = curve.iter().map(|p| p.eps).sum::<f64>() / k;
    let my = curve.iter().map(|p| p.error.mean).sum::<f64>() / k;
    let sxy: f64 = curve.iter().map(|p| (p.eps - mx) * (p.error.mean - my)).sum();
    let sxx: f64 = curve.iter().map(|p| (p.eps - mx).powi(2)).sum();
    let c = test_b.cols();
    let mut centre = vec![0.0; c];
    for r in test_b.row_iter() {
        centre.iter_mut().zip(r).for_each(|(m, v)| *m += v / test_b.rows() as f64);
    }
    let mad = test_b
        .row_iter()
        .map(|r| r.iter().zip(&centre).map(|(v, m)| (v - m).abs()).sum::<f64>())
        .sum::<f64>()
        / test_b.rows() as f64;
    sxy / sxx / mad
}

/// Mean L2 distance over sample pairs. Each group holds the samples of one
/// conditioning input; rows `(2j, 2j+1)` form its pairs.
pub fn diversity_score(groups: &[Tensor]) -> Result<f64> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for g in groups {
        if g.rows() < 2 {
            return Err(Error::Invalid("diversity_score needs at least 2 samples per input".into()));
        }
        for j in 0..g.rows() / 2 {
            total += l2(g.row(2 * j), g.row(2 * j + 1));
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::Invalid("diversity_score needs at least one input".into()));
    }
    Ok(total / pairs as f64)
}

/// `per_input` samples of `F_AB(a, z)` for each row of `a_set`.
pub fn sample_groups(bundle: &ModelBundle, a_set: &Tensor, per_input: usize, rng: &mut Rng) -> Result<Vec<Tensor>> {
    let rep = a_set.repeat_rows(per_input);
    let z = prior(rng, rep.rows(), bundle.dims.dim_zb);
    let out = bundle.map_ab(&rep, z.as_ref())?;
    Ok((0..a_set.rows())
        .map(|i| out.gather_rows(&(i * per_input..(i + 1) * per_input).collect::<Vec<_>>()))
        .collect())
}

/// Sum over dimensions of the sample variance of the rows. Deviations are
/// taken from the first row, so identical rows give exactly 0.
fn total_variance(g: &Tensor) -> f64 {
    let n = g.rows() as f64;
    let x0 = g.row(0);
    (0..g.cols())
        .map(|j| {
            let (mut s, mut s2) = (0.0, 0.0);
            for r in g.row_iter() {
                let d = r[j] - x0[j];
                s += d;
                s2 += d * d;
            }
            ((s2 - s * s / n) / (n - 1.0)).max(0.0)
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    /// Per-input output variance on real inputs.
    pub real: Vec<f64>,
    /// Per-input output variance on inputs generated from real `b`.
    pub generated: Vec<f64>,
    /// Mean generated variance over mean real variance; `None` when the
    /// real variance is 0.
    pub ratio: Option<f64>,
}

/// Output variance of `F_AB` across `n_z` codes, on real `a` versus on
/// `a~ = G_BA(b, z_a)`.
pub fn collapse_probe(bundle: &ModelBundle, a_set: &Tensor, b_set: &Tensor, n_z: usize, rng: &mut Rng) -> Result<CollapseReport> {
    if n_z < 2 {
        return Err(Error::Invalid("collapse_probe needs n_z >= 2".into()));
    }
    let za = prior(rng, b_set.rows(), bundle.dims.dim_za);
    let a_gen = bundle.map_ba(b_set, za.as_ref())?;
    let real: Vec<f64> = sample_groups(bundle, a_set, n_z, rng)?.iter().map(total_variance).collect();
    let generated: Vec<f64> = sample_groups(bundle, &a_gen, n_z, rng)?.iter().map(total_variance).collect();
    let mr = Summary::of(&real).mean;
    let ratio = (mr > 0.0).then(|| Summary::of(&generated).mean / mr);
    Ok(CollapseReport { real, generated, ratio })
}

/// Alternates `G_BA` and `F_AB` with fresh prior codes every hop; element `k`
/// holds `b_{k+1}` for every chain (one chain per row of `start_b`).
pub fn chain_cycle(bundle: &ModelBundle, start_b: &Tensor, n_rounds: usize, rng: &mut Rng) -> Result<Vec<Tensor>> {
    if n_rounds == 0 {
        return Err(Error::Invalid("chain_cycle needs n_rounds >= 1".into()));
    }
    let n = start_b.rows();
    let mut b = start_b.clone();
    let mut out = Vec::with_capacity(n_rounds);
    for _ in 0..n_rounds {
        let za = prior(rng, n, bundle.dims.dim_za);
        let a = bundle.map_ba(&b, za.as_ref())?;
        let zb = prior(rng, n, bundle.dims.dim_zb);
        b = bundle.map_ab(&a, zb.as_ref())?;
        out.push(b.clone());
    }
    Ok(out)
}

/// Trajectory of chain `c` as one `[n_rounds, dim_b]` tensor.
pub fn chain_path(traj: &[Tensor], c: usize) -> Result<Tensor> {
    Tensor::from_rows(&traj.iter().map(|t| t.row(c).to_vec()).collect::<Vec<_>>())
}

/// Distinct oracle styles visited by each chain.
pub fn chain_style_coverage(spec: &JointSpec, traj: &[Tensor]) -> Vec<usize> {
    let chains = traj.first().map_or(0, Tensor::rows);
    (0..chains)
        .map(|c| {
            let mut seen = vec![false; spec.styles()];
            for t in traj {
                seen[spec.classify_style(t.row(c))] = true;
            }
            seen.iter().filter(|&&s| s).count()
        })
        .collect()
}

fn ranking(scores: &[f64], truth: &[f64], k: usize) -> Result<Vec<usize>> {
    if scores.len() != truth.len() {
        return Err(Error::DimMismatch {
            what: "ranking scores vs truth".into(),
            expected: truth.len(),
            found: scores.len(),
        });
    }
    if k == 0 || k > scores.len() {
        return Err(Error::Invalid(format!("k must lie in 1..={}, got {k}", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps ascending index among equal scores.
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    Ok(order)
}

/// Fraction of the top `k` that is relevant (`truth > 0`).
pub fn precision_at_k(scores: &[f64], truth: &[f64], k: usize) -> Result<f64> {
    let order = ranking(scores, truth, k)?;
    Ok(order[..k].iter().filter(|&&i| truth[i] > 0.0).count() as f64 / k as f64)
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains.enumerate().map(|(r, g)| g / ((r + 2) as f64).log2()).sum()
}

/// `DCG@k / IDCG@k` with gain = relevance and discount `1/log2(rank+1)`;
/// 0 when nothing is relevant.
pub fn ndcg_at_k(scores: &[f64], truth: &[f64], k: usize) -> Result<f64> {
    let order = ranking(scores, truth, k)?;
    let mut ideal = truth.to_vec();
    ideal.sort_by(|x, y| y.total_cmp(x));
    let idcg = dcg(ideal.into_iter().take(k));
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg(order[..k].iter().map(|&i| truth[i])) / idcg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeScores {
    pub precision: Summary,
    pub ndcg: Summary,
}

/// Ranks attributes per item by scores and averages P@k and nDCG@k.
pub fn score_rankings(scores: &Tensor, truth: &Tensor, k: usize) -> Result<AttributeScores> {
    check_rows("attribute scores vs truth", scores, truth)?;
    let mut p = Vec::with_capacity(scores.rows());
    let mut g = Vec::with_capacity(scores.rows());
    for (s, t) in scores.row_iter().zip(truth.row_iter()) {
        p.push(precision_at_k(s, t, k)?);
        g.push(ndcg_at_k(s, t, k)?);
    }
    Ok(AttributeScores {
        precision: Summary::of(&p),
        ndcg: Summary::of(&g),
    })
}

/// Predicts attributes from `b` with `G_BA`, averaging over `n_z` prior
/// draws, and scores the rankings against the true attributes.
pub fn attribute_prediction_eval(
    bundle: &ModelBundle,
    spec: &JointSpec,
    a_test: &Tensor,
    b_test: &Tensor,
    k: usize,
    n_z: usize,
    rng: &mut Rng,
) -> Result<AttributeScores> {
    if spec.task != TaskKind::AttributeVector {
        return Err(Error::Invalid("attribute prediction needs the attribute-vector task".into()));
    }
    check_rows("attribute test set rows", a_test, b_test)?;
    let n_z = n_z.max(1);
    let rep = b_test.repeat_rows(n_z);
    let z = prior(rng, rep.rows(), bundle.dims.dim_za);
    let pred = bundle.map_ba(&rep, z.as_ref())?;
    let c = pred.cols();
    let mut scores = Tensor::zeros(&[b_test.rows(), c]);
    for (i, row) in scores.data_mut().chunks_mut(c).enumerate() {
        for j in 0..n_z {
            row.iter_mut().zip(pred.row(i * n_z + j)).for_each(|(s, p)| *s += p / n_z as f64);
        }
    }
    score_rankings(&scores, a_test, k)
}

/// Structured evaluation output.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, Summary>,
    pub scalars: BTreeMap<String, f64>,
    pub traces: BTreeMap<String, Vec<f64>>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn merge(&mut self, other: EvalReport) {
        self.metrics.extend(other.metrics);
        self.scalars.extend(other.scalars);
        self.traces.extend(other.traces);
    }

    /// Fails on any non-finite summary or scalar.
    pub fn validate_finite(&self) -> Result<()> {
        for (k, s) in &self.metrics {
            if !s.mean.is_finite() || !s.stderr.is_finite() {
                return Err(Error::NonFinite(format!("metric `{k}`")));
            }
        }
        for (k, v) in &self.scalars {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("scalar `{k}`")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{ArchConfig, ModelDims};
    use crate::synth::{sample_paired, TaskConfig};

    fn bundle(variant: Variant, seed: u64) -> ModelBundle {
        let dims = ModelDims {
            dim_a: 4,
            dim_b: 8,
            dim_za: 2,
            dim_zb: 2,
        };
        let arch = ArchConfig {
            gen_hidden: vec![16, 16],
            ..ArchConfig::default()
        };
        ModelBundle::build(variant, dims, &arch, &mut Rng::new(seed)).unwrap()
    }

    /// Breaks the init z-invariance so codes matter.
    fn perturb(m: &mut ModelBundle, seed: u64) {
        let mut rng = Rng::new(seed).split(9);
        for role in ["f_ab", "g_ba"] {
            let net = m.network_mut(role).unwrap();
            let names: Vec<String> = net.params.iter().map(|(k, _)| k.clone()).collect();
            for k in names {
                let mut t = net.params.get(&k).unwrap().clone();
                let g = sample_gaussian(&mut rng, t.shape());
                t.data_mut().iter_mut().zip(g.data()).for_each(|(x, n)| *x += 0.15 * n);
                net.params.assign(&k, t).unwrap();
            }
        }
    }

    #[test]
    fn summary_stats() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(s.n, 4);
    }

    #[test]
    fn inference_recovers_a_realizable_code() {
        let mut m = bundle(Variant::AugCyclegan, 1);
        perturb(&mut m, 1);
        let mut rng = Rng::new(3);
        let a = sample_gaussian(&mut rng, &[16, 4]);
        let z0 = sample_gaussian(&mut rng, &[16, 2]);
        let b = m.map_ab(&a, Some(&z0)).unwrap();
        let opts = InferOptions {
            steps: 400,
            ..InferOptions::default()
        };
        let inf = infer_via_opt(&m.f_ab, &a, &b, &opts, &mut rng).unwrap();
        assert!(inf.mean_error() < 1e-2, "{} {:?}", inf.mean_error(), inf.errors);
        assert!(inf.trace.windows(2).all(|w| w[1] <= w[0]));
        let again = fixed_code_errors(&m.f_ab, &a, &b, Some(&inf.z)).unwrap();
        assert_eq!(again, inf.errors);
    }

    #[test]
    fn inference_rejects_deterministic_mappings() {
        let m = bundle(Variant::Cyclegan, 1);
        let a = Tensor::zeros(&[2, 4]);
        let b = Tensor::zeros(&[2, 8]);
        assert!(infer_via_opt(&m.f_ab, &a, &b, &InferOptions::default(), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn more_steps_never_hurt_best_seen() {
        let mut m = bundle(Variant::StochCyclegan, 2);
        perturb(&mut m, 2);
        let mut rng = Rng::new(5);
        let a = sample_gaussian(&mut rng, &[8, 4]);
        let b = sample_gaussian(&mut rng, &[8, 8]);
        let run = |steps| {
            let o = InferOptions {
                steps,
                restarts: 1,
                ..InferOptions::default()
            };
            infer_via_opt(&m.f_ab, &a, &b, &o, &mut Rng::new(7)).unwrap().mean_error()
        };
        let errs: Vec<f64> = [0, 5, 20, 60].into_iter().map(run).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{errs:?}");
    }

    #[test]
    fn zero_noise_is_the_plain_cycle() {
        let mut m = bundle(Variant::AugCyclegan, 3);
        perturb(&mut m, 3);
        let mut rng = Rng::new(1);
        let b = sample_gaussian(&mut rng, &[10, 8]);
        let curve = corruption_curve(&m, &b, &[0.0, 0.1, 0.2], &mut Rng::new(4)).unwrap();
        assert_eq!(curve.len(), 3);
        // Replay the same draws without noise.
        let mut r = Rng::new(4);
        let za = sample_gaussian(&mut r, &[10, 2]);
        let a = m.map_ba(&b, Some(&za)).unwrap();
        let zb = encode(m.e_b.as_ref().unwrap(), &a, &b).unwrap();
        let b_hat = m.map_ab(&a, Some(&zb)).unwrap();
        assert_eq!(curve[0].error.mean, Summary::of(&l1_rows(&b, &b_hat)).mean);
        assert!(corruption_curve(&m, &b, &[0.2, 0.1], &mut rng).is_err());
    }

    #[test]
    fn slope_of_a_line() {
        let pts: Vec<CurvePoint> = [0.0, 0.1, 0.2]
            .iter()
            .map(|&e| CurvePoint {
                eps: e,
                error: Summary {
                    mean: 1.0 + 3.0 * e,
                    stderr: 0.0,
                    n: 1,
                },
            })
            .collect();
        // rows differ by 2 in one coordinate: mean deviation 1
        let b = Tensor::new(vec![2, 2], vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        assert!((normalized_slope(&pts, &b) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn diversity_basics() {
        let same = Tensor::new(vec![4, 2], vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(diversity_score(std::slice::from_ref(&same)).unwrap(), 0.0);
        let two = Tensor::new(vec![2, 2], vec![0.0, 0.0, 3.0, 4.0]).unwrap();
        assert_eq!(diversity_score(&[two]).unwrap(), 5.0);
        let one = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        assert!(diversity_score(&[one]).is_err());
    }

    #[test]
    fn deterministic_mapping_has_zero_variance() {
        let m = bundle(Variant::Cyclegan, 4);
        let mut rng = Rng::new(2);
        let a = sample_gaussian(&mut rng, &[5, 4]);
        let b = sample_gaussian(&mut rng, &[5, 8]);
        let r = collapse_probe(&m, &a, &b, 6, &mut rng).unwrap();
        assert!(r.real.iter().chain(&r.generated).all(|&v| v == 0.0));
        assert_eq!(r.ratio, None);
    }

    #[test]
    fn chains_have_the_requested_length() {
        let mut m = bundle(Variant::StochCyclegan, 5);
        perturb(&mut m, 5);
        let spec = JointSpec::from_config(&TaskConfig::style_mixture_default()).unwrap();
        let start = sample_paired(&spec, 3, &mut Rng::new(1)).unwrap().b;
        let traj = chain_cycle(&m, &start, 1, &mut Rng::new(2)).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj[0].shape(), &[3, 8]);
        let traj = chain_cycle(&m, &start, 7, &mut Rng::new(2)).unwrap();
        let cov = chain_style_coverage(&spec, &traj);
        assert!(cov.iter().all(|&c| (1..=3).contains(&c)));
        assert_eq!(chain_path(&traj, 1).unwrap().shape(), &[7, 8]);
        assert!(chain_cycle(&m, &start, 0, &mut Rng::new(2)).is_err());
    }

    #[test]
    fn ranking_examples() {
        let truth = [1.0, 0.0, 1.0, 0.0];
        let top = [0.9, 0.1, 0.8, 0.2];
        assert_eq!(precision_at_k(&top, &truth, 2).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&top, &truth, 2).unwrap(), 1.0);
        let index_order = [0.4, 0.3, 0.2, 0.1];
        assert_eq!(precision_at_k(&index_order, &truth, 2).unwrap(), 0.5);
        let want = 1.0 / (1.0 + 1.0 / 3f64.log2());
        assert!((ndcg_at_k(&index_order, &truth, 2).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.6131).abs() < 1e-4);
        // ties: all equal scores rank by index
        assert_eq!(precision_at_k(&[0.0; 4], &truth, 1).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&top, &[0.0; 4], 2).unwrap(), 0.0);
        assert!(precision_at_k(&top, &truth, 0).is_err());
        assert!(precision_at_k(&top, &truth, 5).is_err());
    }

    #[test]
    fn oracle_and_random_attribute_scores() {
        let spec = JointSpec::from_config(&TaskConfig::attribute_default()).unwrap();
        let mut rng = Rng::new(11);
        let pairs = sample_paired(&spec, 1000, &mut rng).unwrap();
        let oracle = score_rankings(&pairs.a, &pairs.a, 1).unwrap();
        let has = pairs.a.row_iter().filter(|r| r.iter().any(|&v| v > 0.0)).count() as f64;
        assert!((oracle.precision.mean - has / 1000.0).abs() < 1e-12);

        // Random scores: expected P@k is the mean positive rate.
        let k = 3;
        let random = sample_gaussian(&mut rng, &[1000, 8]);
        let r = score_rankings(&random, &pairs.a, k).unwrap();
        let base = spec.rates.iter().sum::<f64>() / spec.rates.len() as f64;
        assert!((r.precision.mean - base).abs() < 3.0 * r.precision.stderr.max(1e-3), "{r:?}");
    }
}
