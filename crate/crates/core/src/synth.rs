//! Synthetic many-to-many domains with analytically known joints.
//!
//! `b = W a + s_m + e_b` where `W` has orthonormal (scaled) columns, the style
//! offsets `s_m` lie in the orthogonal complement of `range(W)`, and the
//! style index `m` is uniform and independent of `a`. Every `a` therefore
//! has exactly `M` conditional modes in B, while `b` determines both its
//! style and its content.
//!
//! Noise vectors are Gaussian truncated to an L2 norm below `4σ`, so every
//! sample lies within `4σ` of its mode center and inside `(-1, 1)`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::Cursor;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const TRUNCATION: f64 = 4.0;
const RANGE_BOUND: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskConfig {
    StyleMixture {
        dim_a: usize,
        dim_b: usize,
        clusters: usize,
        styles: usize,
        sigma_a: f64,
        sigma_b: f64,
        seed: u64,
    },
    AttributeVector {
        dim_b: usize,
        styles: usize,
        sigma_b: f64,
        /// Per-attribute Bernoulli rates; their count is the attribute count.
        rates: Vec<f64>,
        seed: u64,
    },
}

impl TaskConfig {
    pub fn style_mixture_default() -> Self {
        TaskConfig::StyleMixture {
            dim_a: 4,
            dim_b: 8,
            clusters: 4,
            styles: 3,
            sigma_a: 0.05,
            sigma_b: 0.05,
            seed: 2018,
        }
    }

    pub fn attribute_default() -> Self {
        TaskConfig::AttributeVector {
            dim_b: 12,
            styles: 3,
            sigma_b: 0.05,
            rates: vec![0.6, 0.5, 0.45, 0.4, 0.3, 0.25, 0.2, 0.15],
            seed: 2018,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    StyleMixture,
    AttributeVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    A,
    B,
}

/// Ground-truth joint distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSpec {
    pub task: TaskKind,
    pub dim_a: usize,
    pub dim_b: usize,
    /// Content cluster centers in A (style-mixture only).
    pub centers: Vec<Vec<f64>>,
    /// Style offsets in B.
    pub style_offsets: Vec<Vec<f64>>,
    /// `dim_b × dim_a`, row-major.
    pub mixing: Vec<Vec<f64>>,
    pub sigma_a: f64,
    pub sigma_b: f64,
    /// Attribute rates (attribute-vector only).
    pub rates: Vec<f64>,
    /// Orthonormal basis of the style plane, used for 2-d projections.
    pub style_plane: [Vec<f64>; 2],
}

/// Exact conditional structure for one conditioning value.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleConditional {
    /// The `M` mode centers of `p(b | a)`.
    pub b_modes: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedBatch {
    pub a: Tensor,
    pub b: Tensor,
    pub styles: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DomainBatch {
    Paired(PairedBatch),
    Unpaired { a: Tensor, b: Tensor },
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Orthonormal basis of R^n from Gram–Schmidt on Gaussian vectors.
fn random_orthonormal_basis(n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v = vec![0.0; n];
        rng.fill_gaussian(&mut v);
        for q in &basis {
            let p = dot(&v, q);
            v.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

impl JointSpec {
    pub fn from_config(cfg: &TaskConfig) -> Result<Self> {
        let spec = match cfg {
            TaskConfig::StyleMixture {
                dim_a,
                dim_b,
                clusters,
                styles,
                sigma_a,
                sigma_b,
                seed,
            } => Self::style_mixture(*dim_a, *dim_b, *clusters, *styles, *sigma_a, *sigma_b, *seed)?,
            TaskConfig::AttributeVector {
                dim_b,
                styles,
                sigma_b,
                rates,
                seed,
            } => Self::attribute_vector(*dim_b, *styles, *sigma_b, rates, *seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn check_common(dim_a: usize, dim_b: usize, styles: usize, sigma_a: f64, sigma_b: f64) -> Result<()> {
        if dim_a == 0 || styles == 0 {
            return Err(Error::Config("task dims and style count must be positive".into()));
        }
        if dim_b < dim_a + 2 {
            return Err(Error::Config(format!(
                "dim_b ({dim_b}) must exceed dim_a ({dim_a}) by at least 2 to hold the style plane"
            )));
        }
        if !(sigma_a >= 0.0 && sigma_b >= 0.0) {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        Ok(())
    }

    /// Builds mixing map, style offsets and (via `content`) the A-side layout
    /// from `seed`, retrying until every sample is guaranteed to lie in
    /// `(-0.95, 0.95)`.
    #[allow(clippy::too_many_arguments, clippy::type_complexity)]
    fn layout(
        dim_a: usize,
        dim_b: usize,
        styles: usize,
        sigma_a: f64,
        sigma_b: f64,
        mix_scale: f64,
        offset_radius: f64,
        check_a_range: bool,
        rng: &mut Rng,
        content: &mut dyn FnMut(&mut Rng) -> Vec<Vec<f64>>,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>, [Vec<f64>; 2])> {
        for _attempt in 0..1000 {
            let basis = random_orthonormal_basis(dim_b, rng);
            let mixing: Vec<Vec<f64>> = (0..dim_b)
                .map(|i| (0..dim_a).map(|j| mix_scale * basis[j][i]).collect())
                .collect();
            let (u1, u2) = (basis[dim_a].clone(), basis[dim_a + 1].clone());
            let offsets: Vec<Vec<f64>> = (0..styles)
                .map(|m| {
                    let theta = 2.0 * std::f64::consts::PI * m as f64 / styles as f64 + 0.3;
                    (0..dim_b)
                        .map(|i| offset_radius * (theta.cos() * u1[i] + theta.sin() * u2[i]))
                        .collect()
                })
                .collect();
            let points = content(rng);
            let mut worst: f64 = 0.0;
            for p in &points {
                for s in &offsets {
                    for i in 0..dim_b {
                        let row_norm = dot(&mixing[i], &mixing[i]).sqrt();
                        let center = dot(&mixing[i], p) + s[i];
                        worst = worst.max(center.abs() + TRUNCATION * (sigma_a * row_norm + sigma_b));
                    }
                }
                if check_a_range {
                    for &x in p {
                        worst = worst.max(x.abs() + TRUNCATION * sigma_a);
                    }
                }
            }
            if worst < RANGE_BOUND {
                return Ok((mixing, offsets, points, [u1, u2]));
            }
        }
        Err(Error::Config("could not place domains inside (-1, 1); reduce noise scales".into()))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn style_mixture(
        dim_a: usize,
        dim_b: usize,
        clusters: usize,
        styles: usize,
        sigma_a: f64,
        sigma_b: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::check_common(dim_a, dim_b, styles, sigma_a, sigma_b)?;
        if clusters == 0 {
            return Err(Error::Config("clusters must be positive".into()));
        }
        let mut rng = Rng::new(seed).split(0xD0);
        let mut centers_of = |rng: &mut Rng| -> Vec<Vec<f64>> {
            let mut out: Vec<Vec<f64>> = Vec::new();
            let mut tries = 0;
            while out.len() < clusters {
                let c: Vec<f64> = (0..dim_a).map(|_| rng.uniform() - 0.5).collect();
                tries += 1;
                let far = out.iter().all(|o| {
                    let d: f64 = o.iter().zip(&c).map(|(x, y)| (x - y).powi(2)).sum();
                    d.sqrt() > 0.4
                });
                if far || tries > 10_000 {
                    out.push(c);
                }
            }
            out
        };
        let (mixing, style_offsets, centers, style_plane) =
            Self::layout(dim_a, dim_b, styles, sigma_a, sigma_b, 0.5, 0.35, true, &mut rng, &mut centers_of)?;
        Ok(JointSpec {
            task: TaskKind::StyleMixture,
            dim_a,
            dim_b,
            centers,
            style_offsets,
            mixing,
            sigma_a,
            sigma_b,
            rates: Vec::new(),
            style_plane,
        })
    }

    pub fn attribute_vector(dim_b: usize, styles: usize, sigma_b: f64, rates: &[f64], seed: u64) -> Result<Self> {
        let k = rates.len();
        Self::check_common(k, dim_b, styles, 0.0, sigma_b)?;
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("attribute rates must lie in [0, 1]".into()));
        }
        if k > 16 {
            return Err(Error::Config("at most 16 attributes are supported".into()));
        }
        let mut rng = Rng::new(seed).split(0xA7);
        // Worst case over every attribute vector.
        let mut all_vectors = |_: &mut Rng| -> Vec<Vec<f64>> {
            (0..1u32 << k)
                .map(|bits| (0..k).map(|j| ((bits >> j) & 1) as f64).collect())
                .collect()
        };
        let scale = 0.6 / (k as f64).sqrt();
        let (mixing, style_offsets, _, style_plane) =
            Self::layout(k, dim_b, styles, 0.0, sigma_b, scale, 0.3, false, &mut rng, &mut all_vectors)?;
        Ok(JointSpec {
            task: TaskKind::AttributeVector,
            dim_a: k,
            dim_b,
            centers: Vec::new(),
            style_offsets,
            mixing,
            sigma_a: 0.0,
            sigma_b,
            rates: rates.to_vec(),
            style_plane,
        })
    }

    pub fn styles(&self) -> usize {
        self.style_offsets.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.style_offsets.len();
        for i in 0..m {
            for j in i + 1..m {
                let d: f64 = self.style_offsets[i]
                    .iter()
                    .zip(&self.style_offsets[j])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if d <= 6.0 * self.sigma_b {
                    return Err(Error::Config(format!(
                        "style offsets {i} and {j} are {d:.4} apart, need > 6·sigma_b"
                    )));
                }
            }
        }
        if column_rank(&self.mixing, self.dim_a) < self.dim_a {
            return Err(Error::Config("mixing map is not full column rank".into()));
        }
        Ok(())
    }

    /// `W a`.
    pub fn mix(&self, a: &[f64]) -> Vec<f64> {
        self.mixing.iter().map(|row| dot(row, a)).collect()
    }

    pub fn oracle(&self, a: &[f64]) -> OracleConditional {
        let base = self.mix(a);
        OracleConditional {
            b_modes: self
                .style_offsets
                .iter()
                .map(|s| base.iter().zip(s).map(|(x, y)| x + y).collect())
                .collect(),
        }
    }

    /// Style of `b`: nearest offset after removing the content subspace.
    pub fn classify_style(&self, b: &[f64]) -> usize {
        let proj = self.project_style_plane(b);
        let mut best = (f64::INFINITY, 0);
        for (m, s) in self.style_offsets.iter().enumerate() {
            let ps = self.project_style_plane(s);
            let d = (proj[0] - ps[0]).powi(2) + (proj[1] - ps[1]).powi(2);
            if d < best.0 {
                best = (d, m);
            }
        }
        best.1
    }

    /// Coordinates of `b` in the plane spanned by the style offsets.
    pub fn project_style_plane(&self, b: &[f64]) -> [f64; 2] {
        [dot(b, &self.style_plane[0]), dot(b, &self.style_plane[1])]
    }

    /// Posterior content estimate for `b`: its style and the least-squares
    /// `a` with `W a ≈ b - s_m`. Unique because offsets are orthogonal to
    /// `range(W)`.
    pub fn content_posterior(&self, b: &[f64]) -> (usize, Vec<f64>) {
        let m = self.classify_style(b);
        let r: Vec<f64> = b.iter().zip(&self.style_offsets[m]).map(|(x, y)| x - y).collect();
        // Columns of W are orthogonal with equal norms.
        let col_sq: f64 = self.mixing.iter().map(|row| row[0] * row[0]).sum();
        let a = (0..self.dim_a)
            .map(|j| self.mixing.iter().zip(&r).map(|(row, x)| row[j] * x).sum::<f64>() / col_sq)
            .collect();
        (m, a)
    }

    fn truncated_noise(&self, rng: &mut Rng, sigma: f64, out: &mut [f64]) {
        if sigma == 0.0 {
            out.fill(0.0);
            return;
        }
        let limit = TRUNCATION * TRUNCATION;
        loop {
            rng.fill_gaussian(out);
            if out.iter().map(|x| x * x).sum::<f64>() < limit {
                break;
            }
        }
        out.iter_mut().for_each(|x| *x *= sigma);
    }

    fn draw_a(&self, rng: &mut Rng, out: &mut [f64]) {
        match self.task {
            TaskKind::StyleMixture => {
                let k = rng.below(self.centers.len());
                self.truncated_noise(rng, self.sigma_a, out);
                out.iter_mut().zip(&self.centers[k]).for_each(|(x, c)| *x += c);
            }
            TaskKind::AttributeVector => {
                for (x, &p) in out.iter_mut().zip(&self.rates) {
                    *x = if rng.bernoulli(p) { 1.0 } else { 0.0 };
                }
            }
        }
    }

    fn draw_b_given_a(&self, a: &[f64], rng: &mut Rng, out: &mut [f64]) -> usize {
        let m = rng.below(self.style_offsets.len());
        self.truncated_noise(rng, self.sigma_b, out);
        for (i, x) in out.iter_mut().enumerate() {
            *x += dot(&self.mixing[i], a) + self.style_offsets[m][i];
        }
        m
    }

    pub fn dims(&self, domain: Domain) -> usize {
        match domain {
            Domain::A => self.dim_a,
            Domain::B => self.dim_b,
        }
    }
}

fn column_rank(rows: &[Vec<f64>], cols: usize) -> usize {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let mut rank = 0;
    for c in 0..cols {
        let pivot = (rank..m.len()).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()));
        let Some(p) = pivot else { break };
        if m[p][c].abs() < 1e-10 {
            continue;
        }
        m.swap(rank, p);
        let (top, rest) = m.split_at_mut(rank + 1);
        let pivot_row = &top[rank];
        for row in rest {
            let f = row[c] / pivot_row[c];
            for (x, p) in row[c..cols].iter_mut().zip(&pivot_row[c..cols]) {
                *x -= f * p;
            }
        }
        rank += 1;
    }
    rank
}

/// Marginal samples from one domain; for B the underlying `a` is discarded.
pub fn sample_unpaired(spec: &JointSpec, domain: Domain, n: usize, rng: &mut Rng) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::Invalid("sample count must be at least 1".into()));
    }
    let width = spec.dims(domain);
    let mut out = Tensor::zeros(&[n, width]);
    let mut a = vec![0.0; spec.dim_a];
    for row in out.data_mut().chunks_mut(width) {
        spec.draw_a(rng, &mut a);
        match domain {
            Domain::A => row.copy_from_slice(&a),
            Domain::B => {
                spec.draw_b_given_a(&a, rng, row);
            }
        }
    }
    Ok(out)
}

/// Pairs `(a, b) ~ p(a, b)` with their style labels.
pub fn sample_paired(spec: &JointSpec, n: usize, rng: &mut Rng) -> Result<PairedBatch> {
    if n == 0 {
        return Err(Error::Invalid("sample count must be at least 1".into()));
    }
    let mut a = Tensor::zeros(&[n, spec.dim_a]);
    let mut b = Tensor::zeros(&[n, spec.dim_b]);
    let mut styles = Vec::with_capacity(n);
    for (ra, rb) in a.data_mut().chunks_mut(spec.dim_a).zip(b.data_mut().chunks_mut(spec.dim_b)) {
        spec.draw_a(rng, ra);
        styles.push(spec.draw_b_given_a(ra, rng, rb));
    }
    Ok(PairedBatch { a, b, styles })
}

/// Attribute-task sampler. Unpaired batches draw A and B from independent
/// underlying attribute vectors.
pub fn attribute_task_sample(spec: &JointSpec, n: usize, rng: &mut Rng, paired: bool) -> Result<DomainBatch> {
    if spec.task != TaskKind::AttributeVector {
        return Err(Error::Invalid("attribute_task_sample requires the attribute-vector task".into()));
    }
    if paired {
        Ok(DomainBatch::Paired(sample_paired(spec, n, rng)?))
    } else {
        let a = sample_unpaired(spec, Domain::A, n, rng)?;
        let b = sample_unpaired(spec, Domain::B, n, rng)?;
        Ok(DomainBatch::Unpaired { a, b })
    }
}

/// `min_m ||b - (W a + s_m)||_1`, the best L1 error any model of `p(b | a)`
/// that places mass on mode centers can reach.
pub fn oracle_best_l1(spec: &JointSpec, a: &[f64], b: &[f64]) -> f64 {
    spec.oracle(a)
        .b_modes
        .iter()
        .map(|c| c.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------
// Dataset files: "AUGD", u32 version, u32 n, u32 domain count, u32 width per
// domain, then n rows of little-endian f64 (paired rows are a ++ b).

const DATA_MAGIC: &[u8; 4] = b"AUGD";
const DATA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Single(Tensor),
    Paired { a: Tensor, b: Tensor },
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Single(t) => t.rows(),
            Dataset::Paired { a, .. } => a.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn widths(&self) -> Vec<usize> {
        match self {
            Dataset::Single(t) => vec![t.cols()],
            Dataset::Paired { a, b } => vec![a.cols(), b.cols()],
        }
    }
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let widths = ds.widths();
    let n = ds.len();
    let mut out = Vec::new();
    out.extend_from_slice(DATA_MAGIC);
    out.extend_from_slice(&DATA_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(n).map_err(|_| Error::Invalid("too many rows".into()))?.to_le_bytes());
    out.extend_from_slice(&(widths.len() as u32).to_le_bytes());
    for w in &widths {
        out.extend_from_slice(&(*w as u32).to_le_bytes());
    }
    let parts: Vec<&Tensor> = match ds {
        Dataset::Single(t) => vec![t],
        Dataset::Paired { a, b } => {
            if a.rows() != b.rows() {
                return Err(Error::DimMismatch {
                    what: "paired dataset rows".into(),
                    expected: a.rows(),
                    found: b.rows(),
                });
            }
            vec![a, b]
        }
    };
    for i in 0..n {
        for t in &parts {
            for v in t.row(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Decodes a dataset; `expected` widths, when given, must match the header.
pub fn decode_dataset(buf: &[u8], expected: Option<&[usize]>) -> Result<Dataset> {
    let mut c = Cursor::new(buf);
    if c.take(4, "magic")? != DATA_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            detail: "bad magic, expected AUGD".into(),
        });
    }
    let version = c.u32("version")?;
    if version != DATA_VERSION {
        return Err(Error::Parse {
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let n = c.u32("row count")? as usize;
    let domains = c.u32("domain count")? as usize;
    if !(1..=2).contains(&domains) {
        return Err(Error::Parse {
            offset: 12,
            detail: format!("domain count must be 1 or 2, got {domains}"),
        });
    }
    let widths: Vec<usize> = (0..domains).map(|_| c.u32("width").map(|w| w as usize)).collect::<Result<_>>()?;
    if let Some(exp) = expected {
        if exp.len() != widths.len() {
            return Err(Error::DimMismatch {
                what: "dataset domain count (config vs file)".into(),
                expected: exp.len(),
                found: widths.len(),
            });
        }
        for (e, w) in exp.iter().zip(&widths) {
            if e != w {
                return Err(Error::DimMismatch {
                    what: "dataset width (config vs file)".into(),
                    expected: *e,
                    found: *w,
                });
            }
        }
    }
    if n == 0 || widths.contains(&0) {
        return Err(Error::Parse {
            offset: 8,
            detail: "empty dataset".into(),
        });
    }
    let mut parts: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(n * w)).collect();
    for _ in 0..n {
        for (part, &w) in parts.iter_mut().zip(&widths) {
            for _ in 0..w {
                part.push(c.f64("row data")?);
            }
        }
    }
    c.finish()?;
    let mut tensors = parts
        .into_iter()
        .zip(&widths)
        .map(|(d, &w)| Tensor::new(vec![n, w], d))
        .collect::<Result<Vec<_>>>()?;
    Ok(if tensors.len() == 1 {
        Dataset::Single(tensors.remove(0))
    } else {
        let b = tensors.pop().unwrap();
        let a = tensors.pop().unwrap();
        Dataset::Paired { a, b }
    })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_dataset(path: &Path, expected: Option<&[usize]>) -> Result<Dataset> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_dataset(&buf, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_spec() -> JointSpec {
        JointSpec::from_config(&TaskConfig::style_mixture_default()).unwrap()
    }

    #[test]
    fn default_layout_is_valid_and_bounded() {
        let spec = default_spec();
        assert_eq!(spec.centers.len(), 4);
        assert_eq!(spec.styles(), 3);
        let mut rng = Rng::new(1);
        let b = sample_unpaired(&spec, Domain::B, 5000, &mut rng).unwrap();
        let a = sample_unpaired(&spec, Domain::A, 5000, &mut rng).unwrap();
        assert!(a.data().iter().chain(b.data()).all(|v| v.abs() < 0.95));
    }

    #[test]
    fn noiseless_single_cluster_has_m_points() {
        let spec = JointSpec::style_mixture(4, 8, 1, 2, 0.0, 0.0, 3).unwrap();
        let b = sample_unpaired(&spec, Domain::B, 200, &mut Rng::new(0)).unwrap();
        let mut distinct: Vec<Vec<f64>> = Vec::new();
        for row in b.row_iter() {
            if !distinct.iter().any(|d| d.as_slice() == row) {
                distinct.push(row.to_vec());
            }
        }
        assert_eq!(distinct.len(), 2);
    }

    #[test]
    fn oracle_enumerates_every_style() {
        let spec = default_spec();
        let pb = sample_paired(&spec, 20, &mut Rng::new(2)).unwrap();
        for row in pb.a.row_iter() {
            assert_eq!(spec.oracle(row).b_modes.len(), 3);
        }
    }

    #[test]
    fn paired_residual_within_truncation() {
        let spec = default_spec();
        let pb = sample_paired(&spec, 2000, &mut Rng::new(3)).unwrap();
        for i in 0..2000 {
            let modes = spec.oracle(pb.a.row(i)).b_modes;
            let best = modes
                .iter()
                .map(|c| c.iter().zip(pb.b.row(i)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 4.0 * spec.sigma_b);
            assert_eq!(spec.classify_style(pb.b.row(i)), pb.styles[i]);
        }
    }

    #[test]
    fn content_posterior_recovers_a() {
        let spec = default_spec();
        let pb = sample_paired(&spec, 100, &mut Rng::new(4)).unwrap();
        for i in 0..100 {
            let (m, a_hat) = spec.content_posterior(pb.b.row(i));
            assert_eq!(m, pb.styles[i]);
            let err: f64 = a_hat.iter().zip(pb.a.row(i)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 4.0 * spec.sigma_b / 0.5 + 1e-9);
        }
    }

    #[test]
    fn oracle_l1_floor() {
        let spec = JointSpec::style_mixture(4, 8, 4, 3, 0.05, 0.0, 5).unwrap();
        let pb = sample_paired(&spec, 10, &mut Rng::new(6)).unwrap();
        for i in 0..10 {
            assert!(oracle_best_l1(&spec, pb.a.row(i), pb.b.row(i)) < 1e-12);
            let mut b = pb.b.row(i).to_vec();
            b[0] += 0.01;
            b[3] -= 0.02;
            assert!((oracle_best_l1(&spec, pb.a.row(i), &b) - 0.03).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_samples_rejected() {
        let spec = default_spec();
        assert!(sample_paired(&spec, 0, &mut Rng::new(0)).is_err());
        assert!(sample_unpaired(&spec, Domain::A, 0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn attribute_rates_zero_gives_zero_vectors() {
        let spec = JointSpec::attribute_vector(12, 3, 0.05, &[0.0; 8], 1).unwrap();
        let DomainBatch::Paired(pb) = attribute_task_sample(&spec, 50, &mut Rng::new(0), true).unwrap() else {
            panic!("expected paired batch");
        };
        assert!(pb.a.data().iter().all(|&v| v == 0.0));
        let unpaired = attribute_task_sample(&spec, 5, &mut Rng::new(0), false).unwrap();
        assert!(matches!(unpaired, DomainBatch::Unpaired { .. }));
        assert!(attribute_task_sample(&default_spec(), 5, &mut Rng::new(0), true).is_err());
    }

    #[test]
    fn dataset_round_trip_and_errors() {
        let spec = default_spec();
        let pb = sample_paired(&spec, 7, &mut Rng::new(8)).unwrap();
        let ds = Dataset::Paired { a: pb.a, b: pb.b };
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(decode_dataset(&bytes, Some(&[4, 8])).unwrap(), ds);

        let err = decode_dataset(&bytes[..bytes.len() - 3], None).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert!(offset > 24),
            other => panic!("unexpected {other:?}"),
        }
        let err = decode_dataset(&bytes, Some(&[4, 6])).unwrap_err().to_string();
        assert!(err.contains('6') && err.contains('8'), "{err}");
    }
}
