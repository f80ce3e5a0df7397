//! Latent attribute representations, attribute shifts, modification,
//! interpolation, prior sampling, and latent-space diagnostics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::FeatureSegment;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::Rng;
use crate::train::Dataset;
use crate::vae::{log_standard_normal, SpeechModel};

const ENCODE_BATCH: usize = 256;

/// Latent representation `μ_r` of one attribute value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeEntry {
    pub attribute: String,
    pub value: String,
    /// Number of contributing segments `N_r`.
    pub count: usize,
    /// Latent samples per segment; 0 means posterior means were averaged
    /// directly (the `J → ∞` limit).
    pub samples_per_instance: usize,
    pub mean: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeTable {
    pub latent_dim: usize,
    /// Sorted by `(attribute, value)`, keys unique.
    pub entries: Vec<AttributeEntry>,
}

impl AttributeTable {
    pub fn new(latent_dim: usize, mut entries: Vec<AttributeEntry>) -> Result<Self> {
        entries.sort_by(|a, b| (&a.attribute, &a.value).cmp(&(&b.attribute, &b.value)));
        for w in entries.windows(2) {
            if (&w[0].attribute, &w[0].value) == (&w[1].attribute, &w[1].value) {
                return Err(Error::Data(format!("duplicate attribute entry {}={}", w[0].attribute, w[0].value)));
            }
        }
        for e in &entries {
            if e.count == 0 || e.mean.len() != latent_dim || e.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("invalid attribute entry {}={}", e.attribute, e.value)));
            }
        }
        Ok(Self { latent_dim, entries })
    }

    pub fn get(&self, attribute: &str, value: &str) -> Result<&AttributeEntry> {
        self.entries
            .iter()
            .find(|e| e.attribute == attribute && e.value == value)
            .ok_or_else(|| Error::Data(format!("no attribute entry {attribute}={value}")))
    }

    pub fn values(&self, attribute: &str) -> Vec<&str> {
        self.entries.iter().filter(|e| e.attribute == attribute).map(|e| e.value.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable table") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(s)?;
        Self::new(t.latent_dim, t.entries)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// How many latent draws to average per instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Samples {
    /// Average the posterior means (exact expectation).
    Exact,
    /// Average `J` reparameterized draws per instance.
    Draws(usize),
}

impl Samples {
    pub fn per_instance(self) -> usize {
        match self {
            Samples::Exact => 0,
            Samples::Draws(j) => j,
        }
    }

    pub fn from_count(j: usize) -> Self {
        if j == 0 {
            Samples::Exact
        } else {
            Samples::Draws(j)
        }
    }
}

/// Posterior means and log-variances of every item, in item order.
pub fn encode_dataset(model: &SpeechModel<f32>, data: &Dataset) -> Result<(Vec<Vec<f32>>, Vec<Vec<f32>>)> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut means, mut log_vars) = (Vec::with_capacity(data.len()), Vec::with_capacity(data.len()));
    for chunk in idx.chunks(ENCODE_BATCH) {
        let q = model.encode(&data.batch::<f32>(chunk))?;
        for i in 0..chunk.len() {
            means.push(q.mean.item(i).to_vec());
            log_vars.push(q.log_var.item(i).to_vec());
        }
    }
    Ok((means, log_vars))
}

/// `μ_r = (1/N) Σ_i (1/J) Σ_j z^(i,j)` over the posteriors of one value's
/// instances (given as means and log-variances).
pub fn attribute_mean(means: &[&[f32]], log_vars: &[&[f32]], samples: Samples, rng: &mut Rng) -> Result<Vec<f64>> {
    let first = means.first().ok_or_else(|| Error::Data("no instances for attribute value".into()))?;
    let d = first.len();
    let mut acc = vec![0f64; d];
    for (m, lv) in means.iter().zip(log_vars) {
        match samples {
            Samples::Exact => {
                for (a, &v) in acc.iter_mut().zip(m.iter()) {
                    *a += v as f64;
                }
            }
            Samples::Draws(j) => {
                for _ in 0..j {
                    for k in 0..d {
                        let z = m[k] as f64 + (0.5 * lv[k] as f64).exp() * rng.normal();
                        acc[k] += z / j as f64;
                    }
                }
            }
        }
    }
    let n = means.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Attribute table over `segments` (raw dB) for each attribute in
/// `attributes`. Segments without a label for an attribute are skipped for it.
pub fn build_table(
    model: &SpeechModel<f32>,
    data: &Dataset,
    segments: &[FeatureSegment],
    attributes: &[&str],
    samples: Samples,
    seed: u64,
) -> Result<AttributeTable> {
    if data.len() != segments.len() {
        return Err(Error::InvalidArgument("dataset and segment list differ in length".into()));
    }
    let (means, log_vars) = encode_dataset(model, data)?;
    let mut entries = Vec::new();
    for &attr in attributes {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in segments.iter().enumerate() {
            if let Some(v) = s.label(attr) {
                groups.entry(v).or_default().push(i);
            }
        }
        if groups.is_empty() {
            return Err(Error::Data(format!("no segment carries attribute {attr:?}")));
        }
        for (value, idx) in groups {
            let m: Vec<&[f32]> = idx.iter().map(|&i| means[i].as_slice()).collect();
            let lv: Vec<&[f32]> = idx.iter().map(|&i| log_vars[i].as_slice()).collect();
            let mut rng = Rng::for_purpose(seed, &format!("attr/{attr}/{value}"));
            let mean = attribute_mean(&m, &lv, samples, &mut rng)?;
            entries.push(AttributeEntry {
                attribute: attr.to_string(),
                value: value.to_string(),
                count: idx.len(),
                samples_per_instance: samples.per_instance(),
                mean: mean.into_iter().map(|v| v as f32).collect(),
            });
        }
    }
    AttributeTable::new(model.arch.latent, entries)
}

/// `v_{s→t} = μ_t − μ_s` for one attribute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentShift {
    pub attribute: String,
    pub source: String,
    pub target: String,
    pub v: Vec<f64>,
}

impl LatentShift {
    pub fn zero(attribute: &str, value: &str, dim: usize) -> Self {
        Self { attribute: attribute.into(), source: value.into(), target: value.into(), v: vec![0.0; dim] }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable shift") + "\n"
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn negate(&self) -> Self {
        Self {
            attribute: self.attribute.clone(),
            source: self.target.clone(),
            target: self.source.clone(),
            v: self.v.iter().map(|x| -x).collect(),
        }
    }
}

/// Shift between two values of `attribute`. Differences of the stored
/// single-precision means are formed in double precision, where they are
/// exact, so the shifts are exactly antisymmetric and path-additive.
pub fn make_shift(table: &AttributeTable, attribute: &str, source: &str, target: &str) -> Result<LatentShift> {
    let s = table.get(attribute, source)?;
    let t = table.get(attribute, target)?;
    Ok(LatentShift {
        attribute: attribute.into(),
        source: source.into(),
        target: target.into(),
        v: t.mean.iter().zip(&s.mean).map(|(&a, &b)| a as f64 - b as f64).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Use posterior and output means.
    #[default]
    Mean,
    /// Sample `z` from the posterior and `x` from the output distribution.
    Sample,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(DecodeMode::Mean),
            "sample" => Ok(DecodeMode::Sample),
            _ => Err(Error::InvalidArgument(format!("decode mode must be mean or sample, got {s:?}"))),
        }
    }
}

/// Encode `x` (model space), add `shift` to every latent code, decode.
/// Returns model-space segments of `x`'s shape.
pub fn modify(
    model: &SpeechModel<f32>,
    x: &Tensor<f32>,
    shift: &[f64],
    mode: DecodeMode,
    rng: &mut Rng,
) -> Result<Tensor<f32>> {
    if shift.len() != model.arch.latent {
        return Err(Error::Shape(format!("shift has {} dims, model latent has {}", shift.len(), model.arch.latent)));
    }
    let q = model.encode(x)?;
    let z = match mode {
        DecodeMode::Mean => q.mean,
        DecodeMode::Sample => q.sample(&model.draw_eps(x.dim(0), rng))?,
    };
    let d = model.arch.latent;
    let z = Tensor::from_fn(z.shape(), |k| (z.data()[k] as f64 + shift[k % d]) as f32);
    decode_latent(model, &z, mode, rng)
}

/// Decode latent codes; mean mode returns `μ_x`, sample mode `μ_x + σ_x ⊙ ε`.
pub fn decode_latent(model: &SpeechModel<f32>, z: &Tensor<f32>, mode: DecodeMode, rng: &mut Rng) -> Result<Tensor<f32>> {
    let px = model.decode(z)?;
    Ok(match mode {
        DecodeMode::Mean => px.mean,
        DecodeMode::Sample => {
            let eps = Tensor::from_fn(px.mean.shape(), |_| rng.normal() as f32);
            px.sample(&eps)?
        }
    })
}

/// Output mean at `z = μ_r` (model space, `(1, 1, T, F)`).
pub fn decode_attribute_repr(model: &SpeechModel<f32>, mean: &[f32]) -> Result<Tensor<f32>> {
    let z = Tensor::from_vec(&[1, mean.len()], mean.to_vec())?;
    Ok(model.decode(&z)?.mean)
}

/// `α z_a + (1 − α) z_b`.
pub fn interpolate(z_a: &[f64], z_b: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("interpolation weight {alpha} outside [0, 1]")));
    }
    if z_a.len() != z_b.len() {
        return Err(Error::Shape(format!("latent codes of {} and {} dims", z_a.len(), z_b.len())));
    }
    Ok(z_a.iter().zip(z_b).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect())
}

/// Log density of `z` under the standard normal prior.
pub fn log_prior(z: &[f64]) -> f64 {
    log_standard_normal(z)
}

/// `n` prior draws and their decoded output means (model space).
pub fn sample_prior(model: &SpeechModel<f32>, n: usize, seed: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut rng = Rng::for_purpose(seed, "prior-sample");
    let z = model.draw_eps(n, &mut rng);
    let x = model.decode(&z)?.mean;
    Ok((z, x))
}

/// Pairwise cosine similarities.
pub fn cosine_matrix(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let norms: Vec<f64> = vectors.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
        return Err(Error::Data(format!("entry {i} has zero or non-finite norm")));
    }
    let k = vectors.len();
    let mut m = vec![vec![0.0; k]; k];
    for i in 0..k {
        m[i][i] = 1.0;
        for j in 0..i {
            let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            let c = dot / (norms[i] * norms[j]);
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    Ok(m)
}

/// `o_d = Σ_{d' ≠ d} |C_{dd'}|` of the sample covariance (denominator
/// `n − 1`) of the rows of `z`.
pub fn offdiag_cov_profile(z: &[Vec<f64>]) -> Result<Vec<f64>> {
    if z.len() < 2 {
        return Err(Error::InvalidArgument("covariance needs at least 2 vectors".into()));
    }
    let d = z[0].len();
    if z.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("latent vectors differ in dimension".into()));
    }
    let n = z.len();
    let mean: Vec<f64> = (0..d).map(|k| z.iter().map(|r| r[k]).sum::<f64>() / n as f64).collect();
    let centered: Vec<f64> = z.iter().flat_map(|r| r.iter().zip(&mean).map(|(a, m)| a - m)).collect();
    // C = Xᵀ X / (n − 1) via one GEMM.
    let mut c = vec![0f64; d * d];
    <f64 as crate::nn::Scalar>::gemm(d, n, d, &centered, true, &centered, false, 0.0, &mut c);
    let scale = 1.0 / (n as f64 - 1.0);
    Ok((0..d)
        .map(|i| (0..d).filter(|&j| j != i).map(|j| (c[i * d + j] * scale).abs()).sum())
        .collect())
}

/// Upper envelope of `o_d` when the `d` coordinates are independent with
/// unit variance: each off-diagonal sample covariance is approximately
/// `N(0, 1/n)`, so `|C|` has mean `√(2/(πn))` and variance `(1 − 2/π)/n`;
/// the envelope is the mean of the `d − 1` term sum plus `k` standard
/// deviations.
pub fn null_cov_envelope(n: usize, d: usize, k: f64) -> f64 {
    let n = n as f64;
    let terms = (d - 1) as f64;
    let mean = terms * (2.0 / (std::f64::consts::PI * n)).sqrt();
    let sd = (terms * (1.0 - 2.0 / std::f64::consts::PI) / n).sqrt();
    mean + k * sd
}

/// Arithmetic mean of raw segments, the feature-space baseline for
/// attribute visualizations.
pub fn average_segments(segments: &[&FeatureSegment]) -> Result<Vec<f32>> {
    let first = segments.first().ok_or_else(|| Error::Data("nothing to average".into()))?;
    let mut acc = vec![0f64; first.values.len()];
    for s in segments {
        if s.values.len() != acc.len() {
            return Err(Error::Shape("segments differ in size".into()));
        }
        for (a, &v) in acc.iter_mut().zip(&s.values) {
            *a += v as f64;
        }
    }
    Ok(acc.into_iter().map(|a| (a / segments.len() as f64) as f32).collect())
}
