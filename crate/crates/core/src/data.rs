//! Synthetic Bradley-Terry preference world, partitioning, privatization and
//! dataset files.
//!
//! [`PreferenceSample`] is the only type that carries the ground-truth label
//! `l*`, and it only hands it out through [`OracleGate`] (audited) or the
//! randomized-response boundary in [`privatize`]. Trainers consume
//! [`PrivatizedSample`], which has no `l*` field at all.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audit::{self, ReadPurpose};
use crate::error::{invalid_param, Error, Result};
use crate::math::{dot_diff, sigmoid};
use crate::mechanisms::{flip_one, BinaryLabel, RRParams};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Feature access shared by labeled and privatized samples.
pub trait PreferencePair {
    fn sample_id(&self) -> u64;
    /// Features of response 1, `phi(x, y1)`.
    fn phi_1(&self) -> &[f64];
    /// Features of response 2, `phi(x, y2)`.
    fn phi_2(&self) -> &[f64];
}

pub trait HasLabeler {
    fn labeler_id(&self) -> Option<u64>;
}

/// One prompt with a response pair and the human preference `l*`.
#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceSample {
    sample_id: u64,
    labeler_id: Option<u64>,
    phi_1: Vec<f64>,
    phi_2: Vec<f64>,
    label_true: BinaryLabel,
}

impl PreferenceSample {
    pub fn new(
        sample_id: u64,
        labeler_id: Option<u64>,
        phi_1: Vec<f64>,
        phi_2: Vec<f64>,
        label_true: BinaryLabel,
    ) -> Result<Self> {
        check_features(&phi_1, &phi_2)?;
        Ok(Self {
            sample_id,
            labeler_id,
            phi_1,
            phi_2,
            label_true,
        })
    }

    pub fn dim(&self) -> usize {
        self.phi_1.len()
    }
}

fn check_features(phi_1: &[f64], phi_2: &[f64]) -> Result<()> {
    if phi_1.is_empty() {
        return Err(Error::InvalidArgument("feature vectors are empty".into()));
    }
    if phi_1.len() != phi_2.len() {
        return Err(Error::InvalidArgument(format!(
            "feature lengths differ: {} vs {}",
            phi_1.len(),
            phi_2.len()
        )));
    }
    if !phi_1.iter().chain(phi_2).all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite feature value".into()));
    }
    Ok(())
}

impl PreferencePair for PreferenceSample {
    fn sample_id(&self) -> u64 {
        self.sample_id
    }

    fn phi_1(&self) -> &[f64] {
        &self.phi_1
    }

    fn phi_2(&self) -> &[f64] {
        &self.phi_2
    }
}

impl HasLabeler for PreferenceSample {
    fn labeler_id(&self) -> Option<u64> {
        self.labeler_id
    }
}

/// A sample whose label has been through randomized response.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivatizedSample {
    sample_id: u64,
    labeler_id: Option<u64>,
    phi_1: Vec<f64>,
    phi_2: Vec<f64>,
    label_rr: BinaryLabel,
    epsilon: f64,
}

impl PrivatizedSample {
    pub fn label_rr(&self) -> BinaryLabel {
        self.label_rr
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl PreferencePair for PrivatizedSample {
    fn sample_id(&self) -> u64 {
        self.sample_id
    }

    fn phi_1(&self) -> &[f64] {
        &self.phi_1
    }

    fn phi_2(&self) -> &[f64] {
        &self.phi_2
    }
}

impl HasLabeler for PrivatizedSample {
    fn labeler_id(&self) -> Option<u64> {
        self.labeler_id
    }
}

/// Output of randomized response over a whole dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivatizedDataset {
    samples: Vec<PrivatizedSample>,
    rr: RRParams,
}

impl PrivatizedDataset {
    pub fn samples(&self) -> &[PrivatizedSample] {
        &self.samples
    }

    pub fn rr_params(&self) -> &RRParams {
        &self.rr
    }

    pub fn epsilon(&self) -> f64 {
        self.rr.epsilon()
    }

    pub fn gamma_eps(&self) -> f64 {
        self.rr.gamma_eps()
    }

    pub fn labels_rr(&self) -> Vec<BinaryLabel> {
        self.samples.iter().map(|s| s.label_rr).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Audited access to ground-truth labels.
#[derive(Clone, Copy, Debug)]
pub struct OracleGate<'a> {
    samples: &'a [PreferenceSample],
}

impl<'a> OracleGate<'a> {
    pub fn new(samples: &'a [PreferenceSample]) -> Self {
        Self { samples }
    }

    pub fn samples(&self) -> &'a [PreferenceSample] {
        self.samples
    }

    pub fn labels(&self, purpose: ReadPurpose) -> Vec<BinaryLabel> {
        audit::record(purpose, self.samples.len() as u64);
        self.samples.iter().map(|s| s.label_true).collect()
    }

    pub fn label(&self, index: usize, purpose: ReadPurpose) -> BinaryLabel {
        audit::record(purpose, 1);
        self.samples[index].label_true
    }
}

/// Configuration of the synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub d: usize,
    pub n: usize,
    /// Bradley-Terry sharpness.
    pub beta_gen: f64,
    pub feature_scale: f64,
    /// Radius of the sphere `theta_star` is drawn from when not given.
    pub theta_radius: f64,
    pub theta_star: Option<Vec<f64>>,
    pub labelers: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            d: 10,
            n: 4000,
            beta_gen: 5.0,
            feature_scale: 1.0,
            theta_radius: 1.0,
            theta_star: None,
            labelers: 100,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid_param("d", "must be positive"));
        }
        if self.n == 0 {
            return Err(invalid_param("n", "must be positive"));
        }
        if !(self.beta_gen > 0.0 && self.beta_gen.is_finite()) {
            return Err(invalid_param("beta_gen", "must be finite and positive"));
        }
        if !(self.feature_scale > 0.0 && self.feature_scale.is_finite()) {
            return Err(invalid_param(
                "feature_scale",
                "must be finite and positive",
            ));
        }
        if self.labelers == 0 {
            return Err(invalid_param("labelers", "must be positive"));
        }
        match &self.theta_star {
            Some(theta) if theta.len() != self.d => Err(invalid_param(
                "theta_star",
                format!("length {} does not match d = {}", theta.len(), self.d),
            )),
            Some(theta) if !theta.iter().all(|v| v.is_finite()) => {
                Err(invalid_param("theta_star", "non-finite entry"))
            }
            None if !(self.theta_radius >= 0.0 && self.theta_radius.is_finite()) => {
                Err(invalid_param("theta_radius", "must be finite and >= 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Header line of a dataset file; also the ground truth of a world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldHeader {
    pub version: u32,
    pub d: usize,
    pub n: usize,
    pub beta_gen: f64,
    pub theta_star: Vec<f64>,
}

/// A generated (or loaded) preference dataset with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub header: WorldHeader,
    pub samples: Vec<PreferenceSample>,
}

impl World {
    pub fn theta_star(&self) -> &[f64] {
        &self.header.theta_star
    }

    /// Splits off the trailing `fraction` of samples as a held-out set.
    pub fn split_heldout(
        &self,
        fraction: f64,
    ) -> Result<(&[PreferenceSample], &[PreferenceSample])> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(invalid_param(
                "heldout_fraction",
                format!("must lie in (0, 1), got {fraction}"),
            ));
        }
        let n = self.samples.len();
        let heldout = ((n as f64) * fraction).round() as usize;
        if heldout == 0 || heldout >= n {
            return Err(Error::InvalidArgument(format!(
                "held-out fraction {fraction} leaves an empty split of {n} samples"
            )));
        }
        Ok(self.samples.split_at(n - heldout))
    }
}

/// Draws a Bradley-Terry world.
///
/// Draw order: `theta_star` (only when not supplied), then per sample
/// `phi_1`, `phi_2` and one uniform for the label. Labeler ids are assigned
/// round-robin.
pub fn generate_world<R: Rng + ?Sized>(params: &WorldParams, rng: &mut R) -> Result<World> {
    params.validate()?;
    let d = params.d;
    let theta_star = match &params.theta_star {
        Some(theta) => theta.clone(),
        None => sample_sphere(d, params.theta_radius, rng),
    };

    let mut samples = Vec::with_capacity(params.n);
    for i in 0..params.n {
        let phi_1 = gaussian_vector(d, params.feature_scale, rng);
        let phi_2 = gaussian_vector(d, params.feature_scale, rng);
        let p_one = sigmoid(params.beta_gen * dot_diff(&theta_star, &phi_1, &phi_2));
        let u: f64 = rng.random();
        samples.push(PreferenceSample {
            sample_id: i as u64,
            labeler_id: Some(i as u64 % params.labelers),
            phi_1,
            phi_2,
            label_true: BinaryLabel::from_bool(u < p_one),
        });
    }

    Ok(World {
        header: WorldHeader {
            version: DATASET_FORMAT_VERSION,
            d,
            n: params.n,
            beta_gen: params.beta_gen,
            theta_star,
        },
        samples,
    })
}

fn gaussian_vector<R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Uniform draw from the sphere of the given radius.
pub fn sample_sphere<R: Rng + ?Sized>(d: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let v = gaussian_vector(d, 1.0, rng);
        let norm = crate::math::norm(&v);
        if norm > 0.0 {
            return v.into_iter().map(|x| radius * x / norm).collect();
        }
    }
}

/// Splits into `k` contiguous, order-preserving parts whose sizes differ by
/// at most one; the first `n % k` parts get the extra sample.
pub fn partition<T>(dataset: &[T], k: usize) -> Result<Vec<&[T]>> {
    let n = dataset.len();
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} samples into {k} non-empty parts"
        )));
    }
    let (base, extra) = (n / k, n % k);
    let mut parts = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        parts.push(&dataset[start..start + len]);
        start += len;
    }
    Ok(parts)
}

/// Applies randomized response to the `l*` column.
pub fn privatize<R: Rng + ?Sized>(
    dataset: &[PreferenceSample],
    epsilon: f64,
    rng: &mut R,
) -> Result<PrivatizedDataset> {
    Ok(privatize_with(dataset, RRParams::new(epsilon)?, rng))
}

/// As [`privatize`], with explicit mechanism parameters.
pub fn privatize_with<R: Rng + ?Sized>(
    dataset: &[PreferenceSample],
    rr: RRParams,
    rng: &mut R,
) -> PrivatizedDataset {
    audit::record(ReadPurpose::Privatization, dataset.len() as u64);
    let samples = dataset
        .iter()
        .map(|s| PrivatizedSample {
            sample_id: s.sample_id,
            labeler_id: s.labeler_id,
            phi_1: s.phi_1.clone(),
            phi_2: s.phi_2.clone(),
            label_rr: flip_one(s.label_true, rr.gamma_eps(), rng),
            epsilon: rr.epsilon(),
        })
        .collect();
    PrivatizedDataset { samples, rr }
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    sample_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labeler_id: Option<u64>,
    phi_1: Vec<f64>,
    phi_2: Vec<f64>,
    label_true: BinaryLabel,
}

/// Writes a world as line-delimited JSON: one header line, then one sample
/// per line.
pub fn save_dataset(path: impl AsRef<Path>, world: &World) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    write_dataset(&mut out, world)?;
    out.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(out: &mut W, world: &World) -> Result<()> {
    serde_json::to_writer(&mut *out, &world.header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for s in &world.samples {
        let record = SampleRecord {
            sample_id: s.sample_id,
            labeler_id: s.labeler_id,
            phi_1: s.phi_1.clone(),
            phi_2: s.phi_2.clone(),
            label_true: s.label_true,
        };
        serde_json::to_writer(&mut *out, &record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<World> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let fail = |line: usize, reason: String| Error::Load {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| fail(1, "missing header".into()))??;
    let header: WorldHeader =
        serde_json::from_str(&header_line).map_err(|e| fail(1, format!("bad header: {e}")))?;
    if header.version != DATASET_FORMAT_VERSION {
        return Err(fail(
            1,
            format!(
                "unsupported version {} (expected {DATASET_FORMAT_VERSION})",
                header.version
            ),
        ));
    }
    if header.d == 0 || header.theta_star.len() != header.d {
        return Err(fail(
            1,
            format!(
                "theta_star has length {} but d = {}",
                header.theta_star.len(),
                header.d
            ),
        ));
    }

    let mut samples = Vec::with_capacity(header.n);
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| fail(lineno, format!("malformed record: {e}")))?;
        if record.phi_1.len() != header.d || record.phi_2.len() != header.d {
            return Err(fail(
                lineno,
                format!(
                    "feature dimension ({}, {}) does not match d = {}",
                    record.phi_1.len(),
                    record.phi_2.len(),
                    header.d
                ),
            ));
        }
        let sample = PreferenceSample::new(
            record.sample_id,
            record.labeler_id,
            record.phi_1,
            record.phi_2,
            record.label_true,
        )
        .map_err(|e| fail(lineno, e.to_string()))?;
        samples.push(sample);
    }
    if samples.len() != header.n {
        return Err(fail(
            samples.len() + 2,
            format!("expected {} records, found {}", header.n, samples.len()),
        ));
    }
    Ok(World { header, samples })
}
