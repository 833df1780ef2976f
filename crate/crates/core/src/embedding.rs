//! Class-conditional mean embeddings: `(1/m) Σ φ(x_i) y_iᵀ`, a `d×c` matrix.
//!
//! The data-side embedding is computed once, privatized through the Gaussian
//! mechanism and written to disk; the generator side is rebuilt on a [`Tape`]
//! at every training step.

use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::ntk::NtkFeatureMap;
use crate::privacy::{Calibration, PrivacyParams, ReleaseLog};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

const MAGIC: &[u8; 8] = b"DPNTKEMB";
const FORMAT_VERSION: u32 = 1;

/// How each class column is averaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide every column by the total count `m`.
    Global,
    /// Divide each column by its own class count.
    PerClass,
}

/// Class counts used by the per-class variant, possibly noised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    /// Clamped at 0; classes excluded from generation hold 0.
    pub counts: Vec<f64>,
    pub normalization: Normalization,
}

impl ClassWeights {
    /// Counts renormalized to sum to one.
    pub fn proportions(&self) -> Vec<f64> {
        let total: f64 = self.counts.iter().sum();
        self.counts.iter().map(|c| c / total).collect()
    }

    pub fn excluded(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&k| self.counts[k] <= 0.0).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanEmbedding {
    matrix: Tensor,
    m: usize,
    privacy: Option<PrivacyParams>,
    fingerprint: String,
    class_weights: Option<ClassWeights>,
}

impl MeanEmbedding {
    pub fn from_parts(
        matrix: Tensor,
        m: usize,
        fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if !matrix.is_matrix() {
            return Err(Error::Shape("embedding must be a d×c matrix".into()));
        }
        Ok(MeanEmbedding {
            matrix,
            m,
            privacy: None,
            fingerprint: fingerprint.into(),
            class_weights: None,
        })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn feature_dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.matrix.cols()
    }

    /// Number of data points that contributed.
    pub fn count(&self) -> usize {
        self.m
    }

    pub fn is_privatized(&self) -> bool {
        self.privacy.is_some()
    }

    pub fn privacy(&self) -> Option<&PrivacyParams> {
        self.privacy.as_ref()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn normalization(&self) -> Normalization {
        self.class_weights
            .as_ref()
            .map_or(Normalization::Global, |w| w.normalization)
    }

    pub fn class_weights(&self) -> Option<&ClassWeights> {
        self.class_weights.as_ref()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.feature_dim()).map(|i| self.matrix.at(i, k)).collect()
    }

    /// Binary layout, little-endian:
    ///
    /// ```text
    /// "DPNTKEMB" | version u32 | d u64 | c u64 | m u64
    /// | privatized u8 | ε f64 | δ f64 | σ f64 | Δ f64 | calibration u8
    /// | fingerprint: len u32 + ASCII
    /// | normalization u8 | [c × count f64 when per-class]
    /// | d·c matrix entries f64 (row-major)
    /// | metadata: len u64 + UTF-8 JSON
    /// ```
    ///
    /// Non-private embeddings store ε = ∞, δ = σ = Δ = 0 and calibration 255.
    pub fn write_to(&self, mut w: impl Write, metadata: &serde_json::Value) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for v in [self.feature_dim(), self.num_classes(), self.m] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        let (flag, eps, delta, sigma, sens, cal) = match &self.privacy {
            Some(p) => (
                1u8,
                p.epsilon,
                p.delta,
                p.sigma,
                p.sensitivity,
                match p.calibration {
                    Calibration::Classical => 0u8,
                    Calibration::Analytic => 1,
                },
            ),
            None => (0, f64::INFINITY, 0.0, 0.0, 0.0, 255),
        };
        w.write_all(&[flag])?;
        for v in [eps, delta, sigma, sens] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[cal])?;
        w.write_all(&(self.fingerprint.len() as u32).to_le_bytes())?;
        w.write_all(self.fingerprint.as_bytes())?;
        match &self.class_weights {
            None => w.write_all(&[0])?,
            Some(cw) => {
                w.write_all(&[match cw.normalization {
                    Normalization::Global => 0,
                    Normalization::PerClass => 1,
                }])?;
                if cw.normalization == Normalization::PerClass {
                    for c in &cw.counts {
                        w.write_all(&c.to_le_bytes())?;
                    }
                }
            }
        }
        for v in self.matrix.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        let meta = serde_json::to_vec(metadata)?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<(Self, serde_json::Value)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an embedding file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported embedding version {version}")));
        }
        let d = read_u64(&mut r)? as usize;
        let c = read_u64(&mut r)? as usize;
        let m = read_u64(&mut r)? as usize;
        let flag = read_u8(&mut r)?;
        let eps = read_f64(&mut r)?;
        let delta = read_f64(&mut r)?;
        let sigma = read_f64(&mut r)?;
        let sensitivity = read_f64(&mut r)?;
        let cal = read_u8(&mut r)?;
        let privacy = match flag {
            0 => None,
            1 => Some(PrivacyParams {
                epsilon: eps,
                delta,
                sigma,
                sensitivity,
                calibration: match cal {
                    0 => Calibration::Classical,
                    1 => Calibration::Analytic,
                    _ => return Err(Error::Format(format!("unknown calibration code {cal}"))),
                },
            }),
            _ => return Err(Error::Format(format!("bad privatized flag {flag}"))),
        };
        let flen = read_u32(&mut r)? as usize;
        if flen > 1024 {
            return Err(Error::Format("implausible fingerprint length".into()));
        }
        let mut fp = vec![0u8; flen];
        r.read_exact(&mut fp)?;
        let fingerprint =
            String::from_utf8(fp).map_err(|_| Error::Format("fingerprint is not UTF-8".into()))?;
        let class_weights = match read_u8(&mut r)? {
            0 => None,
            1 => {
                let counts = (0..c).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
                Some(ClassWeights {
                    counts,
                    normalization: Normalization::PerClass,
                })
            }
            n => return Err(Error::Format(format!("unknown normalization code {n}"))),
        };
        let mut bytes = vec![0u8; d * c * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let mlen = read_u64(&mut r)? as usize;
        let mut meta = vec![0u8; mlen];
        r.read_exact(&mut meta)?;
        let metadata = serde_json::from_slice(&meta)?;
        Ok((
            MeanEmbedding {
                matrix: Tensor::matrix(d, c, data)?,
                m,
                privacy,
                fingerprint,
                class_weights,
            },
            metadata,
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>, metadata: &serde_json::Value) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf, metadata)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&bytes[..])
    }
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// Neumaier-compensated running sums, one per entry.
struct CompensatedSum {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl CompensatedSum {
    fn new(n: usize) -> Self {
        CompensatedSum {
            sum: vec![0.0; n],
            comp: vec![0.0; n],
        }
    }

    fn add_at(&mut self, i: usize, v: f64) {
        let s = self.sum[i];
        let t = s + v;
        if s.abs() >= v.abs() {
            self.comp[i] += (s - t) + v;
        } else {
            self.comp[i] += (v - t) + s;
        }
        self.sum[i] = t;
    }

    fn finish(self) -> Vec<f64> {
        self.sum.iter().zip(&self.comp).map(|(s, c)| s + c).collect()
    }
}

/// Unnormalized class sums `Σ φ(x_i) y_iᵀ` (d×c, row-major) and class counts.
fn class_sums(map: &NtkFeatureMap, data: &LabeledDataset) -> Result<(Vec<f64>, Vec<usize>)> {
    if data.feature_dim() != map.input_dim() {
        return Err(Error::Shape(format!(
            "data has {} features, feature map expects {}",
            data.feature_dim(),
            map.input_dim()
        )));
    }
    let d = map.feature_dim();
    let c = data.num_classes();
    let mut acc = CompensatedSum::new(d * c);
    let mut counts = vec![0usize; c];
    for (i, k) in data.label_indices().into_iter().enumerate() {
        let phi = map.phi_row(data.features().row(i), i)?;
        for (j, v) in phi.into_iter().enumerate() {
            acc.add_at(j * c + k, v);
        }
        counts[k] += 1;
    }
    Ok((acc.finish(), counts))
}

/// `(1/m) Σ φ(x_i) y_iᵀ` over the whole dataset.
pub fn data_embedding(map: &NtkFeatureMap, data: &LabeledDataset) -> Result<MeanEmbedding> {
    if data.is_empty() {
        return Err(Error::Domain("cannot embed an empty dataset".into()));
    }
    let m = data.len();
    let (sums, _) = class_sums(map, data)?;
    let inv = 1.0 / m as f64;
    let matrix = Tensor::matrix(
        map.feature_dim(),
        data.num_classes(),
        sums.into_iter().map(|v| v * inv).collect(),
    )?;
    MeanEmbedding::from_parts(matrix, m, map.fingerprint())
}

/// Global sensitivity of the mean embedding under replace-one neighbors.
pub fn sensitivity(m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::Domain("sensitivity undefined for m = 0".into()));
    }
    Ok(2.0 / m as f64)
}

/// Release `emb` through the Gaussian mechanism, recording the release on `budget`.
pub fn privatize(
    emb: &MeanEmbedding,
    privacy: &PrivacyParams,
    rng: &mut Rng,
    log: &ReleaseLog,
    budget: &str,
) -> Result<MeanEmbedding> {
    if emb.is_privatized() {
        return Err(Error::Privacy("embedding is already privatized".into()));
    }
    if emb.normalization() != Normalization::Global {
        return Err(Error::Privacy(
            "per-class embeddings are released by imbalanced_embedding".into(),
        ));
    }
    let want = sensitivity(emb.m)?;
    if (privacy.sensitivity - want).abs() > 1e-12 * want {
        return Err(Error::Privacy(format!(
            "sensitivity {} does not match 2/m = {want}",
            privacy.sensitivity
        )));
    }
    log.record(budget, "mean embedding", *privacy)?;
    let matrix = crate::privacy::gaussian_mechanism(&emb.matrix, want, privacy.sigma, rng)?;
    Ok(MeanEmbedding {
        matrix,
        m: emb.m,
        privacy: Some(*privacy),
        fingerprint: emb.fingerprint.clone(),
        class_weights: None,
    })
}

/// Per-class mean embedding for imbalanced data, with its class counts.
///
/// Each column is averaged over its own class. The class sums (sensitivity 2)
/// and class counts (sensitivity √2) are released together as one Gaussian
/// mechanism on the concatenated statistic: with multiplier `σ` and split
/// `p`, counts get noise std `σ√2/√p` and sums `2σ/√(1-p)`, which keeps the
/// scaled concatenation at unit sensitivity. Classes whose noised count falls
/// below one are excluded (zero column, zero weight).
///
/// `privacy = None` skips the noise (non-private run).
pub fn imbalanced_embedding(
    map: &NtkFeatureMap,
    data: &LabeledDataset,
    privacy: Option<&PrivacyParams>,
    privacy_split: f64,
    rng: &mut Rng,
    log: &ReleaseLog,
    budget: &str,
) -> Result<(MeanEmbedding, ClassWeights)> {
    if !(privacy_split > 0.0 && privacy_split < 1.0) {
        return Err(Error::Domain(format!(
            "privacy split must lie in (0, 1), got {privacy_split}"
        )));
    }
    if data.is_empty() {
        return Err(Error::Domain("cannot embed an empty dataset".into()));
    }
    let d = map.feature_dim();
    let c = data.num_classes();
    let (mut sums, counts) = class_sums(map, data)?;
    let mut counts: Vec<f64> = counts.into_iter().map(|n| n as f64).collect();

    let released = match privacy {
        Some(p) => {
            let (sum_std, count_std) = imbalanced_noise_stds(p.sigma, privacy_split);
            let params = p.with_sensitivity(IMBALANCED_SENSITIVITY);
            log.record(budget, "per-class embedding and class counts", params)?;
            for v in &mut counts {
                *v += count_std * rng.standard_normal();
            }
            for v in &mut sums {
                *v += sum_std * rng.standard_normal();
            }
            Some(params)
        }
        None => None,
    };

    let mut weights = Vec::with_capacity(c);
    for (k, &n) in counts.iter().enumerate() {
        if n < 1.0 {
            warn!("class {k} has noised count {n:.3}; excluded from generation");
            weights.push(0.0);
        } else {
            weights.push(n);
        }
    }
    for j in 0..d {
        for k in 0..c {
            let w = weights[k];
            sums[j * c + k] = if w > 0.0 { sums[j * c + k] / w } else { 0.0 };
        }
    }
    let class_weights = ClassWeights {
        counts: weights,
        normalization: Normalization::PerClass,
    };
    let emb = MeanEmbedding {
        matrix: Tensor::matrix(d, c, sums)?,
        m: data.len(),
        privacy: released,
        fingerprint: map.fingerprint(),
        class_weights: Some(class_weights.clone()),
    };
    Ok((emb, class_weights))
}

/// Sensitivity of the concatenated (class sums, class counts) statistic: √(2² + √2²).
pub const IMBALANCED_SENSITIVITY: f64 = 2.449_489_742_783_178;

/// Noise stds `(sums, counts)` for the per-class release.
pub fn imbalanced_noise_stds(sigma: f64, privacy_split: f64) -> (f64, f64) {
    (
        sigma * 2.0 / (1.0 - privacy_split).sqrt(),
        sigma * std::f64::consts::SQRT_2 / privacy_split.sqrt(),
    )
}

/// Generator-side embedding recorded on a tape.
pub struct TapeEmbedding<'t> {
    /// `d×c`
    pub matrix: Var<'t>,
    pub fingerprint: String,
    pub degenerate_rows: usize,
}

/// `Σ_i w_i φ(x_i) y_iᵀ` for a generated batch, differentiable in `x`.
///
/// With global normalization `w_i = 1/n`; per-class uses `1/n_k` for the
/// batch count `n_k` of the row's class. Degenerate rows contribute zero.
pub fn generated_embedding<'t>(
    map: &NtkFeatureMap,
    tape: &'t Tape,
    x: Var<'t>,
    labels: &[usize],
    classes: usize,
    normalization: Normalization,
) -> Result<TapeEmbedding<'t>> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Domain("generated batch is empty".into()));
    }
    if x.shape().first() != Some(&n) {
        return Err(Error::Shape(format!(
            "batch has shape {:?} but {n} labels",
            x.shape()
        )));
    }
    if let Some(&k) = labels.iter().find(|&&k| k >= classes) {
        return Err(Error::Shape(format!("label {k} out of {classes} classes")));
    }
    let feats = map.features_on_tape(tape, x)?;
    if !feats.degenerate_rows().is_empty() {
        warn!(
            "{} generated rows have degenerate features; using zero features",
            feats.degenerate_rows().len()
        );
    }
    let mut cols = Vec::with_capacity(classes);
    for k in 0..classes {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == k).collect();
        let w = match normalization {
            Normalization::Global => 1.0 / n as f64,
            Normalization::PerClass => 1.0 / rows.len().max(1) as f64,
        };
        cols.push(feats.weighted_sum(&rows, &vec![w; rows.len()])?);
    }
    Ok(TapeEmbedding {
        matrix: tape.stack_cols(&cols)?,
        fingerprint: map.fingerprint(),
        degenerate_rows: feats.degenerate_rows().len(),
    })
}

/// `‖target − generated‖²_F`, differentiable through the generated side.
pub fn mmd_loss<'t>(
    tape: &'t Tape,
    target: &MeanEmbedding,
    generated: &TapeEmbedding<'t>,
) -> Result<Var<'t>> {
    if target.fingerprint != generated.fingerprint {
        return Err(Error::Fingerprint {
            expected: target.fingerprint.clone(),
            found: generated.fingerprint.clone(),
        });
    }
    let shape = generated.matrix.shape();
    if shape != target.matrix.shape() {
        return Err(Error::Shape(format!(
            "embedding shapes disagree: {:?} vs {:?}",
            target.matrix.shape(),
            shape
        )));
    }
    let t = tape.constant(target.matrix.clone());
    Ok(t.sub(generated.matrix)?.frobenius_sq())
}

/// Value of the squared MMD between two stored embeddings.
pub fn mmd_sq(a: &MeanEmbedding, b: &MeanEmbedding) -> Result<f64> {
    if a.fingerprint != b.fingerprint {
        return Err(Error::Fingerprint {
            expected: a.fingerprint.clone(),
            found: b.fingerprint.clone(),
        });
    }
    Ok(a.matrix.sub(&b.matrix)?.frobenius_sq())
}
