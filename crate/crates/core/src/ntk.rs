//! Normalized empirical-NTK features of a small fully-connected network.
//!
//! For a network `f_θ` whose outputs are summed into one scalar, the feature
//! of an input `x` is the flattened parameter gradient `∇_θ f_θ(x)` divided
//! by its Euclidean norm. The gradient is evaluated in closed form, so the
//! features are ordinary functions of `x` and can be recorded on a [`Tape`]
//! when the inputs come from a generator.
//!
//! Flatten order is fixed: for each hidden layer its weight matrix
//! (row-major, `out×in`) then its bias, followed by the output head weights
//! (`c_out×w`) and output bias.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

/// Raw gradient norms below this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

const MAGIC: &[u8; 8] = b"DPNTKMAP";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    /// Identity; only useful for sanity checks.
    Linear,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
        }
    }

    /// Derivative, with the relu subgradient at 0 taken as 0.
    pub fn deriv(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Linear => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Linear),
            _ => Err(Error::Format(format!("unknown activation code {c}"))),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            _ => Err(Error::Domain(format!("unknown activation {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArchKind {
    #[serde(rename = "fc_1l")]
    Fc1l,
    #[serde(rename = "fc_2l")]
    Fc2l,
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Fc1l => "fc_1l",
            ArchKind::Fc2l => "fc_2l",
        })
    }
}

impl std::str::FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc_1l" => Ok(ArchKind::Fc1l),
            "fc_2l" => Ok(ArchKind::Fc2l),
            _ => Err(Error::Domain(format!("unknown architecture {s:?}"))),
        }
    }
}

/// Shape of the feature network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NtkArchitecture {
    pub kind: ArchKind,
    pub input_dim: usize,
    /// One width for `fc_1l`, two for `fc_2l`.
    pub widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl NtkArchitecture {
    pub fn fc_1l(input_dim: usize, width: usize, output_dim: usize, activation: Activation) -> Self {
        NtkArchitecture {
            kind: ArchKind::Fc1l,
            input_dim,
            widths: vec![width],
            output_dim,
            activation,
        }
    }

    pub fn fc_2l(
        input_dim: usize,
        widths: (usize, usize),
        output_dim: usize,
        activation: Activation,
    ) -> Self {
        NtkArchitecture {
            kind: ArchKind::Fc2l,
            input_dim,
            widths: vec![widths.0, widths.1],
            output_dim,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let want = match self.kind {
            ArchKind::Fc1l => 1,
            ArchKind::Fc2l => 2,
        };
        if self.widths.len() != want {
            return Err(Error::Domain(format!(
                "{} needs {want} hidden widths, got {:?}",
                self.kind, self.widths
            )));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.widths.contains(&0) {
            return Err(Error::Domain(format!("all dimensions must be ≥ 1: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, head last.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.widths.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in &self.widths {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    /// Total parameter count, which is the feature dimension.
    pub fn feature_dim(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(fan_in, fan_out)| (fan_in + 1) * fan_out)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    /// out×in
    weight: Tensor,
    bias: Vec<f64>,
}

impl Dense {
    fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n = self.fan_in();
        self.bias
            .iter()
            .enumerate()
            .map(|(j, b)| {
                b + self.weight.data()[j * n..(j + 1) * n]
                    .iter()
                    .zip(x)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
            })
            .collect()
    }
}

/// Frozen feature network. Parameters never change after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct NtkFeatureMap {
    arch: NtkArchitecture,
    seed: u64,
    hidden: Vec<Dense>,
    head: Dense,
    /// Column sums of the head weights: ∂f/∂(last activation).
    head_colsum: Vec<f64>,
}

impl NtkFeatureMap {
    /// Draw every parameter i.i.d. N(0, 1/fan_in) from `seed`.
    pub fn init(arch: NtkArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = Rng::new(seed);
        let mut theta = Vec::with_capacity(arch.feature_dim());
        for (fan_in, fan_out) in arch.layer_dims() {
            let std = (1.0 / fan_in as f64).sqrt();
            for _ in 0..(fan_in + 1) * fan_out {
                theta.push(std * rng.standard_normal());
            }
        }
        Self::from_parameters(arch, seed, &theta)
    }

    /// Build from an explicit flat parameter vector in flatten order.
    pub fn from_parameters(arch: NtkArchitecture, seed: u64, theta: &[f64]) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.feature_dim() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                arch.feature_dim(),
                theta.len()
            )));
        }
        let mut off = 0;
        let mut layers = Vec::new();
        for (fan_in, fan_out) in arch.layer_dims() {
            let w = theta[off..off + fan_in * fan_out].to_vec();
            off += fan_in * fan_out;
            let b = theta[off..off + fan_out].to_vec();
            off += fan_out;
            layers.push(Dense {
                weight: Tensor::matrix(fan_out, fan_in, w)?,
                bias: b,
            });
        }
        let head = layers.pop().expect("head layer");
        let w = head.fan_in();
        let mut head_colsum = vec![0.0; w];
        for row in head.weight.data().chunks(w) {
            for (s, v) in head_colsum.iter_mut().zip(row) {
                *s += v;
            }
        }
        Ok(NtkFeatureMap {
            arch,
            seed,
            hidden: layers,
            head,
            head_colsum,
        })
    }

    pub fn architecture(&self) -> &NtkArchitecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim()
    }

    /// Flat parameter vector in flatten order.
    pub fn parameters(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.feature_dim());
        for layer in self.hidden.iter().chain(std::iter::once(&self.head)) {
            theta.extend_from_slice(layer.weight.data());
            theta.extend_from_slice(&layer.bias);
        }
        theta
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    /// Pre-activations and activations of every hidden layer.
    fn hidden_forward(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let act = self.arch.activation;
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut acts = Vec::with_capacity(self.hidden.len());
        let mut a = x.to_vec();
        for layer in &self.hidden {
            let h = layer.forward(&a);
            a = h.iter().map(|&v| act.apply(v)).collect();
            pre.push(h);
            acts.push(a.clone());
        }
        (pre, acts)
    }

    /// Sum of the network's outputs at `x`.
    pub fn sum_logits(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let (_, acts) = self.hidden_forward(x);
        Ok(self.head.forward(acts.last().expect("≥1 hidden layer")).iter().sum())
    }

    /// `∇_θ` of [`sum_logits`](Self::sum_logits), flattened.
    pub fn raw_grad_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let act = self.arch.activation;
        let (pre, acts) = self.hidden_forward(x);
        let depth = self.hidden.len();

        // deltas[l] = ∂f/∂h_l
        let mut deltas = vec![Vec::new(); depth];
        let mut upstream = self.head_colsum.clone();
        for l in (0..depth).rev() {
            let d: Vec<f64> = pre[l]
                .iter()
                .zip(&upstream)
                .map(|(&h, &u)| act.deriv(h) * u)
                .collect();
            if l > 0 {
                let w = &self.hidden[l].weight;
                let fan_in = w.cols();
                let mut next = vec![0.0; fan_in];
                for (j, dj) in d.iter().enumerate() {
                    for (k, nk) in next.iter_mut().enumerate() {
                        *nk += dj * w.data()[j * fan_in + k];
                    }
                }
                upstream = next;
            }
            deltas[l] = d;
        }

        let mut out = Vec::with_capacity(self.feature_dim());
        for l in 0..depth {
            let input = if l == 0 { x } else { &acts[l - 1][..] };
            for &dj in &deltas[l] {
                out.extend(input.iter().map(|&v| dj * v));
            }
            out.extend_from_slice(&deltas[l]);
        }
        let last = acts.last().expect("≥1 hidden layer");
        for _ in 0..self.arch.output_dim {
            out.extend_from_slice(last);
        }
        out.extend(std::iter::repeat_n(1.0, self.arch.output_dim));
        Ok(out)
    }

    /// Unit-norm feature `φ(x)`. Fails when the raw gradient vanishes.
    pub fn phi(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.phi_row(x, 0)
    }

    pub(crate) fn phi_row(&self, x: &[f64], row: usize) -> Result<Vec<f64>> {
        normalize_raw(self.raw_grad_features(x)?, row)
    }

    /// Record the features of every row of `x` (n×p) on `tape` in factored form.
    pub fn features_on_tape<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<TapeFeatures<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "batch has shape {shape:?}, network expects n×{}",
                self.arch.input_dim
            )));
        }
        let n = shape[0];
        let act = self.arch.activation;

        let mut inputs = vec![x];
        let mut derivs = Vec::new();
        let mut a = x;
        for layer in &self.hidden {
            let wt = tape.constant(layer.weight.transpose()?);
            let b = tape.constant(Tensor::row_vector(layer.bias.clone()));
            let h = a.matmul(wt)?.add(b.expand_rows(n)?)?;
            let (next, d) = match act {
                Activation::Relu => (h.relu(), h.relu_mask()),
                Activation::Tanh => (h.tanh(), h.tanh_deriv()),
                Activation::Linear => (h, tape.constant(Tensor::ones(&h.shape()))),
            };
            derivs.push(d);
            inputs.push(next);
            a = next;
        }
        let last = inputs.pop().expect("≥1 hidden layer");

        let depth = self.hidden.len();
        let mut deltas: Vec<Option<Var<'t>>> = vec![None; depth];
        let s = tape.constant(Tensor::row_vector(self.head_colsum.clone()));
        let mut upstream = s.expand_rows(n)?;
        for l in (0..depth).rev() {
            let d = derivs[l].mul(upstream)?;
            if l > 0 {
                upstream = d.matmul(tape.constant(self.hidden[l].weight.clone()))?;
            }
            deltas[l] = Some(d);
        }
        let deltas: Vec<Var<'t>> = deltas.into_iter().map(|d| d.expect("filled")).collect();

        // ‖raw‖² = Σ_l ‖δ_l‖²(‖a_{l-1}‖² + 1) + c_out(‖a_L‖² + 1)
        let c_out = self.arch.output_dim as f64;
        let mut norm_sq = last.square().row_sums().shift(1.0).scale(c_out);
        for (d, inp) in deltas.iter().zip(&inputs) {
            let term = d.square().row_sums().mul(inp.square().row_sums().shift(1.0))?;
            norm_sq = norm_sq.add(term)?;
        }
        let norms: Vec<f64> = norm_sq.value().data().iter().map(|v| v.sqrt()).collect();
        let degenerate: Vec<usize> = norms
            .iter()
            .enumerate()
            .filter(|(_, &v)| !(v >= DEGENERATE_NORM))
            .map(|(i, _)| i)
            .collect();
        let inv_norm = if degenerate.is_empty() {
            norm_sq.sqrt().recip()
        } else {
            let mut keep = vec![1.0; n];
            for &i in &degenerate {
                keep[i] = 0.0;
            }
            let keep = tape.constant(Tensor::col_vector(keep));
            let pad = tape.constant(Tensor::col_vector(keep_pad(&degenerate, n)));
            keep.div(norm_sq.add(pad)?.sqrt())?
        };

        Ok(TapeFeatures {
            tape,
            inputs,
            deltas,
            last,
            inv_norm,
            output_dim: self.arch.output_dim,
            degenerate,
        })
    }

    /// Binary serialization: header (arch kind, dims, activation, seed) then θ.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[
            match self.arch.kind {
                ArchKind::Fc1l => 1,
                ArchKind::Fc2l => 2,
            },
            self.arch.activation.code(),
        ])?;
        w.write_all(&(self.arch.input_dim as u64).to_le_bytes())?;
        w.write_all(&(self.arch.widths.len() as u32).to_le_bytes())?;
        for &wd in &self.arch.widths {
            w.write_all(&(wd as u64).to_le_bytes())?;
        }
        w.write_all(&(self.arch.output_dim as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        let theta = self.parameters();
        w.write_all(&(theta.len() as u64).to_le_bytes())?;
        for v in theta {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a feature map file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported feature map version {version}")));
        }
        let mut codes = [0u8; 2];
        r.read_exact(&mut codes)?;
        let kind = match codes[0] {
            1 => ArchKind::Fc1l,
            2 => ArchKind::Fc2l,
            c => return Err(Error::Format(format!("unknown architecture code {c}"))),
        };
        let activation = Activation::from_code(codes[1])?;
        let input_dim = read_u64(&mut r)? as usize;
        let n_widths = read_u32(&mut r)? as usize;
        if n_widths > 16 {
            return Err(Error::Format(format!("implausible layer count {n_widths}")));
        }
        let widths = (0..n_widths)
            .map(|_| read_u64(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let output_dim = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let arch = NtkArchitecture {
            kind,
            input_dim,
            widths,
            output_dim,
            activation,
        };
        arch.validate()?;
        let d = read_u64(&mut r)? as usize;
        if d != arch.feature_dim() {
            return Err(Error::Format(format!(
                "parameter count {d} disagrees with architecture ({})",
                arch.feature_dim()
            )));
        }
        let mut bytes = vec![0u8; d * 8];
        r.read_exact(&mut bytes)?;
        let theta: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_parameters(arch, seed, &theta)
    }

    /// SHA-256 of the serialized map, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

/// Divide a raw gradient by its norm. The output-bias entries are all ones,
/// so this only fails for heads without a bias or non-finite inputs.
fn normalize_raw(mut g: Vec<f64>, row: usize) -> Result<Vec<f64>> {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm >= DEGENERATE_NORM) {
        return Err(Error::DegenerateFeature { row, norm });
    }
    for v in &mut g {
        *v /= norm;
    }
    Ok(g)
}

fn keep_pad(degenerate: &[usize], n: usize) -> Vec<f64> {
    let mut pad = vec![0.0; n];
    for &i in degenerate {
        pad[i] = 1.0;
    }
    pad
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

/// Normalized features of a batch, kept as per-layer factors.
///
/// The raw gradient of row `i` is the concatenation over hidden layers of
/// `δ_l[i] ⊗ a_{l-1}[i]` and `δ_l[i]`, then `c_out` copies of `a_L[i]` and
/// `c_out` ones. Materializing the `n×d` feature matrix is never needed:
/// weighted sums over rows reduce to small matrix products.
pub struct TapeFeatures<'t> {
    tape: &'t Tape,
    /// Layer inputs `a_0 = x, a_1, …, a_{L-1}`.
    inputs: Vec<Var<'t>>,
    /// `δ_l = ∂f/∂h_l`, one per hidden layer.
    deltas: Vec<Var<'t>>,
    /// Last hidden activation `a_L`.
    last: Var<'t>,
    /// `1/‖raw_i‖` as an n×1 column (0 for degenerate rows).
    inv_norm: Var<'t>,
    output_dim: usize,
    degenerate: Vec<usize>,
}

impl<'t> TapeFeatures<'t> {
    /// Rows whose raw gradient vanished; they contribute a zero feature.
    pub fn degenerate_rows(&self) -> &[usize] {
        &self.degenerate
    }

    pub fn inv_norm(&self) -> Var<'t> {
        self.inv_norm
    }

    /// `Σ_k weights[k] · φ(x_{rows[k]})` as a `1×d` row.
    pub fn weighted_sum(&self, rows: &[usize], weights: &[f64]) -> Result<Var<'t>> {
        if rows.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} weights",
                rows.len(),
                weights.len()
            )));
        }
        let tape = self.tape;
        if rows.is_empty() {
            let d = self.feature_dim();
            return Ok(tape.constant(Tensor::zeros(&[1, d])));
        }
        let w = tape.constant(Tensor::col_vector(weights.to_vec()));
        let u = self.inv_norm.gather_rows(rows)?.mul(w)?;
        let mut parts = Vec::with_capacity(2 * self.deltas.len() + 2);
        for (delta, input) in self.deltas.iter().zip(&self.inputs) {
            let d = delta.gather_rows(rows)?;
            let a = input.gather_rows(rows)?;
            let fan_in = a.shape()[1];
            let weighted = a.mul(u.expand_cols(fan_in)?)?;
            parts.push(d.t()?.matmul(weighted)?);
            parts.push(d.t()?.matmul(u)?);
        }
        let last = self.last.gather_rows(rows)?;
        let head = u.t()?.matmul(last)?.expand_rows(self.output_dim)?;
        parts.push(head);
        let bias = u.sum().reshape(&[1, 1])?.expand_rows(self.output_dim)?;
        parts.push(bias);
        tape.concat(&parts)
    }

    fn feature_dim(&self) -> usize {
        let mut d = 0;
        for (delta, input) in self.deltas.iter().zip(&self.inputs) {
            let out = delta.shape()[1];
            d += out * (input.shape()[1] + 1);
        }
        d + self.output_dim * (self.last.shape()[1] + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_tanh() -> NtkFeatureMap {
        NtkFeatureMap::init(NtkArchitecture::fc_1l(3, 4, 2, Activation::Tanh), 1).unwrap()
    }

    #[test]
    fn parameter_count_formula() {
        let a = NtkArchitecture::fc_1l(784, 800, 10, Activation::Relu);
        assert_eq!(a.feature_dim(), 800 * (784 + 1) + 10 * (800 + 1));
        assert_eq!(a.feature_dim(), 636_010);
        assert_eq!(
            NtkArchitecture::fc_1l(1, 1, 1, Activation::Relu).feature_dim(),
            4
        );
        let b = NtkArchitecture::fc_2l(5, (3, 2), 4, Activation::Relu);
        assert_eq!(b.feature_dim(), 3 * 6 + 2 * 4 + 4 * 3);
    }

    #[test]
    fn init_counts_match_by_enumeration() {
        let arch = NtkArchitecture::fc_2l(4, (3, 5), 2, Activation::Tanh);
        let m = NtkFeatureMap::init(arch.clone(), 0).unwrap();
        let mut count = 0;
        for layer in m.hidden.iter().chain([&m.head]) {
            for _ in layer.weight.data() {
                count += 1;
            }
            for _ in &layer.bias {
                count += 1;
            }
        }
        assert_eq!(count, arch.feature_dim());
        assert_eq!(m.parameters().len(), count);
        assert_eq!(m.raw_grad_features(&[0.1; 4]).unwrap().len(), count);
    }

    #[test]
    fn invalid_architectures() {
        assert!(NtkArchitecture::fc_1l(0, 3, 1, Activation::Relu).validate().is_err());
        let mut a = NtkArchitecture::fc_1l(2, 3, 1, Activation::Relu);
        a.widths.push(4);
        assert!(a.validate().is_err());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let arch = NtkArchitecture::fc_1l(6, 5, 3, Activation::Relu);
        let a = NtkFeatureMap::init(arch.clone(), 9).unwrap();
        assert_eq!(a, NtkFeatureMap::init(arch.clone(), 9).unwrap());
        assert_ne!(a.parameters(), NtkFeatureMap::init(arch, 10).unwrap().parameters());
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let arch = NtkArchitecture::fc_1l(3, 4, 2, Activation::Tanh);
        let m = NtkFeatureMap::from_parameters(arch.clone(), 0, &vec![0.0; arch.feature_dim()])
            .unwrap();
        assert_eq!(m.sum_logits(&[1.0, -2.0, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn sum_logits_matches_hand_forward() {
        // p=2, w=2, c_out=2, tanh
        let theta = [
            0.5, -1.0, 0.25, 0.75, // W
            0.1, -0.2, // b
            1.0, 2.0, -0.5, 0.3, // V
            0.05, -0.07, // c
        ];
        let arch = NtkArchitecture::fc_1l(2, 2, 2, Activation::Tanh);
        let m = NtkFeatureMap::from_parameters(arch, 0, &theta).unwrap();
        let x = [0.3, -0.4];
        let h0 = (0.5f64 * 0.3 - 1.0 * -0.4 + 0.1).tanh();
        let h1 = (0.25f64 * 0.3 + 0.75 * -0.4 - 0.2).tanh();
        let expect = (1.0 * h0 + 2.0 * h1 + 0.05) + (-0.5 * h0 + 0.3 * h1 - 0.07);
        assert!((m.sum_logits(&x).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn linear_activation_gives_affine_logits() {
        let arch = NtkArchitecture::fc_2l(3, (4, 3), 2, Activation::Linear);
        let m = NtkFeatureMap::init(arch, 4).unwrap();
        let f = |x: &[f64]| m.sum_logits(x).unwrap();
        let (a, b) = ([1.0, -2.0, 0.5], [0.3, 0.1, -1.0]);
        let zero = f(&[0.0; 3]);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        let lin = 2.0 * (f(&a) - zero) - 3.0 * (f(&b) - zero) + zero;
        assert!((f(&mix) - lin).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let m = tiny_tanh();
        assert!(m.sum_logits(&[1.0]).is_err());
        assert!(m.raw_grad_features(&[1.0; 4]).is_err());
    }

    #[test]
    fn relu_at_origin_with_zero_bias_has_zero_weight_grads() {
        let arch = NtkArchitecture::fc_1l(3, 4, 2, Activation::Relu);
        let mut theta = NtkFeatureMap::init(arch.clone(), 2).unwrap().parameters();
        for b in &mut theta[12..16] {
            *b = 0.0;
        }
        let m = NtkFeatureMap::from_parameters(arch, 2, &theta).unwrap();
        let g = m.raw_grad_features(&[0.0; 3]).unwrap();
        assert!(g[..12].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phi_is_unit_norm_and_scale_free() {
        let m = NtkFeatureMap::init(NtkArchitecture::fc_2l(4, (6, 5), 3, Activation::Relu), 3)
            .unwrap();
        let x = [0.2, -1.0, 0.7, 0.1];
        let phi = m.phi(&x).unwrap();
        let n: f64 = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);

        let raw = m.raw_grad_features(&x).unwrap();
        let scaled: Vec<f64> = raw.iter().map(|v| 3.0 * v).collect();
        let norm = scaled.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (a, b) in phi.iter().zip(&scaled) {
            assert!((a - b / norm).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_feature_is_reported() {
        let err = normalize_raw(vec![0.0; 5], 3).unwrap_err();
        assert!(matches!(err, Error::DegenerateFeature { row: 3, .. }));
        assert!(normalize_raw(vec![f64::NAN; 2], 0).is_err());
        // the output-bias block keeps the raw norm ≥ √c_out
        let m = NtkFeatureMap::init(NtkArchitecture::fc_1l(2, 2, 4, Activation::Relu), 0).unwrap();
        let raw = m.raw_grad_features(&[0.0, 0.0]).unwrap();
        assert!(raw.iter().map(|v| v * v).sum::<f64>() >= 4.0);
    }

    #[test]
    fn serialization_round_trip_and_fingerprint() {
        let m = NtkFeatureMap::init(NtkArchitecture::fc_2l(3, (4, 2), 2, Activation::Tanh), 8)
            .unwrap();
        let bytes = m.to_bytes();
        let back = NtkFeatureMap::read_from(&bytes[..]).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.fingerprint(), m.fingerprint());
        let other = NtkFeatureMap::init(m.architecture().clone(), 9).unwrap();
        assert_ne!(other.fingerprint(), m.fingerprint());
        assert!(NtkFeatureMap::read_from(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn tape_features_match_closed_form() {
        let mut rng = Rng::new(4);
        for arch in [
            NtkArchitecture::fc_1l(3, 5, 2, Activation::Tanh),
            NtkArchitecture::fc_2l(3, (4, 3), 2, Activation::Relu),
        ] {
            let m = NtkFeatureMap::init(arch, 5).unwrap();
            let x = rng.gaussian_tensor(&[4, 3]);
            let tape = Tape::new();
            let feats = m.features_on_tape(&tape, tape.constant(x.clone())).unwrap();
            for i in 0..4 {
                let row = feats.weighted_sum(&[i], &[1.0]).unwrap().value();
                let phi = m.phi(x.row(i)).unwrap();
                for (a, b) in row.data().iter().zip(&phi) {
                    assert!((a - b).abs() < 1e-13);
                }
            }
        }
    }
}
