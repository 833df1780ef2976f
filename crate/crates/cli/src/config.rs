//! Run configuration, read from TOML with the hyperparameter column names
//! `iter`, `d_code`, `ntk_width`, `batch`, `lr`, `eps`, `architecture`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dpntk_core::eval::ClassifierKind;
use dpntk_core::ntk::{Activation, ArchKind, NtkArchitecture};
use dpntk_core::privacy::{Calibration, DEFAULT_DELTA};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::CliError;

/// Privacy level: a finite ε, or `none` for a non-private run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Epsilon {
    Finite(f64),
    None,
}

impl Epsilon {
    pub fn value(self) -> Option<f64> {
        match self {
            Epsilon::Finite(e) => Some(e),
            Epsilon::None => None,
        }
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epsilon::Finite(e) => write!(f, "{e}"),
            Epsilon::None => f.write_str("none"),
        }
    }
}

impl FromStr for Epsilon {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("none") || t.eq_ignore_ascii_case("inf") {
            return Ok(Epsilon::None);
        }
        t.parse()
            .map(Epsilon::Finite)
            .map_err(|_| CliError::Validation(format!("eps must be a number or \"none\", got {s:?}")))
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NumOrText {
    Int(u64),
    Num(f64),
    Text(String),
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Epsilon::Finite(e) => s.serialize_f64(*e),
            Epsilon::None => s.serialize_str("none"),
        }
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match NumOrText::deserialize(d)? {
            NumOrText::Int(v) => Ok(Epsilon::Finite(v as f64)),
            NumOrText::Num(v) => Ok(Epsilon::Finite(v)),
            NumOrText::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Hidden widths of the feature network, written `w` or `w1_w2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NtkWidth(pub Vec<usize>);

impl fmt::Display for NtkWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join("_"))
    }
}

impl FromStr for NtkWidth {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let widths = s
            .split('_')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| CliError::Validation(format!("ntk_width must look like 800 or 30_200, got {s:?}")))?;
        Ok(NtkWidth(widths))
    }
}

impl Serialize for NtkWidth {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for NtkWidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match NumOrText::deserialize(d)? {
            NumOrText::Int(v) => Ok(NtkWidth(vec![v as usize])),
            NumOrText::Num(v) => Err(serde::de::Error::custom(format!("ntk_width {v} is not an integer"))),
            NumOrText::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImbalanceMode {
    /// One embedding normalized by the total count.
    #[default]
    Global,
    /// Per-class averages released together with noised class counts.
    PerClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_classifiers")]
    pub classifiers: Vec<ClassifierKind>,
    #[serde(default = "default_logreg_iter")]
    pub logreg_iter: usize,
    #[serde(default = "default_mlp_iter")]
    pub mlp_iter: usize,
    #[serde(default = "default_mlp_hidden")]
    pub mlp_hidden: usize,
    #[serde(default = "default_eval_lr")]
    pub lr: f64,
    #[serde(default = "default_l2")]
    pub l2: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            classifiers: default_classifiers(),
            logreg_iter: default_logreg_iter(),
            mlp_iter: default_mlp_iter(),
            mlp_hidden: default_mlp_hidden(),
            lr: default_eval_lr(),
            l2: default_l2(),
        }
    }
}

fn default_classifiers() -> Vec<ClassifierKind> {
    vec![ClassifierKind::LogisticRegression, ClassifierKind::Mlp]
}
fn default_logreg_iter() -> usize {
    300
}
fn default_mlp_iter() -> usize {
    300
}
fn default_mlp_hidden() -> usize {
    100
}
fn default_eval_lr() -> f64 {
    0.05
}
fn default_l2() -> f64 {
    1e-4
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_calibration() -> Calibration {
    Calibration::Analytic
}
fn default_activation() -> Activation {
    Activation::Relu
}
fn default_count_budget() -> f64 {
    0.1
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}
fn default_gen_hidden() -> Vec<usize> {
    vec![200, 200]
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_log_every() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// CSV (with `schema`) or raster image file. Relative paths resolve
    /// against the directory of the config file.
    pub dataset: PathBuf,
    /// Schema spec for CSV datasets; absent for image datasets.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    pub architecture: ArchKind,
    pub ntk_width: NtkWidth,
    #[serde(default = "default_activation")]
    pub ntk_activation: Activation,
    pub d_code: usize,
    pub iter: usize,
    pub batch: usize,
    pub lr: f64,
    pub eps: Epsilon,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_calibration")]
    pub calibration: Calibration,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub imbalance_mode: ImbalanceMode,
    /// Share of the privacy budget spent on class counts in `per_class` mode.
    #[serde(default = "default_count_budget")]
    pub count_budget: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_true")]
    pub stratified: bool,
    #[serde(default = "default_gen_hidden")]
    pub gen_hidden: Vec<usize>,
    #[serde(default = "default_true")]
    pub gen_batch_norm: bool,
    /// Synthetic points to generate; defaults to the training-set size.
    #[serde(default)]
    pub n_synthetic: Option<usize>,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub eps: Option<Epsilon>,
    pub seed: Option<u64>,
    pub iter: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub d_code: Option<usize>,
    pub ntk_width: Option<NtkWidth>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    /// Read, resolve relative paths against the file's directory, and validate.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset = resolve(base, &cfg.dataset);
        cfg.schema = cfg.schema.as_deref().map(|s| resolve(base, s));
        cfg.out_dir = resolve(base, &cfg.out_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.dataset {
            self.dataset = v.clone();
        }
        if let Some(v) = o.eps {
            self.eps = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.iter {
            self.iter = v;
        }
        if let Some(v) = o.batch {
            self.batch = v;
        }
        if let Some(v) = o.lr {
            self.lr = v;
        }
        if let Some(v) = o.d_code {
            self.d_code = v;
        }
        if let Some(v) = &o.ntk_width {
            self.ntk_width = v.clone();
        }
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
    }

    /// Check every field; nothing is computed before this passes.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Validation(msg));
        let layers = match self.architecture {
            ArchKind::Fc1l => 1,
            ArchKind::Fc2l => 2,
        };
        if self.ntk_width.0.len() != layers {
            return bad(format!(
                "ntk_width {} does not fit architecture {}",
                self.ntk_width, self.architecture
            ));
        }
        if self.ntk_width.0.contains(&0) {
            return bad("ntk_width entries must be positive".into());
        }
        if self.d_code == 0 {
            return bad("d_code must be ≥ 1".into());
        }
        if self.iter == 0 {
            return bad("iter must be ≥ 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be ≥ 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if let Epsilon::Finite(e) = self.eps {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("eps must be positive, got {e}"));
            }
            if self.calibration == Calibration::Classical && e > 1.0 {
                return bad(format!("classical calibration requires eps ≤ 1, got {e}"));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.count_budget > 0.0 && self.count_budget < 1.0) {
            return bad(format!("count_budget must lie in (0, 1), got {}", self.count_budget));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction));
        }
        if self.gen_hidden.contains(&0) {
            return bad("gen_hidden entries must be positive".into());
        }
        if self.n_synthetic == Some(0) {
            return bad("n_synthetic must be ≥ 1".into());
        }
        if self.eval.classifiers.is_empty() {
            return bad("eval.classifiers must not be empty".into());
        }
        if self.eval.mlp_hidden == 0 || !(self.eval.lr > 0.0) || !(self.eval.l2 >= 0.0) {
            return bad("eval settings need mlp_hidden ≥ 1, lr > 0, l2 ≥ 0".into());
        }
        Ok(())
    }

    pub fn architecture_for(&self, input_dim: usize, classes: usize) -> NtkArchitecture {
        let w = &self.ntk_width.0;
        match self.architecture {
            ArchKind::Fc1l => NtkArchitecture::fc_1l(input_dim, w[0], classes, self.ntk_activation),
            ArchKind::Fc2l => {
                NtkArchitecture::fc_2l(input_dim, (w[0], w[1]), classes, self.ntk_activation)
            }
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
