//! The pipeline stages. Only `embed` reads the raw dataset; every later
//! stage works from files written under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use dpntk_core::data::{
    load_csv, load_csv_with_schema, load_images, split, Domain, Impute, LabeledDataset, Schema,
    SchemaSpec,
};
use dpntk_core::embedding::{
    data_embedding, imbalanced_embedding, privatize, sensitivity, MeanEmbedding,
    IMBALANCED_SENSITIVITY,
};
use dpntk_core::eval::{synth_to_real_eval, ClassifierConfig, EvalConfig, EvalReport};
use dpntk_core::generator::{
    sample_dataset, train, write_loss_trace, AdamConfig, Checkpoint, GeneratorModel, TrainConfig,
};
use dpntk_core::ntk::{Activation, NtkFeatureMap};
use dpntk_core::privacy::{PrivacyParams, ReleaseLog};
use dpntk_core::Rng;

use crate::artifacts::{sample_grid_pgm, write_manifest};
use crate::config::{EvalSection, ImbalanceMode, RunConfig};
use crate::{require_file, CliError, Context};

pub const EMBEDDING_FILE: &str = "embedding.bin";
pub const SCHEMA_FILE: &str = "schema.json";
pub const TEST_FILE: &str = "test.csv";
pub const EMBED_SUMMARY_FILE: &str = "embed.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const SYNTHETIC_FILE: &str = "synthetic.csv";
pub const GRID_FILE: &str = "samples.pgm";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

const PRIVACY_BUDGET: &str = "embedding";

/// Independent per-purpose seeds from the run seed (splitmix64 finalizer).
pub fn sub_seed(seed: u64, purpose: u64) -> u64 {
    let mut z = seed
        .wrapping_add(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SEED_MAP: u64 = 1;
const SEED_SPLIT: u64 = 2;
const SEED_NOISE: u64 = 3;
const SEED_GENERATOR: u64 = 4;
const SEED_TRAIN: u64 = 5;
const SEED_SAMPLE: u64 = 6;

/// What `embed` released; also written as `embed.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedSummary {
    pub d: usize,
    pub c: usize,
    pub m: usize,
    pub sensitivity: f64,
    pub sigma: f64,
    pub noise_std: f64,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub fingerprint: String,
    pub test_size: usize,
    pub config: serde_json::Value,
}

impl EmbedSummary {
    pub fn line(&self) -> String {
        format!(
            "d={} c={} m={} Δ={} σ={} eps={}",
            self.d,
            self.c,
            self.m,
            self.sensitivity,
            self.sigma,
            self.epsilon.map_or("none (non-private)".to_string(), |e| e.to_string())
        )
    }
}

/// Metadata stored in the embedding file next to the matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct EmbeddingMeta {
    schema: Schema,
    train_size: usize,
    config: serde_json::Value,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).context(&format!("writing {}", path.display()))
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).context(&format!("creating {}", dir.display()))
}

fn load_dataset(cfg: &RunConfig) -> Result<LabeledDataset, CliError> {
    require_file(&cfg.dataset, "dataset")?;
    match &cfg.schema {
        Some(spec_path) => {
            require_file(spec_path, "schema spec")?;
            let spec = SchemaSpec::load(spec_path).context("loading schema spec")?;
            load_csv(&cfg.dataset, &spec).context("loading dataset")
        }
        None => load_images(&cfg.dataset).context("loading images"),
    }
}

fn feature_map(cfg: &RunConfig, schema: &Schema) -> Result<NtkFeatureMap, CliError> {
    let arch = cfg.architecture_for(schema.feature_dim(), schema.num_classes());
    NtkFeatureMap::init(arch, sub_seed(cfg.seed, SEED_MAP)).context("building feature map")
}

/// Embed the training split, privatize it, and write the released artifacts.
pub fn cmd_embed(cfg: &RunConfig) -> Result<EmbedSummary, CliError> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let (train_set, test_set) = split(
        &data,
        1.0 - cfg.test_fraction,
        sub_seed(cfg.seed, SEED_SPLIT),
        cfg.stratified,
    )
    .context("splitting dataset")?;
    drop(data);
    let schema = train_set.schema().clone();
    let map = feature_map(cfg, &schema)?;
    let m = train_set.len();
    let delta_sens = sensitivity(m).context("embedding")?;
    let privacy = match cfg.eps.value() {
        Some(eps) => Some(
            PrivacyParams::calibrate(eps, cfg.delta, cfg.calibration)
                .context("calibrating noise")?,
        ),
        None => None,
    };
    let mut rng = Rng::derive(cfg.seed, SEED_NOISE);
    let log = ReleaseLog::new();
    info!("embedding {m} points into {} features", map.feature_dim());
    let (emb, noise_std) = match cfg.imbalance_mode {
        ImbalanceMode::Global => {
            let emb = data_embedding(&map, &train_set).context("embedding")?;
            match privacy {
                Some(p) => {
                    let p = p.with_sensitivity(delta_sens);
                    let released =
                        privatize(&emb, &p, &mut rng, &log, PRIVACY_BUDGET).context("privatizing")?;
                    (released, p.noise_std())
                }
                None => (emb, 0.0),
            }
        }
        ImbalanceMode::PerClass => {
            let (emb, _) = imbalanced_embedding(
                &map,
                &train_set,
                privacy.as_ref(),
                cfg.count_budget,
                &mut rng,
                &log,
                PRIVACY_BUDGET,
            )
            .context("per-class embedding")?;
            let std = privacy.map_or(0.0, |p| p.sigma * IMBALANCED_SENSITIVITY);
            (emb, std)
        }
    };

    create_out_dir(&cfg.out_dir)?;
    let config = cfg.to_json();
    let meta = EmbeddingMeta {
        schema: schema.clone(),
        train_size: m,
        config: config.clone(),
    };
    emb.save(
        cfg.out_dir.join(EMBEDDING_FILE),
        &serde_json::to_value(&meta).expect("serializable"),
    )
    .context("writing embedding")?;
    write_json(&cfg.out_dir.join(SCHEMA_FILE), &schema)?;
    test_set
        .write_csv(cfg.out_dir.join(TEST_FILE))
        .context("writing held-out test split")?;
    let summary = EmbedSummary {
        d: emb.feature_dim(),
        c: emb.num_classes(),
        m,
        sensitivity: delta_sens,
        sigma: privacy.map_or(0.0, |p| p.sigma),
        noise_std,
        epsilon: privacy.map(|p| p.epsilon),
        delta: privacy.map(|p| p.delta),
        fingerprint: emb.fingerprint().to_string(),
        test_size: test_set.len(),
        config,
    };
    write_json(&cfg.out_dir.join(EMBED_SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub first_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
}

/// Train the generator against a released embedding file.
pub fn cmd_train(cfg: &RunConfig, embedding: &Path) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    require_file(embedding, "embedding file")?;
    let (emb, meta) = MeanEmbedding::load(embedding).context("reading embedding")?;
    let meta: EmbeddingMeta = serde_json::from_value(meta)
        .map_err(|e| CliError::Validation(format!("embedding metadata: {e}")))?;
    let map = feature_map(cfg, &meta.schema)?;
    if map.fingerprint() != emb.fingerprint() {
        return Err(CliError::Validation(format!(
            "embedding was built with a different feature map (fingerprint {}, config gives {}); \
             check architecture, ntk_width, ntk_activation and seed",
            emb.fingerprint(),
            map.fingerprint()
        )));
    }
    let g = GeneratorModel::new(
        meta.schema.clone(),
        cfg.d_code,
        cfg.gen_hidden.clone(),
        Activation::Relu,
        cfg.gen_batch_norm,
        sub_seed(cfg.seed, SEED_GENERATOR),
    )
    .context("building generator")?;
    let tcfg = TrainConfig {
        n_iter: cfg.iter,
        batch_size: cfg.batch,
        lr: cfg.lr,
        adam: AdamConfig::default(),
        seed: sub_seed(cfg.seed, SEED_TRAIN),
        eval_every: cfg.log_every,
    };
    let trained = train(&g, &map, &emb, &tcfg).context("training generator")?;

    create_out_dir(&cfg.out_dir)?;
    let mut trace = Vec::new();
    write_loss_trace(&trained.losses, &mut trace).context("formatting loss trace")?;
    fs::write(cfg.out_dir.join(LOSS_FILE), trace).context("writing loss trace")?;
    let ck = Checkpoint {
        model: trained.model,
        train: tcfg,
        fingerprint: emb.fingerprint().to_string(),
        config: serde_json::json!({
            "run": cfg.to_json(),
            "train_size": meta.train_size,
        }),
    };
    ck.save(cfg.out_dir.join(CHECKPOINT_FILE)).context("writing checkpoint")?;
    Ok(TrainSummary {
        first_loss: trained.losses[0],
        final_loss: *trained.losses.last().expect("iter ≥ 1"),
        iterations: trained.losses.len(),
    })
}

/// Draw `n` synthetic points (default: the configured count or the training size).
pub fn cmd_generate(
    checkpoint: &Path,
    n: Option<usize>,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<PathBuf, CliError> {
    require_file(checkpoint, "checkpoint")?;
    let ck = Checkpoint::load(checkpoint).context("reading checkpoint")?;
    let run = &ck.config["run"];
    let n = n
        .or_else(|| run["n_synthetic"].as_u64().map(|v| v as usize))
        .or_else(|| ck.config["train_size"].as_u64().map(|v| v as usize))
        .ok_or_else(|| CliError::Validation("number of samples not given".into()))?;
    let seed = seed
        .or_else(|| run["seed"].as_u64())
        .unwrap_or_default();
    let mut rng = Rng::derive(seed, SEED_SAMPLE);
    let synthetic = sample_dataset(&ck.model, &mut rng, n).context("sampling generator")?;
    create_out_dir(out_dir)?;
    let path = out_dir.join(SYNTHETIC_FILE);
    synthetic.write_csv(&path).context("writing synthetic data")?;
    if synthetic.schema().domain == Domain::Image && n > 0 {
        fs::write(out_dir.join(GRID_FILE), sample_grid_pgm(&synthetic, 10))
            .context("writing sample grid")?;
    }
    Ok(path)
}

fn eval_config(section: &EvalSection, seeds: Vec<u64>) -> EvalConfig {
    EvalConfig {
        classifiers: section.classifiers.clone(),
        seeds,
        logreg: ClassifierConfig {
            n_iter: section.logreg_iter,
            lr: section.lr,
            l2: section.l2,
            hidden: section.mlp_hidden,
        },
        mlp: ClassifierConfig {
            n_iter: section.mlp_iter,
            lr: section.lr,
            l2: section.l2,
            hidden: section.mlp_hidden,
        },
    }
}

/// Train classifiers on the synthetic CSV and score them on the real test CSV.
pub fn cmd_eval(
    synthetic: &Path,
    real_test: &Path,
    schema: &Path,
    section: &EvalSection,
    seeds: Vec<u64>,
    out_dir: &Path,
) -> Result<EvalReport, CliError> {
    for (p, what) in [(synthetic, "synthetic data"), (real_test, "test data"), (schema, "schema")] {
        require_file(p, what)?;
    }
    let schema: Schema = serde_json::from_str(&fs::read_to_string(schema).context("reading schema")?)
        .map_err(|e| CliError::Validation(format!("schema file: {e}")))?;
    let synth = load_csv_with_schema(synthetic, &schema, Impute::None).context("loading synthetic data")?;
    let test = load_csv_with_schema(real_test, &schema, Impute::None).context("loading test data")?;
    let report = synth_to_real_eval(&synth, &test, &eval_config(section, seeds)).context("evaluating")?;
    write_report(&report, out_dir)?;
    Ok(report)
}

fn write_report(report: &EvalReport, out_dir: &Path) -> Result<(), CliError> {
    create_out_dir(out_dir)?;
    fs::write(out_dir.join(REPORT_JSON), report.to_json().context("serializing report")?)
        .context("writing report")?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).context("formatting report")?;
    fs::write(out_dir.join(REPORT_CSV), csv).context("writing report")
}

/// Run every stage for `seeds` consecutive seeds starting at `cfg.seed`.
///
/// A single seed writes into `out_dir`; several write `out_dir/seed-<s>/`
/// each and an averaged report at the top. A manifest of every artifact's
/// SHA-256 is written last.
pub fn cmd_pipeline(cfg: &RunConfig, seeds: usize) -> Result<EvalReport, CliError> {
    cfg.validate()?;
    if seeds == 0 {
        return Err(CliError::Validation("--seeds must be ≥ 1".into()));
    }
    let mut reports = Vec::with_capacity(seeds);
    for i in 0..seeds {
        let mut run = cfg.clone();
        run.seed = cfg.seed + i as u64;
        if seeds > 1 {
            run.out_dir = cfg.out_dir.join(format!("seed-{}", run.seed));
        }
        let summary = cmd_embed(&run)?;
        info!("seed {}: {}", run.seed, summary.line());
        let t = cmd_train(&run, &run.out_dir.join(EMBEDDING_FILE))?;
        info!("seed {}: loss {:.4e} -> {:.4e}", run.seed, t.first_loss, t.final_loss);
        let synth = cmd_generate(&run.out_dir.join(CHECKPOINT_FILE), None, None, &run.out_dir)?;
        reports.push(cmd_eval(
            &synth,
            &run.out_dir.join(TEST_FILE),
            &run.out_dir.join(SCHEMA_FILE),
            &run.eval,
            vec![run.seed],
            &run.out_dir,
        )?);
    }
    let report = if seeds == 1 {
        reports.pop().expect("one report")
    } else {
        let merged = EvalReport::merge(&reports).context("averaging reports")?;
        write_report(&merged, &cfg.out_dir)?;
        merged
    };
    write_manifest(&cfg.out_dir, cfg.to_json())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_seeds_differ_and_are_stable() {
        let a: Vec<u64> = (1..=6).map(|k| sub_seed(0, k)).collect();
        let mut dedup = a.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 6);
        assert_eq!(sub_seed(7, 3), sub_seed(7, 3));
        assert_ne!(sub_seed(7, 3), sub_seed(8, 3));
    }
}
