#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dpntk_core::Rng;

pub fn digits_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/digits8x8.bin")
}

pub fn dpntk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpntk"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

/// A digits run config; `dataset` and `out_dir` are absolute.
pub fn digits_toml(dataset: &Path, out_dir: &Path, iter: usize, width: usize, eps: &str) -> String {
    format!(
        "dataset = {:?}\narchitecture = \"fc_1l\"\nntk_width = {width}\nd_code = 5\niter = {iter}\n\
         batch = 200\nlr = 0.01\neps = {eps}\nseed = 0\nlog_every = 0\nout_dir = {:?}\n",
        dataset.display().to_string(),
        out_dir.display().to_string()
    )
}

/// Two classes over three numeric and two categorical columns.
///
/// `x1` and `x2` shift with the label, `colour` is skewed by it, `x3` and
/// `shape` are noise.
pub fn write_tabular(dir: &Path, m: usize, seed: u64) -> (PathBuf, PathBuf) {
    let mut rng = Rng::new(seed);
    let mut csv = String::from("x1,x2,x3,colour,shape,label\n");
    for _ in 0..m {
        let y = rng.below(2);
        let x1 = rng.standard_normal() + 1.5 * y as f64;
        let x2 = rng.standard_normal() - 1.0 * y as f64;
        let x3 = rng.standard_normal();
        let weights: [f64; 4] = if y == 1 { [0.1, 0.2, 0.3, 0.4] } else { [0.4, 0.3, 0.2, 0.1] };
        let colour = ["a", "b", "c", "d"][rng.weighted_label(&weights).unwrap()];
        let shape = ["x", "y", "z"][rng.below(3)];
        let label = if y == 1 { "yes" } else { "no" };
        csv.push_str(&format!("{x1:.6},{x2:.6},{x3:.6},{colour},{shape},{label}\n"));
    }
    let data = dir.join("tabular.csv");
    fs::write(&data, csv).unwrap();
    let schema = dir.join("tabular.schema.toml");
    fs::write(
        &schema,
        "label = \"label\"\n[columns]\nx1 = \"numeric\"\nx2 = \"numeric\"\nx3 = \"numeric\"\n\
         colour = \"categorical\"\nshape = \"categorical\"\n",
    )
    .unwrap();
    (data, schema)
}

pub fn tabular_toml(data: &Path, schema: &Path, out_dir: &Path, eps: &str) -> String {
    format!(
        "dataset = {:?}\nschema = {:?}\narchitecture = \"fc_2l\"\nntk_width = \"30_200\"\n\
         d_code = 11\niter = 500\nbatch = 200\nlr = 0.01\neps = {eps}\nseed = 0\nlog_every = 0\n\
         out_dir = {:?}\n",
        data.display().to_string(),
        schema.display().to_string(),
        out_dir.display().to_string()
    )
}
