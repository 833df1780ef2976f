//! Published hyperparameter rows, plus a desk-scale digits setup.

use std::path::PathBuf;

use dpntk_core::ntk::ArchKind;

use crate::config::{Epsilon, NtkWidth, RunConfig};

/// One row of the hyperparameter table, as printed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PresetRow {
    pub name: &'static str,
    pub dataset: &'static str,
    pub iter: usize,
    pub d_code: usize,
    pub ntk_width: &'static str,
    pub batch: usize,
    pub lr: f64,
    /// Every privacy level the row was run at; `None` is non-private.
    pub eps: &'static [Option<f64>],
    /// Architecture label as published.
    pub architecture: &'static str,
}

pub const ROWS: &[PresetRow] = &[
    row("dmnist", "dmnist", 2000, 5, "800", 5000, &[Some(10.0), Some(1.0), Some(0.2)], "fc_1l"),
    row("fmnist", "fmnist", 2000, 5, "800", 5000, &[Some(10.0), Some(1.0), Some(0.2)], "fc_1l"),
    row("celeba", "celeba", 20000, 141, "3000_200", 1000, &[Some(10.0)], "fc_2l"),
    row("cifar10", "cifar10", 40000, 201, "3000_200", 1000, &[Some(10.0), Some(1.0)], "fc_2l"),
    row("cifar10-nonprivate", "cifar10", 20000, 31, "800_1000", 200, &[None], "fc_2l"),
    row("adult", "adult", 50, 11, "30_200", 200, &[Some(1.0)], "cnn_2l"),
    row("census", "census", 2000, 21, "30_20", 200, &[Some(1.0)], "cnn_2l"),
    row("cervical", "cervical", 500, 11, "800_1000", 200, &[Some(1.0)], "cnn_2l"),
    row("credit", "credit", 500, 11, "1500", 200, &[Some(1.0)], "fc_1l"),
    row("epileptic", "epileptic", 2000, 101, "50_20", 200, &[Some(1.0)], "cnn_2l"),
    row("isolet", "isolet", 1000, 21, "10_20", 200, &[Some(1.0)], "cnn_2l"),
    row("covtype", "covtype", 1000, 101, "100_20", 200, &[Some(1.0)], "cnn_2l"),
    row("intrusion", "intrusion", 1000, 21, "30_1000", 200, &[Some(1.0)], "fc_2l"),
    row("digits8x8", "digits8x8", 2000, 5, "200", 200, &[Some(1.0), None], "fc_1l"),
];

#[allow(clippy::too_many_arguments)]
const fn row(
    name: &'static str,
    dataset: &'static str,
    iter: usize,
    d_code: usize,
    ntk_width: &'static str,
    batch: usize,
    eps: &'static [Option<f64>],
    architecture: &'static str,
) -> PresetRow {
    PresetRow {
        name,
        dataset,
        iter,
        d_code,
        ntk_width,
        batch,
        lr: 0.01,
        eps,
        architecture,
    }
}

impl PresetRow {
    /// `iter / d_code / ntk_width / batch / lr / eps`, first ε only.
    pub fn summary(&self) -> String {
        let eps = match self.eps[0] {
            Some(e) => format!("{e}"),
            None => "None".into(),
        };
        format!(
            "{} / {} / {} / {} / {} / {}",
            self.iter, self.d_code, self.ntk_width, self.batch, self.lr, eps
        )
    }

    /// Feature-network kind. The published `cnn_2l` label is run as the
    /// two-hidden-layer fully connected network.
    pub fn arch_kind(&self) -> ArchKind {
        match self.architecture {
            "fc_1l" => ArchKind::Fc1l,
            _ => ArchKind::Fc2l,
        }
    }

    /// Config for this row at its first listed ε. Tabular rows expect
    /// `<dataset>.csv` with `<dataset>.schema.toml`; image rows `<dataset>.bin`.
    pub fn config(&self) -> RunConfig {
        let tabular = !matches!(
            self.dataset,
            "dmnist" | "fmnist" | "celeba" | "cifar10" | "digits8x8"
        );
        let (dataset, schema) = if tabular {
            (
                PathBuf::from(format!("data/{}.csv", self.dataset)),
                Some(PathBuf::from(format!("data/{}.schema.toml", self.dataset))),
            )
        } else {
            (PathBuf::from(format!("data/{}.bin", self.dataset)), None)
        };
        let mut cfg = RunConfig::from_toml(&format!(
            "dataset = \"x\"\narchitecture = \"fc_1l\"\nntk_width = 1\nd_code = 1\niter = 1\nbatch = 1\nlr = 1\neps = 1\nout_dir = \"runs/{}\"\n",
            self.name
        ))
        .expect("template parses");
        cfg.dataset = dataset;
        cfg.schema = schema;
        cfg.architecture = self.arch_kind();
        cfg.ntk_width = self.ntk_width.parse::<NtkWidth>().expect("preset width parses");
        cfg.d_code = self.d_code;
        cfg.iter = self.iter;
        cfg.batch = self.batch;
        cfg.lr = self.lr;
        cfg.eps = match self.eps[0] {
            Some(e) => Epsilon::Finite(e),
            None => Epsilon::None,
        };
        cfg
    }
}

pub fn find(name: &str) -> Option<&'static PresetRow> {
    ROWS.iter().find(|r| r.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adult_row() {
        let r = find("adult").unwrap();
        assert_eq!(r.summary(), "50 / 11 / 30_200 / 200 / 0.01 / 1");
        assert_eq!(r.architecture, "cnn_2l");
        let c = r.config();
        assert_eq!(c.architecture, ArchKind::Fc2l);
        assert_eq!(c.ntk_width, NtkWidth(vec![30, 200]));
        c.validate().unwrap();
    }

    #[test]
    fn every_preset_validates() {
        for r in ROWS {
            r.config().validate().unwrap();
        }
        assert_eq!(find("cifar10-nonprivate").unwrap().config().eps, Epsilon::None);
        assert!(find("mnist").is_none());
    }
}
