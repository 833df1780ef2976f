//! Two Gaussian blobs in the plane, non-private: the generator should close most of the gap.

use dpntk_core::data::{Column, ColumnKind, Domain, LabeledDataset, Schema, SplitTag};
use dpntk_core::embedding::data_embedding;
use dpntk_core::generator::{train, AdamConfig, GeneratorModel, TrainConfig};
use dpntk_core::ntk::{Activation, NtkArchitecture, NtkFeatureMap};
use dpntk_core::{Rng, Tensor};

fn numeric(name: &str, offset: usize) -> Column {
    Column {
        name: name.into(),
        kind: ColumnKind::Numeric {
            mean: 0.0,
            std: 1.0,
            round: false,
        },
        offset,
    }
}

#[test]
fn blob_loss_drops_by_an_order_of_magnitude() {
    let schema = Schema {
        domain: Domain::Tabular,
        columns: vec![numeric("x1", 0), numeric("x2", 1)],
        label: "y".into(),
        classes: vec!["left".into(), "right".into()],
    };
    let mut rng = Rng::new(1);
    let m = 1000;
    let mut x = Vec::with_capacity(2 * m);
    let mut y = Vec::with_capacity(m);
    for i in 0..m {
        let k = i % 2;
        let centre = if k == 0 { [-2.0, 1.0] } else { [2.0, -1.0] };
        x.push(centre[0] + 0.5 * rng.standard_normal());
        x.push(centre[1] + 0.5 * rng.standard_normal());
        y.push(k);
    }
    let data = LabeledDataset::from_indices(
        Tensor::matrix(m, 2, x).unwrap(),
        &y,
        schema.clone(),
        SplitTag::Train,
    )
    .unwrap();
    let map = NtkFeatureMap::init(NtkArchitecture::fc_1l(2, 100, 2, Activation::Relu), 2).unwrap();
    let target = data_embedding(&map, &data).unwrap();
    let g = GeneratorModel::new(schema, 4, vec![32, 32], Activation::Relu, true, 3).unwrap();
    let cfg = TrainConfig {
        n_iter: 2000,
        batch_size: 200,
        lr: 0.01,
        adam: AdamConfig::default(),
        seed: 4,
        eval_every: 0,
    };
    let out = train(&g, &map, &target, &cfg).unwrap();
    assert_eq!(out.losses.len(), 2000);
    let initial = out.losses[0];
    let last = out.losses[out.losses.len() - 100..].iter().sum::<f64>() / 100.0;
    assert!(last < 0.1 * initial, "initial {initial}, final {last}");
}
