//! Worked examples checked against values derived by hand.

mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splitpoint_core::cost::{calibrate, mac_count, predict, CostProfile};
use splitpoint_core::{
    build_architecture, forward, forward_until, input_gradient, invert_feature_map, AttackConfig, Error,
    LayerKind, LayerParams, LayerSpec, ModelGraph, PartitionPoint, Tensor,
};

fn single_layer(kind: LayerKind, input: Vec<usize>, params: Option<LayerParams>) -> ModelGraph {
    let mut spec = LayerSpec::new("only", kind);
    if let Some(p) = params {
        spec = spec.with_params(p);
    }
    ModelGraph::new(
        "single",
        input,
        vec![spec],
        vec![PartitionPoint {
            label: "P".into(),
            boundary: 1,
        }],
        1,
    )
    .unwrap()
}

#[test]
fn vgg16_mac_count_matches_spreadsheet() {
    // conv: H·W·Cout·9·Cin at each resolution
    let conv: u64 = 224 * 224 * (3 * 64 + 64 * 64) * 9
        + 112 * 112 * (64 * 128 + 128 * 128) * 9
        + 56 * 56 * (128 * 256 + 256 * 256 * 2) * 9
        + 28 * 28 * (256 * 512 + 512 * 512 * 2) * 9
        + 14 * 14 * (512 * 512 * 3) * 9;
    // one op per ReLU output after each conv
    let conv_relu: u64 =
        224 * 224 * 64 * 2 + 112 * 112 * 128 * 2 + 56 * 56 * 256 * 3 + 28 * 28 * 512 * 3 + 14 * 14 * 512 * 3;
    // 2×2 max-pools: 4 comparisons per output
    let pools: u64 = (112 * 112 * 64 + 56 * 56 * 128 + 28 * 28 * 256 + 14 * 14 * 512 + 7 * 7 * 512) * 4;
    let fc: u64 = 25088 * 4096 + 4096 * 4096 + 4096 * 1000 + 4096 * 2;
    let g = build_architecture("vgg16", &[3, 224, 224]).unwrap();
    let total = splitpoint_core::cost::prefix_macs(&g, g.layers().len());
    assert_eq!(total, conv + conv_relu + pools + fc);
    assert_eq!(conv, 15_346_630_656);

    let layer1 = 224 * 224 * 64 * 27 + 224 * 224 * 64;
    assert_eq!(mac_count(&g, "Layer 1").unwrap(), layer1);
}

#[test]
fn resnet50_stage_one_mac_count() {
    let s = 56u64 * 56;
    let stem = 112 * 112 * 64 * 49 * 3 + 2 * 112 * 112 * 64 + s * 64 * 9;
    let first = s * 64 * 64 + 2 * s * 64 // conv1, bn1, relu1
        + s * 64 * 64 * 9 + 2 * s * 64 // conv2, bn2, relu2
        + s * 256 * 64 + s * 256 // conv3, bn3
        + s * 256 * 64 + s * 256 // projection, bn
        + 2 * s * 256; // add, relu
    let later = s * 64 * 256 + 2 * s * 64 + s * 64 * 64 * 9 + 2 * s * 64 + s * 256 * 64 + s * 256 + 2 * s * 256;
    let g = build_architecture("resnet50", &[3, 224, 224]).unwrap();
    assert_eq!(mac_count(&g, "Layer 1").unwrap(), stem);
    assert_eq!(mac_count(&g, "Layer 2").unwrap(), stem + first + 2 * later);
    assert!(matches!(mac_count(&g, "Layer 9"), Err(Error::UnknownBoundary(_))));
}

#[test]
fn small_mac_definitions() {
    let fc = single_layer(
        LayerKind::FullyConnected {
            in_features: 10,
            out_features: 5,
        },
        vec![10],
        None,
    );
    assert_eq!(mac_count(&fc, "P").unwrap(), 50);
    let conv = single_layer(
        LayerKind::Conv2d {
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            stride: 1,
            padding: 0,
        },
        vec![1, 6, 6],
        None,
    );
    assert_eq!(mac_count(&conv, "P").unwrap(), 144);
}

#[test]
fn exposed_feature_map_sizes() {
    let g = build_architecture("vgg16", &[3, 224, 224]).unwrap();
    let a = g.assignment_for("Layer 2").unwrap();
    assert_eq!(a.exposed_tensor_shape, [64, 112, 112]);
    assert_eq!(a.exposed_tensor_bytes, 64 * 112 * 112 * 4);
    let last = g.assignment_for("Layer 13").unwrap();
    assert_eq!(last.exposed_tensor_shape, [512, 7, 7]);
}

#[test]
fn split_halves_hold_the_tabulated_layers() {
    let census = |model: &str, label: &str| {
        let g = build_architecture(model, &[3, 224, 224]).unwrap();
        let (enc, acc) = g.split(label).unwrap();
        assert_eq!(acc.input_shape(), enc.output_shape());
        assert_eq!(acc.output_shape(), g.output_shape());
        assert_eq!(enc.layers().len() + acc.layers().len(), g.layers().len());
        (
            enc.census(0..enc.layers().len()),
            acc.census(0..acc.layers().len()),
        )
    };
    let (enc, acc) = census("resnet50", "Layer 5");
    assert_eq!((enc.conv, enc.fc, acc.conv, acc.fc), (49, 0, 0, 1));
    let (_, acc) = census("vgg16", "Layer 13");
    assert_eq!((acc.conv, acc.fc), (0, 3));
    let (_, acc) = census("efficientnetb0", "Layer 8");
    assert_eq!((acc.conv, acc.mbconv, acc.fc), (0, 0, 1));
    let g = build_architecture("vgg16", &[3, 224, 224]).unwrap();
    assert!(matches!(g.split("Layer 14"), Err(Error::UnknownBoundary(_))));
}

#[test]
fn forward_and_gradient_examples() {
    let relu = single_layer(LayerKind::ReLU, vec![3], None);
    let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(forward(&relu, &x).unwrap().data(), [0.0, 0.0, 2.0]);

    let relu2 = single_layer(LayerKind::ReLU, vec![2], None);
    let g = input_gradient(
        &relu2,
        "P",
        &Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap(),
        &Tensor::filled(&[2], 1.0),
    )
    .unwrap();
    assert_eq!(g.data(), [0.0, 1.0]);

    // y = Wx + b with W 2×3, so dL/dx = Wᵀc
    let w = vec![1.0, -2.0, 0.5, 3.0, 0.25, -1.0];
    let fc = single_layer(
        LayerKind::FullyConnected {
            in_features: 3,
            out_features: 2,
        },
        vec![3],
        Some(LayerParams {
            weight: w.clone(),
            bias: vec![0.7, -0.3],
        }),
    );
    let c = Tensor::new(vec![2], vec![2.0, -1.0]).unwrap();
    let g = input_gradient(&fc, "P", &Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap(), &c).unwrap();
    let want = [1.0 * 2.0 - 3.0, -2.0 * 2.0 - 0.25, 0.5 * 2.0 + 1.0];
    assert_eq!(g.data(), want);

    let identity = single_layer(
        LayerKind::Conv2d {
            in_channels: 2,
            out_channels: 2,
            kernel: 1,
            stride: 1,
            padding: 0,
        },
        vec![2, 3, 3],
        Some(LayerParams {
            weight: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0, 0.0],
        }),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = common::random_tensor(&mut rng, &[2, 3, 3], -1.0, 1.0);
    assert_eq!(forward(&identity, &x).unwrap(), x);
}

#[test]
fn wrong_input_is_rejected() {
    let g = build_architecture("toy4", &[3, 16, 16]).unwrap();
    assert!(matches!(
        forward(&g, &Tensor::zeros(&[3, 16, 15])),
        Err(Error::ShapeMismatch { .. })
    ));
    let mut bad = Tensor::zeros(&[3, 16, 16]);
    bad.data_mut()[5] = f64::NAN;
    assert!(matches!(forward(&g, &bad), Err(Error::NonFinite(_))));
    assert!(matches!(
        build_architecture("alexnet", &[3, 224, 224]),
        Err(Error::UnknownArchitecture(_))
    ));
}

#[test]
fn calibration_examples() {
    let g = build_architecture("vgg16", &[3, 224, 224]).unwrap();
    let labels: Vec<String> = g.partition_points().iter().map(|p| p.label.clone()).collect();

    let all: Vec<(String, f64)> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), 0.6 + 0.25 * i as f64))
        .collect();
    let p = calibrate(&g, &all, 4.2, 0.3).unwrap();
    for (label, total) in &all {
        let b = predict(&p, &g.assignment_for(label).unwrap()).unwrap();
        assert!((b.total_seconds - total).abs() < 1e-12, "{label}");
    }

    let ends = vec![(labels[0].clone(), 0.6), (labels[12].clone(), 4.0)];
    let p = calibrate(&g, &ends, 4.2, 0.3).unwrap();
    let first = p.point("Layer 1").unwrap().enclave_prefix_seconds;
    let last = p.point("Layer 13").unwrap().enclave_prefix_seconds;
    let mid = p.point("Layer 8").unwrap().enclave_prefix_seconds;
    assert!(first < mid && mid < last);
    p.validate().unwrap();

    let missing = vec![(labels[0].clone(), 0.6)];
    assert!(matches!(calibrate(&g, &missing, 4.2, 0.3), Err(Error::Calibration(_))));
    let decreasing = vec![(labels[0].clone(), 3.0), (labels[5].clone(), 1.0), (labels[12].clone(), 4.0)];
    assert!(matches!(calibrate(&g, &decreasing, 4.2, 0.3), Err(Error::Calibration(_))));
}

#[test]
fn shipped_profiles_are_consistent() {
    for model in ["vgg16", "resnet50", "efficientnetb0"] {
        let p = CostProfile::builtin(model).unwrap();
        p.validate().unwrap();
        let g = build_architecture(model, &[3, 224, 224]).unwrap();
        let labels: Vec<&str> = p.labels().collect();
        let graph_labels: Vec<&str> = g.partition_points().iter().map(|p| p.label.as_str()).collect();
        assert_eq!(labels, graph_labels);
        assert_eq!(p.full_enclave_breakdown().speedup_vs_full_enclave, 0.0);
    }
}

#[test]
fn attack_is_deterministic_per_seed() {
    let g = splitpoint_core::toy_cnn(&[3, 12, 12], 4).unwrap();
    let img = splitpoint_core::privacy::synthetic_images(1, &[3, 12, 12], 2).unwrap().remove(0);
    let exposed = forward_until(&g, &img, "L2").unwrap();
    let cfg = AttackConfig {
        steps: 40,
        init_seed: 9,
        ..AttackConfig::default()
    };
    let a = invert_feature_map(&g, "L2", &exposed, &cfg).unwrap();
    let b = invert_feature_map(&g, "L2", &exposed, &cfg).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let c = invert_feature_map(&g, "L2", &exposed, &AttackConfig { init_seed: 10, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn tensor_wire_format_layout() {
    let t = Tensor::new(vec![2, 1], vec![1.5, -2.0]).unwrap();
    let bytes = t.to_binary();
    let mut want = Vec::new();
    want.extend_from_slice(&2u64.to_le_bytes());
    want.extend_from_slice(&2u64.to_le_bytes());
    want.extend_from_slice(&1u64.to_le_bytes());
    want.extend_from_slice(&1.5f32.to_le_bytes());
    want.extend_from_slice(&(-2.0f32).to_le_bytes());
    assert_eq!(bytes, want);
    assert_eq!(Tensor::read_binary(&bytes[..]).unwrap(), t);
    assert!(Tensor::read_binary(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn model_json_round_trip_and_enumeration_determinism() {
    let g = build_architecture("efficientnetb0", &[3, 64, 64]).unwrap();
    let back = ModelGraph::from_json(&g.to_json()).unwrap();
    assert_eq!(back.enumerate_partitions(), g.enumerate_partitions());
    let x = splitpoint_core::privacy::synthetic_images(1, &[3, 64, 64], 5).unwrap().remove(0);
    assert_eq!(forward(&back, &x).unwrap(), forward(&g, &x).unwrap());

    for model in ["vgg16", "resnet50", "efficientnetb0", "toy4"] {
        let g = build_architecture(model, &[3, 224, 224]).unwrap();
        let parts = g.enumerate_partitions();
        assert_eq!(parts, g.enumerate_partitions());
        for a in &parts {
            assert_eq!(a.enclave_layers.start, 0);
            assert_eq!(a.enclave_layers.end, a.accelerator_layers.start);
            assert_eq!(a.accelerator_layers.end, g.layers().len());
        }
    }

    let text = r#"{"name":"tiny","input_shape":[1,4,4],
        "layers":[{"name":"c","kind":"Conv2d","in_channels":1,"out_channels":2,"kernel":3,"stride":1,"padding":1},
                  {"name":"r","kind":"ReLU"}],
        "partition_points":[{"label":"A","boundary":1},{"label":"B","boundary":2}]}"#;
    let tiny = ModelGraph::from_json(text).unwrap();
    assert_eq!(tiny.shape_at(2), [2, 4, 4]);
    let unordered = text.replace(r#""boundary":2"#, r#""boundary":1"#);
    assert!(ModelGraph::from_json(&unordered).is_err());
}
