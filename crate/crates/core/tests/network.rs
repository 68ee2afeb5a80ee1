use nst_core::network::{
    read_weight_file, tiny_architecture, write_weight_file, LayerKind, LayerSpec, LossNetwork,
    WeightEntry, WeightFile,
};
use nst_core::{Error, Graph, Tensor};
use nst_testkit::gradcheck::random;
use nst_testkit::oracles;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn taps(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Runs the network layer by layer with the brute-force kernels and records
/// every activation by name.
fn reference_forward(
    net: &LossNetwork,
    image: &Tensor,
) -> Vec<(String, Vec<f64>, (usize, usize, usize))> {
    let (mut c, mut h, mut w) = image.dims3().unwrap();
    let mut x = image.data().to_vec();
    let mut out = Vec::new();
    for layer in net.layers() {
        match layer.kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                let weight = net.conv_weight(&layer.name).unwrap();
                let bias = net.conv_bias(&layer.name).unwrap();
                let (y, shape) = oracles::conv2d(
                    &x,
                    (c, h, w),
                    weight.data(),
                    (out_channels, kernel),
                    bias.data(),
                    stride,
                    padding,
                );
                x = y;
                (c, h, w) = shape;
            }
            LayerKind::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            LayerKind::AvgPool { window } => {
                x = oracles::avg_pool(&x, (c, h, w), window);
                (h, w) = (h / window, w / window);
            }
            LayerKind::MaxPool { .. } => unreachable!("tiny network has no max pooling"),
        }
        out.push((layer.name.clone(), x.clone(), (c, h, w)));
    }
    out
}

#[test]
fn taps_equal_independent_prefix_pass() {
    let net = LossNetwork::tiny(42);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let image = random(&[3, 24, 24], &mut rng);
    let names = net
        .layer_names()
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
    let features = net.extract_features(&image, &names).unwrap();
    for (name, reference, (c, h, w)) in reference_forward(&net, &image) {
        let got = features.get(&name).unwrap();
        assert_eq!(got.shape(), [c, h, w], "{name}");
        let err = got
            .data()
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{name}: {err:e}");
    }
}

#[test]
fn extraction_is_pure() {
    let net = LossNetwork::tiny(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let image = random(&[3, 16, 16], &mut rng);
    let before = image.clone();
    let t = taps(&["relu1_1", "relu2_2"]);
    let a = net.extract_features(&image, &t).unwrap();
    let b = net.extract_features(&image, &t).unwrap();
    assert_eq!(image, before);
    for name in &t {
        assert_eq!(a.get(name), b.get(name));
    }
}

#[test]
fn gradient_reaches_pixels_from_every_tap() {
    let net = LossNetwork::tiny(5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let image = random(&[3, 24, 24], &mut rng);
    for tap in ["relu1_1", "relu1_2", "relu2_1", "relu2_2", "relu3_2"] {
        let mut g = Graph::new();
        let x = g.variable(image.clone());
        let features = net.forward_taps(&mut g, x, &taps(&[tap])).unwrap();
        let s = g.sum(features.get(tap).unwrap()).unwrap();
        let grads = g.backward(s).unwrap();
        let grad = grads.get(x).unwrap();
        assert!(grad.data().iter().any(|v| *v != 0.0), "{tap}");
    }
}

#[test]
fn seeds_give_reproducible_weights() {
    let (a, b, c) = (
        LossNetwork::tiny(42),
        LossNetwork::tiny(42),
        LossNetwork::tiny(43),
    );
    for name in ["conv1_1", "conv2_2", "conv3_2"] {
        assert_eq!(a.conv_weight(name), b.conv_weight(name));
        assert_ne!(a.conv_weight(name), c.conv_weight(name));
    }
}

#[test]
fn unknown_tap_lists_available_layers() {
    let net = LossNetwork::tiny(0);
    let err = net
        .extract_features(&Tensor::zeros([3, 16, 16]), &taps(&["relu9_9"]))
        .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("relu9_9") && msg.contains("relu2_2"), "{msg}");
}

#[test]
fn weight_file_round_trip_preserves_features() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.nstw");
    let net = LossNetwork::tiny(8);
    net.save_weights(&path).unwrap();
    let loaded = LossNetwork::load_weights(&path, tiny_architecture()).unwrap();
    assert_eq!(loaded.channel_means(), net.channel_means());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let image = random(&[3, 16, 16], &mut rng);
    let t = taps(&["relu2_2"]);
    let (a, b) = (
        net.extract_features(&image, &t).unwrap(),
        loaded.extract_features(&image, &t).unwrap(),
    );
    // Weights are stored as f32.
    assert!(
        a.get("relu2_2")
            .unwrap()
            .max_abs_diff(b.get("relu2_2").unwrap())
            < 1e-4
    );
    // Saving the loaded network again is byte-stable.
    let again = dir.path().join("again.nstw");
    loaded.save_weights(&again).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap()
    );
}

fn two_conv_architecture() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv("conv1_1", 3, 16, 3),
        LayerSpec::relu("relu1_1"),
        LayerSpec::conv("conv1_2", 16, 4, 3),
        LayerSpec::relu("relu1_2"),
    ]
}

fn entry(name: &str, shape: &[usize]) -> WeightEntry {
    let n = shape.iter().product();
    WeightEntry {
        name: name.to_string(),
        tensor: Tensor::new(shape.to_vec(), vec![0.25; n]).unwrap(),
    }
}

#[test]
fn two_conv_file_binds_both_layers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two.nstw");
    let file = WeightFile {
        entries: vec![
            entry("conv1_1", &[16, 3, 3, 3]),
            entry("conv1_2", &[4, 16, 3, 3]),
        ],
        channel_means: [0.25, 0.5, 0.75],
    };
    write_weight_file(&path, &file).unwrap();
    assert_eq!(read_weight_file(&path).unwrap(), file);
    let net = LossNetwork::load_weights(&path, two_conv_architecture()).unwrap();
    let bound = net
        .layers()
        .iter()
        .filter(|l| net.conv_weight(&l.name).is_some())
        .count();
    assert_eq!(bound, 2);
    let means = net.channel_means();
    assert_eq!(means, [0.25, 0.5, 0.75]);
}

#[test]
fn shape_mismatch_names_the_layer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.nstw");
    let file = WeightFile {
        entries: vec![
            entry("conv1_1", &[8, 3, 3, 3]),
            entry("conv1_2", &[4, 16, 3, 3]),
        ],
        channel_means: [0.5; 3],
    };
    write_weight_file(&path, &file).unwrap();
    let err = LossNetwork::load_weights(&path, two_conv_architecture()).unwrap_err();
    assert!(matches!(err, Error::Format(_)));
    assert!(err.to_string().contains("conv1_1"), "{err}");
}

#[test]
fn bad_magic_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.nstw");
    LossNetwork::tiny(0).save_weights(&good).unwrap();
    let bytes = std::fs::read(&good).unwrap();

    let mut wrong = bytes.clone();
    wrong[..4].copy_from_slice(b"NOPE");
    let p = dir.path().join("magic.nstw");
    std::fs::write(&p, wrong).unwrap();
    assert!(matches!(
        LossNetwork::load_weights(&p, tiny_architecture()),
        Err(Error::Format(_))
    ));

    let p = dir.path().join("short.nstw");
    std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(
        LossNetwork::load_weights(&p, tiny_architecture()),
        Err(Error::Io(_))
    ));

    assert!(matches!(
        LossNetwork::load_weights(dir.path().join("missing.nstw"), tiny_architecture()),
        Err(Error::Io(_))
    ));
}

#[test]
fn network_spec_strings() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.nstw");
    LossNetwork::tiny(3).save_weights(&path).unwrap();
    let from_file = LossNetwork::from_spec(path.to_str().unwrap()).unwrap();
    assert_eq!(from_file.layer_names(), LossNetwork::tiny(3).layer_names());
    assert_eq!(
        LossNetwork::from_spec("tiny:3")
            .unwrap()
            .conv_weight("conv1_1"),
        LossNetwork::tiny(3).conv_weight("conv1_1")
    );
    assert!(matches!(
        LossNetwork::from_spec("tiny:x"),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        LossNetwork::from_spec(dir.path().join("none").to_str().unwrap()),
        Err(Error::Io(_))
    ));
}
