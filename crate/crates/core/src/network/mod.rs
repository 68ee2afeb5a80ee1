//! The fixed convolutional loss network and named feature taps.

mod weights;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::conv_output_extent;
use crate::tensor::{Graph, Tensor, Var};

pub use weights::{
    read_weight_file, write_weight_file, WeightEntry, WeightFile, WEIGHT_MAGIC, WEIGHT_VERSION,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    AvgPool {
        window: usize,
    },
    MaxPool {
        window: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn conv(name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride: 1,
                padding: 0,
            },
        }
    }

    pub fn relu(name: &str) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Relu,
        }
    }

    pub fn avg_pool(name: &str, window: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::AvgPool { window },
        }
    }

    pub fn max_pool(name: &str, window: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::MaxPool { window },
        }
    }

    /// Declared `[out, in, k, k]` weight shape of a conv layer.
    pub fn weight_shape(&self) -> Option<[usize; 4]> {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some([out_channels, in_channels, kernel, kernel]),
            _ => None,
        }
    }
}

/// The architecture used by [`LossNetwork::tiny`]: three stages of valid
/// 3×3 convolutions separated by 2×2 average pooling.
pub fn tiny_architecture() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv("conv1_1", 3, 16, 3),
        LayerSpec::relu("relu1_1"),
        LayerSpec::conv("conv1_2", 16, 16, 3),
        LayerSpec::relu("relu1_2"),
        LayerSpec::avg_pool("pool1", 2),
        LayerSpec::conv("conv2_1", 16, 32, 3),
        LayerSpec::relu("relu2_1"),
        LayerSpec::conv("conv2_2", 32, 32, 3),
        LayerSpec::relu("relu2_2"),
        LayerSpec::avg_pool("pool2", 2),
        LayerSpec::conv("conv3_2", 32, 64, 3),
        LayerSpec::relu("relu3_2"),
    ]
}

/// Per-channel mean the tiny network subtracts from `[0, 1]` pixels.
pub const TINY_CHANNEL_MEAN: f64 = 0.5;

#[derive(Clone, Debug)]
struct ConvParams {
    weight: Arc<Tensor>,
    bias: Arc<Tensor>,
}

/// An immutable feature extractor. Cheap to clone and safe to share across
/// concurrent runs.
#[derive(Clone, Debug)]
pub struct LossNetwork {
    layers: Arc<[LayerSpec]>,
    params: Arc<[Option<ConvParams>]>,
    channel_means: [f64; 3],
}

/// Activations extracted from a constant image, keyed by tap name in request
/// order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureSet {
    entries: Vec<(String, Tensor)>,
}

impl FeatureSet {
    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        FeatureSet { entries }
    }

    pub fn get(&self, tap: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == tap).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }
}

/// Activations recorded in a [`Graph`], so losses built on them backpropagate
/// to the input image.
#[derive(Clone, Debug, Default)]
pub struct LinkedFeatures {
    entries: Vec<(String, Var)>,
}

impl LinkedFeatures {
    pub fn from_entries(entries: Vec<(String, Var)>) -> Self {
        LinkedFeatures { entries }
    }

    pub fn get(&self, tap: &str) -> Option<Var> {
        self.entries.iter().find(|(n, _)| n == tap).map(|(_, v)| *v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), *v))
    }

    /// Copies the activation values out of the graph.
    pub fn detach(&self, graph: &Graph) -> FeatureSet {
        FeatureSet {
            entries: self
                .entries
                .iter()
                .map(|(n, v)| (n.clone(), graph.value(*v).clone()))
                .collect(),
        }
    }
}

impl LossNetwork {
    /// Validates an architecture against a set of conv parameters.
    pub fn from_parts(
        layers: Vec<LayerSpec>,
        mut conv_weights: BTreeMap<String, (Tensor, Option<Tensor>)>,
        channel_means: [f64; 3],
    ) -> Result<Self> {
        validate_architecture(&layers)?;
        if channel_means.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("channel means".into()));
        }
        let mut params = Vec::with_capacity(layers.len());
        for layer in &layers {
            let Some(declared) = layer.weight_shape() else {
                params.push(None);
                continue;
            };
            let (weight, bias) = conv_weights.remove(&layer.name).ok_or_else(|| {
                Error::Format(format!("no weights stored for conv layer `{}`", layer.name))
            })?;
            if weight.shape() != declared {
                return Err(Error::Format(format!(
                    "shape mismatch for `{}`: declared {:?}, stored {:?}",
                    layer.name,
                    declared,
                    weight.shape()
                )));
            }
            let bias = match bias {
                Some(b) if b.shape() != [declared[0]] => {
                    return Err(Error::Format(format!(
                        "shape mismatch for `{}` bias: declared [{}], stored {:?}",
                        layer.name,
                        declared[0],
                        b.shape()
                    )))
                }
                Some(b) => b,
                None => Tensor::zeros([declared[0]]),
            };
            if !weight.is_finite() || !bias.is_finite() {
                return Err(Error::NonFinite(format!("weights of `{}`", layer.name)));
            }
            params.push(Some(ConvParams {
                weight: Arc::new(weight),
                bias: Arc::new(bias),
            }));
        }
        if let Some(extra) = conv_weights.keys().next() {
            return Err(Error::Format(format!(
                "weights stored for `{extra}`, which is not a conv layer of the architecture"
            )));
        }
        Ok(LossNetwork {
            layers: layers.into(),
            params: params.into(),
            channel_means,
        })
    }

    /// The deterministic desk-scale network: He-normal weights drawn from a
    /// ChaCha8 stream seeded with `seed`, zero biases, mean 0.5 per channel.
    pub fn tiny(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = tiny_architecture();
        let mut weights = BTreeMap::new();
        for layer in &layers {
            if let Some(shape) = layer.weight_shape() {
                let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
                let n = shape.iter().product();
                let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                let weight = Tensor::new(shape.to_vec(), data).expect("finite weights");
                weights.insert(layer.name.clone(), (weight, None));
            }
        }
        Self::from_parts(layers, weights, [TINY_CHANNEL_MEAN; 3])
            .expect("tiny architecture is valid")
    }

    /// Resolves a `--weights` style argument: `tiny:SEED` for the seeded
    /// network, otherwise a path to an `NSTW` file for the tiny architecture.
    pub fn from_spec(spec: &str) -> Result<Self> {
        match spec.strip_prefix("tiny:") {
            Some(seed) => seed
                .parse()
                .map(Self::tiny)
                .map_err(|_| Error::config(format!("invalid tiny network seed `{seed}`"))),
            None => Self::load_weights(spec, tiny_architecture()),
        }
    }

    /// Loads an `NSTW` weight file and binds it to `architecture`.
    pub fn load_weights(path: impl AsRef<Path>, architecture: Vec<LayerSpec>) -> Result<Self> {
        let file = read_weight_file(path)?;
        let mut conv = BTreeMap::new();
        let mut biases = BTreeMap::new();
        for entry in file.entries {
            match entry.name.strip_suffix(weights::BIAS_SUFFIX) {
                Some(layer) => {
                    biases.insert(layer.to_string(), entry.tensor);
                }
                None => {
                    conv.insert(entry.name, entry.tensor);
                }
            }
        }
        let mut bound = BTreeMap::new();
        for (name, weight) in conv {
            let bias = biases.remove(&name);
            bound.insert(name, (weight, bias));
        }
        if let Some(orphan) = biases.keys().next() {
            return Err(Error::Format(format!(
                "bias stored for unknown layer `{orphan}`"
            )));
        }
        Self::from_parts(architecture, bound, file.channel_means)
    }

    /// Writes this network's conv parameters in the `NSTW` format. Values are
    /// narrowed to `f32`.
    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut entries = Vec::new();
        for (layer, params) in self.layers.iter().zip(self.params.iter()) {
            if let Some(p) = params {
                entries.push(WeightEntry {
                    name: layer.name.clone(),
                    tensor: (*p.weight).clone(),
                });
                entries.push(WeightEntry {
                    name: format!("{}{}", layer.name, weights::BIAS_SUFFIX),
                    tensor: (*p.bias).clone(),
                });
            }
        }
        write_weight_file(
            path,
            &WeightFile {
                entries,
                channel_means: self.channel_means,
            },
        )
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn channel_means(&self) -> [f64; 3] {
        self.channel_means
    }

    /// Conv weight tensor of a named layer.
    pub fn conv_weight(&self, name: &str) -> Option<&Tensor> {
        let idx = self.layers.iter().position(|l| l.name == name)?;
        self.params[idx].as_ref().map(|p| &*p.weight)
    }

    pub fn conv_bias(&self, name: &str) -> Option<&Tensor> {
        let idx = self.layers.iter().position(|l| l.name == name)?;
        self.params[idx].as_ref().map(|p| &*p.bias)
    }

    fn tap_indices(&self, taps: &[String]) -> Result<Vec<usize>> {
        let mut seen = HashSet::new();
        taps.iter()
            .map(|tap| {
                if !seen.insert(tap.as_str()) {
                    return Err(Error::config(format!("duplicate tap `{tap}`")));
                }
                self.layers
                    .iter()
                    .position(|l| &l.name == tap)
                    .ok_or_else(|| {
                        Error::config(format!(
                            "unknown tap `{tap}`; available: {}",
                            self.layer_names().join(", ")
                        ))
                    })
            })
            .collect()
    }

    /// Checks that every name exists and none repeats.
    pub fn check_taps(&self, taps: &[String]) -> Result<()> {
        self.tap_indices(taps).map(|_| ())
    }

    /// Spatial extent after running the first `depth` layers, or `None` when
    /// some layer does not fit.
    pub fn extent_after(&self, extent: usize, depth: usize) -> Option<usize> {
        let mut n = extent;
        for layer in &self.layers[..depth.min(self.layers.len())] {
            n = match layer.kind {
                LayerKind::Conv {
                    kernel,
                    stride,
                    padding,
                    ..
                } => conv_output_extent(n, kernel, stride, padding)?,
                LayerKind::Relu => n,
                LayerKind::AvgPool { window } | LayerKind::MaxPool { window } => {
                    if !n.is_multiple_of(window) || n < window {
                        return None;
                    }
                    n / window
                }
            };
        }
        Some(n)
    }

    /// Largest extent `≤ extent` that can run through every layer up to the
    /// deepest of `taps`.
    pub fn compatible_extent(&self, extent: usize, taps: &[String]) -> Result<usize> {
        let depth = self
            .tap_indices(taps)?
            .into_iter()
            .max()
            .map_or(0, |i| i + 1);
        (1..=extent)
            .rev()
            .find(|&n| self.extent_after(n, depth).is_some())
            .ok_or_else(|| {
                Error::config(format!(
                    "no image extent ≤ {extent} fits the network up to the requested taps"
                ))
            })
    }

    /// Runs the network on a graph-resident image (already mean-subtracted),
    /// stopping after the deepest requested tap.
    pub fn forward_taps(
        &self,
        graph: &mut Graph,
        image: Var,
        taps: &[String],
    ) -> Result<LinkedFeatures> {
        let indices = self.tap_indices(taps)?;
        let Some(&deepest) = indices.iter().max() else {
            return Ok(LinkedFeatures::default());
        };
        let (c, _, _) = graph.value(image).dims3()?;
        if c != 3 {
            return Err(Error::config(format!(
                "loss network expects 3 channels, got {c}"
            )));
        }
        let mut activations = Vec::with_capacity(deepest + 1);
        let mut x = image;
        for (layer, params) in self.layers[..=deepest].iter().zip(self.params.iter()) {
            x = match (&layer.kind, params) {
                (
                    LayerKind::Conv {
                        stride, padding, ..
                    },
                    Some(p),
                ) => {
                    let w = graph.constant(p.weight.clone());
                    let b = graph.constant(p.bias.clone());
                    graph.conv2d(x, w, b, *stride, *padding)?
                }
                (LayerKind::Relu, _) => graph.relu(x)?,
                (LayerKind::AvgPool { window }, _) => graph.avg_pool2d(x, *window)?,
                (LayerKind::MaxPool { window }, _) => graph.max_pool2d(x, *window)?,
                (LayerKind::Conv { .. }, None) => {
                    unreachable!("conv layers are bound at construction")
                }
            };
            activations.push(x);
        }
        Ok(LinkedFeatures {
            entries: taps
                .iter()
                .cloned()
                .zip(indices.iter().map(|&i| activations[i]))
                .collect(),
        })
    }

    /// Activations of a constant image at the requested taps.
    pub fn extract_features(&self, image: &Tensor, taps: &[String]) -> Result<FeatureSet> {
        let mut graph = Graph::new();
        let x = graph.constant(image.clone());
        let linked = self.forward_taps(&mut graph, x, taps)?;
        Ok(linked.detach(&graph))
    }
}

fn validate_architecture(layers: &[LayerSpec]) -> Result<()> {
    let mut names = HashSet::new();
    let mut channels = 3;
    for layer in layers {
        if !names.insert(layer.name.as_str()) {
            return Err(Error::config(format!(
                "duplicate layer name `{}`",
                layer.name
            )));
        }
        match layer.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if in_channels != channels {
                    return Err(Error::config(format!(
                        "layer `{}` expects {in_channels} input channels but receives {channels}",
                        layer.name
                    )));
                }
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::config(format!(
                        "layer `{}` has a zero extent",
                        layer.name
                    )));
                }
                channels = out_channels;
            }
            LayerKind::AvgPool { window } | LayerKind::MaxPool { window } if window == 0 => {
                return Err(Error::config(format!(
                    "layer `{}` has a zero window",
                    layer.name
                )));
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taps(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tiny_is_deterministic_per_seed() {
        let a = LossNetwork::tiny(42);
        let b = LossNetwork::tiny(42);
        let c = LossNetwork::tiny(1);
        let d = LossNetwork::tiny(2);
        for name in ["conv1_1", "conv2_2", "conv3_2"] {
            assert_eq!(a.conv_weight(name), b.conv_weight(name));
        }
        assert_ne!(c.conv_weight("conv1_1"), d.conv_weight("conv1_1"));
    }

    #[test]
    fn tap_shapes_follow_conv_and_pool_formulas() {
        let net = LossNetwork::tiny(7);
        let image = Tensor::full([3, 64, 64], 0.1);
        let all = taps(&["relu1_1", "relu1_2", "relu2_1", "relu2_2", "relu3_2"]);
        let features = net.extract_features(&image, &all).unwrap();
        let shape = |t: &str| features.get(t).unwrap().shape().to_vec();
        assert_eq!(shape("relu1_1"), [16, 62, 62]);
        assert_eq!(shape("relu1_2"), [16, 60, 60]);
        assert_eq!(shape("relu2_1"), [32, 28, 28]);
        assert_eq!(shape("relu2_2"), [32, 26, 26]);
        assert_eq!(shape("relu3_2"), [64, 11, 11]);
    }

    #[test]
    fn empty_taps_give_empty_set() {
        let net = LossNetwork::tiny(7);
        let fs = net
            .extract_features(&Tensor::zeros([3, 16, 16]), &[])
            .unwrap();
        assert!(fs.is_empty());
    }

    #[test]
    fn single_tap_has_sixteen_channels() {
        let net = LossNetwork::tiny(7);
        let fs = net
            .extract_features(&Tensor::full([3, 16, 16], 0.2), &taps(&["relu1_2"]))
            .unwrap();
        assert_eq!(fs.len(), 1);
        assert_eq!(fs.get("relu1_2").unwrap().shape()[0], 16);
    }

    #[test]
    fn bad_taps_are_rejected() {
        let net = LossNetwork::tiny(7);
        let img = Tensor::zeros([3, 16, 16]);
        let err = net.extract_features(&img, &taps(&["relu9_9"])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("relu9_9") && msg.contains("relu1_1"), "{msg}");
        assert!(net
            .extract_features(&img, &taps(&["relu1_1", "relu1_1"]))
            .is_err());
    }

    #[test]
    fn compatible_extent_snaps_down() {
        let net = LossNetwork::tiny(7);
        let deep = taps(&["relu2_2"]);
        assert_eq!(net.compatible_extent(64, &deep).unwrap(), 64);
        // 63 → 61 → 59 is odd, so pooling rejects it.
        assert_eq!(net.compatible_extent(63, &deep).unwrap(), 62);
        assert_eq!(net.compatible_extent(8, &taps(&["relu1_2"])).unwrap(), 8);
        assert!(net.compatible_extent(8, &deep).is_err());
    }

    #[test]
    fn architecture_validation() {
        let mut layers = tiny_architecture();
        layers[2] = LayerSpec::conv("conv1_2", 8, 16, 3);
        assert!(validate_architecture(&layers).is_err());
        let dup = vec![LayerSpec::relu("a"), LayerSpec::relu("a")];
        assert!(validate_architecture(&dup).is_err());
    }
}
