//! Content, style and total-variation losses and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::config::TransferConfig;
use crate::error::{Error, Result};
use crate::network::{FeatureSet, LinkedFeatures, LossNetwork};
use crate::tensor::{kernels, Graph, Tensor, Var};

/// Statistic used to summarize style features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StyleMode {
    #[default]
    Gram,
    SpatialAverage,
}

impl std::str::FromStr for StyleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gram" => Ok(StyleMode::Gram),
            "spatial_average" => Ok(StyleMode::SpatialAverage),
            _ => Err(Error::field(
                "style_target",
                "must be `gram` or `spatial_average`",
            )),
        }
    }
}

/// `C × C` feature correlations normalized by `C·H·W`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    pub values: Tensor,
    pub normalizer: f64,
}

impl GramMatrix {
    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.data()[i * self.channels() + j]
    }
}

pub fn gram_matrix(features: &Tensor) -> Result<GramMatrix> {
    let (c, h, w) = features.dims3()?;
    let data = kernels::gram_forward(features.data(), c, h * w);
    Ok(GramMatrix {
        values: Tensor::new([c, c], data)?,
        normalizer: (c * h * w) as f64,
    })
}

/// Precomputed style statistics, one per style tap.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleTarget {
    mode: StyleMode,
    stats: Vec<(String, Tensor)>,
}

impl StyleTarget {
    pub fn from_features(mode: StyleMode, features: &FeatureSet) -> Result<Self> {
        let stats = features
            .iter()
            .map(|(name, f)| {
                let mut g = Graph::new();
                let x = g.constant(f.clone());
                let s = match mode {
                    StyleMode::Gram => g.gram(x)?,
                    StyleMode::SpatialAverage => g.channel_mean(x)?,
                };
                Ok((name.to_string(), g.value(s).clone()))
            })
            .collect::<Result<_>>()?;
        Ok(StyleTarget { mode, stats })
    }

    pub fn mode(&self) -> StyleMode {
        self.mode
    }

    pub fn taps(&self) -> impl Iterator<Item = &str> {
        self.stats.iter().map(|(n, _)| n.as_str())
    }

    pub fn statistic(&self, tap: &str) -> Option<&Tensor> {
        self.stats.iter().find(|(n, _)| n == tap).map(|(_, t)| t)
    }
}

/// Loss breakdown for one iterate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub content: f64,
    pub style: f64,
    pub tv: f64,
    pub total: f64,
}

pub const LOSS_CSV_HEADER: &str = "iteration,content,style,tv,total";

impl LossReport {
    /// One CSV row; floats use Rust's shortest round-trip formatting.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.iteration, self.content, self.style, self.tv, self.total
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let bad = || Error::Format(format!("malformed loss row `{line}`"));
        let mut parts = line.trim().split(',');
        let iteration = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let mut next =
            || -> Result<f64> { parts.next().ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let report = LossReport {
            iteration,
            content: next()?,
            style: next()?,
            tv: next()?,
            total: next()?,
        };
        Ok(report)
    }
}

/// Renders a loss history as CSV with a header line.
pub fn history_csv(history: &[LossReport]) -> String {
    let mut out = String::with_capacity(32 * (history.len() + 1));
    out.push_str(LOSS_CSV_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Mean over taps of the mean squared error between activations.
pub fn content_loss(
    graph: &mut Graph,
    generated: &LinkedFeatures,
    target: &FeatureSet,
    taps: &[String],
) -> Result<Var> {
    if taps.is_empty() {
        return Err(Error::config("content loss needs at least one tap"));
    }
    let mut terms = Vec::with_capacity(taps.len());
    for tap in taps {
        let g = generated
            .get(tap)
            .ok_or_else(|| Error::config(format!("generated features lack content tap `{tap}`")))?;
        let t = target
            .get(tap)
            .ok_or_else(|| Error::config(format!("content target lacks tap `{tap}`")))?;
        if graph.shape(g) != t.shape() {
            return Err(Error::config(format!(
                "content tap `{tap}`: generated {:?} vs target {:?}",
                graph.shape(g),
                t.shape()
            )));
        }
        let t = graph.constant(t.clone());
        let d = graph.sub(g, t)?;
        let sq = graph.square(d)?;
        terms.push(graph.mean(sq)?);
    }
    let sum = graph.add_all(&terms)?;
    graph.scale(sum, 1.0 / taps.len() as f64)
}

/// Sum over style taps of the squared distance between statistics.
pub fn style_loss(
    graph: &mut Graph,
    generated: &LinkedFeatures,
    target: &StyleTarget,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(target.stats.len());
    for (tap, stat) in &target.stats {
        let f = generated
            .get(tap)
            .ok_or_else(|| Error::config(format!("generated features lack style tap `{tap}`")))?;
        let s = match target.mode {
            StyleMode::Gram => graph.gram(f)?,
            StyleMode::SpatialAverage => graph.channel_mean(f)?,
        };
        if graph.shape(s) != stat.shape() {
            return Err(Error::config(format!(
                "style tap `{tap}`: generated statistic {:?} vs target {:?}",
                graph.shape(s),
                stat.shape()
            )));
        }
        let t = graph.constant(stat.clone());
        let d = graph.sub(s, t)?;
        let sq = graph.square(d)?;
        terms.push(graph.sum(sq)?);
    }
    if terms.is_empty() {
        return Ok(graph.constant(Tensor::scalar(0.0)));
    }
    graph.add_all(&terms)
}

pub fn tv_loss(graph: &mut Graph, image: Var) -> Result<Var> {
    let (_, h, w) = graph.value(image).dims3()?;
    if h < 2 || w < 2 {
        return Err(Error::config(format!(
            "total variation needs H, W ≥ 2, got {h}×{w}"
        )));
    }
    graph.total_variation(image)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub content: f64,
    pub style: f64,
    pub tv: f64,
}

impl LossWeights {
    pub fn from_config(config: &TransferConfig) -> Self {
        LossWeights {
            content: config.content_weight,
            style: config.style_weight,
            tv: config.tv_strength,
        }
    }

    pub fn combine(&self, iteration: usize, content: f64, style: f64, tv: f64) -> LossReport {
        LossReport {
            iteration,
            content,
            style,
            tv,
            total: self.content * content + self.style * style + self.tv * tv,
        }
    }
}

/// Records the weighted objective for `image` on `graph`. Returns the
/// differentiable total and the numeric breakdown.
pub fn total_objective(
    graph: &mut Graph,
    image: Var,
    config: &TransferConfig,
    content_target: &FeatureSet,
    style_target: &StyleTarget,
    net: &LossNetwork,
) -> Result<(LossReport, Var)> {
    let mut taps = config.content_taps.clone();
    for t in style_target.taps() {
        if !taps.iter().any(|c| c == t) {
            taps.push(t.to_string());
        }
    }
    let features = net.forward_taps(graph, image, &taps)?;
    let content = content_loss(graph, &features, content_target, &config.content_taps)?;
    let style = style_loss(graph, &features, style_target)?;
    let tv = tv_loss(graph, image)?;

    let weights = LossWeights::from_config(config);
    let report = weights.combine(
        0,
        graph.scalar(content)?,
        graph.scalar(style)?,
        graph.scalar(tv)?,
    );
    let wc = graph.scale(content, weights.content)?;
    let ws = graph.scale(style, weights.style)?;
    let wt = graph.scale(tv, weights.tv)?;
    let total = graph.add_all(&[wc, ws, wt])?;
    Ok((report, total))
}

/// The objective of one run with its targets precomputed.
#[derive(Clone, Debug)]
pub struct Objective {
    net: LossNetwork,
    config: TransferConfig,
    content_target: FeatureSet,
    style_target: StyleTarget,
}

impl Objective {
    /// Extracts content features and style statistics once; both images are
    /// preprocessed tensors.
    pub fn new(
        net: &LossNetwork,
        config: &TransferConfig,
        content: &Tensor,
        style: &Tensor,
    ) -> Result<Self> {
        net.check_taps(&config.content_taps)?;
        net.check_taps(&config.style_taps)?;
        let content_target = net.extract_features(content, &config.content_taps)?;
        let style_features = net.extract_features(style, &config.style_taps)?;
        let style_target = StyleTarget::from_features(config.style_target, &style_features)?;
        Ok(Objective {
            net: net.clone(),
            config: config.clone(),
            content_target,
            style_target,
        })
    }

    pub fn content_target(&self) -> &FeatureSet {
        &self.content_target
    }

    pub fn style_target(&self) -> &StyleTarget {
        &self.style_target
    }

    /// Loss breakdown only, no gradient.
    pub fn report(&self, image: &Tensor) -> Result<LossReport> {
        let mut graph = Graph::new();
        let x = graph.constant(image.clone());
        let (report, _) = total_objective(
            &mut graph,
            x,
            &self.config,
            &self.content_target,
            &self.style_target,
            &self.net,
        )?;
        Ok(report)
    }

    /// Loss breakdown and gradient of the total with respect to the pixels.
    pub fn evaluate(&self, image: &Tensor) -> Result<(LossReport, Tensor)> {
        let mut graph = Graph::new();
        let x = graph.variable(image.clone());
        let (report, total) = total_objective(
            &mut graph,
            x,
            &self.config,
            &self.content_target,
            &self.style_target,
            &self.net,
        )?;
        let mut grads = graph.backward(total)?;
        let grad = grads.remove(x).expect("image is a requires_grad leaf");
        Ok((report, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn linked(graph: &mut Graph, tap: &str, value: Tensor) -> LinkedFeatures {
        let v = graph.variable(value);
        LinkedFeatures::from_entries(vec![(tap.to_string(), v)])
    }

    #[test]
    fn gram_of_two_scalar_channels() {
        let g = gram_matrix(&t(&[2, 1, 1], &[1.0, 2.0])).unwrap();
        assert_eq!(g.values.data(), &[0.5, 1.0, 1.0, 2.0]);
        assert_eq!(g.normalizer, 2.0);
    }

    #[test]
    fn gram_of_zero_is_zero() {
        let g = gram_matrix(&Tensor::zeros([4, 3, 3])).unwrap();
        assert!(g.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn content_mse_by_hand() {
        let mut graph = Graph::new();
        let gen = linked(&mut graph, "a", t(&[1, 1, 2], &[0.0, 0.0]));
        let target = FeatureSet::from_entries(vec![("a".into(), t(&[1, 1, 2], &[2.0, 2.0]))]);
        let taps = vec!["a".to_string()];
        let l = content_loss(&mut graph, &gen, &target, &taps).unwrap();
        assert_eq!(graph.scalar(l).unwrap(), 4.0);
    }

    #[test]
    fn content_identity_is_zero_and_empty_taps_fail() {
        let mut graph = Graph::new();
        let v = t(&[2, 2, 2], &[1.0, -2.0, 3.0, 0.5, 0.0, 1.0, 2.0, 3.0]);
        let gen = linked(&mut graph, "a", v.clone());
        let target = FeatureSet::from_entries(vec![("a".into(), v)]);
        let l = content_loss(&mut graph, &gen, &target, &["a".to_string()]).unwrap();
        assert_eq!(graph.scalar(l).unwrap(), 0.0);
        assert!(content_loss(&mut graph, &gen, &target, &[]).is_err());
    }

    #[test]
    fn content_shape_mismatch_names_tap() {
        let mut graph = Graph::new();
        let gen = linked(&mut graph, "relu1_2", Tensor::zeros([1, 2, 2]));
        let target = FeatureSet::from_entries(vec![("relu1_2".into(), Tensor::zeros([1, 3, 3]))]);
        let err = content_loss(&mut graph, &gen, &target, &["relu1_2".to_string()]).unwrap_err();
        assert!(err.to_string().contains("relu1_2"));
    }

    #[test]
    fn gram_style_loss_with_unit_difference() {
        // Features with Gram [[0.5,1],[1,2]]; target all entries one lower.
        let mut graph = Graph::new();
        let gen = linked(&mut graph, "a", t(&[2, 1, 1], &[1.0, 2.0]));
        let target = StyleTarget {
            mode: StyleMode::Gram,
            stats: vec![("a".into(), t(&[2, 2], &[-0.5, 0.0, 0.0, 1.0]))],
        };
        let l = style_loss(&mut graph, &gen, &target).unwrap();
        assert_eq!(graph.scalar(l).unwrap(), 4.0);
    }

    #[test]
    fn spatial_average_style_loss() {
        let mut graph = Graph::new();
        let gen = linked(&mut graph, "a", t(&[2, 1, 2], &[0.0, 2.0, 3.0, 3.0]));
        let target = StyleTarget {
            mode: StyleMode::SpatialAverage,
            stats: vec![("a".into(), t(&[2], &[1.0, 1.0]))],
        };
        let l = style_loss(&mut graph, &gen, &target).unwrap();
        assert_eq!(graph.scalar(l).unwrap(), 4.0);
    }

    #[test]
    fn style_identity_is_zero_and_missing_tap_fails() {
        let f = t(&[2, 2, 2], &[1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 0.5]);
        let fs = FeatureSet::from_entries(vec![("a".into(), f.clone())]);
        for mode in [StyleMode::Gram, StyleMode::SpatialAverage] {
            let target = StyleTarget::from_features(mode, &fs).unwrap();
            let mut graph = Graph::new();
            let gen = linked(&mut graph, "a", f.clone());
            let l = style_loss(&mut graph, &gen, &target).unwrap();
            assert_eq!(graph.scalar(l).unwrap(), 0.0);
            let other = linked(&mut graph, "b", f.clone());
            assert!(style_loss(&mut graph, &other, &target).is_err());
        }
    }

    #[test]
    fn tv_cases() {
        let mut graph = Graph::new();
        let x = graph.constant(t(&[1, 2, 2], &[0.0, 1.0, 2.0, 3.0]));
        let l = tv_loss(&mut graph, x).unwrap();
        assert_eq!(graph.scalar(l).unwrap(), 10.0);

        let c = graph.constant(Tensor::full([3, 5, 4], 0.3));
        let l = tv_loss(&mut graph, c).unwrap();
        assert_eq!(graph.scalar(l).unwrap(), 0.0);

        let thin = graph.constant(Tensor::zeros([3, 1, 4]));
        assert!(tv_loss(&mut graph, thin).is_err());
    }

    #[test]
    fn loss_rows_round_trip() {
        let r = LossReport {
            iteration: 12,
            content: 0.1,
            style: 1e-7,
            tv: 3.25,
            total: 123.456,
        };
        assert_eq!(r.csv_row(), "12,0.1,0.0000001,3.25,123.456");
        assert_eq!(LossReport::parse_csv_row(&r.csv_row()).unwrap(), r);
        assert!(LossReport::parse_csv_row("1,2,3").is_err());
    }
}
