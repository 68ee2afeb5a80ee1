use std::collections::BTreeMap;
use std::sync::Arc;

use super::kernels::{self, ConvGeometry};
use super::{ensure_same_shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geometry: ConvGeometry,
    },
    AvgPool {
        input: Var,
        window: usize,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Gram(Var),
    ChannelMean(Var),
    TotalVariation(Var),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A tape of recorded operations. Nodes are appended in evaluation order, so
/// the tape is always topologically sorted and acyclic.
///
/// A graph is confined to one evaluation; [`Graph::backward`] consumes it.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every `requires_grad` leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    map: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.map.get(&var)
    }

    pub fn remove(&mut self, var: Var) -> Option<Tensor> {
        self.map.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.map.iter().map(|(v, t)| (*v, t))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: impl Into<Arc<Tensor>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: value.into(),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that gradients are tracked for.
    pub fn variable(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.leaf(value, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Value of a one-element node.
    pub fn scalar(&self, var: Var) -> Result<f64> {
        self.value(var).item().ok_or_else(|| {
            Error::Usage(format!(
                "expected a scalar, got shape {:?}",
                self.shape(var)
            ))
        })
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        ensure_same_shape(name, va, vb)?;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        self.push(name, out, op, &[a, b])
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let va = self.value(a);
        let out = Tensor::from_parts(
            va.shape().to_vec(),
            va.data().iter().map(|&x| f(x)).collect(),
        );
        self.push(name, out, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.unary("scale", a, |x| k * x, Op::Scale(a, k))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// Sum of scalar nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Usage("add_all needs at least one term".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (vi, vw, vb) = (self.value(input), self.value(weight), self.value(bias));
        let mismatch = || Error::ShapeMismatch {
            op: "conv2d",
            lhs: vi.shape().to_vec(),
            rhs: vw.shape().to_vec(),
        };
        let (c_in, h, w) = vi.dims3()?;
        let [c_out, wc_in, kh, kw] = vw.shape()[..] else {
            return Err(mismatch());
        };
        if wc_in != c_in || kh != kw || vb.shape() != [c_out] {
            return Err(mismatch());
        }
        if stride == 0 {
            return Err(Error::config("conv2d stride must be positive"));
        }
        let geometry =
            ConvGeometry::new(c_in, c_out, kh, (h, w), stride, padding).ok_or_else(mismatch)?;
        let data = kernels::conv2d_forward(&geometry, vi.data(), vw.data(), vb.data());
        let out = Tensor::from_parts(vec![c_out, geometry.out_height, geometry.out_width], data);
        self.push(
            "conv2d",
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
            },
            &[input, weight, bias],
        )
    }

    fn pool_dims(&self, name: &str, input: Var, window: usize) -> Result<(usize, usize, usize)> {
        let (c, h, w) = self.value(input).dims3()?;
        if window == 0 || h % window != 0 || w % window != 0 {
            return Err(Error::config(format!(
                "{name}: extents {h}×{w} are not divisible by window {window}"
            )));
        }
        Ok((c, h, w))
    }

    pub fn avg_pool2d(&mut self, input: Var, window: usize) -> Result<Var> {
        let dims = self.pool_dims("avg_pool2d", input, window)?;
        let data = kernels::avg_pool_forward(self.value(input).data(), dims, window);
        let out = Tensor::from_parts(vec![dims.0, dims.1 / window, dims.2 / window], data);
        self.push("avg_pool2d", out, Op::AvgPool { input, window }, &[input])
    }

    pub fn max_pool2d(&mut self, input: Var, window: usize) -> Result<Var> {
        let dims = self.pool_dims("max_pool2d", input, window)?;
        let (data, argmax) = kernels::max_pool_forward(self.value(input).data(), dims, window);
        let out = Tensor::from_parts(vec![dims.0, dims.1 / window, dims.2 / window], data);
        self.push("max_pool2d", out, Op::MaxPool { input, argmax }, &[input])
    }

    /// `C × C` Gram matrix normalized by `C·H·W`.
    pub fn gram(&mut self, features: Var) -> Result<Var> {
        let (c, h, w) = self.value(features).dims3()?;
        let data = kernels::gram_forward(self.value(features).data(), c, h * w);
        self.push(
            "gram",
            Tensor::from_parts(vec![c, c], data),
            Op::Gram(features),
            &[features],
        )
    }

    /// Per-channel spatial mean, shape `[C]`.
    pub fn channel_mean(&mut self, features: Var) -> Result<Var> {
        let (c, h, w) = self.value(features).dims3()?;
        let n = (h * w) as f64;
        let data = self
            .value(features)
            .data()
            .chunks_exact(h * w)
            .map(|plane| plane.iter().sum::<f64>() / n)
            .collect();
        self.push(
            "channel_mean",
            Tensor::from_parts(vec![c], data),
            Op::ChannelMean(features),
            &[features],
        )
    }

    /// Anisotropic squared total variation, a scalar.
    pub fn total_variation(&mut self, image: Var) -> Result<Var> {
        let dims = self.value(image).dims3()?;
        let tv = kernels::tv_forward(self.value(image).data(), dims);
        self.push(
            "total_variation",
            Tensor::scalar(tv),
            Op::TotalVariation(image),
            &[image],
        )
    }

    /// Reverse-mode pass from a scalar root. Every `requires_grad` leaf gets
    /// an entry, zero when the root does not depend on it.
    pub fn backward(self, root: Var) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        if nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }

        fn acc<'a>(
            grads: &'a mut [Option<Vec<f64>>],
            nodes: &[Node],
            v: Var,
        ) -> Option<&'a mut [f64]> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            let len = nodes[v.0].value.len();
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(d) = acc(&mut grads, &nodes, v) {
                            d.iter_mut().zip(&g).for_each(|(d, g)| *d += g);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(d) = acc(&mut grads, &nodes, *a) {
                        d.iter_mut().zip(&g).for_each(|(d, g)| *d += g);
                    }
                    if let Some(d) = acc(&mut grads, &nodes, *b) {
                        d.iter_mut().zip(&g).for_each(|(d, g)| *d -= g);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[a.0].value.clone(), nodes[b.0].value.clone());
                    if let Some(d) = acc(&mut grads, &nodes, *a) {
                        for ((d, g), y) in d.iter_mut().zip(&g).zip(vb.data()) {
                            *d += g * y;
                        }
                    }
                    if let Some(d) = acc(&mut grads, &nodes, *b) {
                        for ((d, g), x) in d.iter_mut().zip(&g).zip(va.data()) {
                            *d += g * x;
                        }
                    }
                }
                Op::Scale(a, k) => {
                    if let Some(d) = acc(&mut grads, &nodes, *a) {
                        d.iter_mut().zip(&g).for_each(|(d, g)| *d += k * g);
                    }
                }
                Op::Square(a) => {
                    let va = nodes[a.0].value.clone();
                    if let Some(d) = acc(&mut grads, &nodes, *a) {
                        for ((d, g), x) in d.iter_mut().zip(&g).zip(va.data()) {
                            *d += 2.0 * x * g;
                        }
                    }
                }
                Op::Sum(a) => {
                    if let Some(d) = acc(&mut grads, &nodes, *a) {
                        d.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::Mean(a) => {
                    if let Some(d) = acc(&mut grads, &nodes, *a) {
                        let share = g[0] / d.len() as f64;
                        d.iter_mut().for_each(|d| *d += share);
                    }
                }
                Op::Relu(a) => {
                    let va = nodes[a.0].value.clone();
                    if let Some(d) = acc(&mut grads, &nodes, *a) {
                        for ((d, g), x) in d.iter_mut().zip(&g).zip(va.data()) {
                            if *x > 0.0 {
                                *d += g;
                            }
                        }
                    }
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geometry,
                } => {
                    let vw = nodes[weight.0].value.clone();
                    let vi = nodes[input.0].value.clone();
                    if let Some(d) = acc(&mut grads, &nodes, *input) {
                        kernels::conv2d_backward_input(geometry, &g, vw.data(), d);
                    }
                    let weight_grad = nodes[weight.0].requires_grad || nodes[bias.0].requires_grad;
                    if weight_grad {
                        let mut gw = vec![0.0; vw.len()];
                        let mut gb = vec![0.0; geometry.out_channels];
                        kernels::conv2d_backward_params(geometry, &g, vi.data(), &mut gw, &mut gb);
                        if let Some(d) = acc(&mut grads, &nodes, *weight) {
                            d.iter_mut().zip(&gw).for_each(|(d, g)| *d += g);
                        }
                        if let Some(d) = acc(&mut grads, &nodes, *bias) {
                            d.iter_mut().zip(&gb).for_each(|(d, g)| *d += g);
                        }
                    }
                }
                Op::AvgPool { input, window } => {
                    let dims = nodes[input.0].value.dims3()?;
                    if let Some(d) = acc(&mut grads, &nodes, *input) {
                        kernels::avg_pool_backward(&g, dims, *window, d);
                    }
                }
                Op::MaxPool { input, argmax } => {
                    if let Some(d) = acc(&mut grads, &nodes, *input) {
                        for (&src, gv) in argmax.iter().zip(&g) {
                            d[src] += gv;
                        }
                    }
                }
                Op::Gram(f) => {
                    let vf = nodes[f.0].value.clone();
                    let (c, h, w) = vf.dims3()?;
                    if let Some(d) = acc(&mut grads, &nodes, *f) {
                        kernels::gram_backward(&g, vf.data(), c, h * w, d);
                    }
                }
                Op::ChannelMean(f) => {
                    let (_, h, w) = nodes[f.0].value.dims3()?;
                    let n = h * w;
                    if let Some(d) = acc(&mut grads, &nodes, *f) {
                        for (plane, gv) in d.chunks_exact_mut(n).zip(&g) {
                            let share = gv / n as f64;
                            plane.iter_mut().for_each(|d| *d += share);
                        }
                    }
                }
                Op::TotalVariation(x) => {
                    let vx = nodes[x.0].value.clone();
                    let dims = vx.dims3()?;
                    if let Some(d) = acc(&mut grads, &nodes, *x) {
                        kernels::tv_backward(g[0], vx.data(), dims, d);
                    }
                }
            }
        }

        let mut map = BTreeMap::new();
        for (idx, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let data = grads[idx]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("backward".into()));
                }
                map.insert(
                    Var(idx),
                    Tensor::from_parts(node.value.shape().to_vec(), data),
                );
            }
        }
        Ok(Gradients { map })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_gradient_at_three() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constant_root_has_no_gradients() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let y = g.scale(c, 3.0).unwrap();
        assert!(g.backward(y).unwrap().is_empty());
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::zeros([2]));
        assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(1.0));
        let z = g.variable(Tensor::zeros([3]));
        let y = g.square(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(z).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn relu_values_and_subgradient() {
        let mut g = Graph::new();
        let x = g.variable(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_of_negative_tensor_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[-1.0, -2.0, -0.5, -3.0]));
        let y = g.relu(x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_scalar_kernel_scales() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.constant(t(&[1, 1, 1, 1], &[2.0]));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 2]);
        assert_eq!(g.value(y).data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn conv_all_ones_sums_window() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full([1, 3, 3], 1.0));
        let w = g.constant(Tensor::full([1, 1, 3, 3], 1.0));
        let b = g.constant(Tensor::zeros([1]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);
    }

    #[test]
    fn conv_of_zero_input_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([2, 5, 5]));
        let w = g.constant(Tensor::full([3, 2, 3, 3], 0.7));
        let b = g.constant(Tensor::zeros([3]));
        let y = g.conv2d(x, w, b, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[3, 3, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_shape_errors_name_both_shapes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([2, 4, 4]));
        let w = g.constant(Tensor::zeros([1, 3, 3, 3]));
        let b = g.constant(Tensor::zeros([1]));
        let err = g.conv2d(x, w, b, 1, 0).unwrap_err().to_string();
        assert!(
            err.contains("[2, 4, 4]") && err.contains("[1, 3, 3, 3]"),
            "{err}"
        );

        let w = g.constant(Tensor::zeros([1, 2, 5, 5]));
        assert!(g.conv2d(x, w, b, 1, 0).is_err());
    }

    #[test]
    fn avg_pool_cases() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.avg_pool2d(x, 2).unwrap();
        assert_eq!(g.value(y).data(), &[2.5]);

        let c = g.constant(Tensor::full([2, 4, 4], 0.25));
        let y = g.avg_pool2d(c, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 2, 2]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.25));

        let y = g.avg_pool2d(x, 1).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let odd = g.constant(Tensor::zeros([1, 3, 4]));
        assert!(matches!(g.avg_pool2d(odd, 2), Err(Error::Config(_))));
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let mut g = Graph::new();
        let x = g.variable(t(&[1, 2, 2], &[1.0, 5.0, 3.0, 4.0]));
        let y = g.max_pool2d(x, 2).unwrap();
        assert_eq!(g.value(y).data(), &[5.0]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_results_are_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(1e200));
        assert!(matches!(g.mul(x, x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([2]));
        let b = g.constant(Tensor::zeros([3]));
        assert!(matches!(g.add(a, b), Err(Error::ShapeMismatch { .. })));
    }
}
