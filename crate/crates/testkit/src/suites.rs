//! Named measurements that both the unit-level tests and the acceptance
//! report assert on.

use nst_core::config::TransferConfig;
use nst_core::network::LossNetwork;
use nst_core::objective::{gram_matrix, total_objective, tv_loss, StyleMode, StyleTarget};
use nst_core::{Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::{away_from_zero, project, random, worst_relative_error, Builder};
use crate::oracles;

pub const OP_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
pub const ORACLE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Case {
    pub name: String,
    /// Worst relative (gradients) or absolute (oracles) error observed.
    pub error: f64,
    pub tolerance: f64,
}

impl Case {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

fn op_case(name: &str, build: Builder, inputs: &[Tensor]) -> Case {
    Case {
        name: name.to_string(),
        error: worst_relative_error(build, inputs, 1e-6),
        tolerance: OP_TOLERANCE,
    }
}

/// Every differentiable op, on randomized small tensors.
pub fn op_gradient_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random(&[2, 3, 4], &mut rng);
    let b = random(&[2, 3, 4], &mut rng);
    let r = away_from_zero(&[2, 3, 4], &mut rng);
    let mut cases = vec![
        op_case(
            "add",
            &|g, v| {
                let o = g.add(v[0], v[1])?;
                project(g, o, 10)
            },
            &[a.clone(), b.clone()],
        ),
        op_case(
            "sub",
            &|g, v| {
                let o = g.sub(v[0], v[1])?;
                project(g, o, 11)
            },
            &[a.clone(), b.clone()],
        ),
        op_case(
            "mul",
            &|g, v| {
                let o = g.mul(v[0], v[1])?;
                project(g, o, 12)
            },
            &[a.clone(), b],
        ),
        op_case(
            "scale",
            &|g, v| {
                let o = g.scale(v[0], -2.5)?;
                project(g, o, 13)
            },
            std::slice::from_ref(&a),
        ),
        op_case(
            "square",
            &|g, v| {
                let o = g.square(v[0])?;
                project(g, o, 14)
            },
            std::slice::from_ref(&a),
        ),
        op_case(
            "sum",
            &|g, v| {
                let o = g.square(v[0])?;
                g.sum(o)
            },
            std::slice::from_ref(&a),
        ),
        op_case(
            "mean",
            &|g, v| {
                let o = g.square(v[0])?;
                g.mean(o)
            },
            &[a],
        ),
        op_case(
            "relu",
            &|g, v| {
                let o = g.relu(v[0])?;
                project(g, o, 15)
            },
            &[r],
        ),
    ];
    for (stride, padding) in [(1, 0), (1, 1), (2, 0), (2, 1)] {
        let x = random(&[3, 7, 6], &mut rng);
        let w = random(&[4, 3, 3, 3], &mut rng);
        let bias = random(&[4], &mut rng);
        let build = move |g: &mut Graph, v: &[Var]| -> Result<Var> {
            let o = g.conv2d(v[0], v[1], v[2], stride, padding)?;
            project(g, o, 20)
        };
        cases.push(op_case(
            &format!("conv2d stride {stride} pad {padding}"),
            &build,
            &[x, w, bias],
        ));
    }
    let x = random(&[2, 6, 8], &mut rng);
    cases.push(op_case(
        "avg_pool2d",
        &|g, v| {
            let o = g.avg_pool2d(v[0], 2)?;
            project(g, o, 30)
        },
        std::slice::from_ref(&x),
    ));
    cases.push(op_case(
        "max_pool2d",
        &|g, v| {
            let o = g.max_pool2d(v[0], 2)?;
            project(g, o, 31)
        },
        &[x],
    ));
    let f = random(&[4, 5, 3], &mut rng);
    cases.push(op_case(
        "gram",
        &|g, v| {
            let o = g.gram(v[0])?;
            project(g, o, 40)
        },
        std::slice::from_ref(&f),
    ));
    cases.push(op_case(
        "channel_mean",
        &|g, v| {
            let o = g.channel_mean(v[0])?;
            project(g, o, 41)
        },
        std::slice::from_ref(&f),
    ));
    cases.push(op_case(
        "total_variation",
        &|g, v| g.total_variation(v[0]),
        &[f],
    ));

    let x = random(&[3, 8, 8], &mut rng);
    let w = random(&[4, 3, 3, 3], &mut rng);
    let bias = random(&[4], &mut rng);
    let chain = |g: &mut Graph, v: &[Var]| -> Result<Var> {
        let c = g.conv2d(v[0], v[1], v[2], 1, 1)?;
        let r = g.relu(c)?;
        let p = g.avg_pool2d(r, 2)?;
        let gm = g.gram(p)?;
        let sq = g.square(gm)?;
        let s = g.sum(sq)?;
        let tv = g.total_variation(v[0])?;
        let tv = g.scale(tv, 0.1)?;
        g.add(s, tv)
    };
    cases.push(op_case("conv-relu-pool-gram chain", &chain, &[x, w, bias]));
    cases
}

fn objective_case(
    name: &str,
    size: usize,
    content_taps: &[&str],
    style_taps: &[&str],
    mode: StyleMode,
    seed: u64,
) -> Case {
    let net = LossNetwork::tiny(3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [3, size, size];
    let content = random(&shape, &mut rng);
    let style = random(&shape, &mut rng);
    let image = random(&shape, &mut rng);
    let config = TransferConfig {
        content_taps: content_taps.iter().map(|s| s.to_string()).collect(),
        style_taps: style_taps.iter().map(|s| s.to_string()).collect(),
        style_target: mode,
        content_weight: 2.0,
        style_weight: 50.0,
        tv_strength: 0.3,
        ..TransferConfig::default()
    };
    let content_target = net
        .extract_features(&content, &config.content_taps)
        .unwrap();
    let style_features = net.extract_features(&style, &config.style_taps).unwrap();
    let style_target = StyleTarget::from_features(mode, &style_features).unwrap();
    let build = |g: &mut Graph, v: &[Var]| -> Result<Var> {
        let (_, total) = total_objective(g, v[0], &config, &content_target, &style_target, &net)?;
        Ok(total)
    };
    Case {
        name: name.to_string(),
        error: worst_relative_error(&build, &[image], 1e-7),
        tolerance: END_TO_END_TOLERANCE,
    }
}

/// The full weighted objective with respect to the image.
pub fn end_to_end_gradient_cases() -> Vec<Case> {
    let defaults = TransferConfig::default();
    let content: Vec<&str> = defaults.content_taps.iter().map(String::as_str).collect();
    let style: Vec<&str> = defaults.style_taps.iter().map(String::as_str).collect();
    vec![
        objective_case(
            "objective 8x8 shallow taps, gram",
            8,
            &["relu1_2"],
            &["relu1_1", "relu1_2"],
            StyleMode::Gram,
            1,
        ),
        objective_case(
            "objective 8x8 shallow taps, gram (2)",
            8,
            &["relu1_2"],
            &["relu1_1", "relu1_2"],
            StyleMode::Gram,
            2,
        ),
        objective_case(
            "objective 8x8, spatial average",
            8,
            &["relu1_1"],
            &["relu1_2"],
            StyleMode::SpatialAverage,
            3,
        ),
        objective_case(
            "objective 16x16 default taps",
            16,
            &content,
            &style,
            StyleMode::Gram,
            4,
        ),
    ]
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (
        rng.random_range(1..=4),
        rng.random_range(2..=8),
        rng.random_range(2..=8),
    )
}

/// Engine kernels against the brute-force loops, `trials` random inputs of
/// at most `4 × 8 × 8` each.
pub fn oracle_cases(seed: u64, trials: usize) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..trials {
        let (c, h, w) = random_dims(&mut rng);
        let x = random(&[c, h, w], &mut rng);

        let engine = gram_matrix(&x).unwrap();
        worst[0] = worst[0].max(max_abs_diff(
            engine.values.data(),
            &oracles::gram(x.data(), (c, h, w)),
        ));

        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let tv = tv_loss(&mut g, v).unwrap();
        worst[1] = worst[1]
            .max((g.scalar(tv).unwrap() - oracles::total_variation(x.data(), (c, h, w))).abs());

        let (ph, pw) = (h - h % 2, w - w % 2);
        let pooled_in = random(&[c, ph, pw], &mut rng);
        let pooled = g.constant(pooled_in.clone());
        let p = g.avg_pool2d(pooled, 2).unwrap();
        let reference = oracles::avg_pool(pooled_in.data(), (c, ph, pw), 2);
        worst[2] = worst[2].max(max_abs_diff(g.value(p).data(), &reference));

        let o = rng.random_range(1..=4);
        let k = rng.random_range(1..=3usize).min(h).min(w);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=1);
        let weight = random(&[o, c, k, k], &mut rng);
        let bias = random(&[o], &mut rng);
        let (iv, wv, bv) = (
            g.constant(x.clone()),
            g.constant(weight.clone()),
            g.constant(bias.clone()),
        );
        let y = g.conv2d(iv, wv, bv, stride, pad).unwrap();
        let (reference, shape) = oracles::conv2d(
            x.data(),
            (c, h, w),
            weight.data(),
            (o, k),
            bias.data(),
            stride,
            pad,
        );
        assert_eq!(g.shape(y), [shape.0, shape.1, shape.2]);
        worst[3] = worst[3].max(max_abs_diff(g.value(y).data(), &reference));
    }
    ["gram_matrix", "tv_loss", "avg_pool", "conv2d"]
        .iter()
        .zip(worst)
        .map(|(name, error)| Case {
            name: name.to_string(),
            error,
            tolerance: ORACLE_TOLERANCE,
        })
        .collect()
}
