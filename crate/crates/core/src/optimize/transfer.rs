use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::lbfgs::{Evaluation, LbfgsState, StepKind};
use crate::config::{InitMode, OptimizerKind, TransferConfig};
use crate::error::{Error, Result};
use crate::imaging::{self, deprocess, preprocess, RgbImage};
use crate::network::LossNetwork;
use crate::objective::{LossReport, Objective};
use crate::tensor::Tensor;

/// Adam steps are taken in 8-bit intensity units: a learning rate of 1 moves
/// a pixel by at most about one gray level (1/255 of the `[0, 1]` range).
pub const ADAM_STEP_UNIT: f64 = 1.0 / 255.0;

/// Receives progress from a running transfer, on the run's own thread.
pub trait ProgressSink {
    fn on_report(&mut self, _report: &LossReport) {}

    fn on_frame(&mut self, _iteration: usize, _frame: &RgbImage) {}

    /// Polled once per iteration boundary.
    fn cancelled(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NullSink;

impl ProgressSink for NullSink {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub iteration: usize,
    pub image: RgbImage,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunOutcome {
    Completed,
    /// Stopped at an iteration boundary; `after` iterations were completed.
    Cancelled {
        after: usize,
    },
    /// A non-finite loss or gradient appeared during iteration `after + 1`.
    Aborted {
        after: usize,
        reason: String,
    },
}

#[derive(Clone, Debug)]
pub struct TransferResult {
    pub final_image: RgbImage,
    pub final_pixels: Tensor,
    /// The initial image, every `save_every`-th iterate, and the final iterate.
    pub frames: Vec<Frame>,
    /// One report per completed iteration; `history[i].iteration == i + 1`.
    pub history: Vec<LossReport>,
    /// Losses of the initial image.
    pub initial: LossReport,
    /// Iterations where L-BFGS could not find an acceptable step.
    pub stalled_iterations: Vec<usize>,
    pub outcome: RunOutcome,
}

impl TransferResult {
    pub fn is_completed(&self) -> bool {
        self.outcome == RunOutcome::Completed
    }

    /// Losses after `iteration` steps (`0` is the initial image).
    pub fn report_at(&self, iteration: usize) -> Option<&LossReport> {
        match iteration {
            0 => Some(&self.initial),
            i => self.history.get(i - 1),
        }
    }
}

/// Snapshot iterations for a run: 0, every multiple of `save_every`, and the
/// last iteration.
pub fn frame_iterations(num_iterations: usize, save_every: usize) -> Vec<usize> {
    let mut its: Vec<usize> = (0..=num_iterations).step_by(save_every.max(1)).collect();
    if its.last() != Some(&num_iterations) {
        its.push(num_iterations);
    }
    its
}

/// Resizes both inputs to the configured working size and center-crops them
/// to extents the network can process at every configured tap.
pub fn prepare_images(
    content: &RgbImage,
    style: &RgbImage,
    config: &TransferConfig,
    net: &LossNetwork,
) -> Result<(RgbImage, RgbImage)> {
    let mut taps = config.content_taps.clone();
    taps.extend(config.style_taps.iter().cloned());
    taps.sort();
    taps.dedup();
    let fit = |img: &RgbImage| -> Result<RgbImage> {
        let resized = imaging::resize_bilinear(img, config.image_size)?;
        let w = net.compatible_extent(resized.width(), &taps)?;
        let h = net.compatible_extent(resized.height(), &taps)?;
        Ok(if (w, h) == (resized.width(), resized.height()) {
            resized
        } else {
            resized.center_crop(w, h)
        })
    };
    Ok((fit(content)?, fit(style)?))
}

/// Stylizes `content` with `style`.
pub fn run_transfer(
    content: &RgbImage,
    style: &RgbImage,
    config: &TransferConfig,
    net: &LossNetwork,
    sink: &mut dyn ProgressSink,
) -> Result<TransferResult> {
    config.validate()?;
    let (content, style) = prepare_images(content, style, config, net)?;
    run_transfer_prepared(
        &preprocess(&content, net),
        &preprocess(&style, net),
        config,
        net,
        sink,
    )
}

fn initial_pixels(content: &Tensor, config: &TransferConfig, means: [f64; 3]) -> Tensor {
    match config.init {
        InitMode::Content => content.clone(),
        InitMode::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut x = Tensor::zeros(content.shape().to_vec());
            let plane = x.len() / 3;
            for (i, v) in x.data_mut().iter_mut().enumerate() {
                let m = means[i / plane];
                *v = rng.random_range(-m..1.0 - m);
            }
            x
        }
    }
}

fn pixel_bounds(shape: &[usize], means: [f64; 3]) -> (Vec<f64>, Vec<f64>) {
    let n: usize = shape.iter().product();
    let plane = n / 3;
    let lower = (0..n).map(|i| -means[i / plane]).collect();
    let upper = (0..n).map(|i| 1.0 - means[i / plane]).collect();
    (lower, upper)
}

struct Recorder<'a> {
    sink: &'a mut dyn ProgressSink,
    net: &'a LossNetwork,
    snapshots: Vec<usize>,
    frames: Vec<Frame>,
    history: Vec<LossReport>,
}

impl Recorder<'_> {
    fn frame(&mut self, iteration: usize, pixels: &Tensor) -> Result<()> {
        if self.frames.last().is_some_and(|f| f.iteration == iteration) {
            return Ok(());
        }
        let image = deprocess(pixels, self.net)?;
        self.sink.on_frame(iteration, &image);
        self.frames.push(Frame { iteration, image });
        Ok(())
    }

    fn iteration(&mut self, report: LossReport, pixels: &Tensor) -> Result<()> {
        self.sink.on_report(&report);
        self.history.push(report);
        if self.snapshots.binary_search(&report.iteration).is_ok() {
            self.frame(report.iteration, pixels)?;
        }
        Ok(())
    }
}

/// Runs the optimization on preprocessed `3 × H × W` tensors that already
/// have working-size extents.
pub fn run_transfer_prepared(
    content: &Tensor,
    style: &Tensor,
    config: &TransferConfig,
    net: &LossNetwork,
    sink: &mut dyn ProgressSink,
) -> Result<TransferResult> {
    config.validate()?;
    let objective = Objective::new(net, config, content, style)?;
    let means = net.channel_means();
    let shape = content.shape().to_vec();
    let mut pixels = initial_pixels(content, config, means);
    let n = config.num_iterations;

    let mut rec = Recorder {
        sink,
        net,
        snapshots: frame_iterations(n, config.save_every),
        frames: Vec::new(),
        history: Vec::with_capacity(n),
    };
    let mut stalled = Vec::new();
    let mut outcome = RunOutcome::Completed;
    rec.frame(0, &pixels)?;

    let initial = match config.optimizer {
        OptimizerKind::Adam => {
            let (initial, mut grad) = objective.evaluate(&pixels)?;
            let (lower, upper) = pixel_bounds(&shape, means);
            let mut state = AdamState::new(pixels.len());
            let step_size = config.learning_rate * ADAM_STEP_UNIT;
            for i in 1..=n {
                if rec.sink.cancelled() {
                    outcome = RunOutcome::Cancelled { after: i - 1 };
                    break;
                }
                let previous = pixels.clone();
                let evaluated =
                    adam_step(&mut state, &mut pixels, &grad, step_size).and_then(|()| {
                        for ((v, lo), hi) in pixels.data_mut().iter_mut().zip(&lower).zip(&upper) {
                            *v = v.clamp(*lo, *hi);
                        }
                        objective.evaluate(&pixels)
                    });
                match evaluated {
                    Ok((mut report, g)) => {
                        report.iteration = i;
                        grad = g;
                        rec.iteration(report, &pixels)?;
                    }
                    Err(Error::NonFinite(reason)) => {
                        pixels = previous;
                        outcome = RunOutcome::Aborted {
                            after: i - 1,
                            reason,
                        };
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            initial
        }
        OptimizerKind::Lbfgs => {
            let mut evaluate = |x: &[f64]| -> Result<Evaluation<LossReport>> {
                let t = Tensor::new(shape.clone(), x.to_vec())?;
                let (report, grad) = objective.evaluate(&t)?;
                Ok(Evaluation {
                    loss: report.total,
                    grad: grad.into_data(),
                    aux: report,
                })
            };
            let (lower, upper) = pixel_bounds(&shape, means);
            let mut state =
                LbfgsState::new(pixels.data().to_vec(), &mut evaluate)?.with_bounds(lower, upper);
            let initial = state.current().aux;
            for i in 1..=n {
                if rec.sink.cancelled() {
                    outcome = RunOutcome::Cancelled { after: i - 1 };
                    break;
                }
                match state.step(&mut evaluate) {
                    Ok(step) => {
                        if step.kind == StepKind::Stalled {
                            stalled.push(i);
                        }
                        pixels.data_mut().copy_from_slice(state.point());
                        let report = LossReport {
                            iteration: i,
                            ..state.current().aux
                        };
                        rec.iteration(report, &pixels)?;
                    }
                    Err(Error::NonFinite(reason)) => {
                        outcome = RunOutcome::Aborted {
                            after: i - 1,
                            reason,
                        };
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            initial
        }
    };

    // The last good iterate is always kept as a frame.
    let last = rec.history.last().map_or(0, |r| r.iteration);
    if outcome != RunOutcome::Completed || last == n {
        rec.frame(last, &pixels)?;
    }

    let Recorder {
        frames, history, ..
    } = rec;
    Ok(TransferResult {
        final_image: deprocess(&pixels, net)?,
        final_pixels: pixels,
        frames,
        history,
        initial: LossReport {
            iteration: 0,
            ..initial
        },
        stalled_iterations: stalled,
        outcome,
    })
}
