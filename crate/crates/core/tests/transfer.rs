use nst_core::config::{InitMode, OptimizerKind, TransferConfig};
use nst_core::fixtures::{fixture_network, portrait, texture, FIXTURE_SIZE};
use nst_core::imaging::RgbImage;
use nst_core::objective::LossReport;
use nst_core::optimize::{run_transfer, NullSink, ProgressSink, RunOutcome};
use nst_core::Error;

fn small(config: TransferConfig) -> TransferConfig {
    TransferConfig {
        image_size: 32,
        ..config
    }
}

#[test]
fn zero_iterations_returns_the_initial_image() {
    let net = fixture_network();
    let (content, style) = (portrait(32), texture(32, 0));
    let config = small(TransferConfig {
        num_iterations: 0,
        ..TransferConfig::default()
    });
    let result = run_transfer(&content, &style, &config, &net, &mut NullSink).unwrap();
    assert!(result.history.is_empty());
    assert_eq!(result.frames.len(), 1);
    assert_eq!(result.frames[0].iteration, 0);
    assert_eq!(result.final_image, content);
    assert!(result.is_completed());
}

#[test]
fn invalid_config_is_rejected_before_running() {
    struct Counting(usize);
    impl ProgressSink for Counting {
        fn on_frame(&mut self, _: usize, _: &RgbImage) {
            self.0 += 1;
        }
    }
    let net = fixture_network();
    let config = TransferConfig {
        save_every: 0,
        ..TransferConfig::default()
    };
    let mut sink = Counting(0);
    let err = run_transfer(&portrait(32), &texture(32, 0), &config, &net, &mut sink).unwrap_err();
    assert!(matches!(
        err,
        Error::InvalidField {
            field: "save_every",
            ..
        }
    ));
    assert_eq!(sink.0, 0);
}

#[test]
fn fixed_seed_is_bit_identical() {
    let net = fixture_network();
    for optimizer in [OptimizerKind::Lbfgs, OptimizerKind::Adam] {
        let config = small(TransferConfig {
            num_iterations: 12,
            save_every: 4,
            optimizer,
            learning_rate: 5.0,
            init: InitMode::Noise,
            seed: 99,
            ..TransferConfig::default()
        });
        let run =
            || run_transfer(&portrait(32), &texture(32, 2), &config, &net, &mut NullSink).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.history, b.history);
        assert_eq!(a.final_pixels, b.final_pixels);
        assert_eq!(
            a.frames.iter().map(|f| f.iteration).collect::<Vec<_>>(),
            [0, 4, 8, 12]
        );
    }
}

#[test]
fn noise_seed_changes_the_start() {
    let net = fixture_network();
    let config = |seed| {
        small(TransferConfig {
            num_iterations: 0,
            init: InitMode::Noise,
            seed,
            ..TransferConfig::default()
        })
    };
    let a = run_transfer(
        &portrait(32),
        &texture(32, 0),
        &config(1),
        &net,
        &mut NullSink,
    )
    .unwrap();
    let b = run_transfer(
        &portrait(32),
        &texture(32, 0),
        &config(2),
        &net,
        &mut NullSink,
    )
    .unwrap();
    assert_ne!(a.final_image, b.final_image);
}

#[test]
fn history_and_frames_follow_the_schedule() {
    let net = fixture_network();
    let config = small(TransferConfig {
        num_iterations: 30,
        save_every: 10,
        ..TransferConfig::default()
    });
    let result =
        run_transfer(&portrait(32), &texture(32, 1), &config, &net, &mut NullSink).unwrap();
    assert_eq!(result.history.len(), 30);
    assert!(result
        .history
        .iter()
        .enumerate()
        .all(|(i, r)| r.iteration == i + 1));
    assert_eq!(result.frames.len(), 30 / 10 + 1);
    assert_eq!(result.frames.last().unwrap().image, result.final_image);
    for r in &result.history {
        let expected = config.content_weight * r.content
            + config.style_weight * r.style
            + config.tv_strength * r.tv;
        assert!((r.total - expected).abs() <= 1e-9 * expected.max(1.0));
    }
}

#[test]
fn lbfgs_history_is_non_increasing() {
    let net = fixture_network();
    let config = TransferConfig {
        num_iterations: 60,
        image_size: FIXTURE_SIZE,
        ..TransferConfig::default()
    };
    let result = run_transfer(
        &portrait(FIXTURE_SIZE),
        &texture(FIXTURE_SIZE, 0),
        &config,
        &net,
        &mut NullSink,
    )
    .unwrap();
    let mut previous = result.initial.total;
    for r in &result.history {
        assert!(
            r.total <= previous,
            "iteration {}: {} > {}",
            r.iteration,
            r.total,
            previous
        );
        previous = r.total;
    }
    assert!(previous < result.initial.total);
}

fn identical_pair(tv_strength: f64) -> nst_core::optimize::TransferResult {
    let net = fixture_network();
    let image = portrait(FIXTURE_SIZE);
    let config = TransferConfig {
        num_iterations: 300,
        content_weight: 300.0,
        style_weight: 100.0,
        tv_strength,
        init: InitMode::Content,
        image_size: FIXTURE_SIZE,
        ..TransferConfig::default()
    };
    run_transfer(&image, &image, &config, &net, &mut NullSink).unwrap()
}

#[test]
fn identical_content_and_style_keeps_content_loss() {
    let result = identical_pair(0.0);
    let last = result.history.last().unwrap();
    assert!(
        last.content <= result.initial.content,
        "{} > {}",
        last.content,
        result.initial.content
    );
}

#[test]
fn identical_pair_with_tv_trades_content_only_for_smoothness() {
    // The start has zero content and style loss, so any content loss gained
    // must be paid for by a larger drop in weighted TV.
    let tv = 1e-6;
    let result = identical_pair(tv);
    let (first, last) = (result.initial, *result.history.last().unwrap());
    assert!(300.0 * last.content + 100.0 * last.style <= tv * (first.tv - last.tv) + 1e-12);
}

#[test]
fn adam_at_recommended_rate_keeps_improving() {
    let net = fixture_network();
    let config = TransferConfig {
        num_iterations: 200,
        optimizer: OptimizerKind::Adam,
        learning_rate: 2e1,
        image_size: FIXTURE_SIZE,
        seed: 1,
        ..TransferConfig::default()
    };
    let result = run_transfer(
        &portrait(FIXTURE_SIZE),
        &texture(FIXTURE_SIZE, 0),
        &config,
        &net,
        &mut NullSink,
    )
    .unwrap();
    let at = |i: usize| result.report_at(i).unwrap().total;
    assert!(
        at(200) < at(100) && at(100) < at(0),
        "{} {} {}",
        at(0),
        at(100),
        at(200)
    );
}

#[test]
fn cancellation_stops_at_an_iteration_boundary() {
    struct CancelAfter {
        limit: usize,
        seen: Vec<LossReport>,
    }
    impl ProgressSink for CancelAfter {
        fn on_report(&mut self, report: &LossReport) {
            self.seen.push(*report);
        }
        fn cancelled(&self) -> bool {
            self.seen.len() >= self.limit
        }
    }
    let net = fixture_network();
    let config = small(TransferConfig {
        num_iterations: 50,
        save_every: 2,
        ..TransferConfig::default()
    });
    let mut sink = CancelAfter {
        limit: 5,
        seen: Vec::new(),
    };
    let result = run_transfer(&portrait(32), &texture(32, 0), &config, &net, &mut sink).unwrap();
    assert_eq!(result.outcome, RunOutcome::Cancelled { after: 5 });
    assert_eq!(result.history, sink.seen);
    // Partial frames are kept, including the last completed iterate.
    let its: Vec<usize> = result.frames.iter().map(|f| f.iteration).collect();
    assert_eq!(its, [0, 2, 4, 5]);
}

#[test]
fn non_square_inputs_are_cropped_to_compatible_extents() {
    let net = fixture_network();
    let content = RgbImage::filled(50, 37, [120, 80, 40]);
    let config = small(TransferConfig {
        num_iterations: 2,
        ..TransferConfig::default()
    });
    let result = run_transfer(&content, &texture(40, 3), &config, &net, &mut NullSink).unwrap();
    let (w, h) = (result.final_image.width(), result.final_image.height());
    assert!(w <= 32 && h <= 32 && w > h);
}
