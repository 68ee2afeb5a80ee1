use std::fs;
use std::path::Path;

use nst_core::config::TransferConfig;
use nst_core::experiments::{run_sweep, SweepOptions, SweepParameter, SweepSpec};
use nst_core::fixtures::{fixture_network, portrait, texture, FIXTURE_SIZE};
use nst_core::imaging::{load_png, save_png, sheet_dimensions, SheetLayout};
use nst_core::objective::LOSS_CSV_HEADER;
use nst_core::Error;

fn write_inputs(dir: &Path, size: usize) -> (Vec<std::path::PathBuf>, Vec<std::path::PathBuf>) {
    let content = dir.join("face.png");
    save_png(&portrait(size), &content).unwrap();
    let styles: Vec<_> = (0..2)
        .map(|v| {
            let p = dir.join(format!("stripes{v}.png"));
            save_png(&texture(size, v), &p).unwrap();
            p
        })
        .collect();
    (vec![content], styles)
}

fn spec(
    dir: &Path,
    out: &str,
    parameter: SweepParameter,
    values: &[f64],
    iterations: usize,
) -> SweepSpec {
    sized_spec(dir, out, parameter, values, iterations, 32)
}

fn sized_spec(
    dir: &Path,
    out: &str,
    parameter: SweepParameter,
    values: &[f64],
    iterations: usize,
    size: usize,
) -> SweepSpec {
    let (content_images, style_images) = write_inputs(dir, size);
    SweepSpec {
        name: "grid".into(),
        base: TransferConfig {
            num_iterations: iterations,
            image_size: size,
            ..TransferConfig::default()
        },
        varied_parameter: parameter,
        values: values.to_vec(),
        content_images,
        style_images,
        output_dir: dir.join(out),
    }
}

#[test]
fn one_by_two_by_three_grid() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec(
        dir.path(),
        "out",
        SweepParameter::TvStrength,
        &[1e-6, 1e-2, 1.0],
        6,
    );
    let net = fixture_network();
    let result = run_sweep(&spec, &net, SweepOptions { workers: 3 }).unwrap();
    assert_eq!(result.cells.len(), 6);
    assert_eq!(result.grid(0).len(), 2);
    assert!(result
        .grid(0)
        .iter()
        .all(|row| row.len() == 3 && row.iter().all(Option::is_some)));

    let root = dir.path().join("out/grid/face");
    let sheet = load_png(root.join("sheet.png")).unwrap();
    let cell = result.cell(0, 0, 0).image.as_ref().unwrap();
    let layout = SheetLayout {
        rows: 2,
        cols: 3,
        cell_width: cell.width(),
        cell_height: cell.height(),
    };
    assert_eq!((sheet.width(), sheet.height()), sheet_dimensions(&layout));

    let mut csvs: Vec<_> = fs::read_dir(root.join("cells"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    csvs.sort();
    assert_eq!(csvs.len(), 6);
    for csv in &csvs {
        let text = fs::read_to_string(csv).unwrap();
        assert_eq!(text.lines().next(), Some(LOSS_CSV_HEADER));
        assert_eq!(text.lines().count(), 1 + 6, "{}", csv.display());
    }
    assert!(root.join("cells/stripes1_1e-2.png").exists());
    let summary = fs::read_to_string(root.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 7);

    // Seeds follow cell coordinates and a rerun reproduces every artifact.
    assert_eq!(result.cell(0, 1, 2).seed, spec.base.seed + 100 + 2);
    let mut again = spec.clone();
    again.output_dir = dir.path().join("again");
    run_sweep(&again, &net, SweepOptions { workers: 1 }).unwrap();
    let other = dir.path().join("again/grid/face");
    assert_eq!(
        summary,
        fs::read_to_string(other.join("summary.csv")).unwrap()
    );
    assert_eq!(
        fs::read(root.join("sheet.png")).unwrap(),
        fs::read(other.join("sheet.png")).unwrap()
    );
    for csv in &csvs {
        let twin = other.join("cells").join(csv.file_name().unwrap());
        assert_eq!(fs::read(csv).unwrap(), fs::read(twin).unwrap());
    }
}

#[test]
fn iteration_sweep_snapshots_one_run() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec(
        dir.path(),
        "out",
        SweepParameter::NumIterations,
        &[2.0, 4.0, 6.0],
        0,
    );
    let net = fixture_network();
    let result = run_sweep(&spec, &net, SweepOptions::default()).unwrap();
    for j in 0..2 {
        let longest = &result.cell(0, j, 2).history;
        assert_eq!(longest.len(), 6);
        for k in 0..3 {
            let cell = result.cell(0, j, k);
            assert_eq!(cell.history.len(), [2, 4, 6][k]);
            assert_eq!(cell.history[..], longest[..cell.history.len()]);
        }
    }
    // The snapshots equal standalone runs of the same length.
    let config = TransferConfig {
        num_iterations: 4,
        seed: result.cell(0, 1, 1).seed,
        ..spec.base.clone()
    };
    let standalone = nst_core::optimize::run_transfer(
        &saved_content(dir.path()),
        &texture(32, 1),
        &config,
        &net,
        &mut nst_core::optimize::NullSink,
    )
    .unwrap();
    assert_eq!(
        result.cell(0, 1, 1).image.as_ref(),
        Some(&standalone.final_image)
    );
}

fn saved_content(dir: &Path) -> nst_core::imaging::RgbImage {
    load_png(dir.join("face.png")).unwrap()
}

#[test]
fn ratio_columns_trade_content_for_style() {
    let dir = tempfile::tempdir().unwrap();
    let spec = sized_spec(
        dir.path(),
        "out",
        SweepParameter::ContentWeight,
        &[10.0, 100.0, 300.0],
        200,
        FIXTURE_SIZE,
    );
    let result = run_sweep(&spec, &fixture_network(), SweepOptions::default()).unwrap();
    for j in 0..2 {
        let content: Vec<f64> = (0..3)
            .map(|k| result.cell(0, j, k).final_report().unwrap().content)
            .collect();
        assert!(content.windows(2).all(|w| w[0] >= w[1]), "{content:?}");
    }
    let sheet_labels = fs::read_to_string(dir.path().join("out/grid/face/summary.csv")).unwrap();
    assert!(sheet_labels.contains("stripes0_300"));
}

#[test]
fn unreadable_input_aborts_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = spec(dir.path(), "out", SweepParameter::TvStrength, &[1e-6], 2);
    spec.style_images.push(dir.path().join("missing.png"));
    let err = run_sweep(&spec, &fixture_network(), SweepOptions::default()).unwrap_err();
    assert!(
        matches!(err, Error::Config(ref m) if m.contains("missing.png")),
        "{err}"
    );
    assert!(!dir.path().join("out").exists());
}
