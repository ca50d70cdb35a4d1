use std::path::Path;
use std::process::{Command, Output};

use logmosaic::report::Report;
use logmosaic::synth_export::read_truth;
use logmosaic_core::affine::corner_distance;

fn logmosaic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_logmosaic"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = logmosaic(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn read_report(path: &Path) -> Report {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn glob_in(dir: &Path) -> String {
    format!("{}/frame_*.pgm", dir.display())
}

#[test]
fn single_frame_mosaic_equals_input() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    let out = tmp.path().join("out");
    synth(&seq, &["--count", "1", "--synth-seed", "3"]);

    let run = logmosaic(&[
        "mosaic",
        "--frames",
        &glob_in(&seq),
        "--out",
        out.to_str().unwrap(),
        "--format",
        "pgm",
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(
        std::fs::read(seq.join("frame_0000.pgm")).unwrap(),
        std::fs::read(out.join("mosaic.pgm")).unwrap()
    );
    let report = read_report(&out.join("report.json"));
    assert_eq!(report.frames.len(), 1);
    assert_eq!(report.summary.ok, 1);
    assert!(out.join("coverage.pgm").is_file());
}

#[test]
fn synthetic_sequence_matches_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    let out = tmp.path().join("out");
    synth(
        &seq,
        &["--count", "20", "--motion", "3,1", "--synth-seed", "5"],
    );

    let run = logmosaic(&[
        "mosaic",
        "--frames",
        &glob_in(&seq),
        "--out",
        out.to_str().unwrap(),
        "--min-ok",
        "1",
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out.join("mosaic.png").is_file());

    let truth = read_truth(&seq.join("truth.json")).unwrap();
    let report = read_report(&out.join("report.json"));
    assert_eq!(report.frames.len(), 20);
    for (f, t) in report.frames.iter().zip(&truth.frames) {
        assert!(f.file.ends_with(&t.file));
        assert_eq!(f.status, logmosaic_core::mosaic::FrameStatus::Ok);
        let err = corner_distance(&f.chained, &t.chained, 160, 120);
        assert!(err < 2.0, "frame {}: corner error {err}", f.index);
    }
}

#[test]
fn kourogi_init_saves_search_shifts() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    // The optical-flow initializer needs texture coarser than the default to
    // linearize a 12 px shift.
    synth(
        &seq,
        &[
            "--count",
            "2",
            "--motion",
            "12,0",
            "--synth-seed",
            "8",
            "--smoothing",
            "9",
        ],
    );

    let shifts = |init: &str| {
        let out = tmp.path().join(init);
        let run = logmosaic(&[
            "mosaic",
            "--frames",
            &glob_in(&seq),
            "--out",
            out.to_str().unwrap(),
            "--init",
            init,
        ]);
        assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
        let report = read_report(&out.join("report.json"));
        let d = report.frames[1].diagnostics.clone().unwrap();
        (d.total_shifts, report.frames[1].step.unwrap())
    };
    let (zero, _) = shifts("zero");
    let (kourogi, step) = shifts("kourogi");
    assert!(kourogi < zero, "kourogi {kourogi} vs zero {zero}");
    assert!((step.params()[2] - 12.0).abs() < 1.0);
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(
        &seq,
        &["--count", "4", "--motion", "2,-1", "--synth-seed", "6"],
    );
    let report = |threads: &str| {
        let out = tmp.path().join(format!("t{threads}"));
        let path = tmp.path().join(format!("r{threads}.json"));
        let run = logmosaic(&[
            "mosaic",
            "--frames",
            &glob_in(&seq),
            "--out",
            out.to_str().unwrap(),
            "--report",
            path.to_str().unwrap(),
            "--threads",
            threads,
            "--no-timings",
        ]);
        assert_eq!(code(&run), 0);
        (
            std::fs::read(path).unwrap(),
            std::fs::read(out.join("mosaic.png")).unwrap(),
        )
    };
    assert_eq!(report("1"), report("4"));
}

#[test]
fn manifest_overrides_order() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, &["--count", "3", "--motion", "2,0"]);
    let manifest = seq.join("order.txt");
    std::fs::write(
        &manifest,
        "# reversed\nframe_0002.pgm\nframe_0001.pgm\n\nframe_0000.pgm\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let run = logmosaic(&[
        "mosaic",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let report = read_report(&out.join("report.json"));
    assert!(report.frames[0].file.ends_with("frame_0002.pgm"));
    let u = report.frames[1].step.unwrap().params()[2];
    assert!((u + 2.0).abs() < 0.5, "reversed step u = {u}");
}

#[test]
fn failed_registrations_breach_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, &["--count", "2"]);
    // Replace the second frame with a flat one.
    let flat = logmosaic_core::image::Raster::constant(160, 120, 90.0).unwrap();
    logmosaic::io::write_image(&seq.join("frame_0001.pgm"), &flat).unwrap();

    let out = tmp.path().join("out");
    let run = |min_ok: &str| {
        logmosaic(&[
            "mosaic",
            "--frames",
            &glob_in(&seq),
            "--out",
            out.to_str().unwrap(),
            "--min-ok",
            min_ok,
        ])
    };
    assert_eq!(code(&run("1")), 1);
    assert_eq!(code(&run("0.5")), 0);
    let report = read_report(&out.join("report.json"));
    assert_eq!(
        report.frames[1].status,
        logmosaic_core::mosaic::FrameStatus::Failed
    );
    assert!(report.frames[1].error.is_some());
}

#[test]
fn input_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    let none = format!("{}/*.pgm", tmp.path().display());
    assert_eq!(
        code(&logmosaic(&["mosaic", "--frames", &none, "--out", out])),
        2
    );

    let bad = tmp.path().join("a.pgm");
    std::fs::write(&bad, b"P5\n100 100\n255\nshort").unwrap();
    assert_eq!(
        code(&logmosaic(&["mosaic", "--frames", &none, "--out", out])),
        2
    );

    assert_eq!(code(&logmosaic(&["mosaic", "--out", out])), 2);
    assert_eq!(
        code(&logmosaic(&[
            "mosaic", "--frames", &none, "--out", out, "--winit", "3"
        ])),
        2
    );
    assert_eq!(
        code(&logmosaic(&[
            "synth",
            "--out",
            out,
            "--motion",
            "-1,0,0,0,-1,0"
        ])),
        2
    );
    assert_eq!(code(&logmosaic(&["bench", "--motion", "1,2,3"])), 2);
}

fn bench_rows(extra: &[&str]) -> Vec<csv::StringRecord> {
    let mut args = vec!["bench"];
    args.extend_from_slice(extra);
    let out = logmosaic(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_reader(&out.stdout[..]);
    assert_eq!(
        rdr.headers().unwrap(),
        vec![
            "method",
            "frame",
            "corner_error_px",
            "wall_ms",
            "fits",
            "iterations",
            "probes",
            "shifts"
        ]
    );
    rdr.records().map(Result::unwrap).collect()
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize) -> T
where
    T::Err: std::fmt::Debug,
{
    row[i].parse().unwrap()
}

#[test]
fn bench_identical_frames() {
    let rows = bench_rows(&["--motion", "0,0"]);
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][0], "kourogi");
    assert_eq!(&rows[1][0], "pmotionlog");
    for r in &rows {
        let err: f64 = field(r, 2);
        assert!(err < 1e-3, "{r:?}");
    }
}

#[test]
fn bench_offset_defeats_optical_flow_only() {
    let rows = bench_rows(&["--motion", "3,1", "--offset", "30"]);
    let flow: f64 = field(&rows[0], 2);
    let log: f64 = field(&rows[1], 2);
    assert!(flow.is_nan() || flow > 3.0, "kourogi error {flow}");
    assert!(log < 1.0, "pmotionlog error {log}");
}

#[test]
fn bench_default_pair_counts() {
    let rows = bench_rows(&[]);
    let log_fits: usize = field(&rows[1], 4);
    let flow_iters: usize = field(&rows[0], 5);
    let probes: usize = field(&rows[1], 6);
    assert_eq!(log_fits, 2);
    assert!(flow_iters >= 2);
    assert!(probes > 0);
}

#[test]
fn bench_reads_frames_and_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, &["--count", "3", "--motion", "2,1"]);
    let rows = bench_rows(&[
        "--frames",
        &glob_in(&seq),
        "--truth",
        seq.join("truth.json").to_str().unwrap(),
        "--mask",
        seq.join("mask.pgm").to_str().unwrap(),
    ]);
    assert_eq!(rows.len(), 4);
    let frames: Vec<usize> = rows.iter().map(|r| field(r, 1)).collect();
    assert_eq!(frames, vec![1, 1, 2, 2]);
    for r in rows.iter().filter(|r| &r[0] == "pmotionlog") {
        let err: f64 = field(r, 2);
        assert!(err < 1.0, "{r:?}");
    }
}
