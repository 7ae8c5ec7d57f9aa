use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stylize_core::io::save_image;
use stylize_core::{Shape3, Tensor};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stylize"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn stylize")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "stylize {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let content = Tensor::from_fn(Shape3::new(3, 24, 32).unwrap(), |c, y, x| {
            0.5 + 0.4 * ((x as f64 / 5.0 + c as f64).sin() * (y as f64 / 7.0).cos())
        });
        let style = Tensor::from_fn(Shape3::new(3, 20, 20).unwrap(), |c, y, x| {
            if (x / 3 + y / 2 + c) % 2 == 0 { 0.85 } else { 0.1 }
        });
        let mask = Tensor::from_fn(Shape3::new(3, 24, 32).unwrap(), |_, _, x| if x < 16 { 1.0 } else { 0.0 });
        save_image(&content, &dir.path().join("content.png")).unwrap();
        save_image(&style, &dir.path().join("style.png")).unwrap();
        save_image(&mask, &dir.path().join("mask.png")).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn weights(&self, kind: &str) -> PathBuf {
        let p = self.path(&format!("{}.sfw", kind.replace([':', ','], "_")));
        if !p.exists() {
            ok(&["synth-weights", "--kind", kind, "--seed", "3", "--output", s(&p)]);
        }
        p
    }
}

fn report_value(report: &str, key: &str) -> Option<String> {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
}

#[test]
fn nst_end_to_end_is_reproducible() {
    let f = Fixture::new();
    let w = f.weights("custom:2x8,2x12");
    let (a, b) = (f.path("a.png"), f.path("b.png"));
    let trace = f.path("trace.csv");
    let (content, style) = (f.path("content.png"), f.path("style.png"));
    let common = [
        "nst", "--content", s(&content), "--style", s(&style),
        "--weights", s(&w), "--iters", "8", "--init", "noise", "--seed", "5",
    ];
    let stdout = ok(&[&common[..], &["--output", s(&a), "--trace", s(&trace)]].concat());
    assert!(stdout.contains("loss.final"), "{stdout}");
    ok(&[&common[..], &["--output", s(&b)]].concat());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let report = fs::read_to_string(f.path("a.report.txt")).unwrap();
    assert_eq!(report_value(&report, "command").as_deref(), Some("nst"));
    assert_eq!(report_value(&report, "output.width").as_deref(), Some("32"));
    let csv = fs::read_to_string(&trace).unwrap();
    assert!(csv.starts_with("iteration,loss\n"));
    assert_eq!(csv.lines().count(), 1 + 9);
}

#[test]
fn nst_with_two_styles_and_mask() {
    let f = Fixture::new();
    let w = f.weights("custom:1x6,1x8");
    let out = f.path("two.png");
    ok(&[
        "nst", "--content", s(&f.path("content.png")), "--style", s(&f.path("style.png")),
        "--style2", s(&f.path("content.png")), "--mask", s(&f.path("mask.png")),
        "--weights", s(&w), "--iters", "3", "--optimizer", "lbfgs", "--shift", "--chained",
        "--output", s(&out),
    ]);
    assert!(out.exists());

    // index mask: gray level k selects the k-th region style
    let labels = Tensor::from_fn(Shape3::new(3, 24, 32).unwrap(), |_, y, _| if y < 12 { 0.0 } else { 1.0 / 255.0 });
    save_image(&labels, &f.path("labels.png")).unwrap();
    let regions = format!("{},{}", s(&f.path("style.png")), s(&f.path("content.png")));
    ok(&[
        "nst", "--content", s(&f.path("content.png")), "--region-styles", &regions,
        "--mask", s(&f.path("labels.png")), "--weights", s(&w), "--iters", "2", "--output", s(&out),
    ]);
}

#[test]
fn ust_and_color_match() {
    let f = Fixture::new();
    let w = f.weights("passthrough");
    let out = f.path("ust.png");
    let report = f.path("ust-report.txt");
    ok(&[
        "ust", "--content", s(&f.path("content.png")), "--style", s(&f.path("style.png")),
        "--weights", s(&w), "--levels", "3,1", "--ust-alpha", "0.8", "--color", "post",
        "--upscale", "2", "--blur-sigma", "0.5", "--output", s(&out), "--report", s(&report),
    ]);
    let text = fs::read_to_string(&report).unwrap();
    assert!(report_value(&text, "ust.seconds").is_some());
    assert!(report_value(&text, "wct.style0.level3.covariance_error").is_some());
    assert_eq!(report_value(&text, "output.height").as_deref(), Some("48"));

    let cm = f.path("cm.png");
    ok(&["color-match", "--content", s(&f.path("content.png")), "--style", s(&f.path("style.png")), "--output", s(&cm)]);
    let text = fs::read_to_string(f.path("cm.report.txt")).unwrap();
    let err: f64 = report_value(&text, "color.mean_error").unwrap().parse().unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn errors_name_their_stage() {
    let f = Fixture::new();
    let out = run(&["color-match", "--content", s(&f.path("nope.png")), "--style", s(&f.path("style.png")), "--output", s(&f.path("o.png"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[config]") && err.contains("nope.png"), "{err}");

    let bad = f.path("bad.sfw");
    fs::write(&bad, b"SFW1 not really weights").unwrap();
    let out = run(&["ust", "--content", s(&f.path("content.png")), "--style", s(&f.path("style.png")), "--weights", s(&bad), "--output", s(&f.path("o.png"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[weights]"), "{err}");

    let out = run(&["ust", "--content", s(&f.path("content.png")), "--style", s(&f.path("style.png")), "--weights", s(&bad), "--levels", "1,3", "--output", s(&f.path("o.png"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("coarse to fine"));

    assert!(!run(&["nst", "--optimizer", "sgd"]).status.success());
}

#[test]
fn flags_override_config_file() {
    let f = Fixture::new();
    let w = f.weights("custom:1x4");
    let cfg = f.path("run.toml");
    fs::write(
        &cfg,
        format!(
            "content = {:?}\nstyle = {:?}\nweights = [{:?}]\niters = 4\nbeta = 50.0\nlr = 1.5\n",
            s(&f.path("content.png")),
            s(&f.path("style.png")),
            s(&w)
        ),
    )
    .unwrap();
    let out = f.path("cfg.png");
    ok(&["nst", "--config", s(&cfg), "--iters", "2", "--output", s(&out)]);
    let text = fs::read_to_string(f.path("cfg.report.txt")).unwrap();
    assert_eq!(report_value(&text, "config.iters").as_deref(), Some("2"));
    assert_eq!(report_value(&text, "config.beta").as_deref(), Some("50.0"));
    assert_eq!(report_value(&text, "config.lr").as_deref(), Some("1.5"));

    fs::write(&cfg, "iters = 4\nunknown_key = 1\n").unwrap();
    let bad = run(&["nst", "--config", s(&cfg), "--output", s(&out)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown_key"));
}
