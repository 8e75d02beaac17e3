use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use times2d::cli::{cmd_forecast, test_predictions};
use times2d::config::RunConfig;
use times2d::fsdh::Heatmap2D;
use times2d::Tensor;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_times2d"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn sine_conf() -> String {
    manifest().join("configs/sine.conf").display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_series(path: &Path, header: &[&str], rows: &[Vec<f64>]) {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

/// Trains the bundled sine config once per test binary into `dir`.
fn train_sine(dir: &Path) -> PathBuf {
    let out = dir.join("sine");
    let o = run(&["train", "--config", &sine_conf(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn sine_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_sine(dir.path());
    for f in ["best.ckpt", "history.csv", "config.txt"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert!(stdout(&run(&["train", "--help"])).contains("--mase-insample"));

    // The snapshot is itself a valid config.
    let snap = RunConfig::from_file(&out.join("config.txt")).unwrap();
    assert_eq!(snap.model.seq_len, 48);
    assert_eq!(snap.model.n_vars, 2);

    let o = run(&["evaluate", "--config", &sine_conf(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("metrics.txt")).unwrap();
    let mse: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("mse = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(mse < 1e-2, "test mse {mse}");
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let o = run(&["forecast", "--config", &sine_conf(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "a,b");
    assert_eq!(lines.len(), 1 + 24);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 2));

    // The config's own data is perfectly 24-periodic, so the seasonal naive
    // baseline is exact there. Score on a noisy copy with season 1 instead.
    let noisy = dir.path().join("noisy.csv");
    let rows: Vec<Vec<f64>> = (0..720)
        .map(|t| {
            let x = t as f64;
            let jitter = ((t * 7919) % 13) as f64 / 130.0;
            vec![
                (std::f64::consts::TAU * x / 24.0).sin() + jitter,
                1.0 + 0.5 * (std::f64::consts::TAU * x / 12.0).cos() - jitter,
            ]
        })
        .collect();
    write_series(&noisy, &["a", "b"], &rows);
    let conf = dir.path().join("season1.conf");
    let body = std::fs::read_to_string(sine_conf()).unwrap().replace("season = 24", "season = 1");
    std::fs::write(&conf, body).unwrap();
    let o = run(&[
        "evaluate",
        "--config",
        conf.to_str().unwrap(),
        "--data",
        noisy.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kv: std::collections::HashMap<String, f64> = stdout(&o)
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .filter_map(|(k, v)| v.parse().ok().map(|v| (k.to_string(), v)))
        .collect();
    let owa = 0.5 * (kv["smape"] / kv["naive_smape"] + kv["mase"] / kv["naive_mase"]);
    // fields are printed with 9 significant digits
    assert!((kv["owa"] - owa).abs() < 1e-7 * owa.max(1.0), "{} vs {owa}", kv["owa"]);
}

#[test]
fn forecast_matches_first_test_window() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_sine(dir.path());
    let ckpt = out.join("best.ckpt");
    let mut cfg = RunConfig::from_file(Path::new(&sine_conf())).unwrap();
    cfg.out = out.clone();
    let first = test_predictions(&cfg, &ckpt).unwrap().remove(0);

    // Cut the data right after the first test window's input.
    let data = std::fs::read_to_string(cfg.data.as_ref().unwrap()).unwrap();
    let lines: Vec<&str> = data.lines().collect();
    let rows = lines.len() - 1;
    let test_start = rows - (rows as f64 * 0.2).round() as usize;
    let cut = dir.path().join("cut.csv");
    std::fs::write(&cut, lines[..=test_start].join("\n") + "\n").unwrap();
    let mut cut_cfg = cfg.clone();
    cut_cfg.data = Some(cut);
    let csv = cmd_forecast(&cut_cfg, &ckpt, None).unwrap();
    for (t, line) in csv.lines().skip(1).enumerate() {
        for (v, cell) in line.split(',').enumerate() {
            let got: f64 = cell.parse().unwrap();
            let want = first.pred.get(&[t, v]);
            assert!((got - want).abs() <= 1e-8 * want.abs().max(1.0), "{t},{v}: {got} vs {want}");
        }
    }
}

#[test]
fn seeded_training_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let hist = |name: &str| {
        let out = dir.path().join(name);
        let o = run(&["train", "--config", &sine_conf(), "--seed", "7", "--epochs", "3", "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        let text = std::fs::read_to_string(out.join("history.csv")).unwrap();
        // drop the wall-clock column
        text.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    let (a, b) = (hist("a"), hist("b"));
    assert_eq!(a.len(), 4);
    assert_eq!(a, b);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--data", "/no/such/file.csv", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/file.csv"));

    let bad_conf = dir.path().join("bad.conf");
    std::fs::write(&bad_conf, "seq_len = 48\nwindow = 3\n").unwrap();
    let o = run(&["train", "--config", bad_conf.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--config", &sine_conf(), "--heads", "5"]).status.code(), Some(2));

    // Checkpoint trained on two variables, data with three.
    let out = train_sine(dir.path());
    let three = dir.path().join("three.csv");
    let rows: Vec<Vec<f64>> = (0..720).map(|t| vec![t as f64, (t as f64).sin(), 1.0]).collect();
    write_series(&three, &["x", "y", "z"], &rows);
    let o = run(&[
        "evaluate",
        "--config",
        &sine_conf(),
        "--data",
        three.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(5));

    let short = dir.path().join("short.csv");
    write_series(&short, &["a", "b"], &vec![vec![1.0, 2.0]; 10]);
    let o = run(&["forecast", "--config", &sine_conf(), "--data", short.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

/// Direct DFT magnitude at bin `f`, averaged over the columns of `rows`.
fn dft_amplitude(rows: &[Vec<f64>], f: usize) -> f64 {
    let s = rows.len();
    let n = rows[0].len();
    (0..n)
        .map(|v| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, r) in rows.iter().enumerate() {
                let a = -std::f64::consts::TAU * (f * t) as f64 / s as f64;
                re += r[v] * a.cos();
                im += r[v] * a.sin();
            }
            (re * re + im * im).sqrt()
        })
        .sum::<f64>()
        / n as f64
}

#[test]
fn inspect_periods_single_tone() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tone.csv");
    let rows: Vec<Vec<f64>> = (0..400)
        .map(|t| {
            let x = t as f64;
            vec![2.0 * (std::f64::consts::TAU * x / 24.0).sin() + 0.3 * (std::f64::consts::TAU * x / 8.0).cos()]
        })
        .collect();
    write_series(&data, &["value"], &rows);
    let o = run(&["inspect-periods", "--data", data.to_str().unwrap(), "--seq-len", "96", "--k", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("f=4 period=24 "), "{}", lines[0]);
    assert!(lines[1].starts_with("f=12 period=8 "), "{}", lines[1]);
    for line in lines {
        let f: usize = line.split_whitespace().next().unwrap()[2..].parse().unwrap();
        let amp: f64 = line.rsplit_once("amplitude=").unwrap().1.parse().unwrap();
        let want = dft_amplitude(&rows[..96], f);
        assert!((amp - want).abs() < 1e-6, "{line}: {want}");
    }
}

#[test]
fn heatmap_exports() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("h.csv");
    let o = run(&["heatmap", "--config", &sine_conf(), "--output", csv_path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let parsed = Heatmap2D::from_csv(&std::fs::read_to_string(&csv_path).unwrap()).unwrap();

    let cfg = RunConfig::from_file(Path::new(&sine_conf())).unwrap();
    let series = times2d::data::load_csv(cfg.data.as_ref().unwrap(), Default::default()).unwrap();
    let x = Tensor::new(vec![1, 48, 2], series.values.data()[..96].to_vec()).unwrap();
    assert_eq!(parsed, Heatmap2D::from_series(&x).unwrap());

    let pgm = dir.path().join("h.pgm");
    let o = run(&["heatmap", "--config", &sine_conf(), "--format", "pgm", "--output", pgm.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(dir.path().join("h_b0_n0.pgm").exists());
    assert!(dir.path().join("h_b0_n1.pgm").exists());

    let o = run(&["heatmap", "--config", &sine_conf(), "--output", "/no/such/dir/h.csv"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn every_subcommand_documents_common_flags() {
    for sub in ["train", "evaluate", "forecast", "inspect-periods", "heatmap"] {
        let help = stdout(&run(&[sub, "--help"]));
        for flag in [
            "--config", "--data", "--out", "--seed", "--seq-len", "--pred-len", "--k", "--d-model", "--d-ff",
            "--heads", "--batch", "--lr", "--epochs", "--fill-forward", "--mase-insample", "--loss",
        ] {
            assert!(help.contains(flag), "{sub} --help lacks {flag}");
        }
    }
}
