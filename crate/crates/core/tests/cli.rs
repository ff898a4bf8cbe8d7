use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn echelon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_echelon"))
        .args(args)
        .env("ECHELON_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = echelon(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Header and rows of a CSV file.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let headers = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect();
    (headers, rows)
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (h, rows) = table(path);
    let k = h.iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[k].parse().unwrap()).collect()
}

/// Training log rows with the wall-clock column blanked.
fn log_without_time(path: &Path) -> Vec<Vec<String>> {
    let (h, mut rows) = table(path);
    let k = h.iter().position(|c| c == "seconds").unwrap();
    for r in &mut rows {
        r[k].clear();
    }
    rows
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(out: &Path, iters: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "train", "--net", "net6", "--algo", "p-gcn-mappo", "--seed", "0", "--iters", iters, "--batch-steps", "200",
        "--episodes", "4", "--out", s(out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    out.join("p-gcn-mappo-seed0")
}

#[test]
fn train_eval_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train(&tmp.path().join("a"), "3", &[]);
    for f in ["checkpoint.json", "train_log.csv", "eval_summary.csv", "network.txt", "training_profit.svg", "entropy.svg"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = run.join("train_log.csv");
    assert_eq!(table(&log).1.len(), 3);
    assert_eq!(column(&log, "iteration"), vec![1.0, 2.0, 3.0]);

    // two iterations, then one more from the checkpoint
    let resumed = train(&tmp.path().join("b"), "2", &[]);
    train(&tmp.path().join("b"), "3", &["--resume"]);
    assert_eq!(log_without_time(&log), log_without_time(&resumed.join("train_log.csv")));

    // re-evaluating the saved policy reproduces the summary written by train
    let ck = run.join("checkpoint.json");
    let eval_dir = tmp.path().join("eval");
    ok(&["eval", "--net", "net6", "--checkpoint", s(&ck), "--episodes", "4", "--out", s(&eval_dir)]);
    assert_eq!(
        column(&eval_dir.join("eval_summary.csv"), "profit_mean"),
        column(&run.join("eval_summary.csv"), "profit_mean")
    );

    // default evaluation: 20 traces, summary recomputable from them
    let eval20 = tmp.path().join("eval20");
    ok(&["eval", "--net", "net6", "--checkpoint", s(&ck), "--out", s(&eval20)]);
    let traces: Vec<_> = std::fs::read_dir(eval20.join("traces")).unwrap().collect();
    assert_eq!(traces.len(), 20);
    let profits: Vec<f64> = (0..20)
        .map(|k| {
            let t = eval20.join("traces").join(format!("episode_{k:02}.csv"));
            let rows = table(&t).1.len();
            assert_eq!(rows, 50 * 6);
            ["revenue", "order_cost", "holding_cost", "backlog_cost"]
                .iter()
                .map(|c| column(&t, c).iter().sum::<f64>())
                .enumerate()
                .map(|(i, v)| if i == 0 { v } else { -v })
                .sum()
        })
        .collect();
    let mean = profits.iter().sum::<f64>() / 20.0;
    let std = (profits.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / 19.0).sqrt();
    let summary = eval20.join("eval_summary.csv");
    assert!((column(&summary, "profit_mean")[0] - mean).abs() < 1e-6);
    assert!((column(&summary, "profit_std")[0] - std).abs() < 1e-6);
    assert_eq!(column(&summary, "episodes"), vec![20.0]);

    // demand shift over the default five rates
    let shift = tmp.path().join("shift");
    ok(&["demand-shift", "--net", "net6", "--checkpoint", s(&ck), "--episodes", "3", "--samples", "2000", "--out", s(&shift)]);
    assert_eq!(column(&shift.join("demand_shift.csv"), "lambda_d"), vec![3.0, 4.0, 5.0, 6.0, 7.0]);
    assert_eq!(table(&shift.join("demand_fit.csv")).1.len(), 5);

    // a checkpoint does not load onto a different network
    let bad = echelon(&["eval", "--net", "net12", "--checkpoint", s(&ck), "--out", s(&tmp.path().join("bad"))]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("checkpoint"));
}

#[test]
fn baseline_then_evaluate_static_policy() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("base");
    ok(&["baseline", "--net", "net6", "--starts", "2", "--budget", "40", "--tune-episodes", "2", "--episodes", "4", "--out", s(&out)]);
    let (h, rows) = table(&out.join("static_policy.csv"));
    assert_eq!(h, vec!["node", "s", "S"]);
    assert_eq!(rows.len(), 6);
    assert!(column(&out.join("baseline_summary.csv"), "evaluations")[0] <= 40.0);
    let objective = column(&out.join("search_trace.csv"), "objective");
    assert!(!objective.is_empty());

    let ev = tmp.path().join("ev");
    ok(&["eval", "--net", "net6", "--policy", s(&out.join("static_policy.csv")), "--episodes", "4", "--out", s(&ev)]);
    assert_eq!(
        column(&ev.join("eval_summary.csv"), "profit_mean"),
        column(&out.join("baseline_summary.csv"), "eval_profit_mean")
    );
}

#[test]
fn noise_sweep_and_timing_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = tmp.path().join("sweep");
    ok(&[
        "noise-sweep", "--net", "net6", "--sigmas", "0,0.5", "--seed", "0", "--iters", "2", "--batch-steps", "100",
        "--episodes", "2", "--out", s(&sweep),
    ]);
    assert_eq!(column(&sweep.join("noise_sweep.csv"), "sigma"), vec![0.0, 0.5]);
    assert!(sweep.join("sigma0.5-seed0").join("train_log.csv").exists());

    let timing = tmp.path().join("timing");
    ok(&[
        "timing", "--nets", "net6", "--algos", "g-mappo,p-gcn-mappo", "--seed", "0", "--iters", "3", "--batch-steps",
        "100", "--out", s(&timing),
    ]);
    assert_eq!(table(&timing.join("timing_raw.csv")).1.len(), 6);
    assert_eq!(column(&timing.join("timing.csv"), "critic_input_dim"), vec![192.0, 32.0]);

    let plotted = ok(&["plot", s(&timing)]);
    assert!(plotted.contains(".svg"));
}

#[test]
fn rejects_bad_arguments() {
    let out = echelon(&["train", "--algo", "ppo", "--iters", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ppo"));
    let out = echelon(&["eval", "--net", "net6"]);
    assert!(!out.status.success());
    let out = echelon(&["train", "--net", "nope", "--iters", "1"]);
    assert!(!out.status.success());
}
