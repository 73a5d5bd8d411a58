use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn jfp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jfp")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A small system that trains in seconds, written next to its artifacts.
fn tiny_config(dir: &Path) -> PathBuf {
    let init = dir.join("default.json");
    assert_eq!(code(&jfp(&["init-config", "--out", init.to_str().unwrap()])), 0);
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(&init).unwrap()).unwrap();
    cfg["system"] = json!({
        "subcarriers": 8, "bs_antennas": 4, "ue_antennas": 2, "streams": 1, "users": 2,
        "subcarriers_per_rb": 2, "rbs_per_subband": 2, "uplink_subcarriers": 4, "latent_symbols": 4,
        "tx_power_dbm": 46.0, "downlink_snr_db": 10.0,
        "dl_carrier_hz": 1.9e9, "ul_carrier_hz": 2.1e9, "bandwidth_hz": 2.88e6
    });
    cfg["training"]["epochs"] = json!(2);
    cfg["training"]["batch_size"] = json!(16);
    cfg["data"] = json!({"seed": 7, "train": 32, "val": 16, "test": 24});
    cfg["evaluation"]["latent_list"] = json!([2, 4]);
    cfg["paths"] = json!({
        "dataset": dir.join("data.jfpc"),
        "checkpoints": dir.join("ckpt"),
        "results": dir.join("results"),
    });
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn gen_data_is_deterministic_and_reports_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a.jfpc"), dir.path().join("b.jfpc"));
    for out in [&a, &b] {
        let run = jfp(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--count", "100", "--seed", "7"]);
        assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
        assert!(stdout(&run).contains("mean downlink element energy"));
        assert!(stdout(&run).contains("rank profile"));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let mut value: Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    value["system"]["subcarriers"] = json!(9);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, value.to_string()).unwrap();
    let run = jfp(&["gen-data", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("not divisible"));

    value["system"]["subcarriers"] = json!(8);
    value["unexpected"] = json!(1);
    std::fs::write(&bad, value.to_string()).unwrap();
    assert_eq!(code(&jfp(&["gen-data", "--config", bad.to_str().unwrap()])), 2);

    let missing = jfp(&["eval", "--config", cfg.to_str().unwrap(), "--baselines", "PF"]);
    assert_eq!(code(&missing), 2, "missing dataset");
}

#[test]
fn train_eval_and_sweep_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&jfp(&["gen-data", "--config", c])), 0);

    let train = |extra: &[&str]| {
        let mut args = vec!["train", "--config", c];
        args.extend_from_slice(extra);
        let run = jfp(&args);
        assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    };
    train(&[]);
    train(&["--ablate", "pa"]);
    train(&["--mode", "djscc-mse"]);
    train(&["--latent-n", "2"]);
    let ckpt = dir.path().join("ckpt");
    for name in ["jfpnet-n4", "jfpnet-no-pa-n4", "djscc-mse-n4", "jfpnet-n2"] {
        assert!(ckpt.join(format!("{name}.jfpw")).exists(), "{name}");
    }

    let log = std::fs::read_to_string(ckpt.join("jfpnet-n4.log.csv")).unwrap();
    assert!(log.lines().any(|l| l.starts_with("# config: {")));
    assert!(log.lines().any(|l| l.starts_with("# input: ") && l.contains("sha256:")));
    let rows = data_rows(&log);
    assert_eq!(rows.len(), 3);
    for pair in rows.windows(2) {
        let best = |r: &Vec<String>| r[5].parse::<f64>().unwrap();
        assert!(best(&pair[1]) <= best(&pair[0]));
        assert!(pair[1][4].parse::<f64>().unwrap() >= 1e-4);
    }

    let ablate_mode = jfp(&["train", "--config", c, "--mode", "djscc-mse", "--ablate", "pa"]);
    assert_eq!(code(&ablate_mode), 2);

    let out = dir.path().join("eval.csv");
    let eval = |out: &Path| {
        jfp(&[
            "eval", "--config", c,
            "--checkpoint", ckpt.join("jfpnet-n4.jfpw").to_str().unwrap(),
            "--checkpoint", ckpt.join("jfpnet-no-pa-n4.jfpw").to_str().unwrap(),
            "--recon-checkpoint", ckpt.join("djscc-mse-n4.jfpw").to_str().unwrap(),
            "--baselines", "PF,PF_BD_WF,DJSCC_MSE,DJSCC_MSE_BD_WF",
            "--snr-grid", "-10,0,10",
            "--out", out.to_str().unwrap(),
        ])
    };
    let run = eval(&out);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.lines().any(|l| l == "method,uplink_snr_db,latent_n,mean_sum_rate_bps_hz,ci95"));
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 6 * 3);
    let rate = |method: &str| -> Vec<f64> {
        rows.iter().filter(|r| r[0] == method).map(|r| r[3].parse().unwrap()).collect()
    };
    for method in ["PF", "PF_BD_WF"] {
        let r = rate(method);
        assert!(r.iter().all(|&x| x == r[0]), "{method} varies with SNR: {r:?}");
    }
    assert_eq!(rate("JFPNet").len(), 3);
    assert_eq!(rate("JFPNet_NO_PA").len(), 3);

    let again = dir.path().join("eval2.csv");
    assert_eq!(code(&eval(&again)), 0);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());

    let no_recon = jfp(&["eval", "--config", c, "--baselines", "DJSCC_MSE"]);
    assert_eq!(code(&no_recon), 2);
    let missing = jfp(&["eval", "--config", c, "--checkpoint", dir.path().join("nope.jfpw").to_str().unwrap()]);
    assert_eq!(code(&missing), 2);

    let sweep_out = dir.path().join("overhead.csv");
    let run = jfp(&["sweep-overhead", "--config", c, "--n-list", "2,4", "--out", sweep_out.to_str().unwrap()]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout(&run).contains("n_list: 2,4"));
    assert!(stdout(&run).contains("trend at -10 dB"));
    let csv = std::fs::read_to_string(&sweep_out).unwrap();
    assert!(csv.contains("# n_list: 2,4"));
    assert_eq!(data_rows(&csv).len(), 2 * 5);

    let dup = jfp(&["sweep-overhead", "--config", c, "--n-list", "2,4,2"]);
    assert_eq!(code(&dup), 2);
    assert!(String::from_utf8_lossy(&dup.stderr).contains("duplicate"));
    let absent = jfp(&["sweep-overhead", "--config", c, "--n-list", "2,8"]);
    assert_eq!(code(&absent), 2);
}

#[test]
fn diverging_training_exits_with_code_three_and_keeps_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let c = cfg.to_str().unwrap();
    assert_eq!(code(&jfp(&["gen-data", "--config", c])), 0);
    let run = jfp(&["train", "--config", c, "--lr", "1e300", "--epochs", "5"]);
    assert_eq!(code(&run), 3, "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stderr).contains("last good checkpoint"));
    assert!(dir.path().join("ckpt/jfpnet-n4.jfpw").exists());
}
