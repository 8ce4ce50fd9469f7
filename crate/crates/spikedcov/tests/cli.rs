//! End-to-end CLI tests through `cli::dispatch`: wiring, exit codes, output
//! determinism, and the golden-file regression for `simulate`.

use rand::SeedableRng;
use spikedcov::cli::dispatch;
use spikedcov::model::{gen_spiked_data, SpikedScenario};
use spikedcov::sampler::ChainRng;
use std::io::Write;
use std::path::{Path, PathBuf};

fn write_csv(path: &Path, values: &ndarray::Array2<f64>) {
    let mut f = std::fs::File::create(path).unwrap();
    for row in values.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{}", line.join(",")).unwrap();
    }
}

fn spiked_csv(dir: &Path, n: usize, p: usize, spikes: Vec<f64>, seed: u64) -> PathBuf {
    let sc = SpikedScenario::new(n, p, spikes, 1.0).unwrap();
    let x = gen_spiked_data(&sc, &mut ChainRng::seed_from_u64(seed));
    let path = dir.join(format!("data_{n}x{p}_{seed}.csv"));
    write_csv(&path, x.values());
    path
}

#[test]
fn estimate_runs_and_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let input = spiked_csv(dir.path(), 20, 6, vec![12.0, 5.0], 11);
    let out1 = dir.path().join("est1.json");
    let out2 = dir.path().join("est2.json");
    let args = |out: &Path| {
        vec![
            "spikedcov".to_string(),
            "estimate".into(),
            "--input".into(),
            input.display().to_string(),
            "--k".into(),
            "2".into(),
            "--draws".into(),
            "200".into(),
            "--burnin".into(),
            "100".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            out.display().to_string(),
        ]
    };
    assert_eq!(dispatch(args(&out1)), 0);
    assert_eq!(dispatch(args(&out2)), 0);
    let a = std::fs::read(&out1).unwrap();
    let b = std::fs::read(&out2).unwrap();
    assert_eq!(
        a, b,
        "identical argv + seed must give byte-identical output"
    );

    let parsed: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(parsed["k"], 2);
    assert_eq!(parsed["eigenvalues"].as_array().unwrap().len(), 2);
    assert_eq!(parsed["eigenvectors"][0].as_array().unwrap().len(), 6);
    let point = parsed["eigenvalues"][0]["point"].as_f64().unwrap();
    assert!(point > 0.0);
}

#[test]
fn estimate_writes_draws_csv() {
    let dir = tempfile::tempdir().unwrap();
    let input = spiked_csv(dir.path(), 15, 5, vec![9.0], 3);
    let draws_path = dir.path().join("draws.csv");
    let code = dispatch([
        "spikedcov",
        "estimate",
        "--input",
        input.to_str().unwrap(),
        "--k",
        "1",
        "--draws",
        "50",
        "--burnin",
        "20",
        "--seed",
        "5",
        "--out",
        dir.path().join("est.json").to_str().unwrap(),
        "--draws-out",
        draws_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&draws_path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    // p eigenvalue columns then p entries for the single retained vector
    assert_eq!(header.split(',').count(), 10);
    assert!(header.starts_with("lambda_1,"));
    assert!(header.ends_with("xi1_5"));
    assert_eq!(lines.count(), 50);
}

#[test]
fn select_k_gr_on_strong_spike() {
    let dir = tempfile::tempdir().unwrap();
    let input = spiked_csv(dir.path(), 30, 10, vec![60.0], 17);
    let out = dir.path().join("sel.json");
    let code = dispatch([
        "spikedcov",
        "select-k",
        "--input",
        input.to_str().unwrap(),
        "--criterion",
        "gr",
        "--kmax",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let parsed: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(parsed["criterion"], "gr");
    assert_eq!(parsed["chosen_k"], 1);
    assert_eq!(parsed["scores"].as_array().unwrap().len(), 4);
}

#[test]
fn reduce_with_fixed_k() {
    let dir = tempfile::tempdir().unwrap();
    let input = spiked_csv(dir.path(), 16, 8, vec![20.0, 8.0], 23);
    let out = dir.path().join("red.json");
    let recon = dir.path().join("recon.csv");
    let code = dispatch([
        "spikedcov",
        "reduce",
        "--input",
        input.to_str().unwrap(),
        "--k",
        "2",
        "--recon-out",
        recon.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let parsed: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(parsed["chosen_k"], 2);
    let nmse = parsed["nmse"].as_f64().unwrap();
    let cve = parsed["cve"].as_f64().unwrap();
    assert!(nmse > 0.0 && nmse < 1.0);
    assert!(cve > 0.0 && cve < 1.0);
    let recon_text = std::fs::read_to_string(&recon).unwrap();
    assert_eq!(recon_text.lines().count(), 16);
    assert_eq!(recon_text.lines().next().unwrap().split(',').count(), 8);
}

#[test]
fn simulate_csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.csv");
    let code = dispatch([
        "spikedcov",
        "simulate",
        "--case",
        "2",
        "--n",
        "12",
        "--p",
        "10",
        "--reps",
        "2",
        "--draws",
        "40",
        "--burnin",
        "20",
        "--methods",
        "sample,spoet",
        "--seed",
        "1",
        "--format",
        "csv",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "eigenvalue,n,sample_err_lambda,sample_err_xi,sample_cp,sample_il,\
         spoet_err_lambda,spoet_err_xi,spoet_cp,spoet_il"
    );
    assert_eq!(lines.count(), 3); // three spiked eigenvalues
}

#[test]
fn simulate_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.json");
    let code = dispatch([
        "spikedcov",
        "simulate",
        "--case",
        "2",
        "--n",
        "12",
        "--p",
        "10",
        "--reps",
        "2",
        "--draws",
        "60",
        "--burnin",
        "30",
        "--methods",
        "sample,gsiw,spoet",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let produced = std::fs::read_to_string(&out).unwrap();
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/simulate_tiny.json");
    let golden = std::fs::read_to_string(&golden_path).unwrap();
    assert_eq!(
        produced, golden,
        "simulate output diverged from the golden file"
    );
}

#[test]
fn env_seed_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let input = spiked_csv(dir.path(), 12, 5, vec![8.0], 29);
    let flag_out = dir.path().join("flag.json");
    let env_out = dir.path().join("env.json");
    let base = |out: &Path| {
        vec![
            "spikedcov".to_string(),
            "select-k".into(),
            "--input".into(),
            input.display().to_string(),
            "--criterion".into(),
            "icp3".into(),
            "--kmax".into(),
            "2".into(),
            "--out".into(),
            out.display().to_string(),
        ]
    };
    let mut with_flag = base(&flag_out);
    with_flag.extend(["--seed".to_string(), "123".into()]);
    assert_eq!(dispatch(with_flag), 0);

    std::env::set_var(spikedcov::cli::SEED_ENV, "123");
    assert_eq!(dispatch(base(&env_out)), 0);
    std::env::remove_var(spikedcov::cli::SEED_ENV);

    assert_eq!(
        std::fs::read(&flag_out).unwrap(),
        std::fs::read(&env_out).unwrap()
    );
}

#[test]
fn exit_codes() {
    // usage errors -> 1
    assert_eq!(dispatch(["spikedcov", "bogus"]), 1);
    assert_eq!(
        dispatch(["spikedcov", "simulate", "--case", "9"]),
        1,
        "unknown case preset is a usage error"
    );
    // runtime error (missing file) -> 2
    assert_eq!(
        dispatch([
            "spikedcov",
            "estimate",
            "--input",
            "/nonexistent/file.csv",
            "--k",
            "1"
        ]),
        2
    );
}
