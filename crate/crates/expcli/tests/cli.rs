use std::process::Command;

use expcli::angle::{run_angle_point, run_angle_sweep, AngleConfig};
use expcli::gamma::{run_erm, run_gamma_sweep, GammaConfig};
use expcli::lambda::{run_lambda_sweep, LambdaConfig};
use expcli::output::{write_records, CsvRecord};
use expcli::svm_check::{run_svm_check, SvmCheckConfig};
use expcli::{parse_config, CliError, ExperimentConfig};
use tempering::losses::LpmVariant;

fn expcli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_expcli"))
}

fn scratch(name: &str, text: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("expcli-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn small_gamma() -> GammaConfig {
    parse_config("[data]\nn_majority = 100\nn_minority = 2\n[train]\nsolver = \"svm\"\n").unwrap()
}

#[test]
fn unknown_keys_are_config_errors() {
    for text in ["[data]\nn_majorty = 3\n", "[nope]\nx = 1\n", "[sweep]\ngammas = [0.5, 2.0]\n"] {
        let err = parse_config::<GammaConfig>(text).unwrap_err();
        assert!(matches!(err, CliError::Config(_) | CliError::Core(_)), "{text}: {err}");
        assert_eq!(err.exit_code(), 2, "{text}: {err}");
    }
    assert!(parse_config::<GammaConfig>("[run]\nexperiment = \"lpm\"\n").is_err());
    assert!(parse_config::<GammaConfig>("[run]\nexperiment = \"gamma-sweep\"\nseed = 4\n").is_ok());
}

#[test]
fn binary_reports_config_errors_with_exit_code_2() {
    let bad = scratch("bad.toml", "[data]\nwrong_key = 1\n");
    let out = expcli().args(["gamma-sweep", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("wrong_key"));
    let missing = expcli().args(["lpm", "--config", "/definitely/not/here.toml"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let no_cmd = expcli().output().unwrap();
    assert_eq!(no_cmd.status.code(), Some(2));
}

#[test]
fn binary_writes_csv_to_stdout_and_seed_overrides() {
    let cfg = scratch("g.toml", "[data]\nn_majority = 50\nn_minority = 2\n[train]\nsolver = \"svm\"\n[run]\nreplicates = 1\n");
    let out = expcli().args(["gamma-sweep", "--seed", "9", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "experiment,seed,gamma,balanced_acc,worst_group_acc,acc_majority,acc_minority,claim");
    assert_eq!(lines.len(), 6);
    assert!(lines[1..].iter().all(|l| l.starts_with("gamma-sweep,9,")));
}

#[test]
fn gamma_sweep_rows_and_erm_reduction() {
    let cfg = small_gamma();
    let rows = run_gamma_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 25);
    for row in rows.iter().filter(|r| r.gamma == 0.0) {
        assert_eq!(row, &run_erm(&cfg, row.seed).unwrap());
    }
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    assert_eq!(seeds, cfg.seeds());
}

#[test]
fn angle_rows_track_their_reference_angles() {
    let cfg: AngleConfig = parse_config("[run]\nreplicates = 1\n[lpm]\nsteps = 30000\n").unwrap();
    let rows = run_angle_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 6);
    let mut it_w_minority = Vec::new();
    for r in &rows {
        match r.variant {
            LpmVariant::ItH => {
                assert!((r.majority_angle - r.etf_angle()).abs() <= 2.0 && (r.minority_angle - r.etf_angle()).abs() <= 2.0, "{r:?}");
            }
            LpmVariant::ItW => it_w_minority.push(r.minority_angle),
            LpmVariant::Vanilla => unreachable!(),
        }
    }
    assert!(it_w_minority.windows(2).all(|w| w[1] > w[0]), "{it_w_minority:?}");
    let h = run_angle_point(&cfg, 0, 1, LpmVariant::ItH).unwrap();
    let w = run_angle_point(&cfg, 0, 1, LpmVariant::ItW).unwrap();
    assert!((h.minority_angle - w.minority_angle).abs() < 1e-9 && (h.majority_angle - w.majority_angle).abs() < 1e-9);
}

#[test]
fn lambda_sweep_unit_margin_matches_erm() {
    let cfg: LambdaConfig = parse_config(
        "[run]\nreplicates = 1\n[spurious]\nnoise_dim = 2000\nn_majority = 180\nn_minority = 20\n[sweep]\nlambdas = [1, 3]\nsigma_c = [1]\nmu_c = []\n",
    )
    .unwrap();
    let rows = run_lambda_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    let sample = tempering::spurious::ScalarSample::draw(&cfg.spurious.params(), 0).unwrap();
    let erm = tempering::spurious::joint_min_norm_separator(&sample, 1.0, tempering::spurious::SignalConstraint::Free).unwrap();
    assert!((rows[0].row.u - erm.u()).abs() <= 1e-4 && (rows[0].row.v - erm.v()).abs() <= 1e-4);
}

#[test]
fn svm_check_default_passes_its_own_claims() {
    let rows = run_svm_check(&SvmCheckConfig::default()).unwrap();
    assert_eq!(rows.len(), 5);
    for r in &rows {
        assert!(r.cosine >= 0.99, "seed {}: {}", r.seed, r.cosine);
        assert!((r.active_margin_ratio() - r.expected_margin_ratio()).abs() <= 1e-6);
    }
    let mut buf = Vec::new();
    write_records(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, expcli::svm_check::CheckOutcome::header().join(","));
    assert!(header.starts_with("experiment,seed,") && header.ends_with(",claim"));
}
