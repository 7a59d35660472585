use std::process::{Command, Output};

fn marlmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marlmem"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> &str {
    std::str::from_utf8(&out.stdout).unwrap()
}

#[test]
fn data_on_stdout_summary_on_stderr() {
    let out = marlmem(&["threelane"]);
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("target_lane,policy,steps,fuel_moves,return\n"));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("behavior-comm"));
    assert!(!err.contains("target_lane,"));
}

#[test]
fn out_flag_writes_file_and_leaves_stdout_empty() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let out = marlmem(&["rps-colearn", "--steps", "0", "--out", path.to_str().unwrap(), "--quiet"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty() && out.stderr.is_empty());
    let csv = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        csv,
        "t,theta_r,theta_p,theta_s,theta_r',theta_p',theta_s',radius,projected_flag\n\
         0,0.4,0.3,0.3,0.3333333333333333,0.3333333333333333,0.3333333333333333,0.08164965809277262,0\n"
    );
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("exp.conf");
    std::fs::write(&conf, "lane_length = 4\nfuel_cost = 2\n").unwrap();
    let from_file = marlmem(&["threelane", "--config", conf.to_str().unwrap(), "-q"]);
    let from_flags = marlmem(&["threelane", "--lane-length", "4", "--fuel-cost", "2", "-q"]);
    assert_eq!(from_file.stdout, from_flags.stdout);
    // naive: 3 agents x 4 moves at fuel 2, 4 steps at time 0.1
    assert!(stdout(&from_file).contains("top,naive,4,12,-14.400000\n"));

    let overridden = marlmem(&["threelane", "--config", conf.to_str().unwrap(), "--fuel-cost", "1", "-q"]);
    assert!(stdout(&overridden).contains("top,naive,4,12,-2.400000\n"));
}

#[test]
fn unknown_config_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "seed = 3\nlanes = 4\n").unwrap();
    let out = marlmem(&["threelane", "--config", conf.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key `lanes`"));
}

#[test]
fn invalid_values_exit_nonzero() {
    for args in [
        &["rps-eval", "--horizon", "lots"][..],
        &["rps-eval", "--gamma", "0", "--episodes", "10"],
        &["rps-colearn", "--eta", "-1"],
        &["threelane", "--lane-length", "2"],
        &["speakermover-search", "--noise", "1.0"],
        &["traffic-table", "--episodes", "1"],
    ] {
        let out = marlmem(args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(out.stdout.is_empty());
    }
}

#[test]
fn speakermover_policy_file() {
    let dir = tempfile::tempdir().unwrap();
    let policy = dir.path().join("mover.txt");
    let out = marlmem(&["speakermover-search", "--noise", "0.2", "--policy-out", policy.to_str().unwrap(), "-q"]);
    assert!(out.status.success());
    let lines: Vec<String> = stdout(&out).lines().map(str::to_owned).collect();
    assert_eq!(lines[0], "epsilon,memoryless_value,memoryful_value");
    assert_eq!(lines[1], "0,7.000000000000,7.000000000000");
    let text = std::fs::read_to_string(&policy).unwrap();
    let table = marlmem_core::speakermover::MoverPolicyTable::from_text(&text).unwrap();
    let protocol = marlmem_core::speakermover::Protocol::standard();
    assert_eq!(
        marlmem_core::speakermover::evaluate_table(&table, &protocol, 0.0).unwrap(),
        7.0
    );
}

#[test]
fn seeds_change_sampled_results() {
    let a = marlmem(&["rps-eval", "--episodes", "300", "--horizon", "20", "--seed", "1", "-q"]);
    let b = marlmem(&["rps-eval", "--episodes", "300", "--horizon", "20", "--seed", "2", "-q"]);
    assert!(a.status.success() && b.status.success());
    assert_ne!(a.stdout, b.stdout);
}
