use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqrtgap"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn invalid_input_exits_with_two() {
    assert_eq!(bin(&["gaps", "--n", "5"]).status.code(), Some(2));
    assert_eq!(
        bin(&["moments", "--n", "10000", "--k", "4"]).status.code(),
        Some(2)
    );
    assert_eq!(
        bin(&["void", "--n", "10000", "--eta", "0.5"]).status.code(),
        Some(2)
    );
}

#[test]
fn gaps_csv_to_stdout() {
    let out = bin(&["gaps", "--n", "1000", "--bins", "10"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines[0], "bin_lo,bin_hi,count,density,exp_density");
    assert!(lines.len() >= 11);
    assert!(String::from_utf8(out.stderr).unwrap().contains("gaps:"));
}

#[test]
fn json_carries_config_and_results() {
    let out = bin(&["void", "--n", "1000", "--format", "json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["config"]["command"]["command"], "void");
    assert_eq!(v["config"]["command"]["n"], 1000);
    assert!(v["results"].is_object());
}

#[test]
fn unwritable_output_exits_with_three() {
    let out = bin(&["qset", "--n", "10000", "--out", "/nonexistent/dir/file.csv"]);
    assert_eq!(out.status.code(), Some(3));
}
