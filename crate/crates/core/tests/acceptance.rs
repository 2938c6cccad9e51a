//! Acceptance criteria, one test each. Every test writes a single
//! `criterion N: PASS|FAIL ...` line to stderr (outside the capture) and then asserts.

use std::io::Write;
use std::path::PathBuf;
use std::process::Command as Proc;
use std::time::{Duration, Instant};

use sqrtgap::arith::{
    build_qset, default_prime_floor, gauss_closed_sweep, gauss_vanishing_sweep,
    phase_reduction_sweep, QMode, QSet,
};
use sqrtgap::cli::{execute, parse_config, Outcome};
use sqrtgap::minorarc::{jutila_l2, jutila_l2_direct, MinorArcMeasure};
use sqrtgap::moments::{moment_compare, moment_lhs, RhsCaps};
use sqrtgap::seq::build_sequence;
use sqrtgap::testfn::TestFunctionSet;

fn report(id: u32, name: &str, ok: bool, elapsed: Duration, limit: Duration, detail: String) {
    let in_time = elapsed <= limit;
    let verdict = if ok && in_time { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {id} {name}: {verdict} ({detail}; {:.1} s of {} s)",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(ok, "criterion {id} {name}: {detail}");
    assert!(
        in_time,
        "criterion {id} {name}: took {elapsed:?}, limit {limit:?}"
    );
}

fn cli(args: &[&str]) -> Outcome {
    let cfg = parse_config(std::iter::once("sqrtgap").chain(args.iter().copied()))
        .expect("arguments parse");
    execute(&cfg).expect("command runs")
}

fn desk(delta: f64, n: u64) -> QSet {
    build_qset(delta, n, QMode::DeskPrimePair, default_prime_floor(delta)).unwrap()
}

#[test]
fn criterion_01_gauss_closed_form() {
    let t = Instant::now();
    let r = gauss_closed_sweep(200, 400).unwrap();
    let ok = r.max_scaled_deviation <= 1e-9;
    let detail = format!(
        "{} pairs, max deviation {:.2e}·√(4v)",
        r.checked, r.max_scaled_deviation
    );
    report(
        1,
        "gauss closed form",
        ok,
        t.elapsed(),
        Duration::from_secs(10),
        detail,
    );
}

#[test]
fn criterion_02_gauss_vanishing() {
    let t = Instant::now();
    let r = gauss_vanishing_sweep(500).unwrap();
    let ok = r.max_ratio <= 1e-9;
    let detail = format!("{} triples, max |G|/c {:.2e}", r.checked, r.max_ratio);
    report(
        2,
        "gauss vanishing",
        ok,
        t.elapsed(),
        Duration::from_secs(30),
        detail,
    );
}

#[test]
fn criterion_03_fresnel() {
    let t = Instant::now();
    let out = cli(&["fresnel-check"]);
    let worst = out.results["max_deviation"].as_f64().unwrap();
    let rows = out.table.as_ref().map_or(0, |t| t.rows.len());
    let ok = out.pass && worst <= 1e-6 && rows == 16;
    let detail = format!("{rows} (bump, v) pairs, max deviation {worst:.2e}");
    report(
        3,
        "fresnel identity",
        ok,
        t.elapsed(),
        Duration::from_secs(10),
        detail,
    );
}

#[test]
fn criterion_04_phase_reduction() {
    let t = Instant::now();
    let r = phase_reduction_sweep(1000, 0).unwrap();
    let ok = r.checked == 1000 && r.nonzero == 0;
    let detail = format!("{} tuples, {} nonzero residues", r.checked, r.nonzero);
    report(
        4,
        "phase reduction",
        ok,
        t.elapsed(),
        Duration::from_secs(10),
        detail,
    );
}

#[test]
fn criterion_05_void_identity() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for n in [1_000, 10_000] {
        let seq = build_sequence(n).unwrap();
        for l in [0.1, 0.5, 1.0, 2.0, 5.0] {
            let (v, g) = seq.void_gap_functional(l);
            worst = worst.max((v - g).abs());
        }
    }
    let ok = worst <= 1e-12;
    report(
        5,
        "void identity",
        ok,
        t.elapsed(),
        Duration::from_secs(5),
        format!("max deviation {worst:.2e}"),
    );
}

#[test]
fn criterion_06_prop3() {
    let t = Instant::now();
    let out = cli(&["prop3-check", "--n", "1000000", "--arcs", "60"]);
    let medians: Vec<f64> = out.results["median_residual"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    let decreasing = medians.len() == 3 && medians.windows(2).all(|w| w[1] < w[0]);
    let stability = out.results["stability_rel_change"].as_f64().unwrap();
    let ok = decreasing && stability <= 1e-4 && out.results["arcs"].as_u64().unwrap() >= 50;
    let detail = format!("medians {medians:.4?}, stability {stability:.2e}");
    report(
        6,
        "prop3 ladder",
        ok,
        t.elapsed(),
        Duration::from_secs(600),
        detail,
    );
}

#[test]
fn criterion_07_smoothing() {
    let t = Instant::now();
    let out = cli(&[
        "void", "--n", "1000000", "--s", "0.5,1,2", "--delta", "2", "--eta", "0.005",
    ]);
    let rows = &out.table.as_ref().unwrap().rows;
    let gaps: Vec<String> = rows
        .iter()
        .map(|r| format!("{}≤{}", r[6], r[7]))
        .collect();
    let ok = out.pass && rows.len() == 3 && rows.iter().all(|r| r[8] == "true");
    report(
        7,
        "smoothing",
        ok,
        t.elapsed(),
        Duration::from_secs(600),
        format!("|diff| vs bound {gaps:?}"),
    );
}

#[test]
fn criterion_08_jutila() {
    let t = Instant::now();
    let tf = TestFunctionSet::default();
    let n = 10_000;
    let one = QSet::from_moduli(2.0, n, &[307]).unwrap();
    let mu = MinorArcMeasure::new(&one, &tf).unwrap();
    let plancherel = jutila_l2(&mu, n, 400 * n).unwrap().value;
    let direct = jutila_l2_direct(&mu, n).unwrap();
    let agreement = ((plancherel - direct) / direct).abs();
    let mut ratios = Vec::new();
    for n in [10_000, 100_000, 1_000_000] {
        let mu = MinorArcMeasure::new(&desk(2.0, n), &tf).unwrap();
        ratios.push(jutila_l2(&mu, n, 100 * n).unwrap().ratio);
    }
    let ok = agreement <= 1e-6 && ratios.iter().all(|&r| r <= 10.0);
    let detail = format!("one-prime rel diff {agreement:.2e}, desk ratios {ratios:.3?}");
    report(
        8,
        "jutila L2",
        ok,
        t.elapsed(),
        Duration::from_secs(300),
        detail,
    );
}

#[test]
fn criterion_09_moments() {
    let t = Instant::now();
    let tf = TestFunctionSet::default();
    let n = 1_000_000;
    let mu = MinorArcMeasure::new(&desk(2.0, n), &tf).unwrap();
    let second = moment_compare(&mu, &tf, n, 2.0, 2, &RhsCaps::new(2.0)).unwrap();
    let mut first = Vec::new();
    for n in [10_000, 100_000, 1_000_000] {
        let mu = MinorArcMeasure::new(&desk(2.0, n), &tf).unwrap();
        first.push(moment_lhs(&mu, &tf, n, 2.0, 1).unwrap().abs());
    }
    let monotone = first.windows(2).all(|w| w[1] <= 2.0 * w[0]);
    let ok = second.rel_error <= 0.1 && monotone;
    let first_s: Vec<String> = first.iter().map(|x| format!("{x:.3e}")).collect();
    let detail = format!(
        "k=2 lhs {:.5} rhs {:.5} rel {:.3}; k=1 |lhs| {}",
        second.lhs,
        second.rhs,
        second.rel_error,
        first_s.join(", ")
    );
    report(
        9,
        "moments",
        ok,
        t.elapsed(),
        Duration::from_secs(1800),
        detail,
    );
}

#[test]
fn criterion_10_gaps() {
    let t = Instant::now();
    let r = build_sequence(1_000_000)
        .unwrap()
        .gap_report(80, 4.0)
        .unwrap();
    let sup = r.sup_deviation(0.0, 2.0);
    let flat = r.flatness_ratio(0.05, 0.45);
    let ok = sup > 0.1 && flat < 1.2;
    report(
        10,
        "non-exponential gaps",
        ok,
        t.elapsed(),
        Duration::from_secs(120),
        format!("sup {sup:.4}, flatness {flat:.4}"),
    );
}

fn run_bin(args: &[&str], threads: &str, out: &PathBuf) -> i32 {
    Proc::new(env!("CARGO_BIN_EXE_sqrtgap"))
        .args(args)
        .args(["--threads", threads, "--out"])
        .arg(out)
        .output()
        .expect("binary runs")
        .status
        .code()
        .unwrap_or(-1)
}

#[test]
fn criterion_11_determinism() {
    let t = Instant::now();
    let max = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .to_string();
    let dir = std::env::temp_dir().join(format!("sqrtgap-det-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let commands: [&[&str]; 10] = [
        &["gaps", "--n", "100000"],
        &["gaps", "--n", "100000", "--format", "json"],
        &["void", "--n", "100000", "--delta", "2"],
        &[
            "gauss-check",
            "--v-max",
            "40",
            "--u-max",
            "80",
            "--c-max",
            "80",
            "--tuples",
            "100",
        ],
        &["fresnel-check"],
        &[
            "prop3-check",
            "--n",
            "100000",
            "--arcs",
            "12",
            "--budget",
            "1",
        ],
        &["jutila", "--n", "10000"],
        &[
            "moments",
            "--n",
            "10000",
            "--k",
            "2",
            "--v-nodes",
            "4",
            "--theta-nodes",
            "2",
        ],
        &["moments", "--n", "10000", "--k", "1"],
        &["qset", "--n", "100000"],
    ];
    let mut mismatched = Vec::new();
    for (i, args) in commands.iter().enumerate() {
        let mut docs = Vec::new();
        for threads in ["1", "4", max.as_str()] {
            let path = dir.join(format!("{i}-{threads}"));
            let code = run_bin(args, threads, &path);
            docs.push((code, std::fs::read(&path).unwrap_or_default()));
        }
        if docs[0].1.is_empty() || docs.iter().any(|d| d != &docs[0]) {
            mismatched.push(args.join(" "));
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    let ok = mismatched.is_empty();
    let detail = format!(
        "{} commands × threads {{1, 4, {max}}}, mismatches {mismatched:?}",
        commands.len()
    );
    report(
        11,
        "determinism",
        ok,
        t.elapsed(),
        Duration::from_secs(1800),
        detail,
    );
}
