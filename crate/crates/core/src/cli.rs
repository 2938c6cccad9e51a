//! Command-line surface: argument parsing, dispatch and table output.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::arith::{
    build_qset, default_prime_floor, default_v_cap, gauss_closed_sweep, gauss_vanishing_sweep,
    phase_reduction_sweep, qset_phi_stats, FareyPoint, QMode, QSet,
};
use crate::error::Error;
use crate::minorarc::{
    jutila_l2, jutila_l2_direct, restricted_void, smoothed_void, LatticeSum, MinorArcMeasure,
    Prop3Study,
};
use crate::moments::{
    moment_compare, RhsCaps, DEFAULT_THETA_NODES, DEFAULT_T_CAP, DEFAULT_V_NODES,
};
use crate::osc::FresnelCheck;
use crate::seq::{build_sequence, MAX_N, MIN_N};
use crate::testfn::{BumpFunction, Normalization, TestFnParams, TestFunctionSet};

pub const SCHEMA: &str = "sqrtgap/1";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Lib(Error::InvalidInput(_)) => 2,
            CliError::Lib(_) => 1,
            CliError::Io(_) | CliError::Json(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyMode {
    Paper,
    Desk,
}

impl From<FamilyMode> for QMode {
    fn from(m: FamilyMode) -> Self {
        match m {
            FamilyMode::Paper => QMode::Paper,
            FamilyMode::Desk => QMode::DeskPrimePair,
        }
    }
}

fn parse_n(s: &str) -> Result<u64, String> {
    let n: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if n.fract() != 0.0 || !(MIN_N as f64..=MAX_N as f64).contains(&n) {
        return Err(format!("N must be an integer in [{MIN_N}, {MAX_N}]"));
    }
    Ok(n as u64)
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

fn parse_delta(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if (1.0..=16.0).contains(&x) => Ok(x),
        _ => Err(format!("Delta = `{s}` must lie in [1, 16]")),
    }
}

fn parse_eta(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x < 0.01 => Ok(x),
        _ => Err(format!("eta = `{s}` must lie in (0, 1/100)")),
    }
}

#[derive(Debug, Clone, Parser, Serialize)]
#[command(
    name = "sqrtgap",
    version,
    about = "Fine-scale statistics of √n mod 1 and minor-arc numerics"
)]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub threads: Option<usize>,
    /// Output file; stdout if absent.
    #[arg(long = "out", global = true)]
    #[serde(skip)]
    pub out_path: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Seed for randomized checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Histogram of normalized gaps against e^{−t}.
    Gaps(GapsArgs),
    /// Void statistic, its overshoot identity and (with --delta) the minor-arc versions.
    Void(VoidArgs),
    /// Gauss-sum closed form, vanishing, and the phase-reduction identity.
    GaussCheck(GaussArgs),
    /// Fresnel-type identity for two bumps.
    FresnelCheck(FresnelArgs),
    /// Direct smoothed count against the minor-arc formula over a v-cap ladder.
    Prop3Check(Prop3Args),
    /// L² discrepancy of the arc approximation to 1.
    Jutila(JutilaArgs),
    /// k-th moment of the lattice sum against its main term.
    Moments(MomentArgs),
    /// The modulus family and its totient statistics.
    Qset(QsetArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gaps(_) => "gaps",
            Command::Void(_) => "void",
            Command::GaussCheck(_) => "gauss-check",
            Command::FresnelCheck(_) => "fresnel-check",
            Command::Prop3Check(_) => "prop3-check",
            Command::Jutila(_) => "jutila",
            Command::Moments(_) => "moments",
            Command::Qset(_) => "qset",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FamilyArgs {
    #[arg(long = "delta", value_parser = parse_delta, default_value_t = 2.0)]
    pub delta: f64,
    /// Smallest prime factor in desk mode (default ⌈Δ⁴⌉).
    #[arg(long)]
    pub prime_floor: Option<u64>,
    #[arg(long, value_enum, default_value_t = FamilyMode::Desk)]
    pub mode: FamilyMode,
}

impl FamilyArgs {
    fn floor(&self) -> u64 {
        self.prime_floor
            .unwrap_or_else(|| default_prime_floor(self.delta))
    }

    fn build(&self, n: u64) -> Result<QSet, Error> {
        build_qset(self.delta, n, self.mode.into(), self.floor())
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GapsArgs {
    #[arg(long, value_parser = parse_n)]
    pub n: u64,
    /// Bins of width bin_max/bins; the default width 1/20 tiles the flat range.
    #[arg(long, default_value_t = 80)]
    pub bins: usize,
    /// Upper end of the last finite bin, in units of 1/N.
    #[arg(long, value_parser = parse_positive, default_value_t = 4.0)]
    pub bin_max: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VoidArgs {
    #[arg(long, value_parser = parse_n)]
    pub n: u64,
    #[arg(long, value_delimiter = ',', value_parser = parse_positive, default_values_t = vec![0.1, 0.5, 1.0, 2.0, 5.0])]
    pub s: Vec<f64>,
    /// Also evaluate the restricted and smoothed void statistics on the arc family.
    #[arg(long, value_parser = parse_delta)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub prime_floor: Option<u64>,
    #[arg(long, value_parser = parse_eta, default_value_t = 1.0 / 200.0)]
    pub eta: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GaussArgs {
    #[arg(long, default_value_t = 200)]
    pub v_max: u64,
    #[arg(long, default_value_t = 400)]
    pub u_max: i64,
    #[arg(long, default_value_t = 500)]
    pub c_max: u64,
    /// Random admissible tuples for the phase-reduction identity.
    #[arg(long, default_value_t = 1000)]
    pub tuples: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FresnelArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, -2.0, 3.5, -5.5, 8.0, 13.0, -17.0])]
    pub v: Vec<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Prop3Args {
    #[arg(long, value_parser = parse_n, default_value = "1000000")]
    pub n: u64,
    #[arg(long = "delta", value_parser = parse_delta, default_value_t = 4.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 40)]
    pub prime_floor: u64,
    #[arg(long, default_value_t = 60)]
    pub arcs: usize,
    /// Ladder of lattice caps (default Δ√N/2, Δ√N, 2Δ√N).
    #[arg(long, value_delimiter = ',')]
    pub v_caps: Vec<i64>,
    #[arg(long, value_parser = parse_eta, default_value_t = 1.0 / 200.0)]
    pub eta: f64,
    /// Largest acceptable median residual on the top rung.
    #[arg(long, default_value_t = 0.05)]
    pub budget: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct JutilaArgs {
    #[arg(long, value_parser = parse_n)]
    pub n: u64,
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Use the single modulus q instead of the family.
    #[arg(long)]
    pub modulus: Option<u64>,
    /// Exact frequency range in units of N.
    #[arg(long, default_value_t = 100)]
    pub ell_factor: u64,
    /// Also integrate |1 − χ̃|² directly (needs disjoint arcs).
    #[arg(long)]
    pub direct: bool,
    #[arg(long, default_value_t = 10.0)]
    pub max_ratio: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MomentArgs {
    #[arg(long, value_parser = parse_n)]
    pub n: u64,
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=3))]
    pub k: u32,
    #[arg(long, default_value_t = DEFAULT_T_CAP)]
    pub t_cap: i64,
    #[arg(long, default_value_t = DEFAULT_V_NODES)]
    pub v_nodes: usize,
    #[arg(long, default_value_t = DEFAULT_THETA_NODES)]
    pub theta_nodes: usize,
    #[arg(long, default_value_t = 0.1)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct QsetArgs {
    #[arg(long, value_parser = parse_n)]
    pub n: u64,
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
}

/// Parse arguments (program name first).
pub fn parse_config<I, T>(args: I) -> Result<RunConfig, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    RunConfig::try_parse_from(args)
}

/// A finished command: results, an optional table, and whether its checks passed.
pub struct Outcome {
    pub results: Value,
    pub table: Option<Table>,
    pub summary: String,
    pub pass: bool,
}

pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// JSON with every float printed to 17 significant digits.
pub fn to_json_string(v: &Value) -> String {
    fn go(v: &Value, out: &mut String) {
        match v {
            Value::Number(n) if n.is_f64() => out.push_str(&num(n.as_f64().expect("f64"))),
            Value::Array(a) => {
                out.push('[');
                for (i, x) in a.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    go(x, out);
                }
                out.push(']');
            }
            Value::Object(m) => {
                out.push('{');
                for (i, (k, x)) in m.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{}:", Value::String(k.clone()));
                    go(x, out);
                }
                out.push('}');
            }
            other => out.push_str(&other.to_string()),
        }
    }
    let mut s = String::new();
    go(v, &mut s);
    s.push('\n');
    s
}

fn flatten(prefix: &str, v: &Value, rows: &mut Vec<Vec<String>>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let p = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&p, x, rows);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), x, rows);
            }
        }
        Value::Number(n) if n.is_f64() => {
            rows.push(vec![prefix.to_string(), num(n.as_f64().expect("f64"))])
        }
        Value::String(s) => rows.push(vec![prefix.to_string(), s.clone()]),
        other => rows.push(vec![prefix.to_string(), other.to_string()]),
    }
}

/// The output document in the requested format.
pub fn render(cfg: &RunConfig, out: &Outcome) -> Result<String, CliError> {
    let format = cfg.format.unwrap_or(match cfg.command {
        Command::Gaps(_) | Command::Prop3Check(_) => Format::Csv,
        _ => Format::Json,
    });
    Ok(match format {
        Format::Json => {
            let mut results = out.results.clone();
            if let (Some(t), Value::Object(m)) = (&out.table, &mut results) {
                let rows: Vec<Value> = t
                    .rows
                    .iter()
                    .map(|r| {
                        Value::Object(
                            t.header
                                .iter()
                                .zip(r)
                                .map(|(h, c)| {
                                    let v = c
                                        .parse::<i64>()
                                        .map(Value::from)
                                        .or_else(|_| c.parse::<f64>().map(Value::from));
                                    (
                                        h.to_string(),
                                        v.unwrap_or_else(|_| Value::String(c.clone())),
                                    )
                                })
                                .collect(),
                        )
                    })
                    .collect();
                m.insert("table".into(), Value::Array(rows));
            }
            to_json_string(
                &json!({ "schema": SCHEMA, "config": serde_json::to_value(cfg)?, "results": results }),
            )
        }
        Format::Csv => {
            let (header, rows) = match &out.table {
                Some(t) => (t.header.clone(), t.rows.clone()),
                None => {
                    let mut rows = Vec::new();
                    flatten("", &out.results, &mut rows);
                    (vec!["key", "value"], rows)
                }
            };
            let mut s = format!(
                "# schema {SCHEMA}\n# config {}\n",
                serde_json::to_string(cfg)?
            );
            s.push_str(&header.join(","));
            s.push('\n');
            for r in rows {
                s.push_str(&r.join(","));
                s.push('\n');
            }
            s
        }
    })
}

/// Parse, run and write; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match parse_config(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    run(&cfg)
}

pub fn run(cfg: &RunConfig) -> i32 {
    if let Some(t) = cfg.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return 2;
        }
        // a pool may already exist when run twice in one process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    let result = execute(cfg).and_then(|out| {
        let doc = render(cfg, &out)?;
        match &cfg.out_path {
            Some(p) => {
                std::fs::write(p, doc)?;
                println!("{}", out.summary);
            }
            None => {
                std::io::stdout().write_all(doc.as_bytes())?;
                eprintln!("{}", out.summary);
            }
        }
        Ok(out.pass)
    });
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Run the command without writing anything.
pub fn execute(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let out = match &cfg.command {
        Command::Gaps(a) => gaps(a)?,
        Command::Void(a) => void(a)?,
        Command::GaussCheck(a) => gauss(a, cfg.seed)?,
        Command::FresnelCheck(a) => fresnel(a)?,
        Command::Prop3Check(a) => prop3(a)?,
        Command::Jutila(a) => jutila(a)?,
        Command::Moments(a) => moments(a)?,
        Command::Qset(a) => qset(a)?,
    };
    Ok(Outcome {
        summary: format!(
            "{}: {} ({})",
            cfg.command.name(),
            out.summary,
            if out.pass { "pass" } else { "FAIL" }
        ),
        ..out
    })
}

fn gaps(a: &GapsArgs) -> Result<Outcome, CliError> {
    let seq = build_sequence(a.n)?;
    let r = seq.gap_report(a.bins, a.bin_max)?;
    let rows = r
        .bins
        .iter()
        .map(|b| {
            vec![
                num(b.lo),
                num(b.hi),
                b.count.to_string(),
                num(b.density),
                num(b.exp_density),
            ]
        })
        .collect();
    let sup = r.sup_deviation(0.0, 2.0);
    let flat = r.flatness_ratio(0.05, 0.45);
    Ok(Outcome {
        results: json!({
            "n": r.n, "gaps": r.total_count(), "mean": r.mean, "min": r.min, "max": r.max,
            "sup_exp_deviation": sup, "flatness_ratio": flat,
        }),
        table: Some(Table {
            header: vec!["bin_lo", "bin_hi", "count", "density", "exp_density"],
            rows,
        }),
        summary: format!(
            "N = {}, sup |density − e^-t| on [0,2] = {sup:.4}, flatness on [0.05,0.45] = {flat:.4}",
            a.n
        ),
        pass: true,
    })
}

fn void(a: &VoidArgs) -> Result<Outcome, CliError> {
    let seq = build_sequence(a.n)?;
    let family = match a.delta {
        Some(d) => {
            let floor = a.prime_floor.unwrap_or_else(|| default_prime_floor(d));
            Some(build_qset(d, a.n, QMode::DeskPrimePair, floor)?)
        }
        None => None,
    };
    let mut rows = Vec::new();
    let mut pass = true;
    let mut worst_identity = 0.0f64;
    for &s in &a.s {
        let (v, g) = seq.void_gap_functional(s);
        let dev = (v - g).abs();
        worst_identity = worst_identity.max(dev);
        pass &= dev <= 1e-12;
        let mut row = vec![num(s), num(v), num(g), num(dev)];
        if let Some(qs) = &family {
            let tf = TestFunctionSet::new(TestFnParams {
                eta: a.eta,
                s,
                ..TestFnParams::default()
            })?;
            let mu = MinorArcMeasure::new(qs, &tf)?;
            let restricted = restricted_void(&mu, &seq, s)?;
            let smoothed = smoothed_void(&mu, &tf, a.n)?;
            let bound = 8.0 * (1.0 + s) * a.eta;
            let ok = (smoothed - restricted).abs() <= bound;
            pass &= ok;
            row.extend([
                num(restricted),
                num(smoothed),
                num((smoothed - restricted).abs()),
                num(bound),
                ok.to_string(),
            ]);
        }
        rows.push(row);
    }
    let mut header = vec!["s", "void", "overshoot", "identity_deviation"];
    if family.is_some() {
        header.extend([
            "restricted_void",
            "smoothed_void",
            "smoothing_gap",
            "smoothing_bound",
            "within_bound",
        ]);
    }
    Ok(Outcome {
        results: json!({ "n": a.n, "arcs": family.as_ref().map(|q| q.arc_count()), "max_identity_deviation": worst_identity }),
        table: Some(Table { header, rows }),
        summary: format!("N = {}, max |void − overshoot| = {worst_identity:.3e}", a.n),
        pass,
    })
}

fn gauss(a: &GaussArgs, seed: u64) -> Result<Outcome, CliError> {
    let closed = gauss_closed_sweep(a.v_max, a.u_max)?;
    let vanish = gauss_vanishing_sweep(a.c_max)?;
    let phase = phase_reduction_sweep(a.tuples, seed)?;
    let pass =
        closed.max_scaled_deviation <= 1e-9 && vanish.max_ratio <= 1e-9 && phase.nonzero == 0;
    Ok(Outcome {
        summary: format!(
            "closed form max dev {:.3e}·√(4v), vanishing max |G|/c {:.3e}, phase residues nonzero {}/{}",
            closed.max_scaled_deviation, vanish.max_ratio, phase.nonzero, phase.checked
        ),
        results: json!({ "closed_form": closed, "vanishing": vanish, "phase_reduction": phase }),
        table: None,
        pass,
    })
}

fn fresnel(a: &FresnelArgs) -> Result<Outcome, CliError> {
    let bumps = [
        ("weight", TestFunctionSet::default().weight),
        (
            "wide",
            BumpFunction::new((0.7, 1.7), Some((0.8, 1.6)), Normalization::PlateauOne)?,
        ),
    ];
    let v_max = a.v.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for (name, f) in &bumps {
        let c = FresnelCheck::new(f, v_max)?;
        for &v in &a.v {
            let (l, r) = (c.lhs(v)?, c.rhs(v)?);
            let d = (l - r).norm();
            worst = worst.max(d);
            rows.push(vec![
                name.to_string(),
                num(v),
                num(l.re),
                num(l.im),
                num(r.re),
                num(r.im),
                num(d),
            ]);
        }
    }
    Ok(Outcome {
        results: json!({ "max_deviation": worst, "tol": a.tol }),
        table: Some(Table {
            header: vec![
                "bump",
                "v",
                "lhs_re",
                "lhs_im",
                "rhs_re",
                "rhs_im",
                "deviation",
            ],
            rows,
        }),
        summary: format!("max |lhs − rhs| = {worst:.3e}"),
        pass: worst <= a.tol,
    })
}

/// Arcs spread over the family: member i mod len, a stepped by a large odd stride.
pub fn spread_arcs(qs: &QSet, count: usize) -> Result<Vec<FareyPoint>, Error> {
    let mut out = Vec::with_capacity(count);
    let members = &qs.members;
    for i in 0..count {
        let q = members[(i * 7) % members.len()].q;
        let mut a = 1 + (i as u64 * 7919) % (q - 1);
        while num_integer::gcd(a, q) != 1 {
            a = a % (q - 1) + 1;
        }
        out.push(FareyPoint::new(a, q)?);
    }
    Ok(out)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn prop3(a: &Prop3Args) -> Result<Outcome, CliError> {
    let base = default_v_cap(a.delta, a.n);
    let caps = if a.v_caps.is_empty() {
        vec![(base + 3) / 4, (base + 1) / 2, base]
    } else {
        a.v_caps.clone()
    };
    if caps.iter().any(|&c| c < 1) {
        return Err(Error::InvalidInput("v caps must be positive".into()).into());
    }
    let qs = build_qset(a.delta, a.n, QMode::DeskPrimePair, a.prime_floor)?;
    let tf = TestFunctionSet::new(TestFnParams {
        eta: a.eta,
        ..TestFnParams::default()
    })?;
    let theta_max = tf.phi_bump.support().1;
    let study = Prop3Study::new(
        &tf,
        a.n,
        a.delta,
        *caps.iter().max().expect("nonempty"),
        theta_max,
    )?;
    let arcs = spread_arcs(&qs, a.arcs)?;
    let rows: Vec<_> = arcs
        .iter()
        .enumerate()
        .map(|(i, &fp)| {
            let theta = theta_max * ((i % 5) as f64 - 2.0) / 2.0;
            study.rows(fp, theta, &caps)
        })
        .collect::<Result<Vec<_>, Error>>()?
        .into_iter()
        .flatten()
        .collect();
    let medians: Vec<f64> = caps
        .iter()
        .map(|&c| {
            median(
                rows.iter()
                    .filter(|r| r.v_cap == c)
                    .map(|r| r.residual)
                    .collect(),
            )
        })
        .collect();
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    // truncation stability on a fixed example
    let n0 = 10_000;
    let fp0 = FareyPoint::new(1, 101 * 103)?;
    let cap0 = default_v_cap(2.0, n0);
    let small = LatticeSum::new(&tf, n0, 2.0, 2 * cap0, theta_max)?;
    let (r1, r2) = (
        small.r_tilde(fp0, 0.0, cap0)?,
        small.r_tilde(fp0, 0.0, 2 * cap0)?,
    );
    let stability = (r1 - r2).abs() / r1.abs().max(1e-300);
    let top = *medians.last().expect("nonempty");
    let pass = decreasing && stability <= 1e-4 && top <= a.budget;
    let table = rows
        .iter()
        .map(|r| {
            vec![
                r.q.to_string(),
                r.a.to_string(),
                num(r.theta),
                r.v_cap.to_string(),
                num(r.r_direct),
                num(r.r_formula),
                num(r.residual),
            ]
        })
        .collect();
    Ok(Outcome {
        results: json!({
            "n": a.n, "arcs": arcs.len(), "v_caps": caps, "median_residual": medians,
            "decreasing": decreasing, "stability_rel_change": stability, "budget": a.budget,
        }),
        table: Some(Table {
            header: vec![
                "q",
                "a",
                "theta",
                "v_cap",
                "r_direct",
                "r_formula",
                "residual",
            ],
            rows: table,
        }),
        summary: format!(
            "median residual by v_cap {medians:?}, doubled-cap change {stability:.3e}"
        ),
        pass,
    })
}

fn jutila(a: &JutilaArgs) -> Result<Outcome, CliError> {
    let qs = match a.modulus {
        Some(q) => QSet::from_moduli(a.family.delta, a.n, &[q])?,
        None => a.family.build(a.n)?,
    };
    let tf = TestFunctionSet::default();
    let mu = MinorArcMeasure::new(&qs, &tf)?;
    let r = jutila_l2(&mu, a.n, a.ell_factor.max(1) * a.n)?;
    let direct = if a.direct {
        Some(jutila_l2_direct(&mu, a.n)?)
    } else {
        None
    };
    let agreement = direct.map(|d| ((r.value - d) / d).abs());
    let pass = r.ratio <= a.max_ratio && agreement.is_none_or(|x| x <= 1e-6);
    Ok(Outcome {
        summary: format!(
            "value {:.6e}, bound {:.6e}, ratio {:.4}{}",
            r.value,
            r.bound,
            r.ratio,
            agreement
                .map(|x| format!(", direct rel diff {x:.3e}"))
                .unwrap_or_default()
        ),
        results: json!({ "report": r, "members": qs.len(), "arcs": qs.arc_count(), "direct": direct, "direct_rel_diff": agreement }),
        table: None,
        pass,
    })
}

fn moments(a: &MomentArgs) -> Result<Outcome, CliError> {
    let qs = a.family.build(a.n)?;
    let tf = TestFunctionSet::default();
    let mu = MinorArcMeasure::new(&qs, &tf)?;
    let caps = RhsCaps {
        t_cap: a.t_cap,
        v_nodes: a.v_nodes,
        theta_nodes: a.theta_nodes,
        ..RhsCaps::new(a.family.delta)
    };
    let r = moment_compare(&mu, &tf, a.n, a.family.delta, a.k, &caps)?;
    let pass = a.k == 1 || r.rel_error <= a.tol;
    Ok(Outcome {
        summary: if a.k == 1 {
            format!(
                "k = 1, lhs {:.6e}, rhs {:.6e}, |lhs| {:.3e}",
                r.lhs,
                r.rhs,
                r.lhs.abs()
            )
        } else {
            format!(
                "k = {}, lhs {:.6e}, rhs {:.6e}, rel error {:.3e}",
                r.k, r.lhs, r.rhs, r.rel_error
            )
        },
        results: serde_json::to_value(&r)?,
        table: None,
        pass,
    })
}

fn qset(a: &QsetArgs) -> Result<Outcome, CliError> {
    let qs = a.family.build(a.n)?;
    let stats = qset_phi_stats(&qs, a.epsilon)?;
    let rows = qs
        .members
        .iter()
        .map(|m| vec![m.q.to_string(), m.a.to_string(), m.b.to_string()])
        .collect();
    Ok(Outcome {
        summary: format!(
            "{} moduli, {} arcs, Q = {:.3}",
            qs.len(),
            qs.arc_count(),
            qs.q_real()
        ),
        results: json!({
            "members": qs.len(), "arcs": qs.arc_count(), "q": qs.q_real(),
            "prime_floor": qs.prime_floor, "a_band": qs.a_band, "phi_stats": stats,
        }),
        table: Some(Table {
            header: vec!["q", "a", "b"],
            rows,
        }),
        pass: true,
    })
}
