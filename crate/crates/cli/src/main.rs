use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use psclf_core::certify::{self, BmiCertificate, BmiFamily, CertReport, Verdict};
use psclf_core::clf::{load_clf, Pwsclf, RateFunction};
use psclf_core::fsim::{self, Controller, Outcome, SimConfig, SimMode};
use psclf_core::linalg::Matrix;
use psclf_core::model::{load_system, Monomial, Polynomial, SwitchedSystem};
use psclf_core::switchlaw::{LawConfig, RegionLaw, SwitchingLaw};

mod scripted;

/// Process exit statuses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Invalid = 1,
    Diverged = 2,
    Failed = 3,
    Inconclusive = 4,
    NotFound = 5,
}

impl From<Verdict> for Status {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Pass => Status::Ok,
            Verdict::Fail => Status::Failed,
            Verdict::Inconclusive => Status::Inconclusive,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "psclf",
    version,
    about = "Switching stabilization with piecewise smooth control-Lyapunov functions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the closed loop and write a trajectory CSV.
    Simulate(SimulateArgs),
    /// Check certificate conditions and write a JSON report.
    Certify(CertifyArgs),
    /// Search the simplex for a Hurwitz convex combination and its Lyapunov matrix.
    SynthesizeQuadratic(SynthesizeArgs),
    /// Check a matrix-inequality certificate by eigenvalues.
    VerifyBmi(VerifyBmiArgs),
    /// Run a bundled example and compare against its embedded expectations.
    Example(ExampleArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
struct SimulateArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long, conflicts_with = "region_law", required_unless_present = "region_law")]
    clf: Option<PathBuf>,
    #[arg(long)]
    region_law: Option<PathBuf>,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    x0: Vec<f64>,
    #[arg(long, default_value_t = 10.0)]
    t_final: f64,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value_t = 0.01)]
    hysteresis: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Relay)]
    mode: ModeArg,
    #[arg(long, default_value_t = 1e6)]
    divergence_bound: f64,
    #[arg(long, default_value_t = 1e-10)]
    event_tolerance: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModeArg {
    Relay,
    Filippov,
}

#[derive(Args, Debug, Clone)]
struct CertifyArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    clf: PathBuf,
    /// `quadratic:<eta>` or `polynomial:<JSON monomial list>`.
    #[arg(long, default_value = "quadratic:1")]
    rate: String,
    /// Comma-separated subset of psclf, sliding, region, max, completeness.
    #[arg(long, value_delimiter = ',', default_value = "psclf")]
    checks: Vec<String>,
    /// Sphere or box sample count; defaults to 720 in 2D and 20000 otherwise.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 100)]
    boundary_samples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct SynthesizeArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long, default_value_t = 100)]
    grid: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum FamilyArg {
    PiecewiseQuadratic,
    PointwiseMax,
}

#[derive(Args, Debug, Clone)]
struct VerifyBmiArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    certificate: PathBuf,
    #[arg(long, value_enum, default_value_t = FamilyArg::PiecewiseQuadratic)]
    family: FamilyArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExampleName {
    Ex1,
    Ex2,
    Ex3,
    Nonlinear,
}

#[derive(Args, Debug, Clone)]
struct ExampleArgs {
    #[arg(value_enum)]
    name: ExampleName,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
}

/// Everything needed to reproduce one command's outputs.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub inputs: Vec<String>,
    pub config: Value,
    pub outputs: Vec<String>,
    /// Fully resolved arguments; replay parses these again.
    pub argv: Vec<String>,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn read(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn write(p: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(p, contents).with_context(|| format!("writing {}", p.display()))
}

/// Rounds every float to 12 significant digits.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            let f = n.as_f64().expect("finite number");
            let r: f64 = format!("{f:.11e}").parse().expect("formatted float parses");
            // negative zero prints as 0.0
            json!(r + 0.0)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

pub fn write_json<T: Serialize>(p: &Path, value: &T) -> Result<()> {
    let v = round_json(serde_json::to_value(value)?);
    write(p, &(serde_json::to_string_pretty(&v)? + "\n"))
}

fn write_manifest(
    out: &Path,
    command: &str,
    inputs: &[&Path],
    config: Value,
    outputs: &[&Path],
    argv: Vec<String>,
) -> Result<()> {
    let m = RunManifest {
        tool: "psclf".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        inputs: inputs.iter().map(|p| path_str(p)).collect(),
        config,
        outputs: outputs.iter().map(|p| path_str(p)).collect(),
        argv,
    };
    write_json(&manifest_path(out), &m)
}

fn load_system_file(p: &Path) -> Result<SwitchedSystem> {
    load_system(&read(p)?).with_context(|| format!("system document {}", p.display()))
}

fn load_clf_file(p: &Path) -> Result<Pwsclf> {
    load_clf(&read(p)?).with_context(|| format!("CLF document {}", p.display()))
}

pub fn parse_rate(spec: &str, n: usize) -> Result<RateFunction> {
    let (kind, body) = spec
        .split_once(':')
        .ok_or_else(|| anyhow!("rate must be quadratic:<eta> or polynomial:<json>, got {spec:?}"))?;
    match kind {
        "quadratic" => {
            let eta: f64 = body.trim().parse().with_context(|| format!("rate eta {body:?}"))?;
            Ok(RateFunction::quadratic_norm(eta)?)
        }
        "polynomial" => {
            let terms: Vec<Monomial> = serde_json::from_str(body).context("rate polynomial")?;
            if terms.iter().any(|t| t.exponents.len() != n) {
                bail!("rate polynomial exponents must have length {n}");
            }
            Ok(RateFunction::polynomial(n, Polynomial::new(n, terms))?)
        }
        other => bail!("unknown rate kind {other:?}"),
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:e}")
}

fn simulate_cmd(a: &SimulateArgs) -> Result<Status> {
    let system_path = absolute(&a.system)?;
    let out = absolute(&a.out)?;
    let sys = load_system_file(&system_path)?;
    if a.x0.len() != sys.dimension() {
        bail!(
            "--x0 has {} entries, the system has dimension {}",
            a.x0.len(),
            sys.dimension()
        );
    }
    let cfg = SimConfig {
        step: a.step,
        t_final: a.t_final,
        hysteresis: a.hysteresis,
        mode: match a.mode {
            ModeArg::Relay => SimMode::Relay,
            ModeArg::Filippov => SimMode::Filippov,
        },
        event_tolerance: a.event_tolerance,
        divergence_bound: a.divergence_bound,
    };
    cfg.validate()?;
    let (law_flag, law_path) = match (&a.clf, &a.region_law) {
        (Some(c), None) => ("--clf", absolute(c)?),
        (None, Some(r)) => ("--region-law", absolute(r)?),
        _ => bail!("exactly one of --clf and --region-law is required"),
    };
    let traj = if law_flag == "--clf" {
        let law = SwitchingLaw::new(sys, load_clf_file(&law_path)?, LawConfig::default())?;
        fsim::simulate(Controller::Law(&law), &a.x0, &cfg)?
    } else {
        let law = RegionLaw::from_json(sys, &read(&law_path)?)?;
        fsim::simulate(Controller::Region(&law), &a.x0, &cfg)?
    };
    let mut buf = Vec::new();
    fsim::write_csv(&traj, &mut buf)?;
    write(&out, &String::from_utf8(buf)?)?;

    let x0 = a.x0.iter().map(|v| fmt_f(*v)).collect::<Vec<_>>().join(",");
    let mode = if a.mode == ModeArg::Relay { "relay" } else { "filippov" };
    let argv = vec![
        "simulate".into(),
        "--system".into(),
        path_str(&system_path),
        law_flag.into(),
        path_str(&law_path),
        format!("--x0={x0}"),
        "--t-final".into(),
        fmt_f(a.t_final),
        "--step".into(),
        fmt_f(a.step),
        "--hysteresis".into(),
        fmt_f(a.hysteresis),
        "--mode".into(),
        mode.into(),
        "--divergence-bound".into(),
        fmt_f(a.divergence_bound),
        "--event-tolerance".into(),
        fmt_f(a.event_tolerance),
        "--out".into(),
        path_str(&out),
    ];
    let config = json!({ "x0": a.x0, "sim": cfg, "law": law_flag.trim_start_matches("--") });
    write_manifest(&out, "simulate", &[&system_path, &law_path], config, &[&out], argv)?;
    match traj.outcome {
        Outcome::Completed => Ok(Status::Ok),
        Outcome::Diverged => {
            eprintln!(
                "diverged: |x| exceeded {} at t = {}",
                a.divergence_bound,
                fsim::format_sig(traj.last().t, 12)
            );
            Ok(Status::Diverged)
        }
    }
}

/// The quadratic matrix of a CLF with a single quadratic piece.
fn single_quadratic(v: &Pwsclf) -> Option<Matrix> {
    if v.is_quadratic() && v.piece_count() == 1 {
        v.piece_matrix(0).cloned()
    } else {
        None
    }
}

fn canonical_check(name: &str) -> Result<&'static str> {
    Ok(match name.trim() {
        "psclf" => "psclf",
        "sliding" | "cond12" => "sliding",
        "region" | "q" => "region",
        "max" | "m" => "max",
        "completeness" => "completeness",
        other => bail!("unknown check {other:?}; expected psclf, sliding, region, max or completeness"),
    })
}

#[derive(Serialize)]
struct CertifyOutput {
    verdict: Verdict,
    rate: String,
    samples: usize,
    reports: Vec<CertReport>,
}

fn certify_cmd(a: &CertifyArgs) -> Result<Status> {
    let system_path = absolute(&a.system)?;
    let clf_path = absolute(&a.clf)?;
    let out = absolute(&a.out)?;
    let sys = load_system_file(&system_path)?;
    let v = load_clf_file(&clf_path)?;
    let n = sys.dimension();
    if v.dimension() != n {
        bail!("CLF dimension {} does not match system dimension {n}", v.dimension());
    }
    let w = parse_rate(&a.rate, n)?;
    let samples = a.samples.unwrap_or(if n == 2 {
        certify::DEFAULT_SAMPLES_2D
    } else {
        certify::DEFAULT_SAMPLES_ND
    });
    let mut checks: Vec<&str> = Vec::new();
    for c in &a.checks {
        let c = canonical_check(c)?;
        if !checks.contains(&c) {
            checks.push(c);
        }
    }
    let mut reports = Vec::new();
    for c in &checks {
        let r = match *c {
            "psclf" => certify::check_psclf(&v, &w, &sys, samples)?,
            "sliding" => {
                let law = SwitchingLaw::new(sys.clone(), v.clone(), LawConfig::default())?;
                certify::check_sliding_condition(&law, &w, a.boundary_samples)?
            }
            "region" => certify::check_largest_region_conditions(&v, &sys, samples)?,
            "max" => certify::check_pointwise_max_conditions(&v, &sys, samples)?,
            "completeness" => {
                let p = single_quadratic(&v)
                    .ok_or_else(|| anyhow!("the completeness check needs a CLF with a single quadratic piece"))?;
                certify::check_strict_completeness(&p, &sys, samples)?
            }
            _ => unreachable!("canonicalized"),
        };
        reports.push(r);
    }
    let verdict = Verdict::combine(reports.iter().map(|r| r.verdict));
    write_json(
        &out,
        &CertifyOutput {
            verdict,
            rate: w.describe(),
            samples,
            reports,
        },
    )?;
    let argv = vec![
        "certify".into(),
        "--system".into(),
        path_str(&system_path),
        "--clf".into(),
        path_str(&clf_path),
        format!("--rate={}", w.describe()),
        format!("--checks={}", checks.join(",")),
        "--samples".into(),
        samples.to_string(),
        "--boundary-samples".into(),
        a.boundary_samples.to_string(),
        "--out".into(),
        path_str(&out),
    ];
    let config = json!({
        "rate": w.describe(),
        "checks": checks,
        "samples": samples,
        "boundary_samples": a.boundary_samples,
    });
    write_manifest(&out, "certify", &[&system_path, &clf_path], config, &[&out], argv)?;
    eprintln!("verdict: {}", serde_json::to_string(&verdict)?.trim_matches('"'));
    Ok(verdict.into())
}

fn synthesize_cmd(a: &SynthesizeArgs) -> Result<Status> {
    let system_path = absolute(&a.system)?;
    let out = absolute(&a.out)?;
    let sys = load_system_file(&system_path)?;
    let found = certify::search_stable_convex_combination(&sys, a.grid)?;
    let status = if found.is_some() { Status::Ok } else { Status::NotFound };
    let body = match &found {
        Some(c) => json!({ "found": true, "weights": c.weights, "P": c.p, "abscissa": c.abscissa, "grid": c.grid }),
        None => json!({ "found": false, "grid": a.grid }),
    };
    write_json(&out, &body)?;
    let argv = vec![
        "synthesize-quadratic".into(),
        "--system".into(),
        path_str(&system_path),
        "--grid".into(),
        a.grid.to_string(),
        "--out".into(),
        path_str(&out),
    ];
    write_manifest(
        &out,
        "synthesize-quadratic",
        &[&system_path],
        json!({ "grid": a.grid }),
        &[&out],
        argv,
    )?;
    if found.is_none() {
        eprintln!("no Hurwitz convex combination at grid resolution 1/{}", a.grid);
    }
    Ok(status)
}

fn verify_bmi_cmd(a: &VerifyBmiArgs) -> Result<Status> {
    let system_path = absolute(&a.system)?;
    let cert_path = absolute(&a.certificate)?;
    let out = absolute(&a.out)?;
    let sys = load_system_file(&system_path)?;
    let cert = BmiCertificate::from_json(&read(&cert_path)?)?;
    let family = match a.family {
        FamilyArg::PiecewiseQuadratic => BmiFamily::PiecewiseQuadratic,
        FamilyArg::PointwiseMax => BmiFamily::PointwiseMax,
    };
    let report = certify::verify_bmi_certificate(&cert, &sys, family)?;
    write_json(&out, &report)?;
    let family_name = match a.family {
        FamilyArg::PiecewiseQuadratic => "piecewise-quadratic",
        FamilyArg::PointwiseMax => "pointwise-max",
    };
    let argv = vec![
        "verify-bmi".into(),
        "--system".into(),
        path_str(&system_path),
        "--certificate".into(),
        path_str(&cert_path),
        "--family".into(),
        family_name.into(),
        "--out".into(),
        path_str(&out),
    ];
    write_manifest(
        &out,
        "verify-bmi",
        &[&system_path, &cert_path],
        json!({ "family": family_name }),
        &[&out],
        argv,
    )?;
    Ok(report.verdict.into())
}

fn example_cmd(a: &ExampleArgs) -> Result<Status> {
    let dir = absolute(&a.out_dir)?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let summary = scripted::run(a.name, &dir)?;
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &summary)?;
    let name = a
        .name
        .to_possible_value()
        .expect("named variant")
        .get_name()
        .to_string();
    let argv = vec!["example".into(), name.clone(), "--out-dir".into(), path_str(&dir)];
    let mut outputs: Vec<PathBuf> = summary.outputs.iter().map(|f| dir.join(f)).collect();
    outputs.push(summary_path.clone());
    let outputs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    write_manifest(&summary_path, "example", &[], json!({ "name": name }), &outputs, argv)?;
    for e in summary.expectations.iter().filter(|e| !e.pass) {
        eprintln!(
            "expectation failed: {} (expected {}, computed {})",
            e.name, e.expected, e.computed
        );
    }
    Ok(if summary.pass { Status::Ok } else { Status::Failed })
}

fn replay_cmd(a: &ReplayArgs) -> Result<Status> {
    let m: RunManifest = serde_json::from_str(&read(&a.manifest)?).context("manifest")?;
    if m.command == "replay" {
        bail!("a manifest cannot replay another replay");
    }
    let cli = Cli::try_parse_from(std::iter::once("psclf".to_string()).chain(m.argv.iter().cloned()))
        .map_err(|e| anyhow!("manifest arguments do not parse: {e}"))?;
    dispatch(&cli.command)
}

fn dispatch(c: &Command) -> Result<Status> {
    match c {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Certify(a) => certify_cmd(a),
        Command::SynthesizeQuadratic(a) => synthesize_cmd(a),
        Command::VerifyBmi(a) => verify_bmi_cmd(a),
        Command::Example(a) => example_cmd(a),
        Command::Replay(a) => replay_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return ExitCode::from(if informational { 0 } else { Status::Invalid as u8 });
        }
    };
    match dispatch(&cli.command) {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(Status::Invalid as u8)
        }
    }
}
