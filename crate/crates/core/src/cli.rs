//! The `haarshift` command line.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input error (unreadable
//! or malformed files, mismatched depths, bad shift terms), 3 parameter error.
//! Every run writes a manifest echoing its resolved configuration.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::experiments::{blowup_study, theorem_suite, StudyRow, SuiteConfig, Theorem};
use crate::io::{read_json, to_json, write_json, write_study_csv, write_text, FunctionFile, MeasureFile, ShiftFile};
use crate::measure::{Generator, MeasureTree};
use crate::norms::Norm;
use crate::shift::HaarShift;
use crate::verify::{run_verify, VerifyConfig};
use crate::DyadicTree;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY_FAILED: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_PARAMETER: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "haarshift", version, about = "Haar shifts and martingale norms on weighted dyadic trees")]
pub struct Cli {
    /// Write the run manifest here instead of next to the output.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or inspect measure files.
    #[command(subcommand)]
    Measure(MeasureCommand),
    /// Evaluate a norm of a function file.
    Norm(NormArgs),
    /// Apply a shift file to a function file.
    Apply(ApplyArgs),
    /// Run a seeded study and emit CSV.
    #[command(subcommand)]
    Study(StudyCommand),
    /// Run the invariant suite; exits 1 if any check fails.
    Verify(VerifyArgs),
}

#[derive(Debug, Subcommand)]
pub enum MeasureCommand {
    Gen(GenArgs),
    Inspect { file: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Kind {
    Lebesgue,
    RandomDoubling,
    GeometricUnbalanced,
    Spine,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub kind: Kind,
    #[arg(long)]
    pub depth: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.25)]
    pub p_min: f64,
    #[arg(long, default_value_t = 0.75)]
    pub p_max: f64,
    #[arg(long, default_value_t = 0.5)]
    pub q: f64,
    /// Root mass of the spine family.
    #[arg(long = "M")]
    pub m: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub origin: f64,
    #[arg(long, default_value_t = 1.0)]
    pub length: f64,
    /// Output file; the measure goes to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum NormKind {
    Lp,
    L1,
    L2,
    Linf,
    WeakL1,
    Bmo,
    BmoOsc,
    Lambda,
    H1,
    Atb,
}

#[derive(Debug, Args)]
pub struct NormArgs {
    #[arg(long)]
    pub function: PathBuf,
    #[arg(long)]
    pub measure: PathBuf,
    #[arg(long)]
    pub norm: NormKind,
    /// Exponent of `lp` (`inf` allowed).
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    pub p: f64,
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    pub q: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub alpha: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub shift: PathBuf,
    #[arg(long)]
    pub function: PathBuf,
    #[arg(long)]
    pub measure: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum StudyCommand {
    /// Petermichl-shift ratios against the critical Haar function.
    Blowup(BlowupArgs),
    /// Probed operator-norm lower bounds for one theorem.
    Theorem(TheoremArgs),
}

#[derive(Debug, Args)]
pub struct BlowupArgs {
    /// Family spec, e.g. `geometric_unbalanced` or `spine:M=1000`.
    #[arg(long)]
    pub family: String,
    /// Parameter of `geometric_unbalanced` when the spec gives none.
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Inclusive range `a:b`.
    #[arg(long)]
    pub depths: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; CSV goes to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TheoremArgs {
    #[arg(long)]
    pub name: String,
    /// Repeatable family spec, e.g. `random_doubling:p_min=0.4,p_max=0.6`.
    #[arg(long, required = true)]
    pub family: Vec<String>,
    #[arg(long)]
    pub depths: String,
    #[arg(long, default_value_t = 64)]
    pub budget: usize,
    /// Exponent `q` of `Λ_q(α)` (TheoremB only).
    #[arg(long, default_value_t = 2.0)]
    pub q: f64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 8)]
    pub depth: usize,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Output directory for `verify.json`; the report goes to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn exit_code(error: &Error) -> u8 {
    match error {
        Error::InvalidParameter(_)
        | Error::DepthTooSmall { .. }
        | Error::LevelOutOfRange { .. }
        | Error::DepthExceeded { .. }
        | Error::AboveRoot { .. } => EXIT_PARAMETER,
        _ => EXIT_INPUT,
    }
}

/// `a:b` (inclusive) or a single depth.
pub fn parse_depths(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidParameter(format!("depth range {spec:?} is not of the form a:b"));
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let (lo, hi) = match spec.split_once(':') {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => {
            let d = parse(spec)?;
            (d, d)
        }
    };
    if lo < 2 || lo > hi {
        return Err(Error::InvalidParameter(format!("depth range {spec:?} must satisfy 2 <= a <= b")));
    }
    Ok((lo..=hi).collect())
}

/// `name[:key=value,...]`. Missing parameters default to `p_min=0.25,
/// p_max=0.75`, `q=default_q` and `M=1000`.
pub fn parse_family(spec: &str, default_q: f64) -> Result<Generator> {
    let (name, params) = spec.split_once(':').unwrap_or((spec, ""));
    let mut pairs = Vec::new();
    for item in params.split(',').filter(|s| !s.trim().is_empty()) {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("family parameter {item:?} is not key=value")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("family parameter {item:?} is not numeric")))?;
        pairs.push((key.trim().to_string(), value));
    }
    let mut take = |key: &str, default: f64| {
        match pairs.iter().position(|(k, _)| k == key) {
            Some(i) => pairs.remove(i).1,
            None => default,
        }
    };
    let generator = match name.trim() {
        "lebesgue" => Generator::Lebesgue,
        "random_doubling" => Generator::RandomDoubling {
            p_min: take("p_min", 0.25),
            p_max: take("p_max", 0.75),
        },
        "geometric_unbalanced" => Generator::GeometricUnbalanced { q: take("q", default_q) },
        "spine" => Generator::Spine {
            total_mass: take("M", 1000.0),
        },
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown family {other:?}; expected lebesgue, random_doubling, geometric_unbalanced or spine"
            )))
        }
    };
    if let Some((key, _)) = pairs.first() {
        return Err(Error::InvalidParameter(format!("family {name} has no parameter {key:?}")));
    }
    Ok(generator)
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: Value,
    outputs: Vec<String>,
    timestamp_unix: u64,
}

/// Where the manifest goes, in order: `--manifest`, `<out dir>/manifest.json`,
/// `<out file>.manifest.json`, else stderr.
enum ManifestSink {
    File(PathBuf),
    Stderr,
}

fn sink_for(global: &Option<PathBuf>, out: Option<&Path>, out_is_dir: bool) -> ManifestSink {
    match (global, out) {
        (Some(path), _) => ManifestSink::File(path.clone()),
        (None, Some(dir)) if out_is_dir => ManifestSink::File(dir.join("manifest.json")),
        (None, Some(file)) => {
            let mut name = file.as_os_str().to_owned();
            name.push(".manifest.json");
            ManifestSink::File(PathBuf::from(name))
        }
        (None, None) => ManifestSink::Stderr,
    }
}

fn emit_manifest(sink: ManifestSink, command: &str, config: Value, outputs: Vec<String>) -> Result<()> {
    let timestamp_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = Manifest {
        tool: "haarshift",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        outputs,
        timestamp_unix,
    };
    match sink {
        ManifestSink::File(path) => write_json(&path, &manifest),
        ManifestSink::Stderr => {
            eprint!("{}", to_json(&manifest));
            Ok(())
        }
    }
}

fn stdout_text(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::Io(format!("cannot write to stdout: {e}")))
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn load_measure(path: &Path) -> Result<MeasureTree> {
    read_json::<MeasureFile>(path)?.into_measure()
}

fn load_pair(function: &Path, measure: &Path) -> Result<(crate::StepFunction, MeasureTree)> {
    let mu = load_measure(measure)?;
    let file: FunctionFile = read_json(function)?;
    if file.depth != mu.depth() {
        return Err(Error::DepthMismatch {
            left: file.depth,
            right: mu.depth(),
        });
    }
    Ok((file.into_function()?, mu))
}

fn balance_lines(mu: &MeasureTree) -> Result<String> {
    let report = mu.balance_report()?;
    Ok(format!(
        "depth = {}\ntotal_mass = {:?}\nbalanced_constant = {:?}\nbal_form_constant = {:?}\nsandwich = {}\ndoubling_ratio = {:?}\n",
        mu.depth(),
        mu.total_mass(),
        report.balanced_constant,
        report.bal_form_constant,
        if report.sandwich_holds() { "holds" } else { "FAILS" },
        mu.doubling_ratio(),
    ))
}

/// Runs one parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<u8> {
    let global = cli.manifest;
    match cli.command {
        Command::Measure(MeasureCommand::Gen(args)) => {
            let generator = match args.kind {
                Kind::Lebesgue => Generator::Lebesgue,
                Kind::RandomDoubling => Generator::RandomDoubling {
                    p_min: args.p_min,
                    p_max: args.p_max,
                },
                Kind::GeometricUnbalanced => Generator::GeometricUnbalanced { q: args.q },
                Kind::Spine => Generator::Spine {
                    total_mass: args
                        .m
                        .ok_or_else(|| Error::InvalidParameter("spine needs --M".into()))?,
                },
            };
            let generated = generator.generate(args.depth, args.seed)?;
            let tree = DyadicTree::with_geometry(args.depth, args.origin, args.length)?;
            let mu = MeasureTree::from_leaf_masses(tree, generated.leaf_masses().to_vec())?;
            let summary = balance_lines(&mu)?;
            let file = MeasureFile::from_measure(&mu);
            let mut outputs = Vec::new();
            match &args.out {
                Some(path) => {
                    write_json(path, &file)?;
                    outputs.push(display(path));
                    stdout_text(&summary)?;
                }
                None => {
                    stdout_text(&to_json(&file))?;
                    eprint!("{summary}");
                }
            }
            let config = json!({
                "generator": generator,
                "depth": args.depth,
                "seed": args.seed,
                "root": { "origin": args.origin, "length": args.length },
            });
            emit_manifest(sink_for(&global, args.out.as_deref(), false), "measure gen", config, outputs)?;
        }
        Command::Measure(MeasureCommand::Inspect { file }) => {
            let mu = load_measure(&file)?;
            stdout_text(&balance_lines(&mu)?)?;
            let config = json!({ "measure": display(&file) });
            emit_manifest(sink_for(&global, None, false), "measure inspect", config, Vec::new())?;
        }
        Command::Norm(args) => {
            let norm = match args.norm {
                NormKind::Lp => Norm::Lp { p: args.p },
                NormKind::L1 => Norm::L1,
                NormKind::L2 => Norm::L2,
                NormKind::Linf => Norm::LINF,
                NormKind::WeakL1 => Norm::WeakL1,
                NormKind::Bmo => Norm::Bmo,
                NormKind::BmoOsc => Norm::BmoOscillation,
                NormKind::Lambda => Norm::Lambda {
                    q: args.q,
                    alpha: args.alpha,
                },
                NormKind::H1 => Norm::H1,
                NormKind::Atb => Norm::Atb,
            };
            norm.validate()?;
            let (f, mu) = load_pair(&args.function, &args.measure)?;
            let report = norm.report(norm.evaluate(&f, &mu)?);
            let mut outputs = Vec::new();
            match &args.out {
                Some(path) => {
                    write_json(path, &report)?;
                    outputs.push(display(path));
                }
                None => stdout_text(&to_json(&report))?,
            }
            let config = json!({
                "function": display(&args.function),
                "measure": display(&args.measure),
                "norm": norm.label(),
            });
            emit_manifest(sink_for(&global, args.out.as_deref(), false), "norm", config, outputs)?;
        }
        Command::Apply(args) => {
            let (f, mu) = load_pair(&args.function, &args.measure)?;
            let shift_file: ShiftFile = read_json(&args.shift)?;
            let shift = shift_file.build(mu.tree())?;
            let image = FunctionFile::from_function(&shift.apply(&f, &mu));
            let mut outputs = Vec::new();
            match &args.out {
                Some(path) => {
                    write_json(path, &image)?;
                    outputs.push(display(path));
                }
                None => stdout_text(&to_json(&image))?,
            }
            let config = json!({
                "shift": display(&args.shift),
                "function": display(&args.function),
                "measure": display(&args.measure),
            });
            emit_manifest(sink_for(&global, args.out.as_deref(), false), "apply", config, outputs)?;
        }
        Command::Study(StudyCommand::Blowup(args)) => {
            let family = parse_family(&args.family, args.q.unwrap_or(0.5))?;
            let depths = parse_depths(&args.depths)?;
            let rows = blowup_study(&family, args.alpha, &depths, args.seed)?;
            let outputs = emit_study(&rows, args.out.as_deref())?;
            let config = json!({
                "study": "blowup",
                "family": family,
                "alpha": args.alpha,
                "depths": depths,
                "seed": args.seed,
            });
            emit_manifest(sink_for(&global, args.out.as_deref(), true), "study blowup", config, outputs)?;
        }
        Command::Study(StudyCommand::Theorem(args)) => {
            let theorem: Theorem = args.name.parse()?;
            let families = args
                .family
                .iter()
                .map(|spec| parse_family(spec, 0.5))
                .collect::<Result<Vec<_>>>()?;
            let depths = parse_depths(&args.depths)?;
            let mut suite = SuiteConfig::new(theorem, families, depths, args.seed);
            suite.budget = args.budget;
            suite.q = args.q;
            suite.alpha = args.alpha;
            let rows = theorem_suite(&suite)?;
            let outputs = emit_study(&rows, args.out.as_deref())?;
            let config = json!({
                "study": "theorem",
                "theorem": theorem,
                "families": suite.families,
                "depths": suite.depths,
                "budget": suite.budget,
                "q": suite.q,
                "alpha": suite.alpha,
                "seed": suite.seed,
            });
            emit_manifest(sink_for(&global, args.out.as_deref(), true), "study theorem", config, outputs)?;
        }
        Command::Verify(args) => {
            let config = VerifyConfig {
                depth: args.depth,
                trials: args.trials,
                seed: args.seed,
                tol: args.tol,
            };
            let report = run_verify(&config)?;
            let mut outputs = Vec::new();
            match &args.out {
                Some(dir) => {
                    let path = dir.join("verify.json");
                    write_json(&path, &report)?;
                    outputs.push(display(&path));
                    let mut lines = String::new();
                    for check in &report.checks {
                        let status = if check.passed { "PASS" } else { "FAIL" };
                        lines.push_str(&format!("{status} {} ({} cases)\n", check.name, check.cases));
                    }
                    stdout_text(&lines)?;
                }
                None => stdout_text(&to_json(&report))?,
            }
            emit_manifest(sink_for(&global, args.out.as_deref(), true), "verify", json!(config), outputs)?;
            if !report.passed {
                return Ok(EXIT_VERIFY_FAILED);
            }
        }
    }
    Ok(EXIT_OK)
}

/// `DIR/study.csv` plus `DIR/witnesses/*.json`, or CSV on stdout.
fn emit_study(rows: &[StudyRow], out: Option<&Path>) -> Result<Vec<String>> {
    match out {
        Some(dir) => {
            let witnesses = dir.join("witnesses");
            let mut buffer = Vec::new();
            write_study_csv(&mut buffer, rows, Some((&witnesses, "witnesses/")))?;
            let csv_path = dir.join("study.csv");
            write_text(&csv_path, &String::from_utf8(buffer).expect("CSV is UTF-8"))?;
            let mut outputs = vec![display(&csv_path)];
            outputs.extend(rows.iter().filter(|r| r.witness.is_some()).map(|r| display(&witnesses.join(r.witness_name()))));
            Ok(outputs)
        }
        None => {
            let mut buffer = Vec::new();
            write_study_csv(&mut buffer, rows, None)?;
            stdout_text(&String::from_utf8(buffer).expect("CSV is UTF-8"))?;
            Ok(Vec::new())
        }
    }
}
