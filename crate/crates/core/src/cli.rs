//! Command-line front end: `train`, `score`, `inspect`, `gradcheck`, `config`.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O or format error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::config::Settings;
use crate::csc::CscTerms;
use crate::dfe::{container, dfe_extract, DfeModel};
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, GradCheckConfig};
use crate::imageio::load_image;
use crate::mghf::{mghf_c, mghf_n_images, Durations, SinkhornSummary};
use crate::numerics::Rng;
use crate::pruning::ImportanceProfile;
use crate::trainer::{train, write_curve_csv, ClassifierHead, ToyDataset};

/// Version of every JSON report layout written by this tool.
pub const REPORT_FORMAT_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "mghf", version, about = "Detail-feature losses for super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pretrain a detail feature extractor on procedural textures.
    Train(TrainArgs),
    /// Score an SR image against its ground truth.
    Score(ScoreArgs),
    /// Print per-map entropy, importance and pruning weights for one image.
    Inspect(InspectArgs),
    /// Compare every analytic gradient with finite differences.
    Gradcheck(GradcheckArgs),
    /// Print the effective configuration with documentation.
    Config(CommonArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Output weights container.
    #[arg(long)]
    out: PathBuf,
    /// Training curve CSV; defaults to the weights path with a .csv extension.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    classes: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    N,
    C,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    sr: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, value_enum, default_value = "c")]
    mode: Mode,
    /// Skip local information preservation.
    #[arg(long)]
    no_lip: bool,
    /// Report instead of failing when Sinkhorn does not converge.
    #[arg(long)]
    allow_unconverged: bool,
    /// Include wall-clock durations (makes output non-reproducible).
    #[arg(long)]
    timings: bool,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Single tolerance for every check (defaults: 1e-4 per loss, 1e-3 end to end).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 10)]
    points: usize,
    /// Also write the error table as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_) => EXIT_USAGE,
        Error::Numerical(_) => EXIT_NUMERICAL,
        Error::Shape(_) | Error::Format(_) | Error::Io(_) => EXIT_IO,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(0) => Err(Error::Argument("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Argument(format!("cannot build thread pool: {e}")))?
            .install(f),
    }
}

fn settings(common: &CommonArgs) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(p) = &common.config {
        s.apply_file(p)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        s.set(k.trim(), v.trim())?;
    }
    Ok(s)
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Train(a) => cmd_train(a, out),
        Command::Score(a) => cmd_score(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Config(a) => {
            let s = settings(&a)?;
            out.write_all(s.dump().as_bytes())?;
            Ok(EXIT_OK)
        }
    }
}

// ---------------------------------------------------------------------------
// JSON

/// Pretty printer writing every float with 17 significant digits.
struct FixedFloats(serde_json::ser::PrettyFormatter<'static>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*)),* $(,)?) => {$(
        fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.0.$name(w $(, $arg)*)
        }
    )*};
}

impl serde_json::ser::Formatter for FixedFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }
    delegate!(
        begin_array(),
        end_array(),
        begin_array_value(first: bool),
        end_array_value(),
        begin_object(),
        end_object(),
        begin_object_key(first: bool),
        begin_object_value(),
        end_object_value(),
    );
}

/// Serializes `value` deterministically: struct field order, fixed float width.
pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let fmt = FixedFloats(serde_json::ser::PrettyFormatter::new());
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Format(format!("cannot serialize report: {e}")))?;
    buf.push(b'\n');
    Ok(buf)
}

/// Effective configuration as a JSON object of strings, in key order.
struct ConfigEcho<'a>(&'a Settings);

impl Serialize for ConfigEcho<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let entries = self.0.entries();
        let mut map = s.serialize_map(Some(entries.len()))?;
        for (k, v) in entries {
            map.serialize_entry(k, &v)?;
        }
        map.end()
    }
}

#[derive(Serialize)]
struct Gammas {
    gamma1: f64,
    gamma2: f64,
    gamma3: f64,
}

#[derive(Serialize)]
struct Betas {
    beta1: f64,
    beta2: f64,
    beta3: f64,
}

#[derive(Serialize)]
struct PruningSummary {
    m: usize,
    alpha: f64,
    gamma: f64,
    bins: usize,
    selected: Vec<usize>,
    weights: Vec<f64>,
}

impl From<&ImportanceProfile> for PruningSummary {
    fn from(p: &ImportanceProfile) -> Self {
        Self {
            m: p.m(),
            alpha: p.alpha,
            gamma: p.gamma,
            bins: p.bins,
            selected: p.selected.clone(),
            weights: p.weights.clone(),
        }
    }
}

#[derive(Serialize)]
struct ImageSize {
    h: usize,
    w: usize,
}

#[derive(Serialize)]
struct ModelSummary {
    n_channels: usize,
    n_blocks: usize,
    param_count: usize,
}

impl From<&DfeModel> for ModelSummary {
    fn from(m: &DfeModel) -> Self {
        Self {
            n_channels: m.config.n_channels,
            n_blocks: m.config.n_blocks,
            param_count: m.param_count(),
        }
    }
}

#[derive(Serialize)]
struct ScoreReport<'a> {
    format_version: u32,
    mode: &'static str,
    mghf_n: f64,
    csc: Option<CscTerms>,
    lip: Option<f64>,
    mghf_c: Option<f64>,
    gammas: Gammas,
    betas: Betas,
    pruning: Option<PruningSummary>,
    sinkhorn: Option<SinkhornSummary>,
    image: ImageSize,
    model: ModelSummary,
    config: ConfigEcho<'a>,
    durations_ms: Option<Durations>,
}

fn write_report(bytes: &[u8], path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes)?,
        None => out.write_all(bytes)?,
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_score(a: ScoreArgs, out: &mut dyn Write) -> Result<i32> {
    let mut s = settings(&a.common)?;
    if a.no_lip {
        s.mghf.lip_enabled = false;
    }
    let model = container::load(&a.weights)?;
    let gt = load_image(&a.gt)?;
    let sr = load_image(&a.sr)?;
    let cfg = s.mghf;
    let start = Instant::now();
    let mut report = ScoreReport {
        format_version: REPORT_FORMAT_VERSION,
        mode: "n",
        mghf_n: 0.0,
        csc: None,
        lip: None,
        mghf_c: None,
        gammas: Gammas {
            gamma1: cfg.gamma1,
            gamma2: cfg.gamma2,
            gamma3: cfg.gamma3,
        },
        betas: Betas {
            beta1: cfg.csc.beta1,
            beta2: cfg.csc.beta2,
            beta3: cfg.csc.beta3,
        },
        pruning: None,
        sinkhorn: None,
        image: ImageSize {
            h: gt.height(),
            w: gt.width(),
        },
        model: ModelSummary::from(&model),
        config: ConfigEcho(&s),
        durations_ms: None,
    };
    match a.mode {
        Mode::N => {
            let (loss, _) = with_threads(a.common.threads, || mghf_n_images(&model, &gt, &sr))?;
            report.mghf_n = loss;
            if a.timings {
                report.durations_ms = Some(Durations {
                    total_ms: start.elapsed().as_secs_f64() * 1e3,
                    ..Durations::default()
                });
            }
        }
        Mode::C => {
            let head = cfg.lip.head();
            let res = with_threads(a.common.threads, || mghf_c(&model, &gt, &sr, &cfg, &head))?;
            let r = res.report;
            if let Some(sk) = &r.sinkhorn {
                if !sk.all_converged && !a.allow_unconverged {
                    return Err(Error::Numerical(format!(
                        "Sinkhorn did not converge (max marginal residual {:.3e}); \
                         pass --allow-unconverged to report anyway",
                        sk.max_residual
                    )));
                }
            }
            report.mode = "c";
            report.mghf_n = r.mghf_n;
            report.csc = Some(r.csc);
            report.lip = r.lip;
            report.mghf_c = Some(r.mghf_c);
            report.pruning = Some(PruningSummary::from(&r.profile));
            report.sinkhorn = r.sinkhorn;
            if a.timings {
                report.durations_ms = Some(r.durations);
            }
        }
    }
    write_report(&to_json(&report)?, a.out.as_deref(), out)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct MapEntry {
    index: usize,
    h_norm: f64,
    importance: f64,
    selected: bool,
    weight: Option<f64>,
}

#[derive(Serialize)]
struct InspectReport<'a> {
    format_version: u32,
    image: ImageSize,
    model: ModelSummary,
    bins: usize,
    m: usize,
    alpha: f64,
    gamma: f64,
    maps: Vec<MapEntry>,
    config: ConfigEcho<'a>,
}

fn cmd_inspect(a: InspectArgs, out: &mut dyn Write) -> Result<i32> {
    let mut s = settings(&a.common)?;
    if let Some(b) = a.bins {
        s.mghf.pruning.bins = b;
    }
    let model = container::load(&a.weights)?;
    let image = load_image(&a.image)?;
    let stack = with_threads(a.common.threads, || dfe_extract(&model, &image))?;
    let p = ImportanceProfile::compute(&stack, &stack, &s.mghf.pruning)?;
    let maps = (0..stack.len())
        .map(|i| {
            let k = p.selected.iter().position(|&j| j == i);
            MapEntry {
                index: i,
                h_norm: p.h_norm_g[i],
                importance: p.combined[i],
                selected: k.is_some(),
                weight: k.map(|k| p.weights[k]),
            }
        })
        .collect();
    let report = InspectReport {
        format_version: REPORT_FORMAT_VERSION,
        image: ImageSize {
            h: image.height(),
            w: image.width(),
        },
        model: ModelSummary::from(&model),
        bins: p.bins,
        m: p.m(),
        alpha: p.alpha,
        gamma: p.gamma,
        maps,
        config: ConfigEcho(&s),
    };
    write_report(&to_json(&report)?, a.out.as_deref(), out)?;
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    if a.points == 0 {
        return Err(Error::Argument("--points must be positive".into()));
    }
    let mut cfg = GradCheckConfig {
        seed: a.seed,
        points: a.points,
        ..GradCheckConfig::default()
    };
    if let Some(t) = a.tol {
        if !(t >= 0.0) {
            return Err(Error::Argument(format!("--tol must be non-negative, got {t}")));
        }
        cfg = cfg.with_tol(t);
    }
    let report = with_threads(a.threads, || run_gradcheck(&cfg))?;
    write!(out, "{report}")?;
    for (name, worst, tol) in report.worst_by_name() {
        writeln!(out, "worst {name:<12} {worst:.3e} (tol {tol:.1e})")?;
    }
    if let Some(p) = &a.json {
        #[derive(Serialize)]
        struct Wrapped<'a> {
            format_version: u32,
            #[serde(flatten)]
            report: &'a crate::gradcheck::GradCheckReport,
        }
        std::fs::write(p, to_json(&Wrapped { format_version: REPORT_FORMAT_VERSION, report: &report })?)?;
    }
    if report.all_passed() {
        writeln!(out, "all {} checks passed", report.checks.len())?;
        Ok(EXIT_OK)
    } else {
        let failed: Vec<String> = report
            .failures()
            .map(|c| format!("{}#{} ({:.3e} >= {:.1e})", c.name, c.point, c.rel_error, c.tol))
            .collect();
        Err(Error::Numerical(format!("gradient checks failed: {}", failed.join(", "))))
    }
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let mut s = settings(&a.common)?;
    if let Some(v) = a.seed {
        s.train.seed = v;
    }
    if let Some(v) = a.iters {
        s.train.total_iters = v;
    }
    if let Some(v) = a.classes {
        s.classes = v;
    }
    s.dfe.validate()?;
    let mut rng = Rng::new(s.train.seed);
    let model = DfeModel::new(s.dfe, &mut rng)?;
    let head = ClassifierHead::new(
        s.dfe.n_channels,
        &s.train.head_widths,
        s.image_size,
        s.image_size,
        s.classes,
        &mut rng,
    )?;
    let data = ToyDataset::new(s.classes, s.image_size, s.train.seed);
    let start = Instant::now();
    let outcome = with_threads(a.common.threads, || train(model, head, &data, &s.train))?;
    container::save(&outcome.model, &a.out)?;
    let curve_path = a.curve.unwrap_or_else(|| a.out.with_extension("csv"));
    let mut csv = io::BufWriter::new(std::fs::File::create(&curve_path)?);
    write_curve_csv(&outcome.curve, &mut csv)?;
    csv.flush()?;
    let last = outcome.curve.last().map_or(f64::NAN, |p| p.loss);
    writeln!(
        out,
        "trained {} iterations in {:.1}s, final loss {last:.4}; weights {}, curve {}",
        outcome.curve.len(),
        start.elapsed().as_secs_f64(),
        a.out.display(),
        curve_path.display()
    )?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("mghf").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run_str(&["train"]).0, EXIT_USAGE);
        assert_eq!(run_str(&["bogus"]).0, EXIT_USAGE);
        assert_eq!(run_str(&["config", "--set", "nope=1"]).0, EXIT_USAGE);
        assert_eq!(run_str(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn config_dump_reflects_overrides() {
        let (code, out, _) = run_str(&["config", "--set", "gamma1=3"]);
        assert_eq!(code, 0);
        assert!(out.contains("gamma1 = 3\n"));
        assert!(out.contains("gamma2 = 1.5\n"));
    }

    #[test]
    fn floats_have_17_digits() {
        let j = String::from_utf8(to_json(&(0.1f64, 3.0f64, f64::NAN)).unwrap()).unwrap();
        assert!(j.contains("1.0000000000000001e-1"), "{j}");
        assert!(j.contains("3.0000000000000000e0"));
        assert!(j.contains("null"));
        let back: Vec<Option<f64>> = serde_json::from_str(&j).unwrap();
        assert_eq!(back, vec![Some(0.1), Some(3.0), None]);
    }
}
