//! The four subcommands. Each returns the process exit code; errors map to 1.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use amkl::diagnostics::{diagnose, DiagnoseOptions, Diagnosis};
use amkl::io::{read_trace_file, state_to_text, to_json_document, write_trace_file, TraceWriter};
use amkl::numerics::fmt_sig17;
use amkl::solvers::run_with_sink;
use amkl::toys::{run_toy, ToyIterator, ToyProblem};
use amkl::{Error, Result, SolverKind, Termination, TraceMeta};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DIVERGENCE: u8 = 2;
pub const EXIT_VIOLATION: u8 = 3;

pub const TRACE_FILE: &str = "trace.jsonl";
pub const STATE_FILE: &str = "state.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DIAGNOSIS_FILE: &str = "diagnosis.json";

/// Summary of one training run, written next to its trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub solver: SolverKind,
    pub form: String,
    pub seed: u64,
    pub config_digest: String,
    /// `max_iter`, `dist_tol`, `stall` or `divergence`.
    pub termination: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_reason: Option<String>,
    pub records: usize,
    pub final_f: f64,
    pub final_dist: f64,
    pub trace: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    pub config: RunConfig,
    pub started_unix_secs: u64,
    pub wall_seconds: f64,
}

impl Manifest {
    /// Completed solver cycles.
    pub fn iterations(&self) -> usize {
        self.records.saturating_sub(1)
    }
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::MaxIter => "max_iter",
        Termination::DistTol => "dist_tol",
        Termination::Stall => "stall",
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

/// Runs the configured solver, streaming the trace into `out`.
pub fn train(config: &RunConfig, out: &Path) -> Result<u8> {
    let exp = config.prepare()?;
    fs::create_dir_all(out)?;
    let started_unix_secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();
    let digest = config.digest();
    let meta = TraceMeta {
        source: "solver".into(),
        solver: Some(config.solver.name().into()),
        form: Some(config.form().name().into()),
        seed: Some(config.seed),
        config_digest: Some(digest.clone()),
        ..TraceMeta::default()
    };
    let mut writer = TraceWriter::new(BufWriter::new(File::create(out.join(TRACE_FILE))?), &meta)?;
    let mut rng = exp.rng.clone();
    let outcome = run_with_sink(
        config.solver,
        &exp.spec,
        &exp.data,
        &exp.hyper,
        &exp.solver,
        exp.init.clone(),
        &mut rng,
        &mut |r| writer.write(r),
    );
    writer.finish()?;

    let (trace, termination, reason, state) = match outcome {
        Ok(res) => (
            res.trace,
            termination_name(res.termination),
            None,
            Some(res.state),
        ),
        Err(Error::Divergence { reason, trace }) => (*trace, "divergence", Some(reason), None),
        Err(e) => return Err(e),
    };
    if let Some(state) = &state {
        write_text(&out.join(STATE_FILE), &state_to_text(state))?;
    }
    let last = trace.records.last();
    let manifest = Manifest {
        solver: config.solver,
        form: config.form().name().into(),
        seed: config.seed,
        config_digest: digest,
        termination: termination.into(),
        divergence_reason: reason.clone(),
        records: trace.len(),
        final_f: last.map_or(f64::NAN, |r| r.f),
        final_dist: last.map_or(f64::NAN, |r| r.dist),
        trace: TRACE_FILE.into(),
        state: state.as_ref().map(|_| STATE_FILE.into()),
        config: config.clone(),
        started_unix_secs,
        wall_seconds: clock.elapsed().as_secs_f64(),
    };
    write_text(&out.join(MANIFEST_FILE), &to_json_document(&manifest)?)?;

    println!(
        "{} on {}: {} records, termination {}, final f {:.6e}, final dist {:.6e}",
        config.solver,
        config.form().name(),
        manifest.records,
        termination,
        manifest.final_f,
        manifest.final_dist
    );
    match reason {
        Some(reason) => {
            eprintln!("diverged: {reason}");
            Ok(EXIT_DIVERGENCE)
        }
        None => Ok(EXIT_OK),
    }
}

/// Diagnosis file contents: the trace header plus every check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisDoc {
    pub trace_meta: TraceMeta,
    #[serde(flatten)]
    pub diagnosis: Diagnosis,
}

#[derive(Debug, Clone, Default)]
pub struct DiagnoseArgs {
    pub trace: PathBuf,
    /// Defaults to the solver's nominal `j` from the trace header, else 1.
    pub j: Option<usize>,
    pub fstar: Option<f64>,
    pub theta: Option<f64>,
    pub alpha: Option<f64>,
    /// Defaults to `diagnosis.json` beside the trace.
    pub out: Option<PathBuf>,
}

pub fn diagnose_trace(args: &DiagnoseArgs) -> Result<(DiagnosisDoc, PathBuf)> {
    let trace = read_trace_file(&args.trace)?;
    let nominal = trace
        .meta
        .solver
        .as_deref()
        .and_then(|s| SolverKind::ALL.into_iter().find(|k| k.name() == s))
        .map_or(1, SolverKind::nominal_j);
    let opts = DiagnoseOptions {
        j: args.j.unwrap_or(nominal),
        fstar: args.fstar,
        theta: args.theta,
        alpha: args.alpha,
    };
    let diagnosis = diagnose(&trace, &opts)?;
    let out = args.out.clone().unwrap_or_else(|| {
        args.trace
            .parent()
            .unwrap_or(Path::new("."))
            .join(DIAGNOSIS_FILE)
    });
    Ok((
        DiagnosisDoc {
            trace_meta: trace.meta,
            diagnosis,
        },
        out,
    ))
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.6e}"))
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<u8> {
    let (doc, out) = diagnose_trace(args)?;
    write_text(&out, &to_json_document(&doc)?)?;
    let d = &doc.diagnosis;
    println!(
        "A1 (j={}): c1_hat {}, k0_hat {}, {} violations before k0, {}",
        d.j,
        d.a1.c1_hat,
        d.a1.k0_hat,
        d.a1.violations.len(),
        if d.a1_conclusive {
            "holds"
        } else {
            "not established"
        }
    );
    if let Some(a2) = &d.a2 {
        println!(
            "A2 (alpha={}): c2_hat {}, k0_hat {}, {}",
            a2.alpha,
            a2.c2_hat,
            a2.k0_hat,
            if a2.holds_after_k0 { "holds" } else { "fails" }
        );
    }
    println!(
        "rate: {}, eta_hat {}, exponent {}, theta_hat {}",
        d.rate.regime.name(),
        opt(d.rate.eta_hat),
        opt(d.rate.sublinear_exponent_hat),
        opt(d.kl_exponent.theta_hat)
    );
    println!("wrote {}", out.display());
    Ok(if d.a1_conclusive {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    })
}

pub fn cmd_toy(p: f64, iterator: ToyIterator, x0: f64, steps: usize, out: &Path) -> Result<u8> {
    let trace = run_toy(&ToyProblem::new(p)?, &iterator, x0, steps)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_trace_file(out, &trace)?;
    println!(
        "toy p={p} {}: {} records, wrote {}",
        iterator.name(),
        trace.len(),
        out.display()
    );
    Ok(EXIT_OK)
}

/// Report columns, in output order.
pub const REPORT_COLUMNS: [&str; 10] = [
    "solver",
    "form",
    "j",
    "c1_hat",
    "regime",
    "eta_or_exponent",
    "theta_hat",
    "iterations",
    "final_f",
    "final_dist",
];

fn report_row(manifest: &Manifest, doc: Option<&DiagnosisDoc>) -> Vec<String> {
    let num = |x: Option<f64>| x.map(fmt_sig17).unwrap_or_default();
    let diag = doc.map(|d| &d.diagnosis);
    vec![
        manifest.solver.name().into(),
        manifest.form.clone(),
        diag.map(|d| d.j.to_string()).unwrap_or_default(),
        diag.map(|d| match d.a1.c1_hat.finite() {
            Some(c) => fmt_sig17(c),
            None => d.a1.c1_hat.to_string(),
        })
        .unwrap_or_default(),
        diag.map(|d| d.rate.regime.name().to_string())
            .unwrap_or_default(),
        num(diag.and_then(|d| d.rate.rate())),
        num(diag.and_then(|d| d.kl_exponent.theta_hat)),
        manifest.iterations().to_string(),
        fmt_sig17(manifest.final_f),
        fmt_sig17(manifest.final_dist),
    ]
}

/// Builds the CSV text and the aligned summary table for `dirs`.
pub fn build_report(dirs: &[PathBuf]) -> Result<(String, String, Vec<String>)> {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for dir in dirs {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", manifest_path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: format!("{}: {e}", manifest_path.display()),
        })?;
        let diag_path = dir.join(DIAGNOSIS_FILE);
        let doc = match fs::read_to_string(&diag_path) {
            Ok(text) => {
                Some(
                    serde_json::from_str::<DiagnosisDoc>(&text).map_err(|e| Error::Parse {
                        line: e.line(),
                        message: format!("{}: {e}", diag_path.display()),
                    })?,
                )
            }
            Err(_) => {
                warnings.push(format!(
                    "{}: no {DIAGNOSIS_FILE}; diagnostic columns left blank",
                    dir.display()
                ));
                None
            }
        };
        rows.push(report_row(&manifest, doc.as_ref()));
    }

    let mut csv_out = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    csv_out.write_record(REPORT_COLUMNS).map_err(csv_err)?;
    for row in &rows {
        csv_out.write_record(row).map_err(csv_err)?;
    }
    let csv_bytes = csv_out
        .into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let csv_text = String::from_utf8(csv_bytes).expect("csv writes UTF-8");

    let mut widths: Vec<usize> = REPORT_COLUMNS.iter().map(|c| c.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut table = String::new();
    let header: Vec<String> = REPORT_COLUMNS.iter().map(|c| c.to_string()).collect();
    for row in std::iter::once(&header).chain(&rows) {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        table.push_str(cells.join("  ").trim_end());
        table.push('\n');
    }
    Ok((csv_text, table, warnings))
}

/// Writes the CSV to `out` and the table to stdout, or the CSV to stdout
/// and the table to stderr when `out` is absent.
pub fn cmd_report(dirs: &[PathBuf], out: Option<&Path>) -> Result<u8> {
    let (csv_text, table, warnings) = build_report(dirs)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    match out {
        Some(path) => {
            write_text(path, &csv_text)?;
            print!("{table}");
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(csv_text.as_bytes())?;
            stdout.flush()?;
            eprint!("{table}");
        }
    }
    Ok(EXIT_OK)
}
