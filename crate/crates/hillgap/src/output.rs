//! JSON documents and CSV traces. Nothing time-dependent goes in, so equal
//! inputs give byte-identical files.

use std::io::Write;
use std::path::Path;

use hillgap_core::floquet::{BandStructure, MonodromyResult};
use hillgap_core::oracle::OracleReport;
use hillgap_core::perturb::{PerturbedSolution, PixelReport, ResidualReport};
use hillgap_core::spectra::{EdgeTestVerdict, FullLineReport, GapEigenvalueReport, WronskianCount};
use hillgap_core::Complex64;
use serde::Serialize;

use crate::{AppError, Result};

fn c2(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

#[derive(Debug, Serialize)]
pub struct DiscriminantPoint {
    pub lambda: f64,
    pub d: f64,
}

#[derive(Debug, Serialize)]
pub struct DiscriminantDoc {
    pub problem: String,
    pub omega: f64,
    pub samples: Vec<DiscriminantPoint>,
}

#[derive(Debug, Serialize)]
pub struct BandsDoc {
    pub problem: String,
    pub range: [f64; 2],
    pub edges: Vec<f64>,
    pub bands: Vec<[f64; 2]>,
    pub touching: Vec<bool>,
    pub gaps: Vec<[f64; 2]>,
    pub truncated: [bool; 2],
    pub caveats: Vec<String>,
}

impl BandsDoc {
    pub fn new(problem: String, b: &BandStructure) -> Self {
        BandsDoc {
            problem,
            range: [b.range.0, b.range.1],
            edges: b.edges.clone(),
            bands: b.bands.clone(),
            touching: b.touching.clone(),
            gaps: b.gaps().into_iter().map(|g| [g.0, g.1]).collect(),
            truncated: b.truncated,
            caveats: b.caveats.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FloquetDoc {
    pub lambda: f64,
    pub omega: f64,
    pub monodromy: [[f64; 2]; 2],
    pub d: f64,
    pub c: [f64; 2],
    pub multipliers: [[f64; 2]; 2],
    pub structure: &'static str,
}

impl From<&MonodromyResult> for FloquetDoc {
    fn from(m: &MonodromyResult) -> Self {
        FloquetDoc {
            lambda: m.lambda,
            omega: m.omega,
            monodromy: m.m.0,
            d: m.d,
            c: c2(m.c),
            multipliers: [c2(m.multipliers[0]), c2(m.multipliers[1])],
            structure: m.structure.as_str(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SolutionDoc {
    pub lambda: f64,
    pub kind: &'static str,
    pub iterations: usize,
    pub deltas: Vec<f64>,
    pub residual_sup: f64,
    pub pixel_tail: Option<f64>,
    #[serde(rename = "X")]
    pub x: f64,
    pub initial: [[f64; 2]; 2],
}

impl SolutionDoc {
    pub fn new(sol: &PerturbedSolution, res: &ResidualReport, pixel: &PixelReport) -> Self {
        let y = sol.initial();
        SolutionDoc {
            lambda: sol.lambda,
            kind: sol.kind.as_str(),
            iterations: sol.iterations,
            deltas: sol.deltas.clone(),
            residual_sup: res.residual_sup,
            pixel_tail: pixel.pixel_tail,
            x: sol.truncation,
            initial: [c2(y[0]), c2(y[1])],
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Counts {
    pub shooting: usize,
    pub wronskian: Option<usize>,
    pub oracle: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct WronskianDoc {
    pub mu: f64,
    pub lambda: f64,
    pub truncation: f64,
    pub zeros: usize,
    pub boundary_correction: usize,
    pub gamma: f64,
    pub cutoff: Option<f64>,
    pub certified: bool,
}

impl From<&WronskianCount> for WronskianDoc {
    fn from(w: &WronskianCount) -> Self {
        WronskianDoc {
            mu: w.mu,
            lambda: w.lambda,
            truncation: w.truncation,
            zeros: w.zeros,
            boundary_correction: w.boundary_correction,
            gamma: w.gamma,
            cutoff: w.cutoff,
            certified: w.certified,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct OracleDoc {
    pub gap: [f64; 2],
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub eigenvalues: Vec<f64>,
    pub discarded_artifacts: Vec<f64>,
    pub max_shift: f64,
    pub stable: bool,
}

impl From<&OracleReport> for OracleDoc {
    fn from(o: &OracleReport) -> Self {
        OracleDoc {
            gap: [o.gap.0, o.gap.1],
            length: o.length,
            n: o.n,
            eigenvalues: o.eigenvalues.clone(),
            discarded_artifacts: o.discarded_artifacts.clone(),
            max_shift: o.max_shift,
            stable: o.stable,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FullLineDoc {
    pub count_left: usize,
    pub count_right: usize,
    pub coupling_bound_holds: bool,
}

#[derive(Debug, Serialize)]
pub struct GapDoc {
    pub problem: String,
    pub gap: [f64; 2],
    pub interval: [f64; 2],
    pub alpha: Option<f64>,
    pub eigenvalues: Vec<f64>,
    pub counts: Counts,
    pub agreement: bool,
    pub wronskian: Option<WronskianDoc>,
    pub oracle: Option<OracleDoc>,
    pub full_line: Option<FullLineDoc>,
}

impl GapDoc {
    pub fn new(problem: String, r: &GapEigenvalueReport, alpha: Option<f64>, full: Option<&FullLineReport>) -> Self {
        GapDoc {
            problem,
            gap: [r.gap.0, r.gap.1],
            interval: [r.interval.0, r.interval.1],
            alpha,
            eigenvalues: r.eigenvalues.clone(),
            counts: Counts { shooting: r.count_shooting, wronskian: r.count_wronskian, oracle: r.count_oracle },
            agreement: r.agreement,
            wronskian: r.wronskian.as_ref().map(WronskianDoc::from),
            oracle: r.oracle.as_ref().map(OracleDoc::from),
            full_line: full.map(|f| FullLineDoc {
                count_left: f.count_left,
                count_right: f.count_right,
                coupling_bound_holds: f.coupling_bound_holds,
            }),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EdgeDoc {
    pub problem: String,
    pub lambda_edge: f64,
    pub verdict: &'static str,
    pub n0: Option<usize>,
    pub lower_bound_e: f64,
    pub reason: Option<String>,
    pub angles: Vec<f64>,
    pub cell_integrals: Vec<Vec<f64>>,
}

impl EdgeDoc {
    pub fn new(problem: String, v: &EdgeTestVerdict) -> Self {
        EdgeDoc {
            problem,
            lambda_edge: v.lambda_edge,
            verdict: v.verdict.as_str(),
            n0: v.n0,
            lower_bound_e: v.lower_bound_e,
            reason: v.reason.clone(),
            angles: v.angles.clone(),
            cell_integrals: v.cell_integrals.clone(),
        }
    }
}

pub fn to_json<T: Serialize>(doc: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(doc).map_err(|e| AppError::Serialize(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Write `doc` to `path`, or to stdout without one.
pub fn emit_json<T: Serialize>(doc: &T, path: Option<&Path>) -> Result<()> {
    let text = to_json(doc)?;
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| AppError::Io { path: p.to_path_buf(), source: e }),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| AppError::Io { path: "<stdout>".into(), source: e })
        }
    }
}

/// CSV with a header row and one record per row.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let io = |e: csv::Error| AppError::Io { path: path.to_path_buf(), source: e.into() };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(io)?;
    }
    w.flush().map_err(|e| AppError::Io { path: path.to_path_buf(), source: e })
}

/// Sibling of `path` with `suffix` added to the file stem.
pub fn sibling(path: &Path, suffix: &str) -> std::path::PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}{ext}"))
}
