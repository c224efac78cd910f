//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hillgap_core::coefficients::{BaseFamily, CoefficientModel};
use hillgap_core::floquet::{self, BandOptions};
use hillgap_core::oracle::{default_length, oracle_gap_eigenvalues, OracleProblem};
use hillgap_core::perturb::{self, VolterraOptions, VolterraSetup};
use hillgap_core::spectra::{self, BoundaryCondition, Executor, GapOptions};
use serde::Serialize;

use crate::config::RunConfig;
use crate::exec::Parallel;
use crate::output::{self, BandsDoc, DiscriminantDoc, DiscriminantPoint, EdgeDoc, FloquetDoc, GapDoc, OracleDoc, SolutionDoc};
use crate::problem::{parse_list, parse_number, ProblemSpec};
use crate::verify::{Verifier, DEFAULT_SEED};
use crate::{AppError, Result};

#[derive(Debug, Parser)]
#[command(name = "hillgap", version, about = "Spectral gaps of perturbed periodic Sturm-Liouville operators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hill discriminant D(λ) at points or over a range.
    Discriminant(Common),
    /// Band edges, bands and gaps over a range.
    Bands(Common),
    /// Monodromy matrix, exponent and multipliers.
    Floquet(Common),
    /// Perturbed solutions with prescribed asymptotics.
    PerturbSolve(Common),
    /// Eigenvalues inside a gap by shooting, Wronskian zeros and the oracle.
    GapEigs(Common),
    /// Band-edge eigenvalue test.
    EdgeTest(Common),
    /// Finite-difference eigenvalues inside a gap.
    Oracle(Common),
    /// Verification suites.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base family, optionally with perturbations: `mathieu+well`.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<String>,
    /// Period; accepts `pi`, `2pi`, `pi/2`.
    #[arg(long, allow_hyphen_values = true)]
    pub omega: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub q0: Option<String>,
    /// Base parameters, comma separated, in table order.
    #[arg(long, allow_hyphen_values = true)]
    pub params: Option<String>,
    /// Added perturbation family.
    #[arg(long)]
    pub pert: Option<String>,
    /// Parameters of the last perturbation, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub pert_params: Option<String>,
    /// Domain start.
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<String>,
    #[arg(long)]
    pub moment_class: Option<u8>,
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], allow_hyphen_values = true)]
    pub range: Option<Vec<String>>,
    /// Single value or comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub points: Option<usize>,
    /// Boundary angle at `a`.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    /// 1-based gap index within the range.
    #[arg(long)]
    pub gap_index: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_hyphen_values = true)]
    pub gap: Option<Vec<String>>,
    /// Perturbation on the whole line instead of the half line.
    #[arg(long)]
    pub full_line: bool,
    /// 1-based edge index within the range.
    #[arg(long)]
    pub edge_index: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    /// `decaying`, `second` or `both`.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub per_period: Option<usize>,
    /// JSON output path; stdout without it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV trace path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// `thm1`, `thm2` or `thm3`.
    pub suite: String,
    #[command(flatten)]
    pub common: Common,
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Discriminant(c) => cmd_discriminant(&Ctx::new("discriminant", c)?),
        Command::Bands(c) => cmd_bands(&Ctx::new("bands", c)?),
        Command::Floquet(c) => cmd_floquet(&Ctx::new("floquet", c)?),
        Command::PerturbSolve(c) => cmd_perturb(&Ctx::new("perturb-solve", c)?),
        Command::GapEigs(c) => cmd_gap(&Ctx::new("gap-eigs", c)?),
        Command::EdgeTest(c) => cmd_edge(&Ctx::new("edge-test", c)?),
        Command::Oracle(c) => cmd_oracle(&Ctx::new("oracle", c)?),
        Command::Verify(v) => cmd_verify(&v.suite, &Ctx::new("verify", v.common)?),
    }
}

/// Command-line flags merged over the config file.
struct Ctx {
    args: Common,
    cfg: RunConfig,
    spec: ProblemSpec,
}

fn two(v: &[String]) -> Result<(f64, f64)> {
    let (a, b) = (parse_number(&v[0])?, parse_number(&v[1])?);
    if b <= a {
        return Err(AppError::Usage(format!("empty interval [{a}, {b}]")));
    }
    Ok((a, b))
}

impl Ctx {
    fn new(command: &str, args: Common) -> Result<Self> {
        let cfg = match &args.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(c) = &cfg.command {
            let expected = if command == "verify" { c.split_whitespace().next().unwrap_or_default() } else { c.as_str() };
            if expected != command {
                return Err(AppError::Usage(format!("config is for `{c}`, not `{command}`")));
            }
        }
        let mut spec = match &args.family {
            Some(f) => ProblemSpec::from_family(f)?,
            None => ProblemSpec::from_config(&cfg.problem)?,
        };
        if args.family.is_some() {
            // keep the remaining problem keys of the file
            if let Some(a) = cfg.problem.a {
                spec.a = a;
            }
            spec.moment_class = cfg.problem.moment_class;
        }
        apply_param_flags(&mut spec, &args)?;
        if let Some(p) = &args.pert {
            for name in p.split('+') {
                spec.push_pert(name.trim(), None)?;
            }
        }
        if let Some(p) = &args.pert_params {
            spec.set_pert_params(parse_list(p)?)?;
        }
        if let Some(a) = &args.a {
            spec.a = parse_number(a)?;
        }
        if args.moment_class.is_some() {
            spec.moment_class = args.moment_class;
        }
        if args.full_line {
            spec.full_line = true;
        }
        Ok(Ctx { args, cfg, spec })
    }

    fn out(&self) -> Option<PathBuf> {
        self.args.out.clone().or_else(|| self.cfg.output.json.clone())
    }

    fn csv(&self) -> Option<PathBuf> {
        self.args.csv.clone().or_else(|| self.cfg.output.csv.clone())
    }

    fn emit<T: Serialize>(&self, doc: &T) -> Result<()> {
        output::emit_json(doc, self.out().as_deref())
    }

    fn range(&self, base: &CoefficientModel) -> Result<(f64, f64)> {
        if let Some(r) = &self.args.range {
            return two(r);
        }
        if let Some([a, b]) = self.cfg.lambda.range {
            return two(&[a.to_string(), b.to_string()]);
        }
        Ok(default_range(base))
    }

    fn lambdas(&self) -> Result<Option<Vec<f64>>> {
        if let Some(l) = &self.args.lambda {
            return Ok(Some(parse_list(l)?));
        }
        Ok(self.cfg.lambda.value.map(|v| vec![v]))
    }

    fn alpha(&self) -> Result<f64> {
        match &self.args.alpha {
            Some(a) => parse_number(a),
            None => Ok(self.cfg.gap.alpha.unwrap_or(0.0)),
        }
    }

    fn band_options(&self) -> BandOptions {
        let t = &self.cfg.tolerances;
        let d = BandOptions::default();
        BandOptions {
            scan_resolution: t.scan_resolution.unwrap_or(d.scan_resolution),
            tol_edge: t.edge.unwrap_or(d.tol_edge),
            tol: t.ode.unwrap_or(d.tol),
        }
    }

    fn volterra(&self) -> VolterraOptions {
        let mut v = VolterraOptions::default();
        if let Some(t) = self.cfg.tolerances.ode {
            v.tol = t;
        }
        if let Some(x) = self.cfg.solve.truncation {
            v.truncation = Some(x);
        }
        v
    }

    fn gap_options(&self) -> GapOptions {
        let mut g = GapOptions { volterra: self.volterra(), ..GapOptions::default() };
        if let Some(s) = self.cfg.gap.samples {
            g.samples = s;
        }
        if let Some(m) = self.cfg.gap.edge_margin {
            g.edge_margin = m;
        }
        if let Some(t) = self.cfg.tolerances.eigenvalue {
            g.tol = t;
        }
        if let Some(p) = self.args.periods.or(self.cfg.oracle.periods) {
            g.oracle_periods = p;
        }
        if let Some(p) = self.args.per_period.or(self.cfg.oracle.per_period) {
            g.oracle_per_period = p;
        }
        g
    }

    /// Gap given directly or by index among the gaps of the range.
    fn gap(&self, base: &CoefficientModel) -> Result<(f64, f64)> {
        if let Some(g) = &self.args.gap {
            return two(g);
        }
        if let Some([a, b]) = self.cfg.gap.interval {
            return Ok((a, b));
        }
        let index = self.args.gap_index.or(self.cfg.gap.index).unwrap_or(1);
        let (lo, hi) = self.range(base)?;
        let gaps = floquet::band_structure(base, lo, hi, &self.band_options())?.gaps();
        if index == 0 || index > gaps.len() {
            return Err(AppError::Usage(format!("gap index {index} out of range: {} open gap(s) in [{lo}, {hi}]", gaps.len())));
        }
        Ok(gaps[index - 1])
    }
}

fn default_range(base: &CoefficientModel) -> (f64, f64) {
    match base.base_family() {
        BaseFamily::Mathieu { .. } => (-1.0, 5.0),
        _ => (-2.0, 20.0),
    }
}

fn apply_param_flags(spec: &mut ProblemSpec, args: &Common) -> Result<()> {
    if let Some(p) = &args.params {
        spec.params = parse_list(p)?;
    }
    let set = |spec: &mut ProblemSpec, i: usize, v: f64, defaults: &[f64]| {
        if spec.params.len() < defaults.len() {
            let have = spec.params.len();
            spec.params.extend_from_slice(&defaults[have..]);
        }
        spec.params[i] = v;
    };
    let pi = std::f64::consts::PI;
    let flags = [("gamma", &args.gamma), ("omega", &args.omega), ("q0", &args.q0)];
    for (name, value) in flags {
        let Some(v) = value else { continue };
        let v = parse_number(v)?;
        match (spec.base.as_str(), name) {
            ("mathieu", "gamma") => set(spec, 0, v, &[1.0]),
            ("free", "omega") => set(spec, 0, v, &[pi, 1.0]),
            ("const_shift", "q0") => set(spec, 0, v, &[0.0, pi, 1.0]),
            ("const_shift", "omega") => set(spec, 1, v, &[0.0, pi, 1.0]),
            ("layered", "omega") => set(spec, 0, v, &[0.0; 8]),
            (base, _) => return Err(AppError::Usage(format!("--{name} does not apply to family `{base}`"))),
        }
    }
    Ok(())
}

fn write_csv_opt(path: Option<PathBuf>, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    match path {
        Some(p) => output::write_csv(&p, header, rows),
        None => Ok(()),
    }
}

fn cmd_discriminant(ctx: &Ctx) -> Result<()> {
    let base = ctx.spec.base_model()?;
    let lambdas = match ctx.lambdas()? {
        Some(l) => l,
        None => {
            let (lo, hi) = ctx.range(&base)?;
            let n = ctx.args.points.or(ctx.cfg.lambda.points).unwrap_or(200).max(2);
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        }
    };
    let tol = ctx.band_options().tol;
    let exec = Parallel::from_env()?;
    let ds = exec.map(&lambdas, |l| floquet::discriminant(&base, l, tol));
    let mut samples = Vec::with_capacity(ds.len());
    for (l, d) in lambdas.iter().zip(ds) {
        samples.push(DiscriminantPoint { lambda: *l, d: d? });
    }
    write_csv_opt(ctx.csv(), &["lambda", "D"], samples.iter().map(|s| vec![s.lambda, s.d]))?;
    ctx.emit(&DiscriminantDoc { problem: ctx.spec.label(), omega: base.base_period(), samples })
}

fn cmd_bands(ctx: &Ctx) -> Result<()> {
    let base = ctx.spec.base_model()?;
    let (lo, hi) = ctx.range(&base)?;
    let opts = ctx.band_options();
    let grid = floquet::scan_grid(lo, hi, &opts)?;
    let exec = Parallel::from_env()?;
    let samples = exec.map(&grid, |l| floquet::discriminant(&base, l, opts.tol).map(|d| (l, d)));
    let samples: Vec<(f64, f64)> = samples.into_iter().collect::<std::result::Result<_, _>>()?;
    let bands = floquet::band_structure_from_samples(&base, &samples, &opts)?;
    write_csv_opt(ctx.csv(), &["lambda", "D"], samples.iter().map(|(l, d)| vec![*l, *d]))?;
    ctx.emit(&BandsDoc::new(ctx.spec.label(), &bands))
}

fn cmd_floquet(ctx: &Ctx) -> Result<()> {
    let base = ctx.spec.base_model()?;
    let lambdas = ctx.lambdas()?.ok_or_else(|| AppError::Usage("floquet needs --lambda".into()))?;
    let opts = ctx.band_options();
    let exec = Parallel::from_env()?;
    let docs = exec.map(&lambdas, |l| floquet::monodromy_with_edge(&base, l, opts.tol, opts.tol_edge).map(|m| FloquetDoc::from(&m)));
    let docs: Vec<FloquetDoc> = docs.into_iter().collect::<std::result::Result<_, _>>()?;
    ctx.emit(&docs)
}

#[derive(Serialize)]
struct SolutionsDoc {
    problem: String,
    solutions: Vec<SolutionDoc>,
}

fn cmd_perturb(ctx: &Ctx) -> Result<()> {
    let pair = ctx.spec.pair()?;
    let lambdas = ctx.lambdas()?.ok_or_else(|| AppError::Usage("perturb-solve needs --lambda".into()))?;
    let kind = ctx.args.kind.clone().or_else(|| ctx.cfg.solve.kind.clone()).unwrap_or_else(|| "decaying".into());
    if !matches!(kind.as_str(), "decaying" | "second" | "both") {
        return Err(AppError::Usage(format!("unknown solution kind `{kind}`")));
    }
    let vopts = ctx.volterra();
    let exec = Parallel::from_env()?;
    let results = exec.map(&lambdas, |l| -> hillgap_core::Result<Vec<(perturb::PerturbedSolution, SolutionDoc)>> {
        let setup = VolterraSetup::new(&pair, l, &vopts)?;
        let sols = match kind.as_str() {
            "decaying" => vec![perturb::build_decaying_solution(&setup)?],
            "second" => vec![perturb::build_second_solution(&setup)?],
            _ => {
                let (u, v) = perturb::build_solution_pair(&setup)?;
                vec![u, v]
            }
        };
        Ok(sols
            .into_iter()
            .map(|s| {
                let doc = SolutionDoc::new(&s, &perturb::residual_report(&setup, &s), &perturb::pixel_report(&setup, &s));
                (s, doc)
            })
            .collect())
    });
    let mut docs = Vec::new();
    let mut traces = Vec::new();
    for r in results {
        for (s, d) in r? {
            traces.push(s);
            docs.push(d);
        }
    }
    if let Some(p) = ctx.csv() {
        let rows = traces.iter().flat_map(|s| {
            s.xs.iter().zip(&s.states).map(move |(x, y)| vec![s.lambda, *x, y[0].re, y[0].im, y[1].re, y[1].im])
        });
        output::write_csv(&p, &["lambda", "x", "u_re", "u_im", "pu_re", "pu_im"], rows)?;
    }
    ctx.emit(&SolutionsDoc { problem: ctx.spec.label(), solutions: docs })
}

fn cmd_gap(ctx: &Ctx) -> Result<()> {
    let exec = Parallel::from_env()?;
    let opts = ctx.gap_options();
    let base = ctx.spec.base_model()?;
    let gap = ctx.gap(&base)?;
    let (doc, report) = if ctx.spec.full_line {
        let line = ctx.spec.full()?;
        let r = spectra::gap_eigenvalues_fullline(&line, gap, &opts, &exec)?;
        (GapDoc::new(ctx.spec.label(), &r.report, None, Some(&r)), r.report)
    } else {
        let alpha = ctx.alpha()?;
        let pair = ctx.spec.pair()?;
        let r = spectra::gap_report_halfline(&pair, BoundaryCondition::new(alpha)?, gap, &opts, &exec)?;
        (GapDoc::new(ctx.spec.label(), &r, Some(alpha), None), r)
    };
    if let Some(p) = ctx.csv() {
        output::write_csv(&p, &["lambda", "m"], report.scan.iter().map(|(l, m)| vec![*l, *m]))?;
        if let Some(w) = &report.wronskian {
            output::write_csv(&output::sibling(&p, "_wronskian"), &["x", "W"], w.xs.iter().zip(&w.w).map(|(x, v)| vec![*x, *v]))?;
        }
    }
    ctx.emit(&doc)
}

fn cmd_edge(ctx: &Ctx) -> Result<()> {
    let pair = ctx.spec.pair()?;
    let edge = match ctx.lambdas()?.and_then(|l| l.first().copied()).or(ctx.cfg.edge.lambda) {
        Some(e) => e,
        None => {
            let (lo, hi) = ctx.range(pair.base())?;
            let edges = floquet::band_structure(pair.base(), lo, hi, &ctx.band_options())?.edges;
            let index = ctx.args.edge_index.or(ctx.cfg.edge.index).unwrap_or(1);
            if index == 0 || index > edges.len() {
                return Err(AppError::Usage(format!("edge index {index} out of range: {} edge(s) in [{lo}, {hi}]", edges.len())));
            }
            edges[index - 1]
        }
    };
    let n_max = ctx.args.n_max.or(ctx.cfg.edge.n_max).unwrap_or(20);
    let v = spectra::edge_eigenvalue_test(&pair, edge, n_max, &ctx.volterra())?;
    if let Some(p) = ctx.csv() {
        let rows = (0..n_max).map(|n| {
            let mut row = vec![n as f64];
            row.extend(v.cell_integrals.iter().map(|c| c.get(n).copied().unwrap_or(f64::NAN)));
            row
        });
        let names: Vec<String> = std::iter::once("cell".to_string()).chain(v.angles.iter().map(|a| format!("theta_{a:.6}"))).collect();
        let header: Vec<&str> = names.iter().map(String::as_str).collect();
        output::write_csv(&p, &header, rows)?;
    }
    ctx.emit(&EdgeDoc::new(ctx.spec.label(), &v))
}

fn cmd_oracle(ctx: &Ctx) -> Result<()> {
    let pair = ctx.spec.pair()?;
    let gap = ctx.gap(pair.base())?;
    let opts = ctx.gap_options();
    let (length, n) = if ctx.args.periods.or(ctx.cfg.oracle.periods).is_some() {
        let l = default_length(pair.period(), opts.oracle_periods);
        (l, (l / pair.period() * opts.oracle_per_period as f64).ceil() as usize)
    } else {
        spectra::oracle_size(pair.base(), opts.analysed_interval(gap), &opts)?
    };
    let line;
    let problem = if ctx.spec.full_line {
        line = ctx.spec.full()?;
        OracleProblem::FullLine(&line)
    } else {
        OracleProblem::HalfLine { pair: &pair, alpha: ctx.alpha()? }
    };
    let r = oracle_gap_eigenvalues(problem, gap, length, n)?;
    ctx.emit(&OracleDoc::from(&r))
}

fn cmd_verify(suite: &str, ctx: &Ctx) -> Result<()> {
    let seed = ctx.args.seed.or(ctx.cfg.seed).unwrap_or(DEFAULT_SEED);
    let mut v = Verifier::new(Parallel::from_env()?, seed);
    let custom = ctx.args.family.is_some() || ctx.cfg.problem.base.is_some() || ctx.args.pert.is_some();
    if custom {
        v.problem = Some(ctx.spec.clone());
    }
    if ctx.args.range.is_some() || ctx.cfg.lambda.range.is_some() {
        v.range = Some(ctx.range(&ctx.spec.base_model()?)?);
    }
    let report = v.suite(suite)?;
    print!("{}", report.table());
    if let Some(p) = ctx.out() {
        output::emit_json(&report, Some(Path::new(&p)))?;
    }
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<String> = report.checks.iter().filter(|c| !c.passed).map(|c| c.criterion.to_string()).collect();
        Err(AppError::ChecksFailed(format!("suite {suite}: criteria {} failed", failed.join(", "))))
    }
}
