//! Runs one configured experiment and collects its tables and manifest.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use bergman::kernel::toeplitz_cross_check;
use bergman::sequences::{ConvergenceReport, NormReport};
use bergman::{
    admissibility_check, build_hartogs, build_quadrature, compact_sample_grid, run_increasing, run_outside,
    thm15_norm_check, ComplexPoint, Domain, FactorizationLog, InsetSchedule, InvariantCheck, KernelModel,
    OracleKernel, PropertyViolations, RunParams, SequenceMode, SequenceSpec, Weight,
};
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig, Vary};

/// Discrete Forelli-Rudin identity tolerance (relative).
pub const IDENTITY_TOL: f64 = 1e-12;
/// Toeplitz cross-check tolerance (relative).
pub const TOEPLITZ_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(usize),
    Num(f64),
    Text(String),
    Empty,
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            // 15 significant digits
            Cell::Num(v) => format!("{v:.14e}"),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

fn opt(v: Option<f64>) -> Cell {
    v.map_or(Cell::Empty, Cell::Num)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(name: &str, header: &[&'static str]) -> Self {
        Self { name: name.to_string(), header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub label: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LabeledFactorization {
    pub label: String,
    #[serde(flatten)]
    pub log: FactorizationLog,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: Experiment,
    pub config: ExperimentConfig,
    pub timings: Vec<Timing>,
    pub factorizations: Vec<LabeledFactorization>,
    pub checks: Vec<InvariantCheck>,
    /// Full structured report of the experiment, when it produced one.
    pub report: Option<serde_json::Value>,
    pub outputs: Vec<String>,
    pub error: Option<String>,
    pub passed: bool,
}

pub struct RunOutput {
    pub manifest: RunManifest,
    pub tables: Vec<Table>,
}

#[derive(Default)]
struct Collector {
    timings: Vec<Timing>,
    factorizations: Vec<LabeledFactorization>,
    checks: Vec<InvariantCheck>,
    report: Option<serde_json::Value>,
    tables: Vec<Table>,
}

impl Collector {
    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(InvariantCheck { name: name.to_string(), passed, detail });
    }

    fn factorization(&mut self, label: impl Into<String>, log: FactorizationLog) {
        self.factorizations.push(LabeledFactorization { label: label.into(), log });
    }

    fn timed<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(Timing { label: label.to_string(), seconds: start.elapsed().as_secs_f64() });
        out
    }

    fn properties(&mut self, v: &PropertyViolations) {
        self.check(
            "schwarz_hermitian_positive_diagonal",
            v.total() == 0,
            format!(
                "{} pairs: {} Schwarz, {} Hermitian, {} negative diagonal violations",
                v.pairs, v.schwarz, v.hermitian, v.negative_diagonal
            ),
        );
    }
}

fn re_im(p: ComplexPoint) -> [Cell; 2] {
    [Cell::Num(p.re), Cell::Num(p.im)]
}

/// Runs the experiment. Library errors end the run early; whatever was
/// collected up to that point is kept and the error is recorded.
pub fn execute(config: &ExperimentConfig) -> RunOutput {
    let mut col = Collector::default();
    let result = match config.experiment {
        Experiment::KernelTable => kernel_table(config, &mut col),
        Experiment::IncreasingRun | Experiment::OutsideRun => sequence_run(config, &mut col),
        Experiment::Thm15Check => norm_check(config, &mut col),
        Experiment::ForelliRudinCheck => forelli_rudin(config, &mut col),
        Experiment::ToeplitzCheck => toeplitz(config, &mut col),
        Experiment::AdmissibilityCheck => admissibility(config, &mut col),
    };
    let error = result.err().map(|e| e.to_string());
    let passed = error.is_none() && col.checks.iter().all(|c| c.passed);
    RunOutput {
        manifest: RunManifest {
            tool: "bergman",
            version: env!("CARGO_PKG_VERSION"),
            experiment: config.experiment,
            config: config.clone(),
            timings: col.timings,
            factorizations: col.factorizations,
            checks: col.checks,
            report: col.report,
            outputs: Vec::new(),
            error,
            passed,
        },
        tables: col.tables,
    }
}

fn base(config: &ExperimentConfig) -> bergman::Result<(Domain, Weight)> {
    Ok((config.domain.build()?, config.weight.build()?))
}

fn grid_on(d: &Domain, config: &ExperimentConfig) -> bergman::Result<Vec<ComplexPoint>> {
    compact_sample_grid(d, config.numeric.margin, config.numeric.grid_count)
}

fn kernel_table(config: &ExperimentConfig, col: &mut Collector) -> bergman::Result<()> {
    let (d, w) = base(config)?;
    let n = &config.numeric;
    let km = col.timed("assemble", || -> bergman::Result<KernelModel> {
        let rule = Arc::new(build_quadrature(&d, n.resolution, n.order)?);
        KernelModel::build(&d, &w, rule, n.degree)
    })?;
    col.factorization(d.label(), km.system().log());
    let grid = grid_on(&d, config)?;
    let k = col.timed("evaluate", || km.matrix(&grid))?;
    let oracle = OracleKernel::for_disc(&d, &w);

    let mut table = Table::new(
        "kernel_table",
        &["z_re", "z_im", "t_re", "t_im", "K_re", "K_im", "oracle_re", "oracle_im", "abs_err", "rel_err"],
    );
    let mut worst = 0.0f64;
    for (i, &z) in grid.iter().enumerate() {
        for (j, &t) in grid.iter().enumerate() {
            let v = k[(i, j)];
            let exact = oracle.as_ref().map(|o| o.eval(z, t)).transpose()?;
            let abs = exact.map(|e| (v - e).norm());
            let rel = exact.zip(abs).map(|(e, a)| a / e.norm());
            worst = worst.max(rel.unwrap_or(0.0));
            let mut row: Vec<Cell> = re_im(z).into_iter().chain(re_im(t)).chain(re_im(v)).collect();
            row.extend([opt(exact.map(|e| e.re)), opt(exact.map(|e| e.im)), opt(abs), opt(rel)]);
            table.push(row);
        }
    }
    col.properties(&PropertyViolations::of_matrix(&k));
    if oracle.is_some() {
        col.check(
            "oracle_agreement",
            worst <= n.tolerance,
            format!("max relative error {worst:.3e} over {} pairs (tolerance {:e})", grid.len().pow(2), n.tolerance),
        );
    }
    col.tables.push(table);
    Ok(())
}

fn sequence_spec(config: &ExperimentConfig, mode: SequenceMode) -> bergman::Result<SequenceSpec> {
    let (d, w) = base(config)?;
    let seq = config.sequence.as_ref().expect("validated sequence section");
    let steps = config.numeric.n_max;
    match (seq.schedule, seq.vary) {
        (InsetSchedule::Identity, _) => SequenceSpec::identity(mode, steps, d, w),
        (schedule, Vary::Domain) => SequenceSpec::nested_discs(mode, steps, schedule, d, w),
        (schedule, Vary::Weight) => SequenceSpec::scaled_weights(mode, steps, schedule, d, w),
    }
}

fn run_params(config: &ExperimentConfig) -> RunParams {
    let n = &config.numeric;
    let assert = config.sequence.as_ref().is_some_and(|s| s.assert_convergence);
    RunParams {
        degree: n.degree,
        resolution: n.resolution,
        order: n.order,
        convergence_tolerance: assert.then_some(n.tolerance),
    }
}

fn sequence_run(config: &ExperimentConfig, col: &mut Collector) -> bergman::Result<()> {
    let (mode, name) = match config.experiment {
        Experiment::IncreasingRun => (SequenceMode::Increasing, "increasing_run"),
        _ => (SequenceMode::Outside, "outside_run"),
    };
    let spec = sequence_spec(config, mode)?;
    let anchors = config.anchor_points();
    let grid_domain = match mode {
        SequenceMode::Increasing => spec.domain(1)?,
        SequenceMode::Outside => spec.limit_domain().clone(),
    };
    let grid = grid_on(&grid_domain, config)?;
    let params = run_params(config);
    let report = col.timed("run", || match mode {
        SequenceMode::Increasing => run_increasing(&spec, &anchors, &grid, &params),
        SequenceMode::Outside => run_outside(&spec, &anchors, &grid, &params),
    })?;
    record_convergence(config, col, name, &report);
    Ok(())
}

fn record_convergence(config: &ExperimentConfig, col: &mut Collector, name: &str, report: &ConvergenceReport) {
    col.factorization("limit", report.limit_factorization);
    let mut table = Table::new(
        name,
        &[
            "step",
            "r_n",
            "weight_scale",
            "anchor_re",
            "anchor_im",
            "K_tt",
            "oracle",
            "abs_err",
            "limit_K_tt",
            "rel_err_vs_limit",
            "sup_rel_err",
            "relative_ridge",
            "condition",
        ],
    );
    let mut final_oracle_err = None;
    for s in &report.steps {
        col.timings.push(Timing { label: format!("step {}", s.step), seconds: s.seconds });
        col.factorization(format!("step {}", s.step), s.factorization);
        let mut step_err = 0.0f64;
        for (i, &t) in report.anchors.iter().enumerate() {
            let oracle = s.oracle_diagonals.as_ref().map(|o| o[i]);
            let abs = oracle.map(|o| (s.diagonals[i] - o).abs());
            step_err = step_err.max(abs.zip(oracle).map_or(0.0, |(a, o)| a / o));
            let limit = report.limit_diagonals[i];
            let mut row = vec![Cell::Int(s.step), opt(s.radius), Cell::Num(s.weight_scale)];
            row.extend(re_im(t));
            row.extend([
                Cell::Num(s.diagonals[i]),
                opt(oracle),
                opt(abs),
                Cell::Num(limit),
                Cell::Num((s.diagonals[i] - limit).abs() / limit),
                Cell::Num(s.sup_relative_error),
                Cell::Num(s.factorization.relative_ridge),
                Cell::Num(s.factorization.condition_estimate),
            ]);
            table.push(row);
        }
        final_oracle_err = s.oracle_diagonals.is_some().then_some(step_err);
    }
    col.checks.extend(report.checks.iter().cloned());
    if let Some(err) = final_oracle_err {
        let tol = config.numeric.tolerance;
        col.check(
            "final_oracle_agreement",
            err <= tol,
            format!("final-step relative diagonal error vs closed form {err:.3e} (tolerance {tol:e})"),
        );
    }
    col.report = serde_json::to_value(report).ok();
    col.tables.push(table);
}

fn norm_check(config: &ExperimentConfig, col: &mut Collector) -> bergman::Result<()> {
    let spec = sequence_spec(config, SequenceMode::Outside)?;
    let anchors = config.anchor_points();
    let params = run_params(config);
    let report: NormReport =
        col.timed("run", || thm15_norm_check(&spec, &anchors, &params, config.numeric.tolerance))?;
    let mut table = Table::new("thm15_check", &["step", "anchor_re", "anchor_im", "norm_sq", "limit_K_tt", "distance"]);
    for s in &report.steps {
        for (i, &t) in report.anchors.iter().enumerate() {
            let mut row = vec![Cell::Int(s.step)];
            row.extend(re_im(t));
            row.extend([Cell::Num(s.norms_sq[i]), Cell::Num(report.limit_diagonals[i]), Cell::Num(s.distances[i])]);
            table.push(row);
        }
    }
    col.checks.extend(report.checks.iter().cloned());
    col.report = serde_json::to_value(&report).ok();
    col.tables.push(table);
    Ok(())
}

fn forelli_rudin(config: &ExperimentConfig, col: &mut Collector) -> bergman::Result<()> {
    let (d, w) = base(config)?;
    let n = &config.numeric;
    let rule = Arc::new(build_quadrature(&d, n.resolution, n.order)?);
    let h = col.timed("assemble blocks", || build_hartogs(&d, &w, n.degree, n.fiber_degree, rule.clone()))?;
    let km = col.timed("assemble base", || KernelModel::build(&d, &w, rule, n.degree))?;
    for m in 0..=h.fiber_degree() {
        col.factorization(format!("fiber block {m}"), h.block(m).expect("block in range").log());
    }
    col.factorization(d.label(), km.system().log());
    let oracle = OracleKernel::for_disc(&d, &w);
    let grid = grid_on(&d, config)?;

    let mut table = Table::new(
        "forelli_rudin_check",
        &[
            "z_re",
            "z_im",
            "p_re",
            "p_im",
            "pi_K_omega_re",
            "pi_K_omega_im",
            "K_re",
            "K_im",
            "rel_discrepancy",
            "oracle_re",
            "oracle_im",
            "oracle_rel_err",
        ],
    );
    let (mut identity, mut oracle_err) = (0.0f64, 0.0f64);
    for &z in &grid {
        for &p in &grid {
            let omega = h.kernel_at_zero_fiber(z, p)? * PI;
            let k = km.eval(z, p)?;
            let rel = (omega - k).norm() / k.norm();
            identity = identity.max(rel);
            let exact = oracle.as_ref().map(|o| o.eval(z, p)).transpose()?;
            let o_err = exact.map(|e| (omega - e).norm() / e.norm());
            oracle_err = oracle_err.max(o_err.unwrap_or(0.0));
            let mut row: Vec<Cell> = re_im(z).into_iter().chain(re_im(p)).chain(re_im(omega)).chain(re_im(k)).collect();
            row.extend([Cell::Num(rel), opt(exact.map(|e| e.re)), opt(exact.map(|e| e.im)), opt(o_err)]);
            table.push(row);
        }
    }
    col.properties(&PropertyViolations::of_matrix(&km.matrix(&grid)?));
    col.check(
        "discrete_identity",
        identity <= IDENTITY_TOL,
        format!("max |pi K_omega - K| / |K| = {identity:.3e} (tolerance {IDENTITY_TOL:e})"),
    );
    if oracle.is_some() {
        col.check(
            "oracle_agreement",
            oracle_err <= n.tolerance,
            format!("max relative error of pi K_omega vs closed form {oracle_err:.3e} (tolerance {:e})", n.tolerance),
        );
    }
    col.tables.push(table);
    Ok(())
}

fn toeplitz(config: &ExperimentConfig, col: &mut Collector) -> bergman::Result<()> {
    let (d, w) = base(config)?;
    let n = &config.numeric;
    let rule = Arc::new(build_quadrature(&d, n.resolution, n.order)?);
    let anchors = grid_on(&d, config)?;
    let mut table = Table::new("toeplitz_check", &["t_re", "t_im", "discrepancy"]);
    let mut worst = 0.0f64;
    let start = Instant::now();
    for &t in &anchors {
        let r = toeplitz_cross_check(&d, &w, rule.clone(), n.degree, t)?;
        worst = worst.max(r);
        let mut row: Vec<Cell> = re_im(t).into();
        row.push(Cell::Num(r));
        table.push(row);
    }
    col.timings.push(Timing { label: "cross-check".into(), seconds: start.elapsed().as_secs_f64() });
    col.check(
        "toeplitz_relation",
        worst <= TOEPLITZ_TOL,
        format!("max relative discrepancy {worst:.3e} over {} anchors (tolerance {TOEPLITZ_TOL:e})", anchors.len()),
    );
    col.tables.push(table);
    Ok(())
}

fn admissibility(config: &ExperimentConfig, col: &mut Collector) -> bergman::Result<()> {
    let (d, w) = base(config)?;
    let n = &config.numeric;
    let rule = build_quadrature(&d, n.resolution, n.order)?;
    let report = col.timed("integrate", || admissibility_check(&w, &d, n.exponent, &rule))?;
    let mut table = Table::new(
        "admissibility_check",
        &["exponent", "margin", "integral_estimate", "refined_estimate", "relative_change", "verdict"],
    );
    table.push(vec![
        Cell::Num(report.exponent),
        Cell::Num(report.margin),
        Cell::Num(report.integral_estimate),
        Cell::Num(report.refined_estimate),
        Cell::Num(report.relative_change),
        Cell::Text(format!("{:?}", report.verdict).to_lowercase()),
    ]);
    col.report = serde_json::to_value(&report).ok();
    col.tables.push(table);
    Ok(())
}
