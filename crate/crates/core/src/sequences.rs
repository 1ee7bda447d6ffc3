//! Domain/weight sequences and the convergence experiments run on them.
//!
//! An increasing sequence exhausts `D` from inside with weights rising to
//! `mu`; an outside sequence shrinks onto the closure of `D` with weights
//! falling to `mu`. Each run builds one kernel model per step, compares it
//! with the limit model and records which of the expected inequalities held.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_quadrature, ComplexPoint, Domain, DomainKind, QuadratureRule};
use crate::gram::FactorizationLog;
use crate::kernel::{KernelModel, PropertyViolations};
use crate::oracles::OracleKernel;
use crate::weights::Weight;

pub type DomainGenerator = Arc<dyn Fn(usize) -> Result<Domain> + Send + Sync>;
pub type WeightGenerator = Arc<dyn Fn(usize) -> Result<Weight> + Send + Sync>;
pub type StabilizationMap = Arc<dyn Fn(usize) -> usize + Send + Sync>;

/// Slack in the diagonal monotonicity between consecutive steps.
pub const MONOTONE_SLACK: f64 = 1e-8;
/// Slack in the bounds against the limit diagonal.
pub const LIMIT_SLACK: f64 = 1e-6;
/// Largest acceptable ratio between relative sup error and relative diagonal error.
pub const MAX_EQUIVALENCE_RATIO: f64 = 10.0;

const WEIGHT_SLACK: f64 = 1e-12;
const MAX_SPOT_NODES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceMode {
    Increasing,
    Outside,
}

impl fmt::Display for SequenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SequenceMode::Increasing => "increasing",
            SequenceMode::Outside => "outside",
        })
    }
}

/// Relative inset `delta_n` of step `n` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum InsetSchedule {
    /// `delta_n = 0`: every step equals the limit.
    Identity,
    /// `delta_n = 1 / (n + 1)`.
    Harmonic,
    /// `delta_n = ratio^n`.
    Geometric { ratio: f64 },
}

impl InsetSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            InsetSchedule::Geometric { ratio } if !(*ratio > 0.0 && *ratio < 1.0) => {
                Err(Error::InvalidParameter(format!("geometric ratio must lie in (0, 1), got {ratio}")))
            }
            _ => Ok(()),
        }
    }

    pub fn delta(&self, n: usize) -> f64 {
        match self {
            InsetSchedule::Identity => 0.0,
            InsetSchedule::Harmonic => 1.0 / (n as f64 + 1.0),
            InsetSchedule::Geometric { ratio } => ratio.powi(n as i32),
        }
    }
}

#[derive(Clone)]
pub struct SequenceSpec {
    mode: SequenceMode,
    steps: usize,
    domain_generator: DomainGenerator,
    weight_generator: WeightGenerator,
    limit_domain: Domain,
    limit_weight: Weight,
    stabilization: Option<StabilizationMap>,
}

impl fmt::Debug for SequenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SequenceSpec")
            .field("mode", &self.mode)
            .field("steps", &self.steps)
            .field("limit_domain", &self.limit_domain)
            .field("limit_weight", &self.limit_weight)
            .finish_non_exhaustive()
    }
}

impl SequenceSpec {
    pub fn new(
        mode: SequenceMode,
        steps: usize,
        domain_generator: DomainGenerator,
        weight_generator: WeightGenerator,
        limit_domain: Domain,
        limit_weight: Weight,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParameter("a sequence needs at least one step".into()));
        }
        Ok(Self {
            mode,
            steps,
            domain_generator,
            weight_generator,
            limit_domain,
            limit_weight,
            stabilization: None,
        })
    }

    /// Every step equals `(d, w)`.
    pub fn identity(mode: SequenceMode, steps: usize, d: Domain, w: Weight) -> Result<Self> {
        let (dd, ww) = (d.clone(), w.clone());
        Self::new(mode, steps, Arc::new(move |_| Ok(dd.clone())), Arc::new(move |_| Ok(ww.clone())), d, w)
    }

    /// Concentric discs of radius `R (1 - delta_n)` (increasing) or
    /// `R (1 + delta_n)` (outside) with the limit weight at every step.
    pub fn nested_discs(
        mode: SequenceMode,
        steps: usize,
        schedule: InsetSchedule,
        limit_domain: Domain,
        weight: Weight,
    ) -> Result<Self> {
        schedule.validate()?;
        let DomainKind::Disc { center, radius } = *limit_domain.kind() else {
            return Err(Error::Unsupported(format!("nested discs need a disc limit, got {limit_domain}")));
        };
        let sign = mode_sign(mode);
        let w = weight.clone();
        Self::new(
            mode,
            steps,
            Arc::new(move |n| Domain::disc(center, radius * (1.0 + sign * schedule.delta(n)))),
            Arc::new(move |_| Ok(w.clone())),
            limit_domain,
            weight,
        )
    }

    /// Fixed domain with weights `(1 - delta_n) mu` (increasing) or
    /// `(1 + delta_n) mu` (outside).
    pub fn scaled_weights(
        mode: SequenceMode,
        steps: usize,
        schedule: InsetSchedule,
        domain: Domain,
        limit_weight: Weight,
    ) -> Result<Self> {
        schedule.validate()?;
        let sign = mode_sign(mode);
        let (d, w) = (domain.clone(), limit_weight.clone());
        Self::new(
            mode,
            steps,
            Arc::new(move |_| Ok(d.clone())),
            Arc::new(move |n| w.scaled(1.0 + sign * schedule.delta(n))),
            domain,
            limit_weight,
        )
    }

    /// Index `N(n)` from which every later step dominates step `n`.
    /// Defaults to `n` itself.
    pub fn with_stabilization(mut self, map: StabilizationMap) -> Self {
        self.stabilization = Some(map);
        self
    }

    pub fn mode(&self) -> SequenceMode {
        self.mode
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn limit_domain(&self) -> &Domain {
        &self.limit_domain
    }

    pub fn limit_weight(&self) -> &Weight {
        &self.limit_weight
    }

    pub fn domain(&self, n: usize) -> Result<Domain> {
        (self.domain_generator)(n)
    }

    pub fn weight(&self, n: usize) -> Result<Weight> {
        (self.weight_generator)(n)
    }

    fn stabilization_index(&self, n: usize) -> usize {
        self.stabilization.as_ref().map_or(n, |f| f(n)).max(n)
    }
}

fn mode_sign(mode: SequenceMode) -> f64 {
    match mode {
        SequenceMode::Increasing => -1.0,
        SequenceMode::Outside => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub degree: usize,
    pub resolution: usize,
    pub order: usize,
    /// When set, convergence to the limit at the final step is asserted
    /// against this relative tolerance. Monotonicity and bounds are always
    /// asserted.
    pub convergence_tolerance: Option<f64>,
}

impl Default for RunParams {
    fn default() -> Self {
        Self { degree: 16, resolution: 128, order: 2, convergence_tolerance: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl InvariantCheck {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.to_string(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub domain: String,
    pub weight: String,
    /// Outer radius of the step domain, when it has one.
    pub radius: Option<f64>,
    pub weight_scale: f64,
    /// `K_n(t, t)` per anchor.
    pub diagonals: Vec<f64>,
    /// Closed-form `K_n(t, t)` per anchor, when an oracle exists.
    pub oracle_diagonals: Option<Vec<f64>>,
    /// `max_t |K_n(t,t) - K(t,t)| / K(t,t)`.
    pub diagonal_error: f64,
    /// `max |K_n(z,t) - K(z,t)|` over grid pairs.
    pub sup_error: f64,
    /// `sup_error` divided by `max |K(z,t)|` over the same pairs.
    pub sup_relative_error: f64,
    pub violations: PropertyViolations,
    pub factorization: FactorizationLog,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub mode: SequenceMode,
    pub anchors: Vec<ComplexPoint>,
    pub grid_size: usize,
    pub limit_diagonals: Vec<f64>,
    pub limit_oracle_diagonals: Option<Vec<f64>>,
    pub limit_factorization: FactorizationLog,
    pub steps: Vec<StepRecord>,
    /// Geometric rate fitted to the diagonals at the first anchor.
    pub rate: Option<RateFit>,
    /// Ratio of relative sup error to relative diagonal error at the final step.
    pub equivalence_ratio: Option<f64>,
    pub checks: Vec<InvariantCheck>,
}

impl ConvergenceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn final_step(&self) -> &StepRecord {
        self.steps.last().expect("reports hold at least one step")
    }
}

/// One step's model together with the inputs it was built from.
struct StepModel {
    domain: Domain,
    weight: Weight,
    model: KernelModel,
}

fn build_model(d: &Domain, w: &Weight, params: &RunParams) -> Result<(KernelModel, Arc<QuadratureRule>)> {
    let rule = Arc::new(build_quadrature(d, params.resolution, params.order)?);
    Ok((KernelModel::build(d, w, rule.clone(), params.degree)?, rule))
}

fn spot_nodes(rule: &QuadratureRule) -> Vec<ComplexPoint> {
    let stride = rule.len().div_ceil(MAX_SPOT_NODES).max(1);
    rule.nodes().iter().step_by(stride).copied().collect()
}

fn violation(msg: String) -> Error {
    Error::HypothesisViolation(msg)
}

/// `a <= b` up to relative rounding.
fn dominated(a: f64, b: f64) -> bool {
    a <= b * (1.0 + WEIGHT_SLACK) + WEIGHT_SLACK
}

fn check_points_inside(points: &[ComplexPoint], d: &Domain, what: &str) -> Result<()> {
    match points.iter().find(|&&p| !d.contains(p)) {
        Some(&p) => Err(Error::DomainMismatch { point: p, context: format!("{what} outside {d}") }),
        None => Ok(()),
    }
}

/// Hypotheses of the increasing theorem: nested domains with weights that
/// rise towards the limit, and pointwise convergence of the weights.
fn check_increasing_hypotheses(spec: &SequenceSpec, rules: &[Arc<QuadratureRule>]) -> Result<Vec<InvariantCheck>> {
    let limit_d = &spec.limit_domain;
    let limit_w = &spec.limit_weight;
    let mut checked = 0usize;
    for n in 1..=spec.steps {
        let wn = spec.weight(n)?;
        let nodes = spot_nodes(&rules[n - 1]);
        for m in spec.stabilization_index(n)..=spec.steps {
            let (dm, wm) = (spec.domain(m)?, spec.weight(m)?);
            for &p in &nodes {
                if !dm.contains(p) || !limit_d.contains(p) {
                    return Err(violation(format!("node {p} of step {n} lies outside step {m} or the limit domain")));
                }
                let (a, b, c) = (wn.evaluate(p)?, wm.evaluate(p)?, limit_w.evaluate(p)?);
                if !dominated(a, b) || !dominated(b, c) {
                    return Err(violation(format!(
                        "weights at {p} not ordered: step {n} = {a}, step {m} = {b}, limit = {c}"
                    )));
                }
                checked += 1;
            }
        }
    }
    let mut checks = vec![InvariantCheck::new(
        "hypothesis_nested_domains_rising_weights",
        true,
        format!("{checked} node comparisons"),
    )];
    checks.push(check_weight_convergence(spec, &spot_nodes(&rules[0]))?);
    Ok(checks)
}

/// Hypotheses of the outside theorems: every step contains the limit
/// domain and dominates its weight there, steps shrink onto the limit and
/// weights are integrable on their own domains.
fn check_outside_hypotheses(
    spec: &SequenceSpec,
    limit_rule: &QuadratureRule,
    rules: &[Arc<QuadratureRule>],
) -> Result<Vec<InvariantCheck>> {
    let limit_nodes = spot_nodes(limit_rule);
    let mut excess = Vec::with_capacity(spec.steps);
    for n in 1..=spec.steps {
        let (dn, wn) = (spec.domain(n)?, spec.weight(n)?);
        for &p in &limit_nodes {
            if !dn.contains(p) {
                return Err(violation(format!("limit node {p} lies outside step {n}")));
            }
            let (a, b) = (spec.limit_weight.evaluate(p)?, wn.evaluate(p)?);
            if !dominated(a, b) {
                return Err(violation(format!("limit weight {a} exceeds step {n} weight {b} at {p}")));
            }
        }
        let rule = &rules[n - 1];
        let mass: f64 = rule
            .nodes()
            .iter()
            .zip(rule.weights())
            .map(|(&p, &q)| wn.evaluate(p).map(|v| v * q))
            .sum::<Result<f64>>()?;
        if !mass.is_finite() {
            return Err(violation(format!("weight of step {n} is not integrable on its domain")));
        }
        let far = spot_nodes(rule)
            .iter()
            .filter_map(|&p| spec.limit_domain.distance_from(p))
            .fold(0.0, f64::max);
        excess.push(far);
    }
    let shrinking = excess.windows(2).all(|w| w[1] <= w[0] + 1e-12)
        && (excess[0] == 0.0 || *excess.last().unwrap() < excess[0] || spec.steps == 1);
    if !shrinking {
        return Err(violation(format!("step domains do not shrink onto the limit: excess {excess:?}")));
    }
    Ok(vec![
        InvariantCheck::new(
            "hypothesis_contains_limit_dominating_weights",
            true,
            format!("{} limit nodes per step", limit_nodes.len()),
        ),
        InvariantCheck::new(
            "hypothesis_shrinks_onto_limit",
            true,
            format!("excess distance first {:.3e}, last {:.3e}", excess[0], excess.last().unwrap()),
        ),
        check_weight_convergence(spec, &limit_nodes)?,
    ])
}

/// Spot check of pointwise weight convergence: the discrepancy to the limit
/// weight at the final step does not exceed that at the first step.
fn check_weight_convergence(spec: &SequenceSpec, nodes: &[ComplexPoint]) -> Result<InvariantCheck> {
    let (first, last) = (spec.weight(1)?, spec.weight(spec.steps)?);
    let (d_first, d_last) = (spec.domain(1)?, spec.domain(spec.steps)?);
    let mut worst = 0.0f64;
    for &p in nodes.iter().filter(|&&p| d_first.contains(p) && d_last.contains(p)) {
        let mu = spec.limit_weight.evaluate(p)?;
        let e1 = (first.evaluate(p)? - mu).abs();
        let e2 = (last.evaluate(p)? - mu).abs();
        if e2 > e1 * (1.0 + WEIGHT_SLACK) + WEIGHT_SLACK * mu {
            return Err(violation(format!("weight discrepancy grows at {p}: {e1} at step 1, {e2} at the end")));
        }
        worst = worst.max(e2 / mu);
    }
    Ok(InvariantCheck::new(
        "hypothesis_weights_converge",
        true,
        format!("final relative weight discrepancy {worst:.3e}"),
    ))
}

fn oracle_diagonals(d: &Domain, w: &Weight, anchors: &[ComplexPoint]) -> Result<Option<Vec<f64>>> {
    match OracleKernel::for_disc(d, w) {
        Some(o) => Ok(Some(anchors.iter().map(|&t| o.eval(t, t).map(|v| v.re)).collect::<Result<_>>()?)),
        None => Ok(None),
    }
}

fn grid_matrix(model: &KernelModel, grid: &[ComplexPoint]) -> Result<DMatrix<Complex64>> {
    if grid.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    model.matrix(grid)
}

struct Limit {
    model: KernelModel,
    rule: Arc<QuadratureRule>,
    diagonals: Vec<f64>,
    grid_matrix: DMatrix<Complex64>,
}

fn build_limit(spec: &SequenceSpec, anchors: &[ComplexPoint], grid: &[ComplexPoint], params: &RunParams) -> Result<Limit> {
    let (model, rule) = build_model(&spec.limit_domain, &spec.limit_weight, params)?;
    let diagonals = anchors.iter().map(|&t| model.diagonal(t)).collect::<Result<_>>()?;
    let grid_matrix = grid_matrix(&model, grid)?;
    Ok(Limit { model, rule, diagonals, grid_matrix })
}

fn build_steps(spec: &SequenceSpec, params: &RunParams) -> Result<Vec<(StepModel, Arc<QuadratureRule>, f64)>> {
    (1..=spec.steps)
        .into_par_iter()
        .map(|n| {
            let start = Instant::now();
            let (domain, weight) = (spec.domain(n)?, spec.weight(n)?);
            let (model, rule) = build_model(&domain, &weight, params)?;
            Ok((StepModel { domain, weight, model }, rule, start.elapsed().as_secs_f64()))
        })
        .collect()
}

fn record_step(
    n: usize,
    step: &StepModel,
    seconds: f64,
    anchors: &[ComplexPoint],
    grid: &[ComplexPoint],
    limit: &Limit,
) -> Result<StepRecord> {
    let start = Instant::now();
    let diagonals: Vec<f64> = anchors.iter().map(|&t| step.model.diagonal(t)).collect::<Result<_>>()?;
    let diagonal_error = diagonals
        .iter()
        .zip(&limit.diagonals)
        .map(|(d, l)| (d - l).abs() / l)
        .fold(0.0, f64::max);
    let k = grid_matrix(&step.model, grid)?;
    let sup_error = (&k - &limit.grid_matrix).iter().map(|v| v.norm()).fold(0.0, f64::max);
    let scale = limit.grid_matrix.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut points: Vec<ComplexPoint> = anchors.to_vec();
    points.extend_from_slice(grid);
    let violations = PropertyViolations::of_matrix(&step.model.matrix(&points)?);
    Ok(StepRecord {
        step: n,
        domain: step.domain.label().to_string(),
        weight: step.weight.label().to_string(),
        radius: step.domain.outer_radius(),
        weight_scale: step.weight.multiplier(),
        oracle_diagonals: oracle_diagonals(&step.domain, &step.weight, anchors)?,
        diagonals,
        diagonal_error,
        sup_error,
        sup_relative_error: if scale > 0.0 { sup_error / scale } else { sup_error },
        violations,
        factorization: step.model.system().log(),
        seconds: seconds + start.elapsed().as_secs_f64(),
    })
}

fn property_check(steps: &[StepRecord]) -> InvariantCheck {
    let mut total = PropertyViolations::default();
    for s in steps {
        total.merge(&s.violations);
    }
    InvariantCheck::new(
        "schwarz_hermitian_positive_diagonal",
        total.total() == 0,
        format!(
            "{} pairs: {} Schwarz, {} Hermitian, {} negative diagonal violations",
            total.pairs, total.schwarz, total.hermitian, total.negative_diagonal
        ),
    )
}

fn assemble_report(
    spec: &SequenceSpec,
    anchors: &[ComplexPoint],
    grid: &[ComplexPoint],
    limit: &Limit,
    steps: Vec<StepRecord>,
    mut checks: Vec<InvariantCheck>,
) -> Result<ConvergenceReport> {
    checks.push(property_check(&steps));
    let first_anchor: Vec<f64> = steps.iter().map(|s| s.diagonals[0]).collect();
    Ok(ConvergenceReport {
        mode: spec.mode,
        anchors: anchors.to_vec(),
        grid_size: grid.len(),
        limit_diagonals: limit.diagonals.clone(),
        limit_oracle_diagonals: oracle_diagonals(&spec.limit_domain, &spec.limit_weight, anchors)?,
        limit_factorization: limit.model.system().log(),
        rate: rate_fit(&first_anchor).ok(),
        equivalence_ratio: None,
        steps,
        checks,
    })
}

/// Exhaustion from inside: diagonals must not increase along the sequence
/// and stay above the limit diagonal.
pub fn run_increasing(
    spec: &SequenceSpec,
    anchors: &[ComplexPoint],
    grid: &[ComplexPoint],
    params: &RunParams,
) -> Result<ConvergenceReport> {
    if spec.mode != SequenceMode::Increasing {
        return Err(Error::InvalidParameter(format!("run_increasing needs an increasing sequence, got {}", spec.mode)));
    }
    if anchors.is_empty() {
        return Err(Error::InvalidParameter("at least one anchor is required".into()));
    }
    let first = spec.domain(1)?;
    check_points_inside(anchors, &first, "anchor")?;
    check_points_inside(grid, &first, "grid point")?;

    let built = build_steps(spec, params)?;
    let rules: Vec<Arc<QuadratureRule>> = built.iter().map(|(_, r, _)| r.clone()).collect();
    let mut checks = check_increasing_hypotheses(spec, &rules)?;
    let limit = build_limit(spec, anchors, grid, params)?;
    let steps = built
        .par_iter()
        .enumerate()
        .map(|(i, (s, _, secs))| record_step(i + 1, s, *secs, anchors, grid, &limit))
        .collect::<Result<Vec<_>>>()?;

    let mut worst_monotone = f64::NEG_INFINITY;
    for pair in steps.windows(2) {
        for (a, b) in pair[0].diagonals.iter().zip(&pair[1].diagonals) {
            worst_monotone = worst_monotone.max((b - a) / a);
        }
    }
    checks.push(InvariantCheck::new(
        "diagonals_non_increasing",
        worst_monotone <= MONOTONE_SLACK,
        format!("largest relative increase between consecutive steps {worst_monotone:.3e} (slack {MONOTONE_SLACK:e})"),
    ));
    let worst_lower = steps
        .iter()
        .flat_map(|s| s.diagonals.iter().zip(&limit.diagonals).map(|(d, l)| (l - d) / l))
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(InvariantCheck::new(
        "diagonals_above_limit",
        worst_lower <= LIMIT_SLACK,
        format!("largest relative shortfall below the limit diagonal {worst_lower:.3e} (slack {LIMIT_SLACK:e})"),
    ));
    if let Some(tol) = params.convergence_tolerance {
        let err = steps.last().unwrap().diagonal_error;
        checks.push(InvariantCheck::new(
            "final_diagonal_converged",
            err <= tol,
            format!("final relative diagonal error {err:.3e} (tolerance {tol:e})"),
        ));
    }
    assemble_report(spec, anchors, grid, &limit, steps, checks)
}

/// Approximation from outside: diagonals stay below the limit diagonal, and
/// diagonal and locally uniform convergence happen together.
pub fn run_outside(
    spec: &SequenceSpec,
    anchors: &[ComplexPoint],
    grid: &[ComplexPoint],
    params: &RunParams,
) -> Result<ConvergenceReport> {
    if spec.mode != SequenceMode::Outside {
        return Err(Error::InvalidParameter(format!("run_outside needs an outside sequence, got {}", spec.mode)));
    }
    if anchors.is_empty() {
        return Err(Error::InvalidParameter("at least one anchor is required".into()));
    }
    check_points_inside(anchors, &spec.limit_domain, "anchor")?;
    check_points_inside(grid, &spec.limit_domain, "grid point")?;

    let built = build_steps(spec, params)?;
    let rules: Vec<Arc<QuadratureRule>> = built.iter().map(|(_, r, _)| r.clone()).collect();
    let limit = build_limit(spec, anchors, grid, params)?;
    let mut checks = check_outside_hypotheses(spec, &limit.rule, &rules)?;
    let steps = built
        .par_iter()
        .enumerate()
        .map(|(i, (s, _, secs))| record_step(i + 1, s, *secs, anchors, grid, &limit))
        .collect::<Result<Vec<_>>>()?;

    let worst_upper = steps
        .iter()
        .flat_map(|s| s.diagonals.iter().zip(&limit.diagonals).map(|(d, l)| (d - l) / l))
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(InvariantCheck::new(
        "diagonals_below_limit",
        worst_upper <= LIMIT_SLACK,
        format!("largest relative excess over the limit diagonal {worst_upper:.3e} (slack {LIMIT_SLACK:e})"),
    ));

    let last = steps.last().unwrap();
    let ratio = if last.diagonal_error > 0.0 {
        last.sup_relative_error / last.diagonal_error
    } else if last.sup_relative_error == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    if let Some(tol) = params.convergence_tolerance {
        checks.push(InvariantCheck::new(
            "final_diagonal_converged",
            last.diagonal_error <= tol,
            format!("final relative diagonal error {:.3e} (tolerance {tol:e})", last.diagonal_error),
        ));
        checks.push(InvariantCheck::new(
            "final_sup_converged",
            last.sup_relative_error <= tol,
            format!("final relative sup error {:.3e} (tolerance {tol:e})", last.sup_relative_error),
        ));
        checks.push(InvariantCheck::new(
            "sup_to_diagonal_ratio_bounded",
            ratio <= MAX_EQUIVALENCE_RATIO,
            format!("ratio {ratio:.3} (bound {MAX_EQUIVALENCE_RATIO})"),
        ));
    }
    let mut report = assemble_report(spec, anchors, grid, &limit, steps, checks)?;
    report.equivalence_ratio = Some(ratio);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStep {
    pub step: usize,
    /// `||K_n(., t)||^2` in `L^2(D, mu)` per anchor.
    pub norms_sq: Vec<f64>,
    /// `||K_n(., t) - K(., t)||` in `L^2(D, mu)` per anchor.
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub anchors: Vec<ComplexPoint>,
    pub limit_diagonals: Vec<f64>,
    pub steps: Vec<NormStep>,
    pub tolerance: f64,
    pub converged: bool,
    pub checks: Vec<InvariantCheck>,
}

impl NormReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Norms of outside-step kernel sections restricted to the limit domain,
/// and their distance to the limit sections.
pub fn thm15_norm_check(
    spec: &SequenceSpec,
    anchors: &[ComplexPoint],
    params: &RunParams,
    tolerance: f64,
) -> Result<NormReport> {
    if spec.mode != SequenceMode::Outside {
        return Err(Error::InvalidParameter(format!("norm check needs an outside sequence, got {}", spec.mode)));
    }
    if anchors.is_empty() {
        return Err(Error::InvalidParameter("at least one anchor is required".into()));
    }
    check_points_inside(anchors, &spec.limit_domain, "anchor")?;
    let empty: [ComplexPoint; 0] = [];
    let limit = build_limit(spec, anchors, &empty, params)?;
    let built = build_steps(spec, params)?;
    let rules: Vec<Arc<QuadratureRule>> = built.iter().map(|(_, r, _)| r.clone()).collect();
    let mut checks = check_outside_hypotheses(spec, &limit.rule, &rules)?;

    let nodes = limit.rule.nodes();
    let measure = limit.model.system().measure();
    let limit_sections: Vec<Vec<Complex64>> = anchors
        .iter()
        .map(|&t| limit.model.section(t).map(|c| limit.model.node_values(&c)))
        .collect::<Result<_>>()?;

    let steps = built
        .par_iter()
        .enumerate()
        .map(|(i, (s, _, _))| {
            let mut norms_sq = Vec::with_capacity(anchors.len());
            let mut distances = Vec::with_capacity(anchors.len());
            for (&t, reference) in anchors.iter().zip(&limit_sections) {
                let c = s.model.section(t)?;
                let (mut norm, mut dist) = (0.0, 0.0);
                for ((&z, &m), &r) in nodes.iter().zip(measure).zip(reference) {
                    let v = s.model.eval_in_span(&c, z);
                    norm += v.norm_sqr() * m;
                    dist += (v - r).norm_sqr() * m;
                }
                norms_sq.push(norm);
                distances.push(dist.sqrt());
            }
            Ok(NormStep { step: i + 1, norms_sq, distances })
        })
        .collect::<Result<Vec<_>>>()?;

    let last = steps.last().unwrap();
    let norm_err = last
        .norms_sq
        .iter()
        .zip(&limit.diagonals)
        .map(|(n, k)| (n - k).abs() / k)
        .fold(0.0, f64::max);
    let dist_err = last
        .distances
        .iter()
        .zip(&limit.diagonals)
        .map(|(d, k)| d / k.sqrt())
        .fold(0.0, f64::max);
    let converged = norm_err <= tolerance && dist_err <= tolerance;
    let mut worst_rise = 0.0f64;
    for pair in steps.windows(2) {
        for ((a, b), k) in pair[0].distances.iter().zip(&pair[1].distances).zip(&limit.diagonals) {
            worst_rise = worst_rise.max((b - a) / k.sqrt());
        }
    }
    checks.push(InvariantCheck::new(
        "distances_non_increasing",
        worst_rise <= MONOTONE_SLACK,
        format!("largest rise of distance / sqrt K(t,t) between steps {worst_rise:.3e}"),
    ));
    checks.push(InvariantCheck::new(
        "final_norm_converged",
        norm_err <= tolerance,
        format!("final relative norm error {norm_err:.3e} (tolerance {tolerance:e})"),
    ));
    checks.push(InvariantCheck::new(
        "final_distance_converged",
        dist_err <= tolerance,
        format!("final distance / sqrt K(t,t) {dist_err:.3e} (tolerance {tolerance:e})"),
    ));
    Ok(NormReport {
        anchors: anchors.to_vec(),
        limit_diagonals: limit.diagonals,
        steps,
        tolerance,
        converged,
        checks,
    })
}

/// Least-squares slope of `log |v_n - v_last|` against `n`, using every
/// entry but the last and skipping zero differences.
pub fn rate_fit(values: &[f64]) -> Result<RateFit> {
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("rate fit needs positive finite values".into()));
    }
    let Some((&last, head)) = values.split_last() else {
        return Err(Error::InsufficientData("no values".into()));
    };
    let points: Vec<(f64, f64)> = head
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != last)
        .map(|(i, v)| (i as f64 + 1.0, (v - last).abs().ln()))
        .collect();
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} usable differences, at least 4 needed",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let rate = sxy / sxx;
    let intercept = my - rate * mx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(RateFit { rate, intercept, r_squared, points: points.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> ComplexPoint {
        Complex64::new(re, im)
    }

    fn quick() -> RunParams {
        RunParams { degree: 6, resolution: 48, order: 2, convergence_tolerance: None }
    }

    #[test]
    fn schedules() {
        assert_eq!(InsetSchedule::Harmonic.delta(1), 0.5);
        assert_eq!(InsetSchedule::Geometric { ratio: 0.5 }.delta(3), 0.125);
        assert_eq!(InsetSchedule::Identity.delta(7), 0.0);
        assert!(InsetSchedule::Geometric { ratio: 1.0 }.validate().is_err());
    }

    #[test]
    fn rate_fit_examples() {
        let geometric: Vec<f64> = (1..=10).map(|n| 2f64.powi(-n)).collect();
        let fit = rate_fit(&geometric).unwrap();
        // Differences to the last entry are 2^-n (1 - 2^(n-10)), which steepens the tail.
        assert!((fit.rate + 2f64.ln()).abs() < 0.1, "{fit:?}");
        assert!(fit.r_squared > 0.99);

        let exact: Vec<f64> = (1..=8).map(|n| 1.0 + 2f64.powi(-n)).chain([1.0]).collect();
        let fit = rate_fit(&exact).unwrap();
        assert!((fit.rate + 2f64.ln()).abs() < 1e-12 && (fit.r_squared - 1.0).abs() < 1e-12);

        assert!(matches!(rate_fit(&[3.0; 6]), Err(Error::InsufficientData(_))));
        assert!(matches!(rate_fit(&[1.0, 2.0]), Err(Error::InsufficientData(_))));
        assert!(rate_fit(&[1.0, -2.0, 3.0, 4.0, 5.0]).is_err());
    }

    #[test]
    fn shrinking_discs_from_inside() {
        let spec = SequenceSpec::nested_discs(
            SequenceMode::Increasing,
            8,
            InsetSchedule::Harmonic,
            Domain::unit_disc(),
            Weight::unit(),
        )
        .unwrap();
        let anchors = [c(0.0, 0.0), c(0.3, 0.0)];
        let grid = [c(0.1, 0.1), c(-0.2, 0.25), c(0.0, -0.3)];
        let report = run_increasing(&spec, &anchors, &grid, &quick()).unwrap();
        assert!(report.passed(), "{:#?}", report.checks);
        for s in &report.steps {
            let r = 1.0 - 1.0 / (s.step as f64 + 1.0);
            assert!((s.radius.unwrap() - r).abs() < 1e-15);
            // The constant mode is exact at the origin up to the quadrature area error.
            let expected = 1.0 / (PI * r * r);
            assert!((s.diagonals[0] - expected).abs() < 2e-3 * expected);
            assert!((s.oracle_diagonals.as_ref().unwrap()[0] - expected).abs() < 1e-14 * expected);
        }
        assert!(report.rate.unwrap().rate < 0.0);
    }

    #[test]
    fn rising_constant_weights() {
        let spec = SequenceSpec::scaled_weights(
            SequenceMode::Increasing,
            6,
            InsetSchedule::Harmonic,
            Domain::unit_disc(),
            Weight::unit(),
        )
        .unwrap();
        let report = run_increasing(&spec, &[c(0.0, 0.0)], &[c(0.2, 0.0)], &quick()).unwrap();
        assert!(report.passed(), "{:#?}", report.checks);
        for s in &report.steps {
            let factor = 1.0 - 1.0 / (s.step as f64 + 1.0);
            assert!((s.diagonals[0] * factor - report.limit_diagonals[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_sequences_have_zero_discrepancy() {
        let d = Domain::unit_disc();
        let w = Weight::radial_power(1.0).unwrap();
        let anchors = [c(0.0, 0.0), c(0.2, 0.1)];
        let grid = [c(0.3, 0.0), c(-0.1, 0.4)];
        let params = RunParams { convergence_tolerance: Some(1e-12), ..quick() };
        for mode in [SequenceMode::Increasing, SequenceMode::Outside] {
            let spec = SequenceSpec::identity(mode, 1, d.clone(), w.clone()).unwrap();
            let report = match mode {
                SequenceMode::Increasing => run_increasing(&spec, &anchors, &grid, &params),
                SequenceMode::Outside => run_outside(&spec, &anchors, &grid, &params),
            }
            .unwrap();
            assert!(report.passed(), "{:#?}", report.checks);
            assert_eq!(report.final_step().sup_error, 0.0);
            assert_eq!(report.final_step().diagonal_error, 0.0);
        }
        let spec = SequenceSpec::identity(SequenceMode::Outside, 3, d, w).unwrap();
        let norms = thm15_norm_check(&spec, &anchors, &quick(), 1e-3).unwrap();
        assert!(norms.passed() && norms.converged);
        assert!(norms.steps.iter().all(|s| s.distances.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn outside_discs_approach_from_below() {
        let spec = SequenceSpec::nested_discs(
            SequenceMode::Outside,
            6,
            InsetSchedule::Harmonic,
            Domain::unit_disc(),
            Weight::unit(),
        )
        .unwrap();
        let report = run_outside(&spec, &[c(0.0, 0.0)], &[c(0.2, 0.2), c(-0.4, 0.0)], &quick()).unwrap();
        assert!(report.passed(), "{:#?}", report.checks);
        let diag: Vec<f64> = report.steps.iter().map(|s| s.diagonals[0]).collect();
        assert!(diag.windows(2).all(|w| w[1] >= w[0]));
        for s in &report.steps {
            let r = 1.0 + 1.0 / (s.step as f64 + 1.0);
            let expected = 1.0 / (PI * r * r);
            assert!((s.diagonals[0] - expected).abs() < 2e-3 * expected);
        }
        assert!(report.equivalence_ratio.unwrap().is_finite());
    }

    #[test]
    fn falling_weights_on_fixed_domain() {
        let spec = SequenceSpec::scaled_weights(
            SequenceMode::Outside,
            5,
            InsetSchedule::Geometric { ratio: 0.5 },
            Domain::unit_disc(),
            Weight::moebius_power(1.0).unwrap(),
        )
        .unwrap();
        let anchors = [c(0.0, 0.0), c(0.3, -0.2)];
        let norms = thm15_norm_check(&spec, &anchors, &quick(), 1e-3).unwrap();
        for s in &norms.steps {
            let factor = 1.0 + 0.5f64.powi(s.step as i32);
            for (i, &k) in norms.limit_diagonals.iter().enumerate() {
                // K_n = K / c, so ||K_n(.,t)||^2 = K(t,t) / c^2 and the distance is K(t,t)^(1/2) (1 - 1/c).
                assert!((s.norms_sq[i] - k / (factor * factor)).abs() < 1e-9 * k);
                assert!((s.distances[i] - k.sqrt() * (1.0 - 1.0 / factor)).abs() < 1e-9 * k.sqrt());
            }
        }
        assert!(!norms.converged);
        assert!(norms.checks.iter().any(|c| c.name == "final_distance_converged" && !c.passed));
    }

    #[test]
    fn hypothesis_violations_abort() {
        // Weights that exceed the limit break the increasing hypothesis.
        let spec = SequenceSpec::scaled_weights(
            SequenceMode::Outside,
            3,
            InsetSchedule::Harmonic,
            Domain::unit_disc(),
            Weight::unit(),
        )
        .unwrap();
        let wrong = SequenceSpec { mode: SequenceMode::Increasing, ..spec };
        assert!(matches!(
            run_increasing(&wrong, &[c(0.0, 0.0)], &[], &quick()),
            Err(Error::HypothesisViolation(_))
        ));
        // Domains inside the limit cannot approximate it from outside.
        let inner = SequenceSpec::nested_discs(
            SequenceMode::Increasing,
            3,
            InsetSchedule::Harmonic,
            Domain::unit_disc(),
            Weight::unit(),
        )
        .unwrap();
        let wrong = SequenceSpec { mode: SequenceMode::Outside, ..inner };
        assert!(matches!(
            run_outside(&wrong, &[c(0.0, 0.0)], &[], &quick()),
            Err(Error::HypothesisViolation(_))
        ));
    }

    #[test]
    fn anchors_must_lie_in_first_domain() {
        let spec = SequenceSpec::nested_discs(
            SequenceMode::Increasing,
            3,
            InsetSchedule::Harmonic,
            Domain::unit_disc(),
            Weight::unit(),
        )
        .unwrap();
        assert!(matches!(
            run_increasing(&spec, &[c(0.6, 0.0)], &[], &quick()),
            Err(Error::DomainMismatch { .. })
        ));
        assert!(run_outside(&spec, &[c(0.0, 0.0)], &[], &quick()).is_err());
    }
}
