//! Experiment configuration: TOML text in, validated [`ExperimentConfig`] out.

use std::fmt;
use std::path::PathBuf;

use bergman::{BoundingBox, BuiltinExpression, ComplexPoint, Domain, InsetSchedule, Weight};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

fn field_error(field: &str, message: impl Into<String>) -> ParseError {
    ParseError::Field { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    KernelTable,
    IncreasingRun,
    OutsideRun,
    Thm15Check,
    ForelliRudinCheck,
    ToeplitzCheck,
    AdmissibilityCheck,
}

impl Experiment {
    const ALL: [Experiment; 7] = [
        Experiment::KernelTable,
        Experiment::IncreasingRun,
        Experiment::OutsideRun,
        Experiment::Thm15Check,
        Experiment::ForelliRudinCheck,
        Experiment::ToeplitzCheck,
        Experiment::AdmissibilityCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::KernelTable => "kernel_table",
            Experiment::IncreasingRun => "increasing_run",
            Experiment::OutsideRun => "outside_run",
            Experiment::Thm15Check => "thm15_check",
            Experiment::ForelliRudinCheck => "forelli_rudin_check",
            Experiment::ToeplitzCheck => "toeplitz_check",
            Experiment::AdmissibilityCheck => "admissibility_check",
        }
    }

    fn is_sequence(self) -> bool {
        matches!(self, Experiment::IncreasingRun | Experiment::OutsideRun | Experiment::Thm15Check)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    Disc { center: [f64; 2], radius: f64 },
    Annulus { center: [f64; 2], inner: f64, outer: f64 },
    /// Indicator of `((x-cx)/a)^2 + ((y-cy)/b)^2 < 1`.
    Ellipse { center: [f64; 2], semi_axes: [f64; 2] },
}

impl DomainSpec {
    pub fn build(&self) -> bergman::Result<Domain> {
        match *self {
            DomainSpec::Disc { center, radius } => Domain::disc(point(center), radius),
            DomainSpec::Annulus { center, inner, outer } => Domain::annulus(point(center), inner, outer),
            DomainSpec::Ellipse { center, semi_axes: [a, b] } => {
                let c = point(center);
                let bbox = BoundingBox::new(c.re - a, c.re + a, c.im - b, c.im + b)?;
                Ok(Domain::indicator(format!("ellipse({c}, {a}, {b})"), bbox, move |p| {
                    let (x, y) = ((p.re - c.re) / a, (p.im - c.im) / b);
                    x * x + y * y < 1.0
                }))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSpec {
    pub family: String,
    /// Parameter of the family: the constant value, `alpha` or `beta`.
    pub parameter: Option<f64>,
    pub expression: Option<String>,
    pub scale: f64,
}

impl WeightSpec {
    pub fn build(&self) -> bergman::Result<Weight> {
        let w = match self.family.as_str() {
            "constant" => Weight::constant(self.parameter.unwrap_or(1.0))?,
            "radial_power" => Weight::radial_power(self.parameter.unwrap_or(0.0))?,
            "moebius_power" => Weight::moebius_power(self.parameter.unwrap_or(0.0))?,
            "expression" => Weight::expression(expression(self.expression.as_deref().unwrap_or_default()).unwrap()),
            other => unreachable!("validated family {other}"),
        };
        if self.scale == 1.0 {
            Ok(w)
        } else {
            w.scaled(self.scale)
        }
    }
}

fn expression(name: &str) -> Option<BuiltinExpression> {
    [BuiltinExpression::Gaussian, BuiltinExpression::TiltedLinear, BuiltinExpression::QuarticCusp]
        .into_iter()
        .find(|e| e.name() == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vary {
    Domain,
    Weight,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceConfig {
    pub schedule: InsetSchedule,
    pub vary: Vary,
    pub assert_convergence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumericConfig {
    #[serde(rename = "M")]
    pub degree: usize,
    pub resolution: usize,
    pub order: usize,
    pub n_max: usize,
    pub tolerance: f64,
    pub margin: f64,
    pub grid_count: usize,
    pub fiber_degree: usize,
    pub exponent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub domain: DomainSpec,
    pub weight: WeightSpec,
    pub anchors: Vec<[f64; 2]>,
    pub sequence: Option<SequenceConfig>,
    pub numeric: NumericConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn anchor_points(&self) -> Vec<ComplexPoint> {
        self.anchors.iter().map(|&a| point(a)).collect()
    }
}

pub fn point([x, y]: [f64; 2]) -> ComplexPoint {
    Complex64::new(x, y)
}

// Raw shapes mirror the file; enum-like fields stay strings so that errors
// can name the offending field.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: String,
    domain: RawDomain,
    #[serde(default)]
    weight: RawWeight,
    anchors: Option<Vec<[f64; 2]>>,
    sequence: Option<RawSequence>,
    #[serde(default)]
    numeric: RawNumeric,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    kind: String,
    center: Option<[f64; 2]>,
    radius: Option<f64>,
    inner: Option<f64>,
    outer: Option<f64>,
    semi_axes: Option<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeight {
    family: Option<String>,
    value: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    name: Option<String>,
    scale: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSequence {
    schedule: Option<String>,
    ratio: Option<f64>,
    vary: Option<String>,
    assert_convergence: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNumeric {
    #[serde(rename = "M")]
    degree: Option<i64>,
    resolution: Option<i64>,
    order: Option<i64>,
    n_max: Option<i64>,
    tolerance: Option<f64>,
    margin: Option<f64>,
    grid_count: Option<i64>,
    fiber_degree: Option<i64>,
    exponent: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    directory: Option<PathBuf>,
    formats: Option<Vec<String>>,
}

fn integer(field: &str, value: Option<i64>, default: i64, lo: i64, hi: i64) -> Result<usize, ParseError> {
    let v = value.unwrap_or(default);
    if v < lo || v > hi {
        return Err(field_error(field, format!("{v} outside the range [{lo}, {hi}]")));
    }
    Ok(v as usize)
}

fn positive(field: &str, value: Option<f64>, default: f64) -> Result<f64, ParseError> {
    let v = value.unwrap_or(default);
    if !(v.is_finite() && v > 0.0) {
        return Err(field_error(field, format!("{v} must be a positive finite number")));
    }
    Ok(v)
}

fn required<T>(field: &str, value: Option<T>) -> Result<T, ParseError> {
    value.ok_or_else(|| field_error(field, "missing"))
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ParseError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ParseError::Syntax {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;

    let experiment = Experiment::ALL.into_iter().find(|e| e.name() == raw.experiment).ok_or_else(|| {
        field_error(
            "experiment",
            format!(
                "unknown experiment `{}`, expected one of {}",
                raw.experiment,
                Experiment::ALL.map(|e| e.name()).join(", ")
            ),
        )
    })?;

    let d = &raw.domain;
    let center = d.center.unwrap_or([0.0, 0.0]);
    let domain = match d.kind.as_str() {
        "disc" => DomainSpec::Disc { center, radius: positive("domain.radius", d.radius, 1.0)? },
        "annulus" => {
            let inner = positive("domain.inner", Some(required("domain.inner", d.inner)?), 1.0)?;
            let outer = positive("domain.outer", Some(required("domain.outer", d.outer)?), 1.0)?;
            if inner >= outer {
                return Err(field_error("domain.inner", format!("{inner} must be below domain.outer = {outer}")));
            }
            DomainSpec::Annulus { center, inner, outer }
        }
        "ellipse" => {
            let [a, b] = required("domain.semi_axes", d.semi_axes)?;
            positive("domain.semi_axes", Some(a), 1.0)?;
            positive("domain.semi_axes", Some(b), 1.0)?;
            DomainSpec::Ellipse { center, semi_axes: [a, b] }
        }
        other => {
            return Err(field_error("domain.kind", format!("unknown domain `{other}`, expected disc, annulus or ellipse")))
        }
    };

    let w = &raw.weight;
    let family = w.family.clone().unwrap_or_else(|| "constant".to_string());
    let (parameter, expr) = match family.as_str() {
        "constant" => (Some(positive("weight.value", w.value, 1.0)?), None),
        "radial_power" => (Some(w.alpha.unwrap_or(0.0)), None),
        "moebius_power" => (Some(w.beta.unwrap_or(0.0)), None),
        "expression" => {
            let name = required("weight.name", w.name.clone())?;
            if expression(&name).is_none() {
                return Err(field_error(
                    "weight.name",
                    format!("unknown expression `{name}`, expected gaussian, tilted_linear or quartic_cusp"),
                ));
            }
            (None, Some(name))
        }
        other => {
            return Err(field_error(
                "weight.family",
                format!("unknown weight family `{other}`, expected constant, radial_power, moebius_power or expression"),
            ))
        }
    };
    for (field, value, allowed) in [
        ("weight.value", w.value, family == "constant"),
        ("weight.alpha", w.alpha, family == "radial_power"),
        ("weight.beta", w.beta, family == "moebius_power"),
        ("weight.name", w.name.as_ref().map(|_| 0.0), family == "expression"),
    ] {
        if value.is_some() && !allowed {
            return Err(field_error(field, format!("not a parameter of the `{family}` family")));
        }
    }
    let weight = WeightSpec { family, parameter, expression: expr, scale: positive("weight.scale", w.scale, 1.0)? };
    weight.build().map_err(|e| field_error("weight", e.to_string()))?;
    domain.build().map_err(|e| field_error("domain", e.to_string()))?;

    let n = &raw.numeric;
    let numeric = NumericConfig {
        degree: integer("numeric.M", n.degree, 16, 1, 64)?,
        resolution: integer("numeric.resolution", n.resolution, 128, 8, 1024)?,
        order: integer("numeric.order", n.order, 2, 1, 16)?,
        n_max: integer("numeric.n_max", n.n_max, 8, 1, 64)?,
        tolerance: positive("numeric.tolerance", n.tolerance, 1e-3)?,
        margin: positive("numeric.margin", n.margin, 0.2)?,
        grid_count: integer("numeric.grid_count", n.grid_count, 48, 1, 4096)?,
        fiber_degree: integer("numeric.fiber_degree", n.fiber_degree, 2, 0, 64)?,
        exponent: positive("numeric.exponent", n.exponent, 1.0)?,
    };

    let sequence = match (&raw.sequence, experiment.is_sequence()) {
        (None, true) => return Err(field_error("sequence", "required by this experiment")),
        (Some(_), false) => return Err(field_error("sequence", format!("not used by {experiment}"))),
        (None, false) => None,
        (Some(s), true) => {
            let schedule = match s.schedule.as_deref().unwrap_or("harmonic") {
                "identity" => InsetSchedule::Identity,
                "harmonic" => InsetSchedule::Harmonic,
                "geometric" => {
                    let ratio = required("sequence.ratio", s.ratio)?;
                    if !(ratio > 0.0 && ratio < 1.0) {
                        return Err(field_error("sequence.ratio", format!("{ratio} must lie in (0, 1)")));
                    }
                    InsetSchedule::Geometric { ratio }
                }
                other => {
                    return Err(field_error(
                        "sequence.schedule",
                        format!("unknown schedule `{other}`, expected identity, harmonic or geometric"),
                    ))
                }
            };
            if s.ratio.is_some() && !matches!(schedule, InsetSchedule::Geometric { .. }) {
                return Err(field_error("sequence.ratio", "only used by the geometric schedule"));
            }
            let vary = match s.vary.as_deref().unwrap_or("domain") {
                "domain" => Vary::Domain,
                "weight" => Vary::Weight,
                other => return Err(field_error("sequence.vary", format!("unknown `{other}`, expected domain or weight"))),
            };
            if vary == Vary::Domain && !matches!(domain, DomainSpec::Disc { .. }) {
                return Err(field_error("sequence.vary", "varying the domain needs a disc limit domain"));
            }
            Some(SequenceConfig { schedule, vary, assert_convergence: s.assert_convergence.unwrap_or(false) })
        }
    };

    let anchors = raw.anchors.unwrap_or_else(|| vec![[0.0, 0.0]]);
    if anchors.is_empty() {
        return Err(field_error("anchors", "at least one anchor is required"));
    }

    let formats = match &raw.output.formats {
        None => vec![Format::Csv, Format::Json],
        Some(list) => list
            .iter()
            .map(|f| match f.as_str() {
                "csv" => Ok(Format::Csv),
                "json" => Ok(Format::Json),
                other => Err(field_error("output.formats", format!("unknown format `{other}`, expected csv or json"))),
            })
            .collect::<Result<Vec<_>, _>>()?,
    };

    Ok(ExperimentConfig {
        experiment,
        domain,
        weight,
        anchors,
        sequence,
        numeric,
        output: OutputConfig { directory: raw.output.directory.unwrap_or_else(|| PathBuf::from("out")), formats },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment = "kernel_table"

[domain]
kind = "disc"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.experiment, Experiment::KernelTable);
        assert_eq!(cfg.domain, DomainSpec::Disc { center: [0.0, 0.0], radius: 1.0 });
        assert_eq!(cfg.weight.family, "constant");
        assert_eq!(cfg.numeric.degree, 16);
        assert_eq!(cfg.numeric.resolution, 128);
        assert_eq!(cfg.output.formats, vec![Format::Csv, Format::Json]);
        assert!(cfg.sequence.is_none());
    }

    #[test]
    fn degree_out_of_range_names_field() {
        let err = parse_config(&format!("{MINIMAL}\n[numeric]\nM = 0\n")).unwrap_err();
        assert!(matches!(&err, ParseError::Field { field, .. } if field == "numeric.M"), "{err}");
        assert!(err.to_string().contains("[1, 64]"));
        let err = parse_config(&format!("{MINIMAL}\n[numeric]\nresolution = 2048\n")).unwrap_err();
        assert!(err.to_string().starts_with("numeric.resolution"));
    }

    #[test]
    fn unknown_weight_family_names_field() {
        let err = parse_config(&format!("{MINIMAL}\n[weight]\nfamily = \"laplace\"\n")).unwrap_err();
        assert!(matches!(&err, ParseError::Field { field, .. } if field == "weight.family"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_line() {
        let err = parse_config("experiment = \"kernel_table\"\n[domain]\nkind = disc\n").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { line: 3, .. }), "{err}");
        let err = parse_config(&format!("{MINIMAL}\n[numeric]\nwidth = 3\n")).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { .. }), "{err}");
    }

    #[test]
    fn sequences_are_validated() {
        let base = "experiment = \"increasing_run\"\n[domain]\nkind = \"disc\"\n";
        assert!(matches!(parse_config(base), Err(ParseError::Field { field, .. }) if field == "sequence"));
        let cfg = parse_config(&format!("{base}[sequence]\nschedule = \"geometric\"\nratio = 0.5\n")).unwrap();
        assert_eq!(cfg.sequence.unwrap().schedule, InsetSchedule::Geometric { ratio: 0.5 });
        let err = parse_config(&format!("{base}[sequence]\nschedule = \"geometric\"\nratio = 1.5\n")).unwrap_err();
        assert!(err.to_string().starts_with("sequence.ratio"));
        let annulus = "experiment = \"outside_run\"\n[domain]\nkind = \"annulus\"\ninner = 0.5\nouter = 1.0\n[sequence]\n";
        assert!(parse_config(annulus).unwrap_err().to_string().starts_with("sequence.vary"));
    }

    #[test]
    fn weight_parameters_are_checked() {
        let err = parse_config(&format!("{MINIMAL}\n[weight]\nfamily = \"radial_power\"\nalpha = -2.0\n")).unwrap_err();
        assert!(err.to_string().starts_with("weight"), "{err}");
        let err = parse_config(&format!("{MINIMAL}\n[weight]\nfamily = \"radial_power\"\nbeta = 1.0\n")).unwrap_err();
        assert!(err.to_string().starts_with("weight.beta"), "{err}");
        let err = parse_config(&format!("{MINIMAL}\n[weight]\nfamily = \"expression\"\nname = \"sinc\"\n")).unwrap_err();
        assert!(err.to_string().starts_with("weight.name"), "{err}");
    }
}
