//! Positive weights on planar domains, the local integrability test for
//! admissibility, and the piecewise extension of weights along a sequence of
//! domains.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_quadrature, ComplexPoint, Domain, QuadratureRule};

/// Named weight expressions available without a runtime parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinExpression {
    /// `exp(-|z|^2)`
    Gaussian,
    /// `2 + Re z`, positive on `Re z > -2`
    TiltedLinear,
    /// `|z|^4 / (1 + |z|^2)`; its reciprocal blows up like `|z|^-4` at the origin
    QuarticCusp,
}

impl BuiltinExpression {
    fn value(self, p: ComplexPoint) -> f64 {
        let r2 = p.norm_sqr();
        match self {
            BuiltinExpression::Gaussian => (-r2).exp(),
            BuiltinExpression::TiltedLinear => 2.0 + p.re,
            BuiltinExpression::QuarticCusp => r2 * r2 / (1.0 + r2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BuiltinExpression::Gaussian => "gaussian",
            BuiltinExpression::TiltedLinear => "tilted_linear",
            BuiltinExpression::QuarticCusp => "quartic_cusp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightFamily {
    Constant { value: f64 },
    /// `|z|^(2 alpha)`
    RadialPower { alpha: f64 },
    /// `(1 - |z|^2)^beta`, defined on the unit disc
    MoebiusPower { beta: f64 },
    Expression { name: BuiltinExpression },
}

fn family_label(family: WeightFamily, scale: f64) -> String {
    let base = match family {
        WeightFamily::Constant { value } => return format!("constant({})", value * scale),
        WeightFamily::RadialPower { alpha } => format!("|z|^(2*{alpha})"),
        WeightFamily::MoebiusPower { beta } => format!("(1-|z|^2)^{beta}"),
        WeightFamily::Expression { name } => name.name().to_string(),
    };
    if scale == 1.0 {
        base
    } else {
        format!("{scale}*{base}")
    }
}

/// `scale * family(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weight {
    family: WeightFamily,
    scale: f64,
    label: String,
}

impl Weight {
    pub fn new(family: WeightFamily) -> Result<Self> {
        match family {
            WeightFamily::Constant { value } if !(value.is_finite() && value > 0.0) => {
                return Err(Error::InvalidWeight(format!("constant {value} must be positive")));
            }
            WeightFamily::RadialPower { alpha } if !(alpha.is_finite() && alpha > -1.0) => {
                return Err(Error::InvalidWeight(format!("radial power alpha {alpha} must exceed -1")));
            }
            WeightFamily::MoebiusPower { beta } if !(beta.is_finite() && beta > -1.0) => {
                return Err(Error::InvalidWeight(format!("moebius power beta {beta} must exceed -1")));
            }
            _ => {}
        }
        Ok(Self { family, scale: 1.0, label: family_label(family, 1.0) })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(WeightFamily::Constant { value })
    }

    pub fn unit() -> Self {
        Self::constant(1.0).expect("unit weight is valid")
    }

    pub fn radial_power(alpha: f64) -> Result<Self> {
        Self::new(WeightFamily::RadialPower { alpha })
    }

    pub fn moebius_power(beta: f64) -> Result<Self> {
        Self::new(WeightFamily::MoebiusPower { beta })
    }

    pub fn expression(name: BuiltinExpression) -> Self {
        Self::new(WeightFamily::Expression { name }).expect("builtin expressions are valid")
    }

    /// The weight multiplied by a positive constant.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidWeight(format!("scale factor {factor} must be positive")));
        }
        let scale = self.scale * factor;
        Ok(Self { family: self.family, scale, label: family_label(self.family, scale) })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn family(&self) -> WeightFamily {
        self.family
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Overall constant multiplier, folding a constant family into the scale.
    pub fn multiplier(&self) -> f64 {
        match self.family {
            WeightFamily::Constant { value } => value * self.scale,
            _ => self.scale,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Radial about the origin.
    pub fn is_radial(&self) -> bool {
        matches!(
            self.family,
            WeightFamily::Constant { .. }
                | WeightFamily::RadialPower { .. }
                | WeightFamily::MoebiusPower { .. }
                | WeightFamily::Expression { name: BuiltinExpression::Gaussian }
                | WeightFamily::Expression { name: BuiltinExpression::QuarticCusp }
        )
    }

    /// Whether the weight is essentially bounded on any bounded set where it
    /// is defined.
    pub fn is_bounded(&self) -> bool {
        match self.family {
            WeightFamily::RadialPower { alpha } => alpha >= 0.0,
            WeightFamily::MoebiusPower { beta } => beta >= 0.0,
            WeightFamily::Constant { .. } | WeightFamily::Expression { .. } => true,
        }
    }

    /// `mu(p)`, failing where the weight is not finite and positive.
    pub fn evaluate(&self, p: ComplexPoint) -> Result<f64> {
        let r2 = p.norm_sqr();
        let raw = match self.family {
            WeightFamily::Constant { value } => value,
            WeightFamily::RadialPower { alpha } => r2.powf(alpha),
            WeightFamily::MoebiusPower { beta } => {
                if r2 >= 1.0 {
                    return Err(self.mismatch(p));
                }
                (1.0 - r2).powf(beta)
            }
            WeightFamily::Expression { name } => name.value(p),
        };
        let v = self.scale * raw;
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(self.mismatch(p))
        }
    }

    fn mismatch(&self, p: ComplexPoint) -> Error {
        Error::DomainMismatch { point: p, context: format!("the positivity set of weight {}", self.label) }
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub exponent: f64,
    /// Distance from the boundary that defines the compact set.
    pub margin: f64,
    pub integral_estimate: f64,
    pub refined_estimate: f64,
    pub relative_change: f64,
    pub verdict: Verdict,
}

fn inverse_power_integral(
    w: &Weight,
    d: &Domain,
    a: f64,
    margin: f64,
    rule: &QuadratureRule,
) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut any = false;
    for (&p, &q) in rule.nodes().iter().zip(rule.weights()) {
        if d.has_clearance(p, margin) {
            any = true;
            total += w.evaluate(p)?.powf(-a) * q;
        }
    }
    Ok(any.then_some(total))
}

/// Numerical check of local integrability of `mu^-a` on a compact subset.
///
/// The compact set keeps the nodes at distance at least one cell width from
/// the boundary. The integral is re-estimated on a rule of twice the
/// resolution over the same compact set; a finite estimate that moves by less
/// than 10% passes. Divergence cannot be certified numerically, so the only
/// other outcome is `Inconclusive`.
pub fn admissibility_check(
    w: &Weight,
    d: &Domain,
    a: f64,
    rule: &QuadratureRule,
) -> Result<AdmissibilityReport> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::InvalidParameter(format!("admissibility exponent {a} must be positive")));
    }
    let margin = d.bounding_box().width().max(d.bounding_box().height()) / rule.resolution() as f64;
    let empty = || Error::EmptyDomain(format!("{} at margin {margin}", d.label()));
    let coarse = inverse_power_integral(w, d, a, margin, rule)?.ok_or_else(empty)?;
    let fine_rule = build_quadrature(d, 2 * rule.resolution(), rule.order())?;
    let fine = inverse_power_integral(w, d, a, margin, &fine_rule)?.ok_or_else(empty)?;

    let relative_change = if fine == 0.0 { f64::INFINITY } else { (fine - coarse).abs() / fine.abs() };
    let verdict = if coarse.is_finite() && fine.is_finite() && relative_change < 0.1 {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    };
    Ok(AdmissibilityReport {
        exponent: a,
        margin,
        integral_estimate: coarse,
        refined_estimate: fine,
        relative_change,
        verdict,
    })
}

#[derive(Debug, Clone)]
pub enum ExtensionMode {
    /// On `D_k` use `mu_k`, elsewhere in the limit domain use the limit weight.
    Inside { limit_domain: Domain, limit_weight: Weight },
    /// On `D_k` use `mu_k`, on earlier leftovers fall back to the previous
    /// extension.
    Outside,
}

/// Weights `mu_k` on domains `D_k`, extended beyond their natural domains.
#[derive(Debug, Clone)]
pub struct WeightSequenceExtension {
    members: Vec<(Domain, Weight)>,
    mode: ExtensionMode,
}

impl WeightSequenceExtension {
    pub fn new(members: Vec<(Domain, Weight)>, mode: ExtensionMode) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidParameter("weight extension needs at least one domain".into()));
        }
        Ok(Self { members, mode })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn mode(&self) -> &ExtensionMode {
        &self.mode
    }

    /// Extended weight of step `k` (1-based) at `p`.
    pub fn extend(&self, p: ComplexPoint, k: usize) -> Result<f64> {
        if k == 0 || k > self.members.len() {
            return Err(Error::InvalidParameter(format!(
                "extension index {k} outside 1..={}",
                self.members.len()
            )));
        }
        let (d_k, mu_k) = &self.members[k - 1];
        if d_k.contains(p) {
            return mu_k.evaluate(p);
        }
        match &self.mode {
            ExtensionMode::Inside { limit_domain, limit_weight } => {
                if limit_domain.contains(p) {
                    limit_weight.evaluate(p)
                } else {
                    Err(Error::DomainMismatch {
                        point: p,
                        context: format!("D_{k} and the limit domain {}", limit_domain.label()),
                    })
                }
            }
            ExtensionMode::Outside => self.members[..k - 1]
                .iter()
                .rev()
                .find(|(d, _)| d.contains(p))
                .map(|(_, mu)| mu.evaluate(p))
                .unwrap_or_else(|| {
                    Err(Error::DomainMismatch { point: p, context: format!("D_1 through D_{k}") })
                }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> ComplexPoint {
        Complex64::new(re, im)
    }

    #[test]
    fn family_values() {
        assert_eq!(Weight::unit().evaluate(c(0.3, 0.4)).unwrap(), 1.0);
        assert!((Weight::radial_power(1.0).unwrap().evaluate(c(0.5, 0.0)).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(Weight::moebius_power(2.0).unwrap().evaluate(c(0.0, 0.0)).unwrap(), 1.0);
        let w = Weight::radial_power(1.0).unwrap().scaled(3.0).unwrap();
        assert!((w.evaluate(c(0.5, 0.0)).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn parameter_ranges() {
        assert!(Weight::constant(0.0).is_err());
        assert!(Weight::radial_power(-1.0).is_err());
        assert!(Weight::moebius_power(-1.5).is_err());
        assert!(Weight::unit().scaled(-2.0).is_err());
    }

    #[test]
    fn evaluation_outside_positivity_set() {
        let m = Weight::moebius_power(1.0).unwrap();
        assert!(matches!(m.evaluate(c(1.0, 0.0)), Err(Error::DomainMismatch { .. })));
        let r = Weight::radial_power(0.5).unwrap();
        assert!(matches!(r.evaluate(c(0.0, 0.0)), Err(Error::DomainMismatch { .. })));
    }

    #[test]
    fn positive_at_every_node() {
        let d = Domain::unit_disc();
        let rule = build_quadrature(&d, 32, 2).unwrap();
        let weights = [
            Weight::unit(),
            Weight::constant(0.1).unwrap(),
            Weight::radial_power(1.5).unwrap(),
            Weight::radial_power(-0.5).unwrap(),
            Weight::moebius_power(3.0).unwrap(),
            Weight::moebius_power(-0.5).unwrap(),
            Weight::expression(BuiltinExpression::Gaussian),
            Weight::expression(BuiltinExpression::TiltedLinear),
            Weight::expression(BuiltinExpression::QuarticCusp),
        ];
        for w in &weights {
            assert!(rule.nodes().iter().all(|&p| w.evaluate(p).unwrap() > 0.0), "{w}");
        }
    }

    /// `2 pi * int_0^rho r^(1 - 2 a alpha) dr`, or `None` when divergent.
    fn radial_inverse_integral(alpha: f64, a: f64, rho: f64) -> Option<f64> {
        let e = 2.0 - 2.0 * a * alpha;
        (e > 0.0).then(|| 2.0 * PI * rho.powf(e) / e)
    }

    #[test]
    fn admissibility_of_constant_weight() {
        let d = Domain::unit_disc();
        let rule = build_quadrature(&d, 64, 2).unwrap();
        let rep = admissibility_check(&Weight::unit(), &d, 1.0, &rule).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        let rho = 1.0 - rep.margin;
        assert!((rep.integral_estimate - PI * rho * rho).abs() < 2e-2, "{rep:?}");
        assert!((rep.integral_estimate - PI).abs() < 0.2);
    }

    #[test]
    fn admissibility_of_radial_power() {
        let d = Domain::unit_disc();
        let rule = build_quadrature(&d, 64, 2).unwrap();
        let rep = admissibility_check(&Weight::radial_power(0.5).unwrap(), &d, 1.0, &rule).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        let exact = radial_inverse_integral(0.5, 1.0, 1.0 - rep.margin).unwrap();
        assert!((rep.integral_estimate - exact).abs() / exact < 2e-2, "{rep:?} vs {exact}");
    }

    #[test]
    fn admissibility_of_cusp_is_inconclusive() {
        assert!(radial_inverse_integral(2.0, 1.0, 1.0).is_none());
        let d = Domain::unit_disc();
        let rule = build_quadrature(&d, 64, 2).unwrap();
        let w = Weight::expression(BuiltinExpression::QuarticCusp);
        let rep = admissibility_check(&w, &d, 1.0, &rule).unwrap();
        assert_eq!(rep.verdict, Verdict::Inconclusive, "{rep:?}");
    }

    #[test]
    fn admissibility_sanity_on_unit_disc() {
        let d = Domain::unit_disc();
        let rule = build_quadrature(&d, 64, 2).unwrap();
        for w in [Weight::unit(), Weight::moebius_power(0.0).unwrap(), Weight::moebius_power(2.0).unwrap()] {
            let rep = admissibility_check(&w, &d, 1.0, &rule).unwrap();
            assert_eq!(rep.verdict, Verdict::Pass, "{w}: {rep:?}");
        }
        assert!(admissibility_check(&Weight::unit(), &d, 0.0, &rule).is_err());
    }

    fn nested() -> WeightSequenceExtension {
        let members = (1..=3)
            .map(|i| {
                let d = Domain::disc(c(0.0, 0.0), 1.0 - 0.25 * (i - 1) as f64).unwrap();
                (d, Weight::constant(i as f64).unwrap())
            })
            .collect();
        WeightSequenceExtension::new(members, ExtensionMode::Outside).unwrap()
    }

    #[test]
    fn outside_extension_precedence() {
        let seq = nested();
        assert_eq!(seq.extend(c(0.1, 0.0), 3).unwrap(), 3.0);
        assert_eq!(seq.extend(c(0.6, 0.0), 3).unwrap(), 2.0);
        assert_eq!(seq.extend(c(0.9, 0.0), 3).unwrap(), 1.0);
        assert!(matches!(seq.extend(c(1.2, 0.0), 3), Err(Error::DomainMismatch { .. })));
        assert!(seq.extend(c(0.0, 0.0), 4).is_err());
    }

    #[test]
    fn extension_consistency_and_stability() {
        let seq = nested();
        let probes: Vec<ComplexPoint> = (0..40).map(|i| c(-0.99 + 0.05 * i as f64, 0.01)).collect();
        for k in 1..=3 {
            let (d_k, mu_k) = &seq.members[k - 1];
            for &p in &probes {
                if d_k.contains(p) {
                    assert_eq!(seq.extend(p, k).unwrap(), mu_k.evaluate(p).unwrap());
                } else if k > 1 && seq.members[..k - 1].iter().any(|(d, _)| d.contains(p)) {
                    assert_eq!(seq.extend(p, k).unwrap(), seq.extend(p, k - 1).unwrap());
                }
            }
        }
    }

    #[test]
    fn inside_extension_falls_back_to_limit_weight() {
        let limit = Domain::unit_disc();
        let members = vec![(Domain::disc(c(0.0, 0.0), 0.5).unwrap(), Weight::constant(0.5).unwrap())];
        let mode = ExtensionMode::Inside { limit_domain: limit, limit_weight: Weight::unit() };
        let seq = WeightSequenceExtension::new(members, mode).unwrap();
        assert_eq!(seq.extend(c(0.2, 0.0), 1).unwrap(), 0.5);
        assert_eq!(seq.extend(c(0.7, 0.0), 1).unwrap(), 1.0);
        assert!(seq.extend(c(1.5, 0.0), 1).is_err());
    }
}
