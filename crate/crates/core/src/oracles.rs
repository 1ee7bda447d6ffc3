//! Closed-form weighted Bergman kernels used as ground truth.
//!
//! For a radial weight on a centred disc the monomials are orthogonal and
//! `K(z, t) = sum_k (z conj(t))^k / ||z^k||^2`. The series are summed
//! directly; the closed forms only appear in tests.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::geometry::{ComplexPoint, Domain, DomainKind, QuadratureRule};
use crate::gram::{GramSystem, MonomialBasis};
use crate::weights::{Weight, WeightFamily};

const TAIL_TOLERANCE: f64 = 1e-14;
const MAX_TERMS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleKernel {
    DiscUnweighted { radius: f64 },
    /// Weight `|z|^(2 alpha)` on the disc of the given radius.
    DiscRadialPower { radius: f64, alpha: f64 },
    /// Weight `(1 - |z|^2)^beta` on the unit disc.
    DiscMoebiusPower { beta: f64 },
    /// Kernel of `factor * mu`, which is the base kernel divided by `factor`.
    WeightScaled { factor: f64, base: Box<OracleKernel> },
    /// Kernel of a product domain with product weight.
    Product { factors: Vec<OracleKernel> },
}

impl OracleKernel {
    /// Oracle for a disc centred at the origin with a constant, radial-power or
    /// (unit disc only) Moebius-power weight.
    pub fn for_disc(d: &Domain, w: &Weight) -> Option<Self> {
        let DomainKind::Disc { center, radius } = d.kind() else {
            return None;
        };
        if *center != Complex64::new(0.0, 0.0) {
            return None;
        }
        let radius = *radius;
        let base = match w.family() {
            WeightFamily::Constant { .. } => OracleKernel::DiscUnweighted { radius },
            WeightFamily::RadialPower { alpha } => OracleKernel::DiscRadialPower { radius, alpha },
            WeightFamily::MoebiusPower { beta } if radius == 1.0 => OracleKernel::DiscMoebiusPower { beta },
            _ => return None,
        };
        let factor = w.multiplier();
        Some(if factor == 1.0 {
            base
        } else {
            OracleKernel::WeightScaled { factor, base: Box::new(base) }
        })
    }

    fn radius(&self) -> f64 {
        match self {
            OracleKernel::DiscUnweighted { radius } | OracleKernel::DiscRadialPower { radius, .. } => *radius,
            OracleKernel::DiscMoebiusPower { .. } => 1.0,
            OracleKernel::WeightScaled { base, .. } => base.radius(),
            OracleKernel::Product { .. } => f64::NAN,
        }
    }

    /// Number of complex variables.
    pub fn dimension(&self) -> usize {
        match self {
            OracleKernel::Product { factors } => factors.iter().map(|f| f.dimension()).sum(),
            _ => 1,
        }
    }

    /// `||z^k||^2` in the weighted space. For products this is the norm of
    /// `z_1^k ... z_n^k`.
    pub fn norm_sq(&self, k: usize) -> f64 {
        let kf = k as f64;
        match self {
            OracleKernel::DiscUnweighted { radius } => PI * radius.powf(2.0 * kf + 2.0) / (kf + 1.0),
            OracleKernel::DiscRadialPower { radius, alpha } => {
                let e = kf + alpha + 1.0;
                PI * radius.powf(2.0 * e) / e
            }
            OracleKernel::DiscMoebiusPower { beta } => PI * ln_beta(kf + 1.0, beta + 1.0).exp(),
            OracleKernel::WeightScaled { factor, base } => factor * base.norm_sq(k),
            OracleKernel::Product { factors } => factors.iter().map(|f| f.norm_sq(k)).product(),
        }
    }

    /// `K = prefactor * sum_k b_k y^k` with `y = z conj(t) / R^2`.
    fn series(&self) -> (f64, Box<dyn Fn(usize) -> f64 + '_>) {
        match self {
            OracleKernel::DiscUnweighted { radius } => {
                (1.0 / (PI * radius * radius), Box::new(|k| k as f64 + 1.0))
            }
            OracleKernel::DiscRadialPower { radius, alpha } => (
                1.0 / (PI * radius.powf(2.0 * alpha + 2.0)),
                Box::new(move |k| k as f64 + alpha + 1.0),
            ),
            OracleKernel::DiscMoebiusPower { beta } => {
                (1.0 / PI, Box::new(move |k| (-ln_beta(k as f64 + 1.0, beta + 1.0)).exp()))
            }
            OracleKernel::WeightScaled { .. } | OracleKernel::Product { .. } => {
                unreachable!("series is only defined for single discs")
            }
        }
    }

    /// Kernel value for a single planar disc.
    pub fn eval(&self, z: ComplexPoint, t: ComplexPoint) -> Result<Complex64> {
        match self {
            OracleKernel::Product { .. } => self.eval_product(&[z], &[t]),
            OracleKernel::WeightScaled { factor, base } => Ok(base.eval(z, t)? / factor),
            _ => {
                let radius = self.radius();
                for p in [z, t] {
                    if !(p.norm() < radius) {
                        return Err(Error::OutOfDomain { point: p, radius });
                    }
                }
                let y = z * t.conj() / (radius * radius);
                let (prefactor, coeff) = self.series();
                Ok(prefactor * sum_series(&*coeff, y))
            }
        }
    }

    /// Kernel value on a product domain, one coordinate per factor.
    pub fn eval_product(&self, z: &[ComplexPoint], t: &[ComplexPoint]) -> Result<Complex64> {
        let OracleKernel::Product { factors } = self else {
            return match (z, t) {
                ([z], [t]) => self.eval(*z, *t),
                _ => Err(Error::InvalidParameter("planar oracle takes one coordinate".into())),
            };
        };
        if z.len() != factors.len() || t.len() != factors.len() {
            return Err(Error::InvalidParameter(format!(
                "product oracle with {} factors got {} and {} coordinates",
                factors.len(),
                z.len(),
                t.len()
            )));
        }
        factors
            .iter()
            .zip(z.iter().zip(t))
            .try_fold(Complex64::new(1.0, 0.0), |acc, (f, (&zi, &ti))| Ok(acc * f.eval(zi, ti)?))
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn sum_series(coeff: &dyn Fn(usize) -> f64, y: Complex64) -> Complex64 {
    let mut sum = Complex64::new(coeff(0), 0.0);
    if y == Complex64::new(0.0, 0.0) {
        return sum;
    }
    let mut power = Complex64::new(1.0, 0.0);
    let mut previous = sum.norm();
    for k in 1..MAX_TERMS {
        power *= y;
        let term = power * coeff(k);
        sum += term;
        let size = term.norm();
        if size <= previous && size <= TAIL_TOLERANCE * sum.norm() {
            break;
        }
        previous = size;
    }
    sum
}

/// Numerical kernel of a product of planar domains with product weight,
/// assembled on the tensor product of the factor rules in the tensor
/// monomial basis.
#[derive(Debug, Clone)]
pub struct ProductKernelModel {
    bases: Vec<MonomialBasis>,
    factor_domains: Vec<Domain>,
    gram: DMatrix<Complex64>,
    cholesky: Cholesky<Complex64, Dyn>,
}

impl ProductKernelModel {
    pub fn assemble(factors: &[(Domain, Weight, Arc<QuadratureRule>)], degree: usize) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidParameter("product needs at least one factor".into()));
        }
        // Factor systems validate the rules and evaluate the weights.
        let systems = factors
            .iter()
            .map(|(d, w, r)| GramSystem::assemble(d, w, r.clone(), degree))
            .collect::<Result<Vec<_>>>()?;
        let bases: Vec<MonomialBasis> = systems.iter().map(|s| *s.basis()).collect();
        let values: Vec<Vec<DVector<Complex64>>> = systems
            .iter()
            .map(|s| s.rule().nodes().iter().map(|&z| s.basis().values(z)).collect())
            .collect();
        let measures: Vec<&[f64]> = systems.iter().map(|s| s.measure()).collect();
        let counts: Vec<usize> = values.iter().map(|v| v.len()).collect();
        let total: usize = counts.iter().product();
        let dim: usize = bases.iter().map(|b| b.dim()).product();

        let chunk = 4096;
        let partials: Vec<Vec<Complex64>> = (0..total.div_ceil(chunk))
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![Complex64::new(0.0, 0.0); dim * dim];
                for flat in c * chunk..((c + 1) * chunk).min(total) {
                    let mut rem = flat;
                    let mut v = DVector::from_element(1, Complex64::new(1.0, 0.0));
                    let mut m = 1.0;
                    for f in (0..counts.len()).rev() {
                        let i = rem % counts[f];
                        rem /= counts[f];
                        v = values[f][i].kronecker(&v);
                        m *= measures[f][i];
                    }
                    for j in 0..dim {
                        let vj = v[j] * m;
                        for k in j..dim {
                            acc[j * dim + k] += vj * v[k].conj();
                        }
                    }
                }
                acc
            })
            .collect();
        let mut sum = vec![Complex64::new(0.0, 0.0); dim * dim];
        for p in &partials {
            for (s, x) in sum.iter_mut().zip(p) {
                *s += x;
            }
        }
        let gram = DMatrix::from_fn(dim, dim, |j, k| match j.cmp(&k) {
            std::cmp::Ordering::Equal => Complex64::new(sum[j * dim + j].re, 0.0),
            std::cmp::Ordering::Less => sum[j * dim + k],
            std::cmp::Ordering::Greater => sum[k * dim + j].conj(),
        });
        let cholesky = Cholesky::new(gram.clone()).ok_or(Error::SingularGram { ridge: 0.0 })?;
        Ok(Self {
            bases,
            factor_domains: factors.iter().map(|(d, _, _)| d.clone()).collect(),
            gram,
            cholesky,
        })
    }

    pub fn gram(&self) -> &DMatrix<Complex64> {
        &self.gram
    }

    fn values(&self, z: &[ComplexPoint]) -> Result<DVector<Complex64>> {
        if z.len() != self.bases.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} coordinates, got {}",
                self.bases.len(),
                z.len()
            )));
        }
        let mut v = DVector::from_element(1, Complex64::new(1.0, 0.0));
        for ((b, d), &zi) in self.bases.iter().zip(&self.factor_domains).zip(z) {
            if !d.contains(zi) {
                return Err(Error::DomainMismatch { point: zi, context: d.label().to_string() });
            }
            v = v.kronecker(&b.values(zi));
        }
        Ok(v)
    }

    pub fn eval(&self, z: &[ComplexPoint], t: &[ComplexPoint]) -> Result<Complex64> {
        let phi_z = self.values(z)?;
        let phi_t = self.values(t)?;
        let c = self.cholesky.solve(&phi_t).map(|x| x.conj());
        Ok(phi_z.iter().zip(c.iter()).map(|(a, b)| a * b).sum())
    }
}
