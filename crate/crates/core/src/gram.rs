//! Weighted Gram matrices of a truncated monomial basis.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ComplexPoint, Domain, QuadratureRule};
use crate::weights::Weight;

/// Relative ridges tried in order until the factorisation is accepted.
pub const RIDGE_LADDER: [f64; 6] = [0.0, 1e-14, 1e-12, 1e-10, 1e-8, 1e-6];

/// Largest condition number accepted for the factorised matrix.
const MAX_CONDITION: f64 = 1e13;

/// Nodes per partial sum. Fixed so reductions are independent of thread count.
const CHUNK: usize = 2048;

/// Monomials `((z - center) / scale)^k` for `k = 0..=degree`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonomialBasis {
    center: ComplexPoint,
    scale: f64,
    degree: usize,
}

impl MonomialBasis {
    pub fn new(center: ComplexPoint, scale: f64, degree: usize) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidParameter(format!("basis scale {scale} must be positive")));
        }
        Ok(Self { center, scale, degree })
    }

    /// Centred on the bounding box and scaled by its half-width.
    pub fn for_domain(d: &Domain, degree: usize) -> Self {
        let bbox = d.bounding_box();
        Self { center: bbox.center(), scale: bbox.half_width(), degree }
    }

    pub fn center(&self) -> ComplexPoint {
        self.center
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.degree + 1
    }

    fn local(&self, z: ComplexPoint) -> Complex64 {
        (z - self.center) / self.scale
    }

    pub fn fill(&self, z: ComplexPoint, out: &mut [Complex64]) {
        let u = self.local(z);
        let mut p = Complex64::new(1.0, 0.0);
        for slot in out.iter_mut() {
            *slot = p;
            p *= u;
        }
    }

    pub fn values(&self, z: ComplexPoint) -> DVector<Complex64> {
        let mut v = DVector::zeros(self.dim());
        self.fill(z, v.as_mut_slice());
        v
    }

    /// `sum_k coeffs[k] * phi_k(z)`.
    pub fn eval(&self, coeffs: &DVector<Complex64>, z: ComplexPoint) -> Complex64 {
        let u = self.local(z);
        coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * u + c)
    }

    /// Coefficients of the plain monomial `z^m`, if it lies in the span.
    pub fn monomial(&self, m: usize) -> Option<DVector<Complex64>> {
        if m > self.degree {
            return None;
        }
        // z^m = (c + s u)^m = sum_i binom(m, i) c^(m - i) s^i u^i
        let mut coeffs = DVector::zeros(self.dim());
        let mut binom = 1.0;
        for i in 0..=m {
            coeffs[i] = binom * self.center.powu((m - i) as u32) * self.scale.powi(i as i32);
            binom = binom * (m - i) as f64 / (i + 1) as f64;
        }
        Some(coeffs)
    }
}

/// Hermitian Gram matrix `gram[j][k] = <phi_j | phi_k>_mu` with its
/// (possibly regularised) Cholesky factorisation.
#[derive(Debug, Clone)]
pub struct GramSystem {
    basis: MonomialBasis,
    gram: DMatrix<Complex64>,
    regularized: DMatrix<Complex64>,
    cholesky: Cholesky<Complex64, Dyn>,
    ridge: f64,
    relative_ridge: f64,
    condition_estimate: f64,
    domain: Domain,
    weight: Weight,
    rule: Arc<QuadratureRule>,
    measure: Arc<Vec<f64>>,
}

/// Summary of the factorisation, suitable for run logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorizationLog {
    pub degree: usize,
    pub ridge: f64,
    pub relative_ridge: f64,
    pub condition_estimate: f64,
    pub nodes: usize,
}

/// `<phi_j | phi_k> = sum_i phi_j(z_i) conj(phi_k(z_i)) m_i` over the rule.
pub(crate) fn gram_from_measure(
    basis: &MonomialBasis,
    nodes: &[ComplexPoint],
    measure: &[f64],
) -> DMatrix<Complex64> {
    let n = basis.dim();
    let partials: Vec<Vec<Complex64>> = nodes
        .par_chunks(CHUNK)
        .zip(measure.par_chunks(CHUNK))
        .map(|(zs, ms)| {
            let mut acc = vec![Complex64::new(0.0, 0.0); n * n];
            let mut phi = vec![Complex64::new(0.0, 0.0); n];
            for (&z, &m) in zs.iter().zip(ms) {
                basis.fill(z, &mut phi);
                for j in 0..n {
                    let pj = phi[j] * m;
                    for k in j..n {
                        acc[j * n + k] += pj * phi[k].conj();
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = vec![Complex64::new(0.0, 0.0); n * n];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    DMatrix::from_fn(n, n, |j, k| {
        if j == k {
            Complex64::new(total[j * n + j].re, 0.0)
        } else if j < k {
            total[j * n + k]
        } else {
            total[k * n + j].conj()
        }
    })
}

struct Factorization {
    regularized: DMatrix<Complex64>,
    cholesky: Cholesky<Complex64, Dyn>,
    ridge: f64,
    relative_ridge: f64,
    condition_estimate: f64,
}

fn factorize(gram: &DMatrix<Complex64>) -> Result<Factorization> {
    let n = gram.nrows();
    let max_diag = (0..n).map(|i| gram[(i, i)].re).fold(0.0, f64::max);
    if !(max_diag.is_finite() && max_diag > 0.0) {
        return Err(Error::SingularGram { ridge: 0.0 });
    }
    let eigen = SymmetricEigen::new(gram.clone()).eigenvalues;
    let lambda_max = eigen.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lambda_min = eigen.iter().cloned().fold(f64::INFINITY, f64::min);

    for &relative_ridge in &RIDGE_LADDER {
        let ridge = relative_ridge * max_diag;
        let condition = (lambda_max + ridge) / (lambda_min + ridge);
        if !(lambda_min + ridge > 0.0 && condition <= MAX_CONDITION) {
            continue;
        }
        let mut regularized = gram.clone();
        for i in 0..n {
            regularized[(i, i)] += ridge;
        }
        if let Some(cholesky) = Cholesky::new(regularized.clone()) {
            return Ok(Factorization {
                regularized,
                cholesky,
                ridge,
                relative_ridge,
                condition_estimate: condition,
            });
        }
    }
    Err(Error::SingularGram { ridge: RIDGE_LADDER[RIDGE_LADDER.len() - 1] })
}

impl GramSystem {
    /// Assembles and factorises the Gram matrix of `phi_k = ((z - c)/s)^k`,
    /// `k <= degree`, in `L^2(d, mu)` discretised by `rule`.
    pub fn assemble(d: &Domain, w: &Weight, rule: Arc<QuadratureRule>, degree: usize) -> Result<Self> {
        Self::assemble_with_basis(d, w, rule, MonomialBasis::for_domain(d, degree))
    }

    pub fn assemble_with_basis(
        d: &Domain,
        w: &Weight,
        rule: Arc<QuadratureRule>,
        basis: MonomialBasis,
    ) -> Result<Self> {
        if let Some(&p) = rule.nodes().iter().find(|&&p| !d.contains(p)) {
            return Err(Error::DomainMismatch {
                point: p,
                context: format!("{} (quadrature rule built on another domain)", d.label()),
            });
        }
        let measure = rule
            .nodes()
            .iter()
            .zip(rule.weights())
            .map(|(&p, &q)| w.evaluate(p).map(|mu| mu * q))
            .collect::<Result<Vec<f64>>>()?;
        Self::from_measure(d.clone(), w.clone(), rule, basis, measure)
    }

    /// Gram system for an explicit per-node measure (weight times area).
    pub(crate) fn from_measure(
        domain: Domain,
        weight: Weight,
        rule: Arc<QuadratureRule>,
        basis: MonomialBasis,
        measure: Vec<f64>,
    ) -> Result<Self> {
        let gram = gram_from_measure(&basis, rule.nodes(), &measure);
        let f = factorize(&gram)?;
        Ok(Self {
            basis,
            gram,
            regularized: f.regularized,
            cholesky: f.cholesky,
            ridge: f.ridge,
            relative_ridge: f.relative_ridge,
            condition_estimate: f.condition_estimate,
            domain,
            weight,
            rule,
            measure: Arc::new(measure),
        })
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    /// The symmetrised, unregularised Gram matrix.
    pub fn gram(&self) -> &DMatrix<Complex64> {
        &self.gram
    }

    /// `gram + ridge * I`, the matrix that was factorised.
    pub fn regularized(&self) -> &DMatrix<Complex64> {
        &self.regularized
    }

    pub fn cholesky(&self) -> &Cholesky<Complex64, Dyn> {
        &self.cholesky
    }

    /// Absolute ridge added to the diagonal.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Ridge as a fraction of the largest diagonal entry.
    pub fn relative_ridge(&self) -> f64 {
        self.relative_ridge
    }

    /// Spectral condition number of the factorised matrix.
    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn weight(&self) -> &Weight {
        &self.weight
    }

    pub fn rule(&self) -> &Arc<QuadratureRule> {
        &self.rule
    }

    /// `mu(z_i) * w_i` for every node of the rule.
    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn log(&self) -> FactorizationLog {
        FactorizationLog {
            degree: self.degree(),
            ridge: self.ridge,
            relative_ridge: self.relative_ridge,
            condition_estimate: self.condition_estimate,
            nodes: self.rule.len(),
        }
    }

    /// `||f||^2` for `f = sum_k a_k phi_k`, in the regularised inner product.
    pub fn norm_sq(&self, coeffs: &DVector<Complex64>) -> f64 {
        // sum_jk a_j G_jk conj(a_k)
        let ga = &self.regularized * coeffs.map(|c| c.conj());
        coeffs.iter().zip(ga.iter()).map(|(a, g)| a * g).sum::<Complex64>().re
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_quadrature;
    use std::f64::consts::PI;

    fn rule(d: &Domain, res: usize, order: usize) -> Arc<QuadratureRule> {
        Arc::new(build_quadrature(d, res, order).unwrap())
    }

    /// `int_0^1 r^(2k) (1 - r^2)^beta 2 pi r dr` by composite Gauss-Legendre
    /// in the radius, independent of the planar rule.
    fn radial_moment(k: i32, beta: f64) -> f64 {
        let (x, w) = crate::geometry::gauss_legendre(20);
        let panels = 200;
        let mut total = 0.0;
        for p in 0..panels {
            let (a, b) = (p as f64 / panels as f64, (p + 1) as f64 / panels as f64);
            for (xi, wi) in x.iter().zip(&w) {
                let r = 0.5 * (a + b) + 0.5 * (b - a) * xi;
                total += 0.5 * (b - a) * wi * r.powi(2 * k) * (1.0 - r * r).powf(beta) * 2.0 * PI * r;
            }
        }
        total
    }

    fn assert_diagonal(g: &DMatrix<Complex64>, expected: &[f64], tol: f64) {
        for (j, e) in expected.iter().enumerate() {
            for k in 0..expected.len() {
                let v = g[(j, k)];
                if j == k {
                    assert!((v.re - e).abs() < tol * e && v.im == 0.0, "diag {j}: {v} vs {e}");
                } else {
                    assert!(v.norm() < tol, "offdiag ({j},{k}): {v}");
                }
            }
        }
    }

    #[test]
    fn unweighted_disc_gram() {
        let d = Domain::unit_disc();
        let sys = GramSystem::assemble(&d, &Weight::unit(), rule(&d, 128, 4), 3).unwrap();
        let expected: Vec<f64> = (0..4).map(|k| PI / (k as f64 + 1.0)).collect();
        assert_diagonal(sys.gram(), &expected, 2e-3);
        assert_eq!(sys.ridge(), 0.0);
    }

    #[test]
    fn radial_power_gram() {
        let d = Domain::unit_disc();
        let sys = GramSystem::assemble(&d, &Weight::radial_power(1.0).unwrap(), rule(&d, 128, 4), 2).unwrap();
        let expected: Vec<f64> = (0..3).map(|k| PI / (k as f64 + 2.0)).collect();
        assert_diagonal(sys.gram(), &expected, 2e-3);
    }

    #[test]
    fn moebius_power_gram_matches_radial_quadrature() {
        let expected: Vec<f64> = (0..2).map(|k| radial_moment(k, 1.0)).collect();
        assert!((expected[0] - PI / 2.0).abs() < 1e-12);
        assert!((expected[1] - PI / 6.0).abs() < 1e-12);
        let d = Domain::unit_disc();
        let sys = GramSystem::assemble(&d, &Weight::moebius_power(1.0).unwrap(), rule(&d, 128, 4), 1).unwrap();
        assert_diagonal(sys.gram(), &expected, 2e-3);
    }

    #[test]
    fn gram_is_hermitian_with_positive_diagonal() {
        let d = Domain::annulus(Complex64::new(0.2, 0.1), 0.3, 1.0).unwrap();
        let w = Weight::expression(crate::weights::BuiltinExpression::TiltedLinear);
        let sys = GramSystem::assemble(&d, &w, rule(&d, 48, 2), 8).unwrap();
        let g = sys.gram();
        for j in 0..g.nrows() {
            assert!(g[(j, j)].re > 0.0);
            for k in 0..g.ncols() {
                assert_eq!(g[(j, k)], g[(k, j)].conj());
            }
        }
    }

    #[test]
    fn ill_conditioned_gram_gets_recorded_ridge() {
        // Unscaled monomials on a tiny disc: diagonal spans ~40 orders of magnitude.
        let d = Domain::disc(Complex64::new(0.0, 0.0), 0.05).unwrap();
        let basis = MonomialBasis::new(Complex64::new(0.0, 0.0), 1.0, 14).unwrap();
        let sys = GramSystem::assemble_with_basis(&d, &Weight::unit(), rule(&d, 32, 2), basis).unwrap();
        assert!(sys.relative_ridge() > 0.0);
        assert_eq!(sys.ridge(), sys.relative_ridge() * sys.gram()[(0, 0)].re);
        assert!(sys.condition_estimate() <= 1e13);
    }

    #[test]
    fn rule_from_another_domain_is_rejected() {
        let big = Domain::disc(Complex64::new(0.0, 0.0), 2.0).unwrap();
        let small = Domain::unit_disc();
        let r = rule(&big, 16, 1);
        assert!(matches!(
            GramSystem::assemble(&small, &Weight::unit(), r, 2),
            Err(Error::DomainMismatch { .. })
        ));
    }

    #[test]
    fn monomial_coefficients_reproduce_powers() {
        let basis = MonomialBasis::new(Complex64::new(0.3, -0.2), 1.7, 6).unwrap();
        let z = Complex64::new(0.4, 0.9);
        for m in 0..=6 {
            let c = basis.monomial(m).unwrap();
            let v = basis.eval(&c, z);
            assert!((v - z.powu(m as u32)).norm() < 1e-12 * (1.0 + z.norm().powi(m as i32)));
        }
        assert!(basis.monomial(7).is_none());
    }

    #[test]
    fn assembly_is_deterministic() {
        let d = Domain::unit_disc();
        let r = rule(&d, 64, 2);
        let a = GramSystem::assemble(&d, &Weight::moebius_power(1.0).unwrap(), r.clone(), 10).unwrap();
        let b = GramSystem::assemble(&d, &Weight::moebius_power(1.0).unwrap(), r, 10).unwrap();
        assert_eq!(a.gram(), b.gram());
    }
}
