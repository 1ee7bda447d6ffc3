//! Evaluation of the truncated weighted Bergman kernel and the pointwise
//! identities it satisfies.
//!
//! With `G[j][k] = <phi_j | phi_k>_mu` the kernel section at `t` is
//! `K(., t) = sum_k c_k(t) phi_k` with `c(t) = conj(G^-1 phi(t))`, so that
//! `<f | K(., t)>_mu = f(t)` for every `f` in the span.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ComplexPoint, Domain, QuadratureRule};
use crate::gram::GramSystem;
use crate::weights::Weight;

/// Diagonal values at or below this are treated as zero.
pub const DIAGONAL_FLOOR: f64 = 1e-12;

const SCHWARZ_SLACK: f64 = 1e-10;
const AMPLITUDE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct KernelModel {
    system: Arc<GramSystem>,
}

impl KernelModel {
    pub fn new(system: GramSystem) -> Self {
        Self { system: Arc::new(system) }
    }

    pub fn build(d: &Domain, w: &Weight, rule: Arc<QuadratureRule>, degree: usize) -> Result<Self> {
        Ok(Self::new(GramSystem::assemble(d, w, rule, degree)?))
    }

    pub fn system(&self) -> &GramSystem {
        &self.system
    }

    pub fn domain(&self) -> &Domain {
        self.system.domain()
    }

    fn check_point(&self, p: ComplexPoint) -> Result<()> {
        if self.domain().contains(p) {
            Ok(())
        } else {
            Err(Error::DomainMismatch { point: p, context: self.domain().label().to_string() })
        }
    }

    /// Basis coefficients of the section `K(., t)`.
    pub fn section(&self, t: ComplexPoint) -> Result<DVector<Complex64>> {
        self.check_point(t)?;
        Ok(self.section_unchecked(t))
    }

    fn section_unchecked(&self, t: ComplexPoint) -> DVector<Complex64> {
        let phi_t = self.system.basis().values(t);
        self.system.cholesky().solve(&phi_t).map(|c| c.conj())
    }

    /// `K(z, t)` of the truncated basis.
    pub fn eval(&self, z: ComplexPoint, t: ComplexPoint) -> Result<Complex64> {
        self.check_point(z)?;
        let c = self.section(t)?;
        Ok(self.system.basis().eval(&c, z))
    }

    pub fn diagonal(&self, t: ComplexPoint) -> Result<f64> {
        Ok(self.eval(t, t)?.re)
    }

    /// `[K(p_i, p_j)]` for all pairs of points.
    pub fn matrix(&self, points: &[ComplexPoint]) -> Result<DMatrix<Complex64>> {
        for &p in points {
            self.check_point(p)?;
        }
        let basis = self.system.basis();
        let phi = DMatrix::from_fn(points.len(), basis.dim(), |i, k| {
            basis.values(points[i])[k]
        });
        let sections: Vec<DVector<Complex64>> =
            points.iter().map(|&t| self.section_unchecked(t)).collect();
        let c = DMatrix::from_columns(&sections);
        Ok(phi * c)
    }

    /// Values of `f = sum_k a_k phi_k` at every quadrature node.
    pub fn node_values(&self, coeffs: &DVector<Complex64>) -> Vec<Complex64> {
        let basis = *self.system.basis();
        self.system.rule().nodes().par_iter().map(|&z| basis.eval(coeffs, z)).collect()
    }

    pub fn eval_in_span(&self, coeffs: &DVector<Complex64>, z: ComplexPoint) -> Complex64 {
        self.system.basis().eval(coeffs, z)
    }

    pub fn norm_sq(&self, coeffs: &DVector<Complex64>) -> f64 {
        self.system.norm_sq(coeffs)
    }
}

/// The least-norm function taking the value 1 at `anchor`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimalElement {
    pub anchor: ComplexPoint,
    pub coefficients: DVector<Complex64>,
    pub norm_sq: f64,
}

/// Solves `min ||f||^2` subject to `f(t) = 1` through its bordered KKT system,
/// independently of the Cholesky solve used for kernel sections.
pub fn minimal_element(km: &KernelModel, t: ComplexPoint) -> Result<MinimalElement> {
    let diag = km.diagonal(t)?;
    if diag <= DIAGONAL_FLOOR {
        return Err(Error::DegenerateAnchor { point: t, diagonal: diag });
    }
    let g = km.system().regularized();
    let phi_t = km.system().basis().values(t);
    let n = g.nrows();

    // With f = sum a_k phi_k and v = conj(a): minimise v^H G v subject to
    // phi(t)^H v = 1. Stationarity gives G v = lambda phi(t).
    let mut kkt = DMatrix::zeros(n + 1, n + 1);
    kkt.view_mut((0, 0), (n, n)).copy_from(g);
    for k in 0..n {
        kkt[(k, n)] = -phi_t[k];
        kkt[(n, k)] = phi_t[k].conj();
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = Complex64::new(1.0, 0.0);
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or(Error::DegenerateAnchor { point: t, diagonal: diag })?;
    let v = sol.rows(0, n).into_owned();
    let coefficients = v.map(|c| c.conj());
    let norm_sq = km.norm_sq(&coefficients);
    Ok(MinimalElement { anchor: t, coefficients, norm_sq })
}

/// `|f(t) - sum_i f(z_i) conj(K(z_i, t)) mu(z_i) w_i|`.
///
/// For `f` in the span this measures solver error only; outside the span it
/// also contains the truncation error of the basis.
pub fn reproducing_residual<F>(km: &KernelModel, f: F, t: ComplexPoint) -> Result<f64>
where
    F: Fn(ComplexPoint) -> Complex64 + Sync,
{
    let c = km.section(t)?;
    let basis = *km.system().basis();
    let nodes = km.system().rule().nodes();
    let measure = km.system().measure();
    let parts: Vec<Complex64> = nodes
        .par_chunks(2048)
        .zip(measure.par_chunks(2048))
        .map(|(zs, ms)| {
            zs.iter()
                .zip(ms)
                .map(|(&z, &m)| f(z) * basis.eval(&c, z).conj() * m)
                .sum::<Complex64>()
        })
        .collect();
    let integral: Complex64 = parts.iter().sum();
    Ok((f(t) - integral).norm())
}

/// `|K(z,t)|^2 <= K(z,z) K(t,t)` with relative slack `1e-10`.
pub fn schwarz_check(km: &KernelModel, z: ComplexPoint, t: ComplexPoint) -> Result<bool> {
    let kzt = km.eval(z, t)?;
    let kzz = km.diagonal(z)?;
    let ktt = km.diagonal(t)?;
    Ok(schwarz_holds(kzt, kzz, ktt))
}

pub(crate) fn schwarz_holds(kzt: Complex64, kzz: f64, ktt: f64) -> bool {
    kzt.norm_sqr() <= kzz * ktt * (1.0 + SCHWARZ_SLACK)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtremalityVerdict {
    /// `f(t) >= 0` and `||f|| <= sqrt(f(t))`.
    pub in_s: bool,
    /// `f(t) >= K(t,t)`.
    pub dominates: bool,
    /// Coefficients of `f` equal those of `K(., t)`.
    pub equals_kernel: bool,
}

impl ExtremalityVerdict {
    /// Membership together with domination forces equality with the kernel.
    pub fn characterization_holds(&self) -> bool {
        !(self.in_s && self.dominates) || self.equals_kernel
    }
}

/// Tests `f = sum a_k phi_k` against the extremal characterisation of the
/// kernel section at `t`.
pub fn lemma9_extremality(
    km: &KernelModel,
    f: &DVector<Complex64>,
    t: ComplexPoint,
) -> Result<ExtremalityVerdict> {
    let k = km.section(t)?;
    let ktt = km.eval_in_span(&k, t).re;
    let ft = km.eval_in_span(f, t);
    let real = ft.im.abs() <= 1e-10 * (1.0 + ft.norm());
    let norm = km.norm_sq(f).max(0.0).sqrt();

    let in_s = real && ft.re >= 0.0 && norm <= ft.re.sqrt() * (1.0 + 1e-10);
    let dominates = real && ft.re >= ktt;
    let scale = max_abs(&k);
    let equals_kernel = max_abs(&(f - &k)) <= 1e-8 * scale;
    Ok(ExtremalityVerdict { in_s, dominates, equals_kernel })
}

fn max_abs(v: &DVector<Complex64>) -> f64 {
    v.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Relative discrepancy between `T_mu^-1 K_D(., t)` and `K_{D,mu}(., t)`.
///
/// Both sides are expressed in the basis orthonormal for the unweighted inner
/// product on the same rule. The Toeplitz matrix is
/// `m[j][k] = <mu e_k | e_j>`, the unweighted kernel section has coordinates
/// `conj(e_j(t))`, and the weighted section comes from the weighted Gram
/// system.
pub fn toeplitz_cross_check(
    d: &Domain,
    w: &Weight,
    rule: Arc<QuadratureRule>,
    degree: usize,
    t: ComplexPoint,
) -> Result<f64> {
    if !w.is_bounded() {
        return Err(Error::Unsupported(format!("Toeplitz operator needs a bounded weight, got {w}")));
    }
    let plain = GramSystem::assemble(d, &Weight::unit(), rule.clone(), degree)?;
    let weighted = KernelModel::build(d, w, rule, degree)?;
    weighted.check_point(t)?;

    // e = L^-1 phi with G_0 = L L^H.
    let l = plain.cholesky().l();
    let solve_lower = |b: &DMatrix<Complex64>| {
        l.solve_lower_triangular(b).expect("Cholesky factor has a nonzero diagonal")
    };
    let g_mu = weighted.system().regularized();
    let half = solve_lower(g_mu);
    let projected = solve_lower(&half.adjoint()).adjoint();
    let toeplitz = projected.transpose();

    let phi_t = plain.basis().values(t);
    let e_t = l.solve_lower_triangular(&phi_t).expect("nonzero diagonal");
    let rhs = e_t.map(|c| c.conj());
    let x = toeplitz
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularGram { ridge: weighted.system().relative_ridge() })?;

    // phi = L e, so sum c_j phi_j = sum_i (L^T c)_i e_i.
    let y = l.transpose() * weighted.section(t)?;
    let denom = y.norm();
    Ok((x - &y).norm() / denom)
}

/// `|K(z,w)| / sqrt(K(z,z) K(w,w))`.
pub fn transition_amplitude(km: &KernelModel, z: ComplexPoint, w: ComplexPoint) -> Result<f64> {
    let kzz = km.diagonal(z)?;
    let kww = km.diagonal(w)?;
    for (p, v) in [(z, kzz), (w, kww)] {
        if v <= DIAGONAL_FLOOR {
            return Err(Error::DegenerateAnchor { point: p, diagonal: v });
        }
    }
    let a = km.eval(z, w)?.norm() / (kzz * kww).sqrt();
    if a > 1.0 + AMPLITUDE_SLACK {
        return Err(Error::AmplitudeOutOfRange(a));
    }
    Ok(a.min(1.0))
}

/// Counts of violated pointwise properties over a kernel matrix on a grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyViolations {
    pub pairs: usize,
    pub schwarz: usize,
    pub hermitian: usize,
    pub negative_diagonal: usize,
}

impl PropertyViolations {
    pub fn of_matrix(k: &DMatrix<Complex64>) -> Self {
        let n = k.nrows();
        let mut out = Self { pairs: n * n, ..Self::default() };
        for i in 0..n {
            if k[(i, i)].re < 0.0 {
                out.negative_diagonal += 1;
            }
            for j in 0..n {
                let kij = k[(i, j)];
                if (kij - k[(j, i)].conj()).norm() > 1e-10 * (1.0 + kij.norm()) {
                    out.hermitian += 1;
                }
                if !schwarz_holds(kij, k[(i, i)].re, k[(j, j)].re) {
                    out.schwarz += 1;
                }
            }
        }
        out
    }

    pub fn merge(&mut self, other: &Self) {
        self.pairs += other.pairs;
        self.schwarz += other.schwarz;
        self.hermitian += other.hermitian;
        self.negative_diagonal += other.negative_diagonal;
    }

    pub fn total(&self) -> usize {
        self.schwarz + self.hermitian + self.negative_diagonal
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_quadrature;
    use crate::weights::BuiltinExpression;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> ComplexPoint {
        Complex64::new(re, im)
    }

    fn model(d: &Domain, w: &Weight, res: usize, degree: usize) -> KernelModel {
        let rule = Arc::new(build_quadrature(d, res, 4).unwrap());
        KernelModel::build(d, w, rule, degree).unwrap()
    }

    fn unit_model() -> KernelModel {
        model(&Domain::unit_disc(), &Weight::unit(), 128, 16)
    }

    #[test]
    fn disc_kernel_values() {
        let km = unit_model();
        assert!((km.eval(c(0.0, 0.0), c(0.0, 0.0)).unwrap().re - 1.0 / PI).abs() < 1e-3 / PI);
        assert!((km.eval(c(0.5, 0.0), c(0.0, 0.0)).unwrap() - 1.0 / PI).norm() < 1e-3 / PI);
        let small = model(&Domain::disc(c(0.0, 0.0), 0.5).unwrap(), &Weight::unit(), 128, 16);
        let v = small.diagonal(c(0.0, 0.0)).unwrap();
        assert!((v - 1.0 / (PI * 0.25)).abs() < 1e-3 * v);
        assert!(matches!(km.eval(c(1.2, 0.0), c(0.0, 0.0)), Err(Error::DomainMismatch { .. })));
    }

    #[test]
    fn minimal_elements_at_origin() {
        for (d, w, norm) in [
            (Domain::unit_disc(), Weight::unit(), PI),
            (Domain::disc(c(0.0, 0.0), 2.0).unwrap(), Weight::unit(), 4.0 * PI),
            (Domain::unit_disc(), Weight::radial_power(1.0).unwrap(), PI / 2.0),
        ] {
            let km = model(&d, &w, 128, 8);
            let me = minimal_element(&km, c(0.0, 0.0)).unwrap();
            assert!((me.norm_sq - norm).abs() < 2e-3 * norm, "{d} {w}: {}", me.norm_sq);
            // phi is the constant 1
            assert!((me.coefficients[0] - 1.0).norm() < 1e-10);
            let rest = max_abs(&me.coefficients.rows(1, me.coefficients.len() - 1).into_owned());
            assert!(rest < 1e-3, "{rest}");
            assert!((km.eval_in_span(&me.coefficients, c(0.0, 0.0)) - 1.0).norm() < 1e-10);
        }
    }

    #[test]
    fn minimal_element_matches_normalized_section() {
        let d = Domain::unit_disc();
        let km = model(&d, &Weight::moebius_power(1.0).unwrap(), 96, 12);
        let grid = crate::geometry::compact_sample_grid(&d, 0.3, 12).unwrap();
        for &t in &grid {
            let me = minimal_element(&km, t).unwrap();
            let ktt = km.diagonal(t).unwrap();
            assert!((me.norm_sq - 1.0 / ktt).abs() < 1e-10 / ktt);
            for &z in &grid {
                let lhs = km.eval_in_span(&me.coefficients, z);
                let rhs = km.eval(z, t).unwrap() / ktt;
                assert!((lhs - rhs).norm() <= 1e-8 * rhs.norm().max(1.0), "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn reproduces_functions_in_span() {
        let km = unit_model();
        let one = reproducing_residual(&km, |_| Complex64::new(1.0, 0.0), c(0.3, 0.0)).unwrap();
        assert!(one <= 1e-8, "{one}");
        let sq = reproducing_residual(&km, |z| z * z, c(0.5, 0.0)).unwrap();
        assert!(sq <= 1e-8, "{sq}");
        // Out of span: reported, not bounded.
        let far = reproducing_residual(&km, |z| z.powu(21), c(0.9, 0.0)).unwrap();
        assert!(far > 0.0);
    }

    #[test]
    fn schwarz_and_symmetry() {
        let km = unit_model();
        assert!(schwarz_check(&km, c(0.5, 0.0), c(0.5, 0.0)).unwrap());
        assert!(schwarz_check(&km, c(0.5, 0.0), c(-0.5, 0.0)).unwrap());
        let grid = crate::geometry::compact_sample_grid(km.domain(), 0.2, 20).unwrap();
        let k = km.matrix(&grid).unwrap();
        assert_eq!(PropertyViolations::of_matrix(&k).total(), 0);
    }

    #[test]
    fn extremality_examples() {
        let km = unit_model();
        let t = c(0.3, 0.2);
        let k = km.section(t).unwrap();
        let v = lemma9_extremality(&km, &k, t).unwrap();
        assert!(v.in_s && v.dominates && v.equals_kernel);

        let zero = DVector::zeros(k.len());
        let v = lemma9_extremality(&km, &zero, t).unwrap();
        assert!(v.in_s && !v.dominates);

        let twice = &k * Complex64::new(2.0, 0.0);
        assert!(!lemma9_extremality(&km, &twice, t).unwrap().in_s);
    }

    #[test]
    fn toeplitz_identity_for_unit_weight() {
        let d = Domain::unit_disc();
        let rule = Arc::new(build_quadrature(&d, 64, 2).unwrap());
        let e = toeplitz_cross_check(&d, &Weight::unit(), rule, 8, c(0.2, 0.1)).unwrap();
        assert!(e <= 1e-10, "{e}");
    }

    #[test]
    fn toeplitz_identity_for_bounded_weights() {
        let d = Domain::unit_disc();
        let rule = Arc::new(build_quadrature(&d, 64, 2).unwrap());
        for (w, t) in [
            (Weight::moebius_power(1.0).unwrap(), c(0.0, 0.0)),
            (Weight::radial_power(1.0).unwrap(), c(0.3, 0.0)),
            (Weight::expression(BuiltinExpression::TiltedLinear), c(-0.4, 0.3)),
        ] {
            let e = toeplitz_cross_check(&d, &w, rule.clone(), 8, t).unwrap();
            assert!(e <= 1e-6, "{w}: {e}");
        }
        let unbounded = Weight::radial_power(-0.5).unwrap();
        assert!(matches!(
            toeplitz_cross_check(&d, &unbounded, rule, 8, c(0.3, 0.0)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn transition_amplitudes() {
        let km = unit_model();
        let same = transition_amplitude(&km, c(0.3, 0.1), c(0.3, 0.1)).unwrap();
        assert!((same - 1.0).abs() < 1e-12);
        let a = transition_amplitude(&km, c(0.0, 0.0), c(0.5, 0.0)).unwrap();
        // 1 - |w|^2 for the unit disc kernel
        assert!((a - 0.75).abs() < 1e-3, "{a}");
    }
}
