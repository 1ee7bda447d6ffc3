//! Weighted kernels on a disc as restrictions of unweighted kernels on the
//! Hartogs domain `Omega = {(z, w) : |w|^2 < mu(z)}`.
//!
//! For radial `mu` on a centred disc the monomials `z^j w^m` are mutually
//! orthogonal across fibre degrees, and integrating `|w|^(2m)` over the
//! fibre disc gives `pi mu(z)^(m+1) / (m+1)`. Each fibre degree therefore
//! contributes one planar Gram block with that node factor.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{ComplexPoint, Domain, DomainKind, QuadratureRule};
use crate::gram::{GramSystem, MonomialBasis};
use crate::kernel::KernelModel;
use crate::weights::Weight;

/// `pi mu^(m+1) / (m+1)`: the area integral of `|w|^(2m)` over `|w|^2 < mu`.
pub fn fiber_integral(mu: f64, m: usize) -> f64 {
    PI * mu.powi(m as i32 + 1) / (m as f64 + 1.0)
}

#[derive(Debug, Clone)]
pub struct HartogsSystem {
    base: Domain,
    base_weight: Weight,
    base_degree: usize,
    /// One block per fibre degree `0..=L`.
    blocks: Vec<KernelModel>,
}

impl HartogsSystem {
    pub fn base(&self) -> &Domain {
        &self.base
    }

    pub fn base_weight(&self) -> &Weight {
        &self.base_weight
    }

    pub fn base_degree(&self) -> usize {
        self.base_degree
    }

    pub fn fiber_degree(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn block(&self, m: usize) -> Option<&GramSystem> {
        self.blocks.get(m).map(|b| b.system())
    }

    /// `K_Omega((z, w), (p, s))` restricted to `w = s = 0`, where only the
    /// fibre-degree-zero block contributes.
    pub fn kernel_at_zero_fiber(&self, z: ComplexPoint, p: ComplexPoint) -> Result<Complex64> {
        self.blocks[0].eval(z, p)
    }
}

/// Assembles the fibre-degree blocks `m = 0..=fiber_degree` in the basis of
/// degree `base_degree` over `rule`.
pub fn build_hartogs(
    d: &Domain,
    w: &Weight,
    base_degree: usize,
    fiber_degree: usize,
    rule: Arc<QuadratureRule>,
) -> Result<HartogsSystem> {
    match d.kind() {
        DomainKind::Disc { center, .. } if *center == Complex64::new(0.0, 0.0) => {}
        _ => return Err(Error::Unsupported(format!("Hartogs blocks need a disc centred at 0, got {d}"))),
    }
    if !w.is_radial() {
        return Err(Error::Unsupported(format!("Hartogs blocks need a radial weight, got {w}")));
    }
    if let Some(&p) = rule.nodes().iter().find(|&&p| !d.contains(p)) {
        return Err(Error::DomainMismatch { point: p, context: format!("{d} (quadrature rule built on another domain)") });
    }
    let mu: Vec<f64> = rule.nodes().iter().map(|&p| w.evaluate(p)).collect::<Result<_>>()?;
    // Shares the rounding of the planar measure so that block 0 is exactly pi times it.
    let planar: Vec<f64> = mu.iter().zip(rule.weights()).map(|(m, q)| m * q).collect();
    let basis = MonomialBasis::for_domain(d, base_degree);
    let blocks = (0..=fiber_degree)
        .into_par_iter()
        .map(|m| {
            let factor = PI / (m as f64 + 1.0);
            let measure = planar.iter().zip(&mu).map(|(base, v)| base * v.powi(m as i32) * factor).collect();
            GramSystem::from_measure(d.clone(), w.clone(), rule.clone(), basis, measure).map(KernelModel::new)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HartogsSystem { base: d.clone(), base_weight: w.clone(), base_degree, blocks })
}

/// Convenience for `h.kernel_at_zero_fiber(z, p)`.
pub fn hartogs_kernel_at_zero_fiber(h: &HartogsSystem, z: ComplexPoint, p: ComplexPoint) -> Result<Complex64> {
    h.kernel_at_zero_fiber(z, p)
}
