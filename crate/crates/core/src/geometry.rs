//! Bounded planar domains and tensor-product Gauss quadrature over them.
//!
//! A domain is either a closed-form shape (disc, annulus) or an indicator
//! predicate together with a bounding box. Quadrature rules are built on a
//! uniform grid of cells covering the bounding box; every cell carries a
//! tensor Gauss-Legendre rule and boundary cells keep only the nodes that
//! fall inside the domain.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the complex plane.
pub type ComplexPoint = Complex64;

/// Membership predicate of an indicator domain.
pub type Predicate = Arc<dyn Fn(ComplexPoint) -> bool + Send + Sync>;

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite());
        if !finite || x_max <= x_min || y_max <= y_min {
            return Err(Error::InvalidDomain(format!(
                "bounding box [{x_min}, {x_max}] x [{y_min}, {y_max}] has no positive area"
            )));
        }
        Ok(Self { x_min, x_max, y_min, y_max })
    }

    /// Square box of half-width `half` centred at `center`.
    pub fn square(center: ComplexPoint, half: f64) -> Result<Self> {
        Self::new(center.re - half, center.re + half, center.im - half, center.im + half)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> ComplexPoint {
        Complex64::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    /// Half of the longer side.
    pub fn half_width(&self) -> f64 {
        0.5 * self.width().max(self.height())
    }

    pub fn contains(&self, p: ComplexPoint) -> bool {
        p.re > self.x_min && p.re < self.x_max && p.im > self.y_min && p.im < self.y_max
    }
}

#[derive(Clone)]
pub enum DomainKind {
    Disc {
        center: ComplexPoint,
        radius: f64,
    },
    Annulus {
        center: ComplexPoint,
        inner: f64,
        outer: f64,
    },
    /// Arbitrary measurable set. Openness and connectedness are the caller's
    /// responsibility, and so is excluding slit domains.
    Indicator {
        predicate: Predicate,
        bbox: BoundingBox,
    },
}

impl fmt::Debug for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainKind::Disc { center, radius } => f
                .debug_struct("Disc")
                .field("center", center)
                .field("radius", radius)
                .finish(),
            DomainKind::Annulus { center, inner, outer } => f
                .debug_struct("Annulus")
                .field("center", center)
                .field("inner", inner)
                .field("outer", outer)
                .finish(),
            DomainKind::Indicator { bbox, .. } => {
                f.debug_struct("Indicator").field("bbox", bbox).finish_non_exhaustive()
            }
        }
    }
}

/// A bounded open subset of the plane.
#[derive(Debug, Clone)]
pub struct Domain {
    kind: DomainKind,
    label: String,
}

fn finite_point(p: ComplexPoint, what: &str) -> Result<()> {
    if p.re.is_finite() && p.im.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidDomain(format!("{what} {p} is not finite")))
    }
}

impl Domain {
    pub fn disc(center: ComplexPoint, radius: f64) -> Result<Self> {
        finite_point(center, "disc center")?;
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidDomain(format!("disc radius {radius} must be positive")));
        }
        Ok(Self {
            kind: DomainKind::Disc { center, radius },
            label: format!("disc({center}, {radius})"),
        })
    }

    pub fn unit_disc() -> Self {
        Self::disc(Complex64::new(0.0, 0.0), 1.0).expect("unit disc is valid")
    }

    pub fn annulus(center: ComplexPoint, inner: f64, outer: f64) -> Result<Self> {
        finite_point(center, "annulus center")?;
        if !(inner.is_finite() && outer.is_finite() && inner >= 0.0 && inner < outer) {
            return Err(Error::InvalidDomain(format!(
                "annulus radii must satisfy 0 <= inner < outer, got {inner}, {outer}"
            )));
        }
        Ok(Self {
            kind: DomainKind::Annulus { center, inner, outer },
            label: format!("annulus({center}, {inner}, {outer})"),
        })
    }

    pub fn indicator(
        label: impl Into<String>,
        bbox: BoundingBox,
        predicate: impl Fn(ComplexPoint) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind: DomainKind::Indicator { predicate: Arc::new(predicate), bbox },
            label: label.into(),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self.kind, DomainKind::Indicator { .. })
    }

    /// True iff `p` lies in the open set.
    pub fn contains(&self, p: ComplexPoint) -> bool {
        if !(p.re.is_finite() && p.im.is_finite()) {
            return false;
        }
        match &self.kind {
            DomainKind::Disc { center, radius } => (p - center).norm_sqr() < radius * radius,
            DomainKind::Annulus { center, inner, outer } => {
                let r2 = (p - center).norm_sqr();
                r2 > inner * inner && r2 < outer * outer
            }
            DomainKind::Indicator { predicate, bbox } => bbox.contains(p) && predicate(p),
        }
    }

    pub fn bounding_box(&self) -> BoundingBox {
        match &self.kind {
            DomainKind::Disc { center, radius } => BoundingBox::square(*center, *radius),
            DomainKind::Annulus { center, outer, .. } => BoundingBox::square(*center, *outer),
            DomainKind::Indicator { bbox, .. } => Ok(*bbox),
        }
        .expect("validated at construction")
    }

    /// Largest radius of a closed-form domain.
    pub fn outer_radius(&self) -> Option<f64> {
        match &self.kind {
            DomainKind::Disc { radius, .. } => Some(*radius),
            DomainKind::Annulus { outer, .. } => Some(*outer),
            DomainKind::Indicator { .. } => None,
        }
    }

    /// Exact area for closed-form kinds.
    pub fn area(&self) -> Option<f64> {
        match &self.kind {
            DomainKind::Disc { radius, .. } => Some(PI * radius * radius),
            DomainKind::Annulus { inner, outer, .. } => Some(PI * (outer * outer - inner * inner)),
            DomainKind::Indicator { .. } => None,
        }
    }

    /// Distance from `p` to the complement of the domain (zero outside).
    /// Exact for closed-form kinds, `None` for indicators.
    pub fn boundary_distance(&self, p: ComplexPoint) -> Option<f64> {
        let d = match &self.kind {
            DomainKind::Disc { center, radius } => radius - (p - center).norm(),
            DomainKind::Annulus { center, inner, outer } => {
                let r = (p - center).norm();
                (r - inner).min(outer - r)
            }
            DomainKind::Indicator { .. } => return None,
        };
        Some(d.max(0.0))
    }

    /// Distance from `p` to the domain itself (zero inside or on the boundary).
    /// Exact for closed-form kinds, `None` for indicators.
    pub fn distance_from(&self, p: ComplexPoint) -> Option<f64> {
        let d = match &self.kind {
            DomainKind::Disc { center, radius } => (p - center).norm() - radius,
            DomainKind::Annulus { center, inner, outer } => {
                let r = (p - center).norm();
                (r - outer).max(inner - r)
            }
            DomainKind::Indicator { .. } => return None,
        };
        Some(d.max(0.0))
    }

    /// Whether the closed `margin`-neighbourhood of `p` stays inside the domain.
    ///
    /// Exact for closed-form kinds. Indicator domains are probed on concentric
    /// circles, so thin excursions of the complement can be missed.
    pub fn has_clearance(&self, p: ComplexPoint, margin: f64) -> bool {
        if let Some(d) = self.boundary_distance(p) {
            return self.contains(p) && d >= margin;
        }
        if !self.contains(p) {
            return false;
        }
        const RINGS: usize = 4;
        const SPOKES: usize = 64;
        (1..=RINGS).all(|ring| {
            let r = margin * ring as f64 / RINGS as f64;
            (0..SPOKES).all(|k| {
                let theta = 2.0 * PI * k as f64 / SPOKES as f64;
                self.contains(p + Complex64::from_polar(r, theta))
            })
        })
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

/// Discretisation of the area measure `dV` on a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<ComplexPoint>,
    weights: Vec<f64>,
    resolution: usize,
    order: usize,
    estimated_area_error: f64,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[ComplexPoint] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `|area(resolution) - area(2 * resolution)|`.
    pub fn estimated_area_error(&self) -> f64 {
        self.estimated_area_error
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate<F>(&self, f: F) -> Complex64
    where
        F: Fn(ComplexPoint) -> Complex64,
    {
        self.nodes
            .iter()
            .zip(&self.weights)
            .fold(Complex64::new(0.0, 0.0), |acc, (&z, &w)| acc + f(z) * w)
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Golub-Welsch), returned in
/// increasing order and made exactly symmetric about the origin.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "Gauss-Legendre order must be positive");
    let jacobi = DMatrix::from_fn(order, order, |i, j| {
        if i.abs_diff(j) == 1 {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    for i in 0..order {
        let j = order - 1 - i;
        nodes[i] = 0.5 * (pairs[i].0 - pairs[j].0);
        weights[i] = 0.5 * (pairs[i].1 + pairs[j].1);
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }
    (nodes, weights)
}

fn grid_rule(d: &Domain, resolution: usize, order: usize) -> (Vec<ComplexPoint>, Vec<f64>) {
    let bbox = d.bounding_box();
    let center = bbox.center();
    let half = bbox.half_width();
    let h = 2.0 * half / resolution as f64;
    let (gx, gw) = gauss_legendre(order);
    let mid = resolution as f64 / 2.0;

    // Offsets are formed relative to the box centre so that the node set is
    // exactly symmetric under reflections through it.
    let offsets: Vec<(f64, f64)> = (0..resolution)
        .flat_map(|cell| {
            let base = cell as f64 + 0.5 - mid;
            gx.iter()
                .zip(&gw)
                .map(move |(&x, &w)| (h * (base + 0.5 * x), 0.5 * h * w))
        })
        .collect();

    let rows: Vec<(Vec<ComplexPoint>, Vec<f64>)> = offsets
        .par_iter()
        .map(|&(ox, wx)| {
            let mut nodes = Vec::new();
            let mut weights = Vec::new();
            for &(oy, wy) in &offsets {
                let p = Complex64::new(center.re + ox, center.im + oy);
                if d.contains(p) {
                    nodes.push(p);
                    weights.push(wx * wy);
                }
            }
            (nodes, weights)
        })
        .collect();

    let total: usize = rows.iter().map(|r| r.0.len()).sum();
    let mut nodes = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for (n, w) in rows {
        nodes.extend(n);
        weights.extend(w);
    }
    (nodes, weights)
}

fn grid_area(d: &Domain, resolution: usize, order: usize) -> f64 {
    let (_, w) = grid_rule(d, resolution, order);
    w.iter().sum()
}

/// Builds the clipped tensor Gauss rule on a `resolution x resolution` cell
/// grid over the bounding box of `d`.
pub fn build_quadrature(d: &Domain, resolution: usize, order: usize) -> Result<QuadratureRule> {
    if resolution < 4 {
        return Err(Error::InvalidParameter(format!(
            "quadrature resolution must be at least 4, got {resolution}"
        )));
    }
    if order == 0 {
        return Err(Error::InvalidParameter("quadrature order must be positive".into()));
    }
    let (nodes, weights) = grid_rule(d, resolution, order);
    if nodes.is_empty() {
        return Err(Error::EmptyDomain(d.label().to_string()));
    }
    let area: f64 = weights.iter().sum();
    let estimated_area_error = (area - grid_area(d, 2 * resolution, order)).abs();
    Ok(QuadratureRule { nodes, weights, resolution, order, estimated_area_error })
}

/// Deterministic sample of at most `count` points whose distance to the
/// complement of `d` is at least `margin`.
///
/// Discs and annuli use a sunflower layout that reaches the extreme admissible
/// radii; indicator domains use a filtered lattice thinned evenly to `count`.
pub fn compact_sample_grid(d: &Domain, margin: f64, count: usize) -> Result<Vec<ComplexPoint>> {
    if !(margin.is_finite() && margin > 0.0) {
        return Err(Error::InvalidParameter(format!("grid margin must be positive, got {margin}")));
    }
    if count == 0 {
        return Err(Error::InvalidParameter("grid count must be positive".into()));
    }
    let empty = || Error::EmptyDomain(format!("{} at margin {margin}", d.label()));
    let fraction = |i: usize| if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };

    match d.kind() {
        DomainKind::Disc { center, radius } => {
            let rho = radius - margin;
            if rho < 0.0 {
                return Err(empty());
            }
            Ok((0..count)
                .map(|i| {
                    let r = rho * fraction(i).sqrt();
                    center + Complex64::from_polar(r, GOLDEN_ANGLE * i as f64)
                })
                .collect())
        }
        DomainKind::Annulus { center, inner, outer } => {
            let (a, b) = (inner + margin, outer - margin);
            if a > b {
                return Err(empty());
            }
            Ok((0..count)
                .map(|i| {
                    let s = if count == 1 { 0.5 } else { fraction(i) };
                    let r = (a * a + (b * b - a * a) * s).sqrt().clamp(a, b);
                    center + Complex64::from_polar(r, GOLDEN_ANGLE * i as f64)
                })
                .collect())
        }
        DomainKind::Indicator { bbox, .. } => {
            let side = 4 * ((count as f64).sqrt().ceil() as usize).max(2);
            let (dx, dy) = (bbox.width() / side as f64, bbox.height() / side as f64);
            let candidates: Vec<ComplexPoint> = (0..side)
                .flat_map(|i| {
                    (0..side).map(move |j| {
                        Complex64::new(
                            bbox.x_min + dx * (i as f64 + 0.5),
                            bbox.y_min + dy * (j as f64 + 0.5),
                        )
                    })
                })
                .filter(|&p| d.has_clearance(p, margin))
                .collect();
            if candidates.is_empty() {
                return Err(empty());
            }
            if candidates.len() <= count {
                return Ok(candidates);
            }
            let last = candidates.len() - 1;
            Ok((0..count)
                .map(|k| {
                    let idx = if count == 1 {
                        last / 2
                    } else {
                        (k as f64 * last as f64 / (count - 1) as f64).round() as usize
                    };
                    candidates[idx]
                })
                .collect())
        }
    }
}
