//! Patch shape strategies. Every shape is centred at the origin with its flat variants lying in
//! the plane `y_3 = 0`, and is symmetric under reflection of each coordinate.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;

pub trait PatchShape: Send + Sync {
    fn name(&self) -> &'static str;
    /// Whether the shape is a subset of the plane `y_3 = 0`.
    fn is_flat(&self) -> bool;
    fn validate(&self, size: &[f64]) -> Result<()>;
    /// Continuous level function, `≤ 0` exactly on the closed patch.
    fn level(&self, size: &[f64], y: [f64; 3]) -> f64;
    /// Half-widths of the bounding box.
    fn half_extents(&self, size: &[f64]) -> [f64; 3];

    fn circumradius(&self, size: &[f64]) -> f64 {
        let e = self.half_extents(size);
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
    }

    fn contains(&self, size: &[f64], y: [f64; 3]) -> bool {
        self.level(size, y) <= 0.0
    }
}

fn expect_sizes(name: &str, size: &[f64], count: usize) -> Result<()> {
    if size.len() != count {
        return Err(Error::invalid(format!(
            "{name} takes {count} size parameter(s), got {}",
            size.len()
        )));
    }
    if size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::invalid(format!("{name} sizes must be positive, got {size:?}")));
    }
    Ok(())
}

struct Ball;
struct FlatDisk;
struct FlatSquare;
struct FlatEllipse;

impl PatchShape for Ball {
    fn name(&self) -> &'static str {
        "ball"
    }
    fn is_flat(&self) -> bool {
        false
    }
    fn validate(&self, size: &[f64]) -> Result<()> {
        expect_sizes(self.name(), size, 1)
    }
    fn level(&self, size: &[f64], y: [f64; 3]) -> f64 {
        (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt() - size[0]
    }
    fn half_extents(&self, size: &[f64]) -> [f64; 3] {
        [size[0]; 3]
    }
    fn circumradius(&self, size: &[f64]) -> f64 {
        size[0]
    }
}

impl PatchShape for FlatDisk {
    fn name(&self) -> &'static str {
        "flat_disk"
    }
    fn is_flat(&self) -> bool {
        true
    }
    fn validate(&self, size: &[f64]) -> Result<()> {
        expect_sizes(self.name(), size, 1)
    }
    fn level(&self, size: &[f64], y: [f64; 3]) -> f64 {
        ((y[0] * y[0] + y[1] * y[1]).sqrt() - size[0]).max(y[2].abs())
    }
    fn half_extents(&self, size: &[f64]) -> [f64; 3] {
        [size[0], size[0], 0.0]
    }
    fn circumradius(&self, size: &[f64]) -> f64 {
        size[0]
    }
}

impl PatchShape for FlatSquare {
    fn name(&self) -> &'static str {
        "flat_square"
    }
    fn is_flat(&self) -> bool {
        true
    }
    fn validate(&self, size: &[f64]) -> Result<()> {
        expect_sizes(self.name(), size, 1)
    }
    fn level(&self, size: &[f64], y: [f64; 3]) -> f64 {
        (y[0].abs().max(y[1].abs()) - size[0]).max(y[2].abs())
    }
    fn half_extents(&self, size: &[f64]) -> [f64; 3] {
        [size[0], size[0], 0.0]
    }
}

impl PatchShape for FlatEllipse {
    fn name(&self) -> &'static str {
        "flat_ellipse"
    }
    fn is_flat(&self) -> bool {
        true
    }
    fn validate(&self, size: &[f64]) -> Result<()> {
        expect_sizes(self.name(), size, 2)
    }
    fn level(&self, size: &[f64], y: [f64; 3]) -> f64 {
        let (a, b) = (size[0], size[1]);
        let s = ((y[0] / a).powi(2) + (y[1] / b).powi(2)).sqrt();
        // Scaled so the level is a length near the rim.
        ((s - 1.0) * a.min(b)).max(y[2].abs())
    }
    fn half_extents(&self, size: &[f64]) -> [f64; 3] {
        [size[0], size[1], 0.0]
    }
    fn circumradius(&self, size: &[f64]) -> f64 {
        size[0].max(size[1])
    }
}

pub fn shape_registry() -> &'static Registry<dyn PatchShape> {
    static REG: OnceLock<Registry<dyn PatchShape>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn PatchShape> = Registry::new("patch shape");
        let shapes: Vec<Box<dyn PatchShape>> =
            vec![Box::new(Ball), Box::new(FlatDisk), Box::new(FlatSquare), Box::new(FlatEllipse)];
        for s in shapes {
            r.register(s.name(), s).expect("shape names are unique");
        }
        r
    })
}

/// A patch: a registered shape, its generating lengths, its site, and the containment constant M.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub shape: String,
    pub size: Vec<f64>,
    pub center: [f64; 3],
    pub containment_m: f64,
}

impl PatchSpec {
    pub fn new(shape: &str, size: Vec<f64>, center: [f64; 3], containment_m: f64) -> Result<Self> {
        shape_registry().get(shape)?.validate(&size)?;
        if !(containment_m.is_finite() && containment_m > 0.0) {
            return Err(Error::invalid("containment constant M must be positive"));
        }
        Ok(PatchSpec { shape: shape.to_string(), size, center, containment_m })
    }

    pub fn shape(&self) -> Result<&'static dyn PatchShape> {
        shape_registry().get(&self.shape)
    }

    /// `M·ε^{(n−1)/(n−2)}`.
    pub fn containment_radius(&self, epsilon: f64, n: usize) -> f64 {
        self.containment_m * epsilon.powf((n as f64 - 1.0) / (n as f64 - 2.0))
    }

    pub fn circumradius(&self) -> Result<f64> {
        Ok(self.shape()?.circumradius(&self.size))
    }

    /// Geometric check that the patch lies in its containment ball.
    pub fn check_containment(&self, epsilon: f64, n: usize) -> Result<()> {
        let rc = self.circumradius()?;
        let rad = self.containment_radius(epsilon, n);
        if rc > rad * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "patch circumradius {rc} exceeds containment radius {rad}"
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: [f64; 3]) -> Result<bool> {
        let y = [x[0] - self.center[0], x[1] - self.center[1], x[2] - self.center[2]];
        Ok(self.shape()?.contains(&self.size, y))
    }
}
