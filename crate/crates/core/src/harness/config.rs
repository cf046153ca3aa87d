//! Experiment configuration (JSON) and the named field menu for g, φ, v and windows.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::capacity::CapacitySolverParams;
use crate::error::{Error, Result};
use crate::geometry::{DomainMode, LateralBc, PlacementScheme};
use crate::numerics::smoothstep5;
use crate::obstacle_field::ObstacleSpec;
use crate::pde::{Grid, SolveOptions};

/// Scalar fields on the unit cube selectable by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant { value: f64 },
    /// `a + b·z`.
    LinearZ { a: f64, b: f64 },
    /// `offset + amplitude·exp(−|x − center|²/width²)`.
    Bump { amplitude: f64, center: [f64; 3], width: f64, #[serde(default)] offset: f64 },
    /// `sin²(πx) sin²(πy)·(1 − s(z/depth))`: smooth, equal to the lateral profile near Σ and
    /// vanishing near Γ.
    SigmaWindow { depth: f64 },
}

impl FieldSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            FieldSpec::Constant { value } => value.is_finite(),
            FieldSpec::LinearZ { a, b } => a.is_finite() && b.is_finite(),
            FieldSpec::Bump { amplitude, width, offset, center } => {
                amplitude.is_finite() && offset.is_finite() && *width > 0.0 && center.iter().all(|c| c.is_finite())
            }
            FieldSpec::SigmaWindow { depth } => *depth > 0.0 && *depth < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad field parameters: {self:?}")))
        }
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        match *self {
            FieldSpec::Constant { value } => value,
            FieldSpec::LinearZ { a, b } => a + b * x[2],
            FieldSpec::Bump { amplitude, center, width, offset } => {
                let d2: f64 = (0..3).map(|i| (x[i] - center[i]).powi(2)).sum();
                offset + amplitude * (-d2 / (width * width)).exp()
            }
            FieldSpec::SigmaWindow { depth } => {
                let pi = std::f64::consts::PI;
                let lat = ((pi * x[0]).sin() * (pi * x[1]).sin()).powi(2);
                lat * (1.0 - smoothstep5(x[2] / depth).0)
            }
        }
    }

    /// `∫_Σ f dS` by the trapezoid rule on a 400² grid (exact for the closed forms in the menu
    /// up to roundoff except the bump).
    pub fn sigma_integral(&self) -> f64 {
        let m = 400;
        let h = 1.0 / m as f64;
        let mut s = 0.0;
        for j in 0..=m {
            for i in 0..=m {
                let w = if i == 0 || i == m { 0.5 } else { 1.0 } * if j == 0 || j == m { 0.5 } else { 1.0 };
                s += w * self.eval([i as f64 * h, j as f64 * h, 0.0]);
            }
        }
        s * h * h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    pub scheme: PlacementScheme,
    /// Pitch in units of ε.
    pub s: f64,
    pub seed: u64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig { scheme: PlacementScheme::Grid, s: 2.0, seed: 0 }
    }
}

/// How the homogenized density μ̂ is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LimitDensity {
    /// Analytic for lattices, fitted for random layouts.
    #[default]
    Auto,
    Analytic,
    Fitted,
}

/// Quadrature orders of the corrector suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub shell_radial: usize,
    pub shell_polar: usize,
    pub shell_azimuthal: usize,
    pub surface_radial: usize,
    pub surface_polar: usize,
    pub surface_azimuthal: usize,
    /// Radii and directions sampled in the bridge annulus.
    pub gap_radii: usize,
    pub gap_directions: usize,
    /// Run the stitching checks (needs a capacity solve for patches).
    pub stitching: bool,
    pub window: FieldSpec,
    pub test_field: FieldSpec,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            shell_radial: 24,
            shell_polar: 12,
            shell_azimuthal: 24,
            surface_radial: 24,
            surface_polar: 16,
            surface_azimuthal: 32,
            gap_radii: 16,
            gap_directions: 400,
            stitching: true,
            window: FieldSpec::SigmaWindow { depth: 0.5 },
            test_field: FieldSpec::Constant { value: 1.0 },
        }
    }
}

/// Thresholds of the pass/fail assertions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Assertions {
    pub l2_slope: f64,
    pub l2_slope_tol: f64,
    pub energy_variation: f64,
    pub concentration_tol: f64,
    pub second_term_slope: f64,
    pub third_term_relative: f64,
    pub stitch_factor: f64,
    pub stitched_energy_tol: f64,
    /// `‖u_ε − ū‖ ≤ l2_fraction·‖ū‖` at the smallest ε.
    pub l2_fraction: f64,
    pub kkt_tol: f64,
}

impl Default for Assertions {
    fn default() -> Self {
        Assertions {
            l2_slope: 3.0,
            l2_slope_tol: 0.3,
            energy_variation: 0.10,
            concentration_tol: 0.05,
            second_term_slope: 0.7,
            third_term_relative: 0.25,
            stitch_factor: 3.0,
            stitched_energy_tol: 0.10,
            l2_fraction: 0.05,
            kkt_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainMode,
    pub n: usize,
    pub lateral_bc: LateralBc,
    pub layout: LayoutConfig,
    pub obstacle: ObstacleSpec,
    pub r_tilde_bounds: (f64, f64),
    pub epsilons: Vec<f64>,
    /// Nodes per axis of the ε-grid, one per ε.
    pub grid_n: Vec<usize>,
    pub g: FieldSpec,
    pub phi: FieldSpec,
    pub limit_density: LimitDensity,
    pub solver: SolveOptions,
    pub capacity: CapacitySolverParams,
    pub suite: SuiteConfig,
    pub assertions: Assertions,
    /// Write wall times; off gives byte-identical reruns.
    pub timing: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            domain: DomainMode::Flat,
            n: 3,
            lateral_bc: LateralBc::Periodic,
            layout: LayoutConfig::default(),
            obstacle: ObstacleSpec::ModelBalls { r_tilde: 2.0 },
            r_tilde_bounds: (0.1, 10.0),
            epsilons: vec![0.25, 1.0 / 6.0, 0.125],
            grid_n: vec![33, 73, 129],
            g: FieldSpec::Constant { value: 0.0 },
            phi: FieldSpec::Constant { value: 1.0 },
            limit_density: LimitDensity::Auto,
            solver: SolveOptions {
                solver: "projected-sor-redblack".into(),
                relaxation: crate::pde::Relaxation::Auto,
                ..SolveOptions::default()
            },
            capacity: CapacitySolverParams::default(),
            suite: SuiteConfig::default(),
            assertions: Assertions::default(),
            timing: true,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::invalid("n must be at least 3"));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return Err(Error::invalid("ε list must be non-empty with values in (0, 1)"));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("ε list must be strictly decreasing"));
        }
        if !self.grid_n.is_empty() && self.grid_n.len() != self.epsilons.len() {
            return Err(Error::invalid("grid_n needs one entry per ε"));
        }
        if self.r_tilde_bounds.0 > self.r_tilde_bounds.1 {
            return Err(Error::invalid("r_tilde_bounds must be ordered"));
        }
        for f in [&self.g, &self.phi, &self.suite.window, &self.suite.test_field] {
            f.validate()?;
        }
        Ok(())
    }

    /// Every (ε, N) pair must satisfy `h ≤ r_ε/3`; `feature` maps ε to the smallest obstacle
    /// length. Returns the offending pairs.
    pub fn resolution_violations(&self, feature: impl Fn(f64) -> f64) -> Vec<(f64, usize)> {
        self.epsilons
            .iter()
            .zip(&self.grid_n)
            .filter(|(e, n)| {
                let h = Grid::new(**n, self.lateral_bc).map(|g| g.h()).unwrap_or(f64::INFINITY);
                h > feature(**e) / 3.0 * (1.0 + 1e-12)
            })
            .map(|(e, n)| (*e, *n))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrip() {
        let c = ExperimentConfig::default();
        let text = c.to_json().unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_json(r#"{"epsilons": [0.1, 0.2], "grid_n": [5, 5]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"epsilons": [0.1], "grid_n": []}"#).is_ok());
    }

    #[test]
    fn window_integral() {
        let w = FieldSpec::SigmaWindow { depth: 0.5 };
        assert!((w.sigma_integral() - 0.25).abs() < 1e-12);
        assert_eq!(w.eval([0.5, 0.5, 0.6]), 0.0);
    }

    #[test]
    fn slab_rows_are_resolved() {
        let c = ExperimentConfig::default();
        assert!(c.resolution_violations(|e| 2.0 * e * e).is_empty());
        assert_eq!(c.resolution_violations(|e| e * e).len(), 3);
    }
}
