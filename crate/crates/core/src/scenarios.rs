//! Experiment configurations and the pipeline that runs them.
//!
//! An [`ExperimentConfig`] is a single JSON document describing the grid,
//! region, coefficients, weight, boundary data, solver and analysis. The
//! presets at the bottom are the configurations shipped with the runner.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analyze::{analyze_free_boundary, AnalysisSettings, FreeBoundaryReport};
use crate::error::{invalid, Result};
use crate::field::{CoefficientField, Grid, Region, ScalarField, Shape};
use crate::minimize::{minimize, MinimizeProblem, MinimizerState, Settings, SolverChoice, StateSummary};
use crate::radial::RadialConfig;
use crate::weights::{BernoulliWeight, PlateauRule, WeightSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
}

impl GridSpec {
    pub fn cube(dim: usize, lo: f64, hi: f64, n: usize) -> Self {
        Self {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
            cells: vec![n; dim],
        }
    }

    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.lower.clone(), self.upper.clone(), self.cells.clone())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    #[default]
    Identity,
    Diagonal {
        values: Vec<f64>,
    },
    RandomSymmetric {
        lambda: f64,
        big_lambda: f64,
        seed: u64,
    },
}

impl CoefficientSpec {
    pub fn build(&self, region: Arc<Region>) -> Result<CoefficientField> {
        match self {
            Self::Identity => Ok(CoefficientField::identity(region)),
            Self::Diagonal { values } => CoefficientField::diagonal(region, values),
            Self::RandomSymmetric {
                lambda,
                big_lambda,
                seed,
            } => CoefficientField::random_symmetric(region, *lambda, *big_lambda, *seed),
        }
    }
}

/// Boundary data, evaluated at every region cell (interior values serve as
/// the starting guess only).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    Constant {
        value: f64,
    },
    /// `c + g·x`.
    Affine {
        constant: f64,
        gradient: Vec<f64>,
    },
    /// Zero on `B_radius(center)`, the radial harmonic function reaching `m`
    /// at distance `outer` beyond it.
    RadialProfile {
        center: Vec<f64>,
        radius: f64,
        outer: f64,
        m: f64,
    },
    /// Piecewise-linear in `|x − center|` through `(radii[k], values[k])`,
    /// constant beyond the ends.
    Table {
        center: Vec<f64>,
        radii: Vec<f64>,
        values: Vec<f64>,
    },
}

impl BoundarySpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let dist = |c: &[f64]| x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        match self {
            Self::Constant { value } => *value,
            Self::Affine { constant, gradient } => constant + x.iter().zip(gradient).map(|(a, b)| a * b).sum::<f64>(),
            Self::RadialProfile {
                center,
                radius,
                outer,
                m,
            } => radial_harmonic(x.len(), *radius, *outer, *m, dist(center)),
            Self::Table { center, radii, values } => table_lookup(radii, values, dist(center)),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let check_center = |c: &[f64]| {
            if c.len() == dim {
                Ok(())
            } else {
                Err(invalid("boundary center has the wrong dimension"))
            }
        };
        match self {
            Self::Constant { value } if !value.is_finite() => Err(invalid("boundary value must be finite")),
            Self::Affine { gradient, .. } if gradient.len() != dim => {
                Err(invalid("boundary gradient has the wrong dimension"))
            }
            Self::RadialProfile {
                center,
                radius,
                outer,
                ..
            } => {
                check_center(center)?;
                if !(*radius > 0.0 && outer > radius) {
                    return Err(invalid("radial profile needs 0 < radius < outer"));
                }
                Ok(())
            }
            Self::Table { center, radii, values } => {
                check_center(center)?;
                if radii.is_empty() || radii.len() != values.len() || radii.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("table needs matching, increasing radii and values"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Radial harmonic function vanishing at `r` and equal to `m` at `outer`,
/// zero inside `r`.
pub fn radial_harmonic(dim: usize, r: f64, outer: f64, m: f64, rho: f64) -> f64 {
    if rho <= r {
        return 0.0;
    }
    if dim == 2 {
        m * (rho / r).ln() / (outer / r).ln()
    } else {
        let e = 2.0 - dim as f64;
        m * (r.powf(e) - rho.powf(e)) / (r.powf(e) - outer.powf(e))
    }
}

fn table_lookup(radii: &[f64], values: &[f64], rho: f64) -> f64 {
    match radii.iter().position(|&r| r > rho) {
        None => values[values.len() - 1],
        Some(0) => values[0],
        Some(k) => {
            let t = (rho - radii[k - 1]) / (radii[k] - radii[k - 1]);
            values[k - 1] + t * (values[k] - values[k - 1])
        }
    }
}

fn default_region() -> Option<Shape> {
    None
}

/// One experiment, parsed from a single JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub grid: GridSpec,
    /// The whole grid when absent.
    #[serde(default = "default_region")]
    pub region: Option<Shape>,
    #[serde(default)]
    pub coefficients: CoefficientSpec,
    pub weight: WeightSpec,
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub solver: SolverChoice,
    #[serde(default)]
    pub settings: Settings,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    /// Output directory; the runner's `--output` takes precedence.
    #[serde(default)]
    pub output: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Pretty JSON with every default filled in.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Replaces the plateau rule of every annular weight.
    pub fn set_plateau_rule(&mut self, rule: PlateauRule) {
        fn visit(spec: &mut WeightSpec, rule: PlateauRule) {
            match spec {
                WeightSpec::AnnularRadial { plateau_rule, .. } => *plateau_rule = rule,
                WeightSpec::Rescaled { inner, .. } => visit(inner, rule),
                _ => {}
            }
        }
        visit(&mut self.weight, rule);
    }

    /// The radial comparison family when the weight is the annular one.
    pub fn radial_config(&self) -> Option<RadialConfig> {
        match &self.weight {
            WeightSpec::AnnularRadial {
                dim,
                q,
                m,
                plateau_rule,
            } => RadialConfig::new(*dim, *q, *m, *plateau_rule).ok(),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<MinimizeProblem> {
        let grid = self.grid.build()?;
        let dim = grid.dim();
        self.boundary.validate(dim)?;
        let region = Arc::new(match &self.region {
            Some(shape) => Region::new(grid, shape.clone())?,
            None => Region::full(grid),
        });
        let coeff = self.coefficients.build(region.clone())?;
        let weight = BernoulliWeight::new(self.weight.clone())?;
        let boundary = ScalarField::from_fn(region, |x| self.boundary.eval(x))?;
        Ok(MinimizeProblem::new(coeff, weight, boundary, self.gamma)?
            .with_solver(self.solver)
            .with_settings(self.settings.clone()))
    }
}

/// Extent of the zero phase about a center: `inner` is the distance to the
/// nearest positive cell, `outer` the distance to the farthest zero cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroBracket {
    pub inner: f64,
    pub outer: f64,
    pub zero_cells: usize,
    pub zero_volume: f64,
}

pub fn zero_bracket(state: &MinimizerState, center: &[f64]) -> ZeroBracket {
    let u = &state.u;
    let grid = u.grid();
    let dist = |i: usize| {
        grid.center(i)
            .iter()
            .zip(center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let (mut inner, mut outer, mut zeros) = (f64::INFINITY, 0.0f64, 0usize);
    for i in u.region().cells() {
        if state.positivity[i] {
            inner = inner.min(dist(i));
        } else {
            outer = outer.max(dist(i));
            zeros += 1;
        }
    }
    ZeroBracket {
        inner,
        outer,
        zero_cells: zeros,
        zero_volume: zeros as f64 * grid.cell_volume(),
    }
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: MinimizeProblem,
    pub state: MinimizerState,
    pub report: FreeBoundaryReport,
    pub summary: ExperimentSummary,
}

/// Scalar results of a run, echoed with the resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub state: StateSummary,
    pub free_boundary_points: usize,
    /// Zero-phase bracket about the region center, for ball regions.
    pub bracket: Option<ZeroBracket>,
    /// Radial-family optimum for the annular weight.
    pub radial_energy: Option<f64>,
    pub radial_radius: Option<f64>,
    pub config: ExperimentConfig,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment> {
    let problem = config.build()?;
    let state = minimize(&problem)?;
    let report = analyze_free_boundary(&state.u, problem.gamma, &config.analysis);
    let bracket = match &config.region {
        Some(Shape::Ball { center, .. }) => Some(zero_bracket(&state, center)),
        _ => None,
    };
    let radial = match config.radial_config() {
        Some(c) => Some(crate::radial::minimize_radial(&c, &problem.weight)?),
        None => None,
    };
    let summary = ExperimentSummary {
        name: config.name.clone(),
        state: state.summary(),
        free_boundary_points: report.boundary_points,
        bracket,
        radial_energy: radial.as_ref().map(|r| r.energy),
        radial_radius: radial.as_ref().map(|r| r.radius),
        config: config.clone(),
    };
    Ok(Experiment {
        config: config.clone(),
        problem,
        state,
        report,
        summary,
    })
}

/// The annular example on the unit ball of `ℝ^dim` with `n` cells per axis.
pub fn annular_preset(dim: usize, q: f64, m: f64, n: usize, rule: PlateauRule) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("annular_d{dim}_q{q}_m{m}_n{n}"),
        grid: GridSpec::cube(dim, -1.0, 1.0, n),
        region: Some(Shape::Ball {
            center: vec![0.0; dim],
            radius: 1.0,
        }),
        coefficients: CoefficientSpec::Identity,
        weight: WeightSpec::AnnularRadial {
            dim,
            q,
            m,
            plateau_rule: rule,
        },
        boundary: BoundarySpec::Constant { value: m },
        gamma: 0.0,
        solver: SolverChoice::Exact,
        settings: Settings::default(),
        analysis: AnalysisSettings::default(),
        output: None,
    }
}

/// A disk in the plane with constant data `m` and the given weight.
pub fn disk_preset(name: &str, n: usize, m: f64, weight: WeightSpec) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        grid: GridSpec::cube(2, -1.0, 1.0, n),
        region: Some(Shape::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        }),
        coefficients: CoefficientSpec::Identity,
        weight,
        boundary: BoundarySpec::Constant { value: m },
        gamma: 0.0,
        solver: SolverChoice::Exact,
        settings: Settings::default(),
        analysis: AnalysisSettings::default(),
        output: None,
    }
}
