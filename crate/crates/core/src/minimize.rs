//! Minimization of `J(u) = D(u) + Σ φ̄_i·|cell|·1{u_i > γ}` with fixed data.
//!
//! Two solvers are provided. [`minimize_smoothed`] replaces the indicator by
//! a smooth step of width `ε` and follows a continuation in `ε` with
//! preconditioned nonlinear conjugate gradients. [`minimize_exact`] works on
//! the discrete functional itself: cells are either held at `γ` ("pinned")
//! or free, free cells are A-harmonic, and set moves are accepted only when
//! they lower the energy.
//!
//! Only cells whose whole `3^d` block lies in the region are unknowns; the
//! rest of the region carries the boundary data. Cells with an infinite
//! weight average are held at `γ`.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elliptic::DiscreteForm;
use crate::error::{invalid, Error, Result};
use crate::field::{CoefficientField, Grid, Region, ScalarField, Shape};
use crate::weights::{BernoulliWeight, WeightSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Smoothed,
    #[default]
    Exact,
    Both,
}

/// Tolerances and schedules shared by both solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Relative residual of every linear solve.
    pub tolerance: f64,
    /// `η_pos` as a fraction of `max g − γ`.
    pub positivity_tolerance: f64,
    /// `η_dec` as a fraction of the starting energy.
    pub decrease_tolerance: f64,
    /// Outer iterations of the exact solver.
    pub max_outer: usize,
    /// Initial smoothing width; `2(max g − γ)` when absent.
    pub eps0: Option<f64>,
    /// Number of halvings of the smoothing width.
    pub levels: usize,
    /// Descent iterations per smoothing level.
    pub max_descent: usize,
    /// Relative preconditioned gradient norm ending a smoothing level.
    pub gradient_tolerance: f64,
    /// Also run the exact solver from the all-pinned state.
    pub void_start: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            positivity_tolerance: 1e-9,
            decrease_tolerance: 1e-10,
            max_outer: 200,
            eps0: None,
            levels: 12,
            max_descent: 2000,
            gradient_tolerance: 1e-6,
            void_start: true,
        }
    }
}

/// Data of one minimization.
#[derive(Clone, Debug)]
pub struct MinimizeProblem {
    pub coeff: CoefficientField,
    pub weight: BernoulliWeight,
    /// Boundary data on the region; values on unknown cells are ignored
    /// except as a starting guess.
    pub boundary: ScalarField,
    pub gamma: f64,
    pub solver: SolverChoice,
    pub settings: Settings,
}

impl MinimizeProblem {
    pub fn new(coeff: CoefficientField, weight: BernoulliWeight, boundary: ScalarField, gamma: f64) -> Result<Self> {
        let p = Self {
            coeff,
            weight,
            boundary,
            gamma,
            solver: SolverChoice::default(),
            settings: Settings::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_solver(mut self, solver: SolverChoice) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_settings(mut self, settings: Settings) -> Self {
        self.settings = settings;
        self
    }

    pub fn region(&self) -> &Arc<Region> {
        self.coeff.region()
    }

    pub fn grid(&self) -> &Grid {
        self.region().grid()
    }

    fn validate(&self) -> Result<()> {
        let region = self.region();
        if self.boundary.grid() != region.grid() {
            return Err(Error::MaskMismatch("boundary data live on another grid".into()));
        }
        if !self.boundary.region().includes(region) {
            return Err(Error::MaskMismatch("boundary data must cover the region".into()));
        }
        if !self.gamma.is_finite() {
            return Err(invalid("gamma must be finite"));
        }
        if region.interior().iter().all(|&b| !b) {
            return Err(invalid("region has no interior cells"));
        }
        let s = &self.settings;
        if !(s.tolerance > 1e-14 && s.tolerance < 1e-2) {
            return Err(invalid("tolerance must lie in (1e-14, 1e-2)"));
        }
        if !(s.positivity_tolerance >= 0.0 && s.decrease_tolerance >= 0.0) {
            return Err(invalid("tolerances must be non-negative"));
        }
        Ok(())
    }

    /// Largest boundary value.
    pub fn max_boundary(&self) -> f64 {
        let interior = self.region().interior();
        self.region()
            .cells()
            .filter(|&i| !interior[i])
            .map(|i| self.boundary.values()[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `η_pos`, the margin above `γ` that counts as positive.
    pub fn positivity_margin(&self) -> f64 {
        positivity_margin(self.max_boundary(), self.gamma, self.settings.positivity_tolerance)
    }
}

fn positivity_margin(max: f64, gamma: f64, rel: f64) -> f64 {
    let span = max - gamma;
    if span > 0.0 {
        rel * span
    } else {
        0.0
    }
}

/// Output of a solver.
#[derive(Clone, Debug)]
pub struct MinimizerState {
    pub u: ScalarField,
    pub energy: f64,
    pub dirichlet: f64,
    /// Per grid cell: `u > γ + η_pos` on the region.
    pub positivity: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    /// Energy after every accepted step, starting with the initial state.
    pub trace: Vec<f64>,
    pub accepted_moves: usize,
    pub solver: &'static str,
}

/// JSON-friendly summary of a [`MinimizerState`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub solver: String,
    pub energy: f64,
    pub dirichlet: f64,
    pub positive_cells: usize,
    pub zero_cells: usize,
    pub iterations: usize,
    pub converged: bool,
    pub accepted_moves: usize,
}

impl MinimizerState {
    pub fn summary(&self) -> StateSummary {
        let region = self.u.region();
        let positive = region.cells().filter(|&i| self.positivity[i]).count();
        StateSummary {
            solver: self.solver.to_string(),
            energy: self.energy,
            dirichlet: self.dirichlet,
            positive_cells: positive,
            zero_cells: region.cell_count() - positive,
            iterations: self.iterations,
            converged: self.converged,
            accepted_moves: self.accepted_moves,
        }
    }

    /// Region cells in the zero phase.
    pub fn zero_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.u.region().cells().filter(|&i| !self.positivity[i])
    }
}

/// `J(u)` with `η_pos = 10⁻⁹·(max u − γ)`; `+∞` when a cell with infinite
/// weight average is positive.
pub fn energy(u: &ScalarField, coeff: &CoefficientField, w: &BernoulliWeight, gamma: f64) -> Result<f64> {
    let eta = positivity_margin(u.max_on_mask(), gamma, Settings::default().positivity_tolerance);
    energy_with_margin(u, coeff, w, gamma, eta)
}

pub fn energy_with_margin(
    u: &ScalarField,
    coeff: &CoefficientField,
    w: &BernoulliWeight,
    gamma: f64,
    eta: f64,
) -> Result<f64> {
    check_cover(u, coeff)?;
    let form = DiscreteForm::new(coeff);
    let phi = w.cell_averages(u.grid());
    let vol = u.grid().cell_volume();
    Ok(form.energy(u.values()) + indicator(coeff.region(), u.values(), &phi, vol, gamma, eta))
}

/// `J` restricted to `B_r(x₀)`: every element and indicator cell counts
/// with the fraction of its box that lies in the ball.
pub fn local_energy(
    u: &ScalarField,
    coeff: &CoefficientField,
    w: &BernoulliWeight,
    gamma: f64,
    center: &[f64],
    radius: f64,
) -> Result<f64> {
    check_cover(u, coeff)?;
    let grid = u.grid();
    if center.len() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            found: center.len(),
        });
    }
    let form = DiscreteForm::new(coeff);
    let h = grid.spacing();
    let cover = |lo: &[f64]| {
        let hi: Vec<f64> = lo.iter().zip(h).map(|(a, b)| a + b).collect();
        ball_fraction(lo, &hi, center, radius)
    };
    let mut lo = vec![0.0; grid.dim()];
    let mut dirichlet = 0.0;
    for &e in form.elements() {
        grid.center_into(e, &mut lo);
        let f = cover(&lo);
        if f > 0.0 {
            dirichlet += f * form.energy_over(&[e], u.values());
        }
    }
    let phi = w.cell_averages(grid);
    let eta = positivity_margin(u.max_on_mask(), gamma, Settings::default().positivity_tolerance);
    let vol = grid.cell_volume();
    let mut indicator = 0.0;
    for i in coeff.region().cells().filter(|&i| u.values()[i] > gamma + eta) {
        let (cell_lo, _) = grid.cell_bounds(i);
        let f = cover(&cell_lo);
        if f > 0.0 {
            indicator += f * phi[i] * vol;
        }
    }
    Ok(dirichlet + indicator)
}

/// Fraction of the box `[lo, hi]` inside the open ball, exact for boxes
/// entirely inside or outside and sampled on a midpoint lattice otherwise.
fn ball_fraction(lo: &[f64], hi: &[f64], center: &[f64], radius: f64) -> f64 {
    let (mut near, mut far) = (0.0, 0.0);
    for k in 0..lo.len() {
        let c = center[k];
        let gap = (lo[k] - c).max(c - hi[k]).max(0.0);
        let reach = (lo[k] - c).abs().max((hi[k] - c).abs());
        near += gap * gap;
        far += reach * reach;
    }
    let r2 = radius * radius;
    if far < r2 {
        return 1.0;
    }
    if near >= r2 {
        return 0.0;
    }
    const SAMPLES: usize = 16;
    let d = lo.len();
    let total = SAMPLES.pow(d as u32);
    let mut hits = 0usize;
    for flat in 0..total {
        let mut rest = flat;
        let mut dist = 0.0;
        for k in 0..d {
            let t = (rest % SAMPLES) as f64 + 0.5;
            rest /= SAMPLES;
            let x = lo[k] + (hi[k] - lo[k]) * t / SAMPLES as f64;
            dist += (x - center[k]).powi(2);
        }
        if dist < r2 {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

fn check_cover(u: &ScalarField, coeff: &CoefficientField) -> Result<()> {
    if u.grid() != coeff.region().grid() {
        return Err(Error::MaskMismatch("field and coefficients live on different grids".into()));
    }
    if !u.region().includes(coeff.region()) {
        return Err(Error::MaskMismatch("field does not cover the coefficient region".into()));
    }
    Ok(())
}

fn indicator(region: &Region, values: &[f64], phi: &[f64], vol: f64, gamma: f64, eta: f64) -> f64 {
    region
        .cells()
        .filter(|&i| values[i] > gamma + eta)
        .map(|i| phi[i] * vol)
        .sum()
}

/// Precomputed data shared by the solvers.
struct Context<'a> {
    p: &'a MinimizeProblem,
    form: DiscreteForm,
    /// `φ̄_i·|cell|`, infinite on forced cells.
    cost: Vec<f64>,
    /// Unknown-capable cells: interior and finite weight.
    capable: Vec<bool>,
    gamma: f64,
    eta: f64,
}

impl<'a> Context<'a> {
    fn new(p: &'a MinimizeProblem) -> Result<Self> {
        p.validate()?;
        let form = DiscreteForm::new(&p.coeff);
        let vol = p.grid().cell_volume();
        let cost: Vec<f64> = p.weight.cell_averages(p.grid()).iter().map(|v| v * vol).collect();
        let capable = form
            .interior()
            .iter()
            .zip(&cost)
            .map(|(&inside, c)| inside && c.is_finite())
            .collect();
        Ok(Self {
            p,
            form,
            cost,
            capable,
            gamma: p.gamma,
            eta: p.positivity_margin(),
        })
    }

    fn region(&self) -> &Region {
        self.p.region()
    }

    fn positive(&self, v: f64) -> bool {
        v > self.gamma + self.eta
    }

    fn indicator(&self, values: &[f64]) -> f64 {
        self.region()
            .cells()
            .filter(|&i| self.positive(values[i]))
            .map(|i| self.cost[i])
            .sum()
    }

    fn energy(&self, values: &[f64]) -> (f64, f64) {
        let d = self.form.energy(values);
        (d + self.indicator(values), d)
    }

    /// Initial values: boundary data with forced cells held at `γ`.
    fn initial_values(&self) -> Vec<f64> {
        let mut v = self.p.boundary.values().to_vec();
        for i in self.region().cells() {
            if self.form.interior()[i] && !self.capable[i] {
                v[i] = self.gamma;
            }
        }
        v
    }

    /// Solves for the free cells, holding pinned capable cells at `γ`.
    fn harmonic(&self, values: &mut [f64], pinned: &[bool]) -> Result<()> {
        let mut unknowns = Vec::new();
        for i in self.region().cells() {
            if self.capable[i] {
                if pinned[i] {
                    values[i] = self.gamma;
                } else {
                    unknowns.push(i);
                }
            }
        }
        self.form
            .subsystem(unknowns)
            .solve(values, self.p.settings.tolerance)
            .map(|_| ())
    }

    fn has_neighbor(&self, i: usize, pred: impl Fn(usize) -> bool) -> bool {
        let grid = self.p.grid();
        (0..grid.dim()).any(|k| {
            [false, true]
                .into_iter()
                .any(|fwd| grid.neighbor(i, k, fwd).is_some_and(|j| self.region().contains(j) && pred(j)))
        })
    }

    fn state(&self, values: Vec<f64>, iterations: usize, converged: bool, trace: Vec<f64>, moves: usize, solver: &'static str) -> MinimizerState {
        let (energy, dirichlet) = self.energy(&values);
        let positivity = (0..values.len())
            .map(|i| self.region().contains(i) && self.positive(values[i]))
            .collect();
        MinimizerState {
            u: ScalarField::from_raw(self.p.region().clone(), values),
            energy,
            dirichlet,
            positivity,
            iterations,
            converged,
            trace,
            accepted_moves: moves,
            solver,
        }
    }
}

/// Runs the solver(s) selected in the problem. With [`SolverChoice::Both`]
/// the lower-energy state is returned.
pub fn minimize(p: &MinimizeProblem) -> Result<MinimizerState> {
    match p.solver {
        SolverChoice::Smoothed => minimize_smoothed(p),
        SolverChoice::Exact => minimize_exact(p),
        SolverChoice::Both => {
            // polish the smoothed state with set descent as well
            let a = minimize_smoothed(p)?;
            let b = minimize_exact(p)?;
            let c = minimize_exact_from(p, &a.u)?;
            Ok([a, b, c]
                .into_iter()
                .min_by(|x, y| x.energy.total_cmp(&y.energy))
                .expect("three candidates"))
        }
    }
}

// ---------------------------------------------------------------------------
// Smoothed continuation

/// `Φ(s) = 3s² − 2s³` on `[0, 1]`, clamped outside, and its derivative.
fn smooth_step(s: f64) -> (f64, f64) {
    if s <= 0.0 {
        (0.0, 0.0)
    } else if s >= 1.0 {
        (1.0, 0.0)
    } else {
        (s * s * (3.0 - 2.0 * s), 6.0 * s * (1.0 - s))
    }
}

/// `J_ε(u) = D(u) + Σ φ̄_i·|cell|·Φ((u_i − γ)/ε)` over the free cells of a
/// problem.
pub struct SmoothedObjective<'a> {
    ctx: Context<'a>,
    eps: f64,
    unknowns: Vec<usize>,
}

impl<'a> SmoothedObjective<'a> {
    pub fn new(p: &'a MinimizeProblem, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(invalid("smoothing width must be positive"));
        }
        let ctx = Context::new(p)?;
        let unknowns = p.region().cells().filter(|&i| ctx.capable[i]).collect();
        Ok(Self { ctx, eps, unknowns })
    }

    /// Cells the objective is differentiated in.
    pub fn unknowns(&self) -> &[usize] {
        &self.unknowns
    }

    fn step_cost(&self, i: usize, v: f64) -> f64 {
        let c = self.ctx.cost[i];
        if c == 0.0 {
            0.0
        } else {
            c * smooth_step((v - self.ctx.gamma) / self.eps).0
        }
    }

    fn smooth_indicator(&self, values: &[f64]) -> f64 {
        self.ctx
            .region()
            .cells()
            .map(|i| {
                if self.ctx.capable[i] {
                    self.step_cost(i, values[i])
                } else if self.ctx.cost[i].is_finite() {
                    // fixed cells contribute a constant
                    self.step_cost(i, values[i])
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn value(&self, values: &[f64]) -> f64 {
        self.ctx.form.energy(values) + self.smooth_indicator(values)
    }

    /// Gradient with respect to every grid cell (zero off the unknowns).
    pub fn gradient(&self, values: &[f64]) -> Vec<f64> {
        let ku = self.ctx.form.apply(values);
        let mut g = vec![0.0; values.len()];
        for &i in &self.unknowns {
            g[i] = self.partial(i, values[i], ku[i]);
        }
        g
    }

    fn partial(&self, i: usize, v: f64, ku: f64) -> f64 {
        let c = self.ctx.cost[i];
        let slope = if c == 0.0 {
            0.0
        } else {
            c * smooth_step((v - self.ctx.gamma) / self.eps).1 / self.eps
        };
        2.0 * ku + slope
    }

    /// The part of `J_ε` that depends on `values[cell]`: the Dirichlet
    /// energy of the elements touching it plus its own step term.
    pub fn local_value(&self, values: &[f64], cell: usize) -> f64 {
        let elems = self.ctx.form.elements_touching(&[cell]);
        self.ctx.form.energy_over(&elems, values) + self.step_cost(cell, values[cell])
    }

    /// Largest relative mismatch between the gradient and finite
    /// differences of [`local_value`](Self::local_value) at `count` random
    /// unknowns.
    ///
    /// Errors are measured against the largest term magnitude of any
    /// partial derivative (`4·K_ii·|u_i|` for the Dirichlet part plus the
    /// step slope), which stays meaningful at stationary points where the
    /// gradient vanishes. Both terms are piecewise cubic in a single
    /// coordinate, so fourth-order central stencils are used away from the
    /// kinks of the step profile and third-order one-sided stencils that
    /// stay on one side of a kink are used next to it.
    pub fn gradient_check(&self, values: &[f64], count: usize, seed: u64) -> f64 {
        if self.unknowns.is_empty() {
            return 0.0;
        }
        let ku = self.ctx.form.apply(values);
        let scale = self
            .unknowns
            .iter()
            .map(|&i| {
                let slope = self.partial(i, values[i], ku[i]) - 2.0 * ku[i];
                4.0 * self.ctx.form.diagonal_entry(i) * values[i].abs() + slope.abs()
            })
            .fold(0.0, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut work = values.to_vec();
        let mut worst: f64 = 0.0;
        let h = 1e-4 * self.eps;
        for _ in 0..count {
            let i = self.unknowns[rng.gen_range(0..self.unknowns.len())];
            let v = values[i];
            let g = self.partial(i, v, ku[i]);
            let mut f = |x: f64| {
                work[i] = x;
                let out = self.local_value(&work, i);
                work[i] = v;
                out
            };
            let s = (v - self.ctx.gamma) / self.eps;
            let kink = if (s - 0.5).abs() < 0.5 { s.round() } else if s <= 0.0 { 0.0 } else { 1.0 };
            let mut estimates = Vec::with_capacity(2);
            if (s - kink).abs() * self.eps >= 2.0 * h {
                estimates.push((f(v - 2.0 * h) - 8.0 * f(v - h) + 8.0 * f(v + h) - f(v + 2.0 * h)) / (12.0 * h));
            } else {
                let f0 = f(v);
                if s >= kink {
                    estimates.push(
                        (-11.0 * f0 + 18.0 * f(v + h) - 9.0 * f(v + 2.0 * h) + 2.0 * f(v + 3.0 * h)) / (6.0 * h),
                    );
                }
                if s <= kink {
                    estimates.push(
                        (11.0 * f0 - 18.0 * f(v - h) + 9.0 * f(v - 2.0 * h) - 2.0 * f(v - 3.0 * h)) / (6.0 * h),
                    );
                }
            }
            for fd in estimates {
                let err = (fd - g).abs();
                worst = worst.max(if scale > 0.0 { err / scale } else { err });
            }
        }
        worst
    }
}

/// Continuation in the smoothing width with preconditioned Polak–Ribière
/// conjugate gradients and backtracking line search at every level.
pub fn minimize_smoothed(p: &MinimizeProblem) -> Result<MinimizerState> {
    let mut obj = SmoothedObjective::new(p, 1.0)?;
    let mut values = obj.ctx.initial_values();
    let none = vec![false; values.len()];
    obj.ctx.harmonic(&mut values, &none)?;
    let span = (p.max_boundary() - p.gamma).max(0.0);
    let eps0 = p.settings.eps0.unwrap_or(2.0 * span);
    let start = values.clone();
    let mut trace = vec![obj.ctx.energy(&values).0];
    let mut iterations = 0;
    let mut converged = true;
    if eps0 > 0.0 && !obj.unknowns.is_empty() {
        let inv_diag: Vec<f64> = obj
            .unknowns
            .iter()
            .map(|&i| 0.5 / obj.ctx.form.diagonal_entry(i))
            .collect();
        for level in 0..=p.settings.levels {
            obj.eps = eps0 * 0.5f64.powi(level as i32);
            let (iters, ok) = descend(&obj, &mut values, &inv_diag, &p.settings);
            iterations += iters;
            converged &= ok;
            trace.push(obj.ctx.energy(&values).0);
        }
        // Sharpen: pin cells still inside the final transition band and
        // re-solve the rest, keeping whichever state is lower.
        let ctx = &obj.ctx;
        let band = ctx.gamma + obj.eps;
        let pinned: Vec<bool> = (0..values.len())
            .map(|i| ctx.capable[i] && values[i] <= band)
            .collect();
        let mut sharp = values.clone();
        if ctx.harmonic(&mut sharp, &pinned).is_ok() && ctx.energy(&sharp).0 <= ctx.energy(&values).0 {
            values = sharp;
            trace.push(ctx.energy(&values).0);
        }
        // Continuation can slide into a zero phase that costs more than it
        // saves; never return anything worse than the harmonic start.
        if ctx.energy(&start).0 < ctx.energy(&values).0 {
            values = start;
            trace.push(ctx.energy(&values).0);
        }
    }
    Ok(obj.ctx.state(values, iterations, converged, trace, 0, "smoothed"))
}

/// One smoothing level. Returns the iteration count and whether the
/// gradient criterion was met without a line-search stall.
fn descend(obj: &SmoothedObjective, values: &mut [f64], inv_diag: &[f64], s: &Settings) -> (usize, bool) {
    let form = &obj.ctx.form;
    let unknowns = &obj.unknowns;
    let n = unknowns.len();
    let mut ku = form.apply(values);
    let grad = |values: &[f64], ku: &[f64]| -> Vec<f64> {
        unknowns
            .iter()
            .map(|&i| obj.partial(i, values[i], ku[i]))
            .collect::<Vec<f64>>()
    };
    let mut g = grad(values, &ku);
    let mut z: Vec<f64> = g.iter().zip(inv_diag).map(|(a, m)| a * m).collect();
    let mut gz: f64 = g.iter().zip(&z).map(|(a, b)| a * b).sum();
    let target = s.gradient_tolerance * gz.max(0.0).sqrt();
    let mut dir: Vec<f64> = z.iter().map(|v| -v).collect();
    let mut full = vec![0.0; values.len()];
    let mut dirichlet: f64 = values.iter().zip(&ku).map(|(a, b)| a * b).sum();
    let mut current = dirichlet + obj.smooth_indicator(values);
    let mut stalls = 0;
    for it in 0..s.max_descent {
        if gz.max(0.0).sqrt() <= target || gz == 0.0 {
            return (it, true);
        }
        let mut slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            dir = z.iter().map(|v| -v).collect();
            slope = -gz;
        }
        for (l, &i) in unknowns.iter().enumerate() {
            full[i] = dir[l];
        }
        let kd = form.apply(&full);
        let dkd: f64 = unknowns.iter().enumerate().map(|(l, &i)| dir[l] * kd[i]).sum();
        let dku: f64 = unknowns.iter().enumerate().map(|(l, &i)| dir[l] * ku[i]).sum();
        // D(u + αd) = D + 2α dᵀKu + α² dᵀKd; the indicator is evaluated
        // directly.
        let trial = |alpha: f64, values: &[f64]| -> f64 {
            let d = dirichlet + 2.0 * alpha * dku + alpha * alpha * dkd;
            let mut delta = 0.0;
            for (l, &i) in unknowns.iter().enumerate() {
                delta += obj.step_cost(i, values[i] + alpha * dir[l]) - obj.step_cost(i, values[i]);
            }
            d + obj.smooth_indicator_fixed() + delta + obj.smooth_free(values)
        };
        let mut alpha = if dkd > 0.0 { -slope / (2.0 * dkd) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let e = trial(alpha, values);
            if e <= current + 1e-4 * alpha * slope {
                accepted = Some(e);
                break;
            }
            alpha *= 0.5;
        }
        let Some(e) = accepted else {
            stalls += 1;
            if stalls >= 2 {
                // a slope below what the sufficient-decrease test can
                // resolve means the level is solved to roundoff
                return (it, -slope <= 64.0 * f64::EPSILON * current.abs().max(1.0));
            }
            dir = z.iter().map(|v| -v).collect();
            continue;
        };
        stalls = 0;
        for (l, &i) in unknowns.iter().enumerate() {
            values[i] += alpha * dir[l];
            full[i] = 0.0;
        }
        for (k, v) in ku.iter_mut().zip(&kd) {
            *k += alpha * v;
        }
        dirichlet += 2.0 * alpha * dku + alpha * alpha * dkd;
        let decrease = current - e;
        current = e;
        let g_new = grad(values, &ku);
        let z_new: Vec<f64> = g_new.iter().zip(inv_diag).map(|(a, m)| a * m).collect();
        let gz_new: f64 = g_new.iter().zip(&z_new).map(|(a, b)| a * b).sum();
        let cross: f64 = g_new.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = ((gz_new - cross) / gz).max(0.0);
        for l in 0..n {
            dir[l] = -z_new[l] + beta * dir[l];
        }
        g = g_new;
        z = z_new;
        gz = gz_new;
        if decrease <= 1e-15 * current.abs() {
            return (it + 1, true);
        }
    }
    (s.max_descent, false)
}

impl SmoothedObjective<'_> {
    /// Step terms of cells that never move.
    fn smooth_indicator_fixed(&self) -> f64 {
        let values = self.ctx.p.boundary.values();
        self.ctx
            .region()
            .cells()
            .filter(|&i| !self.ctx.capable[i] && self.ctx.cost[i].is_finite())
            .map(|i| {
                let v = if self.ctx.form.interior()[i] { self.ctx.gamma } else { values[i] };
                self.step_cost(i, v)
            })
            .sum()
    }

    /// Step terms of the unknowns at `values`.
    fn smooth_free(&self, values: &[f64]) -> f64 {
        self.unknowns.iter().map(|&i| self.step_cost(i, values[i])).sum()
    }
}

// ---------------------------------------------------------------------------
// Exact set descent

struct Descent<'c, 'a> {
    ctx: &'c Context<'a>,
    values: Vec<f64>,
    pinned: Vec<bool>,
    energy: f64,
    eta_dec: f64,
    trace: Vec<f64>,
    moves: usize,
    column: Vec<(usize, f64)>,
    /// Layers freed per growth move; doubles while growth keeps paying off.
    grow_width: usize,
}

impl<'c, 'a> Descent<'c, 'a> {
    fn new(ctx: &'c Context<'a>, values: Vec<f64>, pinned: Vec<bool>, eta_dec: f64) -> Self {
        let energy = ctx.energy(&values).0;
        Self {
            ctx,
            values,
            pinned,
            energy,
            eta_dec,
            trace: vec![energy],
            moves: 0,
            column: Vec::new(),
            grow_width: 1,
        }
    }

    /// Accepts `values` if it does not raise the energy; counts it as a move
    /// when the decrease exceeds `η_dec`.
    fn offer(&mut self, values: Vec<f64>, pinned: Vec<bool>) -> bool {
        let e = self.ctx.energy(&values).0;
        if e <= self.energy {
            let counted = e < self.energy - self.eta_dec;
            self.values = values;
            self.pinned = pinned;
            self.energy = e;
            self.trace.push(e);
            if counted {
                self.moves += 1;
            }
            counted
        } else {
            false
        }
    }

    fn harmonic_phase(&mut self) -> bool {
        let mut v = self.values.clone();
        if self.ctx.harmonic(&mut v, &self.pinned).is_err() {
            return false;
        }
        let pinned = self.pinned.clone();
        self.offer(v, pinned)
    }

    /// Pins the low components of the positive phase, one threshold at a
    /// time.
    fn collapse_ladder(&mut self) -> bool {
        let mut any = false;
        let ctx = self.ctx;
        let top = ctx.region().cells().map(|i| self.values[i]).fold(f64::NEG_INFINITY, f64::max);
        let span = top - ctx.gamma;
        if !(span > 0.0) {
            return false;
        }
        let interior = ctx.form.interior();
        for j in 1..=16 {
            let t = ctx.gamma + span * 0.5f64.powi(j);
            let low: Vec<bool> = (0..self.values.len())
                .map(|i| ctx.capable[i] && !self.pinned[i] && ctx.positive(self.values[i]) && self.values[i] < t)
                .collect();
            let mut pin = Vec::new();
            for comp in components(ctx.p.grid(), &low) {
                let touches_boundary = comp.iter().any(|&i| {
                    ctx.has_neighbor(i, |k| !interior[k])
                });
                if !touches_boundary {
                    pin.extend(comp);
                }
            }
            if pin.is_empty() {
                continue;
            }
            let mut v = self.values.clone();
            let mut pinned = self.pinned.clone();
            for &i in &pin {
                v[i] = ctx.gamma;
                pinned[i] = true;
            }
            any |= self.offer(v, pinned);
        }
        any
    }

    /// Frees the pinned cells within `grow_width` layers of the positive
    /// phase, then pins every positive free cell touching the zero phase,
    /// re-solving after each. The growth width doubles after an accepted
    /// growth and falls back to one layer after a rejected one.
    fn layer_moves(&mut self) -> bool {
        let ctx = self.ctx;
        let mut any = false;
        loop {
            let grow = self.growth_layers(self.grow_width);
            if grow.is_empty() {
                break;
            }
            let mut pinned = self.pinned.clone();
            for &i in &grow {
                pinned[i] = false;
            }
            let mut v = self.values.clone();
            let accepted = ctx.harmonic(&mut v, &pinned).is_ok() && self.offer(v, pinned);
            any |= accepted;
            if accepted {
                self.grow_width *= 2;
                break;
            }
            if self.grow_width == 1 {
                break;
            }
            self.grow_width = 1;
        }
        let peel: Vec<usize> = ctx
            .region()
            .cells()
            .filter(|&i| {
                ctx.capable[i]
                    && !self.pinned[i]
                    && ctx.positive(self.values[i])
                    && ctx.has_neighbor(i, |j| !ctx.positive(self.values[j]))
            })
            .collect();
        if !peel.is_empty() {
            let mut pinned = self.pinned.clone();
            for &i in &peel {
                pinned[i] = true;
            }
            let mut v = self.values.clone();
            if ctx.harmonic(&mut v, &pinned).is_ok() {
                any |= self.offer(v, pinned);
            }
        }
        any
    }

    /// Pinned capable cells reachable from the positive phase in at most
    /// `width` face steps through pinned cells.
    fn growth_layers(&self, width: usize) -> Vec<usize> {
        let ctx = self.ctx;
        let grid = ctx.p.grid();
        let mut front: Vec<usize> = ctx
            .region()
            .cells()
            .filter(|&i| ctx.capable[i] && self.pinned[i] && ctx.has_neighbor(i, |j| ctx.positive(self.values[j])))
            .collect();
        let mut taken = vec![false; self.values.len()];
        for &i in &front {
            taken[i] = true;
        }
        let mut out = front.clone();
        for _ in 1..width {
            let mut next = Vec::new();
            for &i in &front {
                for k in 0..grid.dim() {
                    for fwd in [false, true] {
                        if let Some(j) = grid.neighbor(i, k, fwd) {
                            if !taken[j] && ctx.capable[j] && self.pinned[j] {
                                taken[j] = true;
                                next.push(j);
                            }
                        }
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            out.extend_from_slice(&next);
            front = next;
        }
        out
    }

    /// Single-cell growth and peeling in lexicographic order, with exact
    /// incremental energy changes.
    fn cell_sweep(&mut self) -> bool {
        let ctx = self.ctx;
        let form = &ctx.form;
        let mut ku = form.apply(&self.values);
        let mut any = false;
        let cells: Vec<usize> = ctx.region().cells().filter(|&i| ctx.capable[i]).collect();
        for i in cells {
            let v = self.values[i];
            let was_positive = ctx.positive(v);
            let (delta, pin) = if self.pinned[i] {
                if !ctx.has_neighbor(i, |j| ctx.positive(self.values[j])) {
                    continue;
                }
                form.column(i, &mut self.column);
                let kii = diag_of(&self.column, i);
                (-ku[i] / kii, false)
            } else {
                if !was_positive || !ctx.has_neighbor(i, |j| !ctx.positive(self.values[j])) {
                    continue;
                }
                form.column(i, &mut self.column);
                (ctx.gamma - v, true)
            };
            let kii = diag_of(&self.column, i);
            let new = v + delta;
            let now_positive = ctx.positive(new);
            if !pin && !now_positive {
                continue;
            }
            let mut change = 2.0 * delta * ku[i] + delta * delta * kii;
            if now_positive && !was_positive {
                change += ctx.cost[i];
            } else if was_positive && !now_positive {
                change -= ctx.cost[i];
            }
            if change < -self.eta_dec {
                self.values[i] = new;
                self.pinned[i] = pin;
                for &(j, k) in &self.column {
                    ku[j] += delta * k;
                }
                self.energy += change;
                self.moves += 1;
                any = true;
            }
        }
        if any {
            // resynchronize with a full evaluation
            self.energy = ctx.energy(&self.values).0;
            self.trace.push(self.energy);
        }
        any
    }

    fn run(mut self, max_outer: usize) -> (Self, usize, bool) {
        for outer in 0..max_outer {
            let mut changed = self.harmonic_phase();
            changed |= self.collapse_ladder();
            changed |= self.layer_moves();
            changed |= self.cell_sweep();
            if !changed {
                return (self, outer + 1, true);
            }
        }
        (self, max_outer, false)
    }
}

fn diag_of(column: &[(usize, f64)], i: usize) -> f64 {
    column.iter().filter(|e| e.0 == i).map(|e| e.1).sum()
}

/// Face-connected components of the marked cells.
fn components(grid: &Grid, marked: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; marked.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..marked.len() {
        if !marked[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            for k in 0..grid.dim() {
                for fwd in [false, true] {
                    if let Some(j) = grid.neighbor(i, k, fwd) {
                        if marked[j] && !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Set descent from the harmonic extension of the data and, if enabled,
/// from the all-pinned state; the lower final energy wins.
pub fn minimize_exact(p: &MinimizeProblem) -> Result<MinimizerState> {
    let ctx = Context::new(p)?;
    let n = p.grid().len();
    let mut harmonic = ctx.initial_values();
    ctx.harmonic(&mut harmonic, &vec![false; n])?;
    let mut starts = vec![(harmonic, vec![false; n])];
    if p.settings.void_start {
        let pinned: Vec<bool> = ctx.capable.clone();
        let mut v = ctx.initial_values();
        for i in 0..n {
            if pinned[i] {
                v[i] = ctx.gamma;
            }
        }
        starts.push((v, pinned));
    }
    let e0 = starts
        .iter()
        .map(|(v, _)| ctx.energy(v).0)
        .filter(|e| e.is_finite())
        .fold(0.0, f64::max);
    let eta_dec = p.settings.decrease_tolerance * e0;
    let mut best: Option<MinimizerState> = None;
    for (values, pinned) in starts {
        let (run, outer, converged) = Descent::new(&ctx, values, pinned, eta_dec).run(p.settings.max_outer);
        let state = ctx.state(run.values, outer, converged, run.trace, run.moves, "exact");
        // later starts must win by more than the decrease tolerance
        if best.as_ref().is_none_or(|b| state.energy < b.energy - eta_dec) {
            best = Some(state);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Set descent from a given field. Capable cells at or below `γ + η_pos`
/// start pinned.
pub fn minimize_exact_from(p: &MinimizeProblem, start: &ScalarField) -> Result<MinimizerState> {
    let ctx = Context::new(p)?;
    if start.grid() != p.grid() || !start.region().includes(p.region()) {
        return Err(Error::MaskMismatch("start field must cover the region".into()));
    }
    let mut values = ctx.initial_values();
    let mut pinned = vec![false; values.len()];
    for i in p.region().cells() {
        if ctx.capable[i] {
            values[i] = start.values()[i];
            if !ctx.positive(values[i]) {
                pinned[i] = true;
                values[i] = ctx.gamma;
            }
        }
    }
    let e0 = ctx.energy(&values).0;
    let eta_dec = p.settings.decrease_tolerance * if e0.is_finite() { e0 } else { 0.0 };
    let (run, outer, converged) = Descent::new(&ctx, values, pinned, eta_dec).run(p.settings.max_outer);
    Ok(ctx.state(run.values, outer, converged, run.trace, run.moves, "exact"))
}

// ---------------------------------------------------------------------------
// Rescaling

/// Blow-up of a problem around `B_r(x₀)`: on the unit ball with `n` cells
/// across its diameter, data `κ(u(x₀ + r·) − shift)`, weight `κ²r²φ(x₀ + r·)`,
/// coefficients `A(x₀ + r·)` and level `κ(γ − shift)`.
///
/// For a field `v = κ(u(x₀ + r·) − shift)` the energies satisfy
/// `J̃(v) = κ² r^{2−d} J_{B_r(x₀)}(u)`.
pub fn rescale_problem(
    p: &MinimizeProblem,
    u: &ScalarField,
    center: &[f64],
    r: f64,
    kappa: f64,
    shift: f64,
    n: usize,
) -> Result<MinimizeProblem> {
    let d = p.grid().dim();
    if center.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: center.len(),
        });
    }
    if !(r > 0.0 && kappa >= 0.0 && kappa.is_finite() && shift.is_finite()) {
        return Err(invalid("rescaling needs r > 0 and finite κ >= 0"));
    }
    if p.region().distance_to_boundary(center) < r * (1.0 - 1e-12) {
        return Err(invalid("ball is not contained in the region"));
    }
    if n < 4 {
        return Err(invalid("rescaled grid needs at least 4 cells per axis"));
    }
    // n cells across [-1, 1] plus three on each side; the mask reaches 1.5
    // cells past the unit sphere so that complete elements cover the unit
    // ball.
    let h = 2.0 / n as f64;
    let half = 1.0 + 3.0 * h;
    let grid = Grid::cube(d, -half, half, n + 6)?;
    let region = Arc::new(Region::new(
        grid,
        Shape::Ball {
            center: vec![0.0; d],
            radius: 1.0 + 1.5 * h,
        },
    )?);
    let map = |x: &[f64]| -> Vec<f64> { x.iter().zip(center).map(|(a, c)| c + r * a).collect() };
    let coeff = p.coeff.pull_back(region.clone(), map)?;
    let weight = BernoulliWeight::new(WeightSpec::Rescaled {
        inner: Box::new(p.weight.spec().clone()),
        factor: kappa * kappa * r * r,
        center: center.to_vec(),
        scale: r,
    })?;
    let boundary = ScalarField::from_fn(region, |x| {
        let y = map(x);
        kappa * (u.interpolate(&y).unwrap_or(shift) - shift)
    })?;
    Ok(MinimizeProblem {
        coeff,
        weight,
        boundary,
        gamma: kappa * (p.gamma - shift),
        solver: p.solver,
        settings: p.settings.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::{solve_dirichlet, DirichletProblem};
    use crate::weights::PlateauRule;

    fn disk_problem(n: usize, w: BernoulliWeight, g: impl Fn(&[f64]) -> f64) -> MinimizeProblem {
        let grid = Grid::cube(2, -1.0, 1.0, n).unwrap();
        let region = Arc::new(Region::ball(grid, vec![0.0, 0.0], 1.0).unwrap());
        let coeff = CoefficientField::identity(region.clone());
        let boundary = ScalarField::from_fn(region, g).unwrap();
        MinimizeProblem::new(coeff, w, boundary, 0.0).unwrap()
    }

    #[test]
    fn energy_examples() {
        let grid = Grid::cube(2, 0.0, 1.0, 16).unwrap();
        let region = Arc::new(Region::full(grid));
        let a = CoefficientField::identity(region.clone());
        let w = BernoulliWeight::constant(3.0).unwrap();
        let u = ScalarField::constant(region.clone(), 0.0);
        assert_eq!(energy(&u, &a, &w, 0.0).unwrap(), 0.0);
        let u = ScalarField::constant(region, 0.7);
        assert!((energy(&u, &a, &w, 0.0).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn radial_profile_energy_in_three_dimensions() {
        // u_r with r = 1/2, m = 1: energy 4π on the unit ball. The mask
        // reaches 1.5h past the sphere so that complete elements cover it.
        let n = 64;
        let h = 2.0 / n as f64;
        let half = 1.0 + 2.5 * h;
        let grid = Grid::cube(3, -half, half, n + 5).unwrap();
        let region = Arc::new(Region::ball(grid, vec![0.0; 3], 1.0 + 1.5 * h).unwrap());
        let a = CoefficientField::identity(region.clone());
        let profile = crate::radial::RadialProfile {
            dim: 3,
            radius: 0.5,
            m: 1.0,
        };
        let u = ScalarField::from_fn(region, |x| profile.eval(x)).unwrap();
        let zero = BernoulliWeight::constant(0.0).unwrap();
        let e = energy(&u, &a, &zero, 0.0).unwrap();
        let exact = 4.0 * std::f64::consts::PI;
        assert!((e - exact).abs() < 0.03 * exact, "{e}");
    }

    #[test]
    fn zero_weight_gives_the_harmonic_extension() {
        let zero = BernoulliWeight::constant(0.0).unwrap();
        let p = disk_problem(32, zero, |x| 1.0 + x[0] * x[1]);
        let harmonic = solve_dirichlet(&DirichletProblem {
            coeff: p.coeff.clone(),
            active: p.region().clone(),
            boundary: p.boundary.clone(),
            tolerance: 1e-10,
        })
        .unwrap();
        for state in [minimize_exact(&p).unwrap(), minimize_smoothed(&p).unwrap()] {
            for i in p.region().cells() {
                assert!((state.u.values()[i] - harmonic.values()[i]).abs() < 1e-6);
            }
            let e = energy(&harmonic, &p.coeff, &p.weight, 0.0).unwrap();
            assert!((state.energy - e).abs() < 1e-8 * e);
        }
        let exact = minimize_exact(&p).unwrap();
        assert_eq!(exact.accepted_moves, 0);
    }

    #[test]
    fn zero_data_is_optimal() {
        let w = BernoulliWeight::constant(2.0).unwrap();
        let p = disk_problem(24, w, |_| 0.0);
        for state in [minimize_exact(&p).unwrap(), minimize_smoothed(&p).unwrap()] {
            assert_eq!(state.energy, 0.0);
            assert!(state.u.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn large_boundary_value_keeps_everything_positive() {
        // with m far above the threshold u ≡ m beats every radial competitor
        let grid = Grid::cube(3, -1.0, 1.0, 20).unwrap();
        let region = Arc::new(Region::ball(grid, vec![0.0; 3], 1.0).unwrap());
        let coeff = CoefficientField::identity(region.clone());
        let m = 10.0;
        let w = BernoulliWeight::annular(3, 2.0, m, PlateauRule::TauConsistent).unwrap();
        let boundary = ScalarField::constant(region.clone(), m);
        let p = MinimizeProblem::new(coeff, w, boundary, 0.0).unwrap();
        let s = minimize_exact(&p).unwrap();
        assert!(s.converged);
        assert!(region.cells().all(|i| s.positivity[i]));
        assert!(region.cells().all(|i| (s.u.values()[i] - m).abs() < 1e-8));
    }

    #[test]
    fn exact_descent_is_monotone_and_a_fixed_point() {
        let w = BernoulliWeight::constant(6.0).unwrap();
        let p = disk_problem(40, w, |x| 0.6 + 0.3 * x[0]);
        let s = minimize_exact(&p).unwrap();
        assert!(s.converged);
        for w in s.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs());
        }
        assert!(s.zero_cells().count() > 0, "expected a zero phase");
        let again = minimize_exact_from(&p, &s.u).unwrap();
        assert_eq!(again.accepted_moves, 0);
        assert!((again.energy - s.energy).abs() <= 1e-10 * s.energy);
        // bounds from the maximum principle
        let lo = p.boundary.min_on_mask().min(0.0);
        let hi = p.max_boundary();
        for i in p.region().cells() {
            let v = s.u.values()[i];
            assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
        // recomputed energy agrees
        let e = energy(&s.u, &p.coeff, &p.weight, 0.0).unwrap();
        assert!((e - s.energy).abs() <= 1e-10 * s.energy);
        let defect = crate::elliptic::subsolution_defect(&s.u, &p.coeff).unwrap();
        assert!(defect <= 1e-6 * s.dirichlet.sqrt(), "{defect}");
    }

    #[test]
    fn smoothed_agrees_with_exact() {
        let w = BernoulliWeight::constant(6.0).unwrap();
        let p = disk_problem(40, w, |x| 0.6 + 0.3 * x[0]);
        let a = minimize_exact(&p).unwrap();
        let b = minimize_smoothed(&p).unwrap();
        assert!(a.zero_cells().count() > 0);
        assert!((a.energy - b.energy).abs() < 0.05 * a.energy, "{} {}", a.energy, b.energy);
    }

    #[test]
    fn smoothed_gradient_matches_differences() {
        let w = BernoulliWeight::constant(1.5).unwrap();
        let p = disk_problem(24, w, |x| 0.6 + 0.3 * x[0]);
        let eta = p.positivity_margin();
        let obj = SmoothedObjective::new(&p, 0.05f64.max(4.0 * eta)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..p.grid().len()).map(|_| rng.gen_range(0.0..0.9)).collect();
        assert!(obj.gradient_check(&values, 20, 11) < 1e-6);
    }

    #[test]
    fn rescaling_identity_and_constant_weight() {
        let grid = Grid::cube(2, -1.25, 1.25, 40).unwrap();
        let region = Arc::new(Region::ball(grid, vec![0.0, 0.0], 1.25).unwrap());
        let coeff = CoefficientField::identity(region.clone());
        let w = BernoulliWeight::constant(2.0).unwrap();
        let boundary = ScalarField::from_fn(region, |x| (0.5 + 0.4 * x[1]).max(0.0)).unwrap();
        let p = MinimizeProblem::new(coeff, w, boundary, 0.0).unwrap();
        let u = minimize_exact(&p).unwrap().u;
        // same spacing and aligned centers: the blow-up is a relabeling
        let q = rescale_problem(&p, &u, &[0.0, 0.0], 1.0, 1.0, 0.0, 32).unwrap();
        assert_eq!(q.gamma, 0.0);
        let before = local_energy(&u, &p.coeff, &p.weight, 0.0, &[0.0, 0.0], 1.0).unwrap();
        let after = local_energy(&q.boundary, &q.coeff, &q.weight, 0.0, &[0.0, 0.0], 1.0).unwrap();
        assert!((before - after).abs() <= 1e-12 * before, "{before} {after}");

        let q = rescale_problem(&p, &u, &[0.1, 0.0], 0.5, 2.0, 0.1, 32).unwrap();
        assert!((q.weight.eval(&[0.3, 0.1]) - 4.0 * 0.25 * 2.0).abs() < 1e-12);
        assert!((q.gamma + 0.2).abs() < 1e-15);
        assert!(rescale_problem(&p, &u, &[0.8, 0.0], 0.5, 1.0, 0.0, 32).is_err());
    }

    #[test]
    fn local_energy_of_the_whole_ball_matches_energy() {
        let w = BernoulliWeight::constant(2.0).unwrap();
        let p = disk_problem(32, w, |x| 0.5 + 0.2 * x[1]);
        let u = &p.boundary;
        let whole = energy(u, &p.coeff, &p.weight, 0.0).unwrap();
        let local = local_energy(u, &p.coeff, &p.weight, 0.0, &[0.0, 0.0], 2.0).unwrap();
        assert!((whole - local).abs() < 1e-12 * whole);
        let part = local_energy(u, &p.coeff, &p.weight, 0.0, &[0.0, 0.0], 0.5).unwrap();
        assert!(part < whole && part > 0.0);
    }
}
