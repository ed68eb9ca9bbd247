//! Measurements on computed fields: free boundary extraction, growth
//! exponents, density ratios, the cusp exponent, BMO and Harnack ratios,
//! and the Caccioppoli ratio.
//!
//! Every radius used in a measurement is at least `4h`; below that the
//! discrete interface width dominates.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{CoefficientField, Region, ScalarField};
use crate::io::fmt_f64;
use crate::weights::BernoulliWeight;

/// Least-squares line through `(x, y)` points: `(slope, intercept, rms)`.
pub fn least_squares(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let icpt = my - slope * mx;
    let rms = (pts
        .iter()
        .map(|p| (p.1 - icpt - slope * p.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, icpt, rms)
}

/// `η_pos = 10⁻⁹·(max u − γ)`.
pub fn positivity_margin(u: &ScalarField, gamma: f64) -> f64 {
    let span = u.max_on_mask() - gamma;
    if span > 0.0 {
        1e-9 * span
    } else {
        0.0
    }
}

/// Smallest radius any measurement may use.
pub fn radius_floor(u: &ScalarField) -> f64 {
    4.0 * u.grid().max_spacing()
}

/// Positive cells (`u > γ + η_pos`) with a face neighbor in the region that
/// is not positive.
pub fn free_boundary_cells(u: &ScalarField, gamma: f64) -> Vec<usize> {
    let level = gamma + positivity_margin(u, gamma);
    let region = u.region();
    let grid = u.grid();
    let v = u.values();
    region
        .cells()
        .filter(|&i| v[i] > level)
        .filter(|&i| {
            (0..grid.dim()).any(|k| {
                [false, true].into_iter().any(|fwd| {
                    grid.neighbor(i, k, fwd)
                        .is_some_and(|j| region.contains(j) && v[j] <= level)
                })
            })
        })
        .collect()
}

/// Centers of [`free_boundary_cells`].
pub fn extract_free_boundary(u: &ScalarField, gamma: f64) -> Vec<Vec<f64>> {
    free_boundary_cells(u, gamma)
        .into_iter()
        .map(|i| u.grid().center(i))
        .collect()
}

/// Dyadic radii `r_max, r_max/2, …` down to `max(r_min, 4h)`.
pub fn dyadic_radii(u: &ScalarField, r_min: f64, r_max: f64) -> Vec<f64> {
    let floor = r_min.max(radius_floor(u));
    let mut out = Vec::new();
    let mut r = r_max;
    while r >= floor * (1.0 - 1e-12) && out.len() < 64 {
        out.push(r);
        r *= 0.5;
    }
    out
}

/// Value of `u` at `x₀`, interpolated between cell centers.
fn value_at(u: &ScalarField, x0: &[f64]) -> Result<f64> {
    u.interpolate(x0)
        .ok_or_else(|| invalid("point lies outside the field's region"))
}

/// Result of a log–log fit of a growth profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub alpha: f64,
    pub residual: f64,
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

fn fit_profile(radii: Vec<f64>, values: Vec<f64>) -> Result<ExponentFit> {
    if radii.len() < 4 {
        return Err(Error::TooFewRadii(radii.len()));
    }
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(invalid("growth profile vanishes at some radius"));
    }
    let pts: Vec<(f64, f64)> = radii.iter().zip(&values).map(|(r, v)| (r.ln(), v.ln())).collect();
    let (alpha, _, residual) = least_squares(&pts);
    Ok(ExponentFit {
        alpha,
        residual,
        radii,
        values,
    })
}

/// `sup_{B_r(x₀)} f(u)` over the cells of the ball.
fn ball_sup(u: &ScalarField, x0: &[f64], r: f64, f: impl Fn(f64) -> f64) -> f64 {
    u.ball_cells(x0, r)
        .into_iter()
        .map(|i| f(u.values()[i]))
        .fold(0.0, f64::max)
}

/// Upper growth exponent: slope of `log sup_{B_r(x₀)} |u − u(x₀)|` against
/// `log r` over dyadic radii. Needs at least four radii.
pub fn fit_growth_exponent(u: &ScalarField, x0: &[f64], r_min: f64, r_max: f64) -> Result<ExponentFit> {
    let center = value_at(u, x0)?;
    let radii = dyadic_radii(u, r_min, r_max);
    let values = radii
        .iter()
        .map(|&r| ball_sup(u, x0, r, |v| (v - center).abs()))
        .collect();
    fit_profile(radii, values)
}

/// Nondegeneracy exponent: slope of `log sup_{B_r(x₀)} (u − γ)⁺`.
pub fn fit_nondegeneracy_exponent(
    u: &ScalarField,
    x0: &[f64],
    gamma: f64,
    r_min: f64,
    r_max: f64,
) -> Result<ExponentFit> {
    let radii = dyadic_radii(u, r_min, r_max);
    let values = radii
        .iter()
        .map(|&r| ball_sup(u, x0, r, |v| (v - gamma).max(0.0)))
        .collect();
    fit_profile(radii, values)
}

/// Lower envelope over several points: at each radius the smallest
/// `sup_{B_r(x)} (u − γ)⁺`, then a log–log fit.
pub fn fit_lower_envelope(
    u: &ScalarField,
    points: &[Vec<f64>],
    gamma: f64,
    r_min: f64,
    r_max: f64,
) -> Result<ExponentFit> {
    if points.is_empty() {
        return Err(invalid("no points for the lower envelope"));
    }
    let radii = dyadic_radii(u, r_min, r_max);
    let values = radii
        .iter()
        .map(|&r| {
            points
                .iter()
                .map(|x| ball_sup(u, x, r, |v| (v - gamma).max(0.0)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    fit_profile(radii, values)
}

/// Discrete gradient magnitude at a cell: central differences where both
/// neighbors are in the region, one-sided otherwise.
pub fn gradient_magnitude(u: &ScalarField, cell: usize) -> f64 {
    let grid = u.grid();
    let region = u.region();
    let v = u.values();
    let mut s = 0.0;
    for k in 0..grid.dim() {
        let h = grid.spacing()[k];
        let back = grid.neighbor(cell, k, false).filter(|&j| region.contains(j));
        let fwd = grid.neighbor(cell, k, true).filter(|&j| region.contains(j));
        let g = match (back, fwd) {
            (Some(a), Some(b)) => (v[b] - v[a]) / (2.0 * h),
            (Some(a), None) => (v[cell] - v[a]) / h,
            (None, Some(b)) => (v[b] - v[cell]) / h,
            (None, None) => 0.0,
        };
        s += g * g;
    }
    s.sqrt()
}

/// Largest gradient magnitude over cells with `r/2 <= |x − x₀| < r` and
/// `u > γ`.
pub fn shell_max_gradient(u: &ScalarField, x0: &[f64], gamma: f64, r: f64) -> f64 {
    let grid = u.grid();
    u.ball_cells(x0, r)
        .into_iter()
        .filter(|&i| {
            let c = grid.center(i);
            let d2: f64 = c.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
            d2 >= 0.25 * r * r && u.values()[i] > gamma
        })
        .map(|i| gradient_magnitude(u, i))
        .fold(0.0, f64::max)
}

/// Validates `q₊ ≥ q₋ > d/2` and returns `(α₁, α₂)`.
pub fn cusp_alphas(q_minus: f64, q_plus: f64, dim: usize) -> Result<(f64, f64)> {
    let half = dim as f64 / 2.0;
    if !(q_minus > half && q_plus >= q_minus && q_plus.is_finite()) {
        return Err(invalid(format!(
            "cusp exponent needs q+ >= q- > d/2, got q- = {q_minus}, q+ = {q_plus}, d = {dim}"
        )));
    }
    Ok((1.0 - half / q_plus, 1.0 - half / q_minus))
}

/// `P(q₋, q₊) = (α₂/α₁ − 1/q₋)·q₊/(q₊ − 1)` with no range check.
pub fn cusp_formula(q_minus: f64, q_plus: f64, dim: usize) -> f64 {
    let half = dim as f64 / 2.0;
    let (a1, a2) = (1.0 - half / q_plus, 1.0 - half / q_minus);
    (a2 / a1 - 1.0 / q_minus) * q_plus / (q_plus - 1.0)
}

/// [`cusp_formula`] on the admissible range `q₊ ≥ q₋ > d/2`, `q₊ > 1`.
pub fn cusp_exponent(q_minus: f64, q_plus: f64, dim: usize) -> Result<f64> {
    cusp_alphas(q_minus, q_plus, dim)?;
    if q_plus <= 1.0 {
        return Err(invalid("cusp exponent needs q+ > 1"));
    }
    Ok(cusp_formula(q_minus, q_plus, dim))
}

/// One radius of a density table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub radius: f64,
    /// `|{u > γ} ∩ B_r| / |B_r|`.
    pub positive_fraction: f64,
    /// `|{u > γ} ∩ B_r| / |B_r|^{α₂/α₁}`.
    pub positive_ratio: f64,
    /// `|{u ≤ γ} ∩ B_r| / |B_r|^P`.
    pub zero_ratio: f64,
}

/// Density ratios at one point, with the minimum of each column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    pub exponent_positive: f64,
    pub exponent_zero: f64,
    pub rows: Vec<DensityRow>,
    pub min_positive: f64,
    pub min_zero: f64,
}

/// Volume ratios of both phases in `B_r(x₀)`. Ball volumes are cell counts
/// times the cell volume, and radii below `4h` are dropped.
pub fn density_ratios(
    u: &ScalarField,
    x0: &[f64],
    gamma: f64,
    radii: &[f64],
    q_minus: f64,
    q_plus: f64,
) -> Result<DensityTable> {
    let (a1, a2) = cusp_alphas(q_minus, q_plus, u.grid().dim())?;
    let exponent_positive = a2 / a1;
    let exponent_zero = if q_minus == q_plus {
        1.0
    } else {
        cusp_exponent(q_minus, q_plus, u.grid().dim())?
    };
    let level = gamma + positivity_margin(u, gamma);
    let floor = radius_floor(u);
    let vol = u.grid().cell_volume();
    let mut rows = Vec::new();
    for &r in radii.iter().filter(|&&r| r >= floor * (1.0 - 1e-12)) {
        let cells = u.ball_cells(x0, r);
        if cells.is_empty() {
            continue;
        }
        let ball = cells.len() as f64 * vol;
        let pos = cells.iter().filter(|&&i| u.values()[i] > level).count() as f64 * vol;
        rows.push(DensityRow {
            radius: r,
            positive_fraction: pos / ball,
            positive_ratio: pos / ball.powf(exponent_positive),
            zero_ratio: (ball - pos) / ball.powf(exponent_zero),
        });
    }
    let min_positive = rows.iter().map(|r| r.positive_ratio).fold(f64::INFINITY, f64::min);
    let min_zero = rows.iter().map(|r| r.zero_ratio).fold(f64::INFINITY, f64::min);
    Ok(DensityTable {
        exponent_positive,
        exponent_zero,
        rows,
        min_positive,
        min_zero,
    })
}

/// Largest mean oscillation over `balls` random balls: centers uniform over
/// region cells at distance at least `4h` from the boundary, radii
/// log-uniform in `[4h, min(dist to boundary, max_radius)]`.
pub fn bmo_seminorm_capped(
    u: &ScalarField,
    region: &Region,
    balls: usize,
    seed: u64,
    max_radius: f64,
) -> Result<f64> {
    if balls < 32 {
        return Err(invalid("BMO sampling needs at least 32 balls"));
    }
    if region.grid() != u.grid() || !u.region().includes(region) {
        return Err(Error::MaskMismatch("field must cover the sampling region".into()));
    }
    let floor = radius_floor(u);
    let grid = u.grid();
    let candidates: Vec<(usize, f64)> = region
        .cells()
        .map(|i| (i, region.distance_to_boundary(&grid.center(i)).min(max_radius)))
        .filter(|&(_, d)| d > floor)
        .collect();
    if candidates.is_empty() {
        return Err(invalid("region is too thin for BMO sampling"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..balls {
        let (cell, reach) = candidates[rng.gen_range(0..candidates.len())];
        let t: f64 = rng.gen();
        let r = floor * (reach / floor).powf(t);
        let center = grid.center(cell);
        best = best.max(u.ball_mean_oscillation(&center, r)?);
    }
    Ok(best)
}

/// [`bmo_seminorm_capped`] with no cap on the radii.
pub fn bmo_seminorm(u: &ScalarField, region: &Region, balls: usize, seed: u64) -> Result<f64> {
    bmo_seminorm_capped(u, region, balls, seed, f64::INFINITY)
}

/// `max u / min u` over `B_r(x₀)`, which must lie in the positive phase.
pub fn harnack_ratio(u: &ScalarField, center: &[f64], radius: f64, gamma: f64) -> Result<f64> {
    let cells = u.ball_cells(center, radius);
    if cells.is_empty() {
        return Err(invalid("ball contains no cells"));
    }
    let level = gamma + positivity_margin(u, gamma);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &i in &cells {
        let v = u.values()[i];
        if v <= level {
            return Err(Error::BallTouchesZeroPhase);
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo <= 0.0 {
        return Err(invalid("Harnack ratio needs positive values"));
    }
    Ok(hi / lo)
}

/// `∫_{B_{R/2}} |∇u|² / (∫_{B_R} u² + ‖φ‖_{L^q_weak(B_R)})` with the
/// identity form for the gradient term and cell averages of `φ`.
pub fn caccioppoli_ratio(
    u: &ScalarField,
    weight: &BernoulliWeight,
    q: f64,
    center: &[f64],
    radius: f64,
) -> Result<f64> {
    let region = u.region();
    let ball = region.restrict_ball(center, radius)?;
    let identity = CoefficientField::identity(region.clone());
    let zero = BernoulliWeight::constant(0.0)?;
    let inner = crate::minimize::local_energy(u, &identity, &zero, f64::INFINITY, center, 0.5 * radius)?;
    let l2 = u.l2_norm(&ball)?;
    let phi = ScalarField::new(region.clone(), weight.cell_averages(u.grid()).to_vec())?;
    let norm = phi.weak_lq_norm(q, &ball)?;
    let denom = l2 * l2 + norm;
    if denom > 0.0 {
        Ok(inner / denom)
    } else if inner == 0.0 {
        Ok(0.0)
    } else {
        Ok(f64::INFINITY)
    }
}

/// What to measure at free boundary points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Points to analyze; the extracted free boundary when absent.
    pub points: Option<Vec<Vec<f64>>>,
    /// At most this many extracted points, evenly spaced in cell order.
    pub max_points: usize,
    /// Largest radius of exponent fits and density tables.
    pub r_max: f64,
    pub q_minus: f64,
    pub q_plus: f64,
    pub bmo_balls: usize,
    pub seed: u64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            points: None,
            max_points: 16,
            r_max: 0.25,
            q_minus: 2.0,
            q_plus: 2.0,
            bmo_balls: 64,
            seed: 0,
        }
    }
}

/// Measurements at one free boundary point. Fits that could not be made
/// are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub point: Vec<f64>,
    pub upper: Option<ExponentFit>,
    pub lower: Option<ExponentFit>,
    pub density: Option<DensityTable>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeBoundaryReport {
    pub gamma: f64,
    pub boundary_points: usize,
    pub points: Vec<PointReport>,
    pub bmo: Option<f64>,
}

/// Runs every point measurement and a BMO estimate over the field's region.
pub fn analyze_free_boundary(u: &ScalarField, gamma: f64, s: &AnalysisSettings) -> FreeBoundaryReport {
    let all = extract_free_boundary(u, gamma);
    let points = match &s.points {
        Some(p) => p.clone(),
        None => subsample(&all, s.max_points),
    };
    let radii = dyadic_radii(u, 0.0, s.r_max);
    let points = points
        .into_iter()
        .map(|x| PointReport {
            upper: fit_growth_exponent(u, &x, 0.0, s.r_max).ok(),
            lower: fit_nondegeneracy_exponent(u, &x, gamma, 0.0, s.r_max).ok(),
            density: density_ratios(u, &x, gamma, &radii, s.q_minus, s.q_plus).ok(),
            point: x,
        })
        .collect();
    FreeBoundaryReport {
        gamma,
        boundary_points: all.len(),
        points,
        bmo: bmo_seminorm(u, u.region(), s.bmo_balls, s.seed).ok(),
    }
}

fn subsample(all: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    if all.len() <= n {
        return all.to_vec();
    }
    (0..n).map(|k| all[k * all.len() / n].clone()).collect()
}

impl FreeBoundaryReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per point and radius.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let dim = self.points.first().map_or(0, |p| p.point.len());
        let mut header = vec!["point".to_string()];
        header.extend((0..dim).map(|k| format!("x{k}")));
        header.extend(
            [
                "radius",
                "sup_deviation",
                "sup_positive",
                "positive_fraction",
                "positive_ratio",
                "zero_ratio",
                "alpha_upper",
                "alpha_lower",
            ]
            .map(String::from),
        );
        writeln!(out, "{}", header.join(","))?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for (k, p) in self.points.iter().enumerate() {
            let mut radii: Vec<f64> = Vec::new();
            for fit in [&p.upper, &p.lower].into_iter().flatten() {
                radii.extend(&fit.radii);
            }
            if let Some(d) = &p.density {
                radii.extend(d.rows.iter().map(|r| r.radius));
            }
            radii.sort_by(|a, b| b.total_cmp(a));
            radii.dedup();
            let lookup = |fit: &Option<ExponentFit>, r: f64| {
                fit.as_ref()
                    .and_then(|f| f.radii.iter().position(|&x| x == r).map(|i| f.values[i]))
            };
            for r in radii {
                let row = p
                    .density
                    .as_ref()
                    .and_then(|d| d.rows.iter().find(|x| x.radius == r));
                let mut cells = vec![k.to_string()];
                cells.extend(p.point.iter().map(|&v| fmt_f64(v)));
                cells.push(fmt_f64(r));
                cells.push(opt(lookup(&p.upper, r)));
                cells.push(opt(lookup(&p.lower, r)));
                cells.push(opt(row.map(|x| x.positive_fraction)));
                cells.push(opt(row.map(|x| x.positive_ratio)));
                cells.push(opt(row.map(|x| x.zero_ratio)));
                cells.push(opt(p.upper.as_ref().map(|f| f.alpha)));
                cells.push(opt(p.lower.as_ref().map(|f| f.alpha)));
                writeln!(out, "{}", cells.join(","))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Grid, Shape};
    use crate::radial::RadialProfile;
    use std::sync::Arc;

    fn square(n: usize) -> Arc<Region> {
        Arc::new(Region::full(Grid::cube(2, -1.0, 1.0, n).unwrap()))
    }

    #[test]
    fn free_boundary_of_trivial_fields_is_empty() {
        let r = square(16);
        assert!(extract_free_boundary(&ScalarField::constant(r.clone(), 0.4), 0.0).is_empty());
        assert!(extract_free_boundary(&ScalarField::constant(r, 0.0), 0.0).is_empty());
    }

    #[test]
    fn free_boundary_of_the_radial_profile_hugs_its_sphere() {
        let n = 32;
        let grid = Grid::cube(3, -1.0, 1.0, n).unwrap();
        let region = Arc::new(Region::ball(grid, vec![0.0; 3], 1.0).unwrap());
        let p = RadialProfile {
            dim: 3,
            radius: 0.5,
            m: 1.0,
        };
        let u = ScalarField::from_fn(region, |x| p.eval(x)).unwrap();
        let pts = extract_free_boundary(&u, 0.0);
        assert!(!pts.is_empty());
        let h = 2.0 / n as f64;
        for x in pts {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((r - 0.5).abs() <= h, "{r}");
        }
    }

    #[test]
    fn growth_exponent_of_a_power() {
        let region = square(512);
        let x0 = region.grid().center(region.grid().index(&[256, 256]));
        let u = ScalarField::from_fn(region, |x| {
            ((x[0] - x0[0]).powi(2) + (x[1] - x0[1]).powi(2)).powf(0.25)
        })
        .unwrap();
        let fit = fit_growth_exponent(&u, &x0, 0.0, 0.5).unwrap();
        assert!((fit.alpha - 0.5).abs() < 0.03, "{}", fit.alpha);
        assert!(fit_growth_exponent(&u, &x0, 0.2, 0.5).is_err());
    }

    #[test]
    fn growth_exponent_at_the_radial_profile_sphere() {
        // a fine local grid around a point of the sphere |x| = 1/2
        let grid = Grid::new(vec![0.475, -0.025, -0.025], vec![0.525, 0.025, 0.025], vec![65; 3]).unwrap();
        let region = Arc::new(Region::full(grid));
        let p = RadialProfile {
            dim: 3,
            radius: 0.5,
            m: 1.0,
        };
        let u = ScalarField::from_fn(region, |x| p.eval(x)).unwrap();
        let fit = fit_growth_exponent(&u, &[0.5, 0.0, 0.0], 0.0, 0.025).unwrap();
        assert!((fit.alpha - 1.0).abs() < 0.05, "{}", fit.alpha);
    }

    #[test]
    fn cusp_exponent_values() {
        for d in [2, 3] {
            for q in [2.0, 5.0, 50.0] {
                assert_eq!(cusp_exponent(q, q, d).unwrap(), 1.0);
            }
        }
        assert!((cusp_exponent(2.0, 4.0, 2).unwrap() - 2.0 / 9.0).abs() < 1e-15);
        assert!(cusp_exponent(4.0, 2.0, 2).is_err());
        assert!(cusp_exponent(1.0, 2.0, 2).is_err());
        assert!(cusp_exponent(1.2, 2.0, 3).is_err());
    }

    #[test]
    fn cusp_exponent_decreases_toward_the_critical_exponent() {
        for d in [2usize, 3] {
            let half = d as f64 / 2.0;
            for j in 0..10 {
                let q_plus = half + 0.5 + j as f64;
                let mut last = f64::INFINITY;
                for i in (0..10).rev() {
                    let q_minus = half + (q_plus - half) * (i as f64 + 0.5) / 10.0;
                    let p = cusp_exponent(q_minus, q_plus, d).unwrap();
                    assert!(p < last, "d={d} q-={q_minus} q+={q_plus}");
                    last = p;
                }
            }
        }
    }

    #[test]
    fn density_ratios_of_a_constant_and_a_half_plane() {
        let region = square(128);
        let u = ScalarField::constant(region.clone(), 0.3);
        let t = density_ratios(&u, &[0.0, 0.0], 0.0, &[0.5, 0.25, 0.125], 2.0, 2.0).unwrap();
        assert_eq!(t.exponent_zero, 1.0);
        for row in &t.rows {
            assert_eq!(row.positive_ratio, row.positive_fraction);
            assert_eq!(row.positive_fraction, 1.0);
            assert_eq!(row.zero_ratio, 0.0);
        }
        let u = ScalarField::from_fn(region, |x| x[0].max(0.0)).unwrap();
        let t = density_ratios(&u, &[0.0, 0.0], 0.0, &[0.5, 0.25, 0.125, 0.01], 2.0, 2.0).unwrap();
        assert_eq!(t.rows.len(), 3);
        for row in &t.rows {
            assert!((row.positive_fraction - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn density_at_the_radial_profile_sphere() {
        let grid = Grid::cube(3, -1.0, 1.0, 48).unwrap();
        let region = Arc::new(Region::ball(grid, vec![0.0; 3], 1.0).unwrap());
        let p = RadialProfile {
            dim: 3,
            radius: 0.5,
            m: 1.0,
        };
        let u = ScalarField::from_fn(region, |x| p.eval(x)).unwrap();
        let t = density_ratios(&u, &[0.5, 0.0, 0.0], 0.0, &[0.4, 0.2, 0.1], 2.0, 2.0).unwrap();
        for row in &t.rows {
            assert!((0.3..=0.7).contains(&row.positive_fraction), "{row:?}");
        }
    }

    #[test]
    fn bmo_of_constant_and_logarithm() {
        let region = square(128);
        let c = ScalarField::constant(region.clone(), 2.0);
        assert_eq!(bmo_seminorm(&c, &region, 32, 1).unwrap(), 0.0);
        assert!(bmo_seminorm(&c, &region, 8, 1).is_err());

        let grid = Grid::cube(2, -1.0, 1.0, 256).unwrap();
        let annulus = Arc::new(
            Region::new(
                grid,
                Shape::Annulus {
                    center: vec![0.0, 0.0],
                    inner: 0.02,
                    outer: 1.0,
                },
            )
            .unwrap(),
        );
        let u = ScalarField::from_fn(annulus.clone(), |x| (x[0] * x[0] + x[1] * x[1]).sqrt().ln()).unwrap();
        let wide = bmo_seminorm_capped(&u, &annulus, 256, 5, 1.0).unwrap();
        let narrow = bmo_seminorm_capped(&u, &annulus, 256, 5, 0.25).unwrap();
        assert!(wide.is_finite() && narrow > 0.0);
        assert!(wide / narrow <= 1.5 && narrow / wide <= 1.5, "{wide} {narrow}");
    }

    #[test]
    fn harnack_ratios() {
        let region = square(32);
        let c = ScalarField::constant(region.clone(), 2.0);
        assert_eq!(harnack_ratio(&c, &[0.0, 0.0], 0.5, 0.0).unwrap(), 1.0);
        let u = ScalarField::from_fn(region, |x| x[0]).unwrap();
        assert!(harnack_ratio(&u, &[0.0, 0.0], 0.5, 0.0).is_err());

        let grid = Grid::cube(3, -1.0, 1.0, 48).unwrap();
        let ball = Arc::new(Region::ball(grid, vec![0.0; 3], 1.0).unwrap());
        let p = RadialProfile {
            dim: 3,
            radius: 0.5,
            m: 1.0,
        };
        let u = ScalarField::from_fn(ball, |x| p.eval(x)).unwrap();
        let rho = 0.3;
        let ratio = harnack_ratio(&u, &[0.5 + rho, 0.0, 0.0], rho / 2.0, 0.0).unwrap();
        assert!(ratio > 1.0 && ratio <= 4.0, "{ratio}");
    }

    #[test]
    fn report_round_trips_and_flattens() {
        let region = square(256);
        let u = ScalarField::from_fn(region, |x| (x[0] - 0.1).max(0.0)).unwrap();
        let s = AnalysisSettings {
            max_points: 3,
            r_max: 0.4,
            ..Default::default()
        };
        let report = analyze_free_boundary(&u, 0.0, &s);
        assert_eq!(report.points.len(), 3);
        assert!(report.points.iter().all(|p| p.upper.is_some()));
        let json = report.to_json().unwrap();
        let back: FreeBoundaryReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let rows = text.lines().count() - 1;
        let expected: usize = report
            .points
            .iter()
            .map(|p| p.upper.as_ref().unwrap().radii.len())
            .sum();
        assert_eq!(rows, expected);
    }
}
