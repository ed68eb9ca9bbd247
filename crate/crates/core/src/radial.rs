//! The radial comparison family on the unit ball.
//!
//! For `d >= 3` and boundary value `m`, `u_r` vanishes on `B_r` and is the
//! harmonic function with `u_r = m` on the unit sphere outside it. Its energy
//! is explicit up to a one-dimensional weight integral, which makes the
//! family an inexpensive upper bound for the full solvers.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::area_sphere;
use crate::quad;
use crate::weights::{inner_radius, BernoulliWeight, PlateauRule};

/// Parameters of the annular example.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialConfig {
    pub dim: usize,
    pub q: f64,
    pub m: f64,
    #[serde(default)]
    pub plateau_rule: PlateauRule,
}

impl RadialConfig {
    pub fn new(dim: usize, q: f64, m: f64, plateau_rule: PlateauRule) -> Result<Self> {
        let c = Self {
            dim,
            q,
            m,
            plateau_rule,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 3 {
            return Err(invalid("the radial family needs d >= 3"));
        }
        if !(self.q > 1.0) {
            return Err(invalid("q must exceed 1"));
        }
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(invalid("m must be positive"));
        }
        Ok(())
    }

    /// The three-branch weight built from these parameters.
    pub fn weight(&self) -> Result<BernoulliWeight> {
        BernoulliWeight::annular(self.dim, self.q, self.m, self.plateau_rule)
    }

    pub fn r_star(&self) -> f64 {
        inner_radius(self.dim)
    }

    /// Midpoint `(1 + r_*)/2`, where the singular branch ends.
    pub fn r_upper(&self) -> f64 {
        0.5 * (1.0 + self.r_star())
    }
}

/// Outward slope `m(d−2)/(r − r^{d−1})` of `u_r` at its zero sphere.
pub fn tau(r: f64, c: &RadialConfig) -> Result<f64> {
    c.validate()?;
    if !(r > 0.0 && r < 1.0) {
        return Err(invalid(format!("radius {r} outside (0, 1)")));
    }
    let d = c.dim as f64;
    Ok(c.m * (d - 2.0) / (r - r.powf(d - 1.0)))
}

/// Minimizer of `τ` on `(0, 1)`: `(d − 1)^{-1/(d−2)}`.
pub fn r_star(dim: usize) -> Result<f64> {
    if dim < 3 {
        return Err(invalid("r_* is defined for d >= 3"));
    }
    Ok(inner_radius(dim))
}

/// One member `u_r` of the radial family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialProfile {
    pub dim: usize,
    pub radius: f64,
    pub m: f64,
}

impl RadialProfile {
    fn denominator(&self) -> f64 {
        self.radius.powf(2.0 - self.dim as f64) - 1.0
    }

    /// Value at distance `rho` from the origin.
    pub fn at_radius(&self, rho: f64) -> f64 {
        if rho < self.radius {
            return 0.0;
        }
        let e = 2.0 - self.dim as f64;
        self.m * (self.radius.powf(e) - rho.powf(e)) / self.denominator()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.at_radius(x.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// `∂_ρ u_r`, zero inside the core.
    pub fn slope(&self, rho: f64) -> f64 {
        if rho < self.radius {
            return 0.0;
        }
        let d = self.dim as f64;
        self.m * (d - 2.0) * rho.powf(1.0 - d) / self.denominator()
    }

    /// `∫_{B_1} |∇u_r|²`.
    pub fn dirichlet_energy(&self) -> f64 {
        let d = self.dim as f64;
        area_sphere(self.dim) * self.m * self.m * (d - 2.0) / self.denominator()
    }
}

pub fn radial_profile(r: f64, c: &RadialConfig) -> Result<RadialProfile> {
    c.validate()?;
    if !(r > 0.0 && r < 1.0) {
        return Err(invalid(format!("radius {r} outside (0, 1)")));
    }
    Ok(RadialProfile {
        dim: c.dim,
        radius: r,
        m: c.m,
    })
}

/// `J(u_r) = |S^{d−1}|·(m²(d−2)/(r^{2−d} − 1) + ∫_r^1 φ ρ^{d−1} dρ)`.
pub fn radial_energy(r: f64, c: &RadialConfig, w: &BernoulliWeight) -> Result<f64> {
    let profile = radial_profile(r, c)?;
    let tail = w.radial_moment(r, 1.0, c.dim)?;
    Ok(profile.dirichlet_energy() + area_sphere(c.dim) * tail)
}

/// `J(u ≡ m) = ∫_{B_1} φ`, the `r → 0` limit of the family.
pub fn constant_energy(c: &RadialConfig, w: &BernoulliWeight) -> Result<f64> {
    c.validate()?;
    Ok(area_sphere(c.dim) * w.radial_moment(0.0, 1.0, c.dim)?)
}

/// Largest `m` for which the comparison with `u_{r^*}` alone certifies a
/// nonempty zero set: the square root of
/// `((r^*)^{2−d} − 1)/(d − 2) · ∫_{r_*}^{r^*} (ρ − r_*)^{-1/q} ρ^{d−1} dρ`.
pub fn m_threshold(dim: usize, q: f64) -> Result<f64> {
    if dim < 3 {
        return Err(invalid("the threshold is defined for d >= 3"));
    }
    if !(q > 1.0) {
        return Err(invalid("q must exceed 1"));
    }
    let d = dim as f64;
    let rs = inner_radius(dim);
    let ru = 0.5 * (1.0 + rs);
    // in the offset t = ρ − r_*
    let integral = quad::integrate_left_singular(
        |t| t.powf(-1.0 / q) * (rs + t).powf(d - 1.0),
        0.0,
        ru - rs,
        1.0 / q,
        1e-13,
    );
    Ok(((ru.powf(2.0 - d) - 1.0) / (d - 2.0) * integral).sqrt())
}

/// Result of the one-dimensional search over the radial family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialOptimum {
    pub radius: f64,
    pub energy: f64,
    /// The optimum sits at an end of the searched interval.
    pub at_boundary: bool,
    /// Coarse scan `(r, J(u_r))` that seeded the search.
    pub scan: Vec<(f64, f64)>,
}

/// Default distance kept from `0` and `1` by [`minimize_radial`].
pub const RADIAL_MARGIN: f64 = 1e-3;
const SCAN_POINTS: usize = 256;

/// Minimizes `r ↦ J(u_r)` over `(h, 1 − h)` with `h` = [`RADIAL_MARGIN`].
pub fn minimize_radial(c: &RadialConfig, w: &BernoulliWeight) -> Result<RadialOptimum> {
    minimize_radial_in(c, w, RADIAL_MARGIN, 1.0 - RADIAL_MARGIN)
}

/// Coarse scan followed by golden-section refinement of every local
/// minimum found on it. The energy is not unimodal in general, so each
/// bracket is refined separately and the best result kept.
pub fn minimize_radial_in(c: &RadialConfig, w: &BernoulliWeight, lo: f64, hi: f64) -> Result<RadialOptimum> {
    if !(lo > 0.0 && hi < 1.0 && lo < hi) {
        return Err(invalid("search interval must satisfy 0 < lo < hi < 1"));
    }
    let energy = |r: f64| radial_energy(r, c, w);
    let scan = radial_scan(c, w, lo, hi, SCAN_POINTS)?;
    let (mut best_r, mut best_e) = scan
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty scan");
    // kinks of the energy sit at the weight's breakpoints
    for r in w.radial_breakpoints(c.dim) {
        if r > lo && r < hi {
            let e = energy(r)?;
            if e < best_e {
                best_r = r;
                best_e = e;
            }
        }
    }
    for k in 1..scan.len() - 1 {
        let e = scan[k].1;
        if e <= scan[k - 1].1 && e <= scan[k + 1].1 {
            let (r, e) = golden_section(&energy, scan[k - 1].0, scan[k + 1].0, 1e-6)?;
            if e < best_e {
                best_r = r;
                best_e = e;
            }
        }
    }
    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    Ok(RadialOptimum {
        radius: best_r,
        energy: best_e,
        at_boundary: best_r - lo < step || hi - best_r < step,
        scan,
    })
}

/// `n` equally spaced samples of `J(u_r)` on `[lo, hi]`.
pub fn radial_scan(c: &RadialConfig, w: &BernoulliWeight, lo: f64, hi: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    if n < 2 {
        return Err(invalid("a scan needs at least two points"));
    }
    (0..n)
        .map(|k| {
            let r = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            Ok((r, radial_energy(r, c, w)?))
        })
        .collect()
}

fn golden_section(f: &dyn Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, width: f64) -> Result<(f64, f64)> {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while b - a > width {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2)?;
        }
    }
    Ok(if f1 <= f2 { (x1, f1) } else { (x2, f2) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::WeightSpec;
    use std::f64::consts::PI;

    fn cfg(m: f64) -> RadialConfig {
        RadialConfig::new(3, 2.0, m, PlateauRule::TauConsistent).unwrap()
    }

    #[test]
    fn tau_examples() {
        let c = cfg(0.1);
        assert!((tau(0.5, &c).unwrap() - 0.4).abs() < 1e-15);
        assert!(tau(1.0 - 1e-6, &c).unwrap() > 1e3 * tau(0.5, &c).unwrap());
        assert!(tau(1.0, &c).is_err());
        assert!(tau(0.0, &c).is_err());
        // τ(r_*) = m(d−1)/r_*
        for d in 3..=6 {
            let c = RadialConfig::new(d, 2.0, 0.3, PlateauRule::TauConsistent).unwrap();
            let rs = r_star(d).unwrap();
            let t = tau(rs, &c).unwrap();
            assert!((t - 0.3 * (d as f64 - 1.0) / rs).abs() < 1e-12 * t);
            assert!(tau(rs + 1e-4, &c).unwrap() >= t && tau(rs - 1e-4, &c).unwrap() >= t);
        }
    }

    #[test]
    fn r_star_examples() {
        assert_eq!(r_star(3).unwrap(), 0.5);
        assert!((r_star(4).unwrap() - 3f64.powf(-0.5)).abs() < 1e-15);
        assert!(r_star(2).is_err());
        let c = cfg(0.1);
        let n = 100_000;
        let arg = (1..n)
            .map(|k| k as f64 / n as f64)
            .min_by(|a, b| tau(*a, &c).unwrap().total_cmp(&tau(*b, &c).unwrap()))
            .unwrap();
        assert!((arg - 0.5).abs() < 1e-4);
    }

    #[test]
    fn profile_values() {
        let p = radial_profile(0.5, &cfg(1.0)).unwrap();
        assert_eq!(p.at_radius(0.5), 0.0);
        assert!((p.at_radius(1.0) - 1.0).abs() < 1e-15);
        assert!((p.at_radius(0.75) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.at_radius(0.3), 0.0);
        assert!((p.dirichlet_energy() - 4.0 * PI).abs() < 1e-12);
        // slope at the zero sphere is τ(r)
        let c = cfg(1.0);
        assert!((p.slope(0.5) - tau(0.5, &c).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn energy_examples() {
        let c = cfg(1.0);
        let zero = BernoulliWeight::constant(0.0).unwrap();
        assert!((radial_energy(0.5, &c, &zero).unwrap() - 4.0 * PI).abs() < 1e-12);
        let k = 2.5;
        let w = BernoulliWeight::constant(k).unwrap();
        let e = radial_energy(0.5, &c, &w).unwrap();
        let expected = 4.0 * PI + 4.0 * PI * k * (1.0 - 0.125) / 3.0;
        assert!((e - expected).abs() < 1e-10 * expected);
        assert!(radial_energy(0.5, &c, &BernoulliWeight::point_singularity(vec![0.1, 0.0, 0.0], 1.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn annular_singular_moment() {
        // singular branch only: (ρ − 1/2)^{-1/2} ρ² on [1/2, 3/4]
        let w = cfg(0.2).weight().unwrap();
        let plateau = match w.spec() {
            WeightSpec::AnnularRadial { .. } => 0.64,
            _ => unreachable!(),
        };
        let s: f64 = 0.25;
        let singular = 0.4 * s.powf(2.5) + 2.0 / 3.0 * s.powf(1.5) + 0.5 * s.sqrt();
        let plateau_part = plateau * (1.0 - 0.75f64.powi(3)) / 3.0;
        let m = w.radial_moment(0.5, 1.0, 3).unwrap();
        assert!((m - singular - plateau_part).abs() < 1e-9);
    }

    #[test]
    fn threshold_examples() {
        let t = m_threshold(3, 2.0).unwrap();
        assert!((t - 0.33953).abs() < 5e-5, "{t}");
        for q in [1.5, 2.0, 4.0] {
            let t = m_threshold(3, q).unwrap();
            assert!(t.is_finite() && t > 0.0);
        }
        assert!(m_threshold(3, 1.0).is_err());
        assert!(m_threshold(2, 2.0).is_err());
        let c = cfg(0.9 * t);
        let w = c.weight().unwrap();
        let ru = c.r_upper();
        assert!(radial_energy(ru, &c, &w).unwrap() < constant_energy(&c, &w).unwrap());
    }

    #[test]
    fn optimizer_examples() {
        // no weight: the energy decreases toward r → 0
        let c = cfg(1.0);
        let zero = BernoulliWeight::constant(0.0).unwrap();
        let opt = minimize_radial(&c, &zero).unwrap();
        assert!(opt.at_boundary && opt.radius < 0.01);
        // heavy constant weight with small m: the core fills the ball
        let c = cfg(0.01);
        let heavy = BernoulliWeight::constant(100.0).unwrap();
        let opt = minimize_radial(&c, &heavy).unwrap();
        assert!(opt.radius > 0.95, "{}", opt.radius);
        // annular example
        let c = cfg(0.2);
        let w = c.weight().unwrap();
        let opt = minimize_radial(&c, &w).unwrap();
        let bound = constant_energy(&c, &w)
            .unwrap()
            .min(radial_energy(c.r_upper(), &c, &w).unwrap());
        assert!(opt.energy <= bound);
        for &(_, e) in &opt.scan {
            assert!(opt.energy <= e + 1e-12);
        }
    }

    #[test]
    fn ordering_of_slopes() {
        // √φ just below r^* exceeds τ(r^*), which exceeds τ(r_*) = √plateau
        let c = cfg(0.1);
        let w = c.weight().unwrap();
        let ru = c.r_upper();
        let below = w.radial_value(ru - 1e-9).unwrap().sqrt();
        let t_up = tau(ru, &c).unwrap();
        let t_star = tau(c.r_star(), &c).unwrap();
        let plateau = w.radial_value(0.2).unwrap();
        assert!(below > t_up && t_up > t_star);
        assert!((t_star - plateau.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn free_boundary_condition_at_regular_optimum() {
        // constant weight: the optimal core radius balances |∂u_r| and √φ
        let c = cfg(0.1);
        let w = BernoulliWeight::constant(4.0).unwrap();
        let opt = minimize_radial(&c, &w).unwrap();
        assert!(!opt.at_boundary);
        let gap = |r: f64| radial_profile(r, &c).unwrap().slope(r) - 2.0;
        assert!(gap(opt.radius - 0.01) * gap(opt.radius + 0.01) < 0.0);
    }
}
