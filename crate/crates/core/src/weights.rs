//! Bernoulli weights `φ >= 0`, their cell averages, and superlevel measures.
//!
//! Averages are computed by the cheapest method that resolves the weight on
//! a given box: closed forms where they exist, a nested radial integrator
//! with breakpoints at the special radii of radial weights, and stratified
//! Monte Carlo for oblique planar weights. An average is `+∞` exactly when
//! the integral over the closed box diverges.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{ball_cells, Cone, Grid, Region, MAX_DIM};
use crate::quad::{self, Rule};

/// How the constant part of the annular example weight is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauRule {
    /// `τ(r_*)²`, the square of the minimal radial slope.
    #[default]
    TauConsistent,
    /// `(m r_*^{d-1})²`.
    AsPrinted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Manifold {
    Sphere { center: Vec<f64>, radius: f64 },
    Hyperplane { normal: Vec<f64>, offset: f64 },
}

fn zero() -> f64 {
    0.0
}

/// Analytic description of a weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    Constant {
        value: f64,
    },
    /// `base + amplitude·|x − center|^{-exponent}`.
    PointSingularity {
        center: Vec<f64>,
        amplitude: f64,
        exponent: f64,
        #[serde(default = "zero")]
        base: f64,
    },
    /// `base + amplitude·dist(x, manifold)^{-exponent}`.
    ManifoldDistance {
        manifold: Manifold,
        amplitude: f64,
        exponent: f64,
        #[serde(default = "zero")]
        base: f64,
    },
    /// The three-branch radial weight on the unit ball: a plateau inside
    /// `r_*`, `(|x| − r_*)^{-1/q}` on `[r_*, r^*)`, and the plateau again
    /// outside.
    AnnularRadial {
        dim: usize,
        q: f64,
        m: f64,
        #[serde(default)]
        plateau_rule: PlateauRule,
    },
    /// `base + amplitude·(n·x − offset)^{-exponent}` where `n·x > offset`,
    /// `base` elsewhere; `n` is normalized.
    OneSided {
        normal: Vec<f64>,
        offset: f64,
        amplitude: f64,
        exponent: f64,
        #[serde(default = "zero")]
        base: f64,
    },
    /// Piecewise-constant radial profile: `values[k]` on
    /// `radii[k-1] <= |x − center| < radii[k]`, the last value beyond.
    CustomTable {
        center: Vec<f64>,
        radii: Vec<f64>,
        values: Vec<f64>,
    },
    /// `factor·inner(center + scale·x)`.
    Rescaled {
        inner: Box<WeightSpec>,
        factor: f64,
        center: Vec<f64>,
        scale: f64,
    },
}

type AverageCache = Arc<Mutex<Vec<(Grid, Arc<Vec<f64>>)>>>;

/// A validated weight together with a per-grid cache of cell averages.
#[derive(Clone, Debug)]
pub struct BernoulliWeight {
    spec: WeightSpec,
    cache: AverageCache,
}

impl PartialEq for BernoulliWeight {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

/// `r_* = (d − 1)^{-1/(d−2)}` for `d >= 3`.
pub(crate) fn inner_radius(d: usize) -> f64 {
    (1.0 / (d as f64 - 1.0)).powf(1.0 / (d as f64 - 2.0))
}

pub(crate) fn plateau_value(d: usize, m: f64, rule: PlateauRule) -> f64 {
    let rs = inner_radius(d);
    match rule {
        PlateauRule::TauConsistent => {
            let tau = m * (d as f64 - 1.0) / rs;
            tau * tau
        }
        PlateauRule::AsPrinted => (m * rs.powi(d as i32 - 1)).powi(2),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(invalid(format!("{name} must be finite and non-negative")));
    }
    Ok(())
}

fn validate(spec: &WeightSpec) -> Result<()> {
    match spec {
        WeightSpec::Constant { value } => check_nonneg("constant weight", *value),
        WeightSpec::PointSingularity {
            amplitude,
            exponent,
            base,
            ..
        } => {
            check_nonneg("amplitude", *amplitude)?;
            check_nonneg("exponent", *exponent)?;
            check_nonneg("base", *base)
        }
        WeightSpec::ManifoldDistance {
            manifold,
            amplitude,
            exponent,
            base,
        } => {
            check_nonneg("amplitude", *amplitude)?;
            check_nonneg("exponent", *exponent)?;
            check_nonneg("base", *base)?;
            match manifold {
                Manifold::Sphere { radius, .. } if !(*radius > 0.0) => {
                    Err(invalid("sphere radius must be positive"))
                }
                Manifold::Hyperplane { normal, .. } if !(norm(normal) > 0.0) => {
                    Err(invalid("hyperplane normal must be nonzero"))
                }
                _ => Ok(()),
            }
        }
        WeightSpec::AnnularRadial { dim, q, m, .. } => {
            if *dim < 3 || *dim > MAX_DIM {
                return Err(invalid("annular example weight needs 3 <= d <= 4"));
            }
            if !(*q > 1.0) {
                return Err(invalid("annular example weight needs q > 1"));
            }
            if !(*m > 0.0) {
                return Err(invalid("boundary constant m must be positive"));
            }
            Ok(())
        }
        WeightSpec::OneSided {
            normal,
            amplitude,
            exponent,
            base,
            ..
        } => {
            check_nonneg("amplitude", *amplitude)?;
            check_nonneg("exponent", *exponent)?;
            check_nonneg("base", *base)?;
            if !(norm(normal) > 0.0) {
                return Err(invalid("one-sided normal must be nonzero"));
            }
            Ok(())
        }
        WeightSpec::CustomTable {
            radii, values, ..
        } => {
            if values.len() != radii.len() + 1 {
                return Err(invalid("custom table needs one more value than radii"));
            }
            if radii.windows(2).any(|w| !(w[0] < w[1])) || radii.iter().any(|r| !(*r > 0.0)) {
                return Err(invalid("custom table radii must be positive and increasing"));
            }
            values.iter().try_for_each(|v| check_nonneg("table value", *v))
        }
        WeightSpec::Rescaled {
            inner,
            factor,
            scale,
            ..
        } => {
            check_nonneg("rescale factor", *factor)?;
            if !(*scale > 0.0) {
                return Err(invalid("rescale radius must be positive"));
            }
            validate(inner)
        }
    }
}

/// Radial description of a weight about some center.
struct Radial<'a> {
    center: &'a [f64],
    /// radii where the profile jumps or blows up
    special: Vec<f64>,
    /// strength `γ` of the worst integrable radial singularity, in `[0, 1)`
    strength: f64,
    /// radii that carry a singularity (checked with a wider margin)
    singular: Vec<f64>,
}

impl BernoulliWeight {
    pub fn new(spec: WeightSpec) -> Result<Self> {
        validate(&spec)?;
        Ok(Self {
            spec,
            cache: Arc::new(Mutex::new(Vec::new())),
        })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(WeightSpec::Constant { value })
    }

    pub fn point_singularity(center: Vec<f64>, amplitude: f64, exponent: f64) -> Result<Self> {
        Self::new(WeightSpec::PointSingularity {
            center,
            amplitude,
            exponent,
            base: 0.0,
        })
    }

    pub fn annular(dim: usize, q: f64, m: f64, plateau_rule: PlateauRule) -> Result<Self> {
        Self::new(WeightSpec::AnnularRadial {
            dim,
            q,
            m,
            plateau_rule,
        })
    }

    pub fn spec(&self) -> &WeightSpec {
        &self.spec
    }

    /// Pointwise value, `+∞` on the singular set.
    pub fn eval(&self, x: &[f64]) -> f64 {
        eval_spec(&self.spec, x)
    }

    /// Radial profile `φ(ρ)` when the weight is radially symmetric about the
    /// origin.
    pub fn radial_value(&self, rho: f64) -> Option<f64> {
        radial_eval(&self.spec, rho)
    }

    /// True when the weight depends only on `|x|`.
    pub fn is_radial(&self) -> bool {
        radial_eval(&self.spec, 0.5).is_some()
    }

    /// Radii where the radial profile jumps or blows up, with the strength of
    /// the blow-up just outside (`left`) and just inside (`right`) each one.
    fn radial_singularities(&self, dim: usize) -> Vec<(f64, f64, f64)> {
        match &self.spec {
            WeightSpec::AnnularRadial { dim: d, q, .. } => {
                let rs = inner_radius(*d);
                vec![(rs, 1.0 / q, 0.0), (0.5 * (1.0 + rs), 0.0, 0.0)]
            }
            WeightSpec::CustomTable { radii, .. } => radii.iter().map(|&r| (r, 0.0, 0.0)).collect(),
            WeightSpec::PointSingularity { exponent, amplitude, .. } if *amplitude > 0.0 => {
                vec![(0.0, (exponent - (dim as f64 - 1.0)).max(0.0), 0.0)]
            }
            WeightSpec::ManifoldDistance {
                manifold: Manifold::Sphere { radius, .. },
                exponent,
                amplitude,
                ..
            } if *amplitude > 0.0 => vec![(*radius, *exponent, *exponent)],
            _ => Vec::new(),
        }
    }

    /// Radii where the radial profile jumps or blows up.
    pub fn radial_breakpoints(&self, dim: usize) -> Vec<f64> {
        self.radial_singularities(dim).iter().map(|s| s.0).collect()
    }

    /// `∫_a^b φ(ρ) ρ^{d-1} dρ` for a radial weight, with relative accuracy
    /// around `1e-10`. Returns `+∞` for divergent integrals.
    pub fn radial_moment(&self, a: f64, b: f64, dim: usize) -> Result<f64> {
        if !self.is_radial() {
            return Err(Error::NonRadialWeight);
        }
        if b <= a {
            return Ok(0.0);
        }
        let sing = self.radial_singularities(dim);
        if sing.iter().any(|&(r, left, right)| {
            (left >= 1.0 && r >= a && r < b) || (right >= 1.0 && r > a && r <= b)
        }) {
            return Ok(f64::INFINITY);
        }
        let mut cuts = vec![a, b];
        cuts.extend(sing.iter().map(|s| s.0).filter(|&r| r > a && r < b));
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let f = |rho: f64| self.radial_value(rho).unwrap() * rho.powi(dim as i32 - 1);
        let strength_at = |r: f64, from_right: bool| {
            sing.iter()
                .filter(|s| (s.0 - r).abs() < 1e-15)
                .map(|s| if from_right { s.1 } else { s.2 })
                .fold(0.0, f64::max)
        };
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (u, v) = (w[0], w[1]);
            let gl = strength_at(u, true);
            let gr = strength_at(v, false);
            let mid = 0.5 * (u + v);
            total += if gl > 0.0 {
                quad::integrate_left_singular(f, u, mid, gl, 1e-12)
            } else {
                quad::integrate(f, u, mid, 1e-12, 0.0)
            };
            total += if gr > 0.0 {
                quad::integrate_left_singular(|s| f(v + u - s), u, mid, gr, 1e-12)
            } else {
                quad::integrate(f, mid, v, 1e-12, 0.0)
            };
        }
        Ok(total)
    }

    fn radial_view(&self, dim: usize) -> Option<Radial<'_>> {
        match &self.spec {
            WeightSpec::AnnularRadial { dim: d, q, .. } if *d == dim => {
                let rs = inner_radius(*d);
                Some(Radial {
                    center: &ORIGIN[..dim],
                    special: vec![rs, 0.5 * (1.0 + rs)],
                    strength: 1.0 / q,
                    singular: vec![rs],
                })
            }
            WeightSpec::CustomTable { center, radii, .. } => Some(Radial {
                center,
                special: radii.clone(),
                strength: 0.0,
                singular: Vec::new(),
            }),
            WeightSpec::PointSingularity {
                center,
                exponent,
                amplitude,
                ..
            } if *amplitude > 0.0 && *exponent > 0.0 => Some(Radial {
                center,
                special: vec![0.0],
                strength: (exponent / dim as f64).min(0.9),
                singular: vec![0.0],
            }),
            WeightSpec::ManifoldDistance {
                manifold: Manifold::Sphere { center, radius },
                exponent,
                amplitude,
                ..
            } if *amplitude > 0.0 && *exponent > 0.0 => Some(Radial {
                center,
                special: vec![*radius],
                strength: exponent.min(0.9),
                singular: vec![*radius],
            }),
            _ => None,
        }
    }

    /// Mean of `φ` over the box `[lo, hi]`.
    pub fn box_average(&self, lo: &[f64], hi: &[f64]) -> f64 {
        let d = lo.len();
        let vol: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
        match &self.spec {
            WeightSpec::Constant { value } => *value,
            WeightSpec::Rescaled {
                inner,
                factor,
                center,
                scale,
            } => {
                if *factor == 0.0 {
                    return 0.0;
                }
                let inner = BernoulliWeight {
                    spec: (**inner).clone(),
                    cache: Arc::new(Mutex::new(Vec::new())),
                };
                let a: Vec<f64> = (0..d).map(|k| center[k] + scale * lo[k]).collect();
                let b: Vec<f64> = (0..d).map(|k| center[k] + scale * hi[k]).collect();
                factor * inner.box_average(&a, &b)
            }
            WeightSpec::PointSingularity {
                center,
                amplitude,
                exponent,
                base,
            } => {
                if *amplitude == 0.0 || *exponent == 0.0 {
                    return base + amplitude;
                }
                let inside = (0..d).all(|k| center[k] >= lo[k] && center[k] <= hi[k]);
                if inside && *exponent >= d as f64 {
                    return f64::INFINITY;
                }
                self.radial_box_average(lo, hi, vol)
            }
            WeightSpec::ManifoldDistance {
                manifold,
                amplitude,
                exponent,
                base,
            } => {
                if *amplitude == 0.0 || *exponent == 0.0 {
                    return base + amplitude;
                }
                match manifold {
                    Manifold::Sphere { center, radius } => {
                        let (rmin, rmax) = box_distance_range(center, lo, hi);
                        if *exponent >= 1.0 && rmin <= *radius && *radius <= rmax {
                            return f64::INFINITY;
                        }
                        self.radial_box_average(lo, hi, vol)
                    }
                    Manifold::Hyperplane { normal, offset } => {
                        let n = norm(normal);
                        let unit: Vec<f64> = normal.iter().map(|v| v / n).collect();
                        let s = offset / n;
                        planar_average(&unit, s, lo, hi, *base, *amplitude, *exponent, false)
                    }
                }
            }
            WeightSpec::OneSided {
                normal,
                offset,
                amplitude,
                exponent,
                base,
            } => {
                let n = norm(normal);
                let unit: Vec<f64> = normal.iter().map(|v| v / n).collect();
                planar_average(&unit, offset / n, lo, hi, *base, *amplitude, *exponent, true)
            }
            WeightSpec::AnnularRadial { dim, .. } => {
                if *dim != d {
                    return f64::NAN;
                }
                self.radial_box_average(lo, hi, vol)
            }
            WeightSpec::CustomTable { .. } => self.radial_box_average(lo, hi, vol),
        }
    }

    fn radial_box_average(&self, lo: &[f64], hi: &[f64], vol: f64) -> f64 {
        let d = lo.len();
        let view = self.radial_view(d).expect("radial weight");
        let c = view.center;
        let (rmin, rmax) = box_distance_range(c, lo, hi);
        let diam = dist(lo, hi);
        let near = view.special.iter().any(|&r| r >= rmin && r <= rmax)
            || view
                .singular
                .iter()
                .any(|&r| r >= rmin - diam && r <= rmax + diam);
        if !near {
            return tensor_gauss(&|x: &[f64]| self.eval(x), lo, hi, 4) / vol;
        }
        // Shell decomposition: ∫ φ(ρ) A(ρ) dρ with A the area of the sphere
        // of radius ρ inside the box. A is smooth between critical radii.
        let singular = view.singular.first().copied();
        let strength = match singular {
            Some(0.0) => (view.strength * d as f64 - (d as f64 - 1.0)).max(0.0),
            _ => view.strength,
        };
        // t^{-γ} becomes bounded under clustering with p(1 − γ) ≥ 1
        let p = (1.0 / (1.0 - strength)).ceil().clamp(2.0, 40.0);
        let mut cuts: Vec<f64> = critical_offsets(c, lo, hi, 0)
            .into_iter()
            .map(f64::sqrt)
            .chain(view.special.iter().copied())
            .filter(|&r| r > rmin && r < rmax)
            .collect();
        cuts.push(rmin);
        cuts.push(rmax);
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cuts.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * rmax);
        let radial = Rule::new(12);
        let inner = Rule::new(8);
        let rs = singular.unwrap_or(f64::NAN);
        let shell = |rho: f64, delta: f64| {
            let area = sphere_box_area(c, lo, hi, rho, &inner);
            if area == 0.0 {
                0.0
            } else {
                area * self.radial_profile_about_center(rho, delta)
            }
        };
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (ra, rb) = (w[0], w[1]);
            if ra != rs && rb != rs {
                total += quad::integrate_clustered(|rho| shell(rho, rho - rs), ra, rb, 2.0, &radial);
                continue;
            }
            // parametrize by the distance from the singular endpoint so that
            // ρ − R is exact there
            let (origin, dir) = if ra == rs { (ra, 1.0) } else { (rb, -1.0) };
            total += quad::integrate_clustered(
                |t| shell(origin + dir * t, dir * t),
                0.0,
                rb - ra,
                p,
                &radial,
            );
        }
        total / vol
    }

    /// Profile about the weight's own center; `delta` is `ρ − R` for the
    /// singular radius `R`.
    fn radial_profile_about_center(&self, rho: f64, delta: f64) -> f64 {
        match &self.spec {
            WeightSpec::PointSingularity {
                amplitude,
                exponent,
                base,
                ..
            } => base + amplitude * rho.powf(-exponent),
            WeightSpec::ManifoldDistance {
                amplitude,
                exponent,
                base,
                ..
            } => base + amplitude * delta.abs().powf(-exponent),
            WeightSpec::CustomTable { radii, values, .. } => table_value(radii, values, rho),
            WeightSpec::AnnularRadial {
                dim,
                q,
                m,
                plateau_rule,
            } => {
                let rb = 0.5 * (1.0 + inner_radius(*dim));
                if delta > 0.0 && rho < rb {
                    delta.powf(-1.0 / q)
                } else {
                    plateau_value(*dim, *m, *plateau_rule)
                }
            }
            _ => radial_eval(&self.spec, rho).unwrap_or(f64::NAN),
        }
    }

    /// Per-cell averages on `grid`, computed once and shared afterwards.
    pub fn cell_averages(&self, grid: &Grid) -> Arc<Vec<f64>> {
        let mut cache = self.cache.lock().expect("weight cache poisoned");
        if let Some((_, v)) = cache.iter().find(|(g, _)| g == grid) {
            return v.clone();
        }
        let values: Vec<f64> = (0..grid.len())
            .map(|i| {
                let (lo, hi) = grid.cell_bounds(i);
                self.box_average(&lo, &hi)
            })
            .collect();
        let values = Arc::new(values);
        cache.push((grid.clone(), values.clone()));
        values
    }

    /// Mean of `φ` over cell `idx` of `grid`.
    pub fn cell_average(&self, grid: &Grid, idx: usize) -> f64 {
        let (lo, hi) = grid.cell_bounds(idx);
        self.box_average(&lo, &hi)
    }

    /// Cell-counted measure of `{φ > t} ∩ B_r(x₀) (∩ cone)` on `grid`,
    /// evaluating `φ` at cell centers.
    pub fn superlevel_measure(&self, grid: &Grid, t: f64, x0: &[f64], r: f64, cone: Option<&Cone>) -> f64 {
        let full = Region::full(grid.clone());
        let mut x = vec![0.0; grid.dim()];
        let count = ball_cells(&full, x0, r)
            .into_iter()
            .filter(|&i| {
                grid.center_into(i, &mut x);
                cone.is_none_or(|c| c.contains(&x)) && self.eval(&x) > t
            })
            .count();
        count as f64 * grid.cell_volume()
    }
}

const ORIGIN: [f64; MAX_DIM] = [0.0; MAX_DIM];

fn table_value(radii: &[f64], values: &[f64], rho: f64) -> f64 {
    let k = radii.partition_point(|&r| r <= rho);
    values[k]
}

fn eval_spec(spec: &WeightSpec, x: &[f64]) -> f64 {
    match spec {
        WeightSpec::Constant { value } => *value,
        WeightSpec::PointSingularity {
            center,
            amplitude,
            exponent,
            base,
        } => {
            if *amplitude == 0.0 {
                return *base;
            }
            base + amplitude * dist(x, center).powf(-exponent)
        }
        WeightSpec::ManifoldDistance {
            manifold,
            amplitude,
            exponent,
            base,
        } => {
            if *amplitude == 0.0 {
                return *base;
            }
            let delta = match manifold {
                Manifold::Sphere { center, radius } => (dist(x, center) - radius).abs(),
                Manifold::Hyperplane { normal, offset } => {
                    let n = norm(normal);
                    (normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - offset).abs() / n
                }
            };
            base + amplitude * delta.powf(-exponent)
        }
        WeightSpec::OneSided {
            normal,
            offset,
            amplitude,
            exponent,
            base,
        } => {
            let n = norm(normal);
            let s = (normal.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - offset) / n;
            if s > 0.0 && *amplitude > 0.0 {
                base + amplitude * s.powf(-exponent)
            } else {
                *base
            }
        }
        WeightSpec::Rescaled {
            inner,
            factor,
            center,
            scale,
        } => {
            let y: Vec<f64> = x.iter().zip(center).map(|(a, c)| c + scale * a).collect();
            factor * eval_spec(inner, &y)
        }
        _ => radial_eval(spec, norm(x)).expect("radial"),
    }
}

fn radial_eval(spec: &WeightSpec, rho: f64) -> Option<f64> {
    let at_origin = |c: &[f64]| c.iter().all(|&v| v == 0.0);
    match spec {
        WeightSpec::Constant { value } => Some(*value),
        WeightSpec::AnnularRadial {
            dim,
            q,
            m,
            plateau_rule,
        } => {
            let rs = inner_radius(*dim);
            let rb = 0.5 * (1.0 + rs);
            Some(if rho >= rs && rho < rb {
                (rho - rs).powf(-1.0 / q)
            } else {
                plateau_value(*dim, *m, *plateau_rule)
            })
        }
        WeightSpec::CustomTable {
            center,
            radii,
            values,
        } if at_origin(center) => Some(table_value(radii, values, rho)),
        WeightSpec::PointSingularity {
            center,
            amplitude,
            exponent,
            base,
        } if at_origin(center) => Some(if *amplitude == 0.0 {
            *base
        } else {
            base + amplitude * rho.powf(-exponent)
        }),
        WeightSpec::ManifoldDistance {
            manifold: Manifold::Sphere { center, radius },
            amplitude,
            exponent,
            base,
        } if at_origin(center) => Some(if *amplitude == 0.0 {
            *base
        } else {
            base + amplitude * (rho - radius).abs().powf(-exponent)
        }),
        _ => None,
    }
}

/// Smallest and largest distance from `c` to the closed box.
fn box_distance_range(c: &[f64], lo: &[f64], hi: &[f64]) -> (f64, f64) {
    let mut near = 0.0;
    let mut far = 0.0;
    for k in 0..c.len() {
        let dn = if c[k] < lo[k] {
            lo[k] - c[k]
        } else if c[k] > hi[k] {
            c[k] - hi[k]
        } else {
            0.0
        };
        let df = (c[k] - lo[k]).abs().max((c[k] - hi[k]).abs());
        near += dn * dn;
        far += df * df;
    }
    (near.sqrt(), far.sqrt())
}

fn tensor_gauss(f: &dyn Fn(&[f64]) -> f64, lo: &[f64], hi: &[f64], n: usize) -> f64 {
    let d = lo.len();
    let (nodes, weights) = quad::gauss_legendre(n);
    let total = n.pow(d as u32);
    let mut x = [0.0f64; MAX_DIM];
    let mut sum = 0.0;
    for code in 0..total {
        let mut c = code;
        let mut w = 1.0;
        for k in 0..d {
            let j = c % n;
            c /= n;
            let half = 0.5 * (hi[k] - lo[k]);
            x[k] = 0.5 * (lo[k] + hi[k]) + half * nodes[j];
            w *= half * weights[j];
        }
        sum += w * f(&x[..d]);
    }
    sum
}

/// Surface measure of `{x ∈ [lo, hi] : |x − c| = ρ}`.
///
/// Uses the fact that uniform measure on a sphere projects to uniform
/// measure along all but two coordinates, so the area is `ρ` times the
/// integral, over those coordinates, of the angle the remaining circle
/// spends inside the last two sides of the box.
fn sphere_box_area(c: &[f64], lo: &[f64], hi: &[f64], rho: f64, rule: &Rule) -> f64 {
    let d = c.len();
    match d {
        1 => [c[0] - rho, c[0] + rho]
            .iter()
            .filter(|&&x| x >= lo[0] && x <= hi[0])
            .count() as f64
            / if rho == 0.0 { 2.0 } else { 1.0 },
        _ => rho * projected_angle(c, lo, hi, rho * rho, 0, 0.0, rule),
    }
}

fn projected_angle(c: &[f64], lo: &[f64], hi: &[f64], r2: f64, axis: usize, s: f64, rule: &Rule) -> f64 {
    let d = c.len();
    if axis + 2 == d {
        let r = (r2 - s).max(0.0).sqrt();
        return arc_angle(&c[axis..], &lo[axis..], &hi[axis..], r);
    }
    let ck = c[axis];
    let (a, b) = (lo[axis], hi[axis]);
    let mut cuts = vec![a, b];
    if ck > a && ck < b {
        cuts.push(ck);
    }
    for dd in critical_offsets(c, lo, hi, axis + 1) {
        let rem = r2 - s - dd;
        if rem > 0.0 {
            for x in [ck - rem.sqrt(), ck + rem.sqrt()] {
                if x > a && x < b {
                    cuts.push(x);
                }
            }
        }
    }
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (b - a));
    cuts.windows(2)
        .map(|w| {
            quad::integrate_clustered(
                |x| {
                    let s = s + (x - ck) * (x - ck);
                    if s > r2 {
                        0.0
                    } else {
                        projected_angle(c, lo, hi, r2, axis + 1, s, rule)
                    }
                },
                w[0],
                w[1],
                2.0,
                rule,
            )
        })
        .sum()
}

/// Squared distances from `c` to the faces, edges and corners of the box
/// restricted to axes `from..`, counting only foot points on the box, plus 0.
fn critical_offsets(c: &[f64], lo: &[f64], hi: &[f64], from: usize) -> Vec<f64> {
    let mut crit = vec![0.0f64];
    for k in from..c.len() {
        let free = c[k] > lo[k] && c[k] < hi[k];
        let opts = [(lo[k] - c[k]).powi(2), (hi[k] - c[k]).powi(2), 0.0];
        let opts = if free { &opts[..] } else { &opts[..2] };
        crit = crit
            .iter()
            .flat_map(|&base| opts.iter().map(move |&o| base + o))
            .collect();
    }
    crit.push(0.0);
    crit.sort_by(|x, y| x.partial_cmp(y).unwrap());
    crit.dedup();
    crit
}

/// Angle (radians) of the circle of radius `r` about `c` inside a rectangle.
fn arc_angle(c: &[f64], lo: &[f64], hi: &[f64], r: f64) -> f64 {
    let inside = |x: f64, y: f64| x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1];
    if r == 0.0 {
        return if inside(c[0], c[1]) { TAU } else { 0.0 };
    }
    let mut angles = [0.0f64; 10];
    angles[1] = TAU;
    let mut n = 2;
    for k in 0..2 {
        // axis 0 measures from the x direction, axis 1 from y
        let shift = if k == 0 { 0.0 } else { FRAC_PI_2 };
        for edge in [lo[k], hi[k]] {
            let u = (edge - c[k]) / r;
            if u.abs() <= 1.0 {
                let base = u.acos();
                angles[n] = (shift + base).rem_euclid(TAU);
                angles[n + 1] = (shift - base).rem_euclid(TAU);
                n += 2;
            }
        }
    }
    let angles = &mut angles[..n];
    angles.sort_by(|x, y| x.partial_cmp(y).unwrap());
    angles
        .windows(2)
        .filter(|w| w[1] > w[0])
        .filter(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            inside(c[0] + r * mid.cos(), c[1] + r * mid.sin())
        })
        .map(|w| w[1] - w[0])
        .sum()
}

/// Average of `base + amp·g(n·x − s)` over a box, where `g(t) = |t|^{-β}`
/// (two-sided) or `1{t>0} t^{-β}` (one-sided).
#[allow(clippy::too_many_arguments)]
fn planar_average(
    n: &[f64],
    s: f64,
    lo: &[f64],
    hi: &[f64],
    base: f64,
    amp: f64,
    beta: f64,
    one_sided: bool,
) -> f64 {
    let d = lo.len();
    // range of n·x − s over the closed box
    let mut tmin = -s;
    let mut tmax = -s;
    for k in 0..d {
        let (a, b) = (n[k] * lo[k], n[k] * hi[k]);
        tmin += a.min(b);
        tmax += a.max(b);
    }
    if amp == 0.0 {
        return base;
    }
    if one_sided && tmax <= 0.0 {
        return base;
    }
    let touches = if one_sided {
        tmin <= 0.0 && tmax > 0.0
    } else {
        tmin <= 0.0 && tmax >= 0.0
    };
    if touches && beta >= 1.0 {
        return f64::INFINITY;
    }
    let g = |t: f64| {
        if one_sided {
            if t > 0.0 {
                t.powf(-beta)
            } else {
                0.0
            }
        } else {
            t.abs().powf(-beta)
        }
    };
    if n.iter().any(|&v| (v.abs() - 1.0).abs() < 1e-14) {
        // axis-aligned: closed form in one variable
        let (t0, t1) = (tmin, tmax);
        let prim = |t: f64| -> f64 {
            // ∫_0^t g
            let e = 1.0 - beta;
            if one_sided {
                if t <= 0.0 {
                    0.0
                } else {
                    t.powf(e) / e
                }
            } else {
                t.signum() * t.abs().powf(e) / e
            }
        };
        return base + amp * (prim(t1) - prim(t0)) / (t1 - t0);
    }
    base + amp * mc_average(&g, n, s, lo, hi)
}

/// Stratified (jittered) Monte Carlo mean of `g(n·x − s)` over a box:
/// batches of at least 256 samples until the relative standard error of the
/// batch means falls to 1%.
fn mc_average(g: &dyn Fn(f64) -> f64, n: &[f64], s: f64, lo: &[f64], hi: &[f64]) -> f64 {
    let d = lo.len();
    let per_axis = (256f64.powf(1.0 / d as f64)).ceil() as usize;
    let strata = per_axis.pow(d as u32);
    let mut seed: u64 = 0x9e37_79b9_7f4a_7c15;
    for k in 0..d {
        seed = seed.rotate_left(17) ^ lo[k].to_bits();
        seed = seed.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::new();
    loop {
        let mut sum = 0.0;
        for code in 0..strata {
            let mut c = code;
            let mut t = -s;
            for k in 0..d {
                let j = c % per_axis;
                c /= per_axis;
                let u = (j as f64 + rng.gen::<f64>()) / per_axis as f64;
                t += n[k] * (lo[k] + u * (hi[k] - lo[k]));
            }
            sum += g(t);
        }
        means.push(sum / strata as f64);
        let b = means.len() as f64;
        let mean = means.iter().sum::<f64>() / b;
        if means.len() >= 4 {
            let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (b - 1.0);
            let se = (var / b).sqrt();
            if se <= 0.01 * mean.abs() || means.len() >= 256 {
                return mean;
            }
        }
    }
}

/// Measures of `{φ > t} ∩ B_r(x₀) (∩ cone)` over a lattice of radii and
/// thresholds.
#[derive(Clone, Debug, Serialize)]
pub struct SuperlevelProfile {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// `measures[i][j]` for `radii[i]`, `thresholds[j]`
    pub measures: Vec<Vec<f64>>,
    /// measure of `B_r(x₀) (∩ cone)` per radius
    pub caps: Vec<f64>,
    pub cone: Option<Cone>,
}

/// Settings for [`verify_growth_hypothesis`].
#[derive(Clone, Debug)]
pub struct GrowthCheck {
    pub center: Vec<f64>,
    pub p: f64,
    pub sigma: f64,
    pub radii: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub cone: Option<Cone>,
    /// cells per axis of the sampling grid on the cube around `B_{r_max}`
    pub resolution: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthFit {
    /// Largest `c₀` with `|{φ > t} ∩ B_r| >= min(c₀ r^σ t^{-p}, |B_r|)` on the
    /// lattice; `+∞` when every entry saturates.
    pub c0: f64,
    /// The same constant restricted to each radius.
    pub per_radius: Vec<f64>,
    /// Log-log slope of `per_radius` against `r` (NaN with fewer than two
    /// finite values).
    pub decay_slope: f64,
    pub pass: bool,
}

pub fn superlevel_profile(w: &BernoulliWeight, check: &GrowthCheck) -> Result<SuperlevelProfile> {
    let d = check.center.len();
    if check.radii.is_empty() || check.thresholds.is_empty() {
        return Err(invalid("radii and thresholds must be nonempty"));
    }
    let rmax = check.radii.iter().cloned().fold(0.0, f64::max);
    if !(rmax > 0.0) || check.thresholds.iter().any(|t| !(*t > 0.0)) {
        return Err(invalid("radii and thresholds must be positive"));
    }
    let n = check.resolution.max(2);
    let lower: Vec<f64> = check.center.iter().map(|c| c - rmax).collect();
    let upper: Vec<f64> = check.center.iter().map(|c| c + rmax).collect();
    let grid = Grid::new(lower, upper, vec![n; d])?;
    let full = Region::full(grid.clone());
    let mut x = vec![0.0; d];
    let mut measures = Vec::with_capacity(check.radii.len());
    let mut caps = Vec::with_capacity(check.radii.len());
    let vol = grid.cell_volume();
    for &r in &check.radii {
        let cells: Vec<(usize, f64)> = ball_cells(&full, &check.center, r)
            .into_iter()
            .filter_map(|i| {
                grid.center_into(i, &mut x);
                if check.cone.as_ref().is_none_or(|c| c.contains(&x)) {
                    Some((i, w.eval(&x)))
                } else {
                    None
                }
            })
            .collect();
        caps.push(cells.len() as f64 * vol);
        measures.push(
            check
                .thresholds
                .iter()
                .map(|&t| cells.iter().filter(|(_, v)| *v > t).count() as f64 * vol)
                .collect(),
        );
    }
    Ok(SuperlevelProfile {
        center: check.center.clone(),
        radii: check.radii.clone(),
        thresholds: check.thresholds.clone(),
        measures,
        caps,
        cone: check.cone.clone(),
    })
}

/// Fits the constant of the superlevel growth hypothesis
/// `|{φ > t} ∩ B_r(x₀)| >= min(c₀ r^σ t^{-p}, |B_r(x₀)|)`.
///
/// A finite sample always yields some positive `c₀`, so the check also
/// requires that the per-radius constants do not decay like a power of `r`
/// (log-log slope below 0.5); decay means the hypothesis fails as `r → 0`.
pub fn verify_growth_hypothesis(w: &BernoulliWeight, check: &GrowthCheck) -> Result<GrowthFit> {
    let profile = superlevel_profile(w, check)?;
    let mut per_radius = Vec::with_capacity(profile.radii.len());
    for (i, &r) in profile.radii.iter().enumerate() {
        let cap = profile.caps[i];
        let mut c = f64::INFINITY;
        for (j, &t) in profile.thresholds.iter().enumerate() {
            let m = profile.measures[i][j];
            if m < cap * (1.0 - 1e-12) {
                c = c.min(m * t.powf(check.p) / r.powf(check.sigma));
            }
        }
        per_radius.push(c);
    }
    let c0 = per_radius.iter().cloned().fold(f64::INFINITY, f64::min);
    let pts: Vec<(f64, f64)> = profile
        .radii
        .iter()
        .zip(&per_radius)
        .filter(|(_, c)| c.is_finite() && **c > 0.0)
        .map(|(r, c)| (r.ln(), c.ln()))
        .collect();
    let decay_slope = if pts.len() >= 2 {
        crate::analyze::least_squares(&pts).0
    } else {
        f64::NAN
    };
    let pass = c0 > 0.0 && !(decay_slope >= 0.5);
    Ok(GrowthFit {
        c0,
        per_radius,
        decay_slope,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{vol_ball, ScalarField};

    fn annular_weight() -> BernoulliWeight {
        BernoulliWeight::annular(3, 2.0, 0.2, PlateauRule::TauConsistent).unwrap()
    }

    #[test]
    fn pointwise_examples() {
        let c = BernoulliWeight::constant(3.0).unwrap();
        assert_eq!(c.eval(&[0.3, -0.2]), 3.0);
        let p = BernoulliWeight::point_singularity(vec![0.1, 0.1], 1.0, 1.0).unwrap();
        assert!((p.eval(&[0.35, 0.1]) - 4.0).abs() < 1e-12);
        let w = annular_weight();
        assert!((w.eval(&[0.6, 0.0, 0.0]) - 0.1f64.powf(-0.5)).abs() < 1e-9);
        assert!(w.eval(&[0.5, 0.0, 0.0]).is_infinite());
        assert!((w.eval(&[0.2, 0.0, 0.0]) - 0.64).abs() < 1e-12);
        assert!((w.eval(&[0.0, 0.9, 0.0]) - 0.64).abs() < 1e-12);
        let printed = BernoulliWeight::annular(3, 2.0, 0.2, PlateauRule::AsPrinted).unwrap();
        assert!((printed.eval(&[0.2, 0.0, 0.0]) - (0.2f64 * 0.25).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(BernoulliWeight::constant(-1.0).is_err());
        assert!(BernoulliWeight::annular(2, 2.0, 0.2, PlateauRule::TauConsistent).is_err());
        assert!(BernoulliWeight::annular(3, 1.0, 0.2, PlateauRule::TauConsistent).is_err());
        assert!(BernoulliWeight::new(WeightSpec::CustomTable {
            center: vec![0.0, 0.0],
            radii: vec![0.5, 0.2],
            values: vec![1.0, 2.0, 3.0],
        })
        .is_err());
    }

    /// Closed form of `∫∫_{[0,a]×[0,b]} |x|^{-1}`.
    fn inv_radius_rect(a: f64, b: f64) -> f64 {
        a * (b / a).asinh() + b * (a / b).asinh()
    }

    #[test]
    fn shell_areas_integrate_to_box_volume() {
        let rule = Rule::new(12);
        // whole sphere inside the box
        let c = [0.1, -0.2, 0.05];
        let a = sphere_box_area(&c, &[-1.0; 3], &[1.0; 3], 0.5, &rule);
        assert!((a - crate::field::area_sphere(3) * 0.25).abs() < 1e-6, "{a}");
        let a = sphere_box_area(&c[..2], &[-1.0; 2], &[1.0; 2], 0.5, &rule);
        assert!((a - TAU * 0.5).abs() < 1e-12, "{a}");
        // coarea: ∫ A(ρ) dρ over all radii is the box volume
        let lo = [0.3, -0.1, 0.2];
        let hi = [0.7, 0.25, 0.45];
        let (rmin, rmax) = box_distance_range(&c, &lo, &hi);
        let mut cuts: Vec<f64> = critical_offsets(&c, &lo, &hi, 0)
            .into_iter()
            .map(f64::sqrt)
            .filter(|&r| r > rmin && r < rmax)
            .collect();
        cuts.extend([rmin, rmax]);
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let vol: f64 = cuts
            .windows(2)
            .map(|w| {
                quad::integrate_clustered(|r| sphere_box_area(&c, &lo, &hi, r, &rule), w[0], w[1], 2.0, &Rule::new(16))
            })
            .sum();
        assert!((vol - 0.4 * 0.35 * 0.25).abs() < 1e-8, "{vol}");
    }

    #[test]
    fn point_singularity_cell_averages() {
        let w = BernoulliWeight::point_singularity(vec![0.0, 0.0], 1.0, 1.0).unwrap();
        let h = 0.05;
        // a cell away from the origin: compare with a fine tensor rule
        let lo = [2.0 * h, h];
        let hi = [3.0 * h, 2.0 * h];
        let oracle = tensor_gauss(&|x: &[f64]| w.eval(x), &lo, &hi, 40) / (h * h);
        let avg = w.box_average(&lo, &hi);
        assert!((avg - oracle).abs() < 1e-6 * oracle);
        let mid = w.eval(&[2.5 * h, 1.5 * h]);
        assert!((avg - mid).abs() < 0.01 * mid);

        // the cell with the origin at its corner, and one with it inside
        let exact = inv_radius_rect(h, h) / (h * h);
        let avg = w.box_average(&[0.0, 0.0], &[h, h]);
        assert!((avg - exact).abs() < 1e-3 * exact, "{avg} {exact}");
        let exact = (inv_radius_rect(0.3 * h, 0.6 * h)
            + inv_radius_rect(0.7 * h, 0.6 * h)
            + inv_radius_rect(0.3 * h, 0.4 * h)
            + inv_radius_rect(0.7 * h, 0.4 * h))
            / (h * h);
        let avg = w.box_average(&[-0.3 * h, -0.6 * h], &[0.7 * h, 0.4 * h]);
        assert!((avg - exact).abs() < 1e-3 * exact, "{avg} {exact}");

        let strong = BernoulliWeight::point_singularity(vec![0.0, 0.0], 1.0, 2.0).unwrap();
        assert!(strong.box_average(&[-h, -h], &[0.0, 0.0]).is_infinite());
        assert!(strong.box_average(&[h, h], &[2.0 * h, 2.0 * h]).is_finite());
    }

    #[test]
    fn annular_cell_average_matches_fine_shells() {
        let w = annular_weight();
        // a cell straddling r_* = 0.5
        let lo = [0.48, 0.02, -0.03];
        let hi = [0.53, 0.07, 0.02];
        let avg = w.box_average(&lo, &hi);
        // oracle: split x into many slabs, each integrated by the 1D radial
        // substitution along x with tensor Gauss in (y, z)
        let (yn, yw) = quad::gauss_legendre(24);
        let mut total = 0.0;
        for (iy, &ty) in yn.iter().enumerate() {
            for (iz, &tz) in yn.iter().enumerate() {
                let y = 0.045 + 0.025 * ty;
                let z = -0.005 + 0.025 * tz;
                let rest = y * y + z * z;
                let xs = (0.25 - rest).sqrt();
                let xb = (0.75f64 * 0.75 - rest).sqrt();
                let _ = xb;
                let f = |x: f64| w.eval(&[x, y, z]);
                let mut line = quad::integrate(f, lo[0], xs, 1e-12, 0.0);
                // ρ − r_* = (x² − xs²)/(ρ + r_*) with x = xs + t
                let g = |t: f64| {
                    let x = xs + t;
                    let rho = (x * x + rest).sqrt();
                    (t * (2.0 * xs + t) / (rho + 0.5)).powf(-0.5)
                };
                line += quad::integrate_left_singular(|x| g(x - xs), xs, hi[0], 0.5, 1e-12);
                total += yw[iy] * yw[iz] * 0.025 * 0.025 * line;
            }
        }
        let oracle = total / (0.05f64.powi(3));
        assert!((avg - oracle).abs() < 1e-4 * oracle, "{avg} vs {oracle}");
    }

    #[test]
    fn sphere_distance_blows_up_across_the_sphere() {
        let w = BernoulliWeight::new(WeightSpec::ManifoldDistance {
            manifold: Manifold::Sphere {
                center: vec![0.0, 0.0],
                radius: 0.5,
            },
            amplitude: 1.0,
            exponent: 1.0,
            base: 0.0,
        })
        .unwrap();
        assert!(w.box_average(&[0.45, 0.0], &[0.55, 0.1]).is_infinite());
        assert!(w.box_average(&[0.1, 0.0], &[0.2, 0.1]).is_finite());
    }

    #[test]
    fn planar_weights() {
        let h = 0.1;
        let one = BernoulliWeight::new(WeightSpec::OneSided {
            normal: vec![1.0, 0.0],
            offset: 0.0,
            amplitude: 1.0,
            exponent: 0.5,
            base: 0.0,
        })
        .unwrap();
        // ∫_0^h t^{-1/2} dt / h = 2/√h
        let avg = one.box_average(&[0.0, 0.0], &[h, h]);
        assert!((avg - 2.0 / h.sqrt()).abs() < 1e-12);
        assert_eq!(one.box_average(&[-h, 0.0], &[0.0, h]), 0.0);

        // oblique plane: compare MC against the exact line integral
        let obl = BernoulliWeight::new(WeightSpec::ManifoldDistance {
            manifold: Manifold::Hyperplane {
                normal: vec![1.0, 1.0],
                offset: 0.1,
            },
            amplitude: 1.0,
            exponent: 0.5,
            base: 0.0,
        })
        .unwrap();
        let lo = [0.0, 0.0];
        let hi = [h, h];
        let avg = obl.box_average(&lo, &hi);
        // for fixed x the singular point is y₀ = 0.1 − x ∈ [0, h]
        let line = |x: f64| {
            let y0 = 0.1 - x;
            2f64.powf(0.25) * 2.0 * (y0.sqrt() + (h - y0).sqrt())
        };
        let oracle = quad::integrate(line, 0.0, h, 1e-10, 0.0) / (h * h);
        assert!((avg - oracle).abs() < 0.04 * oracle, "{avg} {oracle}");
        // deterministic per box
        assert_eq!(avg.to_bits(), obl.box_average(&lo, &hi).to_bits());
    }

    #[test]
    fn radial_moment_of_annular_singular_part() {
        let w = annular_weight();
        let full = w.radial_moment(0.5, 0.75, 3).unwrap();
        let s: f64 = 0.25;
        let exact = 0.4 * s.powf(2.5) + 2.0 / 3.0 * s.powf(1.5) + 0.5 * s.sqrt();
        assert!((full - exact).abs() < 1e-10 * exact);
        assert!((exact - 0.34583).abs() < 1e-5);
        let p = BernoulliWeight::point_singularity(vec![0.0, 0.0], 1.0, 0.5).unwrap();
        assert!(matches!(p.radial_moment(0.0, 1.0, 2), Ok(v) if (v - 2.0 / 3.0).abs() < 1e-9));
        let off = BernoulliWeight::point_singularity(vec![0.1, 0.0], 1.0, 0.5).unwrap();
        assert!(matches!(off.radial_moment(0.0, 1.0, 2), Err(Error::NonRadialWeight)));
    }

    #[test]
    fn superlevel_examples() {
        let grid = Grid::cube(2, -1.0, 1.0, 128).unwrap();
        let c = BernoulliWeight::constant(2.0).unwrap();
        let full = ball_cells(&Region::full(grid.clone()), &[0.0, 0.0], 0.5).len() as f64
            * grid.cell_volume();
        assert_eq!(c.superlevel_measure(&grid, 1.0, &[0.0, 0.0], 0.5, None), full);
        assert_eq!(c.superlevel_measure(&grid, 2.0, &[0.0, 0.0], 0.5, None), 0.0);

        // |x|^{-d/p} with d = p = 2: {φ > t} = B_{1/t}
        let p = BernoulliWeight::point_singularity(vec![0.0, 0.0], 1.0, 1.0).unwrap();
        let grid = Grid::cube(2, -1.0, 1.0, 512).unwrap();
        let t: f64 = 10.0;
        let m = p.superlevel_measure(&grid, t, &[0.0, 0.0], 0.5, None);
        let expect = vol_ball(2) * t.powi(-2);
        assert!((m - expect).abs() < 0.1 * expect, "{m} {expect}");
    }

    #[test]
    fn growth_hypothesis_examples() {
        let c = BernoulliWeight::constant(2.0).unwrap();
        let check = GrowthCheck {
            center: vec![0.0, 0.0],
            p: 1.0,
            sigma: 0.0,
            radii: vec![0.1, 0.2, 0.4],
            thresholds: vec![0.5, 1.0, 1.5],
            cone: None,
            resolution: 64,
        };
        let fit = verify_growth_hypothesis(&c, &check).unwrap();
        assert!(fit.pass && fit.c0.is_infinite());

        // |x|^{-d/p} with p = 2, d = 2
        let p = BernoulliWeight::point_singularity(vec![0.0, 0.0], 1.0, 1.0).unwrap();
        let check = GrowthCheck {
            radii: vec![0.125, 0.25, 0.5],
            thresholds: vec![10.0, 20.0, 40.0],
            p: 2.0,
            resolution: 512,
            ..check
        };
        let fit = verify_growth_hypothesis(&p, &check).unwrap();
        assert!(fit.pass);
        assert!(fit.c0 >= 0.5 * vol_ball(2) && fit.c0 <= 1.5 * vol_ball(2), "{}", fit.c0);
    }

    #[test]
    fn one_sided_weight_needs_its_cone() {
        let w = BernoulliWeight::new(WeightSpec::OneSided {
            normal: vec![1.0, 0.0, 0.0],
            offset: 0.0,
            amplitude: 1.0,
            exponent: 0.5,
            base: 0.0,
        })
        .unwrap();
        let mut check = GrowthCheck {
            center: vec![0.0; 3],
            p: 2.0,
            sigma: 2.0,
            radii: vec![0.0625, 0.125, 0.25, 0.5],
            thresholds: vec![1.0, 2.0, 4.0, 8.0],
            cone: None,
            resolution: 64,
        };
        let without = verify_growth_hypothesis(&w, &check).unwrap();
        assert!(!without.pass, "{without:?}");
        check.cone = Some(Cone::half_space(vec![0.0; 3], vec![1.0, 0.0, 0.0]));
        let with = verify_growth_hypothesis(&w, &check).unwrap();
        assert!(with.pass, "{with:?}");
    }

    #[test]
    fn sampled_point_singularity_has_stable_weak_norm() {
        for n in [128, 256] {
            let grid = Grid::cube(2, -1.0, 1.0, n).unwrap();
            let r = Arc::new(Region::ball(grid, vec![0.0, 0.0], 1.0).unwrap());
            let w = BernoulliWeight::point_singularity(vec![0.0, 0.0], 1.0, 1.0).unwrap();
            let f = ScalarField::from_fn(r.clone(), |x| w.eval(x)).unwrap();
            let v = f.weak_lq_norm(2.0, &r).unwrap();
            let target = vol_ball(2).sqrt();
            assert!(v >= 0.8 * target && v <= 1.2 * target, "{n}: {v}");
        }
    }

    #[test]
    fn cell_averages_are_cached_and_shared() {
        let w = annular_weight();
        let grid = Grid::cube(3, -1.0, 1.0, 8).unwrap();
        let a = w.cell_averages(&grid);
        let b = w.clone().cell_averages(&grid);
        assert!(Arc::ptr_eq(&a, &b));
        assert!(a.iter().all(|v| v.is_finite() && *v > 0.0));
    }
}
