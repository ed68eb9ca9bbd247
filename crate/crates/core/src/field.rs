//! Cartesian grids, regions, and cell-centered fields.
//!
//! Every set measure in the crate is a cell count times the cell volume,
//! where a cell belongs to a set when its center does.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default upper bound on the number of cells in a grid.
pub const DEFAULT_CELL_BUDGET: usize = 1 << 24;

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 4;

/// Volume of the unit ball in `d` dimensions.
pub fn vol_ball(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => vol_ball(d - 2) * 2.0 * PI / d as f64,
    }
}

/// Surface measure of the unit sphere in `d` dimensions.
pub fn area_sphere(d: usize) -> f64 {
    d as f64 * vol_ball(d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    cells: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl Grid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        Self::with_budget(lower, upper, cells, DEFAULT_CELL_BUDGET)
    }

    pub fn with_budget(
        lower: Vec<f64>,
        upper: Vec<f64>,
        cells: Vec<usize>,
        budget: usize,
    ) -> Result<Self> {
        let dim = cells.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(invalid(format!("grid dimension {dim} outside 1..={MAX_DIM}")));
        }
        if lower.len() != dim || upper.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: lower.len().min(upper.len()),
            });
        }
        if cells.iter().any(|&n| n < 2) {
            return Err(invalid("every axis needs at least 2 cells"));
        }
        let mut len: usize = 1;
        for &n in &cells {
            len = len
                .checked_mul(n)
                .filter(|&l| l <= budget)
                .ok_or_else(|| invalid(format!("grid exceeds the cell budget of {budget}")))?;
        }
        let mut spacing = Vec::with_capacity(dim);
        for k in 0..dim {
            let h = (upper[k] - lower[k]) / cells[k] as f64;
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid(format!("axis {k} has non-positive extent")));
            }
            spacing.push(h);
        }
        let mut strides = vec![1; dim];
        for k in (0..dim - 1).rev() {
            strides[k] = strides[k + 1] * cells[k + 1];
        }
        Ok(Self {
            lower,
            upper,
            cells,
            spacing,
            strides,
            len,
        })
    }

    /// Grid on the cube `[lo, hi]^dim` with `n` cells per axis.
    pub fn cube(dim: usize, lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim], vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut idx: usize, out: &mut [usize]) {
        for k in 0..self.dim() {
            out[k] = idx / self.strides[k];
            idx %= self.strides[k];
        }
    }

    pub fn center_into(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for k in 0..self.dim() {
            let i = rem / self.strides[k];
            rem %= self.strides[k];
            out[k] = self.lower[k] + (i as f64 + 0.5) * self.spacing[k];
        }
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.center_into(idx, &mut x);
        x
    }

    /// Lower and upper corners of a cell.
    pub fn cell_bounds(&self, idx: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![0.0; self.dim()];
        let mut hi = vec![0.0; self.dim()];
        let mut rem = idx;
        for k in 0..self.dim() {
            let i = rem / self.strides[k];
            rem %= self.strides[k];
            lo[k] = self.lower[k] + i as f64 * self.spacing[k];
            hi[k] = lo[k] + self.spacing[k];
        }
        (lo, hi)
    }

    /// Cell containing `point`, if the point lies inside the grid box.
    pub fn locate(&self, point: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for k in 0..self.dim() {
            let t = (point[k] - self.lower[k]) / self.spacing[k];
            if !(t >= 0.0) || t > self.cells[k] as f64 {
                return None;
            }
            let i = (t.floor() as usize).min(self.cells[k] - 1);
            idx += i * self.strides[k];
        }
        Some(idx)
    }

    /// Face neighbor of `idx` along `axis` (`forward` = +1 direction).
    pub fn neighbor(&self, idx: usize, axis: usize, forward: bool) -> Option<usize> {
        let i = (idx / self.strides[axis]) % self.cells[axis];
        if forward {
            (i + 1 < self.cells[axis]).then(|| idx + self.strides[axis])
        } else {
            (i > 0).then(|| idx - self.strides[axis])
        }
    }

    /// Calls `f` for every cell of the `3^d` block around `idx` (excluding
    /// `idx`); cells outside the grid are reported as `None`.
    pub fn for_each_block_neighbor(&self, idx: usize, mut f: impl FnMut(Option<usize>)) {
        let d = self.dim();
        let mut multi = [0usize; MAX_DIM];
        self.multi_index(idx, &mut multi[..d]);
        let total = 3usize.pow(d as u32);
        'outer: for code in 0..total {
            let mut c = code;
            let mut target = 0usize;
            let mut is_self = true;
            let mut outside = false;
            for k in (0..d).rev() {
                let off = (c % 3) as isize - 1;
                c /= 3;
                if off != 0 {
                    is_self = false;
                }
                let j = multi[k] as isize + off;
                if j < 0 || j >= self.cells[k] as isize {
                    outside = true;
                } else {
                    target += j as usize * self.strides[k];
                }
            }
            if is_self {
                continue 'outer;
            }
            f(if outside { None } else { Some(target) });
        }
    }
}

/// Shape used to build a region mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Shape {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Annulus { center: Vec<f64>, inner: f64, outer: f64 },
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Box,
    Ball,
    Annulus,
    Custom,
}

/// A masked subset of a grid.
#[derive(Clone, Debug)]
pub struct Region {
    grid: Grid,
    mask: Vec<bool>,
    shape: Shape,
    count: usize,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl Region {
    /// Builds the region whose cells have centers inside `shape`.
    pub fn new(grid: Grid, shape: Shape) -> Result<Self> {
        let d = grid.dim();
        let tol = 1e-12 * (1.0 + grid.max_spacing());
        let predicate: Box<dyn Fn(&[f64]) -> bool> = match &shape {
            Shape::Box { lower, upper } => {
                if lower.len() != d || upper.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: lower.len(),
                    });
                }
                let (lo, hi) = (lower.clone(), upper.clone());
                Box::new(move |x: &[f64]| (0..x.len()).all(|k| x[k] >= lo[k] && x[k] <= hi[k]))
            }
            Shape::Ball { center, radius } => {
                check_center(&grid, center)?;
                if !(*radius >= 0.0) {
                    return Err(invalid("ball radius must be non-negative"));
                }
                check_fits(&grid, center, *radius, tol)?;
                let (c, r) = (center.clone(), *radius);
                Box::new(move |x: &[f64]| dist(x, &c) < r)
            }
            Shape::Annulus {
                center,
                inner,
                outer,
            } => {
                check_center(&grid, center)?;
                if !(*inner >= 0.0 && outer >= inner) {
                    return Err(invalid("annulus needs 0 <= inner <= outer"));
                }
                check_fits(&grid, center, *outer, tol)?;
                let (c, a, b) = (center.clone(), *inner, *outer);
                Box::new(move |x: &[f64]| {
                    let r = dist(x, &c);
                    r >= a && r <= b
                })
            }
            Shape::Custom => return Err(invalid("custom regions are built from a mask")),
        };
        let mut x = vec![0.0; d];
        let mask: Vec<bool> = (0..grid.len())
            .map(|i| {
                grid.center_into(i, &mut x);
                predicate(&x)
            })
            .collect();
        Self::from_parts(grid, mask, shape)
    }

    pub fn full(grid: Grid) -> Self {
        let shape = Shape::Box {
            lower: grid.lower().to_vec(),
            upper: grid.upper().to_vec(),
        };
        let count = grid.len();
        Self {
            mask: vec![true; count],
            grid,
            shape,
            count,
        }
    }

    pub fn ball(grid: Grid, center: Vec<f64>, radius: f64) -> Result<Self> {
        Self::new(grid, Shape::Ball { center, radius })
    }

    pub fn from_mask(grid: Grid, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(Error::MaskMismatch("mask length differs from grid".into()));
        }
        Self::from_parts(grid, mask, Shape::Custom)
    }

    fn from_parts(grid: Grid, mask: Vec<bool>, shape: Shape) -> Result<Self> {
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::DegenerateRegion);
        }
        Ok(Self {
            grid,
            mask,
            shape,
            count,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn kind(&self) -> RegionKind {
        match self.shape {
            Shape::Box { .. } => RegionKind::Box,
            Shape::Ball { .. } => RegionKind::Ball,
            Shape::Annulus { .. } => RegionKind::Annulus,
            Shape::Custom => RegionKind::Custom,
        }
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn cell_count(&self) -> usize {
        self.count
    }

    pub fn measure(&self) -> f64 {
        self.count as f64 * self.grid.cell_volume()
    }

    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }

    /// True when `other` lives on the same grid and its mask is contained in ours.
    pub fn includes(&self, other: &Region) -> bool {
        self.grid == other.grid && other.cells().all(|i| self.mask[i])
    }

    /// Mask cells with an unmasked (or missing) face neighbor.
    pub fn boundary_layer(&self) -> Vec<bool> {
        let d = self.grid.dim();
        (0..self.grid.len())
            .map(|i| {
                self.mask[i]
                    && (0..d).any(|k| {
                        [false, true].iter().any(|&fwd| match self.grid.neighbor(i, k, fwd) {
                            Some(j) => !self.mask[j],
                            None => true,
                        })
                    })
            })
            .collect()
    }

    /// Mask cells whose whole `3^d` block lies in the mask. These are the
    /// cells whose hat functions vanish on the region boundary; all other mask
    /// cells carry Dirichlet data in the elliptic solves.
    pub fn interior(&self) -> Vec<bool> {
        (0..self.grid.len())
            .map(|i| {
                if !self.mask[i] {
                    return false;
                }
                let mut inside = true;
                self.grid.for_each_block_neighbor(i, |j| {
                    if !matches!(j, Some(j) if self.mask[j]) {
                        inside = false;
                    }
                });
                inside
            })
            .collect()
    }

    /// Sub-region of cells whose centers lie in `B_radius(center)`.
    pub fn restrict_ball(&self, center: &[f64], radius: f64) -> Result<Region> {
        let d = self.grid.dim();
        check_center(&self.grid, center)?;
        let mut x = vec![0.0; d];
        let mask: Vec<bool> = (0..self.grid.len())
            .map(|i| {
                self.mask[i] && {
                    self.grid.center_into(i, &mut x);
                    dist(&x, center) < radius
                }
            })
            .collect();
        Self::from_parts(
            self.grid.clone(),
            mask,
            Shape::Ball {
                center: center.to_vec(),
                radius,
            },
        )
    }

    /// Distance from `point` to the complement of the region's shape. For
    /// custom masks this is the distance to the nearest unmasked cell center
    /// (or the grid boundary).
    pub fn distance_to_boundary(&self, point: &[f64]) -> f64 {
        let grid_dist = (0..self.grid.dim())
            .map(|k| (point[k] - self.grid.lower[k]).min(self.grid.upper[k] - point[k]))
            .fold(f64::INFINITY, f64::min);
        let shape_dist = match &self.shape {
            Shape::Box { lower, upper } => (0..point.len())
                .map(|k| (point[k] - lower[k]).min(upper[k] - point[k]))
                .fold(f64::INFINITY, f64::min),
            Shape::Ball { center, radius } => radius - dist(point, center),
            Shape::Annulus {
                center,
                inner,
                outer,
            } => {
                let r = dist(point, center);
                (r - inner).min(outer - r)
            }
            Shape::Custom => {
                let mut best = f64::INFINITY;
                let mut x = vec![0.0; self.grid.dim()];
                for i in 0..self.grid.len() {
                    if !self.mask[i] {
                        self.grid.center_into(i, &mut x);
                        best = best.min(dist(&x, point));
                    }
                }
                best
            }
        };
        grid_dist.min(shape_dist)
    }
}

fn check_center(grid: &Grid, center: &[f64]) -> Result<()> {
    if center.len() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            found: center.len(),
        });
    }
    Ok(())
}

fn check_fits(grid: &Grid, center: &[f64], radius: f64, tol: f64) -> Result<()> {
    for k in 0..grid.dim() {
        if center[k] - radius < grid.lower()[k] - tol || center[k] + radius > grid.upper()[k] + tol {
            return Err(invalid(format!(
                "ball of radius {radius} does not fit inside the grid along axis {k}"
            )));
        }
    }
    Ok(())
}

/// Builds the region mask of a named shape; a thin wrapper over [`Region::new`].
pub fn make_region(grid: Grid, shape: Shape) -> Result<Region> {
    Region::new(grid, shape)
}

/// A cone with vertex `vertex`, unit `axis`, and half-aperture `half_angle`.
/// A half-aperture of π/2 is a half-space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    pub vertex: Vec<f64>,
    pub axis: Vec<f64>,
    pub half_angle: f64,
}

impl Cone {
    pub fn half_space(vertex: Vec<f64>, normal: Vec<f64>) -> Self {
        let n = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self {
            vertex,
            axis: normal.iter().map(|v| v / n).collect(),
            half_angle: std::f64::consts::FRAC_PI_2,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let mut dot = 0.0;
        let mut norm2 = 0.0;
        for k in 0..x.len() {
            let v = x[k] - self.vertex[k];
            dot += v * self.axis[k];
            norm2 += v * v;
        }
        if norm2 == 0.0 {
            return true;
        }
        dot >= norm2.sqrt() * self.half_angle.cos() - 1e-14
    }
}

/// A real value per grid cell; only cells in the region's mask matter.
#[derive(Clone, Debug)]
pub struct ScalarField {
    region: Arc<Region>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(region: Arc<Region>, values: Vec<f64>) -> Result<Self> {
        if values.len() != region.grid().len() {
            return Err(Error::MaskMismatch(format!(
                "{} values for a grid of {} cells",
                values.len(),
                region.grid().len()
            )));
        }
        if region.cells().any(|i| !values[i].is_finite()) {
            return Err(invalid("field values must be finite on the mask"));
        }
        Ok(Self { region, values })
    }

    pub fn constant(region: Arc<Region>, value: f64) -> Self {
        let n = region.grid().len();
        Self {
            region,
            values: vec![value; n],
        }
    }

    pub fn from_fn(region: Arc<Region>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let grid = region.grid();
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|i| {
                if region.contains(i) {
                    grid.center_into(i, &mut x);
                    f(&x)
                } else {
                    0.0
                }
            })
            .collect();
        Self::new(region, values)
    }

    pub(crate) fn from_raw(region: Arc<Region>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), region.grid().len());
        Self { region, values }
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.region
    }

    pub fn grid(&self) -> &Grid {
        self.region.grid()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            region: self.region.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    fn check_sub(&self, r: &Region) -> Result<()> {
        if !self.region.includes(r) {
            return Err(Error::MaskMismatch(
                "reduction region is not contained in the field's region".into(),
            ));
        }
        Ok(())
    }

    pub fn min_on_mask(&self) -> f64 {
        self.region.cells().map(|i| self.values[i]).fold(f64::INFINITY, f64::min)
    }

    pub fn max_on_mask(&self) -> f64 {
        self.region
            .cells()
            .map(|i| self.values[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sqrt(Σ f² vol)` over the cells of `r`.
    pub fn l2_norm(&self, r: &Region) -> Result<f64> {
        self.check_sub(r)?;
        let vol = self.grid().cell_volume();
        Ok((r.cells().map(|i| self.values[i] * self.values[i]).sum::<f64>() * vol).sqrt())
    }

    /// Discrete weak-`L^q` quasinorm `sup_t t |{|f| > t}|^{1/q}` over `r`.
    ///
    /// Candidates are the value levels `v` with measure `|{|f| > v}|`, plus
    /// the limit `t ↑ min |f|`, where the superlevel set is the whole region.
    /// Counting each level strictly keeps the few cells next to a point
    /// singularity from dominating the estimate.
    pub fn weak_lq_norm(&self, q: f64, r: &Region) -> Result<f64> {
        if !(q > 0.0) {
            return Err(invalid("weak-L^q exponent must be positive"));
        }
        self.check_sub(r)?;
        Ok(weak_lq_of_values(
            r.cells().map(|i| self.values[i].abs()).collect(),
            q,
            self.grid().cell_volume(),
        ))
    }

    /// Volume-weighted mean of `|f - mean f|` over the cells whose centers lie
    /// in `B_radius(center)`.
    pub fn ball_mean_oscillation(&self, center: &[f64], radius: f64) -> Result<f64> {
        let cells = self.ball_cells(center, radius);
        if cells.is_empty() {
            return Err(invalid("ball contains no cells of the field's region"));
        }
        let n = cells.len() as f64;
        let mean = cells.iter().map(|&i| self.values[i]).sum::<f64>() / n;
        Ok(cells.iter().map(|&i| (self.values[i] - mean).abs()).sum::<f64>() / n)
    }

    /// Mask cells whose centers lie in the open ball.
    pub fn ball_cells(&self, center: &[f64], radius: f64) -> Vec<usize> {
        ball_cells(&self.region, center, radius)
    }

    /// Multilinear interpolation between cell centers, using only masked
    /// corners. Returns `None` when no masked cell is nearby.
    pub fn interpolate(&self, point: &[f64]) -> Option<f64> {
        let grid = self.grid();
        let d = grid.dim();
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0f64; MAX_DIM];
        for k in 0..d {
            let t = (point[k] - grid.lower()[k]) / grid.spacing()[k] - 0.5;
            let n = grid.cells()[k];
            let t = t.clamp(0.0, (n - 1) as f64);
            let i = (t.floor() as usize).min(n - 2);
            base[k] = i;
            frac[k] = t - i as f64;
        }
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for corner in 0..(1usize << d) {
            let mut idx = 0;
            let mut w = 1.0;
            for k in 0..d {
                let bit = (corner >> (d - 1 - k)) & 1;
                idx += (base[k] + bit) * grid.strides()[k];
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
            }
            if self.region.contains(idx) && w > 0.0 {
                acc += w * self.values[idx];
                wsum += w;
            }
        }
        if wsum > 1e-12 {
            Some(acc / wsum)
        } else {
            grid.locate(point)
                .filter(|&i| self.region.contains(i))
                .map(|i| self.values[i])
        }
    }
}

pub(crate) fn ball_cells(region: &Region, center: &[f64], radius: f64) -> Vec<usize> {
    let grid = region.grid();
    let d = grid.dim();
    // Scan only the bounding box of the ball.
    let mut lo = [0usize; MAX_DIM];
    let mut hi = [0usize; MAX_DIM];
    for k in 0..d {
        let h = grid.spacing()[k];
        let a = ((center[k] - radius - grid.lower()[k]) / h - 0.5).floor();
        let b = ((center[k] + radius - grid.lower()[k]) / h - 0.5).ceil();
        let n = grid.cells()[k] as f64;
        if b < 0.0 || a > n - 1.0 {
            return Vec::new();
        }
        lo[k] = a.max(0.0) as usize;
        hi[k] = b.min(n - 1.0) as usize;
    }
    let mut out = Vec::new();
    let mut multi = lo;
    let mut x = [0.0f64; MAX_DIM];
    let r2 = radius * radius;
    loop {
        let idx = grid.index(&multi[..d]);
        if region.contains(idx) {
            let mut s = 0.0;
            for k in 0..d {
                x[k] = grid.lower()[k] + (multi[k] as f64 + 0.5) * grid.spacing()[k];
                s += (x[k] - center[k]).powi(2);
            }
            if s < r2 {
                out.push(idx);
            }
        }
        // odometer increment, last axis fastest
        let mut k = d;
        loop {
            if k == 0 {
                out.sort_unstable();
                return out;
            }
            k -= 1;
            if multi[k] < hi[k] {
                multi[k] += 1;
                multi[k + 1..d].copy_from_slice(&lo[k + 1..d]);
                break;
            }
        }
    }
}

pub(crate) fn weak_lq_of_values(mut values: Vec<f64>, q: f64, vol: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    let inv_q = 1.0 / q;
    let min = values[n - 1];
    let mut best = min.max(0.0) * (n as f64 * vol).powf(inv_q);
    let mut k = 0;
    while k < n {
        let v = values[k];
        let mut j = k;
        while j < n && values[j] == v {
            j += 1;
        }
        // k cells lie strictly above level v
        if v > 0.0 && k > 0 {
            best = best.max(v * (k as f64 * vol).powf(inv_q));
        }
        k = j;
    }
    best
}

/// A symmetric `d×d` matrix per cell with certified ellipticity bounds.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    region: Arc<Region>,
    dim: usize,
    matrices: Vec<f64>,
    uniform: bool,
    lambda: f64,
    big_lambda: f64,
}

/// Eigenvalue slack allowed when certifying the bounds.
const EIGEN_SLACK: f64 = 1e-9;

impl CoefficientField {
    /// The same matrix in every cell.
    pub fn constant(region: Arc<Region>, matrix: &[f64], lambda: f64, big_lambda: f64) -> Result<Self> {
        let dim = region.grid().dim();
        if matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: matrix.len(),
            });
        }
        check_bounds(lambda, big_lambda)?;
        check_matrix(matrix, dim, lambda, big_lambda)?;
        Ok(Self {
            region,
            dim,
            matrices: matrix.to_vec(),
            uniform: true,
            lambda,
            big_lambda,
        })
    }

    pub fn identity(region: Arc<Region>) -> Self {
        let dim = region.grid().dim();
        let mut m = vec![0.0; dim * dim];
        for k in 0..dim {
            m[k * dim + k] = 1.0;
        }
        Self::constant(region, &m, 1.0, 1.0).expect("identity is elliptic")
    }

    pub fn diagonal(region: Arc<Region>, diag: &[f64]) -> Result<Self> {
        let dim = region.grid().dim();
        if diag.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: diag.len(),
            });
        }
        let mut m = vec![0.0; dim * dim];
        for k in 0..dim {
            m[k * dim + k] = diag[k];
        }
        let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self::constant(region, &m, lo, hi)
    }

    /// Per-cell matrices from a function of the cell center; every matrix is
    /// checked against `[lambda, big_lambda]`.
    pub fn from_fn(
        region: Arc<Region>,
        lambda: f64,
        big_lambda: f64,
        f: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        check_bounds(lambda, big_lambda)?;
        let grid = region.grid();
        let dim = grid.dim();
        let mut x = vec![0.0; dim];
        let mut matrices = vec![0.0; grid.len() * dim * dim];
        for i in 0..grid.len() {
            let block = &mut matrices[i * dim * dim..(i + 1) * dim * dim];
            if region.contains(i) {
                grid.center_into(i, &mut x);
                let m = f(&x);
                if m.len() != dim * dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim * dim,
                        found: m.len(),
                    });
                }
                check_matrix(&m, dim, lambda, big_lambda)?;
                block.copy_from_slice(&m);
            } else {
                for k in 0..dim {
                    block[k * dim + k] = lambda;
                }
            }
        }
        Ok(Self {
            region,
            dim,
            matrices,
            uniform: false,
            lambda,
            big_lambda,
        })
    }

    /// Independent random symmetric matrices with eigenvalues drawn uniformly
    /// from `[lambda, big_lambda]` and Haar-like random eigenbases.
    pub fn random_symmetric(region: Arc<Region>, lambda: f64, big_lambda: f64, seed: u64) -> Result<Self> {
        check_bounds(lambda, big_lambda)?;
        let dim = region.grid().dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = region.grid().len();
        let mut matrices = vec![0.0; n * dim * dim];
        for i in 0..n {
            let block = &mut matrices[i * dim * dim..(i + 1) * dim * dim];
            if !region.contains(i) {
                for k in 0..dim {
                    block[k * dim + k] = lambda;
                }
                continue;
            }
            let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
            let q = g.qr().q();
            let eig: Vec<f64> = (0..dim).map(|_| rng.gen_range(lambda..=big_lambda)).collect();
            for r in 0..dim {
                for c in r..dim {
                    let v: f64 = (0..dim).map(|k| q[(r, k)] * eig[k] * q[(c, k)]).sum();
                    block[r * dim + c] = v;
                    block[c * dim + r] = v;
                }
            }
            check_matrix(block, dim, lambda, big_lambda)?;
        }
        Ok(Self {
            region,
            dim,
            matrices,
            uniform: false,
            lambda,
            big_lambda,
        })
    }

    pub fn region(&self) -> &Arc<Region> {
        &self.region
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn big_lambda(&self) -> f64 {
        self.big_lambda
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Row-major `d×d` matrix of cell `idx`.
    pub fn matrix(&self, idx: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        if self.uniform {
            &self.matrices[..dd]
        } else {
            &self.matrices[idx * dd..(idx + 1) * dd]
        }
    }

    /// Coefficient field sampled at mapped points, on a different region.
    /// `map` sends a center of the new region to a point of this field's
    /// grid; the matrix of the containing cell is used.
    pub fn pull_back(&self, region: Arc<Region>, map: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        if region.grid().dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: region.grid().dim(),
            });
        }
        if self.uniform {
            return Ok(Self {
                region,
                dim: self.dim,
                matrices: self.matrices.clone(),
                uniform: true,
                lambda: self.lambda,
                big_lambda: self.big_lambda,
            });
        }
        let src = self.region.grid();
        let grid = region.grid().clone();
        let dd = self.dim * self.dim;
        let mut x = vec![0.0; self.dim];
        let mut matrices = vec![0.0; grid.len() * dd];
        for i in 0..grid.len() {
            grid.center_into(i, &mut x);
            let y = map(&x);
            let block = &mut matrices[i * dd..(i + 1) * dd];
            match src.locate(&y) {
                Some(j) => block.copy_from_slice(self.matrix(j)),
                None if region.contains(i) => {
                    return Err(invalid("mapped point falls outside the coefficient grid"))
                }
                None => {
                    for k in 0..self.dim {
                        block[k * self.dim + k] = self.lambda;
                    }
                }
            }
        }
        Ok(Self {
            region,
            dim: self.dim,
            matrices,
            uniform: false,
            lambda: self.lambda,
            big_lambda: self.big_lambda,
        })
    }

    /// The same matrices on a subregion of the same grid.
    pub fn restrict(&self, region: Arc<Region>) -> Result<Self> {
        if region.grid() != self.region.grid() {
            return Err(Error::MaskMismatch("subregion lives on another grid".into()));
        }
        if !self.region.includes(&region) {
            return Err(Error::MaskMismatch("subregion leaves the coefficient region".into()));
        }
        Ok(Self {
            region,
            ..self.clone()
        })
    }
}

fn check_bounds(lambda: f64, big_lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && big_lambda >= lambda && big_lambda.is_finite()) {
        return Err(invalid("ellipticity bounds need 0 < lambda <= Lambda"));
    }
    Ok(())
}

fn check_matrix(m: &[f64], dim: usize, lambda: f64, big_lambda: f64) -> Result<()> {
    for r in 0..dim {
        for c in 0..r {
            if (m[r * dim + c] - m[c * dim + r]).abs() > 1e-12 {
                return Err(Error::CoefficientBounds("matrix is not symmetric".into()));
            }
        }
    }
    let mat = DMatrix::from_row_slice(dim, dim, m);
    let eig = mat.symmetric_eigenvalues();
    for &e in eig.iter() {
        if e < lambda - EIGEN_SLACK || e > big_lambda + EIGEN_SLACK {
            return Err(Error::CoefficientBounds(format!(
                "eigenvalue {e} outside [{lambda}, {big_lambda}]"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square(n: usize) -> Grid {
        Grid::cube(2, 0.0, 1.0, n).unwrap()
    }

    #[test]
    fn box_region_fills_grid() {
        let grid = unit_square(16);
        let r = make_region(
            grid.clone(),
            Shape::Box {
                lower: vec![0.0, 0.0],
                upper: vec![1.0, 1.0],
            },
        )
        .unwrap();
        assert_eq!(r.cell_count(), 256);
    }

    #[test]
    fn ball_fraction_close_to_quarter_pi() {
        let grid = Grid::cube(2, -1.0, 1.0, 16).unwrap();
        let r = Region::ball(grid, vec![0.0, 0.0], 1.0).unwrap();
        let frac = r.cell_count() as f64 / 256.0;
        // brute-force count of centers with |x| < 1
        let mut count = 0;
        for i in 0..16 {
            for j in 0..16 {
                let x = -1.0 + (i as f64 + 0.5) / 8.0;
                let y = -1.0 + (j as f64 + 0.5) / 8.0;
                if x * x + y * y < 1.0 {
                    count += 1;
                }
            }
        }
        assert_eq!(count, r.cell_count());
        assert!((0.70..=0.83).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn zero_radius_ball_is_degenerate() {
        let grid = Grid::cube(2, -1.0, 1.0, 16).unwrap();
        let err = Region::ball(grid, vec![0.0, 0.0], 0.0).unwrap_err();
        assert_eq!(err.to_string(), "degenerate region");
    }

    #[test]
    fn grid_rejects_tiny_axes_and_budget() {
        assert!(Grid::new(vec![0.0], vec![1.0], vec![1]).is_err());
        assert!(Grid::with_budget(vec![0.0, 0.0], vec![1.0, 1.0], vec![64, 64], 1000).is_err());
        assert!(Grid::new(vec![1.0], vec![0.0], vec![4]).is_err());
    }

    #[test]
    fn l2_norm_examples() {
        let r = Arc::new(Region::full(unit_square(8)));
        let zero = ScalarField::constant(r.clone(), 0.0);
        assert_eq!(zero.l2_norm(&r).unwrap(), 0.0);
        let one = ScalarField::constant(r.clone(), 1.0);
        assert!((one.l2_norm(&r).unwrap() - 1.0).abs() < 1e-14);

        let line = Arc::new(Region::full(Grid::cube(1, 0.0, 1.0, 1024).unwrap()));
        let f = ScalarField::from_fn(line.clone(), |x| x[0]).unwrap();
        assert!((f.l2_norm(&line).unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn l2_norm_rejects_foreign_region() {
        let grid = Grid::cube(2, -1.0, 1.0, 8).unwrap();
        let ball = Arc::new(Region::ball(grid.clone(), vec![0.0, 0.0], 0.5).unwrap());
        let full = Region::full(grid);
        let f = ScalarField::constant(ball, 1.0);
        assert!(matches!(f.l2_norm(&full), Err(Error::MaskMismatch(_))));
    }

    #[test]
    fn weak_norm_constant_and_homogeneity() {
        let r = Arc::new(Region::full(unit_square(10)));
        let f = ScalarField::constant(r.clone(), 3.0);
        let v = r.measure();
        assert!((f.weak_lq_norm(2.0, &r).unwrap() - 3.0 * v.sqrt()).abs() < 1e-12);

        let g = ScalarField::from_fn(r.clone(), |x| (x[0] * 7.0).sin().abs() + x[1]).unwrap();
        let a = g.weak_lq_norm(1.5, &r).unwrap();
        let b = g.map(|v| 2.5 * v).weak_lq_norm(1.5, &r).unwrap();
        assert!((b - 2.5 * a).abs() < 1e-12 * b);
    }

    #[test]
    fn weak_norm_of_inverse_radius() {
        // {|x|^-1 > t} = B_{1/t}; t (π/t²)^{1/2} = √π for every t >= 1.
        let grid = Grid::cube(2, -1.0, 1.0, 512).unwrap();
        let r = Arc::new(Region::ball(grid, vec![0.0, 0.0], 1.0).unwrap());
        let f = ScalarField::from_fn(r.clone(), |x| 1.0 / (x[0].hypot(x[1]))).unwrap();
        let w = f.weak_lq_norm(2.0, &r).unwrap();
        let target = std::f64::consts::PI.sqrt();
        assert!((w - target).abs() < 0.05 * target, "{w}");
    }

    #[test]
    fn mean_oscillation_examples() {
        let grid = Grid::cube(2, -1.0, 1.0, 256).unwrap();
        let r = Arc::new(Region::full(grid));
        let c = ScalarField::constant(r.clone(), 2.0);
        assert_eq!(c.ball_mean_oscillation(&[0.0, 0.0], 0.5).unwrap(), 0.0);

        let radius = 0.8;
        let f = ScalarField::from_fn(r.clone(), |x| x[0]).unwrap();
        let osc = f.ball_mean_oscillation(&[0.0, 0.0], radius).unwrap();
        let target = 4.0 * radius / (3.0 * PI);
        assert!((osc - target).abs() < 0.05 * target, "{osc} vs {target}");

        let half = ScalarField::from_fn(r, |x| if x[0] > 0.0 { 1.0 } else { 0.0 }).unwrap();
        let osc = half.ball_mean_oscillation(&[0.0, 0.0], 0.5).unwrap();
        assert!((osc - 0.5).abs() < 0.01, "{osc}");
        assert!(c.ball_mean_oscillation(&[5.0, 5.0], 0.1).is_err());
    }

    #[test]
    fn coefficient_bounds_are_enforced() {
        let r = Arc::new(Region::full(unit_square(4)));
        assert!(CoefficientField::constant(r.clone(), &[2.0, 0.0, 0.0, 0.5], 0.5, 2.0).is_ok());
        assert!(CoefficientField::constant(r.clone(), &[2.1, 0.0, 0.0, 0.5], 0.5, 2.0).is_err());
        assert!(CoefficientField::constant(r.clone(), &[1.0, 0.3, 0.2, 1.0], 0.5, 2.0).is_err());
        let rnd = CoefficientField::random_symmetric(r, 0.5, 2.0, 7).unwrap();
        assert!(!rnd.is_uniform());
    }

    #[test]
    fn interior_excludes_diagonal_contacts() {
        let grid = Grid::cube(2, -1.0, 1.0, 16).unwrap();
        let r = Region::ball(grid, vec![0.0, 0.0], 0.9).unwrap();
        let interior = r.interior();
        let layer = r.boundary_layer();
        for i in r.cells() {
            if layer[i] {
                assert!(!interior[i]);
            }
        }
        assert!(interior.iter().filter(|&&b| b).count() < r.cell_count());
    }

    #[test]
    fn ball_volumes() {
        assert!((vol_ball(2) - PI).abs() < 1e-14);
        assert!((vol_ball(3) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((area_sphere(3) - 4.0 * PI).abs() < 1e-14);
    }
}
