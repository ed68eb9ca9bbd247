//! Discrete divergence-form operator and Dirichlet solves.
//!
//! The bilinear form is assembled from multilinear (Q1) elements whose
//! corners are `2^d` adjacent cell centers. An element takes part only when
//! all of its corners are in the mask, and its coefficient matrix is the mean
//! of the corner cells' matrices. The discrete Dirichlet energy
//! `D(u) = uᵀKu` approximates `∫ ∇u·A∇u` with no factor ½.

use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::field::{CoefficientField, Region, ScalarField, MAX_DIM};

/// Q1 stiffness data for one coefficient field on its region.
#[derive(Debug)]
pub struct DiscreteForm {
    coeff: CoefficientField,
    nc: usize,
    offsets: Vec<usize>,
    elements: Vec<usize>,
    is_element: Vec<bool>,
    /// `d*d` blocks of `nc×nc` basis matrices `∫ ∂_k N_a ∂_l N_b`.
    basis: Vec<f64>,
    uniform: Option<Vec<f64>>,
    interior: Vec<bool>,
}

impl DiscreteForm {
    pub fn new(coeff: &CoefficientField) -> Self {
        let region = coeff.region().clone();
        let grid = region.grid();
        let d = grid.dim();
        let nc = 1usize << d;
        let offsets: Vec<usize> = (0..nc)
            .map(|a| {
                (0..d)
                    .map(|k| ((a >> (d - 1 - k)) & 1) * grid.strides()[k])
                    .sum()
            })
            .collect();
        let mut is_element = vec![false; grid.len()];
        let mut multi = [0usize; MAX_DIM];
        for i in 0..grid.len() {
            grid.multi_index(i, &mut multi[..d]);
            if (0..d).any(|k| multi[k] + 1 >= grid.cells()[k]) {
                continue;
            }
            is_element[i] = offsets.iter().all(|&o| region.contains(i + o));
        }
        let elements = (0..grid.len()).filter(|&i| is_element[i]).collect();
        let basis = basis_matrices(grid.spacing());
        let mut form = Self {
            coeff: coeff.clone(),
            nc,
            offsets,
            elements,
            is_element,
            basis,
            uniform: None,
            interior: region.interior(),
        };
        if coeff.is_uniform() {
            let mut k = vec![0.0; nc * nc];
            form.assemble(coeff.matrix(0), &mut k);
            form.uniform = Some(k);
        }
        form
    }

    pub fn region(&self) -> &Arc<Region> {
        self.coeff.region()
    }

    pub fn coefficients(&self) -> &CoefficientField {
        &self.coeff
    }

    pub fn elements(&self) -> &[usize] {
        &self.elements
    }

    pub fn corner_offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Cells whose whole `3^d` block is masked; the only cells a solve may
    /// treat as unknowns.
    pub fn interior(&self) -> &[bool] {
        &self.interior
    }

    fn assemble(&self, a: &[f64], out: &mut [f64]) {
        let d = self.coeff.dim();
        let nn = self.nc * self.nc;
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..d {
            for l in 0..d {
                let c = a[k * d + l];
                if c == 0.0 {
                    continue;
                }
                let block = &self.basis[(k * d + l) * nn..(k * d + l + 1) * nn];
                for (o, b) in out.iter_mut().zip(block) {
                    *o += c * b;
                }
            }
        }
    }

    /// Element stiffness matrix for the element with lowest corner `base`.
    pub fn element_matrix(&self, base: usize, out: &mut [f64]) {
        if let Some(k) = &self.uniform {
            out.copy_from_slice(k);
            return;
        }
        let d = self.coeff.dim();
        let mut mean = [0.0f64; MAX_DIM * MAX_DIM];
        for &o in &self.offsets {
            let m = self.coeff.matrix(base + o);
            for (acc, v) in mean.iter_mut().zip(m) {
                *acc += v;
            }
        }
        let inv = 1.0 / self.nc as f64;
        mean[..d * d].iter_mut().for_each(|v| *v *= inv);
        self.assemble(&mean[..d * d], out);
    }

    /// Elements having `cell` as a corner.
    pub fn elements_of_cell(&self, cell: usize, mut f: impl FnMut(usize)) {
        let grid = self.region().grid();
        let d = grid.dim();
        let mut multi = [0usize; MAX_DIM];
        grid.multi_index(cell, &mut multi[..d]);
        'corner: for a in 0..self.nc {
            let mut base = cell;
            for k in 0..d {
                if (a >> (d - 1 - k)) & 1 == 1 {
                    if multi[k] == 0 {
                        continue 'corner;
                    }
                    base -= grid.strides()[k];
                }
            }
            if self.is_element[base] {
                f(base);
            }
        }
    }

    /// Sorted, deduplicated elements touching any of `cells`.
    pub fn elements_touching(&self, cells: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(cells.len() * self.nc);
        for &c in cells {
            self.elements_of_cell(c, |e| out.push(e));
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn element_energy(&self, base: usize, values: &[f64], k: &mut [f64]) -> f64 {
        let nc = self.nc;
        let mut ue = [0.0f64; 16];
        for (a, &o) in self.offsets.iter().enumerate() {
            ue[a] = values[base + o];
        }
        self.element_matrix(base, k);
        let mut s = 0.0;
        for a in 0..nc {
            let row = &k[a * nc..(a + 1) * nc];
            let ku: f64 = row.iter().zip(&ue[..nc]).map(|(x, y)| x * y).sum();
            s += ue[a] * ku;
        }
        s
    }

    /// `D(u) = uᵀKu` summed over the given elements.
    pub fn energy_over(&self, elements: &[usize], values: &[f64]) -> f64 {
        let mut k = vec![0.0; self.nc * self.nc];
        elements
            .iter()
            .map(|&e| self.element_energy(e, values, &mut k))
            .sum()
    }

    /// Discrete Dirichlet energy of the whole field.
    pub fn energy(&self, values: &[f64]) -> f64 {
        self.energy_over(&self.elements, values)
    }

    /// `Ku` on every grid cell (zero off the mask).
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let nc = self.nc;
        let mut out = vec![0.0; values.len()];
        let mut k = vec![0.0; nc * nc];
        let mut ue = [0.0f64; 16];
        for &e in &self.elements {
            for (a, &o) in self.offsets.iter().enumerate() {
                ue[a] = values[e + o];
            }
            self.element_matrix(e, &mut k);
            for a in 0..nc {
                let row = &k[a * nc..(a + 1) * nc];
                out[e + self.offsets[a]] += row.iter().zip(&ue[..nc]).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        out
    }

    /// Diagonal entry `K_ii`.
    pub fn diagonal_entry(&self, cell: usize) -> f64 {
        let nc = self.nc;
        let mut k = vec![0.0; nc * nc];
        let mut s = 0.0;
        let offsets = &self.offsets;
        self.elements_of_cell(cell, |e| {
            self.element_matrix(e, &mut k);
            let a = offsets.iter().position(|&o| e + o == cell).unwrap();
            s += k[a * nc + a];
        });
        s
    }

    /// Entries `(j, K_ji)` of column `cell`; a row may appear more than once.
    pub(crate) fn column(&self, cell: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let nc = self.nc;
        let mut k = vec![0.0; nc * nc];
        self.elements_of_cell(cell, |e| {
            self.element_matrix(e, &mut k);
            let a = self.offsets.iter().position(|&o| e + o == cell).unwrap();
            for (b, &o) in self.offsets.iter().enumerate() {
                out.push((e + o, k[b * nc + a]));
            }
        });
    }

    /// Sets up a linear system whose unknowns are `active`; every other
    /// cell is held at its current value.
    pub fn subsystem(&self, active: Vec<usize>) -> Subsystem<'_> {
        Subsystem::new(self, active)
    }
}

fn basis_matrices(h: &[f64]) -> Vec<f64> {
    let d = h.len();
    let nc = 1usize << d;
    let nn = nc * nc;
    let bit = |a: usize, k: usize| (a >> (d - 1 - k)) & 1;
    let sign = |b: usize| if b == 1 { 1.0 } else { -1.0 };
    let mass = |a: usize, b: usize, k: usize| {
        if bit(a, k) == bit(b, k) {
            h[k] / 3.0
        } else {
            h[k] / 6.0
        }
    };
    let mut out = vec![0.0; d * d * nn];
    for k in 0..d {
        for l in 0..d {
            let block = &mut out[(k * d + l) * nn..(k * d + l + 1) * nn];
            for a in 0..nc {
                for b in 0..nc {
                    let mut v = if k == l {
                        sign(bit(a, k)) * sign(bit(b, k)) / h[k]
                    } else {
                        0.25 * sign(bit(a, k)) * sign(bit(b, l))
                    };
                    for j in 0..d {
                        if j != k && j != l {
                            v *= mass(a, b, j);
                        }
                    }
                    block[a * nc + b] = v;
                }
            }
        }
    }
    out
}

/// A reduced system `K_SS x = -K_SF g_F` over a set of unknown cells.
pub struct Subsystem<'a> {
    form: &'a DiscreteForm,
    active: Vec<usize>,
    elems: Vec<usize>,
    /// Local index of each element corner, or `u32::MAX` for fixed corners.
    corners: Vec<u32>,
    kmats: Option<Vec<f64>>,
    diag: Vec<f64>,
}

const FIXED: u32 = u32::MAX;

impl<'a> Subsystem<'a> {
    fn new(form: &'a DiscreteForm, mut active: Vec<usize>) -> Self {
        active.sort_unstable();
        active.dedup();
        let nc = form.nc;
        let elems = form.elements_touching(&active);
        let n = form.region().grid().len();
        let dense = active.len() * 32 >= n;
        let lookup: Box<dyn Fn(usize) -> u32> = if dense {
            let mut map = vec![FIXED; n];
            for (l, &g) in active.iter().enumerate() {
                map[g] = l as u32;
            }
            Box::new(move |g| map[g])
        } else {
            let act = active.clone();
            Box::new(move |g| match act.binary_search(&g) {
                Ok(l) => l as u32,
                Err(_) => FIXED,
            })
        };
        let mut corners = Vec::with_capacity(elems.len() * nc);
        for &e in &elems {
            for &o in &form.offsets {
                corners.push(lookup(e + o));
            }
        }
        let kmats = if form.uniform.is_none() && elems.len() * nc * nc <= 1 << 23 {
            let mut all = vec![0.0; elems.len() * nc * nc];
            for (j, &e) in elems.iter().enumerate() {
                form.element_matrix(e, &mut all[j * nc * nc..(j + 1) * nc * nc]);
            }
            Some(all)
        } else {
            None
        };
        let mut sys = Self {
            form,
            active,
            elems,
            corners,
            kmats,
            diag: Vec::new(),
        };
        sys.diag = sys.compute_diagonal();
        sys
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn elements(&self) -> &[usize] {
        &self.elems
    }

    fn with_element<R>(&self, j: usize, scratch: &mut [f64], f: impl FnOnce(&[f64]) -> R) -> R {
        let nn = self.form.nc * self.form.nc;
        if let Some(k) = &self.form.uniform {
            f(k)
        } else if let Some(all) = &self.kmats {
            f(&all[j * nn..(j + 1) * nn])
        } else {
            self.form.element_matrix(self.elems[j], scratch);
            f(scratch)
        }
    }

    fn compute_diagonal(&self) -> Vec<f64> {
        let nc = self.form.nc;
        let mut diag = vec![0.0; self.active.len()];
        let mut scratch = vec![0.0; nc * nc];
        for j in 0..self.elems.len() {
            let cs = &self.corners[j * nc..(j + 1) * nc];
            self.with_element(j, &mut scratch, |k| {
                for a in 0..nc {
                    if cs[a] != FIXED {
                        diag[cs[a] as usize] += k[a * nc + a];
                    }
                }
            });
        }
        diag
    }

    /// `(K w)` restricted to the unknowns, for a full-length `w`.
    fn apply_full(&self, values: &[f64], out: &mut [f64]) {
        let nc = self.form.nc;
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut scratch = vec![0.0; nc * nc];
        let mut ue = [0.0f64; 16];
        for (j, &e) in self.elems.iter().enumerate() {
            for (a, &o) in self.form.offsets.iter().enumerate() {
                ue[a] = values[e + o];
            }
            let cs = &self.corners[j * nc..(j + 1) * nc];
            self.with_element(j, &mut scratch, |k| {
                for a in 0..nc {
                    if cs[a] != FIXED {
                        let row = &k[a * nc..(a + 1) * nc];
                        out[cs[a] as usize] +=
                            row.iter().zip(&ue[..nc]).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            });
        }
    }

    /// `K_SS p` for a local vector `p`.
    fn apply_local(&self, p: &[f64], out: &mut [f64]) {
        let nc = self.form.nc;
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut scratch = vec![0.0; nc * nc];
        let mut pe = [0.0f64; 16];
        for j in 0..self.elems.len() {
            let cs = &self.corners[j * nc..(j + 1) * nc];
            let mut any = false;
            for a in 0..nc {
                pe[a] = if cs[a] == FIXED {
                    0.0
                } else {
                    any = true;
                    p[cs[a] as usize]
                };
            }
            if !any {
                continue;
            }
            self.with_element(j, &mut scratch, |k| {
                for a in 0..nc {
                    if cs[a] != FIXED {
                        let row = &k[a * nc..(a + 1) * nc];
                        out[cs[a] as usize] +=
                            row.iter().zip(&pe[..nc]).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            });
        }
    }

    /// Solves for the unknowns in place, holding every other entry of
    /// `values` fixed. The current unknown values are the initial guess.
    /// Returns the number of iterations.
    pub fn solve(&self, values: &mut [f64], tol: f64) -> Result<usize> {
        let n = self.active.len();
        if n == 0 {
            return Ok(0);
        }
        if self.diag.iter().any(|&v| !(v > 0.0)) {
            return Err(invalid("unknown cell with no complete element"));
        }
        let inv_diag: Vec<f64> = self.diag.iter().map(|v| 1.0 / v).collect();
        // Reference norm from the right-hand side b = -K_SF g_F.
        let saved: Vec<f64> = self.active.iter().map(|&g| values[g]).collect();
        for &g in &self.active {
            values[g] = 0.0;
        }
        let mut b = vec![0.0; n];
        self.apply_full(values, &mut b);
        b.iter_mut().for_each(|v| *v = -*v);
        let bnorm = b.iter().zip(&inv_diag).map(|(x, m)| x * x * m).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return Ok(0);
        }
        for (&g, &v) in self.active.iter().zip(&saved) {
            values[g] = v;
        }
        let mut r = vec![0.0; n];
        self.apply_full(values, &mut r);
        r.iter_mut().for_each(|v| *v = -*v);
        let mut x = vec![0.0; n];
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, m)| a * m).collect();
        let mut p = z.clone();
        let mut q = vec![0.0; n];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let cap = (50.0 * (self.form.region().grid().len() as f64).sqrt()).ceil() as usize;
        let target = tol * bnorm;
        let mut iters = 0;
        while rz.max(0.0).sqrt() > target {
            if iters >= cap {
                return Err(Error::NotConverged {
                    iterations: iters,
                    residual: rz.max(0.0).sqrt() / bnorm,
                });
            }
            self.apply_local(&p, &mut q);
            let pq: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
            if !(pq > 0.0) {
                return Err(Error::NotConverged {
                    iterations: iters,
                    residual: rz.max(0.0).sqrt() / bnorm,
                });
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            iters += 1;
        }
        for (l, &g) in self.active.iter().enumerate() {
            values[g] += x[l];
        }
        Ok(iters)
    }
}

/// Divergence-form operator `∇·(A∇u)` at every mask cell, computed as
/// `-(Ku)_i / |cell|`. On cells whose `3^d` block is masked this is the
/// consistent discretization; near the mask boundary it only sees the
/// complete elements.
pub fn apply_operator(a: &CoefficientField, u: &ScalarField) -> Result<ScalarField> {
    if a.region().grid() != u.grid() {
        return Err(Error::DimensionMismatch {
            expected: a.region().grid().len(),
            found: u.grid().len(),
        });
    }
    if !u.region().includes(a.region()) {
        return Err(Error::MaskMismatch("field does not cover the coefficient region".into()));
    }
    let form = DiscreteForm::new(a);
    let vol = u.grid().cell_volume();
    let ku = form.apply(u.values());
    let values = ku
        .iter()
        .enumerate()
        .map(|(i, v)| if a.region().contains(i) { -v / vol } else { 0.0 })
        .collect();
    Ok(ScalarField::from_raw(a.region().clone(), values))
}

/// Data of a Dirichlet problem `∇·(A∇u) = 0` in `active` with `u = boundary`
/// elsewhere.
#[derive(Clone, Debug)]
pub struct DirichletProblem {
    pub coeff: CoefficientField,
    pub active: Arc<Region>,
    pub boundary: ScalarField,
    pub tolerance: f64,
}

/// Solves a Dirichlet problem by Jacobi-preconditioned conjugate gradients.
///
/// The unknowns are the cells of `active` whose whole `3^d` block lies in
/// `active`; all remaining cells of the coefficient region take their value
/// from `boundary`.
pub fn solve_dirichlet(p: &DirichletProblem) -> Result<ScalarField> {
    let form = DiscreteForm::new(&p.coeff);
    solve_with_form(&form, &p.active, &p.boundary, p.tolerance)
}

pub(crate) fn solve_with_form(
    form: &DiscreteForm,
    active: &Region,
    boundary: &ScalarField,
    tolerance: f64,
) -> Result<ScalarField> {
    if !(tolerance > 1e-14 && tolerance < 1e-2) {
        return Err(invalid("tolerance must lie in (1e-14, 1e-2)"));
    }
    let region = form.region();
    if !region.includes(active) {
        return Err(Error::MaskMismatch("active region outside the coefficient region".into()));
    }
    if boundary.grid() != region.grid() || !boundary.region().includes(region) {
        return Err(Error::MaskMismatch("boundary data must cover the coefficient region".into()));
    }
    let unknowns: Vec<usize> = active
        .interior()
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    if unknowns.len() == region.cell_count() {
        return Err(invalid("empty boundary layer"));
    }
    let mut values = boundary.values().to_vec();
    for &i in &unknowns {
        values[i] = 0.0;
    }
    form.subsystem(unknowns).solve(&mut values, tolerance)?;
    Ok(ScalarField::from_raw(region.clone(), values))
}

/// Worst violation of the weak subsolution inequality `∫ A∇u·∇v <= 0`
/// over nonnegative hat functions `v` of interior cells, each normalized by
/// its own energy norm. Comparable with `sqrt(D(u))` by Cauchy–Schwarz.
pub fn subsolution_defect(u: &ScalarField, a: &CoefficientField) -> Result<f64> {
    let form = DiscreteForm::new(a);
    Ok(defect_with_form(&form, u.values()))
}

pub(crate) fn defect_with_form(form: &DiscreteForm, values: &[f64]) -> f64 {
    let ku = form.apply(values);
    let mut worst: f64 = 0.0;
    for (i, &inside) in form.interior().iter().enumerate() {
        if inside && ku[i] > 0.0 {
            worst = worst.max(ku[i] / form.diagonal_entry(i).sqrt());
        }
    }
    worst
}
