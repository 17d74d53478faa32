//! Bilinear finite elements for `-div(a grad u) = f` on the unit square with
//! homogeneous Dirichlet conditions.
//!
//! Unknowns are the interior nodal values of a uniform `n x n` quadrilateral
//! grid, numbered row-major with `x` varying fastest. Coefficient fields are
//! constant per element, so element stiffness integrals are exact.

use crate::error::{Error, Result};

/// Q1 element stiffness for a unit coefficient. Independent of `h` in 2D.
/// Local node order: (0,0), (1,0), (1,1), (0,1).
const KREF: [[f64; 4]; 4] = [
    [4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0],
];

const LOCAL_OFFSETS: [(usize, usize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];

/// Relative residual every solve must reach.
pub const SOLVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || !n.is_multiple_of(8) {
            return Err(Error::InvalidGrid(n));
        }
        Ok(Self { n })
    }

    /// Elements per side.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Interior nodes per side.
    pub fn m(&self) -> usize {
        self.n - 1
    }

    pub fn dofs(&self) -> usize {
        self.m() * self.m()
    }

    pub fn elements(&self) -> usize {
        self.n * self.n
    }

    /// Interior index of grid node `(ix, iy)`, `None` on the boundary.
    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> Option<usize> {
        if ix == 0 || iy == 0 || ix >= self.n || iy >= self.n {
            None
        } else {
            Some((iy - 1) * self.m() + (ix - 1))
        }
    }

    /// Grid coordinates of interior index `k`.
    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.m() + 1, k / self.m() + 1)
    }

    /// Global interior indices of the four nodes of element `(ex, ey)`.
    #[inline]
    fn element_nodes(&self, ex: usize, ey: usize) -> [Option<usize>; 4] {
        LOCAL_OFFSETS.map(|(dx, dy)| self.node(ex + dx, ey + dy))
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self.n != other.n {
            Err(Error::GridMismatch {
                left: self.n,
                right: other.n,
            })
        } else {
            Ok(())
        }
    }
}

pub fn build_grid(n: usize) -> Result<Grid> {
    Grid::new(n)
}

/// Element-wise constant field, indexed `ey * n + ex`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.elements()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.elements() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, grid has {} elements",
                values.len(),
                grid.elements()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite field value on element {i}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * t).collect(),
        }
    }

    /// `self += t * other`.
    pub fn add_scaled(&mut self, t: f64, other: &ScalarField) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += t * b;
        }
        Ok(())
    }

    /// Nonzero entries as `(element, value)` pairs.
    pub fn support(&self) -> Vec<(usize, f64)> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(e, &v)| (e, v))
            .collect()
    }

    /// Injection onto a grid whose size is a multiple of this one.
    pub fn refine(&self, fine: Grid) -> Result<Self> {
        let ratio = refinement_ratio(self.grid, fine)?;
        let nf = fine.n();
        let nc = self.grid.n();
        let values = (0..fine.elements())
            .map(|e| {
                let (ex, ey) = (e % nf, e / nf);
                self.values[(ey / ratio) * nc + ex / ratio]
            })
            .collect();
        Ok(Self { grid: fine, values })
    }
}

fn refinement_ratio(coarse: Grid, fine: Grid) -> Result<usize> {
    if !fine.n().is_multiple_of(coarse.n()) {
        return Err(Error::GridMismatch {
            left: coarse.n(),
            right: fine.n(),
        });
    }
    Ok(fine.n() / coarse.n())
}

/// Discrete H^1_0 function given by its interior nodal values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl FeFunction {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.dofs()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.dofs() {
            return Err(Error::InvalidArgument(format!(
                "function has {} values, grid has {} interior nodes",
                values.len(),
                grid.dofs()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> Grid {
        self.grid
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

    /// `self += t * other`.
    pub fn axpy(&mut self, t: f64, other: &FeFunction) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += t * b;
        }
    }

    pub fn scale(&mut self, t: f64) {
        self.values.iter_mut().for_each(|v| *v *= t);
    }

    pub fn sub(&self, other: &FeFunction) -> FeFunction {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn norm_v(&self) -> f64 {
        dot(&self.values, &laplace_apply(self.grid, &self.values))
            .max(0.0)
            .sqrt()
    }

    /// Nodal interpolation onto a finer grid. Exact, since the coarse Q1 space
    /// is contained in the fine one.
    pub fn prolong(&self, fine: Grid) -> Result<FeFunction> {
        let ratio = refinement_ratio(self.grid, fine)?;
        if ratio == 1 {
            return Ok(self.clone());
        }
        let g = self.grid;
        let nodal = |ix: usize, iy: usize| g.node(ix, iy).map_or(0.0, |k| self.values[k]);
        let r = ratio as f64;
        let values = (0..fine.dofs())
            .map(|k| {
                let (fx, fy) = fine.coords(k);
                let (ex, ey) = (fx / ratio, fy / ratio);
                let tx = (fx % ratio) as f64 / r;
                let ty = (fy % ratio) as f64 / r;
                let v00 = nodal(ex, ey);
                let v10 = if tx > 0.0 { nodal(ex + 1, ey) } else { 0.0 };
                let v01 = if ty > 0.0 { nodal(ex, ey + 1) } else { 0.0 };
                let v11 = if tx > 0.0 && ty > 0.0 {
                    nodal(ex + 1, ey + 1)
                } else {
                    0.0
                };
                (1.0 - tx) * (1.0 - ty) * v00
                    + tx * (1.0 - ty) * v10
                    + (1.0 - tx) * ty * v01
                    + tx * ty * v11
            })
            .collect();
        Ok(FeFunction { grid: fine, values })
    }
}

/// Right-hand side vector: values `l(phi_i)` on the interior hat functions.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadVector {
    grid: Grid,
    values: Vec<f64>,
}

impl LoadVector {
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.dofs() {
            return Err(Error::InvalidArgument(format!(
                "load has {} values, grid has {} interior nodes",
                values.len(),
                grid.dofs()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.dofs()],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Applies the functional to a discrete function.
    pub fn apply(&self, u: &FeFunction) -> Result<f64> {
        self.grid.check_same(&u.grid)?;
        Ok(dot(&self.values, &u.values))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sparse symmetric operator with the 9-point Q1 stencil. Row `k` stores the
/// couplings to `(ix+dx, iy+dy)` at slot `(dy+1)*3 + (dx+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdOperator {
    grid: Grid,
    stencil: Vec<[f64; 9]>,
}

impl SpdOperator {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Matrix entry `(i, j)`, zero outside the stencil.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let (ix, iy) = self.grid.coords(i);
        let (jx, jy) = self.grid.coords(j);
        let dx = jx as isize - ix as isize;
        let dy = jy as isize - iy as isize;
        if dx.abs() > 1 || dy.abs() > 1 {
            return 0.0;
        }
        self.stencil[i][((dy + 1) * 3 + dx + 1) as usize]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let m = self.grid.m();
        for (k, row) in self.stencil.iter().enumerate() {
            let (ix, iy) = (k % m, k / m);
            let mut s = 0.0;
            for dy in 0..3usize {
                let jy = iy + dy;
                if jy == 0 || jy > m {
                    continue;
                }
                for dx in 0..3usize {
                    let jx = ix + dx;
                    if jx == 0 || jx > m {
                        continue;
                    }
                    s += row[dy * 3 + dx] * x[(jy - 1) * m + (jx - 1)];
                }
            }
            out[k] = s;
        }
    }

    /// Quadratic form `x^T A x`.
    pub fn energy(&self, x: &[f64]) -> f64 {
        dot(x, &self.apply(x))
    }

    pub fn add(&self, other: &SpdOperator) -> Result<SpdOperator> {
        self.grid.check_same(&other.grid)?;
        let stencil = self
            .stencil
            .iter()
            .zip(&other.stencil)
            .map(|(a, b)| std::array::from_fn(|i| a[i] + b[i]))
            .collect();
        Ok(SpdOperator {
            grid: self.grid,
            stencil,
        })
    }

    pub fn max_abs_diff(&self, other: &SpdOperator) -> f64 {
        self.stencil
            .iter()
            .zip(&other.stencil)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Assembles `int a grad phi_i . grad phi_j` for an arbitrary-sign field.
pub(crate) fn assemble_unchecked(grid: Grid, a: &ScalarField) -> SpdOperator {
    let mut stencil = vec![[0.0; 9]; grid.dofs()];
    let n = grid.n();
    for ey in 0..n {
        for ex in 0..n {
            let coef = a.values[ey * n + ex];
            if coef == 0.0 {
                continue;
            }
            let nodes = grid.element_nodes(ex, ey);
            for (p, np) in nodes.iter().enumerate() {
                let Some(i) = *np else { continue };
                for (q, nq) in nodes.iter().enumerate() {
                    if nq.is_none() {
                        continue;
                    }
                    let dx = LOCAL_OFFSETS[q].0 as isize - LOCAL_OFFSETS[p].0 as isize;
                    let dy = LOCAL_OFFSETS[q].1 as isize - LOCAL_OFFSETS[p].1 as isize;
                    stencil[i][((dy + 1) * 3 + dx + 1) as usize] += coef * KREF[p][q];
                }
            }
        }
    }
    SpdOperator { grid, stencil }
}

pub fn assemble_stiffness(grid: Grid, a: &ScalarField) -> Result<SpdOperator> {
    grid.check_same(&a.grid)?;
    if let Some((element, &value)) = a.values.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NonPositiveCoefficient { element, value });
    }
    Ok(assemble_unchecked(grid, a))
}

/// `out += scale * K(field) x`, visiting only the listed elements.
pub(crate) fn apply_field_stiffness(
    grid: Grid,
    support: &[(usize, f64)],
    scale: f64,
    x: &[f64],
    out: &mut [f64],
) {
    let n = grid.n();
    for &(e, coef) in support {
        let nodes = grid.element_nodes(e % n, e / n);
        let local: [f64; 4] = nodes.map(|k| k.map_or(0.0, |k| x[k]));
        let c = scale * coef;
        for (p, np) in nodes.iter().enumerate() {
            if let Some(i) = *np {
                let s: f64 = (0..4).map(|q| KREF[p][q] * local[q]).sum();
                out[i] += c * s;
            }
        }
    }
}

/// Matrix-free `A_1 x` for the unit-coefficient stiffness: 8/3 on the
/// diagonal and -1/3 for each of the eight neighbours.
pub fn laplace_apply(grid: Grid, x: &[f64]) -> Vec<f64> {
    let m = grid.m();
    let mut out = vec![0.0; x.len()];
    for iy in 0..m {
        for ix in 0..m {
            let mut nb = 0.0;
            for jy in iy.saturating_sub(1)..=(iy + 1).min(m - 1) {
                for jx in ix.saturating_sub(1)..=(ix + 1).min(m - 1) {
                    nb += x[jy * m + jx];
                }
            }
            let k = iy * m + ix;
            out[k] = 3.0 * x[k] - nb / 3.0;
        }
    }
    out
}

pub fn v_inner(u: &FeFunction, v: &FeFunction) -> Result<f64> {
    u.grid.check_same(&v.grid)?;
    Ok(dot(&u.values, &laplace_apply(u.grid, &v.values)))
}

/// `int phi_i dx`, which is `h^2` for every interior hat function.
pub fn load_constant(grid: Grid) -> LoadVector {
    let h = grid.h();
    LoadVector {
        grid,
        values: vec![h * h; grid.dofs()],
    }
}

const GAUSS3_POINTS: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GAUSS3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// `int phi_i(x) exp(-lambda |x - center|^2) dx` with 3x3 Gauss per element.
pub fn gaussian_functional(grid: Grid, center: [f64; 2], lambda: f64) -> Result<LoadVector> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "kernel width must be positive, got {lambda}"
        )));
    }
    if !center.iter().all(|c| (0.0..=1.0).contains(c)) {
        return Err(Error::OutOfDomain(format!(
            "measurement center {center:?} outside the unit square"
        )));
    }
    let n = grid.n();
    let h = grid.h();
    let mut values = vec![0.0; grid.dofs()];
    for ey in 0..n {
        for ex in 0..n {
            let nodes = grid.element_nodes(ex, ey);
            if nodes.iter().all(Option::is_none) {
                continue;
            }
            let mut acc = [0.0; 4];
            for (gy, wy) in GAUSS3_POINTS.iter().zip(GAUSS3_WEIGHTS) {
                let t = 0.5 * (1.0 + gy);
                let y = (ey as f64 + t) * h;
                for (gx, wx) in GAUSS3_POINTS.iter().zip(GAUSS3_WEIGHTS) {
                    let s = 0.5 * (1.0 + gx);
                    let x = (ex as f64 + s) * h;
                    let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
                    let w = wx * wy * 0.25 * h * h * (-lambda * r2).exp();
                    acc[0] += w * (1.0 - s) * (1.0 - t);
                    acc[1] += w * s * (1.0 - t);
                    acc[2] += w * s * t;
                    acc[3] += w * (1.0 - s) * t;
                }
            }
            for (p, np) in nodes.iter().enumerate() {
                if let Some(i) = *np {
                    values[i] += acc[p];
                }
            }
        }
    }
    Ok(LoadVector { grid, values })
}

/// Banded Cholesky factor of an assembled operator. With row-major numbering
/// the half bandwidth is `n`, so factoring costs `O(n^4)` and each solve
/// `O(n^3)`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    op: SpdOperator,
    band: usize,
    rows: Vec<f64>,
}

impl CholeskyFactor {
    pub fn new(op: SpdOperator) -> Result<Self> {
        let grid = op.grid;
        let dofs = grid.dofs();
        let m = grid.m();
        let p = m + 1;
        let w = p + 1;
        let mut rows = vec![0.0; dofs * w];
        // Lower-triangle couplings: (dx, dy) with dy < 0, or dy == 0 and dx <= 0.
        const LOWER: [(isize, isize); 5] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (0, 0)];
        for i in 0..dofs {
            let (ix, iy) = grid.coords(i);
            for (dx, dy) in LOWER {
                let jx = ix as isize + dx;
                let jy = iy as isize + dy;
                if let Some(j) = grid.node(jx as usize, jy as usize) {
                    rows[i * w + j + p - i] = op.stencil[i][((dy + 1) * 3 + dx + 1) as usize];
                }
            }
        }
        for i in 0..dofs {
            let jmin = i.saturating_sub(p);
            for j in jmin..=i {
                let kmin = jmin.max(j.saturating_sub(p));
                let ri = i * w + p - i;
                let rj = j * w + p - j;
                let s: f64 = rows[ri + kmin..ri + j]
                    .iter()
                    .zip(&rows[rj + kmin..rj + j])
                    .map(|(a, b)| a * b)
                    .sum();
                let v = rows[ri + j] - s;
                if i == j {
                    if !(v > 0.0) {
                        return Err(Error::NotPositiveDefinite(i));
                    }
                    rows[ri + j] = v.sqrt();
                } else {
                    rows[ri + j] = v / rows[rj + j];
                }
            }
        }
        Ok(Self { op, band: p, rows })
    }

    pub fn grid(&self) -> Grid {
        self.op.grid
    }

    pub fn operator(&self) -> &SpdOperator {
        &self.op
    }

    fn substitute(&self, b: &[f64]) -> Vec<f64> {
        let p = self.band;
        let w = p + 1;
        let mut y = b.to_vec();
        for i in 0..y.len() {
            let jmin = i.saturating_sub(p);
            let ri = i * w + p - i;
            let s: f64 = self.rows[ri + jmin..ri + i]
                .iter()
                .zip(&y[jmin..i])
                .map(|(a, b)| a * b)
                .sum();
            y[i] = (y[i] - s) / self.rows[ri + i];
        }
        for i in (0..y.len()).rev() {
            let ri = i * w + p - i;
            y[i] /= self.rows[ri + i];
            let xi = y[i];
            let jmin = i.saturating_sub(p);
            for (yk, l) in y[jmin..i].iter_mut().zip(&self.rows[ri + jmin..ri + i]) {
                *yk -= l * xi;
            }
        }
        y
    }

    /// Solves `A x = b` to [`SOLVE_TOLERANCE`] relative residual, refining if needed.
    pub fn solve_values(&self, b: &[f64]) -> Result<Vec<f64>> {
        let bnorm = dot(b, b).sqrt();
        if bnorm == 0.0 {
            return Ok(vec![0.0; b.len()]);
        }
        let mut x = self.substitute(b);
        let mut achieved = f64::INFINITY;
        for _ in 0..4 {
            let r = residual(&self.op, &x, b);
            achieved = dot(&r, &r).sqrt() / bnorm;
            if achieved <= SOLVE_TOLERANCE {
                return Ok(x);
            }
            let dx = self.substitute(&r);
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
        }
        Err(Error::Residual {
            achieved,
            tolerance: SOLVE_TOLERANCE,
        })
    }

    pub fn solve(&self, b: &LoadVector) -> Result<FeFunction> {
        self.op.grid.check_same(&b.grid)?;
        Ok(FeFunction {
            grid: b.grid,
            values: self.solve_values(&b.values)?,
        })
    }
}

/// `b - A x` evaluated with error-free products and compensated sums, so the
/// reported residual is not swamped by cancellation in the stencil sums.
fn residual(op: &SpdOperator, x: &[f64], b: &[f64]) -> Vec<f64> {
    let m = op.grid.m();
    let mut out = vec![0.0; x.len()];
    for (k, row) in op.stencil.iter().enumerate() {
        let (ix, iy) = (k % m, k / m);
        let mut s = b[k];
        let mut c = 0.0;
        for dy in 0..3usize {
            let jy = iy + dy;
            if jy == 0 || jy > m {
                continue;
            }
            for dx in 0..3usize {
                let jx = ix + dx;
                if jx == 0 || jx > m {
                    continue;
                }
                let a = row[dy * 3 + dx];
                let xv = x[(jy - 1) * m + (jx - 1)];
                let prod = -a * xv;
                let perr = (-a).mul_add(xv, -prod);
                let t = s + prod;
                let z = t - s;
                c += (s - (t - z)) + (prod - z) + perr;
                s = t;
            }
        }
        out[k] = s + c;
    }
    out
}

pub fn solve(a: &SpdOperator, b: &LoadVector) -> Result<FeFunction> {
    CholeskyFactor::new(a.clone())?.solve(b)
}

/// Cached factorization of the unit-coefficient stiffness, used for Riesz
/// representers in the `V` inner product.
#[derive(Debug, Clone)]
pub struct RieszMap {
    factor: CholeskyFactor,
}

impl RieszMap {
    pub fn new(grid: Grid) -> Result<Self> {
        let op = assemble_unchecked(grid, &ScalarField::constant(grid, 1.0));
        Ok(Self {
            factor: CholeskyFactor::new(op)?,
        })
    }

    pub fn grid(&self) -> Grid {
        self.factor.grid()
    }

    pub fn representer(&self, l: &LoadVector) -> Result<FeFunction> {
        self.factor.solve(l)
    }
}

pub fn riesz_representer(grid: Grid, l: &LoadVector) -> Result<FeFunction> {
    grid.check_same(&l.grid)?;
    RieszMap::new(grid)?.representer(l)
}

/// Dual norm `||f||_{V'}` of the unit load, `||R f||_V` on the given grid.
pub fn unit_load_dual_norm(grid: Grid) -> Result<f64> {
    Ok(riesz_representer(grid, &load_constant(grid))?.norm_v())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Sampler;

    fn random_field(grid: Grid, seed: u32, lo: f64, hi: f64) -> ScalarField {
        let mut s = Sampler::new(seed);
        let v = (0..grid.elements()).map(|_| s.uniform(lo, hi)).collect();
        ScalarField::from_values(grid, v).unwrap()
    }

    fn random_vec(len: usize, seed: u32) -> Vec<f64> {
        let mut s = Sampler::new(seed);
        (0..len).map(|_| s.uniform(-1.0, 1.0)).collect()
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(Grid::new(8).unwrap().dofs(), 49);
        assert_eq!(Grid::new(64).unwrap().dofs(), 3969);
        assert!(matches!(Grid::new(12), Err(Error::InvalidGrid(12))));
        assert!(Grid::new(0).is_err());
    }

    #[test]
    fn unit_coefficient_is_laplace() {
        let g = Grid::new(16).unwrap();
        let a1 = assemble_stiffness(g, &ScalarField::constant(g, 1.0)).unwrap();
        let x = random_vec(g.dofs(), 3);
        let lhs = a1.apply(&x);
        let rhs = laplace_apply(g, &x);
        assert!(lhs.iter().zip(&rhs).all(|(a, b)| (a - b).abs() < 1e-14));

        let a2 = assemble_stiffness(g, &ScalarField::constant(g, 2.0)).unwrap();
        for i in [0, 17, 100] {
            for j in [0, 1, 15, 16, 17, 18, 100] {
                assert!((a2.entry(i, j) - 2.0 * a1.entry(i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn assembly_is_linear_in_coefficient() {
        let g = Grid::new(16).unwrap();
        let a = random_field(g, 1, 0.5, 2.0);
        let b = random_field(g, 2, 0.5, 2.0);
        let mut ab = a.clone();
        ab.add_scaled(1.0, &b).unwrap();
        let sum = assemble_stiffness(g, &a)
            .unwrap()
            .add(&assemble_stiffness(g, &b).unwrap())
            .unwrap();
        assert!(assemble_stiffness(g, &ab).unwrap().max_abs_diff(&sum) < 1e-14);
    }

    #[test]
    fn nonpositive_coefficient_names_element() {
        let g = Grid::new(8).unwrap();
        let mut v = vec![1.0; 64];
        v[37] = -0.5;
        let a = ScalarField::from_values(g, v).unwrap();
        match assemble_stiffness(g, &a) {
            Err(Error::NonPositiveCoefficient { element, .. }) => assert_eq!(element, 37),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn random_coefficient_operator_is_positive() {
        let g = Grid::new(16).unwrap();
        let op = assemble_stiffness(g, &random_field(g, 9, 0.01, 3.0)).unwrap();
        for seed in 0..5 {
            assert!(op.energy(&random_vec(g.dofs(), 100 + seed)) > 0.0);
        }
        // Smallest eigenvalue via inverse power iteration on the factorization.
        let f = CholeskyFactor::new(op.clone()).unwrap();
        let mut x = random_vec(g.dofs(), 5);
        let mut lambda = 0.0;
        for _ in 0..50 {
            let nrm = dot(&x, &x).sqrt();
            x.iter_mut().for_each(|v| *v /= nrm);
            let y = f.solve_values(&x).unwrap();
            lambda = 1.0 / dot(&x, &y);
            x = y;
        }
        assert!(lambda > 0.0 && lambda.is_finite());
    }

    #[test]
    fn solve_round_trip_and_zero() {
        let g = Grid::new(16).unwrap();
        let op = assemble_stiffness(g, &random_field(g, 4, 0.1, 2.0)).unwrap();
        let f = CholeskyFactor::new(op.clone()).unwrap();
        let zero = f.solve(&LoadVector::zeros(g)).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));

        let u = random_vec(g.dofs(), 11);
        let b = LoadVector::from_values(g, op.apply(&u)).unwrap();
        let x = f.solve(&b).unwrap();
        let err = x.values().iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn galerkin_identity_for_unit_problem() {
        for n in [8, 32, 64] {
            let g = Grid::new(n).unwrap();
            let l = load_constant(g);
            let a1 = assemble_stiffness(g, &ScalarField::constant(g, 1.0)).unwrap();
            let u = solve(&a1, &l).unwrap();
            let lhs = v_inner(&u, &u).unwrap();
            let rhs = l.apply(&u).unwrap();
            assert!(((lhs - rhs) / rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn load_entries() {
        let l8 = load_constant(Grid::new(8).unwrap());
        assert!(l8.values().iter().all(|&v| v == 1.0 / 64.0));
        let l16 = load_constant(Grid::new(16).unwrap());
        assert!(l16.values().iter().all(|&v| v == 1.0 / 256.0));
        let g = Grid::new(32).unwrap();
        let total: f64 = load_constant(g).values().iter().sum();
        assert!((total - 31.0f64.powi(2) / 1024.0).abs() < 1e-14);
    }

    #[test]
    fn v_inner_properties() {
        let g = Grid::new(16).unwrap();
        let u = FeFunction::from_values(g, random_vec(g.dofs(), 1)).unwrap();
        let v = FeFunction::from_values(g, random_vec(g.dofs(), 2)).unwrap();
        assert!(v_inner(&u, &u).unwrap() > 0.0);
        assert_eq!(v_inner(&FeFunction::zeros(g), &FeFunction::zeros(g)).unwrap(), 0.0);
        let uv = v_inner(&u, &v).unwrap();
        let vu = v_inner(&v, &u).unwrap();
        assert!((uv - vu).abs() < 1e-12 * uv.abs().max(1.0));
        let other = FeFunction::zeros(Grid::new(8).unwrap());
        assert!(matches!(v_inner(&u, &other), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn refinement_consistency() {
        let mut prev: Option<FeFunction> = None;
        let mut diffs = Vec::new();
        for n in [8, 16, 32, 64] {
            let g = Grid::new(n).unwrap();
            let u = riesz_representer(g, &load_constant(g)).unwrap();
            if let Some(p) = prev {
                diffs.push(u.sub(&p.prolong(g).unwrap()).norm_v());
            }
            prev = Some(u);
        }
        assert!(diffs.windows(2).all(|w| w[1] < w[0]), "{diffs:?}");
    }

    #[test]
    fn prolongation_preserves_norm() {
        let g = Grid::new(16).unwrap();
        let u = FeFunction::from_values(g, random_vec(g.dofs(), 8)).unwrap();
        let fine = u.prolong(Grid::new(32).unwrap()).unwrap();
        assert!((fine.norm_v() - u.norm_v()).abs() < 1e-12 * u.norm_v());
    }

    #[test]
    fn gaussian_functional_symmetry_and_errors() {
        let g = Grid::new(16).unwrap();
        let a = gaussian_functional(g, [0.3, 0.4], 50.0).unwrap();
        let b = gaussian_functional(g, [0.7, 0.4], 50.0).unwrap();
        let m = g.m();
        for iy in 0..m {
            for ix in 0..m {
                let va = a.values()[iy * m + ix];
                let vb = b.values()[iy * m + (m - 1 - ix)];
                assert!((va - vb).abs() < 1e-15);
            }
        }
        assert!(gaussian_functional(g, [0.5, 0.5], 0.0).is_err());
        assert!(gaussian_functional(g, [1.5, 0.5], 1.0).is_err());
    }

    /// Gauss-Legendre nodes and weights on [-1, 1] by Newton on `P_q`.
    fn gauss_legendre(q: usize) -> Vec<(f64, f64)> {
        (0..q)
            .map(|i| {
                let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=q {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = q as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    }

    /// `int I_h g(x) exp(-lambda |x - c|^2) dx` element by element.
    fn interpolant_against_kernel(g: Grid, nodal: impl Fn(f64, f64) -> f64, c: [f64; 2], lambda: f64, q: usize) -> f64 {
        let rule = gauss_legendre(q);
        let h = g.h();
        let mut total = 0.0;
        for ey in 0..g.n() {
            for ex in 0..g.n() {
                let corners = [(0, 0), (1, 0), (1, 1), (0, 1)].map(|(dx, dy)| nodal((ex + dx) as f64 * h, (ey + dy) as f64 * h));
                for &(py, wy) in &rule {
                    let t = 0.5 * (1.0 + py);
                    for &(px, wx) in &rule {
                        let s = 0.5 * (1.0 + px);
                        let v = corners[0] * (1.0 - s) * (1.0 - t) + corners[1] * s * (1.0 - t) + corners[2] * s * t + corners[3] * (1.0 - s) * t;
                        let (x, y) = ((ex as f64 + s) * h, (ey as f64 + t) * h);
                        total += 0.25 * h * h * wx * wy * v * (-lambda * ((x - c[0]).powi(2) + (y - c[1]).powi(2))).exp();
                    }
                }
            }
        }
        total
    }

    #[test]
    fn gaussian_functional_matches_quadrature_oracle() {
        let g = Grid::new(64).unwrap();
        let lambda = 2048.0 / 9.0;
        let c = [0.5, 0.5];
        let bump = |x: f64, y: f64| 16.0 * x * (1.0 - x) * y * (1.0 - y);
        let l = gaussian_functional(g, c, lambda).unwrap();
        let v: Vec<f64> = (0..g.dofs())
            .map(|k| {
                let (ix, iy) = g.coords(k);
                bump(ix as f64 * g.h(), iy as f64 * g.h())
            })
            .collect();
        let value = l.apply(&FeFunction::from_values(g, v).unwrap()).unwrap();
        let nine_point = interpolant_against_kernel(g, bump, c, lambda, 3);
        assert!((value - nine_point).abs() <= 1e-8 * value.abs(), "{value} vs {nine_point}");
        // The 3 x 3 rule is itself close to the exact element integrals.
        let fine = interpolant_against_kernel(g, bump, c, lambda, 12);
        assert!((value - fine).abs() <= 1e-6 * value.abs(), "{value} vs {fine}");
        // pi / lambda is the whole-plane mass, and the bump is ~1 near the center.
        assert!((value / (std::f64::consts::PI / lambda) - 1.0).abs() < 0.05);
    }

    #[test]
    fn gaussian_concentrates_for_large_width() {
        let g = Grid::new(16).unwrap();
        let k = g.node(8, 8).unwrap();
        let mut prev = 0.0;
        for lambda in [10.0, 100.0, 1000.0] {
            let l = gaussian_functional(g, [0.51, 0.495], lambda).unwrap();
            let total: f64 = l.values().iter().sum();
            let frac = l.values()[k] / total;
            assert_eq!(crate::parallel::argmax(l.values()), Some(k));
            assert!(frac > prev, "{lambda}: {frac}");
            prev = frac;
        }
        assert!(prev > 0.3);
    }

    #[test]
    fn riesz_identity() {
        let g = Grid::new(16).unwrap();
        let l = gaussian_functional(g, [0.25, 0.6], 2048.0 / 9.0).unwrap();
        let w = riesz_representer(g, &l).unwrap();
        for seed in 0..10 {
            let v = FeFunction::from_values(g, random_vec(g.dofs(), 40 + seed)).unwrap();
            let lhs = v_inner(&w, &v).unwrap();
            let rhs = l.apply(&v).unwrap();
            assert!((lhs - rhs).abs() < 1e-11 * rhs.abs().max(1e-3), "{lhs} {rhs}");
        }
        let zero = riesz_representer(g, &LoadVector::zeros(g)).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }
}
