//! Staggered rectangular grid, cell- and face-centred fields, and the
//! discrete gradient/divergence pair.
//!
//! Layout (row-major, `j` is the slow index):
//!
//! * cells `(i, j)`, `0 <= i < nx`, `0 <= j < ny`, index `j * nx + i`;
//! * x-faces `(i, j)`, `0 <= i <= nx`, index `j * (nx + 1) + i`, face `i` sits
//!   between cells `i - 1` and `i`;
//! * y-faces `(i, j)`, `0 <= j <= ny`, index `j * nx + i`, face `j` sits
//!   between cells `j - 1` and `j`.

use crate::{Error, Result};

/// Geometry of `[0, lx] x [0, ly]` split into `nx * ny` cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    hx: f64,
    hy: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::Structural(format!(
                "grid needs at least 4x4 cells, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::Structural(format!(
                "domain lengths must be positive, got {lx} x {ly}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            lx,
            ly,
            hx: lx / nx as f64,
            hy: ly / ny as f64,
        })
    }

    /// `n x n` cells on the unit square.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    pub fn hx(&self) -> f64 {
        self.hx
    }
    pub fn hy(&self) -> f64 {
        self.hy
    }
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }
    pub fn perimeter(&self) -> f64 {
        2.0 * (self.lx + self.ly)
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }
    pub fn n_xfaces(&self) -> usize {
        (self.nx + 1) * self.ny
    }
    pub fn n_yfaces(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
    #[inline]
    pub fn xface(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }
    #[inline]
    pub fn yface(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy)
    }
    pub fn xface_center(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.hx, (j as f64 + 0.5) * self.hy)
    }
    pub fn yface_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx, j as f64 * self.hy)
    }

    /// Quadrature weight of an x-face: a full cell inside, half a cell on a wall.
    #[inline]
    pub fn xface_weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.nx {
            0.5 * self.cell_area()
        } else {
            self.cell_area()
        }
    }
    #[inline]
    pub fn yface_weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.ny {
            0.5 * self.cell_area()
        } else {
            self.cell_area()
        }
    }

    /// Number of boundary faces, i.e. the length of a flat boundary sequence.
    pub fn n_boundary_faces(&self) -> usize {
        2 * (self.nx + self.ny)
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Structural(format!(
                "grid mismatch: {}x{} on {}x{} vs {}x{} on {}x{}",
                self.nx, self.ny, self.lx, self.ly, other.nx, other.ny, other.lx, other.ly
            )))
        }
    }
}

/// Cell-centred scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::Structural(format!(
                "scalar field needs {} values, got {}",
                grid.n_cells(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.n_cells()],
        }
    }

    /// Samples `f(x, y)` at cell centres.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_cells());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.cell_center(i, j);
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
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

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.cell(i, j)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `sum v * hx * hy`
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// Area-weighted inner product.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        crate::par::dot(&self.values, &other.values) * self.grid.cell_area()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> ScalarField {
        self.map(|v| s * v)
    }

    /// `self + s * other`
    pub fn add_scaled(&self, s: f64, other: &ScalarField) -> Result<ScalarField> {
        self.grid.check_same(&other.grid)?;
        Ok(ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + s * b)
                .collect(),
        })
    }
}

/// Face-centred vector field on the MAC grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: Grid,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, ux: Vec<f64>, uy: Vec<f64>) -> Result<Self> {
        if ux.len() != grid.n_xfaces() || uy.len() != grid.n_yfaces() {
            return Err(Error::Structural(format!(
                "vector field needs {}+{} face values, got {}+{}",
                grid.n_xfaces(),
                grid.n_yfaces(),
                ux.len(),
                uy.len()
            )));
        }
        Ok(Self { grid, ux, uy })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            ux: vec![0.0; grid.n_xfaces()],
            uy: vec![0.0; grid.n_yfaces()],
        }
    }

    /// Samples `(fx, fy)` at the respective face centres.
    pub fn from_fn(
        grid: Grid,
        fx: impl Fn(f64, f64) -> f64,
        fy: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let mut v = Self::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..=grid.nx {
                let (x, y) = grid.xface_center(i, j);
                v.ux[grid.xface(i, j)] = fx(x, y);
            }
        }
        for j in 0..=grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.yface_center(i, j);
                v.uy[grid.yface(i, j)] = fy(x, y);
            }
        }
        v
    }

    /// Velocity `(d psi/dy, -d psi/dx)` from a stream function sampled at
    /// cell corners, with wall faces set to zero. Discretely divergence-free
    /// when `psi` is constant along the boundary.
    pub fn from_streamfunction(grid: Grid, psi: impl Fn(f64, f64) -> f64) -> Self {
        let (hx, hy) = (grid.hx, grid.hy);
        let corner = |i: usize, j: usize| psi(i as f64 * hx, j as f64 * hy);
        let mut v = Self::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..=grid.nx {
                v.ux[grid.xface(i, j)] = (corner(i, j + 1) - corner(i, j)) / hy;
            }
        }
        for j in 0..=grid.ny {
            for i in 0..grid.nx {
                v.uy[grid.yface(i, j)] = -(corner(i + 1, j) - corner(i, j)) / hx;
            }
        }
        v.zero_boundary();
        v
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn is_finite(&self) -> bool {
        self.ux.iter().chain(&self.uy).all(|v| v.is_finite())
    }

    /// Sets every wall face to zero (no-slip / blocking).
    pub fn zero_boundary(&mut self) {
        let g = self.grid;
        for j in 0..g.ny {
            self.ux[g.xface(0, j)] = 0.0;
            self.ux[g.xface(g.nx, j)] = 0.0;
        }
        for i in 0..g.nx {
            self.uy[g.yface(i, 0)] = 0.0;
            self.uy[g.yface(i, g.ny)] = 0.0;
        }
    }

    pub fn boundary_is_zero(&self) -> bool {
        let g = self.grid;
        (0..g.ny).all(|j| self.ux[g.xface(0, j)] == 0.0 && self.ux[g.xface(g.nx, j)] == 0.0)
            && (0..g.nx).all(|i| self.uy[g.yface(i, 0)] == 0.0 && self.uy[g.yface(i, g.ny)] == 0.0)
    }

    /// Face-weighted inner product (half weight on wall faces).
    pub fn dot(&self, other: &VectorField) -> f64 {
        let g = self.grid;
        let mut s = 0.0;
        for j in 0..g.ny {
            for i in 0..=g.nx {
                let k = g.xface(i, j);
                s += g.xface_weight(i) * self.ux[k] * other.ux[k];
            }
        }
        for j in 0..=g.ny {
            let w = g.yface_weight(j);
            for i in 0..g.nx {
                let k = g.yface(i, j);
                s += w * self.uy[k] * other.uy[k];
            }
        }
        s
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm_l2(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.ux
            .iter()
            .chain(&self.uy)
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> VectorField {
        VectorField {
            grid: self.grid,
            ux: self.ux.iter().map(|v| s * v).collect(),
            uy: self.uy.iter().map(|v| s * v).collect(),
        }
    }

    /// `self += s * other`
    pub fn add_scaled_mut(&mut self, s: f64, other: &VectorField) -> Result<()> {
        self.grid.check_same(&other.grid)?;
        crate::par::axpy(s, &other.ux, &mut self.ux);
        crate::par::axpy(s, &other.uy, &mut self.uy);
        Ok(())
    }

    pub fn add_scaled(&self, s: f64, other: &VectorField) -> Result<VectorField> {
        let mut out = self.clone();
        out.add_scaled_mut(s, other)?;
        Ok(out)
    }

    /// Net outward flux through the walls, `sum (v . n) * face length`.
    pub fn outward_boundary_flux(&self) -> f64 {
        let g = self.grid;
        let mut s = 0.0;
        for j in 0..g.ny {
            s += (self.ux[g.xface(g.nx, j)] - self.ux[g.xface(0, j)]) * g.hy;
        }
        for i in 0..g.nx {
            s += (self.uy[g.yface(i, g.ny)] - self.uy[g.yface(i, 0)]) * g.hx;
        }
        s
    }
}

/// Values on the boundary faces, one per face, grouped by wall.
///
/// The flat ordering used by [`BoundaryData::from_flat`] and
/// [`BoundaryData::to_flat`] is bottom (`i = 0..nx`), right (`j = 0..ny`),
/// top (`i = 0..nx`), left (`j = 0..ny`).
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub bottom: Vec<f64>,
    pub top: Vec<f64>,
}

impl BoundaryData {
    pub fn constant(grid: &Grid, v: f64) -> Self {
        Self {
            left: vec![v; grid.ny],
            right: vec![v; grid.ny],
            bottom: vec![v; grid.nx],
            top: vec![v; grid.nx],
        }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f(x, y)` at boundary face midpoints.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            left: (0..grid.ny).map(|j| f(0.0, grid.xface_center(0, j).1)).collect(),
            right: (0..grid.ny)
                .map(|j| f(grid.lx, grid.xface_center(grid.nx, j).1))
                .collect(),
            bottom: (0..grid.nx).map(|i| f(grid.yface_center(i, 0).0, 0.0)).collect(),
            top: (0..grid.nx)
                .map(|i| f(grid.yface_center(i, grid.ny).0, grid.ly))
                .collect(),
        }
    }

    pub fn from_flat(grid: &Grid, values: &[f64]) -> Result<Self> {
        if values.len() != grid.n_boundary_faces() {
            return Err(Error::Structural(format!(
                "boundary sequence needs {} values, got {}",
                grid.n_boundary_faces(),
                values.len()
            )));
        }
        let (nx, ny) = (grid.nx, grid.ny);
        Ok(Self {
            bottom: values[..nx].to_vec(),
            right: values[nx..nx + ny].to_vec(),
            top: values[nx + ny..2 * nx + ny].to_vec(),
            left: values[2 * nx + ny..].to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        [&self.bottom, &self.right, &self.top, &self.left]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    pub(crate) fn check(&self, grid: &Grid) -> Result<()> {
        if self.left.len() != grid.ny
            || self.right.len() != grid.ny
            || self.bottom.len() != grid.nx
            || self.top.len() != grid.nx
        {
            return Err(Error::Structural("boundary data does not match grid".into()));
        }
        Ok(())
    }

    /// Midpoint-rule line integral over the boundary.
    pub fn integral(&self, grid: &Grid) -> f64 {
        (self.left.iter().sum::<f64>() + self.right.iter().sum::<f64>()) * grid.hy
            + (self.bottom.iter().sum::<f64>() + self.top.iter().sum::<f64>()) * grid.hx
    }

    pub fn integral_abs(&self, grid: &Grid) -> f64 {
        let s = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
        (s(&self.left) + s(&self.right)) * grid.hy + (s(&self.bottom) + s(&self.top)) * grid.hx
    }

    pub fn scaled(&self, s: f64) -> Self {
        let m = |v: &[f64]| v.iter().map(|x| s * x).collect();
        Self {
            left: m(&self.left),
            right: m(&self.right),
            bottom: m(&self.bottom),
            top: m(&self.top),
        }
    }
}

/// Midpoint-rule integral of a flat boundary sequence (see [`BoundaryData`]).
pub fn boundary_integral(grid: &Grid, values: &[f64]) -> Result<f64> {
    Ok(BoundaryData::from_flat(grid, values)?.integral(grid))
}

/// How boundary faces of a gradient are closed.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryRule {
    /// Prescribed outward normal derivative.
    Neumann(BoundaryData),
    /// `d_n f + varsigma f = eta` at the face.
    Robin { varsigma: f64, eta: BoundaryData },
    /// `f = 0` at the face.
    ZeroDirichlet,
}

impl BoundaryRule {
    pub fn neumann_zero(grid: &Grid) -> Self {
        BoundaryRule::Neumann(BoundaryData::zeros(grid))
    }

    /// Outward normal derivative and face value at a wall face whose
    /// adjacent cell holds `interior`; `h` is the spacing normal to the wall.
    ///
    /// The ghost value mirrors the interior across the face, so the face value
    /// is the ghost/interior mean and the derivative their difference over `h`.
    #[inline]
    pub fn close(&self, interior: f64, datum: f64, h: f64) -> (f64, f64) {
        match self {
            BoundaryRule::Neumann(_) => (datum, interior + 0.5 * h * datum),
            BoundaryRule::Robin { varsigma, .. } => robin_face(interior, datum, *varsigma, h),
            BoundaryRule::ZeroDirichlet => (-2.0 * interior / h, 0.0),
        }
    }

    fn data(&self) -> Option<&BoundaryData> {
        match self {
            BoundaryRule::Neumann(d) => Some(d),
            BoundaryRule::Robin { eta, .. } => Some(eta),
            BoundaryRule::ZeroDirichlet => None,
        }
    }

    /// Invokes `f(face value, outward derivative, face length)` for each wall
    /// face, in the flat boundary order.
    pub fn for_each_face(&self, psi: &ScalarField, mut f: impl FnMut(f64, f64, f64)) {
        let g = psi.grid;
        let datum = |side: &dyn Fn(&BoundaryData) -> f64| self.data().map_or(0.0, side);
        for i in 0..g.nx {
            let (d, v) = self.close(psi.at(i, 0), datum(&|b| b.bottom[i]), g.hy);
            f(v, d, g.hx);
        }
        for j in 0..g.ny {
            let (d, v) = self.close(psi.at(g.nx - 1, j), datum(&|b| b.right[j]), g.hx);
            f(v, d, g.hy);
        }
        for i in 0..g.nx {
            let (d, v) = self.close(psi.at(i, g.ny - 1), datum(&|b| b.top[i]), g.hy);
            f(v, d, g.hx);
        }
        for j in 0..g.ny {
            let (d, v) = self.close(psi.at(0, j), datum(&|b| b.left[j]), g.hx);
            f(v, d, g.hy);
        }
    }
}

/// Robin closure `d_n f + s f = eta` with face value `(ghost + interior) / 2`
/// and derivative `(ghost - interior) / h`. Returns `(d_n f, f_face)`.
#[inline]
pub fn robin_face(interior: f64, eta: f64, varsigma: f64, h: f64) -> (f64, f64) {
    let dn = (eta - varsigma * interior) / (1.0 + 0.5 * varsigma * h);
    (dn, interior + 0.5 * h * dn)
}

/// Face gradient of a cell-centred field. Interior faces use the centred
/// difference of neighbouring cells; wall faces use the boundary closure.
pub fn gradient(f: &ScalarField, bc: &BoundaryRule) -> Result<VectorField> {
    let g = f.grid;
    if let Some(d) = bc.data() {
        d.check(&g)?;
    }
    if !f.is_finite() {
        return Err(Error::Structural("gradient of a non-finite field".into()));
    }
    let mut v = VectorField::zeros(g);
    let datum = |side: &dyn Fn(&BoundaryData) -> f64| bc.data().map_or(0.0, side);
    for j in 0..g.ny {
        for i in 1..g.nx {
            v.ux[g.xface(i, j)] = (f.at(i, j) - f.at(i - 1, j)) / g.hx;
        }
        let (dl, _) = bc.close(f.at(0, j), datum(&|b| b.left[j]), g.hx);
        let (dr, _) = bc.close(f.at(g.nx - 1, j), datum(&|b| b.right[j]), g.hx);
        v.ux[g.xface(0, j)] = -dl;
        v.ux[g.xface(g.nx, j)] = dr;
    }
    for i in 0..g.nx {
        for j in 1..g.ny {
            v.uy[g.yface(i, j)] = (f.at(i, j) - f.at(i, j - 1)) / g.hy;
        }
        let (db, _) = bc.close(f.at(i, 0), datum(&|b| b.bottom[i]), g.hy);
        let (dt, _) = bc.close(f.at(i, g.ny - 1), datum(&|b| b.top[i]), g.hy);
        v.uy[g.yface(i, 0)] = -db;
        v.uy[g.yface(i, g.ny)] = dt;
    }
    Ok(v)
}

/// Gradient on interior faces only; wall faces are zero.
pub fn gradient_interior(f: &ScalarField) -> VectorField {
    let g = f.grid;
    let mut v = VectorField::zeros(g);
    for j in 0..g.ny {
        for i in 1..g.nx {
            v.ux[g.xface(i, j)] = (f.at(i, j) - f.at(i - 1, j)) / g.hx;
        }
    }
    for j in 1..g.ny {
        for i in 0..g.nx {
            v.uy[g.yface(i, j)] = (f.at(i, j) - f.at(i, j - 1)) / g.hy;
        }
    }
    v
}

/// Flux-form divergence per cell.
pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid;
    let mut out = vec![0.0; g.n_cells()];
    let (ihx, ihy) = (1.0 / g.hx, 1.0 / g.hy);
    crate::par::for_each_row(&mut out, g.nx, |j, row| {
        for (i, o) in row.iter_mut().enumerate() {
            *o = (v.ux[g.xface(i + 1, j)] - v.ux[g.xface(i, j)]) * ihx
                + (v.uy[g.yface(i, j + 1)] - v.uy[g.yface(i, j)]) * ihy;
        }
    });
    ScalarField {
        grid: g,
        values: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn cos_field(g: Grid) -> ScalarField {
        ScalarField::from_fn(g, |x, y| (PI * x).cos() * (PI * y).cos())
    }

    #[test]
    fn grid_rejects_small_or_degenerate() {
        assert!(Grid::new(3, 8, 1.0, 1.0).is_err());
        assert!(Grid::new(8, 8, 0.0, 1.0).is_err());
        let g = Grid::new(8, 5, 2.0, 1.0).unwrap();
        assert_eq!(ScalarField::zeros(g).values().len(), 40);
        assert_eq!(g.hx(), 0.25);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = Grid::unit(8).unwrap();
        let v = gradient(&ScalarField::constant(g, 7.0), &BoundaryRule::neumann_zero(&g)).unwrap();
        assert_eq!(v.max_abs(), 0.0);
    }

    #[test]
    fn gradient_of_linear_field() {
        let g = Grid::unit(8).unwrap();
        let f = ScalarField::from_fn(g, |x, _| x);
        // outward derivative of x: -1 on the left wall, +1 on the right
        let mut d = BoundaryData::zeros(&g);
        d.left = vec![-1.0; 8];
        d.right = vec![1.0; 8];
        let v = gradient(&f, &BoundaryRule::Neumann(d)).unwrap();
        assert!(v.ux.iter().all(|&a| (a - 1.0).abs() < 1e-12));
        assert!(v.uy.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn gradient_mismatched_boundary_is_error() {
        let g = Grid::unit(8).unwrap();
        let other = Grid::unit(6).unwrap();
        let bc = BoundaryRule::Neumann(BoundaryData::zeros(&other));
        assert!(matches!(
            gradient(&ScalarField::zeros(g), &bc),
            Err(Error::Structural(_))
        ));
    }

    fn gradient_error(n: usize) -> f64 {
        let g = Grid::unit(n).unwrap();
        let v = gradient(&cos_field(g), &BoundaryRule::neumann_zero(&g)).unwrap();
        let exact = VectorField::from_fn(
            g,
            |x, y| -PI * (PI * x).sin() * (PI * y).cos(),
            |x, y| -PI * (PI * x).cos() * (PI * y).sin(),
        );
        v.add_scaled(-1.0, &exact).unwrap().max_abs()
    }

    #[test]
    fn gradient_is_second_order() {
        let (e1, e2, e3) = (gradient_error(16), gradient_error(32), gradient_error(64));
        assert!(e1 / e2 >= 3.7, "ratio {}", e1 / e2);
        assert!(e2 / e3 >= 3.7, "ratio {}", e2 / e3);
    }

    #[test]
    fn divergence_examples() {
        let g = Grid::unit(8).unwrap();
        assert_eq!(divergence(&VectorField::zeros(g)).max_abs(), 0.0);
        let mut v = VectorField::zeros(g);
        for j in 0..8 {
            for i in 1..8 {
                v.ux[g.xface(i, j)] = 1.0;
            }
        }
        let d = divergence(&v);
        for j in 0..8 {
            for i in 1..7 {
                assert_eq!(d.at(i, j), 0.0);
            }
        }
    }

    fn laplacian_error(n: usize) -> f64 {
        let g = Grid::unit(n).unwrap();
        let f = cos_field(g);
        let lap = divergence(&gradient(&f, &BoundaryRule::neumann_zero(&g)).unwrap());
        let exact = f.scaled(-2.0 * PI * PI);
        lap.add_scaled(-1.0, &exact).unwrap().max_abs()
    }

    #[test]
    fn divergence_of_gradient_is_second_order() {
        let (e1, e2, e3) = (laplacian_error(16), laplacian_error(32), laplacian_error(64));
        assert!(e1 / e2 >= 3.7, "ratio {}", e1 / e2);
        assert!(e2 / e3 >= 3.7, "ratio {}", e2 / e3);
    }

    #[test]
    fn boundary_integral_examples() {
        let g = Grid::unit(10).unwrap();
        let ones = vec![1.0; g.n_boundary_faces()];
        assert!((boundary_integral(&g, &ones).unwrap() - 4.0).abs() < 1e-14);
        let zeros = vec![0.0; g.n_boundary_faces()];
        assert_eq!(boundary_integral(&g, &zeros).unwrap(), 0.0);
        let x = BoundaryData::from_fn(&g, |x, _| x).to_flat();
        assert!((boundary_integral(&g, &x).unwrap() - 2.0).abs() < 1e-14);
        assert!(boundary_integral(&g, &x[1..]).is_err());
    }

    #[test]
    fn robin_face_satisfies_relation() {
        let (dn, face) = robin_face(0.7, 0.3, 1.5, 0.1);
        assert!((dn + 1.5 * face - 0.3).abs() < 1e-15);
    }

    #[test]
    fn streamfunction_velocity_is_divergence_free_and_wall_free() {
        let g = Grid::new(12, 9, 1.0, 0.75).unwrap();
        let v = VectorField::from_streamfunction(g, |x, y| {
            (PI * x).sin().powi(2) * (PI * y / 0.75).sin().powi(2)
        });
        assert!(v.boundary_is_zero());
        assert!(divergence(&v).max_abs() < 1e-12);
    }

    fn field_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn discrete_divergence_theorem(ux in field_strategy(9 * 6), uy in field_strategy(8 * 7)) {
            let g = Grid::new(8, 6, 1.3, 0.7).unwrap();
            let v = VectorField::new(g, ux, uy).unwrap();
            let lhs = divergence(&v).integral();
            let rhs = v.outward_boundary_flux();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + v.max_abs()));
        }

        #[test]
        fn gradient_divergence_adjointness(
            ux in field_strategy(9 * 6), uy in field_strategy(8 * 7), f in field_strategy(48)
        ) {
            let g = Grid::new(8, 6, 1.3, 0.7).unwrap();
            let mut v = VectorField::new(g, ux, uy).unwrap();
            v.zero_boundary();
            let f = ScalarField::new(g, f).unwrap();
            let lhs = divergence(&v).dot(&f);
            let rhs = -v.dot(&gradient(&f, &BoundaryRule::neumann_zero(&g)).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }
}
