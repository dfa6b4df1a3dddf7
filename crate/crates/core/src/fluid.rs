//! Incompressible momentum step on the staggered grid.
//!
//! One step is: explicit skew-symmetric convection and body force, an
//! implicit viscous solve, the stochastic increment, and a pressure
//! projection. Wall faces stay exactly zero throughout (no slip).
//!
//! The returned "pressure" is the projection multiplier `q` with
//! `u_new = v - grad q`; it equals `dt * p` for the physical pressure.

use crate::grid::{divergence, gradient_interior, Grid, ScalarField, VectorField};
use crate::linalg::{pcg, CgOptions, FivePoint, NeumannDct};
use crate::{Error, Result};

/// Relative residual target of the viscous and pressure solves.
pub const DEFAULT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct FluidState {
    pub u: VectorField,
    /// Projection multiplier of the last step.
    pub p: ScalarField,
    pub mu: f64,
    pub kappa: f64,
}

impl FluidState {
    pub fn new(u: VectorField, mu: f64, kappa: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) || !kappa.is_finite() {
            return Err(Error::Domain(format!("invalid mu={mu} or kappa={kappa}")));
        }
        if !u.boundary_is_zero() {
            return Err(Error::Domain("velocity must vanish on the walls".into()));
        }
        let p = ScalarField::zeros(*u.grid());
        Ok(Self { u, p, mu, kappa })
    }

    pub fn at_rest(grid: Grid, mu: f64, kappa: f64) -> Result<Self> {
        Self::new(VectorField::zeros(grid), mu, kappa)
    }
}

/// `-kappa rho grad psi` on interior faces, with `rho` averaged to the face.
pub fn coulomb_force(rho: &ScalarField, psi: &ScalarField, kappa: f64) -> Result<VectorField> {
    let g = *rho.grid();
    g.check_same(psi.grid())?;
    let mut f = VectorField::zeros(g);
    for j in 0..g.ny() {
        for i in 1..g.nx() {
            let rf = 0.5 * (rho.at(i - 1, j) + rho.at(i, j));
            f.ux[g.xface(i, j)] = -kappa * rf * (psi.at(i, j) - psi.at(i - 1, j)) / g.hx();
        }
    }
    for j in 1..g.ny() {
        for i in 0..g.nx() {
            let rf = 0.5 * (rho.at(i, j - 1) + rho.at(i, j));
            f.uy[g.yface(i, j)] = -kappa * rf * (psi.at(i, j) - psi.at(i, j - 1)) / g.hy();
        }
    }
    Ok(f)
}

/// Skew-symmetric convection term.
///
/// Each face control volume exchanges the transport flux `F` with its four
/// neighbours; the term is `sum F * u_nb / (2 |V|)`, the average of the
/// divergence and convective forms. Because `F` is shared by both sides of
/// every exchange, `<advect(u), u> = 0` for any `u` with zero wall faces.
pub fn advect(u: &VectorField) -> VectorField {
    let g = *u.grid();
    let (nx, ny, hx, hy) = (g.nx(), g.ny(), g.hx(), g.hy());
    let inv = 0.5 / g.cell_area();
    let ux = |i: usize, j: usize| u.ux[g.xface(i, j)];
    let uy = |i: usize, j: usize| u.uy[g.yface(i, j)];
    let mut out = VectorField::zeros(g);
    for j in 0..ny {
        for i in 1..nx {
            let fe = 0.5 * (ux(i, j) + ux(i + 1, j)) * hy;
            let fw = -0.5 * (ux(i - 1, j) + ux(i, j)) * hy;
            let fnorth = 0.5 * (uy(i - 1, j + 1) + uy(i, j + 1)) * hx;
            let fs = -0.5 * (uy(i - 1, j) + uy(i, j)) * hx;
            let north = if j + 1 < ny { ux(i, j + 1) } else { 0.0 };
            let south = if j > 0 { ux(i, j - 1) } else { 0.0 };
            out.ux[g.xface(i, j)] =
                inv * (fe * ux(i + 1, j) + fw * ux(i - 1, j) + fnorth * north + fs * south);
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            let fnorth = 0.5 * (uy(i, j) + uy(i, j + 1)) * hx;
            let fs = -0.5 * (uy(i, j - 1) + uy(i, j)) * hx;
            let fe = 0.5 * (ux(i + 1, j - 1) + ux(i + 1, j)) * hy;
            let fw = -0.5 * (ux(i, j - 1) + ux(i, j)) * hy;
            let east = if i + 1 < nx { uy(i + 1, j) } else { 0.0 };
            let west = if i > 0 { uy(i - 1, j) } else { 0.0 };
            out.uy[g.yface(i, j)] =
                inv * (fnorth * uy(i, j + 1) + fs * uy(i, j - 1) + fe * east + fw * west);
        }
    }
    out
}

/// `shift * I + scale * (-Δ_h)` on the interior x-faces and y-faces, with
/// no-slip ghost values mirrored across the tangential walls.
fn velocity_operators(g: &Grid, shift: f64, scale: f64) -> (FivePoint, FivePoint) {
    let (nx, ny) = (g.nx(), g.ny());
    let cx = scale / (g.hx() * g.hx());
    let cy = scale / (g.hy() * g.hy());
    // x-faces: (nx - 1) x ny array; normal walls are Dirichlet nodes at
    // distance h, tangential walls are half a cell away.
    let mut ex = vec![shift; (nx - 1) * ny];
    for j in 0..ny {
        for i in 0..nx - 1 {
            let k = j * (nx - 1) + i;
            if i == 0 {
                ex[k] += cx;
            }
            if i == nx - 2 {
                ex[k] += cx;
            }
            if j == 0 {
                ex[k] += 2.0 * cy;
            }
            if j == ny - 1 {
                ex[k] += 2.0 * cy;
            }
        }
    }
    let mut ey = vec![shift; nx * (ny - 1)];
    for j in 0..ny - 1 {
        for i in 0..nx {
            let k = j * nx + i;
            if j == 0 {
                ey[k] += cy;
            }
            if j == ny - 2 {
                ey[k] += cy;
            }
            if i == 0 {
                ey[k] += 2.0 * cx;
            }
            if i == nx - 1 {
                ey[k] += 2.0 * cx;
            }
        }
    }
    (
        FivePoint::new(nx - 1, ny, cx, cy, ex, false),
        FivePoint::new(nx, ny - 1, cx, cy, ey, false),
    )
}

fn interior_x(u: &VectorField) -> Vec<f64> {
    let g = u.grid();
    let mut v = Vec::with_capacity((g.nx() - 1) * g.ny());
    for j in 0..g.ny() {
        for i in 1..g.nx() {
            v.push(u.ux[g.xface(i, j)]);
        }
    }
    v
}

fn interior_y(u: &VectorField) -> Vec<f64> {
    let g = u.grid();
    u.uy[g.yface(0, 1)..g.yface(0, g.ny())].to_vec()
}

fn scatter(g: &Grid, x: &[f64], y: &[f64]) -> VectorField {
    let mut u = VectorField::zeros(*g);
    let m = g.nx() - 1;
    for j in 0..g.ny() {
        for i in 1..g.nx() {
            u.ux[g.xface(i, j)] = x[j * m + i - 1];
        }
    }
    let start = g.yface(0, 1);
    u.uy[start..start + y.len()].copy_from_slice(y);
    u
}

/// Discrete `||grad u||^2` of a no-slip field, the quadratic form of the
/// viscous operator.
pub fn grad_norm_sq(u: &VectorField) -> f64 {
    let g = *u.grid();
    let (lx, ly) = velocity_operators(&g, 0.0, 1.0);
    let form = |op: &FivePoint, x: &[f64]| {
        let mut y = vec![0.0; x.len()];
        op.apply(x, &mut y);
        x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>()
    };
    (form(&lx, &interior_x(u)) + form(&ly, &interior_y(u))) * g.cell_area()
}

/// `mu Δ_h u` on interior faces, the viscous tendency of the implicit solve.
pub fn viscous_term(u: &VectorField, mu: f64) -> VectorField {
    let g = *u.grid();
    let (lx, ly) = velocity_operators(&g, 0.0, -mu);
    let apply = |op: &FivePoint, x: &[f64]| {
        let mut y = vec![0.0; x.len()];
        op.apply(x, &mut y);
        y
    };
    scatter(&g, &apply(&lx, &interior_x(u)), &apply(&ly, &interior_y(u)))
}

/// `½ ||u||^2`
pub fn kinetic_energy(u: &VectorField) -> f64 {
    0.5 * u.norm_sq()
}

/// Discrete Helmholtz–Leray projection onto divergence-free no-slip fields.
///
/// The pressure equation is the constant-coefficient Neumann Laplacian, which
/// is solved directly by cosine transforms.
#[derive(Clone, Debug)]
pub struct Projector {
    grid: Grid,
    solver: NeumannDct,
}

impl Projector {
    pub fn new(grid: Grid) -> Self {
        let solver = NeumannDct::new(
            grid.nx(),
            grid.ny(),
            1.0 / (grid.hx() * grid.hx()),
            1.0 / (grid.hy() * grid.hy()),
        );
        Self { grid, solver }
    }

    /// Returns `(v - grad q, q)` with `Δ_h q = div v`, Neumann walls and mean-free `q`.
    pub fn project(&self, v: &VectorField) -> Result<(VectorField, ScalarField)> {
        self.grid.check_same(v.grid())?;
        if !v.boundary_is_zero() {
            return Err(Error::Structural("projection input must vanish on the walls".into()));
        }
        let b: Vec<f64> = divergence(v).values().iter().map(|d| -d).collect();
        let q = ScalarField::new(self.grid, self.solver.solve(&b))?;
        let out = v.add_scaled(-1.0, &gradient_interior(&q))?;
        Ok((out, q))
    }
}

pub fn project_divergence_free(v: &VectorField) -> Result<(VectorField, ScalarField)> {
    Projector::new(*v.grid()).project(v)
}

/// Momentum stepper with operators assembled once per `(grid, mu, dt)`.
#[derive(Clone, Debug)]
pub struct FluidSolver {
    grid: Grid,
    mu: f64,
    dt: f64,
    visc_x: FivePoint,
    visc_y: FivePoint,
    projector: Projector,
    opts: CgOptions,
}

impl FluidSolver {
    pub fn new(grid: Grid, mu: f64, dt: f64, tol: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        if !(mu > 0.0) {
            return Err(Error::Domain(format!("viscosity must be positive, got {mu}")));
        }
        let (visc_x, visc_y) = velocity_operators(&grid, 1.0, dt * mu);
        Ok(Self {
            grid,
            mu,
            dt,
            visc_x,
            visc_y,
            projector: Projector::new(grid),
            opts: CgOptions {
                tol,
                max_iter: 20 * grid.n_cells().max(100),
            },
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    /// Explicit convection (scaled by `advection`) and force, implicit
    /// viscosity, then `noise` is added and the sum projected.
    pub fn step(
        &self,
        st: &FluidState,
        force: &VectorField,
        noise: &VectorField,
        advection: f64,
    ) -> Result<FluidState> {
        let g = self.grid;
        g.check_same(st.u.grid())?;
        g.check_same(force.grid())?;
        g.check_same(noise.grid())?;
        if st.mu != self.mu {
            return Err(Error::Domain("solver viscosity differs from the state".into()));
        }
        let mut star = st.u.clone();
        if advection != 0.0 {
            star.add_scaled_mut(-self.dt * advection, &advect(&st.u))?;
        }
        star.add_scaled_mut(self.dt, force)?;
        star.zero_boundary();

        let mut x = interior_x(&st.u);
        pcg(&self.visc_x, &interior_x(&star), &mut x, self.opts, "viscous")?;
        let mut y = interior_y(&st.u);
        pcg(&self.visc_y, &interior_y(&star), &mut y, self.opts, "viscous")?;
        let mut v = scatter(&g, &x, &y);

        v.add_scaled_mut(1.0, noise)?;
        v.zero_boundary();
        let (u, p) = self.projector.project(&v)?;
        if !u.is_finite() {
            return Err(Error::Invariant("non-finite velocity after projection".into()));
        }
        Ok(FluidState {
            u,
            p,
            mu: st.mu,
            kappa: st.kappa,
        })
    }
}

/// One momentum step; see [`FluidSolver::step`].
pub fn step_velocity(st: &FluidState, force: &VectorField, noise: &VectorField, dt: f64) -> Result<FluidState> {
    FluidSolver::new(*st.u.grid(), st.mu, dt, DEFAULT_TOL)?.step(st, force, noise, 1.0)
}
