//! Potential solve `-Δ psi = rho` with `d_n psi + varsigma psi = eta` on the walls.
//!
//! The Robin face closure is the one in [`crate::grid::robin_face`], so the
//! assembled operator is symmetric: wall cells pick up
//! `varsigma / (h (1 + varsigma h / 2))` on the diagonal and the `eta` part
//! moves to the right-hand side. With `varsigma = 0` the operator is the
//! pure-Neumann Laplacian, solvable only for `∫rho + ∫eta dS = 0`, and the
//! returned potential has zero mean.

use crate::grid::{gradient, BoundaryData, BoundaryRule, Grid, ScalarField, VectorField};
use crate::linalg::{pcg, CgOptions, FivePoint};
use crate::{Error, Result};

/// Potential, charge density and boundary data of one solve.
#[derive(Clone, Debug)]
pub struct ElectroState {
    pub psi: ScalarField,
    pub rho: ScalarField,
    pub eta: BoundaryData,
    pub varsigma: f64,
}

impl ElectroState {
    pub fn boundary_rule(&self) -> BoundaryRule {
        BoundaryRule::Robin {
            varsigma: self.varsigma,
            eta: self.eta.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PoissonSolver {
    grid: Grid,
    varsigma: f64,
    eta: BoundaryData,
    op: FivePoint,
    /// Right-hand-side contribution of `eta` per cell.
    eta_rhs: Vec<f64>,
    opts: CgOptions,
    project_incompatible: bool,
}

impl PoissonSolver {
    pub fn new(grid: Grid, varsigma: f64, eta: BoundaryData, tol: f64) -> Result<Self> {
        if !(varsigma >= 0.0 && varsigma.is_finite()) {
            return Err(Error::Domain(format!("capacitance must be >= 0, got {varsigma}")));
        }
        eta.check(&grid)?;
        let (nx, ny, hx, hy) = (grid.nx(), grid.ny(), grid.hx(), grid.hy());
        let wx = varsigma / (hx * (1.0 + 0.5 * varsigma * hx));
        let wy = varsigma / (hy * (1.0 + 0.5 * varsigma * hy));
        let gx = 1.0 / (hx * (1.0 + 0.5 * varsigma * hx));
        let gy = 1.0 / (hy * (1.0 + 0.5 * varsigma * hy));
        let mut extra = vec![0.0; grid.n_cells()];
        let mut eta_rhs = vec![0.0; grid.n_cells()];
        for j in 0..ny {
            let (l, r) = (grid.cell(0, j), grid.cell(nx - 1, j));
            extra[l] += wx;
            extra[r] += wx;
            eta_rhs[l] += gx * eta.left[j];
            eta_rhs[r] += gx * eta.right[j];
        }
        for i in 0..nx {
            let (b, t) = (grid.cell(i, 0), grid.cell(i, ny - 1));
            extra[b] += wy;
            extra[t] += wy;
            eta_rhs[b] += gy * eta.bottom[i];
            eta_rhs[t] += gy * eta.top[i];
        }
        let op = FivePoint::new(
            nx,
            ny,
            1.0 / (hx * hx),
            1.0 / (hy * hy),
            extra,
            varsigma == 0.0,
        );
        Ok(Self {
            grid,
            varsigma,
            eta,
            op,
            eta_rhs,
            opts: CgOptions {
                tol,
                max_iter: 20 * grid.n_cells().max(100),
            },
            project_incompatible: false,
        })
    }

    /// Opt in to subtracting the mean defect from incompatible Neumann data
    /// instead of rejecting it.
    pub fn project_incompatible(mut self, yes: bool) -> Self {
        self.project_incompatible = yes;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn varsigma(&self) -> f64 {
        self.varsigma
    }
    pub fn eta(&self) -> &BoundaryData {
        &self.eta
    }
    pub fn operator(&self) -> &FivePoint {
        &self.op
    }

    pub fn boundary_rule(&self) -> BoundaryRule {
        BoundaryRule::Robin {
            varsigma: self.varsigma,
            eta: self.eta.clone(),
        }
    }

    /// `∫rho dx + ∫eta dS`, zero for solvable pure-Neumann data.
    pub fn compatibility_defect(&self, rho: &ScalarField) -> f64 {
        rho.integral() + self.eta.integral(&self.grid)
    }

    fn rhs(&self, rho: &ScalarField, with_eta: bool) -> Result<Vec<f64>> {
        self.grid.check_same(rho.grid())?;
        if !rho.is_finite() {
            return Err(Error::Structural("non-finite charge density".into()));
        }
        let mut shift = 0.0;
        if self.varsigma == 0.0 {
            let defect = if with_eta {
                self.compatibility_defect(rho)
            } else {
                rho.integral()
            };
            let scale = rho.values().iter().map(|v| v.abs()).sum::<f64>() * self.grid.cell_area()
                + if with_eta { self.eta.integral_abs(&self.grid) } else { 0.0 };
            if defect.abs() > 1e-10 * scale {
                if self.project_incompatible {
                    shift = defect / self.grid.area();
                } else {
                    return Err(Error::Compatibility { defect });
                }
            }
        }
        Ok(rho
            .values()
            .iter()
            .zip(&self.eta_rhs)
            .map(|(r, e)| r - shift + if with_eta { *e } else { 0.0 })
            .collect())
    }

    /// Solves for the potential, warm-starting from `guess` when given.
    pub fn solve(&self, rho: &ScalarField, guess: Option<&ScalarField>) -> Result<ScalarField> {
        let b = self.rhs(rho, true)?;
        self.run(b, guess)
    }

    /// Same operator with `eta = 0`.
    pub fn solve_homogeneous(&self, rho: &ScalarField, guess: Option<&ScalarField>) -> Result<ScalarField> {
        let b = self.rhs(rho, false)?;
        self.run(b, guess)
    }

    fn run(&self, b: Vec<f64>, guess: Option<&ScalarField>) -> Result<ScalarField> {
        let mut x = match guess {
            Some(g) => {
                self.grid.check_same(g.grid())?;
                g.values().to_vec()
            }
            None => vec![0.0; self.grid.n_cells()],
        };
        pcg(&self.op, &b, &mut x, self.opts, "poisson")?;
        ScalarField::new(self.grid, x)
    }

    /// Relative residual `||A psi - b|| / ||b||` of the assembled system.
    pub fn relative_residual(&self, psi: &ScalarField, rho: &ScalarField) -> Result<f64> {
        let mut b = self.rhs(rho, true)?;
        if self.varsigma == 0.0 {
            let m = b.iter().sum::<f64>() / b.len() as f64;
            b.iter_mut().for_each(|v| *v -= m);
        }
        let mut ax = vec![0.0; b.len()];
        self.op.apply(psi.values(), &mut ax);
        let num: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = b.iter().map(|v| v * v).sum();
        Ok(if den == 0.0 { num.sqrt() } else { (num / den).sqrt() })
    }

    /// `E = -grad psi` with this solver's boundary closure.
    pub fn electric_field(&self, psi: &ScalarField) -> Result<VectorField> {
        electric_field(psi, &self.boundary_rule())
    }
}

/// One-shot solve; see [`PoissonSolver`].
pub fn solve_poisson(rho: &ScalarField, eta: &BoundaryData, varsigma: f64, tol: f64) -> Result<ScalarField> {
    PoissonSolver::new(*rho.grid(), varsigma, eta.clone(), tol)?.solve(rho, None)
}

/// `E = -grad psi`.
pub fn electric_field(psi: &ScalarField, bc: &BoundaryRule) -> Result<VectorField> {
    Ok(gradient(psi, bc)?.scaled(-1.0))
}
