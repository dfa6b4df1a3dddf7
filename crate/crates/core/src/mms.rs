//! Manufactured-solution convergence suite.
//!
//! Every case uses `f = cos(pi x) cos(pi y)` on the unit square, whose normal
//! derivative vanishes on the walls, so Robin data reduce to `eta = varsigma f`.

use std::f64::consts::PI;
use std::fmt;

use crate::grid::{divergence, gradient};
use crate::poisson::{electric_field, solve_poisson};
use crate::{BoundaryData, BoundaryRule, Grid, Result, ScalarField, VectorField};

/// Grids of the default suite.
pub const DEFAULT_GRIDS: [usize; 3] = [32, 64, 128];
/// Minimum error ratio between `h` and `h/2` for second order.
pub const MIN_RATIO: f64 = 3.7;
const SOLVE_TOL: f64 = 1e-12;

fn exact(x: f64, y: f64) -> f64 {
    (PI * x).cos() * (PI * y).cos()
}

fn exact_gradient(g: Grid) -> VectorField {
    VectorField::from_fn(
        g,
        |x, y| -PI * (PI * x).sin() * (PI * y).cos(),
        |x, y| -PI * (PI * x).cos() * (PI * y).sin(),
    )
}

/// Which discrete operator a case exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmsProblem {
    /// Potential solve with Robin walls, `varsigma = 1`; L² error.
    PoissonRobin,
    /// Potential solve with Neumann walls, `varsigma = 0`; L² error.
    PoissonNeumann,
    /// Electric field of the Robin solve against `-grad f`; L² error.
    ElectricField,
    /// Face gradient of the sampled field; max error.
    Gradient,
    /// Divergence of the gradient against `-2 pi² f`; max error.
    Laplacian,
}

impl MmsProblem {
    pub const ALL: [MmsProblem; 5] = [
        MmsProblem::PoissonRobin,
        MmsProblem::PoissonNeumann,
        MmsProblem::ElectricField,
        MmsProblem::Gradient,
        MmsProblem::Laplacian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MmsProblem::PoissonRobin => "poisson_robin",
            MmsProblem::PoissonNeumann => "poisson_neumann",
            MmsProblem::ElectricField => "electric_field",
            MmsProblem::Gradient => "gradient",
            MmsProblem::Laplacian => "laplacian",
        }
    }

    /// Discretisation error on an `n x n` grid.
    pub fn error(self, n: usize) -> Result<f64> {
        let g = Grid::unit(n)?;
        let f = ScalarField::from_fn(g, exact);
        let solve = |varsigma: f64| {
            let rho = f.scaled(2.0 * PI * PI);
            let eta = BoundaryData::from_fn(&g, |x, y| varsigma * exact(x, y));
            solve_poisson(&rho, &eta, varsigma, SOLVE_TOL)
        };
        Ok(match self {
            MmsProblem::PoissonRobin => solve(1.0)?.add_scaled(-1.0, &f)?.norm_l2(),
            MmsProblem::PoissonNeumann => solve(0.0)?.add_scaled(-1.0, &f)?.norm_l2(),
            MmsProblem::ElectricField => {
                let psi = solve(1.0)?;
                let bc = BoundaryRule::Robin {
                    varsigma: 1.0,
                    eta: BoundaryData::from_fn(&g, exact),
                };
                let e = electric_field(&psi, &bc)?;
                e.add_scaled(1.0, &exact_gradient(g))?.norm_l2()
            }
            MmsProblem::Gradient => gradient(&f, &BoundaryRule::neumann_zero(&g))?
                .add_scaled(-1.0, &exact_gradient(g))?
                .max_abs(),
            MmsProblem::Laplacian => divergence(&gradient(&f, &BoundaryRule::neumann_zero(&g))?)
                .add_scaled(2.0 * PI * PI, &f)?
                .max_abs(),
        })
    }
}

/// Errors of one problem on successively halved grids.
#[derive(Clone, Debug, PartialEq)]
pub struct MmsCase {
    pub problem: MmsProblem,
    pub grids: Vec<usize>,
    pub errors: Vec<f64>,
}

impl MmsCase {
    /// `error(h) / error(h/2)` for each consecutive pair.
    pub fn ratios(&self) -> Vec<f64> {
        self.errors.windows(2).map(|w| w[0] / w[1]).collect()
    }

    pub fn passed(&self) -> bool {
        let r = self.ratios();
        !r.is_empty() && r.iter().all(|&r| r >= MIN_RATIO)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MmsReport {
    pub cases: Vec<MmsCase>,
}

impl MmsReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(MmsCase::passed)
    }

    pub fn case(&self, p: MmsProblem) -> Option<&MmsCase> {
        self.cases.iter().find(|c| c.problem == p)
    }
}

impl fmt::Display for MmsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.cases {
            write!(f, "{:<16}", c.problem.name())?;
            for (n, e) in c.grids.iter().zip(&c.errors) {
                write!(f, " n={n}:{e:.3e}")?;
            }
            let ratios: Vec<String> = c.ratios().iter().map(|r| format!("{r:.3}")).collect();
            writeln!(
                f,
                "  ratios [{}] {}",
                ratios.join(", "),
                if c.passed() { "ok" } else { "FAILED" }
            )?;
        }
        Ok(())
    }
}

/// Runs `problems` on `grids`, which should double from one entry to the next.
pub fn run_suite(problems: &[MmsProblem], grids: &[usize]) -> Result<MmsReport> {
    let cases = problems
        .iter()
        .map(|&problem| {
            let errors = grids.iter().map(|&n| problem.error(n)).collect::<Result<Vec<_>>>()?;
            Ok(MmsCase {
                problem,
                grids: grids.to_vec(),
                errors,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MmsReport { cases })
}

/// All problems on [`DEFAULT_GRIDS`].
pub fn default_suite() -> Result<MmsReport> {
    run_suite(&MmsProblem::ALL, &DEFAULT_GRIDS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_suite_is_second_order() {
        let r = run_suite(&MmsProblem::ALL, &[16, 32]).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.cases.len(), 5);
    }

    #[test]
    fn single_grid_does_not_pass() {
        let r = run_suite(&[MmsProblem::Gradient], &[8]).unwrap();
        assert!(r.cases[0].ratios().is_empty());
        assert!(!r.passed());
    }

    #[test]
    fn report_lists_every_problem() {
        let r = run_suite(&[MmsProblem::PoissonRobin, MmsProblem::Laplacian], &[8, 16]).unwrap();
        let text = r.to_string();
        assert!(text.contains("poisson_robin") && text.contains("laplacian"));
        assert!(r.case(MmsProblem::Laplacian).is_some());
        assert!(r.case(MmsProblem::Gradient).is_none());
    }
}
