//! Cut-off, mollifier, truncated tendencies and stopping-time monitors.
//!
//! The truncated system multiplies fluid convection and ionic advection by
//! `Φ_{R_u}(||grad u||)`, and ionic drift and the Coulomb force by
//! `Φ_{R_psi}(||grad psi||_{W^{1,3.5}})`. Diffusion and viscosity are never
//! truncated.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{derivative_fields, grad_psi_w13p, DiagnosticsRecord, W13P_EXPONENT};
use crate::fluid::{advect, coulomb_force, grad_norm_sq, viscous_term};
use crate::grid::divergence;
use crate::ions::{flux_parts, Prefactors};
use crate::poisson::PoissonSolver;
use crate::state::SystemState;
use crate::{Error, Result, ScalarField, VectorField};

/// `exp(-1/t)` for `t > 0`, else 0.
fn smooth_step_half(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth cut-off: exactly 1 on `[0, R]`, exactly 0 on `[2R, inf)`, and
/// `psi(1 - t) / (psi(1 - t) + psi(t))` with `t = x/R - 1` in between.
pub fn cutoff_phi(x: f64, r: f64) -> f64 {
    if x <= r {
        return 1.0;
    }
    if x >= 2.0 * r {
        return 0.0;
    }
    let t = x / r - 1.0;
    let a = smooth_step_half(1.0 - t);
    let b = smooth_step_half(t);
    a / (a + b)
}

/// Truncation radii; `None` leaves the corresponding terms untouched.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truncation {
    #[serde(rename = "R_u", default, skip_serializing_if = "Option::is_none")]
    pub r_u: Option<f64>,
    #[serde(rename = "R_psi", default, skip_serializing_if = "Option::is_none")]
    pub r_psi: Option<f64>,
}

impl Truncation {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("R_u", self.r_u), ("R_psi", self.r_psi)] {
            if let Some(r) = r {
                if !(r > 0.0) || r.is_nan() {
                    return Err(Error::Config(format!("truncation.{name} must be > 0, got {r}")));
                }
            }
        }
        Ok(())
    }

    /// Prefactors for the given gradient norms.
    pub fn prefactors_for(&self, grad_u: f64, grad_psi: f64) -> Prefactors {
        Prefactors {
            advection: self.r_u.map_or(1.0, |r| cutoff_phi(grad_u, r)),
            drift: self.r_psi.map_or(1.0, |r| cutoff_phi(grad_psi, r)),
        }
    }

    /// Prefactors at `state`; norms are only evaluated for active radii.
    pub fn prefactors(&self, state: &SystemState) -> Prefactors {
        let gu = if self.r_u.is_some() {
            grad_norm_sq(&state.fluid.u).sqrt()
        } else {
            0.0
        };
        let gp = if self.r_psi.is_some() {
            grad_psi_w13p(&state.electro.psi)
        } else {
            0.0
        };
        self.prefactors_for(gu, gp)
    }
}

/// Index reflected into `0..n` by mirror extension with period `2n`.
#[inline]
fn reflect(x: isize, n: usize) -> usize {
    let m = x.rem_euclid(2 * n as isize) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

fn gaussian_weights(eps: f64, h: f64) -> Vec<f64> {
    let r = (4.0 * eps / h).ceil() as usize;
    let mut w: Vec<f64> = (0..=r)
        .map(|k| (-0.5 * (k as f64 * h / eps).powi(2)).exp())
        .collect();
    let total = w[0] + 2.0 * w[1..].iter().sum::<f64>();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Convolution with a normalized discrete Gaussian of standard deviation
/// `eps`, mirror-reflected at the walls.
///
/// The resulting matrix is symmetric with unit row sums, so constants and
/// total mass are preserved and the discrete `L²` norm does not grow.
pub fn mollify(f: &ScalarField, eps: f64) -> Result<ScalarField> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("mollifier width must be > 0, got {eps}")));
    }
    let g = *f.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let wx = gaussian_weights(eps, g.hx());
    let wy = gaussian_weights(eps, g.hy());
    let pass = |src: &[f64], w: &[f64], along_x: bool| {
        let mut out = vec![0.0; src.len()];
        let n = if along_x { nx } else { ny };
        for j in 0..ny {
            for i in 0..nx {
                let at = |k: isize| {
                    let m = reflect(k, n);
                    if along_x {
                        src[g.cell(m, j)]
                    } else {
                        src[g.cell(i, m)]
                    }
                };
                let c = if along_x { i } else { j } as isize;
                let mut s = w[0] * at(c);
                for (k, wk) in w.iter().enumerate().skip(1) {
                    s += wk * (at(c - k as isize) + at(c + k as isize));
                }
                out[g.cell(i, j)] = s;
            }
        }
        out
    };
    let tmp = pass(f.values(), &wx, true);
    ScalarField::new(g, pass(&tmp, &wy, false))
}

/// Time derivatives of one species, split by physical term.
#[derive(Clone, Debug)]
pub struct IonTendency {
    pub advection: ScalarField,
    pub diffusion: ScalarField,
    pub drift: ScalarField,
}

impl IonTendency {
    pub fn total(&self) -> ScalarField {
        let t = self.advection.add_scaled(1.0, &self.diffusion).expect("same grid");
        t.add_scaled(1.0, &self.drift).expect("same grid")
    }
}

/// Deterministic right-hand side of the (possibly truncated) system.
#[derive(Clone, Debug)]
pub struct Tendencies {
    pub prefactors: Prefactors,
    /// `-Φ_u (u . grad) u`
    pub convection: VectorField,
    /// `-Φ_psi kappa rho grad psi`
    pub coulomb: VectorField,
    /// `mu Δu`
    pub viscous: VectorField,
    pub ions: Vec<IonTendency>,
}

/// Tendencies with explicit prefactors.
pub fn rhs_with(state: &SystemState, pref: Prefactors) -> Result<Tendencies> {
    let u = &state.fluid.u;
    let psi = &state.electro.psi;
    let mut ions = Vec::with_capacity(state.ions.species.len());
    for sp in &state.ions.species {
        let parts = flux_parts(sp, u, psi, pref)?;
        ions.push(IonTendency {
            advection: divergence(&parts.advection).scaled(-1.0),
            diffusion: divergence(&parts.diffusion).scaled(-1.0),
            drift: divergence(&parts.drift).scaled(-1.0),
        });
    }
    let coulomb = coulomb_force(&state.electro.rho, psi, state.fluid.kappa)?;
    Ok(Tendencies {
        prefactors: pref,
        convection: advect(u).scaled(-pref.advection),
        coulomb: if pref.drift == 1.0 { coulomb } else { coulomb.scaled(pref.drift) },
        viscous: viscous_term(u, state.fluid.mu),
        ions,
    })
}

/// Tendencies of the cut-off system with radii `r_u` and `r_psi`.
pub fn truncated_rhs(state: &SystemState, r_u: Option<f64>, r_psi: Option<f64>) -> Result<Tendencies> {
    let t = Truncation { r_u, r_psi };
    t.validate()?;
    rhs_with(state, t.prefactors(state))
}

/// Thresholds of the monitored functionals; `None` never triggers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h1_u: Option<f64>,
    /// Applied to the largest species norm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h1_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_psi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u4_running: Option<f64>,
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for v in [self.h1_u, self.h1_c, self.grad_u, self.grad_psi, self.u4_running]
            .into_iter()
            .flatten()
        {
            if v.is_nan() || v < 0.0 {
                return Err(Error::Config(format!("monitor thresholds must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Every threshold as `scale` times the record's value.
    pub fn scaled_from(rec: &DiagnosticsRecord, scale: f64) -> Self {
        let max_c = rec.h1_c.iter().fold(0.0f64, |m, &v| m.max(v));
        Self {
            h1_u: Some(scale * rec.h1_u),
            h1_c: Some(scale * max_c),
            grad_u: Some(scale * rec.grad_u_l2),
            grad_psi: Some(scale * rec.grad_psi_w13p),
            u4_running: None,
        }
    }
}

/// First step index at which each functional exceeded its threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Hits {
    pub h1_u: Option<usize>,
    pub h1_c: Option<usize>,
    pub grad_u: Option<usize>,
    pub grad_psi: Option<usize>,
    pub u4_running: Option<usize>,
}

impl Hits {
    /// Earliest hit of any functional.
    pub fn first(&self) -> Option<usize> {
        [self.h1_u, self.h1_c, self.grad_u, self.grad_psi, self.u4_running]
            .into_iter()
            .flatten()
            .min()
    }
}

/// Streaming form of [`stopping_monitor`].
#[derive(Clone, Debug)]
pub struct StoppingMonitor {
    thresholds: Thresholds,
    hits: Hits,
    step: usize,
}

impl StoppingMonitor {
    pub fn new(thresholds: Thresholds) -> Self {
        Self {
            thresholds,
            hits: Hits::default(),
            step: 0,
        }
    }

    /// Feeds the next record; returns true if any threshold is exceeded by it.
    pub fn observe(&mut self, rec: &DiagnosticsRecord) -> bool {
        let max_c = rec.h1_c.iter().fold(0.0f64, |m, &v| m.max(v));
        let step = self.step;
        self.step += 1;
        let th = self.thresholds;
        let mut hit_now = false;
        let mut check = |slot: &mut Option<usize>, th: Option<f64>, v: f64| {
            if let Some(th) = th {
                // NaN counts as exceeding every threshold
                if !(v <= th) {
                    hit_now = true;
                    slot.get_or_insert(step);
                }
            }
        };
        check(&mut self.hits.h1_u, th.h1_u, rec.h1_u);
        check(&mut self.hits.h1_c, th.h1_c, max_c);
        check(&mut self.hits.grad_u, th.grad_u, rec.grad_u_l2);
        check(&mut self.hits.grad_psi, th.grad_psi, rec.grad_psi_w13p);
        check(&mut self.hits.u4_running, th.u4_running, rec.u4_running);
        hit_now
    }

    pub fn hits(&self) -> Hits {
        self.hits
    }
}

/// First index at which each monitored functional exceeds its threshold.
pub fn stopping_monitor(records: &[DiagnosticsRecord], thresholds: &Thresholds) -> Hits {
    let mut m = StoppingMonitor::new(*thresholds);
    for r in records {
        m.observe(r);
    }
    m.hits()
}

/// First index with `value > threshold`.
pub fn first_exceedance(values: impl IntoIterator<Item = f64>, threshold: f64) -> Option<usize> {
    values.into_iter().position(|v| !(v <= threshold))
}

/// Constants of `I2 <= c_grid I1 + offset`, where
/// `I1 = max(||u||_H1, max_i ||c_i||_H1)` and
/// `I2 = ||grad u|| + ||grad psi||_{W^{1,3.5}}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormEquivalence {
    /// Measured bound of `rho -> ||grad psi||_{W^{1,3.5}}` from `L²`.
    pub k_psi: f64,
    pub c_grid: f64,
    /// `||grad psi||_{W^{1,3.5}}` of the potential driven by `eta` alone.
    pub offset: f64,
}

/// Multiplier applied to the power-iteration estimate, which converges
/// from below.
const MEASUREMENT_MARGIN: f64 = 1.01;

type CacheKey = [u64; 5];

fn cache() -> &'static Mutex<HashMap<CacheKey, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Sparse rows of the map `psi -> (psi_x, psi_y, psi_xx, psi_yy, sqrt2 psi_xy)`,
/// stored column-wise as `(row, value)` pairs.
fn derivative_columns(g: crate::Grid) -> Vec<Vec<(usize, f64)>> {
    let n = g.n_cells();
    let mut cols = Vec::with_capacity(n);
    let mut e = ScalarField::zeros(g);
    for c in 0..n {
        e.values_mut()[c] = 1.0;
        let parts = derivative_fields(&e);
        let mut col = Vec::new();
        for (p, f) in parts.iter().enumerate() {
            let s = if p == 4 { std::f64::consts::SQRT_2 } else { 1.0 };
            for (k, &v) in f.values().iter().enumerate() {
                if v != 0.0 {
                    col.push((p * n + k, s * v));
                }
            }
        }
        cols.push(col);
        e.values_mut()[c] = 0.0;
    }
    cols
}

/// Spectral norm of `rho -> D A^{-1} rho` on the admissible charges, by
/// power iteration.
fn solve_derivative_norm(solver: &PoissonSolver) -> Result<f64> {
    let g = *solver.grid();
    let n = g.n_cells();
    let cols = derivative_columns(g);
    let singular = solver.varsigma() == 0.0;
    let center = |v: &mut [f64]| {
        if singular {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= m);
        }
    };
    let normalize = |v: &mut [f64]| {
        let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= s);
    };
    // deterministic start with every mode present
    let mut v: Vec<f64> = (0..n).map(|k| 1.0 + ((k * 7919) % 97) as f64 / 97.0).collect();
    center(&mut v);
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let psi = solver.solve_homogeneous(&ScalarField::new(g, v.clone())?, None)?;
        let mut d = vec![0.0; 5 * n];
        for (c, col) in cols.iter().enumerate() {
            let x = psi.values()[c];
            for &(r, w) in col {
                d[r] += w * x;
            }
        }
        let mut back: Vec<f64> = cols.iter().map(|col| col.iter().map(|&(r, w)| w * d[r]).sum()).collect();
        center(&mut back);
        let w = solver.solve_homogeneous(&ScalarField::new(g, back)?, None)?;
        let mut next = w.into_values();
        center(&mut next);
        let new_lambda: f64 = next.iter().zip(&v).map(|(a, b)| a * b).sum();
        normalize(&mut next);
        v = next;
        let done = (new_lambda - lambda).abs() <= 1e-10 * new_lambda;
        lambda = new_lambda;
        if done {
            break;
        }
    }
    Ok(lambda.sqrt())
}

impl NormEquivalence {
    /// Measures the constants for `solver` and species valences `z`; the
    /// operator bound is cached per grid and capacitance.
    pub fn measure(solver: &PoissonSolver, z: &[f64]) -> Result<Self> {
        let g = *solver.grid();
        let key = [
            g.nx() as u64,
            g.ny() as u64,
            g.lx().to_bits(),
            g.ly().to_bits(),
            solver.varsigma().to_bits(),
        ];
        let cached = cache().lock().expect("cache lock").get(&key).copied();
        let k_psi = match cached {
            Some(k) => k,
            None => {
                // ||.||_{l^3.5} <= ||.||_{l^2} on the pointwise norms, then area weights
                let a = g.cell_area();
                let k = MEASUREMENT_MARGIN
                    * a.powf(1.0 / W13P_EXPONENT - 0.5)
                    * solve_derivative_norm(solver)?;
                cache().lock().expect("cache lock").insert(key, k);
                k
            }
        };
        let rho_eta = if solver.varsigma() == 0.0 {
            -solver.eta().integral(&g) / g.area()
        } else {
            0.0
        };
        let psi_eta = solver.solve(&ScalarField::constant(g, rho_eta), None)?;
        let offset = MEASUREMENT_MARGIN * grad_psi_w13p(&psi_eta);
        let zsum: f64 = z.iter().map(|v| v.abs()).sum();
        Ok(Self {
            k_psi,
            c_grid: 1.0 + k_psi * zsum,
            offset,
        })
    }

    /// Threshold on `I2` paired with the threshold `m` on `I1`.
    pub fn paired_threshold(&self, m: f64) -> f64 {
        self.c_grid * m + self.offset
    }

    /// Whether the first `I2 > paired_threshold(m)` is preceded by, or
    /// coincides with, the first `I1 > m`.
    pub fn coincidence_holds(&self, records: &[DiagnosticsRecord], m: f64) -> bool {
        let hit2 = first_exceedance(records.iter().map(|r| r.gradient_indicator()), self.paired_threshold(m));
        let hit1 = first_exceedance(records.iter().map(|r| r.h1_indicator()), m);
        match hit2 {
            None => true,
            Some(s2) => hit1.is_some_and(|s1| s1 <= s2),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{record, StepTerms};
    use crate::fluid::FluidState;
    use crate::grid::{BoundaryData, Grid};
    use crate::ions::{IonSpecies, IonState};
    use crate::poisson::ElectroState;
    use std::f64::consts::PI;

    fn state(g: Grid, amp: f64) -> SystemState {
        let c1 = ScalarField::from_fn(g, |x, y| 1.0 + 0.5 * (3.0 * x + y).sin());
        let c2 = ScalarField::from_fn(g, |x, y| 1.0 + 0.4 * (2.0 * y - x).cos());
        let ions = IonState::new(
            vec![IonSpecies::new(1.0, 1.0, c1).unwrap(), IonSpecies::new(-1.0, 1.0, c2).unwrap()],
            1e-12,
        )
        .unwrap();
        let rho = ions.charge_density().scaled(amp);
        let eta = BoundaryData::zeros(&g);
        let psi = PoissonSolver::new(g, 1.0, eta.clone(), 1e-12).unwrap().solve(&rho, None).unwrap();
        let u = VectorField::from_streamfunction(g, |x, y| {
            amp * (PI * x).sin().powi(2) * (PI * y).sin().powi(2)
        });
        SystemState::new(
            ions,
            FluidState::new(u, 1.0, 1.0).unwrap(),
            ElectroState {
                psi,
                rho,
                eta,
                varsigma: 1.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn cutoff_is_exact_outside_the_transition() {
        for r in [0.1, 1.0, 7.5] {
            assert_eq!(cutoff_phi(0.0, r), 1.0);
            assert_eq!(cutoff_phi(r, r), 1.0);
            assert_eq!(cutoff_phi(2.0 * r, r), 0.0);
            assert_eq!(cutoff_phi(3.0 * r, r), 0.0);
            let mid = cutoff_phi(1.5 * r, r);
            assert!(mid > 0.0 && mid < 1.0);
            assert!((mid - 0.5).abs() < 1e-15);
            let mut prev = 1.0;
            for k in 0..=1000 {
                let v = cutoff_phi(3.0 * r * k as f64 / 1000.0, r);
                assert!((0.0..=1.0).contains(&v) && v <= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn mollifier_preserves_constants_and_mass() {
        let g = Grid::new(16, 12, 1.0, 0.75).unwrap();
        let c = mollify(&ScalarField::constant(g, 3.0), 0.1).unwrap();
        assert!(c.values().iter().all(|v| (v - 3.0).abs() < 1e-14));
        let f = ScalarField::from_fn(g, |x, y| (7.0 * x).sin() + y * y + (x > 0.5) as u8 as f64);
        for eps in [0.01, 0.1, 0.5, 3.0] {
            let m = mollify(&f, eps).unwrap();
            assert!((m.integral() - f.integral()).abs() <= 1e-12 * f.integral().abs());
            assert!(m.norm_l2() <= f.norm_l2() * (1.0 + 1e-12));
        }
        assert!(mollify(&f, 0.0).is_err());
    }

    #[test]
    fn mollifier_converges_as_eps_shrinks() {
        let g = Grid::unit(32).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (2.0 * PI * x).cos() * (PI * y).sin());
        let err = |eps: f64| mollify(&f, eps).unwrap().add_scaled(-1.0, &f).unwrap().norm_l2();
        let h = g.hx();
        let small: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|s| err(s * h)).collect();
        assert!(small.windows(2).all(|w| w[1] <= w[0]));
        let wide: Vec<f64> = [4.0, 2.0, 1.0, 0.5].iter().map(|s| err(s * h)).collect();
        assert!(wide.windows(2).all(|w| w[1] < w[0]), "{wide:?}");
    }

    #[test]
    fn mollifier_matrix_is_symmetric() {
        let g = Grid::unit(6).unwrap();
        let n = g.n_cells();
        let col = |k: usize| {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            mollify(&ScalarField::new(g, e).unwrap(), 0.3).unwrap().into_values()
        };
        let m: Vec<Vec<f64>> = (0..n).map(col).collect();
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((v - m[j][i]).abs() < 1e-15);
            }
        }
    }

    fn assert_close(a: &[f64], b: &[f64], s: f64) {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for (x, y) in a.iter().zip(b) {
            assert!((x - s * y).abs() <= 1e-13 * scale, "{x} vs {s} * {y}");
        }
    }

    #[test]
    fn untruncated_regime_is_bitwise_identical() {
        let st = state(Grid::unit(12).unwrap(), 1.0);
        let full = rhs_with(&st, Prefactors::default()).unwrap();
        let t = truncated_rhs(&st, Some(1e6), Some(1e6)).unwrap();
        assert_eq!(t.prefactors, Prefactors::default());
        assert_eq!(t.convection, full.convection);
        assert_eq!(t.coulomb, full.coulomb);
        for (a, b) in t.ions.iter().zip(&full.ions) {
            assert_eq!(a.total(), b.total());
        }
    }

    #[test]
    fn fully_truncated_regime_keeps_only_dissipative_terms() {
        let st = state(Grid::unit(12).unwrap(), 50.0);
        let t = truncated_rhs(&st, Some(1e-6), Some(1e-6)).unwrap();
        assert_eq!(t.prefactors, Prefactors { advection: 0.0, drift: 0.0 });
        assert_eq!(t.convection.max_abs(), 0.0);
        assert_eq!(t.coulomb.max_abs(), 0.0);
        for ion in &t.ions {
            assert_eq!(ion.advection.max_abs(), 0.0);
            assert_eq!(ion.drift.max_abs(), 0.0);
            assert!(ion.diffusion.max_abs() > 0.0);
        }
        assert!(t.viscous.max_abs() > 0.0);
    }

    #[test]
    fn intermediate_regime_factorizes() {
        let st = state(Grid::unit(12).unwrap(), 1.0);
        let gu = grad_norm_sq(&st.fluid.u).sqrt();
        let gp = grad_psi_w13p(&st.electro.psi);
        let t = truncated_rhs(&st, Some(gu / 1.3), Some(gp / 1.6)).unwrap();
        let (pu, pp) = (t.prefactors.advection, t.prefactors.drift);
        assert!(pu > 0.0 && pu < 1.0 && pp > 0.0 && pp < 1.0);
        let full = rhs_with(&st, Prefactors::default()).unwrap();
        assert_close(&t.convection.ux, &full.convection.ux, pu);
        assert_close(&t.convection.uy, &full.convection.uy, pu);
        assert_close(&t.coulomb.ux, &full.coulomb.ux, pp);
        assert_close(&t.coulomb.uy, &full.coulomb.uy, pp);
        assert_eq!(t.viscous, full.viscous);
        for (a, b) in t.ions.iter().zip(&full.ions) {
            assert_close(a.advection.values(), b.advection.values(), pu);
            assert_close(a.drift.values(), b.drift.values(), pp);
            assert_eq!(a.diffusion, b.diffusion);
        }
    }

    fn synthetic(values: &[(f64, f64)]) -> Vec<DiagnosticsRecord> {
        let st = state(Grid::unit(8).unwrap(), 1.0);
        let base = record(&st, 0.0, StepTerms::default(), 1e-12).unwrap();
        values
            .iter()
            .map(|&(h1u, gu)| DiagnosticsRecord {
                h1_u: h1u,
                grad_u_l2: gu,
                h1_c: vec![0.0, 0.0],
                grad_psi_w13p: 0.0,
                ..base.clone()
            })
            .collect()
    }

    #[test]
    fn monitor_examples() {
        let recs = synthetic(&[(1.0, 0.5); 5]);
        assert_eq!(stopping_monitor(&recs, &Thresholds::default()), Hits::default());
        let inf = Thresholds {
            h1_u: Some(f64::INFINITY),
            h1_c: Some(f64::INFINITY),
            grad_u: Some(f64::INFINITY),
            grad_psi: Some(f64::INFINITY),
            u4_running: Some(f64::INFINITY),
        };
        assert_eq!(stopping_monitor(&recs, &inf).first(), None);
        let zero = Thresholds {
            h1_u: Some(0.0),
            ..Default::default()
        };
        assert_eq!(stopping_monitor(&recs, &zero).h1_u, Some(0));

        let ramp: Vec<(f64, f64)> = (0..40).map(|k| (k as f64 * 0.1, 0.0)).collect();
        let hits = stopping_monitor(
            &synthetic(&ramp),
            &Thresholds {
                h1_u: Some(1.65),
                ..Default::default()
            },
        );
        assert_eq!(hits.h1_u, Some(17));
        assert_eq!(hits.first(), Some(17));
    }

    #[test]
    fn measured_equivalence_bounds_random_states() {
        let g = Grid::unit(12).unwrap();
        let solver = PoissonSolver::new(g, 1.0, BoundaryData::constant(&g, 0.2), 1e-12).unwrap();
        let eq = NormEquivalence::measure(&solver, &[1.0, -1.0]).unwrap();
        assert!(eq.c_grid > 1.0 && eq.offset > 0.0);
        for seed in 0..20u32 {
            let f = seed as f64;
            let c1 = ScalarField::from_fn(g, |x, y| (1.0 + (f * x + 3.0 * y).sin()).powi(2) * (1.0 + f));
            let c2 = ScalarField::from_fn(g, |x, y| (x * f).cos().abs() + y);
            let rho = c1.add_scaled(-1.0, &c2).unwrap();
            let psi = solver.solve(&rho, None).unwrap();
            let h1 = crate::diagnostics::h1_norm(&c1).max(crate::diagnostics::h1_norm(&c2));
            assert!(grad_psi_w13p(&psi) <= eq.c_grid * h1 + eq.offset);
        }
        // cached second call agrees
        assert_eq!(NormEquivalence::measure(&solver, &[1.0, -1.0]).unwrap(), eq);
    }

    #[test]
    fn neumann_equivalence_is_finite() {
        let g = Grid::unit(8).unwrap();
        let solver = PoissonSolver::new(g, 0.0, BoundaryData::zeros(&g), 1e-12).unwrap();
        let eq = NormEquivalence::measure(&solver, &[2.0, -1.0]).unwrap();
        assert!(eq.k_psi.is_finite() && eq.k_psi > 0.0);
        assert!(eq.offset.abs() < 1e-10);
    }

    #[test]
    fn coincidence_in_the_implied_direction() {
        let eq = NormEquivalence {
            k_psi: 1.0,
            c_grid: 2.0,
            offset: 0.5,
        };
        // I1 crosses 1 at step 2, I2 crosses 2.5 at step 3
        let recs = synthetic(&[(0.5, 0.5), (0.9, 1.0), (1.2, 2.0), (1.5, 2.6)]);
        assert!(eq.coincidence_holds(&recs, 1.0));
        // I2 crossing with I1 still below violates the implication
        let bad = synthetic(&[(0.5, 3.0)]);
        assert!(!eq.coincidence_holds(&bad, 1.0));
    }
}
