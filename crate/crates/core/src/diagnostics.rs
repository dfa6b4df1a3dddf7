//! Per-step functionals: free energy, dissipation, norms, blow-up
//! indicators and the pathwise energy balance.
//!
//! The discrete free energy is
//! `½||u||² + kappa (sum_i ∫c_i log(c_i + delta) + ½||grad psi||² + (varsigma/2)||psi||²_wall)`.
//! The electric part uses the same face gradient and Robin closure as the
//! potential solve, so its time derivative is exactly `<psi, d rho/dt>`.
//! The ionic dissipation weights each face by the Scharfetter–Gummel
//! mobility, which makes it the exact rate at which the transport scheme
//! releases Gibbs plus electric energy.

use std::io::Write;

use crate::fluid::{grad_norm_sq, kinetic_energy};
use crate::grid::{gradient, gradient_interior, BoundaryRule, ScalarField};
use crate::ions::{bernoulli, entropy, total_mass};
use crate::state::SystemState;
use crate::{Error, Result};

/// Exponents reported by [`lj_norms`] in every record.
pub const LJ_EXPONENTS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

/// Integrability exponent of the potential indicator (`3+` with `delta = 0.5`).
pub const W13P_EXPONENT: f64 = 3.5;

/// One row of the diagnostics trajectory. Field order is the CSV order.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub kinetic: f64,
    pub gibbs: f64,
    pub electric: f64,
    pub boundary_energy: f64,
    pub dissipation: f64,
    pub ito_half_hs: f64,
    pub masses: Vec<f64>,
    pub min_c: Vec<f64>,
    /// `lj_norms[i][k]` is `||c_i||_{L^j}` for `j = LJ_EXPONENTS[k]`.
    pub lj_norms: Vec<[f64; 4]>,
    pub grad_u_l2: f64,
    pub grad_psi_w13p: f64,
    pub h1_u: f64,
    pub h1_c: Vec<f64>,
    pub u4_running: f64,
    /// `<f(u_n, grad psi_n) dW_n, u_n>` of the step leaving this record.
    pub noise_work: f64,
}

impl DiagnosticsRecord {
    /// `kinetic + kappa (gibbs + electric + boundary_energy)`.
    pub fn free_energy(&self, kappa: f64) -> f64 {
        self.kinetic + kappa * (self.gibbs + self.electric + self.boundary_energy)
    }

    /// `max(||u||_H1, max_i ||c_i||_H1)`
    pub fn h1_indicator(&self) -> f64 {
        self.h1_c.iter().fold(self.h1_u, |m, &v| m.max(v))
    }

    /// `||grad u|| + ||grad psi||_{W^{1,3.5}}`
    pub fn gradient_indicator(&self) -> f64 {
        self.grad_u_l2 + self.grad_psi_w13p
    }
}

/// Step-dependent terms the time loop supplies to a record.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepTerms {
    pub ito_half_hs: f64,
    pub noise_work: f64,
    pub u4_running: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeEnergy {
    pub kinetic: f64,
    pub gibbs: f64,
    pub electric: f64,
    pub boundary: f64,
    pub total: f64,
}

/// `½||grad psi||²` over all faces and `(varsigma/2)||psi||²` on the walls.
pub fn electric_energy(psi: &ScalarField, bc: &BoundaryRule) -> Result<(f64, f64)> {
    let e = 0.5 * gradient(psi, bc)?.norm_sq();
    let varsigma = match bc {
        BoundaryRule::Robin { varsigma, .. } => *varsigma,
        _ => 0.0,
    };
    let mut b = 0.0;
    if varsigma != 0.0 {
        bc.for_each_face(psi, |v, _, len| b += v * v * len);
    }
    Ok((e, 0.5 * varsigma * b))
}

pub fn free_energy(state: &SystemState, delta: f64) -> Result<FreeEnergy> {
    let kinetic = kinetic_energy(&state.fluid.u);
    let mut gibbs = 0.0;
    for s in &state.ions.species {
        gibbs += entropy(&s.c, delta)?;
    }
    let (electric, boundary) = electric_energy(&state.electro.psi, &state.electro.boundary_rule())?;
    Ok(FreeEnergy {
        kinetic,
        gibbs,
        electric,
        boundary,
        total: kinetic + state.fluid.kappa * (gibbs + electric + boundary),
    })
}

/// Logarithmic mean, zero when either argument is zero.
fn log_mean(x: f64, y: f64) -> f64 {
    if x <= 0.0 || y <= 0.0 {
        return 0.0;
    }
    let r = y / x;
    if (r - 1.0).abs() < 1e-6 {
        // series of (r - 1) / ln r around r = 1
        let e = r - 1.0;
        x * (1.0 + e / 2.0 - e * e / 12.0)
    } else {
        (y - x) / r.ln()
    }
}

/// `sum_faces a w |Δθ/h|² hx hy` with `θ = log(c + delta) + z psi` and the
/// Scharfetter–Gummel face mobility `w`.
pub fn ionic_dissipation(z: f64, a: f64, c: &ScalarField, psi: &ScalarField, delta: f64) -> Result<f64> {
    let g = *c.grid();
    g.check_same(psi.grid())?;
    if c.min() < 0.0 {
        return Err(Error::Domain("dissipation needs non-negative concentrations".into()));
    }
    let theta: Vec<f64> = c
        .values()
        .iter()
        .zip(psi.values())
        .map(|(cv, p)| (cv + delta).ln() + z * p)
        .collect();
    let (cv, pv) = (c.values(), psi.values());
    let face = |l: usize, r: usize, h: f64| {
        let d = z * (pv[r] - pv[l]);
        let bd = bernoulli(d);
        // B(-d) = B(d) + d
        let w = log_mean(bd * cv[l], (bd + d) * cv[r]);
        a * w * ((theta[r] - theta[l]) / h).powi(2)
    };
    let nx = g.nx();
    let mut s = 0.0;
    for j in 0..g.ny() {
        for i in 1..nx {
            s += face(j * nx + i - 1, j * nx + i, g.hx());
        }
    }
    for j in 1..g.ny() {
        for i in 0..nx {
            s += face((j - 1) * nx + i, j * nx + i, g.hy());
        }
    }
    Ok(s * g.cell_area())
}

/// `kappa sum_i a_i ||sqrt(c_i) grad θ_i||² + mu ||grad u||²`
pub fn dissipation(state: &SystemState, delta: f64) -> Result<f64> {
    let mut ionic = 0.0;
    for s in &state.ions.species {
        ionic += ionic_dissipation(s.z, s.a, &s.c, &state.electro.psi, delta)?;
    }
    Ok(state.fluid.kappa * ionic + state.fluid.mu * grad_norm_sq(&state.fluid.u))
}

/// `(sum c^j hx hy)^(1/j)` for each `j`.
pub fn lj_norms(c: &ScalarField, js: &[f64]) -> Result<Vec<f64>> {
    if c.min() < 0.0 {
        return Err(Error::Domain("L^j norms need non-negative concentrations".into()));
    }
    let area = c.grid().cell_area();
    js.iter()
        .map(|&j| {
            if !(j >= 1.0) {
                return Err(Error::Domain(format!("exponent must be >= 1, got {j}")));
            }
            let s: f64 = if j.fract() == 0.0 && j <= 64.0 {
                let k = j as i32;
                c.values().iter().map(|v| v.powi(k)).sum()
            } else {
                c.values().iter().map(|v| v.powf(j)).sum()
            };
            Ok((s * area).powf(1.0 / j))
        })
        .collect()
}

/// First derivative along one axis at cell centres: centred inside,
/// second-order one-sided at the walls.
fn d1(f: &ScalarField, along_x: bool) -> ScalarField {
    let g = *f.grid();
    let (n, h) = if along_x { (g.nx(), g.hx()) } else { (g.ny(), g.hy()) };
    let at = |i: usize, j: usize, k: usize| if along_x { f.at(k, j) } else { f.at(i, k) };
    let mut out = vec![0.0; g.n_cells()];
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let k = if along_x { i } else { j };
            let v = if k == 0 {
                (-3.0 * at(i, j, 0) + 4.0 * at(i, j, 1) - at(i, j, 2)) / (2.0 * h)
            } else if k == n - 1 {
                (3.0 * at(i, j, n - 1) - 4.0 * at(i, j, n - 2) + at(i, j, n - 3)) / (2.0 * h)
            } else {
                (at(i, j, k + 1) - at(i, j, k - 1)) / (2.0 * h)
            };
            out[g.cell(i, j)] = v;
        }
    }
    ScalarField::new(g, out).expect("same grid")
}

/// Second derivative along one axis: centred inside, second-order one-sided
/// at the walls.
fn d2(f: &ScalarField, along_x: bool) -> ScalarField {
    let g = *f.grid();
    let (n, h) = if along_x { (g.nx(), g.hx()) } else { (g.ny(), g.hy()) };
    let at = |i: usize, j: usize, k: usize| if along_x { f.at(k, j) } else { f.at(i, k) };
    let mut out = vec![0.0; g.n_cells()];
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let k = if along_x { i } else { j };
            let v = if k == 0 {
                2.0 * at(i, j, 0) - 5.0 * at(i, j, 1) + 4.0 * at(i, j, 2) - at(i, j, 3)
            } else if k == n - 1 {
                2.0 * at(i, j, n - 1) - 5.0 * at(i, j, n - 2) + 4.0 * at(i, j, n - 3) - at(i, j, n - 4)
            } else {
                at(i, j, k + 1) - 2.0 * at(i, j, k) + at(i, j, k - 1)
            };
            out[g.cell(i, j)] = v / (h * h);
        }
    }
    ScalarField::new(g, out).expect("same grid")
}

/// Cell-centred `(psi_x, psi_y, psi_xx, psi_yy, psi_xy)`.
pub(crate) fn derivative_fields(psi: &ScalarField) -> [ScalarField; 5] {
    let (px, py) = (d1(psi, true), d1(psi, false));
    let pxy = d1(&px, false);
    [px, py, d2(psi, true), d2(psi, false), pxy]
}

/// `(||grad psi||_p^p + ||Hess psi||_p^p)^(1/p)` with `p = 3.5`, pointwise
/// Euclidean and Frobenius norms.
pub fn grad_psi_w13p(psi: &ScalarField) -> f64 {
    let p = W13P_EXPONENT;
    let [px, py, pxx, pyy, pxy] = derivative_fields(psi);
    let mut s = 0.0;
    for k in 0..psi.values().len() {
        let (a, b) = (px.values()[k], py.values()[k]);
        let (c, d, e) = (pxx.values()[k], pyy.values()[k], pxy.values()[k]);
        s += (a * a + b * b).powf(0.5 * p) + (c * c + d * d + 2.0 * e * e).powf(0.5 * p);
    }
    (s * psi.grid().cell_area()).powf(1.0 / p)
}

/// `sqrt(||c||² + ||grad c||²)` with the interior face gradient.
pub fn h1_norm(c: &ScalarField) -> f64 {
    (c.norm_l2().powi(2) + gradient_interior(c).norm_sq()).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlowupIndicators {
    pub grad_u_l2: f64,
    pub grad_psi_w13p: f64,
    pub h1_u: f64,
    pub max_h1_c: f64,
}

pub fn blowup_indicators(state: &SystemState) -> BlowupIndicators {
    let gu = grad_norm_sq(&state.fluid.u);
    BlowupIndicators {
        grad_u_l2: gu.sqrt(),
        grad_psi_w13p: grad_psi_w13p(&state.electro.psi),
        h1_u: (state.fluid.u.norm_sq() + gu).sqrt(),
        max_h1_c: state.ions.species.iter().map(|s| h1_norm(&s.c)).fold(0.0, f64::max),
    }
}

/// Builds the record of `state` at time `t`.
pub fn record(state: &SystemState, t: f64, terms: StepTerms, delta: f64) -> Result<DiagnosticsRecord> {
    let fe = free_energy(state, delta)?;
    let gu = grad_norm_sq(&state.fluid.u);
    let species = &state.ions.species;
    let mut lj = Vec::with_capacity(species.len());
    for s in species {
        let v = lj_norms(&s.c, &LJ_EXPONENTS)?;
        lj.push([v[0], v[1], v[2], v[3]]);
    }
    Ok(DiagnosticsRecord {
        t,
        kinetic: fe.kinetic,
        gibbs: fe.gibbs,
        electric: fe.electric,
        boundary_energy: fe.boundary,
        dissipation: dissipation(state, delta)?,
        ito_half_hs: terms.ito_half_hs,
        masses: species.iter().map(|s| total_mass(&s.c)).collect(),
        min_c: species.iter().map(|s| s.c.min()).collect(),
        lj_norms: lj,
        grad_u_l2: gu.sqrt(),
        grad_psi_w13p: grad_psi_w13p(&state.electro.psi),
        h1_u: (state.fluid.u.norm_sq() + gu).sqrt(),
        h1_c: species.iter().map(|s| h1_norm(&s.c)).collect(),
        u4_running: terms.u4_running,
        noise_work: terms.noise_work,
    })
}

/// `E(T) - E(0) + sum D_n dt - sum noise_work_n - sum ito_half_hs_n dt`
/// over the steps between the first and last record, left-point in time.
pub fn energy_balance_residual(traj: &[DiagnosticsRecord], noise_work: &[f64], kappa: f64) -> Result<f64> {
    let Some((first, last)) = traj.first().zip(traj.last()) else {
        return Err(Error::Domain("empty trajectory".into()));
    };
    let steps = traj.len() - 1;
    if noise_work.len() < steps {
        return Err(Error::Domain(format!(
            "{} noise-work entries for {steps} steps",
            noise_work.len()
        )));
    }
    if steps == 0 {
        return Ok(0.0);
    }
    let dt = traj[1].t - traj[0].t;
    for w in traj.windows(2) {
        let d = w[1].t - w[0].t;
        if (d - dt).abs() > 1e-9 * dt.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::Domain(format!("non-uniform time step: {d} vs {dt}")));
        }
    }
    let mut sum = 0.0;
    for (r, w) in traj[..steps].iter().zip(noise_work) {
        sum += (r.dissipation - r.ito_half_hs) * dt - w;
    }
    Ok(last.free_energy(kappa) - first.free_energy(kappa) + sum)
}

/// Largest `|z1²c1² - z2²c2² - rho (|z1|c1 + |z2|c2)| * |rho|` over cells,
/// written as `|rho (z1²c1² - z2²c2²) - rho² (|z1|c1 + |z2|c2)|`.
pub fn charge_identity_residual(c1: &ScalarField, c2: &ScalarField, z1: f64, z2: f64) -> Result<f64> {
    if !(z1 > 0.0 && z2 < 0.0) {
        return Err(Error::Domain(format!("need z1 > 0 > z2, got ({z1}, {z2})")));
    }
    c1.grid().check_same(c2.grid())?;
    Ok(c1
        .values()
        .iter()
        .zip(c2.values())
        .map(|(&a, &b)| {
            let rho = z1 * a + z2 * b;
            (rho * (z1 * z1 * a * a - z2 * z2 * b * b) - rho * rho * (z1.abs() * a + z2.abs() * b)).abs()
        })
        .fold(0.0, f64::max))
}

/// Magnitude of the terms in [`charge_identity_residual`]: `max (|z1|c1 + |z2|c2)³`.
pub fn charge_identity_scale(c1: &ScalarField, c2: &ScalarField, z1: f64, z2: f64) -> f64 {
    c1.values()
        .iter()
        .zip(c2.values())
        .map(|(&a, &b)| (z1.abs() * a + z2.abs() * b).powi(3))
        .fold(0.0, f64::max)
}

/// CSV header for `m` species, matching [`DiagnosticsRecord`] field order.
///
/// Units: `t` in time units; energies, dissipation-times-time and
/// `noise_work` in energy units; `dissipation` and `ito_half_hs` in energy
/// per time; masses in concentration times area; norms in the units of the
/// underlying field.
pub fn csv_header(m: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "t",
        "kinetic",
        "gibbs",
        "electric",
        "boundary_energy",
        "dissipation",
        "ito_half_hs",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((1..=m).map(|i| format!("mass_{i}")));
    h.extend((1..=m).map(|i| format!("min_c_{i}")));
    for i in 1..=m {
        for j in LJ_EXPONENTS {
            h.push(format!("l{j}_c_{i}"));
        }
    }
    h.extend(["grad_u_l2", "grad_psi_w13p", "h1_u"].iter().map(|s| s.to_string()));
    h.extend((1..=m).map(|i| format!("h1_c_{i}")));
    h.push("u4_running".into());
    h.push("noise_work".into());
    h
}

fn csv_row(r: &DiagnosticsRecord) -> Vec<String> {
    let mut v = vec![
        r.t,
        r.kinetic,
        r.gibbs,
        r.electric,
        r.boundary_energy,
        r.dissipation,
        r.ito_half_hs,
    ];
    v.extend(&r.masses);
    v.extend(&r.min_c);
    for l in &r.lj_norms {
        v.extend(l);
    }
    v.extend([r.grad_u_l2, r.grad_psi_w13p, r.h1_u]);
    v.extend(&r.h1_c);
    v.extend([r.u4_running, r.noise_work]);
    // Display prints the shortest string that parses back to the same bits.
    v.iter().map(|x| x.to_string()).collect()
}

/// Writes a header and one row per record.
pub fn write_csv<W: Write>(out: W, records: &[DiagnosticsRecord]) -> Result<()> {
    let m = records.first().map_or(0, |r| r.masses.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(m))?;
    for r in records {
        if r.masses.len() != m {
            return Err(Error::Structural("records with different species counts".into()));
        }
        w.write_record(csv_row(r))?;
    }
    w.flush()?;
    Ok(())
}
