//! Nernst–Planck transport in flux form with blocking walls.
//!
//! Each interior face carries `J = alpha * c_L - beta * c_R` with
//! non-negative `alpha`, `beta`: first-order upwinding of the fluid velocity
//! plus a Scharfetter–Gummel drift-diffusion flux. Wall faces carry no flux,
//! so total mass is conserved to rounding, and an explicit Euler step keeps
//! every concentration non-negative while `dt` stays below the per-cell
//! outflow bound returned by [`dt_max`].
//!
//! The truncation prefactors of the cut-off system enter linearly: the drift
//! part of the SG flux is `Phi * (SG(d) - diffusion)`, which reproduces SG at
//! `Phi = 1` and plain diffusion at `Phi = 0`.

use crate::grid::{divergence, Grid, ScalarField, VectorField};
use crate::{Error, Result};

/// Default regularisation of `log(c + delta)`.
pub const DEFAULT_ENTROPY_DELTA: f64 = 1e-12;

/// Safety factor applied to the positivity bound.
pub const POSITIVITY_SAFETY: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct IonSpecies {
    /// Valence.
    pub z: f64,
    /// Diffusivity, `> 0`.
    pub a: f64,
    pub c: ScalarField,
}

impl IonSpecies {
    pub fn new(z: f64, a: f64, c: ScalarField) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !z.is_finite() {
            return Err(Error::Domain(format!("invalid species z={z}, a={a}")));
        }
        if !c.is_finite() || c.min() < 0.0 {
            return Err(Error::Domain("concentration must be finite and non-negative".into()));
        }
        Ok(Self { z, a, c })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IonState {
    pub species: Vec<IonSpecies>,
    pub entropy_delta: f64,
}

impl IonState {
    pub fn new(species: Vec<IonSpecies>, entropy_delta: f64) -> Result<Self> {
        let Some(first) = species.first() else {
            return Err(Error::Domain("at least one ion species is required".into()));
        };
        let g = *first.c.grid();
        for s in &species {
            g.check_same(s.c.grid())?;
        }
        if !(entropy_delta > 0.0) {
            return Err(Error::Domain("entropy regularisation must be positive".into()));
        }
        Ok(Self {
            species,
            entropy_delta,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.species[0].c.grid()
    }

    /// `rho = sum z_i c_i`
    pub fn charge_density(&self) -> ScalarField {
        let g = *self.grid();
        let mut rho = vec![0.0; g.n_cells()];
        for s in &self.species {
            for (r, c) in rho.iter_mut().zip(s.c.values()) {
                *r += s.z * c;
            }
        }
        ScalarField::new(g, rho).expect("same grid")
    }

    pub fn masses(&self) -> Vec<f64> {
        self.species.iter().map(|s| total_mass(&s.c)).collect()
    }

    /// `(chi, rho)` with `chi = |z| sum c_i`, defined when all valences share
    /// one magnitude. With equal diffusivities the pair obeys its own closed
    /// transport system; no such structure is claimed otherwise.
    pub fn same_magnitude_pair(&self) -> Option<(ScalarField, ScalarField)> {
        let z = self.species[0].z.abs();
        if self.species.iter().any(|s| (s.z.abs() - z).abs() > 1e-14 * z.max(1.0)) {
            return None;
        }
        let g = *self.grid();
        let mut chi = vec![0.0; g.n_cells()];
        for s in &self.species {
            for (x, c) in chi.iter_mut().zip(s.c.values()) {
                *x += z * c;
            }
        }
        Some((ScalarField::new(g, chi).ok()?, self.charge_density()))
    }
}

/// Scalar prefactors of the cut-off system; `1` everywhere means untruncated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prefactors {
    /// Multiplies fluid advection of ions and momentum convection.
    pub advection: f64,
    /// Multiplies ionic drift and the Coulomb force.
    pub drift: f64,
}

impl Default for Prefactors {
    fn default() -> Self {
        Self {
            advection: 1.0,
            drift: 1.0,
        }
    }
}

/// Bernoulli function `x / (e^x - 1)`.
#[inline]
pub fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        x / x.exp_m1()
    }
}

/// Face coefficients `(alpha, beta)` of `J = alpha c_L - beta c_R`.
#[inline]
fn face_coefficients(u: f64, a_over_h: f64, d: f64, drift: f64) -> (f64, f64) {
    let bd = bernoulli(d);
    let alpha = u.max(0.0) + a_over_h * ((1.0 - drift) + drift * bd);
    // B(-d) = B(d) + d
    let beta = (-u).max(0.0) + a_over_h * ((1.0 - drift) + drift * (bd + d));
    (alpha, beta)
}

/// The three additive parts of an ionic face flux.
#[derive(Clone, Debug)]
pub struct FluxParts {
    pub advection: VectorField,
    pub diffusion: VectorField,
    pub drift: VectorField,
}

impl FluxParts {
    pub fn total(&self) -> VectorField {
        let mut t = self.advection.clone();
        t.add_scaled_mut(1.0, &self.diffusion).expect("same grid");
        t.add_scaled_mut(1.0, &self.drift).expect("same grid");
        t
    }
}

fn check_inputs(sp: &IonSpecies, u: &VectorField, psi: &ScalarField) -> Result<Grid> {
    let g = *sp.c.grid();
    g.check_same(u.grid())?;
    g.check_same(psi.grid())?;
    if !(sp.c.is_finite() && u.is_finite() && psi.is_finite()) {
        return Err(Error::Structural("non-finite transport input".into()));
    }
    Ok(g)
}

/// Visits every interior face as `(flux index, is_x, c_L, c_R, u, h, psi_R - psi_L)`.
fn for_each_interior_face(
    g: &Grid,
    c: &ScalarField,
    u: &VectorField,
    psi: &ScalarField,
    mut f: impl FnMut(usize, bool, f64, f64, f64, f64, f64),
) {
    for j in 0..g.ny() {
        for i in 1..g.nx() {
            let k = g.xface(i, j);
            f(k, true, c.at(i - 1, j), c.at(i, j), u.ux[k], g.hx(), psi.at(i, j) - psi.at(i - 1, j));
        }
    }
    for j in 1..g.ny() {
        for i in 0..g.nx() {
            let k = g.yface(i, j);
            f(k, false, c.at(i, j - 1), c.at(i, j), u.uy[k], g.hy(), psi.at(i, j) - psi.at(i, j - 1));
        }
    }
}

/// Upwind advective flux `u c` with `c` taken from the upstream cell.
pub fn advective_flux(c: &ScalarField, u: &VectorField, factor: f64) -> VectorField {
    let g = *c.grid();
    let mut out = VectorField::zeros(g);
    let zero = ScalarField::zeros(g);
    for_each_interior_face(&g, c, u, &zero, |k, is_x, cl, cr, uf, _, _| {
        let uf = factor * uf;
        let v = uf.max(0.0) * cl + uf.min(0.0) * cr;
        if is_x {
            out.ux[k] = v;
        } else {
            out.uy[k] = v;
        }
    });
    out
}

/// Advection, diffusion and (scaled) drift parts of the flux.
pub fn flux_parts(sp: &IonSpecies, u: &VectorField, psi: &ScalarField, pref: Prefactors) -> Result<FluxParts> {
    let g = check_inputs(sp, u, psi)?;
    let mut diffusion = VectorField::zeros(g);
    let mut drift = VectorField::zeros(g);
    for_each_interior_face(&g, &sp.c, u, psi, |k, is_x, cl, cr, _, h, dpsi| {
        let ah = sp.a / h;
        let d = sp.z * dpsi;
        let dif = ah * (cl - cr);
        let dr = pref.drift * ah * ((bernoulli(d) - 1.0) * cl - (bernoulli(-d) - 1.0) * cr);
        let (df, drf) = if is_x {
            (&mut diffusion.ux, &mut drift.ux)
        } else {
            (&mut diffusion.uy, &mut drift.uy)
        };
        df[k] = dif;
        drf[k] = dr;
    });
    Ok(FluxParts {
        advection: advective_flux(&sp.c, u, pref.advection),
        diffusion,
        drift,
    })
}

/// Face flux `b = u c - a (grad c + z c grad psi)`, zero on every wall face.
pub fn ion_flux(sp: &IonSpecies, u: &VectorField, psi: &ScalarField) -> Result<VectorField> {
    ion_flux_with(sp, u, psi, Prefactors::default())
}

pub fn ion_flux_with(sp: &IonSpecies, u: &VectorField, psi: &ScalarField, pref: Prefactors) -> Result<VectorField> {
    let g = check_inputs(sp, u, psi)?;
    let mut out = VectorField::zeros(g);
    for_each_interior_face(&g, &sp.c, u, psi, |k, is_x, cl, cr, uf, h, dpsi| {
        let (alpha, beta) = face_coefficients(pref.advection * uf, sp.a / h, sp.z * dpsi, pref.drift);
        let v = alpha * cl - beta * cr;
        if is_x {
            out.ux[k] = v;
        } else {
            out.uy[k] = v;
        }
    });
    Ok(out)
}

/// Largest step keeping every species non-negative, times
/// [`POSITIVITY_SAFETY`]. Infinite when nothing moves.
pub fn dt_max(state: &IonState, u: &VectorField, psi: &ScalarField, pref: Prefactors) -> Result<f64> {
    let g = *state.grid();
    let mut bound = f64::INFINITY;
    let mut rate = vec![0.0; g.n_cells()];
    for sp in &state.species {
        check_inputs(sp, u, psi)?;
        rate.iter_mut().for_each(|r| *r = 0.0);
        for j in 0..g.ny() {
            for i in 1..g.nx() {
                let k = g.xface(i, j);
                let (al, be) = face_coefficients(
                    pref.advection * u.ux[k],
                    sp.a / g.hx(),
                    sp.z * (psi.at(i, j) - psi.at(i - 1, j)),
                    pref.drift,
                );
                rate[g.cell(i - 1, j)] += al / g.hx();
                rate[g.cell(i, j)] += be / g.hx();
            }
        }
        for j in 1..g.ny() {
            for i in 0..g.nx() {
                let k = g.yface(i, j);
                let (al, be) = face_coefficients(
                    pref.advection * u.uy[k],
                    sp.a / g.hy(),
                    sp.z * (psi.at(i, j) - psi.at(i, j - 1)),
                    pref.drift,
                );
                rate[g.cell(i, j - 1)] += al / g.hy();
                rate[g.cell(i, j)] += be / g.hy();
            }
        }
        let max_rate = rate.iter().fold(0.0f64, |m, &r| m.max(r));
        if max_rate > 0.0 {
            bound = bound.min(POSITIVITY_SAFETY / max_rate);
        }
    }
    Ok(bound)
}

/// One explicit Euler step of `dc/dt + div b = 0` for every species.
pub fn step_ions(state: &IonState, u: &VectorField, psi: &ScalarField, dt: f64) -> Result<IonState> {
    step_ions_with(state, u, psi, dt, Prefactors::default())
}

pub fn step_ions_with(
    state: &IonState,
    u: &VectorField,
    psi: &ScalarField,
    dt: f64,
    pref: Prefactors,
) -> Result<IonState> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    let bound = dt_max(state, u, psi, pref)?;
    if dt > bound {
        return Err(Error::StepRejected { dt, dt_max: bound });
    }
    let mut out = state.clone();
    for (new, sp) in out.species.iter_mut().zip(&state.species) {
        let flux = ion_flux_with(sp, u, psi, pref)?;
        let div = divergence(&flux);
        for (c, d) in new.c.values_mut().iter_mut().zip(div.values()) {
            *c -= dt * d;
        }
        let m = new.c.min();
        if m < 0.0 || !m.is_finite() {
            return Err(Error::Invariant(format!(
                "concentration {m:e} after a step within the positivity bound"
            )));
        }
    }
    Ok(out)
}

/// `sum c * hx * hy`
pub fn total_mass(c: &ScalarField) -> f64 {
    c.integral()
}

/// `sum c log(c + delta) * hx * hy`
pub fn entropy(c: &ScalarField, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Domain("delta must be positive".into()));
    }
    let mut s = 0.0;
    for &v in c.values() {
        if v < 0.0 {
            return Err(Error::Domain(format!("negative concentration {v}")));
        }
        if v > 0.0 {
            s += v * (v + delta).ln();
        }
    }
    Ok(s * c.grid().cell_area())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{E, PI};

    fn grid() -> Grid {
        Grid::unit(16).unwrap()
    }

    fn smooth_psi(g: Grid) -> ScalarField {
        ScalarField::from_fn(g, |x, y| 2.0 * (PI * x).sin() * (2.0 * y).cos() + x)
    }

    fn vortex(g: Grid, amp: f64) -> VectorField {
        VectorField::from_streamfunction(g, |x, y| {
            amp * (PI * x).sin().powi(2) * (PI * y).sin().powi(2)
        })
    }

    #[test]
    fn bernoulli_limits() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert!((bernoulli(1e-9) - (1.0 - 5e-10)).abs() < 1e-15);
        assert!((bernoulli(-2.0) - 2.0f64.exp() * bernoulli(2.0)).abs() < 1e-14);
        assert_eq!(bernoulli(800.0), 0.0);
        assert!((bernoulli(-800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_state_has_zero_flux() {
        let g = grid();
        let sp = IonSpecies::new(1.0, 1.0, ScalarField::constant(g, 2.0)).unwrap();
        let j = ion_flux(&sp, &VectorField::zeros(g), &ScalarField::constant(g, 3.0)).unwrap();
        assert_eq!(j.max_abs(), 0.0);
    }

    #[test]
    fn boltzmann_profile_has_zero_flux() {
        let g = grid();
        let psi = smooth_psi(g);
        for z in [1.0, -1.0, 2.0] {
            let c = psi.map(|p| (-z * p).exp());
            let sp = IonSpecies::new(z, 0.7, c).unwrap();
            let j = ion_flux(&sp, &VectorField::zeros(g), &psi).unwrap();
            assert!(j.max_abs() <= 1e-10, "z={z}: {}", j.max_abs());
        }
    }

    #[test]
    fn advective_flux_is_upwind() {
        let g = grid();
        let c = ScalarField::from_fn(g, |x, _| if x < 0.5 { 3.0 } else { 1.0 });
        let mut u = VectorField::zeros(g);
        for j in 0..16 {
            for i in 1..16 {
                u.ux[g.xface(i, j)] = 1.0;
            }
        }
        let f = advective_flux(&c, &u, 1.0);
        for j in 0..16 {
            for i in 1..16 {
                assert_eq!(f.ux[g.xface(i, j)], c.at(i - 1, j));
            }
        }
        assert!(f.uy.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wall_fluxes_vanish() {
        let g = grid();
        let c = ScalarField::from_fn(g, |x, y| 1.0 + x * y);
        let sp = IonSpecies::new(-1.0, 1.0, c).unwrap();
        let mut u = vortex(g, 1.0);
        u.ux[g.xface(0, 3)] = 5.0; // a wall value the flux must ignore
        let j = ion_flux(&sp, &u, &smooth_psi(g)).unwrap();
        assert!(j.boundary_is_zero());
    }

    #[test]
    fn flux_parts_sum_to_flux() {
        let g = grid();
        let sp = IonSpecies::new(1.0, 0.5, ScalarField::from_fn(g, |x, y| 1.0 + x + y * y)).unwrap();
        let (u, psi) = (vortex(g, 0.3), smooth_psi(g));
        let pref = Prefactors { advection: 0.4, drift: 0.7 };
        let parts = flux_parts(&sp, &u, &psi, pref).unwrap().total();
        let direct = ion_flux_with(&sp, &u, &psi, pref).unwrap();
        assert!(parts.add_scaled(-1.0, &direct).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn uniform_state_is_stationary() {
        let g = grid();
        let st = IonState::new(
            vec![IonSpecies::new(1.0, 1.0, ScalarField::constant(g, 1.5)).unwrap()],
            DEFAULT_ENTROPY_DELTA,
        )
        .unwrap();
        let next = step_ions(&st, &VectorField::zeros(g), &ScalarField::constant(g, 1.0), 1e-4).unwrap();
        assert_eq!(next, st);
    }

    fn blob_state(g: Grid) -> IonState {
        let blob = |x0: f64, y0: f64| {
            ScalarField::from_fn(g, move |x, y| {
                0.2 + 3.0 * (-((x - x0).powi(2) + (y - y0).powi(2)) / 0.02).exp()
            })
        };
        IonState::new(
            vec![
                IonSpecies::new(1.0, 1.0, blob(0.3, 0.4)).unwrap(),
                IonSpecies::new(-1.0, 0.5, blob(0.7, 0.6)).unwrap(),
            ],
            DEFAULT_ENTROPY_DELTA,
        )
        .unwrap()
    }

    #[test]
    fn mass_is_conserved_over_many_steps() {
        let g = grid();
        let mut st = blob_state(g);
        let m0 = st.masses();
        let (u, psi) = (vortex(g, 2.0), smooth_psi(g));
        let dt = dt_max(&st, &u, &psi, Prefactors::default()).unwrap();
        for _ in 0..1000 {
            st = step_ions(&st, &u, &psi, dt).unwrap();
        }
        for (m, m0) in st.masses().iter().zip(&m0) {
            assert!(((m - m0) / m0).abs() <= 1e-12, "drift {}", (m - m0) / m0);
        }
        assert!(st.species.iter().all(|s| s.c.min() >= 0.0));
    }

    #[test]
    fn oversized_step_is_rejected() {
        let g = grid();
        let st = blob_state(g);
        let (u, psi) = (vortex(g, 1.0), smooth_psi(g));
        let bound = dt_max(&st, &u, &psi, Prefactors::default()).unwrap();
        match step_ions(&st, &u, &psi, 10.0 * bound) {
            Err(Error::StepRejected { dt_max, .. }) => assert_eq!(dt_max, bound),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn total_mass_examples() {
        let g = grid();
        assert!((total_mass(&ScalarField::constant(g, 1.0)) - 1.0).abs() < 1e-15);
        assert_eq!(total_mass(&ScalarField::zeros(g)), 0.0);
    }

    #[test]
    fn total_mass_of_gaussian_matches_fine_quadrature() {
        let gauss = |x: f64, y: f64| (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) / (2.0 * 0.01)).exp();
        // composite Simpson with 2048 panels per direction
        let n = 2048;
        let w = |k: usize| if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        let h = 1.0 / n as f64;
        let mut oracle = 0.0;
        for j in 0..=n {
            for i in 0..=n {
                oracle += w(i) * w(j) * gauss(i as f64 * h, j as f64 * h);
            }
        }
        oracle *= h * h / 9.0;
        let g = Grid::unit(128).unwrap();
        let m = total_mass(&ScalarField::from_fn(g, gauss));
        assert!(((m - oracle) / oracle).abs() <= 1e-6);
    }

    #[test]
    fn entropy_examples() {
        let g = grid();
        assert!(entropy(&ScalarField::constant(g, 1.0), 1e-300).unwrap().abs() < 1e-15);
        assert_eq!(entropy(&ScalarField::zeros(g), 0.3).unwrap(), 0.0);
        let e = entropy(&ScalarField::constant(g, E), 1e-12).unwrap();
        assert!((e - E).abs() <= 1e-9);
        let mut neg = ScalarField::constant(g, 1.0);
        neg.values_mut()[5] = -1e-3;
        assert!(matches!(entropy(&neg, 1e-12), Err(Error::Domain(_))));
    }

    #[test]
    fn same_magnitude_pair_requires_equal_valence_magnitudes() {
        let g = grid();
        let st = blob_state(g);
        let (chi, rho) = st.same_magnitude_pair().unwrap();
        let sum = st.species[0].c.add_scaled(1.0, &st.species[1].c).unwrap();
        assert!(chi.add_scaled(-1.0, &sum).unwrap().max_abs() < 1e-14);
        assert!(rho.add_scaled(-1.0, &st.charge_density()).unwrap().max_abs() == 0.0);
        let mut uneven = st.clone();
        uneven.species[1].z = -2.0;
        assert!(uneven.same_magnitude_pair().is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn step_within_bound_keeps_positivity(
            vals in prop::collection::vec(0.0f64..5.0, 64),
            zeros in prop::collection::vec(0usize..64, 0..20),
            amp in 0.0f64..3.0,
            frac in 0.05f64..1.0,
        ) {
            let g = Grid::unit(8).unwrap();
            let mut c = vals;
            for k in zeros { c[k] = 0.0; }
            let st = IonState::new(
                vec![IonSpecies::new(1.0, 1.0, ScalarField::new(g, c).unwrap()).unwrap()],
                DEFAULT_ENTROPY_DELTA,
            ).unwrap();
            let u = vortex(g, amp);
            let psi = ScalarField::from_fn(g, |x, y| amp * 4.0 * (x - y));
            let bound = dt_max(&st, &u, &psi, Prefactors::default()).unwrap();
            let next = step_ions(&st, &u, &psi, frac * bound).unwrap();
            prop_assert!(next.species[0].c.min() >= 0.0);
        }
    }
}
