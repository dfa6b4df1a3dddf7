//! Truncated cylindrical Wiener forcing.
//!
//! The noise operator is `f(u, E) e_k = sigma_k phi_k (alpha_u u + alpha_E E)`
//! with `sigma_k = sigma0 k^-q` and cosine modes `phi_k` normalised in
//! `L^2` of the domain. Modes are enumerated by total wavenumber, so `phi_1`
//! is the constant `1/sqrt(area)`.
//!
//! Increments come from a counter-based ChaCha stream addressed by
//! `(seed, stream, step)`, so any trajectory step can be regenerated without
//! touching the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::fluid::Projector;
use crate::grid::{Grid, VectorField};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeFamily {
    #[default]
    Cosine,
}

/// Parameters of a [`NoiseModel`], as they appear in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma0: f64,
    pub q: f64,
    pub alpha_u: f64,
    #[serde(rename = "alpha_E")]
    pub alpha_e: f64,
    #[serde(default)]
    pub mode_family: ModeFamily,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            k: 16,
            sigma0: 0.5,
            q: 1.0,
            alpha_u: 1.0,
            alpha_e: 0.5,
            mode_family: ModeFamily::Cosine,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Domain("noise needs at least one mode".into()));
        }
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            return Err(Error::Domain(format!("sigma0 must be >= 0, got {}", self.sigma0)));
        }
        // sum k^-2q converges iff q > 1/2
        if !(self.q > 0.5 && self.q.is_finite()) {
            return Err(Error::Domain(format!(
                "q = {} gives a divergent sum of sigma_k^2; need q > 1/2",
                self.q
            )));
        }
        if !(self.alpha_u.is_finite() && self.alpha_e.is_finite()) {
            return Err(Error::Domain("mixing weights must be finite".into()));
        }
        Ok(())
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.sigma0 * (k as f64).powf(-self.q)
    }
}

/// Wavenumber pair of the `k`-th mode (1-based), by increasing `m + n`.
pub fn mode_indices(k: usize) -> (usize, usize) {
    let mut idx = k - 1;
    let mut s = 0;
    while idx > s {
        idx -= s + 1;
        s += 1;
    }
    (idx, s - idx)
}

#[derive(Clone, Debug)]
pub struct NoiseModel {
    spec: NoiseSpec,
    grid: Grid,
    sigma: Vec<f64>,
    /// `phi_k` sampled on every face.
    modes: Vec<VectorField>,
    phi_inf: Vec<f64>,
    dphi_inf: Vec<f64>,
    /// `sum_k sigma_k^2 phi_k^2` per face.
    weight: VectorField,
}

fn cosine_mode(m: usize, n: usize, lx: f64, ly: f64) -> impl Fn(f64, f64) -> f64 {
    let cm = if m == 0 { 1.0 } else { std::f64::consts::SQRT_2 };
    let cn = if n == 0 { 1.0 } else { std::f64::consts::SQRT_2 };
    let amp = cm * cn / (lx * ly).sqrt();
    let (kx, ky) = (m as f64 * std::f64::consts::PI / lx, n as f64 * std::f64::consts::PI / ly);
    move |x, y| amp * (kx * x).cos() * (ky * y).cos()
}

/// Largest difference quotient between neighbouring faces of one orientation.
fn max_difference_quotient(v: &VectorField) -> f64 {
    let g = v.grid();
    let (nx, ny, hx, hy) = (g.nx(), g.ny(), g.hx(), g.hy());
    let mut m = 0.0f64;
    for j in 0..ny {
        for i in 0..=nx {
            let a = v.ux[g.xface(i, j)];
            if i < nx {
                m = m.max((v.ux[g.xface(i + 1, j)] - a).abs() / hx);
            }
            if j + 1 < ny {
                m = m.max((v.ux[g.xface(i, j + 1)] - a).abs() / hy);
            }
        }
    }
    for j in 0..=ny {
        for i in 0..nx {
            let a = v.uy[g.yface(i, j)];
            if i + 1 < nx {
                m = m.max((v.uy[g.yface(i + 1, j)] - a).abs() / hx);
            }
            if j < ny {
                m = m.max((v.uy[g.yface(i, j + 1)] - a).abs() / hy);
            }
        }
    }
    m
}

/// `||v||^2 + ||D v||^2` where `D` differences neighbouring faces of one
/// orientation, each pair weighted by a full cell.
pub fn face_h1_norm_sq(v: &VectorField) -> f64 {
    let g = v.grid();
    let (nx, ny, hx, hy) = (g.nx(), g.ny(), g.hx(), g.hy());
    let mut s = 0.0;
    for j in 0..ny {
        for i in 0..=nx {
            let a = v.ux[g.xface(i, j)];
            if i < nx {
                s += ((v.ux[g.xface(i + 1, j)] - a) / hx).powi(2);
            }
            if j + 1 < ny {
                s += ((v.ux[g.xface(i, j + 1)] - a) / hy).powi(2);
            }
        }
    }
    for j in 0..=ny {
        for i in 0..nx {
            let a = v.uy[g.yface(i, j)];
            if i + 1 < nx {
                s += ((v.uy[g.yface(i + 1, j)] - a) / hx).powi(2);
            }
            if j < ny {
                s += ((v.uy[g.yface(i, j + 1)] - a) / hy).powi(2);
            }
        }
    }
    v.norm_sq() + s * g.cell_area()
}

impl NoiseModel {
    pub fn new(grid: Grid, spec: NoiseSpec) -> Result<Self> {
        spec.validate()?;
        let sigma: Vec<f64> = (1..=spec.k).map(|k| spec.sigma(k)).collect();
        let mut modes = Vec::with_capacity(spec.k);
        let mut weight = VectorField::zeros(grid);
        for (k, s) in sigma.iter().enumerate() {
            let (m, n) = mode_indices(k + 1);
            let phi = match spec.mode_family {
                ModeFamily::Cosine => cosine_mode(m, n, grid.lx(), grid.ly()),
            };
            let field = VectorField::from_fn(grid, &phi, &phi);
            for (w, p) in weight.ux.iter_mut().zip(&field.ux) {
                *w += s * s * p * p;
            }
            for (w, p) in weight.uy.iter_mut().zip(&field.uy) {
                *w += s * s * p * p;
            }
            modes.push(field);
        }
        let phi_inf = modes.iter().map(|m| m.max_abs()).collect();
        let dphi_inf = modes.iter().map(max_difference_quotient).collect();
        Ok(Self {
            spec,
            grid,
            sigma,
            modes,
            phi_inf,
            dphi_inf,
            weight,
        })
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn n_modes(&self) -> usize {
        self.sigma.len()
    }
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }
    pub fn mode(&self, k: usize) -> &VectorField {
        &self.modes[k]
    }

    pub fn sum_sigma_sq(&self) -> f64 {
        self.sigma.iter().map(|s| s * s).sum()
    }

    /// `sigma0^2 zeta(2q)`, bounding [`Self::sum_sigma_sq`] for every `K`.
    pub fn sigma_sq_bound(&self) -> f64 {
        let p = 2.0 * self.spec.q;
        // integral bound on the zeta tail
        let head: f64 = (1..=64).map(|k| (k as f64).powf(-p)).sum();
        self.spec.sigma0.powi(2) * (head + 64f64.powf(1.0 - p) / (p - 1.0))
    }

    fn mix_sq(&self) -> f64 {
        2.0 * (self.spec.alpha_u.powi(2) + self.spec.alpha_e.powi(2))
    }

    /// Growth constant in `L^2`.
    pub fn ell1(&self) -> f64 {
        let phi_max = self.phi_inf.iter().fold(0.0f64, |m, &p| m.max(p));
        self.mix_sq() * self.sum_sigma_sq() * phi_max * phi_max
    }

    /// Lipschitz constant in `L^2`; the operator is linear, so it equals [`Self::ell1`].
    pub fn ell2(&self) -> f64 {
        self.ell1()
    }

    /// Growth constant in the face `H^1` norm of [`face_h1_norm_sq`].
    pub fn ell3(&self) -> f64 {
        let s: f64 = self
            .sigma
            .iter()
            .zip(self.phi_inf.iter().zip(&self.dphi_inf))
            .map(|(s, (p, d))| s * s * (p * p + 8.0 * d * d).max(2.0 * p * p))
            .sum();
        self.mix_sq() * s
    }

    pub fn ell4(&self) -> f64 {
        self.ell3()
    }

    fn mixed(&self, u: &VectorField, e: &VectorField) -> Result<VectorField> {
        self.grid.check_same(u.grid())?;
        self.grid.check_same(e.grid())?;
        u.scaled(self.spec.alpha_u).add_scaled(self.spec.alpha_e, e)
    }

    /// `f(u, E) e_k` for the 0-based mode index `k`.
    pub fn mode_term(&self, k: usize, u: &VectorField, e: &VectorField) -> Result<VectorField> {
        let mut g = self.mixed(u, e)?;
        let s = self.sigma[k];
        let phi = &self.modes[k];
        g.ux.iter_mut().zip(&phi.ux).for_each(|(v, p)| *v *= s * p);
        g.uy.iter_mut().zip(&phi.uy).for_each(|(v, p)| *v *= s * p);
        Ok(g)
    }
}

/// Address of an increment in the counter-based generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u64,
    pub step: u64,
}

/// Normals available per step before two steps could overlap.
const WORDS_PER_STEP: u128 = 1 << 32;

/// `n` standard normal draws at `key`.
pub fn standard_normals(key: StreamKey, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(key.seed);
    rng.set_stream(key.stream);
    rng.set_word_pos(key.step as u128 * WORDS_PER_STEP);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WienerIncrement {
    pub dw: Vec<f64>,
    pub dt: f64,
    pub key: StreamKey,
}

/// `K` independent `Normal(0, dt)` draws.
pub fn sample_wiener_increment(model: &NoiseModel, dt: f64, key: StreamKey) -> Result<WienerIncrement> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("time step must be >= 0, got {dt}")));
    }
    let dw = if dt == 0.0 {
        vec![0.0; model.n_modes()]
    } else {
        let s = dt.sqrt();
        standard_normals(key, model.n_modes()).into_iter().map(|z| s * z).collect()
    };
    Ok(WienerIncrement { dw, dt, key })
}

/// `sum_k sigma_k phi_k (alpha_u u + alpha_E E) dW_k` on every face.
pub fn apply_noise_operator(
    model: &NoiseModel,
    u: &VectorField,
    e: &VectorField,
    inc: &WienerIncrement,
) -> Result<VectorField> {
    if inc.dw.len() != model.n_modes() {
        return Err(Error::Structural(format!(
            "increment has {} modes, model has {}",
            inc.dw.len(),
            model.n_modes()
        )));
    }
    let mut g = model.mixed(u, e)?;
    let mut coef = VectorField::zeros(model.grid);
    for ((s, dw), phi) in model.sigma.iter().zip(&inc.dw).zip(&model.modes) {
        coef.add_scaled_mut(s * dw, phi)?;
    }
    g.ux.iter_mut().zip(&coef.ux).for_each(|(v, c)| *v *= c);
    g.uy.iter_mut().zip(&coef.uy).for_each(|(v, c)| *v *= c);
    Ok(g)
}

/// `sum_k ||f(u, E) e_k||^2` (unhalved).
pub fn hs_norm_sq(model: &NoiseModel, u: &VectorField, e: &VectorField) -> Result<f64> {
    let g = model.mixed(u, e)?;
    let grid = model.grid;
    let mut s = 0.0;
    for j in 0..grid.ny() {
        for i in 0..=grid.nx() {
            let k = grid.xface(i, j);
            s += grid.xface_weight(i) * model.weight.ux[k] * g.ux[k] * g.ux[k];
        }
    }
    for j in 0..=grid.ny() {
        let w = grid.yface_weight(j);
        for i in 0..grid.nx() {
            let k = grid.yface(i, j);
            s += w * model.weight.uy[k] * g.uy[k] * g.uy[k];
        }
    }
    Ok(s)
}

/// `sum_k ||P f(u, E) e_k||^2` with wall faces cleared before projecting.
pub fn projected_hs_norm_sq(model: &NoiseModel, u: &VectorField, e: &VectorField, projector: &Projector) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..model.n_modes() {
        let mut term = model.mode_term(k, u, e)?;
        term.zero_boundary();
        total += projector.project(&term)?.0.norm_sq();
    }
    Ok(total)
}

/// Sampled assumption constants against their closed forms.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub ell1: f64,
    pub ell2: f64,
    pub ell3: f64,
    pub ell4: f64,
    pub ell1_hat: f64,
    pub ell2_hat: f64,
    pub ell3_hat: f64,
    pub ell4_hat: f64,
    pub n_samples: usize,
    pub pass: bool,
}

fn hs_h1_norm_sq(model: &NoiseModel, u: &VectorField, e: &VectorField) -> Result<f64> {
    (0..model.n_modes())
        .map(|k| model.mode_term(k, u, e).map(|t| face_h1_norm_sq(&t)))
        .sum()
}

fn random_face_field(grid: Grid, key: StreamKey) -> VectorField {
    let n = grid.n_xfaces() + grid.n_yfaces();
    let z = standard_normals(key, n + 8);
    let (a, b, c, d) = (z[n], z[n + 1], 1.0 + z[n + 2].abs(), z[n + 3]);
    let rough = z[n + 4].abs();
    let smooth = |x: f64, y: f64| a * (c * x + d).sin() + b * (c * y).cos();
    let mut v = VectorField::from_fn(grid, smooth, |x, y| smooth(y, x));
    for (val, r) in v.ux.iter_mut().chain(v.uy.iter_mut()).zip(&z) {
        *val += rough * r;
    }
    v
}

/// Samples growth and Lipschitz ratios over `n_samples` random field pairs.
pub fn verify_assumptions(model: &NoiseModel, n_samples: usize, seed: u64) -> Result<AssumptionReport> {
    if n_samples < 100 {
        return Err(Error::Domain(format!("need at least 100 samples, got {n_samples}")));
    }
    let grid = model.grid;
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let (mut r1, mut r2, mut r3, mut r4) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for s in 0..n_samples as u64 {
        let key = |k: u64| StreamKey {
            seed,
            stream: k,
            step: s,
        };
        let (u1, e1) = (random_face_field(grid, key(0)), random_face_field(grid, key(1)));
        let (u2, e2) = (random_face_field(grid, key(2)), random_face_field(grid, key(3)));
        let (du, de) = (u1.add_scaled(-1.0, &u2)?, e1.add_scaled(-1.0, &e2)?);

        r1 = r1.max(ratio(hs_norm_sq(model, &u1, &e1)?, u1.norm_sq() + e1.norm_sq()));
        r3 = r3.max(ratio(
            hs_h1_norm_sq(model, &u1, &e1)?,
            face_h1_norm_sq(&u1) + face_h1_norm_sq(&e1),
        ));
        // f(u1,E1) - f(u2,E2), formed term by term from the two evaluations
        let mut lip0 = 0.0;
        let mut lip1 = 0.0;
        for k in 0..model.n_modes() {
            let t = model.mode_term(k, &u1, &e1)?.add_scaled(-1.0, &model.mode_term(k, &u2, &e2)?)?;
            lip0 += t.norm_sq();
            lip1 += face_h1_norm_sq(&t);
        }
        r2 = r2.max(ratio(lip0, du.norm_sq() + de.norm_sq()));
        r4 = r4.max(ratio(lip1, face_h1_norm_sq(&du) + face_h1_norm_sq(&de)));
    }
    let ok = |hat: f64, ell: f64| hat <= ell * (1.0 + 1e-9);
    let (ell1, ell2, ell3, ell4) = (model.ell1(), model.ell2(), model.ell3(), model.ell4());
    Ok(AssumptionReport {
        ell1,
        ell2,
        ell3,
        ell4,
        ell1_hat: r1,
        ell2_hat: r2,
        ell3_hat: r3,
        ell4_hat: r4,
        n_samples,
        pass: ok(r1, ell1) && ok(r2, ell2) && ok(r3, ell3) && ok(r4, ell4),
    })
}

/// Monte-Carlo estimate of `E[X_T]` for `dX = lambda X dt + sigma X dW` by
/// Euler–Maruyama, with `2^refine` fine steps per coarse step of size `dt`.
///
/// Paths at different `refine` levels share the same Brownian paths when
/// `fine_steps` matches, which removes most sampling noise from error ratios.
#[allow(clippy::too_many_arguments)]
pub fn euler_maruyama_linear_mean(
    lambda: f64,
    sigma: f64,
    x0: f64,
    t: f64,
    n_steps: usize,
    fine_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_steps == 0 || !fine_steps.is_multiple_of(n_steps) || n_paths < 2 {
        return Err(Error::Domain("fine steps must be a multiple of the coarse steps".into()));
    }
    let group = fine_steps / n_steps;
    let dt = t / n_steps as f64;
    let sdf = (t / fine_steps as f64).sqrt();
    let finals: Vec<f64> = (0..n_paths as u64)
        .map(|p| {
            let z = standard_normals(
                StreamKey {
                    seed,
                    stream: p,
                    step: 0,
                },
                fine_steps,
            );
            let mut x = x0;
            for chunk in z.chunks(group) {
                let dw: f64 = chunk.iter().sum::<f64>() * sdf;
                x += lambda * x * dt + sigma * x * dw;
            }
            x
        })
        .collect();
    let n = finals.len() as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let var = finals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}
