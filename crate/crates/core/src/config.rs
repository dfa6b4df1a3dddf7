//! Run configuration, read from TOML.
//!
//! Every key has a default and file keys are merged over the defaults, so an
//! empty file describes the desk-scale benchmark: a 32 x 32 unit square,
//! two Gaussian ion blobs with valences `+1` and `-1`,
//! `mu = kappa = varsigma = 1`, `T = 1`, automatic `dt` and the default
//! noise. [`SimConfig::to_toml`] writes the canonical form with
//! every key spelled out; parsing it back yields the same configuration.
//!
//! Overrides use dotted paths, `time.T=0.1` or `physics.species.0.a=2`, and
//! take TOML values (bare words fall back to strings).

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::grid::{BoundaryData, Grid, ScalarField, VectorField};
use crate::ions::DEFAULT_ENTROPY_DELTA;
use crate::noise::{ModeFamily, NoiseSpec};
use crate::regularization::{Thresholds, Truncation};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub truncation: Truncation,
    #[serde(default)]
    pub mollifier: MollifierConfig,
    #[serde(default)]
    pub monitors: MonitorConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    #[serde(rename = "Lx")]
    pub lx: f64,
    #[serde(rename = "Ly")]
    pub ly: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nx: 32,
            ny: 32,
            lx: 1.0,
            ly: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub mu: f64,
    pub kappa: f64,
    pub varsigma: f64,
    /// Offset `delta` in `log(c + delta)`.
    #[serde(default = "default_delta")]
    pub entropy_delta: f64,
    #[serde(default)]
    pub eta: EtaSpec,
    #[serde(default)]
    pub velocity: VelocityProfile,
    pub species: Vec<SpeciesConfig>,
}

fn default_delta() -> f64 {
    DEFAULT_ENTROPY_DELTA
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        let blob = |z: f64, x0: f64, y0: f64| SpeciesConfig {
            z,
            a: 1.0,
            initial: Profile::Gaussian {
                background: 0.5,
                amplitude: 1.0,
                x0,
                y0,
                width: 0.1,
            },
        };
        Self {
            mu: 1.0,
            kappa: 1.0,
            varsigma: 1.0,
            entropy_delta: DEFAULT_ENTROPY_DELTA,
            eta: EtaSpec::default(),
            velocity: VelocityProfile::default(),
            species: vec![blob(1.0, 0.3, 0.3), blob(-1.0, 0.7, 0.7)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    pub z: f64,
    pub a: f64,
    pub initial: Profile,
}

/// Initial concentration profile, in domain coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `background + amplitude exp(-|x - x0|² / (2 width²))`
    Gaussian {
        background: f64,
        amplitude: f64,
        x0: f64,
        y0: f64,
        width: f64,
    },
    /// `mean + amplitude cos(kx pi x / Lx) cos(ky pi y / Ly)`
    Cosine {
        mean: f64,
        amplitude: f64,
        kx: u32,
        ky: u32,
    },
}

impl Profile {
    pub fn field(&self, g: Grid) -> ScalarField {
        let (lx, ly) = (g.lx(), g.ly());
        match *self {
            Profile::Constant { value } => ScalarField::constant(g, value),
            Profile::Gaussian {
                background,
                amplitude,
                x0,
                y0,
                width,
            } => ScalarField::from_fn(g, |x, y| {
                let r2 = (x - x0).powi(2) + (y - y0).powi(2);
                background + amplitude * (-r2 / (2.0 * width * width)).exp()
            }),
            Profile::Cosine {
                mean,
                amplitude,
                kx,
                ky,
            } => {
                let pi = std::f64::consts::PI;
                ScalarField::from_fn(g, |x, y| {
                    mean + amplitude * (kx as f64 * pi * x / lx).cos() * (ky as f64 * pi * y / ly).cos()
                })
            }
        }
    }
}

/// Applied boundary potential `eta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EtaSpec {
    Constant { value: f64 },
    /// `value + gx x + gy y`
    Linear { value: f64, gx: f64, gy: f64 },
}

impl Default for EtaSpec {
    fn default() -> Self {
        EtaSpec::Constant { value: 0.0 }
    }
}

impl EtaSpec {
    pub fn data(&self, g: &Grid) -> BoundaryData {
        match *self {
            EtaSpec::Constant { value } => BoundaryData::constant(g, value),
            EtaSpec::Linear { value, gx, gy } => BoundaryData::from_fn(g, |x, y| value + gx * x + gy * y),
        }
    }
}

/// Initial velocity.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum VelocityProfile {
    #[default]
    Rest,
    /// Single cell from the stream function
    /// `amplitude sin²(pi x / Lx) sin²(pi y / Ly)`.
    Vortex { amplitude: f64 },
}

impl VelocityProfile {
    pub fn field(&self, g: Grid) -> VectorField {
        match *self {
            VelocityProfile::Rest => VectorField::zeros(g),
            VelocityProfile::Vortex { amplitude } => {
                let pi = std::f64::consts::PI;
                let (lx, ly) = (g.lx(), g.ly());
                VectorField::from_streamfunction(g, |x, y| {
                    amplitude * (pi * x / lx).sin().powi(2) * (pi * y / ly).sin().powi(2)
                })
            }
        }
    }
}

/// Time step: a positive number or `"auto"`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum TimeStep {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for TimeStep {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TimeStep::Auto => s.serialize_str("auto"),
            TimeStep::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for TimeStep {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(TimeStep::Fixed(v)),
            Raw::Int(v) => Ok(TimeStep::Fixed(v as f64)),
            Raw::Text(t) if t == "auto" => Ok(TimeStep::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("dt must be a number or \"auto\", got {t:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default)]
    pub dt: TimeStep,
    #[serde(rename = "T")]
    pub t_end: f64,
    /// Fraction of the positivity bound used by `dt = "auto"`.
    #[serde(default = "default_auto_fraction")]
    pub auto_fraction: f64,
}

fn default_auto_fraction() -> f64 {
    0.5
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            dt: TimeStep::Auto,
            t_end: 1.0,
            auto_fraction: default_auto_fraction(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
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

fn yes() -> bool {
    true
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let s = NoiseSpec::default();
        Self {
            enabled: true,
            k: s.k,
            sigma0: s.sigma0,
            q: s.q,
            alpha_u: s.alpha_u,
            alpha_e: s.alpha_e,
            mode_family: s.mode_family,
        }
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn spec(&self) -> NoiseSpec {
        NoiseSpec {
            k: self.k,
            sigma0: self.sigma0,
            q: self.q,
            alpha_u: self.alpha_u,
            alpha_e: self.alpha_e,
            mode_family: self.mode_family,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifierConfig {
    /// Width of the Gaussian applied to the potential before transport.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    #[serde(default)]
    pub thresholds: Thresholds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    /// Snapshot period in steps; 0 disables snapshots.
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default = "yes")]
    pub csv: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: None,
            snapshot_every: 0,
            csv: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub p_list: Vec<f64>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n: 8,
            p_list: vec![1.0, 2.0],
        }
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Domain(m) | Error::Structural(m) => Error::Config(m),
        Error::Compatibility { defect } => Error::Config(format!(
            "varsigma = 0 needs total charge plus boundary flux to vanish; defect {defect:e}"
        )),
        e => e,
    }
}

/// Parses `text` as a TOML value, falling back to a plain string.
fn parse_value(text: &str) -> toml::Value {
    let wrapped = format!("v = {text}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

/// Deep merge of `over` into `base`; arrays and scalars are replaced whole.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_path(root: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("malformed override key {path:?}")));
    }
    let mut cur = root;
    for (n, key) in keys.iter().enumerate() {
        let last = n + 1 == keys.len();
        if last {
            cur.insert(key.to_string(), value);
            return Ok(());
        }
        let next = keys[n + 1];
        let entry = cur
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        // array element: physics.species.0.a
        if let (toml::Value::Array(arr), Ok(idx)) = (&mut *entry, next.parse::<usize>()) {
            let elem = arr
                .get_mut(idx)
                .ok_or_else(|| Error::Config(format!("{path}: index {idx} out of range")))?;
            let rest = keys[n + 2..].join(".");
            return match elem {
                toml::Value::Table(t) if !rest.is_empty() => set_path(t, &rest, value),
                _ if rest.is_empty() => {
                    *elem = value;
                    Ok(())
                }
                _ => Err(Error::Config(format!("{path}: element {idx} is not a table"))),
            };
        }
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(format!("{path}: {key} is not a table"))),
        };
    }
    Ok(())
}

impl SimConfig {
    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses, applies `key=value` overrides, then validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let file: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let mut table: toml::Table = toml::Table::try_from(SimConfig::default()).expect("defaults serialize");
        merge(&mut table, file);
        for (k, v) in overrides {
            set_path(&mut table, k, parse_value(v))?;
        }
        let cfg: SimConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML with every key present.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn build_grid(&self) -> Result<Grid> {
        Grid::new(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly).map_err(config_err)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.build_grid()?;
        let p = &self.physics;
        if !(p.mu > 0.0 && p.mu.is_finite()) {
            return Err(Error::Config(format!("physics.mu must be > 0, got {}", p.mu)));
        }
        if !p.kappa.is_finite() || p.kappa < 0.0 {
            return Err(Error::Config(format!("physics.kappa must be >= 0, got {}", p.kappa)));
        }
        if !(p.varsigma >= 0.0 && p.varsigma.is_finite()) {
            return Err(Error::Config(format!("physics.varsigma must be >= 0, got {}", p.varsigma)));
        }
        if !(p.entropy_delta > 0.0) {
            return Err(Error::Config("physics.entropy_delta must be > 0".into()));
        }
        if p.species.is_empty() {
            return Err(Error::Config("at least one ion species is required".into()));
        }
        let mut rho = ScalarField::zeros(g);
        for (n, s) in p.species.iter().enumerate() {
            if !(s.a > 0.0 && s.a.is_finite()) || !s.z.is_finite() {
                return Err(Error::Config(format!("species {n}: need a > 0 and finite z")));
            }
            let c = s.initial.field(g);
            if !c.is_finite() || c.min() < 0.0 {
                return Err(Error::Config(format!("species {n}: initial profile must be finite and >= 0")));
            }
            if let Profile::Gaussian { width, .. } = s.initial {
                if !(width > 0.0) {
                    return Err(Error::Config(format!("species {n}: gaussian width must be > 0")));
                }
            }
            rho = rho.add_scaled(s.z, &c).map_err(config_err)?;
        }
        if p.varsigma == 0.0 {
            let eta = p.eta.data(&g);
            let defect = rho.integral() + eta.integral(&g);
            let scale = rho.values().iter().map(|v| v.abs()).sum::<f64>() * g.cell_area() + eta.integral_abs(&g);
            if defect.abs() > 1e-10 * scale {
                return Err(config_err(Error::Compatibility { defect }));
            }
        }
        if !p.velocity.field(g).is_finite() {
            return Err(Error::Config("non-finite initial velocity".into()));
        }
        let t = &self.time;
        if !(t.t_end > 0.0 && t.t_end.is_finite()) {
            return Err(Error::Config(format!("time.T must be > 0, got {}", t.t_end)));
        }
        if let TimeStep::Fixed(dt) = t.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::Config(format!("time.dt must be > 0 or \"auto\", got {dt}")));
            }
        }
        if !(t.auto_fraction > 0.0 && t.auto_fraction <= 1.0) {
            return Err(Error::Config("time.auto_fraction must lie in (0, 1]".into()));
        }
        if self.noise.enabled {
            self.noise.spec().validate().map_err(config_err)?;
        }
        self.truncation.validate()?;
        if let Some(eps) = self.mollifier.eps {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::Config(format!("mollifier.eps must be > 0, got {eps}")));
            }
        }
        self.monitors.thresholds.validate()?;
        if self.ensemble.p_list.iter().any(|&p| !(p >= 1.0 && p.is_finite())) {
            return Err(Error::Config("ensemble.p_list entries must be >= 1".into()));
        }
        Ok(())
    }
}
