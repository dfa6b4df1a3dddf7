//! Binary field snapshots.
//!
//! Layout, all little-endian:
//!
//! | offset | size | content                          |
//! |--------|------|----------------------------------|
//! | 0      | 4    | magic `NPNS`                     |
//! | 4      | 4    | format version `u32` (= 1)       |
//! | 8      | 4    | `nx` as `u32`                    |
//! | 12     | 4    | `ny` as `u32`                    |
//! | 16     | 4    | field-kind tag `u32`             |
//! | 20     | 8    | time `f64`                       |
//! | 28     | ...  | raw `f64` values                 |
//!
//! Scalar kinds carry `nx * ny` cell values in row-major order (`x` fastest).
//! The velocity carries `(nx + 1) * ny` x-face values followed by
//! `nx * (ny + 1)` y-face values. Domain lengths are not stored.

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Grid, Result, ScalarField, VectorField};

pub const MAGIC: [u8; 4] = *b"NPNS";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 28;

/// What a snapshot holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    /// Potential, tag 1.
    Potential,
    /// Charge density, tag 2.
    Charge,
    /// Projection multiplier, tag 3.
    Pressure,
    /// Face velocity, tag 4.
    Velocity,
    /// Concentration of species `i` (0-based), tag `100 + i`.
    Concentration(u32),
}

impl FieldKind {
    pub fn tag(self) -> u32 {
        match self {
            FieldKind::Potential => 1,
            FieldKind::Charge => 2,
            FieldKind::Pressure => 3,
            FieldKind::Velocity => 4,
            FieldKind::Concentration(i) => 100 + i,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            1 => FieldKind::Potential,
            2 => FieldKind::Charge,
            3 => FieldKind::Pressure,
            4 => FieldKind::Velocity,
            t if t >= 100 => FieldKind::Concentration(t - 100),
            t => return Err(Error::Structural(format!("unknown snapshot field tag {t}"))),
        })
    }

    /// Short name used in snapshot file names.
    pub fn name(self) -> String {
        match self {
            FieldKind::Potential => "psi".into(),
            FieldKind::Charge => "rho".into(),
            FieldKind::Pressure => "pressure".into(),
            FieldKind::Velocity => "u".into(),
            FieldKind::Concentration(i) => format!("c{}", i + 1),
        }
    }
}

/// Decoded snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub nx: usize,
    pub ny: usize,
    pub kind: FieldKind,
    pub time: f64,
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn scalar(kind: FieldKind, time: f64, f: &ScalarField) -> Self {
        Self {
            nx: f.grid().nx(),
            ny: f.grid().ny(),
            kind,
            time,
            values: f.values().to_vec(),
        }
    }

    pub fn velocity(time: f64, u: &VectorField) -> Self {
        let mut values = u.ux.clone();
        values.extend_from_slice(&u.uy);
        Self {
            nx: u.grid().nx(),
            ny: u.grid().ny(),
            kind: FieldKind::Velocity,
            time,
            values,
        }
    }

    fn expected_len(&self) -> usize {
        match self.kind {
            FieldKind::Velocity => (self.nx + 1) * self.ny + self.nx * (self.ny + 1),
            _ => self.nx * self.ny,
        }
    }

    /// Rebuilds a cell field on `grid`, which must match `nx, ny`.
    pub fn to_scalar(&self, grid: Grid) -> Result<ScalarField> {
        if self.kind == FieldKind::Velocity {
            return Err(Error::Structural("velocity snapshot is not a scalar field".into()));
        }
        self.check_grid(&grid)?;
        ScalarField::new(grid, self.values.clone())
    }

    pub fn to_velocity(&self, grid: Grid) -> Result<VectorField> {
        if self.kind != FieldKind::Velocity {
            return Err(Error::Structural("scalar snapshot is not a velocity".into()));
        }
        self.check_grid(&grid)?;
        let nxf = (self.nx + 1) * self.ny;
        VectorField::new(grid, self.values[..nxf].to_vec(), self.values[nxf..].to_vec())
    }

    fn check_grid(&self, g: &Grid) -> Result<()> {
        if (g.nx(), g.ny()) != (self.nx, self.ny) {
            return Err(Error::Structural(format!(
                "snapshot is {}x{}, grid is {}x{}",
                self.nx,
                self.ny,
                g.nx(),
                g.ny()
            )));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        if self.values.len() != self.expected_len() {
            return Err(Error::Structural(format!(
                "snapshot has {} values, expected {}",
                self.values.len(),
                self.expected_len()
            )));
        }
        let dim = |n: usize| u32::try_from(n).map_err(|_| Error::Structural(format!("dimension {n} exceeds u32")));
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&dim(self.nx)?.to_le_bytes());
        buf.extend_from_slice(&dim(self.ny)?.to_le_bytes());
        buf.extend_from_slice(&self.kind.tag().to_le_bytes());
        buf.extend_from_slice(&self.time.to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; HEADER_LEN];
        r.read_exact(&mut head)?;
        if head[..4] != MAGIC {
            return Err(Error::Structural("not an NPNS snapshot".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::Structural(format!("unsupported snapshot version {version}")));
        }
        let mut s = Snapshot {
            nx: u32_at(8) as usize,
            ny: u32_at(12) as usize,
            kind: FieldKind::from_tag(u32_at(16))?,
            time: f64::from_le_bytes(head[20..28].try_into().expect("8 bytes")),
            values: Vec::new(),
        };
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != 8 * s.expected_len() {
            return Err(Error::Structural(format!(
                "snapshot body has {} bytes, expected {}",
                body.len(),
                8 * s.expected_len()
            )));
        }
        s.values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
