//! The universal signal type: an intensity vector on a uniform 2-theta grid,
//! plus text and binary file formats for it.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

/// Magic bytes of the binary pattern format.
pub const PATTERN_MAGIC: &[u8; 4] = b"XDPT";
/// Current binary pattern format version.
pub const PATTERN_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("angles must be strictly increasing (index {0})")]
    NonMonotonicAngles(usize),
    #[error("malformed pattern file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniform 2-theta grid: `len` points at `min + i * step`, half-open at the top.
///
/// The canonical grid is 10.00..79.98 degrees at 0.02 steps, 3500 points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub min: f64,
    pub step: f64,
    pub len: usize,
}

impl Grid {
    pub fn new(min: f64, step: f64, len: usize) -> Self {
        assert!(step > 0.0 && len > 0);
        Grid { min, step, len }
    }

    /// The canonical 3500-point grid over [10, 80) degrees.
    pub fn canonical() -> Self {
        Grid::new(10.0, 0.02, 3500)
    }

    /// Grid covering [min, max) with the given step.
    pub fn from_range(min: f64, max: f64, step: f64) -> Self {
        let len = ((max - min) / step).round() as usize;
        Grid::new(min, step, len)
    }

    pub fn angle(&self, i: usize) -> f64 {
        self.min + i as f64 * self.step
    }

    pub fn max(&self) -> f64 {
        self.min + self.len as f64 * self.step
    }

    /// Index of the grid point nearest to `angle`, clamped to the grid.
    pub fn nearest(&self, angle: f64) -> usize {
        let i = ((angle - self.min) / self.step).round();
        (i.max(0.0) as usize).min(self.len - 1)
    }
}

/// Intensity vector on a uniform grid. Intensities are non-negative,
/// in arbitrary units unless explicitly normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffractionPattern {
    pub grid: Grid,
    pub intensities: Vec<f64>,
}

impl DiffractionPattern {
    pub fn new(grid: Grid, intensities: Vec<f64>) -> Result<Self, PatternError> {
        if intensities.len() != grid.len {
            return Err(PatternError::LengthMismatch {
                expected: grid.len,
                got: intensities.len(),
            });
        }
        Ok(DiffractionPattern { grid, intensities })
    }

    pub fn zeros(grid: Grid) -> Self {
        DiffractionPattern {
            grid,
            intensities: vec![0.0; grid.len],
        }
    }

    pub fn max_intensity(&self) -> f64 {
        self.intensities.iter().cloned().fold(0.0, f64::max)
    }

    /// Divide all intensities by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.intensities {
            *v *= factor;
        }
    }

    /// Normalize to max 1. A zero pattern is left unchanged.
    pub fn normalize_max(&mut self) {
        let m = self.max_intensity();
        if m > 0.0 {
            self.scale(1.0 / m);
        }
    }

    /// Two-column text: `two_theta intensity` per line.
    pub fn write_text(&self, path: &Path) -> Result<(), PatternError> {
        let mut out = String::with_capacity(self.grid.len * 24);
        for (i, v) in self.intensities.iter().enumerate() {
            out.push_str(&format!("{:.4} {:.10e}\n", self.grid.angle(i), v));
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Read a two-column text file; angles may be irregular (returned as pairs).
    pub fn read_xy(path: &Path) -> Result<Vec<(f64, f64)>, PatternError> {
        let text = fs::read_to_string(path)?;
        let mut pairs = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let a = it
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| PatternError::Malformed(format!("line {}", ln + 1)))?;
            let v = it
                .next()
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| PatternError::Malformed(format!("line {}", ln + 1)))?;
            pairs.push((a, v));
        }
        if pairs.is_empty() {
            return Err(PatternError::EmptyInput);
        }
        Ok(pairs)
    }

    /// Compact binary format: magic, version, grid_min, step, L, float64 payload.
    pub fn write_binary(&self, path: &Path) -> Result<(), PatternError> {
        let mut buf = Vec::with_capacity(24 + self.grid.len * 8);
        buf.extend_from_slice(PATTERN_MAGIC);
        buf.extend_from_slice(&PATTERN_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.grid.min.to_le_bytes());
        buf.extend_from_slice(&self.grid.step.to_le_bytes());
        buf.extend_from_slice(&(self.grid.len as u64).to_le_bytes());
        for v in &self.intensities {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self, PatternError> {
        let mut f = fs::File::open(path)?;
        let mut buf = Vec::new();
        f.read_to_end(&mut buf)?;
        if buf.len() < 32 || &buf[0..4] != PATTERN_MAGIC {
            return Err(PatternError::Malformed("bad magic".into()));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if version != PATTERN_VERSION {
            return Err(PatternError::Malformed(format!(
                "unsupported version {version}"
            )));
        }
        let min = f64::from_le_bytes(buf[8..16].try_into().unwrap());
        let step = f64::from_le_bytes(buf[16..24].try_into().unwrap());
        let len = u64::from_le_bytes(buf[24..32].try_into().unwrap()) as usize;
        if buf.len() != 32 + len * 8 {
            return Err(PatternError::Malformed("truncated payload".into()));
        }
        let mut intensities = Vec::with_capacity(len);
        for i in 0..len {
            let off = 32 + i * 8;
            intensities.push(f64::from_le_bytes(buf[off..off + 8].try_into().unwrap()));
        }
        Ok(DiffractionPattern {
            grid: Grid::new(min, step, len),
            intensities,
        })
    }
}

/// Pointwise weighted sum of patterns on a shared grid. No renormalization.
pub fn superpose(
    patterns: &[&DiffractionPattern],
    weights: &[f64],
) -> Result<DiffractionPattern, PatternError> {
    if patterns.is_empty() {
        return Err(PatternError::EmptyInput);
    }
    if patterns.len() != weights.len() {
        return Err(PatternError::LengthMismatch {
            expected: patterns.len(),
            got: weights.len(),
        });
    }
    let grid = patterns[0].grid;
    for p in patterns.iter() {
        if p.grid != grid {
            return Err(PatternError::GridMismatch(format!(
                "{:?} vs {:?}",
                p.grid, grid
            )));
        }
    }
    let mut out = vec![0.0; grid.len];
    for (p, &w) in patterns.iter().zip(weights) {
        for (o, &v) in out.iter_mut().zip(&p.intensities) {
            *o += w * v;
        }
    }
    DiffractionPattern::new(grid, out)
}
