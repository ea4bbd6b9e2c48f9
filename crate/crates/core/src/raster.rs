//! Dense piecewise-constant rasters on a regular grid, plus PGM and raw export.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `res^d` cells of side `cell` starting at `low`; axis 0 varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub d: usize,
    pub res: usize,
    pub low: Vec<f64>,
    pub cell: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawHeader {
    d: usize,
    res: usize,
    low: Vec<f64>,
    cell: f64,
    dtype: String,
    order: String,
}

impl Raster {
    pub fn zeros(d: usize, res: usize, low: Vec<f64>, cell: f64) -> Self {
        Self {
            d,
            res,
            low,
            cell,
            values: vec![0.0; res.pow(d as u32)],
        }
    }

    /// Sample `f` at every cell midpoint.
    pub fn from_fn(d: usize, res: usize, low: Vec<f64>, cell: f64, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut r = Self::zeros(d, res, low, cell);
        let mut x = vec![0.0; d];
        for idx in 0..r.values.len() {
            r.midpoint_into(idx, &mut x);
            r.values[idx] = f(&x);
        }
        r
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell.powi(self.d as i32)
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut c = Vec::with_capacity(self.d);
        for _ in 0..self.d {
            c.push(idx % self.res);
            idx /= self.res;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().rev().fold(0, |acc, &c| acc * self.res + c)
    }

    pub fn midpoint_into(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for (i, o) in out.iter_mut().enumerate().take(self.d) {
            let c = rem % self.res;
            rem /= self.res;
            *o = self.low[i] + (c as f64 + 0.5) * self.cell;
        }
    }

    /// Binary PGM (P5) with 16-bit big-endian samples, maximum mapped to
    /// white, highest row of the grid first.
    pub fn write_pgm16<W: Write>(&self, mut out: W) -> Result<()> {
        if self.d != 2 {
            return Err(crate::Error::Unsupported(format!(
                "PGM export needs a 2-dimensional raster, got d = {}",
                self.d
            )));
        }
        let max = self.max();
        write!(out, "P5\n{} {}\n65535\n", self.res, self.res)?;
        let mut buf = Vec::with_capacity(self.values.len() * 2);
        for row in (0..self.res).rev() {
            for col in 0..self.res {
                let v = self.values[col + row * self.res];
                let level = if max > 0.0 {
                    (v / max * 65535.0).round().clamp(0.0, 65535.0) as u16
                } else {
                    0
                };
                buf.extend_from_slice(&level.to_be_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    /// `<stem>.bin` with little-endian f64 values and `<stem>.json` header.
    pub fn write_raw(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(dir.join(format!("{stem}.bin")), bytes)?;
        let header = RawHeader {
            d: self.d,
            res: self.res,
            low: self.low.clone(),
            cell: self.cell,
            dtype: "f64le".into(),
            order: "axis0-fastest".into(),
        };
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&header)?,
        )?;
        Ok(())
    }

    pub fn read_raw(dir: &Path, stem: &str) -> Result<Self> {
        let header: RawHeader =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let bytes = std::fs::read(dir.join(format!("{stem}.bin")))?;
        if bytes.len() != 8 * header.res.pow(header.d as u32) {
            return Err(invalid("raw raster size does not match its header"));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            d: header.d,
            res: header.res,
            low: header.low,
            cell: header.cell,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip() {
        let r = Raster::zeros(3, 4, vec![0.0; 3], 0.25);
        for idx in [0, 5, 17, 63] {
            assert_eq!(r.index(&r.coords(idx)), idx);
        }
    }

    #[test]
    fn pgm_header_and_size() {
        let r = Raster::from_fn(2, 4, vec![0.0, 0.0], 0.25, |x| x[0]);
        let mut buf = Vec::new();
        r.write_pgm16(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n4 4\n65535\n"));
        assert_eq!(buf.len(), b"P5\n4 4\n65535\n".len() + 32);
        // rightmost column of the first row is the maximum
        let body = &buf[b"P5\n4 4\n65535\n".len()..];
        assert_eq!(&body[6..8], &[0xff, 0xff]);
    }

    #[test]
    fn pgm_refuses_other_dimensions() {
        let r = Raster::zeros(1, 4, vec![0.0], 0.25);
        assert!(r.write_pgm16(Vec::new()).is_err());
    }

    #[test]
    fn raw_roundtrip() {
        let dir = std::env::temp_dir().join(format!("simart-raw-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let r = Raster::from_fn(3, 4, vec![-1.0, 0.0, 0.5], 0.5, |x| x[0] * x[1] - x[2]);
        r.write_raw(&dir, "field").unwrap();
        assert_eq!(Raster::read_raw(&dir, "field").unwrap(), r);
        std::fs::remove_dir_all(dir).ok();
    }
}

/// Geometry of a regular grid without values; used for boolean masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub d: usize,
    pub res: usize,
    pub low: Vec<f64>,
    pub cell: f64,
}

impl Grid {
    pub fn new(d: usize, res: usize, low: Vec<f64>, cell: f64) -> Result<Self> {
        if low.len() != d || res == 0 || !(cell > 0.0) {
            return Err(invalid("grid needs d lower corner coordinates, res > 0 and cell > 0"));
        }
        Ok(Self { d, res, low, cell })
    }

    pub fn len(&self) -> usize {
        self.res.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn midpoint_into(&self, mut idx: usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.d) {
            let c = idx % self.res;
            idx /= self.res;
            *o = self.low[i] + (c as f64 + 0.5) * self.cell;
        }
    }

    /// Inclusive range of cell indices along `axis` whose midpoints lie in
    /// `[a, b]`, or `None` if empty.
    pub fn midpoint_range(&self, axis: usize, a: f64, b: f64) -> Option<(usize, usize)> {
        let lo = ((a - self.low[axis]) / self.cell - 0.5).ceil().max(0.0);
        let hi = ((b - self.low[axis]) / self.cell - 0.5).floor();
        if hi < 0.0 || lo > hi || lo >= self.res as f64 {
            return None;
        }
        Some((lo as usize, (hi as usize).min(self.res - 1)))
    }
}
