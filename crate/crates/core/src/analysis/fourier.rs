use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{linear_fit, LinearFit};
use crate::error::{invalid, Error, Result};
use crate::model::Realization;
use crate::raster::{Grid, Raster};
use crate::subdivision::{unpack_coords, SubdivisionTree};

/// A constant value on the cube `low + [0, side)^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellValue {
    pub low: Vec<f64>,
    pub side: f64,
    pub value: f64,
}

pub fn tree_cells(tree: &SubdivisionTree, n: usize) -> Vec<CellValue> {
    let side = (-(n as f64)).exp2();
    tree.level(n)
        .iter()
        .map(|c| CellValue {
            low: unpack_coords(c.key, tree.d).iter().map(|&v| v as f64 * side).collect(),
            side,
            value: c.density,
        })
        .collect()
}

fn raster_cells(r: &Raster) -> Vec<CellValue> {
    let mut x = vec![0.0; r.d];
    r.values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, &value)| {
            r.midpoint_into(i, &mut x);
            CellValue {
                low: x.iter().map(|v| v - 0.5 * r.cell).collect(),
                side: r.cell,
                value,
            }
        })
        .collect()
}

/// `∫_a^{a+h} e^{-2 pi i k x} dx`.
#[inline]
fn interval_transform(a: f64, h: f64, k: f64) -> Complex64 {
    if k == 0.0 {
        return Complex64::new(h, 0.0);
    }
    let z = PI * k * h;
    let sinc = z.sin() / z;
    let phase = -PI * k * (2.0 * a + h);
    Complex64::from_polar(h * sinc, phase)
}

/// `∫ f(x) e^{-2 pi i k.x} dx` for piecewise-constant `f`, in closed form.
pub fn fourier_coefficient(cells: &[CellValue], k: &[f64]) -> Complex64 {
    cells
        .iter()
        .map(|c| {
            let mut z = Complex64::new(c.value, 0.0);
            for (a, &ki) in c.low.iter().zip(k) {
                z *= interval_transform(*a, c.side, ki);
            }
            z
        })
        .sum()
}

pub fn fourier_coefficient_raster(raster: &Raster, k: &[f64]) -> Complex64 {
    fourier_coefficient(&raster_cells(raster), k)
}

/// Frequencies probed by the band scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeLattice {
    Integer,
    /// `Z + 1/2` on every axis, for measures whose integer coefficients vanish.
    HalfInteger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPeak {
    pub band: usize,
    pub peak: f64,
    pub frequency: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub n: usize,
    pub k_max: usize,
    pub lattice: ProbeLattice,
    /// `|mu_n^(0)|`, equal to the total mass.
    pub zero_mode: f64,
    pub bands: Vec<BandPeak>,
    pub fit: Option<LinearFit>,
    /// Decay exponent: `log2 peak ~ -sigma_hat * band`.
    pub sigma_hat: f64,
    /// `2 sigma_hat`.
    pub dim_estimate: f64,
}

impl SpectrumReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("band,peak,frequency\n");
        for b in &self.bands {
            let f: Vec<String> = b.frequency.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{},{},{}\n", b.band, b.peak, f.join(" ")));
        }
        out
    }
}

fn band_frequencies(d: usize, k_max: usize, lattice: ProbeLattice) -> Vec<Vec<Vec<f64>>> {
    let bands = k_max.trailing_zeros() as usize;
    let mut out = vec![Vec::new(); bands];
    let offset = match lattice {
        ProbeLattice::Integer => 0.0,
        ProbeLattice::HalfInteger => 0.5,
    };
    let band_of = |r: f64| -> Option<usize> {
        if r < 1.0 || r >= k_max as f64 {
            None
        } else {
            Some(r.log2().floor() as usize)
        }
    };
    match d {
        1 => {
            for k in 0..k_max {
                let f = k as f64 + offset;
                if let Some(b) = band_of(f) {
                    out[b].push(vec![f]);
                }
            }
        }
        _ => {
            // half plane: conjugate symmetry covers the rest
            let m = k_max as i64;
            for j in 0..m {
                for i in -m..m {
                    let (fx, fy) = (i as f64 + offset, j as f64 + offset);
                    if j == 0 && offset == 0.0 && i <= 0 {
                        continue;
                    }
                    if let Some(b) = band_of(fx.hypot(fy)) {
                        out[b].push(vec![fx, fy]);
                    }
                }
            }
        }
    }
    out
}

/// Band-peak spectrum of piecewise-constant cells; `sigma_hat` is fitted
/// over bands `1..top` where `top` is the highest band (excluded).
pub fn spectrum_of_cells(
    cells: &[CellValue],
    d: usize,
    n: usize,
    k_max: usize,
    lattice: ProbeLattice,
) -> Result<SpectrumReport> {
    if !(1..=2).contains(&d) {
        return Err(Error::Unsupported("Fourier band scans are implemented for d = 1, 2".into()));
    }
    if !k_max.is_power_of_two() || k_max < 32 {
        return Err(invalid("k_max must be a power of two >= 32"));
    }
    let zero_mode = fourier_coefficient(cells, &vec![0.0; d]).norm();
    let bands: Vec<BandPeak> = band_frequencies(d, k_max, lattice)
        .into_par_iter()
        .enumerate()
        .map(|(band, freqs)| {
            let mut best = BandPeak {
                band,
                peak: 0.0,
                frequency: freqs.first().cloned().unwrap_or_default(),
            };
            for f in freqs {
                let v = fourier_coefficient(cells, &f).norm();
                if v > best.peak {
                    best.peak = v;
                    best.frequency = f;
                }
            }
            best
        })
        .collect();
    let top = bands.len() - 1;
    let (xs, ys): (Vec<f64>, Vec<f64>) = bands[1..top]
        .iter()
        .filter(|b| b.peak > 0.0)
        .map(|b| (b.band as f64, b.peak.log2()))
        .unzip();
    let fit = linear_fit(&xs, &ys);
    let sigma_hat = fit.map_or(f64::NAN, |f| -f.slope);
    Ok(SpectrumReport {
        n,
        k_max,
        lattice,
        zero_mode,
        bands,
        fit,
        sigma_hat,
        dim_estimate: 2.0 * sigma_hat,
    })
}

/// Band-peak scan of `mu_n` for a realization in `d = 1` or `2`. Cutout
/// densities are rasterized at `2^{n+2}` cells per unit length first.
pub fn fourier_dimension_estimate(
    realization: &Realization,
    n: usize,
    k_max: usize,
    lattice: ProbeLattice,
) -> Result<SpectrumReport> {
    let (cells, d) = match realization {
        Realization::Tree(t) => (tree_cells(t, n), t.d),
        Realization::Cutout(c) => {
            let bbox = c.domain.bounding_box();
            let width = bbox.high()[0] - bbox.low()[0];
            let res = ((width * (1u64 << (n + 2)) as f64).ceil() as usize).next_power_of_two();
            if res.pow(c.d as u32) > 1 << 26 {
                return Err(Error::Resource("cutout raster for the Fourier scan is too large".into()));
            }
            let grid = Grid::new(c.d, res, bbox.low().to_vec(), width / res as f64)?;
            (raster_cells(&c.density_raster(n, &grid)), c.d)
        }
    };
    spectrum_of_cells(&cells, d, n, k_max, lattice)
}
