//! Dimension estimators, Fourier decay, convolutions, sumsets and tail audits.

mod convolve;
mod dimension;
mod fourier;
mod tail;

pub use convolve::{convolve, sumset_interior, ConvolutionGrid, SumsetReport};
pub use dimension::{
    box_dimension, coarse_cell_masses, correlation_dimension, mask_occupancy, tree_occupancy, DimensionFit,
    EstimatorKind,
};
pub use fourier::{
    fourier_coefficient, fourier_coefficient_raster, fourier_dimension_estimate, tree_cells, BandPeak, CellValue,
    ProbeLattice, SpectrumReport,
};
pub use tail::{increment_tail_audit, TailAuditOptions};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Ordinary least squares `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub residual_rms: f64,
    pub points: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - intercept - slope * x;
            e * e
        })
        .sum();
    let slope_stderr = if n > 2 { (sse / (nf - 2.0) / sxx).sqrt() } else { 0.0 };
    Some(LinearFit {
        slope,
        intercept,
        slope_stderr,
        residual_rms: (sse / nf).sqrt(),
        points: n,
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// A fitted exponent with its raw table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub kind: String,
    /// The headline exponent; `+inf` when the input carried no signal.
    pub estimate: f64,
    pub constant: Option<f64>,
    pub fit: Option<LinearFit>,
    /// Range of the regressor used by the fit.
    pub window: Option<(f64, f64)>,
    pub flags: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl AnalysisReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }
}
