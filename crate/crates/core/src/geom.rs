//! Axis-aligned half-open boxes, segment clipping and a few volume formulas.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `[low, high)` in every coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfOpenBox {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl HalfOpenBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() || low.is_empty() {
            return Err(invalid("box corners must have the same positive dimension"));
        }
        if low.iter().zip(&high).any(|(l, h)| !(l < h)) {
            return Err(invalid(format!("degenerate box {low:?} .. {high:?}")));
        }
        Ok(Self { low, high })
    }

    pub fn unit(d: usize) -> Self {
        Self {
            low: vec![0.0; d],
            high: vec![1.0; d],
        }
    }

    /// Dyadic cell `prod [c_i 2^-n, (c_i + 1) 2^-n)`.
    pub fn dyadic(level: u32, coords: &[u64]) -> Self {
        let h = (-(level as f64)).exp2();
        Self {
            low: coords.iter().map(|&c| c as f64 * h).collect(),
            high: coords.iter().map(|&c| (c + 1) as f64 * h).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.low.iter().zip(&self.high))
            .all(|(v, (l, h))| *l <= *v && *v < *h)
    }

    pub fn center(&self) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn diameter(&self) -> f64 {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn volume(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| h - l).product()
    }
}

/// Length of `[p0, p1] ∩ bbox` (Liang-Barsky parametric clipping).
pub fn clip_segment_length(p0: &[f64], p1: &[f64], bbox: &HalfOpenBox) -> f64 {
    match clip_segment(p0, p1, bbox) {
        Some((t0, t1)) => (t1 - t0) * distance(p0, p1),
        None => 0.0,
    }
}

/// Parameter interval `[t0, t1] ⊂ [0, 1]` of the segment inside the box.
pub fn clip_segment(p0: &[f64], p1: &[f64], bbox: &HalfOpenBox) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for i in 0..bbox.dim() {
        let dir = p1[i] - p0[i];
        let (lo, hi) = (bbox.low[i], bbox.high[i]);
        if dir == 0.0 {
            if p0[i] < lo || p0[i] >= hi {
                return None;
            }
            continue;
        }
        let (mut a, mut b) = ((lo - p0[i]) / dir, (hi - p0[i]) / dir);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
        if t0 >= t1 {
            return None;
        }
    }
    Some((t0, t1))
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Lebesgue measure of the Euclidean ball of radius `r` in `R^d`, `d <= 3`.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    use std::f64::consts::PI;
    match d {
        0 => 1.0,
        1 => 2.0 * r,
        2 => PI * r * r,
        3 => 4.0 / 3.0 * PI * r * r * r,
        _ => unit_ball_volume(d) * r.powi(d as i32),
    }
}

fn unit_ball_volume(d: usize) -> f64 {
    use std::f64::consts::PI;
    // V_d = 2 pi / d * V_{d-2}
    let mut v = if d % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if d % 2 == 0 { 2 } else { 3 };
    while k <= d {
        v *= 2.0 * PI / k as f64;
        k += 2;
    }
    v
}

/// Rotate a planar vector by `angle` radians.
#[inline]
pub fn rotate2(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}
