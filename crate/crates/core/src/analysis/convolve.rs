use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::median;
use crate::error::{invalid, Error, Result};
use crate::raster::Raster;

const MAX_CELLS: usize = 1 << 26;

/// Density of `mu' * S mu''` sampled at lattice nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionGrid {
    /// Node `m` sits at the midpoint of raster cell `m`; values are densities
    /// and `density.mass()` is the product of the input masses.
    pub density: Raster,
    pub s: Vec<Vec<f64>>,
    pub det: f64,
    pub sup: f64,
    /// Bounding box of the nodes with positive density.
    pub support: Option<(Vec<f64>, Vec<f64>)>,
    pub flags: Vec<String>,
}

/// Masses on the lattice `h Z^d`: cell `origin + idx` is `[(origin+idx) h, (origin+idx+1) h)`.
struct LatticeMass {
    origin: Vec<i64>,
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl LatticeMass {
    fn index(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for axis in (0..coords.len()).rev() {
            idx = idx * self.dims[axis] + coords[axis];
        }
        idx
    }

    fn coords(&self, mut idx: usize) -> Vec<usize> {
        self.dims
            .iter()
            .map(|&n| {
                let c = idx % n;
                idx /= n;
                c
            })
            .collect()
    }
}

fn apply(s: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..x.len()).map(|j| s[(i, j)] * x[j]).sum();
    }
}

/// Image of the raster's measure under `x -> S x`, binned at spacing `h`.
fn push_forward(r: &Raster, s: &DMatrix<f64>, h: f64) -> Result<LatticeMass> {
    let d = r.d;
    let vol = r.cell_volume();
    let nonzero: Vec<usize> = (0..r.len()).filter(|&i| r.values[i] != 0.0).collect();
    if nonzero.is_empty() {
        return Ok(LatticeMass {
            origin: vec![0; d],
            dims: vec![1; d],
            values: vec![0.0],
        });
    }
    // bounding box of the image
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    for &i in &nonzero {
        r.midpoint_into(i, &mut x);
        for corner in 0..(1usize << d) {
            let c: Vec<f64> = (0..d)
                .map(|a| x[a] + if corner >> a & 1 == 1 { 0.5 } else { -0.5 } * r.cell)
                .collect();
            apply(s, &c, &mut y);
            for a in 0..d {
                lo[a] = lo[a].min(y[a]);
                hi[a] = hi[a].max(y[a]);
            }
        }
    }
    let origin: Vec<i64> = lo.iter().map(|v| (v / h).floor() as i64).collect();
    let dims: Vec<usize> = hi
        .iter()
        .zip(&origin)
        .map(|(v, o)| ((v / h).ceil() as i64 - o).max(1) as usize)
        .collect();
    let total: usize = dims.iter().product();
    if total > MAX_CELLS {
        return Err(Error::Resource(format!("convolution lattice of {total} cells is too large")));
    }
    let mut out = LatticeMass {
        origin,
        dims,
        values: vec![0.0; total],
    };
    if d == 1 {
        // exact interval overlap
        let sc = s[(0, 0)];
        for &i in &nonzero {
            r.midpoint_into(i, &mut x);
            let (a, b) = {
                let (p, q) = (sc * (x[0] - 0.5 * r.cell), sc * (x[0] + 0.5 * r.cell));
                (p.min(q), p.max(q))
            };
            let mass = r.values[i] * vol;
            let first = (a / h).floor() as i64;
            let last = ((b / h).ceil() as i64 - 1).max(first);
            for c in first..=last {
                let overlap = (b.min((c + 1) as f64 * h) - a.max(c as f64 * h)).max(0.0);
                let idx = (c - out.origin[0]).clamp(0, out.dims[0] as i64 - 1) as usize;
                out.values[idx] += mass * overlap / (b - a);
            }
        }
        return Ok(out);
    }
    // subsample each source cell finely enough that every subpoint image
    // is within half a target cell of its neighbours
    let norm = s.norm();
    let q = ((2.0 * r.cell * norm / h).ceil() as usize).max(1);
    let sub = q.pow(d as u32);
    let mut p = vec![0.0; d];
    let mut coords = vec![0usize; d];
    for &i in &nonzero {
        r.midpoint_into(i, &mut x);
        let mass = r.values[i] * vol / sub as f64;
        for k in 0..sub {
            let mut rem = k;
            for a in 0..d {
                let off = rem % q;
                rem /= q;
                p[a] = x[a] - 0.5 * r.cell + (off as f64 + 0.5) * r.cell / q as f64;
            }
            apply(s, &p, &mut y);
            for a in 0..d {
                let c = (y[a] / h).floor() as i64 - out.origin[a];
                coords[a] = c.clamp(0, out.dims[a] as i64 - 1) as usize;
            }
            let idx = out.index(&coords);
            out.values[idx] += mass;
        }
    }
    Ok(out)
}

fn direct(a: &LatticeMass, b: &LatticeMass, dims: &[usize]) -> Vec<f64> {
    let d = dims.len();
    let mut out = vec![0.0; dims.iter().product()];
    let nz = |m: &LatticeMass| -> Vec<(Vec<usize>, f64)> {
        m.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (m.coords(i), *v))
            .collect()
    };
    let (na, nb) = (nz(a), nz(b));
    for (ca, va) in &na {
        for (cb, vb) in &nb {
            let mut idx = 0;
            for axis in (0..d).rev() {
                idx = idx * dims[axis] + ca[axis] + cb[axis];
            }
            out[idx] += va * vb;
        }
    }
    out
}

fn fft_nd(data: &mut [Complex64], dims: &[usize], inverse: bool) {
    let mut planner = FftPlanner::new();
    let mut stride = 1;
    for &n in dims {
        let fft = if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        };
        let block = stride * n;
        let mut line = vec![Complex64::default(); n];
        for start in (0..data.len()).step_by(block) {
            for off in 0..stride {
                for (k, v) in line.iter_mut().enumerate() {
                    *v = data[start + off + k * stride];
                }
                fft.process(&mut line);
                for (k, v) in line.iter().enumerate() {
                    data[start + off + k * stride] = *v;
                }
            }
        }
        stride = block;
    }
}

fn via_fft(a: &LatticeMass, b: &LatticeMass, dims: &[usize]) -> Vec<f64> {
    let total: usize = dims.iter().product();
    let embed = |m: &LatticeMass| -> Vec<Complex64> {
        let mut buf = vec![Complex64::default(); total];
        for (i, &v) in m.values.iter().enumerate() {
            if v != 0.0 {
                let c = m.coords(i);
                let mut idx = 0;
                for axis in (0..dims.len()).rev() {
                    idx = idx * dims[axis] + c[axis];
                }
                buf[idx] = Complex64::new(v, 0.0);
            }
        }
        buf
    };
    let (mut fa, mut fb) = (embed(a), embed(b));
    fft_nd(&mut fa, dims, false);
    fft_nd(&mut fb, dims, false);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    fft_nd(&mut fa, dims, true);
    let scale = 1.0 / total as f64;
    fa.iter().map(|z| (z.re * scale).max(0.0)).collect()
}

/// Convolve `field_a` with the pushforward of `field_b` under `S` on the
/// lattice of spacing `1 / resolution`. `same_source` marks the two fields
/// as levels of one realization, where maps with `S + I` singular are
/// excluded.
pub fn convolve(
    field_a: &Raster,
    field_b: &Raster,
    s: &[Vec<f64>],
    resolution: usize,
    same_source: bool,
) -> Result<ConvolutionGrid> {
    let d = field_a.d;
    if field_b.d != d || s.len() != d || s.iter().any(|row| row.len() != d) {
        return Err(invalid("fields and S must share the dimension"));
    }
    if !resolution.is_power_of_two() {
        return Err(invalid("resolution must be a power of two"));
    }
    let sm = DMatrix::from_fn(d, d, |i, j| s[i][j]);
    let det = sm.determinant();
    if det.abs() <= 1e-12 * sm.norm().powi(d as i32).max(1e-300) {
        return Err(invalid("S is singular"));
    }
    let h = 1.0 / resolution as f64;
    let identity = DMatrix::identity(d, d);
    let a = push_forward(field_a, &identity, h)?;
    let b = push_forward(field_b, &sm, h)?;
    let dims: Vec<usize> = a.dims.iter().zip(&b.dims).map(|(x, y)| x + y - 1).collect();
    let side = *dims.iter().max().unwrap();
    if side.pow(d as u32) > MAX_CELLS {
        return Err(Error::Resource("convolution output is too large".into()));
    }
    let nnz = |m: &LatticeMass| m.values.iter().filter(|v| **v != 0.0).count();
    let work = nnz(&a) as f64 * nnz(&b) as f64;
    let fft_work = dims.iter().product::<usize>() as f64 * 40.0;
    let masses = if work <= fft_work { direct(&a, &b, &dims) } else { via_fft(&a, &b, &dims) };

    let vol = h.powi(d as i32);
    let low: Vec<f64> = (0..d)
        .map(|i| (a.origin[i] + b.origin[i]) as f64 * h + 0.5 * h)
        .collect();
    let mut density = Raster::zeros(d, side, low, h);
    let mut coords = vec![0usize; d];
    let total_mass: f64 = masses.iter().sum();
    let expected = a.values.iter().sum::<f64>() * b.values.iter().sum::<f64>();
    // the transform path is only accurate to rounding; restore the exact mass law
    let fix = if total_mass > 0.0 { expected / total_mass } else { 1.0 };
    for (i, &m) in masses.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let mut rem = i;
        for (axis, c) in coords.iter_mut().enumerate() {
            *c = rem % dims[axis];
            rem /= dims[axis];
        }
        let idx = density.index(&coords);
        density.values[idx] = m * fix / vol;
    }
    let sup = density.max();
    let support = positive_support(&density);
    let mut flags = Vec::new();
    if same_source && (&sm + &identity).determinant().abs() < 1e-9 {
        flags.push("excluded_map".to_string());
    }
    Ok(ConvolutionGrid {
        density,
        s: s.to_vec(),
        det,
        sup,
        support,
        flags,
    })
}

fn positive_support(r: &Raster) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut lo = vec![f64::INFINITY; r.d];
    let mut hi = vec![f64::NEG_INFINITY; r.d];
    let mut x = vec![0.0; r.d];
    let mut any = false;
    for (i, &v) in r.values.iter().enumerate() {
        if v > 0.0 {
            any = true;
            r.midpoint_into(i, &mut x);
            for a in 0..r.d {
                lo[a] = lo[a].min(x[a]);
                hi[a] = hi[a].max(x[a]);
            }
        }
    }
    any.then_some((lo, hi))
}

/// Largest box of nodes where the density stays above a fraction of its
/// median positive value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumsetReport {
    pub threshold_fraction: f64,
    pub median: Option<f64>,
    /// First and last node of the box, per axis.
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    /// Number of nodes along each axis (zero when empty).
    pub nodes: Vec<usize>,
}

impl SumsetReport {
    pub fn is_empty(&self) -> bool {
        self.nodes.iter().any(|&n| n == 0)
    }

    /// Node extent along the shortest axis.
    pub fn min_width(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.low.iter().zip(&self.high).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min)
    }
}

fn superlevel(grid: &ConvolutionGrid, fraction: f64) -> Option<(f64, Vec<bool>)> {
    let positive: Vec<f64> = grid.density.values.iter().copied().filter(|v| *v > 0.0).collect();
    let med = median(&positive)?;
    let thr = fraction * med;
    Some((med, grid.density.values.iter().map(|v| *v > thr).collect()))
}

/// Value of a node-valued grid at `x`, taken from the nearest node.
fn nearest_value(r: &Raster, x: &[f64]) -> f64 {
    let mut coords = Vec::with_capacity(r.d);
    for (a, v) in x.iter().enumerate() {
        let c = ((v - r.low[a]) / r.cell - 0.5).round();
        if c < 0.0 || c >= r.res as f64 {
            return 0.0;
        }
        coords.push(c as usize);
    }
    r.values[r.index(&coords)]
}

/// Largest axis-aligned box on which the density exceeds
/// `threshold_fraction` times its median positive value, on `grid` and,
/// when given, also on the coarser `coarse` grid.
pub fn sumset_interior(
    grid: &ConvolutionGrid,
    threshold_fraction: f64,
    coarse: Option<&ConvolutionGrid>,
) -> Result<SumsetReport> {
    let r = &grid.density;
    let d = r.d;
    let empty = SumsetReport {
        threshold_fraction,
        median: None,
        low: vec![0.0; d],
        high: vec![0.0; d],
        nodes: vec![0; d],
    };
    let Some((med, mut mask)) = superlevel(grid, threshold_fraction) else {
        return Ok(empty);
    };
    if let Some(c) = coarse {
        let Some((cmed, _)) = superlevel(c, threshold_fraction) else {
            return Ok(SumsetReport {
                median: Some(med),
                ..empty
            });
        };
        let mut x = vec![0.0; d];
        for (i, m) in mask.iter_mut().enumerate() {
            if *m {
                r.midpoint_into(i, &mut x);
                *m = nearest_value(&c.density, &x) > threshold_fraction * cmed;
            }
        }
    }
    let (start, count) = match d {
        1 => longest_run(&mask),
        2 => largest_rectangle(&mask, r.res),
        _ => return Err(Error::Unsupported("sumset boxes are implemented for d = 1, 2".into())),
    };
    if count.iter().any(|&c| c == 0) {
        return Ok(SumsetReport {
            median: Some(med),
            ..empty
        });
    }
    let node = |axis: usize, i: usize| r.low[axis] + (i as f64 + 0.5) * r.cell;
    Ok(SumsetReport {
        threshold_fraction,
        median: Some(med),
        low: (0..d).map(|a| node(a, start[a])).collect(),
        high: (0..d).map(|a| node(a, start[a] + count[a] - 1)).collect(),
        nodes: count,
    })
}

fn longest_run(mask: &[bool]) -> (Vec<usize>, Vec<usize>) {
    let (mut best, mut best_start) = (0, 0);
    let (mut run, mut run_start) = (0, 0);
    for (i, &m) in mask.iter().enumerate() {
        if m {
            if run == 0 {
                run_start = i;
            }
            run += 1;
            if run > best {
                best = run;
                best_start = run_start;
            }
        } else {
            run = 0;
        }
    }
    (vec![best_start], vec![best])
}

/// Maximal-area rectangle of `true` cells (histogram stack per row).
fn largest_rectangle(mask: &[bool], res: usize) -> (Vec<usize>, Vec<usize>) {
    let mut heights = vec![0usize; res];
    let mut best = (0usize, vec![0, 0], vec![0, 0]);
    for j in 0..res {
        for i in 0..res {
            heights[i] = if mask[i + j * res] { heights[i] + 1 } else { 0 };
        }
        let mut stack: Vec<usize> = Vec::new();
        for i in 0..=res {
            let h = if i < res { heights[i] } else { 0 };
            while let Some(&top) = stack.last() {
                if heights[top] <= h {
                    break;
                }
                stack.pop();
                let height = heights[top];
                let left = stack.last().map_or(0, |&l| l + 1);
                let width = i - left;
                if width * height > best.0 {
                    best = (width * height, vec![left, j + 1 - height], vec![width, height]);
                }
            }
            stack.push(i);
        }
    }
    (best.1, best.2)
}
