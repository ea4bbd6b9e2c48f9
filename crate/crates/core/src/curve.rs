//! Zero sets of bivariate polynomials inside a clip ball, traced by
//! predictor-corrector continuation from grid-seeded starting points.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Gradient norm below which a traced point counts as singular.
pub const SINGULAR_GRAD: f64 = 1e-6;

const SEED_GRID: usize = 256;

/// Polynomial of degree <= 4 with dense graded-lex coefficients
/// `1, x, y, x^2, xy, y^2, x^3, x^2 y, ...`, clipped to `B(0, upsilon_radius)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CurveDoc", into = "CurveDoc")]
pub struct CurveParam {
    coeffs: Vec<f64>,
    degree: usize,
    upsilon_radius: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurveDoc {
    coeffs: Vec<f64>,
    #[serde(default = "one")]
    upsilon_radius: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<CurveDoc> for CurveParam {
    type Error = Error;
    fn try_from(doc: CurveDoc) -> Result<Self> {
        CurveParam::new(doc.coeffs, doc.upsilon_radius)
    }
}

impl From<CurveParam> for CurveDoc {
    fn from(c: CurveParam) -> Self {
        CurveDoc {
            coeffs: c.coeffs,
            upsilon_radius: c.upsilon_radius,
        }
    }
}

impl CurveParam {
    pub fn new(coeffs: Vec<f64>, upsilon_radius: f64) -> Result<Self> {
        let degree = match coeffs.len() {
            1 => 0,
            3 => 1,
            6 => 2,
            10 => 3,
            15 => 4,
            n => return Err(invalid(format!("{n} coefficients is not a full graded-lex list of degree <= 4"))),
        };
        if !(upsilon_radius > 0.0) {
            return Err(invalid("clip radius must be positive"));
        }
        Ok(Self {
            coeffs,
            degree,
            upsilon_radius,
        })
    }

    /// `x^2 + y^2 - r^2`.
    pub fn circle(r: f64, upsilon_radius: f64) -> Self {
        Self::new(vec![-r * r, 0.0, 0.0, 1.0, 0.0, 1.0], upsilon_radius).expect("valid")
    }

    /// `y - h`.
    pub fn horizontal(h: f64, upsilon_radius: f64) -> Self {
        Self::new(vec![-h, 0.0, 1.0], upsilon_radius).expect("valid")
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn upsilon_radius(&self) -> f64 {
        self.upsilon_radius
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.eval_grad(p).0
    }

    /// `(P, dP/dx, dP/dy)`.
    pub fn eval_grad(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        let [x, y] = p;
        let mut xp = [1.0; 5];
        let mut yp = [1.0; 5];
        for i in 1..5 {
            xp[i] = xp[i - 1] * x;
            yp[i] = yp[i - 1] * y;
        }
        let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
        let mut idx = 0;
        for t in 0..=self.degree {
            for i in (0..=t).rev() {
                let j = t - i;
                let c = self.coeffs[idx];
                idx += 1;
                if c == 0.0 {
                    continue;
                }
                v += c * xp[i] * yp[j];
                if i > 0 {
                    gx += c * i as f64 * xp[i - 1] * yp[j];
                }
                if j > 0 {
                    gy += c * j as f64 * xp[i] * yp[j - 1];
                }
            }
        }
        (v, [gx, gy])
    }

    pub fn grad_norm(&self, p: [f64; 2]) -> f64 {
        let (_, g) = self.eval_grad(p);
        g[0].hypot(g[1])
    }

    /// Newton projection onto the zero set along the gradient.
    fn project(&self, mut p: [f64; 2]) -> Option<[f64; 2]> {
        let tol = 1e-14 * self.upsilon_radius.max(1.0);
        for _ in 0..30 {
            let (v, g) = self.eval_grad(p);
            let g2 = g[0] * g[0] + g[1] * g[1];
            if g2 == 0.0 {
                return None;
            }
            let step = [v * g[0] / g2, v * g[1] / g2];
            p = [p[0] - step[0], p[1] - step[1]];
            if step[0].hypot(step[1]) < tol {
                return Some(p);
            }
        }
        let (v, g) = self.eval_grad(p);
        (v.abs() / g[0].hypot(g[1]) < 1e-10).then_some(p)
    }

    fn tangent(&self, p: [f64; 2]) -> ([f64; 2], f64) {
        let (_, g) = self.eval_grad(p);
        let n = g[0].hypot(g[1]);
        ([-g[1] / n, g[0] / n], n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub point: [f64; 2],
    pub tangent: [f64; 2],
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub points: Vec<TracePoint>,
    /// The last point connects back to the first.
    pub closed: bool,
}

impl Component {
    pub fn segments(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        let n = self.points.len();
        let extra = usize::from(self.closed && n > 2);
        (0..(n.saturating_sub(1) + extra)).map(move |i| (self.points[i].point, self.points[(i + 1) % n].point))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1])).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub components: Vec<Component>,
}

impl Trace {
    pub fn length(&self) -> f64 {
        self.components.iter().map(Component::length).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn segments(&self) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
        self.components.iter().flat_map(Component::segments)
    }

    /// Midpoint-rule integral of `f` against arclength.
    pub fn integrate(&self, mut f: impl FnMut([f64; 2]) -> f64) -> f64 {
        self.segments()
            .map(|(a, b)| {
                let len = (a[0] - b[0]).hypot(a[1] - b[1]);
                len * f([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])])
            })
            .sum()
    }
}

/// Spatial hash of traced vertices for seed deduplication.
struct VertexIndex {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<[f64; 2]>>,
}

impl VertexIndex {
    fn new(cell: f64) -> Self {
        Self {
            cell,
            buckets: HashMap::new(),
        }
    }

    fn key(&self, p: [f64; 2]) -> (i64, i64) {
        ((p[0] / self.cell).floor() as i64, (p[1] / self.cell).floor() as i64)
    }

    fn insert(&mut self, p: [f64; 2]) {
        let k = self.key(p);
        self.buckets.entry(k).or_default().push(p);
    }

    fn near(&self, p: [f64; 2], radius: f64) -> bool {
        let (kx, ky) = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(b) = self.buckets.get(&(kx + dx, ky + dy)) {
                    if b.iter().any(|q| (q[0] - p[0]).hypot(q[1] - p[1]) < radius) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

enum MarchEnd {
    Closed,
    Boundary,
}

/// Follow the curve from `start` in direction `sign` until it leaves the clip
/// ball or returns to `start`.
fn march(curve: &CurveParam, start: [f64; 2], sign: f64, step: f64) -> Result<(Vec<TracePoint>, MarchEnd)> {
    let r = curve.upsilon_radius;
    let max_steps = (200.0 * r / step) as usize * (curve.degree.max(1) + 1) * 4 + 1000;
    let mut pts = Vec::new();
    let mut x = start;
    let mut travelled = 0.0;
    let mut h = step;
    for _ in 0..max_steps {
        let (t, g) = curve.tangent(x);
        if g < SINGULAR_GRAD {
            return Err(Error::Singular { x: x[0], y: x[1], grad: g });
        }
        let t = [sign * t[0], sign * t[1]];
        let pred = [x[0] + h * t[0], x[1] + h * t[1]];
        let corr = match curve.project(pred) {
            Some(c) => c,
            None => {
                h *= 0.5;
                if h < step * 1e-4 {
                    return Err(Error::Singular { x: x[0], y: x[1], grad: g });
                }
                continue;
            }
        };
        let moved = (corr[0] - x[0]).hypot(corr[1] - x[1]);
        let (t_new, g_new) = curve.tangent(corr);
        let turn = t_new[0] * sign * t[0] + t_new[1] * sign * t[1];
        if moved < 0.5 * h || moved > 2.0 * h || turn < 0.95 {
            h *= 0.5;
            if h < step * 1e-4 {
                return Err(Error::Singular { x: x[0], y: x[1], grad: g });
            }
            continue;
        }
        if g_new < SINGULAR_GRAD {
            return Err(Error::Singular { x: corr[0], y: corr[1], grad: g_new });
        }
        if corr[0].hypot(corr[1]) >= r {
            // finish on the clip circle: solve |x + s (corr - x)| = r
            let dx = [corr[0] - x[0], corr[1] - x[1]];
            let a = dx[0] * dx[0] + dx[1] * dx[1];
            let b = 2.0 * (x[0] * dx[0] + x[1] * dx[1]);
            let c = x[0] * x[0] + x[1] * x[1] - r * r;
            let s = ((-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a)).clamp(0.0, 1.0);
            let end = [x[0] + s * dx[0], x[1] + s * dx[1]];
            let (te, ge) = curve.tangent(end);
            pts.push(TracePoint {
                point: end,
                tangent: [sign * te[0], sign * te[1]],
                grad_norm: ge,
            });
            return Ok((pts, MarchEnd::Boundary));
        }
        travelled += moved;
        let back = (corr[0] - start[0]).hypot(corr[1] - start[1]);
        if travelled > 3.0 * step && back < 1.01 * h {
            return Ok((pts, MarchEnd::Closed));
        }
        pts.push(TracePoint {
            point: corr,
            tangent: [sign * t_new[0], sign * t_new[1]],
            grad_norm: g_new,
        });
        x = corr;
        h = (2.0 * h).min(step);
    }
    Err(Error::Resource("curve tracing exceeded its step budget".into()))
}

/// Polyline covering `P^{-1}(0) ∩ Upsilon` with vertex spacing close to `step`.
pub fn trace_curve(curve: &CurveParam, step: f64) -> Result<Trace> {
    if !(step > 0.0) {
        return Err(invalid("trace step must be positive"));
    }
    let r = curve.upsilon_radius;
    // grid slightly shifted so that coordinate-aligned curves do not pass
    // through nodes
    let h = 2.0 * r / SEED_GRID as f64;
    let shift = h * 0.123_456_789;
    let node = |i: usize, j: usize| [-r + i as f64 * h + shift, -r + j as f64 * h + shift * 0.618];
    let n = SEED_GRID + 1;
    let values: Vec<f64> = (0..n * n).map(|idx| curve.eval(node(idx % n, idx / n))).collect();
    let mut seeds = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let v = values[i + j * n];
            for (ni, nj) in [(i + 1, j), (i, j + 1)] {
                if ni >= n || nj >= n {
                    continue;
                }
                let w = values[ni + nj * n];
                if (v >= 0.0) == (w >= 0.0) {
                    continue;
                }
                let (mut a, mut b) = (node(i, j), node(ni, nj));
                let mut fa = v;
                for _ in 0..60 {
                    let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                    let fm = curve.eval(m);
                    if (fm >= 0.0) == (fa >= 0.0) {
                        a = m;
                        fa = fm;
                    } else {
                        b = m;
                    }
                }
                let p = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                if p[0].hypot(p[1]) < r {
                    seeds.push(p);
                }
            }
        }
    }

    let mut index = VertexIndex::new(2.0 * step.max(h));
    let mut trace = Trace::default();
    for seed in seeds {
        if index.near(seed, 1.5 * step) {
            continue;
        }
        let start = curve.project(seed).unwrap_or(seed);
        if start[0].hypot(start[1]) >= r {
            continue;
        }
        let g = curve.grad_norm(start);
        if g < SINGULAR_GRAD {
            return Err(Error::Singular { x: start[0], y: start[1], grad: g });
        }
        let (t0, _) = curve.tangent(start);
        let first = TracePoint {
            point: start,
            tangent: t0,
            grad_norm: g,
        };
        let (forward, end) = march(curve, start, 1.0, step)?;
        let component = match end {
            MarchEnd::Closed => {
                let mut points = vec![first];
                points.extend(forward);
                Component { points, closed: true }
            }
            MarchEnd::Boundary => {
                let (backward, _) = march(curve, start, -1.0, step)?;
                let mut points: Vec<TracePoint> = backward
                    .into_iter()
                    .rev()
                    .map(|p| TracePoint {
                        tangent: [-p.tangent[0], -p.tangent[1]],
                        ..p
                    })
                    .collect();
                points.push(first);
                points.extend(forward);
                Component { points, closed: false }
            }
        };
        for p in &component.points {
            index.insert(p.point);
        }
        trace.components.push(component);
    }
    Ok(trace)
}

/// Boundary tent, 8 clamped linear functions, then cones on refining grids.
fn probe(index: usize, radius: f64, p: [f64; 2]) -> f64 {
    let edge = (radius - p[0].hypot(p[1])).max(0.0);
    if index == 0 {
        return edge;
    }
    if index <= 8 {
        let theta = (index - 1) as f64 * std::f64::consts::PI / 8.0;
        let (s, c) = theta.sin_cos();
        return (p[0] * c + p[1] * s).clamp(-edge, edge);
    }
    // grid level L has (2^L + 1)^2 centres with spacing 2R / 2^L
    let mut rest = index - 9;
    let mut level = 1u32;
    loop {
        let side = (1usize << level) + 1;
        if rest < side * side {
            let spacing = 2.0 * radius / (1u64 << level) as f64;
            let c = [
                -radius + (rest % side) as f64 * spacing,
                -radius + (rest / side) as f64 * spacing,
            ];
            let cone = (spacing - (p[0] - c[0]).hypot(p[1] - c[1])).max(0.0);
            return cone.min(edge);
        }
        rest -= side * side;
        level += 1;
    }
}

/// Lower bound for the distance between the length measures of two curves:
/// the largest gap `|∫ f dη_V − ∫ f dη_W|` over the first `probe_functions`
/// members of a fixed family of 1-Lipschitz functions supported in the clip
/// ball. Adding probes never decreases the result.
pub fn curve_distance(v: &CurveParam, w: &CurveParam, probe_functions: usize) -> Result<f64> {
    let radius = v.upsilon_radius.max(w.upsilon_radius);
    let step = 1e-3 * radius;
    let tv = trace_curve(v, step)?;
    let tw = trace_curve(w, step)?;
    let mids = |t: &Trace| -> Vec<([f64; 2], f64)> {
        t.segments()
            .map(|(a, b)| ([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])], (a[0] - b[0]).hypot(a[1] - b[1])))
            .collect()
    };
    let (mv, mw) = (mids(&tv), mids(&tw));
    let mut best: f64 = 0.0;
    for i in 0..probe_functions {
        let iv: f64 = mv.iter().map(|&(p, len)| len * probe(i, radius, p)).sum();
        let iw: f64 = mw.iter().map(|&(p, len)| len * probe(i, radius, p)).sum();
        best = best.max((iv - iw).abs());
    }
    Ok(best)
}
