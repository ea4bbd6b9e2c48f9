//! Intersection masses `Y_n = ∫ mu_n d eta` against planes, curves and
//! self-similar measures.

use serde::{Deserialize, Serialize};

use crate::analysis::{linear_fit, median, AnalysisReport, LinearFit};
use crate::curve::{trace_curve, CurveParam};
use crate::cutout::{CutoutRealization, Region};
use crate::density::Density;
use crate::error::{invalid, Error, Result};
use crate::families::{FamilyParam, IfsParam, PlaneParam};
use crate::geom::{clip_segment, dot, HalfOpenBox};
use crate::model::Realization;
use crate::subdivision::{pack_coords, unpack_coords, SubdivisionTree};

pub const DEFAULT_QUADRATURE_TOL: f64 = 1e-2;
pub const DEFAULT_LEAF_BUDGET: usize = 10_000_000;
const MAX_QUADRATURE_POINTS: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Quadrature,
    Cylinder,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Quadrature => "quadrature",
            Method::Cylinder => "cylinder",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameter range `[t0, t1]` where `point + t dir` lies in the box.
fn line_extent(point: &[f64], dir: &[f64], bbox: &HalfOpenBox) -> Option<(f64, f64)> {
    let reach = bbox.diameter() + point.iter().zip(bbox.center()).map(|(a, b)| (a - b).abs()).sum::<f64>() + 1.0;
    let p0: Vec<f64> = point.iter().zip(dir).map(|(p, u)| p - reach * u).collect();
    let p1: Vec<f64> = point.iter().zip(dir).map(|(p, u)| p + reach * u).collect();
    clip_segment(&p0, &p1, bbox).map(|(a, b)| (-reach + 2.0 * reach * a, -reach + 2.0 * reach * b))
}

/// Line through surviving level-`n` cells: density times clipped length,
/// descending only into cells the line meets.
pub fn exact_line_tree(tree: &SubdivisionTree, plane: &PlaneParam, n: usize) -> Result<f64> {
    if plane.k() != 1 || plane.d() != tree.d {
        return Err(invalid("the exact tree engine needs a line in the tree's dimension"));
    }
    if n > tree.depth {
        return Err(invalid(format!("level {n} exceeds realization depth {}", tree.depth)));
    }
    let d = tree.d;
    let u = &plane.basis()[0];
    let Some((t0, t1)) = line_extent(plane.point(), u, &HalfOpenBox::unit(d)) else {
        return Ok(0.0);
    };
    let p0: Vec<f64> = plane.point().iter().zip(u).map(|(p, v)| p + t0 * v).collect();
    let p1: Vec<f64> = plane.point().iter().zip(u).map(|(p, v)| p + t1 * v).collect();
    let len = t1 - t0;
    let mut total = 0.0;
    let mut stack = vec![(0usize, 0u64)];
    while let Some((level, key)) = stack.pop() {
        let coords = unpack_coords(key, d);
        let Some(cell) = tree.find(level, key) else { continue };
        let Some((a, b)) = clip_segment(&p0, &p1, &HalfOpenBox::dyadic(level as u32, &coords)) else {
            continue;
        };
        if level == n {
            total += cell.density * (b - a) * len;
            continue;
        }
        for child in 0..(1usize << d) {
            let c: Vec<u64> = coords.iter().enumerate().map(|(i, &v)| 2 * v + ((child >> i) & 1) as u64).collect();
            stack.push((level + 1, pack_coords(&c)));
        }
    }
    Ok(total)
}

/// Length of a union of intervals after merging endpoints closer than `tol`.
pub fn interval_union_length(mut intervals: Vec<(f64, f64)>, tol: f64) -> f64 {
    intervals.retain(|(a, b)| b > a);
    intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut total = 0.0;
    let mut current: Option<(f64, f64)> = None;
    for (a, b) in intervals {
        match current {
            Some((ca, cb)) if a <= cb + tol => current = Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                total += cb - ca;
                current = Some((a, b));
            }
            None => current = Some((a, b)),
        }
    }
    if let Some((a, b)) = current {
        total += b - a;
    }
    total
}

/// Line minus the chords of every ball cut out before level `n`, inside a
/// ball seed domain.
pub fn exact_line_cutout(c: &CutoutRealization, plane: &PlaneParam, n: usize) -> Result<f64> {
    if plane.k() != 1 || plane.d() != c.d {
        return Err(invalid("the exact cutout engine needs a line in the model's dimension"));
    }
    if n > c.depth {
        return Err(invalid(format!("level {n} exceeds realization depth {}", c.depth)));
    }
    let Region::Ball { center, radius } = &c.domain else {
        return Err(Error::Unsupported("exact chords need a ball seed domain".into()));
    };
    let p = plane.point();
    let u = &plane.basis()[0];
    let tc: f64 = center.iter().zip(p).zip(u).map(|((ci, pi), ui)| (ci - pi) * ui).sum();
    let dist2: f64 = (0..c.d).map(|i| (p[i] + tc * u[i] - center[i]).powi(2)).sum();
    if dist2 >= radius * radius {
        return Ok(0.0);
    }
    let half = (radius * radius - dist2).sqrt();
    let (lo, hi) = (tc - half, tc + half);
    let chords: Vec<(f64, f64)> = c
        .line_chords(p, u, n)?
        .into_iter()
        .map(|(a, b)| (a.max(lo), b.min(hi)))
        .collect();
    let covered = interval_union_length(chords, 1e-12 * 2.0 * radius);
    Ok((c.alpha * n as f64).exp2() * (hi - lo - covered).max(0.0))
}

/// Composite midpoint rule over the plane inside the density's support box
/// with step `tol * 2^{-n}`.
pub fn quadrature_plane<D: Density + ?Sized>(density: &D, plane: &PlaneParam, n: usize, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(invalid("quadrature tolerance must be positive"));
    }
    if plane.d() != density.dim() {
        return Err(invalid("plane and model dimensions differ"));
    }
    let step = tol * (-(n as f64)).exp2();
    let bbox = density.support();
    let p = plane.point();
    match plane.k() {
        1 => {
            let u = &plane.basis()[0];
            let Some((t0, t1)) = line_extent(p, u, &bbox) else {
                return Ok(0.0);
            };
            let count = ((t1 - t0) / step).ceil();
            if count > MAX_QUADRATURE_POINTS {
                return Err(Error::Resource(format!("quadrature would need {count:.3e} points")));
            }
            let count = count.max(1.0) as usize;
            let h = (t1 - t0) / count as f64;
            let mut x = vec![0.0; p.len()];
            let mut sum = 0.0;
            for i in 0..count {
                let t = t0 + (i as f64 + 0.5) * h;
                for (j, xj) in x.iter_mut().enumerate() {
                    *xj = p[j] + t * u[j];
                }
                sum += density.evaluate(&x, n);
            }
            Ok(sum * h)
        }
        2 => {
            let (e1, e2) = (&plane.basis()[0], &plane.basis()[1]);
            // bounding rectangle of the box's corners in plane coordinates
            let d = p.len();
            let mut range = [(f64::INFINITY, f64::NEG_INFINITY); 2];
            for corner in 0..(1usize << d) {
                let x: Vec<f64> = (0..d)
                    .map(|a| if corner >> a & 1 == 1 { bbox.high()[a] } else { bbox.low()[a] } - p[a])
                    .collect();
                for (r, e) in range.iter_mut().zip([e1, e2]) {
                    let t = dot(&x, e);
                    r.0 = r.0.min(t);
                    r.1 = r.1.max(t);
                }
            }
            let counts: Vec<f64> = range.iter().map(|r| ((r.1 - r.0) / step).ceil().max(1.0)).collect();
            if counts[0] * counts[1] > MAX_QUADRATURE_POINTS {
                return Err(Error::Resource(format!(
                    "quadrature would need {:.3e} points",
                    counts[0] * counts[1]
                )));
            }
            let (n1, n2) = (counts[0] as usize, counts[1] as usize);
            let h1 = (range[0].1 - range[0].0) / n1 as f64;
            let h2 = (range[1].1 - range[1].0) / n2 as f64;
            let mut x = vec![0.0; d];
            let mut sum = 0.0;
            for j in 0..n2 {
                let b = range[1].0 + (j as f64 + 0.5) * h2;
                for i in 0..n1 {
                    let a = range[0].0 + (i as f64 + 0.5) * h1;
                    for (k, xk) in x.iter_mut().enumerate() {
                        *xk = p[k] + a * e1[k] + b * e2[k];
                    }
                    sum += density.evaluate(&x, n);
                }
            }
            Ok(sum * h1 * h2)
        }
        k => Err(Error::Unsupported(format!("{k}-planes are not supported"))),
    }
}

/// The exact engine applies to lines against trees and against ball
/// cutouts in a ball domain.
pub fn exact_supported(realization: &Realization, plane: &PlaneParam) -> bool {
    plane.k() == 1
        && match realization {
            Realization::Tree(_) => true,
            Realization::Cutout(c) => c.spec.all_balls() && matches!(c.domain, Region::Ball { .. }),
        }
}

/// `Y_n^V` for a plane `V`.
pub fn mass_on_plane(realization: &Realization, plane: &PlaneParam, n: usize, method: Method, tol: f64) -> Result<f64> {
    match method {
        Method::Exact => match realization {
            Realization::Tree(t) => exact_line_tree(t, plane, n),
            Realization::Cutout(c) => exact_line_cutout(c, plane, n),
        },
        Method::Quadrature => quadrature_plane(realization, plane, n, tol),
        Method::Cylinder => Err(invalid("the cylinder engine applies to self-similar families only")),
    }
}

/// `∫ mu_n dH^1` over the traced curve, optionally weighted by `1/|grad P|`.
pub fn mass_on_curve<D: Density + ?Sized>(
    density: &D,
    curve: &CurveParam,
    n: usize,
    step: f64,
    weighted: bool,
) -> Result<f64> {
    if density.dim() != 2 {
        return Err(invalid("curves live in the plane"));
    }
    let trace = trace_curve(curve, step)?;
    Ok(trace.integrate(|p| {
        let v = density.evaluate(&p, n);
        if weighted && v != 0.0 {
            v / curve.grad_norm(p)
        } else {
            v
        }
    }))
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    m: [[f64; 2]; 2],
    t: [f64; 2],
    ratio: f64,
}

impl Affine {
    fn identity() -> Self {
        Affine {
            m: [[1.0, 0.0], [0.0, 1.0]],
            t: [0.0; 2],
            ratio: 1.0,
        }
    }

    fn of(s: &crate::families::Similarity, d: usize) -> Self {
        if d == 1 {
            let flip = if (s.angle_degrees.rem_euclid(360.0) - 180.0).abs() < 1e-9 { -1.0 } else { 1.0 };
            return Affine {
                m: [[flip * s.ratio, 0.0], [0.0, 0.0]],
                t: [s.translate[0], 0.0],
                ratio: s.ratio,
            };
        }
        let (sn, cs) = s.angle_degrees.to_radians().sin_cos();
        Affine {
            m: [[s.ratio * cs, -s.ratio * sn], [s.ratio * sn, s.ratio * cs]],
            t: [s.translate[0], s.translate[1]],
            ratio: s.ratio,
        }
    }

    /// `self ∘ other`.
    fn compose(&self, o: &Affine) -> Affine {
        let mut m = [[0.0; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j];
            }
        }
        let t = [
            self.m[0][0] * o.t[0] + self.m[0][1] * o.t[1] + self.t[0],
            self.m[1][0] * o.t[0] + self.m[1][1] * o.t[1] + self.t[1],
        ];
        Affine {
            m,
            t,
            ratio: self.ratio * o.ratio,
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let y = [x[0], x.get(1).copied().unwrap_or(0.0)];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.m[i][0] * y[0] + self.m[i][1] * y[1] + self.t[i];
        }
    }
}

/// The ball `f(B(c, radius))` lies inside one dyadic cell of side `1/cells`.
fn inside_one_cell(f: &Affine, c: &[f64], radius: f64, cells: f64, x: &mut [f64]) -> bool {
    f.apply(c, x);
    x.iter()
        .all(|&v| ((v - radius) * cells).floor() == ((v + radius) * cells).floor())
}

/// `∫ mu_n d nu` for the self-similar measure `nu`: words are expanded until
/// their cylinder ball has diameter at most `diam_tol` (default
/// `2^{-n} / 4`) and does not straddle a level-`n` dyadic boundary (or has
/// shrunk a further `2^{-8}`), then each leaf contributes `nu(w) mu_n(centre)`.
pub fn mass_on_ifs<D: Density + ?Sized>(
    density: &D,
    ifs: &IfsParam,
    n: usize,
    diam_tol: Option<f64>,
    leaf_budget: usize,
) -> Result<f64> {
    let d = ifs.d();
    if density.dim() != d {
        return Err(invalid("IFS and model dimensions differ"));
    }
    let tol = diam_tol.unwrap_or((-(n as f64)).exp2() / 4.0);
    if !(tol > 0.0) {
        return Err(invalid("diam_tol must be positive"));
    }
    let (c, r) = ifs.invariant_ball();
    let maps: Vec<Affine> = ifs.maps().iter().map(|s| Affine::of(s, d)).collect();
    let probs = ifs.probs();
    let mut leaves = 0usize;
    let mut total = 0.0;
    let mut x = vec![0.0; d];
    let mut stack = vec![(Affine::identity(), 1.0f64)];
    let cells = (n as f64).exp2();
    let floor = tol * (-8f64).exp2();
    while let Some((f, w)) = stack.pop() {
        let diam = 2.0 * f.ratio * r;
        if diam <= tol && (diam <= floor || inside_one_cell(&f, &c, f.ratio * r, cells, &mut x)) {
            leaves += 1;
            if leaves > leaf_budget {
                return Err(Error::Resource(format!("cylinder recursion exceeded {leaf_budget} leaves")));
            }
            f.apply(&c, &mut x);
            total += w * density.evaluate(&x, n);
            continue;
        }
        // reverse order keeps the traversal lexicographic
        for (g, p) in maps.iter().zip(probs).rev() {
            stack.push((f.compose(g), w * p));
        }
    }
    Ok(total)
}

/// Engine settings shared by batch computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineOptions {
    /// Force a plane engine; `None` picks exact when supported.
    pub method: Option<Method>,
    pub quadrature_tol: f64,
    /// Curve tracing step; `None` uses `min(1e-3, 2^{-n}/8)`.
    pub curve_step: Option<f64>,
    pub weighted_curve: bool,
    pub diam_tol: Option<f64>,
    pub leaf_budget: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            method: None,
            quadrature_tol: DEFAULT_QUADRATURE_TOL,
            curve_step: None,
            weighted_curve: false,
            diam_tol: None,
            leaf_budget: DEFAULT_LEAF_BUDGET,
        }
    }
}

/// `Y_n^t` for any family member, with the engine that produced it.
pub fn family_mass(realization: &Realization, family: &FamilyParam, n: usize, opts: &EngineOptions) -> Result<(f64, Method)> {
    match family {
        FamilyParam::Plane(p) => {
            let method = opts.method.unwrap_or(if exact_supported(realization, p) {
                Method::Exact
            } else {
                Method::Quadrature
            });
            Ok((mass_on_plane(realization, p, n, method, opts.quadrature_tol)?, method))
        }
        FamilyParam::Curve(c) => {
            let step = opts.curve_step.unwrap_or_else(|| 1e-3f64.min((-(n as f64)).exp2() / 8.0));
            Ok((mass_on_curve(realization, c, n, step, opts.weighted_curve)?, Method::Quadrature))
        }
        FamilyParam::Ifs(f) => Ok((
            mass_on_ifs(realization, f, n, opts.diam_tol, opts.leaf_budget)?,
            Method::Cylinder,
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `s > alpha`: `Y_n` converges.
    Limit,
    /// `s <= alpha`: only growth bounds hold.
    Growth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassSequence {
    pub family_id: String,
    pub values: Vec<f64>,
    /// `|Y_{m+1} - Y_m|`.
    pub increments: Vec<f64>,
    pub method: Method,
    pub regime: Regime,
    /// Fit of `log2 |Y_{m+1} - Y_m|` against `m` over the last half of the
    /// levels; `None` when fewer than two increments there are nonzero.
    pub decay: Option<LinearFit>,
    /// Slope of `log2 Y_m` over the last half of the levels, growth regime only.
    pub growth_theta: Option<f64>,
    pub warnings: Vec<String>,
}

impl MassSequence {
    pub fn decay_slope(&self) -> Option<f64> {
        self.decay.map(|f| f.slope)
    }

    /// The last value, the best available estimate of `Y^t`.
    pub fn last(&self) -> f64 {
        *self.values.last().expect("nonempty")
    }
}

pub fn mass_sequence(
    realization: &Realization,
    family: &FamilyParam,
    family_id: &str,
    n_max: usize,
    opts: &EngineOptions,
) -> Result<MassSequence> {
    if n_max > realization.max_level() {
        return Err(invalid(format!(
            "n_max {n_max} exceeds realization depth {}",
            realization.max_level()
        )));
    }
    let mut values = Vec::with_capacity(n_max + 1);
    let mut method = Method::Exact;
    for m in 0..=n_max {
        let (y, used) = family_mass(realization, family, m, opts)?;
        values.push(y.max(0.0));
        method = used;
    }
    let increments: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let start = n_max / 2;
    let (xs, ys): (Vec<f64>, Vec<f64>) = increments
        .iter()
        .enumerate()
        .skip(start)
        .filter(|(_, v)| **v > 0.0)
        .map(|(m, v)| (m as f64, v.log2()))
        .unzip();
    let decay = linear_fit(&xs, &ys);
    let s = family.frostman_exponent();
    let alpha = realization.alpha();
    let mut warnings = Vec::new();
    let (regime, growth_theta) = if s > alpha {
        (Regime::Limit, None)
    } else {
        warnings.push(format!("s = {s} <= alpha = {alpha}: the hypothesis s > alpha fails, growth regime"));
        let (xs, ys): (Vec<f64>, Vec<f64>) = values
            .iter()
            .enumerate()
            .skip(start)
            .filter(|(_, v)| **v > 0.0)
            .map(|(m, v)| (m as f64, v.log2()))
            .unzip();
        (Regime::Growth, linear_fit(&xs, &ys).map(|f| f.slope))
    };
    Ok(MassSequence {
        family_id: family_id.to_string(),
        values,
        increments,
        method,
        regime,
        decay,
        growth_theta,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionProfile {
    /// The plane `W` projected onto.
    pub direction: PlaneParam,
    pub n: usize,
    /// Fiber offsets in the coordinates of `W`'s basis.
    pub offsets: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub spacing: Vec<f64>,
    pub riemann_sum: f64,
    pub total_mass: f64,
    /// `riemann_sum - total_mass`.
    pub mass_defect: f64,
    pub method: Method,
}

impl ProjectionProfile {
    fn jumps(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).collect()
    }

    /// Largest difference between neighbouring samples (1-dimensional profiles).
    pub fn max_jump(&self) -> f64 {
        self.jumps().into_iter().fold(0.0, f64::max)
    }

    pub fn median_jump(&self) -> f64 {
        median(&self.jumps()).unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("offset,value\n");
        for (t, v) in self.offsets.iter().zip(&self.values) {
            let t: Vec<String> = t.iter().map(|x| x.to_string()).collect();
            out.push_str(&format!("{},{v}\n", t.join(" ")));
        }
        out
    }
}

/// Samples `f_n(t) = Y_n` on the fibers `W⊥ + t` for `grid_points` offsets
/// per axis of `W`, covering the projection of the support box.
pub fn projection_profile(
    realization: &Realization,
    w: &PlaneParam,
    n: usize,
    grid_points: usize,
    opts: &EngineOptions,
) -> Result<ProjectionProfile> {
    let d = w.d();
    let k = w.k();
    if d != realization.dim() || d <= k {
        return Err(invalid("projection target must be a proper plane in the model's dimension"));
    }
    if grid_points == 0 {
        return Err(invalid("grid_points must be positive"));
    }
    let bbox = realization.support();
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); k];
    for corner in 0..(1usize << d) {
        let x: Vec<f64> = (0..d)
            .map(|a| if corner >> a & 1 == 1 { bbox.high()[a] } else { bbox.low()[a] } - w.point()[a])
            .collect();
        for (r, e) in ranges.iter_mut().zip(w.basis()) {
            let t = dot(&x, e);
            r.0 = r.0.min(t);
            r.1 = r.1.max(t);
        }
    }
    let spacing: Vec<f64> = ranges.iter().map(|r| (r.1 - r.0) / grid_points as f64).collect();
    let fiber_basis = w.complement_basis();
    let total_points = grid_points.pow(k as u32);
    let mut offsets = Vec::with_capacity(total_points);
    let mut values = Vec::with_capacity(total_points);
    let mut method = Method::Exact;
    for idx in 0..total_points {
        let mut rem = idx;
        let t: Vec<f64> = ranges
            .iter()
            .zip(&spacing)
            .map(|(r, h)| {
                let i = rem % grid_points;
                rem /= grid_points;
                r.0 + (i as f64 + 0.5) * h
            })
            .collect();
        let mut point = w.point().to_vec();
        for (tj, e) in t.iter().zip(w.basis()) {
            for (p, ei) in point.iter_mut().zip(e) {
                *p += tj * ei;
            }
        }
        let fiber = PlaneParam::new(point, fiber_basis.clone())?;
        let (y, used) = family_mass(realization, &FamilyParam::Plane(fiber), n, opts)?;
        method = used;
        offsets.push(t);
        values.push(y);
    }
    let cell: f64 = spacing.iter().product();
    let riemann_sum = values.iter().sum::<f64>() * cell;
    let total_mass = realization.total_mass(n);
    Ok(ProjectionProfile {
        direction: w.clone(),
        n,
        offsets,
        values,
        spacing,
        riemann_sum,
        total_mass,
        mass_defect: riemann_sum - total_mass,
        method,
    })
}

/// Hölder exponent of `t -> value` from the largest oscillation over pairs
/// at distance in `[2^{-j-1}, 2^{-j})`, fitted against `log2` distance.
pub fn holder_fit<T>(samples: &[(T, f64)], metric: impl Fn(&T, &T) -> f64) -> Result<AnalysisReport> {
    if samples.len() < 16 {
        return Err(invalid(format!("holder_fit needs at least 16 samples, got {}", samples.len())));
    }
    let first = samples[0].1;
    let columns = vec!["scale_index".to_string(), "pairs".to_string(), "oscillation".to_string()];
    if samples.iter().all(|(_, v)| *v == first) {
        return Ok(AnalysisReport {
            kind: "holder".into(),
            estimate: f64::INFINITY,
            constant: Some(0.0),
            fit: None,
            window: None,
            flags: vec!["constant".into()],
            columns,
            rows: Vec::new(),
        });
    }
    let mut bins: std::collections::BTreeMap<i64, (usize, f64)> = Default::default();
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            let dist = metric(&samples[i].0, &samples[j].0);
            if !(dist > 0.0) || !dist.is_finite() {
                continue;
            }
            let idx = (-dist.log2()).ceil() as i64 - 1;
            let e = bins.entry(idx).or_insert((0, 0.0));
            e.0 += 1;
            e.1 = e.1.max((samples[i].1 - samples[j].1).abs());
        }
    }
    let rows: Vec<Vec<f64>> = bins
        .iter()
        .map(|(j, (count, osc))| vec![*j as f64, *count as f64, *osc])
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = bins
        .iter()
        .filter(|(_, (_, osc))| *osc > 0.0)
        .map(|(j, (_, osc))| (-(*j as f64), osc.log2()))
        .unzip();
    let fit = linear_fit(&xs, &ys);
    let mut flags = Vec::new();
    if fit.is_none() {
        flags.push("too_few_scales".into());
    }
    let window = (!xs.is_empty()).then(|| {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    });
    Ok(AnalysisReport {
        kind: "holder".into(),
        estimate: fit.map_or(f64::NAN, |f| f.slope),
        constant: fit.map(|f| f.intercept.exp2()),
        fit,
        window,
        flags,
        columns,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::Similarity;
    use crate::cutout::{sample_cutouts, IntensitySpec};
    use crate::rng::{uniform, SeedPath};
    use crate::subdivision::generate_percolation;
    use rand::Rng;

    fn full_square(depth: usize) -> Realization {
        Realization::Tree(generate_percolation(2, 1.0, depth, &SeedPath::new(0)).unwrap())
    }

    #[test]
    fn diagonal_of_full_square() {
        let r = full_square(6);
        let diag = PlaneParam::line(vec![0.0, 0.0], &[1.0, 1.0]).unwrap();
        for n in 0..=6 {
            let y = mass_on_plane(&r, &diag, n, Method::Exact, 0.0).unwrap();
            assert!((y - 2f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_cutout_full_chord() {
        let c = sample_cutouts(
            &IntensitySpec::ball_with_alpha(2, 0.0).unwrap(),
            &Region::unit_ball(2),
            4,
            &SeedPath::new(1),
        )
        .unwrap();
        let line = PlaneParam::line(vec![0.0, 0.0], &[1.0, 0.0]).unwrap();
        let r = Realization::Cutout(c);
        assert!((mass_on_plane(&r, &line, 4, Method::Exact, 0.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exact_and_quadrature_agree_on_a_cutout() {
        let c = sample_cutouts(
            &IntensitySpec::ball_with_alpha(2, 0.5).unwrap(),
            &Region::unit_ball(2),
            8,
            &SeedPath::new(42),
        )
        .unwrap();
        let r = Realization::Cutout(c);
        let mut rng = SeedPath::new(7).stream();
        for _ in 0..3 {
            let theta = std::f64::consts::PI * uniform(&mut rng);
            let line = PlaneParam::line_at_angle([0.4 * uniform(&mut rng) - 0.2, 0.4 * uniform(&mut rng) - 0.2], theta);
            let e = mass_on_plane(&r, &line, 8, Method::Exact, 0.0).unwrap();
            let q = mass_on_plane(&r, &line, 8, Method::Quadrature, 1e-3).unwrap();
            assert!((e - q).abs() < 5e-3, "{e} vs {q}");
        }
    }

    #[test]
    fn exact_and_quadrature_agree_on_percolation() {
        let r = Realization::Tree(generate_percolation(2, 0.7, 6, &SeedPath::new(3)).unwrap());
        let mut rng = SeedPath::new(9).stream();
        for _ in 0..5 {
            let line = PlaneParam::line_at_angle([rng.random(), rng.random()], std::f64::consts::PI * rng.random::<f64>());
            let e = mass_on_plane(&r, &line, 6, Method::Exact, 0.0).unwrap();
            let q = mass_on_plane(&r, &line, 6, Method::Quadrature, 1e-2).unwrap();
            assert!((e - q).abs() < 5e-2, "{e} vs {q}");
        }
    }

    #[test]
    fn line_on_cell_boundary_is_counted_once() {
        let r = full_square(3);
        let line = PlaneParam::line(vec![0.0, 0.5], &[1.0, 0.0]).unwrap();
        assert!((mass_on_plane(&r, &line, 3, Method::Exact, 0.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plane_in_three_dimensions() {
        let r = Realization::Tree(generate_percolation(3, 1.0, 2, &SeedPath::new(0)).unwrap());
        let p = PlaneParam::new(vec![0.0, 0.0, 0.5], vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let y = mass_on_plane(&r, &p, 2, Method::Quadrature, 0.5).unwrap();
        assert!((y - 1.0).abs() < 1e-9, "{y}");
    }

    #[test]
    fn curve_masses() {
        let c = sample_cutouts(
            &IntensitySpec::ball_with_alpha(2, 0.0).unwrap(),
            &Region::unit_ball(2),
            2,
            &SeedPath::new(1),
        )
        .unwrap();
        let len = mass_on_curve(&c, &CurveParam::circle(0.5, 1.0), 2, 1e-3, false).unwrap();
        assert!((len - std::f64::consts::PI).abs() < 1e-3);
        let outside = CurveParam::new(vec![-4.0, 0.0, 0.0, 1.0, 0.0, 1.0], 3.0).unwrap();
        assert_eq!(mass_on_curve(&c, &outside, 2, 1e-2, false).unwrap(), 0.0);
    }

    #[test]
    fn coarea_on_the_unit_square() {
        let r = full_square(4);
        let k = 200;
        let mut total = 0.0;
        for i in 0..k {
            let u = (i as f64 + 0.5) / k as f64;
            total += mass_on_curve(&r, &CurveParam::horizontal(u, 2.0), 4, 1e-3, true).unwrap() / k as f64;
        }
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn ifs_masses() {
        let r = Realization::Tree(generate_percolation(1, 1.0, 6, &SeedPath::new(0)).unwrap());
        let y = mass_on_ifs(&r, &IfsParam::cantor(), 6, None, DEFAULT_LEAF_BUDGET).unwrap();
        assert!((y - 1.0).abs() < 1e-12);
        let far = IfsParam::natural(vec![
            crate::families::Similarity { ratio: 0.5, angle_degrees: 0.0, translate: vec![5.0] },
            crate::families::Similarity { ratio: 0.5, angle_degrees: 0.0, translate: vec![5.5] },
        ])
        .unwrap();
        assert_eq!(mass_on_ifs(&r, &far, 6, None, DEFAULT_LEAF_BUDGET).unwrap(), 0.0);
        assert!(matches!(mass_on_ifs(&r, &IfsParam::cantor(), 6, Some(1e-9), 100), Err(Error::Resource(_))));
    }

    #[test]
    fn ifs_against_monte_carlo() {
        let tree = generate_percolation(1, 0.7, 8, &SeedPath::new(12)).unwrap();
        let ifs = IfsParam::cantor();
        let exact = mass_on_ifs(&tree, &ifs, 8, None, DEFAULT_LEAF_BUDGET).unwrap();
        // draw points of the Cantor measure from random ternary digits
        let mut rng = SeedPath::new(99).stream();
        let samples = 200_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..samples {
            let mut x = 0.0;
            let mut scale = 1.0 / 3.0;
            for _ in 0..30 {
                if rng.random::<bool>() {
                    x += 2.0 * scale;
                }
                scale /= 3.0;
            }
            let v = tree.evaluate(&[x], 8);
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / samples as f64;
        let se = ((sum2 / samples as f64 - mean * mean) / samples as f64).sqrt();
        assert!((exact - mean).abs() < 3.0 * se + 1e-12, "{exact} vs {mean} ± {se}");
    }

    #[test]
    fn sierpinski_against_monte_carlo() {
        let tree = generate_percolation(2, 0.7, 8, &SeedPath::new(5)).unwrap();
        let h = 3f64.sqrt() / 4.0;
        let maps = [[0.0, 0.0], [0.5, 0.0], [0.25, h]]
            .iter()
            .map(|t| Similarity {
                ratio: 0.5,
                angle_degrees: 0.0,
                translate: t.to_vec(),
            })
            .collect();
        let ifs = IfsParam::natural(maps).unwrap();
        let exact = mass_on_ifs(&tree, &ifs, 8, None, DEFAULT_LEAF_BUDGET).unwrap();
        let mut rng = SeedPath::new(41).stream();
        let samples = 200_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..samples {
            let (mut x, mut y, mut scale) = (0.0, 0.0, 0.5);
            for _ in 0..40 {
                match rng.random_range(0..3) {
                    1 => x += scale,
                    2 => {
                        x += scale / 2.0;
                        y += scale * 2.0 * h;
                    }
                    _ => {}
                }
                scale /= 2.0;
            }
            let v = tree.evaluate(&[x, y], 8);
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / samples as f64;
        let se = ((sum2 / samples as f64 - mean * mean) / samples as f64).sqrt();
        assert!((exact - mean).abs() < 3.0 * se, "{exact} vs {mean} ± {se}");
    }

    #[test]
    fn constant_sequence_for_full_square() {
        let r = full_square(5);
        let fam = FamilyParam::Plane(PlaneParam::line_at_angle([0.3, 0.3], 0.4));
        let seq = mass_sequence(&r, &fam, "line", 5, &EngineOptions::default()).unwrap();
        assert!(seq.increments.iter().all(|v| *v < 1e-12));
        assert_eq!(seq.regime, Regime::Limit);
    }

    #[test]
    fn growth_regime_is_tagged() {
        let r = Realization::Tree(generate_percolation(2, 0.3, 5, &SeedPath::new(4)).unwrap());
        let fam = FamilyParam::Plane(PlaneParam::line_at_angle([0.5, 0.5], 0.3));
        let seq = mass_sequence(&r, &fam, "line", 5, &EngineOptions::default()).unwrap();
        assert_eq!(seq.regime, Regime::Growth);
        assert!(!seq.warnings.is_empty());
    }

    #[test]
    fn profiles_of_the_full_square() {
        let r = full_square(4);
        let x_axis = PlaneParam::line(vec![0.0, 0.0], &[1.0, 0.0]).unwrap();
        let prof = projection_profile(&r, &x_axis, 4, 64, &EngineOptions::default()).unwrap();
        assert!(prof.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(prof.mass_defect.abs() < 2.0 / 64.0);
        let diag = PlaneParam::line_at_angle([0.0, 0.0], std::f64::consts::FRAC_PI_4);
        let prof = projection_profile(&r, &diag, 4, 64, &EngineOptions::default()).unwrap();
        assert!(prof.mass_defect.abs() < 2.0 / 64.0, "{}", prof.mass_defect);
    }

    #[test]
    fn fubini_over_a_slab() {
        let tree = generate_percolation(2, 0.8, 5, &SeedPath::new(21)).unwrap();
        let r = Realization::Tree(tree.clone());
        let x_axis = PlaneParam::line(vec![0.0, 0.0], &[1.0, 0.0]).unwrap();
        let prof = projection_profile(&r, &x_axis, 5, 256, &EngineOptions::default()).unwrap();
        // slab 0.25 <= x < 0.5 is a union of whole level-5 columns
        let slab: f64 = prof
            .offsets
            .iter()
            .zip(&prof.values)
            .filter(|(t, _)| (0.25..0.5).contains(&t[0]))
            .map(|(_, v)| v * prof.spacing[0])
            .sum();
        let direct: f64 = tree
            .level(5)
            .iter()
            .filter(|c| {
                let x = unpack_coords(c.key, 2)[0];
                (8..16).contains(&x)
            })
            .map(|c| c.density * tree.cell_volume(5))
            .sum();
        assert!((slab - direct).abs() < 1e-9, "{slab} vs {direct}");
    }

    #[test]
    fn holder_examples() {
        let lin: Vec<(f64, f64)> = (0..128).map(|i| (i as f64 / 127.0, i as f64 / 127.0)).collect();
        let sq: Vec<(f64, f64)> = lin.iter().map(|&(t, _)| (t, t.sqrt())).collect();
        let metric = |a: &f64, b: &f64| (a - b).abs();
        let g = holder_fit(&lin, metric).unwrap().estimate;
        assert!((g - 1.0).abs() < 0.05, "{g}");
        let g = holder_fit(&sq, metric).unwrap().estimate;
        assert!((g - 0.5).abs() < 0.05, "{g}");
        let flat: Vec<(f64, f64)> = lin.iter().map(|&(t, _)| (t, 3.0)).collect();
        let rep = holder_fit(&flat, metric).unwrap();
        assert!(rep.estimate.is_infinite() && rep.has_flag("constant"));
        assert!(holder_fit(&lin[..8], metric).is_err());
    }

    #[test]
    fn union_length() {
        assert_eq!(interval_union_length(vec![(0.0, 1.0), (0.5, 2.0), (3.0, 4.0)], 0.0), 3.0);
        assert_eq!(interval_union_length(vec![(0.0, 1.0), (1.0 + 1e-13, 2.0)], 1e-12), 2.0);
        assert_eq!(interval_union_length(vec![], 0.0), 0.0);
    }
}
