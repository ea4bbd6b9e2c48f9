//! Poissonian cutout martingales.
//!
//! Shapes `s * Lambda + c` are removed from a seed domain, with intensity
//! `r * s^{-d-1} dc ds` per atom `(Lambda, r)` of the shape measure. Scales are
//! organised in dyadic bands `[2^{-(k+1)}, 2^{-k})`, and band `k` of atom `a`
//! draws from the stream at path `[k, a]`, so any band can be regenerated on
//! its own. `mu_n = 2^{alpha n}` on the part of the domain not covered by
//! shapes of scale at least `2^{-n}`.

use std::str::FromStr;

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{invalid, Error, Result};
use crate::geom::{ball_volume, HalfOpenBox};
use crate::raster::{Grid, Raster};
use crate::rng::{uniform, SeedPath, Stream};
use crate::snowflake::{point_in_snowflake, point_in_snowflake_rotated, snowflake_area, DEFAULT_DEPTH};

/// Circumradius of every diameter-1 shape about its reference center.
const SHAPE_REACH: f64 = 0.5;

/// Refuse realizations whose expected number of candidate shapes exceeds this.
pub const DEFAULT_MAX_EXPECTED: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ball,
    Snowflake,
    RotatedSnowflake,
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ball" => Ok(Self::Ball),
            "snowflake" => Ok(Self::Snowflake),
            "rotated_snowflake" | "rotated-snowflake" => Ok(Self::RotatedSnowflake),
            other => Err(invalid(format!("unknown shape kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeAtom {
    pub shape: ShapeKind,
    pub weight: f64,
}

fn default_snowflake_depth() -> u32 {
    DEFAULT_DEPTH
}

/// Finite shape measure `Q0 = sum r_i delta_{Lambda_i}` on diameter-1 shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensitySpec {
    pub atoms: Vec<ShapeAtom>,
    #[serde(default = "default_snowflake_depth")]
    pub snowflake_depth: u32,
}

impl IntensitySpec {
    pub fn new(atoms: Vec<ShapeAtom>) -> Self {
        Self {
            atoms,
            snowflake_depth: DEFAULT_DEPTH,
        }
    }

    /// Single ball atom with weight chosen so that the model has the given alpha.
    pub fn ball_with_alpha(d: usize, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(invalid(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        let unit = shape_volume(ShapeKind::Ball, d, DEFAULT_DEPTH)?;
        Ok(Self::new(vec![ShapeAtom {
            shape: ShapeKind::Ball,
            weight: alpha / unit,
        }]))
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        for atom in &self.atoms {
            if !(atom.weight >= 0.0) || !atom.weight.is_finite() {
                return Err(invalid(format!("atom weight must be finite and >= 0, got {}", atom.weight)));
            }
            shape_volume(atom.shape, d, self.snowflake_depth)?;
        }
        Ok(())
    }

    pub fn all_balls(&self) -> bool {
        self.atoms.iter().all(|a| a.shape == ShapeKind::Ball)
    }
}

fn shape_volume(kind: ShapeKind, d: usize, snowflake_depth: u32) -> Result<f64> {
    if !(1..=3).contains(&d) {
        return Err(invalid(format!("cutout models need d in 1..=3, got {d}")));
    }
    match kind {
        ShapeKind::Ball => Ok(ball_volume(d, 0.5)),
        ShapeKind::Snowflake | ShapeKind::RotatedSnowflake if d == 2 => Ok(snowflake_area(snowflake_depth)),
        _ => Err(Error::Unsupported(format!("{kind:?} shapes exist only in the plane"))),
    }
}

/// `alpha = sum_atoms r * Leb^d(Lambda)`.
pub fn alpha_of_intensity(spec: &IntensitySpec, d: usize) -> Result<f64> {
    spec.validate(d)?;
    let mut alpha = 0.0;
    for atom in &spec.atoms {
        alpha += atom.weight * shape_volume(atom.shape, d, spec.snowflake_depth)?;
    }
    Ok(alpha)
}

/// Seed domain `Omega`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    Ball { center: Vec<f64>, radius: f64 },
    Snowflake {
        center: [f64; 2],
        diameter: f64,
        #[serde(default = "default_snowflake_depth")]
        depth: u32,
    },
}

impl Region {
    /// `B(0, 1)`, the canonical seed for ball models.
    pub fn unit_ball(d: usize) -> Self {
        Region::Ball {
            center: vec![0.0; d],
            radius: 1.0,
        }
    }

    /// Diameter-1 snowflake centered at the origin, the canonical seed for
    /// snowflake models.
    pub fn unit_snowflake() -> Self {
        Region::Snowflake {
            center: [0.0, 0.0],
            diameter: 1.0,
            depth: DEFAULT_DEPTH,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Ball { center, .. } => center.len(),
            Region::Snowflake { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Region::Ball { center, radius } => {
                if center.is_empty() || center.len() > 3 || !(*radius > 0.0) {
                    return Err(invalid("ball domain needs 1..=3 center coordinates and radius > 0"));
                }
            }
            Region::Snowflake { diameter, .. } => {
                if !(*diameter > 0.0) {
                    return Err(invalid("snowflake domain needs diameter > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Ball { center, radius } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                r2 < radius * radius
            }
            Region::Snowflake { center, diameter, depth } => {
                point_in_snowflake([x[0], x[1]], *center, *diameter, *depth)
            }
        }
    }

    pub fn bounding_ball(&self) -> (Vec<f64>, f64) {
        match self {
            Region::Ball { center, radius } => (center.clone(), *radius),
            Region::Snowflake { center, diameter, .. } => (center.to_vec(), 0.5 * diameter),
        }
    }

    pub fn bounding_box(&self) -> HalfOpenBox {
        let (c, r) = self.bounding_ball();
        HalfOpenBox::new(c.iter().map(|v| v - r).collect(), c.iter().map(|v| v + r).collect())
            .expect("positive radius")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutout {
    /// Only the first `d` coordinates are meaningful.
    pub center: [f64; 3],
    /// Diameter of the shape.
    pub scale: f64,
    pub kind: ShapeKind,
    pub rotation: f64,
}

impl Cutout {
    #[inline]
    fn contains(&self, x: &[f64], radius_factor: f64, snowflake_depth: u32) -> bool {
        match self.kind {
            ShapeKind::Ball => {
                let r = 0.5 * self.scale * radius_factor;
                let mut r2 = 0.0;
                for (a, b) in x.iter().zip(&self.center) {
                    r2 += (a - b) * (a - b);
                }
                r2 < r * r
            }
            ShapeKind::Snowflake => point_in_snowflake(
                [x[0], x[1]],
                [self.center[0], self.center[1]],
                self.scale,
                snowflake_depth,
            ),
            ShapeKind::RotatedSnowflake => point_in_snowflake_rotated(
                [x[0], x[1]],
                [self.center[0], self.center[1]],
                self.scale,
                snowflake_depth,
                self.rotation,
            ),
        }
    }
}

#[inline]
fn band_bounds(k: usize) -> (f64, f64) {
    ((-(k as f64) - 1.0).exp2(), (-(k as f64)).exp2())
}

/// Band index of a scale in `[2^{-(k+1)}, 2^{-k})`, computed with exact
/// powers of two.
pub fn band_of_scale(s: f64) -> Option<usize> {
    if !(s > 0.0 && s < 1.0) {
        return None;
    }
    let mut k = 0;
    let mut lo = 0.5;
    while s < lo {
        k += 1;
        lo *= 0.5;
    }
    Some(k)
}

/// Draws bands of a cutout process one at a time.
#[derive(Debug, Clone)]
pub struct CutoutSampler {
    spec: IntensitySpec,
    domain: Region,
    d: usize,
    seed: SeedPath,
    max_expected: f64,
}

impl CutoutSampler {
    pub fn new(spec: IntensitySpec, domain: Region, seed: SeedPath) -> Result<Self> {
        domain.validate()?;
        let d = domain.dim();
        spec.validate(d)?;
        Ok(Self {
            spec,
            domain,
            d,
            seed,
            max_expected: DEFAULT_MAX_EXPECTED,
        })
    }

    pub fn with_max_expected(mut self, cap: f64) -> Self {
        self.max_expected = cap;
        self
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Radius of the ball of candidate centers for band `k`: every shape of
    /// scale below `2^{-k}` that can touch the domain has its center there.
    fn candidate_radius(&self, k: usize) -> f64 {
        let (_, hi) = band_bounds(k);
        self.domain.bounding_ball().1 + SHAPE_REACH * hi
    }

    /// Mean number of candidate shapes of atom `a` in band `k` (before the
    /// hit test thins them).
    fn candidate_mean(&self, k: usize, a: usize) -> f64 {
        let (lo, hi) = band_bounds(k);
        let d = self.d as i32;
        let scale_mass = (lo.powi(-d) - hi.powi(-d)) / self.d as f64;
        self.spec.atoms[a].weight * ball_volume(self.d, self.candidate_radius(k)) * scale_mass
    }

    pub fn expected_candidates(&self, depth: usize) -> f64 {
        (0..depth)
            .flat_map(|k| (0..self.spec.atoms.len()).map(move |a| (k, a)))
            .map(|(k, a)| self.candidate_mean(k, a))
            .sum()
    }

    /// Bounding-ball test; exact when both the domain and the shape are balls,
    /// otherwise it may keep shapes that only come close to the domain.
    fn hits_domain(&self, c: &Cutout) -> bool {
        let (center, radius) = self.domain.bounding_ball();
        let limit = radius + SHAPE_REACH * c.scale;
        let r2: f64 = center
            .iter()
            .zip(&c.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        r2 < limit * limit
    }

    fn draw_center(&self, rng: &mut Stream, radius: f64) -> [f64; 3] {
        let (center, _) = self.domain.bounding_ball();
        let mut out = [0.0; 3];
        loop {
            let mut r2 = 0.0;
            for o in out.iter_mut().take(self.d) {
                *o = (2.0 * uniform(rng) - 1.0) * radius;
                r2 += *o * *o;
            }
            if self.d == 1 || r2 < radius * radius {
                break;
            }
        }
        for (o, c) in out.iter_mut().zip(&center) {
            *o += c;
        }
        out
    }

    /// All shapes of band `k` that can meet the domain, in generation order.
    pub fn sample_band(&self, k: usize) -> Vec<Cutout> {
        let (lo, hi) = band_bounds(k);
        let d = self.d as i32;
        let (lo_pow, hi_pow) = (lo.powi(-d), hi.powi(-d));
        let radius = self.candidate_radius(k);
        let mut out = Vec::new();
        for (a, atom) in self.spec.atoms.iter().enumerate() {
            let mean = self.candidate_mean(k, a);
            if !(mean > 0.0) {
                continue;
            }
            let mut rng = self.seed.extend(&[k as u64, a as u64]).stream();
            let count = Poisson::new(mean).expect("positive finite mean").sample(&mut rng) as u64;
            out.reserve(count as usize);
            for _ in 0..count {
                // inverse CDF of the density proportional to s^{-d-1} on [lo, hi)
                let u = uniform(&mut rng);
                let mut scale = (lo_pow - u * (lo_pow - hi_pow)).powf(-1.0 / self.d as f64);
                scale = scale.clamp(lo, hi.next_down());
                let center = self.draw_center(&mut rng, radius);
                let rotation = if atom.shape == ShapeKind::RotatedSnowflake {
                    uniform(&mut rng) * std::f64::consts::TAU
                } else {
                    0.0
                };
                let c = Cutout {
                    center,
                    scale,
                    kind: atom.shape,
                    rotation,
                };
                if self.hits_domain(&c) {
                    out.push(c);
                }
            }
        }
        out
    }

    fn check_budget(&self, depth: usize) -> Result<()> {
        let expected = self.expected_candidates(depth);
        if expected > self.max_expected {
            return Err(Error::Resource(format!(
                "depth {depth} needs about {expected:.3e} shapes, cap is {:.3e}",
                self.max_expected
            )));
        }
        Ok(())
    }

    pub fn sample(&self, depth: usize) -> Result<CutoutRealization> {
        if depth < 1 {
            return Err(invalid("cutout realizations need depth >= 1"));
        }
        self.check_budget(depth)?;
        let alpha = alpha_of_intensity(&self.spec, self.d)?;
        let bands = (0..depth)
            .map(|k| Band::new(self.sample_band(k), k, self.d, &self.domain))
            .collect();
        Ok(CutoutRealization {
            spec: self.spec.clone(),
            domain: self.domain.clone(),
            d: self.d,
            depth,
            alpha,
            seed: self.seed.clone(),
            radius_factor: 1.0,
            bands,
        })
    }

    /// Midpoint mask of `A_n` on `grid`, generated band by band without
    /// keeping the shapes around.
    pub fn survivor_mask(&self, n: usize, grid: &Grid) -> Result<Vec<bool>> {
        self.check_budget(n)?;
        let mut mask = domain_mask(&self.domain, grid);
        for k in 0..n {
            paint_band(&self.sample_band(k), grid, &mut mask, 1.0, self.spec.snowflake_depth);
        }
        Ok(mask)
    }
}

/// `sample_cutouts` with the default resource cap.
pub fn sample_cutouts(spec: &IntensitySpec, domain: &Region, depth: usize, seed: &SeedPath) -> Result<CutoutRealization> {
    CutoutSampler::new(spec.clone(), domain.clone(), seed.clone())?.sample(depth)
}

fn domain_mask(domain: &Region, grid: &Grid) -> Vec<bool> {
    let mut x = vec![0.0; grid.d];
    (0..grid.len())
        .map(|idx| {
            grid.midpoint_into(idx, &mut x);
            domain.contains(&x)
        })
        .collect()
}

/// Clear every mask cell whose midpoint lies in one of the shapes.
fn paint_band(cutouts: &[Cutout], grid: &Grid, mask: &mut [bool], radius_factor: f64, snowflake_depth: u32) {
    let d = grid.d;
    let mut x = [0.0; 3];
    for c in cutouts {
        let reach = match c.kind {
            ShapeKind::Ball => 0.5 * c.scale * radius_factor,
            _ => SHAPE_REACH * c.scale,
        };
        let mut ranges = [(0usize, 0usize); 3];
        let mut empty = false;
        for (axis, range) in ranges.iter_mut().enumerate().take(d) {
            match grid.midpoint_range(axis, c.center[axis] - reach, c.center[axis] + reach) {
                Some(r) => *range = r,
                None => empty = true,
            }
        }
        if empty {
            continue;
        }
        if d == 2 && c.kind == ShapeKind::Ball {
            // row spans of a disk are contiguous
            for j in ranges[1].0..=ranges[1].1 {
                let y = grid.low[1] + (j as f64 + 0.5) * grid.cell - c.center[1];
                let half2 = reach * reach - y * y;
                if half2 <= 0.0 {
                    continue;
                }
                let half = half2.sqrt();
                if let Some((i0, i1)) = grid.midpoint_range(0, c.center[0] - half, c.center[0] + half) {
                    for i in i0..=i1 {
                        let xm = grid.low[0] + (i as f64 + 0.5) * grid.cell;
                        let dx = xm - c.center[0];
                        if dx * dx + y * y < reach * reach {
                            mask[i + j * grid.res] = false;
                        }
                    }
                }
            }
            continue;
        }
        let (z0, z1) = if d == 3 { ranges[2] } else { (0, 0) };
        let (y0, y1) = if d >= 2 { ranges[1] } else { (0, 0) };
        for kz in z0..=z1 {
            for j in y0..=y1 {
                for i in ranges[0].0..=ranges[0].1 {
                    let coords = [i, j, kz];
                    let mut idx = 0;
                    for axis in (0..d).rev() {
                        idx = idx * grid.res + coords[axis];
                        x[axis] = grid.low[axis] + (coords[axis] as f64 + 0.5) * grid.cell;
                    }
                    if mask[idx] && c.contains(&x[..d], radius_factor, snowflake_depth) {
                        mask[idx] = false;
                    }
                }
            }
        }
    }
}

/// One scale band with a bucket index of cell side `2^{-k}`.
#[derive(Debug, Clone)]
struct Band {
    cutouts: Vec<Cutout>,
    keys: Vec<u64>,
    origin: [f64; 3],
    cell: f64,
    bits: u32,
}

impl Band {
    fn new(mut cutouts: Vec<Cutout>, k: usize, d: usize, domain: &Region) -> Self {
        let (center, radius) = domain.bounding_ball();
        let mut origin = [0.0; 3];
        for i in 0..d {
            origin[i] = center[i] - radius - 2.0;
        }
        let cell = (-(k as f64)).exp2();
        let bits = 64 / d as u32;
        let mut band = Band {
            cutouts: Vec::new(),
            keys: Vec::new(),
            origin,
            cell,
            bits,
        };
        cutouts.sort_by_key(|c| band.key_of(&c.center[..d]));
        band.keys = cutouts.iter().map(|c| band.key_of(&c.center[..d])).collect();
        band.cutouts = cutouts;
        band
    }

    #[inline]
    fn cell_coord(&self, v: f64, axis: usize) -> i64 {
        ((v - self.origin[axis]) / self.cell).floor() as i64
    }

    #[inline]
    fn pack(&self, coords: &[i64]) -> u64 {
        let mut key = 0u64;
        for (axis, &c) in coords.iter().enumerate() {
            key |= (c.max(0) as u64) << (axis as u32 * self.bits);
        }
        key
    }

    fn key_of(&self, x: &[f64]) -> u64 {
        let coords: Vec<i64> = x.iter().enumerate().map(|(i, &v)| self.cell_coord(v, i)).collect();
        self.pack(&coords)
    }

    /// Any shape of this band contains `x`.
    fn covers(&self, x: &[f64], radius_factor: f64, snowflake_depth: u32) -> bool {
        if self.cutouts.is_empty() {
            return false;
        }
        let d = x.len();
        let mut base = [0i64; 3];
        for i in 0..d {
            base[i] = self.cell_coord(x[i], i);
        }
        // axis 0 occupies the low bits, so the three axis-0 neighbours of a
        // fixed higher-axis offset form one contiguous key range
        let offsets: &[[i64; 2]] = match d {
            1 => &[[0, 0]],
            2 => &[[-1, 0], [0, 0], [1, 0]],
            _ => &[
                [-1, -1], [0, -1], [1, -1],
                [-1, 0], [0, 0], [1, 0],
                [-1, 1], [0, 1], [1, 1],
            ],
        };
        let mut coords = [0i64; 3];
        for off in offsets {
            coords[..d].copy_from_slice(&base[..d]);
            for (axis, o) in off.iter().enumerate().take(d - 1) {
                coords[axis + 1] += o;
            }
            if coords[..d].iter().any(|&c| c < 0) {
                continue;
            }
            coords[0] = base[0] - 1;
            let lo_key = self.pack(&coords[..d]);
            coords[0] = base[0] + 1;
            let hi_key = self.pack(&coords[..d]);
            let start = self.keys.partition_point(|&k| k < lo_key);
            let end = self.keys.partition_point(|&k| k <= hi_key);
            if self.cutouts[start..end]
                .iter()
                .any(|c| c.contains(x, radius_factor, snowflake_depth))
            {
                return true;
            }
        }
        false
    }
}

/// A sampled cutout process: the shapes of every band below `depth`.
#[derive(Debug, Clone)]
pub struct CutoutRealization {
    pub spec: IntensitySpec,
    pub domain: Region,
    pub d: usize,
    pub depth: usize,
    pub alpha: f64,
    pub seed: SeedPath,
    /// Multiplier applied to every ball radius (1 unless shrunk).
    pub radius_factor: f64,
    bands: Vec<Band>,
}

impl CutoutRealization {
    pub fn num_cutouts(&self) -> usize {
        self.bands.iter().map(|b| b.cutouts.len()).sum()
    }

    pub fn band(&self, k: usize) -> &[Cutout] {
        &self.bands[k].cutouts
    }

    pub fn cutouts(&self) -> impl Iterator<Item = &Cutout> {
        self.bands.iter().flat_map(|b| b.cutouts.iter())
    }

    /// `x` is covered by a shape with scale at least `2^{-n}`.
    pub fn is_removed(&self, x: &[f64], n: usize) -> bool {
        self.bands[..n.min(self.depth)]
            .iter()
            .any(|b| b.covers(x, self.radius_factor, self.spec.snowflake_depth))
    }

    /// `x in A_n`.
    pub fn survives(&self, x: &[f64], n: usize) -> bool {
        self.domain.contains(x) && !self.is_removed(x, n)
    }

    /// First level at which `x` is removed, `None` if it survives to `depth`
    /// (or lies outside the domain, where it is never alive).
    pub fn death_level(&self, x: &[f64]) -> Option<usize> {
        (0..self.depth)
            .find(|&k| self.bands[k].covers(x, self.radius_factor, self.spec.snowflake_depth))
            .map(|k| k + 1)
    }

    /// Regular inner approximation: every ball shrunk by `(1 - rho)^{1/d}`.
    pub fn inner_approximation(&self, rho: f64) -> Result<CutoutRealization> {
        if !(0.0..1.0).contains(&rho) {
            return Err(invalid(format!("rho must lie in [0, 1), got {rho}")));
        }
        if !self.spec.all_balls() {
            return Err(Error::Unsupported(
                "inner approximations are implemented for ball shapes only".into(),
            ));
        }
        let mut out = self.clone();
        out.radius_factor *= (1.0 - rho).powf(1.0 / self.d as f64);
        out.alpha *= 1.0 - rho;
        Ok(out)
    }

    /// `beta` with `Lambda_rho = B(0, 1/2 - beta)` for the unit-diameter ball.
    pub fn inner_margin(rho: f64, d: usize) -> f64 {
        0.5 * (1.0 - (1.0 - rho).powf(1.0 / d as f64))
    }

    /// Midpoint mask of `A_n` on `grid`.
    pub fn survivor_mask(&self, n: usize, grid: &Grid) -> Vec<bool> {
        let mut mask = domain_mask(&self.domain, grid);
        for band in &self.bands[..n.min(self.depth)] {
            paint_band(&band.cutouts, grid, &mut mask, self.radius_factor, self.spec.snowflake_depth);
        }
        mask
    }

    /// Midpoint raster of `mu_n` on `grid`.
    pub fn density_raster(&self, n: usize, grid: &Grid) -> Raster {
        let value = (self.alpha * n as f64).exp2();
        let mask = self.survivor_mask(n, grid);
        Raster {
            d: grid.d,
            res: grid.res,
            low: grid.low.clone(),
            cell: grid.cell,
            values: mask.into_iter().map(|m| if m { value } else { 0.0 }).collect(),
        }
    }

    /// Open parameter intervals `(t - h, t + h)` cut from the line
    /// `p + t u` (unit `u`) by ball shapes of bands below `n`.
    pub fn line_chords(&self, p: &[f64], u: &[f64], n: usize) -> Result<Vec<(f64, f64)>> {
        if !self.spec.all_balls() {
            return Err(Error::Unsupported("chord intervals need ball shapes".into()));
        }
        let d = self.d;
        let mut out = Vec::new();
        for band in &self.bands[..n.min(self.depth)] {
            for c in &band.cutouts {
                let r = 0.5 * c.scale * self.radius_factor;
                let mut t = 0.0;
                for i in 0..d {
                    t += (c.center[i] - p[i]) * u[i];
                }
                let mut dist2 = 0.0;
                for i in 0..d {
                    let q = p[i] + t * u[i] - c.center[i];
                    dist2 += q * q;
                }
                if dist2 < r * r {
                    let h = (r * r - dist2).sqrt();
                    out.push((t - h, t + h));
                }
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&CutoutDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CutoutDocument = serde_json::from_str(text)?;
        doc.into_realization()
    }
}

impl Density for CutoutRealization {
    fn dim(&self) -> usize {
        self.d
    }

    fn max_level(&self) -> usize {
        self.depth
    }

    fn evaluate(&self, x: &[f64], n: usize) -> f64 {
        if self.survives(x, n) {
            (self.alpha * n as f64).exp2()
        } else {
            0.0
        }
    }

    fn growth_constant(&self) -> f64 {
        self.alpha.exp2()
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn support(&self) -> HalfOpenBox {
        self.domain.bounding_box()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CutoutModelDoc {
    d: usize,
    intensity: IntensitySpec,
    domain: Region,
    radius_factor: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CutoutRecord {
    c: Vec<f64>,
    s: f64,
    kind: ShapeKind,
    rot: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CutoutDocument {
    model: CutoutModelDoc,
    seed: SeedPath,
    depth: usize,
    alpha: f64,
    cutouts: Vec<CutoutRecord>,
}

impl From<&CutoutRealization> for CutoutDocument {
    fn from(r: &CutoutRealization) -> Self {
        CutoutDocument {
            model: CutoutModelDoc {
                d: r.d,
                intensity: r.spec.clone(),
                domain: r.domain.clone(),
                radius_factor: r.radius_factor,
            },
            seed: r.seed.clone(),
            depth: r.depth,
            alpha: r.alpha,
            cutouts: r
                .cutouts()
                .map(|c| CutoutRecord {
                    c: c.center[..r.d].to_vec(),
                    s: c.scale,
                    kind: c.kind,
                    rot: c.rotation,
                })
                .collect(),
        }
    }
}

impl CutoutDocument {
    fn into_realization(self) -> Result<CutoutRealization> {
        let d = self.model.d;
        self.model.domain.validate()?;
        if self.model.domain.dim() != d {
            return Err(invalid("domain dimension does not match the model"));
        }
        let mut per_band: Vec<Vec<Cutout>> = vec![Vec::new(); self.depth];
        for rec in self.cutouts {
            if rec.c.len() != d {
                return Err(invalid("cutout center has the wrong dimension"));
            }
            let k = band_of_scale(rec.s)
                .filter(|&k| k < self.depth)
                .ok_or_else(|| invalid(format!("cutout scale {} outside [2^-depth, 1)", rec.s)))?;
            let mut center = [0.0; 3];
            center[..d].copy_from_slice(&rec.c);
            per_band[k].push(Cutout {
                center,
                scale: rec.s,
                kind: rec.kind,
                rotation: rec.rot,
            });
        }
        let bands = per_band
            .into_iter()
            .enumerate()
            .map(|(k, cs)| Band::new(cs, k, d, &self.model.domain))
            .collect();
        Ok(CutoutRealization {
            spec: self.model.intensity,
            domain: self.model.domain,
            d,
            depth: self.depth,
            alpha: self.alpha,
            seed: self.seed,
            radius_factor: self.model.radius_factor,
            bands,
        })
    }
}
