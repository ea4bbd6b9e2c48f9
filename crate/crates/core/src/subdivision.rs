//! Subdivision martingales on the dyadic filtration of `[0, 1)^d`.
//!
//! Each surviving level-`n` cell `Q` draws the weights of its `2^d` children
//! from the stream at path `[n, key(Q)]`; the density of a level-`n` cell is
//! the product of the weights along its ancestor chain.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{invalid, Error, Result};
use crate::geom::HalfOpenBox;
use crate::raster::Raster;
use crate::rng::{uniform, SeedPath, Stream};

/// Largest `d * depth` accepted for percolation and cascade trees.
pub const MAX_CELL_BITS: usize = 20;

/// Discrete law of a cell weight `W`, with mean 1 and support in `[0, C]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct WeightLaw {
    /// `(value, probability)` sorted by value.
    atoms: Vec<(f64, f64)>,
}

impl TryFrom<Vec<(f64, f64)>> for WeightLaw {
    type Error = Error;

    fn try_from(atoms: Vec<(f64, f64)>) -> Result<Self> {
        WeightLaw::new(atoms)
    }
}

impl From<WeightLaw> for Vec<(f64, f64)> {
    fn from(law: WeightLaw) -> Self {
        law.atoms
    }
}

impl WeightLaw {
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Validation("weight law has no atoms".into()));
        }
        for &(v, p) in &atoms {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!("weight value {v} outside [0, inf)")));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("probability {p} outside [0, 1]")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("probabilities sum to {total}, not 1")));
        }
        let mean: f64 = atoms.iter().map(|(v, p)| v * p).sum();
        if (mean - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("weight law has mean {mean}, not 1")));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { atoms })
    }

    /// `0` with probability `1 - p`, `1/p` with probability `p`.
    pub fn percolation(p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(invalid(format!("retention probability must lie in (0, 1], got {p}")));
        }
        Self::new(vec![(0.0, 1.0 - p), (1.0 / p, p)])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// Growth constant `C`: the largest weight with positive probability.
    pub fn max_weight(&self) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.1 > 0.0)
            .map(|a| a.0)
            .fold(0.0, f64::max)
    }

    pub fn survival_probability(&self) -> f64 {
        self.atoms.iter().filter(|a| a.0 > 0.0).map(|a| a.1).sum()
    }

    /// Inverse CDF over atoms in increasing value order.
    pub fn sample(&self, u: f64) -> f64 {
        let mut cum = 0.0;
        for &(v, p) in &self.atoms {
            cum += p;
            if u < cum {
                return v;
            }
        }
        self.atoms.last().map(|a| a.0).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeCell {
    pub key: u64,
    /// `W_F` of this cell.
    pub weight: f64,
    /// Product of the weights from the root down to this cell.
    pub density: f64,
}

/// Sparse tree of surviving dyadic cells, one sorted vector per level.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdivisionTree {
    pub d: usize,
    pub depth: usize,
    pub alpha: f64,
    pub growth: f64,
    levels: Vec<Vec<TreeCell>>,
}

fn bits_per_axis(d: usize) -> u32 {
    63 / d as u32
}

pub fn pack_coords(coords: &[u64]) -> u64 {
    let bits = bits_per_axis(coords.len());
    coords
        .iter()
        .enumerate()
        .fold(0, |key, (axis, &c)| key | (c << (axis as u32 * bits)))
}

pub fn unpack_coords(key: u64, d: usize) -> Vec<u64> {
    let bits = bits_per_axis(d);
    let mask = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
    (0..d).map(|axis| (key >> (axis as u32 * bits)) & mask).collect()
}

fn child_key(parent: &[u64], child: usize) -> u64 {
    let coords: Vec<u64> = parent
        .iter()
        .enumerate()
        .map(|(i, &c)| 2 * c + ((child >> i) & 1) as u64)
        .collect();
    pack_coords(&coords)
}

impl SubdivisionTree {
    /// Grow a tree where `rule(level, parent, stream, weights)` fills the
    /// `2^d` child weights of a surviving level-`level` cell.
    fn grow(
        d: usize,
        depth: usize,
        seed: &SeedPath,
        alpha: f64,
        growth: f64,
        mut rule: impl FnMut(usize, &mut Stream, &mut [f64]),
    ) -> Self {
        let root = TreeCell {
            key: 0,
            weight: 1.0,
            density: 1.0,
        };
        let mut levels = vec![vec![root]];
        let mut weights = vec![0.0; 1 << d];
        for level in 0..depth {
            let mut next = Vec::new();
            for parent in &levels[level] {
                let mut rng = seed.extend(&[level as u64, parent.key]).stream();
                rule(level, &mut rng, &mut weights);
                let coords = unpack_coords(parent.key, d);
                for (child, &w) in weights.iter().enumerate() {
                    if w > 0.0 {
                        next.push(TreeCell {
                            key: child_key(&coords, child),
                            weight: w,
                            density: parent.density * w,
                        });
                    }
                }
            }
            next.sort_by_key(|c| c.key);
            levels.push(next);
        }
        Self {
            d,
            depth,
            alpha,
            growth,
            levels,
        }
    }

    pub fn level(&self, n: usize) -> &[TreeCell] {
        &self.levels[n]
    }

    pub fn surviving_count(&self, n: usize) -> usize {
        self.levels[n].len()
    }

    pub fn cell_volume(&self, n: usize) -> f64 {
        (-((self.d * n) as f64)).exp2()
    }

    /// `||mu_n||`, summed over cells.
    pub fn total_mass(&self, n: usize) -> f64 {
        let vol = self.cell_volume(n);
        self.levels[n].iter().map(|c| c.density * vol).sum()
    }

    /// `mu_n(Q)` for every surviving level-`n` cell, in key order.
    pub fn cell_masses(&self, n: usize) -> Vec<f64> {
        let vol = self.cell_volume(n);
        self.levels[n].iter().map(|c| c.density * vol).collect()
    }

    pub fn cell_box(&self, n: usize, cell: &TreeCell) -> HalfOpenBox {
        HalfOpenBox::dyadic(n as u32, &unpack_coords(cell.key, self.d))
    }

    pub fn find(&self, n: usize, key: u64) -> Option<&TreeCell> {
        let level = &self.levels[n];
        level.binary_search_by_key(&key, |c| c.key).ok().map(|i| &level[i])
    }

    /// Piecewise-constant raster of `mu_n` on `[0, 1)^d` with `resolution`
    /// cells per axis.
    pub fn density_field(&self, n: usize, resolution: usize) -> Result<Raster> {
        if !resolution.is_power_of_two() || resolution < (1usize << n) {
            return Err(invalid(format!(
                "resolution must be a power of two >= 2^{n}, got {resolution}"
            )));
        }
        let mut raster = Raster::zeros(self.d, resolution, vec![0.0; self.d], 1.0 / resolution as f64);
        let span = resolution >> n;
        let d = self.d;
        for cell in &self.levels[n] {
            let coords = unpack_coords(cell.key, d);
            let count = span.pow(d as u32);
            for local in 0..count {
                let mut rem = local;
                let mut idx = 0;
                let mut stride = 1;
                for &c in &coords {
                    let off = rem % span;
                    rem /= span;
                    idx += (c as usize * span + off) * stride;
                    stride *= resolution;
                }
                raster.values[idx] = cell.density;
            }
        }
        Ok(raster)
    }

    /// Newline-delimited `path weight` records, preceded by a `#` header.
    /// The root is written as `-`; other paths are child digits from the root.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# simart-subdivision d={} depth={} alpha={} growth={}",
            self.d, self.depth, self.alpha, self.growth
        );
        let _ = writeln!(out, "- {}", self.levels[0][0].weight);
        for n in 1..=self.depth {
            for cell in &self.levels[n] {
                let coords = unpack_coords(cell.key, self.d);
                let mut path = String::with_capacity(n);
                for j in 0..n {
                    let shift = n - 1 - j;
                    let digit: u64 = coords
                        .iter()
                        .enumerate()
                        .map(|(i, &c)| ((c >> shift) & 1) << i)
                        .sum();
                    path.push(char::from_digit(digit as u32, 10).expect("d <= 3"));
                }
                let _ = writeln!(out, "{path} {}", cell.weight);
            }
        }
        out
    }

    pub fn from_records(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty tree file".into()))?;
        let field = |name: &str| -> Result<&str> {
            header
                .split_whitespace()
                .find_map(|tok| tok.strip_prefix(name).and_then(|t| t.strip_prefix('=')))
                .ok_or_else(|| Error::Parse(format!("header lacks {name}")))
        };
        let num_err = |e: std::num::ParseFloatError| Error::Parse(e.to_string());
        let int_err = |e: std::num::ParseIntError| Error::Parse(e.to_string());
        let d: usize = field("d")?.parse().map_err(int_err)?;
        let depth: usize = field("depth")?.parse().map_err(int_err)?;
        let alpha: f64 = field("alpha")?.parse().map_err(num_err)?;
        let growth: f64 = field("growth")?.parse().map_err(num_err)?;
        if !(1..=3).contains(&d) {
            return Err(Error::Parse(format!("unsupported dimension {d}")));
        }
        let mut levels: Vec<Vec<TreeCell>> = vec![Vec::new(); depth + 1];
        for line in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (path, weight) = line
                .split_once(' ')
                .ok_or_else(|| Error::Parse(format!("malformed record {line:?}")))?;
            let weight: f64 = weight.trim().parse().map_err(num_err)?;
            if path == "-" {
                levels[0].push(TreeCell {
                    key: 0,
                    weight,
                    density: weight,
                });
                continue;
            }
            let n = path.len();
            if n > depth {
                return Err(Error::Parse(format!("path {path} deeper than {depth}")));
            }
            let mut coords = vec![0u64; d];
            for ch in path.chars() {
                let digit = ch
                    .to_digit(10)
                    .filter(|&v| v < (1 << d))
                    .ok_or_else(|| Error::Parse(format!("bad path digit in {path}")))?;
                for (i, c) in coords.iter_mut().enumerate() {
                    *c = 2 * *c + ((digit >> i) & 1) as u64;
                }
            }
            let parent: Vec<u64> = coords.iter().map(|c| c >> 1).collect();
            let parent_density = levels[n - 1]
                .iter()
                .rev()
                .find(|c| c.key == pack_coords(&parent))
                .map(|c| c.density)
                .ok_or_else(|| Error::Parse(format!("record {path} precedes its parent")))?;
            levels[n].push(TreeCell {
                key: pack_coords(&coords),
                weight,
                density: parent_density * weight,
            });
        }
        if levels[0].len() != 1 {
            return Err(Error::Parse("tree file needs exactly one root record".into()));
        }
        for level in &mut levels {
            level.sort_by_key(|c| c.key);
        }
        Ok(Self {
            d,
            depth,
            alpha,
            growth,
            levels,
        })
    }
}

impl Density for SubdivisionTree {
    fn dim(&self) -> usize {
        self.d
    }

    fn max_level(&self) -> usize {
        self.depth
    }

    fn evaluate(&self, x: &[f64], n: usize) -> f64 {
        if x.iter().any(|&v| !(0.0..1.0).contains(&v)) {
            return 0.0;
        }
        let scale = (n as f64).exp2();
        let coords: Vec<u64> = x.iter().map(|&v| (v * scale).floor() as u64).collect();
        self.find(n, pack_coords(&coords)).map_or(0.0, |c| c.density)
    }

    fn growth_constant(&self) -> f64 {
        self.growth
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn support(&self) -> HalfOpenBox {
        HalfOpenBox::unit(self.d)
    }
}

fn check_dims(d: usize, depth: usize) -> Result<()> {
    if !(1..=3).contains(&d) {
        return Err(invalid(format!("subdivision models need d in 1..=3, got {d}")));
    }
    if d * depth > MAX_CELL_BITS {
        return Err(invalid(format!("depth {depth} too large for d = {d} (d * depth <= {MAX_CELL_BITS})")));
    }
    Ok(())
}

/// i.i.d. cascade: every child weight is an independent draw from `law`.
pub fn generate_cascade(d: usize, law: &WeightLaw, depth: usize, seed: &SeedPath) -> Result<SubdivisionTree> {
    check_dims(d, depth)?;
    let alpha = -law.survival_probability().log2();
    Ok(SubdivisionTree::grow(d, depth, seed, alpha, law.max_weight(), |_, rng, weights| {
        for w in weights.iter_mut() {
            *w = law.sample(uniform(rng));
        }
    }))
}

/// Dyadic fractal percolation: each child is kept with probability `p`.
pub fn generate_percolation(d: usize, p: f64, depth: usize, seed: &SeedPath) -> Result<SubdivisionTree> {
    generate_cascade(d, &WeightLaw::percolation(p)?, depth, seed)
}

/// Schedule `N_1..N_depth` of the dyadic selection construction and its
/// running products `P_0..P_depth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalemLineSpec {
    pub alpha0: f64,
    pub depth: usize,
}

impl SalemLineSpec {
    pub fn new(alpha0: f64, depth: usize) -> Result<Self> {
        if !(alpha0 > 0.0 && alpha0 <= 1.0) {
            return Err(invalid(format!("alpha0 must lie in (0, 1], got {alpha0}")));
        }
        if depth > 62 {
            return Err(invalid("salem-line depth is limited to 62"));
        }
        Ok(Self { alpha0, depth })
    }

    /// Greedy rule: `N_j = 2` iff `2 P_{j-1} <= 2^{alpha0 j}`.
    pub fn schedule(&self) -> Vec<u8> {
        let mut p: u64 = 1;
        (1..=self.depth)
            .map(|j| {
                let n = if 2.0 * p as f64 <= (self.alpha0 * j as f64).exp2() { 2 } else { 1 };
                p *= n as u64;
                n
            })
            .collect()
    }

    pub fn products(&self) -> Vec<u64> {
        let mut out = vec![1u64];
        for n in self.schedule() {
            out.push(out.last().unwrap() * n as u64);
        }
        out
    }
}

/// Random dyadic selection on `[0, 1)`: both children kept when `N = 2`,
/// one uniformly chosen child otherwise. Every level-`n` cell has mass `1/P_n`.
pub fn generate_salem_line(alpha0: f64, depth: usize, seed: &SeedPath) -> Result<SubdivisionTree> {
    let spec = SalemLineSpec::new(alpha0, depth)?;
    let schedule = spec.schedule();
    // the limit has dimension alpha0, so the codimension in R is 1 - alpha0
    Ok(SubdivisionTree::grow(1, depth, seed, 1.0 - alpha0, 2.0, |level, rng, weights| {
        if schedule[level] == 2 {
            weights.fill(1.0);
        } else {
            let pick = usize::from(uniform(rng) >= 0.5);
            weights.fill(0.0);
            weights[pick] = 2.0;
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn full_percolation_keeps_everything() {
        let t = generate_percolation(2, 1.0, 4, &SeedPath::new(1)).unwrap();
        for n in 0..=4 {
            assert_eq!(t.surviving_count(n), 1 << (2 * n));
            assert!(t.level(n).iter().all(|c| c.density == 1.0));
        }
        let f = t.density_field(4, 32).unwrap();
        assert!(f.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn percolation_is_the_two_atom_cascade() {
        let p = 0.63;
        let seed = SeedPath::new(17).child(4);
        let a = generate_percolation(2, p, 6, &seed).unwrap();
        let law = WeightLaw::new(vec![(1.0 / p, p), (0.0, 1.0 - p)]).unwrap();
        let b = generate_cascade(2, &law, 6, &seed).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_cascade_is_trivial() {
        let law = WeightLaw::new(vec![(1.0, 1.0)]).unwrap();
        let t = generate_cascade(1, &law, 8, &SeedPath::new(0)).unwrap();
        assert_eq!(t.surviving_count(8), 256);
        assert!(t.level(8).iter().all(|c| c.density == 1.0));
        assert_eq!(t.alpha, 0.0);
    }

    #[test]
    fn law_validation() {
        assert!(WeightLaw::new(vec![(0.5, 0.5), (1.4, 0.5)]).is_err());
        assert!(WeightLaw::new(vec![(-1.0, 0.5), (3.0, 0.5)]).is_err());
        assert!(WeightLaw::new(vec![(1.0, 0.9)]).is_err());
        assert!(serde_json::from_str::<WeightLaw>("[[0.5,0.5],[1.5,0.5]]").is_ok());
        assert!(serde_json::from_str::<WeightLaw>("[[0.5,0.5],[1.6,0.5]]").is_err());
        assert!(WeightLaw::percolation(0.0).is_err());
    }

    #[test]
    fn weights_bounded_by_growth_constant() {
        let t = generate_percolation(3, 0.55, 5, &SeedPath::new(2)).unwrap();
        assert_relative_eq!(t.growth, 1.0 / 0.55);
        for n in 1..=5 {
            assert!(t.level(n).iter().all(|c| c.weight <= t.growth && c.weight > 0.0));
        }
    }

    #[test]
    fn support_is_monotone() {
        let t = generate_percolation(2, 0.7, 6, &SeedPath::new(9)).unwrap();
        for n in 1..=6 {
            for c in t.level(n) {
                let parent: Vec<u64> = unpack_coords(c.key, 2).iter().map(|v| v >> 1).collect();
                assert!(t.find(n - 1, pack_coords(&parent)).is_some());
            }
        }
    }

    #[test]
    fn single_chain_mass() {
        // alpha0 = 0.01 gives N_j = 1 for every j <= 6: a single chain
        let t = generate_salem_line(0.01, 6, &SeedPath::new(3)).unwrap();
        assert_eq!(t.surviving_count(6), 1);
        let cell = t.level(6)[0];
        assert_relative_eq!(cell.density, 64.0);
        assert_relative_eq!(t.total_mass(6), 1.0);
    }

    #[test]
    fn salem_schedule_and_products() {
        let full = SalemLineSpec::new(1.0, 12).unwrap();
        assert!(full.schedule().iter().all(|&n| n == 2));
        // greedy rule worked by hand for alpha0 = 0.6:
        // N = 1,2,1,2,2,1,2,1,2,2 -> P_10 = 64
        let spec = SalemLineSpec::new(0.6, 10).unwrap();
        assert_eq!(spec.schedule(), vec![1, 2, 1, 2, 2, 1, 2, 1, 2, 2]);
        let p = spec.products();
        assert_eq!(p[10], 64);
        for (n, &pn) in p.iter().enumerate() {
            let ratio = pn as f64 / (0.6 * n as f64).exp2();
            assert!((0.5..=2.0).contains(&ratio), "P_{n} = {pn}");
        }
        assert!(SalemLineSpec::new(0.0, 3).is_err());
    }

    #[test]
    fn salem_cells_have_equal_mass() {
        let t = generate_salem_line(0.6, 14, &SeedPath::new(5)).unwrap();
        let p = SalemLineSpec::new(0.6, 14).unwrap().products();
        for n in 0..=14 {
            assert_eq!(t.surviving_count(n) as u64, p[n]);
            for m in t.cell_masses(n) {
                assert_eq!(m, 1.0 / p[n] as f64);
            }
        }
        let lebesgue = generate_salem_line(1.0, 8, &SeedPath::new(5)).unwrap();
        let f = lebesgue.density_field(8, 256).unwrap();
        assert!(f.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn raster_mass_matches_tree_mass() {
        let t = generate_percolation(2, 0.8, 6, &SeedPath::new(12)).unwrap();
        for n in [3, 6] {
            let f = t.density_field(n, 128).unwrap();
            assert!((f.mass() - t.total_mass(n)).abs() < 1e-12);
        }
        assert!(t.density_field(6, 48).is_err());
        assert!(t.density_field(6, 32).is_err());
    }

    #[test]
    fn records_roundtrip() {
        let t = generate_percolation(3, 0.6, 4, &SeedPath::new(8)).unwrap();
        let back = SubdivisionTree::from_records(&t.to_records()).unwrap();
        assert_eq!(back, t);
        assert!(SubdivisionTree::from_records("# simart-subdivision d=1 depth=2 alpha=0 growth=1\n0 1\n").is_err());
    }
}
