use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{linear_fit, LinearFit};
use crate::error::{invalid, Error, Result};
use crate::subdivision::{pack_coords, unpack_coords, SubdivisionTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Box,
    Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionFit {
    pub kind: EstimatorKind,
    pub m_lo: usize,
    pub m_hi: usize,
    pub levels: Vec<usize>,
    /// Occupied-cell counts (box) or sums of squared normalized masses
    /// (correlation), one per level.
    pub values: Vec<f64>,
    pub slope: f64,
    pub stderr: f64,
    pub fit: LinearFit,
}

impl DimensionFit {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,value\n");
        for (m, v) in self.levels.iter().zip(&self.values) {
            out.push_str(&format!("{m},{v}\n"));
        }
        out
    }
}

fn windowed<T: Copy>(data: &[(usize, T)], window: Option<(usize, usize)>) -> Vec<(usize, T)> {
    data.iter()
        .copied()
        .filter(|(m, _)| window.is_none_or(|(lo, hi)| (lo..=hi).contains(m)))
        .collect()
}

fn fit_levels(kind: EstimatorKind, points: Vec<(usize, f64)>, ys: Vec<f64>) -> Result<DimensionFit> {
    if points.len() < 4 {
        return Err(invalid(format!("a dimension fit needs at least 4 levels, got {}", points.len())));
    }
    let xs: Vec<f64> = points.iter().map(|(m, _)| *m as f64).collect();
    let fit = linear_fit(&xs, &ys).ok_or_else(|| invalid("dimension fit is degenerate"))?;
    Ok(DimensionFit {
        kind,
        m_lo: points.first().unwrap().0,
        m_hi: points.last().unwrap().0,
        levels: points.iter().map(|p| p.0).collect(),
        values: points.iter().map(|p| p.1).collect(),
        slope: fit.slope,
        stderr: fit.slope_stderr,
        fit,
    })
}

/// Slope of `log2(count)` against level.
pub fn box_dimension(counts: &[(usize, u64)], window: Option<(usize, usize)>) -> Result<DimensionFit> {
    let points: Vec<(usize, f64)> = windowed(counts, window)
        .into_iter()
        .filter(|&(_, c)| c > 0)
        .map(|(m, c)| (m, c as f64))
        .collect();
    let ys = points.iter().map(|(_, c)| c.log2()).collect();
    fit_levels(EstimatorKind::Box, points, ys)
}

/// Slope of `-log2 sum (mass / total)^2` against level.
pub fn correlation_dimension(masses: &[(usize, Vec<f64>)], window: Option<(usize, usize)>) -> Result<DimensionFit> {
    let mut points = Vec::new();
    for (m, cells) in masses {
        if window.is_some_and(|(lo, hi)| !(lo..=hi).contains(m)) {
            continue;
        }
        let total: f64 = cells.iter().sum();
        if !(total > 0.0) {
            return Err(invalid("correlation dimension needs nonzero total mass"));
        }
        let s: f64 = cells.iter().map(|c| (c / total) * (c / total)).sum();
        points.push((*m, s));
    }
    let ys = points.iter().map(|(_, s)| -s.log2()).collect();
    fit_levels(EstimatorKind::Correlation, points, ys)
}

/// Number of level-`m` dyadic cells containing a surviving level-`n` cell,
/// for `m = 0..=n`.
pub fn tree_occupancy(tree: &SubdivisionTree, n: usize) -> Vec<(usize, u64)> {
    let d = tree.d;
    let mut coords: Vec<Vec<u64>> = tree.level(n).iter().map(|c| unpack_coords(c.key, d)).collect();
    let mut out = vec![(n, coords.len() as u64)];
    for m in (0..n).rev() {
        let mut keys: Vec<u64> = coords
            .iter_mut()
            .map(|c| {
                c.iter_mut().for_each(|v| *v >>= 1);
                pack_coords(c)
            })
            .collect();
        keys.sort_unstable();
        keys.dedup();
        coords = keys.iter().map(|&k| unpack_coords(k, d)).collect();
        out.push((m, keys.len() as u64));
    }
    out.reverse();
    out
}

/// `mu_n` masses of the level-`m` cells (`m <= n`) that carry mass.
pub fn coarse_cell_masses(tree: &SubdivisionTree, n: usize, m: usize) -> Vec<f64> {
    let d = tree.d;
    let shift = n - m;
    let vol = tree.cell_volume(n);
    let mut acc: BTreeMap<u64, f64> = BTreeMap::new();
    for cell in tree.level(n) {
        let c: Vec<u64> = unpack_coords(cell.key, d).iter().map(|v| v >> shift).collect();
        *acc.entry(pack_coords(&c)).or_default() += cell.density * vol;
    }
    acc.into_values().collect()
}

/// Occupied-block counts of a boolean mask on a `res^d` grid (axis 0
/// fastest); level `m` uses blocks of `res / 2^m` cells per axis.
pub fn mask_occupancy(mask: &[bool], d: usize, res: usize) -> Result<Vec<(usize, u64)>> {
    if !res.is_power_of_two() || mask.len() != res.pow(d as u32) {
        return Err(Error::Validation("mask must be a power-of-two grid".into()));
    }
    let top = res.trailing_zeros() as usize;
    let mut cur = mask.to_vec();
    let mut side = res;
    let mut out = vec![(top, cur.iter().filter(|&&b| b).count() as u64)];
    for m in (0..top).rev() {
        let half = side / 2;
        let mut next = vec![false; half.pow(d as u32)];
        for (idx, &b) in cur.iter().enumerate() {
            if !b {
                continue;
            }
            let mut rem = idx;
            let mut j = 0;
            let mut stride = 1;
            for _ in 0..d {
                j += ((rem % side) / 2) * stride;
                rem /= side;
                stride *= half;
            }
            next[j] = true;
        }
        cur = next;
        side = half;
        out.push((m, cur.iter().filter(|&&b| b).count() as u64));
    }
    out.reverse();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedPath;
    use crate::subdivision::{generate_percolation, generate_salem_line};

    #[test]
    fn full_square() {
        let tree = generate_percolation(2, 1.0, 7, &SeedPath::new(0)).unwrap();
        let fit = box_dimension(&tree_occupancy(&tree, 7), None).unwrap();
        assert!((fit.slope - 2.0).abs() < 0.01);
        let mask = vec![true; 64 * 64];
        let fit = box_dimension(&mask_occupancy(&mask, 2, 64).unwrap(), None).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dyadically_rebinned_cantor() {
        let res = 1usize << 16;
        let mut mask = vec![false; res];
        let mut intervals = vec![(0.0f64, 1.0f64)];
        for _ in 0..10 {
            intervals = intervals
                .iter()
                .flat_map(|&(a, b)| {
                    let t = (b - a) / 3.0;
                    [(a, a + t), (b - t, b)]
                })
                .collect();
        }
        for (a, b) in intervals {
            let i0 = (a * res as f64).floor() as usize;
            let i1 = ((b * res as f64).ceil() as usize).min(res);
            mask[i0..i1].iter_mut().for_each(|m| *m = true);
        }
        let fit = box_dimension(&mask_occupancy(&mask, 1, res).unwrap(), Some((3, 14))).unwrap();
        assert!((fit.slope - 2f64.ln() / 3f64.ln()).abs() < 0.05, "{}", fit.slope);
    }

    #[test]
    fn correlation_examples() {
        let lebesgue: Vec<(usize, Vec<f64>)> =
            (0..8).map(|m| (m, vec![(-(m as f64)).exp2(); 1 << m])).collect();
        let fit = correlation_dimension(&lebesgue, None).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);

        let point: Vec<(usize, Vec<f64>)> = (0..8).map(|m| (m, vec![1.0])).collect();
        assert!(correlation_dimension(&point, None).unwrap().slope.abs() < 1e-12);

        let tree = generate_salem_line(0.6, 14, &SeedPath::new(5)).unwrap();
        let masses: Vec<(usize, Vec<f64>)> = (1..=14).map(|m| (m, coarse_cell_masses(&tree, 14, m))).collect();
        let fit = correlation_dimension(&masses, None).unwrap();
        assert!((fit.slope - 0.6).abs() < 0.05, "{}", fit.slope);
    }

    #[test]
    fn box_and_correlation_agree_on_monofractals() {
        // equal-mass Salem cells: every occupied cell carries the same mass
        let tree = generate_salem_line(0.6, 14, &SeedPath::new(1)).unwrap();
        let bx = box_dimension(&tree_occupancy(&tree, 14), Some((2, 14))).unwrap();
        let masses: Vec<(usize, Vec<f64>)> = (2..=14).map(|m| (m, coarse_cell_masses(&tree, 14, m))).collect();
        let corr = correlation_dimension(&masses, None).unwrap();
        assert!((bx.slope - corr.slope).abs() < 0.1);
    }

    #[test]
    fn coarse_masses_sum_to_total() {
        let tree = generate_percolation(2, 0.8, 6, &SeedPath::new(3)).unwrap();
        for m in 0..=6 {
            let total: f64 = coarse_cell_masses(&tree, 6, m).iter().sum();
            assert!((total - tree.total_mass(6)).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_levels() {
        assert!(box_dimension(&[(0, 1), (1, 2), (2, 4)], None).is_err());
    }
}
