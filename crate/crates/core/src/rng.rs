//! Counter-based random streams addressed by a root seed and a path in the
//! construction tree.
//!
//! Every random choice in a realization is drawn from the stream of the tree
//! node it belongs to (a dyadic cell, a scale band, a replicate), so the order
//! in which nodes are visited never changes the outcome.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The random stream handed out by [`derive_stream`].
pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedPath {
    pub root_seed: u64,
    #[serde(default)]
    pub path: Vec<u64>,
}

impl SeedPath {
    pub fn new(root_seed: u64) -> Self {
        Self {
            root_seed,
            path: Vec::new(),
        }
    }

    pub fn child(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        Self {
            root_seed: self.root_seed,
            path,
        }
    }

    pub fn extend(&self, indices: &[u64]) -> Self {
        let mut path = self.path.clone();
        path.extend_from_slice(indices);
        Self {
            root_seed: self.root_seed,
            path,
        }
    }

    pub fn stream(&self) -> Stream {
        derive_stream(self)
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha key derived from the whole path; the path length is mixed in so
/// that `[]` and `[0]` address different streams.
fn path_key(seed: &SeedPath) -> [u8; 32] {
    let mut h = splitmix64(seed.root_seed ^ 0x5EED_0F5A_17A1_u64);
    for &p in &seed.path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    h = splitmix64(h ^ (seed.path.len() as u64).wrapping_mul(0xE703_7ED1_A0B4_28DB));
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        h = splitmix64(h.wrapping_add(i as u64));
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    key
}

pub fn derive_stream(seed: &SeedPath) -> Stream {
    ChaCha8Rng::from_seed(path_key(seed))
}

/// Uniform draw on `[0, 1)`.
#[inline]
pub fn uniform(rng: &mut Stream) -> f64 {
    rng.random::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(seed: &SeedPath, n: usize) -> Vec<f64> {
        let mut rng = seed.stream();
        (0..n).map(|_| uniform(&mut rng)).collect()
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn identical_paths_give_identical_streams() {
        let s = SeedPath::new(42).extend(&[3, 1, 4]);
        let a: Vec<u64> = draws(&s, 1000).iter().map(|x| x.to_bits()).collect();
        let b: Vec<u64> = draws(&s.clone(), 1000).iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_path_is_root_stream() {
        let root = SeedPath::new(7);
        let explicit = SeedPath {
            root_seed: 7,
            path: vec![],
        };
        assert_eq!(draws(&root, 50), draws(&explicit, 50));
        assert_ne!(draws(&root, 50), draws(&root.child(0), 50));
    }

    #[test]
    fn sibling_streams_uncorrelated() {
        let a = draws(&SeedPath::new(1).child(2), 10_000);
        let b = draws(&SeedPath::new(1).child(3), 10_000);
        let r = correlation(&a, &b);
        // observed on this seed pair: r = -8.4e-3, within 1 sigma of 0 at n = 10^4
        assert!(r.abs() < 0.02, "cross correlation {r}");
    }

    #[test]
    fn lag_one_correlation_small() {
        for path in [vec![], vec![0], vec![5, 9], vec![u64::MAX]] {
            let s = SeedPath { root_seed: 99, path };
            let a = draws(&s, 10_001);
            let r = correlation(&a[..10_000], &a[1..]);
            assert!(r.abs() < 0.02, "lag-1 correlation {r}");
        }
    }
}
