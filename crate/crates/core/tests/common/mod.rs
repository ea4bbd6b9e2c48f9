//! Measurements behind the acceptance suite, shared with the calibration
//! example. Every function is a pure function of its seed.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use simart::analysis::{
    box_dimension, convolve, fourier_dimension_estimate, increment_tail_audit, mask_occupancy, median,
    sumset_interior, ProbeLattice, TailAuditOptions,
};
use simart::cutout::{CutoutSampler, IntensitySpec, Region, ShapeAtom, ShapeKind};
use simart::families::{FamilyParam, PlaneParam};
use simart::intersect::{exact_line_cutout, exact_line_tree, mass_sequence, projection_profile, quadrature_plane, EngineOptions};
use simart::raster::Grid;
use simart::subdivision::WeightLaw;
use simart::{Density, ModelSpec, Realization, SeedPath};

pub fn calibration_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/calibration.json")
}

/// Seeds and thresholds fixed by `examples/calibrate.rs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub calibration_root: u64,
    pub acceptance_root: u64,
    pub decay_window: (f64, f64),
    pub decay_calibration_median: f64,
    pub projection_seed: u64,
    pub projection_factor: f64,
    pub projection_calibration_ratio: f64,
    pub fourier_k_max: usize,
    pub fourier_calibration_median: f64,
    pub sumset_fraction: f64,
    pub sumset_threshold_fraction: f64,
    pub sumset_calibration_frequency: f64,
    pub tail_p: f64,
    pub tail_level: usize,
    pub tail_replicates: usize,
    pub tail_kappas: Vec<f64>,
    pub tail_ratio: f64,
    pub tail_calibration_ratio: f64,
    pub quadrature_tol: f64,
    /// Criterion number to reason, for criteria that fail at desk scale.
    #[serde(default)]
    pub known_failures: Vec<(u32, String)>,
}

impl Calibration {
    pub fn load() -> Self {
        let text = std::fs::read_to_string(calibration_path()).expect("calibration file");
        serde_json::from_str(&text).expect("calibration json")
    }
}

pub fn ball_spec(alpha: f64) -> IntensitySpec {
    IntensitySpec::ball_with_alpha(2, alpha).unwrap()
}

/// Per level `n = 1..=n_max`: `(n, survivors, replicates, 2^{-alpha n})`.
pub fn survival_counts(alpha: f64, n_max: usize, replicates: usize, seed: &SeedPath) -> Vec<(usize, usize, usize, f64)> {
    // only shapes near x matter, so a small seed domain around it suffices
    let x = [0.0, 0.0];
    let domain = Region::Ball {
        center: x.to_vec(),
        radius: 0.01,
    };
    let mut alive = vec![0usize; n_max + 1];
    for r in 0..replicates {
        let sampler = CutoutSampler::new(ball_spec(alpha), domain.clone(), seed.child(r as u64)).unwrap();
        let real = sampler.sample(n_max).unwrap();
        let death = real.death_level(&x).unwrap_or(usize::MAX);
        for (n, a) in alive.iter_mut().enumerate().skip(1) {
            if death > n {
                *a += 1;
            }
        }
    }
    (1..=n_max)
        .map(|n| (n, alive[n], replicates, (-alpha * n as f64).exp2()))
        .collect()
}

/// Box-dimension fits of the first `wanted` non-extinct replicates, and
/// the number of replicates drawn to find them.
pub fn box_dimensions(alpha: f64, depth: usize, res: usize, wanted: usize, seed: &SeedPath) -> (Vec<f64>, usize) {
    let grid = Grid::new(2, res, vec![-1.0, -1.0], 2.0 / res as f64).unwrap();
    let mut dims = Vec::new();
    let mut drawn = 0;
    while dims.len() < wanted {
        let sampler = CutoutSampler::new(ball_spec(alpha), Region::unit_ball(2), seed.child(drawn as u64)).unwrap();
        drawn += 1;
        let mask = sampler.survivor_mask(depth, &grid).unwrap();
        let counts = mask_occupancy(&mask, 2, res).unwrap();
        if counts.last().unwrap().1 == 0 {
            continue;
        }
        dims.push(box_dimension(&counts, None).unwrap().slope);
    }
    (dims, drawn)
}

/// Random line through `B(0, 1/2)`.
pub fn random_line(rng: &mut impl Rng) -> PlaneParam {
    let r = 0.5 * rng.random::<f64>().sqrt();
    let phi = 2.0 * PI * rng.random::<f64>();
    let theta = PI * rng.random::<f64>();
    PlaneParam::line_at_angle([r * phi.cos(), r * phi.sin()], theta)
}

/// Random line through `[0, 1)^2`.
pub fn random_line_unit_square(rng: &mut impl Rng) -> PlaneParam {
    let p = [rng.random::<f64>(), rng.random::<f64>()];
    PlaneParam::line_at_angle(p, PI * rng.random::<f64>())
}

/// Largest `|exact - quadrature|` over ball-cutout realizations and random lines.
pub fn cutout_engine_gap(alpha: f64, n: usize, realizations: usize, lines: usize, tol: f64, seed: &SeedPath) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..realizations {
        let s = seed.child(r as u64);
        let real = CutoutSampler::new(ball_spec(alpha), Region::unit_ball(2), s.clone())
            .unwrap()
            .sample(n)
            .unwrap();
        let mut rng = s.child(u64::MAX).stream();
        for _ in 0..lines {
            let line = random_line(&mut rng);
            let exact = exact_line_cutout(&real, &line, n).unwrap();
            let quad = quadrature_plane(&real, &line, n, tol).unwrap();
            worst = worst.max((exact - quad).abs());
        }
    }
    worst
}

/// Largest `|segment clipping - fine sampling|` for percolation.
pub fn percolation_engine_gap(p: f64, n: usize, realizations: usize, lines: usize, tol: f64, seed: &SeedPath) -> f64 {
    let model = ModelSpec::Percolation { d: 2, p };
    let mut worst: f64 = 0.0;
    for r in 0..realizations {
        let s = seed.child(r as u64);
        let real = model.realize(n, &s).unwrap();
        let tree = real.as_tree().unwrap();
        let mut rng = s.child(u64::MAX).stream();
        for _ in 0..lines {
            let line = random_line_unit_square(&mut rng);
            let exact = exact_line_tree(tree, &line, n).unwrap();
            let fine = quadrature_plane(tree, &line, n, tol).unwrap();
            worst = worst.max((exact - fine).abs());
        }
    }
    worst
}

pub struct AxiomCheck {
    pub model: String,
    /// `(n, point index, mean, standard error)` of `mu_n(x)`.
    pub means: Vec<(usize, usize, f64, f64)>,
    /// Largest `mu_{n+1}(x) / mu_n(x)` seen, and the model's `C`.
    pub max_ratio: f64,
    pub growth: f64,
}

impl AxiomCheck {
    /// Means within `k` standard errors of 1 (the value of `mu_0` at interior points).
    pub fn means_ok(&self, k: f64) -> bool {
        self.means.iter().all(|&(_, _, m, se)| (m - 1.0).abs() <= k * se + 1e-12)
    }

    pub fn ratio_ok(&self) -> bool {
        self.max_ratio <= self.growth * (1.0 + 1e-12)
    }
}

pub fn shipped_models() -> Vec<(String, ModelSpec, Vec<Vec<f64>>)> {
    let cube2 = vec![vec![0.3, 0.6], vec![0.5001, 0.25], vec![0.9, 0.9]];
    let disc = vec![vec![0.0, 0.0], vec![0.3, -0.2], vec![-0.1, 0.25]];
    vec![
        ("percolation".into(), ModelSpec::Percolation { d: 2, p: 0.7 }, cube2.clone()),
        (
            "cascade".into(),
            ModelSpec::Cascade {
                d: 2,
                law: WeightLaw::new(vec![(0.0, 0.2), (0.5, 0.3), (1.7, 0.5)]).unwrap(),
            },
            cube2,
        ),
        (
            "salem_line".into(),
            ModelSpec::SalemLine { alpha0: 0.6 },
            vec![vec![0.1], vec![0.5001], vec![0.77]],
        ),
        (
            "ball_cutout".into(),
            ModelSpec::BallCutout {
                d: 2,
                alpha: 0.5,
                domain: None,
            },
            disc.clone(),
        ),
        (
            "snowflake_cutout".into(),
            ModelSpec::Cutout {
                d: 2,
                intensity: IntensitySpec::new(vec![
                    ShapeAtom {
                        shape: ShapeKind::Snowflake,
                        weight: 0.4,
                    },
                    ShapeAtom {
                        shape: ShapeKind::RotatedSnowflake,
                        weight: 0.4,
                    },
                ]),
                domain: None,
            },
            vec![vec![0.0, 0.0], vec![0.1, -0.1], vec![-0.15, 0.05]],
        ),
    ]
}

pub fn martingale_axioms(
    name: &str,
    model: &ModelSpec,
    points: &[Vec<f64>],
    n_max: usize,
    replicates: usize,
    seed: &SeedPath,
) -> AxiomCheck {
    let mut sum = vec![vec![0.0; points.len()]; n_max + 1];
    let mut sum2 = vec![vec![0.0; points.len()]; n_max + 1];
    let mut max_ratio: f64 = 0.0;
    for r in 0..replicates {
        let real = model.realize(n_max, &seed.child(r as u64)).unwrap();
        for (i, x) in points.iter().enumerate() {
            let mut prev = real.evaluate(x, 0);
            for n in 0..=n_max {
                let v = real.evaluate(x, n);
                sum[n][i] += v;
                sum2[n][i] += v * v;
                if n > 0 && prev > 0.0 {
                    max_ratio = max_ratio.max(v / prev);
                }
                prev = v;
            }
        }
    }
    let reps = replicates as f64;
    let mut means = Vec::new();
    for n in 1..=n_max {
        for i in 0..points.len() {
            let m = sum[n][i] / reps;
            let var = (sum2[n][i] / reps - m * m).max(0.0) * reps / (reps - 1.0);
            means.push((n, i, m, (var / reps).sqrt()));
        }
    }
    AxiomCheck {
        model: name.into(),
        means,
        max_ratio,
        growth: model.growth_constant().unwrap(),
    }
}

pub fn decay_family() -> FamilyParam {
    FamilyParam::Plane(PlaneParam::line_at_angle([0.0, 0.1], 0.2))
}

/// Fitted increment decay slopes `lambda_hat` of a line family.
pub fn decay_slopes(alpha: f64, n_max: usize, replicates: usize, seed: &SeedPath) -> Vec<f64> {
    let model = ModelSpec::BallCutout {
        d: 2,
        alpha,
        domain: None,
    };
    let family = decay_family();
    let opts = EngineOptions::default();
    let mut out = Vec::new();
    for r in 0..replicates {
        let real = model.realize(n_max, &seed.child(r as u64)).unwrap();
        let seq = mass_sequence(&real, &family, "line", n_max, &opts).unwrap();
        if let Some(s) = seq.decay_slope() {
            out.push(s);
        }
    }
    out
}

/// `(principal max jump, diagonal median jump)` of projection profiles.
pub fn projection_jumps(p: f64, depth: usize, grid_points: usize, seed: u64) -> (f64, f64) {
    let real = ModelSpec::Percolation { d: 2, p }.realize(depth, &SeedPath::new(seed)).unwrap();
    let opts = EngineOptions::default();
    let principal = PlaneParam::line(vec![0.0, 0.0], &[1.0, 0.0]).unwrap();
    let diagonal = PlaneParam::line(vec![0.0, 0.0], &[1.0, 1.0]).unwrap();
    let a = projection_profile(&real, &principal, depth, grid_points, &opts).unwrap();
    let b = projection_profile(&real, &diagonal, depth, grid_points, &opts).unwrap();
    (a.max_jump(), b.median_jump())
}

pub fn salem_realizations(alpha0: f64, depth: usize, replicates: usize, seed: &SeedPath) -> Vec<Realization> {
    let model = ModelSpec::SalemLine { alpha0 };
    (0..replicates)
        .map(|r| model.realize(depth, &seed.child(r as u64)).unwrap())
        .collect()
}

pub fn fourier_estimates(reals: &[Realization], depth: usize, k_max: usize) -> Vec<f64> {
    reals
        .iter()
        .map(|r| fourier_dimension_estimate(r, depth, k_max, ProbeLattice::Integer).unwrap().dim_estimate)
        .collect()
}

/// Sup of the self-convolution density of `mu_n` at node spacing `2^{-n}`.
pub fn self_convolution_sup(real: &Realization, n: usize) -> f64 {
    let tree = real.as_tree().unwrap();
    let f = tree.density_field(n, 1 << n).unwrap();
    convolve(&f, &f, &[vec![1.0]], 1 << n, true).unwrap().sup
}

/// Every surviving level-`n` cell carries mass exactly `1 / P_n`.
pub fn frostman_masses_exact(real: &Realization, n: usize) -> bool {
    let tree = real.as_tree().unwrap();
    let masses = tree.cell_masses(n);
    let p = masses.len() as f64;
    !masses.is_empty() && masses.iter().all(|m| (m * p - 1.0).abs() <= 1e-12)
}

/// Whether `A' + A''` shows an interior for each of `pairs` independent
/// pairs of `d = 1` percolations; extinct pairs count as empty.
pub fn sumset_detections(alpha: f64, depth: usize, pairs: usize, threshold: f64, seed: &SeedPath) -> Vec<bool> {
    let model = ModelSpec::Percolation {
        d: 1,
        p: (-alpha).exp2(),
    };
    let s = [vec![1.0]];
    let fine = 1usize << depth;
    let coarse = 1usize << (depth - 2);
    (0..pairs)
        .map(|r| {
            let a = model.realize(depth, &seed.extend(&[r as u64, 0])).unwrap();
            let b = model.realize(depth, &seed.extend(&[r as u64, 1])).unwrap();
            let (ta, tb) = (a.as_tree().unwrap(), b.as_tree().unwrap());
            if ta.total_mass(depth) == 0.0 || tb.total_mass(depth) == 0.0 {
                return false;
            }
            let g = convolve(&ta.density_field(depth, fine).unwrap(), &tb.density_field(depth, fine).unwrap(), &s, fine, false)
                .unwrap();
            let c = convolve(
                &ta.density_field(depth - 2, coarse).unwrap(),
                &tb.density_field(depth - 2, coarse).unwrap(),
                &s,
                coarse,
                false,
            )
            .unwrap();
            let rep = sumset_interior(&g, threshold, Some(&c)).unwrap();
            // nonempty: at least one level-(n-2) cell wide
            rep.min_width() >= 1.0 / coarse as f64
        })
        .collect()
}

/// Tail-audit frequencies for a line through a `d = 2` percolation.
pub fn tail_frequencies(p: f64, n: usize, kappas: &[f64], replicates: usize, seed: &SeedPath) -> Vec<f64> {
    let model = ModelSpec::Percolation { d: 2, p };
    let family = FamilyParam::Plane(PlaneParam::line_at_angle([0.5, 0.5], 0.3));
    let rep = increment_tail_audit(&model, &family, n, kappas, replicates, seed, &TailAuditOptions::default()).unwrap();
    rep.rows.iter().map(|r| r[3]).collect()
}

pub fn median_of(v: &[f64]) -> f64 {
    median(v).unwrap_or(f64::NAN)
}

/// Standard error of a sample median under a normal approximation.
pub fn median_se(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    1.2533 * (var / n).sqrt()
}
