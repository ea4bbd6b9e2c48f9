//! Experiment configs and seeded batch runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    box_dimension, coarse_cell_masses, convolve, correlation_dimension, fourier_dimension_estimate,
    increment_tail_audit, mask_occupancy, sumset_interior, tree_occupancy, ProbeLattice, TailAuditOptions,
};
use crate::curve::{curve_distance, CurveParam};
use crate::density::Density;
use crate::error::{Error, Result};
use crate::families::{plane_metric, FamilyParam, IfsParam, PlaneParam};
use crate::intersect::{holder_fit, mass_sequence, projection_profile, EngineOptions, MassSequence, Regime};
use crate::model::{ModelSpec, Realization};
use crate::raster::{Grid, Raster};
use crate::rng::SeedPath;

/// JSON schema for [`ExperimentConfig`], as published in the repository.
pub const CONFIG_SCHEMA: &str = include_str!("../../../schema/experiment.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plane: Option<PlaneParam>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveParam>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ifs: Option<IfsParam>,
}

impl FamilyEntry {
    pub fn family(&self) -> Result<FamilyParam> {
        match (&self.plane, &self.curve, &self.ifs) {
            (Some(p), None, None) => Ok(FamilyParam::Plane(p.clone())),
            (None, Some(c), None) => Ok(FamilyParam::Curve(c.clone())),
            (None, None, Some(f)) => Ok(FamilyParam::Ifs(f.clone())),
            _ => Err(Error::Validation(format!(
                "family '{}' must have exactly one of plane, curve, ifs",
                self.id
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    pub root: u64,
    /// Replicate index to explicit seed.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<usize, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgmRequest {
    pub level: Option<usize>,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
    pub pgm: Option<PgmRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalysisRequest {
    BoxDimension {
        level: Option<usize>,
        window: Option<(usize, usize)>,
        /// Mask resolution for cutout models.
        resolution: Option<usize>,
    },
    CorrelationDimension {
        level: Option<usize>,
        window: Option<(usize, usize)>,
    },
    Fourier {
        level: Option<usize>,
        k_max: usize,
        lattice: Option<ProbeLattice>,
    },
    Convolve {
        level: Option<usize>,
        s: Vec<Vec<f64>>,
        resolution: Option<usize>,
        threshold_fraction: Option<f64>,
    },
    Projection {
        direction: PlaneParam,
        level: Option<usize>,
        grid_points: usize,
    },
    TailAudit {
        family: String,
        level: usize,
        kappas: Vec<f64>,
        replicates: usize,
    },
    Holder {
        level: Option<usize>,
    },
}

impl AnalysisRequest {
    pub fn kind(&self) -> &'static str {
        match self {
            AnalysisRequest::BoxDimension { .. } => "box_dimension",
            AnalysisRequest::CorrelationDimension { .. } => "correlation_dimension",
            AnalysisRequest::Fourier { .. } => "fourier",
            AnalysisRequest::Convolve { .. } => "convolve",
            AnalysisRequest::Projection { .. } => "projection",
            AnalysisRequest::TailAudit { .. } => "tail_audit",
            AnalysisRequest::Holder { .. } => "holder",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelSpec,
    #[serde(default)]
    pub families: Vec<FamilyEntry>,
    /// Deepest level `n`; every realization is sampled to this depth.
    pub levels: usize,
    #[serde(default = "one")]
    pub replicates: usize,
    pub seed: SeedConfig,
    #[serde(default)]
    pub engine: EngineOptions,
    /// Declared regime; `limit` requires `s > alpha` for every family.
    #[serde(default = "limit")]
    pub regime: Regime,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub analyses: Vec<AnalysisRequest>,
}

fn one() -> usize {
    1
}

fn limit() -> Regime {
    Regime::Limit
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.replicates == 0 {
            return Err(Error::Validation("replicates must be at least 1".into()));
        }
        let d = self.model.dim();
        let alpha = self.model.alpha()?;
        let mut ids = BTreeSet::new();
        for entry in &self.families {
            if !ids.insert(entry.id.as_str()) {
                return Err(Error::Validation(format!("duplicate family id '{}'", entry.id)));
            }
            let fam = entry.family()?;
            if fam.dim() != d {
                return Err(Error::Validation(format!(
                    "family '{}' lives in dimension {} but the model has d = {d}",
                    entry.id,
                    fam.dim()
                )));
            }
            let s = fam.frostman_exponent();
            if self.regime == Regime::Limit && s <= alpha {
                return Err(Error::Validation(format!(
                    "family '{}' has Frostman exponent s = {s} <= alpha = {alpha}; regime \"limit\" requires s > α",
                    entry.id
                )));
            }
        }
        for a in &self.analyses {
            if let AnalysisRequest::TailAudit { family, .. } = a {
                if !ids.contains(family.as_str()) {
                    return Err(Error::Validation(format!("tail_audit names unknown family '{family}'")));
                }
            }
        }
        Ok(())
    }

    pub fn family_list(&self) -> Result<Vec<(String, FamilyParam)>> {
        self.families.iter().map(|e| Ok((e.id.clone(), e.family()?))).collect()
    }

    /// Seed of replicate `r`: the override if present, else derived from the root.
    pub fn replicate_seed(&self, r: usize, root: u64) -> u64 {
        if let Some(s) = self.seed.overrides.get(&r) {
            return *s;
        }
        SeedPath::new(root).child(r as u64).stream().next_u64()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the config re-serialized with sorted keys and no whitespace.
pub fn canonical_config_hash(text: &str) -> Result<String> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    Ok(sha256_hex(serde_json::to_string(&value)?.as_bytes()))
}

/// Loads or stores realizations keyed by model, depth and seed.
#[derive(Debug, Clone)]
pub struct RealizationCache {
    dir: PathBuf,
}

impl RealizationCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn path(&self, model: &ModelSpec, depth: usize, seed: &SeedPath) -> Result<PathBuf> {
        let key = format!("{}|{depth}|{}|{:?}", serde_json::to_string(model)?, seed.root_seed, seed.path);
        Ok(self.dir.join(format!("{}.real", &sha256_hex(key.as_bytes())[..32])))
    }

    pub fn realize(&self, model: &ModelSpec, depth: usize, seed: &SeedPath) -> Result<Realization> {
        let path = self.path(model, depth, seed)?;
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(r) = Realization::parse(&text) {
                return Ok(r);
            }
        }
        let r = model.realize(depth, seed)?;
        fs::create_dir_all(&self.dir)?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::write(&tmp, r.serialize()?)?;
        fs::rename(&tmp, &path)?;
        Ok(r)
    }
}

/// Raster of `mu_n` for display: `[0,1)^d` for trees, the domain's bounding
/// box for cutouts.
pub fn render_raster(realization: &Realization, n: usize, resolution: usize) -> Result<Raster> {
    match realization {
        Realization::Tree(t) => t.density_field(n, resolution),
        Realization::Cutout(c) => {
            if !resolution.is_power_of_two() {
                return Err(Error::InvalidParameter("resolution must be a power of two".into()));
            }
            let bbox = c.domain.bounding_box();
            let side = bbox.high()[0] - bbox.low()[0];
            let grid = Grid::new(c.d, resolution, bbox.low().to_vec(), side / resolution as f64)?;
            Ok(c.density_raster(n, &grid))
        }
    }
}

pub fn pgm_bytes(raster: &Raster) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    raster.write_pgm16(&mut out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: Option<String>,
    pub version: String,
    pub config_sha256: String,
    pub seed_root: u64,
    pub replicates: usize,
    pub threads: usize,
    pub wall_time_seconds: f64,
    /// Relative path to SHA-256 of every file written, except the manifest.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed_override: Option<u64>,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

struct ReplicateOutput {
    csv_rows: Vec<String>,
    sequences: Vec<MassSequence>,
    files: Vec<(String, Vec<u8>)>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Runs one analysis on one realization and returns `(path, bytes)` pairs
/// named `<stem>.json` and, where a table exists, `<stem>.csv`. Levels
/// default to `top`. Tail audits need fresh realizations and are rejected.
pub fn analysis_files(
    real: &Realization,
    req: &AnalysisRequest,
    top: usize,
    engine: &EngineOptions,
    families: &[(String, FamilyParam)],
    stem: &str,
) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    match req {
        AnalysisRequest::BoxDimension {
            level,
            window,
            resolution,
        } => {
            let n = level.unwrap_or(top);
            let counts = match real {
                Realization::Tree(t) => tree_occupancy(t, n),
                Realization::Cutout(c) => {
                    let res = resolution.unwrap_or(1 << (n + 2).min(12));
                    let bbox = c.domain.bounding_box();
                    let side = bbox.high()[0] - bbox.low()[0];
                    let grid = Grid::new(c.d, res, bbox.low().to_vec(), side / res as f64)?;
                    mask_occupancy(&c.survivor_mask(n, &grid), c.d, res)?
                }
            };
            if counts.iter().all(|(_, c)| *c == 0) {
                files.push((format!("{stem}.json"), json_bytes(&serde_json::json!({"extinct": true}))?));
            } else {
                let fit = box_dimension(&counts, *window)?;
                files.push((format!("{stem}.csv"), fit.to_csv().into_bytes()));
                files.push((format!("{stem}.json"), json_bytes(&fit)?));
            }
        }
        AnalysisRequest::CorrelationDimension { level, window } => {
            let tree = real
                .as_tree()
                .ok_or_else(|| Error::Unsupported("correlation dimension needs a subdivision model".into()))?;
            let n = level.unwrap_or(top);
            if tree.total_mass(n) > 0.0 {
                let masses: Vec<(usize, Vec<f64>)> = (0..=n).map(|m| (m, coarse_cell_masses(tree, n, m))).collect();
                let fit = correlation_dimension(&masses, *window)?;
                files.push((format!("{stem}.csv"), fit.to_csv().into_bytes()));
                files.push((format!("{stem}.json"), json_bytes(&fit)?));
            } else {
                files.push((format!("{stem}.json"), json_bytes(&serde_json::json!({"extinct": true}))?));
            }
        }
        AnalysisRequest::Fourier { level, k_max, lattice } => {
            let rep = fourier_dimension_estimate(
                real,
                level.unwrap_or(top),
                *k_max,
                lattice.unwrap_or(ProbeLattice::Integer),
            )?;
            files.push((format!("{stem}.csv"), rep.to_csv().into_bytes()));
            files.push((format!("{stem}.json"), json_bytes(&rep)?));
        }
        AnalysisRequest::Convolve {
            level,
            s,
            resolution,
            threshold_fraction,
        } => {
            let n = level.unwrap_or(top);
            let res = resolution.unwrap_or(match real {
                Realization::Tree(_) => 1 << n,
                Realization::Cutout(_) => 1 << (n + 2),
            });
            let field = render_raster(real, n, res)?;
            let grid = convolve(&field, &field, s, res, true)?;
            let frac = threshold_fraction.unwrap_or(0.5);
            let coarse = if n >= 2 {
                let cres = match real {
                    Realization::Tree(_) => res >> 2,
                    Realization::Cutout(_) => res,
                };
                let cf = render_raster(real, n - 2, cres)?;
                Some(convolve(&cf, &cf, s, cres, true)?)
            } else {
                None
            };
            let sumset = sumset_interior(&grid, frac, coarse.as_ref())?;
            let summary = serde_json::json!({
                "level": n,
                "resolution": res,
                "s": s,
                "det": grid.det,
                "sup": grid.sup,
                "mass": grid.density.mass(),
                "support": grid.support,
                "flags": grid.flags,
                "sumset": sumset,
            });
            files.push((format!("{stem}.json"), json_bytes(&summary)?));
        }
        AnalysisRequest::Projection {
            direction,
            level,
            grid_points,
        } => {
            let prof = projection_profile(real, direction, level.unwrap_or(top), *grid_points, engine)?;
            files.push((format!("{stem}.csv"), prof.to_csv().into_bytes()));
            let summary = serde_json::json!({
                "level": prof.n,
                "riemann_sum": prof.riemann_sum,
                "total_mass": prof.total_mass,
                "mass_defect": prof.mass_defect,
                "max_jump": prof.max_jump(),
                "median_jump": prof.median_jump(),
                "method": prof.method,
            });
            files.push((format!("{stem}.json"), json_bytes(&summary)?));
        }
        AnalysisRequest::Holder { level } => {
            let n = level.unwrap_or(top);
            let mut samples = Vec::new();
            for (_, fam) in families {
                let (y, _) = crate::intersect::family_mass(real, fam, n, engine)?;
                samples.push((fam.clone(), y));
            }
            let metric = |a: &FamilyParam, b: &FamilyParam| match (a, b) {
                (FamilyParam::Plane(p), FamilyParam::Plane(q)) => plane_metric(p, q).unwrap_or(f64::NAN),
                (FamilyParam::Curve(p), FamilyParam::Curve(q)) => curve_distance(p, q, 64).unwrap_or(f64::NAN),
                _ => f64::NAN,
            };
            let rep = holder_fit(&samples, metric)?;
            files.push((format!("{stem}.csv"), rep.to_csv().into_bytes()));
            files.push((format!("{stem}.json"), json_bytes(&rep)?));
        }
        AnalysisRequest::TailAudit { .. } => {
            return Err(Error::Unsupported("tail audits sample their own realizations".into()));
        }
    }
    Ok(files)
}

fn run_replicate(
    cfg: &ExperimentConfig,
    rep: usize,
    seed: u64,
    families: &[(String, FamilyParam)],
    cache: Option<&RealizationCache>,
) -> Result<ReplicateOutput> {
    let path = SeedPath::new(seed);
    let real = match cache {
        Some(c) => c.realize(&cfg.model, cfg.levels, &path)?,
        None => cfg.model.realize(cfg.levels, &path)?,
    };
    let mut csv_rows = Vec::new();
    let mut sequences = Vec::new();
    for (id, fam) in families {
        let seq = mass_sequence(&real, fam, id, cfg.levels, &cfg.engine)?;
        for (n, y) in seq.values.iter().enumerate() {
            let inc = if n == 0 { String::new() } else { fmt_f64(seq.increments[n - 1]) };
            csv_rows.push(format!("{rep},{seed},{id},{n},{},{inc},{}", fmt_f64(*y), seq.method));
        }
        sequences.push(seq);
    }
    let mut files = Vec::new();
    for (idx, req) in cfg.analyses.iter().enumerate() {
        if !matches!(req, AnalysisRequest::TailAudit { .. }) {
            let stem = format!("reports/{}_{idx}_r{rep}", req.kind());
            files.extend(analysis_files(&real, req, cfg.levels, &cfg.engine, families, &stem)?);
        }
    }
    if let Some(pgm) = &cfg.output.pgm {
        if real.dim() == 2 {
            let raster = render_raster(&real, pgm.level.unwrap_or(cfg.levels), pgm.resolution)?;
            files.push((format!("render/replicate_{rep}.pgm"), pgm_bytes(&raster)?));
        }
    }
    Ok(ReplicateOutput {
        csv_rows,
        sequences,
        files,
    })
}

/// Runs every replicate, then writes `masses.csv`, `sequences.json`,
/// `reports/`, `render/` and `manifest.json` under the output directory.
pub fn run_experiment(config_text: &str, opts: &RunOptions) -> Result<RunSummary> {
    let start = Instant::now();
    let cfg = ExperimentConfig::parse(config_text)?;
    let config_sha256 = canonical_config_hash(config_text)?;
    let root = opts.seed_override.unwrap_or(cfg.seed.root);
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::Validation("no output directory given (config output.dir or --out)".into()))?;
    let families = cfg.family_list()?;
    let threads = opts.threads.unwrap_or(1).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Resource(format!("thread pool: {e}")))?;
    let cache = opts.cache_dir.as_ref().map(RealizationCache::new);
    let seeds: Vec<u64> = (0..cfg.replicates).map(|r| cfg.replicate_seed(r, root)).collect();
    let outputs: Vec<ReplicateOutput> = pool.install(|| {
        seeds
            .par_iter()
            .enumerate()
            .map(|(r, &s)| run_replicate(&cfg, r, s, &families, cache.as_ref()))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    if !families.is_empty() {
        let mut csv = String::from("replicate,seed,family_id,n,Y,increment,method\n");
        for o in &outputs {
            for row in &o.csv_rows {
                csv.push_str(row);
                csv.push('\n');
            }
        }
        files.push(("masses.csv".into(), csv.into_bytes()));
        let seqs: Vec<serde_json::Value> = outputs
            .iter()
            .enumerate()
            .map(|(r, o)| serde_json::json!({"replicate": r, "seed": seeds[r], "sequences": o.sequences}))
            .collect();
        files.push(("sequences.json".into(), json_bytes(&seqs)?));
    }
    for o in outputs {
        files.extend(o.files);
    }
    for (idx, req) in cfg.analyses.iter().enumerate() {
        if let AnalysisRequest::TailAudit {
            family,
            level,
            kappas,
            replicates,
        } = req
        {
            let fam = &families.iter().find(|(id, _)| id == family).expect("validated").1;
            let seed = SeedPath::new(root).extend(&[u64::MAX, idx as u64]);
            let rep = increment_tail_audit(
                &cfg.model,
                fam,
                *level,
                kappas,
                *replicates,
                &seed,
                &TailAuditOptions {
                    engine: cfg.engine.clone(),
                },
            )?;
            files.push((format!("reports/tail_audit_{idx}.csv"), rep.to_csv().into_bytes()));
            files.push((format!("reports/tail_audit_{idx}.json"), json_bytes(&rep)?));
        }
    }

    let mut hashes = BTreeMap::new();
    for (rel, bytes) in &files {
        let path = out_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        hashes.insert(rel.clone(), sha256_hex(bytes));
    }
    let manifest = Manifest {
        name: cfg.name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256,
        seed_root: root,
        replicates: cfg.replicates,
        threads,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outputs: hashes,
    };
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("manifest.json"), json_bytes(&manifest)?)?;
    Ok(RunSummary { out_dir, manifest })
}

/// Hashes of every file under `dir` except `manifest.json`, keyed by
/// relative path.
pub fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let path = e.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path.strip_prefix(base).expect("inside base").to_string_lossy().replace('\\', "/");
                if rel != "manifest.json" {
                    out.insert(rel, sha256_hex(&fs::read(&path)?));
                }
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "minimal",
        "model": {"kind": "percolation", "d": 2, "p": 1.0},
        "families": [{"id": "diag", "plane": {"point": [0.0, 0.0], "basis": [[0.6, 0.8]]}}],
        "levels": 4,
        "replicates": 2,
        "seed": {"root": 3}
    }"#;

    #[test]
    fn minimal_run_has_constant_masses() {
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(
            MINIMAL,
            &RunOptions {
                out_dir: Some(dir.path().to_path_buf()),
                ..Default::default()
            },
        )
        .unwrap();
        let csv = fs::read_to_string(dir.path().join("masses.csv")).unwrap();
        let ys: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(4).unwrap().parse().unwrap()).collect();
        assert_eq!(ys.len(), 10);
        assert!(ys.iter().all(|y| (y - ys[0]).abs() < 1e-12));
        assert_eq!(summary.manifest.outputs, hash_tree(dir.path()).unwrap());
        assert_eq!(summary.manifest.config_sha256, canonical_config_hash(MINIMAL).unwrap());
    }

    #[test]
    fn reruns_are_identical() {
        let cfg = r#"{
            "model": {"kind": "ball_cutout", "d": 2, "alpha": 0.5},
            "families": [{"id": "h", "plane": {"point": [0.0, 0.1], "basis": [[1.0, 0.0]]}}],
            "levels": 5, "replicates": 3, "seed": {"root": 11},
            "output": {"pgm": {"resolution": 64}},
            "analyses": [{"kind": "box_dimension", "resolution": 128}]
        }"#;
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        for (dir, threads) in [(&a, 1), (&b, 2)] {
            run_experiment(
                cfg,
                &RunOptions {
                    out_dir: Some(dir.path().to_path_buf()),
                    threads: Some(threads),
                    ..Default::default()
                },
            )
            .unwrap();
        }
        let ha = hash_tree(a.path()).unwrap();
        assert_eq!(ha, hash_tree(b.path()).unwrap());
        assert!(ha.contains_key("render/replicate_0.pgm"));
    }

    #[test]
    fn s_at_most_alpha_is_a_validation_error() {
        let cfg = r#"{
            "model": {"kind": "percolation", "d": 2, "p": 0.4},
            "families": [{"id": "l", "plane": {"point": [0.0, 0.5], "basis": [[1.0, 0.0]]}}],
            "levels": 3, "seed": {"root": 1}, "regime": "limit"
        }"#;
        match ExperimentConfig::parse(cfg) {
            Err(Error::Validation(msg)) => assert!(msg.contains("s > α"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let growth = cfg.replace("\"limit\"", "\"growth\"");
        assert!(ExperimentConfig::parse(&growth).is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let cfg = MINIMAL.replace("\"levels\"", "\"levles\": 1, \"levels\"");
        assert!(matches!(ExperimentConfig::parse(&cfg), Err(Error::Validation(_))));
    }

    #[test]
    fn overrides_and_hash_canonicalization() {
        let cfg = ExperimentConfig::parse(&MINIMAL.replace("{\"root\": 3}", "{\"root\": 3, \"overrides\": {\"1\": 99}}"))
            .unwrap();
        assert_eq!(cfg.replicate_seed(1, 3), 99);
        assert_ne!(cfg.replicate_seed(0, 3), cfg.replicate_seed(2, 3));
        let spaced = canonical_config_hash(r#"{"b": 1, "a": [1, 2]}"#).unwrap();
        assert_eq!(spaced, canonical_config_hash(r#"{"a":[1,2],"b":1}"#).unwrap());
    }

    #[test]
    fn schema_lists_the_config_fields() {
        let schema: serde_json::Value = serde_json::from_str(CONFIG_SCHEMA).unwrap();
        let props: BTreeSet<&str> = schema["properties"].as_object().unwrap().keys().map(|k| k.as_str()).collect();
        let expected: BTreeSet<&str> = [
            "name", "model", "families", "levels", "replicates", "seed", "engine", "regime", "output", "analyses",
        ]
        .into_iter()
        .collect();
        assert_eq!(props, expected);
        assert_eq!(schema["additionalProperties"], serde_json::Value::Bool(false));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = RealizationCache::new(dir.path());
        let model = ModelSpec::BallCutout {
            d: 2,
            alpha: 0.5,
            domain: None,
        };
        let a = cache.realize(&model, 4, &SeedPath::new(2)).unwrap();
        let b = cache.realize(&model, 4, &SeedPath::new(2)).unwrap();
        assert_eq!(a.serialize().unwrap(), b.serialize().unwrap());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
