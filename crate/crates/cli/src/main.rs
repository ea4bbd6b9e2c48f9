use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use simart::analysis::{convolve, sumset_interior, ProbeLattice};
use simart::experiment::{
    analysis_files, pgm_bytes, render_raster, run_experiment, AnalysisRequest, ExperimentConfig, RealizationCache,
    RunOptions,
};
use simart::families::PlaneParam;
use simart::intersect::mass_sequence;
use simart::{Density, Error, Realization, SeedPath};

#[derive(Parser)]
#[command(name = "simart", version, about = "Spatially independent martingales: simulation and geometry")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for replicate scheduling.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replaces the config's root seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Source {
    /// Persisted realization; otherwise one is sampled from --config.
    #[arg(long)]
    realization: Option<PathBuf>,
    /// Replicate index used when sampling from --config.
    #[arg(long, default_value_t = 0)]
    replicate: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Estimator {
    Box,
    Correlation,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment config.
    Run,
    /// Sample every replicate and persist the realizations.
    Simulate,
    /// Mass sequences Y_n for the config's families.
    Intersect {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        level: Option<usize>,
    },
    /// Projection profile onto a direction given as comma-separated components; it is normalized.
    Project {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        direction: Vec<f64>,
        #[arg(long)]
        level: Option<usize>,
        #[arg(long, default_value_t = 256)]
        grid_points: usize,
    },
    /// Box-counting or correlation dimension fit.
    Dimension {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum, default_value_t = Estimator::Box)]
        estimator: Estimator,
        #[arg(long)]
        level: Option<usize>,
        #[arg(long, num_args = 2)]
        window: Option<Vec<usize>>,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Band-peak Fourier decay scan.
    Fourier {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        level: Option<usize>,
        #[arg(long, default_value_t = 1024)]
        k_max: usize,
        #[arg(long)]
        half_integer: bool,
    },
    /// Density of mu_n + S(nu_n) and its sumset interior.
    Convolve {
        #[command(flatten)]
        source: Source,
        /// Second realization; defaults to the first (self-convolution).
        #[arg(long)]
        with: Option<PathBuf>,
        /// Row-major entries of S.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        matrix: Vec<f64>,
        #[arg(long)]
        level: Option<usize>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Tail frequencies of |Y_{n+1} - Y_n| over fresh replicates.
    TailAudit {
        #[arg(long)]
        family: String,
        #[arg(long)]
        level: usize,
        #[arg(long, value_delimiter = ',')]
        kappas: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
    },
    /// 16-bit PGM of mu_n for a planar realization.
    Render {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        level: Option<usize>,
        #[arg(long, default_value_t = 512)]
        resolution: usize,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Validation(_) | Error::Parse(_) | Error::Json(_) | Error::InvalidParameter(_) => 2,
                Error::Resource(_) => 3,
                Error::Io(_) => 4,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read_config(cli: &Cli) -> anyhow::Result<(String, ExperimentConfig)> {
    let path = cli.config.as_ref().ok_or_else(|| anyhow!(Error::Validation("--config is required".into())))?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = ExperimentConfig::parse(&text)?;
    Ok((text, cfg))
}

fn cache() -> Option<RealizationCache> {
    std::env::var_os("SIMART_CACHE").map(RealizationCache::new)
}

fn load(cli: &Cli, source: &Source) -> anyhow::Result<(Realization, Option<ExperimentConfig>)> {
    let cfg = match &cli.config {
        Some(_) => Some(read_config(cli)?.1),
        None => None,
    };
    if let Some(path) = &source.realization {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok((Realization::parse(&text)?, cfg));
    }
    let c = cfg.ok_or_else(|| anyhow!(Error::Validation("give --realization or --config".into())))?;
    let root = cli.seed_override.unwrap_or(c.seed.root);
    let seed = SeedPath::new(c.replicate_seed(source.replicate, root));
    let real = match cache() {
        Some(cache) => cache.realize(&c.model, c.levels, &seed)?,
        None => c.model.realize(c.levels, &seed)?,
    };
    Ok((real, Some(c)))
}

fn write_files(out: Option<&Path>, files: &[(String, Vec<u8>)]) -> anyhow::Result<()> {
    match out {
        Some(dir) => {
            for (rel, bytes) in files {
                let path = dir.join(rel);
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent)?;
                }
                fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        None => {
            for (rel, bytes) in files.iter().filter(|(r, _)| r.ends_with(".json")) {
                eprintln!("{rel}:");
                print!("{}", String::from_utf8_lossy(bytes));
            }
        }
    }
    Ok(())
}

fn analyze(cli: &Cli, source: &Source, req: AnalysisRequest) -> anyhow::Result<()> {
    let (real, cfg) = load(cli, source)?;
    let top = real.max_level();
    let engine = cfg.as_ref().map(|c| c.engine.clone()).unwrap_or_default();
    let families = match &cfg {
        Some(c) => c.family_list()?,
        None => Vec::new(),
    };
    let files = analysis_files(&real, &req, top, &engine, &families, req.kind())?;
    write_files(cli.out.as_deref(), &files)
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Run => {
            let (text, _) = read_config(cli)?;
            let summary = run_experiment(
                &text,
                &RunOptions {
                    out_dir: cli.out.clone(),
                    threads: cli.threads,
                    seed_override: cli.seed_override,
                    cache_dir: std::env::var_os("SIMART_CACHE").map(PathBuf::from),
                },
            )?;
            println!("{}", summary.out_dir.join("manifest.json").display());
        }
        Command::Simulate => {
            let (_, cfg) = read_config(cli)?;
            let out = cli.out.clone().ok_or_else(|| anyhow!(Error::Validation("--out is required".into())))?;
            fs::create_dir_all(&out)?;
            let root = cli.seed_override.unwrap_or(cfg.seed.root);
            let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(1).max(1)).build()?;
            let cache = cache();
            let texts: Vec<String> = pool.install(|| {
                (0..cfg.replicates)
                    .into_par_iter()
                    .map(|r| {
                        let seed = SeedPath::new(cfg.replicate_seed(r, root));
                        let real = match &cache {
                            Some(c) => c.realize(&cfg.model, cfg.levels, &seed)?,
                            None => cfg.model.realize(cfg.levels, &seed)?,
                        };
                        real.serialize()
                    })
                    .collect::<simart::Result<Vec<_>>>()
            })?;
            for (r, text) in texts.iter().enumerate() {
                let path = out.join(format!("replicate_{r}.real"));
                fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
                println!("{}", path.display());
            }
        }
        Command::Intersect { source, level } => {
            let (real, cfg) = load(cli, source)?;
            let cfg = cfg.ok_or_else(|| anyhow!(Error::Validation("intersect needs --config for its families".into())))?;
            let n = level.unwrap_or(real.max_level());
            let mut csv = String::from("family_id,n,Y,increment,method\n");
            let mut seqs = Vec::new();
            for (id, fam) in cfg.family_list()? {
                let seq = mass_sequence(&real, &fam, &id, n, &cfg.engine)?;
                for (m, y) in seq.values.iter().enumerate() {
                    let inc = if m == 0 { String::new() } else { seq.increments[m - 1].to_string() };
                    csv.push_str(&format!("{id},{m},{y},{inc},{}\n", seq.method));
                }
                seqs.push(seq);
            }
            match &cli.out {
                Some(dir) => write_files(
                    Some(dir),
                    &[
                        ("masses.csv".into(), csv.into_bytes()),
                        ("sequences.json".into(), serde_json::to_vec_pretty(&seqs)?),
                    ],
                )?,
                None => print!("{csv}"),
            }
        }
        Command::Project {
            source,
            direction,
            level,
            grid_points,
        } => {
            let d = direction.len();
            let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(simart::Error::InvalidParameter("direction must be a nonzero finite vector".into()).into());
            }
            let unit: Vec<f64> = direction.iter().map(|v| v / norm).collect();
            let w = PlaneParam::new(vec![0.0; d], vec![unit])?;
            analyze(
                cli,
                source,
                AnalysisRequest::Projection {
                    direction: w,
                    level: *level,
                    grid_points: *grid_points,
                },
            )?;
        }
        Command::Dimension {
            source,
            estimator,
            level,
            window,
            resolution,
        } => {
            let window = window.as_ref().map(|w| (w[0], w[1]));
            let req = match estimator {
                Estimator::Box => AnalysisRequest::BoxDimension {
                    level: *level,
                    window,
                    resolution: *resolution,
                },
                Estimator::Correlation => AnalysisRequest::CorrelationDimension { level: *level, window },
            };
            analyze(cli, source, req)?;
        }
        Command::Fourier {
            source,
            level,
            k_max,
            half_integer,
        } => analyze(
            cli,
            source,
            AnalysisRequest::Fourier {
                level: *level,
                k_max: *k_max,
                lattice: Some(if *half_integer {
                    ProbeLattice::HalfInteger
                } else {
                    ProbeLattice::Integer
                }),
            },
        )?,
        Command::Convolve {
            source,
            with,
            matrix,
            level,
            resolution,
            threshold,
        } => {
            let (a, _) = load(cli, source)?;
            let d = a.dim();
            let s: Vec<Vec<f64>> = if matrix.is_empty() {
                (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
            } else if matrix.len() == d * d {
                matrix.chunks(d).map(|c| c.to_vec()).collect()
            } else {
                bail!(Error::InvalidParameter(format!("--matrix needs {} entries", d * d)));
            };
            match with {
                None => analyze(
                    cli,
                    source,
                    AnalysisRequest::Convolve {
                        level: *level,
                        s,
                        resolution: *resolution,
                        threshold_fraction: Some(*threshold),
                    },
                )?,
                Some(path) => {
                    let b = Realization::parse(&fs::read_to_string(path)?)?;
                    let (ta, tb) = match (a.as_tree(), b.as_tree()) {
                        (Some(x), Some(y)) => (x, y),
                        _ => bail!(Error::Unsupported("two-source convolution needs subdivision models".into())),
                    };
                    let n = level.unwrap_or(a.max_level().min(b.max_level()));
                    let res = resolution.unwrap_or(1 << n);
                    let grid = convolve(&ta.density_field(n, res)?, &tb.density_field(n, res)?, &s, res, false)?;
                    let coarse = if n >= 2 {
                        let r = res >> 2;
                        Some(convolve(&ta.density_field(n - 2, r)?, &tb.density_field(n - 2, r)?, &s, r, false)?)
                    } else {
                        None
                    };
                    let sumset = sumset_interior(&grid, *threshold, coarse.as_ref())?;
                    let summary = serde_json::json!({
                        "level": n, "resolution": res, "det": grid.det, "sup": grid.sup,
                        "mass": grid.density.mass(), "flags": grid.flags, "sumset": sumset,
                    });
                    let mut body = serde_json::to_vec_pretty(&summary)?;
                    body.push(b'\n');
                    write_files(cli.out.as_deref(), &[("convolve.json".into(), body)])?;
                }
            }
        }
        Command::TailAudit {
            family,
            level,
            kappas,
            replicates,
        } => {
            let (_, mut cfg) = read_config(cli)?;
            cfg.analyses = vec![AnalysisRequest::TailAudit {
                family: family.clone(),
                level: *level,
                kappas: kappas.clone(),
                replicates: *replicates,
            }];
            cfg.validate()?;
            let fam = cfg
                .family_list()?
                .into_iter()
                .find(|(id, _)| id == family)
                .map(|(_, f)| f)
                .expect("validated");
            let root = cli.seed_override.unwrap_or(cfg.seed.root);
            let report = simart::analysis::increment_tail_audit(
                &cfg.model,
                &fam,
                *level,
                kappas,
                *replicates,
                &SeedPath::new(root),
                &simart::analysis::TailAuditOptions { engine: cfg.engine.clone() },
            )?;
            write_files(
                cli.out.as_deref(),
                &[
                    ("tail_audit.csv".into(), report.to_csv().into_bytes()),
                    ("tail_audit.json".into(), report.to_json()?.into_bytes()),
                ],
            )?;
        }
        Command::Render {
            source,
            level,
            resolution,
        } => {
            let (real, _) = load(cli, source)?;
            let raster = render_raster(&real, level.unwrap_or(real.max_level()), *resolution)?;
            let bytes = pgm_bytes(&raster)?;
            let out = cli.out.clone().ok_or_else(|| anyhow!(Error::Validation("--out is required".into())))?;
            fs::write(&out, bytes).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}
