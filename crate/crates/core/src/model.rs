//! Model descriptions and their sampled realizations.

use serde::{Deserialize, Serialize};

use crate::cutout::{alpha_of_intensity, CutoutRealization, CutoutSampler, IntensitySpec, Region};
use crate::density::Density;
use crate::error::{invalid, Error, Result};
use crate::geom::HalfOpenBox;
use crate::rng::SeedPath;
use crate::subdivision::{generate_cascade, generate_percolation, generate_salem_line, SubdivisionTree, WeightLaw};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Dyadic fractal percolation on `[0, 1)^d`.
    Percolation { d: usize, p: f64 },
    /// i.i.d. weight cascade on `[0, 1)^d`.
    Cascade { d: usize, law: WeightLaw },
    /// Random dyadic selection on `[0, 1)` with `P_n ~ 2^{alpha0 n}` cells.
    SalemLine { alpha0: f64 },
    /// Ball cutouts with a single atom sized to give `alpha`.
    BallCutout {
        d: usize,
        alpha: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain: Option<Region>,
    },
    /// General cutout intensity.
    Cutout {
        d: usize,
        intensity: IntensitySpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain: Option<Region>,
    },
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Percolation { d, .. }
            | ModelSpec::Cascade { d, .. }
            | ModelSpec::BallCutout { d, .. }
            | ModelSpec::Cutout { d, .. } => *d,
            ModelSpec::SalemLine { .. } => 1,
        }
    }

    pub fn is_cutout(&self) -> bool {
        matches!(self, ModelSpec::BallCutout { .. } | ModelSpec::Cutout { .. })
    }

    /// Intensity of a cutout model.
    pub fn intensity(&self) -> Result<IntensitySpec> {
        match self {
            ModelSpec::BallCutout { d, alpha, .. } => IntensitySpec::ball_with_alpha(*d, *alpha),
            ModelSpec::Cutout { intensity, .. } => Ok(intensity.clone()),
            _ => Err(invalid("not a cutout model")),
        }
    }

    /// Seed domain: `B(0, 1)` for ball models, the diameter-1 snowflake when
    /// every atom is a snowflake, `[0, 1)^d` for subdivision models.
    pub fn seed_domain(&self) -> Result<Region> {
        match self {
            ModelSpec::BallCutout { d, domain, .. } => Ok(domain.clone().unwrap_or_else(|| Region::unit_ball(*d))),
            ModelSpec::Cutout { d, intensity, domain } => Ok(domain.clone().unwrap_or_else(|| {
                if *d == 2 && !intensity.atoms.is_empty() && !intensity.all_balls() {
                    Region::unit_snowflake()
                } else {
                    Region::unit_ball(*d)
                }
            })),
            _ => Err(invalid("subdivision models live on the unit cube")),
        }
    }

    pub fn seed_domain_label(&self) -> String {
        match self.seed_domain() {
            Ok(Region::Ball { center, radius }) => format!("ball(center={center:?}, radius={radius})"),
            Ok(Region::Snowflake { center, diameter, depth }) => {
                format!("snowflake(center={center:?}, diameter={diameter}, depth={depth})")
            }
            Err(_) => format!("unit_cube(d={})", self.dim()),
        }
    }

    pub fn alpha(&self) -> Result<f64> {
        match self {
            ModelSpec::Percolation { p, .. } => Ok(-p.log2()),
            ModelSpec::Cascade { law, .. } => Ok(-law.survival_probability().log2()),
            ModelSpec::SalemLine { alpha0 } => Ok(1.0 - alpha0),
            _ => alpha_of_intensity(&self.intensity()?, self.dim()),
        }
    }

    pub fn growth_constant(&self) -> Result<f64> {
        match self {
            ModelSpec::Percolation { p, .. } => Ok(1.0 / p),
            ModelSpec::Cascade { law, .. } => Ok(law.max_weight()),
            ModelSpec::SalemLine { .. } => Ok(2.0),
            _ => Ok(self.alpha()?.exp2()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Percolation { d, p } => {
                if !(1..=3).contains(d) || !(*p > 0.0 && *p <= 1.0) {
                    return Err(Error::Validation(format!("percolation needs d in 1..=3 and p in (0, 1], got d={d}, p={p}")));
                }
            }
            ModelSpec::Cascade { d, .. } => {
                if !(1..=3).contains(d) {
                    return Err(Error::Validation(format!("cascade needs d in 1..=3, got {d}")));
                }
            }
            ModelSpec::SalemLine { alpha0 } => {
                if !(*alpha0 > 0.0 && *alpha0 <= 1.0) {
                    return Err(Error::Validation(format!("alpha0 must lie in (0, 1], got {alpha0}")));
                }
            }
            ModelSpec::BallCutout { .. } | ModelSpec::Cutout { .. } => {
                let domain = self.seed_domain()?;
                domain.validate()?;
                if domain.dim() != self.dim() {
                    return Err(Error::Validation("domain dimension does not match d".into()));
                }
                self.intensity()?.validate(self.dim())?;
            }
        }
        Ok(())
    }

    pub fn realize(&self, depth: usize, seed: &SeedPath) -> Result<Realization> {
        self.validate()?;
        Ok(match self {
            ModelSpec::Percolation { d, p } => Realization::Tree(generate_percolation(*d, *p, depth, seed)?),
            ModelSpec::Cascade { d, law } => Realization::Tree(generate_cascade(*d, law, depth, seed)?),
            ModelSpec::SalemLine { alpha0 } => Realization::Tree(generate_salem_line(*alpha0, depth, seed)?),
            _ => Realization::Cutout(self.cutout_sampler(seed)?.sample(depth)?),
        })
    }

    pub fn cutout_sampler(&self, seed: &SeedPath) -> Result<CutoutSampler> {
        CutoutSampler::new(self.intensity()?, self.seed_domain()?, seed.clone())
    }
}

/// One sampled run of any model.
#[derive(Debug, Clone)]
pub enum Realization {
    Cutout(CutoutRealization),
    Tree(SubdivisionTree),
}

impl Realization {
    /// `||mu_n||`: exact for trees, midpoint quadrature at `2^{-(n+4)}` for cutouts.
    pub fn total_mass(&self, n: usize) -> f64 {
        match self {
            Realization::Tree(t) => t.total_mass(n),
            Realization::Cutout(c) => {
                let bbox = c.domain.bounding_box();
                let side = bbox.high()[0] - bbox.low()[0];
                let res = ((side * (n as f64 + 4.0).exp2()).ceil() as usize).next_power_of_two().min(4096);
                let grid = crate::raster::Grid::new(c.d, res, bbox.low().to_vec(), side / res as f64)
                    .expect("valid grid");
                let raster = c.density_raster(n, &grid);
                raster.mass()
            }
        }
    }

    pub fn serialize(&self) -> Result<String> {
        match self {
            Realization::Cutout(c) => c.to_json(),
            Realization::Tree(t) => Ok(t.to_records()),
        }
    }

    /// Cutout realizations are JSON documents, trees are `#`-headed records.
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim_start().chars().next() {
            Some('{') => Ok(Realization::Cutout(CutoutRealization::from_json(text)?)),
            Some('#') => Ok(Realization::Tree(SubdivisionTree::from_records(text)?)),
            _ => Err(Error::Parse("unrecognised realization file".into())),
        }
    }

    pub fn as_tree(&self) -> Option<&SubdivisionTree> {
        match self {
            Realization::Tree(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_cutout(&self) -> Option<&CutoutRealization> {
        match self {
            Realization::Cutout(c) => Some(c),
            _ => None,
        }
    }

    fn inner(&self) -> &dyn Density {
        match self {
            Realization::Cutout(c) => c,
            Realization::Tree(t) => t,
        }
    }
}

impl Density for Realization {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn max_level(&self) -> usize {
        self.inner().max_level()
    }
    fn evaluate(&self, x: &[f64], n: usize) -> f64 {
        self.inner().evaluate(x, n)
    }
    fn growth_constant(&self) -> f64 {
        self.inner().growth_constant()
    }
    fn alpha(&self) -> f64 {
        self.inner().alpha()
    }
    fn support(&self) -> HalfOpenBox {
        self.inner().support()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tagged_models() {
        let m: ModelSpec = serde_json::from_str(r#"{"kind":"percolation","d":2,"p":0.7}"#).unwrap();
        assert_eq!(m.dim(), 2);
        assert!((m.alpha().unwrap() + 0.7f64.log2()).abs() < 1e-15);
        assert!(serde_json::from_str::<ModelSpec>(r#"{"kind":"percolation","d":2,"p":0.7,"q":1}"#).is_err());
        let b: ModelSpec = serde_json::from_str(r#"{"kind":"ball_cutout","d":2,"alpha":0.5}"#).unwrap();
        assert!((b.alpha().unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(b.seed_domain().unwrap(), Region::unit_ball(2));
    }

    #[test]
    fn snowflake_models_default_to_snowflake_seed() {
        let m: ModelSpec = serde_json::from_str(
            r#"{"kind":"cutout","d":2,"intensity":{"atoms":[{"shape":"snowflake","weight":0.5}]}}"#,
        )
        .unwrap();
        assert_eq!(m.seed_domain().unwrap(), Region::unit_snowflake());
    }

    #[test]
    fn realizations_roundtrip_through_text() {
        let seed = SeedPath::new(4);
        for model in [
            ModelSpec::Percolation { d: 2, p: 0.7 },
            ModelSpec::BallCutout { d: 2, alpha: 0.5, domain: None },
        ] {
            let r = model.realize(4, &seed).unwrap();
            let text = r.serialize().unwrap();
            let back = Realization::parse(&text).unwrap();
            assert_eq!(back.serialize().unwrap(), text);
        }
    }

    #[test]
    fn growth_constants() {
        assert_eq!(ModelSpec::SalemLine { alpha0: 0.6 }.growth_constant().unwrap(), 2.0);
        let c = ModelSpec::BallCutout { d: 2, alpha: 1.0, domain: None };
        assert!((c.growth_constant().unwrap() - 2.0).abs() < 1e-15);
    }
}
