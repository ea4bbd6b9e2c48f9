//! Deterministic measure families `eta_t`: affine planes with Hausdorff
//! measure, self-similar measures, and (in [`crate::curve`]) algebraic curves.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::curve::CurveParam;
use crate::error::{invalid, Error, Result};
use crate::geom::{ball_volume, dot, norm};

/// Affine `k`-plane `point + span(basis)` with `k`-dimensional Hausdorff measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlaneDoc", into = "PlaneDoc")]
pub struct PlaneParam {
    point: Vec<f64>,
    basis: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlaneDoc {
    point: Vec<f64>,
    basis: Vec<Vec<f64>>,
}

impl TryFrom<PlaneDoc> for PlaneParam {
    type Error = Error;
    fn try_from(doc: PlaneDoc) -> Result<Self> {
        PlaneParam::new(doc.point, doc.basis)
    }
}

impl From<PlaneParam> for PlaneDoc {
    fn from(p: PlaneParam) -> Self {
        PlaneDoc {
            point: p.point,
            basis: p.basis,
        }
    }
}

impl PlaneParam {
    pub fn new(point: Vec<f64>, basis: Vec<Vec<f64>>) -> Result<Self> {
        let d = point.len();
        let k = basis.len();
        if !(1..=3).contains(&d) || k == 0 || k >= d {
            return Err(invalid(format!("need 0 < k < d <= 3, got k = {k}, d = {d}")));
        }
        for (i, u) in basis.iter().enumerate() {
            if u.len() != d {
                return Err(invalid("basis vector has the wrong dimension"));
            }
            for (j, v) in basis.iter().enumerate().take(i + 1) {
                let target = if i == j { 1.0 } else { 0.0 };
                if (dot(u, v) - target).abs() > 1e-10 {
                    return Err(Error::Validation("plane basis is not orthonormal".into()));
                }
            }
        }
        Ok(Self { point, basis })
    }

    /// Line through `point` with direction `dir` (normalized here).
    pub fn line(point: Vec<f64>, dir: &[f64]) -> Result<Self> {
        let len = norm(dir);
        if !(len > 0.0) {
            return Err(invalid("line direction must be nonzero"));
        }
        Self::new(point, vec![dir.iter().map(|v| v / len).collect()])
    }

    /// Planar line through `point` at angle `theta` to the first axis.
    pub fn line_at_angle(point: [f64; 2], theta: f64) -> Self {
        Self::line(point.to_vec(), &[theta.cos(), theta.sin()]).expect("unit direction")
    }

    pub fn d(&self) -> usize {
        self.point.len()
    }

    pub fn k(&self) -> usize {
        self.basis.len()
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn projector(&self) -> DMatrix<f64> {
        let d = self.d();
        let mut p = DMatrix::zeros(d, d);
        for u in &self.basis {
            let v = DVector::from_column_slice(u);
            p += &v * v.transpose();
        }
        p
    }

    /// Component of the base point orthogonal to the plane; determines the
    /// plane together with the projector.
    pub fn normal_offset(&self) -> Vec<f64> {
        let mut out = self.point.clone();
        for u in &self.basis {
            let c = dot(&self.point, u);
            for (o, ui) in out.iter_mut().zip(u) {
                *o -= c * ui;
            }
        }
        out
    }

    /// Orthonormal basis of the orthogonal complement of the direction space.
    pub fn complement_basis(&self) -> Vec<Vec<f64>> {
        let d = self.d();
        let mut all: Vec<Vec<f64>> = self.basis.clone();
        let mut out = Vec::new();
        for e in 0..d {
            let mut v = vec![0.0; d];
            v[e] = 1.0;
            for u in &all {
                let c = dot(&v, u);
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= c * ui;
                }
            }
            let len = norm(&v);
            if len > 1e-6 {
                v.iter_mut().for_each(|x| *x /= len);
                all.push(v.clone());
                out.push(v);
            }
        }
        out
    }

    pub fn distance_to(&self, x: &[f64]) -> f64 {
        let mut r: Vec<f64> = x.iter().zip(&self.point).map(|(a, b)| a - b).collect();
        for u in &self.basis {
            let c = dot(&r, u);
            for (ri, ui) in r.iter_mut().zip(u) {
                *ri -= c * ui;
            }
        }
        norm(&r)
    }

    /// `eta_V(B(x, r))` for the Hausdorff measure on the plane.
    pub fn ball_mass(&self, x: &[f64], r: f64) -> f64 {
        let dist = self.distance_to(x);
        if dist >= r {
            return 0.0;
        }
        ball_volume(self.k(), (r * r - dist * dist).sqrt())
    }

    /// `(C, s)` with `eta_V(B(x, r)) <= C r^s`.
    pub fn frostman(&self) -> (f64, f64) {
        (ball_volume(self.k(), 1.0), self.k() as f64)
    }
}

/// `||P_V - P_W||_op + |offset_V - offset_W|`.
pub fn plane_metric(v: &PlaneParam, w: &PlaneParam) -> Result<f64> {
    if v.d() != w.d() || v.k() != w.k() {
        return Err(invalid("planes must share (d, k)"));
    }
    let diff = v.projector() - w.projector();
    let eig = SymmetricEigen::new(diff);
    let op = eig.eigenvalues.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
    let (a, b) = (v.normal_offset(), w.normal_offset());
    let offset = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    Ok(op + offset)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityDimension {
    pub value: f64,
    /// A single map: the attractor is a point.
    pub degenerate: bool,
}

/// Positive root `s` of `sum rho_i^s = 1`.
pub fn similarity_dimension(ratios: &[f64]) -> Result<SimilarityDimension> {
    if ratios.is_empty() {
        return Err(invalid("need at least one contraction ratio"));
    }
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(invalid(format!("contraction ratio {r} outside (0, 1)")));
    }
    if ratios.len() == 1 {
        return Ok(SimilarityDimension {
            value: 0.0,
            degenerate: true,
        });
    }
    let f = |s: f64| ratios.iter().map(|r| r.powf(s)).sum::<f64>() - 1.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    while f(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi.max(1.0) {
            break;
        }
    }
    // Newton polish; f is convex and decreasing
    let mut s = 0.5 * (lo + hi);
    for _ in 0..3 {
        let df: f64 = ratios.iter().map(|r| r.powf(s) * r.ln()).sum();
        if df != 0.0 {
            s -= f(s) / df;
        }
    }
    Ok(SimilarityDimension {
        value: s,
        degenerate: false,
    })
}

/// `x -> ratio * R(angle) x + translate`, in `R^1` (angle 0 or 180) or `R^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Similarity {
    pub ratio: f64,
    #[serde(default)]
    pub angle_degrees: f64,
    pub translate: Vec<f64>,
}

impl Similarity {
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match x.len() {
            1 => {
                let flip = if (self.angle_degrees.rem_euclid(360.0) - 180.0).abs() < 1e-9 { -1.0 } else { 1.0 };
                out[0] = flip * self.ratio * x[0] + self.translate[0];
            }
            _ => {
                let (s, c) = self.angle_degrees.to_radians().sin_cos();
                let (a, b) = (x[0], x[1]);
                out[0] = self.ratio * (c * a - s * b) + self.translate[0];
                out[1] = self.ratio * (s * a + c * b) + self.translate[1];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProbSpec {
    Explicit(Vec<f64>),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IfsDoc {
    maps: Vec<Similarity>,
    probs: ProbSpec,
}

/// Self-similar measure of an IFS with a probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IfsDoc", into = "IfsDoc")]
pub struct IfsParam {
    maps: Vec<Similarity>,
    probs: Vec<f64>,
    natural: bool,
    sim_dim: f64,
}

impl TryFrom<IfsDoc> for IfsParam {
    type Error = Error;
    fn try_from(doc: IfsDoc) -> Result<Self> {
        match doc.probs {
            ProbSpec::Keyword(k) if k == "natural" => IfsParam::natural(doc.maps),
            ProbSpec::Keyword(k) => Err(invalid(format!("unknown probability keyword {k:?}"))),
            ProbSpec::Explicit(p) => IfsParam::new(doc.maps, p),
        }
    }
}

impl From<IfsParam> for IfsDoc {
    fn from(p: IfsParam) -> Self {
        IfsDoc {
            probs: if p.natural {
                ProbSpec::Keyword("natural".into())
            } else {
                ProbSpec::Explicit(p.probs)
            },
            maps: p.maps,
        }
    }
}

impl IfsParam {
    pub fn new(maps: Vec<Similarity>, probs: Vec<f64>) -> Result<Self> {
        Self::validate_maps(&maps)?;
        if probs.len() != maps.len() {
            return Err(invalid("need one probability per map"));
        }
        if probs.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::Validation("probabilities must be positive".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("probabilities sum to {total}")));
        }
        let sim_dim = similarity_dimension(&maps.iter().map(|m| m.ratio).collect::<Vec<_>>())?.value;
        Ok(Self {
            maps,
            probs,
            natural: false,
            sim_dim,
        })
    }

    /// Natural weights `p_i = rho_i^s` with `s` the similarity dimension.
    pub fn natural(maps: Vec<Similarity>) -> Result<Self> {
        Self::validate_maps(&maps)?;
        let ratios: Vec<f64> = maps.iter().map(|m| m.ratio).collect();
        let s = similarity_dimension(&ratios)?.value;
        let mut probs: Vec<f64> = ratios.iter().map(|r| r.powf(s)).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(Self {
            maps,
            probs,
            natural: true,
            sim_dim: s,
        })
    }

    /// Middle-thirds Cantor measure on `[0, 1]`.
    pub fn cantor() -> Self {
        Self::natural(vec![
            Similarity {
                ratio: 1.0 / 3.0,
                angle_degrees: 0.0,
                translate: vec![0.0],
            },
            Similarity {
                ratio: 1.0 / 3.0,
                angle_degrees: 0.0,
                translate: vec![2.0 / 3.0],
            },
        ])
        .expect("valid Cantor system")
    }

    fn validate_maps(maps: &[Similarity]) -> Result<()> {
        let d = maps.first().map(|m| m.translate.len()).ok_or_else(|| invalid("IFS needs at least one map"))?;
        if !(1..=2).contains(&d) {
            return Err(invalid("IFS maps act on R or R^2"));
        }
        for m in maps {
            if m.translate.len() != d {
                return Err(invalid("all maps must act on the same space"));
            }
            if !(m.ratio > 0.0 && m.ratio < 1.0) {
                return Err(invalid(format!("ratio {} outside (0, 1)", m.ratio)));
            }
            if d == 1 {
                let a = m.angle_degrees.rem_euclid(360.0);
                if a.abs() > 1e-9 && (a - 180.0).abs() > 1e-9 {
                    return Err(invalid("maps on R accept angle 0 or 180 only"));
                }
            }
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.maps[0].translate.len()
    }

    pub fn maps(&self) -> &[Similarity] {
        &self.maps
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn is_natural(&self) -> bool {
        self.natural
    }

    pub fn similarity_dimension(&self) -> f64 {
        self.sim_dim
    }

    pub fn max_ratio(&self) -> f64 {
        self.maps.iter().map(|m| m.ratio).fold(0.0, f64::max)
    }

    /// Local dimension bound `min log p_i / log rho_i`, which equals the
    /// similarity dimension for natural weights.
    pub fn frostman_exponent(&self) -> f64 {
        self.maps
            .iter()
            .zip(&self.probs)
            .map(|(m, p)| p.ln() / m.ratio.ln())
            .fold(f64::INFINITY, f64::min)
    }

    /// `nu[w] = prod p_{w_k}`.
    pub fn cylinder_mass(&self, word: &[usize]) -> f64 {
        word.iter().map(|&i| self.probs[i]).product()
    }

    /// Ball `B(c, r)` mapped into itself by every map, hence containing the
    /// attractor.
    pub fn invariant_ball(&self) -> (Vec<f64>, f64) {
        let d = self.d();
        // centroid of the fixed points
        let mut c = vec![0.0; d];
        for m in &self.maps {
            let fixed = self.fixed_point(m);
            for (ci, fi) in c.iter_mut().zip(&fixed) {
                *ci += fi / self.maps.len() as f64;
            }
        }
        let mut out = vec![0.0; d];
        let mut r: f64 = 0.0;
        for m in &self.maps {
            m.apply(&c, &mut out);
            let shift = out.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            r = r.max(shift / (1.0 - m.ratio));
        }
        (c, r)
    }

    fn fixed_point(&self, m: &Similarity) -> Vec<f64> {
        let mut x = vec![0.0; self.d()];
        let mut y = x.clone();
        for _ in 0..200 {
            m.apply(&x, &mut y);
            std::mem::swap(&mut x, &mut y);
        }
        x
    }

    /// Second-level cylinder balls with different first symbols are pairwise
    /// disjoint.
    pub fn is_strongly_separated(&self) -> bool {
        let (c, r) = self.invariant_ball();
        let d = self.d();
        let mut balls: Vec<(usize, Vec<f64>, f64)> = Vec::new();
        let (mut inner, mut outer) = (vec![0.0; d], vec![0.0; d]);
        for (i, mi) in self.maps.iter().enumerate() {
            for mj in &self.maps {
                mj.apply(&c, &mut inner);
                mi.apply(&inner, &mut outer);
                balls.push((i, outer.clone(), r * mi.ratio * mj.ratio));
            }
        }
        for (a, ba) in balls.iter().enumerate() {
            for bb in &balls[a + 1..] {
                if ba.0 == bb.0 {
                    continue;
                }
                let dist = ba.1.iter().zip(&bb.1).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                if dist <= ba.2 + bb.2 {
                    return false;
                }
            }
        }
        true
    }
}

/// Any of the supported families, as parsed from an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyParam {
    Plane(PlaneParam),
    Curve(CurveParam),
    Ifs(IfsParam),
}

impl FamilyParam {
    pub fn dim(&self) -> usize {
        match self {
            FamilyParam::Plane(p) => p.d(),
            FamilyParam::Curve(_) => 2,
            FamilyParam::Ifs(f) => f.d(),
        }
    }

    /// Declared Frostman exponent `s`.
    pub fn frostman_exponent(&self) -> f64 {
        match self {
            FamilyParam::Plane(p) => p.k() as f64,
            FamilyParam::Curve(_) => 1.0,
            FamilyParam::Ifs(f) => f.frostman_exponent(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn similarity_dimension_examples() {
        assert_relative_eq!(similarity_dimension(&[0.5, 0.5]).unwrap().value, 1.0, epsilon = 1e-14);
        assert_relative_eq!(
            similarity_dimension(&[1.0 / 3.0, 1.0 / 3.0]).unwrap().value,
            2f64.ln() / 3f64.ln(),
            epsilon = 1e-14
        );
        // 2^-s + 4^-s = 1 is quadratic in 2^-s with golden-ratio root
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        let s = similarity_dimension(&[0.5, 0.25]).unwrap().value;
        assert_relative_eq!(s, golden.log2(), epsilon = 1e-14);
        assert!((0.5f64.powf(s) + 0.25f64.powf(s) - 1.0).abs() <= 1e-12);
        let single = similarity_dimension(&[0.3]).unwrap();
        assert!(single.degenerate);
        assert_eq!(single.value, 0.0);
        assert!(similarity_dimension(&[1.0, 0.5]).is_err());
    }

    #[test]
    fn plane_metric_examples() {
        let v = PlaneParam::line_at_angle([0.0, 0.0], 0.0);
        assert_eq!(plane_metric(&v, &v).unwrap(), 0.0);
        let w = PlaneParam::line_at_angle([0.0, 0.0], std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(plane_metric(&v, &w).unwrap(), 1.0, epsilon = 1e-12);
        let theta = 0.3;
        let u = PlaneParam::line_at_angle([0.0, 0.0], theta);
        assert_relative_eq!(plane_metric(&v, &u).unwrap(), theta.sin(), epsilon = 1e-12);
        let shifted = PlaneParam::line_at_angle([5.0, 0.25], 0.0);
        assert_relative_eq!(plane_metric(&v, &shifted).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn plane_validation() {
        assert!(PlaneParam::new(vec![0.0, 0.0], vec![vec![1.0, 0.1]]).is_err());
        assert!(PlaneParam::new(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).is_err());
        assert!(PlaneParam::new(vec![0.0; 3], vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).is_ok());
        assert!(serde_json::from_str::<PlaneParam>(r#"{"point":[0,0],"basis":[[0.6,0.8]]}"#).is_ok());
        assert!(serde_json::from_str::<PlaneParam>(r#"{"point":[0,0],"basis":[[1,1]]}"#).is_err());
    }

    #[test]
    fn complement_basis_is_orthonormal() {
        let p = PlaneParam::new(vec![0.0; 3], vec![vec![0.6, 0.8, 0.0]]).unwrap();
        let c = p.complement_basis();
        assert_eq!(c.len(), 2);
        for u in &c {
            assert_relative_eq!(dot(u, &p.basis()[0]), 0.0, epsilon = 1e-14);
            assert_relative_eq!(norm(u), 1.0, epsilon = 1e-14);
        }
        assert_relative_eq!(dot(&c[0], &c[1]), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn frostman_audit_for_planes() {
        let mut rng = crate::rng::SeedPath::new(1).stream();
        use crate::rng::uniform;
        for k in 1..=2 {
            let basis: Vec<Vec<f64>> = [vec![1.0, 0.0, 0.0], vec![0.0, 0.6, 0.8]][..k].to_vec();
            let p = PlaneParam::new(vec![0.1, 0.2, 0.3], basis).unwrap();
            let (c, s) = p.frostman();
            for _ in 0..1000 {
                let x: Vec<f64> = (0..3).map(|_| uniform(&mut rng) * 2.0 - 1.0).collect();
                let r = uniform(&mut rng) * 0.5 + 1e-3;
                assert!(p.ball_mass(&x, r) <= c * r.powf(s) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn natural_weights_and_cylinders() {
        let f = IfsParam::cantor();
        assert!(f.is_natural());
        assert_relative_eq!(f.similarity_dimension(), 2f64.ln() / 3f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(f.probs()[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(f.frostman_exponent(), f.similarity_dimension(), epsilon = 1e-12);
        assert!(f.is_strongly_separated());
        assert_eq!(f.cylinder_mass(&[0, 1, 1]), 0.125);
        let (c, r) = f.invariant_ball();
        assert!(c[0] - r <= 1e-12 && c[0] + r >= 1.0 - 1e-12);

        let parsed: IfsParam = serde_json::from_str(
            r#"{"maps":[{"ratio":0.5,"translate":[0]},{"ratio":0.25,"angle_degrees":180,"translate":[1]}],"probs":"natural"}"#,
        )
        .unwrap();
        let s = parsed.similarity_dimension();
        assert_relative_eq!(parsed.probs()[0], 0.5f64.powf(s), epsilon = 1e-12);
        assert!(serde_json::from_str::<IfsParam>(
            r#"{"maps":[{"ratio":0.5,"translate":[0]}],"probs":"uniform"}"#
        )
        .is_err());
        assert!(IfsParam::new(f.maps().to_vec(), vec![0.4, 0.5]).is_err());
    }

    #[test]
    fn overlapping_ifs_is_not_separated() {
        let maps = vec![
            Similarity { ratio: 0.6, angle_degrees: 0.0, translate: vec![0.0] },
            Similarity { ratio: 0.6, angle_degrees: 0.0, translate: vec![0.4] },
        ];
        assert!(!IfsParam::natural(maps).unwrap().is_strongly_separated());
    }

    fn planar_line() -> impl Strategy<Value = PlaneParam> {
        (-2.0..2.0f64, -2.0..2.0f64, 0.0..std::f64::consts::PI)
            .prop_map(|(x, y, t)| PlaneParam::line_at_angle([x, y], t))
    }

    proptest! {
        #[test]
        fn plane_metric_is_a_metric(a in planar_line(), b in planar_line(), c in planar_line()) {
            let ab = plane_metric(&a, &b).unwrap();
            let ba = plane_metric(&b, &a).unwrap();
            let bc = plane_metric(&b, &c).unwrap();
            let ac = plane_metric(&a, &c).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-9);
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert!(ab >= 0.0);
        }
    }
}
