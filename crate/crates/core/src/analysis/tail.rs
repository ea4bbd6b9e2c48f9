use serde::{Deserialize, Serialize};

use super::{linear_fit, AnalysisReport};
use crate::error::{invalid, Error, Result};
use crate::families::FamilyParam;
use crate::intersect::{family_mass, EngineOptions};
use crate::model::ModelSpec;
use crate::rng::SeedPath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailAuditOptions {
    pub engine: EngineOptions,
}

impl Default for TailAuditOptions {
    fn default() -> Self {
        Self {
            engine: EngineOptions::default(),
        }
    }
}

/// Frequency of `|Y_{n+1} - Y_n| > kappa sqrt(Y_n)` over independent
/// replicates `seed.child(r)`, with a fit of `ln(frequency)` against
/// `kappa^2 2^{(s - alpha) n}`.
pub fn increment_tail_audit(
    model: &ModelSpec,
    family: &FamilyParam,
    n: usize,
    kappas: &[f64],
    replicates: usize,
    seed: &SeedPath,
    opts: &TailAuditOptions,
) -> Result<AnalysisReport> {
    let s = family.frostman_exponent();
    let alpha = model.alpha()?;
    if !(s > alpha) {
        return Err(Error::Validation(format!(
            "increment tail audit requires s > alpha (s = {s}, alpha = {alpha})"
        )));
    }
    if kappas.is_empty() || kappas.iter().any(|k| !(*k > 0.0)) || replicates == 0 {
        return Err(invalid("need positive kappas and at least one replicate"));
    }
    let mut exceed = vec![0usize; kappas.len()];
    for r in 0..replicates {
        let real = model.realize(n + 1, &seed.child(r as u64))?;
        let (y0, _) = family_mass(&real, family, n, &opts.engine)?;
        let (y1, _) = family_mass(&real, family, n + 1, &opts.engine)?;
        let inc = (y1 - y0).abs();
        for (e, k) in exceed.iter_mut().zip(kappas) {
            if inc > k * y0.max(0.0).sqrt() {
                *e += 1;
            }
        }
    }
    let scale = ((s - alpha) * n as f64).exp2();
    let rows: Vec<Vec<f64>> = kappas
        .iter()
        .zip(&exceed)
        .map(|(k, &e)| vec![*k, k * k * scale, e as f64, e as f64 / replicates as f64])
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r[2] > 0.0).map(|r| (r[1], r[3].ln())).unzip();
    let fit = linear_fit(&xs, &ys);
    let mut flags = Vec::new();
    if rows.windows(2).any(|w| w[0][0] < w[1][0] && w[1][3] > w[0][3]) {
        flags.push("not_monotone".into());
    }
    match fit {
        Some(f) if f.slope >= 0.0 => flags.push("nonnegative_slope".into()),
        None => flags.push("too_few_nonzero_frequencies".into()),
        _ => {}
    }
    let window = (!xs.is_empty()).then(|| (xs[0], *xs.last().unwrap()));
    Ok(AnalysisReport {
        kind: "increment_tail".into(),
        estimate: fit.map_or(f64::NAN, |f| f.slope),
        constant: fit.map(|f| f.intercept.exp()),
        fit,
        window,
        flags,
        columns: vec!["kappa".into(), "scaled_kappa2".into(), "exceedances".into(), "frequency".into()],
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::PlaneParam;

    #[test]
    fn full_square_has_no_tail() {
        let model = ModelSpec::Percolation { d: 2, p: 1.0 };
        let fam = FamilyParam::Plane(PlaneParam::line_at_angle([0.5, 0.5], 0.3));
        let rep = increment_tail_audit(&model, &fam, 3, &[0.1, 0.5, 1.0], 5, &SeedPath::new(0), &Default::default())
            .unwrap();
        assert!(rep.rows.iter().all(|r| r[3] == 0.0));
    }

    #[test]
    fn frequencies_do_not_increase() {
        let model = ModelSpec::Percolation { d: 2, p: 0.8 };
        let fam = FamilyParam::Plane(PlaneParam::line_at_angle([0.5, 0.5], 0.3));
        let rep = increment_tail_audit(&model, &fam, 3, &[0.05, 0.1, 0.2, 0.4], 200, &SeedPath::new(1), &Default::default())
            .unwrap();
        for w in rep.rows.windows(2) {
            assert!(w[1][3] <= w[0][3]);
        }
        assert!(!rep.has_flag("not_monotone"));
    }

    #[test]
    fn refuses_when_s_at_most_alpha() {
        let model = ModelSpec::Percolation { d: 2, p: 0.25 };
        let fam = FamilyParam::Plane(PlaneParam::line_at_angle([0.5, 0.5], 0.3));
        assert!(matches!(
            increment_tail_audit(&model, &fam, 3, &[1.0], 2, &SeedPath::new(0), &Default::default()),
            Err(Error::Validation(_))
        ));
    }
}
