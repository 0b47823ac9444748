//! PCA scenario generation and scenario-set management.
//!
//! The generated sets combine the first three principal components of
//! each curve's returns, rescaled by `scale` times the explained
//! standard deviation. The base set pairs components of the same order
//! with a common sign; the enriched set adds the opposite-sign
//! combinations for orders 2 and 3.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factor::FactorId;
use crate::marketdata::ReturnMatrix;

/// Principal components of one curve's pillar returns.
#[derive(Debug, Clone)]
pub struct PcaBasis {
    pub curve_id: String,
    pub pillars: Vec<String>,
    /// Unit eigenvectors, descending explained variance.
    pub components: Vec<DVector<f64>>,
    /// Explained standard deviations, non-increasing.
    pub sigmas: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PcaBasis {
    pub fn factor_ids(&self) -> Vec<FactorId> {
        self.pillars
            .iter()
            .map(|p| FactorId::new(self.curve_id.clone(), p.clone()))
            .collect()
    }
}

/// PCA on the return covariance of one curve's pillars.
///
/// Component signs are fixed: the entry sum of component 1 is positive,
/// the first (non-negligible) entry of later components is positive.
pub fn pca_per_curve(returns: &ReturnMatrix, curve_id: &str, n_components: usize) -> Result<PcaBasis> {
    let cols: Vec<(usize, String)> = returns
        .factors()
        .iter()
        .enumerate()
        .filter(|(_, f)| f.curve == curve_id)
        .map(|(i, f)| (i, f.pillar.clone()))
        .collect();
    if cols.is_empty() {
        return Err(Error::validation(format!("no factors for curve {curve_id}")));
    }
    let d = cols.len();
    let n = returns.n_obs();
    if n < d {
        return Err(Error::data(format!(
            "curve {curve_id}: {n} observations for {d} pillars; need at least {d}"
        )));
    }
    if n_components == 0 || n_components > d {
        return Err(Error::validation(format!(
            "n_components must be in 1..={d}, got {n_components}"
        )));
    }

    // Sample covariance of the curve's return columns.
    let data = returns.data();
    let means: Vec<f64> = cols.iter().map(|&(j, _)| data.column(j).sum() / n as f64).collect();
    let mut cov = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in a..d {
            let (ja, jb) = (cols[a].0, cols[b].0);
            let mut acc = 0.0;
            for i in 0..n {
                acc += (data[(i, ja)] - means[a]) * (data[(i, jb)] - means[b]);
            }
            let c = acc / (n as f64 - 1.0);
            cov[(a, b)] = c;
            cov[(b, a)] = c;
        }
    }

    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let max_eig = eig.eigenvalues[order[0]].max(0.0);
    let rank_tol = max_eig * 1e-12;
    let mut warnings = Vec::new();
    let available = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > rank_tol)
        .count();
    let take = if available < n_components {
        warnings.push(format!(
            "curve {curve_id}: covariance rank {available} < requested {n_components} components; continuing with {available}"
        ));
        available
    } else {
        n_components
    };
    if take == 0 {
        return Err(Error::data(format!("curve {curve_id}: zero covariance rank")));
    }

    let mut components = Vec::with_capacity(take);
    let mut sigmas = Vec::with_capacity(take);
    for (rank, &i) in order.iter().take(take).enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(i).into_owned();
        v /= v.norm();
        let orient = if rank == 0 {
            let sum: f64 = v.iter().sum();
            if sum.abs() > 1e-12 {
                sum
            } else {
                first_significant(&v)
            }
        } else {
            first_significant(&v)
        };
        if orient < 0.0 {
            v = -v;
        }
        components.push(v);
        sigmas.push(eig.eigenvalues[i].max(0.0).sqrt());
    }
    Ok(PcaBasis {
        curve_id: curve_id.to_string(),
        pillars: cols.into_iter().map(|(_, p)| p).collect(),
        components,
        sigmas,
        warnings,
    })
}

fn first_significant(v: &DVector<f64>) -> f64 {
    v.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0)
}

/// A named set of full-space stress scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub name: String,
    factor_labels: Vec<FactorId>,
    scenarios: Vec<(String, DVector<f64>)>,
}

impl ScenarioSet {
    pub fn new(
        name: impl Into<String>,
        factor_labels: Vec<FactorId>,
        scenarios: Vec<(String, DVector<f64>)>,
    ) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(Error::validation("scenario set must contain at least one scenario".to_string()));
        }
        let mut ids = BTreeSet::new();
        for (id, v) in &scenarios {
            if !ids.insert(id.clone()) {
                return Err(Error::validation(format!("duplicate scenario id `{id}`")));
            }
            if v.len() != factor_labels.len() {
                return Err(Error::validation(format!(
                    "scenario `{id}` has {} entries for {} factors",
                    v.len(),
                    factor_labels.len()
                )));
            }
        }
        {
            let mut sorted = factor_labels.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != factor_labels.len() {
                return Err(Error::validation("duplicate factor labels in scenario set".to_string()));
            }
        }
        Ok(ScenarioSet {
            name: name.into(),
            factor_labels,
            scenarios,
        })
    }

    pub fn factor_labels(&self) -> &[FactorId] {
        &self.factor_labels
    }

    pub fn scenarios(&self) -> &[(String, DVector<f64>)] {
        &self.scenarios
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DVector<f64>> {
        self.scenarios.iter().find(|(s, _)| s == id).map(|(_, v)| v)
    }

    /// Reorders scenario entries to a target factor order.
    pub fn align(&self, target: &[FactorId]) -> Result<ScenarioSet> {
        let perm: Vec<usize> = target
            .iter()
            .map(|f| {
                self.factor_labels
                    .iter()
                    .position(|g| g == f)
                    .ok_or_else(|| Error::validation(format!("scenario set `{}` is missing factor {f}", self.name)))
            })
            .collect::<Result<_>>()?;
        if target.len() != self.factor_labels.len() {
            return Err(Error::validation(format!(
                "scenario set `{}` has {} factors, target has {}",
                self.name,
                self.factor_labels.len(),
                target.len()
            )));
        }
        let scenarios = self
            .scenarios
            .iter()
            .map(|(id, v)| {
                (
                    id.clone(),
                    DVector::from_iterator(perm.len(), perm.iter().map(|&i| v[i])),
                )
            })
            .collect();
        ScenarioSet::new(self.name.clone(), target.to_vec(), scenarios)
    }

    /// CSV form: `scenario_id,<factor...>` header then one row per
    /// scenario. Comment lines start with `#`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario_id");
        for f in &self.factor_labels {
            out.push(',');
            out.push_str(&f.to_string());
        }
        out.push('\n');
        for (id, v) in &self.scenarios {
            out.push_str(&format!("\"{id}\""));
            for x in v.iter() {
                out.push(',');
                out.push_str(&format!("{x:e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_reader(name: &str, input: impl Read) -> Result<ScenarioSet> {
        let mut raw = Vec::new();
        let mut input = input;
        input
            .read_to_end(&mut raw)
            .map_err(|e| Error::io("<reader>".to_string(), e))?;
        let text = String::from_utf8_lossy(&raw);
        let body: String = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
            .collect::<Vec<_>>()
            .join("\n");
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::data(format!("scenario csv header: {e}")))?
            .clone();
        if headers.len() < 2 || headers.get(0) != Some("scenario_id") {
            return Err(Error::data(
                "scenario csv must start with a `scenario_id` column".to_string(),
            ));
        }
        let factor_labels: Vec<FactorId> = headers
            .iter()
            .skip(1)
            .map(|h| h.parse())
            .collect::<Result<_>>()?;
        let mut scenarios = Vec::new();
        for (row_no, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::data(format!("scenario csv row {}: {e}", row_no + 2)))?;
            if rec.len() != headers.len() {
                return Err(Error::data(format!(
                    "scenario csv row {}: {} cells for {} columns",
                    row_no + 2,
                    rec.len(),
                    headers.len()
                )));
            }
            let id = rec.get(0).unwrap_or("").to_string();
            let vals: Vec<f64> = rec
                .iter()
                .skip(1)
                .enumerate()
                .map(|(k, cell)| {
                    cell.parse::<f64>().map_err(|_| {
                        Error::data(format!(
                            "scenario csv row {}, column `{}`: bad value `{cell}`",
                            row_no + 2,
                            factor_labels[k]
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            scenarios.push((id, DVector::from_vec(vals)));
        }
        ScenarioSet::new(name, factor_labels, scenarios)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScenarioSet> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "scenarios".to_string());
        ScenarioSet::from_reader(&name, file).map_err(|e| match e {
            Error::Data(msg) => Error::data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Loads a scenario CSV from disk.
pub fn load_scenario_set(path: impl AsRef<Path>) -> Result<ScenarioSet> {
    ScenarioSet::load(path)
}

fn scenario_id(n: usize, sign_a: i8, sign_b: i8) -> String {
    let s = |x: i8| if x > 0 { '+' } else { '-' };
    format!("({}{n}, {}{n})", s(sign_a), s(sign_b))
}

fn combined_scenario(
    aaa: &PcaBasis,
    all_: &PcaBasis,
    n: usize,
    sign_a: f64,
    sign_b: f64,
    scale: f64,
) -> DVector<f64> {
    let da = aaa.pillars.len();
    let db = all_.pillars.len();
    let mut v = DVector::zeros(da + db);
    let ca = &aaa.components[n - 1];
    let cb = &all_.components[n - 1];
    for i in 0..da {
        v[i] = sign_a * scale * aaa.sigmas[n - 1] * ca[i];
    }
    for i in 0..db {
        v[da + i] = sign_b * scale * all_.sigmas[n - 1] * cb[i];
    }
    v
}

fn check_components(aaa: &PcaBasis, all_: &PcaBasis) -> Result<()> {
    if aaa.components.len() < 3 || all_.components.len() < 3 {
        return Err(Error::validation(format!(
            "scenario generation needs 3 components per curve; have {} ({}) and {} ({})",
            aaa.components.len(),
            aaa.curve_id,
            all_.components.len(),
            all_.curve_id
        )));
    }
    Ok(())
}

/// The 6 same-sign combinations (±n, ±n), n = 1, 2, 3.
pub fn build_base_set(aaa: &PcaBasis, all_: &PcaBasis, scale: f64) -> Result<ScenarioSet> {
    check_components(aaa, all_)?;
    let mut labels = aaa.factor_ids();
    labels.extend(all_.factor_ids());
    let mut scenarios = Vec::with_capacity(6);
    for n in 1..=3 {
        for sign in [1i8, -1] {
            scenarios.push((
                scenario_id(n, sign, sign),
                combined_scenario(aaa, all_, n, sign as f64, sign as f64, scale),
            ));
        }
    }
    ScenarioSet::new("base", labels, scenarios)
}

/// The base set plus the 4 opposite-sign combinations (±n, ∓n), n = 2, 3.
pub fn build_enriched_set(aaa: &PcaBasis, all_: &PcaBasis, scale: f64) -> Result<ScenarioSet> {
    let base = build_base_set(aaa, all_, scale)?;
    let labels = base.factor_labels().to_vec();
    let mut scenarios = base.scenarios().to_vec();
    for n in [2usize, 3] {
        for sign in [1i8, -1] {
            scenarios.push((
                scenario_id(n, sign, -sign),
                combined_scenario(aaa, all_, n, sign as f64, -sign as f64, scale),
            ));
        }
    }
    ScenarioSet::new("enriched", labels, scenarios)
}
