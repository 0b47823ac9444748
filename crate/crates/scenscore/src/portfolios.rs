//! Spread-portfolio universe over bond instruments.
//!
//! Instruments are semi-annual coupon bonds with maturity on one of the
//! pillars; the P&L of a bond for a yield move ΔY is linear, (ΔY)·D with
//! D the Macaulay duration. A portfolio long bond i and short bond j
//! therefore maps a return vector s to ᵗP s through an exposure vector P
//! with two non-zero entries.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::FactorId;

/// Coupons per year; fixed for the whole universe.
pub const COUPONS_PER_YEAR: u32 = 2;

/// Tenor label to year fraction: `6M` → 0.5, `3Y` → 3.
pub fn tenor_years(label: &str) -> Result<f64> {
    let label = label.trim();
    let (num, unit) = label.split_at(label.len().saturating_sub(1));
    let value: f64 = num
        .parse()
        .map_err(|_| Error::validation(format!("tenor label `{label}` is not <number><M|Y>")))?;
    match unit {
        "M" => Ok(value / 12.0),
        "Y" => Ok(value),
        _ => Err(Error::validation(format!("tenor label `{label}` must end in M or Y"))),
    }
}

/// Macaulay duration of a semi-annual coupon bond with unit face.
///
/// `yield_level` and `coupon_rate` are annual decimal rates (0.04 = 4%).
/// A zero-coupon bond has duration equal to its maturity.
pub fn bond_duration(maturity_years: f64, yield_level: f64, coupon_rate: f64) -> Result<f64> {
    if !(maturity_years > 0.0) {
        return Err(Error::validation(format!(
            "maturity must be positive, got {maturity_years}"
        )));
    }
    if coupon_rate < 0.0 {
        return Err(Error::validation(format!(
            "coupon rate must be non-negative, got {coupon_rate}"
        )));
    }
    let period_rate = yield_level / COUPONS_PER_YEAR as f64;
    if period_rate <= -1.0 {
        return Err(Error::validation(format!(
            "yield level {yield_level} is below -200%, discounting undefined"
        )));
    }
    if coupon_rate == 0.0 {
        return Ok(maturity_years);
    }
    // Payment times counted back from maturity in half-year steps; a
    // short first stub still carries a full half-year coupon.
    let period = 1.0 / COUPONS_PER_YEAR as f64;
    let mut times = Vec::new();
    let mut t = maturity_years;
    while t > 1e-9 {
        times.push(t);
        t -= period;
    }
    times.reverse();
    let coupon = coupon_rate / COUPONS_PER_YEAR as f64;
    let base = 1.0 + period_rate;
    let mut price = 0.0;
    let mut weighted = 0.0;
    let last = times.len() - 1;
    for (k, &tk) in times.iter().enumerate() {
        let mut cf = coupon;
        if k == last {
            cf += 1.0;
        }
        let df = base.powf(-tk * COUPONS_PER_YEAR as f64);
        price += cf * df;
        weighted += tk * cf * df;
    }
    Ok(weighted / price)
}

/// A bond leg: curve, pillar maturity, and precomputed duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BondSpec {
    pub curve_id: String,
    pub maturity: String,
    pub duration: f64,
}

impl BondSpec {
    pub fn factor(&self) -> FactorId {
        FactorId::new(self.curve_id.clone(), self.maturity.clone())
    }
}

/// Spread weighting convention for the short leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaKind {
    /// Weights (+1, −1).
    Unit,
    /// Weights (+1, −Dᵢ/Dⱼ): parallel moves of both legs net to zero.
    DurationNeutral,
}

impl fmt::Display for BetaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaKind::Unit => write!(f, "unit"),
            BetaKind::DurationNeutral => write!(f, "dneu"),
        }
    }
}

/// Sign convention for bond P&L per yield move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PnlSign {
    /// P&L = (ΔY)·D, taken literally.
    #[default]
    Paper,
    /// Conventional P&L = −D·(ΔY).
    Standard,
}

/// One long/short spread portfolio with its dense exposure vector over
/// the universe factor list.
#[derive(Debug, Clone)]
pub struct PortfolioExposure {
    pub name: String,
    pub legs: Vec<(BondSpec, f64)>,
    pub beta_kind: BetaKind,
    factors: Arc<Vec<FactorId>>,
    exposure: DVector<f64>,
}

impl PortfolioExposure {
    pub fn new(
        name: impl Into<String>,
        legs: Vec<(BondSpec, f64)>,
        beta_kind: BetaKind,
        factors: Arc<Vec<FactorId>>,
        pnl_sign: PnlSign,
    ) -> Result<Self> {
        let mut exposure = DVector::zeros(factors.len());
        let sign = match pnl_sign {
            PnlSign::Paper => 1.0,
            PnlSign::Standard => -1.0,
        };
        for (bond, weight) in &legs {
            let f = bond.factor();
            let idx = factors
                .iter()
                .position(|g| g == &f)
                .ok_or_else(|| Error::validation(format!("leg factor {f} not in universe factor list")))?;
            exposure[idx] += sign * weight * bond.duration;
        }
        if exposure.iter().all(|v| *v == 0.0) {
            return Err(Error::validation("portfolio exposure is identically zero".to_string()));
        }
        Ok(PortfolioExposure {
            name: name.into(),
            legs,
            beta_kind,
            factors,
            exposure,
        })
    }

    pub fn factors(&self) -> &[FactorId] {
        &self.factors
    }

    pub fn exposure(&self) -> &DVector<f64> {
        &self.exposure
    }

    /// Labels of the non-zero exposure entries (zero-weight legs drop out).
    pub fn involved_factors(&self) -> Vec<FactorId> {
        self.factors
            .iter()
            .zip(self.exposure.iter())
            .filter(|(_, &v)| v != 0.0)
            .map(|(f, _)| f.clone())
            .collect()
    }

    /// Exposure restricted to a factor subset, in subset order.
    pub fn exposure_on(&self, subset: &[FactorId]) -> Result<DVector<f64>> {
        let vals: Vec<f64> = subset
            .iter()
            .map(|f| {
                self.factors
                    .iter()
                    .position(|g| g == f)
                    .map(|i| self.exposure[i])
                    .ok_or_else(|| Error::validation(format!("factor {f} not in universe factor list")))
            })
            .collect::<Result<_>>()?;
        Ok(DVector::from_vec(vals))
    }

    /// P&L ᵗP s for a full-space return vector.
    pub fn pnl(&self, scenario: &DVector<f64>) -> f64 {
        self.exposure.dot(scenario)
    }
}

/// Universe construction settings.
#[derive(Debug, Clone)]
pub struct UniverseOptions {
    pub beta_kinds: Vec<BetaKind>,
    pub pnl_sign: PnlSign,
}

impl Default for UniverseOptions {
    fn default() -> Self {
        UniverseOptions {
            beta_kinds: vec![BetaKind::Unit, BetaKind::DurationNeutral],
            pnl_sign: PnlSign::Paper,
        }
    }
}

/// The reference universe: shared factor list plus portfolios.
#[derive(Debug, Clone)]
pub struct PortfolioUniverse {
    pub factors: Arc<Vec<FactorId>>,
    pub portfolios: Vec<PortfolioExposure>,
}

/// Builds every spread portfolio over distinct instrument pairs: both
/// orientations and every requested β convention per unordered pair.
/// With 12 instruments and both conventions this yields 4·C(12,2) = 264.
pub fn build_universe(
    curves: &[String],
    pillars: &[String],
    durations: &BTreeMap<(String, String), f64>,
    options: &UniverseOptions,
) -> Result<PortfolioUniverse> {
    if curves.is_empty() || pillars.is_empty() {
        return Err(Error::validation("universe needs at least one curve and one pillar".to_string()));
    }
    if options.beta_kinds.is_empty() {
        return Err(Error::validation("universe needs at least one beta kind".to_string()));
    }
    let factors: Arc<Vec<FactorId>> = Arc::new(
        curves
            .iter()
            .flat_map(|c| pillars.iter().map(move |p| FactorId::new(c.clone(), p.clone())))
            .collect(),
    );
    let instruments: Vec<BondSpec> = factors
        .iter()
        .map(|f| {
            let key = (f.curve.clone(), f.pillar.clone());
            let duration = *durations.get(&key).ok_or_else(|| {
                Error::validation(format!("missing duration for instrument {f}"))
            })?;
            if !(duration > 0.0) {
                return Err(Error::validation(format!("non-positive duration for instrument {f}")));
            }
            Ok(BondSpec {
                curve_id: f.curve.clone(),
                maturity: f.pillar.clone(),
                duration,
            })
        })
        .collect::<Result<_>>()?;

    let mut portfolios = Vec::new();
    for i in 0..instruments.len() {
        for j in (i + 1)..instruments.len() {
            for &(long, short) in &[(i, j), (j, i)] {
                for &kind in &options.beta_kinds {
                    let bl = instruments[long].clone();
                    let bs = instruments[short].clone();
                    let short_weight = match kind {
                        BetaKind::Unit => -1.0,
                        BetaKind::DurationNeutral => -bl.duration / bs.duration,
                    };
                    let name = format!("{}>{}#{}", bl.factor(), bs.factor(), kind);
                    portfolios.push(PortfolioExposure::new(
                        name,
                        vec![(bl, 1.0), (bs, short_weight)],
                        kind,
                        factors.clone(),
                        options.pnl_sign,
                    )?);
                }
            }
        }
    }
    Ok(PortfolioUniverse { factors, portfolios })
}

/// Universe export: one row per portfolio with leg and duration detail.
pub fn universe_to_csv(universe: &PortfolioUniverse) -> String {
    let mut out = String::from(
        "name,curve_i,pillar_i,curve_j,pillar_j,beta_kind,weight_i,weight_j,duration_i,duration_j\n",
    );
    for p in &universe.portfolios {
        let (bi, wi) = &p.legs[0];
        let (bj, wj) = &p.legs[1];
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            p.name,
            bi.curve_id,
            bi.maturity,
            bj.curve_id,
            bj.maturity,
            p.beta_kind,
            wi,
            wj,
            bi.duration,
            bj.duration
        ));
    }
    out
}
