//! Run configuration: one TOML file drives the whole pipeline, with a
//! handful of CLI flags overriding individual fields. The SHA-256 of the
//! config file is embedded in every output for provenance.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use scenscore::distributions::fit::FitMode;
use scenscore::distributions::FitOptions;
use scenscore::error::{Error, Result};
use scenscore::optimizer::SolverSettings;
use scenscore::portfolios::{BetaKind, PnlSign};
use scenscore::scoring::TieBreak;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub scenarios: ScenarioConfig,
    #[serde(default)]
    pub portfolios: PortfolioConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Filled in at load time; not part of the file.
    #[serde(skip)]
    pub config_hash: String,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub curves: Vec<CurveInput>,
    pub pillars: Vec<String>,
    #[serde(default = "default_date_column")]
    pub date_column: String,
    /// Maps raw file headers to canonical names (date column included).
    #[serde(default)]
    pub column_map: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveInput {
    pub id: String,
    pub file: PathBuf,
}

fn default_date_column() -> String {
    "DATE".to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub mode: FitMode,
    pub min_observations: usize,
    pub nu_min: f64,
    pub nu_max: f64,
    pub nu_bar_min: f64,
    pub nu_bar_max: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        let d = FitOptions::default();
        FitConfig {
            mode: FitMode::PerGroup,
            min_observations: d.min_observations,
            nu_min: d.nu_min,
            nu_max: d.nu_max,
            nu_bar_min: d.nu_bar_min,
            nu_bar_max: d.nu_bar_max,
        }
    }
}

impl FitConfig {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            min_observations: self.min_observations,
            nu_min: self.nu_min,
            nu_max: self.nu_max,
            nu_bar_min: self.nu_bar_min,
            nu_bar_max: self.nu_bar_max,
            ..FitOptions::default()
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_components: usize,
    pub scale: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_components: 3,
            scale: 3.0,
        }
    }
}

/// Coupon convention: `"par"` (coupon equals the last observed yield,
/// floored at zero) or a fixed annual decimal rate.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CouponConfig {
    Rate(f64),
    Named(String),
}

impl Default for CouponConfig {
    fn default() -> Self {
        CouponConfig::Named("par".to_string())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PortfolioConfig {
    pub beta_kinds: Vec<BetaKind>,
    pub coupon: CouponConfig,
    pub pnl_sign: PnlSign,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        PortfolioConfig {
            beta_kinds: vec![BetaKind::Unit, BetaKind::DurationNeutral],
            coupon: CouponConfig::default(),
            pnl_sign: PnlSign::Paper,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol_grad: f64,
    pub tol_con: f64,
    pub max_iters: usize,
    pub tie_break: TieBreak,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolverSettings::default();
        SolverConfig {
            tol_grad: s.tol_grad,
            tol_con: s.tol_con,
            max_iters: s.max_iters,
            tie_break: TieBreak::Density,
        }
    }
}

impl SolverConfig {
    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            tol_grad: self.tol_grad,
            tol_con: self.tol_con,
            max_iters: self.max_iters,
            ..SolverSettings::default()
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub box_halfwidth_sigmas: f64,
    pub grid_points: usize,
    /// Portfolios cross-checked by `oracle` (evenly spaced over the
    /// universe).
    pub max_portfolios: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            box_halfwidth_sigmas: 7.0,
            grid_points: 151,
            max_portfolios: 24,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub seed: u64,
    /// Worker threads for portfolio scoring; 0 means all cores.
    pub jobs: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            seed: 42,
            jobs: 0,
        }
    }
}

impl RunConfig {
    /// Loads and validates a TOML run configuration. Relative paths are
    /// resolved against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|e| Error::validation(format!("{}: not UTF-8: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        config.config_hash = hex16(&hasher.finalize());
        config.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.curves.is_empty() {
            return Err(Error::validation("config: at least one curve is required".to_string()));
        }
        if self.data.pillars.is_empty() {
            return Err(Error::validation("config: at least one pillar is required".to_string()));
        }
        for c in &self.data.curves {
            let p = self.resolve(&c.file);
            if !p.exists() {
                return Err(Error::validation(format!(
                    "config: data file {} for curve {} does not exist",
                    p.display(),
                    c.id
                )));
            }
        }
        if let CouponConfig::Rate(r) = self.portfolios.coupon {
            if r < 0.0 {
                return Err(Error::validation("config: coupon rate must be non-negative".to_string()));
            }
        }
        if let CouponConfig::Named(ref n) = self.portfolios.coupon {
            if n != "par" {
                return Err(Error::validation(format!(
                    "config: coupon must be \"par\" or a decimal rate, got `{n}`"
                )));
            }
        }
        if self.scenarios.n_components == 0 {
            return Err(Error::validation("config: n_components must be positive".to_string()));
        }
        Ok(())
    }

    /// Resolves a possibly-relative path against the config location.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }
}

fn hex16(digest: &[u8]) -> String {
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
