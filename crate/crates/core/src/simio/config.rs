//! Run configuration: one TOML file with a section per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adp::{FleetInit, PolicyConfig, PricingMode, TrainConfig};
use crate::economics::EconomicsConfig;
use crate::error::{Error, Result};
use crate::fleet::ModelConfig;
use crate::pricing::{PriceSimConfig, PricingConfig};
use crate::spatial::{SyntheticMask, ZoneGrid};
use crate::vfa::VfaConfig;

use super::data::SynthProfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub width: usize,
    pub height: usize,
    pub zone_width_miles: f64,
    /// Mask file of `#` (valid) and `.` cells; overrides `width`/`height`.
    pub mask: Option<PathBuf>,
    /// Generated mask over `width x height`.
    pub synthetic: Option<SyntheticMask>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { width: 20, height: 20, zone_width_miles: 1.0, mask: None, synthetic: None }
    }
}

impl GridSection {
    pub fn build(&self, base: &Path) -> Result<ZoneGrid> {
        match (&self.mask, &self.synthetic) {
            (Some(_), Some(_)) => Err(Error::Config("grid.mask and grid.synthetic are exclusive".into())),
            (Some(path), None) => ZoneGrid::load_mask(base.join(path), self.zone_width_miles),
            (None, Some(m)) => ZoneGrid::new(self.width, self.height, self.zone_width_miles, m.generate(self.width, self.height)),
            (None, None) => ZoneGrid::full(self.width, self.height, self.zone_width_miles),
        }
        .map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(format!("grid: {m}")),
            e => e,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Per-epoch bootstrap of the dataset for every episode.
    Resample,
    /// Replay the dataset itself every episode.
    Repeat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandSection {
    /// Trip CSV; when absent the synthetic generator is used.
    pub trips: Option<PathBuf>,
    pub total: usize,
    pub seed: u64,
    pub profile: SynthProfile,
    pub sampling: Sampling,
}

impl Default for DemandSection {
    fn default() -> Self {
        Self { trips: None, total: 2000, seed: 7, profile: SynthProfile::default(), sampling: Sampling::Resample }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub check_every: usize,
    pub exploring_starts: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { iterations: t.iterations, check_every: t.check_every, exploring_starts: t.exploring_starts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub episodes: usize,
    /// Value table snapshot; defaults to `table.bin` in the output directory.
    pub table: Option<PathBuf>,
    /// Learned pricing state; defaults to `pricing.json` in the output directory.
    pub pricing_state: Option<PathBuf>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { episodes: 20, table: None, pricing_state: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PricingModeName {
    Off,
    Fixed,
    Learn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingSection {
    pub mode: PricingModeName,
    /// Price per mile in `fixed` mode.
    pub fixed_price: f64,
    pub engine: PricingConfig,
}

impl Default for PricingSection {
    fn default() -> Self {
        Self { mode: PricingModeName::Off, fixed_price: 1.0, engine: PricingConfig::default() }
    }
}

impl PricingSection {
    pub fn mode(&self) -> PricingMode {
        match self.mode {
            PricingModeName::Off => PricingMode::Off,
            PricingModeName::Fixed => PricingMode::Fixed { price: self.fixed_price },
            PricingModeName::Learn => PricingMode::Learn,
        }
    }
}

/// Single-car instance for the exact solver, on the run's grid and model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    /// `[epoch, origin zone, destination zone]` rows.
    pub trips: Vec<[u32; 3]>,
    pub start_zone: u32,
    /// Defaults to a full battery.
    pub start_battery: Option<u16>,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { trips: Vec::new(), start_zone: 0, start_battery: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridSection,
    pub model: ModelConfig,
    pub demand: DemandSection,
    pub fleet: FleetInit,
    pub policy: PolicyConfig,
    pub vfa: VfaConfig,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
    pub pricing: PricingSection,
    pub price_sim: PriceSimConfig,
    pub economics: EconomicsConfig,
    pub oracle: OracleSection,
    pub output: OutputSection,
    /// Directory relative paths resolve against; the config file's directory.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid: GridSection::default(),
            model: ModelConfig::default(),
            demand: DemandSection::default(),
            fleet: FleetInit::Random { cars: 40 },
            policy: PolicyConfig::default(),
            vfa: VfaConfig::default(),
            train: TrainSection::default(),
            evaluate: EvaluateSection::default(),
            pricing: PricingSection::default(),
            price_sim: PriceSimConfig::default(),
            economics: EconomicsConfig::default(),
            oracle: OracleSection::default(),
            output: OutputSection::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pricing.engine.validate()?;
        self.economics.validate()?;
        if self.demand.trips.is_none() {
            self.demand.profile.validate()?;
            if self.demand.total == 0 {
                return Err(Error::Config("demand.total must be positive".into()));
            }
        }
        if self.evaluate.episodes == 0 {
            return Err(Error::Config("evaluate.episodes must be positive".into()));
        }
        if self.pricing.mode == PricingModeName::Fixed && !(self.pricing.fixed_price > 0.0) {
            return Err(Error::Config("pricing.fixed_price must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.train.iterations,
            policy: self.policy.clone(),
            vfa: self.vfa.clone(),
            check_every: self.train.check_every,
            exploring_starts: self.train.exploring_starts,
        }
    }
}
