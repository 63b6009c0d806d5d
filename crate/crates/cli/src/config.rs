//! Run configuration, read from TOML.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use geopriv_core::attack::{DbscanParams, InferOptions, Schedule, DEFAULT_CELL_M};
use geopriv_core::ingest::{MAX_SPEED_KMH, MIN_POINTS};
use geopriv_core::lppm::Mechanism;
use geopriv_core::synth::CohortTemplate;
use geopriv_core::utility::{RegionSpec, DEFAULT_RESOLUTION};

use crate::error::CliError;

pub const CACHE_DIR_ENV: &str = "GEOPRIV_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Safecast,
    Radiocells,
    Synth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// CSV input for the real-data kinds.
    pub path: Option<PathBuf>,
    /// One user id per line to leave out.
    pub exclude: Option<PathBuf>,
    #[serde(default)]
    pub tz_offset_hours: f64,
    #[serde(default = "default_min_points")]
    pub min_points: usize,
    #[serde(default = "default_max_speed")]
    pub max_speed_kmh: f64,
    /// Cohort size for `synth`.
    pub users: Option<usize>,
    /// Cohort template for `synth`; a small city with three places if absent.
    pub template: Option<CohortTemplate>,
}

fn default_min_points() -> usize {
    MIN_POINTS
}

fn default_max_speed() -> f64 {
    MAX_SPEED_KMH
}

/// One mechanism to evaluate: a named preset or an explicit mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LppmEntry {
    pub preset: Option<String>,
    pub mechanism: Option<Mechanism>,
    /// Overrides the stream derived from the run seed.
    pub seed: Option<u64>,
}

impl LppmEntry {
    pub fn resolve(&self) -> Result<Mechanism, CliError> {
        let m = match (&self.preset, &self.mechanism) {
            (Some(name), None) => Mechanism::preset(name).ok_or_else(|| {
                CliError::config(format!(
                    "unknown lppm preset {name:?}; known presets: {}",
                    Mechanism::preset_names().join(", ")
                ))
            })?,
            (None, Some(m)) => *m,
            _ => return Err(CliError::config("each [[lppm]] needs exactly one of `preset` or `mechanism`")),
        };
        m.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// `relaxed`, `safecast-tight` or `radiocells-tight`; ignored when
    /// `custom` is set.
    #[serde(default = "default_schedule")]
    pub schedule: String,
    pub custom: Option<Vec<DbscanParams>>,
    #[serde(default)]
    pub temporal_filter: bool,
    /// Attack only measurements taken during weekday office hours.
    #[serde(default)]
    pub work_hours: bool,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_cell")]
    pub cell_m: f64,
}

fn default_schedule() -> String {
    "relaxed".into()
}

fn default_top_k() -> usize {
    geopriv_core::attack::infer::DEFAULT_TOP_K
}

fn default_cell() -> f64 {
    DEFAULT_CELL_M
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            schedule: default_schedule(),
            custom: None,
            temporal_filter: false,
            work_hours: false,
            top_k: default_top_k(),
            cell_m: default_cell(),
        }
    }
}

impl AttackConfig {
    pub fn schedule(&self) -> Result<Schedule, CliError> {
        let s = match &self.custom {
            Some(steps) => Schedule(steps.clone()),
            None => Schedule::preset(&self.schedule)
                .ok_or_else(|| CliError::config(format!("unknown attack schedule {:?}", self.schedule)))?,
        };
        s.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(s)
    }

    pub fn options(&self) -> InferOptions {
        InferOptions {
            top_k: self.top_k,
            cell_m: self.cell_m,
            temporal_filter: self.temporal_filter,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoiProviderKind {
    #[default]
    None,
    Offline,
    Overpass,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoiConfig {
    #[serde(default)]
    pub provider: PoiProviderKind,
    /// Offline POI file, `.csv` or `.geojson`/`.json`.
    pub path: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub timeout_s: Option<u64>,
    /// Falls back to `$GEOPRIV_CACHE_DIR`, then `.geopriv-cache`.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "yes")]
    pub spatial: bool,
    #[serde(default = "yes")]
    pub distance: bool,
    /// Needs a region; compares radiation maps before and after.
    #[serde(default = "yes")]
    pub radiation: bool,
    #[serde(default = "yes")]
    pub hotspots: bool,
    #[serde(default)]
    pub antennas: bool,
    /// Also write the interpolated grids.
    #[serde(default)]
    pub write_grids: bool,
    #[serde(default = "default_resolution")]
    pub grid_resolution: usize,
    #[serde(default = "default_window")]
    pub window_days: i64,
}

fn yes() -> bool {
    true
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

fn default_window() -> i64 {
    geopriv_core::utility::WINDOW_DAYS
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            spatial: true,
            distance: true,
            radiation: true,
            hotspots: true,
            antennas: false,
            write_grids: false,
            grid_resolution: default_resolution(),
            window_days: default_window(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Share of users used only to build the remapping prior.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.5
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            train_fraction: default_train_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; all cores when absent.
    pub workers: Option<usize>,
    pub dataset: DatasetConfig,
    pub region: Option<RegionSpec>,
    #[serde(default)]
    pub lppm: Vec<LppmEntry>,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub poi: PoiConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub prior: PriorConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [&mut self.dataset.path, &mut self.dataset.exclude, &mut self.poi.path, &mut self.poi.cache_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match self.dataset.kind {
            DatasetKind::Synth => {
                if self.dataset.users.unwrap_or(0) == 0 {
                    return Err(CliError::config("synth dataset needs `users` ≥ 1"));
                }
            }
            _ => {
                if self.dataset.path.is_none() {
                    return Err(CliError::config("dataset needs a `path`"));
                }
            }
        }
        if let Some(r) = &self.region {
            r.validate().map_err(|e| CliError::config(e.to_string()))?;
        }
        let mut labels = std::collections::BTreeSet::new();
        for entry in &self.lppm {
            let label = entry.resolve()?.label();
            if !labels.insert(label.clone()) {
                return Err(CliError::config(format!("lppm {label:?} listed twice")));
            }
        }
        self.attack.schedule()?;
        if self.attack.top_k == 0 || self.attack.cell_m.is_nan() || self.attack.cell_m <= 0.0 {
            return Err(CliError::config("attack top_k and cell_m must be positive"));
        }
        let f = self.prior.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(CliError::config("prior train_fraction must be in (0, 1)"));
        }
        if self.metrics.grid_resolution < 2 || self.metrics.window_days < 0 {
            return Err(CliError::config("grid_resolution must be ≥ 2 and window_days ≥ 0"));
        }
        match self.poi.provider {
            PoiProviderKind::Offline if self.poi.path.is_none() => {
                return Err(CliError::config("offline POI provider needs a `path`"))
            }
            _ => {}
        }
        if self.workers == Some(0) {
            return Err(CliError::config("workers must be ≥ 1"));
        }
        Ok(())
    }

    /// Digest of the canonical JSON form of the config. Output location and
    /// worker count do not affect results and are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.workers = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn region(&self) -> Option<RegionSpec> {
        self.region.clone().or_else(|| {
            (self.dataset.kind == DatasetKind::Synth).then(|| self.template().region)
        })
    }

    pub fn template(&self) -> CohortTemplate {
        self.dataset.template.clone().unwrap_or_else(CohortTemplate::default_city)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.poi
            .cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(".geopriv-cache"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 7
        output_dir = "out"
        [dataset]
        kind = "synth"
        users = 4
        [[lppm]]
        preset = "geoind-50"
        [[lppm]]
        mechanism = { kind = "rounding", decimals = 3 }
    "#;

    #[test]
    fn parses_minimal() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.lppm.len(), 2);
        assert_eq!(c.lppm[1].resolve().unwrap().label(), "rounding-3");
        assert_eq!(c.attack.top_k, 5);
        assert!(c.region().is_some());
        assert_eq!(c.hash(), RunConfig::from_toml_str(MINIMAL).unwrap().hash());
    }

    #[test]
    fn rejects_bad_configs() {
        let bad_preset = MINIMAL.replace("geoind-50", "geoind-51");
        assert!(RunConfig::from_toml_str(&bad_preset).is_err());
        let typo = MINIMAL.replace("users = 4", "users = 4\nuserz = 3");
        assert!(RunConfig::from_toml_str(&typo).is_err());
        let no_users = MINIMAL.replace("users = 4", "");
        assert!(RunConfig::from_toml_str(&no_users).is_err());
        let bad_schedule = format!("{MINIMAL}\n[attack]\nschedule = \"nope\"\n");
        assert!(RunConfig::from_toml_str(&bad_schedule).is_err());
        let twice = MINIMAL.replace("geoind-50", "rounding-3");
        assert!(RunConfig::from_toml_str(&twice).is_err());
    }

    #[test]
    fn every_preset_reachable() {
        for name in Mechanism::preset_names() {
            let s = format!("seed = 1\noutput_dir = \"o\"\n[dataset]\nkind = \"synth\"\nusers = 2\n[[lppm]]\npreset = \"{name}\"\n");
            let c = RunConfig::from_toml_str(&s).unwrap();
            assert_eq!(c.lppm[0].resolve().unwrap().label(), name);
        }
    }
}
