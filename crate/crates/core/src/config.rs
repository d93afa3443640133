//! Scenario configuration and its TOML file format.
//!
//! Only `schema_version` and `carrier_frequency` are mandatory in a file; every
//! other key falls back to the urban macro-cell defaults of [`ScenarioConfig::default`].

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{wavelength, ArraySpec, Motion};
use crate::largescale::DB_TO_NATURAL;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    /// Hz
    pub carrier_frequency: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// BS-MS distance, metres.
    #[serde(default = "default_d_tr")]
    pub d_tr: f64,
    /// LOS angle of departure at the BS, radians.
    #[serde(default)]
    pub los_aod: f64,
    /// LOS angle of arrival at the MS; `pi + los_aod` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub los_aoa: Option<f64>,
    #[serde(default = "ArrayConfig::default_tx")]
    pub tx_array: ArrayConfig,
    #[serde(default = "ArrayConfig::default_rx")]
    pub rx_array: ArrayConfig,
    #[serde(default)]
    pub motion: MotionConfig,
    #[serde(default)]
    pub clusters: ClusterConfig,
    #[serde(default)]
    pub large_scale: LargeScaleConfig,
    #[serde(default)]
    pub time: TimeConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_d_tr() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub num_elements: usize,
    /// Element spacing in carrier wavelengths.
    pub spacing_wavelengths: f64,
    /// Radians w.r.t. the x-axis.
    pub tilt: f64,
}

impl ArrayConfig {
    fn default_tx() -> Self {
        Self {
            num_elements: 128,
            spacing_wavelengths: 0.5,
            tilt: FRAC_PI_2,
        }
    }

    fn default_rx() -> Self {
        Self {
            num_elements: 10,
            spacing_wavelengths: 0.5,
            tilt: FRAC_PI_4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    /// m/s
    pub speed: f64,
    /// radians
    pub heading: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            speed: 10.0,
            heading: FRAC_PI_3,
        }
    }
}

/// How cluster powers are derived from delays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerMode {
    /// Exponential delay-power profile only; array-level shadowing replaces the
    /// per-cluster random factor.
    MassiveMimo,
    /// Keeps the per-cluster `10^(-nu/10)` randomization.
    Winner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub count: usize,
    pub rays_per_cluster: usize,
    /// Delay distribution proportionality factor `r_tau`.
    pub delay_ratio: f64,
    /// RMS delay spread, seconds.
    pub delay_spread: f64,
    /// Per-cluster ray angular spread, radians.
    pub cluster_asd: f64,
    /// Angular spread of cluster centres around the LOS direction, radians.
    pub composite_asd: f64,
    /// Mean of the exponential excess range, metres.
    pub range_mean: f64,
    pub range_min: f64,
    pub power_mode: PowerMode,
    /// Std of the per-cluster shadowing term in `winner` power mode, dB.
    pub winner_shadow_std_db: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            count: 20,
            rays_per_cluster: 20,
            delay_ratio: 2.3,
            delay_spread: 234e-9,
            cluster_asd: PI / 12.0,
            composite_asd: PI / 3.0,
            range_mean: 15.0,
            range_min: 20.0,
            power_mode: PowerMode::MassiveMimo,
            winner_shadow_std_db: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaUnits {
    /// Shadow sigma given in dB, amplitude `10^(sigma nu / 20)`.
    Db,
    /// Shadow sigma given as a natural-log std, amplitude `exp(sigma nu)`.
    Natural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LargeScaleConfig {
    pub shadow_sigma: f64,
    pub shadow_sigma_units: SigmaUnits,
    /// Decorrelation distance of the Gaussian field, metres.
    pub shadow_decorr: f64,
    /// Visibility rates (both states) of high-power clusters, 1/m.
    pub markov_rate_strong: f64,
    /// Visibility rates (both states) of low-power clusters, 1/m.
    pub markov_rate_weak: f64,
    /// Area mean `m_c = coupling * P_c`, dB.
    pub area_mean_coupling: f64,
    /// LOS shadow sigma in `shadow_sigma_units`; defaults to `shadow_sigma`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub los_shadow_sigma: Option<f64>,
    pub los_mean_db: f64,
    /// LOS visibility rates (both states); defaults to `markov_rate_strong`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub los_markov_rate: Option<f64>,
}

impl Default for LargeScaleConfig {
    fn default() -> Self {
        Self {
            shadow_sigma: 0.2,
            shadow_sigma_units: SigmaUnits::Natural,
            shadow_decorr: 0.6,
            markov_rate_strong: 0.01,
            markov_rate_weak: 0.5,
            area_mean_coupling: 1.0,
            los_shadow_sigma: None,
            los_mean_db: 0.0,
            los_markov_rate: None,
        }
    }
}

impl LargeScaleConfig {
    fn to_db(&self, sigma: f64) -> f64 {
        match self.shadow_sigma_units {
            SigmaUnits::Db => sigma,
            SigmaUnits::Natural => sigma / DB_TO_NATURAL,
        }
    }

    pub fn sigma_db(&self) -> f64 {
        self.to_db(self.shadow_sigma)
    }

    pub fn los_sigma_db(&self) -> f64 {
        self.to_db(self.los_shadow_sigma.unwrap_or(self.shadow_sigma))
    }

    pub fn los_rate(&self) -> f64 {
        self.los_markov_rate.unwrap_or(self.markov_rate_strong)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub samples: usize,
    /// Seconds; `1 / (8 f_max)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    pub start: f64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            samples: 256,
            step: None,
            start: 0.0,
        }
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            carrier_frequency: 2.6e9,
            seed: default_seed(),
            d_tr: default_d_tr(),
            los_aod: 0.0,
            los_aoa: None,
            tx_array: ArrayConfig::default_tx(),
            rx_array: ArrayConfig::default_rx(),
            motion: MotionConfig::default(),
            clusters: ClusterConfig::default(),
            large_scale: LargeScaleConfig::default(),
            time: TimeConfig::default(),
        }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("expected a positive number, got {v}")))
    }
}

fn finite(key: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("expected a finite number, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().to_string();
            // a missing field is reported at its parent; name the field itself
            match missing_field(&msg) {
                Some(field) if path == "." => Error::config(field, msg),
                Some(field) => Error::config(format!("{path}.{field}"), msg),
                None => Error::config(path, msg),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Short content hash of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        positive("carrier_frequency", self.carrier_frequency)?;
        positive("d_tr", self.d_tr)?;
        finite("los_aod", self.los_aod)?;
        if let Some(a) = self.los_aoa {
            finite("los_aoa", a)?;
        }
        for (name, arr) in [("tx_array", &self.tx_array), ("rx_array", &self.rx_array)] {
            if arr.num_elements == 0 {
                return Err(Error::config(
                    format!("{name}.num_elements"),
                    "expected at least one element",
                ));
            }
            positive(&format!("{name}.spacing_wavelengths"), arr.spacing_wavelengths)?;
            finite(&format!("{name}.tilt"), arr.tilt)?;
        }
        if !(self.motion.speed >= 0.0 && self.motion.speed.is_finite()) {
            return Err(Error::config("motion.speed", "expected a non-negative number"));
        }
        finite("motion.heading", self.motion.heading)?;
        let c = &self.clusters;
        if c.count == 0 {
            return Err(Error::config("clusters.count", "expected at least one cluster"));
        }
        if c.rays_per_cluster == 0 {
            return Err(Error::config("clusters.rays_per_cluster", "expected at least one ray"));
        }
        if !(c.delay_ratio > 1.0) {
            return Err(Error::config("clusters.delay_ratio", "expected a value > 1"));
        }
        positive("clusters.delay_spread", c.delay_spread)?;
        if !(c.cluster_asd >= 0.0) {
            return Err(Error::config("clusters.cluster_asd", "expected a non-negative angle"));
        }
        if !(c.composite_asd >= 0.0) {
            return Err(Error::config("clusters.composite_asd", "expected a non-negative angle"));
        }
        positive("clusters.range_mean", c.range_mean)?;
        positive("clusters.range_min", c.range_min)?;
        if !(c.winner_shadow_std_db >= 0.0) {
            return Err(Error::config("clusters.winner_shadow_std_db", "expected >= 0"));
        }
        let l = &self.large_scale;
        if !(l.shadow_sigma >= 0.0) {
            return Err(Error::config("large_scale.shadow_sigma", "expected >= 0"));
        }
        positive("large_scale.shadow_decorr", l.shadow_decorr)?;
        positive("large_scale.markov_rate_strong", l.markov_rate_strong)?;
        positive("large_scale.markov_rate_weak", l.markov_rate_weak)?;
        finite("large_scale.area_mean_coupling", l.area_mean_coupling)?;
        finite("large_scale.los_mean_db", l.los_mean_db)?;
        if let Some(s) = l.los_shadow_sigma {
            if !(s >= 0.0) {
                return Err(Error::config("large_scale.los_shadow_sigma", "expected >= 0"));
            }
        }
        if let Some(r) = l.los_markov_rate {
            positive("large_scale.los_markov_rate", r)?;
        }
        if self.time.samples == 0 {
            return Err(Error::config("time.samples", "expected at least one sample"));
        }
        if let Some(s) = self.time.step {
            positive("time.step", s)?;
        }
        finite("time.start", self.time.start)?;
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        wavelength(self.carrier_frequency)
    }

    pub fn tx(&self) -> Result<ArraySpec> {
        let a = &self.tx_array;
        ArraySpec::new(a.num_elements, a.spacing_wavelengths * self.wavelength(), a.tilt)
    }

    pub fn rx(&self) -> Result<ArraySpec> {
        let a = &self.rx_array;
        ArraySpec::new(a.num_elements, a.spacing_wavelengths * self.wavelength(), a.tilt)
    }

    pub fn motion(&self) -> Result<Motion> {
        Motion::new(self.motion.speed, self.motion.heading)
    }

    pub fn los_aoa(&self) -> f64 {
        self.los_aoa.unwrap_or(PI + self.los_aod)
    }
}

fn missing_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("missing field `")?;
    Some(rest.split('`').next()?.to_string())
}
