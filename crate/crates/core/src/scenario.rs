//! Scenario description: radio parameters, city regions with per-slot user
//! densities, the decision variables of a deployment, and the JSON file
//! format that carries all of them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::OptimizerConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Relative tolerance on the per-slot MBS totals.
pub const CONSERVATION_REL_TOL: f64 = 1e-6;

/// Thermal noise at 290 K, -174 dBm/Hz.
pub fn thermal_noise_psd() -> f64 {
    1e-3 * 10f64.powf(-174.0 / 10.0)
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario not found: {0}")]
    NotFound(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{field} {reason}")]
    Invalid { field: String, reason: String },
    #[error("unsupported schema_version {found} (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error("MBS totals differ across slots: {totals:?}")]
    Conservation { totals: Vec<f64> },
}

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

fn default_noise() -> f64 {
    thermal_noise_psd()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioParams {
    pub bandwidth_hz: f64,
    pub reuse_factor_k: u32,
    pub path_loss_alpha: f64,
    #[serde(default = "default_noise")]
    pub noise_psd_w_per_hz: f64,
    pub power_static_w: f64,
    pub power_mobile_w: f64,
    pub target_delay_tau0_s: f64,
    pub violation_target_delta: f64,
}

impl Default for RadioParams {
    /// 10 MHz, reuse 3, alpha 3, 3 W both tiers, 10 us/bit target, 5 % violation.
    fn default() -> Self {
        Self {
            bandwidth_hz: 10e6,
            reuse_factor_k: 3,
            path_loss_alpha: 3.0,
            noise_psd_w_per_hz: thermal_noise_psd(),
            power_static_w: 3.0,
            power_mobile_w: 3.0,
            target_delay_tau0_s: 1e-5,
            violation_target_delta: 0.05,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(invalid("bandwidth_hz", "must be positive"));
        }
        if self.reuse_factor_k == 0 {
            return Err(invalid("reuse_factor_k", "must be a positive integer"));
        }
        if !(self.path_loss_alpha > 2.0 && self.path_loss_alpha.is_finite()) {
            return Err(invalid("path_loss_alpha", "must exceed 2"));
        }
        if !(self.noise_psd_w_per_hz >= 0.0 && self.noise_psd_w_per_hz.is_finite()) {
            return Err(invalid("noise_psd_w_per_hz", "must be nonnegative"));
        }
        if !(self.power_static_w > 0.0 && self.power_static_w.is_finite()) {
            return Err(invalid("power_static_w", "must be positive"));
        }
        if !(self.power_mobile_w > 0.0 && self.power_mobile_w.is_finite()) {
            return Err(invalid("power_mobile_w", "must be positive"));
        }
        if self.power_mobile_w > self.power_static_w {
            return Err(invalid("power_mobile_w", "must not exceed power_static_w"));
        }
        if !(self.target_delay_tau0_s > 0.0 && self.target_delay_tau0_s.is_finite()) {
            return Err(invalid("target_delay_tau0_s", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.violation_target_delta) {
            return Err(invalid("violation_target_delta", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Distance ratio `(P_m / P_s)^(1/alpha)` at which both tiers deliver
    /// the same received power.
    pub fn rho_ms(&self) -> f64 {
        (self.power_mobile_w / self.power_static_w).powf(1.0 / self.path_loss_alpha)
    }

    /// Bandwidth of one reuse channel, `B / k`.
    pub fn channel_bandwidth(&self) -> f64 {
        self.bandwidth_hz / self.reuse_factor_k as f64
    }

    /// Noise power over one reuse channel, `N0 B / k`.
    pub fn noise_power(&self) -> f64 {
        self.noise_psd_w_per_hz * self.channel_bandwidth()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub area_m2: f64,
    pub user_density_per_slot: Vec<f64>,
}

/// Piecewise-constant daily profile: a block of `ceil(J/2)` high slots starting
/// at `peak_slot` (wrapping), the remaining slots low, with
/// `high / low = peak_to_trough` and the slot average equal to `mean_density`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommutingProfile {
    pub mean_density: f64,
    pub peak_to_trough: f64,
    pub peak_slot: usize,
}

impl CommutingProfile {
    /// Builds the profile from the fractional swing `1 - trough/peak`
    /// (a "90 %" swing is a peak-to-trough ratio of 10).
    pub fn from_swing(mean_density: f64, swing: f64, peak_slot: usize) -> Self {
        Self {
            mean_density,
            peak_to_trough: 1.0 / (1.0 - swing),
            peak_slot,
        }
    }

    pub fn densities(&self, num_slots: usize) -> Vec<f64> {
        let high_slots = num_slots.div_ceil(2);
        let low_slots = num_slots - high_slots;
        let denom = high_slots as f64 * self.peak_to_trough + low_slots as f64;
        let low = self.mean_density * num_slots as f64 / denom;
        let high = low * self.peak_to_trough;
        (0..num_slots)
            .map(|j| {
                let offset = (j + num_slots - self.peak_slot % num_slots) % num_slots;
                if offset < high_slots {
                    high
                } else {
                    low
                }
            })
            .collect()
    }

    /// The same profile shifted by half a day.
    pub fn anti_phase(&self, num_slots: usize) -> Self {
        Self {
            peak_slot: (self.peak_slot + num_slots / 2) % num_slots,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub regions: Vec<Region>,
    pub num_slots_j: usize,
    pub mbs_relative_cost_mu: f64,
    pub radio: RadioParams,
    pub optimizer: OptimizerConfig,
}

impl Scenario {
    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.radio.validate()?;
        if self.num_slots_j == 0 {
            return Err(invalid("num_slots", "must be positive"));
        }
        if self.regions.is_empty() {
            return Err(invalid("regions", "must not be empty"));
        }
        if !(self.mbs_relative_cost_mu >= 0.0 && self.mbs_relative_cost_mu.is_finite()) {
            return Err(invalid("mbs_relative_cost_mu", "must be nonnegative"));
        }
        for (z, region) in self.regions.iter().enumerate() {
            if !(region.area_m2 > 0.0 && region.area_m2.is_finite()) {
                return Err(invalid(format!("regions[{z}].area_m2"), "must be positive"));
            }
            if region.user_density_per_slot.len() != self.num_slots_j {
                return Err(invalid(
                    format!("regions[{z}].user_density_per_slot"),
                    format!(
                        "has {} entries, expected num_slots = {}",
                        region.user_density_per_slot.len(),
                        self.num_slots_j
                    ),
                ));
            }
            for (j, &d) in region.user_density_per_slot.iter().enumerate() {
                if !(d > 0.0 && d.is_finite()) {
                    return Err(invalid(
                        format!("regions[{z}].user_density_per_slot[{j}]"),
                        "must be positive",
                    ));
                }
            }
        }
        self.optimizer.validate()?;
        Ok(())
    }

    /// Single-region, single-slot scenario.
    pub fn single(radio: RadioParams, area_m2: f64, user_density: f64, mu: f64) -> Self {
        Self {
            regions: vec![Region {
                name: None,
                area_m2,
                user_density_per_slot: vec![user_density],
            }],
            num_slots_j: 1,
            mbs_relative_cost_mu: mu,
            radio,
            optimizer: OptimizerConfig::default(),
        }
    }

    /// Residential/office pair with anti-phase commuting profiles; the office
    /// area is `gamma` times the residential one.
    pub fn commuting(
        radio: RadioParams,
        residential_area_m2: f64,
        gamma: f64,
        profile: CommutingProfile,
        num_slots: usize,
        mu: f64,
    ) -> Self {
        let office = profile.anti_phase(num_slots);
        Self {
            regions: vec![
                Region {
                    name: Some("residential".into()),
                    area_m2: residential_area_m2,
                    user_density_per_slot: profile.densities(num_slots),
                },
                Region {
                    name: Some("office".into()),
                    area_m2: residential_area_m2 * gamma,
                    user_density_per_slot: office.densities(num_slots),
                },
            ],
            num_slots_j: num_slots,
            mbs_relative_cost_mu: mu,
            radio,
            optimizer: OptimizerConfig::default(),
        }
    }

    pub fn to_file_format(&self) -> ScenarioFile {
        ScenarioFile {
            schema_version: SCHEMA_VERSION,
            num_slots: self.num_slots_j,
            mbs_relative_cost_mu: self.mbs_relative_cost_mu,
            radio: self.radio.clone(),
            regions: self
                .regions
                .iter()
                .map(|r| RegionFile {
                    name: r.name.clone(),
                    area_m2: r.area_m2,
                    user_density_per_slot: Some(r.user_density_per_slot.clone()),
                    profile: None,
                })
                .collect(),
            optimizer: self.optimizer.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file_format()).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        file.into_scenario()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// On-disk region: either an explicit per-slot list or a commuting profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub area_m2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_density_per_slot: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<CommutingProfile>,
}

/// On-disk scenario document (`schema_version` 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub num_slots: usize,
    #[serde(default)]
    pub mbs_relative_cost_mu: f64,
    pub radio: RadioParams,
    pub regions: Vec<RegionFile>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::Schema {
                found: self.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let num_slots = self.num_slots;
        let regions = self
            .regions
            .into_iter()
            .enumerate()
            .map(|(z, r)| {
                let densities = match (r.user_density_per_slot, r.profile) {
                    (Some(list), None) => list,
                    (None, Some(p)) => {
                        if num_slots == 0 {
                            return Err(invalid("num_slots", "must be positive"));
                        }
                        if !(p.peak_to_trough >= 1.0) {
                            return Err(invalid(
                                format!("regions[{z}].profile.peak_to_trough"),
                                "must be at least 1",
                            ));
                        }
                        p.densities(num_slots)
                    }
                    _ => {
                        return Err(invalid(
                            format!("regions[{z}]"),
                            "needs exactly one of user_density_per_slot or profile",
                        ))
                    }
                };
                Ok(Region {
                    name: r.name,
                    area_m2: r.area_m2,
                    user_density_per_slot: densities,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let scenario = Scenario {
            regions,
            num_slots_j: num_slots,
            mbs_relative_cost_mu: self.mbs_relative_cost_mu,
            radio: self.radio,
            optimizer: self.optimizer,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(ScenarioError::NotFound(path.display().to_string()));
    }
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_json(&text)
}

/// Decision variables of the deployment problem: per-region SBS density, per-region/per-slot
/// MBS density and WPS weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfiguration {
    pub sbs_density: Vec<f64>,
    pub mbs_density: Vec<Vec<f64>>,
    pub wps_weight_phi: Vec<Vec<f64>>,
}

impl NetworkConfiguration {
    /// SBS-only deployment with `phi = 1` everywhere.
    pub fn static_only(sbs_density: Vec<f64>, num_slots: usize) -> Self {
        let z = sbs_density.len();
        Self {
            sbs_density,
            mbs_density: vec![vec![0.0; num_slots]; z],
            wps_weight_phi: vec![vec![1.0; num_slots]; z],
        }
    }

    pub fn check_dimensions(&self, s: &Scenario) -> Result<(), ScenarioError> {
        let z = s.num_regions();
        let j = s.num_slots_j;
        if self.sbs_density.len() != z || self.mbs_density.len() != z || self.wps_weight_phi.len() != z
        {
            return Err(invalid("configuration", format!("must have {z} regions")));
        }
        for zi in 0..z {
            if self.mbs_density[zi].len() != j || self.wps_weight_phi[zi].len() != j {
                return Err(invalid(
                    format!("configuration[{zi}]"),
                    format!("must have {j} slots"),
                ));
            }
        }
        Ok(())
    }

    /// Per-slot MBS totals `sum_z lambda_m[z][j] * E_z`.
    pub fn slot_mbs_totals(&self, s: &Scenario) -> Vec<f64> {
        (0..s.num_slots_j)
            .map(|j| {
                self.mbs_density
                    .iter()
                    .zip(&s.regions)
                    .map(|(m, r)| m[j] * r.area_m2)
                    .sum()
            })
            .collect()
    }

    /// Largest relative deviation of a slot total from the mean slot total.
    pub fn conservation_spread(&self, s: &Scenario) -> f64 {
        let totals = self.slot_mbs_totals(s);
        let mean = totals.iter().sum::<f64>() / totals.len() as f64;
        if mean <= 0.0 {
            return totals.iter().cloned().fold(0.0, f64::max);
        }
        totals
            .iter()
            .map(|t| (t - mean).abs() / mean)
            .fold(0.0, f64::max)
    }

    pub fn validate(&self, s: &Scenario) -> Result<(), ScenarioError> {
        self.check_dimensions(s)?;
        let all = self
            .sbs_density
            .iter()
            .chain(self.mbs_density.iter().flatten())
            .chain(self.wps_weight_phi.iter().flatten());
        if all.clone().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("configuration", "entries must be finite and nonnegative"));
        }
        total_mbs_count(self, s)?;
        Ok(())
    }
}

/// Fleet size `M = sum_z lambda_m[z][0] E_z`, after checking that every slot
/// carries the same total.
pub fn total_mbs_count(cfg: &NetworkConfiguration, s: &Scenario) -> Result<f64, ScenarioError> {
    cfg.check_dimensions(s)?;
    let totals = cfg.slot_mbs_totals(s);
    let first = totals[0];
    let scale = totals.iter().cloned().fold(0.0, f64::max);
    if totals
        .iter()
        .any(|t| (t - first).abs() > CONSERVATION_REL_TOL * scale)
    {
        return Err(ScenarioError::Conservation { totals });
    }
    Ok(first)
}
