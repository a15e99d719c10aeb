//! Scenario files: one TOML document whose keys mirror the simulation
//! parameter table. Missing keys take the reference defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::app::{AlertPolicy, CbrConfig, VehicleProfile};
use crate::energy::EnergyParams;
use crate::error::{ConfigError, Error, Result};
use crate::mac::{CsmaConfig, LrwpanConfig, MacKind, SmacConfig, TdmaConfig};
use crate::mobility::{place_base_stations, GridSpec, TurnProbabilities};
use crate::phy::ChannelParams;
use crate::routing::AodvConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Topology {
    pub width_m: f64,
    pub height_m: f64,
    pub base_stations: usize,
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            width_m: 1000.0,
            height_m: 1000.0,
            base_stations: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityConfig {
    pub vehicles: usize,
    pub speed_mps: f64,
    pub street_spacing_m: f64,
    pub tick_s: f64,
    pub turns: TurnProbabilities,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig {
            vehicles: 1,
            speed_mps: 10.0,
            street_spacing_m: 200.0,
            tick_s: 0.1,
            turns: TurnProbabilities::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacSection {
    #[serde(rename = "type")]
    pub kind: MacKind,
    /// Interface queue length in packets.
    pub ifq_length: usize,
    pub csma: CsmaConfig,
    pub lrwpan: LrwpanConfig,
    pub tdma: TdmaConfig,
    pub smac: SmacConfig,
}

impl Default for MacSection {
    fn default() -> Self {
        MacSection {
            kind: MacKind::Ieee80211,
            ifq_length: 50,
            csma: CsmaConfig::default(),
            lrwpan: LrwpanConfig::default(),
            tdma: TdmaConfig::default(),
            smac: SmacConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlertSection {
    #[serde(flatten)]
    pub policy: AlertPolicy,
    pub vehicle_profile: VehicleProfile,
}

impl Default for AlertSection {
    fn default() -> Self {
        AlertSection {
            policy: AlertPolicy::default(),
            vehicle_profile: VehicleProfile::Clean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub horizon_s: f64,
    pub seeds: Vec<u64>,
    pub topology: Topology,
    pub mobility: MobilityConfig,
    pub mac: MacSection,
    pub channel: ChannelParams,
    pub energy: EnergyParams,
    pub routing: AodvConfig,
    pub cbr: CbrConfig,
    pub alert: AlertSection,
    /// Residual energy is sampled at this interval.
    pub energy_sample_s: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            horizon_s: 600.0,
            seeds: (1..=10).collect(),
            topology: Topology::default(),
            mobility: MobilityConfig::default(),
            mac: MacSection::default(),
            channel: ChannelParams::default(),
            energy: EnergyParams::default(),
            routing: AodvConfig::default(),
            cbr: CbrConfig::default(),
            alert: AlertSection::default(),
            energy_sample_s: 1.0,
        }
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            return Err(ConfigError::invalid("horizon_s", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::invalid("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(ConfigError::invalid("seeds", "seeds must be distinct"));
        }
        place_base_stations(self.topology.base_stations, self.topology.width_m, self.topology.height_m)?;
        GridSpec::new(
            self.topology.width_m,
            self.topology.height_m,
            self.mobility.street_spacing_m,
        )?;
        if self.mobility.vehicles != 1 {
            return Err(ConfigError::invalid("mobility.vehicles", "exactly one vehicle is supported"));
        }
        if !(self.mobility.speed_mps > 0.0 && self.mobility.speed_mps.is_finite()) {
            return Err(ConfigError::invalid("mobility.speed_mps", "must be positive"));
        }
        if !(self.mobility.tick_s > 0.0) {
            return Err(ConfigError::invalid("mobility.tick_s", "must be positive"));
        }
        let t = self.mobility.turns;
        if [t.straight, t.left, t.right].iter().any(|p| !(*p >= 0.0)) || t.straight + t.left + t.right <= 0.0 {
            return Err(ConfigError::invalid("mobility.turns", "probabilities must be non-negative with a positive sum"));
        }
        if self.mac.ifq_length == 0 {
            return Err(ConfigError::invalid("mac.ifq_length", "must be at least 1"));
        }
        self.mac.smac.validate()?;
        if self.mac.tdma.slot_s <= 0.0 {
            return Err(ConfigError::invalid("mac.tdma.slot_s", "must be positive"));
        }
        if self.mac.csma.cw_max < self.mac.csma.cw_min {
            return Err(ConfigError::invalid("mac.csma.cw_max", "must not be below cw_min"));
        }
        if self.mac.lrwpan.max_be < self.mac.lrwpan.min_be {
            return Err(ConfigError::invalid("mac.lrwpan.max_be", "must not be below min_be"));
        }
        self.channel.validate()?;
        self.energy.validate()?;
        self.routing.validate()?;
        self.cbr.validate()?;
        if self.cbr.start_s >= self.horizon_s {
            return Err(ConfigError::invalid("cbr.start_s", "traffic must start before the horizon"));
        }
        self.alert.policy.validate()?;
        if !(self.energy_sample_s > 0.0) {
            return Err(ConfigError::invalid("energy_sample_s", "must be positive"));
        }
        Ok(())
    }

    /// Total node count: stations first, then vehicles.
    pub fn node_count(&self) -> usize {
        self.topology.base_stations + self.mobility.vehicles
    }

    /// The same scenario with every MAC-independent field compared.
    pub fn differs_only_in_mac(&self, other: &Scenario) -> bool {
        let mut a = self.clone();
        let b = other.clone();
        a.mac.kind = b.mac.kind;
        a == b
    }
}

pub fn parse_scenario(text: &str, origin: &Path) -> Result<Scenario> {
    let scenario = Scenario::from_toml_str(text).map_err(|message| {
        let message = if message.contains("unknown variant") && message.contains("type") {
            format!("{message}\nvalid MAC types: 802.11, 802.15.4, smac, tdma")
        } else {
            message
        };
        Error::Parse {
            path: origin.to_path_buf(),
            message,
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let s = parse_scenario("", Path::new("empty.toml")).unwrap();
        assert_eq!(s.topology.base_stations, 25);
        assert_eq!((s.topology.width_m, s.topology.height_m), (1000.0, 1000.0));
        assert_eq!(s.channel.tx_power_w, 2.0);
        assert_eq!(s.energy.initial_j, 4700.0);
        assert_eq!(s.cbr.interval_s, 0.1);
        assert_eq!(s.cbr.payload_bytes, 512);
        assert_eq!(s.horizon_s, 600.0);
        assert_eq!(s.seeds.len(), 10);
        assert_eq!(s.mac.ifq_length, 50);
        assert_eq!(s.mobility.vehicles, 1);
    }

    #[test]
    fn unknown_mac_lists_options() {
        let err = parse_scenario("[mac]\ntype = \"csma-foo\"\n", Path::new("x.toml")).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("802.15.4") && text.contains("smac") && text.contains("tdma"), "{text}");
    }

    #[test]
    fn non_square_station_count_is_rejected() {
        let err = parse_scenario("[topology]\nbase_stations = 24\n", Path::new("x.toml")).unwrap_err();
        match err {
            Error::Config(c) => assert_eq!(c.field, "topology.base_stations"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn negative_parameter_names_field() {
        let err = parse_scenario("[channel]\ntx_power_w = -1.0\n", Path::new("x.toml")).unwrap_err();
        match err {
            Error::Config(c) => assert_eq!(c.field, "channel.tx_power_w"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn horizon_before_traffic_is_rejected() {
        let err = parse_scenario("horizon_s = 5.0\n", Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("cbr.start_s"));
    }

    #[test]
    fn round_trips_through_toml() {
        let s = Scenario::default();
        let back = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn mac_only_difference_is_detected() {
        let a = Scenario::default();
        let mut b = a.clone();
        b.mac.kind = MacKind::Tdma;
        assert!(a.differs_only_in_mac(&b));
        b.horizon_s = 300.0;
        assert!(!a.differs_only_in_mac(&b));
    }
}
