//! Vehicle emission reports: CBR traffic, the reading payload, and the
//! server-side alerting policy.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::phy::NodeId;
use crate::sim::{RngStream, SimTime};

/// Network-layer data packet carrying one report.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPacket {
    pub id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub created: SimTime,
    /// Hops traversed so far.
    pub hops: u32,
    pub payload: Arc<[u8]>,
}

impl DataPacket {
    #[cfg(test)]
    pub(crate) fn test_packet(id: u64) -> Self {
        DataPacket {
            id,
            src: 25,
            dst: 12,
            created: SimTime::ZERO,
            hops: 0,
            payload: vec![0u8; 512].into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CbrConfig {
    pub interval_s: f64,
    pub payload_bytes: usize,
    pub start_s: f64,
}

impl Default for CbrConfig {
    fn default() -> Self {
        CbrConfig {
            interval_s: 0.1,
            payload_bytes: 512,
            start_s: 10.0,
        }
    }
}

impl CbrConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.interval_s > 0.0 && self.interval_s.is_finite()) {
            return Err(ConfigError::invalid("cbr.interval_s", "must be positive"));
        }
        if !(self.start_s >= 0.0 && self.start_s.is_finite()) {
            return Err(ConfigError::invalid("cbr.start_s", "must be non-negative"));
        }
        if self.payload_bytes < EmissionReading::ENCODED_LEN || self.payload_bytes > 512 {
            return Err(ConfigError::invalid(
                "cbr.payload_bytes",
                format!("must lie in {}..=512", EmissionReading::ENCODED_LEN),
            ));
        }
        Ok(())
    }
}

/// Send times `start + k * interval` strictly before `horizon`.
///
/// Times are computed by multiplication, so no rounding error accumulates.
pub fn generate_cbr(cfg: &CbrConfig, horizon: SimTime) -> Vec<SimTime> {
    let span = horizon.secs() - cfg.start_s;
    if span <= 0.0 {
        return Vec::new();
    }
    let ratio = span / cfg.interval_s;
    let mut n = ratio.ceil() as u64;
    // a send landing on the horizon (up to rounding) is excluded
    if (ratio - ratio.round()).abs() < 1e-9 {
        n = ratio.round() as u64;
    }
    (0..n)
        .map(|k| SimTime::from_secs(cfg.start_s + k as f64 * cfg.interval_s))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gas {
    #[serde(rename = "CO")]
    Co,
    #[serde(rename = "HC")]
    Hc,
    #[serde(rename = "NOx")]
    Nox,
}

impl Gas {
    pub const ALL: [Gas; 3] = [Gas::Co, Gas::Hc, Gas::Nox];

    pub fn name(self) -> &'static str {
        match self {
            Gas::Co => "CO",
            Gas::Hc => "HC",
            Gas::Nox => "NOx",
        }
    }
}

/// One exhaust sample in ppm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionReading {
    pub vehicle: NodeId,
    pub timestamp: SimTime,
    pub co_ppm: f64,
    pub hc_ppm: f64,
    pub nox_ppm: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("payload too short: {0} bytes")]
    TooShort(usize),
    #[error("bad magic")]
    BadMagic,
}

impl EmissionReading {
    const MAGIC: [u8; 4] = *b"EMR1";
    pub const ENCODED_LEN: usize = 4 + 8 + 8 + 3 * 8;

    pub fn ppm(&self, gas: Gas) -> f64 {
        match gas {
            Gas::Co => self.co_ppm,
            Gas::Hc => self.hc_ppm,
            Gas::Nox => self.nox_ppm,
        }
    }

    /// Fixed-width little-endian record, zero-padded to `len` bytes.
    pub fn encode(&self, len: usize) -> Vec<u8> {
        assert!(len >= Self::ENCODED_LEN, "payload shorter than a reading");
        let mut out = Vec::with_capacity(len);
        out.extend_from_slice(&Self::MAGIC);
        out.extend_from_slice(&(self.vehicle as u64).to_le_bytes());
        out.extend_from_slice(&self.timestamp.secs().to_le_bytes());
        for v in [self.co_ppm, self.hc_ppm, self.nox_ppm] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.resize(len, 0);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.len() < Self::ENCODED_LEN {
            return Err(DecodeError::TooShort(bytes.len()));
        }
        if bytes[..4] != Self::MAGIC {
            return Err(DecodeError::BadMagic);
        }
        let f = |at: usize| f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        let vehicle = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as NodeId;
        Ok(EmissionReading {
            vehicle,
            timestamp: SimTime::from_secs(f(12)),
            co_ppm: f(20),
            hc_ppm: f(28),
            nox_ppm: f(36),
        })
    }
}

/// Synthetic sensor: a baseline per gas with multiplicative Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VehicleProfile {
    Clean,
    Dirty,
}

impl VehicleProfile {
    fn baseline(self) -> [f64; 3] {
        match self {
            VehicleProfile::Clean => [1500.0, 80.0, 300.0],
            VehicleProfile::Dirty => [9000.0, 450.0, 1600.0],
        }
    }
}

pub fn sample_reading(
    vehicle: NodeId,
    now: SimTime,
    profile: VehicleProfile,
    rng: &mut RngStream,
) -> EmissionReading {
    let noise = Normal::new(1.0, 0.1).expect("valid normal");
    let mut v = profile.baseline();
    for x in &mut v {
        *x = (*x * noise.sample(rng)).max(0.0);
    }
    // occasional transient spike
    if rng.gen_bool(0.01) {
        v[0] *= 4.0;
    }
    EmissionReading {
        vehicle,
        timestamp: now,
        co_ppm: v[0],
        hc_ppm: v[1],
        nox_ppm: v[2],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlertPolicy {
    pub co_ppm: f64,
    pub hc_ppm: f64,
    pub nox_ppm: f64,
    /// Consecutive violating reports after a notice before a charge.
    pub window: u32,
}

impl Default for AlertPolicy {
    fn default() -> Self {
        AlertPolicy {
            co_ppm: 5000.0,
            hc_ppm: 200.0,
            nox_ppm: 1000.0,
            window: 3,
        }
    }
}

impl AlertPolicy {
    pub fn threshold(&self, gas: Gas) -> f64 {
        match gas {
            Gas::Co => self.co_ppm,
            Gas::Hc => self.hc_ppm,
            Gas::Nox => self.nox_ppm,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("alert.co_ppm", self.co_ppm),
            ("alert.hc_ppm", self.hc_ppm),
            ("alert.nox_ppm", self.nox_ppm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(field, "threshold must be positive"));
            }
        }
        if self.window == 0 {
            return Err(ConfigError::invalid("alert.window", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    Violation(Vec<Gas>),
}

/// Lists every gas strictly above its threshold.
pub fn evaluate_reading(reading: &EmissionReading, policy: &AlertPolicy) -> Verdict {
    let over: Vec<Gas> = Gas::ALL
        .into_iter()
        .filter(|&g| reading.ppm(g) > policy.threshold(g))
        .collect();
    if over.is_empty() {
        Verdict::Ok
    } else {
        Verdict::Violation(over)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Escalation {
    #[default]
    None,
    Notify,
    Charge,
}

/// Escalation reached after walking `history` in order.
///
/// The first violation triggers a notice; `window` consecutive violations
/// after the notice trigger a charge. An OK report resets the run.
pub fn escalate(history: &[Verdict], policy: &AlertPolicy) -> Escalation {
    let mut tracker = EscalationTracker::default();
    for v in history {
        tracker.observe(v, policy);
    }
    tracker.level
}

/// Incremental form of [`escalate`], kept per vehicle at the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EscalationTracker {
    pub level: Escalation,
    run: u32,
}

impl EscalationTracker {
    /// Returns the new level if this report raised it.
    pub fn observe(&mut self, verdict: &Verdict, policy: &AlertPolicy) -> Option<Escalation> {
        match verdict {
            Verdict::Ok => {
                self.run = 0;
                None
            }
            Verdict::Violation(_) => match self.level {
                Escalation::None => {
                    self.level = Escalation::Notify;
                    Some(Escalation::Notify)
                }
                Escalation::Notify => {
                    self.run += 1;
                    if self.run >= policy.window {
                        self.level = Escalation::Charge;
                        Some(Escalation::Charge)
                    } else {
                        None
                    }
                }
                Escalation::Charge => None,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reading(co: f64, hc: f64, nox: f64) -> EmissionReading {
        EmissionReading {
            vehicle: 25,
            timestamp: SimTime::from_secs(10.0),
            co_ppm: co,
            hc_ppm: hc,
            nox_ppm: nox,
        }
    }

    #[test]
    fn cbr_counts() {
        let cfg = CbrConfig::default();
        assert_eq!(generate_cbr(&cfg, SimTime::from_secs(600.0)).len(), 5900);
        assert!(generate_cbr(&cfg, SimTime::from_secs(10.0)).is_empty());
        let eleven = generate_cbr(&cfg, SimTime::from_secs(11.0));
        let expected: Vec<f64> = (0..10).map(|k| 10.0 + f64::from(k) / 10.0).collect();
        assert_eq!(eleven.len(), expected.len());
        for (t, e) in eleven.iter().zip(&expected) {
            assert!((t.secs() - e).abs() < 1e-12);
        }
        assert!(generate_cbr(&cfg, SimTime::from_secs(600.0)).last().unwrap().secs() < 600.0);
    }

    #[test]
    fn thresholds_are_strict() {
        let p = AlertPolicy::default();
        assert_eq!(evaluate_reading(&reading(100.0, 10.0, 10.0), &p), Verdict::Ok);
        assert_eq!(evaluate_reading(&reading(5000.0, 10.0, 10.0), &p), Verdict::Ok);
        assert_eq!(
            evaluate_reading(&reading(5000.1, 10.0, 1000.5), &p),
            Verdict::Violation(vec![Gas::Co, Gas::Nox])
        );
    }

    #[test]
    fn escalation_examples() {
        let p = AlertPolicy::default();
        let v = Verdict::Violation(vec![Gas::Co]);
        assert_eq!(escalate(&[Verdict::Ok, Verdict::Ok], &p), Escalation::None);
        assert_eq!(escalate(&[Verdict::Ok, v.clone()], &p), Escalation::Notify);
        assert_eq!(escalate(&vec![v.clone(); 3], &p), Escalation::Notify);
        assert_eq!(escalate(&vec![v.clone(); 4], &p), Escalation::Charge);
        let reset = [v.clone(), v.clone(), v.clone(), Verdict::Ok, v.clone(), v.clone()];
        assert_eq!(escalate(&reset, &p), Escalation::Notify);
    }

    #[test]
    fn reading_round_trips_through_payload() {
        let r = reading(1234.5, 67.25, 890.125);
        let bytes = r.encode(512);
        assert_eq!(bytes.len(), 512);
        assert_eq!(EmissionReading::decode(&bytes).unwrap(), r);
        assert_eq!(EmissionReading::decode(&bytes[..10]), Err(DecodeError::TooShort(10)));
    }

    #[test]
    fn profiles_land_on_the_expected_side_of_the_thresholds() {
        let p = AlertPolicy::default();
        let mut rng = RngStream::new(1, "profile");
        let mut dirty = 0;
        let mut clean_ok = 0;
        for i in 0..1000 {
            let t = SimTime::from_secs(f64::from(i));
            if evaluate_reading(&sample_reading(25, t, VehicleProfile::Dirty, &mut rng), &p) != Verdict::Ok {
                dirty += 1;
            }
            if evaluate_reading(&sample_reading(25, t, VehicleProfile::Clean, &mut rng), &p) == Verdict::Ok {
                clean_ok += 1;
            }
        }
        assert!(dirty > 990, "{dirty}");
        assert!(clean_ok > 950, "{clean_ok}");
    }

    fn verdict() -> impl Strategy<Value = Verdict> {
        prop_oneof![Just(Verdict::Ok), Just(Verdict::Violation(vec![Gas::Hc]))]
    }

    proptest! {
        #[test]
        fn adding_a_violation_never_downgrades(history in prop::collection::vec(verdict(), 0..30), window in 1u32..5) {
            let p = AlertPolicy { window, ..AlertPolicy::default() };
            let before = escalate(&history, &p);
            let mut extended = history.clone();
            extended.push(Verdict::Violation(vec![Gas::Co]));
            prop_assert!(escalate(&extended, &p) >= before);
        }

        #[test]
        fn cbr_matches_enumeration(start in 0u32..50, ticks in 0u32..400) {
            let cfg = CbrConfig { start_s: f64::from(start), ..CbrConfig::default() };
            let horizon = SimTime::from_secs(f64::from(start) + f64::from(ticks) / 10.0 + 0.05);
            let sends = generate_cbr(&cfg, horizon);
            prop_assert_eq!(sends.len() as u32, ticks + 1);
            for w in sends.windows(2) {
                prop_assert!((w[1].secs() - w[0].secs() - 0.1).abs() < 1e-9);
            }
        }
    }
}
