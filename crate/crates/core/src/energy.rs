//! Radio energy accounting for battery-powered nodes.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::phy::RadioMode;
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyParams {
    pub initial_j: f64,
    pub tx_w: f64,
    pub rx_w: f64,
    pub idle_w: f64,
    pub sleep_w: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            initial_j: 4700.0,
            tx_w: 2.0,
            rx_w: 1.0,
            idle_w: 0.8,
            sleep_w: 1e-4,
        }
    }
}

impl EnergyParams {
    pub fn power(&self, mode: RadioMode) -> f64 {
        match mode {
            RadioMode::Tx => self.tx_w,
            RadioMode::Rx => self.rx_w,
            RadioMode::Idle => self.idle_w,
            RadioMode::Sleep => self.sleep_w,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("energy.initial_j", self.initial_j),
            ("energy.tx_w", self.tx_w),
            ("energy.rx_w", self.rx_w),
            ("energy.idle_w", self.idle_w),
            ("energy.sleep_w", self.sleep_w),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(field, "must be a non-negative number"));
            }
        }
        if !(self.sleep_w < self.idle_w && self.idle_w <= self.rx_w) {
            return Err(ConfigError::invalid(
                "energy.sleep_w",
                "powers must satisfy sleep < idle <= rx",
            ));
        }
        Ok(())
    }
}

/// Compensated (Neumaier) running sum; a run charges tens of thousands of
/// tiny intervals against a large battery.
#[derive(Debug, Clone, Copy, Default)]
struct Sum {
    hi: f64,
    lo: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.hi + x;
        if self.hi.abs() >= x.abs() {
            self.lo += (self.hi - t) + x;
        } else {
            self.lo += (x - t) + self.hi;
        }
        self.hi = t;
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// One accounted interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeInterval {
    pub start: SimTime,
    pub duration: f64,
    pub mode: RadioMode,
}

/// Energy state of one node.
#[derive(Debug, Clone)]
pub struct EnergyLedger {
    params: EnergyParams,
    residual: f64,
    consumed: Sum,
    per_mode_j: [Sum; 4],
    per_mode_s: [f64; 4],
    mode: RadioMode,
    since: SimTime,
    depleted_at: Option<SimTime>,
    series: Vec<(SimTime, f64)>,
    log: Vec<ModeInterval>,
}

impl EnergyLedger {
    pub fn new(params: EnergyParams) -> Self {
        EnergyLedger {
            params,
            residual: params.initial_j,
            consumed: Sum::default(),
            per_mode_j: [Sum::default(); 4],
            per_mode_s: [0.0; 4],
            mode: RadioMode::Idle,
            since: SimTime::ZERO,
            depleted_at: None,
            series: vec![(SimTime::ZERO, params.initial_j)],
            log: Vec::new(),
        }
    }

    pub fn params(&self) -> &EnergyParams {
        &self.params
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn mode(&self) -> RadioMode {
        self.mode
    }

    pub fn per_mode_j(&self) -> [f64; 4] {
        self.per_mode_j.map(|s| s.value())
    }

    pub fn per_mode_s(&self) -> [f64; 4] {
        self.per_mode_s
    }

    pub fn depleted_at(&self) -> Option<SimTime> {
        self.depleted_at
    }

    pub fn is_alive(&self) -> bool {
        self.depleted_at.is_none()
    }

    pub fn series(&self) -> &[(SimTime, f64)] {
        &self.series
    }

    pub fn intervals(&self) -> &[ModeInterval] {
        &self.log
    }

    /// Charges `duration` seconds in `mode`; returns the joules consumed,
    /// which are capped at the residual.
    pub fn account(&mut self, mode: RadioMode, duration: f64) -> f64 {
        assert!(duration >= 0.0, "negative duration {duration}");
        if !self.is_alive() || duration == 0.0 {
            return 0.0;
        }
        let want = self.params.power(mode) * duration;
        let used = want.min(self.residual);
        self.consumed.add(used);
        self.per_mode_j[mode.index()].add(used);
        self.residual = if used < want {
            0.0
        } else {
            (self.params.initial_j - self.consumed.value()).max(0.0)
        };
        self.per_mode_s[mode.index()] += duration;
        used
    }

    /// Accounts the current mode up to `now`. Returns true if the battery
    /// ran out in this interval.
    pub fn advance(&mut self, now: SimTime) -> bool {
        let dt = now - self.since;
        if dt <= 0.0 || !self.is_alive() {
            self.since = self.since.max(now);
            return false;
        }
        let power = self.params.power(self.mode);
        let used = self.account(self.mode, dt);
        self.log.push(ModeInterval {
            start: self.since,
            duration: dt,
            mode: self.mode,
        });
        self.since = now;
        if self.residual <= 0.0 && power > 0.0 {
            let at = now.secs() - dt + used / power;
            self.depleted_at = Some(SimTime::from_secs(at.min(now.secs())));
            return true;
        }
        false
    }

    /// Switches mode at `now`, charging the interval spent in the old one.
    pub fn transition(&mut self, now: SimTime, mode: RadioMode) -> bool {
        let died = self.advance(now);
        self.mode = mode;
        died
    }

    /// Appends a point to the residual time series.
    pub fn sample(&mut self, now: SimTime) {
        self.advance(now);
        self.series.push((now, self.residual));
    }

    /// Residual at the latest series point not after `t`.
    fn residual_at(&self, t: f64) -> f64 {
        let idx = self.series.partition_point(|(at, _)| at.secs() <= t + 1e-9);
        if idx == 0 {
            self.params.initial_j
        } else {
            self.series[idx - 1].1
        }
    }

    pub fn consumed_in_window(&self, window_s: f64) -> f64 {
        let end = self.series.last().map_or(0.0, |(t, _)| t.secs());
        self.residual_at(end - window_s) - self.residual_at(end)
    }
}

/// Time until depletion at the average draw of the last `window_s` seconds of
/// the residual series; `None` when nothing was consumed in the window.
pub fn project_lifetime(ledger: &EnergyLedger, window_s: f64) -> Option<f64> {
    assert!(window_s > 0.0, "window must be positive");
    let consumed = ledger.consumed_in_window(window_s);
    if consumed <= 0.0 {
        return None;
    }
    Some(ledger.residual() / (consumed / window_s))
}

/// Lifetime at a constant average draw.
pub fn lifetime_at(residual_j: f64, average_w: f64) -> Option<f64> {
    (average_w > 0.0).then(|| residual_j / average_w)
}
