//! Edge devices and wireless links.
//!
//! Links are abstracted to their Shannon capacity `B * log2(1 + SNR)`; there is
//! no path-loss, interference or MAC model. Channel states are exogenous inputs,
//! either fixed or drawn from a [`ChannelDistribution`].

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("link rate is zero; the payload cannot be transmitted")]
    ZeroRate,
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> NetError {
    NetError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Uav,
    Vehicle,
}

impl DeviceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DeviceKind::Uav => "uav",
            DeviceKind::Vehicle => "vehicle",
        }
    }
}

/// Compute and radio characteristics of an edge terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    id: String,
    kind: DeviceKind,
    peak_flops: f64,
    compute_power_w: f64,
    tx_power_w: f64,
    battery_j: Option<f64>,
}

impl DeviceProfile {
    /// Peak FP32 throughput of the UAV compute stand-in (Quadro P400).
    pub const UAV_PEAK_FLOPS: f64 = 0.641e12;
    /// Maximum board power of the UAV compute stand-in.
    pub const UAV_COMPUTE_POWER_W: f64 = 30.0;
    pub const UAV_TX_POWER_W: f64 = 1.0;
    /// Peak FP32 throughput of the vehicle compute stand-in (DRIVE AGX Xavier GPU).
    pub const VEHICLE_PEAK_FLOPS: f64 = 1.3e12;
    pub const VEHICLE_COMPUTE_POWER_W: f64 = 30.0;
    pub const VEHICLE_TX_POWER_W: f64 = 2.0;

    pub fn new(
        id: impl Into<String>,
        kind: DeviceKind,
        peak_flops: f64,
        compute_power_w: f64,
        tx_power_w: f64,
        battery_j: Option<f64>,
    ) -> Result<Self, NetError> {
        if !(peak_flops.is_finite() && peak_flops > 0.0) {
            return Err(invalid("peak_flops", format!("must be > 0, got {peak_flops}")));
        }
        if !(compute_power_w.is_finite() && compute_power_w > 0.0) {
            return Err(invalid(
                "compute_power_w",
                format!("must be > 0, got {compute_power_w}"),
            ));
        }
        if !(tx_power_w.is_finite() && tx_power_w > 0.0) {
            return Err(invalid("tx_power_w", format!("must be > 0, got {tx_power_w}")));
        }
        if let Some(b) = battery_j {
            if !(b.is_finite() && b >= 0.0) {
                return Err(invalid("battery_j", format!("must be >= 0, got {b}")));
            }
        }
        Ok(Self {
            id: id.into(),
            kind,
            peak_flops,
            compute_power_w,
            tx_power_w,
            battery_j,
        })
    }

    /// UAV with the default constants.
    pub fn uav(id: impl Into<String>) -> Self {
        Self::new(
            id,
            DeviceKind::Uav,
            Self::UAV_PEAK_FLOPS,
            Self::UAV_COMPUTE_POWER_W,
            Self::UAV_TX_POWER_W,
            None,
        )
        .expect("default UAV constants are valid")
    }

    /// Vehicle with the default constants.
    pub fn vehicle(id: impl Into<String>) -> Self {
        Self::new(
            id,
            DeviceKind::Vehicle,
            Self::VEHICLE_PEAK_FLOPS,
            Self::VEHICLE_COMPUTE_POWER_W,
            Self::VEHICLE_TX_POWER_W,
            None,
        )
        .expect("default vehicle constants are valid")
    }

    pub fn with_battery(mut self, battery_j: f64) -> Result<Self, NetError> {
        if !(battery_j.is_finite() && battery_j >= 0.0) {
            return Err(invalid("battery_j", format!("must be >= 0, got {battery_j}")));
        }
        self.battery_j = Some(battery_j);
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn kind(&self) -> DeviceKind {
        self.kind
    }
    pub fn peak_flops(&self) -> f64 {
        self.peak_flops
    }
    pub fn compute_power_w(&self) -> f64 {
        self.compute_power_w
    }
    pub fn tx_power_w(&self) -> f64 {
        self.tx_power_w
    }
    pub fn battery_j(&self) -> Option<f64> {
        self.battery_j
    }
}

/// Instantaneous link state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState {
    bandwidth_hz: f64,
    snr_linear: f64,
}

impl ChannelState {
    pub fn new(bandwidth_hz: f64, snr_linear: f64) -> Result<Self, NetError> {
        if !(bandwidth_hz.is_finite() && bandwidth_hz > 0.0) {
            return Err(invalid("bandwidth_hz", format!("must be > 0, got {bandwidth_hz}")));
        }
        if !(snr_linear.is_finite() && snr_linear >= 0.0) {
            return Err(invalid("snr_linear", format!("must be >= 0, got {snr_linear}")));
        }
        Ok(Self {
            bandwidth_hz,
            snr_linear,
        })
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.bandwidth_hz
    }
    pub fn snr_linear(&self) -> f64 {
        self.snr_linear
    }
}

/// Uniform bandwidth and uniform-in-dB SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDistribution {
    bandwidth_range: (f64, f64),
    snr_range_db: (f64, f64),
}

impl ChannelDistribution {
    pub fn new(bandwidth_range: (f64, f64), snr_range_db: (f64, f64)) -> Result<Self, NetError> {
        let (bmin, bmax) = bandwidth_range;
        let (smin, smax) = snr_range_db;
        if !(bmin.is_finite() && bmax.is_finite() && bmin > 0.0 && bmin <= bmax) {
            return Err(invalid(
                "bandwidth_range",
                format!("need 0 < min <= max, got [{bmin}, {bmax}]"),
            ));
        }
        if !(smin.is_finite() && smax.is_finite() && smin <= smax) {
            return Err(invalid(
                "snr_range_db",
                format!("need min <= max, got [{smin}, {smax}]"),
            ));
        }
        Ok(Self {
            bandwidth_range,
            snr_range_db,
        })
    }

    pub fn bandwidth_range(&self) -> (f64, f64) {
        self.bandwidth_range
    }
    pub fn snr_range_db(&self) -> (f64, f64) {
        self.snr_range_db
    }

    /// Channel at the midpoint of both ranges (SNR midpoint taken in dB).
    pub fn mean_channel(&self) -> ChannelState {
        let b = 0.5 * (self.bandwidth_range.0 + self.bandwidth_range.1);
        let db = 0.5 * (self.snr_range_db.0 + self.snr_range_db.1);
        ChannelState {
            bandwidth_hz: b,
            snr_linear: db_to_linear(db),
        }
    }
}

/// How a device's link is specified in a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelSpec {
    Fixed(ChannelState),
    Random(ChannelDistribution),
}

impl ChannelSpec {
    /// The channel used for deterministic (expected-channel) evaluation.
    pub fn expected(&self) -> ChannelState {
        match self {
            ChannelSpec::Fixed(c) => *c,
            ChannelSpec::Random(d) => d.mean_channel(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelState {
        match self {
            ChannelSpec::Fixed(c) => *c,
            ChannelSpec::Random(d) => sample_channel(d, rng),
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Shannon capacity in bit/s.
pub fn shannon_rate(ch: &ChannelState) -> f64 {
    ch.bandwidth_hz * (1.0 + ch.snr_linear).log2()
}

/// Seconds needed to push `payload_bytes` over a link of `rate_bps`.
pub fn tx_latency(payload_bytes: u64, rate_bps: f64) -> Result<f64, NetError> {
    if rate_bps.is_nan() || rate_bps <= 0.0 {
        return Err(NetError::ZeroRate);
    }
    Ok(payload_bytes as f64 * 8.0 / rate_bps)
}

pub fn tx_energy(tx_power_w: f64, latency_s: f64) -> f64 {
    tx_power_w * latency_s
}

/// Draws one channel state. Bandwidth is uniform on its range; SNR is uniform
/// in dB and then converted to linear scale.
pub fn sample_channel<R: Rng + ?Sized>(dist: &ChannelDistribution, rng: &mut R) -> ChannelState {
    let (bmin, bmax) = dist.bandwidth_range;
    let (smin, smax) = dist.snr_range_db;
    let bandwidth_hz = if bmin == bmax {
        bmin
    } else {
        rng.random_range(bmin..=bmax)
    };
    let db = if smin == smax {
        smin
    } else {
        rng.random_range(smin..=smax)
    };
    ChannelState {
        bandwidth_hz,
        snr_linear: db_to_linear(db),
    }
}
