//! Communication, computation and confidentiality costs of a partition
//! decision, their normalization, and the weighted effect function.
//!
//! Per device, every partition candidate is costed under the device's channel.
//! The communication and computation terms are min-max scaled over the
//! candidate set; the confidentiality term is already dimensionless. The
//! effect of a cut is the weighted sum of the three normalized terms, and the
//! effect of a multi-device decision is the mean of the per-device effects.

use std::fmt::Write as _;
use std::io::BufRead;

use thiserror::Error;

use crate::netmodel::{
    db_to_linear, shannon_rate, tx_energy, tx_latency, ChannelSpec, ChannelState, DeviceProfile, NetError,
};
use crate::nnprofile::{build_resnet50_usam_profile, ModelProfile, PartitionPoint, ResNetOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriCoError {
    #[error("confidentiality table has no entry for candidate {0}")]
    MissingEntry(usize),
    #[error("device '{0}' has an unusable link (zero rate)")]
    Infeasible(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid confidentiality table: {0}")]
    InvalidTable(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Net(#[from] NetError),
}

/// KL divergences (nats) of open-box and closed-box reconstructions per cut.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfEntry {
    pub name: String,
    pub kl_open: f64,
    pub kl_closed: f64,
    pub ssim_open: Option<f64>,
    pub ssim_closed: Option<f64>,
}

impl ConfEntry {
    pub fn new(name: impl Into<String>, kl_open: f64, kl_closed: f64) -> Self {
        Self {
            name: name.into(),
            kl_open,
            kl_closed,
            ssim_open: None,
            ssim_closed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidentialityTable {
    entries: Vec<ConfEntry>,
    kl_max: f64,
}

pub const COST_TABLE_HEADER: &str =
    "device,cut_name,comm_latency_s,comm_energy_j,comp_energy_j,conf_cost,n_comm,n_comp,n_conf,effect";
pub const CONF_TABLE_HEADER: &str = "cut,kl_open,kl_closed,ssim_open,ssim_closed";

impl ConfidentialityTable {
    pub fn new(entries: Vec<ConfEntry>) -> Result<Self, TriCoError> {
        if entries.is_empty() {
            return Err(TriCoError::InvalidTable("table is empty".into()));
        }
        for e in &entries {
            if e.name.contains([',', '\n', '\r']) {
                return Err(TriCoError::InvalidTable(format!(
                    "cut name '{}' contains a separator",
                    e.name
                )));
            }
            for (label, v) in [("kl_open", e.kl_open), ("kl_closed", e.kl_closed)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(TriCoError::InvalidTable(format!(
                        "{label} for '{}' must be finite and >= 0, got {v}",
                        e.name
                    )));
                }
            }
            for (label, v) in [("ssim_open", e.ssim_open), ("ssim_closed", e.ssim_closed)] {
                if let Some(v) = v {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(TriCoError::InvalidTable(format!(
                            "{label} for '{}' must lie in [0, 1], got {v}",
                            e.name
                        )));
                    }
                }
            }
        }
        let kl_max = entries
            .iter()
            .flat_map(|e| [e.kl_open, e.kl_closed])
            .fold(0.0, f64::max);
        Ok(Self { entries, kl_max })
    }

    /// Illustrative table whose KL doubles with every deeper cut, starting at
    /// 0.5 nats (0.5, 1, 2, 4, 8 for five cuts).
    pub fn default_monotone(names: &[&str]) -> Self {
        let entries = names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let kl = 0.5 * 2f64.powi(i as i32);
                ConfEntry::new(*n, kl, kl)
            })
            .collect();
        Self::new(entries).expect("monotone table is valid")
    }

    /// [`Self::default_monotone`] named after the profile's cuts.
    pub fn default_for(profile: &ModelProfile) -> Self {
        let names: Vec<&str> = profile.cuts().map(|c| profile.cut_name(c)).collect();
        Self::default_monotone(&names)
    }

    pub fn entries(&self) -> &[ConfEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn kl_max(&self) -> f64 {
        self.kl_max
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from(CONF_TABLE_HEADER);
        s.push('\n');
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.name,
                e.kl_open,
                e.kl_closed,
                opt(e.ssim_open),
                opt(e.ssim_closed)
            );
        }
        s
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, TriCoError> {
        let io = |line: usize, e: std::io::Error| TriCoError::Parse {
            line,
            reason: e.to_string(),
        };
        let mut lines = input.lines().enumerate();
        match lines.next() {
            Some((_, Ok(h))) if h.trim_end() == CONF_TABLE_HEADER => {}
            Some((_, Ok(h))) => {
                return Err(TriCoError::Parse {
                    line: 1,
                    reason: format!("expected header '{CONF_TABLE_HEADER}', found '{h}'"),
                })
            }
            Some((_, Err(e))) => return Err(io(1, e)),
            None => {
                return Err(TriCoError::Parse {
                    line: 1,
                    reason: "empty table".into(),
                })
            }
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.map_err(|e| io(lineno, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(TriCoError::Parse {
                    line: lineno,
                    reason: format!("expected 5 fields, found {}", f.len()),
                });
            }
            let num = |s: &str, what: &str| {
                s.parse::<f64>().map_err(|_| TriCoError::Parse {
                    line: lineno,
                    reason: format!("invalid {what} '{s}'"),
                })
            };
            let opt = |s: &str, what: &str| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    num(s, what).map(Some)
                }
            };
            entries.push(ConfEntry {
                name: f[0].to_string(),
                kl_open: num(f[1], "kl_open")?,
                kl_closed: num(f[2], "kl_closed")?,
                ssim_open: opt(f[3], "ssim_open")?,
                ssim_closed: opt(f[4], "ssim_closed")?,
            });
        }
        Self::new(entries)
    }
}

/// Weights of the effect function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriCoWeights {
    w_comm: f64,
    w_comp: f64,
    w_conf: f64,
    alpha_open: f64,
    lambda_latency: f64,
}

impl Default for TriCoWeights {
    fn default() -> Self {
        Self {
            w_comm: 1.0 / 3.0,
            w_comp: 1.0 / 3.0,
            w_conf: 1.0 / 3.0,
            alpha_open: 0.5,
            lambda_latency: 0.5,
        }
    }
}

impl TriCoWeights {
    /// Cost weights must be non-negative and sum to 1 (within 1e-9).
    pub fn new(
        w_comm: f64,
        w_comp: f64,
        w_conf: f64,
        alpha_open: f64,
        lambda_latency: f64,
    ) -> Result<Self, TriCoError> {
        for (label, v) in [("w_comm", w_comm), ("w_comp", w_comp), ("w_conf", w_conf)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TriCoError::InvalidWeights(format!("{label} must be >= 0, got {v}")));
            }
        }
        let sum = w_comm + w_comp + w_conf;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TriCoError::InvalidWeights(format!(
                "w_comm + w_comp + w_conf must equal 1, got {sum}"
            )));
        }
        for (label, v) in [("alpha_open", alpha_open), ("lambda_latency", lambda_latency)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(TriCoError::InvalidWeights(format!(
                    "{label} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(Self {
            w_comm,
            w_comp,
            w_conf,
            alpha_open,
            lambda_latency,
        })
    }

    pub fn w_comm(&self) -> f64 {
        self.w_comm
    }
    pub fn w_comp(&self) -> f64 {
        self.w_comp
    }
    pub fn w_conf(&self) -> f64 {
        self.w_conf
    }
    pub fn alpha_open(&self) -> f64 {
        self.alpha_open
    }
    pub fn lambda_latency(&self) -> f64 {
        self.lambda_latency
    }
}

/// Unnormalized costs of one cut on one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawCost {
    pub comm_latency_s: f64,
    pub comm_energy_j: f64,
    pub comp_energy_j: f64,
    pub conf_cost: f64,
}

/// Normalized terms, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedTerms {
    pub comm: f64,
    pub comp: f64,
    pub conf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriCoBreakdown {
    pub cut: PartitionPoint,
    pub raw: RawCost,
    pub normalized: NormalizedTerms,
    pub effect: f64,
}

pub fn comm_cost(
    dev: &DeviceProfile,
    ch: &ChannelState,
    profile: &ModelProfile,
    cut: PartitionPoint,
) -> Result<(f64, f64), NetError> {
    let latency = tx_latency(profile.intermediate_bytes(cut), shannon_rate(ch))?;
    Ok((latency, tx_energy(dev.tx_power_w(), latency)))
}

/// Energy spent running the device-side layers at peak throughput.
pub fn comp_cost(dev: &DeviceProfile, profile: &ModelProfile, cut: PartitionPoint) -> f64 {
    profile.device_flops(cut) as f64 / dev.peak_flops() * dev.compute_power_w()
}

/// `1 - (alpha * kl_open + (1 - alpha) * kl_closed) / kl_max`, clamped to [0, 1].
/// A table whose KL values are all zero offers no confidentiality anywhere and
/// costs 1 at every cut.
pub fn conf_cost(
    table: &ConfidentialityTable,
    cut: PartitionPoint,
    alpha_open: f64,
) -> Result<f64, TriCoError> {
    let e = table
        .entries
        .get(cut.candidate_index())
        .ok_or(TriCoError::MissingEntry(cut.candidate_index()))?;
    if table.kl_max <= 0.0 {
        return Ok(1.0);
    }
    let ratio = (alpha_open * e.kl_open + (1.0 - alpha_open) * e.kl_closed) / table.kl_max;
    Ok((1.0 - ratio).clamp(0.0, 1.0))
}

fn min_max(values: impl Iterator<Item = f64> + Clone) -> impl Fn(f64) -> f64 {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    move |x| {
        if hi > lo {
            ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Min-max scales the communication and computation terms over one device's
/// candidate set. A term that is constant across the set normalizes to 0.
pub fn normalize_costs(raw: &[RawCost], lambda_latency: f64) -> Vec<NormalizedTerms> {
    let lat = min_max(raw.iter().map(|r| r.comm_latency_s));
    let en = min_max(raw.iter().map(|r| r.comm_energy_j));
    let comp = min_max(raw.iter().map(|r| r.comp_energy_j));
    raw.iter()
        .map(|r| NormalizedTerms {
            comm: lambda_latency * lat(r.comm_latency_s)
                + (1.0 - lambda_latency) * en(r.comm_energy_j),
            comp: comp(r.comp_energy_j),
            conf: r.conf_cost,
        })
        .collect()
}

pub fn effect(weights: &TriCoWeights, terms: &NormalizedTerms) -> f64 {
    weights.w_comm * terms.comm + weights.w_comp * terms.comp + weights.w_conf * terms.conf
}

/// Per-device cut assignment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartitionDecision(pub Vec<PartitionPoint>);

impl PartitionDecision {
    pub fn cuts(&self) -> &[PartitionPoint] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    devices: Vec<DeviceProfile>,
    channels: Vec<ChannelSpec>,
    profile: ModelProfile,
    conf_table: ConfidentialityTable,
    weights: TriCoWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub decision: PartitionDecision,
    pub effect: f64,
    pub evaluated: usize,
}

impl Scenario {
    pub fn new(
        devices: Vec<DeviceProfile>,
        channels: Vec<ChannelSpec>,
        profile: ModelProfile,
        conf_table: ConfidentialityTable,
        weights: TriCoWeights,
    ) -> Result<Self, TriCoError> {
        if devices.is_empty() {
            return Err(TriCoError::InvalidScenario("at least one device is required".into()));
        }
        if channels.len() != devices.len() {
            return Err(TriCoError::InvalidScenario(format!(
                "{} devices but {} channels",
                devices.len(),
                channels.len()
            )));
        }
        if conf_table.len() != profile.num_candidates() {
            return Err(TriCoError::InvalidScenario(format!(
                "confidentiality table has {} rows but the profile has {} candidates",
                conf_table.len(),
                profile.num_candidates()
            )));
        }
        Ok(Self {
            devices,
            channels,
            profile,
            conf_table,
            weights,
        })
    }

    /// One UAV and one vehicle with default constants on fixed links
    /// (10 MHz at 10 dB, 20 MHz at 15 dB), the built ResNet-50 profile at
    /// 224x224, the monotone confidentiality table and equal weights.
    pub fn default_two_device() -> Self {
        let profile = build_resnet50_usam_profile(&ResNetOptions::default()).expect("default profile");
        let conf = ConfidentialityTable::default_for(&profile);
        let link = |b: f64, db: f64| ChannelSpec::Fixed(ChannelState::new(b, db_to_linear(db)).expect("valid link"));
        Self::new(
            vec![DeviceProfile::uav("uav0"), DeviceProfile::vehicle("veh0")],
            vec![link(10e6, 10.0), link(20e6, 15.0)],
            profile,
            conf,
            TriCoWeights::default(),
        )
        .expect("default scenario is consistent")
    }

    pub fn devices(&self) -> &[DeviceProfile] {
        &self.devices
    }
    pub fn channels(&self) -> &[ChannelSpec] {
        &self.channels
    }
    pub fn profile(&self) -> &ModelProfile {
        &self.profile
    }
    pub fn conf_table(&self) -> &ConfidentialityTable {
        &self.conf_table
    }
    pub fn weights(&self) -> &TriCoWeights {
        &self.weights
    }
    pub fn num_candidates(&self) -> usize {
        self.profile.num_candidates()
    }

    /// Mean channel of every device's distribution (fixed channels as is).
    pub fn expected_channels(&self) -> Vec<ChannelState> {
        self.channels.iter().map(ChannelSpec::expected).collect()
    }

    /// Full breakdown of every candidate cut for device `dev` under `ch`.
    pub fn device_table(
        &self,
        dev: usize,
        ch: &ChannelState,
    ) -> Result<Vec<TriCoBreakdown>, TriCoError> {
        let device = &self.devices[dev];
        let mut raw = Vec::with_capacity(self.num_candidates());
        for cut in self.profile.cuts() {
            let (lat, en) = comm_cost(device, ch, &self.profile, cut).map_err(|e| match e {
                NetError::ZeroRate => TriCoError::Infeasible(device.id().to_string()),
                other => other.into(),
            })?;
            raw.push(RawCost {
                comm_latency_s: lat,
                comm_energy_j: en,
                comp_energy_j: comp_cost(device, &self.profile, cut),
                conf_cost: conf_cost(&self.conf_table, cut, self.weights.alpha_open)?,
            });
        }
        let norm = normalize_costs(&raw, self.weights.lambda_latency);
        Ok(self
            .profile
            .cuts()
            .zip(raw)
            .zip(norm)
            .map(|((cut, raw), normalized)| TriCoBreakdown {
                cut,
                raw,
                normalized,
                effect: effect(&self.weights, &normalized),
            })
            .collect())
    }

    /// Breakdown tables for all devices under the given channels.
    pub fn tables(&self, channels: &[ChannelState]) -> Result<Vec<Vec<TriCoBreakdown>>, TriCoError> {
        assert_eq!(channels.len(), self.devices.len());
        (0..self.devices.len())
            .map(|d| self.device_table(d, &channels[d]))
            .collect()
    }

    /// Cost table for every device and candidate, in [`COST_TABLE_HEADER`] order.
    pub fn cost_table_csv(&self, channels: &[ChannelState]) -> Result<String, TriCoError> {
        let tables = self.tables(channels)?;
        let mut out = String::from(COST_TABLE_HEADER);
        out.push('\n');
        for (dev, table) in self.devices.iter().zip(&tables) {
            for b in table {
                let r = &b.raw;
                let n = &b.normalized;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    dev.id(),
                    self.profile.cut_name(b.cut),
                    r.comm_latency_s,
                    r.comm_energy_j,
                    r.comp_energy_j,
                    r.conf_cost,
                    n.comm,
                    n.comp,
                    n.conf,
                    b.effect
                );
            }
        }
        Ok(out)
    }

    pub fn evaluate(
        &self,
        decision: &PartitionDecision,
        channels: &[ChannelState],
    ) -> Result<f64, TriCoError> {
        let tables = self.tables(channels)?;
        Ok(decision_effect(&tables, decision))
    }

    /// Exhaustive search over all `candidates^devices` decisions. Ties go to
    /// the lexicographically greatest decision, i.e. the deepest cut for the
    /// first device, then the next device, and so on.
    pub fn brute_force_optimal(&self, channels: &[ChannelState]) -> Result<OracleResult, TriCoError> {
        let tables = self.tables(channels)?;
        let n = self.num_candidates();
        let d = self.devices.len();
        let mut idx = vec![0usize; d];
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut evaluated = 0;
        loop {
            let eff = idx
                .iter()
                .zip(&tables)
                .map(|(&c, t)| t[c].effect)
                .sum::<f64>()
                / d as f64;
            evaluated += 1;
            // ascending lexicographic enumeration: `<=` keeps the greatest tie
            if best.as_ref().is_none_or(|(b, _)| eff <= *b) {
                best = Some((eff, idx.clone()));
            }
            // odometer, last device fastest
            let mut pos = d;
            loop {
                if pos == 0 {
                    let (effect, cuts) = best.expect("at least one decision");
                    return Ok(OracleResult {
                        decision: PartitionDecision(cuts.into_iter().map(PartitionPoint).collect()),
                        effect,
                        evaluated,
                    });
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < n {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }
}

/// Mean per-device effect of `decision` given precomputed device tables.
pub fn decision_effect(tables: &[Vec<TriCoBreakdown>], decision: &PartitionDecision) -> f64 {
    assert_eq!(tables.len(), decision.0.len());
    decision
        .0
        .iter()
        .zip(tables)
        .map(|(c, t)| t[c.candidate_index()].effect)
        .sum::<f64>()
        / tables.len() as f64
}
