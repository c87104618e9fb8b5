//! Scenario config schema. Every section is optional; an empty file describes
//! the default two-device scenario. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use splitcvl::netmodel::{db_to_linear, ChannelDistribution, ChannelSpec, ChannelState, DeviceKind, DeviceProfile};
use splitcvl::nnprofile::{build_resnet50_usam_profile, ModelProfile, ResNetOptions};
use splitcvl::privmetrics::{build_conf_table, load_corpus, SsimOptions, DEFAULT_HISTOGRAM_EPSILON};
use splitcvl::retrieval::{Fusion, ViewNoise};
use splitcvl::rlopt::{AgentKind, EnvConfig, Hyper};
use splitcvl::trico::{ConfEntry, ConfidentialityTable, Scenario, TriCoWeights};

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub devices: Vec<DeviceConfig>,
    pub model: ModelConfig,
    pub confidentiality: ConfConfig,
    pub weights: WeightsConfig,
    pub optimizer: OptimizerConfig,
    pub retrieval: RetrievalConfig,
    pub privacy: PrivacyConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub id: Option<String>,
    pub kind: DeviceKind,
    /// Omitted constants take the kind's defaults.
    pub peak_flops: Option<f64>,
    pub compute_power_w: Option<f64>,
    pub tx_power_w: Option<f64>,
    pub battery_j: Option<f64>,
    pub channel: ChannelConfig,
}

/// Either a fixed link (`bandwidth_hz`, `snr_db`) or a distribution
/// (`bandwidth_range_hz`, `snr_range_db`).
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub bandwidth_hz: Option<f64>,
    pub snr_db: Option<f64>,
    pub bandwidth_range_hz: Option<[f64; 2]>,
    pub snr_range_db: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Only `resnet50_usam` is built in.
    pub builtin: Option<String>,
    pub profile_file: Option<PathBuf>,
    pub input_h: usize,
    pub input_w: usize,
    pub usam_flops_fraction: f64,
    pub bytes_per_element: u8,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let r = ResNetOptions::default();
        Self {
            builtin: None,
            profile_file: None,
            input_h: r.input_h,
            input_w: r.input_w,
            usam_flops_fraction: r.usam_flops_fraction,
            bytes_per_element: r.bytes_per_element,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfEntryConfig {
    pub cut: String,
    pub kl_open: f64,
    pub kl_closed: f64,
    pub ssim_open: Option<f64>,
    pub ssim_closed: Option<f64>,
}

/// At most one source; none means the monotone default table.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfConfig {
    pub entries: Option<Vec<ConfEntryConfig>>,
    pub table_file: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    pub w_comm: Option<f64>,
    pub w_comp: Option<f64>,
    pub w_conf: Option<f64>,
    pub alpha_open: Option<f64>,
    pub lambda_latency: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub agent: String,
    pub steps: usize,
    pub seed: u64,
    /// Overrides `hyper.window` when set.
    pub window: Option<usize>,
    pub env: EnvConfig,
    pub hyper: Hyper,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            agent: AgentKind::QLearning.as_str().to_string(),
            steps: 3000,
            seed: 0,
            window: None,
            env: EnvConfig::default(),
            hyper: Hyper::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub satellite: f64,
    pub uav: f64,
    pub ground: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            satellite: 1.0,
            uav: 4.0,
            ground: 6.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub locations: usize,
    pub dim: usize,
    pub noise: NoiseConfig,
    pub images_per_view: usize,
    pub max_uav: usize,
    pub max_ground: usize,
    /// Seeds `seed..seed + seeds` are averaged.
    pub seeds: usize,
    pub seed: u64,
    pub fusion: String,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            locations: 200,
            dim: 64,
            noise: NoiseConfig::default(),
            images_per_view: 4,
            max_uav: 4,
            max_ground: 4,
            seeds: 10,
            seed: 0,
            fusion: "mean".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrivacyConfig {
    pub histogram_epsilon: f64,
    /// `uniform` (8x8 tiles) or `gaussian` (11x11, sigma 1.5).
    pub ssim_window: String,
    /// Image side and triples per cut for the built-in fixture corpora.
    pub fixture_size: usize,
    pub fixture_triples: usize,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            histogram_epsilon: DEFAULT_HISTOGRAM_EPSILON,
            ssim_window: "uniform".into(),
            fixture_size: 64,
            fixture_triples: 4,
        }
    }
}

impl PrivacyConfig {
    pub fn ssim_options(&self) -> Result<SsimOptions, CliError> {
        match self.ssim_window.as_str() {
            "uniform" => Ok(SsimOptions::default()),
            "gaussian" => Ok(SsimOptions::gaussian()),
            other => Err(CliError::Config(format!(
                "privacy.ssim_window: expected 'uniform' or 'gaussian', got '{other}'"
            ))),
        }
    }
}

impl RetrievalConfig {
    pub fn view_noise(&self) -> ViewNoise {
        ViewNoise {
            satellite: self.noise.satellite,
            uav: self.noise.uav,
            ground: self.noise.ground,
        }
    }

    pub fn fusion(&self) -> Result<Fusion, CliError> {
        Fusion::parse(&self.fusion).ok_or_else(|| {
            CliError::Config(format!(
                "retrieval.fusion: expected 'mean' or 'max_score', got '{}'",
                self.fusion
            ))
        })
    }
}

impl OptimizerConfig {
    pub fn agent(&self) -> Result<AgentKind, CliError> {
        AgentKind::parse(&self.agent).ok_or_else(|| {
            let known: Vec<&str> = AgentKind::ALL.iter().map(|a| a.as_str()).collect();
            CliError::Config(format!(
                "optimizer.agent: unknown agent '{}' (expected one of {})",
                self.agent,
                known.join(", ")
            ))
        })
    }

    pub fn hyper(&self) -> Hyper {
        let mut h = self.hyper.clone();
        if let Some(w) = self.window {
            h.window = w;
        }
        h
    }
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self {
                config: ScenarioConfig::default(),
                base_dir: PathBuf::from("."),
            }),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                let config = parse(&text).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })?;
                let base_dir = p.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
                Ok(Self { config, base_dir })
            }
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn profile(&self) -> Result<ModelProfile, CliError> {
        let m = &self.config.model;
        match (&m.builtin, &m.profile_file) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "model: set either 'builtin' or 'profile_file', not both".into(),
            )),
            (_, Some(file)) => {
                let path = self.resolve(file);
                let f = fs::File::open(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                ModelProfile::read_csv(std::io::BufReader::new(f))
                    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
            }
            (builtin, None) => {
                if let Some(b) = builtin {
                    if b != "resnet50_usam" {
                        return Err(CliError::Config(format!(
                            "model.builtin: unknown model '{b}' (expected 'resnet50_usam')"
                        )));
                    }
                }
                build_resnet50_usam_profile(&ResNetOptions {
                    input_h: m.input_h,
                    input_w: m.input_w,
                    usam_flops_fraction: m.usam_flops_fraction,
                    bytes_per_element: m.bytes_per_element,
                })
                .map_err(|e| CliError::Config(format!("model: {e}")))
            }
        }
    }

    fn conf_table(&self, profile: &ModelProfile) -> Result<ConfidentialityTable, CliError> {
        let c = &self.config.confidentiality;
        let sources = [c.entries.is_some(), c.table_file.is_some(), c.corpus.is_some()];
        if sources.iter().filter(|&&s| s).count() > 1 {
            return Err(CliError::Config(
                "confidentiality: set at most one of 'entries', 'table_file', 'corpus'".into(),
            ));
        }
        if let Some(entries) = &c.entries {
            let entries = entries
                .iter()
                .map(|e| ConfEntry {
                    ssim_open: e.ssim_open,
                    ssim_closed: e.ssim_closed,
                    ..ConfEntry::new(e.cut.clone(), e.kl_open, e.kl_closed)
                })
                .collect();
            return ConfidentialityTable::new(entries).map_err(|e| CliError::Config(format!("confidentiality: {e}")));
        }
        if let Some(file) = &c.table_file {
            let path = self.resolve(file);
            let f = fs::File::open(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            return ConfidentialityTable::read_csv(std::io::BufReader::new(f))
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())));
        }
        if let Some(dir) = &c.corpus {
            let path = self.resolve(dir);
            let corpus = load_corpus(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let p = &self.config.privacy;
            return build_conf_table(&corpus, p.histogram_epsilon, &p.ssim_options()?)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())));
        }
        Ok(ConfidentialityTable::default_for(profile))
    }

    fn weights(&self) -> Result<TriCoWeights, CliError> {
        let d = TriCoWeights::default();
        let w = &self.config.weights;
        TriCoWeights::new(
            w.w_comm.unwrap_or(d.w_comm()),
            w.w_comp.unwrap_or(d.w_comp()),
            w.w_conf.unwrap_or(d.w_conf()),
            w.alpha_open.unwrap_or(d.alpha_open()),
            w.lambda_latency.unwrap_or(d.lambda_latency()),
        )
        .map_err(|e| CliError::Config(format!("weights: {e}")))
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let profile = self.profile()?;
        let conf = self.conf_table(&profile)?;
        let weights = self.weights()?;
        let (devices, channels) = if self.config.devices.is_empty() {
            let d = Scenario::default_two_device();
            (d.devices().to_vec(), d.channels().to_vec())
        } else {
            let mut devices = Vec::new();
            let mut channels = Vec::new();
            for (i, d) in self.config.devices.iter().enumerate() {
                let (dev, ch) = device(i, d)?;
                devices.push(dev);
                channels.push(ch);
            }
            (devices, channels)
        };
        Scenario::new(devices, channels, profile, conf, weights).map_err(|e| CliError::Config(format!("scenario: {e}")))
    }
}

fn device(i: usize, d: &DeviceConfig) -> Result<(DeviceProfile, ChannelSpec), CliError> {
    let ctx = |m: String| CliError::Config(format!("devices[{i}]: {m}"));
    let id = d.id.clone().unwrap_or_else(|| format!("{}{i}", d.kind.as_str()));
    let base = match d.kind {
        DeviceKind::Uav => DeviceProfile::uav(id.clone()),
        DeviceKind::Vehicle => DeviceProfile::vehicle(id.clone()),
    };
    let dev = DeviceProfile::new(
        id,
        d.kind,
        d.peak_flops.unwrap_or(base.peak_flops()),
        d.compute_power_w.unwrap_or(base.compute_power_w()),
        d.tx_power_w.unwrap_or(base.tx_power_w()),
        d.battery_j,
    )
    .map_err(|e| ctx(e.to_string()))?;
    let c = &d.channel;
    let ch = match (c.bandwidth_hz, c.snr_db, c.bandwidth_range_hz, c.snr_range_db) {
        (Some(b), Some(s), None, None) => {
            ChannelSpec::Fixed(ChannelState::new(b, db_to_linear(s)).map_err(|e| ctx(e.to_string()))?)
        }
        (None, None, Some(b), Some(s)) => ChannelSpec::Random(
            ChannelDistribution::new((b[0], b[1]), (s[0], s[1])).map_err(|e| ctx(e.to_string()))?,
        ),
        _ => {
            return Err(ctx(
                "channel: give either bandwidth_hz and snr_db, or bandwidth_range_hz and snr_range_db".into(),
            ))
        }
    };
    Ok((dev, ch))
}

pub fn parse(text: &str) -> Result<ScenarioConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
}
