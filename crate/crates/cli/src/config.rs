//! Run configuration: one TOML or JSON file, overridden key by key from the
//! command line, and written back out fully resolved next to the outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use parecon::beamform::{DasConfig, DmasConfig, MvConfig};
use parecon::forward::{ForwardConfig, ImpulseResponse};
use parecon::inverse::{CsConfig, KspaceConfig};
use parecon::metrics::SsimParams;
use parecon::model::{
    DEFAULT_CENTER_FREQUENCY, DEFAULT_ELEMENT_COUNT, DEFAULT_NX, DEFAULT_NZ, DEFAULT_PITCH,
    DEFAULT_SAMPLE_COUNT, DEFAULT_SAMPLING_RATE, DEFAULT_SOUND_SPEED, DEFAULT_X_RES, DEFAULT_Z_RES,
};
use parecon::phantom::AugmentSpec;
use parecon::{AcquisitionParams, ArrayGeometry, GridSpec};
use serde::{Deserialize, Serialize};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; all cores when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Output directory. Not echoed into the resolved config, which lives
    /// inside it, so reruns into different directories stay byte-identical.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    pub geometry: GeometrySection,
    pub acquisition: AcquisitionSection,
    pub grid: GridSection,
    pub forward: ForwardSection,
    pub simulate: SimulateSection,
    pub reconstruct: ReconstructSection,
    pub dataset: DatasetSection,
    pub metrics: MetricsSection,
    pub benchmark: BenchmarkSection,
    pub lut_cache: LutCacheSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: None,
            out: PathBuf::from("out"),
            geometry: Default::default(),
            acquisition: Default::default(),
            grid: Default::default(),
            forward: Default::default(),
            simulate: Default::default(),
            reconstruct: Default::default(),
            dataset: Default::default(),
            metrics: Default::default(),
            benchmark: Default::default(),
            lut_cache: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub element_count: usize,
    pub pitch: f64,
    pub center_frequency: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            element_count: DEFAULT_ELEMENT_COUNT,
            pitch: DEFAULT_PITCH,
            center_frequency: DEFAULT_CENTER_FREQUENCY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSection {
    pub sample_count: usize,
    pub sampling_rate: f64,
    pub sound_speed: f64,
    pub acquisition_delay: f64,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        Self {
            sample_count: DEFAULT_SAMPLE_COUNT,
            sampling_rate: DEFAULT_SAMPLING_RATE,
            sound_speed: DEFAULT_SOUND_SPEED,
            acquisition_delay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub nz: usize,
    pub nx: usize,
    pub z_res: f64,
    pub x_res: f64,
    /// Depth of row 0; one axial step when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_origin: Option<f64>,
    /// Lateral position of column 0; centred on the array when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_origin: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nz: DEFAULT_NZ,
            nx: DEFAULT_NX,
            z_res: DEFAULT_Z_RES,
            x_res: DEFAULT_X_RES,
            z_origin: None,
            x_origin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Impulse {
    /// Built-in Gaussian pulse at the centre frequency.
    Probe,
    Identity,
    /// Whitespace-separated taps at the acquisition sampling rate.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardSection {
    pub use_derivative: bool,
    pub use_directivity: bool,
    pub noise_std: f64,
    pub grueneisen_scale: f64,
    pub impulse: Impulse,
}

impl Default for ForwardSection {
    fn default() -> Self {
        let f = ForwardConfig::default();
        Self {
            use_derivative: f.use_derivative,
            use_directivity: f.use_directivity,
            noise_std: f.noise_std,
            grueneisen_scale: f.grueneisen_scale,
            impulse: Impulse::Probe,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Image set or paired dataset whose images are simulated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Das,
    Mv,
    Dmas,
    Ista,
    Kspace,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Das => "das",
            Method::Mv => "mv",
            Method::Dmas => "dmas",
            Method::Ista => "ista",
            Method::Kspace => "kspace",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructSection {
    pub method: Method,
    /// Paired dataset holding the raw frames.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Reference images; the input's own ground truths are used when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lut_cache: Option<PathBuf>,
    pub previews: bool,
    pub preview_db: f64,
    pub ssim: SsimParams,
    pub das: DasConfig,
    pub mv: MvConfig,
    pub dmas: DmasConfig,
    pub ista: CsConfig,
    pub kspace: KspaceConfig,
}

impl Default for ReconstructSection {
    fn default() -> Self {
        Self {
            method: Method::Das,
            input: None,
            truth: None,
            lut_cache: None,
            previews: true,
            preview_db: 40.0,
            ssim: SsimParams::default(),
            das: DasConfig::default(),
            mv: MvConfig::default(),
            dmas: DmasConfig::default(),
            ista: CsConfig::default(),
            kspace: KspaceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub count: usize,
    /// Noise standard deviation before the set is normalized to unit power.
    pub noise_std: f64,
    /// Directory of binary vessel masks; procedural vessels when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masks: Option<PathBuf>,
    pub previews: bool,
    pub preview_db: f64,
    pub augment: AugmentSpec,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            count: 10,
            noise_std: 1.0,
            masks: None,
            previews: false,
            preview_db: 40.0,
            augment: AugmentSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<PathBuf>,
    pub ssim: SsimParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub repetitions: usize,
    /// Untimed passes before the measured ones.
    pub warmup: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lut_cache: Option<PathBuf>,
    pub das: DasConfig,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            repetitions: 50,
            warmup: 2,
            lut_cache: None,
            das: DasConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LutCacheSection {
    /// Cache directory; `<out>/lut` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Paired dataset whose grid and acquisition the LUT is built for.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Record of `input` used for the golden tensor.
    pub record: usize,
    /// Golden-tensor directory to write.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emit_tensor: Option<PathBuf>,
}

/// A required path key: fails naming the key when it is unset or missing.
pub fn require_path(value: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let path = value
        .clone()
        .ok_or_else(|| ConfigError(format!("missing required key `{key}`")))?;
    if !path.exists() {
        return Err(ConfigError(format!("`{key}`: {} does not exist", path.display())).into());
    }
    Ok(path)
}

/// Configuration and validation failures (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Reads the config file (if any) into a TOML table.
fn load_table(path: Option<&Path>) -> Result<toml::Table> {
    let Some(path) = path else {
        return Ok(toml::Table::new());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("config {}: {e}", path.display())))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("config {}: {e}", path.display())))?;
        toml::Table::try_from(value)
            .map_err(|e| config_err(format!("config {}: {e}", path.display())))
    } else {
        text.parse::<toml::Table>()
            .map_err(|e| config_err(format!("config {}: {e}", path.display())))
    }
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets the dotted `key` in `table`, creating intermediate tables.
fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty());
    let Some(last) = last else {
        bail!(config_err(format!("empty override key `{key}`")));
    };
    let mut node = table;
    for p in parts {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("override `{key}`: `{p}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// One `key = value` override from a flag.
#[derive(Debug, Clone)]
pub struct Override {
    pub key: String,
    pub value: toml::Value,
}

impl Override {
    pub fn new(key: &str, value: impl Into<toml::Value>) -> Self {
        Self {
            key: key.to_string(),
            value: value.into(),
        }
    }

    pub fn path(key: &str, value: &Path) -> Self {
        Self::new(key, value.to_string_lossy().into_owned())
    }

    /// `key=value` as given to `--set`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| config_err(format!("--set expects key=value, got `{spec}`")))?;
        Ok(Self {
            key: key.trim().to_string(),
            value: parse_value(raw.trim()),
        })
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[Override]) -> Result<Self> {
        let mut table = load_table(path)?;
        for o in overrides {
            set_key(&mut table, &o.key, o.value.clone())?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(format!("config: {e}")))?;
        if cfg.jobs == Some(0) {
            bail!(config_err("`jobs` must be >= 1"));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing the resolved config")
    }

    /// Creates the output directory and writes the resolved config into it.
    pub fn write_resolved(&self) -> Result<()> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        let file = self.out.join(RESOLVED_CONFIG_FILE);
        fs::write(&file, self.to_toml()?).with_context(|| format!("writing {}", file.display()))
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        let g = &self.geometry;
        Ok(ArrayGeometry::new(
            g.element_count,
            g.pitch,
            g.center_frequency,
            self.acquisition.sound_speed,
        )?)
    }

    pub fn acquisition(&self) -> AcquisitionParams {
        let a = &self.acquisition;
        AcquisitionParams {
            sample_count: a.sample_count,
            sampling_rate: a.sampling_rate,
            sound_speed: a.sound_speed,
            acquisition_delay: a.acquisition_delay,
        }
    }

    pub fn grid(&self) -> GridSpec {
        let g = &self.grid;
        let base = GridSpec::centered(g.nz, g.nx, g.z_res, g.x_res);
        GridSpec {
            z_origin: g.z_origin.unwrap_or(base.z_origin),
            x_origin: g.x_origin.unwrap_or(base.x_origin),
            ..base
        }
    }

    pub fn forward_config(&self) -> ForwardConfig {
        let f = &self.forward;
        ForwardConfig {
            use_derivative: f.use_derivative,
            use_directivity: f.use_directivity,
            noise_std: f.noise_std,
            grueneisen_scale: f.grueneisen_scale,
        }
    }

    pub fn impulse(&self, sampling_rate: f64) -> Result<ImpulseResponse> {
        Ok(match &self.forward.impulse {
            Impulse::Probe => ImpulseResponse::default_probe(sampling_rate),
            Impulse::Identity => ImpulseResponse::identity(sampling_rate),
            Impulse::File(path) => {
                if !path.exists() {
                    bail!(config_err(format!(
                        "`forward.impulse.file`: {} does not exist",
                        path.display()
                    )));
                }
                ImpulseResponse::load(path, sampling_rate)?
            }
        })
    }
}
