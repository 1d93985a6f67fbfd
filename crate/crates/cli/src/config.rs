use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use vdf_gmm::codec::{decode_particles, CodecRegistry};
use vdf_gmm::histogram::default_ranges;
use vdf_gmm::synthdata::{generate_with, preset_with_dimension, PRESET_NAMES};
use vdf_gmm::{AxisRange, Execution, FitConfig, ParticleSet, Plane, ScenarioSpec};

use crate::error::CliError;
use crate::io::read_file;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

/// Settings of the warm-start time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeseriesConfig {
    /// Number of fits.
    pub cycles: usize,
    /// Synthetic cycles between consecutive fits.
    pub da_interval: usize,
    /// Shift of the drifting component's first velocity axis per synthetic
    /// cycle.
    pub drift: f64,
    /// Index of the drifting scenario component; the last one by default.
    pub drift_component: Option<usize>,
    pub warm_start: bool,
}

impl Default for TimeseriesConfig {
    fn default() -> Self {
        Self {
            cycles: 5,
            da_interval: 1,
            drift: 0.05,
            drift_component: None,
            warm_start: true,
        }
    }
}

/// Everything a pipeline run needs. Unknown keys in a config file are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Preset name or path to a scenario JSON file.
    pub scenario: String,
    /// Particle file (`.vdfp`) used instead of the scenario.
    pub input: Option<PathBuf>,
    /// Overrides the scenario's particle count.
    pub particles: Option<usize>,
    /// Overrides the scenario's seed. Also seeds the subdomain split.
    pub seed: Option<u64>,
    /// Velocity dimension of preset scenarios.
    pub dimension: usize,
    pub bins: usize,
    /// Same range on both histogram axes; per-plane defaults otherwise.
    pub vrange: Option<[f64; 2]>,
    /// `uv`, `vw`, `uw` or `all`.
    pub plane: String,
    pub drop_empty: bool,
    pub subdomains: usize,
    /// Resolution of the direct particle binning used as the reference
    /// distribution for JSD-vs-original.
    pub reference_bins: usize,
    pub fit: FitConfig,
    pub execution: Execution,
    pub out: PathBuf,
    pub format: ReportFormat,
    /// Timed repetitions in `bench`; medians are reported.
    pub repeat: usize,
    pub baselines: Vec<String>,
    pub timeseries: TimeseriesConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scenario: "drifting-beam".into(),
            input: None,
            particles: None,
            seed: None,
            dimension: 2,
            bins: 200,
            vrange: None,
            plane: "uv".into(),
            drop_empty: true,
            subdomains: 1,
            reference_bins: 500,
            fit: FitConfig::default(),
            execution: Execution::default(),
            out: PathBuf::from("out"),
            format: ReportFormat::Json,
            repeat: 5,
            baselines: vec!["raw".into(), "deflate".into(), "shuffle-deflate".into()],
            timeseries: TimeseriesConfig::default(),
        }
    }
}

pub const DEFAULT_PARTICLES: usize = 100_000;

/// Recursively overlays `over` onto `base`; objects merge key by key, any
/// other value replaces.
pub fn merge_json(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge_json(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

impl PipelineConfig {
    /// Applies a JSON config file on top of `self` (which already holds
    /// defaults and flags).
    pub fn with_file(self, path: &Path) -> Result<Self, CliError> {
        let text = String::from_utf8(read_file(path)?).map_err(|e| CliError::Config {
            path: path.into(),
            message: e.to_string(),
        })?;
        self.with_json(&text).map_err(|message| CliError::Config {
            path: path.into(),
            message,
        })
    }

    pub fn with_json(self, text: &str) -> Result<Self, String> {
        let over: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if !over.is_object() {
            return Err("expected a JSON object".into());
        }
        let mut base = serde_json::to_value(&self).map_err(|e| e.to_string())?;
        merge_json(&mut base, over);
        let mut merged: Self = serde_json::from_value(base).map_err(|e| e.to_string())?;
        // Runtime-only fit fields are not part of the JSON form.
        merged.fit.execution = merged.execution;
        merged.fit.warm_start = self.fit.warm_start;
        Ok(merged)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.bins == 0 {
            return bad("bins must be positive".into());
        }
        if self.reference_bins == 0 {
            return bad("reference_bins must be positive".into());
        }
        if self.subdomains == 0 {
            return bad("subdomains must be positive".into());
        }
        if self.repeat == 0 {
            return bad("repeat must be positive".into());
        }
        if let Some([lo, hi]) = self.vrange {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad(format!("vrange {lo}:{hi} must satisfy MIN < MAX"));
            }
        }
        if self.timeseries.cycles == 0 || self.timeseries.da_interval == 0 {
            return bad("timeseries cycles and da_interval must be positive".into());
        }
        if !self.timeseries.drift.is_finite() {
            return bad("timeseries drift must be finite".into());
        }
        parse_planes(&self.plane, 3)?;
        self.fit.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let registry = CodecRegistry::with_builtins();
        for b in &self.baselines {
            registry.get(b).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(())
    }

    pub fn planes(&self, dimension: usize) -> Result<Vec<Plane>, CliError> {
        parse_planes(&self.plane, dimension)
    }

    /// Histogram ranges for `plane`: the configured range on both axes, or
    /// the default thermal-speed window.
    pub fn ranges(&self, particles: &ParticleSet, plane: Plane) -> Result<[AxisRange; 2], CliError> {
        Ok(match self.vrange {
            Some([lo, hi]) => {
                let r = AxisRange::new(lo, hi)?;
                [r, r]
            }
            None => default_ranges(particles, plane)?,
        })
    }

    /// Fit settings for one run, with the species temperature as the
    /// cold-start variance unless one is configured.
    pub fn fit_config(&self, temperature: Vec<f64>) -> FitConfig {
        FitConfig {
            initial_variance: self.fit.initial_variance.clone().or(Some(temperature)),
            execution: self.execution,
            ..self.fit.clone()
        }
    }

    /// The scenario to sample, with particle-count and seed overrides.
    pub fn scenario_spec(&self) -> Result<ScenarioSpec, CliError> {
        let mut spec = if PRESET_NAMES.contains(&self.scenario.as_str()) {
            preset_with_dimension(
                &self.scenario,
                DEFAULT_PARTICLES,
                0,
                self.dimension,
            )?
        } else if self.scenario.ends_with(".json") || self.scenario.contains(std::path::MAIN_SEPARATOR) {
            let path = Path::new(&self.scenario);
            let bytes = read_file(path)?;
            serde_json::from_slice(&bytes).map_err(|e| CliError::Config {
                path: path.into(),
                message: e.to_string(),
            })?
        } else {
            return Err(CliError::Usage(format!(
                "unknown scenario '{}'; presets: {}, or a path to a scenario .json file",
                self.scenario,
                PRESET_NAMES.join(", ")
            )));
        };
        if let Some(n) = self.particles {
            spec.particle_count = n;
        }
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Reads the input particle file, or samples the scenario.
    pub fn load_particles(&self) -> Result<ParticleSet, CliError> {
        match &self.input {
            Some(path) => Ok(decode_particles(&read_file(path)?)?),
            None => Ok(generate_with(&self.scenario_spec()?, self.execution)?),
        }
    }

    /// Seed of the data: the scenario's, or the override.
    pub fn data_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

pub fn parse_planes(s: &str, dimension: usize) -> Result<Vec<Plane>, CliError> {
    let planes = if s == "all" {
        if dimension == 2 {
            vec![Plane::Uv]
        } else {
            vec![Plane::Uv, Plane::Vw, Plane::Uw]
        }
    } else {
        vec![s
            .parse::<Plane>()
            .map_err(|_| CliError::Usage(format!("plane must be uv, vw, uw or all, got '{s}'")))?]
    };
    for p in &planes {
        let (a, b) = p.axes();
        if a.max(b) >= dimension {
            return Err(CliError::Usage(format!("plane {p} needs 3 velocity components, data has {dimension}")));
        }
    }
    Ok(planes)
}

/// Parses `MIN:MAX`.
pub fn parse_vrange(s: &str) -> Result<[f64; 2], String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected MIN:MAX, got '{s}'"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("bad MIN '{lo}': {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("bad MAX '{hi}': {e}"))?;
    if !(lo < hi) {
        return Err(format!("MIN must be below MAX in '{s}'"));
    }
    Ok([lo, hi])
}
