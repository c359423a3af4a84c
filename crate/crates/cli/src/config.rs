//! Experiment configuration: one JSON document whose every field defaults to
//! the reference parameter set, so `{}` is a complete configuration.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use wncs_aoi::aoi::Scheme;
use wncs_aoi::channel::{FblConfig, LinkBudget};
use wncs_aoi::control::PlantModel;
use wncs_aoi::optimizer::OptimizerParams;
use wncs_aoi::sim::SimConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; sweep points use it with their own stream index.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub channel: ChannelConfig,
    pub traffic: TrafficConfig,
    pub link: LinkConfig,
    pub constraints: ConstraintConfig,
    pub simulation: SimulationConfig,
    pub plant: PlantConfig,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub info_bits: u32,
    pub blocklength: u32,
    pub symbol_duration_ms: f64,
    pub noise_variance_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    /// Packets per ms.
    pub arrival_rate: f64,
    /// `NR`, `ARQ` or `KR`.
    pub scheme: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub transmit_power_dbm: f64,
    pub connections: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintConfig {
    pub max_total_power_dbm: f64,
    pub max_violation: f64,
    pub paoi_threshold_ms: f64,
    pub k_search_cap: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_packets: u64,
    pub forced_success_prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub system_matrix: Vec<Vec<f64>>,
    pub input_matrix: Vec<Vec<f64>>,
    pub noise_covariance: Vec<Vec<f64>>,
    /// Control period in ms; the service time when absent.
    pub timestep_ms: Option<f64>,
    /// Norm threshold for a risky state; calibrated from the PAoI threshold
    /// when absent.
    pub state_threshold: Option<f64>,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub pt_dbm: Vec<f64>,
    pub k: Vec<u32>,
    pub zeta_ms: Vec<f64>,
    pub gamma_bar: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            output_dir: PathBuf::from("out"),
            channel: ChannelConfig::default(),
            traffic: TrafficConfig::default(),
            link: LinkConfig::default(),
            constraints: ConstraintConfig::default(),
            simulation: SimulationConfig::default(),
            plant: PlantConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            info_bits: 160,
            blocklength: 100,
            symbol_duration_ms: 0.005,
            noise_variance_dbm: 23.0,
        }
    }
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            arrival_rate: 1.0,
            scheme: "NR".into(),
        }
    }
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            transmit_power_dbm: 35.0,
            connections: 4,
        }
    }
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            max_total_power_dbm: 50.0,
            max_violation: 1e-3,
            paoi_threshold_ms: 8.0,
            k_search_cap: 64,
        }
    }
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_packets: 100_000,
            forced_success_prob: None,
        }
    }
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            system_matrix: vec![vec![1.17, 0.67], vec![0.67, 0.37]],
            input_matrix: vec![vec![0.67], vec![0.37]],
            noise_covariance: vec![vec![1e-6, 0.0], vec![0.0, 1e-6]],
            timestep_ms: None,
            state_threshold: None,
            max_steps: 1_000_000,
        }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        // 25 log-spaced points per decade-and-a-bit from 0.1 to 100.
        let gamma_bar = (0..=24)
            .map(|i| 10f64.powf(-1.0 + 3.0 * f64::from(i) / 24.0))
            .collect();
        Self {
            pt_dbm: (28..=40).map(f64::from).collect(),
            k: (1..=8).collect(),
            zeta_ms: vec![3.0, 8.0],
            gamma_bar,
        }
    }
}

/// Command-line overrides; list values replace the sweep axis and the first
/// entry becomes the single-point value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub pt_dbm: Option<Vec<f64>>,
    pub k: Option<Vec<u32>>,
    pub zeta_ms: Option<Vec<f64>>,
    pub arrival_rate: Option<f64>,
    pub noise_variance_dbm: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration always serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> CliResult<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(pt) = &o.pt_dbm {
            self.link.transmit_power_dbm = *pt
                .first()
                .ok_or_else(|| CliError::Usage("--pt-dbm needs a value".into()))?;
            self.sweep.pt_dbm = pt.clone();
        }
        if let Some(k) = &o.k {
            self.link.connections = *k
                .first()
                .ok_or_else(|| CliError::Usage("--k needs a value".into()))?;
            self.sweep.k = k.clone();
        }
        if let Some(z) = &o.zeta_ms {
            self.constraints.paoi_threshold_ms = *z
                .first()
                .ok_or_else(|| CliError::Usage("--zeta-ms needs a value".into()))?;
            self.sweep.zeta_ms = z.clone();
        }
        if let Some(l) = o.arrival_rate {
            self.traffic.arrival_rate = l;
        }
        if let Some(s) = o.noise_variance_dbm {
            self.channel.noise_variance_dbm = s;
        }
        self.validate()
    }

    /// Checks that do not depend on which command runs; sweep axes may be
    /// empty here and are checked where they are used.
    pub fn validate(&self) -> CliResult<()> {
        self.fbl()?;
        self.scheme()?;
        if self.link.connections == 0 || self.sweep.k.contains(&0) {
            return Err(CliError::Usage("connection counts must be >= 1".into()));
        }
        if self.plant.max_steps == 0 {
            return Err(CliError::Usage("plant.max_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn fbl(&self) -> CliResult<FblConfig> {
        let c = &self.channel;
        Ok(FblConfig::new(
            c.info_bits,
            c.blocklength,
            c.symbol_duration_ms,
        )?)
    }

    pub fn scheme(&self) -> CliResult<Scheme> {
        self.traffic
            .scheme
            .parse()
            .map_err(|e: wncs_aoi::Error| CliError::Usage(e.to_string()))
    }

    pub fn budget(&self, pt_dbm: f64, k: u32) -> CliResult<LinkBudget> {
        Ok(LinkBudget::new(pt_dbm, self.channel.noise_variance_dbm, k)?)
    }

    pub fn optimizer_params(&self, pt_dbm: f64) -> CliResult<OptimizerParams> {
        let c = &self.constraints;
        let p = OptimizerParams {
            arrival_rate: self.traffic.arrival_rate,
            fbl: self.fbl()?,
            noise_variance_dbm: self.channel.noise_variance_dbm,
            transmit_power_dbm: pt_dbm,
            max_total_power_dbm: c.max_total_power_dbm,
            max_violation: c.max_violation,
            paoi_threshold_ms: c.paoi_threshold_ms,
            k_search_cap: c.k_search_cap,
        };
        p.validate()?;
        Ok(p)
    }

    /// Simulation of one sweep point; `stream` keeps points independent.
    pub fn sim_config(
        &self,
        scheme: Scheme,
        pt_dbm: f64,
        k: u32,
        stream: u64,
    ) -> CliResult<SimConfig> {
        let mut cfg = SimConfig::new(
            scheme,
            self.traffic.arrival_rate,
            self.fbl()?,
            self.budget(pt_dbm, k)?,
        );
        cfg.n_packets = self.simulation.n_packets;
        cfg.forced_success_prob = self.simulation.forced_success_prob;
        cfg.paoi_threshold_ms = self.constraints.paoi_threshold_ms;
        cfg.seed = self.seed;
        cfg.stream = stream;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn timestep_ms(&self) -> CliResult<f64> {
        Ok(self
            .plant
            .timestep_ms
            .unwrap_or(self.fbl()?.service_time_ms()))
    }

    /// Plant with the least-squares gain and either the configured or the
    /// calibrated state threshold.
    pub fn plant(&self) -> CliResult<PlantModel> {
        let a = matrix("plant.system_matrix", &self.plant.system_matrix)?;
        let b = matrix("plant.input_matrix", &self.plant.input_matrix)?;
        let r = matrix("plant.noise_covariance", &self.plant.noise_covariance)?;
        let plant = PlantModel::new(a, b, r, self.timestep_ms()?)?;
        Ok(match self.plant.state_threshold {
            Some(t) => plant.with_state_threshold(t)?,
            None => plant.calibrated(self.constraints.paoi_threshold_ms)?,
        })
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> CliResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Usage(format!(
            "{name} must be a non-empty rectangular matrix"
        )));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}
