use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sorl_core::clustering::KMeansConfig;
use sorl_core::export;
use sorl_core::perturbation::AssumptionConfig;
use sorl_core::spectral::OptimizerConfig;
use sorl_core::toy::{self, BlockWorldParams, CylinderRows, ToyParams};
use sorl_core::{AdjacencyBundle, AugmentationWorld};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Sorl,
    Lowrank,
}

/// Toy parameters as written on the command line or in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub tau1: f64,
    pub tau_c: f64,
    pub tau_s: f64,
    #[serde(default)]
    pub cylinders: CylinderRows,
}

impl ToySpec {
    pub fn params(&self) -> ToyParams {
        ToyParams::new(self.tau1, self.tau_c, self.tau_s).with_cylinders(self.cylinders)
    }
}

impl FromStr for ToySpec {
    type Err = String;

    /// `tau1=0.95,tauc=0.03,taus=0.02[,cyl=printed|stochastic]`
    fn from_str(s: &str) -> Result<Self, String> {
        let (mut tau1, mut tau_c, mut tau_s) = (None, None, None);
        let mut cylinders = CylinderRows::default();
        for part in s.split(',').filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{part}`"))?;
            let num = || value.trim().parse::<f64>().map_err(|e| format!("{key}: {e}"));
            match key.trim() {
                "tau1" => tau1 = Some(num()?),
                "tauc" => tau_c = Some(num()?),
                "taus" => tau_s = Some(num()?),
                "cyl" => {
                    cylinders = match value.trim() {
                        "printed" => CylinderRows::AsPrinted,
                        "stochastic" => CylinderRows::Stochastic,
                        other => return Err(format!("unknown cylinder rows `{other}`")),
                    }
                }
                other => return Err(format!("unknown toy key `{other}`")),
            }
        }
        match (tau1, tau_c, tau_s) {
            (Some(tau1), Some(tau_c), Some(tau_s)) => Ok(ToySpec { tau1, tau_c, tau_s, cylinders }),
            _ => Err("toy needs tau1, tauc and taus".into()),
        }
    }
}

/// Everything a command needs. Loaded from JSON, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: Option<PathBuf>,
    pub toy: Option<ToySpec>,
    pub block: Option<PathBuf>,
    pub k: Option<usize>,
    pub eta_u: Option<f64>,
    pub eta_l: Option<f64>,
    pub deltas: Vec<f64>,
    pub seed: u64,
    pub out: PathBuf,
    pub method: Method,
    pub clusters: Option<usize>,
    pub optimizer: OptimizerConfig,
    pub kmeans: KMeansConfig,
    pub assumptions: AssumptionConfig,
    pub fd_step: f64,
    pub samples: usize,
    pub bound_constant: f64,
    pub sequential: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: None,
            toy: None,
            block: None,
            k: None,
            eta_u: None,
            eta_l: None,
            deltas: vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            seed: 0,
            out: PathBuf::from("out"),
            method: Method::Sorl,
            clusters: None,
            optimizer: OptimizerConfig::default(),
            kmeans: KMeansConfig::default(),
            assumptions: AssumptionConfig::default(),
            fd_step: 1e-6,
            samples: 20,
            bound_constant: 10.0,
            sequential: false,
        }
    }
}

pub fn load(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    match path {
        Some(p) => Ok(export::read_json(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        let sources = [self.world.is_some(), self.toy.is_some(), self.block.is_some()];
        if sources.iter().filter(|&&s| s).count() > 1 {
            return Err(CliError::Config("give at most one of --world, --toy, --block".into()));
        }
        if self.deltas.is_empty() {
            return Err(CliError::Config("the δ grid is empty".into()));
        }
        if self.deltas.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(CliError::Config("δ values must be finite and nonnegative".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(CliError::Config("fd_step must be positive".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> CliResult<usize> {
        self.k.ok_or_else(|| CliError::Config("--k is required for this command".into()))
    }

    pub fn world(&self) -> CliResult<AugmentationWorld> {
        if let Some(p) = &self.world {
            return Ok(export::read_world(p)?);
        }
        if let Some(t) = &self.toy {
            return Ok(toy::build_toy(&t.params())?);
        }
        if let Some(p) = &self.block {
            let params: BlockWorldParams = export::read_json(p)?;
            return Ok(toy::synth_block_world(&params, self.seed)?);
        }
        Err(CliError::Config("no world given: use --world, --toy or --block".into()))
    }

    /// η_u, η_l with the toy defaults (6, 4) when a toy world is used.
    pub fn etas(&self) -> (f64, f64) {
        let (du, dl) = if self.toy.is_some() { (toy::TOY_ETA_U, toy::TOY_ETA_L) } else { (1.0, 1.0) };
        (self.eta_u.unwrap_or(du), self.eta_l.unwrap_or(dl))
    }

    pub fn bundle(&self, world: &AugmentationWorld) -> CliResult<AdjacencyBundle> {
        let (eu, el) = self.etas();
        Ok(AdjacencyBundle::from_world(world, eu, el)?)
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig { seed: self.seed, ..self.optimizer }
    }

    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig { seed: self.seed, ..self.kmeans }
    }

    pub fn execution(&self) -> sorl_core::Execution {
        if self.sequential {
            sorl_core::Execution::Sequential
        } else {
            sorl_core::Execution::Parallel
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_spec_parses() {
        let t: ToySpec = "tau1=0.95,tauc=0.03,taus=0.02,cyl=stochastic".parse().unwrap();
        assert_eq!((t.tau1, t.tau_c, t.tau_s), (0.95, 0.03, 0.02));
        assert_eq!(t.cylinders, CylinderRows::Stochastic);
        assert!("tau1=0.95,tauc=0.03".parse::<ToySpec>().is_err());
        assert!("tau1=0.95,tauc=0.03,taus=x".parse::<ToySpec>().is_err());
    }

    #[test]
    fn config_round_trips() {
        let c = ExperimentConfig { k: Some(3), ..Default::default() };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&s).unwrap(), c);
        assert!(serde_json::from_str::<ExperimentConfig>("{\"kk\": 1}").is_err());
    }
}
