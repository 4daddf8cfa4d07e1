//! Run configuration files.
//!
//! A run is described by one TOML document. Defaults are filled in on load;
//! the resolved document is what gets hashed and stored next to the
//! outputs, so two files that resolve to the same settings share a run
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::limit::LimitConfig;
use crate::network::{Activation, ActivationSpec, NetworkSpec};
use crate::patch::ConvLayerConfig;
use crate::tensor::{Axis, AxisRole, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkSection,
    pub inputs: InputSection,
    #[serde(default)]
    pub limit: LimitSection,
    #[serde(default)]
    pub probes: ProbeSection,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub alpha: f64,
    pub sigma_w: f64,
    pub sigma_b: f64,
    /// Channel count `C` of every hidden layer.
    pub channels: usize,
    pub activation: String,
    pub layers: Vec<LayerSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSection {
    pub filter: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_out: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub channels: usize,
    pub spatial: Vec<usize>,
    /// Number of jointly evaluated inputs `K`.
    pub count: usize,
    /// Row-major over `(channel, spatial..., input)`.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitSection {
    pub mc_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom_cap: Option<usize>,
}

impl Default for LimitSection {
    fn default() -> Self {
        LimitSection { mc_samples: 10_000, atom_cap: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    /// Isotropic directions; each contributes one probe per radius.
    pub directions: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection { directions: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub channel_sweep: Vec<usize>,
    pub replicas: usize,
    /// Record wall time in the sweep CSV; off keeps reruns byte-identical.
    pub timing: bool,
    pub sweep_threshold: f64,
    pub independence: bool,
    pub mixture: Vec<f64>,
    pub independence_threshold: f64,
    pub mixture_threshold: f64,
    pub readout: bool,
    /// Defaults to the uniform average over last-layer positions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub readout_weights: Option<Vec<f64>>,
    pub readout_threshold: f64,
    pub oracle_samples: usize,
    pub oracle_threshold: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            channel_sweep: vec![4, 16, 64, 256],
            replicas: 20_000,
            timing: false,
            sweep_threshold: 0.05,
            independence: true,
            mixture: vec![1.0, 1.0],
            independence_threshold: 0.07,
            mixture_threshold: 0.05,
            readout: true,
            readout_weights: None,
            readout_threshold: 0.05,
            oracle_samples: 10_000,
            oracle_threshold: 0.05,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Format { what: "config", detail: e.to_string() })?;
        cfg.resolve()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Fills derived defaults and validates everything.
    fn resolve(mut self) -> Result<Self> {
        let spec = self.network_spec()?;
        let depth = spec.depth();
        if self.limit.atom_cap.is_none() && depth >= 3 {
            self.limit.atom_cap = Some(self.limit.mc_samples);
        }
        self.limit_config()?;
        let positions = spec.layers[depth - 1].n_out();
        match &self.verify.readout_weights {
            None => self.verify.readout_weights = Some(vec![1.0 / positions as f64; positions]),
            Some(u) if u.len() != positions => {
                return Err(Error::config(format!(
                    "readout_weights has {} entries for {positions} output positions",
                    u.len()
                )))
            }
            Some(_) => {}
        }
        let v = &self.verify;
        if v.channel_sweep.is_empty() || v.channel_sweep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("channel_sweep must be non-empty and strictly increasing"));
        }
        if v.replicas == 0 || v.oracle_samples == 0 || self.probes.directions == 0 {
            return Err(Error::config("replicas, oracle_samples and probe directions must be positive"));
        }
        if v.mixture.len() != 2 {
            return Err(Error::config("mixture weights cover exactly two channels"));
        }
        Ok(self)
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let n = &self.network;
        let inp = &self.inputs;
        let mut spatial_in = inp.spatial.clone();
        let mut layers = Vec::with_capacity(n.layers.len());
        for (i, l) in n.layers.iter().enumerate() {
            let cfg = match &l.spatial_out {
                Some(out) => ConvLayerConfig::with_output(
                    spatial_in.clone(),
                    out.clone(),
                    l.filter.clone(),
                    l.stride.clone(),
                    l.padding.clone(),
                ),
                None => ConvLayerConfig::new(spatial_in.clone(), l.filter.clone(), l.stride.clone(), l.padding.clone()),
            }
            .map_err(|e| Error::config(format!("layer {}: {e}", i + 1)))?;
            spatial_in = cfg.spatial_out().to_vec();
            layers.push(cfg);
        }
        let mut axes = vec![Axis::new(AxisRole::Channel, inp.channels)];
        axes.extend(inp.spatial.iter().map(|&p| Axis::new(AxisRole::Spatial, p)));
        axes.push(Axis::new(AxisRole::Input, inp.count));
        let inputs = Tensor::new(axes, inp.values.clone())
            .map_err(|e| Error::config(format!("inputs: {e}")))?;
        let spec = NetworkSpec {
            alpha: n.alpha,
            sigma_w: n.sigma_w,
            sigma_b: n.sigma_b,
            layers,
            activation: ActivationSpec::from_activation(Activation::from_name(&n.activation)?),
            channels: n.channels,
            inputs,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn limit_config(&self) -> Result<LimitConfig> {
        LimitConfig::new(self.limit.mc_samples, self.limit.atom_cap, self.seed)
    }

    pub fn readout_weights(&self) -> &[f64] {
        self.verify.readout_weights.as_deref().unwrap_or(&[])
    }

    /// Canonical TOML of the resolved configuration.
    pub fn resolved_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format { what: "config", detail: e.to_string() })
    }

    /// SHA-256 of the resolved TOML, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.resolved_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// `base/<first 16 hex digits of the hash>`.
    pub fn run_dir(&self, base: &Path) -> Result<PathBuf> {
        Ok(base.join(&self.hash()?[..16]))
    }
}
