//! TOML configuration files: model parameters, degradation sidecars and
//! experiment matrices. The layout of each is documented in the README.

use std::path::Path;

use anyhow::{Context, Result};
use segres_core::corrupt::{make_blur_kernel, BlurSpec, DegradeSpec};
use segres_core::{ModelParams, OperatorKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

pub fn save<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value)?;
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Optional overrides of [`ModelParams`]. `blur` names the operator `A` as
/// `none`, `gaussian:SIZE:STD` or `motion:LEN:ANGLE`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Label for experiment tables; ignored elsewhere.
    pub name: Option<String>,
    pub phases: Option<usize>,
    pub mu: Option<f64>,
    pub lambda: Option<f64>,
    pub sigma: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
    pub inner_tol: Option<f64>,
    pub cg_tol: Option<f64>,
    pub cg_max_iter: Option<usize>,
    pub fcm_iters: Option<usize>,
    pub baseline: Option<bool>,
    pub seed: Option<u64>,
    pub blur: Option<String>,
}

impl ModelConfig {
    /// Later values win field by field.
    pub fn merged(&self, over: &ModelConfig) -> ModelConfig {
        macro_rules! pick {
            ($($f:ident),*) => { ModelConfig { $($f: over.$f.clone().or_else(|| self.$f.clone()),)* } };
        }
        pick!(name, phases, mu, lambda, sigma, epsilon, max_outer, max_inner, inner_tol, cg_tol, cg_max_iter, fcm_iters, baseline, seed, blur)
    }

    pub fn blur_spec(&self) -> Result<BlurSpec> {
        match &self.blur {
            Some(s) => Ok(s.parse()?),
            None => Ok(BlurSpec::None),
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        let d = ModelParams::default();
        let blur = self.blur_spec()?;
        Ok(ModelParams {
            mu: self.mu.unwrap_or(d.mu),
            lambda: self.lambda.unwrap_or(d.lambda),
            sigma: self.sigma.unwrap_or(d.sigma),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            phases: self.phases.unwrap_or(d.phases),
            max_outer: self.max_outer.unwrap_or(d.max_outer),
            max_inner: self.max_inner.unwrap_or(d.max_inner),
            inner_tol: self.inner_tol.unwrap_or(d.inner_tol),
            cg_tol: self.cg_tol.unwrap_or(d.cg_tol),
            cg_max_iter: self.cg_max_iter.unwrap_or(d.cg_max_iter),
            fcm_iters: self.fcm_iters.unwrap_or(d.fcm_iters),
            baseline: self.baseline.unwrap_or(d.baseline),
            seed: self.seed.unwrap_or(d.seed),
            operator: if blur.is_none() { OperatorKind::Identity } else { OperatorKind::Convolution(make_blur_kernel(&blur)?) },
            ..d
        })
    }
}

/// Parameter file for `segres segment --config`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentFile {
    #[serde(default)]
    pub model: ModelConfig,
}

/// Sidecar written next to a degraded image; `segres corrupt --spec` replays it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptSidecar {
    pub input: String,
    pub output: String,
    pub mask: String,
    pub degrade: DegradeSpec,
}

/// One degradation row of an experiment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationEntry {
    pub name: String,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub blur: Option<String>,
    #[serde(default)]
    pub drop: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DegradationEntry {
    pub fn spec(&self) -> Result<DegradeSpec> {
        let blur: BlurSpec = match &self.blur {
            Some(s) => s.parse()?,
            None => BlurSpec::None,
        };
        let spec = DegradeSpec { noise_variance: self.noise, blur, drop_fraction: self.drop, seed: self.seed };
        spec.check()?;
        Ok(spec)
    }
}

fn default_size() -> usize {
    128
}

fn default_scene_seed() -> u64 {
    1
}

/// Scenes × degradations × parameter sets. When a parameter set leaves
/// `blur` unset the model operator follows the degradation's blur, and
/// `phases` defaults to the scene's phase count.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_scene_seed")]
    pub scene_seed: u64,
    #[serde(default)]
    pub scenes: Vec<String>,
    #[serde(default)]
    pub degradation: Vec<DegradationEntry>,
    #[serde(default)]
    pub params: Vec<ModelConfig>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degrade_spec_round_trips() {
        for blur in [BlurSpec::None, BlurSpec::Gaussian { size: 15, std: 15.0 }, BlurSpec::Motion { length: 15, angle_deg: 90.0 }] {
            let side = CorruptSidecar {
                input: "in.pgm".into(),
                output: "out.pgm".into(),
                mask: "mask.pgm".into(),
                degrade: DegradeSpec { noise_variance: 0.2, blur, drop_fraction: 0.4, seed: 9 },
            };
            let text = toml::to_string(&side).unwrap();
            assert_eq!(toml::from_str::<CorruptSidecar>(&text).unwrap(), side);
        }
    }

    #[test]
    fn model_config_merges_and_converts() {
        let file: SegmentFile = toml::from_str("[model]\nmu = 3.0\nphases = 4\nblur = \"motion:5:0\"\n").unwrap();
        let flags = ModelConfig { mu: Some(7.0), ..Default::default() };
        let m = file.model.merged(&flags);
        let p = m.to_params().unwrap();
        assert_eq!((p.mu, p.phases, p.lambda, p.sigma, p.epsilon), (7.0, 4, 10.0, 2.0, 1e-4));
        assert!(matches!(p.operator, OperatorKind::Convolution(ref k) if k.width() == 5));
        assert!(toml::from_str::<SegmentFile>("[model]\nlamda = 2.0\n").is_err());
    }

    #[test]
    fn empty_experiment_parses() {
        let e: ExperimentFile = toml::from_str("").unwrap();
        assert!(e.scenes.is_empty() && e.degradation.is_empty() && e.params.is_empty());
        assert_eq!(e.size, 128);
    }
}
