//! Pipeline configuration: one section per stage, presets, and command-line
//! overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use jga_bridge::{BridgeSchedule, DenoiserSpec, Objective, SamplerConfig, TimeSampling};
use jga_io::{SceneKind, SynthOptions};
use jga_vae::VaeConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthStage {
    pub scenes: Vec<SceneSpec>,
    /// Surface samples drawn per scene before per-voxel snapping.
    pub count: usize,
    pub options: SynthOptions,
    /// The single view the depth and SMPL inputs are taken from.
    pub input_view: usize,
}

impl Default for SynthStage {
    fn default() -> Self {
        Self {
            scenes: vec![SceneSpec {
                kind: SceneKind::Sphere,
                seed: 1,
            }],
            count: 40_000,
            options: SynthOptions::default(),
            input_view: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnifyStage {
    pub width: usize,
    pub levels: usize,
    pub steps: usize,
    pub lr: f64,
}

impl Default for UnifyStage {
    fn default() -> Self {
        Self {
            width: 16,
            levels: 3,
            steps: 400,
            lr: 5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeStage {
    pub objective: Objective,
    pub width: usize,
    pub levels: usize,
    pub emb_dim: usize,
    pub schedule: BridgeSchedule,
    pub time_sampling: TimeSampling,
    pub steps: usize,
    /// Examples per step; the training set is cycled.
    pub batch: usize,
    pub lr: f64,
    /// Cosine decay from `lr` to `lr * final_lr_fraction`.
    pub final_lr_fraction: f64,
}

impl Default for BridgeStage {
    fn default() -> Self {
        let spec = DenoiserSpec::default();
        Self {
            objective: Objective::Bridge,
            width: spec.width,
            levels: spec.levels,
            emb_dim: spec.emb_dim,
            schedule: BridgeSchedule::default(),
            time_sampling: TimeSampling::default(),
            steps: 2000,
            batch: 4,
            lr: 2e-3,
            final_lr_fraction: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalStage {
    /// Neighbourhood size for normal estimation.
    pub normal_k: usize,
}

impl Default for EvalStage {
    fn default() -> Self {
        Self {
            normal_k: jga_metrics::DEFAULT_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Voxel grid side shared by every stage.
    pub resolution: usize,
    pub synth: SynthStage,
    pub vae: VaeConfig,
    pub unify: UnifyStage,
    pub bridge: BridgeStage,
    pub sample: SamplerConfig,
    pub eval: EvalStage,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::preset("desk-sphere").expect("built-in preset")
    }
}

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub churn_ratio: Option<f64>,
    pub guidance: Option<f64>,
    pub resolution: Option<usize>,
}

/// The stage an `--steps` override applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepsTarget {
    Vae,
    Unify,
    Bridge,
    Sampler,
    None,
}

impl PipelineConfig {
    pub const PRESETS: [&'static str; 2] = ["desk-sphere", "desk"];

    /// `desk-sphere`: two small sphere scenes, minutes end to end.
    /// `desk`: four mixed scenes at 64³ with a fully trained autoencoder.
    pub fn preset(name: &str) -> Result<Self> {
        let scenes = |list: &[(SceneKind, u64)]| list.iter().map(|&(kind, seed)| SceneSpec { kind, seed }).collect();
        match name {
            "desk-sphere" => {
                let mut c = Self {
                    seed: 0,
                    resolution: 32,
                    synth: SynthStage {
                        scenes: scenes(&[(SceneKind::Sphere, 1), (SceneKind::Sphere, 2)]),
                        count: 10_000,
                        options: SynthOptions {
                            views: 4,
                            image_size: 32,
                            ..SynthOptions::default()
                        },
                        input_view: 0,
                    },
                    vae: VaeConfig {
                        enc_widths: [8, 16, 16],
                        dec_widths: [16, 16, 8, 8],
                        iterations: 1000,
                        warmup: 50,
                        ..VaeConfig::default()
                    },
                    unify: UnifyStage {
                        width: 8,
                        levels: 2,
                        steps: 100,
                        ..UnifyStage::default()
                    },
                    bridge: BridgeStage {
                        width: 16,
                        levels: 2,
                        emb_dim: 16,
                        steps: 800,
                        batch: 2,
                        ..BridgeStage::default()
                    },
                    sample: SamplerConfig::default(),
                    eval: EvalStage::default(),
                };
                c.vae.weights.render = 0.0;
                c.propagate();
                Ok(c)
            }
            "desk" => {
                let mut c = Self {
                    seed: 0,
                    resolution: 64,
                    synth: SynthStage {
                        scenes: scenes(&[
                            (SceneKind::Sphere, 1),
                            (SceneKind::Box, 2),
                            (SceneKind::CapsulePerson, 3),
                            (SceneKind::Sphere, 4),
                        ]),
                        ..SynthStage::default()
                    },
                    vae: VaeConfig {
                        iterations: 3000,
                        ..VaeConfig::default()
                    },
                    unify: UnifyStage::default(),
                    bridge: BridgeStage::default(),
                    sample: SamplerConfig::default(),
                    eval: EvalStage::default(),
                };
                c.vae.weights.render = 0.0;
                c.propagate();
                Ok(c)
            }
            other => bail!("unknown preset `{other}` (available: {})", Self::PRESETS.join(", ")),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut c: Self = jga_io::read_json(path).with_context(|| format!("reading config {}", path.display()))?;
        c.propagate();
        Ok(c)
    }

    /// Copies the shared resolution and seed into the stage sections.
    fn propagate(&mut self) {
        self.synth.options.resolution = self.resolution;
        self.vae.resolution = self.resolution;
        self.vae.seed = self.seed;
        self.sample.seed = self.seed;
        self.sample.schedule = self.bridge.schedule;
    }

    pub fn apply(&mut self, o: &Overrides, target: StepsTarget) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(r) = o.resolution {
            self.resolution = r;
        }
        if let Some(n) = o.steps {
            match target {
                StepsTarget::Vae => self.vae.iterations = n,
                StepsTarget::Unify => self.unify.steps = n,
                StepsTarget::Bridge => self.bridge.steps = n,
                StepsTarget::Sampler => self.sample.steps = n,
                StepsTarget::None => {}
            }
        }
        if let Some(c) = o.churn_ratio {
            self.sample.churn_step_ratio = c;
        }
        if let Some(g) = o.guidance {
            self.sample.guidance = g;
        }
        self.propagate();
    }

    pub fn validate(&self) -> Result<()> {
        if self.synth.scenes.is_empty() {
            bail!("synth.scenes: at least one scene is required");
        }
        if self.synth.input_view >= self.synth.options.views {
            bail!(
                "synth.input_view: view {} does not exist ({} views)",
                self.synth.input_view,
                self.synth.options.views
            );
        }
        self.vae.validate()?;
        if self.unify.width == 0 || self.unify.levels == 0 {
            bail!("unify: width and levels must be positive");
        }
        if self.bridge.width == 0 || self.bridge.levels == 0 || self.bridge.batch == 0 {
            bail!("bridge: width, levels and batch must be positive");
        }
        self.bridge.schedule.validate()?;
        self.sample.validate()?;
        Ok(())
    }

    pub fn denoiser_spec(&self) -> DenoiserSpec {
        DenoiserSpec {
            resolution: self.vae.latent_resolution(),
            channels: self.vae.latent_channels + 1,
            width: self.bridge.width,
            levels: self.bridge.levels,
            emb_dim: self.bridge.emb_dim,
        }
    }
}

/// Hex SHA-256 of a value's JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
