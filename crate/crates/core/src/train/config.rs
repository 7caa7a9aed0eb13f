use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cse::CseSchedule;
use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::render::RayBounds;

/// Which supervision the map loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Raw argmax labels of the precomputed features, no self-training.
    Baseline,
    /// Region-refined labels, no self-training.
    Rsr,
    /// Region-refined labels, then pseudo maps from the field itself.
    Full,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "rsr" => Ok(Mode::Rsr),
            "full" => Ok(Mode::Full),
            other => Err(Error::invalid("mode", format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Rsr => "rsr",
            Mode::Full => "full",
        })
    }
}

/// How novel views get region proposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NovelProposals {
    /// Palette snapping of the rendered color, palette taken from the
    /// training images.
    Palette,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Defaults to `⌈2/3·total_iters⌉`.
    pub start_iter: Option<u64>,
    /// Defaults to `⌈total_iters/15⌉`.
    pub interval: Option<u64>,
    pub novel_count: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            start_iter: None,
            interval: None,
            novel_count: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub total_iters: u64,
    pub batch_rays: usize,
    pub lr_grid: f32,
    pub lr_feature: f32,
    pub lr_decay_factor: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,
    pub ce_temperature: f32,
    pub lambda_color: f32,
    pub lambda_feat: f32,
    pub lambda_map: f32,
    /// Weight of the optional auxiliary feature cosine loss; 0 disables it.
    pub lambda_aux: f32,
    /// Let feature and map losses update density through the render
    /// weights. Off: geometry is fit by the color loss alone.
    pub semantic_density_grad: bool,
    pub schedule: ScheduleConfig,
    pub samples_per_ray: usize,
    pub seed: u64,
    pub threads: usize,
    pub grid_resolution: [usize; 3],
    pub aabb: Aabb,
    pub ray_bounds: RayBounds,
    pub novel_proposals: NovelProposals,
    /// Checkpoint period in iterations; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Full,
            total_iters: 15_000,
            batch_rays: 4096,
            lr_grid: 2e-2,
            lr_feature: 1e-4,
            lr_decay_factor: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            ce_temperature: 0.1,
            lambda_color: 1.0,
            lambda_feat: 1.0,
            lambda_map: 1.0,
            lambda_aux: 0.0,
            semantic_density_grad: false,
            schedule: ScheduleConfig::default(),
            samples_per_ray: 128,
            seed: 0,
            threads: 1,
            grid_resolution: [128; 3],
            aabb: Aabb::cube(1.0),
            ray_bounds: RayBounds::default(),
            novel_proposals: NovelProposals::Palette,
            checkpoint_every: 1000,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn schedule(&self) -> CseSchedule {
        let d = CseSchedule::for_total(self.total_iters, self.schedule.novel_count);
        CseSchedule {
            start_iter: self.schedule.start_iter.unwrap_or(d.start_iter),
            interval: self.schedule.interval.unwrap_or(d.interval),
            novel_count: self.schedule.novel_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f32| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, "must be positive"))
            }
        };
        positive("lr_grid", self.lr_grid)?;
        positive("lr_feature", self.lr_feature)?;
        positive("ce_temperature", self.ce_temperature)?;
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::invalid("lr_decay_factor", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("adam betas", "must lie in [0, 1)"));
        }
        if self.batch_rays == 0 {
            return Err(Error::invalid("batch_rays", "must be at least 1"));
        }
        if self.samples_per_ray < 2 {
            return Err(Error::invalid("samples_per_ray", "must be at least 2"));
        }
        if self.total_iters == 0 {
            return Err(Error::invalid("total_iters", "must be at least 1"));
        }
        if self.mode == Mode::Full {
            self.schedule().validate(self.total_iters)?;
        }
        Ok(())
    }
}

/// Exponential decay reaching `lr0·decay` at `total`.
pub fn lr_at(iter: u64, lr0: f32, decay: f32, total: u64) -> f32 {
    let frac = iter.min(total) as f64 / total.max(1) as f64;
    (lr0 as f64 * (decay as f64).powf(frac)) as f32
}
