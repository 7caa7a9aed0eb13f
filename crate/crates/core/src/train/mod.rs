//! Two-stage training of the semantic field.
//!
//! Stage I supervises rendered features with fixed per-view label maps
//! (raw argmax in baseline mode, region-refined otherwise). In full mode,
//! stage II swaps those targets for pseudo maps regenerated from the field
//! on a fixed schedule, for training views and synthesized novel views.

pub mod adam;
pub mod config;
pub mod loss;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::cse::{
    cse_action, synthesize_novel_poses, CseAction, CseSchedule, NoProposals, PaletteProvider,
    ProposalProvider, PseudoMapSet, PseudoRender,
};
use crate::data::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::data::image::{Image, LabelMap};
use crate::data::scene::{write_cameras, Camera, SceneDataset};
use crate::data::tensor::write_tensor;
use crate::error::{Error, Result};
use crate::field::{FieldGrid, GridGradient};
use crate::relevancy::{relevancy_image, RelevancySource};
use crate::render::{generate_ray, GradRecords, GradSink, Ray, RaySampling, RayTape, SamplingMode};
use crate::rng::{rng_for, Stream};
use crate::rsr::rsr_refine;

use adam::{adam_step, AdamParams, AdamState};
pub use config::{lr_at, Mode, NovelProposals, ScheduleConfig, TrainConfig};
use loss::{loss_color, loss_feat, loss_map, MapScratch};

/// Rays per work unit. Fixed so results do not depend on the thread count.
pub const CHUNK_RAYS: usize = 256;

/// Palette colors must cover this fraction of training pixels.
pub const PALETTE_MIN_FRACTION: f64 = 0.002;
pub const PALETTE_MAX_COLORS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
        }
    }
}

/// Batch-mean losses of one iteration. Each term is divided by the full
/// batch size, so `total` is their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub iteration: u64,
    pub total: f64,
    pub color: f64,
    pub feat: f64,
    pub map: f64,
    pub aux: f64,
    pub stage: Stage,
    pub lr_grid: f32,
}

/// One training ray with its targets; novel-view rays carry only a label.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSample {
    pub ray: Ray,
    pub sampling: RaySampling,
    pub color: Option<[f32; 3]>,
    pub feature: Option<Vec<f32>>,
    pub aux: Option<Vec<f32>>,
    pub label: u16,
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Train(usize),
    Novel(usize),
}

#[derive(Debug, Clone, Copy)]
struct RayJob {
    source: Source,
    pixel: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct LossSums {
    color: f64,
    feat: f64,
    map: f64,
    aux: f64,
}

impl LossSums {
    fn add(&mut self, o: &LossSums) {
        self.color += o.color;
        self.feat += o.feat;
        self.map += o.map;
        self.aux += o.aux;
    }
}

#[derive(Default)]
struct Scratch {
    tape: RayTape,
    sampling: RaySampling,
    feature: Vec<f32>,
    up_feat: Vec<f32>,
    term: Vec<f32>,
    map: MapScratch,
    records: GradRecords,
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub scene: &'a SceneDataset,
    pub field: FieldGrid,
    pub adam: AdamState,
    /// Next iteration to run.
    pub iteration: u64,
    /// Stage-I map targets, one per training view.
    pub targets: Vec<LabelMap>,
    pub pseudo: Option<PseudoMapSet>,
    pub novel_poses: Vec<Camera>,
    /// Optional extra per-view feature targets with a cosine loss.
    pub aux_targets: Option<Vec<Image>>,
    train_views: Vec<usize>,
    train_pixels: Vec<usize>,
    provider: Box<dyn ProposalProvider + Send>,
    grad: GridGradient,
    pool: rayon::ThreadPool,
}

/// Stage-I label targets for every training view.
pub fn stage_one_targets(scene: &SceneDataset, mode: Mode) -> Result<Vec<LabelMap>> {
    let views: Vec<_> = scene.train_views().collect();
    views
        .par_iter()
        .map(|v| {
            let feat = v
                .features
                .as_ref()
                .ok_or_else(|| Error::MissingFile(format!("feat/{}.ovnt", v.name).into()))?;
            let raw = relevancy_image(feat, &scene.text, RelevancySource::ClipPrecomputed).labels;
            match mode {
                Mode::Baseline => Ok(raw),
                Mode::Rsr | Mode::Full => {
                    let props = v.proposals.as_ref().ok_or_else(|| {
                        Error::MissingFile(format!("masks/{}.json", v.name).into())
                    })?;
                    Ok(rsr_refine(&raw, props)?.labels)
                }
            }
        })
        .collect()
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, scene: &'a SceneDataset) -> Result<Self> {
        let field = FieldGrid::init(
            config.grid_resolution,
            config.aabb,
            scene.feature_dim(),
            config.seed,
        )?;
        let adam = AdamState::new(&field);
        Self::assemble(config, scene, field, adam, 0, None, Vec::new())
    }

    /// Continues from a checkpoint. The checkpoint's configuration is used;
    /// `threads` may differ without changing results.
    pub fn resume(ck: Checkpoint, scene: &'a SceneDataset, threads: Option<usize>) -> Result<Self> {
        let mut config = ck.config;
        if let Some(t) = threads {
            config.threads = t;
        }
        if ck.field.feature_dim != scene.feature_dim() {
            return Err(Error::DimensionMismatch {
                what: "checkpoint feature grid".into(),
                expected: vec![scene.feature_dim()],
                found: vec![ck.field.feature_dim],
            });
        }
        Self::assemble(config, scene, ck.field, ck.adam, ck.iteration, ck.pseudo, ck.novel_poses)
    }

    pub fn resume_from_dir(dir: impl AsRef<Path>, scene: &'a SceneDataset, threads: Option<usize>) -> Result<Self> {
        Self::resume(load_checkpoint(dir)?, scene, threads)
    }

    fn assemble(
        config: TrainConfig,
        scene: &'a SceneDataset,
        field: FieldGrid,
        adam: AdamState,
        iteration: u64,
        pseudo: Option<PseudoMapSet>,
        novel_poses: Vec<Camera>,
    ) -> Result<Self> {
        config.validate()?;
        scene.validate()?;
        let train_views: Vec<usize> = scene
            .views
            .iter()
            .enumerate()
            .filter(|(_, v)| v.camera.split == crate::data::scene::Split::Train)
            .map(|(i, _)| i)
            .collect();
        if train_views.is_empty() {
            return Err(Error::invalid("scene", "no training views"));
        }
        let train_pixels = train_views
            .iter()
            .map(|&i| scene.views[i].camera.pixel_count())
            .collect();
        let targets = stage_one_targets(scene, config.mode)?;
        let provider: Box<dyn ProposalProvider + Send> = match config.novel_proposals {
            NovelProposals::Palette => Box::new(PaletteProvider::from_images(
                train_views.iter().map(|&i| &scene.views[i].rgb),
                PALETTE_MIN_FRACTION,
                PALETTE_MAX_COLORS,
            )),
            NovelProposals::None => Box::new(NoProposals),
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads.max(1))
            .build()
            .map_err(|e| Error::invalid("threads", e.to_string()))?;
        let grad = GridGradient::zeros_like(&field);
        Ok(Trainer {
            config,
            scene,
            field,
            adam,
            iteration,
            targets,
            pseudo,
            novel_poses,
            aux_targets: None,
            train_views,
            train_pixels,
            provider,
            grad,
            pool,
        })
    }

    /// Attaches auxiliary feature targets (one H×W×D image per training
    /// view); they only count when `lambda_aux > 0`.
    pub fn set_aux_targets(&mut self, targets: Vec<Image>) -> Result<()> {
        if targets.len() != self.train_views.len() {
            return Err(Error::invalid(
                "aux targets",
                format!("expected {} images, got {}", self.train_views.len(), targets.len()),
            ));
        }
        for (img, &vi) in targets.iter().zip(&self.train_views) {
            let cam = &self.scene.views[vi].camera;
            if (img.height, img.width, img.channels) != (cam.height, cam.width, self.field.feature_dim) {
                return Err(Error::DimensionMismatch {
                    what: "aux target".into(),
                    expected: vec![cam.height, cam.width, self.field.feature_dim],
                    found: vec![img.height, img.width, img.channels],
                });
            }
        }
        self.aux_targets = Some(targets);
        Ok(())
    }

    pub fn schedule(&self) -> CseSchedule {
        self.config.schedule()
    }

    fn action(&self, iter: u64) -> CseAction {
        match self.config.mode {
            Mode::Full => cse_action(iter, &self.schedule()),
            _ => CseAction::Stage1,
        }
    }

    pub fn stage_at(&self, iter: u64) -> Stage {
        match self.action(iter) {
            CseAction::Stage1 => Stage::One,
            _ => Stage::Two,
        }
    }

    pub fn render_opts(&self) -> PseudoRender {
        PseudoRender {
            samples_per_ray: self.config.samples_per_ray,
            bounds: self.config.ray_bounds,
        }
    }

    /// Rebuilds the pseudo maps from the current field. Novel poses are
    /// synthesized once, the first time this runs.
    pub fn regenerate(&mut self) -> Result<()> {
        if self.novel_poses.is_empty() && self.config.schedule.novel_count > 0 {
            let cams: Vec<Camera> = self
                .train_views
                .iter()
                .map(|&i| self.scene.views[i].camera.clone())
                .collect();
            self.novel_poses = synthesize_novel_poses(&cams, self.config.schedule.novel_count)?;
        }
        let opts = self.render_opts();
        let (field, scene, poses, provider) = (&self.field, self.scene, &self.novel_poses, &*self.provider);
        let set = self.pool.install(|| {
            PseudoMapSet::generate(field, scene, poses, provider, opts, self.iteration)
        })?;
        log::info!(
            "iteration {}: regenerated {} train and {} novel pseudo maps",
            self.iteration,
            set.train_maps.len(),
            set.novel_maps.len()
        );
        self.pseudo = Some(set);
        Ok(())
    }

    fn sample_batch(&self, iter: u64, stage: Stage) -> Vec<RayJob> {
        let b = self.config.batch_rays;
        let mut rng = rng_for(self.config.seed, Stream::Batch, iter);
        let novel_pixels: Vec<usize> = match (stage, &self.pseudo) {
            (Stage::Two, Some(p)) => p.novel_cameras.iter().map(|c| c.pixel_count()).collect(),
            _ => Vec::new(),
        };
        let (n_train, n_novel) = if novel_pixels.is_empty() {
            (b, 0)
        } else {
            (b.div_ceil(2), b / 2)
        };
        let train_total: usize = self.train_pixels.iter().sum();
        let novel_total: usize = novel_pixels.iter().sum();
        let locate = |flat: usize, sizes: &[usize]| -> (usize, usize) {
            let mut rest = flat;
            for (i, &n) in sizes.iter().enumerate() {
                if rest < n {
                    return (i, rest);
                }
                rest -= n;
            }
            unreachable!("flat index within total")
        };
        let mut jobs = Vec::with_capacity(b);
        for _ in 0..n_train {
            let (v, p) = locate(rng.random_range(0..train_total), &self.train_pixels);
            jobs.push(RayJob {
                source: Source::Train(v),
                pixel: p,
            });
        }
        for _ in 0..n_novel {
            let (v, p) = locate(rng.random_range(0..novel_total), &novel_pixels);
            jobs.push(RayJob {
                source: Source::Novel(v),
                pixel: p,
            });
        }
        jobs
    }

    fn job_ray(
        &self,
        job: &RayJob,
        pseudo: Option<&PseudoMapSet>,
        rng: &mut impl Rng,
        sampling: &mut RaySampling,
    ) -> Ray {
        let camera = match job.source {
            Source::Train(v) => &self.scene.views[self.train_views[v]].camera,
            Source::Novel(v) => &pseudo.expect("novel rays need pseudo maps").novel_cameras[v],
        };
        let (py, px) = (job.pixel / camera.width, job.pixel % camera.width);
        let ray = generate_ray(camera, px as f32, py as f32, &self.field, self.config.ray_bounds);
        sampling.fill(&ray, self.config.samples_per_ray, SamplingMode::Stratified, Some(rng));
        ray
    }

    fn jitter_rng(&self, iter: u64, chunk: usize) -> rand_chacha::ChaCha8Rng {
        rng_for(self.config.seed, Stream::Jitter, iter.wrapping_mul(1 << 20) + chunk as u64)
    }

    /// The exact rays, sample positions, and targets that iteration `iter`
    /// trains on, for checking the loss against an independent evaluation.
    pub fn batch_samples(&self, iter: u64) -> Vec<BatchSample> {
        let stage = self.stage_at(iter);
        let pseudo = self.pseudo.as_ref().filter(|_| stage == Stage::Two);
        let jobs = self.sample_batch(iter, stage);
        let mut out = Vec::with_capacity(jobs.len());
        for (ci, chunk) in jobs.chunks(CHUNK_RAYS).enumerate() {
            let mut rng = self.jitter_rng(iter, ci);
            for job in chunk {
                let mut sampling = RaySampling::default();
                let ray = self.job_ray(job, pseudo, &mut rng, &mut sampling);
                let (color, feature, aux, label) = match job.source {
                    Source::Train(v) => {
                        let view = &self.scene.views[self.train_views[v]];
                        let rgb = view.rgb.pixel(job.pixel);
                        let label = match pseudo {
                            Some(p) => p.train_maps[v].data[job.pixel],
                            None => self.targets[v].data[job.pixel],
                        };
                        (
                            Some([rgb[0], rgb[1], rgb[2]]),
                            view.features.as_ref().map(|f| f.pixel(job.pixel).to_vec()),
                            self.aux_targets.as_ref().map(|a| a[v].pixel(job.pixel).to_vec()),
                            label,
                        )
                    }
                    Source::Novel(v) => (None, None, None, pseudo.expect("stage two").novel_maps[v].data[job.pixel]),
                };
                out.push(BatchSample {
                    ray,
                    sampling,
                    color,
                    feature,
                    aux,
                    label,
                });
            }
        }
        out
    }

    fn run_chunk(
        &self,
        jobs: &[RayJob],
        iter: u64,
        chunk: usize,
        stage: Stage,
        scratch: &mut Scratch,
        sink: &mut impl GradSink,
    ) -> Result<LossSums> {
        let c = &self.config;
        let d = self.field.feature_dim;
        let scale = 1.0 / c.batch_rays as f32;
        let mut rng = self.jitter_rng(iter, chunk);
        let mut sums = LossSums::default();
        scratch.feature.resize(d, 0.0);
        scratch.up_feat.resize(d, 0.0);
        scratch.term.resize(d, 0.0);
        let pseudo = self.pseudo.as_ref().filter(|_| stage == Stage::Two);
        for job in jobs {
            let ray = self.job_ray(job, pseudo, &mut rng, &mut scratch.sampling);
            let mut color = [0.0f32; 3];
            scratch
                .tape
                .forward(&self.field, &ray, &scratch.sampling, &mut color, &mut scratch.feature);
            scratch.up_feat.fill(0.0);
            let mut up_color = [0.0f32; 3];
            let mut ray_loss = 0.0f64;

            let target = match job.source {
                Source::Train(v) => {
                    let view = &self.scene.views[self.train_views[v]];
                    let rgb = view.rgb.pixel(job.pixel);
                    let (lc, gc) = loss_color(color, [rgb[0], rgb[1], rgb[2]]);
                    for k in 0..3 {
                        up_color[k] = c.lambda_color * scale * gc[k];
                    }
                    sums.color += lc as f64;
                    ray_loss += lc as f64;
                    if c.lambda_feat != 0.0 {
                        let feat = view.features.as_ref().expect("validated").pixel(job.pixel);
                        let lf = loss_feat(&scratch.feature, feat, &mut scratch.term);
                        for (u, g) in scratch.up_feat.iter_mut().zip(&scratch.term) {
                            *u += c.lambda_feat * scale * g;
                        }
                        sums.feat += lf as f64;
                        ray_loss += lf as f64;
                    }
                    if let (Some(aux), true) = (&self.aux_targets, c.lambda_aux != 0.0) {
                        let la = loss_feat(&scratch.feature, aux[v].pixel(job.pixel), &mut scratch.term);
                        for (u, g) in scratch.up_feat.iter_mut().zip(&scratch.term) {
                            *u += c.lambda_aux * scale * g;
                        }
                        sums.aux += la as f64;
                        ray_loss += la as f64;
                    }
                    match pseudo {
                        Some(p) => p.train_maps[v].data[job.pixel],
                        None => self.targets[v].data[job.pixel],
                    }
                }
                Source::Novel(v) => pseudo.expect("novel rays need pseudo maps").novel_maps[v].data[job.pixel],
            };
            if c.lambda_map != 0.0 {
                let lm = loss_map(
                    &scratch.feature,
                    target as usize,
                    &self.scene.text,
                    c.ce_temperature,
                    &mut scratch.map,
                    &mut scratch.term,
                )?;
                for (u, g) in scratch.up_feat.iter_mut().zip(&scratch.term) {
                    *u += c.lambda_map * scale * g;
                }
                sums.map += lm as f64;
                ray_loss += lm as f64;
            }
            if !ray_loss.is_finite() {
                return Err(Error::NonFiniteLoss { iteration: iter });
            }
            scratch.tape.backward_with(up_color, &scratch.up_feat, self.config.semantic_density_grad, sink);
        }
        Ok(sums)
    }

    /// Losses and gradient for the batch of iteration `iter` at the current
    /// field, without updating anything. The gradient lands in `grad`.
    pub fn batch_gradient(&self, iter: u64, grad: &mut GridGradient) -> Result<StepStats> {
        let stage = self.stage_at(iter);
        let jobs = self.sample_batch(iter, stage);
        grad.clear();
        let mut sums = LossSums::default();
        if self.config.threads <= 1 {
            let mut scratch = Scratch::default();
            for (ci, chunk) in jobs.chunks(CHUNK_RAYS).enumerate() {
                sums.add(&self.run_chunk(chunk, iter, ci, stage, &mut scratch, grad)?);
            }
        } else {
            let parts: Vec<Result<(LossSums, GradRecords)>> = self.pool.install(|| {
                jobs.par_chunks(CHUNK_RAYS)
                    .enumerate()
                    .map_init(Scratch::default, |scratch, (ci, chunk)| {
                        let mut records = std::mem::take(&mut scratch.records);
                        records.clear();
                        let s = self.run_chunk(chunk, iter, ci, stage, scratch, &mut records)?;
                        Ok((s, records))
                    })
                    .collect()
            });
            for part in parts {
                let (s, records) = part?;
                sums.add(&s);
                records.replay(grad);
            }
        }
        let n = self.config.batch_rays as f64;
        let c = &self.config;
        let (color, feat, map, aux) = (sums.color / n, sums.feat / n, sums.map / n, sums.aux / n);
        let total = c.lambda_color as f64 * color
            + c.lambda_feat as f64 * feat
            + c.lambda_map as f64 * map
            + if self.aux_targets.is_some() { c.lambda_aux as f64 * aux } else { 0.0 };
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter });
        }
        Ok(StepStats {
            iteration: iter,
            total,
            color,
            feat,
            map,
            aux,
            stage,
            lr_grid: lr_at(iter, c.lr_grid, c.lr_decay_factor, c.total_iters),
        })
    }

    /// Runs one iteration, regenerating pseudo maps first when due.
    pub fn step(&mut self) -> Result<StepStats> {
        let iter = self.iteration;
        if self.action(iter) == CseAction::RegenerateNow || (self.stage_at(iter) == Stage::Two && self.pseudo.is_none()) {
            self.regenerate()?;
        }
        let mut grad = std::mem::take(&mut self.grad);
        let result = self.batch_gradient(iter, &mut grad);
        let stats = match result {
            Ok(s) => s,
            Err(e) => {
                self.grad = grad;
                return Err(e);
            }
        };
        let c = &self.config;
        let params = AdamParams {
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            eps: c.adam_eps,
            lr_grid: lr_at(iter, c.lr_grid, c.lr_decay_factor, c.total_iters),
            lr_feature: lr_at(iter, c.lr_feature, c.lr_decay_factor, c.total_iters),
        };
        let r = self.pool.install(|| adam_step(&mut self.field, &grad, &mut self.adam, &params, iter));
        self.grad = grad;
        r?;
        self.iteration += 1;
        Ok(stats)
    }

    /// Snapshot of the training state. The thread count is a runtime
    /// setting and is stored as 1 so checkpoints do not depend on it.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            field: self.field.clone(),
            adam: self.adam.clone(),
            iteration: self.iteration,
            config: TrainConfig {
                threads: 1,
                ..self.config.clone()
            },
            pseudo: self.pseudo.clone(),
            novel_poses: self.novel_poses.clone(),
        }
    }

    /// Trains to `total_iters`, writing `metrics.csv` and the rolling
    /// checkpoint `checkpoint/` under `out_dir`. Returns every step's stats.
    pub fn run(&mut self, out_dir: impl AsRef<Path>) -> Result<Vec<StepStats>> {
        let out_dir = out_dir.as_ref();
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let log_path = out_dir.join("metrics.csv");
        let mut log = MetricsLog::open(&log_path, self.iteration > 0)?;
        let mut history = Vec::new();
        let total = self.config.total_iters;
        while self.iteration < total {
            let stats = self.step()?;
            if stats.stage == Stage::Two && (stats.iteration == 0 || self.stage_at(stats.iteration - 1) == Stage::One) {
                log::info!("iteration {}: switched to stage {}", stats.iteration, stats.stage.number());
            }
            let every = self.config.log_every.max(1);
            if stats.iteration % every == 0 || self.iteration == total {
                log.write(&stats)?;
                log::info!(
                    "iter {} loss {:.5} (color {:.5} feat {:.5} map {:.5}) stage {}",
                    stats.iteration,
                    stats.total,
                    stats.color,
                    stats.feat,
                    stats.map,
                    stats.stage.number()
                );
            }
            history.push(stats);
            let ck_every = self.config.checkpoint_every;
            if ck_every > 0 && self.iteration % ck_every == 0 && self.iteration < total {
                self.save(out_dir.join("checkpoint"))?;
            }
        }
        self.save(out_dir.join("checkpoint"))?;
        Ok(history)
    }

    /// Writes the checkpoint to `dir`, replacing any previous one there.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let tmp = sibling(dir, ".tmp");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        save_checkpoint(&tmp, &self.checkpoint())?;
        // cameras and embeddings let the checkpoint render on its own
        let cams: Vec<(String, Camera)> = self
            .scene
            .views
            .iter()
            .map(|v| (v.name.clone(), v.camera.clone()))
            .collect();
        write_cameras(tmp.join("cameras.json"), &cams)?;
        write_tensor(tmp.join("text.ovnt"), &self.scene.text.to_tensor())?;
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
    }
}

/// Sizes rayon's global pool, used by rendering and evaluation outside
/// a trainer. Fails if the pool was already built.
pub fn init_global_threads(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build_global()
        .map_err(|e| Error::invalid("threads", e.to_string()))
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    dir.with_file_name(name)
}

struct MetricsLog {
    path: PathBuf,
    file: fs::File,
}

impl MetricsLog {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let exists = path.exists();
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if !append || !exists {
            writeln!(file, "iter,loss_total,loss_color,loss_feat,loss_map,stage,lr")
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(MetricsLog {
            path: path.to_path_buf(),
            file,
        })
    }

    fn write(&mut self, s: &StepStats) -> Result<()> {
        writeln!(
            self.file,
            "{},{:.8},{:.8},{:.8},{:.8},{},{:.8e}",
            s.iteration,
            s.total,
            s.color,
            s.feat,
            s.map,
            s.stage.number(),
            s.lr_grid
        )
        .map_err(|e| Error::io(&self.path, e))
    }
}
