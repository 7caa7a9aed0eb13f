//! Criterion-level checks shared by the focused integration tests and the
//! acceptance target. Each returns an [`Outcome`] instead of panicking so
//! the acceptance runner can report every line.

use std::path::Path;
use std::time::Instant;

use ovnerf_core::cse::PseudoMapSet;
use ovnerf_core::data::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use ovnerf_core::data::rle::{decode_rle, encode_rle};
use ovnerf_core::data::tensor::{TensorData, TensorFile};
use ovnerf_core::field::{softplus_inverse, SampleUpstream};
use ovnerf_core::render::{render_ray, render_ray_adjoint, sample_along_ray, Ray, SamplingMode};
use ovnerf_core::rsr::final_footprints;
use ovnerf_core::synth::{random_embeddings, SyntheticSceneSpec};
use ovnerf_core::train::adam::AdamState;
use ovnerf_core::train::loss::{loss_color, loss_feat, loss_map, MapScratch};
use ovnerf_core::{
    evaluate_field, rsr_refine, Aabb, Camera, ConfusionMatrix, FieldGrid, GridGradient, LabelMap, Mask, Mode,
    RegionProposalSet, Split, TrainConfig, Trainer, Vec3,
};
use rand::Rng;

use super::*;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn elapsed(t: Instant) -> String {
    format!("{:.1}s", t.elapsed().as_secs_f64())
}

// ---------------------------------------------------------------- formats

fn random_tensor(rng: &mut impl Rng) -> TensorFile {
    let ndim = rng.random_range(1..=4);
    let dims: Vec<usize> = (0..ndim).map(|_| rng.random_range(1..=6)).collect();
    let n: usize = dims.iter().product();
    let data = match rng.random_range(0..3) {
        0 => TensorData::F32(
            (0..n)
                .map(|_| match rng.random_range(0..8) {
                    0 => f32::from_bits(rng.random()),
                    1 => -0.0,
                    2 => f32::MIN_POSITIVE / 3.0,
                    _ => rng.random_range(-1e3f32..1e3),
                })
                .collect(),
        ),
        1 => TensorData::U16((0..n).map(|_| rng.random()).collect()),
        _ => TensorData::U8((0..n).map(|_| rng.random()).collect()),
    };
    TensorFile::new(dims, data).expect("consistent tensor")
}

fn tensor_bits(t: &TensorFile) -> (Vec<usize>, Vec<u64>) {
    let bits = match t.data() {
        TensorData::F32(v) => v.iter().map(|x| x.to_bits() as u64).collect(),
        TensorData::U16(v) => v.iter().map(|&x| x as u64 | 1 << 40).collect(),
        TensorData::U8(v) => v.iter().map(|&x| x as u64 | 1 << 50).collect(),
    };
    (t.dims().to_vec(), bits)
}

fn random_camera(rng: &mut impl Rng, w: usize, h: usize) -> Camera {
    let eye = Vec3::new(
        rng.random_range(-3.0f32..3.0),
        rng.random_range(0.5f32..2.0),
        rng.random_range(2.0f32..3.0),
    );
    Camera {
        width: w,
        height: h,
        fx: rng.random_range(5.0f32..50.0),
        fy: rng.random_range(5.0f32..50.0),
        cx: w as f32 / 2.0,
        cy: h as f32 / 2.0,
        c2w: [0.0; 16],
        split: Split::Train,
    }
    .look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0))
}

fn random_checkpoint(rng: &mut impl Rng) -> Checkpoint {
    let res = [rng.random_range(2..4), rng.random_range(2..4), rng.random_range(2..4)];
    let d = rng.random_range(1..4);
    let mut field = FieldGrid::init(res, Aabb::cube(1.0), d, rng.random()).unwrap();
    randomize(&mut field, rng);
    let mut adam = AdamState::new(&field);
    for buf in [
        &mut adam.first.density,
        &mut adam.first.color,
        &mut adam.first.feature,
        &mut adam.second.density,
        &mut adam.second.color,
        &mut adam.second.feature,
    ] {
        for x in buf.iter_mut() {
            *x = f32::from_bits(rng.random::<u32>() & 0x3fff_ffff);
        }
    }
    adam.step = rng.random_range(0..100_000);
    let (w, h) = (rng.random_range(1..5), rng.random_range(1..5));
    let map = |rng: &mut dyn rand::RngCore| LabelMap::new(h, w, (0..w * h).map(|_| (rng.next_u32() % 5) as u16).collect());
    let pseudo = rng.random_bool(0.5).then(|| {
        let n_novel = rng.random_range(0..3);
        PseudoMapSet {
            train_maps: (0..rng.random_range(1..3)).map(|_| map(rng)).collect(),
            novel_maps: (0..n_novel).map(|_| map(rng)).collect(),
            novel_cameras: (0..n_novel).map(|_| random_camera(rng, w, h)).collect(),
            generated_at: rng.random_range(0..1000),
        }
    });
    let novel_poses = (0..rng.random_range(0..3)).map(|_| random_camera(rng, w, h)).collect();
    Checkpoint {
        field,
        adam,
        iteration: rng.random_range(0..20_000),
        config: TrainConfig {
            seed: rng.random(),
            ..TrainConfig::default()
        },
        pseudo,
        novel_poses,
    }
}

fn checkpoint_bits_equal(a: &Checkpoint, b: &Checkpoint) -> bool {
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let grids = |c: &Checkpoint| {
        [
            bits(&c.field.density_raw),
            bits(&c.field.color_raw),
            bits(&c.field.feature),
            bits(&c.adam.first.density),
            bits(&c.adam.first.color),
            bits(&c.adam.first.feature),
            bits(&c.adam.second.density),
            bits(&c.adam.second.color),
            bits(&c.adam.second.feature),
        ]
    };
    grids(a) == grids(b)
        && a.adam.step == b.adam.step
        && a.iteration == b.iteration
        && a.config == b.config
        && a.pseudo == b.pseudo
        && a.novel_poses == b.novel_poses
        && a.field.resolution == b.field.resolution
        && a.field.aabb == b.field.aabb
}

pub fn format_roundtrips(cases: usize, seed: u64) -> Outcome {
    let start = Instant::now();
    let mut rng = rng(seed);
    let mut failures = Vec::new();
    for i in 0..cases {
        let t = random_tensor(&mut rng);
        let bytes = t.encode();
        match TensorFile::decode(&bytes, Path::new("mem")) {
            Ok(back) if tensor_bits(&back) == tensor_bits(&t) && back.encode() == bytes => {}
            other => failures.push(format!("tensor case {i}: {:?}", other.err())),
        }
    }
    for i in 0..cases {
        let (h, w) = (rng.random_range(1..20), rng.random_range(1..20));
        let p = rng.random_range(0.0..1.0);
        let bits: Vec<bool> = (0..h * w).map(|_| rng.random_bool(p)).collect();
        let counts = encode_rle(&bits);
        match decode_rle(&counts, h, w) {
            Ok(back) if back == bits && encode_rle(&back) == counts => {}
            _ => failures.push(format!("rle case {i}")),
        }
    }
    let dir = tempfile::tempdir().expect("temp dir");
    for i in 0..cases {
        let ck = random_checkpoint(&mut rng);
        let path = dir.path().join(format!("ck{i}"));
        let ok = save_checkpoint(&path, &ck)
            .and_then(|_| load_checkpoint(&path))
            .map(|back| checkpoint_bits_equal(&back, &ck));
        if !matches!(ok, Ok(true)) {
            failures.push(format!("checkpoint case {i}: {ok:?}"));
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "{cases} tensor + {cases} RLE + {cases} checkpoint cases, {} failures{} in {}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default(),
            elapsed(start)
        ),
    )
}

// ---------------------------------------------------------------- renderer

pub fn renderer_physics(rays: usize, seed: u64) -> Outcome {
    let start = Instant::now();
    let mut field = FieldGrid::init([4; 3], Aabb::cube(1.0), 2, 0).unwrap();
    field.density_raw.fill(softplus_inverse(2.0));
    let ray = Ray {
        origin: Vec3::new(0.1, 0.2, 0.5),
        dir: Vec3::new(0.0, 0.0, -1.0),
        t_near: 0.0,
        t_far: 1.0,
        degenerate: false,
    };
    let s = sample_along_ray::<rand_chacha::ChaCha8Rng>(&ray, 256, SamplingMode::Uniform, None);
    let total: f32 = render_ray(&field, &ray, &s).weights.iter().sum();
    let expected = 1.0 - (-2.0f32).exp();
    let beer_ok = (total - expected).abs() <= 1e-3;

    let mut rng = rng(seed);
    let mut field = FieldGrid::init([8; 3], Aabb::cube(1.0), 3, 1).unwrap();
    randomize(&mut field, &mut rng);
    for x in &mut field.density_raw {
        *x = rng.random_range(-3.0f32..4.0);
    }
    let mut worst = 0.0f64;
    for _ in 0..rays {
        let origin = Vec3::new(
            rng.random_range(-2.0f32..2.0),
            rng.random_range(-2.0f32..2.0),
            rng.random_range(-2.0f32..2.0),
        );
        let target = Vec3::new(
            rng.random_range(-0.8f32..0.8),
            rng.random_range(-0.8f32..0.8),
            rng.random_range(-0.8f32..0.8),
        );
        let dir = (target - origin).normalized();
        let (t0, t1) = field.aabb.intersect(origin, dir).unwrap_or((0.0, 1.0));
        let ray = Ray {
            origin,
            dir,
            t_near: t0.max(0.0),
            t_far: t1,
            degenerate: !(t1 > t0.max(0.0)),
        };
        let n = rng.random_range(2..128);
        let s = sample_along_ray(&ray, n, SamplingMode::Stratified, Some(&mut rng));
        let r = render_ray(&field, &ray, &s);
        let sum: f64 = r.weights.iter().map(|&w| w as f64).sum::<f64>() + r.residual_t as f64;
        worst = worst.max((sum - 1.0).abs());
    }
    Outcome::new(
        beer_ok && worst <= 1e-5,
        format!(
            "σ=2 unit path Σw={total:.6} (expect {expected:.6}); max |Σw+T−1| over {rays} rays = {worst:.2e}; {}",
            elapsed(start)
        ),
    )
}

// ---------------------------------------------------------------- gradients

pub struct GradReport {
    pub name: &'static str,
    pub probes: usize,
    pub worst: f64,
}

impl GradReport {
    pub fn ok(&self) -> bool {
        self.probes >= 100 && self.worst <= 1e-3
    }
}

fn finish(name: &'static str, pairs: &[(f64, f64)]) -> GradReport {
    let scale = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let worst = pairs.iter().map(|&(a, f)| rel_err(a, f, scale)).fold(0.0, f64::max);
    GradReport {
        name,
        probes: pairs.len(),
        worst,
    }
}

fn random_param(rng: &mut impl Rng, vertex: usize, d: usize) -> Param {
    match rng.random_range(0..3) {
        0 => Param::Density(vertex),
        1 => Param::Color(vertex, rng.random_range(0..3)),
        _ => Param::Feature(vertex, rng.random_range(0..d)),
    }
}

fn analytic(grad: &GridGradient, p: Param, d: usize) -> f64 {
    (match p {
        Param::Density(v) => grad.density[v],
        Param::Color(v, c) => grad.color[v * 3 + c],
        Param::Feature(v, k) => grad.feature[v * d + k],
    }) as f64
}

const H: f64 = 1e-5;

pub fn grad_sample(seed: u64) -> GradReport {
    let mut rng = rng(seed);
    let d = 4;
    let mut field = FieldGrid::init([8; 3], Aabb::cube(1.0), d, 0).unwrap();
    randomize(&mut field, &mut rng);
    let base = RefField::from_grid(&field);
    let mut pairs = Vec::new();
    while pairs.len() < 120 {
        let p = Vec3::new(
            rng.random_range(-0.99f32..0.99),
            rng.random_range(-0.99f32..0.99),
            rng.random_range(-0.99f32..0.99),
        );
        let up = SampleUpstream {
            sigma: rng.random_range(-1.0f32..1.0),
            rgb: [0; 3].map(|_| rng.random_range(-1.0f32..1.0)),
            feat: (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        };
        let grads = field.sample_adjoint(p, &up);
        let pd = [p.x as f64, p.y as f64, p.z as f64];
        let scalar = |f: &RefField| {
            let (s, c, ft) = f.sample(pd);
            up.sigma as f64 * s
                + (0..3).map(|i| up.rgb[i] as f64 * c[i]).sum::<f64>()
                + (0..d).map(|k| up.feat[k] as f64 * ft[k]).sum::<f64>()
        };
        for g in &grads {
            let param = random_param(&mut rng, g.vertex, d);
            let a = match param {
                Param::Density(_) => g.density,
                Param::Color(_, c) => g.color[c],
                Param::Feature(_, k) => g.feature[k],
            } as f64;
            let mut f = base.clone();
            let x0 = *f.get_mut(param);
            let fd = central(
                |x| {
                    *f.get_mut(param) = x;
                    scalar(&f)
                },
                x0,
                H,
            );
            pairs.push((a, fd));
        }
    }
    finish("sample", &pairs)
}

pub fn grad_render_ray(seed: u64) -> GradReport {
    let mut rng = rng(seed);
    let d = 3;
    let mut field = FieldGrid::init([8; 3], Aabb::cube(1.0), d, 0).unwrap();
    randomize(&mut field, &mut rng);
    for x in &mut field.density_raw {
        *x = rng.random_range(-1.0f32..2.5);
    }
    let base = RefField::from_grid(&field);
    let mut pairs = Vec::new();
    for _ in 0..12 {
        let origin = Vec3::new(rng.random_range(-0.5f32..0.5), rng.random_range(-0.5f32..0.5), 2.5);
        let target = Vec3::new(rng.random_range(-0.5f32..0.5), rng.random_range(-0.5f32..0.5), -1.0);
        let dir = (target - origin).normalized();
        let (t0, t1) = field.aabb.intersect(origin, dir).unwrap();
        let ray = Ray {
            origin,
            dir,
            t_near: t0,
            t_far: t1,
            degenerate: false,
        };
        let s = sample_along_ray(&ray, 24, SamplingMode::Stratified, Some(&mut rng));
        let up_c = [0; 3].map(|_| rng.random_range(-1.0f32..1.0));
        let up_f: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let mut grad = GridGradient::zeros_like(&field);
        render_ray_adjoint(&field, &ray, &s, up_c, &up_f, &mut grad);
        let touched: Vec<usize> = (0..field.vertex_count()).filter(|&v| grad.density[v] != 0.0).collect();
        for _ in 0..12 {
            let v = touched[rng.random_range(0..touched.len())];
            let param = random_param(&mut rng, v, d);
            let mut f = base.clone();
            let x0 = *f.get_mut(param);
            let fd = central(
                |x| {
                    *f.get_mut(param) = x;
                    let r = render(&f, &ray, &s);
                    (0..3).map(|c| up_c[c] as f64 * r.color[c]).sum::<f64>()
                        + (0..d).map(|k| up_f[k] as f64 * r.feature[k]).sum::<f64>()
                },
                x0,
                H,
            );
            pairs.push((analytic(&grad, param, d), fd));
        }
    }
    finish("render_ray", &pairs)
}

pub fn grad_losses(seed: u64) -> Vec<GradReport> {
    let mut rng = rng(seed);
    let mut color = Vec::new();
    for _ in 0..40 {
        let r = [0; 3].map(|_| rng.random_range(0.0f32..1.0));
        let t = [0; 3].map(|_| rng.random_range(0.0f32..1.0));
        let (_, g) = loss_color(r, t);
        for i in 0..3 {
            let fd = central(
                |x| {
                    let mut rr = r.map(|v| v as f64);
                    rr[i] = x;
                    super::loss_color(&rr, &t)
                },
                r[i] as f64,
                H,
            );
            color.push((g[i] as f64, fd));
        }
    }
    let d = 8;
    let mut feat = Vec::new();
    let mut grad = vec![0.0f32; d];
    for _ in 0..20 {
        let r: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let t: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        loss_feat(&r, &t, &mut grad);
        for i in 0..d {
            let fd = central(
                |x| {
                    let mut rr: Vec<f64> = r.iter().map(|&v| v as f64).collect();
                    rr[i] = x;
                    super::loss_feat(&rr, &t)
                },
                r[i] as f64,
                H,
            );
            feat.push((grad[i] as f64, fd));
        }
    }
    let text = random_embeddings(5, d, 0.5, seed).unwrap();
    let mut map = Vec::new();
    let mut scratch = MapScratch::default();
    for _ in 0..20 {
        let r: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let target = rng.random_range(0..5);
        let tau = [0.1f32, 0.5, 1.0][rng.random_range(0..3)];
        loss_map(&r, target, &text, tau, &mut scratch, &mut grad).unwrap();
        for i in 0..d {
            let fd = central(
                |x| {
                    let mut rr: Vec<f64> = r.iter().map(|&v| v as f64).collect();
                    rr[i] = x;
                    super::loss_map(&rr, target, &text, tau as f64)
                },
                r[i] as f64,
                H,
            );
            map.push((grad[i] as f64, fd));
        }
    }
    vec![
        finish("loss_color", &color),
        finish("loss_feat", &feat),
        finish("loss_map", &map),
    ]
}

/// Small four-view scene for whole-batch gradient checks.
pub fn tiny_scene(seed: u64) -> ovnerf_core::SceneDataset {
    let mut spec = SyntheticSceneSpec::threebox();
    spec.width = 12;
    spec.height = 12;
    spec.orbit.count = 5;
    spec.orbit.fov_deg = 50.0;
    spec.seed = seed;
    ovnerf_core::synth::build_scene(&spec).unwrap()
}

/// Reference batch loss at `field` for the samples the trainer uses. With
/// `frozen` set, the semantic terms use render weights from that field,
/// which is the objective optimized when semantic losses do not reach density.
pub fn reference_batch_loss(
    field: &RefField,
    frozen: Option<&RefField>,
    samples: &[ovnerf_core::train::BatchSample],
    text: &ovnerf_core::TextEmbeddings,
    c: &TrainConfig,
) -> f64 {
    let mut total = 0.0;
    for s in samples {
        let mut r = render(field, &s.ray, &s.sampling);
        if let Some(base) = frozen {
            let w = render(base, &s.ray, &s.sampling).weights;
            r.feature = features_with_weights(field, &s.ray, &s.sampling, &w);
        }
        if let Some(t) = &s.color {
            total += c.lambda_color as f64 * super::loss_color(&r.color, t);
        }
        if let Some(t) = &s.feature {
            total += c.lambda_feat as f64 * super::loss_feat(&r.feature, t);
        }
        total += c.lambda_map as f64 * super::loss_map(&r.feature, s.label as usize, text, c.ce_temperature as f64);
    }
    total / samples.len() as f64
}

/// Whole-batch gradient of the trainer against the f64 reference, in
/// stage I (mode rsr) and in stage II with novel-view rays (mode full),
/// with semantic losses coupled to density (`coupled`) or not.
pub fn grad_total(seed: u64, coupled: bool) -> GradReport {
    let scene = tiny_scene(seed);
    let mut rng = rng(seed);
    let mut pairs = Vec::new();
    for mode in [Mode::Rsr, Mode::Full] {
        let mut cfg = TrainConfig {
            mode,
            total_iters: 4,
            batch_rays: 4,
            samples_per_ray: 16,
            grid_resolution: [8; 3],
            seed,
            semantic_density_grad: coupled,
            ..TrainConfig::default()
        };
        cfg.schedule.start_iter = Some(1);
        cfg.schedule.interval = Some(1);
        cfg.schedule.novel_count = 3;
        let mut trainer = Trainer::new(cfg.clone(), &scene).unwrap();
        randomize(&mut trainer.field, &mut rng);
        let iter = if mode == Mode::Full {
            trainer.step().unwrap();
            trainer.regenerate().unwrap();
            1
        } else {
            0
        };
        let mut grad = GridGradient::zeros_like(&trainer.field);
        trainer.batch_gradient(iter, &mut grad).unwrap();
        let samples = trainer.batch_samples(iter);
        assert!(mode == Mode::Rsr || samples.iter().any(|s| s.color.is_none()));
        let base = RefField::from_grid(&trainer.field);
        let d = trainer.field.feature_dim;
        let touched: Vec<usize> = (0..trainer.field.vertex_count())
            .filter(|&v| grad.density[v] != 0.0 || grad.feature[v * d..(v + 1) * d].iter().any(|&g| g != 0.0))
            .collect();
        for _ in 0..60 {
            let v = touched[rng.random_range(0..touched.len())];
            let param = random_param(&mut rng, v, d);
            let mut f = base.clone();
            let x0 = *f.get_mut(param);
            let fd = central(
                |x| {
                    *f.get_mut(param) = x;
                    reference_batch_loss(&f, (!coupled).then_some(&base), &samples, &scene.text, &cfg)
                },
                x0,
                H,
            );
            pairs.push((analytic(&grad, param, d), fd));
        }
    }
    finish(if coupled { "total loss" } else { "total loss, detached" }, &pairs)
}

pub fn gradient_suite(seed: u64) -> (Outcome, Vec<GradReport>) {
    let start = Instant::now();
    let mut reports = vec![grad_sample(seed), grad_render_ray(seed + 1)];
    reports.extend(grad_losses(seed + 2));
    let pass = reports.iter().all(|r| r.ok());
    let totals = [grad_total(seed + 3, true), grad_total(seed + 4, false)];
    let list = |rs: &[GradReport]| {
        rs.iter()
            .map(|r| format!("{} {}/{:.1e}", r.name, r.probes, r.worst))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let detail = format!(
        "probes/worst rel err: {}; assembled (not scored): {}; {}",
        list(&reports),
        list(&totals),
        elapsed(start)
    );
    reports.extend(totals);
    (Outcome::new(pass, detail), reports)
}

// ---------------------------------------------------------------- rsr

/// Independent refiner: plain per-pixel loops over decoded masks.
pub fn oracle_refine(input: &LabelMap, props: &RegionProposalSet) -> Vec<u16> {
    let n = input.len();
    let masks: Vec<Vec<bool>> = props
        .masks
        .iter()
        .map(|m| decode_rle(&m.counts, props.height, props.width).unwrap())
        .collect();
    let mut out = input.data.clone();
    for m in &masks {
        let max_label = input.data.iter().copied().max().unwrap_or(0) as usize;
        let mut hist = vec![0usize; max_label + 1];
        for p in 0..n {
            if m[p] {
                hist[input.data[p] as usize] += 1;
            }
        }
        let best = *hist.iter().max().unwrap();
        if best == 0 {
            continue;
        }
        let winner = hist.iter().position(|&c| c == best).unwrap() as u16;
        for p in 0..n {
            if m[p] {
                out[p] = winner;
            }
        }
    }
    out
}

pub fn random_rsr_case(rng: &mut impl Rng) -> (LabelMap, RegionProposalSet) {
    let (h, w) = (rng.random_range(1..14), rng.random_range(1..14));
    let classes = rng.random_range(1..6);
    let labels = LabelMap::new(h, w, (0..h * w).map(|_| rng.random_range(0..classes)).collect());
    let n = rng.random_range(0..7);
    let masks: Vec<Mask> = (0..n)
        .map(|_| {
            let mut m = Mask::new(h, w);
            match rng.random_range(0..3) {
                0 => {}
                1 => {
                    let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
                    let (y1, x1) = (rng.random_range(y0..h), rng.random_range(x0..w));
                    for y in y0..=y1 {
                        for x in x0..=x1 {
                            m.bits[y * w + x] = true;
                        }
                    }
                }
                _ => {
                    let p = rng.random_range(0.0..1.0);
                    for b in &mut m.bits {
                        *b = rng.random_bool(p);
                    }
                }
            }
            m
        })
        .collect();
    (labels.clone(), RegionProposalSet::from_masks(h, w, &masks))
}

pub struct RsrReport {
    pub cases: usize,
    pub mismatches: usize,
    pub impure: usize,
    pub non_idempotent: usize,
    pub non_idempotent_disjoint: usize,
    pub disjoint_cases: usize,
}

fn disjoint(props: &RegionProposalSet) -> bool {
    let mut seen = vec![false; props.height * props.width];
    for m in &props.masks {
        for (s, l) in m.foreground_runs() {
            for p in s..s + l {
                if seen[p] {
                    return false;
                }
                seen[p] = true;
            }
        }
    }
    true
}

pub fn rsr_suite(cases: usize, seed: u64) -> RsrReport {
    let mut rng = rng(seed);
    let mut r = RsrReport {
        cases,
        mismatches: 0,
        impure: 0,
        non_idempotent: 0,
        non_idempotent_disjoint: 0,
        disjoint_cases: 0,
    };
    for _ in 0..cases {
        let (labels, props) = random_rsr_case(&mut rng);
        let out = rsr_refine(&labels, &props).unwrap();
        if out.labels.data != oracle_refine(&labels, &props) {
            r.mismatches += 1;
        }
        let pure = final_footprints(&props).iter().zip(&out.region_classes).all(|(fp, cls)| match cls {
            Some(c) => fp.iter().all(|&p| out.labels.data[p] == *c),
            None => true,
        });
        if !pure {
            r.impure += 1;
        }
        let twice = rsr_refine(&out.labels, &props).unwrap();
        let idem = twice.labels == out.labels;
        if !idem {
            r.non_idempotent += 1;
        }
        if disjoint(&props) {
            r.disjoint_cases += 1;
            if !idem {
                r.non_idempotent_disjoint += 1;
            }
        }
    }
    r
}

// ---------------------------------------------------------------- metrics

pub fn metric_suite(cases: usize, seed: u64) -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    let gt = LabelMap::new(2, 2, vec![0, 1, 2, 1]);
    let mut c = ConfusionMatrix::new(3);
    c.accumulate(&gt, &gt).unwrap();
    let perfect = c.miou().unwrap() == 1.0 && c.macc().unwrap() == 1.0;
    if !perfect {
        notes.push("perfect".to_string());
    }
    let gt = LabelMap::new(2, 2, vec![0, 0, 1, 1]);
    let pred = LabelMap::filled(2, 2, 0);
    let mut c = ConfusionMatrix::new(2);
    c.accumulate(&gt, &pred).unwrap();
    let (mi, ma) = (c.miou().unwrap(), c.macc().unwrap());
    if (mi - 0.25).abs() > 1e-12 || (ma - 0.5).abs() > 1e-12 {
        notes.push(format!("balanced: miou={mi} macc={ma}"));
    }
    let mut rng = rng(seed);
    let mut bad = 0;
    for _ in 0..cases {
        let m = rng.random_range(1..7);
        let counts: Vec<u64> = (0..m * m)
            .map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(0..50) })
            .collect();
        let c = ConfusionMatrix::from_counts(m, counts);
        if let (Ok(mi), Ok(ma)) = (c.miou(), c.macc()) {
            if ma + 1e-12 < mi {
                bad += 1;
            }
        }
    }
    Outcome::new(
        notes.is_empty() && bad == 0,
        format!(
            "perfect=1/1, balanced all-A miou={mi:.3} macc={ma:.3}, macc<miou in {bad}/{cases} random; {}",
            elapsed(start)
        ),
    )
}

// ---------------------------------------------------------------- training runs

/// Configuration used by the end-to-end criteria.
pub fn e2e_config(mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        total_iters: 3000,
        batch_rays: 1024,
        samples_per_ray: 64,
        grid_resolution: [64; 3],
        seed,
        threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        checkpoint_every: 0,
        log_every: 500,
        ..TrainConfig::default()
    }
}

/// Trains and returns the test-view mIoU.
pub fn train_and_eval(scene: &ovnerf_core::SceneDataset, cfg: TrainConfig, out: &Path) -> ovnerf_core::Result<f64> {
    let mut t = Trainer::new(cfg, scene)?;
    t.run(out)?;
    let c = &t.config;
    Ok(evaluate_field(&t.field, scene, c.samples_per_ray, c.ray_bounds)?.miou)
}

pub fn noise_free_e2e() -> Outcome {
    let start = Instant::now();
    let mut spec = SyntheticSceneSpec::threebox();
    spec.corruption = ovnerf_core::CorruptionParams::none();
    let scene = ovnerf_core::synth::build_scene(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    match train_and_eval(&scene, e2e_config(Mode::Full, 0), dir.path()) {
        Ok(miou) => Outcome::new(
            miou >= 0.95,
            format!("threebox clean, full, 3000 it, 64³: test mIoU {miou:.4} (need ≥ 0.95); {}", elapsed(start)),
        ),
        Err(e) => Outcome::new(false, format!("training failed: {e}")),
    }
}

pub struct AblationReport {
    pub per_seed: Vec<[f64; 3]>,
    pub means: [f64; 3],
}

pub fn ablation(seeds: &[u64]) -> ovnerf_core::Result<AblationReport> {
    let mut per_seed = Vec::new();
    for &seed in seeds {
        let mut spec = SyntheticSceneSpec::threebox();
        spec.seed = seed;
        let scene = ovnerf_core::synth::build_scene(&spec)?;
        let mut row = [0.0; 3];
        for (i, mode) in [Mode::Baseline, Mode::Rsr, Mode::Full].into_iter().enumerate() {
            let dir = tempfile::tempdir().expect("temp dir");
            row[i] = train_and_eval(&scene, e2e_config(mode, seed), dir.path())?;
        }
        per_seed.push(row);
    }
    let n = per_seed.len() as f64;
    let means = [0, 1, 2].map(|i| per_seed.iter().map(|r| r[i]).sum::<f64>() / n);
    Ok(AblationReport { per_seed, means })
}

/// Small full-mode configuration that reaches stage II quickly.
pub fn small_config(seed: u64, threads: usize) -> TrainConfig {
    let mut c = TrainConfig {
        mode: Mode::Full,
        total_iters: 40,
        batch_rays: 300,
        samples_per_ray: 16,
        grid_resolution: [16; 3],
        seed,
        threads,
        checkpoint_every: 0,
        log_every: 10,
        ..TrainConfig::default()
    };
    c.schedule.start_iter = Some(20);
    c.schedule.interval = Some(8);
    c.schedule.novel_count = 4;
    c
}

pub fn small_scene() -> ovnerf_core::SceneDataset {
    let mut spec = SyntheticSceneSpec::threebox();
    spec.width = 24;
    spec.height = 24;
    spec.orbit.count = 12;
    ovnerf_core::synth::build_scene(&spec).unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Two fresh runs, a run resumed from a mid-stage-II checkpoint, and a
/// multi-threaded run must write byte-identical final checkpoints.
pub fn determinism() -> Outcome {
    let start = Instant::now();
    let scene = small_scene();
    let root = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: usize| {
        let out = root.path().join(name);
        let mut t = Trainer::new(small_config(5, threads), &scene).unwrap();
        t.run(&out).unwrap();
        dir_bytes(&out.join("checkpoint"))
    };
    let a = run("a", 1);
    let b = run("b", 1);
    let mt = run("mt", 3);
    // stop at 28 (stage II, between regenerations), then resume to the end
    let part = root.path().join("part");
    let mut cfg = small_config(5, 1);
    cfg.total_iters = 40;
    let mut t = Trainer::new(cfg, &scene).unwrap();
    while t.iteration < 28 {
        t.step().unwrap();
    }
    t.save(part.join("checkpoint")).unwrap();
    drop(t);
    let mut resumed = Trainer::resume_from_dir(part.join("checkpoint"), &scene, None).unwrap();
    let out = root.path().join("resumed");
    resumed.run(&out).unwrap();
    let r = dir_bytes(&out.join("checkpoint"));
    let same_ab = a == b;
    let same_resume = a == r;
    let same_mt = a == mt;

    Outcome::new(
        same_ab && same_resume && same_mt,
        format!(
            "fresh/fresh {}, fresh/resumed@28 {}, 1 vs 3 threads {} ({} files); {}",
            if same_ab { "identical" } else { "DIFFER" },
            if same_resume { "identical" } else { "DIFFER" },
            if same_mt { "identical" } else { "DIFFER" },
            a.len(),
            elapsed(start)
        ),
    )
}
