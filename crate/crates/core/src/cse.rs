//! Cross-view self-enhancement: pseudo label maps regenerated from the
//! field itself, for training views and for synthesized in-between views,
//! each cleaned by region voting.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::image::{Image, LabelMap};
use crate::data::rle::{Mask, RegionProposalSet};
use crate::data::scene::{view_name, write_cameras, Camera, SceneDataset, Split};
use crate::data::tensor::write_tensor;
use crate::error::{Error, Result};
use crate::field::FieldGrid;
use crate::math::{Quat, Vec3};
use crate::morph::connected_components;
use crate::relevancy::{relevancy_image, RelevancySource};
use crate::render::{render_image, RayBounds};
use crate::rsr::rsr_refine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CseSchedule {
    /// First iteration of stage II (`T`).
    pub start_iter: u64,
    /// Regeneration interval (`N`).
    pub interval: u64,
    /// Number of synthesized views (`N⁺`).
    pub novel_count: usize,
}

impl CseSchedule {
    /// `T = ⌈2/3·total⌉`, `N = ⌈total/15⌉`: 10 000 and 1 000 at 15 000 iterations.
    pub fn for_total(total_iters: u64, novel_count: usize) -> Self {
        CseSchedule {
            start_iter: (2 * total_iters).div_ceil(3),
            interval: total_iters.div_ceil(15).max(1),
            novel_count,
        }
    }

    pub fn validate(&self, total_iters: u64) -> Result<()> {
        if !(self.start_iter > 0 && self.start_iter < total_iters) {
            return Err(Error::invalid(
                "schedule.start_iter",
                format!("must lie in (0, {total_iters})"),
            ));
        }
        if self.interval == 0 {
            return Err(Error::invalid("schedule.interval", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CseAction {
    Stage1,
    RegenerateNow,
    Stage2Continue,
}

pub fn cse_action(iter: u64, schedule: &CseSchedule) -> CseAction {
    if iter < schedule.start_iter {
        CseAction::Stage1
    } else if (iter - schedule.start_iter) % schedule.interval == 0 {
        CseAction::RegenerateNow
    } else {
        CseAction::Stage2Continue
    }
}

/// Render settings shared by every pseudo-map pass.
#[derive(Debug, Clone, Copy)]
pub struct PseudoRender {
    pub samples_per_ray: usize,
    pub bounds: RayBounds,
}

fn render_labels(field: &FieldGrid, camera: &Camera, text: &crate::data::scene::TextEmbeddings, opts: PseudoRender) -> (Image, LabelMap) {
    let r = render_image(field, camera, opts.samples_per_ray, opts.bounds, 1024);
    let labels = relevancy_image(&r.feature, text, RelevancySource::Rendered).labels;
    (r.color, labels)
}

/// Render every training view, take argmax relevancy, and refine with that
/// view's stored proposals. Returned in training-view order.
pub fn update_train_pseudo_maps(field: &FieldGrid, scene: &SceneDataset, opts: PseudoRender) -> Result<Vec<LabelMap>> {
    let views: Vec<_> = scene.train_views().collect();
    views
        .par_iter()
        .map(|v| {
            let (_, labels) = render_labels(field, &v.camera, &scene.text, opts);
            let props = v
                .proposals
                .as_ref()
                .ok_or_else(|| Error::MissingFile(format!("masks/{}.json", v.name).into()))?;
            Ok(rsr_refine(&labels, props)?.labels)
        })
        .collect()
}

/// `count` poses at `u_j = (j + ½)/count` along the piecewise trajectory
/// through `cameras`: translation interpolated linearly, rotation by slerp,
/// intrinsics from the bracketing start camera.
pub fn synthesize_novel_poses(cameras: &[Camera], count: usize) -> Result<Vec<Camera>> {
    if cameras.len() < 2 {
        return Err(Error::invalid(
            "novel poses",
            "need at least two training cameras",
        ));
    }
    let segments = cameras.len() - 1;
    Ok((0..count)
        .map(|j| {
            let u = (j as f64 + 0.5) / count as f64;
            let s = u * segments as f64;
            let i = (s.floor() as usize).min(segments - 1);
            let frac = s - i as f64;
            let (a, b) = (&cameras[i], &cameras[i + 1]);
            let qa = Quat::from_mat3(&a.rotation());
            let qb = Quat::from_mat3(&b.rotation());
            let rot = qa.slerp(qb, frac).to_mat3();
            let ta = a.translation();
            let tb = b.translation();
            let t = Vec3::new(
                (ta.x as f64 + (tb.x as f64 - ta.x as f64) * frac) as f32,
                (ta.y as f64 + (tb.y as f64 - ta.y as f64) * frac) as f32,
                (ta.z as f64 + (tb.z as f64 - ta.z as f64) * frac) as f32,
            );
            let mut cam = a.with_pose(&rot, t);
            cam.split = Split::Train;
            cam
        })
        .collect())
}

/// Region proposals for an image that has no precomputed ones.
pub trait ProposalProvider: Sync {
    fn proposals(&self, image: &Image) -> Result<RegionProposalSet>;
}

/// Provides nothing; refinement becomes a no-op.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoProposals;

impl ProposalProvider for NoProposals {
    fn proposals(&self, image: &Image) -> Result<RegionProposalSet> {
        Ok(RegionProposalSet::empty(image.height, image.width))
    }
}

/// Snaps each pixel to the nearest palette color and proposes every
/// 4-connected component of at least `min_area` pixels, largest first.
#[derive(Debug, Clone, PartialEq)]
pub struct PaletteProvider {
    pub palette: Vec<[f32; 3]>,
    pub min_area: usize,
}

impl PaletteProvider {
    pub const DEFAULT_MIN_AREA: usize = 20;

    /// Palette of 8-bit colors that each cover at least `min_fraction` of
    /// the given images' pixels, most frequent first, at most `max_colors`.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a Image>, min_fraction: f64, max_colors: usize) -> Self {
        let mut counts: HashMap<[u8; 3], u64> = HashMap::new();
        let mut total = 0u64;
        for img in images {
            for p in 0..img.pixel_count() {
                let px = img.pixel(p);
                let key = [0, 1, 2].map(|c| crate::data::image::to_u8(px[c]));
                *counts.entry(key).or_default() += 1;
                total += 1;
            }
        }
        let mut colors: Vec<([u8; 3], u64)> = counts
            .into_iter()
            .filter(|&(_, n)| n as f64 >= min_fraction * total as f64)
            .collect();
        colors.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        colors.truncate(max_colors);
        PaletteProvider {
            palette: colors
                .into_iter()
                .map(|(c, _)| c.map(|v| v as f32 / 255.0))
                .collect(),
            min_area: Self::DEFAULT_MIN_AREA,
        }
    }

    pub fn quantize(&self, image: &Image) -> Vec<u16> {
        (0..image.pixel_count())
            .map(|p| {
                let px = image.pixel(p);
                let mut best = 0;
                let mut best_d = f32::INFINITY;
                for (i, c) in self.palette.iter().enumerate() {
                    let d = (0..3).map(|k| (px[k] - c[k]).powi(2)).sum::<f32>();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                best as u16
            })
            .collect()
    }
}

impl ProposalProvider for PaletteProvider {
    fn proposals(&self, image: &Image) -> Result<RegionProposalSet> {
        if self.palette.is_empty() {
            return Err(Error::invalid("palette", "empty palette"));
        }
        let snapped = self.quantize(image);
        let mut comps: Vec<_> = connected_components(&snapped, image.height, image.width)
            .into_iter()
            .filter(|c| c.pixels.len() >= self.min_area)
            .collect();
        comps.sort_by(|a, b| b.pixels.len().cmp(&a.pixels.len()));
        let masks: Vec<Mask> = comps
            .iter()
            .map(|c| {
                let mut m = Mask::new(image.height, image.width);
                for &p in &c.pixels {
                    m.bits[p] = true;
                }
                m
            })
            .collect();
        Ok(RegionProposalSet::from_masks(image.height, image.width, &masks))
    }
}

/// Render each novel camera, take argmax labels, ask `provider` for
/// proposals on the rendered color image, and refine. A provider failure
/// drops that view (`None`).
pub fn synthesize_novel_pseudo_maps(
    field: &FieldGrid,
    cameras: &[Camera],
    text: &crate::data::scene::TextEmbeddings,
    provider: &dyn ProposalProvider,
    opts: PseudoRender,
) -> Result<Vec<Option<LabelMap>>> {
    cameras
        .par_iter()
        .enumerate()
        .map(|(i, cam)| {
            let (color, labels) = render_labels(field, cam, text, opts);
            match provider.proposals(&color) {
                Ok(props) => Ok(Some(rsr_refine(&labels, &props)?.labels)),
                Err(e) => {
                    log::warn!("novel view {i}: proposal provider failed ({e}); view excluded");
                    Ok(None)
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoMapSet {
    pub train_maps: Vec<LabelMap>,
    pub novel_maps: Vec<LabelMap>,
    pub novel_cameras: Vec<Camera>,
    pub generated_at: u64,
}

impl PseudoMapSet {
    /// Full regeneration for training views plus the given novel poses.
    pub fn generate(
        field: &FieldGrid,
        scene: &SceneDataset,
        novel_poses: &[Camera],
        provider: &dyn ProposalProvider,
        opts: PseudoRender,
        iteration: u64,
    ) -> Result<Self> {
        let train_maps = update_train_pseudo_maps(field, scene, opts)?;
        let novel = synthesize_novel_pseudo_maps(field, novel_poses, &scene.text, provider, opts)?;
        let mut novel_maps = Vec::new();
        let mut novel_cameras = Vec::new();
        for (map, cam) in novel.into_iter().zip(novel_poses) {
            if let Some(m) = map {
                novel_maps.push(m);
                novel_cameras.push(cam.clone());
            }
        }
        Ok(PseudoMapSet {
            train_maps,
            novel_maps,
            novel_cameras,
            generated_at: iteration,
        })
    }

    /// `train/<idx>.ovnt`, `novel/<idx>.ovnt` label tensors, `cameras.json`
    /// for the novel poses, and `meta.json`.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (i, m) in self.train_maps.iter().enumerate() {
            write_tensor(dir.join(format!("train/{}.ovnt", view_name(i))), &m.to_tensor())?;
        }
        for (i, m) in self.novel_maps.iter().enumerate() {
            write_tensor(dir.join(format!("novel/{}.ovnt", view_name(i))), &m.to_tensor())?;
        }
        if !self.novel_cameras.is_empty() {
            let cams: Vec<(String, Camera)> = self
                .novel_cameras
                .iter()
                .enumerate()
                .map(|(i, c)| (view_name(i), c.clone()))
                .collect();
            write_cameras(dir.join("cameras.json"), &cams)?;
        }
        crate::data::scene::write_json(
            &dir.join("meta.json"),
            &serde_json::json!({
                "generated_at": self.generated_at,
                "train_maps": self.train_maps.len(),
                "novel_maps": self.novel_maps.len(),
            }),
        )
    }
}
