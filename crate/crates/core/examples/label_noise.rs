//! Reports how far the synthetic relevancy labels of a preset scene are
//! from ground truth, before and after region-vote refinement.
//!
//! Usage: `cargo run --release --example label_noise -- [preset] [seed]`

use ovnerf_core::relevancy::{relevancy_image, RelevancySource};
use ovnerf_core::synth::{build_scene, SyntheticSceneSpec};
use ovnerf_core::{rsr_refine, ConfusionMatrix};

fn main() -> ovnerf_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "threebox".into());
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(0);
    let mut spec = SyntheticSceneSpec::preset(&preset)?;
    spec.seed = seed;
    let scene = build_scene(&spec)?;
    let mut raw = ConfusionMatrix::new(scene.text.classes);
    let mut refined = ConfusionMatrix::new(scene.text.classes);
    for v in scene.train_views() {
        let gt = v.gt.as_ref().expect("synthetic views carry gt");
        let labels = relevancy_image(v.features.as_ref().unwrap(), &scene.text, RelevancySource::ClipPrecomputed).labels;
        raw.accumulate(gt, &labels)?;
        let r = rsr_refine(&labels, v.proposals.as_ref().unwrap())?;
        refined.accumulate(gt, &r.labels)?;
    }
    println!("raw     miou={:.4} macc={:.4}", raw.miou()?, raw.macc()?);
    println!("refined miou={:.4} macc={:.4}", refined.miou()?, refined.macc()?);
    Ok(())
}
