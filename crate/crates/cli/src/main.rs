//! `ovnerf` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation or I/O error,
//! 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ovnerf_core::cse::{NoProposals, PaletteProvider, ProposalProvider, PseudoMapSet, PseudoRender};
use ovnerf_core::data::rle::RegionProposalSet;
use ovnerf_core::data::scene::{read_cameras, read_proposals};
use ovnerf_core::eval::evaluate_field;
use ovnerf_core::relevancy::{relevancy_image, RelevancySource};
use ovnerf_core::train::NovelProposals;
use ovnerf_core::{
    load_checkpoint, load_scene, read_tensor, render_image, rsr_refine, synth, write_tensor, Error, LabelMap, Mode,
    SyntheticSceneSpec, TextEmbeddings, TrainConfig, Trainer,
};

#[derive(Parser)]
#[command(name = "ovnerf", version, about = "Open-vocabulary semantic radiance fields on a voxel grid")]
struct Cli {
    /// Worker threads; falls back to OVNERF_THREADS, then 1.
    #[arg(long, global = true, env = "OVNERF_THREADS")]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export a synthetic scene directory.
    Synth {
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        /// JSON scene specification.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Disable all label, feature, and proposal corruption.
        #[arg(long)]
        clean: bool,
    },
    /// Train a field on a scene.
    Train {
        #[arg(long)]
        scene: PathBuf,
        /// JSON training configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iters: Option<u64>,
        /// Continue from this checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render one view of a checkpoint.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        view: usize,
        #[arg(long)]
        out: PathBuf,
        /// Scene to take cameras and embeddings from instead of the checkpoint.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Region-vote refinement of a label map.
    Refine {
        /// H×W u16 label tensor.
        #[arg(long)]
        labels: PathBuf,
        /// Region proposal JSON.
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate and dump pseudo label maps from a checkpoint.
    Pseudo {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a scene's test views.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Per-class CSV; defaults to `eval.csv` inside the checkpoint.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_env("OVNERF_LOG")
        .init();
    let threads = cli.threads.unwrap_or(1).max(1);
    // ignore failure: the pool may already exist in tests
    let _ = ovnerf_core::train::init_global_threads(threads);
    match run(cli.command, threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn run(command: Command, threads: usize) -> ovnerf_core::Result<()> {
    match command {
        Command::Synth {
            preset,
            spec,
            out,
            seed,
            clean,
        } => {
            let mut spec = match (preset, spec) {
                (_, Some(path)) => SyntheticSceneSpec::from_json_file(path)?,
                (Some(name), None) => SyntheticSceneSpec::preset(&name)?,
                (None, None) => SyntheticSceneSpec::threebox(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            if clean {
                spec.corruption = synth::CorruptionParams::none();
            }
            let scene = synth::export_scene(&spec, &out)?;
            println!(
                "wrote {} views ({} train) to {}",
                scene.views.len(),
                scene.train_views().count(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            scene,
            config,
            out,
            mode,
            seed,
            iters,
            resume,
        } => {
            let dataset = load_scene(&scene)?;
            let mut trainer = match resume {
                Some(dir) => Trainer::resume_from_dir(dir, &dataset, Some(threads))?,
                None => {
                    let mut cfg = match config {
                        Some(p) => TrainConfig::from_json_file(p)?,
                        None => TrainConfig::default(),
                    };
                    if let Some(m) = mode {
                        cfg.mode = m;
                    }
                    if let Some(s) = seed {
                        cfg.seed = s;
                    }
                    if let Some(n) = iters {
                        cfg.total_iters = n;
                    }
                    cfg.threads = threads;
                    Trainer::new(cfg, &dataset)?
                }
            };
            let history = trainer.run(&out)?;
            if let Some(last) = history.last() {
                println!("iter={} loss={:.6}", last.iteration, last.total);
            }
            println!("checkpoint: {}", out.join("checkpoint").display());
            Ok(())
        }
        Command::Render {
            ckpt,
            view,
            out,
            scene,
        } => {
            let ck = load_checkpoint(&ckpt)?;
            let (cameras, text) = match scene {
                Some(dir) => {
                    let s = load_scene(dir)?;
                    (s.views.into_iter().map(|v| v.camera).collect::<Vec<_>>(), s.text)
                }
                None => (
                    read_cameras(ckpt.join("cameras.json"))?
                        .into_iter()
                        .map(|(_, c)| c)
                        .collect(),
                    TextEmbeddings::from_tensor(read_tensor(ckpt.join("text.ovnt"))?)?,
                ),
            };
            let camera = cameras.get(view).ok_or_else(|| Error::Invalid {
                field: "--view".into(),
                reason: format!("view {view} out of range (scene has {})", cameras.len()),
            })?;
            let c = &ck.config;
            let r = render_image(&ck.field, camera, c.samples_per_ray, c.ray_bounds, 1024);
            let labels = relevancy_image(&r.feature, &text, RelevancySource::Rendered).labels;
            r.color.save(out.join("rgb.ovnt"))?;
            r.color.write_ppm(out.join("rgb.ppm"))?;
            r.feature.save(out.join("feat.ovnt"))?;
            write_tensor(out.join("labels.ovnt"), &labels.to_tensor())?;
            labels.write_pgm(out.join("labels.pgm"), text.classes)?;
            println!("rendered view {view} to {}", out.display());
            Ok(())
        }
        Command::Refine { labels, masks, out } => {
            let input = LabelMap::from_tensor(read_tensor(&labels)?, &labels.display().to_string())?;
            let props: RegionProposalSet = read_proposals(&masks)?;
            let refined = rsr_refine(&input, &props)?;
            write_tensor(&out, &refined.labels.to_tensor())?;
            Ok(())
        }
        Command::Pseudo { ckpt, scene, out } => {
            let ck = load_checkpoint(&ckpt)?;
            let dataset = load_scene(&scene)?;
            let poses = if ck.novel_poses.is_empty() {
                let cams: Vec<_> = dataset.train_views().map(|v| v.camera.clone()).collect();
                ovnerf_core::cse::synthesize_novel_poses(&cams, ck.config.schedule.novel_count)?
            } else {
                ck.novel_poses.clone()
            };
            let provider: Box<dyn ProposalProvider> = match ck.config.novel_proposals {
                NovelProposals::Palette => Box::new(PaletteProvider::from_images(
                    dataset.train_views().map(|v| &v.rgb),
                    ovnerf_core::train::PALETTE_MIN_FRACTION,
                    ovnerf_core::train::PALETTE_MAX_COLORS,
                )),
                NovelProposals::None => Box::new(NoProposals),
            };
            let opts = PseudoRender {
                samples_per_ray: ck.config.samples_per_ray,
                bounds: ck.config.ray_bounds,
            };
            let set = PseudoMapSet::generate(&ck.field, &dataset, &poses, provider.as_ref(), opts, ck.iteration)?;
            set.dump(&out)?;
            println!(
                "wrote {} train and {} novel pseudo maps to {}",
                set.train_maps.len(),
                set.novel_maps.len(),
                out.display()
            );
            Ok(())
        }
        Command::Eval { ckpt, scene, csv } => {
            let ck = load_checkpoint(&ckpt)?;
            let dataset = load_scene(&scene)?;
            let report = evaluate_field(&ck.field, &dataset, ck.config.samples_per_ray, ck.config.ray_bounds)?;
            let csv = csv.unwrap_or_else(|| ckpt.join("eval.csv"));
            report.save_csv(&csv)?;
            println!("miou={:.6} macc={:.6}", report.miou, report.macc);
            Ok(())
        }
    }
}
