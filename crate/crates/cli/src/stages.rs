//! Pipeline stages. Each reads the artifacts of earlier stages from the
//! output directory, writes its own under `<out>/<stage>/`, and records a
//! manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use jga_bridge::{
    occupancy_binarize, sample_rectified_flow, sample_reverse_sde, BridgeExample, BridgeSchedule, BridgeTrainer,
    DataStats, Objective, SamplerConfig, Standardizer,
};
use jga_core::{devoxelize, voxelize, Camera, Cube, GaussianSet, LatentGrid, SparseVoxelTensor};
use jga_io::{PlyFormat, SynthOptions};
use jga_metrics::{MetricsReport, SceneMetrics};
use jga_nn::{checkpoint, AdamConfig, ParameterStore};
use jga_render::{rasterize, RenderConfig};
use jga_unify::{UnifyKind, UnifyNet};
use jga_vae::{iou, RenderView, TrainScene, Vae, VaeTrainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{config_hash, PipelineConfig};
use crate::MissingArtifact;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Voxelize,
    TrainVae,
    TrainUnify,
    Encode,
    TrainBridge,
    Sample,
    Decode,
    Render,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Synth,
        Stage::Voxelize,
        Stage::TrainVae,
        Stage::TrainUnify,
        Stage::Encode,
        Stage::TrainBridge,
        Stage::Sample,
        Stage::Decode,
        Stage::Render,
        Stage::Eval,
    ];

    /// Subcommand name, also the stage's directory under the output root.
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Voxelize => "voxelize",
            Stage::TrainVae => "train-vae",
            Stage::TrainUnify => "train-unify",
            Stage::Encode => "encode",
            Stage::TrainBridge => "train-bridge",
            Stage::Sample => "sample",
            Stage::Decode => "decode",
            Stage::Render => "render",
            Stage::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub camera: Camera,
    pub held_out: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeSceneReport {
    pub iou: f64,
    pub attr: f64,
    pub voxels: usize,
    pub decoded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeReport {
    pub iterations: usize,
    pub scenes: Vec<(String, VaeSceneReport)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub first_loss: f64,
    pub final_loss: f64,
}

/// Artifact paths relative to an output root, plus bookkeeping of what a
/// stage read and wrote.
pub struct Run<'a> {
    pub out: &'a Path,
    pub cfg: &'a PipelineConfig,
    stage: Stage,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    pub fn new(out: &'a Path, cfg: &'a PipelineConfig, stage: Stage) -> Self {
        Self {
            out,
            cfg,
            stage,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn scene_names(&self) -> Vec<String> {
        scene_names(self.cfg)
    }

    fn rel(stage: Stage, parts: &[&str]) -> String {
        std::iter::once(stage.name())
            .chain(parts.iter().copied())
            .collect::<Vec<_>>()
            .join("/")
    }

    /// Path of an upstream artifact; errors name the stage producing it.
    fn input(&mut self, from: Stage, parts: &[&str]) -> Result<PathBuf> {
        let rel = Self::rel(from, parts);
        let path = self.out.join(&rel);
        if !path.exists() {
            return Err(MissingArtifact {
                path,
                producer: from.name(),
            }
            .into());
        }
        self.inputs.push(rel);
        Ok(path)
    }

    fn output(&mut self, parts: &[&str]) -> PathBuf {
        let rel = Self::rel(self.stage, parts);
        let path = self.out.join(&rel);
        self.outputs.push(rel);
        path
    }

    fn finish(mut self, started: Instant) -> Result<()> {
        self.inputs.dedup();
        let manifest = Manifest {
            stage: self.stage.name().into(),
            inputs: self.inputs,
            outputs: self.outputs,
            config_hash: config_hash(self.cfg),
            seed: self.cfg.seed,
        };
        jga_io::write_json(&self.out.join(self.stage.name()).join("manifest.json"), &manifest)?;
        log::info!(
            "{} finished in {:.1}s",
            self.stage.name(),
            started.elapsed().as_secs_f64()
        );
        Ok(())
    }
}

pub fn scene_names(cfg: &PipelineConfig) -> Vec<String> {
    cfg.synth
        .scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let kind = serde_json::to_value(s.kind).expect("scene kind serializes");
            format!("{i:02}-{}-{}", kind.as_str().unwrap_or("scene"), s.seed)
        })
        .collect()
}

pub fn run_stage(stage: Stage, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let started = Instant::now();
    let mut run = Run::new(out, cfg, stage);
    match stage {
        Stage::Synth => synth(&mut run),
        Stage::Voxelize => voxelize_stage(&mut run),
        Stage::TrainVae => train_vae(&mut run),
        Stage::TrainUnify => train_unify(&mut run),
        Stage::Encode => encode(&mut run),
        Stage::TrainBridge => train_bridge(&mut run),
        Stage::Sample => sample(&mut run),
        Stage::Decode => decode(&mut run),
        Stage::Render => render(&mut run),
        Stage::Eval => eval(&mut run).map(|_| ()),
    }
    .with_context(|| format!("stage {} failed", stage.name()))?;
    run.finish(started)
}

pub fn run_all(out: &Path, cfg: &PipelineConfig) -> Result<MetricsReport> {
    for stage in Stage::ALL {
        run_stage(stage, out, cfg)?;
    }
    Ok(jga_io::read_json(&out.join("eval/metrics.json"))?)
}

fn bounds() -> Cube {
    Cube::default()
}

fn synth(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let opts = SynthOptions {
        resolution: cfg.resolution,
        ..cfg.synth.options.clone()
    };
    for (name, spec) in run.scene_names().iter().zip(&cfg.synth.scenes) {
        let scene = jga_io::synth_scene_with(spec.kind, cfg.synth.count, spec.seed, &opts)?;
        jga_io::write_ply(
            &run.output(&[name, "gt.ply"]),
            &scene.gaussians,
            PlyFormat::BinaryLittleEndian,
        )?;
        let mut records = Vec::new();
        for (k, v) in scene.views.iter().enumerate() {
            jga_io::write_rgb_png(&run.output(&[name, &format!("view_{k}.png")]), &v.image)?;
            jga_io::write_depth_png(
                &run.output(&[name, &format!("depth_{k}.png")]),
                &v.depth,
                Default::default(),
            )?;
            records.push(ViewRecord {
                camera: v.camera.clone(),
                held_out: v.held_out,
            });
        }
        jga_io::write_json(&run.output(&[name, "cameras.json"]), &records)?;
        jga_io::write_obj(&run.output(&[name, "smpl.obj"]), &scene.proxy)?;
        jga_io::write_obj(&run.output(&[name, "surface.obj"]), &scene.surface)?;
        log::info!("{name}: {} gaussians", scene.gaussians.len());
    }
    Ok(())
}

fn read_gt(run: &mut Run, name: &str) -> Result<GaussianSet> {
    Ok(jga_io::read_ply(
        &run.input(Stage::Synth, &[name, "gt.ply"])?,
        bounds(),
    )?)
}

fn read_cameras(run: &mut Run, name: &str) -> Result<Vec<ViewRecord>> {
    Ok(jga_io::read_json(&run.input(Stage::Synth, &[name, "cameras.json"])?)?)
}

fn voxelize_stage(run: &mut Run) -> Result<()> {
    for name in run.scene_names() {
        let gt = read_gt(run, &name)?;
        let t = voxelize(&gt, run.cfg.resolution)?;
        jga_io::write_sparse(&run.output(&[&name, "gt.jgat"]), &t)?;
    }
    Ok(())
}

fn train_scenes(run: &mut Run) -> Result<Vec<TrainScene>> {
    let mut scenes = Vec::new();
    for name in run.scene_names() {
        let gt = jga_io::read_sparse(&run.input(Stage::Voxelize, &[&name, "gt.jgat"])?)?;
        let mut views = Vec::new();
        for (k, v) in read_cameras(run, &name)?.into_iter().enumerate() {
            if !v.held_out {
                let image = jga_io::read_rgb_png(&run.input(Stage::Synth, &[&name, &format!("view_{k}.png")])?)?;
                views.push(RenderView {
                    camera: v.camera,
                    image,
                });
            }
        }
        scenes.push(TrainScene {
            gt,
            views,
            bounds: bounds(),
        });
    }
    Ok(scenes)
}

fn train_vae(run: &mut Run) -> Result<()> {
    let cfg = &run.cfg.vae;
    let scenes = train_scenes(run)?;
    let mut trainer = VaeTrainer::new(cfg, &scenes)?;
    let started = Instant::now();
    trainer.train(&scenes, cfg.iterations, |it, r| {
        if it % 100 == 0 {
            log::info!(
                "train-vae {it}/{}: loss {:.5} occ {:.4} attr {:.5} ({:.0}s)",
                cfg.iterations,
                r.loss,
                r.terms.occupancy,
                r.terms.attr,
                started.elapsed().as_secs_f64()
            );
        }
    })?;
    checkpoint::save(
        &run.output(&["vae.jgat"]),
        &trainer.store,
        serde_json::json!({ "iterations": cfg.iterations }),
    )?;
    // Report on the parameters as stored, so later stages see the same model.
    let (vae, store) = load_vae_from(run.out.join("train-vae/vae.jgat").as_path(), run.cfg)?;
    let mut report = VaeReport {
        iterations: cfg.iterations,
        scenes: Vec::new(),
    };
    for (name, s) in run.scene_names().into_iter().zip(&scenes) {
        let d = vae.reconstruct(&store, &s.gt)?;
        let attr = jga_vae::attr_loss(&d.tensor, &s.gt).value.0;
        report.scenes.push((
            name,
            VaeSceneReport {
                iou: iou(&d.tensor, &s.gt),
                attr,
                voxels: s.gt.len(),
                decoded: d.tensor.len(),
            },
        ));
    }
    jga_io::write_json(&run.output(&["report.json"]), &report)?;
    Ok(())
}

fn load_vae_from(path: &Path, cfg: &PipelineConfig) -> Result<(Vae, ParameterStore)> {
    let mut store = ParameterStore::new();
    let vae = Vae::new(&mut store, &cfg.vae, &mut ChaCha8Rng::seed_from_u64(cfg.vae.seed))?;
    checkpoint::load(path, &mut store).with_context(|| format!("loading {}", path.display()))?;
    Ok((vae, store))
}

fn load_vae(run: &mut Run) -> Result<(Vae, ParameterStore)> {
    let path = run.input(Stage::TrainVae, &["vae.jgat"])?;
    load_vae_from(&path, run.cfg)
}

type Pair = (SparseVoxelTensor, SparseVoxelTensor);

/// Depth and SMPL network inputs for one scene, with their targets.
fn unify_inputs(run: &mut Run, name: &str) -> Result<(Pair, Pair)> {
    let k = run.cfg.synth.input_view;
    let r = run.cfg.resolution;
    let cam = read_cameras(run, name)?.swap_remove(k).camera;
    let rgb = jga_io::read_rgb_png(&run.input(Stage::Synth, &[name, &format!("view_{k}.png")])?)?;
    let depth = jga_io::read_depth_png(&run.input(Stage::Synth, &[name, &format!("depth_{k}.png")])?)?;
    let mesh = jga_io::read_obj(&run.input(Stage::Synth, &[name, "smpl.obj"])?)?;
    let gt = read_gt(run, name)?;

    let cloud = jga_unify::backproject_depth(&depth, &rgb, &cam)?;
    if cloud.is_flagged() {
        bail!("{name}: input depth map has no valid pixels");
    }
    let dx = jga_unify::depth_input(&cloud.value, &bounds(), r)?;
    let dy = jga_unify::targets_for(&dx, &gt, &bounds())?;

    let tau = jga_unify::default_tolerance(&bounds(), r);
    let colored = jga_unify::color_smpl_by_projection(&mesh, &rgb, &depth, &cam, tau)?;
    if colored.is_flagged() {
        log::warn!("{name}: no SMPL vertex is visible from the input view");
    }
    let sx = jga_unify::smpl_input(&colored.value, &bounds(), r)?;
    let sy = jga_unify::targets_for(&sx, &gt, &bounds())?;
    Ok(((dx, dy), (sx, sy)))
}

fn unify_net(cfg: &PipelineConfig, kind: UnifyKind) -> Result<(UnifyNet, ParameterStore)> {
    let mut store = ParameterStore::new();
    let (name, salt) = match kind {
        UnifyKind::Depth => ("depth", 1),
        UnifyKind::Smpl => ("smpl", 2),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(salt));
    let net = UnifyNet::new(&mut store, name, kind, cfg.unify.width, cfg.unify.levels, &mut rng)?;
    Ok((net, store))
}

fn train_unify(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let names = run.scene_names();
    let mut depth_pairs = Vec::new();
    let mut smpl_pairs = Vec::new();
    for name in &names {
        let (d, s) = unify_inputs(run, name)?;
        depth_pairs.push(d);
        smpl_pairs.push(s);
    }
    let adam = AdamConfig {
        lr: cfg.unify.lr,
        ..AdamConfig::default()
    };
    for (kind, pairs, file) in [
        (UnifyKind::Depth, &depth_pairs, "depth"),
        (UnifyKind::Smpl, &smpl_pairs, "smpl"),
    ] {
        let (net, mut store) = unify_net(cfg, kind)?;
        net.init_prior(&mut store, pairs);
        let losses = net.train(&mut store, pairs, cfg.unify.steps, &adam)?;
        let report = TrainReport {
            steps: losses.len(),
            first_loss: losses.first().copied().unwrap_or(f64::NAN),
            final_loss: tail_mean(&losses, pairs.len()),
        };
        log::info!(
            "train-unify {file}: loss {:.5} -> {:.5}",
            report.first_loss,
            report.final_loss
        );
        checkpoint::save(
            &run.output(&[&format!("{file}.jgat")]),
            &store,
            serde_json::to_value(&report)?,
        )?;
        let (net, store) = load_unify(&run.out.join(format!("train-unify/{file}.jgat")), cfg, kind)?;
        for (name, (x, _)) in names.iter().zip(pairs) {
            let set = net.to_gaussians(&store, x, bounds())?;
            jga_io::write_ply(
                &run.output(&[name, &format!("{file}.ply")]),
                &set,
                PlyFormat::BinaryLittleEndian,
            )?;
        }
    }
    Ok(())
}

fn load_unify(path: &Path, cfg: &PipelineConfig, kind: UnifyKind) -> Result<(UnifyNet, ParameterStore)> {
    let (net, mut store) = unify_net(cfg, kind)?;
    checkpoint::load(path, &mut store).with_context(|| format!("loading {}", path.display()))?;
    Ok((net, store))
}

fn tail_mean(v: &[f64], n: usize) -> f64 {
    let n = n.clamp(1, v.len().max(1));
    v[v.len().saturating_sub(n)..].iter().sum::<f64>() / n as f64
}

fn encode(run: &mut Run) -> Result<()> {
    let (vae, store) = load_vae(run)?;
    let r = run.cfg.resolution;
    for name in run.scene_names() {
        let g = jga_io::read_sparse(&run.input(Stage::Voxelize, &[&name, "gt.jgat"])?)?;
        let d = voxelize(
            &jga_io::read_ply(&run.input(Stage::TrainUnify, &[&name, "depth.ply"])?, bounds())?,
            r,
        )?;
        let s = voxelize(
            &jga_io::read_ply(&run.input(Stage::TrainUnify, &[&name, "smpl.ply"])?, bounds())?,
            r,
        )?;
        for (t, file) in [(&g, "g"), (&d, "d"), (&s, "s")] {
            let latent = vae.encode(&store, t)?.mean_grid();
            jga_io::write_latent(&run.output(&[&name, &format!("{file}.jgat")]), &latent)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BridgeMeta {
    standardizer: Standardizer,
    data: DataStats,
    report: TrainReport,
}

fn read_latent(run: &mut Run, name: &str, file: &str) -> Result<LatentGrid> {
    Ok(jga_io::read_latent(
        &run.input(Stage::Encode, &[name, &format!("{file}.jgat")])?,
    )?)
}

fn bridge_trainer(cfg: &PipelineConfig, data: DataStats) -> Result<BridgeTrainer> {
    let adam = AdamConfig {
        lr: cfg.bridge.lr,
        ..AdamConfig::default()
    };
    let mut t = BridgeTrainer::new(
        cfg.denoiser_spec(),
        cfg.bridge.objective,
        BridgeSchedule {
            data,
            ..cfg.bridge.schedule
        },
        adam,
        cfg.seed.wrapping_add(3),
    )?;
    t.denoiser.time_sampling = cfg.bridge.time_sampling;
    Ok(t)
}

fn train_bridge(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let f = cfg.vae.latent_channels;
    let mut raw = Vec::new();
    for name in run.scene_names() {
        let [g, d, s] = ["g", "d", "s"].map(|k| read_latent(run, &name, k));
        raw.push((g?.to_state(), d?.to_state(), s?.to_state()));
    }
    let all: Vec<&[f64]> = raw.iter().flat_map(|(g, d, s)| [g.as_slice(), d, s]).collect();
    let standardizer = Standardizer::fit(&all, f + 1, &[f])?;
    let examples: Vec<BridgeExample> = raw
        .iter()
        .map(|(g, d, s)| BridgeExample {
            x0: standardizer.apply(g),
            y: standardizer.apply(d),
            cond: standardizer.apply(s),
        })
        .collect();
    let data = DataStats::estimate(examples.iter().map(|e| (e.x0.as_slice(), e.y.as_slice())));
    let mut trainer = bridge_trainer(cfg, data)?;
    let b = &cfg.bridge;
    let batch = b.batch.min(examples.len());
    let mut losses = Vec::with_capacity(b.steps);
    for step in 0..b.steps {
        let start = step * batch;
        let chunk: Vec<BridgeExample> = (0..batch)
            .map(|i| examples[(start + i) % examples.len()].clone())
            .collect();
        let p = step as f64 / b.steps.max(1) as f64;
        let lo = b.lr * b.final_lr_fraction;
        let lr = lo + 0.5 * (b.lr - lo) * (1.0 + (std::f64::consts::PI * p).cos());
        losses.push(trainer.step_with_lr(&chunk, lr)?);
        if step % 200 == 0 {
            log::info!("train-bridge {step}/{}: loss {:.5}", b.steps, tail_mean(&losses, 50));
        }
    }
    let meta = BridgeMeta {
        standardizer,
        data,
        report: TrainReport {
            steps: b.steps,
            first_loss: losses.first().copied().unwrap_or(f64::NAN),
            final_loss: tail_mean(&losses, 50),
        },
    };
    checkpoint::save(
        &run.output(&["bridge.jgat"]),
        &trainer.store,
        serde_json::to_value(&meta)?,
    )?;
    Ok(())
}

fn sample(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let f = cfg.vae.latent_channels;
    let r = cfg.vae.latent_resolution();
    let path = run.input(Stage::TrainBridge, &["bridge.jgat"])?;
    let mut trainer = bridge_trainer(cfg, DataStats::default())?;
    let meta: BridgeMeta = serde_json::from_value(checkpoint::load(&path, &mut trainer.store)?)?;
    trainer.denoiser.schedule.data = meta.data;
    trainer.denoiser.schedule.validate()?;
    let field = trainer.denoiser.field(&trainer.store);
    for (i, name) in run.scene_names().iter().enumerate() {
        let y = meta.standardizer.apply(&read_latent(run, name, "d")?.to_state());
        let cond = meta.standardizer.apply(&read_latent(run, name, "s")?.to_state());
        let sc = SamplerConfig {
            seed: cfg.sample.seed.wrapping_add(i as u64),
            ..cfg.sample
        };
        let x = match cfg.bridge.objective {
            Objective::Bridge => sample_reverse_sde(&field, &y, &cond, &sc)?,
            Objective::RectifiedFlow => sample_rectified_flow(&field, &y, &cond, &sc)?,
        };
        let latent = occupancy_binarize(&meta.standardizer.invert(&x), r, f)?;
        if latent.is_flagged() {
            bail!("{name}: sampled latent has no occupied cell");
        }
        jga_io::write_latent(&run.output(&[name, "latent.jgat"]), &latent.value)?;
    }
    Ok(())
}

fn decode(run: &mut Run) -> Result<()> {
    let (vae, store) = load_vae(run)?;
    for name in run.scene_names() {
        let z = jga_io::read_latent(&run.input(Stage::Sample, &[&name, "latent.jgat"])?)?;
        let decoded = vae.decode(&store, &z)?;
        let set = devoxelize(&decoded.tensor, bounds())?;
        jga_io::write_ply(&run.output(&[&name, "pred.ply"]), &set, PlyFormat::BinaryLittleEndian)?;
    }
    Ok(())
}

fn read_pred(run: &mut Run, name: &str) -> Result<GaussianSet> {
    Ok(jga_io::read_ply(
        &run.input(Stage::Decode, &[name, "pred.ply"])?,
        bounds(),
    )?)
}

fn render(run: &mut Run) -> Result<()> {
    for name in run.scene_names() {
        let pred = read_pred(run, &name)?;
        for (k, v) in read_cameras(run, &name)?.iter().enumerate().filter(|(_, v)| v.held_out) {
            let img = rasterize(&pred, &v.camera, &RenderConfig::default())?
                .into_inner()
                .image
                .clamped();
            jga_io::write_rgb_png(&run.output(&[&name, &format!("view_{k}.png")]), &img)?;
        }
    }
    Ok(())
}

/// Image and geometry metrics of a prediction against ground truth.
/// Image metrics average over `cameras`; both sets are rendered afresh.
pub fn evaluate(
    pred: &GaussianSet,
    gt: &GaussianSet,
    cameras: &[Camera],
    surface: &jga_core::SmplMesh,
    normal_k: usize,
) -> Result<SceneMetrics> {
    let config = RenderConfig::default();
    let (mut psnr, mut ssim) = (0.0, 0.0);
    for cam in cameras {
        let a = rasterize(pred, cam, &config)?.into_inner().image.clamped();
        let b = rasterize(gt, cam, &config)?.into_inner().image.clamped();
        psnr += jga_render::psnr(&a, &b)?;
        ssim += jga_render::ssim(&a, &b)?;
    }
    let n = cameras.len().max(1) as f64;
    let (pp, gp) = (pred.positions(), gt.positions());
    let pn = jga_metrics::estimate_normals(&pp, normal_k)?;
    let gn = jga_metrics::estimate_normals(&gp, normal_k)?;
    Ok(SceneMetrics {
        psnr: psnr / n,
        ssim: ssim / n,
        cd: jga_metrics::chamfer(&pp, &gp)?,
        p2s: jga_metrics::p2s(&pp, surface)?,
        normal_deg: jga_metrics::normal_error(&pp, &pn.normals, &gp, &gn.normals)?,
    })
}

fn eval(run: &mut Run) -> Result<MetricsReport> {
    let mut scenes = Vec::new();
    for name in run.scene_names() {
        let pred = read_pred(run, &name)?;
        let gt = read_gt(run, &name)?;
        let surface = jga_io::read_obj(&run.input(Stage::Synth, &[&name, "surface.obj"])?)?;
        let cams: Vec<Camera> = read_cameras(run, &name)?
            .into_iter()
            .filter(|v| v.held_out)
            .map(|v| v.camera)
            .collect();
        let m = evaluate(&pred, &gt, &cams, &surface, run.cfg.eval.normal_k)?;
        log::info!(
            "{name}: psnr {:.2} ssim {:.4} cd {:.4} p2s {:.4} normal {:.1}°",
            m.psnr,
            m.ssim,
            m.cd,
            m.p2s,
            m.normal_deg
        );
        scenes.push((name, m));
    }
    let report = MetricsReport::new(scenes);
    jga_io::write_json(&run.output(&["metrics.json"]), &report)?;
    Ok(report)
}
