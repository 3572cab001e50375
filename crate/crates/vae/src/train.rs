use jga_core::{
    voxel::{downsample_coords, sparsify},
    Cube, LatentGrid, SparseVoxelTensor,
};
use jga_nn::ParameterStore;
use jga_render::RenderConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::VaeConfig;
use crate::loss::{
    attr_loss, gaussians_from_rows, kl_loss, occupancy_loss, render_loss, reparameterize_with,
    rows_from_gaussian_grads, total_loss, LatentDistribution, LossTerms, RenderView,
};
use crate::model::{Decoded, PruneMode, Vae};
use crate::VaeError;

/// Ground truth for one training scene.
#[derive(Debug, Clone)]
pub struct TrainScene {
    pub gt: SparseVoxelTensor,
    pub views: Vec<RenderView>,
    pub bounds: Cube,
}

/// Intersection over union of two sorted coordinate lists.
pub fn iou(a: &SparseVoxelTensor, b: &SparseVoxelTensor) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a.coords()[i].cmp(&b.coords()[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// One evaluation of the objective with gradients accumulated into `store`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub terms: LossTerms,
    /// Prediction and ground truth shared no voxel.
    pub empty_intersection: bool,
}

impl Vae {
    pub fn encode(&self, store: &ParameterStore, x: &SparseVoxelTensor) -> Result<LatentDistribution, VaeError> {
        let (rows, cache) = self.encode_rows(store, x)?;
        Ok(LatentDistribution::from_rows(
            self.config.latent_resolution(),
            self.config.latent_channels,
            &cache.coords,
            &rows,
        ))
    }

    /// Decodes the cells of `z` with occupancy above 0.5.
    pub fn decode(&self, store: &ParameterStore, z: &LatentGrid) -> Result<Decoded, VaeError> {
        self.decode_with(store, z, PruneMode::Predicted)
    }

    pub fn decode_with(&self, store: &ParameterStore, z: &LatentGrid, mode: PruneMode) -> Result<Decoded, VaeError> {
        if z.resolution != self.config.latent_resolution() || z.channels != self.config.latent_channels {
            return Err(VaeError::Config(format!(
                "latent is {}³×{}, decoder expects {}³×{}",
                z.resolution,
                z.channels,
                self.config.latent_resolution(),
                self.config.latent_channels
            )));
        }
        let sparse = sparsify(z, 0.5);
        if sparse.is_flagged() {
            return Err(VaeError::EmptyLatent);
        }
        let sparse = sparse.into_inner().with_geometry(self.config.resolution, 8)?;
        Ok(self.decode_forward(store, &sparse, mode)?.0)
    }

    /// Encodes to the posterior mean and decodes with predicted pruning.
    pub fn reconstruct(&self, store: &ParameterStore, x: &SparseVoxelTensor) -> Result<Decoded, VaeError> {
        let d = self.encode(store, x)?;
        self.decode(store, &d.mean_grid())
    }

    /// Evaluates the objective on one scene and accumulates its gradient.
    ///
    /// `eps` is the reparameterization noise (dense, latent layout); `None`
    /// decodes the posterior mean. During warm-up only the KL and occupancy
    /// terms are active.
    pub fn loss_and_grad(
        &self,
        store: &mut ParameterStore,
        scene: &TrainScene,
        eps: Option<&[f64]>,
        warm: bool,
        views: &[RenderView],
        render_config: &RenderConfig,
    ) -> Result<StepReport, VaeError> {
        let w = self.config.weights;
        let f = self.config.latent_channels;
        let (rows, ec) = self.encode_rows(store, &scene.gt)?;
        let dist = LatentDistribution::from_rows(self.config.latent_resolution(), f, &ec.coords, &rows);
        let (kl, gm_kl, gl_kl) = kl_loss(&dist);
        let zeros;
        let eps = match eps {
            Some(e) => e,
            None => {
                zeros = vec![0.0; dist.mean.len()];
                &zeros
            }
        };
        let z_grid = reparameterize_with(&dist, eps);
        let r = dist.resolution;
        let cells: Vec<usize> = ec
            .coords
            .iter()
            .map(|c| (c[0] as usize * r + c[1] as usize) * r + c[2] as usize)
            .collect();
        let mut z_rows = Vec::with_capacity(cells.len() * f);
        for &cell in &cells {
            z_rows.extend_from_slice(z_grid.cell_features(cell));
        }
        let z = SparseVoxelTensor::from_sorted(self.config.resolution, 8, f, ec.coords.clone(), z_rows);
        let (dec, dc) = self.decode_forward(store, &z, PruneMode::WithTruth(&scene.gt))?;
        let (occ, mut g_logits) = occupancy_loss(&dec.stages, &scene.gt);
        let attr = attr_loss(&dec.tensor, &scene.gt);
        let empty_intersection = attr.is_flagged();
        let (attr, g_attr) = attr.into_inner();
        let mut terms = LossTerms {
            kl,
            occupancy: occ,
            attr,
            render: 0.0,
        };
        let mut g_rows: Vec<f64> = g_attr.iter().map(|g| if warm { 0.0 } else { w.attr * g }).collect();
        if !warm && w.render > 0.0 && !views.is_empty() {
            let set = gaussians_from_rows(&dec.tensor, scene.bounds);
            let (rl, gg) = render_loss(&set, views, &w, render_config)?;
            terms.render = rl;
            for (a, b) in g_rows
                .iter_mut()
                .zip(rows_from_gaussian_grads(&dec.tensor, &scene.bounds, &gg))
            {
                *a += w.render * b;
            }
        }
        let loss = total_loss(&terms, &w, warm);
        if !loss.is_finite() {
            return Err(VaeError::NonFinite {
                iteration: 0,
                terms: format!("{terms:?}"),
            });
        }
        for g in g_logits.iter_mut().flatten() {
            *g *= w.occupancy;
        }
        let gz = self.decode_backward(store, &dc, &g_rows, &g_logits);
        let mut g_mean = vec![0.0; dist.mean.len()];
        let mut g_logvar = vec![0.0; dist.mean.len()];
        for (i, &cell) in cells.iter().enumerate() {
            for k in 0..f {
                let e = cell * f + k;
                let g = gz[i * f + k];
                g_mean[e] = g + w.kl * gm_kl[e];
                g_logvar[e] = g * eps[e] * 0.5 * (0.5 * dist.logvar[e]).exp() + w.kl * gl_kl[e];
            }
        }
        let grows = dist.rows_grad(&ec.coords, &g_mean, &g_logvar);
        self.encode_backward(store, &ec, &grows);
        Ok(StepReport {
            loss,
            terms,
            empty_intersection,
        })
    }
}

/// Owns a model and its parameters through training.
#[derive(Debug, Clone)]
pub struct VaeTrainer {
    pub vae: Vae,
    pub store: ParameterStore,
    pub iteration: usize,
    pub render_config: RenderConfig,
    /// Gradients are rescaled to at most this global norm; 0 disables.
    pub grad_clip: f64,
}

impl VaeTrainer {
    /// Builds the model; the attribute head's bias starts at the mean
    /// ground-truth row of `scenes`.
    pub fn new(config: &VaeConfig, scenes: &[TrainScene]) -> Result<Self, VaeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParameterStore::new();
        let vae = Vae::new(&mut store, config, &mut rng)?;
        let c = config.attr_channels;
        let mut mean = vec![0.0; c];
        let mut n = 0usize;
        for s in scenes {
            for i in 0..s.gt.len() {
                for (m, v) in mean.iter_mut().zip(s.gt.row(i)) {
                    *m += v;
                }
            }
            n += s.gt.len();
        }
        if n > 0 {
            let b = vae.attr_output().b;
            for (dst, m) in store.value_mut(b).iter_mut().zip(&mean) {
                *dst = m / n as f64;
            }
        }
        Ok(Self {
            vae,
            store,
            iteration: 0,
            render_config: RenderConfig::default(),
            grad_clip: 1.0,
        })
    }

    /// One optimizer step on one scene.
    pub fn step(&mut self, scene: &TrainScene) -> Result<StepReport, VaeError> {
        let cfg = &self.vae.config;
        let it = self.iteration;
        let warm = it < cfg.warmup;
        let views: Vec<RenderView> = if scene.views.is_empty() {
            Vec::new()
        } else {
            (0..cfg.render_views.min(scene.views.len()))
                .map(|k| scene.views[(it + k) % scene.views.len()].clone())
                .collect()
        };
        self.store.zero_grad();
        let eps_seed = cfg.seed ^ (it as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let latent_coords = downsample_coords(scene.gt.coords(), 8);
        let f = cfg.latent_channels;
        let mask = LatentDistribution::from_rows(
            cfg.latent_resolution(),
            f,
            &latent_coords,
            &vec![0.0; latent_coords.len() * 2 * f],
        );
        let eps = mask.noise(eps_seed);
        let report = self
            .vae
            .loss_and_grad(&mut self.store, scene, Some(&eps), warm, &views, &self.render_config)
            .map_err(|e| match e {
                VaeError::NonFinite { terms, .. } => VaeError::NonFinite { iteration: it, terms },
                other => other,
            })?;
        if self.grad_clip > 0.0 {
            let n = self.store.grad_norm();
            if n > self.grad_clip {
                self.store.scale_grads(self.grad_clip / n);
            }
        }
        let adam = jga_nn::AdamConfig {
            lr: cfg.lr_at(it),
            ..cfg.adam
        };
        self.store.adam_step(&adam)?;
        self.iteration += 1;
        Ok(report)
    }

    /// Cycles through `scenes` for `iterations` steps, calling `log` after each.
    pub fn train(
        &mut self,
        scenes: &[TrainScene],
        iterations: usize,
        mut log: impl FnMut(usize, &StepReport),
    ) -> Result<(), VaeError> {
        if scenes.is_empty() {
            return Err(VaeError::Config("no training scenes".into()));
        }
        for _ in 0..iterations {
            let scene = &scenes[self.iteration % scenes.len()];
            let report = self.step(scene)?;
            log(self.iteration, &report);
        }
        Ok(())
    }
}
