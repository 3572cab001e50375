use std::collections::HashSet;

use jga_core::{voxel::downsample_coords, Coord, SparseVoxelTensor};
use jga_nn::{silu, silu_backward, Conv, KernelMap, Linear, ParameterStore, ResBlock, ResCache};
use rand::Rng;

use crate::config::VaeConfig;
use crate::VaeError;

/// Two-layer perceptron applied per row.
#[derive(Debug, Clone)]
pub struct Mlp {
    a: Linear,
    b: Linear,
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    x: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

impl Mlp {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        cin: usize,
        hidden: usize,
        cout: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, VaeError> {
        Ok(Self {
            a: Linear::new(store, &format!("{name}.a"), cin, hidden, rng)?,
            b: Linear::new(store, &format!("{name}.b"), hidden, cout, rng)?,
        })
    }

    pub fn output(&self) -> &Linear {
        &self.b
    }

    pub fn forward(&self, store: &ParameterStore, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let pre = self.a.forward(store, x);
        let act = silu(&pre);
        let y = self.b.forward(store, &act);
        (
            y,
            MlpCache {
                x: x.to_vec(),
                pre,
                act,
            },
        )
    }

    pub fn backward(&self, store: &mut ParameterStore, cache: &MlpCache, gy: &[f64]) -> Vec<f64> {
        let g = self.b.backward(store, &cache.act, gy);
        let g = silu_backward(&cache.pre, &g);
        self.a.backward(store, &cache.x, &g)
    }
}

/// How decoder stages choose which candidates survive.
#[derive(Debug, Clone, Copy)]
pub enum PruneMode<'a> {
    /// Keep candidates with occupancy probability above 0.5.
    Predicted,
    /// Keep predicted candidates and every ground-truth voxel (training).
    WithTruth(&'a SparseVoxelTensor),
    /// Keep every candidate.
    KeepAll,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    /// Candidate coordinates generated by the stage.
    pub coords: Vec<Coord>,
    pub stride: usize,
    pub logits: Vec<f64>,
    /// Candidate rows that survived pruning.
    pub kept: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tensor: SparseVoxelTensor,
    pub stages: Vec<StageOutput>,
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up: Conv,
    block: Option<ResBlock>,
    occ: Mlp,
}

#[derive(Debug, Clone)]
pub struct Vae {
    pub config: VaeConfig,
    enc_stem: Linear,
    enc_down: Vec<Conv>,
    enc_blocks: Vec<ResBlock>,
    enc_head: Linear,
    dec_stem: Linear,
    dec_block: ResBlock,
    stages: Vec<DecoderStage>,
    attr: Mlp,
}

#[derive(Debug, Clone, Default)]
pub struct EncoderCache {
    x: Vec<f64>,
    down_maps: Vec<KernelMap>,
    same_maps: Vec<KernelMap>,
    down_in: Vec<Vec<f64>>,
    blocks: Vec<ResCache>,
    head_in: Vec<f64>,
    /// Active latent coordinates, one per encoder output row.
    pub coords: Vec<Coord>,
}

#[derive(Debug, Clone, Default)]
struct StageCache {
    map: KernelMap,
    same: Option<KernelMap>,
    input: Vec<f64>,
    block: Option<ResCache>,
    occ: MlpCache,
    kept: Vec<usize>,
    rows: usize,
}

#[derive(Debug, Clone, Default)]
pub struct DecoderCache {
    z: Vec<f64>,
    same0: Option<KernelMap>,
    block0: ResCache,
    stages: Vec<StageCache>,
    attr: MlpCache,
}

impl Vae {
    pub fn new(store: &mut ParameterStore, config: &VaeConfig, rng: &mut impl Rng) -> Result<Self, VaeError> {
        config.validate()?;
        let e = config.enc_widths;
        let d = config.dec_widths;
        let f = config.latent_channels;
        let c = config.attr_channels;
        let enc_stem = Linear::new(store, "enc.stem", c, e[0], rng)?;
        let mut enc_down = Vec::new();
        let mut enc_blocks = Vec::new();
        for s in 0..3 {
            let cin = if s == 0 { e[0] } else { e[s - 1] };
            enc_down.push(Conv::new(store, &format!("enc.down{s}"), 2, cin, e[s], rng)?);
            enc_blocks.push(ResBlock::new(store, &format!("enc.block{s}"), e[s], e[s], 0, rng)?);
        }
        let enc_head = Linear::new(store, "enc.head", e[2], 2 * f, rng)?;
        let dec_stem = Linear::new(store, "dec.stem", f, d[0], rng)?;
        let dec_block = ResBlock::new(store, "dec.block0", d[0], d[0], 0, rng)?;
        let mut stages = Vec::new();
        for s in 1..4 {
            let block = if s < 3 || config.final_stage_block {
                Some(ResBlock::new(store, &format!("dec.block{s}"), d[s], d[s], 0, rng)?)
            } else {
                None
            };
            stages.push(DecoderStage {
                up: Conv::new(store, &format!("dec.up{s}"), 2, d[s - 1], d[s], rng)?,
                block,
                occ: Mlp::new(store, &format!("dec.occ{s}"), d[s], d[s], 1, rng)?,
            });
        }
        let attr = Mlp::new(store, "dec.attr", d[3], d[3], c, rng)?;
        Ok(Self {
            config: config.clone(),
            enc_stem,
            enc_down,
            enc_blocks,
            enc_head,
            dec_stem,
            dec_block,
            stages,
            attr,
        })
    }

    /// The output layer of the attribute head, for bias initialisation.
    pub fn attr_output(&self) -> &Linear {
        self.attr.output()
    }

    /// Per-row `[mean | logvar]` for each active latent coordinate.
    pub fn encode_rows(
        &self,
        store: &ParameterStore,
        x: &SparseVoxelTensor,
    ) -> Result<(Vec<f64>, EncoderCache), VaeError> {
        if x.is_empty() {
            return Err(VaeError::EmptyInput);
        }
        if x.resolution() != self.config.resolution || x.stride() != 1 || x.channels() != self.config.attr_channels {
            return Err(VaeError::Config(format!(
                "encoder expects a stride-1 tensor at R={} with {} channels, got R={} stride {} with {}",
                self.config.resolution,
                self.config.attr_channels,
                x.resolution(),
                x.stride(),
                x.channels()
            )));
        }
        let mut cache = EncoderCache {
            x: x.features().to_vec(),
            ..Default::default()
        };
        let mut h = self.enc_stem.forward(store, x.features());
        let mut coords = x.coords().to_vec();
        for s in 0..3 {
            let (next, down) = KernelMap::conv(&coords, 2, 2);
            let hd = self.enc_down[s].forward(store, &down, &h);
            cache.down_in.push(std::mem::take(&mut h));
            let (_, same) = KernelMap::conv(&next, 3, 1);
            let (out, bc) = self.enc_blocks[s].forward(store, &same, &hd, None);
            cache.blocks.push(bc);
            cache.down_maps.push(down);
            cache.same_maps.push(same);
            h = out;
            coords = next;
        }
        let rows = self.enc_head.forward(store, &h);
        cache.head_in = h;
        cache.coords = coords;
        Ok((rows, cache))
    }

    /// Accumulates gradients given d(loss)/d(rows) of [`Vae::encode_rows`].
    pub fn encode_backward(&self, store: &mut ParameterStore, cache: &EncoderCache, grows: &[f64]) {
        let mut g = self.enc_head.backward(store, &cache.head_in, grows);
        for s in (0..3).rev() {
            let (gd, _) = self.enc_blocks[s].backward(store, &cache.same_maps[s], &cache.blocks[s], &g);
            g = self.enc_down[s].backward(store, &cache.down_maps[s], &cache.down_in[s], &gd);
        }
        self.enc_stem.backward(store, &cache.x, &g);
    }

    /// Decodes a sparse latent tensor (stride 8 at resolution `R`).
    pub fn decode_forward(
        &self,
        store: &ParameterStore,
        z: &SparseVoxelTensor,
        mode: PruneMode,
    ) -> Result<(Decoded, DecoderCache), VaeError> {
        let r = self.config.resolution;
        if z.is_empty() {
            return Err(VaeError::EmptyLatent);
        }
        if z.resolution() != r || z.stride() != 8 || z.channels() != self.config.latent_channels {
            return Err(VaeError::Config(format!(
                "decoder expects a stride-8 latent at R={r} with {} channels",
                self.config.latent_channels
            )));
        }
        let mut cache = DecoderCache {
            z: z.features().to_vec(),
            ..Default::default()
        };
        let h0 = self.dec_stem.forward(store, z.features());
        let (_, same0) = KernelMap::conv(z.coords(), 3, 1);
        let (mut h, bc) = self.dec_block.forward(store, &same0, &h0, None);
        cache.same0 = Some(same0);
        cache.block0 = bc;
        let mut coords = z.coords().to_vec();
        let mut stride = 8;
        let mut outputs = Vec::new();
        for stage in &self.stages {
            let next_stride = stride / 2;
            let grid = r / next_stride;
            let (cand, map) = KernelMap::transpose(&coords, 2, 2, grid, None);
            let u = stage.up.forward(store, &map, &h);
            let (b, same, block) = match &stage.block {
                Some(block) => {
                    let (_, same) = KernelMap::conv(&cand, 3, 1);
                    let (b, c) = block.forward(store, &same, &u, None);
                    (b, Some(same), Some(c))
                }
                None => (u, None, None),
            };
            let (logits, occ) = stage.occ.forward(store, &b);
            let truth: Option<HashSet<Coord>> = match mode {
                PruneMode::WithTruth(gt) => {
                    Some(downsample_coords(gt.coords(), next_stride as i32).into_iter().collect())
                }
                _ => None,
            };
            let kept: Vec<usize> = (0..cand.len())
                .filter(|&i| match mode {
                    PruneMode::KeepAll => true,
                    PruneMode::Predicted => logits[i] > 0.0,
                    PruneMode::WithTruth(_) => logits[i] > 0.0 || truth.as_ref().is_some_and(|t| t.contains(&cand[i])),
                })
                .collect();
            let width = stage.up.cout;
            let mut next = Vec::with_capacity(kept.len() * width);
            for &i in &kept {
                next.extend_from_slice(&b[i * width..(i + 1) * width]);
            }
            coords = kept.iter().map(|&i| cand[i]).collect();
            cache.stages.push(StageCache {
                map,
                same,
                input: std::mem::take(&mut h),
                block,
                occ,
                kept: kept.clone(),
                rows: cand.len(),
            });
            outputs.push(StageOutput {
                coords: cand,
                stride: next_stride,
                logits,
                kept,
            });
            h = next;
            stride = next_stride;
        }
        let (attrs, ac) = self.attr.forward(store, &h);
        cache.attr = ac;
        let tensor = SparseVoxelTensor::from_sorted(r, 1, self.config.attr_channels, coords, attrs);
        Ok((
            Decoded {
                tensor,
                stages: outputs,
            },
            cache,
        ))
    }

    /// Accumulates decoder gradients from the final attribute rows and the
    /// per-stage logits; returns the gradient with respect to the latent rows.
    pub fn decode_backward(
        &self,
        store: &mut ParameterStore,
        cache: &DecoderCache,
        g_attr: &[f64],
        g_logits: &[Vec<f64>],
    ) -> Vec<f64> {
        let mut g = self.attr.backward(store, &cache.attr, g_attr);
        for (s, stage) in self.stages.iter().enumerate().rev() {
            let sc = &cache.stages[s];
            let width = stage.up.cout;
            let mut gb = stage.occ.backward(store, &sc.occ, &g_logits[s]);
            for (o, &i) in sc.kept.iter().enumerate() {
                for c in 0..width {
                    gb[i * width + c] += g[o * width + c];
                }
            }
            debug_assert_eq!(gb.len(), sc.rows * width);
            let gu = match (&stage.block, &sc.same, &sc.block) {
                (Some(block), Some(same), Some(bc)) => block.backward(store, same, bc, &gb).0,
                _ => gb,
            };
            g = stage.up.backward(store, &sc.map, &sc.input, &gu);
        }
        let same0 = cache.same0.as_ref().expect("decoder cache from a forward pass");
        let (g0, _) = self.dec_block.backward(store, same0, &cache.block0, &g);
        self.dec_stem.backward(store, &cache.z, &g0)
    }
}
