//! Coordinate-preserving refinement of decoded attribute tensors.

use jga_core::SparseVoxelTensor;
use jga_nn::{ParameterStore, SparseUNet, UNetCache, UNetGeometry, UNetSpec};
use rand::Rng;

use crate::VaeError;

/// Residual sparse U-Net: `out = x + U(x)`, with the U-Net's output layer
/// starting at zero so an untrained refiner is the identity.
#[derive(Debug, Clone)]
pub struct Refiner {
    pub net: SparseUNet,
}

impl Refiner {
    pub fn new(
        store: &mut ParameterStore,
        channels: usize,
        width: usize,
        levels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, VaeError> {
        let spec = UNetSpec {
            cin: channels,
            cout: channels,
            width,
            levels,
            emb_dim: 0,
            zero_head: true,
        };
        Ok(Self {
            net: SparseUNet::new(store, "refine", spec, rng)?,
        })
    }

    pub fn geometry(&self, x: &SparseVoxelTensor) -> UNetGeometry {
        UNetGeometry::new(x.coords(), x.grid_size(), self.net.spec.levels)
    }

    pub fn forward(
        &self,
        store: &ParameterStore,
        geo: &UNetGeometry,
        x: &SparseVoxelTensor,
    ) -> Result<(SparseVoxelTensor, UNetCache), VaeError> {
        let (delta, cache) = self.net.forward(store, geo, x.features(), None);
        let feats = x.features().iter().zip(&delta).map(|(a, b)| a + b).collect();
        Ok((x.with_features(x.channels(), feats)?, cache))
    }

    /// Accumulates parameter gradients for `d loss / d out`.
    pub fn backward(&self, store: &mut ParameterStore, geo: &UNetGeometry, cache: &UNetCache, g_out: &[f64]) {
        self.net.backward(store, geo, cache, g_out);
    }

    pub fn refine(&self, store: &ParameterStore, x: &SparseVoxelTensor) -> Result<SparseVoxelTensor, VaeError> {
        if x.is_empty() {
            return Ok(x.clone());
        }
        let geo = self.geometry(x);
        Ok(self.forward(store, &geo, x)?.0)
    }
}
