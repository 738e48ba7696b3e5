//! End-to-end predictor: raster -> encoder -> K noise-conditioned slots ->
//! decoder heads. Owns weight initialization and the inference path; the
//! trainer drives the same forward through [`Model::forward`].

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::ModelConfig;
use crate::decoder::{self, bundle_from_nodes, DecodeNodes, TrajectoryBundle};
use crate::diffgraph::{Graph, NodeId};
use crate::encoder::{self, encode, patchify, DropoutCtx};
use crate::error::Result;
use crate::params::{ParamBinding, ParamStore};
use crate::scenegen::raster::RasterConfig;
use crate::scenegen::RasterTensor;
use crate::seed::derive_seed;

pub struct Model {
    pub config: ModelConfig,
    pub raster_config: RasterConfig,
    pub params: ParamStore,
}

impl Model {
    /// Fresh weights: truncated normal (std 0.02) matrices, zero biases,
    /// unit norm gains. Deterministic in the seed.
    pub fn init(config: ModelConfig, raster_config: RasterConfig, seed: u64) -> Result<Model> {
        raster_config.validate()?;
        config.validate(&raster_config)?;
        let n_patches =
            (raster_config.height / config.patch_size) * (raster_config.width / config.patch_size);
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, "model.init"));
        let mut params = ParamStore::new();
        encoder::init_params(&mut params, &config, n_patches, &mut rng);
        decoder::init_params(&mut params, &config, &mut rng);
        Ok(Model {
            config,
            raster_config,
            params,
        })
    }

    /// Swap in loaded weights after checking names and shapes.
    pub fn with_params(mut self, params: ParamStore) -> Result<Model> {
        crate::params::check_compatible(&self.params, &params)?;
        self.params = params;
        Ok(self)
    }

    /// One forward pass on an already-bound graph. `noise_rng` feeds the
    /// slot noise; `dropout` is None at inference.
    pub fn forward(
        &self,
        g: &mut Graph,
        binding: &ParamBinding,
        patches: NodeId,
        noise_rng: &mut ChaCha20Rng,
        dropout: Option<&mut DropoutCtx>,
    ) -> Result<DecodeNodes> {
        let latent = encode(g, binding, patches, &self.config, dropout)?;
        let slots = decoder::replicate_and_noise(
            g,
            latent,
            self.config.k,
            self.config.noise_dim,
            noise_rng,
        )?;
        decoder::decode(g, binding, slots, &self.config)
    }

    /// Inference on one raster with a fixed noise seed.
    pub fn predict(&self, raster: &RasterTensor, noise_seed: u64) -> Result<TrajectoryBundle> {
        let patches = patchify(raster, self.config.patch_size)?;
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g);
        let pid = g.constant(patches);
        let mut noise_rng = ChaCha20Rng::seed_from_u64(noise_seed);
        let nodes = self.forward(&mut g, &binding, pid, &mut noise_rng, None)?;
        Ok(bundle_from_nodes(&g, &nodes, self.config.horizon))
    }
}
