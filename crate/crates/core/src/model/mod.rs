//! The staged network: token embedding, windowed attention stages with
//! shifted windows, a final global stage, projection MLP and three heads
//! (expression, deviation, transcriptomic alignment).

mod attention;
mod checkpoint;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{HexstError, Result};
use crate::hexgeom::{estimate_scale, CartesianPoint, LatticeScale, DEFAULT_SCALE_K};
use crate::numerics::{gelu, gelu_grad, layer_norm_backward, layer_norm_forward, LayerNormCache, Tensor};
use crate::rope::{positional_encoding, PositionalEncoding, DEFAULT_ROPE_BASE};
use crate::windowing::{
    lattice_spots, window_strategy, CollisionPolicy, LatticeSpot, Shift, SlotPosition, WindowPartition,
    WindowStrategy,
};

pub use attention::{
    block_backward, block_forward, hexmsa_block, push_block_params, window_attention, AttentionGroups, BlockCache,
    BlockWeights,
};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{Init, ModelParams, ParamEntry, ParamLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of stages L; the last one attends globally.
    pub stages: usize,
    /// Blocks per stage B.
    pub blocks: usize,
    pub dim: usize,
    pub heads: usize,
    /// Window radius of each windowed stage; length `stages − 1`.
    pub radii: Vec<usize>,
    pub d_in: usize,
    pub d_out: usize,
    pub genes: usize,
    pub d_t: usize,
    pub mlp_depth: usize,
    pub ffn_mult: usize,
    /// Window strategy name, see [`crate::windowing::WINDOW_STRATEGIES`].
    pub window: String,
    /// Positional encoding name, see [`crate::rope::POSITIONAL_ENCODINGS`].
    pub pe: String,
    pub rope_base: f64,
    pub collision: CollisionPolicy,
    /// Neighbour rank used for lattice spacing estimation.
    pub scale_k: usize,
    pub ln_eps: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stages: 4,
            blocks: 3,
            dim: 32,
            heads: 2,
            radii: vec![1, 2, 4],
            d_in: 32,
            d_out: 32,
            genes: 16,
            d_t: 16,
            mlp_depth: 2,
            ffn_mult: 4,
            window: "hex".into(),
            pe: "hexrope".into(),
            rope_base: DEFAULT_ROPE_BASE,
            collision: CollisionPolicy::Strict,
            scale_k: DEFAULT_SCALE_K,
            ln_eps: 1e-5,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HexstError::Structural(m));
        if self.stages == 0 || self.blocks == 0 {
            return bad("stages and blocks must be at least 1".into());
        }
        if self.radii.len() + 1 != self.stages {
            return bad(format!(
                "{} window radii for {} stages (need stages - 1)",
                self.radii.len(),
                self.stages
            ));
        }
        if self.radii.contains(&0) {
            return bad("window radii must be at least 1".into());
        }
        if self.heads == 0 || self.dim == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} not divisible into {} heads", self.dim, self.heads));
        }
        if self.d_in == 0 || self.d_out == 0 || self.genes == 0 || self.d_t == 0 {
            return bad("d_in, d_out, genes and d_t must be at least 1".into());
        }
        if self.mlp_depth == 0 || self.ffn_mult == 0 {
            return bad("mlp_depth and ffn_mult must be at least 1".into());
        }
        if !(self.ln_eps > 0.0) {
            return bad("ln_eps must be positive".into());
        }
        if self.scale_k == 0 {
            return bad("scale_k must be at least 1".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Copies the data-dependent widths from a dataset shape.
    pub fn with_data_dims(mut self, d_in: usize, genes: usize, d_t: Option<usize>) -> Self {
        self.d_in = d_in;
        self.genes = genes;
        if let Some(d) = d_t {
            self.d_t = d;
        }
        self
    }
}

fn block_prefix(stage: usize, block: usize) -> String {
    format!("s{stage}.b{block}.")
}

pub fn build_layout(cfg: &ModelConfig) -> ParamLayout {
    let d = cfg.dim;
    let mut l = ParamLayout::default();
    l.push("embed.w", &[cfg.d_in, d], Init::Uniform);
    l.push("embed.b", &[d], Init::Zeros);
    for s in 0..cfg.stages {
        for b in 0..cfg.blocks {
            push_block_params(&mut l, &block_prefix(s, b), d, d * cfg.ffn_mult);
        }
    }
    l.push("final_ln.g", &[d], Init::Ones);
    l.push("final_ln.b", &[d], Init::Zeros);
    for i in 0..cfg.mlp_depth {
        let out = if i + 1 == cfg.mlp_depth { cfg.d_out } else { d };
        l.push(format!("mlp{i}.w"), &[d, out], Init::Uniform);
        l.push(format!("mlp{i}.b"), &[out], Init::Zeros);
    }
    l.push("gene.w", &[cfg.d_out, cfg.genes], Init::Uniform);
    l.push("gene.b", &[cfg.genes], Init::Zeros);
    l.push("dev.w", &[cfg.d_out, cfg.genes], Init::Uniform);
    l.push("tfa.w", &[cfg.d_out, cfg.d_t], Init::Uniform);
    l.push("tfa.b", &[cfg.d_t], Init::Zeros);
    l
}

/// Lattice scale, rounded spots and every stage's attention groups for one slide.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub scale: LatticeScale,
    pub spots: Vec<LatticeSpot>,
    /// `partitions[stage][block]` for the windowed stages.
    pub partitions: Vec<Vec<WindowPartition>>,
    /// Groups per (stage, block) in evaluation order, global stage included.
    pub groups: Vec<Vec<AttentionGroups>>,
}

impl Geometry {
    pub fn len(&self) -> usize {
        self.spots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spots.is_empty()
    }
}

/// Spacing estimate that tolerates slides with very few spots.
pub fn slide_scale(coords: &[CartesianPoint], k: usize) -> Result<LatticeScale> {
    match coords.len() {
        0 => Err(HexstError::Input("slide has no spots".into())),
        1 => LatticeScale::new(1.0, coords[0]),
        n => estimate_scale(coords, k.min(n - 1)),
    }
}

/// Network bound to one configuration, with its strategies resolved.
#[derive(Debug)]
pub struct Model {
    cfg: ModelConfig,
    layout: ParamLayout,
    pe: Box<dyn PositionalEncoding>,
    windows: Box<dyn WindowStrategy>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub blocks: Vec<BlockCache>,
    tokens: Tensor,
    final_ln: LayerNormCache,
    mlp_inputs: Vec<Tensor>,
    mlp_pre: Vec<Tensor>,
    z_centered: Tensor,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Output embeddings, N × D_out.
    pub z: Tensor,
    /// Predicted expression, N × G.
    pub y_hat: Tensor,
    /// Deviations predicted from slide-centred embeddings, N × G.
    pub y_dev_hat: Tensor,
    /// Alignment projection of `z`, N × D_t.
    pub projected: Tensor,
    pub cache: ForwardCache,
}

/// Upstream gradients of the three heads; `None` means zero.
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub y_hat: Option<Tensor>,
    pub y_dev_hat: Option<Tensor>,
    pub projected: Option<Tensor>,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Model> {
        cfg.validate()?;
        let pe = positional_encoding(&cfg.pe, cfg.head_dim(), cfg.rope_base)?;
        let windows = window_strategy(&cfg.window, cfg.collision)?;
        Ok(Model {
            layout: build_layout(&cfg),
            cfg,
            pe,
            windows,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn init_params(&self) -> ModelParams {
        ModelParams::init(&self.layout, self.cfg.init_seed)
    }

    /// Partitions for every (stage, block); spots are anchored at the first coordinate.
    pub fn geometry(&self, coords: &[CartesianPoint]) -> Result<Geometry> {
        let scale = slide_scale(coords, self.cfg.scale_k)?;
        let spots = lattice_spots(coords, &scale);
        let mut partitions = Vec::with_capacity(self.cfg.radii.len());
        let mut groups = Vec::with_capacity(self.cfg.stages);
        for (stage, &radius) in self.cfg.radii.iter().enumerate() {
            let mut parts = Vec::with_capacity(self.cfg.blocks);
            let mut stage_groups = Vec::with_capacity(self.cfg.blocks);
            for block in 0..self.cfg.blocks {
                let part = self
                    .windows
                    .partition(&spots, &scale, radius, Shift::for_block(block))?
                    .with_stage(stage, block);
                part.verify(&spots)?;
                stage_groups.push(AttentionGroups {
                    windows: part.windows.iter().map(|w| w.members.clone()).collect(),
                    positions: part.position_of_spot.clone(),
                });
                parts.push(part);
            }
            partitions.push(parts);
            groups.push(stage_groups);
        }
        let anchor_cell = spots[0].cell;
        let global = AttentionGroups::global(
            spots
                .iter()
                .map(|s| SlotPosition {
                    cell_offset: s.cell.sub(&anchor_cell),
                    planar: (
                        (s.pos.x - scale.anchor.x) / scale.d_med,
                        (s.pos.y - scale.anchor.y) / scale.d_med,
                    ),
                })
                .collect(),
        );
        groups.push(vec![global; self.cfg.blocks]);
        Ok(Geometry {
            scale,
            spots,
            partitions,
            groups,
        })
    }

    fn check_params(&self, params: &ModelParams) -> Result<()> {
        if params.layout != self.layout {
            return Err(HexstError::Structural("parameters do not match the model layout".into()));
        }
        Ok(())
    }

    pub fn forward(&self, params: &ModelParams, tokens: &Tensor, geom: &Geometry) -> Result<ForwardOutput> {
        self.check_params(params)?;
        let cfg = &self.cfg;
        if tokens.shape().len() != 2 || tokens.cols() != cfg.d_in || tokens.rows() != geom.len() {
            return Err(HexstError::Structural(format!(
                "tokens {:?}, expected {} x {}",
                tokens.shape(),
                geom.len(),
                cfg.d_in
            )));
        }
        let mut h = tokens.matmul(&params.tensor("embed.w"))?;
        h.add_row_vector(params.get("embed.b"));

        let mut blocks = Vec::with_capacity(cfg.stages * cfg.blocks);
        for (stage, stage_groups) in geom.groups.iter().enumerate() {
            for (block, groups) in stage_groups.iter().enumerate() {
                let w = BlockWeights::from_params(params, &block_prefix(stage, block));
                let (out, cache) = block_forward(&h, groups, &w, self.pe.as_ref(), cfg.heads, cfg.ln_eps)?;
                h = out;
                blocks.push(cache);
            }
        }

        let (mut t, final_ln) =
            layer_norm_forward(&h, params.get("final_ln.g"), params.get("final_ln.b"), cfg.ln_eps)?;
        let mut mlp_inputs = Vec::with_capacity(cfg.mlp_depth);
        let mut mlp_pre = Vec::with_capacity(cfg.mlp_depth);
        for i in 0..cfg.mlp_depth {
            let mut pre = t.matmul(&params.tensor(&format!("mlp{i}.w")))?;
            pre.add_row_vector(params.get(&format!("mlp{i}.b")));
            let next = if i + 1 == cfg.mlp_depth { pre.clone() } else { pre.map(gelu) };
            mlp_inputs.push(t);
            mlp_pre.push(pre);
            t = next;
        }
        let z = t;

        let mut y_hat = z.matmul(&params.tensor("gene.w"))?;
        y_hat.add_row_vector(params.get("gene.b"));
        let means = z.column_means();
        let mut z_centered = z.clone();
        z_centered.add_row_vector(&means.iter().map(|m| -m).collect::<Vec<_>>());
        let y_dev_hat = z_centered.matmul(&params.tensor("dev.w"))?;
        let mut projected = z.matmul(&params.tensor("tfa.w"))?;
        projected.add_row_vector(params.get("tfa.b"));

        Ok(ForwardOutput {
            z,
            y_hat,
            y_dev_hat,
            projected,
            cache: ForwardCache {
                tokens: tokens.clone(),
                blocks,
                final_ln,
                mlp_inputs,
                mlp_pre,
                z_centered,
            },
        })
    }

    /// Reverse-mode gradients of all parameters.
    pub fn backward(
        &self,
        params: &ModelParams,
        out: &ForwardOutput,
        geom: &Geometry,
        grads_in: &OutputGrads,
    ) -> Result<ModelParams> {
        self.check_params(params)?;
        let cfg = &self.cfg;
        let n = out.z.rows();
        let mut grads = ModelParams::zeros(&self.layout);
        let cache = &out.cache;
        let mut d_z = Tensor::zeros(&[n, cfg.d_out]);

        if let Some(g) = &grads_in.y_hat {
            grads.accumulate("gene.w", out.z.matmul_tn(g)?.data());
            grads.accumulate("gene.b", &g.sum_rows());
            d_z.add_assign(&g.matmul_nt(&params.tensor("gene.w"))?);
        }
        if let Some(g) = &grads_in.y_dev_hat {
            grads.accumulate("dev.w", cache.z_centered.matmul_tn(g)?.data());
            let mut d_zc = g.matmul_nt(&params.tensor("dev.w"))?;
            let means = d_zc.column_means();
            d_zc.add_row_vector(&means.iter().map(|m| -m).collect::<Vec<_>>());
            d_z.add_assign(&d_zc);
        }
        if let Some(g) = &grads_in.projected {
            grads.accumulate("tfa.w", out.z.matmul_tn(g)?.data());
            grads.accumulate("tfa.b", &g.sum_rows());
            d_z.add_assign(&g.matmul_nt(&params.tensor("tfa.w"))?);
        }

        let mut d = d_z;
        for i in (0..cfg.mlp_depth).rev() {
            if i + 1 != cfg.mlp_depth {
                for (g, &p) in d.data_mut().iter_mut().zip(cache.mlp_pre[i].data()) {
                    *g *= gelu_grad(p);
                }
            }
            grads.accumulate(&format!("mlp{i}.w"), cache.mlp_inputs[i].matmul_tn(&d)?.data());
            grads.accumulate(&format!("mlp{i}.b"), &d.sum_rows());
            d = d.matmul_nt(&params.tensor(&format!("mlp{i}.w")))?;
        }
        let (mut d_h, d_g, d_b) = layer_norm_backward(&d, &cache.final_ln, params.get("final_ln.g"));
        grads.accumulate("final_ln.g", &d_g);
        grads.accumulate("final_ln.b", &d_b);

        let mut caches = cache.blocks.iter().rev();
        for (stage, stage_groups) in geom.groups.iter().enumerate().rev() {
            for (block, groups) in stage_groups.iter().enumerate().rev() {
                let prefix = block_prefix(stage, block);
                let w = BlockWeights::from_params(params, &prefix);
                let bc = caches.next().expect("one cache per block");
                d_h = block_backward(&d_h, bc, groups, &w, self.pe.as_ref(), cfg.heads, &mut grads, &prefix)?;
            }
        }
        grads.accumulate("embed.w", cache.tokens.matmul_tn(&d_h)?.data());
        grads.accumulate("embed.b", &d_h.sum_rows());
        Ok(grads)
    }
}

#[cfg(test)]
mod tests;
