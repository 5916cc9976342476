//! Rotary positional encodings for windowed attention.
//!
//! HexRoPE splits a head's channels into three equal blocks, one per cube
//! axis (u, v, w), and rotates channel pairs of each block by the spot's
//! integer offset along that axis. The 2-D variant uses two blocks driven by
//! real-valued Cartesian offsets. Both are orthogonal maps, so the backward
//! pass is the same rotation with negated angles.

use std::fmt;

use crate::error::{HexstError, Result};
use crate::numerics::Tensor;
use crate::windowing::SlotPosition;

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

/// Channel layout of one rotary block family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub base: f64,
    /// Channels per rotated axis (even).
    pub axis_channels: usize,
    /// Trailing channels passed through unrotated.
    pub remainder: usize,
    pub axes: usize,
}

impl RopeConfig {
    /// Three-axis layout: `2·⌊D_H/6⌋` channels per axis.
    pub fn hex(head_dim: usize, base: f64) -> Result<Self> {
        Self::with_axes(head_dim, base, 3)
    }

    /// Two-axis layout: `2·⌊D_H/4⌋` channels per axis.
    pub fn planar(head_dim: usize, base: f64) -> Result<Self> {
        Self::with_axes(head_dim, base, 2)
    }

    fn with_axes(head_dim: usize, base: f64, axes: usize) -> Result<Self> {
        if !(base > 0.0) || !base.is_finite() {
            return Err(HexstError::Input(format!("rope base {base} must be positive")));
        }
        let axis_channels = 2 * (head_dim / (2 * axes));
        Ok(RopeConfig {
            head_dim,
            base,
            axis_channels,
            remainder: head_dim - axes * axis_channels,
            axes,
        })
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let dc = self.axis_channels as f64;
        (0..self.axis_channels / 2)
            .map(|k| self.base.powf(-2.0 * k as f64 / dc))
            .collect()
    }
}

/// `θ_k = Δ·base^(−2k/D_c)` for `k = 0..D_c/2`.
pub fn rope_angles(cfg: &RopeConfig, delta: f64) -> Vec<f64> {
    cfg.frequencies().into_iter().map(|w| delta * w).collect()
}

fn rotate_block(block: &mut [f64], freqs: &[f64], delta: f64, sign: f64) {
    if delta == 0.0 {
        return;
    }
    for (k, w) in freqs.iter().enumerate() {
        let (s, c) = (sign * delta * w).sin_cos();
        let a = block[2 * k];
        let b = block[2 * k + 1];
        block[2 * k] = c * a - s * b;
        block[2 * k + 1] = s * a + c * b;
    }
}

/// A positional encoding applied to per-head query/key vectors.
pub trait PositionalEncoding: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Rotates `h` (one head's channels) for a spot at `pos`. With `inverse`
    /// the transpose rotation is applied, which is what backpropagation needs.
    fn rotate(&self, h: &mut [f64], pos: &SlotPosition, inverse: bool);
}

#[derive(Debug, Clone)]
pub struct HexRope {
    cfg: RopeConfig,
    freqs: Vec<f64>,
}

impl HexRope {
    pub fn new(head_dim: usize, base: f64) -> Result<Self> {
        let cfg = RopeConfig::hex(head_dim, base)?;
        Ok(HexRope {
            freqs: cfg.frequencies(),
            cfg,
        })
    }

    pub fn config(&self) -> &RopeConfig {
        &self.cfg
    }

    fn rotate_cube(&self, h: &mut [f64], cube: (i64, i64, i64), sign: f64) {
        let dc = self.cfg.axis_channels;
        let deltas = [cube.0, cube.1, cube.2];
        for (axis, &d) in deltas.iter().enumerate() {
            rotate_block(&mut h[axis * dc..(axis + 1) * dc], &self.freqs, d as f64, sign);
        }
    }
}

impl PositionalEncoding for HexRope {
    fn name(&self) -> &'static str {
        "hexrope"
    }

    fn rotate(&self, h: &mut [f64], pos: &SlotPosition, inverse: bool) {
        let sign = if inverse { -1.0 } else { 1.0 };
        self.rotate_cube(h, pos.cell_offset.cube(), sign);
    }
}

#[derive(Debug, Clone)]
pub struct Rope2d {
    cfg: RopeConfig,
    freqs: Vec<f64>,
}

impl Rope2d {
    pub fn new(head_dim: usize, base: f64) -> Result<Self> {
        let cfg = RopeConfig::planar(head_dim, base)?;
        Ok(Rope2d {
            freqs: cfg.frequencies(),
            cfg,
        })
    }

    pub fn config(&self) -> &RopeConfig {
        &self.cfg
    }

    fn rotate_planar(&self, h: &mut [f64], (dx, dy): (f64, f64), sign: f64) {
        let dc = self.cfg.axis_channels;
        rotate_block(&mut h[..dc], &self.freqs, dx, sign);
        rotate_block(&mut h[dc..2 * dc], &self.freqs, dy, sign);
    }
}

impl PositionalEncoding for Rope2d {
    fn name(&self) -> &'static str {
        "rope2d"
    }

    fn rotate(&self, h: &mut [f64], pos: &SlotPosition, inverse: bool) {
        let sign = if inverse { -1.0 } else { 1.0 };
        self.rotate_planar(h, pos.planar, sign);
    }
}

/// No positional information; attention sees content only.
#[derive(Debug, Clone, Default)]
pub struct NoRope;

impl PositionalEncoding for NoRope {
    fn name(&self) -> &'static str {
        "none"
    }

    fn rotate(&self, _h: &mut [f64], _pos: &SlotPosition, _inverse: bool) {}
}

pub const POSITIONAL_ENCODINGS: [&str; 3] = ["hexrope", "rope2d", "none"];

pub fn positional_encoding(
    name: &str,
    head_dim: usize,
    base: f64,
) -> Result<Box<dyn PositionalEncoding>> {
    match name {
        "hexrope" => Ok(Box::new(HexRope::new(head_dim, base)?)),
        "rope2d" => Ok(Box::new(Rope2d::new(head_dim, base)?)),
        "none" => Ok(Box::new(NoRope)),
        other => Err(HexstError::Input(format!(
            "unknown positional encoding '{other}' (known: {})",
            POSITIONAL_ENCODINGS.join(", ")
        ))),
    }
}

/// Rotates every row of `h` (slots × D_H) by its cube offset `(Δu, Δv, Δw)`.
pub fn apply_hexrope(h: &Tensor, offsets: &[(i64, i64, i64)], cfg: &RopeConfig) -> Result<Tensor> {
    check_rows(h, offsets.len(), cfg)?;
    if let Some(bad) = offsets.iter().find(|(u, v, w)| u + v + w != 0) {
        return Err(HexstError::Input(format!(
            "cube offset {bad:?} violates u + v + w = 0"
        )));
    }
    let rope = HexRope {
        cfg: *cfg,
        freqs: cfg.frequencies(),
    };
    let mut out = h.clone();
    for (i, &off) in offsets.iter().enumerate() {
        rope.rotate_cube(out.row_mut(i), off, 1.0);
    }
    Ok(out)
}

/// Rotates every row of `h` by its planar offset `(Δx, Δy)`.
pub fn apply_rope2d(h: &Tensor, offsets: &[(f64, f64)], cfg: &RopeConfig) -> Result<Tensor> {
    check_rows(h, offsets.len(), cfg)?;
    if let Some(bad) = offsets.iter().find(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(HexstError::Input(format!("non-finite offset {bad:?}")));
    }
    let rope = Rope2d {
        cfg: *cfg,
        freqs: cfg.frequencies(),
    };
    let mut out = h.clone();
    for (i, &off) in offsets.iter().enumerate() {
        rope.rotate_planar(out.row_mut(i), off, 1.0);
    }
    Ok(out)
}

fn check_rows(h: &Tensor, n: usize, cfg: &RopeConfig) -> Result<()> {
    if h.shape().len() != 2 || h.rows() != n || h.cols() != cfg.head_dim {
        return Err(HexstError::Structural(format!(
            "features {:?} vs {n} offsets of head dim {}",
            h.shape(),
            cfg.head_dim
        )));
    }
    Ok(())
}
