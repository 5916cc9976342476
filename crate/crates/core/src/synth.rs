//! Synthetic spot arrays: a jittered hexagonal patch with dropped spots,
//! expression with planted spatial structure, visual tokens and mock
//! transcriptomic embeddings.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::SpotDataset;
use crate::error::{HexstError, Result};
use crate::hexgeom::{CartesianPoint, HexCoord, LatticeScale};
use crate::numerics::{norm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenePattern {
    /// Step function across a random line.
    Boundary,
    /// Linear ramp along a random direction.
    Gradient,
    /// Mostly exact zeros with a few expressed blobs.
    Sparse,
    /// Independent per-spot values with no spatial structure.
    Noise,
}

impl fmt::Display for GenePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GenePattern::Boundary => "boundary",
            GenePattern::Gradient => "gradient",
            GenePattern::Sparse => "sparse",
            GenePattern::Noise => "noise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenRule {
    /// Tokens are a fixed linear map of the expression plus noise.
    #[default]
    Informative,
    /// Tokens carry no information about expression.
    PureNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub radius: usize,
    pub spacing: f64,
    /// Positional noise σ as a fraction of the spacing.
    pub jitter: f64,
    pub dropout: f64,
    pub genes: Vec<GenePattern>,
    pub token_rule: TokenRule,
    pub token_dim: usize,
    pub token_noise: f64,
    /// Per-spot expression noise σ.
    pub expression_noise: f64,
    /// Boundary step height in units of `expression_noise`.
    pub boundary_contrast: f64,
    /// Mock transcriptomic embedding width; 0 skips the embedding.
    pub transcriptomic_dim: usize,
    /// Position of the lattice cell (0, 0).
    pub origin: (f64, f64),
    /// Tissue seed: the token map and the transcriptomic map.
    pub seed: u64,
    /// Section index: spatial layout of every pattern, jitter, dropout and
    /// noise. Sections of one tissue share how tokens relate to expression
    /// but not where anything is.
    pub section: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        use GenePattern::*;
        SynthConfig {
            radius: 10,
            spacing: 1.0,
            jitter: 0.05,
            dropout: 0.1,
            genes: vec![
                Boundary, Boundary, Boundary, Boundary, Boundary, Gradient, Gradient, Gradient,
                Gradient, Sparse, Sparse, Sparse, Sparse, Noise, Noise, Noise,
            ],
            token_rule: TokenRule::Informative,
            token_dim: 32,
            token_noise: 0.1,
            expression_noise: 0.25,
            boundary_contrast: 6.0,
            transcriptomic_dim: 16,
            origin: (0.0, 0.0),
            seed: 0,
            section: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HexstError::Input(m));
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return bad(format!("spacing must be positive, got {}", self.spacing));
        }
        if !(0.0..0.3).contains(&self.jitter) {
            return bad(format!("jitter must lie in [0, 0.3), got {}", self.jitter));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.genes.is_empty() {
            return bad("at least one gene pattern is required".into());
        }
        if self.token_dim == 0 {
            return bad("token_dim must be at least 1".into());
        }
        if !(self.expression_noise >= 0.0) || !(self.token_noise >= 0.0) {
            return bad("noise levels must be nonnegative".into());
        }
        if !(self.boundary_contrast >= 4.0) {
            return bad(format!(
                "boundary contrast must be at least 4 noise sigmas, got {}",
                self.boundary_contrast
            ));
        }
        Ok(())
    }
}

/// Generation-side facts the dataset files do not carry.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth {
    pub patterns: Vec<GenePattern>,
    /// Generating lattice cell of each surviving spot.
    pub cells: Vec<HexCoord>,
    /// For boundary genes, whether each spot lies on the high side.
    pub high_side: Vec<Option<Vec<bool>>>,
    /// Noise-free high minus low mean for boundary genes.
    pub contrast: Vec<Option<f64>>,
}

/// Cells of a radius-`radius` hexagonal patch, ring by ring from the
/// centre; lexicographic (q, r) within a ring. The centre comes first so
/// that it becomes the anchor.
pub fn hex_patch(radius: usize) -> Vec<HexCoord> {
    let k = radius as i64;
    let mut cells = Vec::new();
    for q in -k..=k {
        for r in -k..=k {
            let c = HexCoord::new(q, r);
            if c.norm() <= k {
                cells.push(c);
            }
        }
    }
    cells.sort_by_key(|c| c.norm());
    cells
}

fn unit_direction(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    (theta.cos(), theta.sin())
}

pub fn generate(cfg: &SynthConfig) -> Result<SpotDataset> {
    generate_with_truth(cfg).map(|(d, _)| d)
}

pub fn generate_with_truth(cfg: &SynthConfig) -> Result<(SpotDataset, PlantedTruth)> {
    cfg.validate()?;
    let mut tissue = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sample = ChaCha8Rng::seed_from_u64(cfg.seed);
    sample.set_stream(cfg.section.wrapping_add(1));
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let lattice = LatticeScale::new(cfg.spacing, CartesianPoint::new(cfg.origin.0, cfg.origin.1))?;

    let mut cells = Vec::new();
    let mut coords = Vec::new();
    let mut exact = Vec::new();
    for c in hex_patch(cfg.radius) {
        let jx = std_normal.sample(&mut sample) * cfg.jitter * cfg.spacing;
        let jy = std_normal.sample(&mut sample) * cfg.jitter * cfg.spacing;
        let keep = sample.random::<f64>() >= cfg.dropout;
        if keep {
            let p = lattice.cell_center(c);
            cells.push(c);
            exact.push(p);
            coords.push(p.offset(jx, jy));
        }
    }
    if coords.is_empty() {
        return Err(HexstError::Input("dropout removed every spot".into()));
    }
    let n = coords.len();
    let g = cfg.genes.len();
    let extent = (cfg.radius.max(1) as f64) * cfg.spacing;
    let sigma = cfg.expression_noise;

    let mut expression = Tensor::zeros(&[n, g]);
    let mut high_side = vec![None; g];
    let mut contrast = vec![None; g];
    for (j, pattern) in cfg.genes.iter().enumerate() {
        let local = |p: &CartesianPoint| ((p.x - cfg.origin.0) / extent, (p.y - cfg.origin.1) / extent);
        match pattern {
            GenePattern::Boundary => {
                let (nx, ny) = unit_direction(&mut sample);
                let cut = sample.random_range(-0.3..0.3);
                let low = 1.0 + sample.random_range(0.0..1.0);
                let step = cfg.boundary_contrast * sigma.max(0.05);
                let side: Vec<bool> = exact
                    .iter()
                    .map(|p| {
                        let (u, v) = local(p);
                        u * nx + v * ny > cut
                    })
                    .collect();
                for i in 0..n {
                    let mean = if side[i] { low + step } else { low };
                    let y = mean + sigma * std_normal.sample(&mut sample);
                    expression.set(i, j, y.max(0.0));
                }
                high_side[j] = Some(side);
                contrast[j] = Some(step);
            }
            GenePattern::Gradient => {
                let (nx, ny) = unit_direction(&mut sample);
                let amp = sample.random_range(1.5..3.0);
                for i in 0..n {
                    let (u, v) = local(&exact[i]);
                    let t = 0.5 * (u * nx + v * ny + 1.0);
                    let y = 0.5 + amp * t + sigma * std_normal.sample(&mut sample);
                    expression.set(i, j, y.max(0.0));
                }
            }
            GenePattern::Sparse => {
                let blobs: Vec<(f64, f64)> = (0..3)
                    .map(|_| (sample.random_range(-0.8..0.8), sample.random_range(-0.8..0.8)))
                    .collect();
                let width = 0.25;
                for i in 0..n {
                    let (u, v) = local(&exact[i]);
                    let bump: f64 = blobs
                        .iter()
                        .map(|(bx, by)| (-((u - bx).powi(2) + (v - by).powi(2)) / (2.0 * width * width)).exp())
                        .sum();
                    let base = 3.0 * bump - 1.2;
                    let noise = sigma * std_normal.sample(&mut sample);
                    let y = if base > 0.0 { (base + noise).max(0.0) } else { 0.0 };
                    expression.set(i, j, y);
                }
            }
            GenePattern::Noise => {
                for i in 0..n {
                    let y = 1.0 + 2.0 * sigma * std_normal.sample(&mut sample);
                    expression.set(i, j, y.max(0.0));
                }
            }
        }
    }

    let d_in = cfg.token_dim;
    let tokens = match cfg.token_rule {
        TokenRule::Informative => {
            let scale = 1.0 / (g as f64).sqrt();
            let map: Vec<f64> = (0..g * d_in).map(|_| std_normal.sample(&mut tissue) * scale).collect();
            let map = Tensor::matrix(g, d_in, map)?;
            let mut t = expression.matmul(&map)?;
            for v in t.data_mut() {
                *v += cfg.token_noise * std_normal.sample(&mut sample);
            }
            t
        }
        TokenRule::PureNoise => {
            let data = (0..n * d_in).map(|_| std_normal.sample(&mut sample)).collect();
            Tensor::matrix(n, d_in, data)?
        }
    };

    let transcriptomic = if cfg.transcriptomic_dim > 0 {
        Some(mock_transcriptomic(&expression, cfg.transcriptomic_dim, cfg.seed ^ 0x7f4a_7c15)?)
    } else {
        None
    };

    let genes = cfg
        .genes
        .iter()
        .enumerate()
        .map(|(j, p)| format!("g{j:02}_{p}"))
        .collect();
    let spot_ids = cells.iter().map(|c| format!("s_{}_{}", c.q, c.r)).collect();
    let dataset = SpotDataset::new(spot_ids, coords, genes, tokens, expression, transcriptomic)?;
    let truth = PlantedTruth {
        patterns: cfg.genes.clone(),
        cells,
        high_side,
        contrast,
    };
    Ok((dataset, truth))
}

/// Stand-in for a foundation-model embedding of expression profiles:
/// `normalize_rows(tanh(Y·W + b))` with a seeded Gaussian `W` and `b`.
pub fn mock_transcriptomic(expression: &Tensor, d_t: usize, seed: u64) -> Result<Tensor> {
    if d_t == 0 {
        return Err(HexstError::Input("transcriptomic dimension must be at least 1".into()));
    }
    let g = expression.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let scale = 1.0 / (g.max(1) as f64).sqrt();
    let w: Vec<f64> = (0..g * d_t).map(|_| std_normal.sample(&mut rng) * scale).collect();
    let b: Vec<f64> = (0..d_t).map(|_| 0.1 * std_normal.sample(&mut rng)).collect();
    let mut t = expression.matmul(&Tensor::matrix(g, d_t, w)?)?;
    t.add_row_vector(&b);
    let mut t = t.map(f64::tanh);
    for i in 0..t.rows() {
        let row = t.row_mut(i);
        let nrm = norm(row);
        if nrm > 0.0 {
            row.iter_mut().for_each(|v| *v /= nrm);
        } else {
            // only reachable when tanh underflows every entry to zero
            row[0] = 1.0;
        }
    }
    Ok(t)
}

/// Seeded train/held-out split; returns (train, held-out) row indices, each sorted.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_hold = ((n as f64) * fraction).round() as usize;
    let n_hold = n_hold.min(n);
    let (hold, train) = idx.split_at(n_hold);
    let mut train = train.to_vec();
    let mut hold = hold.to_vec();
    train.sort_unstable();
    hold.sort_unstable();
    (train, hold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hexgeom::estimate_scale;
    use crate::numerics::{dot, mean_std};

    fn clean(radius: usize) -> SynthConfig {
        SynthConfig {
            radius,
            jitter: 0.0,
            dropout: 0.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn radius_zero_is_single_spot() {
        let d = generate(&clean(0)).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.coords[0], CartesianPoint::new(0.0, 0.0));
    }

    #[test]
    fn radius_three_has_37_spots() {
        assert_eq!(generate(&clean(3)).unwrap().len(), 37);
        assert_eq!(hex_patch(3).len(), 37);
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SynthConfig::default();
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn sections_share_token_map_but_not_layout() {
        let base = SynthConfig { token_noise: 0.0, ..SynthConfig::default() };
        let (a, ta) = generate_with_truth(&base).unwrap();
        let (b, tb) = generate_with_truth(&SynthConfig { section: 1, ..base.clone() }).unwrap();
        assert_ne!(ta.high_side, tb.high_side);
        assert_ne!(a.coords, b.coords);
        // Same linear map: solving tokens = Y·M on one section reproduces the other's tokens.
        let m = least_squares(&a.expression, &a.tokens);
        let pred = b.expression.matmul(&m).unwrap();
        for (p, t) in pred.data().iter().zip(b.tokens.data()) {
            assert!((p - t).abs() < 1e-8);
        }
        let c = generate(&SynthConfig { seed: 1, ..base }).unwrap();
        let other = c.expression.matmul(&m).unwrap();
        assert!(other.data().iter().zip(c.tokens.data()).any(|(p, t)| (p - t).abs() > 1e-3));
    }

    /// M minimising ‖X·M − T‖ via the normal equations.
    fn least_squares(x: &Tensor, t: &Tensor) -> Tensor {
        let g = x.cols();
        let mut a = x.matmul_tn(x).unwrap();
        let mut b = x.matmul_tn(t).unwrap();
        for col in 0..g {
            let piv = (col..g).max_by(|&i, &j| a.get(i, col).abs().total_cmp(&a.get(j, col).abs())).unwrap();
            for k in 0..g {
                let (u, v) = (a.get(col, k), a.get(piv, k));
                a.set(col, k, v);
                a.set(piv, k, u);
            }
            for k in 0..b.cols() {
                let (u, v) = (b.get(col, k), b.get(piv, k));
                b.set(col, k, v);
                b.set(piv, k, u);
            }
            for i in 0..g {
                if i != col {
                    let f = a.get(i, col) / a.get(col, col);
                    for k in 0..g {
                        a.set(i, k, a.get(i, k) - f * a.get(col, k));
                    }
                    for k in 0..b.cols() {
                        b.set(i, k, b.get(i, k) - f * b.get(col, k));
                    }
                }
            }
        }
        for i in 0..g {
            let d = a.get(i, i);
            for k in 0..b.cols() {
                b.set(i, k, b.get(i, k) / d);
            }
        }
        b
    }

    #[test]
    fn all_dropped_is_an_error() {
        let cfg = SynthConfig {
            radius: 0,
            dropout: 0.999,
            seed: 2,
            ..SynthConfig::default()
        };
        let mut hit = false;
        for seed in 0..50 {
            if let Err(HexstError::Input(_)) = generate(&SynthConfig { seed, ..cfg.clone() }) {
                hit = true;
                break;
            }
        }
        assert!(hit);
    }

    #[test]
    fn config_validation() {
        for bad in [
            SynthConfig { jitter: 0.3, ..Default::default() },
            SynthConfig { dropout: 1.0, ..Default::default() },
            SynthConfig { spacing: 0.0, ..Default::default() },
            SynthConfig { genes: vec![], ..Default::default() },
            SynthConfig { boundary_contrast: 3.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn exact_round_trip_without_jitter() {
        for seed in 0..5 {
            let cfg = SynthConfig { jitter: 0.0, seed, ..Default::default() };
            let (d, truth) = generate_with_truth(&cfg).unwrap();
            let scale = estimate_scale(&d.coords, 3).unwrap();
            let base = truth.cells[0];
            for (p, c) in d.coords.iter().zip(&truth.cells) {
                assert_eq!(scale.to_cell(p), c.sub(&base));
            }
        }
    }

    #[test]
    fn jittered_round_trip_rate() {
        let (mut hit, mut total) = (0usize, 0usize);
        for seed in 0..20 {
            let cfg = SynthConfig { jitter: 0.1, seed, ..Default::default() };
            let (d, truth) = generate_with_truth(&cfg).unwrap();
            let scale = estimate_scale(&d.coords, 3).unwrap();
            let base = truth.cells[0];
            for (p, c) in d.coords.iter().zip(&truth.cells) {
                total += 1;
                hit += usize::from(scale.to_cell(p) == c.sub(&base));
            }
        }
        let rate = hit as f64 / total as f64;
        assert!(rate >= 0.99, "round-trip rate {rate}");
    }

    #[test]
    fn boundary_contrast_is_planted() {
        let (d, truth) = generate_with_truth(&SynthConfig::default()).unwrap();
        for (j, side) in truth.high_side.iter().enumerate() {
            let Some(side) = side else { continue };
            let col = d.expression.column(j);
            let hi: Vec<f64> = col.iter().zip(side).filter(|(_, &s)| s).map(|(v, _)| *v).collect();
            let lo: Vec<f64> = col.iter().zip(side).filter(|(_, &s)| !s).map(|(v, _)| *v).collect();
            let gap = mean_std(&hi).0 - mean_std(&lo).0;
            assert!(truth.contrast[j].unwrap() >= 4.0 * 0.25);
            assert!((gap - truth.contrast[j].unwrap()).abs() < 0.2, "gene {j}: {gap}");
        }
    }

    #[test]
    fn sparse_genes_have_zeros() {
        let (d, truth) = generate_with_truth(&SynthConfig::default()).unwrap();
        for (j, p) in truth.patterns.iter().enumerate() {
            if *p == GenePattern::Sparse {
                let zeros = d.expression.column(j).iter().filter(|&&v| v == 0.0).count();
                assert!(zeros > d.len() / 4 && zeros < d.len(), "gene {j}: {zeros} zeros");
            }
        }
    }

    #[test]
    fn mock_embedding_properties() {
        let y = Tensor::from_rows(&[
            vec![1.0, 2.0, 0.5, 0.0],
            vec![1.1, 2.1, 0.6, 0.1],
            vec![-1.0, -2.0, -0.5, 0.0],
            vec![1.0, 2.0, 0.5, 0.0],
        ])
        .unwrap();
        let t = mock_transcriptomic(&y, 8, 9).unwrap();
        for i in 0..4 {
            assert!((norm(t.row(i)) - 1.0).abs() < 1e-12);
        }
        assert_eq!(t.row(0), t.row(3));
        assert!(dot(t.row(0), t.row(1)) > dot(t.row(0), t.row(2)));
        assert!(mock_transcriptomic(&y, 0, 9).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let (train, hold) = holdout_split(100, 0.3, 4);
        assert_eq!(hold.len(), 30);
        let mut all: Vec<usize> = train.iter().chain(&hold).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(holdout_split(100, 0.3, 4), (train, hold));
    }
}
