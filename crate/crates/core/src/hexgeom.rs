//! Pointy-top hexagonal lattice geometry: spacing estimation from raw spot
//! coordinates, Cartesian → fractional axial conversion, cube rounding and
//! the cube-coordinate hex distance.

use serde::{Deserialize, Serialize};

use crate::error::{HexstError, Result};

pub const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Default neighbour rank used for spacing estimation.
///
/// The median third-nearest-neighbour distance stays in the first neighbour
/// shell for boundary spots and under moderate dropout, while the sixth
/// neighbour does not.
pub const DEFAULT_SCALE_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianPoint {
    pub x: f64,
    pub y: f64,
}

impl CartesianPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        CartesianPoint { x, y }
    }

    pub fn distance_sq(&self, other: &CartesianPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn distance(&self, other: &CartesianPoint) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn offset(&self, dx: f64, dy: f64) -> CartesianPoint {
        CartesianPoint::new(self.x + dx, self.y + dy)
    }
}

/// Integer axial coordinate; cube components are `(q, r, -q-r)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HexCoord {
    pub q: i64,
    pub r: i64,
}

impl HexCoord {
    pub const ORIGIN: HexCoord = HexCoord { q: 0, r: 0 };

    /// The six unit steps of the lattice, counter-clockwise from east.
    pub const DIRECTIONS: [HexCoord; 6] = [
        HexCoord { q: 1, r: 0 },
        HexCoord { q: 1, r: -1 },
        HexCoord { q: 0, r: -1 },
        HexCoord { q: -1, r: 0 },
        HexCoord { q: -1, r: 1 },
        HexCoord { q: 0, r: 1 },
    ];

    pub const fn new(q: i64, r: i64) -> Self {
        HexCoord { q, r }
    }

    pub fn cube(&self) -> (i64, i64, i64) {
        (self.q, self.r, -self.q - self.r)
    }

    pub fn sub(&self, other: &HexCoord) -> HexCoord {
        HexCoord::new(self.q - other.q, self.r - other.r)
    }

    pub fn add(&self, other: &HexCoord) -> HexCoord {
        HexCoord::new(self.q + other.q, self.r + other.r)
    }

    pub fn neighbors(&self) -> impl Iterator<Item = HexCoord> + '_ {
        HexCoord::DIRECTIONS.iter().map(move |d| self.add(d))
    }

    /// Cube norm, i.e. hex distance to the origin.
    pub fn norm(&self) -> i64 {
        self.q.abs().max(self.r.abs()).max((self.q + self.r).abs())
    }
}

/// Spacing and origin of the spot lattice in input units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeScale {
    /// Median k-th nearest neighbour distance.
    pub d_med: f64,
    /// Hexagon side length, `d_med / √3`.
    pub s_spot: f64,
    pub anchor: CartesianPoint,
}

impl LatticeScale {
    pub fn new(d_med: f64, anchor: CartesianPoint) -> Result<Self> {
        if !(d_med > 0.0) || !d_med.is_finite() {
            return Err(HexstError::Degenerate(format!("lattice spacing {d_med}")));
        }
        Ok(LatticeScale {
            d_med,
            s_spot: d_med / SQRT_3,
            anchor,
        })
    }

    /// Exact Cartesian position of a lattice cell centre.
    pub fn cell_center(&self, c: HexCoord) -> CartesianPoint {
        let (q, r) = (c.q as f64, c.r as f64);
        self.anchor.offset(
            self.s_spot * SQRT_3 * (q + 0.5 * r),
            self.s_spot * 1.5 * r,
        )
    }

    pub fn to_cell(&self, p: &CartesianPoint) -> HexCoord {
        let (q, r) = cartesian_to_axial_frac(p, self);
        cube_round(q, r)
    }
}

/// Median over points of the Euclidean distance to the k-th nearest other point.
///
/// Exhaustive O(N²) search. For an even number of points the lower middle
/// element is taken. The anchor is the first point.
pub fn estimate_scale(points: &[CartesianPoint], k: usize) -> Result<LatticeScale> {
    if k == 0 {
        return Err(HexstError::Input("neighbour rank k must be at least 1".into()));
    }
    if points.len() < k + 1 {
        return Err(HexstError::Input(format!(
            "need at least {} points for k = {k}, got {}",
            k + 1,
            points.len()
        )));
    }
    if let Some(bad) = points.iter().find(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(HexstError::Input(format!("non-finite coordinate {bad:?}")));
    }
    let mut kth = Vec::with_capacity(points.len());
    let mut dists = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        dists.clear();
        dists.extend(
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, o)| p.distance(o)),
        );
        let (_, d, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
        kth.push(*d);
    }
    kth.sort_by(f64::total_cmp);
    let d_med = kth[(kth.len() - 1) / 2];
    if d_med == 0.0 {
        return Err(HexstError::Degenerate(
            "median neighbour distance is zero (coincident points)".into(),
        ));
    }
    LatticeScale::new(d_med, points[0])
}

/// Fractional axial coordinates of `p` relative to the anchor.
pub fn cartesian_to_axial_frac(p: &CartesianPoint, scale: &LatticeScale) -> (f64, f64) {
    let x1 = (p.x - scale.anchor.x) / scale.s_spot;
    let x2 = (p.y - scale.anchor.y) / scale.s_spot;
    (SQRT_3 / 3.0 * x1 - x2 / 3.0, 2.0 / 3.0 * x2)
}

/// Nearest lattice cell of a fractional axial coordinate.
///
/// Each cube component is rounded (half away from zero) and the component
/// with the largest rounding error is recomputed from the other two. When
/// two components share the largest error the earlier one in (u, v, w)
/// order is repaired.
pub fn cube_round(q: f64, r: f64) -> HexCoord {
    let frac = [q, r, -q - r];
    let mut rounded = frac.map(f64::round);
    let err = [
        (rounded[0] - frac[0]).abs(),
        (rounded[1] - frac[1]).abs(),
        (rounded[2] - frac[2]).abs(),
    ];
    if err[0] >= err[1] && err[0] >= err[2] {
        rounded[0] = -rounded[1] - rounded[2];
    } else if err[1] >= err[2] {
        rounded[1] = -rounded[0] - rounded[2];
    } else {
        rounded[2] = -rounded[0] - rounded[1];
    }
    HexCoord::new(rounded[0] as i64, rounded[1] as i64)
}

pub fn hex_distance(a: HexCoord, b: HexCoord) -> i64 {
    a.sub(&b).norm()
}
