use std::collections::BTreeMap;

use super::{pack_windows, CollisionPolicy, LatticeSpot, Shift, SlotSet, WindowPartition, WindowStrategy};
use crate::error::{HexstError, Result};
use crate::hexgeom::{CartesianPoint, LatticeScale, SQRT_3};

/// Square side (in lattice spacings) whose area matches a radius-K hexagonal window.
pub fn square_side_for_radius(radius: usize) -> usize {
    let k = radius as f64;
    let cells = 3.0 * k * k + 3.0 * k + 1.0;
    ((cells * SQRT_3 / 2.0).sqrt().round() as usize).max(1)
}

/// Smallest hex radius containing every cell whose centre can fall inside a tile.
fn slot_radius_for_side(side: usize) -> usize {
    // half-diagonal plus one cell circumradius for each of the two roundings,
    // divided by the minimum centre distance per hex step (√3/2 spacings)
    let reach = side as f64 / std::f64::consts::SQRT_2 + 2.0 / SQRT_3;
    (reach / (SQRT_3 / 2.0)).ceil() as usize
}

/// Axis-aligned square tiles on anchor-relative coordinates, the ablation
/// baseline. Shift 1 moves tiles by half a side along y, shift 2 along both axes.
#[derive(Debug, Clone, Default)]
pub struct SquareWindows {
    policy: CollisionPolicy,
    side: Option<usize>,
}

impl SquareWindows {
    pub fn new(policy: CollisionPolicy) -> Self {
        SquareWindows { policy, side: None }
    }

    /// Fixes the tile side instead of deriving it from the stage radius.
    pub fn with_side(policy: CollisionPolicy, side: usize) -> Result<Self> {
        if side == 0 {
            return Err(HexstError::Input("square side must be at least 1".into()));
        }
        Ok(SquareWindows {
            policy,
            side: Some(side),
        })
    }
}

impl WindowStrategy for SquareWindows {
    fn name(&self) -> &'static str {
        "square"
    }

    fn partition(
        &self,
        spots: &[LatticeSpot],
        scale: &LatticeScale,
        radius: usize,
        shift: Shift,
    ) -> Result<WindowPartition> {
        if spots.is_empty() {
            return Err(HexstError::Input("cannot partition an empty spot list".into()));
        }
        let side = self.side.unwrap_or_else(|| square_side_for_radius(radius));
        let sidef = side as f64;
        let (sx, sy) = match shift {
            Shift::None => (0.0, 0.0),
            Shift::HalfE1 => (0.0, 0.5 * sidef),
            Shift::HalfE2 => (0.5 * sidef, 0.5 * sidef),
        };
        let tile_of = |p: &CartesianPoint| -> (i64, i64) {
            let x = (p.x - scale.anchor.x) / scale.d_med - sx;
            let y = (p.y - scale.anchor.y) / scale.d_med - sy;
            // points on a tile edge up to rounding go to the upper tile
            let cell = |v: f64| (v / sidef + 1e-9).floor() as i64;
            (cell(x), cell(y))
        };
        let tiles: Vec<(i64, i64)> = spots.iter().map(|s| tile_of(&s.pos)).collect();
        let mut order: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        for t in &tiles {
            order.entry(*t).or_insert(0);
        }
        let mut centers = Vec::with_capacity(order.len());
        for (idx, ((i, j), slot)) in order.iter_mut().enumerate() {
            *slot = idx;
            centers.push(scale.anchor.offset(
                ((*i as f64 + 0.5) * sidef + sx) * scale.d_med,
                ((*j as f64 + 0.5) * sidef + sy) * scale.d_med,
            ));
        }
        let assignment: Vec<usize> = tiles.iter().map(|t| order[t]).collect();
        let no_fallback = |_: usize| Vec::new();
        pack_windows(
            spots,
            scale,
            &centers,
            &assignment,
            &no_fallback,
            &SlotSet::new(slot_radius_for_side(side)),
            shift,
            self.policy,
        )
    }
}
