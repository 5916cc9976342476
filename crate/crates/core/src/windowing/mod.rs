//! Shifted window partitions over spot arrays.
//!
//! A [`WindowStrategy`] turns spot positions into a [`WindowPartition`]:
//! every spot lands in exactly one window and in one slot of that window's
//! fixed slot layout. Strategies are looked up by name through
//! [`window_strategy`] so configurations and the CLI can switch between the
//! hexagonal scheme and the square ablation baseline.

mod export;
mod hex;
mod square;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{HexstError, Result};
use crate::hexgeom::{CartesianPoint, HexCoord, LatticeScale};
use crate::numerics::Mask;

pub use export::{render_partition, write_partition_records, PartitionRecord};
pub use hex::{generate_centers, CenterLattice, HexWindows};
pub use square::{square_side_for_radius, SquareWindows};

/// A spot's raw position together with its rounded lattice cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpot {
    pub cell: HexCoord,
    pub pos: CartesianPoint,
}

pub fn lattice_spots(points: &[CartesianPoint], scale: &LatticeScale) -> Vec<LatticeSpot> {
    points
        .iter()
        .map(|p| LatticeSpot {
            cell: scale.to_cell(p),
            pos: *p,
        })
        .collect()
}

/// Offsets of a radius-K hexagon, ordered lexicographically by (Δq, Δr).
#[derive(Debug, Clone, PartialEq)]
pub struct SlotSet {
    radius: usize,
    offsets: Vec<HexCoord>,
    index: HashMap<HexCoord, usize>,
}

impl SlotSet {
    pub fn new(radius: usize) -> Self {
        let k = radius as i64;
        let mut offsets = Vec::with_capacity(3 * radius * radius + 3 * radius + 1);
        for dq in -k..=k {
            for dr in -k..=k {
                let c = HexCoord::new(dq, dr);
                if c.norm() <= k {
                    offsets.push(c);
                }
            }
        }
        let index = offsets.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        SlotSet {
            radius,
            offsets,
            index,
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn offsets(&self) -> &[HexCoord] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn slot_of(&self, offset: HexCoord) -> Option<usize> {
        self.index.get(&offset).copied()
    }
}

/// Slot set for a signed radius; negative radii are rejected.
pub fn build_slot_set(radius: i64) -> Result<SlotSet> {
    if radius < 0 {
        return Err(HexstError::Input(format!("slot radius {radius} < 0")));
    }
    Ok(SlotSet::new(radius as usize))
}

/// Window-center translation applied to one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shift {
    /// δ = 0
    None,
    /// δ = ½e₁
    HalfE1,
    /// δ = ½e₂
    HalfE2,
}

impl Shift {
    pub const ALL: [Shift; 3] = [Shift::None, Shift::HalfE1, Shift::HalfE2];

    pub fn id(self) -> u8 {
        match self {
            Shift::None => 0,
            Shift::HalfE1 => 1,
            Shift::HalfE2 => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Shift> {
        match id {
            0 => Ok(Shift::None),
            1 => Ok(Shift::HalfE1),
            2 => Ok(Shift::HalfE2),
            _ => Err(HexstError::Input(format!("shift id {id} not in {{0,1,2}}"))),
        }
    }

    /// Shift used by block `block` (0-based) of a stage. The cycle restarts every stage.
    pub fn for_block(block: usize) -> Shift {
        Shift::ALL[block % 3]
    }
}

/// What to do when two spots of one window round to the same slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollisionPolicy {
    /// Fail with [`HexstError::SlotCollision`].
    #[default]
    Strict,
    /// Keep the spot closest to the slot's cell centre, move the other to its
    /// second-nearest window if the matching slot there is free, otherwise
    /// give it a singleton window of its own.
    Lenient,
}

/// Position of a packed spot relative to its window centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotPosition {
    /// Lattice offset from the centre cell.
    pub cell_offset: HexCoord,
    /// Cartesian offset from the centre, in units of the lattice spacing.
    pub planar: (f64, f64),
}

impl SlotPosition {
    pub const ZERO: SlotPosition = SlotPosition {
        cell_offset: HexCoord::ORIGIN,
        planar: (0.0, 0.0),
    };
}

/// One window: its centre, occupied slots and member spots in slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub center: CartesianPoint,
    pub center_cell: HexCoord,
    pub occupancy: Mask,
    pub members: Vec<usize>,
}

/// Assignment of every spot to one window and one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPartition {
    pub stage: usize,
    pub block: usize,
    pub shift: Shift,
    pub slot_radius: usize,
    pub slot_count: usize,
    pub windows: Vec<Window>,
    pub window_of_spot: Vec<usize>,
    pub slot_of_spot: Vec<usize>,
    pub position_of_spot: Vec<SlotPosition>,
    /// Spots that could not be packed without collision (lenient mode only).
    pub overflow_singletons: usize,
}

impl WindowPartition {
    pub fn spot_count(&self) -> usize {
        self.window_of_spot.len()
    }

    pub fn with_stage(mut self, stage: usize, block: usize) -> Self {
        self.stage = stage;
        self.block = block;
        self
    }

    /// Checks the partition contract: each spot in exactly one window, no
    /// shared slots, every lattice offset within the slot radius.
    pub fn verify(&self, spots: &[LatticeSpot]) -> Result<()> {
        let n = spots.len();
        if self.window_of_spot.len() != n || self.slot_of_spot.len() != n {
            return Err(HexstError::Consistency(format!(
                "partition covers {} spots, dataset has {n}",
                self.window_of_spot.len()
            )));
        }
        let mut seen = vec![false; n];
        for (w, win) in self.windows.iter().enumerate() {
            if win.members.is_empty() {
                return Err(HexstError::Consistency(format!("window {w} is empty")));
            }
            if win.occupancy.count() != win.members.len() {
                return Err(HexstError::Consistency(format!(
                    "window {w} occupancy does not match membership"
                )));
            }
            let mut slots = Vec::with_capacity(win.members.len());
            for &i in &win.members {
                if i >= n || seen[i] {
                    return Err(HexstError::Consistency(format!(
                        "spot {i} listed twice or out of range"
                    )));
                }
                seen[i] = true;
                if self.window_of_spot[i] != w {
                    return Err(HexstError::Consistency(format!(
                        "spot {i} member of window {w} but mapped to {}",
                        self.window_of_spot[i]
                    )));
                }
                slots.push(self.slot_of_spot[i]);
                if !win.occupancy.data()[self.slot_of_spot[i]] {
                    return Err(HexstError::Consistency(format!(
                        "spot {i} sits in an unoccupied slot"
                    )));
                }
            }
            slots.sort_unstable();
            if slots.windows(2).any(|p| p[0] == p[1]) {
                return Err(HexstError::Consistency(format!("window {w} reuses a slot")));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(HexstError::Consistency(format!("spot {i} is in no window")));
        }
        for (i, pos) in self.position_of_spot.iter().enumerate() {
            let offset = spots[i].cell.sub(&self.windows[self.window_of_spot[i]].center_cell);
            if offset != pos.cell_offset || offset.norm() > self.slot_radius as i64 {
                return Err(HexstError::Consistency(format!(
                    "spot {i} offset {offset:?} outside radius {}",
                    self.slot_radius
                )));
            }
        }
        Ok(())
    }
}

/// A window layout scheme.
pub trait WindowStrategy: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Partitions the spots for a stage whose hexagonal window radius is `radius`.
    fn partition(
        &self,
        spots: &[LatticeSpot],
        scale: &LatticeScale,
        radius: usize,
        shift: Shift,
    ) -> Result<WindowPartition>;
}

pub const WINDOW_STRATEGIES: [&str; 2] = ["hex", "square"];

pub fn window_strategy(name: &str, policy: CollisionPolicy) -> Result<Box<dyn WindowStrategy>> {
    match name {
        "hex" => Ok(Box::new(HexWindows::new(policy))),
        "square" => Ok(Box::new(SquareWindows::new(policy))),
        other => Err(HexstError::Input(format!(
            "unknown window strategy '{other}' (known: {})",
            WINDOW_STRATEGIES.join(", ")
        ))),
    }
}

/// Assigns slots within each window and assembles a partition.
///
/// `assignment[i]` is the window of spot `i` (index into `centers`);
/// `fallback` gives, per spot, an ordered list of alternative windows tried
/// under the lenient policy.
pub(crate) fn pack_windows(
    spots: &[LatticeSpot],
    scale: &LatticeScale,
    centers: &[CartesianPoint],
    assignment: &[usize],
    fallback: &dyn Fn(usize) -> Vec<usize>,
    slots: &SlotSet,
    shift: Shift,
    policy: CollisionPolicy,
) -> Result<WindowPartition> {
    let center_cells: Vec<HexCoord> = centers.iter().map(|c| scale.to_cell(c)).collect();
    let radius = slots.radius() as i64;

    // (window, slot) -> spot
    let mut occupant: HashMap<(usize, usize), usize> = HashMap::new();
    let mut placed: Vec<Option<(usize, usize)>> = vec![None; spots.len()];
    let mut singletons: Vec<usize> = Vec::new();

    let slot_in = |i: usize, w: usize| -> Option<usize> {
        let off = spots[i].cell.sub(&center_cells[w]);
        if off.norm() > radius {
            None
        } else {
            slots.slot_of(off)
        }
    };

    for (i, &w) in assignment.iter().enumerate() {
        let Some(slot) = slot_in(i, w) else {
            let off = spots[i].cell.sub(&center_cells[w]);
            return Err(HexstError::Consistency(format!(
                "spot {i} has offset {off:?} from its window centre, beyond radius {radius}"
            )));
        };
        match occupant.get(&(w, slot)).copied() {
            None => {
                occupant.insert((w, slot), i);
                placed[i] = Some((w, slot));
            }
            Some(other) => {
                if policy == CollisionPolicy::Strict {
                    return Err(HexstError::SlotCollision {
                        window: w,
                        slot,
                        first: other,
                        second: i,
                    });
                }
                let cell_center = scale.cell_center(spots[i].cell);
                let (keep, evict) = if spots[i].pos.distance_sq(&cell_center)
                    < spots[other].pos.distance_sq(&cell_center)
                {
                    (i, other)
                } else {
                    (other, i)
                };
                occupant.insert((w, slot), keep);
                placed[keep] = Some((w, slot));
                placed[evict] = None;
                let relocated = fallback(evict).into_iter().find_map(|alt| {
                    let s = slot_in(evict, alt)?;
                    (!occupant.contains_key(&(alt, s))).then_some((alt, s))
                });
                match relocated {
                    Some(key) => {
                        occupant.insert(key, evict);
                        placed[evict] = Some(key);
                    }
                    None => {
                        log::warn!("spot {evict} dropped from window packing (slot collision)");
                        singletons.push(evict);
                    }
                }
            }
        }
    }

    // Renumber non-empty windows in centre order.
    let mut used: Vec<usize> = placed.iter().flatten().map(|&(w, _)| w).collect();
    used.sort_unstable();
    used.dedup();
    let mut windows: Vec<Window> = Vec::with_capacity(used.len() + singletons.len());
    let mut renumber = HashMap::new();
    for &w in &used {
        renumber.insert(w, windows.len());
        windows.push(Window {
            center: centers[w],
            center_cell: center_cells[w],
            occupancy: Mask::from_flags(vec![false; slots.len()]),
            members: Vec::new(),
        });
    }

    let n = spots.len();
    let mut window_of_spot = vec![0; n];
    let mut slot_of_spot = vec![0; n];
    let mut position_of_spot = vec![SlotPosition::ZERO; n];
    let planar = |i: usize, center: &CartesianPoint| {
        (
            (spots[i].pos.x - center.x) / scale.d_med,
            (spots[i].pos.y - center.y) / scale.d_med,
        )
    };

    let mut by_slot: Vec<(usize, usize, usize)> = placed
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|(w, s)| (renumber[&w], s, i)))
        .collect();
    by_slot.sort_unstable();
    for (w, s, i) in by_slot {
        let win = &mut windows[w];
        win.members.push(i);
        win.occupancy.set(s, true);
        window_of_spot[i] = w;
        slot_of_spot[i] = s;
        position_of_spot[i] = SlotPosition {
            cell_offset: slots.offsets()[s],
            planar: planar(i, &win.center),
        };
    }
    let centre_slot = slots.slot_of(HexCoord::ORIGIN).expect("origin slot");
    for &i in &singletons {
        let mut flags = vec![false; slots.len()];
        flags[centre_slot] = true;
        let center = scale.cell_center(spots[i].cell);
        window_of_spot[i] = windows.len();
        slot_of_spot[i] = centre_slot;
        position_of_spot[i] = SlotPosition {
            cell_offset: HexCoord::ORIGIN,
            planar: planar(i, &center),
        };
        windows.push(Window {
            center,
            center_cell: spots[i].cell,
            occupancy: Mask::from_flags(flags),
            members: vec![i],
        });
    }

    Ok(WindowPartition {
        stage: 0,
        block: 0,
        shift,
        slot_radius: slots.radius(),
        slot_count: slots.len(),
        windows,
        window_of_spot,
        slot_of_spot,
        position_of_spot,
        overflow_singletons: singletons.len(),
    })
}

/// Axis-aligned bounding box of spot positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: CartesianPoint,
    pub max: CartesianPoint,
}

impl Bounds {
    pub fn of(points: impl IntoIterator<Item = CartesianPoint>) -> Option<Bounds> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Bounds {
            min: first,
            max: first,
        };
        for p in it {
            b.min.x = b.min.x.min(p.x);
            b.min.y = b.min.y.min(p.y);
            b.max.x = b.max.x.max(p.x);
            b.max.y = b.max.y.max(p.y);
        }
        Some(b)
    }

    pub fn distance_to(&self, p: &CartesianPoint) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        (dx * dx + dy * dy).sqrt()
    }
}
