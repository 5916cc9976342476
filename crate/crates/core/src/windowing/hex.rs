use std::collections::HashMap;

use super::{pack_windows, Bounds, CollisionPolicy, LatticeSpot, Shift, SlotSet, WindowPartition, WindowStrategy};
use crate::error::{HexstError, Result};
use crate::hexgeom::{CartesianPoint, LatticeScale, SQRT_3};

/// The coarse lattice of window centres for one window radius.
///
/// Basis `e1 = (0, √3·K·s)`, `e2 = (3/2·K·s, √3/2·K·s)`; centres are
/// `anchor + α·e1 + β·e2 + δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterLattice {
    pub origin: CartesianPoint,
    /// Shift δ applied to the anchor.
    pub delta: (f64, f64),
    pub e1: (f64, f64),
    pub e2: (f64, f64),
}

impl CenterLattice {
    pub fn new(scale: &LatticeScale, radius: usize, shift: Shift) -> Self {
        let s = radius as f64 * scale.s_spot;
        let e1 = (0.0, SQRT_3 * s);
        let e2 = (1.5 * s, SQRT_3 / 2.0 * s);
        let delta = match shift {
            Shift::None => (0.0, 0.0),
            Shift::HalfE1 => (0.5 * e1.0, 0.5 * e1.1),
            Shift::HalfE2 => (0.5 * e2.0, 0.5 * e2.1),
        };
        CenterLattice {
            origin: scale.anchor.offset(delta.0, delta.1),
            delta,
            e1,
            e2,
        }
    }

    /// Centre `(α, β)` relative to the anchor.
    pub fn relative(&self, alpha: i64, beta: i64) -> (f64, f64) {
        let (a, b) = (alpha as f64, beta as f64);
        (
            self.delta.0 + a * self.e1.0 + b * self.e2.0,
            self.delta.1 + a * self.e1.1 + b * self.e2.1,
        )
    }

    pub fn point(&self, alpha: i64, beta: i64) -> CartesianPoint {
        let (a, b) = (alpha as f64, beta as f64);
        self.origin
            .offset(a * self.e1.0 + b * self.e2.0, a * self.e1.1 + b * self.e2.1)
    }

    /// Fractional (α, β) of a point.
    pub fn coords(&self, p: &CartesianPoint) -> (f64, f64) {
        let dx = p.x - self.origin.x;
        let dy = p.y - self.origin.y;
        // e2.0 != 0 for radius >= 1
        let beta = dx / self.e2.0;
        let alpha = (dy - beta * self.e2.1) / self.e1.1;
        (alpha, beta)
    }
}

/// All centres within `√3·K·s_spot` of the bounding box, ordered by (α, β).
pub fn generate_centers(
    scale: &LatticeScale,
    radius: usize,
    shift: Shift,
    bounds: &Bounds,
) -> Result<Vec<CartesianPoint>> {
    Ok(enumerate_centers(scale, radius, shift, bounds)?
        .into_iter()
        .map(|(_, p)| p)
        .collect())
}

fn enumerate_centers(
    scale: &LatticeScale,
    radius: usize,
    shift: Shift,
    bounds: &Bounds,
) -> Result<Vec<((i64, i64), CartesianPoint)>> {
    if radius == 0 {
        return Err(HexstError::Input("window radius must be at least 1".into()));
    }
    let lattice = CenterLattice::new(scale, radius, shift);
    let reach = SQRT_3 * radius as f64 * scale.s_spot;
    let corners = [
        bounds.min.offset(-reach, -reach),
        CartesianPoint::new(bounds.max.x + reach, bounds.min.y - reach),
        CartesianPoint::new(bounds.min.x - reach, bounds.max.y + reach),
        bounds.max.offset(reach, reach),
    ];
    let (mut a_lo, mut a_hi, mut b_lo, mut b_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for c in &corners {
        let (a, b) = lattice.coords(c);
        a_lo = a_lo.min(a);
        a_hi = a_hi.max(a);
        b_lo = b_lo.min(b);
        b_hi = b_hi.max(b);
    }
    let mut out = Vec::new();
    for alpha in (a_lo.floor() as i64 - 1)..=(a_hi.ceil() as i64 + 1) {
        for beta in (b_lo.floor() as i64 - 1)..=(b_hi.ceil() as i64 + 1) {
            let p = lattice.point(alpha, beta);
            if bounds.distance_to(&p) <= reach {
                out.push(((alpha, beta), p));
            }
        }
    }
    Ok(out)
}

/// Voronoi-style assignment of spots to a coarse hexagonal lattice of centres.
#[derive(Debug, Clone, Default)]
pub struct HexWindows {
    policy: CollisionPolicy,
}

impl HexWindows {
    pub fn new(policy: CollisionPolicy) -> Self {
        HexWindows { policy }
    }
}

impl WindowStrategy for HexWindows {
    fn name(&self) -> &'static str {
        "hex"
    }

    fn partition(
        &self,
        spots: &[LatticeSpot],
        scale: &LatticeScale,
        radius: usize,
        shift: Shift,
    ) -> Result<WindowPartition> {
        let bounds = Bounds::of(spots.iter().map(|s| s.pos))
            .ok_or_else(|| HexstError::Input("cannot partition an empty spot list".into()))?;
        let enumerated = enumerate_centers(scale, radius, shift, &bounds)?;
        let lattice = CenterLattice::new(scale, radius, shift);
        let index: HashMap<(i64, i64), usize> = enumerated
            .iter()
            .enumerate()
            .map(|(i, (ab, _))| (*ab, i))
            .collect();
        let centers: Vec<CartesianPoint> = enumerated.iter().map(|(_, p)| *p).collect();

        // Nearest centres are among the corners of the containing (α, β) cell;
        // a 4×4 neighbourhood is checked and ranked by (distance², index).
        // Distances are taken relative to the anchor, and distances equal up
        // to rounding count as ties, so that exact geometric ties (a spot
        // midway between two shifted centres) resolve the same way wherever
        // the slide sits.
        let tol = 1e-9 * (radius as f64 * scale.d_med).powi(2);
        let rel = |p: &CartesianPoint| (p.x - scale.anchor.x, p.y - scale.anchor.y);
        let ranked = |i: usize| -> Vec<usize> {
            let p = spots[i].pos;
            let (px, py) = rel(&p);
            let (a, b) = lattice.coords(&p);
            let (a0, b0) = (a.floor() as i64, b.floor() as i64);
            let mut cand: Vec<(f64, usize)> = Vec::with_capacity(16);
            for da in -1..=2 {
                for db in -1..=2 {
                    if let Some(&c) = index.get(&(a0 + da, b0 + db)) {
                        let (cx, cy) = lattice.relative(a0 + da, b0 + db);
                        cand.push(((px - cx).powi(2) + (py - cy).powi(2), c));
                    }
                }
            }
            let before = |x: &(f64, usize), y: &(f64, usize)| {
                x.0 < y.0 - tol || ((x.0 - y.0).abs() <= tol && x.1 < y.1)
            };
            for k in 1..cand.len() {
                let mut j = k;
                while j > 0 && before(&cand[j], &cand[j - 1]) {
                    cand.swap(j, j - 1);
                    j -= 1;
                }
            }
            cand.into_iter().map(|(_, c)| c).collect()
        };

        let mut assignment = Vec::with_capacity(spots.len());
        for i in 0..spots.len() {
            let best = ranked(i).first().copied().ok_or_else(|| {
                HexstError::Consistency(format!("no window centre near spot {i}"))
            })?;
            assignment.push(best);
        }
        let fallback = |i: usize| ranked(i).into_iter().skip(1).collect::<Vec<_>>();
        pack_windows(
            spots,
            scale,
            &centers,
            &assignment,
            &fallback,
            &SlotSet::new(radius),
            shift,
            self.policy,
        )
    }
}
