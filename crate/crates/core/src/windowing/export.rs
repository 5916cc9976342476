use std::io::Write;

use super::{LatticeSpot, WindowPartition};
use crate::render::{palette_color, Pixmap, PlotFrame};

/// One exported line of a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionRecord {
    pub spot_id: String,
    pub stage: usize,
    pub block: usize,
    pub window_index: usize,
    pub slot_index: usize,
    pub center_x: f64,
    pub center_y: f64,
}

pub const PARTITION_HEADER: &str = "spot_id,stage,block,window_index,slot_index,center_x,center_y";

impl PartitionRecord {
    pub fn from_partition(part: &WindowPartition, spot_ids: &[String]) -> Vec<PartitionRecord> {
        (0..part.spot_count())
            .map(|i| {
                let w = part.window_of_spot[i];
                PartitionRecord {
                    spot_id: spot_ids[i].clone(),
                    stage: part.stage,
                    block: part.block,
                    window_index: w,
                    slot_index: part.slot_of_spot[i],
                    center_x: part.windows[w].center.x,
                    center_y: part.windows[w].center.y,
                }
            })
            .collect()
    }
}

/// Writes the header followed by one record per spot for every partition.
pub fn write_partition_records<W: Write>(
    mut out: W,
    partitions: &[WindowPartition],
    spot_ids: &[String],
) -> std::io::Result<()> {
    writeln!(out, "{PARTITION_HEADER}")?;
    for part in partitions {
        for rec in PartitionRecord::from_partition(part, spot_ids) {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                rec.spot_id,
                rec.stage,
                rec.block,
                rec.window_index,
                rec.slot_index,
                rec.center_x,
                rec.center_y
            )?;
        }
    }
    Ok(())
}

/// Spots drawn as discs coloured by window index.
pub fn render_partition(spots: &[LatticeSpot], part: &WindowPartition, width: usize) -> Pixmap {
    let frame = PlotFrame::fit(spots.iter().map(|s| s.pos), width);
    let mut img = Pixmap::new(frame.width, frame.height, [255, 255, 255]);
    let radius = frame.spot_radius(spots.iter().map(|s| s.pos));
    for (i, s) in spots.iter().enumerate() {
        let (px, py) = frame.project(&s.pos);
        img.fill_disc(px, py, radius, palette_color(part.window_of_spot[i]));
    }
    img
}
