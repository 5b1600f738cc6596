//! Scale-pad-divide partitioning of high-resolution images.
//!
//! An image is scaled so its longer side equals the target resolution,
//! anchored at the top-left of a zero canvas and cut into a `grid × grid`
//! array of sub-images. Slots that contain no source pixels at all are
//! represented by a single shared skip embedding instead of a full token block.

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotKind {
    Real,
    FullyPadded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SlotState {
    pub kind: SlotKind,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionPlan {
    pub source_size: (usize, usize),
    pub target_res: usize,
    pub sub_res: usize,
    pub grid: usize,
    pub resized_size: (usize, usize),
    /// Row-major, `grid²` entries.
    pub slots: Vec<SlotState>,
}

/// Round `num / den` to the nearest integer, ties upward.
fn div_round_half_up(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

pub fn plan_partition(width: usize, height: usize, target_res: usize, sub_res: usize) -> Result<PartitionPlan> {
    if sub_res == 0 || target_res == 0 || !target_res.is_multiple_of(sub_res) {
        return Err(Error::Config(format!(
            "target resolution {target_res} is not a positive multiple of sub-image resolution {sub_res}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::Input(format!("image has a zero dimension ({width}×{height})")));
    }
    let grid = target_res / sub_res;
    let longest = width.max(height);
    // s = target / longest; exact integer rounding of w·s and h·s
    let rw = div_round_half_up(width * target_res, longest).clamp(1, target_res);
    let rh = div_round_half_up(height * target_res, longest).clamp(1, target_res);
    let mut slots = Vec::with_capacity(grid * grid);
    for row in 0..grid {
        for col in 0..grid {
            let padded = col * sub_res >= rw || row * sub_res >= rh;
            let kind = if padded { SlotKind::FullyPadded } else { SlotKind::Real };
            slots.push(SlotState { kind, row, col });
        }
    }
    Ok(PartitionPlan { source_size: (width, height), target_res, sub_res, grid, resized_size: (rw, rh), slots })
}

impl PartitionPlan {
    pub fn n_real(&self) -> usize {
        self.slots.iter().filter(|s| s.kind == SlotKind::Real).count()
    }

    pub fn n_padded(&self) -> usize {
        self.slots.len() - self.n_real()
    }

    pub fn padded_slots(&self) -> Vec<(usize, usize)> {
        self.slots.iter().filter(|s| s.kind == SlotKind::FullyPadded).map(|s| (s.row, s.col)).collect()
    }

    pub fn real_slots(&self) -> Vec<(usize, usize)> {
        self.slots.iter().filter(|s| s.kind == SlotKind::Real).map(|s| (s.row, s.col)).collect()
    }

    /// Visual sequence length for token blocks of `block_len` rows.
    pub fn sequence_len(&self, block_len: usize) -> usize {
        block_len * (1 + self.n_real()) + self.n_padded()
    }

    /// Where each row of the assembled visual sequence comes from.
    pub fn layout(&self, block_len: usize) -> Vec<VisualRow> {
        let mut rows: Vec<VisualRow> = (0..block_len).map(VisualRow::Global).collect();
        for slot in &self.slots {
            match slot.kind {
                SlotKind::Real => {
                    rows.extend((0..block_len).map(|i| VisualRow::Slot { row: slot.row, col: slot.col, index: i }))
                }
                SlotKind::FullyPadded => rows.push(VisualRow::Skip { row: slot.row, col: slot.col }),
            }
        }
        rows
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PlanWire::from(self)).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: PlanWire = serde_json::from_str(text)?;
        let plan = plan_partition(wire.source[0], wire.source[1], wire.target, wire.sub)?;
        let expected = PlanWire::from(&plan);
        if expected != wire {
            return Err(Error::Validation("serialized plan is inconsistent with its source geometry".into()));
        }
        Ok(plan)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VisualRow {
    Global(usize),
    Slot { row: usize, col: usize, index: usize },
    Skip { row: usize, col: usize },
}

#[derive(Debug, PartialEq, Eq, Serialize, Deserialize)]
struct PlanWire {
    source: [usize; 2],
    target: usize,
    sub: usize,
    grid: usize,
    resized: [usize; 2],
    padded_slots: Vec<[usize; 2]>,
}

impl From<&PartitionPlan> for PlanWire {
    fn from(p: &PartitionPlan) -> Self {
        PlanWire {
            source: [p.source_size.0, p.source_size.1],
            target: p.target_res,
            sub: p.sub_res,
            grid: p.grid,
            resized: [p.resized_size.0, p.resized_size.1],
            padded_slots: p.padded_slots().into_iter().map(|(r, c)| [r, c]).collect(),
        }
    }
}

/// The downsampled global view plus the crops of every Real slot.
#[derive(Clone, Debug)]
pub struct SplitImage {
    pub global: Image,
    pub subimages: BTreeMap<(usize, usize), Image>,
}

pub fn pad_and_split(image: &Image, plan: &PartitionPlan) -> Result<SplitImage> {
    if (image.width(), image.height()) != plan.source_size {
        return Err(Error::Input(format!(
            "image is {}×{} but the plan was made for {}×{}",
            image.width(),
            image.height(),
            plan.source_size.0,
            plan.source_size.1
        )));
    }
    let resized = image.resize(plan.resized_size.0, plan.resized_size.1)?;
    let mut canvas = Image::zeros(plan.target_res, plan.target_res, image.channels());
    canvas
        .data
        .slice_mut(s![..plan.resized_size.1, ..plan.resized_size.0, ..])
        .assign(&resized.data);
    let global = canvas.avg_pool(plan.grid);
    let subimages = plan
        .real_slots()
        .into_iter()
        .map(|(row, col)| {
            let sub = canvas.crop(col * plan.sub_res, row * plan.sub_res, plan.sub_res, plan.sub_res);
            ((row, col), sub)
        })
        .collect();
    Ok(SplitImage { global, subimages })
}

/// Lays out the visual sequence: the global block, then slots in row-major
/// order, each Real slot contributing its block and each fully padded slot a
/// single copy of `skip`.
pub fn assemble_visual_sequence(
    global: &Array2<f64>,
    blocks: &BTreeMap<(usize, usize), Array2<f64>>,
    plan: &PartitionPlan,
    skip: &Array2<f64>,
) -> Result<Array2<f64>> {
    let block_len = global.nrows();
    let width = global.ncols();
    if skip.dim() != (1, width) {
        return Err(Error::Input(format!("skip embedding must be 1×{width}, got {:?}", skip.dim())));
    }
    for slot in plan.slots.iter().filter(|s| s.kind == SlotKind::Real) {
        let block = blocks
            .get(&(slot.row, slot.col))
            .ok_or_else(|| Error::Input(format!("missing block for real slot ({}, {})", slot.row, slot.col)))?;
        if block.dim() != (block_len, width) {
            return Err(Error::Input(format!(
                "block ({}, {}) is {:?}, expected {:?}",
                slot.row,
                slot.col,
                block.dim(),
                (block_len, width)
            )));
        }
    }
    let layout = plan.layout(block_len);
    let mut out = Array2::zeros((layout.len(), width));
    for (i, origin) in layout.iter().enumerate() {
        let src = match *origin {
            VisualRow::Global(r) => global.row(r),
            VisualRow::Slot { row, col, index } => blocks[&(row, col)].row(index),
            VisualRow::Skip { .. } => skip.row(0),
        };
        out.row_mut(i).assign(&src);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn padded_count(w: usize, h: usize, t: usize, s: usize) -> (usize, usize) {
        let p = plan_partition(w, h, t, s).unwrap();
        (p.n_real(), p.n_padded())
    }

    #[test]
    fn wide_two_to_one_image_pads_bottom_row() {
        let p = plan_partition(896, 448, 448, 224).unwrap();
        assert_eq!(p.resized_size, (448, 224));
        assert_eq!(p.padded_slots(), vec![(1, 0), (1, 1)]);
        assert_eq!((p.n_real(), p.n_padded()), (2, 2));
    }

    #[test]
    fn square_image_has_no_padded_slots() {
        let p = plan_partition(448, 448, 448, 224).unwrap();
        assert_eq!(p.resized_size, (448, 448));
        assert_eq!((p.n_real(), p.n_padded()), (4, 0));
    }

    #[test]
    fn three_by_three_grid() {
        let p = plan_partition(1344, 448, 672, 224).unwrap();
        assert_eq!(p.grid, 3);
        assert_eq!(p.resized_size, (672, 224));
        assert_eq!(p.padded_slots(), vec![(1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2)]);
    }

    #[test]
    fn partially_covered_row_stays_real() {
        assert_eq!(padded_count(448, 300, 448, 224), (4, 0));
        assert_eq!(plan_partition(448, 300, 448, 224).unwrap().resized_size, (448, 300));
    }

    #[test]
    fn rounding_is_half_up() {
        // 3 · 448 / 2 = 672 exact; 1 · 448 / 3 = 149.33 → 149; 5 · 448 / 8 = 280
        assert_eq!(plan_partition(3, 2, 448, 224).unwrap().resized_size, (448, 299));
        assert_eq!(plan_partition(1, 3, 448, 224).unwrap().resized_size, (149, 448));
        // 448 · 1 / 896 = 0.5 → rounds up to 1
        assert_eq!(plan_partition(896, 1, 448, 224).unwrap().resized_size, (448, 1));
    }

    #[test]
    fn rejects_bad_configuration_and_input() {
        assert!(matches!(plan_partition(10, 10, 448, 200), Err(Error::Config(_))));
        assert!(matches!(plan_partition(0, 10, 448, 224), Err(Error::Input(_))));
    }

    #[test]
    fn json_wire_format() {
        let p = plan_partition(896, 448, 448, 224).unwrap();
        let json = p.to_json();
        assert_eq!(
            json,
            r#"{"source":[896,448],"target":448,"sub":224,"grid":2,"resized":[448,224],"padded_slots":[[1,0],[1,1]]}"#
        );
        assert_eq!(PartitionPlan::from_json(&json).unwrap(), p);
    }

    #[test]
    fn split_counts_follow_plan() {
        let img = Image::filled(448, 448, 3, 0.5);
        let plan = plan_partition(448, 448, 448, 224).unwrap();
        let split = pad_and_split(&img, &plan).unwrap();
        assert_eq!(split.subimages.len(), 4);
        assert_eq!((split.global.width(), split.global.height()), (224, 224));
        assert!(split.subimages.values().all(|s| s.width() == 224 && s.height() == 224));

        let wide = Image::filled(896, 448, 3, 1.0);
        let plan = plan_partition(896, 448, 448, 224).unwrap();
        let split = pad_and_split(&wide, &plan).unwrap();
        assert_eq!(split.subimages.keys().copied().collect::<Vec<_>>(), vec![(0, 0), (0, 1)]);
        // lower half of the global view is pad
        assert_eq!(split.global.data[[200, 10, 0]], 0.0);
        assert!((split.global.data[[10, 10, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_image_slots_are_still_real() {
        let img = Image::zeros(448, 448, 3);
        let plan = plan_partition(448, 448, 448, 224).unwrap();
        assert_eq!(pad_and_split(&img, &plan).unwrap().subimages.len(), 4);
    }

    #[test]
    fn split_rejects_dimension_mismatch() {
        let plan = plan_partition(448, 448, 448, 224).unwrap();
        assert!(matches!(pad_and_split(&Image::zeros(100, 448, 3), &plan), Err(Error::Input(_))));
    }

    #[test]
    fn assembled_lengths() {
        let d = 3;
        let global = Array2::from_elem((16, d), 1.0);
        let skip = Array2::from_elem((1, d), -1.0);
        for (w, h, t, expected) in [(448, 448, 448, 80), (896, 448, 448, 50), (1344, 448, 672, 70)] {
            let plan = plan_partition(w, h, t, 224).unwrap();
            let blocks = plan.real_slots().into_iter().map(|k| (k, Array2::from_elem((16, d), 2.0))).collect();
            let seq = assemble_visual_sequence(&global, &blocks, &plan, &skip).unwrap();
            assert_eq!(seq.nrows(), expected);
            // enumerate emitted rows independently of the count formula
            let skips = seq.rows().into_iter().filter(|r| r[0] == -1.0).count();
            let reals = seq.rows().into_iter().filter(|r| r[0] == 2.0).count();
            assert_eq!(skips, plan.n_padded());
            assert_eq!(reals, 16 * plan.n_real());
        }
    }

    #[test]
    fn skip_tokens_sit_at_slot_positions() {
        let plan = plan_partition(896, 448, 448, 224).unwrap();
        let global = Array2::zeros((2, 1));
        let blocks = plan
            .real_slots()
            .into_iter()
            .map(|(r, c)| ((r, c), Array2::from_elem((2, 1), (1 + r * 2 + c) as f64)))
            .collect();
        let skip = Array2::from_elem((1, 1), 9.0);
        let seq = assemble_visual_sequence(&global, &blocks, &plan, &skip).unwrap();
        assert_eq!(seq.column(0).to_vec(), vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 9.0, 9.0]);
    }

    #[test]
    fn assemble_rejects_mismatched_blocks() {
        let plan = plan_partition(448, 448, 448, 224).unwrap();
        let global = Array2::zeros((4, 2));
        let mut blocks: BTreeMap<_, _> = plan.real_slots().into_iter().map(|k| (k, Array2::zeros((4, 2)))).collect();
        blocks.insert((1, 1), Array2::zeros((3, 2)));
        assert!(matches!(
            assemble_visual_sequence(&global, &blocks, &plan, &Array2::zeros((1, 2))),
            Err(Error::Input(_))
        ));
    }
}
