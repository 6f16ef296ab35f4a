//! Empty-maximal-space bookkeeping and placement candidate generation.
//!
//! The free space of a container is represented as the set of all maximal
//! empty axis-aligned boxes. Insertions are handled incrementally: every box
//! intersected by the new item is split into up to six residual boxes and
//! boxes contained in another are dropped, which keeps the set exactly equal
//! to a from-scratch recomputation.

use crate::geometry::{Aabb, ContainerState, ItemSpec, Pose, Unit};

/// A maximal empty axis-aligned box, `[min, max)` in internal units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EmsBox {
    pub min: [Unit; 3],
    pub max: [Unit; 3],
}

impl EmsBox {
    pub fn size(&self, axis: usize) -> Unit {
        self.max[axis] - self.min[axis]
    }

    pub fn volume(&self) -> i64 {
        (0..3).map(|a| self.size(a)).product()
    }

    pub fn fits(&self, item: &ItemSpec) -> bool {
        (0..3).all(|a| item.size[a] <= self.size(a))
    }

    pub fn contains(&self, other: &EmsBox) -> bool {
        (0..3).all(|a| self.min[a] <= other.min[a] && other.max[a] <= self.max[a])
    }

    fn is_empty(&self) -> bool {
        (0..3).any(|a| self.min[a] >= self.max[a])
    }

    fn intersects(&self, aabb: &Aabb) -> bool {
        (0..3).all(|a| self.min[a] < aabb.max[a] && aabb.min[a] < self.max[a])
    }
}

/// A concrete candidate placement derived from an EMS box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionCandidate {
    pub item: ItemSpec,
    pub pose: Pose,
    pub source_ems: EmsBox,
}

/// Which poses inside each EMS box are enumerated as candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorMode {
    /// Front-left-bottom corner of the box only.
    Corner,
    /// All four bottom corners of the box.
    FourCorners,
}

/// Vertical-corridor clearance model for the suction gripper.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GripperSpec {
    /// Horizontal clearance margin on each side of the footprint, in units.
    pub clearance: Unit,
    /// Extra approach height above the container top, in units.
    pub approach: Unit,
}

impl Default for GripperSpec {
    fn default() -> Self {
        GripperSpec {
            clearance: crate::geometry::cm_to_units(2.0),
            approach: crate::geometry::cm_to_units(5.0),
        }
    }
}

fn canonicalize(mut boxes: Vec<EmsBox>) -> Vec<EmsBox> {
    boxes.sort();
    boxes.dedup();
    boxes
}

fn drop_contained(boxes: Vec<EmsBox>) -> Vec<EmsBox> {
    // Input is deduplicated, so containment between distinct boxes is strict.
    let mut keep = Vec::with_capacity(boxes.len());
    'outer: for (i, b) in boxes.iter().enumerate() {
        for (j, other) in boxes.iter().enumerate() {
            if i != j && other.contains(b) {
                continue 'outer;
            }
        }
        keep.push(*b);
    }
    keep
}

/// The maximal empty boxes of the container, computed by folding every placed
/// item's planned volume into the full-container box.
pub fn compute_ems(container: &ContainerState) -> Vec<EmsBox> {
    let mut ems = vec![EmsBox {
        min: [0, 0, 0],
        max: container.dims,
    }];
    for placed in &container.items {
        ems = update_ems(&ems, &placed.planned_aabb());
    }
    ems
}

/// Incremental EMS maintenance: splits every box intersected by the new
/// item's volume into its six residuals, then drops non-maximal boxes.
///
/// The result equals `compute_ems` on the post-insertion state.
pub fn update_ems(ems: &[EmsBox], new_item: &Aabb) -> Vec<EmsBox> {
    // Coverage invariant: an item placed into empty space always intersects
    // at least one maximal box.
    debug_assert!(ems.is_empty() || ems.iter().any(|b| b.intersects(new_item)));
    let mut out = Vec::with_capacity(ems.len() + 4);
    for b in ems {
        if !b.intersects(new_item) {
            out.push(*b);
            continue;
        }
        for axis in 0..3 {
            let mut low = *b;
            low.max[axis] = b.max[axis].min(new_item.min[axis]);
            if !low.is_empty() {
                out.push(low);
            }
            let mut high = *b;
            high.min[axis] = b.min[axis].max(new_item.max[axis]);
            if !high.is_empty() {
                out.push(high);
            }
        }
    }
    canonicalize(drop_contained(canonicalize(out)))
}

/// Corner-anchored poses for the item in every EMS box that can contain it.
///
/// Candidates are emitted in canonical box order and truncated at `cap`.
pub fn candidate_placements(
    ems: &[EmsBox],
    item: &ItemSpec,
    mode: AnchorMode,
    cap: usize,
) -> Vec<ActionCandidate> {
    let mut out = Vec::new();
    for b in ems {
        if !b.fits(item) {
            continue;
        }
        let anchors: &[[Unit; 2]] = match mode {
            AnchorMode::Corner => &[[b.min[0], b.min[1]]],
            AnchorMode::FourCorners => &[
                [b.min[0], b.min[1]],
                [b.max[0] - item.size[0], b.min[1]],
                [b.min[0], b.max[1] - item.size[1]],
                [b.max[0] - item.size[0], b.max[1] - item.size[1]],
            ],
        };
        let mut seen: Vec<[Unit; 2]> = Vec::with_capacity(4);
        for anchor in anchors {
            if seen.contains(anchor) {
                continue;
            }
            seen.push(*anchor);
            out.push(ActionCandidate {
                item: *item,
                pose: Pose::level(anchor[0], anchor[1], b.min[2]),
                source_ems: *b,
            });
            if out.len() >= cap {
                return out;
            }
        }
    }
    out
}

/// Top-down accessibility filter: a candidate survives iff the vertical
/// corridor above its footprint, inflated by the gripper clearance on each
/// horizontal side, contains no placed item from the item's top face up to
/// the container top plus the approach height.
pub fn prune_feasible(
    candidates: &[ActionCandidate],
    container: &ContainerState,
    gripper: &GripperSpec,
) -> Vec<ActionCandidate> {
    candidates
        .iter()
        .filter(|cand| {
            let corridor = Aabb {
                min: [
                    cand.pose.pos[0] - gripper.clearance,
                    cand.pose.pos[1] - gripper.clearance,
                    cand.pose.pos[2] + cand.item.size[2],
                ],
                max: [
                    cand.pose.pos[0] + cand.item.size[0] + gripper.clearance,
                    cand.pose.pos[1] + cand.item.size[1] + gripper.clearance,
                    container.dims[2] + gripper.approach,
                ],
            };
            container
                .items
                .iter()
                .all(|placed| !placed.planned_aabb().overlaps(&corridor))
        })
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::cm_to_units;

    fn container_50() -> ContainerState {
        ContainerState::new(50.0, 50.0, 50.0)
    }

    fn cube(id: u64, side_cm: f64) -> ItemSpec {
        ItemSpec::new(id, side_cm, side_cm, side_cm, 1.0)
    }

    #[test]
    fn empty_container_single_box() {
        let c = container_50();
        let ems = compute_ems(&c);
        assert_eq!(
            ems,
            vec![EmsBox {
                min: [0, 0, 0],
                max: c.dims
            }]
        );
    }

    #[test]
    fn one_corner_item_three_boxes() {
        let mut c = container_50();
        c.insert_item(cube(0, 20.0), Pose::from_cm(0.0, 0.0, 0.0), [0.0; 3])
            .unwrap();
        let ems = compute_ems(&c);
        let s = cm_to_units(20.0);
        let full = cm_to_units(50.0);
        let expected = vec![
            EmsBox {
                min: [0, 0, s],
                max: [full, full, full],
            },
            EmsBox {
                min: [0, s, 0],
                max: [full, full, full],
            },
            EmsBox {
                min: [s, 0, 0],
                max: [full, full, full],
            },
        ];
        assert_eq!(canonicalize(ems), canonicalize(expected));
    }

    #[test]
    fn exactly_tiled_container_empty_set() {
        let mut c = container_50();
        c.insert_item(cube(0, 50.0), Pose::from_cm(0.0, 0.0, 0.0), [0.0; 3])
            .unwrap();
        assert!(compute_ems(&c).is_empty());
    }

    #[test]
    fn exact_fill_removes_box() {
        let c = container_50();
        let ems = compute_ems(&c);
        let filled = update_ems(
            &ems,
            &Aabb {
                min: [0, 0, 0],
                max: c.dims,
            },
        );
        assert!(filled.is_empty());
    }

    #[test]
    fn candidates_empty_container() {
        let c = container_50();
        let ems = compute_ems(&c);
        let cands = candidate_placements(&ems, &cube(0, 20.0), AnchorMode::Corner, 80);
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].pose, Pose::level(0, 0, 0));
    }

    #[test]
    fn oversized_item_no_candidates() {
        let c = container_50();
        let ems = compute_ems(&c);
        let cands = candidate_placements(&ems, &cube(0, 60.0), AnchorMode::Corner, 80);
        assert!(cands.is_empty());
    }

    #[test]
    fn item_fitting_some_boxes() {
        let mut c = container_50();
        // Leave a 10-deep slab in x free, plus everything above/behind.
        c.insert_item(
            ItemSpec::new(0, 40.0, 50.0, 40.0, 1.0),
            Pose::from_cm(10.0, 0.0, 0.0),
            [0.0; 3],
        )
        .unwrap();
        let ems = compute_ems(&c);
        let big = ItemSpec::new(1, 50.0, 50.0, 10.0, 1.0);
        let fitting = ems.iter().filter(|b| b.fits(&big)).count();
        let cands = candidate_placements(&ems, &big, AnchorMode::Corner, 80);
        assert_eq!(cands.len(), fitting);
    }

    #[test]
    fn four_corner_anchors_dedup_on_exact_fit() {
        let c = container_50();
        let ems = compute_ems(&c);
        let exact = cube(0, 50.0);
        let cands = candidate_placements(&ems, &exact, AnchorMode::FourCorners, 80);
        assert_eq!(cands.len(), 1);
        let small = cube(1, 20.0);
        let cands = candidate_placements(&ems, &small, AnchorMode::FourCorners, 80);
        assert_eq!(cands.len(), 4);
    }

    #[test]
    fn candidate_cap_truncates() {
        let mut c = container_50();
        c.insert_item(cube(0, 20.0), Pose::from_cm(0.0, 0.0, 0.0), [0.0; 3])
            .unwrap();
        let ems = compute_ems(&c);
        let item = cube(1, 10.0);
        let all = candidate_placements(&ems, &item, AnchorMode::FourCorners, 1000);
        assert!(all.len() > 2);
        let capped = candidate_placements(&ems, &item, AnchorMode::FourCorners, 2);
        assert_eq!(capped.len(), 2);
        assert_eq!(&all[..2], &capped[..]);
    }

    #[test]
    fn overhang_prunes_corridor() {
        let mut c = container_50();
        // Pillar with an overhanging slab on top.
        c.insert_item(
            ItemSpec::new(0, 10.0, 10.0, 30.0, 1.0),
            Pose::from_cm(0.0, 0.0, 0.0),
            [0.0; 3],
        )
        .unwrap();
        c.insert_item(
            ItemSpec::new(1, 30.0, 10.0, 5.0, 1.0),
            Pose::from_cm(0.0, 0.0, 30.0),
            [0.0; 3],
        )
        .unwrap();
        let item = cube(2, 10.0);
        let under_overhang = ActionCandidate {
            item,
            pose: Pose::from_cm(15.0, 0.0, 0.0),
            source_ems: EmsBox {
                min: [cm_to_units(10.0), 0, 0],
                max: [cm_to_units(50.0), cm_to_units(50.0), cm_to_units(30.0)],
            },
        };
        let open = ActionCandidate {
            item,
            pose: Pose::from_cm(40.0, 40.0, 0.0),
            source_ems: EmsBox {
                min: [cm_to_units(30.0), cm_to_units(10.0), 0],
                max: [cm_to_units(50.0), cm_to_units(50.0), cm_to_units(50.0)],
            },
        };
        let gripper = GripperSpec::default();
        let kept = prune_feasible(&[under_overhang, open], &c, &gripper);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].pose, open.pose);
    }

    #[test]
    fn zero_margin_no_overhangs_identity() {
        let mut c = container_50();
        c.insert_item(cube(0, 20.0), Pose::from_cm(0.0, 0.0, 0.0), [0.0; 3])
            .unwrap();
        let ems = compute_ems(&c);
        let cands = candidate_placements(&ems, &cube(1, 20.0), AnchorMode::Corner, 80);
        let gripper = GripperSpec {
            clearance: 0,
            approach: 0,
        };
        let kept = prune_feasible(&cands, &c, &gripper);
        assert_eq!(kept, cands);
    }
}
