//! Axis-aligned geometry of items and containers.
//!
//! All coordinates and sizes are carried internally in integer tenths of a
//! centimetre (`Unit`), which makes overlap, bounds and contact checks exact.
//! Centimetre floats are converted at the API boundary.

use std::fmt;

use thiserror::Error;

/// Internal length unit: one tenth of a centimetre.
pub type Unit = i64;

/// Number of internal units per centimetre.
pub const UNITS_PER_CM: Unit = 10;

/// Converts centimetres to internal units, rounding to the nearest unit.
pub fn cm_to_units(cm: f64) -> Unit {
    (cm * UNITS_PER_CM as f64).round() as Unit
}

/// Converts internal units back to centimetres.
pub fn units_to_cm(units: Unit) -> f64 {
    units as f64 / UNITS_PER_CM as f64
}

/// Opaque item identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemId(pub u64);

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A cuboid item awaiting placement: per-axis size and mass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ItemSpec {
    pub id: ItemId,
    /// Per-axis edge length in internal units.
    pub size: [Unit; 3],
    /// Mass in kilograms.
    pub mass: f64,
}

impl ItemSpec {
    /// Builds an item from centimetre sizes. Panics on non-positive size or mass.
    pub fn new(id: u64, sx_cm: f64, sy_cm: f64, sz_cm: f64, mass_kg: f64) -> Self {
        let size = [cm_to_units(sx_cm), cm_to_units(sy_cm), cm_to_units(sz_cm)];
        assert!(size.iter().all(|&s| s > 0), "item sizes must be positive");
        assert!(mass_kg > 0.0, "item mass must be positive");
        ItemSpec {
            id: ItemId(id),
            size,
            mass: mass_kg,
        }
    }

    pub fn from_units(id: u64, size: [Unit; 3], mass_kg: f64) -> Self {
        assert!(size.iter().all(|&s| s > 0), "item sizes must be positive");
        assert!(mass_kg > 0.0, "item mass must be positive");
        ItemSpec {
            id: ItemId(id),
            size,
            mass: mass_kg,
        }
    }

    pub fn volume_units(&self) -> i64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn volume_cm3(&self) -> f64 {
        self.volume_units() as f64 / (UNITS_PER_CM * UNITS_PER_CM * UNITS_PER_CM) as f64
    }

    pub fn footprint_area_units(&self) -> i64 {
        self.size[0] * self.size[1]
    }
}

/// Position of an item's front-left-bottom corner plus a tilt angle.
///
/// Planned placements always carry zero tilt; a nonzero tilt only appears on
/// the real-time pose produced by settling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    /// Front-left-bottom corner in internal units.
    pub pos: [Unit; 3],
    /// Tilt angle in degrees, in `[0, 90)`.
    pub tilt_deg: f64,
}

impl Pose {
    /// A level (zero-tilt) pose at the given unit coordinates.
    pub fn level(x: Unit, y: Unit, z: Unit) -> Self {
        Pose {
            pos: [x, y, z],
            tilt_deg: 0.0,
        }
    }

    pub fn from_cm(x_cm: f64, y_cm: f64, z_cm: f64) -> Self {
        Pose::level(cm_to_units(x_cm), cm_to_units(y_cm), cm_to_units(z_cm))
    }
}

/// Axis-aligned box over `[min, max)` intervals in internal units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Aabb {
    pub min: [Unit; 3],
    pub max: [Unit; 3],
}

impl Aabb {
    pub fn from_item(item: &ItemSpec, pose: &Pose) -> Self {
        Aabb {
            min: pose.pos,
            max: [
                pose.pos[0] + item.size[0],
                pose.pos[1] + item.size[1],
                pose.pos[2] + item.size[2],
            ],
        }
    }

    /// Open-interval intersection test: touching faces do not overlap.
    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|a| self.min[a] < other.max[a] && other.min[a] < self.max[a])
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|a| self.min[a] <= other.min[a] && other.max[a] <= self.max[a])
    }

    pub fn volume(&self) -> i64 {
        (0..3).map(|a| self.max[a] - self.min[a]).product()
    }

    /// Open-interval overlap length of the two boxes along one axis.
    pub fn overlap_len(&self, other: &Aabb, axis: usize) -> Unit {
        (self.max[axis].min(other.max[axis]) - self.min[axis].max(other.min[axis])).max(0)
    }
}

/// An item in the container: spec, planned pose, real-time pose and the
/// signed per-axis mass-centre offset (fraction of the corresponding side).
#[derive(Clone, Debug, PartialEq)]
pub struct PlacedItem {
    pub spec: ItemSpec,
    pub planned: Pose,
    pub current: Pose,
    pub mass_center_offset: [f64; 3],
}

impl PlacedItem {
    pub fn planned_aabb(&self) -> Aabb {
        Aabb::from_item(&self.spec, &self.planned)
    }

    pub fn current_aabb(&self) -> Aabb {
        Aabb::from_item(&self.spec, &self.current)
    }

    /// Gravity centre at the current pose, in unit coordinates (f64).
    pub fn gravity_center(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for (a, out) in c.iter_mut().enumerate() {
            let s = self.spec.size[a] as f64;
            *out = self.current.pos[a] as f64 + 0.5 * s + self.mass_center_offset[a] * s;
        }
        c
    }
}

/// Grid of column top heights over the container floor.
///
/// Cells track the planned geometry: the height of a cell is the maximum top
/// face over all items whose planned footprint overlaps the cell.
#[derive(Clone, Debug, PartialEq)]
pub struct HeightMap {
    cell: Unit,
    nx: usize,
    ny: usize,
    heights: Vec<Unit>,
}

impl HeightMap {
    fn new(dims: [Unit; 3], cell: Unit) -> Self {
        assert!(cell > 0, "height-map cell size must be positive");
        let nx = ((dims[0] + cell - 1) / cell) as usize;
        let ny = ((dims[1] + cell - 1) / cell) as usize;
        HeightMap {
            cell,
            nx,
            ny,
            heights: vec![0; nx * ny],
        }
    }

    pub fn cell_size(&self) -> Unit {
        self.cell
    }

    pub fn cells(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn top_at(&self, ix: usize, iy: usize) -> Unit {
        self.heights[iy * self.nx + ix]
    }

    pub fn max_height(&self) -> Unit {
        self.heights.iter().copied().max().unwrap_or(0)
    }

    /// Index range of cells whose open region overlaps `[x0, x1)` x `[y0, y1)`.
    pub fn cell_range(
        &self,
        x0: Unit,
        x1: Unit,
        y0: Unit,
        y1: Unit,
    ) -> (usize, usize, usize, usize) {
        let ix0 = (x0.max(0) / self.cell) as usize;
        let iy0 = (y0.max(0) / self.cell) as usize;
        let ix1 = (((x1 + self.cell - 1) / self.cell) as usize).min(self.nx);
        let iy1 = (((y1 + self.cell - 1) / self.cell) as usize).min(self.ny);
        (ix0, ix1, iy0, iy1)
    }

    fn raise(&mut self, aabb: &Aabb) {
        let (ix0, ix1, iy0, iy1) =
            self.cell_range(aabb.min[0], aabb.max[0], aabb.min[1], aabb.max[1]);
        for iy in iy0..iy1 {
            for ix in ix0..ix1 {
                let h = &mut self.heights[iy * self.nx + ix];
                *h = (*h).max(aabb.max[2]);
            }
        }
    }
}

/// The container: dimensions, placed items and the derived height map.
#[derive(Clone, Debug, PartialEq)]
pub struct ContainerState {
    pub dims: [Unit; 3],
    pub items: Vec<PlacedItem>,
    pub height_map: HeightMap,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlacementError {
    #[error("item {item} extends outside the container")]
    OutOfBounds { item: ItemId },
    #[error("item {item} overlaps placed item {blocking}")]
    Overlap { item: ItemId, blocking: ItemId },
}

impl ContainerState {
    /// An empty container with the given dimensions in centimetres and a
    /// 1 cm height-map cell.
    pub fn new(sx_cm: f64, sy_cm: f64, sz_cm: f64) -> Self {
        Self::with_cell(
            [cm_to_units(sx_cm), cm_to_units(sy_cm), cm_to_units(sz_cm)],
            UNITS_PER_CM,
        )
    }

    pub fn with_cell(dims: [Unit; 3], cell: Unit) -> Self {
        assert!(
            dims.iter().all(|&d| d > 0),
            "container dims must be positive"
        );
        ContainerState {
            dims,
            items: Vec::new(),
            height_map: HeightMap::new(dims, cell),
        }
    }

    pub fn volume_units(&self) -> i64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn volume_cm3(&self) -> f64 {
        self.volume_units() as f64 / (UNITS_PER_CM * UNITS_PER_CM * UNITS_PER_CM) as f64
    }

    /// Inserts an item at a planned pose after re-checking bounds and overlap.
    ///
    /// On success the item is appended with `planned = current = pose` and the
    /// height map is raised under its footprint.
    pub fn insert_item(
        &mut self,
        item: ItemSpec,
        pose: Pose,
        mass_center_offset: [f64; 3],
    ) -> Result<(), PlacementError> {
        if !in_bounds(&item, &pose, self) {
            return Err(PlacementError::OutOfBounds { item: item.id });
        }
        let aabb = Aabb::from_item(&item, &pose);
        for placed in &self.items {
            if placed.planned_aabb().overlaps(&aabb) {
                return Err(PlacementError::Overlap {
                    item: item.id,
                    blocking: placed.spec.id,
                });
            }
        }
        debug_assert!(mass_center_offset.iter().all(|o| o.abs() < 0.5));
        self.items.push(PlacedItem {
            spec: item,
            planned: pose,
            current: pose,
            mass_center_offset,
        });
        self.height_map.raise(&aabb);
        Ok(())
    }
}

/// True iff the planned volumes of the two items intersect (open intervals:
/// shared faces do not count as overlap).
pub fn aabb_overlap(a: &PlacedItem, b: &PlacedItem) -> bool {
    a.planned_aabb().overlaps(&b.planned_aabb())
}

/// True iff `0 <= p_axis` and `p_axis + s_axis <= S_axis` on every axis.
pub fn in_bounds(item: &ItemSpec, pose: &Pose, container: &ContainerState) -> bool {
    (0..3).all(|a| pose.pos[a] >= 0 && pose.pos[a] + item.size[a] <= container.dims[a])
}

/// Packed item volume divided by container volume.
pub fn space_utilization(container: &ContainerState) -> f64 {
    let packed: i64 = container.items.iter().map(|p| p.spec.volume_units()).sum();
    packed as f64 / container.volume_units() as f64
}
