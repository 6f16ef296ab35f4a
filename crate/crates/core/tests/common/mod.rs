//! Shared test oracles, deliberately independent of the implementation paths
//! they check: a voxel-grid maximal-empty-box enumerator, a torque-balance
//! verdict for two-body stacks, and central finite differences.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use binpack_core::ems::EmsBox;
use binpack_core::geometry::{ContainerState, ItemSpec, Pose, Unit, UNITS_PER_CM};

/// Occupancy grid at 1 cm resolution with 3D prefix sums for O(1) emptiness
/// queries. Requires whole-centimetre item coordinates.
pub struct VoxelGrid {
    nx: usize,
    ny: usize,
    nz: usize,
    prefix: Vec<i64>,
}

impl VoxelGrid {
    pub fn from_container(container: &ContainerState) -> Self {
        let nx = (container.dims[0] / UNITS_PER_CM) as usize;
        let ny = (container.dims[1] / UNITS_PER_CM) as usize;
        let nz = (container.dims[2] / UNITS_PER_CM) as usize;
        let mut occ = vec![0i64; nx * ny * nz];
        for placed in &container.items {
            let b = placed.planned_aabb();
            for v in [b.min, b.max] {
                for coord in v {
                    assert_eq!(coord % UNITS_PER_CM, 0, "oracle needs whole-cm geometry");
                }
            }
            let x0 = (b.min[0] / UNITS_PER_CM) as usize;
            let x1 = (b.max[0] / UNITS_PER_CM) as usize;
            let y0 = (b.min[1] / UNITS_PER_CM) as usize;
            let y1 = (b.max[1] / UNITS_PER_CM) as usize;
            let z0 = (b.min[2] / UNITS_PER_CM) as usize;
            let z1 = (b.max[2] / UNITS_PER_CM) as usize;
            for z in z0..z1 {
                for y in y0..y1 {
                    for x in x0..x1 {
                        occ[(z * ny + y) * nx + x] = 1;
                    }
                }
            }
        }
        // Inclusive 3D prefix sums over a (nx+1)(ny+1)(nz+1) grid.
        let px = nx + 1;
        let py = ny + 1;
        let pz = nz + 1;
        let mut prefix = vec![0i64; px * py * pz];
        for z in 1..pz {
            for y in 1..py {
                for x in 1..px {
                    let at = |xx: usize, yy: usize, zz: usize| prefix[(zz * py + yy) * px + xx];
                    let cell = occ[((z - 1) * ny + (y - 1)) * nx + (x - 1)];
                    prefix[(z * py + y) * px + x] =
                        cell + at(x - 1, y, z) + at(x, y - 1, z) + at(x, y, z - 1)
                            - at(x - 1, y - 1, z)
                            - at(x - 1, y, z - 1)
                            - at(x, y - 1, z - 1)
                            + at(x - 1, y - 1, z - 1);
                }
            }
        }
        VoxelGrid { nx, ny, nz, prefix }
    }

    /// Number of occupied voxels in `[x0, x1) x [y0, y1) x [z0, z1)` (cm).
    pub fn occupied(
        &self,
        x0: usize,
        x1: usize,
        y0: usize,
        y1: usize,
        z0: usize,
        z1: usize,
    ) -> i64 {
        let px = self.nx + 1;
        let py = self.ny + 1;
        let at = |xx: usize, yy: usize, zz: usize| self.prefix[(zz * py + yy) * px + xx];
        at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0)
            + at(x0, y0, z1)
            + at(x0, y1, z0)
            + at(x1, y0, z0)
            - at(x0, y0, z0)
    }

    pub fn empty(&self, x0: usize, x1: usize, y0: usize, y1: usize, z0: usize, z1: usize) -> bool {
        self.occupied(x0, x1, y0, y1, z0, z1) == 0
    }
}

/// Brute-force enumeration of all maximal empty boxes on the voxel grid.
///
/// Every face of a maximal empty box must rest on the container wall or on
/// an item face (otherwise the face could advance by one voxel), so the
/// candidate coordinates per bound are the wall plus the item faces; each
/// candidate box is then checked for emptiness and one-voxel maximality
/// against the grid.
pub fn voxel_ems_oracle(container: &ContainerState) -> Vec<EmsBox> {
    let grid = VoxelGrid::from_container(container);
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    let mut lo = [vec![0usize], vec![0usize], vec![0usize]];
    let mut hi = [vec![nx], vec![ny], vec![nz]];
    for placed in &container.items {
        let b = placed.planned_aabb();
        for axis in 0..3 {
            lo[axis].push((b.max[axis] / UNITS_PER_CM) as usize);
            hi[axis].push((b.min[axis] / UNITS_PER_CM) as usize);
        }
    }
    for axis in 0..3 {
        lo[axis].sort_unstable();
        lo[axis].dedup();
        hi[axis].sort_unstable();
        hi[axis].dedup();
    }
    let mut out = Vec::new();
    for &x0 in &lo[0] {
        for &x1 in &hi[0] {
            if x0 >= x1 {
                continue;
            }
            for &y0 in &lo[1] {
                for &y1 in &hi[1] {
                    if y0 >= y1 {
                        continue;
                    }
                    for &z0 in &lo[2] {
                        for &z1 in &hi[2] {
                            if z0 >= z1 || !grid.empty(x0, x1, y0, y1, z0, z1) {
                                continue;
                            }
                            let blocked_low_x = x0 == 0 || !grid.empty(x0 - 1, x0, y0, y1, z0, z1);
                            let blocked_high_x =
                                x1 == nx || !grid.empty(x1, x1 + 1, y0, y1, z0, z1);
                            let blocked_low_y = y0 == 0 || !grid.empty(x0, x1, y0 - 1, y0, z0, z1);
                            let blocked_high_y =
                                y1 == ny || !grid.empty(x0, x1, y1, y1 + 1, z0, z1);
                            let blocked_low_z = z0 == 0 || !grid.empty(x0, x1, y0, y1, z0 - 1, z0);
                            let blocked_high_z =
                                z1 == nz || !grid.empty(x0, x1, y0, y1, z1, z1 + 1);
                            if blocked_low_x
                                && blocked_high_x
                                && blocked_low_y
                                && blocked_high_y
                                && blocked_low_z
                                && blocked_high_z
                            {
                                out.push(EmsBox {
                                    min: [
                                        (x0 as Unit) * UNITS_PER_CM,
                                        (y0 as Unit) * UNITS_PER_CM,
                                        (z0 as Unit) * UNITS_PER_CM,
                                    ],
                                    max: [
                                        (x1 as Unit) * UNITS_PER_CM,
                                        (y1 as Unit) * UNITS_PER_CM,
                                        (z1 as Unit) * UNITS_PER_CM,
                                    ],
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// A random container with up to `max_items` whole-centimetre items placed
/// without overlap by rejection sampling.
pub fn random_whole_cm_container(seed: u64, max_items: usize) -> ContainerState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = [30.0, 40.0, 50.0][rng.gen_range(0..3)];
    let mut container = ContainerState::new(side, side, side);
    let n_items = rng.gen_range(0..=max_items);
    let mut id = 0u64;
    'outer: for _ in 0..n_items {
        for _attempt in 0..40 {
            let sx = rng.gen_range(3..=20) as f64;
            let sy = rng.gen_range(3..=20) as f64;
            let sz = rng.gen_range(3..=20) as f64;
            let item = ItemSpec::new(id, sx, sy, sz, 1.0);
            let px = rng.gen_range(0..=(side as i64 - sx as i64)) as f64;
            let py = rng.gen_range(0..=(side as i64 - sy as i64)) as f64;
            // Bias toward the floor so stacks and overhangs appear.
            let pz = if rng.gen_bool(0.6) {
                0.0
            } else {
                rng.gen_range(0..=(side as i64 - sz as i64)) as f64
            };
            if container
                .insert_item(item, Pose::from_cm(px, py, pz), [0.0; 3])
                .is_ok()
            {
                id += 1;
                continue 'outer;
            }
        }
    }
    container
}

/// Torque-balance verdict for a two-body stack: the top box on one support
/// box resting on the floor. Gravity's moment about each contact-patch edge
/// must be restoring; an overturning moment about any edge means collapse.
///
/// Returns the verdict plus the signed clearance of the centre of mass from
/// the contact boundary (negative = inside by that margin), in cm.
pub fn two_body_topples(
    support: (&ItemSpec, &Pose),
    top: (&ItemSpec, &Pose),
    top_offset: [f64; 3],
) -> (bool, f64) {
    let (s_item, s_pose) = support;
    let (t_item, t_pose) = top;
    let sx0 = s_pose.pos[0] as f64;
    let sx1 = sx0 + s_item.size[0] as f64;
    let sy0 = s_pose.pos[1] as f64;
    let sy1 = sy0 + s_item.size[1] as f64;
    let tx0 = t_pose.pos[0] as f64;
    let tx1 = tx0 + t_item.size[0] as f64;
    let ty0 = t_pose.pos[1] as f64;
    let ty1 = ty0 + t_item.size[1] as f64;
    let cx0 = sx0.max(tx0);
    let cx1 = sx1.min(tx1);
    let cy0 = sy0.max(ty0);
    let cy1 = sy1.min(ty1);
    if cx0 >= cx1 || cy0 >= cy1 {
        return (true, f64::INFINITY);
    }
    let gx = tx0 + (0.5 + top_offset[0]) * t_item.size[0] as f64;
    let gy = ty0 + (0.5 + top_offset[1]) * t_item.size[1] as f64;
    // Signed lever arm of gravity about each edge, positive = overturning.
    let levers = [cx0 - gx, gx - cx1, cy0 - gy, gy - cy1];
    let worst = levers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (worst > 0.0, worst / UNITS_PER_CM as f64)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Largest relative error between two gradients, scaled by
/// `max(1, |a|, |b|)` per component.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}
