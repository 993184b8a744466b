use std::collections::VecDeque;

use super::LabelMask;
use crate::geometry::Box3;

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// 1-based, in order of each component's first voxel in z, y, x scan order.
    pub id: u32,
    pub voxel_count: usize,
    /// Tight half-open box around the member voxels.
    pub bounding_box: Box3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSet {
    pub instances: Vec<Instance>,
    /// Instance id per voxel (0 outside every instance), z-major.
    pub instance_map: Vec<u32>,
}

impl InstanceSet {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn boxes(&self) -> Vec<Box3> {
        self.instances.iter().map(|i| i.bounding_box).collect()
    }
}

/// 26-connected components of the voxels whose label satisfies `foreground`.
pub fn connected_components(mask: &LabelMask, foreground: impl Fn(u32) -> bool) -> InstanceSet {
    let g = mask.geometry();
    let [nz, ny, nx] = g.shape;
    let labels = mask.labels();
    let mut map = vec![0u32; labels.len()];
    let mut instances = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..labels.len() {
        if map[start] != 0 || !foreground(labels[start]) {
            continue;
        }
        let id = instances.len() as u32 + 1;
        map[start] = id;
        queue.push_back(start);
        let mut count = 0usize;
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        while let Some(i) = queue.pop_front() {
            let (z, y, x) = (i / (ny * nx), (i / nx) % ny, i % nx);
            count += 1;
            for (a, v) in [z, y, x].into_iter().enumerate() {
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
            for zz in z.saturating_sub(1)..=(z + 1).min(nz - 1) {
                for yy in y.saturating_sub(1)..=(y + 1).min(ny - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(nx - 1) {
                        let j = (zz * ny + yy) * nx + xx;
                        if map[j] == 0 && foreground(labels[j]) {
                            map[j] = id;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        let bounding_box = Box3::new(
            lo.map(|v| v as f64),
            [hi[0] as f64 + 1.0, hi[1] as f64 + 1.0, hi[2] as f64 + 1.0],
        )
        .expect("component box has positive extent");
        instances.push(Instance {
            id,
            voxel_count: count,
            bounding_box,
        });
    }
    InstanceSet {
        instances,
        instance_map: map,
    }
}
