use rand::seq::index;
use rand::Rng;

use super::{linear_index, Subject};
use crate::diffcore::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::losses::OneHotTarget;

/// A cubic training patch with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub subject: String,
    pub extent: usize,
    pub image: Vec<f32>,
    pub label: Vec<u8>,
}

impl Patch {
    pub fn foreground_count(&self) -> usize {
        self.label.iter().filter(|&&v| v == 1).count()
    }

    /// Image as a `[1, e, e, e]` tensor.
    pub fn image_tensor<T: Scalar>(&self) -> Tensor<T> {
        let e = self.extent;
        Tensor::from_fn(&[1, e, e, e], |i| T::from_f64(self.image[i] as f64))
    }

    pub fn target<T: Scalar>(&self) -> Result<OneHotTarget<T>> {
        let e = self.extent;
        OneHotTarget::from_binary(&[e, e, e], &self.label)
    }
}

fn crop(subject: &Subject, corner: [usize; 3], extent: usize) -> Patch {
    let ex = subject.volume.extents();
    let n = extent * extent * extent;
    let mut image = Vec::with_capacity(n);
    let mut label = Vec::with_capacity(n);
    let (vv, lv) = (subject.volume.voxels(), subject.label.voxels());
    for z in 0..extent {
        for y in 0..extent {
            let start = linear_index(ex, corner[0], corner[1] + y, corner[2] + z);
            image.extend_from_slice(&vv[start..start + extent]);
            label.extend_from_slice(&lv[start..start + extent]);
        }
    }
    Patch {
        subject: subject.id.clone(),
        extent,
        image,
        label,
    }
}

/// Draws `count` patches with corners uniform over all valid positions.
pub fn sample_patches(
    subject: &Subject,
    count: usize,
    extent: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Patch>> {
    let ex = subject.volume.extents();
    if extent == 0 || ex.iter().any(|&e| e < extent) {
        return Err(Error::Config(format!(
            "subject {} with extents {ex:?} is smaller than patch extent {extent}",
            subject.id
        )));
    }
    Ok((0..count)
        .map(|_| {
            let corner = ex.map(|e| rng.gen_range(0..=e - extent));
            crop(subject, corner, extent)
        })
        .collect())
}

/// Rotates by 90° in the plane of `axes` (source coordinate to destination).
pub fn rotate90(p: [usize; 3], axes: (usize, usize), n: usize) -> [usize; 3] {
    let mut q = p;
    q[axes.0] = n - 1 - p[axes.1];
    q[axes.1] = p[axes.0];
    q
}

/// Destination index of every source voxel under the given rigid transform.
fn transform_map(n: usize, axes: (usize, usize), turns: usize, flips: [bool; 3]) -> Vec<usize> {
    let ex = [n; 3];
    let mut map = Vec::with_capacity(n * n * n);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let mut p = [x, y, z];
                for _ in 0..turns {
                    p = rotate90(p, axes, n);
                }
                for a in 0..3 {
                    if flips[a] {
                        p[a] = n - 1 - p[a];
                    }
                }
                map.push(linear_index(ex, p[0], p[1], p[2]));
            }
        }
    }
    map
}

fn permute<T: Copy + Default>(src: &[T], map: &[usize]) -> Vec<T> {
    let mut out = vec![T::default(); src.len()];
    for (s, &d) in map.iter().enumerate() {
        out[d] = src[s];
    }
    out
}

const AXIS_PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Replaces a seeded subset of `augment_count` patches by a random 90°
/// rotation followed by per-axis random mirroring, applied to image and label.
pub fn augment(patches: &mut [Patch], augment_count: usize, rng: &mut impl Rng) {
    let count = augment_count.min(patches.len());
    let mut chosen = index::sample(rng, patches.len(), count).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let turns = rng.gen_range(1..=3);
        let axes = AXIS_PAIRS[rng.gen_range(0..3)];
        let flips = [rng.gen_bool(0.5), rng.gen_bool(0.5), rng.gen_bool(0.5)];
        let p = &mut patches[i];
        let map = transform_map(p.extent, axes, turns, flips);
        p.image = permute(&p.image, &map);
        p.label = permute(&p.label, &map);
    }
}
