//! Whole-volume prediction by sliding windows and connected-component
//! post-processing.

use std::collections::VecDeque;

use crate::data::{linear_index, LabelMap, Volume};
use crate::diffcore::{Mode, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::segnet::SegNet;

/// Per-voxel averaged class probabilities, `[classes][voxel]` with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowFusion {
    pub extents: [usize; 3],
    pub classes: usize,
    pub probs: Vec<f64>,
    pub counts: Vec<u32>,
}

impl WindowFusion {
    /// Argmax label per voxel; ties resolve to the lower class.
    pub fn labels(&self, spacing: [f32; 3]) -> Result<LabelMap> {
        let n = self.counts.len();
        let voxels = (0..n)
            .map(|i| {
                let mut best = 0;
                for c in 1..self.classes {
                    if self.probs[c * n + i] > self.probs[best * n + i] {
                        best = c;
                    }
                }
                best.min(1) as u8
            })
            .collect();
        LabelMap::new(self.extents, spacing, voxels)
    }
}

/// Mirror index without edge repetition, for any offset.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Window corners along one axis of the padded grid, plus the leading pad.
fn axis_windows(extent: usize, patch: usize, stride: usize) -> (Vec<usize>, usize) {
    let count = if extent <= patch {
        1
    } else {
        (extent - patch).div_ceil(stride) + 1
    };
    let padded = (count - 1) * stride + patch;
    let before = (padded - extent) / 2;
    ((0..count).map(|k| k * stride).collect(), before)
}

/// Sliding-window fusion for any patch predictor mapping a `patch³` window
/// (x fastest) to `classes × patch³` probabilities.
pub fn sliding_window_fuse(
    volume: &Volume,
    patch: usize,
    classes: usize,
    stride: usize,
    mut predict: impl FnMut(&[f32]) -> Result<Vec<f64>>,
) -> Result<WindowFusion> {
    if stride == 0 || stride > patch {
        return Err(Error::Config(format!(
            "stride {stride} outside [1, {patch}]"
        )));
    }
    let ex = volume.extents();
    let axes: Vec<(Vec<usize>, usize)> = ex.iter().map(|&e| axis_windows(e, patch, stride)).collect();
    let n = volume.len();
    let mut probs = vec![0.0f64; classes * n];
    let mut counts = vec![0u32; n];
    let p3 = patch * patch * patch;
    let mut window = vec![0f32; p3];
    let mut targets = vec![None::<usize>; p3];
    for &oz in &axes[2].0 {
        for &oy in &axes[1].0 {
            for &ox in &axes[0].0 {
                for wz in 0..patch {
                    for wy in 0..patch {
                        for wx in 0..patch {
                            let q = [
                                (ox + wx) as isize - axes[0].1 as isize,
                                (oy + wy) as isize - axes[1].1 as isize,
                                (oz + wz) as isize - axes[2].1 as isize,
                            ];
                            let src = [0, 1, 2].map(|a| reflect(q[a], ex[a]));
                            let w = linear_index([patch; 3], wx, wy, wz);
                            window[w] = volume.at(src[0], src[1], src[2]);
                            let inside = (0..3).all(|a| q[a] >= 0 && (q[a] as usize) < ex[a]);
                            targets[w] = inside
                                .then(|| linear_index(ex, q[0] as usize, q[1] as usize, q[2] as usize));
                        }
                    }
                }
                let out = predict(&window)?;
                if out.len() != classes * p3 {
                    return Err(Error::shape(
                        "window prediction",
                        format!("expected {} values, got {}", classes * p3, out.len()),
                    ));
                }
                for (w, t) in targets.iter().enumerate() {
                    if let Some(v) = *t {
                        counts[v] += 1;
                        for c in 0..classes {
                            probs[c * n + v] += out[c * p3 + w];
                        }
                    }
                }
            }
        }
    }
    for c in 0..classes {
        for (p, &k) in probs[c * n..(c + 1) * n].iter_mut().zip(&counts) {
            *p /= k as f64;
        }
    }
    Ok(WindowFusion {
        extents: ex,
        classes,
        probs,
        counts,
    })
}

/// Network probabilities fused over windows (eval mode, no dropout).
pub fn sliding_window_probabilities<T: Scalar>(
    net: &SegNet,
    params: &ParamSet<T>,
    volume: &Volume,
    stride: usize,
) -> Result<WindowFusion> {
    let cfg = net.config();
    let p = cfg.patch_extent;
    sliding_window_fuse(volume, p, cfg.out_channels, stride, |w| {
        let x = Tensor::from_fn(&[1, p, p, p], |i| T::from_f64(w[i] as f64));
        let probs = net.predict_patch(params, &x, Mode::Eval, 0)?;
        Ok(probs.data().iter().map(|v| v.re()).collect())
    })
}

pub fn sliding_window_predict<T: Scalar>(
    net: &SegNet,
    params: &ParamSet<T>,
    volume: &Volume,
    stride: usize,
) -> Result<LabelMap> {
    sliding_window_probabilities(net, params, volume, stride)?.labels(volume.spacing())
}

pub fn default_stride(patch_extent: usize) -> usize {
    (patch_extent / 2).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Six,
    #[default]
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Component id per voxel (`u32::MAX` for background), in scan order of discovery.
pub fn label_components(labels: &LabelMap, connectivity: Connectivity) -> (Vec<u32>, Vec<usize>) {
    let ex = labels.extents();
    let vox = labels.voxels();
    let offsets = connectivity.offsets();
    let mut comp = vec![u32::MAX; vox.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..vox.len() {
        if vox[start] != 1 || comp[start] != u32::MAX {
            continue;
        }
        let id = sizes.len() as u32;
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let p = [i % ex[0], (i / ex[0]) % ex[1], i / (ex[0] * ex[1])];
            for d in &offsets {
                let q = [0, 1, 2].map(|a| p[a] as isize + d[a]);
                if (0..3).any(|a| q[a] < 0 || q[a] >= ex[a] as isize) {
                    continue;
                }
                let j = linear_index(ex, q[0] as usize, q[1] as usize, q[2] as usize);
                if vox[j] == 1 && comp[j] == u32::MAX {
                    comp[j] = id;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    (comp, sizes)
}

/// Keeps only the largest foreground component; equal sizes resolve to the
/// component holding the smallest linear index.
pub fn largest_connected_component_with(labels: &LabelMap, connectivity: Connectivity) -> LabelMap {
    let (comp, sizes) = label_components(labels, connectivity);
    let Some(best) = (0..sizes.len()).reduce(|b, c| if sizes[c] > sizes[b] { c } else { b }) else {
        return labels.clone();
    };
    let voxels = comp.iter().map(|&c| (c == best as u32) as u8).collect();
    LabelMap::new(labels.extents(), labels.spacing(), voxels).expect("binary by construction")
}

pub fn largest_connected_component(labels: &LabelMap) -> LabelMap {
    largest_connected_component_with(labels, Connectivity::TwentySix)
}
