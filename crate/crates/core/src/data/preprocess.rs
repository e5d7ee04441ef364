use super::Volume;
use crate::error::{Error, Result};

/// Z-score over all voxels, then min-max rescale to `[0, 1]`.
pub fn standardize_normalize(volume: &Volume) -> Result<Volume> {
    let v = volume.voxels();
    let first = v[0];
    if v.iter().all(|&x| x == first) {
        return Err(Error::DegenerateInput(format!(
            "constant volume (every voxel is {first})"
        )));
    }
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let z: Vec<f64> = v.iter().map(|&x| (x as f64 - mean) / std).collect();
    let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let out = z.iter().map(|&x| ((x - lo) / (hi - lo)) as f32).collect();
    Volume::new(volume.extents(), volume.spacing(), out)
}
