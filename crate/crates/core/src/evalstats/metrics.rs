use crate::data::{linear_index, LabelMap};
use crate::error::{Error, Result};

fn congruent(a: &LabelMap, b: &LabelMap) -> Result<()> {
    if a.extents() != b.extents() {
        return Err(Error::shape(
            "metric",
            format!("extents {:?} vs {:?}", a.extents(), b.extents()),
        ));
    }
    Ok(())
}

/// Dice overlap in percent; both empty gives 100.
pub fn dice(a: &LabelMap, b: &LabelMap) -> Result<f64> {
    congruent(a, b)?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.voxels().iter().zip(b.voxels()) {
        na += x as usize;
        nb += y as usize;
        both += (x & y) as usize;
    }
    if na + nb == 0 {
        return Ok(100.0);
    }
    Ok(100.0 * 2.0 * both as f64 / (na + nb) as f64)
}

/// Foreground voxels with at least one background 6-neighbour; outside counts as background.
pub fn surface_voxels(mask: &LabelMap) -> Vec<[usize; 3]> {
    let ex = mask.extents();
    let v = mask.voxels();
    let mut out = Vec::new();
    for z in 0..ex[2] {
        for y in 0..ex[1] {
            for x in 0..ex[0] {
                if v[linear_index(ex, x, y, z)] != 1 {
                    continue;
                }
                let p = [x, y, z];
                let boundary = (0..3).any(|a| {
                    [-1isize, 1].iter().any(|&d| {
                        let q = p[a] as isize + d;
                        if q < 0 || q >= ex[a] as isize {
                            return true;
                        }
                        let mut r = p;
                        r[a] = q as usize;
                        v[linear_index(ex, r[0], r[1], r[2])] == 0
                    })
                });
                if boundary {
                    out.push(p);
                }
            }
        }
    }
    out
}

/// One pass of the exact 1D squared-distance transform along physical positions `i·step`.
fn edt_1d(f: &[f64], step: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let pos = |i: usize| i as f64 * step;
    let mut k = 0usize;
    let mut seeded = false;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        if !seeded {
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            seeded = true;
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if s <= z[k] && k > 0 {
                k -= 1;
            } else if s <= z[k] {
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    if !seeded {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for q in 0..n {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        out[q] = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance (mm²) from every voxel to the nearest seed voxel.
pub fn squared_distance_map(extents: [usize; 3], seeds: &[[usize; 3]], spacing: [f64; 3]) -> Vec<f64> {
    let n: usize = extents.iter().product();
    let mut d = vec![f64::INFINITY; n];
    for p in seeds {
        d[linear_index(extents, p[0], p[1], p[2])] = 0.0;
    }
    let longest = *extents.iter().max().unwrap();
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];
    for axis in 0..3 {
        let len = extents[axis];
        let stride = match axis {
            0 => 1,
            1 => extents[0],
            _ => extents[0] * extents[1],
        };
        for start in 0..n {
            let coord = (start / stride) % len;
            if coord != 0 {
                continue;
            }
            for i in 0..len {
                line[i] = d[start + i * stride];
            }
            edt_1d(&line[..len], spacing[axis], &mut out[..len], &mut v, &mut z);
            for i in 0..len {
                d[start + i * stride] = out[i];
            }
        }
    }
    d
}

/// Average symmetric surface distance in mm between two non-empty masks.
pub fn assd(a: &LabelMap, b: &LabelMap, spacing: [f64; 3]) -> Result<f64> {
    congruent(a, b)?;
    if a.foreground_count() == 0 || b.foreground_count() == 0 {
        return Err(Error::EmptyMask(format!(
            "ASSD needs two non-empty masks (sizes {} and {})",
            a.foreground_count(),
            b.foreground_count()
        )));
    }
    let ex = a.extents();
    let sa = surface_voxels(a);
    let sb = surface_voxels(b);
    let da = squared_distance_map(ex, &sa, spacing);
    let db = squared_distance_map(ex, &sb, spacing);
    let sum_ab: f64 = sa.iter().map(|p| db[linear_index(ex, p[0], p[1], p[2])].sqrt()).sum();
    let sum_ba: f64 = sb.iter().map(|p| da[linear_index(ex, p[0], p[1], p[2])].sqrt()).sum();
    Ok((sum_ab + sum_ba) / (sa.len() + sb.len()) as f64)
}
