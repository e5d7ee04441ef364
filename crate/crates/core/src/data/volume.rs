//! Volumes, label maps, and the MVOL container.
//!
//! ```text
//! "MVOL1\0"                      6 bytes
//! kind                           u8: 0 = intensity f32, 1 = label u8
//! extents x, y, z                3 × u32 LE
//! spacing x, y, z                3 × f32 LE
//! voxels                         x fastest
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MVOL_MAGIC: &[u8; 6] = b"MVOL1\0";
const HEADER_LEN: usize = 6 + 1 + 12 + 12;

/// Linear index with x fastest.
#[inline]
pub fn linear_index(extents: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + extents[0] * (y + extents[1] * z)
}

fn check_geometry(extents: [usize; 3], spacing: [f32; 3], len: usize) -> Result<()> {
    if extents.iter().any(|&e| e == 0) {
        return Err(Error::Contract(format!("zero extent in {extents:?}")));
    }
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Contract(format!("spacing {spacing:?} must be positive")));
    }
    let n = extents.iter().product::<usize>();
    if n != len {
        return Err(Error::Contract(format!(
            "extents {extents:?} need {n} voxels, got {len}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    extents: [usize; 3],
    spacing: [f32; 3],
    voxels: Vec<f32>,
}

impl Volume {
    pub fn new(extents: [usize; 3], spacing: [f32; 3], voxels: Vec<f32>) -> Result<Self> {
        check_geometry(extents, spacing, voxels.len())?;
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite voxel at index {i}")));
        }
        Ok(Volume {
            extents,
            spacing,
            voxels,
        })
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[linear_index(self.extents, x, y, z)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    extents: [usize; 3],
    spacing: [f32; 3],
    voxels: Vec<u8>,
}

impl LabelMap {
    pub fn new(extents: [usize; 3], spacing: [f32; 3], voxels: Vec<u8>) -> Result<Self> {
        check_geometry(extents, spacing, voxels.len())?;
        if let Some(i) = voxels.iter().position(|&v| v > 1) {
            return Err(Error::Contract(format!(
                "label value {} at index {i} is not binary",
                voxels[i]
            )));
        }
        Ok(LabelMap {
            extents,
            spacing,
            voxels,
        })
    }

    pub fn empty(extents: [usize; 3], spacing: [f32; 3]) -> Self {
        LabelMap {
            extents,
            spacing,
            voxels: vec![0; extents.iter().product()],
        }
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn foreground_count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v == 1).count()
    }

    pub fn at(&self, x: usize, y: usize, z: usize) -> u8 {
        self.voxels[linear_index(self.extents, x, y, z)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub volume: Volume,
    pub label: LabelMap,
}

impl Subject {
    pub fn new(id: impl Into<String>, volume: Volume, label: LabelMap) -> Result<Self> {
        let id = id.into();
        if volume.extents() != label.extents() {
            return Err(Error::Data(format!(
                "subject {id}: volume extents {:?} differ from label extents {:?}",
                volume.extents(),
                label.extents()
            )));
        }
        Ok(Subject { id, volume, label })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub name: String,
    pub subjects: Vec<Subject>,
}

impl Domain {
    pub fn new(name: impl Into<String>, subjects: Vec<Subject>) -> Result<Self> {
        let name = name.into();
        if subjects.is_empty() {
            return Err(Error::Data(format!("domain {name} has no subjects")));
        }
        Ok(Domain { name, subjects })
    }
}

/// Contents of an MVOL file.
#[derive(Debug, Clone, PartialEq)]
pub enum Mvol {
    Intensity(Volume),
    Label(LabelMap),
}

fn header(kind: u8, extents: [usize; 3], spacing: [f32; 3], body: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + body);
    out.extend_from_slice(MVOL_MAGIC);
    out.push(kind);
    for e in extents {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for s in spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    let mut out = header(0, v.extents, v.spacing, v.voxels.len() * 4);
    for x in &v.voxels {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_label(path: &Path, l: &LabelMap) -> Result<()> {
    let mut out = header(1, l.extents, l.spacing, l.voxels.len());
    out.extend_from_slice(&l.voxels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_mvol(path: &Path, v: &Mvol) -> Result<()> {
    match v {
        Mvol::Intensity(v) => write_volume(path, v),
        Mvol::Label(l) => write_label(path, l),
    }
}

pub fn read_mvol(path: &Path) -> Result<Mvol> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fmt = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fmt(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..6] != MVOL_MAGIC {
        return Err(fmt("bad magic".into()));
    }
    let kind = bytes[6];
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let extents = [0, 1, 2].map(|a| u32::from_le_bytes(word(7 + 4 * a)) as usize);
    let spacing = [0, 1, 2].map(|a| f32::from_le_bytes(word(19 + 4 * a)));
    let n: usize = extents.iter().product();
    let body = &bytes[HEADER_LEN..];
    let elem = match kind {
        0 => 4,
        1 => 1,
        k => return Err(Error::Contract(format!("unknown MVOL kind {k}"))),
    };
    if body.len() < n * elem {
        return Err(fmt(format!(
            "truncated voxel buffer: {} of {} bytes",
            body.len(),
            n * elem
        )));
    }
    if body.len() > n * elem {
        return Err(fmt("trailing bytes after voxel buffer".into()));
    }
    match kind {
        0 => {
            let voxels = body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Volume::new(extents, spacing, voxels).map(Mvol::Intensity)
        }
        _ => LabelMap::new(extents, spacing, body.to_vec()).map(Mvol::Label),
    }
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    match read_mvol(path)? {
        Mvol::Intensity(v) => Ok(v),
        Mvol::Label(_) => Err(Error::Contract(format!(
            "{} holds a label map, expected intensities",
            path.display()
        ))),
    }
}

pub fn read_label(path: &Path) -> Result<LabelMap> {
    match read_mvol(path)? {
        Mvol::Label(l) => Ok(l),
        Mvol::Intensity(_) => Err(Error::Contract(format!(
            "{} holds intensities, expected a label map",
            path.display()
        ))),
    }
}
