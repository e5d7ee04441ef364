//! Synthetic spine-like phantoms: a vertical column of ellipsoidal blobs
//! separated by gaps, rendered with domain-specific shape and appearance.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    write_label, write_volume, DatasetManifest, DomainEntry, LabelMap, Role,
    Subject, SubjectEntry, Volume,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    pub name: String,
    pub blob_count: usize,
    /// In-plane over vertical semi-axis ratio, drawn per blob.
    pub aspect_range: [f64; 2],
    /// Voxels between consecutive blobs.
    pub gap: usize,
    pub foreground_mean: f64,
    pub background_mean: f64,
    pub gamma: f64,
    pub texture_amplitude: f64,
    pub noise_sigma: f64,
    /// Radius of the posterior bar joining the blobs into one structure; 0 disables it.
    pub bridge_radius: f64,
}

impl DomainStyle {
    /// Rendered foreground value without texture or noise.
    pub fn foreground_intensity(&self) -> f64 {
        self.foreground_mean.clamp(0.0, 1.0).powf(self.gamma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub extents: [usize; 3],
    pub spacing: [f32; 3],
    pub train_subjects: usize,
    pub validation_subjects: usize,
    pub test_subjects: usize,
    pub seed: u64,
    pub domains: Vec<DomainStyle>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let style = |name: &str, blobs, aspect: [f64; 2], gap, gamma, texture, noise| DomainStyle {
            name: name.to_string(),
            blob_count: blobs,
            aspect_range: aspect,
            gap,
            foreground_mean: 0.7,
            background_mean: 0.3,
            gamma,
            texture_amplitude: texture,
            noise_sigma: noise,
            bridge_radius: 1.5,
        };
        PhantomConfig {
            extents: [48, 48, 48],
            spacing: [1.0; 3],
            train_subjects: 3,
            validation_subjects: 1,
            test_subjects: 2,
            seed: 0,
            domains: vec![
                style("cervical", 5, [1.5, 2.1], 2, 2.0, 0.08, 0.06),
                style("upper_thoracic", 4, [1.3, 1.8], 3, 0.6, 0.12, 0.04),
                style("lower_thoracic", 4, [1.5, 2.0], 3, 1.4, 0.05, 0.05),
                style("lumbar", 3, [1.6, 2.2], 4, 1.0, 0.10, 0.03),
            ],
        }
    }
}

impl PhantomConfig {
    pub fn subjects_per_domain(&self) -> usize {
        self.train_subjects + self.validation_subjects + self.test_subjects
    }

    pub fn validate(&self) -> Result<()> {
        if self.extents.iter().any(|&e| e < 16) {
            return Err(Error::Config(format!(
                "phantom extents {:?} must be at least 16",
                self.extents
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("phantom spacing must be positive".into()));
        }
        if self.domains.is_empty() || self.subjects_per_domain() == 0 {
            return Err(Error::Config("phantom needs domains and subjects".into()));
        }
        for d in &self.domains {
            if d.noise_sigma < 0.0 || !d.noise_sigma.is_finite() {
                return Err(Error::Config(format!("{}: noise sigma must be ≥ 0", d.name)));
            }
            if d.blob_count == 0 {
                return Err(Error::Config(format!("{}: blob count must be positive", d.name)));
            }
            let [lo, hi] = d.aspect_range;
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::Config(format!("{}: bad aspect range", d.name)));
            }
            if d.gamma <= 0.0 || d.texture_amplitude < 0.0 || d.bridge_radius < 0.0 {
                return Err(Error::Config(format!(
                    "{}: gamma must be > 0, texture and bridge radius ≥ 0",
                    d.name
                )));
            }
            blob_layout(d, self.extents)?;
        }
        Ok(())
    }
}

const MARGIN: f64 = 1.0;
const JITTER: f64 = 1.0;

/// Vertical semi-axis and blob height; errors when the column cannot fit.
fn blob_layout(style: &DomainStyle, extents: [usize; 3]) -> Result<(f64, f64)> {
    let n = style.blob_count as f64;
    let usable = extents[2] as f64 - 2.0 * MARGIN - (n - 1.0) * style.gap as f64;
    let height = usable / n;
    let semi_z = height / 2.0;
    let max_inplane = style.aspect_range[1] * semi_z;
    let room = extents[0].min(extents[1]) as f64 / 2.0 - MARGIN - JITTER;
    if height < 3.0 || max_inplane > room {
        return Err(Error::Config(format!(
            "{}: {} blobs do not fit in extents {extents:?}",
            style.name, style.blob_count
        )));
    }
    Ok((semi_z, height))
}

struct Wave {
    k: [f64; 3],
    phase: f64,
}

/// Renders one subject. Labels are the exact blob masks.
pub fn render_subject(
    style: &DomainStyle,
    extents: [usize; 3],
    spacing: [f32; 3],
    rng: &mut impl Rng,
) -> Result<(Volume, LabelMap)> {
    let (semi_z, height) = blob_layout(style, extents)?;
    let cx = extents[0] as f64 / 2.0;
    let cy = extents[1] as f64 / 2.0;
    let blobs: Vec<[f64; 6]> = (0..style.blob_count)
        .map(|i| {
            let aspect = rng.gen_range(style.aspect_range[0]..=style.aspect_range[1]);
            let c = semi_z * rng.gen_range(0.85..=1.0);
            let a = aspect * semi_z;
            let b = a * rng.gen_range(0.8..=1.0);
            let zc = MARGIN + i as f64 * (height + style.gap as f64) + height / 2.0;
            let xc = cx + rng.gen_range(-JITTER..=JITTER);
            let yc = cy + rng.gen_range(-JITTER..=JITTER);
            [xc, yc, zc, a, b, c]
        })
        .collect();
    // The bar runs through the posterior half of every blob.
    let bar_y = cy + 0.5 * blobs.iter().map(|b| b[4]).fold(f64::INFINITY, f64::min);
    let bar_z = [blobs[0][2], blobs[blobs.len() - 1][2]];
    let waves: Vec<Wave> = (0..3)
        .map(|_| Wave {
            k: [0, 1, 2].map(|_| rng.gen_range(-0.6..0.6)),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        })
        .collect();

    let n = extents.iter().product();
    let mut voxels = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for z in 0..extents[2] {
        for y in 0..extents[1] {
            for x in 0..extents[0] {
                let p = [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5];
                let in_blob = blobs.iter().any(|&[xc, yc, zc, a, b, c]| {
                    ((p[0] - xc) / a).powi(2) + ((p[1] - yc) / b).powi(2) + ((p[2] - zc) / c).powi(2)
                        <= 1.0
                });
                let in_bar = p[2] >= bar_z[0]
                    && p[2] <= bar_z[1]
                    && (p[0] - cx).powi(2) + (p[1] - bar_y).powi(2) <= style.bridge_radius.powi(2);
                let inside = in_blob || in_bar;
                let texture = style.texture_amplitude
                    * waves
                        .iter()
                        .map(|w| (w.k[0] * p[0] + w.k[1] * p[1] + w.k[2] * p[2] + w.phase).cos())
                        .sum::<f64>()
                    / waves.len() as f64;
                let base = if inside {
                    style.foreground_mean
                } else {
                    style.background_mean
                };
                let noise: f64 = if style.noise_sigma > 0.0 {
                    style.noise_sigma * Distribution::<f64>::sample(&StandardNormal, rng)
                } else {
                    0.0
                };
                let v = (base + texture).clamp(0.0, 1.0).powf(style.gamma) + noise;
                voxels.push(v as f32);
                labels.push(inside as u8);
            }
        }
    }
    Ok((
        Volume::new(extents, spacing, voxels)?,
        LabelMap::new(extents, spacing, labels)?,
    ))
}

fn role_of(config: &PhantomConfig, index: usize) -> Role {
    if index < config.train_subjects {
        Role::Train
    } else if index < config.train_subjects + config.validation_subjects {
        Role::Validation
    } else {
        Role::Test
    }
}

/// Renders every subject in memory, grouped by domain.
pub fn generate_phantom_subjects(config: &PhantomConfig) -> Result<Vec<Vec<(Subject, Role)>>> {
    config.validate()?;
    config
        .domains
        .iter()
        .enumerate()
        .map(|(d, style)| {
            (0..config.subjects_per_domain())
                .map(|s| {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream(((d as u64) << 32) | s as u64);
                    let (volume, label) =
                        render_subject(style, config.extents, config.spacing, &mut rng)?;
                    let id = format!("{}_{s:02}", style.name);
                    Ok((Subject::new(id, volume, label)?, role_of(config, s)))
                })
                .collect()
        })
        .collect()
}

pub const MANIFEST_FILE: &str = "manifest.toml";

/// Writes every subject under `out_dir` and returns the manifest path.
pub fn generate_phantom_dataset(config: &PhantomConfig, out_dir: &Path) -> Result<PathBuf> {
    let rendered = generate_phantom_subjects(config)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut domains = Vec::new();
    for (style, subjects) in config.domains.iter().zip(rendered) {
        let dir = out_dir.join(&style.name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut entries = Vec::new();
        for (subject, role) in subjects {
            let image = PathBuf::from(&style.name).join(format!("{}_image.mvol", subject.id));
            let label = PathBuf::from(&style.name).join(format!("{}_label.mvol", subject.id));
            write_volume(&out_dir.join(&image), &subject.volume)?;
            write_label(&out_dir.join(&label), &subject.label)?;
            entries.push(SubjectEntry {
                id: subject.id,
                image,
                label,
                role,
            });
        }
        domains.push(DomainEntry {
            name: style.name.clone(),
            subjects: entries,
        });
    }
    let path = out_dir.join(MANIFEST_FILE);
    DatasetManifest { domains }.write(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_foreground_is_flat() {
        let mut style = PhantomConfig::default().domains[1].clone();
        style.noise_sigma = 0.0;
        style.texture_amplitude = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (v, l) = render_subject(&style, [24, 24, 32], [1.0; 3], &mut rng).unwrap();
        let fg = style.foreground_intensity() as f32;
        assert!(l.foreground_count() > 0);
        for (x, &lab) in v.voxels().iter().zip(l.voxels()) {
            if lab == 1 {
                assert_eq!(*x, fg);
            }
        }
    }

    #[test]
    fn oversized_column_is_a_config_error() {
        let mut cfg = PhantomConfig::default();
        cfg.domains[0].blob_count = 20;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = PhantomConfig::default();
        cfg.domains[0].aspect_range = [5.0, 6.0];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = PhantomConfig {
            extents: [15, 48, 48],
            ..PhantomConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
