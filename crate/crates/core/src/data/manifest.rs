use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_label, read_volume, standardize_normalize, Domain, Subject};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub image: PathBuf,
    pub label: PathBuf,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainEntry {
    pub name: String,
    pub subjects: Vec<SubjectEntry>,
}

impl DomainEntry {
    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &SubjectEntry> {
        self.subjects.iter().filter(move |s| s.role == role)
    }
}

/// Dataset index. Relative file paths are resolved against the manifest's
/// directory when read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub domains: Vec<DomainEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        let mut ids = HashSet::new();
        for d in &self.domains {
            if !names.insert(d.name.as_str()) {
                return Err(Error::Data(format!("duplicate domain name {}", d.name)));
            }
            for s in &d.subjects {
                if !ids.insert(s.id.as_str()) {
                    return Err(Error::Data(format!("duplicate subject id {}", s.id)));
                }
            }
        }
        Ok(())
    }

    pub fn domain_names(&self) -> Vec<&str> {
        self.domains.iter().map(|d| d.name.as_str()).collect()
    }

    pub fn domain(&self, name: &str) -> Result<&DomainEntry> {
        self.domains
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::Config(format!("manifest has no domain {name:?}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self)
            .map_err(|e| Error::Data(format!("cannot serialize manifest: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        m.validate()?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut m.domains {
            for s in &mut d.subjects {
                s.image = base.join(&s.image);
                s.label = base.join(&s.label);
            }
        }
        Ok(m)
    }

    /// Loads and intensity-normalizes the subjects of one domain with the given roles.
    pub fn load_domain(&self, name: &str, roles: &[Role]) -> Result<Domain> {
        let entry = self.domain(name)?;
        let subjects = entry
            .subjects
            .iter()
            .filter(|s| roles.contains(&s.role))
            .map(load_subject)
            .collect::<Result<Vec<_>>>()?;
        Domain::new(name, subjects)
    }
}

pub fn load_subject(entry: &SubjectEntry) -> Result<Subject> {
    let volume = standardize_normalize(&read_volume(&entry.image)?)?;
    let label = read_label(&entry.label)?;
    Subject::new(entry.id.clone(), volume, label)
}
