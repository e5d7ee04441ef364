//! Volume storage, preprocessing, patch sampling, augmentation, and the
//! synthetic multi-domain phantom generator.

mod manifest;
mod patches;
mod phantom;
mod preprocess;
mod volume;

pub use manifest::{load_subject, DatasetManifest, DomainEntry, Role, SubjectEntry};
pub use patches::{augment, rotate90, sample_patches, Patch};
pub use phantom::{
    generate_phantom_dataset, generate_phantom_subjects, render_subject, DomainStyle,
    PhantomConfig, MANIFEST_FILE,
};
pub use preprocess::standardize_normalize;
pub use volume::{
    linear_index, read_label, read_mvol, read_volume, write_label, write_mvol, write_volume,
    Domain, LabelMap, Mvol, Subject, Volume, MVOL_MAGIC,
};
