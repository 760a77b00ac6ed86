//! Degradation, corpus construction and patch sampling.

pub mod charts;
pub mod corpus;
pub mod degrade;
pub mod image_io;
pub mod sampler;

pub use charts::{test_chart, write_charts};
pub use corpus::{build_corpus, read_manifest, DegradationSpec, GammaSpec, Manifest, ManifestEntry, MANIFEST_NAME};
pub use degrade::{bicubic_resize, cubic_kernel, degrade, gamma_darken, rgb_to_y, LumaRange};
pub use image_io::{crop, load_rgb, save_gray, save_rgb, side_by_side};
pub use sampler::{aligned_patch, dihedral, load_pairs, PairedSample, PatchBatch, PatchOrigin, PatchSampler};
