//! Patch datasets and contrastive-divergence training of the prior.

mod cd;
mod patches;

pub use cd::{
    cd_update, contrastive_step, train, train_with_observer, EpochRecord, TrainingConfig, TrainingOutcome,
    TrainingTrace, UpdateNorms,
};
pub use patches::{
    extract_patches, grid_patch_count, read_patch_file, stride_for_target, write_patch_file, DatasetManifest,
    PatchDataset, PatchEntry, SkippedImage, MANIFEST_FILE, PATCHES_FILE,
};
