//! Synthetic scenes with exact symmetry annotations, ground-truth rasters
//! and the dataset directory format.

mod annotation;
mod dataset;
mod scene;

pub use annotation::{rasterize_gt, Annotation, Center, GeoTransform, GtStyle, Segment, Task};
pub use dataset::{
    generate_split, read_dataset, read_manifest, sample_rng, write_dataset, write_samples, DatasetManifest, ManifestEntry, Sample,
    DATASET_VERSION, MANIFEST_FILE,
};
pub use scene::{generate_scene, SceneSpec, Shape, ShapeFamily};
