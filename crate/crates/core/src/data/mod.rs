//! Annotations, features, anticipation targets, sampling and synthetic data.

mod annotations;
mod anticipation;
mod features;
mod manifest;
mod sampler;
mod synth;

pub use annotations::{
    annotations_to_string, load_annotations, load_annotations_with, parse_annotations, segments,
    write_annotations, PhaseSequence, Segment, Vocabulary,
};
pub use anticipation::{make_anticipation_targets, AnticipationTargets};
pub use features::{
    features_from_bytes, features_to_bytes, load_features, write_features, FeatureSequence,
    FEATURE_MAGIC, FEATURE_VERSION,
};
pub use manifest::{
    load_dataset, synth_dataset, write_synth_dataset, Dataset, Manifest, ManifestEntry, Video,
    MANIFEST_FILE,
};
pub use sampler::{
    keyframes, plan_sampling, required_budget, sample_sequence, sample_sequence_jittered,
    SamplePlan, SampledSequence,
};
pub use synth::{synth_generate, SynthConfig, SynthVideo};
