//! Viseme curves from phoneme timing and video: procedural envelopes,
//! phoneme-guided blendshape fitting, and animation output.

pub mod animation;
pub mod camera;
pub mod curve;
pub mod error;
pub mod eval;
pub mod fit;
pub mod kv;
pub mod obj;
pub mod procedural;
pub mod rig;
pub mod synth;
pub mod timeline;

pub use animation::{
    blend_bone_pose, bone_animation, resample_curve, sample_at, slerp, BonePose, BonePoseAssets, BoneTransform,
};
pub use camera::{project, Intrinsics, Pose, PoseGrad, Projector};
pub use curve::{read_curve, write_curve, Curve};
pub use error::{Error, Result};
pub use eval::{keypoint_error, lip_distance_curves, total_variation, MetricSeries};
pub use fit::{fit_clip, fit_curve, FitConfig, FitResult, FrameObservation, Landmark, ObservationProvider};
pub use procedural::{envelope, generate_procedural, EnvelopeRule, ProceduralRules};
pub use rig::{blend_mesh, load_rig_manifest, LandmarkId, LipPairs, Mesh, Rig, DEFAULT_VISEME_LABELS};
pub use synth::{SynthOptions, SyntheticClip};
pub use timeline::{frame_count, frame_time, PhonemeSegment, PhonemeVisemeMap, Timeline};
