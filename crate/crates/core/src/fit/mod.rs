//! Phoneme-guided per-frame fitting of viseme weights and head pose.

pub mod adam;
pub mod config;
pub mod engine;
pub mod flow;
pub mod guidance;
pub mod losses;
pub mod observation;

pub use adam::{adam_step, AdamState};
pub use config::{FitConfig, LossWeights, DEFAULT_LOSS_WEIGHTS};
pub use engine::{fit_clip, fit_curve, optimize_frame, parse_poses, read_poses, write_poses, FitResult};
pub use flow::screen_flow;
pub use guidance::{guidance_sets, top_k, GuidanceSets};
pub use losses::{
    flow_targets, grad_total, loss_act, loss_diff, loss_flow, loss_lmk, loss_range, loss_rgb, loss_sup, total_loss,
    FlowCorrespondence, FlowTarget, FrameParams, FrameProblem, Gradient,
};
pub use observation::{
    DirectoryObservations, FlowGrid, FlowPair, FrameObservation, Landmark, LandmarkRow, ObservationProvider, RgbImage,
};
