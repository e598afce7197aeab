//! Frame-wise camera pose registration against an airway surface mesh.
//!
//! Poses map camera coordinates to world coordinates (millimeters). The
//! camera looks down +z with +x right and +y down; depth maps hold z-depth.

pub mod benchmark;
pub mod camera;
pub mod depth;
pub mod error;
pub mod errormap;
pub mod io;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod refine;
pub mod se3;
pub mod ssim;

pub use benchmark::{pseudo_depth, BenchmarkCase, BenchmarkPair, GenerateParams, PerturbationSpec};
pub use camera::{back_project, project, CameraIntrinsics};
pub use depth::{warp_depth, DepthMap, WarpedDepth};
pub use error::{Error, Result};
pub use mesh::{render_depth, sdf, AirwayMesh, Centerline, SdfSample};
pub use se3::{exp_map, log_map, Pose, TangentVector};
pub use losses::{pose_loss, sdf_loss, Difficulty, PoseLossWeights, SdfLossParams};
pub use metrics::{metric_ds, metric_nc, metric_si, MetricsRow};
pub use refine::{refine, refine_with_pseudo_depth, RefineResult, RefineSettings, RefinerConfig};
pub use ssim::msssim;
