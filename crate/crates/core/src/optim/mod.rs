//! Fitting a scene to posed images: losses, analytic gradients through the
//! rasterizer, and the densify/prune training loop.

pub mod backward;
pub mod fit;
pub mod losses;

pub use backward::{
    backward, forward_loss, BackwardOutput, CellGradient, DetailGradient, LossBreakdown,
    ParamGradient, TermWeights,
};
pub use fit::{
    densify, fit, init_scene, prune, FitRecord, FitView, LossWeights, PrimitiveStats, Schedule,
    TrainConfig,
};
pub use losses::{
    loss_connect, loss_normal, loss_rgb, loss_sparse, loss_ssim, psnr, ContribRecord,
};
