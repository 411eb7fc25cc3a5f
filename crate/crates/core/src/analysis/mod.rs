//! Complexity accounting and reconstruction fidelity.

mod complexity;
mod metrics;

pub use complexity::{analytic_macs, count_params, verify_macs, ComplexityQuery, MacVerification, MsaKind};
pub use metrics::{fidelity, psnr, ssim, video_psnr, FidelityReport, PSNR_CAP_DB};
