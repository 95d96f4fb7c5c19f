//! Coil combination, PSNR/SSIM and report files.

mod metrics;
mod pgm;
mod report;

pub use metrics::{psnr, ssim, ssim_default, ssos, Image, SSIM_K1, SSIM_K2, SSIM_WINDOW};
pub use pgm::{read_pgm16, write_pgm16, PgmSidecar};
pub use report::{format_db, parse_report_csv, write_timing, ReconReport, SampleScore, Timing};
