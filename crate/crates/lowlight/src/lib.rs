//! Two-stage unsupervised low-light image enhancement.
//!
//! Stage 1 brightens a low-light image with Retinex-based adaptive tone
//! mapping ([`tonemap`]); stage 2 refines the result with a U-net
//! generator trained adversarially against unpaired normal-light images
//! ([`net`], [`train`]). The crate also carries the evaluation machinery:
//! PSNR/SSIM/NIQE quality metrics ([`metrics`], [`niqe`]) and a feature
//! detection-and-matching study ([`matching`]).

pub mod ckpt;
pub mod error;
pub mod img;
pub mod loss;
pub mod matching;
pub mod metrics;
pub mod net;
pub mod niqe;
pub mod tensor;
pub mod tonemap;
pub mod train;

pub use error::{Error, Result};

/// Deterministic numeric formatting used by every CSV surface.
pub mod fmt {
    /// Formats with six significant digits (plain decimal notation).
    pub fn sig6(x: f64) -> String {
        if x == 0.0 || !x.is_finite() {
            return format!("{x}");
        }
        let mag = x.abs().log10().floor() as i32;
        let decimals = (5 - mag).max(0) as usize;
        format!("{x:.decimals$}")
    }

    #[cfg(test)]
    mod tests {
        use super::sig6;

        #[test]
        fn six_significant_digits() {
            assert_eq!(sig6(0.32), "0.320000");
            assert_eq!(sig6(128.0639), "128.064");
            assert_eq!(sig6(-0.0001234567), "-0.000123457");
            assert_eq!(sig6(0.0), "0");
            assert_eq!(sig6(20.0), "20.0000");
        }
    }
}
