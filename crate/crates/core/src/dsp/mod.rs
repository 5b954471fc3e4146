//! Frequency-domain feature chain: framing, FFT power spectra, mel filter
//! bank, log compression and DCT-II.

pub mod dct;
pub mod fft;
pub mod mel;
pub mod mfcc;
