//! Synthetic tactile sensing for colorectal polyp phantoms: frame rendering,
//! an edge-device state machine, a chunked datagram protocol, and the
//! classification and stiffness-embedding analysis stages.

pub mod device;
pub mod embed;
pub mod error;
pub mod imageproc;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod wire;

pub use error::{Error, Result};

/// Derives an independent seed for a numbered sub-stream of `seed`.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
