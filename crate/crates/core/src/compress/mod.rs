mod delta;
mod random_k;
mod rank;
mod sign;
mod sketch;

pub use delta::{estimate_delta, Compressor};
pub(crate) use random_k::check_factor;
pub use random_k::{random_k_compress, random_k_decompress, random_k_indices, sample_count, RandomKMessage};
pub use rank::{component_energies, decompress, rank_compress, RankFactors, WarmStart};
pub use sign::{scaled_sign, sign, signum_aggregate, signum_compress, SignMessage};
pub use sketch::{sketch_compress, sketch_decompress, SketchLayout, SketchMessage};

