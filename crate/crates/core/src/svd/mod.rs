//! Truncated-SVD projection codec and its container format.

pub mod codec;
pub mod container;
pub mod jacobi;

pub use codec::{
    choose_rank, encode_view, stack_singular_values, svd_decode, svd_encode, truncation_mse,
    SvdScan, SvdView,
};
pub use container::{read_svz, write_svz};
