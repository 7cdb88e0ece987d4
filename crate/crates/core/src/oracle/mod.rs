//! Ground-truth oracles for tiny instances.

pub mod blahut;
pub mod game;

pub use blahut::ba_distortion_rate;
pub use game::{
    encoder_best_response, oracle_value, pessimistic_value, BestResponseTable, DecoderTable,
    OracleValue,
};
