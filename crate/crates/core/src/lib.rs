//! Training-free adverse-weather perception: weather estimation, adaptive
//! enhancement, entropy-guided detection fusion, asynchronous Kalman tracking
//! and a scene-embedding filter recommender, plus the evaluation harness.

pub mod cape;
pub mod detect;
pub mod egnms;
pub mod eval;
pub mod frame;
pub mod geometry;
pub mod imaging;
pub mod ktt;
pub mod models;
pub mod pee;
pub mod pipeline;
pub mod sed;
pub mod slot;
pub mod synth;
pub mod wem;
