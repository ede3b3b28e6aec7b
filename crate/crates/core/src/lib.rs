pub mod batch;
pub mod dsd;
pub mod env;
pub mod harness;
pub mod error;
pub mod instructor;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sac;
pub mod scalar;
pub mod videodata;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mlp64 = nn::Mlp<f64>;
pub type Mlp32 = nn::Mlp<f32>;
pub type PhiNet64 = dsd::PhiNet<f64>;
pub type PhiNet32 = dsd::PhiNet<f32>;
pub type PolicyNet64 = sac::PolicyNet<f64>;
pub type PolicyNet32 = sac::PolicyNet<f32>;
pub type SacAgent64 = sac::SacAgent<f64>;
pub type SacAgent32 = sac::SacAgent<f32>;
pub type Instructor64 = instructor::Instructor<f64>;
pub type Instructor32 = instructor::Instructor<f32>;
pub type TransitionBatch64 = batch::TransitionBatch<f64>;
pub type TransitionBatch32 = batch::TransitionBatch<f32>;
