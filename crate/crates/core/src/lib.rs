pub mod data;
pub mod gradcheck;
pub mod harness;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod seed;
pub mod tensor;
