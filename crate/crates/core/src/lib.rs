pub mod attack;
pub mod bench;
pub mod data;
pub mod layers;
pub mod loss;
pub mod model;
pub mod selftest;
pub mod tensor;
pub mod train;
pub mod weights;
