pub mod bench;
pub mod dist;
pub mod div;
pub mod error;
pub mod graph;
pub mod matcore;
pub mod post;
pub mod prior;
pub mod quad;
pub mod rng;
