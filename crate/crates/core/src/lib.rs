pub mod attacks;
pub mod eval_p1;
pub mod eval_p2;
pub mod oracle;
pub mod saliency;
pub mod stats;
pub mod synthetic;
pub mod tensorops;
