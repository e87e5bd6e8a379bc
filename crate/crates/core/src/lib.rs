//! Conflict-aware gradient agreement for augmentation combinations in
//! pixel-based Q-learning.

pub mod agent;
pub mod augbox;
pub mod diagnostics;
pub mod gradkit;
pub mod gradtape;
pub mod pixelworld;
pub mod seed;
