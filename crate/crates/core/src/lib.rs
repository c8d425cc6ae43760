//! Manifold distance learning.
//!
//! A branched MLP is trained to regress, for every class, the distance from
//! an input point to that class's data manifold. Training data comes from
//! points on synthetic manifolds plus off-manifold augmentations generated
//! at a known normal offset. The crate covers dataset generation, local chart
//! inference, augmentation, training (distance learner, standard classifier,
//! adversarially trained classifier), PGD attacks and evaluation.

pub mod attack;
pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod manifold;
pub mod nn;
pub mod pipeline;
pub mod rng;


