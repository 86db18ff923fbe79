//! A seeded laboratory for place-name lexicon acquisition and
//! speech-assisted self-localization.
//!
//! The pipeline: a simulated robot patrols a 2-D occupancy-grid world while
//! an utterer names the current place through a noisy syllable channel that
//! emits recognition lattices. A Dirichlet-process segmenter discovers
//! words in those lattices, a weak-limit mixture model couples the words to
//! Gaussian position distributions, and the learned model then sharpens
//! Monte Carlo localization whenever a sentence is heard. Everything is
//! reproducible from a configuration and a seed.

pub mod concepts;
pub mod config;
pub mod error;
pub mod geom;
pub mod grid;
pub mod mcl;
pub mod metrics;
pub mod pipeline;
pub mod sampling;
pub mod scenarios;
pub mod segment;
pub mod speech;
pub mod speech_mcl;
pub mod world;

pub use error::{Error, Result};
