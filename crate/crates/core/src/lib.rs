//! Multimodal meme emotion classification: data handling, text and image
//! encoders, fusion strategies, training and evaluation.

pub mod autograd;
pub mod checkpoint;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod layers;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod tasks;
pub mod textpipe;
pub mod training;

pub use error::{Error, Result};
pub use tasks::{LabelColumn, Task, TaskGroup};
