//! Trainable desk-scale stand-ins for the visual and textual backbones.

mod text;
mod video;
mod vocab;

pub use text::{TextEncoder, TextFeatures};
pub use video::{sample_frames, sample_indices, VideoClip, VideoFeatures, VisualEncoder};
pub use vocab::{TextPrompt, Vocabulary, UNK};
