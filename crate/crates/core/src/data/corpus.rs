//! On-disk corpus: native annotations plus a named-array file of rasters.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{formats, LabelSpace, Sample, SceneAnnotation};
use crate::backbone::VideoClip;
use crate::error::{Error, Result};
use crate::tensor::io::{read_arrays, write_arrays, Dtype};

pub const ANNOTATIONS_FILE: &str = "annotations.txt";
pub const CLIPS_FILE: &str = "clips.rnac";

/// Writes `annotations.txt` and `clips.rnac` into `dir`.
pub fn write_corpus(dir: &Path, clips: &[VideoClip], annotations: &[SceneAnnotation], labels: &LabelSpace) -> Result<()> {
    if clips.len() != annotations.len() {
        return Err(Error::data(format!("{} clips but {} annotations", clips.len(), annotations.len())));
    }
    std::fs::create_dir_all(dir)?;
    formats::write_native(BufWriter::new(File::create(dir.join(ANNOTATIONS_FILE))?), annotations, labels)?;
    let arrays: Vec<(&str, &crate::tensor::Tensor)> = clips.iter().map(|c| (c.clip_id.as_str(), &c.frames)).collect();
    let mut w = BufWriter::new(File::create(dir.join(CLIPS_FILE))?);
    write_arrays(&mut w, &arrays, Dtype::F64)?;
    Ok(())
}

/// Reads a corpus written by [`write_corpus`] and samples every clip to
/// `frames` frames.
pub fn read_corpus(dir: &Path, labels: &LabelSpace, frames: usize, frame_rate: f64) -> Result<Vec<Sample>> {
    let annotations = formats::load_annotations(&dir.join(ANNOTATIONS_FILE), formats::AnnotationFormat::Native, labels)?;
    let mut arrays: HashMap<String, _> = read_arrays(&mut BufReader::new(File::open(dir.join(CLIPS_FILE))?))?.into_iter().collect();
    annotations
        .into_iter()
        .map(|a| {
            let frames_t = arrays.remove(&a.clip_id).ok_or_else(|| Error::data(format!("no raster for clip {}", a.clip_id)))?;
            if frames_t.ndim() != 4 {
                return Err(Error::data(format!("raster for {} must be [T, H, W, C], got {:?}", a.clip_id, frames_t.shape())));
            }
            let clip = VideoClip { clip_id: a.clip_id.clone(), frame_rate, frames: frames_t };
            Sample::new(&clip, a, frames)
        })
        .collect()
}
