//! Prediction interchange file: a header line, then one JSON record per clip.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PREDICTIONS_HEADER: &str = "#react-predictions v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorPrediction {
    pub labels: Vec<String>,
    pub confidences: Vec<f64>,
    /// Keyframe box `(cx, cy, w, h)`.
    #[serde(rename = "box")]
    pub keyframe_box: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub clip_id: String,
    pub group: String,
    pub group_confidence: f64,
    pub actors: Vec<ActorPrediction>,
}

impl PredictionRecord {
    pub fn validate(&self) -> Result<()> {
        let unit = |c: f64| (0.0..=1.0).contains(&c);
        if !unit(self.group_confidence) {
            return Err(Error::data(format!("{}: group confidence {} outside [0, 1]", self.clip_id, self.group_confidence)));
        }
        for a in &self.actors {
            if a.labels.len() != a.confidences.len() || !a.confidences.iter().all(|&c| unit(c)) {
                return Err(Error::data(format!("{}: actor labels and confidences disagree", self.clip_id)));
            }
        }
        Ok(())
    }
}

pub fn write_predictions<W: Write>(mut w: W, records: &[PredictionRecord]) -> Result<()> {
    writeln!(w, "{PREDICTIONS_HEADER}")?;
    for r in records {
        r.validate()?;
        writeln!(w, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    Ok(())
}

pub fn read_predictions<R: BufRead>(r: R) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if i == 0 {
            if line.trim() != PREDICTIONS_HEADER {
                return Err(Error::Parse { line: 1, message: format!("expected header {PREDICTIONS_HEADER:?}") });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_stable() {
        let recs = vec![PredictionRecord {
            clip_id: "c1".into(),
            group: "left-spiking".into(),
            group_confidence: 0.8125,
            actors: vec![ActorPrediction { labels: vec!["spiking".into()], confidences: vec![0.9], keyframe_box: [0.1, 0.2, 0.3, 0.4] }],
        }];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "#react-predictions v1\n{\"clip_id\":\"c1\",\"group\":\"left-spiking\",\"group_confidence\":0.8125,\"actors\":[{\"labels\":[\"spiking\"],\"confidences\":[0.9],\"box\":[0.1,0.2,0.3,0.4]}]}\n"
        );
        let back = read_predictions(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
    }
}
