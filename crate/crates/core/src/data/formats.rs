//! Annotation file formats: volleyball-style, jrdbpar-style and native.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{check_box, ActorAnnotation, LabelSpace, SceneAnnotation, SocialGroup};
use crate::error::{Error, Result};

pub const NATIVE_HEADER: &str = "#react-annotations v1";

/// Keyframe spacing of jrdbpar-style files.
pub const JRDB_KEYFRAME_STRIDE: u64 = 15;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnnotationFormat {
    /// `<frame>.jpg <group> (<x> <y> <w> <h> <action>)*`, pixel boxes.
    Volleyball { width: f64, height: f64 },
    /// One actor per line: `<seq> <frame> <track> <x> <y> <w> <h> <actions> <social-id> <social-activity> <global-activity>`.
    JrdbPar { width: f64, height: f64 },
    /// Versioned header followed by one JSON record per line.
    Native,
}

impl FromStr for AnnotationFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "volleyball" | "volleyball-style" => Ok(Self::Volleyball { width: 1280.0, height: 720.0 }),
            "jrdbpar" | "jrdbpar-style" => Ok(Self::JrdbPar { width: 3760.0, height: 480.0 }),
            "native" => Ok(Self::Native),
            other => Err(Error::config(format!("unknown annotation format {other:?}"))),
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn data_err(line: usize, message: impl std::fmt::Display) -> Error {
    Error::data(format!("line {line}: {message}"))
}

fn number(tok: &str, line: usize, what: &str) -> Result<f64> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| parse_err(line, format!("{what}: expected a number, got {tok:?}")))
}

fn pixel_box(xywh: [f64; 4], width: f64, height: f64, line: usize) -> Result<[f64; 4]> {
    let [x, y, w, h] = xywh;
    let b = [(x + w / 2.0) / width, (y + h / 2.0) / height, w / width, h / height];
    check_box(&b).map_err(|m| data_err(line, m))?;
    Ok(b)
}

fn action(labels: &LabelSpace, name: &str, line: usize) -> Result<usize> {
    labels.action_index(name).ok_or_else(|| data_err(line, format!("unknown action label {name:?}")))
}

fn group(labels: &LabelSpace, name: &str, line: usize) -> Result<usize> {
    labels.group_index(name).ok_or_else(|| data_err(line, format!("unknown group label {name:?}")))
}

fn parse_volleyball(text: &str, width: f64, height: f64, labels: &LabelSpace, prefix: &str) -> Result<Vec<SceneAnnotation>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() < 2 || !(toks.len() - 2).is_multiple_of(5) {
            return Err(parse_err(line, format!("expected `<frame>.jpg <group>` then 5 fields per actor, got {} fields", toks.len())));
        }
        let frame = toks[0].strip_suffix(".jpg").ok_or_else(|| parse_err(line, format!("frame {:?} lacks .jpg", toks[0])))?;
        if frame.is_empty() || !frame.chars().all(|c| c.is_ascii_digit()) {
            return Err(parse_err(line, format!("frame id {frame:?} is not numeric")));
        }
        let group_activity = group(labels, toks[1], line)?;
        let mut actors = Vec::new();
        for (k, f) in toks[2..].chunks(5).enumerate() {
            let xywh = [number(f[0], line, "x")?, number(f[1], line, "y")?, number(f[2], line, "w")?, number(f[3], line, "h")?];
            actors.push(ActorAnnotation {
                track_id: k as u32,
                tube: vec![pixel_box(xywh, width, height, line)?],
                actions: vec![action(labels, f[4], line)?],
            });
        }
        let clip_id = if prefix.is_empty() { frame.to_string() } else { format!("{prefix}/{frame}") };
        out.push(SceneAnnotation { clip_id, keyframe: 0, actors, group_activity, social_groups: Vec::new(), weak: false });
    }
    Ok(out)
}

fn parse_jrdbpar(text: &str, width: f64, height: f64, labels: &LabelSpace) -> Result<Vec<SceneAnnotation>> {
    let mut out: Vec<SceneAnnotation> = Vec::new();
    let mut social_ids: Vec<Vec<u32>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 11 {
            return Err(parse_err(line, format!("expected 11 fields, got {}", toks.len())));
        }
        let int = |tok: &str, what: &str| tok.parse::<u64>().map_err(|_| parse_err(line, format!("{what}: expected an integer, got {tok:?}")));
        let frame = int(toks[1], "frame")?;
        if frame % JRDB_KEYFRAME_STRIDE != 0 {
            return Err(data_err(line, format!("frame {frame} is not a keyframe (every {JRDB_KEYFRAME_STRIDE})")));
        }
        let track = int(toks[2], "track")? as u32;
        let xywh = [number(toks[3], line, "x")?, number(toks[4], line, "y")?, number(toks[5], line, "w")?, number(toks[6], line, "h")?];
        let tube = vec![pixel_box(xywh, width, height, line)?];
        let actions =
            toks[7].split(',').filter(|s| !s.is_empty()).map(|a| action(labels, a, line)).collect::<Result<Vec<_>>>()?;
        let social = int(toks[8], "social group")? as u32;
        let social_activity = group(labels, toks[9], line)?;
        let global = group(labels, toks[10], line)?;

        let clip_id = format!("{}/{frame:06}", toks[0]);
        let pos = match out.iter().position(|s| s.clip_id == clip_id) {
            Some(p) => p,
            None => {
                out.push(SceneAnnotation {
                    clip_id,
                    keyframe: 0,
                    actors: Vec::new(),
                    group_activity: global,
                    social_groups: Vec::new(),
                    weak: false,
                });
                social_ids.push(Vec::new());
                out.len() - 1
            }
        };
        let scene = &mut out[pos];
        if scene.group_activity != global {
            return Err(data_err(line, "global activity disagrees with earlier lines of the same keyframe"));
        }
        if scene.actors.iter().any(|a| a.track_id == track) {
            return Err(data_err(line, format!("track {track} repeated within a keyframe")));
        }
        scene.actors.push(ActorAnnotation { track_id: track, tube, actions });
        match social_ids[pos].iter().position(|&s| s == social) {
            Some(g) => {
                if scene.social_groups[g].activity != social_activity {
                    return Err(data_err(line, format!("social group {social} has conflicting activities")));
                }
                scene.social_groups[g].members.push(track);
            }
            None => {
                social_ids[pos].push(social);
                scene.social_groups.push(SocialGroup { members: vec![track], activity: social_activity });
            }
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeActor {
    track_id: u32,
    actions: Vec<String>,
    tube: Vec<[f64; 4]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeGroup {
    members: Vec<u32>,
    activity: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NativeRecord {
    clip_id: String,
    keyframe: usize,
    group: String,
    actors: Vec<NativeActor>,
    #[serde(default)]
    social_groups: Vec<NativeGroup>,
    #[serde(default)]
    weak: bool,
}

fn parse_native(text: &str, labels: &LabelSpace) -> Result<Vec<SceneAnnotation>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        None => return Ok(Vec::new()),
        Some((_, h)) if h.trim() == NATIVE_HEADER => {}
        Some((_, h)) => return Err(parse_err(1, format!("expected header {NATIVE_HEADER:?}, got {h:?}"))),
    }
    let mut out = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: NativeRecord = serde_json::from_str(raw).map_err(|e| parse_err(line, e.to_string()))?;
        let actors = rec
            .actors
            .into_iter()
            .map(|a| {
                for b in &a.tube {
                    check_box(b).map_err(|m| data_err(line, m))?;
                }
                let actions = a.actions.iter().map(|n| action(labels, n, line)).collect::<Result<Vec<_>>>()?;
                Ok(ActorAnnotation { track_id: a.track_id, tube: a.tube, actions })
            })
            .collect::<Result<Vec<_>>>()?;
        let social_groups = rec
            .social_groups
            .into_iter()
            .map(|g| Ok(SocialGroup { members: g.members, activity: group(labels, &g.activity, line)? }))
            .collect::<Result<Vec<_>>>()?;
        let scene = SceneAnnotation {
            clip_id: rec.clip_id,
            keyframe: rec.keyframe,
            actors,
            group_activity: group(labels, &rec.group, line)?,
            social_groups,
            weak: rec.weak,
        };
        scene.validate(labels).map_err(|e| data_err(line, e))?;
        out.push(scene);
    }
    Ok(out)
}

/// Parses annotation text. `clip_prefix` namespaces volleyball-style frame ids.
pub fn parse_annotations(
    text: &str,
    format: AnnotationFormat,
    labels: &LabelSpace,
    clip_prefix: &str,
) -> Result<Vec<SceneAnnotation>> {
    match format {
        AnnotationFormat::Volleyball { width, height } => parse_volleyball(text, width, height, labels, clip_prefix),
        AnnotationFormat::JrdbPar { width, height } => parse_jrdbpar(text, width, height, labels),
        AnnotationFormat::Native => parse_native(text, labels),
    }
}

/// Loads a file; volleyball-style clip ids are prefixed with the parent
/// directory name (the video id in that layout).
pub fn load_annotations(path: &Path, format: AnnotationFormat, labels: &LabelSpace) -> Result<Vec<SceneAnnotation>> {
    let text = std::fs::read_to_string(path)?;
    let prefix = path.parent().and_then(|p| p.file_name()).and_then(|n| n.to_str()).unwrap_or("");
    parse_annotations(&text, format, labels, prefix)
}

pub fn write_native<W: Write>(mut w: W, annotations: &[SceneAnnotation], labels: &LabelSpace) -> Result<()> {
    writeln!(w, "{NATIVE_HEADER}")?;
    for a in annotations {
        a.validate(labels)?;
        let rec = NativeRecord {
            clip_id: a.clip_id.clone(),
            keyframe: a.keyframe,
            group: labels.groups[a.group_activity].clone(),
            actors: a
                .actors
                .iter()
                .map(|x| NativeActor {
                    track_id: x.track_id,
                    actions: x.actions.iter().map(|&i| labels.actions[i].clone()).collect(),
                    tube: x.tube.clone(),
                })
                .collect(),
            social_groups: a
                .social_groups
                .iter()
                .map(|g| NativeGroup { members: g.members.clone(), activity: labels.groups[g.activity].clone() })
                .collect(),
            weak: a.weak,
        };
        writeln!(w, "{}", serde_json::to_string(&rec).expect("record serializes"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volleyball_pixel_box() {
        let labels = LabelSpace::volleyball();
        let fmt = AnnotationFormat::from_str("volleyball").unwrap();
        let got = parse_annotations("48075.jpg r_set 100 200 50 80 setting\n", fmt, &labels, "7").unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].clip_id, "7/48075");
        let b = got[0].actors[0].tube[0];
        assert_eq!(b, [125.0 / 1280.0, 240.0 / 720.0, 50.0 / 1280.0, 80.0 / 720.0]);
        assert_eq!(got[0].actors[0].actions, vec![1]);
        assert_eq!(got[0].group_activity, 0);
    }

    #[test]
    fn empty_file_is_empty_list() {
        let labels = LabelSpace::volleyball();
        for fmt in ["volleyball", "jrdbpar", "native"] {
            assert!(parse_annotations("", fmt.parse().unwrap(), &labels, "").unwrap().is_empty());
        }
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let labels = LabelSpace::volleyball();
        let fmt = AnnotationFormat::from_str("volleyball").unwrap();
        let err = parse_annotations("1.jpg r_set 1 2 3 4 setting\n2.jpg r_set 1 2 x 4 setting\n", fmt, &labels, "").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_annotations("\n1.jpg r_set 1270 2 30 4 setting\n", fmt, &labels, "").unwrap_err();
        assert!(matches!(&err, Error::Data(m) if m.starts_with("line 2:")), "{err}");
    }

    #[test]
    fn jrdbpar_groups_by_keyframe() {
        let labels = LabelSpace::new(
            vec!["walking".into(), "talking".into(), "standing".into()],
            vec!["walk".into(), "chat".into(), "commute".into()],
        )
        .unwrap();
        let text = "seq-a 15 1 0 0 100 200 walking,talking 0 chat commute\n\
                    seq-a 15 2 300 0 100 200 walking 0 chat commute\n\
                    seq-a 15 3 600 0 100 200 standing 1 walk commute\n\
                    seq-a 30 1 10 0 100 200 walking 0 walk commute\n";
        let fmt = AnnotationFormat::from_str("jrdbpar").unwrap();
        let got = parse_annotations(text, fmt, &labels, "").unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].clip_id, "seq-a/000015");
        assert_eq!(got[0].actors.len(), 3);
        assert_eq!(got[0].actors[0].actions, vec![0, 1]);
        assert_eq!(got[0].social_groups, vec![SocialGroup { members: vec![1, 2], activity: 1 }, SocialGroup { members: vec![3], activity: 0 }]);
        assert!(got.iter().all(|s| s.validate(&labels).is_ok()));
        let bad = parse_annotations("seq-a 16 1 0 0 100 200 walking 0 chat commute\n", fmt, &labels, "").unwrap_err();
        assert!(matches!(&bad, Error::Data(m) if m.contains("keyframe")));
    }
}
