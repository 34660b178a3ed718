use std::path::PathBuf;

use react_core::data::{
    generate_corpus, load_annotations, parse_annotations, read_corpus, weak_supervision_view, write_corpus, write_native,
    AnnotationFormat, LabelSpace, NATIVE_HEADER,
};
use react_core::par::Exec;
use react_core::verify::toy_config;
use react_core::{Error, ModelConfig};

/// Smallest raster the scene generator accepts.
fn small_config() -> ModelConfig {
    let mut cfg = toy_config();
    cfg.video.height = 8;
    cfg.video.width = 8;
    cfg
}

fn errors_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/errors")
}

fn labels_for(format: &str) -> LabelSpace {
    match format {
        "volleyball" => LabelSpace::volleyball(),
        "jrdbpar" => LabelSpace::new(
            vec!["walking".into(), "talking".into(), "standing".into()],
            vec!["walk".into(), "chat".into(), "commute".into()],
        )
        .unwrap(),
        _ => LabelSpace::synthetic(3).unwrap(),
    }
}

/// Line number carried by a loader diagnostic, if any.
fn reported_line(err: &Error) -> Option<usize> {
    match err {
        Error::Parse { line, .. } => Some(*line),
        Error::Data(m) => m.strip_prefix("line ")?.split(':').next()?.parse().ok(),
        _ => None,
    }
}

/// Fixture names follow `<format>-<line>-<description>.txt`.
#[test]
fn every_error_fixture_is_rejected_with_its_line() {
    let mut seen = 0;
    for entry in std::fs::read_dir(errors_dir()).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_stem().unwrap().to_str().unwrap().to_string();
        let mut parts = name.splitn(3, '-');
        let format = parts.next().unwrap();
        let line: usize = parts.next().unwrap().parse().unwrap();
        let err = load_annotations(&path, format.parse().unwrap(), &labels_for(format))
            .expect_err(&format!("{name} should be rejected"));
        assert_eq!(reported_line(&err), Some(line), "{name}: {err}");
        seen += 1;
    }
    assert!(seen >= 20, "error corpus has only {seen} fixtures");
}

#[test]
fn number_and_box_problems_map_to_distinct_errors() {
    let dir = errors_dir();
    let vb = LabelSpace::volleyball();
    let fmt: AnnotationFormat = "volleyball".parse().unwrap();
    let parse = load_annotations(&dir.join("volleyball-2-bad-number.txt"), fmt, &vb).unwrap_err();
    assert!(matches!(parse, Error::Parse { line: 2, .. }));
    let data = load_annotations(&dir.join("volleyball-2-box-outside.txt"), fmt, &vb).unwrap_err();
    assert!(matches!(data, Error::Data(_)));
}

#[test]
fn unknown_format_name_is_a_config_error() {
    assert!(matches!("csv".parse::<AnnotationFormat>(), Err(Error::Config(_))));
}

#[test]
fn volleyball_clip_ids_take_the_directory_name() {
    let dir = tempfile::tempdir().unwrap();
    let video = dir.path().join("41");
    std::fs::create_dir(&video).unwrap();
    let path = video.join("annotations.txt");
    std::fs::write(&path, "100.jpg l-pass 0 0 64 72 digging 640 360 64 72 waiting\n").unwrap();
    let got = load_annotations(&path, "volleyball".parse().unwrap(), &LabelSpace::volleyball()).unwrap();
    assert_eq!(got[0].clip_id, "41/100");
    assert_eq!(got[0].actors.len(), 2);
    assert_eq!(got[0].actors[1].tube[0], [0.525, 0.55, 0.05, 0.1]);
}

#[test]
fn native_round_trip_is_exact_and_stable() {
    let cfg = small_config();
    let labels = LabelSpace::synthetic(cfg.model.num_actions).unwrap();
    let mut annotations: Vec<_> = generate_corpus(&cfg, &labels, Exec::Sequential).unwrap().into_iter().map(|s| s.annotation).collect();
    annotations[0] = weak_supervision_view(&annotations[0]);

    let mut text = Vec::new();
    write_native(&mut text, &annotations, &labels).unwrap();
    let text = String::from_utf8(text).unwrap();
    assert_eq!(text.lines().next(), Some(NATIVE_HEADER));
    let back = parse_annotations(&text, AnnotationFormat::Native, &labels, "").unwrap();
    assert_eq!(back, annotations);

    let mut again = Vec::new();
    write_native(&mut again, &back, &labels).unwrap();
    assert_eq!(again, text.into_bytes());
}

#[test]
fn write_native_refuses_invalid_annotations() {
    let cfg = small_config();
    let labels = LabelSpace::synthetic(cfg.model.num_actions).unwrap();
    let mut scene = generate_corpus(&cfg, &labels, Exec::Sequential).unwrap().remove(0).annotation;
    scene.group_activity = labels.groups.len();
    assert!(matches!(write_native(Vec::new(), &[scene], &labels), Err(Error::Data(_))));
}

#[test]
fn corpus_round_trip_preserves_clips_and_annotations() {
    let cfg = small_config();
    let labels = LabelSpace::synthetic(cfg.model.num_actions).unwrap();
    let scenes = generate_corpus(&cfg, &labels, Exec::Sequential).unwrap();
    let clips: Vec<_> = scenes.iter().map(|s| s.clip.clone()).collect();
    let annotations: Vec<_> = scenes.iter().map(|s| s.annotation.clone()).collect();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &clips, &annotations, &labels).unwrap();

    let samples = read_corpus(dir.path(), &labels, cfg.model.frames, clips[0].frame_rate).unwrap();
    assert_eq!(samples.len(), scenes.len());
    for (s, g) in samples.iter().zip(&scenes) {
        assert_eq!(s.annotation, g.annotation);
        assert_eq!(s.clip.num_frames(), cfg.model.frames);
        assert_eq!(s.clip.frames.shape()[1..], g.clip.frames.shape()[1..]);
    }

    assert!(matches!(write_corpus(dir.path(), &clips[..1], &annotations, &labels), Err(Error::Data(_))));
}
