use std::io::BufReader;

use proptest::prelude::*;
use react_core::metrics::{
    group_activity_vote, hierarchical_infer, mca, mpca, multilabel_prf, read_predictions, recall_at_k, write_predictions,
    ActorPrediction, LabelHierarchy, MergeMap, Partition, PredictionRecord, OTHER,
};
use react_core::tensor::Tensor;
use react_core::Error;

// Ten clips over six synthetic group classes (three actions per side).
const GROUP_LABELS: [usize; 10] = [0, 0, 1, 1, 2, 2, 3, 3, 4, 5];
const GROUP_PREDS: [usize; 10] = [0, 1, 1, 1, 2, 0, 3, 4, 4, 2];

fn sets(xs: &[&[usize]]) -> Vec<Vec<usize>> {
    xs.iter().map(|s| s.to_vec()).collect()
}

#[test]
fn ten_sample_fixture_golden_values() {
    assert!((mca(&GROUP_PREDS, &GROUP_LABELS, None).unwrap() - 0.6).abs() < 1e-12);
    assert!((mpca(&GROUP_PREDS, &GROUP_LABELS, None).unwrap() - 3.5 / 6.0).abs() < 1e-12);

    let merge = MergeMap::synthetic(3);
    assert!((mca(&GROUP_PREDS, &GROUP_LABELS, Some(&merge)).unwrap() - 0.8).abs() < 1e-12);
    assert!((mpca(&GROUP_PREDS, &GROUP_LABELS, Some(&merge)).unwrap() - 0.625).abs() < 1e-12);

    let preds = sets(&[&[0], &[0, 1], &[], &[2], &[0, 1, 2], &[1], &[0], &[1, 2], &[2], &[0, 2]]);
    let gts = sets(&[&[0], &[0], &[1], &[1, 2], &[0, 1, 2], &[0], &[], &[2], &[2], &[1, 2]]);
    let prf = multilabel_prf(&preds, &gts).unwrap();
    assert!((prf.precision - 5.5 / 9.0).abs() < 1e-12);
    assert!((prf.recall - 6.0 / 9.0).abs() < 1e-12);
    assert!((prf.f1 - 5.5 / 9.0).abs() < 1e-12);
    assert_eq!(prf.skipped, 1);

    // Candidate j sits at 10·j degrees; every query points at 0°, so query i
    // finds its target at rank i + 1.
    let cands: Vec<Vec<f64>> = (0..10).map(|j| (j as f64 * 10.0).to_radians()).map(|a| vec![a.cos(), a.sin()]).collect();
    let cands = Tensor::from_rows(&cands).unwrap();
    let queries = Tensor::from_rows(&vec![vec![1.0, 0.0]; 10]).unwrap();
    let gt: Vec<usize> = (0..10).collect();
    assert_eq!(recall_at_k(&queries, &cands, &gt, 1).unwrap(), 0.1);
    assert_eq!(recall_at_k(&queries, &cands, &gt, 5).unwrap(), 0.5);
    assert_eq!(recall_at_k(&queries, &cands, &gt, 10).unwrap(), 1.0);
    assert!(matches!(recall_at_k(&queries, &cands, &gt, 0), Err(Error::Config(_))));
    assert!(matches!(recall_at_k(&queries, &cands, &gt, 11), Err(Error::Config(_))));
}

#[test]
fn merge_maps() {
    let m = MergeMap::synthetic(3);
    let merged: Vec<usize> = (0..6).map(|g| m.apply(g).unwrap()).collect();
    assert_eq!(merged, vec![0, 0, 1, 2, 2, 3]);
    assert!(matches!(m.apply(6), Err(Error::Data(_))));

    let v = MergeMap::volleyball();
    // r_set and r-pass merge, as do l_set and l-pass; the sides never do
    assert_eq!(v.apply(0).unwrap(), v.apply(2).unwrap());
    assert_eq!(v.apply(4).unwrap(), v.apply(6).unwrap());
    assert_ne!(v.apply(0).unwrap(), v.apply(4).unwrap());
    assert_eq!((0..8).map(|g| v.apply(g).unwrap()).max(), Some(5));
}

fn jrdb_like() -> LabelHierarchy {
    LabelHierarchy::new(vec![
        Partition { labels: vec!["conversation".into(), "queueing".into(), OTHER.into()], multi_label: false },
        Partition { labels: vec!["walking".into(), "sitting".into(), OTHER.into()], multi_label: true },
        Partition { labels: vec!["standing".into(), "looking".into()], multi_label: false },
    ])
    .unwrap()
}

#[test]
fn hierarchical_inference_fixtures() {
    let h = jrdb_like();
    let cases: [(&[&[f64]], &str); 4] = [
        (&[&[2.0, 0.0, 0.0], &[0.0, 0.0, 0.0], &[0.0, 0.0]], "conversation"),
        (&[&[0.0, 0.0, 3.0], &[1.0, 4.0, 0.0], &[0.0, 0.0]], "sitting"),
        (&[&[0.0, 0.0, 3.0], &[-1.0, -2.0, 0.5], &[0.2, 0.1]], "standing"),
        (&[&[0.0, 0.0, 3.0], &[-1.0, -2.0, 0.5], &[0.1, 0.2]], "looking"),
    ];
    for (logits, expected) in cases {
        let logits: Vec<Vec<f64>> = logits.iter().map(|z| z.to_vec()).collect();
        assert_eq!(hierarchical_infer(&logits, &h).unwrap().0, expected);
    }
    // multi-label partitions report the sigmoid, single-label ones the softmax
    let (_, p) = hierarchical_infer(&[vec![0.0, 0.0, 3.0], vec![1.0, 4.0, 0.0], vec![0.0, 0.0]], &h).unwrap();
    assert!((p - 1.0 / (1.0 + (-4.0f64).exp())).abs() < 1e-12);
    let (_, p) = hierarchical_infer(&[vec![2.0, 0.0, 0.0], vec![0.0; 3], vec![0.0; 2]], &h).unwrap();
    assert!((p - 2f64.exp() / (2f64.exp() + 2.0)).abs() < 1e-12);
}

#[test]
fn vote_fixtures() {
    let table = [0, 0, 1, 2];
    assert_eq!(group_activity_vote(&sets(&[&[3], &[3], &[2]]), &table).unwrap(), 2);
    // ties go to the lowest action index
    assert_eq!(group_activity_vote(&sets(&[&[2, 3], &[3, 2]]), &table).unwrap(), 1);
    assert_eq!(group_activity_vote(&sets(&[&[1], &[], &[0]]), &table).unwrap(), 0);
    assert!(matches!(group_activity_vote(&sets(&[&[], &[]]), &table), Err(Error::Contract(_))));
    assert!(matches!(group_activity_vote(&sets(&[&[9]]), &table), Err(Error::Data(_))));
}

#[test]
fn prediction_records_round_trip() {
    let records = vec![
        PredictionRecord {
            clip_id: "clip-0".into(),
            group: "left-spiking".into(),
            group_confidence: 0.75,
            actors: vec![ActorPrediction { labels: vec!["spiking".into()], confidences: vec![0.9], keyframe_box: [0.3, 0.4, 0.1, 0.2] }],
        },
        PredictionRecord { clip_id: "clip-1".into(), group: "right-blocking".into(), group_confidence: 0.5, actors: vec![] },
    ];
    let mut buf = Vec::new();
    write_predictions(&mut buf, &records).unwrap();
    assert_eq!(read_predictions(BufReader::new(&buf[..])).unwrap(), records);

    let bad = "#react-predictions v1\n{\"clip_id\":\"x\",\"group\":\"g\",\"group_confidence\":1.5,\"actors\":[]}\n";
    assert!(matches!(read_predictions(BufReader::new(bad.as_bytes())), Err(Error::Data(_))));
    assert!(matches!(read_predictions(BufReader::new("nope\n".as_bytes())), Err(Error::Parse { line: 1, .. })));
}

proptest! {
    #[test]
    fn merging_never_lowers_accuracy(pairs in proptest::collection::vec((0usize..6, 0usize..6), 1..40)) {
        let (p, l): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let plain = mca(&p, &l, None).unwrap();
        let merged = mca(&p, &l, Some(&MergeMap::synthetic(3))).unwrap();
        prop_assert!((0.0..=1.0).contains(&plain));
        prop_assert!(merged >= plain);
        let per_class = mpca(&p, &l, None).unwrap();
        prop_assert!((0.0..=1.0).contains(&per_class));
    }

    #[test]
    fn prf_is_bounded(preds in proptest::collection::vec(proptest::collection::vec(0usize..5, 0..4), 1..10)) {
        let gts: Vec<Vec<usize>> = preds.iter().map(|p| p.iter().map(|a| (a + 1) % 5).collect()).collect();
        let r = multilabel_prf(&preds, &gts).unwrap();
        for v in [r.precision, r.recall, r.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let exact = multilabel_prf(&gts, &gts).unwrap();
        if exact.skipped < gts.len() {
            prop_assert_eq!((exact.precision, exact.recall, exact.f1), (1.0, 1.0, 1.0));
        }
    }
}
