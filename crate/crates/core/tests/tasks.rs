use std::collections::BTreeSet;
use std::sync::Arc;

use metasharp::autodiff::Tensor;
use metasharp::nn::{LabeledBatch, Targets};
use metasharp::tasks::{
    blob_classification_task, encode_idx, episode_hash, episodes_from_dataset, load_idx, parse_idx, sinusoid_task,
    write_idx, BlobFamily, Dataset, EpisodeSpec, IdxArray, IdxType, SinusoidFamily, TaskDescriptor,
};
use metasharp::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn classes(b: &LabeledBatch) -> &[usize] {
    match &b.targets {
        Targets::Classes(c) => c,
        Targets::Real(_) => panic!("expected class targets"),
    }
}

#[test]
fn sinusoid_basics() {
    assert_eq!(SinusoidFamily::value(1.0, 0.0, 0.0), 0.0);
    let a = sinusoid_task::<f64>(17);
    assert_eq!(a, sinusoid_task::<f64>(17));
    assert_ne!(a, sinusoid_task::<f64>(18));
    assert_eq!(a.support.inputs.shape(), &[10, 1]);
    let TaskDescriptor::Sinusoid { amplitude, phase } = a.descriptor else {
        panic!()
    };
    let Targets::Real(y) = &a.query.targets else { panic!() };
    for (x, y) in a.query.inputs.data().iter().zip(y.data()) {
        assert!((y - amplitude * (x + phase).sin()).abs() <= 1e-12);
    }
}

#[test]
fn sinusoid_outputs_stay_within_amplitude_range() {
    let fam = SinusoidFamily::default();
    let mut n = 0;
    let mut seed = 0;
    while n < 10_000 {
        let t = fam.task::<f64>(seed);
        seed += 1;
        for b in [&t.support, &t.query] {
            let Targets::Real(y) = &b.targets else { panic!() };
            for v in y.data() {
                assert!(v.abs() <= fam.amplitude.1);
                n += 1;
            }
            assert!(b
                .inputs
                .data()
                .iter()
                .all(|x| (fam.x_range.0..=fam.x_range.1).contains(x)));
        }
    }
}

#[test]
fn well_separated_blobs_are_linearly_separable() {
    for seed in 0..20 {
        let spec = EpisodeSpec::new(2, 5, 50, seed).unwrap();
        let t = blob_classification_task::<f64>(&spec, 3, 100.0).unwrap();
        let TaskDescriptor::Blobs { centers } = &t.descriptor else {
            panic!()
        };
        // equal-covariance LDA on the known centers
        let w: Vec<f64> = centers[1].iter().zip(&centers[0]).map(|(a, b)| a - b).collect();
        let mid: Vec<f64> = centers[1].iter().zip(&centers[0]).map(|(a, b)| 0.5 * (a + b)).collect();
        let labels = classes(&t.query);
        for (i, &label) in labels.iter().enumerate() {
            let s: f64 = t
                .query
                .inputs
                .row(i)
                .iter()
                .zip(&w)
                .zip(&mid)
                .map(|((x, w), m)| w * (x - m))
                .sum();
            assert_eq!(usize::from(s > 0.0), label, "seed {seed} row {i}");
        }
    }
}

#[test]
fn blob_episodes_are_balanced_and_deterministic() {
    let spec = EpisodeSpec::new(5, 3, 4, 9).unwrap();
    let fam = BlobFamily::new(8, 3.0);
    let t = fam.episode::<f64>(&spec).unwrap();
    assert_eq!(t, fam.episode::<f64>(&spec).unwrap());
    for c in 0..5 {
        assert_eq!(classes(&t.support).iter().filter(|&&l| l == c).count(), 3);
        assert_eq!(classes(&t.query).iter().filter(|&&l| l == c).count(), 4);
    }
    let TaskDescriptor::Blobs { centers } = &t.descriptor else {
        panic!()
    };
    for i in 0..5 {
        for j in i + 1..5 {
            let d: f64 = centers[i]
                .iter()
                .zip(&centers[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(d >= 3.0);
        }
    }
}

#[test]
fn impossible_packing_is_reported() {
    let mut fam = BlobFamily::new(1, 10.0);
    fam.half_width = Some(1.0);
    fam.max_attempts = 100;
    let err = fam.episode::<f64>(&EpisodeSpec::new(3, 1, 1, 0).unwrap()).unwrap_err();
    assert!(matches!(err, Error::Infeasible(_)));
    assert!(BlobFamily::new(2, 0.0)
        .episode::<f64>(&EpisodeSpec::new(2, 1, 1, 0).unwrap())
        .is_err());
}

#[test]
fn episode_spec_bounds() {
    assert!(EpisodeSpec::new(1, 1, 1, 0).is_err());
    assert!(EpisodeSpec::new(2, 0, 1, 0).is_err());
    assert!(EpisodeSpec::new(2, 1, 0, 0).is_err());
    assert!(EpisodeSpec::new(2, 1, 1, 0).is_ok());
}

/// Each row's single feature is its row index, so rows can be identified
/// from episode contents.
fn indexed_dataset(per_class: &[usize]) -> Arc<Dataset> {
    let mut labels = vec![];
    for (c, &n) in per_class.iter().enumerate() {
        labels.extend(std::iter::repeat_n(c, n));
    }
    let feats: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
    Arc::new(Dataset::new(Tensor::matrix(labels.len(), 1, feats).unwrap(), labels).unwrap())
}

fn rows(b: &LabeledBatch) -> Vec<usize> {
    b.inputs.data().iter().map(|&v| v as usize).collect()
}

#[test]
fn support_and_query_never_overlap() {
    let data = indexed_dataset(&[12, 9, 15, 7, 10, 11]);
    let stream = episodes_from_dataset::<f64>(data.clone(), EpisodeSpec::new(4, 2, 3, 77).unwrap()).unwrap();
    for i in 0..1000 {
        let e = stream.episode(i);
        let s: BTreeSet<usize> = rows(&e.support).into_iter().collect();
        let q: BTreeSet<usize> = rows(&e.query).into_iter().collect();
        assert_eq!(s.len(), 8);
        assert_eq!(q.len(), 12);
        assert!(s.is_disjoint(&q), "episode {i}");
        let TaskDescriptor::Dataset { classes: picked } = &e.descriptor else {
            panic!()
        };
        assert_eq!(picked.iter().collect::<BTreeSet<_>>().len(), 4);
        // remapped labels point back at the original classes
        for (r, &l) in rows(&e.support).iter().zip(classes(&e.support)) {
            assert_eq!(data.labels[*r], picked[l]);
        }
        assert_eq!(
            classes(&e.query).iter().copied().collect::<BTreeSet<_>>(),
            (0..4).collect()
        );
    }
}

#[test]
fn full_episode_partitions_the_dataset() {
    let data = indexed_dataset(&[3, 3, 3]);
    let stream = episodes_from_dataset::<f64>(data, EpisodeSpec::new(3, 1, 2, 1).unwrap()).unwrap();
    let e = stream.episode(0);
    let mut all: Vec<usize> = rows(&e.support);
    all.extend(rows(&e.query));
    all.sort();
    assert_eq!(all, (0..9).collect::<Vec<_>>());
}

#[test]
fn episodes_depend_only_on_seed_and_index() {
    let data = indexed_dataset(&[6, 6, 6, 6]);
    let spec = EpisodeSpec::new(2, 1, 2, 5).unwrap();
    let a = episodes_from_dataset::<f64>(data.clone(), spec).unwrap();
    let b: Vec<_> = episodes_from_dataset::<f64>(data.clone(), spec)
        .unwrap()
        .take(5)
        .collect();
    for (i, e) in b.iter().enumerate() {
        assert_eq!(episode_hash(e), episode_hash(&a.episode(i as u64)));
    }
    let other = episodes_from_dataset::<f64>(data, spec.with_seed(6)).unwrap();
    assert!((0..5).any(|i| episode_hash(&other.episode(i)) != episode_hash(&a.episode(i))));
}

#[test]
fn short_classes_are_named() {
    let data = indexed_dataset(&[5, 2, 5]);
    let err = episodes_from_dataset::<f64>(data, EpisodeSpec::new(3, 2, 2, 0).unwrap()).unwrap_err();
    match err {
        Error::InsufficientExamples {
            class,
            available,
            required,
        } => {
            assert_eq!((class, available, required), (1, 2, 4));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn idx_files_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.idx");
    std::fs::write(&path, [0, 0, 0x08, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 255]).unwrap();
    let arr = load_idx(&path).unwrap();
    assert_eq!(arr.dims, vec![1, 1, 1]);
    assert_eq!(arr.scaled(), vec![1.0]);

    let crafted = IdxArray::new(IdxType::U8, vec![2, 3, 4], (0..24).collect()).unwrap();
    let p2 = dir.path().join("t.idx");
    write_idx(&p2, &crafted).unwrap();
    assert_eq!(load_idx(&p2).unwrap().dims, vec![2, 3, 4]);
}

#[test]
fn dataset_from_idx_pools_large_images() {
    let dir = tempfile::tempdir().unwrap();
    let (n, side) = (4usize, 28usize);
    let pixels: Vec<i64> = (0..n * side * side).map(|i| (i % 256) as i64).collect();
    let images = IdxArray::new(IdxType::U8, vec![n, side, side], pixels).unwrap();
    let labels = IdxArray::new(IdxType::U8, vec![n], vec![0, 1, 0, 1]).unwrap();
    let (ip, lp) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    write_idx(&ip, &images).unwrap();
    write_idx(&lp, &labels).unwrap();
    let ds = Dataset::from_idx(&ip, &lp).unwrap();
    assert_eq!(ds.len(), 4);
    assert!(ds.feature_dim() <= 196);
    assert!(ds.features.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

fn idx_type() -> impl Strategy<Value = IdxType> {
    prop_oneof![
        Just(IdxType::U8),
        Just(IdxType::I8),
        Just(IdxType::I16),
        Just(IdxType::I32)
    ]
}

proptest! {
    #[test]
    fn idx_round_trip(elem in idx_type(), dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let n: usize = dims.iter().product();
        let (lo, hi): (i64, i64) = match elem {
            IdxType::U8 => (0, 255),
            IdxType::I8 => (-128, 127),
            IdxType::I16 => (-32768, 32767),
            IdxType::I32 => (i32::MIN as i64, i32::MAX as i64),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<i64> = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
        let arr = IdxArray::new(elem, dims, values).unwrap();
        let bytes = encode_idx(&arr).unwrap();
        prop_assert_eq!(parse_idx(&bytes).unwrap(), arr);
    }

    #[test]
    fn idx_rejects_unknown_type_codes(code in any::<u8>()) {
        prop_assume!(IdxType::from_code(code).is_none());
        let bytes = [0, 0, code, 1, 0, 0, 0, 1, 0];
        let is_type_error = matches!(parse_idx(&bytes), Err(Error::IdxParse { offset: 2, .. }));
        prop_assert!(is_type_error);
    }

    #[test]
    fn idx_truncation_is_an_error(cut in 0usize..16) {
        let arr = IdxArray::new(IdxType::I16, vec![2, 2], vec![1, -2, 300, -400]).unwrap();
        let bytes = encode_idx(&arr).unwrap();
        prop_assume!(cut < bytes.len());
        prop_assert!(parse_idx(&bytes[..cut]).is_err());
    }

    #[test]
    fn blob_generation_is_deterministic(seed in any::<u64>(), n in 2usize..6) {
        let spec = EpisodeSpec::new(n, 2, 2, seed).unwrap();
        let a = blob_classification_task::<f64>(&spec, 4, 2.0).unwrap();
        let b = blob_classification_task::<f64>(&spec, 4, 2.0).unwrap();
        prop_assert_eq!(a, b);
    }
}
