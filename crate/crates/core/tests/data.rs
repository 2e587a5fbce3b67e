use dum_core::data::{
    corrupt, load_idx, make_blobs, make_two_moons, read_idx_images, read_idx_labels, rotate_images, shift_augment,
    write_idx, Corruption, Dataset, ShiftKind, ShiftSchedule,
};
use dum_core::{Error, Matrix, Rng};
use proptest::prelude::*;

fn images(rng: &mut Rng, n: usize, side: usize) -> Dataset {
    // byte-quantized pixels so an IDX round trip is exact
    let x = Matrix::from_fn(n, side * side, |_, _| rng.index(256) as f64 / 255.0);
    let labels = (0..n).map(|i| i % 10).collect();
    Dataset::new(x, labels, 10).unwrap()
}

#[test]
fn idx_round_trips_plain_and_gzipped() {
    let mut rng = Rng::new(1);
    let data = images(&mut rng, 25, 6);
    let dir = tempfile::tempdir().unwrap();
    for (img, lab) in [("i.idx", "l.idx"), ("i.idx.gz", "l.idx.gz")] {
        let (ip, lp) = (dir.path().join(img), dir.path().join(lab));
        write_idx(&ip, &lp, &data, 6, 6).unwrap();
        let back = load_idx(&ip, &lp).unwrap();
        assert_eq!(back.inputs, data.inputs);
        assert_eq!(back.labels, data.labels);
        assert_eq!(back.class_count, 10);
    }
    assert!(write_idx(&dir.path().join("a"), &dir.path().join("b"), &data, 5, 6).is_err());
}

#[test]
fn malformed_idx_reports_offsets() {
    let mut bytes = 0x0803u32.to_be_bytes().to_vec();
    for v in [1u32, 2, 2] {
        bytes.extend(v.to_be_bytes());
    }
    bytes.extend([0u8, 255, 128]);
    match read_idx_images(&bytes) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 19),
        other => panic!("expected a format error, got {other:?}"),
    }
    bytes.push(7);
    let (x, r, c) = read_idx_images(&bytes).unwrap();
    assert_eq!((x.rows(), r, c), (1, 2, 2));
    assert_eq!(x.row(0), &[0.0, 1.0, 128.0 / 255.0, 7.0 / 255.0]);
    assert!(matches!(read_idx_images(&[0, 0, 8, 1]), Err(Error::Format { offset: 0, .. })));
    assert!(matches!(read_idx_labels(&[0, 0, 8, 1, 0, 0]), Err(Error::Format { offset: 4, .. })));
}

#[test]
fn severity_zero_is_the_identity() {
    let mut rng = Rng::new(2);
    let data = images(&mut rng, 10, 8);
    for schedule in [
        ShiftSchedule::rotation(),
        ShiftSchedule::gaussian_noise(),
        ShiftSchedule::brightness(),
        ShiftSchedule::contrast(),
    ] {
        assert_eq!(schedule.apply(&data, 0, 8, &mut rng).unwrap().inputs, data.inputs, "{:?}", schedule.kind);
        assert!(schedule.apply(&data, schedule.len(), 8, &mut rng).is_err());
    }
    assert!(ShiftSchedule::new(ShiftKind::Rotation, vec![10.0, 20.0]).is_err());
    assert!(ShiftSchedule::new(ShiftKind::Brightness, vec![0.0, 2.0]).is_err());
}

fn mean_distance(a: &Dataset, b: &Dataset) -> f64 {
    a.inputs.sub(&b.inputs).unwrap().frobenius_norm() / (a.len() as f64).sqrt()
}

#[test]
fn corruption_grows_with_severity() {
    let mut rng = Rng::new(3);
    let data = images(&mut rng, 50, 8);
    for schedule in [ShiftSchedule::gaussian_noise(), ShiftSchedule::brightness(), ShiftSchedule::contrast()] {
        let d: Vec<f64> = (0..schedule.len())
            .map(|k| mean_distance(&schedule.apply(&data, k, 8, &mut Rng::new(9)).unwrap(), &data))
            .collect();
        assert!(d.windows(2).all(|w| w[1] > w[0]), "{:?}: {d:?}", schedule.kind);
    }
    let shifted = corrupt(&data, Corruption::Brightness, 0.5, &mut rng).unwrap();
    assert!(shifted.inputs.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(corrupt(&data, Corruption::Contrast, 3.0, &mut rng).is_err());
}

#[test]
fn quarter_turns_permute_pixels() {
    let mut rng = Rng::new(4);
    let data = images(&mut rng, 3, 5);
    let quarter = rotate_images(&data, 90.0, 5).unwrap();
    // every rotated pixel is an original pixel: (r, c) ← (c, side-1-r)
    for i in 0..3 {
        for r in 0..5 {
            for c in 0..5 {
                assert!((quarter.inputs.get(i, r * 5 + c) - data.inputs.get(i, c * 5 + (4 - r))).abs() < 1e-12);
            }
        }
    }
    let half = rotate_images(&data, 180.0, 5).unwrap();
    let twice = rotate_images(&quarter, 90.0, 5).unwrap();
    assert!(half.inputs.max_abs_diff(&twice.inputs) < 1e-12);
    assert!(rotate_images(&data, 360.0, 5).is_err());
    assert!(rotate_images(&data, 10.0, 4).is_err());
}

#[test]
fn shift_augmentation_adds_translated_copies() {
    let mut rng = Rng::new(5);
    let data = images(&mut rng, 4, 6);
    let aug = shift_augment(&data, 6, 2).unwrap();
    assert_eq!(aug.len(), 4 * 9);
    assert_eq!(aug.inputs.select_rows(&[0, 1, 2, 3]), data.inputs);
    assert_eq!(aug.labels[4..8], data.labels[..]);
    // the first copy moves content up one row; the last row is zero-filled
    for c in 0..6 {
        assert_eq!(aug.inputs.get(4, 5 * 6 + c), 0.0);
        assert_eq!(aug.inputs.get(4, c), data.inputs.get(0, 6 + c));
    }
}

#[test]
fn synthetic_sets_are_seeded_and_balanced() {
    let a = make_two_moons(101, 0.1, &mut Rng::new(6)).unwrap();
    let b = make_two_moons(101, 0.1, &mut Rng::new(6)).unwrap();
    assert_eq!(a.inputs, b.inputs);
    assert_eq!(a.dim(), 2);
    let ones = a.labels.iter().filter(|&&y| y == 1).count();
    assert!((50..=51).contains(&ones));
    let blobs =
        make_blobs(90, &[vec![0.0, 0.0, 0.0], vec![5.0, 5.0, 5.0], vec![-5.0, 0.0, 5.0]], 0.1, &mut Rng::new(7))
            .unwrap();
    assert_eq!(blobs.class_count, 3);
    assert!(blobs.labels.iter().enumerate().all(|(i, &y)| y == i % 3));
    assert!(make_blobs(10, &[], 1.0, &mut Rng::new(0)).is_err());
}

proptest! {
    #[test]
    fn idx_bytes_round_trip(n in 1usize..6, side in 1usize..6, seed in any::<u64>()) {
        let data = images(&mut Rng::new(seed), n, side);
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&ip, &lp, &data, side, side).unwrap();
        let (x, r, c) = read_idx_images(&std::fs::read(&ip).unwrap()).unwrap();
        prop_assert_eq!((r, c), (side, side));
        prop_assert_eq!(x, data.inputs);
        prop_assert_eq!(read_idx_labels(&std::fs::read(&lp).unwrap()).unwrap(), data.labels);
    }

    #[test]
    fn rotations_stay_in_range(deg in 0.0..360.0f64, seed in any::<u64>()) {
        let data = images(&mut Rng::new(seed), 2, 7);
        let rot = rotate_images(&data, deg, 7).unwrap();
        prop_assert!(rot.inputs.data().iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
    }
}
