//! Randomized invariants across modules.

use ndarray::Array2;
use proptest::prelude::*;
use sigverify::datasets::{
    decode_features, encode_features, read_manifest, split_random, test_size, write_manifest,
    Label, Manifest, SignatureSample, SplitSpec,
};
use sigverify::evalcli::{accuracy_at_threshold, max_accuracy};
use sigverify::preprocess::{
    center_on_canvas, otsu_threshold, remove_background, GrayImage, PreprocessConfig,
};

fn manifest(n: usize) -> Manifest {
    Manifest::new(
        (0..n)
            .map(|i| SignatureSample {
                path: format!("{i}.png"),
                writer_id: (i % 7) as u32,
                label: if i % 3 == 0 { Label::Forged } else { Label::Genuine },
                dataset_tag: "p".into(),
            })
            .collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn split_partitions_with_ceil_size(n in 2usize..400, f in 0.01f64..0.95, seed: u64) {
        let m = manifest(n);
        let spec = SplitSpec { test_fraction: f, seed, ..SplitSpec::default() };
        prop_assume!(test_size(n, f) < n);
        let (train, test) = split_random(&m, &spec).unwrap();
        prop_assert_eq!(test.len(), ((f * n as f64) - 1e-9).ceil() as usize);
        prop_assert_eq!(train.len() + test.len(), n);
        let mut all: Vec<String> = train.samples().iter().chain(test.samples()).map(|s| s.path.clone()).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
        let again = split_random(&m, &spec).unwrap();
        prop_assert_eq!(again, (train, test));
    }

    #[test]
    fn manifest_round_trips_arbitrary_text(
        rows in prop::collection::vec(("[^\u{0}\r]{1,20}", 0u32..1000, any::<bool>(), "[^\u{0}\r]{0,10}"), 0..20)
    ) {
        let mut seen = std::collections::HashSet::new();
        let samples: Vec<SignatureSample> = rows
            .into_iter()
            .filter(|r| seen.insert(r.0.clone()))
            .map(|(path, writer_id, forged, dataset_tag)| SignatureSample {
                path,
                writer_id,
                label: if forged { Label::Forged } else { Label::Genuine },
                dataset_tag,
            })
            .collect();
        let m = Manifest::new(samples).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_manifest(&m, &p).unwrap();
        prop_assert_eq!(read_manifest(&p).unwrap(), m);
    }

    #[test]
    fn feature_files_round_trip(rows in 0usize..12, cols in 0usize..6, seed: u32) {
        let m = Array2::from_shape_fn((rows, cols), |(i, j)| {
            f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add((i * 31 + j) as u32) & 0x7f7f_ffff) as f64
        });
        let labels: Vec<u8> = (0..rows).map(|i| (i % 2) as u8).collect();
        let (back, l) = decode_features(&encode_features(&m, &labels).unwrap()).unwrap();
        prop_assert_eq!(back, m);
        prop_assert_eq!(l, labels);
    }

    #[test]
    fn best_accuracy_dominates_half_threshold(
        data in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..60)
    ) {
        let probs: Vec<f64> = data.iter().map(|d| d.0).collect();
        let labels: Vec<u8> = data.iter().map(|d| d.1 as u8).collect();
        let (best, t) = max_accuracy(&probs, &labels).unwrap();
        prop_assert!(best >= accuracy_at_threshold(&probs, &labels, 0.5).unwrap());
        prop_assert!((0.0..=1.0).contains(&t));
    }

    #[test]
    fn background_removal_keeps_ink_and_whitens_the_rest(
        px in prop::collection::vec(any::<u8>(), 1..400)
    ) {
        let img = GrayImage::new(1, px.len(), px.clone()).unwrap();
        let t = otsu_threshold(&img);
        let out = remove_background(&img);
        for (a, b) in px.iter().zip(out.pixels()) {
            if *a <= t { prop_assert_eq!(a, b); } else { prop_assert_eq!(*b, 255); }
        }
    }

    #[test]
    fn centering_ignores_page_offset(
        ink in prop::collection::vec((0usize..12, 0usize..16, 0u8..200), 1..30),
        dy in 0usize..9,
        dx in 0usize..9,
    ) {
        let cfg = PreprocessConfig { canvas_height: 30, canvas_width: 40, out_height: 10, out_width: 10 };
        let mut a = GrayImage::filled(12, 16, 255);
        let mut b = GrayImage::filled(12 + dy + 3, 16 + dx + 5, 255);
        for &(y, x, v) in &ink {
            a.set(y, x, v);
            b.set(y + dy, x + dx, v);
        }
        prop_assert_eq!(center_on_canvas(&a, &cfg).unwrap(), center_on_canvas(&b, &cfg).unwrap());
    }
}

#[test]
fn different_seeds_give_different_splits() {
    let m = manifest(40);
    let mut identical = 0;
    for seed in 0..200u64 {
        let a = split_random(&m, &SplitSpec { seed, ..SplitSpec::default() }).unwrap().1;
        let b = split_random(&m, &SplitSpec { seed: seed + 1000, ..SplitSpec::default() }).unwrap().1;
        let mut pa: Vec<_> = a.samples().iter().map(|s| s.path.clone()).collect();
        let mut pb: Vec<_> = b.samples().iter().map(|s| s.path.clone()).collect();
        pa.sort();
        pb.sort();
        identical += usize::from(pa == pb);
    }
    // C(40, 14) ≈ 2.3e10 possible test sets
    assert_eq!(identical, 0);
}
