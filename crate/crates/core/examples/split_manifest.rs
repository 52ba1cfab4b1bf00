//! Manifest handling and the seeded 67/33 split, including the test sizes
//! of the three benchmark corpora.

use sigverify::datasets::{
    read_manifest, split_random, test_size, write_manifest, Label, Manifest, SignatureSample,
    SplitSpec,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (name, n) in [("CEDAR", 2650), ("BHSig260 Hindi", 8640), ("BHSig260 Bengali", 5400)] {
        let t = test_size(n, 0.33);
        println!("{name:<18} n={n:>5}  train={:>5}  test={t:>5}", n - t);
    }

    let samples = (0..30)
        .map(|i| SignatureSample {
            path: format!("w{}/s{i}.png", i % 5),
            writer_id: (i % 5) as u32,
            label: if i % 3 == 0 { Label::Forged } else { Label::Genuine },
            dataset_tag: "demo".into(),
        })
        .collect();
    let m = Manifest::new(samples)?;
    for spec in [
        SplitSpec::default(),
        SplitSpec {
            stratified: true,
            ..SplitSpec::default()
        },
        SplitSpec {
            writer_disjoint: true,
            ..SplitSpec::default()
        },
    ] {
        let (train, test) = split_random(&m, &spec)?;
        println!(
            "stratified={:<5} writer_disjoint={:<5} train={} test={} (test forged: {})",
            spec.stratified,
            spec.writer_disjoint,
            train.len(),
            test.len(),
            test.count(Label::Forged)
        );
    }

    let path = std::env::temp_dir().join("sigverify-demo-manifest.csv");
    write_manifest(&m, &path)?;
    assert_eq!(read_manifest(&path)?, m);
    println!("manifest round trip ok: {}", path.display());
    Ok(())
}
