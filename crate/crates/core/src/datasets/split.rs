//! Seeded train/test splitting.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Manifest};
use crate::rng::XorShiftRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
    /// Keep the genuine/forged ratio of the test part as close as possible
    /// to the pooled ratio.
    pub stratified: bool,
    /// Assign whole writers to one side. Test size is then at least
    /// `test_size(n, f)` rather than exactly that.
    pub writer_disjoint: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            test_fraction: 0.33,
            seed: 0,
            stratified: false,
            writer_disjoint: false,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(DatasetError::InvalidSplit(format!(
                "test_fraction {} outside (0, 1)",
                self.test_fraction
            )));
        }
        if self.stratified && self.writer_disjoint {
            return Err(DatasetError::InvalidSplit(
                "stratified and writer_disjoint cannot be combined".into(),
            ));
        }
        Ok(())
    }
}

/// `ceil(fraction * n)`. Products within 1e-9 above an integer are treated
/// as that integer so representation noise in `fraction` never adds a row.
pub fn test_size(n: usize, fraction: f64) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Row indices of the train and test parts, each in shuffle order.
pub fn split_indices(
    labels: &[u8],
    writers: &[u32],
    spec: &SplitSpec,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    spec.validate()?;
    let n = labels.len();
    debug_assert_eq!(n, writers.len());
    if n < 2 {
        return Err(DatasetError::TooFewSamples(n));
    }
    let t = test_size(n, spec.test_fraction);
    if t >= n {
        return Err(DatasetError::InvalidSplit(format!(
            "test part would take all {n} samples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    XorShiftRng::seed_from(spec.seed).shuffle(&mut order);

    let in_test: Vec<bool> = if spec.writer_disjoint {
        writer_assignment(&order, writers, t)?
    } else if spec.stratified {
        stratified_assignment(&order, labels, t)
    } else {
        let mut v = vec![false; n];
        for &i in &order[..t] {
            v[i] = true;
        }
        v
    };
    let (test, train): (Vec<usize>, Vec<usize>) = order.iter().partition(|&&i| in_test[i]);
    if train.is_empty() {
        return Err(DatasetError::InvalidSplit("train part is empty".into()));
    }
    Ok((train, test))
}

/// Largest-remainder quotas per label, filled walking the shuffle order.
fn stratified_assignment(order: &[usize], labels: &[u8], t: usize) -> Vec<bool> {
    let n = labels.len();
    let mut counts = [0usize; 256];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let mut quota = [0usize; 256];
    let mut rems: Vec<(usize, usize)> = Vec::new();
    let mut assigned = 0;
    for c in 0..256 {
        if counts[c] == 0 {
            continue;
        }
        let exact = t * counts[c];
        quota[c] = exact / n;
        assigned += quota[c];
        rems.push((exact % n, c));
    }
    // larger remainder first, lower label on ties
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in rems.iter().take(t - assigned) {
        quota[c] += 1;
    }
    let mut in_test = vec![false; n];
    for &i in order {
        let c = labels[i] as usize;
        if quota[c] > 0 {
            quota[c] -= 1;
            in_test[i] = true;
        }
    }
    in_test
}

/// Writers enter the test part in order of first appearance in the
/// shuffle until it holds at least `t` samples.
fn writer_assignment(order: &[usize], writers: &[u32], t: usize) -> Result<Vec<bool>, DatasetError> {
    let mut per_writer: HashMap<u32, usize> = HashMap::new();
    for &w in writers {
        *per_writer.entry(w).or_default() += 1;
    }
    if per_writer.len() < 2 {
        return Err(DatasetError::InvalidSplit(
            "writer-disjoint split needs at least 2 writers".into(),
        ));
    }
    let mut chosen: HashMap<u32, bool> = HashMap::new();
    let mut taken = 0;
    for &i in order {
        if taken >= t {
            break;
        }
        let w = writers[i];
        if chosen.insert(w, true).is_none() {
            taken += per_writer[&w];
        }
    }
    Ok(writers.iter().map(|w| chosen.contains_key(w)).collect())
}

/// Splits a manifest into `(train, test)`.
pub fn split_random(m: &Manifest, spec: &SplitSpec) -> Result<(Manifest, Manifest), DatasetError> {
    let writers: Vec<u32> = m.samples().iter().map(|s| s.writer_id).collect();
    let (train, test) = split_indices(&m.labels(), &writers, spec)?;
    Ok((m.select(&train), m.select(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{Label, SignatureSample};

    fn manifest(n_gen: usize, n_forg: usize, writers: u32) -> Manifest {
        let samples = (0..n_gen + n_forg)
            .map(|i| SignatureSample {
                path: format!("s{i}.png"),
                writer_id: i as u32 % writers,
                label: if i < n_gen { Label::Genuine } else { Label::Forged },
                dataset_tag: "t".into(),
            })
            .collect();
        Manifest::new(samples).unwrap()
    }

    #[test]
    fn ceil_rule_sizes() {
        assert_eq!(test_size(2650, 0.33), 875);
        assert_eq!(test_size(8640, 0.33), 2852);
        assert_eq!(test_size(5400, 0.33), 1782);
        assert_eq!(test_size(10, 0.3), 3);
        assert_eq!(test_size(3, 0.01), 1);
    }

    #[test]
    fn partition_and_order() {
        let m = manifest(13, 17, 5);
        let spec = SplitSpec {
            seed: 9,
            ..SplitSpec::default()
        };
        let (train, test) = split_random(&m, &spec).unwrap();
        assert_eq!(test.len(), 10);
        assert_eq!(train.len(), 20);
        let mut all: Vec<String> = train.samples().iter().chain(test.samples()).map(|s| s.path.clone()).collect();
        all.sort();
        let mut orig: Vec<String> = m.samples().iter().map(|s| s.path.clone()).collect();
        orig.sort();
        assert_eq!(all, orig);
        // test is the shuffle prefix
        let mut order: Vec<usize> = (0..30).collect();
        XorShiftRng::seed_from(9).shuffle(&mut order);
        let expect: Vec<String> = order[..10].iter().map(|&i| format!("s{i}.png")).collect();
        let got: Vec<String> = test.samples().iter().map(|s| s.path.clone()).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn stratified_keeps_ratio() {
        let m = manifest(40, 60, 4);
        let spec = SplitSpec {
            test_fraction: 0.25,
            stratified: true,
            ..SplitSpec::default()
        };
        let (_, test) = split_random(&m, &spec).unwrap();
        assert_eq!(test.count(Label::Genuine), 10);
        assert_eq!(test.count(Label::Forged), 15);
    }

    #[test]
    fn writer_disjoint_has_no_shared_writer() {
        let m = manifest(30, 30, 6);
        let spec = SplitSpec {
            writer_disjoint: true,
            seed: 4,
            ..SplitSpec::default()
        };
        let (train, test) = split_random(&m, &spec).unwrap();
        assert!(test.len() >= 20);
        for s in test.samples() {
            assert!(train.samples().iter().all(|t| t.writer_id != s.writer_id));
        }
    }

    #[test]
    fn too_few_and_bad_fraction() {
        assert!(matches!(
            split_random(&manifest(1, 0, 1), &SplitSpec::default()),
            Err(DatasetError::TooFewSamples(1))
        ));
        let bad = SplitSpec {
            test_fraction: 1.0,
            ..SplitSpec::default()
        };
        assert!(split_random(&manifest(5, 5, 1), &bad).is_err());
        let all = SplitSpec {
            test_fraction: 0.99,
            ..SplitSpec::default()
        };
        assert!(split_random(&manifest(1, 1, 1), &all).is_err());
    }
}
