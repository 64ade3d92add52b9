use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::{Label, SampleId};

/// Rows are true labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
    n: u64,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self { n_classes, counts: vec![0; n_classes * n_classes], n: 0 }
    }

    pub fn from_counts<R: AsRef<[u64]>>(rows: &[R]) -> Result<Self> {
        let l = rows.len();
        let mut m = Self::new(l);
        for (t, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != l {
                return Err(Error::InvalidArgument("confusion matrix must be square".into()));
            }
            for (p, &c) in row.iter().enumerate() {
                m.counts[t * l + p] = c;
                m.n += c;
            }
        }
        Ok(m)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn total(&self) -> u64 {
        self.n
    }

    pub fn get(&self, truth: Label, pred: Label) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn add(&mut self, truth: Label, pred: Label) -> Result<()> {
        for label in [truth, pred] {
            if label >= self.n_classes {
                return Err(Error::UnknownLabel { label, n_classes: self.n_classes });
            }
        }
        self.counts[truth * self.n_classes + pred] += 1;
        self.n += 1;
        Ok(())
    }

    /// Cohen's kappa from the tallies; 1 when expected agreement is total.
    pub fn kappa(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("kappa of an empty confusion matrix".into()));
        }
        let l = self.n_classes;
        let trace: u64 = (0..l).map(|c| self.get(c, c)).sum();
        let chance: u64 = (0..l)
            .map(|c| {
                let row: u64 = (0..l).map(|p| self.get(c, p)).sum();
                let col: u64 = (0..l).map(|t| self.get(t, c)).sum();
                row * col
            })
            .sum();
        Ok(kappa_from_tallies(trace, chance, self.n))
    }
}

/// `(n * agree - chance) / (n^2 - chance)`, kept in integers until the one division.
fn kappa_from_tallies(agree: u64, chance: u64, n: u64) -> f64 {
    let (agree, chance, n) = (agree as i128, chance as i128, n as i128);
    let denom = n * n - chance;
    if denom == 0 {
        return 1.0;
    }
    (n * agree - chance) as f64 / denom as f64
}

pub fn confusion(truth: &[Label], pred: &[Label], n_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), actual: pred.len() });
    }
    let mut m = ConfusionMatrix::new(n_classes);
    for (&t, &p) in truth.iter().zip(pred) {
        m.add(t, p)?;
    }
    Ok(m)
}

/// Cohen's kappa straight from two label lists.
pub fn cohens_kappa(truth: &[Label], pred: &[Label]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), actual: pred.len() });
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("kappa of empty label lists".into()));
    }
    let agree = truth.iter().zip(pred).filter(|(t, p)| t == p).count() as u64;
    let mut rows: BTreeMap<Label, u64> = BTreeMap::new();
    let mut cols: BTreeMap<Label, u64> = BTreeMap::new();
    for (&t, &p) in truth.iter().zip(pred) {
        *rows.entry(t).or_default() += 1;
        *cols.entry(p).or_default() += 1;
    }
    let chance: u64 = rows.iter().map(|(c, r)| r * cols.get(c).copied().unwrap_or(0)).sum();
    Ok(kappa_from_tallies(agree, chance, truth.len() as u64))
}

/// Correct labels divided by `|U|`; unlabeled members of `u_ids` count as wrong.
pub fn propagation_accuracy(
    truth: &BTreeMap<SampleId, Label>,
    propagated: &BTreeMap<SampleId, Label>,
    u_ids: &[SampleId],
) -> Result<f64> {
    if u_ids.is_empty() {
        return Err(Error::InvalidArgument("propagation accuracy over an empty U".into()));
    }
    let u: BTreeSet<SampleId> = u_ids.iter().copied().collect();
    let mut correct = 0usize;
    for (id, label) in propagated {
        if !u.contains(id) {
            return Err(Error::NotUnsupervised(*id));
        }
        let t = truth.get(id).ok_or(Error::MissingLabels("score propagated labels"))?;
        if t == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / u.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_and_chance_agreement() {
        let truth = [0, 1, 2, 1, 0, 2];
        assert_eq!(cohens_kappa(&truth, &truth).unwrap(), 1.0);
        assert_eq!(cohens_kappa(&[0, 0, 1, 1], &[1, 1, 1, 1]).unwrap(), 0.0);
        assert_eq!(cohens_kappa(&[3, 3, 3], &[3, 3, 3]).unwrap(), 1.0);
    }

    #[test]
    fn hand_computed_kappa() {
        let truth = [0, 0, 0, 1, 1, 1];
        let pred = [0, 0, 1, 0, 1, 1];
        let m = confusion(&truth, &pred, 2).unwrap();
        assert_eq!(m, ConfusionMatrix::from_counts(&[[2, 1], [1, 2]]).unwrap());
        // p_o = 2/3, p_e = 1/2
        assert_eq!(m.kappa().unwrap(), 1.0 / 3.0);
        assert_eq!(cohens_kappa(&truth, &pred).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn confusion_tallies() {
        let m = confusion(&[0, 1, 0, 1], &[0, 1, 0, 1], 2).unwrap();
        assert_eq!((m.get(0, 0), m.get(1, 1), m.get(0, 1), m.total()), (2, 2, 0, 4));
        let m = confusion(&[0; 5], &[1; 5], 2).unwrap();
        assert_eq!(m.get(0, 1), 5);
        assert!(matches!(confusion(&[0, 2], &[0, 1], 2), Err(Error::UnknownLabel { label: 2, .. })));
    }

    #[test]
    fn input_errors() {
        assert!(cohens_kappa(&[0, 1], &[0]).is_err());
        assert!(cohens_kappa(&[], &[]).is_err());
    }

    fn map(pairs: &[(SampleId, Label)]) -> BTreeMap<SampleId, Label> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn propagation_accuracy_cases() {
        let truth = map(&[(1, 0), (2, 1), (3, 1), (4, 0)]);
        let u = [1, 2, 3, 4];
        assert_eq!(propagation_accuracy(&truth, &map(&[(1, 0), (2, 1), (3, 1), (4, 1)]), &u).unwrap(), 0.75);
        assert_eq!(propagation_accuracy(&truth, &truth, &u).unwrap(), 1.0);
        assert_eq!(propagation_accuracy(&truth, &map(&[(1, 0), (2, 1)]), &u).unwrap(), 0.5);
        assert!(matches!(propagation_accuracy(&truth, &map(&[(9, 0)]), &u), Err(Error::NotUnsupervised(9))));
    }

    proptest! {
        #[test]
        fn list_and_matrix_routes_agree(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let (truth, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let a = cohens_kappa(&truth, &pred).unwrap();
            let b = confusion(&truth, &pred, 4).unwrap().kappa().unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((-1.0..=1.0).contains(&a));
        }

        #[test]
        fn kappa_invariant_under_relabeling(pairs in prop::collection::vec((0usize..3, 0usize..3), 2..40), shift in 1usize..3) {
            let (truth, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let perm = |l: usize| (l + shift) % 3;
            let a = cohens_kappa(&truth, &pred).unwrap();
            let b = cohens_kappa(&truth.iter().map(|&l| perm(l)).collect::<Vec<_>>(), &pred.iter().map(|&l| perm(l)).collect::<Vec<_>>()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
