//! Stratified S/U/T partitioning.
//!
//! Shuffling uses ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`) and the
//! Fisher-Yates shuffle from `rand::seq::SliceRandom`; classes are shuffled one
//! after another in ascending class order from a single stream.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::SampleId;

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub s_ids: Vec<SampleId>,
    pub u_ids: Vec<SampleId>,
    pub t_ids: Vec<SampleId>,
    /// `None` when the split was read back from a file.
    pub seed: Option<u64>,
    pub fractions: [f64; 3],
}

impl Split {
    pub fn len(&self) -> usize {
        self.s_ids.len() + self.u_ids.len() + self.t_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// S then U in ascending id order: the rows that are projected and propagated.
    pub fn training_ids(&self) -> Vec<SampleId> {
        let mut ids: Vec<_> = self.s_ids.iter().chain(&self.u_ids).copied().collect();
        ids.sort_unstable();
        ids
    }

    /// Checks that the three sets partition `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &id in self.s_ids.iter().chain(&self.u_ids).chain(&self.t_ids) {
            if id >= n {
                return Err(Error::InvalidArgument(format!("split references sample {id} but dataset has {n}")));
            }
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::InvalidArgument(format!("sample {id} appears twice in the split")));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!("sample {missing} is missing from the split")));
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let join = |ids: &[SampleId]| ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
        format!("S:{}\nU:{}\nT:{}\n", join(&self.s_ids), join(&self.u_ids), join(&self.t_ids))
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut sets: [Option<Vec<SampleId>>; 3] = [None, None, None];
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (tag, rest) = line
                .split_once(':')
                .ok_or_else(|| Error::format(path, idx + 1, "expected `S:`, `U:` or `T:`"))?;
            let slot = match tag {
                "S" => 0,
                "U" => 1,
                "T" => 2,
                other => return Err(Error::format(path, idx + 1, format!("unknown set `{other}`"))),
            };
            let ids = rest
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim()
                        .parse::<SampleId>()
                        .map_err(|_| Error::format(path, idx + 1, format!("bad sample id `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            sets[slot] = Some(ids);
        }
        let [s, u, t] = sets;
        let missing = |name| Error::format(path, 0, format!("missing `{name}:` line"));
        let (s_ids, u_ids, t_ids) = (s.ok_or_else(|| missing("S"))?, u.ok_or_else(|| missing("U"))?, t.ok_or_else(|| missing("T"))?);
        let n = (s_ids.len() + u_ids.len() + t_ids.len()).max(1) as f64;
        let fractions = [s_ids.len() as f64 / n, u_ids.len() as f64 / n, t_ids.len() as f64 / n];
        Ok(Self { s_ids, u_ids, t_ids, seed: None, fractions })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

/// Hamilton (largest remainder) apportionment of `n` over `fractions`.
fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for k in 0..3 {
        counts[k] = exact[k].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n.saturating_sub(counts.iter().sum());
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Per-class proportional split of `samples` into S, U and T.
///
/// Every class gets `floor(f * n_c)` members per subset; the leftover members
/// are handed out so that the global subset sizes equal the largest-remainder
/// apportionment of `|D|`, preferring classes with the largest fractional part.
/// Each class is then guaranteed at least one member of S.
pub fn stratified_split(samples: &[Sample], fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(Error::InvalidArgument(format!("fractions must be positive, got {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("fractions sum to {total}, not 1")));
    }

    let n_classes = samples
        .iter()
        .map(|s| s.true_label.map(|l| l + 1).ok_or(Error::MissingLabels("stratify a split")))
        .try_fold(0, |acc, l| l.map(|l| acc.max(l)))?;
    let mut members: Vec<Vec<SampleId>> = vec![Vec::new(); n_classes];
    for s in samples {
        members[s.true_label.unwrap()].push(s.id);
    }
    let classes: Vec<usize> = (0..n_classes).filter(|&c| !members[c].is_empty()).collect();
    for &c in &classes {
        if members[c].len() < 3 {
            return Err(Error::ClassTooSmall { class: c, count: members[c].len() });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &c in &classes {
        members[c].sort_unstable();
        members[c].shuffle(&mut rng);
    }

    // alloc[i][k]: how many of class classes[i] go to subset k.
    let mut alloc: Vec<[usize; 3]> = classes
        .iter()
        .map(|&c| {
            let n_c = members[c].len() as f64;
            [0, 1, 2].map(|k| (fractions[k] * n_c).floor() as usize)
        })
        .collect();
    let mut leftover: Vec<usize> =
        classes.iter().zip(&alloc).map(|(&c, a)| members[c].len() - a.iter().sum::<usize>()).collect();

    let targets = apportion(samples.len(), &fractions);
    for k in 0..3 {
        let assigned: usize = alloc.iter().map(|a| a[k]).sum();
        let mut deficit = targets[k].saturating_sub(assigned);
        let frac = |i: usize| {
            let x = fractions[k] * members[classes[i]].len() as f64;
            x - x.floor()
        };
        let mut order: Vec<usize> = (0..classes.len()).collect();
        order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
        // First pass: at most one extra unit per class; second pass: any leftover.
        for pass in 0..2 {
            for &i in &order {
                if deficit == 0 {
                    break;
                }
                if leftover[i] > 0 && (pass == 1 || alloc[i][k] == (fractions[k] * members[classes[i]].len() as f64).floor() as usize) {
                    alloc[i][k] += 1;
                    leftover[i] -= 1;
                    deficit -= 1;
                }
            }
        }
    }
    // Any residue (only possible through rounding noise) goes to U.
    for (a, l) in alloc.iter_mut().zip(leftover.iter_mut()) {
        a[1] += std::mem::take(l);
    }

    for i in 0..classes.len() {
        if alloc[i][0] > 0 {
            continue;
        }
        // Take from the larger of U/T, then hand one S member of a class that
        // can spare it back to that subset so global sizes stay put.
        let from = if alloc[i][1] >= alloc[i][2] { 1 } else { 2 };
        alloc[i][from] -= 1;
        alloc[i][0] += 1;
        if let Some(j) = (0..classes.len()).filter(|&j| alloc[j][0] >= 2).max_by_key(|&j| (alloc[j][0], usize::MAX - j)) {
            alloc[j][0] -= 1;
            alloc[j][from] += 1;
        }
    }

    let (mut s_ids, mut u_ids, mut t_ids) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &c) in classes.iter().enumerate() {
        let [ns, nu, _] = alloc[i];
        let m = &members[c];
        s_ids.extend_from_slice(&m[..ns]);
        u_ids.extend_from_slice(&m[ns..ns + nu]);
        t_ids.extend_from_slice(&m[ns + nu..]);
    }
    s_ids.sort_unstable();
    u_ids.sort_unstable();
    t_ids.sort_unstable();
    Ok(Split { s_ids, u_ids, t_ids, seed: Some(seed), fractions })
}

/// Classes present among `ids`.
pub fn classes_of(samples: &[Sample], ids: &[SampleId]) -> BTreeSet<usize> {
    ids.iter().filter_map(|&i| samples[i].true_label).collect()
}
