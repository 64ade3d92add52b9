use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::{RwLock, RwLockReadGuard};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::report::EvaluationReport;
use super::{threshold_split, Protocol};
use crate::data::{Dataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::metrics::{cohens_kappa, propagation_accuracy};
use crate::opf::{opf_train, PropagationResult};
use crate::projection::Projection2D;
use crate::split::Split;
use crate::{Label, SampleId};

pub const DEFAULT_TAU: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionStatus {
    Open,
    Finalized,
}

impl SessionStatus {
    pub fn name(self) -> &'static str {
        match self {
            SessionStatus::Open => "open",
            SessionStatus::Finalized => "finalized",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HistoryEntry {
    /// A manual batch; each id's label before the batch (`None` if it had none).
    Labels { previous: Vec<(SampleId, Option<Label>)> },
    /// Manual labels that a lower threshold absorbed into the auto set.
    Eviction { previous_tau: f64, evicted: Vec<(SampleId, Label)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOutcome {
    pub auto: usize,
    pub residue: usize,
    pub evicted: Vec<SampleId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UserPolicy {
    OracleAll,
    OracleFraction(f64),
    Abstain,
}

impl std::str::FromStr for UserPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle_all" | "oracle-all" => Ok(UserPolicy::OracleAll),
            "abstain" => Ok(UserPolicy::Abstain),
            _ => {
                let f = s
                    .strip_prefix("oracle_fraction:")
                    .or_else(|| s.strip_prefix("oracle-fraction:"))
                    .and_then(|f| f.parse::<f64>().ok())
                    .filter(|f| (0.0..=1.0).contains(f))
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "unknown user policy `{s}` (oracle_all, oracle_fraction:<f>, abstain)"
                        ))
                    })?;
                Ok(UserPolicy::OracleFraction(f))
            }
        }
    }
}

/// A live annotation session over one split.
///
/// `auto_set` always equals the ids of U whose confidence reaches `tau`, and
/// manual labels only ever sit on the remaining residue.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    protocol: Protocol,
    n_classes: usize,
    seed: u64,
    split: Split,
    projection: Option<Projection2D>,
    propagation: PropagationResult,
    tau: f64,
    auto_set: BTreeSet<SampleId>,
    manual: BTreeMap<SampleId, Label>,
    history: Vec<HistoryEntry>,
    status: SessionStatus,
}

impl SessionState {
    /// `propagation` must cover U exactly, or be empty for protocols that do not propagate.
    pub fn new(
        protocol: Protocol,
        n_classes: usize,
        seed: u64,
        split: Split,
        projection: Option<Projection2D>,
        propagation: PropagationResult,
        tau: f64,
    ) -> Result<Self> {
        Self::restore(protocol, n_classes, seed, split, projection, propagation, tau, BTreeMap::new(), SessionStatus::Open)
    }

    /// Rebuilds a session from persisted parts; the undo history starts empty.
    #[allow(clippy::too_many_arguments)]
    pub fn restore(
        protocol: Protocol,
        n_classes: usize,
        seed: u64,
        split: Split,
        projection: Option<Projection2D>,
        propagation: PropagationResult,
        tau: f64,
        manual: BTreeMap<SampleId, Label>,
        status: SessionStatus,
    ) -> Result<Self> {
        for set in [&split.s_ids, &split.u_ids, &split.t_ids] {
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument("split sets must list ids in ascending order".into()));
            }
        }
        let prop_ids: Vec<SampleId> = propagation.ids().collect();
        if !prop_ids.is_empty() && prop_ids != split.u_ids {
            return Err(Error::InvalidArgument("propagation does not cover exactly the unsupervised set".into()));
        }
        if let Some(s) = propagation.samples.iter().find(|s| s.label >= n_classes) {
            return Err(Error::UnknownLabel { label: s.label, n_classes });
        }
        if let Some(proj) = &projection {
            let ids: BTreeSet<SampleId> = proj.ids.iter().copied().collect();
            if let Some(missing) = split.training_ids().into_iter().find(|id| !ids.contains(id)) {
                return Err(Error::InvalidArgument(format!("projection lacks training sample {missing}")));
            }
        }
        let (auto_set, _) = threshold_split(&propagation, tau)?;
        let session = Self {
            protocol,
            n_classes,
            seed,
            split,
            projection,
            propagation,
            tau,
            auto_set,
            manual: BTreeMap::new(),
            history: Vec::new(),
            status,
        };
        for (&id, &label) in &manual {
            session.check_assignment(id, label)?;
        }
        Ok(Self { manual, ..session })
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn projection(&self) -> Option<&Projection2D> {
        self.projection.as_ref()
    }

    pub fn propagation(&self) -> &PropagationResult {
        &self.propagation
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn auto_set(&self) -> &BTreeSet<SampleId> {
        &self.auto_set
    }

    pub fn manual_labels(&self) -> &BTreeMap<SampleId, Label> {
        &self.manual
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    /// U minus the auto set, manual labels included.
    pub fn residue(&self) -> Vec<SampleId> {
        self.split.u_ids.iter().copied().filter(|id| !self.auto_set.contains(id)).collect()
    }

    fn ensure_open(&self) -> Result<()> {
        match self.status {
            SessionStatus::Open => Ok(()),
            SessionStatus::Finalized => Err(Error::Finalized),
        }
    }

    fn check_assignment(&self, id: SampleId, label: Label) -> Result<()> {
        if self.auto_set.contains(&id) {
            return Err(Error::AutoLabeled(id));
        }
        if self.split.u_ids.binary_search(&id).is_err() {
            return Err(Error::NotUnsupervised(id));
        }
        if label >= self.n_classes {
            return Err(Error::UnknownLabel { label, n_classes: self.n_classes });
        }
        Ok(())
    }

    /// Moves the threshold. Manual labels on ids the new auto set absorbs are
    /// dropped, and the drop is recorded so `undo` can bring them back.
    pub fn set_tau(&mut self, tau: f64) -> Result<ThresholdOutcome> {
        self.ensure_open()?;
        let (auto_set, residue) = threshold_split(&self.propagation, tau)?;
        let evicted: Vec<(SampleId, Label)> =
            self.manual.iter().filter(|(id, _)| auto_set.contains(id)).map(|(&id, &l)| (id, l)).collect();
        for (id, _) in &evicted {
            self.manual.remove(id);
        }
        let evicted_ids = evicted.iter().map(|(id, _)| *id).collect();
        if !evicted.is_empty() {
            self.history.push(HistoryEntry::Eviction { previous_tau: self.tau, evicted });
        }
        self.tau = tau;
        self.auto_set = auto_set;
        let residue = if self.propagation.samples.is_empty() { self.split.u_ids.len() } else { residue.len() };
        Ok(ThresholdOutcome { auto: self.auto_set.len(), residue, evicted: evicted_ids })
    }

    /// Applies a batch all-or-nothing and returns how many assignments it held.
    pub fn apply_manual_labels(&mut self, batch: &[(SampleId, Label)]) -> Result<usize> {
        self.ensure_open()?;
        if batch.is_empty() {
            return Ok(0);
        }
        if !self.protocol.takes_manual_labels() {
            return Err(Error::InvalidArgument(format!("{} sessions take no manual labels", self.protocol)));
        }
        for &(id, label) in batch {
            self.check_assignment(id, label)?;
        }
        let mut previous = Vec::with_capacity(batch.len());
        for &(id, label) in batch {
            previous.push((id, self.manual.insert(id, label)));
        }
        self.history.push(HistoryEntry::Labels { previous });
        Ok(batch.len())
    }

    pub fn undo(&mut self) -> Result<()> {
        self.ensure_open()?;
        match self.history.pop().ok_or(Error::EmptyHistory)? {
            HistoryEntry::Labels { previous } => {
                for (id, old) in previous.into_iter().rev() {
                    match old {
                        Some(label) => self.manual.insert(id, label),
                        None => self.manual.remove(&id),
                    };
                }
            }
            HistoryEntry::Eviction { previous_tau, evicted } => {
                let (auto_set, _) = threshold_split(&self.propagation, previous_tau)?;
                self.tau = previous_tau;
                self.auto_set = auto_set;
                self.manual.extend(evicted);
            }
        }
        Ok(())
    }

    /// Assignments a simulated annotator would make on the unlabeled residue.
    pub fn simulate_user(&self, dataset: &Dataset, policy: UserPolicy, seed: u64) -> Result<Vec<(SampleId, Label)>> {
        let mut pool: Vec<SampleId> = self.residue().into_iter().filter(|id| !self.manual.contains_key(id)).collect();
        match policy {
            UserPolicy::Abstain => return Ok(Vec::new()),
            UserPolicy::OracleAll => {}
            UserPolicy::OracleFraction(f) => {
                let keep = (f * pool.len() as f64).round() as usize;
                pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                pool.truncate(keep);
                pool.sort_unstable();
            }
        }
        pool.into_iter()
            .map(|id| {
                let label = dataset.samples[id].true_label.ok_or(Error::MissingLabels("simulate the annotator"))?;
                Ok((id, label))
            })
            .collect()
    }

    /// Training set used at finalization, in ascending id order.
    pub fn training_set(&self, dataset: &Dataset) -> Result<Vec<(SampleId, Label)>> {
        let mut set = BTreeMap::new();
        for &id in &self.split.s_ids {
            let label = dataset.samples[id].true_label.ok_or(Error::MissingLabels("train on S"))?;
            set.insert(id, label);
        }
        if self.protocol != Protocol::Nlp {
            for &id in &self.auto_set {
                set.insert(id, self.propagation.get(id).expect("auto ids are propagated").label);
            }
            set.extend(self.manual.iter().map(|(&id, &l)| (id, l)));
        }
        Ok(set.into_iter().collect())
    }

    /// Trains supervised OPF on `latent` (row = sample id), scores it on T and
    /// closes the session. A failed training leaves the session open.
    pub fn finalize_and_train(&mut self, dataset: &Dataset, latent: &FeatureMatrix) -> Result<EvaluationReport> {
        self.ensure_open()?;
        if latent.n_samples() != dataset.len() {
            return Err(Error::DimensionMismatch { expected: dataset.len(), actual: latent.n_samples() });
        }
        let training = self.training_set(dataset)?;
        let (ids, labels): (Vec<SampleId>, Vec<Label>) = training.into_iter().unzip();
        let model = opf_train(&latent.select_rows(&ids)?, &labels)?;

        let truth_t = self
            .split
            .t_ids
            .iter()
            .map(|&id| dataset.samples[id].true_label.ok_or(Error::MissingLabels("evaluate on T")))
            .collect::<Result<Vec<_>>>()?;
        let pred_t = model.classify_all(&latent.select_rows(&self.split.t_ids)?)?;
        let kappa = cohens_kappa(&truth_t, &pred_t)?;

        let (n_lc, n_li) = match self.protocol {
            Protocol::Nlp => (0, 0),
            _ => (self.auto_set.len(), self.manual.len()),
        };
        let u_truth: Option<BTreeMap<SampleId, Label>> =
            self.split.u_ids.iter().map(|&id| dataset.samples[id].true_label.map(|l| (id, l))).collect();
        let propagation_accuracy = match (self.protocol, u_truth) {
            (Protocol::Nlp, _) | (_, None) => None,
            (_, Some(truth)) => {
                let mut propagated: BTreeMap<SampleId, Label> =
                    self.auto_set.iter().map(|&id| (id, self.propagation.get(id).expect("propagated").label)).collect();
                propagated.extend(self.manual.iter().map(|(&id, &l)| (id, l)));
                Some(propagation_accuracy(&truth, &propagated, &self.split.u_ids)?)
            }
        };

        self.status = SessionStatus::Finalized;
        Ok(EvaluationReport {
            protocol: self.protocol,
            seed: self.seed,
            kappa,
            propagation_accuracy,
            n_s: self.split.s_ids.len(),
            n_u: self.split.u_ids.len(),
            n_lc,
            n_li,
            n_t: self.split.t_ids.len(),
        })
    }
}

/// A session shared between request handlers. Mutations take the write lock,
/// so they apply one at a time and readers always see a settled state.
#[derive(Debug, Clone)]
pub struct SharedSession(Arc<RwLock<SessionState>>);

impl SharedSession {
    pub fn new(session: SessionState) -> Self {
        Self(Arc::new(RwLock::new(session)))
    }

    pub fn read(&self) -> RwLockReadGuard<'_, SessionState> {
        self.0.read()
    }

    pub fn mutate<T>(&self, f: impl FnOnce(&mut SessionState) -> T) -> T {
        f(&mut self.0.write())
    }

    pub fn snapshot(&self) -> SessionState {
        self.0.read().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opf::PropagatedSample;
    use proptest::prelude::*;

    /// Ten samples: S = {0, 1}, U = {2..=9}, T empty; U confidences step by 0.1 from 0.2.
    fn session(protocol: Protocol, tau: f64) -> SessionState {
        let split = Split { s_ids: vec![0, 1], u_ids: (2..10).collect(), t_ids: vec![], seed: Some(1), fractions: [0.2, 0.8, 0.0] };
        let propagation = PropagationResult {
            samples: (2..10)
                .map(|id| PropagatedSample {
                    id,
                    label: id % 4,
                    k_a: 1.0,
                    k_b: 1.0,
                    confidence: 0.2 + 0.1 * (id - 2) as f64,
                })
                .collect(),
        };
        SessionState::new(protocol, 4, 1, split, None, propagation, tau).unwrap()
    }

    fn ids(set: &BTreeSet<SampleId>) -> Vec<SampleId> {
        set.iter().copied().collect()
    }

    fn assert_invariants(s: &SessionState) {
        let (auto, _) = threshold_split(s.propagation(), s.tau()).unwrap();
        assert_eq!(&auto, s.auto_set());
        for (id, label) in s.manual_labels() {
            assert!(!s.auto_set().contains(id));
            assert!(s.split().u_ids.contains(id));
            assert!(*label < s.n_classes());
        }
    }

    #[test]
    fn manual_batches_and_undo() {
        let mut s = session(Protocol::Salp, 0.75);
        assert_eq!(ids(s.auto_set()), vec![8, 9]);
        assert_eq!(s.apply_manual_labels(&[(7, 3), (3, 3)]).unwrap(), 2);
        assert_eq!(s.manual_labels(), &BTreeMap::from([(3, 3), (7, 3)]));
        assert_eq!(s.history().len(), 1);

        s.apply_manual_labels(&[(7, 2)]).unwrap();
        assert_eq!(s.manual_labels()[&7], 2);

        s.undo().unwrap();
        assert_eq!(s.manual_labels(), &BTreeMap::from([(3, 3), (7, 3)]));
        s.undo().unwrap();
        assert!(s.manual_labels().is_empty());
        assert!(matches!(s.undo(), Err(Error::EmptyHistory)));
    }

    #[test]
    fn rejected_batches_apply_nothing() {
        let mut s = session(Protocol::Salp, 0.75);
        assert!(matches!(s.apply_manual_labels(&[(3, 1), (9, 1)]), Err(Error::AutoLabeled(9))));
        assert!(matches!(s.apply_manual_labels(&[(3, 1), (0, 1)]), Err(Error::NotUnsupervised(0))));
        assert!(matches!(s.apply_manual_labels(&[(3, 4)]), Err(Error::UnknownLabel { label: 4, .. })));
        assert!(matches!(s.apply_manual_labels(&[(42, 0)]), Err(Error::NotUnsupervised(42))));
        assert!(s.manual_labels().is_empty());
        assert!(s.history().is_empty());

        assert_eq!(s.apply_manual_labels(&[]).unwrap(), 0);
        assert!(s.history().is_empty());
    }

    #[test]
    fn eviction_and_its_undo() {
        let mut s = session(Protocol::Salp, 0.75);
        s.apply_manual_labels(&[(5, 0), (2, 1)]).unwrap();
        // confidence of 5 is 0.5
        let out = s.set_tau(0.45).unwrap();
        assert_eq!(out.evicted, vec![5]);
        assert_eq!((out.auto, out.residue), (5, 3));
        assert_eq!(s.manual_labels(), &BTreeMap::from([(2, 1)]));
        assert_invariants(&s);

        s.undo().unwrap();
        assert_eq!(s.tau(), 0.75);
        assert_eq!(s.manual_labels(), &BTreeMap::from([(2, 1), (5, 0)]));
        assert_invariants(&s);

        let out = s.set_tau(0.0).unwrap();
        assert_eq!(out.residue, 0);
        assert_eq!(out.evicted, vec![2, 5]);
    }

    #[test]
    fn threshold_round_trip_restores_auto_set() {
        let mut s = session(Protocol::Salp, 0.5);
        let before = s.auto_set().clone();
        s.set_tau(0.9).unwrap();
        assert!(s.auto_set().is_subset(&before));
        s.set_tau(0.5).unwrap();
        assert_eq!(s.auto_set(), &before);
        assert!(matches!(s.set_tau(1.5), Err(Error::InvalidTau(_))));
        assert_eq!(s.tau(), 0.5);
    }

    #[test]
    fn finalized_sessions_are_read_only() {
        let mut s = session(Protocol::Salp, 0.75);
        s.status = SessionStatus::Finalized;
        assert!(matches!(s.set_tau(0.5), Err(Error::Finalized)));
        assert!(matches!(s.apply_manual_labels(&[(2, 0)]), Err(Error::Finalized)));
        assert!(matches!(s.undo(), Err(Error::Finalized)));
    }

    #[test]
    fn nlp_takes_no_labels() {
        let mut s = session(Protocol::Nlp, 0.75);
        assert!(s.apply_manual_labels(&[(2, 0)]).is_err());
        assert_eq!(s.apply_manual_labels(&[]).unwrap(), 0);
    }

    #[test]
    fn user_policies() {
        let features = FeatureMatrix::new(10, 1, (0..10).map(f64::from).collect()).unwrap();
        let ds = Dataset::new(features, Some((0..10).map(|i| i % 4).collect()), 4).unwrap();
        let s = session(Protocol::Salp, 0.75);
        let all = s.simulate_user(&ds, UserPolicy::OracleAll, 0).unwrap();
        assert_eq!(all, (2..8).map(|id| (id, id % 4)).collect::<Vec<_>>());
        assert!(s.simulate_user(&ds, UserPolicy::Abstain, 0).unwrap().is_empty());

        let half = s.simulate_user(&ds, UserPolicy::OracleFraction(0.5), 7).unwrap();
        assert_eq!(half.len(), 3);
        assert_eq!(half, s.simulate_user(&ds, UserPolicy::OracleFraction(0.5), 7).unwrap());
        assert!(half.iter().all(|p| all.contains(p)));
        assert!(half.windows(2).all(|w| w[0].0 < w[1].0));

        let unlabeled = Dataset::new(ds.features.clone(), None, 4).unwrap();
        assert!(matches!(s.simulate_user(&unlabeled, UserPolicy::OracleAll, 0), Err(Error::MissingLabels(_))));
    }

    #[test]
    fn policy_names() {
        assert_eq!("oracle_all".parse::<UserPolicy>().unwrap(), UserPolicy::OracleAll);
        assert_eq!("oracle_fraction:0.25".parse::<UserPolicy>().unwrap(), UserPolicy::OracleFraction(0.25));
        assert_eq!("abstain".parse::<UserPolicy>().unwrap(), UserPolicy::Abstain);
        assert!("oracle_fraction:2".parse::<UserPolicy>().is_err());
    }

    #[test]
    fn restore_validates_manual_labels() {
        let s = session(Protocol::Salp, 0.75);
        let parts = |manual| {
            SessionState::restore(
                Protocol::Salp, 4, 1, s.split().clone(), None, s.propagation().clone(), 0.75, manual, SessionStatus::Open,
            )
        };
        assert!(parts(BTreeMap::from([(3, 1)])).is_ok());
        assert!(matches!(parts(BTreeMap::from([(9, 1)])), Err(Error::AutoLabeled(9))));
    }

    #[derive(Debug, Clone)]
    enum Op {
        Tau(f64),
        Label(Vec<(SampleId, Label)>),
        Undo,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0usize..=10).prop_map(|t| Op::Tau(t as f64 / 10.0)),
            prop::collection::vec((0usize..12, 0usize..5), 0..4).prop_map(Op::Label),
            Just(Op::Undo),
        ]
    }

    proptest! {
        #[test]
        fn invariants_hold_under_any_mutation_sequence(ops in prop::collection::vec(op(), 0..40)) {
            let mut s = session(Protocol::Salp, 0.75);
            for op in ops {
                let before = s.clone();
                let ok = match op {
                    Op::Tau(t) => s.set_tau(t).is_ok(),
                    Op::Label(batch) => s.apply_manual_labels(&batch).is_ok(),
                    Op::Undo => s.undo().is_ok(),
                };
                if !ok {
                    prop_assert_eq!(&s, &before);
                }
                assert_invariants(&s);
            }
        }
    }
}
