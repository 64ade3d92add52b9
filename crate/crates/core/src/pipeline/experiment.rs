use super::report::{summarize, EvaluationReport, Summary};
use super::session::{SessionState, UserPolicy, DEFAULT_TAU};
use super::{propagate, Protocol, Space};
use crate::data::{Dataset, FeatureMatrix};
use crate::error::Result;
use crate::featurize::{pca_fit, pca_transform};
use crate::opf::PropagationResult;
use crate::projection::{project, Projection2D, TsneParams};
use crate::split::{stratified_split, Split};
use crate::SampleId;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentParams {
    pub fractions: [f64; 3],
    /// Threshold for SALP; ALP protocols always use zero.
    pub tau: f64,
    pub tsne: TsneParams,
    /// Reduce features with PCA fitted on S and U before anything else.
    pub pca_dims: Option<usize>,
    pub user: UserPolicy,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            fractions: [0.03, 0.67, 0.30],
            tau: DEFAULT_TAU,
            tsne: TsneParams::default(),
            pca_dims: None,
            user: UserPolicy::OracleAll,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    /// Ordered by protocol as requested, then by seed.
    pub reports: Vec<EvaluationReport>,
    pub summaries: Vec<Summary>,
}

/// Latent features for every sample: the raw features, or PCA codes fitted on `fit_ids`.
pub fn prepare_latent(dataset: &Dataset, fit_ids: &[SampleId], pca_dims: Option<usize>, seed: u64) -> Result<FeatureMatrix> {
    match pca_dims {
        None => Ok(dataset.features.clone()),
        Some(k) => {
            let (model, _) = pca_fit(&dataset.features.select_rows(fit_ids)?, k, seed)?;
            pca_transform(&model, &dataset.features)
        }
    }
}

/// Everything one seed's protocols share, computed on first use.
struct SeedContext<'a> {
    dataset: &'a Dataset,
    params: &'a ExperimentParams,
    seed: u64,
    split: Split,
    train_ids: Vec<SampleId>,
    latent: FeatureMatrix,
    projection: Option<Projection2D>,
    in_2d: Option<PropagationResult>,
    in_nd: Option<PropagationResult>,
}

impl<'a> SeedContext<'a> {
    fn new(dataset: &'a Dataset, params: &'a ExperimentParams, seed: u64) -> Result<Self> {
        let split = stratified_split(&dataset.samples, params.fractions, seed)?;
        let train_ids = split.training_ids();
        let latent = prepare_latent(dataset, &train_ids, params.pca_dims, seed)?;
        Ok(Self { dataset, params, seed, split, train_ids, latent, projection: None, in_2d: None, in_nd: None })
    }

    fn propagation(&mut self, space: Space) -> Result<PropagationResult> {
        match space {
            Space::Projection => {
                if self.in_2d.is_none() {
                    if self.projection.is_none() {
                        self.projection = Some(project(&self.latent, &self.train_ids, &self.params.tsne, self.seed)?);
                    }
                    let proj = self.projection.as_ref().unwrap();
                    self.in_2d = Some(propagate(&proj.points(), &proj.ids, &self.split, &self.dataset.samples)?);
                }
                Ok(self.in_2d.clone().unwrap())
            }
            Space::Latent => {
                if self.in_nd.is_none() {
                    let rows = self.latent.select_rows(&self.train_ids)?;
                    self.in_nd = Some(propagate(&rows, &self.train_ids, &self.split, &self.dataset.samples)?);
                }
                Ok(self.in_nd.clone().unwrap())
            }
        }
    }

    fn run(&mut self, protocol: Protocol) -> Result<EvaluationReport> {
        let propagation = match protocol.space() {
            Some(space) => self.propagation(space)?,
            None => PropagationResult { samples: Vec::new() },
        };
        let tau = match protocol {
            Protocol::Alp2d | Protocol::AlpNd => 0.0,
            _ => self.params.tau,
        };
        let mut session =
            SessionState::new(protocol, self.dataset.n_classes, self.seed, self.split.clone(), None, propagation, tau)?;
        if protocol.takes_manual_labels() {
            let batch = session.simulate_user(self.dataset, self.params.user, self.seed)?;
            session.apply_manual_labels(&batch)?;
        }
        session.finalize_and_train(self.dataset, &self.latent)
    }
}

/// Runs each protocol on each seed. Protocols on the same seed share the
/// split, latent features, projection and propagation.
pub fn run_protocols(
    dataset: &Dataset,
    protocols: &[Protocol],
    seeds: &[u64],
    params: &ExperimentParams,
) -> Result<ExperimentResult> {
    let mut by_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut ctx = SeedContext::new(dataset, params, seed)?;
        by_seed.push(protocols.iter().map(|&p| ctx.run(p)).collect::<Result<Vec<_>>>()?);
    }
    let reports: Vec<EvaluationReport> =
        (0..protocols.len()).flat_map(|pi| by_seed.iter().map(move |runs| runs[pi].clone())).collect();
    let summaries = summarize(&reports);
    Ok(ExperimentResult { reports, summaries })
}

pub fn run_experiment(dataset: &Dataset, protocol: Protocol, seeds: &[u64], params: &ExperimentParams) -> Result<ExperimentResult> {
    run_protocols(dataset, &[protocol], seeds, params)
}
