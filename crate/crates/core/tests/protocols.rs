use salp_core::pipeline::{run_protocols, ExperimentParams, Protocol, SessionState};
use salp_core::synth::{blobs, BlobSpec};

fn params() -> ExperimentParams {
    ExperimentParams::default()
}

#[test]
fn salp_dominates_on_separated_blobs() {
    let spec = BlobSpec { n_classes: 4, n_dims: 6, n_samples: 400, separation: 6.0 };
    let ds = blobs(&spec, 11).unwrap();
    let protocols = [Protocol::Nlp, Protocol::Alp2d, Protocol::AlpNd, Protocol::Ilp, Protocol::Salp];
    let result = run_protocols(&ds, &protocols, &[1, 2], &params()).unwrap();
    assert_eq!(result.reports.len(), 10);
    assert_eq!(result.summaries.len(), 5);
    for seed in [1, 2] {
        let kappa = |p| result.reports.iter().find(|r| r.protocol == p && r.seed == seed).unwrap().kappa;
        assert!(kappa(Protocol::Salp) >= kappa(Protocol::Alp2d), "seed {seed}");
        assert!(kappa(Protocol::Alp2d) >= kappa(Protocol::Nlp), "seed {seed}");
    }
    for r in &result.reports {
        assert_eq!(r.n_s + r.n_u + r.n_t, 400);
        match r.protocol {
            Protocol::Nlp => assert_eq!((r.n_lc, r.n_li, r.propagation_accuracy), (0, 0, None)),
            Protocol::Alp2d | Protocol::AlpNd => assert_eq!((r.n_lc, r.n_li), (r.n_u, 0)),
            Protocol::Ilp => assert_eq!((r.n_lc, r.n_li, r.propagation_accuracy), (0, r.n_u, Some(1.0))),
            Protocol::Salp => assert_eq!(r.n_lc + r.n_li, r.n_u),
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let ds = blobs(&BlobSpec { n_classes: 3, n_dims: 4, n_samples: 200, separation: 4.0 }, 5).unwrap();
    let a = run_protocols(&ds, &[Protocol::Salp], &[7], &params()).unwrap();
    let b = run_protocols(&ds, &[Protocol::Salp], &[7], &params()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn finalized_training_set_keeps_true_labels_on_s() {
    let ds = blobs(&BlobSpec { n_classes: 3, n_dims: 4, n_samples: 150, separation: 3.0 }, 2).unwrap();
    let split = salp_core::stratified_split(&ds.samples, [0.1, 0.6, 0.3], 4).unwrap();
    let session = SessionState::new(
        Protocol::Salp,
        3,
        4,
        split.clone(),
        None,
        salp_core::pipeline::propagate(&ds.features, &(0..150).collect::<Vec<_>>(), &split, &ds.samples).unwrap(),
        0.75,
    )
    .unwrap();
    let training = session.training_set(&ds).unwrap();
    for &id in &split.s_ids {
        let (_, label) = training.iter().find(|(i, _)| *i == id).unwrap();
        assert_eq!(Some(*label), ds.samples[id].true_label);
    }
}
