use proptest::prelude::*;
use salp_core::opf::{PropagatedSample, PropagationResult};
use salp_core::pipeline::threshold_split;

fn propagation() -> impl Strategy<Value = PropagationResult> {
    prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..60).prop_map(|pairs| PropagationResult {
        samples: pairs
            .into_iter()
            .enumerate()
            .map(|(id, (a, b))| {
                let (k_a, k_b) = (a.min(b), a.max(b));
                let confidence = if k_a + k_b > 0.0 { 1.0 - k_a / (k_a + k_b) } else { 0.5 };
                PropagatedSample { id, label: 0, k_a, k_b, confidence }
            })
            .collect(),
    })
}

proptest! {
    #[test]
    fn auto_sets_shrink_as_tau_grows(p in propagation()) {
        let u: std::collections::BTreeSet<usize> = p.ids().collect();
        let mut previous: Option<std::collections::BTreeSet<usize>> = None;
        for step in 0..=10 {
            let tau = step as f64 / 10.0;
            let (auto, residue) = threshold_split(&p, tau).unwrap();
            prop_assert!(auto.is_disjoint(&residue));
            prop_assert_eq!(&auto | &residue, u.clone());
            for id in &auto {
                prop_assert!(p.get(*id).unwrap().confidence >= tau);
            }
            if let Some(prev) = &previous {
                prop_assert!(auto.is_subset(prev));
            }
            previous = Some(auto);
        }
    }
}
