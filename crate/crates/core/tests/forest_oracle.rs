//! OPF forests against exhaustive enumeration of simple paths on tiny graphs.

use proptest::prelude::*;
use salp_core::opf::{minimax_forest, opf_semi_propagate, Metric};
use salp_core::FeatureMatrix;

fn dist(p: &[(i32, i32)], i: usize, j: usize) -> f64 {
    let (dx, dy) = ((p[i].0 - p[j].0) as f64, (p[i].1 - p[j].1) as f64);
    (dx * dx + dy * dy).sqrt()
}

/// Smallest bottleneck over every simple path from any root to each node.
fn brute_force(p: &[(i32, i32)], roots: &[usize]) -> Vec<f64> {
    fn walk(p: &[(i32, i32)], at: usize, worst: f64, on_path: &mut Vec<bool>, best: &mut [f64]) {
        best[at] = best[at].min(worst);
        for next in 0..p.len() {
            if !on_path[next] {
                on_path[next] = true;
                walk(p, next, worst.max(dist(p, at, next)), on_path, best);
                on_path[next] = false;
            }
        }
    }
    let mut best = vec![f64::INFINITY; p.len()];
    for &r in roots {
        let mut on_path = vec![false; p.len()];
        on_path[r] = true;
        walk(p, r, 0.0, &mut on_path, &mut best);
    }
    best
}

fn instance() -> impl Strategy<Value = (Vec<(i32, i32)>, Vec<Option<usize>>)> {
    (2usize..=8).prop_flat_map(|n| {
        (
            prop::collection::vec((-5i32..=5, -5i32..=5), n),
            prop::collection::vec(prop::option::weighted(0.4, 0usize..3), n),
        )
    })
}

fn matrix(p: &[(i32, i32)]) -> FeatureMatrix {
    FeatureMatrix::from_rows(&p.iter().map(|&(x, y)| [x as f64, y as f64]).collect::<Vec<_>>()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn forest_costs_are_optimal((points, roles) in instance()) {
        let roots: Vec<(usize, usize)> = roles.iter().enumerate().filter_map(|(i, r)| r.map(|l| (i, l))).collect();
        prop_assume!(!roots.is_empty());
        let m = matrix(&points);
        prop_assert_eq!(m.dist(0, 1), dist(&points, 0, 1));
        let forest = minimax_forest(&m, &roots).unwrap();
        let expected = brute_force(&points, &roots.iter().map(|r| r.0).collect::<Vec<_>>());
        prop_assert_eq!(forest.cost, expected);
    }

    #[test]
    fn semi_supervised_labels_are_optimal((points, roles) in instance()) {
        let supervised: Vec<(usize, usize)> = roles.iter().enumerate().filter_map(|(i, r)| r.map(|l| (i, l))).collect();
        let mut classes: Vec<usize> = supervised.iter().map(|s| s.1).collect();
        classes.sort_unstable();
        classes.dedup();
        prop_assume!(classes.len() >= 2);
        let unsupervised: Vec<usize> = (0..points.len()).filter(|i| roles[*i].is_none()).collect();
        let result = opf_semi_propagate(&matrix(&points), &supervised, &unsupervised).unwrap();

        let per_class: Vec<Vec<f64>> = classes
            .iter()
            .map(|&c| brute_force(&points, &supervised.iter().filter(|s| s.1 == c).map(|s| s.0).collect::<Vec<_>>()))
            .collect();
        prop_assert_eq!(result.samples.len(), unsupervised.len());
        for s in &result.samples {
            let costs: Vec<f64> = per_class.iter().map(|c| c[s.id]).collect();
            let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
            let winner = costs.iter().position(|&c| c == best).unwrap();
            let runner_up = costs.iter().enumerate().filter(|(i, _)| *i != winner).map(|(_, c)| *c).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(s.label, classes[winner]);
            prop_assert_eq!(s.k_a, best);
            prop_assert_eq!(s.k_b, runner_up);
        }
    }
}
