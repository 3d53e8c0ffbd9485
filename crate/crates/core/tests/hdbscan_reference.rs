//! HDBSCAN labelings compared with scikit-learn output on identical inputs
//! (see `fixtures/gen_hdbscan_reference.py`).

#[path = "common/hdbscan_fixture.rs"]
mod hdbscan_fixture;

use gsflow::discovery::{hdbscan, same_partition};
use rand::seq::SliceRandom;
use rand::SeedableRng;

#[test]
fn partitions_match_reference_without_ties() {
    let fixture = hdbscan_fixture::load();
    let mut failures = Vec::new();
    for case in fixture.cases.iter().filter(|c| !c.tied) {
        let ours = case.run();
        if !same_partition(&ours.labels, &case.reference()) {
            failures.push(format!(
                "{}: ours {:?}\n  reference {:?}",
                case.name,
                ours.signed_labels(),
                case.labels
            ));
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn tied_cases_agree_outside_tied_points() {
    let fixture = hdbscan_fixture::load();
    for case in fixture.cases.iter().filter(|c| c.tied) {
        let ours = case.run();
        assert!(case.agrees_outside_ties(&ours.labels), "{}", case.name);
    }
}

#[test]
fn shuffling_points_preserves_the_partition() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for case in hdbscan_fixture::load().cases {
        let base = case.run();
        for _ in 0..3 {
            let mut perm: Vec<usize> = (0..case.points.len()).collect();
            perm.shuffle(&mut rng);
            let shuffled: Vec<[f64; 3]> = perm.iter().map(|&i| case.points[i]).collect();
            let lab = hdbscan(&shuffled, &case.params()).unwrap();
            let mut unshuffled = vec![None; perm.len()];
            for (slot, &i) in perm.iter().enumerate() {
                unshuffled[i] = lab.labels[slot];
            }
            assert!(same_partition(&base.labels, &unshuffled), "{}", case.name);
        }
    }
}

/// Connected components of the graph with an edge wherever `d ≤ eps`.
fn components_at(points: &[[f64; 3]], eps: f64) -> Vec<usize> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = (0..3)
                .map(|k| (points[i][k] - points[j][k]).powi(2))
                .sum::<f64>()
                .sqrt();
            if d <= eps {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

#[test]
fn degenerates_to_single_linkage_components() {
    use gsflow::discovery::HdbscanParams;
    use rand::Rng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    for trial in 0..25 {
        // Groups of 2..=20 points, each tight compared with the gap between groups.
        let groups = rng.gen_range(1..10);
        let mut points = Vec::new();
        for g in 0..groups {
            let center = [
                g as f64 * 10.0,
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            ];
            for _ in 0..rng.gen_range(2..=20) {
                points.push(std::array::from_fn(|k| {
                    center[k] + rng.gen_range(-0.3..0.3)
                }));
            }
        }
        points.truncate(200);
        let eps = 2.0;
        let params = HdbscanParams {
            min_samples: 1,
            min_cluster_size: 2,
            epsilon: eps,
            allow_single_cluster: true,
        };
        let lab = hdbscan(&points, &params).unwrap();
        let comps: Vec<Option<usize>> = components_at(&points, eps).into_iter().map(Some).collect();
        assert!(
            same_partition(&lab.labels, &comps),
            "trial {trial}: {:?}",
            lab.signed_labels()
        );
    }
}
