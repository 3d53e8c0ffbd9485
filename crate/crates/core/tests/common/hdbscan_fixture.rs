#![allow(dead_code)]

use gsflow::discovery::{hdbscan, ClusterLabeling, HdbscanParams};
use serde::Deserialize;

#[derive(Deserialize)]
pub struct Case {
    pub name: String,
    pub min_samples: usize,
    pub min_cluster_size: usize,
    pub epsilon: f64,
    pub points: Vec<[f64; 3]>,
    pub labels: Vec<i64>,
    /// Whether the reference met a merge tied with a cluster split.
    pub tied: bool,
    /// Points that left a cluster exactly at a split level in the reference.
    pub tied_points: Vec<usize>,
}

#[derive(Deserialize)]
pub struct Fixture {
    pub generator: String,
    pub cases: Vec<Case>,
}

pub fn load() -> Fixture {
    serde_json::from_str(include_str!("../fixtures/hdbscan_reference.json")).unwrap()
}

impl Case {
    pub fn params(&self) -> HdbscanParams {
        HdbscanParams {
            min_samples: self.min_samples,
            min_cluster_size: self.min_cluster_size,
            epsilon: self.epsilon,
            allow_single_cluster: true,
        }
    }

    pub fn run(&self) -> ClusterLabeling {
        hdbscan(&self.points, &self.params()).unwrap()
    }

    pub fn reference(&self) -> Vec<Option<usize>> {
        to_options(&self.labels)
    }

    /// Partition agreement with the tied points left out.
    pub fn agrees_outside_ties(&self, ours: &[Option<usize>]) -> bool {
        let mut amb = vec![false; ours.len()];
        for &p in &self.tied_points {
            amb[p] = true;
        }
        let reference = self.reference();
        let n = ours.len();
        for i in (0..n).filter(|&i| !amb[i]) {
            if ours[i].is_none() != reference[i].is_none() {
                return false;
            }
            for j in (0..n).filter(|&j| !amb[j]) {
                let a = ours[i].is_some() && ours[i] == ours[j];
                let b = reference[i].is_some() && reference[i] == reference[j];
                if a != b {
                    return false;
                }
            }
        }
        true
    }
}

pub fn to_options(labels: &[i64]) -> Vec<Option<usize>> {
    labels
        .iter()
        .map(|&l| if l < 0 { None } else { Some(l as usize) })
        .collect()
}
