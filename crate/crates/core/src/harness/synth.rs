//! Planted-cluster corpus for learnability checks.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::dataio::{ItemCatalog, Session};
use crate::graphs::cosine;
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedSpec {
    pub items: usize,
    pub clusters: usize,
    pub session_len: usize,
    pub train_sessions: usize,
    pub test_sessions: usize,
}

impl Default for PlantedSpec {
    /// 100 items in 5 clusters; 400 train and 100 test sessions of 6 items
    /// give 2,000 and 500 prefix examples.
    fn default() -> Self {
        PlantedSpec {
            items: 100,
            clusters: 5,
            session_len: 6,
            train_sessions: 400,
            test_sessions: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCorpus {
    pub catalog: ItemCatalog,
    pub train: Vec<Session>,
    pub test: Vec<Session>,
    pub cluster_of: Vec<usize>,
}

/// Items are split into equal contiguous clusters; each session picks a
/// cluster uniformly and then distinct items from it in random order.
pub fn planted_corpus(spec: PlantedSpec, seed: u64) -> PlantedCorpus {
    assert!(spec.clusters > 0 && spec.items % spec.clusters == 0, "clusters must divide items");
    let size = spec.items / spec.clusters;
    assert!(spec.session_len <= size, "sessions longer than a cluster");
    let mut rng = substream(seed, Stream::Synthetic, &[]);
    let mut draw = |n: usize| -> Vec<Session> {
        (0..n)
            .map(|_| {
                let c = rng.random_range(0..spec.clusters);
                let mut members: Vec<usize> = (c * size..(c + 1) * size).collect();
                let (picked, _) = members.partial_shuffle(&mut rng, spec.session_len);
                Session::new(picked.to_vec())
            })
            .collect()
    };
    let train = draw(spec.train_sessions);
    let test = draw(spec.test_sessions);
    PlantedCorpus {
        catalog: ItemCatalog::from_raw_ids((0..spec.items).map(|i| format!("i{i}")).collect())
            .expect("distinct ids"),
        train,
        test,
        cluster_of: (0..spec.items).map(|i| i / size).collect(),
    }
}

/// Mean cosine between embeddings of items in the same cluster and in
/// different clusters.
pub fn cluster_alignment(embeddings: ArrayView2<f64>, cluster_of: &[usize]) -> (f64, f64) {
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..cluster_of.len() {
        for j in i + 1..cluster_of.len() {
            let c = cosine(embeddings.row(i), embeddings.row(j));
            if cluster_of[i] == cluster_of[j] {
                intra += c;
                ni += 1;
            } else {
                inter += c;
                nx += 1;
            }
        }
    }
    (intra / ni.max(1) as f64, inter / nx.max(1) as f64)
}
