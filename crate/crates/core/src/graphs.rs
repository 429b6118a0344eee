//! The three per-session graph views: the directed session graph, the
//! factor-weighted graphs, and the star graph with a satellite node.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng as _;
use serde::Serialize;

use crate::dataio::Session;
use crate::rng::{derive_seed, substream, Rng, Stream};

/// Directed session graph over the unique items of a session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionGraph {
    /// Unique item indices in first-occurrence order.
    pub nodes: Vec<usize>,
    /// Node position of each session position.
    pub alias: Vec<usize>,
    /// Unweighted adjacency; entry `(i, j)` is 1 when `i` is followed by `j`.
    pub raw: Array2<f64>,
    /// Outgoing weights, row-normalized by out-degree.
    pub adj_out: Array2<f64>,
    /// Incoming weights (transposed relation), row-normalized by in-degree.
    pub adj_in: Array2<f64>,
}

/// Divides every non-empty row by its sum.
pub fn row_normalize(a: ArrayView2<f64>) -> Array2<f64> {
    let mut out = a.to_owned();
    for mut row in out.rows_mut() {
        let s: f64 = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|x| x / s);
        }
    }
    out
}

fn in_out(raw: &Array2<f64>, normalize: bool) -> (Array2<f64>, Array2<f64>) {
    if normalize {
        (row_normalize(raw.t()), row_normalize(raw.view()))
    } else {
        (raw.t().to_owned(), raw.clone())
    }
}

impl SessionGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Directed edges `(from, to)` of the unweighted adjacency, row-major.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.raw
            .indexed_iter()
            .filter(|(_, &w)| w != 0.0)
            .map(|(ij, _)| ij)
            .collect()
    }

    /// Node index of the last session position.
    pub fn last_node(&self) -> usize {
        *self.alias.last().expect("session graph has at least one position")
    }

    fn with_raw(&self, raw: Array2<f64>, normalize: bool) -> SessionGraph {
        let (adj_in, adj_out) = in_out(&raw, normalize);
        SessionGraph {
            nodes: self.nodes.clone(),
            alias: self.alias.clone(),
            raw,
            adj_out,
            adj_in,
        }
    }
}

/// Builds the directed session graph. Repeated transitions collapse to a
/// single unit edge.
pub fn build_session_graph(session: &Session, normalize: bool) -> SessionGraph {
    assert!(!session.is_empty(), "session graph of an empty session");
    let mut nodes: Vec<usize> = Vec::new();
    let alias: Vec<usize> = session
        .items
        .iter()
        .map(|&item| match nodes.iter().position(|&n| n == item) {
            Some(p) => p,
            None => {
                nodes.push(item);
                nodes.len() - 1
            }
        })
        .collect();
    let n = nodes.len();
    let mut raw = Array2::zeros((n, n));
    for w in alias.windows(2) {
        raw[[w[0], w[1]]] = 1.0;
    }
    let (adj_in, adj_out) = in_out(&raw, normalize);
    SessionGraph {
        nodes,
        alias,
        raw,
        adj_out,
        adj_in,
    }
}

/// Cosine similarity with zero-norm vectors mapped to 0.
pub fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorAdjacency {
    /// Zero-based factor index.
    pub k: usize,
    pub matrix: Array2<f64>,
}

/// Replaces every edge weight with the cosine similarity of the two
/// endpoints' factor embeddings. Non-edges stay zero.
pub fn build_factor_adjacency(
    graph: &SessionGraph,
    factor_embeddings: ArrayView2<f64>,
    k: usize,
) -> FactorAdjacency {
    assert_eq!(
        factor_embeddings.nrows(),
        graph.num_nodes(),
        "one factor embedding per node"
    );
    let mut matrix = Array2::zeros(graph.raw.raw_dim());
    for (i, j) in graph.edges() {
        matrix[[i, j]] = cosine(factor_embeddings.row(i), factor_embeddings.row(j));
    }
    FactorAdjacency { k, matrix }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarGraph {
    pub base: SessionGraph,
    /// Index of the satellite; always `base.num_nodes()`.
    pub satellite_index: usize,
    /// Unweighted adjacency over real nodes plus the satellite.
    pub raw: Array2<f64>,
    pub adj_out: Array2<f64>,
    pub adj_in: Array2<f64>,
    pub theta: f64,
    pub seed: u64,
}

impl StarGraph {
    pub fn num_nodes(&self) -> usize {
        self.satellite_index + 1
    }

    pub fn satellite_edges(&self) -> usize {
        let s = self.satellite_index;
        let out = self.raw.row(s).iter().filter(|&&w| w != 0.0).count();
        let inc = self.raw.column(s).iter().filter(|&&w| w != 0.0).count();
        out + inc
    }
}

/// Seed for the star edges of one session in one epoch.
pub fn star_seed(global_seed: u64, epoch: u64, session_index: u64) -> u64 {
    derive_seed(global_seed, Stream::Star, &[epoch, session_index])
}

/// Mean of the embeddings at every session position.
pub fn satellite_embedding(graph: &SessionGraph, item_embeddings: ArrayView2<f64>) -> Array1<f64> {
    let mut acc = Array1::zeros(item_embeddings.ncols());
    for &a in &graph.alias {
        acc += &item_embeddings.row(a);
    }
    acc / graph.alias.len() as f64
}

/// Links the satellite to real nodes at random. For each real node, in
/// order, one draw decides satellite → node and a second decides
/// node → satellite; each succeeds with probability `theta`.
pub fn sample_star_links(n: usize, theta: f64, seed: u64) -> Vec<(bool, bool)> {
    assert!((0.0..=1.0).contains(&theta), "theta must lie in [0, 1]");
    let mut rng: Rng = rand::SeedableRng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let out = rng.random::<f64>() < theta;
            let inc = rng.random::<f64>() < theta;
            (out, inc)
        })
        .collect()
}

/// Appends a satellite node and connects it randomly to real nodes.
pub fn build_star_structure(graph: &SessionGraph, theta: f64, seed: u64, normalize: bool) -> StarGraph {
    let n = graph.num_nodes();
    assert!(n >= 1, "star graph needs at least one node");
    let mut raw = Array2::zeros((n + 1, n + 1));
    raw.slice_mut(ndarray::s![..n, ..n]).assign(&graph.raw);
    for (i, (out, inc)) in sample_star_links(n, theta, seed).into_iter().enumerate() {
        if out {
            raw[[n, i]] = 1.0;
        }
        if inc {
            raw[[i, n]] = 1.0;
        }
    }
    let (adj_in, adj_out) = in_out(&raw, normalize);
    StarGraph {
        base: graph.clone(),
        satellite_index: n,
        raw,
        adj_out,
        adj_in,
        theta,
        seed,
    }
}

/// Star graph plus the satellite embedding (mean over session positions).
pub fn build_star_graph(
    graph: &SessionGraph,
    item_embeddings: ArrayView2<f64>,
    theta: f64,
    seed: u64,
    normalize: bool,
) -> (StarGraph, Array1<f64>) {
    (
        build_star_structure(graph, theta, seed, normalize),
        satellite_embedding(graph, item_embeddings),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct DropoutRates {
    pub edge: f64,
    pub node: f64,
}

impl Default for DropoutRates {
    fn default() -> Self {
        DropoutRates {
            edge: 0.2,
            node: 0.1,
        }
    }
}

/// Edge-and-node dropout view. Dropped nodes keep their row but lose every
/// edge; the node of the last clicked item is never dropped.
pub fn build_dropout_graph(
    graph: &SessionGraph,
    rates: DropoutRates,
    seed: u64,
    normalize: bool,
) -> SessionGraph {
    let mut rng: Rng = rand::SeedableRng::seed_from_u64(seed);
    let n = graph.num_nodes();
    let last = graph.last_node();
    let dropped: Vec<bool> = (0..n)
        .map(|i| rng.random::<f64>() < rates.node && i != last)
        .collect();
    let mut raw = graph.raw.clone();
    for ((i, j), w) in raw.indexed_iter_mut() {
        if *w == 0.0 {
            continue;
        }
        let edge_dropped = rng.random::<f64>() < rates.edge;
        if edge_dropped || dropped[i] || dropped[j] {
            *w = 0.0;
        }
    }
    graph.with_raw(raw, normalize)
}

pub fn dropout_seed(global_seed: u64, epoch: u64, session_index: u64) -> u64 {
    derive_seed(global_seed, Stream::Dropout, &[epoch, session_index])
}

#[derive(Debug, Serialize)]
struct GraphDump<'a> {
    nodes: &'a [usize],
    alias: &'a [usize],
    edges: Vec<(usize, usize, f64)>,
}

/// Debug dump of a weighted adjacency as a JSON edge list.
pub fn dump_json(graph: &SessionGraph, weights: Option<&Array2<f64>>) -> String {
    let w = weights.unwrap_or(&graph.adj_out);
    let edges = w
        .indexed_iter()
        .filter(|(_, &x)| x != 0.0)
        .map(|((i, j), &x)| (i, j, x))
        .collect();
    serde_json::to_string(&GraphDump {
        nodes: &graph.nodes,
        alias: &graph.alias,
        edges,
    })
    .expect("graph dump serializes")
}

/// Mean and standard error of the satellite edge count over `trials`
/// consecutive seeds.
pub fn satellite_edge_statistics(n: usize, theta: f64, seed: u64, trials: usize) -> (f64, f64) {
    let mut rng = substream(seed, Stream::Star, &[n as u64]);
    let counts: Vec<f64> = (0..trials)
        .map(|_| {
            let s: u64 = rng.random();
            sample_star_links(n, theta, s)
                .iter()
                .map(|&(o, i)| o as usize + i as usize)
                .sum::<usize>() as f64
        })
        .collect();
    let mean = counts.iter().sum::<f64>() / trials as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (trials as f64 - 1.0);
    (mean, (var / trials as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn g(items: &[usize]) -> SessionGraph {
        build_session_graph(&Session::new(items.to_vec()), true)
    }

    #[test]
    fn single_item_has_no_edges() {
        let graph = g(&[4]);
        assert_eq!(graph.nodes, vec![4]);
        assert_eq!(graph.raw, array![[0.0]]);
        assert_eq!(graph.adj_out, array![[0.0]]);
    }

    #[test]
    fn repeated_item_shares_a_node() {
        let graph = g(&[7, 9, 7]);
        assert_eq!(graph.nodes, vec![7, 9]);
        assert_eq!(graph.alias, vec![0, 1, 0]);
        assert_eq!(graph.raw, array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn out_weights_split_by_out_degree() {
        // a b c b d: b -> c and b -> d
        let graph = g(&[0, 1, 2, 1, 3]);
        assert_eq!(graph.raw.row(1).sum(), 2.0);
        assert_eq!(graph.adj_out[[1, 2]], 0.5);
        assert_eq!(graph.adj_out[[1, 3]], 0.5);
        // in-view of b: a -> b and c -> b
        assert_eq!(graph.adj_in[[1, 0]], 0.5);
        assert_eq!(graph.adj_in[[1, 2]], 0.5);
        let support = |a: &Array2<f64>| a.mapv(|x| (x != 0.0) as u8);
        assert_eq!(support(&graph.adj_in), support(&graph.raw.t().to_owned()));
    }

    #[test]
    fn unnormalized_flag_keeps_unit_weights() {
        let graph = build_session_graph(&Session::new(vec![0, 1, 2, 1, 3]), false);
        assert_eq!(graph.adj_out, graph.raw);
        assert_eq!(graph.adj_in, graph.raw.t());
    }

    #[test]
    fn repeated_transitions_collapse() {
        let graph = g(&[0, 1, 0, 1]);
        assert_eq!(graph.raw[[0, 1]], 1.0);
        assert_eq!(graph.raw[[1, 0]], 1.0);
    }

    #[test]
    fn factor_adjacency_cosines() {
        let graph = g(&[0, 1]);
        let same = build_factor_adjacency(&graph, array![[0.3, 0.4], [0.3, 0.4]].view(), 0);
        assert!((same.matrix[[0, 1]] - 1.0).abs() < 1e-15);
        assert_eq!(same.matrix[[1, 0]], 0.0);
        let orth = build_factor_adjacency(&graph, array![[1.0, 0.0], [0.0, 1.0]].view(), 1);
        assert_eq!(orth.matrix[[0, 1]], 0.0);
        let diag = build_factor_adjacency(&graph, array![[1.0, 1.0], [1.0, 0.0]].view(), 2);
        assert!((diag.matrix[[0, 1]] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let zero = build_factor_adjacency(&graph, array![[0.0, 0.0], [1.0, 0.0]].view(), 0);
        assert_eq!(zero.matrix[[0, 1]], 0.0);
    }

    #[test]
    fn star_theta_extremes() {
        let graph = g(&[0, 1, 2, 0]);
        let emb = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let (star, _) = build_star_graph(&graph, emb.view(), 0.0, 3, true);
        assert_eq!(star.raw.slice(ndarray::s![..3, ..3]), graph.raw);
        assert_eq!(star.satellite_edges(), 0);
        assert_eq!(star.adj_out.slice(ndarray::s![..3, ..3]), graph.adj_out);
        let (star, _) = build_star_graph(&graph, emb.view(), 1.0, 3, true);
        assert_eq!(star.raw.slice(ndarray::s![..3, ..3]), graph.raw);
        assert_eq!(star.satellite_edges(), 6);
        assert_eq!(star.raw[[3, 3]], 0.0);
    }

    #[test]
    fn satellite_is_position_mean() {
        let graph = g(&[5]);
        let (_, sat) = build_star_graph(&graph, array![[0.25, -2.0]].view(), 0.5, 1, true);
        assert_eq!(sat, array![0.25, -2.0]);
        let graph = g(&[0, 1, 0]);
        let sat = satellite_embedding(&graph, array![[3.0], [0.0]].view());
        assert_eq!(sat, array![2.0]);
    }

    #[test]
    fn star_is_reproducible() {
        let graph = g(&[0, 1, 2, 3, 4, 5]);
        let emb = Array2::zeros((6, 2));
        let (a, _) = build_star_graph(&graph, emb.view(), 0.3, 11, true);
        let (b, _) = build_star_graph(&graph, emb.view(), 0.3, 11, true);
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_keeps_last_node_and_subsets_edges() {
        let graph = g(&[0, 1, 2, 3, 4, 1, 5]);
        for seed in 0..50 {
            let d = build_dropout_graph(&graph, DropoutRates { edge: 0.5, node: 0.5 }, seed, true);
            for ((i, j), &w) in d.raw.indexed_iter() {
                assert!(w <= graph.raw[[i, j]]);
            }
            assert_eq!(d.nodes, graph.nodes);
        }
        let none = build_dropout_graph(&graph, DropoutRates { edge: 0.0, node: 0.0 }, 1, true);
        assert_eq!(none, graph);
    }

    #[test]
    fn dump_lists_edges() {
        let s = dump_json(&g(&[0, 1]), None);
        assert_eq!(s, r#"{"nodes":[0,1],"alias":[0,1],"edges":[[0,1,1.0]]}"#);
    }
}
