//! Straight-line reference implementations and fixtures shared by the
//! integration tests. Everything here uses plain nested loops over
//! `Vec<Vec<f64>>` so it shares no code with the library's tape.

#![allow(dead_code)]

pub mod checks;

use dgcl::config::TrainConfig;
use dgcl::dataio::Example;
use dgcl::encoder::AttentionWeights;
use dgcl::propagation::GgnnWeights;
use ndarray::Array2;

pub type M = Vec<Vec<f64>>;

pub fn m(a: &Array2<f64>) -> M {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn arr(x: &M) -> Array2<f64> {
    let cols = x.first().map_or(0, Vec::len);
    Array2::from_shape_fn((x.len(), cols), |(i, j)| x[i][j])
}

pub fn mm(a: &M, b: &M) -> M {
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn vm(v: &[f64], b: &M) -> Vec<f64> {
    mm(&vec![v.to_vec()], b).remove(0)
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &M) -> f64 {
    let mut d: f64 = 0.0;
    assert_eq!(a.nrows(), b.len());
    for (i, row) in b.iter().enumerate() {
        assert_eq!(a.ncols(), row.len());
        for (j, &v) in row.iter().enumerate() {
            d = d.max((a[[i, j]] - v).abs());
        }
    }
    d
}

/// One gated layer: aggregation, update and reset gates, candidate state,
/// convex update. Row convention, `W_z`, `W_r`, `W_h` are `2d × d`.
pub fn ggnn_step(x: &M, a_in: &M, a_out: &M, w: &GgnnWeights) -> M {
    let n = x.len();
    let d = x[0].len();
    let (w_in, w_out, b_in, b_out) = (m(&w.w_in), m(&w.w_out), m(&w.b_in), m(&w.b_out));
    let (w_z, u_z, w_r, u_r, w_h, u_h) = (m(&w.w_z), m(&w.u_z), m(&w.w_r), m(&w.u_r), m(&w.w_h), m(&w.u_h));
    let mut out = vec![vec![0.0; d]; n];
    for i in 0..n {
        let mut agg_in = vec![0.0; d];
        let mut agg_out = vec![0.0; d];
        for j in 0..n {
            for t in 0..d {
                agg_in[t] += a_in[i][j] * x[j][t];
                agg_out[t] += a_out[i][j] * x[j][t];
            }
        }
        let mi = vm(&agg_in, &w_in);
        let mo = vm(&agg_out, &w_out);
        let mut c = Vec::with_capacity(2 * d);
        for t in 0..d {
            c.push(mi[t] + b_in[0][t]);
        }
        for t in 0..d {
            c.push(mo[t] + b_out[0][t]);
        }
        let cz = vm(&c, &w_z);
        let xz = vm(&x[i], &u_z);
        let cr = vm(&c, &w_r);
        let xr = vm(&x[i], &u_r);
        let z: Vec<f64> = (0..d).map(|t| sig(cz[t] + xz[t])).collect();
        let r: Vec<f64> = (0..d).map(|t| sig(cr[t] + xr[t])).collect();
        let rx: Vec<f64> = (0..d).map(|t| r[t] * x[i][t]).collect();
        let ch = vm(&c, &w_h);
        let rh = vm(&rx, &u_h);
        for t in 0..d {
            let cand = (ch[t] + rh[t]).tanh();
            out[i][t] = (1.0 - z[t]) * x[i][t] + z[t] * cand;
        }
    }
    out
}

/// Soft-attention session embedding over positions `alias`.
pub fn encode(nodes: &M, alias: &[usize], att: &AttentionWeights) -> Vec<f64> {
    let d = nodes[0].len();
    let (q, w1, w2, w3) = (m(&att.q), m(&att.w1), m(&att.w2), m(&att.w3));
    let last = &nodes[*alias.last().unwrap()];
    let l2 = vm(last, &w2);
    let mut g = vec![0.0; d];
    for &a in alias {
        let e = &nodes[a];
        let e1 = vm(e, &w1);
        let mut alpha = 0.0;
        for t in 0..d {
            alpha += sig(e1[t] + l2[t]) * q[t][0];
        }
        for t in 0..d {
            g[t] += alpha * e[t];
        }
    }
    let mut both = last.clone();
    both.extend(g);
    vm(&both, &w3)
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Sigmoid projection with the bias added after the activation.
pub fn project(x: &M, w: &M, b: &[f64]) -> M {
    mm(x, w)
        .into_iter()
        .map(|row| row.iter().zip(b).map(|(v, bb)| sig(*v) + bb).collect())
        .collect()
}

pub fn bce(probs: &[f64], target: usize) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if i == target {
                -p.max(1e-12).ln()
            } else {
                -(1.0 - p).max(1e-12).ln()
            }
        })
        .sum()
}

/// Contrastive loss over explicit pair lists: `-mean ln σ(H+) - mean ln(1 - σ(H-))`.
pub fn pair_loss(
    anchor: &M,
    positive: &M,
    negative: &M,
    anchors: &[usize],
    negs: &[(usize, usize)],
    disc: Option<&M>,
) -> f64 {
    let h = |a: &[f64], b: &[f64]| match disc {
        None => dot(a, b),
        Some(w) => dot(&vm(a, w), b),
    };
    let pos: f64 = anchors
        .iter()
        .map(|&i| sig(h(&anchor[i], &positive[i])).ln())
        .sum::<f64>()
        / anchors.len() as f64;
    let neg: f64 = negs
        .iter()
        .map(|&(i, j)| (1.0 - sig(h(&anchor[i], &negative[j]))).ln())
        .sum::<f64>()
        / negs.len() as f64;
    -pos - neg
}

fn dist(x: &M) -> M {
    let n = x.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            d[i][j] = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        }
    }
    d
}

fn center(d: &M) -> M {
    let n = d.len();
    let row: Vec<f64> = d.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let col: Vec<f64> = (0..n).map(|j| d.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let all: f64 = row.iter().sum::<f64>() / n as f64;
    (0..n)
        .map(|i| (0..n).map(|j| d[i][j] - row[i] - col[j] + all).collect())
        .collect()
}

fn mean_prod(a: &M, b: &M) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += a[i][j] * b[i][j];
        }
    }
    s / (n * n) as f64
}

/// Distance correlation by explicit double centering.
pub fn dcor(x: &M, y: &M) -> f64 {
    let a = center(&dist(x));
    let b = center(&dist(y));
    let vx = mean_prod(&a, &a);
    let vy = mean_prod(&b, &b);
    if vx * vy <= 0.0 {
        return 0.0;
    }
    mean_prod(&a, &b).max(0.0).sqrt() / (vx * vy).sqrt().sqrt()
}

/// Small model settings used by the gradient and forward tests.
pub fn toy_config() -> TrainConfig {
    TrainConfig {
        dim: 4,
        factors: 2,
        ..Default::default()
    }
}

/// Three sessions, every one with at least two distinct items.
pub fn toy_examples() -> Vec<Example> {
    vec![
        Example::new(vec![0, 1, 2, 1], 3),
        Example::new(vec![3, 4], 5),
        Example::new(vec![5, 2, 0], 1),
    ]
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) < 1e-10 {
        0.0
    } else {
        diff / na.max(nb)
    }
}
