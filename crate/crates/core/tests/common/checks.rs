//! Measurements shared by the focused test files and the acceptance run.
//! Each returns the raw quantity (an error, a count, a flag) and leaves
//! the threshold to the caller.

use std::rc::Rc;

use dgcl::config::TrainConfig;
use dgcl::contrast::{
    factor_cl_loss, item_cl_loss, ContrastConfig, DiscVars, Discriminator, FactorNegatives, NegativeTerm, PairIndex,
};
use dgcl::dataio::Session;
use dgcl::disentangle::{dcor, FactorProjection};
use dgcl::encoder::{encode_factor_level, encode_item_level, AttentionWeights};
use dgcl::graphs::{build_factor_adjacency, build_session_graph, build_star_graph};
use dgcl::harness::metrics::{rank_of, RankingReport};
use dgcl::model::{forward, group_of, Batch, Parameters, StepIndex};
use dgcl::predictor::{prediction_loss, score, ScoreVector};
use dgcl::propagation::{run_factor, run_original, run_star, GgnnWeights};
use dgcl::rng::Rng;
use dgcl::tape::Tape;
use ndarray::{Array1, Array2};
use rand::{Rng as _, SeedableRng};

use super::*;

fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

fn random(rng: &mut Rng, r: usize, c: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-bound..bound))
}

fn row_norm(a: &M) -> M {
    a.iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            r.iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect()
        })
        .collect()
}

fn transpose(a: &M) -> M {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// Session-graph adjacency from consecutive transitions, built by hand.
fn oracle_adjacency(nodes: usize, alias: &[usize]) -> (M, M) {
    let mut raw = vec![vec![0.0; nodes]; nodes];
    for w in alias.windows(2) {
        raw[w[0]][w[1]] = 1.0;
    }
    (row_norm(&transpose(&raw)), row_norm(&raw))
}

/// Largest deviation of the propagation cell from the reference, over a
/// two-node graph (one and two layers), a factor channel, and a star graph.
pub fn ggnn_error() -> f64 {
    let mut r = rng(11);
    let mut worst: f64 = 0.0;

    // a -> b
    let g = build_session_graph(&Session::new(vec![7, 9]), true);
    let w = GgnnWeights::random(3, 0.5, &mut r);
    let x0 = random(&mut r, 2, 3, 1.0);
    let (a_in, a_out) = oracle_adjacency(2, &[0, 1]);
    let one = ggnn_step(&m(&x0), &a_in, &a_out, &w);
    worst = worst.max(max_abs_diff(&run_original(&g, x0.view(), &w, 1).unwrap().embeddings, &one));
    let two = ggnn_step(&one, &a_in, &a_out, &w);
    worst = worst.max(max_abs_diff(&run_original(&g, x0.view(), &w, 2).unwrap().embeddings, &two));

    // factor channel: cosine-weighted transitions
    let session = Session::new(vec![1, 2, 3, 2]);
    let g = build_session_graph(&session, true);
    let f0 = random(&mut r, 3, 2, 1.0);
    let wf = GgnnWeights::random(2, 0.5, &mut r);
    let fa = build_factor_adjacency(&g, f0.view(), 0);
    let f = m(&f0);
    let cos = |i: usize, j: usize| dot(&f[i], &f[j]) / (dot(&f[i], &f[i]).sqrt() * dot(&f[j], &f[j]).sqrt());
    let (a_in, a_out) = oracle_adjacency(3, &[0, 1, 2, 1]);
    let w_in: M = (0..3).map(|i| (0..3).map(|j| a_in[i][j] * cos(i, j)).collect()).collect();
    let w_out: M = (0..3).map(|i| (0..3).map(|j| a_out[i][j] * cos(i, j)).collect()).collect();
    let want = ggnn_step(&f, &w_in, &w_out, &wf);
    worst = worst.max(max_abs_diff(&run_factor(&g, &fa, f0.view(), &wf, 1).unwrap().embeddings, &want));

    // star graph over three nodes with a fixed seed
    let session = Session::new(vec![4, 5, 6, 5]);
    let g = build_session_graph(&session, true);
    let x0 = random(&mut r, 3, 3, 1.0);
    let (star, sat) = build_star_graph(&g, x0.view(), 0.5, 99, true);
    let mut raw = m(&g.raw);
    for row in raw.iter_mut() {
        row.push(0.0);
    }
    raw.push(vec![0.0; 4]);
    for i in 0..3 {
        raw[3][i] = star.raw[[3, i]];
        raw[i][3] = star.raw[[i, 3]];
    }
    let mut x = m(&x0);
    let mut mean = vec![0.0; 3];
    for &a in &g.alias {
        for t in 0..3 {
            mean[t] += x[a][t] / g.alias.len() as f64;
        }
    }
    x.push(mean);
    let ws = GgnnWeights::random(3, 0.5, &mut r);
    let mut want = ggnn_step(&x, &row_norm(&transpose(&raw)), &row_norm(&raw), &ws);
    want.pop();
    let got = run_star(&star, x0.view(), &sat, &ws, 1).unwrap().embeddings;
    worst.max(max_abs_diff(&got, &want))
}

/// Encoder deviation on a three-position session and a two-factor case.
pub fn attention_error() -> f64 {
    let mut r = rng(12);
    let att = AttentionWeights::random(3, 0.5, &mut r);
    let nodes = random(&mut r, 2, 3, 1.0);
    let alias = [0, 1, 0];
    let got = encode_item_level(nodes.view(), &alias, &att, false).unwrap();
    let want = encode(&m(&nodes), &alias, &att);
    let mut worst = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let atts: Vec<_> = (0..2).map(|_| AttentionWeights::random(2, 0.5, &mut r)).collect();
    let fs: Vec<_> = (0..2).map(|_| random(&mut r, 3, 2, 1.0)).collect();
    let alias = [2, 0, 1, 2];
    let got = encode_factor_level(&fs, &alias, &atts, false).unwrap();
    let want: Vec<f64> = fs.iter().zip(&atts).flat_map(|(f, a)| encode(&m(f), &alias, a)).collect();
    worst = worst.max(got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    worst
}

/// Scoring and prediction-loss deviation on a four-item catalog.
pub fn scoring_error() -> f64 {
    let mut r = rng(13);
    let catalog = random(&mut r, 4, 4, 1.0);
    let proj = FactorProjection::random(4, 2, 0.5, &mut r).unwrap();
    let s_item = Array1::from_iter((0..4).map(|_| r.random_range(-1.0..1.0)));
    let s_fac = Array1::from_iter((0..4).map(|_| r.random_range(-1.0..1.0)));
    let got = score(s_item.view(), Some(s_fac.view()), catalog.view(), &proj).unwrap();

    let cat = m(&catalog);
    let item = softmax(&cat.iter().map(|c| dot(c, &s_item.to_vec())).collect::<Vec<_>>());
    let mut cat_f: M = vec![Vec::new(); 4];
    for k in 0..2 {
        let pk = project(&cat, &m(&proj.weights[k]), &proj.biases[k].row(0).to_vec());
        for (i, row) in pk.into_iter().enumerate() {
            cat_f[i].extend(row);
        }
    }
    let factor = softmax(&cat_f.iter().map(|c| dot(c, &s_fac.to_vec())).collect::<Vec<_>>());
    let combined: Vec<f64> = item.iter().zip(&factor).map(|(a, b)| (a + b) / 2.0).collect();

    let diff = |a: &Array1<f64>, b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let mut worst = diff(&got.item, &item)
        .max(diff(got.factor.as_ref().unwrap(), &factor))
        .max(diff(&got.combined, &combined));
    for target in 0..4 {
        worst = worst.max((prediction_loss(&got, target) - bce(&combined, target)).abs());
    }
    let toy = ScoreVector {
        item: Array1::from(vec![0.1, 0.2, 0.3, 0.4]),
        factor: None,
        combined: Array1::from(vec![0.1, 0.2, 0.3, 0.4]),
    };
    let by_hand = -(0.9f64.ln() + 0.8f64.ln() + 0.3f64.ln() + 0.6f64.ln());
    worst.max((prediction_loss(&toy, 2) - by_hand).abs())
}

fn pairs(anchors: Vec<usize>, negs: &[(usize, usize)]) -> PairIndex {
    PairIndex {
        anchors: Rc::new(anchors),
        neg_anchor: Rc::new(negs.iter().map(|p| p.0).collect()),
        neg_partner: Rc::new(negs.iter().map(|p| p.1).collect()),
    }
}

/// Contrastive-loss deviation over enumerated pairs, for both
/// discriminators and both factor negative modes.
pub fn contrastive_error() -> f64 {
    let mut r = rng(14);
    let negs = [(0, 2), (1, 0), (2, 1)];
    let p = pairs(vec![0, 1, 2], &negs);
    let orig = random(&mut r, 3, 4, 1.0);
    let aug = random(&mut r, 3, 4, 1.0);
    let bil = random(&mut r, 4, 4, 0.5);
    let mut worst: f64 = 0.0;

    for disc in [None, Some(bil.clone())] {
        let mut tape = Tape::new();
        let o = tape.constant(orig.clone());
        let a = tape.constant(aug.clone());
        let d = match &disc {
            None => DiscVars::Dot,
            Some(w) => Discriminator::Bilinear(w.clone()).bind(&mut tape),
        };
        let l = item_cl_loss(&mut tape, o, a, &p, d, NegativeTerm::OneMinusSigmoid).unwrap();
        let dm = disc.as_ref().map(m);
        let want = pair_loss(&m(&orig), &m(&aug), &m(&aug), &[0, 1, 2], &negs, dm.as_ref());
        worst = worst.max((tape.scalar_value(l) - want).abs());
    }

    let origs: Vec<_> = (0..2).map(|_| random(&mut r, 3, 2, 1.0)).collect();
    let augs: Vec<_> = (0..2).map(|_| random(&mut r, 3, 2, 1.0)).collect();
    for mode in [FactorNegatives::WithinView, FactorNegatives::CrossView] {
        let cfg = ContrastConfig {
            factor_negatives: mode,
            ..Default::default()
        };
        let mut tape = Tape::new();
        let o: Vec<_> = origs.iter().map(|x| tape.constant(x.clone())).collect();
        let a: Vec<_> = augs.iter().map(|x| tape.constant(x.clone())).collect();
        let l = factor_cl_loss(&mut tape, &o, &a, &[p.clone(), p.clone()], DiscVars::Dot, &cfg).unwrap();
        let want: f64 = origs
            .iter()
            .zip(&augs)
            .map(|(o, a)| {
                let neg = if mode == FactorNegatives::WithinView { o } else { a };
                pair_loss(&m(o), &m(a), &m(neg), &[0, 1, 2], &negs, None)
            })
            .sum();
        worst = worst.max((tape.scalar_value(l) - want).abs());
    }
    worst
}

/// Distance-correlation deviation on random 6×2 / 6×3 samples.
pub fn dcor_error() -> f64 {
    let mut r = rng(15);
    (0..10)
        .map(|_| {
            let x = random(&mut r, 6, 2, 1.0);
            let y = random(&mut r, 6, 3, 1.0);
            (dcor(x.view(), y.view()).unwrap() - super::dcor(&m(&x), &m(&y))).abs()
        })
        .fold(0.0, f64::max)
}

/// Star-view versus original-view outputs with no satellite links and tied
/// weights, over `sessions` random sessions. Returns the number of
/// sessions whose outputs differ in any bit.
pub fn star_mismatches(sessions: usize) -> usize {
    let mut r = rng(16);
    let mut bad = 0;
    for s in 0..sessions {
        let len = r.random_range(1..10);
        let items: Vec<usize> = (0..len).map(|_| r.random_range(0..12)).collect();
        let g = build_session_graph(&Session::new(items), true);
        let w = GgnnWeights::random(5, 0.5, &mut r);
        let emb = random(&mut r, 12, 5, 1.0);
        let x0 = emb.select(ndarray::Axis(0), &g.nodes);
        let (star, sat) = build_star_graph(&g, x0.view(), 0.0, s as u64, true);
        let layers = 1 + s % 3;
        let a = run_original(&g, x0.view(), &w, layers).unwrap().embeddings;
        let b = run_star(&star, x0.view(), &sat, &w, layers).unwrap().embeddings;
        if a.iter().zip(b.iter()).any(|(x, y)| x.to_bits() != y.to_bits()) {
            bad += 1;
        }
    }
    bad
}

/// Worst violation among the distance-correlation identities over
/// `trials` random matrices: self, positive scaling, symmetry, constant
/// side.
pub fn dcor_property_error(trials: usize) -> f64 {
    let mut r = rng(17);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = r.random_range(3..12);
        let (cx, cy) = (r.random_range(1..5), r.random_range(1..5));
        let x = random(&mut r, n, cx, 2.0);
        let y = random(&mut r, n, cy, 2.0);
        let c = r.random_range(0.1..10.0);
        let xc = &x * c;
        let konst = Array2::from_elem((n, 2), r.random_range(-3.0..3.0));
        let d = |a: &Array2<f64>, b: &Array2<f64>| dcor(a.view(), b.view()).unwrap();
        worst = worst
            .max((d(&x, &x) - 1.0).abs())
            .max((d(&x, &xc) - 1.0).abs())
            .max((d(&x, &y) - d(&y, &x)).abs())
            .max(d(&x, &konst).abs())
            .max(d(&konst, &y).abs());
    }
    worst
}

/// Per-pair contrastive losses of the full model with zero bilinear
/// discriminators: `(item, factor / K)`.
pub fn zero_discriminator_losses() -> (f64, f64) {
    let cfg = TrainConfig {
        discriminator: dgcl::contrast::DiscriminatorForm::Bilinear,
        ..toy_config()
    };
    let mut p = Parameters::init(&cfg, 6).unwrap();
    p.disc_item.as_mut().unwrap().fill(0.0);
    p.disc_factor.as_mut().unwrap().fill(0.0);
    let batch = Batch::from_examples(&toy_examples());
    let f = forward(&p, &cfg, &batch, StepIndex::default(), true);
    let l = f.breakdown(&cfg).unwrap();
    (l.l_c_item, l.l_c_factor / cfg.factors as f64)
}

/// Relative error of analytic against central-difference gradients for
/// each loss and parameter group: `(loss, group, error, numeric norm)`.
pub fn gradient_errors(cfg: &TrainConfig) -> Vec<(&'static str, String, f64, f64)> {
    const H: f64 = 1e-5;
    let examples = toy_examples();
    let batch = Batch::from_examples(&examples);
    let step = StepIndex { epoch: 1, batch: 2 };
    let params = Parameters::init(cfg, 6).unwrap();
    let names = ["l_d", "l_c_item", "l_c_factor", "l_p", "total"];

    let values = |p: &Parameters| -> [f64; 5] {
        let l = forward(p, cfg, &batch, step, true).breakdown(cfg).unwrap();
        [l.l_d, l.l_c_item, l.l_c_factor, l.l_p, l.total]
    };

    let f = forward(&params, cfg, &batch, step, true);
    let lv = f.losses.unwrap();
    let outs = [
        Some(lv.l_d),
        lv.l_c_item,
        lv.l_c_factor,
        Some(lv.l_p),
        Some(lv.total),
    ];
    let analytic: Vec<Vec<Array2<f64>>> = outs
        .iter()
        .map(|o| {
            let o = o.expect("toy batch defines every loss");
            let g = f.tape.backward(o);
            params.collect_grads(&g, &f.vars)
        })
        .collect();

    let tensor_names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let mut numeric: Vec<Vec<Array2<f64>>> = vec![Vec::new(); 5];
    let mut probe = params.clone();
    for (t, _) in tensor_names.iter().enumerate() {
        let shape = params.named_tensors()[t].1.dim();
        let mut grads = vec![Array2::zeros(shape); 5];
        for idx in ndarray::indices(shape) {
            let orig = probe.named_tensors()[t].1[idx];
            *probe.named_tensors_mut().swap_remove(t).1.get_mut(idx).unwrap() = orig + H;
            let up = values(&probe);
            *probe.named_tensors_mut().swap_remove(t).1.get_mut(idx).unwrap() = orig - H;
            let down = values(&probe);
            *probe.named_tensors_mut().swap_remove(t).1.get_mut(idx).unwrap() = orig;
            for l in 0..5 {
                grads[l][idx] = (up[l] - down[l]) / (2.0 * H);
            }
        }
        for l in 0..5 {
            numeric[l].push(grads[l].clone());
        }
    }

    let mut groups: Vec<String> = tensor_names.iter().map(|n| group_of(n)).collect();
    groups.dedup();
    let mut out = Vec::new();
    for (l, name) in names.iter().enumerate() {
        for g in &groups {
            let pick = |src: &Vec<Array2<f64>>| -> Vec<f64> {
                tensor_names
                    .iter()
                    .zip(src)
                    .filter(|(n, _)| group_of(n) == *g)
                    .flat_map(|(_, a)| a.iter().copied().collect::<Vec<_>>())
                    .collect()
            };
            let num = pick(&numeric[l]);
            let norm = num.iter().map(|x| x * x).sum::<f64>().sqrt();
            out.push((*name, g.clone(), rel_err(&pick(&analytic[l]), &num), norm));
        }
    }
    out
}

/// Reports P@K/M@K by the library and by sorting every score list, over a
/// fixed 20-example fixture. Returns `(library, exhaustive)`.
pub fn metric_fixture() -> (RankingReport, RankingReport) {
    // scores over 30 items; targets land at ranks 1..=25, with ties
    let mut cases: Vec<(Vec<f64>, usize, usize)> = Vec::new();
    for e in 0..20usize {
        let scores: Vec<f64> = (0..30).map(|i| ((i * 7 + e * 3) % 30) as f64 / 30.0).collect();
        let target = (e * 11) % 30;
        let mut scores = scores;
        if e % 4 == 0 {
            // tie the target with its lower neighbour
            let t = scores[target];
            if target > 0 {
                scores[target - 1] = t;
            }
        }
        cases.push((scores, target, 1 + e % 8));
    }
    let ks = [10, 20];

    let lib_ranks: Vec<(usize, usize)> = cases
        .iter()
        .map(|(s, t, len)| (rank_of(Array1::from(s.clone()).view(), *t), *len))
        .collect();
    let library = RankingReport::from_ranks(&lib_ranks, &ks, 0);

    let exhaustive_ranks: Vec<(usize, usize)> = cases
        .iter()
        .map(|(s, t, len)| {
            let mut order: Vec<usize> = (0..s.len()).collect();
            order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
            (order.iter().position(|&i| i == *t).unwrap() + 1, *len)
        })
        .collect();
    let mut exhaustive = RankingReport::from_ranks(&exhaustive_ranks, &ks, 0);
    // recompute every cell by explicit counting
    for b in exhaustive.buckets.iter_mut() {
        let members: Vec<usize> = exhaustive_ranks
            .iter()
            .filter(|(_, len)| b.bucket.contains(*len))
            .map(|(r, _)| *r)
            .collect();
        for (i, &k) in ks.iter().enumerate() {
            let mut hits = 0.0;
            let mut rr = 0.0;
            for &r in &members {
                if r <= k {
                    hits += 1.0;
                    rr += 1.0 / r as f64;
                }
            }
            let n = members.len().max(1) as f64;
            b.precision[i] = hits / n;
            b.mrr[i] = rr / n;
        }
    }
    (library, exhaustive)
}
