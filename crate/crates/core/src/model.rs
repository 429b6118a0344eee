//! Parameters, batch assembly, and the batched forward pass.
//!
//! A batch lays the session graphs of all its examples side by side: node
//! rows of session `b` start at `offsets[b]`, and the adjacency of the
//! whole batch is block diagonal. The star view appends one satellite row
//! per session after all real nodes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::rc::Rc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{TrainConfig, Variant};
use crate::contrast::{
    factor_cl_loss, factor_view_of_original, item_cl_loss, mix_var, sample_negatives, DiscVars,
    DiscriminatorForm,
};
use crate::dataio::{Example, Session};
use crate::disentangle::{independence_loss, project, FactorProjection, ProjectionVars};
use crate::encoder::{encode, encode_factors, AttentionVars, AttentionWeights, PositionLayout};
use crate::error::{Error, Result};
use crate::graphs::{
    build_dropout_graph, build_session_graph, build_star_structure, dropout_seed, star_seed,
    SessionGraph,
};
use crate::params::uniform;
use crate::predictor::{prediction_loss_batch, score_batch, LossBreakdown, ScoreVars};
use crate::propagation::{propagate, GgnnVars, GgnnWeights, SparseAdjacency};
use crate::rng::{substream, Stream};
use crate::tape::{Gradients, SparsePattern, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    /// `N×d` item embedding table.
    pub embedding: Array2<f64>,
    pub projection: FactorProjection,
    pub original: GgnnWeights,
    pub factor: Vec<GgnnWeights>,
    pub star: GgnnWeights,
    pub item_attention: AttentionWeights,
    /// One set per factor, or a single shared set.
    pub factor_attention: Vec<AttentionWeights>,
    pub disc_item: Option<Array2<f64>>,
    pub disc_factor: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct ParamVars {
    pub embedding: Var,
    pub projection: ProjectionVars,
    pub original: GgnnVars,
    pub factor: Vec<GgnnVars>,
    pub star: GgnnVars,
    pub item_attention: AttentionVars,
    pub factor_attention: Vec<AttentionVars>,
    pub disc_item: DiscVars,
    pub disc_factor: DiscVars,
}

impl ParamVars {
    /// Vars in the same order as [`Parameters::named_tensors`].
    pub fn flat(&self) -> Vec<Var> {
        let mut out = vec![self.embedding];
        for (&w, &b) in self.projection.weights.iter().zip(&self.projection.biases) {
            out.push(w);
            out.push(b);
        }
        out.extend(self.original.flat());
        for f in &self.factor {
            out.extend(f.flat());
        }
        out.extend(self.star.flat());
        out.extend(self.item_attention.flat());
        for a in &self.factor_attention {
            out.extend(a.flat());
        }
        for d in [self.disc_item, self.disc_factor] {
            if let DiscVars::Bilinear(v) = d {
                out.push(v);
            }
        }
        out
    }
}

impl Parameters {
    /// All-zero parameters with the shapes implied by `cfg`.
    pub fn zeros(cfg: &TrainConfig, num_items: usize) -> Result<Self> {
        let (d, k) = (cfg.dim, cfg.factors);
        let mut projection = FactorProjection::zeros(d, k)?;
        projection.activation = cfg.projection_activation;
        projection.bias = cfg.projection_bias;
        let df = projection.factor_dim();
        let bilinear = cfg.discriminator == DiscriminatorForm::Bilinear;
        Ok(Parameters {
            embedding: Array2::zeros((num_items, d)),
            projection,
            original: GgnnWeights::zeros(d),
            factor: (0..k).map(|_| GgnnWeights::zeros(df)).collect(),
            star: GgnnWeights::zeros(d),
            item_attention: AttentionWeights::zeros(d),
            factor_attention: (0..if cfg.share_factor_attention { 1 } else { k })
                .map(|_| AttentionWeights::zeros(df))
                .collect(),
            disc_item: bilinear.then(|| Array2::zeros((d, d))),
            disc_factor: bilinear.then(|| Array2::zeros((df, df))),
        })
    }

    /// Uniform initialization from the run seed. Bilinear discriminators
    /// start at the identity, i.e. as a dot product.
    pub fn init(cfg: &TrainConfig, num_items: usize) -> Result<Self> {
        cfg.validate()?;
        if num_items == 0 {
            return Err(Error::Data("empty item catalog".into()));
        }
        let mut p = Self::zeros(cfg, num_items)?;
        let mut rng = substream(cfg.seed, Stream::Init, &[]);
        let bound = cfg.init_bound();
        for (name, t) in p.named_tensors_mut() {
            *t = if name.starts_with("discriminator") {
                Array2::eye(t.nrows())
            } else {
                uniform(&mut rng, t.dim(), bound)
            };
        }
        Ok(p)
    }

    pub fn num_items(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![("embedding".into(), &self.embedding)];
        for (k, (w, b)) in self.projection.weights.iter().zip(&self.projection.biases).enumerate() {
            out.push((format!("projection.weight.{k}"), w));
            out.push((format!("projection.bias.{k}"), b));
        }
        for (n, t) in self.original.tensors() {
            out.push((format!("ggnn.original.{n}"), t));
        }
        for (k, f) in self.factor.iter().enumerate() {
            for (n, t) in f.tensors() {
                out.push((format!("ggnn.factor.{k}.{n}"), t));
            }
        }
        for (n, t) in self.star.tensors() {
            out.push((format!("ggnn.star.{n}"), t));
        }
        for (n, t) in self.item_attention.tensors() {
            out.push((format!("attention.item.{n}"), t));
        }
        for (k, a) in self.factor_attention.iter().enumerate() {
            for (n, t) in a.tensors() {
                out.push((format!("attention.factor.{k}.{n}"), t));
            }
        }
        if let Some(w) = &self.disc_item {
            out.push(("discriminator.item".into(), w));
        }
        if let Some(w) = &self.disc_factor {
            out.push(("discriminator.factor".into(), w));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> = vec![("embedding".into(), &mut self.embedding)];
        for (k, (w, b)) in self
            .projection
            .weights
            .iter_mut()
            .zip(self.projection.biases.iter_mut())
            .enumerate()
        {
            out.push((format!("projection.weight.{k}"), w));
            out.push((format!("projection.bias.{k}"), b));
        }
        for (n, t) in self.original.tensors_mut() {
            out.push((format!("ggnn.original.{n}"), t));
        }
        for (k, f) in self.factor.iter_mut().enumerate() {
            for (n, t) in f.tensors_mut() {
                out.push((format!("ggnn.factor.{k}.{n}"), t));
            }
        }
        for (n, t) in self.star.tensors_mut() {
            out.push((format!("ggnn.star.{n}"), t));
        }
        for (n, t) in self.item_attention.tensors_mut() {
            out.push((format!("attention.item.{n}"), t));
        }
        for (k, a) in self.factor_attention.iter_mut().enumerate() {
            for (n, t) in a.tensors_mut() {
                out.push((format!("attention.factor.{k}.{n}"), t));
            }
        }
        if let Some(w) = &mut self.disc_item {
            out.push(("discriminator.item".into(), w));
        }
        if let Some(w) = &mut self.disc_factor {
            out.push(("discriminator.factor".into(), w));
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        let disc = |tape: &mut Tape, w: &Option<Array2<f64>>| match w {
            Some(w) => DiscVars::Bilinear(tape.param(w.clone())),
            None => DiscVars::Dot,
        };
        let embedding = tape.param(self.embedding.clone());
        // interleave weight/bias binding to keep tape order aligned with flat()
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (w, b) in self.projection.weights.iter().zip(&self.projection.biases) {
            weights.push(tape.param(w.clone()));
            biases.push(tape.param(b.clone()));
        }
        let projection = ProjectionVars {
            weights,
            biases,
            activation: self.projection.activation,
            bias: self.projection.bias,
        };
        ParamVars {
            embedding,
            projection,
            original: self.original.bind(tape),
            factor: self.factor.iter().map(|f| f.bind(tape)).collect(),
            star: self.star.bind(tape),
            item_attention: self.item_attention.bind(tape),
            factor_attention: self.factor_attention.iter().map(|a| a.bind(tape)).collect(),
            disc_item: disc(tape, &self.disc_item),
            disc_factor: disc(tape, &self.disc_factor),
        }
    }

    /// Gradients in [`Parameters::named_tensors`] order, zero-filled for
    /// tensors the loss does not reach.
    pub fn collect_grads(&self, grads: &Gradients, vars: &ParamVars) -> Vec<Array2<f64>> {
        self.named_tensors()
            .iter()
            .zip(vars.flat())
            .map(|((_, t), v)| grads.get_or_zeros(v, t.dim()))
            .collect()
    }
}

/// Parameter group of a tensor name, e.g. `ggnn.factor.3`.
pub fn group_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        ["ggnn", "factor", k, ..] | ["attention", "factor", k, ..] => {
            format!("{}.factor.{k}", parts[0])
        }
        [a, b, ..] if *a == "ggnn" || *a == "attention" || *a == "discriminator" => format!("{a}.{b}"),
        [a, ..] => a.to_string(),
        [] => String::new(),
    }
}

#[derive(Debug, Clone)]
struct AdjParts {
    pattern_in: Rc<SparsePattern>,
    weights_in: Rc<Array2<f64>>,
    pattern_out: Rc<SparsePattern>,
    weights_out: Rc<Array2<f64>>,
}

impl AdjParts {
    /// Assembles the block-diagonal adjacency of `blocks`, where block `b`
    /// maps local node `i` to global row `index(b, i)`.
    fn assemble(
        rows: usize,
        blocks: &[(&Array2<f64>, &Array2<f64>)],
        index: impl Fn(usize, usize) -> usize,
    ) -> Self {
        let build = |pick: &dyn Fn(&(&Array2<f64>, &Array2<f64>)) -> Array2<f64>| {
            let mut entries = Vec::new();
            let mut values = Vec::new();
            for (b, blk) in blocks.iter().enumerate() {
                let m = pick(blk);
                for ((i, j), &w) in m.indexed_iter() {
                    if w != 0.0 {
                        entries.push((index(b, i), index(b, j)));
                        values.push(w);
                    }
                }
            }
            let (pattern, order) = SparsePattern::from_entries(rows, rows, &entries);
            let w = Array2::from_shape_fn((order.len(), 1), |(e, _)| values[order[e]]);
            (Rc::new(pattern), Rc::new(w))
        };
        let (pattern_in, weights_in) = build(&|blk| blk.0.clone());
        let (pattern_out, weights_out) = build(&|blk| blk.1.clone());
        AdjParts {
            pattern_in,
            weights_in,
            pattern_out,
            weights_out,
        }
    }

    fn constant(&self, tape: &mut Tape) -> SparseAdjacency {
        SparseAdjacency {
            pattern_in: self.pattern_in.clone(),
            values_in: tape.constant(self.weights_in.as_ref().clone()),
            pattern_out: self.pattern_out.clone(),
            values_out: tape.constant(self.weights_out.as_ref().clone()),
        }
    }
}

fn endpoints(p: &SparsePattern) -> (Rc<Vec<usize>>, Rc<Vec<usize>>) {
    let (rows, cols): (Vec<usize>, Vec<usize>) = p.iter().map(|(_, r, c)| (r, c)).unzip();
    (Rc::new(rows), Rc::new(cols))
}

/// Parameter-independent structure of a mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub graphs: Vec<SessionGraph>,
    pub offsets: Vec<usize>,
    pub node_items: Rc<Vec<usize>>,
    pub layout: PositionLayout,
    pub targets: Vec<usize>,
    pub prefix_lengths: Vec<usize>,
    /// Stable per-example ids used to seed per-session randomness.
    pub example_ids: Vec<u64>,
    normalize: bool,
    original: AdjParts,
}

impl Batch {
    pub fn new(examples: &[&Example], example_ids: &[u64], normalize: bool) -> Self {
        assert_eq!(examples.len(), example_ids.len(), "one id per example");
        assert!(!examples.is_empty(), "empty batch");
        let graphs: Vec<SessionGraph> = examples
            .iter()
            .map(|e| build_session_graph(&Session::new(e.prefix.clone()), normalize))
            .collect();
        let mut offsets = Vec::with_capacity(graphs.len());
        let mut node_items = Vec::new();
        for g in &graphs {
            offsets.push(node_items.len());
            node_items.extend(&g.nodes);
        }
        let total = node_items.len();
        let blocks: Vec<_> = graphs.iter().map(|g| (&g.adj_in, &g.adj_out)).collect();
        let original = AdjParts::assemble(total, &blocks, |b, i| offsets[b] + i);
        let layout = PositionLayout::new(&graphs, &offsets);
        Batch {
            targets: examples.iter().map(|e| e.target).collect(),
            prefix_lengths: examples.iter().map(|e| e.prefix.len()).collect(),
            example_ids: example_ids.to_vec(),
            graphs,
            offsets,
            node_items: Rc::new(node_items),
            layout,
            normalize,
            original,
        }
    }

    pub fn from_examples(examples: &[Example]) -> Self {
        let refs: Vec<&Example> = examples.iter().collect();
        let ids: Vec<u64> = (0..examples.len() as u64).collect();
        Self::new(&refs, &ids, true)
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn total_nodes(&self) -> usize {
        self.node_items.len()
    }

    /// `(first_row, node_count)` per session.
    pub fn groups(&self) -> Vec<(usize, usize)> {
        self.offsets
            .iter()
            .zip(&self.graphs)
            .map(|(&o, g)| (o, g.num_nodes()))
            .collect()
    }

    fn star_parts(&self, theta: f64, seed: u64, epoch: u64) -> AdjParts {
        let total = self.total_nodes();
        let stars: Vec<_> = self
            .graphs
            .iter()
            .zip(&self.example_ids)
            .map(|(g, &id)| build_star_structure(g, theta, star_seed(seed, epoch, id), self.normalize))
            .collect();
        let blocks: Vec<_> = stars.iter().map(|s| (&s.adj_in, &s.adj_out)).collect();
        let graphs = &self.graphs;
        let offsets = &self.offsets;
        AdjParts::assemble(total + self.len(), &blocks, |b, i| {
            if i == graphs[b].num_nodes() {
                total + b
            } else {
                offsets[b] + i
            }
        })
    }

    fn dropout_parts(&self, cfg: &TrainConfig, epoch: u64) -> AdjParts {
        let dropped: Vec<_> = self
            .graphs
            .iter()
            .zip(&self.example_ids)
            .map(|(g, &id)| {
                build_dropout_graph(g, cfg.dropout, dropout_seed(cfg.seed, epoch, id), self.normalize)
            })
            .collect();
        let blocks: Vec<_> = dropped.iter().map(|g| (&g.adj_in, &g.adj_out)).collect();
        AdjParts::assemble(self.total_nodes(), &blocks, |b, i| self.offsets[b] + i)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_p: Var,
    pub l_c_item: Option<Var>,
    pub l_c_factor: Option<Var>,
    pub l_c: Var,
    pub l_d: Var,
    pub total: Var,
}

pub struct Forward {
    pub tape: Tape,
    pub vars: ParamVars,
    pub scores: ScoreVars,
    pub losses: Option<LossVars>,
}

impl Forward {
    pub fn breakdown(&self, cfg: &TrainConfig) -> Option<LossBreakdown> {
        let l = self.losses?;
        let v = |x: Var| self.tape.scalar_value(x);
        Some(LossBreakdown {
            l_p: v(l.l_p),
            l_c_item: l.l_c_item.map_or(0.0, v),
            l_c_factor: l.l_c_factor.map_or(0.0, v),
            l_c: v(l.l_c),
            l_d: v(l.l_d),
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            total: v(l.total),
        })
    }

    pub fn probabilities(&self) -> &Array2<f64> {
        self.tape.value(self.scores.combined)
    }
}

/// Position of one training step in the run; seeds the random views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepIndex {
    pub epoch: u64,
    pub batch: u64,
}

fn factor_adjacency(
    tape: &mut Tape,
    raw_factor: Var,
    parts: &AdjParts,
) -> SparseAdjacency {
    let unit = tape.normalize_rows(raw_factor);
    let weights = |tape: &mut Tape, p: &Rc<SparsePattern>, base: &Rc<Array2<f64>>| {
        let (rows, cols) = endpoints(p);
        let a = tape.gather_rows(unit, rows);
        let b = tape.gather_rows(unit, cols);
        let cos = tape.row_dot(a, b);
        tape.mul_const(cos, base.clone())
    };
    let values_in = weights(tape, &parts.pattern_in, &parts.weights_in);
    let values_out = weights(tape, &parts.pattern_out, &parts.weights_out);
    SparseAdjacency {
        pattern_in: parts.pattern_in.clone(),
        values_in,
        pattern_out: parts.pattern_out.clone(),
        values_out,
    }
}

/// Runs the model on one batch. With `with_losses` false only the scores
/// are computed.
pub fn forward(
    params: &Parameters,
    cfg: &TrainConfig,
    batch: &Batch,
    step: StepIndex,
    with_losses: bool,
) -> Forward {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let raw = tape.gather_rows(vars.embedding, batch.node_items.clone());
    let orig_adj = batch.original.constant(&mut tape);
    let original = propagate(&mut tape, raw, &orig_adj, &vars.original, cfg.layers);
    let original_factors = factor_view_of_original(&mut tape, original, &vars.projection);

    let session_item = encode(
        &mut tape,
        original,
        &batch.layout,
        &vars.item_attention,
        cfg.attention_normalize,
    );
    let session_factor = cfg.uses_factor_head().then(|| {
        encode_factors(
            &mut tape,
            &original_factors,
            &batch.layout,
            &vars.factor_attention,
            cfg.attention_normalize,
        )
    });
    let scores = score_batch(&mut tape, session_item, session_factor, vars.embedding, &vars.projection);
    if !with_losses {
        return Forward {
            tape,
            vars,
            scores,
            losses: None,
        };
    }

    let l_p = prediction_loss_batch(&mut tape, scores.combined, &batch.targets);
    let raw_factors = project(&mut tape, raw, &vars.projection);
    let l_d = independence_loss(&mut tape, &raw_factors);

    let contrast = cfg.contrast();
    let groups = batch.groups();
    let negatives = |slot: u64| {
        let mut rng = substream(cfg.seed, Stream::Negatives, &[step.epoch, step.batch, slot]);
        sample_negatives(&groups, contrast.negatives_per_positive, &mut rng)
    };

    let l_c_factor = if contrast.alpha < 1.0 {
        let mut augmented = Vec::with_capacity(raw_factors.len());
        for (k, &f) in raw_factors.iter().enumerate() {
            let adj = factor_adjacency(&mut tape, f, &batch.original);
            augmented.push(propagate(&mut tape, f, &adj, &vars.factor[k], cfg.layers));
        }
        let pairs: Vec<_> = (0..raw_factors.len()).map(|k| negatives(1 + k as u64)).collect();
        factor_cl_loss(
            &mut tape,
            &original_factors,
            &augmented,
            &pairs,
            vars.disc_factor,
            &contrast,
        )
    } else {
        None
    };

    let l_c_item = if contrast.alpha > 0.0 {
        let augmented = if cfg.variant == Variant::Star {
            let adj = batch.dropout_parts(cfg, step.epoch).constant(&mut tape);
            propagate(&mut tape, raw, &adj, &vars.star, cfg.layers)
        } else {
            let n = batch.len();
            let at_pos = tape.gather_rows(raw, batch.layout.position_node.clone());
            let sums = tape.scatter_add_rows(at_pos, batch.layout.position_session.clone(), n);
            let inv_len = Array2::from_shape_fn((n, 1), |(b, _)| 1.0 / batch.graphs[b].alias.len() as f64);
            let inv_len = tape.constant(inv_len);
            let satellites = tape.mul_col(sums, inv_len);
            let x = tape.concat_rows(&[raw, satellites]);
            let adj = batch.star_parts(cfg.theta, cfg.seed, step.epoch).constant(&mut tape);
            let out = propagate(&mut tape, x, &adj, &vars.star, cfg.layers);
            let real = Rc::new((0..batch.total_nodes()).collect::<Vec<_>>());
            tape.gather_rows(out, real)
        };
        let pairs = negatives(0);
        item_cl_loss(
            &mut tape,
            original,
            augmented,
            &pairs,
            vars.disc_item,
            contrast.negative_term,
        )
    } else {
        None
    };

    let l_c = mix_var(&mut tape, l_c_item, l_c_factor, contrast.alpha);
    let wc = tape.scale(l_c, cfg.beta1);
    let wd = tape.scale(l_d, cfg.beta2);
    let partial = tape.add(l_p, wc);
    let total = tape.add(partial, wd);
    Forward {
        tape,
        vars,
        scores,
        losses: Some(LossVars {
            l_p,
            l_c_item,
            l_c_factor,
            l_c,
            l_d,
            total,
        }),
    }
}

/// Combined probabilities for every example, `B×N`.
pub fn predict(params: &Parameters, cfg: &TrainConfig, batch: &Batch) -> Array2<f64> {
    forward(params, cfg, batch, StepIndex::default(), false)
        .probabilities()
        .clone()
}

pub const CHECKPOINT_FORMAT: &str = "dgcl-checkpoint-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Offset into the weights file in `f64` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub num_items: usize,
    pub config: TrainConfig,
    pub tensors: Vec<TensorEntry>,
}

/// Writes `manifest.json` and `weights.bin` (little-endian `f64`, row
/// major, tensors back to back in manifest order) into `dir`.
pub fn save_checkpoint(dir: &Path, params: &Parameters, cfg: &TrainConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::new();
    let mut offset = 0;
    let bin_path = dir.join("weights.bin");
    let f = File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut w = BufWriter::new(f);
    for (name, t) in params.named_tensors() {
        tensors.push(TensorEntry {
            name,
            shape: [t.nrows(), t.ncols()],
            offset,
        });
        offset += t.len();
        for x in t.iter() {
            w.write_all(&x.to_le_bytes()).map_err(|e| Error::io(&bin_path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&bin_path, e))?;
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        num_items: params.num_items(),
        config: cfg.clone(),
        tensors,
    };
    let man_path = dir.join("manifest.json");
    let f = File::create(&man_path).map_err(|e| Error::io(&man_path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &manifest)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(TrainConfig, Parameters)> {
    let man_path = dir.join("manifest.json");
    let f = File::open(&man_path).map_err(|e| Error::io(&man_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_reader(BufReader::new(f))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Data(format!("unknown checkpoint format {:?}", manifest.format)));
    }
    let bin_path = dir.join("weights.bin");
    let mut bytes = Vec::new();
    File::open(&bin_path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(&bin_path, e))?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut params = Parameters::zeros(&manifest.config, manifest.num_items)?;
    let mut slots = params.named_tensors_mut();
    if slots.len() != manifest.tensors.len() {
        return Err(Error::Data(format!(
            "checkpoint has {} tensors, configuration expects {}",
            manifest.tensors.len(),
            slots.len()
        )));
    }
    for ((name, t), entry) in slots.iter_mut().zip(&manifest.tensors) {
        let [r, c] = entry.shape;
        if *name != entry.name || t.dim() != (r, c) {
            return Err(Error::Data(format!(
                "checkpoint tensor {} {:?} does not match {name} {:?}",
                entry.name,
                entry.shape,
                t.dim()
            )));
        }
        let end = entry.offset + r * c;
        let data = values
            .get(entry.offset..end)
            .ok_or_else(|| Error::Data(format!("weights file too short for {name}")))?;
        **t = Array2::from_shape_vec((r, c), data.to_vec()).expect("shape checked");
    }
    Ok((manifest.config, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            dim: 8,
            factors: 2,
            ..Default::default()
        }
    }

    #[test]
    fn flat_vars_match_named_tensors() {
        for disc in [DiscriminatorForm::Dot, DiscriminatorForm::Bilinear] {
            let cfg = TrainConfig {
                discriminator: disc,
                ..small_cfg()
            };
            let p = Parameters::init(&cfg, 6).unwrap();
            let mut tape = Tape::new();
            let vars = p.bind(&mut tape);
            let named = p.named_tensors();
            let flat = vars.flat();
            assert_eq!(named.len(), flat.len());
            for ((_, t), v) in named.iter().zip(flat) {
                assert_eq!(*t, tape.value(v));
            }
        }
    }

    #[test]
    fn groups_from_names() {
        assert_eq!(group_of("ggnn.factor.3.w_z"), "ggnn.factor.3");
        assert_eq!(group_of("ggnn.star.u_h"), "ggnn.star");
        assert_eq!(group_of("attention.item.q"), "attention.item");
        assert_eq!(group_of("projection.weight.1"), "projection");
        assert_eq!(group_of("embedding"), "embedding");
        assert_eq!(group_of("discriminator.item"), "discriminator.item");
    }

    #[test]
    fn batch_layout() {
        let ex = vec![Example::new(vec![3, 4, 3], 1), Example::new(vec![2], 0)];
        let b = Batch::from_examples(&ex);
        assert_eq!(*b.node_items, vec![3, 4, 2]);
        assert_eq!(b.offsets, vec![0, 2]);
        assert_eq!(*b.layout.position_node, vec![0, 1, 0, 2]);
        assert_eq!(*b.layout.last_node, vec![0, 2]);
        assert_eq!(b.groups(), vec![(0, 2), (2, 1)]);
    }

    #[test]
    fn star_parts_place_satellites_after_real_nodes() {
        let ex = vec![Example::new(vec![0, 1], 2), Example::new(vec![2, 3, 4], 0)];
        let b = Batch::from_examples(&ex);
        let parts = b.star_parts(1.0, 0, 0);
        assert_eq!(parts.pattern_out.rows(), 7);
        let sat_edges: Vec<_> = parts
            .pattern_out
            .iter()
            .filter(|&(_, r, c)| r >= 5 || c >= 5)
            .map(|(_, r, c)| (r, c))
            .collect();
        // each satellite links both ways with every node of its own session
        assert_eq!(sat_edges.len(), 2 * 5);
        for (r, c) in sat_edges {
            let (sat, node) = if r >= 5 { (r, c) } else { (c, r) };
            assert_eq!(sat - 5, if node < 2 { 0 } else { 1 });
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let cfg = TrainConfig {
            discriminator: DiscriminatorForm::Bilinear,
            ..small_cfg()
        };
        let p = Parameters::init(&cfg, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &p, &cfg).unwrap();
        let (cfg2, p2) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(p2, p);
    }

    #[test]
    fn forward_losses_are_finite() {
        let cfg = small_cfg();
        let p = Parameters::init(&cfg, 6).unwrap();
        let ex = vec![
            Example::new(vec![0, 1, 2], 3),
            Example::new(vec![4, 5], 0),
            Example::new(vec![1], 2),
        ];
        let b = Batch::from_examples(&ex);
        for variant in Variant::ALL {
            let cfg = TrainConfig { variant, ..cfg.clone() };
            let f = forward(&p, &cfg, &b, StepIndex::default(), true);
            let l = f.breakdown(&cfg).unwrap();
            assert!(l.total.is_finite() && l.l_p > 0.0 && l.l_d >= 0.0);
            let probs = f.probabilities();
            for row in probs.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }
}
