//! Knowledge graph embeddings trained from scratch.
//!
//! Two scorers are supported:
//!
//! | Model    | Score                  |
//! |----------|------------------------|
//! | TransE   | `-‖h + r - t‖_p`       |
//! | DistMult | `Σ_i h_i · r_i · t_i`  |
//!
//! Training minimizes, for each positive triple, the negative log-likelihood
//! of the positive under a softmax over the positive and its corruptions
//! (head or tail replaced by a uniformly drawn entity). Parameters are updated
//! by plain mini-batch SGD with the summed per-triple gradients.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::kg::{KnowledgeGraph, Triple};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgeModel {
    TransE,
    DistMult,
}

impl std::str::FromStr for KgeModel {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(KgeModel::TransE),
            "distmult" => Ok(KgeModel::DistMult),
            other => Err(AuditError::Parse(format!("unknown embedding model `{other}`"))),
        }
    }
}

impl std::fmt::Display for KgeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KgeModel::TransE => "transe",
            KgeModel::DistMult => "distmult",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl std::str::FromStr for Norm {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            other => Err(AuditError::Parse(format!("unknown norm `{other}` (expected l1 or l2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgeConfig {
    pub model: KgeModel,
    pub dim: usize,
    pub neg_samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Only used by TransE.
    pub norm: Norm,
    pub seed: u64,
    /// Data-parallel batches. Gradients are reduced in chunk order, but the
    /// mode is not part of the determinism contract.
    pub parallel: bool,
}

impl Default for KgeConfig {
    fn default() -> Self {
        KgeConfig {
            model: KgeModel::TransE,
            dim: 100,
            neg_samples: 10,
            epochs: 200,
            learning_rate: 0.05,
            batch_size: 128,
            norm: Norm::L2,
            seed: 0,
            parallel: false,
        }
    }
}

impl KgeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AuditError::InvalidConfig(m.to_owned()));
        if self.dim == 0 {
            return bad("embedding dim must be >= 1");
        }
        if self.neg_samples == 0 {
            return bad("neg_samples must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    pub fn scorer(&self) -> Scorer {
        match self.model {
            KgeModel::TransE => Scorer::TransE(self.norm),
            KgeModel::DistMult => Scorer::DistMult,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scorer {
    TransE(Norm),
    DistMult,
}

fn check_dims(h: &[f64], r: &[f64], t: &[f64]) -> Result<()> {
    if h.len() != r.len() || r.len() != t.len() {
        return Err(AuditError::DimensionMismatch(format!(
            "head {}, relation {}, tail {}",
            h.len(),
            r.len(),
            t.len()
        )));
    }
    Ok(())
}

pub fn score_transe(h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> Result<f64> {
    check_dims(h, r, t)?;
    Ok(Scorer::TransE(norm).score(h, r, t))
}

pub fn score_distmult(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64> {
    check_dims(h, r, t)?;
    Ok(Scorer::DistMult.score(h, r, t))
}

impl Scorer {
    /// Higher is more plausible. Slices must have equal length.
    pub fn score(self, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
        match self {
            Scorer::TransE(Norm::L1) => {
                -h.iter().zip(r).zip(t).map(|((a, b), c)| (a + b - c).abs()).sum::<f64>()
            }
            Scorer::TransE(Norm::L2) => {
                -h.iter()
                    .zip(r)
                    .zip(t)
                    .map(|((a, b), c)| {
                        let d = a + b - c;
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            }
            Scorer::DistMult => h.iter().zip(r).zip(t).map(|((a, b), c)| a * b * c).sum(),
        }
    }
}

/// Flat row-major parameter storage.
#[derive(Debug, Clone, PartialEq)]
pub struct KgeParams {
    pub dim: usize,
    pub entities: Vec<f64>,
    pub relations: Vec<f64>,
}

impl KgeParams {
    pub fn zeros(dim: usize, entity_count: usize, relation_count: usize) -> Self {
        KgeParams {
            dim,
            entities: vec![0.0; dim * entity_count],
            relations: vec![0.0; dim * relation_count],
        }
    }

    pub fn entity(&self, e: usize) -> &[f64] {
        &self.entities[e * self.dim..(e + 1) * self.dim]
    }

    pub fn relation(&self, r: usize) -> &[f64] {
        &self.relations[r * self.dim..(r + 1) * self.dim]
    }
}

/// `(head, relation, tail)` row indices.
pub type IndexTriple = (usize, usize, usize);

fn log_softmax_parts(scores: &[f64]) -> (f64, Vec<f64>) {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    let lse = m + z.ln();
    let probs = scores.iter().map(|s| (s - lse).exp()).collect();
    (lse - scores[0], probs)
}

/// Negative log-likelihood of `candidates[0]` under a softmax over all
/// candidates.
pub fn candidate_loss(scorer: Scorer, params: &KgeParams, candidates: &[IndexTriple]) -> f64 {
    let scores: Vec<f64> = candidates
        .iter()
        .map(|&(h, r, t)| scorer.score(params.entity(h), params.relation(r), params.entity(t)))
        .collect();
    log_softmax_parts(&scores).0
}

/// Adds the gradient of [`candidate_loss`] into `grad` and returns the loss.
pub fn candidate_loss_grad(scorer: Scorer, params: &KgeParams, candidates: &[IndexTriple], grad: &mut KgeParams) -> f64 {
    accumulate_candidates(scorer, params, candidates, grad, &mut Scratch::default())
}

trait GradSink {
    /// Adds `scale * g` to entity row `e`.
    fn add_entity(&mut self, e: usize, scale: f64, g: &[f64]);
    fn add_relation(&mut self, r: usize, scale: f64, g: &[f64]);
}

fn axpy(row: &mut [f64], scale: f64, g: &[f64]) {
    row.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b);
}

impl GradSink for KgeParams {
    fn add_entity(&mut self, e: usize, scale: f64, g: &[f64]) {
        let d = self.dim;
        axpy(&mut self.entities[e * d..(e + 1) * d], scale, g);
    }

    fn add_relation(&mut self, r: usize, scale: f64, g: &[f64]) {
        let d = self.dim;
        axpy(&mut self.relations[r * d..(r + 1) * d], scale, g);
    }
}

/// Per-candidate work buffers, reused across calls.
#[derive(Default)]
struct Scratch {
    scores: Vec<f64>,
    /// TransE: `h + r - t` per candidate, row-major.
    diffs: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

fn accumulate_candidates<S: GradSink>(
    scorer: Scorer,
    params: &KgeParams,
    candidates: &[IndexTriple],
    sink: &mut S,
    scratch: &mut Scratch,
) -> f64 {
    let dim = params.dim;
    let n = candidates.len();
    scratch.scores.clear();
    match scorer {
        Scorer::TransE(norm) => {
            scratch.diffs.resize(n * dim, 0.0);
            for (i, &(h, r, t)) in candidates.iter().enumerate() {
                let d = &mut scratch.diffs[i * dim..(i + 1) * dim];
                let (hv, rv, tv) = (params.entity(h), params.relation(r), params.entity(t));
                for k in 0..dim {
                    d[k] = hv[k] + rv[k] - tv[k];
                }
                scratch.scores.push(match norm {
                    Norm::L1 => -d.iter().map(|x| x.abs()).sum::<f64>(),
                    Norm::L2 => -d.iter().map(|x| x * x).sum::<f64>().sqrt(),
                });
            }
        }
        Scorer::DistMult => {
            for &(h, r, t) in candidates {
                scratch.scores.push(scorer.score(params.entity(h), params.relation(r), params.entity(t)));
            }
        }
    }
    let (loss, probs) = log_softmax_parts(&scratch.scores);
    for (i, &(h, r, t)) in candidates.iter().enumerate() {
        let coef = probs[i] - if i == 0 { 1.0 } else { 0.0 };
        match scorer {
            Scorer::TransE(norm) => {
                let d = &mut scratch.diffs[i * dim..(i + 1) * dim];
                // score = -‖d‖ with d = h + r - t
                let scale = match norm {
                    Norm::L1 => {
                        d.iter_mut().for_each(|x| *x = if *x == 0.0 { 0.0 } else { x.signum() });
                        -coef
                    }
                    Norm::L2 => {
                        let len = -scratch.scores[i];
                        if len == 0.0 {
                            continue;
                        }
                        -coef / len
                    }
                };
                sink.add_entity(h, scale, d);
                sink.add_relation(r, scale, d);
                sink.add_entity(t, -scale, d);
            }
            Scorer::DistMult => {
                let (hv, rv, tv) = (params.entity(h), params.relation(r), params.entity(t));
                scratch.a.resize(dim, 0.0);
                scratch.b.resize(dim, 0.0);
                for k in 0..dim {
                    scratch.a[k] = rv[k] * tv[k];
                    scratch.b[k] = hv[k] * tv[k];
                }
                sink.add_entity(h, coef, &scratch.a);
                sink.add_relation(r, coef, &scratch.b);
                for k in 0..dim {
                    scratch.a[k] = hv[k] * rv[k];
                }
                sink.add_entity(t, coef, &scratch.a);
            }
        }
    }
    loss
}

/// Dense accumulator that remembers which rows were touched.
struct DenseGrad {
    grad: KgeParams,
    touched_entities: Vec<usize>,
    touched_relations: Vec<usize>,
    entity_mark: Vec<bool>,
    relation_mark: Vec<bool>,
}

impl DenseGrad {
    fn new(dim: usize, ne: usize, nr: usize) -> Self {
        DenseGrad {
            grad: KgeParams::zeros(dim, ne, nr),
            touched_entities: Vec::new(),
            touched_relations: Vec::new(),
            entity_mark: vec![false; ne],
            relation_mark: vec![false; nr],
        }
    }
}

impl GradSink for DenseGrad {
    fn add_entity(&mut self, e: usize, scale: f64, g: &[f64]) {
        if !self.entity_mark[e] {
            self.entity_mark[e] = true;
            self.touched_entities.push(e);
        }
        self.grad.add_entity(e, scale, g);
    }

    fn add_relation(&mut self, r: usize, scale: f64, g: &[f64]) {
        if !self.relation_mark[r] {
            self.relation_mark[r] = true;
            self.touched_relations.push(r);
        }
        self.grad.add_relation(r, scale, g);
    }
}

/// Sparse accumulator for data-parallel chunks.
#[derive(Default)]
struct SparseGrad {
    entities: HashMap<usize, Vec<f64>>,
    relations: HashMap<usize, Vec<f64>>,
}

impl GradSink for SparseGrad {
    fn add_entity(&mut self, e: usize, scale: f64, g: &[f64]) {
        axpy(self.entities.entry(e).or_insert_with(|| vec![0.0; g.len()]), scale, g);
    }

    fn add_relation(&mut self, r: usize, scale: f64, g: &[f64]) {
        axpy(self.relations.entry(r).or_insert_with(|| vec![0.0; g.len()]), scale, g);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub config: KgeConfig,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Learned vectors for every interned entity and relation of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub params: KgeParams,
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
    /// Absent for tables loaded from disk.
    pub training: Option<TrainingSummary>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn entity_count(&self) -> usize {
        self.entity_names.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_vector(&self, e: usize) -> Option<&[f64]> {
        (e < self.entity_count()).then(|| self.params.entity(e))
    }

    pub fn relation_vector(&self, r: usize) -> Option<&[f64]> {
        (r < self.relation_count()).then(|| self.params.relation(r))
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.training.as_ref().map(|t| t.final_loss)
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "auditlp-emb v1 {} {} {}",
            self.dim(),
            self.entity_count(),
            self.relation_count()
        )?;
        let rows = self
            .entity_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n, self.params.entity(i)))
            .chain(self.relation_names.iter().enumerate().map(|(i, n)| (n, self.params.relation(i))));
        for (name, v) in rows {
            write!(w, "{name}")?;
            for x in v {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<EmbeddingTable> {
        let mut lines = r.lines();
        let bad = |m: String| AuditError::Parse(format!("embedding file: {m}"));
        let header = lines
            .next()
            .ok_or_else(|| bad("empty file".into()))?
            .map_err(|e| AuditError::io("<embeddings>", e))?;
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() != 5 || parts[0] != "auditlp-emb" || parts[1] != "v1" {
            return Err(bad(format!("bad header `{header}`")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad header `{header}`")));
        let (dim, ne, nr) = (num(parts[2])?, num(parts[3])?, num(parts[4])?);
        let mut params = KgeParams::zeros(dim, ne, nr);
        let mut entity_names = Vec::with_capacity(ne);
        let mut relation_names = Vec::with_capacity(nr);
        for row in 0..ne + nr {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("expected {} rows, found {row}", ne + nr)))?
                .map_err(|e| AuditError::io("<embeddings>", e))?;
            let mut fields: Vec<&str> = line.rsplitn(dim + 1, ' ').collect();
            if fields.len() != dim + 1 {
                return Err(bad(format!("row {} has too few values", row + 2)));
            }
            let name = fields.pop().unwrap().to_owned();
            fields.reverse();
            let target = if row < ne {
                entity_names.push(name);
                &mut params.entities[row * dim..(row + 1) * dim]
            } else {
                relation_names.push(name);
                &mut params.relations[(row - ne) * dim..(row - ne + 1) * dim]
            };
            for (slot, f) in target.iter_mut().zip(&fields) {
                *slot = f.parse().map_err(|_| bad(format!("row {}: bad number `{f}`", row + 2)))?;
            }
        }
        Ok(EmbeddingTable {
            params,
            entity_names,
            relation_names,
            training: None,
        })
    }
}

fn normalize_row(row: &mut [f64]) {
    let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        row.iter_mut().for_each(|x| *x /= n);
    }
}

/// Draws the positive followed by `neg` corruptions of head or tail.
fn corrupt<R: Rng>(rng: &mut R, t: &Triple, neg: usize, entity_count: usize, out: &mut Vec<IndexTriple>) {
    out.clear();
    let (h, r, tl) = (t.head.index(), t.relation.index(), t.tail.index());
    out.push((h, r, tl));
    for _ in 0..neg {
        let e = rng.gen_range(0..entity_count);
        if rng.gen_bool(0.5) {
            out.push((h, r, e));
        } else {
            out.push((e, r, tl));
        }
    }
}

/// Trains embeddings for every entity and relation interned in `graph`.
pub fn train(graph: &KnowledgeGraph, config: &KgeConfig) -> Result<EmbeddingTable> {
    config.validate()?;
    if graph.is_empty() {
        return Err(AuditError::InsufficientData("cannot train embeddings on an empty graph".into()));
    }
    let dim = config.dim;
    let ne = graph.entity_count();
    let nr = graph.relation_count();
    let scorer = config.scorer();
    let mut init_rng = rng::stream(config.seed, &[0x494e_4954]);
    let bound = 6.0 / (dim as f64).sqrt();
    let mut params = KgeParams::zeros(dim, ne, nr);
    params.entities.iter_mut().for_each(|x| *x = init_rng.gen_range(-bound..=bound));
    params.relations.iter_mut().for_each(|x| *x = init_rng.gen_range(-bound..=bound));
    if config.model == KgeModel::TransE {
        params.entities.chunks_mut(dim).for_each(normalize_row);
        params.relations.chunks_mut(dim).for_each(normalize_row);
    }

    let mut order: Vec<usize> = (0..graph.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut rng = rng::stream(config.seed, &[0x5452_4149]);
    let mut candidates = Vec::with_capacity(config.neg_samples + 1);
    let mut dense = DenseGrad::new(dim, ne, nr);
    let mut scratch = Scratch::default();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            // Corruptions are drawn up front so both modes see the same batch.
            let batch_candidates: Vec<Vec<IndexTriple>> = batch
                .iter()
                .map(|&i| {
                    corrupt(&mut rng, &graph.triples()[i], config.neg_samples, ne, &mut candidates);
                    candidates.clone()
                })
                .collect();
            if config.parallel {
                let parts: Vec<(f64, SparseGrad)> = batch_candidates
                    .par_chunks(16)
                    .map(|chunk| {
                        let mut g = SparseGrad::default();
                        let mut scratch = Scratch::default();
                        let l = chunk
                            .iter()
                            .map(|c| accumulate_candidates(scorer, &params, c, &mut g, &mut scratch))
                            .sum();
                        (l, g)
                    })
                    .collect();
                for (l, part) in parts {
                    total += l;
                    for (e, g) in sorted(part.entities) {
                        dense.add_entity(e, 1.0, &g);
                    }
                    for (r, g) in sorted(part.relations) {
                        dense.add_relation(r, 1.0, &g);
                    }
                }
            } else {
                for c in &batch_candidates {
                    total += accumulate_candidates(scorer, &params, c, &mut dense, &mut scratch);
                }
            }
            apply(&mut params, &mut dense, config.learning_rate, config.model == KgeModel::TransE);
        }
        let mean = total / graph.len() as f64;
        if !mean.is_finite() {
            return Err(AuditError::Diverged(mean));
        }
        epoch_losses.push(mean);
    }
    Ok(EmbeddingTable {
        params,
        entity_names: graph.entity_names().to_vec(),
        relation_names: graph.relation_names().to_vec(),
        training: Some(TrainingSummary {
            config: config.clone(),
            final_loss: *epoch_losses.last().unwrap(),
            epoch_losses,
        }),
    })
}

fn sorted(map: HashMap<usize, Vec<f64>>) -> Vec<(usize, Vec<f64>)> {
    let mut v: Vec<_> = map.into_iter().collect();
    v.sort_unstable_by_key(|(k, _)| *k);
    v
}

/// SGD step over the touched rows, then resets the accumulator.
fn apply(params: &mut KgeParams, acc: &mut DenseGrad, lr: f64, renormalize: bool) {
    let dim = params.dim;
    for &e in &acc.touched_entities {
        let g = &mut acc.grad.entities[e * dim..(e + 1) * dim];
        let row = &mut params.entities[e * dim..(e + 1) * dim];
        row.iter_mut().zip(g.iter()).for_each(|(p, d)| *p -= lr * d);
        g.fill(0.0);
        if renormalize {
            normalize_row(row);
        }
        acc.entity_mark[e] = false;
    }
    for &r in &acc.touched_relations {
        let g = &mut acc.grad.relations[r * dim..(r + 1) * dim];
        let row = &mut params.relations[r * dim..(r + 1) * dim];
        row.iter_mut().zip(g.iter()).for_each(|(p, d)| *p -= lr * d);
        g.fill(0.0);
        acc.relation_mark[r] = false;
    }
    acc.touched_entities.clear();
    acc.touched_relations.clear();
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Raw,
    Filtered,
}

pub const HITS_AT: [u32; 3] = [5, 10, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub protocol: Protocol,
    pub mrr: f64,
    pub hits_at: BTreeMap<u32, f64>,
    pub evaluated_triples: usize,
}

/// Tail rank of each test triple among all entities. Ties take the mean rank
/// of the tied block; the filtered protocol drops other known-true tails.
pub fn tail_ranks(
    embeddings: &EmbeddingTable,
    scorer: Scorer,
    test: &[Triple],
    known: &[Triple],
    protocol: Protocol,
) -> Vec<f64> {
    let mut known_tails: HashMap<(usize, usize), HashSet<usize>> = HashMap::new();
    if protocol == Protocol::Filtered {
        for t in known {
            known_tails
                .entry((t.head.index(), t.relation.index()))
                .or_default()
                .insert(t.tail.index());
        }
    }
    let p = &embeddings.params;
    test.iter()
        .map(|t| {
            let (h, r, tail) = (t.head.index(), t.relation.index(), t.tail.index());
            let hv = p.entity(h);
            let rv = p.relation(r);
            let target = scorer.score(hv, rv, p.entity(tail));
            let filter = known_tails.get(&(h, r));
            let (mut greater, mut equal) = (0usize, 0usize);
            for e in 0..embeddings.entity_count() {
                if e == tail || filter.is_some_and(|f| f.contains(&e)) {
                    continue;
                }
                let s = scorer.score(hv, rv, p.entity(e));
                if s > target {
                    greater += 1;
                } else if s == target {
                    equal += 1;
                }
            }
            greater as f64 + 1.0 + equal as f64 / 2.0
        })
        .collect()
}

pub fn evaluate_ranking(
    embeddings: &EmbeddingTable,
    scorer: Scorer,
    test: &[Triple],
    known: &[Triple],
    protocol: Protocol,
) -> Result<RankingReport> {
    if test.is_empty() {
        return Err(AuditError::InsufficientData("empty ranking test set".into()));
    }
    for t in test {
        if t.head.index() >= embeddings.entity_count()
            || t.tail.index() >= embeddings.entity_count()
            || t.relation.index() >= embeddings.relation_count()
        {
            return Err(AuditError::MissingEmbedding(format!("{t:?}")));
        }
    }
    let ranks = tail_ranks(embeddings, scorer, test, known, protocol);
    Ok(report_from_ranks(&ranks, protocol))
}

pub fn report_from_ranks(ranks: &[f64], protocol: Protocol) -> RankingReport {
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n;
    let hits_at = HITS_AT
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / n))
        .collect();
    RankingReport {
        protocol,
        mrr,
        hits_at,
        evaluated_triples: ranks.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{intern_triples, RawTriple};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn candidate_gradient_matches_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let candidates = [(0, 0, 1), (0, 0, 2), (0, 0, 3), (4, 1, 1)];
        for scorer in [Scorer::TransE(Norm::L1), Scorer::TransE(Norm::L2), Scorer::DistMult] {
            let mut p = KgeParams::zeros(6, 5, 2);
            p.entities.iter_mut().chain(p.relations.iter_mut()).for_each(|x| *x = rng.gen_range(-1.0..1.0));
            let mut g = KgeParams::zeros(6, 5, 2);
            candidate_loss_grad(scorer, &p, &candidates, &mut g);
            let eps = 1e-6;
            for i in 0..p.entities.len() {
                let mut q = p.clone();
                q.entities[i] += eps;
                let up = candidate_loss(scorer, &q, &candidates);
                q.entities[i] -= 2.0 * eps;
                let down = candidate_loss(scorer, &q, &candidates);
                assert!(((up - down) / (2.0 * eps) - g.entities[i]).abs() < 1e-6, "{scorer:?} entity {i}");
            }
            for i in 0..p.relations.len() {
                let mut q = p.clone();
                q.relations[i] += eps;
                let up = candidate_loss(scorer, &q, &candidates);
                q.relations[i] -= 2.0 * eps;
                let down = candidate_loss(scorer, &q, &candidates);
                assert!(((up - down) / (2.0 * eps) - g.relations[i]).abs() < 1e-6, "{scorer:?} relation {i}");
            }
        }
    }

    #[test]
    fn transe_scores() {
        assert_eq!(score_transe(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], Norm::L1).unwrap(), 0.0);
        assert_eq!(score_transe(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], Norm::L1).unwrap(), -2.0);
        assert_eq!(score_transe(&[0.0, 0.0], &[0.0, 0.0], &[3.0, 4.0], Norm::L2).unwrap(), -5.0);
        assert!(matches!(
            score_transe(&[0.0], &[0.0, 1.0], &[0.0, 1.0], Norm::L1),
            Err(AuditError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn transe_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = |rng: &mut ChaCha8Rng| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (h, r, t) = (v(&mut rng), v(&mut rng), v(&mut rng));
        let perm = [3, 0, 5, 1, 4, 2];
        let p = |x: &[f64]| perm.iter().map(|&i| x[i]).collect::<Vec<f64>>();
        for norm in [Norm::L1, Norm::L2] {
            let a = score_transe(&h, &r, &t, norm).unwrap();
            let b = score_transe(&p(&h), &p(&r), &p(&t), norm).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn distmult_scores() {
        assert_eq!(score_distmult(&[1.0, 2.0], &[1.0, 1.0], &[3.0, 1.0]).unwrap(), 5.0);
        assert_eq!(score_distmult(&[1.0, 0.0], &[1.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let v: Vec<Vec<f64>> = (0..3).map(|_| (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let a = score_distmult(&v[0], &v[1], &v[2]).unwrap();
            let b = score_distmult(&v[2], &v[1], &v[0]).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        assert!(score_distmult(&[1.0], &[1.0], &[]).is_err());
    }

    fn toy_graph() -> KnowledgeGraph {
        intern_triples(&[RawTriple::new("Q1", "P1", "Q2"), RawTriple::new("Q3", "P1", "Q4")]).unwrap()
    }

    #[test]
    fn loss_decreases_on_toy_graph() {
        for model in [KgeModel::TransE, KgeModel::DistMult] {
            let cfg = KgeConfig {
                model,
                dim: 8,
                epochs: 200,
                neg_samples: 3,
                batch_size: 2,
                learning_rate: 0.05,
                seed: 1,
                ..KgeConfig::default()
            };
            let table = train(&toy_graph(), &cfg).unwrap();
            let losses = &table.training.as_ref().unwrap().epoch_losses;
            assert!(losses[199] < losses[0], "{model}: {} vs {}", losses[199], losses[0]);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = KgeConfig { dim: 6, epochs: 20, batch_size: 1, seed: 9, ..KgeConfig::default() };
        let a = train(&toy_graph(), &cfg).unwrap();
        let b = train(&toy_graph(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn transe_rows_unit_norm() {
        let cfg = KgeConfig { dim: 5, epochs: 7, batch_size: 1, ..KgeConfig::default() };
        let t = train(&toy_graph(), &cfg).unwrap();
        for e in 0..t.entity_count() {
            let n: f64 = t.entity_vector(e).unwrap().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn parallel_mode_trains() {
        let cfg = KgeConfig { dim: 6, epochs: 30, batch_size: 2, parallel: true, ..KgeConfig::default() };
        let t = train(&toy_graph(), &cfg).unwrap();
        assert!(t.final_loss().unwrap().is_finite());
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = KgeConfig {
            model: KgeModel::DistMult,
            dim: 4,
            epochs: 200,
            learning_rate: 1e6,
            batch_size: 1,
            ..KgeConfig::default()
        };
        assert!(matches!(train(&toy_graph(), &cfg), Err(AuditError::Diverged(_))));
    }

    #[test]
    fn embedding_file_round_trip() {
        let cfg = KgeConfig { dim: 4, epochs: 3, ..KgeConfig::default() };
        let t = train(&toy_graph(), &cfg).unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert!(buf.starts_with(b"auditlp-emb v1 4 4 1\n"));
        let back = EmbeddingTable::read(buf.as_slice()).unwrap();
        assert_eq!(back.params, t.params);
        assert_eq!(back.entity_names, t.entity_names);
        assert_eq!(back.relation_names, t.relation_names);
    }

    fn fixed_table(scores: &[f64]) -> EmbeddingTable {
        // DistMult with h = r = 1 in dim 1: score(h, r, e) = e's value
        let n = scores.len() + 1;
        let mut params = KgeParams::zeros(1, n, 1);
        params.entities[0] = 1.0;
        params.entities[1..].copy_from_slice(scores);
        params.relations[0] = 1.0;
        EmbeddingTable {
            params,
            entity_names: (0..n).map(|i| format!("Q{i}")).collect(),
            relation_names: vec!["P1".into()],
            training: None,
        }
    }

    fn tri(h: u32, r: u32, t: u32) -> Triple {
        use crate::kg::{EntityId, RelationId};
        Triple { head: EntityId(h), relation: RelationId(r), tail: EntityId(t) }
    }

    #[test]
    fn ranking_examples() {
        // entity 0 is the head; candidates 1..=9 plus the head itself = 10 entities
        let table = fixed_table(&[0.9, 0.1, 0.2, 0.3, 0.35, 0.4, 0.5, 0.6, 0.7]);
        let r = evaluate_ranking(&table, Scorer::DistMult, &[tri(0, 0, 1)], &[], Protocol::Raw).unwrap();
        // the head scores 1.0 against itself and outranks entity 1
        assert_eq!(r.mrr, 0.5);
        let table = fixed_table(&[0.95, 0.1, 0.2, 0.3, 0.35, 0.4, 0.5, 0.6, 0.7]);
        let table = EmbeddingTable { params: KgeParams { entities: { let mut e = table.params.entities.clone(); e[0] = 0.5; e }, ..table.params.clone() }, ..table };
        // scores now: head 0.25, e1 .475, others .05-.35 => e1 unique maximum
        let r = evaluate_ranking(&table, Scorer::DistMult, &[tri(0, 0, 1)], &[], Protocol::Raw).unwrap();
        assert_eq!(r.mrr, 1.0);
        assert_eq!(r.hits_at[&5], 1.0);
        // e8 (0.6*0.5=.3) is beaten by e1 and e9
        let r = evaluate_ranking(&table, Scorer::DistMult, &[tri(0, 0, 8)], &[], Protocol::Raw).unwrap();
        assert!((r.mrr - 1.0 / 3.0).abs() < 1e-12);
        // filtering out the known tail e1 lifts it to rank 2
        let r = evaluate_ranking(&table, Scorer::DistMult, &[tri(0, 0, 8)], &[tri(0, 0, 1)], Protocol::Filtered).unwrap();
        assert_eq!(r.mrr, 0.5);
        assert!(evaluate_ranking(&table, Scorer::DistMult, &[], &[], Protocol::Raw).is_err());
    }

    #[test]
    fn ties_take_mean_rank() {
        // the head itself scores 1.0; entities 1-3 tie at 0.5 and share ranks 2, 3, 4
        let table = fixed_table(&[0.5, 0.5, 0.5, 0.1]);
        let ranks = tail_ranks(&table, Scorer::DistMult, &[tri(0, 0, 1)], &[], Protocol::Raw);
        assert_eq!(ranks, vec![3.0]);
        let ranks = tail_ranks(&table, Scorer::DistMult, &[tri(0, 0, 4)], &[], Protocol::Raw);
        assert_eq!(ranks, vec![5.0]);
    }
}
