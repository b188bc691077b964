use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss, loss_gradient, self_adversarial_weights};
use super::optim::{Optimizer, OptimizerKind};
use super::sampler::{sample_negatives, CorruptionSide, NegativeBatch};
use crate::dataset::{categorize_relations, FilterIndex, Split, Triple, TripleStore, DEFAULT_ETA};
use crate::error::{KgeError, Result};
use crate::evaluation::{evaluate, EvalOptions};
use crate::model::{EntityTable, KgeModel, RelationInit};
use crate::scalar::Scalar;
use crate::scoring::{accumulate_score_grad, CompoundSpec, RelationParams, TrainableMask};

/// Positives per gradient work unit. Fixed so that parallel and serial runs
/// reduce in the same order.
const CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub negative_size: usize,
    /// Sampling temperature; 0 weights all negatives equally.
    pub adversarial_temperature: f64,
    pub margin: f64,
    pub max_steps: u64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub valid_interval: u64,
    /// Single-threaded gradient and evaluation passes.
    pub deterministic: bool,
    /// Share one set of angles between head and tail chains when both rotate.
    pub shared_rotation: bool,
    pub relation_init: RelationInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            negative_size: 64,
            adversarial_temperature: 1.0,
            margin: 6.0,
            max_steps: 1000,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            valid_interval: 1000,
            deterministic: false,
            shared_rotation: true,
            relation_init: RelationInit::Random,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(KgeError::invalid(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be a non-negative finite number");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.negative_size == 0 {
            return bad("negative sample size must be positive");
        }
        if !(self.adversarial_temperature >= 0.0) {
            return bad("adversarial temperature must be non-negative");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if self.valid_interval == 0 {
            return bad("validation interval must be positive");
        }
        Ok(())
    }
}

/// Mutable training state: model, optimizer, RNG and gradient buffers.
pub struct TrainState<T> {
    pub model: KgeModel<T>,
    pub optimizer: Optimizer<T>,
    pub rng: ChaCha8Rng,
    pub step: u64,
    /// Entity rows re-randomized by normalization so far.
    pub reinitialized_rows: usize,
    mask: TrainableMask,
    next_side: CorruptionSide,
    entity_grad: EntityTable<T>,
    relation_grad: Vec<RelationParams<T>>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: KgeModel<T>, config: &TrainConfig, rng: ChaCha8Rng) -> Self {
        let mask = TrainableMask::for_spec(&model.spec, model.shared_rotation());
        let entity_grad = EntityTable::zeros(model.entity_count(), model.dim());
        let relation_grad = model.relations.iter().map(|r| r.zeros_like()).collect();
        Self {
            optimizer: Optimizer::new(config.optimizer, config.learning_rate),
            model,
            rng,
            step: 0,
            reinitialized_rows: 0,
            mask,
            next_side: CorruptionSide::Tail,
            entity_grad,
            relation_grad,
        }
    }
}

struct ChunkResult<T> {
    loss_sum: f64,
    bad: Option<(Triple, f64)>,
    entities: BTreeMap<u32, Vec<T>>,
    relations: BTreeMap<u32, RelationParams<T>>,
}

fn chunk_gradient<T: Scalar>(
    model: &KgeModel<T>,
    work: &[NegativeBatch],
    config: &TrainConfig,
    batch_len: usize,
) -> ChunkResult<T> {
    let dim = model.dim();
    let mut out = ChunkResult {
        loss_sum: 0.0,
        bad: None,
        entities: BTreeMap::new(),
        relations: BTreeMap::new(),
    };
    let inv_batch = 1.0 / batch_len as f64;
    let margin = config.margin;
    for neg in work {
        let pos = neg.source;
        let rel = &model.relations[pos.relation as usize];
        let pos_score = model.score(pos.head, pos.relation, pos.tail).as_f64();
        let negatives: Vec<Triple> = neg.triples().collect();
        let neg_scores: Vec<f64> = negatives
            .iter()
            .map(|t| model.score(t.head, t.relation, t.tail).as_f64())
            .collect();
        // Harder negatives (smaller distance) get more weight.
        let plausibility: Vec<f64> = neg_scores.iter().map(|f| margin - f).collect();
        let weights = self_adversarial_weights(&plausibility, config.adversarial_temperature);
        let l = loss(pos_score, &neg_scores, &weights, margin);
        if !l.is_finite() && out.bad.is_none() {
            out.bad = Some((pos, l));
        }
        out.loss_sum += l;
        let (d_pos, d_neg) = loss_gradient(pos_score, &neg_scores, &weights, margin);

        let grel = out
            .relations
            .entry(pos.relation)
            .or_insert_with(|| rel.zeros_like());
        let mut accumulate = |t: &Triple, upstream: f64, grel: &mut RelationParams<T>| {
            if upstream == 0.0 {
                return;
            }
            let mut gh = vec![T::zero(); dim];
            let mut gt = vec![T::zero(); dim];
            accumulate_score_grad(
                model.entities.row(t.head as usize),
                rel,
                model.entities.row(t.tail as usize),
                &model.spec,
                T::of(upstream * inv_batch),
                &mut gh,
                &mut gt,
                grel,
            );
            for (id, g) in [(t.head, gh), (t.tail, gt)] {
                let row = out.entities.entry(id).or_insert_with(|| vec![T::zero(); dim]);
                row.iter_mut().zip(&g).for_each(|(a, b)| *a += *b);
            }
        };
        accumulate(&pos, d_pos, grel);
        for (t, d) in negatives.iter().zip(&d_neg) {
            accumulate(t, *d, grel);
        }
    }
    out
}

/// One optimizer update on `batch`: alternate-side negatives per positive,
/// self-adversarially weighted loss, update, then unit-norm projection of
/// entities. Returns the batch mean loss.
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &[Triple],
    config: &TrainConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(KgeError::invalid("empty training batch"));
    }
    let n = state.model.entity_count();
    let mut work = Vec::with_capacity(batch.len());
    for t in batch {
        let side = state.next_side;
        state.next_side = side.flip();
        work.push(sample_negatives(*t, config.negative_size, side, n, &mut state.rng)?);
    }

    let model = &state.model;
    let results: Vec<ChunkResult<T>> = if config.deterministic {
        work.chunks(CHUNK)
            .map(|c| chunk_gradient(model, c, config, batch.len()))
            .collect()
    } else {
        work.par_chunks(CHUNK)
            .map(|c| chunk_gradient(model, c, config, batch.len()))
            .collect()
    };

    let mut loss_sum = 0.0;
    let mut touched = Vec::new();
    for r in results {
        if let Some((triple, loss)) = r.bad {
            return Err(KgeError::NonFiniteLoss {
                step: state.step,
                loss,
                triple,
            });
        }
        loss_sum += r.loss_sum;
        for (id, g) in r.entities {
            let row = state.entity_grad.row_mut(id as usize);
            row.iter_mut().zip(&g).for_each(|(a, b)| *a += *b);
            touched.push(id);
        }
        for (id, g) in r.relations {
            state.relation_grad[id as usize].add_assign(&g);
        }
    }
    let mean_loss = loss_sum / batch.len() as f64;
    if !mean_loss.is_finite() {
        return Err(KgeError::NonFiniteLoss {
            step: state.step,
            loss: mean_loss,
            triple: batch[0],
        });
    }

    {
        let mask = state.mask;
        let mut params: Vec<&mut [T]> = vec![state.model.entities.as_mut_slice()];
        let mut grads: Vec<&[T]> = vec![state.entity_grad.as_slice()];
        for (p, g) in state.model.relations.iter_mut().zip(&state.relation_grad) {
            let sides = [(&mut p.head, &g.head, mask.head), (&mut p.tail, &g.tail, mask.tail)];
            for (ps, gs, m) in sides {
                if m[0] {
                    params.push(&mut ps.translation);
                    grads.push(&gs.translation);
                }
                if m[1] {
                    params.push(&mut ps.angles);
                    grads.push(&gs.angles);
                }
                if m[2] {
                    params.push(&mut ps.scale);
                    grads.push(&gs.scale);
                }
            }
        }
        state.optimizer.step(&mut params, &grads);
    }

    for id in touched {
        state.entity_grad.row_mut(id as usize).fill(T::zero());
    }
    for g in &mut state.relation_grad {
        *g = g.zeros_like();
    }
    state.reinitialized_rows += normalize_entities(&mut state.model.entities, &mut state.rng);
    state.step += 1;
    Ok(mean_loss)
}

/// Projects every entity row onto the unit sphere. Rows already at unit
/// norm (to rounding) are left bit-identical; rows with norm below 1e-12
/// are re-drawn. Returns how many rows were re-drawn.
pub fn normalize_entities<T: Scalar, R: Rng>(table: &mut EntityTable<T>, rng: &mut R) -> usize {
    let dim = table.dim();
    let slack = T::epsilon() * T::of(4.0);
    let mut redrawn = 0;
    for i in 0..table.len() {
        let row = table.row_mut(i);
        let sq: T = row.iter().map(|x| *x * *x).sum();
        if sq.sqrt().as_f64() < 1e-12 {
            let bound = 0.5 / (dim as f64).sqrt();
            loop {
                for x in row.iter_mut() {
                    *x = T::of(rng.random_range(-bound..=bound));
                }
                if row.iter().map(|x| *x * *x).sum::<T>().sqrt().as_f64() > 1e-12 {
                    break;
                }
            }
            redrawn += 1;
            let n = row.iter().map(|x| *x * *x).sum::<T>().sqrt();
            row.iter_mut().for_each(|x| *x /= n);
        } else if (sq - T::one()).abs() > slack {
            let n = sq.sqrt();
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
    if redrawn > 0 {
        log::warn!("re-initialized {redrawn} degenerate entity rows");
    }
    redrawn
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub valid_mrr: Option<f64>,
    pub elapsed_seconds: f64,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "step,loss,valid_mrr,elapsed_seconds";

    pub fn to_csv_line(&self) -> String {
        let mrr = self.valid_mrr.map(|m| m.to_string()).unwrap_or_default();
        format!("{},{},{},{:.3}", self.step, self.loss, mrr, self.elapsed_seconds)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(LogRow::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.to_csv_line());
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

pub struct TrainOutcome<T> {
    /// Model with the best validation MRR (the last model when there is no
    /// validation split).
    pub best: KgeModel<T>,
    pub best_step: u64,
    pub best_valid_mrr: Option<f64>,
    pub last: KgeModel<T>,
    pub log: TrainLog,
    pub rng: ChaCha8Rng,
    pub steps: u64,
}

/// Initializes a model from `config.seed` and trains it on `store.train`.
/// `observer` sees every log row as it is produced.
pub fn train<T: Scalar>(
    store: &TripleStore,
    spec: &CompoundSpec,
    config: &TrainConfig,
    mut observer: impl FnMut(&LogRow),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if store.train.is_empty() {
        return Err(KgeError::invalid("training split is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = KgeModel::<T>::init(
        spec.clone(),
        store.entity_count(),
        store.relation_count(),
        config.shared_rotation,
        config.relation_init,
        &mut rng,
    )?;
    let mut state = TrainState::new(model, config, rng);

    let validate = !store.valid.is_empty() && config.max_steps > 0;
    let (filter, categories) = if validate {
        (
            Some(FilterIndex::build(store)),
            Some(categorize_relations(store, DEFAULT_ETA)?),
        )
    } else {
        (None, None)
    };
    let eval_opts = EvalOptions {
        parallel: !config.deterministic,
        ..EvalOptions::default()
    };

    let mut order: Vec<usize> = (0..store.train.len()).collect();
    order.shuffle(&mut state.rng);
    let mut cursor = 0;
    let mut log = TrainLog::default();
    let mut best: Option<(KgeModel<T>, u64, f64)> = None;
    let started = Instant::now();

    while state.step < config.max_steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut state.rng);
                cursor = 0;
            }
            batch.push(store.train[order[cursor]]);
            cursor += 1;
        }
        let loss = train_step(&mut state, &batch, config)?;
        let step = state.step;
        let mut valid_mrr = None;
        if validate && (step % config.valid_interval == 0 || step == config.max_steps) {
            let report = evaluate(
                &state.model,
                store,
                Split::Valid,
                categories.as_deref().unwrap(),
                filter.as_ref().unwrap(),
                &eval_opts,
            )?;
            let mrr = report.overall.mrr;
            valid_mrr = Some(mrr);
            if best.as_ref().is_none_or(|(_, _, b)| mrr > *b) {
                best = Some((state.model.clone(), step, mrr));
            }
        }
        let row = LogRow {
            step,
            loss,
            valid_mrr,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        };
        observer(&row);
        log.rows.push(row);
    }

    let steps = state.step;
    let last = state.model;
    let (best, best_step, best_valid_mrr) = match best {
        Some((m, s, mrr)) => (m, s, Some(mrr)),
        None => (last.clone(), steps, None),
    };
    Ok(TrainOutcome {
        best,
        best_step,
        best_valid_mrr,
        last,
        log,
        rng: state.rng,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{ModelPreset, Norm};

    fn toy_store() -> TripleStore {
        let train = vec![
            Triple::new(0, 0, 1),
            Triple::new(1, 0, 2),
            Triple::new(2, 0, 3),
            Triple::new(3, 0, 4),
            Triple::new(0, 1, 4),
            Triple::new(4, 1, 0),
            Triple::new(1, 1, 3),
            Triple::new(3, 1, 1),
        ];
        TripleStore::from_ids(5, 2, train, vec![], vec![]).unwrap()
    }

    fn state(config: &TrainConfig) -> TrainState<f64> {
        let spec = ModelPreset::CompoundE.spec(8, Norm::L1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = KgeModel::init(spec, 5, 2, true, RelationInit::Random, &mut rng).unwrap();
        TrainState::new(model, config, rng)
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let config = TrainConfig {
            learning_rate: 0.0,
            batch_size: 4,
            negative_size: 3,
            ..TrainConfig::default()
        };
        let mut s = state(&config);
        let before = s.model.clone();
        let store = toy_store();
        let l = train_step(&mut s, &store.train[..4], &config).unwrap();
        assert!(l.is_finite());
        assert_eq!(s.model, before);
    }

    #[test]
    fn entities_unit_norm_after_step() {
        let config = TrainConfig {
            learning_rate: 0.05,
            batch_size: 8,
            negative_size: 4,
            ..TrainConfig::default()
        };
        let mut s = state(&config);
        let store = toy_store();
        for _ in 0..5 {
            train_step(&mut s, &store.train, &config).unwrap();
        }
        for row in s.model.entities.rows() {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9, "{n}");
        }
    }

    #[test]
    fn loss_drops_on_toy_graph() {
        let config = TrainConfig {
            learning_rate: 0.02,
            batch_size: 8,
            negative_size: 4,
            margin: 2.0,
            deterministic: true,
            ..TrainConfig::default()
        };
        let mut s = state(&config);
        let store = toy_store();
        let first = train_step(&mut s, &store.train, &config).unwrap();
        let mut last = first;
        for _ in 1..200 {
            last = train_step(&mut s, &store.train, &config).unwrap();
        }
        assert!(last < 0.5 * first, "first {first}, last {last}");
    }

    #[test]
    fn normalization_examples() {
        let mut t = EntityTable::from_vec(2, vec![3.0f64, 4.0, 0.6, 0.8, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let redrawn = normalize_entities(&mut t, &mut rng);
        assert_eq!(redrawn, 1);
        assert!((t.row(0)[0] - 0.6).abs() < 1e-15 && (t.row(0)[1] - 0.8).abs() < 1e-15);
        assert_eq!(t.row(1), &[0.6, 0.8]);
        let n = t.row(2).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_returns_initial_model() {
        let store = toy_store();
        let spec = ModelPreset::TransE.spec(4, Norm::L1).unwrap();
        let config = TrainConfig {
            max_steps: 0,
            ..TrainConfig::default()
        };
        let out = train::<f64>(&store, &spec, &config, |_| {}).unwrap();
        assert!(out.log.rows.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let init = KgeModel::init(spec, 5, 2, true, RelationInit::Random, &mut rng).unwrap();
        assert_eq!(out.last, init);
    }

    #[test]
    fn log_has_one_row_per_step_and_csv_header() {
        let store = toy_store();
        let spec = ModelPreset::RotatE.spec(4, Norm::L1).unwrap();
        let config = TrainConfig {
            max_steps: 7,
            batch_size: 4,
            negative_size: 2,
            ..TrainConfig::default()
        };
        let mut seen = 0;
        let out = train::<f32>(&store, &spec, &config, |_| seen += 1).unwrap();
        assert_eq!(out.log.rows.len(), 7);
        assert_eq!(seen, 7);
        let csv = out.log.to_csv();
        assert!(csv.starts_with("step,loss,valid_mrr,elapsed_seconds\n1,"));
    }

    #[test]
    fn empty_dataset_rejected() {
        let store = TripleStore::from_ids(3, 1, vec![], vec![], vec![]).unwrap();
        let spec = ModelPreset::TransE.spec(4, Norm::L1).unwrap();
        assert!(train::<f64>(&store, &spec, &TrainConfig::default(), |_| {}).is_err());
    }
}
