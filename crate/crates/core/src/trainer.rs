//! Marginal log-likelihood training: gold antecedent sets, the loss, Adam
//! with staircase decay, and the epoch loop with early stopping and resume.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::corpus::{truncate_document, Clustering, Document, Span};
use crate::diffcore::{Checkpoint, DiffError, Graph, NodeId, ParamGrads, ParameterRegistry, Tensor};
use crate::encoder::WordEmbedder;
use crate::inference::{predict_documents, Antecedent};
use crate::metrics::{CorefCounts, CorefResults};
use crate::model::{CorefModel, ForwardPass, ModelError, Pruning};
use crate::nn::Phase;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("the training set is empty")]
    EmptyTrainingSet,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("malformed trainer state: {0}")]
    State(String),
}

impl From<DiffError> for TrainError {
    fn from(e: DiffError) -> Self {
        TrainError::Model(e.into())
    }
}

impl From<crate::diffcore::CheckpointError> for TrainError {
    fn from(e: crate::diffcore::CheckpointError) -> Self {
        TrainError::Model(e.into())
    }
}

/// `GOLD(i) ∩ Y(i)` for every accepted span: the candidates in the span's
/// gold cluster, or `[ε]` when there are none.
pub fn gold_antecedent_sets(accepted: &[Span], windows: &[Range<usize>], gold: &Clustering) -> Vec<Vec<Antecedent>> {
    let cluster_of = gold.mention_map();
    accepted
        .iter()
        .zip(windows)
        .map(|(span, window)| {
            let set: Vec<Antecedent> = match cluster_of.get(span) {
                Some(c) => window
                    .clone()
                    .filter(|&j| cluster_of.get(&accepted[j]) == Some(c))
                    .map(Antecedent::Span)
                    .collect(),
                None => Vec::new(),
            };
            if set.is_empty() {
                vec![Antecedent::Epsilon]
            } else {
                set
            }
        })
        .collect()
}

/// `Σ_i [log Σ_{y ∈ Y(i)} exp s(i, y) − log Σ_{y ∈ GOLD(i)} exp s(i, y)]`,
/// with `s(i, ε) = 0`.
pub fn marginal_nll(g: &mut Graph<'_>, pass: &ForwardPass, gold: &[Vec<Antecedent>]) -> Result<NodeId, DiffError> {
    let epsilon = g.constant_scalar(0.0)?;
    let mut terms = Vec::with_capacity(pass.accepted.len());
    for (i, gold_i) in gold.iter().enumerate() {
        let window = &pass.candidates[i];
        let mut all = Vec::with_capacity(window.len() + 1);
        all.push(epsilon);
        all.extend_from_slice(&pass.pair_scores[i]);
        let all = g.concat(&all)?;
        let normaliser = g.log_sum_exp(all)?;
        let correct: Vec<NodeId> = gold_i
            .iter()
            .map(|a| match *a {
                Antecedent::Epsilon => epsilon,
                Antecedent::Span(j) => pass.pair_scores[i][j - window.start],
            })
            .collect();
        let correct = g.concat(&correct)?;
        let marginal = g.log_sum_exp(correct)?;
        terms.push(g.sub(normaliser, marginal)?);
    }
    if terms.is_empty() {
        return Ok(epsilon);
    }
    let terms = g.concat(&terms)?;
    g.sum(terms)
}

/// Runs the model on `doc` and returns the loss with the forward pass.
pub fn document_loss(
    model: &CorefModel,
    g: &mut Graph<'_>,
    doc: &Document,
    pruning: Pruning<'_>,
    phase: &mut Phase<'_>,
) -> Result<(NodeId, ForwardPass), ModelError> {
    let pass = model.forward(g, doc, pruning, phase)?;
    let gold = gold_antecedent_sets(&pass.accepted, &pass.candidates, &doc.gold);
    let loss = marginal_nll(g, &pass, &gold)?;
    Ok((loss, pass))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// The gradient had a non-finite entry; parameters were left unchanged.
    Skipped,
}

/// Adam with bias correction. The learning rate is multiplied by
/// `decay_rate` after every `decay_steps` applied updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
    pub clip_norm: Option<f64>,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: &TrainConfig, params: &ParameterRegistry) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape().to_vec())).collect();
        Adam {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            decay_rate: config.decay_rate,
            decay_steps: config.decay_steps,
            clip_norm: config.clip_norm,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// The rate used by the next update.
    pub fn current_learning_rate(&self) -> f64 {
        self.learning_rate * self.decay_rate.powi((self.step / self.decay_steps) as i32)
    }

    pub fn apply(&mut self, params: &mut ParameterRegistry, grads: &ParamGrads) -> StepOutcome {
        if !grads.all_finite() {
            return StepOutcome::Skipped;
        }
        let scale = match self.clip_norm {
            Some(c) => {
                let norm = grads.global_norm();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let lr = self.current_learning_rate();
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let k = id.index();
            let grad = grads.get(id).data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let value = params.value_mut(id).data_mut();
            for e in 0..value.len() {
                let gr = grad[e] * scale;
                m[e] = self.beta1 * m[e] + (1.0 - self.beta1) * gr;
                v[e] = self.beta2 * v[e] + (1.0 - self.beta2) * gr * gr;
                let m_hat = m[e] / correction1;
                let v_hat = v[e] / correction2;
                value[e] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        StepOutcome::Applied
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LogRecord {
    Step {
        epoch: usize,
        step: u64,
        doc_key: String,
        loss: f64,
        learning_rate: f64,
        outcome: StepOutcome,
    },
    Eval {
        epoch: usize,
        step: u64,
        results: CorefResults,
        improved: bool,
    },
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogRecord::Step {
                epoch,
                step,
                doc_key,
                loss,
                learning_rate,
                outcome,
            } => {
                let skipped = if *outcome == StepOutcome::Skipped { " skipped=non-finite-gradient" } else { "" };
                write!(f, "step={step} epoch={epoch} doc={doc_key} loss={loss:.6} lr={learning_rate:.6e}{skipped}")
            }
            LogRecord::Eval {
                epoch,
                step,
                results,
                improved,
            } => write!(
                f,
                "eval epoch={epoch} step={step} muc_f1={:.4} b3_f1={:.4} ceaf_f1={:.4} avg_f1={:.4} best={improved}",
                results.muc.f1, results.b_cubed.f1, results.ceaf.f1, results.avg_f1
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub best_avg_f1: Option<f64>,
    pub stopped_early: bool,
    pub skipped_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StateHeader {
    seed: u64,
    epoch: usize,
    step: u64,
    best_avg_f1: Option<f64>,
    stale_evals: usize,
    config: TrainConfig,
}

/// Training state. Every epoch draws its randomness from a generator seeded
/// with `seed + epoch`, so resuming at an epoch boundary reproduces an
/// uninterrupted run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: CorefModel,
    pub config: TrainConfig,
    pub seed: u64,
    pub adam: Adam,
    /// Epochs completed.
    pub epoch: usize,
    pub best_avg_f1: Option<f64>,
    best_params: Option<ParameterRegistry>,
    stale_evals: usize,
}

impl Trainer {
    pub fn new(model: CorefModel, config: TrainConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate().map_err(TrainError::Config)?;
        let adam = Adam::new(&config, &model.params);
        Ok(Trainer {
            model,
            config,
            seed,
            adam,
            epoch: 0,
            best_avg_f1: None,
            best_params: None,
            stale_evals: 0,
        })
    }

    fn pruning(&self) -> Pruning<'static> {
        if self.model.config.oracle_mentions {
            Pruning::Oracle
        } else {
            Pruning::Scored
        }
    }

    /// One update per (shuffled, truncated) training document.
    pub fn run_epoch(&mut self, train: &[Document], log: &mut dyn FnMut(&LogRecord)) -> Result<Vec<LogRecord>, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        let epoch = self.epoch + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(epoch as u64));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut records = Vec::with_capacity(order.len());
        for k in order {
            let doc = truncate_document(&train[k], self.config.max_sentences, &mut rng);
            let learning_rate = self.adam.current_learning_rate();
            let computed = {
                let mut g = Graph::new(&self.model.params);
                let mut phase = Phase::Train(&mut rng);
                match document_loss(&self.model, &mut g, &doc, self.pruning(), &mut phase) {
                    Ok((loss, _)) => Some((g.scalar(loss), g.backward(loss)?.into_params())),
                    Err(ModelError::Diff(DiffError::NonFinite { .. })) => None,
                    Err(e) => return Err(e.into()),
                }
            };
            let (loss, outcome) = match computed {
                Some((loss, grads)) => (loss, self.adam.apply(&mut self.model.params, &grads)),
                None => (f64::NAN, StepOutcome::Skipped),
            };
            let record = LogRecord::Step {
                epoch,
                step: self.adam.step,
                doc_key: doc.doc_key(),
                loss,
                learning_rate,
                outcome,
            };
            log(&record);
            records.push(record);
        }
        self.epoch = epoch;
        Ok(records)
    }

    /// Corpus-level scores of the current parameters on `docs`.
    pub fn evaluate(&self, docs: &[Document]) -> Result<CorefResults, TrainError> {
        Ok(evaluate_model(&self.model, docs)?)
    }

    /// Whether `max_epochs` is reached or `patience` evaluations have passed
    /// without dev improvement.
    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.max_epochs || self.stale_evals >= self.config.patience
    }

    /// One epoch followed, when due, by a dev evaluation. Returns the number
    /// of skipped updates.
    pub fn train_epoch(
        &mut self,
        train: &[Document],
        dev: &[Document],
        log: &mut dyn FnMut(&LogRecord),
    ) -> Result<usize, TrainError> {
        let records = self.run_epoch(train, log)?;
        let skipped = records
            .iter()
            .filter(|r| matches!(r, LogRecord::Step { outcome: StepOutcome::Skipped, .. }))
            .count();
        if dev.is_empty() || !self.epoch.is_multiple_of(self.config.eval_every) {
            return Ok(skipped);
        }
        let results = self.evaluate(dev)?;
        let improved = self.best_avg_f1.is_none_or(|b| results.avg_f1 > b);
        if improved {
            self.best_avg_f1 = Some(results.avg_f1);
            self.best_params = Some(self.model.params.clone());
            self.stale_evals = 0;
        } else {
            self.stale_evals += 1;
        }
        log(&LogRecord::Eval {
            epoch: self.epoch,
            step: self.adam.step,
            results,
            improved,
        });
        Ok(skipped)
    }

    /// Epochs until [`Trainer::is_finished`], then restores the best
    /// parameters. With an empty dev set no evaluation happens and the final
    /// parameters are kept.
    pub fn train(
        &mut self,
        train: &[Document],
        dev: &[Document],
        log: &mut dyn FnMut(&LogRecord),
    ) -> Result<TrainOutcome, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        let start = self.epoch;
        let mut skipped = 0;
        while !self.is_finished() {
            skipped += self.train_epoch(train, dev, log)?;
        }
        if let Some(best) = &self.best_params {
            self.model.params = best.clone();
        }
        Ok(TrainOutcome {
            epochs_run: self.epoch - start,
            best_avg_f1: self.best_avg_f1,
            stopped_early: self.epoch < self.config.max_epochs,
            skipped_steps: skipped,
        })
    }

    /// The model with the best dev parameters seen so far (the current ones
    /// when nothing has been evaluated).
    pub fn best_model(&self) -> CorefModel {
        let mut model = self.model.clone();
        if let Some(best) = &self.best_params {
            model.params = best.clone();
        }
        model
    }

    /// Model, optimiser moments and loop counters, for resuming.
    pub fn to_checkpoint(&self) -> Result<Checkpoint, TrainError> {
        let mut ckpt = self.model.to_checkpoint()?;
        let header = StateHeader {
            seed: self.seed,
            epoch: self.epoch,
            step: self.adam.step,
            best_avg_f1: self.best_avg_f1,
            stale_evals: self.stale_evals,
            config: self.config.clone(),
        };
        let header = serde_json::to_string(&header).map_err(|e| TrainError::State(e.to_string()))?;
        ckpt.insert_text(STATE_SECTION, header)?;
        for (id, name, _) in self.model.params.iter() {
            ckpt.insert_tensor(format!("adam/m/{name}"), self.adam.m[id.index()].clone())?;
            ckpt.insert_tensor(format!("adam/v/{name}"), self.adam.v[id.index()].clone())?;
            if let Some(best) = &self.best_params {
                ckpt.insert_tensor(format!("best/{name}"), best.value(id).clone())?;
            }
        }
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, embedder: Arc<WordEmbedder>) -> Result<Self, TrainError> {
        let model = CorefModel::from_checkpoint(ckpt, embedder)?;
        let header: StateHeader =
            serde_json::from_str(ckpt.text(STATE_SECTION)?).map_err(|e| TrainError::State(e.to_string()))?;
        let mut trainer = Trainer::new(model, header.config, header.seed)?;
        trainer.epoch = header.epoch;
        trainer.adam.step = header.step;
        trainer.best_avg_f1 = header.best_avg_f1;
        trainer.stale_evals = header.stale_evals;
        let mut best = header.best_avg_f1.map(|_| trainer.model.params.clone());
        let names: HashMap<_, _> = trainer.model.params.iter().map(|(id, n, _)| (id, n.to_string())).collect();
        for id in trainer.model.params.ids() {
            let name = &names[&id];
            trainer.adam.m[id.index()] = ckpt.tensor(&format!("adam/m/{name}"))?.clone();
            trainer.adam.v[id.index()] = ckpt.tensor(&format!("adam/v/{name}"))?.clone();
            if let Some(best) = &mut best {
                *best.value_mut(id) = ckpt.tensor(&format!("best/{name}"))?.clone();
            }
        }
        trainer.best_params = best;
        Ok(trainer)
    }
}

const STATE_SECTION: &str = "trainer/state";

/// Corpus-level scores of `model` against the gold clusters of `docs`.
pub fn evaluate_model(model: &CorefModel, docs: &[Document]) -> Result<CorefResults, ModelError> {
    let predictions = predict_documents(&[model], docs)?;
    let mut counts = CorefCounts::default();
    for (doc, p) in docs.iter().zip(&predictions) {
        counts.add(&CorefCounts::score(&doc.gold, &p.clustering));
    }
    Ok(counts.results())
}
