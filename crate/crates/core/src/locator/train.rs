use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grad::{batch_gradients, Example};
use super::{LocatorConfig, LocatorError, LocatorParams};
use crate::embedding::{embed_query, embed_transcript, EmbeddingBackend};
use crate::ingest::{Corpus, GoldSpan, QueryKind};
use crate::matrix::Matrix;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &LocatorParams) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut LocatorParams, grad: &LocatorParams) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let grads = grad.tensors();
        for (i, (_, p)) in params.tensors_mut().into_iter().enumerate() {
            let g = grads[i].1;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingLog {
    pub examples: usize,
    pub length_norm: f64,
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

/// Embedded, owned training example.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub transcript: usize,
    pub query: Matrix,
    pub golds: Vec<GoldSpan>,
    pub length: usize,
}

impl TrainingPair {
    fn as_example<'a>(&'a self, transcripts: &'a [Matrix]) -> Example<'a> {
        Example {
            transcript: &transcripts[self.transcript],
            query: &self.query,
            golds: &self.golds,
            length: self.length,
        }
    }
}

/// The parameters training starts from for this config and seed.
pub fn initial_params(in_dim: usize, config: &LocatorConfig, length_norm: f64) -> LocatorParams {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    LocatorParams::random(in_dim, config, length_norm, config.init_scale, &mut rng)
}

/// Trains on pre-embedded data. `transcripts[i]` is referenced by
/// `TrainingPair::transcript`.
pub fn train_embedded(
    transcripts: &[Matrix],
    pairs: &[TrainingPair],
    in_dim: usize,
    config: &LocatorConfig,
    length_norm: f64,
) -> Result<(LocatorParams, TrainingLog), LocatorError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(LocatorError::EmptyTrainingSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params =
        LocatorParams::random(in_dim, config, length_norm, config.init_scale, &mut rng);
    let mut adam = Adam::new(config.learning_rate, &params);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = TrainingLog {
        examples: pairs.len(),
        length_norm,
        epochs: Vec::with_capacity(config.epochs),
    };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Example> = chunk
                .iter()
                .map(|&i| pairs[i].as_example(transcripts))
                .collect();
            let (loss, grad) = batch_gradients(&params, &batch)?;
            if !loss.is_finite() {
                return Err(LocatorError::Divergence {
                    epoch,
                    learning_rate: config.learning_rate,
                });
            }
            total += loss * batch.len() as f64;
            adam.step(&mut params, &grad);
            if !params.is_finite() {
                return Err(LocatorError::Divergence {
                    epoch,
                    learning_rate: config.learning_rate,
                });
            }
        }
        let mean_loss = total / pairs.len() as f64;
        log::debug!("epoch {epoch}: mean loss {mean_loss:.6e}");
        log.epochs.push(EpochLog { epoch, mean_loss });
    }
    Ok((params, log))
}

/// Embeds every meeting that has specific queries, then trains. Each
/// transcript is embedded once and reused across epochs.
pub fn train(
    corpus: &Corpus,
    backend: &dyn EmbeddingBackend,
    config: &LocatorConfig,
) -> Result<(LocatorParams, TrainingLog), LocatorError> {
    config.validate()?;
    let mut transcripts = Vec::new();
    let mut pairs = Vec::new();
    for meeting in &corpus.meetings {
        let specific: Vec<_> = meeting
            .queries
            .iter()
            .filter(|q| q.kind == QueryKind::Specific && !q.gold_spans.is_empty())
            .collect();
        if specific.is_empty() {
            continue;
        }
        let idx = transcripts.len();
        transcripts.push(embed_transcript(backend, meeting)?.0);
        for q in specific {
            pairs.push(TrainingPair {
                transcript: idx,
                query: embed_query(backend, &q.text)?.rows,
                golds: q.gold_spans.clone(),
                length: meeting.length(),
            });
        }
    }
    if pairs.is_empty() {
        return Err(LocatorError::EmptyTrainingSet);
    }
    let length_norm = config.length_norm.unwrap_or_else(|| {
        corpus
            .meetings
            .iter()
            .map(|m| m.length())
            .max()
            .unwrap_or(1) as f64
    });
    train_embedded(
        &transcripts,
        &pairs,
        backend.descriptor().dimension,
        config,
        length_norm,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashBackend;
    use crate::ingest::{Meeting, QueryRecord, Split, Turn};

    fn one_query_corpus() -> Corpus {
        let turns = [
            "welcome everyone to the budget review",
            "first item is the marketing plan",
            "the marketing plan needs more money",
            "we agreed to cut travel costs",
            "next week we discuss hiring",
            "meeting adjourned",
        ];
        Corpus {
            split: Split::Train,
            meetings: vec![Meeting {
                id: "m0".into(),
                turns: turns.iter().map(|t| Turn::new("Chair", *t)).collect(),
                queries: vec![QueryRecord {
                    text: "what was said about the marketing plan".into(),
                    reference_summary: "more money for marketing".into(),
                    kind: QueryKind::Specific,
                    gold_spans: vec![GoldSpan::new(1, 3)],
                }],
                topic_list: None,
            }],
        }
    }

    #[test]
    fn memorizes_single_target() {
        let backend = HashBackend::new(16, 1);
        let config = LocatorConfig {
            epochs: 500,
            learning_rate: 1e-3,
            seed: 3,
            ..Default::default()
        };
        let (_, log) = train(&one_query_corpus(), &backend, &config).unwrap();
        let last = log.final_loss().unwrap();
        assert!(last < 1e-3, "final loss {last}");
        assert!(last < log.epochs[0].mean_loss);
    }

    #[test]
    fn same_seed_same_bytes() {
        let backend = HashBackend::new(8, 1);
        let config = LocatorConfig {
            epochs: 5,
            out_channels: 6,
            projection_dim: 5,
            hidden_dim: 7,
            seed: 11,
            ..Default::default()
        };
        let (a, la) = train(&one_query_corpus(), &backend, &config).unwrap();
        let (b, lb) = train(&one_query_corpus(), &backend, &config).unwrap();
        let bits = |p: &LocatorParams| -> Vec<u64> {
            p.tensors()
                .iter()
                .flat_map(|(_, t)| t.iter().map(|x| x.to_bits()))
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(la, lb);
    }

    #[test]
    fn zero_epochs_would_start_from_initial_params() {
        let config = LocatorConfig {
            out_channels: 3,
            projection_dim: 4,
            hidden_dim: 5,
            seed: 9,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let direct = LocatorParams::random(8, &config, 6.0, config.init_scale, &mut rng);
        assert_eq!(initial_params(8, &config, 6.0), direct);
        assert_ne!(
            initial_params(
                8,
                &LocatorConfig {
                    seed: 10,
                    ..config.clone()
                },
                6.0
            ),
            direct
        );
    }

    #[test]
    fn general_only_corpus_is_rejected() {
        let mut c = one_query_corpus();
        c.meetings[0].queries[0].kind = QueryKind::General;
        c.meetings[0].queries[0].gold_spans.clear();
        let err = train(&c, &HashBackend::new(8, 0), &LocatorConfig::default()).unwrap_err();
        assert!(matches!(err, LocatorError::EmptyTrainingSet));
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let backend = HashBackend::new(8, 1);
        let config = LocatorConfig {
            epochs: 50,
            learning_rate: 1e200,
            ..Default::default()
        };
        match train(&one_query_corpus(), &backend, &config) {
            Err(LocatorError::Divergence { learning_rate, .. }) => assert_eq!(learning_rate, 1e200),
            other => panic!("expected divergence, got {:?}", other.map(|(_, l)| l)),
        }
    }
}
