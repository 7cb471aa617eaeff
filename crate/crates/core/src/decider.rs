//! Decision stage: stratified demonstrations, repeated voting per mediator
//! representative, and the front-door mixture that combines them.
//!
//! For a test tree the full pipeline asks the decision model `T` times per
//! representative inference (each ballot distinguished by a nonce), turns
//! the ballots into an exact vote distribution, and mixes the per-cluster
//! distributions weighted by cluster size:
//!
//! ```text
//! P(y | do(tree)) = Σ_i (|C_i| / n) · voteDist_i(y)
//! ```
//!
//! All distribution arithmetic uses exact rationals; callers get an `f64`
//! view only at the edge. Ties in the final argmax break toward the
//! higher risk level, the conservative direction for triage.

use std::collections::HashMap;

use num::rational::Ratio;
use num::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, ChatRequest, EmbeddingVector};
use crate::config::{Ablation, PipelineConfig};
use crate::mediator::{select_representatives, MediatorError};
use crate::prompts::{PromptError, PromptSet};
use crate::reasoner::{generate_inferences, DebateTranscript, ReasonerError};
use crate::seeds::derive_seed;
use crate::tree::{render_tree, ConversationTree, Dataset, RiskLabelSet};

#[derive(Debug, Error)]
pub enum DeciderError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Reasoner(#[from] ReasonerError),
    #[error(transparent)]
    Mediator(#[from] MediatorError),
    #[error("demonstration pool has no tree at level {level:?}")]
    EmptyDemonstrationLevel { level: String },
    #[error("demonstration pool tree {0:?} has no gold label")]
    UnlabeledPoolTree(String),
    #[error("ablation {0} needs a demonstration pool")]
    PoolRequired(Ablation),
    #[error(
        "tree {tree_id:?}: decision reply not parseable as a risk level even after reprompt: {raw:?}"
    )]
    ParseFailed { tree_id: String, raw: String },
}

// ---------------------------------------------------------------------------
// Exact distributions

/// A probability distribution over risk levels held as exact rationals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RiskDistribution {
    probs: Vec<Ratio<u64>>,
}

impl RiskDistribution {
    /// Vote-frequency distribution: probability of level `y` is the
    /// fraction of ballots that chose `y`.
    pub fn from_votes(votes: &[usize], num_labels: usize) -> Self {
        assert!(!votes.is_empty(), "at least one ballot required");
        let mut counts = vec![0u64; num_labels];
        for &v in votes {
            assert!(v < num_labels, "ballot {v} out of range");
            counts[v] += 1;
        }
        let t = votes.len() as u64;
        Self {
            probs: counts.iter().map(|&c| Ratio::new(c, t)).collect(),
        }
    }

    pub fn one_hot(label: usize, num_labels: usize) -> Self {
        assert!(label < num_labels);
        let mut probs = vec![Ratio::zero(); num_labels];
        probs[label] = Ratio::new(1, 1);
        Self { probs }
    }

    /// Front-door mixture Σ_i w_i · d_i, exact. Weights must sum to 1.
    pub fn mix(weights: &[Ratio<u64>], dists: &[RiskDistribution]) -> Self {
        assert_eq!(weights.len(), dists.len());
        assert!(!dists.is_empty());
        let total: Ratio<u64> = weights.iter().sum();
        assert_eq!(total, Ratio::new(1, 1), "mixture weights must sum to 1");
        let num_labels = dists[0].probs.len();
        let mut probs = vec![Ratio::zero(); num_labels];
        for (w, d) in weights.iter().zip(dists.iter()) {
            assert_eq!(d.probs.len(), num_labels);
            for (slot, p) in probs.iter_mut().zip(d.probs.iter()) {
                *slot += w * p;
            }
        }
        Self { probs }
    }

    pub fn exact(&self) -> &[Ratio<u64>] {
        &self.probs
    }

    /// Reduced (numerator, denominator) pairs, for serialization.
    pub fn pairs(&self) -> Vec<(u64, u64)> {
        self.probs.iter().map(|r| (*r.numer(), *r.denom())).collect()
    }

    pub fn from_pairs(pairs: &[(u64, u64)]) -> Self {
        Self {
            probs: pairs.iter().map(|&(n, d)| Ratio::new(n, d)).collect(),
        }
    }

    /// Correctly rounded float view of the exact distribution.
    pub fn probs_f64(&self) -> Vec<f64> {
        self.probs
            .iter()
            .map(|r| *r.numer() as f64 / *r.denom() as f64)
            .collect()
    }

    /// Most probable level; exact ties break toward the higher level.
    pub fn argmax_prefer_higher(&self) -> usize {
        let mut best = 0usize;
        for (i, p) in self.probs.iter().enumerate() {
            if *p >= self.probs[best] {
                best = i;
            }
        }
        best
    }
}

// ---------------------------------------------------------------------------
// Demonstration pool

/// One labeled training tree available as a graded example.
#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub tree_id: String,
    pub level: usize,
    pub rendering: String,
    pub embedding: EmbeddingVector,
}

/// Labeled training trees with embeddings of their renderings, queried at
/// decision time for per-level nearest examples.
#[derive(Debug, Clone)]
pub struct DemonstrationPool {
    pub num_levels: usize,
    pub entries: Vec<PoolEntry>,
}

impl DemonstrationPool {
    /// Embed every labeled tree's rendering. Unlabeled trees are an
    /// error: a pool exists precisely to provide graded examples.
    pub fn build(
        backend: &dyn Backend,
        config: &PipelineConfig,
        dataset: &Dataset,
    ) -> Result<Self, DeciderError> {
        let mut entries = Vec::with_capacity(dataset.trees.len());
        for tree in &dataset.trees {
            let level = tree
                .gold_label
                .ok_or_else(|| DeciderError::UnlabeledPoolTree(tree.id.clone()))?;
            let rendering = render_tree(tree, config.max_depth, config.max_nodes);
            let embedding = backend.embed(&rendering)?;
            entries.push(PoolEntry {
                tree_id: tree.id.clone(),
                level,
                rendering,
                embedding,
            });
        }
        Ok(Self {
            num_levels: dataset.label_set.len(),
            entries,
        })
    }

    pub fn tree_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.tree_id.as_str()).collect()
    }
}

/// For each risk level in ascending order, the `per_level` pool entries
/// most similar to the query embedding. The query tree itself is never a
/// candidate — using it would hand the decision model the gold label.
/// Equal similarities break toward the lexicographically smaller tree
/// id. A level with no pool entries is an error: the decision prompt
/// expects the full graded scale.
pub fn retrieve_demonstrations<'p>(
    pool: &'p DemonstrationPool,
    labels: &RiskLabelSet,
    query_tree_id: &str,
    query: &EmbeddingVector,
    per_level: usize,
) -> Result<Vec<&'p PoolEntry>, DeciderError> {
    let mut out = Vec::with_capacity(pool.num_levels * per_level);
    for level in 0..pool.num_levels {
        let mut scored: Vec<(f64, &PoolEntry)> = Vec::new();
        for entry in pool
            .entries
            .iter()
            .filter(|e| e.level == level && e.tree_id != query_tree_id)
        {
            scored.push((crate::backend::cosine_similarity(query, &entry.embedding)?, entry));
        }
        if scored.is_empty() {
            return Err(DeciderError::EmptyDemonstrationLevel {
                level: labels.name(level).to_string(),
            });
        }
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("similarities are finite")
                .then_with(|| a.1.tree_id.cmp(&b.1.tree_id))
        });
        out.extend(scored.into_iter().take(per_level).map(|(_, e)| e));
    }
    Ok(out)
}

/// Deterministic text block listing one graded example per line group.
pub fn format_demonstrations(entries: &[&PoolEntry], labels: &RiskLabelSet) -> String {
    let mut out = String::new();
    for entry in entries {
        if !out.is_empty() {
            out.push_str("\n\n");
        }
        out.push_str(&format!(
            "Example rated {}:\n{}",
            labels.name(entry.level),
            entry.rendering
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Voting

fn parse_label_strict(raw: &str, labels: &RiskLabelSet) -> Option<usize> {
    labels.index_of(raw.trim())
}

/// Find label names occurring as standalone tokens (case-insensitive);
/// succeeds only when exactly one distinct label occurs.
fn parse_label_lenient(raw: &str, labels: &RiskLabelSet) -> Option<usize> {
    let mut found: Option<usize> = None;
    for (i, name) in labels.labels().iter().enumerate() {
        let pattern = format!(
            r"(?i)(?:^|[^[:alnum:]]){}(?:$|[^[:alnum:]])",
            regex::escape(name)
        );
        let re = regex::Regex::new(&pattern).expect("escaped pattern is valid");
        if re.is_match(raw) {
            match found {
                None => found = Some(i),
                Some(other) if other != i => return None,
                Some(_) => {}
            }
        }
    }
    found
}

fn parse_label(raw: &str, labels: &RiskLabelSet) -> Option<usize> {
    parse_label_strict(raw, labels).or_else(|| parse_label_lenient(raw, labels))
}

/// One decision call, with a single corrective reprompt if the reply does
/// not parse as a risk level.
#[allow(clippy::too_many_arguments)]
fn decide_once(
    backend: &dyn Backend,
    config: &PipelineConfig,
    labels: &RiskLabelSet,
    tree_id: &str,
    system: &str,
    user: String,
) -> Result<usize, DeciderError> {
    let req = ChatRequest::new(
        "decision",
        system,
        user.clone(),
        config.decision_temperature,
        config.max_tokens,
    )?;
    let raw = backend.chat(&req)?;
    if let Some(label) = parse_label(&raw, labels) {
        return Ok(label);
    }
    log::warn!("tree {tree_id}: unparseable decision reply {raw:?}; reprompting once");
    let reprompt_user = format!(
        "{user}\n\nYour previous reply was not a valid level name. Reply with exactly one of: {}. Reply with the level name and nothing else.",
        labels.labels().join(", ")
    );
    let retry_req = ChatRequest::new(
        "decision",
        system,
        reprompt_user,
        config.decision_temperature,
        config.max_tokens,
    )?;
    let retry_raw = backend.chat(&retry_req)?;
    parse_label(&retry_raw, labels).ok_or_else(|| DeciderError::ParseFailed {
        tree_id: tree_id.to_string(),
        raw: retry_raw,
    })
}

/// Cast `config.votes` ballots with the given template and values; each
/// ballot gets its own nonce so repeated prompting yields independent
/// samples (and distinct cache entries).
#[allow(clippy::too_many_arguments)]
fn vote(
    backend: &dyn Backend,
    prompts: &PromptSet,
    config: &PipelineConfig,
    labels: &RiskLabelSet,
    tree_id: &str,
    template_name: &str,
    base_values: &HashMap<&'static str, String>,
    nonce_seed: u64,
) -> Result<Vec<usize>, DeciderError> {
    let template = prompts.get(template_name);
    let mut ballots = Vec::with_capacity(config.votes);
    for t in 0..config.votes {
        let mut values = base_values.clone();
        values.insert("nonce", format!("{:016x}", derive_seed(nonce_seed, &format!("vote/{t}"))));
        let user = template.render_user(&values)?;
        ballots.push(decide_once(
            backend,
            config,
            labels,
            tree_id,
            template.system(),
            user,
        )?);
    }
    Ok(ballots)
}

// ---------------------------------------------------------------------------
// Prediction

/// Everything recorded about one representative's contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeTrace {
    pub cluster: usize,
    /// Exact cluster weight |C_i| / n as (numerator, denominator).
    pub weight: (u64, u64),
    /// Which generation supplied the representative inference.
    pub generation_index: usize,
    /// The full debate behind the representative; its shape is the audit
    /// record of which roles actually ran under the active ablation.
    pub transcript: DebateTranscript,
    /// Ballot outcomes; a single entry when the ablation replaces voting
    /// with one direct call.
    pub votes: Vec<usize>,
}

/// How a prediction was produced, sufficient to audit or recompute it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub generations_used: usize,
    /// (generation index, error) for generations dropped by the skip policy.
    pub generation_failures: Vec<(usize, String)>,
    /// Tree ids of the graded examples shown to the decision model.
    pub demonstrations: Vec<String>,
    pub representatives: Vec<RepresentativeTrace>,
    /// Ballots cast directly on the tree when the reasoner is ablated.
    pub direct_votes: Vec<usize>,
}

/// Final labeled outcome for one tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub tree_id: String,
    pub ablation: Ablation,
    pub label_index: usize,
    pub label: String,
    /// Float view of the mixture distribution over levels.
    pub distribution: Vec<f64>,
    /// Exact mixture distribution as reduced (numerator, denominator).
    pub exact_distribution: Vec<(u64, u64)>,
    pub gold_index: Option<usize>,
    pub provenance: Provenance,
}

impl Prediction {
    pub fn exact(&self) -> RiskDistribution {
        RiskDistribution::from_pairs(&self.exact_distribution)
    }
}

/// Run the configured pipeline variant end to end for one tree.
///
/// `pool` supplies graded demonstrations and is required by the `full`
/// and `analyst_only` ablations. All stage seeds derive from
/// `master_seed`, so a fixed seed fixes the whole prediction.
pub fn predict(
    backend: &dyn Backend,
    prompts: &PromptSet,
    config: &PipelineConfig,
    tree: &ConversationTree,
    pool: Option<&DemonstrationPool>,
    master_seed: u64,
) -> Result<Prediction, DeciderError> {
    let labels = config.label_set();
    let rendered = render_tree(tree, config.max_depth, config.max_nodes);
    let labels_text = labels.labels().join(", ");

    let (mixture, provenance) = match config.ablation {
        Ablation::NoReasoner => {
            let base: HashMap<&'static str, String> = HashMap::from([
                ("tree", rendered.clone()),
                ("labels", labels_text.clone()),
            ]);
            let ballots = vote(
                backend,
                prompts,
                config,
                &labels,
                &tree.id,
                "decision_direct",
                &base,
                derive_seed(master_seed, &format!("decision/{}/direct", tree.id)),
            )?;
            let dist = RiskDistribution::from_votes(&ballots, labels.len());
            (
                dist,
                Provenance {
                    direct_votes: ballots,
                    ..Provenance::default()
                },
            )
        }
        Ablation::Full | Ablation::AnalystOnly | Ablation::NoDecider => {
            let analyst_only = config.ablation == Ablation::AnalystOnly;
            let outcome = generate_inferences(
                backend,
                prompts,
                config,
                tree,
                master_seed,
                analyst_only,
            )?;
            let mut points: Vec<Vec<f64>> = outcome
                .inferences
                .iter()
                .map(|i| i.embedding.0.clone())
                .collect();
            if config.normalize_embeddings {
                crate::mediator::l2_normalize(&mut points);
            }
            // Effective K: never ask for more clusters than there are
            // distinct embeddings, so small or repetitive trees still
            // produce a well-defined mixture.
            let effective_k = config
                .clusters
                .min(crate::mediator::distinct_point_count(&points));
            let mediators = select_representatives(
                &points,
                effective_k,
                derive_seed(master_seed, &format!("kmeans/{}", tree.id)),
                config.kmeans_max_iters,
            )?;

            let mut traces = Vec::with_capacity(effective_k);
            let mut dists = Vec::with_capacity(effective_k);
            let mut demo_ids = Vec::new();

            if config.ablation == Ablation::NoDecider {
                // One direct call per representative; the cluster weights
                // alone combine the answers.
                let template = prompts.get("decision_inference_only");
                for (cluster, &rep) in mediators.representatives.iter().enumerate() {
                    let inference = &outcome.inferences[rep];
                    let mut values: HashMap<&'static str, String> = HashMap::from([
                        ("mediator", inference.text().to_string()),
                        ("labels", labels_text.clone()),
                    ]);
                    values.insert(
                        "nonce",
                        format!(
                            "{:016x}",
                            derive_seed(
                                master_seed,
                                &format!("decision/{}/cluster{cluster}/single", tree.id)
                            )
                        ),
                    );
                    let user = template.render_user(&values)?;
                    let label = decide_once(
                        backend,
                        config,
                        &labels,
                        &tree.id,
                        template.system(),
                        user,
                    )?;
                    dists.push(RiskDistribution::one_hot(label, labels.len()));
                    traces.push(RepresentativeTrace {
                        cluster,
                        weight: (
                            *mediators.weights[cluster].numer(),
                            *mediators.weights[cluster].denom(),
                        ),
                        generation_index: outcome.inferences[rep].generation_index,
                        transcript: inference.transcript.clone(),
                        votes: vec![label],
                    });
                }
            } else {
                let pool = pool.ok_or(DeciderError::PoolRequired(config.ablation))?;
                let query = backend.embed(&rendered)?;
                let demos = retrieve_demonstrations(
                    pool,
                    &labels,
                    &tree.id,
                    &query,
                    config.demonstrations_per_level,
                )?;
                demo_ids = demos.iter().map(|d| d.tree_id.clone()).collect();
                let demo_block = format_demonstrations(&demos, &labels);
                for (cluster, &rep) in mediators.representatives.iter().enumerate() {
                    let inference = &outcome.inferences[rep];
                    let base: HashMap<&'static str, String> = HashMap::from([
                        ("tree", rendered.clone()),
                        ("mediator", inference.text().to_string()),
                        ("demonstrations", demo_block.clone()),
                        ("labels", labels_text.clone()),
                    ]);
                    let ballots = vote(
                        backend,
                        prompts,
                        config,
                        &labels,
                        &tree.id,
                        "decision",
                        &base,
                        derive_seed(
                            master_seed,
                            &format!("decision/{}/cluster{cluster}", tree.id),
                        ),
                    )?;
                    dists.push(RiskDistribution::from_votes(&ballots, labels.len()));
                    traces.push(RepresentativeTrace {
                        cluster,
                        weight: (
                            *mediators.weights[cluster].numer(),
                            *mediators.weights[cluster].denom(),
                        ),
                        generation_index: outcome.inferences[rep].generation_index,
                        transcript: inference.transcript.clone(),
                        votes: ballots,
                    });
                }
            }

            let mixture = RiskDistribution::mix(&mediators.weights, &dists);
            (
                mixture,
                Provenance {
                    generations_used: outcome.inferences.len(),
                    generation_failures: outcome.failures,
                    demonstrations: demo_ids,
                    representatives: traces,
                    direct_votes: Vec::new(),
                },
            )
        }
    };

    let label_index = mixture.argmax_prefer_higher();
    Ok(Prediction {
        tree_id: tree.id.clone(),
        ablation: config.ablation,
        label_index,
        label: labels.name(label_index).to_string(),
        distribution: mixture.probs_f64(),
        exact_distribution: mixture.pairs(),
        gold_index: tree.gold_label,
        provenance: provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedStub;
    use crate::tree::ConversationTree;

    fn config() -> PipelineConfig {
        PipelineConfig {
            generations: 6,
            clusters: 3,
            votes: 3,
            embedding_dim: 32,
            max_inflight: 2,
            ..PipelineConfig::default()
        }
    }

    fn tree(id: &str, text: &str, label: Option<usize>) -> ConversationTree {
        ConversationTree::new(id.into(), text.into(), vec![], label).unwrap()
    }

    fn pool_dataset() -> Dataset {
        Dataset {
            name: "train".into(),
            label_set: RiskLabelSet::default_four(),
            trees: vec![
                tree("p0", "calm check-in about plans", Some(0)),
                tree("p1", "venting about a rough week", Some(1)),
                tree("p2", "hopeless wording and withdrawal", Some(2)),
                tree("p3", "explicit crisis language", Some(3)),
            ],
        }
    }

    #[test]
    fn votes_become_exact_frequencies() {
        let d = RiskDistribution::from_votes(&[0, 0, 1], 4);
        assert_eq!(
            d.exact(),
            &[
                Ratio::new(2, 3),
                Ratio::new(1, 3),
                Ratio::zero(),
                Ratio::zero()
            ]
        );
        assert_eq!(d.probs_f64()[0], 2.0 / 3.0);
    }

    #[test]
    fn mixture_is_exact() {
        let w = vec![Ratio::new(1, 3), Ratio::new(1, 3), Ratio::new(1, 3)];
        let dists = vec![
            RiskDistribution::one_hot(0, 3),
            RiskDistribution::one_hot(1, 3),
            RiskDistribution::one_hot(2, 3),
        ];
        let mix = RiskDistribution::mix(&w, &dists);
        assert_eq!(
            mix.exact(),
            &[Ratio::new(1, 3), Ratio::new(1, 3), Ratio::new(1, 3)]
        );
        // A mixed case: weights 1/2, 1/3, 1/6 over vote distributions.
        let w = vec![Ratio::new(1, 2), Ratio::new(1, 3), Ratio::new(1, 6)];
        let dists = vec![
            RiskDistribution::from_votes(&[0, 1, 1], 3),
            RiskDistribution::from_votes(&[2, 2, 2], 3),
            RiskDistribution::from_votes(&[0, 0, 2], 3),
        ];
        let mix = RiskDistribution::mix(&w, &dists);
        // By hand: p0 = 1/2·1/3 + 1/6·2/3 = 5/18; p1 = 1/2·2/3 = 6/18; p2 = 1/3 + 1/6·1/3 = 7/18.
        assert_eq!(
            mix.exact(),
            &[Ratio::new(5, 18), Ratio::new(1, 3), Ratio::new(7, 18)]
        );
        let total: Ratio<u64> = mix.exact().iter().sum();
        assert_eq!(total, Ratio::new(1, 1));
    }

    #[test]
    fn argmax_ties_break_toward_higher_risk() {
        let d = RiskDistribution::from_pairs(&[(1, 3), (1, 3), (1, 3), (0, 1)]);
        assert_eq!(d.argmax_prefer_higher(), 2);
        let d = RiskDistribution::from_pairs(&[(1, 2), (1, 2), (0, 1)]);
        assert_eq!(d.argmax_prefer_higher(), 1);
        let d = RiskDistribution::from_pairs(&[(3, 4), (1, 4), (0, 1)]);
        assert_eq!(d.argmax_prefer_higher(), 0);
    }

    #[test]
    fn retrieval_picks_nearest_per_level_with_lex_tiebreak() {
        let stub = ScriptedStub::new(32);
        let cfg = config();
        let pool = DemonstrationPool::build(&stub, &cfg, &pool_dataset()).unwrap();
        let labels = RiskLabelSet::default_four();
        // Query identical to p2's rendering: p2 must win its level.
        let query = stub.embed("[POST] hopeless wording and withdrawal").unwrap();
        let picks = retrieve_demonstrations(&pool, &labels, "q", &query, 1).unwrap();
        assert_eq!(picks.len(), 4);
        assert_eq!(picks[2].tree_id, "p2");
        let levels: Vec<usize> = picks.iter().map(|p| p.level).collect();
        assert_eq!(levels, vec![0, 1, 2, 3], "one per level, ascending");

        // Duplicate renderings embed identically; the tie goes to the
        // lexicographically smaller id.
        let mut ds = pool_dataset();
        ds.trees.push(tree("a0", "calm check-in about plans", Some(0)));
        let pool = DemonstrationPool::build(&stub, &cfg, &ds).unwrap();
        let query = stub.embed("[POST] calm check-in about plans").unwrap();
        let picks = retrieve_demonstrations(&pool, &labels, "q", &query, 1).unwrap();
        assert_eq!(picks[0].tree_id, "a0");
    }

    #[test]
    fn retrieval_never_returns_the_query_tree() {
        let stub = ScriptedStub::new(32);
        let cfg = config();
        let mut ds = pool_dataset();
        // A second L2 tree so the level stays populated when p2 is the query.
        ds.trees.push(tree("p9", "another worried update", Some(2)));
        let pool = DemonstrationPool::build(&stub, &cfg, &ds).unwrap();
        let labels = RiskLabelSet::default_four();
        // Query p2 by its own rendering: identical embedding, similarity 1,
        // yet p2 must not demonstrate its own label.
        let query = stub.embed("[POST] hopeless wording and withdrawal").unwrap();
        let picks = retrieve_demonstrations(&pool, &labels, "p2", &query, 1).unwrap();
        assert_eq!(picks[2].tree_id, "p9");

        // With p2 excluded and no other L2 example, the level is empty.
        let lone = DemonstrationPool::build(&stub, &cfg, &pool_dataset()).unwrap();
        let err = retrieve_demonstrations(&lone, &labels, "p2", &query, 1).unwrap_err();
        assert!(matches!(err, DeciderError::EmptyDemonstrationLevel { .. }));
    }

    #[test]
    fn retrieval_fails_on_missing_level() {
        let stub = ScriptedStub::new(32);
        let cfg = config();
        let mut ds = pool_dataset();
        ds.trees.remove(1); // no L1 examples left
        let pool = DemonstrationPool::build(&stub, &cfg, &ds).unwrap();
        let labels = RiskLabelSet::default_four();
        let query = stub.embed("anything").unwrap();
        let err = retrieve_demonstrations(&pool, &labels, "q", &query, 1).unwrap_err();
        match err {
            DeciderError::EmptyDemonstrationLevel { level } => assert_eq!(level, "L1"),
            other => panic!("expected empty level, got {other}"),
        }
    }

    #[test]
    fn pool_rejects_unlabeled_trees() {
        let stub = ScriptedStub::new(32);
        let mut ds = pool_dataset();
        ds.trees[0].gold_label = None;
        assert!(matches!(
            DemonstrationPool::build(&stub, &config(), &ds),
            Err(DeciderError::UnlabeledPoolTree(_))
        ));
    }

    #[test]
    fn lenient_parse_and_reprompt() {
        let labels = RiskLabelSet::default_four();
        assert_eq!(parse_label("L2", &labels), Some(2));
        assert_eq!(parse_label("  L2\n", &labels), Some(2));
        assert_eq!(parse_label("I would say L2 here.", &labels), Some(2));
        assert_eq!(parse_label("l2", &labels), Some(2), "lenient is case-insensitive");
        assert_eq!(parse_label("either L1 or L2", &labels), None);
        assert_eq!(parse_label("no level at all", &labels), None);
        assert_eq!(
            parse_label("XL2Y", &labels),
            None,
            "embedded substrings do not count"
        );

        // First reply garbage; the reprompt (and only it) yields a level.
        let stub = ScriptedStub::new(32);
        stub.add_rule("not a valid level name", "L3");
        stub.add_rule("Ballot:", "hard to say, really");
        let cfg = config();
        let label = decide_once(
            &stub,
            &cfg,
            &labels,
            "t",
            "sys",
            "judge this\nAnswer with exactly one of: L0, L1, L2, L3.\nBallot: x".into(),
        )
        .unwrap();
        assert_eq!(label, 3);
        assert_eq!(stub.chat_calls(), 2);

        // Garbage twice: a hard error, no endless loop.
        let stub = ScriptedStub::new(32);
        stub.add_rule("judge this", "shrug");
        let err = decide_once(&stub, &cfg, &labels, "t", "sys", "judge this".into()).unwrap_err();
        assert!(matches!(err, DeciderError::ParseFailed { .. }));
        assert_eq!(stub.chat_calls(), 2);
    }

    #[test]
    fn full_prediction_structure_and_determinism() {
        let stub = ScriptedStub::new(32);
        let cfg = config();
        let prompts = PromptSet::builtin();
        let pool = DemonstrationPool::build(&stub, &cfg, &pool_dataset()).unwrap();
        let t = tree("q1", "quiet post about feeling numb", Some(2));
        let prediction = predict(&stub, &prompts, &cfg, &t, Some(&pool), 17).unwrap();

        assert_eq!(prediction.tree_id, "q1");
        assert_eq!(prediction.ablation, Ablation::Full);
        assert_eq!(prediction.distribution.len(), 4);
        assert_eq!(prediction.gold_index, Some(2));
        let exact = prediction.exact();
        let total: Ratio<u64> = exact.exact().iter().sum();
        assert_eq!(total, Ratio::new(1, 1), "mixture is exactly normalized");
        assert_eq!(prediction.label_index, exact.argmax_prefer_higher());

        let p = &prediction.provenance;
        assert_eq!(p.generations_used, cfg.generations);
        assert_eq!(p.representatives.len(), cfg.clusters);
        for trace in &p.representatives {
            assert_eq!(trace.votes.len(), cfg.votes);
            assert!(trace.weight.0 >= 1);
        }
        assert_eq!(p.demonstrations.len(), 4, "one example per level");
        assert!(p.direct_votes.is_empty());
        // Weights in provenance must sum to exactly 1.
        let w: Ratio<u64> = p
            .representatives
            .iter()
            .map(|t| Ratio::new(t.weight.0, t.weight.1))
            .sum();
        assert_eq!(w, Ratio::new(1, 1));

        // Same seed, fresh stub: byte-identical prediction.
        let stub2 = ScriptedStub::new(32);
        let pool2 = DemonstrationPool::build(&stub2, &cfg, &pool_dataset()).unwrap();
        let again = predict(&stub2, &prompts, &cfg, &t, Some(&pool2), 17).unwrap();
        assert_eq!(
            serde_json::to_string(&again).unwrap(),
            serde_json::to_string(&prediction).unwrap()
        );
    }

    #[test]
    fn no_reasoner_prediction_votes_directly() {
        let stub = ScriptedStub::new(32);
        let mut cfg = config();
        cfg.ablation = Ablation::NoReasoner;
        let prompts = PromptSet::builtin();
        let t = tree("q2", "post text", None);
        let prediction = predict(&stub, &prompts, &cfg, &t, None, 5).unwrap();
        assert_eq!(prediction.provenance.direct_votes.len(), cfg.votes);
        assert!(prediction.provenance.representatives.is_empty());
        assert!(prediction.provenance.demonstrations.is_empty());
        assert_eq!(prediction.provenance.generations_used, 0);
        // Only T decision calls were made: no debates, no embeddings.
        assert_eq!(stub.chat_calls(), cfg.votes);
        assert_eq!(stub.embed_calls(), 0);
    }

    #[test]
    fn no_decider_prediction_uses_single_calls_per_representative() {
        let stub = ScriptedStub::new(32);
        let mut cfg = config();
        cfg.ablation = Ablation::NoDecider;
        let prompts = PromptSet::builtin();
        let t = tree("q3", "post text", None);
        let prediction = predict(&stub, &prompts, &cfg, &t, None, 5).unwrap();
        assert_eq!(prediction.provenance.representatives.len(), cfg.clusters);
        for trace in &prediction.provenance.representatives {
            assert_eq!(trace.votes.len(), 1, "single direct call per representative");
        }
        assert!(prediction.provenance.demonstrations.is_empty());
        // Chat calls: 6 debates x 4 rounds + 3 single decisions.
        assert_eq!(stub.chat_calls(), cfg.generations * 4 + cfg.clusters);
    }

    #[test]
    fn analyst_only_prediction_keeps_decision_stage() {
        let stub = ScriptedStub::new(32);
        let mut cfg = config();
        cfg.ablation = Ablation::AnalystOnly;
        let prompts = PromptSet::builtin();
        let pool = DemonstrationPool::build(&stub, &cfg, &pool_dataset()).unwrap();
        let t = tree("q4", "post text", None);
        let prediction = predict(&stub, &prompts, &cfg, &t, Some(&pool), 5).unwrap();
        assert_eq!(prediction.provenance.representatives.len(), cfg.clusters);
        for trace in &prediction.provenance.representatives {
            assert_eq!(trace.votes.len(), cfg.votes);
        }
        assert_eq!(prediction.provenance.demonstrations.len(), 4);
        // 1 analyst call per generation (no debate rounds), then the
        // voting stage: K clusters x T votes.
        assert_eq!(
            stub.chat_calls(),
            cfg.generations + cfg.clusters * cfg.votes
        );
    }

    #[test]
    fn effective_k_clamps_to_available_inferences() {
        let stub = ScriptedStub::new(32);
        let mut cfg = config();
        cfg.ablation = Ablation::NoDecider;
        cfg.generations = 2;
        cfg.clusters = 5; // more clusters than inferences
        let prompts = PromptSet::builtin();
        let t = tree("q6", "short post", None);
        let prediction = predict(&stub, &prompts, &cfg, &t, None, 5).unwrap();
        assert_eq!(prediction.provenance.representatives.len(), 2);
        let w: Ratio<u64> = prediction
            .provenance
            .representatives
            .iter()
            .map(|t| Ratio::new(t.weight.0, t.weight.1))
            .sum();
        assert_eq!(w, Ratio::new(1, 1));
    }

    #[test]
    fn normalized_embeddings_flow_through_prediction() {
        let stub = ScriptedStub::new(32);
        let mut cfg = config();
        cfg.ablation = Ablation::NoDecider;
        cfg.normalize_embeddings = true;
        let prompts = PromptSet::builtin();
        let t = tree("q8", "another post", None);
        let prediction = predict(&stub, &prompts, &cfg, &t, None, 5).unwrap();
        assert!(!prediction.provenance.representatives.is_empty());
        let w: Ratio<u64> = prediction
            .provenance
            .representatives
            .iter()
            .map(|t| Ratio::new(t.weight.0, t.weight.1))
            .sum();
        assert_eq!(w, Ratio::new(1, 1));
    }

    #[test]
    fn transcript_shape_tracks_ablation() {
        let prompts = PromptSet::builtin();
        let t = tree("q7", "post text", None);

        let stub = ScriptedStub::new(32);
        let cfg = config();
        let pool = DemonstrationPool::build(&stub, &cfg, &pool_dataset()).unwrap();
        let full = predict(&stub, &prompts, &cfg, &t, Some(&pool), 5).unwrap();
        for trace in &full.provenance.representatives {
            assert!(trace.transcript.critic.is_some());
            assert!(trace.transcript.empiricist.is_some());
            assert!(trace.transcript.synthesis.is_some());
        }

        let stub = ScriptedStub::new(32);
        let mut cfg = config();
        cfg.ablation = Ablation::AnalystOnly;
        let pool = DemonstrationPool::build(&stub, &cfg, &pool_dataset()).unwrap();
        let solo = predict(&stub, &prompts, &cfg, &t, Some(&pool), 5).unwrap();
        for trace in &solo.provenance.representatives {
            assert!(!trace.transcript.analyst.is_empty());
            assert!(trace.transcript.critic.is_none());
            assert!(trace.transcript.empiricist.is_none());
            assert!(trace.transcript.synthesis.is_none());
        }
    }

    #[test]
    fn full_ablation_requires_pool() {
        let stub = ScriptedStub::new(32);
        let cfg = config();
        let prompts = PromptSet::builtin();
        let t = tree("q5", "post text", None);
        assert!(matches!(
            predict(&stub, &prompts, &cfg, &t, None, 5),
            Err(DeciderError::PoolRequired(Ablation::Full))
        ));
    }
}
