//! Multi-role debate generation of counterfactual psychological inferences.
//!
//! One generation = one debate over a rendered conversation tree:
//!
//! 1. the *analyst* drafts an initial reading;
//! 2. the *critic* and the *empiricist* respond to it independently (and
//!    concurrently — neither sees the other);
//! 3. the *synthesizer* merges all three into the final inference.
//!
//! A tree gets `n` independent debates, distinguished by a nonce derived
//! from the master seed, and each final inference is embedded for the
//! clustering stage. Failures abort the tree by default; the skip policy
//! drops the failed generation and records it instead.

use std::collections::HashMap;

use thiserror::Error;

use crate::backend::{Backend, BackendError, EmbeddingVector};
use crate::config::PipelineConfig;
use crate::prompts::{PromptError, PromptSet};
use crate::seeds::derive_seed;
use crate::tree::{render_tree, ConversationTree};

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("generation {index} for tree {tree_id:?} failed: {source}")]
    GenerationFailed {
        tree_id: String,
        index: usize,
        #[source]
        source: Box<ReasonerError>,
    },
    #[error(
        "tree {tree_id:?}: only {got} inferences survived, but the pipeline needs {need}"
    )]
    NotEnoughInferences {
        tree_id: String,
        got: usize,
        need: usize,
    },
}

/// Raw text of each debate round. `critic`, `empiricist`, and
/// `synthesis` are absent when the debate ran analyst-only.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DebateTranscript {
    pub analyst: String,
    pub critic: Option<String>,
    pub empiricist: Option<String>,
    pub synthesis: Option<String>,
}

impl DebateTranscript {
    /// The text downstream stages treat as "the inference": the synthesis
    /// when the full debate ran, otherwise the analyst draft.
    pub fn final_text(&self) -> &str {
        self.synthesis.as_deref().unwrap_or(&self.analyst)
    }
}

/// Self-graded directness of textual support for an inference, parsed
/// from the synthesis trailer. `Unspecified` when no grade was emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceLevel {
    Low,
    Medium,
    High,
    #[default]
    Unspecified,
}

impl std::fmt::Display for EvidenceLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EvidenceLevel::Low => "low",
            EvidenceLevel::Medium => "medium",
            EvidenceLevel::High => "high",
            EvidenceLevel::Unspecified => "unspecified",
        };
        f.write_str(s)
    }
}

/// One generated inference with its provenance and embedding.
#[derive(Debug, Clone)]
pub struct Inference {
    pub generation_index: usize,
    pub nonce: String,
    pub transcript: DebateTranscript,
    pub evidence_level: EvidenceLevel,
    pub embedding: EmbeddingVector,
}

impl Inference {
    pub fn text(&self) -> &str {
        self.transcript.final_text()
    }
}

/// Pull the grade out of a trailing "Evidence level: Low|Medium|High."
/// line (last one wins); anything else is `Unspecified`.
pub fn parse_evidence_level(synthesis: &str) -> EvidenceLevel {
    let re = regex::Regex::new(r"(?mi)^\s*evidence level:\s*(low|medium|high)\s*\.?\s*$")
        .expect("valid regex");
    re.captures_iter(synthesis)
        .last()
        .and_then(|c| c.get(1))
        .map(|m| match m.as_str().to_ascii_lowercase().as_str() {
            "low" => EvidenceLevel::Low,
            "medium" => EvidenceLevel::Medium,
            _ => EvidenceLevel::High,
        })
        .unwrap_or(EvidenceLevel::Unspecified)
}

fn chat(
    backend: &dyn Backend,
    config: &PipelineConfig,
    role: &str,
    system: &str,
    user: String,
    temperature: f64,
) -> Result<String, ReasonerError> {
    let req = crate::backend::ChatRequest::new(role, system, user, temperature, config.max_tokens)?;
    Ok(backend.chat(&req)?)
}

/// Run one debate over an already-rendered tree. `analyst_only` stops
/// after round 1.
pub fn run_debate(
    backend: &dyn Backend,
    prompts: &PromptSet,
    config: &PipelineConfig,
    rendered_tree: &str,
    nonce: &str,
    analyst_only: bool,
) -> Result<DebateTranscript, ReasonerError> {
    let base: HashMap<&str, String> = HashMap::from([
        ("tree", rendered_tree.to_string()),
        ("nonce", nonce.to_string()),
    ]);

    let analyst_template = prompts.get("analyst");
    let analyst = chat(
        backend,
        config,
        "analyst",
        analyst_template.system(),
        analyst_template.render_user(&base)?,
        config.gen_temperature,
    )?;
    if analyst_only {
        return Ok(DebateTranscript {
            analyst,
            critic: None,
            empiricist: None,
            synthesis: None,
        });
    }

    let mut round2 = base.clone();
    round2.insert("analyst", analyst.clone());
    // Round 2 runs the two independent critiques concurrently; neither
    // prompt contains the other's output, so ordering cannot matter.
    let (critic, empiricist) = std::thread::scope(|scope| {
        let critic_handle = scope.spawn(|| {
            let t = prompts.get("critic");
            chat(
                backend,
                config,
                "critic",
                t.system(),
                t.render_user(&round2)?,
                config.gen_temperature,
            )
        });
        let empiricist_handle = scope.spawn(|| {
            let t = prompts.get("empiricist");
            chat(
                backend,
                config,
                "empiricist",
                t.system(),
                t.render_user(&round2)?,
                config.gen_temperature,
            )
        });
        let critic = critic_handle.join().expect("critic thread must not panic");
        let empiricist = empiricist_handle
            .join()
            .expect("empiricist thread must not panic");
        (critic, empiricist)
    });
    let (critic, empiricist) = (critic?, empiricist?);

    let mut round3 = round2;
    round3.insert("critic", critic.clone());
    round3.insert("empiricist", empiricist.clone());
    let synthesizer = prompts.get("synthesizer");
    let synthesis = chat(
        backend,
        config,
        "synthesizer",
        synthesizer.system(),
        synthesizer.render_user(&round3)?,
        config.decision_temperature,
    )?;

    Ok(DebateTranscript {
        analyst,
        critic: Some(critic),
        empiricist: Some(empiricist),
        synthesis: Some(synthesis),
    })
}

/// All inferences for one tree, plus the generations that failed when the
/// skip policy is active.
#[derive(Debug)]
pub struct GenerationOutcome {
    pub inferences: Vec<Inference>,
    /// (generation index, error text) for dropped generations.
    pub failures: Vec<(usize, String)>,
}

/// Run `config.generations` debates for a tree and embed each final
/// inference. Debates run in batches of `config.max_inflight`.
///
/// With `skip_failed_generations` unset, the first failure aborts the
/// tree. With it set, failed generations are recorded and dropped, and an
/// error is returned only when none survive.
pub fn generate_inferences(
    backend: &dyn Backend,
    prompts: &PromptSet,
    config: &PipelineConfig,
    tree: &ConversationTree,
    master_seed: u64,
    analyst_only: bool,
) -> Result<GenerationOutcome, ReasonerError> {
    let rendered = render_tree(tree, config.max_depth, config.max_nodes);
    let nonces: Vec<String> = (0..config.generations)
        .map(|g| format!("{:016x}", derive_seed(master_seed, &format!("debate/{}/{g}", tree.id))))
        .collect();

    let mut results: Vec<Result<DebateTranscript, ReasonerError>> =
        Vec::with_capacity(config.generations);
    for batch in nonces.chunks(config.max_inflight) {
        let batch_results = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|nonce| {
                    scope.spawn(|| {
                        run_debate(backend, prompts, config, &rendered, nonce, analyst_only)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("debate thread must not panic"))
                .collect::<Vec<_>>()
        });
        results.extend(batch_results);
    }

    let mut inferences = Vec::with_capacity(config.generations);
    let mut failures = Vec::new();
    for (index, (result, nonce)) in results.into_iter().zip(nonces.into_iter()).enumerate() {
        let outcome = result.and_then(|transcript| {
            let embedding = backend.embed(transcript.final_text())?;
            let evidence_level = transcript
                .synthesis
                .as_deref()
                .map(parse_evidence_level)
                .unwrap_or(EvidenceLevel::Unspecified);
            Ok(Inference {
                generation_index: index,
                nonce,
                transcript,
                evidence_level,
                embedding,
            })
        });
        match outcome {
            Ok(inference) => inferences.push(inference),
            Err(source) if config.skip_failed_generations => {
                log::warn!("tree {}: dropping generation {index}: {source}", tree.id);
                failures.push((index, source.to_string()));
            }
            Err(source) => {
                return Err(ReasonerError::GenerationFailed {
                    tree_id: tree.id.clone(),
                    index,
                    source: Box::new(source),
                });
            }
        }
    }
    // Downstream clustering clamps K to the inferences available
    // (effective-K rule), so only a total wipeout is fatal here.
    if inferences.is_empty() {
        return Err(ReasonerError::NotEnoughInferences {
            tree_id: tree.id.clone(),
            got: 0,
            need: 1,
        });
    }
    Ok(GenerationOutcome {
        inferences,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedStub;
    use crate::tree::ConversationTree;

    fn config() -> PipelineConfig {
        PipelineConfig {
            generations: 4,
            clusters: 2,
            max_inflight: 2,
            embedding_dim: 16,
            ..PipelineConfig::default()
        }
    }

    fn tree() -> ConversationTree {
        ConversationTree::new(
            "t1".into(),
            "feeling stuck lately".into(),
            vec![],
            None,
        )
        .unwrap()
    }

    #[test]
    fn full_debate_fills_every_round() {
        let stub = ScriptedStub::new(16);
        let prompts = PromptSet::builtin();
        let transcript =
            run_debate(&stub, &prompts, &config(), "[POST] hi", "n0", false).unwrap();
        assert!(!transcript.analyst.is_empty());
        assert!(transcript.critic.is_some());
        assert!(transcript.empiricist.is_some());
        assert!(transcript.synthesis.is_some());
        assert_eq!(stub.chat_calls(), 4);
        // Round order and data flow: the critic and empiricist saw the
        // analyst text; the synthesizer saw everything.
        let captured = stub.captured_requests();
        let analyst_out = &transcript.analyst;
        let critic_req = captured.iter().find(|r| r.role == "critic").unwrap();
        assert!(critic_req.user.contains(analyst_out));
        let synth_req = captured.iter().find(|r| r.role == "synthesizer").unwrap();
        assert!(synth_req.user.contains(analyst_out));
        assert!(synth_req.user.contains(transcript.critic.as_ref().unwrap()));
        assert!(synth_req.user.contains(transcript.empiricist.as_ref().unwrap()));
        // The two round-2 roles are conditioned on the tree and analyst
        // only, never on each other.
        let empiricist_req = captured.iter().find(|r| r.role == "empiricist").unwrap();
        assert!(!critic_req.user.contains(empiricist_req.user.as_str()));
    }

    #[test]
    fn analyst_only_debate_stops_after_round_one() {
        let stub = ScriptedStub::new(16);
        let prompts = PromptSet::builtin();
        let transcript =
            run_debate(&stub, &prompts, &config(), "[POST] hi", "n0", true).unwrap();
        assert!(transcript.critic.is_none());
        assert!(transcript.synthesis.is_none());
        assert_eq!(stub.chat_calls(), 1);
        assert_eq!(transcript.final_text(), transcript.analyst);
    }

    #[test]
    fn generations_are_distinct_and_deterministic() {
        let stub = ScriptedStub::new(16);
        let prompts = PromptSet::builtin();
        let outcome =
            generate_inferences(&stub, &prompts, &config(), &tree(), 42, false).unwrap();
        assert_eq!(outcome.inferences.len(), 4);
        assert!(outcome.failures.is_empty());
        // Nonces differ, so generations are independent samples.
        let nonces: std::collections::HashSet<_> =
            outcome.inferences.iter().map(|i| i.nonce.clone()).collect();
        assert_eq!(nonces.len(), 4);

        let stub2 = ScriptedStub::new(16);
        let again = generate_inferences(&stub2, &prompts, &config(), &tree(), 42, false).unwrap();
        for (a, b) in outcome.inferences.iter().zip(again.inferences.iter()) {
            assert_eq!(a.transcript, b.transcript);
            assert_eq!(a.embedding, b.embedding);
        }

        let stub3 = ScriptedStub::new(16);
        let other_seed =
            generate_inferences(&stub3, &prompts, &config(), &tree(), 43, false).unwrap();
        assert_ne!(
            outcome.inferences[0].transcript,
            other_seed.inferences[0].transcript,
            "a different master seed must change the debates"
        );
    }

    #[test]
    fn fail_fast_aborts_on_first_generation_error() {
        let stub = ScriptedStub::new(16);
        stub.fail_next_chats(50, "backend down");
        let prompts = PromptSet::builtin();
        let err =
            generate_inferences(&stub, &prompts, &config(), &tree(), 1, false).unwrap_err();
        assert!(matches!(err, ReasonerError::GenerationFailed { .. }), "got {err}");
    }

    #[test]
    fn skip_policy_records_failures_and_keeps_going() {
        let stub = ScriptedStub::new(16);
        // Each debate is 4 calls; failing the first 4 kills generation 0
        // only (batches of 1 keep call order aligned with generations).
        stub.fail_next_chats(1, "backend down");
        let prompts = PromptSet::builtin();
        let mut cfg = config();
        cfg.max_inflight = 1;
        cfg.skip_failed_generations = true;
        let outcome = generate_inferences(&stub, &prompts, &cfg, &tree(), 1, false).unwrap();
        assert_eq!(outcome.inferences.len(), 3);
        assert_eq!(outcome.failures.len(), 1);
        assert_eq!(outcome.failures[0].0, 0);
    }

    #[test]
    fn too_many_failures_still_error_under_skip_policy() {
        let stub = ScriptedStub::new(16);
        stub.fail_next_chats(1000, "backend down");
        let prompts = PromptSet::builtin();
        let mut cfg = config();
        cfg.max_inflight = 1;
        cfg.skip_failed_generations = true;
        let err = generate_inferences(&stub, &prompts, &cfg, &tree(), 1, false).unwrap_err();
        assert!(
            matches!(err, ReasonerError::NotEnoughInferences { got: 0, need: 1, .. }),
            "got {err}"
        );
    }

    #[test]
    fn evidence_level_parses_from_trailer() {
        assert_eq!(
            parse_evidence_level("Cognitive: x.\nEvidence level: High."),
            EvidenceLevel::High
        );
        assert_eq!(
            parse_evidence_level("evidence level: medium\n"),
            EvidenceLevel::Medium,
            "case and trailing dot are optional"
        );
        assert_eq!(
            parse_evidence_level("no trailer here"),
            EvidenceLevel::Unspecified
        );
        assert_eq!(
            parse_evidence_level("Evidence level: 3."),
            EvidenceLevel::Unspecified,
            "numeric grades are not recognized"
        );
        assert_eq!(
            parse_evidence_level("Evidence level: Low.\nEvidence level: High."),
            EvidenceLevel::High,
            "last grade line wins"
        );
    }
}
