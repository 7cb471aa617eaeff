//! Risk-inference pipeline over conversation trees.
//!
//! The pipeline has four stages: a multi-role debate generates candidate
//! psychological inferences for a tree ([`reasoner`]), k-means clustering
//! compresses them into weighted representatives ([`mediator`]), a decision
//! stage votes per representative and combines the votes through a
//! front-door mixture ([`decider`]), and an evaluation harness scores
//! predictions with weighted metrics ([`eval`]). A discrete structural
//! causal model lab ([`causal`]) verifies the front-door estimator against
//! exact interventional enumeration on synthetic ground truth.

pub mod backend;
pub mod causal;
pub mod config;
pub mod decider;
pub mod eval;
pub mod mediator;
pub mod prompts;
pub mod reasoner;
pub mod seeds;
pub mod tree;

pub use backend::{Backend, BackendError, ChatRequest, EmbeddingVector};
pub use config::{Ablation, PipelineConfig};
pub use decider::{Prediction, RiskDistribution};
pub use mediator::MediatorSet;
pub use reasoner::Inference;
pub use tree::{ConversationTree, Dataset, RiskLabelSet};
