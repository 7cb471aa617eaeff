//! Conversation-tree data model, dataset ingestion, and prompt rendering.
//!
//! Datasets are UTF-8 files with one JSON record per line:
//!
//! ```text
//! {"id":"t1","post":"...","comments":[{"id":"c1","parent_id":null,"text":"..."}],"label":"L2"}
//! ```
//!
//! `parent_id: null` marks a direct reply to the post. The optional
//! `author` field on a comment is an opaque anonymized string; no other
//! user-level data is modeled. Records stream line by line, so large
//! corpora never require whole-file parsing.

use std::collections::HashMap;
use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("label set needs at least 2 labels, got {0}")]
    TooFewLabels(usize),
    #[error("label set contains duplicate or empty label {0:?}")]
    BadLabel(String),
    #[error("{path} line {line}: malformed record: {detail}")]
    MalformedRecord {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("{path} line {line}: duplicate tree id {id:?}")]
    DuplicateTreeId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("{path} line {line}: unknown label {label:?} (field `label`)")]
    UnknownLabel {
        path: String,
        line: usize,
        label: String,
    },
    #[error("tree {tree_id:?}: post text is empty")]
    EmptyPost { tree_id: String },
    #[error("tree {tree_id:?}: duplicate comment id {comment_id:?}")]
    DuplicateCommentId { tree_id: String, comment_id: String },
    #[error("tree {tree_id:?}: comment {comment_id:?} references unknown parent {parent_id:?}")]
    UnknownParent {
        tree_id: String,
        comment_id: String,
        parent_id: String,
    },
    #[error("tree {tree_id:?}: comments {unreached:?} unreachable from the post (cycle in parent references)")]
    Cycle {
        tree_id: String,
        unreached: Vec<String>,
    },
    #[error("k-fold split requires k >= 2, got {0}")]
    BadFoldCount(usize),
    #[error("k-fold split requires at least k={k} labeled trees, found {labeled}")]
    TooFewTrees { k: usize, labeled: usize },
    #[error("k-fold split requires every tree to be labeled; tree {0:?} has no gold label")]
    UnlabeledTree(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Ordered set of risk-level names, index 0 = lowest risk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskLabelSet {
    labels: Vec<String>,
}

impl RiskLabelSet {
    pub fn new(labels: Vec<String>) -> Result<Self, TreeError> {
        if labels.len() < 2 {
            return Err(TreeError::TooFewLabels(labels.len()));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if l.is_empty() || !seen.insert(l.clone()) {
                return Err(TreeError::BadLabel(l.clone()));
            }
        }
        Ok(Self { labels })
    }

    /// Default four-level ordered set `L0..L3`.
    pub fn default_four() -> Self {
        Self::new(vec!["L0".into(), "L1".into(), "L2".into(), "L3".into()])
            .expect("default labels are valid")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// One comment in a conversation tree. `depth` is 1 for direct replies to
/// the post and increases by exactly 1 per nesting level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentNode {
    pub id: String,
    pub author_ref: String,
    pub text: String,
    pub depth: usize,
    pub children: Vec<CommentNode>,
}

/// A post with its nested comments and an optional gold risk label
/// (an index into the dataset's [`RiskLabelSet`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationTree {
    pub id: String,
    pub post_text: String,
    pub root_comments: Vec<CommentNode>,
    pub gold_label: Option<usize>,
    node_count: usize,
}

impl ConversationTree {
    pub fn new(
        id: String,
        post_text: String,
        root_comments: Vec<CommentNode>,
        gold_label: Option<usize>,
    ) -> Result<Self, TreeError> {
        if post_text.is_empty() {
            return Err(TreeError::EmptyPost { tree_id: id });
        }
        let node_count = 1 + count_comments(&root_comments);
        Ok(Self {
            id,
            post_text,
            root_comments,
            gold_label,
            node_count,
        })
    }

    /// Post plus all comment nodes.
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Depth-first iterator over all comments.
    pub fn comments_depth_first(&self) -> Vec<&CommentNode> {
        let mut out = Vec::with_capacity(self.node_count - 1);
        fn walk<'a>(nodes: &'a [CommentNode], out: &mut Vec<&'a CommentNode>) {
            for n in nodes {
                out.push(n);
                walk(&n.children, out);
            }
        }
        walk(&self.root_comments, &mut out);
        out
    }
}

fn count_comments(nodes: &[CommentNode]) -> usize {
    nodes.iter().map(|n| 1 + count_comments(&n.children)).sum()
}

/// A named collection of trees sharing one label set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub label_set: RiskLabelSet,
    pub trees: Vec<ConversationTree>,
}

impl Dataset {
    pub fn tree_by_id(&self, id: &str) -> Option<&ConversationTree> {
        self.trees.iter().find(|t| t.id == id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CommentRecord {
    id: String,
    parent_id: Option<String>,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    author: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeRecord {
    id: String,
    post: String,
    comments: Vec<CommentRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

/// Parse a line-delimited dataset file, validating every tree invariant.
/// Line order is preserved; the dataset name is the file stem.
pub fn parse_dataset(path: &Path, label_set: &RiskLabelSet) -> Result<Dataset, TreeError> {
    let content = fs::read_to_string(path).map_err(|source| TreeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    parse_dataset_str(&content, &path.display().to_string(), name, label_set)
}

/// Parse dataset content that has already been read into memory.
pub fn parse_dataset_str(
    content: &str,
    path_label: &str,
    name: String,
    label_set: &RiskLabelSet,
) -> Result<Dataset, TreeError> {
    let mut trees = Vec::new();
    let mut seen_ids = HashSet::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: TreeRecord =
            serde_json::from_str(line).map_err(|e| TreeError::MalformedRecord {
                path: path_label.to_string(),
                line: line_no,
                detail: e.to_string(),
            })?;
        if !seen_ids.insert(record.id.clone()) {
            return Err(TreeError::DuplicateTreeId {
                path: path_label.to_string(),
                line: line_no,
                id: record.id,
            });
        }
        let gold_label = match &record.label {
            Some(label) => Some(label_set.index_of(label).ok_or_else(|| {
                TreeError::UnknownLabel {
                    path: path_label.to_string(),
                    line: line_no,
                    label: label.clone(),
                }
            })?),
            None => None,
        };
        let tree = build_tree(record, gold_label)?;
        trees.push(tree);
    }
    Ok(Dataset {
        name,
        label_set: label_set.clone(),
        trees,
    })
}

fn build_tree(record: TreeRecord, gold_label: Option<usize>) -> Result<ConversationTree, TreeError> {
    let tree_id = record.id.clone();
    let mut ids = HashSet::new();
    for c in &record.comments {
        if !ids.insert(c.id.clone()) {
            return Err(TreeError::DuplicateCommentId {
                tree_id,
                comment_id: c.id.clone(),
            });
        }
    }
    for c in &record.comments {
        if let Some(p) = &c.parent_id {
            if !ids.contains(p) && *p != c.id {
                return Err(TreeError::UnknownParent {
                    tree_id,
                    comment_id: c.id.clone(),
                    parent_id: p.clone(),
                });
            }
        }
    }
    // Children keep record order under each parent.
    let mut children_of: HashMap<Option<String>, Vec<&CommentRecord>> = HashMap::new();
    for c in &record.comments {
        children_of.entry(c.parent_id.clone()).or_default().push(c);
    }
    let mut reached = 0usize;
    fn attach(
        parent_key: Option<String>,
        depth: usize,
        children_of: &HashMap<Option<String>, Vec<&CommentRecord>>,
        reached: &mut usize,
    ) -> Vec<CommentNode> {
        let mut out = Vec::new();
        if let Some(records) = children_of.get(&parent_key) {
            for r in records {
                *reached += 1;
                out.push(CommentNode {
                    id: r.id.clone(),
                    author_ref: r.author.clone().unwrap_or_default(),
                    text: r.text.clone(),
                    depth,
                    children: attach(Some(r.id.clone()), depth + 1, children_of, reached),
                });
            }
        }
        out
    }
    let roots = attach(None, 1, &children_of, &mut reached);
    if reached != record.comments.len() {
        let reached_ids: HashSet<String> = {
            let mut set = HashSet::new();
            fn collect(nodes: &[CommentNode], set: &mut HashSet<String>) {
                for n in nodes {
                    set.insert(n.id.clone());
                    collect(&n.children, set);
                }
            }
            collect(&roots, &mut set);
            set
        };
        let mut unreached: Vec<String> = record
            .comments
            .iter()
            .filter(|c| !reached_ids.contains(&c.id))
            .map(|c| c.id.clone())
            .collect();
        unreached.sort();
        return Err(TreeError::Cycle { tree_id, unreached });
    }
    ConversationTree::new(record.id, record.post, roots, gold_label)
}

/// Serialize a dataset back to the line-delimited record format.
/// `parse(serialize(parse(f))) == parse(f)` for any valid file `f`.
pub fn serialize_dataset(dataset: &Dataset) -> String {
    let mut out = String::new();
    for tree in &dataset.trees {
        let mut comments = Vec::new();
        fn flatten(nodes: &[CommentNode], parent: Option<&str>, out: &mut Vec<CommentRecord>) {
            for n in nodes {
                out.push(CommentRecord {
                    id: n.id.clone(),
                    parent_id: parent.map(|p| p.to_string()),
                    text: n.text.clone(),
                    author: if n.author_ref.is_empty() {
                        None
                    } else {
                        Some(n.author_ref.clone())
                    },
                });
                flatten(&n.children, Some(&n.id), out);
            }
        }
        flatten(&tree.root_comments, None, &mut comments);
        let record = TreeRecord {
            id: tree.id.clone(),
            post: tree.post_text.clone(),
            comments,
            label: tree.gold_label.map(|i| dataset.label_set.name(i).to_string()),
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Marker line appended whenever `max_depth` or `max_nodes` excludes nodes.
pub const TRUNCATION_MARKER: &str = "[truncated]";

fn sanitize(text: &str) -> String {
    text.replace(['\n', '\r'], " ")
}

/// Deterministic textual rendering of a tree for prompts.
///
/// The post is the first line; each comment renders as one line indented
/// two spaces per depth level. Node admission is breadth-first up to
/// `max_nodes` (post included), so early siblings survive truncation, and
/// nodes beyond `max_depth` are never admitted. Author references are
/// never rendered. Output line count is monotonically non-decreasing in
/// `max_nodes`.
pub fn render_tree(tree: &ConversationTree, max_depth: usize, max_nodes: usize) -> String {
    assert!(max_depth >= 1, "max_depth must be >= 1");
    assert!(max_nodes >= 1, "max_nodes must be >= 1");
    // Breadth-first admission: the post consumes the first slot.
    let mut admitted: HashSet<&str> = HashSet::new();
    let mut budget = max_nodes - 1;
    let mut truncated = false;
    let mut queue: std::collections::VecDeque<&CommentNode> = tree.root_comments.iter().collect();
    while let Some(node) = queue.pop_front() {
        if node.depth > max_depth {
            truncated = true;
            continue;
        }
        if budget == 0 {
            truncated = true;
            continue;
        }
        budget -= 1;
        admitted.insert(node.id.as_str());
        for child in &node.children {
            queue.push_back(child);
        }
    }

    let mut out = String::new();
    out.push_str("[POST] ");
    out.push_str(&sanitize(&tree.post_text));
    fn walk(nodes: &[CommentNode], admitted: &HashSet<&str>, out: &mut String) {
        for n in nodes {
            if !admitted.contains(n.id.as_str()) {
                continue;
            }
            out.push('\n');
            for _ in 0..n.depth {
                out.push_str("  ");
            }
            out.push_str("- ");
            out.push_str(&sanitize(&n.text));
            walk(&n.children, admitted, out);
        }
    }
    walk(&tree.root_comments, &admitted, &mut out);
    if truncated {
        out.push('\n');
        out.push_str(TRUNCATION_MARKER);
    }
    out
}

/// Stratified k-fold split, deterministic given `seed`.
///
/// Returns `(train, test)` pairs. Test folds are disjoint, cover the
/// dataset, and differ in size by at most one; within each gold label the
/// members are spread across consecutive folds, so folds are stratified
/// whenever per-label counts permit.
pub fn kfold_split(
    dataset: &Dataset,
    k: usize,
    seed: u64,
) -> Result<Vec<(Dataset, Dataset)>, TreeError> {
    if k < 2 {
        return Err(TreeError::BadFoldCount(k));
    }
    for tree in &dataset.trees {
        if tree.gold_label.is_none() {
            return Err(TreeError::UnlabeledTree(tree.id.clone()));
        }
    }
    if dataset.trees.len() < k {
        return Err(TreeError::TooFewTrees {
            k,
            labeled: dataset.trees.len(),
        });
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); dataset.label_set.len()];
    for (i, tree) in dataset.trees.iter().enumerate() {
        groups[tree.gold_label.expect("checked above")].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; dataset.trees.len()];
    // One cursor shared across label groups keeps global fold sizes within 1.
    let mut cursor = 0usize;
    for group in &mut groups {
        group.shuffle(&mut rng);
        for &idx in group.iter() {
            fold_of[idx] = cursor % k;
            cursor += 1;
        }
    }
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let test: Vec<ConversationTree> = dataset
            .trees
            .iter()
            .enumerate()
            .filter(|(i, _)| fold_of[*i] == fold)
            .map(|(_, t)| t.clone())
            .collect();
        let train: Vec<ConversationTree> = dataset
            .trees
            .iter()
            .enumerate()
            .filter(|(i, _)| fold_of[*i] != fold)
            .map(|(_, t)| t.clone())
            .collect();
        folds.push((
            Dataset {
                name: format!("{}-train{}", dataset.name, fold),
                label_set: dataset.label_set.clone(),
                trees: train,
            },
            Dataset {
                name: format!("{}-test{}", dataset.name, fold),
                label_set: dataset.label_set.clone(),
                trees: test,
            },
        ));
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> RiskLabelSet {
        RiskLabelSet::default_four()
    }

    fn parse(content: &str) -> Result<Dataset, TreeError> {
        parse_dataset_str(content, "test.jsonl", "test".into(), &labels())
    }

    #[test]
    fn flat_record_counts_nodes() {
        let ds = parse(
            r#"{"id":"t1","post":"a post","comments":[{"id":"c1","parent_id":null,"text":"one"},{"id":"c2","parent_id":null,"text":"two"}]}"#,
        )
        .unwrap();
        assert_eq!(ds.trees.len(), 1);
        assert_eq!(ds.trees[0].node_count(), 3);
        assert_eq!(ds.trees[0].gold_label, None);
    }

    #[test]
    fn nested_depths_increase_by_one() {
        let ds = parse(
            r#"{"id":"t1","post":"p","comments":[{"id":"c1","parent_id":null,"text":"a"},{"id":"c2","parent_id":"c1","text":"b"},{"id":"c3","parent_id":"c2","text":"c"}],"label":"L1"}"#,
        )
        .unwrap();
        let tree = &ds.trees[0];
        assert_eq!(tree.gold_label, Some(1));
        let flat = tree.comments_depth_first();
        assert_eq!(flat.iter().map(|c| c.depth).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn self_parent_is_a_cycle_error() {
        let err = parse(
            r#"{"id":"t1","post":"p","comments":[{"id":"c1","parent_id":"c1","text":"loop"}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, TreeError::Cycle { .. }), "got {err}");
    }

    #[test]
    fn mutual_parents_are_a_cycle_error() {
        let err = parse(
            r#"{"id":"t1","post":"p","comments":[{"id":"c1","parent_id":"c2","text":"a"},{"id":"c2","parent_id":"c1","text":"b"}]}"#,
        )
        .unwrap_err();
        match err {
            TreeError::Cycle { unreached, .. } => {
                assert_eq!(unreached, vec!["c1".to_string(), "c2".to_string()])
            }
            other => panic!("expected cycle error, got {other}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let content = "{\"id\":\"t1\",\"post\":\"p\",\"comments\":[]}\nnot json\n";
        let err = parse(content).unwrap_err();
        match err {
            TreeError::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("expected malformed record, got {other}"),
        }
    }

    #[test]
    fn duplicate_tree_id_rejected() {
        let content = "{\"id\":\"t1\",\"post\":\"p\",\"comments\":[]}\n{\"id\":\"t1\",\"post\":\"q\",\"comments\":[]}\n";
        assert!(matches!(
            parse(content).unwrap_err(),
            TreeError::DuplicateTreeId { line: 2, .. }
        ));
    }

    #[test]
    fn duplicate_comment_id_rejected() {
        let err = parse(
            r#"{"id":"t1","post":"p","comments":[{"id":"c1","parent_id":null,"text":"a"},{"id":"c1","parent_id":null,"text":"b"}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, TreeError::DuplicateCommentId { .. }));
    }

    #[test]
    fn unknown_parent_rejected() {
        let err = parse(
            r#"{"id":"t1","post":"p","comments":[{"id":"c1","parent_id":"ghost","text":"a"}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, TreeError::UnknownParent { .. }));
    }

    #[test]
    fn unknown_label_rejected() {
        let err =
            parse(r#"{"id":"t1","post":"p","comments":[],"label":"L9"}"#).unwrap_err();
        match err {
            TreeError::UnknownLabel { label, line, .. } => {
                assert_eq!(label, "L9");
                assert_eq!(line, 1);
            }
            other => panic!("expected unknown label, got {other}"),
        }
    }

    #[test]
    fn empty_post_rejected() {
        let err = parse(r#"{"id":"t1","post":"","comments":[]}"#).unwrap_err();
        assert!(matches!(err, TreeError::EmptyPost { .. }));
    }

    #[test]
    fn render_post_only_is_marked_post_text() {
        let tree = ConversationTree::new("t".into(), "hello there".into(), vec![], None).unwrap();
        assert_eq!(render_tree(&tree, 6, 60), "[POST] hello there");
    }

    #[test]
    fn render_depth_limit_hides_deep_nodes_and_marks_truncation() {
        let ds = parse(
            r#"{"id":"t1","post":"p","comments":[{"id":"c1","parent_id":null,"text":"d1"},{"id":"c2","parent_id":"c1","text":"d2"},{"id":"c3","parent_id":"c2","text":"d3"},{"id":"c4","parent_id":"c3","text":"d4"},{"id":"c5","parent_id":"c4","text":"d5"}]}"#,
        )
        .unwrap();
        let rendered = render_tree(&ds.trees[0], 2, 60);
        assert!(rendered.contains("d1"));
        assert!(rendered.contains("d2"));
        assert!(!rendered.contains("d3"));
        assert!(!rendered.contains("d4"));
        assert!(rendered.ends_with(TRUNCATION_MARKER));
    }

    #[test]
    fn render_admits_breadth_first_so_early_siblings_survive() {
        let ds = parse(
            r#"{"id":"t1","post":"p","comments":[{"id":"c1","parent_id":null,"text":"root one"},{"id":"c1a","parent_id":"c1","text":"child of one"},{"id":"c2","parent_id":null,"text":"root two"},{"id":"c3","parent_id":null,"text":"root three"}]}"#,
        )
        .unwrap();
        // Budget of 4 nodes = post + the three root comments; the nested child loses.
        let rendered = render_tree(&ds.trees[0], 6, 4);
        assert!(rendered.contains("root one"));
        assert!(rendered.contains("root two"));
        assert!(rendered.contains("root three"));
        assert!(!rendered.contains("child of one"));
        assert!(rendered.ends_with(TRUNCATION_MARKER));
    }

    #[test]
    fn render_is_deterministic() {
        let ds = parse(
            r#"{"id":"t1","post":"p","comments":[{"id":"c1","parent_id":null,"text":"a"},{"id":"c2","parent_id":"c1","text":"b"}]}"#,
        )
        .unwrap();
        let a = render_tree(&ds.trees[0], 6, 60);
        let b = render_tree(&ds.trees[0], 6, 60);
        assert_eq!(a, b);
    }

    fn labeled_fixture(per_label: usize) -> Dataset {
        let mut trees = Vec::new();
        for level in 0..4 {
            for j in 0..per_label {
                trees.push(
                    ConversationTree::new(
                        format!("t{level}{j}"),
                        format!("post {level} {j}"),
                        vec![],
                        Some(level),
                    )
                    .unwrap(),
                );
            }
        }
        Dataset {
            name: "fixture".into(),
            label_set: RiskLabelSet::default_four(),
            trees,
        }
    }

    #[test]
    fn kfold_sizes_are_balanced() {
        // 20 trees into 5 folds: every test fold holds exactly 4.
        let ds = labeled_fixture(5);
        let folds = kfold_split(&ds, 5, 3).unwrap();
        assert_eq!(folds.len(), 5);
        for (train, test) in &folds {
            assert_eq!(test.trees.len(), 4);
            assert_eq!(train.trees.len(), 16);
        }
        // 8 trees into 5 folds: sizes may only differ by one.
        let ds = labeled_fixture(2);
        let folds = kfold_split(&ds, 5, 3).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|(_, test)| test.trees.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 8);
        assert!(sizes.iter().all(|&s| s == 1 || s == 2), "sizes {sizes:?}");
    }

    #[test]
    fn kfold_same_seed_identical_folds() {
        let ds = labeled_fixture(3);
        let a = kfold_split(&ds, 4, 99).unwrap();
        let b = kfold_split(&ds, 4, 99).unwrap();
        for ((_, ta), (_, tb)) in a.iter().zip(b.iter()) {
            let ids_a: Vec<&str> = ta.trees.iter().map(|t| t.id.as_str()).collect();
            let ids_b: Vec<&str> = tb.trees.iter().map(|t| t.id.as_str()).collect();
            assert_eq!(ids_a, ids_b);
        }
    }

    #[test]
    fn kfold_stratifies_five_per_label_into_five_folds() {
        let ds = labeled_fixture(5);
        let folds = kfold_split(&ds, 5, 7).unwrap();
        for (_, test) in &folds {
            assert_eq!(test.trees.len(), 4);
            let mut per_label = [0usize; 4];
            for t in &test.trees {
                per_label[t.gold_label.unwrap()] += 1;
            }
            assert_eq!(per_label, [1, 1, 1, 1], "each fold holds one tree per label");
        }
    }

    #[test]
    fn kfold_rejects_unlabeled() {
        let mut ds = labeled_fixture(2);
        ds.trees[0].gold_label = None;
        assert!(matches!(
            kfold_split(&ds, 2, 0).unwrap_err(),
            TreeError::UnlabeledTree(_)
        ));
    }

    #[test]
    fn kfold_rejects_k_below_two() {
        let ds = labeled_fixture(2);
        assert!(matches!(
            kfold_split(&ds, 1, 0).unwrap_err(),
            TreeError::BadFoldCount(1)
        ));
    }
}
