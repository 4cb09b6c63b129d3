//! The Monte Carlo tree over a search space.
//!
//! A node at depth `l` (1-based) selects the op of layer `l` given its
//! ancestors; the root is a virtual depth-0 node. Nodes are created lazily by
//! [`MctTree::backpropagate`] and keep a visit count and a cumulative reward
//! `q_sum`, so `q_sum / visits` is the running mean used by UCT.
//!
//! Rewards are loss ratios against a moving-average baseline
//! ([`BaselineState`]); every backpropagated reward also feeds a per-(depth, op)
//! moving average ([`NodeCommTable`]) shared by all nodes that pick the same op
//! at the same depth, regardless of their ancestors.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{Architecture, SearchSpace};

pub const DEFAULT_BETA: f64 = 0.9;
pub const DEFAULT_GAMMA: f64 = 0.9;

const SNAPSHOT_FORMAT: &str = "mctnas-tree-v1";

/// UCT weights and softmax temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UctParams {
    /// Exploration weight.
    pub c1: f64,
    /// Node-communication weight.
    pub c2: f64,
    /// Softmax temperature.
    pub tau: f64,
}

impl Default for UctParams {
    fn default() -> Self {
        UctParams {
            c1: 0.1,
            c2: 0.2,
            tau: 0.0025,
        }
    }
}

impl UctParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 >= 0.0 && self.c1.is_finite()) {
            return Err(Error::InvalidValue { what: "c1", value: self.c1 });
        }
        if !(self.c2 >= 0.0 && self.c2.is_finite()) {
            return Err(Error::InvalidValue { what: "c2", value: self.c2 });
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidValue { what: "tau", value: self.tau });
        }
        Ok(())
    }
}

fn check_ratio(what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::InvalidValue { what, value })
    }
}

/// Moving average of training losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub value: f64,
    pub beta: f64,
    pub initialized: bool,
}

impl BaselineState {
    pub fn new(beta: f64) -> Result<Self> {
        check_ratio("beta", beta)?;
        Ok(BaselineState {
            value: 0.0,
            beta,
            initialized: false,
        })
    }

    /// Folds one training loss into the average. The first loss initializes it.
    pub fn update(&mut self, train_loss: f64) -> Result<f64> {
        check_loss(train_loss)?;
        if self.initialized {
            self.value = self.beta * self.value + (1.0 - self.beta) * train_loss;
        } else {
            self.value = train_loss;
            self.initialized = true;
        }
        Ok(self.value)
    }

    /// Baseline over loss: above 1 when the loss beats the running average.
    pub fn reward(&self, train_loss: f64) -> Result<f64> {
        check_loss(train_loss)?;
        if !self.initialized {
            return Err(Error::InvalidValue {
                what: "baseline (not yet initialized)",
                value: self.value,
            });
        }
        Ok(self.value / train_loss)
    }
}

fn check_loss(loss: f64) -> Result<()> {
    if loss > 0.0 && loss.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidValue {
            what: "training loss",
            value: loss,
        })
    }
}

/// Functional form of [`BaselineState::update`].
pub fn update_baseline(mut state: BaselineState, train_loss: f64) -> Result<BaselineState> {
    state.update(train_loss)?;
    Ok(state)
}

/// Functional form of [`BaselineState::reward`].
pub fn reward(state: &BaselineState, train_loss: f64) -> Result<f64> {
    state.reward(train_loss)
}

/// Node-communication scores `G[layer][op]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCommTable {
    pub gamma: f64,
    pub g: Vec<Vec<f64>>,
}

impl NodeCommTable {
    pub fn new(arities: impl IntoIterator<Item = usize>, gamma: f64) -> Result<Self> {
        check_ratio("gamma", gamma)?;
        Ok(NodeCommTable {
            gamma,
            g: arities.into_iter().map(|n| vec![0.0; n]).collect(),
        })
    }

    /// Score of choosing `op` at 0-based `layer`.
    pub fn get(&self, layer: usize, op: usize) -> f64 {
        self.g[layer][op]
    }

    pub fn update(&mut self, layer: usize, op: usize, reward: f64) {
        let g = &mut self.g[layer][op];
        *g = self.gamma * *g + (1.0 - self.gamma) * reward;
    }
}

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct MctNode {
    /// Op chosen by this node (0 for the root).
    pub op_index: u8,
    /// 0 for the root, `l` for a node choosing layer `l` (1-based).
    pub depth: usize,
    pub visits: u64,
    pub q_sum: f64,
    children: Vec<Option<NodeId>>,
}

impl MctNode {
    fn new(op_index: u8, depth: usize, arity: usize) -> Self {
        MctNode {
            op_index,
            depth,
            visits: 0,
            q_sum: 0.0,
            children: vec![None; arity],
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (self.visits > 0).then(|| self.q_sum / self.visits as f64)
    }

    pub fn child(&self, op: usize) -> Option<NodeId> {
        self.children.get(op).copied().flatten()
    }

    pub fn arity(&self) -> usize {
        self.children.len()
    }
}

/// UCT score during training: mean reward, exploration bonus and node communication.
pub fn uct_train(node: &MctNode, parent_visits: u64, g: f64, p: &UctParams) -> f64 {
    debug_assert!(node.visits >= 1 && parent_visits >= 1);
    let n = node.visits as f64;
    node.q_sum / n + p.c1 * ((parent_visits as f64).ln() / n).sqrt() + p.c2 * g
}

/// UCT score during search: no exploration term.
pub fn uct_search(node: &MctNode, g: f64, p: &UctParams) -> f64 {
    debug_assert!(node.visits >= 1);
    node.q_sum / node.visits as f64 + p.c2 * g
}

/// `exp(s_i / tau)` normalized, with max-subtraction.
pub fn softmax(scores: &[f64], tau: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Draws an index from `softmax(scores, tau)`.
pub fn sample_child<R: Rng + ?Sized>(scores: &[f64], tau: f64, rng: &mut R) -> usize {
    assert!(!scores.is_empty(), "no scores to sample from");
    let probs = softmax(scores, tau);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` slightly below 1; fall back to the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Train,
    Search,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MctTree {
    space: Arc<SearchSpace>,
    nodes: Vec<MctNode>,
    comm: NodeCommTable,
    baseline: BaselineState,
}

pub const ROOT: NodeId = 0;

impl MctTree {
    pub fn new(space: Arc<SearchSpace>, beta: f64, gamma: f64) -> Result<Self> {
        let comm = NodeCommTable::new((0..space.num_layers()).map(|l| space.arity(l)), gamma)?;
        let root = MctNode::new(0, 0, space.arity(0));
        Ok(MctTree {
            space,
            nodes: vec![root],
            comm,
            baseline: BaselineState::new(beta)?,
        })
    }

    pub fn with_defaults(space: Arc<SearchSpace>) -> Self {
        Self::new(space, DEFAULT_BETA, DEFAULT_GAMMA).expect("default ratios are valid")
    }

    pub fn space(&self) -> &Arc<SearchSpace> {
        &self.space
    }

    pub fn root(&self) -> &MctNode {
        &self.nodes[ROOT as usize]
    }

    pub fn node(&self, id: NodeId) -> &MctNode {
        &self.nodes[id as usize]
    }

    /// All nodes in creation order; the root comes first.
    pub fn nodes(&self) -> &[MctNode] {
        &self.nodes
    }

    pub fn comm(&self) -> &NodeCommTable {
        &self.comm
    }

    pub fn baseline(&self) -> &BaselineState {
        &self.baseline
    }

    pub fn baseline_mut(&mut self) -> &mut BaselineState {
        &mut self.baseline
    }

    /// Node reached by following `prefix` from the root, if it exists.
    pub fn find(&self, prefix: &[u8]) -> Option<NodeId> {
        prefix
            .iter()
            .try_fold(ROOT, |id, &op| self.node(id).child(op as usize))
    }

    /// Visit counts of `id`'s children (0 for children not created yet).
    pub fn child_visits(&self, id: NodeId) -> Vec<u64> {
        self.node(id)
            .children
            .iter()
            .map(|c| c.map_or(0, |c| self.node(c).visits))
            .collect()
    }

    /// Routes reward `r` through `arch`'s path, creating missing nodes, and
    /// folds it into the node-communication table.
    pub fn backpropagate(&mut self, arch: &Architecture, r: f64) -> Result<()> {
        self.space.check(arch)?;
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::InvalidValue { what: "reward", value: r });
        }
        let num_layers = self.space.num_layers();
        let mut id = ROOT;
        self.visit(id, r);
        for (layer, &op) in arch.choices().iter().enumerate() {
            id = match self.node(id).child(op as usize) {
                Some(child) => child,
                None => {
                    let arity = if layer + 1 < num_layers {
                        self.space.arity(layer + 1)
                    } else {
                        0
                    };
                    let child = self.nodes.len() as NodeId;
                    self.nodes.push(MctNode::new(op, layer + 1, arity));
                    self.nodes[id as usize].children[op as usize] = Some(child);
                    child
                }
            };
            self.visit(id, r);
            self.comm.update(layer, op as usize, r);
        }
        Ok(())
    }

    fn visit(&mut self, id: NodeId, r: f64) {
        let node = &mut self.nodes[id as usize];
        node.visits += 1;
        node.q_sum += r;
    }

    /// Scores of `parent`'s children under `mode`. Unvisited children score
    /// `max visited + c1 * sqrt(ln(parent_visits + 1))`; when no child has
    /// been visited all scores are 0.
    pub fn child_scores(&self, parent: NodeId, mode: SampleMode, p: &UctParams) -> Vec<f64> {
        let node = self.node(parent);
        let layer = node.depth;
        let mut scores: Vec<Option<f64>> = node
            .children
            .iter()
            .enumerate()
            .map(|(op, c)| {
                let child = self.node((*c)?);
                if child.visits == 0 {
                    return None;
                }
                let g = self.comm.get(layer, op);
                Some(match mode {
                    SampleMode::Train => uct_train(child, node.visits, g, p),
                    SampleMode::Search => uct_search(child, g, p),
                })
            })
            .collect();
        let best = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let fill = if best.is_finite() {
            best + p.c1 * ((node.visits as f64) + 1.0).ln().sqrt()
        } else {
            0.0
        };
        scores.iter_mut().map(|s| s.unwrap_or(fill)).collect()
    }

    /// Walks root to leaf, sampling each child from the softmax over its scores.
    pub fn sample_path<R: Rng + ?Sized>(
        &self,
        mode: SampleMode,
        p: &UctParams,
        rng: &mut R,
    ) -> Architecture {
        let num_layers = self.space.num_layers();
        let mut choices = Vec::with_capacity(num_layers);
        let mut at = Some(ROOT);
        for layer in 0..num_layers {
            let op = match at {
                Some(id) => sample_child(&self.child_scores(id, mode, p), p.tau, rng),
                // Below the explored frontier every child is unvisited.
                None => rng.random_range(0..self.space.arity(layer)),
            };
            choices.push(op as u8);
            at = at.and_then(|id| self.node(id).child(op));
        }
        Architecture::new(choices)
    }

    /// Serializes the tree as versioned JSON. Node records are written in
    /// creation order, so `restore` rebuilds an identical arena.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut paths: Vec<String> = Vec::with_capacity(self.nodes.len());
        let mut parent_of: HashMap<NodeId, NodeId> = HashMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            for c in node.children.iter().flatten() {
                parent_of.insert(*c, id as NodeId);
            }
        }
        for (id, node) in self.nodes.iter().enumerate() {
            let path = match parent_of.get(&(id as NodeId)) {
                Some(&p) => {
                    let mut s = paths[p as usize].clone();
                    s.push_str(&Architecture::new(vec![node.op_index]).to_string());
                    s
                }
                None => String::new(),
            };
            paths.push(path);
        }
        let doc = SnapshotDoc {
            format: SNAPSHOT_FORMAT.into(),
            fingerprint: self.space.fingerprint().into(),
            baseline: self.baseline,
            comm: self.comm.clone(),
            nodes: self
                .nodes
                .iter()
                .zip(paths)
                .map(|(n, path)| NodeRecord {
                    path,
                    visits: n.visits,
                    q_sum: n.q_sum,
                })
                .collect(),
        };
        serde_json::to_vec(&doc).expect("snapshot serializes")
    }

    /// Rebuilds a tree from [`Self::snapshot`] output. `space` must have the
    /// fingerprint recorded in the snapshot.
    pub fn restore(bytes: &[u8], space: Arc<SearchSpace>) -> Result<Self> {
        let malformed = |m: String| Error::MalformedSnapshot(m);
        let doc: SnapshotDoc =
            serde_json::from_slice(bytes).map_err(|e| malformed(e.to_string()))?;
        if doc.format != SNAPSHOT_FORMAT {
            return Err(malformed(format!("unsupported format {:?}", doc.format)));
        }
        if doc.fingerprint != space.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: space.fingerprint().into(),
                found: doc.fingerprint,
            });
        }
        let arities: Vec<usize> = (0..space.num_layers()).map(|l| space.arity(l)).collect();
        let shape_ok = doc.comm.g.len() == arities.len()
            && doc.comm.g.iter().zip(&arities).all(|(row, &n)| row.len() == n)
            && doc.comm.g.iter().flatten().all(|g| g.is_finite());
        if !shape_ok {
            return Err(malformed("node-communication table does not match the space".into()));
        }
        check_ratio("gamma", doc.comm.gamma)?;
        check_ratio("beta", doc.baseline.beta)?;

        let mut tree = MctTree::new(space.clone(), doc.baseline.beta, doc.comm.gamma)?;
        tree.baseline = doc.baseline;
        tree.comm = doc.comm;
        let mut records = doc.nodes.into_iter();
        let root = records
            .next()
            .filter(|r| r.path.is_empty())
            .ok_or_else(|| malformed("first node record must be the root".into()))?;
        tree.nodes[0].visits = root.visits;
        tree.nodes[0].q_sum = root.q_sum;
        for rec in records {
            let arch: Architecture = rec.path.parse().map_err(|_| malformed(format!("bad path {:?}", rec.path)))?;
            let choices = arch.choices();
            let Some((&op, prefix)) = choices.split_last() else {
                return Err(malformed("duplicate root record".into()));
            };
            let layer = prefix.len();
            if layer >= arities.len() || op as usize >= arities[layer] {
                return Err(malformed(format!("path {:?} is outside the space", rec.path)));
            }
            let parent = tree
                .find(prefix)
                .ok_or_else(|| malformed(format!("parent of {:?} missing", rec.path)))?;
            if tree.node(parent).child(op as usize).is_some() {
                return Err(malformed(format!("duplicate node {:?}", rec.path)));
            }
            if !(rec.q_sum >= 0.0 && rec.q_sum.is_finite()) {
                return Err(malformed(format!("bad q_sum at {:?}", rec.path)));
            }
            let arity = arities.get(layer + 1).copied().unwrap_or(0);
            let id = tree.nodes.len() as NodeId;
            let mut node = MctNode::new(op, layer + 1, arity);
            node.visits = rec.visits;
            node.q_sum = rec.q_sum;
            tree.nodes.push(node);
            tree.nodes[parent as usize].children[op as usize] = Some(id);
        }
        Ok(tree)
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotDoc {
    format: String,
    fingerprint: String,
    baseline: BaselineState,
    comm: NodeCommTable,
    nodes: Vec<NodeRecord>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    path: String,
    visits: u64,
    q_sum: f64,
}
