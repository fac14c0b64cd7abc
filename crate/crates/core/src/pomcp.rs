//! POMCP: UCB1 tree search over action-observation histories with particle
//! root sampling and depth-limited random rollouts.
//!
//! The tree tracks a cost value next to the reward value on every edge so the
//! cost-constrained planner in [`crate::ccpomcp`] can reuse the same search;
//! with a zero dual variable the cost statistics never influence a choice.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::ParticleBelief;
use crate::environment::Terminal;
use crate::model::{Action, AgentState, GenerativeModel, Observation};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SearchError {
    #[error("belief has no active particle to plan from")]
    NoActiveParticles,
    #[error("invalid search parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchParams<F> {
    pub n_sims: usize,
    /// Maximum depth of the search tree.
    pub tree_depth: usize,
    /// Total simulated horizon from the root; rollouts continue past the
    /// tree leaves up to this many steps.
    pub rollout_depth: usize,
    pub gamma: F,
    /// UCB1 exploration constant.
    pub kappa: F,
    /// Probability that the default rollout policy localizes at a step.
    pub rollout_localize_prob: F,
    /// Withhold Localize at histories whose dead-reckoned estimate lies on a
    /// surface hazard.
    pub guard_surfacing: bool,
}

impl<F: Scalar> SearchParams<F> {
    /// Cost-unaware planner defaults.
    pub fn pomcp() -> Self {
        Self {
            n_sims: 2000,
            tree_depth: 8,
            rollout_depth: 100,
            gamma: F::lit(0.999),
            kappa: F::lit(150.0),
            rollout_localize_prob: F::lit(0.1),
            guard_surfacing: true,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.n_sims == 0 {
            return Err(SearchError::InvalidParams("n_sims must be at least 1"));
        }
        if self.tree_depth == 0 {
            return Err(SearchError::InvalidParams("tree_depth must be at least 1"));
        }
        if self.rollout_depth < self.tree_depth {
            return Err(SearchError::InvalidParams("rollout_depth must be at least tree_depth"));
        }
        if !(self.gamma > F::zero() && self.gamma < F::one()) {
            return Err(SearchError::InvalidParams("gamma must lie in (0, 1)"));
        }
        if !(self.kappa >= F::zero()) {
            return Err(SearchError::InvalidParams("kappa must be non-negative"));
        }
        if !(F::zero()..=F::one()).contains(&self.rollout_localize_prob) {
            return Err(SearchError::InvalidParams("rollout_localize_prob must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Discounted reward and cost of one simulated trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Return<F> {
    pub reward: F,
    pub cost: F,
}

pub type NodeId = usize;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActionEdge<F> {
    pub visits: u32,
    pub q_reward: F,
    pub q_cost: F,
    children: Vec<(Observation, NodeId)>,
}

impl<F: Scalar> ActionEdge<F> {
    /// Seeds statistics directly; used to set up deterministic decisions.
    pub fn with_stats(visits: u32, q_reward: F, q_cost: F) -> Self {
        Self {
            visits,
            q_reward,
            q_cost,
            children: Vec::new(),
        }
    }

    pub fn children(&self) -> &[(Observation, NodeId)] {
        &self.children
    }

    fn child(&self, obs: Observation) -> Option<NodeId> {
        self.children.iter().find(|(o, _)| *o == obs).map(|&(_, id)| id)
    }

    fn record(&mut self, ret: Return<F>) {
        self.visits += 1;
        let n = F::lit(self.visits as f64);
        self.q_reward = self.q_reward + (ret.reward - self.q_reward) / n;
        self.q_cost = self.q_cost + (ret.cost - self.q_cost) / n;
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TreeNode<F> {
    pub visits: u32,
    /// Indexed by [`Action::index`].
    pub edges: [ActionEdge<F>; 2],
}

impl<F: Scalar> TreeNode<F> {
    pub fn edge(&self, a: Action) -> &ActionEdge<F> {
        &self.edges[a.index()]
    }

    /// Visited action maximizing `Q_r - lambda * Q_c`, ties to Move.
    pub fn greedy(&self, lambda: F) -> Option<Action> {
        let mut best: Option<(Action, F)> = None;
        for a in Action::ALL {
            let e = self.edge(a);
            if e.visits == 0 {
                continue;
            }
            let v = e.q_reward - lambda * e.q_cost;
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((a, v));
            }
        }
        best.map(|(a, _)| a)
    }
}

/// Arena of history nodes; node 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchTree<F> {
    nodes: Vec<TreeNode<F>>,
}

impl<F: Scalar> Default for SearchTree<F> {
    fn default() -> Self {
        Self::with_capacity(1)
    }
}

impl<F: Scalar> SearchTree<F> {
    pub const ROOT: NodeId = 0;

    pub fn with_capacity(n: usize) -> Self {
        let mut nodes = Vec::with_capacity(n.max(1));
        nodes.push(TreeNode::default());
        Self { nodes }
    }

    pub fn root(&self) -> &TreeNode<F> {
        &self.nodes[Self::ROOT]
    }

    pub fn root_mut(&mut self) -> &mut TreeNode<F> {
        &mut self.nodes[Self::ROOT]
    }

    pub fn node(&self, id: NodeId) -> &TreeNode<F> {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode<F>] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn add_child(&mut self, parent: NodeId, a: Action, obs: Observation) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::default());
        self.nodes[parent].edges[a.index()].children.push((obs, id));
        id
    }
}

/// One search over a fixed model. Holds the tree so callers can inspect or
/// pre-seed statistics.
pub struct Pomcp<'a, 'm, F> {
    model: &'a GenerativeModel<'m, F>,
    params: SearchParams<F>,
    tree: SearchTree<F>,
}

impl<'a, 'm, F: Scalar> Pomcp<'a, 'm, F> {
    pub fn new(model: &'a GenerativeModel<'m, F>, params: SearchParams<F>) -> Result<Self, SearchError> {
        params.validate()?;
        Ok(Self {
            model,
            params,
            tree: SearchTree::with_capacity(params.n_sims + 1),
        })
    }

    pub fn params(&self) -> &SearchParams<F> {
        &self.params
    }

    pub fn tree(&self) -> &SearchTree<F> {
        &self.tree
    }

    pub fn tree_mut(&mut self) -> &mut SearchTree<F> {
        &mut self.tree
    }

    /// Runs `params.n_sims` simulations from states sampled uniformly among the
    /// belief's active particles. `after_each` sees the tree after every
    /// simulation and returns the dual variable for the next one.
    pub fn search<R: Rng + ?Sized>(
        &mut self,
        belief: &ParticleBelief,
        mut lambda: F,
        rng: &mut R,
        mut after_each: impl FnMut(&SearchTree<F>, F) -> F,
    ) -> Result<F, SearchError> {
        let roots: Vec<AgentState> = belief.active().copied().collect();
        if roots.is_empty() {
            return Err(SearchError::NoActiveParticles);
        }
        for _ in 0..self.params.n_sims {
            let s = roots[rng.gen_range(0..roots.len())];
            self.simulate(&s, SearchTree::<F>::ROOT, self.params.tree_depth, lambda, rng);
            lambda = after_each(&self.tree, lambda);
        }
        Ok(lambda)
    }

    /// Root action with the highest reward value, ties to Move.
    pub fn best_action(&self) -> Action {
        self.tree.root().greedy(F::zero()).unwrap_or(Action::Move)
    }

    /// Whether Localize may be tried from `state`. The estimate is a function
    /// of the history, so every particle at a node agrees.
    pub fn localize_allowed(&self, state: &AgentState) -> bool {
        !self.params.guard_surfacing || self.model.map.classify_localize(state.estimate) != Terminal::FailedSurfaced
    }

    /// UCB1 choice at `node` on the scalarized value `Q_r - lambda * Q_c`.
    /// Unvisited actions come first, Move before Localize.
    pub fn select(&self, node: NodeId, lambda: F, localize_allowed: bool) -> Action {
        if !localize_allowed {
            return Action::Move;
        }
        let n = self.tree.node(node);
        if let Some(a) = Action::ALL.into_iter().find(|&a| n.edge(a).visits == 0) {
            return a;
        }
        let ln_n = F::lit(n.visits.max(1) as f64).ln();
        let mut best = (Action::Move, F::neg_infinity());
        for a in Action::ALL {
            let e = n.edge(a);
            let score = e.q_reward - lambda * e.q_cost
                + self.params.kappa * (ln_n / F::lit(e.visits as f64)).sqrt();
            if score > best.1 {
                best = (a, score);
            }
        }
        best.0
    }

    /// One tree descent from `node` with `depth` tree levels remaining.
    /// Terminal states are worth zero; their rewards are paid on the entering
    /// step.
    pub fn simulate<R: Rng + ?Sized>(
        &mut self,
        state: &AgentState,
        node: NodeId,
        depth: usize,
        lambda: F,
        rng: &mut R,
    ) -> Return<F> {
        if depth == 0 || !state.terminal.is_active() {
            return Return::default();
        }
        let a = self.select(node, lambda, self.localize_allowed(state));
        let out = self.model.step(state, a, rng).expect("active state");
        let next = out.next_state;
        let level = self.params.tree_depth - depth + 1;
        let horizon = self.params.rollout_depth.saturating_sub(level);
        let future = if !next.terminal.is_active() {
            Return::default()
        } else if depth == 1 {
            self.rollout(&next, horizon, rng)
        } else {
            match self.tree.node(node).edge(a).child(out.observation) {
                Some(child) => self.simulate(&next, child, depth - 1, lambda, rng),
                None => {
                    self.tree.add_child(node, a, out.observation);
                    self.rollout(&next, horizon, rng)
                }
            }
        };
        let gamma = self.params.gamma;
        let ret = Return {
            reward: out.reward + gamma * future.reward,
            cost: out.cost + gamma * future.cost,
        };
        let n = &mut self.tree.nodes[node];
        n.visits += 1;
        n.edges[a.index()].record(ret);
        ret
    }

    /// Default policy for `depth` steps: Localize with probability
    /// `rollout_localize_prob` where allowed, otherwise Move.
    pub fn rollout<R: Rng + ?Sized>(&self, state: &AgentState, depth: usize, rng: &mut R) -> Return<F> {
        let mut ret = Return::default();
        let mut discount = F::one();
        let mut s = *state;
        for _ in 0..depth {
            if !s.terminal.is_active() {
                break;
            }
            let a = if F::unit(rng) < self.params.rollout_localize_prob && self.localize_allowed(&s) {
                Action::Localize
            } else {
                Action::Move
            };
            let out = self.model.step(&s, a, rng).expect("active state");
            ret.reward = ret.reward + discount * out.reward;
            ret.cost = ret.cost + discount * out.cost;
            discount = discount * self.params.gamma;
            s = out.next_state;
        }
        ret
    }
}

/// Plans one high-level action with a fresh tree.
pub fn plan<F: Scalar, R: Rng + ?Sized>(
    belief: &ParticleBelief,
    model: &GenerativeModel<'_, F>,
    params: &SearchParams<F>,
    rng: &mut R,
) -> Result<Action, SearchError> {
    let mut search = Pomcp::new(model, *params)?;
    search.search(belief, F::zero(), rng, |_, l| l)?;
    Ok(search.best_action())
}
