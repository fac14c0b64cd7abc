//! High-level strategies (when to localize) and the low-level planner that
//! turns `Move` into motion commands and repairs the path after a GPS fix.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::belief::{BeliefError, ParticleBelief};
use crate::ccpomcp::{plan_cc, CcSearchParams};
use crate::environment::{Coord, GridMap};
use crate::model::{intended_command, nearest_waypoint, Action, GenerativeModel, MotionCommand, MotionNoise, RewardConfig};
use crate::pomcp::{plan, SearchError, SearchParams};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlannerError {
    #[error("remaining path is empty")]
    PathExhausted,
    #[error("no obstacle-free path from {from} to {to}")]
    Unreachable { from: Coord, to: Coord },
    #[error("unknown strategy `{0}` (expected static-<k>, pomcp or ccpomcp)")]
    UnknownStrategy(String),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HlpStrategy<F> {
    /// `k` moves, then one localize, repeating.
    Static { k: usize },
    OnlinePomcp(SearchParams<F>),
    OnlineCcPomcp(CcSearchParams<F>),
}

/// Strategy name without parameters, as used in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StrategyKey {
    Static(usize),
    Pomcp,
    CcPomcp,
}

impl FromStr for StrategyKey {
    type Err = PlannerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pomcp" => Ok(Self::Pomcp),
            "ccpomcp" => Ok(Self::CcPomcp),
            _ => s
                .strip_prefix("static-")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k > 0)
                .map(Self::Static)
                .ok_or_else(|| PlannerError::UnknownStrategy(s.to_owned())),
        }
    }
}

impl fmt::Display for StrategyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Static(k) => write!(f, "static-{k}"),
            Self::Pomcp => f.write_str("pomcp"),
            Self::CcPomcp => f.write_str("ccpomcp"),
        }
    }
}

impl<F> HlpStrategy<F> {
    pub fn key(&self) -> StrategyKey {
        match self {
            Self::Static { k } => StrategyKey::Static(*k),
            Self::OnlinePomcp(_) => StrategyKey::Pomcp,
            Self::OnlineCcPomcp(_) => StrategyKey::CcPomcp,
        }
    }
}

/// Per-episode planner bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerState<F> {
    /// Waypoints still to visit, ending at the goal.
    pub remaining_path: Vec<Coord>,
    /// Executed actions so far.
    pub step_index: usize,
    pub belief: ParticleBelief,
    pub lambda: F,
    /// Remaining admissible cost budget.
    pub c_hat_t: F,
}

impl<F: Scalar> PlannerState<F> {
    pub fn new(map: &GridMap, n_particles: usize, c_hat: F) -> Result<Self, PlannerError> {
        Ok(Self {
            remaining_path: map.path().to_vec(),
            step_index: 0,
            belief: ParticleBelief::new(map, n_particles)?,
            lambda: F::zero(),
            c_hat_t: c_hat,
        })
    }

    /// Belief as the solver sees it: every particle dead-reckons from the
    /// belief mean toward `remaining_path[0]`, matching the command the
    /// low-level planner will issue.
    pub fn anchored_belief(&self) -> ParticleBelief {
        let mut b = self.belief.clone();
        b.anchor(self.belief.mean_position(), 0);
        b
    }
}

/// Picks the next high-level action. Online strategies localize outright when
/// the belief has no surviving particle; CC-POMCP writes back its dual
/// variable.
pub fn next_action<F: Scalar, R: Rng + ?Sized>(
    strategy: &HlpStrategy<F>,
    ps: &mut PlannerState<F>,
    map: &GridMap,
    rewards: RewardConfig<F>,
    noise: MotionNoise<F>,
    rng: &mut R,
) -> Result<Action, PlannerError> {
    if let HlpStrategy::Static { k } = strategy {
        return Ok(static_action(*k, ps.step_index));
    }
    if ps.belief.active_count() == 0 {
        return Ok(Action::Localize);
    }
    let belief = ps.anchored_belief();
    let model = GenerativeModel::new(map, &ps.remaining_path, rewards, noise);
    match strategy {
        HlpStrategy::OnlinePomcp(params) => Ok(plan(&belief, &model, params, rng)?),
        HlpStrategy::OnlineCcPomcp(params) => {
            let d = plan_cc(&belief, &model, params, ps.c_hat_t, ps.lambda, rng)?;
            ps.lambda = d.lambda;
            Ok(d.action)
        }
        HlpStrategy::Static { .. } => unreachable!(),
    }
}

/// Fixed cadence: Localize on every `(k + 1)`-th executed action.
pub fn static_action(k: usize, step_index: usize) -> Action {
    if (step_index + 1).is_multiple_of(k + 1) {
        Action::Localize
    } else {
        Action::Move
    }
}

/// Command toward the head of the remaining path seen from the belief mean.
/// A head the mean already occupies is dropped first, except the goal.
/// `None` means the mean sits on the goal and the agent holds.
pub fn llp_execute_move<F: Scalar>(
    ps: &mut PlannerState<F>,
    _map: &GridMap,
) -> Result<Option<MotionCommand>, PlannerError> {
    if ps.remaining_path.is_empty() {
        return Err(PlannerError::PathExhausted);
    }
    let mean = ps.belief.mean_position();
    let skip = ps
        .remaining_path
        .iter()
        .take(ps.remaining_path.len() - 1)
        .take_while(|&&w| w == mean)
        .count();
    ps.remaining_path.drain(..skip);
    Ok(intended_command(mean, ps.remaining_path[0]))
}

/// Repairs the remaining path from the belief mean after a GPS fix: drops the
/// waypoints behind the mean when it lies on the path, otherwise bridges to
/// the nearest remaining waypoint with a breadth-first search. A mean on the
/// goal leaves an empty path.
pub fn llp_replan_after_localize<F: Scalar>(
    ps: &mut PlannerState<F>,
    map: &GridMap,
) -> Result<(), PlannerError> {
    let mean = ps.belief.mean_position();
    ps.remaining_path = replan_path(map, &ps.remaining_path, mean)?;
    Ok(())
}

/// Path repair on an explicit path and position; see
/// [`llp_replan_after_localize`].
pub fn replan_path(map: &GridMap, path: &[Coord], at: Coord) -> Result<Vec<Coord>, PlannerError> {
    if at == map.goal() {
        return Ok(Vec::new());
    }
    if let Some(i) = path.iter().position(|&w| w == at) {
        return Ok(path[i..].to_vec());
    }
    if path.is_empty() {
        let bridge = bfs_shortest_path(map, at, map.goal())?;
        return Ok(bridge[1..].to_vec());
    }
    let j = nearest_waypoint(path, 0, at);
    let bridge = bfs_shortest_path(map, at, path[j])?;
    let mut out = bridge[1..].to_vec();
    out.extend_from_slice(&path[j + 1..]);
    Ok(out)
}

/// Minimum-length 4-connected path from `from` to `to` avoiding obstacles,
/// endpoints included. Neighbors expand Up, Down, Left, Right.
pub fn bfs_shortest_path(map: &GridMap, from: Coord, to: Coord) -> Result<Vec<Coord>, PlannerError> {
    let unreachable = PlannerError::Unreachable { from, to };
    if !map.is_traversable(from) || !map.is_traversable(to) {
        return Err(unreachable);
    }
    let w = map.width();
    let idx = |c: Coord| c.y as usize * w + c.x as usize;
    let mut parent: Vec<Option<Coord>> = vec![None; w * map.height()];
    parent[idx(from)] = Some(from);
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        if c == to {
            let mut path = vec![to];
            let mut cur = to;
            while cur != from {
                cur = parent[idx(cur)].expect("visited cell has a parent");
                path.push(cur);
            }
            path.reverse();
            return Ok(path);
        }
        for n in c.neighbors() {
            if map.is_traversable(n) && parent[idx(n)].is_none() {
                parent[idx(n)] = Some(c);
                queue.push_back(n);
            }
        }
    }
    Err(unreachable)
}
