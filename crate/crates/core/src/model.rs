//! Generative model `G(s, a) -> (s', o, r, c)` for the move/localize problem.
//!
//! Motion is open loop: a `Move` resolves to the unit command that takes the
//! agent's dead-reckoned `estimate` toward its current target waypoint, and the
//! true position then follows that command with over/undershoot noise. Only a
//! `Localize` (surfacing for a GPS fix) brings the estimate back to the truth.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{Coord, GridMap, Terminal};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Move,
    Localize,
}

impl Action {
    /// Fixed order used for every tie-break: Move first.
    pub const ALL: [Action; 2] = [Action::Move, Action::Localize];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MotionCommand {
    Up,
    Down,
    Left,
    Right,
}

impl MotionCommand {
    pub fn delta(self) -> (i32, i32) {
        match self {
            MotionCommand::Up => (0, -1),
            MotionCommand::Down => (0, 1),
            MotionCommand::Left => (-1, 0),
            MotionCommand::Right => (1, 0),
        }
    }

    pub fn apply(self, c: Coord) -> Coord {
        let (dx, dy) = self.delta();
        c.offset(dx, dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observation {
    None,
    Gps(Coord),
}

/// Reward components; the total per step is the sum of those that apply.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig<F> {
    pub goal: F,
    #[serde(rename = "move")]
    pub step: F,
    #[serde(rename = "localize")]
    pub local: F,
    pub fail: F,
}

impl<F: Scalar> RewardConfig<F> {
    /// Cost-unaware planner rewards.
    pub fn pomcp() -> Self {
        Self {
            goal: F::lit(100.0),
            step: F::lit(-1.0),
            local: F::lit(-5.0),
            fail: F::lit(-10.0),
        }
    }

    /// Cost-constrained planner rewards.
    pub fn ccpomcp() -> Self {
        Self {
            goal: F::lit(100.0),
            step: F::lit(-1.0),
            local: F::lit(-3.0),
            fail: F::lit(-100.0),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let z = F::zero();
        if self.goal > z && self.step <= z && self.local <= z && self.fail <= z {
            Ok(())
        } else {
            Err(ModelError::InvalidRewards)
        }
    }
}

/// Landing distribution of one motion command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionNoise<F> {
    /// Probability of landing on the commanded cell.
    pub intended: F,
    /// Probability of travelling one extra cell along the same axis.
    pub overshoot: F,
    /// Probability of not moving at all.
    pub undershoot: F,
}

impl<F: Scalar> Default for MotionNoise<F> {
    fn default() -> Self {
        Self {
            intended: F::lit(0.94),
            overshoot: F::lit(0.03),
            undershoot: F::lit(0.03),
        }
    }
}

impl<F: Scalar> MotionNoise<F> {
    pub fn noiseless() -> Self {
        Self {
            intended: F::one(),
            overshoot: F::zero(),
            undershoot: F::zero(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let parts = [self.intended, self.overshoot, self.undershoot];
        let sum = parts.iter().fold(F::zero(), |a, &b| a + b);
        if parts.iter().all(|&p| p >= F::zero()) && (sum - F::one()).abs() < F::lit(1e-6) {
            Ok(())
        } else {
            Err(ModelError::InvalidNoise)
        }
    }

    /// Number of cells actually travelled for `u` uniform on `[0, 1)`.
    #[inline]
    pub fn cells_for(&self, u: F) -> i32 {
        if u < self.intended {
            1
        } else if u < self.intended + self.overshoot {
            2
        } else {
            0
        }
    }
}

/// Hidden agent state. `estimate` is where dead reckoning places the agent and
/// drives command selection; `waypoint_index` indexes the route the model was
/// built with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Coord,
    pub estimate: Coord,
    pub waypoint_index: usize,
    pub terminal: Terminal,
}

impl AgentState {
    /// Active state with a perfect estimate, chasing the first waypoint.
    pub fn at(position: Coord) -> Self {
        Self {
            position,
            estimate: position,
            waypoint_index: 0,
            terminal: Terminal::Active,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome<F> {
    pub next_state: AgentState,
    pub observation: Observation,
    pub reward: F,
    /// 1 exactly on transitions into a failure state.
    pub cost: F,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("cannot step a terminal state ({0:?})")]
    TerminalState(Terminal),
    #[error("reward config needs goal > 0 and non-positive penalties")]
    InvalidRewards,
    #[error("motion noise probabilities must be non-negative and sum to 1")]
    InvalidNoise,
}

/// Unit step from `from` toward `to` along the axis with the larger absolute
/// displacement, x first on ties. `None` when already there.
pub fn intended_command(from: Coord, to: Coord) -> Option<MotionCommand> {
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    if dx == 0 && dy == 0 {
        None
    } else if dx.abs() >= dy.abs() {
        Some(if dx > 0 { MotionCommand::Right } else { MotionCommand::Left })
    } else {
        Some(if dy > 0 { MotionCommand::Down } else { MotionCommand::Up })
    }
}

/// Index of the waypoint in `route[from..]` closest to `pos` (Euclidean, ties
/// to the lower index). Returns `from` for an empty tail.
pub fn nearest_waypoint(route: &[Coord], from: usize, pos: Coord) -> usize {
    route
        .iter()
        .enumerate()
        .skip(from)
        .min_by_key(|&(i, w)| (w.dist_sq(pos), i))
        .map_or(from, |(i, _)| i)
}

/// Black-box simulator over one map and route.
#[derive(Clone, Copy, Debug)]
pub struct GenerativeModel<'a, F> {
    pub map: &'a GridMap,
    pub route: &'a [Coord],
    pub rewards: RewardConfig<F>,
    pub noise: MotionNoise<F>,
}

impl<'a, F: Scalar> GenerativeModel<'a, F> {
    pub fn new(
        map: &'a GridMap,
        route: &'a [Coord],
        rewards: RewardConfig<F>,
        noise: MotionNoise<F>,
    ) -> Self {
        Self {
            map,
            route,
            rewards,
            noise,
        }
    }

    /// Physically executes `cmd` from `pos`. Multi-cell motion stops at the
    /// first obstacle or off-map cell entered.
    pub fn apply_command<R: Rng + ?Sized>(
        &self,
        pos: Coord,
        cmd: MotionCommand,
        rng: &mut R,
    ) -> (Coord, Terminal) {
        let cells = self.noise.cells_for(F::unit(rng));
        let mut p = pos;
        for _ in 0..cells {
            p = cmd.apply(p);
            let t = self.map.classify_move(p);
            if t.is_failure() {
                return (p, t);
            }
        }
        (p, self.map.classify_move(p))
    }

    /// Target index and command the waypoint-chasing rule picks for `state`.
    pub fn resolve_command(&self, state: &AgentState) -> (usize, Option<MotionCommand>) {
        let Some(last) = self.route.len().checked_sub(1) else {
            return (0, None);
        };
        let mut idx = state.waypoint_index.min(last);
        while idx < last && state.estimate == self.route[idx] {
            idx += 1;
        }
        (idx, intended_command(state.estimate, self.route[idx]))
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &AgentState,
        action: Action,
        rng: &mut R,
    ) -> Result<StepOutcome<F>, ModelError> {
        if !state.terminal.is_active() {
            return Err(ModelError::TerminalState(state.terminal));
        }
        Ok(match action {
            Action::Move => {
                let (idx, cmd) = self.resolve_command(state);
                let mut s = *state;
                s.waypoint_index = idx;
                self.move_with(&s, cmd, rng)
            }
            Action::Localize => self.localize(state),
        })
    }

    /// Move transition for an explicit command; `None` holds position.
    pub fn move_with<R: Rng + ?Sized>(
        &self,
        state: &AgentState,
        cmd: Option<MotionCommand>,
        rng: &mut R,
    ) -> StepOutcome<F> {
        let mut next = *state;
        if let Some(cmd) = cmd {
            let (pos, terminal) = self.apply_command(state.position, cmd, rng);
            next.position = pos;
            next.terminal = terminal;
            next.estimate = cmd.apply(state.estimate);
            let idx = next.waypoint_index;
            if idx + 1 < self.route.len() && next.estimate == self.route[idx] {
                next.waypoint_index = idx + 1;
            }
        }
        StepOutcome {
            next_state: next,
            observation: Observation::None,
            reward: self.rewards.step + self.terminal_reward(next.terminal),
            cost: cost_of(next.terminal),
        }
    }

    /// Surfacing: no horizontal motion, fatal on a surface hazard, otherwise a
    /// GPS fix that resets the estimate and re-targets the nearest waypoint
    /// not yet passed.
    pub fn localize(&self, state: &AgentState) -> StepOutcome<F> {
        let mut next = *state;
        next.terminal = self.map.classify_localize(state.position);
        let observation = if next.terminal.is_active() {
            next.estimate = state.position;
            next.waypoint_index = nearest_waypoint(self.route, state.waypoint_index, state.position);
            Observation::Gps(state.position)
        } else {
            Observation::None
        };
        StepOutcome {
            next_state: next,
            observation,
            reward: self.rewards.local + self.terminal_reward(next.terminal),
            cost: cost_of(next.terminal),
        }
    }

    fn terminal_reward(&self, t: Terminal) -> F {
        match t {
            Terminal::ReachedGoal => self.rewards.goal,
            t if t.is_failure() => self.rewards.fail,
            _ => F::zero(),
        }
    }
}

#[inline]
fn cost_of<F: Scalar>(t: Terminal) -> F {
    if t.is_failure() {
        F::one()
    } else {
        F::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::parse_map;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn open_map() -> GridMap {
        // 12x12 free water with a straight path along row 5.
        let mut text = String::new();
        for y in 0..12 {
            for x in 0..12 {
                text.push(match (x, y) {
                    (5, 5) => 'S',
                    (11, 5) => 'G',
                    (6..=10, 5) => '*',
                    _ => '.',
                });
            }
            text.push('\n');
        }
        parse_map(&text).unwrap()
    }

    #[test]
    fn intended_command_rule() {
        let c = Coord::new;
        assert_eq!(intended_command(c(2, 2), c(2, 5)), Some(MotionCommand::Down));
        assert_eq!(intended_command(c(2, 2), c(4, 3)), Some(MotionCommand::Right));
        assert_eq!(intended_command(c(2, 2), c(3, 3)), Some(MotionCommand::Right));
        assert_eq!(intended_command(c(2, 2), c(2, 1)), Some(MotionCommand::Up));
        assert_eq!(intended_command(c(2, 2), c(2, 2)), None);
    }

    #[test]
    fn move_landing_frequencies() {
        let map = open_map();
        let route = map.path().to_vec();
        let model = GenerativeModel::new(&map, &route, RewardConfig::<f64>::pomcp(), MotionNoise::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let start = AgentState::at(Coord::new(5, 5));
        let mut counts = [0usize; 3];
        let n = 200_000;
        for _ in 0..n {
            let out = model.step(&start, Action::Move, &mut rng).unwrap();
            match out.next_state.position.x {
                6 => counts[0] += 1,
                7 => counts[1] += 1,
                5 => counts[2] += 1,
                x => panic!("landed at x={x}"),
            }
            assert_eq!(out.next_state.estimate, Coord::new(6, 5));
            assert_eq!(out.observation, Observation::None);
        }
        let f = counts.map(|c| c as f64 / n as f64);
        assert!((f[0] - 0.94).abs() < 0.005, "{f:?}");
        assert!((f[1] - 0.03).abs() < 0.003, "{f:?}");
        assert!((f[2] - 0.03).abs() < 0.003, "{f:?}");
    }

    #[test]
    fn localize_on_lane_is_fatal() {
        let map: GridMap = "S+G\n".parse().unwrap();
        let route = map.path().to_vec();
        let model = GenerativeModel::new(&map, &route, RewardConfig::<f64>::ccpomcp(), MotionNoise::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model
            .step(&AgentState::at(Coord::new(1, 0)), Action::Localize, &mut rng)
            .unwrap();
        assert_eq!(out.next_state.terminal, Terminal::FailedSurfaced);
        assert_eq!(out.reward, -103.0);
        assert_eq!(out.cost, 1.0);
        assert_eq!(out.next_state.position, Coord::new(1, 0));
    }

    #[test]
    fn reaching_goal_pays_goal_reward() {
        let map: GridMap = "S*G\n".parse().unwrap();
        let route = map.path().to_vec();
        let model = GenerativeModel::new(&map, &route, RewardConfig::<f64>::pomcp(), MotionNoise::noiseless());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = AgentState { waypoint_index: 1, ..AgentState::at(Coord::new(1, 0)) };
        let out = model.step(&s, Action::Move, &mut rng).unwrap();
        assert_eq!(out.next_state.terminal, Terminal::ReachedGoal);
        assert_eq!(out.reward, -1.0 + 100.0);
        assert_eq!(out.cost, 0.0);
        assert!(matches!(
            model.step(&out.next_state, Action::Move, &mut rng),
            Err(ModelError::TerminalState(Terminal::ReachedGoal))
        ));
    }

    #[test]
    fn overshoot_stops_at_first_obstacle() {
        let map: GridMap = "S*.#.\n.***G\n".parse().unwrap();
        let route = map.path().to_vec();
        let noise = MotionNoise { intended: 0.0, overshoot: 1.0, undershoot: 0.0 };
        let model = GenerativeModel::new(&map, &route, RewardConfig::<f64>::pomcp(), noise);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hit = |from| model.apply_command(from, MotionCommand::Right, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(hit(Coord::new(1, 0)), (Coord::new(3, 0), Terminal::FailedCollision));
        // no tunnelling through the obstacle to the free cell behind it
        assert_eq!(hit(Coord::new(2, 0)), (Coord::new(3, 0), Terminal::FailedCollision));
        assert_eq!(hit(Coord::new(4, 1)), (Coord::new(5, 1), Terminal::FailedOffMap));
        let (pos, t) = model.apply_command(Coord::new(0, 1), MotionCommand::Right, &mut rng);
        assert_eq!((pos, t), (Coord::new(2, 1), Terminal::Active));
    }

    #[test]
    fn reward_components_sum_exactly() {
        // 2 actions x 4 terminal classes on a hand-built corridor.
        let map: GridMap = "region all 0 0 4 0\n#S+G.\n".parse().unwrap();
        let route = map.path().to_vec();
        let r = RewardConfig::<f64> { goal: 7.0, step: -1.5, local: -2.25, fail: -11.0 };
        let always = |intended: f64, overshoot: f64| MotionNoise { intended, overshoot, undershoot: 1.0 - intended - overshoot };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cases: Vec<(AgentState, Action, MotionNoise<f64>, Terminal, f64)> = vec![
            // move -> active
            (AgentState::at(Coord::new(1, 0)), Action::Move, always(1.0, 0.0), Terminal::Active, r.step),
            // move -> goal
            (AgentState { waypoint_index: 1, ..AgentState::at(Coord::new(2, 0)) }, Action::Move, always(1.0, 0.0), Terminal::ReachedGoal, r.step + r.goal),
            // move -> collision (estimate chases backwards into the wall)
            (AgentState { estimate: Coord::new(2, 0), ..AgentState::at(Coord::new(1, 0)) }, Action::Move, always(0.0, 1.0), Terminal::FailedCollision, r.step + r.fail),
            // move -> off map
            (AgentState { waypoint_index: 3, estimate: Coord::new(2, 0), ..AgentState::at(Coord::new(4, 0)) }, Action::Move, always(0.0, 1.0), Terminal::FailedOffMap, r.step + r.fail),
            // localize -> active
            (AgentState::at(Coord::new(1, 0)), Action::Localize, always(1.0, 0.0), Terminal::Active, r.local),
            // localize -> surfaced
            (AgentState::at(Coord::new(2, 0)), Action::Localize, always(1.0, 0.0), Terminal::FailedSurfaced, r.local + r.fail),
        ];
        for (s, a, noise, want, reward) in cases {
            let model = GenerativeModel::new(&map, &route, r, noise);
            let out = model.step(&s, a, &mut rng).unwrap();
            assert_eq!(out.next_state.terminal, want, "{s:?} {a:?}");
            assert_eq!(out.reward, reward, "{s:?} {a:?}");
            assert_eq!(out.cost, if want.is_failure() { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn localize_resets_estimate_and_keeps_position() {
        let map = open_map();
        let route = map.path().to_vec();
        let model = GenerativeModel::new(&map, &route, RewardConfig::<f32>::ccpomcp(), MotionNoise::default());
        let s = AgentState {
            position: Coord::new(7, 6),
            estimate: Coord::new(9, 5),
            waypoint_index: 2,
            terminal: Terminal::Active,
        };
        let out = model.localize(&s);
        assert_eq!(out.observation, Observation::Gps(Coord::new(7, 6)));
        assert_eq!(out.next_state.position, s.position);
        assert_eq!(out.next_state.estimate, s.position);
        assert_eq!(route[out.next_state.waypoint_index], Coord::new(7, 5));
    }

    #[test]
    fn hold_when_route_is_finished() {
        let map: GridMap = "S*G\n".parse().unwrap();
        let route = map.path().to_vec();
        let model = GenerativeModel::new(&map, &route, RewardConfig::<f64>::pomcp(), MotionNoise::default());
        let s = AgentState { estimate: map.goal(), waypoint_index: 2, ..AgentState::at(Coord::new(1, 0)) };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.step(&s, Action::Move, &mut rng).unwrap();
        assert_eq!(out.next_state.position, Coord::new(1, 0));
        assert_eq!(out.next_state.terminal, Terminal::Active);
        assert_eq!(out.reward, -1.0);
    }
}
