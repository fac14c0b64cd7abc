//! Unweighted particle belief over the hidden agent state.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{Coord, GridMap, Terminal};
use crate::model::{nearest_waypoint, Action, AgentState, GenerativeModel, MotionCommand};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BeliefError {
    #[error("a belief needs at least one particle")]
    Empty,
    #[error("reinvigoration fraction must lie in [0, 1]")]
    InvalidFraction,
}

/// Particle reinvigoration applied after a GPS fix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reinvigoration<F> {
    /// Share of particles replaced by jittered copies of the fix.
    pub fraction: F,
    /// Chebyshev radius of the jitter, in cells.
    pub radius: i32,
}

impl<F: Scalar> Default for Reinvigoration<F> {
    fn default() -> Self {
        Self {
            fraction: F::lit(0.1),
            radius: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticleBelief {
    particles: Vec<AgentState>,
}

impl ParticleBelief {
    /// `n_p` particles at the map's start, chasing the first waypoint.
    pub fn new(map: &GridMap, n_p: usize) -> Result<Self, BeliefError> {
        if n_p == 0 {
            return Err(BeliefError::Empty);
        }
        Ok(Self {
            particles: vec![AgentState::at(map.start()); n_p],
        })
    }

    pub fn from_particles(particles: Vec<AgentState>) -> Result<Self, BeliefError> {
        if particles.is_empty() {
            return Err(BeliefError::Empty);
        }
        Ok(Self { particles })
    }

    pub fn particles(&self) -> &[AgentState] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn active(&self) -> impl Iterator<Item = &AgentState> {
        self.particles.iter().filter(|p| p.terminal.is_active())
    }

    pub fn active_count(&self) -> usize {
        self.active().count()
    }

    /// Points every particle at a shared dead-reckoned estimate and target
    /// waypoint, so they all resolve `Move` to the same command.
    pub fn anchor(&mut self, estimate: Coord, waypoint_index: usize) {
        for p in &mut self.particles {
            p.estimate = estimate;
            p.waypoint_index = waypoint_index;
        }
    }

    /// One `Move` per active particle through the model's waypoint-chasing
    /// rule, with independent noise. No observation filtering.
    pub fn propagate<F: Scalar, R: Rng + ?Sized>(
        &self,
        model: &GenerativeModel<'_, F>,
        rng: &mut R,
    ) -> Self {
        self.map_active(|p| {
            model
                .step(p, Action::Move, rng)
                .expect("active particle")
                .next_state
        })
    }

    /// Applies one executed motion command (`None` = hold) to every active
    /// particle.
    pub fn propagate_command<F: Scalar, R: Rng + ?Sized>(
        &self,
        model: &GenerativeModel<'_, F>,
        cmd: Option<MotionCommand>,
        rng: &mut R,
    ) -> Self {
        self.map_active(|p| model.move_with(p, cmd, rng).next_state)
    }

    fn map_active(&self, mut f: impl FnMut(&AgentState) -> AgentState) -> Self {
        Self {
            particles: self
                .particles
                .iter()
                .map(|p| if p.terminal.is_active() { f(p) } else { *p })
                .collect(),
        }
    }

    /// Filters on a noiseless GPS fix at `obs` and reinvigorates.
    ///
    /// Particles at `obs` are kept for `n_p * (1 - fraction)` slots; the rest
    /// are jittered copies of `obs` on traversable cells. When no particle
    /// matches (deprivation) the belief is reseeded from `obs` with the same
    /// composition. Every particle then targets the nearest waypoint of `route`
    /// not yet passed. Returns the new belief and whether deprivation occurred.
    pub fn update_with_gps<F: Scalar, R: Rng + ?Sized>(
        &self,
        obs: Coord,
        map: &GridMap,
        route: &[Coord],
        reinvig: &Reinvigoration<F>,
        rng: &mut R,
    ) -> Result<(Self, bool), BeliefError> {
        if !(F::zero()..=F::one()).contains(&reinvig.fraction) {
            return Err(BeliefError::InvalidFraction);
        }
        let deprived = !self
            .active()
            .any(|p| p.position == obs);
        let n = self.particles.len();
        let keep = (F::lit(n as f64) * (F::one() - reinvig.fraction))
            .round()
            .as_f64() as usize;
        let from = self.particles[0].waypoint_index;
        let target = nearest_waypoint(route, from, obs);
        let r = reinvig.radius.max(0);
        let particles = (0..n)
            .map(|i| {
                let position = if i < keep || r == 0 {
                    obs
                } else {
                    jitter(map, obs, r, rng)
                };
                AgentState {
                    position,
                    estimate: obs,
                    waypoint_index: target,
                    terminal: Terminal::Active,
                }
            })
            .collect();
        Ok((Self { particles }, deprived))
    }

    /// Component-wise mean of active positions (all positions if none are
    /// active), rounded half away from zero.
    pub fn mean_position(&self) -> Coord {
        let mut pick: Vec<&AgentState> = self.active().collect();
        if pick.is_empty() {
            pick = self.particles.iter().collect();
        }
        let n = pick.len() as f64;
        let (sx, sy) = pick.iter().fold((0i64, 0i64), |(x, y), p| {
            (x + p.position.x as i64, y + p.position.y as i64)
        });
        Coord::new((sx as f64 / n).round() as i32, (sy as f64 / n).round() as i32)
    }

    pub fn failed_count(&self) -> usize {
        self.particles.iter().filter(|p| p.terminal.is_failure()).count()
    }

    /// Share of particles in a failure state.
    pub fn failure_fraction<F: Scalar>(&self) -> F {
        F::lit(self.failed_count() as f64) / F::lit(self.particles.len() as f64)
    }

    /// Share of active particles standing on a surface hazard: the belief's
    /// risk of surfacing right now.
    pub fn surfacing_risk<F: Scalar>(&self, map: &GridMap) -> F {
        let active = self.active_count();
        if active == 0 {
            return F::zero();
        }
        let exposed = self
            .active()
            .filter(|p| map.classify_localize(p.position) == Terminal::FailedSurfaced)
            .count();
        F::lit(exposed as f64) / F::lit(active as f64)
    }
}

fn jitter<R: Rng + ?Sized>(map: &GridMap, center: Coord, radius: i32, rng: &mut R) -> Coord {
    for _ in 0..32 {
        let c = center.offset(
            rng.gen_range(-radius..=radius),
            rng.gen_range(-radius..=radius),
        );
        if map.is_traversable(c) {
            return c;
        }
    }
    center
}
