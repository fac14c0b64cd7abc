//! Cost-constrained POMCP.
//!
//! In-tree selection maximizes `Q_r - lambda * Q_c` plus the UCB1 bonus. After
//! every simulation the dual variable takes a projected ascent step toward the
//! constraint `Q_c(root, a_greedy) <= c_hat_t`. The executed action is the
//! scalarized argmax when it is feasible, otherwise a one-dimensional mixture
//! with the cheapest action that meets the budget exactly in expectation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::ParticleBelief;
use crate::model::{Action, GenerativeModel, RewardConfig};
use crate::pomcp::{Pomcp, SearchError, SearchParams, SearchTree, TreeNode};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcSearchParams<F> {
    pub base: SearchParams<F>,
    /// Dual ascent step size.
    pub alpha: F,
    /// Episode cost budget as a failure probability.
    pub c_hat: F,
    /// Cap on the dual variable; derived from the rewards when `None`.
    pub lambda_max: Option<F>,
    /// Start every decision from `lambda = 0` instead of warm-starting.
    pub reset_lambda: bool,
}

impl<F: Scalar> CcSearchParams<F> {
    /// Cost-constrained planner defaults.
    pub fn ccpomcp() -> Self {
        Self {
            base: SearchParams {
                gamma: F::lit(0.9),
                kappa: F::lit(200.0),
                ..SearchParams::pomcp()
            },
            alpha: F::lit(0.001),
            c_hat: F::lit(0.10),
            lambda_max: None,
            reset_lambda: false,
        }
    }

    /// `lambda_max`, defaulting to `(r_goal - r_fail) / (c_hat * (1 - gamma))`.
    pub fn lambda_cap(&self, rewards: &RewardConfig<F>) -> F {
        self.lambda_max.unwrap_or_else(|| {
            (rewards.goal - rewards.fail) / (self.c_hat * (F::one() - self.base.gamma))
        })
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        self.base.validate()?;
        if !(self.alpha >= F::zero()) {
            return Err(SearchError::InvalidParams("alpha must be non-negative"));
        }
        if !(self.c_hat > F::zero()) {
            return Err(SearchError::InvalidParams("c_hat must be positive"));
        }
        if self.lambda_max.is_some_and(|l| !(l > F::zero())) {
            return Err(SearchError::InvalidParams("lambda_max must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CcDecision<F> {
    pub action: Action,
    pub lambda: F,
    /// The action came from the randomized feasibility mixture.
    pub mixed: bool,
    /// Root `(visits, Q_r, Q_c)` per action, for diagnostics.
    pub root_stats: [(u32, F, F); 2],
}

/// `clamp(lambda + alpha * (q_cost - c_hat_t), 0, lambda_max)`.
pub fn dual_update<F: Scalar>(lambda: F, q_cost: F, c_hat_t: F, alpha: F, lambda_max: F) -> F {
    let step = lambda + alpha * (q_cost - c_hat_t);
    if step.is_nan() {
        return lambda.max(F::zero()).min(lambda_max);
    }
    step.max(F::zero()).min(lambda_max)
}

/// Remaining discounted budget after executing a step that cost
/// `executed_cost`: `max(0, (c_hat_t - executed_cost) / gamma)`.
pub fn admissible_cost_update<F: Scalar>(c_hat_t: F, executed_cost: F, gamma: F) -> F {
    ((c_hat_t - executed_cost) / gamma).max(F::zero())
}

/// Cost-aware choice among the root actions. Consumes randomness only when the
/// mixture branch is taken. Returns the action and whether it was mixed.
pub fn choose_action<F: Scalar, R: Rng + ?Sized>(
    root: &TreeNode<F>,
    lambda: F,
    c_hat_t: F,
    rng: &mut R,
) -> (Action, bool) {
    let Some(best) = root.greedy(lambda) else {
        return (Action::Move, false);
    };
    let q_best = root.edge(best).q_cost;
    if q_best <= c_hat_t {
        return (best, false);
    }
    let mut low = best;
    for a in Action::ALL {
        let e = root.edge(a);
        if e.visits > 0 && e.q_cost < root.edge(low).q_cost {
            low = a;
        }
    }
    let q_low = root.edge(low).q_cost;
    if low == best || q_low > c_hat_t {
        return (low, false);
    }
    // nu * q_best + (1 - nu) * q_low = c_hat_t
    let nu = (c_hat_t - q_low) / (q_best - q_low);
    if F::unit(rng) < nu {
        (best, true)
    } else {
        (low, true)
    }
}

/// Plans one action with a fresh tree, warm-starting the dual variable at
/// `lambda` unless the parameters ask for a reset.
pub fn plan_cc<F: Scalar, R: Rng + ?Sized>(
    belief: &ParticleBelief,
    model: &GenerativeModel<'_, F>,
    params: &CcSearchParams<F>,
    c_hat_t: F,
    lambda: F,
    rng: &mut R,
) -> Result<CcDecision<F>, SearchError> {
    params.validate()?;
    let cap = params.lambda_cap(&model.rewards);
    let start = if params.reset_lambda { F::zero() } else { lambda.max(F::zero()).min(cap) };
    let alpha = params.alpha;
    let mut search = Pomcp::new(model, params.base)?;
    let lambda = search.search(belief, start, rng, |tree: &SearchTree<F>, l| {
        let root = tree.root();
        match root.greedy(l) {
            Some(a) => dual_update(l, root.edge(a).q_cost, c_hat_t, alpha, cap),
            None => l,
        }
    })?;
    let root = search.tree().root();
    let (action, mixed) = choose_action(root, lambda, c_hat_t, rng);
    let stat = |a: Action| {
        let e = root.edge(a);
        (e.visits, e.q_reward, e.q_cost)
    };
    Ok(CcDecision {
        action,
        lambda,
        mixed,
        root_stats: [stat(Action::Move), stat(Action::Localize)],
    })
}
