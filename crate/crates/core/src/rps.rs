//! Repeated rock-paper-scissors.
//!
//! Besides the environment this module holds the closed-form payoff algebra
//! for mixed strategies, the discounted-count counter policy and the
//! known-opponent best-response oracle used to bound it.

use rand::{Rng, SeedableRng};

use crate::engine::{
    self, derive_seed, Environment, EpisodeRng, EpisodeStats, EvalConfig, Policy, PolicyHandle,
    Step,
};
use crate::error::{Error, Result};

/// Tolerance on the simplex constraint.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RpsAction {
    Rock = 0,
    Paper = 1,
    Scissors = 2,
}

impl RpsAction {
    pub const ALL: [RpsAction; 3] = [RpsAction::Rock, RpsAction::Paper, RpsAction::Scissors];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i % 3]
    }

    /// The action that beats `self`.
    pub fn counter(self) -> Self {
        Self::from_index(self.index() + 1)
    }
}

/// +1 if `a` beats `b`, -1 if it loses, 0 on a draw.
pub fn payoff(a: RpsAction, b: RpsAction) -> i32 {
    match (3 + a.index() - b.index()) % 3 {
        0 => 0,
        1 => 1,
        _ => -1,
    }
}

/// A mixed strategy `[θ_rock, θ_paper, θ_scissors]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionDistribution3([f64; 3]);

impl ActionDistribution3 {
    /// Validates against [`SIMPLEX_TOL`] and renormalises.
    pub fn new(rock: f64, paper: f64, scissors: f64) -> Result<Self> {
        let raw = [rock, paper, scissors];
        let sum: f64 = raw.iter().sum();
        if raw.iter().any(|x| !x.is_finite() || *x < -SIMPLEX_TOL) || (sum - 1.0).abs() > SIMPLEX_TOL
        {
            return Err(Error::InvalidDistribution(raw));
        }
        let clamped = raw.map(|x| x.max(0.0));
        let total: f64 = clamped.iter().sum();
        Ok(Self(clamped.map(|x| x / total)))
    }

    pub fn from_array(probs: [f64; 3]) -> Result<Self> {
        Self::new(probs[0], probs[1], probs[2])
    }

    pub fn uniform() -> Self {
        Self([1.0 / 3.0; 3])
    }

    pub fn pure(action: RpsAction) -> Self {
        let mut probs = [0.0; 3];
        probs[action.index()] = 1.0;
        Self(probs)
    }

    pub fn prob(&self, action: RpsAction) -> f64 {
        self.0[action.index()]
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RpsAction {
        let u: f64 = rng.random();
        if u < self.0[0] {
            RpsAction::Rock
        } else if u < self.0[0] + self.0[1] {
            RpsAction::Paper
        } else {
            RpsAction::Scissors
        }
    }
}

/// Expected per-round payoff of `pi` against `pi_prime`.
pub fn expected_reward(pi: &ActionDistribution3, pi_prime: &ActionDistribution3) -> f64 {
    let [r, p, s] = pi.0;
    let [r2, p2, s2] = pi_prime.0;
    r * s2 + p * r2 + s * p2 - r * p2 - p * s2 - s * r2
}

/// Gradients of [`expected_reward`] for `pi` and of its negation for
/// `pi_prime`. Both sum to zero, so they lie in the simplex tangent plane.
pub fn policy_gradients(
    pi: &ActionDistribution3,
    pi_prime: &ActionDistribution3,
) -> ([f64; 3], [f64; 3]) {
    let [r, p, s] = pi.0;
    let [r2, p2, s2] = pi_prime.0;
    ([s2 - p2, r2 - s2, p2 - r2], [s - p, r - s, p - r])
}

/// Pure action maximising expected payoff against `pi_prime`, lowest index
/// on ties, and the value it attains.
pub fn best_response(pi_prime: &ActionDistribution3) -> (RpsAction, f64) {
    let mut best = (RpsAction::Rock, f64::NEG_INFINITY);
    for a in RpsAction::ALL {
        let v = expected_reward(&ActionDistribution3::pure(a), pi_prime);
        if v > best.1 {
            best = (a, v);
        }
    }
    best
}

/// Uniform draw from the 2-simplex via two sorted uniforms.
pub fn sample_simplex_uniform<R: Rng + ?Sized>(rng: &mut R) -> ActionDistribution3 {
    let a: f64 = rng.random();
    let b: f64 = rng.random();
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    ActionDistribution3([lo, hi - lo, 1.0 - hi])
}

/// Discounted counts of observed opponent actions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountMemory {
    pub h: [f64; 3],
    pub gamma: f64,
}

impl CountMemory {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("must lie in (0, 1], got {gamma}"),
            });
        }
        Ok(Self { h: [0.0; 3], gamma })
    }

    /// Counter to the most frequent (discounted) opponent action; ties go
    /// to the lowest index, so an empty memory plays Paper.
    pub fn action(&self) -> RpsAction {
        let mut argmax = 0;
        for i in 1..3 {
            if self.h[i] > self.h[argmax] {
                argmax = i;
            }
        }
        RpsAction::from_index(argmax).counter()
    }
}

/// One recurrence step: `h' = γ h + onehot(observed)`, then counter the
/// argmax of `h'`.
pub fn counter_step(mem: CountMemory, observed: RpsAction) -> (RpsAction, CountMemory) {
    let mut next = mem;
    for (i, h) in next.h.iter_mut().enumerate() {
        *h = mem.gamma * *h + if i == observed.index() { 1.0 } else { 0.0 };
    }
    (next.action(), next)
}

/// What the controlled agent sees: the opponent's previous action, `None`
/// on the first round.
pub type RpsObservation = Option<RpsAction>;

/// The memoryful counter policy.
#[derive(Clone, Copy, Debug)]
pub struct CounterPolicy {
    memory: CountMemory,
}

impl CounterPolicy {
    pub fn new(gamma: f64) -> Result<Self> {
        Ok(Self {
            memory: CountMemory::new(gamma)?,
        })
    }
}

impl Policy<RpsObservation, RpsAction> for CounterPolicy {
    type Memory = CountMemory;

    fn init_memory(&self) -> CountMemory {
        self.memory
    }

    fn act(
        &self,
        obs: &RpsObservation,
        memory: CountMemory,
        _rng: &mut EpisodeRng,
    ) -> (RpsAction, CountMemory) {
        match obs {
            Some(observed) => counter_step(memory, *observed),
            None => (memory.action(), memory),
        }
    }
}

/// Memoryless policy sampling from a fixed mixed strategy.
#[derive(Clone, Copy, Debug)]
pub struct StationaryPolicy(pub ActionDistribution3);

impl Policy<RpsObservation, RpsAction> for StationaryPolicy {
    type Memory = ();

    fn init_memory(&self) {}

    fn act(&self, _obs: &RpsObservation, _memory: (), rng: &mut EpisodeRng) -> (RpsAction, ()) {
        (self.0.sample(rng), ())
    }
}

/// Memoryless policy that always plays the same action.
#[derive(Clone, Copy, Debug)]
pub struct FixedPolicy(pub RpsAction);

impl Policy<RpsObservation, RpsAction> for FixedPolicy {
    type Memory = ();

    fn init_memory(&self) {}

    fn act(&self, _obs: &RpsObservation, _memory: (), _rng: &mut EpisodeRng) -> (RpsAction, ()) {
        (self.0, ())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RpsState<M> {
    pub t: usize,
    pub last_agent: Option<RpsAction>,
    pub last_opponent: Option<RpsAction>,
    pub opponent_memory: M,
}

/// `horizon` rounds of RPS against an embedded opponent policy. The
/// opponent observes the controlled agent's previous action.
#[derive(Clone, Debug)]
pub struct RepeatedRps<P> {
    horizon: usize,
    opponent: P,
}

impl<P> RepeatedRps<P>
where
    P: Policy<RpsObservation, RpsAction>,
    P::Memory: Clone,
{
    pub fn new(horizon: usize, opponent: P) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::TooSmall {
                what: "horizon",
                min: 1,
                got: 0,
            });
        }
        Ok(Self { horizon, opponent })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

impl<P> Environment for RepeatedRps<P>
where
    P: Policy<RpsObservation, RpsAction>,
    P::Memory: Clone,
{
    type State = RpsState<P::Memory>;
    type Action = RpsAction;
    type Observation = RpsObservation;

    fn agent_count(&self) -> usize {
        1
    }

    fn step_limit(&self) -> usize {
        self.horizon
    }

    fn reset(&self, _rng: &mut EpisodeRng) -> Self::State {
        RpsState {
            t: 0,
            last_agent: None,
            last_opponent: None,
            opponent_memory: self.opponent.init_memory(),
        }
    }

    fn observe(&self, state: &Self::State, _agent: usize) -> RpsObservation {
        state.last_opponent
    }

    fn step(
        &self,
        state: &Self::State,
        actions: &[RpsAction],
        rng: &mut EpisodeRng,
    ) -> Step<Self::State> {
        let (opp, opponent_memory) =
            self.opponent
                .act(&state.last_agent, state.opponent_memory.clone(), rng);
        let t = state.t + 1;
        Step {
            state: RpsState {
                t,
                last_agent: Some(actions[0]),
                last_opponent: Some(opp),
                opponent_memory,
            },
            rewards: vec![payoff(actions[0], opp) as f64],
            done: t >= self.horizon,
        }
    }
}

/// Controlled-agent policies compared against resampled opponents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RpsAgent {
    /// Fixed memoryless mixed strategy.
    Stationary(ActionDistribution3),
    /// Count-based counter policy with discount `gamma`.
    Counter { gamma: f64 },
    /// Plays the best response to the true opponent strategy every round.
    Oracle,
}

impl RpsAgent {
    pub fn label(&self) -> &'static str {
        match self {
            RpsAgent::Stationary(d) if *d == ActionDistribution3::uniform() => "uniform",
            RpsAgent::Stationary(_) => "stationary",
            RpsAgent::Counter { .. } => "counter",
            RpsAgent::Oracle => "oracle",
        }
    }
}

const OPPONENT_STREAM: u64 = 0x6f70_706f;

/// Opponent strategy used in the episode with seed `episode_seed`.
pub fn episode_opponent(episode_seed: u64) -> ActionDistribution3 {
    let mut rng = EpisodeRng::seed_from_u64(derive_seed(episode_seed, OPPONENT_STREAM));
    sample_simplex_uniform(&mut rng)
}

/// Per-episode returns of `agent` against opponents resampled uniformly from
/// the simplex each episode; every agent sees the same opponent sequence
/// for a given `config.master_seed`.
pub fn evaluate_vs_uniform_opponents(
    agent: RpsAgent,
    horizon: usize,
    config: &EvalConfig,
) -> Result<EpisodeStats> {
    if horizon == 0 {
        return Err(Error::TooSmall {
            what: "horizon",
            min: 1,
            got: 0,
        });
    }
    if let RpsAgent::Counter { gamma } = agent {
        CountMemory::new(gamma)?;
    }
    engine::evaluate_with(
        |seed| {
            RepeatedRps::new(horizon, StationaryPolicy(episode_opponent(seed)))
                .expect("horizon validated above")
        },
        |seed| -> Vec<PolicyHandle<RpsObservation, RpsAction>> {
            vec![match agent {
                RpsAgent::Stationary(d) => Box::new(StationaryPolicy(d)),
                RpsAgent::Counter { gamma } => {
                    Box::new(CounterPolicy::new(gamma).expect("gamma validated above"))
                }
                RpsAgent::Oracle => Box::new(FixedPolicy(best_response(&episode_opponent(seed)).0)),
            }]
        },
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run_episode;
    use proptest::prelude::*;

    fn dist(r: f64, p: f64, s: f64) -> ActionDistribution3 {
        ActionDistribution3::new(r, p, s).unwrap()
    }

    /// Independent oracle: enumerate all nine joint outcomes.
    fn brute_force_reward(pi: &ActionDistribution3, pi2: &ActionDistribution3) -> f64 {
        let mut total = 0.0;
        for a in RpsAction::ALL {
            for b in RpsAction::ALL {
                total += pi.prob(a) * pi2.prob(b) * payoff(a, b) as f64;
            }
        }
        total
    }

    fn arb_dist() -> impl Strategy<Value = ActionDistribution3> {
        (0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b)| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            ActionDistribution3([lo, hi - lo, 1.0 - hi])
        })
    }

    #[test]
    fn payoff_table() {
        use RpsAction::*;
        assert_eq!(payoff(Rock, Scissors), 1);
        assert_eq!(payoff(Paper, Paper), 0);
        assert_eq!(payoff(Scissors, Rock), -1);
        for a in RpsAction::ALL {
            assert_eq!(payoff(a, a), 0);
            assert_eq!(payoff(a.counter(), a), 1);
            for b in RpsAction::ALL {
                assert_eq!(payoff(a, b), -payoff(b, a));
            }
        }
    }

    #[test]
    fn expected_reward_examples() {
        assert_eq!(
            expected_reward(&ActionDistribution3::pure(RpsAction::Rock), &ActionDistribution3::pure(RpsAction::Scissors)),
            1.0
        );
        let u = ActionDistribution3::uniform();
        assert!(expected_reward(&u, &u).abs() < 1e-15);
        let (pi, pi2) = (dist(0.5, 0.5, 0.0), dist(0.2, 0.3, 0.5));
        // 9-outcome enumeration: 0.5*(0.5 - 0.3) + 0.5*(0.2 - 0.5) = -0.05
        assert!((brute_force_reward(&pi, &pi2) + 0.05).abs() < 1e-15);
        assert!((expected_reward(&pi, &pi2) + 0.05).abs() < 1e-15);
    }

    #[test]
    fn gradient_examples() {
        let (g, _) = policy_gradients(&dist(0.2, 0.2, 0.6), &ActionDistribution3::uniform());
        assert!(g.iter().all(|x| x.abs() < 1e-15));
        let (g, _) = policy_gradients(
            &ActionDistribution3::uniform(),
            &ActionDistribution3::pure(RpsAction::Scissors),
        );
        assert_eq!(g, [1.0, -1.0, 0.0]);
        let (_, g2) = policy_gradients(
            &ActionDistribution3::pure(RpsAction::Rock),
            &ActionDistribution3::uniform(),
        );
        assert_eq!(g2, [0.0, 1.0, -1.0]);
    }

    #[test]
    fn distribution_validation() {
        assert!(ActionDistribution3::new(0.5, 0.5, 0.1).is_err());
        assert!(ActionDistribution3::new(-0.1, 0.6, 0.5).is_err());
        assert!(ActionDistribution3::new(f64::NAN, 0.5, 0.5).is_err());
        let d = ActionDistribution3::new(0.5, 0.5 + 5e-13, -1e-13).unwrap();
        assert_eq!(d.prob(RpsAction::Scissors), 0.0);
        assert!((d.as_array().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn counter_step_examples() {
        let (a, m) = counter_step(CountMemory::new(1.0).unwrap(), RpsAction::Rock);
        assert_eq!((a, m.h), (RpsAction::Paper, [1.0, 0.0, 0.0]));

        let mem = CountMemory { h: [2.0, 5.0, 1.0], gamma: 1.0 };
        let (a, m) = counter_step(mem, RpsAction::Scissors);
        assert_eq!((a, m.h), (RpsAction::Scissors, [2.0, 5.0, 2.0]));

        let (a, m) = counter_step(CountMemory::new(0.9).unwrap(), RpsAction::Paper);
        assert_eq!((a, m.h), (RpsAction::Scissors, [0.0, 1.0, 0.0]));

        assert!(CountMemory::new(0.0).is_err());
        assert!(CountMemory::new(1.5).is_err());
    }

    #[test]
    fn discount_favours_recent_actions() {
        let mut mem = CountMemory::new(0.5).unwrap();
        for _ in 0..5 {
            mem = counter_step(mem, RpsAction::Rock).1;
        }
        let (a, _) = counter_step(counter_step(mem, RpsAction::Scissors).1, RpsAction::Scissors);
        assert_eq!(a, RpsAction::Rock);
    }

    #[test]
    fn best_response_examples() {
        assert_eq!(
            best_response(&ActionDistribution3::pure(RpsAction::Rock)),
            (RpsAction::Paper, 1.0)
        );
        let (a, v) = best_response(&ActionDistribution3::uniform());
        assert_eq!(a, RpsAction::Rock);
        assert!(v.abs() < 1e-15);
        let (a, v) = best_response(&dist(0.5, 0.3, 0.2));
        assert_eq!(a, RpsAction::Paper);
        assert!((v - 0.3).abs() < 1e-15);
    }

    #[test]
    fn simplex_sampler_moments() {
        let mut rng = EpisodeRng::seed_from_u64(11);
        let n = 100_000;
        let mut mean = [0.0; 3];
        let mut rock_heavy = 0usize;
        for _ in 0..n {
            let d = sample_simplex_uniform(&mut rng);
            let p = d.as_array();
            assert!(p.iter().all(|x| *x >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..3 {
                mean[i] += p[i] / n as f64;
            }
            if p[0] > 0.5 {
                rock_heavy += 1;
            }
        }
        for m in mean {
            assert!((m - 1.0 / 3.0).abs() < 0.01, "{mean:?}");
        }
        // Sub-simplex {θ_r > 0.5} has area ratio (1 - 0.5)^2.
        assert!((rock_heavy as f64 / n as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn pure_rock_mirror_match_draws() {
        let env = RepeatedRps::new(10, FixedPolicy(RpsAction::Rock)).unwrap();
        for seed in [0, 1, 99] {
            let ep = run_episode(&env, &[Box::new(FixedPolicy(RpsAction::Rock))], seed, 10).unwrap();
            assert_eq!(ep.returns, vec![0.0]);
            assert_eq!(ep.trajectory.len(), 10);
        }
    }

    #[test]
    fn counter_exploits_every_pure_opponent_after_first_round() {
        for opp in RpsAction::ALL {
            let env = RepeatedRps::new(100, FixedPolicy(opp)).unwrap();
            let ep = run_episode(&env, &[Box::new(CounterPolicy::new(1.0).unwrap())], 3, 100)
                .unwrap();
            for tr in &ep.trajectory[1..] {
                assert_eq!(tr.rewards, vec![1.0]);
            }
            assert!(ep.returns[0] >= 98.0);
        }
    }

    #[test]
    fn uniform_play_vs_rock_is_fair() {
        let stats = engine::evaluate(
            |_| RepeatedRps::new(100, FixedPolicy(RpsAction::Rock)).unwrap(),
            |_| vec![Box::new(StationaryPolicy(ActionDistribution3::uniform())) as PolicyHandle<_, _>],
            2000,
            5,
        )
        .unwrap();
        assert!(stats.covers(0.0), "{stats}");
    }

    #[test]
    fn zero_horizon_rejected() {
        assert!(RepeatedRps::new(0, FixedPolicy(RpsAction::Rock)).is_err());
        let cfg = EvalConfig::new(3, 0);
        assert!(evaluate_vs_uniform_opponents(RpsAgent::Oracle, 0, &cfg).is_err());
        assert!(evaluate_vs_uniform_opponents(RpsAgent::Counter { gamma: 2.0 }, 5, &cfg).is_err());
    }

    proptest! {
        #[test]
        fn reward_matches_enumeration_and_is_antisymmetric(pi in arb_dist(), pi2 in arb_dist()) {
            let v = expected_reward(&pi, &pi2);
            prop_assert!((v - brute_force_reward(&pi, &pi2)).abs() <= 1e-12);
            prop_assert!((v + expected_reward(&pi2, &pi)).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&v));
        }

        #[test]
        fn gradients_lie_in_tangent_plane(pi in arb_dist(), pi2 in arb_dist()) {
            let (g, g2) = policy_gradients(&pi, &pi2);
            prop_assert!(g.iter().sum::<f64>().abs() <= 1e-12);
            prop_assert!(g2.iter().sum::<f64>().abs() <= 1e-12);
        }

        #[test]
        fn best_response_dominates_every_strategy(pi in arb_dist(), pi2 in arb_dist()) {
            let (a, v) = best_response(&pi2);
            prop_assert!(v + 1e-12 >= expected_reward(&pi, &pi2));
            prop_assert!((v - expected_reward(&ActionDistribution3::pure(a), &pi2)).abs() < 1e-15);
        }

        #[test]
        fn uniform_is_unexploitable(pi2 in arb_dist()) {
            prop_assert!(expected_reward(&ActionDistribution3::uniform(), &pi2).abs() <= 1e-12);
        }
    }
}
