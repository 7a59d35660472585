//! Simultaneous-move environments, memory-threading policies and seeded
//! Monte Carlo evaluation.
//!
//! Every episode owns exactly one random stream, seeded from
//! [`derive_seed`]`(master, episode_index)`. Within an episode the stream is
//! consumed in a fixed order: environment reset, then per step each policy in
//! agent order followed by the environment transition. Episodes therefore
//! replay bit-identically regardless of how the evaluator schedules them.

use std::any::Any;
use std::fmt;

use rand::SeedableRng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Random stream owned by a single episode.
pub type EpisodeRng = rand_chacha::ChaCha8Rng;

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step<S> {
    pub state: S,
    pub rewards: Vec<f64>,
    pub done: bool,
}

/// A finite-horizon simultaneous-move environment.
///
/// Rewards are undiscounted; every implementation must set `done` no later
/// than [`Environment::step_limit`] transitions after reset.
pub trait Environment {
    type State: Clone;
    type Action: Copy;
    type Observation;

    fn agent_count(&self) -> usize;

    fn step_limit(&self) -> usize;

    fn reset(&self, rng: &mut EpisodeRng) -> Self::State;

    fn observe(&self, state: &Self::State, agent: usize) -> Self::Observation;

    /// Whether `action` belongs to the action set of `agent`.
    fn is_legal(&self, _agent: usize, _action: &Self::Action) -> bool {
        true
    }

    /// Pure function of `(state, actions, rng draws)`.
    fn step(
        &self,
        state: &Self::State,
        actions: &[Self::Action],
        rng: &mut EpisodeRng,
    ) -> Step<Self::State>;
}

/// A policy that threads an explicit memory value through time.
///
/// Memoryless policies use `Memory = ()`.
pub trait Policy<O, A> {
    type Memory;

    fn init_memory(&self) -> Self::Memory;

    fn act(&self, obs: &O, memory: Self::Memory, rng: &mut EpisodeRng) -> (A, Self::Memory);
}

/// Object-safe view of a [`Policy`] with its memory type erased, so that
/// agents with different memory types can share one episode.
pub trait DynPolicy<O, A> {
    fn init_memory_dyn(&self) -> Box<dyn Any>;

    fn act_dyn(&self, obs: &O, memory: Box<dyn Any>, rng: &mut EpisodeRng) -> (A, Box<dyn Any>);
}

impl<O, A, P> DynPolicy<O, A> for P
where
    P: Policy<O, A>,
    P::Memory: 'static,
{
    fn init_memory_dyn(&self) -> Box<dyn Any> {
        Box::new(self.init_memory())
    }

    fn act_dyn(&self, obs: &O, memory: Box<dyn Any>, rng: &mut EpisodeRng) -> (A, Box<dyn Any>) {
        let memory = *memory
            .downcast::<P::Memory>()
            .expect("policy memory threaded back to a different policy");
        let (action, next) = self.act(obs, memory, rng);
        (action, Box::new(next))
    }
}

pub type PolicyHandle<O, A> = Box<dyn DynPolicy<O, A>>;

/// Memoryless policy backed by a closure over the current observation.
pub struct FnPolicy<F>(pub F);

impl<O, A, F> Policy<O, A> for FnPolicy<F>
where
    F: Fn(&O, &mut EpisodeRng) -> A,
{
    type Memory = ();

    fn init_memory(&self) {}

    fn act(&self, obs: &O, _memory: (), rng: &mut EpisodeRng) -> (A, ()) {
        ((self.0)(obs, rng), ())
    }
}

/// One recorded transition: the state acted upon, the joint action and the
/// rewards it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S, A> {
    pub state: S,
    pub actions: Vec<A>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode<S, A> {
    pub returns: Vec<f64>,
    pub trajectory: Vec<Transition<S, A>>,
}

/// Runs one episode and records its full trajectory.
///
/// The episode ends when the environment reports `done` or after
/// `max_steps` transitions, whichever comes first.
pub fn run_episode<E: Environment>(
    env: &E,
    policies: &[PolicyHandle<E::Observation, E::Action>],
    seed: u64,
    max_steps: usize,
) -> Result<Episode<E::State, E::Action>> {
    let mut trajectory = Vec::new();
    let returns = rollout(env, policies, seed, max_steps, Some(&mut trajectory))?;
    Ok(Episode {
        returns,
        trajectory,
    })
}

/// Per-agent undiscounted returns of one episode, without recording the
/// trajectory.
pub fn episode_returns<E: Environment>(
    env: &E,
    policies: &[PolicyHandle<E::Observation, E::Action>],
    seed: u64,
    max_steps: usize,
) -> Result<Vec<f64>> {
    rollout(env, policies, seed, max_steps, None)
}

fn rollout<E: Environment>(
    env: &E,
    policies: &[PolicyHandle<E::Observation, E::Action>],
    seed: u64,
    max_steps: usize,
    mut record: Option<&mut Vec<Transition<E::State, E::Action>>>,
) -> Result<Vec<f64>> {
    let n = env.agent_count();
    if policies.len() != n {
        return Err(Error::AgentCountMismatch {
            expected: n,
            got: policies.len(),
        });
    }
    if max_steps == 0 {
        return Err(Error::TooSmall {
            what: "max_steps",
            min: 1,
            got: 0,
        });
    }

    let mut rng = EpisodeRng::seed_from_u64(seed);
    let mut state = env.reset(&mut rng);
    let mut memories: Vec<Box<dyn Any>> = policies.iter().map(|p| p.init_memory_dyn()).collect();
    let mut returns = vec![0.0; n];
    let mut actions = Vec::with_capacity(n);

    for step in 0..max_steps {
        actions.clear();
        for (agent, (policy, memory)) in policies.iter().zip(memories.iter_mut()).enumerate() {
            let obs = env.observe(&state, agent);
            let held = std::mem::replace(memory, Box::new(()));
            let (action, next) = policy.act_dyn(&obs, held, &mut rng);
            if !env.is_legal(agent, &action) {
                return Err(Error::InvalidAction { agent, step });
            }
            *memory = next;
            actions.push(action);
        }

        let outcome = env.step(&state, &actions, &mut rng);
        for (total, r) in returns.iter_mut().zip(&outcome.rewards) {
            *total += r;
        }
        if let Some(traj) = record.as_deref_mut() {
            traj.push(Transition {
                state: std::mem::replace(&mut state, outcome.state),
                actions: actions.clone(),
                rewards: outcome.rewards,
            });
        } else {
            state = outcome.state;
        }
        if outcome.done {
            break;
        }
    }
    Ok(returns)
}

/// SplitMix64 finalizer applied to `mix(master) ^ index`.
///
/// The finalizer is a bijection on `u64`, so distinct indices under one
/// master (and distinct masters at one index) never collide. Mixing the
/// master first keeps nearby masters from producing the same seed set.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64_finalize(splitmix64_finalize(master) ^ index)
}

fn splitmix64_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Summary of Monte Carlo episode returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub mean: f64,
    /// Sample standard deviation; zero for a single episode.
    pub std: f64,
    pub n: usize,
    /// Half-width of the normal 95% interval, `1.96 * std / sqrt(n)`.
    pub ci95: f64,
}

impl EpisodeStats {
    /// Aggregates samples in index order, so results do not depend on how
    /// the samples were produced.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::TooSmall {
                what: "n_episodes",
                min: 1,
                got: 0,
            });
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            mean,
            std,
            n,
            ci95: 1.96 * std / (n as f64).sqrt(),
        })
    }

    /// Whether `value` lies inside `mean ± ci95`.
    pub fn covers(&self, value: f64) -> bool {
        (self.mean - value).abs() <= self.ci95
    }

    /// Rescales returns, e.g. to per-step rewards.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mean: self.mean * factor,
            std: self.std * factor.abs(),
            n: self.n,
            ci95: self.ci95 * factor.abs(),
        }
    }
}

impl fmt::Display for EpisodeStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4} (n={})", self.mean, self.ci95, self.n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub n_episodes: usize,
    pub master_seed: u64,
    /// Per-episode truncation; `None` uses the environment's own limit.
    pub max_steps: Option<usize>,
    /// Worker threads; 0 uses the global rayon pool.
    pub workers: usize,
    /// Agent whose return is aggregated.
    pub agent: usize,
}

impl EvalConfig {
    pub fn new(n_episodes: usize, master_seed: u64) -> Self {
        Self {
            n_episodes,
            master_seed,
            max_steps: None,
            workers: 0,
            agent: 0,
        }
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

/// Evaluates agent 0 over `n_episodes` seeded episodes on the global pool.
pub fn evaluate<E, EF, PF>(
    env_factory: EF,
    policy_factory: PF,
    n_episodes: usize,
    master_seed: u64,
) -> Result<EpisodeStats>
where
    E: Environment,
    EF: Fn(u64) -> E + Sync,
    PF: Fn(u64) -> Vec<PolicyHandle<E::Observation, E::Action>> + Sync,
{
    evaluate_with(
        env_factory,
        policy_factory,
        &EvalConfig::new(n_episodes, master_seed),
    )
}

pub fn evaluate_with<E, EF, PF>(
    env_factory: EF,
    policy_factory: PF,
    config: &EvalConfig,
) -> Result<EpisodeStats>
where
    E: Environment,
    EF: Fn(u64) -> E + Sync,
    PF: Fn(u64) -> Vec<PolicyHandle<E::Observation, E::Action>> + Sync,
{
    let returns = collect_returns(env_factory, policy_factory, config)?;
    EpisodeStats::from_samples(&returns)
}

/// Returns of the evaluated agent, one per episode, in episode order.
///
/// Both factories receive the episode seed; any extra per-episode randomness
/// they need should come from [`derive_seed`] applied to it.
pub fn collect_returns<E, EF, PF>(
    env_factory: EF,
    policy_factory: PF,
    config: &EvalConfig,
) -> Result<Vec<f64>>
where
    E: Environment,
    EF: Fn(u64) -> E + Sync,
    PF: Fn(u64) -> Vec<PolicyHandle<E::Observation, E::Action>> + Sync,
{
    if config.n_episodes == 0 {
        return Err(Error::TooSmall {
            what: "n_episodes",
            min: 1,
            got: 0,
        });
    }
    let run_one = |episode: usize| -> Result<f64> {
        let seed = derive_seed(config.master_seed, episode as u64);
        let env = env_factory(seed);
        let policies = policy_factory(seed);
        let limit = config.max_steps.unwrap_or_else(|| env.step_limit());
        episode_returns(&env, &policies, seed, limit)
            .map(|r| r[config.agent])
            .map_err(|e| Error::Episode {
                episode,
                source: Box::new(e),
            })
    };
    let run_all = || -> Result<Vec<f64>> {
        (0..config.n_episodes).into_par_iter().map(run_one).collect()
    };
    if config.workers == 0 {
        run_all()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::InvalidParameter {
                name: "workers",
                reason: e.to_string(),
            })?
            .install(run_all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Counts down from a random start; reward equals the chosen action.
    struct Countdown;

    impl Environment for Countdown {
        type State = u32;
        type Action = u8;
        type Observation = u32;

        fn agent_count(&self) -> usize {
            1
        }
        fn step_limit(&self) -> usize {
            10
        }
        fn reset(&self, rng: &mut EpisodeRng) -> u32 {
            rng.random_range(3..8)
        }
        fn observe(&self, state: &u32, _agent: usize) -> u32 {
            *state
        }
        fn is_legal(&self, _agent: usize, action: &u8) -> bool {
            *action <= 2
        }
        fn step(&self, state: &u32, actions: &[u8], _rng: &mut EpisodeRng) -> Step<u32> {
            Step {
                state: state - 1,
                rewards: vec![actions[0] as f64],
                done: *state == 1,
            }
        }
    }

    fn random_policy() -> PolicyHandle<u32, u8> {
        Box::new(FnPolicy(|_: &u32, rng: &mut EpisodeRng| rng.random_range(0..3u8)))
    }

    #[test]
    fn trajectory_replays_bit_identically() {
        let a = run_episode(&Countdown, &[random_policy()], 42, 100).unwrap();
        let b = run_episode(&Countdown, &[random_policy()], 42, 100).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.returns[0], a.trajectory.iter().map(|t| t.rewards[0]).sum::<f64>());
    }

    #[test]
    fn max_steps_truncates() {
        let ep = run_episode(&Countdown, &[random_policy()], 1, 2).unwrap();
        assert_eq!(ep.trajectory.len(), 2);
    }

    #[test]
    fn illegal_action_reports_agent_and_step() {
        let bad: PolicyHandle<u32, u8> =
            Box::new(FnPolicy(|s: &u32, _: &mut EpisodeRng| if *s < 3 { 9 } else { 0 }));
        let err = run_episode(&Countdown, &[bad], 5, 100).unwrap_err();
        assert!(matches!(err, Error::InvalidAction { agent: 0, .. }));
    }

    #[test]
    fn wrong_policy_count_is_rejected() {
        let err = run_episode(&Countdown, &[], 0, 10).unwrap_err();
        assert_eq!(err, Error::AgentCountMismatch { expected: 1, got: 0 });
        let err = run_episode(&Countdown, &[random_policy()], 0, 0).unwrap_err();
        assert!(matches!(err, Error::TooSmall { .. }));
    }

    #[test]
    fn single_episode_stats() {
        let stats = EpisodeStats::from_samples(&[-3.5]).unwrap();
        assert_eq!(stats.mean, -3.5);
        assert_eq!(stats.std, 0.0);
        assert_eq!(stats.ci95, 0.0);
        assert!(EpisodeStats::from_samples(&[]).is_err());
    }

    #[test]
    fn sample_std_uses_bessel_correction() {
        let stats = EpisodeStats::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((stats.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((stats.ci95 - 1.96 * stats.std / 2.0).abs() < 1e-15);
    }

    #[test]
    fn evaluation_errors_carry_episode_index() {
        let cfg = EvalConfig::new(4, 0);
        let err = evaluate_with(
            |_| Countdown,
            |_| {
                vec![Box::new(FnPolicy(|_: &u32, _: &mut EpisodeRng| 7u8))
                    as PolicyHandle<u32, u8>]
            },
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Episode { episode: 0, .. }));
    }

    #[test]
    fn derive_seed_is_injective_over_a_million_indices() {
        let mut seen: Vec<u64> = (0..1_000_000).map(|i| derive_seed(0, i)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 1_000_000);
    }

    #[test]
    fn nearby_masters_give_disjoint_seed_sets() {
        let a: std::collections::HashSet<u64> = (0..10_000).map(|i| derive_seed(1, i)).collect();
        assert!((0..10_000).all(|i| !a.contains(&derive_seed(2, i))));
    }

    #[test]
    fn derive_seed_depends_on_master_everywhere() {
        for i in 0..1000 {
            assert_eq!(derive_seed(17, i), derive_seed(17, i));
            assert_ne!(derive_seed(17, i), derive_seed(18, i));
        }
    }
}
