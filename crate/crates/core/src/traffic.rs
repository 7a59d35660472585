//! Two-lane traffic gridworld with one scripted leading vehicle.
//!
//! The ego vehicle starts in lane 0 at cell 0 and must reach the last cell.
//! The opponent starts ahead in the same lane and acts according to one of
//! four fixed behaviour types. Moves are simultaneous; a collision (same
//! square afterwards, or a swap of squares) reverts both vehicles, costs the
//! ego the crash penalty and does not end the episode. An opponent driving
//! forward off the last cell leaves the road for good.

use std::fmt;

use rand::Rng;

use crate::engine::{self, Environment, EpisodeRng, EpisodeStats, EvalConfig, Policy, PolicyHandle, Step};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrafficAction {
    Forward,
    LaneChange,
    Stay,
}

impl TrafficAction {
    pub const ALL: [TrafficAction; 3] = [
        TrafficAction::Forward,
        TrafficAction::LaneChange,
        TrafficAction::Stay,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BehaviorType {
    /// Passive-fast.
    PF,
    /// Passive-slow.
    PS,
    /// Aggressive-fast.
    AF,
    /// Aggressive-slow.
    AS,
}

impl BehaviorType {
    pub const ALL: [BehaviorType; 4] = [
        BehaviorType::PF,
        BehaviorType::PS,
        BehaviorType::AF,
        BehaviorType::AS,
    ];

    /// `(forward, lane change, stay)` probabilities.
    pub fn probs(self) -> [f64; 3] {
        match self {
            BehaviorType::PF => [0.9, 0.1, 0.0],
            BehaviorType::PS => [0.2, 0.1, 0.7],
            BehaviorType::AF => [0.3, 0.7, 0.0],
            BehaviorType::AS => [0.2, 0.7, 0.1],
        }
    }

    pub fn is_passive(self) -> bool {
        matches!(self, BehaviorType::PF | BehaviorType::PS)
    }

    pub fn label(self) -> &'static str {
        match self {
            BehaviorType::PF => "PF",
            BehaviorType::PS => "PS",
            BehaviorType::AF => "AF",
            BehaviorType::AS => "AS",
        }
    }
}

/// Draws one opponent action with the behaviour's probabilities. Zero
/// probability actions are never returned.
pub fn behavior_action<R: Rng + ?Sized>(behavior: BehaviorType, rng: &mut R) -> TrafficAction {
    let [forward, lane_change, _] = behavior.probs();
    let u: f64 = rng.random();
    if u < forward {
        TrafficAction::Forward
    } else if u < forward + lane_change {
        TrafficAction::LaneChange
    } else {
        TrafficAction::Stay
    }
}

/// Opponent population for one environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Opponent {
    Fixed(BehaviorType),
    /// A behaviour type drawn uniformly at the start of every episode.
    Mix,
}

impl Opponent {
    pub const COLUMNS: [Opponent; 5] = [
        Opponent::Fixed(BehaviorType::PF),
        Opponent::Fixed(BehaviorType::PS),
        Opponent::Fixed(BehaviorType::AF),
        Opponent::Fixed(BehaviorType::AS),
        Opponent::Mix,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Opponent::Fixed(b) => b.label(),
            Opponent::Mix => "Mix",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Vehicle {
    pub lane: u8,
    pub cell: u8,
}

impl Vehicle {
    fn apply(self, action: TrafficAction) -> Vehicle {
        match action {
            TrafficAction::Forward => Vehicle {
                cell: self.cell + 1,
                ..self
            },
            TrafficAction::LaneChange => Vehicle {
                lane: 1 - self.lane,
                ..self
            },
            TrafficAction::Stay => self,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrafficConfig {
    pub road_length: u8,
    pub time_penalty: f64,
    pub crash_penalty: f64,
    pub initial_gap: u8,
    pub step_limit: usize,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            road_length: 30,
            time_penalty: 1.0,
            crash_penalty: 30.0,
            initial_gap: 10,
            step_limit: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrafficState {
    pub ego: Vehicle,
    /// `None` once the opponent has left the road.
    pub opp: Option<Vehicle>,
    pub behavior: BehaviorType,
    pub step: usize,
    pub crashes: usize,
    /// The opponent's realised action in the previous step.
    pub last_opp_action: Option<TrafficAction>,
}

/// Everything the ego sees: the full configuration and the opponent's last
/// action, but not its behaviour type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrafficView {
    pub ego: Vehicle,
    pub opp: Option<Vehicle>,
    pub last_opp_action: Option<TrafficAction>,
}

impl TrafficView {
    /// Cells the opponent is ahead of the ego in the ego's own lane.
    fn gap_ahead_same_lane(&self) -> Option<u8> {
        self.opp
            .filter(|o| o.lane == self.ego.lane)
            .and_then(|o| self.gap_ahead(o))
    }

    /// Cells the opponent is ahead of the ego in either lane.
    fn gap_ahead_any_lane(&self) -> Option<u8> {
        self.opp.and_then(|o| self.gap_ahead(o))
    }

    fn gap_ahead(&self, o: Vehicle) -> Option<u8> {
        (o.cell > self.ego.cell).then(|| o.cell - self.ego.cell)
    }
}

#[derive(Clone, Debug)]
pub struct TrafficEnv {
    opponent: Option<Opponent>,
    config: TrafficConfig,
}

impl TrafficEnv {
    pub fn new(opponent: Opponent) -> Self {
        Self::with_config(opponent, TrafficConfig::default())
    }

    pub fn with_config(opponent: Opponent, config: TrafficConfig) -> Self {
        Self {
            opponent: Some(opponent),
            config,
        }
    }

    /// The road with no other vehicle.
    pub fn empty_road() -> Self {
        Self {
            opponent: None,
            config: TrafficConfig::default(),
        }
    }

    pub fn config(&self) -> &TrafficConfig {
        &self.config
    }

    fn goal(&self) -> u8 {
        self.config.road_length - 1
    }
}

impl Environment for TrafficEnv {
    type State = TrafficState;
    type Action = TrafficAction;
    type Observation = TrafficView;

    fn agent_count(&self) -> usize {
        1
    }

    fn step_limit(&self) -> usize {
        self.config.step_limit
    }

    fn reset(&self, rng: &mut EpisodeRng) -> TrafficState {
        let behavior = match self.opponent {
            Some(Opponent::Fixed(b)) => b,
            Some(Opponent::Mix) => BehaviorType::ALL[rng.random_range(0..4)],
            None => BehaviorType::PF,
        };
        TrafficState {
            ego: Vehicle { lane: 0, cell: 0 },
            opp: self.opponent.map(|_| Vehicle {
                lane: 0,
                cell: self.config.initial_gap,
            }),
            behavior,
            step: 0,
            crashes: 0,
            last_opp_action: None,
        }
    }

    fn observe(&self, state: &TrafficState, _agent: usize) -> TrafficView {
        TrafficView {
            ego: state.ego,
            opp: state.opp,
            last_opp_action: state.last_opp_action,
        }
    }

    fn step(
        &self,
        state: &TrafficState,
        actions: &[TrafficAction],
        rng: &mut EpisodeRng,
    ) -> Step<TrafficState> {
        let mut next = *state;
        next.step += 1;
        let mut reward = -self.config.time_penalty;

        let ego_to = state.ego.apply(actions[0]);
        match state.opp {
            Some(opp) => {
                let opp_action = behavior_action(state.behavior, rng);
                next.last_opp_action = Some(opp_action);
                let exits = opp_action == TrafficAction::Forward && opp.cell >= self.goal();
                let opp_to = (!exits).then(|| opp.apply(opp_action));
                let collides = opp_to.is_some_and(|o| o == ego_to || (o == state.ego && ego_to == opp));
                if collides {
                    next.crashes += 1;
                    reward -= self.config.crash_penalty;
                } else {
                    next.ego = ego_to;
                    next.opp = opp_to;
                }
            }
            None => {
                next.last_opp_action = None;
                next.ego = ego_to;
            }
        }

        Step {
            done: next.ego.cell >= self.goal() || next.step >= self.config.step_limit,
            state: next,
            rewards: vec![reward],
        }
    }
}

/// Always tries to pass: changes lane when directly blocked.
pub fn greedy_action(view: &TrafficView) -> TrafficAction {
    match view.gap_ahead_same_lane() {
        Some(1) => TrafficAction::LaneChange,
        _ => TrafficAction::Forward,
    }
}

/// Stays behind: waits while the opponent is one or two cells ahead in
/// either lane, never changes lane. The opponent may cut across at any
/// time, so a vehicle in the other lane blocks just as much.
pub fn conservative_action(view: &TrafficView) -> TrafficAction {
    match view.gap_ahead_any_lane() {
        Some(1 | 2) => TrafficAction::Stay,
        _ => TrafficAction::Forward,
    }
}

/// Counts of observed opponent actions within the current episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpponentBelief {
    /// Indexed `(forward, lane change, stay)`.
    pub counts: [u32; 3],
}

impl OpponentBelief {
    pub fn update(mut self, observed: TrafficAction) -> Self {
        self.counts[observed.index()] += 1;
        self
    }

    pub fn observations(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// Multinomial log-likelihood of the counts under `behavior`.
    pub fn log_likelihood(&self, behavior: BehaviorType) -> f64 {
        self.counts
            .iter()
            .zip(behavior.probs())
            .map(|(&n, p)| match (n, p) {
                (0, _) => 0.0,
                (_, p) if p == 0.0 => f64::NEG_INFINITY,
                (n, p) => n as f64 * p.ln(),
            })
            .sum()
    }
}

/// Maximum-likelihood behaviour type; ties resolve to the earliest type in
/// PF, PS, AF, AS order.
pub fn mle_classify(belief: &OpponentBelief) -> BehaviorType {
    let mut best = BehaviorType::PF;
    let mut best_ll = belief.log_likelihood(best);
    for b in &BehaviorType::ALL[1..] {
        let ll = belief.log_likelihood(*b);
        if ll > best_ll {
            best = *b;
            best_ll = ll;
        }
    }
    best
}

/// Observations required before the adaptive policy trusts its estimate.
pub const ADAPTIVE_WARMUP: u32 = 3;

/// Greedy against passive opponents, conservative against aggressive ones
/// and during warm-up.
pub fn adaptive_action(view: &TrafficView, belief: &OpponentBelief) -> TrafficAction {
    if belief.observations() < ADAPTIVE_WARMUP {
        return conservative_action(view);
    }
    if mle_classify(belief).is_passive() {
        greedy_action(view)
    } else {
        conservative_action(view)
    }
}

/// The adaptive ego policy; its memory is the opponent belief.
#[derive(Clone, Copy, Debug, Default)]
pub struct AdaptivePolicy;

impl Policy<TrafficView, TrafficAction> for AdaptivePolicy {
    type Memory = OpponentBelief;

    fn init_memory(&self) -> OpponentBelief {
        OpponentBelief::default()
    }

    fn act(
        &self,
        view: &TrafficView,
        belief: OpponentBelief,
        _rng: &mut EpisodeRng,
    ) -> (TrafficAction, OpponentBelief) {
        let belief = match view.last_opp_action {
            Some(a) => belief.update(a),
            None => belief,
        };
        (adaptive_action(view, &belief), belief)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EgoPolicy {
    Greedy,
    Conservative,
    Adaptive,
}

impl EgoPolicy {
    pub const ROWS: [EgoPolicy; 3] = [EgoPolicy::Greedy, EgoPolicy::Conservative, EgoPolicy::Adaptive];

    pub fn label(self) -> &'static str {
        match self {
            EgoPolicy::Greedy => "greedy",
            EgoPolicy::Conservative => "conservative",
            EgoPolicy::Adaptive => "adaptive",
        }
    }

    pub fn handle(self) -> PolicyHandle<TrafficView, TrafficAction> {
        match self {
            EgoPolicy::Greedy => Box::new(engine::FnPolicy(|v: &TrafficView, _: &mut EpisodeRng| {
                greedy_action(v)
            })),
            EgoPolicy::Conservative => {
                Box::new(engine::FnPolicy(|v: &TrafficView, _: &mut EpisodeRng| {
                    conservative_action(v)
                }))
            }
            EgoPolicy::Adaptive => Box::new(AdaptivePolicy),
        }
    }
}

pub fn evaluate_policy(policy: EgoPolicy, opponent: Opponent, config: &EvalConfig) -> Result<EpisodeStats> {
    engine::evaluate_with(|_| TrafficEnv::new(opponent), |_| vec![policy.handle()], config)
}

/// Mean returns of every ego policy against every opponent column.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardMatrix {
    pub cells: [[EpisodeStats; 5]; 3],
}

impl RewardMatrix {
    pub fn get(&self, policy: EgoPolicy, opponent: Opponent) -> &EpisodeStats {
        let row = EgoPolicy::ROWS.iter().position(|p| *p == policy).unwrap();
        let col = Opponent::COLUMNS.iter().position(|o| *o == opponent).unwrap();
        &self.cells[row][col]
    }

    /// `policy,PF,PS,AF,AS,Mix` with one row per ego policy.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy");
        for col in Opponent::COLUMNS {
            out.push(',');
            out.push_str(col.label());
        }
        out.push('\n');
        for (row, policy) in self.cells.iter().zip(EgoPolicy::ROWS) {
            out.push_str(policy.label());
            for cell in row {
                out.push_str(&format!(",{:.1}", cell.mean));
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for RewardMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<14}", "policy")?;
        for col in Opponent::COLUMNS {
            write!(f, "{:>18}", col.label())?;
        }
        writeln!(f)?;
        for (row, policy) in self.cells.iter().zip(EgoPolicy::ROWS) {
            write!(f, "{:<14}", policy.label())?;
            for cell in row {
                write!(f, "{:>18}", format!("{:.1} ± {:.1}", cell.mean, cell.ci95))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Every cell uses the same master seed, so columns share episode seeds.
pub fn run_reward_matrix(config: &EvalConfig) -> Result<RewardMatrix> {
    let mut cells = [[EpisodeStats {
        mean: 0.0,
        std: 0.0,
        n: 0,
        ci95: 0.0,
    }; 5]; 3];
    for (r, policy) in EgoPolicy::ROWS.into_iter().enumerate() {
        for (c, opponent) in Opponent::COLUMNS.into_iter().enumerate() {
            cells[r][c] = evaluate_policy(policy, opponent, config)?;
        }
    }
    Ok(RewardMatrix { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run_episode;
    use rand::SeedableRng;

    fn view(ego: (u8, u8), opp: Option<(u8, u8)>) -> TrafficView {
        TrafficView {
            ego: Vehicle { lane: ego.0, cell: ego.1 },
            opp: opp.map(|(lane, cell)| Vehicle { lane, cell }),
            last_opp_action: None,
        }
    }

    fn belief(counts: [u32; 3]) -> OpponentBelief {
        OpponentBelief { counts }
    }

    #[test]
    fn behaviour_rows_are_distributions() {
        for b in BehaviorType::ALL {
            assert!((b.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn behaviour_sampling_frequencies() {
        let mut rng = EpisodeRng::seed_from_u64(3);
        let n = 100_000;
        let freq = |b: BehaviorType, a: TrafficAction, rng: &mut EpisodeRng| {
            (0..n).filter(|_| behavior_action(b, rng) == a).count() as f64 / n as f64
        };
        assert!((freq(BehaviorType::PF, TrafficAction::Forward, &mut rng) - 0.9).abs() < 0.005);
        assert_eq!(freq(BehaviorType::AF, TrafficAction::Stay, &mut rng), 0.0);
        assert!((freq(BehaviorType::AS, TrafficAction::LaneChange, &mut rng) - 0.7).abs() < 0.005);
    }

    #[test]
    fn greedy_rule() {
        assert_eq!(greedy_action(&view((0, 3), Some((0, 8)))), TrafficAction::Forward);
        assert_eq!(greedy_action(&view((0, 3), Some((0, 4)))), TrafficAction::LaneChange);
        assert_eq!(greedy_action(&view((1, 3), Some((0, 4)))), TrafficAction::Forward);
        assert_eq!(greedy_action(&view((0, 3), None)), TrafficAction::Forward);
    }

    #[test]
    fn conservative_rule() {
        assert_eq!(conservative_action(&view((0, 3), Some((0, 5)))), TrafficAction::Stay);
        assert_eq!(conservative_action(&view((0, 3), Some((0, 4)))), TrafficAction::Stay);
        assert_eq!(conservative_action(&view((0, 3), Some((1, 5)))), TrafficAction::Stay);
        assert_eq!(conservative_action(&view((0, 3), Some((1, 6)))), TrafficAction::Forward);
        assert_eq!(conservative_action(&view((0, 3), Some((0, 6)))), TrafficAction::Forward);
        assert_eq!(conservative_action(&view((0, 6), Some((0, 3)))), TrafficAction::Forward);
    }

    #[test]
    fn mle_examples() {
        assert_eq!(mle_classify(&belief([9, 1, 0])), BehaviorType::PF);
        assert_eq!(mle_classify(&belief([0, 0, 1])), BehaviorType::PS);
        assert_eq!(mle_classify(&belief([0, 0, 0])), BehaviorType::PF);
        assert_eq!(mle_classify(&belief([1, 5, 0])), BehaviorType::AF);
        assert_eq!(mle_classify(&belief([1, 5, 1])), BehaviorType::AS);
        assert_eq!(belief([2, 0, 1]).log_likelihood(BehaviorType::PF), f64::NEG_INFINITY);
    }

    #[test]
    fn belief_increments_by_one() {
        let b = OpponentBelief::default()
            .update(TrafficAction::Stay)
            .update(TrafficAction::Forward)
            .update(TrafficAction::Stay);
        assert_eq!(b.counts, [1, 0, 2]);
        assert_eq!(b.observations(), 3);
    }

    #[test]
    fn adaptive_branches() {
        let blocked = view((0, 3), Some((0, 4)));
        assert_eq!(adaptive_action(&blocked, &belief([1, 0, 4])), TrafficAction::LaneChange);
        let near = view((0, 3), Some((0, 5)));
        assert_eq!(adaptive_action(&near, &belief([2, 5, 0])), TrafficAction::Stay);
        // Warm-up falls back to the conservative rule.
        assert_eq!(adaptive_action(&blocked, &belief([0, 0, 2])), TrafficAction::Stay);
    }

    #[test]
    fn empty_road_takes_exactly_29_steps() {
        let ep = run_episode(&TrafficEnv::empty_road(), &[EgoPolicy::Greedy.handle()], 0, 500).unwrap();
        assert_eq!(ep.trajectory.len(), 29);
        assert_eq!(ep.returns, vec![-29.0]);
    }

    #[test]
    fn collision_reverts_both_and_continues() {
        let env = TrafficEnv::new(Opponent::Fixed(BehaviorType::PS));
        let start = TrafficState {
            ego: Vehicle { lane: 0, cell: 4 },
            opp: Some(Vehicle { lane: 0, cell: 5 }),
            behavior: BehaviorType::PS,
            step: 7,
            crashes: 0,
            last_opp_action: None,
        };
        // Search for a seed whose opponent draw is Stay: ego Forward then
        // lands on the opponent's square.
        let mut rng = (0..)
            .map(EpisodeRng::seed_from_u64)
            .find(|r| behavior_action(BehaviorType::PS, &mut r.clone()) == TrafficAction::Stay)
            .unwrap();
        let out = env.step(&start, &[TrafficAction::Forward], &mut rng);
        assert_eq!(out.rewards, vec![-31.0]);
        assert!(!out.done);
        assert_eq!(out.state.ego, start.ego);
        assert_eq!(out.state.opp, start.opp);
        assert_eq!(out.state.crashes, 1);
        assert_eq!(out.state.last_opp_action, Some(TrafficAction::Stay));
    }

    #[test]
    fn lane_swap_is_a_collision() {
        let env = TrafficEnv::new(Opponent::Fixed(BehaviorType::AF));
        let start = TrafficState {
            ego: Vehicle { lane: 0, cell: 9 },
            opp: Some(Vehicle { lane: 1, cell: 9 }),
            behavior: BehaviorType::AF,
            step: 0,
            crashes: 0,
            last_opp_action: None,
        };
        let mut rng = (0..)
            .map(EpisodeRng::seed_from_u64)
            .find(|r| behavior_action(BehaviorType::AF, &mut r.clone()) == TrafficAction::LaneChange)
            .unwrap();
        let out = env.step(&start, &[TrafficAction::LaneChange], &mut rng);
        assert_eq!(out.state.crashes, 1);
        assert_eq!(out.state.ego, start.ego);
    }

    #[test]
    fn opponent_exits_off_the_end() {
        let env = TrafficEnv::new(Opponent::Fixed(BehaviorType::PF));
        let start = TrafficState {
            ego: Vehicle { lane: 0, cell: 2 },
            opp: Some(Vehicle { lane: 1, cell: 29 }),
            behavior: BehaviorType::PF,
            step: 0,
            crashes: 0,
            last_opp_action: None,
        };
        let mut rng = (0..)
            .map(EpisodeRng::seed_from_u64)
            .find(|r| behavior_action(BehaviorType::PF, &mut r.clone()) == TrafficAction::Forward)
            .unwrap();
        let out = env.step(&start, &[TrafficAction::Forward], &mut rng);
        assert_eq!(out.state.opp, None);
        let later = env.step(&out.state, &[TrafficAction::Forward], &mut rng);
        assert_eq!(later.state.opp, None);
        assert_eq!(later.state.last_opp_action, None);
    }

    #[test]
    fn reward_decomposes_into_steps_and_crashes() {
        for policy in EgoPolicy::ROWS {
            for opponent in Opponent::COLUMNS {
                let env = TrafficEnv::new(opponent);
                for seed in 0..20 {
                    let ep = run_episode(&env, &[policy.handle()], seed, 500).unwrap();
                    let last = ep.trajectory.last().unwrap();
                    let crashes = last.state.crashes + (last.rewards[0] < -1.0) as usize;
                    assert_eq!(ep.returns[0], -(ep.trajectory.len() as f64) - 30.0 * crashes as f64);
                    for w in ep.trajectory.windows(2) {
                        let (a, b) = (w[0].state, w[1].state);
                        let dl = a.ego.lane.abs_diff(b.ego.lane);
                        let dc = a.ego.cell.abs_diff(b.ego.cell);
                        assert!(dl + dc <= 1);
                        if let (Some(x), Some(y)) = (a.opp, b.opp) {
                            assert!(x.lane.abs_diff(y.lane) + x.cell.abs_diff(y.cell) <= 1);
                        }
                        if a.opp.is_none() {
                            assert!(b.opp.is_none());
                            assert_eq!(w[0].rewards[0], -1.0);
                        }
                        assert_eq!(b.crashes - a.crashes, (w[0].rewards[0] < -1.0) as usize);
                    }
                }
            }
        }
    }
}
