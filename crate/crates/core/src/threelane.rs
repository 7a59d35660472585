//! Three-lane target pursuit without an explicit channel.
//!
//! Agent `i` drives lane `i` (0 = top, 1 = center, 2 = bottom) from cell 0
//! towards cell `L`; a target sits at cell `L` of one lane. Only the center
//! agent sees which lane. All agents see every position and every previous
//! action, so the center agent can signal the target lane with its first two
//! moves and the outer agents can decode the signal if they remember it.
//!
//! The team shares one reward: `target_reward` when the agent in the target
//! lane reaches cell `L`, minus `fuel_cost` per Left/Right taken by anyone
//! (also when clamped at a road end) and `time_cost` per step.

use rand::Rng;

use crate::engine::{run_episode, Environment, EpisodeRng, Policy, PolicyHandle, Step};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LaneMove {
    Left,
    Right,
    Stay,
}

impl LaneMove {
    pub const ALL: [LaneMove; 3] = [LaneMove::Left, LaneMove::Right, LaneMove::Stay];

    fn burns_fuel(self) -> bool {
        self != LaneMove::Stay
    }

    fn apply(self, pos: u8, length: u8) -> u8 {
        match self {
            LaneMove::Left => pos.saturating_sub(1),
            LaneMove::Right => (pos + 1).min(length),
            LaneMove::Stay => pos,
        }
    }
}

pub const TOP: u8 = 0;
pub const CENTER: u8 = 1;
pub const BOTTOM: u8 = 2;

pub fn lane_name(lane: u8) -> &'static str {
    match lane {
        TOP => "top",
        CENTER => "center",
        _ => "bottom",
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostConfig {
    pub fuel_cost: f64,
    pub time_cost: f64,
    pub target_reward: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            fuel_cost: 1.0,
            time_cost: 0.1,
            target_reward: 10.0,
        }
    }
}

impl CostConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fuel_cost", self.fuel_cost),
            ("time_cost", self.time_cost),
            ("target_reward", self.target_reward),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be a non-negative number, got {v}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LaneWorldState {
    pub positions: [u8; 3],
    pub target_lane: u8,
    pub step: usize,
    pub last_actions: Option<[LaneMove; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LaneObservation {
    pub positions: [u8; 3],
    pub last_actions: Option<[LaneMove; 3]>,
    /// Present for the center agent only.
    pub target_lane: Option<u8>,
}

#[derive(Clone, Debug)]
pub struct ThreeLaneEnv {
    length: u8,
    costs: CostConfig,
    target: Option<u8>,
}

impl ThreeLaneEnv {
    /// Target lane drawn uniformly at reset.
    pub fn new(length: u8, costs: CostConfig) -> Result<Self> {
        if length < 3 {
            return Err(Error::TooSmall {
                what: "lane length",
                min: 3,
                got: length as usize,
            });
        }
        costs.validate()?;
        Ok(Self {
            length,
            costs,
            target: None,
        })
    }

    /// Same environment with the target pinned to `lane`.
    pub fn with_target(mut self, lane: u8) -> Self {
        self.target = Some(lane.min(BOTTOM));
        self
    }

    pub fn length(&self) -> u8 {
        self.length
    }

    pub fn costs(&self) -> &CostConfig {
        &self.costs
    }
}

impl Environment for ThreeLaneEnv {
    type State = LaneWorldState;
    type Action = LaneMove;
    type Observation = LaneObservation;

    fn agent_count(&self) -> usize {
        3
    }

    fn step_limit(&self) -> usize {
        4 * self.length as usize
    }

    fn reset(&self, rng: &mut EpisodeRng) -> LaneWorldState {
        let target_lane = self.target.unwrap_or_else(|| rng.random_range(0..3));
        LaneWorldState {
            positions: [0; 3],
            target_lane,
            step: 0,
            last_actions: None,
        }
    }

    fn observe(&self, state: &LaneWorldState, agent: usize) -> LaneObservation {
        LaneObservation {
            positions: state.positions,
            last_actions: state.last_actions,
            target_lane: (agent == CENTER as usize).then_some(state.target_lane),
        }
    }

    fn step(
        &self,
        state: &LaneWorldState,
        actions: &[LaneMove],
        _rng: &mut EpisodeRng,
    ) -> Step<LaneWorldState> {
        let joint = [actions[0], actions[1], actions[2]];
        let (next, reward, done) = transition(self.length, &self.costs, state, joint);
        Step {
            state: next,
            rewards: vec![reward; 3],
            done,
        }
    }
}

fn transition(
    length: u8,
    costs: &CostConfig,
    state: &LaneWorldState,
    joint: [LaneMove; 3],
) -> (LaneWorldState, f64, bool) {
    let mut next = *state;
    next.step += 1;
    next.last_actions = Some(joint);
    let mut reward = -costs.time_cost;
    for (pos, mv) in next.positions.iter_mut().zip(joint) {
        if mv.burns_fuel() {
            reward -= costs.fuel_cost;
        }
        *pos = mv.apply(*pos, length);
    }
    let arrived = next.positions[next.target_lane as usize] == length;
    if arrived {
        reward += costs.target_reward;
    }
    (next, reward, arrived || next.step >= 4 * length as usize)
}

/// The center agent's first two moves for each target lane.
pub fn signal_for(lane: u8) -> [LaneMove; 2] {
    match lane {
        TOP => [LaneMove::Right, LaneMove::Left],
        CENTER => [LaneMove::Right, LaneMove::Right],
        _ => [LaneMove::Right, LaneMove::Stay],
    }
}

pub fn decode_signal(signal: [LaneMove; 2]) -> Option<u8> {
    match signal {
        [LaneMove::Right, LaneMove::Left] => Some(TOP),
        [LaneMove::Right, LaneMove::Right] => Some(CENTER),
        [LaneMove::Right, LaneMove::Stay] => Some(BOTTOM),
        _ => None,
    }
}

/// Center agent: emits the signal, then drives on only if the target is
/// its own lane. Memory is the number of steps taken.
#[derive(Clone, Copy, Debug, Default)]
pub struct SignalerPolicy;

impl Policy<LaneObservation, LaneMove> for SignalerPolicy {
    type Memory = usize;

    fn init_memory(&self) -> usize {
        0
    }

    fn act(&self, obs: &LaneObservation, steps: usize, _rng: &mut EpisodeRng) -> (LaneMove, usize) {
        let lane = obs.target_lane.unwrap_or(CENTER);
        let mv = match steps {
            0 | 1 => signal_for(lane)[steps],
            _ if lane == CENTER => LaneMove::Right,
            _ => LaneMove::Stay,
        };
        (mv, steps + 1)
    }
}

/// What an outer agent remembers of the center agent's behaviour.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ListenerMemory {
    pub seen: [Option<LaneMove>; 2],
}

impl ListenerMemory {
    pub fn decoded(&self) -> Option<u8> {
        match self.seen {
            [Some(a), Some(b)] => decode_signal([a, b]),
            _ => None,
        }
    }
}

/// Outer agent that waits for the two-move signal, then drives to the end
/// of its lane if the signal names it and stays put otherwise.
#[derive(Clone, Copy, Debug)]
pub struct ListenerPolicy {
    pub lane: u8,
}

impl Policy<LaneObservation, LaneMove> for ListenerPolicy {
    type Memory = ListenerMemory;

    fn init_memory(&self) -> ListenerMemory {
        ListenerMemory::default()
    }

    fn act(
        &self,
        obs: &LaneObservation,
        mut memory: ListenerMemory,
        _rng: &mut EpisodeRng,
    ) -> (LaneMove, ListenerMemory) {
        if let Some(actions) = obs.last_actions {
            if let Some(slot) = memory.seen.iter_mut().find(|s| s.is_none()) {
                *slot = Some(actions[CENTER as usize]);
            }
        }
        let mv = match memory.decoded() {
            Some(lane) if lane == self.lane => LaneMove::Right,
            _ => LaneMove::Stay,
        };
        (mv, memory)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PolicySet {
    /// Everyone drives right from the first step.
    Naive,
    /// Signaller in the center, memoryful listeners outside.
    BehaviorComm,
}

impl PolicySet {
    pub fn label(self) -> &'static str {
        match self {
            PolicySet::Naive => "naive",
            PolicySet::BehaviorComm => "behavior-comm",
        }
    }

    pub fn handles(self) -> Vec<PolicyHandle<LaneObservation, LaneMove>> {
        match self {
            PolicySet::Naive => (0..3)
                .map(|_| {
                    Box::new(crate::engine::FnPolicy(|_: &LaneObservation, _: &mut EpisodeRng| {
                        LaneMove::Right
                    })) as PolicyHandle<_, _>
                })
                .collect(),
            PolicySet::BehaviorComm => vec![
                Box::new(ListenerPolicy { lane: TOP }),
                Box::new(SignalerPolicy),
                Box::new(ListenerPolicy { lane: BOTTOM }),
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComparisonRow {
    pub target_lane: u8,
    pub policy: PolicySet,
    pub steps: usize,
    pub fuel_moves: usize,
    pub team_return: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    /// Mean team return over the three equally likely target lanes.
    pub fn expected(&self, policy: PolicySet) -> f64 {
        let rows: Vec<_> = self.rows.iter().filter(|r| r.policy == policy).collect();
        rows.iter().map(|r| r.team_return).sum::<f64>() / rows.len() as f64
    }

    pub fn row(&self, target_lane: u8, policy: PolicySet) -> &ComparisonRow {
        self.rows
            .iter()
            .find(|r| r.target_lane == target_lane && r.policy == policy)
            .expect("every lane/policy pair is enumerated")
    }

    /// `target_lane,policy,steps,fuel_moves,return`, one row per lane and
    /// policy followed by an `expected` row per policy.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target_lane,policy,steps,fuel_moves,return\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6}\n",
                lane_name(r.target_lane),
                r.policy.label(),
                r.steps,
                r.fuel_moves,
                r.team_return
            ));
        }
        for policy in [PolicySet::Naive, PolicySet::BehaviorComm] {
            let rows: Vec<_> = self.rows.iter().filter(|r| r.policy == policy).collect();
            let k = rows.len() as f64;
            out.push_str(&format!(
                "expected,{},{:.6},{:.6},{:.6}\n",
                policy.label(),
                rows.iter().map(|r| r.steps as f64).sum::<f64>() / k,
                rows.iter().map(|r| r.fuel_moves as f64).sum::<f64>() / k,
                self.expected(policy)
            ));
        }
        out
    }
}

/// Exact comparison: both policy sets are deterministic, so one rollout per
/// target lane is the whole distribution.
pub fn compare_policies(length: u8, costs: CostConfig) -> Result<Comparison> {
    let env = ThreeLaneEnv::new(length, costs)?;
    let mut rows = Vec::new();
    for policy in [PolicySet::Naive, PolicySet::BehaviorComm] {
        for lane in [TOP, CENTER, BOTTOM] {
            let env = env.clone().with_target(lane);
            let ep = run_episode(&env, &policy.handles(), 0, env.step_limit())?;
            let fuel_moves = ep
                .trajectory
                .iter()
                .flat_map(|t| t.actions.iter())
                .filter(|a| a.burns_fuel())
                .count();
            rows.push(ComparisonRow {
                target_lane: lane,
                policy,
                steps: ep.trajectory.len(),
                fuel_moves,
                team_return: ep.returns[0],
            });
        }
    }
    Ok(Comparison { rows })
}

/// Observation available to a memoryless listener: the center agent's most
/// recent move (`None` before any move).
fn obs_index(last_center: Option<LaneMove>) -> usize {
    match last_center {
        None => 0,
        Some(LaneMove::Left) => 1,
        Some(LaneMove::Right) => 2,
        Some(LaneMove::Stay) => 3,
    }
}

/// Memoryless listener: `(own position, center's last move) -> move`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ListenerTable {
    length: u8,
    entries: Vec<Option<LaneMove>>,
}

impl ListenerTable {
    pub fn new(length: u8) -> Self {
        Self {
            length,
            entries: vec![None; (length as usize + 1) * 4],
        }
    }

    fn key(pos: u8, last_center: Option<LaneMove>) -> usize {
        pos as usize * 4 + obs_index(last_center)
    }

    pub fn get(&self, pos: u8, last_center: Option<LaneMove>) -> Option<LaneMove> {
        self.entries[Self::key(pos, last_center)]
    }

    pub fn set(&mut self, pos: u8, last_center: Option<LaneMove>, mv: LaneMove) {
        self.entries[Self::key(pos, last_center)] = Some(mv);
    }

    /// Defined entries as `(position, center move, move)`.
    pub fn defined(&self) -> Vec<(u8, Option<LaneMove>, LaneMove)> {
        let obs = [None, Some(LaneMove::Left), Some(LaneMove::Right), Some(LaneMove::Stay)];
        (0..=self.length)
            .flat_map(|p| obs.into_iter().map(move |o| (p, o)))
            .filter_map(|(p, o)| self.get(p, o).map(|m| (p, o, m)))
            .collect()
    }
}

/// Result of the exhaustive search over memoryless listener pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct MemorylessSearch {
    /// Expected team return of the best pair (uniform over target lanes).
    pub value: f64,
    /// Tables for the top and bottom listeners; entries never consulted on
    /// any target lane are left undefined.
    pub tables: [ListenerTable; 2],
    pub nodes: u64,
}

#[derive(Clone, Copy, Debug)]
struct Scenario {
    state: LaneWorldState,
    done: bool,
    total: f64,
}

struct ListenerSearch<'a> {
    length: u8,
    costs: &'a CostConfig,
    tables: [ListenerTable; 2],
    best: f64,
    best_tables: Option<[ListenerTable; 2]>,
    nodes: u64,
}

impl ListenerSearch<'_> {
    fn scripted_center(target: u8, step: usize) -> LaneMove {
        match step {
            0 | 1 => signal_for(target)[step],
            _ if target == CENTER => LaneMove::Right,
            _ => LaneMove::Stay,
        }
    }

    /// Upper bound on what an unfinished scenario can still add.
    fn optimistic(&self, sc: &Scenario) -> f64 {
        if sc.done {
            return 0.0;
        }
        let c = self.costs;
        let remaining = (self.length - sc.state.positions[sc.state.target_lane as usize]) as f64;
        let finish = c.target_reward - remaining * (c.fuel_cost + c.time_cost);
        let cap = 4 * self.length as usize;
        let timeout = -((cap - sc.state.step) as f64) * c.time_cost;
        finish.max(timeout)
    }

    fn search(&mut self, scenarios: [Scenario; 3]) {
        self.nodes += 1;
        let bound: f64 = scenarios.iter().map(|s| s.total + self.optimistic(s)).sum();
        if bound <= self.best + 1e-9 {
            return;
        }
        if scenarios.iter().all(|s| s.done) {
            self.best = scenarios.iter().map(|s| s.total).sum();
            self.best_tables = Some(self.tables.clone());
            return;
        }

        // First undefined entry any active scenario needs this step.
        for sc in scenarios.iter().filter(|s| !s.done) {
            let last_center = sc.state.last_actions.map(|a| a[CENTER as usize]);
            for (slot, lane) in [TOP, BOTTOM].into_iter().enumerate() {
                let pos = sc.state.positions[lane as usize];
                if self.tables[slot].get(pos, last_center).is_none() {
                    for mv in [LaneMove::Stay, LaneMove::Right, LaneMove::Left] {
                        self.tables[slot].set(pos, last_center, mv);
                        self.search(scenarios);
                    }
                    self.tables[slot].entries[ListenerTable::key(pos, last_center)] = None;
                    return;
                }
            }
        }

        let mut next = scenarios;
        for sc in next.iter_mut().filter(|s| !s.done) {
            let last_center = sc.state.last_actions.map(|a| a[CENTER as usize]);
            let joint = [
                self.tables[0].get(sc.state.positions[0], last_center).unwrap(),
                Self::scripted_center(sc.state.target_lane, sc.state.step),
                self.tables[1].get(sc.state.positions[2], last_center).unwrap(),
            ];
            let (state, reward, done) = transition(self.length, self.costs, &sc.state, joint);
            *sc = Scenario {
                state,
                done,
                total: sc.total + reward,
            };
        }
        self.search(next);
    }
}

/// Best expected team return when the outer agents are memoryless tables
/// over `(own position, center's last move)` and the center agent signals
/// as usual. Exact: branch and bound over lazily instantiated table entries,
/// simulating all three target lanes in lockstep.
pub fn best_memoryless_listeners(length: u8, costs: CostConfig) -> Result<MemorylessSearch> {
    ThreeLaneEnv::new(length, costs)?;
    let mut search = ListenerSearch {
        length,
        costs: &costs,
        tables: [ListenerTable::new(length), ListenerTable::new(length)],
        best: f64::NEG_INFINITY,
        best_tables: None,
        nodes: 0,
    };
    let start = |lane| Scenario {
        state: LaneWorldState {
            positions: [0; 3],
            target_lane: lane,
            step: 0,
            last_actions: None,
        },
        done: false,
        total: 0.0,
    };
    search.search([start(TOP), start(CENTER), start(BOTTOM)]);
    Ok(MemorylessSearch {
        value: search.best / 3.0,
        tables: search.best_tables.expect("at least one complete policy exists"),
        nodes: search.nodes,
    })
}
