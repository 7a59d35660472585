//! One-dimensional speaker/mover game.
//!
//! A scripted speaker knows which of four targets (cells 11 to 14) is live
//! and sends two tokens from {A, B}, then only Null. The mover starts at cell
//! 0, moves right by 0 to 5 cells per step, pays 1 per step and earns 10 on
//! the correct target. Any target ends the episode.
//!
//! A memoryless mover sees only `(position, current token)`, yet it can still
//! play optimally by writing what it heard into where it stands. Noisy moves
//! corrupt that record, and the search and DP routines here measure how much
//! that costs.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;

use crate::engine::{Environment, EpisodeRng, Policy, Step};
use crate::error::{Error, Result};

pub const TARGETS: [u8; 4] = [11, 12, 13, 14];
pub const MAX_MOVE: u8 = 5;
pub const MAX_POSITION: u8 = 14;
/// Highest non-terminal cell, and so the last row of a policy table.
pub const LAST_DECISION_CELL: u8 = 10;
pub const STEP_LIMIT: usize = 20;
pub const STEP_COST: f64 = 1.0;
pub const TARGET_REWARD: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Token {
    A,
    B,
    Null,
}

impl Token {
    pub const ALL: [Token; 3] = [Token::A, Token::B, Token::Null];

    pub fn as_char(self) -> char {
        match self {
            Token::A => 'A',
            Token::B => 'B',
            Token::Null => 'N',
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Token> {
        match s {
            "A" => Some(Token::A),
            "B" => Some(Token::B),
            "N" | "Null" => Some(Token::Null),
            _ => None,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

fn target_index(target: u8) -> Result<usize> {
    TARGETS
        .iter()
        .position(|&t| t == target)
        .ok_or(Error::UnknownTarget(target))
}

/// Two-token message per target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Protocol {
    messages: [[Token; 2]; 4],
}

impl Protocol {
    /// Messages listed for targets 11, 12, 13, 14 in order. Tokens must be A
    /// or B and the four messages pairwise distinct.
    pub fn new(messages: [[Token; 2]; 4]) -> Result<Self> {
        if messages.iter().flatten().any(|t| *t == Token::Null) {
            return Err(Error::InvalidParameter {
                name: "protocol",
                reason: "messages use only A and B".into(),
            });
        }
        for i in 0..4 {
            for j in i + 1..4 {
                if messages[i] == messages[j] {
                    return Err(Error::InvalidParameter {
                        name: "protocol",
                        reason: format!("targets {} and {} share a message", TARGETS[i], TARGETS[j]),
                    });
                }
            }
        }
        Ok(Self { messages })
    }

    /// 11 → AA, 12 → AB, 13 → BA, 14 → BB.
    pub fn standard() -> Self {
        use Token::{A, B};
        Self {
            messages: [[A, A], [A, B], [B, A], [B, B]],
        }
    }

    /// 11 → BB, 12 → BA, 13 → AB, 14 → AA.
    pub fn permuted() -> Self {
        use Token::{A, B};
        Self {
            messages: [[B, B], [B, A], [A, B], [A, A]],
        }
    }

    pub fn message(&self, target: u8) -> Result<[Token; 2]> {
        Ok(self.messages[target_index(target)?])
    }

    /// Token heard at 0-based step `step`.
    pub fn token(&self, target: u8, step: usize) -> Result<Token> {
        let msg = self.message(target)?;
        Ok(msg.get(step).copied().unwrap_or(Token::Null))
    }

    fn token_at(&self, target_idx: usize, step: usize) -> Token {
        self.messages[target_idx].get(step).copied().unwrap_or(Token::Null)
    }
}

impl Default for Protocol {
    fn default() -> Self {
        Self::standard()
    }
}

/// The first `len` tokens the speaker emits for `target`.
pub fn speaker_protocol(protocol: &Protocol, target: u8, len: usize) -> Result<Vec<Token>> {
    (0..len).map(|t| protocol.token(target, t)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpeakerMoverState {
    pub mover_pos: u8,
    pub target: u8,
    pub step: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MoverObservation {
    pub position: u8,
    pub token: Token,
}

fn check_noise(noise_eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&noise_eps) {
        return Err(Error::InvalidParameter {
            name: "noise_eps",
            reason: format!("must lie in [0, 1), got {noise_eps}"),
        });
    }
    Ok(())
}

/// Displacement noise: with probability `eps` the realised move is off by
/// one cell either way.
fn displacement_outcomes(eps: f64) -> impl Iterator<Item = (i16, f64)> {
    [(0i16, 1.0 - eps), (-1, eps / 2.0), (1, eps / 2.0)]
        .into_iter()
        .filter(|(_, p)| *p > 0.0)
}

fn landing(pos: u8, mv: u8, delta: i16) -> u8 {
    (pos as i16 + mv as i16 + delta).clamp(0, MAX_POSITION as i16) as u8
}

fn is_terminal(pos: u8) -> bool {
    pos >= TARGETS[0]
}

#[derive(Clone, Debug)]
pub struct SpeakerMoverEnv {
    noise_eps: f64,
    protocol: Protocol,
    target: Option<u8>,
}

impl SpeakerMoverEnv {
    /// Target drawn uniformly at reset.
    pub fn new(noise_eps: f64, protocol: Protocol) -> Result<Self> {
        check_noise(noise_eps)?;
        Ok(Self {
            noise_eps,
            protocol,
            target: None,
        })
    }

    pub fn with_target(mut self, target: u8) -> Result<Self> {
        target_index(target)?;
        self.target = Some(target);
        Ok(self)
    }
}

impl Environment for SpeakerMoverEnv {
    type State = SpeakerMoverState;
    type Action = u8;
    type Observation = MoverObservation;

    fn agent_count(&self) -> usize {
        1
    }

    fn step_limit(&self) -> usize {
        STEP_LIMIT
    }

    fn reset(&self, rng: &mut EpisodeRng) -> SpeakerMoverState {
        let target = self
            .target
            .unwrap_or_else(|| TARGETS[rng.random_range(0..TARGETS.len())]);
        SpeakerMoverState {
            mover_pos: 0,
            target,
            step: 0,
        }
    }

    fn observe(&self, state: &SpeakerMoverState, _agent: usize) -> MoverObservation {
        MoverObservation {
            position: state.mover_pos,
            token: self
                .protocol
                .token(state.target, state.step)
                .expect("state targets are valid"),
        }
    }

    fn is_legal(&self, _agent: usize, action: &u8) -> bool {
        *action <= MAX_MOVE
    }

    fn step(
        &self,
        state: &SpeakerMoverState,
        actions: &[u8],
        rng: &mut EpisodeRng,
    ) -> Step<SpeakerMoverState> {
        let delta = if self.noise_eps > 0.0 && rng.random::<f64>() < self.noise_eps {
            if rng.random::<bool>() {
                1
            } else {
                -1
            }
        } else {
            0
        };
        let pos = landing(state.mover_pos, actions[0], delta);
        let next = SpeakerMoverState {
            mover_pos: pos,
            target: state.target,
            step: state.step + 1,
        };
        let mut reward = -STEP_COST;
        if pos == state.target {
            reward += TARGET_REWARD;
        }
        Step {
            state: next,
            rewards: vec![reward],
            done: is_terminal(pos) || next.step >= STEP_LIMIT,
        }
    }
}

const TABLE_ROWS: usize = LAST_DECISION_CELL as usize + 1;

/// Memoryless mover: `(position, token) → move`. Entries may be left
/// undefined when no trajectory consults them.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MoverPolicyTable {
    entries: [[Option<u8>; 3]; TABLE_ROWS],
}

impl Default for MoverPolicyTable {
    fn default() -> Self {
        Self {
            entries: [[None; 3]; TABLE_ROWS],
        }
    }
}

impl MoverPolicyTable {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Every entry set to `mv`.
    pub fn constant(mv: u8) -> Result<Self> {
        check_move(mv)?;
        Ok(Self {
            entries: [[Some(mv); 3]; TABLE_ROWS],
        })
    }

    /// The hand-built bookkeeping policy: A/B at cell 0 lead to 4/5, the
    /// second token adds 3/4 from cell 4 or 4/5 from cell 5, and cells 7 to
    /// 10 all step 4 onto their own target.
    pub fn reference() -> Self {
        use Token::*;
        let mut t = Self::empty();
        for (pos, tok, mv) in [
            (0, A, 4),
            (0, B, 5),
            (4, A, 3),
            (4, B, 4),
            (5, A, 4),
            (5, B, 5),
            (7, Null, 4),
            (8, Null, 4),
            (9, Null, 4),
            (10, Null, 4),
        ] {
            t.entries[pos][tok.index()] = Some(mv);
        }
        t
    }

    pub fn get(&self, position: u8, token: Token) -> Option<u8> {
        self.entries
            .get(position as usize)
            .and_then(|row| row[token.index()])
    }

    pub fn set(&mut self, position: u8, token: Token, mv: u8) -> Result<()> {
        check_move(mv)?;
        if position > LAST_DECISION_CELL {
            return Err(Error::InvalidParameter {
                name: "position",
                reason: format!("tables cover cells 0..={LAST_DECISION_CELL}, got {position}"),
            });
        }
        self.entries[position as usize][token.index()] = Some(mv);
        Ok(())
    }

    pub fn lookup(&self, position: u8, token: Token) -> Result<u8> {
        self.get(position, token).ok_or(Error::MissingTableEntry {
            position,
            token: token.as_char(),
        })
    }

    pub fn defined_len(&self) -> usize {
        self.entries.iter().flatten().filter(|e| e.is_some()).count()
    }

    /// Fills undefined entries with a move towards the nearest target.
    pub fn completed(&self) -> Self {
        let mut t = self.clone();
        for (pos, row) in t.entries.iter_mut().enumerate() {
            for e in row.iter_mut().filter(|e| e.is_none()) {
                *e = Some(fallback_move(pos as u8));
            }
        }
        t
    }

    /// One `position token move` line per defined entry.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (pos, row) in self.entries.iter().enumerate() {
            for tok in Token::ALL {
                if let Some(mv) = row[tok.index()] {
                    out.push_str(&format!("{pos} {tok} {mv}\n"));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut t = Self::empty();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::InvalidParameter {
                name: "policy table",
                reason: format!("line {}: expected `position token move`, got `{line}`", n + 1),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [pos, tok, mv] = fields[..] else {
                return Err(bad());
            };
            let pos: u8 = pos.parse().map_err(|_| bad())?;
            let tok = Token::parse(tok).ok_or_else(bad)?;
            let mv: u8 = mv.parse().map_err(|_| bad())?;
            t.set(pos, tok, mv)?;
        }
        Ok(t)
    }

    /// Cell reached after two noiseless steps, per target (in `TARGETS`
    /// order). `None` if the walk ends or hits an undefined entry first.
    pub fn step_two_positions(&self, protocol: &Protocol) -> [Option<u8>; 4] {
        let mut out = [None; 4];
        for (g, slot) in out.iter_mut().enumerate() {
            let mut pos = 0u8;
            let mut ok = true;
            for step in 0..2 {
                match self.get(pos, protocol.token_at(g, step)) {
                    Some(mv) if !is_terminal(pos) => pos = landing(pos, mv, 0),
                    _ => ok = false,
                }
            }
            if ok && !is_terminal(pos) {
                *slot = Some(pos);
            }
        }
        out
    }
}

fn check_move(mv: u8) -> Result<()> {
    if mv > MAX_MOVE {
        return Err(Error::InvalidParameter {
            name: "move",
            reason: format!("at most {MAX_MOVE}, got {mv}"),
        });
    }
    Ok(())
}

/// Default for entries a search never had to decide: head for cell 11.
pub fn fallback_move(position: u8) -> u8 {
    (TARGETS[0].saturating_sub(position)).min(MAX_MOVE)
}

impl Policy<MoverObservation, u8> for MoverPolicyTable {
    type Memory = ();

    fn init_memory(&self) {}

    /// Undefined entries yield an out-of-range move, which the engine
    /// reports as an illegal action.
    fn act(&self, obs: &MoverObservation, _memory: (), _rng: &mut EpisodeRng) -> (u8, ()) {
        (self.get(obs.position, obs.token).unwrap_or(u8::MAX), ())
    }
}

/// Exact expected return of a memoryless table, uniform over targets.
/// Fails if any trajectory with positive probability needs an undefined
/// entry.
pub fn evaluate_table(
    table: &MoverPolicyTable,
    protocol: &Protocol,
    noise_eps: f64,
) -> Result<f64> {
    check_noise(noise_eps)?;
    let mut memo = vec![f64::NAN; TABLE_ROWS * STEP_LIMIT * 4];
    let mut total = 0.0;
    for g in 0..4 {
        total += table_value(table, protocol, noise_eps, 0, 0, g, &mut memo)?;
    }
    Ok(total / 4.0)
}

fn table_value(
    table: &MoverPolicyTable,
    protocol: &Protocol,
    eps: f64,
    pos: u8,
    step: usize,
    g: usize,
    memo: &mut [f64],
) -> Result<f64> {
    let key = (pos as usize * STEP_LIMIT + step) * 4 + g;
    if !memo[key].is_nan() {
        return Ok(memo[key]);
    }
    let mv = table.lookup(pos, protocol.token_at(g, step))?;
    let mut v = 0.0;
    for (delta, p) in displacement_outcomes(eps) {
        let next = landing(pos, mv, delta);
        let cont = if is_terminal(next) {
            if next == TARGETS[g] {
                TARGET_REWARD
            } else {
                0.0
            }
        } else if step + 1 >= STEP_LIMIT {
            0.0
        } else {
            table_value(table, protocol, eps, next, step + 1, g, memo)?
        };
        v += p * (cont - STEP_COST);
    }
    memo[key] = v;
    Ok(v)
}

/// Set of targets (bitmask over `TARGETS`) consistent with the tokens heard
/// so far.
type Belief = u8;

fn belief_len(b: Belief) -> f64 {
    b.count_ones() as f64
}

fn members(b: Belief) -> impl Iterator<Item = usize> {
    (0..4).filter(move |g| b & (1 << g) != 0)
}

/// Targets in `b` that emit the same token at `step` as target `g`.
fn refine(protocol: &Protocol, b: Belief, step: usize, g: usize) -> Belief {
    let tok = protocol.token_at(g, step);
    members(b)
        .filter(|&h| protocol.token_at(h, step) == tok)
        .fold(0, |acc, h| acc | (1 << h))
}

fn initial_beliefs(protocol: &Protocol) -> Vec<Belief> {
    let mut out: Vec<Belief> = Vec::new();
    for g in 0..4 {
        let b = refine(protocol, 0b1111, 0, g);
        if !out.contains(&b) {
            out.push(b);
        }
    }
    out
}

/// Belief-state DP. Entries fixed in `table` bind the mover; everywhere
/// else it picks the best move for its full history. With an empty table
/// this is the optimal memoryful mover, and with a table that binds every
/// reached state it is that table's value.
struct BeliefDp<'a> {
    eps: f64,
    table: &'a MoverPolicyTable,
    initial: Vec<Belief>,
    /// `refined[s][b][g]` and `tokens[s][b]` for step `s` (capped at 2, after
    /// which every token is Null).
    refined: [[[Belief; 4]; 16]; 3],
    tokens: [[Token; 16]; 3],
    value: Vec<f64>,
}

impl<'a> BeliefDp<'a> {
    fn new(protocol: &Protocol, eps: f64, table: &'a MoverPolicyTable) -> Self {
        let n = TABLE_ROWS * STEP_LIMIT * 16;
        let mut refined = [[[0; 4]; 16]; 3];
        let mut tokens = [[Token::Null; 16]; 3];
        for s in 0..3 {
            for b in 1..16u8 {
                tokens[s][b as usize] = protocol.token_at(members(b).next().unwrap(), s);
                for g in members(b) {
                    refined[s][b as usize][g] = refine(protocol, b, s, g);
                }
            }
        }
        Self {
            eps,
            table,
            initial: initial_beliefs(protocol),
            refined,
            tokens,
            value: vec![f64::NAN; n],
        }
    }

    fn key(pos: u8, step: usize, b: Belief) -> usize {
        (pos as usize * STEP_LIMIT + step) * 16 + b as usize
    }

    fn token(&self, step: usize, b: Belief) -> Token {
        self.tokens[step.min(2)][b as usize]
    }

    fn q(&mut self, pos: u8, step: usize, b: Belief, mv: u8) -> f64 {
        let weight = 1.0 / belief_len(b);
        let mut q = 0.0;
        for g in members(b) {
            let next_belief = self.refined[(step + 1).min(2)][b as usize][g];
            for (delta, p) in displacement_outcomes(self.eps) {
                let next = landing(pos, mv, delta);
                let cont = if is_terminal(next) {
                    if next == TARGETS[g] {
                        TARGET_REWARD
                    } else {
                        0.0
                    }
                } else if step + 1 >= STEP_LIMIT {
                    0.0
                } else {
                    self.v(next, step + 1, next_belief)
                };
                q += weight * p * (cont - STEP_COST);
            }
        }
        q
    }

    fn v(&mut self, pos: u8, step: usize, b: Belief) -> f64 {
        let key = Self::key(pos, step, b);
        if !self.value[key].is_nan() {
            return self.value[key];
        }
        let best = match self.table.get(pos, self.token(step, b)) {
            Some(mv) => self.q(pos, step, b, mv),
            None => (0..=MAX_MOVE)
                .map(|mv| self.q(pos, step, b, mv))
                .fold(f64::NEG_INFINITY, f64::max),
        };
        self.value[key] = best;
        best
    }

    fn root(&mut self) -> f64 {
        let initial = std::mem::take(&mut self.initial);
        let total = initial.iter().map(|&b| belief_len(b) / 4.0 * self.v(0, 0, b)).sum();
        self.initial = initial;
        total
    }
}

/// Value of the best history-dependent mover: it sees its position, the
/// step and every token so far.
pub fn memoryful_reference_value(protocol: &Protocol, noise_eps: f64) -> Result<f64> {
    check_noise(noise_eps)?;
    let empty = MoverPolicyTable::empty();
    Ok(BeliefDp::new(protocol, noise_eps, &empty).root())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableSearch {
    pub table: MoverPolicyTable,
    pub value: f64,
    pub nodes: u64,
}

/// Exact optimum over memoryless tables with deterministic moves.
///
/// Depth-first over lazily instantiated entries: the four targets are
/// simulated in lockstep and the search branches on an entry the first time
/// any trajectory needs it. A partial table is dropped when its optimistic
/// total (each unfinished target still earning
/// `10 − steps − ⌈distance / 5⌉`) cannot beat the incumbent. Frontiers that
/// already failed to improve on the incumbent are remembered and skipped.
pub fn search_optimal_table(protocol: &Protocol) -> TableSearch {
    let mut s = LockstepSearch {
        protocol,
        table: MoverPolicyTable::empty(),
        best: i32::MIN,
        best_table: MoverPolicyTable::empty(),
        failed: HashSet::new(),
        nodes: 0,
    };
    s.search(Frontier {
        walkers: [Walker::default(); 4],
        step: 0,
    });
    TableSearch {
        table: s.best_table,
        value: s.best as f64 / 4.0,
        nodes: s.nodes,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
struct Walker {
    pos: u8,
    done: bool,
    /// Return so far, in whole reward units.
    total: i32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct Frontier {
    walkers: [Walker; 4],
    step: usize,
}

struct LockstepSearch<'a> {
    protocol: &'a Protocol,
    table: MoverPolicyTable,
    best: i32,
    best_table: MoverPolicyTable,
    failed: HashSet<(Frontier, MoverPolicyTable)>,
    nodes: u64,
}

impl LockstepSearch<'_> {
    fn optimistic(&self, w: &Walker, g: usize) -> i32 {
        if w.done {
            return w.total;
        }
        let dist = (TARGETS[g] - w.pos) as i32;
        let steps_needed = (dist + MAX_MOVE as i32 - 1) / MAX_MOVE as i32;
        let finish = w.total + TARGET_REWARD as i32 - steps_needed;
        let timeout = w.total;
        finish.max(timeout)
    }

    /// Returns whether the incumbent improved inside this subtree.
    fn search(&mut self, f: Frontier) -> bool {
        self.nodes += 1;
        let bound: i32 = (0..4).map(|g| self.optimistic(&f.walkers[g], g)).sum();
        if bound <= self.best {
            return false;
        }
        if f.walkers.iter().all(|w| w.done) {
            self.best = f.walkers.iter().map(|w| w.total).sum();
            self.best_table = self.table.clone();
            return true;
        }
        let key = (f, self.table.clone());
        if self.failed.contains(&key) {
            return false;
        }

        let needed = (0..4).find_map(|g| {
            let w = f.walkers[g];
            let tok = self.protocol.token_at(g, f.step);
            (!w.done && self.table.get(w.pos, tok).is_none()).then_some((w.pos, tok))
        });
        let improved = if let Some((pos, tok)) = needed {
            let mut improved = false;
            for mv in (0..=MAX_MOVE).rev() {
                self.table.entries[pos as usize][tok.index()] = Some(mv);
                improved |= self.search(f);
            }
            self.table.entries[pos as usize][tok.index()] = None;
            improved
        } else {
            let mut next = f;
            next.step += 1;
            for (g, w) in next.walkers.iter_mut().enumerate() {
                if w.done {
                    continue;
                }
                let mv = self
                    .table
                    .get(w.pos, self.protocol.token_at(g, f.step))
                    .expect("entry instantiated above");
                w.pos = landing(w.pos, mv, 0);
                w.total -= STEP_COST as i32;
                if is_terminal(w.pos) {
                    w.done = true;
                    if w.pos == TARGETS[g] {
                        w.total += TARGET_REWARD as i32;
                    }
                } else if next.step >= STEP_LIMIT {
                    w.done = true;
                }
            }
            self.search(next)
        };
        if !improved {
            self.failed.insert(key);
        }
        improved
    }
}

/// Exact optimum over memoryless tables under noisy moves.
///
/// Tokens A and B are heard only on the first two steps and Null only after
/// them, so a table splits into a message part and a Null part. For fixed
/// Null entries the message part is optimised exactly: the two cell-0
/// entries are enumerated and every other step-two entry is chosen on its
/// own. Branch and bound then runs over the Null entries only. Undecided
/// Null entries are bounded by letting them see the target, and the next
/// entry to decide is the one the bound's own walk visits most, trying the
/// bound's move first.
pub fn search_memoryless_optimum(protocol: &Protocol, noise_eps: f64) -> Result<TableSearch> {
    check_noise(noise_eps)?;
    let mut s = NullSearch {
        protocol,
        eps: noise_eps,
        best: f64::NEG_INFINITY,
        best_table: MoverPolicyTable::empty(),
        nodes: 0,
    };
    s.search(&mut [None; TABLE_ROWS]);
    Ok(TableSearch {
        table: s.best_table,
        value: s.best,
        nodes: s.nodes,
    })
}

/// Cells a step-0 move can reach, so the rows step-1 entries live on.
const STEP_ONE_ROWS: usize = MAX_MOVE as usize + 2;

struct NullSearch<'a> {
    protocol: &'a Protocol,
    eps: f64,
    best: f64,
    best_table: MoverPolicyTable,
    nodes: u64,
}

/// Value of the Null phase per `(cell, step, target)`, with undecided
/// entries choosing per target, and the move taken.
struct NullValues {
    value: Vec<f64>,
    choice: Vec<u8>,
}

impl NullValues {
    fn key(pos: u8, step: usize, g: usize) -> usize {
        (pos as usize * (STEP_LIMIT + 1) + step) * 4 + g
    }

    fn get(&self, pos: u8, step: usize, g: usize) -> f64 {
        self.value[Self::key(pos, step, g)]
    }
}

/// Best message part for given Null values.
struct MessagePlan {
    value: f64,
    /// `moves[q][token]` for cells 0..STEP_ONE_ROWS; row 0 doubles as the
    /// first-step entries.
    moves: [[Option<u8>; 2]; STEP_ONE_ROWS],
    /// Probability of standing at each cell on step 2, per target.
    arrival: [[f64; TABLE_ROWS]; 4],
}

impl NullSearch<'_> {
    const TOL: f64 = 1e-12;

    fn outcome(&self, next: u8, step: usize, g: usize, nv: &NullValues) -> f64 {
        if is_terminal(next) {
            if next == TARGETS[g] {
                TARGET_REWARD
            } else {
                0.0
            }
        } else if step >= STEP_LIMIT {
            0.0
        } else {
            nv.get(next, step, g)
        }
    }

    fn null_values(&self, null: &[Option<u8>; TABLE_ROWS]) -> NullValues {
        let n = TABLE_ROWS * (STEP_LIMIT + 1) * 4;
        let mut nv = NullValues {
            value: vec![0.0; n],
            choice: vec![0; n],
        };
        for step in (2..STEP_LIMIT).rev() {
            for pos in 0..=LAST_DECISION_CELL {
                for g in 0..4 {
                    let mut best = (0, f64::NEG_INFINITY);
                    let moves = match null[pos as usize] {
                        Some(mv) => mv..=mv,
                        None => 0..=MAX_MOVE,
                    };
                    for mv in moves {
                        let q: f64 = displacement_outcomes(self.eps)
                            .map(|(d, p)| p * (self.outcome(landing(pos, mv, d), step + 1, g, &nv) - STEP_COST))
                            .sum();
                        if q > best.1 {
                            best = (mv, q);
                        }
                    }
                    let k = NullValues::key(pos, step, g);
                    nv.value[k] = best.1;
                    nv.choice[k] = best.0;
                }
            }
        }
        nv
    }

    fn token_slot(tok: Token) -> usize {
        tok.index()
    }

    fn message_plan(&self, nv: &NullValues) -> MessagePlan {
        let eps = self.eps;
        // Step-1 action values per cell, target and move.
        let q1 = |q: u8, g: usize, mv: u8| -> f64 {
            displacement_outcomes(eps)
                .map(|(d, p)| p * (self.outcome(landing(q, mv, d), 2, g, nv) - STEP_COST))
                .sum()
        };
        let mut best: Option<MessagePlan> = None;
        for first_a in 0..=MAX_MOVE {
            for first_b in 0..=MAX_MOVE {
                let first = [first_a, first_b];
                let mut moves = [[None; 2]; STEP_ONE_ROWS];
                moves[0] = [Some(first_a), Some(first_b)];
                // Where each target stands after step 0.
                let mut reach = [[0.0; STEP_ONE_ROWS]; 4];
                for (g, row) in reach.iter_mut().enumerate() {
                    let mv = first[Self::token_slot(self.protocol.token_at(g, 0))];
                    for (d, p) in displacement_outcomes(eps) {
                        row[landing(0, mv, d) as usize] += p;
                    }
                }
                let mut total = 0.0;
                for q in 0..STEP_ONE_ROWS as u8 {
                    for tok in [Token::A, Token::B] {
                        let group: Vec<usize> = (0..4)
                            .filter(|&g| self.protocol.token_at(g, 1) == tok && reach[g][q as usize] > 0.0)
                            .collect();
                        if group.is_empty() {
                            continue;
                        }
                        let score = |mv: u8| -> f64 {
                            group.iter().map(|&g| reach[g][q as usize] * q1(q, g, mv)).sum()
                        };
                        let slot = &mut moves[q as usize][Self::token_slot(tok)];
                        let (mv, v) = match *slot {
                            Some(mv) => (mv, score(mv)),
                            None => (0..=MAX_MOVE)
                                .map(|mv| (mv, score(mv)))
                                .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a }),
                        };
                        *slot = Some(mv);
                        total += v;
                    }
                }
                // Every target pays for step 0 as well.
                let value = (total - 4.0 * STEP_COST) / 4.0;
                if best.as_ref().is_none_or(|b| value > b.value) {
                    let mut arrival = [[0.0; TABLE_ROWS]; 4];
                    for (g, arr) in arrival.iter_mut().enumerate() {
                        for q in 0..STEP_ONE_ROWS as u8 {
                            let pq = reach[g][q as usize];
                            if pq == 0.0 {
                                continue;
                            }
                            let tok = self.protocol.token_at(g, 1);
                            let mv = moves[q as usize][Self::token_slot(tok)].expect("set above");
                            for (d, p) in displacement_outcomes(eps) {
                                let next = landing(q, mv, d);
                                if !is_terminal(next) {
                                    arr[next as usize] += pq * p;
                                }
                            }
                        }
                    }
                    best = Some(MessagePlan {
                        value,
                        moves,
                        arrival,
                    });
                }
            }
        }
        best.expect("at least one message plan")
    }

    /// Undecided Null entry the bound's walk visits most, with the move the
    /// bound took on its heaviest visit.
    fn heaviest_free(
        &self,
        null: &[Option<u8>; TABLE_ROWS],
        nv: &NullValues,
        plan: &MessagePlan,
    ) -> Option<(u8, u8)> {
        let mut mass = [0.0f64; TABLE_ROWS];
        let mut pick = [(0.0f64, 0u8); TABLE_ROWS];
        for g in 0..4 {
            let mut layer = plan.arrival[g];
            for step in 2..STEP_LIMIT {
                let mut next_layer = [0.0; TABLE_ROWS];
                for pos in 0..=LAST_DECISION_CELL {
                    let p = layer[pos as usize];
                    if p == 0.0 {
                        continue;
                    }
                    let mv = nv.choice[NullValues::key(pos, step, g)];
                    if null[pos as usize].is_none() {
                        mass[pos as usize] += p;
                        if p > pick[pos as usize].0 {
                            pick[pos as usize] = (p, mv);
                        }
                    }
                    for (d, pd) in displacement_outcomes(self.eps) {
                        let next = landing(pos, mv, d);
                        if !is_terminal(next) {
                            next_layer[next as usize] += p * pd;
                        }
                    }
                }
                layer = next_layer;
            }
        }
        let mut best: Option<(u8, f64)> = None;
        for pos in 0..=LAST_DECISION_CELL {
            let m = mass[pos as usize];
            if m > 0.0 && best.is_none_or(|(_, bm)| m > bm) {
                best = Some((pos, m));
            }
        }
        best.map(|(pos, _)| (pos, pick[pos as usize].1))
    }

    fn search(&mut self, null: &mut [Option<u8>; TABLE_ROWS]) {
        self.nodes += 1;
        let nv = self.null_values(null);
        let plan = self.message_plan(&nv);
        if plan.value <= self.best + Self::TOL {
            return;
        }
        let Some((pos, preferred)) = self.heaviest_free(null, &nv, &plan) else {
            self.best = plan.value;
            let mut table = MoverPolicyTable::empty();
            for (q, row) in plan.moves.iter().enumerate() {
                for (slot, mv) in row.iter().enumerate() {
                    table.entries[q][slot] = *mv;
                }
            }
            for (q, mv) in null.iter().enumerate() {
                table.entries[q][Token::Null.index()] = *mv;
            }
            self.best_table = table;
            return;
        };
        let order = std::iter::once(preferred).chain((0..=MAX_MOVE).rev().filter(|m| *m != preferred));
        for mv in order {
            null[pos as usize] = Some(mv);
            self.search(null);
        }
        null[pos as usize] = None;
    }
}

/// One row of the noise sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationRow {
    pub epsilon: f64,
    pub memoryless_value: f64,
    pub memoryful_value: f64,
}

/// Best memoryless and memoryful values per noise level. Zero noise uses
/// the exact lockstep search.
pub fn degradation(protocol: &Protocol, epsilons: &[f64]) -> Result<Vec<DegradationRow>> {
    epsilons
        .iter()
        .map(|&eps| {
            Ok(DegradationRow {
                epsilon: eps,
                memoryless_value: if eps == 0.0 {
                    search_optimal_table(protocol).value
                } else {
                    search_memoryless_optimum(protocol, eps)?.value
                },
                memoryful_value: memoryful_reference_value(protocol, eps)?,
            })
        })
        .collect()
}

pub fn degradation_csv(rows: &[DegradationRow]) -> String {
    let mut out = String::from("epsilon,memoryless_value,memoryful_value\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.12},{:.12}\n",
            r.epsilon, r.memoryless_value, r.memoryful_value
        ));
    }
    out
}
