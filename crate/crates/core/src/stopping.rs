//! One player's optimal sequential sampling problem.
//!
//! With a Dirichlet prior and linear payoffs the posterior depends only on the
//! observation counts, so the Bellman recursion runs exactly on the count lattice
//! up to a horizon beyond which stopping is optimal at every belief.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefError, DirichletPrior};
use crate::game::{dot, tie_tolerance_for_span, validate_distribution, Game, GameError};
use crate::lattice::Lattice;

/// Upper limit on lattice nodes for a single solve.
pub const MAX_LATTICE_NODES: f64 = 3.0e7;

const CONTINUE: u8 = u8::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoppingError {
    #[error("sampling cost must be finite and positive, got {0}")]
    InvalidCost(f64),
    #[error("prior alphabet has size {found}, payoffs expect {expected}")]
    AlphabetMismatch { expected: usize, found: usize },
    #[error("payoff matrix is malformed: {0}")]
    MalformedPayoffs(String),
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error("no indifference point; boundaries undefined")]
    NoIndifference,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

pub type Result<T> = std::result::Result<T, StoppingError>;

/// Geometry of a binary problem with two actions and an interior indifference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Indifference {
    /// Action whose advantage grows with the probability of symbol 1.
    pub favored: usize,
    pub other: usize,
    /// Probability of symbol 1 at which both actions tie.
    pub sigma_tilde: f64,
    /// Maximal one-step gain numerator `(d1 − d0)·σ̃(1 − σ̃)`.
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingProblem {
    payoffs: Vec<Vec<f64>>,
    prior: DirichletPrior,
    cost: f64,
    eps: f64,
}

impl StoppingProblem {
    /// Sampling problem of player `i` in `game`; ties are scaled by the game's payoff span.
    pub fn new(game: &Game, i: usize, prior: DirichletPrior, cost: f64) -> Result<Self> {
        if i >= game.num_players() {
            return Err(GameError::InvalidPlayer(i).into());
        }
        Self::build(game.payoff_matrix(i), prior, cost, game.tie_tolerance())
    }

    /// Sampling problem for a bare payoff matrix `U[a][y]`.
    pub fn from_payoffs(payoffs: Vec<Vec<f64>>, prior: DirichletPrior, cost: f64) -> Result<Self> {
        let span = matrix_span(&payoffs);
        Self::build(payoffs, prior, cost, tie_tolerance_for_span(span))
    }

    fn build(payoffs: Vec<Vec<f64>>, prior: DirichletPrior, cost: f64, eps: f64) -> Result<Self> {
        if !(cost.is_finite() && cost > 0.0) {
            return Err(StoppingError::InvalidCost(cost));
        }
        if payoffs.is_empty() || payoffs.len() >= CONTINUE as usize {
            return Err(StoppingError::MalformedPayoffs(format!(
                "need between 1 and {} actions, got {}",
                CONTINUE as usize - 1,
                payoffs.len()
            )));
        }
        let m = payoffs[0].len();
        if payoffs.iter().any(|r| r.len() != m || r.iter().any(|x| !x.is_finite())) {
            return Err(StoppingError::MalformedPayoffs("rows must have equal length and finite entries".into()));
        }
        if prior.size() != m {
            return Err(StoppingError::AlphabetMismatch { expected: m, found: prior.size() });
        }
        let p = StoppingProblem { payoffs, prior, cost, eps };
        let nodes = lattice_nodes(m, p.horizon_bound());
        if nodes > MAX_LATTICE_NODES {
            return Err(StoppingError::TooLarge(format!(
                "horizon {} over an alphabet of {m} symbols needs about {nodes:.3e} lattice nodes",
                p.horizon_bound()
            )));
        }
        Ok(p)
    }

    pub fn with_prior(&self, prior: DirichletPrior) -> Result<Self> {
        Self::build(self.payoffs.clone(), prior, self.cost, self.eps)
    }

    pub fn with_cost(&self, cost: f64) -> Result<Self> {
        Self::build(self.payoffs.clone(), self.prior.clone(), cost, self.eps)
    }

    /// Same problem with `g` added to every payoff of action `a`.
    pub fn with_bonus(&self, a: usize, g: f64) -> Result<Self> {
        if a >= self.payoffs.len() || !(g >= 0.0 && g.is_finite()) {
            return Err(StoppingError::Unsupported(format!("bonus {g} on action {a}")));
        }
        let mut u = self.payoffs.clone();
        u[a].iter_mut().for_each(|x| *x += g);
        Self::build(u, self.prior.clone(), self.cost, self.eps)
    }

    pub fn payoffs(&self) -> &[Vec<f64>] {
        &self.payoffs
    }

    pub fn prior(&self) -> &DirichletPrior {
        &self.prior
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn num_actions(&self) -> usize {
        self.payoffs.len()
    }

    pub fn alphabet(&self) -> usize {
        self.prior.size()
    }

    /// Stop tolerance ε_stop, equal to the tie tolerance.
    pub fn tolerance(&self) -> f64 {
        self.eps
    }

    /// Lowest-index maximizer, bitmask of all maximizers within ε, and the value.
    pub fn stop_choice(&self, mean: &[f64]) -> (usize, u64, f64) {
        let vals: Vec<f64> = self.payoffs.iter().map(|r| dot(r, mean)).collect();
        let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut mask = 0u64;
        let mut first = usize::MAX;
        for (a, &v) in vals.iter().enumerate() {
            if v >= best - self.eps {
                if a < 64 {
                    mask |= 1 << a;
                }
                first = first.min(a);
            }
        }
        (first, mask, best)
    }

    pub fn stop_value(&self, mean: &[f64]) -> f64 {
        self.stop_choice(mean).2
    }

    /// Expected stop value after one more observation, minus the current stop value.
    pub fn one_step_gain(&self, counts: &[u32]) -> f64 {
        let mean = self.prior.posterior_mean_at(counts);
        let v = self.stop_value(&mean);
        let mut n = counts.to_vec();
        let mut e = 0.0;
        for (y, &p) in mean.iter().enumerate() {
            if p > 0.0 {
                n[y] += 1;
                e += p * self.stop_value(&self.prior.posterior_mean_at(&n));
                n[y] -= 1;
            }
        }
        e - v
    }

    /// Interior indifference geometry of a binary two-action problem, if any.
    pub fn indifference(&self) -> Option<Indifference> {
        if self.alphabet() != 2 || self.num_actions() != 2 {
            return None;
        }
        let d0 = self.payoffs[1][0] - self.payoffs[0][0];
        let d1 = self.payoffs[1][1] - self.payoffs[0][1];
        let (favored, other, d0, d1) = if d0 < 0.0 && d1 > 0.0 {
            (1, 0, d0, d1)
        } else if d0 > 0.0 && d1 < 0.0 {
            (0, 1, -d0, -d1)
        } else {
            return None;
        };
        let sigma_tilde = d0 / (d0 - d1);
        Some(Indifference {
            favored,
            other,
            sigma_tilde,
            k: (d1 - d0) * sigma_tilde * (1.0 - sigma_tilde),
        })
    }

    fn has_weakly_dominant_action(&self) -> bool {
        let m = self.alphabet();
        self.payoffs.iter().any(|d| {
            self.payoffs
                .iter()
                .all(|a| (0..m).all(|y| d[y] >= a[y] - self.eps))
        })
    }

    /// Depth at and beyond which stopping is optimal at every belief.
    ///
    /// Binary two-action problems use `⌈K/c − 1⌉`. Otherwise the one-step gain at
    /// depth `t` is at most `R/(α0 + t + 1)` with `R` the largest payoff-difference
    /// range, and since that bound decreases in `t` the first depth where it drops
    /// to `c` starts a region where stopping is optimal.
    pub fn horizon_bound(&self) -> usize {
        if self.has_weakly_dominant_action() {
            return 0;
        }
        if self.alphabet() == 2 && self.num_actions() == 2 {
            return match self.indifference() {
                Some(ind) => ceil_nonneg(ind.k / self.cost - 1.0),
                None => 0,
            };
        }
        let m = self.alphabet();
        let mut r: f64 = 0.0;
        for a in &self.payoffs {
            for b in &self.payoffs {
                let diffs = (0..m).map(|y| b[y] - a[y]);
                let (lo, hi) = diffs.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
                r = r.max(hi - lo);
            }
        }
        ceil_nonneg(r / self.cost - 1.0 - self.prior.alpha0())
    }

    pub fn solve(&self) -> StoppingPolicy {
        self.solve_with_horizon(self.horizon_bound())
    }

    /// Backward recursion with an explicit horizon (every node at `horizon` stops).
    pub fn solve_with_horizon(&self, horizon: usize) -> StoppingPolicy {
        let lattice = Lattice::new(self.alphabet(), horizon);
        let mut decisions: Vec<Vec<u8>> = Vec::with_capacity(horizon + 1);
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(horizon + 1);
        let mut knife_edges = 0;
        for t in (0..=horizon).rev() {
            let len = lattice.len(t);
            let mut dec = vec![0u8; len];
            let mut val = vec![0.0; len];
            for idx in 0..len {
                let mean = self.prior.posterior_mean_at(lattice.node(t, idx));
                let (a, _, v) = self.stop_choice(&mean);
                if t == horizon {
                    dec[idx] = a as u8;
                    val[idx] = v;
                    continue;
                }
                let next = values.last().expect("deeper level solved first");
                let cont: f64 = mean
                    .iter()
                    .enumerate()
                    .map(|(y, p)| p * next[lattice.child(t, idx, y)])
                    .sum::<f64>()
                    - self.cost;
                if (cont - v).abs() <= self.eps {
                    knife_edges += 1;
                }
                if cont > v + self.eps {
                    dec[idx] = CONTINUE;
                    val[idx] = cont;
                } else {
                    dec[idx] = a as u8;
                    val[idx] = v;
                }
            }
            decisions.push(dec);
            values.push(val);
        }
        decisions.reverse();
        values.reverse();
        StoppingPolicy {
            problem: self.clone(),
            lattice,
            decisions,
            values,
            kind: PolicyKind::Optimal,
            knife_edges,
        }
    }

    /// Policy that samples only while the one-step gain exceeds the cost.
    pub fn myopic_policy(&self) -> StoppingPolicy {
        let horizon = self.horizon_bound();
        let lattice = Lattice::new(self.alphabet(), horizon);
        let mut decisions: Vec<Vec<u8>> = Vec::with_capacity(horizon + 1);
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(horizon + 1);
        let mut knife_edges = 0;
        for t in (0..=horizon).rev() {
            let len = lattice.len(t);
            let mut dec = vec![0u8; len];
            let mut val = vec![0.0; len];
            for idx in 0..len {
                let n = lattice.node(t, idx);
                let mean = self.prior.posterior_mean_at(n);
                let (a, _, v) = self.stop_choice(&mean);
                let gain = if t == horizon { 0.0 } else { self.one_step_gain(n) };
                if t < horizon && (gain - self.cost).abs() <= self.eps {
                    knife_edges += 1;
                }
                if t < horizon && gain > self.cost + self.eps {
                    let next = values.last().expect("deeper level solved first");
                    dec[idx] = CONTINUE;
                    val[idx] = mean
                        .iter()
                        .enumerate()
                        .map(|(y, p)| p * next[lattice.child(t, idx, y)])
                        .sum::<f64>()
                        - self.cost;
                } else {
                    dec[idx] = a as u8;
                    val[idx] = v;
                }
            }
            decisions.push(dec);
            values.push(val);
        }
        decisions.reverse();
        values.reverse();
        StoppingPolicy {
            problem: self.clone(),
            lattice,
            decisions,
            values,
            kind: PolicyKind::Myopic,
            knife_edges,
        }
    }

    /// Solves again with twice the horizon and checks that every decision at
    /// depths up to the original horizon is unchanged.
    pub fn self_check(&self) -> SelfCheck {
        let h = self.horizon_bound();
        let base = self.solve_with_horizon(h);
        let doubled = self.solve_with_horizon((2 * h).max(1));
        for t in 0..=h {
            for idx in 0..base.lattice.len(t) {
                if base.decisions[t][idx] != doubled.decisions[t][idx] {
                    return SelfCheck {
                        horizon: h,
                        consistent: false,
                        first_mismatch: Some((t, base.lattice.node(t, idx).to_vec())),
                    };
                }
            }
        }
        SelfCheck { horizon: h, consistent: true, first_mismatch: None }
    }

    /// Stopping thresholds per depth over Beta priors with matching parameter sum.
    pub fn boundaries(&self) -> Result<Boundaries> {
        let ind = self.indifference().ok_or(StoppingError::NoIndifference)?;
        let horizon = self.horizon_bound();
        let s0 = self.prior.alpha0();
        let st = ind.sigma_tilde;
        let policy = self.solve();
        let mut upper = Vec::with_capacity(horizon + 1);
        let mut lower = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            let s = s0 + t as f64;
            let remaining = horizon - t;
            let cont = |m: f64| -> bool {
                if remaining == 0 || m <= 0.0 || m >= 1.0 {
                    return false;
                }
                let prior = DirichletPrior::new(vec![(1.0 - m) * s, m * s]).expect("interior mean");
                let p = StoppingProblem { prior, ..self.clone() };
                p.solve_with_horizon(remaining).decisions[0][0] == CONTINUE
            };
            if !cont(st) {
                upper.push(st);
                lower.push(st);
                continue;
            }
            upper.push(scan_edge(&cont, st, 1.0));
            lower.push(scan_edge(&cont, st, 0.0));
        }
        let mut lattice_upper = Vec::with_capacity(horizon + 1);
        let mut lattice_lower = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            let mut up: Option<f64> = None;
            let mut lo: Option<f64> = None;
            for idx in 0..policy.lattice.len(t) {
                if let Decision::Stop { action } = policy.decision(t, idx) {
                    let m = policy.mean(t, idx)[1];
                    if action == ind.favored {
                        up = Some(up.map_or(m, |u: f64| u.min(m)));
                    } else {
                        lo = Some(lo.map_or(m, |l: f64| l.max(m)));
                    }
                }
            }
            lattice_upper.push(up);
            lattice_lower.push(lo);
        }
        Ok(Boundaries {
            sigma_tilde: st,
            favored_action: ind.favored,
            horizon,
            upper,
            lower,
            lattice_upper,
            lattice_lower,
        })
    }
}

/// Walks from `start` toward `end` on a 1e-3 grid until the region stops
/// continuing, then bisects the last bracket.
fn scan_edge(cont: &impl Fn(f64) -> bool, start: f64, end: f64) -> f64 {
    let step = if end > start { 1e-3 } else { -1e-3 };
    let mut inside = start;
    let mut k = 1;
    loop {
        let m = start + step * k as f64;
        let past = if step > 0.0 { m >= end } else { m <= end };
        let probe = if past { end } else { m };
        if !cont(probe) {
            let mut a = inside;
            let mut b = probe;
            for _ in 0..50 {
                let mid = 0.5 * (a + b);
                if cont(mid) {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return b;
        }
        if past {
            return end;
        }
        inside = probe;
        k += 1;
    }
}

fn ceil_nonneg(x: f64) -> usize {
    let c = (x - 1e-9).ceil();
    if c <= 0.0 {
        0
    } else {
        c as usize
    }
}

fn matrix_span(u: &[Vec<f64>]) -> f64 {
    let (lo, hi) = u
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

/// Number of count vectors of depth at most `horizon` over `m` symbols.
fn lattice_nodes(m: usize, horizon: usize) -> f64 {
    // C(horizon + m, m)
    (1..=m).fold(1.0, |acc, k| acc * (horizon + k) as f64 / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub horizon: usize,
    pub consistent: bool,
    pub first_mismatch: Option<(usize, Vec<u32>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Optimal,
    Myopic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Continue,
    Stop { action: usize },
}

#[derive(Debug, Clone)]
pub struct StoppingPolicy {
    problem: StoppingProblem,
    lattice: Lattice,
    decisions: Vec<Vec<u8>>,
    values: Vec<Vec<f64>>,
    kind: PolicyKind,
    knife_edges: usize,
}

/// One exported policy row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub depth: usize,
    pub counts: Vec<u32>,
    pub decision: String,
    pub value: f64,
    pub stop_value: f64,
}

/// Probability of stopping at a node, with the belief held there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopBelief {
    pub depth: usize,
    pub counts: Vec<u32>,
    pub mean: Vec<f64>,
    pub prob: f64,
}

impl StoppingPolicy {
    pub fn problem(&self) -> &StoppingProblem {
        &self.problem
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn horizon(&self) -> usize {
        self.lattice.horizon()
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Nodes where continuing and stopping were within the stop tolerance.
    pub fn knife_edges(&self) -> usize {
        self.knife_edges
    }

    pub fn decision(&self, t: usize, idx: usize) -> Decision {
        match self.decisions[t][idx] {
            CONTINUE => Decision::Continue,
            a => Decision::Stop { action: a as usize },
        }
    }

    pub fn root(&self) -> Decision {
        self.decision(0, 0)
    }

    pub fn value(&self, t: usize, idx: usize) -> f64 {
        self.values[t][idx]
    }

    pub fn mean(&self, t: usize, idx: usize) -> Vec<f64> {
        self.problem.prior.posterior_mean_at(self.lattice.node(t, idx))
    }

    pub fn stop_value(&self, t: usize, idx: usize) -> f64 {
        self.problem.stop_value(&self.mean(t, idx))
    }

    /// Every action optimal upon stopping at the node.
    pub fn optimal_set(&self, t: usize, idx: usize) -> Vec<usize> {
        let (_, mask, _) = self.problem.stop_choice(&self.mean(t, idx));
        (0..self.problem.num_actions().min(64)).filter(|a| mask & (1 << a) != 0).collect()
    }

    /// True when the root decision is a stop with more than one optimal action,
    /// so the fixed lowest-index selection matters.
    pub fn root_tie(&self) -> bool {
        matches!(self.root(), Decision::Stop { .. }) && self.optimal_set(0, 0).len() > 1
    }

    /// Nodes (as count vectors) where `other` stops but this policy continues.
    /// Empty means this policy stops no later than `other` on every path.
    pub fn stops_no_later_than(&self, other: &StoppingPolicy) -> Result<Vec<Vec<u32>>> {
        if self.lattice.alphabet() != other.lattice.alphabet() || self.horizon() != other.horizon() {
            return Err(StoppingError::AlphabetMismatch {
                expected: self.lattice.alphabet(),
                found: other.lattice.alphabet(),
            });
        }
        let mut out = Vec::new();
        for t in 0..=self.horizon() {
            for idx in 0..self.lattice.len(t) {
                if self.decisions[t][idx] == CONTINUE && other.decisions[t][idx] != CONTINUE {
                    out.push(self.lattice.node(t, idx).to_vec());
                }
            }
        }
        Ok(out)
    }

    /// Reachable stop nodes at depth ≥ 1 whose optimal set is not the single
    /// best response to the last observation (for every last observation that
    /// can lead there). Binary alphabets only.
    pub fn never_indifferent_violations(&self) -> Result<Vec<Vec<u32>>> {
        if self.lattice.alphabet() != 2 {
            return Err(StoppingError::Unsupported("needs a binary alphabet".into()));
        }
        let u = &self.problem.payoffs;
        let br: Vec<Vec<usize>> = (0..2)
            .map(|y| {
                let best = u.iter().map(|r| r[y]).fold(f64::NEG_INFINITY, f64::max);
                (0..u.len()).filter(|&a| u[a][y] >= best - self.problem.eps).collect()
            })
            .collect();
        let mut reach = vec![vec![true]];
        let mut out = Vec::new();
        for t in 1..=self.horizon() {
            let mut r = vec![false; self.lattice.len(t)];
            for (idx, slot) in r.iter_mut().enumerate() {
                let n = self.lattice.node(t, idx);
                let mut lasts = Vec::new();
                for y in 0..2 {
                    if n[y] == 0 {
                        continue;
                    }
                    let mut parent = n.to_vec();
                    parent[y] -= 1;
                    let pidx = self.lattice.rank(&parent);
                    if reach[t - 1][pidx] && self.decisions[t - 1][pidx] == CONTINUE {
                        lasts.push(y);
                    }
                }
                *slot = !lasts.is_empty();
                if *slot && self.decisions[t][idx] != CONTINUE {
                    let set = self.optimal_set(t, idx);
                    if lasts.iter().any(|&y| set.len() != 1 || br[y] != set) {
                        out.push(n.to_vec());
                    }
                }
            }
            reach.push(r);
        }
        Ok(out)
    }

    /// Largest deviation from the Bellman equations over all nodes.
    pub fn bellman_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for t in 0..=self.horizon() {
            for idx in 0..self.lattice.len(t) {
                let v = self.stop_value(t, idx);
                let val = self.values[t][idx];
                match self.decision(t, idx) {
                    Decision::Stop { .. } => worst = worst.max((val - v).abs()),
                    Decision::Continue => {
                        let mean = self.mean(t, idx);
                        let cont: f64 = mean
                            .iter()
                            .enumerate()
                            .map(|(y, p)| p * self.values[t + 1][self.lattice.child(t, idx, y)])
                            .sum::<f64>()
                            - self.problem.cost;
                        worst = worst.max((val - cont).abs());
                    }
                }
            }
        }
        worst
    }

    /// Forward pass: `trans(t, idx, y)` gives the probability of observing `y` at a
    /// continuing node; `deposit(t, idx, weight)` receives the mass stopping at a node.
    /// Returns the mass still sampling after each depth.
    fn forward(
        &self,
        trans: impl Fn(usize, usize, usize) -> f64,
        mut deposit: impl FnMut(usize, usize, f64),
    ) -> Vec<f64> {
        let h = self.horizon();
        let m = self.lattice.alphabet();
        let mut cur = vec![1.0];
        let mut continuing = Vec::with_capacity(h + 1);
        for t in 0..=h {
            let mut next = if t < h { vec![0.0; self.lattice.len(t + 1)] } else { Vec::new() };
            let mut mass = 0.0;
            for (idx, &w) in cur.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                match self.decisions[t][idx] {
                    CONTINUE => {
                        mass += w;
                        for y in 0..m {
                            let p = trans(t, idx, y);
                            if p != 0.0 {
                                next[self.lattice.child(t, idx, y)] += w * p;
                            }
                        }
                    }
                    _ => deposit(t, idx, w),
                }
            }
            continuing.push(mass);
            cur = next;
        }
        continuing
    }

    fn check_sigma(&self, sigma: &[f64]) -> Result<()> {
        validate_distribution(sigma, self.lattice.alphabet(), 0).map_err(StoppingError::from)
    }

    /// Exact joint law of the chosen action and the stopping time under `sigma`.
    pub fn joint_action_time(&self, sigma: &[f64]) -> Result<ActionTimeDistribution> {
        self.check_sigma(sigma)?;
        let a = self.problem.num_actions();
        let h = self.horizon();
        let mut probs = vec![vec![0.0; h + 1]; a];
        let mut in_set = vec![vec![0.0; h + 1]; a];
        self.forward(
            |_, _, y| sigma[y],
            |t, idx, w| {
                if let Decision::Stop { action } = self.decision(t, idx) {
                    probs[action][t] += w;
                }
                for b in self.optimal_set(t, idx) {
                    in_set[b][t] += w;
                }
            },
        );
        Ok(ActionTimeDistribution { probs, in_optimal_set: in_set })
    }

    /// Joint law together with its directional derivative when `sigma` moves
    /// along `direction` (which must sum to zero).
    pub fn joint_action_time_derivative(
        &self,
        sigma: &[f64],
        direction: &[f64],
    ) -> Result<(ActionTimeDistribution, Vec<Vec<f64>>)> {
        self.check_sigma(sigma)?;
        if direction.len() != sigma.len() {
            return Err(StoppingError::AlphabetMismatch { expected: sigma.len(), found: direction.len() });
        }
        let a = self.problem.num_actions();
        let h = self.horizon();
        let m = self.lattice.alphabet();
        let mut probs = vec![vec![0.0; h + 1]; a];
        let mut dprobs = vec![vec![0.0; h + 1]; a];
        let mut in_set = vec![vec![0.0; h + 1]; a];
        let mut cur = vec![(1.0, 0.0)];
        for t in 0..=h {
            let mut next = if t < h { vec![(0.0, 0.0); self.lattice.len(t + 1)] } else { Vec::new() };
            for (idx, &(w, dw)) in cur.iter().enumerate() {
                if w == 0.0 && dw == 0.0 {
                    continue;
                }
                match self.decision(t, idx) {
                    Decision::Continue => {
                        for y in 0..m {
                            let c = self.lattice.child(t, idx, y);
                            next[c].0 += w * sigma[y];
                            next[c].1 += dw * sigma[y] + w * direction[y];
                        }
                    }
                    Decision::Stop { action } => {
                        probs[action][t] += w;
                        dprobs[action][t] += dw;
                        for b in self.optimal_set(t, idx) {
                            in_set[b][t] += w;
                        }
                    }
                }
            }
            cur = next;
        }
        Ok((ActionTimeDistribution { probs, in_optimal_set: in_set }, dprobs))
    }

    /// Exact prior-predictive tail `P(τ > T)` for `T = 0..=horizon`.
    pub fn stop_time_tail_under_prior(&self) -> Vec<f64> {
        let prior = &self.problem.prior;
        let lattice = &self.lattice;
        self.forward(
            |t, idx, y| {
                let n = lattice.node(t, idx);
                (prior.alpha()[y] + n[y] as f64) / (prior.alpha0() + t as f64)
            },
            |_, _, _| {},
        )
    }

    /// Mass of stopping at each node, with the posterior mean held there.
    pub fn stopping_belief_distribution(&self, sigma: &[f64]) -> Result<Vec<StopBelief>> {
        self.check_sigma(sigma)?;
        let mut out = Vec::new();
        self.forward(
            |_, _, y| sigma[y],
            |t, idx, w| {
                out.push(StopBelief {
                    depth: t,
                    counts: self.lattice.node(t, idx).to_vec(),
                    mean: self.mean(t, idx),
                    prob: w,
                })
            },
        );
        Ok(out)
    }

    /// Number of sampling paths from the root reaching each stop node.
    fn path_counts(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        self.forward(|_, _, _| 1.0, |t, idx, w| out.push((t, idx, w)));
        out
    }

    /// `P_σ(choose action, τ ≤ t)` as a Bernstein polynomial in the probability of
    /// symbol 1 (binary alphabets only), of degree equal to the horizon.
    pub fn choice_polynomial(&self, action: usize, t: usize) -> Result<BernsteinPoly> {
        self.stop_event_polynomial(t, |s, idx| self.decision(s, idx) == Decision::Stop { action })
    }

    /// `P_σ(action is optimal at the stopping belief, τ ≤ t)` as a Bernstein polynomial.
    pub fn optimal_set_polynomial(&self, action: usize, t: usize) -> Result<BernsteinPoly> {
        self.stop_event_polynomial(t, |s, idx| self.optimal_set(s, idx).contains(&action))
    }

    fn stop_event_polynomial(&self, t: usize, event: impl Fn(usize, usize) -> bool) -> Result<BernsteinPoly> {
        if self.lattice.alphabet() != 2 {
            return Err(StoppingError::Unsupported("choice polynomials need a binary alphabet".into()));
        }
        let d = self.horizon();
        let mut coeffs = vec![0.0; d + 1];
        for (s, idx, paths) in self.path_counts() {
            if s > t || !event(s, idx) {
                continue;
            }
            let n1 = self.lattice.node(s, idx)[1] as usize;
            // σ^{n1}(1−σ)^{s−n1} = Σ_k C(d−s, k−n1)/C(d, k) B_{k,d}(σ)
            for (k, c) in coeffs.iter_mut().enumerate().skip(n1).take(d - s + 1) {
                *c += paths * binomial(d - s, k - n1) / binomial(d, k);
            }
        }
        Ok(BernsteinPoly { coeffs })
    }

    pub fn export_rows(&self) -> Vec<PolicyRow> {
        let mut rows = Vec::with_capacity(self.lattice.total_nodes());
        for t in 0..=self.horizon() {
            for idx in 0..self.lattice.len(t) {
                let decision = match self.decision(t, idx) {
                    Decision::Continue => "continue".to_string(),
                    Decision::Stop { action } => format!("stop:{action}"),
                };
                rows.push(PolicyRow {
                    depth: t,
                    counts: self.lattice.node(t, idx).to_vec(),
                    decision,
                    value: self.values[t][idx],
                    stop_value: self.stop_value(t, idx),
                });
            }
        }
        rows
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTimeDistribution {
    /// `probs[a][t] = P(choose a, τ = t)`.
    pub probs: Vec<Vec<f64>>,
    /// `in_optimal_set[a][t] = P(a is optimal at the stopping belief, τ = t)`.
    pub in_optimal_set: Vec<Vec<f64>>,
}

impl ActionTimeDistribution {
    pub fn horizon(&self) -> usize {
        self.probs.first().map_or(0, |r| r.len().saturating_sub(1))
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().flatten().sum()
    }

    pub fn action_marginal(&self) -> Vec<f64> {
        self.probs.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn time_marginal(&self) -> Vec<f64> {
        (0..=self.horizon()).map(|t| self.probs.iter().map(|r| r[t]).sum()).collect()
    }

    /// `P(choose a, τ ≤ t)`; depths past the horizon return the full mass.
    pub fn cdf(&self, a: usize, t: usize) -> f64 {
        let row = &self.probs[a];
        row.iter().take(t.min(row.len() - 1) + 1).sum()
    }

    /// `P(τ ≤ t | choose a)`, or `None` if `a` has no mass.
    pub fn conditional_time_cdf(&self, a: usize) -> Option<Vec<f64>> {
        let total: f64 = self.probs[a].iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut acc = 0.0;
        Some(
            self.probs[a]
                .iter()
                .map(|p| {
                    acc += p;
                    acc / total
                })
                .collect(),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("action,t,prob\n");
        for (a, row) in self.probs.iter().enumerate() {
            for (t, p) in row.iter().enumerate() {
                s.push_str(&format!("{a},{t},{p}\n"));
            }
        }
        s
    }
}

/// Polynomial on [0, 1] in Bernstein form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinPoly {
    pub coeffs: Vec<f64>,
}

impl BernsteinPoly {
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut b = self.coeffs.clone();
        let n = b.len();
        for r in 1..n {
            for k in 0..n - r {
                b[k] = (1.0 - x) * b[k] + x * b[k + 1];
            }
        }
        b[0]
    }

    pub fn derivative(&self) -> BernsteinPoly {
        let d = self.degree();
        if d == 0 {
            return BernsteinPoly { coeffs: vec![0.0] };
        }
        BernsteinPoly {
            coeffs: self.coeffs.windows(2).map(|w| d as f64 * (w[1] - w[0])).collect(),
        }
    }

    /// Nondecreasing coefficients certify a nonnegative derivative on [0, 1].
    pub fn certified_nondecreasing(&self, slack: f64) -> bool {
        self.coeffs.windows(2).all(|w| w[1] >= w[0] - slack)
    }

    /// Certificate, falling back to checking the derivative on a grid.
    pub fn nondecreasing_on_unit_interval(&self, slack: f64, grid: usize) -> bool {
        if self.certified_nondecreasing(slack) {
            return true;
        }
        let d = self.derivative();
        (0..grid).all(|k| d.eval(k as f64 / grid as f64) >= -slack)
    }
}

/// Posterior-mean thresholds per depth, in terms of the probability of symbol 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundaries {
    pub sigma_tilde: f64,
    /// Action chosen above the upper threshold.
    pub favored_action: usize,
    pub horizon: usize,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    /// Smallest mean at a stop node choosing the favored action, per depth.
    pub lattice_upper: Vec<Option<f64>>,
    /// Largest mean at a stop node choosing the other action, per depth.
    pub lattice_lower: Vec<Option<f64>>,
}

impl Boundaries {
    /// Threshold pair at any depth; depths past the horizon return `σ̃`.
    pub fn at(&self, t: usize) -> (f64, f64) {
        if t >= self.upper.len() {
            (self.sigma_tilde, self.sigma_tilde)
        } else {
            (self.lower[t], self.upper[t])
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,lower,upper\n");
        for t in 0..self.upper.len() {
            s.push_str(&format!("{t},{},{}\n", self.lower[t], self.upper[t]));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::matching_pennies;
    use proptest::prelude::*;

    fn clasher(c: f64, a: f64, b: f64) -> StoppingProblem {
        StoppingProblem::new(&matching_pennies(1.0, 1.0), 1, DirichletPrior::beta(a, b).unwrap(), c).unwrap()
    }

    #[test]
    fn clasher_horizon_and_root() {
        let p = clasher(0.05, 1.0, 1.0);
        let ind = p.indifference().unwrap();
        assert!((ind.k - 0.5).abs() < 1e-15);
        assert!((ind.sigma_tilde - 0.5).abs() < 1e-15);
        assert_eq!(p.horizon_bound(), 9);
        assert!((p.one_step_gain(&[0, 0]) - 1.0 / 6.0).abs() < 1e-14);
        let pol = p.solve();
        assert_eq!(pol.root(), Decision::Continue);
        assert_eq!(clasher(0.5, 1.0, 1.0).horizon_bound(), 0);
        assert!(pol.bellman_residual() < 1e-12);
        assert!(p.self_check().consistent);
    }

    #[test]
    fn dominant_action_stops_at_root() {
        let p = StoppingProblem::from_payoffs(
            vec![vec![1.0, 2.0], vec![0.0, 1.5]],
            DirichletPrior::uniform(2),
            0.01,
        )
        .unwrap();
        assert_eq!(p.horizon_bound(), 0);
        let pol = p.solve();
        assert_eq!(pol.root(), Decision::Stop { action: 0 });
        let d = pol.joint_action_time(&[0.3, 0.7]).unwrap();
        assert_eq!(d.probs, vec![vec![1.0], vec![0.0]]);
        assert_eq!(pol.stop_time_tail_under_prior(), vec![0.0]);
        let myo = p.myopic_policy();
        assert_eq!(myo.root(), Decision::Stop { action: 0 });
    }

    #[test]
    fn expensive_sampling_stops_at_root() {
        // Gain at the uniform prior is 1/6 < 0.4 and the horizon is zero.
        let p = clasher(0.4, 1.0, 1.0);
        assert!(matches!(p.solve().root(), Decision::Stop { .. }));
    }

    #[test]
    fn stop_after_one_step_distribution() {
        // A policy that always stops at depth 1: with K = 0.5 and c just below the
        // root gain 1/6 but above the depth-1 bound 0.5/4.
        let p = clasher(0.15, 1.0, 1.0);
        let pol = p.solve();
        assert_eq!(pol.root(), Decision::Continue);
        for idx in 0..2 {
            assert!(matches!(pol.decision(1, idx), Decision::Stop { .. }));
        }
        // After seeing symbol 1 (Matcher's b) the Clasher plays a (action 0).
        let d = pol.joint_action_time(&[0.3, 0.7]).unwrap();
        assert!((d.probs[0][1] - 0.7).abs() < 1e-15);
        assert!((d.probs[1][1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn tail_bound_and_exhaustion() {
        let p = clasher(0.05, 1.0, 1.0);
        let pol = p.solve();
        let tail = pol.stop_time_tail_under_prior();
        assert_eq!(tail.len(), 10);
        assert_eq!(tail[9], 0.0);
        for (t, &x) in tail.iter().enumerate().skip(1) {
            assert!(x <= 2.0 / (0.05 * t as f64));
        }
    }

    #[test]
    fn boundaries_collapse() {
        let p = clasher(0.05, 1.0, 1.0);
        let b = p.boundaries().unwrap();
        assert_eq!(b.horizon, 9);
        for t in 1..b.upper.len() {
            assert!(b.upper[t] <= b.upper[t - 1] + 1e-12);
            assert!(b.lower[t] >= b.lower[t - 1] - 1e-12);
        }
        assert_eq!(b.at(9), (0.5, 0.5));
        assert_eq!(b.at(20), (0.5, 0.5));
        assert!(b.upper[0] > 0.5 && b.lower[0] < 0.5);
        let dominant = StoppingProblem::from_payoffs(vec![vec![1.0, 1.0], vec![0.0, 0.0]], DirichletPrior::uniform(2), 0.1).unwrap();
        assert_eq!(dominant.boundaries(), Err(StoppingError::NoIndifference));
    }

    #[test]
    fn myopic_stops_where_optimal_stops() {
        let p = clasher(0.02, 1.0, 1.0);
        let opt = p.solve();
        let myo = p.myopic_policy();
        for t in 0..=opt.horizon() {
            for idx in 0..opt.lattice().len(t) {
                if matches!(opt.decision(t, idx), Decision::Stop { .. }) {
                    assert!(matches!(myo.decision(t, idx), Decision::Stop { .. }));
                }
            }
        }
        // Beta(50,1): one observation cannot cross 1/2, so the myopic rule stops.
        let conc = clasher(0.001, 50.0, 1.0);
        assert!(conc.one_step_gain(&[0, 0]).abs() < 1e-15);
        assert!(matches!(conc.myopic_policy().root(), Decision::Stop { action: 0 }));
        assert!(conc.horizon_bound() >= 1);
    }

    #[test]
    fn choice_polynomial_matches_forward_pass() {
        let p = clasher(0.03, 1.0, 2.0);
        let pol = p.solve();
        for t in [0, 3, pol.horizon()] {
            let poly = pol.choice_polynomial(0, t).unwrap();
            for k in 0..=20 {
                let x = k as f64 / 20.0;
                let d = pol.joint_action_time(&[1.0 - x, x]).unwrap();
                assert!((poly.eval(x) - d.cdf(0, t)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let p = clasher(0.03, 2.0, 1.0);
        let pol = p.solve();
        let x = 0.37;
        let (_, dp) = pol.joint_action_time_derivative(&[1.0 - x, x], &[-1.0, 1.0]).unwrap();
        let h = 1e-5;
        let up = pol.joint_action_time(&[1.0 - x - h, x + h]).unwrap();
        let dn = pol.joint_action_time(&[1.0 - x + h, x - h]).unwrap();
        let fd = (up.action_marginal()[0] - dn.action_marginal()[0]) / (2.0 * h);
        let exact: f64 = dp[0].iter().sum();
        assert!((fd - exact).abs() < 1e-6);
    }

    #[test]
    fn general_alphabet_horizon_self_check() {
        let u = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let p = StoppingProblem::from_payoffs(u, DirichletPrior::uniform(3), 0.08).unwrap();
        assert_eq!(p.horizon_bound(), 21);
        let check = p.self_check();
        assert!(check.consistent, "{check:?}");
        let pol = p.solve();
        assert!(pol.bellman_residual() < 1e-12);
        let d = pol.joint_action_time(&[0.2, 0.3, 0.5]).unwrap();
        assert!((d.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = matching_pennies(1.0, 1.0);
        assert!(matches!(
            StoppingProblem::new(&g, 1, DirichletPrior::uniform(2), 0.0),
            Err(StoppingError::InvalidCost(_))
        ));
        assert!(matches!(
            StoppingProblem::new(&g, 1, DirichletPrior::uniform(3), 0.1),
            Err(StoppingError::AlphabetMismatch { .. })
        ));
        assert!(matches!(
            StoppingProblem::new(&g, 0, DirichletPrior::uniform(2), 1e-9),
            Err(StoppingError::TooLarge(_))
        ));
    }

    fn arb_binary_problem() -> impl Strategy<Value = StoppingProblem> {
        (
            prop::collection::vec(-2.0f64..2.0, 4),
            0.3f64..4.0,
            0.3f64..4.0,
            0.04f64..0.3,
        )
            .prop_map(|(u, a, b, c)| {
                StoppingProblem::from_payoffs(
                    vec![vec![u[0], u[1]], vec![u[2], u[3]]],
                    DirichletPrior::beta(a, b).unwrap(),
                    c,
                )
                .unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn policy_invariants(p in arb_binary_problem(), x in 0.0f64..1.0) {
            let pol = p.solve();
            prop_assert!(pol.bellman_residual() < 1e-10);
            let h = pol.horizon();
            for idx in 0..pol.lattice().len(h) {
                let is_stop = matches!(pol.decision(h, idx), Decision::Stop { .. });
                prop_assert!(is_stop);
            }
            for t in 0..=h {
                for idx in 0..pol.lattice().len(t) {
                    prop_assert!(pol.value(t, idx) >= pol.stop_value(t, idx) - 1e-12);
                }
            }
            let d = pol.joint_action_time(&[1.0 - x, x]).unwrap();
            prop_assert!((d.total() - 1.0).abs() < 1e-10);
            prop_assert!(d.probs.iter().flatten().all(|p| *p >= 0.0));
            prop_assert!(p.self_check().consistent);
        }

        #[test]
        fn value_is_midpoint_convex_in_mean(p in arb_binary_problem()) {
            let pol = p.solve();
            for t in 0..=pol.horizon() {
                let len = pol.lattice().len(t);
                for idx in 1..len.saturating_sub(1) {
                    // Lattice means at a fixed depth are equally spaced.
                    let mid = pol.value(t, idx);
                    let avg = 0.5 * (pol.value(t, idx - 1) + pol.value(t, idx + 1));
                    prop_assert!(mid <= avg + 1e-9);
                }
            }
        }

        #[test]
        fn cheaper_sampling_shrinks_stop_region(p in arb_binary_problem(), f in 0.3f64..0.95, x in 0.0f64..1.0) {
            let cheap = p.with_cost(p.cost() * f).unwrap();
            let (hi, lo) = (p.solve(), cheap.solve());
            for t in 0..=hi.horizon() {
                for idx in 0..hi.lattice().len(t) {
                    if matches!(lo.decision(t, idx), Decision::Stop { .. }) {
                        let both = matches!(hi.decision(t, idx), Decision::Stop { .. });
                        prop_assert!(both);
                    }
                }
            }
            let dh = hi.joint_action_time(&[1.0 - x, x]).unwrap().time_marginal();
            let dl = lo.joint_action_time(&[1.0 - x, x]).unwrap().time_marginal();
            let (mut ch, mut cl) = (0.0, 0.0);
            for t in 0..dl.len() {
                ch += dh.get(t).copied().unwrap_or(0.0);
                cl += dl[t];
                prop_assert!(cl <= ch + 1e-10);
            }
        }
    }
}
