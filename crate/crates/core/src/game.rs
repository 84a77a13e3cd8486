//! Finite normal-form games.
//!
//! Payoffs are stored per player as a flat tensor over full action profiles in
//! row-major order, player 0 most significant. Opponent profiles of player `i`
//! use the same ordering with player `i` removed; that index (`y`) is the
//! observation alphabet for every sampling problem downstream.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance applied to the payoff span to classify ties.
pub const TIE_REL_TOL: f64 = 1e-9;

/// Tolerance used when verifying Nash equilibria.
pub const NASH_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("game needs at least 2 players, got {0}")]
    TooFewPlayers(usize),
    #[error("player {player} has no actions")]
    NoActions { player: usize },
    #[error("dimension mismatch for player {player} on {axis}: expected {expected}, found {found}")]
    DimensionMismatch {
        player: usize,
        axis: String,
        expected: usize,
        found: usize,
    },
    #[error("payoff of player {player} at flat index {index} is not finite")]
    NonFinitePayoff { player: usize, index: usize },
    #[error("player index {0} out of range")]
    InvalidPlayer(usize),
    #[error("action {action} out of range for player {player}")]
    InvalidAction { player: usize, action: usize },
    #[error("invalid distribution for player {player}: {reason}")]
    InvalidDistribution { player: usize, reason: String },
    #[error("unsupported game size: {0}")]
    UnsupportedSize(String),
    #[error("linear program failed ({reason}); instance:\n{instance}")]
    Lp { reason: String, instance: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, GameError>;

/// Checks that `p` is a probability vector of length `len`.
pub fn validate_distribution(p: &[f64], len: usize, player: usize) -> Result<()> {
    if p.len() != len {
        return Err(GameError::DimensionMismatch {
            player,
            axis: "distribution".into(),
            expected: len,
            found: p.len(),
        });
    }
    if p.iter().any(|x| !x.is_finite() || *x < -1e-12) {
        return Err(GameError::InvalidDistribution {
            player,
            reason: "entries must be finite and nonnegative".into(),
        });
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(GameError::InvalidDistribution {
            player,
            reason: format!("entries sum to {s}, not 1"),
        });
    }
    Ok(())
}

/// One probability vector per player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedProfile {
    pub dist: Vec<Vec<f64>>,
}

impl MixedProfile {
    pub fn new(dist: Vec<Vec<f64>>) -> Self {
        MixedProfile { dist }
    }

    pub fn pure(game: &Game, profile: &[usize]) -> Self {
        let dist = profile
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let mut v = vec![0.0; game.num_actions(i)];
                v[a] = 1.0;
                v
            })
            .collect();
        MixedProfile { dist }
    }

    pub fn uniform(game: &Game) -> Self {
        let dist = (0..game.num_players())
            .map(|i| {
                let n = game.num_actions(i);
                vec![1.0 / n as f64; n]
            })
            .collect();
        MixedProfile { dist }
    }

    pub fn validate(&self, game: &Game) -> Result<()> {
        if self.dist.len() != game.num_players() {
            return Err(GameError::DimensionMismatch {
                player: 0,
                axis: "players".into(),
                expected: game.num_players(),
                found: self.dist.len(),
            });
        }
        for (i, d) in self.dist.iter().enumerate() {
            validate_distribution(d, game.num_actions(i), i)?;
        }
        Ok(())
    }

    /// Sup-norm distance over all players and actions.
    pub fn distance(&self, other: &MixedProfile) -> f64 {
        self.dist
            .iter()
            .zip(&other.dist)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Indices of actions with probability above `eps`, per player.
    pub fn supports(&self, eps: f64) -> Vec<Vec<usize>> {
        self.dist
            .iter()
            .map(|d| (0..d.len()).filter(|&a| d[a] > eps).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Game {
    roles: Vec<String>,
    actions: Vec<Vec<String>>,
    payoffs: Vec<Vec<f64>>,
}

impl Game {
    /// Builds a game from flat row-major payoff tensors, one per player.
    pub fn new(roles: Vec<String>, actions: Vec<Vec<String>>, payoffs: Vec<Vec<f64>>) -> Result<Self> {
        let n = roles.len();
        if n < 2 {
            return Err(GameError::TooFewPlayers(n));
        }
        if actions.len() != n {
            return Err(GameError::DimensionMismatch {
                player: 0,
                axis: "action sets".into(),
                expected: n,
                found: actions.len(),
            });
        }
        for (i, a) in actions.iter().enumerate() {
            if a.is_empty() {
                return Err(GameError::NoActions { player: i });
            }
        }
        if payoffs.len() != n {
            return Err(GameError::DimensionMismatch {
                player: 0,
                axis: "payoff tensors".into(),
                expected: n,
                found: payoffs.len(),
            });
        }
        let size: usize = actions.iter().map(Vec::len).product();
        for (i, u) in payoffs.iter().enumerate() {
            if u.len() != size {
                return Err(GameError::DimensionMismatch {
                    player: i,
                    axis: "payoff tensor".into(),
                    expected: size,
                    found: u.len(),
                });
            }
            if let Some(index) = u.iter().position(|x| !x.is_finite()) {
                return Err(GameError::NonFinitePayoff { player: i, index });
            }
        }
        Ok(Game { roles, actions, payoffs })
    }

    /// Two-player game from a row matrix `row[r][c]` and a column matrix `col[r][c]`.
    pub fn bimatrix(row: &[Vec<f64>], col: &[Vec<f64>]) -> Result<Self> {
        let r = row.len();
        let c = row.first().map_or(0, Vec::len);
        for (k, m) in [row, col].iter().enumerate() {
            if m.len() != r {
                return Err(GameError::DimensionMismatch {
                    player: k,
                    axis: "rows".into(),
                    expected: r,
                    found: m.len(),
                });
            }
            for line in m.iter() {
                if line.len() != c {
                    return Err(GameError::DimensionMismatch {
                        player: k,
                        axis: "columns".into(),
                        expected: c,
                        found: line.len(),
                    });
                }
            }
        }
        let labels = |n: usize, p: &str| (0..n).map(|k| format!("{p}{k}")).collect::<Vec<_>>();
        Game::new(
            vec!["row".into(), "col".into()],
            vec![labels(r, "r"), labels(c, "c")],
            vec![row.concat(), col.concat()],
        )
    }

    pub fn num_players(&self) -> usize {
        self.roles.len()
    }

    pub fn num_actions(&self, i: usize) -> usize {
        self.actions[i].len()
    }

    pub fn roles(&self) -> &[String] {
        &self.roles
    }

    pub fn action_labels(&self, i: usize) -> &[String] {
        &self.actions[i]
    }

    /// Flat payoff tensor of player `i`.
    pub fn payoff_tensor(&self, i: usize) -> &[f64] {
        &self.payoffs[i]
    }

    fn check_player(&self, i: usize) -> Result<()> {
        if i >= self.num_players() {
            return Err(GameError::InvalidPlayer(i));
        }
        Ok(())
    }

    fn check_action(&self, i: usize, a: usize) -> Result<()> {
        self.check_player(i)?;
        if a >= self.num_actions(i) {
            return Err(GameError::InvalidAction { player: i, action: a });
        }
        Ok(())
    }

    fn flat_index(&self, profile: &[usize]) -> usize {
        profile
            .iter()
            .zip(&self.actions)
            .fold(0, |acc, (&a, set)| acc * set.len() + a)
    }

    pub fn payoff(&self, i: usize, profile: &[usize]) -> f64 {
        self.payoffs[i][self.flat_index(profile)]
    }

    /// Size of the opponent-profile alphabet of player `i`.
    pub fn num_opponent_profiles(&self, i: usize) -> usize {
        (0..self.num_players())
            .filter(|&j| j != i)
            .map(|j| self.num_actions(j))
            .product()
    }

    /// Decodes opponent-profile index `y` into one action per opponent, in player order.
    pub fn opponent_profile(&self, i: usize, mut y: usize) -> Vec<usize> {
        let opp: Vec<usize> = (0..self.num_players()).filter(|&j| j != i).collect();
        let mut out = vec![0; opp.len()];
        for (k, &j) in opp.iter().enumerate().rev() {
            let n = self.num_actions(j);
            out[k] = y % n;
            y /= n;
        }
        out
    }

    /// Opponent-profile index of a full action profile, seen from player `i`.
    pub fn opponent_index(&self, i: usize, profile: &[usize]) -> usize {
        (0..self.num_players())
            .filter(|&j| j != i)
            .fold(0, |acc, j| acc * self.num_actions(j) + profile[j])
    }

    fn full_profile(&self, i: usize, a: usize, y: usize) -> Vec<usize> {
        let opp = self.opponent_profile(i, y);
        let mut full = Vec::with_capacity(self.num_players());
        let mut it = opp.into_iter();
        for j in 0..self.num_players() {
            if j == i {
                full.push(a);
            } else {
                full.push(it.next().unwrap_or(0));
            }
        }
        full
    }

    /// Payoff matrix `U[a][y]` of player `i` over its opponent-profile alphabet.
    pub fn payoff_matrix(&self, i: usize) -> Vec<Vec<f64>> {
        let m = self.num_opponent_profiles(i);
        (0..self.num_actions(i))
            .map(|a| (0..m).map(|y| self.payoff(i, &self.full_profile(i, a, y))).collect())
            .collect()
    }

    /// Difference between the largest and smallest payoff over all players.
    pub fn payoff_span(&self) -> f64 {
        let (lo, hi) = self
            .payoffs
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        hi - lo
    }

    /// Absolute tie tolerance, scaled by the payoff span (span 0 counts as 1).
    pub fn tie_tolerance(&self) -> f64 {
        tie_tolerance_for_span(self.payoff_span())
    }

    /// Largest absolute payoff over all players.
    pub fn max_abs_payoff(&self) -> f64 {
        self.payoffs.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Product distribution over player `i`'s opponent profiles.
    pub fn opponent_distribution(&self, i: usize, sigma: &MixedProfile) -> Result<Vec<f64>> {
        self.check_player(i)?;
        sigma.validate(self)?;
        let mut out = vec![1.0];
        for j in (0..self.num_players()).filter(|&j| j != i) {
            let d = &sigma.dist[j];
            let mut next = Vec::with_capacity(out.len() * d.len());
            for &p in &out {
                for &q in d {
                    next.push(p * q);
                }
            }
            out = next;
        }
        Ok(out)
    }

    fn check_opponent_dist(&self, i: usize, q: &[f64]) -> Result<()> {
        validate_distribution(q, self.num_opponent_profiles(i), i)
    }

    pub fn expected_payoff(&self, i: usize, a: usize, sigma_minus_i: &[f64]) -> Result<f64> {
        self.check_action(i, a)?;
        self.check_opponent_dist(i, sigma_minus_i)?;
        Ok(sigma_minus_i
            .iter()
            .enumerate()
            .map(|(y, p)| p * self.payoff(i, &self.full_profile(i, a, y)))
            .sum())
    }

    /// All maximizers within the tie tolerance, and the maximal value.
    pub fn best_responses(&self, i: usize, sigma_minus_i: &[f64]) -> Result<(Vec<usize>, f64)> {
        self.check_player(i)?;
        self.check_opponent_dist(i, sigma_minus_i)?;
        let u = self.payoff_matrix(i);
        Ok(argmax_set(&u, sigma_minus_i, self.tie_tolerance()))
    }

    /// Strict dominance of `a` by a mixture over all of player `i`'s actions,
    /// against the allowed opponent profiles.
    pub fn strictly_dominated(&self, i: usize, a: usize, allowed: &[usize]) -> Result<bool> {
        self.check_action(i, a)?;
        if allowed.is_empty() {
            return Err(GameError::InvalidArgument("allowed opponent profile set is empty".into()));
        }
        let m = self.num_opponent_profiles(i);
        if let Some(&y) = allowed.iter().find(|&&y| y >= m) {
            return Err(GameError::InvalidArgument(format!("opponent profile {y} out of range")));
        }
        let u = self.payoff_matrix(i);
        let gap = max_min_gap(&u, a, allowed)?;
        Ok(gap > self.tie_tolerance())
    }

    /// Weak dominance of `a` by a mixture against the full opponent alphabet.
    pub fn weakly_dominated(&self, i: usize, a: usize) -> Result<bool> {
        self.check_action(i, a)?;
        let u = self.payoff_matrix(i);
        let total = max_total_gap(&u, a)?;
        Ok(total > self.tie_tolerance())
    }

    /// Nested sets `A^0 ⊇ A^1 ⊇ ... ⊇ A^K` ending at the first repeated set.
    /// `levels[0]` is the full action space; `levels.last()` is the fixed point.
    pub fn rationalizability_levels(&self) -> Result<Vec<Vec<Vec<usize>>>> {
        let full: Vec<Vec<usize>> = (0..self.num_players())
            .map(|i| (0..self.num_actions(i)).collect())
            .collect();
        let mut levels = vec![full];
        loop {
            let prev = levels.last().expect("levels start non-empty").clone();
            let mut next = Vec::with_capacity(prev.len());
            for i in 0..self.num_players() {
                let allowed = self.allowed_profiles(i, &prev);
                let mut keep = Vec::new();
                for &a in &prev[i] {
                    if !self.strictly_dominated(i, a, &allowed)? {
                        keep.push(a);
                    }
                }
                next.push(keep);
            }
            if next == prev {
                return Ok(levels);
            }
            levels.push(next);
        }
    }

    /// Opponent profiles of `i` whose every component lies in `sets`.
    pub fn allowed_profiles(&self, i: usize, sets: &[Vec<usize>]) -> Vec<usize> {
        let opp: Vec<usize> = (0..self.num_players()).filter(|&j| j != i).collect();
        (0..self.num_opponent_profiles(i))
            .filter(|&y| {
                self.opponent_profile(i, y)
                    .iter()
                    .zip(&opp)
                    .all(|(a, &j)| sets[j].contains(a))
            })
            .collect()
    }

    /// `A^k` per player; `None` asks for the fixed point.
    pub fn k_rationalizable_sets(&self, k: Option<usize>) -> Result<Vec<Vec<usize>>> {
        let levels = self.rationalizability_levels()?;
        let idx = match k {
            Some(k) => k.min(levels.len() - 1),
            None => levels.len() - 1,
        };
        Ok(levels[idx].clone())
    }

    /// Smallest `k ≥ 1` with `A^k = A^{k+1}`.
    pub fn solvability_depth(&self) -> Result<usize> {
        Ok((self.rationalizability_levels()?.len() - 1).max(1))
    }

    /// Copy of the game with `g` added to every payoff of player `i` at action `a`.
    pub fn payoff_bonus(&self, i: usize, a: usize, g: f64) -> Result<Game> {
        self.check_player(i)?;
        self.payoff_bonus_by_profile(i, a, &vec![g; self.num_opponent_profiles(i)])
    }

    /// Copy of the game with `g[y]` added to `u_i(a, y)` for each opponent profile `y`.
    pub fn payoff_bonus_by_profile(&self, i: usize, a: usize, g: &[f64]) -> Result<Game> {
        self.check_action(i, a)?;
        if g.len() != self.num_opponent_profiles(i) {
            return Err(GameError::DimensionMismatch {
                player: i,
                axis: "bonus".into(),
                expected: self.num_opponent_profiles(i),
                found: g.len(),
            });
        }
        if let Some(x) = g.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return Err(GameError::InvalidArgument(format!("bonus must be finite and nonnegative, got {x}")));
        }
        let mut out = self.clone();
        for (y, &gy) in g.iter().enumerate() {
            let idx = self.flat_index(&self.full_profile(i, a, y));
            out.payoffs[i][idx] += gy;
        }
        Ok(out)
    }

    /// Copy of the game with player `i`'s payoffs replaced by `u[a][y]` over opponent profiles.
    pub fn with_payoff_matrix(&self, i: usize, u: &[Vec<f64>]) -> Result<Game> {
        self.check_player(i)?;
        let m = self.num_opponent_profiles(i);
        if u.len() != self.num_actions(i) || u.iter().any(|r| r.len() != m) {
            return Err(GameError::DimensionMismatch {
                player: i,
                axis: "payoff matrix".into(),
                expected: self.num_actions(i) * m,
                found: u.iter().map(Vec::len).sum(),
            });
        }
        if let Some(index) = u.iter().flatten().position(|x| !x.is_finite()) {
            return Err(GameError::NonFinitePayoff { player: i, index });
        }
        let mut out = self.clone();
        for (a, row) in u.iter().enumerate() {
            for (y, &v) in row.iter().enumerate() {
                let idx = self.flat_index(&self.full_profile(i, a, y));
                out.payoffs[i][idx] = v;
            }
        }
        Ok(out)
    }

    fn bimatrices(&self) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        if self.num_players() != 2 {
            return Err(GameError::UnsupportedSize(format!(
                "Nash computation needs 2 players, got {}",
                self.num_players()
            )));
        }
        let (r, c) = (self.num_actions(0), self.num_actions(1));
        if r > 4 || c > 4 {
            return Err(GameError::UnsupportedSize(format!("{r}x{c} exceeds 4x4")));
        }
        let a = (0..r).map(|x| (0..c).map(|y| self.payoff(0, &[x, y])).collect()).collect();
        let b = (0..r).map(|x| (0..c).map(|y| self.payoff(1, &[x, y])).collect()).collect();
        Ok((a, b))
    }

    /// Nash equilibria of a 2-player game up to 4x4. 2x2 games use the closed form.
    pub fn nash_equilibria(&self) -> Result<Vec<MixedProfile>> {
        let (a, b) = self.bimatrices()?;
        if a.len() == 2 && a[0].len() == 2 {
            return Ok(nash_2x2(self, &a, &b));
        }
        Ok(self.nash_support_enumeration()?.0)
    }

    /// Support enumeration over equal-size supports. Returns the verified
    /// equilibria and one diagnostic line per skipped singular support pair.
    pub fn nash_support_enumeration(&self) -> Result<(Vec<MixedProfile>, Vec<String>)> {
        let (a, b) = self.bimatrices()?;
        let (r, c) = (a.len(), a[0].len());
        let mut found: Vec<MixedProfile> = Vec::new();
        let mut diagnostics = Vec::new();
        for k in 1..=r.min(c) {
            for s1 in subsets(r, k) {
                for s2 in subsets(c, k) {
                    // Column mixture makes the row indifferent on s1, and vice versa.
                    let q = indifference(&s1, &s2, |x, y| a[x][y]);
                    let bt = |x: usize, y: usize| b[y][x];
                    let p = indifference(&s2, &s1, bt);
                    let (Some(q), Some(p)) = (q, p) else {
                        diagnostics.push(format!("singular indifference system for supports {s1:?} x {s2:?}"));
                        continue;
                    };
                    if p.iter().chain(&q).any(|x| *x < -1e-12) {
                        continue;
                    }
                    let mut pr = vec![0.0; r];
                    let mut qc = vec![0.0; c];
                    for (idx, &x) in s1.iter().enumerate() {
                        pr[x] = p[idx].max(0.0);
                    }
                    for (idx, &y) in s2.iter().enumerate() {
                        qc[y] = q[idx].max(0.0);
                    }
                    normalize(&mut pr);
                    normalize(&mut qc);
                    let prof = MixedProfile::new(vec![pr, qc]);
                    if self.verify_nash(&prof, NASH_TOL) && !found.iter().any(|e| e.distance(&prof) < 1e-9) {
                        found.push(prof);
                    }
                }
            }
        }
        Ok((found, diagnostics))
    }

    /// Largest regret of any action in any player's support, given the others' mixtures.
    pub fn nash_regret(&self, sigma: &MixedProfile) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..self.num_players() {
            let q = self.opponent_distribution(i, sigma)?;
            let u = self.payoff_matrix(i);
            let vals: Vec<f64> = u.iter().map(|row| dot(row, &q)).collect();
            let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (a, &p) in sigma.dist[i].iter().enumerate() {
                if p > 0.0 {
                    worst = worst.max(best - vals[a]);
                }
            }
        }
        Ok(worst)
    }

    /// Independent best-response check: every supported action is within `tol` of the best.
    pub fn verify_nash(&self, sigma: &MixedProfile, tol: f64) -> bool {
        matches!(self.nash_regret(sigma), Ok(r) if r <= tol)
    }
}

pub(crate) fn tie_tolerance_for_span(span: f64) -> f64 {
    let span = if span > 0.0 { span } else { 1.0 };
    TIE_REL_TOL * span
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizers of `U[a]·q` within `eps`, with the maximal value.
pub(crate) fn argmax_set(u: &[Vec<f64>], q: &[f64], eps: f64) -> (Vec<usize>, f64) {
    let vals: Vec<f64> = u.iter().map(|row| dot(row, q)).collect();
    let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let set = (0..vals.len()).filter(|&a| vals[a] >= best - eps).collect();
    (set, best)
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..(1 << n))
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|&b| m & (1 << b) != 0).collect())
        .collect()
}

/// Solves for a mixture `x` over `cols` making the payoff `f(r, col)` equal across
/// `rows`, with `Σx = 1`. Returns `None` if the system is singular.
fn indifference(rows: &[usize], cols: &[usize], f: impl Fn(usize, usize) -> f64) -> Option<Vec<f64>> {
    let k = rows.len();
    let mut m = DMatrix::<f64>::zeros(k + 1, k + 1);
    let mut rhs = DVector::<f64>::zeros(k + 1);
    for (ri, &r) in rows.iter().enumerate() {
        for (ci, &c) in cols.iter().enumerate() {
            m[(ri, ci)] = f(r, c);
        }
        m[(ri, k)] = -1.0;
    }
    for ci in 0..k {
        m[(k, ci)] = 1.0;
    }
    rhs[k] = 1.0;
    let lu = m.lu();
    let det = lu.determinant();
    if det.abs() < 1e-12 {
        return None;
    }
    let sol = lu.solve(&rhs)?;
    Some(sol.iter().take(k).cloned().collect())
}

fn nash_2x2(game: &Game, a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<MixedProfile> {
    let mut out: Vec<MixedProfile> = Vec::new();
    let push = |p: MixedProfile, out: &mut Vec<MixedProfile>| {
        if game.verify_nash(&p, NASH_TOL) && !out.iter().any(|e| e.distance(&p) < 1e-9) {
            out.push(p);
        }
    };
    for r in 0..2 {
        for c in 0..2 {
            push(MixedProfile::pure(game, &[r, c]), &mut out);
        }
    }
    // Row mixes p on action 0 so the column is indifferent, and symmetrically.
    let dc0 = b[0][0] - b[0][1];
    let dc1 = b[1][0] - b[1][1];
    let dr0 = a[0][0] - a[1][0];
    let dr1 = a[0][1] - a[1][1];
    if (dc0 - dc1).abs() > 1e-15 && (dr0 - dr1).abs() > 1e-15 {
        let p = -dc1 / (dc0 - dc1);
        let q = -dr1 / (dr0 - dr1);
        if p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0 {
            push(MixedProfile::new(vec![vec![p, 1.0 - p], vec![q, 1.0 - q]]), &mut out);
        }
    }
    out
}

fn describe_lp(u: &[Vec<f64>], a: usize, cols: &[usize]) -> String {
    let mut s = format!("dominated action {a}; allowed opponent profiles {cols:?}\n");
    for (b, row) in u.iter().enumerate() {
        let vals: Vec<String> = cols.iter().map(|&y| format!("{}", row[y])).collect();
        s.push_str(&format!("  action {b}: [{}]\n", vals.join(", ")));
    }
    s
}

/// max s subject to Σ_b p_b U[b][y] − s ≥ U[a][y] for allowed y, Σ p = 1, p ≥ 0.
fn max_min_gap(u: &[Vec<f64>], a: usize, allowed: &[usize]) -> Result<f64> {
    let bound = u.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())) * 2.0 + 1.0;
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let p: Vec<_> = (0..u.len()).map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    let s = lp.add_var(1.0, (-bound, bound));
    for &y in allowed {
        let mut expr: Vec<_> = p.iter().enumerate().map(|(b, &v)| (v, u[b][y])).collect();
        expr.push((s, -1.0));
        lp.add_constraint(expr, ComparisonOp::Ge, u[a][y]);
    }
    lp.add_constraint(p.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, 1.0);
    lp.solve().map(|sol| sol.objective()).map_err(|e| GameError::Lp {
        reason: e.to_string(),
        instance: describe_lp(u, a, allowed),
    })
}

/// max Σ_y g_y subject to Σ_b p_b U[b][y] − U[a][y] = g_y ≥ 0, Σ p = 1, p ≥ 0.
fn max_total_gap(u: &[Vec<f64>], a: usize) -> Result<f64> {
    let m = u[0].len();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let p: Vec<_> = (0..u.len()).map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    let g: Vec<_> = (0..m).map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
    for y in 0..m {
        let mut expr: Vec<_> = p.iter().enumerate().map(|(b, &v)| (v, u[b][y])).collect();
        expr.push((g[y], -1.0));
        lp.add_constraint(expr, ComparisonOp::Eq, u[a][y]);
    }
    lp.add_constraint(p.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, 1.0);
    let all: Vec<usize> = (0..m).collect();
    lp.solve().map(|sol| sol.objective()).map_err(|e| GameError::Lp {
        reason: e.to_string(),
        instance: describe_lp(u, a, &all),
    })
}

/// Generalized matching pennies. Matcher (row) earns `delta_m` on (a,a) and 1 on
/// (b,b); Clasher (column) earns 1 on (a,b) and `gamma_c` on (b,a).
pub fn matching_pennies(delta_m: f64, gamma_c: f64) -> Game {
    Game::new(
        vec!["Matcher".into(), "Clasher".into()],
        vec![vec!["a".into(), "b".into()], vec!["a".into(), "b".into()]],
        vec![vec![delta_m, 0.0, 0.0, 1.0], vec![0.0, 1.0, gamma_c, 0.0]],
    )
    .expect("matching pennies payoffs are well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mp(d: f64) -> Game {
        matching_pennies(d, 1.0)
    }

    #[test]
    fn expected_payoff_examples() {
        let g = mp(1.0);
        assert_eq!(g.expected_payoff(0, 0, &[1.0, 0.0]).unwrap(), 1.0);
        let g4 = mp(4.0);
        let v = g4.expected_payoff(1, 1, &[0.3, 0.7]).unwrap();
        assert!((v - 0.3).abs() < 1e-15);
        assert!(matches!(
            g.expected_payoff(0, 0, &[1.0]),
            Err(GameError::DimensionMismatch { .. })
        ));
        assert!(matches!(g.expected_payoff(0, 5, &[1.0, 0.0]), Err(GameError::InvalidAction { .. })));
    }

    #[test]
    fn best_response_examples() {
        let g = mp(1.0);
        let (set, v) = g.best_responses(0, &[0.5, 0.5]).unwrap();
        assert_eq!(set, vec![0, 1]);
        assert!((v - 0.5).abs() < 1e-15);
        // Clasher against σ_M(a) = 0.6: action a earns 0.4, action b earns 0.6.
        let g4 = mp(4.0);
        let (set, v) = g4.best_responses(1, &[0.6, 0.4]).unwrap();
        assert_eq!(set, vec![1]);
        assert!((v - 0.6).abs() < 1e-15);
    }

    #[test]
    fn dominant_action_is_unique_best_response_on_grid() {
        let g = Game::bimatrix(&[vec![2.0, 3.0], vec![1.0, 2.5]], &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        for k in 0..=20 {
            let x = k as f64 / 20.0;
            assert_eq!(g.best_responses(0, &[x, 1.0 - x]).unwrap().0, vec![0]);
        }
    }

    #[test]
    fn dominance_examples() {
        let g = mp(1.0);
        for i in 0..2 {
            for a in 0..2 {
                assert!(!g.strictly_dominated(i, a, &[0, 1]).unwrap());
                assert!(!g.weakly_dominated(i, a).unwrap());
            }
        }
        let g = Game::bimatrix(&[vec![2.0, 2.0], vec![1.0, 1.0]], &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(g.strictly_dominated(0, 1, &[0, 1]).unwrap());
        let g = Game::bimatrix(
            &[vec![3.0, 0.0], vec![1.0, 1.0], vec![0.0, 3.0]],
            &[vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]],
        )
        .unwrap();
        assert!(g.strictly_dominated(0, 1, &[0, 1]).unwrap());
        assert!(!g.strictly_dominated(0, 0, &[0, 1]).unwrap());
        let g = Game::bimatrix(&[vec![1.0, 1.0], vec![1.0, 0.0]], &[vec![0.0; 2], vec![0.0; 2]]).unwrap();
        assert!(g.weakly_dominated(0, 1).unwrap());
        assert!(!g.strictly_dominated(0, 1, &[0, 1]).unwrap());
        assert!(!g.weakly_dominated(0, 0).unwrap());
    }

    #[test]
    fn rationalizability_two_step() {
        let g = Game::bimatrix(&[vec![2.0, 2.0], vec![1.0, 1.0]], &[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(g.k_rationalizable_sets(Some(1)).unwrap(), vec![vec![0], vec![0, 1]]);
        assert_eq!(g.k_rationalizable_sets(Some(2)).unwrap(), vec![vec![0], vec![0]]);
        assert_eq!(g.solvability_depth().unwrap(), 2);
        let ne = g.nash_equilibria().unwrap();
        assert_eq!(ne, vec![MixedProfile::pure(&g, &[0, 0])]);
        assert_eq!(mp(1.0).k_rationalizable_sets(None).unwrap(), vec![vec![0, 1], vec![0, 1]]);
    }

    #[test]
    fn nash_examples() {
        let ne = mp(4.0).nash_equilibria().unwrap();
        assert_eq!(ne.len(), 1);
        assert!((ne[0].dist[0][0] - 0.5).abs() < 1e-12);
        assert!((ne[0].dist[1][0] - 0.2).abs() < 1e-12);
        let coord = Game::bimatrix(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let ne = coord.nash_equilibria().unwrap();
        assert_eq!(ne.len(), 3);
        let via_support = coord.nash_support_enumeration().unwrap().0;
        assert_eq!(via_support.len(), 3);
    }

    #[test]
    fn nash_rejects_large_games() {
        let big = vec![vec![0.0; 5]; 5];
        let g = Game::bimatrix(&big, &big).unwrap();
        assert!(matches!(g.nash_equilibria(), Err(GameError::UnsupportedSize(_))));
    }

    #[test]
    fn bonus_examples() {
        let g = mp(1.0);
        assert_eq!(g.payoff_bonus(0, 0, 0.0).unwrap(), g);
        assert_eq!(g.payoff_bonus_by_profile(0, 0, &[3.0, 0.0]).unwrap(), mp(4.0));
        let c = g.payoff_bonus(0, 0, 3.0).unwrap();
        assert_eq!(c.payoff_tensor(0), &[4.0, 3.0, 0.0, 1.0]);
        let b = g.payoff_bonus(1, 1, 2.0).unwrap();
        let v0 = g.expected_payoff(1, 1, &[0.3, 0.7]).unwrap();
        let v1 = b.expected_payoff(1, 1, &[0.3, 0.7]).unwrap();
        assert!((v1 - v0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn opponent_indexing_three_players() {
        let actions = vec![vec!["x".into(), "y".into()], vec!["p".into(), "q".into(), "r".into()], vec!["s".into(), "t".into()]];
        let size = 12;
        let payoffs = (0..3).map(|k| (0..size).map(|x| (x * (k + 1)) as f64).collect()).collect();
        let g = Game::new(vec!["A".into(), "B".into(), "C".into()], actions, payoffs).unwrap();
        assert_eq!(g.num_opponent_profiles(1), 4);
        for y in 0..4 {
            let opp = g.opponent_profile(1, y);
            let full = [opp[0], 2, opp[1]];
            assert_eq!(g.opponent_index(1, &full), y);
        }
        // Profile (1, 2, 0) has flat index 1*6 + 2*2 + 0 = 10.
        assert_eq!(g.payoff(0, &[1, 2, 0]), 10.0);
        let u = g.payoff_matrix(1);
        assert_eq!(u[2][2], 10.0 * 2.0);
    }

    #[test]
    fn invalid_games_rejected() {
        assert!(matches!(
            Game::new(vec!["a".into()], vec![vec!["x".into()]], vec![vec![0.0]]),
            Err(GameError::TooFewPlayers(1))
        ));
        let r = Game::new(
            vec!["a".into(), "b".into()],
            vec![vec!["x".into()], vec!["y".into(), "z".into()]],
            vec![vec![0.0, 1.0], vec![0.0]],
        );
        assert!(matches!(r, Err(GameError::DimensionMismatch { player: 1, .. })));
        let r = Game::new(
            vec!["a".into(), "b".into()],
            vec![vec!["x".into()], vec!["y".into()]],
            vec![vec![f64::NAN], vec![0.0]],
        );
        assert!(matches!(r, Err(GameError::NonFinitePayoff { .. })));
    }
}
