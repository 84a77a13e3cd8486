//! Best-response maps, equilibrium fixed points, learning dynamics and
//! vanishing-cost experiments.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::DirichletPrior;
use crate::game::{Game, GameError, MixedProfile};
use crate::stopping::{ActionTimeDistribution, PolicyKind, StopBelief, StoppingError, StoppingPolicy, StoppingProblem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("invalid extended game: {0}")]
    InvalidExtendedGame(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Stopping(#[from] StoppingError),
}

pub type Result<T> = std::result::Result<T, EquilibriumError>;

/// A game with a prior and a sampling cost per player. A player with an analogy
/// partition observes only the class of each sampled opponent profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedGame {
    game: Game,
    priors: Vec<DirichletPrior>,
    costs: Vec<f64>,
    partitions: Vec<Option<Vec<usize>>>,
}

impl ExtendedGame {
    pub fn new(game: Game, priors: Vec<DirichletPrior>, costs: Vec<f64>) -> Result<Self> {
        let n = game.num_players();
        let ext = ExtendedGame { game, priors, costs, partitions: vec![None; n] };
        ext.validate()?;
        Ok(ext)
    }

    /// Uniform Dirichlet priors and a common cost.
    pub fn uniform(game: Game, cost: f64) -> Result<Self> {
        let priors = (0..game.num_players())
            .map(|i| DirichletPrior::uniform(game.num_opponent_profiles(i)))
            .collect();
        let n = game.num_players();
        ExtendedGame::new(game, priors, vec![cost; n])
    }

    /// Sets player `i`'s analogy partition (class index per opponent profile) and prior over classes.
    pub fn with_partition(mut self, i: usize, partition: Vec<usize>, prior: DirichletPrior) -> Result<Self> {
        if i >= self.game.num_players() {
            return Err(GameError::InvalidPlayer(i).into());
        }
        check_partition(&partition, self.game.num_opponent_profiles(i))?;
        self.partitions[i] = Some(partition);
        self.priors[i] = prior;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let n = self.game.num_players();
        if self.priors.len() != n || self.costs.len() != n || self.partitions.len() != n {
            return Err(EquilibriumError::InvalidExtendedGame(format!(
                "need one prior, cost and partition slot per player ({n})"
            )));
        }
        for i in 0..n {
            let expected = self.observation_size(i);
            if self.priors[i].size() != expected {
                return Err(EquilibriumError::InvalidExtendedGame(format!(
                    "prior of player {i} has {} components, expected {expected}",
                    self.priors[i].size()
                )));
            }
            let c = self.costs[i];
            if !(c.is_finite() && c > 0.0) {
                return Err(EquilibriumError::InvalidExtendedGame(format!("cost of player {i} must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn game(&self) -> &Game {
        &self.game
    }

    pub fn priors(&self) -> &[DirichletPrior] {
        &self.priors
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn partition(&self, i: usize) -> Option<&[usize]> {
        self.partitions[i].as_deref()
    }

    pub fn with_costs(&self, costs: Vec<f64>) -> Result<Self> {
        let ext = ExtendedGame { costs, ..self.clone() };
        ext.validate()?;
        Ok(ext)
    }

    /// Same extended game with every player's cost set to `c`.
    pub fn with_common_cost(&self, c: f64) -> Result<Self> {
        self.with_costs(vec![c; self.game.num_players()])
    }

    pub fn with_priors(&self, priors: Vec<DirichletPrior>) -> Result<Self> {
        let ext = ExtendedGame { priors, ..self.clone() };
        ext.validate()?;
        Ok(ext)
    }

    pub fn with_game(&self, game: Game) -> Result<Self> {
        let ext = ExtendedGame { game, ..self.clone() };
        ext.validate()?;
        Ok(ext)
    }

    /// Size of player `i`'s observation alphabet.
    pub fn observation_size(&self, i: usize) -> usize {
        match &self.partitions[i] {
            Some(p) => p.iter().max().map_or(0, |m| m + 1),
            None => self.game.num_opponent_profiles(i),
        }
    }

    /// Payoffs `U[a][z]` over player `i`'s observation alphabet.
    pub fn observation_payoffs(&self, i: usize) -> Vec<Vec<f64>> {
        let u = self.game.payoff_matrix(i);
        match &self.partitions[i] {
            Some(p) => coarse_payoffs(&u, p),
            None => u,
        }
    }

    pub fn stopping_problem(&self, i: usize) -> Result<StoppingProblem> {
        let p = match &self.partitions[i] {
            None => StoppingProblem::new(&self.game, i, self.priors[i].clone(), self.costs[i])?,
            Some(_) => StoppingProblem::from_payoffs(self.observation_payoffs(i), self.priors[i].clone(), self.costs[i])?,
        };
        Ok(p)
    }

    /// Distribution of player `i`'s observations when others play `sigma`.
    pub fn observation_distribution(&self, i: usize, sigma: &MixedProfile) -> Result<Vec<f64>> {
        let q = self.game.opponent_distribution(i, sigma)?;
        Ok(match &self.partitions[i] {
            Some(p) => pushforward(&q, p, self.observation_size(i)),
            None => q,
        })
    }
}

fn check_partition(partition: &[usize], size: usize) -> Result<()> {
    if partition.len() != size {
        return Err(EquilibriumError::InvalidArgument(format!(
            "partition covers {} opponent profiles, expected {size}",
            partition.len()
        )));
    }
    let k = partition.iter().max().map_or(0, |m| m + 1);
    for z in 0..k {
        if !partition.contains(&z) {
            return Err(EquilibriumError::InvalidArgument(format!("partition is not surjective: class {z} is empty")));
        }
    }
    Ok(())
}

/// Within-class average payoffs `ū(a, z) = Σ_{y ∈ f⁻¹(z)} u(a, y) / |f⁻¹(z)|`.
pub fn coarse_payoffs(u: &[Vec<f64>], partition: &[usize]) -> Vec<Vec<f64>> {
    let k = partition.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &z in partition {
        sizes[z] += 1;
    }
    u.iter()
        .map(|row| {
            let mut sums = vec![0.0; k];
            for (y, &z) in partition.iter().enumerate() {
                sums[z] += row[y];
            }
            sums.iter().zip(&sizes).map(|(s, &n)| s / n as f64).collect()
        })
        .collect()
}

/// Class probabilities `q(z) = Σ_{y ∈ f⁻¹(z)} σ(y)`.
pub fn pushforward(q: &[f64], partition: &[usize], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; classes];
    for (y, &z) in partition.iter().enumerate() {
        out[z] += q[y];
    }
    out
}

/// Solved policies for every player; maps opponents' play to own action distributions.
#[derive(Debug, Clone)]
pub struct BestResponseMap {
    ext: ExtendedGame,
    policies: Vec<StoppingPolicy>,
}

impl BestResponseMap {
    pub fn new(ext: &ExtendedGame, kind: PolicyKind) -> Result<Self> {
        let problems = (0..ext.game.num_players())
            .map(|i| ext.stopping_problem(i))
            .collect::<Result<Vec<_>>>()?;
        let policies = problems
            .par_iter()
            .map(|p| match kind {
                PolicyKind::Optimal => p.solve(),
                PolicyKind::Myopic => p.myopic_policy(),
            })
            .collect();
        Ok(BestResponseMap { ext: ext.clone(), policies })
    }

    pub fn extended_game(&self) -> &ExtendedGame {
        &self.ext
    }

    pub fn policy(&self, i: usize) -> &StoppingPolicy {
        &self.policies[i]
    }

    pub fn num_players(&self) -> usize {
        self.policies.len()
    }

    pub fn joint_action_time(&self, i: usize, sigma: &MixedProfile) -> Result<ActionTimeDistribution> {
        let obs = self.ext.observation_distribution(i, sigma)?;
        Ok(self.policies[i].joint_action_time(&obs)?)
    }

    /// `b_i(σ_{-i})`: the distribution of player `i`'s chosen action.
    pub fn respond_player(&self, i: usize, sigma: &MixedProfile) -> Result<Vec<f64>> {
        let mut d = self.joint_action_time(i, sigma)?.action_marginal();
        let s: f64 = d.iter().sum();
        d.iter_mut().for_each(|x| *x /= s);
        Ok(d)
    }

    pub fn respond(&self, sigma: &MixedProfile) -> Result<MixedProfile> {
        let dist = (0..self.num_players())
            .map(|i| self.respond_player(i, sigma))
            .collect::<Result<Vec<_>>>()?;
        Ok(MixedProfile::new(dist))
    }

    /// `max_i ‖b_i(σ_{-i}) − σ_i‖_∞`, evaluated directly.
    pub fn residual(&self, sigma: &MixedProfile) -> Result<f64> {
        Ok(self.respond(sigma)?.distance(sigma))
    }

    /// Players whose root decision is a stop with several optimal actions.
    pub fn root_ties(&self) -> Vec<usize> {
        (0..self.num_players()).filter(|&i| self.policies[i].root_tie()).collect()
    }

    /// Exact `d b_i(σ_j)[1] / d σ_j[1]` in a 2x2 game.
    pub fn derivative_2x2(&self, i: usize, sigma: &MixedProfile) -> Result<f64> {
        self.require_2x2()?;
        let j = 1 - i;
        let mut dir = MixedProfile::new(vec![vec![0.0; 2], vec![0.0; 2]]);
        dir.dist[j] = vec![-1.0, 1.0];
        // Opponent profiles of i are j's actions, so the direction is linear in σ_j.
        let raw = dir.dist[j].clone();
        let dir_obs = match self.ext.partition(i) {
            Some(p) => pushforward(&raw, p, self.ext.observation_size(i)),
            None => raw,
        };
        let obs = self.ext.observation_distribution(i, sigma)?;
        let (dist, dp) = self.policies[i].joint_action_time_derivative(&obs, &dir_obs)?;
        let total = dist.total();
        Ok(dp[1].iter().sum::<f64>() / total)
    }

    fn require_2x2(&self) -> Result<()> {
        let g = &self.ext.game;
        if g.num_players() != 2 || g.num_actions(0) != 2 || g.num_actions(1) != 2 {
            return Err(EquilibriumError::Unsupported("needs a 2-player game with 2 actions each".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Auto,
    Bisection,
    Damped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub method: SolveMethod,
    pub tol: f64,
    pub max_iter: usize,
    pub warm_start: Option<MixedProfile>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { method: SolveMethod::Auto, tol: 1e-8, max_iter: 10_000, warm_start: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub sigma: MixedProfile,
    pub residual: f64,
    pub status: SolveStatus,
    pub method: String,
    pub iterations: usize,
    /// Every bracketed root found by bisection, as profiles.
    pub roots: Vec<MixedProfile>,
    pub action_time: Vec<ActionTimeDistribution>,
    pub stopping_beliefs: Vec<Vec<StopBelief>>,
    pub diagnostics: Vec<String>,
}

impl EquilibriumResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Finds a profile with `‖b(σ) − σ‖_∞ ≤ tol`.
///
/// Two-player games where some player has two actions reduce to a scalar root
/// search on that player's mixing probability; everything else uses damped
/// iteration with a Cesàro fallback and occasional Newton steps.
pub fn sse_solve(map: &BestResponseMap, opts: &SolveOptions) -> Result<EquilibriumResult> {
    let game = map.ext.game();
    let start = match &opts.warm_start {
        Some(w) => {
            w.validate(game)?;
            w.clone()
        }
        None => map.respond(&MixedProfile::uniform(game))?,
    };
    let mut diagnostics = Vec::new();
    let ties = map.root_ties();
    if !ties.is_empty() {
        diagnostics.push(format!("root-level ties make the lowest-index selection binding for players {ties:?}"));
    }
    let r0 = map.residual(&start)?;
    if r0 <= opts.tol {
        return finish(map, start, r0, SolveStatus::Converged, "start", 0, Vec::new(), diagnostics);
    }
    let bisect_player = bisection_player(game);
    let method = match (opts.method, bisect_player) {
        (SolveMethod::Bisection, None) => {
            return Err(EquilibriumError::Unsupported(
                "bisection needs 2 players with one of them having 2 actions".into(),
            ))
        }
        (SolveMethod::Bisection, Some(p)) | (SolveMethod::Auto, Some(p)) => Some(p),
        _ => None,
    };
    match method {
        Some(p) => {
            let (roots, iterations) = bisection_roots(map, p, opts.tol)?;
            let target = opts.warm_start.as_ref().map_or(0.5, |w| w.dist[p][1]);
            let best = roots
                .iter()
                .min_by(|a, b| {
                    (a.dist[p][1] - target)
                        .abs()
                        .partial_cmp(&(b.dist[p][1] - target).abs())
                        .expect("finite roots")
                })
                .cloned()
                .ok_or_else(|| EquilibriumError::Unsupported("no root bracketed".into()))?;
            let residual = map.residual(&best)?;
            let status = if residual <= opts.tol { SolveStatus::Converged } else { SolveStatus::MaxIter };
            if roots.len() > 1 {
                diagnostics.push(format!("{} equilibria bracketed", roots.len()));
            }
            finish(map, best, residual, status, "bisection", iterations, roots, diagnostics)
        }
        None => {
            let (sigma, residual, iterations, notes) = damped(map, start, opts)?;
            diagnostics.extend(notes);
            let status = if residual <= opts.tol { SolveStatus::Converged } else { SolveStatus::MaxIter };
            finish(map, sigma, residual, status, "damped", iterations, Vec::new(), diagnostics)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    map: &BestResponseMap,
    sigma: MixedProfile,
    residual: f64,
    status: SolveStatus,
    method: &str,
    iterations: usize,
    roots: Vec<MixedProfile>,
    diagnostics: Vec<String>,
) -> Result<EquilibriumResult> {
    let mut action_time = Vec::new();
    let mut stopping_beliefs = Vec::new();
    for i in 0..map.num_players() {
        let obs = map.ext.observation_distribution(i, &sigma)?;
        action_time.push(map.policies[i].joint_action_time(&obs)?);
        stopping_beliefs.push(map.policies[i].stopping_belief_distribution(&obs)?);
    }
    Ok(EquilibriumResult {
        sigma,
        residual,
        status,
        method: method.to_string(),
        iterations,
        roots,
        action_time,
        stopping_beliefs,
        diagnostics,
    })
}

fn bisection_player(game: &Game) -> Option<usize> {
    if game.num_players() != 2 {
        return None;
    }
    (0..2).find(|&p| game.num_actions(p) == 2)
}

/// Profile where `p` plays action 1 with probability `x` and the other player best-responds.
fn profile_at(map: &BestResponseMap, p: usize, x: f64) -> Result<MixedProfile> {
    let game = map.ext.game();
    let q = 1 - p;
    let mut dist = vec![Vec::new(), Vec::new()];
    dist[p] = vec![1.0 - x, x];
    dist[q] = vec![1.0 / game.num_actions(q) as f64; game.num_actions(q)];
    let mut sigma = MixedProfile::new(dist);
    sigma.dist[q] = map.respond_player(q, &sigma)?;
    Ok(sigma)
}

fn bisection_roots(map: &BestResponseMap, p: usize, tol: f64) -> Result<(Vec<MixedProfile>, usize)> {
    const GRID: usize = 65;
    let g = |x: f64| -> Result<f64> {
        let s = profile_at(map, p, x)?;
        Ok(map.respond_player(p, &s)?[1] - x)
    };
    let xs: Vec<f64> = (0..GRID).map(|k| k as f64 / (GRID - 1) as f64).collect();
    let gs = xs.iter().map(|&x| g(x)).collect::<Result<Vec<_>>>()?;
    let mut roots = Vec::new();
    let mut iterations = GRID;
    let push = |x: f64, roots: &mut Vec<f64>| {
        if !roots.iter().any(|r: &f64| (r - x).abs() < 1e-12) {
            roots.push(x);
        }
    };
    let mut found = Vec::new();
    for k in 0..GRID {
        if gs[k].abs() <= tol / 2.0 {
            push(xs[k], &mut found);
            continue;
        }
        if k + 1 < GRID && gs[k + 1].abs() > tol / 2.0 && (gs[k] > 0.0) != (gs[k + 1] > 0.0) {
            let (mut a, mut b) = (xs[k], xs[k + 1]);
            let ga = gs[k];
            let mut mid = 0.5 * (a + b);
            for _ in 0..200 {
                mid = 0.5 * (a + b);
                let gm = g(mid)?;
                iterations += 1;
                if gm.abs() <= tol / 2.0 || b - a < 1e-15 {
                    break;
                }
                if (gm > 0.0) == (ga > 0.0) {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            push(mid, &mut found);
        }
    }
    for x in found {
        roots.push(profile_at(map, p, x)?);
    }
    Ok((roots, iterations))
}

fn reduce(sigma: &MixedProfile) -> Vec<f64> {
    sigma
        .dist
        .iter()
        .flat_map(|d| d[..d.len() - 1].iter().cloned())
        .collect()
}

fn expand(x: &[f64], sizes: &[usize]) -> MixedProfile {
    let mut dist = Vec::with_capacity(sizes.len());
    let mut k = 0;
    for &n in sizes {
        let mut d: Vec<f64> = x[k..k + n - 1].iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let s: f64 = d.iter().sum();
        if s > 1.0 {
            d.iter_mut().for_each(|v| *v /= s);
        }
        let rest = 1.0 - d.iter().sum::<f64>();
        d.push(rest.max(0.0));
        k += n - 1;
        dist.push(d);
    }
    MixedProfile::new(dist)
}

fn mix(a: &MixedProfile, b: &MixedProfile, w: f64) -> MixedProfile {
    MixedProfile::new(
        a.dist
            .iter()
            .zip(&b.dist)
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (1.0 - w) * p + w * q).collect())
            .collect(),
    )
}

/// Newton step on `reduce(b(σ)) − reduce(σ)` with a forward-difference Jacobian.
fn newton_step(map: &BestResponseMap, sigma: &MixedProfile, b: &MixedProfile) -> Result<Option<MixedProfile>> {
    let sizes: Vec<usize> = sigma.dist.iter().map(Vec::len).collect();
    let x = reduce(sigma);
    let n = x.len();
    if n == 0 {
        return Ok(None);
    }
    let g0: Vec<f64> = reduce(b).iter().zip(&x).map(|(bv, xv)| bv - xv).collect();
    let h = 1e-6;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let mut xp = x.clone();
        xp[k] += if xp[k] + h <= 1.0 { h } else { -h };
        let step = xp[k] - x[k];
        let sp = expand(&xp, &sizes);
        let gp: Vec<f64> = reduce(&map.respond(&sp)?).iter().zip(&xp).map(|(bv, xv)| bv - xv).collect();
        for r in 0..n {
            jac[(r, k)] = (gp[r] - g0[r]) / step;
        }
    }
    let rhs = DVector::from_iterator(n, g0.iter().map(|v| -v));
    Ok(jac.lu().solve(&rhs).map(|dx| {
        let xn: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + d).collect();
        expand(&xn, &sizes)
    }))
}

fn damped(
    map: &BestResponseMap,
    start: MixedProfile,
    opts: &SolveOptions,
) -> Result<(MixedProfile, f64, usize, Vec<String>)> {
    const LAMBDA_MIN: f64 = 1e-3;
    let mut notes = Vec::new();
    let mut sigma = start;
    let mut b = map.respond(&sigma)?;
    let mut r = b.distance(&sigma);
    let mut best = (sigma.clone(), r);
    let mut lambda = 0.5;
    let mut cesaro_n: Option<usize> = None;
    for it in 1..=opts.max_iter {
        if r <= opts.tol {
            return Ok((sigma, r, it - 1, notes));
        }
        let w = match cesaro_n.as_mut() {
            Some(n) => {
                *n += 1;
                1.0 / (*n as f64 + 1.0)
            }
            None => lambda,
        };
        let next = mix(&sigma, &b, w);
        let nb = map.respond(&next)?;
        let nr = nb.distance(&next);
        if cesaro_n.is_none() && nr > r {
            lambda *= 0.5;
            if lambda < LAMBDA_MIN {
                notes.push(format!("switched to Cesàro averaging at iteration {it}"));
                cesaro_n = Some(1);
            }
        }
        sigma = next;
        b = nb;
        r = nr;
        if it % 50 == 0 {
            if let Some(cand) = newton_step(map, &sigma, &b)? {
                let cb = map.respond(&cand)?;
                let cr = cb.distance(&cand);
                if cr < r {
                    sigma = cand;
                    b = cb;
                    r = cr;
                }
            }
        }
        if r < best.1 {
            best = (sigma.clone(), r);
        }
    }
    if r <= opts.tol {
        return Ok((sigma, r, opts.max_iter, notes));
    }
    notes.push(format!("no convergence within {} iterations; returning best iterate", opts.max_iter));
    Ok((best.0, best.1, opts.max_iter, notes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DynamicsVariant {
    Cesaro,
    Exponential { beta: f64 },
    FinitePopulation { n: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsTrace {
    pub variant: DynamicsVariant,
    pub sigmas: Vec<MixedProfile>,
    /// `‖b(σ^n) − σ^n‖_∞` for each recorded step.
    pub residuals: Vec<f64>,
    pub seed: Option<u64>,
}

impl DynamicsTrace {
    pub fn last(&self) -> &MixedProfile {
        self.sigmas.last().expect("trace holds the initial profile")
    }

    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().expect("trace holds the initial residual")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,player,action,prob,residual\n");
        for (n, (sig, r)) in self.sigmas.iter().zip(&self.residuals).enumerate() {
            for (i, d) in sig.dist.iter().enumerate() {
                for (a, p) in d.iter().enumerate() {
                    s.push_str(&format!("{n},{i},{a},{p},{r}\n"));
                }
            }
        }
        s
    }
}

/// Runs `steps` periods of the dynamic process from `sigma0`.
pub fn dynamics_run(
    map: &BestResponseMap,
    sigma0: &MixedProfile,
    variant: &DynamicsVariant,
    steps: usize,
) -> Result<DynamicsTrace> {
    dynamics_run_until(map, sigma0, variant, steps, None)
}

/// Like [`dynamics_run`], stopping early once the residual falls below `tol`.
pub fn dynamics_run_until(
    map: &BestResponseMap,
    sigma0: &MixedProfile,
    variant: &DynamicsVariant,
    steps: usize,
    tol: Option<f64>,
) -> Result<DynamicsTrace> {
    let game = map.ext.game();
    sigma0.validate(game)?;
    match variant {
        DynamicsVariant::Exponential { beta } if !(*beta > 0.0 && *beta < 1.0) => {
            return Err(EquilibriumError::InvalidArgument(format!("beta must lie in (0,1), got {beta}")))
        }
        DynamicsVariant::FinitePopulation { n: 0, .. } => {
            return Err(EquilibriumError::InvalidArgument("population size must be at least 1".into()))
        }
        _ => {}
    }
    let mut sigma = sigma0.clone();
    let mut b = map.respond(&sigma)?;
    let mut sigmas = vec![sigma.clone()];
    let mut residuals = vec![b.distance(&sigma)];
    let (mut rng, mut counts, seed) = match variant {
        DynamicsVariant::FinitePopulation { n, seed } => {
            let counts: Vec<Vec<f64>> = sigma0.dist.iter().map(|d| d.iter().map(|p| p * *n as f64).collect()).collect();
            (Some(ChaCha8Rng::seed_from_u64(*seed)), counts, Some(*seed))
        }
        _ => (None, Vec::new(), None),
    };
    for n in 1..=steps {
        if tol.is_some_and(|t| residuals[residuals.len() - 1] < t) {
            break;
        }
        sigma = match variant {
            DynamicsVariant::Cesaro => mix(&sigma, &b, 1.0 / (n as f64 + 1.0)),
            DynamicsVariant::Exponential { beta } => mix(&sigma, &b, 1.0 - beta),
            DynamicsVariant::FinitePopulation { n: pop, .. } => {
                let rng = rng.as_mut().expect("population variant has a generator");
                for (i, d) in b.dist.iter().enumerate() {
                    for _ in 0..*pop {
                        counts[i][sample_index(rng, d)] += 1.0;
                    }
                }
                let denom = (n as f64 + 1.0) * *pop as f64;
                MixedProfile::new(counts.iter().map(|c| c.iter().map(|x| x / denom).collect()).collect())
            }
        };
        b = map.respond(&sigma)?;
        residuals.push(b.distance(&sigma));
        sigmas.push(sigma.clone());
    }
    Ok(DynamicsTrace { variant: variant.clone(), sigmas, residuals, seed })
}

/// Inverse-CDF draw from a probability vector.
fn sample_index(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    p.iter().rposition(|&w| w > 0.0).unwrap_or(p.len() - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Exact `b_i′` from the differentiated forward pass.
    pub b_derivatives: [f64; 2],
    /// Central-difference estimates with step `h`.
    pub fd_derivatives: [f64; 2],
    pub product: f64,
    /// Eigenvalues of `[[−1, b_0′], [b_1′, −1]]` as `(re, im)`.
    pub eigenvalues: [(f64, f64); 2],
    pub stable: bool,
    /// True when some player's mixing probability is at 0 or 1.
    pub boundary: bool,
}

/// Linear stability of the dynamic process at `sigma_star` in a 2x2 game.
pub fn stability_check(map: &BestResponseMap, sigma_star: &MixedProfile, h: f64) -> Result<StabilityReport> {
    map.require_2x2()?;
    sigma_star.validate(map.ext.game())?;
    let mut exact = [0.0; 2];
    let mut fd = [0.0; 2];
    let mut boundary = false;
    for i in 0..2 {
        let j = 1 - i;
        exact[i] = map.derivative_2x2(i, sigma_star)?;
        let x = sigma_star.dist[j][1];
        if x <= 0.0 || x >= 1.0 {
            boundary = true;
        }
        let lo = (x - h).max(0.0);
        let hi = (x + h).min(1.0);
        let at = |v: f64| -> Result<f64> {
            let mut s = sigma_star.clone();
            s.dist[j] = vec![1.0 - v, v];
            Ok(map.respond_player(i, &s)?[1])
        };
        fd[i] = (at(hi)? - at(lo)?) / (hi - lo);
    }
    let product = exact[0] * exact[1];
    let eigenvalues = if product >= 0.0 {
        let r = product.sqrt();
        [(-1.0 + r, 0.0), (-1.0 - r, 0.0)]
    } else {
        let r = (-product).sqrt();
        [(-1.0, r), (-1.0, -r)]
    };
    let stable = eigenvalues.iter().all(|(re, _)| *re < 0.0);
    Ok(StabilityReport { b_derivatives: exact, fd_derivatives: fd, product, eigenvalues, stable, boundary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub cost: f64,
    pub result: EquilibriumResult,
    /// Distance to the nearest Nash equilibrium, when those are computable.
    pub nash_distance: Option<f64>,
}

/// Nearest sup-norm distance from `sigma` to any profile in `targets`.
pub fn nearest_distance(sigma: &MixedProfile, targets: &[MixedProfile]) -> Option<f64> {
    targets.iter().map(|t| sigma.distance(t)).reduce(f64::min)
}

/// Solves at each cost in order, every player paying that cost. With `warm`
/// each solve starts from the previous equilibrium; otherwise points run in parallel.
pub fn cost_sweep(
    ext: &ExtendedGame,
    costs: &[f64],
    kind: PolicyKind,
    opts: &SolveOptions,
    warm: bool,
) -> Result<Vec<SweepPoint>> {
    if let Some(c) = costs.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(EquilibriumError::InvalidArgument(format!("costs must be positive, got {c}")));
    }
    let nash = ext.game().nash_equilibria().ok();
    let solve_at = |c: f64, warm_start: Option<MixedProfile>| -> Result<SweepPoint> {
        let map = BestResponseMap::new(&ext.with_common_cost(c)?, kind)?;
        let o = SolveOptions { warm_start, ..opts.clone() };
        let result = sse_solve(&map, &o)?;
        let nash_distance = nash.as_ref().and_then(|ne| nearest_distance(&result.sigma, ne));
        Ok(SweepPoint { cost: c, result, nash_distance })
    };
    if warm {
        let mut out: Vec<SweepPoint> = Vec::with_capacity(costs.len());
        for &c in costs {
            let ws = out.last().map(|p| p.result.sigma.clone()).or_else(|| opts.warm_start.clone());
            out.push(solve_at(c, ws)?);
        }
        Ok(out)
    } else {
        costs.par_iter().map(|&c| solve_at(c, opts.warm_start.clone())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityReport {
    pub target: Vec<usize>,
    pub reached: bool,
    pub final_distance: f64,
    pub tolerance: f64,
    /// `(cost, distance to target, converged)` along the sweep.
    pub path: Vec<(f64, f64, bool)>,
}

/// Sweeps costs with Dirichlet priors of the given mean and concentration and
/// reports whether equilibria approach the pure profile `target`.
pub fn reachability_experiment(
    game: &Game,
    target: &[usize],
    prior_centers: &[Vec<f64>],
    concentration: f64,
    costs: &[f64],
    tolerance: f64,
) -> Result<ReachabilityReport> {
    if target.len() != game.num_players() || prior_centers.len() != game.num_players() {
        return Err(EquilibriumError::InvalidArgument("need one target action and prior center per player".into()));
    }
    let priors = prior_centers
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if m.len() != game.num_opponent_profiles(i) || m.iter().any(|x| *x <= 0.0) {
                return Err(EquilibriumError::InvalidArgument(format!("prior center of player {i} must be interior")));
            }
            DirichletPrior::with_mean(m, concentration)
                .map_err(|e| EquilibriumError::InvalidArgument(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let first = *costs.first().ok_or_else(|| EquilibriumError::InvalidArgument("empty cost grid".into()))?;
    let ext = ExtendedGame::new(game.clone(), priors, vec![first; game.num_players()])?;
    let goal = MixedProfile::pure(game, target);
    let sweep = cost_sweep(&ext, costs, PolicyKind::Optimal, &SolveOptions::default(), true)?;
    let path: Vec<(f64, f64, bool)> = sweep
        .iter()
        .map(|p| (p.cost, p.result.sigma.distance(&goal), p.result.converged()))
        .collect();
    let final_distance = path.last().map_or(f64::INFINITY, |p| p.1);
    Ok(ReachabilityReport {
        target: target.to_vec(),
        reached: final_distance <= tolerance,
        final_distance,
        tolerance,
        path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalizabilityPoint {
    pub cost: f64,
    pub supports: Vec<Vec<usize>>,
    pub certified_k: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalizabilityReport {
    /// `levels[k]` holds `A^k` per player; the last entry is the fixed point.
    pub levels: Vec<Vec<Vec<usize>>>,
    pub solvability_depth: usize,
    pub points: Vec<RationalizabilityPoint>,
    pub nondecreasing: bool,
    pub reaches_depth: bool,
}

/// Largest `k` (up to the last computed level) with every support inside `A^k`.
pub fn certified_level(levels: &[Vec<Vec<usize>>], supports: &[Vec<usize>]) -> usize {
    let mut k = 0;
    for (lvl, sets) in levels.iter().enumerate() {
        if supports.iter().zip(sets).all(|(s, a)| s.iter().all(|x| a.contains(x))) {
            k = lvl;
        } else {
            break;
        }
    }
    k
}

/// Solves along a cost grid and certifies the rationalizability level of each
/// equilibrium's support (actions with probability above `eps_supp`).
pub fn rationalizability_sweep(
    ext: &ExtendedGame,
    costs: &[f64],
    eps_supp: f64,
    opts: &SolveOptions,
) -> Result<RationalizabilityReport> {
    let mut levels = ext.game().rationalizability_levels()?;
    let depth = ext.game().solvability_depth()?;
    // Repeat the fixed point so that certification can reach the depth.
    while levels.len() <= depth {
        let last = levels.last().expect("non-empty").clone();
        levels.push(last);
    }
    let sweep = cost_sweep(ext, costs, PolicyKind::Optimal, opts, true)?;
    let points: Vec<RationalizabilityPoint> = sweep
        .iter()
        .map(|p| {
            let supports = p.result.sigma.supports(eps_supp);
            RationalizabilityPoint {
                cost: p.cost,
                certified_k: certified_level(&levels, &supports).min(depth),
                supports,
                residual: p.result.residual,
                converged: p.result.converged(),
            }
        })
        .collect();
    let nondecreasing = points.windows(2).all(|w| w[1].certified_k >= w[0].certified_k);
    let reaches_depth = points.last().is_some_and(|p| p.certified_k >= depth);
    Ok(RationalizabilityReport { levels, solvability_depth: depth, points, nondecreasing, reaches_depth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::matching_pennies;

    fn mp_ext(delta: f64, c: f64) -> ExtendedGame {
        ExtendedGame::uniform(matching_pennies(delta, 1.0), c).unwrap()
    }

    #[test]
    fn symmetric_best_response_at_half() {
        let map = BestResponseMap::new(&mp_ext(1.0, 0.05), PolicyKind::Optimal).unwrap();
        let half = MixedProfile::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let b = map.respond(&half).unwrap();
        assert!(b.distance(&half) < 1e-12, "{b:?}");
    }

    #[test]
    fn solve_matching_pennies() {
        let map = BestResponseMap::new(&mp_ext(1.0, 0.05), PolicyKind::Optimal).unwrap();
        let r = sse_solve(&map, &SolveOptions::default()).unwrap();
        assert!(r.converged());
        assert!(r.residual < 1e-8);
        assert!((r.sigma.dist[0][0] - 0.5).abs() < 1e-7);
        assert!((r.sigma.dist[1][0] - 0.5).abs() < 1e-7);
        assert!(map.residual(&r.sigma).unwrap() <= 1e-8);
        for d in &r.action_time {
            assert!((d.total() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn dominant_game_solves_at_start() {
        let g = Game::bimatrix(&[vec![2.0, 2.0], vec![1.0, 1.0]], &[vec![1.0, 0.5], vec![1.0, 0.5]]).unwrap();
        let map = BestResponseMap::new(&ExtendedGame::uniform(g, 0.05).unwrap(), PolicyKind::Optimal).unwrap();
        let r = sse_solve(&map, &SolveOptions::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.sigma.dist, vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn own_payoff_effect() {
        let solve = |d: f64| {
            let map = BestResponseMap::new(&mp_ext(d, 0.05), PolicyKind::Optimal).unwrap();
            sse_solve(&map, &SolveOptions::default()).unwrap().sigma.dist[0][0]
        };
        assert!(solve(4.0) > solve(1.0));
    }

    #[test]
    fn damped_and_bisection_agree() {
        let map = BestResponseMap::new(&mp_ext(4.0, 0.05), PolicyKind::Optimal).unwrap();
        let bis = sse_solve(&map, &SolveOptions::default()).unwrap();
        let dam = sse_solve(&map, &SolveOptions { method: SolveMethod::Damped, ..Default::default() }).unwrap();
        assert!(bis.converged() && dam.converged(), "{:?}", dam.diagnostics);
        assert!(bis.sigma.distance(&dam.sigma) < 1e-6);
    }

    #[test]
    fn fixed_point_trace_is_constant() {
        let map = BestResponseMap::new(&mp_ext(1.0, 0.05), PolicyKind::Optimal).unwrap();
        let half = MixedProfile::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let tr = dynamics_run(&map, &half, &DynamicsVariant::Cesaro, 20).unwrap();
        assert!(tr.sigmas.iter().all(|s| s.distance(&half) < 1e-12));
        assert!(tr.residuals.iter().all(|r| *r < 1e-12));
    }

    #[test]
    fn population_dynamics_replay_exactly() {
        let map = BestResponseMap::new(&mp_ext(1.0, 0.05), PolicyKind::Optimal).unwrap();
        let s0 = MixedProfile::new(vec![vec![0.9, 0.1], vec![0.1, 0.9]]);
        let v = DynamicsVariant::FinitePopulation { n: 10, seed: 7 };
        let a = dynamics_run(&map, &s0, &v, 50).unwrap();
        let b = dynamics_run(&map, &s0, &v, 50).unwrap();
        assert_eq!(a, b);
        for s in &a.sigmas {
            s.validate(map.extended_game().game()).unwrap();
        }
    }

    #[test]
    fn stability_matching_pennies() {
        let map = BestResponseMap::new(&mp_ext(1.0, 0.05), PolicyKind::Optimal).unwrap();
        let half = MixedProfile::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        let rep = stability_check(&map, &half, 1e-4).unwrap();
        assert!(rep.product <= 0.0);
        assert!(rep.stable);
        for k in 0..2 {
            assert!((rep.b_derivatives[k] - rep.fd_derivatives[k]).abs() < 1e-6, "{rep:?}");
            assert!((rep.eigenvalues[k].0 + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_identity_is_noop() {
        let g = matching_pennies(2.0, 1.0);
        let ext = ExtendedGame::uniform(g.clone(), 0.05).unwrap();
        let part = ext.clone().with_partition(0, vec![0, 1], DirichletPrior::uniform(2)).unwrap();
        assert_eq!(part.observation_payoffs(0), ext.observation_payoffs(0));
        assert!(ext.clone().with_partition(0, vec![1, 1], DirichletPrior::uniform(2)).is_err());
        let u = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 2.0]];
        assert_eq!(coarse_payoffs(&u, &[0, 1, 1]), vec![vec![1.0, 0.0], vec![0.0, 1.5]]);
    }

    #[test]
    fn certified_levels() {
        let levels = vec![
            vec![vec![0, 1], vec![0, 1]],
            vec![vec![0], vec![0, 1]],
            vec![vec![0], vec![0]],
        ];
        assert_eq!(certified_level(&levels, &[vec![0, 1], vec![1]]), 0);
        assert_eq!(certified_level(&levels, &[vec![0], vec![1]]), 1);
        assert_eq!(certified_level(&levels, &[vec![0], vec![0]]), 2);
    }
}
