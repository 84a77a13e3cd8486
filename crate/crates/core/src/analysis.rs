//! Executable checks of the model's qualitative predictions: comparative
//! statics of choice/time distributions, time-revealed indifference,
//! non-stopping under misspecified priors and analogy-partition limits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{ssd_compare, BeliefError, DirichletPrior, FiniteSupportPrior, Prior, SsdOrder};
use crate::equilibrium::{
    coarse_payoffs, cost_sweep, nearest_distance, EquilibriumError, ExtendedGame, SolveOptions,
};
use crate::game::{dot, Game, GameError, MixedProfile};
use crate::lattice::Lattice;
use crate::stopping::{ActionTimeDistribution, PolicyKind, StoppingError, StoppingPolicy, StoppingProblem};

/// Slack allowed in weak monotonicity comparisons.
pub const MONOTONE_SLACK: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("prior chain is not SSD-increasing between entries {0} and {1}")]
    NotSsdOrdered(usize, usize),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Stopping(#[from] StoppingError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Verdict of one `(σ, t)` cell across the parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellVerdict {
    pub sigma_index: usize,
    pub t: usize,
    pub violation: f64,
    pub pass: bool,
}

/// Exact polynomial representation checks for the σ statics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialCheck {
    pub degree: usize,
    /// Largest gap between the polynomial and the forward pass on the σ grid.
    pub max_eval_error: f64,
    /// Number of `t` whose derivative has nonnegative Bernstein coefficients.
    pub certified_by_coefficients: usize,
    pub derivative_nonnegative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticsReport {
    pub kind: String,
    pub action: usize,
    pub parameter_labels: Vec<String>,
    pub sigma_grid: Vec<Vec<f64>>,
    pub t_grid: Vec<usize>,
    /// `values[p][s][k] = P(action optimal at the stopping belief, τ ≤ t_k)` at parameter `p`, σ `s`.
    pub values: Vec<Vec<Vec<f64>>>,
    /// Same layout for the complementary event, when it is part of the claim.
    pub complement: Option<Vec<Vec<Vec<f64>>>>,
    /// Direction along which `values` must not decrease: across parameters, or across σ.
    pub along_sigma: bool,
    pub cells: Vec<CellVerdict>,
    pub worst_violation: f64,
    pub polynomial: Option<PolynomialCheck>,
    pub pass: bool,
}

impl StaticsReport {
    fn build(
        kind: &str,
        action: usize,
        parameter_labels: Vec<String>,
        sigma_grid: Vec<Vec<f64>>,
        t_grid: Vec<usize>,
        values: Vec<Vec<Vec<f64>>>,
        complement: Option<Vec<Vec<Vec<f64>>>>,
        along_sigma: bool,
        polynomial: Option<PolynomialCheck>,
    ) -> Self {
        let mut r = StaticsReport {
            kind: kind.to_string(),
            action,
            parameter_labels,
            sigma_grid,
            t_grid,
            values,
            complement,
            along_sigma,
            cells: Vec::new(),
            worst_violation: 0.0,
            polynomial,
            pass: false,
        };
        r.cells = r.compute_cells();
        r.worst_violation = r.cells.iter().map(|c| c.violation).fold(0.0, f64::max);
        r.pass = r.verdict();
        r
    }

    fn compute_cells(&self) -> Vec<CellVerdict> {
        let mut cells = Vec::new();
        for s in 0..self.sigma_grid.len() {
            for (k, &t) in self.t_grid.iter().enumerate() {
                let mut v: f64 = 0.0;
                if self.along_sigma {
                    if s > 0 {
                        for p in 0..self.values.len() {
                            v = v.max(self.values[p][s - 1][k] - self.values[p][s][k]);
                        }
                    }
                } else {
                    for p in 1..self.values.len() {
                        v = v.max(self.values[p - 1][s][k] - self.values[p][s][k]);
                        if let Some(c) = &self.complement {
                            v = v.max(c[p][s][k] - c[p - 1][s][k]);
                        }
                    }
                }
                cells.push(CellVerdict { sigma_index: s, t, violation: v, pass: v <= MONOTONE_SLACK });
            }
        }
        cells
    }

    fn verdict(&self) -> bool {
        let poly_ok = self
            .polynomial
            .as_ref()
            .is_none_or(|p| p.derivative_nonnegative && p.max_eval_error <= MONOTONE_SLACK);
        self.worst_violation <= MONOTONE_SLACK && poly_ok
    }

    /// Recomputes the verdict from the stored grids alone.
    pub fn recompute(&self) -> (f64, bool) {
        let worst = self.compute_cells().iter().map(|c| c.violation).fold(0.0, f64::max);
        let poly_ok = self
            .polynomial
            .as_ref()
            .is_none_or(|p| p.derivative_nonnegative && p.max_eval_error <= MONOTONE_SLACK);
        (worst, worst <= MONOTONE_SLACK && poly_ok)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("param,sigma,t,value,complement\n");
        for (p, label) in self.parameter_labels.iter().enumerate() {
            for (si, sigma) in self.sigma_grid.iter().enumerate() {
                let sig = sigma.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
                for (k, t) in self.t_grid.iter().enumerate() {
                    let comp = self.complement.as_ref().map_or(String::new(), |c| c[p][si][k].to_string());
                    s.push_str(&format!("{label},{sig},{t},{},{comp}\n", self.values[p][si][k]));
                }
            }
        }
        s
    }
}

/// `P(action ∈ A*, τ ≤ t)` and `P(action ∉ A*, τ ≤ t)` for each `t` in the grid.
fn cdf_pair(dist: &ActionTimeDistribution, action: usize, t_grid: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let h = dist.horizon();
    let in_set = &dist.in_optimal_set[action];
    let mut cum_in = Vec::with_capacity(h + 1);
    let mut cum_all = Vec::with_capacity(h + 1);
    let (mut a, mut b) = (0.0, 0.0);
    for t in 0..=h {
        a += in_set[t];
        b += dist.probs.iter().map(|r| r[t]).sum::<f64>();
        cum_in.push(a);
        cum_all.push(b);
    }
    t_grid
        .iter()
        .map(|&t| {
            let t = t.min(h);
            (cum_in[t], cum_all[t] - cum_in[t])
        })
        .unzip()
}

fn binary_sigmas(grid: &[f64]) -> Vec<Vec<f64>> {
    grid.iter().map(|&x| vec![1.0 - x, x]).collect()
}

/// Action with the highest payoff against symbol 1 (lowest index among ties).
fn high_action(problem: &StoppingProblem) -> usize {
    let u = problem.payoffs();
    (0..u.len()).fold(0, |best, a| if u[a][1] > u[best][1] { a } else { best })
}

fn check_t_grid(t_grid: &[usize]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(AnalysisError::InvalidInput("empty t grid".into()));
    }
    Ok(())
}

/// Raising the payoff of `action` by each bonus in turn: the probability that
/// `action` is optimal at the stopping belief by time `t` must not fall, and
/// that of the complementary event must not rise.
pub fn comparative_statics_payoff(
    problem: &StoppingProblem,
    action: usize,
    bonus_grid: &[f64],
    sigmas: &[Vec<f64>],
    t_grid: &[usize],
) -> Result<StaticsReport> {
    check_t_grid(t_grid)?;
    if action >= problem.num_actions() {
        return Err(AnalysisError::InvalidInput(format!("action {action} out of range")));
    }
    if bonus_grid.is_empty()
        || bonus_grid.iter().any(|g| !(g.is_finite() && *g >= 0.0))
        || bonus_grid.windows(2).any(|w| w[1] < w[0])
    {
        return Err(AnalysisError::InvalidInput("bonuses must be nonnegative and increasing".into()));
    }
    let rows = bonus_grid
        .par_iter()
        .map(|&g| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
            let policy = problem.with_bonus(action, g)?.solve();
            let mut vals = Vec::new();
            let mut comp = Vec::new();
            for s in sigmas {
                let (a, b) = cdf_pair(&policy.joint_action_time(s)?, action, t_grid);
                vals.push(a);
                comp.push(b);
            }
            Ok((vals, comp))
        })
        .collect::<Result<Vec<_>>>()?;
    let (values, complement): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(StaticsReport::build(
        "payoff",
        action,
        bonus_grid.iter().map(|g| format!("bonus={g}")).collect(),
        sigmas.to_vec(),
        t_grid.to_vec(),
        values,
        Some(complement),
        false,
        None,
    ))
}

/// Replacing the prior along an SSD-increasing chain of Beta priors.
pub fn comparative_statics_prior(
    problem: &StoppingProblem,
    chain: &[DirichletPrior],
    sigma_grid: &[f64],
    t_grid: &[usize],
) -> Result<StaticsReport> {
    check_t_grid(t_grid)?;
    if chain.is_empty() {
        return Err(AnalysisError::InvalidInput("empty prior chain".into()));
    }
    for (k, w) in chain.windows(2).enumerate() {
        match ssd_compare(&w[1], &w[0])? {
            SsdOrder::FirstDominates | SsdOrder::Equal => {}
            _ => return Err(AnalysisError::NotSsdOrdered(k, k + 1)),
        }
    }
    let action = high_action(problem);
    let sigmas = binary_sigmas(sigma_grid);
    let values = chain
        .par_iter()
        .map(|prior| -> Result<Vec<Vec<f64>>> {
            let policy = problem.with_prior(prior.clone())?.solve();
            sigmas
                .iter()
                .map(|s| Ok(cdf_pair(&policy.joint_action_time(s)?, action, t_grid).0))
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StaticsReport::build(
        "prior",
        action,
        chain.iter().map(|p| format!("{:?}", p.alpha())).collect(),
        sigmas,
        t_grid.to_vec(),
        values,
        None,
        false,
        None,
    ))
}

/// Raising the probability of symbol 1 along an increasing σ grid, with the
/// exact Bernstein coefficients checked against the forward pass.
pub fn comparative_statics_sigma(problem: &StoppingProblem, sigma_grid: &[f64], t_grid: &[usize]) -> Result<StaticsReport> {
    check_t_grid(t_grid)?;
    if problem.alphabet() != 2 {
        return Err(AnalysisError::InvalidInput("σ statics need a binary alphabet".into()));
    }
    if sigma_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(AnalysisError::InvalidInput("σ grid must be increasing".into()));
    }
    let action = high_action(problem);
    let policy = problem.solve();
    let sigmas = binary_sigmas(sigma_grid);
    let vals = sigmas
        .iter()
        .map(|s| Ok(cdf_pair(&policy.joint_action_time(s)?, action, t_grid).0))
        .collect::<Result<Vec<_>>>()?;
    let mut max_err: f64 = 0.0;
    let mut certified = 0;
    let mut nonneg = true;
    for (k, &t) in t_grid.iter().enumerate() {
        let poly = policy.optimal_set_polynomial(action, t.min(policy.horizon()))?;
        for (s, &x) in sigma_grid.iter().enumerate() {
            max_err = max_err.max((poly.eval(x) - vals[s][k]).abs());
        }
        if poly.certified_nondecreasing(MONOTONE_SLACK) {
            certified += 1;
        } else if !poly.nondecreasing_on_unit_interval(MONOTONE_SLACK, 1000) {
            nonneg = false;
        }
    }
    let polynomial = PolynomialCheck {
        degree: policy.horizon(),
        max_eval_error: max_err,
        certified_by_coefficients: certified,
        derivative_nonnegative: nonneg,
    };
    Ok(StaticsReport::build(
        "sigma",
        action,
        vec!["sigma".into()],
        sigmas,
        t_grid.to_vec(),
        vec![vals],
        None,
        true,
        Some(polynomial),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeRevealedReport {
    pub sigma_tilde: f64,
    pub depths: Vec<usize>,
    pub mass: Vec<f64>,
    /// `E[|posterior mean of symbol 1 − σ̃| | τ = t]` per listed depth.
    pub mean_distance: Vec<f64>,
    pub nonincreasing: bool,
    /// Weighted Spearman correlation between `τ` and the distance; `None` without variation.
    pub rank_correlation: Option<f64>,
}

/// Relates stopping time to the distance of the stopping belief from indifference.
pub fn time_revealed_indifference(policy: &StoppingPolicy, sigma_true: f64, sigma_tilde: f64) -> Result<TimeRevealedReport> {
    if policy.lattice().alphabet() != 2 {
        return Err(AnalysisError::InvalidInput("needs a binary alphabet".into()));
    }
    let beliefs = policy.stopping_belief_distribution(&[1.0 - sigma_true, sigma_true])?;
    let h = policy.horizon();
    let mut mass = vec![0.0; h + 1];
    let mut dist = vec![0.0; h + 1];
    let mut points = Vec::new();
    for b in &beliefs {
        if b.prob <= 0.0 {
            continue;
        }
        let d = (b.mean[1] - sigma_tilde).abs();
        mass[b.depth] += b.prob;
        dist[b.depth] += b.prob * d;
        points.push((b.depth as f64, d, b.prob));
    }
    let depths: Vec<usize> = (0..=h).filter(|&t| mass[t] > 0.0).collect();
    let mean_distance: Vec<f64> = depths.iter().map(|&t| dist[t] / mass[t]).collect();
    let nonincreasing = mean_distance.windows(2).all(|w| w[1] <= w[0] + MONOTONE_SLACK);
    Ok(TimeRevealedReport {
        sigma_tilde,
        mass: depths.iter().map(|&t| mass[t]).collect(),
        depths,
        mean_distance,
        nonincreasing,
        rank_correlation: weighted_spearman(&points),
    })
}

/// Weighted mid-ranks: each value's rank is the weight below it plus half its own tie group.
fn weighted_ranks(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut below = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut j = k;
        let mut group = 0.0;
        while j < order.len() && values[order[j]] == values[order[k]] {
            group += weights[order[j]];
            j += 1;
        }
        for &idx in &order[k..j] {
            ranks[idx] = below + group / 2.0;
        }
        below += group;
        k = j;
    }
    ranks
}

fn weighted_spearman(points: &[(f64, f64, f64)]) -> Option<f64> {
    let w: Vec<f64> = points.iter().map(|p| p.2).collect();
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let rx = weighted_ranks(&points.iter().map(|p| p.0).collect::<Vec<_>>(), &w);
    let ry = weighted_ranks(&points.iter().map(|p| p.1).collect::<Vec<_>>(), &w);
    let mx = dot(&rx, &w) / total;
    let my = dot(&ry, &w) / total;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..points.len() {
        let (dx, dy) = (rx[k] - mx, ry[k] - my);
        sxy += w[k] * dx * dy;
        sxx += w[k] * dx * dx;
        syy += w[k] * dy * dy;
    }
    if sxx <= 1e-300 || syy <= 1e-300 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FosdReport {
    pub sigma_low: f64,
    pub sigma_high: f64,
    /// Largest `F_high(x) − F_low(x)` over stopping-mean support points; FOSD holds when ≤ 0.
    pub worst_violation: f64,
    pub holds: bool,
}

/// Whether the stopping posterior mean of symbol 1 rises in first-order
/// stochastic dominance from `sigma_low` to `sigma_high`. Reported, not asserted:
/// lattice discreteness can break it at knife edges.
pub fn stopping_belief_fosd(policy: &StoppingPolicy, sigma_low: f64, sigma_high: f64) -> Result<FosdReport> {
    let lo = policy.stopping_belief_distribution(&[1.0 - sigma_low, sigma_low])?;
    let hi = policy.stopping_belief_distribution(&[1.0 - sigma_high, sigma_high])?;
    let mut xs: Vec<f64> = lo.iter().chain(&hi).map(|b| b.mean[1]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let cdf = |d: &[crate::stopping::StopBelief], x: f64| d.iter().filter(|b| b.mean[1] <= x).map(|b| b.prob).sum::<f64>();
    let worst = xs.iter().map(|&x| cdf(&hi, x) - cdf(&lo, x)).fold(f64::NEG_INFINITY, f64::max);
    Ok(FosdReport { sigma_low, sigma_high, worst_violation: worst, holds: worst <= MONOTONE_SLACK })
}

/// How a node's stop/continue decision was settled by the misspecification probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ProbeDecision {
    Continue,
    Stop,
    /// Neither bound settled it; treated as a stop.
    Uncertified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisspecReport {
    pub true_sigma: Vec<f64>,
    pub cost: f64,
    pub probe_depth: usize,
    pub stopped_mass: f64,
    /// Mass still sampling after the probe.
    pub never_stop_mass: f64,
    /// Mass on observation sequences the prior rules out.
    pub zero_likelihood_mass: f64,
    /// True when the never-stop mass is exact rather than an upper bound
    /// (equivalently, the stopped mass is exact rather than a lower bound).
    pub exact: bool,
    pub uncertified_nodes: usize,
    /// One-step gain of sampling along the most likely observation path.
    pub gain_trace: Vec<f64>,
}

const LOOKAHEAD: usize = 10;

struct FiniteProbe<'a> {
    prior: &'a FiniteSupportPrior,
    u: Vec<Vec<f64>>,
    cost: f64,
    eps: f64,
}

impl FiniteProbe<'_> {
    fn stop_value(&self, mean: &[f64]) -> f64 {
        self.u.iter().map(|r| dot(r, mean)).fold(f64::NEG_INFINITY, f64::max)
    }

    fn gain(&self, post: &FiniteSupportPrior) -> f64 {
        let mean = post.mean();
        let v = self.stop_value(&mean);
        let mut e = 0.0;
        for (y, &p) in mean.iter().enumerate() {
            if p > 0.0 {
                let next = post.update(y).expect("positive predictive");
                e += p * self.stop_value(&next.mean());
            }
        }
        e - v
    }

    fn full_information_gain(&self, post: &FiniteSupportPrior) -> f64 {
        let perfect: f64 = post
            .atoms()
            .iter()
            .zip(post.weights())
            .map(|(atom, w)| w * self.stop_value(atom))
            .sum();
        perfect - self.stop_value(&post.mean())
    }

    /// Value of the best policy that must stop within `LOOKAHEAD` more observations.
    fn truncated_continuation(&self, counts: &[u32]) -> f64 {
        let m = counts.len();
        let lat = Lattice::new(m, LOOKAHEAD);
        let at = |t: usize, idx: usize| -> Option<FiniteSupportPrior> {
            let n: Vec<u32> = counts.iter().zip(lat.node(t, idx)).map(|(a, b)| a + b).collect();
            self.prior.posterior_at(&n)
        };
        let mut next: Vec<f64> = (0..lat.len(LOOKAHEAD))
            .map(|idx| at(LOOKAHEAD, idx).map_or(0.0, |p| self.stop_value(&p.mean())))
            .collect();
        for t in (0..LOOKAHEAD).rev() {
            let mut cur = vec![0.0; lat.len(t)];
            for (idx, slot) in cur.iter_mut().enumerate() {
                let Some(post) = at(t, idx) else { continue };
                let mean = post.mean();
                let mut cont = -self.cost;
                for (y, &p) in mean.iter().enumerate() {
                    if p > 0.0 {
                        cont += p * next[lat.child(t, idx, y)];
                    }
                }
                *slot = if t == 0 { cont } else { self.stop_value(&mean).max(cont) };
            }
            next = cur;
        }
        next[0]
    }

    fn decide(&self, counts: &[u32], post: &FiniteSupportPrior) -> ProbeDecision {
        if self.gain(post) > self.cost + self.eps {
            return ProbeDecision::Continue;
        }
        if self.full_information_gain(post) <= self.cost + self.eps {
            return ProbeDecision::Stop;
        }
        let v = self.stop_value(&post.mean());
        if self.truncated_continuation(counts) > v + self.eps {
            ProbeDecision::Continue
        } else {
            ProbeDecision::Uncertified
        }
    }
}

fn modal_symbol(sigma: &[f64]) -> usize {
    (0..sigma.len()).fold(0, |b, y| if sigma[y] > sigma[b] { y } else { b })
}

/// Probes whether player `i` stops when opponents actually play `true_sigma`
/// (a distribution over `i`'s opponent profiles).
///
/// With a finite-support prior, a node continues when the one-step gain exceeds
/// the cost, stops when even perfect information is worth at most the cost, and
/// otherwise continues only if a bounded lookahead beats stopping. With a
/// Dirichlet prior the exact policy is used and the never-stop mass is zero.
pub fn misspec_detector(
    game: &Game,
    i: usize,
    prior: &Prior,
    cost: f64,
    true_sigma: &[f64],
    probe_depth: usize,
) -> Result<MisspecReport> {
    if i >= game.num_players() {
        return Err(GameError::InvalidPlayer(i).into());
    }
    let m = game.num_opponent_profiles(i);
    crate::game::validate_distribution(true_sigma, m, i)?;
    if !(cost.is_finite() && cost > 0.0) {
        return Err(AnalysisError::InvalidInput(format!("cost must be positive, got {cost}")));
    }
    if prior.size() != m {
        return Err(AnalysisError::InvalidInput(format!("prior has {} components, expected {m}", prior.size())));
    }
    let u = game.payoff_matrix(i);
    let modal = modal_symbol(true_sigma);
    match prior {
        Prior::Dirichlet { alpha } => {
            let problem = StoppingProblem::from_payoffs(u, DirichletPrior::new(alpha.clone())?, cost)?;
            let policy = problem.solve();
            let stopped = policy.joint_action_time(true_sigma)?.total();
            let mut counts = vec![0u32; m];
            let mut gain_trace = Vec::new();
            for _ in 0..=probe_depth.min(policy.horizon()) {
                gain_trace.push(problem.one_step_gain(&counts));
                counts[modal] += 1;
            }
            Ok(MisspecReport {
                true_sigma: true_sigma.to_vec(),
                cost,
                probe_depth,
                stopped_mass: stopped,
                // Every node at the horizon stops, so no path samples forever.
                never_stop_mass: 0.0,
                zero_likelihood_mass: 0.0,
                exact: true,
                uncertified_nodes: 0,
                gain_trace,
            })
        }
        Prior::Finite { atoms, weights } => {
            let fp = FiniteSupportPrior::new(atoms.clone(), weights.clone())?;
            let probe = FiniteProbe { prior: &fp, u, cost, eps: game.tie_tolerance() };
            let lat = Lattice::new(m, probe_depth);
            let mut cur = vec![1.0];
            let (mut stopped, mut zero_lik) = (0.0, 0.0);
            let mut uncertified = 0;
            let mut continuing = Vec::new();
            for t in 0..=probe_depth {
                let mut next = if t < probe_depth { vec![0.0; lat.len(t + 1)] } else { Vec::new() };
                continuing.clear();
                for (idx, &w) in cur.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let counts = lat.node(t, idx);
                    let Some(post) = fp.posterior_at(counts) else {
                        zero_lik += w;
                        continue;
                    };
                    match probe.decide(counts, &post) {
                        ProbeDecision::Continue => {
                            continuing.push((idx, post));
                            if t < probe_depth {
                                for (y, &p) in true_sigma.iter().enumerate() {
                                    if p > 0.0 {
                                        next[lat.child(t, idx, y)] += w * p;
                                    }
                                }
                            }
                        }
                        ProbeDecision::Stop => stopped += w,
                        ProbeDecision::Uncertified => {
                            uncertified += 1;
                            stopped += w;
                        }
                    }
                }
                if t < probe_depth {
                    cur = next;
                }
            }
            let never = (1.0 - stopped - zero_lik).max(0.0);
            let degenerate = true_sigma.iter().filter(|p| **p > 0.0).count() == 1;
            // A degenerate path whose posterior no longer moves repeats the same certified decision forever.
            let absorbing = degenerate
                && continuing.iter().all(|(_, post)| {
                    post.update(modal)
                        .map(|n| n.weights().iter().zip(post.weights()).all(|(a, b)| (a - b).abs() <= 1e-15))
                        .unwrap_or(false)
                });
            let exact = uncertified == 0 && (never == 0.0 || absorbing);
            let mut gain_trace = Vec::new();
            let mut counts = vec![0u32; m];
            for _ in 0..=probe_depth {
                match fp.posterior_at(&counts) {
                    Some(post) => gain_trace.push(probe.gain(&post)),
                    None => break,
                }
                counts[modal] += 1;
            }
            Ok(MisspecReport {
                true_sigma: true_sigma.to_vec(),
                cost,
                probe_depth,
                stopped_mass: stopped,
                never_stop_mass: never,
                zero_likelihood_mass: zero_lik,
                exact,
                uncertified_nodes: uncertified,
                gain_trace,
            })
        }
    }
}

/// Coarsened stopping-problem ingredients for one player under an analogy partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogyTransform {
    pub player: usize,
    pub partition: Vec<usize>,
    pub classes: usize,
    pub payoffs: Vec<Vec<f64>>,
    pub prior: DirichletPrior,
}

pub fn analogy_transform(game: &Game, i: usize, partition: &[usize]) -> Result<AnalogyTransform> {
    if i >= game.num_players() {
        return Err(GameError::InvalidPlayer(i).into());
    }
    let m = game.num_opponent_profiles(i);
    if partition.len() != m {
        return Err(AnalysisError::InvalidInput(format!("partition covers {} profiles, expected {m}", partition.len())));
    }
    let classes = partition.iter().max().map_or(0, |x| x + 1);
    if let Some(z) = (0..classes).find(|z| !partition.contains(z)) {
        return Err(AnalysisError::InvalidInput(format!("partition is not surjective: class {z} is empty")));
    }
    let u = game.payoff_matrix(i);
    let identity = partition.iter().enumerate().all(|(y, &z)| y == z);
    Ok(AnalogyTransform {
        player: i,
        partition: partition.to_vec(),
        classes,
        payoffs: if identity { u } else { coarse_payoffs(&u, partition) },
        prior: DirichletPrior::uniform(classes),
    })
}

/// Game whose Nash equilibria are the analogy-based expectation equilibria of
/// `ext`: each partitioned player's payoff against `y` becomes the class average
/// of `f(y)`.
pub fn analogy_game(ext: &ExtendedGame) -> Result<Game> {
    let mut g = ext.game().clone();
    for i in 0..g.num_players() {
        if let Some(p) = ext.partition(i) {
            let coarse = coarse_payoffs(&ext.game().payoff_matrix(i), p);
            let lifted: Vec<Vec<f64>> = coarse.iter().map(|row| p.iter().map(|&z| row[z]).collect()).collect();
            g = g.with_payoff_matrix(i, &lifted)?;
        }
    }
    Ok(g)
}

/// Largest regret against the analogy conditions, evaluated from class
/// probabilities and class-average payoffs directly.
pub fn abee_regret(ext: &ExtendedGame, sigma: &MixedProfile) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..ext.game().num_players() {
        let q = ext.observation_distribution(i, sigma)?;
        let u = ext.observation_payoffs(i);
        let vals: Vec<f64> = u.iter().map(|r| dot(r, &q)).collect();
        let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(best - dot(&vals, &sigma.dist[i]));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbeePoint {
    pub cost: f64,
    pub sigma: MixedProfile,
    pub distance: Option<f64>,
    pub regret: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbeeCheck {
    pub equilibria: Vec<MixedProfile>,
    pub points: Vec<AbeePoint>,
    pub tolerance: f64,
    pub pass: bool,
}

/// Sweeps costs on the partitioned extended game and compares the smallest-cost
/// equilibrium with the analogy-based expectation equilibria.
pub fn abee_sweep(ext: &ExtendedGame, costs: &[f64], tolerance: f64) -> Result<AbeeCheck> {
    let equilibria = analogy_game(ext)?.nash_equilibria().unwrap_or_default();
    let sweep = cost_sweep(ext, costs, PolicyKind::Optimal, &SolveOptions::default(), true)?;
    let points = sweep
        .into_iter()
        .map(|p| {
            Ok(AbeePoint {
                cost: p.cost,
                distance: nearest_distance(&p.result.sigma, &equilibria),
                regret: abee_regret(ext, &p.result.sigma)?,
                converged: p.result.converged(),
                sigma: p.result.sigma,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pass = points.last().is_some_and(|p| p.converged && p.distance.is_some_and(|d| d < tolerance));
    Ok(AbeeCheck { equilibria, points, tolerance, pass })
}
