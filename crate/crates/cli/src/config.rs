//! Run configuration schema and semantic validation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sse_core::{corpus, matching_pennies, DirichletPrior, DynamicsVariant, ExtendedGame, Game, Prior, SolveMethod};

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub game: GameSpec,
    /// One prior per player; uniform Dirichlet when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<Vec<Prior>>,
    /// One sampling cost per player.
    pub costs: Vec<f64>,
    /// Optional analogy partition per player over opponent profiles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitions: Option<Vec<Option<Vec<usize>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GameSpec {
    /// Player names, action labels keyed by player, and payoffs keyed by player as
    /// nested arrays indexed by the full action profile.
    Tensor {
        players: Vec<String>,
        actions: BTreeMap<String, Vec<String>>,
        payoffs: BTreeMap<String, Value>,
    },
    Bimatrix {
        row: Vec<Vec<f64>>,
        col: Vec<Vec<f64>>,
    },
    MatchingPennies {
        delta: f64,
        gamma: f64,
    },
    Corpus {
        name: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    #[default]
    Optimal,
    Myopic,
}

impl From<PolicyChoice> for sse_core::PolicyKind {
    fn from(p: PolicyChoice) -> Self {
        match p {
            PolicyChoice::Optimal => sse_core::PolicyKind::Optimal,
            PolicyChoice::Myopic => sse_core::PolicyKind::Myopic,
        }
    }
}

fn default_method() -> SolveMethod {
    SolveMethod::Auto
}

fn default_max_iter() -> usize {
    10_000
}

fn default_true() -> bool {
    true
}

fn default_eps_supp() -> f64 {
    1e-6
}

fn default_abee_tolerance() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Task {
    Solve {
        #[serde(default = "default_method")]
        method: SolveMethod,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default)]
        policy: PolicyChoice,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        warm_start: Option<Vec<Vec<f64>>>,
    },
    Stopping {
        player: usize,
        #[serde(default)]
        policy: PolicyChoice,
        /// Distribution over the player's observation alphabet.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<Vec<f64>>,
    },
    Boundaries {
        player: usize,
    },
    Dynamics {
        variant: DynamicsVariant,
        steps: usize,
        start: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stop_tol: Option<f64>,
        #[serde(default)]
        policy: PolicyChoice,
    },
    SweepCosts {
        grid: Vec<f64>,
        #[serde(default = "default_true")]
        warm: bool,
        #[serde(default)]
        policy: PolicyChoice,
    },
    Reachability {
        target: Vec<usize>,
        centers: Vec<Vec<f64>>,
        concentration: f64,
        grid: Vec<f64>,
        tolerance: f64,
    },
    Rationalizability {
        grid: Vec<f64>,
        #[serde(default = "default_eps_supp")]
        eps_supp: f64,
    },
    Check {
        suite: Suite,
    },
    Misspec {
        player: usize,
        prior: Prior,
        true_sigma: Vec<f64>,
        probe_depth: usize,
    },
    Analogy {
        grid: Vec<f64>,
        #[serde(default = "default_abee_tolerance")]
        tolerance: f64,
    },
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Solve { .. } => "solve",
            Task::Stopping { .. } => "stopping",
            Task::Boundaries { .. } => "boundaries",
            Task::Dynamics { .. } => "dynamics",
            Task::SweepCosts { .. } => "sweep-costs",
            Task::Reachability { .. } => "reachability",
            Task::Rationalizability { .. } => "rationalizability",
            Task::Check { .. } => "check",
            Task::Misspec { .. } => "misspec",
            Task::Analogy { .. } => "analogy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Suite {
    StaticsPayoff {
        player: usize,
        action: usize,
        bonuses: Vec<f64>,
        sigmas: Vec<Vec<f64>>,
        t_grid: Vec<usize>,
    },
    StaticsPrior {
        player: usize,
        /// Beta parameters `(a, b)` with symbol 1 the success.
        chain: Vec<[f64; 2]>,
        sigma_grid: Vec<f64>,
        t_grid: Vec<usize>,
    },
    StaticsSigma {
        player: usize,
        sigma_grid: Vec<f64>,
        t_grid: Vec<usize>,
    },
    TimeRevealed {
        player: usize,
        sigmas: Vec<f64>,
    },
    Horizon {
        player: usize,
    },
    NeverIndifferent {
        player: usize,
    },
    MyopicContainment {
        player: usize,
    },
    TailBound {
        player: usize,
    },
    Stability {
        #[serde(default = "default_h")]
        h: f64,
    },
}

fn default_h() -> f64 {
    1e-4
}

/// A semantic error with the JSON path it refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub path: String,
    pub message: String,
}

impl SchemaError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        SchemaError { path: path.into(), message: message.into() }
    }
}

pub fn parse(text: &str) -> Result<RunConfig, SchemaError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        SchemaError::new(path, e.into_inner().to_string())
    })
}

/// Validated inputs ready for execution.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub ext: ExtendedGame,
}

fn check_grid(path: &str, grid: &[f64]) -> Result<(), SchemaError> {
    if grid.is_empty() {
        return Err(SchemaError::new(path, "grid must not be empty"));
    }
    if let Some(k) = grid.iter().position(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(SchemaError::new(format!("{path}[{k}]"), "costs must be positive"));
    }
    if let Some(k) = grid.windows(2).position(|w| w[1] >= w[0]) {
        return Err(SchemaError::new(format!("{path}[{}]", k + 1), "cost grid must be strictly decreasing"));
    }
    Ok(())
}

fn check_unit_grid(path: &str, grid: &[f64]) -> Result<(), SchemaError> {
    if grid.is_empty() {
        return Err(SchemaError::new(path, "grid must not be empty"));
    }
    if let Some(k) = grid.iter().position(|x| !(0.0..=1.0).contains(x)) {
        return Err(SchemaError::new(format!("{path}[{k}]"), "values must lie in [0, 1]"));
    }
    if let Some(k) = grid.windows(2).position(|w| w[1] < w[0]) {
        return Err(SchemaError::new(format!("{path}[{}]", k + 1), "grid must be nondecreasing"));
    }
    Ok(())
}

fn check_player(path: &str, game: &Game, i: usize) -> Result<(), SchemaError> {
    if i >= game.num_players() {
        return Err(SchemaError::new(path, format!("player {i} does not exist")));
    }
    Ok(())
}

fn check_dist(path: &str, p: &[f64], len: usize) -> Result<(), SchemaError> {
    if p.len() != len {
        return Err(SchemaError::new(path, format!("expected {len} probabilities, found {}", p.len())));
    }
    if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SchemaError::new(path, "not a probability vector"));
    }
    Ok(())
}

fn check_profile(path: &str, game: &Game, dist: &[Vec<f64>]) -> Result<(), SchemaError> {
    if dist.len() != game.num_players() {
        return Err(SchemaError::new(path, format!("expected {} players", game.num_players())));
    }
    for (i, d) in dist.iter().enumerate() {
        check_dist(&format!("{path}[{i}]"), d, game.num_actions(i))?;
    }
    Ok(())
}

fn flatten(path: &str, v: &Value, dims: &[usize], out: &mut Vec<f64>) -> Result<(), SchemaError> {
    match (dims.split_first(), v) {
        (None, Value::Number(n)) => {
            out.push(n.as_f64().ok_or_else(|| SchemaError::new(path, "payoff is not a finite number"))?);
            Ok(())
        }
        (None, _) => Err(SchemaError::new(path, "expected a number")),
        (Some((&d, rest)), Value::Array(items)) => {
            if items.len() != d {
                return Err(SchemaError::new(path, format!("expected {d} entries, found {}", items.len())));
            }
            for (k, item) in items.iter().enumerate() {
                flatten(&format!("{path}[{k}]"), item, rest, out)?;
            }
            Ok(())
        }
        (Some((&d, _)), _) => Err(SchemaError::new(path, format!("expected an array of {d} entries"))),
    }
}

fn tensor_game(
    players: &[String],
    actions: &BTreeMap<String, Vec<String>>,
    payoffs: &BTreeMap<String, Value>,
) -> Result<Result<Game, sse_core::GameError>, SchemaError> {
    if players.is_empty() {
        return Err(SchemaError::new("game.players", "need at least one player"));
    }
    for (k, name) in players.iter().enumerate() {
        if players[..k].contains(name) {
            return Err(SchemaError::new(format!("game.players[{k}]"), format!("duplicate player {name:?}")));
        }
    }
    for key in actions.keys().chain(payoffs.keys()) {
        if !players.contains(key) {
            return Err(SchemaError::new(format!("game.{key}"), format!("unknown player {key:?}")));
        }
    }
    let mut labels = Vec::with_capacity(players.len());
    for name in players {
        let a = actions
            .get(name)
            .ok_or_else(|| SchemaError::new(format!("game.actions.{name}"), "missing action labels"))?;
        labels.push(a.clone());
    }
    let dims: Vec<usize> = labels.iter().map(Vec::len).collect();
    if let Some(k) = dims.iter().position(|&d| d == 0) {
        return Err(SchemaError::new(format!("game.actions.{}", players[k]), "need at least one action"));
    }
    let mut flat = Vec::with_capacity(players.len());
    for name in players {
        let path = format!("game.payoffs.{name}");
        let v = payoffs.get(name).ok_or_else(|| SchemaError::new(&path, "missing payoffs"))?;
        let mut out = Vec::new();
        flatten(&path, v, &dims, &mut out)?;
        flat.push(out);
    }
    Ok(Game::new(players.to_vec(), labels, flat))
}

fn nest(values: &[f64], dims: &[usize]) -> Value {
    match dims.split_first() {
        None => serde_json::json!(values[0]),
        Some((&d, rest)) => {
            let stride = values.len() / d;
            Value::Array((0..d).map(|k| nest(&values[k * stride..(k + 1) * stride], rest)).collect())
        }
    }
}

/// The canonical tensor form of a game.
pub fn canonical_game(game: &Game) -> GameSpec {
    let players = game.roles().to_vec();
    let dims: Vec<usize> = (0..game.num_players()).map(|i| game.num_actions(i)).collect();
    let mut actions = BTreeMap::new();
    let mut payoffs = BTreeMap::new();
    for (i, name) in players.iter().enumerate() {
        actions.insert(name.clone(), game.action_labels(i).to_vec());
        payoffs.insert(name.clone(), nest(game.payoff_tensor(i), &dims));
    }
    GameSpec::Tensor { players, actions, payoffs }
}

pub fn build_game(spec: &GameSpec) -> Result<Game, SchemaError> {
    let g = match spec {
        GameSpec::Tensor { players, actions, payoffs } => tensor_game(players, actions, payoffs)?,
        GameSpec::Bimatrix { row, col } => Game::bimatrix(row, col),
        GameSpec::MatchingPennies { delta, gamma } => {
            if !(delta.is_finite() && *delta > 0.0 && gamma.is_finite() && *gamma > 0.0) {
                return Err(SchemaError::new("game", "delta and gamma must be positive"));
            }
            Ok(matching_pennies(*delta, *gamma))
        }
        GameSpec::Corpus { name } => {
            return corpus::by_name(name).ok_or_else(|| SchemaError::new("game.name", format!("unknown corpus game {name:?}")))
        }
    };
    g.map_err(|e| SchemaError::new("game", e.to_string()))
}

/// Checks everything that can be checked before any computation or output.
pub fn resolve(cfg: &RunConfig) -> Result<Resolved, SchemaError> {
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(SchemaError::new(
            "schema_version",
            format!("unsupported schema version {}, expected {SCHEMA_VERSION}", cfg.schema_version),
        ));
    }
    if let Some(t) = cfg.tol {
        if !(t.is_finite() && t > 0.0) {
            return Err(SchemaError::new("tol", "tolerance must be positive"));
        }
    }
    let game = build_game(&cfg.game)?;
    let n = game.num_players();
    if cfg.costs.len() != n {
        return Err(SchemaError::new("costs", format!("expected {n} costs, found {}", cfg.costs.len())));
    }
    if let Some(k) = cfg.costs.iter().position(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(SchemaError::new(format!("costs[{k}]"), "costs must be positive"));
    }
    let partitions = cfg.partitions.clone().unwrap_or_else(|| vec![None; n]);
    if partitions.len() != n {
        return Err(SchemaError::new("partitions", format!("expected {n} entries")));
    }
    let obs_size = |i: usize| match &partitions[i] {
        Some(p) => p.iter().max().map_or(0, |m| m + 1),
        None => game.num_opponent_profiles(i),
    };
    let priors: Vec<DirichletPrior> = match &cfg.priors {
        None => (0..n).map(|i| DirichletPrior::uniform(obs_size(i).max(1))).collect(),
        Some(ps) => {
            if ps.len() != n {
                return Err(SchemaError::new("priors", format!("expected {n} priors, found {}", ps.len())));
            }
            ps.iter()
                .enumerate()
                .map(|(i, p)| match p {
                    Prior::Dirichlet { alpha } => DirichletPrior::new(alpha.clone())
                        .map_err(|e| SchemaError::new(format!("priors[{i}].alpha"), e.to_string())),
                    Prior::Finite { .. } => Err(SchemaError::new(
                        format!("priors[{i}]"),
                        "extended games need Dirichlet priors; finite priors belong in the misspec task",
                    )),
                })
                .collect::<Result<_, _>>()?
        }
    };
    for (i, p) in priors.iter().enumerate() {
        if p.size() != obs_size(i) {
            return Err(SchemaError::new(
                format!("priors[{i}]"),
                format!("prior has {} components, expected {}", p.size(), obs_size(i)),
            ));
        }
    }
    // Partitioned players get their coarse prior when the partition is applied.
    let base: Vec<DirichletPrior> = (0..n)
        .map(|i| match partitions[i] {
            Some(_) => DirichletPrior::uniform(game.num_opponent_profiles(i)),
            None => priors[i].clone(),
        })
        .collect();
    let mut ext = ExtendedGame::new(game.clone(), base, cfg.costs.clone())
        .map_err(|e| SchemaError::new("game", e.to_string()))?;
    for (i, part) in partitions.iter().enumerate() {
        if let Some(p) = part {
            ext = ext
                .with_partition(i, p.clone(), priors[i].clone())
                .map_err(|e| SchemaError::new(format!("partitions[{i}]"), e.to_string()))?;
        }
    }
    validate_task(&cfg.task, &game, &ext)?;
    Ok(Resolved { ext })
}

fn validate_task(task: &Task, game: &Game, ext: &ExtendedGame) -> Result<(), SchemaError> {
    match task {
        Task::Solve { warm_start, max_iter, .. } => {
            if *max_iter == 0 {
                return Err(SchemaError::new("task.max_iter", "must be at least 1"));
            }
            if let Some(w) = warm_start {
                check_profile("task.warm_start", game, w)?;
            }
        }
        Task::Stopping { player, sigma, .. } => {
            check_player("task.player", game, *player)?;
            if let Some(s) = sigma {
                check_dist("task.sigma", s, ext.observation_size(*player))?;
            }
        }
        Task::Boundaries { player } => check_player("task.player", game, *player)?,
        Task::Dynamics { variant, start, stop_tol, .. } => {
            check_profile("task.start", game, start)?;
            match variant {
                DynamicsVariant::Exponential { beta } if !(*beta > 0.0 && *beta < 1.0) => {
                    return Err(SchemaError::new("task.variant.beta", "beta must lie in (0, 1)"))
                }
                DynamicsVariant::FinitePopulation { n: 0, .. } => {
                    return Err(SchemaError::new("task.variant.n", "population must be at least 1"))
                }
                _ => {}
            }
            if stop_tol.is_some_and(|t| !(t > 0.0)) {
                return Err(SchemaError::new("task.stop_tol", "must be positive"));
            }
        }
        Task::SweepCosts { grid, .. } | Task::Rationalizability { grid, .. } | Task::Analogy { grid, .. } => {
            check_grid("task.grid", grid)?
        }
        Task::Reachability { target, centers, concentration, grid, tolerance } => {
            check_grid("task.grid", grid)?;
            if target.len() != game.num_players() {
                return Err(SchemaError::new("task.target", "need one action per player"));
            }
            for (i, &a) in target.iter().enumerate() {
                if a >= game.num_actions(i) {
                    return Err(SchemaError::new(format!("task.target[{i}]"), format!("action {a} does not exist")));
                }
            }
            if centers.len() != game.num_players() {
                return Err(SchemaError::new("task.centers", "need one prior center per player"));
            }
            for (i, c) in centers.iter().enumerate() {
                check_dist(&format!("task.centers[{i}]"), c, game.num_opponent_profiles(i))?;
            }
            if !(*concentration > 0.0 && concentration.is_finite()) {
                return Err(SchemaError::new("task.concentration", "must be positive"));
            }
            if !(*tolerance > 0.0) {
                return Err(SchemaError::new("task.tolerance", "must be positive"));
            }
        }
        Task::Check { suite } => validate_suite(suite, game, ext)?,
        Task::Misspec { player, prior, true_sigma, .. } => {
            check_player("task.player", game, *player)?;
            let m = game.num_opponent_profiles(*player);
            if prior.size() != m {
                return Err(SchemaError::new("task.prior", format!("prior must cover {m} opponent profiles")));
            }
            check_dist("task.true_sigma", true_sigma, m)?;
        }
    }
    Ok(())
}

fn validate_suite(suite: &Suite, game: &Game, ext: &ExtendedGame) -> Result<(), SchemaError> {
    let binary = |player: usize| -> Result<(), SchemaError> {
        check_player("task.suite.player", game, player)?;
        if ext.observation_size(player) != 2 {
            return Err(SchemaError::new("task.suite.player", "this suite needs a binary observation alphabet"));
        }
        Ok(())
    };
    let t_grid = |t: &[usize]| {
        if t.is_empty() {
            Err(SchemaError::new("task.suite.t_grid", "must not be empty"))
        } else {
            Ok(())
        }
    };
    match suite {
        Suite::StaticsPayoff { player, action, bonuses, sigmas, t_grid: t } => {
            check_player("task.suite.player", game, *player)?;
            if *action >= game.num_actions(*player) {
                return Err(SchemaError::new("task.suite.action", format!("action {action} does not exist")));
            }
            if bonuses.is_empty() || bonuses.iter().any(|g| !(*g >= 0.0)) || bonuses.windows(2).any(|w| w[1] < w[0]) {
                return Err(SchemaError::new("task.suite.bonuses", "bonuses must be nonnegative and nondecreasing"));
            }
            for (k, s) in sigmas.iter().enumerate() {
                check_dist(&format!("task.suite.sigmas[{k}]"), s, ext.observation_size(*player))?;
            }
            t_grid(t)?;
        }
        Suite::StaticsPrior { player, chain, sigma_grid, t_grid: t } => {
            binary(*player)?;
            if chain.is_empty() {
                return Err(SchemaError::new("task.suite.chain", "must not be empty"));
            }
            if let Some(k) = chain.iter().position(|[a, b]| !(*a > 0.0 && *b > 0.0)) {
                return Err(SchemaError::new(format!("task.suite.chain[{k}]"), "Beta parameters must be positive"));
            }
            check_unit_grid("task.suite.sigma_grid", sigma_grid)?;
            t_grid(t)?;
        }
        Suite::StaticsSigma { player, sigma_grid, t_grid: t } => {
            binary(*player)?;
            check_unit_grid("task.suite.sigma_grid", sigma_grid)?;
            t_grid(t)?;
        }
        Suite::TimeRevealed { player, sigmas } => {
            binary(*player)?;
            check_unit_grid("task.suite.sigmas", sigmas)?;
        }
        Suite::Horizon { player } | Suite::NeverIndifferent { player } => binary(*player)?,
        Suite::MyopicContainment { player } | Suite::TailBound { player } => {
            check_player("task.suite.player", game, *player)?
        }
        Suite::Stability { h } => {
            if !(*h > 0.0 && *h < 0.5) {
                return Err(SchemaError::new("task.suite.h", "step must lie in (0, 0.5)"));
            }
            if game.num_players() != 2 || game.num_actions(0) != 2 || game.num_actions(1) != 2 {
                return Err(SchemaError::new("game", "stability needs a 2x2 game"));
            }
        }
    }
    Ok(())
}
