//! Executes a validated task and collects the files it emits.

use serde::Serialize;
use serde_json::{json, Map, Value};
use sse_core::analysis::{
    abee_sweep, comparative_statics_payoff, comparative_statics_prior, comparative_statics_sigma, misspec_detector,
    time_revealed_indifference, StaticsReport,
};
use sse_core::equilibrium::{
    cost_sweep, dynamics_run_until, rationalizability_sweep, reachability_experiment, sse_solve, stability_check,
    BestResponseMap, DynamicsVariant, EquilibriumResult, ExtendedGame, SolveMethod, SolveOptions,
};
use sse_core::{Decision, DirichletPrior, MixedProfile, PolicyKind, StoppingProblem};

use crate::config::{PolicyChoice, RunConfig, Suite, Task};

/// Files to write (name, contents) plus the summary fields.
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub summary: Map<String, Value>,
    /// False on non-convergence or a failed verdict.
    pub ok: bool,
}

impl Outcome {
    fn new() -> Self {
        Outcome { files: Vec::new(), summary: Map::new(), ok: true }
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), String> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
        text.push('\n');
        self.files.push((name.to_string(), text));
        Ok(())
    }

    fn csv(&mut self, name: &str, text: String) {
        self.files.push((name.to_string(), text));
    }

    fn set(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn counts_field(n: &[u32]) -> String {
    n.iter().map(u32::to_string).collect::<Vec<_>>().join(";")
}

fn floats_field(x: &[f64]) -> String {
    x.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn stop_beliefs_csv(result: &EquilibriumResult, i: usize) -> String {
    let mut s = String::from("depth,counts,mean,prob\n");
    for b in &result.stopping_beliefs[i] {
        s.push_str(&format!("{},{},{},{}\n", b.depth, counts_field(&b.counts), floats_field(&b.mean), b.prob));
    }
    s
}

fn solve_options(cfg: &RunConfig, method: SolveMethod, max_iter: usize, warm: Option<&Vec<Vec<f64>>>) -> SolveOptions {
    SolveOptions {
        method,
        tol: cfg.tol.unwrap_or(1e-8),
        max_iter,
        warm_start: warm.map(|w| MixedProfile::new(w.clone())),
    }
}

pub fn execute(cfg: &RunConfig, ext: &ExtendedGame) -> Result<Outcome, String> {
    let mut out = Outcome::new();
    match &cfg.task {
        Task::Solve { method, max_iter, policy, warm_start } => {
            let map = BestResponseMap::new(ext, PolicyKind::from(*policy)).map_err(err)?;
            let opts = solve_options(cfg, *method, *max_iter, warm_start.as_ref());
            let r = sse_solve(&map, &opts).map_err(err)?;
            out.ok = r.converged();
            out.set("sigma", &r.sigma.dist);
            out.set("residual", r.residual);
            out.set("solver_status", r.status);
            out.set("method", &r.method);
            out.set("iterations", r.iterations);
            if !r.diagnostics.is_empty() {
                out.set("diagnostics", &r.diagnostics);
            }
            for i in 0..r.action_time.len() {
                out.csv(&format!("action_time_p{i}.csv"), r.action_time[i].to_csv());
                out.csv(&format!("stopping_beliefs_p{i}.csv"), stop_beliefs_csv(&r, i));
            }
            out.json("equilibrium.json", &r)?;
        }
        Task::Stopping { player, policy, sigma } => {
            let problem = ext.stopping_problem(*player).map_err(err)?;
            let pol = match policy {
                PolicyChoice::Optimal => problem.solve(),
                PolicyChoice::Myopic => problem.myopic_policy(),
            };
            let check = problem.self_check();
            let mut csv = String::from("depth,counts,decision,value,stop_value\n");
            for row in pol.export_rows() {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.depth,
                    counts_field(&row.counts),
                    row.decision,
                    row.value,
                    row.stop_value
                ));
            }
            out.csv("policy.csv", csv);
            out.set("horizon", pol.horizon());
            out.set("root", decision_label(pol.root()));
            out.set("value", pol.value(0, 0));
            out.set("self_check_consistent", check.consistent);
            out.set("knife_edges", pol.knife_edges());
            if let Some(s) = sigma {
                let d = pol.joint_action_time(s).map_err(err)?;
                out.set("action_marginal", d.action_marginal());
                out.csv("action_time.csv", d.to_csv());
                out.json("action_time.json", &d)?;
            }
        }
        Task::Boundaries { player } => {
            let problem = ext.stopping_problem(*player).map_err(err)?;
            let b = problem.boundaries().map_err(err)?;
            let upper_dec = b.upper.windows(2).all(|w| w[1] <= w[0] + 1e-12);
            let lower_inc = b.lower.windows(2).all(|w| w[1] >= w[0] - 1e-12);
            out.set("sigma_tilde", b.sigma_tilde);
            out.set("horizon", b.horizon);
            out.set("upper_nonincreasing", upper_dec);
            out.set("lower_nondecreasing", lower_inc);
            out.csv("boundaries.csv", b.to_csv());
            out.json("boundaries.json", &b)?;
        }
        Task::Dynamics { variant, steps, start, stop_tol, policy } => {
            let map = BestResponseMap::new(ext, PolicyKind::from(*policy)).map_err(err)?;
            let variant = match (variant, cfg.seed) {
                (DynamicsVariant::FinitePopulation { n, .. }, Some(seed)) => {
                    DynamicsVariant::FinitePopulation { n: *n, seed }
                }
                (v, _) => v.clone(),
            };
            let s0 = MixedProfile::new(start.clone());
            let tr = dynamics_run_until(&map, &s0, &variant, *steps, *stop_tol).map_err(err)?;
            out.set("steps", tr.sigmas.len() - 1);
            out.set("final_sigma", &tr.last().dist);
            out.set("final_residual", tr.final_residual());
            if let Some(t) = stop_tol {
                out.ok = tr.final_residual() < *t;
            }
            out.csv("trace.csv", tr.to_csv());
            out.json("trace.json", &tr)?;
        }
        Task::SweepCosts { grid, warm, policy } => {
            let opts = solve_options(cfg, SolveMethod::Auto, 10_000, None);
            let pts = cost_sweep(ext, grid, PolicyKind::from(*policy), &opts, *warm).map_err(err)?;
            let mut csv = String::from("cost,player,action,prob,residual,nash_distance\n");
            for p in &pts {
                for (i, d) in p.result.sigma.dist.iter().enumerate() {
                    for (a, x) in d.iter().enumerate() {
                        let nd = p.nash_distance.map_or(String::new(), |v| v.to_string());
                        csv.push_str(&format!("{},{i},{a},{x},{},{nd}\n", p.cost, p.result.residual));
                    }
                }
            }
            out.ok = pts.iter().all(|p| p.result.converged());
            out.set("points", pts.len());
            out.set("final_sigma", pts.last().map(|p| p.result.sigma.dist.clone()));
            out.set("final_nash_distance", pts.last().and_then(|p| p.nash_distance));
            out.csv("sweep.csv", csv);
            out.json("sweep.json", &pts)?;
        }
        Task::Reachability { target, centers, concentration, grid, tolerance } => {
            let rep = reachability_experiment(ext.game(), target, centers, *concentration, grid, *tolerance)
                .map_err(err)?;
            out.ok = rep.path.iter().all(|p| p.2);
            out.set("reached", rep.reached);
            out.set("final_distance", rep.final_distance);
            let mut csv = String::from("cost,distance,converged\n");
            for (c, d, ok) in &rep.path {
                csv.push_str(&format!("{c},{d},{ok}\n"));
            }
            out.csv("reachability.csv", csv);
            out.json("reachability.json", &rep)?;
        }
        Task::Rationalizability { grid, eps_supp } => {
            let opts = solve_options(cfg, SolveMethod::Auto, 10_000, None);
            let rep = rationalizability_sweep(ext, grid, *eps_supp, &opts).map_err(err)?;
            out.ok = rep.points.iter().all(|p| p.converged);
            out.set("solvability_depth", rep.solvability_depth);
            out.set("certified", rep.points.iter().map(|p| p.certified_k).collect::<Vec<_>>());
            out.set("nondecreasing", rep.nondecreasing);
            out.set("reaches_depth", rep.reaches_depth);
            let mut csv = String::from("cost,certified_k,residual,converged\n");
            for p in &rep.points {
                csv.push_str(&format!("{},{},{},{}\n", p.cost, p.certified_k, p.residual, p.converged));
            }
            out.csv("rationalizability.csv", csv);
            out.json("rationalizability.json", &rep)?;
        }
        Task::Check { suite } => run_suite(cfg, ext, suite, &mut out)?,
        Task::Misspec { player, prior, true_sigma, probe_depth } => {
            let rep = misspec_detector(ext.game(), *player, prior, ext.costs()[*player], true_sigma, *probe_depth)
                .map_err(err)?;
            out.set("never_stop_mass", rep.never_stop_mass);
            out.set("stopped_mass", rep.stopped_mass);
            out.set("exact", rep.exact);
            out.set("initial_gain", rep.gain_trace.first());
            let mut csv = String::from("step,gain\n");
            for (t, g) in rep.gain_trace.iter().enumerate() {
                csv.push_str(&format!("{t},{g}\n"));
            }
            out.csv("gain_trace.csv", csv);
            out.json("misspec.json", &rep)?;
        }
        Task::Analogy { grid, tolerance } => {
            let rep = abee_sweep(ext, grid, *tolerance).map_err(err)?;
            out.ok = rep.points.iter().all(|p| p.converged);
            out.set("pass", rep.pass);
            out.set("final_distance", rep.points.last().and_then(|p| p.distance));
            let mut csv = String::from("cost,distance,regret,converged\n");
            for p in &rep.points {
                let d = p.distance.map_or(String::new(), |v| v.to_string());
                csv.push_str(&format!("{},{d},{},{}\n", p.cost, p.regret, p.converged));
            }
            out.csv("analogy.csv", csv);
            out.json("analogy.json", &rep)?;
        }
    }
    Ok(out)
}

fn decision_label(d: Decision) -> String {
    match d {
        Decision::Continue => "continue".into(),
        Decision::Stop { action } => format!("stop:{action}"),
    }
}

fn statics(out: &mut Outcome, rep: &StaticsReport) -> Result<(), String> {
    out.ok = rep.pass;
    out.set("pass", rep.pass);
    out.set("worst_violation", rep.worst_violation);
    out.csv("statics.csv", rep.to_csv());
    out.json("statics.json", rep)
}

fn problem(ext: &ExtendedGame, player: usize) -> Result<StoppingProblem, String> {
    ext.stopping_problem(player).map_err(err)
}

fn run_suite(cfg: &RunConfig, ext: &ExtendedGame, suite: &Suite, out: &mut Outcome) -> Result<(), String> {
    out.set("suite", suite_name(suite));
    match suite {
        Suite::StaticsPayoff { player, action, bonuses, sigmas, t_grid } => {
            let rep = comparative_statics_payoff(&problem(ext, *player)?, *action, bonuses, sigmas, t_grid).map_err(err)?;
            statics(out, &rep)?;
        }
        Suite::StaticsPrior { player, chain, sigma_grid, t_grid } => {
            let chain = chain
                .iter()
                .map(|[a, b]| DirichletPrior::beta(*a, *b))
                .collect::<Result<Vec<_>, _>>()
                .map_err(err)?;
            let rep = comparative_statics_prior(&problem(ext, *player)?, &chain, sigma_grid, t_grid).map_err(err)?;
            statics(out, &rep)?;
        }
        Suite::StaticsSigma { player, sigma_grid, t_grid } => {
            let rep = comparative_statics_sigma(&problem(ext, *player)?, sigma_grid, t_grid).map_err(err)?;
            statics(out, &rep)?;
        }
        Suite::TimeRevealed { player, sigmas } => {
            let p = problem(ext, *player)?;
            let tilde = p.indifference().map(|ind| ind.sigma_tilde).ok_or("no interior indifference point")?;
            let pol = p.solve();
            let reps = sigmas
                .iter()
                .map(|&s| time_revealed_indifference(&pol, s, tilde))
                .collect::<Result<Vec<_>, _>>()
                .map_err(err)?;
            out.ok = reps.iter().all(|r| r.nonincreasing);
            out.set("pass", out.ok);
            out.set("rank_correlations", reps.iter().map(|r| r.rank_correlation).collect::<Vec<_>>());
            out.json("time_revealed.json", &reps)?;
        }
        Suite::Horizon { player } => {
            let p = problem(ext, *player)?;
            let pol = p.solve();
            let h = pol.horizon();
            let stops_at_horizon = (0..pol.lattice().len(h)).all(|idx| pol.decision(h, idx) != Decision::Continue);
            let check = p.self_check();
            let b = p.boundaries().map_err(err)?;
            let upper_dec = b.upper.windows(2).all(|w| w[1] <= w[0] + 1e-12);
            let lower_inc = b.lower.windows(2).all(|w| w[1] >= w[0] - 1e-12);
            out.ok = stops_at_horizon && check.consistent && upper_dec && lower_inc;
            out.set("pass", out.ok);
            out.set("horizon", h);
            out.set("self_check_consistent", check.consistent);
            out.csv("boundaries.csv", b.to_csv());
            out.json("boundaries.json", &b)?;
        }
        Suite::NeverIndifferent { player } => {
            let v = problem(ext, *player)?.solve().never_indifferent_violations().map_err(err)?;
            out.ok = v.is_empty();
            out.set("pass", out.ok);
            out.set("violations", &v);
        }
        Suite::MyopicContainment { player } => {
            let p = problem(ext, *player)?;
            let v = p.myopic_policy().stops_no_later_than(&p.solve()).map_err(err)?;
            out.ok = v.is_empty();
            out.set("pass", out.ok);
            out.set("violations", &v);
        }
        Suite::TailBound { player } => {
            let p = problem(ext, *player)?;
            let tail = p.solve().stop_time_tail_under_prior();
            let sup = p.payoffs().iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
            let mut csv = String::from("t,tail,bound\n");
            let mut violations = 0;
            for (t, &q) in tail.iter().enumerate().skip(1) {
                let bound = 2.0 * sup / (p.cost() * t as f64);
                if q > bound + 1e-12 {
                    violations += 1;
                }
                csv.push_str(&format!("{t},{q},{bound}\n"));
            }
            out.ok = violations == 0;
            out.set("pass", out.ok);
            out.set("violations", violations);
            out.csv("tail.csv", csv);
        }
        Suite::Stability { h } => {
            let map = BestResponseMap::new(ext, PolicyKind::Optimal).map_err(err)?;
            let r = sse_solve(&map, &solve_options(cfg, SolveMethod::Auto, 10_000, None)).map_err(err)?;
            let rep = stability_check(&map, &r.sigma, *h).map_err(err)?;
            out.ok = r.converged() && rep.stable && rep.product <= 0.0;
            out.set("pass", out.ok);
            out.set("sigma", &r.sigma.dist);
            out.set("product", rep.product);
            out.json("stability.json", &json!({ "equilibrium": r.sigma, "report": rep }))?;
        }
    }
    Ok(())
}

fn suite_name(s: &Suite) -> &'static str {
    match s {
        Suite::StaticsPayoff { .. } => "statics_payoff",
        Suite::StaticsPrior { .. } => "statics_prior",
        Suite::StaticsSigma { .. } => "statics_sigma",
        Suite::TimeRevealed { .. } => "time_revealed",
        Suite::Horizon { .. } => "horizon",
        Suite::NeverIndifferent { .. } => "never_indifferent",
        Suite::MyopicContainment { .. } => "myopic_containment",
        Suite::TailBound { .. } => "tail_bound",
        Suite::Stability { .. } => "stability",
    }
}
