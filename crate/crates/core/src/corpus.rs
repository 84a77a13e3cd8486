//! Named example games and stopping problems shared by tests, checks and the CLI.

use crate::belief::{DirichletPrior, Prior};
use crate::game::{matching_pennies, Game};
use crate::stopping::StoppingProblem;

/// Row player strictly prefers U; the column player's best reply flips from R to L
/// once U is learned. Solvable in two rounds.
pub fn dominance_two_step() -> Game {
    Game::bimatrix(&[vec![2.0, 2.0], vec![1.0, 1.0]], &[vec![1.0, 0.0], vec![0.0, 3.0]])
        .expect("valid bimatrix")
}

/// 3x3 game solvable in three rounds: R1 and C2 go first, then C1, then R2.
pub fn dominance_three_step() -> Game {
    Game::bimatrix(
        &[vec![0.0, 0.0, 0.0], vec![2.0, 2.0, 0.0], vec![1.0, 1.0, 1.0]],
        &[vec![2.5, -1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
    )
    .expect("valid bimatrix")
}

/// Matching pennies with a dummy third column, and a row partition that merges
/// the second and third columns.
pub fn analogy_example() -> (Game, Vec<usize>) {
    let g = Game::bimatrix(
        &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 2.0]],
        &[vec![0.0, 1.0, 0.8], vec![1.0, 0.0, 0.3]],
    )
    .expect("valid bimatrix");
    (g, vec![0, 1, 1])
}

/// Row matches a or b against an opponent who always plays the dominant c,
/// with a two-atom prior that never learns from c.
pub fn misspec_example() -> (Game, Prior) {
    let g = Game::bimatrix(
        &[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
        &[vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
    )
    .expect("valid bimatrix");
    let prior = Prior::Finite {
        atoms: vec![vec![0.5, 1.0 / 6.0, 1.0 / 3.0], vec![1.0 / 6.0, 0.5, 1.0 / 3.0]],
        weights: vec![0.5, 0.5],
    };
    (g, prior)
}

/// Rock-paper-scissors payoffs of the row player.
pub fn rps_payoffs() -> Vec<Vec<f64>> {
    vec![vec![0.0, -1.0, 1.0], vec![1.0, 0.0, -1.0], vec![-1.0, 1.0, 0.0]]
}

/// Every named game.
pub fn games() -> Vec<(String, Game)> {
    let mut out = Vec::new();
    for (d, g) in [(1.0, 1.0), (2.0, 1.0), (4.0, 1.0), (1.0, 3.0), (4.0, 3.0), (0.5, 2.0)] {
        out.push((format!("pennies_d{d}_g{g}"), matching_pennies(d, g)));
    }
    out.push(("dominance_two_step".into(), dominance_two_step()));
    out.push(("dominance_three_step".into(), dominance_three_step()));
    out.push(("analogy_example".into(), analogy_example().0));
    out.push(("misspec_example".into(), misspec_example().0));
    out
}

pub fn by_name(name: &str) -> Option<Game> {
    games().into_iter().find(|(n, _)| n == name).map(|(_, g)| g)
}

/// Beta priors used across the binary corpus.
pub fn beta_priors() -> Vec<DirichletPrior> {
    [(1.0, 1.0), (2.0, 1.0), (1.0, 3.0), (3.0, 1.0), (0.5, 0.5)]
        .iter()
        .map(|&(a, b)| DirichletPrior::beta(a, b).expect("positive parameters"))
        .collect()
}

pub const CORPUS_COSTS: [f64; 5] = [0.2, 0.1, 0.05, 0.02, 0.01];

/// Stopping problems of every player with two actions and a binary alphabet
/// in the corpus games, across the corpus priors and costs.
pub fn binary_problems() -> Vec<(String, StoppingProblem)> {
    let mut out = Vec::new();
    for (name, g) in games() {
        for i in 0..g.num_players() {
            if g.num_actions(i) != 2 || g.num_opponent_profiles(i) != 2 {
                continue;
            }
            for (k, prior) in beta_priors().into_iter().enumerate() {
                for c in CORPUS_COSTS {
                    let p = StoppingProblem::new(&g, i, prior.clone(), c).expect("valid corpus problem");
                    out.push((format!("{name}/p{i}/prior{k}/c{c}"), p));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominance_depths() {
        assert_eq!(dominance_two_step().solvability_depth().unwrap(), 2);
        let g = dominance_three_step();
        assert_eq!(g.solvability_depth().unwrap(), 3);
        let levels = g.rationalizability_levels().unwrap();
        assert_eq!(levels[1], vec![vec![1, 2], vec![0, 2]]);
        assert_eq!(levels[2], vec![vec![1, 2], vec![2]]);
        assert_eq!(levels[3], vec![vec![2], vec![2]]);
    }

    #[test]
    fn names_resolve() {
        for (n, g) in games() {
            assert_eq!(by_name(&n), Some(g));
        }
        assert!(by_name("nope").is_none());
        assert!(binary_problems().len() >= 300);
    }
}
