//! Beliefs about opponents' action distributions.
//!
//! Dirichlet priors are summarized by pseudo-counts; after `t` observations the
//! posterior is the prior plus the observed counts, so every belief state lives on
//! the count lattice. Finite-support priors exist only for the misspecification
//! probe and are rejected by the equilibrium solver.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("invalid prior parameter: {0}")]
    InvalidParameter(String),
    #[error("symbol {symbol} outside alphabet of size {size}")]
    UnknownSymbol { symbol: usize, size: usize },
    #[error("alphabet mismatch: expected {expected}, found {found}")]
    AlphabetMismatch { expected: usize, found: usize },
    #[error("every atom assigns zero probability to symbol {0}")]
    ZeroLikelihood(usize),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, BeliefError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPrior {
    alpha: Vec<f64>,
    alpha0: f64,
}

impl DirichletPrior {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(BeliefError::InvalidParameter("alpha must be non-empty".into()));
        }
        if let Some(x) = alpha.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(BeliefError::InvalidParameter(format!(
                "alpha components must be finite and positive, got {x}"
            )));
        }
        let alpha0 = alpha.iter().sum();
        Ok(DirichletPrior { alpha, alpha0 })
    }

    /// Beta(a, b) over a binary alphabet, with symbol 1 counted as a success.
    pub fn beta(a: f64, b: f64) -> Result<Self> {
        DirichletPrior::new(vec![b, a])
    }

    pub fn uniform(size: usize) -> Self {
        DirichletPrior::new(vec![1.0; size.max(1)]).expect("unit pseudo-counts are valid")
    }

    /// Prior with the given mean and total pseudo-count.
    pub fn with_mean(mean: &[f64], concentration: f64) -> Result<Self> {
        DirichletPrior::new(mean.iter().map(|m| m * concentration).collect())
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn size(&self) -> usize {
        self.alpha.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a / self.alpha0).collect()
    }

    /// Posterior mean after observing `counts`.
    pub fn posterior_mean_at(&self, counts: &[u32]) -> Vec<f64> {
        let t: u32 = counts.iter().sum();
        let denom = self.alpha0 + t as f64;
        self.alpha
            .iter()
            .zip(counts)
            .map(|(a, &n)| (a + n as f64) / denom)
            .collect()
    }

    /// `(α, β)` of a binary prior, with symbol 1 as success.
    pub fn beta_params(&self) -> Result<(f64, f64)> {
        if self.size() != 2 {
            return Err(BeliefError::Unsupported(format!(
                "beta parameters need a binary alphabet, got size {}",
                self.size()
            )));
        }
        Ok((self.alpha[1], self.alpha[0]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    prior: DirichletPrior,
    counts: Vec<u32>,
}

impl PosteriorState {
    pub fn new(prior: DirichletPrior) -> Self {
        let counts = vec![0; prior.size()];
        PosteriorState { prior, counts }
    }

    pub fn with_counts(prior: DirichletPrior, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != prior.size() {
            return Err(BeliefError::AlphabetMismatch {
                expected: prior.size(),
                found: counts.len(),
            });
        }
        Ok(PosteriorState { prior, counts })
    }

    pub fn update(&self, y: usize) -> Result<Self> {
        if y >= self.counts.len() {
            return Err(BeliefError::UnknownSymbol {
                symbol: y,
                size: self.counts.len(),
            });
        }
        let mut next = self.clone();
        next.counts[y] += 1;
        Ok(next)
    }

    pub fn update_all(&self, ys: &[usize]) -> Result<Self> {
        ys.iter().try_fold(self.clone(), |s, &y| s.update(y))
    }

    pub fn prior(&self) -> &DirichletPrior {
        &self.prior
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn depth(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// Posterior Dirichlet parameters `α + n`.
    pub fn params(&self) -> Vec<f64> {
        self.prior
            .alpha()
            .iter()
            .zip(&self.counts)
            .map(|(a, &n)| a + n as f64)
            .collect()
    }

    pub fn posterior_mean(&self) -> Vec<f64> {
        self.prior.posterior_mean_at(&self.counts)
    }

    pub fn predictive_prob(&self, y: usize) -> Result<f64> {
        if y >= self.counts.len() {
            return Err(BeliefError::UnknownSymbol {
                symbol: y,
                size: self.counts.len(),
            });
        }
        let denom = self.prior.alpha0() + self.depth() as f64;
        Ok((self.prior.alpha()[y] + self.counts[y] as f64) / denom)
    }
}

/// A prior with finitely many candidate opponent distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSupportPrior {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl FiniteSupportPrior {
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(BeliefError::InvalidParameter(format!(
                "need matching non-empty atoms and weights, got {} atoms and {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let m = atoms[0].len();
        for a in &atoms {
            if a.len() != m {
                return Err(BeliefError::AlphabetMismatch { expected: m, found: a.len() });
            }
            check_prob_vector(a, "atom")?;
        }
        check_prob_vector(&weights, "weights")?;
        Ok(FiniteSupportPrior { atoms, weights })
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn size(&self) -> usize {
        self.atoms[0].len()
    }

    /// Predictive distribution of the next observation.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.size()];
        for (atom, w) in self.atoms.iter().zip(&self.weights) {
            for (o, p) in out.iter_mut().zip(atom) {
                *o += w * p;
            }
        }
        out
    }

    pub fn update(&self, y: usize) -> Result<Self> {
        if y >= self.size() {
            return Err(BeliefError::UnknownSymbol { symbol: y, size: self.size() });
        }
        let raw: Vec<f64> = self.atoms.iter().zip(&self.weights).map(|(a, w)| w * a[y]).collect();
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(BeliefError::ZeroLikelihood(y));
        }
        Ok(FiniteSupportPrior {
            atoms: self.atoms.clone(),
            weights: raw.iter().map(|w| w / total).collect(),
        })
    }

    /// Posterior after observing the given counts; `None` if the counts have zero likelihood.
    pub fn posterior_at(&self, counts: &[u32]) -> Option<Self> {
        // Work in log space so long probes do not underflow.
        let logs: Vec<f64> = self
            .atoms
            .iter()
            .zip(&self.weights)
            .map(|(atom, w)| {
                let mut l = w.ln();
                for (p, &n) in atom.iter().zip(counts) {
                    if n > 0 {
                        l += n as f64 * p.ln();
                    }
                }
                l
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return None;
        }
        let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = raw.iter().sum();
        Some(FiniteSupportPrior {
            atoms: self.atoms.clone(),
            weights: raw.iter().map(|w| w / total).collect(),
        })
    }
}

fn check_prob_vector(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(BeliefError::InvalidParameter(format!("{what} entries must be nonnegative")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(BeliefError::InvalidParameter(format!("{what} sum to {s}, not 1")));
    }
    Ok(())
}

/// Either prior family, as read from configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Prior {
    Dirichlet { alpha: Vec<f64> },
    Finite { atoms: Vec<Vec<f64>>, weights: Vec<f64> },
}

impl Prior {
    pub fn size(&self) -> usize {
        match self {
            Prior::Dirichlet { alpha } => alpha.len(),
            Prior::Finite { atoms, .. } => atoms.first().map_or(0, Vec::len),
        }
    }
}

impl From<&DirichletPrior> for Prior {
    fn from(p: &DirichletPrior) -> Self {
        Prior::Dirichlet { alpha: p.alpha().to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsdOrder {
    FirstDominates,
    SecondDominates,
    Equal,
    Incomparable,
}

/// Strong stochastic dominance between two Beta priors. Beta(α′,β′) dominates
/// Beta(α,β) iff α′ ≥ α and β′ ≤ β, which makes the likelihood ratio monotone.
pub fn ssd_compare(p: &DirichletPrior, q: &DirichletPrior) -> Result<SsdOrder> {
    let (pa, pb) = p.beta_params()?;
    let (qa, qb) = q.beta_params()?;
    if pa == qa && pb == qb {
        return Ok(SsdOrder::Equal);
    }
    if pa >= qa && pb <= qb {
        return Ok(SsdOrder::FirstDominates);
    }
    if qa >= pa && qb <= pb {
        return Ok(SsdOrder::SecondDominates);
    }
    Ok(SsdOrder::Incomparable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn update_examples() {
        let s = PosteriorState::new(DirichletPrior::beta(1.0, 1.0).unwrap()).update(1).unwrap();
        let p = s.params();
        assert_eq!((p[1], p[0]), (2.0, 1.0));
        let s = PosteriorState::new(DirichletPrior::uniform(3)).update_all(&[0, 2, 0]).unwrap();
        assert_eq!(s.counts(), &[2, 0, 1]);
        assert_eq!(s.params(), vec![3.0, 1.0, 2.0]);
        let b = PosteriorState::new(DirichletPrior::uniform(2));
        assert_eq!(b.update_all(&[1, 0, 1]).unwrap(), b.update_all(&[0, 1, 1]).unwrap());
        assert!(matches!(b.update(2), Err(BeliefError::UnknownSymbol { .. })));
    }

    #[test]
    fn mean_and_predictive_examples() {
        let b = PosteriorState::new(DirichletPrior::uniform(2)).update_all(&[1, 0, 1]).unwrap();
        assert!((b.posterior_mean()[1] - 0.6).abs() < 1e-15);
        let d = PosteriorState::new(DirichletPrior::uniform(3)).update_all(&[0, 0, 2]).unwrap();
        assert!(close(&d.posterior_mean(), &[0.5, 1.0 / 6.0, 1.0 / 3.0], 1e-15));
        assert!((d.predictive_prob(0).unwrap() - 0.5).abs() < 1e-15);
        let p = DirichletPrior::new(vec![2.0, 3.0, 5.0]).unwrap();
        assert_eq!(PosteriorState::new(p.clone()).posterior_mean(), p.mean());
        let b21 = PosteriorState::new(DirichletPrior::beta(2.0, 1.0).unwrap());
        assert!((b21.predictive_prob(1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    fn two_atom_prior() -> FiniteSupportPrior {
        FiniteSupportPrior::new(
            vec![vec![0.5, 1.0 / 6.0, 1.0 / 3.0], vec![1.0 / 6.0, 0.5, 1.0 / 3.0]],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn finite_update_examples() {
        let p = two_atom_prior();
        assert_eq!(p.update(2).unwrap().weights(), &[0.5, 0.5]);
        assert!(close(p.update(0).unwrap().weights(), &[0.75, 0.25], 1e-15));
        let single = FiniteSupportPrior::new(vec![vec![0.2, 0.8]], vec![1.0]).unwrap();
        assert_eq!(single.update(1).unwrap(), single);
        let z = FiniteSupportPrior::new(vec![vec![1.0, 0.0]], vec![1.0]).unwrap();
        assert_eq!(z.update(1), Err(BeliefError::ZeroLikelihood(1)));
        assert!(z.posterior_at(&[0, 1]).is_none());
        let via_counts = p.posterior_at(&[1, 0, 3]).unwrap();
        let via_updates = p.update(0).unwrap().update(2).unwrap().update(2).unwrap().update(2).unwrap();
        assert!(close(via_counts.weights(), via_updates.weights(), 1e-14));
    }

    #[test]
    fn ssd_examples() {
        let b = |a, c| DirichletPrior::beta(a, c).unwrap();
        assert_eq!(ssd_compare(&b(2.0, 1.0), &b(1.0, 1.0)).unwrap(), SsdOrder::FirstDominates);
        assert_eq!(ssd_compare(&b(1.0, 1.0), &b(1.0, 1.0)).unwrap(), SsdOrder::Equal);
        assert_eq!(ssd_compare(&b(2.0, 2.0), &b(1.0, 1.0)).unwrap(), SsdOrder::Incomparable);
        assert_eq!(ssd_compare(&b(1.0, 2.0), &b(1.0, 1.0)).unwrap(), SsdOrder::SecondDominates);
        assert!(ssd_compare(&DirichletPrior::uniform(3), &b(1.0, 1.0)).is_err());
    }

    #[test]
    fn invalid_priors_rejected() {
        assert!(DirichletPrior::new(vec![1.0, 0.0]).is_err());
        assert!(DirichletPrior::new(vec![]).is_err());
        assert!(FiniteSupportPrior::new(vec![vec![0.5, 0.5]], vec![0.7]).is_err());
    }

    fn arb_state() -> impl Strategy<Value = PosteriorState> {
        (2usize..5)
            .prop_flat_map(|m| (prop::collection::vec(0.1f64..5.0, m), prop::collection::vec(0u32..20, m)))
            .prop_map(|(a, n)| PosteriorState::with_counts(DirichletPrior::new(a).unwrap(), n).unwrap())
    }

    proptest! {
        #[test]
        fn martingale_property(s in arb_state()) {
            let mean = s.posterior_mean();
            let mut acc = vec![0.0; mean.len()];
            for y in 0..mean.len() {
                let p = s.predictive_prob(y).unwrap();
                for (o, v) in acc.iter_mut().zip(s.update(y).unwrap().posterior_mean()) {
                    *o += p * v;
                }
            }
            prop_assert!(close(&acc, &mean, 1e-12));
        }

        #[test]
        fn predictive_equals_mean(s in arb_state()) {
            let mean = s.posterior_mean();
            let pred: Vec<f64> = (0..mean.len()).map(|y| s.predictive_prob(y).unwrap()).collect();
            prop_assert!(close(&pred, &mean, 1e-15));
            prop_assert!((pred.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn ssd_preserved_by_updating(a in 0.2f64..5.0, b in 0.2f64..5.0, da in 0.0f64..3.0, db in 0.0f64..3.0, y in 0usize..2) {
            let q = DirichletPrior::beta(a, b + db).unwrap();
            let p = DirichletPrior::beta(a + da, b).unwrap();
            let before = ssd_compare(&p, &q).unwrap();
            prop_assert!(matches!(before, SsdOrder::FirstDominates | SsdOrder::Equal));
            let sp = PosteriorState::new(p).update(y).unwrap().params();
            let sq = PosteriorState::new(q).update(y).unwrap().params();
            let after = ssd_compare(&DirichletPrior::new(sp).unwrap(), &DirichletPrior::new(sq).unwrap()).unwrap();
            prop_assert_eq!(before, after);
        }

        #[test]
        fn posterior_mean_is_affine_in_counts(alpha in prop::collection::vec(0.1f64..5.0, 3), path in prop::collection::vec(0usize..3, 1..30)) {
            // E[σ_y | n] = n_y/(α0+t) + α_y/(α0+t): slope and intercept depend only on t.
            let prior = DirichletPrior::new(alpha.clone()).unwrap();
            let s = PosteriorState::new(prior.clone()).update_all(&path).unwrap();
            let t = path.len() as f64;
            let slope = 1.0 / (prior.alpha0() + t);
            for y in 0..3 {
                let expected = slope * s.counts()[y] as f64 + alpha[y] * slope;
                prop_assert!((s.posterior_mean()[y] - expected).abs() < 1e-14);
            }
        }
    }
}
