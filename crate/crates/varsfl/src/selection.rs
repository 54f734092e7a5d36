//! Client-selection policies and the validation-aligned scoring pipeline.
//!
//! Scoring turns per-client validation losses into floored improvements
//! (`delta = max(0, base - loss)`), normalizes them against the round's best
//! improvement into qualities in `[floor, 1]`, and folds qualities into a
//! sliding-window ledger. A client's reputation is the windowed mean quality
//! times `ln(1 + participation_count)`; selection takes the top reputations
//! for most slots and fills the rest uniformly at random.
//!
//! Baselines: uniform random, power-of-choice (highest local loss in a
//! sampled candidate pool), and a simplified statistical-utility policy
//! with an exploration bonus ("oort-simplified" — the system-efficiency
//! half of the original is meaningless in a simulator with no latencies).

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Random-slot rate of the simplified statistical-utility policy.
pub const OORT_EPSILON_GREEDY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    FedAvgRandom,
    PowerOfChoice,
    OortSimplified,
    VarsFl,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::FedAvgRandom,
        Policy::PowerOfChoice,
        Policy::OortSimplified,
        Policy::VarsFl,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Policy::FedAvgRandom => "fedavg-random",
            Policy::PowerOfChoice => "power-of-choice",
            Policy::OortSimplified => "oort-simplified",
            Policy::VarsFl => "vars-fl",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Policy::ALL.iter().map(Policy::as_str).collect();
                Error::Config(format!(
                    "unknown policy '{s}'; valid policies: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// Per-round clients budget, absolute or as a fraction of the population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClientsPerRound {
    Count(usize),
    Fraction(f64),
}

impl ClientsPerRound {
    /// Fractions resolve to `max(1, round(fraction * n))`.
    pub fn resolve(&self, n_clients: usize) -> usize {
        match *self {
            ClientsPerRound::Count(c) => c,
            ClientsPerRound::Fraction(f) => ((f * n_clients as f64).round() as usize).max(1),
        }
    }
}

/// All selection knobs, independent of the population size.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorConfig {
    pub policy: Policy,
    pub clients_per_round: ClientsPerRound,
    /// Exploration rate rho: fraction of the budget filled uniformly.
    pub exploration_rate: f64,
    /// Rounds of forced uniform selection before reputations are trusted.
    pub cold_start_rounds: u64,
    /// Sliding-window size of the quality history.
    pub window: usize,
    /// Quality floor epsilon.
    pub quality_floor: f64,
    /// Stability constant zeta in the quality normalizer.
    pub stability_constant: f64,
    pub poc_candidate_factor: usize,
    pub oort_exploration_weight: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            policy: Policy::VarsFl,
            clients_per_round: ClientsPerRound::Fraction(0.10),
            exploration_rate: 0.3,
            cold_start_rounds: 15,
            window: 5,
            quality_floor: 0.01,
            stability_constant: 1e-8,
            poc_candidate_factor: 2,
            oort_exploration_weight: 10.0,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if let ClientsPerRound::Count(0) = self.clients_per_round {
            return Err(Error::Config("clients_per_round must be >= 1".into()));
        }
        if let ClientsPerRound::Fraction(f) = self.clients_per_round {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!(
                    "clients_per_round fraction must be in (0,1], got {f}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.exploration_rate) {
            return Err(Error::Config("exploration_rate must be in [0,1]".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        if !(self.quality_floor > 0.0 && self.quality_floor <= 1.0) {
            return Err(Error::Config("quality_floor must be in (0,1]".into()));
        }
        if self.stability_constant <= 0.0 {
            return Err(Error::Config("stability_constant must be > 0".into()));
        }
        if self.poc_candidate_factor == 0 {
            return Err(Error::Config("poc_candidate_factor must be >= 1".into()));
        }
        if self.oort_exploration_weight < 0.0 {
            return Err(Error::Config("oort_exploration_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// One scored client in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityRecord {
    pub client: usize,
    /// Validation-loss improvement, floored at zero.
    pub delta: f64,
    /// Normalized quality in `[floor, 1]`.
    pub quality: f64,
    pub round: u64,
}

/// `delta_i = max(0, base_loss - loss_i)`; clients whose update degrades the
/// validation loss get exactly zero.
pub fn compute_deltas(base_loss: f64, client_losses: &[(usize, f64)]) -> Vec<(usize, f64)> {
    client_losses
        .iter()
        .map(|&(client, loss)| (client, (base_loss - loss).max(0.0)))
        .collect()
}

/// `quality_i = max(floor, delta_i / (delta_max + zeta))`. When every delta
/// is zero all qualities sit at the floor, keeping exploration alive.
pub fn normalize_quality(
    deltas: &[(usize, f64)],
    quality_floor: f64,
    stability_constant: f64,
    round: u64,
) -> Vec<QualityRecord> {
    let delta_max = deltas.iter().map(|&(_, d)| d).fold(0.0f64, f64::max);
    deltas
        .iter()
        .map(|&(client, delta)| QualityRecord {
            client,
            delta,
            quality: (delta / (delta_max + stability_constant))
                .max(quality_floor)
                .min(1.0),
            round,
        })
        .collect()
}

/// Windowed reputation summary for one client.
#[derive(Debug, Clone, PartialEq)]
pub struct Reputation {
    pub client: usize,
    /// Mean over the retained (most recent, at most `window`) qualities.
    pub mean_quality: f64,
    pub participation: u64,
    /// `mean_quality * ln(1 + participation)`; zero for never-scored clients.
    pub score: f64,
}

/// Per-client quality history (bounded window) and participation counts.
#[derive(Debug, Clone)]
pub struct ClientLedger {
    window: usize,
    histories: Vec<VecDeque<f64>>,
    participation: Vec<u64>,
}

impl ClientLedger {
    pub fn new(num_clients: usize, window: usize) -> Self {
        assert!(window >= 1, "window must be >= 1");
        Self {
            window,
            histories: vec![VecDeque::with_capacity(window); num_clients],
            participation: vec![0; num_clients],
        }
    }

    pub fn num_clients(&self) -> usize {
        self.histories.len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    fn check(&self, client: usize) -> Result<()> {
        if client >= self.histories.len() {
            Err(Error::UnknownClient(client))
        } else {
            Ok(())
        }
    }

    /// Appends each record's quality to its client's history (evicting the
    /// oldest entry past the window) and bumps the participation count.
    /// Clients not mentioned are untouched.
    pub fn record(&mut self, records: &[QualityRecord]) -> Result<()> {
        for r in records {
            self.check(r.client)?;
        }
        for r in records {
            let h = &mut self.histories[r.client];
            h.push_back(r.quality);
            if h.len() > self.window {
                h.pop_front();
            }
            self.participation[r.client] += 1;
        }
        Ok(())
    }

    pub fn history(&self, client: usize) -> Result<Vec<f64>> {
        self.check(client)?;
        Ok(self.histories[client].iter().copied().collect())
    }

    pub fn participation(&self, client: usize) -> Result<u64> {
        self.check(client)?;
        Ok(self.participation[client])
    }

    pub fn reputation(&self, client: usize) -> Result<Reputation> {
        self.check(client)?;
        let h = &self.histories[client];
        let p = self.participation[client];
        let (mean_quality, score) = if h.is_empty() {
            (0.0, 0.0)
        } else {
            let mean = h.iter().sum::<f64>() / h.len() as f64;
            (mean, mean * (1.0 + p as f64).ln())
        };
        Ok(Reputation {
            client,
            mean_quality,
            participation: p,
            score,
        })
    }

    pub fn reputations(&self) -> Vec<Reputation> {
        (0..self.num_clients())
            .map(|c| self.reputation(c).expect("client in range"))
            .collect()
    }
}

/// Reputation/exploration split: `floor((1 - rho) * m)` reputation slots,
/// the rest uniform. A tiny snap eases float noise off exact integers.
pub fn vars_split(m: usize, rho: f64) -> (usize, usize) {
    let rep = (((1.0 - rho) * m as f64) + 1e-9).floor() as usize;
    let rep = rep.min(m);
    (rep, m - rep)
}

/// Outcome of one reputation-based selection.
#[derive(Debug, Clone, PartialEq)]
pub struct VarsSelection {
    /// Top-reputation picks (empty during cold start). Ties break toward
    /// the lower client id.
    pub reputation_picks: Vec<usize>,
    /// Uniform picks from the complement.
    pub exploration_picks: Vec<usize>,
}

impl VarsSelection {
    pub fn selected(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .reputation_picks
            .iter()
            .chain(&self.exploration_picks)
            .copied()
            .collect();
        all.sort_unstable();
        all
    }
}

fn sample_uniform(n_clients: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut picks: Vec<usize> = rand::seq::index::sample(rng, n_clients, m).into_vec();
    picks.sort_unstable();
    picks
}

/// Reputation-based selection. Rounds `<= cold_start_rounds` sample
/// uniformly; afterwards the budget splits per [`vars_split`].
pub fn select_vars(
    ledger: &ClientLedger,
    m: usize,
    rho: f64,
    cold_start_rounds: u64,
    round: u64,
    rng: &mut ChaCha8Rng,
) -> Result<VarsSelection> {
    let n = ledger.num_clients();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("m = {m} not in 1..={n}")));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid("rho must be in [0,1]"));
    }
    if round <= cold_start_rounds {
        return Ok(VarsSelection {
            reputation_picks: Vec::new(),
            exploration_picks: sample_uniform(n, m, rng),
        });
    }

    let (m_rep, m_rnd) = vars_split(m, rho);
    let mut ranked = ledger.reputations();
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("reputation scores are finite")
            .then(a.client.cmp(&b.client))
    });
    let mut reputation_picks: Vec<usize> = ranked[..m_rep].iter().map(|r| r.client).collect();
    reputation_picks.sort_unstable();

    let picked: HashSet<usize> = reputation_picks.iter().copied().collect();
    let complement: Vec<usize> = (0..n).filter(|c| !picked.contains(c)).collect();
    let exploration_picks: Vec<usize> = {
        let mut picks: Vec<usize> = rand::seq::index::sample(rng, complement.len(), m_rnd)
            .into_iter()
            .map(|i| complement[i])
            .collect();
        picks.sort_unstable();
        picks
    };
    Ok(VarsSelection {
        reputation_picks,
        exploration_picks,
    })
}

/// Uniform sampling without replacement (the FedAvg baseline).
pub fn select_uniform(n_clients: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if m == 0 || m > n_clients {
        return Err(Error::invalid(format!("m = {m} not in 1..={n_clients}")));
    }
    Ok(sample_uniform(n_clients, m, rng))
}

/// Power-of-choice: sample `min(n, candidate_factor * m)` candidates
/// uniformly, evaluate the global model's loss on each candidate's local
/// data via `eval_loss`, keep the `m` with the highest loss (ties toward
/// the lower id).
pub fn select_poc(
    n_clients: usize,
    m: usize,
    candidate_factor: usize,
    rng: &mut ChaCha8Rng,
    mut eval_loss: impl FnMut(usize) -> f64,
) -> Result<Vec<usize>> {
    if m == 0 || m > n_clients {
        return Err(Error::invalid(format!("m = {m} not in 1..={n_clients}")));
    }
    if candidate_factor == 0 {
        return Err(Error::invalid("candidate_factor must be >= 1"));
    }
    let d = (candidate_factor * m).min(n_clients);
    let mut candidates: Vec<usize> = rand::seq::index::sample(rng, n_clients, d).into_vec();
    candidates.sort_unstable();
    let mut scored: Vec<(usize, f64)> = candidates.into_iter().map(|c| (c, eval_loss(c))).collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("losses are finite")
            .then(a.0.cmp(&b.0))
    });
    let mut picks: Vec<usize> = scored[..m].iter().map(|&(c, _)| c).collect();
    picks.sort_unstable();
    Ok(picks)
}

/// Training-loss statistics from a client's most recent participation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OortStat {
    pub samples: u64,
    /// Mean of squared per-sample training losses.
    pub mean_sq_loss: f64,
    pub last_round: u64,
}

/// Server-side state for the simplified statistical-utility policy.
#[derive(Debug, Clone)]
pub struct OortTracker {
    stats: Vec<Option<OortStat>>,
}

impl OortTracker {
    pub fn new(num_clients: usize) -> Self {
        Self {
            stats: vec![None; num_clients],
        }
    }

    pub fn num_clients(&self) -> usize {
        self.stats.len()
    }

    pub fn stat(&self, client: usize) -> Option<OortStat> {
        self.stats.get(client).copied().flatten()
    }

    pub fn observe(&mut self, client: usize, samples: u64, mean_sq_loss: f64, round: u64) -> Result<()> {
        if client >= self.stats.len() {
            return Err(Error::UnknownClient(client));
        }
        self.stats[client] = Some(OortStat {
            samples,
            mean_sq_loss,
            last_round: round,
        });
        Ok(())
    }
}

/// Simplified statistical utility:
/// `n_i * sqrt(mean_sq_loss) + w * sqrt(ln t / max(1, t - last_round))`,
/// with never-selected clients at infinite utility and an epsilon-greedy
/// random slot at rate [`OORT_EPSILON_GREEDY`]. Equal utilities (notably
/// the infinite cold-start ones) break uniformly at random.
pub fn select_oort(
    tracker: &OortTracker,
    m: usize,
    exploration_weight: f64,
    round: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let n = tracker.num_clients();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("m = {m} not in 1..={n}")));
    }
    let tiebreak: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let utility: Vec<f64> = (0..n)
        .map(|c| match tracker.stat(c) {
            None => f64::INFINITY,
            Some(s) => {
                let gap = round.saturating_sub(s.last_round).max(1) as f64;
                let bonus = ((round as f64).ln().max(0.0) / gap).sqrt();
                s.samples as f64 * s.mean_sq_loss.sqrt() + exploration_weight * bonus
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        utility[b]
            .partial_cmp(&utility[a])
            .expect("utilities are not NaN")
            .then(tiebreak[a].partial_cmp(&tiebreak[b]).unwrap())
            .then(a.cmp(&b))
    });

    let mut used = vec![false; n];
    let mut selected = Vec::with_capacity(m);
    let mut cursor = 0usize;
    for _ in 0..m {
        if rng.random::<f64>() < OORT_EPSILON_GREEDY {
            let remaining: Vec<usize> = (0..n).filter(|&c| !used[c]).collect();
            let pick = remaining[rng.random_range(0..remaining.len())];
            used[pick] = true;
            selected.push(pick);
        } else {
            while used[order[cursor]] {
                cursor += 1;
            }
            let pick = order[cursor];
            used[pick] = true;
            selected.push(pick);
        }
    }
    selected.sort_unstable();
    Ok(selected)
}
