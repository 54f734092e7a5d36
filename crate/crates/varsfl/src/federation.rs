//! The orchestration engine: per-round select / broadcast / local-train /
//! score / aggregate, plus experiment-level execution.
//!
//! Order of effects inside a round: select the participant set from the
//! pre-round ledger, train each participant from an exact copy of the
//! global model, compute the base validation loss once on the pre-round
//! model, score each returned model against it, fold scores into the
//! ledger (every round, under every policy — only the vars-fl policy reads
//! them back), aggregate with sample-count-weighted FedAvg, then evaluate.
//!
//! Client work inside a round runs data-parallel under the `parallel`
//! feature; each client trains from an rng stream derived from
//! `(experiment_seed, client_id, round)`, so results do not depend on
//! scheduling order and the sequential build produces identical bytes.

use std::borrow::Cow;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetKind, ExperimentConfig};
use crate::data::{self, ClientShard, LabeledDataset};
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::{self, MetricsRecord};
use crate::nn::{self, AdamState, Batch, ModelParams};
use crate::seeding;
use crate::selection::{self, ClientLedger, OortTracker, Policy, SelectorConfig};

/// Result of one client's local training pass.
#[derive(Debug, Clone)]
pub struct LocalTrainOutcome {
    pub params: ModelParams,
    pub num_samples: u64,
    /// Mean per-sample training loss over the final local epoch (0 when E=0).
    pub mean_loss: f64,
    /// Mean squared per-sample training loss over the final local epoch.
    pub mean_sq_loss: f64,
}

/// Trains a copy of the global model on one shard: `epochs` local epochs of
/// Adam with a fresh optimizer state, mini-batches reshuffled each epoch
/// from the client's seeded stream, last partial batch kept.
pub fn local_train(
    global: &ModelParams,
    shard: &ClientShard,
    epochs: u64,
    learning_rate: f64,
    batch_size: usize,
    client_seed: u64,
    round: u64,
) -> Result<LocalTrainOutcome> {
    if shard.data.is_empty() {
        return Err(Error::invalid(format!(
            "client {} has an empty shard",
            shard.client_id
        )));
    }
    let with_context = |e: Error| match e {
        Error::Divergence { .. } => Error::Divergence {
            client: Some(shard.client_id),
            round: Some(round),
        },
        other => other,
    };

    let mut params = global.clone();
    let mut adam = AdamState::new(params.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(client_seed);
    let n = shard.data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut sum_loss = 0.0;
    let mut sum_sq_loss = 0.0;

    for epoch in 0..epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let last_epoch = epoch + 1 == epochs;
        for chunk in order.chunks(batch_size) {
            let batch = gather_batch(&shard.data, chunk)?;
            let (losses, grads) =
                nn::loss_and_grads_detailed(&params, &batch, &mut rng).map_err(with_context)?;
            if last_epoch {
                for l in &losses {
                    sum_loss += l;
                    sum_sq_loss += l * l;
                }
            }
            nn::adam_step(&mut params, &grads, &mut adam, learning_rate).map_err(with_context)?;
        }
    }

    let denom = if epochs > 0 { n as f64 } else { 1.0 };
    Ok(LocalTrainOutcome {
        params,
        num_samples: n as u64,
        mean_loss: sum_loss / denom,
        mean_sq_loss: sum_sq_loss / denom,
    })
}

fn gather_batch(ds: &LabeledDataset, indices: &[usize]) -> Result<Batch> {
    let mut features = Vec::with_capacity(indices.len() * ds.dim());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        features.extend_from_slice(ds.row(i));
        labels.push(ds.labels()[i]);
    }
    Batch::new(features, labels, ds.dim())
}

/// Sample-count-weighted coordinate-wise mean. Summation follows the input
/// order, which callers keep at ascending client id for bitwise
/// reproducibility. Selection scores never enter these weights.
pub fn aggregate_fedavg(updates: &[(ModelParams, u64)]) -> Result<ModelParams> {
    let Some(((first, _), rest)) = updates.split_first() else {
        return Err(Error::invalid("aggregate_fedavg needs at least one update"));
    };
    for (p, _) in rest {
        if p.spec() != first.spec() {
            return Err(Error::ShapeMismatch(
                "aggregate_fedavg: mixed architectures".into(),
            ));
        }
    }
    let total: u64 = updates.iter().map(|&(_, n)| n).sum();
    if total == 0 {
        return Err(Error::invalid("aggregate_fedavg: zero total samples"));
    }
    let mut out = ModelParams::zeros(first.spec());
    for (params, n) in updates {
        let w = *n as f64 / total as f64;
        for (acc, v) in out.values_mut().iter_mut().zip(params.values()) {
            *acc += w * v;
        }
    }
    Ok(out)
}

/// Per-client scoring row of a round report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientRoundEntry {
    pub client: usize,
    pub num_samples: u64,
    /// Validation loss of this client's returned model.
    pub val_loss: f64,
    pub delta: f64,
    pub quality: f64,
    /// Reputation after this round's ledger update.
    pub reputation: f64,
    pub participation: u64,
}

/// One line of the JSONL round log; self-describing (policy, seed, round).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub policy: String,
    pub seed: u64,
    pub selected: Vec<usize>,
    pub base_val_loss: f64,
    pub post_val_loss: f64,
    pub clients: Vec<ClientRoundEntry>,
    pub uplink_bytes_round: u64,
    pub uplink_bytes_total: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test: Option<MetricsRecord>,
    /// Present only when scoring used a subsample of the validation set.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_subsample_fraction: Option<f64>,
}

/// Everything a running federation owns.
pub struct FederationState {
    pub params: ModelParams,
    /// Completed rounds; the next round is `round + 1`.
    pub round: u64,
    pub ledger: ClientLedger,
    pub oort: OortTracker,
    pub shards: Vec<ClientShard>,
    pub validation_set: LabeledDataset,
    pub test_set: LabeledDataset,
    pub selector: SelectorConfig,
    pub local_epochs: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub experiment_seed: u64,
    pub uplink_bytes_total: u64,
    /// Scoring subsample fraction in (0, 1]; 1 scores on the full set.
    pub val_subsample_fraction: f64,
}

impl FederationState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: ModelParams,
        shards: Vec<ClientShard>,
        validation_set: LabeledDataset,
        test_set: LabeledDataset,
        selector: SelectorConfig,
        local_epochs: u64,
        learning_rate: f64,
        batch_size: usize,
        experiment_seed: u64,
        val_subsample_fraction: f64,
    ) -> Result<Self> {
        selector.validate()?;
        if shards.is_empty() {
            return Err(Error::invalid("federation needs at least one client"));
        }
        let m = selector.clients_per_round.resolve(shards.len());
        if m > shards.len() {
            return Err(Error::invalid(format!(
                "clients_per_round {m} exceeds population {}",
                shards.len()
            )));
        }
        if !(val_subsample_fraction > 0.0 && val_subsample_fraction <= 1.0) {
            return Err(Error::invalid("val_subsample_fraction must be in (0,1]"));
        }
        let window = selector.window;
        let n = shards.len();
        Ok(Self {
            params,
            round: 0,
            ledger: ClientLedger::new(n, window),
            oort: OortTracker::new(n),
            shards,
            validation_set,
            test_set,
            selector,
            local_epochs,
            learning_rate,
            batch_size,
            experiment_seed,
            uplink_bytes_total: 0,
            val_subsample_fraction,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    fn select(&self, round: u64, m: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let n = self.num_clients();
        match self.selector.policy {
            Policy::FedAvgRandom => selection::select_uniform(n, m, rng),
            Policy::VarsFl => Ok(selection::select_vars(
                &self.ledger,
                m,
                self.selector.exploration_rate,
                self.selector.cold_start_rounds,
                round,
                rng,
            )?
            .selected()),
            Policy::PowerOfChoice => {
                selection::select_poc(n, m, self.selector.poc_candidate_factor, rng, |client| {
                    nn::evaluate(
                        &self.params,
                        self.shards[client].data.features(),
                        self.shards[client].data.labels(),
                    )
                    .expect("global params finite, shards non-empty")
                    .mean_loss
                })
            }
            Policy::OortSimplified => selection::select_oort(
                &self.oort,
                m,
                self.selector.oort_exploration_weight,
                round,
                rng,
            ),
        }
    }

    pub fn evaluate_test(&self) -> Result<MetricsRecord> {
        let eval = nn::evaluate(&self.params, self.test_set.features(), self.test_set.labels())?;
        let cm = metrics::confusion(
            &eval.predictions,
            self.test_set.labels(),
            self.test_set.num_classes(),
        )?;
        Ok(metrics::summarize(&cm, eval.mean_loss))
    }

    /// Runs one communication round; see the module docs for the order of
    /// effects. `eval_test` controls whether the (cost-dominating) test-set
    /// snapshot is taken.
    pub fn run_round(&mut self, eval_test: bool) -> Result<RoundReport> {
        let t = self.round + 1;
        let at_round = |e: Error| match e {
            Error::Divergence { client, round } => Error::Divergence {
                client,
                round: round.or(Some(t)),
            },
            other => other,
        };
        let m = self.selector.clients_per_round.resolve(self.num_clients());
        let mut sel_rng = seeding::stream(self.experiment_seed, "select", &[t]);
        let selected = self.select(t, m, &mut sel_rng)?;

        // local training, one derived stream per (client, round)
        let outcomes: Vec<Result<LocalTrainOutcome>> = {
            let params = &self.params;
            let shards = &self.shards;
            let (epochs, lr, batch) = (self.local_epochs, self.learning_rate, self.batch_size);
            let seed = self.experiment_seed;
            exec::map_slice(&selected, move |&client| {
                let client_seed = seeding::derive_seed(seed, "client", &[client as u64, t]);
                local_train(params, &shards[client], epochs, lr, batch, client_seed, t)
            })
        };
        let outcomes: Vec<LocalTrainOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

        // validation-aligned scoring: base loss once, then each client model
        let scoring = scoring_set(
            &self.validation_set,
            self.val_subsample_fraction,
            self.experiment_seed,
            t,
        )?;
        let base_val_loss = nn::evaluate(&self.params, scoring.features(), scoring.labels())
            .map_err(at_round)?
            .mean_loss;
        let client_losses: Vec<f64> = {
            let scoring = scoring.as_ref();
            let results = exec::map_slice(&outcomes, move |o| {
                nn::evaluate(&o.params, scoring.features(), scoring.labels()).map(|e| e.mean_loss)
            });
            results
                .into_iter()
                .collect::<Result<Vec<f64>>>()
                .map_err(at_round)?
        };

        let losses_by_client: Vec<(usize, f64)> = selected
            .iter()
            .copied()
            .zip(client_losses.iter().copied())
            .collect();
        let deltas = selection::compute_deltas(base_val_loss, &losses_by_client);
        let records = selection::normalize_quality(
            &deltas,
            self.selector.quality_floor,
            self.selector.stability_constant,
            t,
        );
        self.ledger.record(&records)?;
        for (client, outcome) in selected.iter().zip(&outcomes) {
            self.oort
                .observe(*client, outcome.num_samples, outcome.mean_sq_loss, t)?;
        }

        // FedAvg over ascending client ids ("selected" is sorted)
        let updates: Vec<(ModelParams, u64)> = outcomes
            .iter()
            .map(|o| (o.params.clone(), o.num_samples))
            .collect();
        self.params = aggregate_fedavg(&updates)?;
        if !self.params.all_finite() {
            return Err(Error::Divergence {
                client: None,
                round: Some(t),
            });
        }

        let uplink_bytes_round = m as u64 * self.params.param_count() as u64 * 4;
        self.uplink_bytes_total += uplink_bytes_round;

        let post_val_loss = nn::evaluate(&self.params, scoring.features(), scoring.labels())
            .map_err(at_round)?
            .mean_loss;
        let test = if eval_test {
            Some(self.evaluate_test().map_err(at_round)?)
        } else {
            None
        };

        let clients: Vec<ClientRoundEntry> = selected
            .iter()
            .zip(&outcomes)
            .zip(client_losses.iter())
            .zip(records.iter())
            .map(|(((client, outcome), val_loss), record)| {
                let rep = self.ledger.reputation(*client)?;
                Ok(ClientRoundEntry {
                    client: *client,
                    num_samples: outcome.num_samples,
                    val_loss: *val_loss,
                    delta: record.delta,
                    quality: record.quality,
                    reputation: rep.score,
                    participation: rep.participation,
                })
            })
            .collect::<Result<_>>()?;

        self.round = t;
        Ok(RoundReport {
            round: t,
            policy: self.selector.policy.to_string(),
            seed: self.experiment_seed,
            selected,
            base_val_loss,
            post_val_loss,
            clients,
            uplink_bytes_round,
            uplink_bytes_total: self.uplink_bytes_total,
            test,
            val_subsample_fraction: (self.val_subsample_fraction < 1.0)
                .then_some(self.val_subsample_fraction),
        })
    }
}

/// The validation data a round's scoring runs against: the full set, or a
/// per-round seeded subsample when the speed knob is below 1.
fn scoring_set(
    validation_set: &LabeledDataset,
    fraction: f64,
    experiment_seed: u64,
    round: u64,
) -> Result<Cow<'_, LabeledDataset>> {
    if fraction >= 1.0 {
        return Ok(Cow::Borrowed(validation_set));
    }
    let n = validation_set.len();
    let k = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut rng = seeding::stream(experiment_seed, "valsub", &[round]);
    let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(Cow::Owned(validation_set.subset(&idx)?))
}

/// Builds a ready-to-run federation from a config for one (policy, seed).
/// Dataset, split, partition, and model-init streams derive from the seed
/// independently of the policy, so swapping selectors changes selection
/// behavior only.
pub fn setup_state(
    config: &ExperimentConfig,
    policy: Policy,
    seed: u64,
) -> Result<FederationState> {
    config.validate()?;
    let d = &config.dataset;
    let dataset = match d.kind {
        DatasetKind::Synthetic => data::generate_synthetic(
            d.num_classes,
            d.feature_dim,
            &d.samples_per_class,
            d.cluster_spread,
            seeding::derive_seed(seed, "data", &[]),
        )?,
        DatasetKind::Csv => data::load_csv(
            d.csv_path.as_ref().expect("validated"),
            &d.label_column,
            &d.drop_columns,
            d.class_names.as_deref(),
        )?,
    };

    let arch = config.model.architecture()?;
    if arch.input_dim() != dataset.dim() {
        return Err(Error::Config(format!(
            "model input dim {} != dataset feature dim {}",
            arch.input_dim(),
            dataset.dim()
        )));
    }
    if arch.output_dim() != dataset.num_classes() {
        return Err(Error::Config(format!(
            "model output dim {} != dataset classes {}",
            arch.output_dim(),
            dataset.num_classes()
        )));
    }

    let dataset = match &d.cap_class {
        Some(class) => {
            let (capped, _report) = data::cap_majority_class(
                &dataset,
                class,
                d.cap_fraction,
                seeding::derive_seed(seed, "cap", &[]),
            )?;
            capped
        }
        None => dataset,
    };

    let mut bundle = data::split(
        &dataset,
        d.split_fractions,
        d.stratified_split,
        seeding::derive_seed(seed, "split", &[]),
    )?;
    data::fit_apply_standardizer(
        &mut bundle.train,
        &mut [&mut bundle.validation, &mut bundle.test],
    )?;

    let pspec = config.partition.resolve(
        bundle.train.len(),
        bundle.train.num_classes(),
        seeding::derive_seed(seed, "partition", &[]),
    );
    let shards = data::partition_noniid(&bundle.train, &pspec)?;

    let validation_set = data::build_validation_set(
        &bundle.validation,
        config.validation.mode,
        config.validation.per_class,
        seeding::derive_seed(seed, "valset", &[]),
    )?;

    let params = nn::init_params(&arch, seeding::derive_seed(seed, "init", &[]));
    let selector = config
        .selector
        .selector_config(policy, config.training.clients_per_round);

    FederationState::new(
        params,
        shards,
        validation_set,
        bundle.test,
        selector,
        config.training.local_epochs,
        config.training.learning_rate,
        config.training.batch_size,
        seed,
        config.validation.subsample_fraction,
    )
}

/// End-of-run digest for one (policy, seed) execution.
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub policy: Policy,
    pub seed: u64,
    pub rounds_completed: u64,
    pub final_test: MetricsRecord,
    /// `(round, accuracy)` at every round the test set was evaluated.
    pub test_accuracy_by_round: Vec<(u64, f64)>,
    pub uplink_bytes_total: u64,
}

/// Runs `training.rounds` rounds for one (policy, seed), invoking `on_round`
/// after every round (reports are flushed before any later error aborts the
/// run). Test metrics follow `run.eval_cadence`; the final round always
/// evaluates.
pub fn run_experiment(
    config: &ExperimentConfig,
    policy: Policy,
    seed: u64,
    mut on_round: impl FnMut(&RoundReport) -> Result<()>,
) -> Result<ExperimentSummary> {
    let mut state = setup_state(config, policy, seed)?;
    let rounds = config.training.rounds;
    let cadence = config.run.eval_cadence;
    let mut series = Vec::new();
    let mut last_test: Option<MetricsRecord> = None;

    for t in 1..=rounds {
        let eval_test = t % cadence == 0 || t == rounds;
        let report = state.run_round(eval_test)?;
        if let Some(test) = &report.test {
            series.push((t, test.accuracy));
            if t == rounds {
                last_test = Some(test.clone());
            }
        }
        on_round(&report)?;
    }

    let final_test = match last_test {
        Some(t) => t,
        None => state.evaluate_test()?, // T = 0: summarize the initial model
    };
    Ok(ExperimentSummary {
        policy,
        seed,
        rounds_completed: state.round,
        final_test,
        test_accuracy_by_round: series,
        uplink_bytes_total: state.uplink_bytes_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use crate::data::{PartitionScheme, PartitionSpec};
    use crate::nn::ArchitectureSpec;
    use crate::selection::ClientsPerRound;

    fn micro_config() -> ExperimentConfig {
        ExperimentConfig::parse(
            "\
dataset.num_classes = 3
dataset.feature_dim = 4
dataset.samples_per_class = 40
dataset.cluster_spread = 0.8
model.layer_dims = 4,8,3
model.dropout_rate = 0.2
model.dropout_layers = 1
partition.num_clients = 6
training.rounds = 3
training.clients_per_round = 3
training.local_epochs = 1
training.batch_size = 16
selector.policies = vars-fl
selector.cold_start_rounds = 1
run.seeds = 7
",
        )
        .unwrap()
    }

    fn micro_shards(seed: u64) -> (Vec<ClientShard>, LabeledDataset) {
        let ds = data::generate_synthetic(3, 4, &[30, 30, 30], 1.0, seed).unwrap();
        let spec = PartitionSpec {
            num_clients: 4,
            min_classes: 1,
            max_classes: 3,
            min_samples: 1,
            max_samples: ds.len(),
            scheme: PartitionScheme::ClassInventory,
            seed,
        };
        let shards = data::partition_noniid(&ds, &spec).unwrap();
        (shards, ds)
    }

    #[test]
    fn zero_epochs_returns_global_params_exactly() {
        let (shards, _) = micro_shards(1);
        let arch = ArchitectureSpec::new(vec![4, 6, 3], 0.0, vec![]).unwrap();
        let global = nn::init_params(&arch, 9);
        let out = local_train(&global, &shards[0], 0, 1e-3, 16, 5, 1).unwrap();
        assert_eq!(out.params.values(), global.values());
        assert_eq!(out.num_samples, shards[0].num_samples() as u64);
    }

    #[test]
    fn identical_shards_and_seeds_train_identically() {
        let (shards, _) = micro_shards(2);
        let arch = ArchitectureSpec::new(vec![4, 6, 3], 0.3, vec![1]).unwrap();
        let global = nn::init_params(&arch, 10);
        let a = local_train(&global, &shards[0], 2, 1e-3, 8, 77, 1).unwrap();
        let b = local_train(&global, &shards[0], 2, 1e-3, 8, 77, 1).unwrap();
        assert_eq!(a.params.values(), b.params.values());
        assert_eq!(a.mean_sq_loss, b.mean_sq_loss);
        let c = local_train(&global, &shards[0], 2, 1e-3, 8, 78, 1).unwrap();
        assert_ne!(a.params.values(), c.params.values());
    }

    #[test]
    fn fedavg_weighted_mean_hand_example() {
        let arch = ArchitectureSpec::new(vec![1, 1], 0.0, vec![]).unwrap();
        let mut a = ModelParams::zeros(&arch);
        a.values_mut().copy_from_slice(&[1.0, 1.0]);
        let mut b = ModelParams::zeros(&arch);
        b.values_mut().copy_from_slice(&[5.0, 5.0]);
        let agg = aggregate_fedavg(&[(a, 1), (b, 3)]).unwrap();
        assert_eq!(agg.values(), &[4.0, 4.0]);
    }

    #[test]
    fn fedavg_fixed_point_and_convexity() {
        let arch = ArchitectureSpec::new(vec![3, 5, 2], 0.0, vec![]).unwrap();
        let w = nn::init_params(&arch, 3);
        let agg = aggregate_fedavg(&[(w.clone(), 10), (w.clone(), 3), (w.clone(), 1)]).unwrap();
        for (x, y) in agg.values().iter().zip(w.values()) {
            assert!((x - y).abs() < 1e-15);
        }
        let a = nn::init_params(&arch, 4);
        let b = nn::init_params(&arch, 5);
        let mix = aggregate_fedavg(&[(a.clone(), 2), (b.clone(), 5)]).unwrap();
        for ((m, x), y) in mix.values().iter().zip(a.values()).zip(b.values()) {
            let (lo, hi) = (x.min(*y), x.max(*y));
            assert!(*m >= lo - 1e-15 && *m <= hi + 1e-15);
        }
    }

    #[test]
    fn fedavg_rejects_empty_and_mixed_shapes() {
        assert!(aggregate_fedavg(&[]).is_err());
        let a = ModelParams::zeros(&ArchitectureSpec::new(vec![2, 2], 0.0, vec![]).unwrap());
        let b = ModelParams::zeros(&ArchitectureSpec::new(vec![3, 2], 0.0, vec![]).unwrap());
        assert!(aggregate_fedavg(&[(a, 1), (b, 1)]).is_err());
    }

    #[test]
    fn round_report_shape_and_ledger_updates_under_every_policy() {
        let cfg = micro_config();
        for policy in Policy::ALL {
            let mut state = setup_state(&cfg, policy, 7).unwrap();
            let report = state.run_round(true).unwrap();
            assert_eq!(report.round, 1);
            assert_eq!(report.policy, policy.to_string());
            assert_eq!(report.selected.len(), 3);
            assert_eq!(report.clients.len(), 3);
            assert!(report.test.is_some());
            // scoring feeds the ledger for every policy
            for entry in &report.clients {
                assert_eq!(state.ledger.participation(entry.client).unwrap(), 1);
                assert!(entry.quality >= cfg.selector.quality_floor);
            }
            // uplink accounting: m * |theta| * 4
            let expect = 3 * state.params.param_count() as u64 * 4;
            assert_eq!(report.uplink_bytes_round, expect);
        }
    }

    #[test]
    fn degrading_client_still_aggregates_with_floor_quality() {
        // one client whose "update" raises validation loss: quality == floor
        // but its parameters still enter the average (selection-only signal)
        let (shards, ds) = micro_shards(3);
        let arch = ArchitectureSpec::new(vec![4, 6, 3], 0.0, vec![]).unwrap();
        let good = nn::init_params(&arch, 1);
        let mut bad = good.clone();
        for v in bad.values_mut().iter_mut() {
            *v += 5.0; // far from anything useful
        }
        let base = nn::evaluate(&good, ds.features(), ds.labels())
            .unwrap()
            .mean_loss;
        let bad_loss = nn::evaluate(&bad, ds.features(), ds.labels())
            .unwrap()
            .mean_loss;
        assert!(bad_loss > base);
        let deltas = selection::compute_deltas(base, &[(0, bad_loss)]);
        let recs = selection::normalize_quality(&deltas, 0.01, 1e-8, 1);
        assert_eq!(recs[0].quality, 0.01);
        let agg = aggregate_fedavg(&[
            (good.clone(), shards[0].num_samples() as u64),
            (bad.clone(), 10),
        ])
        .unwrap();
        // aggregate is pulled toward the bad model, proving it participated
        assert_ne!(agg.values(), good.values());
    }

    #[test]
    fn base_loss_is_the_pre_round_model_loss() {
        // scoring must compare client models against the broadcast model,
        // not the freshly aggregated one
        let cfg = micro_config();
        let mut state = setup_state(&cfg, Policy::VarsFl, 7).unwrap();
        let expected = nn::evaluate(
            &state.params,
            state.validation_set.features(),
            state.validation_set.labels(),
        )
        .unwrap()
        .mean_loss;
        let report = state.run_round(false).unwrap();
        assert_eq!(report.base_val_loss, expected);
        assert_ne!(report.post_val_loss, report.base_val_loss);
        // second round scores against the round-1 aggregate
        let expected2 = nn::evaluate(
            &state.params,
            state.validation_set.features(),
            state.validation_set.labels(),
        )
        .unwrap()
        .mean_loss;
        let report2 = state.run_round(false).unwrap();
        assert_eq!(report2.base_val_loss, expected2);
    }

    #[test]
    fn single_client_federation_is_centralized_training() {
        // N = 1, m = 1: the round loop must reproduce plain local training
        // (aggregation of one update is the identity)
        let mut cfg = micro_config();
        cfg.partition.num_clients = 1;
        cfg.training.clients_per_round = ClientsPerRound::Count(1);
        cfg.training.rounds = 2;
        let mut state = setup_state(&cfg, Policy::VarsFl, 7).unwrap();
        let shard = state.shards[0].clone();
        let mut direct = state.params.clone();
        for t in 1..=2u64 {
            state.run_round(false).unwrap();
            let client_seed = seeding::derive_seed(7, "client", &[0, t]);
            direct = local_train(&direct, &shard, 1, 1e-3, 16, client_seed, t)
                .unwrap()
                .params;
        }
        assert_eq!(state.params.values(), direct.values());
    }

    #[test]
    fn cold_start_rounds_still_update_ledger() {
        let cfg = micro_config(); // cold_start_rounds = 1
        let mut state = setup_state(&cfg, Policy::VarsFl, 7).unwrap();
        let report = state.run_round(false).unwrap();
        let scored: u64 = (0..state.num_clients())
            .map(|c| state.ledger.participation(c).unwrap())
            .sum();
        assert_eq!(scored, report.selected.len() as u64);
    }

    #[test]
    fn swapping_policy_preserves_data_and_init() {
        let cfg = micro_config();
        let a = setup_state(&cfg, Policy::VarsFl, 7).unwrap();
        let b = setup_state(&cfg, Policy::FedAvgRandom, 7).unwrap();
        assert_eq!(a.params.values(), b.params.values());
        assert_eq!(a.shards.len(), b.shards.len());
        for (x, y) in a.shards.iter().zip(&b.shards) {
            assert_eq!(x.origin_indices, y.origin_indices);
        }
        assert_eq!(a.validation_set, b.validation_set);
        assert_eq!(a.test_set, b.test_set);
    }

    #[test]
    fn experiment_determinism_and_uplink_parity() {
        let cfg = micro_config();
        let collect = |policy: Policy| {
            let mut reports = Vec::new();
            let summary = run_experiment(&cfg, policy, 7, |r| {
                reports.push(serde_json::to_string(r).unwrap());
                Ok(())
            })
            .unwrap();
            (reports, summary)
        };
        let (ra, sa) = collect(Policy::VarsFl);
        let (rb, sb) = collect(Policy::VarsFl);
        assert_eq!(ra, rb);
        assert_eq!(sa.uplink_bytes_total, sb.uplink_bytes_total);
        // equal m -> byte-identical uplink across policies
        let (_, sc) = collect(Policy::FedAvgRandom);
        assert_eq!(sa.uplink_bytes_total, sc.uplink_bytes_total);
    }

    #[test]
    fn zero_rounds_reports_initial_model_only() {
        let mut cfg = micro_config();
        cfg.training.rounds = 0;
        let mut count = 0;
        let summary = run_experiment(&cfg, Policy::VarsFl, 7, |_| {
            count += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(count, 0);
        assert_eq!(summary.rounds_completed, 0);
        assert!(summary.final_test.accuracy.is_finite());
        assert!(summary.test_accuracy_by_round.is_empty());
    }

    #[test]
    fn subsampled_scoring_is_recorded() {
        let mut cfg = micro_config();
        cfg.validation.subsample_fraction = 0.5;
        let mut state = setup_state(&cfg, Policy::VarsFl, 7).unwrap();
        let report = state.run_round(false).unwrap();
        assert_eq!(report.val_subsample_fraction, Some(0.5));
        // full-set scoring leaves the field out
        cfg.validation.subsample_fraction = 1.0;
        let mut state2 = setup_state(&cfg, Policy::VarsFl, 7).unwrap();
        let report2 = state2.run_round(false).unwrap();
        assert_eq!(report2.val_subsample_fraction, None);
        assert!(!serde_json::to_string(&report2)
            .unwrap()
            .contains("val_subsample_fraction"));
    }

    #[test]
    fn aggregation_weights_sum_to_one() {
        // encoded by the fixed point: aggregating copies of an all-ones
        // model returns all ones within 1e-12
        let arch = ArchitectureSpec::new(vec![2, 2], 0.0, vec![]).unwrap();
        let mut ones = ModelParams::zeros(&arch);
        for v in ones.values_mut() {
            *v = 1.0;
        }
        let agg = aggregate_fedavg(&[(ones.clone(), 7), (ones.clone(), 13), (ones, 1)]).unwrap();
        for v in agg.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clients_per_round_fraction_resolution() {
        assert_eq!(ClientsPerRound::Fraction(0.10).resolve(100), 10);
        assert_eq!(ClientsPerRound::Fraction(0.001).resolve(100), 1);
        assert_eq!(ClientsPerRound::Count(7).resolve(100), 7);
    }
}
