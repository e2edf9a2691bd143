//! Experiment drivers: federated meta-training with contribution-score
//! selection, its wireless co-simulation with URAL and the baselines, the
//! one-round descent bound evaluator, and parameter sweeps.

use std::io::Write;

use log::info;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{invalid, Error, Result};
use crate::metacore::{local_update, meta_loss, EstimatorMode, LocalUpdate, MetaHyper, ParamVector, SmoothnessConstants};
use crate::rng::{derive_seed, keyed_rng, Role, RngStream};
use crate::selection::{aggregate, contribution_scores, select_top_k, DEFAULT_SHIFT_MARGIN};
use crate::tasks::{generate_population, population_constants, trajectory_constants, Device, Population, PopulationSpec};
use crate::ural::{self, IvesOptions};
use crate::wireless::{
    round_totals, sample_environment, transmission_rate, Allocation, ComputeProfile, Environment,
    EnvironmentSpec, NetworkConfig, RadioProfile, RoundTotals,
};

/// Per-device batch size rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchSpec {
    /// The whole local dataset.
    #[default]
    Full,
    /// Exactly this many samples; devices with fewer samples are a configuration error.
    Fixed(usize),
    /// This many samples, or the whole dataset if it is smaller.
    Capped(usize),
}

impl BatchSpec {
    pub fn size_for(&self, dataset: usize) -> Result<usize> {
        match *self {
            BatchSpec::Full => Ok(dataset),
            BatchSpec::Fixed(0) => Err(Error::Config("batch size must be at least 1".into())),
            BatchSpec::Fixed(b) if b > dataset => Err(Error::Config(format!(
                "batch size {b} exceeds a device dataset of {dataset} samples"
            ))),
            BatchSpec::Fixed(b) => Ok(b),
            BatchSpec::Capped(0) => Err(Error::Config("batch size must be at least 1".into())),
            BatchSpec::Capped(b) => Ok(b.min(dataset)),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Top-`n_k` contribution scores.
    #[default]
    Nufm,
    /// Uniformly random `n_k`-subset.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationMode {
    /// Joint selection and allocation by URAL.
    Ural,
    /// Uniform selection, per-device greedy frequency and power, random RBs.
    Greedy,
    /// Uniform selection, uniformly random frequency, power and RBs.
    Random,
    /// Contribution-score selection with greedy resources.
    NufmGreedy,
    /// Contribution-score selection with random resources.
    NufmRandom,
}

impl AllocationMode {
    pub fn label(&self) -> &'static str {
        match self {
            AllocationMode::Ural => "URAL",
            AllocationMode::Greedy => "RU-Greedy",
            AllocationMode::Random => "RU-Random",
            AllocationMode::NufmGreedy => "NUFM-Greedy",
            AllocationMode::NufmRandom => "NUFM-Random",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundForm {
    /// One local step; the bound with the estimator's variance term.
    #[default]
    Theorem,
    /// Any number of local steps; the bound with `λ1`, `λ2`.
    Corollary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundOptions {
    /// Monte-Carlo resamples of each selected device's local update.
    pub resamples: usize,
    pub form: BoundForm,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            resamples: 256,
            form: BoundForm::Theorem,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub population: PopulationSpec,
    pub hyper: MetaHyper,
    pub batch: BatchSpec,
    /// Communication rounds `K`.
    pub rounds: usize,
    /// Devices aggregated per round `n_k`.
    pub participants: usize,
    pub selection: SelectionMode,
    /// Run the wireless co-simulation with this strategy; `None` trains without a network.
    pub allocation: Option<AllocationMode>,
    pub environment: EnvironmentSpec,
    /// Margin `C − max(0, −min u)` of the positive score shift.
    pub shift_margin: f64,
    pub ives: IvesOptions,
    /// Evaluate the one-round descent bound every round.
    pub bound: Option<BoundOptions>,
    pub seed: u64,
    /// Number of consecutive seeds starting at `seed`.
    pub repeats: usize,
    /// Worker threads; `FMLSIM_THREADS` caps it.
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            population: PopulationSpec::default(),
            hyper: MetaHyper {
                alpha: 0.05,
                beta: 0.05,
                ..MetaHyper::default()
            },
            batch: BatchSpec::Full,
            rounds: 50,
            participants: 20,
            selection: SelectionMode::Nufm,
            allocation: None,
            environment: EnvironmentSpec::default(),
            shift_margin: DEFAULT_SHIFT_MARGIN,
            ives: IvesOptions::default(),
            bound: None,
            seed: 0,
            repeats: 1,
            threads: None,
        }
    }
}

/// serde error, whose message carries the line and column, as a configuration error.
fn schema_error(e: serde_json::Error) -> Error {
    Error::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(schema_error)?;
        Ok(cfg)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn from_value(v: Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats.max(1) as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        self.hyper.validate()?;
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        let n_train = self.population.n - ((self.population.n as f64 * self.population.test_fraction).round() as usize).min(self.population.n - 1);
        if self.participants == 0 || self.participants > n_train {
            return Err(Error::Config(format!(
                "participants must be in 1..={n_train} (training devices), got {}",
                self.participants
            )));
        }
        if self.allocation.is_some() {
            self.environment.validate()?;
        }
        if !(self.shift_margin > 0.0) {
            return Err(Error::Config("shift_margin must be positive".into()));
        }
        if let Some(b) = &self.bound {
            if b.resamples == 0 {
                return Err(Error::Config("bound.resamples must be at least 1".into()));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    /// Returns a copy with `path` (dotted, or an alias such as `eta1`) set to `value`.
    pub fn with_override(&self, path: &str, value: Value) -> Result<Self> {
        let mut v = self.to_value();
        set_path(&mut v, resolve_alias(path), value)?;
        Self::from_value(v)
    }
}

/// Short names accepted wherever a dotted config path is.
pub const ALIASES: &[(&str, &str)] = &[
    ("eta1", "environment.eta1"),
    ("eta2", "environment.eta2"),
    ("rb_count", "environment.rb_count"),
    ("M", "environment.rb_count"),
    ("h_max", "environment.h_max"),
    ("h_min", "environment.h_min"),
    ("n_k", "participants"),
    ("K", "rounds"),
    ("n", "population.n"),
    ("alpha", "hyper.alpha"),
    ("beta", "hyper.beta"),
    ("tau", "hyper.tau"),
    ("lambda1", "hyper.lambda1"),
    ("lambda2", "hyper.lambda2"),
];

pub fn resolve_alias(path: &str) -> &str {
    ALIASES
        .iter()
        .find(|(a, _)| *a == path)
        .map(|(_, p)| *p)
        .unwrap_or(path)
}

/// Sets an existing key addressed by a dotted path.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("unknown parameter '{path}'")))?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{path}'")))?;
        if k + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        if slot.is_null() {
            *slot = Value::Object(Default::default());
        }
        cur = slot;
    }
    Err(Error::Config(format!("unknown parameter '{path}'")))
}

/// Number of worker threads: the configured count (or all cores), capped by
/// `FMLSIM_THREADS`.
pub fn thread_count(configured: Option<usize>) -> usize {
    let base = configured.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let cap = std::env::var("FMLSIM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&v| v > 0);
    cap.map_or(base, |c| base.min(c)).max(1)
}

fn build_pool(configured: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(configured))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// One-round descent bound diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundDiagnostics {
    /// Monte-Carlo mean of `F(θ^k) − F(θ^{k+1})`.
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub l_f: f64,
    /// `(1+αL)²γ_G + αζγ_H`
    pub gamma_f: f64,
    /// Largest variance term used for the selected devices.
    pub sigma_f_max: f64,
    pub lambda1_floor: f64,
    pub lambda2_floor: f64,
    /// Variance terms of the two first-order approximations.
    pub sigma_tilde_first_order: f64,
    pub sigma_tilde_hessian_free: f64,
    pub holds: bool,
    pub constants: SmoothnessConstants,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub seed: u64,
    pub round: usize,
    /// Mean meta-objective over training devices after the round.
    pub train_loss: f64,
    /// Mean one-step-adapted loss over held-out devices after the round.
    pub test_loss: f64,
    pub selected: Vec<usize>,
    pub utility: Option<f64>,
    pub energy: Option<f64>,
    pub time: Option<f64>,
    pub comp_time: Option<f64>,
    pub comm_time: Option<f64>,
    pub objective: Option<f64>,
    pub ives_iterations: Option<usize>,
    /// No device uploaded; the model was not aggregated.
    pub skipped: bool,
    pub bound: Option<BoundDiagnostics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub seed: u64,
    pub rows: Vec<RoundMetrics>,
    pub theta: ParamVector,
    pub environment: Option<Environment>,
    pub allocations: Vec<Allocation>,
}

struct Setup {
    pop: Population,
    train: Vec<usize>,
    batch: Vec<usize>,
}

/// Population generated for `seed`: the population's own seed if set, else one derived from `seed`.
pub fn population_for(config: &ExperimentConfig, seed: u64) -> Result<Population> {
    let pop_seed = config.population.seed.unwrap_or_else(|| derive_seed(&[seed, Role::Population as u64]));
    generate_population(&config.population, pop_seed)
}

fn setup(config: &ExperimentConfig, seed: u64) -> Result<Setup> {
    config.validate()?;
    setup_with(config, population_for(config, seed)?)
}

fn setup_with(config: &ExperimentConfig, pop: Population) -> Result<Setup> {
    if pop.train.is_empty() {
        return Err(Error::Config("population has no training devices".into()));
    }
    let train = pop.train.clone();
    let batch = train
        .iter()
        .map(|&i| config.batch.size_for(pop.devices[i].size()))
        .collect::<Result<Vec<_>>>()?;
    if config.participants > train.len() {
        return Err(Error::Config(format!(
            "participants {} exceeds {} training devices",
            config.participants,
            train.len()
        )));
    }
    Ok(Setup { pop, train, batch })
}

fn mean_meta_loss(devices: &[&Device], theta: &ParamVector, alpha: f64) -> Result<f64> {
    let mut total = 0.0;
    for d in devices {
        total += meta_loss(&d.model, &d.data, theta, alpha)?;
    }
    Ok(total / devices.len() as f64)
}

fn local_updates(
    pool: &rayon::ThreadPool,
    s: &Setup,
    theta: &ParamVector,
    hyper: &MetaHyper,
    stream_seed: u64,
    round: usize,
) -> Result<Vec<LocalUpdate>> {
    pool.install(|| {
        s.train
            .par_iter()
            .zip(s.batch.par_iter())
            .map(|(&id, &b)| {
                let dev = &s.pop.devices[id];
                let stream = RngStream::new(stream_seed, round as u64, id as u64);
                local_update(&dev.model, &dev.data, theta, hyper, b, &stream)
            })
            .collect()
    })
}

fn uniform_subset(seed: u64, round: usize, ids: &[usize], k: usize) -> Vec<usize> {
    let mut rng = keyed_rng(&[seed, round as u64, Role::Selection as u64]);
    let mut out: Vec<usize> = rand::seq::index::sample(&mut rng, ids.len(), k)
        .iter()
        .map(|i| ids[i])
        .collect();
    out.sort_unstable();
    out
}

/// Federated meta-training without a network model.
pub fn run_nufm(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    nufm_loop(config, setup(config, seed)?, seed)
}

/// As [`run_nufm`] on a given population; `config.population` is ignored.
pub fn run_nufm_with(config: &ExperimentConfig, population: Population, seed: u64) -> Result<RunOutput> {
    config.hyper.validate()?;
    if config.rounds == 0 {
        return Err(Error::Config("rounds must be at least 1".into()));
    }
    nufm_loop(config, setup_with(config, population)?, seed)
}

fn nufm_loop(config: &ExperimentConfig, s: Setup, seed: u64) -> Result<RunOutput> {
    let pool = build_pool(config.threads)?;
    let train_devs: Vec<&Device> = s.pop.train_devices();
    let eval_devs: Vec<&Device> = s.pop.eval_devices();
    let alpha = config.hyper.alpha;
    if let Some(b) = &config.bound {
        if b.form == BoundForm::Theorem && config.hyper.tau != 1 {
            return Err(invalid("the one-step bound needs tau = 1; use the corollary form"));
        }
    }
    let base_constants = match config.bound {
        Some(_) => Some(population_constants(&train_devs, alpha)?),
        None => None,
    };

    let mut theta = ParamVector::zeros(s.pop.dim());
    let mut rows = Vec::with_capacity(config.rounds);
    for k in 0..config.rounds {
        let updates = local_updates(&pool, &s, &theta, &config.hyper, seed, k)?;
        let u: Vec<f64> = updates.iter().map(|x| x.u).collect();
        let selected = match config.selection {
            SelectionMode::Nufm => {
                let scores = contribution_scores(&s.train, &u, config.shift_margin)?;
                select_top_k(&scores, config.participants)?
            }
            SelectionMode::Uniform => uniform_subset(seed, k, &s.train, config.participants),
        };
        let models: Vec<ParamVector> = selected
            .iter()
            .map(|id| updates[s.train.binary_search(id).expect("selected id is a training device")].theta.clone())
            .collect();
        let bound = match (&config.bound, &base_constants) {
            (Some(opts), Some(c)) => Some(evaluate_bound(&pool, &s, &train_devs, &theta, &selected, config, opts, c, seed, k)?),
            _ => None,
        };
        theta = aggregate(&models)?;
        rows.push(RoundMetrics {
            seed,
            round: k,
            train_loss: mean_meta_loss(&train_devs, &theta, alpha)?,
            test_loss: mean_meta_loss(&eval_devs, &theta, alpha)?,
            selected,
            utility: None,
            energy: None,
            time: None,
            comp_time: None,
            comm_time: None,
            objective: None,
            ives_iterations: None,
            skipped: false,
            bound,
        });
    }
    Ok(RunOutput {
        seed,
        rows,
        theta,
        environment: None,
        allocations: Vec::new(),
    })
}

/// `min((η2/(η1·ι))^{1/3}, ν_max)`: each device's own energy/time optimum.
pub fn greedy_frequency(cp: &ComputeProfile, eta1: f64, eta2: f64) -> f64 {
    (eta2 / (eta1 * cp.iota)).cbrt().min(cp.nu_max)
}

/// Minimizer of `(η1·p + η2)·S/r(p)` on `(0, p_max]` by golden-section search.
pub fn greedy_power(radio: &RadioProfile, net: &NetworkConfig, m: usize, tol: f64) -> Result<f64> {
    let cost = |p: f64| -> Result<f64> {
        let r = transmission_rate(radio, net, m, p)?;
        Ok(if r > 0.0 { (net.eta1 * p + net.eta2) * net.payload / r } else { f64::INFINITY })
    };
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, radio.p_max);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = cost(x1)?;
    let mut f2 = cost(x2)?;
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = cost(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = cost(x2)?;
        }
    }
    let mut best = 0.5 * (a + b);
    if cost(radio.p_max)? <= cost(best)? {
        best = radio.p_max;
    }
    Ok(best.clamp(f64::MIN_POSITIVE, radio.p_max))
}

fn positive_fraction<R: Rng>(rng: &mut R, hi: f64) -> f64 {
    // U(0, 1] so the draw is never zero
    hi * (1.0 - rng.random::<f64>())
}

/// Baseline allocation: `selected` devices get distinct random RBs; frequency
/// and power follow the greedy rule or are drawn uniformly from their boxes.
pub fn baseline_allocation(
    env: &Environment,
    selected: &[usize],
    greedy: bool,
    seed: u64,
    round: usize,
) -> Result<Allocation> {
    let n = env.n();
    let m = env.net.rb_count();
    if selected.len() > m {
        return Err(invalid(format!("{} devices for {m} resource blocks", selected.len())));
    }
    let mut rng = keyed_rng(&[seed, round as u64, Role::Baseline as u64]);
    let rbs = rand::seq::index::sample(&mut rng, m, selected.len()).into_vec();
    let mut assignment = vec![None; n];
    for (&i, &rb) in selected.iter().zip(&rbs) {
        assignment[i] = Some(rb);
    }
    let mut nu = vec![0.0; n];
    let mut power = vec![0.0; n];
    for i in 0..n {
        nu[i] = if greedy {
            greedy_frequency(&env.compute[i], env.net.eta1, env.net.eta2)
        } else {
            positive_fraction(&mut rng, env.compute[i].nu_max)
        };
        if let Some(rb) = assignment[i] {
            power[i] = if greedy {
                greedy_power(&env.radios[i], &env.net, rb, 1e-8)?
            } else {
                positive_fraction(&mut rng, env.radios[i].p_max)
            };
        }
    }
    let mut alloc = Allocation {
        assignment,
        power,
        nu,
        delta: 0.0,
    };
    alloc.delta = upload_delay(env, &alloc)?;
    Ok(alloc)
}

fn upload_delay(env: &Environment, alloc: &Allocation) -> Result<f64> {
    let mut worst = 0.0_f64;
    for (i, z) in alloc.assignment.iter().enumerate() {
        if let Some(m) = *z {
            let r = transmission_rate(&env.radios[i], &env.net, m, alloc.power[i])?;
            worst = worst.max(env.net.payload / r);
        }
    }
    Ok(worst)
}

fn environment_for(config: &ExperimentConfig, s: &Setup, seed: u64) -> Result<Environment> {
    let env_seed = config.environment.seed.unwrap_or_else(|| derive_seed(&[seed, Role::Environment as u64]));
    let mut rng = keyed_rng(&[env_seed, Role::Environment as u64]);
    let env = sample_environment(&mut rng, &config.environment, &s.batch)?;
    let reachable = env.radios.iter().any(|r| {
        (0..env.net.rb_count()).any(|m| transmission_rate(r, &env.net, m, r.p_max).map(|v| v > 0.0).unwrap_or(false))
    });
    if !reachable {
        return Err(Error::Config("no device can reach any resource block".into()));
    }
    Ok(env)
}

/// Federated meta-training over the wireless network.
pub fn run_wireless(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let mode = config
        .allocation
        .ok_or_else(|| Error::Config("wireless run needs an allocation mode".into()))?;
    let s = setup(config, seed)?;
    let env = environment_for(config, &s, seed)?;
    let pool = build_pool(config.threads)?;
    let train_devs = s.pop.train_devices();
    let eval_devs = s.pop.eval_devices();
    let alpha = config.hyper.alpha;
    let tau = config.hyper.tau;
    // SP1 works on per-round cycles, so fold τ into c.
    let round_compute: Vec<ComputeProfile> = env
        .compute
        .iter()
        .map(|c| ComputeProfile { c: c.c * tau as f64, ..*c })
        .collect();

    let mut theta = ParamVector::zeros(s.pop.dim());
    let mut rows = Vec::with_capacity(config.rounds);
    let mut allocations = Vec::with_capacity(config.rounds);
    for k in 0..config.rounds {
        let updates = local_updates(&pool, &s, &theta, &config.hyper, seed, k)?;
        let u: Vec<f64> = updates.iter().map(|x| x.u).collect();
        let positions: Vec<usize> = (0..s.train.len()).collect();
        let scores = contribution_scores(&positions, &u, config.shift_margin)?;
        let shifted: Vec<f64> = scores.iter().map(|c| c.shifted_u).collect();
        let quota = config.participants.min(env.net.rb_count()).min(s.train.len());
        let mut ives_iterations = None;
        let alloc = match mode {
            AllocationMode::Ural => {
                let sol = ural::ural(&round_compute, &env.radios, &env.net, &shifted, &config.ives)?;
                ives_iterations = Some(sol.sp2.iterations);
                sol.allocation
            }
            AllocationMode::Greedy | AllocationMode::Random => {
                let chosen = uniform_subset(seed, k, &positions, quota);
                baseline_allocation(&env, &chosen, mode == AllocationMode::Greedy, seed, k)?
            }
            AllocationMode::NufmGreedy | AllocationMode::NufmRandom => {
                let chosen = select_top_k(&scores, quota)?;
                baseline_allocation(&env, &chosen, mode == AllocationMode::NufmGreedy, seed, k)?
            }
        };
        let totals: RoundTotals = round_totals(&env.compute, &env.radios, &env.net, &alloc, &shifted, tau)?;
        let uploaded = alloc.selected();
        let skipped = uploaded.is_empty();
        if skipped {
            info!("round {k}: no device uploads, model kept");
        } else {
            let models: Vec<ParamVector> = uploaded.iter().map(|&p| updates[p].theta.clone()).collect();
            theta = aggregate(&models)?;
        }
        rows.push(RoundMetrics {
            seed,
            round: k,
            train_loss: mean_meta_loss(&train_devs, &theta, alpha)?,
            test_loss: mean_meta_loss(&eval_devs, &theta, alpha)?,
            selected: uploaded.iter().map(|&p| s.train[p]).collect(),
            utility: Some(totals.utility),
            energy: Some(totals.energy),
            time: Some(totals.time),
            comp_time: Some(totals.comp_time),
            comm_time: Some(totals.comm_time),
            objective: Some(totals.objective(&env.net)),
            ives_iterations,
            skipped,
            bound: None,
        });
        allocations.push(alloc);
    }
    Ok(RunOutput {
        seed,
        rows,
        theta,
        environment: Some(env),
        allocations,
    })
}

/// Runs the configured mode for one seed.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    if config.allocation.is_some() {
        run_wireless(config, seed)
    } else {
        run_nufm(config, seed)
    }
}

/// Runs every configured seed.
pub fn run(config: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    config.validate()?;
    config.seeds().into_iter().map(|s| run_seed(config, s)).collect()
}

// ---------------------------------------------------------------------------
// Bound evaluation

/// Variance term of the first-order estimator. The printed bound uses an
/// undefined `B`; `ζ` stands in for it.
pub fn sigma_tilde_first_order(c: &SmoothnessConstants, inner: usize, outer: usize) -> f64 {
    let al = c.alpha * c.l;
    let z = c.zeta.unwrap_or(0.0);
    (2.0 * c.sigma_g.powi(2) * (1.0 / outer as f64 + al * al / inner as f64) + 2.0 * (al * z).powi(2)).sqrt()
}

/// Variance term of the Hessian-free estimator. The printed bound uses
/// undefined `μ` and `δ`; `ρ` and the perturbation `ε` stand in for them.
pub fn sigma_tilde_hessian_free(c: &SmoothnessConstants, inner: usize, outer: usize, curvature: usize, eps: f64) -> f64 {
    let a = c.alpha;
    let al = a * c.l;
    let z = c.zeta.unwrap_or(0.0);
    let v = 6.0 * c.sigma_g.powi(2)
        * (2.0 * al * al / inner as f64 + 2.0 / outer as f64 + a * a / (2.0 * eps * eps * curvature as f64))
        + 2.0 * (a * c.rho * eps).powi(2) * z.powi(4);
    v.sqrt()
}

/// Floors on `λ1` and `λ2` under which the contribution score lower-bounds the descent.
pub fn lambda_floors(c: &SmoothnessConstants, beta: f64, tau: usize, sigma_f: f64) -> (f64, f64) {
    let a = c.alpha;
    let al = a * c.l;
    let gg = c.gamma_g.unwrap_or(0.0);
    let z = c.zeta.unwrap_or(0.0);
    let l1 = c.meta_dissimilarity().sqrt() + beta * tau as f64 * (35.0 * (gg * gg + 2.0 * sigma_f * sigma_f)).sqrt();
    let l2sq = 6.0 * c.sigma_g.powi(2) * (1.0 + al * al) * ((a * c.sigma_h).powi(2) + (1.0 + al).powi(2))
        + 3.0 * (a * z * c.sigma_h).powi(2);
    (l1, l2sq.sqrt())
}

fn sigma_for_mode(c: &SmoothnessConstants, hyper: &MetaHyper, d: usize) -> f64 {
    match hyper.mode {
        EstimatorMode::Hessian => c.variance_bound(d, d, d).sqrt(),
        EstimatorMode::FirstOrder => sigma_tilde_first_order(c, d, d),
        EstimatorMode::HessianFree => sigma_tilde_hessian_free(c, d, d, d, hyper.hv_epsilon),
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate_bound(
    pool: &rayon::ThreadPool,
    s: &Setup,
    train_devs: &[&Device],
    theta: &ParamVector,
    selected: &[usize],
    config: &ExperimentConfig,
    opts: &BoundOptions,
    base: &SmoothnessConstants,
    seed: u64,
    round: usize,
) -> Result<BoundDiagnostics> {
    let hyper = &config.hyper;
    let alpha = hyper.alpha;
    let beta = hyper.beta;
    let r_count = opts.resamples;
    let pos: Vec<usize> = selected
        .iter()
        .map(|id| s.train.binary_search(id).expect("selected id is a training device"))
        .collect();
    // resamples[r][j]: local update of selected device j in resample r
    let resamples: Vec<Vec<LocalUpdate>> = pool.install(|| {
        (0..r_count)
            .into_par_iter()
            .map(|r| {
                let rs = derive_seed(&[seed, Role::Resample as u64, r as u64]);
                pos.iter()
                    .map(|&p| {
                        let id = s.train[p];
                        let dev = &s.pop.devices[id];
                        let stream = RngStream::new(rs, round as u64, id as u64);
                        local_update(&dev.model, &dev.data, theta, hyper, s.batch[p], &stream)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let f_now = mean_meta_loss(train_devs, theta, alpha)?;
    let mut next_points = Vec::with_capacity(r_count + 1);
    next_points.push(theta.clone());
    let mut decreases = Vec::with_capacity(r_count);
    for ups in &resamples {
        let models: Vec<ParamVector> = ups.iter().map(|u| u.theta.clone()).collect();
        let next = aggregate(&models)?;
        decreases.push(f_now - mean_meta_loss(train_devs, &next, alpha)?);
        next_points.push(next);
    }
    let lhs = decreases.iter().sum::<f64>() / r_count as f64;
    let lhs_se = if r_count > 1 {
        let var = decreases.iter().map(|d| (d - lhs).powi(2)).sum::<f64>() / (r_count - 1) as f64;
        (var / r_count as f64).sqrt()
    } else {
        0.0
    };

    let mut c = base.clone();
    // Gradient norms and spreads are convex along segments, so the endpoints bound the path.
    trajectory_constants(&mut c, train_devs, &next_points)?;
    let l_f = c.l_f();
    let gamma_f = c.meta_dissimilarity();

    let tau = hyper.tau;
    let mut rhs = 0.0;
    let mut sigma_max = 0.0_f64;
    for (j, &p) in pos.iter().enumerate() {
        let d = s.batch[p];
        let sigma = sigma_for_mode(&c, hyper, d);
        sigma_max = sigma_max.max(sigma);
        match opts.form {
            BoundForm::Theorem => {
                let m2 = resamples.iter().map(|ups| ups[j].grad_norms[0].powi(2)).sum::<f64>() / r_count as f64;
                rhs += (1.0 - l_f * beta / 2.0) * m2 - (gamma_f.sqrt() + sigma) * m2.sqrt();
            }
            BoundForm::Corollary => {
                let weight = hyper.lambda1 + hyper.lambda2 / (d as f64).sqrt();
                for t in 0..tau {
                    let m2 = resamples.iter().map(|ups| ups[j].grad_norms[t].powi(2)).sum::<f64>() / r_count as f64;
                    rhs += 0.5 * (m2 - 2.0 * weight * m2.sqrt());
                }
            }
        }
    }
    rhs *= beta / pos.len() as f64;
    let (lambda1_floor, lambda2_floor) = lambda_floors(&c, beta, tau, sigma_max);
    let d_min = pos.iter().map(|&p| s.batch[p]).min().unwrap_or(1);
    Ok(BoundDiagnostics {
        lhs,
        lhs_se,
        rhs,
        l_f,
        gamma_f,
        sigma_f_max: sigma_max,
        lambda1_floor,
        lambda2_floor,
        sigma_tilde_first_order: sigma_tilde_first_order(&c, d_min, d_min),
        sigma_tilde_hessian_free: sigma_tilde_hessian_free(&c, d_min, d_min, d_min, hyper.hv_epsilon),
        holds: lhs >= rhs - 3.0 * lhs_se,
        constants: c,
    })
}

// ---------------------------------------------------------------------------
// Summaries and sweeps

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn sd(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    if v.len() < 2 {
        return Some(0.0);
    }
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub mean_energy: Option<f64>,
    pub mean_time: Option<f64>,
    pub mean_utility: Option<f64>,
    pub mean_objective: Option<f64>,
    pub mean_selected: f64,
    pub mean_ives_iterations: Option<f64>,
    pub skipped_rounds: usize,
    pub bound_holds_fraction: Option<f64>,
}

impl SeedSummary {
    pub fn of(run: &RunOutput) -> Self {
        let rows = &run.rows;
        let last = rows.last().expect("at least one round");
        let col = |f: fn(&RoundMetrics) -> Option<f64>| -> Option<f64> {
            let v: Vec<f64> = rows.iter().filter_map(f).collect();
            mean(&v)
        };
        let bounds: Vec<bool> = rows.iter().filter_map(|r| r.bound.as_ref().map(|b| b.holds)).collect();
        Self {
            seed: run.seed,
            final_train_loss: last.train_loss,
            final_test_loss: last.test_loss,
            mean_energy: col(|r| r.energy),
            mean_time: col(|r| r.time),
            mean_utility: col(|r| r.utility),
            mean_objective: col(|r| r.objective),
            mean_selected: rows.iter().map(|r| r.selected.len() as f64).sum::<f64>() / rows.len() as f64,
            mean_ives_iterations: col(|r| r.ives_iterations.map(|v| v as f64)),
            skipped_rounds: rows.iter().filter(|r| r.skipped).count(),
            bound_holds_fraction: (!bounds.is_empty())
                .then(|| bounds.iter().filter(|&&b| b).count() as f64 / bounds.len() as f64),
        }
    }
}

/// Mean and sample standard deviation over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    pub fn of(v: &[f64]) -> Option<Self> {
        Some(Self { mean: mean(v)?, sd: sd(v)? })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub final_test_loss: Option<Stat>,
    pub final_train_loss: Option<Stat>,
    pub mean_energy: Option<Stat>,
    pub mean_time: Option<Stat>,
    pub mean_utility: Option<Stat>,
    pub mean_objective: Option<Stat>,
    pub mean_selected: Option<Stat>,
}

impl Aggregate {
    pub fn of(seeds: &[SeedSummary]) -> Self {
        let pick = |f: fn(&SeedSummary) -> Option<f64>| -> Option<Stat> {
            let v: Vec<f64> = seeds.iter().filter_map(f).collect();
            Stat::of(&v)
        };
        Self {
            final_test_loss: pick(|s| Some(s.final_test_loss)),
            final_train_loss: pick(|s| Some(s.final_train_loss)),
            mean_energy: pick(|s| s.mean_energy),
            mean_time: pick(|s| s.mean_time),
            mean_utility: pick(|s| s.mean_utility),
            mean_objective: pick(|s| s.mean_objective),
            mean_selected: pick(|s| Some(s.mean_selected)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub parameter: String,
    pub value: Value,
    pub seeds: Vec<SeedSummary>,
    pub aggregate: Aggregate,
    #[serde(skip)]
    pub runs: Vec<RunOutput>,
}

/// Every `value` of `parameter` crossed with every configured seed.
pub fn sweep(config: &ExperimentConfig, parameter: &str, values: &[Value]) -> Result<Vec<SweepCell>> {
    if values.is_empty() {
        return Err(invalid("sweep needs at least one value"));
    }
    let mut cells = Vec::with_capacity(values.len());
    for v in values {
        let cfg = config.with_override(parameter, v.clone())?;
        let runs = run(&cfg)?;
        let seeds: Vec<SeedSummary> = runs.iter().map(SeedSummary::of).collect();
        cells.push(SweepCell {
            parameter: parameter.to_string(),
            value: v.clone(),
            aggregate: Aggregate::of(&seeds),
            seeds,
            runs,
        });
    }
    Ok(cells)
}

// ---------------------------------------------------------------------------
// CSV

/// Header of the per-round metrics file; units follow the last underscore.
pub const METRICS_HEADER: &[&str] = &[
    "seed",
    "round",
    "train_loss",
    "test_loss",
    "selected_count",
    "selected_ids",
    "utility",
    "energy_joule",
    "time_second",
    "comp_time_second",
    "comm_time_second",
    "objective",
    "ives_iterations",
    "skipped",
    "bound_lhs",
    "bound_lhs_se",
    "bound_rhs",
    "bound_holds",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes rows of one or more runs as CSV. Numbers use the shortest
/// representation that round-trips.
pub fn write_metrics_csv<W: Write>(out: W, runs: &[RunOutput]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for run in runs {
        for r in &run.rows {
            let ids: Vec<String> = r.selected.iter().map(|i| i.to_string()).collect();
            let b = r.bound.as_ref();
            w.write_record([
                r.seed.to_string(),
                r.round.to_string(),
                r.train_loss.to_string(),
                r.test_loss.to_string(),
                r.selected.len().to_string(),
                ids.join(";"),
                opt(r.utility),
                opt(r.energy),
                opt(r.time),
                opt(r.comp_time),
                opt(r.comm_time),
                opt(r.objective),
                opt(r.ives_iterations),
                r.skipped.to_string(),
                opt(b.map(|b| b.lhs)),
                opt(b.map(|b| b.lhs_se)),
                opt(b.map(|b| b.rhs)),
                opt(b.map(|b| b.holds)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub const SWEEP_HEADER: &[&str] = &[
    "parameter",
    "value",
    "seeds",
    "final_test_loss_mean",
    "final_test_loss_sd",
    "energy_joule_mean",
    "energy_joule_sd",
    "time_second_mean",
    "time_second_sd",
    "objective_mean",
    "objective_sd",
    "selected_mean",
    "selected_sd",
];

pub fn write_sweep_csv<W: Write>(out: W, cells: &[SweepCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for c in cells {
        let a = &c.aggregate;
        let ms = |s: Option<Stat>| (opt(s.map(|s| s.mean)), opt(s.map(|s| s.sd)));
        let (l, ls) = ms(a.final_test_loss);
        let (e, es) = ms(a.mean_energy);
        let (t, ts) = ms(a.mean_time);
        let (o, os) = ms(a.mean_objective);
        let (k, ks) = ms(a.mean_selected);
        w.write_record([
            c.parameter.clone(),
            c.value.to_string(),
            c.seeds.len().to_string(),
            l,
            ls,
            e,
            es,
            t,
            ts,
            o,
            os,
            k,
            ks,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            population: PopulationSpec { n: 12, dim: 3, ..PopulationSpec::default() },
            rounds: 3,
            participants: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_step_keeps_loss() {
        let mut cfg = small();
        cfg.rounds = 1;
        cfg.participants = 6;
        cfg.hyper.beta = 0.0;
        let out = run_nufm(&cfg, 3).unwrap();
        assert_eq!(out.theta, ParamVector::zeros(3));
        let s = setup(&cfg, 3).unwrap();
        let f0 = mean_meta_loss(&s.pop.eval_devices(), &ParamVector::zeros(3), cfg.hyper.alpha).unwrap();
        assert_eq!(out.rows[0].test_loss, f0);
    }

    #[test]
    fn defaults_follow_reference_setup() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.hyper.lambda1, 1.0);
        assert_eq!(cfg.hyper.lambda2, 1.0);
        assert_eq!(cfg.environment.eta1, 1.0);
        assert_eq!(cfg.environment.eta2, 1.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = small();
        assert_eq!(run_nufm(&cfg, 5).unwrap(), run_nufm(&cfg, 5).unwrap());
        let w = ExperimentConfig { allocation: Some(AllocationMode::Ural), ..small() };
        assert_eq!(run_wireless(&w, 5).unwrap(), run_wireless(&w, 5).unwrap());
    }

    #[test]
    fn greedy_frequency_is_stationary() {
        let cp = ComputeProfile { c: 1.3, iota: 2.0, d: 4, nu_max: 2.0 };
        let nu = greedy_frequency(&cp, 1.0, 1.0);
        let f = |v: f64| 1.0 * cp.iota * cp.cycles() * v * v / 2.0 + cp.cycles() / v;
        let mut best = (f64::INFINITY, 0.0);
        for k in 1..=20000 {
            let v = 2.0 * k as f64 / 20000.0;
            if f(v) < best.0 {
                best = (f(v), v);
            }
        }
        assert!((nu - best.1).abs() < 2e-4);
    }

    #[test]
    fn greedy_power_matches_grid() {
        let r = RadioProfile { h: 0.6, p_max: 0.9 };
        let net = NetworkConfig {
            bandwidth: 1.0,
            noise_psd: 0.1,
            interference: vec![0.4],
            payload: 1.0,
            eta1: 1.0,
            eta2: 1.0,
        };
        let p = greedy_power(&r, &net, 0, 1e-8).unwrap();
        let cost = |p: f64| (p + 1.0) / transmission_rate(&r, &net, 0, p).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        for k in 1..=100000 {
            let q = 0.9 * k as f64 / 100000.0;
            if cost(q) < best.0 {
                best = (cost(q), q);
            }
        }
        assert!(cost(p) <= best.0 + 1e-9);
    }

    #[test]
    fn baseline_allocations_are_feasible() {
        for mode in [AllocationMode::Greedy, AllocationMode::Random, AllocationMode::NufmGreedy, AllocationMode::NufmRandom, AllocationMode::Ural] {
            let cfg = ExperimentConfig { allocation: Some(mode), ..small() };
            let out = run_wireless(&cfg, 2).unwrap();
            let env = out.environment.as_ref().unwrap();
            for a in &out.allocations {
                a.validate(&env.compute, &env.radios, &env.net).unwrap();
            }
        }
    }

    #[test]
    fn overrides_and_aliases() {
        let cfg = small().with_override("eta1", serde_json::json!(2.0)).unwrap();
        assert_eq!(cfg.environment.eta1, 2.0);
        let cfg = cfg.with_override("population.n", serde_json::json!(20)).unwrap();
        assert_eq!(cfg.population.n, 20);
        assert!(small().with_override("nonsense", serde_json::json!(1)).is_err());
    }

    #[test]
    fn theorem_form_needs_one_step() {
        let mut cfg = small();
        cfg.hyper.tau = 2;
        cfg.bound = Some(BoundOptions { resamples: 2, form: BoundForm::Theorem });
        assert!(matches!(run_nufm(&cfg, 0), Err(Error::InvalidInput(_))));
        cfg.bound = Some(BoundOptions { resamples: 2, form: BoundForm::Corollary });
        assert!(run_nufm(&cfg, 0).is_ok());
    }

    #[test]
    fn vanishing_quadratic_coefficient() {
        let mut cfg = small();
        cfg.bound = Some(BoundOptions { resamples: 2, form: BoundForm::Theorem });
        let probe = run_nufm(&cfg, 1).unwrap();
        let l_f = probe.rows[0].bound.as_ref().unwrap().l_f;
        cfg.hyper.beta = 2.0 / l_f;
        cfg.rounds = 1;
        let out = run_nufm(&cfg, 1).unwrap();
        assert!(out.rows[0].bound.as_ref().unwrap().rhs <= 1e-12);
    }

    #[test]
    fn sigma_tilde_formulas() {
        let c = SmoothnessConstants {
            alpha: 0.5,
            l: 2.0,
            rho: 0.3,
            zeta: Some(2.0),
            sigma_g: 1.0,
            sigma_h: 0.0,
            gamma_g: Some(0.0),
            gamma_h: 0.0,
        };
        let fo: f64 = 2.0 * (1.0 / 4.0 + 1.0 / 2.0) + 2.0 * 4.0;
        assert!((sigma_tilde_first_order(&c, 2, 4) - fo.sqrt()).abs() < 1e-12);
        let hf: f64 = 6.0 * (2.0 / 2.0 + 2.0 / 4.0 + 0.25 / (2.0 * 0.01 * 8.0)) + 2.0 * (0.5 * 0.3 * 0.1f64).powi(2) * 16.0;
        assert!((sigma_tilde_hessian_free(&c, 2, 4, 8, 0.1) - hf.sqrt()).abs() < 1e-10);
    }
}
