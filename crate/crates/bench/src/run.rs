//! Experiment runner: NMSE metric, the benchmark experiments, CSV emission.
//!
//! Every experiment is a pure function of its configuration and seed list.
//! Cells (independent `(algorithm, sweep value, seed)` combinations) may be
//! evaluated on worker threads; records are sorted on a full key before
//! emission, so thread count never changes the output bytes. Wall-time
//! columns are excluded from all determinism guarantees.

use crate::data::{gen_design, synth_problem};
use crate::error::BenchError;
use sparsecode::bayeslista::MomentMode;
use sparsecode::lista::{lista_forward, lista_train, lista_train_with, ListaModel, TrainCfg};
use sparsecode::mat::dot;
use sparsecode::pbp::{pbp_train, pbp_train_with, PbpState, PbpTrainCfg};
use sparsecode::rng::{self, stream};
use sparsecode::solvers::{fista_solve_with, ista_solve_with, ista_weights, IstaWeights};
use sparsecode::Mat;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Algo {
    Ista,
    Fista,
    Lista,
    BayesLista,
}

impl Algo {
    pub const ALL: [Algo; 4] = [Algo::Ista, Algo::Fista, Algo::Lista, Algo::BayesLista];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::Ista => "ista",
            Algo::Fista => "fista",
            Algo::Lista => "lista",
            Algo::BayesLista => "bayeslista",
        }
    }

    pub fn parse(s: &str) -> Result<Self, BenchError> {
        match s {
            "ista" => Ok(Algo::Ista),
            "fista" => Ok(Algo::Fista),
            "lista" => Ok(Algo::Lista),
            "bayeslista" => Ok(Algo::BayesLista),
            other => Err(BenchError::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Strategy {
    Active,
    Random,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Active => "active",
            Strategy::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self, BenchError> {
        match s {
            "active" => Ok(Strategy::Active),
            "random" => Ok(Strategy::Random),
            other => Err(BenchError::Config(format!("unknown strategy '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Experiment {
    LayersSweep,
    KSweep,
    Mnist,
    Active,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::LayersSweep => "layers-sweep",
            Experiment::KSweep => "k-sweep",
            Experiment::Mnist => "mnist",
            Experiment::Active => "active",
        }
    }
}

/// One experiment result row.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub experiment: Experiment,
    pub algorithm: Algo,
    pub layers: usize,
    pub k: usize,
    pub seed: u64,
    pub round: Option<usize>,
    pub strategy: Option<Strategy>,
    pub nmse: f64,
    pub wall_ms: f64,
}

impl RunRecord {
    fn sort_key(&self) -> (&'static str, &'static str, usize, usize, u64, usize, &'static str) {
        (
            self.experiment.as_str(),
            self.algorithm.as_str(),
            self.layers,
            self.k,
            self.seed,
            self.round.unwrap_or(0),
            self.strategy.map(|s| s.as_str()).unwrap_or(""),
        )
    }
}

/// Sorts on the full declared key so record order is independent of
/// evaluation order.
pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// `sum_n ||pred_n - truth_n||^2 / sum_n ||truth_n||^2`.
pub fn nmse(pred: &Mat, truth: &Mat) -> Result<f64, BenchError> {
    assert_eq!(pred.rows(), truth.rows(), "row count mismatch");
    assert_eq!(pred.cols(), truth.cols(), "column count mismatch");
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in pred.data().iter().zip(truth.data()) {
        num += (p - t) * (p - t);
        den += t * t;
    }
    if den == 0.0 {
        return Err(BenchError::Config("NMSE undefined for all-zero truth".into()));
    }
    Ok(num / den)
}

/// Round-robin parallel map preserving input order in the output.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = threads.max(1).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                scope.spawn(move || {
                    let mut local = Vec::new();
                    let mut i = w;
                    while i < items.len() {
                        local.push((i, f(&items[i])));
                        i += workers;
                    }
                    local
                })
            })
            .collect();
        for handle in handles {
            for (i, r) in handle.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("missed slot")).collect()
}

/// Shared model hyperparameters for a sweep.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub d: usize,
    pub ks: Vec<usize>,
    pub layers: Vec<usize>,
    pub lambda: f64,
    pub noise_sd: f64,
    pub spike_prob: f64,
    pub trunc: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub algos: Vec<Algo>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub step: f64,
    pub mode: MomentMode,
    pub threads: usize,
}

fn solver_predictions(
    weights: &IstaWeights,
    layers: usize,
    y_test: &Mat,
    d: usize,
    fista: bool,
) -> Mat {
    let mut preds = Mat::zeros(y_test.rows(), d);
    for i in 0..y_test.rows() {
        let sol = if fista {
            fista_solve_with(weights, layers, y_test.row(i))
        } else {
            ista_solve_with(weights, layers, y_test.row(i))
        };
        preds.row_mut(i).copy_from_slice(&sol);
    }
    preds
}

fn lista_predictions(model: &ListaModel, y_test: &Mat) -> Mat {
    let mut preds = Mat::zeros(y_test.rows(), model.dim());
    for i in 0..y_test.rows() {
        preds.row_mut(i).copy_from_slice(&lista_forward(model, y_test.row(i)));
    }
    preds
}

fn pbp_predictions(q: &PbpState, y_test: &Mat) -> Mat {
    let mut preds = Mat::zeros(y_test.rows(), q.dim());
    for i in 0..y_test.rows() {
        preds.row_mut(i).copy_from_slice(&q.predict(y_test.row(i)).0);
    }
    preds
}

#[allow(clippy::too_many_arguments)]
fn train_and_predict(
    algo: Algo,
    x: &Mat,
    y_train: &Mat,
    b_train: &Mat,
    y_test: &Mat,
    lambda: f64,
    layers: usize,
    epochs: usize,
    step: f64,
    seed: u64,
    mode: MomentMode,
) -> Result<Mat, BenchError> {
    let d = x.cols();
    match algo {
        Algo::Ista | Algo::Fista => {
            let weights =
                ista_weights(x, lambda).map_err(|e| BenchError::Numeric(e.to_string()))?;
            Ok(solver_predictions(&weights, layers, y_test, d, algo == Algo::Fista))
        }
        Algo::Lista => {
            let init = ListaModel::from_design(x, lambda, layers)
                .map_err(|e| BenchError::Numeric(e.to_string()))?;
            let cfg = TrainCfg { epochs, step, seed };
            let model = lista_train(y_train, b_train, &init, cfg)
                .map_err(|e| BenchError::Numeric(e.to_string()))?;
            Ok(lista_predictions(&model, y_test))
        }
        Algo::BayesLista => {
            let mut q0 = PbpState::from_design(x, lambda, layers)
                .map_err(|e| BenchError::Numeric(e.to_string()))?;
            q0.mode = mode;
            let cfg = PbpTrainCfg { epochs, seed, update_priors: true };
            let (q, _) = pbp_train(y_train, b_train, &q0, cfg)
                .map_err(|e| BenchError::Numeric(e.to_string()))?;
            Ok(pbp_predictions(&q, y_test))
        }
    }
}

/// Runs a synthetic sweep over the cross product
/// `algos x layers x ks x seeds`; one record per cell.
pub fn run_sweep(
    experiment: Experiment,
    cfg: &SweepConfig,
) -> Result<Vec<RunRecord>, BenchError> {
    let mut cells = Vec::new();
    for &algo in &cfg.algos {
        for &layers in &cfg.layers {
            for &k in &cfg.ks {
                for &seed in &cfg.seeds {
                    cells.push((algo, layers, k, seed));
                }
            }
        }
    }
    let results = parallel_map(&cells, cfg.threads, |&(algo, layers, k, seed)| -> Result<RunRecord, BenchError> {
        let data = synth_problem(
            cfg.d,
            k,
            cfg.n_train,
            cfg.n_test,
            cfg.noise_sd,
            cfg.spike_prob,
            cfg.trunc,
            seed,
        );
        let start = Instant::now();
        let preds = train_and_predict(
            algo,
            &data.x,
            &data.y_train,
            &data.b_train,
            &data.y_test,
            cfg.lambda,
            layers,
            cfg.epochs,
            cfg.step,
            seed,
            cfg.mode,
        )?;
        let nmse = nmse(&preds, &data.b_test)?;
        Ok(RunRecord {
            experiment,
            algorithm: algo,
            layers,
            k,
            seed,
            round: None,
            strategy: None,
            nmse,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    });
    let mut records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    sort_records(&mut records);
    Ok(records)
}

/// Image reconstruction benchmark configuration.
#[derive(Clone, Debug)]
pub struct MnistConfig {
    pub k: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub layers: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub step: f64,
    pub algos: Vec<Algo>,
    pub seeds: Vec<u64>,
    pub mode: MomentMode,
    pub threads: usize,
}

fn rows_subset(m: &Mat, start: usize, count: usize) -> Mat {
    Mat::from_fn(count, m.cols(), |i, j| m[(start + i, j)])
}

fn exact_observations(x: &Mat, targets: &Mat) -> Mat {
    Mat::from_fn(targets.rows(), x.rows(), |i, j| dot(x.row(j), targets.row(i)))
}

/// Image benchmark: targets are flattened images, observations `y = X beta`
/// with a fresh Gaussian design per seed, and the NMSE curve is recorded
/// after every training epoch (constant curves for the fixed solvers).
pub fn run_mnist(cfg: &MnistConfig, images: &Mat) -> Result<Vec<RunRecord>, BenchError> {
    if cfg.n_train + cfg.n_test > images.rows() {
        return Err(BenchError::Config(format!(
            "need {} images, file holds {}",
            cfg.n_train + cfg.n_test,
            images.rows()
        )));
    }
    if cfg.epochs == 0 {
        return Err(BenchError::Config("need at least one training epoch".into()));
    }
    let d = images.cols();
    let b_train = rows_subset(images, 0, cfg.n_train);
    let b_test = rows_subset(images, cfg.n_train, cfg.n_test);

    let mut cells = Vec::new();
    for &algo in &cfg.algos {
        for &seed in &cfg.seeds {
            cells.push((algo, seed));
        }
    }
    let results = parallel_map(&cells, cfg.threads, |&(algo, seed)| -> Result<Vec<RunRecord>, BenchError> {
        let x = gen_design(cfg.k, d, &mut rng::seeded(seed, stream::DESIGN));
        let y_train = exact_observations(&x, &b_train);
        let y_test = exact_observations(&x, &b_test);
        let start = Instant::now();
        let mut records = Vec::with_capacity(cfg.epochs);
        let mut record = |round: usize, value: f64, start: &Instant| {
            records.push(RunRecord {
                experiment: Experiment::Mnist,
                algorithm: algo,
                layers: cfg.layers,
                k: cfg.k,
                seed,
                round: Some(round),
                strategy: None,
                nmse: value,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        };
        match algo {
            Algo::Ista | Algo::Fista => {
                let weights =
                    ista_weights(&x, cfg.lambda).map_err(|e| BenchError::Numeric(e.to_string()))?;
                let preds =
                    solver_predictions(&weights, cfg.layers, &y_test, d, algo == Algo::Fista);
                let value = nmse(&preds, &b_test)?;
                for round in 1..=cfg.epochs {
                    record(round, value, &start);
                }
            }
            Algo::Lista => {
                let init = ListaModel::from_design(&x, cfg.lambda, cfg.layers)
                    .map_err(|e| BenchError::Numeric(e.to_string()))?;
                let train_cfg = TrainCfg { epochs: cfg.epochs, step: cfg.step, seed };
                let mut curve = Ok(());
                lista_train_with(&y_train, &b_train, &init, train_cfg, |epoch, model| {
                    if curve.is_ok() {
                        match nmse(&lista_predictions(model, &y_test), &b_test) {
                            Ok(v) => record(epoch + 1, v, &start),
                            Err(e) => curve = Err(e),
                        }
                    }
                })
                .map_err(|e| BenchError::Numeric(e.to_string()))?;
                curve?;
            }
            Algo::BayesLista => {
                let mut q0 = PbpState::from_design(&x, cfg.lambda, cfg.layers)
                    .map_err(|e| BenchError::Numeric(e.to_string()))?;
                q0.mode = cfg.mode;
                let train_cfg = PbpTrainCfg { epochs: cfg.epochs, seed, update_priors: true };
                let mut curve = Ok(());
                pbp_train_with(&y_train, &b_train, &q0, train_cfg, |epoch, q| {
                    if curve.is_ok() {
                        match nmse(&pbp_predictions(q, &y_test), &b_test) {
                            Ok(v) => record(epoch + 1, v, &start),
                            Err(e) => curve = Err(e),
                        }
                    }
                })
                .map_err(|e| BenchError::Numeric(e.to_string()))?;
                curve?;
            }
        }
        Ok(records)
    });
    let mut records = Vec::new();
    for cell in results {
        records.extend(cell?);
    }
    sort_records(&mut records);
    Ok(records)
}

/// Active learning configuration.
#[derive(Clone, Debug)]
pub struct ActiveConfig {
    pub k: usize,
    pub n_train: usize,
    pub n_pool: usize,
    pub n_test: usize,
    pub rounds: usize,
    pub strategies: Vec<Strategy>,
    pub layers: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub step: f64,
    pub mode: MomentMode,
    pub threads: usize,
    pub seeds: Vec<u64>,
}

/// Index of the pool point with the largest total predictive variance; ties
/// break toward the lowest index.
fn most_uncertain(q: &PbpState, pool_y: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, y) in pool_y.iter().enumerate() {
        let (_, var) = q.predict(y);
        let score: f64 = var.iter().sum();
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

/// Uncertainty-sampling loop: train, then repeatedly move one pool point into
/// the training set (most-uncertain or uniformly random), retrain from
/// scratch, and record test NMSE. One record per `(strategy, seed, round)`.
pub fn run_active(cfg: &ActiveConfig, images: &Mat) -> Result<Vec<RunRecord>, BenchError> {
    let need = cfg.n_train + cfg.n_pool + cfg.n_test;
    if need > images.rows() {
        return Err(BenchError::Config(format!(
            "need {} images, file holds {}",
            need,
            images.rows()
        )));
    }
    if cfg.n_pool == 0 {
        return Err(BenchError::Config("empty pool".into()));
    }
    let d = images.cols();
    let b_train0 = rows_subset(images, 0, cfg.n_train);
    let b_pool = rows_subset(images, cfg.n_train, cfg.n_pool);
    let b_test = rows_subset(images, cfg.n_train + cfg.n_pool, cfg.n_test);

    let mut cells = Vec::new();
    for &strategy in &cfg.strategies {
        for &seed in &cfg.seeds {
            cells.push((strategy, seed));
        }
    }
    let results = parallel_map(&cells, cfg.threads, |&(strategy, seed)| -> Result<Vec<RunRecord>, BenchError> {
        let x = gen_design(cfg.k, d, &mut rng::seeded(seed, stream::DESIGN));
        let mut train_y = exact_observations(&x, &b_train0);
        let mut train_b = b_train0.clone();
        let pool_y_all = exact_observations(&x, &b_pool);
        let y_test = exact_observations(&x, &b_test);

        let mut pool: Vec<usize> = (0..cfg.n_pool).collect();
        let start = Instant::now();
        let train = |y: &Mat, b: &Mat| -> Result<PbpState, BenchError> {
            let mut q0 = PbpState::from_design(&x, cfg.lambda, cfg.layers)
                .map_err(|e| BenchError::Numeric(e.to_string()))?;
            q0.mode = cfg.mode;
            let train_cfg = PbpTrainCfg { epochs: cfg.epochs, seed, update_priors: true };
            pbp_train(y, b, &q0, train_cfg)
                .map(|(q, _)| q)
                .map_err(|e| BenchError::Numeric(e.to_string()))
        };

        let mut q = train(&train_y, &train_b)?;
        let mut records = Vec::with_capacity(cfg.rounds);
        for round in 1..=cfg.rounds {
            let pick = match strategy {
                Strategy::Active => {
                    let pool_y: Vec<Vec<f64>> =
                        pool.iter().map(|&i| pool_y_all.row(i).to_vec()).collect();
                    most_uncertain(&q, &pool_y)
                }
                Strategy::Random => {
                    let mut r = rng::seeded(seed, stream::POOL_PICK + round as u64);
                    rng::below(&mut r, pool.len())
                }
            };
            let chosen = pool.remove(pick);
            train_y = append_row(&train_y, pool_y_all.row(chosen));
            train_b = append_row(&train_b, b_pool.row(chosen));
            q = train(&train_y, &train_b)?;
            let value = nmse(&pbp_predictions(&q, &y_test), &b_test)?;
            records.push(RunRecord {
                experiment: Experiment::Active,
                algorithm: Algo::BayesLista,
                layers: cfg.layers,
                k: cfg.k,
                seed,
                round: Some(round),
                strategy: Some(strategy),
                nmse: value,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        Ok(records)
    });
    let mut records = Vec::new();
    for cell in results {
        records.extend(cell?);
    }
    sort_records(&mut records);
    Ok(records)
}

fn append_row(m: &Mat, row: &[f64]) -> Mat {
    let mut data = m.data().to_vec();
    data.extend_from_slice(row);
    Mat::from_vec(m.rows() + 1, m.cols(), data)
}

/// Shortest decimal form that round-trips an f64 (17 significant digits).
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders records to CSV: fixed header, empty cells for absent round and
/// strategy, floats at 17 significant digits, LF line endings.
pub fn csv_string(records: &[RunRecord], db: bool) -> String {
    let mut out = String::from("experiment,algorithm,L,K,seed,round,strategy,nmse,wall_ms");
    if db {
        out.push_str(",nmse_db");
    }
    out.push('\n');
    for r in records {
        let round = r.round.map(|x| x.to_string()).unwrap_or_default();
        let strategy = r.strategy.map(|s| s.as_str().to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}",
            r.experiment.as_str(),
            r.algorithm.as_str(),
            r.layers,
            r.k,
            r.seed,
            round,
            strategy,
            format_float(r.nmse),
            format_float(r.wall_ms),
        ));
        if db {
            out.push(',');
            out.push_str(&format_float(10.0 * r.nmse.log10()));
        }
        out.push('\n');
    }
    out
}

/// Writes the CSV to disk.
pub fn emit_csv(records: &[RunRecord], path: &Path, db: bool) -> Result<(), BenchError> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| BenchError::Data(crate::error::DataError::io(path, e)))?;
    file.write_all(csv_string(records, db).as_bytes())
        .map_err(|e| BenchError::Data(crate::error::DataError::io(path, e)))
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
