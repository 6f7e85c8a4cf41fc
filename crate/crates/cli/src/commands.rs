use std::path::{Path, PathBuf};
use std::time::Instant;

use orderlab::analysis::{
    absdiff_eval, generalization_curves, memorization_heatmap, slope_sign_agreement, timing_compare,
    write_timing_csv, AbsDiffSetup, Heatmap, PinningSetup, Source,
};
use orderlab::curriculum::{baseline_order, estimated_fitness, ga_search, DifficultyStrategy, ReferenceModels};
use orderlab::data::{save_corpus, Corpus};
use orderlab::estimator::{estimate, estimate_performance, EstimateRecord, EstimatorConfig, EstimatorMode, EvalSteps, Permutation};
use orderlab::model::{evaluate, DifferentiableModel};
use orderlab::numerics::{rng_from_seed, stats};
use orderlab::store::{build_store, save_store, UpdateTermStore};
use orderlab::trainer::{retrain_oracle, save_trajectory, train_final, train_reference, ReferenceTrajectory};
use serde::Serialize;

use crate::artifacts::{Run, CORPUS_FILE, STORE_FILE, TRAJECTORY_FILE};
use crate::config::RunConfig;
use crate::error::CliError;

/// Options shared by the stage commands.
pub struct Ctx {
    pub cfg: RunConfig,
    pub config_dir: PathBuf,
    pub mode: Option<EstimatorMode>,
    pub oracle: bool,
}

impl Ctx {
    fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig { mode: self.mode.unwrap_or(self.cfg.estimator.mode), ..self.cfg.estimator }
    }
}

struct Loaded {
    corpus: Corpus,
    model: Box<dyn DifferentiableModel>,
    traj: ReferenceTrajectory,
}

fn load_upstream(ctx: &Ctx, run: &mut Run) -> Result<Loaded, CliError> {
    let corpus = run.corpus()?;
    let traj = run.trajectory()?;
    let model = ctx.cfg.model.build(&corpus)?;
    Ok(Loaded { corpus, model, traj })
}

fn oracle_metric(l: &Loaded, perm: &Permutation) -> Result<f64, CliError> {
    let theta = train_final(&*l.model, &l.corpus, perm, &l.traj.config, l.traj.theta(0))?;
    Ok(evaluate(&*l.model, &theta, &l.corpus.validation)?.metric())
}

#[derive(Serialize)]
struct ReferenceReport {
    steps: usize,
    parameters: usize,
    initial_metric: f64,
    final_metric: f64,
    train_losses: Vec<f64>,
}

pub fn train_ref(ctx: &Ctx, run: &mut Run) -> Result<(), CliError> {
    let corpus = ctx.cfg.build_corpus(&ctx.config_dir)?;
    let model = ctx.cfg.model.build(&corpus)?;
    let theta0 = model.init_params(ctx.cfg.seed_for("init"));
    let order = Permutation::identity(corpus.num_batches());
    let traj = train_reference(&*model, &corpus, &order, &ctx.cfg.adam, &theta0)?;
    save_corpus(&run.path(CORPUS_FILE), &corpus, &run.digest)?;
    run.written(CORPUS_FILE)?;
    save_trajectory(&run.path(TRAJECTORY_FILE), &traj, &run.digest)?;
    run.written(TRAJECTORY_FILE)?;
    let report = ReferenceReport {
        steps: traj.num_steps(),
        parameters: theta0.total_dim(),
        initial_metric: evaluate(&*model, &theta0, &corpus.validation)?.metric(),
        final_metric: evaluate(&*model, traj.final_params(), &corpus.validation)?.metric(),
        train_losses: traj.losses.clone(),
    };
    println!("reference: {} steps, validation metric {:.6} -> {:.6}", report.steps, report.initial_metric, report.final_metric);
    run.write_json("reference.json", &report)
}

#[derive(Serialize)]
struct LayerReport {
    layer: String,
    target_dim: Option<usize>,
    error_bound: f64,
}

#[derive(Serialize)]
struct StoreReport {
    stats: orderlab::store::StoreStats,
    second_order: bool,
    layers: Vec<LayerReport>,
}

pub fn build_store_cmd(ctx: &Ctx, run: &mut Run) -> Result<(), CliError> {
    let l = load_upstream(ctx, run)?;
    let store = build_store(&l.traj, &*l.model, &l.corpus, &ctx.cfg.store_options())?;
    save_store(&run.path(STORE_FILE), &store, &run.digest)?;
    run.written(STORE_FILE)?;
    let report = StoreReport {
        stats: store.stats(),
        second_order: store.includes_second_order(),
        layers: store
            .layer_codecs()
            .iter()
            .map(|c| LayerReport {
                layer: c.layer_id.clone(),
                target_dim: c.projection.map(|p| p.target_dim),
                error_bound: c.error_bound,
            })
            .collect(),
    };
    println!(
        "store: {} entries, {} gradient evaluations, {} of {} bytes",
        report.stats.entries, report.stats.gradient_evaluations, report.stats.stored_bytes, report.stats.raw_bytes
    );
    run.write_json("store.json", &report)
}

/// `identity`, a comma list, or `@FILE` with one list per line.
pub fn parse_perms(specs: &[String], steps: usize) -> Result<Vec<Permutation>, CliError> {
    let mut out = Vec::new();
    for spec in specs {
        let spec = spec.trim();
        if spec == "identity" {
            out.push(Permutation::identity(steps));
        } else if let Some(path) = spec.strip_prefix('@') {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read permutation file {path}: {e}")))?;
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
                out.push(line.parse()?);
            }
        } else {
            out.push(spec.parse()?);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("estimate needs at least one --perm".into()));
    }
    Ok(out)
}

#[derive(Serialize)]
struct EstimateLine {
    #[serde(flatten)]
    record: EstimateRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_final_ppl: Option<f64>,
}

pub fn estimate_cmd(ctx: &Ctx, run: &mut Run, perms: &[String], all_steps: bool) -> Result<(), CliError> {
    let l = load_upstream(ctx, run)?;
    let store = run.store()?;
    let perms = parse_perms(perms, store.steps())?;
    let cfg = ctx.estimator();
    let steps = if all_steps { EvalSteps::All } else { EvalSteps::Final };
    let mut lines = Vec::with_capacity(perms.len());
    for perm in &perms {
        let est = estimate(&store, &l.traj, perm, &cfg)?;
        let evals = estimate_performance(&est, &*l.model, &l.corpus.validation, steps)?;
        let oracle_final_ppl = if ctx.oracle {
            let (_, ev) = retrain_oracle(&*l.model, &l.corpus, perm, &l.traj.config, l.traj.theta(0), &l.corpus.validation)?;
            Some(ev.last().expect("T+1 evaluations").metric())
        } else {
            None
        };
        let line = EstimateLine { record: EstimateRecord::new(&est, &evals, &run.digest), oracle_final_ppl };
        println!("{}", serde_json::to_string(&line).expect("record serializes"));
        lines.push(line);
    }
    run.write_jsonl("estimates.jsonl", &lines)
}

fn available_modes(ctx: &Ctx, store: &UpdateTermStore) -> Vec<EstimatorMode> {
    match ctx.mode {
        Some(m) => vec![m],
        None if store.includes_second_order() => vec![EstimatorMode::Fut, EstimatorMode::FutPlusPlus],
        None => vec![EstimatorMode::Fut],
    }
}

pub fn absdiff_cmd(ctx: &Ctx, run: &mut Run) -> Result<(), CliError> {
    let l = load_upstream(ctx, run)?;
    let store = run.store()?;
    let setup = AbsDiffSetup {
        store: &store,
        traj: &l.traj,
        model: &*l.model,
        corpus: &l.corpus,
        eval_set: &l.corpus.validation,
    };
    let reports = absdiff_eval(
        &setup,
        ctx.cfg.analysis.orders,
        &available_modes(ctx, &store),
        &ctx.cfg.estimator,
        ctx.cfg.seed_for("absdiff"),
    )?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["method", "absdiff", "orders"]).map_err(to_io)?;
    for r in &reports {
        println!("{:>6}  AbsDiff {:.6}", r.method, r.absdiff);
        csv.write_record([r.method.clone(), r.absdiff.to_string(), r.orders.len().to_string()]).map_err(to_io)?;
    }
    let bytes = csv.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
    run.write("absdiff.csv", &bytes)?;
    run.write_json("absdiff.json", &reports)
}

fn to_io(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

#[derive(Serialize)]
struct ScheduleResult {
    name: String,
    perm: Vec<usize>,
    estimated: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<f64>,
}

pub fn curriculum_cmd(ctx: &Ctx, run: &mut Run, descending: bool) -> Result<(), CliError> {
    let l = load_upstream(ctx, run)?;
    let store = run.store()?;
    let est = ctx.estimator();
    let val = &l.corpus.validation;
    let ga = ga_search(&store, &l.traj, &*l.model, val, &ctx.cfg.ga_config(), &est)?;
    run.write_jsonl("ga_history.jsonl", &ga.history)?;
    run.write("curriculum.txt", format!("{}\n", ga.best).as_bytes())?;

    let steps = l.traj.num_steps();
    let refs = ReferenceModels {
        model: Some(&*l.model),
        reference: Some(l.traj.final_params()),
        weak: Some(l.traj.theta(steps / 2)),
        strong: Some(l.traj.final_params()),
    };
    let mut schedules = vec![("ga".to_string(), ga.best.clone())];
    for s in DifficultyStrategy::ALL {
        let perm = baseline_order(&l.corpus, s, &refs, ctx.cfg.seed_for("baseline"), descending)?;
        schedules.push((s.label().to_string(), perm));
    }
    schedules.push(("identity".to_string(), Permutation::identity(steps)));
    let mut results = Vec::new();
    for (name, perm) in schedules {
        let estimated = estimated_fitness(&store, &l.traj, &*l.model, val, &est, &perm)?;
        let oracle = if ctx.oracle { Some(oracle_metric(&l, &perm)?) } else { None };
        match oracle {
            Some(o) => println!("{name:>8}  {perm}  estimated {estimated:.6}  oracle {o:.6}"),
            None => println!("{name:>8}  {perm}  estimated {estimated:.6}"),
        }
        results.push(ScheduleResult { name, perm: perm.as_slice().to_vec(), estimated, oracle });
    }
    log::info!("GA used {} fitness evaluations", ga.evaluations);
    run.write_json("curriculum.json", &results)
}

#[derive(Serialize)]
struct MemgenReport {
    cell_samples: usize,
    estimator: EstimatorConfig,
    memorization_recency: f64,
    generalization: GeneralizationSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleComparison>,
}

#[derive(Serialize)]
struct GeneralizationSummary {
    tau: f64,
    similarities: Vec<f64>,
    high: Vec<usize>,
    low: Vec<usize>,
    high_mean: Vec<f64>,
    low_mean: Vec<f64>,
}

#[derive(Serialize)]
struct OracleComparison {
    memorization_pearson: f64,
    memorization_recency: f64,
    generalization_high_slope_agreement: f64,
}

fn write_heatmap(run: &mut Run, name: &str, h: &Heatmap) -> Result<(), CliError> {
    let mut buf = Vec::new();
    h.write_csv(&mut buf)?;
    run.write(name, &buf)
}

pub fn memgen_cmd(ctx: &Ctx, run: &mut Run) -> Result<(), CliError> {
    let l = load_upstream(ctx, run)?;
    let store = run.store()?;
    let setup = PinningSetup { traj: &l.traj, model: &*l.model, corpus: &l.corpus };
    let n = ctx.cfg.analysis.cell_samples;
    let seed = ctx.cfg.seed_for("shuffles");
    let est = Source::Estimated { store: &store, config: ctx.estimator() };
    let mem = memorization_heatmap(&setup, est, n, seed)?;
    let gen = generalization_curves(&setup, est, &l.corpus.test, n, seed)?;
    write_heatmap(run, "memorization.csv", &mem)?;
    write_heatmap(run, "generalization.csv", &gen.curves)?;
    let oracle = if ctx.oracle {
        let mem_o = memorization_heatmap(&setup, Source::Oracle, n, seed)?;
        let gen_o = generalization_curves(&setup, Source::Oracle, &l.corpus.test, n, seed)?;
        write_heatmap(run, "memorization_oracle.csv", &mem_o)?;
        write_heatmap(run, "generalization_oracle.csv", &gen_o.curves)?;
        Some(OracleComparison {
            memorization_pearson: stats::pearson(&mem.flattened(), &mem_o.flattened()),
            memorization_recency: mem_o.recency(),
            generalization_high_slope_agreement: slope_sign_agreement(&gen.curves, &gen_o.curves, &gen.groups.high),
        })
    } else {
        None
    };
    let report = MemgenReport {
        cell_samples: n,
        estimator: ctx.estimator(),
        memorization_recency: mem.recency(),
        generalization: GeneralizationSummary {
            tau: gen.groups.tau,
            similarities: gen.groups.similarities.clone(),
            high: gen.groups.high.clone(),
            low: gen.groups.low.clone(),
            high_mean: gen.high_mean.clone(),
            low_mean: gen.low_mean.clone(),
        },
        oracle,
    };
    println!("memorization recency (estimated) {:.3}", report.memorization_recency);
    if let Some(o) = &report.oracle {
        println!(
            "oracle: heatmap Pearson {:.3}, recency {:.3}, high-similarity slope agreement {:.2}",
            o.memorization_pearson, o.memorization_recency, o.generalization_high_slope_agreement
        );
    }
    run.write_json("memgen.json", &report)
}

#[derive(Serialize)]
struct TimingReport {
    store_build_secs: f64,
    per_order_estimate_secs: f64,
    per_order_retrain_secs: f64,
    orders: usize,
    rows: Vec<orderlab::analysis::TimingRow>,
}

pub fn timing_cmd(ctx: &Ctx, run: &mut Run) -> Result<(), CliError> {
    let l = load_upstream(ctx, run)?;
    let t0 = Instant::now();
    let store = build_store(&l.traj, &*l.model, &l.corpus, &ctx.cfg.store_options())?;
    let build = t0.elapsed().as_secs_f64();
    let n = ctx.cfg.analysis.timing_orders.max(1);
    let mut rng = rng_from_seed(ctx.cfg.seed_for("timing"));
    let perms: Vec<Permutation> = (0..n).map(|_| Permutation::random(l.traj.num_steps(), &mut rng)).collect();
    let cfg = ctx.estimator();
    let t0 = Instant::now();
    for p in &perms {
        orderlab::estimator::estimate_final(&store, &l.traj, p, &cfg)?;
    }
    let est = t0.elapsed().as_secs_f64() / n as f64;
    let t0 = Instant::now();
    for p in &perms {
        train_final(&*l.model, &l.corpus, p, &l.traj.config, l.traj.theta(0))?;
    }
    let retrain = t0.elapsed().as_secs_f64() / n as f64;
    let rows = timing_compare(build, est, retrain, &ctx.cfg.analysis.n_values);
    for r in &rows {
        println!("N={:>5}  amortized {:.3}ms  retrain {:.3}ms  speedup {:.1}x", r.n, 1e3 * r.amortized_estimate, 1e3 * r.retrain, r.speedup);
    }
    let mut buf = Vec::new();
    write_timing_csv(&rows, &mut buf)?;
    run.write("timing.csv", &buf)?;
    run.write_json(
        "timing.json",
        &TimingReport { store_build_secs: build, per_order_estimate_secs: est, per_order_retrain_secs: retrain, orders: n, rows },
    )
}

pub fn config_dir(path: &Path) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}
