//! Acceptance battery. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use orderlab::analysis::{absdiff_eval, memorization_heatmap, AbsDiffSetup, PinningSetup, Source};
use orderlab::curriculum::{ga_search, GaConfig};
use orderlab::data::{
    decode_corpus, encode_corpus, ingest_texts, synth_regression, synth_text_documents, Corpus, IngestConfig,
    RegressionSpec, Samples,
};
use orderlab::estimator::{estimate, estimate_final, EstimatorConfig, EstimatorMode, Permutation};
use orderlab::model::{evaluate, CharLm, DifferentiableModel, MlpRegressor, QuadraticModel};
use orderlab::numerics::projection::relative_frobenius_error;
use orderlab::numerics::{jl_min_dim, project, recover, rng_from_seed, stats, sub_seed, ParamVector, ProjectionSpec};
use orderlab::store::{build_store, decode_store, difference_quotient, encode_store, StoreOptions, UpdateTermStore};
use orderlab::trainer::{
    adam_step, decode_trajectory, encode_trajectory, train_final, train_reference, AdamConfig, AdamState,
    ReferenceTrajectory,
};
use orderlab::Error;
use rand::Rng;
use rand_distr::StandardNormal;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Tiny character LM on eight topic blocks, trained once in identity order.
struct LmRig {
    corpus: Corpus,
    model: CharLm,
    traj: ReferenceTrajectory,
    store: UpdateTermStore,
}

fn lm_corpus(seed: u64, batches: usize) -> Corpus {
    let docs = synth_text_documents(seed, 130, 8);
    ingest_texts(&docs, &IngestConfig { batches, seed, ..Default::default() }).unwrap()
}

fn lm_rig(seed: u64) -> LmRig {
    let corpus = lm_corpus(seed, 8);
    let model = CharLm::new(corpus.vocab.size(), 8, 16, 32).unwrap();
    let cfg = AdamConfig { lr: 5e-4, ..Default::default() };
    let traj = train_reference(&model, &corpus, &Permutation::identity(8), &cfg, &model.init_params(seed + 100)).unwrap();
    let store = build_store(&traj, &model, &corpus, &StoreOptions { k_ladder: vec![], ..Default::default() }).unwrap();
    LmRig { corpus, model, traj, store }
}

fn max_relative_error(a: &ParamVector, b: &ParamVector) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() / y.abs().max(f64::MIN_POSITIVE) })
        .fold(0.0, f64::max)
}

fn identity_exactness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for t in [4usize, 8] {
        let corpus = lm_corpus(7, t);
        let lm = CharLm::new(corpus.vocab.size(), 8, 16, 32).unwrap();
        let reg = synth_regression(&RegressionSpec::new(7, 30 * t, 4, t)).unwrap();
        let mlp = MlpRegressor::new(4, Some(8)).unwrap();
        let cases: [(&dyn DifferentiableModel, &Corpus); 2] = [(&lm, &corpus), (&mlp, &reg)];
        for (model, corpus) in cases {
            let traj = train_reference(model, corpus, &Permutation::identity(t), &AdamConfig::default(), &model.init_params(3)).unwrap();
            let store = build_store(&traj, model, corpus, &StoreOptions::default()).unwrap();
            let est = estimate(&store, &traj, &Permutation::identity(t), &EstimatorConfig::default()).unwrap();
            for (g, th) in est.gammas.iter().zip(&traj.checkpoints) {
                worst = worst.max(max_relative_error(g, th));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-9 && secs < 30.0, format!("max relative error {worst:.1e}, {secs:.1}s"))
}

fn estimator_beats_random() -> Outcome {
    let start = Instant::now();
    let (mut fut_wins, mut futpp_close) = (0, 0);
    let mut rows = Vec::new();
    for seed in SEEDS {
        let rig = lm_rig(seed);
        let setup = AbsDiffSetup {
            store: &rig.store,
            traj: &rig.traj,
            model: &rig.model,
            corpus: &rig.corpus,
            eval_set: &rig.corpus.validation,
        };
        let reports = absdiff_eval(
            &setup,
            10,
            &[EstimatorMode::Fut, EstimatorMode::FutPlusPlus],
            &EstimatorConfig::default(),
            seed,
        )
        .unwrap();
        let (fut, futpp, random) = (reports[0].absdiff, reports[1].absdiff, reports[2].absdiff);
        fut_wins += (fut < random) as usize;
        futpp_close += (futpp <= 1.1 * fut) as usize;
        rows.push(format!("[{fut:.4} {futpp:.4} {random:.4}]"));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        fut_wins >= 4 && futpp_close >= 3 && secs < 900.0,
        format!(
            "FUT<Random on {fut_wins}/5, FUT++<=1.1·FUT on {futpp_close}/5; AbsDiff fut/futpp/random {}; {secs:.1}s",
            rows.join(" ")
        ),
    )
}

/// Worst relative gap between analytic and central-difference gradients on
/// `count` random coordinates.
fn gradcheck(model: &dyn DifferentiableModel, params: &ParamVector, samples: &Samples, count: usize, seed: u64) -> f64 {
    let (_, grad) = model.loss_and_grad(params, samples).unwrap();
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let i = rng.random_range(0..params.total_dim());
        let h = 1e-4 * params.values()[i].abs().max(1.0);
        let mut plus = params.clone();
        plus.values_mut()[i] += h;
        let mut minus = params.clone();
        minus.values_mut()[i] -= h;
        let numeric = (model.loss(&plus, samples).unwrap() - model.loss(&minus, samples).unwrap()) / (2.0 * h);
        let analytic = grad.values()[i];
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

fn gradient_checks() -> Outcome {
    let corpus = lm_corpus(2, 8);
    let lm = CharLm::new(corpus.vocab.size(), 8, 16, 32).unwrap();
    let lm_err = gradcheck(&lm, &lm.init_params(1), &corpus.train[0].samples, 10, 1);
    let reg = synth_regression(&RegressionSpec::new(2, 160, 4, 8)).unwrap();
    let mlp = MlpRegressor::new(4, Some(8)).unwrap();
    let mlp_err = gradcheck(&mlp, &mlp.init_params(1), &reg.train[0].samples, 10, 2);

    let quad = QuadraticModel::new(4);
    let cfg = AdamConfig { lr: 0.05, ..Default::default() };
    let traj = train_reference(&quad, &reg, &Permutation::identity(8), &cfg, &quad.init_params(4)).unwrap();
    let mut h_err: f64 = 0.0;
    for t in 1..8 {
        for b in &reg.train {
            let now = quad.loss_and_grad(traj.theta(t), &b.samples).unwrap().1;
            let prev = quad.loss_and_grad(traj.theta(t - 1), &b.samples).unwrap().1;
            let h = difference_quotient(now.values(), prev.values(), traj.theta(t).values(), traj.theta(t - 1).values());
            h_err = h.iter().map(|x| (x - 1.0).abs()).fold(h_err, f64::max);
        }
    }
    outcome(
        lm_err <= 1e-5 && mlp_err <= 1e-5 && h_err <= 1e-10,
        format!("char LM {lm_err:.1e}, MLP {mlp_err:.1e}, quadratic curvature error {h_err:.1e}"),
    )
}

fn adam_oracles() -> Outcome {
    let cfg = AdamConfig { lr: 0.1, ..Default::default() };
    let theta = ParamVector::from_slice("w", &[0.0]);
    let grad = ParamVector::from_slice("w", &[1.0]);
    let (p1, s1) = adam_step(&theta, &AdamState::new(&theta), &grad, &cfg).unwrap();
    let expected = -0.1 / (1.0 + cfg.eps);
    let single = (p1.values()[0] - expected).abs()
        .max((s1.m.values()[0] - 0.1).abs())
        .max((s1.v.values()[0] - 0.05).abs());

    let g = 3.0;
    let grad = ParamVector::from_slice("w", &[g]);
    let mut state = AdamState::new(&theta);
    let mut params = theta.clone();
    let mut constant: f64 = 0.0;
    for _ in 0..2 {
        let (next, s) = adam_step(&params, &state, &grad, &cfg).unwrap();
        let gamma = (params.values()[0] - next.values()[0]) / cfg.lr;
        constant = constant.max((gamma - g / (g + cfg.eps)).abs());
        params = next;
        state = s;
    }

    let zero = ParamVector::from_slice("w", &[0.0]);
    let start = ParamVector::from_slice("w", &[0.7]);
    let mut p = start.clone();
    let mut s = AdamState::new(&p);
    for _ in 0..5 {
        (p, s) = adam_step(&p, &s, &zero, &cfg).unwrap();
    }
    let still = p == start;
    outcome(
        single <= 1e-12 && constant <= 1e-12 && still,
        format!("single step {single:.1e}, constant gradient {constant:.1e}, zero gradient fixed point {still}"),
    )
}

fn jl_projection() -> Outcome {
    let (n, d2, eps) = (64, 1024, 0.5);
    let k = jl_min_dim(n, eps);
    let mut rng = rng_from_seed(21);
    let m = DMatrix::from_fn(n, d2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let spec = ProjectionSpec::new(d2, k, 5).unwrap();
    let p = project(&m, &spec).unwrap();
    let (mut kept, mut pairs) = (0, 0);
    for i in 0..n {
        for j in i + 1..n {
            let before = (m.row(i) - m.row(j)).norm_squared();
            let after = (p.row(i) - p.row(j)).norm_squared();
            pairs += 1;
            kept += ((1.0 - eps) * before <= after && after <= (1.0 + eps) * before) as usize;
        }
    }
    let frac = kept as f64 / pairs as f64;
    let square = ProjectionSpec::new(d2, d2, 6).unwrap();
    let back = recover(&project(&m, &square).unwrap(), &square).unwrap();
    let err = relative_frobenius_error(m.as_slice(), back.as_slice());
    outcome(
        frac >= 0.95 && err <= 1e-6,
        format!("k={k}, {:.1}% of pairs within (1±{eps}), square roundtrip error {err:.1e}", 100.0 * frac),
    )
}

fn ga_effectiveness() -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut rows = Vec::new();
    for seed in SEEDS {
        let rig = lm_rig(seed);
        let val = &rig.corpus.validation;
        let oracle = |p: &Permutation| {
            let theta = train_final(&rig.model, &rig.corpus, p, &rig.traj.config, rig.traj.theta(0)).unwrap();
            evaluate(&rig.model, &theta, val).unwrap().metric()
        };
        let ga = GaConfig { population: 8, generations: 8, seed, ..Default::default() };
        let res = ga_search(&rig.store, &rig.traj, &rig.model, val, &ga, &EstimatorConfig::default()).unwrap();
        let best = oracle(&res.best);
        let mut rng = rng_from_seed(sub_seed(seed, "random-orders"));
        let random: Vec<f64> = (0..10).map(|_| oracle(&Permutation::random(8, &mut rng))).collect();
        let median = stats::median(&random);
        wins += (best <= median) as usize;
        rows.push(format!("[{best:.4} vs {median:.4}]"));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        wins >= 4 && secs < 1200.0,
        format!("GA best <= random median on {wins}/5 {}; {secs:.1}s", rows.join(" ")),
    )
}

fn memorization_fidelity() -> Outcome {
    let rig = lm_rig(0);
    let setup = PinningSetup { traj: &rig.traj, model: &rig.model, corpus: &rig.corpus };
    let est = memorization_heatmap(
        &setup,
        Source::Estimated { store: &rig.store, config: EstimatorConfig::default() },
        3,
        0,
    )
    .unwrap();
    let oracle = memorization_heatmap(&setup, Source::Oracle, 3, 0).unwrap();
    let r = stats::pearson(&est.flattened(), &oracle.flattened());
    let recency = oracle.recency();
    outcome(r > 0.8 && recency < 0.0, format!("Pearson {r:.3}, oracle recency {recency:.3}"))
}

fn speedup() -> Outcome {
    let n = 50;
    let t0 = Instant::now();
    let rig = lm_rig(0);
    let build = t0.elapsed().as_secs_f64();
    let mut rng = rng_from_seed(8);
    let perms: Vec<Permutation> = (0..n).map(|_| Permutation::random(8, &mut rng)).collect();
    let t0 = Instant::now();
    for p in &perms {
        estimate_final(&rig.store, &rig.traj, p, &EstimatorConfig::default()).unwrap();
    }
    let est = t0.elapsed().as_secs_f64() / n as f64;
    let t0 = Instant::now();
    for p in &perms {
        train_final(&rig.model, &rig.corpus, p, &rig.traj.config, rig.traj.theta(0)).unwrap();
    }
    let retrain = t0.elapsed().as_secs_f64() / n as f64;
    let amortized = build / n as f64 + est;
    outcome(
        amortized < retrain,
        format!("amortized {:.2}ms vs retrain {:.2}ms per order", 1e3 * amortized, 1e3 * retrain),
    )
}

fn max_gap(a: &ParamVector, b: &ParamVector) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rejects(bytes: &[u8], decode: impl Fn(&[u8]) -> bool) -> bool {
    let mut flipped = bytes.to_vec();
    flipped[bytes.len() / 2] ^= 0x40;
    decode(&flipped) && decode(&bytes[..bytes.len() - 7])
}

fn persistence() -> Outcome {
    let corpus = lm_corpus(4, 4);
    let model = CharLm::new(corpus.vocab.size(), 8, 16, 32).unwrap();
    let traj = train_reference(&model, &corpus, &Permutation::identity(4), &AdamConfig::default(), &model.init_params(1)).unwrap();
    let store = build_store(&traj, &model, &corpus, &StoreOptions::default()).unwrap();

    let cbytes = encode_corpus(&corpus, "d");
    let corpus_ok = decode_corpus(&cbytes).unwrap().value == corpus;
    let tbytes = encode_trajectory(&traj, "d").unwrap();
    let back = decode_trajectory(&tbytes).unwrap().value;
    let mut gap: f64 = 0.0;
    for (a, b) in back.checkpoints.iter().zip(&traj.checkpoints).chain(back.grads.iter().zip(&traj.grads)) {
        gap = gap.max(max_gap(a, b));
    }
    let sbytes = encode_store(&store, "d");
    let loaded = decode_store(&sbytes).unwrap().value;
    for t in 0..4 {
        for l in 0..4 {
            let (a, b) = (store.entry(t, l).unwrap(), loaded.entry(t, l).unwrap());
            for (x, y) in a.quantities().zip(b.quantities()) {
                gap = gap.max(max_gap(x, y));
            }
        }
    }
    let corrupt = |r: Result<(), Error>| matches!(r, Err(Error::Corrupt(_)));
    let rejected = rejects(&cbytes, |b| corrupt(decode_corpus(b).map(|_| ())))
        && rejects(&tbytes, |b| corrupt(decode_trajectory(b).map(|_| ())))
        && rejects(&sbytes, |b| corrupt(decode_store(b).map(|_| ())));
    outcome(
        corpus_ok && gap <= 1e-9 && rejected,
        format!("corpus equal {corpus_ok}, max value gap {gap:.1e}, corruption rejected {rejected}"),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("identity-order exactness", identity_exactness),
        ("estimator beats random", estimator_beats_random),
        ("gradient and curvature checks", gradient_checks),
        ("adam correctness", adam_oracles),
        ("jl projection", jl_projection),
        ("ga effectiveness", ga_effectiveness),
        ("memorization fidelity", memorization_fidelity),
        ("speedup", speedup),
        ("persistence integrity", persistence),
    ];
    let filter = std::env::args().nth(1).filter(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if filter.as_ref().is_some_and(|f| *f != id) {
            continue;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += (!result.pass) as usize;
        println!(
            "criterion {id:>2} {name}: {} ({}; {:.1}s)",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    if filter.is_none() {
        let total = start.elapsed().as_secs_f64();
        let pass = total < 3600.0;
        failed += (!pass) as usize;
        println!(
            "criterion 10 headless battery: {} (all criteria in one command, {total:.1}s)",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
