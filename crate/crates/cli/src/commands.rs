//! Subcommand implementations.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use minshap::learners::{value, EvalMode};
use minshap::rng::tags;
use minshap::seltest::{run_all_tests, screen_u, Tuning};
use minshap::shapley::reduce_stats;
use minshap::simbench::{generate, run_baseline, run_experiment, BenchConfig, Method};
use minshap::{
    sample_permutations, Dataset, FitSession, LearnerSpec, PchtMethod, PermutationPlan, RngStream, ShapleyEngine,
    VIMatrix,
};
use serde::Serialize;

use crate::config::{ConfigEcho, Opts};
use crate::report::{
    BenchReport, FeatureStats, MatrixDump, Metadata, NamedRecord, SelectionReport, ShapleyReport, TruthReport,
    SCHEMA_VERSION,
};
use crate::CliError;

/// Response column written by `simulate`.
const SIM_RESPONSE: &str = "y";
/// Held-out fraction used to screen u when the learner itself evaluates in-sample.
const TUNING_HOLDOUT: f64 = 0.3;

pub fn run(command: &'static str, opts: Opts) -> Result<(), CliError> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        if w == 0 {
            return Err(CliError::Config("--workers must be >= 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match command {
        "select" => select(&opts),
        "shapley" => shapley(&opts),
        "simulate" => simulate(&opts),
        "bench" => bench(&opts),
        other => unreachable!("unknown command {other}"),
    })
}

/// Stream for one run on one dataset. Matches benchmark replicate 0 with the same seed,
/// so `simulate` followed by `select` reproduces a single-replicate `bench`.
fn run_stream(seed: u64) -> RngStream {
    RngStream::new(seed).child(tags::REPLICATION, 0)
}

fn shapley_stream(seed: u64) -> RngStream {
    run_stream(seed).child(tags::METHOD, 100)
}

fn echo(command: &'static str, opts: &Opts, seed: u64, k: Option<usize>) -> Result<ConfigEcho, CliError> {
    Ok(ConfigEcho {
        command,
        input: opts.input.as_deref().map(display),
        response: opts.response.clone(),
        perms_file: opts.perms_file.as_deref().map(display),
        from_matrix: opts.from_matrix.as_deref().map(display),
        learner: None,
        k,
        alpha: opts.alpha()?,
        tests: Vec::new(),
        u: None,
        u_range: None,
        baselines: Vec::new(),
        methods: Vec::new(),
        sim: None,
        reps: None,
        seed,
        workers: rayon::current_num_threads(),
    })
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn load_data(opts: &Opts) -> Result<Dataset, CliError> {
    let input = opts
        .input
        .as_deref()
        .ok_or_else(|| CliError::Config("--input is required".into()))?;
    let response = opts
        .response
        .as_deref()
        .ok_or_else(|| CliError::Config("--response is required".into()))?;
    Ok(Dataset::read_csv(input, response)?)
}

/// Parses one ordering per non-empty line; entries are feature names or 0-based indices.
fn read_perms(path: &Path, names: &[String]) -> Result<PermutationPlan, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        context: format!("cannot read {}", path.display()),
        source: e,
    })?;
    let mut perms = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let perm = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                names
                    .iter()
                    .position(|n| n == t)
                    .or_else(|| t.parse::<usize>().ok())
                    .ok_or_else(|| {
                        minshap::Error::Data {
                            row: line_no + 1,
                            column: "ordering".into(),
                            message: format!("unknown feature {t:?}"),
                        }
                        .into()
                    })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        perms.push(perm);
    }
    Ok(PermutationPlan::explicit(names.len(), perms)?)
}

fn plan_for(opts: &Opts, data: &Dataset, seed: u64) -> Result<PermutationPlan, CliError> {
    match &opts.perms_file {
        Some(path) => read_perms(path, data.feature_names()),
        None => Ok(sample_permutations(
            data.p(),
            opts.k()?,
            &shapley_stream(seed).child(tags::PERMUTATIONS, 0),
        )?),
    }
}

fn build_matrix(opts: &Opts, data: &Dataset, spec: &LearnerSpec, seed: u64) -> Result<VIMatrix, CliError> {
    let plan = plan_for(opts, data, seed)?;
    let engine = ShapleyEngine::new(data, spec, &shapley_stream(seed).child(tags::FIT, 0))?;
    Ok(engine.build(&plan)?)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io {
        context: format!("cannot create {}", path.display()),
        source: e,
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    let io = |e: std::io::Error, what: &str| CliError::Io {
        context: format!("cannot write {what}"),
        source: e,
    };
    match path {
        Some(p) => {
            let mut w = create(p)?;
            serde_json::to_writer_pretty(&mut w, value).map_err(minshap::Error::from)?;
            writeln!(w).and_then(|()| w.flush()).map_err(|e| io(e, &display(p)))
        }
        None => {
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, value).map_err(minshap::Error::from)?;
            writeln!(out).map_err(|e| io(e, "stdout"))
        }
    }
}

fn select(opts: &Opts) -> Result<(), CliError> {
    let start = Instant::now();
    let seed = opts.seed()?;
    let alpha = opts.alpha()?;
    let tests = opts.tests()?;
    let baselines = opts.baselines()?;
    let data = match (&opts.from_matrix, &opts.input) {
        (Some(_), None) => None,
        _ => Some(load_data(opts)?),
    };
    let spec = opts.learner()?;

    let (matrix, names) = match &opts.from_matrix {
        Some(path) => {
            let file = File::open(path).map_err(|e| CliError::Io {
                context: format!("cannot open {}", path.display()),
                source: e,
            })?;
            let (m, names) = VIMatrix::read_csv(file)?;
            if opts.k.is_some_and(|k| k != m.k()) {
                return Err(CliError::Config(format!(
                    "--K disagrees with the matrix, which has K = {}",
                    m.k()
                )));
            }
            if let Some(d) = &data {
                if d.feature_names() != names.as_slice() {
                    return Err(CliError::Config("matrix features differ from the input columns".into()));
                }
            }
            (m, names)
        }
        None => {
            let d = data.as_ref().expect("data loaded when no matrix is given");
            (build_matrix(opts, d, &spec, seed)?, d.feature_names().to_vec())
        }
    };
    let k = matrix.k();
    let stats = reduce_stats(&matrix)?;
    let mut records = run_all_tests(&stats, &matrix, alpha, k)?;

    // one u per requested partial-conjunction test
    let fixed_u = opts.fixed_u(k)?;
    let range = opts.u_range(k)?;
    let pcht: Vec<PchtMethod> = tests.iter().filter_map(|t| t.pcht()).collect();
    let tuning = tuning_spec(&spec);
    let session = match (&data, fixed_u, pcht.is_empty()) {
        (_, Some(_), _) | (_, None, true) => None,
        (Some(d), None, false) => Some(FitSession::new(&tuning, d, &run_stream(seed).child(tags::TUNING, 0))?),
        (None, None, false) => {
            return Err(CliError::Config(
                "screening u needs --input and --response; otherwise pass --u".into(),
            ))
        }
    };
    // held-out loss per selected set, shared across tests
    let losses: RefCell<HashMap<Vec<usize>, f64>> = RefCell::default();
    let loss = |sel: &[usize]| -> minshap::Result<f64> {
        if let Some(&l) = losses.borrow().get(sel) {
            return Ok(l);
        }
        let (session, d) = (session.as_ref().expect("session"), data.as_ref().expect("data"));
        let l = value(&session.fit(sel)?, d)?.0;
        losses.borrow_mut().insert(sel.to_vec(), l);
        Ok(l)
    };
    let mut u_map = BTreeMap::new();
    for m in pcht {
        let u = match fixed_u {
            Some(u) => u,
            None => {
                let (lo, hi) = range.unwrap_or((((0.6 * k as f64).ceil() as usize).max(1), k));
                let adjusted: Vec<Vec<f64>> = records.iter().map(|r| r.adjusted.get(m).to_vec()).collect();
                screen_u(&adjusted, lo..=hi, Tuning::HeldOut(&loss), alpha)?
            }
        };
        for r in &mut records {
            let reject = r.adjusted_at(m, u) < alpha;
            match m {
                PchtMethod::Bonferroni => r.decisions.bonferroni = reject,
                PchtMethod::Stouffer => r.decisions.stouffer = reject,
                PchtMethod::Fisher => r.decisions.fisher = reject,
            }
        }
        u_map.insert(pcht_method(m).name().to_string(), u);
    }

    let mut selected = BTreeMap::new();
    for &t in &tests {
        let chosen = records
            .iter()
            .filter(|r| match t {
                Method::Minshap => r.decisions.minshap,
                Method::Maxp => r.decisions.maxp,
                m => r.decisions.pcht(m.pcht().expect("shapley test")),
            })
            .map(|r| names[r.feature].clone())
            .collect();
        selected.insert(t.name().to_string(), chosen);
    }

    let mut baseline_results = BTreeMap::new();
    if !baselines.is_empty() {
        let data = data
            .as_ref()
            .ok_or_else(|| CliError::Config("--baselines needs --input and --response".into()))?;
        let stability = Default::default();
        for &b in &baselines {
            let rng = run_stream(seed).child(tags::METHOD, b as u64);
            let r = run_baseline(b, data, &spec, alpha, 5, &stability, &rng)?;
            selected.insert(
                b.name().to_string(),
                r.selected.iter().map(|&j| names[j].clone()).collect(),
            );
            baseline_results.insert(b.name().to_string(), r);
        }
    }

    let vi_matrix = opts.dump_matrix.then(|| MatrixDump {
        perms: matrix.plan().perms().to_vec(),
        vi: (0..matrix.p()).map(|j| matrix.vi(j).to_vec()).collect(),
        sigma2: (0..matrix.p()).map(|j| matrix.sigma2(j).to_vec()).collect(),
    });
    let mut config = echo("select", opts, seed, Some(k))?;
    config.learner = data.as_ref().map(|_| spec.clone());
    config.tests = tests.iter().map(|t| t.name()).collect();
    config.u = fixed_u;
    config.u_range = range;
    config.baselines = baselines.iter().map(|b| b.name()).collect();
    let report = SelectionReport {
        schema_version: SCHEMA_VERSION,
        metadata: Metadata::new(config, start.elapsed().as_secs_f64()),
        n_eval: matrix.n(),
        records: records
            .into_iter()
            .map(|record| NamedRecord {
                name: names[record.feature].clone(),
                record,
            })
            .collect(),
        features: names,
        u: u_map,
        selected,
        baselines: baseline_results,
        vi_matrix,
    };
    write_json(opts.output.as_deref(), &report)
}

/// Spec for screening u: refit on the selected set, scored on held-out rows.
fn tuning_spec(spec: &LearnerSpec) -> LearnerSpec {
    let mut t = spec.clone().with_eval_mode(EvalMode::Refit);
    if t.holdout_fraction == 0.0 {
        t.holdout_fraction = TUNING_HOLDOUT;
    }
    t
}

fn pcht_method(m: PchtMethod) -> Method {
    match m {
        PchtMethod::Bonferroni => Method::PchtBonferroni,
        PchtMethod::Stouffer => Method::PchtStouffer,
        PchtMethod::Fisher => Method::PchtFisher,
    }
}

fn shapley(opts: &Opts) -> Result<(), CliError> {
    let start = Instant::now();
    let seed = opts.seed()?;
    let output = opts.require_output()?;
    let data = load_data(opts)?;
    let spec = opts.learner()?;
    let matrix = build_matrix(opts, &data, &spec, seed)?;
    matrix.write_csv(create(output)?, data.feature_names())?;
    let stats = reduce_stats(&matrix)?;
    let mut config = echo("shapley", opts, seed, Some(matrix.k()))?;
    config.learner = Some(spec);
    let report = ShapleyReport {
        schema_version: SCHEMA_VERSION,
        metadata: Metadata::new(config, start.elapsed().as_secs_f64()),
        n_eval: matrix.n(),
        features: (0..matrix.p())
            .map(|j| FeatureStats {
                name: data.feature_names()[j].clone(),
                phi_mean: stats.phi_mean[j],
                phi_min: stats.phi_min[j],
                sigma2_assoc: stats.sigma2_assoc[j],
                argmin_perm: stats.argmin_perm[j],
            })
            .collect(),
    };
    write_json(opts.summary.as_deref(), &report)
}

fn simulate(opts: &Opts) -> Result<(), CliError> {
    let start = Instant::now();
    let seed = opts.seed()?;
    let output = opts.require_output()?;
    let sim = opts.sim(seed)?;
    let (data, truth) = generate(&sim, &run_stream(seed).child(tags::FEATURES, 0))?;
    data.write_csv(create(output)?, SIM_RESPONSE)?;
    let mut config = echo("simulate", opts, seed, None)?;
    config.sim = Some(sim.clone());
    let report = TruthReport {
        schema_version: SCHEMA_VERSION,
        metadata: Metadata::new(config, start.elapsed().as_secs_f64()),
        model: sim.model.name(),
        n: sim.n,
        p: sim.p,
        response: SIM_RESPONSE,
        support: truth.support.iter().map(|&j| data.feature_names()[j].clone()).collect(),
    };
    write_json(opts.summary.as_deref(), &report)
}

fn bench(opts: &Opts) -> Result<(), CliError> {
    let start = Instant::now();
    let seed = opts.seed()?;
    let output = opts.require_output()?;
    let k = opts.k()?;
    let mut cfg = BenchConfig::new(opts.sim(seed)?, opts.methods()?, opts.reps.unwrap_or(5));
    cfg.alpha = opts.alpha()?;
    cfg.k = k;
    cfg.u_range = opts.u_range(k)?;
    cfg.learner = opts.learner()?;
    let result = run_experiment(&cfg, &RngStream::new(seed))?;
    result.write_csv(create(output)?)?;
    let summary: PathBuf = opts.summary.clone().unwrap_or_else(|| output.with_extension("json"));
    let mut config = echo("bench", opts, seed, Some(k))?;
    config.learner = Some(cfg.learner.clone());
    config.sim = Some(cfg.sim.clone());
    config.reps = Some(cfg.reps);
    config.methods = result.config.methods.iter().map(|m| m.name()).collect();
    config.u_range = Some(cfg.u_range());
    let report = BenchReport {
        schema_version: SCHEMA_VERSION,
        metadata: Metadata::new(config, start.elapsed().as_secs_f64()),
        result,
    };
    write_json(Some(&summary), &report)
}
