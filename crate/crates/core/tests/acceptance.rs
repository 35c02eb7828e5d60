//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use minshap::baselines::{lasso_path, soft_threshold};
use minshap::learners::EvalMode;
use minshap::perm::{sample_permutations, PermutationPlan};
use minshap::seltest::{
    adjusted_pvalues, max_p, minshap_threshold, pcht_pvalue, recommend_k, run_all_tests, PchtMethod,
};
use minshap::shapley::{build_vi_matrix, reduce_stats, ShapleyEngine};
use minshap::simbench::{
    confusion_metrics, generate, jaccard_stability, run_experiment, BenchConfig, BenchResult, GroundTruth, Method,
    SimConfig, SimModel,
};
use minshap::{Dataset, LearnerSpec, RngStream, TreeParams};

const ALPHA: f64 = 0.05;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn ridge() -> LearnerSpec {
    LearnerSpec::ridge(1e-8)
}

fn chain(n: usize, seed: u64) -> Dataset {
    generate(&SimConfig::new(SimModel::Chain, n, seed), &RngStream::new(seed))
        .expect("chain data")
        .0
}

fn rng(seed: u64) -> ChaCha8Rng {
    RngStream::new(seed).generator()
}

// Exhaustive orderings of three features in lexicographic order and their exact contributions.
const TABLE: [[f64; 3]; 6] = [
    [1.0, 1.0, 1.0],
    [1.0, 0.0, 2.0],
    [0.0, 2.0, 1.0],
    [0.0, 2.0, 1.0],
    [0.0, 0.0, 3.0],
    [0.0, 0.0, 3.0],
];

fn chain_table() -> Outcome {
    let start = Instant::now();
    let d = chain(100_000, 2026);
    let plan = PermutationPlan::exhaustive(3).expect("plan");
    let m = build_vi_matrix(&d, &ridge(), &plan, &RngStream::new(2026)).expect("matrix");
    let stats = reduce_stats(&m).expect("stats");
    let secs = start.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    for (k, row) in TABLE.iter().enumerate() {
        for (j, &want) in row.iter().enumerate() {
            worst = worst.max((m.vi(j)[k] - want).abs());
        }
    }
    let want = [1.0 / 3.0, 5.0 / 6.0, 11.0 / 6.0];
    let mean_err = (0..3).map(|j| (stats.phi_mean[j] - want[j]).abs()).fold(0.0, f64::max);
    outcome(
        worst <= 0.05 && mean_err <= 0.05 && secs < 30.0,
        format!("max |VI - table| {worst:.4}, max |mean - exact| {mean_err:.4}, {secs:.2}s"),
    )
}

fn chain_selection() -> Outcome {
    let plan = PermutationPlan::exhaustive(3).expect("plan");
    let mut exact = 0;
    let mut misses = Vec::new();
    for seed in 0..20u64 {
        let d = chain(100_000, 100 + seed);
        let m = build_vi_matrix(&d, &ridge(), &plan, &RngStream::new(seed)).expect("matrix");
        let recs = run_all_tests(&reduce_stats(&m).expect("stats"), &m, ALPHA, 6).expect("tests");
        let sel: Vec<usize> = recs.iter().filter(|r| r.decisions.minshap).map(|r| r.feature).collect();
        if sel == [2] {
            exact += 1;
        } else {
            misses.push(format!("seed {seed}: {sel:?}"));
        }
    }
    outcome(exact >= 19, format!("exactly {{X3}} in {exact}/20 seeds {misses:?}"))
}

fn random_dataset(seed: u64) -> Dataset {
    let mut g = rng(seed);
    let n = g.random_range(30..200);
    let p = g.random_range(1..6);
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| g.random_range(-3.0..3.0)).collect())
        .collect();
    let y = (0..n)
        .map(|i| {
            cols.iter()
                .enumerate()
                .map(|(j, c)| (j as f64 + 0.5) * c[i].sin())
                .sum::<f64>()
                + g.random_range(-1.0..1.0)
        })
        .collect();
    Dataset::new(cols, minshap::data::default_names(p), y).expect("dataset")
}

fn telescoping() -> Outcome {
    let trees = LearnerSpec::boosted_trees(TreeParams {
        n_trees: 25,
        ..Default::default()
    });
    let mut cases = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..60u64 {
        let d = random_dataset(seed);
        for spec in [ridge(), trees.clone()] {
            let engine = ShapleyEngine::new(&d, &spec, &RngStream::new(seed)).expect("engine");
            let gap = engine.null_mse().expect("null") - engine.full_mse().expect("full");
            let plan = sample_permutations(d.p(), 4, &RngStream::new(seed + 1)).expect("plan");
            for perm in plan.perms() {
                let (vi, _) = engine.evaluate(perm).expect("evaluate");
                worst = worst.max((vi.iter().sum::<f64>() - gap).abs());
                cases += 1;
            }
        }
    }
    outcome(worst <= 1e-10, format!("{cases} orderings, max deviation {worst:.2e}"))
}

/// Model (a) at desk scale, shared by the efficiency comparison.
fn desk_scale_run() -> BenchResult {
    let mut cfg = BenchConfig::new(
        SimConfig::new(SimModel::A, 3000, 1),
        vec![
            Method::Minshap,
            Method::Maxp,
            Method::LassoStability,
            Method::LocoStability,
        ],
        20,
    );
    cfg.k = 50;
    cfg.alpha = ALPHA;
    cfg.learner = LearnerSpec::default().with_eval_mode(EvalMode::Dropout);
    run_experiment(&cfg, &RngStream::new(1)).expect("desk-scale experiment")
}

fn desk_scale_model_a(r: &BenchResult) -> Outcome {
    let ms = r.summary(Method::Minshap).expect("minshap");
    let mp = r.summary(Method::Maxp).expect("maxp");
    let f1 = ms.metrics["f1"].0;
    let t1 = ms.metrics["type1"].0;
    let f1_maxp = mp.metrics["f1"].0;
    // the matrix is shared, so MinShap's recorded time covers Max-p as well
    let secs: f64 = r.records_for(Method::Minshap).map(|x| x.runtime_secs).sum();
    let pass = ms.reps_ok == 20 && f1 >= 0.90 && t1 <= 0.10 && (f1_maxp - f1).abs() <= 0.05 && secs <= 600.0;
    outcome(
        pass,
        format!("MinShap F1 {f1:.3} type I {t1:.3}; Max-p F1 {f1_maxp:.3}; 20 reps in {secs:.1}s"),
    )
}

fn null_calibration() -> Outcome {
    let mut cfg = BenchConfig::new(
        SimConfig::new(SimModel::Null, 2000, 5),
        vec![Method::Minshap, Method::Maxp, Method::Gcm],
        500,
    );
    cfg.k = 50;
    cfg.alpha = ALPHA;
    cfg.learner = ridge();
    let r = run_experiment(&cfg, &RngStream::new(5)).expect("null experiment");
    let mut pass = true;
    let mut parts = Vec::new();
    for m in [Method::Minshap, Method::Maxp, Method::Gcm] {
        let s = r.summary(m).expect("summary");
        let rate = s.metrics["type1"].0;
        pass &= s.reps_ok == 500 && rate <= ALPHA + 0.03;
        parts.push(format!("{} {rate:.4}", m.name()));
    }
    outcome(pass, format!("per-feature rejection rates: {}", parts.join(", ")))
}

fn fuzz_pvalues(g: &mut ChaCha8Rng) -> Vec<f64> {
    let k = g.random_range(1..=30);
    (0..k)
        .map(|_| {
            if g.random_bool(0.5) {
                g.random_range(0.0..0.1)
            } else {
                g.random_range(0.0..1.0)
            }
        })
        .collect()
}

fn pcht_identities() -> Outcome {
    let mut g = rng(6);
    let (mut holm_agree, mut raw_agree, mut implication, mut monotone) = (0, 0, 0, 0);
    let cases = 10_000;
    for _ in 0..cases {
        let p = fuzz_pvalues(&mut g);
        let k = p.len();
        let z: Vec<f64> = (0..k).map(|_| g.random_range(-4.0..4.0)).collect();
        let maxp_reject = max_p(&p).expect("max p") < ALPHA;
        let adj = adjusted_pvalues(&p, &z);
        let holm_reject = adj.bonferroni[k - 1] < ALPHA;
        holm_agree += usize::from(holm_reject == maxp_reject);
        raw_agree +=
            usize::from((pcht_pvalue(PchtMethod::Bonferroni, &p, &z, k).expect("pcht") < ALPHA) == maxp_reject);
        implication += usize::from(!holm_reject || maxp_reject);
        let mono = PchtMethod::ALL
            .iter()
            .all(|&m| adj.get(m).windows(2).all(|w| w[0] <= w[1]));
        monotone += usize::from(mono);
    }
    outcome(
        holm_agree == cases && monotone == cases,
        format!(
            "Holm-Bonferroni@K agrees with Max-p {holm_agree}/{cases}; raw Bonferroni@K agrees {raw_agree}/{cases}; \
             Holm reject implies Max-p reject {implication}/{cases}; Holm monotone {monotone}/{cases}"
        ),
    )
}

/// Upper tail of the standard normal by composite Simpson integration of the density.
fn simpson_two_sided(z: f64) -> f64 {
    let a = z.abs();
    let steps = 20_000;
    let h = a / steps as f64;
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = phi(0.0) + phi(a);
    for i in 1..steps {
        s += phi(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    (1.0 - 2.0 * s * h / 3.0).max(0.0)
}

fn closed_form_oracles() -> Outcome {
    let mut g = rng(7);
    let n = 200;
    let mut worst = [0.0f64; 5];
    let mut k_mismatch = 0;
    for _ in 0..n {
        // threshold: bisection on exp(-t^2 / (2 s2)) = alpha
        let s2 = g.random_range(0.0..2.0);
        let alpha = g.random_range(0.001..0.999);
        let (mut lo, mut hi) = (0.0f64, 100.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (-mid * mid / (2.0 * s2)).exp() > alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        worst[0] = worst[0].max((minshap_threshold(s2, alpha).expect("threshold") - 0.5 * (lo + hi)).abs());

        // recommended K: repeated multiplication until the failure bound drops below eps
        let s = g.random_range(0..40usize);
        let eps = g.random_range(0.001..0.5);
        let mut k = 1;
        if s > 0 {
            let q = s as f64 / (s as f64 + 1.0);
            let mut bound = q;
            while bound > eps {
                bound *= q;
                k += 1;
            }
        }
        k_mismatch += usize::from(recommend_k(s, eps).expect("recommend") != k);

        // Fisher over the K-u+1 largest p-values: even-dof chi-square tail in closed form
        let mut p: Vec<f64> = (0..g.random_range(1..12)).map(|_| g.random_range(1e-6..1.0)).collect();
        let kk = p.len();
        let u = g.random_range(1..=kk);
        let z = vec![0.0; kk];
        let got = pcht_pvalue(PchtMethod::Fisher, &p, &z, u).expect("fisher");
        p.sort_by(f64::total_cmp);
        let half: f64 = p[u - 1..].iter().map(|v| -v.ln()).sum();
        let m = kk - u + 1;
        let mut term = 1.0;
        let mut tail = 1.0;
        for i in 1..m {
            term *= half / i as f64;
            tail += term;
        }
        worst[2] = worst[2].max((got - (-half).exp() * tail).abs());

        // Stouffer over the K-u+1 smallest |z|
        let zs: Vec<f64> = (0..kk).map(|_| g.random_range(-3.0..3.0)).collect();
        let got = pcht_pvalue(PchtMethod::Stouffer, &vec![0.5; kk], &zs, u).expect("stouffer");
        let mut abs: Vec<f64> = zs.iter().map(|v| v.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let stat = abs[..m].iter().sum::<f64>() / (m as f64).sqrt();
        worst[3] = worst[3].max((got - simpson_two_sided(stat)).abs());

        // soft threshold against the closed form, and a lasso solve on an orthonormal design
        let rho: f64 = g.random_range(-3.0..3.0);
        let lam = g.random_range(0.0..2.0);
        let closed = rho.signum() * (rho.abs() - lam).max(0.0);
        worst[4] = worst[4].max((soft_threshold(rho, lam) - closed).abs());
        let cols = vec![
            vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0],
            vec![1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0],
            vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0],
        ];
        let y: Vec<f64> = (0..8).map(|_| g.random_range(-2.0..2.0)).collect();
        let d = Dataset::new(cols.clone(), minshap::data::default_names(3), y.clone()).expect("design");
        let path = lasso_path(&d, Some(&[lam])).expect("lasso");
        let ybar = y.iter().sum::<f64>() / 8.0;
        for (j, col) in cols.iter().enumerate() {
            let rho_j = col.iter().zip(&y).map(|(x, v)| x * (v - ybar)).sum::<f64>() / 8.0;
            let want = rho_j.signum() * (rho_j.abs() - lam).max(0.0);
            worst[4] = worst[4].max((path.coefs[0][j] - want).abs());
        }
    }
    worst[1] = k_mismatch as f64;
    let pass = worst.iter().all(|&w| w <= 1e-9);
    outcome(
        pass,
        format!(
            "{n} inputs each; max error threshold {:.1e}, recommend_K mismatches {k_mismatch}, Fisher {:.1e}, Stouffer {:.1e}, soft-threshold/lasso {:.1e}",
            worst[0], worst[2], worst[3], worst[4]
        ),
    )
}

fn recommend_k_value() -> Outcome {
    let k = recommend_k(8, 0.05).expect("recommend");
    outcome(k == 26, format!("recommend_K(8, 0.05) = {k}"))
}

fn random_set(g: &mut ChaCha8Rng, p: usize) -> Vec<usize> {
    let density = g.random_range(0.0..1.0);
    (0..p).filter(|_| g.random_bool(density)).collect()
}

fn set_metrics() -> Outcome {
    let mut g = rng(9);
    let mut conf_ok = 0;
    let mut jac_ok = 0;
    let cases = 1000;
    for _ in 0..cases {
        let p = g.random_range(1..40);
        let sel = random_set(&mut g, p);
        let truth = random_set(&mut g, p);
        let m = confusion_metrics(&sel, &GroundTruth { support: truth.clone() }, p).expect("metrics");
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for j in 0..p {
            match (sel.contains(&j), truth.contains(&j)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let want = [
            (tp + tn) as f64 / p as f64,
            ratio(2 * tp, 2 * tp + fp + fn_),
            ratio(fp, fp + tn),
            ratio(fn_, tp + fn_),
            fp as f64 / (tp + fp).max(1) as f64,
        ];
        let got = [m.accuracy, m.f1, m.type1, m.type2, m.fdr];
        conf_ok += usize::from(got == want && (m.tp, m.fp, m.fn_, m.tn) == (tp, fp, fn_, tn));

        let count = g.random_range(2..8);
        let sets: Vec<Vec<usize>> = (0..count).map(|_| random_set(&mut g, p)).collect();
        let mut total = 0.0;
        for a in 0..count {
            for b in a + 1..count {
                let mut inter = 0;
                let mut union = 0;
                for j in 0..p {
                    let (x, y) = (sets[a].contains(&j), sets[b].contains(&j));
                    inter += usize::from(x && y);
                    union += usize::from(x || y);
                }
                total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
            }
        }
        let want = 2.0 * total / (count * (count - 1)) as f64;
        let mut shuffled = sets.clone();
        shuffled.reverse();
        let got = jaccard_stability(&sets).expect("jaccard");
        jac_ok += usize::from(
            got == want
                && (jaccard_stability(&shuffled).expect("jaccard") - got).abs() < 1e-12
                && (0.0..=1.0).contains(&got),
        );
    }
    outcome(
        conf_ok == cases && jac_ok == cases,
        format!("confusion metrics exact {conf_ok}/{cases}, Jaccard exact {jac_ok}/{cases}"),
    )
}

fn stability_comparison(r: &BenchResult) -> Outcome {
    let fdr = r.summary(Method::LassoStability).expect("lasso-stability").metrics["fdr"].0;
    let ms: Vec<f64> = r.records_for(Method::Minshap).map(|x| x.runtime_secs).collect();
    let loco: Vec<f64> = r.records_for(Method::LocoStability).map(|x| x.runtime_secs).collect();
    let faster = ms.iter().zip(&loco).filter(|(a, b)| a < b).count();
    let (ms_total, loco_total): (f64, f64) = (ms.iter().sum(), loco.iter().sum());
    outcome(
        fdr <= 0.1 && ms.len() == 20 && loco.len() == 20 && faster >= 18,
        format!(
            "Lasso-stability FDR {fdr:.3}; MinShap faster than LOCO-stability in {faster}/20 seeds \
             (totals {ms_total:.1}s vs {loco_total:.1}s)"
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, run: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!(
            "criterion {id:>2} [{status}] {name}: {} ({:.1}s)",
            o.detail,
            start.elapsed().as_secs_f64()
        );
    };
    report(1, "chain DAG contribution table", &chain_table);
    report(2, "MinShap selects only X3 on the chain DAG", &chain_selection);
    report(3, "telescoping efficiency", &telescoping);
    report(6, "PCHT identities", &pcht_identities);
    report(7, "closed-form oracles", &closed_form_oracles);
    report(8, "recommended K", &recommend_k_value);
    report(9, "set metrics against brute force", &set_metrics);
    report(5, "null calibration", &null_calibration);
    let desk = desk_scale_run();
    report(4, "desk-scale model (a)", &|| desk_scale_model_a(&desk));
    report(10, "stability-selection comparison", &|| stability_comparison(&desk));
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
