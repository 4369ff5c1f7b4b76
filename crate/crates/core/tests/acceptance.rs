//! Acceptance criteria. Prints one PASS/FAIL line per criterion followed by
//! the measured values. The process exits 0 so that failing criteria are
//! reported rather than masked; set `TFH_ACCEPTANCE_STRICT=1` to exit 1 when
//! any criterion fails. Study reports are written under the cargo temporary
//! directory for inspection.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use tfh::lambda::TOL_LAMBDA_PER_AREA;
use tfh::mse::bootstrap_generate;
use tfh::rng::{label_id, Role, StreamKey};
use tfh::simulation::{
    self, DPattern, EffectLaw, EstimationReport, ScenarioConfig, StudyKind, StudyReport, StudyResult, ZeroReport,
};
use tfh::transform::Transform;
use tfh::variance::{estimating_equation, TOL_A_PER_AREA};
use tfh::{
    eblup, fit, log_likelihood, mse_estimate, profile_score, score_lambda, BootstrapConfig, FitResult, ModelParams,
    TransformKind, VarianceMethod,
};

const SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome { pass: true, details: Vec::new() }
    }

    /// Records `value` against `[lo, hi]`.
    fn range(&mut self, name: &str, value: f64, lo: f64, hi: f64) {
        let ok = (lo..=hi).contains(&value);
        self.check(name, ok, format!("{value:.4} in [{lo}, {hi}]"));
    }

    fn check(&mut self, name: &str, ok: bool, detail: String) {
        self.pass &= ok;
        self.details.push(format!("{} {name}: {detail}", if ok { "ok  " } else { "MISS" }));
    }
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_and_save(cfg: &ScenarioConfig) -> StudyReport {
    let report = simulation::run(cfg).unwrap();
    let stem = format!("{}_{}_{}", cfg.label, cfg.file_stem(), cfg.effect_law.name());
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    fs::write(out_dir().join(format!("{stem}.csv")), csv).unwrap();
    fs::write(out_dir().join(format!("{stem}.json")), serde_json::to_vec_pretty(&report).unwrap()).unwrap();
    report
}

fn estimation(cfg: &ScenarioConfig) -> EstimationReport {
    match run_and_save(cfg).result {
        StudyResult::Estimation(r) => r,
        _ => unreachable!(),
    }
}

fn estimation_scenario() -> ScenarioConfig {
    let params = ModelParams { beta: vec![0.5, 1.0], a: 0.4, lambda: 0.6 };
    ScenarioConfig::new("estimation", 30, DPattern::A, params, 2000, SEED)
}

fn true_mse_scenario(pattern: DPattern, lambda: f64, n: usize) -> ScenarioConfig {
    let params = ModelParams { beta: vec![0.0], a: 1.0, lambda };
    let mut cfg = ScenarioConfig::new("true_mse", 30, pattern, params, n, SEED);
    cfg.study = StudyKind::TrueMse;
    cfg.mse_method = VarianceMethod::ML;
    cfg
}

fn c1(base: &EstimationReport) -> Outcome {
    let mut o = Outcome::new();
    let ml = base.cell("ML").unwrap();
    o.range("ML mean lambda", ml.lambda.mean, 0.61, 0.69);
    o.range("ML mean A", ml.a.mean, 0.40, 0.52);
    o.range("REML mean A", base.cell("REML").unwrap().a.mean, 0.34, 0.44);
    o.range("log mean A", base.cell("log").unwrap().a.mean, 0.13, 0.19);
    o
}

fn c2(normal: &EstimationReport) -> Outcome {
    let mut o = Outcome::new();
    let mut bias = vec![(ml_a(normal) - 0.4).abs()];
    for law in [EffectLaw::DoubleExponential, EffectLaw::LocationExponential] {
        // same design and streams as the normal-law run; only the law changes
        let cfg = ScenarioConfig {
            effect_law: law,
            methods: vec![VarianceMethod::ML],
            include_log: false,
            ..estimation_scenario()
        };
        let r = estimation(&cfg);
        if law == EffectLaw::LocationExponential {
            let ml = r.cell("ML").unwrap();
            o.range("LocationExponential ML mean lambda", ml.lambda.mean, 0.38, 0.52);
            o.range("LocationExponential ML mean A", ml.a.mean, 0.21, 0.33);
        }
        bias.push((ml_a(&r) - 0.4).abs());
    }
    o.check(
        "|EA - 0.4| ordering Normal < DoubleExponential < LocationExponential",
        bias[0] < bias[1] && bias[1] < bias[2],
        format!("{:.4} / {:.4} / {:.4}", bias[0], bias[1], bias[2]),
    );
    o
}

fn ml_a(r: &EstimationReport) -> f64 {
    r.cell("ML").unwrap().a.mean
}

fn c3() -> Outcome {
    let mut o = Outcome::new();
    for pattern in [DPattern::A, DPattern::B, DPattern::C] {
        for lambda in [0.2, 0.6, 1.0] {
            let cfg = true_mse_scenario(pattern.clone(), lambda, 10_000);
            let StudyResult::TrueMse(r) = run_and_save(&cfg).result else { unreachable!() };
            let gains: Vec<f64> = r.groups.iter().map(|g| g.gain_pct).collect();
            let mse: Vec<f64> = r.groups.iter().map(|g| 100.0 * g.mse_eblup).collect();
            if pattern == DPattern::A && lambda == 0.2 {
                o.range("pattern a, lambda 0.2, G1 MSE x100", mse[0], 11.9, 13.9);
                o.range("pattern a, lambda 0.2, G1 gain %", gains[0], 10.8, 16.8);
            }
            o.check(
                &format!("pattern {}, lambda {lambda}: gain monotone G1..G5", pattern.name()),
                gains.windows(2).all(|w| w[0] < w[1]),
                gains.iter().map(|g| format!("{g:.1}")).collect::<Vec<_>>().join(" "),
            );
        }
    }
    o
}

fn c4() -> Outcome {
    let mut o = Outcome::new();
    let mut cfg = true_mse_scenario(DPattern::A, 0.6, 500);
    cfg.study = StudyKind::MseEstimator;
    cfg.n_bootstrap = 300;
    let StudyResult::MseEstimator(r) = run_and_save(&cfg).result else { unreachable!() };
    for g in &r.groups {
        o.check(
            &format!("G{} relative bias", g.group + 1),
            g.rel_bias_pct.abs() < 25.0,
            format!(
                "{:+.1}% (estimate x100 {:.2}, true x100 {:.2})",
                g.rel_bias_pct,
                100.0 * g.mean_estimate,
                100.0 * g.true_mse
            ),
        );
    }
    o.details.push(format!("     datasets used {}, failed {}, unreliable {}", r.n_used, r.n_failed, r.n_unreliable));
    o
}

fn c5() -> Outcome {
    let mut o = Outcome::new();
    let cfg = ScenarioConfig {
        label: "zero_estimates".into(),
        study: StudyKind::ZeroEstimates,
        methods: vec![VarianceMethod::ML],
        zero_grid: vec![0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4],
        ..estimation_scenario()
    };
    let StudyResult::ZeroEstimates(r) = run_and_save(&cfg).result else { unreachable!() };
    let log = ZeroReport::series(&r, "log");
    let ml = ZeroReport::series(&r, "ML");
    let fmt = |s: &[(f64, f64)]| s.iter().map(|(_, z)| format!("{z:.1}")).collect::<Vec<_>>().join(" ");
    o.check("log zero % increasing", log.windows(2).all(|w| w[0].1 < w[1].1), fmt(&log));
    let above = log.iter().zip(&ml).filter(|((l, _), _)| *l >= 0.8 - 1e-12).all(|((_, zl), (_, zm))| zl > zm);
    o.check("log zero % above ML at lambda >= 0.8", above, format!("ML {}", fmt(&ml)));
    o
}

fn c6() -> Outcome {
    let mut o = Outcome::new();

    let mut worst_roundtrip = 0.0f64;
    let mut worst_derivative = 0.0f64;
    for k in 0..41 {
        let y = (-4.0 + 0.2 * k as f64).exp();
        for lambda in [0.0, 0.05, 0.3, 0.6, 1.0, 1.7, 2.5] {
            let t = Transform::dual_power(lambda).unwrap();
            worst_roundtrip = worst_roundtrip.max((t.inverse(t.h(y)) - y).abs() / y);
            if lambda > 0.0 {
                let der = t.derivatives(y).unwrap();
                let s = 1e-5;
                let fd_y = (t.h(y * (1.0 + s)) - t.h(y * (1.0 - s))) / (2.0 * s * y);
                let at = |l: f64| Transform::dual_power(l).unwrap().h(y);
                let fd_l = (at(lambda + s) - at(lambda - s)) / (2.0 * s);
                let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
                worst_derivative = worst_derivative.max(rel(fd_y, der.h_y)).max(rel(fd_l, der.h_lambda));
            }
        }
    }
    o.check("transform roundtrip", worst_roundtrip < 1e-10, format!("max rel error {worst_roundtrip:.1e}"));
    o.check("transform derivatives", worst_derivative < 1e-6, format!("max FD gap {worst_derivative:.1e}"));

    let base = estimation_scenario();
    let mut worst_score = 0.0f64;
    let mut worst_a = 0.0f64;
    let mut worst_lambda = 0.0f64;
    let mut convex = true;
    for rep in 0..20 {
        let ds = simulation::generate_replicate(&base, rep).unwrap();
        let m = ds.m() as f64;
        let params = ModelParams { beta: vec![0.4, 0.9], a: 0.3 + 0.05 * rep as f64, lambda: 0.3 + 0.04 * rep as f64 };
        let score = score_lambda(&ds, &params, TransformKind::DualPower).unwrap();
        let step = 1e-5;
        let ll = |l: f64| log_likelihood(&ds, &ModelParams { lambda: l, ..params.clone() }).unwrap();
        let fd = (ll(params.lambda + step) - ll(params.lambda - step)) / (2.0 * step);
        worst_score = worst_score.max((fd - score).abs() / (1.0 + score.abs()));
        for method in VarianceMethod::ALL {
            let f = fit(&ds, method, TransformKind::DualPower).unwrap();
            if !f.converged {
                continue;
            }
            if f.params.lambda > 0.0 {
                let residual = profile_score(&ds, f.params.lambda, method).unwrap().f_value.abs();
                worst_lambda = worst_lambda.max(residual / (TOL_LAMBDA_PER_AREA * m));
            }
            if method != VarianceMethod::PR && !f.a_estimate.truncated_at_zero {
                let h = ds.transformed(&f.transform());
                let g = estimating_equation(&ds, &h, f.params.a, method).unwrap().abs();
                worst_a = worst_a.max(g / (TOL_A_PER_AREA * m));
            }
            convex &= eblup_convex(&ds, &f);
        }
    }
    o.check("score vs likelihood FD", worst_score < 1e-6, format!("max rel gap {worst_score:.1e}"));
    o.check(
        "estimating-equation certificates",
        worst_a <= 1.0 && worst_lambda <= 1.0,
        format!("max |G|/tol_A {worst_a:.2}, max |F|/tol_lambda {worst_lambda:.2}"),
    );
    o.check("EBLUP convexity and A = 0 collapse", convex, "20 datasets x 4 estimators".into());

    let ds = simulation::generate_replicate(&base, 0).unwrap();
    let f = fit(&ds, VarianceMethod::ML, TransformKind::DualPower).unwrap();
    let t = f.transform();
    let key = StreamKey::new(SEED, label_id("acceptance"), Role::Bootstrap);
    let n = 100_000;
    let mut sums = vec![(0.0, 0.0); ds.m()];
    for b in 0..n {
        let star = bootstrap_generate(&ds, &f, &mut key.stream(b)).unwrap();
        for (i, s) in sums.iter_mut().enumerate() {
            let r = t.h(star.y()[i]) - ds.x_row(i).iter().zip(&f.params.beta).map(|(x, b)| x * b).sum::<f64>();
            s.0 += r;
            s.1 += r * r;
        }
    }
    let worst_law = sums
        .iter()
        .enumerate()
        .map(|(i, (s, ss))| {
            let v = (ss - s * s / n as f64) / (n as f64 - 1.0);
            (v / (f.params.a + ds.d()[i]) - 1.0).abs()
        })
        .fold(0.0, f64::max);
    o.check("bootstrap variance law", worst_law < 0.02, format!("max rel deviation {worst_law:.4} over 1e5 draws"));

    let cfg = BootstrapConfig { b: 200, seed: SEED, ..Default::default() };
    let pool = |k: usize| rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap();
    let one = pool(1).install(|| mse_estimate(&ds, &f, &cfg).unwrap());
    let four = pool(4).install(|| mse_estimate(&ds, &f, &cfg).unwrap());
    let exact = one.areas.iter().all(|a| a.total == a.g1_bar + a.g2 + a.g3 + a.g4_bar + a.g5_bar);
    o.check("MSE decomposition identity", exact, "bit-exact on 30 areas".into());
    let sim = ScenarioConfig { n_replicates: 100, ..base };
    let s1 = pool(1).install(|| simulation::run(&sim).unwrap());
    let s4 = pool(4).install(|| simulation::run(&sim).unwrap());
    o.check(
        "determinism under parallelism",
        one == four && s1.result == s4.result,
        "1 vs 4 threads, bootstrap and estimation study".into(),
    );
    o
}

fn eblup_convex(ds: &tfh::Dataset, f: &FitResult) -> bool {
    let collapsed = FitResult { params: ModelParams { a: 0.0, ..f.params.clone() }, ..f.clone() };
    let convex = eblup(ds, f)
        .unwrap()
        .iter()
        .all(|p| p.eta_hat >= p.h_direct.min(p.synthetic) - 1e-12 && p.eta_hat <= p.h_direct.max(p.synthetic) + 1e-12);
    convex && eblup(ds, &collapsed).unwrap().iter().all(|p| p.eta_hat == p.synthetic)
}

fn c7(base: &EstimationReport) -> Outcome {
    let mut o = Outcome::new();
    let cfg = ScenarioConfig { m: 120, methods: vec![VarianceMethod::ML], include_log: false, ..estimation_scenario() };
    let sd30 = base.cell("ML").unwrap().lambda.sd;
    let sd120 = estimation(&cfg).cell("ML").unwrap().lambda.sd;
    o.range("sd(lambda) m=30 / m=120", sd30 / sd120, 1.7, 2.3);
    o.details.push(format!("     sd at m=30 {sd30:.4}, m=120 {sd120:.4}"));
    o
}

fn report(id: &str, title: &str, start: Instant, o: &Outcome) {
    let status = if o.pass { "PASS" } else { "FAIL" };
    println!("{status} {id} {title} ({:.0} s)", start.elapsed().as_secs_f64());
    for d in &o.details {
        println!("     {d}");
    }
}

fn main() {
    let mut all = true;
    let mut record = |id: &str, title: &str, start: Instant, o: Outcome| {
        report(id, title, start, &o);
        all &= o.pass;
    };

    let start = Instant::now();
    let base = estimation(&estimation_scenario());
    record("C1", "estimator means at m = 30", start, c1(&base));
    let start = Instant::now();
    record("C2", "non-normal random effects", start, c2(&base));
    let start = Instant::now();
    record("C3", "true MSE at S = 10000", start, c3());
    let start = Instant::now();
    record("C4", "bootstrap MSE relative bias", start, c4());
    let start = Instant::now();
    record("C5", "zero estimates of A", start, c5());
    let start = Instant::now();
    record("C6", "property suites", start, c6());
    let start = Instant::now();
    record("C7", "lambda consistency rate", start, c7(&base));

    println!("reports written to {}", out_dir().display());
    if !all && std::env::var_os("TFH_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
