//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 1-4 and 8 check the implementation and fail the target when they
//! fail. Criteria 5-7 compare simulated behaviour with published reference
//! numbers; their verdicts are printed but do not fail the target.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use efzo::compressors::{estimate_contraction, qsgd_levels, CompressorSpec, Keep};
use efzo::harness::{run_experiment, ExperimentConfig, ExperimentReport, PointReport, Scenario, SweepAxis};
use efzo::linalg;
use efzo::metrics::convergence_of;
use efzo::optimizers::{ef_zo_sgd_step, AgentStreams, EfState, Normalization, StepSchedule};
use efzo::rng::RngStream;
use efzo::synthetic::{run_synthetic, SyntheticConfig};
use efzo::zo::{smoothed_quadratic_oracle, two_point_estimate, FnLoss, Quadratic, SmoothingParams};

struct Verdict {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Verdict {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Self {
            pass,
            summary: summary.into(),
            details: Vec::new(),
        }
    }
}

// ---------------------------------------------------------------- criterion 1

const IDENTITY_TOL: f64 = 1e-10;

fn criterion_identity() -> Verdict {
    let dim = 10;
    let loss = FnLoss::new(dim, move |x: &[f64], t: usize| {
        let c = 0.5 * (t as f64 * 0.01).sin();
        x.iter()
            .enumerate()
            .map(|(k, v)| 0.5 * (0.1 + 0.1 * k as f64) * (v - c).powi(2))
            .sum()
    });
    let sched = StepSchedule::new(0.01, 0.05, Normalization::Off).unwrap();
    let specs = [
        CompressorSpec::Identity,
        CompressorSpec::TopK(Keep::Count(3)),
        CompressorSpec::RandK(Keep::Count(3)),
        CompressorSpec::DropoutBiased { p: 0.5 },
        CompressorSpec::DropoutUnbiased { p: 0.5 },
        CompressorSpec::Qsgd { bits: 1 },
        CompressorSpec::Qsgd { bits: 4 },
    ];
    let mut worst: f64 = 0.0;
    let mut memory_stays_zero = true;
    let mut errors = Vec::new();
    for spec in &specs {
        for seed in 0..20 {
            let mut streams = AgentStreams::for_agent(&RngStream::from_seed(seed), 0);
            let mut st = EfState::new(vec![2.0; dim]);
            for _ in 0..1000 {
                let before = st.virtual_iterate(sched.eta);
                let step = match ef_zo_sgd_step(&mut st, &loss, &sched, spec, true, &mut streams) {
                    Ok(s) => s,
                    Err(e) => {
                        errors.push(format!("{spec} seed {seed}: {e}"));
                        break;
                    }
                };
                let mut want = before;
                linalg::axpy(-sched.eta, &step.estimate, &mut want);
                let rel = linalg::dist(&st.virtual_iterate(sched.eta), &want) / linalg::norm(&want).max(1e-300);
                worst = worst.max(rel);
                if matches!(spec, CompressorSpec::Identity) && st.e.iter().any(|v| *v != 0.0) {
                    memory_stays_zero = false;
                }
            }
        }
    }
    let pass = worst <= IDENTITY_TOL && memory_stays_zero && errors.is_empty();
    let mut v = Verdict::new(
        pass,
        format!(
            "virtual-iterate identity, {} compressors x 20 seeds x 1000 steps: worst relative error {worst:.2e} (tol {IDENTITY_TOL:e}); identity memory always zero: {memory_stays_zero}",
            specs.len()
        ),
    );
    v.details = errors;
    v
}

// ---------------------------------------------------------------- criterion 2

const CONTRACTION_SE: f64 = 5.0;
const QSGD_SE: f64 = 3.0;

fn criterion_contraction() -> Verdict {
    let dim = 10;
    let mut rng = RngStream::from_seed(2024);
    let mut pass = true;
    let mut details = Vec::new();
    for (spec, delta) in [
        (CompressorSpec::TopK(Keep::Count(3)), 0.3),
        (CompressorSpec::RandK(Keep::Count(3)), 0.3),
        (CompressorSpec::DropoutBiased { p: 0.4 }, 0.4),
    ] {
        let est = estimate_contraction(&spec, dim, 4000, &mut rng).unwrap();
        // worst case over directions: at least delta up to noise, and not far above it
        let ok = (est.delta_hat - delta).abs() <= CONTRACTION_SE * est.std_error + 1e-12;
        pass &= ok;
        details.push(format!(
            "{spec}: delta_hat {:.4} vs {delta} (se {:.4}) {}",
            est.delta_hat,
            est.std_error,
            if ok { "ok" } else { "MISMATCH" }
        ));
    }
    let du = estimate_contraction(&CompressorSpec::DropoutUnbiased { p: 0.5 }, dim, 4000, &mut rng).unwrap();
    pass &= !du.contractive;
    details.push(format!("dropout-u:0.5: delta_hat {:.4}, contractive {}", du.delta_hat, du.contractive));
    let q = estimate_contraction(&CompressorSpec::Qsgd { bits: 1 }, dim, 4000, &mut rng).unwrap();
    details.push(format!("qsgd:1 (Monte-Carlo only): delta_hat {:.4}", q.delta_hat));

    let x = [0.3, -1.2, 0.05, 2.0, -0.7];
    let draws = 100_000;
    let mut worst_z: f64 = 0.0;
    for bits in [1u32, 3] {
        let s = 2f64.powi(bits as i32);
        let norm = linalg::norm(&x);
        let mut sum = [0.0; 5];
        let mut sum_sq = [0.0; 5];
        for _ in 0..draws {
            let l = qsgd_levels(&x, bits, &mut rng);
            for k in 0..5 {
                sum[k] += l[k];
                sum_sq[k] += l[k] * l[k];
            }
        }
        for k in 0..5 {
            let m = sum[k] / draws as f64;
            let se = ((sum_sq[k] / draws as f64 - m * m) / draws as f64).sqrt();
            let want = s * x[k].abs() / norm;
            worst_z = worst_z.max((m - want).abs() / se);
        }
    }
    let q_ok = worst_z <= QSGD_SE;
    pass &= q_ok;
    Verdict {
        pass,
        summary: format!(
            "contraction within {CONTRACTION_SE} se for top-k/rand-k/dropout-b, dropout-u non-contractive: {}; qsgd level means worst {worst_z:.2} se (tol {QSGD_SE})",
            !du.contractive
        ),
        details,
    }
}

// ---------------------------------------------------------------- criterion 3

const MOMENT_SLACK: f64 = 1.05;
const MEAN_SE: f64 = 4.0;

fn criterion_smoothing() -> Verdict {
    let mut pass = true;
    let mut details = Vec::new();
    let mut rng = RngStream::from_seed(3);
    let d = 5;
    let diag = [0.2, 0.5, 1.0, 1.5, 2.0];
    let l = 2.0;
    let q = Quadratic::diagonal(&diag, vec![0.5, -0.3, 0.0, 1.0, -1.0]);
    let x = [0.4, -0.8, 1.1, 0.0, 0.6];
    for mu in [0.01, 0.1, 1.0] {
        let (fmu, grad) = smoothed_quadratic_oracle(&q, &x, mu);
        let gap = (fmu - q.value(&x)).abs();
        let ok = gap <= 0.5 * mu * mu * l * d as f64;
        pass &= ok;
        details.push(format!("smoothing gap mu={mu}: {gap:.3e} <= {:.3e} {ok}", 0.5 * mu * mu * l * d as f64));

        let loss = FnLoss::new(d, |y: &[f64], _| q.value(y));
        let sp = SmoothingParams::new(mu).unwrap();
        let draws = 100_000;
        let mut second = 0.0;
        let mut sum = vec![0.0; d];
        let mut sum_sq = vec![0.0; d];
        for _ in 0..draws {
            let u = rng.normal_vec(d);
            let g = two_point_estimate(&loss, &x, 0, sp, &u).unwrap();
            second += linalg::norm_sq(&g) / draws as f64;
            for k in 0..d {
                sum[k] += g[k];
                sum_sq[k] += g[k] * g[k];
            }
        }
        let bound = 0.5 * mu * mu * l * l * ((d + 6) as f64).powi(3) + 2.0 * (d + 4) as f64 * linalg::norm_sq(&grad);
        let ok = second <= MOMENT_SLACK * bound;
        pass &= ok;
        details.push(format!("second moment mu={mu}: {second:.3} <= {:.3} {ok}", MOMENT_SLACK * bound));
        let mut worst_z: f64 = 0.0;
        for k in 0..d {
            let m = sum[k] / draws as f64;
            let se = ((sum_sq[k] / draws as f64 - m * m) / draws as f64).sqrt();
            worst_z = worst_z.max((m - grad[k]).abs() / se);
        }
        let ok = worst_z <= MEAN_SE;
        pass &= ok;
        details.push(format!("estimator mean mu={mu}: worst {worst_z:.2} se {ok}"));
    }
    Verdict {
        pass,
        summary: format!(
            "smoothing gap exact, second moment within {}% slack, estimator mean within {MEAN_SE} se",
            ((MOMENT_SLACK - 1.0) * 100.0).round()
        ),
        details,
    }
}

// ---------------------------------------------------------------- criterion 4

fn criterion_bound() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for horizon in [1_000usize, 10_000] {
        let cfg = SyntheticConfig {
            horizon,
            ..SyntheticConfig::default()
        };
        let outs: Vec<_> = (0..50).map(|s| run_synthetic(&cfg, s).unwrap()).collect();
        let mean = outs.iter().map(|o| o.mean_grad_sq).sum::<f64>() / outs.len() as f64;
        let bound = outs[0].bound;
        pass &= mean <= bound;
        parts.push(format!("T={horizon}: {mean:.4} <= {bound:.4}"));
    }
    Verdict::new(pass, format!("average squared gradient under the bound over 50 seeds: {}", parts.join(", ")))
}

// ---------------------------------------------------------------- criteria 5, 6

const SGDM_MIN: f64 = 50.0;
const VARIANT_MAX: f64 = 15.0;
const LAMBDA10_MAX: f64 = 7.0;

const TRACKING_METHODS: [&str; 8] = [
    "sgdm",
    "qsgd:1+ef",
    "none",
    "qsgd:1",
    "topk:0.5",
    "topk:0.5+ef",
    "dropout-b:0.5",
    "dropout-u:0.5",
];

fn full_scale(methods: &[&str]) -> ExperimentConfig {
    ExperimentConfig {
        runs: 100,
        base_seed: 0,
        methods: methods.iter().map(|m| m.parse().unwrap()).collect(),
        ..ExperimentConfig::default()
    }
}

fn collisions(p: &PointReport) -> (f64, f64) {
    p.aggregate.total_collisions
}

fn criterion_collisions(base: &ExperimentReport, sweep: &ExperimentReport) -> Verdict {
    let mut details = Vec::new();
    let sgdm = collisions(base.find("base", "sgdm:0.9").unwrap());
    let sgdm_ok = sgdm.0 >= SGDM_MIN;
    details.push(format!("sgdm: {:.2} +- {:.2} (need >= {SGDM_MIN}) {sgdm_ok}", sgdm.0, sgdm.1));

    let mut variants_ok = true;
    for m in &TRACKING_METHODS[1..] {
        let p = base.find("base", &m.parse::<efzo::sim::Method>().unwrap().to_string()).unwrap();
        let (c, h) = collisions(p);
        let ok = c <= VARIANT_MAX;
        variants_ok &= ok;
        details.push(format!("lambda=1 {m}: {c:.2} +- {h:.2} (need <= {VARIANT_MAX}) {ok}"));
    }
    let lambdas = ["0", "1", "5", "10"];
    let curve: Vec<(f64, f64)> = lambdas
        .iter()
        .map(|l| collisions(sweep.find(&format!("lambda={l}"), "qsgd:1+ef").unwrap()))
        .collect();
    for (l, (c, h)) in lambdas.iter().zip(&curve) {
        let bound = if *l == "0" { "" } else if *l == "10" { " (need <= 7)" } else { " (need <= 15)" };
        details.push(format!("qsgd:1+ef lambda={l}: {c:.2} +- {h:.2}{bound}"));
    }
    for &(c, _) in &curve[1..] {
        variants_ok &= c <= VARIANT_MAX;
    }
    let l10_ok = curve[3].0 <= LAMBDA10_MAX;
    let monotone = curve.windows(2).all(|w| w[1].0 - w[1].1 <= w[0].0 + w[0].1);
    details.push(format!("non-increasing in lambda up to CI overlap: {monotone}"));
    Verdict {
        pass: sgdm_ok && variants_ok && l10_ok && monotone,
        summary: format!(
            "sgdm {:.1} >= {SGDM_MIN}: {sgdm_ok}; all variants with lambda >= 1 <= {VARIANT_MAX}: {variants_ok}; lambda=10 {:.1} <= {LAMBDA10_MAX}: {l10_ok}; monotone in lambda: {monotone}",
            sgdm.0, curve[3].0
        ),
        details,
    }
}

fn criterion_convergence(base: &ExperimentReport) -> Verdict {
    let mut details = Vec::new();
    let mut pass = true;
    let should = ["qsgd:1+ef", "none", "qsgd:1", "topk:0.5", "topk:0.5+ef"];
    let should_not = ["dropout-b:0.5", "dropout-u:0.5"];
    let mut wrong = Vec::new();
    for (m, expect) in should.iter().map(|m| (m, true)).chain(should_not.iter().map(|m| (m, false))) {
        let p = base.find("base", m).unwrap();
        let kept: Vec<_> = p.series.iter().filter(|s| !s.diverged()).collect();
        let initial = kept.iter().map(|s| s.initial_error).sum::<f64>() / kept.len() as f64;
        let c = convergence_of(&p.aggregate.tracking_error.mean, initial);
        let ok = c.converged == expect;
        pass &= ok;
        if !ok {
            wrong.push(m.to_string());
        }
        details.push(format!(
            "{m}: mean-curve floor {:.2} of initial {initial:.1}, settle {:?}, converged {} (per-run fraction {:.2}), expected {expect}",
            c.floor, c.settle_step, c.converged, p.aggregate.converged_fraction
        ));
    }
    let summary = if wrong.is_empty() {
        "convergence predicate matches for all seven methods".to_string()
    } else {
        format!("convergence predicate disagrees for: {}", wrong.join(", "))
    };
    Verdict {
        pass,
        summary,
        details,
    }
}

// ---------------------------------------------------------------- criterion 7

const COVERAGE_RATIO: f64 = 3.0;
const N2_MAX: f64 = 1.0;

fn criterion_coverage() -> Verdict {
    let fl = ["none", "qsgd:3+ef", "topk:0.5+ef", "dropout-b:0.5+ef", "randk:0.5+ef"];
    let mut methods = vec!["sgdm"];
    methods.extend(fl);
    let cfg = ExperimentConfig {
        scenario: Scenario::Coverage,
        runs: 5,
        methods: methods.iter().map(|m| m.parse().unwrap()).collect(),
        sweep: vec![SweepAxis::parse("n=2,3,4").unwrap()],
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [2, 3, 4] {
        let label = format!("n={n}");
        let sgdm = report.find(&label, "sgdm:0.9").unwrap().aggregate.total_collisions.0;
        let means: Vec<(&str, f64)> = fl
            .iter()
            .map(|m| {
                let name = m.parse::<efzo::sim::Method>().unwrap().to_string();
                (*m, report.find(&label, &name).unwrap().aggregate.total_collisions.0)
            })
            .collect();
        let (best_m, best) = means.iter().copied().fold(("", f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        let row: Vec<String> = means.iter().map(|(m, c)| format!("{m} {c:.1}")).collect();
        details.push(format!("N={n}: sgdm {sgdm:.1}; {}", row.join("; ")));
        if n == 2 {
            let worst = means.iter().map(|m| m.1).fold(0.0, f64::max);
            let ok = worst <= N2_MAX;
            pass &= ok;
            parts.push(format!("N=2 worst FL {worst:.1} <= {N2_MAX}: {ok}"));
        } else {
            let ok = sgdm >= COVERAGE_RATIO * best;
            pass &= ok;
            parts.push(format!(
                "N={n} sgdm {sgdm:.1} >= {COVERAGE_RATIO} x best ({best_m} {best:.1}): {ok}"
            ));
        }
    }
    Verdict {
        pass,
        summary: parts.join("; "),
        details,
    }
}

// ---------------------------------------------------------------- criterion 8

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut tracking = full_scale(&["qsgd:1+ef", "sgdm", "fo:qsgd:1+ef"]);
    tracking.runs = 8;
    tracking.sweep = vec![SweepAxis::parse("lambda=0,5").unwrap()];
    let mut coverage = ExperimentConfig {
        scenario: Scenario::Coverage,
        runs: 3,
        methods: vec!["qsgd:3+ef".parse().unwrap(), "sgdm".parse().unwrap()],
        ..ExperimentConfig::default()
    };
    coverage.coverage.steps = 2000;
    let mut all_equal = true;
    let mut files = 0;
    for (name, cfg) in [("tracking", tracking), ("coverage", coverage)] {
        let mut trees = Vec::new();
        for (k, parallel) in [true, true, false].into_iter().enumerate() {
            let mut c = cfg.clone();
            c.parallel = parallel;
            c.out = Some(tmp.path().join(format!("{name}{k}")));
            run_experiment(&c).unwrap();
            trees.push(read_tree(c.out.as_ref().unwrap()));
        }
        files += trees[0].len();
        all_equal &= trees[0] == trees[1] && trees[0] == trees[2];
    }
    Verdict::new(
        all_equal,
        format!("rerun and serial outputs byte-identical across {files} CSV files: {all_equal}"),
    )
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let mut verdicts: Vec<(usize, bool, Verdict, f64)> = Vec::new();
    let mut timed = |n: usize, gating: bool, f: &dyn Fn() -> Verdict| {
        let start = Instant::now();
        let v = f();
        let secs = start.elapsed().as_secs_f64();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {n}: {} [{secs:.1}s]", v.summary);
        for d in &v.details {
            println!("    {d}");
        }
        verdicts.push((n, gating, v, secs));
    };
    timed(1, true, &criterion_identity);
    timed(2, true, &criterion_contraction);
    timed(3, true, &criterion_smoothing);
    timed(4, true, &criterion_bound);

    let start = Instant::now();
    let base = run_experiment(&full_scale(&TRACKING_METHODS)).unwrap();
    let mut sweep_cfg = full_scale(&["qsgd:1+ef"]);
    sweep_cfg.sweep = vec![SweepAxis::parse("lambda=0,1,5,10").unwrap()];
    let sweep = run_experiment(&sweep_cfg).unwrap();
    println!("    (tracking runs at full scale: {:.1}s)", start.elapsed().as_secs_f64());
    timed(5, false, &|| criterion_collisions(&base, &sweep));
    timed(6, false, &|| criterion_convergence(&base));
    timed(7, false, &criterion_coverage);
    timed(8, true, &criterion_determinism);

    let passed = verdicts.iter().filter(|v| v.2.pass).count();
    println!("acceptance: {passed}/{} criteria pass", verdicts.len());
    let gating_failures: Vec<usize> = verdicts.iter().filter(|v| v.1 && !v.2.pass).map(|v| v.0).collect();
    if gating_failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("implementation criteria failed: {gating_failures:?}");
        ExitCode::FAILURE
    }
}
