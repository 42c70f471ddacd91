//! Acceptance suite. Prints one PASS/FAIL/SKIP/WARN line per criterion and
//! exits nonzero if any hard criterion fails.
//!
//! The benchmark reproduction runs only when `MOGEL_BOSTON` and/or
//! `MOGEL_WINE` name delimited files whose last column is the target.

use std::process::{Command, ExitCode};
use std::time::Instant;

use mogel::data::*;
use mogel::eval::{benchmark, evaluate_model, ood_report, TrialPlan};
use mogel::evidential::*;
use mogel::net::{Activation, NetworkSpec, NetworkWeights};
use mogel::trainer::{fit, TrainConfig};
use mogel::verify::{self, CheckResult, VerifyOptions};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass,
    Fail,
    Skip,
    /// Soft criterion outside its band.
    Warn,
}

struct Line {
    verdict: Verdict,
    name: &'static str,
    detail: String,
    secs: f64,
    budget: f64,
}

fn timed(name: &'static str, budget: f64, f: impl FnOnce() -> (Verdict, String)) -> Line {
    let start = Instant::now();
    let (verdict, detail) = f();
    let secs = start.elapsed().as_secs_f64();
    let verdict = match verdict {
        Verdict::Pass if secs > budget => Verdict::Fail,
        v => v,
    };
    Line {
        verdict,
        name,
        detail,
        secs,
        budget,
    }
}

fn from_checks(checks: &[CheckResult]) -> (Verdict, String) {
    let detail = checks
        .iter()
        .map(|c| format!("{} worst {:.3e} (tol {:.1e}, n={})", c.name, c.worst, c.tolerance, c.comparisons))
        .collect::<Vec<_>>()
        .join("; ");
    let ok = checks.iter().all(|c| c.passed);
    (if ok { Verdict::Pass } else { Verdict::Fail }, detail)
}

fn oracle_suite() -> (Verdict, String) {
    let opts = VerifyOptions::default();
    let quad = verify::check_marginal_quadrature(&opts).expect("quadrature check runs");
    let mc = verify::check_mc_moments(&opts).expect("monte carlo check runs");
    from_checks(&[quad, mc])
}

fn single_check(f: fn(&VerifyOptions) -> mogel::Result<CheckResult>) -> (Verdict, String) {
    from_checks(&[f(&VerifyOptions::default()).expect("check runs")])
}

/// Row sums of the responsibility head, the mixing estimate, and invariance
/// of every loss under relabelling of the components.
fn invariants() -> (Verdict, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst_rows: f64 = 0.0;
    let mut worst_mixing: f64 = 0.0;
    for trial in 0..20u64 {
        let spec = NetworkSpec {
            input_dim: 1 + trial as usize % 3,
            hidden_layers: vec![8, 8],
            activation: if trial % 2 == 0 { Activation::Relu } else { Activation::Tanh },
            n_components: 1 + trial as usize % 5,
        };
        let mut w = NetworkWeights::init(&spec, trial).unwrap();
        // Large weights push the logits far apart.
        let scale = [1.0, 10.0, 100.0, 1000.0][trial as usize % 4];
        for p in w.params_mut() {
            *p *= scale;
        }
        let x = Array2::from_shape_fn((64, spec.input_dim), |_| rng.random_range(-5.0..5.0));
        let out = w.forward(x.view()).unwrap();
        for i in 0..64 {
            worst_rows = worst_rows.max((out.resp.row(i).iter().sum::<f64>() - 1.0).abs());
        }
        let pi = mixing_estimate(&out.resp).unwrap();
        worst_mixing = worst_mixing.max((pi.iter().sum::<f64>() - 1.0).abs());
    }

    let mut worst_perm: f64 = 0.0;
    for _ in 0..200 {
        let n = 8;
        let m = verify::random_mixture(&mut rng, (1.05, 10.0));
        let k = m.n_components();
        let mut perm: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
        let gamma: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let comps: Vec<Vec<NigComponent>> = (0..n)
            .map(|_| {
                (0..k)
                    .map(|_| {
                        let nu = 10f64.powf(rng.random_range(-1.0..1.0));
                        let beta = 10f64.powf(rng.random_range(-1.0..1.0));
                        NigComponent::new(nu, rng.random_range(1.05..10.0), beta).unwrap()
                    })
                    .collect()
            })
            .collect();
        let p = Array2::from_shape_fn((n, k), |(i, j)| m.weights()[j] * (1.0 + 0.1 * ((i + j) % 3) as f64));
        let p = Responsibilities::new(&p / &p.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1))).unwrap();
        let comps_perm: Vec<Vec<NigComponent>> = comps
            .iter()
            .map(|row| perm.iter().map(|&j| row[j]).collect())
            .collect();
        let p_perm = Responsibilities::new(Array2::from_shape_fn((n, k), |(i, j)| p.row(i)[perm[j]])).unwrap();
        let m_perm = MixtureEvidentialParams::new(
            m.gamma(),
            perm.iter().map(|&j| m.components()[j]).collect(),
            perm.iter().map(|&j| m.weights()[j]).collect(),
        )
        .unwrap();

        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        let pairs = [
            (
                weighted_nll(&y, &gamma, &comps, &p).unwrap(),
                weighted_nll(&y, &gamma, &comps_perm, &p_perm).unwrap(),
            ),
            (
                evidence_penalty(&y, &gamma, &comps, &p).unwrap(),
                evidence_penalty(&y, &gamma, &comps_perm, &p_perm).unwrap(),
            ),
            (
                total_loss(&y, &gamma, &comps, &p, 0.1).unwrap(),
                total_loss(&y, &gamma, &comps_perm, &p_perm, 0.1).unwrap(),
            ),
            (
                marginal_loglik(y[0], &m).unwrap(),
                marginal_loglik(y[0], &m_perm).unwrap(),
            ),
            (epistemic(&m).unwrap(), epistemic(&m_perm).unwrap()),
            (predict(&m), predict(&m_perm)),
        ];
        for (a, b) in pairs {
            worst_perm = worst_perm.max(rel(a, b));
        }
    }
    let ok = worst_rows <= 1e-9 && worst_mixing <= 1e-9 && worst_perm <= 1e-12;
    (
        if ok { Verdict::Pass } else { Verdict::Fail },
        format!(
            "row sums {worst_rows:.1e} (tol 1e-9), mixing sum {worst_mixing:.1e} (tol 1e-9), \
             permutation {worst_perm:.1e} (tol 1e-12)"
        ),
    )
}

/// K=2 against K=1 on bimodal-noise data, paired by seed. Both use the
/// frozen-responsibility (EM) step; see the README for why.
fn mixture_advantage() -> (Verdict, String) {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let spec = SyntheticSpec::with_defaults(SyntheticKind::HeteroscedasticBimodal, 1000, 100 + seed);
        let data = make_synthetic(&spec).unwrap().split([0.6, 0.2, 0.2], seed).unwrap();
        let (xt, yt) = data.raw(Split::Test).unwrap();
        let nll = |k: usize| {
            let cfg = TrainConfig {
                n_components: k,
                max_epochs: 300,
                seed,
                freeze_responsibilities: true,
                ..TrainConfig::default()
            };
            let (model, _) = fit(&NetworkSpec::new(1, k), &data, &cfg).unwrap();
            evaluate_model(&model, &xt, &yt, seed as usize).unwrap().nll
        };
        let (one, two) = (nll(1), nll(2));
        if two < one {
            wins += 1;
        }
        pairs.push(format!("{one:.3}/{two:.3}"));
    }
    (
        if wins >= 4 { Verdict::Pass } else { Verdict::Fail },
        format!("K=2 wins {wins}/5 (need 4); NLL K=1/K=2: {}", pairs.join(" ")),
    )
}

/// Cubic toy: epistemic uncertainty on [5, 7] against [-4, 4].
fn ood() -> (Verdict, String) {
    let spec = SyntheticSpec::with_defaults(SyntheticKind::Cubic, 1000, 0);
    let data = make_synthetic(&spec).unwrap().split([0.8, 0.2, 0.0], 0).unwrap();
    let net = NetworkSpec {
        activation: Activation::Tanh,
        ..NetworkSpec::new(1, 1)
    };
    let cfg = TrainConfig {
        max_epochs: 500,
        ..TrainConfig::default()
    };
    let (model, _) = fit(&net, &data, &cfg).unwrap();
    let st = &model.standardization;
    let inside = st.features(&grid(-4.0, 4.0, 200)).unwrap();
    let outside = st.features(&grid(5.0, 7.0, 100)).unwrap();
    let r = ood_report(&model.weights, inside.view(), outside.view()).unwrap();
    (
        if r.ratio >= 2.0 { Verdict::Pass } else { Verdict::Fail },
        format!(
            "epistemic out/in = {:.3}/{:.3} = {:.2} (need >= 2)",
            r.mean_epistemic_out, r.mean_epistemic_in, r.ratio
        ),
    )
}

struct Band {
    var: &'static str,
    rmse: (f64, f64),
    nll: (f64, f64),
}

const BANDS: [Band; 2] = [
    Band {
        var: "MOGEL_BOSTON",
        rmse: (2.95, 3.0 * 0.24),
        nll: (2.31, 3.0 * 0.07),
    },
    Band {
        var: "MOGEL_WINE",
        rmse: (0.62, 0.06),
        nll: (0.90, 3.0 * 0.07),
    },
];

fn table_reproduction() -> (Verdict, String) {
    let mut details = Vec::new();
    let mut any = false;
    let mut inside = true;
    for band in &BANDS {
        let Ok(path) = std::env::var(band.var) else {
            details.push(format!("{} unset", band.var));
            continue;
        };
        any = true;
        let header = sniff_header(&path, Delimiter::Auto).unwrap_or(false);
        let data = match load_delimited(&path, &TargetColumn::Last, Delimiter::Auto, header) {
            Ok(d) => d,
            Err(e) => {
                details.push(format!("{}: {e}", band.var));
                inside = false;
                continue;
            }
        };
        let cfg = TrainConfig {
            n_components: 2,
            ..TrainConfig::default()
        };
        let report = benchmark(
            &data,
            &NetworkSpec::new(data.n_features(), 2),
            &cfg,
            &TrialPlan::benchmark(20, 0),
        )
        .unwrap();
        let a = &report.aggregate;
        let ok = (a.rmse_mean - band.rmse.0).abs() <= band.rmse.1
            && (a.nll_mean - band.nll.0).abs() <= band.nll.1;
        inside &= ok;
        details.push(format!(
            "{}: RMSE {:.3}±{:.3} (band {}±{:.2}), NLL {:.3}±{:.3} (band {}±{:.2})",
            band.var, a.rmse_mean, a.rmse_std, band.rmse.0, band.rmse.1, a.nll_mean, a.nll_std,
            band.nll.0, band.nll.1
        ));
    }
    let verdict = match (any, inside) {
        (false, _) => Verdict::Skip,
        (true, true) => Verdict::Pass,
        (true, false) => Verdict::Warn,
    };
    (verdict, details.join("; "))
}

fn mutation() -> (Verdict, String) {
    let out = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mogel"))
        .args(["verify", "--perturb-loss", "1e-3", "--out"])
        .arg(out.path())
        .output()
        .expect("binary runs");
    let code = o.status.code().unwrap_or(-1);
    let stderr = String::from_utf8_lossy(&o.stderr);
    (
        if code != 0 { Verdict::Pass } else { Verdict::Fail },
        format!("exit {code}: {}", stderr.trim()),
    )
}

fn main() -> ExitCode {
    let lines = [
        timed("oracle-suite", 120.0, oracle_suite),
        timed("k1-reduction", 10.0, || single_check(verify::check_single_component)),
        timed("gradient-fd", 60.0, || single_check(verify::check_gradients)),
        timed("loss-identity", 5.0, || single_check(verify::check_loss_identity)),
        timed("invariants", 60.0, invariants),
        timed("mixture-advantage", 300.0, mixture_advantage),
        timed("ood-epistemic", 180.0, ood),
        timed("benchmark-table", 1800.0, table_reproduction),
        timed("mutation-detection", 120.0, mutation),
    ];
    let mut failed = 0;
    for l in &lines {
        let tag = match l.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
            Verdict::Warn => "WARN",
        };
        println!(
            "{tag} {:<20} {:>7.1}s/{:>4.0}s  {}",
            l.name, l.secs, l.budget, l.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
