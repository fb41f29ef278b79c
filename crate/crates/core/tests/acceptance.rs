//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line each, and exits nonzero if any criterion fails.
//!
//! All seeds below are fixed constants; none were tuned against outcomes.
//! `ACCEPTANCE_ONLY=1,7` restricts a run to the listed criteria.

use std::time::{Duration, Instant};

use dmdfm::dfm::{self, StateSpaceModel};
use dmdfm::dmd::{self, Shrinkage, SnapshotMoments};
use dmdfm::estimation::{
    monte_carlo_study, rwmh, rwmh_sample, whittle_loglik, Estimator, Generator, GeneratorBinding, MCMCConfig,
    NelderMeadConfig, Parameter, ParameterVector, SpectralModel, StudyConfig,
};
use dmdfm::ma::{self, InputIrf, InputJacobian, JacobianSet, MARepresentation, ShockSpec};
use dmdfm::rank::{self, RankConfig};
use dmdfm::rng;
use nalgebra::{DMatrix, DVector};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gaussian(rows: usize, cols: usize, seed: u64, stream: u64) -> DMatrix<f64> {
    let mut r = rng::stream_rng(seed, stream);
    let mut m = DMatrix::zeros(rows, cols);
    rng::fill_standard_normal(&mut r, m.as_mut_slice());
    m
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

// Shared N = 2 family: fixed dynamics, loadings drawn i.i.d. N(0, 1) by row.
const LADDER: [usize; 5] = [25, 50, 100, 200, 400];

fn family_model(m: usize, seed: u64) -> StateSpaceModel {
    let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.0, 0.5]);
    let c = DMatrix::identity(2, 2);
    // Rows are drawn row-major so that the first M rows do not depend on M.
    let g = gaussian(2, 400, seed, 11).transpose().rows(0, m).into_owned();
    StateSpaceModel::new(a, c, g, 1.0).unwrap()
}

/// Max-abs residual of the Riccati equation, evaluated densely in M.
fn riccati_residual_dense(model: &StateSpaceModel, sigma: &DMatrix<f64>) -> f64 {
    let (a, g) = (model.a(), model.g());
    let m = model.n_obs();
    let omega = g * sigma * g.transpose() + DMatrix::identity(m, m) * model.sigma_v().powi(2);
    let chol = omega.cholesky().expect("innovation covariance is PD");
    let gsa = g * sigma * a.transpose();
    let rhs = a * sigma * a.transpose() + model.c() * model.c().transpose() - gsa.transpose() * chol.solve(&gsa);
    (sigma - rhs).amax()
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let n = 1 + (k % 4) as usize;
        let m = [5, 40, 120, 200][(k / 4 % 4) as usize].max(n);
        let raw = gaussian(n, n, 100 + k, 1);
        let radius = 0.3 + 0.65 * (k as f64 / 19.0);
        let a = &raw * (radius / spectral_norm(&raw));
        let c = gaussian(n, n, 100 + k, 2);
        let g = gaussian(m, n, 100 + k, 3);
        let sigma_v = 0.1 + 0.1 * (k % 10) as f64;
        let model = StateSpaceModel::new(a, c, g, sigma_v).unwrap();
        let innov = dfm::solve_riccati(&model, dfm::DEFAULT_TOL, dfm::DEFAULT_MAX_ITER).unwrap();
        worst = worst.max(riccati_residual_dense(&model, &innov.sigma_inf)).max(innov.riccati_residual);
    }
    outcome(worst < 1e-10, format!("20 models, worst max-abs residual {worst:.2e} (< 1e-10)"))
}

fn criterion_2() -> Outcome {
    let medians: Vec<f64> = LADDER
        .iter()
        .map(|&m| {
            median(
                (0..10)
                    .map(|s| {
                        let model = family_model(m, s);
                        let innov = dfm::solve_riccati(&model, dfm::DEFAULT_TOL, dfm::DEFAULT_MAX_ITER).unwrap();
                        spectral_norm(&innov.a_minus_kg(&model))
                    })
                    .collect(),
            )
        })
        .collect();
    let ratios: Vec<f64> = (2..LADDER.len())
        .map(|i| (LADDER[i] as f64 * medians[i]) / (LADDER[i - 1] as f64 * medians[i - 1]))
        .collect();
    let pass = strictly_decreasing(&medians) && ratios.iter().all(|&r| r <= 1.5);
    outcome(
        pass,
        format!(
            "median ||A-KG|| over M={LADDER:?}: [{}]; 2M-ratios for M>=100: [{}] (<= 1.5)",
            fmt_list(&medians),
            fmt_list(&ratios)
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut b2 = Vec::new();
    let mut ratio_at_400 = 0.0;
    for &m in &LADDER {
        let (mut n1, mut n2) = (Vec::new(), Vec::new());
        for s in 0..10 {
            let model = family_model(m, s);
            let innov = dfm::solve_riccati(&model, dfm::DEFAULT_TOL, dfm::DEFAULT_MAX_ITER).unwrap();
            n1.push(spectral_norm(&innov.b1));
            n2.push(spectral_norm(&dfm::var_coefficient(&model, &innov, 2).unwrap()));
        }
        let (m1, m2) = (median(n1), median(n2));
        b2.push(m2);
        if m == 400 {
            ratio_at_400 = m2 / m1;
        }
    }
    let pass = ratio_at_400 < 0.05 && strictly_decreasing(&b2);
    outcome(
        pass,
        format!(
            "median ||B2|| over M ladder: [{}]; ||B2||/||B1|| at M=400: {ratio_at_400:.3e} (< 0.05)",
            fmt_list(&b2)
        ),
    )
}

fn criterion_4() -> Outcome {
    let t = 200;
    let mut mean_gap = Vec::new();
    let mut rel_at_400 = 0.0;
    for &m in &LADDER {
        let (mut gaps, mut rels) = (Vec::new(), Vec::new());
        for s in 0..20u64 {
            let model = family_model(m, s);
            let panel = dfm::simulate_dfm(&model, t, 200, 1000 + s, false).unwrap();
            let innov = dfm::solve_riccati(&model, dfm::DEFAULT_TOL, dfm::DEFAULT_MAX_ITER).unwrap();
            // Both likelihoods condition on the first observation.
            let exact: f64 = dfm::kalman_loglik_terms(&model, &panel).unwrap()[1..].iter().sum();
            let var1 = dfm::var1_loglik(&model, &innov, &panel).unwrap();
            gaps.push((exact - var1).abs());
            rels.push((exact - var1).abs() / exact.abs());
        }
        mean_gap.push(gaps.iter().sum::<f64>() / gaps.len() as f64);
        if m == 400 {
            rel_at_400 = rels.iter().sum::<f64>() / rels.len() as f64;
        }
    }
    let pass = strictly_decreasing(&mean_gap) && rel_at_400 < 0.01;
    outcome(
        pass,
        format!(
            "mean |l_DFM - l_1| over M ladder: [{}]; relative gap at M=400: {rel_at_400:.3e} (< 0.01)",
            fmt_list(&mean_gap)
        ),
    )
}

fn criterion_5() -> Outcome {
    let m = 100;
    let mut errs = Vec::new();
    for &j in &[1_000usize, 10_000, 100_000] {
        let per_seed: Vec<f64> = (0..5u64)
            .map(|s| {
                let model = family_model(m, s);
                let gk = dfm::solve_riccati(&model, dfm::DEFAULT_TOL, dfm::DEFAULT_MAX_ITER).unwrap().b1;
                let panel = dfm::simulate_dfm(&model, j + 1, 200, 2000 + s, false).unwrap();
                let moments = SnapshotMoments::from_panel(panel.y(), false).unwrap();
                let fit = dmd::dmd_fit_moments(&moments, 2, Shrinkage::default()).unwrap();
                (&fit.b - &gk).norm() / gk.norm()
            })
            .collect();
        errs.push(median(per_seed));
    }
    let pass = strictly_decreasing(&errs) && errs[2] < 0.05;
    outcome(
        pass,
        format!("median ||B~ - GK||_F/||GK||_F at J=1e3,1e4,1e5: [{}] (last < 0.05)", fmt_list(&errs)),
    )
}

fn criterion_6() -> Outcome {
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.9, 0.8, 0.7]));
    let (mut plateau, mut ic, mut drop) = (0, 0, 0);
    let mut drops = Vec::new();
    for s in 0..10u64 {
        let g = gaussian(100, 3, 600 + s, 1);
        let model = StateSpaceModel::new(a.clone(), DMatrix::identity(3, 3), g, 0.0).unwrap();
        let ma = ma::from_state_space(&model, ma::DEFAULT_HORIZON).unwrap();
        let panel = ma::simulate_micro_panel(&ma, 2000, 700 + s, 0.2).unwrap();
        let report = rank::select_rank(&panel, 8, &RankConfig::default()).unwrap();
        let r2 = &report.r2_values;
        let flat_beyond = (3..8).all(|n| r2[&(n + 1)] - r2[&n] < 0.005);
        if report.chosen_n == 3 && flat_beyond {
            plateau += 1;
        }
        if report.ic_argmin == 3 {
            ic += 1;
        }
        let ratio = report.autocov_values[&2] / report.autocov_values[&3];
        drops.push(ratio);
        if ratio >= 5.0 {
            drop += 1;
        }
    }
    let pass = plateau >= 7 && ic >= 7 && drop >= 7;
    outcome(
        pass,
        format!(
            "seeds passing (of 10, need 7): R2 plateau at 3 {plateau}, IC argmin 3 {ic}, autocov drop >= 5x {drop} (median drop {:.1}x)",
            median(drops)
        ),
    )
}

fn criterion_7() -> Outcome {
    let at_one = rank::gd_lambda(1.0);
    let near_zero = rank::gd_lambda(1e-12);
    let pass = (at_one - 2.309401).abs() <= 1e-6 && (near_zero - 2f64.sqrt()).abs() <= 1e-6;
    outcome(pass, format!("lambda(1) = {at_one:.7}, lambda(1e-12) = {near_zero:.7} (sqrt 2 = 1.4142136)"))
}

/// Exact Gaussian log-likelihood of a zero-mean MA(1) with unit innovations,
/// by the innovations algorithm.
fn ma1_exact_loglik(x: &[f64], theta: f64) -> f64 {
    let gamma0 = 1.0 + theta * theta;
    let (mut v, mut pred, mut ll) = (gamma0, 0.0, 0.0);
    for &xt in x {
        let e = xt - pred;
        ll += -0.5 * ((2.0 * std::f64::consts::PI).ln() + v.ln() + e * e / v);
        let coef = theta / v;
        pred = coef * e;
        v = gamma0 - theta * coef;
    }
    ll
}

fn criterion_8() -> Outcome {
    let theta = 0.5;
    let ma = MARepresentation::new(
        vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, theta)],
        DVector::zeros(1),
    )
    .unwrap();
    let model = SpectralModel::standard(ma.clone(), 0.0).unwrap();
    let mut per_period = Vec::new();
    let mut rel_2048 = 0.0;
    for &t in &[128usize, 512, 2048] {
        let (mut gaps, mut rels) = (Vec::new(), Vec::new());
        for s in 0..10u64 {
            let panel = ma::simulate_ma(&ma, t, 800 + s, 0.0).unwrap();
            let exact = ma1_exact_loglik(panel.y().row(0).transpose().as_slice(), theta);
            let whittle = whittle_loglik(&panel, &model).unwrap();
            gaps.push((whittle - exact).abs() / t as f64);
            rels.push((whittle - exact).abs() / exact.abs());
        }
        per_period.push(gaps.iter().sum::<f64>() / 10.0);
        if t == 2048 {
            rel_2048 = rels.iter().sum::<f64>() / 10.0;
        }
    }
    let pass = strictly_decreasing(&per_period) && rel_2048 < 0.02;
    outcome(
        pass,
        format!(
            "mean |Whittle - exact|/T at T=128,512,2048: [{}]; relative at T=2048: {rel_2048:.3e} (< 0.02)",
            fmt_list(&per_period)
        ),
    )
}

// Scalar-factor DFM used by the estimation criteria.
fn estimation_binding(j: usize) -> (GeneratorBinding, ParameterVector) {
    let m = 100;
    let g = DMatrix::from_fn(m, 1, |i, _| 1.0 + 0.5 * (0.7 * i as f64).sin());
    let model = StateSpaceModel::new(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0), g, 0.5).unwrap();
    let targets = vec!["A[0,0]".parse().unwrap(), "C[0,0]".parse().unwrap(), "sigma_v".parse().unwrap()];
    let mut binding = GeneratorBinding::new(Generator::Dfm(model), targets, j, 1).unwrap();
    // The data are mean zero by construction.
    binding.demean = false;
    let truth = ParameterVector::new(vec![
        Parameter { name: "a".into(), value: 0.5, lo: -0.95, hi: 0.95 },
        Parameter { name: "c".into(), value: 1.0, lo: 0.1, hi: 3.0 },
        Parameter { name: "sigma_v".into(), value: 0.5, lo: 0.05, hi: 2.0 },
    ])
    .unwrap();
    (binding, truth)
}

fn criterion_9() -> Outcome {
    let (binding, truth) = estimation_binding(100_000);
    let reps = 50;
    let config = StudyConfig {
        replications: reps,
        master_seed: 9,
        data_periods: 120,
        data_burn_in: 200,
        estimator: Estimator::Mle(NelderMeadConfig::default()),
    };
    let table = monte_carlo_study(&binding, &truth, None, &config).unwrap();
    let mut pass = table.converged == reps && table.succeeded == reps;
    let mut parts = Vec::new();
    for p in &table.summary {
        let bound = 2.0 * p.std / (reps as f64).sqrt();
        pass &= p.bias.abs() <= bound;
        parts.push(format!("{} |bias| {:.4} <= {:.4}", p.name, p.bias.abs(), bound));
    }
    outcome(pass, format!("{}/{reps} converged; {}", table.converged, parts.join(", ")))
}

fn criterion_10() -> Outcome {
    // Injected Gaussian target.
    let mean = [1.0, -2.0];
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
    let prec = cov.clone().try_inverse().unwrap();
    let target = |x: &[f64]| {
        let d = DVector::from_vec(vec![x[0] - mean[0], x[1] - mean[1]]);
        -0.5 * d.dot(&(&prec * &d))
    };
    let init = ParameterVector::new(vec![
        Parameter { name: "x".into(), value: 0.0, lo: -50.0, hi: 50.0 },
        Parameter { name: "y".into(), value: 0.0, lo: -50.0, hi: 50.0 },
    ])
    .unwrap();
    let config = MCMCConfig { steps: 55_000, burn_in: 5_000, seed: 10, ..Default::default() };
    let summary = rwmh(target, &init, &config).unwrap().summary();
    let mean_err = (0..2).map(|i| (summary.mean[i] - mean[i]).abs() / cov[(i, i)].sqrt()).fold(0.0, f64::max);
    let est_cov = DMatrix::from_fn(2, 2, |i, k| summary.cov[i][k]);
    let cov_err = (&est_cov - &cov).norm() / cov.norm();
    let gaussian_ok = mean_err <= 0.02 && cov_err <= 0.05;

    // Simulated-likelihood posterior on the scalar-factor DFM.
    let (binding, truth) = estimation_binding(100_000);
    let binding = binding.with_seed(21);
    let inst = binding.instantiate(&truth.values()).unwrap();
    let data = inst.simulate(120, 200, 22).unwrap();
    let chain_cfg = MCMCConfig { steps: 3_000, burn_in: 1_000, seed: 23, ..Default::default() };
    let post = rwmh_sample(&data, &binding, &truth, &chain_cfg).unwrap().summary();
    let z: Vec<f64> = truth.values().iter().enumerate().map(|(i, v)| (post.mean[i] - v).abs() / post.std[i]).collect();
    let dfm_ok = z.iter().all(|&v| v <= 2.0);
    outcome(
        gaussian_ok && dfm_ok,
        format!(
            "Gaussian target: mean error {mean_err:.4} std (<= 0.02), cov error {cov_err:.4} (<= 0.05); DFM posterior |mean - truth|/std: [{}] (<= 2)",
            fmt_list(&z)
        ),
    )
}

fn toeplitz_upper(h: usize, decay: f64, lead: f64) -> DMatrix<f64> {
    DMatrix::from_fn(h, h, |i, k| if k >= i { lead * decay.powi((k - i) as i32) } else { 0.0 })
}

fn criterion_11() -> Outcome {
    let (m, h) = (20, 300);
    let ge = [toeplitz_upper(h, 0.7, 1.0), toeplitz_upper(h, 0.4, -0.5), toeplitz_upper(h, 0.85, 0.3)];
    let slackness = ge.iter().map(|j| ma::commutability_slackness(j).unwrap()).fold(0.0, f64::max);
    let set = JacobianSet {
        horizon: h,
        shocks: vec![
            ShockSpec { name: "z".into(), rho: 0.9, scale: 1.0 },
            ShockSpec { name: "r".into(), rho: 0.6, scale: 0.5 },
        ],
        inputs: vec![
            InputJacobian {
                name: "w".into(),
                jc: gaussian(m, h, 1100, 1),
                irf: InputIrf::General(vec![(0, ge[0].clone()), (1, ge[1].clone())]),
                scale: 1.0,
            },
            InputJacobian {
                name: "p".into(),
                jc: gaussian(m, h, 1100, 2),
                irf: InputIrf::General(vec![(0, ge[2].clone())]),
                scale: 1.0,
            },
        ],
    };
    let ma = ma::assemble_ma(&set, h, None).unwrap();
    let panel = ma::impulse_response_panel(&ma, &DVector::from_vec(vec![1.0, 1.0]), h).unwrap();
    let pair = dmd::build_snapshots(&panel).unwrap();
    let fit = dmd::dmd_fit(&pair, 2, Shrinkage::default()).unwrap();
    let resid = fit.residuals(panel.y()).unwrap().amax();
    let scale = panel.y().amax();
    let pass = slackness < 1e-12 && resid < 1e-6 * scale;
    outcome(
        pass,
        format!(
            "max slackness {slackness:.2e} (< 1e-12); rank-2 residual max-abs {resid:.2e} vs 1e-6 * max|panel| = {:.2e}",
            1e-6 * scale
        ),
    )
}

/// Lag-0 and lag-1 sample autocovariances (zero mean) with batch-means
/// standard errors.
fn autocov_with_se(y: &DMatrix<f64>, batches: usize) -> (Vec<f64>, Vec<f64>) {
    let (m, t) = (y.nrows(), y.ncols());
    let stat = |from: usize, to: usize| -> Vec<f64> {
        let mut out = vec![0.0; 2 * m * m];
        for s in from.max(1)..to {
            for i in 0..m {
                for k in 0..m {
                    out[i * m + k] += y[(i, s)] * y[(k, s)];
                    out[m * m + i * m + k] += y[(i, s)] * y[(k, s - 1)];
                }
            }
        }
        let n = (to - from.max(1)) as f64;
        out.iter().map(|v| v / n).collect()
    };
    let full = stat(0, t);
    let len = t / batches;
    let parts: Vec<Vec<f64>> = (0..batches).map(|b| stat(b * len, (b + 1) * len)).collect();
    let se = (0..full.len())
        .map(|e| {
            let mean = parts.iter().map(|p| p[e]).sum::<f64>() / batches as f64;
            let var = parts.iter().map(|p| (p[e] - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
            (var / batches as f64).sqrt()
        })
        .collect();
    (full, se)
}

fn criterion_12() -> Outcome {
    let a = DMatrix::from_row_slice(2, 2, &[0.7, 0.2, -0.1, 0.5]);
    let g = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, -0.3, 0.8]);
    let model = StateSpaceModel::new(a, DMatrix::identity(2, 2), g, 0.4).unwrap();
    let t = 10_000;
    let from_dfm = dfm::simulate_dfm(&model, t, 500, 1200, false).unwrap();
    let ma = ma::from_state_space(&model, ma::DEFAULT_HORIZON).unwrap();
    let from_ma = ma::simulate_ma(&ma, t, 1201, model.sigma_v()).unwrap();
    let (s1, se1) = autocov_with_se(from_dfm.y(), 50);
    let (s2, se2) = autocov_with_se(from_ma.y(), 50);
    let worst = (0..s1.len())
        .map(|e| (s1[e] - s2[e]).abs() / (se1[e].powi(2) + se2[e].powi(2)).sqrt())
        .fold(0.0, f64::max);
    outcome(worst <= 3.0, format!("18 lag-0/lag-1 autocovariance entries, worst |difference| = {worst:.2} SE (<= 3)"))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 12] = [
        ("Riccati fixed point", criterion_1),
        ("||A-KG|| shrinks with M", criterion_2),
        ("VAR(1) collapse", criterion_3),
        ("likelihood gap", criterion_4),
        ("DMD consistency", criterion_5),
        ("rank selection on N=3 panel", criterion_6),
        ("Gavish-Donoho constant", criterion_7),
        ("Whittle vs exact MA(1)", criterion_8),
        ("MLE recovery study", criterion_9),
        ("RWMH validity", criterion_10),
        ("commuting Jacobians give exact rank", criterion_11),
        ("MA and state-space panels agree", criterion_12),
    ];
    let mut failed = Vec::new();
    let mut total = Duration::ZERO;
    let mut ran = 0;
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        ran += 1;
        let elapsed = start.elapsed();
        total += elapsed;
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} [{tag}] {name}: {} ({:.1} s)", i + 1, result.detail, elapsed.as_secs_f64());
        if !result.pass {
            failed.push(i + 1);
        }
    }
    println!(
        "acceptance: {}/{} passed in {:.1} s",
        ran - failed.len(),
        ran,
        total.as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
