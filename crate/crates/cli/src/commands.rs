use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dmdfm::dfm::{self, PanelData};
use dmdfm::dmd::{self, Shrinkage};
use dmdfm::estimation::{
    mle_fit, monte_carlo_study, rwmh_sample, whittle_fit, Estimator, MleFit, StudyConfig,
};
use dmdfm::rank;
use dmdfm::{io, ma};
use dmdfm::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{self, FitConfig, SelectRankConfig, SimulateConfig, Source, StudyFileConfig, ValidateConfig};

pub struct Context {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

impl Context {
    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out).map_err(|source| Error::Io {
            path: self.out.clone(),
            source,
        })?;
        let path = self.out.join(name);
        io::write_atomic(&path, bytes)?;
        Ok(path)
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

/// Fields every report starts with.
fn header(command: &str, sha256: &str, seed: Option<u64>) -> BTreeMap<&'static str, Value> {
    let mut h = BTreeMap::new();
    h.insert("command", json!(command));
    h.insert("config_sha256", json!(sha256));
    h.insert("schema", json!(config::SCHEMA));
    if let Some(seed) = seed {
        h.insert("seed", json!(seed));
    }
    h
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("report types serialize to JSON")
}

pub fn simulate(ctx: &Context) -> Result<Vec<PathBuf>> {
    let loaded = config::load::<SimulateConfig>(&ctx.config)?;
    let cfg = &loaded.config;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    if cfg.periods == 0 {
        return Err(Error::Config("periods must be >= 1".into()));
    }
    let (panel, kind) = match &cfg.source {
        Source::Dfm { model } => {
            let model = io::load_model(&loaded.base.join(model))?;
            (dfm::simulate_dfm(&model, cfg.periods, cfg.burn_in, seed, false)?, "dfm")
        }
        Source::Ma {
            jacobians,
            meas_error_share,
        } => {
            let (set, c_ss) = io::load_jacobians(&loaded.base.join(jacobians))?;
            let rep = ma::assemble_ma(&set, set.horizon, c_ss)?;
            if rep.truncation_warning() {
                eprintln!("warning: MA coefficients have not decayed by the horizon; truncation may bias the panel");
            }
            (ma::simulate_micro_panel(&rep, cfg.periods, seed, *meas_error_share)?, "ma")
        }
    };
    let csv = ctx.write("panel.csv", io::matrix_to_csv(panel.y()).as_bytes())?;
    let mut meta = header("simulate", &loaded.sha256, Some(seed));
    meta.insert("generator", json!(kind));
    meta.insert("n_obs", json!(panel.n_obs()));
    meta.insert("periods", json!(panel.periods()));
    meta.insert("burn_in", json!(cfg.burn_in));
    meta.insert("meas_error_std", json!(panel.meas_error_std()));
    let json = ctx.write_json("panel.json", &meta)?;
    Ok(vec![csv, json])
}

fn read_data(base: &Path, data: &Path) -> Result<PanelData> {
    io::read_panel_csv(&base.join(data))
}

pub fn select_rank(ctx: &Context) -> Result<Vec<PathBuf>> {
    let loaded = config::load::<SelectRankConfig>(&ctx.config)?;
    let cfg = &loaded.config;
    let panel = read_data(&loaded.base, &cfg.data)?;
    let rank_cfg = cfg.rank.clone().unwrap_or_default();
    let report = rank::select_rank(&panel, cfg.n_max, &rank_cfg)?;
    let mut out = header("select-rank", &loaded.sha256, None);
    out.insert("report", to_value(&report));
    let json = ctx.write_json("rank_report.json", &out)?;
    let table = ctx.write("rank_table.txt", rank::render_table(&report).as_bytes())?;
    Ok(vec![json, table])
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("writing CSV: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Config(format!("writing CSV: {e}")))
}

fn estimator_name(e: &Estimator) -> &'static str {
    match e {
        Estimator::Mle(_) => "mle",
        Estimator::Rwmh(_) => "rwmh",
        Estimator::WhittleMle(_) => "whittle-mle",
    }
}

fn fit_report(ctx: &Context, mut head: BTreeMap<&'static str, Value>, fit: &MleFit) -> Result<Vec<PathBuf>> {
    if fit.no_improvement {
        eprintln!("warning: the objective never moved; parameters may be unidentified");
    }
    if !fit.at_bound.is_empty() {
        eprintln!("warning: parameters ended on a bound: {}", fit.at_bound.join(", "));
    }
    head.insert("fit", to_value(fit));
    Ok(vec![ctx.write_json("fit.json", &head)?])
}

pub fn fit(ctx: &Context) -> Result<Vec<PathBuf>> {
    let loaded = config::load::<FitConfig>(&ctx.config)?;
    let cfg = &loaded.config;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    let (targets, init) = config::parameters(&cfg.parameters)?;
    let binding = cfg.binding.build(targets, seed, &loaded.base)?;
    let data = read_data(&loaded.base, &cfg.data)?;
    let mut head = header("fit", &loaded.sha256, Some(seed));
    head.insert("estimator", json!(estimator_name(&cfg.estimator)));
    match &cfg.estimator {
        Estimator::Mle(nm) => fit_report(ctx, head, &mle_fit(&data, &binding, &init, nm)?),
        Estimator::WhittleMle(nm) => fit_report(ctx, head, &whittle_fit(&data, &binding, &init, nm)?),
        Estimator::Rwmh(mc) => {
            let mut mc = mc.clone();
            if let Some(s) = ctx.seed {
                mc.seed = s;
            }
            let chain = rwmh_sample(&data, &binding, &init, &mc)?;
            let mut csv = csv_writer();
            let mut head_row = vec!["step".to_string()];
            head_row.extend(chain.names.iter().cloned());
            head_row.extend(["loglik".to_string(), "burn_in".to_string()]);
            csv.write_record(&head_row).map_err(csv_err)?;
            for (step, (draw, ll)) in chain.draws.iter().zip(&chain.logliks).enumerate() {
                let mut row = vec![step.to_string()];
                row.extend(draw.iter().map(|v| fmt_f64(*v)));
                row.extend([fmt_f64(*ll), u8::from(step < chain.burn_in).to_string()]);
                csv.write_record(&row).map_err(csv_err)?;
            }
            let csv = finish_csv(csv)?;
            let chain_path = ctx.write("chain.csv", &csv)?;
            head.insert("summary", to_value(&chain.summary()));
            head.insert("acceptance_burn_in", json!(chain.acceptance_burn_in));
            head.insert("proposal_cov", json!(chain.proposal_cov));
            head.insert("step_scale", json!(chain.step_scale));
            head.insert("mcmc_seed", json!(mc.seed));
            let summary_path = ctx.write_json("chain_summary.json", &head)?;
            Ok(vec![chain_path, summary_path])
        }
    }
}

pub fn mc_study(ctx: &Context) -> Result<Vec<PathBuf>> {
    let loaded = config::load::<StudyFileConfig>(&ctx.config)?;
    let cfg = &loaded.config;
    if cfg.replications == 0 {
        return Err(Error::Config("replications must be >= 1".into()));
    }
    let seed = ctx.seed.unwrap_or(cfg.seed);
    let (targets, truth) = config::parameters(&cfg.parameters)?;
    let binding = cfg.binding.build(targets, seed, &loaded.base)?;
    let study = StudyConfig {
        replications: cfg.replications,
        master_seed: seed,
        data_periods: cfg.data_periods,
        data_burn_in: cfg.data_burn_in,
        estimator: cfg.estimator.clone(),
    };
    let table = monte_carlo_study(&binding, &truth, None, &study)?;

    let mut csv = csv_writer();
    let mut head_row: Vec<String> = ["replication", "data_seed", "binding_seed", "converged", "loglik"]
        .into_iter()
        .map(String::from)
        .collect();
    head_row.extend(truth.names());
    head_row.push("error".into());
    csv.write_record(&head_row).map_err(csv_err)?;
    for r in &table.replications {
        let mut row = vec![
            r.index.to_string(),
            r.data_seed.to_string(),
            r.binding_seed.to_string(),
            u8::from(r.converged).to_string(),
            r.loglik.map(fmt_f64).unwrap_or_default(),
        ];
        for k in 0..truth.len() {
            row.push(r.estimate.as_ref().map(|e| fmt_f64(e[k])).unwrap_or_default());
        }
        row.push(r.error.clone().unwrap_or_default());
        csv.write_record(&row).map_err(csv_err)?;
    }
    let csv = finish_csv(csv)?;
    if table.failure_rate > 0.0 {
        eprintln!(
            "warning: {} of {} replications failed",
            cfg.replications - table.succeeded,
            cfg.replications
        );
    }
    let csv_path = ctx.write("study.csv", &csv)?;
    let mut head = header("mc-study", &loaded.sha256, Some(seed));
    head.insert("estimator", json!(estimator_name(&cfg.estimator)));
    head.insert("replications", json!(cfg.replications));
    head.insert("succeeded", json!(table.succeeded));
    head.insert("converged", json!(table.converged));
    head.insert("failure_rate", json!(table.failure_rate));
    head.insert("summary", to_value(&table.summary));
    let summary_path = ctx.write_json("study_summary.json", &head)?;
    Ok(vec![csv_path, summary_path])
}

fn spectral_norm(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

pub fn validate(ctx: &Context) -> Result<Vec<PathBuf>> {
    let loaded = config::load::<ValidateConfig>(&ctx.config)?;
    let cfg = &loaded.config;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    let model = io::load_model(&loaded.base.join(&cfg.model))?;
    let innov = dfm::solve_riccati(&model, dfm::DEFAULT_TOL, dfm::DEFAULT_MAX_ITER)?;

    let ladder = if cfg.m_ladder.is_empty() {
        vec![model.n_obs()]
    } else {
        cfg.m_ladder.clone()
    };
    let mut rows = Vec::new();
    let mut norms = Vec::new();
    for &m in &ladder {
        if m < model.n_factors() || m > model.n_obs() {
            return Err(Error::Config(format!(
                "m_ladder entry {m} must lie in [N, M] = [{}, {}]",
                model.n_factors(),
                model.n_obs()
            )));
        }
        let sub = model.with_loadings(model.g().rows(0, m).into_owned())?;
        let sub_innov = dfm::solve_riccati(&sub, dfm::DEFAULT_TOL, dfm::DEFAULT_MAX_ITER)?;
        let norm = spectral_norm(&sub_innov.a_minus_kg(&sub));
        norms.push(norm);
        rows.push(json!({ "m": m, "a_minus_kg": norm, "b2_over_b1": spectral_norm(&dfm::var_coefficient(&sub, &sub_innov, 2)?) / spectral_norm(&sub_innov.b1) }));
    }
    let decreasing = norms.windows(2).all(|w| w[1] < w[0]);

    let var_norms = (1..=cfg.var_lags)
        .map(|j| dfm::var_coefficient(&model, &innov, j).map(|b| spectral_norm(&b)))
        .collect::<Result<Vec<f64>>>()?;

    let panel = dfm::simulate_dfm(&model, cfg.periods, 200, seed, false)?;
    let pair = dmd::build_snapshots(&panel)?;
    let n = model.n_factors().min(pair.n_obs()).min(pair.j());
    let fit = dmd::dmd_fit(&pair, n, Shrinkage::default())?;
    let (autocov, _) = rank::residual_autocov(&fit.residuals(panel.y())?)?;
    let exact = dfm::kalman_loglik_terms(&model, &panel)?[1..].iter().sum::<f64>();
    let var1 = dfm::var1_loglik(&model, &innov, &panel)?;

    let mut out = header("validate", &loaded.sha256, Some(seed));
    out.insert("assumptions", to_value(&model.assumption_report()));
    out.insert(
        "riccati",
        json!({ "residual": innov.riccati_residual, "iterations": innov.iterations }),
    );
    out.insert("a_minus_kg", json!(spectral_norm(&innov.a_minus_kg(&model))));
    out.insert("m_ladder", json!(rows));
    out.insert("m_ladder_strictly_decreasing", json!(decreasing));
    out.insert("var_coefficient_norms", json!(var_norms));
    out.insert(
        "simulated_panel",
        json!({
            "periods": cfg.periods,
            "dmd_rank": n,
            "residual_autocov_max": autocov,
            "loglik_exact": exact,
            "loglik_var1": var1,
            "relative_gap": (exact - var1).abs() / exact.abs(),
        }),
    );
    Ok(vec![ctx.write_json("diagnostics.json", &out)?])
}
