//! Command pipelines: orchestrate training/evaluation, persist solutions,
//! and emit CSV artifacts plus a run manifest.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use deep_xva::analytics;
use deep_xva::bsde;
use deep_xva::market::{derive_seed, simulate, MarketModel};
use deep_xva::neural::NetworkParams;
use deep_xva::serialize;
use deep_xva::xva::{
    self, adjustment_mc, combined_adjustment_mc, exposure_profile, pathwise_deltas, solve_xva,
    train_claim, AdjustmentKind, TrainedClaim,
};
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Failure modes mapped onto the exit-code contract.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: a validation tolerance check failed.
    Validation(String),
    /// Exit 3: runtime failure (divergence, missing artifacts, io).
    Runtime(String),
}

impl From<deep_xva::Error> for CliError {
    fn from(e: deep_xva::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    TrainClean,
    Exposure,
    XvaMc,
    XvaBsde,
    Sensitivities,
    Collateral,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::TrainClean => "train-clean",
            Command::Exposure => "exposure",
            Command::XvaMc => "xva-mc",
            Command::XvaBsde => "xva-bsde",
            Command::Sensitivities => "sensitivities",
            Command::Collateral => "collateral",
            Command::Validate => "validate",
        }
    }
}

/// What one run produced: artifact list, per-phase wall-clock timings, and
/// the headline numbers.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub artifacts: Vec<String>,
    pub timings_seconds: BTreeMap<String, f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(command: Command, config_hash: &str) -> RunManifest {
        RunManifest {
            command: command.name().to_string(),
            config_hash: config_hash.to_string(),
            artifacts: Vec::new(),
            timings_seconds: BTreeMap::new(),
            diagnostics: BTreeMap::new(),
        }
    }
}

/// Exclusive ownership of an output directory for the duration of a run.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> CliResult<DirLock> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".deep-xva.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Runtime(
                format!(
                    "output directory {} is locked by another run (remove {} if stale)",
                    dir.display(),
                    path.display()
                ),
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Full 64-bit round-trip formatting (17 significant digits) so CSV bytes
/// are reproducible and lossless.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_csv<I>(path: &Path, header: &str, rows: I) -> CliResult<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

struct Phases {
    clock: Instant,
}

impl Phases {
    fn start() -> Phases {
        Phases {
            clock: Instant::now(),
        }
    }

    fn lap(&mut self, manifest: &mut RunManifest, phase: &str) {
        manifest
            .timings_seconds
            .insert(phase.to_string(), self.clock.elapsed().as_secs_f64());
        self.clock = Instant::now();
    }
}

/// Executes one command against a parsed config. Artifacts land in
/// `out_override` when given, else in the config's output directory.
pub fn run(
    config: &ExperimentConfig,
    config_hash: &str,
    command: Command,
    out_override: Option<&Path>,
) -> CliResult<RunManifest> {
    let out_dir = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.outputs.directory.clone());
    let _lock = DirLock::acquire(&out_dir)?;
    let mut manifest = RunManifest::new(command, config_hash);
    let mut phases = Phases::start();

    match command {
        Command::TrainClean => {
            train_all(config, &out_dir, &mut manifest, &mut phases)?;
        }
        Command::Exposure => {
            let claims = load_or_train(config, &out_dir, &mut manifest, &mut phases)?;
            let portfolio = evaluate_portfolio(config, &claims)?;
            phases.lap(&mut manifest, "evaluate");
            let profile = exposure_profile(&portfolio, &config.xva_rates()?)?;
            let path = out_dir.join("exposure.csv");
            write_csv(
                &path,
                "t,depe,dene,depe_se,dene_se",
                (0..profile.nodes.len()).map(|n| {
                    vec![
                        fmt(profile.nodes[n]),
                        fmt(profile.depe[n]),
                        fmt(profile.dene[n]),
                        fmt(profile.depe_se[n]),
                        fmt(profile.dene_se[n]),
                    ]
                }),
            )?;
            record(&mut manifest, &out_dir, &path);
            manifest
                .diagnostics
                .insert("depe_at_0".into(), profile.depe[0]);
            manifest
                .diagnostics
                .insert("dene_at_0".into(), profile.dene[0]);
            phases.lap(&mut manifest, "exposure");
        }
        Command::XvaMc => {
            let claims = load_or_train(config, &out_dir, &mut manifest, &mut phases)?;
            let model = config.market_model()?;
            let grid = config.time_grid()?;
            let rates = config.xva_rates()?;
            let coll = config.collateral_spec()?;
            let p = config.training.outer_paths;
            let seed = config.outer_seed();
            let scheme = config.training.scheme;
            let (cva, cva_se) = adjustment_mc(
                &claims,
                &model,
                &rates,
                &coll,
                AdjustmentKind::Cva,
                &grid,
                p,
                seed,
                scheme,
            )?;
            let (dva, dva_se) = adjustment_mc(
                &claims,
                &model,
                &rates,
                &coll,
                AdjustmentKind::Dva,
                &grid,
                p,
                seed,
                scheme,
            )?;
            let (xva, xva_se) =
                combined_adjustment_mc(&claims, &model, &rates, &coll, &grid, p, seed, scheme)?;
            let path = out_dir.join("adjustments.csv");
            let rows = [
                ("cva", cva, cva_se),
                ("dva", dva, dva_se),
                ("xva", xva, xva_se),
            ];
            write_csv(
                &path,
                "kind,estimate,std_error,ci_low,ci_high",
                rows.iter().map(|(k, v, se)| {
                    vec![
                        k.to_string(),
                        fmt(*v),
                        fmt(*se),
                        fmt(v - 1.96 * se),
                        fmt(v + 1.96 * se),
                    ]
                }),
            )?;
            record(&mut manifest, &out_dir, &path);
            manifest.diagnostics.insert("cva".into(), cva);
            manifest.diagnostics.insert("dva".into(), dva);
            manifest.diagnostics.insert("xva".into(), xva);
            manifest.diagnostics.insert("xva_se".into(), xva_se);
            phases.lap(&mut manifest, "outer_mc");
        }
        Command::XvaBsde => {
            let claims = load_or_train(config, &out_dir, &mut manifest, &mut phases)?;
            let model = config.market_model()?;
            let grid = config.time_grid()?;
            let rates = config.xva_rates()?;
            let coll = config.collateral_spec()?;
            let solution = solve_xva(
                &claims,
                &model,
                &rates,
                &coll,
                &grid,
                &config.xva_config(),
            )?;
            phases.lap(&mut manifest, "xva_solve");
            let sol_path = out_dir.join("xva_solution.dxva");
            serialize::save_xva_solution(&sol_path, &solution)?;
            record(&mut manifest, &out_dir, &sol_path);
            let csv_path = out_dir.join("xva.csv");
            write_csv(
                &csv_path,
                "gamma,validation_loss,best_iteration",
                [vec![
                    fmt(solution.adjustment),
                    fmt(solution.trained.diagnostics.best_validation_loss),
                    solution.trained.diagnostics.best_iteration.to_string(),
                ]],
            )?;
            record(&mut manifest, &out_dir, &csv_path);
            manifest
                .diagnostics
                .insert("gamma".into(), solution.adjustment);
            manifest.diagnostics.insert(
                "xva_validation_loss".into(),
                solution.trained.diagnostics.best_validation_loss,
            );
            phases.lap(&mut manifest, "persist");
        }
        Command::Sensitivities => {
            let claims = load_or_train(config, &out_dir, &mut manifest, &mut phases)?;
            let model = config.market_model()?;
            let grid = config.time_grid()?;
            let paths = simulate(
                &model,
                &grid,
                config.training.outer_paths,
                config.outer_seed(),
                config.training.scheme,
            )?;
            let portfolio = xva::portfolio_value_paths(&claims, &paths)?;
            let deltas = pathwise_deltas(&portfolio, &paths, &model)?;
            phases.lap(&mut manifest, "deltas");
            let (count, steps, dim) = deltas.dim();
            let path = out_dir.join("sensitivities.csv");
            let mut rows = Vec::with_capacity(steps * dim);
            for n in 0..steps {
                for i in 0..dim {
                    let column: Vec<f64> = (0..count).map(|p| deltas[[p, n, i]]).collect();
                    let mean = column.iter().sum::<f64>() / count as f64;
                    let var = column.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                        / (count.max(2) - 1) as f64;
                    rows.push(vec![
                        fmt(grid.node(n)),
                        i.to_string(),
                        fmt(mean),
                        fmt((var / count as f64).sqrt()),
                    ]);
                }
            }
            write_csv(&path, "t,asset,delta_mean,delta_se", rows)?;
            record(&mut manifest, &out_dir, &path);
            phases.lap(&mut manifest, "sensitivities");
        }
        Command::Collateral => {
            let claims = load_or_train(config, &out_dir, &mut manifest, &mut phases)?;
            let model = config.market_model()?;
            let grid = config.time_grid()?;
            let paths = simulate(
                &model,
                &grid,
                config.training.outer_paths,
                config.outer_seed(),
                config.training.scheme,
            )?;
            let portfolio = xva::portfolio_value_paths(&claims, &paths)?;
            let coll = config.collateral_spec()?;
            let shown = config.outputs.collateral_paths.min(portfolio.count());
            let path = out_dir.join("collateral.csv");
            let mut rows = Vec::with_capacity(shown * (grid.steps() + 1));
            for p in 0..shown {
                for n in 0..=grid.steps() {
                    let v = portfolio.values()[[p, n]];
                    let c = xva::collateral(&coll, v);
                    rows.push(vec![
                        p.to_string(),
                        fmt(grid.node(n)),
                        fmt(v),
                        fmt(c),
                        fmt(v - c),
                    ]);
                }
            }
            write_csv(&path, "path,t,v_hat,collateral,post_collateral", rows)?;
            record(&mut manifest, &out_dir, &path);
            phases.lap(&mut manifest, "collateral");
        }
        Command::Validate => {
            let checks = oracle_checks(config)?;
            let path = out_dir.join("validate.csv");
            write_csv(
                &path,
                "check,value,reference,tolerance,pass",
                checks.iter().map(|c| {
                    vec![
                        c.name.clone(),
                        fmt(c.value),
                        fmt(c.reference),
                        fmt(c.tolerance),
                        c.pass().to_string(),
                    ]
                }),
            )?;
            record(&mut manifest, &out_dir, &path);
            for c in &checks {
                println!(
                    "{}: {} (value {:.6e}, reference {:.6e}, tolerance {:.1e})",
                    if c.pass() { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.reference,
                    c.tolerance
                );
                manifest
                    .diagnostics
                    .insert(format!("check_{}", c.name), c.value);
            }
            phases.lap(&mut manifest, "validate");
            let failed: Vec<&OracleCheck> = checks.iter().filter(|c| !c.pass()).collect();
            if !failed.is_empty() {
                write_manifest(&out_dir, &manifest)?;
                return Err(CliError::Validation(format!(
                    "{} of {} oracle checks failed: {}",
                    failed.len(),
                    checks.len(),
                    failed
                        .iter()
                        .map(|c| c.name.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                )));
            }
        }
    }

    write_manifest(&out_dir, &manifest)?;
    Ok(manifest)
}

fn record(manifest: &mut RunManifest, out_dir: &Path, path: &Path) {
    let rel = path
        .strip_prefix(out_dir)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned();
    manifest.artifacts.push(rel);
}

fn write_manifest(out_dir: &Path, manifest: &RunManifest) -> CliResult<()> {
    let path = out_dir.join("manifest.json");
    let mut file = File::create(path)?;
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::Runtime(format!("manifest serialization: {e}")))?;
    file.write_all(json.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

fn claim_file(out_dir: &Path, index: usize) -> PathBuf {
    out_dir.join(format!("claim_{index}.dxva"))
}

fn train_all(
    config: &ExperimentConfig,
    out_dir: &Path,
    manifest: &mut RunManifest,
    phases: &mut Phases,
) -> CliResult<Vec<TrainedClaim>> {
    let model = config.market_model()?;
    let grid = config.time_grid()?;
    let rates = config.xva_rates()?;
    let mut out = Vec::new();
    for (i, claim) in config.european_claims().iter().enumerate() {
        let solver = config.claim_solver(i);
        let tc = train_claim(claim, &rates, &model, &grid, &solver)?;
        let path = claim_file(out_dir, i);
        serialize::save_trained(&path, &tc.trained)?;
        record(manifest, out_dir, &path);
        manifest
            .diagnostics
            .insert(format!("claim_{i}_xi"), tc.trained.xi);
        manifest.diagnostics.insert(
            format!("claim_{i}_validation_loss"),
            tc.trained.diagnostics.best_validation_loss,
        );
        phases.lap(manifest, &format!("train_claim_{i}"));
        out.push(tc);
    }
    Ok(out)
}

/// Loads previously trained claims from the output directory, or trains
/// them inline (and persists them) when any file is missing.
fn load_or_train(
    config: &ExperimentConfig,
    out_dir: &Path,
    manifest: &mut RunManifest,
    phases: &mut Phases,
) -> CliResult<Vec<TrainedClaim>> {
    let claims = config.european_claims();
    let all_present = (0..claims.len()).all(|i| claim_file(out_dir, i).exists());
    if !all_present {
        return train_all(config, out_dir, manifest, phases);
    }
    let model = config.market_model()?;
    let grid = config.time_grid()?;
    let rates = config.xva_rates()?;
    let mut out = Vec::new();
    for (i, claim) in claims.iter().enumerate() {
        let trained = serialize::load_trained(&claim_file(out_dir, i))?;
        if trained.grid != grid {
            return Err(CliError::Runtime(format!(
                "claim_{i}.dxva was trained on grid (T={}, N={}), config expects (T={}, N={})",
                trained.grid.horizon(),
                trained.grid.steps(),
                grid.horizon(),
                grid.steps()
            )));
        }
        let expected_dims = expected_net_dims(config, &model);
        if let Some(net) = trained.networks.first() {
            if net.dims() != expected_dims.as_slice() {
                return Err(CliError::Runtime(format!(
                    "claim_{i}.dxva network dims {:?} do not match config {:?}",
                    net.dims(),
                    expected_dims
                )));
            }
        }
        let problem = xva::clean_claim_problem(claim, &rates, model.dim());
        out.push(TrainedClaim {
            claim: claim.clone(),
            problem,
            trained,
        });
    }
    phases.lap(manifest, "load_claims");
    Ok(out)
}

fn expected_net_dims(config: &ExperimentConfig, model: &MarketModel) -> Vec<usize> {
    let mut dims = Vec::with_capacity(config.network.hidden.len() + 2);
    dims.push(model.dim());
    dims.extend_from_slice(&config.network.hidden);
    dims.push(model.dim());
    dims
}

fn evaluate_portfolio(
    config: &ExperimentConfig,
    claims: &[TrainedClaim],
) -> CliResult<bsde::ValuePaths> {
    let model = config.market_model()?;
    let grid = config.time_grid()?;
    let paths = simulate(
        &model,
        &grid,
        config.training.outer_paths,
        config.outer_seed(),
        config.training.scheme,
    )?;
    Ok(xva::portfolio_value_paths(claims, &paths)?)
}

// --------------------------------------------------------------- validate

struct OracleCheck {
    name: String,
    value: f64,
    reference: f64,
    tolerance: f64,
}

impl OracleCheck {
    fn pass(&self) -> bool {
        (self.value - self.reference).abs() <= self.tolerance
    }
}

/// Cross-checks of the closed-form oracles against independent references,
/// plus a Jacobian-vs-finite-difference spot check. Fast (no training).
fn oracle_checks(config: &ExperimentConfig) -> CliResult<Vec<OracleCheck>> {
    let mut checks = Vec::new();

    let bs = analytics::bs_call(100.0, 100.0, 0.01, 0.25, 1.0)?;
    checks.push(OracleCheck {
        name: "bs_call_reference".into(),
        value: bs.value,
        reference: 10.403539152996622,
        tolerance: 1e-9,
    });

    checks.push(OracleCheck {
        name: "norm_cdf_at_1".into(),
        value: analytics::norm_cdf(1.0),
        reference: 0.841344746068543,
        tolerance: 1e-12,
    });

    let (depe, dene) = analytics::forward_exposures(100.0, 95.0, 0.02, 0.25, 1.0, 0.5)?;
    let clean = 100.0 - 95.0 * (-0.02_f64).exp();
    checks.push(OracleCheck {
        name: "forward_exposure_identity".into(),
        value: depe + dene,
        reference: clean,
        tolerance: 1e-10,
    });

    let (clean_fwd, all_in, fva) = analytics::fva_by_discounting(100.0, 100.0, 0.02, 0.04, 1.0);
    checks.push(OracleCheck {
        name: "fva_clean_value".into(),
        value: clean_fwd,
        reference: 1.9801,
        tolerance: 1e-4,
    });
    checks.push(OracleCheck {
        name: "fva_all_in_value".into(),
        value: all_in,
        reference: 1.9409,
        tolerance: 1e-4,
    });
    checks.push(OracleCheck {
        name: "fva_adjustment".into(),
        value: fva,
        reference: 0.0392,
        tolerance: 1e-4,
    });

    let model = deep_xva::market::MarketModel::single_asset(100.0, 0.01, 0.25)?;
    let mc = analytics::mc_price(
        &model,
        |s: &[f64]| (s[0] - 100.0).max(0.0),
        0.01,
        1.0,
        200_000,
        derive_seed(config.training.seed, 0xF00D),
    )?;
    checks.push(OracleCheck {
        name: "mc_price_vs_black_scholes_z".into(),
        value: (mc.value - bs.value) / mc.std_error,
        reference: 0.0,
        tolerance: 4.0,
    });

    let f2 = |x: &[f64]| vec![x[0] * x[0]];
    let fd = analytics::finite_diff_jacobian(&f2, &[3.0], 1e-5);
    checks.push(OracleCheck {
        name: "finite_diff_square".into(),
        value: fd[[0, 0]],
        reference: 6.0,
        tolerance: 1e-9,
    });

    // network Jacobian against the finite-difference oracle
    let mut net = NetworkParams::init(&[2, 6, 2], 12345)?;
    net.set_normalization(vec![0.1, -0.2], vec![0.9, 1.1])?;
    let x = [0.37, -0.45];
    let jac = deep_xva::neural::jacobian(&net, &x)?;
    let f3 = |p: &[f64]| -> Vec<f64> {
        let (y, _) = deep_xva::neural::forward(
            &net,
            &ndarray::ArrayView2::from_shape((1, 2), p).unwrap(),
        )
        .unwrap();
        y.row(0).to_vec()
    };
    let fdj = analytics::finite_diff_jacobian(&f3, &x, 1e-5);
    let mut max_rel: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let denom = fdj[[i, j]].abs().max(1e-6);
            max_rel = max_rel.max((jac[[i, j]] - fdj[[i, j]]).abs() / denom);
        }
    }
    checks.push(OracleCheck {
        name: "network_jacobian_vs_fd".into(),
        value: max_rel,
        reference: 0.0,
        tolerance: 1e-5,
    });

    Ok(checks)
}
