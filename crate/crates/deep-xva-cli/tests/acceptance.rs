//! Acceptance suite: every release criterion in one sequential run, with a
//! pass/fail line per criterion (run with `--nocapture` to watch progress).
//!
//! Heavy trainings reuse each other's artifacts where the criteria allow it
//! (the call trained for the price check is the one evaluated for its
//! exposure profile; the N=200 forward feeds both the exposure comparison
//! and the error-bound diagnostic).

use std::time::Instant;

use deep_xva::analytics::{bs_call_delta, finite_diff_jacobian, forward_exposures, mc_price};
use deep_xva::bsde::{
    self, BsdeProblem, ControlInput, Driver, SolverConfig, StepState, TrainedBsde,
};
use deep_xva::market::{
    derive_seed, simulate, simulate_exact, MarketModel, Scheme, TimeGrid,
};
use deep_xva::neural::{self, NetworkParams};
use deep_xva::xva::{
    a_posteriori_bound, adjustment_mc, combined_adjustment_mc, exposure_profile,
    pathwise_deltas, solve_xva, train_claim, AdjustmentKind, CollateralSpec, EuropeanClaim,
    TrainedClaim, XvaConfig, XvaRates,
};

const MASTER_SEED: u64 = 1;
const CALL_PRICE: f64 = 10.4036;

#[derive(Default)]
struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn check(&mut self, number: usize, name: &str, pass: bool, detail: String) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {number:2} [{verdict}] {name}: {detail}");
        if !pass {
            self.failures.push(format!("criterion {number} ({name}): {detail}"));
        }
    }

    fn finish(self) {
        assert!(
            self.failures.is_empty(),
            "{} acceptance criteria failed:\n{}",
            self.failures.len(),
            self.failures.join("\n")
        );
    }
}

fn outer_paths_seed() -> u64 {
    derive_seed(MASTER_SEED, 0xE0E0)
}

fn train_call(steps: usize, iterations: usize) -> TrainedClaim {
    let model = MarketModel::single_asset(100.0, 0.01, 0.25).unwrap();
    let rates = XvaRates::risk_free(0.01);
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let config = SolverConfig::new(64, iterations, vec![21, 21], MASTER_SEED);
    train_claim(&EuropeanClaim::call(100.0, 1.0), &rates, &model, &grid, &config).unwrap()
}

fn train_forward_r0(steps: usize) -> TrainedClaim {
    let model = MarketModel::single_asset(100.0, 0.0, 0.25).unwrap();
    let rates = XvaRates::risk_free(0.0);
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let config = SolverConfig::new(64, 4000, vec![21, 21], MASTER_SEED);
    train_claim(&EuropeanClaim::forward(100.0, 1.0), &rates, &model, &grid, &config).unwrap()
}

#[test]
fn acceptance_criteria() {
    let mut gate = Gate::default();
    let wall = Instant::now();

    // ---------------------------------------------------------------- 1
    // Call price at the reference architecture and budget: N=200, L=64,
    // 4000 iterations, widths d+20. xi* within 5 bps (0.0052) of 10.4036;
    // desk-scale fallback (N=50, 2000 iterations) within 25 bps.
    let t = Instant::now();
    let call = train_call(200, 4000);
    let err_full = (call.trained.xi - CALL_PRICE).abs();
    let desk = train_call(50, 2000);
    let err_desk = (desk.trained.xi - CALL_PRICE).abs();
    gate.check(
        1,
        "call price",
        err_full <= 0.0052 && err_desk <= 0.026,
        format!(
            "full-scale xi* {:.6} (err {:.4}, tol 0.0052); desk xi* {:.6} (err {:.4}, tol 0.026); {:.0?}",
            call.trained.xi,
            err_full,
            desk.trained.xi,
            err_desk,
            t.elapsed()
        ),
    );

    // ---------------------------------------------------------------- 2
    // Call exposure on 2048 outer paths: DEPE within 0.25 of the flat
    // profile at the exact price, DENE within 0.30 of zero.
    let t = Instant::now();
    let model_call = MarketModel::single_asset(100.0, 0.01, 0.25).unwrap();
    let rates_call = XvaRates::risk_free(0.01);
    let paths = simulate_exact(&model_call, &call.trained.grid, 2048, outer_paths_seed()).unwrap();
    let vp = bsde::evaluate(&call.trained, &call.problem, &paths, None).unwrap();
    let profile = exposure_profile(&vp, &rates_call).unwrap();
    let mut max_depe: f64 = 0.0;
    let mut max_dene: f64 = 0.0;
    for n in 0..profile.nodes.len() {
        max_depe = max_depe.max((profile.depe[n] - CALL_PRICE).abs());
        max_dene = max_dene.max(profile.dene[n].abs());
    }
    gate.check(
        2,
        "call exposure",
        max_depe <= 0.25 && max_dene <= 0.30,
        format!(
            "max |DEPE - {CALL_PRICE}| = {max_depe:.4} (tol 0.25), max |DENE| = {max_dene:.4} (tol 0.30); {:.0?}",
            t.elapsed()
        ),
    );

    // ---------------------------------------------------------------- 3
    // Forward exposure (r = 0): pointwise agreement with the closed forms
    // within 0.30 currency units at every node.
    let t = Instant::now();
    let forward = train_forward_r0(200);
    let model_fwd = MarketModel::single_asset(100.0, 0.0, 0.25).unwrap();
    let rates_fwd = XvaRates::risk_free(0.0);
    let fwd_paths =
        simulate_exact(&model_fwd, &forward.trained.grid, 2048, outer_paths_seed()).unwrap();
    let fwd_vp = bsde::evaluate(&forward.trained, &forward.problem, &fwd_paths, None).unwrap();
    let fwd_profile = exposure_profile(&fwd_vp, &rates_fwd).unwrap();
    let mut max_fwd_depe: f64 = 0.0;
    let mut max_fwd_dene: f64 = 0.0;
    for n in 0..fwd_profile.nodes.len() {
        let (de, dn) = if n == 0 {
            (0.0, 0.0) // clean value at inception is exactly zero
        } else {
            forward_exposures(100.0, 100.0, 0.0, 0.25, 1.0, fwd_profile.nodes[n]).unwrap()
        };
        max_fwd_depe = max_fwd_depe.max((fwd_profile.depe[n] - de).abs());
        max_fwd_dene = max_fwd_dene.max((fwd_profile.dene[n] - dn).abs());
    }
    gate.check(
        3,
        "forward exposure",
        max_fwd_depe <= 0.30 && max_fwd_dene <= 0.30,
        format!(
            "max |DEPE err| = {max_fwd_depe:.4}, max |DENE err| = {max_fwd_dene:.4} (tol 0.30); {:.0?}",
            t.elapsed()
        ),
    );

    // ---------------------------------------------------------------- 4
    // Recursive FVA: uncollateralized forward, r = 0.02, r^f = 0.04.
    // gamma* within 0.002 of the exact 0.0392.
    let t = Instant::now();
    let fva_model = MarketModel::single_asset(100.0, 0.02, 0.25).unwrap();
    let fva_rates =
        XvaRates::constants(0.02, 0.04, 0.04, 0.02, 0.02, 0.0, 0.0, 0.4, 0.4).unwrap();
    let fva_grid = TimeGrid::new(1.0, 100).unwrap();
    let fva_claim = train_claim(
        &EuropeanClaim::forward(100.0, 1.0),
        &fva_rates,
        &fva_model,
        &fva_grid,
        &SolverConfig::new(64, 4000, vec![21, 21], MASTER_SEED),
    )
    .unwrap();
    let fva_solution = solve_xva(
        std::slice::from_ref(&fva_claim),
        &fva_model,
        &fva_rates,
        &CollateralSpec::none(),
        &fva_grid,
        &XvaConfig::new(
            SolverConfig::new(64, 3000, vec![21, 21], derive_seed(MASTER_SEED, 0x77)),
            2048,
            outer_paths_seed(),
        ),
    )
    .unwrap();
    let fva_err = (fva_solution.adjustment - 0.0392).abs();
    gate.check(
        4,
        "recursive FVA",
        fva_err <= 0.002,
        format!(
            "gamma* = {:.6} vs exact 0.0392 (err {:.5}, tol 0.002); clean xi* {:.4} vs 1.9801; {:.0?}",
            fva_solution.adjustment,
            fva_err,
            fva_claim.trained.xi,
            t.elapsed()
        ),
    );

    // ---------------------------------------------------------------- 5
    // Quadrature route vs recursive route on the d = 10 basket with
    // default risk: |gamma* - (-CVA+DVA)| within
    // max(3 standard errors, 1.5% relative).
    let t = Instant::now();
    let d = 10;
    let basket_model = MarketModel::iid_assets(d, 100.0, 0.01, 0.25).unwrap();
    let basket_rates =
        XvaRates::constants(0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.10, 0.4, 0.3).unwrap();
    let basket_grid = TimeGrid::new(1.0, 100).unwrap();
    let basket_claim = train_claim(
        &EuropeanClaim::basket_call(100.0, 1.0),
        &basket_rates,
        &basket_model,
        &basket_grid,
        &SolverConfig::new(64, 10_000, vec![d + 10, d + 10], MASTER_SEED),
    )
    .unwrap();
    let coll = CollateralSpec::none();
    let (mc_xva, mc_xva_se) = combined_adjustment_mc(
        std::slice::from_ref(&basket_claim),
        &basket_model,
        &basket_rates,
        &coll,
        &basket_grid,
        2048,
        outer_paths_seed(),
        Scheme::Exact,
    )
    .unwrap();
    let basket_solution = solve_xva(
        std::slice::from_ref(&basket_claim),
        &basket_model,
        &basket_rates,
        &coll,
        &basket_grid,
        &XvaConfig::new(
            SolverConfig::new(64, 10_000, vec![d + 10, d + 10], derive_seed(MASTER_SEED, 0x77)),
            2048,
            outer_paths_seed(),
        ),
    )
    .unwrap();
    let delta = (basket_solution.adjustment - mc_xva).abs();
    let tol5 = (3.0 * mc_xva_se).max(0.015 * mc_xva.abs());
    gate.check(
        5,
        "quadrature vs recursive xVA (d=10)",
        delta <= tol5,
        format!(
            "quadrature xva = {mc_xva:.6} (se {mc_xva_se:.1e}), gamma* = {:.6}, |diff| = {delta:.6} (tol {tol5:.6}); {:.0?}",
            basket_solution.adjustment,
            t.elapsed()
        ),
    );

    // ---------------------------------------------------------------- 6
    // Basket price oracle at d = 100. A 95% CI half-width of ~0.36
    // requires ~1e6 plain-MC paths given the payoff standard deviation
    // (~183), so that sample size is used here.
    let t = Instant::now();
    let oracle_model = MarketModel::iid_assets(100, 100.0, 0.01, 0.25).unwrap();
    let oracle = mc_price(
        &oracle_model,
        |s: &[f64]| (s.iter().sum::<f64>() - 100.0 * 100.0).max(0.0),
        0.01,
        1.0,
        1_000_000,
        42,
    )
    .unwrap();
    let half = (oracle.ci.1 - oracle.ci.0) / 2.0;
    let contains = oracle.ci.0 <= 157.99 && 157.99 <= oracle.ci.1;
    gate.check(
        6,
        "basket price oracle",
        contains && (0.25..=0.45).contains(&half),
        format!(
            "estimate {:.4}, 95% CI [{:.4}, {:.4}] (half-width {half:.3}), contains 157.99: {contains}; {:.0?}",
            oracle.value, oracle.ci.0, oracle.ci.1, t.elapsed()
        ),
    );

    // ---------------------------------------------------------------- 7
    // Gradient/Jacobian property suite: >= 100 random small instances.
    let t = Instant::now();
    let (jac_checked, jac_worst) = jacobian_fd_suite(120);
    let (loss_checked, loss_worst) = bsde_gradient_fd_suite(8);
    gate.check(
        7,
        "gradient/jacobian suite",
        jac_checked >= 100 && jac_worst <= 1e-5 && loss_worst <= 1e-5,
        format!(
            "{jac_checked} jacobian instances (worst rel {jac_worst:.2e}), {loss_checked} loss-gradient instances (worst rel {loss_worst:.2e}); {:.0?}",
            t.elapsed()
        ),
    );

    // ---------------------------------------------------------------- 8
    // Quadrature error scaling on the constant-exposure oracle plus the
    // market-model martingale/correlation invariants at 1e5 paths.
    let t = Instant::now();
    let (quad_pass, quad_detail) = quadrature_scaling();
    let (mart_pass, mart_detail) = martingale_invariant();
    let (corr_pass, corr_detail) = correlation_invariant();
    gate.check(
        8,
        "quadrature and market invariants",
        quad_pass && mart_pass && corr_pass,
        format!("{quad_detail}; {mart_detail}; {corr_detail}; {:.0?}", t.elapsed()),
    );

    // ---------------------------------------------------------------- 9
    // A posteriori bound: sup-node squared error scales like
    // (dt + terminal loss) with one constant across N in {50, 100, 200}.
    let t = Instant::now();
    let fwd50 = train_forward_r0(50);
    let fwd100 = train_forward_r0(100);
    let mut measured = Vec::new(); // (dt, validation loss, sup-node rms error)
    for trained in [&fwd50, &fwd100, &forward] {
        let grid = &trained.trained.grid;
        let paths =
            simulate_exact(&model_fwd, grid, 4096, derive_seed(MASTER_SEED, 0xB0B)).unwrap();
        let vp = bsde::evaluate(&trained.trained, &trained.problem, &paths, None).unwrap();
        let mut sup_err2: f64 = 0.0;
        for n in 0..=grid.steps() {
            let mut acc = 0.0;
            for p in 0..4096 {
                let exact = paths.states()[[p, n, 0]] - 100.0;
                let e = vp.values()[[p, n]] - exact;
                acc += e * e;
            }
            sup_err2 = sup_err2.max(acc / 4096.0);
        }
        measured.push((
            grid.dt(),
            trained.trained.diagnostics.best_validation_loss,
            sup_err2.sqrt(),
        ));
    }
    let constants: Vec<f64> = measured
        .iter()
        .map(|(dt, loss, err)| err * err / (dt + loss))
        .collect();
    let c_max = constants.iter().cloned().fold(f64::MIN, f64::max);
    let c_min = constants.iter().cloned().fold(f64::MAX, f64::min);
    // with the single fitted constant C = max_N C_N, the measured sup-node
    // error obeys the computable bound C^{1/2} (dt + loss)^{1/2} on every
    // grid; the content of the check is that C is stable across resolutions
    let bound_holds = measured.iter().all(|(dt, loss, err)| {
        *err <= a_posteriori_bound(&[*loss], *dt, c_max.sqrt()).unwrap() + 1e-12
    });
    gate.check(
        9,
        "a posteriori bound stability",
        bound_holds && c_max / c_min <= 3.0,
        format!(
            "fitted constants [{}] (max/min = {:.2}, tol 3); {:.0?}",
            constants
                .iter()
                .map(|c| format!("{c:.3}"))
                .collect::<Vec<_>>()
                .join(", "),
            c_max / c_min,
            t.elapsed()
        ),
    );

    // ---------------------------------------------------------------- 10
    // Reproducibility through the CLI binary: identical config, identical
    // CSV bytes.
    let t = Instant::now();
    let (repro_pass, repro_detail) = cli_reproducibility();
    gate.check(10, "CLI byte reproducibility", repro_pass, format!("{repro_detail}; {:.0?}", t.elapsed()));

    // extra confidence: the delta examples backing the sensitivity op
    let deltas = pathwise_deltas(&fwd_vp, &fwd_paths, &model_fwd).unwrap();
    let mae: f64 =
        deltas.iter().map(|x| (x - 1.0).abs()).sum::<f64>() / deltas.len() as f64;
    let call_deltas = pathwise_deltas(&vp, &paths, &model_call).unwrap();
    let d0: f64 = (0..2048).map(|p| call_deltas[[p, 0, 0]]).sum::<f64>() / 2048.0;
    let bs_delta = bs_call_delta(100.0, 100.0, 0.01, 0.25, 1.0).unwrap();
    println!(
        "supplement: forward delta MAE {mae:.4} (<= 0.05: {}), call delta(0) {d0:.4} vs BS {bs_delta:.4} (err {:.4} <= 0.02: {})",
        mae <= 0.05,
        (d0 - bs_delta).abs(),
        (d0 - bs_delta).abs() <= 0.02
    );
    assert!(mae <= 0.05, "forward delta MAE {mae}");
    assert!((d0 - bs_delta).abs() <= 0.02, "call delta {d0} vs {bs_delta}");

    println!("acceptance total: {:.0?}", wall.elapsed());
    gate.finish();
}

// ------------------------------------------------------------- helpers

/// Random affine+ReLU instances: closed-form Jacobian vs central finite
/// differences, skipping kink-adjacent points.
fn jacobian_fd_suite(target: usize) -> (usize, f64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha_rng(9001);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut seed = 0u64;
    while checked < target {
        seed += 1;
        let d_in = rng.gen_range(1..=4usize);
        let d_out = rng.gen_range(1..=3usize);
        let width = rng.gen_range(4..=8usize);
        let mut net = NetworkParams::init(&[d_in, width, width, d_out], seed).unwrap();
        let shift: Vec<f64> = (0..d_in).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let scale: Vec<f64> = (0..d_in).map(|_| rng.gen_range(0.5..1.5)).collect();
        net.set_normalization(shift, scale).unwrap();
        let x: Vec<f64> = (0..d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if near_kink(&net, &x, 1e-5) {
            continue;
        }
        let jac = neural::jacobian(&net, &x).unwrap();
        let f = |p: &[f64]| -> Vec<f64> {
            let (y, _) = neural::forward(
                &net,
                &ndarray::ArrayView2::from_shape((1, d_in), p).unwrap(),
            )
            .unwrap();
            y.row(0).to_vec()
        };
        let fd = finite_diff_jacobian(&f, &x, 1e-5);
        for i in 0..d_out {
            for j in 0..d_in {
                let denom = fd[[i, j]].abs().max(1e-6);
                worst = worst.max((jac[[i, j]] - fd[[i, j]]).abs() / denom);
            }
        }
        checked += 1;
    }

    fn rand_chacha_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    (checked, worst)
}

fn near_kink(net: &NetworkParams, x: &[f64], tol: f64) -> bool {
    let mut a = ndarray::Array1::from_iter(
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - net.shift()[i]) / net.scale()[i]),
    );
    for l in 0..net.layers() - 1 {
        let mut z = net.weight(l).dot(&a);
        z += &net.bias(l);
        if z.iter().any(|v| v.abs() < tol) {
            return true;
        }
        a = z.mapv(|v| v.max(0.0));
    }
    false
}

struct SuiteDriver;
impl Driver for SuiteDriver {
    fn value(&self, t: f64, s: &StepState, y: f64, z: &[f64]) -> f64 {
        -0.25 * y + 0.15 * z[0] - 0.05 * z.last().unwrap() + 0.02 * s.assets[0] + 0.1 * t
    }
    fn dy(&self, _t: f64, _s: &StepState, _y: f64, _z: &[f64]) -> f64 {
        -0.25
    }
    fn dz(&self, _t: f64, _s: &StepState, _y: f64, _z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[0] += 0.15;
        let last = out.len() - 1;
        out[last] -= 0.05;
    }
}

/// Finite-difference check of the full unrolled loss gradient (xi and every
/// network parameter) on small random instances.
fn bsde_gradient_fd_suite(instances: usize) -> (usize, f64) {
    use rand::{Rng, SeedableRng};
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let seed = 3000 + inst as u64;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = rng.gen_range(1..=2usize);
        let steps = rng.gen_range(2..=3usize);
        let model = MarketModel::iid_assets(d, 10.0, 0.03, 0.35).unwrap();
        let grid = TimeGrid::new(0.4, steps).unwrap();
        let paths = simulate_exact(&model, &grid, 2, seed).unwrap();
        let problem = BsdeProblem {
            driver: Box::new(SuiteDriver),
            terminal: Box::new(move |x: &[f64]| {
                x.iter().sum::<f64>() * 0.4 + (x[0] - 10.0).max(0.0)
            }),
            control_dim: d,
            input: ControlInput::AssetState,
            requires_aux: false,
        };
        let mut nets = Vec::new();
        for n in 0..steps {
            let mut net = NetworkParams::init(&[d, 4, d], seed * 10 + n as u64).unwrap();
            let (shift, scale) = model.marginal_moments(grid.node(n));
            net.set_normalization(shift, scale).unwrap();
            for l in 0..net.layers() {
                for b in net.bias_slice_mut(l) {
                    *b += rng.gen_range(0.05..0.4);
                }
            }
            nets.push(net);
        }
        let xi = rng.gen_range(-1.0..3.0);
        let (_, grad_xi, net_grads) =
            bsde::loss_gradients(&problem, &paths, None, xi, &nets).unwrap();
        let eval = |xi: f64, nets: &[NetworkParams]| -> f64 {
            bsde::path_loss(&problem, &paths, None, xi, nets).unwrap()
        };
        let h = 1e-6;
        let fd_xi = (eval(xi + h, &nets) - eval(xi - h, &nets)) / (2.0 * h);
        worst = worst.max((grad_xi - fd_xi).abs() / fd_xi.abs().max(1e-7));
        for n in 0..steps {
            for i in 0..nets[n].param_count() {
                let mut probe = nets.clone();
                let orig = probe[n].flat()[i];
                probe[n].flat_mut()[i] = orig + h;
                let up = eval(xi, &probe);
                probe[n].flat_mut()[i] = orig - h;
                let down = eval(xi, &probe);
                let fd = (up - down) / (2.0 * h);
                worst = worst.max((net_grads[n][i] - fd).abs() / fd.abs().max(1e-7));
            }
        }
    }
    (instances, worst)
}

/// Rectangle-rule error on the constant-exposure oracle halves with dt.
fn quadrature_scaling() -> (bool, String) {
    let model = MarketModel::single_asset(100.0, 0.0, 0.25).unwrap();
    let rates = XvaRates::constants(0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.10, 0.4, 0.3).unwrap();
    let v = 100.0;
    let exact = 0.6 * 0.01 * v * (1.0 - (-0.12f64).exp()) / 0.12;
    let mut errors = Vec::new();
    for steps in [20usize, 40, 80] {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let claim = constant_claim(&grid, v);
        let (est, _) = adjustment_mc(
            std::slice::from_ref(&claim),
            &model,
            &rates,
            &CollateralSpec::none(),
            AdjustmentKind::Dva,
            &grid,
            32,
            5,
            Scheme::Exact,
        )
        .unwrap();
        errors.push((est - exact).abs());
    }
    let c = errors[0] / (1.0 / 20.0);
    let bound_ok = errors[1] <= 1.1 * c * (1.0 / 40.0) && errors[2] <= 1.1 * c * (1.0 / 80.0);
    let r1 = errors[0] / errors[1];
    let r2 = errors[1] / errors[2];
    let ratios_ok = (1.8..=2.2).contains(&r1) && (1.8..=2.2).contains(&r2);
    (
        bound_ok && ratios_ok,
        format!(
            "quadrature errors {:.2e}/{:.2e}/{:.2e} halve with dt (ratios {r1:.2}, {r2:.2})",
            errors[0], errors[1], errors[2]
        ),
    )
}

fn constant_claim(grid: &TimeGrid, value: f64) -> TrainedClaim {
    let rates = XvaRates::risk_free(0.0);
    let claim = EuropeanClaim {
        payoff: std::sync::Arc::new(move |_: &[f64]| value),
        maturity: grid.horizon(),
        label: "constant".into(),
    };
    let problem = deep_xva::xva::clean_claim_problem(&claim, &rates, 1);
    let mut networks = Vec::new();
    for n in 0..grid.steps() {
        let mut net = NetworkParams::init(&[1, 4, 1], n as u64).unwrap();
        let l = net.layers() - 1;
        net.weight_slice_mut(l).fill(0.0);
        net.bias_slice_mut(l).fill(0.0);
        networks.push(net);
    }
    TrainedClaim {
        claim,
        problem,
        trained: TrainedBsde {
            grid: grid.clone(),
            xi: value,
            networks,
            diagnostics: Default::default(),
        },
    }
}

/// Sample mean of S_t equals s0 within 4 standard errors at every node for
/// both schemes at zero rate, with 1e5 paths.
fn martingale_invariant() -> (bool, String) {
    let model = MarketModel::single_asset(100.0, 0.0, 0.25).unwrap();
    let grid = TimeGrid::new(1.0, 10).unwrap();
    let count = 100_000;
    let mut worst_z: f64 = 0.0;
    for scheme in [Scheme::Euler, Scheme::Exact] {
        let batch = simulate(&model, &grid, count, 77, scheme).unwrap();
        for n in 1..=10 {
            let xs: Vec<f64> = (0..count).map(|p| batch.states()[[p, n, 0]]).collect();
            let mean = xs.iter().sum::<f64>() / count as f64;
            let var =
                xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / count as f64;
            let z = (mean - 100.0).abs() / (var / count as f64).sqrt();
            worst_z = worst_z.max(z);
        }
    }
    (
        worst_z < 4.0,
        format!("martingale worst |z| = {worst_z:.2} over both schemes (tol 4)"),
    )
}

/// Sample correlation of one-step log returns matches the input matrix
/// within 4 standard errors at 1e5 paths.
fn correlation_invariant() -> (bool, String) {
    let corr = ndarray::array![[1.0, 0.6], [0.6, 1.0]];
    let model =
        MarketModel::new(vec![100.0, 80.0], vec![0.0, 0.0], vec![0.2, 0.3], corr).unwrap();
    let grid = TimeGrid::new(1.0, 1).unwrap();
    let count = 100_000;
    let batch = simulate_exact(&model, &grid, count, 11).unwrap();
    let mut xs = Vec::with_capacity(count);
    let mut ys = Vec::with_capacity(count);
    for p in 0..count {
        xs.push((batch.states()[[p, 1, 0]] / 100.0).ln());
        ys.push((batch.states()[[p, 1, 1]] / 80.0).ln());
    }
    let mx = xs.iter().sum::<f64>() / count as f64;
    let my = ys.iter().sum::<f64>() / count as f64;
    let (mut cxy, mut cxx, mut cyy) = (0.0, 0.0, 0.0);
    for p in 0..count {
        cxy += (xs[p] - mx) * (ys[p] - my);
        cxx += (xs[p] - mx) * (xs[p] - mx);
        cyy += (ys[p] - my) * (ys[p] - my);
    }
    let rho = cxy / (cxx * cyy).sqrt();
    let z = (rho - 0.6).abs() / ((1.0 - 0.36) / (count as f64).sqrt());
    (
        z < 4.0,
        format!("correlation rho_hat = {rho:.4} vs 0.6 (|z| = {z:.2}, tol 4)"),
    )
}

/// Criterion 10 drives the installed binary twice and compares bytes.
fn cli_reproducibility() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("exp.cfg");
    std::fs::write(
        &config_path,
        r#"
[market]
dim = 1
initial = 100.0
rate = 0.0
sigma = 0.25

[claim]
kind = forward
strike = 100.0
maturity = 1.0

[rates]
r = 0.0
funding_lend = 0.0
funding_borrow = 0.0
collateral_lend = 0.0
collateral_borrow = 0.0
lambda_bank = 0.01
lambda_cpty = 0.10
recovery_bank = 0.4
recovery_cpty = 0.3

[network]
hidden = 8, 8

[training]
steps = 10
batch = 16
outer_paths = 64
iterations = 60
seed = 3

[outputs]
directory = out
"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        for cmd in ["exposure", "xva-mc"] {
            let status = std::process::Command::new(env!("CARGO_BIN_EXE_deep-xva"))
                .args([
                    cmd,
                    "--config",
                    config_path.to_str().unwrap(),
                    "--out",
                    out.to_str().unwrap(),
                ])
                .output()
                .unwrap();
            if !status.status.success() {
                return (
                    false,
                    format!(
                        "{cmd} failed: {}",
                        String::from_utf8_lossy(&status.stderr)
                    ),
                );
            }
        }
        outputs.push((
            std::fs::read(out.join("exposure.csv")).unwrap(),
            std::fs::read(out.join("adjustments.csv")).unwrap(),
        ));
    }
    let identical = outputs[0] == outputs[1];
    (
        identical,
        format!(
            "exposure.csv and adjustments.csv byte-identical across reruns: {identical}"
        ),
    )
}
