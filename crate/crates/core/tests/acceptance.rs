//! Acceptance suite: one pass/fail line per criterion, tolerances pinned
//! below. Runs as a plain binary so the lines are always printed.

mod common;

use std::sync::Arc;
use std::time::Instant;

use fpk_reset::fpk::{build_grid, DensityState, FluxScheme, FpkSolver, GridLayout};
use fpk_reset::model::{
    build_model, mode_spec, AffineField, EdgeSpec, HybridModel, InitialLaw, ModelSpec, PolyDomain, ResetSource,
    TargetSpec, VectorFieldSet,
};
use fpk_reset::scenarios::{
    analytic_first_passage, brownian_reset_model, exit_left_probability, first_exit_model, thermostat_initial,
    thermostat_model, zeno_trap_model, BrownianResetParams, FirstExitParams, ThermostatParams, ZenoTrapParams,
};
use fpk_reset::simulate::{ensemble, SimConfig};
use fpk_reset::validate::{
    compare_mc_pde, discrete_stokes_check, dynkin_check, flux_continuity_residual, mass_balance, FaceField,
    TestFunction,
};

// Criterion 1
const C1_X0: f64 = 1.0;
const C1_DX: f64 = 0.01;
const C1_TIMES: [f64; 3] = [0.25, 0.5, 1.0];
const C1_PDE_TOL: f64 = 5e-3;
const C1_N: usize = 100_000;
const C1_MC_DT: f64 = 1e-3;
const C1_SE_FACTOR: f64 = 3.0;
const C1_HIT_BIAS: f64 = 2e-2;
const C1_MAX_SECONDS: f64 = 60.0;
// Criterion 2
const C2_STEPS: usize = 10_000;
const C2_TOL: f64 = 1e-8;
// Criterion 3
const C3_RESOLUTION: usize = 80;
const C3_STATIONARY_TOL: f64 = 1e-6;
const C3_N: usize = 100_000;
const C3_MC_DT: f64 = 1e-2;
const C3_T: f64 = 50.0;
const C3_L1_TOL: f64 = 0.05;
// Criterion 4
const C4_RESOLUTIONS: [usize; 3] = [1600, 3200, 6400];
const C4_MIN_RATIO: f64 = 1.5;
// Criterion 5
const C5_RESOLUTIONS: [usize; 3] = [200, 400, 800];
const C5_T: f64 = 0.5;
const C5_MAX_SPREAD: f64 = 0.1;
// Criterion 6
const C6_N: usize = 100_000;
const C6_DT: f64 = 1e-3;
const C6_T: f64 = 1.0;
const C6_SE_FACTOR: f64 = 3.0;
const C6_BIAS: f64 = 1e-2;
const C6_STEEP_RADIUS: f64 = 1.2;
// Criterion 7
const C7_RESOLUTIONS: [usize; 3] = [20, 40, 80];
const C7_MIN_RATIO: f64 = 3.5;
// Criterion 8
const C8_TOL: f64 = 1e-6;
// Criterion 9
const C9_X0: f64 = 0.3;
const C9_T: f64 = 5.0;
const C9_RESOLUTION: usize = 100;
const C9_PDE_TOL: f64 = 1e-2;
const C9_N: usize = 40_000;
const C9_MC_DT: f64 = 1e-4;
const C9_SE_FACTOR: f64 = 3.0;
// Criterion 10
const C10_N: usize = 1000;
const C10_DT: f64 = 1e-5;
const C10_HORIZON: f64 = 1.0;
const C10_MIN_FRACTION: f64 = 0.99;

const SEED: u64 = 20_240_601;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn point(x: &[f64]) -> InitialLaw {
    InitialLaw::Point {
        mode: 0,
        position: x.to_vec(),
    }
}

fn brownian() -> HybridModel {
    brownian_reset_model(&BrownianResetParams::new(C1_X0)).unwrap()
}

fn first_passage() -> Outcome {
    let start = Instant::now();
    let m = brownian();
    let n = (8.0 / C1_DX).round() as usize;
    let grid = build_grid(&m, n).unwrap();
    let mut solver = FpkSolver::new(&m, grid, FluxScheme::default()).unwrap();
    let mut d = solver.initial_state(&point(&[C1_X0])).unwrap();
    let hit = m.terminal_index("hit").unwrap();
    let dt = 0.45 * C1_DX * C1_DX;
    let mut pde_err = 0.0f64;
    let mut pde_q = Vec::new();
    for &t in &C1_TIMES {
        solver.evolve_to(&mut d, t, dt).unwrap();
        pde_err = pde_err.max((d.terminal[hit] - analytic_first_passage(C1_X0, t)).abs());
        pde_q.push(d.terminal[hit]);
    }
    let meas = ensemble(&m, &point(&[C1_X0]), C1_N, &SimConfig::new(1.0, C1_MC_DT), &C1_TIMES, SEED).unwrap();
    let mut mc_ok = true;
    let mut worst = 0.0f64;
    for (snap, &t) in meas.snapshots.iter().zip(&C1_TIMES) {
        let exact = analytic_first_passage(C1_X0, t);
        let q_hat = snap.terminal_counts[hit] as f64 / meas.effective_size() as f64;
        let se = (exact * (1.0 - exact) / meas.effective_size() as f64).sqrt();
        let excess = (q_hat - exact).abs() / (C1_SE_FACTOR * se + C1_HIT_BIAS);
        worst = worst.max(excess);
        mc_ok &= excess <= 1.0;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        pde_err <= C1_PDE_TOL && mc_ok && secs <= C1_MAX_SECONDS,
        format!(
            "PDE max error {pde_err:.2e} (tol {C1_PDE_TOL:.0e}); MC worst |error|/(3SE+2e-2) {worst:.3}; \
             runtime {secs:.1}s (limit {C1_MAX_SECONDS}s)"
        ),
    )
}

/// Largest `|Σp·vol + Σq − 1|` over `C2_STEPS` steps at the stability bound.
fn max_mass_defect(m: &HybridModel, n: usize, law: &InitialLaw) -> f64 {
    let grid = build_grid(m, n).unwrap();
    let mut solver = FpkSolver::new(m, grid.clone(), FluxScheme::default()).unwrap();
    let mut d = solver.initial_state(law).unwrap();
    let dt = solver.stability_bound();
    let mut worst = (mass_balance(&grid, &d) - 1.0).abs();
    solver
        .evolve_with(&mut d, dt, C2_STEPS, |s| {
            worst = worst.max((mass_balance(&grid, s) - 1.0).abs());
        })
        .unwrap();
    worst
}

/// Unit square with constant drift and axis-aligned noise whose `x`
/// amplitude grows with `x`, absorbing on every face.
fn square_with_varying_noise() -> HybridModel {
    let unit = PolyDomain::from_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
    let fields = VectorFieldSet::new(
        Arc::new(AffineField::constant(vec![0.3, -0.2])),
        vec![
            Arc::new(AffineField::new(vec![0.2, 0.0, 0.0, 0.0], vec![0.2, 0.0])),
            Arc::new(AffineField::constant(vec![0.0, 0.25])),
        ],
    );
    build_model(ModelSpec {
        dimension: 2,
        modes: vec![mode_spec("square", unit.faces().to_vec(), fields)],
        terminal_states: vec!["out".into()],
        reset_edges: (0..4)
            .map(|f| EdgeSpec {
                source: ResetSource::new(0, f),
                target: TargetSpec::Terminal("out".into()),
            })
            .collect(),
        characteristic_faces: vec![],
    })
    .unwrap()
}

fn mass_conservation() -> Outcome {
    let tp = ThermostatParams::fixture_1d();
    let cases: Vec<(&str, HybridModel, usize, InitialLaw)> = vec![
        ("thermostat", thermostat_model(&tp).unwrap(), 80, thermostat_initial(&tp)),
        ("brownian_reset", brownian(), 400, point(&[C1_X0])),
        (
            "first_exit",
            first_exit_model(&FirstExitParams::interval(0.0, 1.0).unwrap()).unwrap(),
            100,
            point(&[C9_X0]),
        ),
        ("zeno_trap", zeno_trap_model(&ZenoTrapParams::default()).unwrap(), 1000, point(&[0.5])),
        (
            "square_2d",
            square_with_varying_noise(),
            20,
            InitialLaw::Gaussian {
                mode: 0,
                mean: vec![0.5, 0.5],
                std: 0.1,
            },
        ),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, m, n, law) in &cases {
        let d = max_mass_defect(m, *n, law);
        worst = worst.max(d);
        parts.push(format!("{name} {d:.1e}"));
    }
    outcome(
        worst <= C2_TOL,
        format!("max |mass - 1| over {C2_STEPS} steps: {} (tol {C2_TOL:.0e}); the 2D thermostat has no box grid", parts.join(", ")),
    )
}

fn thermostat_stationary(m: &HybridModel, p: &ThermostatParams, n: usize) -> (GridLayout, DensityState, f64) {
    let grid = build_grid(m, n).unwrap();
    let mut solver = FpkSolver::new(m, grid.clone(), FluxScheme::default()).unwrap();
    let mut d = solver.initial_state(&thermostat_initial(p)).unwrap();
    let dt = solver.stability_bound();
    let change = solver.evolve_to_stationarity(&mut d, dt, 1.0, C3_STATIONARY_TOL, 1000.0).unwrap();
    (grid, d, change)
}

fn thermostat_cross_validation() -> Outcome {
    let p = ThermostatParams::fixture_1d();
    let m = thermostat_model(&p).unwrap();
    let (grid, d, change) = thermostat_stationary(&m, &p, C3_RESOLUTION);
    let meas = ensemble(&m, &thermostat_initial(&p), C3_N, &SimConfig::new(C3_T, C3_MC_DT), &[C3_T], SEED).unwrap();
    let dist = compare_mc_pde(&grid, &meas, &d, C3_T).unwrap();
    outcome(
        change < C3_STATIONARY_TOL && dist.l1 <= C3_L1_TOL,
        format!(
            "L1 {:.4} (tol {C3_L1_TOL}); stationary after t={:.0} with change {change:.1e}; n={C3_RESOLUTION}, MC dt={C3_MC_DT}",
            dist.l1, d.time
        ),
    )
}

fn flux_continuity() -> Outcome {
    let p = ThermostatParams::fixture_1d();
    let m = thermostat_model(&p).unwrap();
    let residuals: Vec<f64> = C4_RESOLUTIONS
        .iter()
        .map(|&n| {
            let grid = build_grid(&m, n).unwrap();
            let mut solver = FpkSolver::new(&m, grid.clone(), FluxScheme::default()).unwrap();
            let d = solver.stationary_state().unwrap();
            flux_continuity_residual(&m, &grid, &d).unwrap().max_residual
        })
        .collect();
    let ratios: Vec<f64> = residuals.windows(2).map(|w| w[0] / w[1]).collect();
    outcome(
        ratios.iter().all(|&r| r >= C4_MIN_RATIO),
        format!("residuals [{}] at n={C4_RESOLUTIONS:?}; ratios {ratios:.2?} (min {C4_MIN_RATIO})", sci(&residuals)),
    )
}

fn absorbing_condition() -> Outcome {
    let m = brownian();
    let mut face_zero = true;
    let mut constants = Vec::new();
    for &n in &C5_RESOLUTIONS {
        let grid = build_grid(&m, n).unwrap();
        let mut solver = FpkSolver::new(&m, grid.clone(), FluxScheme::default()).unwrap();
        let mut d = solver.initial_state(&point(&[C1_X0])).unwrap();
        let dt = solver.stability_bound();
        solver.evolve_to(&mut d, C5_T, dt).unwrap();
        let padded = solver.apply_absorbing_bc(&d).unwrap();
        for bf in &grid.boundary {
            let g = &grid.modes[bf.mode];
            let (i, j) = g.cell_ij(bf.cell);
            let ghost = if bf.upper { i as isize + 1 } else { i as isize - 1 };
            let face_value = 0.5 * (padded[bf.mode][g.padded(ghost, j as isize)] + d.modes[bf.mode][bf.cell]);
            face_zero &= face_value == 0.0;
        }
        let g = &grid.modes[0];
        let max = d.modes[0].iter().cloned().fold(0.0, f64::max);
        // Cell next to the absorbing face at 0.
        constants.push(d.modes[0][0] / (g.axes[0].dx * max));
    }
    let hi = constants.iter().cloned().fold(f64::MIN, f64::max);
    let lo = constants.iter().cloned().fold(f64::MAX, f64::min);
    let spread = (hi - lo) / hi;
    outcome(
        face_zero && spread <= C5_MAX_SPREAD,
        format!(
            "boundary face density exactly 0: {face_zero}; C = p_adj/(dx max p) {constants:.4?} at n={C5_RESOLUTIONS:?}, \
             relative spread {spread:.3} (tol {C5_MAX_SPREAD})"
        ),
    )
}

fn dynkin_identity() -> Outcome {
    let p = ThermostatParams::fixture_1d();
    let m = thermostat_model(&p).unwrap();
    let cfg = SimConfig::new(C6_T, C6_DT);
    let estimate = |phi: &TestFunction| {
        dynkin_check(&m, &thermostat_initial(&p), phi, C6_N, &cfg, &[C6_T], SEED)
            .unwrap()
            .remove(0)
    };
    // Same bump on both modes, so the identity resets leave it unchanged.
    // Centred between the thresholds with radius half-gap plus margin.
    let centre = 0.5 * (p.psi_min + p.psi_max);
    let radius = 0.5 * (p.psi_max - p.psi_min) + p.margin;
    let phi = TestFunction::bump(None, vec![centre], radius).phi_compatible();
    let est = estimate(&phi);
    let tol = C6_SE_FACTOR * est.standard_error + C6_BIAS;
    let sampled = phi.max_surface_jump(&m);
    // Reported only: a bump steep at both thresholds, where the clipping
    // bias of linear hit detection (order sqrt(dt)) exceeds the allowance.
    let steep = estimate(&TestFunction::bump(None, vec![centre], C6_STEEP_RADIUS).phi_compatible());
    outcome(
        est.residual.abs() <= tol && est.max_surface_jump_sum == 0.0 && sampled == 0.0,
        format!(
            "bump radius {radius}: residual {:.2e} (tol 3SE+1e-2 = {tol:.2e}); max |jump sum| {:.1e}, \
             sampled |jump| {sampled:.1e}; info: radius {C6_STEEP_RADIUS} residual {:.2e} (SE {:.1e})",
            est.residual, est.max_surface_jump_sum, steep.residual, steep.standard_error
        ),
    )
}

fn square_stokes_residual(n: usize) -> f64 {
    let m = square_with_varying_noise();
    let grid = build_grid(&m, n).unwrap();
    // A = (sin x · e^y, x y²), div A = cos x · e^y + 2 x y.
    let field = FaceField::sample(&grid, |_, x| vec![x[0].sin() * x[1].exp(), x[0] * x[1] * x[1]]);
    let div: Vec<Vec<f64>> = grid
        .modes
        .iter()
        .map(|g| {
            (0..g.n_cells())
                .map(|c| {
                    let x = g.cell_center(c);
                    x[0].cos() * x[1].exp() + 2.0 * x[0] * x[1]
                })
                .collect()
        })
        .collect();
    discrete_stokes_check(&grid, &field, Some(&div), true).unwrap().residual
}

fn discrete_stokes() -> Outcome {
    let residuals: Vec<f64> = C7_RESOLUTIONS.iter().map(|&n| square_stokes_residual(n)).collect();
    let ratios: Vec<f64> = residuals.windows(2).map(|w| w[0] / w[1]).collect();
    let m = thermostat_model(&ThermostatParams::fixture_1d()).unwrap();
    let grid = build_grid(&m, 32).unwrap();
    let mut field = FaceField::sample(&grid, |_, _| vec![1.0]);
    let jumps = [0.375, -1.25];
    for (h, v) in jumps.iter().enumerate() {
        field.h_jump[h] = *v;
    }
    let with = discrete_stokes_check(&grid, &field, None, true).unwrap();
    let without = discrete_stokes_check(&grid, &field, None, false).unwrap();
    let expected: f64 = grid.h_faces.iter().zip(jumps).map(|(f, j)| j * f.area).sum();
    let exact = with.residual == 0.0 && (without.volume - without.boundary) == -expected;
    outcome(
        ratios.iter().all(|&r| r >= C7_MIN_RATIO) && exact,
        format!(
            "smooth 2D residuals [{}] ratios {ratios:.2?} (min {C7_MIN_RATIO}); \
             H-jump term reproduced exactly: {exact}",
            sci(&residuals)
        ),
    )
}

fn jacobian_factor() -> Outcome {
    let (s, th) = (1.7f64, 0.3f64);
    let matrix = [s * th.cos(), -s * th.sin(), s * th.sin(), s * th.cos()];
    let offset = [1.2, 1.0];
    let m = common::affine_reset_model(matrix, offset).unwrap();
    let h = m.jacobian_factor(0, &[1.0, 0.5]).unwrap();
    let quad = common::image_length(matrix, offset, 4096);
    let err = (h - quad).abs().max((h - s).abs());
    outcome(
        err <= C8_TOL,
        format!("scaled rotation by {s}: h = {h:.12}, arc-length quadrature {quad:.12}, error {err:.1e} (tol {C8_TOL:.0e})"),
    )
}

fn gamblers_ruin() -> Outcome {
    let m = first_exit_model(&FirstExitParams::interval(0.0, 1.0).unwrap()).unwrap();
    let left = m.terminal_index("left").unwrap();
    let exact = exit_left_probability(C9_X0, 0.0, 1.0);
    let grid = build_grid(&m, C9_RESOLUTION).unwrap();
    let mut solver = FpkSolver::new(&m, grid, FluxScheme::default()).unwrap();
    let mut d = solver.initial_state(&point(&[C9_X0])).unwrap();
    let dt = solver.stability_bound();
    solver.evolve_to(&mut d, C9_T, dt).unwrap();
    let pde_err = (d.terminal[left] - exact).abs();
    let meas = ensemble(&m, &point(&[C9_X0]), C9_N, &SimConfig::new(C9_T, C9_MC_DT), &[C9_T], SEED).unwrap();
    let n = meas.effective_size() as f64;
    let r_hat = meas.snapshots[0].terminal_counts[left] as f64 / n;
    let se = (exact * (1.0 - exact) / n).sqrt();
    let mc_err = (r_hat - exact).abs();
    outcome(
        pde_err <= C9_PDE_TOL && mc_err <= C9_SE_FACTOR * se,
        format!(
            "PDE r_left {:.5} (error {pde_err:.1e}, tol {C9_PDE_TOL:.0e}); MC {r_hat:.5} (error {mc_err:.1e}, 3SE {:.1e})",
            d.terminal[left],
            C9_SE_FACTOR * se
        ),
    )
}

fn zeno_guard() -> Outcome {
    let m = zeno_trap_model(&ZenoTrapParams::default()).unwrap();
    let cfg = SimConfig::new(C10_HORIZON, C10_DT);
    let run = || ensemble(&m, &point(&[0.5]), C10_N, &cfg, &[C10_HORIZON], SEED).unwrap();
    let a = run();
    let b = run();
    let fraction = a.zeno_count as f64 / C10_N as f64;
    let snap = &a.snapshots[0];
    let counted: usize = snap.modes.iter().map(|c| c.count(1)).sum::<usize>()
        + snap.terminal_counts.iter().sum::<u64>() as usize;
    let excluded = counted == a.effective_size();
    outcome(
        fraction >= C10_MIN_FRACTION && a == b && excluded,
        format!(
            "flagged {fraction:.3} of paths (min {C10_MIN_FRACTION}), cap {}; excluded from snapshots: {excluded}; \
             repeat run identical: {}",
            cfg.effective_zeno_cap(),
            a == b
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("first-passage law", first_passage),
        ("mass conservation", mass_conservation),
        ("thermostat cross-validation", thermostat_cross_validation),
        ("flux continuity", flux_continuity),
        ("absorbing condition", absorbing_condition),
        ("Dynkin identity", dynkin_identity),
        ("discrete Stokes", discrete_stokes),
        ("Jacobian factor", jacobian_factor),
        ("gambler's ruin", gamblers_ruin),
        ("Zeno guard", zeno_guard),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {status} {name}: {} [{:.1}s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
