use std::sync::Arc;

use fpk_reset::fpk::{build_grid, FluxScheme, FpkSolver};
use fpk_reset::model::{
    build_model, mode_spec, AffineField, EdgeSpec, HybridModel, InitialLaw, ModelSpec, PolyDomain, ResetSource,
    TargetSpec, VectorFieldSet,
};
use fpk_reset::scenarios::{
    brownian_reset_model, first_exit_model, thermostat_initial, thermostat_model, zeno_trap_model,
    BrownianResetParams, FirstExitParams, ThermostatParams, ZenoTrapParams,
};
use fpk_reset::validate::mass_balance;
use proptest::prelude::*;

/// Unit square, absorbing everywhere, with noise fields `(s, 0)` and
/// `(c, s)`: the diffusion matrix has off-diagonal entry `s·c`.
fn correlated_square(s: f64, c: f64) -> HybridModel {
    let unit = PolyDomain::from_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
    let fields = VectorFieldSet::new(
        Arc::new(AffineField::new(vec![-0.5, 0.0, 0.0, -0.5], vec![0.25, 0.25])),
        vec![
            Arc::new(AffineField::constant(vec![s, 0.0])),
            Arc::new(AffineField::new(vec![0.0, 0.0, 0.1, 0.0], vec![c, s])),
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

/// `d/dt (Σ p·vol + Σ q)` as assembled from the solver's own rates.
fn mass_rate(m: &HybridModel, n: usize, law: &InitialLaw) -> (f64, f64) {
    let grid = build_grid(m, n).unwrap();
    let mut solver = FpkSolver::new(m, grid.clone(), FluxScheme::default()).unwrap();
    let d = solver.initial_state(law).unwrap();
    let rate = solver.adjoint_apply(&d).unwrap();
    let current = solver.probability_current(&d).unwrap();
    let transfer = solver.transfer_flux(&current).unwrap();
    let mut total = 0.0;
    let mut scale = 0.0;
    for (g, r) in grid.modes.iter().zip(&rate) {
        for v in r {
            total += v * g.cell_volume;
            scale += (v * g.cell_volume).abs();
        }
    }
    for s in &transfer.source {
        total += s.iter().sum::<f64>();
    }
    total += transfer.terminal_rate.iter().sum::<f64>();
    (total, scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cross_diffusion_conserves_mass_rate(
        s in 0.1f64..0.4, c in -0.3f64..0.3,
        mx in 0.3f64..0.7, my in 0.3f64..0.7, std in 0.08f64..0.2,
        n in 8usize..24,
    ) {
        let m = correlated_square(s, c);
        let law = InitialLaw::Gaussian { mode: 0, mean: vec![mx, my], std };
        let (total, scale) = mass_rate(&m, n, &law);
        prop_assert!(total.abs() <= 1e-12 * scale.max(1.0), "{total} (scale {scale})");
    }

    #[test]
    fn reset_injections_conserve_mass_rate(x0 in 0.2f64..3.0, std in 0.1f64..0.5) {
        let m = brownian_reset_model(&BrownianResetParams::new(x0)).unwrap();
        let law = InitialLaw::Gaussian { mode: 0, mean: vec![x0], std };
        let (total, scale) = mass_rate(&m, 300, &law);
        prop_assert!(total.abs() <= 1e-12 * scale.max(1.0), "{total} (scale {scale})");
    }
}

fn scenario_suite() -> Vec<(&'static str, HybridModel, usize, InitialLaw)> {
    let tp = ThermostatParams::fixture_1d();
    let point = |x: f64| InitialLaw::Point {
        mode: 0,
        position: vec![x],
    };
    vec![
        ("thermostat", thermostat_model(&tp).unwrap(), 80, thermostat_initial(&tp)),
        ("brownian_reset", brownian_reset_model(&BrownianResetParams::new(1.0)).unwrap(), 400, point(1.0)),
        (
            "first_exit",
            first_exit_model(&FirstExitParams::interval(0.0, 1.0).unwrap()).unwrap(),
            100,
            point(0.3),
        ),
        ("zeno_trap", zeno_trap_model(&ZenoTrapParams::default()).unwrap(), 1000, point(0.5)),
    ]
}

#[test]
fn scenarios_stay_nonnegative_at_half_the_stability_bound() {
    for (name, m, n, law) in scenario_suite() {
        let grid = build_grid(&m, n).unwrap();
        let mut solver = FpkSolver::new(&m, grid.clone(), FluxScheme::default()).unwrap();
        let mut d = solver.initial_state(&law).unwrap();
        let dt = 0.5 * solver.stability_bound();
        let mut worst = 0.0f64;
        solver
            .evolve_with(&mut d, dt, 4000, |s| {
                for p in &s.modes {
                    let max = p.iter().cloned().fold(0.0, f64::max);
                    let min = p.iter().cloned().fold(0.0, f64::min);
                    worst = worst.min(min / max);
                }
            })
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(worst >= -1e-12, "{name}: min/max {worst}");
        assert!((mass_balance(&grid, &d) - 1.0).abs() <= 1e-8, "{name}");
    }
}
