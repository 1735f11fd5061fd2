#![allow(dead_code)]

use fpk_reset::model::{
    build_model, constant_fields, mode_spec, EdgeSpec, HybridModel, ModelError, ModelSpec, PolyDomain,
    ResetSource, TargetSpec,
};

/// Unit square (mode 0) whose right face `x = 1` resets through
/// `θ ↦ Rθ + b` into the square `[0, 4]²` (mode 1); every other face is
/// absorbed into `out`. Edge 0 is the surface reset.
pub fn affine_reset_model(matrix: [f64; 4], offset: [f64; 2]) -> Result<HybridModel, ModelError> {
    let unit = PolyDomain::from_box(&[0.0, 0.0], &[1.0, 1.0])?;
    let big = PolyDomain::from_box(&[0.0, 0.0], &[4.0, 4.0])?;
    let fields = || constant_fields(vec![0.0, 0.0], &[1.0, 0.0, 0.0, 1.0]);
    let mut edges = vec![EdgeSpec {
        source: ResetSource::new(0, 1),
        target: TargetSpec::Surface {
            mode: 1,
            matrix: matrix.to_vec(),
            offset: offset.to_vec(),
        },
    }];
    for (mode, faces) in [(0, vec![0, 2, 3]), (1, vec![0, 1, 2, 3])] {
        for f in faces {
            edges.push(EdgeSpec {
                source: ResetSource::new(mode, f),
                target: TargetSpec::Terminal("out".into()),
            });
        }
    }
    build_model(ModelSpec {
        dimension: 2,
        modes: vec![
            mode_spec("unit", unit.faces().to_vec(), fields()),
            mode_spec("big", big.faces().to_vec(), fields()),
        ],
        terminal_states: vec!["out".into()],
        reset_edges: edges,
        characteristic_faces: vec![],
    })
}

/// Length of the image of the segment `{1} × [0, 1]` under `θ ↦ Rθ + b`,
/// by summing chords over `n` pieces with Kahan compensation.
pub fn image_length(matrix: [f64; 4], offset: [f64; 2], n: usize) -> f64 {
    let map = |y: f64| {
        [
            matrix[0] + matrix[1] * y + offset[0],
            matrix[2] + matrix[3] * y + offset[1],
        ]
    };
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let mut prev = map(0.0);
    for k in 1..=n {
        let next = map(k as f64 / n as f64);
        let chord = (next[0] - prev[0]).hypot(next[1] - prev[1]);
        let y = chord - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        prev = next;
    }
    sum
}

/// `erfc(z)` from the Maclaurin series of `erf`, for `0 ≤ z ≤ 3`.
pub fn erfc_series(z: f64) -> f64 {
    let mut term = z;
    let mut sum = z;
    let mut n = 0u32;
    while term.abs() > 1e-18 * sum.abs() {
        n += 1;
        term *= -z * z / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum
}

/// `P(τ ≤ t)` for standard Brownian motion started at `x0` leaving `(0, 1)`,
/// from the sine series of the survival probability.
pub fn interval_exit_probability(x0: f64, t: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let mut survival = 0.0;
    for k in 0..2000 {
        let m = (2 * k + 1) as f64;
        survival += 4.0 / (pi * m) * (m * pi * x0).sin() * (-m * m * pi * pi * t / 2.0).exp();
    }
    1.0 - survival
}
