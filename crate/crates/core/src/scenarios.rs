//! Ready-made models: a two-mode stochastic thermostat, first-exit problems
//! on a polytope, a Brownian first-passage model with a closed-form answer,
//! and a reset loop that trips the Zeno guard.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::{
    build_model, mode_spec, AffineField, EdgeSpec, HalfSpace, HybridModel, InitialLaw, ModelError,
    ModelSpec, ResetSource, TargetSpec, VectorField, VectorFieldSet,
};

/// Two-mode thermostat: mode 0 (heater off) lives on `{Ψ > Ψ_min}`, mode 1
/// (heater on) on `{Ψ < Ψ_max}`, with `Ψ(θ) = ⟨α, θ⟩`. Hitting a threshold
/// switches the mode and keeps `θ`.
///
/// Each half-space is closed off by a far face parallel to the thresholds,
/// `margin` beyond them, whose outflux goes to the terminal `far_field`.
/// Missing keys in a serialized form take their values from
/// [`fixture_1d`](Self::fixture_1d).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermostatParams {
    pub dimension: usize,
    /// `F_q` row-major, one per mode.
    pub drift_matrix: [Vec<f64>; 2],
    /// `g_q`, one per mode.
    pub drift_offset: [Vec<f64>; 2],
    /// Constant diffusion `γ`, row-major; column `r` is `A_r`.
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub psi_min: f64,
    pub psi_max: f64,
    pub margin: f64,
}

impl Default for ThermostatParams {
    fn default() -> Self {
        Self::fixture_1d()
    }
}

impl ThermostatParams {
    /// One-dimensional test fixture: `f(0, θ) = −(θ − 15)`,
    /// `f(1, θ) = −(θ − 25)`, `γ = 0.3`, thresholds 19 and 21, far faces 2
    /// beyond them.
    pub fn fixture_1d() -> Self {
        Self {
            dimension: 1,
            drift_matrix: [vec![-1.0], vec![-1.0]],
            drift_offset: [vec![15.0], vec![25.0]],
            gamma: vec![0.3],
            alpha: vec![1.0],
            psi_min: 19.0,
            psi_max: 21.0,
            margin: 2.0,
        }
    }

    /// Two-dimensional variant with `α = (½, ½)` and independent noise.
    pub fn fixture_2d() -> Self {
        Self {
            dimension: 2,
            drift_matrix: [vec![-1.0, 0.0, 0.0, -1.0], vec![-1.0, 0.0, 0.0, -1.0]],
            drift_offset: [vec![15.0, 15.0], vec![25.0, 25.0]],
            gamma: vec![0.3, 0.0, 0.0, 0.3],
            alpha: vec![0.5, 0.5],
            psi_min: 19.0,
            psi_max: 21.0,
            margin: 2.0,
        }
    }

    fn check_shapes(&self) -> Result<(), ModelError> {
        let n = self.dimension;
        let bad = n == 0
            || self.gamma.len() != n * n
            || self.alpha.len() != n
            || self.drift_matrix.iter().any(|m| m.len() != n * n)
            || self.drift_offset.iter().any(|g| g.len() != n);
        if bad {
            return Err(ModelError::InvalidParameter(format!(
                "thermostat coefficients do not match dimension {n}"
            )));
        }
        if !(self.psi_min < self.psi_max) {
            return Err(ModelError::InvalidParameter(format!(
                "psi_min = {} must be below psi_max = {}",
                self.psi_min, self.psi_max
            )));
        }
        if !(self.margin > 0.0) {
            return Err(ModelError::InvalidParameter("margin must be positive".into()));
        }
        if self.alpha.iter().all(|&a| a == 0.0) {
            return Err(ModelError::InvalidParameter("alpha must be nonzero".into()));
        }
        Ok(())
    }

    /// `a = γγᵀ`, row-major.
    pub fn diffusion_matrix(&self) -> Vec<f64> {
        let n = self.dimension;
        let g = DMatrix::from_row_slice(n, n, &self.gamma);
        let a = &g * g.transpose();
        (0..n * n).map(|k| a[(k / n, k % n)]).collect()
    }

    /// Standard deviation of `Ψ` under the stationary law of mode `q` taken on
    /// all of `R^n`; `None` when `F_q` is not Hurwitz.
    pub fn stationary_psi_std(&self, q: usize) -> Option<f64> {
        let n = self.dimension;
        let f = DMatrix::from_row_slice(n, n, &self.drift_matrix[q]);
        if f.complex_eigenvalues().iter().any(|l| l.re >= 0.0) {
            return None;
        }
        let a = DMatrix::from_row_slice(n, n, &self.diffusion_matrix());
        // F Σ + Σ Fᵀ = −a, vectorized column-major: (I ⊗ F + F ⊗ I) vec Σ = −vec a.
        let eye = DMatrix::<f64>::identity(n, n);
        let k = eye.kronecker(&f) + f.kronecker(&eye);
        let rhs = -DVector::from_column_slice(a.as_slice());
        let sol = k.lu().solve(&rhs)?;
        let sigma = DMatrix::from_column_slice(n, n, sol.as_slice());
        let alpha = DVector::from_column_slice(&self.alpha);
        let var = (alpha.transpose() * sigma * &alpha)[(0, 0)];
        Some(var.max(0.0).sqrt())
    }
}

/// Model description without the positive-definiteness and margin checks;
/// useful for degenerate-noise experiments with the path simulator.
pub fn thermostat_spec(params: &ThermostatParams) -> Result<ModelSpec, ModelError> {
    params.check_shapes()?;
    let n = params.dimension;
    let alpha = &params.alpha;
    let neg_alpha: Vec<f64> = alpha.iter().map(|a| -a).collect();
    let fields = |q: usize| {
        VectorFieldSet::affine_with_constant_noise(
            AffineField::new(params.drift_matrix[q].clone(), params.drift_offset[q].clone()),
            &params.gamma,
        )
    };
    let mode0 = vec![
        HalfSpace::new(neg_alpha.clone(), -params.psi_min)?,
        HalfSpace::new(alpha.clone(), params.psi_max + params.margin)?,
    ];
    let mode1 = vec![
        HalfSpace::new(neg_alpha, -(params.psi_min - params.margin))?,
        HalfSpace::new(alpha.clone(), params.psi_max)?,
    ];
    Ok(ModelSpec {
        dimension: n,
        modes: vec![mode_spec("off", mode0, fields(0)), mode_spec("on", mode1, fields(1))],
        terminal_states: vec!["far_field".into()],
        reset_edges: vec![
            EdgeSpec {
                source: ResetSource::new(0, 0),
                target: TargetSpec::identity(1, n),
            },
            EdgeSpec {
                source: ResetSource::new(0, 1),
                target: TargetSpec::Terminal("far_field".into()),
            },
            EdgeSpec {
                source: ResetSource::new(1, 0),
                target: TargetSpec::Terminal("far_field".into()),
            },
            EdgeSpec {
                source: ResetSource::new(1, 1),
                target: TargetSpec::identity(0, n),
            },
        ],
        characteristic_faces: vec![],
    })
}

/// Thermostat model. Requires `γγᵀ` positive definite and far faces at
/// least six stationary standard deviations (of `Ψ`) beyond the thresholds.
pub fn thermostat_model(params: &ThermostatParams) -> Result<HybridModel, ModelError> {
    params.check_shapes()?;
    let n = params.dimension;
    let a = DMatrix::from_row_slice(n, n, &params.diffusion_matrix());
    if a.cholesky().is_none() {
        return Err(ModelError::InvalidParameter(
            "gamma gamma^T must be positive definite".into(),
        ));
    }
    let norm = params.alpha.iter().map(|v| v * v).sum::<f64>().sqrt();
    for q in 0..2 {
        if let Some(std) = params.stationary_psi_std(q) {
            if params.margin < 6.0 * std {
                return Err(ModelError::InvalidParameter(format!(
                    "margin {} is below six stationary standard deviations ({}) of mode {q}",
                    params.margin,
                    6.0 * std / norm * norm
                )));
            }
        }
    }
    build_model(thermostat_spec(params)?)
}

/// One named part of the exit boundary: the listed faces of `U`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitPart {
    pub name: String,
    pub faces: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct FirstExitParams {
    pub fields: VectorFieldSet,
    /// The polytope `U`.
    pub faces: Vec<HalfSpace>,
    pub partition: Vec<ExitPart>,
}

impl FirstExitParams {
    /// Standard Brownian motion on `(lo, hi)` with exits `left` and `right`.
    pub fn interval(lo: f64, hi: f64) -> Result<Self, ModelError> {
        if !(lo < hi) {
            return Err(ModelError::InvalidParameter(format!("empty interval ({lo}, {hi})")));
        }
        Ok(Self {
            fields: VectorFieldSet::affine_with_constant_noise(AffineField::zero(1), &[1.0]),
            faces: vec![HalfSpace::new(vec![-1.0], -lo)?, HalfSpace::new(vec![1.0], hi)?],
            partition: vec![
                ExitPart {
                    name: "left".into(),
                    faces: vec![0],
                },
                ExitPart {
                    name: "right".into(),
                    faces: vec![1],
                },
            ],
        })
    }
}

/// One mode on `U`; every face of part `i` is absorbed into terminal `i`, so
/// `q(i, t)` is the probability of having left through part `i` by `t`.
pub fn first_exit_model(params: &FirstExitParams) -> Result<HybridModel, ModelError> {
    let dim = params.fields.dim();
    let n_faces = params.faces.len();
    let mut owner: Vec<Option<usize>> = vec![None; n_faces];
    let mut edges = Vec::new();
    for (i, part) in params.partition.iter().enumerate() {
        for &f in &part.faces {
            if f >= n_faces {
                return Err(ModelError::UnknownFace { mode: 0, face: f });
            }
            if owner[f].replace(i).is_some() {
                return Err(ModelError::OverlappingSources { mode: 0, face: f });
            }
            edges.push(EdgeSpec {
                source: ResetSource::new(0, f),
                target: TargetSpec::Terminal(part.name.clone()),
            });
        }
    }
    build_model(ModelSpec {
        dimension: dim,
        modes: vec![mode_spec("U", params.faces.clone(), params.fields.clone())],
        terminal_states: params.partition.iter().map(|p| p.name.clone()).collect(),
        reset_edges: edges,
        characteristic_faces: vec![],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrownianResetParams {
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default = "default_l_box")]
    pub l_box: f64,
    /// Absorb at 0 into `hit`; otherwise restart at `x0`.
    #[serde(default = "default_true")]
    pub terminal_at_zero: bool,
}

fn default_x0() -> f64 {
    1.0
}

fn default_l_box() -> f64 {
    8.0
}

fn default_true() -> bool {
    true
}

impl Default for BrownianResetParams {
    fn default() -> Self {
        Self::new(default_x0())
    }
}

impl BrownianResetParams {
    pub fn new(x0: f64) -> Self {
        Self {
            x0,
            l_box: default_l_box(),
            terminal_at_zero: true,
        }
    }
}

/// Standard Brownian motion on `(0, L_box)`. The far face goes to `escaped`;
/// the face at 0 goes to `hit` (or, when `terminal_at_zero` is false,
/// restarts the path at `x0`).
pub fn brownian_reset_model(params: &BrownianResetParams) -> Result<HybridModel, ModelError> {
    let BrownianResetParams {
        x0,
        l_box,
        terminal_at_zero,
    } = *params;
    if !(x0 > 0.0) || !(x0 < l_box) {
        return Err(ModelError::InvalidParameter(format!(
            "x0 = {x0} must lie in (0, {l_box})"
        )));
    }
    let near = if terminal_at_zero {
        TargetSpec::Terminal("hit".into())
    } else {
        TargetSpec::translation(0, vec![x0])
    };
    build_model(ModelSpec {
        dimension: 1,
        modes: vec![mode_spec(
            "line",
            vec![HalfSpace::new(vec![-1.0], 0.0)?, HalfSpace::new(vec![1.0], l_box)?],
            VectorFieldSet::affine_with_constant_noise(AffineField::zero(1), &[1.0]),
        )],
        terminal_states: vec!["hit".into(), "escaped".into()],
        reset_edges: vec![
            EdgeSpec {
                source: ResetSource::new(0, 0),
                target: near,
            },
            EdgeSpec {
                source: ResetSource::new(0, 1),
                target: TargetSpec::Terminal("escaped".into()),
            },
        ],
        characteristic_faces: vec![],
    })
}

/// `P(min_{s ≤ t} (x0 + W_s) ≤ 0) = erfc(x0 / √(2t))`.
pub fn analytic_first_passage(x0: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    libm::erfc(x0 / (2.0 * t).sqrt())
}

/// Probability that Brownian motion started at `x0 ∈ (lo, hi)` leaves
/// through `lo` first.
pub fn exit_left_probability(x0: f64, lo: f64, hi: f64) -> f64 {
    (hi - x0) / (hi - lo)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZenoTrapParams {
    /// Drift toward the face at 0.
    #[serde(default = "default_zeno_drift")]
    pub drift: f64,
    #[serde(default = "default_zeno_noise")]
    pub noise: f64,
    /// Distance from 0 at which the path restarts.
    #[serde(default = "default_zeno_offset")]
    pub offset: f64,
}

fn default_zeno_drift() -> f64 {
    -100.0
}
fn default_zeno_noise() -> f64 {
    0.01
}
fn default_zeno_offset() -> f64 {
    1e-3
}

impl Default for ZenoTrapParams {
    fn default() -> Self {
        Self {
            drift: default_zeno_drift(),
            noise: default_zeno_noise(),
            offset: default_zeno_offset(),
        }
    }
}

/// Interval `(0, 1)` with a strong drift toward 0; hitting 0 restarts the
/// path at `offset`, hitting 1 absorbs into `exit`. Resets pile up far
/// faster than any reasonable jump budget.
pub fn zeno_trap_model(params: &ZenoTrapParams) -> Result<HybridModel, ModelError> {
    if !(params.offset > 0.0 && params.offset < 1.0) {
        return Err(ModelError::InvalidParameter("offset must lie in (0, 1)".into()));
    }
    let fields = VectorFieldSet::new(
        Arc::new(AffineField::constant(vec![params.drift])),
        vec![Arc::new(AffineField::constant(vec![params.noise])) as Arc<dyn VectorField>],
    );
    build_model(ModelSpec {
        dimension: 1,
        modes: vec![mode_spec(
            "trap",
            vec![HalfSpace::new(vec![-1.0], 0.0)?, HalfSpace::new(vec![1.0], 1.0)?],
            fields,
        )],
        terminal_states: vec!["exit".into()],
        reset_edges: vec![
            EdgeSpec {
                source: ResetSource::new(0, 0),
                target: TargetSpec::translation(0, vec![params.offset]),
            },
            EdgeSpec {
                source: ResetSource::new(0, 1),
                target: TargetSpec::Terminal("exit".into()),
            },
        ],
        characteristic_faces: vec![],
    })
}

/// Initial law used by the thermostat examples: heater off, at the midpoint
/// between the thresholds.
pub fn thermostat_initial(params: &ThermostatParams) -> InitialLaw {
    let mid = 0.5 * (params.psi_min + params.psi_max);
    let norm2: f64 = params.alpha.iter().map(|a| a * a).sum();
    InitialLaw::Point {
        mode: 0,
        position: params.alpha.iter().map(|a| a * mid / norm2).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoundaryClass;

    #[test]
    fn thermostat_1d_has_two_modes_and_unit_jacobians() {
        let m = thermostat_model(&ThermostatParams::fixture_1d()).unwrap();
        assert_eq!(m.modes().len(), 2);
        let surface: Vec<usize> = (0..m.edges().len())
            .filter(|&e| m.jacobian_factor(e, &[0.0]).is_ok())
            .collect();
        assert_eq!(surface.len(), 2);
        for e in surface {
            assert_eq!(m.jacobian_factor(e, &[0.0]).unwrap(), 1.0);
        }
        for q in 0..2 {
            for f in 0..2 {
                assert_eq!(m.classify_boundary(q, f).unwrap(), BoundaryClass::NonCharacteristic);
            }
        }
    }

    #[test]
    fn thermostat_thresholds_must_be_ordered() {
        let mut p = ThermostatParams::fixture_1d();
        p.psi_min = 21.0;
        assert!(matches!(thermostat_model(&p), Err(ModelError::InvalidParameter(_))));
    }

    #[test]
    fn thermostat_2d_reset_lines() {
        let m = thermostat_model(&ThermostatParams::fixture_2d()).unwrap();
        // Mode 0 threshold face: θ₁ + θ₂ = 2 Ψ_min.
        let f = m.mode(0).domain.face(0);
        let s = 0.5f64.sqrt();
        assert!((f.normal[0] + s).abs() < 1e-15 && (f.normal[1] + s).abs() < 1e-15);
        assert!((f.offset + 38.0 * s).abs() < 1e-12);
        let f = m.mode(1).domain.face(1);
        assert!((f.offset - 42.0 * s).abs() < 1e-12);
    }

    #[test]
    fn thermostat_margin_must_cover_six_deviations() {
        let mut p = ThermostatParams::fixture_1d();
        p.margin = 1.0;
        // stationary std is 0.3 / √2 ≈ 0.212, six of them ≈ 1.27
        assert!(thermostat_model(&p).is_err());
        assert!((p.stationary_psi_std(0).unwrap() - 0.3 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn first_exit_overlap_is_rejected() {
        let mut p = FirstExitParams::interval(0.0, 1.0).unwrap();
        p.partition[1].faces.push(0);
        assert_eq!(
            first_exit_model(&p).unwrap_err(),
            ModelError::OverlappingSources { mode: 0, face: 0 }
        );
    }

    #[test]
    fn brownian_parameters() {
        assert!(brownian_reset_model(&BrownianResetParams::new(1.0)).is_ok());
        assert!(brownian_reset_model(&BrownianResetParams::new(8.0)).is_err());
        assert_eq!(analytic_first_passage(1.0, 0.0), 0.0);
        assert!((analytic_first_passage(1e-12, 1.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zeno_trap_builds() {
        assert!(zeno_trap_model(&ZenoTrapParams::default()).is_ok());
    }
}
