//! Vector fields on `R^d` together with their Jacobians.

use std::fmt;
use std::sync::Arc;

/// A smooth vector field `θ ↦ A(θ) ∈ R^d`.
///
/// Jacobians are written row-major, `out[i * d + j] = ∂_j A^i`. The default
/// implementation falls back to central differences.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], out: &mut [f64]);

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        finite_difference_jacobian(self, x, out);
    }

    /// Exposes the affine representation, which lets the path engine skip
    /// per-step dynamic dispatch.
    fn as_affine(&self) -> Option<&AffineField> {
        None
    }
}

impl fmt::Debug for dyn VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_affine() {
            Some(a) => a.fmt(f),
            None => write!(f, "VectorField(dim = {})", self.dim()),
        }
    }
}

/// Central-difference Jacobian with step `ε = 1e-6 · (1 + |θ|)`.
pub fn finite_difference_jacobian<F: VectorField + ?Sized>(field: &F, x: &[f64], out: &mut [f64]) {
    let d = field.dim();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let eps = 1e-6 * (1.0 + norm);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for j in 0..d {
        xp[j] = x[j] + eps;
        field.eval(&xp, &mut fp);
        xp[j] = x[j] - eps;
        field.eval(&xp, &mut fm);
        xp[j] = x[j];
        for i in 0..d {
            out[i * d + j] = (fp[i] - fm[i]) / (2.0 * eps);
        }
    }
}

/// `A(θ) = M θ + v` with `M` stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineField {
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

impl AffineField {
    pub fn new(matrix: Vec<f64>, offset: Vec<f64>) -> Self {
        assert_eq!(
            matrix.len(),
            offset.len() * offset.len(),
            "affine field matrix must be d x d"
        );
        Self { matrix, offset }
    }

    pub fn constant(offset: Vec<f64>) -> Self {
        let d = offset.len();
        Self::new(vec![0.0; d * d], offset)
    }

    pub fn zero(d: usize) -> Self {
        Self::constant(vec![0.0; d])
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }
}

impl VectorField for AffineField {
    fn dim(&self) -> usize {
        self.offset.len()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let d = self.offset.len();
        for i in 0..d {
            let row = &self.matrix[i * d..(i + 1) * d];
            out[i] = self.offset[i] + row.iter().zip(x).map(|(m, v)| m * v).sum::<f64>();
        }
    }

    fn jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.matrix);
    }

    fn as_affine(&self) -> Option<&AffineField> {
        Some(self)
    }
}

type EvalFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Closure-backed field; the Jacobian is optional and falls back to finite
/// differences.
pub struct FnField {
    dim: usize,
    eval: Box<EvalFn>,
    jacobian: Option<Box<EvalFn>>,
}

impl FnField {
    pub fn new(dim: usize, eval: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self {
            dim,
            eval: Box::new(eval),
            jacobian: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        jacobian: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Box::new(jacobian));
        self
    }
}

impl VectorField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        match &self.jacobian {
            Some(j) => j(x, out),
            None => finite_difference_jacobian(self, x, out),
        }
    }
}

/// Drift `A_0` and the `d` diffusion fields `A_1..A_d` of one mode.
#[derive(Clone, Debug)]
pub struct VectorFieldSet {
    pub drift: Arc<dyn VectorField>,
    pub diffusion: Vec<Arc<dyn VectorField>>,
}

impl VectorFieldSet {
    pub fn new(drift: Arc<dyn VectorField>, diffusion: Vec<Arc<dyn VectorField>>) -> Self {
        Self { drift, diffusion }
    }

    /// Affine drift and constant diffusion columns `γ_r` (column `r` of `γ`,
    /// `γ` row-major `d × d`).
    pub fn affine_with_constant_noise(drift: AffineField, gamma: &[f64]) -> Self {
        let d = drift.dim();
        let diffusion = (0..d)
            .map(|r| {
                let col: Vec<f64> = (0..d).map(|i| gamma[i * d + r]).collect();
                Arc::new(AffineField::constant(col)) as Arc<dyn VectorField>
            })
            .collect();
        Self::new(Arc::new(drift), diffusion)
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    /// Affine parts when every field is affine.
    pub fn affine_parts(&self) -> Option<(&AffineField, Vec<&AffineField>)> {
        let drift = self.drift.as_affine()?;
        let diffusion = self
            .diffusion
            .iter()
            .map(|f| f.as_affine())
            .collect::<Option<Vec<_>>>()?;
        Some((drift, diffusion))
    }
}
