//! Test functions `φ(q, θ)` and their generator images.

use std::cell::RefCell;
use std::sync::Arc;

use crate::model::{Aabb, HybridModel, ItoCoefficients, ResetTarget};
use crate::simulate::{Location, PathFunctional};

type Scalar = Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>;
/// Writes the gradient (`d`) and row-major Hessian (`d²`) of `φ(q, ·)`.
type Derivatives = Arc<dyn Fn(usize, &[f64], &mut [f64], &mut [f64]) + Send + Sync>;

/// A test function on the hybrid state space.
///
/// `Lφ = b·∇φ + ½ a:∇²φ` is formed from the model's Itô coefficients and
/// either analytic derivatives or central differences, unless a generator
/// image is supplied directly.
#[derive(Clone)]
pub struct TestFunction {
    phi: Scalar,
    derivatives: Option<Derivatives>,
    generator: Option<Scalar>,
    terminal: Vec<f64>,
    support: Vec<Option<Aabb>>,
    support_all: Option<Aabb>,
    phi_compatible: bool,
    fd_step: f64,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction")
            .field("terminal", &self.terminal)
            .field("support", &self.support)
            .field("phi_compatible", &self.phi_compatible)
            .finish_non_exhaustive()
    }
}

impl TestFunction {
    pub fn new(phi: impl Fn(usize, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            phi: Arc::new(phi),
            derivatives: None,
            generator: None,
            terminal: Vec::new(),
            support: Vec::new(),
            support_all: None,
            phi_compatible: false,
            fd_step: 1e-4,
        }
    }

    /// `φ ≡ c` on every mode and terminal state.
    pub fn constant(c: f64, n_terminal: usize) -> Self {
        let mut f = Self::new(move |_, _| c).with_generator(|_, _| 0.0);
        f.terminal = vec![c; n_terminal];
        f.phi_compatible = true;
        f
    }

    /// Smooth bump `exp(1 − 1/(1 − |θ−c|²/R²))` inside the ball of radius
    /// `R`, on the listed modes (all modes when `modes` is `None`).
    pub fn bump(modes: Option<Vec<usize>>, center: Vec<f64>, radius: f64) -> Self {
        let r2 = radius * radius;
        let active = move |q: usize| modes.as_ref().is_none_or(|m| m.contains(&q));
        let active2 = active.clone();
        let c1 = center.clone();
        let c2 = center.clone();
        let phi = move |q: usize, x: &[f64]| -> f64 {
            if !active(q) {
                return 0.0;
            }
            let s = dist2(x, &c1) / r2;
            if s >= 1.0 {
                0.0
            } else {
                (1.0 - 1.0 / (1.0 - s)).exp()
            }
        };
        let derivs = move |q: usize, x: &[f64], grad: &mut [f64], hess: &mut [f64]| {
            grad.iter_mut().for_each(|v| *v = 0.0);
            hess.iter_mut().for_each(|v| *v = 0.0);
            if !active2(q) {
                return;
            }
            let s = dist2(x, &c2) / r2;
            if s >= 1.0 {
                return;
            }
            let u = 1.0 / (1.0 - s);
            let psi = (1.0 - u).exp();
            // ψ(s) = exp(1 − 1/(1−s)): ψ' = −ψu², ψ'' = ψ(u⁴ − 2u³)
            let d1 = -psi * u * u;
            let d2 = psi * (u.powi(4) - 2.0 * u.powi(3));
            let d = x.len();
            for i in 0..d {
                let yi = x[i] - c2[i];
                grad[i] = d1 * 2.0 * yi / r2;
                for j in 0..d {
                    let yj = x[j] - c2[j];
                    let delta = if i == j { 1.0 } else { 0.0 };
                    hess[i * d + j] = d2 * 4.0 * yi * yj / (r2 * r2) + d1 * 2.0 * delta / r2;
                }
            }
        };
        let mut f = Self::new(phi).with_derivatives(derivs);
        let lo = center.iter().map(|c| c - radius).collect();
        let hi = center.iter().map(|c| c + radius).collect();
        f.support_all = Some(Aabb { lo, hi });
        f
    }

    pub fn with_derivatives(
        mut self,
        d: impl Fn(usize, &[f64], &mut [f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.derivatives = Some(Arc::new(d));
        self
    }

    /// Supplies `Lφ` directly; the model's coefficients are then not used.
    pub fn with_generator(mut self, g: impl Fn(usize, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.generator = Some(Arc::new(g));
        self
    }

    /// Values at the terminal states (missing entries are 0).
    pub fn with_terminal_values(mut self, values: Vec<f64>) -> Self {
        self.terminal = values;
        self
    }

    /// Declares that `φ` vanishes outside `support` in mode `mode`.
    pub fn with_support(mut self, mode: usize, support: Aabb) -> Self {
        if self.support.len() <= mode {
            self.support.resize(mode + 1, None);
        }
        self.support[mode] = Some(support);
        self
    }

    /// Declares `φ∘Φ = φ` on every surface reset patch.
    pub fn phi_compatible(mut self) -> Self {
        self.phi_compatible = true;
        self
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn is_phi_compatible(&self) -> bool {
        self.phi_compatible
    }

    /// Declared support of `φ` in `mode`, if any.
    pub fn support(&self, mode: usize) -> Option<&Aabb> {
        self.support.get(mode).and_then(Option::as_ref).or(self.support_all.as_ref())
    }

    pub fn eval(&self, mode: usize, x: &[f64]) -> f64 {
        (self.phi)(mode, x)
    }

    pub fn terminal_value(&self, terminal: usize) -> f64 {
        self.terminal.get(terminal).copied().unwrap_or(0.0)
    }

    /// Gradient and row-major Hessian of `φ(mode, ·)` at `x`.
    pub fn derivatives(&self, mode: usize, x: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        if let Some(d) = &self.derivatives {
            d(mode, x, grad, hess);
            return;
        }
        let d = x.len();
        let h = self.fd_step;
        let mut y = x.to_vec();
        let f0 = self.eval(mode, x);
        for i in 0..d {
            y[i] = x[i] + h;
            let fp = self.eval(mode, &y);
            y[i] = x[i] - h;
            let fm = self.eval(mode, &y);
            y[i] = x[i];
            grad[i] = (fp - fm) / (2.0 * h);
            hess[i * d + i] = (fp - 2.0 * f0 + fm) / (h * h);
            for j in 0..i {
                let mut corner = |si: f64, sj: f64| {
                    y[i] = x[i] + si * h;
                    y[j] = x[j] + sj * h;
                    let v = self.eval(mode, &y);
                    y[i] = x[i];
                    y[j] = x[j];
                    v
                };
                let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                    / (4.0 * h * h);
                hess[i * d + j] = v;
                hess[j * d + i] = v;
            }
        }
    }

    /// `Lφ(mode, x)` for `model`.
    pub fn generator(&self, model: &HybridModel, mode: usize, x: &[f64]) -> f64 {
        if let Some(g) = &self.generator {
            return g(mode, x);
        }
        let d = x.len();
        SCRATCH.with(|cell| {
            let mut s = cell.borrow_mut();
            s.resize(d);
            let Scratch { coeffs, ito, grad, hess } = &mut *s;
            model.ito_coefficients_into(mode, x, coeffs, ito);
            self.derivatives(mode, x, grad, hess);
            let mut out = 0.0;
            for i in 0..d {
                out += coeffs.drift[i] * grad[i];
                for j in 0..d {
                    out += 0.5 * coeffs.diffusion[i * d + j] * hess[i * d + j];
                }
            }
            out
        })
    }

    /// `(φ∘Φ − φ)(x)` for a reset through `edge` at the boundary point `x`.
    pub fn jump(&self, model: &HybridModel, edge: usize, x: &[f64]) -> f64 {
        let e = model.edge(edge);
        let before = self.eval(e.source.mode, x);
        let after = match &e.target {
            ResetTarget::Terminal(k) => self.terminal_value(*k),
            ResetTarget::Surface(map) => self.eval(map.mode, &map.apply(x)),
        };
        after - before
    }

    /// Largest `|φ∘Φ − φ|` over sample points of every surface reset patch.
    pub fn max_surface_jump(&self, model: &HybridModel) -> f64 {
        let mut worst = 0.0f64;
        for (k, e) in model.edges().iter().enumerate() {
            if !matches!(e.target, ResetTarget::Surface(_)) {
                continue;
            }
            let domain = &model.mode(e.source.mode).domain;
            let tol = 1e-9 * domain.scale();
            for p in domain.face_samples(e.source.face) {
                if e.source.contains(&p, tol) {
                    worst = worst.max(self.jump(model, k, &p).abs());
                }
            }
        }
        worst
    }

    /// Binds the function to `model` for use along simulated paths.
    pub fn bind<'a>(&'a self, model: &'a HybridModel) -> BoundTestFunction<'a> {
        BoundTestFunction { f: self, model }
    }
}

fn dist2(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

struct Scratch {
    coeffs: ItoCoefficients,
    ito: Vec<f64>,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl Scratch {
    fn resize(&mut self, d: usize) {
        if self.grad.len() != d {
            self.coeffs = ItoCoefficients {
                drift: vec![0.0; d],
                diffusion: vec![0.0; d * d],
            };
            self.ito = vec![0.0; d + d * d];
            self.grad = vec![0.0; d];
            self.hess = vec![0.0; d * d];
        }
    }
}

thread_local! {
    static SCRATCH: RefCell<Scratch> = RefCell::new(Scratch {
        coeffs: ItoCoefficients { drift: Vec::new(), diffusion: Vec::new() },
        ito: Vec::new(),
        grad: Vec::new(),
        hess: Vec::new(),
    });
}

/// A [`TestFunction`] paired with the model whose generator it uses.
pub struct BoundTestFunction<'a> {
    f: &'a TestFunction,
    model: &'a HybridModel,
}

impl PathFunctional for BoundTestFunction<'_> {
    fn value(&self, location: &Location) -> f64 {
        match location {
            Location::Mode { mode, position } => self.f.eval(*mode, position),
            Location::Terminal { terminal } => self.f.terminal_value(*terminal),
        }
    }

    fn generator(&self, mode: usize, x: &[f64]) -> f64 {
        self.f.generator(self.model, mode, x)
    }

    fn value_at(&self, mode: usize, x: &[f64]) -> f64 {
        self.f.eval(mode, x)
    }
}
