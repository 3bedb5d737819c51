//! Carleman weight `α = (e^{λβ} − e^{λK}) / l²`, `φ = e^{λβ} / l²` with
//! `l(t) = (T + t)(T − t)` and `K = 2 sup β`.
//!
//! With the default `β = |x − x₀|²` all derivatives are closed-form. A custom
//! nodal `β` falls back to the grid difference operators.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::grid::{BoundarySubset, RealField, SpaceTimeGrid};

/// Exponents below this underflow to exactly zero in `f64`.
pub const EXP_FLOOR: f64 = -745.0;

/// `exp` with the exponent clamped so that very negative (or `-∞`) arguments
/// give `0` and never `NaN`.
pub fn clamped_exp(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < EXP_FLOOR {
        0.0
    } else {
        x.exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SpatialWeight {
    /// `β(x) = |x − x₀|²`.
    Default { x0: [f64; 2] },
    /// Nodal `β`; derivatives come from the grid operators.
    Custom { beta: RealField },
}

#[derive(Clone, Debug)]
pub struct CarlemanWeight {
    spatial: SpatialWeight,
    dim: usize,
    lambda: f64,
    s: f64,
    t_final: f64,
    k: f64,
    c0: f64,
    beta: RealField,
    grad_beta: Array2<f64>,
    lap_beta: RealField,
    hess_beta: Vec<[[f64; 2]; 2]>,
}

fn point_in_closed_box(grid: &SpaceTimeGrid, x: [f64; 2]) -> bool {
    grid.extents().iter().enumerate().all(|(i, &(a, b))| x[i] >= a && x[i] <= b)
}

/// `β = |x − x₀|²` with `x₀` outside `Ω̄`.
pub fn build_default_weight(grid: &SpaceTimeGrid, x0: &[f64], lambda: f64, s: f64) -> Result<CarlemanWeight> {
    if x0.len() != grid.dim() {
        return Err(Error::WeightPrecondition(format!(
            "x0 has {} coordinates, grid dimension is {}",
            x0.len(),
            grid.dim()
        )));
    }
    let mut p = [0.0; 2];
    p[..x0.len()].copy_from_slice(x0);
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::WeightPrecondition("x0 must be finite".into()));
    }
    if point_in_closed_box(grid, p) {
        return Err(Error::WeightPrecondition(format!(
            "x0 = {:?} lies in the closure of Ω; β = |x − x0|² would have a critical point",
            &p[..grid.dim()]
        )));
    }
    CarlemanWeight::build(grid, SpatialWeight::Default { x0: p }, lambda, s)
}

impl CarlemanWeight {
    pub fn build(grid: &SpaceTimeGrid, spatial: SpatialWeight, lambda: f64, s: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::WeightPrecondition(format!("λ must be non-negative, got {lambda}")));
        }
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::WeightPrecondition(format!("s must be non-negative, got {s}")));
        }
        let dim = grid.dim();
        let n = grid.n_nodes();
        let (beta, grad_beta, lap_beta, hess_beta) = match &spatial {
            SpatialWeight::Default { x0 } => {
                let beta = grid.sample(|x| (0..dim).map(|i| (x[i] - x0[i]).powi(2)).sum());
                let mut grad = Array2::zeros((n, dim));
                for (p, mut row) in grad.axis_iter_mut(Axis(0)).enumerate() {
                    let x = grid.coord(p);
                    for i in 0..dim {
                        row[i] = 2.0 * (x[i] - x0[i]);
                    }
                }
                let mut hess = [[0.0; 2]; 2];
                for (i, row) in hess.iter_mut().enumerate().take(dim) {
                    row[i] = 2.0;
                }
                (beta, grad, RealField::from_elem(n, 2.0 * dim as f64), vec![hess; n])
            }
            SpatialWeight::Custom { beta } => {
                grid.check_spatial(&beta.view(), "β")?;
                if beta.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("β".into()));
                }
                let grad = grid.gradient(&beta.view());
                let lap = grid.laplacian(&beta.view());
                let mut hess = vec![[[0.0; 2]; 2]; n];
                for j in 0..dim {
                    for i in 0..dim {
                        let d = grid.derivative(&grad.column(j), i);
                        for (p, v) in d.iter().enumerate() {
                            hess[p][i][j] = *v;
                        }
                    }
                }
                // symmetrise the discrete Hessian
                for h in hess.iter_mut() {
                    let off = 0.5 * (h[0][1] + h[1][0]);
                    h[0][1] = off;
                    h[1][0] = off;
                }
                (beta.clone(), grad, lap, hess)
            }
        };
        if beta.iter().any(|&b| b < 0.0) {
            return Err(Error::WeightPrecondition("β must be non-negative".into()));
        }
        let c0 = grad_beta
            .axis_iter(Axis(0))
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        if c0 <= 0.0 {
            return Err(Error::WeightPrecondition("∇β vanishes at a grid node (c0 = 0)".into()));
        }
        let sup = beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            spatial,
            dim,
            lambda,
            s,
            t_final: grid.t_final(),
            k: 2.0 * sup,
            c0,
            beta,
            grad_beta,
            lap_beta,
            hess_beta,
        })
    }

    /// Same weight with a different large parameter.
    pub fn with_s(&self, s: f64) -> Self {
        Self { s, ..self.clone() }
    }

    pub fn spatial(&self) -> &SpatialWeight {
        &self.spatial
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn s(&self) -> f64 {
        self.s
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn c0(&self) -> f64 {
        self.c0
    }
    pub fn t_final(&self) -> f64 {
        self.t_final
    }
    pub fn beta(&self) -> &RealField {
        &self.beta
    }
    /// Nodal `∇β`, shape `n_nodes × dim`.
    pub fn grad_beta(&self) -> &Array2<f64> {
        &self.grad_beta
    }
    pub fn lap_beta(&self) -> &RealField {
        &self.lap_beta
    }
    pub fn x0(&self) -> Option<[f64; 2]> {
        match self.spatial {
            SpatialWeight::Default { x0 } => Some(x0),
            SpatialWeight::Custom { .. } => None,
        }
    }

    pub fn l(&self, t: f64) -> f64 {
        (self.t_final + t) * (self.t_final - t)
    }

    pub fn dl(&self, t: f64) -> f64 {
        -2.0 * t
    }

    fn alpha_from_beta(&self, beta: f64, t: f64) -> f64 {
        if t >= self.t_final {
            return f64::NEG_INFINITY;
        }
        let l = self.l(t);
        ((self.lambda * beta).exp() - (self.lambda * self.k).exp()) / (l * l)
    }

    fn phi_from_beta(&self, beta: f64, t: f64) -> f64 {
        if t >= self.t_final {
            return f64::INFINITY;
        }
        let l = self.l(t);
        (self.lambda * beta).exp() / (l * l)
    }

    /// `(α, φ)` at a point for the default weight. At `t ≥ T` the pole gives
    /// `(−∞, +∞)`.
    pub fn eval_alpha_phi(&self, x: &[f64], t: f64) -> Result<(f64, f64)> {
        let SpatialWeight::Default { x0 } = self.spatial else {
            return Err(Error::InvalidParameter("pointwise evaluation needs the default β; use node values".into()));
        };
        let beta: f64 = (0..self.dim).map(|i| (x[i] - x0[i]).powi(2)).sum();
        Ok((self.alpha_from_beta(beta, t), self.phi_from_beta(beta, t)))
    }

    /// `(α, φ)` at a grid node.
    pub fn alpha_phi_at_node(&self, node: usize, t: f64) -> (f64, f64) {
        let b = self.beta[node];
        (self.alpha_from_beta(b, t), self.phi_from_beta(b, t))
    }

    /// `e^{sα(x,t)}`, exactly `0` at `t = T`.
    pub fn exp_s_alpha(&self, node: usize, t: f64) -> f64 {
        clamped_exp(self.s * self.alpha_phi_at_node(node, t).0)
    }

    /// Lower bound `e^{s l(0)^{-2}(1 − e^{λK})}` of `e^{sα(·,0)}`.
    pub fn initial_weight_floor(&self) -> f64 {
        let l0 = self.l(0.0);
        clamped_exp(self.s * (1.0 - (self.lambda * self.k).exp()) / (l0 * l0))
    }

    /// `max_x α(x, 0) = max_{x, t<T} α`, used to normalise weights.
    pub fn alpha_star(&self) -> f64 {
        let bmax = self.beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.alpha_from_beta(bmax, 0.0)
    }

    /// Every `s`-independent coefficient sampled on the space-time grid.
    pub fn coefficients(&self, grid: &SpaceTimeGrid) -> WeightCoefficients {
        let (nt, n) = (grid.nt(), grid.n_nodes());
        let mut alpha = Array2::zeros((nt, n));
        let mut phi = Array2::zeros((nt, n));
        let mut dt_alpha = Array2::zeros((nt, n));
        let mut lap_alpha = Array2::zeros((nt, n));
        let mut grad_alpha = vec![Array2::zeros((nt, n)); self.dim];
        let e_k = (self.lambda * self.k).exp();
        for m in 0..nt {
            let t = grid.time(m);
            let last = m + 1 == nt;
            for p in 0..n {
                if last {
                    // the pole at t = T: the weight is exactly zero there and
                    // coefficients are parked at 0 so that 0·∞ never appears
                    alpha[[m, p]] = f64::NEG_INFINITY;
                    continue;
                }
                let eb = (self.lambda * self.beta[p]).exp();
                let l = self.l(t);
                let ph = eb / (l * l);
                alpha[[m, p]] = (eb - e_k) / (l * l);
                phi[[m, p]] = ph;
                dt_alpha[[m, p]] = -2.0 * self.dl(t) * (eb - e_k) / (l * l * l);
                let g2: f64 = (0..self.dim).map(|i| self.grad_beta[[p, i]].powi(2)).sum();
                lap_alpha[[m, p]] = self.lambda * ph * (self.lambda * g2 + self.lap_beta[p]);
                for (i, ga) in grad_alpha.iter_mut().enumerate() {
                    ga[[m, p]] = self.lambda * ph * self.grad_beta[[p, i]];
                }
            }
        }
        WeightCoefficients { alpha, phi, dt_alpha, lap_alpha, grad_alpha, alpha_star: self.alpha_star() }
    }

    /// Minimum of `λ|∇β·ξ|² + D²β(ξ,ξ)` over every node and `directions` unit
    /// vectors (equally spaced angles in 2D; the two signs in 1D).
    pub fn certify_pseudoconvexity(&self, directions: usize) -> Result<PseudoconvexityCertificate> {
        let dirs: Vec<[f64; 2]> = if self.dim == 1 {
            vec![[1.0, 0.0], [-1.0, 0.0]]
        } else {
            if directions < 16 {
                return Err(Error::InvalidParameter(format!(
                    "need at least 16 sampled directions in 2D, got {directions}"
                )));
            }
            (0..directions)
                .map(|k| {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / directions as f64;
                    [th.cos(), th.sin()]
                })
                .collect()
        };
        let mut eps = f64::INFINITY;
        let mut scale: f64 = 0.0;
        let mut worst = (0, dirs[0]);
        let mut lambda_min: f64 = 0.0;
        for p in 0..self.beta.len() {
            let h = &self.hess_beta[p];
            for xi in &dirs {
                let gd: f64 = (0..self.dim).map(|i| self.grad_beta[[p, i]] * xi[i]).sum();
                let mut hq = 0.0;
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        hq += h[i][j] * xi[i] * xi[j];
                    }
                }
                let a = gd * gd;
                let value = self.lambda * a + hq;
                scale = scale.max(self.lambda * a + hq.abs());
                if value < eps {
                    eps = value;
                    worst = (p, *xi);
                }
                if hq <= 0.0 {
                    lambda_min = lambda_min.max(if a > 0.0 { -hq / a } else { f64::INFINITY });
                }
            }
        }
        // a custom β carries rounding noise through its discrete Hessian, so a
        // form that vanishes analytically is refused up to a relative floor
        if !(eps > 1e-10 * scale) {
            return Err(Error::NotPseudoconvex { node: worst.0, xi: worst.1, value: eps });
        }
        Ok(PseudoconvexityCertificate { epsilon: eps, lambda_min, sampled_directions: dirs.len() })
    }
}

/// Grid samples of `α`, `φ`, `∂ₜα`, `Δα`, `∇α` (one array per axis), all
/// `nt × n_nodes`. The final time level holds `α = −∞` and zero coefficients.
#[derive(Clone, Debug)]
pub struct WeightCoefficients {
    pub alpha: Array2<f64>,
    pub phi: Array2<f64>,
    pub dt_alpha: Array2<f64>,
    pub lap_alpha: Array2<f64>,
    pub grad_alpha: Vec<Array2<f64>>,
    pub alpha_star: f64,
}

impl WeightCoefficients {
    /// `e^{s(α − α*)}`; the common factor `e^{sα*}` cancels in every ratio
    /// and keeps the values inside the floating-point range.
    pub fn normalized_weight(&self, s: f64) -> Array2<f64> {
        self.alpha.mapv(|a| clamped_exp(s * (a - self.alpha_star)))
    }

    /// `|∇α|²`.
    pub fn grad_alpha_sq(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.alpha.dim());
        for g in &self.grad_alpha {
            out.zip_mut_with(g, |o, v| *o += v * v);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoconvexityCertificate {
    pub epsilon: f64,
    /// Smallest `λ` for which every sampled form value is non-negative.
    pub lambda_min: f64,
    pub sampled_directions: usize,
}

/// `Γ₀ = {x ∈ ∂Ω : ∇β(x)·ν(x) ≥ 0}`; corners carry no normal and are left out.
pub fn observation_boundary(grid: &SpaceTimeGrid, w: &CarlemanWeight) -> BoundarySubset {
    grid.boundary_subset(|e| {
        let gb: f64 = match w.spatial {
            SpatialWeight::Default { x0 } => (0..grid.dim()).map(|i| 2.0 * (e.coord[i] - x0[i]) * e.normal[i]).sum(),
            SpatialWeight::Custom { .. } => (0..grid.dim()).map(|i| w.grad_beta[[e.node, i]] * e.normal[i]).sum(),
        };
        gb >= 0.0
    })
}
