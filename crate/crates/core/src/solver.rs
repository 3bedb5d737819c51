//! Crank–Nicolson solver for `−i∂ₜu − Δ_A u + ρu = 0` with Dirichlet data.
//!
//! `Δ_A = (∇ + iA)·(∇ + iA)` is discretised with Peierls link phases
//! `U = e^{±ih Ā}` (`Ā` the mean of the two nodal values of `A` along the
//! link). The interior operator is Hermitian whenever `ρ` is real, so the
//! scheme is exactly norm preserving in that case, and the link phases make
//! gauge covariance hold to second order.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::banded::{BandedLu, BandedMatrix};
use crate::error::{Error, Result};
use crate::grid::{ComplexField, RealField, RealVectorField, SpaceTimeField, SpaceTimeGrid};
use crate::C64;

/// Tolerance on `‖g(·,0) − u₀‖_∂Ω` (zeroth-order compatibility).
pub const COMPATIBILITY_TOL: f64 = 1e-10;

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Debug)]
pub struct ElectromagneticPotential {
    pub rho: ComplexField,
    pub a: RealVectorField,
    pub div_a: RealField,
    /// Admissibility cap on `‖ρ‖_∞` and `‖A‖_∞`.
    pub m_bound: Option<f64>,
}

impl ElectromagneticPotential {
    pub fn new(grid: &SpaceTimeGrid, rho: ComplexField, a: RealVectorField, div_a: RealField) -> Result<Self> {
        let n = grid.n_nodes();
        if rho.len() != n || a.dim() != (n, grid.dim()) || div_a.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "potential on {n} nodes: rho {}, A {:?}, divA {}",
                rho.len(),
                a.dim(),
                div_a.len()
            )));
        }
        if rho.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("ρ".into()));
        }
        if a.iter().chain(div_a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("A".into()));
        }
        Ok(Self { rho, a, div_a, m_bound: None })
    }

    /// `ρ = 0`, `A = 0`.
    pub fn zero(grid: &SpaceTimeGrid) -> Self {
        let n = grid.n_nodes();
        Self {
            rho: ComplexField::zeros(n),
            a: RealVectorField::zeros((n, grid.dim())),
            div_a: RealField::zeros(n),
            m_bound: None,
        }
    }

    /// Sample closed forms of `ρ`, `A` and `∇·A`.
    pub fn from_fn<R, A, D>(grid: &SpaceTimeGrid, rho: R, a: A, div_a: D) -> Result<Self>
    where
        R: Fn([f64; 2]) -> C64,
        A: Fn([f64; 2]) -> [f64; 2],
        D: Fn([f64; 2]) -> f64,
    {
        let n = grid.n_nodes();
        let mut av = RealVectorField::zeros((n, grid.dim()));
        for (p, mut row) in av.axis_iter_mut(Axis(0)).enumerate() {
            let v = a(grid.coord(p));
            for i in 0..grid.dim() {
                row[i] = v[i];
            }
        }
        Self::new(grid, grid.sample(rho), av, grid.sample(div_a))
    }

    /// Attach an admissibility cap, checking `‖ρ‖_∞ ≤ M` and `‖A‖_∞ ≤ M`.
    pub fn with_bound(mut self, m: f64) -> Result<Self> {
        let rho_max = self.rho.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let a_max = self.a.axis_iter(Axis(0)).map(|r| r.dot(&r).sqrt()).fold(0.0, f64::max);
        if rho_max > m || a_max > m {
            return Err(Error::Admissibility {
                bound: m,
                detail: format!("‖ρ‖∞ = {rho_max}, ‖A‖∞ = {a_max}"),
            });
        }
        self.m_bound = Some(m);
        Ok(self)
    }

    pub fn is_real(&self) -> bool {
        self.rho.iter().all(|v| v.im == 0.0)
    }

    pub fn a_sq(&self, p: usize) -> f64 {
        self.a.row(p).dot(&self.a.row(p))
    }

    /// Largest boundary mismatch of `ρ`, `A`, `∇·A` against another potential.
    pub fn boundary_mismatch(&self, grid: &SpaceTimeGrid, other: &Self) -> f64 {
        grid.boundary_nodes()
            .iter()
            .map(|b| {
                let p = b.node;
                let dr = (self.rho[p] - other.rho[p]).norm();
                let da = (&self.a.row(p) - &other.a.row(p)).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
                let dd = (self.div_a[p] - other.div_a[p]).abs();
                dr.max(da).max(dd)
            })
            .fold(0.0, f64::max)
    }
}

fn stride(grid: &SpaceTimeGrid, axis: usize) -> usize {
    if axis == 0 {
        1
    } else {
        grid.nx()
    }
}

/// Peierls stencil of `(−Δ_A + ρ)` at an interior node: `(node, coefficient)` pairs.
fn hamiltonian_row(grid: &SpaceTimeGrid, pot: &ElectromagneticPotential, p: usize) -> Vec<(usize, C64)> {
    let mut row = Vec::with_capacity(1 + 2 * grid.dim());
    let mut diag = pot.rho[p];
    for axis in 0..grid.dim() {
        let (h, st) = (grid.h(axis), stride(grid, axis));
        let inv_h2 = 1.0 / (h * h);
        let (q_plus, q_minus) = (p + st, p - st);
        let th_plus = 0.5 * h * (pot.a[[p, axis]] + pot.a[[q_plus, axis]]);
        let th_minus = 0.5 * h * (pot.a[[q_minus, axis]] + pot.a[[p, axis]]);
        row.push((q_plus, -C64::from_polar(inv_h2, th_plus)));
        row.push((q_minus, -C64::from_polar(inv_h2, -th_minus)));
        diag += 2.0 * inv_h2;
    }
    row.push((p, diag));
    row
}

/// `Δ_A f = Δf + 2iA·∇f + i(∇·A)f − |A|²f`: Peierls stencil at interior
/// nodes, the expanded form with one-sided differences on `∂Ω`.
pub fn magnetic_laplacian(grid: &SpaceTimeGrid, pot: &ElectromagneticPotential, f: &ArrayView1<C64>) -> Result<ComplexField> {
    grid.check_spatial(f, "magnetic_laplacian")?;
    if pot.rho.len() != grid.n_nodes() {
        return Err(Error::ShapeMismatch("potential does not match grid".into()));
    }
    let mut out = ComplexField::zeros(grid.n_nodes());
    let boundary: Vec<usize> = grid.boundary_nodes().iter().map(|b| b.node).collect();
    if !boundary.is_empty() {
        let lap = grid.laplacian(f);
        let grad = grid.gradient(f);
        for &p in &boundary {
            let adg: C64 = (0..grid.dim()).map(|i| grad[[p, i]] * pot.a[[p, i]]).sum();
            out[p] = lap[p] + 2.0 * I * adg + I * pot.div_a[p] * f[p] - pot.a_sq(p) * f[p];
        }
    }
    for p in grid.interior_nodes() {
        // Δ_A f = −(H − ρ) f
        let hf: C64 = hamiltonian_row(grid, pot, p).iter().map(|&(q, c)| c * f[q]).sum();
        out[p] = -(hf - pot.rho[p] * f[p]);
    }
    Ok(out)
}

/// `H f = (−Δ_A + ρ) f` at every node.
pub fn apply_hamiltonian(grid: &SpaceTimeGrid, pot: &ElectromagneticPotential, f: &ArrayView1<C64>) -> Result<ComplexField> {
    let lap = magnetic_laplacian(grid, pot, f)?;
    Ok(Array1::from_iter(lap.iter().zip(pot.rho.iter()).zip(f.iter()).map(|((l, r), v)| -l + r * v)))
}

/// Dirichlet data `g` and its time derivative on every boundary node (corners
/// included), shape `nt × #boundary`, columns in [`SpaceTimeGrid::boundary_nodes`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletData {
    pub values: Array2<C64>,
    pub rate: Array2<C64>,
}

impl DirichletData {
    pub fn zero(grid: &SpaceTimeGrid) -> Self {
        let shape = (grid.nt(), grid.boundary_nodes().len());
        Self { values: Array2::zeros(shape), rate: Array2::zeros(shape) }
    }

    /// `g(x,t)` and `∂ₜg(x,t)` from closed forms.
    pub fn from_fn<G, Gt>(grid: &SpaceTimeGrid, g: G, gt: Gt) -> Self
    where
        G: Fn([f64; 2], f64) -> C64,
        Gt: Fn([f64; 2], f64) -> C64,
    {
        let nodes = grid.boundary_nodes();
        let values = Array2::from_shape_fn((grid.nt(), nodes.len()), |(m, k)| g(grid.coord(nodes[k].node), grid.time(m)));
        let rate = Array2::from_shape_fn((grid.nt(), nodes.len()), |(m, k)| gt(grid.coord(nodes[k].node), grid.time(m)));
        Self { values, rate }
    }

    fn check(&self, grid: &SpaceTimeGrid) -> Result<()> {
        let shape = (grid.nt(), grid.boundary_nodes().len());
        if self.values.dim() != shape || self.rate.dim() != shape {
            return Err(Error::ShapeMismatch(format!("Dirichlet data must be {shape:?}")));
        }
        Ok(())
    }
}

/// Static data `g(x,t) = u₀(x)` on `∂Ω`, which satisfies zeroth-order
/// compatibility by construction.
pub fn dirichlet_data_from_reference(grid: &SpaceTimeGrid, pot: &ElectromagneticPotential, u0: &ArrayView1<C64>) -> Result<DirichletData> {
    grid.check_spatial(u0, "u0")?;
    if pot.rho.len() != grid.n_nodes() {
        return Err(Error::ShapeMismatch("potential does not match grid".into()));
    }
    let nodes = grid.boundary_nodes();
    let values = Array2::from_shape_fn((grid.nt(), nodes.len()), |(_, k)| u0[nodes[k].node]);
    Ok(DirichletData { values, rate: Array2::zeros((grid.nt(), nodes.len())) })
}

/// Compatibility residuals on `∂Ω`: `max|g(·,0) − u₀|` and
/// `max|∂ₜg(·,0) + iHu₀|`.
pub fn compatibility_residuals(
    grid: &SpaceTimeGrid,
    pot: &ElectromagneticPotential,
    u0: &ArrayView1<C64>,
    g: &DirichletData,
) -> Result<(f64, f64)> {
    g.check(grid)?;
    let hu = apply_hamiltonian(grid, pot, u0)?;
    let mut k0: f64 = 0.0;
    let mut k1: f64 = 0.0;
    for (k, b) in grid.boundary_nodes().iter().enumerate() {
        k0 = k0.max((g.values[[0, k]] - u0[b.node]).norm());
        k1 = k1.max((g.rate[[0, k]] + I * hu[b.node]).norm());
    }
    Ok((k0, k1))
}

#[derive(Clone, Debug)]
pub struct ForwardSolution {
    pub u: SpaceTimeField,
    /// `∂ₜu`, from the time-differentiated problem.
    pub ut: SpaceTimeField,
    pub g: DirichletData,
    pub u0: ComplexField,
    /// First-order compatibility residual `max_∂Ω |∂ₜg(·,0) + iHu₀|`.
    pub k1_residual: f64,
}

/// Factorised Crank–Nicolson operators for one potential; reusable across
/// initial states and boundary data.
pub struct ForwardSolver<'g> {
    grid: &'g SpaceTimeGrid,
    pot: ElectromagneticPotential,
    interior: Vec<usize>,
    slot: Vec<Option<usize>>,
    /// Stencil rows of `H` at interior nodes.
    rows: Vec<Vec<(usize, C64)>>,
    lu: BandedLu,
}

impl<'g> ForwardSolver<'g> {
    pub fn new(grid: &'g SpaceTimeGrid, pot: &ElectromagneticPotential) -> Result<Self> {
        if pot.rho.len() != grid.n_nodes() || pot.a.dim() != (grid.n_nodes(), grid.dim()) {
            return Err(Error::ShapeMismatch("potential does not match grid".into()));
        }
        let interior = grid.interior_nodes();
        let mut slot = vec![None; grid.n_nodes()];
        for (k, &p) in interior.iter().enumerate() {
            slot[p] = Some(k);
        }
        let rows: Vec<_> = interior.iter().map(|&p| hamiltonian_row(grid, pot, p)).collect();
        let bw = if grid.dim() == 1 { 1 } else { grid.nx() - 2 };
        let half = C64::new(0.0, 0.5 * grid.tau());
        let mut m = BandedMatrix::zeros(interior.len(), bw, bw);
        for (k, row) in rows.iter().enumerate() {
            m.add(k, k, C64::new(1.0, 0.0));
            for &(q, c) in row {
                if let Some(j) = slot[q] {
                    m.add(k, j, half * c);
                }
            }
        }
        let lu = m.factor()?;
        Ok(Self { grid, pot: pot.clone(), interior, slot, rows, lu })
    }

    pub fn potential(&self) -> &ElectromagneticPotential {
        &self.pot
    }

    /// One Crank–Nicolson march of the interior unknowns with boundary values
    /// `bnd(m)` (full boundary vector per time level).
    fn march(&self, start: &ArrayView1<C64>, bnd: &Array2<C64>) -> SpaceTimeField {
        let grid = self.grid;
        let (nt, n) = (grid.nt(), grid.n_nodes());
        let half = C64::new(0.0, 0.5 * grid.tau());
        let bslots: Vec<usize> = grid.boundary_nodes().iter().map(|b| b.node).collect();
        let mut out = SpaceTimeField::zeros((nt, n));
        out.row_mut(0).assign(start);
        for (k, &p) in bslots.iter().enumerate() {
            out[[0, p]] = bnd[[0, k]];
        }
        let mut rhs = vec![C64::new(0.0, 0.0); self.interior.len()];
        for m in 0..nt - 1 {
            for (k, row) in self.rows.iter().enumerate() {
                let p = self.interior[k];
                let mut acc = out[[m, p]];
                for &(q, c) in row {
                    match self.slot[q] {
                        Some(_) => acc -= half * c * out[[m, q]],
                        // boundary column: explicit half uses gᵐ, implicit half gᵐ⁺¹
                        None => {
                            let b = grid.boundary_slot(q).expect("non-interior neighbour is a boundary node");
                            acc -= half * c * (out[[m, q]] + bnd[[m + 1, b]]);
                        }
                    }
                }
                rhs[k] = acc;
            }
            self.lu.solve_in_place(&mut rhs);
            for (k, &p) in self.interior.iter().enumerate() {
                out[[m + 1, p]] = rhs[k];
            }
            for (k, &p) in bslots.iter().enumerate() {
                out[[m + 1, p]] = bnd[[m + 1, k]];
            }
        }
        out
    }

    pub fn solve(&self, u0: &ArrayView1<C64>, g: &DirichletData) -> Result<ForwardSolution> {
        let grid = self.grid;
        grid.check_spatial(u0, "u0")?;
        if u0.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("u0".into()));
        }
        let (k0, k1) = compatibility_residuals(grid, &self.pot, u0, g)?;
        if k0 > COMPATIBILITY_TOL {
            return Err(Error::Compatibility { order: 0, residual: k0, tolerance: COMPATIBILITY_TOL });
        }
        let u = self.march(u0, &g.values);
        // z = ∂ₜu solves the same system with z(0) = −iHu₀ and boundary data ∂ₜg
        let hu = apply_hamiltonian(grid, &self.pot, u0)?;
        let z0 = hu.mapv(|v| -I * v);
        let ut = self.march(&z0.view(), &g.rate);
        Ok(ForwardSolution { u, ut, g: g.clone(), u0: u0.to_owned(), k1_residual: k1 })
    }
}

/// Factor and solve once.
pub fn solve_forward(
    grid: &SpaceTimeGrid,
    pot: &ElectromagneticPotential,
    u0: &ArrayView1<C64>,
    g: &DirichletData,
) -> Result<ForwardSolution> {
    ForwardSolver::new(grid, pot)?.solve(u0, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn zero_potential_reduces_to_laplacian() {
        let g = SpaceTimeGrid::unit(2, 9, 5, 1.0).unwrap();
        let f = g.sample(|x| C64::new(x[0].sin() * x[1], x[0] * x[1] * x[1]));
        let a = magnetic_laplacian(&g, &ElectromagneticPotential::zero(&g), &f.view()).unwrap();
        let b = g.laplacian(&f.view());
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).norm() < 1e-9);
        }
    }

    #[test]
    fn plane_wave_with_constant_potential() {
        let (k, a) = (2.0, 0.7);
        let errs: Vec<f64> = [21, 41, 81]
            .iter()
            .map(|&nx| {
                let g = SpaceTimeGrid::unit(1, nx, 5, 1.0).unwrap();
                let pot = ElectromagneticPotential::from_fn(&g, |_| c(0.0), |_| [a, 0.0], |_| 0.0).unwrap();
                let f = g.sample(|x| C64::from_polar(1.0, k * x[0]));
                let lap = magnetic_laplacian(&g, &pot, &f.view()).unwrap();
                g.interior_nodes().iter().map(|&p| (lap[p] + (k + a) * (k + a) * f[p]).norm()).fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!((3.4..4.6).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn gauge_identity_converges() {
        let errs: Vec<f64> = [21, 41, 81]
            .iter()
            .map(|&nx| {
                let g = SpaceTimeGrid::unit(2, nx, 5, 1.0).unwrap();
                let psi = |x: [f64; 2]| 0.3 * (PI * x[0]).sin() * (PI * x[1]).sin();
                let pot = ElectromagneticPotential::from_fn(
                    &g,
                    |_| c(0.0),
                    |x| [0.3 * PI * (PI * x[0]).cos() * (PI * x[1]).sin(), 0.3 * PI * (PI * x[0]).sin() * (PI * x[1]).cos()],
                    |x| -2.0 * PI * PI * psi(x),
                )
                .unwrap();
                let f = g.sample(|x| C64::new((2.0 * x[0]).cos() * x[1], x[0] * x[1]));
                let phase = g.sample(|x| C64::from_polar(1.0, -psi(x)));
                let lhs = magnetic_laplacian(&g, &pot, &(&phase * &f).view()).unwrap();
                let rhs = &phase * &g.laplacian(&f.view());
                let d = &lhs - &rhs;
                g.norm_space(&d.view())
            })
            .collect();
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!(r > 3.4, "ratio {r}");
        }
    }

    #[test]
    fn zero_data_zero_solution() {
        let g = SpaceTimeGrid::unit(2, 9, 11, 1.0).unwrap();
        let pot = ElectromagneticPotential::from_fn(&g, |x| C64::new(x[0], x[1]), |x| [x[1], -x[0]], |_| 0.0).unwrap();
        let u0 = ComplexField::zeros(g.n_nodes());
        let sol = solve_forward(&g, &pot, &u0.view(), &DirichletData::zero(&g)).unwrap();
        assert!(sol.u.iter().all(|v| *v == c(0.0)));
        assert!(sol.ut.iter().all(|v| *v == c(0.0)));
    }

    #[test]
    fn initial_and_boundary_values_are_exact() {
        let g = SpaceTimeGrid::unit(2, 9, 11, 1.0).unwrap();
        let pot = ElectromagneticPotential::from_fn(&g, |x| c(x[0]), |x| [x[1], 0.0], |_| 0.0).unwrap();
        let u0 = g.sample(|x| C64::new(1.0 + x[0], x[1]));
        let data = dirichlet_data_from_reference(&g, &pot, &u0.view()).unwrap();
        let sol = solve_forward(&g, &pot, &u0.view(), &data).unwrap();
        assert_eq!(sol.u.row(0), u0);
        for m in 0..g.nt() {
            for (k, b) in g.boundary_nodes().iter().enumerate() {
                assert_eq!(sol.u[[m, b.node]], data.values[[m, k]]);
            }
        }
    }

    #[test]
    fn reference_data_examples() {
        let g = SpaceTimeGrid::unit(2, 7, 6, 1.0).unwrap();
        let pot = ElectromagneticPotential::zero(&g);
        let r0 = g.sample(|_| c(2.0));
        let d = dirichlet_data_from_reference(&g, &pot, &r0.view()).unwrap();
        assert!(d.values.iter().all(|v| *v == c(2.0)));
        assert!(d.rate.iter().all(|v| *v == c(0.0)));
        let x1 = g.sample(|x| c(x[0]));
        let d = dirichlet_data_from_reference(&g, &pot, &x1.view()).unwrap();
        for (k, b) in g.boundary_nodes().iter().enumerate() {
            assert_eq!(d.values[[3, k]], c(g.coord(b.node)[0]));
        }
    }

    #[test]
    fn incompatible_data_rejected() {
        let g = SpaceTimeGrid::unit(1, 11, 6, 1.0).unwrap();
        let u0 = g.sample(|_| c(1.0));
        let r = solve_forward(&g, &ElectromagneticPotential::zero(&g), &u0.view(), &DirichletData::zero(&g));
        assert!(matches!(r, Err(Error::Compatibility { order: 0, .. })));
    }

    #[test]
    fn static_data_gives_exact_discrete_time_derivative() {
        // with static g the differentiated march equals −iH applied to u exactly
        let g = SpaceTimeGrid::unit(1, 21, 41, 1.0).unwrap();
        let pot = ElectromagneticPotential::from_fn(
            &g,
            |x| C64::new(1.0 + x[0], 0.5 * x[0] * x[0]),
            |x| [(x[0] * 3.0).sin(), 0.0],
            |x| 3.0 * (x[0] * 3.0).cos(),
        )
        .unwrap();
        let u0 = g.sample(|x| C64::new(1.0 + x[0], 0.0));
        let data = dirichlet_data_from_reference(&g, &pot, &u0.view()).unwrap();
        let sol = solve_forward(&g, &pot, &u0.view(), &data).unwrap();
        for m in [5, 20, 40] {
            let hu = apply_hamiltonian(&g, &pot, &sol.u.row(m)).unwrap();
            for p in g.interior_nodes() {
                assert!((sol.ut[[m, p]] + I * hu[p]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn unitary_for_real_potentials() {
        let g = SpaceTimeGrid::unit(2, 17, 41, 1.0).unwrap();
        let pot = ElectromagneticPotential::from_fn(&g, |x| c(3.0 * x[0] * x[1]), |x| [2.0 * x[1], -(x[0] * 2.0).sin()], |x| 0.0 * x[0]).unwrap();
        let u0 = g.sample(|x| C64::new((PI * x[0]).sin() * (PI * x[1]).sin(), (2.0 * PI * x[0]).sin() * (PI * x[1]).sin()));
        let sol = solve_forward(&g, &pot, &u0.view(), &DirichletData::zero(&g)).unwrap();
        let n0 = g.norm_space(&sol.u.row(0));
        for m in 1..g.nt() {
            let drift = (g.norm_space(&sol.u.row(m)) - g.norm_space(&sol.u.row(m - 1))).abs() / n0;
            assert!(drift <= 1e-10, "drift {drift}");
        }
    }

    #[test]
    fn complex_rho_growth_is_bounded() {
        let g = SpaceTimeGrid::unit(1, 41, 81, 1.0).unwrap();
        let pot = ElectromagneticPotential::from_fn(&g, |x| C64::new(0.0, 0.8 * x[0]), |_| [0.0, 0.0], |_| 0.0).unwrap();
        let u0 = g.sample(|x| c((PI * x[0]).sin()));
        let sol = solve_forward(&g, &pot, &u0.view(), &DirichletData::zero(&g)).unwrap();
        let n0 = g.norm_space(&sol.u.row(0));
        for m in 0..g.nt() {
            let bound = (0.8 * g.time(m)).exp() * n0 * (1.0 + g.tau().powi(2));
            assert!(g.norm_space(&sol.u.row(m)) <= bound);
        }
    }

    #[test]
    fn solver_is_linear() {
        let g = SpaceTimeGrid::unit(1, 21, 21, 1.0).unwrap();
        let pot = ElectromagneticPotential::from_fn(&g, |x| C64::new(x[0], 0.3), |x| [x[0], 0.0], |_| 1.0).unwrap();
        let ua = g.sample(|x| C64::new(1.0 + x[0], 0.0));
        let ub = g.sample(|x| C64::new(0.0, (PI * x[0]).sin() + 2.0));
        let ga = DirichletData::from_fn(&g, |x, t| C64::new(1.0 + x[0], 0.0) * (1.0 + t * t), |x, t| C64::new(1.0 + x[0], 0.0) * 2.0 * t);
        let gb = dirichlet_data_from_reference(&g, &pot, &ub.view()).unwrap();
        let (a, b) = (C64::new(0.3, -1.2), C64::new(2.0, 0.5));
        let sa = solve_forward(&g, &pot, &ua.view(), &ga).unwrap();
        let sb = solve_forward(&g, &pot, &ub.view(), &gb).unwrap();
        let gc = DirichletData { values: &ga.values * a + &gb.values * b, rate: &ga.rate * a + &gb.rate * b };
        let uc = &ua * a + &ub * b;
        let sc = solve_forward(&g, &pot, &uc.view(), &gc).unwrap();
        let comb = &sa.u * a + &sb.u * b;
        let combt = &sa.ut * a + &sb.ut * b;
        let scale = sc.u.iter().map(|v| v.norm()).fold(1.0, f64::max);
        assert!((&comb - &sc.u).iter().all(|v| v.norm() < 1e-12 * scale));
        assert!((&combt - &sc.ut).iter().all(|v| v.norm() < 1e-11 * scale));
    }

    #[test]
    fn differentiated_system_matches_time_differences() {
        let errs: Vec<f64> = [81, 161, 321]
            .iter()
            .map(|&nt| {
                let g = SpaceTimeGrid::unit(1, 41, nt, 0.5).unwrap();
                let pot = ElectromagneticPotential::from_fn(&g, |x| c(10.0 * (x[0] * (1.0 - x[0])).powi(2)), |_| [0.0, 0.0], |_| 0.0).unwrap();
                let u0 = g.sample(|x| c((PI * x[0]).sin()));
                let data = DirichletData::from_fn(&g, |_, _| c(0.0), |_, _| c(0.0));
                let sol = solve_forward(&g, &pot, &u0.view(), &data).unwrap();
                let fd = g.time_derivative(&sol.u.view());
                let mut e: f64 = 0.0;
                for m in 1..g.nt() - 1 {
                    for p in 0..g.n_nodes() {
                        e = e.max((fd[[m, p]] - sol.ut[[m, p]]).norm());
                    }
                }
                e
            })
            .collect();
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!(r > 3.4, "ratio {r} {errs:?}");
        }
    }

    #[test]
    fn k1_residual_shared_by_boundary_agreeing_pairs() {
        let g = SpaceTimeGrid::unit(2, 11, 5, 1.0).unwrap();
        let bump = |x: [f64; 2]| (16.0 * x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])).powi(2);
        let p1 = ElectromagneticPotential::from_fn(&g, |x| C64::new(x[0], 1.0), |x| [x[1], 0.5], |_| 0.0).unwrap();
        let p2 = ElectromagneticPotential::from_fn(&g, |x| C64::new(x[0], 1.0) + bump(x), |x| [x[1], 0.5], |_| 0.0).unwrap();
        let u0 = g.sample(|x| C64::new(1.0 + x[0], 0.0));
        let data = dirichlet_data_from_reference(&g, &p1, &u0.view()).unwrap();
        let (a0, a1) = compatibility_residuals(&g, &p1, &u0.view(), &data).unwrap();
        let (b0, b1) = compatibility_residuals(&g, &p2, &u0.view(), &data).unwrap();
        assert_eq!(a0, 0.0);
        assert_eq!(b0, 0.0);
        assert_abs_diff_eq!(a1, b1, epsilon = 1e-12);
    }
}
