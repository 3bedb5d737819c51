//! Paired forward solves for the three coefficient-stability protocols.
//!
//! Each protocol builds two admissible potentials that agree on `∂Ω` (the
//! perturbation is multiplied by a cutoff `χ` with `χ = ∇χ = 0` there), solves
//! the forward problem with both for a set of initial states sharing static
//! Dirichlet data, and compares the coefficient differences with the Neumann
//! traces of `v = ∂ₜ(u₁ − u₂)` on the observation boundary.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::carleman::{upper_half, verify_initial_bound, InitialBound};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{ComplexField, RealField, RealVectorField, SpaceTimeField, SpaceTimeGrid};
use crate::solver::{dirichlet_data_from_reference, magnetic_laplacian, ElectromagneticPotential, ForwardSolver};
use crate::weight::{observation_boundary, CarlemanWeight};
use crate::C64;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Boundary agreement tolerance for admissible pairs.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Case {
    /// Electric potential only, one measurement.
    Case1,
    /// Electric and magnetic potentials, `n + 1` measurements.
    Case2,
    /// Direction of `A` at known strength, `n + 1` measurements.
    Case3,
    /// Equal-strength pair with divergence-free difference, `n` measurements.
    Case3DivFree,
}

impl Case {
    pub fn name(self) -> &'static str {
        match self {
            Case::Case1 => "case1",
            Case::Case2 => "case2",
            Case::Case3 => "case3",
            Case::Case3DivFree => "case3-divfree",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "case1" => Some(Case::Case1),
            "case2" => Some(Case::Case2),
            "case3" => Some(Case::Case3),
            "case3-divfree" => Some(Case::Case3DivFree),
            _ => None,
        }
    }
}

/// Polynomial bump vanishing on `∂Ω`, a product over axes of `b(ξ)` with
/// `ξ ∈ [0,1]` the normalised coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Cutoff {
    /// `b = (4ξ(1−ξ))²`: `χ = ∇χ = 0` on `∂Ω`.
    #[default]
    Quartic,
    /// `b = 4ξ(1−ξ)`: `χ = 0` but `∇χ ≠ 0` on `∂Ω`.
    Quadratic,
}

impl Cutoff {
    pub fn name(self) -> &'static str {
        match self {
            Cutoff::Quartic => "quartic",
            Cutoff::Quadratic => "quadratic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "quartic" => Some(Cutoff::Quartic),
            "quadratic" => Some(Cutoff::Quadratic),
            _ => None,
        }
    }

    fn bump(self, xi: f64) -> (f64, f64, f64) {
        let q = 4.0 * xi * (1.0 - xi);
        let dq = 4.0 * (1.0 - 2.0 * xi);
        match self {
            Cutoff::Quadratic => (q, dq, -8.0),
            Cutoff::Quartic => (q * q, 2.0 * q * dq, 2.0 * dq * dq - 16.0 * q),
        }
    }

    /// `(χ, ∇χ)` at a physical point.
    pub fn eval(self, grid: &SpaceTimeGrid, x: [f64; 2]) -> (f64, [f64; 2]) {
        let dim = grid.dim();
        let mut vals = [(1.0, 0.0); 2];
        for (axis, v) in vals.iter_mut().enumerate().take(dim) {
            let (a, b) = grid.extent(axis);
            let (f, df, _) = self.bump((x[axis] - a) / (b - a));
            *v = (f, df / (b - a));
        }
        let chi = vals[0].0 * vals[1].0;
        let grad = [vals[0].1 * vals[1].0, vals[0].0 * vals[1].1];
        (chi, grad)
    }
}

/// `⟨x⟩ = (1 + |x|²)^{1/2}` and its gradient.
fn japanese(grid: &SpaceTimeGrid, x: [f64; 2]) -> (f64, [f64; 2]) {
    let r2: f64 = (0..grid.dim()).map(|i| x[i] * x[i]).sum();
    let j = (1.0 + r2).sqrt();
    let mut g = [0.0; 2];
    for i in 0..grid.dim() {
        g[i] = x[i] / j;
    }
    (j, g)
}

/// Parameters of a pair family; the experiment amplitude `δ` is passed separately.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairSpec {
    /// `ρⱼ = χ(a + δⱼ⟨x⟩)` with `δ₁ = delta_base`, `δ₂ = delta_base + δ`.
    Case1 { a: C64, delta_base: f64 },
    /// `ρ₁ = χa`, `A₁ = χa_vec`; `ρ₂ = ρ₁ + δχp⟨x⟩`, `A₂ = A₁ + δχc⟨x⟩e₁`.
    Case2 { a: C64, a_vec: [f64; 2], p: C64, c: f64 },
    /// `Aⱼ = r_ampχ(cos θⱼ, sin θⱼ)`, `θ₁ = θ₀ + κxy`, `θ₂ = θ₁ + δχ`.
    Case3 { r_amp: f64, theta0: f64, kappa: f64 },
    /// `S = σ∇Ψ`, `A = δ∇^⊥Ψ`, `A₁,₂ = (S ± A)/2`, `Ψ` a cubic bump.
    Case3DivFree { sigma: f64 },
}

impl PairSpec {
    pub fn case(&self) -> Case {
        match self {
            PairSpec::Case1 { .. } => Case::Case1,
            PairSpec::Case2 { .. } => Case::Case2,
            PairSpec::Case3 { .. } => Case::Case3,
            PairSpec::Case3DivFree { .. } => Case::Case3DivFree,
        }
    }

    pub fn default_for(case: Case) -> Self {
        match case {
            Case::Case1 => PairSpec::Case1 { a: C64::new(1.0, 0.5), delta_base: 0.5 },
            Case::Case2 => PairSpec::Case2 { a: C64::new(1.0, 0.5), a_vec: [0.5, -0.3], p: C64::new(1.0, 0.5), c: 1.0 },
            Case::Case3 => PairSpec::Case3 { r_amp: 1.0, theta0: 0.3, kappa: 1.0 },
            Case::Case3DivFree => PairSpec::Case3DivFree { sigma: 1.0 },
        }
    }
}

/// Largest pointwise ratio of one admissibility condition over interior nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionCheck {
    pub name: &'static str,
    /// Smallest `M` for which the condition holds on the grid.
    pub effective_m: f64,
    /// Node attaining it.
    pub node: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct PotentialPair {
    pub spec: PairSpec,
    pub delta: f64,
    pub cutoff: Cutoff,
    pub base: ElectromagneticPotential,
    pub first: ElectromagneticPotential,
    pub second: ElectromagneticPotential,
    pub conditions: Vec<ConditionCheck>,
}

impl PotentialPair {
    pub fn case(&self) -> Case {
        self.spec.case()
    }

    pub fn effective_m(&self) -> f64 {
        self.conditions.iter().map(|c| c.effective_m).fold(0.0, f64::max)
    }

    /// `ρ₁ − ρ₂`.
    pub fn rho_diff(&self) -> ComplexField {
        &self.first.rho - &self.second.rho
    }

    /// `A₁ − A₂`.
    pub fn a_diff(&self) -> RealVectorField {
        &self.first.a - &self.second.a
    }

    /// `A₁ + A₂`.
    pub fn a_sum(&self) -> RealVectorField {
        &self.first.a + &self.second.a
    }

    pub fn div_diff(&self) -> RealField {
        &self.first.div_a - &self.second.div_a
    }
}

/// Validation switches for pair construction.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PairOptions {
    pub cutoff: Cutoff,
    /// Reject pairs whose effective `M` exceeds this cap.
    pub m_cap: Option<f64>,
}

fn check_ratio<N, D>(grid: &SpaceTimeGrid, name: &'static str, num: N, den: D) -> Result<ConditionCheck>
where
    N: Fn(usize) -> f64,
    D: Fn(usize) -> f64,
{
    let interior = grid.interior_nodes();
    let scale = interior.iter().map(|&p| num(p).max(den(p))).fold(0.0, f64::max);
    let tiny = 1e-14 * scale;
    let mut best = ConditionCheck { name, effective_m: 0.0, node: None };
    for p in interior {
        let (n, d) = (num(p), den(p));
        if d <= tiny {
            if n <= tiny {
                continue;
            }
            return Err(Error::Condition {
                condition: name,
                node: p,
                detail: format!("left side {n:e} with vanishing right side at {:?}", grid.coord(p)),
            });
        }
        let r = n / d;
        if r > best.effective_m {
            best = ConditionCheck { name, effective_m: r, node: Some(p) };
        }
    }
    Ok(best)
}

/// `|Im(conj(ρ)∇ρ)| ≤ M|ρ|²` for `ρ = ρ₁ − ρ₂`.
pub fn check_c_el(grid: &SpaceTimeGrid, rho: &ArrayView1<C64>) -> Result<ConditionCheck> {
    let g = grid.gradient(rho);
    check_ratio(
        grid,
        "(c-el)",
        |p| {
            let v: f64 = (0..grid.dim()).map(|i| (rho[p].conj() * g[[p, i]]).im.powi(2)).sum();
            v.sqrt()
        },
        |p| rho[p].norm_sqr(),
    )
}

/// `|∇ρ| ≤ M|ρ|`.
pub fn check_h_em_a(grid: &SpaceTimeGrid, rho: &ArrayView1<C64>) -> Result<ConditionCheck> {
    let g = grid.gradient(rho);
    check_ratio(
        grid,
        "(h-em-a)",
        |p| (0..grid.dim()).map(|i| g[[p, i]].norm_sqr()).sum::<f64>().sqrt(),
        |p| rho[p].norm(),
    )
}

/// `maxᵢ Σⱼ |∂ᵢAⱼ| ≤ M|A|`.
pub fn check_h_em_b(grid: &SpaceTimeGrid, a: &ArrayView2<f64>) -> Result<ConditionCheck> {
    let jac = grid.jacobian(a);
    let dim = grid.dim();
    check_ratio(
        grid,
        "(h-em-b)",
        |p| (0..dim).map(|i| (0..dim).map(|j| jac[p][i][j].abs()).sum::<f64>()).fold(0.0, f64::max),
        |p| a.row(p).dot(&a.row(p)).sqrt(),
    )
}

/// `|∇(∇·A)| ≤ M|∇·A|`.
pub fn check_h_em_c(grid: &SpaceTimeGrid, div_a: &ArrayView1<f64>) -> Result<ConditionCheck> {
    let g = grid.gradient(div_a);
    check_ratio(
        grid,
        "(h-em-c)",
        |p| (0..grid.dim()).map(|i| g[[p, i]].powi(2)).sum::<f64>().sqrt(),
        |p| div_a[p].abs(),
    )
}

fn check_boundary(grid: &SpaceTimeGrid, base: &ElectromagneticPotential, pots: [&ElectromagneticPotential; 2]) -> Result<()> {
    for (j, pot) in pots.iter().enumerate() {
        let mismatch = pot.boundary_mismatch(grid, base);
        if mismatch > BOUNDARY_TOL {
            let node = grid
                .boundary_nodes()
                .iter()
                .map(|b| b.node)
                .find(|&p| {
                    (pot.rho[p] - base.rho[p]).norm() > BOUNDARY_TOL
                        || (pot.div_a[p] - base.div_a[p]).abs() > BOUNDARY_TOL
                        || (&pot.a.row(p) - &base.a.row(p)).iter().any(|v| v.abs() > BOUNDARY_TOL)
                })
                .unwrap_or(0);
            return Err(Error::Condition {
                condition: "boundary agreement",
                node,
                detail: format!("potential {} differs from the reference on ∂Ω by {mismatch:e}", j + 1),
            });
        }
    }
    Ok(())
}

fn finish(
    grid: &SpaceTimeGrid,
    spec: PairSpec,
    delta: f64,
    opts: PairOptions,
    base: ElectromagneticPotential,
    first: ElectromagneticPotential,
    second: ElectromagneticPotential,
    conditions: Vec<ConditionCheck>,
) -> Result<PotentialPair> {
    check_boundary(grid, &base, [&first, &second])?;
    if let Some(cap) = opts.m_cap {
        if let Some(c) = conditions.iter().find(|c| c.effective_m > cap) {
            return Err(Error::Condition {
                condition: c.name,
                node: c.node.unwrap_or(0),
                detail: format!("effective M = {} exceeds the cap {cap}", c.effective_m),
            });
        }
    }
    let m = conditions.iter().map(|c| c.effective_m).fold(0.0, f64::max);
    let sup = |pot: &ElectromagneticPotential| {
        let r = pot.rho.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let a = (0..grid.n_nodes()).map(|p| pot.a_sq(p).sqrt()).fold(0.0, f64::max);
        r.max(a)
    };
    let bound = m.max(sup(&first)).max(sup(&second));
    let first = first.with_bound(bound)?;
    let second = second.with_bound(bound)?;
    Ok(PotentialPair { spec, delta, cutoff: opts.cutoff, base, first, second, conditions })
}

fn require_nonzero(delta: f64) -> Result<()> {
    if !delta.is_finite() {
        return Err(Error::InvalidParameter(format!("perturbation amplitude {delta}")));
    }
    if delta == 0.0 {
        return Err(Error::Degenerate("δ = 0 gives identical potentials".into()));
    }
    Ok(())
}

pub fn make_case1_pair(grid: &SpaceTimeGrid, a: C64, delta1: f64, delta2: f64, opts: PairOptions) -> Result<PotentialPair> {
    require_nonzero(delta2 - delta1)?;
    let cut = opts.cutoff;
    let rho = |d: f64| move |x: [f64; 2]| cut.eval(grid, x).0 * (a + d * japanese(grid, x).0);
    let zero_a = |_: [f64; 2]| [0.0, 0.0];
    let base = ElectromagneticPotential::from_fn(grid, move |x| cut.eval(grid, x).0 * a, zero_a, |_| 0.0)?;
    let first = ElectromagneticPotential::from_fn(grid, rho(delta1), zero_a, |_| 0.0)?;
    let second = ElectromagneticPotential::from_fn(grid, rho(delta2), zero_a, |_| 0.0)?;
    let diff = &first.rho - &second.rho;
    let conditions = vec![check_c_el(grid, &diff.view())?];
    let spec = PairSpec::Case1 { a, delta_base: delta1 };
    finish(grid, spec, delta2 - delta1, opts, base, first, second, conditions)
}

pub fn make_case2_pair(grid: &SpaceTimeGrid, spec: PairSpec, delta: f64, opts: PairOptions) -> Result<PotentialPair> {
    let PairSpec::Case2 { a, a_vec, p, c } = spec else {
        return Err(Error::InvalidParameter("expected a Case-2 specification".into()));
    };
    require_nonzero(delta)?;
    let cut = opts.cutoff;
    let dim = grid.dim();
    let rho = move |d: f64| move |x: [f64; 2]| {
        let chi = cut.eval(grid, x).0;
        chi * a + d * chi * p * japanese(grid, x).0
    };
    let vec_a = move |d: f64| move |x: [f64; 2]| {
        let chi = cut.eval(grid, x).0;
        let mut v = [chi * a_vec[0], if dim == 2 { chi * a_vec[1] } else { 0.0 }];
        v[0] += d * chi * c * japanese(grid, x).0;
        v
    };
    let div = move |d: f64| move |x: [f64; 2]| {
        let (chi, gc) = cut.eval(grid, x);
        let (j, gj) = japanese(grid, x);
        let base: f64 = (0..dim).map(|i| gc[i] * a_vec[i]).sum();
        base + d * c * (gc[0] * j + chi * gj[0])
    };
    let base = ElectromagneticPotential::from_fn(grid, rho(0.0), vec_a(0.0), div(0.0))?;
    let first = base.clone();
    let second = ElectromagneticPotential::from_fn(grid, rho(delta), vec_a(delta), div(delta))?;
    let rd = &first.rho - &second.rho;
    let ad = &first.a - &second.a;
    let dd = &first.div_a - &second.div_a;
    let conditions = vec![
        check_h_em_a(grid, &rd.view())?,
        check_h_em_b(grid, &ad.view())?,
        check_h_em_c(grid, &dd.view())?,
    ];
    finish(grid, spec, delta, opts, base, first, second, conditions)
}

fn require_2d(grid: &SpaceTimeGrid, what: &str) -> Result<()> {
    if grid.dim() != 2 {
        return Err(Error::InvalidParameter(format!("{what} needs a two-dimensional domain")));
    }
    Ok(())
}

pub fn make_case3_pair(grid: &SpaceTimeGrid, spec: PairSpec, delta: f64, opts: PairOptions) -> Result<PotentialPair> {
    let PairSpec::Case3 { r_amp, theta0, kappa } = spec else {
        return Err(Error::InvalidParameter("expected a Case-3 specification".into()));
    };
    require_2d(grid, "case 3")?;
    require_nonzero(delta)?;
    let cut = opts.cutoff;
    // divergence agreement on ∂Ω needs ∇χ = 0 there, not just χ = 0
    for b in grid.boundary_nodes() {
        let (_, g) = cut.eval(grid, grid.coord(b.node));
        let norm = g[0].hypot(g[1]);
        if norm > BOUNDARY_TOL {
            return Err(Error::Condition {
                condition: "cutoff gradient on ∂Ω",
                node: b.node,
                detail: format!("|∇χ| = {norm:e} with the {} cutoff", cut.name()),
            });
        }
    }
    // θ and ∇θ for the two directions
    let theta = move |d: f64, x: [f64; 2]| {
        let (chi, gc) = cut.eval(grid, x);
        let th = theta0 + kappa * x[0] * x[1] + d * chi;
        (th, [kappa * x[1] + d * gc[0], kappa * x[0] + d * gc[1]])
    };
    let field = move |d: f64| {
        move |x: [f64; 2]| {
            let r = r_amp * cut.eval(grid, x).0;
            let (th, _) = theta(d, x);
            [r * th.cos(), r * th.sin()]
        }
    };
    let div = move |d: f64| {
        move |x: [f64; 2]| {
            let (chi, gc) = cut.eval(grid, x);
            let (th, gt) = theta(d, x);
            let (s, c) = th.sin_cos();
            r_amp * (gc[0] * c + gc[1] * s + chi * (-s * gt[0] + c * gt[1]))
        }
    };
    let zero_rho = |_: [f64; 2]| C64::new(0.0, 0.0);
    let first = ElectromagneticPotential::from_fn(grid, zero_rho, field(0.0), div(0.0))?;
    let second = ElectromagneticPotential::from_fn(grid, zero_rho, field(delta), div(delta))?;
    check_equal_strength(grid, &first, &second)?;
    let base = ElectromagneticPotential::zero(grid);
    finish(grid, spec, delta, opts, base, first, second, Vec::new())
}

/// `Ψ = (16ξ(1−ξ)η(1−η))³` with `∇Ψ` and `ΔΨ`.
fn cubic_bump(grid: &SpaceTimeGrid, x: [f64; 2]) -> (f64, [f64; 2], f64) {
    let (a0, b0) = grid.extent(0);
    let (a1, b1) = grid.extent(1);
    let (l0, l1) = (b0 - a0, b1 - a1);
    let (xi, eta) = ((x[0] - a0) / l0, (x[1] - a1) / l1);
    let (fx, fy) = (xi * (1.0 - xi), eta * (1.0 - eta));
    let p = 16.0 * fx * fy;
    let px = 16.0 * (1.0 - 2.0 * xi) * fy / l0;
    let py = 16.0 * fx * (1.0 - 2.0 * eta) / l1;
    let lap_p = -32.0 * (fy / (l0 * l0) + fx / (l1 * l1));
    let psi = p * p * p;
    let grad = [3.0 * p * p * px, 3.0 * p * p * py];
    let lap = 6.0 * p * (px * px + py * py) + 3.0 * p * p * lap_p;
    (psi, grad, lap)
}

pub fn make_divfree_pair(grid: &SpaceTimeGrid, spec: PairSpec, delta: f64, opts: PairOptions) -> Result<PotentialPair> {
    let PairSpec::Case3DivFree { sigma } = spec else {
        return Err(Error::InvalidParameter("expected a divergence-free Case-3 specification".into()));
    };
    require_2d(grid, "the divergence-free variant")?;
    require_nonzero(delta)?;
    let field = move |sign: f64| {
        move |x: [f64; 2]| {
            let (_, g, _) = cubic_bump(grid, x);
            // S = σ∇Ψ, A = δ(−∂yΨ, ∂xΨ)
            [0.5 * (sigma * g[0] - sign * delta * g[1]), 0.5 * (sigma * g[1] + sign * delta * g[0])]
        }
    };
    let div = move |x: [f64; 2]| 0.5 * sigma * cubic_bump(grid, x).2;
    let zero_rho = |_: [f64; 2]| C64::new(0.0, 0.0);
    let first = ElectromagneticPotential::from_fn(grid, zero_rho, field(1.0), div)?;
    let second = ElectromagneticPotential::from_fn(grid, zero_rho, field(-1.0), div)?;
    check_equal_strength(grid, &first, &second)?;
    let base = ElectromagneticPotential::zero(grid);
    finish(grid, spec, delta, PairOptions { cutoff: Cutoff::Quartic, ..opts }, base, first, second, Vec::new())
}

fn check_equal_strength(grid: &SpaceTimeGrid, first: &ElectromagneticPotential, second: &ElectromagneticPotential) -> Result<()> {
    let (node, gap) = strength_gap(grid, first, second);
    if gap > BOUNDARY_TOL {
        return Err(Error::Condition {
            condition: "equal strength |A₁| = |A₂|",
            node,
            detail: format!("gap {gap:e}"),
        });
    }
    Ok(())
}

/// Largest `||A₁| − |A₂||` and the node attaining it.
pub fn strength_gap(grid: &SpaceTimeGrid, first: &ElectromagneticPotential, second: &ElectromagneticPotential) -> (usize, f64) {
    (0..grid.n_nodes())
        .map(|p| (p, (first.a_sq(p).sqrt() - second.a_sq(p).sqrt()).abs()))
        .fold((0, 0.0), |best, c| if c.1 > best.1 { c } else { best })
}

/// Build the pair of the family `spec` at amplitude `delta`.
pub fn make_pair(grid: &SpaceTimeGrid, spec: PairSpec, delta: f64, opts: PairOptions) -> Result<PotentialPair> {
    match spec {
        PairSpec::Case1 { a, delta_base } => make_case1_pair(grid, a, delta_base, delta_base + delta, opts),
        PairSpec::Case2 { .. } => make_case2_pair(grid, spec, delta, opts),
        PairSpec::Case3 { .. } => make_case3_pair(grid, spec, delta, opts),
        PairSpec::Case3DivFree { .. } => make_divfree_pair(grid, spec, delta, opts),
    }
}

#[derive(Clone, Debug)]
pub struct InitialStateSet {
    pub states: Vec<ComplexField>,
    pub r0: f64,
    /// Lower bound of `|U₀ξ|` over unit `ξ` for the affine states (0 when there are none).
    pub margin: f64,
}

/// Constant `r₀` (all cases but the divergence-free variant) followed by the
/// affine states `xⱼ − aⱼ + 1` (all cases but Case 1). All states are real.
pub fn make_initial_states(case: Case, grid: &SpaceTimeGrid, r0: f64) -> Result<InitialStateSet> {
    if !(r0 > 0.0 && r0.is_finite()) {
        return Err(Error::InvalidParameter(format!("r0 must be positive, got {r0}")));
    }
    let mut states = Vec::new();
    if case != Case::Case3DivFree {
        states.push(grid.sample(|_| C64::new(r0, 0.0)));
    }
    let mut margin = 0.0;
    if case != Case::Case1 {
        for j in 0..grid.dim() {
            let a = grid.extent(j).0;
            states.push(grid.sample(|x| C64::new(x[j] - a + 1.0, 0.0)));
        }
        margin = 1.0;
    }
    Ok(InitialStateSet { states, r0, margin })
}

/// `v(·,0) = −2A·∇u₀ − i(ρ + S·A − i∇·A)u₀` from the pair's coefficients.
pub fn v0_formula(grid: &SpaceTimeGrid, pair: &PotentialPair, u0: &ArrayView1<C64>) -> ComplexField {
    let (rho, a, s, div) = (pair.rho_diff(), pair.a_diff(), pair.a_sum(), pair.div_diff());
    let grad = grid.gradient(u0);
    Array1::from_shape_fn(grid.n_nodes(), |p| {
        let adg: C64 = (0..grid.dim()).map(|i| grad[[p, i]] * a[[p, i]]).sum();
        let sa: f64 = s.row(p).dot(&a.row(p));
        -2.0 * adg - I * (rho[p] + sa - I * div[p]) * u0[p]
    })
}

/// Pointwise `|𝕁_S A + 𝕁_A S|` with `(𝕁_S A)ᵢ = Σⱼ ∂ᵢsⱼ aⱼ`.
pub fn jacobian_identity_residual(grid: &SpaceTimeGrid, s: &ArrayView2<f64>, a: &ArrayView2<f64>) -> RealField {
    let (js, ja) = (grid.jacobian(s), grid.jacobian(a));
    let dim = grid.dim();
    Array1::from_shape_fn(grid.n_nodes(), |p| {
        (0..dim)
            .map(|i| {
                let v: f64 = (0..dim).map(|j| js[p][i][j] * a[[p, j]] + ja[p][i][j] * s[[p, j]]).sum();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    })
}

/// `ℓ₁ = Im((2A·∇u₀ + (∇·A)u₀)(2𝕁_A∇ū₀ + ū₀∇(∇·A)))`, one component per axis,
/// returned as the pointwise Euclidean norm.
pub fn ell1(grid: &SpaceTimeGrid, a: &ArrayView2<f64>, div_a: &ArrayView1<f64>, u0: &ArrayView1<C64>) -> RealField {
    let dim = grid.dim();
    let gu = grid.gradient(u0);
    let ja = grid.jacobian(a);
    let gd = grid.gradient(div_a);
    Array1::from_shape_fn(grid.n_nodes(), |p| {
        let adg: C64 = (0..dim).map(|i| gu[[p, i]] * a[[p, i]]).sum();
        let first = 2.0 * adg + div_a[p] * u0[p];
        (0..dim)
            .map(|i| {
                let jg: C64 = (0..dim).map(|j| gu[[p, j]].conj() * ja[p][i][j]).sum();
                let second = 2.0 * jg + u0[p].conj() * gd[[p, i]];
                (first * second).im.powi(2)
            })
            .sum::<f64>()
            .sqrt()
    })
}

#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub case: Case,
    pub delta: f64,
    pub h: f64,
    pub tau: f64,
    pub s: f64,
    pub lambda: f64,
    pub norm_rho: f64,
    pub norm_a: f64,
    pub norm_div_a: f64,
    /// `‖∂_νvᵏ‖_{L²(Σ₀)}` per initial state.
    pub observations: Vec<f64>,
    pub obs_norm: f64,
    /// Coefficient sum over `obs_norm`; NaN for degenerate pairs.
    pub ratio: f64,
    pub degenerate: bool,
    /// Vanishing observation with a non-zero coefficient difference.
    pub violation: bool,
    pub effective_m: f64,
    /// Relative residual of the linearised system satisfied by `v`.
    pub linearized_residual: f64,
    /// `max_k ‖vᵏ(·,0) − formula‖_{L²(Ω)}`.
    pub v0_residual: f64,
    pub initial_bounds: Vec<InitialBound>,
}

impl StabilityReport {
    pub fn coefficient_norm(&self) -> f64 {
        self.norm_rho + self.norm_a + self.norm_div_a
    }

    pub fn initial_bound_ok(&self) -> bool {
        self.initial_bounds.iter().all(|b| b.ok)
    }
}

/// Per-state result of the paired solves.
#[derive(Clone, Debug)]
pub struct PairedSolve {
    /// `v = ∂ₜ(u₁ − u₂)`.
    pub v: SpaceTimeField,
    pub ut_second: SpaceTimeField,
    pub u0: ComplexField,
}

/// Solve with both potentials for every state, sharing the static data built from `u₀`.
pub fn paired_solves(grid: &SpaceTimeGrid, pair: &PotentialPair, states: &InitialStateSet, exec: Execution) -> Result<Vec<PairedSolve>> {
    let (s1, s2) = exec.join(|| ForwardSolver::new(grid, &pair.first), || ForwardSolver::new(grid, &pair.second));
    let solvers = [s1?, s2?];
    let jobs: Vec<(usize, usize)> = (0..states.states.len()).flat_map(|k| [(k, 0), (k, 1)]).collect();
    let sols = exec.map(&jobs, |&(k, j)| {
        let u0 = &states.states[k];
        let g = dirichlet_data_from_reference(grid, &pair.base, &u0.view())?;
        solvers[j].solve(&u0.view(), &g)
    });
    let mut sols = sols.into_iter().collect::<Result<Vec<_>>>()?.into_iter();
    let mut out = Vec::with_capacity(states.states.len());
    for u0 in &states.states {
        let a = sols.next().expect("two solves per state");
        let b = sols.next().expect("two solves per state");
        out.push(PairedSolve { v: &a.ut - &b.ut, ut_second: b.ut, u0: u0.clone() });
    }
    Ok(out)
}

/// Relative residual of `(−i∂ₜ − Δ_{A₁} + ρ₁)v = 2iA·∇∂ₜu₂ − (ρ + S·A − i∇·A)∂ₜu₂`
/// at the time midpoints `t_{m+½}` (the points where the scheme is centred),
/// over interior nodes. The right side is evaluated from the continuous
/// coefficient formula, so this measures the consistency of the discrete
/// operator difference.
pub fn linearized_residual(grid: &SpaceTimeGrid, pair: &PotentialPair, solve: &PairedSolve) -> Result<f64> {
    let (rho, a, s, div) = (pair.rho_diff(), pair.a_diff(), pair.a_sum(), pair.div_diff());
    let interior = grid.interior_nodes();
    let inv_tau = 1.0 / grid.tau();
    let (mut res, mut scale) = (0.0, 0.0);
    for m in 0..grid.nt() - 1 {
        let v = (&solve.v.row(m) + &solve.v.row(m + 1)) * 0.5;
        let w = (&solve.ut_second.row(m) + &solve.ut_second.row(m + 1)) * 0.5;
        let lap = magnetic_laplacian(grid, &pair.first, &v.view())?;
        let gw = grid.gradient(&w.view());
        for &p in &interior {
            let vt = (solve.v[[m + 1, p]] - solve.v[[m, p]]) * inv_tau;
            let lhs = -I * vt - lap[p] + pair.first.rho[p] * v[p];
            let adg: C64 = (0..grid.dim()).map(|i| gw[[p, i]] * a[[p, i]]).sum();
            let sa = s.row(p).dot(&a.row(p));
            let rhs = 2.0 * I * adg - (rho[p] + sa - I * div[p]) * w[p];
            res += (lhs - rhs).norm_sqr();
            scale += rhs.norm_sqr();
        }
    }
    Ok(if scale > 0.0 { (res / scale).sqrt() } else { res.sqrt() })
}

/// Run one stability experiment: paired solves, traces on `Γ₀`, coefficient
/// norms and the initial-slice bound over the upper half of `s_grid`.
pub fn run_stability(
    grid: &SpaceTimeGrid,
    pair: &PotentialPair,
    states: &InitialStateSet,
    weight: &CarlemanWeight,
    s_grid: &[f64],
    exec: Execution,
) -> Result<StabilityReport> {
    let gamma0 = observation_boundary(grid, weight);
    if gamma0.is_empty() {
        return Err(Error::EmptyObservation);
    }
    let solves = paired_solves(grid, pair, states, exec)?;
    let norm_rho = grid.norm_space(&pair.rho_diff().view());
    let norm_a = grid.norm_vector(&pair.a_diff().view());
    let norm_div_a = grid.norm_space_real(&pair.div_diff().view());
    let coeff = norm_rho + norm_a + norm_div_a;
    let mut observations = Vec::with_capacity(solves.len());
    let mut v0_residual: f64 = 0.0;
    let mut linear: f64 = 0.0;
    let mut initial_bounds = Vec::new();
    let top = upper_half(s_grid);
    for sol in &solves {
        observations.push(grid.neumann_trace(&sol.v.view(), &gamma0)?.norm(grid));
        let formula = v0_formula(grid, pair, &sol.u0.view());
        v0_residual = v0_residual.max(grid.norm_space(&(&sol.v.row(0) - &formula).view()));
        linear = linear.max(linearized_residual(grid, pair, sol)?);
        let bounds = exec.map(top, |&s| verify_initial_bound(grid, &sol.v.view(), &weight.with_s(s)));
        for b in bounds {
            initial_bounds.push(b?);
        }
    }
    let obs_norm: f64 = observations.iter().sum();
    let degenerate = coeff == 0.0;
    let violation = !degenerate && obs_norm == 0.0;
    let ratio = if degenerate || violation { f64::NAN } else { coeff / obs_norm };
    Ok(StabilityReport {
        case: pair.case(),
        delta: pair.delta,
        h: grid.h_max(),
        tau: grid.tau(),
        s: weight.s(),
        lambda: weight.lambda(),
        norm_rho,
        norm_a,
        norm_div_a,
        observations,
        obs_norm,
        ratio,
        degenerate,
        violation,
        effective_m: pair.effective_m(),
        linearized_residual: linear,
        v0_residual,
        initial_bounds,
    })
}

/// `‖·‖_∞` over space-time of `v` restricted to boundary nodes; zero for any
/// `v` built from paired solves with shared data.
pub fn boundary_sup(grid: &SpaceTimeGrid, v: &ArrayView2<C64>) -> f64 {
    grid.boundary_nodes()
        .iter()
        .map(|b| v.column(b.node).iter().map(|z| z.norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weight::build_default_weight;
    use approx::assert_abs_diff_eq;

    fn grid2(nx: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::unit(2, nx, nx, 2.0).unwrap()
    }

    #[test]
    fn cutoff_vanishes_with_gradient_on_boundary() {
        let g = grid2(11);
        for b in g.boundary_nodes() {
            let (chi, gr) = Cutoff::Quartic.eval(&g, g.coord(b.node));
            assert_eq!(chi, 0.0);
            assert_eq!(gr, [0.0, 0.0]);
            let (chi, gr) = Cutoff::Quadratic.eval(&g, g.coord(b.node));
            assert_eq!(chi, 0.0);
            let x = g.coord(b.node);
            let corner = (x[0] == 0.0 || x[0] == 1.0) && (x[1] == 0.0 || x[1] == 1.0);
            if !corner {
                assert!(gr[0].abs() + gr[1].abs() > 0.0);
            }
        }
    }

    #[test]
    fn cutoff_gradient_matches_differences() {
        let g = SpaceTimeGrid::unit(1, 401, 5, 1.0).unwrap();
        for cut in [Cutoff::Quartic, Cutoff::Quadratic] {
            let chi = g.sample(|x| cut.eval(&g, x).0);
            let d = g.derivative(&chi.view(), 0);
            for p in 0..g.n_nodes() {
                assert_abs_diff_eq!(d[p], cut.eval(&g, g.coord(p)).1[0], epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn case1_identical_deltas_are_degenerate() {
        let g = SpaceTimeGrid::unit(1, 21, 21, 2.0).unwrap();
        let r = make_case1_pair(&g, C64::new(1.0, 0.0), 0.3, 0.3, PairOptions::default());
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn case1_real_difference_has_zero_c_el_constant() {
        let g = SpaceTimeGrid::unit(1, 21, 21, 2.0).unwrap();
        let pair = make_case1_pair(&g, C64::new(1.0, 2.0), 0.1, 0.4, PairOptions::default()).unwrap();
        assert_eq!(pair.conditions[0].effective_m, 0.0);
        assert!(pair.rho_diff().iter().all(|v| v.im == 0.0));
    }

    #[test]
    fn case1_uncut_family_satisfies_gradient_bound() {
        // |∇(ρ₁−ρ₂)| = |δ₁−δ₂| |x|/⟨x⟩ ≤ |ρ₁−ρ₂|
        let g = SpaceTimeGrid::new(1, &[(-2.0, 3.0)], 101, 5, 1.0).unwrap();
        let (d1, d2) = (0.2, -0.7);
        for p in 0..g.n_nodes() {
            let x = g.coord(p);
            let (j, gj) = japanese(&g, x);
            let diff = ((d1 - d2) * j).abs();
            let grad = ((d1 - d2) * gj[0]).abs();
            assert!(grad <= diff);
        }
    }

    #[test]
    fn case2_records_finite_effective_m() {
        let g = grid2(21);
        let pair = make_case2_pair(&g, PairSpec::default_for(Case::Case2), 0.1, PairOptions::default()).unwrap();
        assert_eq!(pair.conditions.len(), 3);
        for c in &pair.conditions {
            assert!(c.effective_m.is_finite() && c.effective_m > 0.0, "{c:?}");
        }
        assert!(pair.first.boundary_mismatch(&g, &pair.second) <= BOUNDARY_TOL);
    }

    #[test]
    fn case2_cap_rejects_with_condition_name() {
        let g = grid2(21);
        let opts = PairOptions { m_cap: Some(1e-3), ..Default::default() };
        match make_case2_pair(&g, PairSpec::default_for(Case::Case2), 0.1, opts) {
            Err(Error::Condition { condition, .. }) => assert!(condition.starts_with("(h-em")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn case2_quadratic_cutoff_breaks_divergence_agreement() {
        let g = grid2(21);
        let opts = PairOptions { cutoff: Cutoff::Quadratic, ..Default::default() };
        match make_case2_pair(&g, PairSpec::default_for(Case::Case2), 0.1, opts) {
            Err(Error::Condition { condition, .. }) => assert_eq!(condition, "boundary agreement"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn case3_equal_strength_and_rejects_quadratic() {
        let g = grid2(21);
        let pair = make_case3_pair(&g, PairSpec::default_for(Case::Case3), 0.2, PairOptions::default()).unwrap();
        assert!(strength_gap(&g, &pair.first, &pair.second).1 <= 1e-12);
        let s = pair.a_sum();
        let a = pair.a_diff();
        for p in 0..g.n_nodes() {
            assert_abs_diff_eq!(s.row(p).dot(&a.row(p)), 0.0, epsilon = 1e-12);
        }
        let opts = PairOptions { cutoff: Cutoff::Quadratic, ..Default::default() };
        assert!(matches!(
            make_case3_pair(&g, PairSpec::default_for(Case::Case3), 0.2, opts),
            Err(Error::Condition { condition: "cutoff gradient on ∂Ω", .. })
        ));
        assert!(make_case3_pair(&SpaceTimeGrid::unit(1, 21, 21, 1.0).unwrap(), PairSpec::default_for(Case::Case3), 0.2, PairOptions::default()).is_err());
    }

    #[test]
    fn case3_divergence_matches_differences() {
        let g = grid2(81);
        let pair = make_case3_pair(&g, PairSpec::default_for(Case::Case3), 0.3, PairOptions::default()).unwrap();
        for pot in [&pair.first, &pair.second] {
            let d = g.divergence(&pot.a.view());
            let err = (&d - &pot.div_a).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err < 2e-2, "{err}");
        }
    }

    #[test]
    fn divfree_variant_has_zero_divergence_difference() {
        let g = grid2(41);
        let pair = make_divfree_pair(&g, PairSpec::default_for(Case::Case3DivFree), 0.2, PairOptions::default()).unwrap();
        assert!(pair.div_diff().iter().all(|&v| v == 0.0));
        assert!(strength_gap(&g, &pair.first, &pair.second).1 <= 1e-12);
        let d = g.divergence(&pair.a_diff().view());
        assert!(d.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 5e-2);
    }

    #[test]
    fn initial_states_have_expected_shape() {
        let g = grid2(11);
        let s = make_initial_states(Case::Case2, &g, 2.0).unwrap();
        assert_eq!(s.states.len(), 3);
        assert!(s.states[0].iter().all(|v| v.norm() >= 2.0));
        // U₀ = identity for the affine states
        for (j, st) in s.states[1..].iter().enumerate() {
            let gr = g.gradient(&st.view());
            for p in 0..g.n_nodes() {
                for i in 0..2 {
                    assert_abs_diff_eq!(gr[[p, i]].re, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
                }
            }
        }
        assert_eq!(make_initial_states(Case::Case1, &g, 1.0).unwrap().states.len(), 1);
        assert_eq!(make_initial_states(Case::Case3DivFree, &g, 1.0).unwrap().states.len(), 2);
        assert!(make_initial_states(Case::Case1, &g, 0.0).is_err());
    }

    #[test]
    fn ell1_vanishes_for_real_and_imaginary_states() {
        let g = grid2(21);
        let pair = make_case3_pair(&g, PairSpec::default_for(Case::Case3), 0.2, PairOptions::default()).unwrap();
        let (a, d) = (pair.a_diff(), pair.div_diff());
        let real = g.sample(|x| C64::new(1.0 + x[0] * x[1], 0.0));
        let imag = g.sample(|x| C64::new(0.0, 2.0 - x[0]));
        assert!(ell1(&g, &a.view(), &d.view(), &real.view()).iter().all(|&v| v == 0.0));
        assert!(ell1(&g, &a.view(), &d.view(), &imag.view()).iter().all(|&v| v == 0.0));
        let mixed = g.sample(|x| C64::new(1.0, x[0]));
        assert!(ell1(&g, &a.view(), &d.view(), &mixed.view()).iter().any(|&v| v > 0.0));
    }

    #[test]
    fn identical_potentials_are_reported_degenerate() {
        let g = SpaceTimeGrid::unit(1, 21, 21, 2.0).unwrap();
        let mut pair = make_case1_pair(&g, C64::new(1.0, 0.0), 0.1, 0.2, PairOptions::default()).unwrap();
        pair.second = pair.first.clone();
        let states = make_initial_states(Case::Case1, &g, 1.0).unwrap();
        let w = build_default_weight(&g, &[-0.1], 1.0, 1.0).unwrap();
        let r = run_stability(&g, &pair, &states, &w, &[1.0, 2.0], Execution::Sequential).unwrap();
        assert!(r.degenerate && !r.violation);
        assert!(r.ratio.is_nan());
        assert_eq!(r.obs_norm, 0.0);
    }

    #[test]
    fn case1_run_is_consistent() {
        let g = SpaceTimeGrid::unit(1, 41, 41, 2.0).unwrap();
        let pair = make_case1_pair(&g, C64::new(1.0, 0.5), 0.5, 0.6, PairOptions::default()).unwrap();
        let states = make_initial_states(Case::Case1, &g, 1.0).unwrap();
        let w = build_default_weight(&g, &[-0.1], 1.0, 1.0).unwrap();
        let r = run_stability(&g, &pair, &states, &w, &[1.0, 4.0, 16.0], Execution::Sequential).unwrap();
        assert!(!r.degenerate && !r.violation);
        assert!(r.ratio.is_finite() && r.ratio > 0.0);
        assert!(r.v0_residual < 1e-2 * r.norm_rho);
        // ρ₁ − ρ₂ enters as a plain multiplication: consistent to rounding
        assert!(r.linearized_residual < 1e-9, "{}", r.linearized_residual);
        assert_eq!(r.initial_bounds.len(), 2);
    }

    #[test]
    fn case2_residuals_are_second_order() {
        let run = |n: usize| {
            let g = grid2(n);
            let pair = make_case2_pair(&g, PairSpec::default_for(Case::Case2), 0.1, PairOptions::default()).unwrap();
            let states = make_initial_states(Case::Case2, &g, 1.0).unwrap();
            let w = build_default_weight(&g, &[-0.1, 0.5], 1.0, 1.0).unwrap();
            let r = run_stability(&g, &pair, &states, &w, &[1.0], Execution::Parallel).unwrap();
            (r.v0_residual, r.linearized_residual)
        };
        let (c, f) = (run(21), run(41));
        assert!(c.0 / f.0 > 3.4, "{c:?} {f:?}");
        assert!(c.1 / f.1 > 3.4, "{c:?} {f:?}");
    }

    #[test]
    fn v_vanishes_on_boundary() {
        let g = grid2(15);
        let pair = make_case2_pair(&g, PairSpec::default_for(Case::Case2), 0.1, PairOptions::default()).unwrap();
        let states = make_initial_states(Case::Case2, &g, 1.0).unwrap();
        for sol in paired_solves(&g, &pair, &states, Execution::Sequential).unwrap() {
            assert_eq!(boundary_sup(&g, &sol.v.view()), 0.0);
        }
    }

    #[test]
    fn execution_modes_agree() {
        let g = grid2(13);
        let pair = make_case2_pair(&g, PairSpec::default_for(Case::Case2), 0.1, PairOptions::default()).unwrap();
        let states = make_initial_states(Case::Case2, &g, 1.0).unwrap();
        let a = paired_solves(&g, &pair, &states, Execution::Sequential).unwrap();
        let b = paired_solves(&g, &pair, &states, Execution::Parallel).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.v, y.v);
        }
    }
}
