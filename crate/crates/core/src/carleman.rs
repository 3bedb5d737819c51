//! Both sides of the global Carleman estimate and of the preliminary
//! initial-slice bound, evaluated on concrete space-time fields.
//!
//! All weighted quantities are computed with the normalised weight
//! `e^{s(α − α*)}`, `α* = max α`. Every reported term carries the same
//! factor `e^{−2sα*}` relative to its true value (`log_scale = 2sα*` recovers
//! it), so ratios are unaffected while nothing overflows or underflows.
//! Space-time quadratures drop the final slice, where the weight is zero.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{BoundarySubset, SpaceTimeField, SpaceTimeGrid};
use crate::weight::{clamped_exp, observation_boundary, CarlemanWeight, WeightCoefficients};
use crate::C64;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Relative size of boundary values tolerated for fields that must vanish on `∂Ω`.
const VANISH_TOL: f64 = 1e-10;

/// `L`, `R₁`, `R₂` and the conjugated operator for one weight.
pub struct ConjugatedOperators<'a> {
    grid: &'a SpaceTimeGrid,
    weight: &'a CarlemanWeight,
    coeffs: WeightCoefficients,
}

/// Trapezoid `‖f‖²_{L²(Q)}` with the final time slice dropped.
fn q_norm2(grid: &SpaceTimeGrid, f: &ArrayView2<C64>) -> f64 {
    let ws = grid.spatial_weights();
    let mut wt = grid.time_weights();
    let last = wt.len() - 1;
    wt[last] = 0.0;
    f.axis_iter(Axis(0))
        .zip(wt.iter())
        .filter(|(_, &w)| w > 0.0)
        .map(|(row, w)| w * row.iter().zip(ws.iter()).map(|(v, s)| v.norm_sqr() * s).sum::<f64>())
        .sum()
}

fn slicewise_laplacian(grid: &SpaceTimeGrid, u: &ArrayView2<C64>) -> SpaceTimeField {
    grid.map_slices(u, |row| grid.laplacian(row))
}

fn check_vanishing(grid: &SpaceTimeGrid, u: &ArrayView2<C64>, what: &str) -> Result<()> {
    let scale = u.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let bmax = grid
        .boundary_nodes()
        .iter()
        .flat_map(|b| u.column(b.node).to_vec())
        .map(|v| v.norm())
        .fold(0.0, f64::max);
    if bmax > VANISH_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidParameter(format!("{what} must vanish on ∂Ω (max boundary value {bmax:e})")));
    }
    Ok(())
}

impl<'a> ConjugatedOperators<'a> {
    pub fn new(grid: &'a SpaceTimeGrid, weight: &'a CarlemanWeight) -> Self {
        Self { grid, weight, coeffs: weight.coefficients(grid) }
    }

    pub fn coefficients(&self) -> &WeightCoefficients {
        &self.coeffs
    }

    /// `Lu = −i∂ₜu − Δu`.
    pub fn apply_l(&self, u: &ArrayView2<C64>) -> Result<SpaceTimeField> {
        self.grid.check_spacetime(u, "L")?;
        let dt = self.grid.time_derivative(u);
        let lap = slicewise_laplacian(self.grid, u);
        Ok(dt.mapv(|v| -I * v) - lap)
    }

    /// `R₁w = −i∂ₜw − Δw − s²|∇α|²w`.
    pub fn apply_r1(&self, w: &ArrayView2<C64>) -> Result<SpaceTimeField> {
        let s = self.weight.s();
        let mut out = self.apply_l(w)?;
        let ga2 = self.coeffs.grad_alpha_sq();
        ndarray::Zip::from(&mut out).and(w).and(&ga2).for_each(|o, &wv, &g| *o -= wv * (s * s * g));
        Ok(out)
    }

    /// `R₂w = 2s∇α·∇w + s(Δα)w`.
    pub fn apply_r2(&self, w: &ArrayView2<C64>) -> Result<SpaceTimeField> {
        self.grid.check_spacetime(w, "R2")?;
        let s = self.weight.s();
        let mut out = SpaceTimeField::zeros(w.dim());
        ndarray::Zip::from(&mut out).and(w).and(&self.coeffs.lap_alpha).for_each(|o, &wv, &la| *o = wv * (s * la));
        for (axis, ga) in self.coeffs.grad_alpha.iter().enumerate() {
            let d = self.grid.map_slices(w, |row| self.grid.derivative(row, axis));
            ndarray::Zip::from(&mut out).and(&d).and(ga).for_each(|o, &dv, &g| *o += dv * (2.0 * s * g));
        }
        Ok(out)
    }

    /// `e^{sα} L(w e^{−sα})` at time level `m` (which must be below the final
    /// two levels). Stencil neighbours enter through the exponent difference
    /// `e^{s(α_here − α_there)}`, so no huge intermediate weight is formed.
    fn conjugated_l_level(&self, w: &ArrayView2<C64>, m: usize) -> Array1<C64> {
        let (grid, s, alpha) = (self.grid, self.weight.s(), &self.coeffs.alpha);
        let mut out = Array1::zeros(grid.n_nodes());
        let tst = grid.time_derivative_stencil(m);
        for p in 0..grid.n_nodes() {
            let ap = alpha[[m, p]];
            let mut acc = C64::new(0.0, 0.0);
            for &(k, c) in &tst {
                acc -= I * w[[k, p]] * (c * (s * (ap - alpha[[k, p]])).exp());
            }
            for axis in 0..grid.dim() {
                for (q, c) in grid.second_derivative_stencil(p, axis) {
                    acc -= w[[m, q]] * (c * (s * (ap - alpha[[m, q]])).exp());
                }
            }
            out[p] = acc;
        }
        out
    }

    /// `‖e^{sα}L(we^{−sα}) − is(∂ₜα)w − R₁w − R₂w‖` and `‖w‖` over the time
    /// window `t ≤ t_max`, which must stay away from the pole at `T`.
    pub fn decomposition_residual(&self, w: &ArrayView2<C64>, t_max: f64) -> Result<(f64, f64)> {
        let grid = self.grid;
        grid.check_spacetime(w, "decomposition")?;
        let levels: Vec<usize> = (0..grid.nt()).filter(|&m| grid.time(m) <= t_max + 1e-12).collect();
        if levels.last().is_some_and(|&m| m + 2 >= grid.nt()) {
            return Err(Error::InvalidParameter("decomposition window must end before the last two time levels".into()));
        }
        let s = self.weight.s();
        let r1 = self.apply_r1(w)?;
        let r2 = self.apply_r2(w)?;
        let ws = grid.spatial_weights();
        let (mut res, mut norm) = (0.0, 0.0);
        for (j, &m) in levels.iter().enumerate() {
            // trapezoid in time on the window itself
            let tw = if j == 0 || j + 1 == levels.len() { 0.5 * grid.tau() } else { grid.tau() };
            let cl = self.conjugated_l_level(w, m);
            for p in 0..grid.n_nodes() {
                let d = cl[p] - I * (s * self.coeffs.dt_alpha[[m, p]]) * w[[m, p]] - r1[[m, p]] - r2[[m, p]];
                res += tw * ws[p] * d.norm_sqr();
                norm += tw * ws[p] * w[[m, p]].norm_sqr();
            }
        }
        Ok((res.sqrt(), norm.sqrt()))
    }
}

/// `∫_Ω e^{2s(α(x,0) − α*)} |ū₀∇β·∇u₀ − u₀∇β·∇ū₀| dx` and the matching scale
/// `∫_Ω e^{2s(α(x,0) − α*)} 2|u₀||∇β·∇u₀| dx` (size of each cancelling term).
pub fn compute_z_normalized(grid: &SpaceTimeGrid, u0: &ArrayView1<C64>, weight: &CarlemanWeight) -> Result<(f64, f64)> {
    grid.check_spatial(u0, "Z")?;
    let s = weight.s();
    let astar = weight.alpha_star();
    let grad = grid.gradient(u0);
    let gb = weight.grad_beta();
    let ws = grid.spatial_weights();
    let (mut z, mut scale) = (0.0, 0.0);
    for p in 0..grid.n_nodes() {
        let gd: C64 = (0..grid.dim()).map(|i| grad[[p, i]] * gb[[p, i]]).sum();
        let wgt = clamped_exp(2.0 * s * (weight.alpha_phi_at_node(p, 0.0).0 - astar));
        z += ws[p] * wgt * (u0[p].conj() * gd - u0[p] * gd.conj()).norm();
        scale += ws[p] * wgt * 2.0 * u0[p].norm() * gd.norm();
    }
    Ok((z, scale))
}

/// `Z(u₀)` in absolute terms (may underflow to 0 for strongly negative `α*`).
pub fn compute_z(grid: &SpaceTimeGrid, u0: &ArrayView1<C64>, weight: &CarlemanWeight) -> Result<f64> {
    let (z, _) = compute_z_normalized(grid, u0, weight)?;
    Ok(z * clamped_exp(2.0 * weight.s() * weight.alpha_star()))
}

/// One `s` value of a Carleman check. Norm terms are normalised (see module docs).
#[derive(Clone, Debug, PartialEq)]
pub struct CarlemanRow {
    pub s: f64,
    /// `‖R₁(ue^{sα})‖²`
    pub r1: f64,
    /// `‖R₂(ue^{sα})‖²`
    pub r2: f64,
    /// `s‖e^{sα}∇u‖²`
    pub grad: f64,
    /// `s³‖e^{sα}u‖²`
    pub mass: f64,
    /// `‖e^{sα}Lu‖²`
    pub lu: f64,
    /// `‖∂_νu‖²_{L²(Σ₀)}` (unweighted, expressed in the normalised units)
    pub boundary: f64,
    /// `s·Z(u₀)`
    pub z: f64,
    /// `s‖φ^{1/2}e^{sα}∂_νu‖²_{L²(Σ₀)}`
    pub boundary_weighted: f64,
    /// `(r1 + r2 + grad + mass) / (lu + boundary_weighted + z)`
    pub c_hat: f64,
    /// Same left side over `lu + boundary + z`.
    pub c_hat_literal: f64,
    pub log_scale: f64,
    /// False when the right side vanishes while the left side does not.
    pub ok: bool,
}

impl CarlemanRow {
    pub fn lhs(&self) -> f64 {
        self.r1 + self.r2 + self.grad + self.mass
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CarlemanReport {
    pub rows: Vec<CarlemanRow>,
    /// Smallest `s` from which `Ĉ(s)` is non-increasing through the end of the sweep.
    pub monotone_from: Option<f64>,
}

impl CarlemanReport {
    pub fn violation(&self) -> bool {
        self.rows.iter().any(|r| !r.ok)
    }
}

fn ratio(lhs: f64, rhs: f64) -> (f64, bool) {
    if rhs > 0.0 {
        (lhs / rhs, true)
    } else if lhs > 0.0 {
        (f64::INFINITY, false)
    } else {
        (0.0, true)
    }
}

/// `count` values geometrically spaced from `s_min` to `s_max`.
pub fn geometric_s_grid(s_min: f64, s_max: f64, count: usize) -> Result<Vec<f64>> {
    if !(s_min > 0.0 && s_max >= s_min && s_max.is_finite()) || count == 0 {
        return Err(Error::InvalidParameter(format!("bad s-grid [{s_min}, {s_max}] × {count}")));
    }
    if count == 1 {
        return Ok(vec![s_min]);
    }
    let r = (s_max / s_min).ln() / (count - 1) as f64;
    Ok((0..count)
        .map(|k| if k + 1 == count { s_max } else { s_min * (r * k as f64).exp() })
        .collect())
}

/// Upper half of a sweep (the larger `⌈n/2⌉` values).
pub fn upper_half(s_grid: &[f64]) -> &[f64] {
    &s_grid[s_grid.len() / 2..]
}

/// Evaluate every term of the Carleman estimate for `u` (vanishing on `∂Ω`)
/// at each `s` in `s_grid`. `weight`'s own `s` is ignored.
pub fn verify_carleman(
    grid: &SpaceTimeGrid,
    u: &ArrayView2<C64>,
    weight: &CarlemanWeight,
    s_grid: &[f64],
    exec: Execution,
) -> Result<CarlemanReport> {
    grid.check_spacetime(u, "verify_carleman")?;
    check_vanishing(grid, u, "u")?;
    let gamma0 = observation_boundary(grid, weight);
    let ops = ConjugatedOperators::new(grid, weight);
    let lu = ops.apply_l(u)?;
    let grads: Vec<SpaceTimeField> = (0..grid.dim()).map(|i| grid.map_slices(u, |r| grid.derivative(r, i))).collect();
    let trace = if gamma0.is_empty() { None } else { Some(grid.neumann_trace(u, &gamma0)?) };
    let plain = trace.as_ref().map_or(0.0, |t| t.norm2(grid));
    let astar = ops.coeffs.alpha_star;
    let rows = exec.map(s_grid, |&s| {
        carleman_row(grid, u, &ops, weight, &lu, &grads, &gamma0, trace.as_ref().map(|t| &t.values), plain, s, astar)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut monotone_from = rows.last().map(|r| r.s);
    for k in (0..rows.len().saturating_sub(1)).rev() {
        if rows[k + 1].c_hat <= rows[k].c_hat {
            monotone_from = Some(rows[k].s);
        } else {
            break;
        }
    }
    Ok(CarlemanReport { rows, monotone_from })
}

#[allow(clippy::too_many_arguments)]
fn carleman_row(
    grid: &SpaceTimeGrid,
    u: &ArrayView2<C64>,
    ops: &ConjugatedOperators,
    weight: &CarlemanWeight,
    lu: &SpaceTimeField,
    grads: &[SpaceTimeField],
    gamma0: &BoundarySubset,
    trace: Option<&Array2<C64>>,
    plain: f64,
    s: f64,
    astar: f64,
) -> Result<CarlemanRow> {
    let ws_weight = weight.with_s(s);
    let ops_s = ConjugatedOperators { grid, weight: &ws_weight, coeffs: ops.coeffs.clone() };
    let wgt = ops.coeffs.normalized_weight(s);
    let w = &wgt.mapv(|v| C64::new(v, 0.0)) * u;
    let r1 = q_norm2(grid, &ops_s.apply_r1(&w.view())?.view());
    let r2 = q_norm2(grid, &ops_s.apply_r2(&w.view())?.view());
    let grad: f64 = grads.iter().map(|g| q_norm2(grid, &(g * &wgt.mapv(|v| C64::new(v, 0.0))).view())).sum::<f64>() * s;
    let mass = s.powi(3) * q_norm2(grid, &w.view());
    let lu_w = q_norm2(grid, &(lu * &wgt.mapv(|v| C64::new(v, 0.0))).view());
    let log_scale = 2.0 * s * astar;
    let boundary = plain * (-log_scale).exp();
    let mut boundary_weighted = 0.0;
    if let Some(values) = trace {
        let wt = grid.time_weights();
        let members: Vec<_> = gamma0.members().collect();
        for m in 0..grid.nt() - 1 {
            for (k, e) in members.iter().enumerate() {
                let we = wgt[[m, e.node]];
                boundary_weighted += wt[m] * e.weight * ops.coeffs.phi[[m, e.node]] * we * we * values[[m, k]].norm_sqr();
            }
        }
        boundary_weighted *= s;
    }
    let (z_norm, _) = compute_z_normalized(grid, &u.row(0), &ws_weight)?;
    let z = s * z_norm;
    let lhs = r1 + r2 + grad + mass;
    let (c_hat, ok) = ratio(lhs, lu_w + boundary_weighted + z);
    let (c_hat_literal, _) = ratio(lhs, lu_w + boundary + z);
    Ok(CarlemanRow { s, r1, r2, grad, mass, lu: lu_w, boundary, z, boundary_weighted, c_hat, c_hat_literal, log_scale, ok })
}

/// Outcome of the initial-slice bound
/// `‖e^{sα(·,0)}v(·,0)‖² ≤ s^{-3/2}(‖R₁(e^{sα}v)‖² + s³‖e^{sα}v‖²)` (constant 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialBound {
    pub s: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Relative slack allowed for discretisation, `10(h² + τ²)`.
    pub tolerance: f64,
    pub ok: bool,
}

pub fn verify_initial_bound(grid: &SpaceTimeGrid, v: &ArrayView2<C64>, weight: &CarlemanWeight) -> Result<InitialBound> {
    grid.check_spacetime(v, "verify_initial_bound")?;
    check_vanishing(grid, v, "v")?;
    let s = weight.s();
    let ops = ConjugatedOperators::new(grid, weight);
    let wgt = ops.coeffs.normalized_weight(s);
    let w = &wgt.mapv(|x| C64::new(x, 0.0)) * v;
    let r1 = q_norm2(grid, &ops.apply_r1(&w.view())?.view());
    let mass = q_norm2(grid, &w.view());
    let lhs = grid.norm2_space(&w.row(0));
    let rhs = if s > 0.0 { s.powf(-1.5) * (r1 + s.powi(3) * mass) } else { f64::INFINITY };
    let tolerance = 10.0 * (grid.h_max().powi(2) + grid.tau().powi(2));
    Ok(InitialBound { s, lhs, rhs, tolerance, ok: lhs <= rhs * (1.0 + tolerance) })
}

/// Random band-limited space-time field: `Σ env_k(t) b_k(x)` with complex
/// Gaussian time envelopes `c₀ + c₁cos(πt/T) + c₂sin(πt/T)` damped like `1/k²`.
/// With `vanish` the spatial modes are Dirichlet sines; otherwise cosines
/// (non-zero on `∂Ω`).
pub fn band_limited_field<R: Rng>(grid: &SpaceTimeGrid, rng: &mut R, modes: usize, vanish: bool) -> SpaceTimeField {
    let dim = grid.dim();
    let xi: Vec<[f64; 2]> = grid
        .coords()
        .iter()
        .map(|x| {
            let mut r = [0.0; 2];
            for (i, &(a, b)) in grid.extents().iter().enumerate() {
                r[i] = (x[i] - a) / (b - a);
            }
            r
        })
        .collect();
    let basis = |k: usize, t: f64| {
        if vanish {
            (k as f64 * std::f64::consts::PI * t).sin()
        } else {
            ((k - 1) as f64 * std::f64::consts::PI * t).cos()
        }
    };
    let t_final = grid.t_final();
    let times = grid.times();
    let mut u = SpaceTimeField::zeros((grid.nt(), grid.n_nodes()));
    let index_sets: Vec<[usize; 2]> = if dim == 1 {
        (1..=modes).map(|k| [k, 1]).collect()
    } else {
        (1..=modes).flat_map(|k| (1..=modes).map(move |j| [k, j])).collect()
    };
    for idx in index_sets {
        let damp = if dim == 1 { (idx[0] * idx[0]) as f64 } else { (idx[0] * idx[0] * idx[1] * idx[1]) as f64 };
        let mut c = [C64::new(0.0, 0.0); 3];
        for ci in c.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *ci = C64::new(re, im) / damp;
        }
        let spatial: Vec<f64> = xi
            .iter()
            .map(|x| if dim == 1 { basis(idx[0], x[0]) } else { basis(idx[0], x[0]) * basis(idx[1], x[1]) })
            .collect();
        for (m, &t) in times.iter().enumerate() {
            let arg = std::f64::consts::PI * t / t_final;
            let env = c[0] + c[1] * arg.cos() + c[2] * arg.sin();
            for (p, &b) in spatial.iter().enumerate() {
                u[[m, p]] += env * b;
            }
        }
    }
    if vanish {
        // sines vanish on ∂Ω only up to rounding; make it exact
        for b in grid.boundary_nodes() {
            u.column_mut(b.node).fill(C64::new(0.0, 0.0));
        }
    }
    u
}

/// Member `index` of a seeded ensemble; independent of how many members are drawn.
pub fn ensemble_member(grid: &SpaceTimeGrid, seed: u64, index: u64, modes: usize, vanish: bool) -> SpaceTimeField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    band_limited_field(grid, &mut rng, modes, vanish)
}

#[derive(Clone, Debug)]
pub struct EnsembleReport {
    pub s_grid: Vec<f64>,
    pub reports: Vec<CarlemanReport>,
}

impl EnsembleReport {
    /// Ensemble maximum of `Ĉ(s)` per `s`.
    pub fn max_c_hat(&self) -> Vec<f64> {
        (0..self.s_grid.len())
            .map(|j| self.reports.iter().map(|r| r.rows[j].c_hat).fold(0.0, f64::max))
            .collect()
    }

    /// `max/min` of the ensemble-max `Ĉ` over the upper half of the sweep.
    pub fn upper_half_variation(&self) -> f64 {
        let mx = self.max_c_hat();
        let top = &mx[mx.len() / 2..];
        let hi = top.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = top.iter().cloned().fold(f64::INFINITY, f64::min);
        hi / lo
    }
}

/// Carleman check over `count` seeded band-limited fields vanishing on `∂Ω`.
pub fn verify_ensemble(
    grid: &SpaceTimeGrid,
    weight: &CarlemanWeight,
    s_grid: &[f64],
    count: usize,
    seed: u64,
    exec: Execution,
) -> Result<EnsembleReport> {
    let reports = exec.map_range(count, |k| {
        let u = ensemble_member(grid, seed, k as u64, 4, true);
        verify_carleman(grid, &u.view(), weight, s_grid, Execution::Sequential)
    });
    Ok(EnsembleReport { s_grid: s_grid.to_vec(), reports: reports.into_iter().collect::<Result<_>>()? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weight::build_default_weight;
    use approx::assert_abs_diff_eq;

    fn grid1(nx: usize, nt: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(1, &[(0.0, 1.0)], nx, nt, 2.0).unwrap()
    }

    #[test]
    fn zero_field_gives_zero_operators() {
        let g = grid1(21, 21);
        let w = build_default_weight(&g, &[-0.1], 1.0, 3.0).unwrap();
        let ops = ConjugatedOperators::new(&g, &w);
        let z = SpaceTimeField::zeros((g.nt(), g.n_nodes()));
        assert!(ops.apply_r1(&z.view()).unwrap().iter().all(|v| v.norm() == 0.0));
        assert!(ops.apply_r2(&z.view()).unwrap().iter().all(|v| v.norm() == 0.0));
        let rep = verify_carleman(&g, &z.view(), &w, &[1.0, 10.0], Execution::Sequential).unwrap();
        for r in &rep.rows {
            assert_eq!(r.lhs(), 0.0);
            assert_eq!(r.lu + r.boundary + r.z + r.boundary_weighted, 0.0);
            assert!(r.ok);
        }
    }

    #[test]
    fn s_zero_reduces_to_l() {
        let g = grid1(21, 21);
        let w = build_default_weight(&g, &[-0.1], 1.0, 0.0).unwrap();
        let ops = ConjugatedOperators::new(&g, &w);
        let f = ensemble_member(&g, 3, 0, 3, false);
        let r1 = ops.apply_r1(&f.view()).unwrap();
        let l = ops.apply_l(&f.view()).unwrap();
        assert_eq!(r1, l);
        assert!(ops.apply_r2(&f.view()).unwrap().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn decomposition_identity_converges() {
        for s in [1.0, 5.0] {
            let errs: Vec<f64> = [(21, 21), (41, 41), (81, 81)]
                .iter()
                .map(|&(nx, nt)| {
                    let g = grid1(nx, nt);
                    let w = build_default_weight(&g, &[-0.1], 1.0, s).unwrap();
                    let ops = ConjugatedOperators::new(&g, &w);
                    let f = ensemble_member(&g, 11, 0, 3, false);
                    let (r, n) = ops.decomposition_residual(&f.view(), 1.0).unwrap();
                    r / n
                })
                .collect();
            for e in errs.windows(2) {
                assert!((e[0] / e[1]).log2() > 1.8, "s = {s}: {errs:?}");
            }
        }
    }

    #[test]
    fn z_examples() {
        let g = SpaceTimeGrid::unit(1, 101, 5, 1.0).unwrap();
        let w = build_default_weight(&g, &[-1.0], 1.0, 0.01).unwrap();
        let real = g.sample(|x| C64::new((3.0 * x[0]).sin() + 1.0, 0.0));
        let imag = g.sample(|x| C64::new(0.0, x[0] * x[0] - 2.0));
        assert_eq!(compute_z(&g, &real.view(), &w).unwrap(), 0.0);
        assert_eq!(compute_z(&g, &imag.view(), &w).unwrap(), 0.0);
        // u₀ = e^{ix}: integrand e^{2sα(x,0)}·4(x+1)
        let u0 = g.sample(|x| C64::from_polar(1.0, x[0]));
        let z = compute_z(&g, &u0.view(), &w).unwrap();
        let oracle: f64 = {
            let n = 20001;
            let h = 1.0 / (n - 1) as f64;
            (0..n)
                .map(|k| {
                    let x = k as f64 * h;
                    let (a, _) = w.eval_alpha_phi(&[x], 0.0).unwrap();
                    let f = (2.0 * 0.01 * a).exp() * 4.0 * (x + 1.0);
                    if k == 0 || k == n - 1 { 0.5 * f * h } else { f * h }
                })
                .sum()
        };
        assert!(z > 0.0);
        assert!((z - oracle).abs() < 1e-3 * oracle, "{z} vs {oracle}");
        // unimodular invariance
        let rotated = u0.mapv(|v| v * C64::from_polar(1.0, 0.7));
        assert_abs_diff_eq!(compute_z(&g, &rotated.view(), &w).unwrap(), z, epsilon = 1e-12 * z);
    }

    #[test]
    fn weighted_norm_monotone_in_s() {
        let g = grid1(41, 41);
        let w = build_default_weight(&g, &[-0.1], 1.0, 1.0).unwrap();
        let u = ensemble_member(&g, 1, 0, 4, true);
        let c = w.coefficients(&g);
        let mut prev = f64::INFINITY;
        for s in [1.0, 2.0, 5.0, 10.0] {
            // absolute weights: fold the normalisation back in
            let wgt = c.normalized_weight(s).mapv(|v| v * (s * c.alpha_star).exp());
            let n = q_norm2(&g, &(&wgt.mapv(|v| C64::new(v, 0.0)) * &u).view());
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn rhs_monotone_under_boundary_inclusion() {
        let g = SpaceTimeGrid::new(2, &[(0.0, 1.0), (0.0, 1.0)], 15, 21, 2.0).unwrap();
        let w = build_default_weight(&g, &[-0.1, 0.5], 1.0, 1.0).unwrap();
        let u = ensemble_member(&g, 5, 0, 2, true);
        let small = g.boundary_subset(|e| e.face == crate::grid::Face::Right);
        let big = observation_boundary(&g, &w);
        assert!(small.is_subset_of(&big));
        let ts = g.neumann_trace(&u.view(), &small).unwrap().norm2(&g);
        let tb = g.neumann_trace(&u.view(), &big).unwrap().norm2(&g);
        assert!(tb >= ts);
    }

    #[test]
    fn nonvanishing_field_rejected() {
        let g = grid1(21, 21);
        let w = build_default_weight(&g, &[-0.1], 1.0, 1.0).unwrap();
        let u = ensemble_member(&g, 1, 0, 3, false);
        assert!(verify_carleman(&g, &u.view(), &w, &[1.0], Execution::Sequential).is_err());
    }

    #[test]
    fn single_s_report_and_initial_bound() {
        let g = grid1(41, 81);
        let w = build_default_weight(&g, &[-0.1], 1.0, 1.0).unwrap();
        let u = ensemble_member(&g, 2, 0, 4, true);
        let rep = verify_carleman(&g, &u.view(), &w, &[7.0], Execution::Sequential).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert!(rep.rows[0].c_hat.is_finite() && rep.rows[0].c_hat > 0.0);
        assert_eq!(rep.monotone_from, Some(7.0));
        let b = verify_initial_bound(&g, &u.view(), &w.with_s(10.0)).unwrap();
        assert!(b.ok, "{b:?}");
        let z = SpaceTimeField::zeros((g.nt(), g.n_nodes()));
        let b = verify_initial_bound(&g, &z.view(), &w).unwrap();
        assert_eq!((b.lhs, b.rhs, b.ok), (0.0, 0.0, true));
    }

    #[test]
    fn s_grid_shape() {
        let s = geometric_s_grid(1.0, 100.0, 12).unwrap();
        assert_eq!(s.len(), 12);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[11], 100.0);
        assert_eq!(upper_half(&s).len(), 6);
        assert_eq!(geometric_s_grid(3.0, 3.0, 1).unwrap(), vec![3.0]);
        assert!(geometric_s_grid(0.0, 3.0, 4).is_err());
    }

    #[test]
    fn ensemble_is_reproducible() {
        let g = grid1(11, 11);
        let a = ensemble_member(&g, 9, 4, 4, true);
        let b = ensemble_member(&g, 9, 4, 4, true);
        let c = ensemble_member(&g, 9, 5, 4, true);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
