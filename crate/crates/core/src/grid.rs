//! Uniform space-time grids on an interval or rectangle, boundary bookkeeping,
//! second-order difference operators and trapezoidal quadrature.
//!
//! Spatial nodes are numbered row-major: `node = iy * nx + ix` (in 1D `iy = 0`).
//! Space-time fields are stored as `nt × n_nodes` arrays, one row per time level.

use std::ops::{Add, Mul, Sub};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::C64;

/// Nodal complex scalar field on the spatial grid.
pub type ComplexField = Array1<C64>;
/// Nodal real field on the spatial grid.
pub type RealField = Array1<f64>;
/// Nodal real n-vector field, shape `n_nodes × dim`.
pub type RealVectorField = Array2<f64>;
/// Complex scalar per space-time node, shape `nt × n_nodes`.
pub type SpaceTimeField = Array2<C64>;

/// Minimum number of nodes per axis (time included) required by the one-sided stencils.
pub const MIN_POINTS: usize = 5;

/// Scalar types the difference operators and quadratures act on.
pub trait Scalar:
    Copy + Default + Send + Sync + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
}

impl Scalar for f64 {}
impl Scalar for C64 {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Face {
    /// `x = a₀`, outward normal `-e₁`.
    Left,
    /// `x = b₀`, outward normal `+e₁`.
    Right,
    /// `y = a₁`, outward normal `-e₂` (2D only).
    Bottom,
    /// `y = b₁`, outward normal `+e₂` (2D only).
    Top,
}

impl Face {
    pub fn normal(self) -> [f64; 2] {
        match self {
            Face::Left => [-1.0, 0.0],
            Face::Right => [1.0, 0.0],
            Face::Bottom => [0.0, -1.0],
            Face::Top => [0.0, 1.0],
        }
    }

    /// Axis the normal points along.
    pub fn axis(self) -> usize {
        match self {
            Face::Left | Face::Right => 0,
            Face::Bottom | Face::Top => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Face::Left => "left",
            Face::Right => "right",
            Face::Bottom => "bottom",
            Face::Top => "top",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    Face(Face),
    /// 2D corner: belongs to two faces, no outward normal.
    Corner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryNode {
    pub node: usize,
    pub kind: BoundaryKind,
}

/// Uniform tensor grid on `Ω × [0, T]`, `Ω` an interval (dim 1) or a rectangle (dim 2).
#[derive(Clone, Debug)]
pub struct SpaceTimeGrid {
    dim: usize,
    extents: [(f64, f64); 2],
    nx: usize,
    nt: usize,
    t_final: f64,
    h: [f64; 2],
    tau: f64,
    boundary: Vec<BoundaryNode>,
    boundary_slot: Vec<Option<usize>>,
}

impl SpaceTimeGrid {
    pub fn new(dim: usize, extents: &[(f64, f64)], nx: usize, nt: usize, t_final: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if extents.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} extents, got {}",
                extents.len()
            )));
        }
        if nx < MIN_POINTS || nt < MIN_POINTS {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_POINTS} points per axis and in time (nx = {nx}, nt = {nt})"
            )));
        }
        for &(a, b) in extents {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(Error::InvalidGrid(format!("degenerate extent [{a}, {b}]")));
            }
        }
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::InvalidGrid(format!("final time must be positive, got {t_final}")));
        }
        let mut ext = [(0.0, 1.0); 2];
        let mut h = [1.0; 2];
        for (axis, &(a, b)) in extents.iter().enumerate() {
            ext[axis] = (a, b);
            h[axis] = (b - a) / (nx - 1) as f64;
        }
        let tau = t_final / (nt - 1) as f64;
        let n_nodes = nx.pow(dim as u32);
        let mut boundary = Vec::new();
        let mut boundary_slot = vec![None; n_nodes];
        for node in 0..n_nodes {
            let kind = match dim {
                1 => {
                    if node == 0 {
                        Some(BoundaryKind::Face(Face::Left))
                    } else if node == nx - 1 {
                        Some(BoundaryKind::Face(Face::Right))
                    } else {
                        None
                    }
                }
                _ => {
                    let (ix, iy) = (node % nx, node / nx);
                    let on_x = ix == 0 || ix == nx - 1;
                    let on_y = iy == 0 || iy == nx - 1;
                    match (on_x, on_y) {
                        (true, true) => Some(BoundaryKind::Corner),
                        (true, false) => Some(BoundaryKind::Face(if ix == 0 { Face::Left } else { Face::Right })),
                        (false, true) => Some(BoundaryKind::Face(if iy == 0 { Face::Bottom } else { Face::Top })),
                        (false, false) => None,
                    }
                }
            };
            if let Some(kind) = kind {
                boundary_slot[node] = Some(boundary.len());
                boundary.push(BoundaryNode { node, kind });
            }
        }
        Ok(Self { dim, extents: ext, nx, nt, t_final, h, tau, boundary, boundary_slot })
    }

    /// Unit interval `(0,1)` or unit square, the common test configuration.
    pub fn unit(dim: usize, nx: usize, nt: usize, t_final: f64) -> Result<Self> {
        Self::new(dim, &vec![(0.0, 1.0); dim], nx, nt, t_final)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn t_final(&self) -> f64 {
        self.t_final
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn h(&self, axis: usize) -> f64 {
        self.h[axis]
    }
    /// Largest spatial step.
    pub fn h_max(&self) -> f64 {
        self.h[..self.dim].iter().cloned().fold(0.0, f64::max)
    }
    pub fn extent(&self, axis: usize) -> (f64, f64) {
        self.extents[axis]
    }
    pub fn extents(&self) -> &[(f64, f64)] {
        &self.extents[..self.dim]
    }
    pub fn n_nodes(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    /// Same domain with `nx → 2nx − 1` and `nt → 2nt − 1` (both steps halved).
    pub fn refined(&self) -> Self {
        Self::new(self.dim, self.extents(), 2 * self.nx - 1, 2 * self.nt - 1, self.t_final)
            .expect("refining a valid grid stays valid")
    }

    pub fn time(&self, m: usize) -> f64 {
        if m + 1 == self.nt {
            self.t_final
        } else {
            m as f64 * self.tau
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.nt).map(|m| self.time(m)).collect()
    }

    /// Per-axis indices of a node.
    pub fn axis_index(&self, node: usize) -> [usize; 2] {
        [node % self.nx, node / self.nx]
    }

    pub fn node_at(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn coord(&self, node: usize) -> [f64; 2] {
        let idx = self.axis_index(node);
        let mut c = [0.0; 2];
        for (axis, c_axis) in c.iter_mut().enumerate().take(self.dim) {
            let (a, b) = self.extents[axis];
            *c_axis = if idx[axis] + 1 == self.nx { b } else { a + idx[axis] as f64 * self.h[axis] };
        }
        c
    }

    pub fn coords(&self) -> Vec<[f64; 2]> {
        (0..self.n_nodes()).map(|p| self.coord(p)).collect()
    }

    /// Evaluate a closure of the spatial coordinate at every node.
    pub fn sample<T, F: Fn([f64; 2]) -> T>(&self, f: F) -> Array1<T> {
        Array1::from_iter((0..self.n_nodes()).map(|p| f(self.coord(p))))
    }

    /// Evaluate a closure of `(x, t)` at every space-time node.
    pub fn sample_spacetime<F: Fn([f64; 2], f64) -> C64>(&self, f: F) -> SpaceTimeField {
        let coords = self.coords();
        Array2::from_shape_fn((self.nt, self.n_nodes()), |(m, p)| f(coords[p], self.time(m)))
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary_slot[node].is_some()
    }

    /// All boundary nodes (corners included) in increasing node order.
    pub fn boundary_nodes(&self) -> &[BoundaryNode] {
        &self.boundary
    }

    /// Position of `node` in [`Self::boundary_nodes`].
    pub fn boundary_slot(&self, node: usize) -> Option<usize> {
        self.boundary_slot[node]
    }

    pub fn corner_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.boundary.iter().filter(|b| b.kind == BoundaryKind::Corner).map(|b| b.node)
    }

    /// Interior nodes in increasing node order.
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&p| !self.is_boundary(p)).collect()
    }

    pub fn faces(&self) -> &'static [Face] {
        if self.dim == 1 {
            &[Face::Left, Face::Right]
        } else {
            &[Face::Left, Face::Right, Face::Bottom, Face::Top]
        }
    }

    pub fn measure(&self) -> f64 {
        self.extents().iter().map(|(a, b)| b - a).product()
    }

    pub fn check_spatial<T>(&self, f: &ArrayView1<T>, what: &str) -> Result<()> {
        if f.len() != self.n_nodes() {
            return Err(Error::ShapeMismatch(format!(
                "{what}: expected {} nodes, got {}",
                self.n_nodes(),
                f.len()
            )));
        }
        Ok(())
    }

    pub fn check_spacetime<T>(&self, f: &ArrayView2<T>, what: &str) -> Result<()> {
        if f.dim() != (self.nt, self.n_nodes()) {
            return Err(Error::ShapeMismatch(format!(
                "{what}: expected {}×{}, got {:?}",
                self.nt,
                self.n_nodes(),
                f.dim()
            )));
        }
        Ok(())
    }

    // ---------------------------------------------------------------- operators

    /// Second-order first derivative along `axis`: centred in the interior,
    /// three-point one-sided at the two ends of each grid line.
    pub fn derivative<T: Scalar>(&self, f: &ArrayView1<T>, axis: usize) -> Array1<T> {
        assert!(axis < self.dim && f.len() == self.n_nodes());
        let n = self.nx;
        let stride = if axis == 0 { 1 } else { n };
        let inv2h = 1.0 / (2.0 * self.h[axis]);
        let mut out = Array1::from_elem(f.len(), T::default());
        for p in 0..f.len() {
            let i = self.axis_index(p)[axis];
            let v = if i == 0 {
                (f[p + stride] * 4.0 - f[p] * 3.0 - f[p + 2 * stride]) * inv2h
            } else if i == n - 1 {
                (f[p] * 3.0 - f[p - stride] * 4.0 + f[p - 2 * stride]) * inv2h
            } else {
                (f[p + stride] - f[p - stride]) * inv2h
            };
            out[p] = v;
        }
        out
    }

    /// Second-order second derivative along `axis`: three-point centred in the
    /// interior, four-point one-sided at the ends (exact on cubics).
    pub fn second_derivative<T: Scalar>(&self, f: &ArrayView1<T>, axis: usize) -> Array1<T> {
        assert!(axis < self.dim && f.len() == self.n_nodes());
        let n = self.nx;
        let stride = if axis == 0 { 1 } else { n };
        let inv_h2 = 1.0 / (self.h[axis] * self.h[axis]);
        let mut out = Array1::from_elem(f.len(), T::default());
        for p in 0..f.len() {
            let i = self.axis_index(p)[axis];
            let v = if i == 0 {
                f[p] * 2.0 - f[p + stride] * 5.0 + f[p + 2 * stride] * 4.0 - f[p + 3 * stride]
            } else if i == n - 1 {
                f[p] * 2.0 - f[p - stride] * 5.0 + f[p - 2 * stride] * 4.0 - f[p - 3 * stride]
            } else {
                f[p + stride] - f[p] * 2.0 + f[p - stride]
            };
            out[p] = v * inv_h2;
        }
        out
    }

    /// Coefficients of [`Self::second_derivative`] at node `p` as `(node, weight)` pairs.
    pub fn second_derivative_stencil(&self, p: usize, axis: usize) -> Vec<(usize, f64)> {
        let n = self.nx;
        let st = if axis == 0 { 1 } else { n };
        let inv_h2 = 1.0 / (self.h[axis] * self.h[axis]);
        let i = self.axis_index(p)[axis];
        let taps: Vec<(usize, f64)> = if i == 0 {
            vec![(p, 2.0), (p + st, -5.0), (p + 2 * st, 4.0), (p + 3 * st, -1.0)]
        } else if i == n - 1 {
            vec![(p, 2.0), (p - st, -5.0), (p - 2 * st, 4.0), (p - 3 * st, -1.0)]
        } else {
            vec![(p - st, 1.0), (p, -2.0), (p + st, 1.0)]
        };
        taps.into_iter().map(|(q, c)| (q, c * inv_h2)).collect()
    }

    /// Coefficients of [`Self::time_derivative`] at time level `m` as `(level, weight)` pairs.
    pub fn time_derivative_stencil(&self, m: usize) -> Vec<(usize, f64)> {
        let inv2tau = 1.0 / (2.0 * self.tau);
        let taps = if m == 0 {
            vec![(0, -3.0), (1, 4.0), (2, -1.0)]
        } else if m == self.nt - 1 {
            vec![(m, 3.0), (m - 1, -4.0), (m - 2, 1.0)]
        } else {
            vec![(m - 1, -1.0), (m + 1, 1.0)]
        };
        taps.into_iter().map(|(k, c)| (k, c * inv2tau)).collect()
    }

    /// Gradient, shape `n_nodes × dim`.
    pub fn gradient<T: Scalar>(&self, f: &ArrayView1<T>) -> Array2<T> {
        let mut g = Array2::from_elem((f.len(), self.dim), T::default());
        for axis in 0..self.dim {
            g.column_mut(axis).assign(&self.derivative(f, axis));
        }
        g
    }

    /// Laplacian: 3-point (1D) / 5-point (2D) stencil in the interior,
    /// one-sided second-order stencils on boundary nodes.
    pub fn laplacian<T: Scalar>(&self, f: &ArrayView1<T>) -> Array1<T> {
        let mut out = self.second_derivative(f, 0);
        for axis in 1..self.dim {
            let d = self.second_derivative(f, axis);
            out.zip_mut_with(&d, |a, &b| *a = *a + b);
        }
        out
    }

    /// Divergence of a real vector field.
    pub fn divergence(&self, a: &ArrayView2<f64>) -> RealField {
        let mut out = RealField::zeros(self.n_nodes());
        for axis in 0..self.dim {
            out += &self.derivative(&a.column(axis), axis);
        }
        out
    }

    /// Jacobian `J[p][i][j] = ∂ᵢ a_j` of a real vector field at every node.
    pub fn jacobian(&self, a: &ArrayView2<f64>) -> Vec<[[f64; 2]; 2]> {
        let mut jac = vec![[[0.0; 2]; 2]; self.n_nodes()];
        for j in 0..self.dim {
            for i in 0..self.dim {
                let d = self.derivative(&a.column(j), i);
                for (p, v) in d.iter().enumerate() {
                    jac[p][i][j] = *v;
                }
            }
        }
        jac
    }

    /// Time derivative of a space-time field: centred on interior time levels,
    /// three-point one-sided at `t = 0` and `t = T`.
    pub fn time_derivative(&self, u: &ArrayView2<C64>) -> SpaceTimeField {
        let nt = self.nt;
        let inv2tau = 1.0 / (2.0 * self.tau);
        let mut out = SpaceTimeField::zeros(u.dim());
        for m in 0..nt {
            let mut row = out.row_mut(m);
            if m == 0 {
                row.assign(&((&u.row(1) * 4.0 - &u.row(0) * 3.0 - &u.row(2)) * inv2tau));
            } else if m == nt - 1 {
                row.assign(&((&u.row(m) * 3.0 - &u.row(m - 1) * 4.0 + &u.row(m - 2)) * inv2tau));
            } else {
                row.assign(&((&u.row(m + 1) - &u.row(m - 1)) * inv2tau));
            }
        }
        out
    }

    /// Apply a spatial operator to every time level.
    pub fn map_slices<F>(&self, u: &ArrayView2<C64>, op: F) -> SpaceTimeField
    where
        F: Fn(&ArrayView1<C64>) -> Array1<C64>,
    {
        let mut out = SpaceTimeField::zeros(u.dim());
        for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(u.axis_iter(Axis(0))) {
            dst.assign(&op(&src));
        }
        out
    }

    // --------------------------------------------------------------- quadrature

    /// 1D trapezoid weights along one axis.
    fn axis_weights(&self, axis: usize) -> Vec<f64> {
        let mut w = vec![self.h[axis]; self.nx];
        w[0] *= 0.5;
        w[self.nx - 1] *= 0.5;
        w
    }

    /// Tensor trapezoid weights; corners receive `h₁h₂/4` in 2D.
    pub fn spatial_weights(&self) -> RealField {
        let wx = self.axis_weights(0);
        if self.dim == 1 {
            return RealField::from(wx);
        }
        let wy = self.axis_weights(1);
        self.sample(|_| 0.0)
            .indexed_iter()
            .map(|(p, _)| {
                let [ix, iy] = self.axis_index(p);
                wx[ix] * wy[iy]
            })
            .collect()
    }

    /// Trapezoid weights in time.
    pub fn time_weights(&self) -> RealField {
        let mut w = RealField::from_elem(self.nt, self.tau);
        w[0] *= 0.5;
        w[self.nt - 1] *= 0.5;
        w
    }

    pub fn integrate_space<T: Scalar>(&self, f: &ArrayView1<T>) -> Result<T> {
        self.check_spatial(f, "integrate_space")?;
        let w = self.spatial_weights();
        Ok(f.iter().zip(w.iter()).fold(T::default(), |acc, (&v, &wi)| acc + v * wi))
    }

    pub fn integrate_spacetime(&self, f: &ArrayView2<C64>) -> Result<C64> {
        self.check_spacetime(f, "integrate_spacetime")?;
        let ws = self.spatial_weights();
        let wt = self.time_weights();
        let mut acc = C64::new(0.0, 0.0);
        for (m, row) in f.axis_iter(Axis(0)).enumerate() {
            let inner = row.iter().zip(ws.iter()).fold(C64::new(0.0, 0.0), |a, (&v, &w)| a + v * w);
            acc += inner * wt[m];
        }
        Ok(acc)
    }

    /// `‖f‖²_{L²(Ω)}` of a complex nodal field.
    pub fn norm2_space(&self, f: &ArrayView1<C64>) -> f64 {
        let w = self.spatial_weights();
        f.iter().zip(w.iter()).map(|(v, w)| v.norm_sqr() * w).sum()
    }

    pub fn norm_space(&self, f: &ArrayView1<C64>) -> f64 {
        self.norm2_space(f).sqrt()
    }

    /// `‖f‖_{L²(Ω)}` of a real scalar field.
    pub fn norm_space_real(&self, f: &ArrayView1<f64>) -> f64 {
        let w = self.spatial_weights();
        f.iter().zip(w.iter()).map(|(v, w)| v * v * w).sum::<f64>().sqrt()
    }

    /// `‖ |a| ‖_{L²(Ω)}` of a real vector field.
    pub fn norm_vector(&self, a: &ArrayView2<f64>) -> f64 {
        let w = self.spatial_weights();
        a.axis_iter(Axis(0))
            .zip(w.iter())
            .map(|(row, w)| row.iter().map(|v| v * v).sum::<f64>() * w)
            .sum::<f64>()
            .sqrt()
    }

    /// `‖u‖²_{L²(Q)}`.
    pub fn norm2_spacetime(&self, u: &ArrayView2<C64>) -> f64 {
        let ws = self.spatial_weights();
        let wt = self.time_weights();
        u.axis_iter(Axis(0))
            .zip(wt.iter())
            .map(|(row, wt)| wt * row.iter().zip(ws.iter()).map(|(v, w)| v.norm_sqr() * w).sum::<f64>())
            .sum()
    }

    pub fn norm_spacetime(&self, u: &ArrayView2<C64>) -> f64 {
        self.norm2_spacetime(u).sqrt()
    }

    // ----------------------------------------------------------------- boundary

    /// Face quadrature weight of a non-corner boundary node. In 1D each end
    /// point carries counting measure 1. In 2D the trapezoid weight of each
    /// face corner is folded onto its neighbour, so the weights of one face sum
    /// to the face length while corners (no normal) stay excluded.
    fn face_weight(&self, node: usize, face: Face) -> f64 {
        if self.dim == 1 {
            return 1.0;
        }
        let tangential = 1 - face.axis();
        let i = self.axis_index(node)[tangential];
        let h = self.h[tangential];
        if i == 1 || i == self.nx - 2 {
            1.5 * h
        } else {
            h
        }
    }

    /// Subset of the non-corner boundary nodes selected by `member`.
    pub fn boundary_subset<F>(&self, member: F) -> BoundarySubset
    where
        F: Fn(&BoundaryEntry) -> bool,
    {
        let entries = self
            .boundary
            .iter()
            .filter_map(|b| match b.kind {
                BoundaryKind::Face(face) => Some(BoundaryEntry {
                    node: b.node,
                    face,
                    normal: face.normal(),
                    coord: self.coord(b.node),
                    weight: self.face_weight(b.node, face),
                }),
                BoundaryKind::Corner => None,
            })
            .collect::<Vec<_>>();
        let members = entries.iter().map(&member).collect();
        BoundarySubset { entries, members }
    }

    /// Whole boundary (corners excluded).
    pub fn full_boundary(&self) -> BoundarySubset {
        self.boundary_subset(|_| true)
    }

    /// Subset made of whole faces.
    pub fn faces_subset(&self, faces: &[Face]) -> BoundarySubset {
        self.boundary_subset(|e| faces.contains(&e.face))
    }

    /// One-sided second-order outward normal derivative at every member of
    /// `gamma`, at every time level.
    pub fn neumann_trace(&self, u: &ArrayView2<C64>, gamma: &BoundarySubset) -> Result<BoundaryTrace> {
        self.check_spacetime(u, "neumann_trace")?;
        let members: Vec<&BoundaryEntry> = gamma.members().collect();
        if members.is_empty() {
            return Err(Error::EmptyObservation);
        }
        let mut values = Array2::zeros((self.nt, members.len()));
        for (k, e) in members.iter().enumerate() {
            let axis = e.face.axis();
            let stride = if axis == 0 { 1 } else { self.nx };
            let h = self.h[axis];
            // inward neighbours along the normal axis
            let (p0, p1, p2) = match e.face {
                Face::Left | Face::Bottom => (e.node, e.node + stride, e.node + 2 * stride),
                Face::Right | Face::Top => (e.node, e.node - stride, e.node - 2 * stride),
            };
            for m in 0..self.nt {
                // ∂_ν u = (3u₀ − 4u₁ + u₂) / 2h measured outward
                values[[m, k]] = (u[[m, p0]] * 3.0 - u[[m, p1]] * 4.0 + u[[m, p2]]) / (2.0 * h);
            }
        }
        Ok(BoundaryTrace {
            nodes: members.iter().map(|e| e.node).collect(),
            weights: members.iter().map(|e| e.weight).collect(),
            values,
        })
    }

    /// `∫∫_{Γ×(0,T)} f` for a boundary-time field laid out like a trace on `gamma`
    /// (shape `nt × #members`).
    pub fn integrate_boundary(&self, f: &ArrayView2<C64>, gamma: &BoundarySubset) -> Result<C64> {
        let weights: Vec<f64> = gamma.members().map(|e| e.weight).collect();
        if f.dim() != (self.nt, weights.len()) {
            return Err(Error::ShapeMismatch(format!(
                "integrate_boundary: expected {}×{}, got {:?}",
                self.nt,
                weights.len(),
                f.dim()
            )));
        }
        let wt = self.time_weights();
        let mut acc = C64::new(0.0, 0.0);
        for (m, row) in f.axis_iter(Axis(0)).enumerate() {
            let inner = row.iter().zip(&weights).fold(C64::new(0.0, 0.0), |a, (&v, &w)| a + v * w);
            acc += inner * wt[m];
        }
        Ok(acc)
    }
}

/// Non-corner boundary node with its face, unit outward normal and face quadrature weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryEntry {
    pub node: usize,
    pub face: Face,
    pub normal: [f64; 2],
    pub coord: [f64; 2],
    pub weight: f64,
}

/// Membership flags over the non-corner boundary nodes of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySubset {
    entries: Vec<BoundaryEntry>,
    members: Vec<bool>,
}

impl BoundarySubset {
    pub fn entries(&self) -> &[BoundaryEntry] {
        &self.entries
    }

    pub fn members(&self) -> impl Iterator<Item = &BoundaryEntry> + '_ {
        self.entries.iter().zip(&self.members).filter(|(_, &m)| m).map(|(e, _)| e)
    }

    pub fn contains(&self, node: usize) -> bool {
        self.entries.iter().zip(&self.members).any(|(e, &m)| m && e.node == node)
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when every member of `self` is a member of `other`.
    pub fn is_subset_of(&self, other: &BoundarySubset) -> bool {
        self.members().all(|e| other.contains(e.node))
    }

    /// Faces that are entirely members.
    pub fn full_faces(&self) -> Vec<Face> {
        let mut faces: Vec<Face> = self.entries.iter().map(|e| e.face).collect();
        faces.sort();
        faces.dedup();
        faces
            .into_iter()
            .filter(|f| {
                self.entries.iter().zip(&self.members).filter(|(e, _)| e.face == *f).all(|(_, &m)| m)
            })
            .collect()
    }

    pub fn member_nodes(&self) -> Vec<usize> {
        self.members().map(|e| e.node).collect()
    }
}

/// Boundary-time field on the members of a [`BoundarySubset`], shape `nt × #members`.
#[derive(Clone, Debug)]
pub struct BoundaryTrace {
    pub nodes: Vec<usize>,
    pub weights: Vec<f64>,
    pub values: Array2<C64>,
}

impl BoundaryTrace {
    /// `‖f‖²_{L²(Γ×(0,T))}`.
    pub fn norm2(&self, grid: &SpaceTimeGrid) -> f64 {
        let wt = grid.time_weights();
        self.values
            .axis_iter(Axis(0))
            .zip(wt.iter())
            .map(|(row, wt)| wt * row.iter().zip(&self.weights).map(|(v, w)| v.norm_sqr() * w).sum::<f64>())
            .sum()
    }

    pub fn norm(&self, grid: &SpaceTimeGrid) -> f64 {
        self.norm2(grid).sqrt()
    }
}
