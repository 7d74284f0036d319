//! Domain zoo, boundary charts, distance functions and the regions the
//! exit simulations run in.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fraclap::Verdict;
use crate::rng::stream_rng;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The concrete shapes, in their own coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    /// `{y_d > 0}`.
    HalfSpace,
    /// `B(0, radius)`.
    Ball { radius: f64 },
    /// `{|y| > radius}`.
    BallComplement { radius: f64 },
    /// `{y_d > coeff·|ỹ|²}`.
    Bump { coeff: f64 },
    /// `{y_d > slope·|ỹ|}`, Lipschitz only.
    Cone { slope: f64 },
}

fn default_one() -> f64 {
    1.0
}

/// A domain with its characteristics `(R, Λ)` (or `(R₁, Λ₁)` for the cone),
/// optionally rotated by an orthogonal matrix and dilated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainShape {
    pub d: usize,
    #[serde(flatten)]
    pub kind: ShapeKind,
    #[serde(default = "default_one")]
    pub r_loc: f64,
    #[serde(default = "default_one")]
    pub lambda_c: f64,
    /// World coordinates are `dilation · rotation · local`.
    #[serde(default)]
    pub rotation: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_one")]
    pub dilation: f64,
}

impl DomainShape {
    pub fn new(d: usize, kind: ShapeKind) -> Result<Self> {
        let s = Self {
            d,
            kind,
            r_loc: 1.0,
            lambda_c: 1.0,
            rotation: None,
            dilation: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn half_space(d: usize) -> Self {
        Self::new(d, ShapeKind::HalfSpace).expect("valid")
    }

    pub fn bump(d: usize, coeff: f64) -> Self {
        Self::new(d, ShapeKind::Bump { coeff }).expect("valid")
    }

    pub fn cone(d: usize, slope: f64) -> Self {
        Self::new(d, ShapeKind::Cone { slope }).expect("valid")
    }

    pub fn with_characteristics(mut self, r_loc: f64, lambda_c: f64) -> Result<Self> {
        self.r_loc = r_loc;
        self.lambda_c = lambda_c;
        self.validate()?;
        Ok(self)
    }

    pub fn with_rotation(mut self, rot: Vec<Vec<f64>>) -> Result<Self> {
        self.rotation = Some(rot);
        self.validate()?;
        Ok(self)
    }

    /// The set `λD`.
    pub fn dilated(&self, factor: f64) -> Self {
        let mut s = self.clone();
        s.dilation *= factor;
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::Parameter("dimension must be at least 1".into()));
        }
        if !(self.r_loc > 0.0 && self.r_loc <= 1.0) {
            return Err(Error::Geometry(format!("R must lie in (0, 1], got {}", self.r_loc)));
        }
        if !(self.lambda_c >= 1.0) {
            return Err(Error::Geometry(format!("Λ must be at least 1, got {}", self.lambda_c)));
        }
        if !(self.dilation > 0.0) {
            return Err(Error::Geometry("dilation must be positive".into()));
        }
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Geometry(format!("{what} must be positive, got {v}")))
            }
        };
        match self.kind {
            ShapeKind::HalfSpace => {}
            ShapeKind::Ball { radius } | ShapeKind::BallComplement { radius } => positive(radius, "radius")?,
            ShapeKind::Bump { coeff } => positive(coeff, "bump coefficient")?,
            ShapeKind::Cone { slope } => positive(slope, "cone slope")?,
        }
        if matches!(self.kind, ShapeKind::Bump { .. } | ShapeKind::Cone { .. }) && self.d < 2 {
            return Err(Error::Geometry("graph domains need d ≥ 2".into()));
        }
        if let Some(rot) = &self.rotation {
            if rot.len() != self.d || rot.iter().any(|r| r.len() != self.d) {
                return Err(Error::Geometry("rotation has the wrong shape".into()));
            }
            for i in 0..self.d {
                for j in 0..self.d {
                    let g: f64 = (0..self.d).map(|k| rot[k][i] * rot[k][j]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    if (g - want).abs() > 1e-10 {
                        return Err(Error::Geometry("rotation is not orthogonal".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// `r₀ = R / (4√(1+Λ²))`, in world units.
    pub fn r0(&self) -> f64 {
        self.dilation * self.r_loc / (4.0 * (1.0 + self.lambda_c * self.lambda_c).sqrt())
    }

    pub fn is_c11(&self) -> bool {
        !matches!(self.kind, ShapeKind::Cone { .. })
    }

    fn to_shape(&self, y: &[f64]) -> Vec<f64> {
        let s = 1.0 / self.dilation;
        match &self.rotation {
            None => y.iter().map(|v| v * s).collect(),
            Some(r) => (0..self.d)
                .map(|j| s * (0..self.d).map(|i| r[i][j] * y[i]).sum::<f64>())
                .collect(),
        }
    }

    fn to_world(&self, z: &[f64]) -> Vec<f64> {
        let s = self.dilation;
        match &self.rotation {
            None => z.iter().map(|v| v * s).collect(),
            Some(r) => (0..self.d).map(|i| s * dot(&r[i], z)).collect(),
        }
    }

    fn rotate_vec(&self, v: &[f64]) -> Vec<f64> {
        match &self.rotation {
            None => v.to_vec(),
            Some(r) => (0..self.d).map(|i| dot(&r[i], v)).collect(),
        }
    }

    /// Distance to the boundary, positive inside and negative outside.
    pub fn signed_distance(&self, y: &[f64]) -> f64 {
        let z = self.to_shape(y);
        self.dilation * local_signed_distance(&self.kind, &z)
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        self.signed_distance(y) > 0.0
    }

    /// A boundary point whose chart has `e_d` (rotated) as inward normal.
    pub fn canonical_boundary_point(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.d];
        match self.kind {
            ShapeKind::Ball { radius } => z[self.d - 1] = -radius,
            ShapeKind::BallComplement { radius } => z[self.d - 1] = radius,
            _ => {}
        }
        self.to_world(&z)
    }

    /// Chart `CS_Q` at a boundary point.
    pub fn chart(&self, q: &[f64]) -> Result<BoundaryChart> {
        if q.len() != self.d {
            return Err(Error::Geometry("boundary point has the wrong dimension".into()));
        }
        let sd = self.signed_distance(q);
        if sd.abs() > 1e-9 * self.dilation {
            return Err(Error::Geometry(format!(
                "point is not on the boundary (signed distance {sd:e})"
            )));
        }
        let ql = self.to_shape(q);
        let d = self.d;
        let (normal_local, graph) = match self.kind {
            ShapeKind::HalfSpace => (unit(d, d - 1), Graph::Flat),
            ShapeKind::Ball { radius } => {
                let n: Vec<f64> = ql.iter().map(|v| -v / radius).collect();
                (n, Graph::Sphere { radius, sign: 1.0 })
            }
            ShapeKind::BallComplement { radius } => {
                let n: Vec<f64> = ql.iter().map(|v| v / radius).collect();
                (n, Graph::Sphere { radius, sign: -1.0 })
            }
            ShapeKind::Bump { coeff } => {
                let mut g: Vec<f64> = ql[..d - 1].iter().map(|v| -2.0 * coeff * v).collect();
                g.push(1.0);
                let gn = norm(&g);
                let n: Vec<f64> = g.iter().map(|v| v / gn).collect();
                let tilde_n = norm(&n[..d - 1]);
                let graph = if tilde_n < 1e-14 {
                    Graph::Paraboloid { coeff }
                } else {
                    Graph::BumpImplicit {
                        coeff,
                        q: ql.clone(),
                        grad_norm: gn,
                    }
                };
                (n, graph)
            }
            ShapeKind::Cone { slope } => {
                if norm(&ql) > 1e-12 {
                    return Err(Error::Geometry("the cone carries a chart at its apex only".into()));
                }
                (unit(d, d - 1), Graph::Cone { slope })
            }
        };
        let frame_local = frame_with_last(&normal_local);
        let frame: Vec<Vec<f64>> = frame_local.iter().map(|r| self.rotate_vec(r)).collect();
        Ok(BoundaryChart {
            q: q.to_vec(),
            frame,
            frame_local,
            q_local: ql,
            graph,
            scale: self.dilation,
            window: self.r_loc * self.dilation,
            lipschitz: self.lambda_c,
        })
    }

    /// `δ_D(x)`.
    pub fn dist_to_complement(&self, x: &[f64]) -> f64 {
        dist_to_complement(self, x)
    }
}

/// `δ_D(x)`: Euclidean distance to `D^c`, zero outside and on the boundary.
pub fn dist_to_complement(domain: &DomainShape, x: &[f64]) -> f64 {
    domain.signed_distance(x).max(0.0)
}

fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i] = 1.0;
    e
}

/// Orthonormal rows with `last` as the final row.
fn frame_with_last(last: &[f64]) -> Vec<Vec<f64>> {
    let d = last.len();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    for i in 0..d {
        if rows.len() == d - 1 {
            break;
        }
        let mut e = unit(d, i);
        for b in rows.iter().chain(std::iter::once(&last.to_vec())) {
            let c = dot(&e, b);
            for (ej, bj) in e.iter_mut().zip(b) {
                *ej -= c * bj;
            }
        }
        let len = norm(&e);
        if len > 1e-6 {
            rows.push(e.iter().map(|v| v / len).collect());
        }
    }
    rows.push(last.to_vec());
    rows
}

fn local_signed_distance(kind: &ShapeKind, z: &[f64]) -> f64 {
    let d = z.len();
    match *kind {
        ShapeKind::HalfSpace => z[d - 1],
        ShapeKind::Ball { radius } => radius - norm(z),
        ShapeKind::BallComplement { radius } => norm(z) - radius,
        ShapeKind::Bump { coeff } => {
            let rho0 = norm(&z[..d - 1]);
            let h = z[d - 1];
            let t = bump_foot(coeff, rho0, h);
            let dist = ((t - rho0).powi(2) + (coeff * t * t - h).powi(2)).sqrt();
            if h > coeff * rho0 * rho0 {
                dist
            } else {
                -dist
            }
        }
        ShapeKind::Cone { slope } => {
            let rho0 = norm(&z[..d - 1]);
            let h = z[d - 1];
            let s = (1.0 + slope * slope).sqrt();
            let along = (rho0 + slope * h) / s;
            let dist = if along >= 0.0 {
                (h - slope * rho0).abs() / s
            } else {
                norm(z)
            };
            if h > slope * rho0 {
                dist
            } else {
                -dist
            }
        }
    }
}

/// Foot of the perpendicular from `(ρ₀, h)` onto the parabola `t ↦ (t, c t²)`:
/// the largest root of `2c²t³ + (1 - 2ch)t - ρ₀ = 0`.
fn bump_foot(c: f64, rho0: f64, h: f64) -> f64 {
    let f = |t: f64| 2.0 * c * c * t * t * t + (1.0 - 2.0 * c * h) * t - rho0;
    let df = |t: f64| 6.0 * c * c * t * t + (1.0 - 2.0 * c * h);
    if rho0 == 0.0 && 2.0 * c * h <= 1.0 {
        return 0.0;
    }
    let crit = if 2.0 * c * h > 1.0 {
        ((2.0 * c * h - 1.0) / (6.0 * c * c)).sqrt()
    } else {
        0.0
    };
    let mut hi = rho0.max(crit).max(1e-300) * 2.0 + 1e-12;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = crit;
    // f is convex on t > 0, so Newton from the right decreases monotonically
    let mut t = hi;
    for _ in 0..100 {
        let step = f(t) / df(t);
        let next = t - step;
        if !(next.is_finite()) || next < lo {
            break;
        }
        if (t - next).abs() <= 1e-15 * t.abs().max(1e-300) {
            return next;
        }
        t = next;
    }
    // bisection fallback on [crit, t]
    hi = t;
    if f(lo) > 0.0 {
        lo = 0.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq)]
enum Graph {
    Flat,
    /// `sign · (r - √(r² - |z̃|²))`.
    Sphere {
        radius: f64,
        sign: f64,
    },
    /// `c |z̃|²` (chart at the apex of the bump).
    Paraboloid {
        coeff: f64,
    },
    /// Chart of the bump at a general boundary point, through the quadratic
    /// equation along the normal.
    BumpImplicit {
        coeff: f64,
        q: Vec<f64>,
        grad_norm: f64,
    },
    /// `k |z̃|`.
    Cone {
        slope: f64,
    },
}

/// Local coordinates `CS_Q` and the graph function `φ_Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryChart {
    pub q: Vec<f64>,
    /// Rows `e_1 … e_{d-1}` (tangent) and `e_d` (inward normal), in world
    /// coordinates.
    pub frame: Vec<Vec<f64>>,
    frame_local: Vec<Vec<f64>>,
    q_local: Vec<f64>,
    graph: Graph,
    scale: f64,
    /// Radius of the chart window.
    pub window: f64,
    /// `Λ` certified by the domain.
    pub lipschitz: f64,
}

impl BoundaryChart {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Chart coordinates `(z̃, z_d)` of a world point.
    pub fn to_chart(&self, y: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = y.iter().zip(&self.q).map(|(a, b)| a - b).collect();
        self.frame.iter().map(|r| dot(r, &diff)).collect()
    }

    pub fn from_chart(&self, z: &[f64]) -> Vec<f64> {
        let mut y = self.q.clone();
        for (c, r) in z.iter().zip(&self.frame) {
            for i in 0..y.len() {
                y[i] += c * r[i];
            }
        }
        y
    }

    pub fn inward_normal(&self) -> &[f64] {
        &self.frame[self.dim() - 1]
    }

    /// `φ_Q(z̃)` in world units.
    pub fn phi(&self, zt: &[f64]) -> f64 {
        let s = self.scale;
        let u: Vec<f64> = zt.iter().map(|v| v / s).collect();
        s * self.phi_unit(&u)
    }

    fn phi_unit(&self, u: &[f64]) -> f64 {
        let r2: f64 = u.iter().map(|v| v * v).sum();
        match &self.graph {
            Graph::Flat => 0.0,
            Graph::Sphere { radius, sign } => {
                let inner = (radius * radius - r2).max(0.0);
                // r - √(r²-s²) = s² / (r + √(r²-s²))
                sign * r2 / (radius + inner.sqrt())
            }
            Graph::Paraboloid { coeff } => coeff * r2,
            Graph::Cone { slope } => slope * r2.sqrt(),
            Graph::BumpImplicit { coeff, q, grad_norm } => {
                let d = q.len();
                // tangent offset v and normal n in shape coordinates
                let mut v = vec![0.0; d];
                for (c, row) in u.iter().zip(&self.frame_local) {
                    for i in 0..d {
                        v[i] += c * row[i];
                    }
                }
                let n = &self.frame_local[d - 1];
                let nt2: f64 = n[..d - 1].iter().map(|x| x * x).sum();
                let vt2: f64 = v[..d - 1].iter().map(|x| x * x).sum();
                let vn: f64 = v[..d - 1].iter().zip(&n[..d - 1]).map(|(a, b)| a * b).sum();
                let a = -coeff * nt2;
                let b = grad_norm - 2.0 * coeff * vn;
                let c = -coeff * vt2;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return f64::NAN;
                }
                let den = b + b.signum() * disc.sqrt();
                -2.0 * c / den
            }
        }
    }

    /// `∇φ_Q(z̃)`.
    pub fn grad_phi(&self, zt: &[f64]) -> Vec<f64> {
        let s = self.scale;
        let u: Vec<f64> = zt.iter().map(|v| v / s).collect();
        let r = norm(&u);
        match &self.graph {
            Graph::Flat => vec![0.0; u.len()],
            Graph::Sphere { radius, sign } => {
                let root = (radius * radius - r * r).sqrt();
                u.iter().map(|v| sign * v / root).collect()
            }
            Graph::Paraboloid { coeff } => u.iter().map(|v| 2.0 * coeff * v).collect(),
            Graph::Cone { slope } => {
                if r == 0.0 {
                    vec![0.0; u.len()]
                } else {
                    u.iter().map(|v| slope * v / r).collect()
                }
            }
            Graph::BumpImplicit { .. } => {
                let h = 1e-5;
                (0..u.len())
                    .map(|i| {
                        let mut a = u.clone();
                        let mut b = u.clone();
                        a[i] += h;
                        b[i] -= h;
                        (self.phi_unit(&a) - self.phi_unit(&b)) / (2.0 * h)
                    })
                    .collect()
            }
        }
    }

    /// `Δφ_Q(z̃)` where it exists.
    pub fn laplacian_phi(&self, zt: &[f64]) -> f64 {
        let s = self.scale;
        let u: Vec<f64> = zt.iter().map(|v| v / s).collect();
        let n = u.len() as f64;
        let r2: f64 = u.iter().map(|v| v * v).sum();
        let val = match &self.graph {
            Graph::Flat => 0.0,
            Graph::Sphere { radius, sign } => {
                let q = radius * radius - r2;
                sign * (n / q.sqrt() + r2 / q.powf(1.5))
            }
            Graph::Paraboloid { coeff } => 2.0 * coeff * n,
            Graph::Cone { slope } => {
                if r2 == 0.0 {
                    f64::INFINITY
                } else {
                    slope * (n - 1.0) / r2.sqrt()
                }
            }
            Graph::BumpImplicit { .. } => {
                let h = 1e-4;
                let c = self.phi_unit(&u);
                (0..u.len())
                    .map(|i| {
                        let mut a = u.clone();
                        let mut b = u.clone();
                        a[i] += h;
                        b[i] -= h;
                        (self.phi_unit(&a) + self.phi_unit(&b) - 2.0 * c) / (h * h)
                    })
                    .sum()
            }
        };
        val / s
    }

    /// `ρ_Q(x) = x_d - φ_Q(x̃)`.
    pub fn rho(&self, x: &[f64]) -> Result<f64> {
        let z = self.to_chart(x);
        let d = z.len();
        if norm(&z[..d - 1]) >= self.window {
            return Err(Error::Geometry("point lies outside the chart window".into()));
        }
        let v = z[d - 1] - self.phi(&z[..d - 1]);
        if v.is_nan() {
            return Err(Error::Geometry("chart graph undefined at this point".into()));
        }
        Ok(v)
    }

    /// `ρ_Q` without the window check, for points known to be close.
    pub fn rho_unchecked(&self, x: &[f64]) -> f64 {
        let z = self.to_chart(x);
        let d = z.len();
        z[d - 1] - self.phi(&z[..d - 1])
    }

    /// `|x̃|` in the chart.
    pub fn tangential_norm(&self, x: &[f64]) -> f64 {
        let z = self.to_chart(x);
        norm(&z[..z.len() - 1])
    }

    /// The point with chart coordinates `(z̃, φ(z̃) + t)`.
    pub fn point_above(&self, zt: &[f64], t: f64) -> Vec<f64> {
        let mut z = zt.to_vec();
        z.push(self.phi(zt) + t);
        self.from_chart(&z)
    }
}

/// Something the simulated process can be stopped on.
pub trait Region: Sync {
    fn dim(&self) -> usize;

    /// Distance to the boundary, positive inside.
    fn signed_distance(&self, y: &[f64]) -> f64;

    /// Characteristic size, the unit for kill distances.
    fn scale(&self) -> f64;

    /// Radius of a ball about the origin containing the region, if bounded.
    fn bounding_radius(&self) -> Option<f64> {
        None
    }

    fn contains(&self, y: &[f64]) -> bool {
        self.signed_distance(y) > 0.0
    }

    fn distance(&self, y: &[f64]) -> f64 {
        self.signed_distance(y).max(0.0)
    }

    /// Nearest boundary point, by one gradient step on the signed distance.
    fn project_to_boundary(&self, y: &[f64]) -> Vec<f64> {
        let s = self.signed_distance(y);
        let h = 1e-7 * self.scale().max(1e-300);
        let mut g = vec![0.0; y.len()];
        for i in 0..y.len() {
            let mut a = y.to_vec();
            let mut b = y.to_vec();
            a[i] += h;
            b[i] -= h;
            g[i] = (self.signed_distance(&a) - self.signed_distance(&b)) / (2.0 * h);
        }
        let gn = norm(&g);
        if gn == 0.0 {
            return y.to_vec();
        }
        y.iter().zip(&g).map(|(v, gi)| v - s * gi / gn).collect()
    }
}

impl Region for DomainShape {
    fn dim(&self) -> usize {
        self.d
    }

    fn signed_distance(&self, y: &[f64]) -> f64 {
        DomainShape::signed_distance(self, y)
    }

    fn scale(&self) -> f64 {
        match self.kind {
            ShapeKind::Ball { radius } => radius * self.dilation,
            _ => self.r_loc * self.dilation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallRegion {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BallRegion {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Self { center, radius }
    }
}

impl Region for BallRegion {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn signed_distance(&self, y: &[f64]) -> f64 {
        let r: f64 = y
            .iter()
            .zip(&self.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        self.radius - r
    }

    fn scale(&self) -> f64 {
        self.radius
    }

    fn bounding_radius(&self) -> Option<f64> {
        Some(norm(&self.center) + self.radius)
    }
}

/// `{r_in < |y - center| < r_out}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusRegion {
    pub center: Vec<f64>,
    pub r_in: f64,
    pub r_out: f64,
}

impl Region for AnnulusRegion {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn signed_distance(&self, y: &[f64]) -> f64 {
        let r: f64 = y
            .iter()
            .zip(&self.center)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        (r - self.r_in).min(self.r_out - r)
    }

    fn scale(&self) -> f64 {
        self.r_out
    }
}

/// `{n·y > offset}` with unit `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceRegion {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Region for HalfSpaceRegion {
    fn dim(&self) -> usize {
        self.normal.len()
    }

    fn signed_distance(&self, y: &[f64]) -> f64 {
        dot(&self.normal, y) - self.offset
    }

    fn scale(&self) -> f64 {
        1.0
    }
}

/// `A ∩ B`.
pub struct Intersection<A, B> {
    pub a: A,
    pub b: B,
}

impl<A: Region, B: Region> Region for Intersection<A, B> {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn signed_distance(&self, y: &[f64]) -> f64 {
        self.a.signed_distance(y).min(self.b.signed_distance(y))
    }

    fn scale(&self) -> f64 {
        self.a.scale().min(self.b.scale())
    }

    fn bounding_radius(&self) -> Option<f64> {
        match (self.a.bounding_radius(), self.b.bounding_radius()) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        }
    }
}

/// Interior of the complement (for targets).
pub struct Complement<A>(pub A);

impl<A: Region> Region for Complement<A> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn signed_distance(&self, y: &[f64]) -> f64 {
        -self.0.signed_distance(y)
    }

    fn scale(&self) -> f64 {
        self.0.scale()
    }
}

impl<R: Region + ?Sized> Region for &R {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn signed_distance(&self, y: &[f64]) -> f64 {
        (**self).signed_distance(y)
    }

    fn scale(&self) -> f64 {
        (**self).scale()
    }

    fn bounding_radius(&self) -> Option<f64> {
        (**self).bounding_radius()
    }

    fn project_to_boundary(&self, y: &[f64]) -> Vec<f64> {
        (**self).project_to_boundary(y)
    }
}

impl<R: Region + ?Sized> Region for Box<R> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn signed_distance(&self, y: &[f64]) -> f64 {
        (**self).signed_distance(y)
    }

    fn scale(&self) -> f64 {
        (**self).scale()
    }

    fn bounding_radius(&self) -> Option<f64> {
        (**self).bounding_radius()
    }

    fn project_to_boundary(&self, y: &[f64]) -> Vec<f64> {
        (**self).project_to_boundary(y)
    }
}

/// Which part of the box a point is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxFace {
    Member,
    /// `ρ ≥ r₁`, still inside the side walls and in `D`.
    Top,
    /// `|x̃| ≥ r₂`, in `D`.
    Side,
    /// Outside `D` (across the bottom boundary `ρ = 0`).
    Bottom,
}

/// `D_Q(r₁, r₂) = {y ∈ D: 0 < ρ_Q(y) < r₁, |ỹ| < r₂}`.
#[derive(Debug, Clone)]
pub struct BoxRegion {
    pub domain: DomainShape,
    pub chart: BoundaryChart,
    pub r1: f64,
    pub r2: f64,
}

/// The box `D_Q(r₁, r₂)` of `domain` at the chart's base point.
pub fn box_region(domain: &DomainShape, chart: &BoundaryChart, r1: f64, r2: f64) -> Result<BoxRegion> {
    if !(r1 > 0.0 && r2 > 0.0) {
        return Err(Error::Parameter("box sizes must be positive".into()));
    }
    if r2 >= chart.window {
        return Err(Error::Geometry("box is wider than the chart window".into()));
    }
    Ok(BoxRegion {
        domain: domain.clone(),
        chart: chart.clone(),
        r1,
        r2,
    })
}

impl BoxRegion {
    pub fn face(&self, y: &[f64]) -> BoxFace {
        if !self.domain.contains(y) {
            return BoxFace::Bottom;
        }
        if self.chart.tangential_norm(y) >= self.r2 {
            return BoxFace::Side;
        }
        let rho = self.chart.rho_unchecked(y);
        if rho >= self.r1 {
            BoxFace::Top
        } else if rho > 0.0 {
            BoxFace::Member
        } else {
            BoxFace::Bottom
        }
    }

    pub fn member(&self, y: &[f64]) -> bool {
        self.face(y) == BoxFace::Member
    }
}

impl Region for BoxRegion {
    fn dim(&self) -> usize {
        self.domain.d
    }

    fn signed_distance(&self, y: &[f64]) -> f64 {
        // {ρ < r₁} is the complement of D shifted by r₁ along the normal
        let n = self.chart.inward_normal();
        let shifted: Vec<f64> = y.iter().zip(n).map(|(a, b)| a - self.r1 * b).collect();
        let top = -self.domain.signed_distance(&shifted);
        let side = self.r2 - self.chart.tangential_norm(y);
        self.domain.signed_distance(y).min(top).min(side)
    }

    fn scale(&self) -> f64 {
        self.r1.min(self.r2)
    }

    fn contains(&self, y: &[f64]) -> bool {
        self.member(y)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharacteristicsReport {
    pub checks: Vec<Verdict>,
    pub samples: usize,
}

impl CharacteristicsReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn random_unit<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Sampled check of the C^{1,1} characteristics and of the chart invariants.
pub fn verify_characteristics(domain: &DomainShape, sample_count: usize) -> CharacteristicsReport {
    let mut rng = stream_rng(0x5eed, 0);
    let d = domain.d;
    let big_r = domain.r_loc * domain.dilation;
    let lam = domain.lambda_c;
    let mut checks = Vec::new();

    // boundary sample in shape coordinates
    let mut qs: Vec<Vec<f64>> = Vec::new();
    for _ in 0..sample_count.max(1) {
        let z = match domain.kind {
            ShapeKind::HalfSpace => {
                let mut z: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                z[d - 1] = 0.0;
                z
            }
            ShapeKind::Ball { radius } | ShapeKind::BallComplement { radius } => {
                random_unit(&mut rng, d).iter().map(|v| v * radius).collect()
            }
            ShapeKind::Bump { coeff } => {
                let mut z: Vec<f64> = (0..d - 1).map(|_| rng.random_range(-0.5..0.5)).collect();
                let r2: f64 = z.iter().map(|v| v * v).sum();
                z.push(coeff * r2);
                z
            }
            ShapeKind::Cone { .. } => vec![0.0; d],
        };
        qs.push(domain.to_world(&z));
    }

    // interior ball of radius R tangent at each sample
    let mut worst_ball = f64::INFINITY;
    let mut chart_fail = None;
    let mut grad_bound: f64 = 0.0;
    let mut grad_lip: f64 = 0.0;
    let mut origin_err: f64 = 0.0;
    let mut sandwich_worst: f64 = 0.0;
    for q in &qs {
        let chart = match domain.chart(q) {
            Ok(c) => c,
            Err(e) => {
                chart_fail = Some(e.to_string());
                continue;
            }
        };
        let n = chart.inward_normal().to_vec();
        let center: Vec<f64> = q.iter().zip(&n).map(|(a, b)| a + big_r * b).collect();
        // the tangent ball sits inside iff the center is at depth ≥ R
        let depth = domain.signed_distance(&center);
        let mut slack = depth - big_r;
        // and its surface does not poke out anywhere
        for _ in 0..8 {
            let u = random_unit(&mut rng, d);
            let p: Vec<f64> = center.iter().zip(&u).map(|(c, v)| c + 0.999 * big_r * v).collect();
            slack = slack.min(domain.signed_distance(&p) + 1e-12);
        }
        worst_ball = worst_ball.min(slack);

        origin_err = origin_err.max(chart.phi(&vec![0.0; d - 1]).abs());
        if domain.is_c11() {
            origin_err = origin_err.max(norm(&chart.grad_phi(&vec![0.0; d - 1])));
        }
        for _ in 0..8 {
            let u = random_unit(&mut rng, d - 1);
            let s1 = rng.random_range(0.0..0.5 * big_r);
            let s2 = rng.random_range(0.0..0.5 * big_r);
            let v = random_unit(&mut rng, d - 1);
            let a: Vec<f64> = u.iter().map(|x| x * s1).collect();
            let b: Vec<f64> = v.iter().map(|x| x * s2).collect();
            let ga = chart.grad_phi(&a);
            let gb = chart.grad_phi(&b);
            grad_bound = grad_bound.max(norm(&ga));
            let diff: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x - y).collect();
            let dist: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            if norm(&dist) > 1e-9 {
                grad_lip = grad_lip.max(norm(&diff) / norm(&dist));
            }
            // sandwich (1+Λ²)^{-1/2} ρ ≤ δ ≤ ρ at a chart point
            let t = rng.random_range(0.0..0.25 * big_r);
            let x = chart.point_above(&a, t);
            if let Ok(rho) = chart.rho(&x) {
                let delta = domain.dist_to_complement(&x);
                let lo = rho / (1.0 + lam * lam).sqrt();
                sandwich_worst = sandwich_worst.max(lo - delta).max(delta - rho);
            }
        }
    }
    checks.push(Verdict::new(
        "charts",
        chart_fail.is_none(),
        chart_fail.unwrap_or_else(|| format!("{} charts built", qs.len())),
    ));
    checks.push(Verdict::new(
        "interior_ball",
        worst_ball >= -1e-9,
        format!("worst slack {worst_ball:.3e} for radius {big_r}"),
    ));
    checks.push(Verdict::new(
        "chart_origin",
        origin_err < 1e-9,
        format!("max |φ(0)|, |∇φ(0)| = {origin_err:.3e}"),
    ));
    checks.push(Verdict::new(
        "gradient_bound",
        grad_bound <= lam + 1e-9,
        format!("sup |∇φ| = {grad_bound:.4} vs Λ = {lam}"),
    ));
    let lip_ok = domain.is_c11() && grad_lip <= lam * (1.0 + 1e-6);
    checks.push(Verdict::new(
        "gradient_lipschitz",
        lip_ok,
        if domain.is_c11() {
            format!("sampled Lipschitz constant {grad_lip:.4} vs Λ = {lam}")
        } else {
            "gradient jumps at the apex (Lipschitz domain only)".into()
        },
    ));
    checks.push(Verdict::new(
        "sandwich",
        sandwich_worst <= 1e-12,
        format!("worst violation {sandwich_worst:.3e}"),
    ));
    CharacteristicsReport {
        checks,
        samples: qs.len(),
    }
}

/// Rotation by `angle` in the `(i, j)` coordinate plane.
pub fn plane_rotation(d: usize, i: usize, j: usize, angle: f64) -> Vec<Vec<f64>> {
    let mut r: Vec<Vec<f64>> = (0..d).map(|k| unit(d, k)).collect();
    let (c, s) = (angle.cos(), angle.sin());
    r[i][i] = c;
    r[i][j] = -s;
    r[j][i] = s;
    r[j][j] = c;
    r
}

/// Apply a rotation matrix to a vector.
pub fn rotate(r: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    r.iter().map(|row| dot(row, v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        let h = DomainShape::half_space(3);
        assert!((dist_to_complement(&h, &[0.0, 0.0, 0.3]) - 0.3).abs() < 1e-15);
        let b = DomainShape::new(2, ShapeKind::Ball { radius: 1.0 }).unwrap();
        assert!((dist_to_complement(&b, &[0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(dist_to_complement(&b, &[2.0, 0.0]), 0.0);
        let bump = DomainShape::bump(2, 0.1);
        for &h in &[1e-1, 1e-2, 1e-4] {
            let delta = dist_to_complement(&bump, &[0.0, h]);
            assert!(delta <= h + 1e-15 && delta >= h / 2f64.sqrt());
            assert!((delta / h - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bump_distance_against_brute_force() {
        let c = 0.1;
        let bump = DomainShape::bump(2, c);
        for &(x, y) in &[
            (0.3, 0.5),
            (-1.2, 0.05),
            (2.0, 0.1),
            (0.0, 6.0),
            (0.7, 8.0),
            (1.0, -0.4),
        ] {
            let mut best = f64::INFINITY;
            for k in 0..=400_000 {
                let t = -10.0 + 20.0 * k as f64 / 400_000.0;
                best = best.min(((t - x) * (t - x) + (c * t * t - y) * (c * t * t - y)).sqrt());
            }
            let sd = bump.signed_distance(&[x, y]);
            assert!((sd.abs() - best).abs() < 1e-6, "({x},{y}): {sd} vs {best}");
            assert_eq!(sd > 0.0, y > c * x * x);
        }
    }

    #[test]
    fn cone_distance() {
        let cone = DomainShape::cone(2, 0.5);
        let s = (1.25f64).sqrt();
        assert!((cone.signed_distance(&[0.0, 1.0]) - 1.0 / s).abs() < 1e-15);
        assert!((cone.signed_distance(&[0.0, -1.0]) + 1.0).abs() < 1e-15);
        assert!((cone.signed_distance(&[1.0, 0.0]) + 0.5 / s).abs() < 1e-15);
    }

    #[test]
    fn rho_examples() {
        let bump = DomainShape::bump(3, 0.1);
        let chart = bump.chart(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(chart.rho(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        let x = [0.2, -0.1, 0.1 * 0.05 + 0.03];
        assert!((chart.rho(&x).unwrap() - 0.03).abs() < 1e-15);
        let hs = DomainShape::half_space(2);
        let ch = hs.chart(&[0.0, 0.0]).unwrap();
        assert!((ch.rho(&[0.4, 0.25]).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(ch.rho(&[5.0, 0.1]), Err(Error::Geometry(_))));
    }

    #[test]
    fn general_bump_chart_is_consistent() {
        let bump = DomainShape::bump(2, 0.1);
        let q = [0.5, 0.025];
        let chart = bump.chart(&q).unwrap();
        assert!(chart.phi(&[0.0]).abs() < 1e-15);
        assert!(chart.grad_phi(&[0.0])[0].abs() < 1e-8);
        // points on the graph are boundary points
        for &s in &[-0.3, 0.1, 0.4] {
            let y = chart.point_above(&[s], 0.0);
            assert!(bump.signed_distance(&y).abs() < 1e-12);
        }
        // curvature of the parabola at q
        let k = 2.0 * 0.1 / (1.0f64 + (2.0 * 0.1 * 0.5f64).powi(2)).powf(1.5);
        assert!((chart.laplacian_phi(&[0.0]) - k).abs() < 1e-5);
    }

    #[test]
    fn sphere_chart_laplacian() {
        let ball = DomainShape::new(3, ShapeKind::Ball { radius: 1.0 }).unwrap();
        let q = ball.canonical_boundary_point();
        let chart = ball.chart(&q).unwrap();
        // numeric Laplacian of φ at a chart point
        let z = [0.2, 0.1];
        let h = 1e-4;
        let mut lap = 0.0;
        for i in 0..2 {
            let mut a = z;
            let mut b = z;
            a[i] += h;
            b[i] -= h;
            lap += (chart.phi(&a) + chart.phi(&b) - 2.0 * chart.phi(&z)) / (h * h);
        }
        assert!(
            (chart.laplacian_phi(&z) - lap).abs() < 1e-5,
            "{} vs {lap}",
            chart.laplacian_phi(&z)
        );
    }

    #[test]
    fn box_faces() {
        let h = DomainShape::half_space(2);
        let chart = h.chart(&[0.0, 0.0]).unwrap();
        let b = box_region(&h, &chart, 0.1, 0.2).unwrap();
        assert_eq!(b.face(&[0.0, 0.05]), BoxFace::Member);
        assert_eq!(b.face(&[0.0, 0.2]), BoxFace::Top);
        assert_eq!(b.face(&[0.3, 0.05]), BoxFace::Side);
        assert_eq!(b.face(&[0.0, -0.05]), BoxFace::Bottom);
        assert!((b.signed_distance(&[0.0, 0.03]) - 0.03).abs() < 1e-15);
        assert!((b.signed_distance(&[0.0, 0.08]) - 0.02).abs() < 1e-15);
        // annulus between D_Q(2δ, r) and D_Q(δ, r)
        let delta = 0.02;
        let outer = box_region(&h, &chart, 2.0 * delta, 0.15).unwrap();
        let inner = box_region(&h, &chart, delta, 0.15).unwrap();
        let y = [0.0, 1.5 * delta];
        assert!(outer.member(&y) && !inner.member(&y));
    }

    #[test]
    fn characteristics() {
        // the unit sphere's graph has gradient Lipschitz constant above 1
        // away from the chart origin, so Λ = 1 is too tight
        let ball = DomainShape::new(2, ShapeKind::Ball { radius: 1.0 })
            .unwrap()
            .with_characteristics(1.0, 2.0)
            .unwrap();
        let r = verify_characteristics(&ball, 50);
        assert!(r.checks.iter().find(|c| c.name == "interior_ball").unwrap().pass);
        assert!(r.passed(), "{:?}", r.checks);
        let bump = DomainShape::bump(2, 0.1).with_characteristics(0.5, 1.0).unwrap();
        let r = verify_characteristics(&bump, 50);
        assert!(r.passed(), "{:?}", r.checks);
        let cone = DomainShape::cone(2, 0.5);
        let r = verify_characteristics(&cone, 5);
        assert!(!r.passed());
        assert!(DomainShape::half_space(2).with_characteristics(2.0, 1.0).is_err());
        assert!(DomainShape::half_space(2).with_characteristics(1.0, 0.5).is_err());
    }

    #[test]
    fn r0_value() {
        let h = DomainShape::half_space(2);
        assert!((h.r0() - 1.0 / (4.0 * 2f64.sqrt())).abs() < 1e-15);
        assert!((h.dilated(2.0).r0() - 2.0 / (4.0 * 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn rotated_domain_agrees() {
        let rot = plane_rotation(2, 0, 1, 0.7);
        let bump = DomainShape::bump(2, 0.1);
        let rb = bump.clone().with_rotation(rot.clone()).unwrap();
        for &(x, y) in &[(0.3, 0.2), (-0.5, 0.01), (1.0, -0.2)] {
            let p = rotate(&rot, &[x, y]);
            assert!((rb.signed_distance(&p) - bump.signed_distance(&[x, y])).abs() < 1e-12);
        }
        let q = rb.canonical_boundary_point();
        let chart = rb.chart(&q).unwrap();
        let p = rotate(&rot, &[0.1, 0.05]);
        assert!((chart.rho(&p).unwrap() - (0.05 - 0.1 * 0.01)).abs() < 1e-12);
    }

    #[test]
    fn projection_lands_on_boundary() {
        let ball = DomainShape::new(2, ShapeKind::Ball { radius: 1.0 }).unwrap();
        let y = ball.project_to_boundary(&[0.6, 0.79]);
        assert!(ball.signed_distance(&y).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn sandwich_on_bump(x in -0.3f64..0.3, t in 0.0f64..0.15) {
            let bump = DomainShape::bump(2, 0.1);
            let chart = bump.chart(&[0.0, 0.0]).unwrap();
            let y = chart.point_above(&[x], t);
            let rho = chart.rho(&y).unwrap();
            let delta = bump.dist_to_complement(&y);
            prop_assert!(delta <= rho + 1e-12);
            prop_assert!(delta >= rho / 2f64.sqrt() - 1e-12);
        }

        #[test]
        fn distance_is_one_lipschitz(a in proptest::collection::vec(-2.0f64..2.0, 2), b in proptest::collection::vec(-2.0f64..2.0, 2)) {
            for dom in [DomainShape::bump(2, 0.1), DomainShape::cone(2, 0.5), DomainShape::new(2, ShapeKind::BallComplement { radius: 1.0 }).unwrap()] {
                let diff = ((a[0]-b[0]).powi(2) + (a[1]-b[1]).powi(2)).sqrt();
                prop_assert!((dom.dist_to_complement(&a) - dom.dist_to_complement(&b)).abs() <= diff + 1e-12);
            }
        }

        #[test]
        fn boxes_stay_in_the_local_ball(x in -0.17f64..0.17, t in 0.0f64..0.2) {
            let bump = DomainShape::bump(2, 0.1);
            let r0 = bump.r0();
            let chart = bump.chart(&[0.0, 0.0]).unwrap();
            let bx = box_region(&bump, &chart, r0, r0).unwrap();
            let y = chart.point_above(&[x], t);
            if bx.member(&y) {
                prop_assert!(bump.contains(&y));
                prop_assert!((y[0]*y[0] + y[1]*y[1]).sqrt() < bump.r_loc);
            }
        }
    }
}
