//! Continuum checks of the regularizer: Monte Carlo estimates of the
//! pair energy for closed-form embeddings, the small-radius limit energy by
//! quadrature over unit tangent directions, and the fitted convergence rate
//! between the two.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Manifold, ManifoldPoint, TangentVector};
use crate::imaging::record_rng;
use crate::loss::{delta1, delta2, gamma};
use crate::nn::Matrix;

/// Samples per Monte Carlo shard. Shard `s` draws from stream `s` of the
/// seed, so estimates do not depend on the worker count.
pub const SHARD_SIZE: usize = 1 << 16;

/// Uniform points used for the limit energy of non-homogeneous embeddings.
pub const LIMIT_SAMPLES: usize = 100_000;

/// Closed-form map of a manifold into `R^l` with exact derivatives along
/// geodesics.
pub trait AnalyticEmbedding: Send + Sync {
    fn name(&self) -> String;
    fn domain(&self) -> Manifold;
    fn latent_dim(&self) -> usize;
    fn map(&self, p: &ManifoldPoint) -> Vec<f64>;
    /// `d/dt map(exp_p(t v))` at `t = 0`.
    fn dgrad(&self, p: &ManifoldPoint, v: &TangentVector) -> Vec<f64>;
    /// `d^2/dt^2 map(exp_p(t v))` at `t = 0`.
    fn dhess(&self, p: &ManifoldPoint, v: &TangentVector) -> Vec<f64>;
    /// True when the energy density is the same at every point.
    fn homogeneous(&self) -> bool;
}

/// Identity of the unit square into the plane.
#[derive(Clone, Copy, Debug, Default)]
pub struct FlatSquare;

/// Unit-speed circle (length `2 pi`) mapped to a circle of radius `rho`.
#[derive(Clone, Copy, Debug)]
pub struct CircleMap {
    pub rho: f64,
}

/// Identity of the unit sphere into `R^3`.
#[derive(Clone, Copy, Debug, Default)]
pub struct UnitSphere;

/// Flat cylinder `S^1 x [0, height]` rolled up in `R^3`.
#[derive(Clone, Copy, Debug)]
pub struct Cylinder {
    pub height: f64,
}

impl AnalyticEmbedding for FlatSquare {
    fn name(&self) -> String {
        "flat-square".into()
    }
    fn domain(&self) -> Manifold {
        Manifold::Product(vec![
            Manifold::Interval { lo: 0.0, hi: 1.0 },
            Manifold::Interval { lo: 0.0, hi: 1.0 },
        ])
    }
    fn latent_dim(&self) -> usize {
        2
    }
    fn map(&self, p: &ManifoldPoint) -> Vec<f64> {
        p.coords.clone()
    }
    fn dgrad(&self, _p: &ManifoldPoint, v: &TangentVector) -> Vec<f64> {
        v.components.clone()
    }
    fn dhess(&self, _p: &ManifoldPoint, _v: &TangentVector) -> Vec<f64> {
        vec![0.0; 2]
    }
    fn homogeneous(&self) -> bool {
        true
    }
}

impl AnalyticEmbedding for CircleMap {
    fn name(&self) -> String {
        format!("circle(rho={})", self.rho)
    }
    fn domain(&self) -> Manifold {
        Manifold::Circle {
            circumference: 2.0 * PI,
        }
    }
    fn latent_dim(&self) -> usize {
        2
    }
    fn map(&self, p: &ManifoldPoint) -> Vec<f64> {
        let (s, c) = p.coords[0].sin_cos();
        vec![self.rho * c, self.rho * s]
    }
    fn dgrad(&self, p: &ManifoldPoint, v: &TangentVector) -> Vec<f64> {
        let (s, c) = p.coords[0].sin_cos();
        let a = v.components[0];
        vec![-self.rho * s * a, self.rho * c * a]
    }
    fn dhess(&self, p: &ManifoldPoint, v: &TangentVector) -> Vec<f64> {
        let (s, c) = p.coords[0].sin_cos();
        let a2 = v.components[0] * v.components[0];
        vec![-self.rho * c * a2, -self.rho * s * a2]
    }
    fn homogeneous(&self) -> bool {
        true
    }
}

impl AnalyticEmbedding for UnitSphere {
    fn name(&self) -> String {
        "sphere".into()
    }
    fn domain(&self) -> Manifold {
        Manifold::Sphere2
    }
    fn latent_dim(&self) -> usize {
        3
    }
    fn map(&self, p: &ManifoldPoint) -> Vec<f64> {
        p.coords.clone()
    }
    fn dgrad(&self, _p: &ManifoldPoint, v: &TangentVector) -> Vec<f64> {
        v.components.clone()
    }
    fn dhess(&self, p: &ManifoldPoint, v: &TangentVector) -> Vec<f64> {
        let n2: f64 = v.components.iter().map(|a| a * a).sum();
        p.coords.iter().map(|x| -x * n2).collect()
    }
    fn homogeneous(&self) -> bool {
        true
    }
}

impl AnalyticEmbedding for Cylinder {
    fn name(&self) -> String {
        format!("cylinder(height={})", self.height)
    }
    fn domain(&self) -> Manifold {
        Manifold::Product(vec![
            Manifold::Circle {
                circumference: 2.0 * PI,
            },
            Manifold::Interval {
                lo: 0.0,
                hi: self.height,
            },
        ])
    }
    fn latent_dim(&self) -> usize {
        3
    }
    fn map(&self, p: &ManifoldPoint) -> Vec<f64> {
        let (s, c) = p.coords[0].sin_cos();
        vec![c, s, p.coords[1]]
    }
    fn dgrad(&self, p: &ManifoldPoint, v: &TangentVector) -> Vec<f64> {
        let (s, c) = p.coords[0].sin_cos();
        let (a, b) = (v.components[0], v.components[1]);
        vec![-s * a, c * a, b]
    }
    fn dhess(&self, p: &ManifoldPoint, v: &TangentVector) -> Vec<f64> {
        let (s, c) = p.coords[0].sin_cos();
        let a2 = v.components[0] * v.components[0];
        vec![-c * a2, -s * a2, 0.0]
    }
    fn homogeneous(&self) -> bool {
        true
    }
}

/// An embedding followed by a rigid motion `z -> R z + t` of the latent space.
pub struct Rigid<E> {
    pub inner: E,
    /// Orthogonal `l x l` matrix, row-major.
    pub rotation: Vec<Vec<f64>>,
    pub shift: Vec<f64>,
}

impl<E: AnalyticEmbedding> Rigid<E> {
    fn rotate(&self, z: &[f64]) -> Vec<f64> {
        self.rotation
            .iter()
            .map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl<E: AnalyticEmbedding> AnalyticEmbedding for Rigid<E> {
    fn name(&self) -> String {
        format!("rigid({})", self.inner.name())
    }
    fn domain(&self) -> Manifold {
        self.inner.domain()
    }
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }
    fn map(&self, p: &ManifoldPoint) -> Vec<f64> {
        let mut z = self.rotate(&self.inner.map(p));
        z.iter_mut().zip(&self.shift).for_each(|(a, b)| *a += b);
        z
    }
    fn dgrad(&self, p: &ManifoldPoint, v: &TangentVector) -> Vec<f64> {
        self.rotate(&self.inner.dgrad(p, v))
    }
    fn dhess(&self, p: &ManifoldPoint, v: &TangentVector) -> Vec<f64> {
        self.rotate(&self.inner.dhess(p, v))
    }
    fn homogeneous(&self) -> bool {
        self.inner.homogeneous()
    }
}

/// Largest relative mismatch between the exact directional derivatives and
/// central differences of `map` along `t -> exp_p(t v)`, over every basis
/// direction and its diagonal sums at the given points.
pub fn derivative_self_check(emb: &dyn AnalyticEmbedding, points: &[ManifoldPoint]) -> Result<f64> {
    let m = emb.domain();
    let h = 1e-4;
    let mut worst = 0.0f64;
    for p in points {
        let basis = m.tangent_basis(p)?;
        let mut dirs: Vec<Vec<f64>> = basis.iter().map(|b| b.components.clone()).collect();
        for i in 0..basis.len() {
            for j in i + 1..basis.len() {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                dirs.push(
                    basis[i]
                        .components
                        .iter()
                        .zip(&basis[j].components)
                        .map(|(a, b)| s * (a + b))
                        .collect(),
                );
            }
        }
        for d in dirs {
            let v = TangentVector {
                base: p.clone(),
                components: d.clone(),
            };
            let at = |t: f64| -> Result<Vec<f64>> {
                let tv = TangentVector {
                    base: p.clone(),
                    components: d.iter().map(|a| a * t).collect(),
                };
                Ok(emb.map(&m.exp_map(p, &tv)?))
            };
            let (up, down) = match (at(h), at(-h)) {
                (Ok(u), Ok(w)) => (u, w),
                // Too close to a boundary for a symmetric stencil.
                (Err(Error::Domain(_)), _) | (_, Err(Error::Domain(_))) => continue,
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            let mid = emb.map(p);
            let g = emb.dgrad(p, &v);
            let hs = emb.dhess(p, &v);
            for k in 0..mid.len() {
                let fd1 = (up[k] - down[k]) / (2.0 * h);
                let fd2 = (up[k] - 2.0 * mid[k] + down[k]) / (h * h);
                worst = worst.max((fd1 - g[k]).abs() / g[k].abs().max(1.0));
                worst = worst.max((fd2 - hs[k]).abs() / hs[k].abs().max(1.0));
            }
        }
    }
    Ok(worst)
}

/// Nodes on the unit sphere of `R^m` with weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub dim: usize,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Default rule for tangent dimension `m` in 1..=3.
    pub fn for_dim(m: usize) -> Result<Self> {
        match m {
            1 => Ok(Self {
                dim: 1,
                nodes: vec![vec![1.0], vec![-1.0]],
                weights: vec![0.5, 0.5],
            }),
            2 => Ok(Self::circle(256)),
            3 => Ok(Self::sphere(10, 24)),
            _ => Err(Error::InvalidArgument(format!(
                "no direction quadrature for dimension {m}"
            ))),
        }
    }

    /// `n` equispaced directions in the plane.
    pub fn circle(n: usize) -> Self {
        let nodes = (0..n)
            .map(|k| {
                let (s, c) = (2.0 * PI * k as f64 / n as f64).sin_cos();
                vec![c, s]
            })
            .collect();
        Self {
            dim: 2,
            nodes,
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Gauss-Legendre in the height coordinate times equispaced azimuths.
    /// Exact for polynomials up to degree `min(2 n_height - 1, n_azimuth - 1)`.
    pub fn sphere(n_height: usize, n_azimuth: usize) -> Self {
        let (zs, ws) = gauss_legendre(n_height);
        let mut nodes = Vec::with_capacity(n_height * n_azimuth);
        let mut weights = Vec::with_capacity(n_height * n_azimuth);
        for (z, w) in zs.iter().zip(&ws) {
            let r = (1.0 - z * z).max(0.0).sqrt();
            for k in 0..n_azimuth {
                let (s, c) = (2.0 * PI * k as f64 / n_azimuth as f64).sin_cos();
                nodes.push(vec![r * c, r * s, *z]);
                weights.push(0.5 * w / n_azimuth as f64);
            }
        }
        Self {
            dim: 3,
            nodes,
            weights,
        }
    }

    pub fn average(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| w * f(v))
            .sum()
    }
}

/// Nodes and weights of `n`-point Gauss-Legendre on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

/// `P_n(x)` and its derivative by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Direction average of `gamma(|B v|)` for an `l x m` matrix `B`.
pub fn gamma_matrix(b: &Matrix, rule: &QuadratureRule) -> Result<f64> {
    if b.cols != rule.dim {
        return Err(Error::Shape(format!(
            "matrix has {} columns, rule is for dimension {}",
            b.cols, rule.dim
        )));
    }
    let mut acc = 0.0;
    for (v, w) in rule.nodes.iter().zip(&rule.weights) {
        let bv: Vec<f64> = (0..b.rows)
            .map(|r| b.row(r).iter().zip(v).map(|(a, c)| a * c).sum())
            .collect();
        let n = bv.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n < 1e-12 {
            return Err(Error::SingularGamma { norm: n });
        }
        acc += w * gamma(&bv)?;
    }
    Ok(acc)
}

/// Sample mean and its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

fn pair_term(
    emb: &dyn AnalyticEmbedding,
    m: &Manifold,
    x: &ManifoldPoint,
    y: &ManifoldPoint,
    d: f64,
    lambda: f64,
) -> Result<f64> {
    let av = m.average(x, y, 0.5)?;
    let (px, py, pav) = (emb.map(x), emb.map(y), emb.map(&av));
    let d1 = delta1(&px, &py, d)?;
    let d2 = delta2(&px, &py, &pav, d)?;
    Ok(gamma(&d1)? + lambda * d2.iter().map(|a| a * a).sum::<f64>())
}

/// Monte Carlo estimate of the pair energy at radius `eps`: `x` uniform on
/// the domain, `y` uniform in the geodesic `eps`-ball around `x`.
pub fn mc_energy(
    emb: &dyn AnalyticEmbedding,
    eps: f64,
    lambda: f64,
    samples: usize,
    seed: u64,
    workers: usize,
) -> Result<Estimate> {
    let m = emb.domain();
    if !(eps > 0.0 && eps < m.uniqueness_bound()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {eps} outside (0, {})",
            m.uniqueness_bound()
        )));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let shards = samples.div_ceil(SHARD_SIZE);
    let shard = |s: usize| -> Result<(f64, f64)> {
        let mut rng = record_rng(seed, s as u64);
        let n = SHARD_SIZE.min(samples - s * SHARD_SIZE);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut done = 0;
        while done < n {
            let x = m.sample_uniform(&mut rng);
            let y = m.sample_in_ball(&x, eps, &mut rng)?;
            let d = m.distance(&x, &y)?;
            if d < 1e-6 * eps {
                continue;
            }
            let v = pair_term(emb, &m, &x, &y, d, lambda)?;
            sum += v;
            sum_sq += v * v;
            done += 1;
        }
        Ok((sum, sum_sq))
    };
    let parts: Vec<Result<(f64, f64)>> = if workers <= 1 {
        (0..shards).map(shard).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| (0..shards).into_par_iter().map(shard).collect())
    };
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for p in parts {
        let (a, b) = p?;
        sum += a;
        sum_sq += b;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(Estimate {
        mean,
        std_err: (var / n).sqrt(),
        samples,
    })
}

/// Energy density at `p`: direction average of
/// `gamma(dgrad) + lambda |dhess|^2` over unit tangent vectors.
pub fn energy_density(
    emb: &dyn AnalyticEmbedding,
    p: &ManifoldPoint,
    rule: &QuadratureRule,
    lambda: f64,
) -> Result<f64> {
    let m = emb.domain();
    let basis = m.tangent_basis(p)?;
    if basis.len() != rule.dim {
        return Err(Error::Shape(format!(
            "rule for dimension {} on a {}-dimensional domain",
            rule.dim,
            basis.len()
        )));
    }
    let mut acc = 0.0;
    for (u, w) in rule.nodes.iter().zip(&rule.weights) {
        let mut comps = vec![0.0; basis[0].components.len()];
        for (ui, b) in u.iter().zip(&basis) {
            comps
                .iter_mut()
                .zip(&b.components)
                .for_each(|(c, e)| *c += ui * e);
        }
        let v = TangentVector {
            base: p.clone(),
            components: comps,
        };
        let g = emb.dgrad(p, &v);
        let n = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n < 1e-12 {
            return Err(Error::SingularGamma { norm: n });
        }
        let h = emb.dhess(p, &v);
        acc += w * (gamma(&g)? + lambda * h.iter().map(|a| a * a).sum::<f64>());
    }
    Ok(acc)
}

/// Limit energy as `eps -> 0`, averaged over the domain. Homogeneous
/// embeddings are evaluated at one point, others over `LIMIT_SAMPLES`
/// uniform points of stream `seed`.
pub fn limit_energy(
    emb: &dyn AnalyticEmbedding,
    rule: &QuadratureRule,
    lambda: f64,
    seed: u64,
) -> Result<f64> {
    let m = emb.domain();
    let mut rng = record_rng(seed, u64::MAX);
    if emb.homogeneous() {
        return energy_density(emb, &m.sample_uniform(&mut rng), rule, lambda);
    }
    let mut acc = 0.0;
    for _ in 0..LIMIT_SAMPLES {
        acc += energy_density(emb, &m.sample_uniform(&mut rng), rule, lambda)?;
    }
    Ok(acc / LIMIT_SAMPLES as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateRow {
    pub eps: f64,
    pub mc: Estimate,
    pub limit: f64,
    pub abs_diff: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateOutcome {
    /// Every difference vanished to rounding.
    Exact,
    /// Some difference is within three standard errors of zero.
    Inconclusive,
    /// Least-squares fit of `log |diff|` against `log eps`.
    Slope { slope: f64, intercept: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub embedding: String,
    pub lambda: f64,
    pub rows: Vec<RateRow>,
    pub outcome: RateOutcome,
}

/// Absolute differences below this count as exact agreement.
pub const EXACT_TOL: f64 = 1e-12;

/// Pair energies at each radius against the limit energy. Every radius uses
/// the same seed, so the draws are shared across radii.
pub fn consistency_rate(
    emb: &dyn AnalyticEmbedding,
    eps_list: &[f64],
    samples: usize,
    lambda: f64,
    seed: u64,
    workers: usize,
) -> Result<RateReport> {
    if eps_list.len() < 2 {
        return Err(Error::InvalidArgument("need at least two radii".into()));
    }
    let rule = QuadratureRule::for_dim(emb.domain().dim())?;
    let limit = limit_energy(emb, &rule, lambda, seed)?;
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let mc = mc_energy(emb, eps, lambda, samples, seed, workers)?;
        rows.push(RateRow {
            eps,
            mc,
            limit,
            abs_diff: (mc.mean - limit).abs(),
        });
    }
    let outcome = if rows.iter().all(|r| r.abs_diff < EXACT_TOL) {
        RateOutcome::Exact
    } else if rows.iter().any(|r| r.abs_diff < 3.0 * r.mc.std_err) {
        RateOutcome::Inconclusive
    } else {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps.ln(), r.abs_diff.ln())).collect();
        let (slope, intercept) = fit_line(&pts);
        RateOutcome::Slope { slope, intercept }
    };
    Ok(RateReport {
        embedding: emb.name(),
        lambda,
        rows,
        outcome,
    })
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn fit_line(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

impl RateReport {
    /// CSV rows `embedding,epsilon,mc_value,std_err,limit_value,abs_diff`
    /// followed by a `#` summary line.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "embedding,epsilon,mc_value,std_err,limit_value,abs_diff")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{:.17e},{:.17e},{:.17e},{:.17e}",
                self.embedding, r.eps, r.mc.mean, r.mc.std_err, r.limit, r.abs_diff
            )?;
        }
        match self.outcome {
            RateOutcome::Exact => writeln!(w, "# outcome=exact")?,
            RateOutcome::Inconclusive => writeln!(w, "# outcome=inconclusive")?,
            RateOutcome::Slope { slope, intercept } => writeln!(
                w,
                "# outcome=slope slope={slope:.6} intercept={intercept:.6}"
            )?,
        }
        Ok(())
    }
}
