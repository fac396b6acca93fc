//! Checks shared by the property tests and the acceptance run. Each returns
//! `Err` with a description of the first violation.
#![allow(dead_code)]

use std::f64::consts::PI;

use lowbend::continuum::{gamma_matrix, QuadratureRule};
use lowbend::geometry::{Manifold, ManifoldPoint, TangentVector};
use lowbend::imaging::{DatasetKind, RendererConfig, Triplet};
use lowbend::loss::{encoder_loss, recon_loss, total_loss, Batch, LossConfig, TrainMode};
use lowbend::nn::{Matrix, Mlp, MlpSpec, Tape};
use lowbend::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Every manifold kind behind a dataset plus the analytic test domains.
pub fn manifold_kinds() -> Vec<(String, Manifold)> {
    let mut out: Vec<(String, Manifold)> = [
        DatasetKind::G,
        DatasetKind::GRotation,
        DatasetKind::S,
        DatasetKind::R,
        DatasetKind::FlatSquare,
    ]
    .into_iter()
    .map(|k| {
        (
            k.name().to_string(),
            RendererConfig::new(k, 8).unwrap().manifold(),
        )
    })
    .collect();
    out.push(("sphere".into(), Manifold::Sphere2));
    out.push(("circle-2pi".into(), Manifold::circle(2.0 * PI).unwrap()));
    out.push((
        "cylinder".into(),
        Manifold::product(vec![
            Manifold::circle(2.0 * PI).unwrap(),
            Manifold::interval(0.0, 1.0).unwrap(),
        ])
        .unwrap(),
    ));
    out
}

/// Same point of the manifold: quaternions up to sign, circle angles up to
/// wrap-around.
fn same_point(m: &Manifold, a: &ManifoldPoint, b: &ManifoldPoint, tol: f64) -> bool {
    m.distance(a, b).unwrap() < tol
}

fn finite_bound(m: &Manifold) -> f64 {
    m.uniqueness_bound().min(2.0)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn metric_axioms(m: &Manifold, n: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    for _ in 0..n {
        let x = m.sample_uniform(&mut rng);
        let y = m.sample_uniform(&mut rng);
        let z = m.sample_uniform(&mut rng);
        let dxy = m.distance(&x, &y).unwrap();
        ensure!(
            dxy == m.distance(&y, &x).unwrap(),
            "asymmetric distance at {x:?}, {y:?}"
        );
        ensure!(dxy >= 0.0, "negative distance");
        ensure!(m.distance(&x, &x).unwrap() < 1e-12, "d(x, x) > 0 at {x:?}");
        let dxz = m.distance(&x, &z).unwrap();
        let dyz = m.distance(&y, &z).unwrap();
        ensure!(
            dxz <= dxy + dyz + 1e-9,
            "triangle inequality: {dxz} > {dxy} + {dyz}"
        );
    }
    Ok(())
}

pub fn geodesic_consistency(m: &Manifold, n: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let eps = 0.95 * finite_bound(m);
    for _ in 0..n {
        let (x, y) = m.sample_pair(eps, &mut rng).unwrap();
        let t: f64 = rng.random();
        let d = m.distance(&x, &y).unwrap();
        let a = m.average(&x, &y, t).unwrap();
        m.validate(&a).map_err(|e| e.to_string())?;
        let da = m.distance(&x, &a).unwrap();
        let db = m.distance(&a, &y).unwrap();
        ensure!(
            (da - t * d).abs() < 1e-8,
            "d(x, av) = {da}, t d = {}",
            t * d
        );
        ensure!(
            (db - (1.0 - t) * d).abs() < 1e-8,
            "d(av, y) = {db}, (1 - t) d = {}",
            (1.0 - t) * d
        );
        let mid = m.average(&x, &y, 0.5).unwrap();
        let rev = m.average(&y, &x, 0.5).unwrap();
        ensure!(
            same_point(m, &mid, &rev, 1e-9),
            "midpoint depends on order: {mid:?} vs {rev:?}"
        );
    }
    Ok(())
}

fn random_tangent(
    m: &Manifold,
    x: &ManifoldPoint,
    len: f64,
    rng: &mut ChaCha8Rng,
) -> TangentVector {
    let basis = m.tangent_basis(x).unwrap();
    let coef: Vec<f64> = basis.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = coef.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-12);
    let mut comps = vec![0.0; m.tangent_len()];
    for (b, c) in basis.iter().zip(&coef) {
        for (o, v) in comps.iter_mut().zip(&b.components) {
            *o += c / n * len * v;
        }
    }
    TangentVector {
        base: x.clone(),
        components: comps,
    }
}

/// Round trips for `|v|_g <= 0.9` times the uniqueness bound. Returns the
/// number of tangents whose geodesic stayed on the manifold.
pub fn exp_log_round_trip(m: &Manifold, n: usize, seed: u64) -> std::result::Result<usize, String> {
    let mut rng = rng(seed);
    let limit = 0.9 * finite_bound(m);
    let mut checked = 0;
    for _ in 0..n {
        let x = m.sample_uniform(&mut rng);
        let len = limit * rng.random::<f64>();
        let v = random_tangent(m, &x, len, &mut rng);
        ensure!(
            (m.norm_g(&v) - len).abs() < 1e-9,
            "tangent basis not orthonormal at {x:?}"
        );
        let y = match m.exp_map(&x, &v) {
            Ok(y) => y,
            // geodesics may run off an interval or the hemisphere rim
            Err(Error::Domain(_)) => continue,
            Err(e) => return Err(e.to_string()),
        };
        checked += 1;
        let d = m.distance(&x, &y).unwrap();
        ensure!((d - len).abs() < 1e-8, "d(x, exp v) = {d}, |v|_g = {len}");
        let back = m.log_map(&x, &y).map_err(|e| e.to_string())?;
        for (a, b) in back.components.iter().zip(&v.components) {
            ensure!(
                (a - b).abs() < 1e-8,
                "log(exp v) = {:?}, v = {:?}",
                back.components,
                v.components
            );
        }
        let again = m.exp_map(&x, &back).map_err(|e| e.to_string())?;
        ensure!(
            same_point(m, &again, &y, 1e-8),
            "exp(log y) = {again:?}, y = {y:?}"
        );
    }
    Ok(checked)
}

pub fn quaternion_sign(n: usize, seed: u64) -> Check {
    let m = Manifold::SO3;
    let mut rng = rng(seed);
    let neg = |p: &ManifoldPoint| ManifoldPoint::new(p.coords.iter().map(|v| -v).collect());
    for _ in 0..n {
        let x = m.sample_uniform(&mut rng);
        let y = m.sample_uniform(&mut rng);
        let d = m.distance(&x, &y).unwrap();
        ensure!(
            d == m.distance(&neg(&x), &y).unwrap(),
            "distance changes with the sign of x"
        );
        ensure!(
            d == m.distance(&x, &neg(&y)).unwrap(),
            "distance changes with the sign of y"
        );
        ensure!(d <= PI / 2.0 + 1e-12, "rotation distance {d} beyond pi/2");
        if d >= 0.95 * PI / 2.0 {
            continue;
        }
        let t: f64 = rng.random();
        let a = m.average(&x, &y, t).unwrap();
        for (p, q) in [
            (neg(&x), y.clone()),
            (x.clone(), neg(&y)),
            (neg(&x), neg(&y)),
        ] {
            let b = m.average(&p, &q, t).unwrap();
            ensure!(
                same_point(&m, &a, &b, 1e-9),
                "average changes with quaternion signs"
            );
        }
    }
    Ok(())
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let len = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if len > 1e-3 {
            q.push(v.into_iter().map(|a| a / len).collect());
        }
    }
    Matrix::from_rows(&q).unwrap()
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::gemm(a, false, b, false).unwrap()
}

/// Rotation of the direction sphere that maps the default rule onto itself:
/// the circle and line rules are invariant under any signed axis swap, the
/// sphere rule only under swapping x with y and flipping signs.
fn rule_symmetry(rng: &mut ChaCha8Rng, m: usize) -> Matrix {
    let mut u = Matrix::zeros(m, m);
    let swap = rng.random::<bool>();
    let perm: Vec<usize> = match (m, swap) {
        (3, true) => vec![1, 0, 2],
        (2, true) => vec![1, 0],
        _ => (0..m).collect(),
    };
    for (i, &p) in perm.iter().enumerate() {
        u.data[i * m + p] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    u
}

/// Plane closed form `(s1^2 + s2^2) / 2 + 1 / (s1 s2) - 2` on random
/// diagonal matrices; returns the largest deviation.
pub fn gamma_closed_form(n: usize, seed: u64) -> std::result::Result<f64, String> {
    let rule = QuadratureRule::for_dim(2).map_err(|e| e.to_string())?;
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let s1: f64 = rng.random_range(0.3..3.0);
        let s2: f64 = rng.random_range(0.3..3.0);
        let b = Matrix::from_vec(2, 2, vec![s1, 0.0, 0.0, s2]).unwrap();
        let exact = 0.5 * (s1 * s1 + s2 * s2) + 1.0 / (s1 * s2) - 2.0;
        let g = gamma_matrix(&b, &rule).map_err(|e| e.to_string())?;
        worst = worst.max((g - exact).abs());
    }
    Ok(worst)
}

/// `Gamma(Q B U) = Gamma(B)` for orthogonal `Q` and `U`; generic `U` for the
/// plane rule, symmetries of the rule otherwise. Returns the largest change.
pub fn gamma_orthogonal_invariance(n: usize, seed: u64) -> std::result::Result<f64, String> {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for m in 1..=3usize {
        let rule = QuadratureRule::for_dim(m).map_err(|e| e.to_string())?;
        let l = m + 1;
        for _ in 0..n {
            let rows: Vec<Vec<f64>> = (0..l)
                .map(|i| {
                    (0..m)
                        .map(|j| if i == j { 1.2 } else { 0.0 } + rng.random_range(-0.3..0.3))
                        .collect()
                })
                .collect();
            let b = Matrix::from_rows(&rows).unwrap();
            let q = random_orthogonal(&mut rng, l);
            let u = if m == 2 {
                random_orthogonal(&mut rng, 2)
            } else {
                rule_symmetry(&mut rng, m)
            };
            let g0 = gamma_matrix(&b, &rule).map_err(|e| e.to_string())?;
            let g1 =
                gamma_matrix(&matmul(&matmul(&q, &b), &u), &rule).map_err(|e| e.to_string())?;
            worst = worst.max((g0 - g1).abs());
        }
    }
    Ok(worst)
}

/// `Gamma(Q diag(s) U) < 1e-9` exactly when both singular values are 1.
pub fn gamma_zero_iff_orthonormal(n: usize, seed: u64) -> Check {
    let rule = QuadratureRule::for_dim(2).map_err(|e| e.to_string())?;
    let mut rng = rng(seed);
    for i in 0..n {
        // every fourth case is exactly orthonormal
        let (s1, s2): (f64, f64) = if i % 4 == 0 {
            (1.0, 1.0)
        } else {
            (rng.random_range(0.2..3.0), rng.random_range(0.2..3.0))
        };
        let q = random_orthogonal(&mut rng, 3);
        let u = random_orthogonal(&mut rng, 2);
        let d = Matrix::from_rows(&[vec![s1, 0.0], vec![0.0, s2], vec![0.0, 0.0]]).unwrap();
        let g = gamma_matrix(&matmul(&matmul(&q, &d), &u), &rule).map_err(|e| e.to_string())?;
        ensure!(g >= 0.0, "negative gamma {g}");
        let unit = (s1 - 1.0).abs() < 1e-6 && (s2 - 1.0).abs() < 1e-6;
        ensure!(
            (g < 1e-9) == unit,
            "singular values ({s1}, {s2}) give gamma {g}"
        );
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Encoder,
    Recon,
    Total,
}

/// Random small problem: images of a dataset, a tiny autoencoder and loss
/// weights, all drawn from `seed`.
pub struct GradProblem {
    pub enc: Mlp,
    pub dec: Mlp,
    pub batch: Batch,
    pub cfg: LossConfig,
}

pub fn grad_problem(seed: u64) -> GradProblem {
    let mut rng = rng(seed);
    let kinds = [
        DatasetKind::G,
        DatasetKind::S,
        DatasetKind::R,
        DatasetKind::GRotation,
    ];
    let kind = kinds[(seed % kinds.len() as u64) as usize];
    let renderer = RendererConfig::new(kind, 8).unwrap();
    let eps = kind.default_epsilon();
    let ts: Vec<Triplet> = (0..5)
        .map(|_| renderer.make_triplet(eps, &mut rng).unwrap())
        .collect();
    let batch = Batch::from_triplets(&ts.iter().collect::<Vec<_>>()).unwrap();
    let lambda = rng.random_range(0.0..5.0);
    let kappa = rng.random_range(0.1..2.0);
    let cfg = LossConfig::new(eps, lambda, kappa, TrainMode::Joint).unwrap();
    let hidden = rng.random_range(4..10);
    let latent = rng.random_range(2..5);
    let enc = Mlp::kaiming(
        MlpSpec::new(vec![renderer.image_len(), hidden, latent]).unwrap(),
        &mut rng,
    );
    let dec = Mlp::kaiming(enc.spec.mirrored(), &mut rng);
    GradProblem {
        enc,
        dec,
        batch,
        cfg,
    }
}

fn loss_value(p: &GradProblem, kind: LossKind) -> f64 {
    let mut tape = Tape::new();
    let be = p.enc.bind(&mut tape, false);
    let bd = p.dec.bind(&mut tape, false);
    let root = match kind {
        LossKind::Encoder => encoder_loss(&mut tape, &be, &p.batch, &p.cfg).unwrap().loss,
        LossKind::Recon => recon_loss(&mut tape, &be, &bd, &p.batch).unwrap(),
        LossKind::Total => {
            total_loss(&mut tape, &be, &bd, &p.batch, &p.cfg)
                .unwrap()
                .total
        }
    };
    tape.scalar_value(root)
}

/// Largest deviation between tape gradients and central differences,
/// relative to the largest gradient entry.
pub fn gradient_error(p: &mut GradProblem, kind: LossKind) -> f64 {
    let mut tape = Tape::new();
    let be = p.enc.bind(&mut tape, true);
    let bd = p.dec.bind(&mut tape, true);
    let root = match kind {
        LossKind::Encoder => encoder_loss(&mut tape, &be, &p.batch, &p.cfg).unwrap().loss,
        LossKind::Recon => recon_loss(&mut tape, &be, &bd, &p.batch).unwrap(),
        LossKind::Total => {
            total_loss(&mut tape, &be, &bd, &p.batch, &p.cfg)
                .unwrap()
                .total
        }
    };
    let g = tape.backward(root).unwrap();
    let analytic: Vec<f64> = be
        .grads(&tape, &g)
        .iter()
        .chain(&bd.grads(&tape, &g))
        .flat_map(|m| m.data.clone())
        .collect();

    let h = 1e-6;
    let sizes: Vec<Vec<usize>> = [&p.enc, &p.dec]
        .iter()
        .map(|m| m.params().iter().map(|w| w.data.len()).collect())
        .collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    for (net, lens) in sizes.iter().enumerate() {
        for (pi, &len) in lens.iter().enumerate() {
            for k in 0..len {
                let orig = *param(p, net, pi, k);
                *param(p, net, pi, k) = orig + h;
                let up = loss_value(p, kind);
                *param(p, net, pi, k) = orig - h;
                let down = loss_value(p, kind);
                *param(p, net, pi, k) = orig;
                numeric.push((up - down) / (2.0 * h));
            }
        }
    }
    let scale = numeric
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    numeric
        .iter()
        .zip(&analytic)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}

fn param(p: &mut GradProblem, net: usize, pi: usize, k: usize) -> &mut f64 {
    let net = if net == 0 { &mut p.enc } else { &mut p.dec };
    &mut net.params_mut().swap_remove(pi).data[k]
}
