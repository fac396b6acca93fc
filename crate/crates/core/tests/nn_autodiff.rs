use lowbend::nn::{Adam, Matrix, Mlp, MlpSpec, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Scalar objective of an MLP used for finite differencing:
/// sum of squares of the outputs times a fixed weight pattern.
fn objective(mlp: &Mlp, x: &Matrix, w: &Matrix) -> f64 {
    let y = mlp.forward_values(x).unwrap();
    y.data.iter().zip(&w.data).map(|(a, b)| a * a * b).sum()
}

#[test]
fn mlp_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut mlp = Mlp::kaiming(MlpSpec::new(vec![5, 7, 6, 3]).unwrap(), &mut rng);
    for p in mlp.params_mut() {
        for v in &mut p.data {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let x = random_matrix(&mut rng, 4, 5);
    let w = random_matrix(&mut rng, 4, 3);

    let mut tape = Tape::new();
    let bound = mlp.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let y = bound.forward(&mut tape, xv).unwrap();
    let y2 = tape.square(y);
    let prod = tape.mul(y2, wv).unwrap();
    let loss = tape.sum(prod);
    assert!((tape.scalar_value(loss) - objective(&mlp, &x, &w)).abs() < 1e-12);
    let grads = bound.grads(&tape, &tape.backward(loss).unwrap());

    let h = 1e-6;
    let n_params = mlp.params().len();
    for pi in 0..n_params {
        let len = mlp.params()[pi].data.len();
        let mut fd = vec![0.0; len];
        for k in 0..len {
            let orig = mlp.params()[pi].data[k];
            mlp.params_mut()[pi].data[k] = orig + h;
            let up = objective(&mlp, &x, &w);
            mlp.params_mut()[pi].data[k] = orig - h;
            let down = objective(&mlp, &x, &w);
            mlp.params_mut()[pi].data[k] = orig;
            fd[k] = (up - down) / (2.0 * h);
        }
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let err = fd
            .iter()
            .zip(&grads[pi].data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(
            err / scale < 1e-5,
            "parameter group {pi}: rel err {}",
            err / scale
        );
    }
}

#[test]
fn elementwise_ops_match_central_differences() {
    // f(a, b) = mean(recip(a*a + 1) * b - 3 b + rowsum(a) broadcast-free)
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a0 = random_matrix(&mut rng, 3, 4);
    let b0 = random_matrix(&mut rng, 3, 4);
    let f = |a: &Matrix, b: &Matrix, tape: &mut Tape, trainable: bool| {
        let av = if trainable {
            tape.param(a.clone())
        } else {
            tape.constant(a.clone())
        };
        let bv = if trainable {
            tape.param(b.clone())
        } else {
            tape.constant(b.clone())
        };
        let sq = tape.square(av);
        let sq1 = tape.add_scalar(sq, 1.0);
        let r = tape.recip(sq1).unwrap();
        let m = tape.mul(r, bv).unwrap();
        let b3 = tape.scale(bv, 3.0);
        let d = tape.sub(m, b3).unwrap();
        let top = tape.slice_rows(d, 0, 2).unwrap();
        let bottom = tape.slice_rows(av, 2, 1).unwrap();
        let cat = tape.concat_rows(&[bottom, top]).unwrap();
        let rs = tape.row_sum(cat);
        let scaled = tape.row_scale(rs, vec![1.0, -2.0, 0.5]).unwrap();
        let mean = tape.mean(scaled).unwrap();
        (av, bv, mean)
    };
    let mut tape = Tape::new();
    let (av, bv, root) = f(&a0, &b0, &mut tape, true);
    let g = tape.backward(root).unwrap();
    let ga = g.get_or_zeros(&tape, av);
    let gb = g.get_or_zeros(&tape, bv);
    let eval = |a: &Matrix, b: &Matrix| {
        let mut t = Tape::new();
        let (_, _, r) = f(a, b, &mut t, false);
        t.scalar_value(r)
    };
    let h = 1e-6;
    for (which, grad) in [(0, &ga), (1, &gb)] {
        for k in 0..12 {
            let (mut a, mut b) = (a0.clone(), b0.clone());
            let target = if which == 0 { &mut a } else { &mut b };
            target.data[k] += h;
            let up = eval(&a, &b);
            let target = if which == 0 { &mut a } else { &mut b };
            target.data[k] -= 2.0 * h;
            let down = eval(&a, &b);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad.data[k]).abs() < 1e-8, "input {which} entry {k}");
        }
    }
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(Matrix::scalar(2.0));
    let p = tape.param(Matrix::scalar(3.0));
    let m = tape.mul(c, p).unwrap();
    let g = tape.backward(m).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.get(p).unwrap().data, vec![2.0]);
}

/// Plain scalar Adam written from the update equations.
fn reference_adam(w0: f64, grad: impl Fn(f64) -> f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut path = Vec::with_capacity(steps);
    for t in 1..=steps {
        let g = grad(w);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        w -= lr * mh / (vh.sqrt() + eps);
        path.push(w);
    }
    path
}

#[test]
fn adam_descends_a_quadratic_bowl() {
    let lr = 1e-3;
    let mut opt = Adam::new(&[1], lr);
    let mut w = vec![1.0];
    let reference = reference_adam(1.0, |w| 2.0 * w, lr, 5000);
    let mut reached = None;
    for (step, r) in reference.iter().enumerate() {
        let g = [2.0 * w[0]];
        opt.update(vec![&mut w], &[&g]).unwrap();
        assert!((w[0] - r).abs() < 1e-12, "step {step}: {} vs {r}", w[0]);
        if reached.is_none() && w[0].abs() < 0.05 {
            reached = Some(step + 1);
        }
    }
    assert!(reached.is_some(), "|w| never fell below 0.05");
}

#[test]
fn gemm_transposes_agree_with_naive_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_matrix(&mut rng, 4, 3);
    let b = random_matrix(&mut rng, 4, 5);
    let c = Matrix::gemm(&a, true, &b, false).unwrap();
    for i in 0..3 {
        for j in 0..5 {
            let naive: f64 = (0..4).map(|k| a.get(k, i) * b.get(k, j)).sum();
            assert!((c.get(i, j) - naive).abs() < 1e-14);
        }
    }
    let d = Matrix::gemm(&b, true, &b, false).unwrap();
    let e = Matrix::gemm(&b, false, &b, true).unwrap();
    assert_eq!(d.shape(), (5, 5));
    assert_eq!(e.shape(), (4, 4));
}
