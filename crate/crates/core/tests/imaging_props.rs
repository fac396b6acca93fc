use lowbend::geometry::ManifoldPoint;
use lowbend::imaging::{
    generate_triplets, quantize, read_dataset, write_dataset, DatasetKind, RendererConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const INSTANCES: usize = 10_000;

const KINDS: [DatasetKind; 5] = [
    DatasetKind::G,
    DatasetKind::GRotation,
    DatasetKind::S,
    DatasetKind::R,
    DatasetKind::FlatSquare,
];

#[test]
fn renders_stay_in_unit_range_and_repeat_bitwise() {
    for kind in KINDS {
        let r = RendererConfig::new(kind, 8).unwrap();
        let m = r.manifold();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..INSTANCES {
            let p = m.sample_uniform(&mut rng);
            let img = r.render(&p).unwrap();
            assert_eq!(img.len(), r.image_len());
            assert!(
                img.pixels.iter().all(|v| (0.0..=1.0).contains(v)),
                "{}",
                kind.name()
            );
            assert_eq!(img, r.render(&p).unwrap());
        }
    }
}

#[test]
fn rotation_images_ignore_quaternion_sign() {
    let r = RendererConfig::new(DatasetKind::R, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..1000 {
        let q = r.manifold().sample_uniform(&mut rng);
        let neg = ManifoldPoint::new(q.coords.iter().map(|v| -v).collect());
        assert_eq!(r.render(&q).unwrap(), r.render(&neg).unwrap());
    }
}

#[test]
fn triplets_respect_shape_and_locality() {
    for kind in KINDS {
        let r = RendererConfig::new(kind, 8).unwrap();
        let eps = kind.default_epsilon();
        let ts = generate_triplets(&r, eps, INSTANCES, 23, 1).unwrap();
        assert_eq!(ts.len(), INSTANCES);
        for t in &ts {
            for img in [&t.img_x, &t.img_y, &t.img_av] {
                assert_eq!(img.len(), r.image_len());
                assert!(img.is_valid());
            }
            assert!(t.dist >= 1e-6 * eps && t.dist.is_finite());
            // (G) constrains only the orientation, so the full distance may
            // exceed the radius
            if kind != DatasetKind::G {
                assert!(t.dist <= eps, "{}: {} > {eps}", kind.name(), t.dist);
            }
        }
    }
}

#[test]
fn generation_does_not_depend_on_workers() {
    let r = RendererConfig::new(DatasetKind::S, 8).unwrap();
    let a = generate_triplets(&r, 0.3, 200, 5, 1).unwrap();
    let b = generate_triplets(&r, 0.3, 200, 5, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn quantized_dataset_round_trips_exactly() {
    let r = RendererConfig::new(DatasetKind::G, 8).unwrap();
    let ts: Vec<_> = generate_triplets(&r, DatasetKind::G.default_epsilon(), 50, 6, 1)
        .unwrap()
        .into_iter()
        .map(|mut t| {
            t.img_x = quantize(&t.img_x);
            t.img_y = quantize(&t.img_y);
            t.img_av = quantize(&t.img_av);
            t
        })
        .collect();
    assert!(ts
        .iter()
        .all(|t| t.img_x.pixels.iter().all(|&v| v == 0.0 || v == 1.0)));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.lbld");
    write_dataset(&path, &ts).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), ts);
}
