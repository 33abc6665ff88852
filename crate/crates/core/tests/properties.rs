use gelsim::cloud::{chamfer_points, Point3};
use gelsim::design::contact_variance;
use gelsim::io::{mask_png_bytes, read_mask_png};
use gelsim::membrane::{compute_normals, BendParams, HeightField, Mask};
use gelsim::neural::{Activation, Mlp, PointEncoder};
use ndarray::Array2;
use gelsim::optics::{linear_to_srgb, render, render_basis, srgb_to_linear, Geometry, LightColor, LightRig, LinearImage};
use gelsim::tactile::{normalize_output, solve_poisson_dirichlet};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Point3> {
    [-50.0..50.0f64, -50.0..50.0f64, -10.0..10.0f64]
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(point(), 1..max)
}

fn color() -> impl Strategy<Value = LightColor> {
    (0usize..3).prop_map(|i| LightColor::from_index(i).unwrap())
}

fn coarse_geometry(kappa: f64) -> Geometry {
    let rig = LightRig::reference();
    let f = HeightField::flat(rig.width_mm, rig.height_mm, 23, 9, rig.gel_thickness_mm).unwrap();
    Geometry::new(&f, &BendParams::longitudinal(kappa)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chamfer_is_symmetric_and_translation_invariant(a in cloud(40), b in cloud(40), t in point()) {
        let ab = chamfer_points(&a, &b).unwrap().squared_mm();
        let ba = chamfer_points(&b, &a).unwrap().squared_mm();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        let shift = |c: &[Point3]| -> Vec<Point3> { c.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect() };
        let moved = chamfer_points(&shift(&a), &shift(&b)).unwrap().squared_mm();
        prop_assert!((moved - ab).abs() <= 1e-9 * ab.max(1.0));
        prop_assert_eq!(chamfer_points(&a, &a).unwrap().squared_mm(), 0.0);
    }

    #[test]
    fn renders_superpose(colors in prop::collection::vec(color(), 24), scale in 0.1..5.0f64, kappa in 0.0..0.014f64) {
        let geom = coarse_geometry(kappa);
        let rig = LightRig::reference().with_colors(&colors).unwrap();
        let direct = render(&geom, &rig).unwrap();
        let composed = render_basis(&geom, &rig).unwrap().compose_rig(&rig).unwrap();
        prop_assert!(direct.max_abs_diff(&composed) <= 1e-12);
        let brighter = render(&geom, &rig.scaled(scale)).unwrap();
        prop_assert!(brighter.max_abs_diff(&direct.scaled(scale)) <= 1e-12 * scale.max(1.0) * 1e3);
    }

    #[test]
    fn variance_ignores_shift_and_scales_quadratically(
        px in prop::collection::vec([0.0..2.0f64, 0.0..2.0f64, 0.0..2.0f64], 2..60),
        shift in [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64],
        s in 0.1..10.0f64,
    ) {
        let img = LinearImage { width: px.len(), height: 1, data: px.clone() };
        let region: Vec<usize> = (0..px.len()).collect();
        let v = contact_variance(&img, &region).unwrap();
        let shifted = LinearImage { data: px.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect(), ..img.clone() };
        prop_assert!((contact_variance(&shifted, &region).unwrap() - v).abs() <= 1e-12 * v.max(1.0) * 10.0);
        let scaled = contact_variance(&img.scaled(s), &region).unwrap();
        prop_assert!((scaled - s * s * v).abs() <= 1e-10 * (s * s * v).max(1.0));
    }

    #[test]
    fn encoder_ignores_point_order(c in cloud(64), seed in 0u64..1000, rot in 0usize..64) {
        let enc = PointEncoder::new(&[16, 32], 24, seed).unwrap();
        let mut perm = c.clone();
        perm.reverse();
        let k = rot % perm.len();
        perm.rotate_left(k);
        prop_assert_eq!(&enc.encode(&c).unwrap().global, &enc.encode(&perm).unwrap().global);
        let mut dup = c.clone();
        dup.extend_from_slice(&c[..k.max(1)]);
        prop_assert_eq!(enc.encode(&c).unwrap().global, enc.encode(&dup).unwrap().global);
    }

    #[test]
    fn forward_is_pure(x in prop::collection::vec(-5.0..5.0f64, 12), seed in 0u64..100) {
        let mlp = Mlp::new(&[3, 7, 2], &[Activation::Tanh, Activation::Identity], seed).unwrap();
        let a = Array2::from_shape_vec((4, 3), x).unwrap();
        let first = mlp.forward(&a).unwrap();
        let _ = mlp.forward(&a.mapv(|v| -v)).unwrap();
        prop_assert_eq!(mlp.forward(&a).unwrap(), first);
    }

    #[test]
    fn normals_point_up(z in prop::collection::vec(0.0..2.0f64, 35)) {
        let f = HeightField::from_depths(6.0, 4.0, 7, 5, 3.0, z).unwrap();
        for n in compute_normals(&f).normals() {
            prop_assert!(n[2] > 0.0);
        }
    }

    #[test]
    fn poisson_is_linear(
        r1 in prop::collection::vec(-1.0..1.0f64, 64),
        r2 in prop::collection::vec(-1.0..1.0f64, 64),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let (z1, _) = solve_poisson_dirichlet(&r1, 8, 8, 0.5, 0.25).unwrap();
        let (z2, _) = solve_poisson_dirichlet(&r2, 8, 8, 0.5, 0.25).unwrap();
        let mix: Vec<f64> = r1.iter().zip(&r2).map(|(x, y)| a * x + b * y).collect();
        let (z, _) = solve_poisson_dirichlet(&mix, 8, 8, 0.5, 0.25).unwrap();
        let scale = z1.iter().chain(&z2).fold(1e-3f64, |m, v| m.max(v.abs()));
        for k in 0..64 {
            prop_assert!((z[k] - a * z1[k] - b * z2[k]).abs() <= 1e-8 * scale * (a.abs() + b.abs() + 1.0));
        }
    }

    #[test]
    fn normalised_outputs_are_unit(raw in [-1e3..1e3f64, -1e3..1e3f64, -1e3..1e3f64]) {
        if let Some(n) = normalize_output(raw) {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            prop_assert!((len - 1.0).abs() <= 1e-12);
            prop_assert!(n[2] > 0.0);
        }
    }

    #[test]
    fn srgb_roundtrip(c in 0.0..1.0f64) {
        prop_assert!((linear_to_srgb(srgb_to_linear(c).unwrap()).unwrap() - c).abs() <= 1e-9);
    }

    #[test]
    fn mask_png_roundtrip(w in 1usize..40, h in 1usize..20, bits in prop::collection::vec(any::<bool>(), 800)) {
        let m = Mask { width: w, height: h, data: bits[..w * h].to_vec() };
        prop_assert_eq!(read_mask_png(&mask_png_bytes(&m).unwrap()).unwrap(), m);
    }
}
