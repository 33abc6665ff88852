use gelsim::contact::PixelBox;
use gelsim::membrane::{apply_indenter, compute_normals, HeightField, Indenter, NormalMap};
use gelsim::tactile::{poisson_integrate, poisson_integrate_region};

const R: f64 = 5.0;
const D: f64 = 1.0;

fn cap_radius() -> f64 {
    (R * R - (R - D) * (R - D)).sqrt()
}

fn cap_depth(rho2: f64) -> f64 {
    ((R * R - rho2).sqrt() - (R - D)).max(0.0)
}

/// Analytic unit normals `(-z_x, -z_y, 1) / |.|` of the pressed cap on an
/// `n x n` grid spanning `span` times the cap diameter.
fn cap_normals(n: usize, span: f64) -> (NormalMap, Vec<f64>, f64) {
    let half = span * cap_radius();
    let pitch = 2.0 * half / (n - 1) as f64;
    let mut map = NormalMap::flat(n, n);
    let mut truth = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            let x = -half + i as f64 * pitch;
            let y = -half + j as f64 * pitch;
            let rho2 = x * x + y * y;
            let z = cap_depth(rho2);
            truth[j * n + i] = z;
            if z > 0.0 {
                let s = (R * R - rho2).sqrt();
                let (zx, zy) = (-x / s, -y / s);
                let inv = 1.0 / (zx * zx + zy * zy + 1.0).sqrt();
                map.set(i, j, [-zx * inv, -zy * inv, inv], true);
            }
        }
    }
    (map, truth, pitch)
}

fn max_cap_error(span: f64) -> f64 {
    let (map, truth, pitch) = cap_normals(128, span);
    let f = poisson_integrate(&map, pitch).unwrap();
    f.depths().iter().zip(&truth).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}

#[test]
fn sphere_cap_integrates_within_two_percent() {
    for span in [1.0, 1.25] {
        let err = max_cap_error(span);
        assert!(err < 0.02 * D, "span {span}: max error {err} mm");
    }
}

#[test]
fn field_normals_field_roundtrip() {
    let flat = HeightField::flat(40.0, 20.0, 161, 81, 3.0).unwrap();
    let field = apply_indenter(&flat, &Indenter::sphere(5.0), [20.0, 10.0], 1.0).unwrap();
    let normals = compute_normals(&field);
    let rec = poisson_integrate(&normals, field.dx()).unwrap();
    let (mut s, mut n) = (0.0, 0);
    for j in 2..field.ny() - 2 {
        for i in 2..field.nx() - 2 {
            let e = rec.get(i, j) - field.get(i, j);
            s += e * e;
            n += 1;
        }
    }
    let rms = (s / n as f64).sqrt();
    assert!(rms < 0.01 * field.max_depth());
}

#[test]
fn region_integration_is_zero_outside() {
    let (map, _, pitch) = cap_normals(64, 1.2);
    let region = PixelBox { x0: 4, y0: 4, x1: 60, y1: 60 };
    let (z, rep) = poisson_integrate_region(&map, &region, pitch).unwrap();
    assert!(rep.residual < 1e-8);
    for j in 0..64 {
        for i in 0..64 {
            if !region.contains(i, j) {
                assert_eq!(z[j * 64 + i], 0.0);
            }
        }
    }
}
