use gelsim::contact::{estimate_lights_with, select_contact, LightSolver, ProposalConfig};
use gelsim::design::{grid_search, BasisCache, DesignScenario, DesignSetup, SearchMode, DEFAULT_BUDGET};
use gelsim::membrane::{apply_indenter, BendParams, HeightField, Indenter, MembraneSurface};
use gelsim::neural::{AdamConfig, TrainConfig};
use gelsim::optics::{render_field, LightColor, LightRig};
use gelsim::tactile::{
    generate_tactile_dataset, image_dims, reconstruct, train_normal_model, NormalModel, NormalModelConfig,
    ReconstructConfig, TactileDataConfig,
};
use ndarray::Array1;

const R: LightColor = LightColor::R;
const G: LightColor = LightColor::G;
const B: LightColor = LightColor::B;

fn toy_rig(intensity: f64) -> LightRig {
    LightRig::perimeter(6, 30.0, 12.0, 3.0, 2.0, intensity, &[R, G, B, R, G, B]).unwrap()
}

fn toy_scenarios() -> Vec<DesignScenario> {
    let k = std::f64::consts::FRAC_PI_2 / 30.0;
    vec![
        DesignScenario { bend: BendParams::default(), center_mm: [10.0, 6.0] },
        DesignScenario { bend: BendParams::longitudinal(0.5 * k), center_mm: [15.0, 6.0] },
        DesignScenario { bend: BendParams::longitudinal(k), center_mm: [20.0, 5.0] },
    ]
}

fn toy_best(intensity: f64, scenarios: &[DesignScenario]) -> usize {
    let mut setup = DesignSetup::new(toy_rig(intensity));
    setup.nx = 61;
    setup.ny = 25;
    let cache = BasisCache::build(&setup, scenarios).unwrap();
    grid_search(&cache, 1, DEFAULT_BUDGET, SearchMode::Basis).unwrap().best_index
}

#[test]
fn design_argmax_survives_rescaling_and_reordering() {
    let sc = toy_scenarios();
    let best = toy_best(20.0, &sc);
    for s in [0.25, 3.0, 40.0] {
        assert_eq!(toy_best(20.0 * s, &sc), best, "scale {s}");
    }
    let mut rev = sc.clone();
    rev.reverse();
    assert_eq!(toy_best(20.0, &rev), best);
    rev.rotate_left(1);
    assert_eq!(toy_best(20.0, &rev), best);
}

fn pressed_image(rig: &LightRig, bend: &BendParams, center: [f64; 2]) -> gelsim::optics::LinearImage {
    let (nx, ny) = image_dims(rig, 1.0).unwrap();
    let flat = HeightField::flat(rig.width_mm, rig.height_mm, nx, ny, rig.gel_thickness_mm).unwrap();
    let f = apply_indenter(&flat, &Indenter::sphere(5.0), center, 1.0).unwrap();
    render_field(&f, bend, rig).unwrap()
}

#[test]
fn contact_scores_scale_with_image_and_rig() {
    let rig = LightRig::reference();
    let bend = BendParams::longitudinal(0.008);
    let surface = MembraneSurface::new(rig.width_mm, rig.height_mm, &bend).unwrap();
    let img = pressed_image(&rig, &bend, [40.0, 22.0]);
    let cfg = ProposalConfig::default();
    let base = select_contact(&img, &rig, &surface, &cfg).unwrap();
    for s in [0.5, 2.0, 7.0] {
        let scaled = select_contact(&img.scaled(s), &rig.scaled(s), &surface, &cfg).unwrap();
        assert_eq!(scaled.best, base.best, "scale {s}");
        for (a, b) in base.proposals.iter().zip(&scaled.proposals) {
            assert!((b.delta_c - s * a.delta_c).abs() <= 1e-8 * (s * a.delta_c).max(1e-12), "{} {}", a.delta_c, b.delta_c);
        }
    }
}

#[test]
fn rings_never_touch_their_boxes() {
    let rig = LightRig::reference();
    let img = pressed_image(&rig, &BendParams::straight(), [70.0, 15.0]);
    let surface = MembraneSurface::flat(rig.width_mm, rig.height_mm);
    let sel = select_contact(&img, &rig, &surface, &ProposalConfig::default()).unwrap();
    for p in &sel.proposals {
        assert!(!p.ring.is_empty());
        assert!(p.ring.iter().all(|&k| !p.bbox.contains(k % img.width, k / img.width)));
    }
}

#[test]
fn flat_ring_fit_is_a_right_inverse() {
    let rig = LightRig::reference();
    let (nx, ny) = image_dims(&rig, 1.0).unwrap();
    let flat = HeightField::flat(rig.width_mm, rig.height_mm, nx, ny, rig.gel_thickness_mm).unwrap();
    let img = render_field(&flat, &BendParams::straight(), &rig).unwrap();
    let surface = MembraneSurface::flat(rig.width_mm, rig.height_mm);
    let cfg = ProposalConfig::default();
    let sel = select_contact(&img, &rig, &surface, &cfg).unwrap();
    let ring = &sel.proposals[7].ring;
    let est = estimate_lights_with(&img, ring, &rig, &surface, 1e-14, LightSolver::NonNegative).unwrap();
    assert!(est.residual < 1e-9, "residual {}", est.residual);
}

fn tiny_tactile(seed: u64) -> (LightRig, NormalModel) {
    let rig = LightRig::reference();
    let cfg = TactileDataConfig {
        n_samples: 60,
        pixel_mm: 0.5,
        seed,
        ..TactileDataConfig::default()
    };
    let zero = |_: &BendParams| Ok(Array1::zeros(8));
    let data = generate_tactile_dataset(&rig, &cfg, &zero).unwrap();
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 256,
        seed,
        optimizer: AdamConfig::default(),
    };
    let mc = NormalModelConfig { hidden: 64, cond_dim: 8 };
    (rig, train_normal_model(&data, &mc, &tc).unwrap().0)
}

fn reconstructed_depths(rig: &LightRig, model: &NormalModel, depth: f64) -> HeightField {
    let (nx, ny) = image_dims(rig, 0.5).unwrap();
    let flat = HeightField::flat(rig.width_mm, rig.height_mm, nx, ny, rig.gel_thickness_mm).unwrap();
    let truth = apply_indenter(&flat, &Indenter::sphere(5.0), [55.0, 20.0], depth).unwrap();
    let img = render_field(&truth, &BendParams::straight(), rig).unwrap();
    let surface = MembraneSurface::flat(rig.width_mm, rig.height_mm);
    reconstruct(&img, rig, &surface, model, &Array1::zeros(8), &ReconstructConfig::default())
        .unwrap()
        .field
}

#[test]
fn deeper_presses_reconstruct_deeper() {
    for seed in 0..5 {
        let (rig, model) = tiny_tactile(seed);
        let d: Vec<f64> = [0.5, 1.0, 1.5]
            .iter()
            .map(|&z| reconstructed_depths(&rig, &model, z).max_depth())
            .collect();
        assert!(d[0] < d[1] && d[1] < d[2], "seed {seed}: {d:?}");
    }
}

#[test]
fn seeded_pipeline_is_reproducible() {
    let (rig, a) = tiny_tactile(3);
    let (_, b) = tiny_tactile(3);
    assert_eq!(a, b);
    assert_eq!(reconstructed_depths(&rig, &a, 1.0), reconstructed_depths(&rig, &b, 1.0));
}
