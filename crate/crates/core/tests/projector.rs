use proptest::prelude::*;

use selfcal_core::par::Exec;
use selfcal_core::phantom::EllipsePhantom;
use selfcal_core::projector::{
    ellipse_projection_oracle, forward_project_field, forward_project_image, project_image, DetectorGeometry, FnField,
};
use selfcal_core::{ImageGrid, PoseSet, ProjectionPose};

const SPAN: f64 = 2.0 * std::f64::consts::SQRT_2;

fn blob(n: usize) -> ImageGrid {
    ImageGrid::from_fn(n, |p| (-((p[0] - 0.1).powi(2) + (p[1] + 0.2).powi(2)) / 0.08).exp())
}

fn jittered(m: usize, shift: f64) -> PoseSet {
    let angles: Vec<f64> = (0..m).map(|i| (i as f64 + 0.4) * std::f64::consts::PI / m as f64).collect();
    let poses = angles
        .iter()
        .enumerate()
        .map(|(i, &a)| ProjectionPose::new(a + 0.01 * (i as f64).cos(), [shift * (i as f64).sin(), shift * (1.7 * i as f64).cos()]))
        .collect();
    PoseSet::new(poses, angles).unwrap()
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

#[test]
fn disk_row_matches_chord_profile() {
    let n = 256;
    let r = 0.5;
    let image = EllipsePhantom::disk(r, 1.0).rasterize(n, true).unwrap();
    let geom = DetectorGeometry::with_default_sampling(n);
    let row = forward_project_image(&image, &ProjectionPose::identity(), &geom).unwrap();
    let exact: Vec<f64> = geom
        .bin_centers()
        .iter()
        .map(|&s| ellipse_projection_oracle([0.0, 0.0], (r, r), 0.0, 1.0, 0.0, s))
        .collect();
    let norm = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
    let err = rms(&row, &exact) * (row.len() as f64).sqrt() / norm;
    assert!(err <= 0.01, "relative L2 {err}");
}

#[test]
fn disk_rows_do_not_depend_on_angle() {
    let n = 256;
    let image = EllipsePhantom::disk(0.6, 1.0).rasterize(n, true).unwrap();
    let geom = DetectorGeometry::with_default_sampling(n);
    let sino = project_image(&image, &PoseSet::uniform(24), &geom, Exec::Sequential).unwrap();
    let tol = 2.0 * geom.sample_step;
    for i in 1..sino.n_views() {
        for (a, b) in sino.row(i).iter().zip(sino.row(0)) {
            assert!((a - b).abs() <= tol, "view {i}: {a} vs {b}");
        }
    }
}

#[test]
fn projected_mass_is_conserved_across_views() {
    let n = 64;
    let image = EllipsePhantom::shepp_logan().rasterize(n, false).unwrap();
    // shrink so every pose keeps the object inside the square and the detector
    let small = ImageGrid::from_fn(n, |p| image.sample([p[0] / 0.6, p[1] / 0.6]));
    let geom = DetectorGeometry::with_default_sampling(n);
    let sino = project_image(&small, &jittered(40, 0.05), &geom, Exec::Sequential).unwrap();
    let masses: Vec<f64> = (0..sino.n_views())
        .map(|i| geom.bin_spacing() * sino.row(i).iter().sum::<f64>())
        .collect();
    let mean = masses.iter().sum::<f64>() / masses.len() as f64;
    for (i, m) in masses.iter().enumerate() {
        assert!((m - mean).abs() <= 0.01 * mean, "view {i}: {m} vs {mean}");
    }
}

#[test]
fn quadrature_converges_at_least_linearly() {
    for n in [32, 64] {
        let image = blob(n);
        let poses = jittered(24, 0.02);
        let project = |ns: usize| {
            let geom = DetectorGeometry::new(n, ns, SPAN / ns as f64).unwrap();
            project_image(&image, &poses, &geom, Exec::Sequential).unwrap()
        };
        let reference = project(8192);
        let errs: Vec<f64> = [2 * n, 4 * n, 8 * n, 16 * n]
            .iter()
            .map(|&ns| rms(project(ns).values(), reference.values()))
            .collect();
        let mean_ratio = (errs[0] / errs[3]).powf(1.0 / 3.0);
        assert!(mean_ratio >= 2.0 / 1.5, "n={n}: errors {errs:?}");
    }
}

#[test]
fn image_and_interpolant_field_share_geometry() {
    let n = 32;
    let image = EllipsePhantom::shepp_logan().rasterize(n, false).unwrap();
    let poses = jittered(9, 0.1);
    let geom = DetectorGeometry::with_default_sampling(n);
    let a = project_image(&image, &poses, &geom, Exec::Sequential).unwrap();
    let b = forward_project_field(&FnField(|p| image.sample(p)), &poses, &geom).unwrap();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() <= 1e-10);
    }
}

#[test]
fn field_projection_tracks_analytic_sinogram_under_motion() {
    let phantom = EllipsePhantom::shepp_logan();
    let poses = jittered(12, 0.05);
    let geom = DetectorGeometry::with_samples(128, 4096);
    let exact = phantom.analytic_sinogram(&poses, &geom);
    let sampled = forward_project_field(&FnField(|p| phantom.value(p)), &poses, &geom).unwrap();
    let norm = exact.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    let err = rms(sampled.values(), exact.values()) * (exact.values().len() as f64).sqrt() / norm;
    assert!(err <= 0.01, "relative L2 {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn image_projection_is_linear(
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        px in prop::collection::vec(-1.0f64..1.0, 256),
        py in prop::collection::vec(-1.0f64..1.0, 256),
        theta in 0.0f64..6.3,
        tx in -0.2f64..0.2,
        ty in -0.2f64..0.2,
    ) {
        let x = ImageGrid::from_pixels(16, px).unwrap();
        let y = ImageGrid::from_pixels(16, py).unwrap();
        let geom = DetectorGeometry::with_default_sampling(16);
        let pose = ProjectionPose::new(theta, [tx, ty]);
        let lhs = forward_project_image(&x.lin_comb(a, &y, b).unwrap(), &pose, &geom).unwrap();
        let rx = forward_project_image(&x, &pose, &geom).unwrap();
        let ry = forward_project_image(&y, &pose, &geom).unwrap();
        for j in 0..lhs.len() {
            prop_assert!((lhs[j] - (a * rx[j] + b * ry[j])).abs() <= 1e-10);
        }
    }

    #[test]
    fn translated_disk_row_shifts_along_detector(
        theta in 0.0f64..3.1,
        tx in -0.2f64..0.2,
        ty in -0.2f64..0.2,
    ) {
        let phantom = EllipsePhantom::disk(0.4, 1.0);
        let pose = ProjectionPose::new(theta, [tx, ty]);
        let poses = PoseSet::new(vec![pose], vec![0.0]).unwrap();
        let geom = DetectorGeometry::with_default_sampling(64);
        let row = phantom.analytic_sinogram(&poses, &geom);
        let shift = tx * theta.cos() + ty * theta.sin();
        for (j, s) in geom.bin_centers().into_iter().enumerate() {
            let expect = ellipse_projection_oracle([0.0, 0.0], (0.4, 0.4), 0.0, 1.0, 0.0, s + shift);
            prop_assert!((row.row(0)[j] - expect).abs() <= 1e-12);
        }
    }
}
