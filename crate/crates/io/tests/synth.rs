use jga_core::{KdTree, Warning};
use jga_io::{synth_scene, synth_scene_with, SceneKind, SynthOptions};
use jga_render::{rasterize, RenderConfig};

fn opts() -> SynthOptions {
    SynthOptions {
        views: 4,
        image_size: 32,
        ..SynthOptions::default()
    }
}

#[test]
fn same_seed_same_scene() {
    let a = synth_scene_with(SceneKind::CapsulePerson, 5000, 11, &opts()).unwrap();
    let b = synth_scene_with(SceneKind::CapsulePerson, 5000, 11, &opts()).unwrap();
    assert_eq!(a, b);
    let c = synth_scene_with(SceneKind::CapsulePerson, 5000, 12, &opts()).unwrap();
    assert_ne!(a.gaussians, c.gaussians);
}

#[test]
fn renders_come_from_the_gaussians() {
    let s = synth_scene_with(SceneKind::Box, 8000, 3, &opts()).unwrap();
    for v in &s.views {
        let again = rasterize(&s.gaussians, &v.camera, &RenderConfig::default()).unwrap();
        assert_eq!(again.warning, None::<Warning>);
        assert_eq!(again.value.image.clamped(), v.image);
    }
    assert!(s.views.iter().any(|v| v.held_out));
    assert!(!s.views[0].held_out);
}

#[test]
fn depth_back_projects_onto_the_gaussian_surface() {
    let s = synth_scene(SceneKind::Sphere, 20000, 5).unwrap();
    let tree = KdTree::new(&s.gaussians.positions());
    let view = &s.views[0];
    let mut dists = Vec::new();
    for y in 0..view.depth.height {
        for x in 0..view.depth.width {
            let d = view.depth.get(x, y);
            if d > 0.0 {
                let p = view.camera.unproject(x as f64, y as f64, d);
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                dists.push((r - 0.5).abs());
                assert!(tree.nearest(&p).unwrap().1.sqrt() < 0.1);
            }
        }
    }
    assert!(dists.len() > 300);
    dists.sort_by(f64::total_cmp);
    let median = dists[dists.len() / 2];
    // one voxel edge at R=64 is 1/32
    assert!(median < 1.0 / 32.0, "median radial error {median}");
}
