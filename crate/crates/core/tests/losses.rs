mod common;

use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use viseme_core::camera::{Intrinsics, Pose};
use viseme_core::fit::observation::RgbImage;
use viseme_core::fit::{
    loss_act, loss_diff, loss_flow, loss_lmk, loss_range, loss_rgb, loss_sup, FlowCorrespondence, FrameParams,
    FrameProblem, GuidanceSets, Landmark, DEFAULT_LOSS_WEIGHTS,
};
use viseme_core::rig::{Mesh, Rig};
use viseme_core::Error;

const CENTER: (f64, f64) = (160.0, 120.0);

/// Two vertices on the optical axis plane, one viseme moving both along x.
fn axis_rig(color: [f64; 3]) -> Rig {
    let neutral = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.1, 0.0, 0.0)];
    let shape = neutral.iter().map(|v| v + Vector3::new(0.05, 0.0, 0.0)).collect();
    let c = Vector3::new(color[0], color[1], color[2]);
    Rig::new(
        Mesh::new(neutral, vec![], Some(vec![c, c])).unwrap(),
        vec![Mesh::new(shape, vec![], None).unwrap()],
        vec!["MBP".into()],
        vec![(0, 0), (1, 1)],
    )
    .unwrap()
}

fn front_pose() -> Pose {
    let mut p = Pose::identity(Intrinsics::default());
    p.translation = Vector3::new(0.0, 0.0, 5.0);
    p
}

fn lm(id: u32, x: f64, y: f64, beta: f64) -> Landmark {
    Landmark {
        id,
        position: Vector2::new(x, y),
        beta,
    }
}

#[test]
fn landmark_examples() {
    let rig = axis_rig([0.5; 3]);
    let pose = front_pose();
    let w = [0.0];
    assert_eq!(loss_lmk(&pose, &w, &rig, &[lm(0, CENTER.0, CENTER.1, 1.0)]).unwrap(), 0.0);
    let l = loss_lmk(&pose, &w, &rig, &[lm(0, CENTER.0 - 3.0, CENTER.1 - 4.0, 1.0)]).unwrap();
    assert!((l - 25.0).abs() < 1e-9);
    // vertex 1 projects 10 px right of the center
    let l = loss_lmk(
        &pose,
        &w,
        &rig,
        &[lm(0, CENTER.0 - 1.0, CENTER.1, 1.0), lm(1, CENTER.0 + 10.0, CENTER.1 - 1.0, 3.0)],
    )
    .unwrap();
    assert!((l - 2.0).abs() < 1e-9);
    assert!(matches!(loss_lmk(&pose, &w, &rig, &[]), Err(Error::Config(_))));

    let mut behind = pose;
    behind.translation.z = -5.0;
    let err = loss_lmk(&behind, &w, &rig, &[lm(0, 0.0, 0.0, 1.0)]).unwrap_err();
    assert!(err.is_numeric());
}

#[test]
fn photometric_examples() {
    let rig = axis_rig([0.2, 0.4, 0.6]);
    let pose = front_pose();
    let same = RgbImage::filled(320, 240, [0.2, 0.4, 0.6]);
    assert!(loss_rgb(&pose, &[0.3], &rig, &same).unwrap() < 1e-12);
    let shifted = RgbImage::filled(320, 240, [0.3, 0.5, 0.7]);
    assert!((loss_rgb(&pose, &[0.3], &rig, &shifted).unwrap() - 0.03).abs() < 1e-6);

    let mut away = pose;
    away.translation.x = 100.0;
    assert!(matches!(loss_rgb(&away, &[0.0], &rig, &same), Err(Error::AllOutside)));
}

#[test]
fn guidance_term_examples() {
    let sets = GuidanceSets {
        suppress: vec![0, 2],
        activate: vec![1],
    };
    let w = [0.5, 1.0, 0.1];
    assert!((loss_sup(&w, &sets) - (0.25 + 0.01) / 2.0).abs() < 1e-15);
    assert_eq!(loss_act(&w, &sets), -1.0);
    assert_eq!(loss_sup(&w, &GuidanceSets::empty()), 0.0);
    assert_eq!(loss_act(&w, &GuidanceSets::empty()), 0.0);
}

#[test]
fn temporal_and_range_examples() {
    let a = vec![0.3; 16];
    assert_eq!(loss_diff(&a, Some(&a)), 0.0);
    let b: Vec<f64> = a.iter().map(|x| x + 0.1).collect();
    assert!((loss_diff(&a, Some(&b)) - 0.01).abs() < 1e-12);
    assert!((loss_diff(&[0.2, 0.5], Some(&[0.0, 0.5])) - 0.02).abs() < 1e-15);
    assert_eq!(loss_diff(&a, None), 0.0);

    assert_eq!(loss_range(&[0.0, 0.5, 1.0]), 0.0);
    let mut w = vec![0.5; 16];
    w[3] = 1.5;
    assert_eq!(loss_range(&w), 0.25);
    w[3] = -0.2;
    w[7] = 1.1;
    assert!((loss_range(&w) - 0.05).abs() < 1e-12);
}

#[test]
fn flow_examples() {
    let rig = axis_rig([0.5; 3]);
    let pose = front_pose();
    let corr = [FlowCorrespondence {
        vertex: 1,
        u: Vector2::new(2.0, 0.0),
    }];
    // the blend moves vertex 1 by 0.05 * 100 px per unit = 5 px per weight
    let l = loss_flow(&pose, &[0.4], &pose, &[0.0], &rig, &corr).unwrap();
    assert!(l < 1e-18);
    let l = loss_flow(&pose, &[0.0], &pose, &[0.0], &rig, &corr).unwrap();
    assert!((l - 4.0).abs() < 1e-9);
    assert_eq!(loss_flow(&pose, &[0.0], &pose, &[0.0], &rig, &[]).unwrap(), 0.0);
}

#[test]
fn landmark_only_total_uses_w1() {
    let rig = axis_rig([0.5; 3]);
    let landmarks = [lm(0, CENTER.0 - 1.0, CENTER.1, 1.0)];
    let sets = GuidanceSets::empty();
    let problem = FrameProblem {
        rig: &rig,
        landmarks: &landmarks,
        image: None,
        flow_targets: &[],
        guidance: &sets,
        neighbor: None,
        weights: DEFAULT_LOSS_WEIGHTS,
    };
    let params = FrameParams {
        weights: vec![0.0],
        pose: front_pose(),
    };
    let c = problem.components(&params).unwrap();
    assert!((c[0] - 1.0).abs() < 1e-12);
    assert_eq!(&c[1..], &[0.0; 6]);
    assert!((problem.total(&params).unwrap() - 0.8).abs() < 1e-12);
}

#[test]
fn perfect_first_frame_is_a_stationary_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inst = common::random_instance(&mut rng);
    let mut params = inst.params.clone();
    params.weights = vec![0.2, 0.4, 0.6, 0.3, 0.5];
    let unit = Pose {
        rotation: params.pose.rotation.normalize(),
        ..params.pose
    };
    let landmarks: Vec<Landmark> = inst
        .landmarks
        .iter()
        .map(|l| Landmark {
            position: viseme_core::project(&inst.rig.blend_vertex(l.id as usize, &params.weights), &unit).unwrap(),
            ..*l
        })
        .collect();
    let sets = GuidanceSets::empty();
    let problem = FrameProblem {
        rig: &inst.rig,
        landmarks: &landmarks,
        image: None,
        flow_targets: &[],
        guidance: &sets,
        neighbor: None,
        weights: DEFAULT_LOSS_WEIGHTS,
    };
    let (l, g) = problem.total_and_grad(&params).unwrap();
    assert!(l < 1e-18);
    assert!(g.to_vec().iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn total_is_the_weighted_sum_of_components() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let inst = common::random_instance(&mut rng);
        let weights: [f64; 7] = std::array::from_fn(|_| rng.random_range(0.0..10.0));
        let problem = inst.problem(weights);
        let c = problem.components(&inst.params).unwrap();
        let mut expected = 0.0;
        for k in 0..7 {
            expected += weights[k] * c[k];
        }
        let total = problem.total(&inst.params).unwrap();
        assert!((total - expected).abs() <= 1e-10 * expected.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn component_signs(seed in any::<u64>(), inside in prop::bool::ANY) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inst = common::random_instance(&mut rng);
        if inside {
            inst.params.weights = (0..5).map(|_| rng.random_range(0.0..=1.0)).collect();
        }
        let c = inst.problem(DEFAULT_LOSS_WEIGHTS).components(&inst.params).unwrap();
        for k in [0, 1, 2, 4, 5, 6] {
            prop_assert!(c[k] >= 0.0);
        }
        if inside {
            prop_assert!((-1.0..=0.0).contains(&c[3]));
            prop_assert_eq!(c[6], 0.0);
        }
    }
}
