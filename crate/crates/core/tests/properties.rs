use nalgebra::Vector3;
use proptest::prelude::*;

use dexprior::geometry::{EulerFixedRPY, RigidTransform};
use dexprior::kinematics::{HandChain, JointVector};
use dexprior::ndp::{rollout, DmpConfig, NdpParams};
use dexprior::retarget::{energy, human_from_robot, rescale_to_workspace, HumanHandFrame, KeyVectorSpec, Workspace};

fn arb_transform() -> impl Strategy<Value = RigidTransform> {
    (-3.1..3.1f64, -1.5..1.5f64, -3.1..3.1f64, prop::array::uniform3(-2.0..2.0f64))
        .prop_map(|(r, p, y, t)| RigidTransform::from_parts(EulerFixedRPY::new(r, p, y).to_matrix(), Vector3::from(t)))
}

fn close(a: &RigidTransform, b: &RigidTransform, eps: f64) -> bool {
    (a.to_homogeneous() - b.to_homogeneous()).amax() < eps
}

fn arb_joints() -> impl Strategy<Value = JointVector> {
    let chain = HandChain::default_hand();
    let ranges: Vec<_> = chain.limits().iter().map(|[lo, hi]| *lo..=*hi).collect();
    ranges.prop_map(JointVector)
}

proptest! {
    #[test]
    fn compose_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
        prop_assert!(close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)), 1e-12));
    }

    #[test]
    fn inverse_cancels(a in arb_transform()) {
        prop_assert!(close(&a.compose(&a.inverse()), &RigidTransform::identity(), 1e-12));
    }

    #[test]
    fn rpy_round_trip(a in arb_transform()) {
        let back = EulerFixedRPY::from_matrix(&a.rotation).to_matrix();
        prop_assert!((back - a.rotation).amax() < 1e-9);
    }

    #[test]
    fn rescaled_points_stay_in_box(pts in prop::collection::vec(prop::array::uniform3(-5.0..5.0f64), 1..40)) {
        let ws = Workspace::default();
        let pts: Vec<Vector3<f64>> = pts.into_iter().map(Vector3::from).collect();
        for p in rescale_to_workspace(&pts, &ws) {
            prop_assert!(ws.contains(&p, 1e-9));
        }
    }

    #[test]
    fn retarget_energy_is_nonnegative_and_zero_on_own_hand(q in arb_joints(), r in arb_joints()) {
        let chain = HandChain::default_hand();
        let spec = KeyVectorSpec::uniform(1.2).unwrap();
        let human = HumanHandFrame::new(human_from_robot(&chain, &q, 1.2).unwrap(), 0.0).unwrap();
        prop_assert!(energy(&human, &r, &chain, &spec).unwrap() >= 0.0);
        prop_assert!(energy(&human, &q, &chain, &spec).unwrap() < 1e-20);
    }

    #[test]
    fn rollout_is_translation_equivariant(shift in -2.0..2.0f64, seed in 0u64..1000) {
        let cfg = DmpConfig::with_size(8, 60).unwrap();
        let w: Vec<f64> = (0..8).map(|i| ((seed + i) as f64 * 0.37).sin() * 10.0).collect();
        let base = NdpParams { w: w.clone(), g: vec![0.7] };
        let moved = NdpParams { w, g: vec![0.7 + shift] };
        let a = rollout(&cfg, &base, &[0.1], &[0.0]).unwrap();
        let b = rollout(&cfg, &moved, &[0.1 + shift], &[0.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x + shift - y).abs() < 1e-9);
        }
    }
}
