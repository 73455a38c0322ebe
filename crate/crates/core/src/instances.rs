//! Built-in benchmark instances.
//!
//! Three sizes (2×2, 3×3, 5×5) with `γ = 0.9` and uniform initial
//! distribution, plus a 3-state single-action example whose alternative set
//! is visibly non-convex: two kernels flip the test answer while their
//! midpoint is the instance kernel itself.
//!
//! Kernel and policy rows transcribed at four decimals can drift from sum
//! one by ~1e-4, so construction renormalizes every row.

use crate::kl::Allocation;
use crate::mdp::{MdpInstance, TransitionKernel};

/// Known instance names accepted by the registry.
pub const BUILTIN_NAMES: [&str; 4] = [
    "two_state",
    "three_state",
    "five_state",
    "nonconvex_example",
];

/// Looks up a built-in instance (with its default uniform allocation).
pub fn builtin_instance(name: &str) -> Option<(MdpInstance, Allocation)> {
    match name {
        "two_state" => Some(two_state()),
        "three_state" => Some(three_state()),
        "five_state" => Some(five_state()),
        "nonconvex_example" => Some(nonconvex_example()),
        _ => None,
    }
}

/// 2-state, 2-action instance.
pub fn two_state() -> (MdpInstance, Allocation) {
    let reward = vec![
        0.50, -0.175, //
        -0.775, 1.00,
    ];
    let kernel = vec![
        0.700, 0.300, // (0,0)
        0.400, 0.600, // (0,1)
        0.800, 0.200, // (1,0)
        0.100, 0.900, // (1,1)
    ];
    let policy = vec![
        0.150, 0.850, //
        0.507, 0.493,
    ];
    let instance = MdpInstance::new_renormalized(2, 2, kernel, reward, vec![0.5, 0.5], 0.9, policy)
        .expect("two_state instance data is valid");
    (instance, Allocation::uniform(2, 2))
}

/// 3-state, 3-action instance.
pub fn three_state() -> (MdpInstance, Allocation) {
    let reward = vec![
        -0.20, 0.02, -0.01, //
        -0.50, -0.01, 0.50, //
        -0.01, -0.05, 0.20,
    ];
    let kernel = vec![
        0.3460, 0.5027, 0.1513, // (0,0)
        0.2230, 0.7014, 0.0756, // (0,1)
        0.4077, 0.3005, 0.2919, // (0,2)
        0.2711, 0.5011, 0.2277, // (1,0)
        0.1711, 0.6011, 0.2277, // (1,1)
        0.1711, 0.1011, 0.7277, // (1,2)
        0.2433, 0.5999, 0.1568, // (2,0)
        0.1867, 0.2998, 0.5135, // (2,1)
        0.4033, 0.0993, 0.4974, // (2,2)
    ];
    let policy = vec![
        0.6, 0.3, 0.1, //
        0.333, 0.333, 0.333, //
        0.1, 0.2, 0.7,
    ];
    let third = 1.0 / 3.0;
    let instance =
        MdpInstance::new_renormalized(3, 3, kernel, reward, vec![third, third, third], 0.9, policy)
            .expect("three_state instance data is valid");
    (instance, Allocation::uniform(3, 3))
}

/// 5-state, 5-action instance.
pub fn five_state() -> (MdpInstance, Allocation) {
    let reward = vec![
        0.11596, -0.10323, 0.07086, -0.14514, 0.01885, //
        -0.08898, 0.18378, 0.20909, 0.18429, -0.00352, //
        -0.11392, 0.23644, -0.15099, -0.20320, -0.23474, //
        0.10058, 0.08980, 0.00906, 0.19939, 0.02957, //
        0.11086, 0.02878, -0.12984, 0.17238, 0.03751,
    ];
    let kernel = vec![
        0.0191, 0.2797, 0.3241, 0.0813, 0.2958, // (0,0)
        0.2279, 0.2631, 0.0458, 0.2566, 0.2066, // (0,1)
        0.1418, 0.2505, 0.2561, 0.2799, 0.0718, // (0,2)
        0.3117, 0.1916, 0.0851, 0.1691, 0.2424, // (0,3)
        0.1199, 0.6589, 0.2133, 0.0040, 0.0038, // (0,4)
        0.1452, 0.3076, 0.0715, 0.1816, 0.2941, // (1,0)
        0.4654, 0.0252, 0.2148, 0.2654, 0.0292, // (1,1)
        0.2123, 0.0780, 0.2095, 0.2257, 0.2745, // (1,2)
        0.2350, 0.1905, 0.1488, 0.1254, 0.3003, // (1,3)
        0.0091, 0.3348, 0.0134, 0.1328, 0.5099, // (1,4)
        0.2699, 0.3663, 0.2291, 0.0208, 0.1139, // (2,0)
        0.2535, 0.2019, 0.1512, 0.2041, 0.1893, // (2,1)
        0.3340, 0.2574, 0.1303, 0.1418, 0.1365, // (2,2)
        0.1428, 0.1237, 0.1114, 0.0747, 0.5474, // (2,3)
        0.1530, 0.3078, 0.1651, 0.3379, 0.0362, // (2,4)
        0.0043, 0.3403, 0.1235, 0.0826, 0.4493, // (3,0)
        0.0870, 0.3120, 0.0742, 0.2682, 0.2587, // (3,1)
        0.1755, 0.2717, 0.1635, 0.1257, 0.2637, // (3,2)
        0.2272, 0.1819, 0.2460, 0.0933, 0.2516, // (3,3)
        0.2717, 0.1775, 0.0811, 0.1830, 0.2868, // (3,4)
        0.2812, 0.0261, 0.0534, 0.4150, 0.2243, // (4,0)
        0.2381, 0.2541, 0.1767, 0.2693, 0.0617, // (4,1)
        0.4520, 0.1074, 0.0020, 0.1489, 0.2897, // (4,2)
        0.3384, 0.0184, 0.1746, 0.3144, 0.1541, // (4,3)
        0.0686, 0.1741, 0.2139, 0.1872, 0.3563, // (4,4)
    ];
    let policy = vec![
        0.1535, 0.2298, 0.0998, 0.2521, 0.2648, //
        0.2159, 0.2917, 0.1054, 0.0903, 0.2967, //
        0.0452, 0.0699, 0.1839, 0.3681, 0.3329, //
        0.2078, 0.3493, 0.0826, 0.2214, 0.1389, //
        0.2311, 0.1292, 0.2522, 0.2173, 0.1701,
    ];
    let instance = MdpInstance::new_renormalized(5, 5, kernel, reward, vec![0.2; 5], 0.9, policy)
        .expect("five_state instance data is valid");
    (instance, Allocation::uniform(5, 5))
}

/// 3-state single-action example with a non-convex alternative set. The
/// instance kernel is the midpoint of the two alternatives returned by
/// [`nonconvex_alternative`].
pub fn nonconvex_example() -> (MdpInstance, Allocation) {
    let third = 1.0 / 3.0;
    let kernel = vec![
        0.0, 0.75, 0.25, //
        0.5, 0.5, 0.0, //
        0.0, 0.0, 1.0,
    ];
    let instance = MdpInstance::new_renormalized(
        3,
        1,
        kernel,
        vec![-0.88, 0.12, 0.12],
        vec![third, third, third],
        0.9,
        vec![1.0, 1.0, 1.0],
    )
    .expect("nonconvex_example instance data is valid");
    (instance, Allocation::uniform(3, 1))
}

/// The two sign-flipping kernels of the non-convex example (`which` is 1
/// or 2); their average is the instance kernel.
pub fn nonconvex_alternative(which: usize) -> TransitionKernel {
    let rows = match which {
        1 => vec![
            0.0, 1.0, 0.0, //
            0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0,
        ],
        2 => vec![
            0.0, 0.5, 0.5, //
            1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0,
        ],
        _ => panic!("nonconvex_alternative takes 1 or 2"),
    };
    TransitionKernel::new(3, 1, rows).expect("alternative kernel data is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::validate_instance;

    #[test]
    fn registry_resolves_all_names() {
        for name in BUILTIN_NAMES {
            assert!(builtin_instance(name).is_some(), "missing {name}");
        }
        assert!(builtin_instance("unknown").is_none());
    }

    #[test]
    fn builtins_pass_validation() {
        for name in BUILTIN_NAMES {
            let (instance, w) = builtin_instance(name).unwrap();
            let report = validate_instance(&instance, &w);
            assert!(report.assumptions_hold(), "{name}:\n{report}");
        }
    }

    #[test]
    fn transcribed_entries_survive_renormalization() {
        let (two, _) = two_state();
        assert!((two.reward(0, 0) - 0.50).abs() < 1e-12);
        assert!((two.reward(1, 1) - 1.00).abs() < 1e-12);
        assert!((two.kernel().prob(0, 0, 0) - 0.700).abs() < 1e-12);

        let (five, _) = five_state();
        assert!((five.kernel().prob(0, 0, 0) - 0.0191).abs() < 1e-6);
        assert!((five.policy_prob(0, 0) - 0.1535).abs() < 1e-6);

        let (three, _) = three_state();
        // transcribed rows of the 3-state instance drift from one by ~1e-4 before
        // renormalization; after it they are exact
        for s in 0..3 {
            for a in 0..3 {
                let sum: f64 = three.kernel().row(s, a).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nonconvex_midpoint_is_instance_kernel() {
        let (instance, _) = nonconvex_example();
        let q1 = nonconvex_alternative(1);
        let q2 = nonconvex_alternative(2);
        for i in 0..instance.kernel().as_slice().len() {
            let mid = 0.5 * (q1.as_slice()[i] + q2.as_slice()[i]);
            assert!((instance.kernel().as_slice()[i] - mid).abs() < 1e-12);
        }
    }
}
