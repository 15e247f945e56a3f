mod common;

use common::{check_case, random_case};

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut worst: f64 = 0.0;
    let (mut checked, mut kinks) = (0, 0);
    for seed in 0..6 {
        let case = random_case(seed);
        for block in check_case(&case) {
            worst = worst.max(block.worst);
            checked += block.checked;
            kinks += block.kinks;
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst:e}");
    assert!(kinks * 20 < checked, "{kinks} kinks vs {checked} checked elements");
}

#[test]
fn frozen_blocks_get_no_gradient_entries() {
    let mut case = random_case(3);
    case.model.freeze_stem(true);
    case.model.freeze_branch(1, true);
    let ids: Vec<_> = check_case(&case).into_iter().map(|b| b.id).collect();
    assert!(!ids.is_empty());
    assert!(ids.iter().all(|id| id.branch() == Some(0)), "{ids:?}");
}
