//! Scores hand-written plans with SR, both mAcc variants and mSIoU.
//!
//! Also shows the ground-truth-boundary protocol and the uniform random
//! baseline on the same truths.

use latent_plan::metrics::{
    apply_gt_boundary, random_planner, reports_to_csv, MaccMode, PlanPair, PlanReport,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pairs = vec![
        PlanPair::new(vec![3, 1, 4], vec![3, 1, 4])?,
        PlanPair::new(vec![3, 4, 1], vec![3, 1, 4])?,
        PlanPair::new(vec![0, 1, 4], vec![3, 1, 4])?,
        PlanPair::new(vec![2, 2, 2], vec![2, 5, 6])?,
    ];
    for p in &pairs {
        println!(
            "{:?} vs {:?}: success {}, positional {:.3}, set {:.3}, IoU {:.3}",
            p.predicted,
            p.truth,
            p.is_success(),
            p.positional_accuracy(),
            p.set_accuracy(),
            p.iou()
        );
    }
    let gt: Vec<PlanPair> = pairs.iter().map(apply_gt_boundary).collect::<Result<_, _>>()?;
    let truths: Vec<Vec<usize>> = pairs.iter().map(|p| p.truth.clone()).collect();
    let reports = [
        PlanReport::from_pairs(&pairs, MaccMode::Positional, "toy", "pdpp", false, "-")?,
        PlanReport::from_pairs(&gt, MaccMode::Positional, "toy", "pdpp", true, "-")?,
        PlanReport::from_pairs(&random_planner(&truths, 7, 0), MaccMode::Positional, "toy/random", "pdpp", false, "-")?,
    ];
    print!("{}", reports_to_csv(&reports));
    Ok(())
}
