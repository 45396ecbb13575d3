//! Two-sample and one-sample t-tests on per-image scores of two methods.
//!
//! cargo run --example ttest

use trustsr::stats::{mean, t_test_one_sample, t_test_two_sample};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let method_a = [0.412, 0.398, 0.455, 0.431, 0.402, 0.447, 0.420, 0.438];
    let method_b = [0.371, 0.389, 0.360, 0.402, 0.377, 0.365, 0.394, 0.381];
    let r = t_test_two_sample(&method_a, &method_b)?;
    println!(
        "means {:.4} vs {:.4}: t = {:.4}, dof = {}, p = {:.3e}",
        mean(&method_a),
        mean(&method_b),
        r.t_statistic,
        r.degrees_of_freedom,
        r.p_value
    );
    let diffs: Vec<f64> = method_a.iter().zip(&method_b).map(|(a, b)| a - b).collect();
    let paired = t_test_one_sample(&diffs, 0.0)?;
    println!(
        "paired differences: t = {:.4}, dof = {}, p = {:.3e}",
        paired.t_statistic, paired.degrees_of_freedom, paired.p_value
    );
    Ok(())
}
