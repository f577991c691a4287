//! Finite-difference check of the analytic gradients of the full objective
//! at a fresh initialization.

use cura::multihead::{self, HeadSpec};
use cura::neighbors::cohort_entropy;
use cura::objective::ObjectiveConfig;
use ndarray::Array2;

fn main() -> cura::Result<()> {
    let x = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 5 + j * 3) % 7) as f64 / 3.0 - 1.0);
    let y = [1, 0, 0, 1, 0];
    let q = [0.2, 0.05, 0.5, 0.7, 0.1];
    let obj = ObjectiveConfig::default();
    let w: Vec<f64> = q.iter().map(|&v| obj.lambda_coh * cohort_entropy(v)).collect();

    for (name, o) in [("full objective", obj.clone()), ("base only", ObjectiveConfig::base_only())] {
        let clf = multihead::init_classifier(
            6,
            4,
            &HeadSpec {
                hidden_units: 8,
                init_seed: 1,
                ..HeadSpec::default()
            },
        )?;
        let r = multihead::gradient_check(&clf, x.view(), &y, &q, &w, &o, 1e-5)?;
        println!(
            "{name}: {} parameters, max relative error {:.2e}, max absolute error {:.2e}",
            r.n_params, r.max_rel_error, r.max_abs_error
        );
    }
    Ok(())
}
