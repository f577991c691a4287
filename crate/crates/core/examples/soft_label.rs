//! Base CE plus the weighted cohort CE equals a rescaled CE against the
//! soft label t = (y + w q) / (1 + w).

use cura::objective::{ce, soft_label_form, verify_soft_label_identity};

fn main() {
    for (y, q, w) in [(1u8, 0.2, 0.01), (0, 0.5, 0.01), (1, 0.5, 1.0), (0, 0.9, 3.0)] {
        let form = soft_label_form(y, q, w);
        let p = 0.3;
        println!(
            "y={y} q={q} w={w}: gamma {:.4}, t {:.4}, CE(p,y)+w CE(p,q) = {:.6}, residual {:.1e}",
            form.gamma,
            form.target,
            ce(p, f64::from(y)) + w * ce(p, q),
            verify_soft_label_identity(p, y, q, w)
        );
    }
}
