//! Analytic gradients of both criteria against central finite differences.

use fusion_scales::gradcheck::grad_check;
use fusion_scales::train::Criterion;
use fusion_scales::ScaleMode;

fn main() -> fusion_scales::Result<()> {
    for criterion in [Criterion::Ce, Criterion::MinWer] {
        for mode in [ScaleMode::Agnostic, ScaleMode::Subword] {
            let r = grad_check(criterion, mode, 100, 7)?;
            println!(
                "{criterion:?} {mode:?}: max relative error {:.2e}, mean {:.2e}, {}",
                r.max_relative_error,
                r.mean_relative_error,
                if r.passed { "ok" } else { "FAILED" }
            );
        }
    }
    Ok(())
}
