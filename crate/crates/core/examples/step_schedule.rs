//! FULL/SKIP plans for a few step budgets, and linear extrapolation from the
//! two most recent FULL predictions.

use accelaes::stepcache::{extrapolate, plan_schedule, StepCacheConfig, StepCacheState, StepLabel};
use accelaes::Matrix;

fn main() -> accelaes::Result<()> {
    for (total_steps, warmup, delta) in [(30, 5, 2), (28, 5, 2), (30, 5, 3), (50, 8, 2)] {
        let schedule = plan_schedule(&StepCacheConfig {
            delta,
            warmup,
            total_steps,
        })?;
        let line: String = schedule
            .labels()
            .iter()
            .map(|l| if *l == StepLabel::Full { 'F' } else { '.' })
            .collect();
        schedule.check_invariants()?;
        println!(
            "T={total_steps:<3} warmup={warmup} delta={delta}  {line}  skipped {}/{} ({:.1}%)",
            schedule.skip_count(),
            total_steps,
            100.0 * schedule.skip_ratio()
        );
    }

    // A prediction that moves linearly with the step index is recovered exactly.
    let at = |k: usize| Matrix::from_rows(&[[1.0 + 0.25 * k as f64, -2.0 + 0.5 * k as f64]]).unwrap();
    let mut state = StepCacheState::new(2);
    state.record(6, at(6));
    state.record(8, at(8));
    let guess = extrapolate(&state, 9)?;
    println!("\nstep 9: extrapolated {:?}, actual {:?}", guess.row(0), at(9).row(0));
    Ok(())
}
