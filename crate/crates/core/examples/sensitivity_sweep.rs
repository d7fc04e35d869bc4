//! Speedup and edge density as the focus fraction and the mask step vary.
//! Prints CSV tables.

use accelaes::experiment::{sweep, write_sweep_csv, Profile, SweepAxis};

fn main() -> accelaes::Result<()> {
    let base = Profile::LuminaLike.defaults();
    for (axis, values) in [
        (SweepAxis::SkipRatio, vec![0.3, 0.4, 0.5, 0.6, 0.7]),
        (SweepAxis::MaskStep, vec![3.0, 5.0, 7.0, 10.0]),
    ] {
        println!("# {}", axis.name());
        let points = sweep(&base, axis, &values)?;
        write_sweep_csv(&points, std::io::stdout())?;
        println!();
    }
    Ok(())
}
