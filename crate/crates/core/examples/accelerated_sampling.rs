//! One accelerated trajectory next to its dense baseline, with the final
//! latent written as a binary dump.

use accelaes::experiment::{run_with_latent, Profile, RunConfig};
use accelaes::model::LatentTokens;

fn main() -> accelaes::Result<()> {
    let accelerated = Profile::LuminaLike.defaults();
    let dense = RunConfig {
        mask: false,
        sparse: false,
        spatial_cfg: false,
        delta: 1,
        ..accelerated.clone()
    };
    let (fast, z_fast) = run_with_latent(&accelerated)?;
    let (slow, z_slow) = run_with_latent(&dense)?;

    println!("                 dense      accelerated");
    println!("forwards      {:>8}  {:>15}", slow.forwards, fast.forwards);
    println!("FLOPs         {:>8.3e}  {:>15.3e}", slow.actual_flops as f64, fast.actual_flops as f64);
    println!("speedup       {:>8.3}  {:>15.3}", slow.estimated_speedup, fast.estimated_speedup);
    println!("edge density  {:>8.3}  {:>15.3}", slow.edge_density, fast.edge_density);
    println!("wall ms       {:>8.1}  {:>15.1}", slow.wall_time_ms, fast.wall_time_ms);
    let drift = z_fast.values().max_abs_diff(z_slow.values())?;
    println!("max |latent difference| {drift:.4}");
    if let Some(m) = &fast.mask {
        println!("mask: {} focus tokens, built at step {}", m.focus_count, m.export.built_at_step);
    }

    let path = std::env::temp_dir().join("accelaes_latent.bin");
    z_fast.write_dump(&path)?;
    let back = LatentTokens::read_dump(&path)?;
    println!("dump {} ({} bytes) round-trips: {}", path.display(), z_fast.to_bytes().len(), back == z_fast);
    Ok(())
}
