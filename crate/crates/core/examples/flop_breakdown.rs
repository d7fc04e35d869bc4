//! Analytic FLOPs per component for dense sampling, each acceleration alone,
//! and all of them together.

use accelaes::experiment::{run_experiment, Profile, RunConfig};

fn main() -> accelaes::Result<()> {
    let all = Profile::LuminaLike.defaults();
    let variants = [
        ("dense", RunConfig { mask: false, sparse: false, spatial_cfg: false, delta: 1, ..all.clone() }),
        ("spatial only", RunConfig { delta: 1, ..all.clone() }),
        ("step cache only", RunConfig { mask: false, sparse: false, spatial_cfg: false, ..all.clone() }),
        ("combined", all),
    ];
    println!(
        "{:<16} {:>12} {:>12} {:>10} {:>10} {:>8} {:>12} {:>8}",
        "variant", "attention", "ffn", "other", "extrap", "mask", "total", "speedup"
    );
    for (name, cfg) in variants {
        let r = run_experiment(&cfg)?;
        let f = &r.flops;
        println!(
            "{name:<16} {:>12} {:>12} {:>10} {:>10} {:>8} {:>12} {:>8.3}",
            f.attention, f.ffn, f.other, f.extrapolation, f.mask, f.total(), r.estimated_speedup
        );
    }
    Ok(())
}
