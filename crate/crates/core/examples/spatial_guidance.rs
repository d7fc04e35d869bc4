//! Per-token guidance: focus tokens get the larger scale, the rest the
//! background scale. Equal scales reduce to ordinary guidance.

use accelaes::guidance::{apply_cfg, GuidanceConfig};
use accelaes::mask::AesMask;
use accelaes::Matrix;

fn main() -> accelaes::Result<()> {
    let cond = Matrix::from_rows(&[[1.0, 0.5], [1.0, 0.5], [0.2, -0.4], [0.0, 2.0]])?;
    let uncond = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [0.1, 0.1], [0.5, 1.0]])?;
    let mask = AesMask::from_bits(vec![true, false, true, false], 50.0, 5)?;

    let spatial = GuidanceConfig {
        bg_scale: 3.0,
        aes_scale: 6.0,
        spatial: true,
    };
    let out = apply_cfg(&cond, &uncond, Some(&mask), &spatial)?;
    println!("token  focus  scale  guided");
    for i in 0..cond.rows() {
        let bit = mask.bits()[i];
        println!("{i:>5}  {bit:>5}  {:>5}  {:?}", spatial.scale_for(bit), out.row(i));
    }

    let equal = GuidanceConfig { aes_scale: 3.0, ..spatial };
    let a = apply_cfg(&cond, &uncond, Some(&mask), &equal)?;
    let b = apply_cfg(&cond, &uncond, None, &GuidanceConfig::uniform(3.0))?;
    println!("\nequal scales match uniform guidance exactly: {}", a == b);
    Ok(())
}
