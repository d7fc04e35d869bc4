//! Focus-query attention against global keys and values: focus rows match the
//! dense computation while the query-side work shrinks with the focus set.

use accelaes::block::{block_flops, dense_attention, sparse_attention, BlockDims, BlockMode, BlockWeights, TokenPartition};
use accelaes::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> accelaes::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, d) = (64, 64);
    let weights = BlockWeights::random(d, 32, 4, 256, &mut rng)?;
    let hidden = Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
    let dense = dense_attention(&hidden, &weights)?;

    let dims = BlockDims {
        tokens: n,
        text_tokens: 12,
        width: d,
        text_width: 32,
        heads: 4,
        ffn_hidden: 256,
    };
    let full = block_flops(&dims, n, BlockMode::Dense).total();
    println!("focus  max|sparse - dense|  block FLOPs  fraction");
    for focus in [64, 48, 32, 16, 4] {
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        let partition = TokenPartition::new(n, &ids[..focus])?;
        let sparse = sparse_attention(&hidden, &partition, &weights)?;
        let worst = partition
            .focus()
            .iter()
            .enumerate()
            .flat_map(|(r, &i)| sparse.row(r).iter().zip(dense.row(i)).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        let flops = block_flops(&dims, focus, BlockMode::Sparse).total();
        println!("{focus:>5}  {worst:>18.2e}  {flops:>11}  {:>8.3}", flops as f64 / full as f64);
    }
    Ok(())
}
