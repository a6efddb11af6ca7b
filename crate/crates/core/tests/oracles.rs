mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use sparsetile::bscore::{
    apply_mask, block_sparse_conv, block_spmm, dequantize, quantize, BlockCooWeight, BlockShape, BlockSparseMatrix, Pad,
};
use sparsetile::tensor::{Tensor3, Tensor4};

const SHAPES: [(usize, usize); 3] = [(8, 8), (4, 16), (16, 4)];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spmm_matches_masked_matmul(seed in any::<u64>(), s in 0..3usize, m in 1..=64usize, k in 1..=64usize, n in 1..=64usize) {
        let mut r = rng(seed);
        let sa = BlockShape::new(SHAPES[s].0, SHAPES[s].1).unwrap();
        let sb = BlockShape::new(sa.bi, sa.bo).unwrap();
        let (a, b) = (random_matrix(&mut r, m, k), random_matrix(&mut r, k, n));
        let (ma, mb) = (random_mask(&mut r, m, k, sa), random_mask(&mut r, k, n, sb));
        let want = masked_matrix(&a, &ma).matmul(&masked_matrix(&b, &mb));
        let (ba, bb) = (BlockSparseMatrix::from_dense(&a, &ma).unwrap(), BlockSparseMatrix::from_dense(&b, &mb).unwrap());
        prop_assert_eq!(block_spmm(&ba, &bb, false).unwrap().0, want);
    }

    #[test]
    fn conv_matches_dense(seed in any::<u64>(), s in 0..3usize, cin in 1..=24usize, cout in 1..=24usize, k in 1..=5usize, stride in 1..=2usize) {
        let mut r = rng(seed);
        let shape = BlockShape::new(SHAPES[s].0, SHAPES[s].1).unwrap();
        let pad = Pad::uniform(r.gen_range(0..=k / 2));
        let (h, w) = (r.gen_range(k..=12), r.gen_range(k..=12));
        let x = Tensor3::from_fn([h, w, cin], |_| r.gen_range(-128..=127i64));
        let wt = Tensor4::from_fn([cout, k, k, cin], |_| r.gen_range(-128..=127i64));
        let bias: Vec<i64> = (0..cout).map(|_| r.gen_range(-1000..=1000)).collect();
        let mask = random_mask(&mut r, cout, cin, shape);
        let coo = BlockCooWeight::compress(&wt, &mask).unwrap();
        let want = dense_conv(&x, &apply_mask(&wt, &mask).unwrap(), &bias, stride, pad);
        prop_assert_eq!(block_sparse_conv(&x, &coo, &bias, stride, pad).unwrap(), want);
    }

    #[test]
    fn quantizer_error_within_half_step(w in prop::collection::vec(-1e3f64..1e3, 1..256), bits in 2u32..=16) {
        let (codes, p) = quantize(&w, bits).unwrap();
        for (a, b) in w.iter().zip(dequantize(&codes, p)) {
            prop_assert!((a - b).abs() <= p.delta / 2.0 + 1e-12 * a.abs().max(1.0));
        }
    }
}

#[test]
fn unit_maximum_gives_step_of_one_over_128() {
    let (_, p) = quantize(&[0.25, -1.0, 0.5], 8).unwrap();
    assert_eq!(p.delta, 1.0 / 128.0);
}
