//! GEMM throughput on the im2col shapes of the default model.
//!
//! `cargo run --release -p capsx-core --example gemm_bench`

use capsx::tensor::gemm::{gemm, MatRef};
use std::time::Instant;

fn main() {
    for &(m, k, n) in &[(256usize, 20736usize, 576usize), (20736, 256, 576), (256, 576, 20736), (256, 81, 6400)] {
        let a: Vec<f64> = (0..m * k).map(|i| (i % 7) as f64 * 0.1).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i % 11) as f64 * 0.1).collect();
        let mut c = vec![0.0; m * n];
        let t = Instant::now();
        gemm(MatRef::new(&a, m, k), MatRef::new(&b, k, n), &mut c, false);
        let s = t.elapsed().as_secs_f64();
        println!("{m}x{k}x{n}: {:.3}s, {:.2} GMAC/s", s, (m * n * k) as f64 / s / 1e9);
    }
}
