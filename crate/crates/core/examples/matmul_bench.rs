//! Quick matmul throughput probe.
use avtr::tensor::{matmul, matmul_nt, matmul_tn, Tensor2};
use std::time::Instant;

fn fill(r: usize, c: usize, s: f64) -> Tensor2 {
    let mut t = Tensor2::zeros(r, c);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = (i as f64 * s).sin();
    }
    t
}

fn run(name: &str, flops: f64, f: impl Fn() -> f64) {
    let start = Instant::now();
    let mut reps = 0usize;
    let mut sink = 0.0;
    while start.elapsed().as_secs_f64() < 1.0 {
        sink += f();
        reps += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    println!("{name}: {:.2} GF/s ({reps} reps, sink {sink:.3})", flops * reps as f64 / secs / 1e9);
}

fn main() {
    // resampler K/V projection shape: (T x D_a) @ (D_a x D)
    let a = fill(64, 768, 0.13);
    let b = fill(768, 512, 0.71);
    run("nn (64x768)@(768x512)", 2.0 * 64.0 * 768.0 * 512.0, || matmul(&a, &b).unwrap().data()[0]);

    // FFN shape: (8 x 512) @ (512 x 2048)
    let c = fill(8, 512, 0.19);
    let d = fill(512, 2048, 0.37);
    run("nn (8x512)@(512x2048)", 2.0 * 8.0 * 512.0 * 2048.0, || matmul(&c, &d).unwrap().data()[0]);

    // scores: (8 x 512) @ (64 x 512)^T
    let e = fill(8, 512, 0.23);
    let g = fill(64, 512, 0.29);
    run("nt (8x512)@(64x512)^T", 2.0 * 8.0 * 512.0 * 64.0, || matmul_nt(&e, &g).unwrap().data()[0]);

    // weight grads: (64 x 768)^T @ (64 x 512)
    let h = fill(64, 768, 0.31);
    let i = fill(64, 512, 0.41);
    run("tn (64x768)^T@(64x512)", 2.0 * 64.0 * 768.0 * 512.0, || matmul_tn(&h, &i).unwrap().data()[0]);
}
