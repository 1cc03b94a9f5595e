//! Forward and backward passes of the dense and convolution kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use flexchill_core::{Tape, Tensor};

fn filled(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
    Tensor::new(shape.to_vec(), data).unwrap().with_requires_grad(true)
}

fn dense(c: &mut Criterion) {
    let x = filled(&[16, 784]);
    let w = filled(&[512, 784]);
    let b = filled(&[512]);
    c.bench_function("dense 16x784->512 forward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (xv, wv, bv) = (tape.leaf(&x), tape.leaf(&w), tape.leaf(&b));
            black_box(tape.linear(xv, wv, Some(bv)).unwrap());
        })
    });
    c.bench_function("dense 16x784->512 forward+backward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (xv, wv, bv) = (tape.leaf(&x), tape.leaf(&w), tape.leaf(&b));
            let y = tape.linear(xv, wv, Some(bv)).unwrap();
            let s = tape.sum(y).unwrap();
            tape.backward(s).unwrap();
            black_box(tape.grad(wv).map(|g| g[0]));
        })
    });
}

fn conv(c: &mut Criterion) {
    let x = filled(&[16, 3, 32, 32]);
    let w = filled(&[10, 3, 5, 5]);
    let b = filled(&[10]);
    c.bench_function("conv2d 16x3x32x32 k5 forward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (xv, wv, bv) = (tape.leaf(&x), tape.leaf(&w), tape.leaf(&b));
            black_box(tape.conv2d(xv, wv, Some(bv), 1, 0).unwrap());
        })
    });
    c.bench_function("conv2d 16x3x32x32 k5 forward+backward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (xv, wv, bv) = (tape.leaf(&x), tape.leaf(&w), tape.leaf(&b));
            let y = tape.conv2d(xv, wv, Some(bv), 1, 0).unwrap();
            let s = tape.sum(y).unwrap();
            tape.backward(s).unwrap();
            black_box(tape.grad(wv).map(|g| g[0]));
        })
    });
}

criterion_group!(benches, dense, conv);
criterion_main!(benches);
