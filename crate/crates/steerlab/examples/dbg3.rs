use std::time::Instant;
use steerlab::autodiff::*;
use rand::{Rng, SeedableRng};

fn rt(rng: &mut rand_chacha::ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()).unwrap()
}

fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let layers: Vec<(Tensor, Tensor, Tensor, usize, &str)> = vec![
        (rt(&mut rng, vec![3,66,200]), rt(&mut rng, vec![24,3,5,5]), rt(&mut rng, vec![24]), 2, "conv1"),
        (rt(&mut rng, vec![24,31,98]), rt(&mut rng, vec![36,24,5,5]), rt(&mut rng, vec![36]), 2, "conv2"),
        (rt(&mut rng, vec![36,14,47]), rt(&mut rng, vec![48,36,5,5]), rt(&mut rng, vec![48]), 2, "conv3"),
        (rt(&mut rng, vec![48,5,22]), rt(&mut rng, vec![64,48,3,3]), rt(&mut rng, vec![64]), 1, "conv4"),
        (rt(&mut rng, vec![64,3,20]), rt(&mut rng, vec![64,64,3,3]), rt(&mut rng, vec![64]), 1, "conv5"),
    ];
    let mut sink = 0.0;
    for (x, w, b, s, name) in &layers {
        let n = 50;
        let t0 = Instant::now();
        for _ in 0..n {
            let y = conv2d(x, w, b, *s).unwrap();
            sink += y.data()[0];
        }
        let fwd = t0.elapsed().as_secs_f64() / n as f64;
        // backward via graph
        let t1 = Instant::now();
        for _ in 0..n {
            let mut g = Graph::new();
            let xv = g.leaf(x); let wv = g.leaf(w); let bv = g.leaf(b);
            let y = g.conv2d(&xv, &wv, &bv, *s).unwrap();
            let len = y.value().len();
            let y2 = g.reshape(&y, vec![len]).unwrap();
            let loss = g.mse_loss(&y2, &Tensor::zeros(vec![len])).unwrap();
            let grads = g.backward(&loss).unwrap();
            sink += grads.wrt_or_zero(&wv).data()[0];
        }
        let tot = t1.elapsed().as_secs_f64() / n as f64;
        println!("{name}: fwd {:.2} ms, fwd+bwd(+mse) {:.2} ms", fwd*1e3, tot*1e3);
    }
    println!("{sink}");
}
