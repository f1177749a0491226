use std::time::Instant;
use steerlab::autodiff::*;
use steerlab::models::*;
use steerlab::imaging::ModelInput;
use rand::{Rng, SeedableRng};

fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let data: Vec<f32> = (0..3*66*200).map(|_| rng.gen_range(0.0..1.0)).collect();
    let input = ModelInput::from_tensor(Tensor::new(vec![3,66,200], data).unwrap()).unwrap();
    for (name, net) in [("pilotnet", build_pilotnet(1, Activation::Elu)), ("miniresnet", build_miniresnet(1, Activation::Elu))] {
        let mut sink = 0.0;
        let n = 60;
        let t = Instant::now();
        for _ in 0..n { sink += forward(&net, &input).unwrap(); }
        let fwd = t.elapsed().as_secs_f64() / n as f64;
        let t = Instant::now();
        for _ in 0..n {
            let mut g = Graph::new();
            let xv = g.leaf(input.tensor());
            let (out, leaves) = forward_tracked(&net, &mut g, &xv).unwrap();
            let loss = g.mse_loss(&out, &Tensor::scalar(3.0)).unwrap();
            let grads = g.backward(&loss).unwrap();
            sink += grads.wrt_or_zero(&leaves[0]).data()[0];
        }
        let fb = t.elapsed().as_secs_f64() / n as f64;
        println!("{name}: fwd {:.2} ms | fwd+bwd {:.2} ms ({:.1}/s) | {sink}", fwd*1e3, fb*1e3, 1.0/fb);
    }
}
