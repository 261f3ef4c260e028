use std::time::Instant;
use tse::net::*;

fn main() {
    let spec = NetSpec::default_punn();
    let p = NetParams::init_xavier(spec, 1).unwrap();
    let n = 6576;
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|k| ((k % 97) as f64 / 96.0, (k % 53) as f64 / 52.0))
        .collect();
    let mut ws = Workspace::new(spec);
    let mut grad = vec![0.0; spec.n_params()];
    let seeds: Vec<BundleAdjoint> = (0..BATCH)
        .map(|j| BundleAdjoint { rho_hat: 0.1 * j as f64, d_dt: 1.0, d_dx: -0.5, d2_dx2: 0.01 })
        .collect();

    // warmup + timed full passes (forward_extended + backward_extended over all points)
    for _ in 0..3 {
        for chunk in pts.chunks(BATCH) {
            forward_extended(&p, chunk, &mut ws);
            backward_extended(&p, &mut ws, &seeds[..chunk.len()], &mut grad);
        }
    }
    let t0 = Instant::now();
    let reps = 20;
    for _ in 0..reps {
        for chunk in pts.chunks(BATCH) {
            forward_extended(&p, chunk, &mut ws);
            backward_extended(&p, &mut ws, &seeds[..chunk.len()], &mut grad);
        }
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    println!("extended fwd+bwd over {n} pts: {:.1} ms/eval  ({:.2} us/pt)", dt*1e3, dt*1e6/n as f64);
    println!("grad[0..3] = {:?}", &grad[0..3]);
}
