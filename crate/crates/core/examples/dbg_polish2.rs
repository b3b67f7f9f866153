use driftlab::bessi::{BessiConfig, CompositeProblem, JunctionVariables};
use driftlab::experiments::{link_threshold, DriftSettings};
use driftlab::manifolds::build_chain;
use driftlab::model::ModelParams;
use std::time::Instant;

fn main() {
    let params = ModelParams::arnold(0.25, 1e-3).unwrap();
    let settings = DriftSettings::default();
    let th = link_threshold(&params, 1.01, &settings).unwrap();
    let c = 0.75 * th / params.mu;
    println!("threshold {th:.3e}, c = {c:.3}");
    let t0 = Instant::now();
    let chain = build_chain(&params, 1.0, 1.01, c, &settings.bessi.shooting, 6).unwrap();
    println!("chain k={} in {:.1?}", chain.k(), t0.elapsed());
    let seed = JunctionVariables::seed_from_chain(&chain).unwrap();
    let cfg = BessiConfig::default();
    let mut problem = CompositeProblem::new(&params, &chain, cfg);
    let t0 = Instant::now();
    let e0 = problem.evaluate(&seed).unwrap();
    let gn0 = e0.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    println!("seed eval in {:.1?}, gnorm {gn0:.3e}", t0.elapsed());
    let t0 = Instant::now();
    let e1 = problem.evaluate(&seed).unwrap();
    let gn1 = e1.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    println!("warm re-eval in {:.1?}, gnorm {gn1:.3e}", t0.elapsed());
    // largest gradient components
    let mut idx: Vec<usize> = (0..e1.grad.len()).collect();
    idx.sort_by(|&i, &j| e1.grad[j].abs().partial_cmp(&e1.grad[i].abs()).unwrap());
    for &i in idx.iter().take(6) {
        println!("  grad[{}] ({} {}) = {:+.3e}", i, i / 2, if i % 2 == 0 { "t" } else { "th" }, e1.grad[i]);
    }
}
