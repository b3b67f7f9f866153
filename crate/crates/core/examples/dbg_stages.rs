use driftlab::bessi::{action_a, minimize_composite, BessiConfig, JunctionVariables};
use driftlab::manifolds::{build_chain, find_link, ShootingConfig};
use driftlab::model::ModelParams;
use std::time::Instant;

fn main() {
    let params = ModelParams::arnold(0.25, 1e-3).unwrap();
    let scfg = ShootingConfig::default();

    let t0 = Instant::now();
    let link = find_link(&params, 1.0, 1.0004, &scfg, None).unwrap();
    println!("find_link cold: {:.2?} (t={:.4}, th={:.4})", t0.elapsed(), link.t, link.theta);

    let t0 = Instant::now();
    let _l2 = find_link(&params, 1.0004, 1.0008, &scfg, Some((link.t, link.theta))).unwrap();
    println!("find_link warm: {:.2?}", t0.elapsed());

    let t0 = Instant::now();
    let (v, curve) = action_a(&params, 1.0, (0.3, 0.2, 0.5), (15.4, 0.25, 0.5), &BessiConfig::default()).unwrap();
    println!("action_a tau=15: {:.2?} value={v:.6} pieces={} res={:.1e}", t0.elapsed(), curve.pieces(), curve.el_residual);

    let t0 = Instant::now();
    let chain = build_chain(&params, 1.0, 1.0012, 0.3, &scfg, 6).unwrap();
    println!("build_chain 4 links: {:.2?} k={}", t0.elapsed(), chain.k());

    let t0 = Instant::now();
    let seed = JunctionVariables::seed_from_chain(&chain).unwrap();
    let (_vars, value) = minimize_composite(&params, &chain, &seed, &BessiConfig::default()).unwrap();
    println!("minimize_composite k={}: {:.2?} value={value:.6}", chain.k(), t0.elapsed());
}
