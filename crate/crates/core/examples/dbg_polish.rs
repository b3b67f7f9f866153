use driftlab::bessi::{BessiConfig, CompositeProblem, JunctionVariables};
use driftlab::manifolds::{build_chain, ShootingConfig};
use driftlab::model::ModelParams;

fn main() {
    let params = ModelParams::arnold(0.25, 1e-3).unwrap();
    let scfg = ShootingConfig::default();
    let chain = build_chain(&params, 1.0, 1.0012, 0.3, &scfg, 6).unwrap();
    let seed = JunctionVariables::seed_from_chain(&chain).unwrap();
    println!("k = {}, seed t = {:?}", chain.k(), seed.t);
    let cfg = BessiConfig::default();
    let mut problem = CompositeProblem::new(&params, &chain, cfg);

    let mut vars = seed.clone();
    for it in 0..6 {
        let e = problem.evaluate(&vars).unwrap();
        let gn = e.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let gmax = e.grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        println!("iter {it}: value {:.12} gnorm {gn:.3e} gmax {gmax:.3e}", e.value);
        if it == 0 {
            println!("  grad: {:?}", &e.grad[..e.grad.len().min(10)]);
        }
        // block newton with fresh FD blocks each iteration
        let h = 1e-5;
        let k = vars.t.len();
        let mut znew = vars.clone();
        for i in 0..k {
            let mut gat = |dt: f64, dth: f64| {
                let mut v = vars.clone();
                v.t[i] += dt;
                v.theta[i] += dth;
                let ev = problem.evaluate(&v).unwrap();
                [ev.grad[2 * i], ev.grad[2 * i + 1]]
            };
            let gpt = gat(h, 0.0);
            let gmt = gat(-h, 0.0);
            let gph = gat(0.0, h);
            let gmh = gat(0.0, -h);
            let hxx = (gpt[0] - gmt[0]) / (2.0 * h);
            let hyy = (gph[1] - gmh[1]) / (2.0 * h);
            let hxy = 0.5 * ((gph[0] - gmh[0]) / (2.0 * h) + (gpt[1] - gmt[1]) / (2.0 * h));
            let det = hxx * hyy - hxy * hxy;
            if i == 0 && it == 0 {
                println!("  block0: [{hxx:.4e} {hxy:.4e}; {hxy:.4e} {hyy:.4e}] det {det:.3e}");
            }
            let (gt, gth) = (e.grad[2 * i], e.grad[2 * i + 1]);
            znew.t[i] -= (gt * hyy - gth * hxy) / det;
            znew.theta[i] -= (-gt * hxy + gth * hxx) / det;
        }
        vars = znew;
    }
}
