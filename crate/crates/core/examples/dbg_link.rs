use driftlab::integrate::flow_fold;
use driftlab::manifolds::{find_link, ShootingConfig};
use driftlab::model::{hamiltonian, ModelParams};

fn main() {
    let params = ModelParams::arnold(0.25, 1e-3).unwrap();
    let ap = 1.0 + 5e-4;
    let cfg = ShootingConfig::default();
    let link = find_link(&params, 1.0, ap, &cfg, None).unwrap();
    println!("link t={} theta={} gnorm={:.2e} match={:.2e}", link.t, link.theta, link.grad_norm, link.matching_defect);
    println!("plus endpoint:  {:?}", link.endpoint_plus);
    println!("minus endpoint: {:?}", link.endpoint_minus);
    let dp = link.endpoint_plus.p - link.endpoint_minus.p;
    let di = link.endpoint_plus.i - link.endpoint_minus.i;
    println!("dp={dp:.3e} di={di:.3e}");
    for (label, x0) in [("plus fwd", link.endpoint_plus), ("minus fwd", link.endpoint_minus)] {
        let mut log = Vec::new();
        let mut tnext = 0.0_f64;
        let _ = flow_fold(&params, &x0, 12.0, 1e-3, (), |(), s| {
            let w = s.q.rem_euclid(1.0);
            let dq = w.min(1.0 - w);
            let d = (dq * dq + s.p * s.p).sqrt();
            if s.t - x0.t >= tnext {
                log.push((s.t - x0.t, d, s.i, hamiltonian(&params, s)));
                tnext += 0.5;
            }
        });
        println!("--- {label}");
        for (t, d, i, h) in log {
            println!("  t={t:5.2} dist={d:9.3e} I={i:.7} H={h:.7}");
        }
    }
}
