use driftlab::bessi::{BessiConfig, CompositeProblem, JunctionVariables};
use driftlab::manifolds::ChainSchedule;
use driftlab::model::ModelParams;

fn main() {
    let params = ModelParams::arnold(0.25, 1e-3).unwrap();
    let schedule = ChainSchedule {
        levels: vec![1.0, 1.0004, 1.0008],
        links: vec![],
        c_used: 0.4,
        mu: 1e-3,
        dwells: vec![15, 15, 15],
    };
    let cfg = BessiConfig::default();
    let mut problem = CompositeProblem::new(&params, &schedule, cfg);
    let vars = JunctionVariables {
        t: vec![0.37, 0.38],
        theta: vec![0.63, 0.64],
        dwells: vec![15, 15],
    };
    let e0 = problem.evaluate(&vars).unwrap();
    println!("value {:.12}, grad {:?}", e0.value, e0.grad);
    for h in [1e-4, 1e-5] {
    println!("-- h = {h:e}");
    for idx in 0..4 {
        let mut vp = vars.clone();
        let mut vm = vars.clone();
        match idx % 2 {
            0 => { vp.t[idx / 2] += h; vm.t[idx / 2] -= h; }
            _ => { vp.theta[idx / 2] += h; vm.theta[idx / 2] -= h; }
        }
        let ep = problem.evaluate(&vp).unwrap();
        let em = problem.evaluate(&vm).unwrap();
        let fd = (ep.value - em.value) / (2.0 * h);
        println!("idx {idx}: analytic {:+.9e} fd {:+.9e} diff {:+.3e}", e0.grad[idx], fd, e0.grad[idx] - fd);
    }
    }
    // noise floor: evaluate twice at the same point
    let e1 = problem.evaluate(&vars).unwrap();
    println!("re-eval value diff {:+.3e}", e1.value - e0.value);
    let gd: Vec<f64> = e1.grad.iter().zip(&e0.grad).map(|(a, b)| a - b).collect();
    println!("re-eval grad diff {:?}", gd);
}
