use driftlab::experiments::{drift_run, DriftSettings};
use driftlab::model::ModelParams;
use std::time::Instant;

fn main() {
    let params = ModelParams::arnold(0.25, 1e-3).unwrap();
    let settings = DriftSettings::default();
    let t0 = Instant::now();
    match drift_run(&params, 1.0, 1.01, &settings) {
        Ok(out) => {
            println!(
                "links={} c={:.3} I=[{:.6},{:.6}] T={:.1} defect={:.2e} reint={:.2e} drift_T={:?} elapsed={:.1?}",
                out.schedule.k(),
                out.c_used,
                out.orbit.summary.i_min,
                out.orbit.summary.i_max,
                out.orbit.summary.duration,
                out.orbit.summary.max_junction_defect,
                out.reintegration,
                out.drift_time,
                t0.elapsed()
            );
        }
        Err(e) => println!("FAILED: {e} after {:.1?}", t0.elapsed()),
    }
}
