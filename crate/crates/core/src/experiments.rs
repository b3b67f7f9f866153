//! Top-level reproducible studies: drift runs across an action interval,
//! drift-time scaling in the coupling, and the gap-width report.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bessi::{
    extract_orbit, minimize_composite, BessiConfig, DiffusionOrbit, JunctionVariables,
};
use crate::error::{Error, Result};
use crate::manifolds::{build_chain, dwell_heuristic, find_link, ChainSchedule};
use crate::melnikov::CriticalKind;
use crate::model::ModelParams;

/// Pipeline error annotated with the failing stage.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.error)
    }
}

impl std::error::Error for PipelineError {}

fn at_stage<T>(stage: &'static str, r: Result<T>) -> std::result::Result<T, PipelineError> {
    r.map_err(|error| PipelineError { stage, error })
}

/// Settings of a drift run.
#[derive(Debug, Clone)]
pub struct DriftSettings {
    /// Chain spacing factor; `None` locates the link threshold by bisection
    /// and applies `safety`.
    pub c: Option<f64>,
    /// Fraction of the bisected threshold used for the chain spacing.
    pub safety: f64,
    /// Re-integration window and tolerance of the final self-consistency
    /// check.
    pub reintegration_window: f64,
    pub reintegration_tol: f64,
    pub bessi: BessiConfig,
}

impl Default for DriftSettings {
    fn default() -> Self {
        DriftSettings {
            c: None,
            safety: 0.75,
            reintegration_window: 0.5,
            reintegration_tol: 1e-5,
            bessi: BessiConfig::default(),
        }
    }
}

/// Largest link gap at level `a` for which a verified isolated-minimum link
/// exists, located by bisection on find_link success.
pub fn link_threshold(params: &ModelParams, a: f64, settings: &DriftSettings) -> Result<f64> {
    let ok = |gap: f64| -> bool {
        match find_link(params, a, a + gap, &settings.bessi.shooting, None) {
            Ok(l) => l.kind == CriticalKind::Minimum && l.isolated,
            Err(_) => false,
        }
    };
    let mut lo = 0.0;
    let mut hi = 2.0 * params.mu;
    let mut grew = 0;
    while ok(hi) && grew < 12 {
        lo = hi;
        hi *= 2.0;
        grew += 1;
    }
    if lo == 0.0 && !ok(hi) {
        // shrink until something works
        for _ in 0..20 {
            hi *= 0.5;
            if ok(hi) {
                lo = hi;
                hi *= 2.0;
                break;
            }
        }
        if lo == 0.0 {
            return Err(Error::NoCriticalPoint { a, a_prime: a });
        }
    }
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Outcome of a drift run.
#[derive(Debug)]
pub struct DriftOutcome {
    pub orbit: DiffusionOrbit,
    pub schedule: ChainSchedule,
    pub c_used: f64,
    /// Windowed re-integration deviation of the extracted orbit.
    pub reintegration: f64,
    /// Margin used for the crossing-based drift time.
    pub margin: f64,
    /// Duration between the first time `I <= a_minus + margin` and the
    /// first later time `I >= a_plus - margin`.
    pub drift_time: Option<f64>,
}

/// Full pipeline: chain, seeds, junction minimization, orbit extraction,
/// and the self-consistency check.
pub fn drift_run(
    params: &ModelParams,
    a_minus: f64,
    a_plus: f64,
    settings: &DriftSettings,
) -> std::result::Result<DriftOutcome, PipelineError> {
    let c = match settings.c {
        Some(c) => c,
        None => {
            let threshold =
                at_stage("link_threshold", link_threshold(params, a_plus, settings))?;
            settings.safety * threshold / params.mu
        }
    };
    let schedule = at_stage(
        "build_chain",
        build_chain(
            params,
            a_minus,
            a_plus,
            c,
            &settings.bessi.shooting,
            settings.bessi.tau_min,
        ),
    )?;

    let seed = if schedule.links.is_empty() {
        // degenerate single-level schedule: one homoclinic junction
        let link = at_stage(
            "seed",
            find_link(params, a_minus, a_minus, &settings.bessi.shooting, None),
        )?;
        let rep = |x: f64| if x > 0.5 { x - 1.0 } else { x };
        JunctionVariables {
            t: vec![rep(link.t)],
            theta: vec![rep(link.theta)],
            dwells: vec![dwell_heuristic(params, settings.bessi.tau_min)],
        }
    } else {
        at_stage("seed", JunctionVariables::seed_from_chain(&schedule))?
    };

    let (vars, _value) = at_stage(
        "minimize_composite",
        minimize_composite(params, &schedule, &seed, &settings.bessi),
    )?;
    let orbit = at_stage(
        "extract_orbit",
        extract_orbit(params, &schedule, &vars, &settings.bessi),
    )?;

    let reintegration = at_stage(
        "reintegration",
        orbit.reintegration_deviation(
            settings.reintegration_window,
            settings.bessi.shooting.step,
        ),
    )?;
    if reintegration > settings.reintegration_tol {
        return Err(PipelineError {
            stage: "reintegration",
            error: Error::MinimizationFailure {
                reason: format!(
                    "re-integration deviation {reintegration:.3e} above {:.1e}",
                    settings.reintegration_tol
                ),
                grad_norm: reintegration,
            },
        });
    }

    let margin = 2.0 * schedule.max_spacing();
    let drift_time = if a_plus > a_minus {
        orbit.drift_window(a_minus + margin, a_plus - margin).map(|(s, e)| e - s)
    } else {
        None
    };

    Ok(DriftOutcome { orbit, schedule, c_used: c, reintegration, margin, drift_time })
}

/// Which scaling law a fit prefers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingLaw {
    /// `T = C |ln mu| / mu`
    LogOverMu,
    /// `T = C / mu^2`
    InverseMuSquared,
}

/// Least-squares fits of the measured drift times against the two candidate
/// laws, in log space.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit {
    /// (mu, T) samples sorted by mu.
    pub samples: Vec<(f64, f64)>,
    /// mu values whose runs failed, with the failing stage.
    pub failures: Vec<(f64, String)>,
    pub c1: f64,
    pub c2: f64,
    pub residual_log_1: f64,
    pub residual_log_2: f64,
    pub preferred: ScalingLaw,
}

/// Fit both laws to given samples. Each law has one free constant, so the
/// fit is a mean in log space and the residuals are comparable.
pub fn fit_scaling(samples: &[(f64, f64)]) -> (f64, f64, f64, f64, ScalingLaw) {
    let n = samples.len() as f64;
    let ln_c1: f64 = samples
        .iter()
        .map(|&(mu, t)| t.ln() - ((1.0 / mu).ln().abs().ln() - mu.ln()))
        .sum::<f64>()
        / n;
    let ln_c2: f64 = samples.iter().map(|&(mu, t)| t.ln() + 2.0 * mu.ln()).sum::<f64>() / n;
    let r1: f64 = samples
        .iter()
        .map(|&(mu, t)| {
            let model = ln_c1 + (1.0 / mu).ln().abs().ln() - mu.ln();
            (t.ln() - model).powi(2)
        })
        .sum();
    let r2: f64 = samples
        .iter()
        .map(|&(mu, t)| {
            let model = ln_c2 - 2.0 * mu.ln();
            (t.ln() - model).powi(2)
        })
        .sum();
    let preferred =
        if r1 <= r2 { ScalingLaw::LogOverMu } else { ScalingLaw::InverseMuSquared };
    (ln_c1.exp(), ln_c2.exp(), r1, r2, preferred)
}

/// Run the drift pipeline over a grid of couplings and fit the drift time.
///
/// `template` fixes epsilon and the perturbation; `mu` is swept over the
/// grid. Partial results are returned when some runs fail; the fit needs
/// at least three successes.
pub fn time_scaling(
    template: &ModelParams,
    mu_grid: &[f64],
    a_minus: f64,
    a_plus: f64,
    settings: &DriftSettings,
) -> Result<ScalingFit> {
    if mu_grid.len() < 4 {
        return Err(Error::Config("time_scaling needs at least 4 mu values".into()));
    }
    let (min, max) = mu_grid
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &m| (lo.min(m), hi.max(m)));
    if max / min < 8.0 - 1e-9 {
        return Err(Error::Config("mu grid must span at least a factor 8".into()));
    }
    let mut mus: Vec<f64> = mu_grid.to_vec();
    mus.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for &mu in &mus {
        let params = ModelParams::new(template.epsilon, mu, template.perturbation.clone())?;
        match drift_run(&params, a_minus, a_plus, settings) {
            Ok(out) => {
                let t = out.drift_time.unwrap_or(out.orbit.summary.duration);
                samples.push((mu, t));
            }
            Err(e) => failures.push((mu, e.to_string())),
        }
    }
    if samples.len() < 3 {
        return Err(Error::MinimizationFailure {
            reason: format!(
                "only {} of {} scaling runs succeeded (need 3)",
                samples.len(),
                mus.len()
            ),
            grad_norm: f64::NAN,
        });
    }
    let (c1, c2, r1, r2, preferred) = fit_scaling(&samples);
    Ok(ScalingFit {
        samples,
        failures,
        c1,
        c2,
        residual_log_1: r1,
        residual_log_2: r2,
        preferred,
    })
}

/// One row of the gap report.
#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    pub mu: f64,
    /// Width of the surviving-torus gaps, `sqrt(mu)` in model units.
    pub gap_width: f64,
    /// Heteroclinic step of the chain, `c * mu`.
    pub chain_step: f64,
    pub ratio: f64,
}

/// Gap-width versus chain-step arithmetic over a grid of couplings; the
/// ratio diverging as `mu -> 0` is the obstruction the chain method meets.
pub fn gap_report(mu_grid: &[f64], c: f64) -> Vec<GapRow> {
    let mut mus: Vec<f64> = mu_grid.to_vec();
    mus.sort_by(|a, b| b.partial_cmp(a).unwrap());
    mus.iter()
        .map(|&mu| {
            let gap = mu.sqrt();
            let step = c * mu;
            GapRow { mu, gap_width: gap, chain_step: step, ratio: gap / step }
        })
        .collect()
}

/// A run directory named by timestamp and config hash, holding the resolved
/// config, a manifest and any data files.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
    pub config_hash: String,
}

impl RunDir {
    /// Create `<root>/<command>-<timestamp>-<hash8>/` and store the
    /// resolved config.
    pub fn create(root: &Path, command: &str, config: &serde_json::Value) -> Result<Self> {
        let canonical = serde_json::to_string(config)?;
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let hash = hex_prefix(&hasher.finalize(), 8);
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        let path = root.join(format!("{command}-{stamp}-{hash}"));
        fs::create_dir_all(&path)?;
        fs::write(path.join("config.json"), format!("{canonical}\n"))?;
        Ok(RunDir { path, config_hash: hash })
    }

    /// Write the manifest: command, config hash, resolved config, outcomes.
    /// Byte-identical for identical config and outcomes.
    pub fn write_manifest(
        &self,
        command: &str,
        config: &serde_json::Value,
        outcomes: &serde_json::Value,
    ) -> Result<()> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            command: &'a str,
            config_hash: &'a str,
            config: &'a serde_json::Value,
            outcomes: &'a serde_json::Value,
        }
        let m = Manifest { command, config_hash: &self.config_hash, config, outcomes };
        fs::write(
            self.path.join("manifest.json"),
            format!("{}\n", serde_json::to_string_pretty(&m)?),
        )?;
        Ok(())
    }

    pub fn write_text(&self, name: &str, content: &str) -> Result<()> {
        fs::write(self.path.join(name), content)?;
        Ok(())
    }
}

fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes.iter().take(n / 2 + 1).map(|b| format!("{b:02x}")).collect::<String>()[..n].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fit_recovers_synthetic_log_law() {
        let samples: Vec<(f64, f64)> = [4e-4, 8e-4, 1.6e-3, 3.2e-3]
            .iter()
            .map(|&mu: &f64| (mu, 5.0 * (1.0_f64 / mu).ln() / mu))
            .collect();
        let (c1, _c2, r1, r2, preferred) = fit_scaling(&samples);
        assert_relative_eq!(c1, 5.0, max_relative = 1e-2);
        assert!(r1 < r2);
        assert_eq!(preferred, ScalingLaw::LogOverMu);
    }

    #[test]
    fn fit_recovers_synthetic_square_law() {
        let samples: Vec<(f64, f64)> =
            [4e-4, 8e-4, 1.6e-3, 3.2e-3].iter().map(|&mu: &f64| (mu, 3.0 / (mu * mu))).collect();
        let (_c1, c2, r1, r2, preferred) = fit_scaling(&samples);
        assert_relative_eq!(c2, 3.0, max_relative = 1e-2);
        assert!(r2 < r1);
        assert_eq!(preferred, ScalingLaw::InverseMuSquared);
    }

    #[test]
    fn gap_ratios_increase_as_mu_decreases() {
        let rows = gap_report(&[1e-2, 1e-3, 1e-4], 1.0);
        assert_relative_eq!(rows[0].ratio, 10.0, max_relative = 1e-12);
        assert_relative_eq!(rows[2].ratio, 100.0, max_relative = 1e-12);
        assert!(rows.windows(2).all(|w| w[1].ratio > w[0].ratio));
        assert!(rows.windows(2).all(|w| w[1].mu < w[0].mu));
    }

    #[test]
    fn run_dir_manifest_deterministic() {
        let tmp = std::env::temp_dir().join(format!("driftlab-test-{}", std::process::id()));
        let config = serde_json::json!({"epsilon": 0.25, "mu": 1e-3});
        let outcomes = serde_json::json!({"ok": true});
        let d1 = RunDir::create(&tmp, "unit", &config).unwrap();
        d1.write_manifest("unit", &config, &outcomes).unwrap();
        let d2 = RunDir::create(&tmp, "unit", &config).unwrap();
        d2.write_manifest("unit", &config, &outcomes).unwrap();
        assert_eq!(d1.config_hash, d2.config_hash);
        let m1 = std::fs::read(d1.path.join("manifest.json")).unwrap();
        let m2 = std::fs::read(d2.path.join("manifest.json")).unwrap();
        assert_eq!(m1, m2, "manifests must be byte-identical");
        let _ = std::fs::remove_dir_all(&tmp);
    }
}
