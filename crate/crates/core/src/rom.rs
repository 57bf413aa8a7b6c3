//! Reduced-order stress surrogates and their evaluation.
//!
//! | strategy  | stress prediction                          |
//! |-----------|--------------------------------------------|
//! | BlackBox  | `Φ(μ)`                                     |
//! | PodNn     | `V φ(μ)`                                   |
//! | Split     | `V0 φ0(μ) + S_I f_μ`                       |
//! | Corrected | `V0 V0ᵀ (V φ(μ) − S_I f_μ) + S_I f_μ`      |

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cases::{Case, CaseConfig};
use crate::error::{Error, Result};
use crate::fem::inf_norm;
use crate::fom::SolutionTriplet;
use crate::nn::{self, Architecture, FourierConfig, Head, LossWeight, Mlp, TrainReport};
use crate::pod::{compute_pod, compute_pod_weighted, PodBasis, PodInner};
use crate::par;

pub const MODEL_FORMAT: &str = "momentum-rom-model/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    BlackBox,
    PodNn,
    Split,
    Corrected,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::BlackBox, Strategy::PodNn, Strategy::Split, Strategy::Corrected];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::BlackBox => "blackbox",
            Strategy::PodNn => "podnn",
            Strategy::Split => "split",
            Strategy::Corrected => "corrected",
        }
    }

    /// Whether predictions satisfy the momentum constraints exactly.
    pub fn is_conservative(self) -> bool {
        matches!(self, Strategy::Split | Strategy::Corrected)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == key)
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}' (expected blackbox, podnn, split or corrected)")))
    }
}

/// One full-order sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub index: usize,
    pub params: Vec<f64>,
    pub solution: SolutionTriplet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomModel {
    pub format: String,
    pub strategy: Strategy,
    pub config: CaseConfig,
    pub net: Mlp,
    /// `V` for PodNn and Corrected.
    pub basis: Option<PodBasis>,
    /// `V0` for Split and Corrected.
    pub kernel_basis: Option<PodBasis>,
    pub training: TrainReport,
}

fn pod(case: &Case, snapshots: &[Vec<f64>], n: usize) -> Result<PodBasis> {
    Ok(match case.config.pod_inner {
        PodInner::Euclidean => compute_pod(snapshots, n, &case.disc.gramian)?,
        PodInner::Gramian => compute_pod_weighted(snapshots, n, &case.disc.gramian)?,
    })
}

fn architecture(cfg: &CaseConfig, head: Head) -> Architecture {
    Architecture {
        fourier: FourierConfig { p: cfg.ranges.len(), k: cfg.fourier_k },
        hidden: cfg.hidden,
        latent: cfg.latent,
        head,
    }
}

fn new_net(cfg: &CaseConfig, head: Head, latent: usize) -> Mlp {
    let mut arch = architecture(cfg, head);
    arch.latent = latent;
    let lo = cfg.ranges.iter().map(|r| r[0]).collect();
    let hi = cfg.ranges.iter().map(|r| r[1]).collect();
    Mlp::new(arch, lo, hi, cfg.train.seed)
}

/// Trains a latent network on the coefficients of `snapshots` in `basis`.
fn train_latent(case: &Case, params: &[Vec<f64>], snapshots: &[Vec<f64>], basis: &PodBasis) -> Result<(Mlp, TrainReport)> {
    let cfg = &case.config;
    let gramian = Some(&case.disc.gramian);
    let targets: Vec<Vec<f64>> = snapshots.iter().map(|s| basis.project(s, gramian)).collect();
    let mut net = new_net(cfg, Head::Latent, basis.n());
    let report = nn::train(&mut net, params, &targets, &LossWeight::Dense(&basis.latent_gramian), &cfg.train)?;
    Ok((net, report))
}

fn homogeneous_snapshots(case: &Case, samples: &[Sample]) -> Vec<Vec<f64>> {
    par::map_slice(samples, |s| case.homogeneous_part(&s.solution.sigma))
}

/// POD of homogeneous snapshots. Trailing singular vectors carry round-off
/// amplified by `1/s_j` outside `ker B`, so every column is mapped through
/// `S_0` once more and re-orthonormalized.
pub fn kernel_pod(case: &Case, homogeneous: &[Vec<f64>], n: usize) -> Result<PodBasis> {
    let raw = compute_pod(homogeneous, n, &case.disc.gramian)?;
    Ok(raw.mapped(|v| case.homogeneous_part(v), &case.disc.gramian))
}

/// Builds and trains one surrogate from full-order training samples.
pub fn train_strategy(strategy: Strategy, case: &Case, samples: &[Sample]) -> Result<RomModel> {
    if samples.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let cfg = &case.config;
    let params: Vec<Vec<f64>> = samples.iter().map(|s| s.params.clone()).collect();
    let stresses: Vec<Vec<f64>> = samples.iter().map(|s| s.solution.sigma.clone()).collect();
    if let Some(bad) = stresses.iter().find(|s| s.len() != case.disc.num_stress()) {
        return Err(Error::Data(format!(
            "snapshot length {} does not match the discretization ({})",
            bad.len(),
            case.disc.num_stress()
        )));
    }
    let (net, basis, kernel_basis, training) = match strategy {
        Strategy::BlackBox => {
            let mut net = new_net(cfg, Head::Full { outputs: case.disc.num_stress() }, cfg.latent);
            let report = nn::train(&mut net, &params, &stresses, &LossWeight::Identity, &cfg.train)?;
            (net, None, None, report)
        }
        Strategy::PodNn => {
            let v = pod(case, &stresses, cfg.latent)?;
            let (net, report) = train_latent(case, &params, &stresses, &v)?;
            (net, Some(v), None, report)
        }
        Strategy::Split => {
            let homogeneous = homogeneous_snapshots(case, samples);
            let v0 = kernel_pod(case, &homogeneous, cfg.latent)?;
            let (net, report) = train_latent(case, &params, &homogeneous, &v0)?;
            (net, None, Some(v0), report)
        }
        Strategy::Corrected => {
            let v = pod(case, &stresses, cfg.latent)?;
            let (net, report) = train_latent(case, &params, &stresses, &v)?;
            let homogeneous = homogeneous_snapshots(case, samples);
            let v0 = kernel_pod(case, &homogeneous, cfg.kernel_latent)?;
            (net, Some(v), Some(v0), report)
        }
    };
    Ok(RomModel {
        format: MODEL_FORMAT.to_string(),
        strategy,
        config: cfg.clone(),
        net,
        basis,
        kernel_basis,
        training,
    })
}

/// `V0 V0ᵀ (σ̃ − S_I f) + S_I f`
pub fn correct(kernel_basis: &PodBasis, sigma: &[f64], particular: &[f64]) -> Vec<f64> {
    let shifted: Vec<f64> = sigma.iter().zip(particular).map(|(s, p)| s - p).collect();
    let mut out = kernel_basis.project_reconstruct(&shifted);
    out.iter_mut().zip(particular).for_each(|(o, p)| *o += p);
    out
}

/// Anything that maps parameters to a Σh coefficient vector.
pub trait StressSurrogate: Sync {
    fn name(&self) -> String;
    fn predict_stress(&self, case: &Case, mu: &[f64]) -> Result<Vec<f64>>;
}

impl RomModel {
    fn basis(&self) -> Result<&PodBasis> {
        self.basis.as_ref().ok_or_else(|| Error::Data(format!("{} model lacks its POD basis", self.strategy)))
    }

    fn kernel_basis(&self) -> Result<&PodBasis> {
        self.kernel_basis
            .as_ref()
            .ok_or_else(|| Error::Data(format!("{} model lacks its kernel basis", self.strategy)))
    }

    /// Checks that the model was trained for this case.
    pub fn check_case(&self, case: &Case) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Data(format!("unsupported model format '{}'", self.format)));
        }
        let (a, b) = (&self.config, &case.config);
        if a.case != b.case || a.nx != b.nx || a.ny != b.ny || a.root_count != b.root_count {
            return Err(Error::Data(format!(
                "model trained for {} {}x{} (roots {}), case is {} {}x{} (roots {})",
                a.case, a.nx, a.ny, a.root_count, b.case, b.nx, b.ny, b.root_count
            )));
        }
        Ok(())
    }
}

impl StressSurrogate for RomModel {
    fn name(&self) -> String {
        self.strategy.to_string()
    }

    fn predict_stress(&self, case: &Case, mu: &[f64]) -> Result<Vec<f64>> {
        if !self.config.contains(mu) {
            log::warn!("parameter {mu:?} lies outside the training box; extrapolating");
        }
        let latent = self.net.predict(mu)?;
        Ok(match self.strategy {
            Strategy::BlackBox => latent,
            Strategy::PodNn => self.basis()?.reconstruct(&latent),
            Strategy::Split => {
                let mut out = self.kernel_basis()?.reconstruct(&latent);
                out.iter_mut().zip(case.particular_stress(mu)).for_each(|(o, p)| *o += p);
                out
            }
            Strategy::Corrected => {
                let raw = self.basis()?.reconstruct(&latent);
                correct(self.kernel_basis()?, &raw, &case.particular_stress(mu))
            }
        })
    }
}

/// Pseudo-model returning the full-order stress.
pub struct FomOracle;

impl StressSurrogate for FomOracle {
    fn name(&self) -> String {
        "fom".into()
    }

    fn predict_stress(&self, case: &Case, mu: &[f64]) -> Result<Vec<f64>> {
        Ok(case.solve(mu)?.sigma)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub setup_s: f64,
    /// Mean seconds per stress query.
    pub stress_s: f64,
    /// Mean seconds per `(u, r)` post-processing.
    pub postprocess_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleErrors {
    pub index: usize,
    pub sigma: f64,
    pub u: f64,
    pub r: f64,
    /// `‖Bσ̃ − f‖_∞`
    pub constraint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub sigma_mre: f64,
    pub u_mre: f64,
    pub r_mre: f64,
    pub acv: f64,
    pub samples: Vec<SampleErrors>,
    pub timings: Timings,
}

fn relative(err: f64, reference: f64) -> Option<f64> {
    (reference > 0.0).then(|| err / reference)
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn mean_of(name: &str, what: &str, values: impl Iterator<Item = Option<f64>>) -> f64 {
    let (mut sum, mut count, mut skipped) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(x) => {
                sum += x;
                count += 1;
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{name}: {skipped} samples with zero {what} reference excluded from the mean");
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Relative errors in the Σh / Uh / Rh norms and the constraint violation
/// over a test set.
pub fn evaluate(model: &dyn StressSurrogate, case: &Case, test: &[Sample]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let name = model.name();
    let disc = &case.disc;
    type Row = (SampleErrors, [Option<f64>; 3], f64, f64);
    let rows: Vec<Result<Row>> = par::map_slice(test, |s| {
        let t0 = Instant::now();
        let sigma = model.predict_stress(case, &s.params)?;
        let t1 = Instant::now();
        let (u, r) = case.postprocess(&s.params, &sigma)?;
        let t2 = Instant::now();
        let reference = &s.solution;
        let es = disc.sigma_norm(&diff(&sigma, &reference.sigma));
        let eu = disc.u_norm(&diff(&u, &reference.u));
        let er = disc.r_norm(&diff(&r, &reference.r));
        let constraint = inf_norm(&disc.constraint_residual(&sigma, &case.load(&s.params)));
        let rel = [
            relative(es, disc.sigma_norm(&reference.sigma)),
            relative(eu, disc.u_norm(&reference.u)),
            relative(er, disc.r_norm(&reference.r)),
        ];
        let errors = SampleErrors {
            index: s.index,
            sigma: rel[0].unwrap_or(f64::NAN),
            u: rel[1].unwrap_or(f64::NAN),
            r: rel[2].unwrap_or(f64::NAN),
            constraint,
        };
        Ok((errors, rel, (t1 - t0).as_secs_f64(), (t2 - t1).as_secs_f64()))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    Ok(EvalReport {
        sigma_mre: mean_of(&name, "stress", rows.iter().map(|r| r.1[0])),
        u_mre: mean_of(&name, "displacement", rows.iter().map(|r| r.1[1])),
        r_mre: mean_of(&name, "rotation", rows.iter().map(|r| r.1[2])),
        acv: rows.iter().map(|r| r.0.constraint).sum::<f64>() / n,
        timings: Timings {
            setup_s: 0.0,
            stress_s: rows.iter().map(|r| r.2).sum::<f64>() / n,
            postprocess_s: rows.iter().map(|r| r.3).sum::<f64>() / n,
        },
        samples: rows.into_iter().map(|r| r.0).collect(),
        name,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_case() -> Case {
        let mut cfg = CaseConfig::footing();
        cfg.nx = 4;
        cfg.ny = 4;
        cfg.latent = 3;
        cfg.kernel_latent = 3;
        cfg.train.epochs = 300;
        Case::new(cfg).unwrap()
    }

    fn samples(case: &Case, range: std::ops::Range<usize>) -> Vec<Sample> {
        range
            .map(|i| {
                let params = case.config.sample_parameters(i, 0);
                Sample {
                    index: i,
                    solution: case.solve(&params).unwrap(),
                    params,
                }
            })
            .collect()
    }

    struct Zero;
    impl StressSurrogate for Zero {
        fn name(&self) -> String {
            "zero".into()
        }
        fn predict_stress(&self, case: &Case, _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![0.0; case.disc.num_stress()])
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("Black-Box".parse::<Strategy>().unwrap(), Strategy::BlackBox);
        assert!("nope".parse::<Strategy>().is_err());
    }

    #[test]
    fn oracle_and_zero_models() {
        let case = small_case();
        let test = samples(&case, 0..4);
        let oracle = evaluate(&FomOracle, &case, &test).unwrap();
        assert!(oracle.sigma_mre <= 1e-10 && oracle.u_mre <= 1e-10 && oracle.r_mre <= 1e-10);
        assert!(oracle.acv <= 1e-11);
        // without boundary data a zero stress post-processes to zero (u, r)
        let mut cfg = case.config.clone();
        cfg.ranges[0] = [0.0, 0.0];
        let case = Case::new(cfg).unwrap();
        let test = samples(&case, 0..4);
        let zero = evaluate(&Zero, &case, &test).unwrap();
        assert!((zero.sigma_mre - 1.0).abs() < 1e-12);
        assert!((zero.u_mre - 1.0).abs() < 1e-12);
        assert!((zero.r_mre - 1.0).abs() < 1e-12);
        let mean_f: f64 = test.iter().map(|s| inf_norm(&case.load(&s.params))).sum::<f64>() / 4.0;
        assert!((zero.acv - mean_f).abs() < 1e-15);
        assert_eq!(zero.samples.len(), 4);
    }

    #[test]
    fn conservative_strategies_are_exact() {
        let case = small_case();
        let train = samples(&case, 0..8);
        let test = samples(&case, 100..104);
        for strategy in [Strategy::Split, Strategy::Corrected] {
            let model = train_strategy(strategy, &case, &train).unwrap();
            let v0 = model.kernel_basis.as_ref().unwrap();
            for col in &v0.columns {
                assert!(inf_norm(&case.disc.b.mul_vec(col)) <= 1e-11);
            }
            for s in &test {
                let sigma = model.predict_stress(&case, &s.params).unwrap();
                let f = case.load(&s.params);
                let res = inf_norm(&case.disc.constraint_residual(&sigma, &f));
                assert!(res <= 1e-11 * inf_norm(&f) + 1e-13, "{strategy}: {res:e}");
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let case = small_case();
        let train = samples(&case, 0..6);
        let a = train_strategy(Strategy::PodNn, &case, &train).unwrap();
        let b = train_strategy(Strategy::PodNn, &case, &train).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a).unwrap();
        let back: RomModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn podnn_memorizes_single_snapshot() {
        let mut cfg = small_case().config;
        cfg.latent = 1;
        cfg.train.epochs = 3000;
        let case = Case::new(cfg).unwrap();
        let train = samples(&case, 0..1);
        let model = train_strategy(Strategy::PodNn, &case, &train).unwrap();
        let sigma = model.predict_stress(&case, &train[0].params).unwrap();
        let err = case.disc.sigma_norm(&diff(&sigma, &train[0].solution.sigma)) / case.disc.sigma_norm(&train[0].solution.sigma);
        assert!(err <= 1e-6, "{err:e}");
    }

    #[test]
    fn empty_training_set_rejected() {
        let case = small_case();
        assert!(train_strategy(Strategy::BlackBox, &case, &[]).is_err());
    }
}
