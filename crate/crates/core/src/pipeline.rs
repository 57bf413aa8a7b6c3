//! End-to-end experiment steps and their on-disk formats.
//!
//! Dataset directory:
//! * `metadata.json`: format tag, case configuration, dimensions
//! * `parameters.csv`: `index, split, <4 parameter names>, iterations, constraint_residual`
//! * `sample_NNNNN.json`: one [`Sample`] per file
//!
//! Report directory:
//! * `summary.csv`: `strategy, sigma_mre, u_mre, r_mre, acv`
//! * `samples_<strategy>.csv`: `index, sigma_rel, u_rel, r_rel, constraint`
//! * `timings.csv`: `strategy, setup_s, stress_s, postprocess_s`
//! * `quiver_<name>.csv`: `cell, x, y, u_x, u_y` for the first test sample

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cases::{Case, CaseConfig, CaseKind};
use crate::error::{Error, Result};
use crate::fem::{inf_norm, Hooke};
use crate::fom;
use crate::par;
use crate::rom::{evaluate, EvalReport, RomModel, Sample, Strategy, StressSurrogate};

pub const DATASET_FORMAT: &str = "momentum-rom-dataset/1";
/// Extra draws allowed when a full-order solve fails.
pub const MAX_RETRIES: usize = 3;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub format: String,
    pub config: CaseConfig,
    pub num_stress: usize,
    pub num_displacement: usize,
    pub num_rotation: usize,
    /// Sample draws that needed a retry, `(index, attempt)`.
    pub retries: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub metadata: DatasetMetadata,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn config(&self) -> &CaseConfig {
        &self.metadata.config
    }
}

/// Solves sample `index`, redrawing its parameters after a failure.
pub fn solve_sample(case: &Case, index: usize) -> Result<(Sample, usize)> {
    let mut last = None;
    for attempt in 0..=MAX_RETRIES {
        let params = case.config.sample_parameters(index, attempt);
        match case.solve(&params) {
            Ok(solution) => return Ok((Sample { index, params, solution }, attempt)),
            Err(e) => {
                log::warn!("sample {index} attempt {attempt} failed: {e}");
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Full-order solves for indices `0..n_train + n_test`; the first `n_train`
/// form the training split.
pub fn generate(case: &Case) -> Result<Dataset> {
    let cfg = &case.config;
    let total = cfg.n_train + cfg.n_test;
    let results = par::map_indexed(total, |i| solve_sample(case, i));
    let mut samples = Vec::with_capacity(total);
    let mut retries = Vec::new();
    for r in results {
        let (sample, attempt) = r?;
        if attempt > 0 {
            retries.push((sample.index, attempt));
        }
        samples.push(sample);
    }
    let test = samples.split_off(cfg.n_train);
    Ok(Dataset {
        metadata: DatasetMetadata {
            format: DATASET_FORMAT.into(),
            config: cfg.clone(),
            num_stress: case.disc.num_stress(),
            num_displacement: case.disc.dofs.num_displacement(),
            num_rotation: case.disc.dofs.num_rotation(),
            retries,
        },
        train: samples,
        test,
    })
}

fn sample_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("sample_{index:05}.json"))
}

pub fn write_dataset(dir: &Path, data: &Dataset, case: &Case) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join("metadata.json"), serde_json::to_string_pretty(&data.metadata)?.as_bytes())?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    let names = data.config().parameter_names();
    let mut header = vec!["index", "split"];
    header.extend(names);
    header.extend(["iterations", "constraint_residual"]);
    csv.write_record(&header)?;
    for (split, samples) in [("train", &data.train), ("test", &data.test)] {
        for s in samples {
            let residual = inf_norm(&case.disc.constraint_residual(&s.solution.sigma, &case.load(&s.params)));
            let mut row = vec![s.index.to_string(), split.to_string()];
            row.extend(s.params.iter().map(|p| format!("{p:.17e}")));
            row.push(s.solution.iterations.to_string());
            row.push(format!("{residual:.6e}"));
            csv.write_record(&row)?;
            write_file(&sample_path(dir, s.index), serde_json::to_string(s)?.as_bytes())?;
        }
    }
    let bytes = csv.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    write_file(&dir.join("parameters.csv"), &bytes)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let metadata: DatasetMetadata = serde_json::from_str(&read_file(&dir.join("metadata.json"))?)?;
    if metadata.format != DATASET_FORMAT {
        return Err(Error::Data(format!("unsupported dataset format '{}'", metadata.format)));
    }
    let cfg = &metadata.config;
    let load = |range: std::ops::Range<usize>| -> Result<Vec<Sample>> {
        range
            .map(|i| {
                let s: Sample = serde_json::from_str(&read_file(&sample_path(dir, i))?)?;
                if s.solution.sigma.len() != metadata.num_stress {
                    return Err(Error::Data(format!("sample {i} has the wrong stress length")));
                }
                Ok(s)
            })
            .collect()
    };
    let train = load(0..cfg.n_train)?;
    let test = load(cfg.n_train..cfg.n_train + cfg.n_test)?;
    Ok(Dataset { metadata, train, test })
}

/// Checks that a dataset was produced for the same discretization.
pub fn check_dataset(case: &Case, data: &Dataset) -> Result<()> {
    let (a, b) = (data.config(), &case.config);
    if a.case != b.case || a.nx != b.nx || a.ny != b.ny || data.metadata.num_stress != case.disc.num_stress() {
        return Err(Error::Data(format!(
            "dataset is for {} {}x{}, configuration is {} {}x{}",
            a.case, a.nx, a.ny, b.case, b.nx, b.ny
        )));
    }
    Ok(())
}

pub fn write_model(path: &Path, model: &RomModel) -> Result<()> {
    write_file(path, serde_json::to_string(model)?.as_bytes())?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["epoch", "loss"])?;
    for (e, l) in model.training.loss_history.iter().enumerate() {
        csv.write_record([e.to_string(), format!("{l:.9e}")])?;
    }
    let bytes = csv.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    write_file(&path.with_extension("loss.csv"), &bytes)
}

pub fn read_model(path: &Path) -> Result<RomModel> {
    Ok(serde_json::from_str(&read_file(path)?)?)
}

pub fn model_path(dir: &Path, strategy: Strategy) -> PathBuf {
    dir.join(format!("{strategy}.json"))
}

/// Writes summary, per-sample, timing and quiver CSVs.
pub fn write_reports(dir: &Path, case: &Case, test: &[Sample], reports: &[EvalReport], fom_timing: Option<f64>) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut summary = csv::Writer::from_writer(Vec::new());
    summary.write_record(["strategy", "sigma_mre", "u_mre", "r_mre", "acv"])?;
    let mut timings = csv::Writer::from_writer(Vec::new());
    timings.write_record(["strategy", "setup_s", "stress_s", "postprocess_s"])?;
    for rep in reports {
        summary.write_record([
            rep.name.clone(),
            format!("{:.6e}", rep.sigma_mre),
            format!("{:.6e}", rep.u_mre),
            format!("{:.6e}", rep.r_mre),
            format!("{:.6e}", rep.acv),
        ])?;
        let t = rep.timings;
        timings.write_record([
            rep.name.clone(),
            format!("{:.6e}", t.setup_s),
            format!("{:.6e}", t.stress_s),
            format!("{:.6e}", t.postprocess_s),
        ])?;
        let mut per = csv::Writer::from_writer(Vec::new());
        per.write_record(["index", "sigma_rel", "u_rel", "r_rel", "constraint"])?;
        for s in &rep.samples {
            per.write_record([
                s.index.to_string(),
                format!("{:.6e}", s.sigma),
                format!("{:.6e}", s.u),
                format!("{:.6e}", s.r),
                format!("{:.6e}", s.constraint),
            ])?;
        }
        write_file(
            &dir.join(format!("samples_{}.csv", rep.name)),
            &per.into_inner().map_err(|e| Error::Data(e.to_string()))?,
        )?;
    }
    if let Some(solve_s) = fom_timing {
        timings.write_record(["fom".to_string(), format!("{:.6e}", 0.0), format!("{solve_s:.6e}"), format!("{:.6e}", 0.0)])?;
    }
    write_file(&dir.join("summary.csv"), &summary.into_inner().map_err(|e| Error::Data(e.to_string()))?)?;
    write_file(&dir.join("timings.csv"), &timings.into_inner().map_err(|e| Error::Data(e.to_string()))?)?;
    if let Some(first) = test.first() {
        write_quiver(&dir.join("quiver_fom.csv"), case, &first.solution.u)?;
    }
    Ok(())
}

/// Displacement arrows at cell centers.
pub fn write_quiver(path: &Path, case: &Case, u: &[f64]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["cell", "x", "y", "u_x", "u_y"])?;
    for (c, e) in case.disc.elements.iter().enumerate() {
        csv.write_record([
            c.to_string(),
            format!("{:.6e}", e.centroid[0]),
            format!("{:.6e}", e.centroid[1]),
            format!("{:.6e}", u[2 * c]),
            format!("{:.6e}", u[2 * c + 1]),
        ])?;
    }
    write_file(path, &csv.into_inner().map_err(|e| Error::Data(e.to_string()))?)
}

/// Evaluates each model on the test split, with quiver output for the first
/// test sample.
pub fn evaluate_models(
    case: &Case,
    test: &[Sample],
    models: &[RomModel],
    setup_s: f64,
    out_dir: Option<&Path>,
) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::with_capacity(models.len());
    for model in models {
        model.check_case(case)?;
        let mut rep = evaluate(model, case, test)?;
        rep.timings.setup_s = setup_s;
        if let (Some(dir), Some(first)) = (out_dir, test.first()) {
            let sigma = model.predict_stress(case, &first.params)?;
            let (u, _) = case.postprocess(&first.params, &sigma)?;
            write_quiver(&dir.join(format!("quiver_{}.csv", model.strategy)), case, &u)?;
        }
        reports.push(rep);
    }
    Ok(reports)
}

/// Mean full-order solve time over at most `count` test samples.
pub fn time_fom(case: &Case, test: &[Sample], count: usize) -> Result<f64> {
    let picked = &test[..count.min(test.len())];
    if picked.is_empty() {
        return Ok(0.0);
    }
    let t0 = Instant::now();
    for s in picked {
        case.solve(&s.params)?;
    }
    Ok(t0.elapsed().as_secs_f64() / picked.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub name: String,
    /// `None` for informational rows.
    pub passed: Option<bool>,
    pub value: f64,
    pub threshold: f64,
}

fn check(name: &str, value: f64, threshold: f64) -> DiagnosticRow {
    DiagnosticRow {
        name: name.into(),
        passed: Some(value <= threshold),
        value,
        threshold,
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Structural checks of a configured case.
pub fn diagnose(case: &Case, trials: usize, seed: u64) -> Result<Vec<DiagnosticRow>> {
    let disc = &case.disc;
    let tree = &case.tree;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = vec![
        DiagnosticRow {
            name: "mesh topology".into(),
            passed: Some(disc.mesh.validate().is_ok()),
            value: disc.mesh.num_cells() as f64,
            threshold: 0.0,
        },
        DiagnosticRow {
            name: "spanning forest".into(),
            passed: Some(case.forest.validate(&disc.mesh, &disc.bc).is_ok()),
            value: case.forest.num_trees() as f64,
            threshold: 0.0,
        },
    ];
    let (mut right, mut kernel, mut adjoint) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..trials {
        let f = random_vec(&mut rng, disc.num_multipliers());
        let sigma = random_vec(&mut rng, disc.num_stress());
        right = right.max(inf_norm(&disc.constraint_residual(&tree.apply_si(&f), &f)) / inf_norm(&f));
        kernel = kernel.max(inf_norm(&disc.b.mul_vec(&tree.apply_s0(&disc.b, &sigma))) / inf_norm(&sigma));
        let lhs: f64 = tree.apply_si(&f).iter().zip(&sigma).map(|(a, b)| a * b).sum();
        let rhs: f64 = tree.apply_si_adjoint(&sigma).iter().zip(&f).map(|(a, b)| a * b).sum();
        adjoint = adjoint.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    rows.push(check("right inverse |B S_I f - f| / |f|", right, 1e-12));
    rows.push(check("kernel |B S_0 s| / |s|", kernel, 1e-12));
    rows.push(check("adjoint identity", adjoint, 1e-12));

    let mu = case.config.sample_parameters(0, 0);
    let sol = case.solve(&mu)?;
    let f = case.load(&mu);
    rows.push(check(
        "full-order constraint residual",
        inf_norm(&disc.constraint_residual(&sol.sigma, &f)) / inf_norm(&f).max(f64::MIN_POSITIVE),
        1e-11,
    ));
    let (u, r) = case.postprocess(&mu, &sol.sigma)?;
    let scale = inf_norm(&sol.u).max(inf_norm(&sol.r)).max(f64::MIN_POSITIVE);
    let dev = u.iter().zip(&sol.u).chain(r.iter().zip(&sol.r)).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    rows.push(check("post-processing round trip", dev / scale, 1e-10));

    if case.kind() == CaseKind::Hencky {
        let mut flat = mu.clone();
        flat[1] = 2.0;
        let it = case.solve(&flat)?;
        let a = disc.compliance_uniform(Hooke::new(2.0, 0.0)?);
        let lin = fom::solve_linear(disc, &a, &case.load(&flat), &case.boundary_functional(&flat))?;
        let gap = it.sigma.iter().zip(&lin.sigma).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        rows.push(check("hencky beta = 2 equals linear", gap, 1e-12));
        rows.push(check("hencky beta = 2 iterations", it.iterations as f64, 1.0));
    }
    rows.push(DiagnosticRow {
        name: "operator norm |S_0|_2".into(),
        passed: None,
        value: tree.kernel_projector_norm(&disc.b, 100, seed),
        threshold: 0.0,
    });
    Ok(rows)
}
