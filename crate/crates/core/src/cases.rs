//! The two parametrized case studies and their configuration.
//!
//! * footing: `μ = [g_y, f_y, μ, λ]`, Hooke law, displacement data on the
//!   bottom (zero) and top (`10⁻³·[0, −g_y]`), traction-free sides, body force
//!   `10⁻²·[0, −f_y]`.
//! * hencky: `μ = [α, β, γ, δ]`, Hencky–von Mises law, displacement
//!   `γ/10·[x(1−x), y(1−y)]` on the whole boundary, body force
//!   `δ·[(4y−1)(4y−3), (4x−1)(4x−3)]`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{BoundarySpec, Discretization, HenckyVonMises, Hooke};
use crate::fom::{self, HenckyOptions, SolutionTriplet};
use crate::mesh::{build_dual_graph, build_structured_unit_square, BoundarySide, Point};
use crate::nn::TrainConfig;
use crate::pod::PodInner;
use crate::sparse::CsrMatrix;
use crate::tree::{build_forest, SpanningForest, TreeFactorization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseKind {
    Footing,
    Hencky,
}

impl CaseKind {
    pub fn parameter_names(self) -> [&'static str; 4] {
        match self {
            CaseKind::Footing => ["g_y", "f_y", "mu", "lambda"],
            CaseKind::Hencky => ["alpha", "beta", "gamma", "delta"],
        }
    }
}

impl fmt::Display for CaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseKind::Footing => "footing",
            CaseKind::Hencky => "hencky",
        })
    }
}

impl FromStr for CaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "footing" => Ok(CaseKind::Footing),
            "hencky" => Ok(CaseKind::Hencky),
            other => Err(Error::Config(format!("unknown case '{other}' (expected footing or hencky)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub case: CaseKind,
    pub nx: usize,
    pub ny: usize,
    /// `[lo, hi]` per parameter.
    pub ranges: Vec<[f64; 2]>,
    pub n_train: usize,
    pub n_test: usize,
    /// POD / latent dimension `n`.
    pub latent: usize,
    /// Dimension of the kernel basis `V0`.
    pub kernel_latent: usize,
    pub fourier_k: usize,
    pub hidden: usize,
    pub root_count: usize,
    /// Seed for parameter sampling.
    pub seed: u64,
    pub pod_inner: PodInner,
    pub train: TrainConfig,
    pub hencky: HenckyOptions,
}

impl CaseConfig {
    pub fn footing() -> Self {
        Self {
            case: CaseKind::Footing,
            nx: 10,
            ny: 10,
            ranges: vec![[0.5, 2.0], [0.5, 2.0], [0.1, 2.0], [0.1, 2.0]],
            n_train: 150,
            n_test: 50,
            latent: 10,
            kernel_latent: 10,
            fourier_k: 3,
            hidden: 30,
            root_count: 2,
            seed: 42,
            pod_inner: PodInner::Euclidean,
            train: TrainConfig::default(),
            hencky: HenckyOptions::default(),
        }
    }

    pub fn hencky() -> Self {
        Self {
            case: CaseKind::Hencky,
            nx: 20,
            ny: 20,
            ranges: vec![[1.0, 2.0], [0.0, 2.0], [-1.0, 1.0], [-1.0, 1.0]],
            latent: 15,
            kernel_latent: 15,
            fourier_k: 2,
            root_count: 4,
            ..Self::footing()
        }
    }

    pub fn default_for(case: CaseKind) -> Self {
        match case {
            CaseKind::Footing => Self::footing(),
            CaseKind::Hencky => Self::hencky(),
        }
    }

    /// Parses a TOML document; keys that are absent keep the defaults of the
    /// case named by the mandatory `case` key.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: toml::Table = text.parse()?;
        let case: CaseKind = doc
            .get("case")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Config("missing 'case' key".into()))?
            .parse()?;
        let base = toml::Table::try_from(Self::default_for(case)).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, doc);
        let cfg: Self = merged.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn parameter_names(&self) -> [&'static str; 4] {
        self.case.parameter_names()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.nx == 0 || self.ny == 0 {
            return fail(format!("mesh resolution {}x{} must be positive", self.nx, self.ny));
        }
        if self.ranges.len() != 4 {
            return fail(format!("expected 4 parameter ranges, got {}", self.ranges.len()));
        }
        for (name, [lo, hi]) in self.parameter_names().iter().zip(&self.ranges) {
            if !(lo <= hi) {
                return fail(format!("range of {name} is empty: [{lo}, {hi}]"));
            }
        }
        if self.latent == 0 || self.kernel_latent == 0 || self.hidden == 0 {
            return fail("latent, kernel_latent and hidden must be positive".into());
        }
        if self.root_count == 0 {
            return fail("root_count must be positive".into());
        }
        if !(self.train.learning_rate > 0.0) || self.train.epochs == 0 {
            return fail("learning_rate and epochs must be positive".into());
        }
        match self.case {
            CaseKind::Footing => {
                let [mu, lambda] = [self.ranges[2], self.ranges[3]];
                if !(mu[0] > 0.0) {
                    return fail(format!("footing shear modulus must stay positive, range starts at {}", mu[0]));
                }
                if !(mu[0] + lambda[0] > 0.0) {
                    return fail("footing Lamé ranges admit a singular compliance".into());
                }
            }
            CaseKind::Hencky => {
                if !(self.ranges[0][0] >= 0.0) || !(self.ranges[1][1] <= 2.0) {
                    return fail("hencky requires alpha >= 0 and beta <= 2".into());
                }
            }
        }
        Ok(())
    }

    pub fn boundary_spec(&self) -> BoundarySpec {
        match self.case {
            CaseKind::Footing => BoundarySpec::new(
                &[BoundarySide::Bottom, BoundarySide::Top],
                &[BoundarySide::Left, BoundarySide::Right],
            )
            .expect("valid partition"),
            CaseKind::Hencky => BoundarySpec::all_displacement(),
        }
    }

    /// Draw `attempt` for sample `index`: uniform per coordinate over the box,
    /// on an independent stream per sample.
    pub fn sample_parameters(&self, index: usize, attempt: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let mut out = Vec::new();
        for _ in 0..=attempt {
            out = self
                .ranges
                .iter()
                .map(|&[lo, hi]| if hi > lo { rng.random_range(lo..hi) } else { lo })
                .collect();
        }
        out
    }

    /// Whether `mu` lies in the configured box.
    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.ranges.len() && mu.iter().zip(&self.ranges).all(|(m, [lo, hi])| lo <= m && m <= hi)
    }
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

/// Mesh, discretization and tree factorization of a configured case.
#[derive(Debug, Clone)]
pub struct Case {
    pub config: CaseConfig,
    pub disc: Arc<Discretization>,
    pub forest: SpanningForest,
    pub tree: TreeFactorization,
}

impl Case {
    pub fn new(config: CaseConfig) -> Result<Self> {
        config.validate()?;
        let mesh = build_structured_unit_square(config.nx, config.ny)?;
        let dual = build_dual_graph(&mesh);
        let bc = config.boundary_spec();
        let forest = build_forest(&mesh, &dual, &bc, config.root_count)?;
        let disc = Arc::new(Discretization::new(mesh, bc));
        let tree = TreeFactorization::new(&disc, &forest)?;
        Ok(Self {
            config,
            disc,
            forest,
            tree,
        })
    }

    pub fn kind(&self) -> CaseKind {
        self.config.case
    }

    fn check(&self, mu: &[f64]) -> Result<()> {
        if mu.len() != 4 {
            return Err(Error::Data(format!("expected 4 parameters, got {}", mu.len())));
        }
        Ok(())
    }

    pub fn body_force(&self, mu: &[f64]) -> impl Fn(Point) -> [f64; 2] + Sync {
        let (kind, a) = (self.kind(), mu[1]);
        let delta = mu[3];
        move |p: Point| match kind {
            CaseKind::Footing => [0.0, -1e-2 * a],
            CaseKind::Hencky => [
                delta * (4.0 * p[1] - 1.0) * (4.0 * p[1] - 3.0),
                delta * (4.0 * p[0] - 1.0) * (4.0 * p[0] - 3.0),
            ],
        }
    }

    pub fn boundary_displacement(&self, mu: &[f64]) -> impl Fn(BoundarySide, Point) -> [f64; 2] + Sync {
        let kind = self.kind();
        let (g_y, gamma) = (mu[0], mu[2]);
        move |side: BoundarySide, p: Point| match kind {
            CaseKind::Footing => match side {
                BoundarySide::Top => [0.0, -1e-3 * g_y],
                _ => [0.0, 0.0],
            },
            CaseKind::Hencky => [0.1 * gamma * p[0] * (1.0 - p[0]), 0.1 * gamma * p[1] * (1.0 - p[1])],
        }
    }

    /// `f_μ`
    pub fn load(&self, mu: &[f64]) -> Vec<f64> {
        self.disc.load(&self.body_force(mu))
    }

    /// `g_h(μ)`
    pub fn boundary_functional(&self, mu: &[f64]) -> Vec<f64> {
        self.disc.boundary_functional(&self.boundary_displacement(mu))
    }

    pub fn hencky_law(&self, mu: &[f64]) -> Result<HenckyVonMises> {
        Ok(HenckyVonMises::new(mu[0], mu[1])?)
    }

    /// `A_h` for the parameters; the Hencky law needs the stress to fix its
    /// cellwise Lamé parameters.
    pub fn compliance(&self, mu: &[f64], sigma: &[f64]) -> Result<CsrMatrix> {
        self.check(mu)?;
        match self.kind() {
            CaseKind::Footing => Ok(self.disc.compliance_uniform(Hooke::new(mu[2], mu[3])?)),
            CaseKind::Hencky => {
                let laws = fom::hencky_laws(&self.disc, &self.hencky_law(mu)?, sigma)?;
                Ok(self.disc.compliance(&laws)?)
            }
        }
    }

    /// Full-order solution.
    pub fn solve(&self, mu: &[f64]) -> Result<SolutionTriplet> {
        self.check(mu)?;
        let f = self.load(mu);
        let g = self.boundary_functional(mu);
        Ok(match self.kind() {
            CaseKind::Footing => {
                let a = self.disc.compliance_uniform(Hooke::new(mu[2], mu[3])?);
                fom::solve_linear(&self.disc, &a, &f, &g)?
            }
            CaseKind::Hencky => fom::solve_hencky(&self.disc, &self.hencky_law(mu)?, &f, &g, &self.config.hencky)?,
        })
    }

    /// `(u, r) = S_Iᵀ(A_h σ − g_h)`.
    pub fn postprocess(&self, mu: &[f64], sigma: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let a = self.compliance(mu, sigma)?;
        let mut phi = a.mul_vec(sigma);
        phi.iter_mut().zip(self.boundary_functional(mu)).for_each(|(p, g)| *p -= g);
        let w = self.tree.apply_si_adjoint(&phi);
        let (u, r) = self.disc.split_multipliers(&w);
        Ok((u.to_vec(), r.to_vec()))
    }

    /// `S_I f_μ`
    pub fn particular_stress(&self, mu: &[f64]) -> Vec<f64> {
        self.tree.apply_si(&self.load(mu))
    }

    /// `S_0 σ`
    pub fn homogeneous_part(&self, sigma: &[f64]) -> Vec<f64> {
        self.tree.apply_s0(&self.disc.b, sigma)
    }
}
