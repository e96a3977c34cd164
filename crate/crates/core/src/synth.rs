//! Synthetic loss surfaces with known ground truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Domain, GridSpec, Measurement, TokenScale};
use crate::error::{Error, Result};
use crate::law::{EvalPoint, Law, LawForm, LawParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub law: Law,
    pub grid: GridSpec,
    /// Standard deviation of Gaussian noise added to `ln loss`.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    pub domain: Domain,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        self.law.params.validate_for(self.law.form)?;
        self.grid.validate()?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        self.noise_sigma = sigma;
        self.seed = seed;
        self
    }
}

/// Ground truth used by the default fixture: a gated-plus-floor surface of
/// plausible magnitude for sub-10B decoders (losses roughly 1.7 to 2.7 nats).
pub fn fixture_params() -> LawParams {
    LawParams {
        e: 1.43,
        a: 60.0,
        alpha: 0.28,
        b: 8.0,
        beta: 0.3,
        nu: 0.3,
        c: 0.02,
        gamma: 0.4,
        f: 3.0,
        eta: 0.6,
        lambda: 0.5,
        zeta: 0.8,
    }
}

/// Ground truth of the source-domain fixture: an additive-floor surface whose
/// losses sit a little above the target fixture's.
pub fn source_fixture_params() -> LawParams {
    LawParams {
        e: 1.7,
        a: 60.0,
        alpha: 0.28,
        b: 20.0,
        beta: 0.3,
        nu: 0.3,
        c: 0.01,
        gamma: 0.5,
        f: 1.0,
        eta: 0.5,
        ..LawParams::default()
    }
}

/// Sixteen log-spaced tokens-per-parameter points spanning 0.5 to 50.
pub fn default_atpp_points() -> Vec<f64> {
    (0..16).map(|k| 0.5 * 100f64.powf(k as f64 / 15.0)).collect()
}

/// Four model sizes x three replay ratios x three stages x sixteen token budgets.
pub fn paper_default_spec() -> SynthSpec {
    SynthSpec {
        law: Law {
            form: LawForm::GatedPlusFloor,
            params: fixture_params(),
        },
        grid: GridSpec {
            model_sizes: vec![2.41e8, 5.17e8, 1.4e9, 8.1e9],
            replay_ratios: vec![0.10, 0.25, 0.50],
            ptpp_stages: vec![15.0, 31.0, 279.0],
            token_points: default_atpp_points(),
            token_scale: TokenScale::PerParameter,
        },
        noise_sigma: 0.0,
        seed: 0,
        domain: Domain::Target,
    }
}

/// Same axes as [`paper_default_spec`], source domain, additive-floor truth.
pub fn source_default_spec() -> SynthSpec {
    SynthSpec {
        law: Law {
            form: LawForm::AdditiveFloor,
            params: source_fixture_params(),
        },
        domain: Domain::Source,
        ..paper_default_spec()
    }
}

/// One measurement per grid point, ordered by size, stage, ratio, then tokens.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let g = &spec.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(
        g.model_sizes.len() * g.ptpp_stages.len() * g.replay_ratios.len() * g.token_points.len(),
    );
    for &n in &g.model_sizes {
        for &ptpp in &g.ptpp_stages {
            for &r in &g.replay_ratios {
                for &tp in &g.token_points {
                    let d = g.tokens_at(tp, n);
                    let x = EvalPoint::new(n, d, r, ptpp)?;
                    let clean = spec.law.eval(&x);
                    let loss = if spec.noise_sigma > 0.0 {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (clean.ln() + spec.noise_sigma * z).exp()
                    } else {
                        clean
                    };
                    out.push(Measurement::new(n, d, r, ptpp, spec.domain, loss, false)?);
                }
            }
        }
    }
    Dataset::new(out, format!("synthetic:{}:seed={}", spec.law.form, spec.seed))
}
