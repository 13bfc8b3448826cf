//! Synthetic instance generation.
//!
//! Base draw: model matrix entries i.i.d. centered Gaussian with standard
//! deviation `x_sd`, true coefficients all ones, response `y = X 1 + eps`
//! with `eps` i.i.d. centered Gaussian of standard deviation `noise_sd`.
//! A fraction `pi` of the samples is then contaminated:
//!
//! * scheme A shifts the first covariate of the chosen samples by `shift`;
//! * scheme B splits the chosen samples as evenly as possible (extra one to
//!   the covariate half), shifting covariates for one half and responses for
//!   the other.
//!
//! The stock `N(0,100)` / `N(0,10)` parameterizations are read as variances,
//! hence the defaults `x_sd = 10` and `noise_sd = sqrt(10)`; both are plain
//! fields for callers who want the other reading.

use crate::data::{Dataset, QuantileSpec};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    A,
    B,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::A => write!(f, "A"),
            Scheme::B => write!(f, "B"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    /// Contamination fraction in [0, 1]; exactly `floor(pi * n)` samples
    /// are contaminated.
    pub pi: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub noise_sd: f64,
    pub x_sd: f64,
    pub shift: f64,
    /// Prepend an all-ones column (the contamination still targets the
    /// first Gaussian covariate).
    pub intercept: bool,
}

impl SyntheticSpec {
    pub fn new(n: usize, p: usize, pi: f64, scheme: Scheme, seed: u64) -> Result<SyntheticSpec> {
        let spec = SyntheticSpec {
            n,
            p,
            pi,
            scheme,
            seed,
            noise_sd: 10f64.sqrt(),
            x_sd: 10.0,
            shift: 1000.0,
            intercept: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pi) {
            return Err(Error::invalid("pi must lie in [0, 1]"));
        }
        if self.n <= self.p {
            return Err(Error::invalid("need n > p"));
        }
        if self.p == 0 {
            return Err(Error::invalid("need p >= 1"));
        }
        if self.noise_sd < 0.0 || self.x_sd < 0.0 {
            return Err(Error::invalid("standard deviations must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedInstance {
    pub data: Dataset,
    pub true_beta: DVector<f64>,
    /// Sorted indices of contaminated samples.
    pub contaminated_ids: Vec<usize>,
}

pub fn generate(spec: &SyntheticSpec) -> Result<GeneratedInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let p_total = spec.p + usize::from(spec.intercept);
    let first_gauss = usize::from(spec.intercept);
    let x_dist = Normal::new(0.0, spec.x_sd).map_err(|e| Error::Numerical(e.to_string()))?;
    let eps_dist = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::Numerical(e.to_string()))?;

    // Draw order is fixed: X row by row, then noise, then the contaminated set.
    let mut x = DMatrix::zeros(n, p_total);
    for i in 0..n {
        if spec.intercept {
            x[(i, 0)] = 1.0;
        }
        for j in first_gauss..p_total {
            x[(i, j)] = x_dist.sample(&mut rng);
        }
    }
    let true_beta = DVector::from_element(p_total, 1.0);
    let mut y = &x * &true_beta;
    for i in 0..n {
        y[i] += eps_dist.sample(&mut rng);
    }

    let k = (spec.pi * n as f64).floor() as usize;
    let chosen = rand::seq::index::sample(&mut rng, n, k).into_vec();
    match spec.scheme {
        Scheme::A => {
            for &i in &chosen {
                x[(i, first_gauss)] += spec.shift;
            }
        }
        Scheme::B => {
            let cov_half = k.div_ceil(2);
            for &i in &chosen[..cov_half] {
                x[(i, first_gauss)] += spec.shift;
            }
            for &i in &chosen[cov_half..] {
                y[i] += spec.shift;
            }
        }
    }
    // y keeps its clean value for covariate-shifted samples: those rows
    // become leverage outliers, not response outliers.
    let mut contaminated_ids = chosen;
    contaminated_ids.sort_unstable();
    let data = Dataset::new(y, x)?;
    Ok(GeneratedInstance { data, true_beta, contaminated_ids })
}

/// The named example sizes, `(n, p, pi, scheme, q)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NamedExample {
    Ex1,
    Ex2,
    Ex3,
    Ex4,
    Ex5,
    Ex6,
    Ex7,
}

impl NamedExample {
    pub fn params(self) -> (usize, usize, f64, Scheme, usize) {
        match self {
            NamedExample::Ex1 => (201, 5, 0.4, Scheme::B, 121),
            NamedExample::Ex2 => (201, 10, 0.5, Scheme::B, 101),
            NamedExample::Ex3 => (501, 5, 0.4, Scheme::A, 301),
            NamedExample::Ex4 => (501, 10, 0.4, Scheme::A, 301),
            NamedExample::Ex5 => (2001, 10, 0.4, Scheme::B, 1201),
            NamedExample::Ex6 => (5001, 10, 0.4, Scheme::B, 3001),
            NamedExample::Ex7 => (10001, 20, 0.4, Scheme::B, 6001),
        }
    }

    pub fn all() -> [NamedExample; 7] {
        use NamedExample::*;
        [Ex1, Ex2, Ex3, Ex4, Ex5, Ex6, Ex7]
    }
}

impl std::str::FromStr for NamedExample {
    type Err = Error;

    fn from_str(s: &str) -> Result<NamedExample> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "ex1" => Ok(NamedExample::Ex1),
            "ex2" => Ok(NamedExample::Ex2),
            "ex3" => Ok(NamedExample::Ex3),
            "ex4" => Ok(NamedExample::Ex4),
            "ex5" => Ok(NamedExample::Ex5),
            "ex6" => Ok(NamedExample::Ex6),
            "ex7" => Ok(NamedExample::Ex7),
            _ => Err(Error::invalid(format!("unknown example name: {s}"))),
        }
    }
}

impl std::fmt::Display for NamedExample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Ex{}", *self as u8 + 1)
    }
}

#[derive(Clone, Debug)]
pub struct ExampleMeta {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub pi: f64,
    pub scheme: Scheme,
    pub q: usize,
    pub scale: u32,
}

/// Scale an example size down by an integer divisor: `n` is divided and
/// bumped to the next odd value above `p`, `q` is divided and clamped.
fn scaled_sizes(n: usize, p: usize, q: usize, divisor: u32) -> (usize, usize) {
    let d = divisor.max(1) as usize;
    let mut n_scaled = (n / d).max(1);
    if n_scaled % 2 == 0 {
        n_scaled += 1;
    }
    while n_scaled <= p {
        n_scaled += 2;
    }
    let q_scaled = (q / d).clamp(1, n_scaled);
    (n_scaled, q_scaled)
}

/// Instantiate a named example, optionally scaled down by `divisor`.
pub fn named_example(
    name: NamedExample,
    divisor: Option<u32>,
    seed: u64,
) -> Result<(GeneratedInstance, QuantileSpec, ExampleMeta)> {
    let (n, p, pi, scheme, q) = name.params();
    let divisor = divisor.unwrap_or(1);
    let (n_scaled, q_scaled) = scaled_sizes(n, p, q, divisor);
    let spec = SyntheticSpec::new(n_scaled, p, pi, scheme, seed)?;
    let instance = generate(&spec)?;
    let quantile = QuantileSpec::new(q_scaled, n_scaled)?;
    let meta = ExampleMeta {
        name: name.to_string(),
        n: n_scaled,
        p,
        pi,
        scheme,
        q: q_scaled,
        scale: divisor,
    };
    Ok((instance, quantile, meta))
}
