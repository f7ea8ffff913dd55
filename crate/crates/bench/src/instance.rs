//! Seeded random instances of the benchmark's quadratic residual family.
//!
//! Each residual component is
//!
//! ```text
//! f_i(x) = ( 1/(2m) ||A_i x||^2 + <b_i, x> )
//!        - ( 1/(2m) ||A_i x*||^2 + <b_i, x*> + gamma_i ),
//! ```
//!
//! over the box `C = [-1, 1]^d`, with `A_i` an `m x d` standard normal
//! matrix, `b_i` standard normal, and `gamma_i ~ N(0, sigma_noise^2)`. With
//! `sigma_noise = 0` the residual vanishes at `x*` exactly, by construction.
//! Each entry of `x*` is `+1` with probability 1/4, `-1` with probability
//! 1/4, and uniform on `[-1, 1]` otherwise, so some box constraints are
//! active at `x*` and others are not.
//!
//! Instances are regenerated from their [`InstanceSpec`]; the seed is the
//! ground truth, and regeneration is bit-identical within one build. Draws
//! come from a ChaCha8 stream seeded with the spec's seed, in a fixed order:
//! `A_1..A_n` row-major, then `b_1..b_n`, then `gamma` (always drawn, scaled
//! by `sigma_noise`), then `x*`, then the start offset `u` (only for
//! [`X0Mode::NearSolution`]).
//!
//! Residual and Jacobian evaluation use two matrix-vector products per
//! component and never materialize `A_i^T A_i`, so one evaluation costs
//! `O(mnd)` time.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use mmlm::{spectral_norm, ConvexSet, ResidualProblem};

use crate::BenchError;

/// How the starting point is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum X0Mode {
    /// `x_0 = 0`.
    Zero,
    /// `x_0 = proj_C(x* + u)` with `u` uniform on `[-radius, radius]^d`.
    NearSolution { radius: f64 },
}

impl X0Mode {
    /// Near-solution start with the default radius 0.1.
    pub fn near_solution() -> Self {
        X0Mode::NearSolution { radius: 0.1 }
    }
}

/// Seeded parameters of one instance; the on-disk instance format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub sigma_noise: f64,
    pub seed: u64,
    pub x0_mode: X0Mode,
}

impl InstanceSpec {
    pub fn new(d: usize, n: usize, m: usize, sigma_noise: f64, seed: u64, x0_mode: X0Mode) -> Self {
        Self {
            d,
            n,
            m,
            sigma_noise,
            seed,
            x0_mode,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.d == 0 || self.n == 0 || self.m == 0 {
            return Err(BenchError::Config(format!(
                "instance dimensions must be positive, got d={} n={} m={}",
                self.d, self.n, self.m
            )));
        }
        if !(self.sigma_noise >= 0.0) {
            return Err(BenchError::Config(format!(
                "sigma_noise must be >= 0, got {}",
                self.sigma_noise
            )));
        }
        if let X0Mode::NearSolution { radius } = self.x0_mode {
            if !(radius >= 0.0) {
                return Err(BenchError::Config(format!(
                    "start radius must be >= 0, got {radius}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let spec: InstanceSpec =
            serde_json::from_str(&text).map_err(|source| BenchError::Json {
                path: path.display().to_string(),
                source,
            })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<(), BenchError> {
        let text = serde_json::to_string_pretty(self).expect("spec serializes");
        fs::write(path, text + "\n").map_err(|source| BenchError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Short tag used in output file names, e.g. `d100_n200_m1_s7`.
    pub fn tag(&self) -> String {
        format!("d{}_n{}_m{}_s{}", self.d, self.n, self.m, self.seed)
    }
}

/// Realized data of an instance.
#[derive(Debug, Clone)]
pub struct InstanceData {
    /// `A_i`, each `m x d`.
    pub a: Vec<DMatrix<f64>>,
    /// `b_i`, each of length `d`.
    pub b: Vec<DVector<f64>>,
    /// Noise vector of length `n`.
    pub gamma: DVector<f64>,
    /// Planted solution in `[-1, 1]^d`.
    pub x_star: DVector<f64>,
}

/// `F(x)` for the instance family. Two matrix-vector products per component,
/// with the work buffers shared across components.
///
/// Evaluated in difference form against the planted solution,
///
/// ```text
/// f_i(x) = 1/(2m) <A_i (x - x*), A_i (x + x*)> + <b_i, x - x*> - gamma_i,
/// ```
///
/// which equals the defining expression exactly but avoids the catastrophic
/// cancellation of subtracting two O(1) quantities near `x*`; the residual
/// stays accurate down to the quadratic convergence tail.
pub fn instance_residual(data: &InstanceData, x: &DVector<f64>) -> DVector<f64> {
    let n = data.a.len();
    let m = data.a[0].nrows();
    let mf = m as f64;
    let dx = x - &data.x_star;
    let sx = x + &data.x_star;
    // Hand-rolled column-major matvecs: the per-component products are tiny
    // (m x d with m often 1), where the generic gemm dispatch overhead
    // would dominate the arithmetic.
    let mut adx = vec![0.0; m];
    let mut asx = vec![0.0; m];
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let a = data.a[i].as_slice();
        adx.fill(0.0);
        asx.fill(0.0);
        for c in 0..dx.len() {
            let col = &a[c * m..(c + 1) * m];
            let (dc, sc) = (dx[c], sx[c]);
            for r in 0..m {
                adx[r] += col[r] * dc;
                asx[r] += col[r] * sc;
            }
        }
        let quad: f64 = adx.iter().zip(&asx).map(|(p, q)| p * q).sum();
        out[i] = 0.5 / mf * quad + data.b[i].dot(&dx) - data.gamma[i];
    }
    out
}

/// `J(x)` for the instance family; row `i` is `(1/m) A_i^T (A_i x) + b_i`.
pub fn instance_jacobian(data: &InstanceData, x: &DVector<f64>) -> DMatrix<f64> {
    let n = data.a.len();
    let d = x.len();
    let m = data.a[0].nrows();
    let mf = m as f64;
    let mut jac = DMatrix::zeros(n, d);
    let mut w = vec![0.0; m];
    for i in 0..n {
        let a = data.a[i].as_slice();
        w.fill(0.0);
        for c in 0..d {
            let col = &a[c * m..(c + 1) * m];
            let xc = x[c];
            for r in 0..m {
                w[r] += col[r] * xc;
            }
        }
        let b = &data.b[i];
        for c in 0..d {
            let col = &a[c * m..(c + 1) * m];
            let mut acc = 0.0;
            for r in 0..m {
                acc += col[r] * w[r];
            }
            jac[(i, c)] = acc / mf + b[c];
        }
    }
    jac
}

/// A realized instance: spec, data, starting point, and the problem handle
/// whose evaluation counters meter the run.
pub struct Instance {
    spec: InstanceSpec,
    data: Arc<InstanceData>,
    x0: DVector<f64>,
    problem: ResidualProblem,
}

impl Instance {
    pub fn spec(&self) -> &InstanceSpec {
        &self.spec
    }

    pub fn data(&self) -> &InstanceData {
        &self.data
    }

    pub fn x_star(&self) -> &DVector<f64> {
        &self.data.x_star
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn problem(&self) -> &ResidualProblem {
        &self.problem
    }

    /// Certified Lipschitz constant of the Jacobian over all of `R^d`:
    /// `J(y) - J(x)` has rows `(1/m) (y - x)^T A_i^T A_i`, so
    /// `sqrt(sum_i ||A_i^T A_i / m||^2)` bounds its spectral norm.
    pub fn certified_jacobian_lipschitz(&self) -> f64 {
        let sum: f64 = self
            .data
            .a
            .iter()
            .map(|a| {
                let m = a.nrows() as f64;
                let sigma_max = spectral_norm(a);
                let op = sigma_max * sigma_max / m;
                op * op
            })
            .sum();
        sum.sqrt()
    }
}

/// Generates the instance determined by `spec`.
pub fn generate_instance(spec: &InstanceSpec) -> Result<Instance, BenchError> {
    spec.validate()?;
    let (d, n, m) = (spec.d, spec.n, spec.m);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let a: Vec<DMatrix<f64>> = (0..n)
        .map(|_| {
            // Row-major fill.
            let mut mat = DMatrix::zeros(m, d);
            for r in 0..m {
                for c in 0..d {
                    mat[(r, c)] = rng.sample(StandardNormal);
                }
            }
            mat
        })
        .collect();
    let b: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_fn(d, |_, _| rng.sample(StandardNormal)))
        .collect();
    // Always consume n normal draws so the stream position does not depend
    // on sigma_noise; scaling by 0 yields exact zeros.
    let gamma = DVector::from_fn(n, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z * spec.sigma_noise
    });
    let x_star = DVector::from_fn(d, |_, _| {
        let c: f64 = rng.random();
        if c < 0.25 {
            1.0
        } else if c < 0.5 {
            -1.0
        } else {
            rng.random_range(-1.0..=1.0)
        }
    });

    let data = Arc::new(InstanceData {
        a,
        b,
        gamma,
        x_star,
    });

    let set = ConvexSet::symmetric_box(d, 1.0)?;
    let x0 = match spec.x0_mode {
        X0Mode::Zero => DVector::zeros(d),
        X0Mode::NearSolution { radius } => {
            let u = DVector::from_fn(d, |_, _| rng.random_range(-radius..=radius));
            set.project(&(&data.x_star + u))
        }
    };

    let res_data = Arc::clone(&data);
    let jac_data = Arc::clone(&data);
    let problem = ResidualProblem::new(
        d,
        n,
        move |x: &DVector<f64>| instance_residual(&res_data, x),
        move |x: &DVector<f64>| instance_jacobian(&jac_data, x),
        set,
    )?;

    Ok(Instance {
        spec: spec.clone(),
        data,
        x0,
        problem,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(d: usize, n: usize, m: usize, sigma: f64, seed: u64) -> InstanceSpec {
        InstanceSpec::new(d, n, m, sigma, seed, X0Mode::Zero)
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let s = InstanceSpec::new(8, 12, 3, 0.1, 42, X0Mode::near_solution());
        let one = generate_instance(&s).unwrap();
        let two = generate_instance(&s).unwrap();
        assert_eq!(one.data().a, two.data().a);
        assert_eq!(one.data().b, two.data().b);
        assert_eq!(one.data().gamma, two.data().gamma);
        assert_eq!(one.data().x_star, two.data().x_star);
        assert_eq!(one.x0(), two.x0());
    }

    #[test]
    fn zero_noise_means_zero_residual_at_solution() {
        let inst = generate_instance(&spec(100, 100, 1, 0.0, 7)).unwrap();
        let f = inst.problem().residual(inst.x_star()).unwrap();
        assert_eq!(f.norm(), 0.0);
    }

    #[test]
    fn solution_has_active_bounds() {
        let inst = generate_instance(&spec(100, 100, 1, 0.0, 3)).unwrap();
        let actives = inst.x_star().iter().filter(|v| v.abs() == 1.0).count();
        assert!(actives > 0, "expected some coordinates at +-1");
        assert!(inst.x_star().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn noise_enters_through_gamma_only() {
        let clean = generate_instance(&spec(6, 5, 2, 0.0, 11)).unwrap();
        let noisy = generate_instance(&spec(6, 5, 2, 0.5, 11)).unwrap();
        // Same stream positions: A, b, x* agree; gamma differs.
        assert_eq!(clean.data().a, noisy.data().a);
        assert_eq!(clean.data().b, noisy.data().b);
        assert_eq!(clean.data().x_star, noisy.data().x_star);
        assert_eq!(clean.data().gamma, DVector::zeros(5));
        assert!(noisy.data().gamma.norm() > 0.0);
    }

    #[test]
    fn different_seeds_differ() {
        let one = generate_instance(&spec(5, 4, 1, 0.0, 1)).unwrap();
        let two = generate_instance(&spec(5, 4, 1, 0.0, 2)).unwrap();
        assert_ne!(one.data().a, two.data().a);
    }

    #[test]
    fn family_shapes_from_the_comparison_protocol() {
        for (d, n, m) in [(10, 20, 1), (10, 20, 100)] {
            let inst = generate_instance(&spec(d, n, m, 0.1, 5)).unwrap();
            assert_eq!(inst.problem().dim_d(), d);
            assert_eq!(inst.problem().dim_n(), n);
            assert_eq!(inst.data().a[0].nrows(), m);
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(spec(0, 1, 1, 0.0, 1).validate().is_err());
        assert!(spec(1, 1, 1, -0.5, 1).validate().is_err());
    }
}
