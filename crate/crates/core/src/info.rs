//! Exact discrete information theory over enumerable joint distributions.
//!
//! Entropies, mutual information, conditional MI and interaction
//! information are computed by direct summation over a dense pmf, in bits.
//! On top of those sit the restoration-specific diagnostics: the
//! conventional and proposed compression objectives, the optimization
//! boundary checks, the data-processing-inequality check for channel
//! chains, and the target-information decomposition identity.
//!
//! Variable-argument functions take *groups* of variable indices, so e.g.
//! the information between (X) and the pair (X~, Y~) is
//! `mutual_info(&j, &[0], &[2, 3])`.

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum InfoError {
    #[error("pmf has {len} entries, variables require {expected}")]
    SizeMismatch { len: usize, expected: usize },
    #[error("pmf entries must be nonnegative and sum to 1 (sum = {sum})")]
    NotNormalized { sum: f64 },
    #[error("joint table would need {cells} cells, cap is {cap}")]
    TableTooLarge { cells: u128, cap: usize },
    #[error("variable index {0} out of range")]
    BadVariable(usize),
    #[error("chain is not Markov: {0}")]
    NotMarkov(String),
}

/// Dense joint pmf over named finite variables.
#[derive(Debug, Clone)]
pub struct DiscreteJoint {
    names: Vec<String>,
    sizes: Vec<usize>,
    pmf: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(names: Vec<String>, sizes: Vec<usize>, pmf: Vec<f64>) -> Result<Self, InfoError> {
        let expected: usize = sizes.iter().product();
        if pmf.len() != expected {
            return Err(InfoError::SizeMismatch { len: pmf.len(), expected });
        }
        let sum: f64 = pmf.iter().sum();
        if pmf.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(InfoError::NotNormalized { sum });
        }
        Ok(DiscreteJoint { names, sizes, pmf })
    }

    /// Normalizes arbitrary nonnegative weights into a pmf.
    pub fn from_weights(names: Vec<String>, sizes: Vec<usize>, weights: Vec<f64>) -> Result<Self, InfoError> {
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 || weights.iter().any(|&w| w < 0.0) {
            return Err(InfoError::NotNormalized { sum });
        }
        let pmf = weights.iter().map(|w| w / sum).collect();
        Self::new(names, sizes, pmf)
    }

    pub fn num_vars(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    fn check_vars(&self, vars: &[usize]) -> Result<(), InfoError> {
        for &v in vars {
            if v >= self.sizes.len() {
                return Err(InfoError::BadVariable(v));
            }
        }
        Ok(())
    }

    /// Exact marginal over a subset of variables (re-normalizes trivially
    /// since marginalization preserves total mass).
    pub fn marginal(&self, vars: &[usize]) -> Result<DiscreteJoint, InfoError> {
        self.check_vars(vars)?;
        let out_sizes: Vec<usize> = vars.iter().map(|&v| self.sizes[v]).collect();
        let out_len: usize = out_sizes.iter().product();
        let mut out = vec![0.0; out_len];
        let n = self.sizes.len();
        let mut idx = vec![0usize; n];
        for (flat, &p) in self.pmf.iter().enumerate() {
            // Decode mixed-radix index (row-major, last variable fastest).
            let mut rem = flat;
            for d in (0..n).rev() {
                idx[d] = rem % self.sizes[d];
                rem /= self.sizes[d];
            }
            let mut of = 0usize;
            for &v in vars {
                of = of * self.sizes[v] + idx[v];
            }
            out[of] += p;
        }
        DiscreteJoint::new(
            vars.iter().map(|&v| self.names[v].clone()).collect(),
            out_sizes,
            out.iter().map(|p| p.max(0.0)).collect(),
        )
    }

    /// Joint entropy H(vars) in bits; 0 log 0 := 0.
    pub fn entropy(&self, vars: &[usize]) -> Result<f64, InfoError> {
        let m = self.marginal(vars)?;
        Ok(m
            .pmf
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.log2())
            .sum())
    }

    /// I(A; B) = H(A) + H(B) - H(A,B) for variable groups A, B.
    pub fn mutual_info(&self, a: &[usize], b: &[usize]) -> Result<f64, InfoError> {
        let ab: Vec<usize> = a.iter().chain(b).copied().collect();
        Ok(self.entropy(a)? + self.entropy(b)? - self.entropy(&ab)?)
    }

    /// I(A; B | C) = H(A,C) + H(B,C) - H(A,B,C) - H(C).
    pub fn cond_mutual_info(&self, a: &[usize], b: &[usize], c: &[usize]) -> Result<f64, InfoError> {
        let ac: Vec<usize> = a.iter().chain(c).copied().collect();
        let bc: Vec<usize> = b.iter().chain(c).copied().collect();
        let abc: Vec<usize> = a.iter().chain(b).chain(c).copied().collect();
        Ok(self.entropy(&ac)? + self.entropy(&bc)? - self.entropy(&abc)? - self.entropy(c)?)
    }

    /// H(A | B) = H(A,B) - H(B).
    pub fn cond_entropy(&self, a: &[usize], b: &[usize]) -> Result<f64, InfoError> {
        let ab: Vec<usize> = a.iter().chain(b).copied().collect();
        Ok(self.entropy(&ab)? - self.entropy(b)?)
    }

    /// Interaction information I(A; B; C) = I(A; B) - I(A; B | C).
    /// Symmetric in its arguments and may be negative (synergy).
    pub fn interaction_info(&self, a: &[usize], b: &[usize], c: &[usize]) -> Result<f64, InfoError> {
        Ok(self.mutual_info(a, b)? - self.cond_mutual_info(a, b, c)?)
    }
}

// ── restoration-specific objectives ─────────────────────────────────
//
// Variable roles follow the restoration flow: X the degraded input, Y the
// clean target, XT the latent representation, YT the restored output. The
// conditional-bar notation of the objectives maps to conditional MI:
// "information of X retained in YT given XT" is I(X; YT | XT), and
// "information of Y added to YT beyond X" is I(Y; YT | X).

/// Conventional compression objective: I(X; XT) - beta * I(Y; XT).
pub fn ib_objective_conventional(
    j: &DiscreteJoint,
    x: &[usize],
    y: &[usize],
    xt: &[usize],
    beta: f64,
) -> Result<f64, InfoError> {
    Ok(j.mutual_info(x, xt)? - beta * j.mutual_info(y, xt)?)
}

/// Proposed three-source objective:
/// I(X; XT; YT) - beta1 * I(X; YT | XT) - beta2 * I(Y; YT | X).
pub fn proposed_objective(
    j: &DiscreteJoint,
    x: &[usize],
    y: &[usize],
    xt: &[usize],
    yt: &[usize],
    beta1: f64,
    beta2: f64,
) -> Result<f64, InfoError> {
    Ok(j.interaction_info(x, xt, yt)? - beta1 * j.cond_mutual_info(x, yt, xt)?
        - beta2 * j.cond_mutual_info(y, yt, x)?)
}

/// One evaluated bound: `slack >= 0` means it holds.
#[derive(Debug, Clone)]
pub struct BoundSlack {
    pub name: &'static str,
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct BoundaryReport {
    pub bounds: Vec<BoundSlack>,
}

impl BoundaryReport {
    pub fn all_hold(&self, tol: f64) -> bool {
        self.bounds.iter().all(|b| b.slack >= -tol)
    }

    pub fn min_slack(&self) -> f64 {
        self.bounds.iter().map(|b| b.slack).fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates the optimization boundaries of the three-source objective plus
/// the latent-entropy ranges on a joint over (X, Y, XT, YT):
///   I(X;XT;YT) >= -H(X|Y)
///   I(X;YT|XT) <= H(X)          (and >= 0)
///   I(Y;YT|X)  <= H(Y|X)
///   -H(XT) <= I(X;XT;YT) <= H(XT)
pub fn boundary_check(
    j: &DiscreteJoint,
    x: &[usize],
    y: &[usize],
    xt: &[usize],
    yt: &[usize],
) -> Result<BoundaryReport, InfoError> {
    let inter = j.interaction_info(x, xt, yt)?;
    let retained = j.cond_mutual_info(x, yt, xt)?;
    let added = j.cond_mutual_info(y, yt, x)?;
    let h_x = j.entropy(x)?;
    let h_xt = j.entropy(xt)?;
    let h_x_given_y = j.cond_entropy(x, y)?;
    let h_y_given_x = j.cond_entropy(y, x)?;
    Ok(BoundaryReport {
        bounds: vec![
            BoundSlack { name: "interaction >= -H(X|Y)", slack: inter + h_x_given_y },
            BoundSlack { name: "retained <= H(X)", slack: h_x - retained },
            BoundSlack { name: "added <= H(Y|X)", slack: h_y_given_x - added },
            BoundSlack { name: "interaction <= H(XT)", slack: h_xt - inter },
            BoundSlack { name: "interaction >= -H(XT)", slack: inter + h_xt },
            BoundSlack { name: "retained >= 0", slack: retained },
        ],
    })
}

#[derive(Debug, Clone)]
pub struct DpiReport {
    pub i_y_x: f64,
    pub i_y_xt: f64,
    pub i_y_yt: f64,
}

impl DpiReport {
    pub fn chain_holds(&self, tol: f64) -> bool {
        self.i_y_x >= self.i_y_xt - tol && self.i_y_xt >= self.i_y_yt - tol
    }
}

/// Data processing inequality along Y -> X -> XT -> YT.
///
/// The precondition verifies Markovity exactly (each later variable is
/// conditionally independent of Y given its predecessor); joints that were
/// not built as channel compositions are rejected.
pub fn dpi_check(
    j: &DiscreteJoint,
    y: &[usize],
    x: &[usize],
    xt: &[usize],
    yt: &[usize],
    markov_tol: f64,
) -> Result<DpiReport, InfoError> {
    let leak1 = j.cond_mutual_info(y, xt, x)?;
    if leak1.abs() > markov_tol {
        return Err(InfoError::NotMarkov(format!("I(Y;XT|X) = {leak1:.3e}")));
    }
    let yx: Vec<usize> = y.iter().chain(x).copied().collect();
    let leak2 = j.cond_mutual_info(&yx, yt, xt)?;
    if leak2.abs() > markov_tol {
        return Err(InfoError::NotMarkov(format!("I(Y,X;YT|XT) = {leak2:.3e}")));
    }
    Ok(DpiReport {
        i_y_x: j.mutual_info(y, x)?,
        i_y_xt: j.mutual_info(y, xt)?,
        i_y_yt: j.mutual_info(y, yt)?,
    })
}

/// Builds the joint of a channel chain Y -> X -> XT -> YT from a source pmf
/// and row-stochastic kernels, guaranteeing Markovity by construction.
pub fn compose_chain(
    p_y: &[f64],
    k_x_given_y: &[Vec<f64>],
    k_xt_given_x: &[Vec<f64>],
    k_yt_given_xt: &[Vec<f64>],
) -> Result<DiscreteJoint, InfoError> {
    let ny = p_y.len();
    let nx = k_x_given_y[0].len();
    let nxt = k_xt_given_x[0].len();
    let nyt = k_yt_given_xt[0].len();
    let mut pmf = vec![0.0; ny * nx * nxt * nyt];
    for (yi, &py) in p_y.iter().enumerate() {
        for xi in 0..nx {
            let pxy = py * k_x_given_y[yi][xi];
            for xti in 0..nxt {
                let pxt = pxy * k_xt_given_x[xi][xti];
                for yti in 0..nyt {
                    pmf[((yi * nx + xi) * nxt + xti) * nyt + yti] = pxt * k_yt_given_xt[xti][yti];
                }
            }
        }
    }
    DiscreteJoint::new(
        vec!["Y".into(), "X".into(), "XT".into(), "YT".into()],
        vec![ny, nx, nxt, nyt],
        pmf,
    )
}

#[derive(Debug, Clone)]
pub struct DecompositionReport {
    pub i_y_yt: f64,
    pub interaction: f64,
    pub conditional: f64,
}

impl DecompositionReport {
    pub fn residual(&self) -> f64 {
        self.i_y_yt - self.interaction - self.conditional
    }
}

/// Target-information decomposition I(Y;YT) = I(Y;X;YT) + I(Y;YT|X).
///
/// The interaction term is computed through the (Y;X) pairing, so the
/// residual check exercises a genuinely different expansion than the
/// definitional one.
pub fn loss_decomposition_check(
    j: &DiscreteJoint,
    y: &[usize],
    x: &[usize],
    yt: &[usize],
) -> Result<DecompositionReport, InfoError> {
    Ok(DecompositionReport {
        i_y_yt: j.mutual_info(y, yt)?,
        interaction: j.mutual_info(y, x)? - j.cond_mutual_info(y, x, yt)?,
        conditional: j.cond_mutual_info(y, yt, x)?,
    })
}

// ── quantization bridge from tensors ────────────────────────────────

pub const JOINT_CELL_CAP: usize = 1 << 24;

/// One named variable: per-sample scalar vectors, all the same length.
pub struct VariableSamples<'a> {
    pub name: &'a str,
    pub samples: Vec<Vec<f64>>,
}

/// Extracts a small per-sample feature vector from an image tensor by
/// average-pooling down to at most `grid x grid` cells (channel mean).
pub fn pool_features(img: &Tensor, grid: usize) -> Vec<f64> {
    let (_, c, h, w) = img.dims4().expect("image tensor");
    let gh = grid.min(h);
    let gw = grid.min(w);
    let mut out = vec![0.0; gh * gw];
    let mut counts = vec![0usize; gh * gw];
    let plane = h * w;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let cell = (y * gh / h) * gw + (x * gw / w);
                out[cell] += img.data()[ch * plane + y * w + x];
                counts[cell] += 1;
            }
        }
    }
    for (o, &n) in out.iter_mut().zip(counts.iter()) {
        *o /= n as f64;
    }
    out
}

/// Uniform per-scalar binning into `bins` levels over the sample range,
/// then an empirical joint over the resulting symbols.
pub fn quantize_activations(vars: &[VariableSamples], bins: usize) -> Result<DiscreteJoint, InfoError> {
    assert!(!vars.is_empty() && bins >= 1);
    let n_samples = vars[0].samples.len();
    for v in vars {
        assert_eq!(v.samples.len(), n_samples, "sample count mismatch");
    }

    // Alphabet per variable = bins^dim, capped.
    let mut sizes = Vec::with_capacity(vars.len());
    let mut cells: u128 = 1;
    for v in vars {
        let dim = v.samples[0].len();
        let alphabet = (bins as u128).pow(dim as u32);
        cells = cells.saturating_mul(alphabet);
        if cells > JOINT_CELL_CAP as u128 {
            return Err(InfoError::TableTooLarge { cells, cap: JOINT_CELL_CAP });
        }
        sizes.push(alphabet as usize);
    }

    // Per-scalar ranges.
    let symbolize = |v: &VariableSamples| -> Vec<usize> {
        let dim = v.samples[0].len();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for s in &v.samples {
            for (d, &val) in s.iter().enumerate() {
                lo[d] = lo[d].min(val);
                hi[d] = hi[d].max(val);
            }
        }
        v.samples
            .iter()
            .map(|s| {
                let mut sym = 0usize;
                for (d, &val) in s.iter().enumerate() {
                    let span = hi[d] - lo[d];
                    let b = if span <= 0.0 {
                        0
                    } else {
                        (((val - lo[d]) / span * bins as f64) as usize).min(bins - 1)
                    };
                    sym = sym * bins + b;
                }
                sym
            })
            .collect()
    };
    let symbols: Vec<Vec<usize>> = vars.iter().map(symbolize).collect();

    let total: usize = sizes.iter().product();
    let mut weights = vec![0.0; total];
    for s in 0..n_samples {
        let mut flat = 0usize;
        for (v, size) in symbols.iter().zip(sizes.iter()) {
            flat = flat * size + v[s];
        }
        weights[flat] += 1.0;
    }
    DiscreteJoint::from_weights(vars.iter().map(|v| v.name.to_string()).collect(), sizes, weights)
}
