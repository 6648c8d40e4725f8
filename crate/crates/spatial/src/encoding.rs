//! Learnable spatial encodings.
//!
//! * structure encoding `B[i, j, k] = N(α_ij·φ_ij + β_ij − μ_k; 0, σ_k)`
//! * centrality `c = e·W_E` with `e[i, k] = Σ_j B[i, j, k]`
//! * region embedding `r_i = table[tag(i)]`
//! * attention bias `B' = MLP(B)`, a per-pair `K → K → M` perceptron

use std::f64::consts::PI;

use numkit::init::xavier_uniform;
use numkit::{CustomOp, ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::Result;
use crate::layout::{pairwise_distances, ElectrodeLayout};
use crate::scheme::RegionScheme;

/// Lower clamp applied to every `σ_k` before use.
pub const SIGMA_MIN: f64 = 1e-2;

struct GaussianBasisOp {
    n: usize,
    k: usize,
}

impl GaussianBasisOp {
    /// Returns `(x, s, G)` for pair `p` and basis `k`.
    fn eval(&self, ins: &[&[f64]], p: usize, k: usize) -> (f64, f64, f64) {
        let (mu, sigma, alpha, beta, dist) = (ins[0], ins[1], ins[2], ins[3], ins[4]);
        let s = sigma[k].max(SIGMA_MIN);
        let x = alpha[p] * dist[p] + beta[p] - mu[k];
        let g = (-x * x / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt());
        (x, s, g)
    }
}

impl CustomOp for GaussianBasisOp {
    fn name(&self) -> &'static str {
        "gaussian_basis"
    }

    fn backward(&self, ins: &[&[f64]], _out: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (n, kk) = (self.n, self.k);
        let (sigma, dist) = (ins[1], ins[4]);
        let mut d_mu = vec![0.0; kk];
        let mut d_sigma = vec![0.0; kk];
        let mut d_alpha = vec![0.0; n * n];
        let mut d_beta = vec![0.0; n * n];
        for p in 0..n * n {
            for k in 0..kk {
                let gout = grad[p * kk + k];
                if gout == 0.0 {
                    continue;
                }
                let (x, s, g) = self.eval(ins, p, k);
                // dG/dx = −x/s²·G, dG/ds = G·(x²/s³ − 1/s)
                let dx = -x / (s * s) * g * gout;
                d_alpha[p] += dx * dist[p];
                d_beta[p] += dx;
                d_mu[k] -= dx;
                if sigma[k] >= SIGMA_MIN {
                    d_sigma[k] += gout * g * (x * x / (s * s * s) - 1.0 / s);
                }
            }
        }
        vec![Some(d_mu), Some(d_sigma), Some(d_alpha), Some(d_beta), None]
    }
}

/// Structure encoding `B ∈ ℝ^{n×n×K}` from basis parameters and the
/// distance matrix. `mu`, `sigma` are `[K]`; `alpha`, `beta`, `dist` are
/// `[n × n]`. The distance matrix receives no gradient.
pub fn gaussian_basis(
    tape: &mut Tape,
    mu: Var,
    sigma: Var,
    alpha: Var,
    beta: Var,
    dist: Var,
) -> Result<Var> {
    let k = tape.shape(mu).iter().product::<usize>();
    let ds = tape.shape(dist).to_vec();
    if ds.len() != 2 || ds[0] != ds[1] {
        return Err(numkit::NumError::Shape {
            op: "gaussian_basis",
            lhs: ds,
            rhs: vec![],
        }
        .into());
    }
    let n = ds[0];
    for (v, want) in [(sigma, vec![k]), (alpha, vec![n, n]), (beta, vec![n, n])] {
        if tape.shape(v) != want.as_slice() {
            return Err(numkit::NumError::Shape {
                op: "gaussian_basis",
                lhs: tape.shape(v).to_vec(),
                rhs: want,
            }
            .into());
        }
    }
    let op = GaussianBasisOp { n, k };
    let ins = [
        tape.value(mu),
        tape.value(sigma),
        tape.value(alpha),
        tape.value(beta),
        tape.value(dist),
    ];
    let mut out = vec![0.0; n * n * k];
    for p in 0..n * n {
        for kk in 0..k {
            out[p * k + kk] = op.eval(&ins, p, kk).2;
        }
    }
    Ok(tape.custom(
        Box::new(op),
        &[mu, sigma, alpha, beta, dist],
        vec![n, n, k],
        out,
    )?)
}

/// `c = e·W_E` where `e[i, k] = Σ_j B[i, j, k]` sums over the target index.
pub fn centrality_encoding(tape: &mut Tape, b: Var, w_e: Var) -> Result<Var> {
    let e = tape.sum_axis(b, 1)?;
    Ok(tape.matmul(e, w_e)?)
}

/// `r[i] = table[tag_index[i]]`.
pub fn region_encoding(tape: &mut Tape, table: Var, tag_index: &[usize]) -> Result<Var> {
    Ok(tape.index_rows(table, tag_index)?)
}

/// Per-pair perceptron `K → K (GELU) → M` with weights shared by all pairs.
pub fn bias_projection(
    tape: &mut Tape,
    b: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
) -> Result<Var> {
    let s = tape.shape(b).to_vec();
    if s.len() != 3 {
        return Err(numkit::NumError::Shape {
            op: "bias_projection",
            lhs: s,
            rhs: vec![],
        }
        .into());
    }
    let (n, m) = (s[0], tape.shape(w2)[1]);
    let flat = tape.reshape(b, &[s[0] * s[1], s[2]])?;
    let h = tape.matmul(flat, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.gelu(h);
    let o = tape.matmul(h, w2)?;
    let o = tape.add_row(o, b2)?;
    Ok(tape.reshape(o, &[n, s[1], m])?)
}

/// Learnable Gaussian basis parameters.
#[derive(Clone, Copy, Debug)]
pub struct GaussianBasisBank {
    pub mu: ParamId,
    pub sigma: ParamId,
    pub alpha: ParamId,
    pub beta: ParamId,
    pub k: usize,
}

impl GaussianBasisBank {
    /// `μ` spaced evenly over `[0, max φ]`, `σ` equal to that spacing,
    /// `α = 1`, `β = 0`.
    pub fn register(store: &mut ParamStore, prefix: &str, dist: &[f64], n: usize, k: usize) -> Result<Self> {
        let max = dist.iter().copied().fold(0.0, f64::max);
        let spacing = if k > 1 { max / (k - 1) as f64 } else { max };
        let spacing = spacing.max(SIGMA_MIN);
        let mu = (0..k).map(|i| i as f64 * spacing).collect();
        let mu = if k > 1 { mu } else { vec![max / 2.0] };
        Ok(GaussianBasisBank {
            mu: store.insert(format!("{prefix}.mu"), Tensor::new(vec![k], mu)?)?,
            sigma: store.insert(format!("{prefix}.sigma"), Tensor::full(&[k], spacing))?,
            alpha: store.insert(format!("{prefix}.alpha"), Tensor::ones(&[n, n]))?,
            beta: store.insert(format!("{prefix}.beta"), Tensor::zeros(&[n, n]))?,
            k,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, dist: Var) -> Result<Var> {
        let mu = tape.param(store, self.mu);
        let sigma = tape.param(store, self.sigma);
        let alpha = tape.param(store, self.alpha);
        let beta = tape.param(store, self.beta);
        gaussian_basis(tape, mu, sigma, alpha, beta, dist)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ProjectionParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl ProjectionParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        k: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(ProjectionParams {
            w1: store.insert(format!("{prefix}.w1"), xavier_uniform(rng, k, k))?,
            b1: store.insert(format!("{prefix}.b1"), Tensor::zeros(&[k]))?,
            w2: store.insert(format!("{prefix}.w2"), xavier_uniform(rng, k, heads))?,
            b2: store.insert(format!("{prefix}.b2"), Tensor::zeros(&[heads]))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, b: Var) -> Result<Var> {
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        bias_projection(tape, b, w1, b1, w2, b2)
    }
}

/// Every spatial parameter of the model plus the fixed geometry it reads.
#[derive(Clone, Debug)]
pub struct SpatialParams {
    pub basis: GaussianBasisBank,
    pub edge_projection: ParamId,
    pub region_table: ParamId,
    pub projection: ProjectionParams,
    tag_index: Vec<usize>,
    dist: Vec<f64>,
    n: usize,
}

/// Encodings produced for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SpatialVars {
    pub structure: Var,
    pub centrality: Var,
    pub region: Var,
    pub bias: Var,
}

impl SpatialParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        layout: &ElectrodeLayout,
        scheme: &RegionScheme,
        k: usize,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let tag_index = scheme.tag_indices(layout)?;
        let dist = pairwise_distances(layout);
        let n = layout.len();
        let basis = GaussianBasisBank::register(store, "spatial.basis", &dist, n, k)?;
        let edge_projection = store.insert("spatial.edge_projection", xavier_uniform(rng, k, d))?;
        let region_table =
            store.insert("spatial.region_table", xavier_uniform(rng, scheme.n_regions(), d))?;
        let projection = ProjectionParams::register(store, "spatial.projection", k, heads, rng)?;
        Ok(SpatialParams {
            basis,
            edge_projection,
            region_table,
            projection,
            tag_index,
            dist,
            n,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn tag_index(&self) -> &[usize] {
        &self.tag_index
    }

    pub fn distances(&self) -> &[f64] {
        &self.dist
    }

    /// Structure encoding, centrality, region embedding and attention bias.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore) -> Result<SpatialVars> {
        let dist = tape.constant(&[self.n, self.n], self.dist.clone())?;
        let structure = self.basis.forward(tape, store, dist)?;
        let w_e = tape.param(store, self.edge_projection);
        let centrality = centrality_encoding(tape, structure, w_e)?;
        let table = tape.param(store, self.region_table);
        let region = region_encoding(tape, table, &self.tag_index)?;
        let bias = self.projection.forward(tape, store, structure)?;
        Ok(SpatialVars {
            structure,
            centrality,
            region,
            bias,
        })
    }
}
