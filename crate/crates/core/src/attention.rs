//! Probe-selective self-attention, cross-field attention and pooling.
//!
//! Attention weights are `A = softmax(H W_a Hᵀ / √d)`. With a real mask `m′`
//! they are rescaled entrywise to `a′_ij = m′_i m′_j a_ij` and deliberately
//! not renormalised, so hot-to-hot interactions outweigh hot-to-cold ones by
//! `α/β`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::params::xavier_uniform;
use crate::numeric::{Graph, Matrix, ParamId, ParamStore, Var};
use crate::probe::{ProbeMask, RealMask};

/// Bilinear self-attention with a residual connection.
#[derive(Clone, Copy, Debug)]
pub struct SelfAttention {
    pub dim: usize,
    pub w_a: ParamId,
    /// Value projection; absent when the residual adds `A′H` directly.
    pub w_v: Option<ParamId>,
}

impl SelfAttention {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        plain_residual: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w_a = store.register(format!("{prefix}.w_a"), xavier_uniform(dim, dim, rng))?;
        let w_v = if plain_residual {
            None
        } else {
            Some(store.register(format!("{prefix}.w_v"), xavier_uniform(dim, dim, rng))?)
        };
        Ok(Self { dim, w_a, w_v })
    }

    pub fn base_attention(&self, g: &mut Graph, h: Var) -> Result<Var> {
        let w = g.param(self.w_a);
        bilinear_softmax(g, h, w, h)
    }

    /// `H + A′ V` where `A′` is the mask-reweighted attention (plain `A` when
    /// `mask` is `None`) and `V = H W_v` (or `H`).
    pub fn attend(&self, g: &mut Graph, h: Var, mask: Option<Var>) -> Result<Var> {
        let a = self.base_attention(g, h)?;
        let a = match mask {
            Some(m) => reweight_var(g, a, m)?,
            None => a,
        };
        let v = match self.w_v {
            Some(id) => {
                let w = g.param(id);
                g.matmul(h, w)?
            }
            None => h,
        };
        let av = g.matmul(a, v)?;
        g.add(h, av)
    }
}

/// `softmax(Q W Kᵀ / √d)` row-wise.
fn bilinear_softmax(g: &mut Graph, q: Var, w: Var, k: Var) -> Result<Var> {
    let d = g.shape(q).1;
    if g.shape(q).0 == 0 || g.shape(k).0 == 0 {
        return Err(Error::Domain("attention over an empty sequence".into()));
    }
    let qw = g.matmul(q, w)?;
    let s = g.matmul_nt(qw, k)?;
    let s = g.scale(s, 1.0 / (d as f64).sqrt());
    g.softmax_rows(s)
}

/// Review-to-product attention, no mask: `H + softmax(H W_c H_pᵀ/√d)(H_p W_u)`.
#[derive(Clone, Copy, Debug)]
pub struct CrossAttention {
    pub dim: usize,
    pub w_c: ParamId,
    pub w_u: ParamId,
}

impl CrossAttention {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            dim,
            w_c: store.register(format!("{prefix}.w_c"), xavier_uniform(dim, dim, rng))?,
            w_u: store.register(format!("{prefix}.w_u"), xavier_uniform(dim, dim, rng))?,
        })
    }

    pub fn weights(&self, g: &mut Graph, h_query: Var, h_keys: Var) -> Result<Var> {
        let w = g.param(self.w_c);
        bilinear_softmax(g, h_query, w, h_keys)
    }

    pub fn attend(&self, g: &mut Graph, h_query: Var, h_keys: Var) -> Result<Var> {
        let a = self.weights(g, h_query, h_keys)?;
        let wu = g.param(self.w_u);
        let v = g.matmul(h_keys, wu)?;
        let av = g.matmul(a, v)?;
        g.add(h_query, av)
    }
}

/// Real mask `α M + β (1 − M)` as an `l x 1` column, differentiable in `β`.
pub fn mask_column(g: &mut Graph, mask: &ProbeMask, alpha: f64, beta: Var) -> Result<Var> {
    let l = mask.len();
    let cold = mask.values.iter().map(|&v| 1.0 - f64::from(v)).collect();
    let hot = mask.values.iter().map(|&v| alpha * f64::from(v)).collect();
    g.scalar_affine(beta, Matrix::new(l, 1, cold)?, &Matrix::new(l, 1, hot)?)
}

/// `A′ = (m mᵀ) ⊙ A` for an `l x 1` mask column `m`.
pub fn reweight_var(g: &mut Graph, a: Var, m: Var) -> Result<Var> {
    let (l, l2) = g.shape(a);
    if g.shape(m) != (l, 1) || l != l2 {
        return Err(Error::Dimension {
            op: "reweight",
            left: (l, l2),
            right: g.shape(m),
        });
    }
    let outer = g.matmul_nt(m, m)?;
    g.mul(outer, a)
}

/// `Σ m_i h_i / Σ m_i` for an `l x 1` weight column.
pub fn masked_pool_var(g: &mut Graph, h: Var, m: Var) -> Result<Var> {
    if g.shape(m) != (g.shape(h).0, 1) {
        return Err(Error::Dimension {
            op: "masked_pool",
            left: g.shape(h),
            right: g.shape(m),
        });
    }
    let mt = g.transpose(m);
    let num = g.matmul(mt, h)?;
    let den = g.sum(m);
    g.div_scalar(num, den)
}

/// Cross-image attention in both directions followed by mean pooling.
/// Returns `(S_v^r, S_v^p)`.
pub fn visual_pipeline(g: &mut Graph, cross: &CrossAttention, h_review: Var, h_product: Var) -> Result<(Var, Var)> {
    let r = cross.attend(g, h_review, h_product)?;
    let p = cross.attend(g, h_product, h_review)?;
    Ok((g.mean_rows(r)?, g.mean_rows(p)?))
}

/// Entrywise `m_i m_j a_ij`.
pub fn reweight(a: &Matrix, m: &RealMask) -> Result<Matrix> {
    let l = m.values.len();
    if a.shape() != (l, l) {
        return Err(Error::Dimension {
            op: "reweight",
            left: a.shape(),
            right: (1, l),
        });
    }
    let outer = crate::numeric::matrix::matmul_nt(&Matrix::new(l, 1, m.values.clone())?, &Matrix::new(l, 1, m.values.clone())?)?;
    Ok(outer.zip_map(a, |x, y| x * y))
}

/// Plain-value form of [`masked_pool_var`].
pub fn masked_pool(h: &Matrix, m: &RealMask) -> Result<Vec<f64>> {
    if h.rows() != m.values.len() {
        return Err(Error::Dimension {
            op: "masked_pool",
            left: h.shape(),
            right: (m.values.len(), 1),
        });
    }
    let total: f64 = m.values.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("mask weights sum to zero".into()));
    }
    let mut out = vec![0.0; h.cols()];
    for (i, &w) in m.values.iter().enumerate() {
        for (o, &x) in out.iter_mut().zip(h.row(i)) {
            *o += w * x;
        }
    }
    Ok(out.into_iter().map(|x| x / total).collect())
}
