use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Rows must be unit-norm within this tolerance.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

fn check_unit_rows(z: &Tensor) -> Result<()> {
    for r in 0..z.rows() {
        let norm = z.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm.is_nan() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NotUnitNorm { row: r, norm });
        }
    }
    Ok(())
}

fn check_pair(zs: &Tensor, zm: &Tensor) -> Result<()> {
    if zs.shape().len() != 2 || zs.shape() != zm.shape() {
        return Err(Error::shape("alignment", zs.shape(), zm.shape()));
    }
    Ok(())
}

/// `S[i][j] = ⟨zs_i, zm_j⟩` for unit-norm rows.
pub fn cosine_similarity_matrix(zs: &Tensor, zm: &Tensor) -> Result<Tensor> {
    if zs.shape().len() != 2 || zm.shape().len() != 2 || zs.cols() != zm.cols() {
        return Err(Error::shape("cosine_similarity_matrix", zs.shape(), zm.shape()));
    }
    check_unit_rows(zs)?;
    check_unit_rows(zm)?;
    let mut g = Graph::new();
    let a = g.leaf_ref(zs, false);
    let b = g.leaf_ref(zm, false);
    let s = g.matmul_nt(a, b)?;
    Ok(g.value(s).detached())
}

/// Spectrum-to-molecule InfoNCE on the graph:
/// `−(1/N) Σ_i log softmax_j(⟨zs_i, zm_j⟩ / τ)_i`.
pub fn info_nce<'a>(g: &mut Graph<'a>, zs: Var, zm: Var, tau: f64) -> Result<Var> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    let n = g.value(zs).rows();
    if n < 2 {
        return Err(Error::InvalidArgument("InfoNCE needs at least 2 pairs".into()));
    }
    let s = g.matmul_nt(zs, zm)?;
    let logits = g.scale(s, 1.0 / tau);
    let logp = g.log_softmax_rows(logits)?;
    let d = g.diag(logp)?;
    let m = g.mean(d);
    Ok(g.scale(m, -1.0))
}

/// Mean over all entries of `(zs − zm)²`.
pub fn mse_alignment<'a>(g: &mut Graph<'a>, zs: Var, zm: Var) -> Result<Var> {
    let diff = g.sub(zs, zm)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean(sq))
}

pub fn info_nce_loss(zs: &Tensor, zm: &Tensor, tau: f64) -> Result<f64> {
    check_pair(zs, zm)?;
    check_unit_rows(zs)?;
    check_unit_rows(zm)?;
    let mut g = Graph::new();
    let a = g.leaf_ref(zs, false);
    let b = g.leaf_ref(zm, false);
    let l = info_nce(&mut g, a, b, tau)?;
    Ok(g.value(l).item())
}

pub fn mse_alignment_loss(zs: &Tensor, zm: &Tensor) -> Result<f64> {
    check_pair(zs, zm)?;
    let mut g = Graph::new();
    let a = g.leaf_ref(zs, false);
    let b = g.leaf_ref(zm, false);
    let l = mse_alignment(&mut g, a, b)?;
    Ok(g.value(l).item())
}
