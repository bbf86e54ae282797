use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// How the summed absolute cross-model cosine similarities are scaled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrthNormalization {
    /// Divide the per-sample sum by the number of summed entries.
    #[default]
    MeanOffDiag,
    /// Per-sample sum, averaged over the batch only.
    RawSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthOptions {
    pub normalization: OrthNormalization,
    /// Also penalise `|cos(deco_i, base_i)|`.
    pub include_diagonal: bool,
    /// Lower bound on the norm product in the cosine denominator.
    pub epsilon: f64,
}

impl Default for OrthOptions {
    fn default() -> Self {
        OrthOptions {
            normalization: OrthNormalization::MeanOffDiag,
            include_diagonal: false,
            epsilon: 1e-8,
        }
    }
}

/// Feature-orthogonality penalty between two `[B, C, T]` feature maps.
///
/// Per sample, the `C x C` matrix of cosine similarities between channel
/// rows of `deco` and channel rows of `base` is built and the absolute
/// off-diagonal entries are summed. The result is averaged over the batch.
pub fn orthogonality_loss(g: &mut Graph, deco: Var, base: Var, opts: &OrthOptions) -> Result<Var> {
    let (sa, sb) = (g.value(deco).shape().to_vec(), g.value(base).shape().to_vec());
    if sa != sb || sa.len() != 3 {
        return Err(Error::Dimension(format!(
            "orthogonality loss needs equal [B, C, T] features, got {sa:?} and {sb:?}"
        )));
    }
    let c = sa[1];
    let sim = g.cosine_similarity_matrix(deco, base, opts.epsilon)?;
    let per_sample = g.offdiag_abs_sum(sim, opts.include_diagonal)?;
    let batch_mean = g.mean(per_sample);
    Ok(match opts.normalization {
        OrthNormalization::RawSum => batch_mean,
        OrthNormalization::MeanOffDiag => {
            let entries = if opts.include_diagonal { c * c } else { c * (c - 1) };
            // C = 1 without the diagonal has nothing to average.
            let factor = if entries == 0 { 0.0 } else { 1.0 / entries as f64 };
            g.scale(batch_mean, factor)
        }
    })
}

/// Mean of [`orthogonality_loss`] against every previous model's features.
pub fn sequential_orth_loss(g: &mut Graph, new: Var, previous: &[Var], opts: &OrthOptions) -> Result<Var> {
    let Some((&first, rest)) = previous.split_first() else {
        return Err(Error::Usage("sequential orthogonality loss needs at least one previous model".into()));
    };
    let mut acc = orthogonality_loss(g, new, first, opts)?;
    if rest.is_empty() {
        return Ok(acc);
    }
    for &p in rest {
        let term = orthogonality_loss(g, new, p, opts)?;
        acc = g.add(acc, term)?;
    }
    Ok(g.scale(acc, 1.0 / previous.len() as f64))
}

/// `alpha * ce + (1 - alpha) * orth`.
pub fn total_loss(g: &mut Graph, ce: Var, orth: Var, alpha: f64) -> Result<Var> {
    check_alpha(alpha)?;
    let a = g.scale(ce, alpha);
    let b = g.scale(orth, 1.0 - alpha);
    g.add(a, b)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// Value-only [`orthogonality_loss`] on plain tensors.
pub fn orthogonality_loss_value(deco: &Tensor, base: &Tensor, opts: &OrthOptions) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(deco.clone())?;
    let b = g.constant(base.clone())?;
    let l = orthogonality_loss(&mut g, a, b, opts)?;
    g.value(l).item()
}
