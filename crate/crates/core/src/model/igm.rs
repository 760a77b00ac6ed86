//! Illumination-guided modulation block.
//!
//! ```text
//! F_norm  = LayerNorm_c(F_in)
//! A_self  = σ(W_p · Σ_k DWConv_k(F_norm))
//! A_guide = σ(W_2 · act(W_1 · M))
//! F_mod   = (A_self + A_guide) ⊙ F_norm
//! out     = F_in + F_mod + FFN(F_mod)
//! ```

use gtfmn_tensor::{Element, Var};
use rand::Rng;

use super::layers::{ChannelNorm, Conv};
use super::params::{BoundParams, ParamStore};
use crate::config::GtfmnConfig;
use crate::error::{GtfmnError, Result};

#[derive(Debug, Clone)]
pub(crate) struct IgmBlock {
    norm: ChannelNorm,
    branches: Vec<Conv>,
    project: Conv,
    ffn_expand: Conv,
    ffn_reduce: Conv,
    adapter: Option<[Conv; 2]>,
    slope: f64,
}

/// Every intermediate of one block evaluation.
pub struct BlockTrace<'t, T: Element> {
    pub normalized: Var<'t, T>,
    pub self_attention: Var<'t, T>,
    pub guide_attention: Option<Var<'t, T>>,
    pub attention: Var<'t, T>,
    pub modulated: Var<'t, T>,
    pub output: Var<'t, T>,
}

impl IgmBlock {
    pub(crate) fn new<T: Element>(
        store: &mut ParamStore<T>,
        cfg: &GtfmnConfig,
        index: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let c = cfg.width;
        let e = cfg.ffn_expansion * c;
        let prefix = format!("blocks.{index}");
        let norm = ChannelNorm::new(store, &format!("{prefix}.norm"), c, cfg.norm_eps);
        let branches = cfg
            .msa_kernel_sizes
            .iter()
            .map(|&k| Conv::new(store, &format!("{prefix}.attn.dw{k}"), c, c, k, c, rng))
            .collect();
        let project = Conv::new(store, &format!("{prefix}.attn.proj"), c, c, 1, 1, rng);
        let ffn_expand = Conv::new(store, &format!("{prefix}.ffn.0"), c, e, 1, 1, rng);
        let ffn_reduce = Conv::new(store, &format!("{prefix}.ffn.1"), e, c, 1, 1, rng);
        // created last so the rest of the block is identical with or without it
        let adapter = cfg.has_adapter().then(|| {
            [
                Conv::new(store, &format!("{prefix}.adapter.0"), 1, c, 1, 1, rng),
                Conv::new(store, &format!("{prefix}.adapter.1"), c, c, 1, 1, rng),
            ]
        });
        Self {
            norm,
            branches,
            project,
            ffn_expand,
            ffn_reduce,
            adapter,
            slope: cfg.leaky_slope,
        }
    }

    pub(crate) fn has_adapter(&self) -> bool {
        self.adapter.is_some()
    }

    pub(crate) fn forward<'t, T: Element>(
        &self,
        p: &BoundParams<'t, T>,
        input: &Var<'t, T>,
        guide: Option<&Var<'t, T>>,
    ) -> Result<BlockTrace<'t, T>> {
        let (n, _, h, w) = input.value().dims4("igm_block")?;
        let slope = T::from_f64_lossy(self.slope);

        let normalized = self.norm.forward(p, input)?;
        let mut multi = self.branches[0].forward(p, &normalized)?;
        for branch in &self.branches[1..] {
            multi = multi.add(&branch.forward(p, &normalized)?)?;
        }
        let self_attention = self.project.forward(p, &multi)?.sigmoid();

        let guide_attention = match (&self.adapter, guide) {
            (Some([a0, a1]), Some(m)) => {
                if m.shape() != [n, 1, h, w] {
                    return Err(GtfmnError::Input(format!(
                        "illumination map {:?} does not match features {:?}",
                        m.shape(),
                        input.shape()
                    )));
                }
                let hidden = a0.forward(p, m)?.leaky_relu(slope);
                Some(a1.forward(p, &hidden)?.sigmoid())
            }
            (Some(_), None) => {
                return Err(GtfmnError::Input(
                    "block has a guidance adapter but no illumination map was given".into(),
                ))
            }
            (None, _) => None,
        };
        let attention = match &guide_attention {
            Some(g) => self_attention.add(g)?,
            None => self_attention.clone(),
        };
        let modulated = attention.mul(&normalized)?;
        let hidden = self.ffn_expand.forward(p, &modulated)?.leaky_relu(slope);
        let ffn = self.ffn_reduce.forward(p, &hidden)?;
        let output = input.add(&modulated)?.add(&ffn)?;
        Ok(BlockTrace {
            normalized,
            self_attention,
            guide_attention,
            attention,
            modulated,
            output,
        })
    }
}
