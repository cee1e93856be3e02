//! Analysis instruments: attention distance and NMI over channel tokens,
//! channel-embedding similarity clustering, and log-linear scaling fits.

mod attention;
mod scaling;
mod similarity;

pub use attention::{
    attention_distance, attention_nmi, capture_attention, mean_distance, nmi, sample_attention,
    AttentionStack, LayerStats, Nmi, NmiReport,
};
pub use scaling::{fit_scaling, ScalingFit};
pub use similarity::{
    average_linkage, channel_similarity, cosine_matrix, cut_at_distance, cut_to_clusters,
    ChannelSimilarity, Merge,
};

use crate::diff::Tensor;
use crate::error::{invalid, Result};
use crate::model::ModelState;
use crate::signals::EegSample;

/// Online-encoder channel embedding rows for `names`, in that order.
pub fn channel_table(state: &ModelState, names: &[String]) -> Result<Tensor> {
    let rows = state.channel_rows(names)?;
    let table = state
        .online
        .get("chan_emb")
        .ok_or_else(|| invalid("parameters lack chan_emb"))?;
    let data = rows
        .iter()
        .flat_map(|&r| table.row(r).iter().copied())
        .collect();
    Ok(Tensor::new(vec![rows.len(), table.cols()], data)?)
}

/// Every diagnostic of one model over a set of samples.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub channels: Vec<String>,
    pub stack: AttentionStack,
    pub distance: LayerStats,
    pub nmi: NmiReport,
    pub similarity: ChannelSimilarity,
}

pub fn analyze(state: &ModelState, samples: &[EegSample], n_clusters: usize) -> Result<Analysis> {
    let stack = capture_attention(state, samples)?;
    let channels = samples[0].channels().to_vec();
    let distance = attention_distance(&stack);
    let nmi = attention_nmi(&stack)?;
    let similarity = channel_similarity(&channel_table(state, &channels)?, n_clusters)?;
    Ok(Analysis {
        channels,
        stack,
        distance,
        nmi,
        similarity,
    })
}
