use rand::seq::index;
use rand::Rng;

use crate::error::{invalid, Result};

/// Visible channel sets, one per time step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    n_channels: usize,
    visible: Vec<Vec<usize>>,
}

/// `max(1, round(C·(1−r)))` with halves rounded up.
pub fn n_visible(n_channels: usize, mask_ratio: f64) -> usize {
    let keep = n_channels as f64 * (1.0 - mask_ratio);
    ((keep + 0.5).floor() as usize).clamp(1, n_channels.max(1))
}

/// Draws `n_visible` channels independently for each of `n_patches` steps.
pub fn sample_mask(
    n_channels: usize,
    n_patches: usize,
    mask_ratio: f64,
    rng: &mut impl Rng,
) -> Result<MaskPlan> {
    if !(mask_ratio > 0.0 && mask_ratio < 1.0) {
        return Err(invalid(format!(
            "mask ratio must lie in (0, 1), got {mask_ratio}"
        )));
    }
    if n_channels == 0 || n_patches == 0 {
        return Err(invalid("mask needs at least one channel and one time step"));
    }
    let k = n_visible(n_channels, mask_ratio);
    let visible = (0..n_patches)
        .map(|_| {
            let mut v = index::sample(rng, n_channels, k).into_vec();
            v.sort_unstable();
            v
        })
        .collect();
    Ok(MaskPlan {
        n_channels,
        visible,
    })
}

impl MaskPlan {
    /// Builds a plan from explicit visible sets; each set must be nonempty,
    /// duplicate-free and in range. Sets are stored sorted.
    pub fn new(n_channels: usize, visible: Vec<Vec<usize>>) -> Result<Self> {
        if visible.is_empty() {
            return Err(invalid("mask plan has no time steps"));
        }
        let mut sorted = Vec::with_capacity(visible.len());
        for (j, mut set) in visible.into_iter().enumerate() {
            set.sort_unstable();
            if set.is_empty() {
                return Err(invalid(format!("time step {j} has no visible channel")));
            }
            if set.windows(2).any(|w| w[0] == w[1]) || set.last().is_some_and(|&c| c >= n_channels)
            {
                return Err(invalid(format!(
                    "time step {j}: visible set {set:?} is invalid for {n_channels} channels"
                )));
            }
            sorted.push(set);
        }
        Ok(Self {
            n_channels,
            visible: sorted,
        })
    }

    /// Every channel visible at every step.
    pub fn full(n_channels: usize, n_patches: usize) -> Self {
        Self {
            n_channels,
            visible: vec![(0..n_channels).collect(); n_patches],
        }
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_patches(&self) -> usize {
        self.visible.len()
    }

    pub fn visible(&self, j: usize) -> &[usize] {
        &self.visible[j]
    }

    pub fn masked(&self, j: usize) -> Vec<usize> {
        complement(self.n_channels, &self.visible[j])
    }

    /// Per-step complements. Steps where every channel is visible have an
    /// empty complement and are rejected.
    pub fn mirror(&self) -> Result<MaskPlan> {
        let visible = (0..self.n_patches()).map(|j| self.masked(j)).collect();
        MaskPlan::new(self.n_channels, visible)
    }

    /// Visible `(channel, step)` positions, step-major.
    pub fn visible_positions(&self) -> Vec<(usize, usize)> {
        self.visible
            .iter()
            .enumerate()
            .flat_map(|(j, set)| set.iter().map(move |&i| (i, j)))
            .collect()
    }

    /// Masked `(channel, step)` positions, step-major.
    pub fn masked_positions(&self) -> Vec<(usize, usize)> {
        (0..self.n_patches())
            .flat_map(|j| self.masked(j).into_iter().map(move |i| (i, j)))
            .collect()
    }
}

fn complement(n: usize, set: &[usize]) -> Vec<usize> {
    let mut keep = vec![true; n];
    for &i in set {
        keep[i] = false;
    }
    (0..n).filter(|&i| keep[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    #[test]
    fn visible_counts() {
        assert_eq!(n_visible(62, 0.5), 31);
        assert_eq!(n_visible(3, 0.5), 2);
        assert_eq!(n_visible(16, 0.99), 1);
        assert_eq!(n_visible(16, 0.5), 8);
    }

    #[test]
    fn three_channels_mirror_gets_one() {
        let plan = sample_mask(3, 5, 0.5, &mut stream(3, &[])).unwrap();
        let mirror = plan.mirror().unwrap();
        for j in 0..5 {
            assert_eq!(plan.visible(j).len(), 2);
            assert_eq!(mirror.visible(j).len(), 1);
        }
    }

    #[test]
    fn explicit_plans_are_validated() {
        assert!(MaskPlan::new(3, vec![vec![0, 0]]).is_err());
        assert!(MaskPlan::new(3, vec![vec![3]]).is_err());
        assert!(MaskPlan::new(3, vec![vec![]]).is_err());
        assert!(MaskPlan::full(3, 2).mirror().is_err());
        assert!(sample_mask(4, 4, 0.0, &mut stream(0, &[])).is_err());
    }

    proptest! {
        #[test]
        fn plans_partition_channels(c in 2usize..40, n in 1usize..12, r in 0.05f64..0.95, seed in any::<u64>()) {
            let plan = sample_mask(c, n, r, &mut stream(seed, &[])).unwrap();
            let k = n_visible(c, r);
            for j in 0..n {
                let vis = plan.visible(j);
                let masked = plan.masked(j);
                prop_assert_eq!(vis.len(), k);
                let mut all: Vec<usize> = vis.iter().chain(&masked).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..c).collect::<Vec<_>>());
            }
        }
    }
}
