//! Mirror-scale views for the contrastive branch.
//!
//! The momentum encoder sees the channels the masked-modeling branch did not
//! see, at twice the sampling rate, through a window of `N` patches slid one
//! patch at a time over the `2N` upsampled patches.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::model::MaskPlan;
use crate::rng::stream;
use crate::signals::EegSample;

const VIEW_STREAM: u64 = 0x71e3;

/// Per-step complement of the visible sets.
pub fn mirror_sets(plan: &MaskPlan) -> Result<MaskPlan> {
    plan.mirror()
}

/// Doubles the sampling rate by linear interpolation.
///
/// Even outputs are the input samples, odd outputs the midpoints; the final
/// odd sample continues the last slope, so ramps stay exact.
pub fn upsample2x(sample: &EegSample) -> EegSample {
    let t = sample.n_times();
    let mut data = Vec::with_capacity(2 * sample.data().len());
    for i in 0..sample.n_channels() {
        let x = sample.channel(i);
        for k in 0..t {
            data.push(x[k]);
            let next = if k + 1 < t {
                0.5 * (x[k] + x[k + 1])
            } else if t > 1 {
                x[k] + 0.5 * (x[k] - x[k - 1])
            } else {
                x[k]
            };
            data.push(next);
        }
    }
    sample.with_rows(2.0 * sample.fs(), 2 * t, data)
}

/// Original step whose mirror set governs upsampled patch `j` (both 0-based).
pub fn source_step(j: usize) -> usize {
    j / 2
}

/// One window of the upsampled signal.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    /// First upsampled patch of the window.
    pub offset: usize,
    /// Visible channels per window step.
    pub plan: MaskPlan,
}

/// All `N + 1` windows of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewGroup {
    pub source: usize,
    pub patch_len: usize,
    pub views: Vec<View>,
}

impl ViewGroup {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Samples `[offset·l, (offset + N)·l)` of the upsampled signal.
    pub fn window(&self, upsampled: &EegSample, k: usize) -> Result<EegSample> {
        let v = self
            .views
            .get(k)
            .ok_or_else(|| invalid(format!("view {k} out of range")))?;
        let l = self.patch_len;
        upsampled.slice_time(v.offset * l, (v.offset + v.plan.n_patches()) * l)
    }
}

/// Builds the `N + 1` patch-aligned windows over an upsampled sample.
///
/// Window step `t` of view `k` is upsampled patch `j = k + t` and shows the
/// mirror set of original step `j / 2`.
pub fn window_views(
    upsampled: &EegSample,
    mirror: &MaskPlan,
    n: usize,
    patch_len: usize,
    source: usize,
) -> Result<ViewGroup> {
    if n == 0 || patch_len == 0 {
        return Err(invalid(
            "window views need N ≥ 1 and a positive patch length",
        ));
    }
    if upsampled.n_times() < 2 * n * patch_len {
        return Err(invalid(format!(
            "upsampled signal has {} samples, {} patches of {patch_len} need {}",
            upsampled.n_times(),
            2 * n,
            2 * n * patch_len
        )));
    }
    if mirror.n_patches() != n {
        return Err(invalid(format!(
            "mirror plan covers {} steps, expected {n}",
            mirror.n_patches()
        )));
    }
    let views = (0..=n)
        .map(|k| {
            let sets = (0..n)
                .map(|t| mirror.visible(source_step(k + t)).to_vec())
                .collect();
            Ok(View {
                offset: k,
                plan: MaskPlan::new(mirror.n_channels(), sets)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ViewGroup {
        source,
        patch_len,
        views,
    })
}

/// Uniform view choice, fixed by `(seed, epoch, step, sample id)`.
pub fn select_view(n_views: usize, seed: u64, epoch: u64, step: u64, sample_id: u64) -> usize {
    stream(seed, &[VIEW_STREAM, epoch, step, sample_id]).random_range(0..n_views)
}

/// Contrastive pairing for a batch of `K` anchors and `K` targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pairing {
    /// `positive[a]`: target index paired with anchor `a`.
    pub positive: Vec<usize>,
}

impl Pairing {
    pub fn len(&self) -> usize {
        self.positive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positive.is_empty()
    }

    /// Targets acting as negatives for `anchor`.
    pub fn negatives(&self, anchor: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&t| t != self.positive[anchor])
            .collect()
    }
}

/// Each anchor's positive is the view of its own sample; the other `K − 1`
/// targets are its negatives.
pub fn make_pairs(k: usize) -> Result<Pairing> {
    if k < 2 {
        return Err(invalid(format!(
            "contrastive pairing needs at least 2 samples, got {k}"
        )));
    }
    Ok(Pairing {
        positive: (0..k).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_mask;
    use proptest::prelude::*;

    fn ramp(c: usize, t: usize) -> EegSample {
        let names = (0..c).map(|i| format!("c{i}")).collect();
        let data = (0..c * t)
            .map(|k| (k % t) as f64 * 0.5 + (k / t) as f64)
            .collect();
        EegSample::new(names, 100.0, t, data).unwrap()
    }

    #[test]
    fn mirror_examples() {
        let plan = MaskPlan::new(4, vec![vec![0, 1]]).unwrap();
        assert_eq!(mirror_sets(&plan).unwrap().visible(0), &[2, 3]);
        let plan = MaskPlan::new(3, vec![vec![0, 2]]).unwrap();
        assert_eq!(mirror_sets(&plan).unwrap().visible(0), &[1]);
    }

    #[test]
    fn upsampling_is_exact_on_ramps_and_constants() {
        let s = ramp(2, 6);
        let u = upsample2x(&s);
        assert_eq!(u.n_times(), 12);
        assert_eq!(u.fs(), 200.0);
        for i in 0..2 {
            for (k, v) in u.channel(i).iter().enumerate() {
                assert!((v - (k as f64 * 0.25 + i as f64)).abs() < 1e-12);
            }
        }
        let c = s.map(|_| 3.0);
        assert!(upsample2x(&c).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn sixteen_patches_give_seventeen_views() {
        let s = upsample2x(&ramp(4, 16 * 5));
        let plan = sample_mask(4, 16, 0.5, &mut stream(0, &[])).unwrap();
        let group = window_views(&s, &plan.mirror().unwrap(), 16, 5, 0).unwrap();
        assert_eq!(group.len(), 17);
        let w0 = group.window(&s, 0).unwrap();
        assert_eq!(w0.n_times(), 80);
        assert_eq!(w0.channel(1)[0], s.channel(1)[0]);
        let w3 = group.window(&s, 3).unwrap();
        assert_eq!(w3.channel(0)[0], s.channel(0)[15]);
        // Upsampled patch 4 (0-based) belongs to original step 2: 1-based 5 -> 3.
        assert_eq!(source_step(4), 2);
        assert_eq!(
            group.views[1].plan.visible(3),
            plan.mirror().unwrap().visible(2)
        );
    }

    #[test]
    fn pairing() {
        assert!(make_pairs(1).is_err());
        let p = make_pairs(4).unwrap();
        assert_eq!(p.negatives(2), vec![0, 1, 3]);
        assert_eq!(make_pairs(2).unwrap().negatives(0), vec![1]);
        let mut used = p.positive.clone();
        used.sort_unstable();
        assert_eq!(used, vec![0, 1, 2, 3]);
    }

    #[test]
    fn view_choice_is_seeded() {
        assert_eq!(select_view(17, 3, 1, 2, 5), select_view(17, 3, 1, 2, 5));
        let picks: std::collections::HashSet<_> =
            (0..200).map(|i| select_view(17, 3, 0, 0, i)).collect();
        assert!(picks.len() > 12);
    }

    proptest! {
        #[test]
        fn views_never_overlap_masked_branch(n in 1usize..10, c in 2usize..12, seed in any::<u64>()) {
            let l = 2;
            let s = upsample2x(&ramp(c, n * l));
            let plan = sample_mask(c, n, 0.5, &mut stream(seed, &[])).unwrap();
            let group = window_views(&s, &plan.mirror().unwrap(), n, l, 0).unwrap();
            prop_assert_eq!(group.len(), n + 1);
            for v in &group.views {
                for t in 0..n {
                    let orig = source_step(v.offset + t);
                    for ch in v.plan.visible(t) {
                        prop_assert!(!plan.visible(orig).contains(ch));
                    }
                }
            }
        }
    }
}
