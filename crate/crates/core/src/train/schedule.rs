use std::f64::consts::PI;

fn progress(step: u64, total: u64) -> f64 {
    if total == 0 {
        return 1.0;
    }
    step.min(total) as f64 / total as f64
}

/// Cosine annealing from `peak` to 0.
pub fn lr_at(step: u64, total: u64, peak: f64) -> f64 {
    peak * (1.0 + (PI * progress(step, total)).cos()) / 2.0
}

/// Linear ramp from `start` to `end`.
pub fn momentum_at(step: u64, total: u64, start: f64, end: f64) -> f64 {
    if step >= total {
        return end;
    }
    start + (end - start) * progress(step, total)
}

/// Cosine ramp from 0 up to `end`.
pub fn weight_decay_at(step: u64, total: u64, end: f64) -> f64 {
    end * (1.0 - (PI * progress(step, total)).cos()) / 2.0
}
