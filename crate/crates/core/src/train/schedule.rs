use super::TrainConfig;

/// Learning rate at `step`: linear warmup from 0 to `max_lr`, linear decay
/// to `max_lr · min_lr_fraction` at `decay_end_step`, constant afterwards.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let max = cfg.max_lr;
    let floor = max * cfg.min_lr_fraction;
    if step < cfg.warmup_steps {
        return max * step as f64 / cfg.warmup_steps as f64;
    }
    if step >= cfg.decay_end_step {
        return floor;
    }
    let span = (cfg.decay_end_step - cfg.warmup_steps) as f64;
    let t = (step - cfg.warmup_steps) as f64 / span;
    max + (floor - max) * t
}
