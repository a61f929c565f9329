//! Noise schedules, including coarse sub-schedules for few-step sampling.
//!
//! A sub-schedule keeps a subset of the base timesteps (always including
//! the last) and re-derives its betas so the cumulative signal level at
//! every kept step matches the base schedule exactly. Each coarse step
//! remembers which base timestep it lands on, so models conditioned on
//! base timesteps work unchanged under any step count.

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    /// `alpha_bars[k]` is the signal level after `k` steps; index 0 is 1.
    alpha_bars: Vec<f64>,
    /// Base timestep (1-indexed) each step corresponds to.
    base_t: Vec<usize>,
    base_steps: usize,
}

impl NoiseSchedule {
    /// Linear beta ramp, the classic default.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
        if steps == 0 {
            return Err(CoreError::validation("schedule needs at least one step"));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(CoreError::validation(format!(
                "beta range ({beta_start}, {beta_end}) must satisfy 0 < start <= end < 1"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps + 1);
        alpha_bars.push(1.0);
        for &b in &betas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * (1.0 - b));
        }
        Ok(NoiseSchedule {
            betas,
            alpha_bars,
            base_t: (1..=steps).collect(),
            base_steps: steps,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn base_steps(&self) -> usize {
        self.base_steps
    }

    /// `beta` for step `k` in `1..=steps()`.
    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    /// Cumulative signal level after `k` steps, `k` in `0..=steps()`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k]
    }

    /// Base timestep that coarse step `k` (`1..=steps()`) lands on.
    pub fn base_timestep(&self, k: usize) -> usize {
        self.base_t[k - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn base_timesteps(&self) -> &[usize] {
        &self.base_t
    }

    /// Rebuild a schedule from stored fields (checkpoint loading).
    pub fn from_parts(betas: Vec<f64>, base_t: Vec<usize>, base_steps: usize) -> Result<NoiseSchedule> {
        if betas.is_empty() || betas.len() != base_t.len() {
            return Err(CoreError::validation("schedule parts have inconsistent lengths"));
        }
        if betas.iter().any(|&b| !(0.0 < b && b < 1.0)) {
            return Err(CoreError::validation("schedule betas out of (0, 1)"));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        for &b in &betas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * (1.0 - b));
        }
        Ok(NoiseSchedule { betas, alpha_bars, base_t, base_steps })
    }

    /// Keep `k_steps` of the base steps (evenly spaced, last included)
    /// and re-derive betas so kept signal levels match the base exactly.
    pub fn subschedule(&self, k_steps: usize) -> Result<NoiseSchedule> {
        let t = self.steps();
        if k_steps == 0 || k_steps > t {
            return Err(CoreError::validation(format!(
                "sub-schedule size {k_steps} must be in 1..={t}"
            )));
        }
        if k_steps == t {
            // Identity subsampling: the sub-schedule *is* this schedule.
            // Returning it directly keeps the few-step path bit-identical
            // to the full path instead of merely equal to rounding error.
            return Ok(self.clone());
        }
        let mut kept: Vec<usize> = (1..=k_steps)
            .map(|k| ((k * t) as f64 / k_steps as f64).round() as usize)
            .collect();
        for i in 0..kept.len() {
            kept[i] = kept[i].max(i + 1); // keep strictly increasing from >= 1
        }
        debug_assert_eq!(*kept.last().unwrap(), t);

        let mut betas = Vec::with_capacity(k_steps);
        let mut alpha_bars = Vec::with_capacity(k_steps + 1);
        alpha_bars.push(1.0);
        let mut prev_t = 0usize;
        for &tk in &kept {
            let ab_prev = self.alpha_bar(prev_t);
            let ab = self.alpha_bar(tk);
            betas.push(1.0 - ab / ab_prev);
            alpha_bars.push(ab); // copy the base value: exact by construction
            prev_t = tk;
        }
        let base_t: Vec<usize> = kept.iter().map(|&tk| self.base_timestep(tk)).collect();
        Ok(NoiseSchedule { betas, alpha_bars, base_t, base_steps: self.base_steps })
    }
}
