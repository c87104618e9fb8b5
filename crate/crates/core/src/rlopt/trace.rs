use std::fmt::Write as _;

/// One row per training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub effect: f64,
    /// Mean effect over the last `min(window, step + 1)` steps.
    pub moving_avg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace {
    window: usize,
    rows: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str = "step,effect,moving_avg";

impl ConvergenceTrace {
    /// # Panics
    /// If `window` is zero.
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "moving-average window must be positive");
        Self {
            window,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, effect: f64) {
        let step = self.rows.len();
        let lo = (step + 1).saturating_sub(self.window);
        let sum: f64 = self.rows[lo..].iter().map(|r| r.effect).sum::<f64>() + effect;
        self.rows.push(TraceRow {
            step,
            effect,
            moving_avg: sum / (step + 1 - lo) as f64,
        });
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn final_moving_avg(&self) -> Option<f64> {
        self.rows.last().map(|r| r.moving_avg)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.step, r.effect, r.moving_avg);
        }
        s
    }
}
