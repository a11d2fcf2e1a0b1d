//! Centered moving mean / weighted mean over a time-ordered series.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingKind {
    None,
    Mean,
    Weighted,
}

impl std::str::FromStr for SmoothingKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "mean" => Ok(Self::Mean),
            "weighted" => Ok(Self::Weighted),
            other => Err(format!(
                "unknown smoothing {other:?}; expected none, mean or weighted"
            )),
        }
    }
}

pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSpec {
    kind: SmoothingKind,
    window: usize,
    weights: Vec<f64>,
}

/// Center-peaked weights `2^(h - |i - h|)`, normalized: `[1,2,1]/4`,
/// `[1,2,4,2,1]/10`, …
pub fn default_weights(window: usize) -> Vec<f64> {
    let h = window / 2;
    let raw: Vec<f64> = (0..window)
        .map(|i| 2f64.powi((h - i.abs_diff(h)) as i32))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

impl SmoothingSpec {
    pub fn none() -> Self {
        Self {
            kind: SmoothingKind::None,
            window: 1,
            weights: vec![1.0],
        }
    }

    pub fn mean(window: usize) -> Result<Self, String> {
        check_window(window)?;
        Ok(Self {
            kind: SmoothingKind::Mean,
            window,
            weights: vec![1.0; window],
        })
    }

    pub fn weighted(weights: Vec<f64>) -> Result<Self, String> {
        let window = weights.len();
        check_window(window)?;
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err("weights must be finite and non-negative".into());
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("weights must sum to 1, got {sum}"));
        }
        if (0..window).any(|i| (weights[i] - weights[window - 1 - i]).abs() > 1e-12) {
            return Err("weights must be symmetric".into());
        }
        Ok(Self {
            kind: SmoothingKind::Weighted,
            window,
            weights,
        })
    }

    pub fn from_kind(kind: SmoothingKind, window: Option<usize>) -> Result<Self, String> {
        let window = window.unwrap_or(DEFAULT_WINDOW);
        match kind {
            SmoothingKind::None => Ok(Self::none()),
            SmoothingKind::Mean => Self::mean(window),
            SmoothingKind::Weighted => {
                check_window(window)?;
                Self::weighted(default_weights(window))
            }
        }
    }

    pub fn kind(&self) -> SmoothingKind {
        self.kind
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn check_window(window: usize) -> Result<(), String> {
    if window == 0 || window.is_multiple_of(2) {
        Err(format!("window must be odd and >= 1, got {window}"))
    } else {
        Ok(())
    }
}

/// Same-length smoothed series. Near the ends the window is truncated and
/// the weights that remain are renormalized.
pub fn smooth(series: &[(f64, f64)], spec: &SmoothingSpec) -> Vec<(f64, f64)> {
    if spec.kind == SmoothingKind::None || spec.window == 1 {
        return series.to_vec();
    }
    let h = spec.window / 2;
    let n = series.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h).min(n - 1);
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (j, &(_, v)) in series.iter().enumerate().take(hi + 1).skip(lo) {
                let w = spec.weights[j + h - i];
                acc += w * v;
                wsum += w;
            }
            (series[i].0, acc / wsum)
        })
        .collect()
}
