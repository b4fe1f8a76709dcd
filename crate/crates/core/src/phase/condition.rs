use super::{lowpass, ButterworthSpec, SourceSeries};
use crate::error::{Error, Result};

pub const CONDITION_STD_FLOOR: f64 = 1e-5;

/// Z-scores every frame against its centred window, then low-pass filters.
pub fn condition_source(
    series: &SourceSeries,
    fps: f64,
    window_s: f64,
    filter: &ButterworthSpec,
) -> Result<SourceSeries> {
    let w = (window_s * fps).round() as usize;
    if w < 3 {
        return Err(Error::invalid(format!(
            "normalisation window of {w} frames is shorter than 3"
        )));
    }
    let x = &series.values;
    let n = x.len();
    let half = w / 2;
    let normalised: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let win = &x[lo..=hi];
            let m = win.iter().sum::<f64>() / win.len() as f64;
            let var = win.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / win.len() as f64;
            (x[i] - m) / var.sqrt().max(CONDITION_STD_FLOOR)
        })
        .collect();
    let values = if n > 1 { lowpass(filter, fps, &normalised)? } else { normalised };
    Ok(SourceSeries {
        values,
        origin: series.origin,
        bone: series.bone,
    })
}
