//! Local univariate forecasters: persistence, seasonal persistence,
//! exponential smoothing and Theta.

/// Repeats the last value.
pub fn naive(history: &[f64], horizon: usize) -> Vec<f64> {
    vec![*history.last().expect("non-empty history"); horizon]
}

/// Offset `h` copies the value at `end - m + ((h-1) mod m) + 1`.
pub fn seasonal_naive(history: &[f64], m: usize, horizon: usize) -> Vec<f64> {
    let n = history.len();
    (0..horizon).map(|h| history[n - m + h % m]).collect()
}

/// Final level of `l_t = alpha*x_t + (1-alpha)*l_{t-1}` with `l_1 = x_1`.
pub fn ses_level(history: &[f64], alpha: f64) -> f64 {
    history[1..].iter().fold(history[0], |level, &x| alpha * x + (1.0 - alpha) * level)
}

pub fn ses(history: &[f64], alpha: f64, horizon: usize) -> Vec<f64> {
    vec![ses_level(history, alpha); horizon]
}

/// Holt's linear trend with `l_1 = x_1`, `b_1 = x_2 - x_1`.
pub fn holt(history: &[f64], alpha: f64, beta: f64, horizon: usize) -> Vec<f64> {
    let mut level = history[0];
    let mut trend = history[1] - history[0];
    for &x in &history[1..] {
        let prev = level;
        level = alpha * x + (1.0 - alpha) * (level + trend);
        trend = beta * (level - prev) + (1.0 - beta) * trend;
    }
    (1..=horizon).map(|h| level + h as f64 * trend).collect()
}

/// OLS fit of `x_t = a + b*t` for `t = 1..=n`.
pub fn linear_fit(history: &[f64]) -> (f64, f64) {
    let n = history.len() as f64;
    let t_mean = (n + 1.0) / 2.0;
    let x_mean = history.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &x) in history.iter().enumerate() {
        let dt = (i + 1) as f64 - t_mean;
        sxy += dt * (x - x_mean);
        sxx += dt * dt;
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (x_mean - b * t_mean, b)
}

/// Theta method with the theta=0 and theta=2 lines combined half and half.
///
/// The theta=0 line is the OLS trend extrapolated. The theta=2 line
/// `z_t = 2*x_t - line_t` shares the trend slope `b`; it is extrapolated by
/// exponential smoothing with drift `b` (`l_t = alpha*z_t + (1-alpha)*(l_{t-1} + b)`,
/// `l_1 = z_1`, forecast `l_n + b*h`). An exactly linear series is therefore
/// reproduced for any `alpha`.
///
/// With `period > 1` and at least two full seasons of history, an additive
/// classical decomposition removes seasonality first and adds it back.
pub fn theta(history: &[f64], alpha: f64, period: usize, horizon: usize) -> Vec<f64> {
    let n = history.len();
    let seasonal = (period > 1 && n >= 2 * period).then(|| seasonal_indices(history, period));
    let adjusted: Vec<f64> = match &seasonal {
        Some(s) => history.iter().enumerate().map(|(i, x)| x - s[i % period]).collect(),
        None => history.to_vec(),
    };
    let (a, b) = linear_fit(&adjusted);
    let line = |t: f64| a + b * t;
    let z: Vec<f64> = adjusted.iter().enumerate().map(|(i, &x)| 2.0 * x - line((i + 1) as f64)).collect();
    let level = z[1..].iter().fold(z[0], |l, &x| alpha * x + (1.0 - alpha) * (l + b));
    (1..=horizon)
        .map(|h| {
            let f = 0.5 * line((n + h) as f64) + 0.5 * (level + b * h as f64);
            match &seasonal {
                Some(s) => f + s[(n + h - 1) % period],
                None => f,
            }
        })
        .collect()
}

/// Additive seasonal indices by position `i mod period` (0-based), from the
/// deviations of the series around its centred moving average. Indices sum
/// to zero.
pub fn seasonal_indices(history: &[f64], period: usize) -> Vec<f64> {
    let n = history.len();
    let half = period / 2;
    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for i in half..n.saturating_sub(half) {
        let trend = if period % 2 == 1 {
            history[i - half..=i + half].iter().sum::<f64>() / period as f64
        } else {
            if i + half >= n {
                continue;
            }
            let inner: f64 = history[i - half + 1..i + half].iter().sum();
            (0.5 * history[i - half] + inner + 0.5 * history[i + half]) / period as f64
        };
        sums[i % period] += history[i] - trend;
        counts[i % period] += 1;
    }
    let mut idx: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let mean = idx.iter().sum::<f64>() / period as f64;
    idx.iter_mut().for_each(|v| *v -= mean);
    idx
}
