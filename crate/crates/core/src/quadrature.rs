//! Composite quadrature and finite differences on uniform meshes.

/// Composite Simpson rule. An odd interval count closes with a 3/8 panel;
/// two samples fall back to the trapezoid.
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    match n {
        0 | 1 => 0.0,
        2 => 0.5 * h * (values[0] + values[1]),
        3 => h / 3.0 * (values[0] + 4.0 * values[1] + values[2]),
        _ => {
            let intervals = n - 1;
            let (even_end, tail) = if intervals % 2 == 0 { (n - 1, false) } else { (n - 4, true) };
            let mut acc = values[0] + values[even_end];
            for (i, v) in values.iter().enumerate().take(even_end).skip(1) {
                acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
            }
            let mut total = h / 3.0 * acc;
            if tail {
                let v = &values[n - 4..];
                total += 3.0 * h / 8.0 * (v[0] + 3.0 * v[1] + 3.0 * v[2] + v[3]);
            }
            total
        }
    }
}

/// Simpson integral of `f(r_i) * w(r_i)` over a uniform mesh starting at `r0`.
pub fn simpson_weighted(values: &[f64], r0: f64, h: f64, weight: impl Fn(f64) -> f64) -> f64 {
    let w: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(i, v)| v * weight(r0 + i as f64 * h))
        .collect();
    simpson(&w, h)
}

/// Fourth-order first derivative: centered five-point stencil in the interior,
/// one-sided five-point stencils on the two nodes at each edge.
pub fn derivative4(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 5, "derivative4 needs at least 5 samples");
    let v = values;
    let mut out = vec![0.0; n];
    for i in 2..n - 2 {
        out[i] = (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) / (12.0 * h);
    }
    out[0] = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * h);
    out[1] = (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) / (12.0 * h);
    out[n - 1] = (25.0 * v[n - 1] - 48.0 * v[n - 2] + 36.0 * v[n - 3] - 16.0 * v[n - 4]
        + 3.0 * v[n - 5])
        / (12.0 * h);
    out[n - 2] = (3.0 * v[n - 1] + 10.0 * v[n - 2] - 18.0 * v[n - 3] + 6.0 * v[n - 4]
        - v[n - 5])
        / (12.0 * h);
    out
}

/// Second-order first derivative (centered, one-sided at the edges), for
/// sequences too short or too coarse for [`derivative4`].
pub fn derivative2(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 3, "derivative2 needs at least 3 samples");
    let v = values;
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
    }
    out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    out[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
    out
}
