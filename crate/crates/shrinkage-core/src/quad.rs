//! Gauss-Kronrod 15-point panel rule used by the adaptive marginal
//! quadrature.

/// Abscissae of the 15-point Kronrod rule on [-1, 1], positive half.
/// Odd-indexed entries are the embedded 7-point Gauss nodes.
pub const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

/// Kronrod weights matching `XGK`.
pub const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

/// 7-point Gauss weights for the embedded rule (nodes `XGK[1], XGK[3], XGK[5], XGK[7]`).
pub const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// The 15 node positions of a panel `[a, b]`, in ascending order.
pub fn panel_nodes(a: f64, b: f64) -> [f64; 15] {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut out = [0.0; 15];
    for (i, &x) in XGK.iter().enumerate() {
        out[i] = center - half * x;
        out[14 - i] = center + half * x;
    }
    out
}

/// Kronrod and Gauss sums for 15 integrand values on a panel of width
/// `b - a`, plus `resasc`, the Kronrod integral of `|f - mean(f)|` used for
/// error rescaling.
pub fn panel_sums(values: &[f64; 15], a: f64, b: f64) -> (f64, f64, f64) {
    let half = 0.5 * (b - a);
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for i in 0..7 {
        let pair = values[i] + values[14 - i];
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    kronrod += WGK[7] * values[7];
    gauss += WG[3] * values[7];
    let mean = 0.5 * kronrod;
    let mut resasc = WGK[7] * (values[7] - mean).abs();
    for i in 0..7 {
        resasc += WGK[i] * ((values[i] - mean).abs() + (values[14 - i] - mean).abs());
    }
    (kronrod * half, gauss * half, resasc * half)
}

/// QUADPACK-style error estimate for a panel from the Kronrod-Gauss gap.
pub fn panel_error(kronrod: f64, gauss: f64, resasc: f64) -> f64 {
    let raw = (kronrod - gauss).abs();
    if resasc != 0.0 && raw != 0.0 {
        let scale = (200.0 * raw / resasc).powf(1.5);
        if scale < 1.0 {
            return resasc * scale;
        }
        return resasc;
    }
    raw
}
