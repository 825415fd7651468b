/// Logistic function, evaluated without overflow for any finite input.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit: `max(z, 0) − z·y + ln(1 + e^{−|z|})`.
pub fn bce_loss(logit: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// `sigmoid(logit) ≥ 0.5`, decided on the logit. For negative logits of
/// magnitude below about 1e-16 the rounded sigmoid is exactly 0.5; the logit
/// test is the one used everywhere.
pub fn predict(logit: f64) -> bool {
    logit >= 0.0
}
