use crate::tensor::Real;

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `label`, fused so `log 0`
/// is never evaluated. Returns `(loss, d loss / d logit)`.
///
/// `loss = max(s, 0) - s*y + ln(1 + exp(-|s|))`, `grad = sigmoid(s) - y`.
pub fn sigmoid_bce_loss<T: Real>(logit: T, label: bool) -> (T, T) {
    let y = if label { T::one() } else { T::zero() };
    let loss = logit.max(T::zero()) - logit * y + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - y)
}
