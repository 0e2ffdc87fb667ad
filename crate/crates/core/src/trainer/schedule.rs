use crate::model::ModelConfig;

/// Linear warmup from 0 to `peak` over `warmup` tokens, then linear decay
/// to `0.1 * peak` at `total` tokens.
pub fn lr_at(peak: f64, warmup: u64, total: u64, tokens: u64) -> f64 {
    let floor = 0.1 * peak;
    if tokens < warmup {
        return peak * tokens as f64 / warmup as f64;
    }
    if total <= warmup {
        return peak;
    }
    let frac = ((tokens - warmup) as f64 / (total - warmup) as f64).min(1.0);
    peak - (peak - floor) * frac
}

/// Approximate training cost `3 · (2N + 4·l·d·s) · tokens`, where `N`
/// counts every parameter including embeddings and `s` is the sequence
/// length. The factor 3 covers the forward pass plus a backward pass of
/// twice its cost; `4·l·d·s` is the attention score and mixing work per token.
pub fn flops_estimate(config: &ModelConfig, max_len: usize, total_tokens: f64) -> f64 {
    let n = config.param_count() as f64;
    let attn = 4.0 * config.layers as f64 * config.d_model as f64 * max_len as f64;
    3.0 * (2.0 * n + attn) * total_tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_at(1e-3, 100, 1000, 0), 0.0);
        assert_eq!(lr_at(1e-3, 100, 1000, 100), 1e-3);
        assert!((lr_at(1e-3, 100, 1000, 1000) - 1e-4).abs() < 1e-18);
        assert!((lr_at(1e-3, 100, 1000, 550) - 5.5e-4).abs() < 1e-15);
        assert_eq!(lr_at(1e-3, 0, 1000, 0), 1e-3);
    }

    #[test]
    fn flops_of_zero_tokens_is_zero() {
        assert_eq!(flops_estimate(&ModelConfig::tiny(512), 128, 0.0), 0.0);
    }
}
