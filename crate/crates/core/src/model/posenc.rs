use super::ModelError;
use crate::tensor::Tensor;

/// Sinusoidal table `[n_tokens × d_embed]`:
/// `PE(pos, 2i) = sin(pos / 10000^(2i/d))`, `PE(pos, 2i+1) = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding(n_tokens: usize, d_embed: usize) -> Result<Tensor, ModelError> {
    if d_embed == 0 || !d_embed.is_multiple_of(2) {
        return Err(ModelError::Config(format!(
            "positional encoding needs an even embedding width, got {d_embed}"
        )));
    }
    let mut data = vec![0.0; n_tokens * d_embed];
    for pos in 0..n_tokens {
        for i in 0..d_embed / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_embed as f64);
            data[pos * d_embed + 2 * i] = angle.sin();
            data[pos * d_embed + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::new(&[n_tokens, d_embed], data)?)
}
