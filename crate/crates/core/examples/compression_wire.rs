//! Top-k sparsification, uniform quantization and the binary update format.
//!
//!     cargo run --example compression_wire

use fedfarm::compression::{
    decode, dense_size, encode, encoded_size, prune_magnitude, quantize_values, topk, Payload,
};
use fedfarm::ParamVector;
use rand::Rng;

fn main() -> fedfarm::Result<()> {
    let mut rng = fedfarm::seed::rng(7);
    let delta: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
    println!("dense update of {} values: {} bytes", delta.len(), dense_size(delta.len()));

    for k in [0.01, 0.1, 0.5] {
        let sparse = Payload::Sparse(topk(&delta, k)?);
        println!("top-{k:<4} keeps {:>4} values: {:>5} bytes", sparse.count(), encoded_size(&sparse));
    }
    for bits in [2u8, 4, 8] {
        let q = quantize_values(&delta, bits)?;
        let worst = q
            .dequantize_values()
            .iter()
            .zip(&delta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!(
            "{bits}-bit quantized: {:>5} bytes, worst error {worst:.4} (step/2 = {:.4})",
            encoded_size(&Payload::Quantized(q.clone())),
            q.step() / 2.0
        );
    }

    // composed: keep 10%, then quantize what is left
    let sparse = topk(&delta, 0.1)?;
    let mut q = quantize_values(&sparse.values, 8)?;
    q.indices = Some(sparse.indices.clone());
    q.dim = sparse.dim;
    let payload = Payload::Quantized(q);
    let bytes = encode(&payload)?;
    assert_eq!(bytes.len() as u64, encoded_size(&payload));
    println!("top-10% + 8-bit: {} bytes, header {:02x?}", bytes.len(), &bytes[..16]);
    let back = decode(&bytes)?;
    println!("decoded {} of {} coordinates", back.count(), back.dim());

    let model = ParamVector::from_slice(&delta);
    let pruned = prune_magnitude(&model, 0.3)?;
    let zeros = pruned.values().iter().filter(|v| **v == 0.0).count();
    println!("magnitude pruning at 30% zeroed {zeros} weights");
    Ok(())
}
