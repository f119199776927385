//! Paillier-encrypted weighted averaging: the server only ever sees
//! ciphertexts and the keyholder only ever decrypts the sum.
//!
//!     cargo run --release --example secure_aggregation

use fedfarm::privacy::paillier::keygen;
use fedfarm::privacy::{
    encrypt_update, gaussian_mechanism, DpConfig, Keyholder, SecureAggregator,
};
use fedfarm::privacy::paillier::FixedPointCodec;
use fedfarm::ParamVector;

fn main() -> fedfarm::Result<()> {
    let keys = keygen(1024, 42)?;
    let pk = keys.public.clone();
    let codec = FixedPointCodec::new(1 << 16, &pk)?;
    let mut keyholder = Keyholder::new(keys.secret, codec.clone());
    println!("{}-bit modulus, key id {:016x}", pk.bits(), pk.key_id());

    let clients: Vec<(Vec<f64>, usize)> = vec![
        (vec![0.50, -0.25, 0.125, 1.0], 120),
        (vec![0.10, 0.20, -0.30, 0.0], 40),
        (vec![-0.75, 0.05, 0.60, -0.5], 240),
    ];
    let dim = 4;
    let positions: Vec<usize> = (0..dim).collect();
    let mut server = SecureAggregator::new(pk.clone(), dim);
    let mut wire = 0;
    for (i, (values, n)) in clients.iter().enumerate() {
        let enc = encrypt_update(&pk, &codec, values, *n as f64, dim, None, clients.len(), i as u64)?;
        wire += enc.ciphertexts.iter().map(|c| c.byte_len()).sum::<usize>();
        server.absorb(&enc, &positions, *n as f64)?;
    }
    let mean = keyholder.decrypt_aggregate(&server.finish()?)?;

    let total: usize = clients.iter().map(|c| c.1).sum();
    let plain: Vec<f64> = (0..dim)
        .map(|j| clients.iter().map(|(v, n)| v[j] * *n as f64).sum::<f64>() / total as f64)
        .collect();
    println!("encrypted mean  {mean:.6?}");
    println!("plaintext mean  {plain:.6?}");
    println!("{wire} ciphertext bytes, {} decryption(s)", keyholder.aggregates_decrypted());

    // Gaussian mechanism on a single update: clip to norm 1, then add noise
    let dp = DpConfig { enabled: true, sigma: 0.5, clip_norm: 1.0 };
    let noisy = gaussian_mechanism(&ParamVector::from_slice(&clients[0].0), &dp, 3)?;
    println!("\nDP-noised update (std {}): {:.3?}", dp.noise_std(), noisy.values());
    Ok(())
}
