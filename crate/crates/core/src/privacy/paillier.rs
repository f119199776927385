//! Additively homomorphic Paillier encryption with `g = n + 1`.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{FromPrimitive, One, ToPrimitive, Zero};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::seed;

const MILLER_RABIN_ROUNDS: usize = 40;

const SMALL_PRIMES: [u32; 30] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127,
];

/// Uniform integer in `[0, bound)`.
pub(crate) fn random_below<R: RngCore>(rng: &mut R, bound: &BigUint) -> BigUint {
    assert!(!bound.is_zero());
    let bits = bound.bits();
    let bytes = bits.div_ceil(8) as usize;
    let excess = bytes as u64 * 8 - bits;
    let mut buf = vec![0u8; bytes];
    loop {
        rng.fill_bytes(&mut buf);
        buf[0] &= 0xff >> excess;
        let x = BigUint::from_bytes_be(&buf);
        if &x < bound {
            return x;
        }
    }
}

fn random_bits<R: RngCore>(rng: &mut R, bits: u64) -> BigUint {
    let bytes = bits.div_ceil(8) as usize;
    let mut buf = vec![0u8; bytes];
    rng.fill_bytes(&mut buf);
    buf[0] &= 0xff >> (bytes as u64 * 8 - bits);
    BigUint::from_bytes_be(&buf)
}

/// Miller–Rabin with trial division by small primes first.
pub fn is_probable_prime<R: RngCore>(n: &BigUint, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for &p in std::iter::once(&2u32).chain(SMALL_PRIMES.iter()) {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let n_minus_1 = n - &one;
    let s = n_minus_1.trailing_zeros().expect("n > 1");
    let d = &n_minus_1 >> s;
    let span = n - 3u32; // witnesses in [2, n-2]
    'witness: for _ in 0..MILLER_RABIN_ROUNDS {
        let a = random_below(rng, &span) + &two;
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Random prime with exactly `bits` bits and its top two bits set, so that a
/// product of two such primes has exactly `2·bits` bits.
pub fn random_prime<R: RngCore>(bits: u64, rng: &mut R) -> BigUint {
    assert!(bits >= 8);
    loop {
        let mut p = random_bits(rng, bits);
        p.set_bit(bits - 1, true);
        p.set_bit(bits - 2, true);
        p.set_bit(0, true);
        if is_probable_prime(&p, rng) {
            return p;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    pub n: BigUint,
    pub n_squared: BigUint,
}

#[derive(Debug, Clone)]
pub struct SecretKey {
    lambda: BigUint,
    mu: BigUint,
    public: PublicKey,
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext(BigUint);

impl From<BigUint> for Ciphertext {
    fn from(v: BigUint) -> Self {
        Ciphertext(v)
    }
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn to_bytes_be(&self) -> Vec<u8> {
        self.0.to_bytes_be()
    }

    pub fn byte_len(&self) -> usize {
        if self.0.is_zero() {
            1
        } else {
            self.0.bits().div_ceil(8) as usize
        }
    }
}

impl PublicKey {
    pub fn new(n: BigUint) -> Self {
        let n_squared = &n * &n;
        PublicKey { n, n_squared }
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    /// Short fingerprint used to detect ciphertexts from a different key.
    pub fn key_id(&self) -> u64 {
        let digits = self.n.to_u64_digits();
        digits
            .iter()
            .fold(seed::derive(digits.len() as u64, &[]), |h, &d| seed::derive(h, &[d]))
    }

    pub fn encrypt<R: RngCore>(&self, m: &BigUint, rng: &mut R) -> Result<Ciphertext> {
        if m >= &self.n {
            return Err(Error::PlaintextRange);
        }
        let r = loop {
            let r = random_below(rng, &self.n);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                break r;
            }
        };
        // (n+1)^m = 1 + m·n  (mod n²)
        let gm = (BigUint::one() + m * &self.n) % &self.n_squared;
        Ok(Ciphertext(gm * r.modpow(&self.n, &self.n_squared) % &self.n_squared))
    }

    /// Homomorphic addition of plaintexts.
    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
        Ciphertext(&a.0 * &b.0 % &self.n_squared)
    }

    /// Multiplies the plaintext by a public constant.
    pub fn mul_plain(&self, c: &Ciphertext, k: &BigUint) -> Ciphertext {
        Ciphertext(c.0.modpow(k, &self.n_squared))
    }
}

impl SecretKey {
    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigUint> {
        let pk = &self.public;
        if c.0 >= pk.n_squared || c.0.is_zero() {
            return Err(Error::PlaintextRange);
        }
        let u = c.0.modpow(&self.lambda, &pk.n_squared);
        let l = (u - 1u32) / &pk.n;
        Ok(l * &self.mu % &pk.n)
    }
}

/// Key pair from explicit primes. Small primes are accepted, which is what
/// makes textbook examples (p = 11, q = 13) reproducible.
pub fn keypair_from_primes(p: &BigUint, q: &BigUint) -> Result<KeyPair> {
    if p == q {
        return Err(Error::invalid("q", "primes must differ"));
    }
    let one = BigUint::one();
    let n = p * q;
    let p1 = p - &one;
    let q1 = q - &one;
    if !n.gcd(&(&p1 * &q1)).is_one() {
        return Err(Error::invalid("p", "gcd(n, (p-1)(q-1)) must be 1"));
    }
    let lambda = p1.lcm(&q1);
    let mu = lambda
        .modinv(&n)
        .ok_or_else(|| Error::invalid("p", "lambda is not invertible mod n"))?;
    let public = PublicKey::new(n);
    Ok(KeyPair {
        secret: SecretKey {
            lambda,
            mu,
            public: public.clone(),
        },
        public,
    })
}

/// Generates an `bits`-bit modulus from two seeded random primes.
pub fn keygen(bits: u64, seed: u64) -> Result<KeyPair> {
    if bits < 32 || !bits.is_multiple_of(2) {
        return Err(Error::invalid("key_bits", format!("{bits} must be even and at least 32")));
    }
    let mut rng = seed::derived_rng(seed, &[seed::stream::KEYGEN]);
    loop {
        let p = random_prime(bits / 2, &mut rng);
        let q = random_prime(bits / 2, &mut rng);
        if let Ok(kp) = keypair_from_primes(&p, &q) {
            debug_assert_eq!(kp.public.bits(), bits);
            return Ok(kp);
        }
    }
}

/// Signed fixed-point embedding of reals into `Z_n`.
#[derive(Debug, Clone)]
pub struct FixedPointCodec {
    pub scale: u64,
    n: BigUint,
    half: BigUint,
}

impl FixedPointCodec {
    pub fn new(scale: u64, public: &PublicKey) -> Result<Self> {
        if scale == 0 {
            return Err(Error::invalid("scale", "must be positive"));
        }
        Ok(FixedPointCodec {
            scale,
            n: public.n.clone(),
            half: &public.n >> 1,
        })
    }

    /// Encodes `v`, refusing values whose sum over `addends` such terms could
    /// wrap past `n/2`.
    pub fn encode(&self, v: f64, addends: usize) -> Result<BigUint> {
        let headroom = || Error::Headroom {
            value: format!("{v}"),
            addends,
        };
        if !v.is_finite() {
            return Err(headroom());
        }
        let k = (v * self.scale as f64).round();
        let mag = BigUint::from_f64(k.abs()).ok_or_else(headroom)?;
        if &mag * BigUint::from(addends.max(1)) >= self.half {
            return Err(headroom());
        }
        Ok(if k < 0.0 { &self.n - mag } else { mag })
    }

    pub fn decode(&self, m: &BigUint) -> f64 {
        let signed = if m > &self.half {
            BigInt::from_biguint(Sign::Minus, &self.n - m)
        } else {
            BigInt::from(m.clone())
        };
        signed.to_f64().unwrap_or(f64::NAN) / self.scale as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_key() -> KeyPair {
        keypair_from_primes(&BigUint::from(11u32), &BigUint::from(13u32)).unwrap()
    }

    #[test]
    fn textbook_key() {
        let kp = small_key();
        assert_eq!(kp.public.n, BigUint::from(143u32));
        let mut rng = seed::rng(1);
        for m in [0u32, 1, 42, 142] {
            let c = kp.public.encrypt(&BigUint::from(m), &mut rng).unwrap();
            assert_eq!(kp.secret.decrypt(&c).unwrap(), BigUint::from(m));
        }
        let a = kp.public.encrypt(&BigUint::from(3u32), &mut rng).unwrap();
        let b = kp.public.encrypt(&BigUint::from(4u32), &mut rng).unwrap();
        assert_eq!(kp.secret.decrypt(&kp.public.add(&a, &b)).unwrap(), BigUint::from(7u32));
        assert!(matches!(
            kp.public.encrypt(&BigUint::from(143u32), &mut rng),
            Err(Error::PlaintextRange)
        ));
    }

    #[test]
    fn sums_wrap_mod_n() {
        let kp = small_key();
        let mut rng = seed::rng(2);
        let a = kp.public.encrypt(&BigUint::from(100u32), &mut rng).unwrap();
        let b = kp.public.encrypt(&BigUint::from(100u32), &mut rng).unwrap();
        assert_eq!(kp.secret.decrypt(&kp.public.add(&a, &b)).unwrap(), BigUint::from(57u32));
    }

    #[test]
    fn encryption_is_randomized() {
        let kp = small_key();
        let mut rng = seed::rng(3);
        let m = BigUint::from(5u32);
        let a = kp.public.encrypt(&m, &mut rng).unwrap();
        let b = kp.public.encrypt(&m, &mut rng).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn primality_matches_sieve() {
        let mut rng = seed::rng(4);
        let limit = 5000usize;
        let mut sieve = vec![true; limit];
        sieve[0] = false;
        sieve[1] = false;
        for i in 2..limit {
            if sieve[i] {
                for j in (i * i..limit).step_by(i) {
                    sieve[j] = false;
                }
            }
        }
        for (i, &p) in sieve.iter().enumerate() {
            assert_eq!(is_probable_prime(&BigUint::from(i), &mut rng), p, "{i}");
        }
        // Carmichael numbers
        for c in [561u32, 1105, 1729, 2465, 2821, 6601, 8911, 41041, 825265] {
            assert!(!is_probable_prime(&BigUint::from(c), &mut rng));
        }
    }

    #[test]
    fn keygen_is_seeded_and_sized() {
        let a = keygen(256, 9).unwrap();
        let b = keygen(256, 9).unwrap();
        assert_eq!(a.public, b.public);
        assert_eq!(a.public.bits(), 256);
        assert_ne!(a.public, keygen(256, 10).unwrap().public);
    }

    #[test]
    fn fixed_point_examples() {
        let kp = keygen(128, 1).unwrap();
        let codec = FixedPointCodec::new(1 << 16, &kp.public).unwrap();
        let m = codec.encode(-1.5, 1).unwrap();
        assert_eq!(m, &kp.public.n - BigUint::from(98304u32));
        assert_eq!(codec.decode(&m), -1.5);
        assert_eq!(codec.decode(&codec.encode(0.25, 10).unwrap()), 0.25);
        assert!(matches!(codec.encode(1e40, 2), Err(Error::Headroom { .. })));
        assert!(codec.encode(f64::NAN, 1).is_err());
    }
}
