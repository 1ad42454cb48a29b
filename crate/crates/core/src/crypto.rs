// SPDX-License-Identifier: Apache-2.0

//! License proof schemes.
//!
//! Two signature schemes are available so that a chip can mix security
//! blocks whose verification rests on different hardness assumptions, plus
//! an AES-256 CMAC for blocks that hold a pre-shared symmetric key. All of
//! them authenticate the same [`LicensePayload`] byte string.

use std::fmt;
use std::str::FromStr;

use aes::Aes256;
use cmac::{Cmac, Mac};
use p256::ecdsa::signature::{Signer, Verifier};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{BatchId, BlockId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("unsupported signature scheme `{0}`")]
    UnsupportedScheme(String),
    #[error("keypair has no private part")]
    MissingPrivate,
    #[error("symmetric key must be 32 bytes, got {0}")]
    KeyLength(usize),
    #[error("public key bytes are not a valid {0} key")]
    BadPublicKey(SchemeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SchemeId {
    /// ECDSA over NIST P-256 with RFC 6979 nonces.
    #[serde(rename = "ecdsa-p256")]
    EcdsaP256,
    /// Ed25519, the alternative signature family.
    #[serde(rename = "ed25519")]
    AltSignature,
}

impl SchemeId {
    pub const ALL: [SchemeId; 2] = [SchemeId::EcdsaP256, SchemeId::AltSignature];

    pub fn tag(self) -> &'static str {
        match self {
            SchemeId::EcdsaP256 => "ecdsa-p256",
            SchemeId::AltSignature => "ed25519",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for SchemeId {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ecdsa-p256" | "EcdsaP256" => Ok(SchemeId::EcdsaP256),
            "ed25519" | "AltSignature" => Ok(SchemeId::AltSignature),
            other => Err(CryptoError::UnsupportedScheme(other.to_owned())),
        }
    }
}

/// Verifier bytes embedded in a security block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PublicKey {
    pub scheme: SchemeId,
    #[serde(with = "hex::serde")]
    pub bytes: Vec<u8>,
}

impl PublicKey {
    /// Checks that the bytes decode to a point/key of the declared scheme.
    pub fn validate(&self) -> Result<(), CryptoError> {
        let ok = match self.scheme {
            SchemeId::EcdsaP256 => p256::ecdsa::VerifyingKey::from_sec1_bytes(&self.bytes).is_ok(),
            SchemeId::AltSignature => <[u8; 32]>::try_from(self.bytes.as_slice())
                .ok()
                .and_then(|b| ed25519_dalek::VerifyingKey::from_bytes(&b).ok())
                .is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(CryptoError::BadPublicKey(self.scheme))
        }
    }
}

/// Authorizer-side signing key. The private part never leaves the keyring
/// except through the explicit theft hook in the authorizer.
#[derive(Clone, PartialEq, Eq)]
pub struct SigningKeypair {
    scheme: SchemeId,
    private_part: Option<Vec<u8>>,
    public_part: PublicKey,
}

impl fmt::Debug for SigningKeypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKeypair")
            .field("scheme", &self.scheme)
            .field(
                "private_part",
                &self.private_part.as_ref().map(|_| "<redacted>"),
            )
            .field("public_part", &hex::encode(&self.public_part.bytes))
            .finish()
    }
}

impl SigningKeypair {
    /// Deterministic key generation from a simulation seed.
    pub fn generate(scheme: SchemeId, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        match scheme {
            SchemeId::EcdsaP256 => {
                let sk = p256::ecdsa::SigningKey::random(&mut rng);
                let vk = p256::ecdsa::VerifyingKey::from(&sk);
                Self {
                    scheme,
                    private_part: Some(sk.to_bytes().to_vec()),
                    public_part: PublicKey {
                        scheme,
                        bytes: vk.to_encoded_point(true).as_bytes().to_vec(),
                    },
                }
            }
            SchemeId::AltSignature => {
                let sk = ed25519_dalek::SigningKey::generate(&mut rng);
                Self {
                    scheme,
                    private_part: Some(sk.to_bytes().to_vec()),
                    public_part: PublicKey {
                        scheme,
                        bytes: sk.verifying_key().to_bytes().to_vec(),
                    },
                }
            }
        }
    }

    pub fn scheme(&self) -> SchemeId {
        self.scheme
    }

    pub fn public_part(&self) -> &PublicKey {
        &self.public_part
    }

    pub fn has_private(&self) -> bool {
        self.private_part.is_some()
    }

    /// Copy with the private part dropped.
    pub fn public_only(&self) -> Self {
        Self {
            scheme: self.scheme,
            private_part: None,
            public_part: self.public_part.clone(),
        }
    }
}

/// Parses a scheme tag and generates a keypair for it.
pub fn generate_keypair(scheme_tag: &str, seed: u64) -> Result<SigningKeypair, CryptoError> {
    Ok(SigningKeypair::generate(scheme_tag.parse()?, seed))
}

pub fn sign_license(keypair: &SigningKeypair, payload: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let private = keypair
        .private_part
        .as_ref()
        .ok_or(CryptoError::MissingPrivate)?;
    Ok(match keypair.scheme {
        SchemeId::EcdsaP256 => {
            let sk = p256::ecdsa::SigningKey::from_slice(private).expect("stored key is valid");
            let sig: p256::ecdsa::Signature = sk.sign(payload);
            sig.to_bytes().to_vec()
        }
        SchemeId::AltSignature => {
            let bytes: [u8; 32] = private
                .as_slice()
                .try_into()
                .expect("stored key is 32 bytes");
            let sk = ed25519_dalek::SigningKey::from_bytes(&bytes);
            sk.sign(payload).to_bytes().to_vec()
        }
    })
}

/// Accepts iff `signature` is a valid signature of `payload` under `public`.
/// Malformed keys or signatures are rejections, never errors.
pub fn verify_signature(public: &PublicKey, payload: &[u8], signature: &[u8]) -> bool {
    match public.scheme {
        SchemeId::EcdsaP256 => {
            let Ok(vk) = p256::ecdsa::VerifyingKey::from_sec1_bytes(&public.bytes) else {
                return false;
            };
            let Ok(sig) = p256::ecdsa::Signature::from_slice(signature) else {
                return false;
            };
            vk.verify(payload, &sig).is_ok()
        }
        SchemeId::AltSignature => {
            let Ok(key) = <[u8; 32]>::try_from(public.bytes.as_slice()) else {
                return false;
            };
            let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&key) else {
                return false;
            };
            let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
                return false;
            };
            vk.verify_strict(payload, &sig).is_ok()
        }
    }
}

/// A 256-bit pre-shared key held in block antifuses.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetricKey {
    pub key_id: u32,
    #[serde(with = "hex::serde")]
    pub secret: [u8; 32],
    pub unique_per_block: bool,
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymmetricKey")
            .field("key_id", &self.key_id)
            .field("unique_per_block", &self.unique_per_block)
            .finish_non_exhaustive()
    }
}

pub const MAC_TAG_LEN: usize = 16;

fn cmac(key: &[u8]) -> Result<Cmac<Aes256>, CryptoError> {
    if key.len() != 32 {
        return Err(CryptoError::KeyLength(key.len()));
    }
    Ok(<Cmac<Aes256> as Mac>::new_from_slice(key).expect("length checked"))
}

/// AES-256-CMAC over the payload.
pub fn mac_tag(key: &[u8], payload: &[u8]) -> Result<[u8; MAC_TAG_LEN], CryptoError> {
    let mut mac = cmac(key)?;
    mac.update(payload);
    Ok(mac.finalize().into_bytes().into())
}

/// Constant-time tag comparison.
pub fn mac_verify(key: &[u8], payload: &[u8], tag: &[u8]) -> Result<bool, CryptoError> {
    let mut mac = cmac(key)?;
    mac.update(payload);
    Ok(mac.verify_slice(tag).is_ok())
}

/// The byte string every license proof authenticates.
///
/// Layout, all integers big-endian:
///
/// ```text
/// batch_id u32 | chip_id u64 | block index u32 | nonce echo [16] | grant_ops u32 | expiry u64
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LicensePayload {
    pub batch: BatchId,
    pub block: BlockId,
    pub nonce_echo: [u8; 16],
    pub grant_ops: u32,
    pub expiry: u64,
}

impl LicensePayload {
    pub const LEN: usize = 4 + 8 + 4 + 16 + 4 + 8;

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut out = [0u8; Self::LEN];
        out[0..4].copy_from_slice(&self.batch.0.to_be_bytes());
        out[4..12].copy_from_slice(&self.block.chip_id.to_be_bytes());
        out[12..16].copy_from_slice(&self.block.index.to_be_bytes());
        out[16..32].copy_from_slice(&self.nonce_echo);
        out[32..36].copy_from_slice(&self.grant_ops.to_be_bytes());
        out[36..44].copy_from_slice(&self.expiry.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8; Self::LEN]) -> Self {
        let u32_at = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_be_bytes(bytes[i..i + 8].try_into().unwrap());
        Self {
            batch: BatchId(u32_at(0)),
            block: BlockId::new(u64_at(4), u32_at(12)),
            nonce_echo: bytes[16..32].try_into().unwrap(),
            grant_ops: u32_at(32),
            expiry: u64_at(36),
        }
    }
}
