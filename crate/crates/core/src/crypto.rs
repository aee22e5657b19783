//! Key material, signatures, and the hybrid encryption envelope.
//!
//! A single Ed25519 keypair serves both roles: it signs directly, and its
//! birationally equivalent X25519 form receives encrypted payloads. One
//! 32-byte public key is therefore enough to address a party for signing
//! and for encryption.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Envelope layout: ephemeral X25519 public key, then the AEAD nonce, then
/// ciphertext plus tag.
const EPH_LEN: usize = 32;
const NONCE_LEN: usize = 24;
const TAG_LEN: usize = 16;

/// Domain separator mixed into the envelope key derivation.
const ENVELOPE_KDF_TAG: &[u8] = b"pdm-envelope-v1";

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("entropy source unavailable: {0}")]
    Entropy(String),
    #[error("invalid public key bytes")]
    InvalidPublicKey,
    #[error("invalid {what} encoding")]
    InvalidEncoding { what: &'static str },
    #[error("ciphertext too short")]
    TruncatedCiphertext,
    #[error("decryption failed")]
    DecryptionFailed,
    #[error("encryption failed")]
    EncryptionFailed,
}

fn decode_hex_exact<const N: usize>(s: &str, what: &'static str) -> Result<[u8; N], CryptoError> {
    let v = hex::decode(s).map_err(|_| CryptoError::InvalidEncoding { what })?;
    v.try_into().map_err(|_| CryptoError::InvalidEncoding { what })
}

/// Ed25519 public key, hex-addressable.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey([u8; 32]);

impl PublicKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        PublicKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        Ok(PublicKey(decode_hex_exact(s, "public key")?))
    }

    /// Signature check. Malformed key bytes or signature bytes reject.
    pub fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        let Ok(vk) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&signature.bytes);
        vk.verify(message, &sig).is_ok()
    }

    /// Encrypts `plaintext` so only the holder of the matching private key
    /// can read it. Ephemeral-static X25519 agreement, SHA-256 key
    /// derivation, XChaCha20-Poly1305 sealing.
    pub fn encrypt(&self, plaintext: &[u8]) -> Result<CipherText, CryptoError> {
        let vk = VerifyingKey::from_bytes(&self.0).map_err(|_| CryptoError::InvalidPublicKey)?;
        let recipient = x25519_dalek::PublicKey::from(vk.to_montgomery().to_bytes());

        let mut rng = OsRng;
        let eph = x25519_dalek::EphemeralSecret::random_from_rng(&mut rng);
        let eph_pub = x25519_dalek::PublicKey::from(&eph);
        let shared = eph.diffie_hellman(&recipient);

        let key = envelope_key(shared.as_bytes(), eph_pub.as_bytes(), recipient.as_bytes());
        let aead = XChaCha20Poly1305::new((&key).into());
        let mut nonce = [0u8; NONCE_LEN];
        rng.try_fill_bytes(&mut nonce)
            .map_err(|e| CryptoError::Entropy(e.to_string()))?;

        let sealed = aead
            .encrypt(
                XNonce::from_slice(&nonce),
                Payload {
                    msg: plaintext,
                    aad: ENVELOPE_KDF_TAG,
                },
            )
            .map_err(|_| CryptoError::EncryptionFailed)?;

        let mut bytes = Vec::with_capacity(EPH_LEN + NONCE_LEN + sealed.len());
        bytes.extend_from_slice(eph_pub.as_bytes());
        bytes.extend_from_slice(&nonce);
        bytes.extend_from_slice(&sealed);
        Ok(CipherText {
            bytes,
            recipient: *self,
        })
    }
}

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

impl std::fmt::Display for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Serialize public keys as hex strings.
impl Serialize for PublicKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PublicKey::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Ed25519 private key (32-byte seed). The matching X25519 secret for
/// envelope decryption derives from the same seed.
#[derive(Clone)]
pub struct PrivateKey([u8; 32]);

impl PrivateKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        PrivateKey(bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        Ok(PrivateKey(decode_hex_exact(s, "private key")?))
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(SigningKey::from_bytes(&self.0).verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        let sk = SigningKey::from_bytes(&self.0);
        Signature {
            bytes: sk.sign(message).to_bytes(),
            signer: PublicKey(sk.verifying_key().to_bytes()),
        }
    }

    /// Opens an envelope produced by [`PublicKey::encrypt`]. Any mismatch
    /// between key and envelope surfaces as `DecryptionFailed`.
    pub fn decrypt(&self, ciphertext: &CipherText) -> Result<Vec<u8>, CryptoError> {
        let bytes = &ciphertext.bytes;
        if bytes.len() < EPH_LEN + NONCE_LEN + TAG_LEN {
            return Err(CryptoError::TruncatedCiphertext);
        }
        let eph_pub: [u8; EPH_LEN] = bytes[..EPH_LEN].try_into().unwrap();
        let nonce = &bytes[EPH_LEN..EPH_LEN + NONCE_LEN];
        let sealed = &bytes[EPH_LEN + NONCE_LEN..];

        let sk = SigningKey::from_bytes(&self.0);
        let scalar = sk.to_scalar_bytes();
        let my_mont = sk.verifying_key().to_montgomery().to_bytes();
        let shared = x25519_dalek::x25519(scalar, eph_pub);

        let key = envelope_key(&shared, &eph_pub, &my_mont);
        let aead = XChaCha20Poly1305::new((&key).into());
        aead.decrypt(
            XNonce::from_slice(nonce),
            Payload {
                msg: sealed,
                aad: ENVELOPE_KDF_TAG,
            },
        )
        .map_err(|_| CryptoError::DecryptionFailed)
    }
}

impl std::fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // Never leak seed bytes through debug output.
        f.write_str("PrivateKey(..)")
    }
}

impl Serialize for PrivateKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PrivateKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PrivateKey::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

fn envelope_key(shared: &[u8; 32], eph_pub: &[u8; 32], recipient: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(ENVELOPE_KDF_TAG);
    h.update(shared);
    h.update(eph_pub);
    h.update(recipient);
    h.finalize().into()
}

/// Detached signature with the claimed signer attached for bookkeeping.
/// Verification always takes the key explicitly; the `signer` field is
/// advisory.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    #[serde(with = "hex_sig")]
    pub bytes: [u8; 64],
    pub signer: PublicKey,
}

impl Signature {
    pub fn to_hex(&self) -> String {
        hex::encode(self.bytes)
    }

    pub fn from_hex(s: &str, signer: PublicKey) -> Result<Self, CryptoError> {
        Ok(Signature {
            bytes: decode_hex_exact(s, "signature")?,
            signer,
        })
    }
}

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({}..)", &self.to_hex()[..16])
    }
}

mod hex_sig {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; 64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 64], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(&s).map_err(serde::de::Error::custom)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("signature must be 64 bytes"))
    }
}

/// Sealed envelope addressed to `recipient`.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherText {
    #[serde(with = "hex_vec")]
    pub bytes: Vec<u8>,
    pub recipient: PublicKey,
}

impl CipherText {
    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }

    pub fn from_hex(s: &str, recipient: PublicKey) -> Result<Self, CryptoError> {
        Ok(CipherText {
            bytes: hex::decode(s).map_err(|_| CryptoError::InvalidEncoding { what: "ciphertext" })?,
            recipient,
        })
    }
}

impl std::fmt::Debug for CipherText {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CipherText({} bytes)", self.bytes.len())
    }
}

mod hex_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &Vec<u8>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}

/// Signing and decryption capability in one place.
#[derive(Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

impl KeyPair {
    /// Fresh keypair from the operating system entropy source. Fails
    /// rather than proceeding with weak entropy.
    pub fn generate() -> Result<Self, CryptoError> {
        let mut seed = [0u8; 32];
        OsRng
            .try_fill_bytes(&mut seed)
            .map_err(|e| CryptoError::Entropy(e.to_string()))?;
        Ok(Self::from_seed(seed))
    }

    /// Deterministic generation for fixtures and simulations.
    pub fn generate_from_rng<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        let private = PrivateKey(seed);
        KeyPair {
            public: private.public(),
            private,
        }
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        self.private.sign(message)
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "KeyPair({})", self.public.to_hex())
    }
}

/// Party roles. `External` is the outside view everyone else gets.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    External,
    DataSubject,
    DataController,
    DataProcessor,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::External => "external",
            Role::DataSubject => "data_subject",
            Role::DataController => "data_controller",
            Role::DataProcessor => "data_processor",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "external" => Ok(Role::External),
            "data_subject" | "ds" => Ok(Role::DataSubject),
            "data_controller" | "dc" => Ok(Role::DataController),
            "data_processor" | "dp" => Ok(Role::DataProcessor),
            _ => Err(CryptoError::InvalidEncoding { what: "role" }),
        }
    }
}

/// Composite identity for one managed dataset: the subject's pair, the
/// controller's pair, and the dataset encryption pair.
#[derive(Clone, Debug)]
pub struct ComplexIdentity {
    pub subject: KeyPair,
    pub controller: KeyPair,
    pub encryption: KeyPair,
}

impl ComplexIdentity {
    /// Role-scoped projection. Each view carries all three public keys and
    /// only the private keys that role legitimately holds: the subject
    /// holds its signing key and the dataset decryption key, the
    /// controller holds its signing key alone, processors and outsiders
    /// hold none.
    pub fn view(&self, role: Role) -> IdentityView {
        let (sk_subject, sk_controller, sk_encryption) = match role {
            Role::DataSubject => (
                Some(self.subject.private.clone()),
                None,
                Some(self.encryption.private.clone()),
            ),
            Role::DataController => (None, Some(self.controller.private.clone()), None),
            Role::DataProcessor | Role::External => (None, None, None),
        };
        IdentityView {
            role,
            pk_subject: self.subject.public,
            pk_controller: self.controller.public,
            pk_encryption: self.encryption.public,
            sk_subject,
            sk_controller,
            sk_encryption,
        }
    }
}

/// What one role sees of a composite identity. Constructed only by
/// [`ComplexIdentity::view`], so a view can never hold a private key its
/// role is not entitled to.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentityView {
    pub role: Role,
    pub pk_subject: PublicKey,
    pub pk_controller: PublicKey,
    pub pk_encryption: PublicKey,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sk_subject: Option<PrivateKey>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sk_controller: Option<PrivateKey>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sk_encryption: Option<PrivateKey>,
}
