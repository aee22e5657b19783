//! Key files on disk: JSON with hex-encoded key material and the party's
//! role, shared by the command-line tool and language bindings.

use crate::crypto::{CryptoError, KeyPair, PrivateKey, Role};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed key file {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Serialize, Deserialize)]
pub struct KeyFile {
    pub public_key: String,
    pub private_key: String,
    pub role: Role,
}

pub fn save_keypair(path: &Path, keypair: &KeyPair, role: Role) -> Result<(), FixtureError> {
    let file = KeyFile {
        public_key: keypair.public.to_hex(),
        private_key: keypair.private.to_hex(),
        role,
    };
    let body = serde_json::to_string_pretty(&file).unwrap();
    std::fs::write(path, body + "\n").map_err(|source| FixtureError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_keypair(path: &Path) -> Result<(KeyPair, Role), FixtureError> {
    let body = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: KeyFile = serde_json::from_str(&body).map_err(|e| FixtureError::Malformed {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let private = PrivateKey::from_hex(&file.private_key)?;
    let keypair = KeyPair {
        public: private.public(),
        private,
    };
    if keypair.public.to_hex() != file.public_key {
        return Err(FixtureError::Malformed {
            path: path.display().to_string(),
            reason: "public key does not match private key".into(),
        });
    }
    Ok((keypair, file.role))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn keypair_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.key");
        let kp = KeyPair::generate_from_rng(&mut ChaCha12Rng::seed_from_u64(1));
        save_keypair(&path, &kp, Role::DataSubject).unwrap();
        let (back, role) = load_keypair(&path).unwrap();
        assert_eq!(back.public, kp.public);
        assert_eq!(role, Role::DataSubject);
    }

    #[test]
    fn mismatched_key_halves_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.key");
        let a = KeyPair::generate_from_rng(&mut ChaCha12Rng::seed_from_u64(2));
        let b = KeyPair::generate_from_rng(&mut ChaCha12Rng::seed_from_u64(3));
        let file = KeyFile {
            public_key: a.public.to_hex(),
            private_key: b.private.to_hex(),
            role: Role::DataController,
        };
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        assert!(matches!(
            load_keypair(&path),
            Err(FixtureError::Malformed { .. })
        ));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            load_keypair(Path::new("/nonexistent/nope.key")),
            Err(FixtureError::Io { .. })
        ));
    }
}
