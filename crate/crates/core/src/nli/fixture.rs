//! Offline backend serving precomputed triples and labels from a JSON file.
//!
//! File layout:
//!
//! ```json
//! {
//!   "nli": { "<pair hash>": {"entailment": 0.7, "contradiction": 0.1, "neutral": 0.2} },
//!   "obligations": { "<sentence hash>": {"is_obligation": true, "confidence": 0.9} },
//!   "nli_manifest": [{"hash": "...", "role": "matrix", "premise": "...", "hypothesis": "..."}],
//!   "obligation_manifest": [{"hash": "...", "sentence": "..."}]
//! }
//! ```
//!
//! The manifests hold the plain text behind every hash and are checked on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendKind, GatewayError, NliBackend, NliPair, NliProbs, NliRole, ObligationBackend, ObligationLabel};

/// Content hash of an NLI request: SHA-256 over role, premise and hypothesis.
pub fn pair_hash(role: NliRole, premise: &str, hypothesis: &str) -> String {
    let mut h = Sha256::new();
    h.update(role.as_str().as_bytes());
    h.update([0]);
    h.update(premise.as_bytes());
    h.update([0]);
    h.update(hypothesis.as_bytes());
    hex::encode(h.finalize())
}

pub fn obligation_hash(sentence: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"obligation");
    h.update([0]);
    h.update(sentence.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliManifestEntry {
    pub hash: String,
    pub role: NliRole,
    pub premise: String,
    pub hypothesis: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObligationManifestEntry {
    pub hash: String,
    pub sentence: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureStore {
    #[serde(default)]
    pub nli: BTreeMap<String, NliProbs>,
    #[serde(default)]
    pub obligations: BTreeMap<String, ObligationLabel>,
    #[serde(default)]
    pub nli_manifest: Vec<NliManifestEntry>,
    #[serde(default)]
    pub obligation_manifest: Vec<ObligationManifestEntry>,
}

impl FixtureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_nli(&mut self, role: NliRole, premise: &str, hypothesis: &str, probs: NliProbs) -> &mut Self {
        let hash = pair_hash(role, premise, hypothesis);
        if self.nli.insert(hash.clone(), probs).is_none() {
            self.nli_manifest.push(NliManifestEntry {
                hash,
                role,
                premise: premise.to_string(),
                hypothesis: hypothesis.to_string(),
            });
        }
        self
    }

    pub fn insert_obligation(&mut self, sentence: &str, label: ObligationLabel) -> &mut Self {
        let hash = obligation_hash(sentence);
        if self.obligations.insert(hash.clone(), label).is_none() {
            self.obligation_manifest.push(ObligationManifestEntry {
                hash,
                sentence: sentence.to_string(),
            });
        }
        self
    }

    pub fn get_nli(&self, role: NliRole, premise: &str, hypothesis: &str) -> Option<NliProbs> {
        self.nli.get(&pair_hash(role, premise, hypothesis)).copied()
    }

    /// Checks that every manifest entry hashes to its key and every triple is
    /// on the simplex.
    pub fn verify(&self) -> Result<(), GatewayError> {
        for e in &self.nli_manifest {
            if pair_hash(e.role, &e.premise, &e.hypothesis) != e.hash {
                return Err(GatewayError::Fixture(format!("manifest hash mismatch for {}", e.hash)));
            }
            if !self.nli.contains_key(&e.hash) {
                return Err(GatewayError::Fixture(format!("manifest entry {} has no triple", e.hash)));
            }
        }
        for e in &self.obligation_manifest {
            if obligation_hash(&e.sentence) != e.hash {
                return Err(GatewayError::Fixture(format!("manifest hash mismatch for {}", e.hash)));
            }
        }
        for (hash, p) in &self.nli {
            p.check()
                .map_err(|m| GatewayError::Fixture(format!("triple {hash}: {m}")))?;
        }
        Ok(())
    }

    pub fn from_json_str(json: &str) -> Result<Self, GatewayError> {
        let store: FixtureStore =
            serde_json::from_str(json).map_err(|e| GatewayError::Fixture(e.to_string()))?;
        store.verify()?;
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("fixture store always serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_json_string())
    }
}

#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    store: FixtureStore,
}

impl FixtureBackend {
    pub fn new(store: FixtureStore) -> Self {
        Self { store }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        Ok(Self::new(FixtureStore::load(path)?))
    }

    pub fn store(&self) -> &FixtureStore {
        &self.store
    }
}

impl NliBackend for FixtureBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Fixture
    }

    fn score(&self, role: NliRole, pairs: &[NliPair]) -> Result<Vec<NliProbs>, GatewayError> {
        pairs
            .iter()
            .enumerate()
            .map(|(index, p)| {
                let hash = pair_hash(role, &p.premise, &p.hypothesis);
                self.store
                    .nli
                    .get(&hash)
                    .copied()
                    .ok_or(GatewayError::FixtureMiss { index, hash })
            })
            .collect()
    }
}

impl ObligationBackend for FixtureBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Fixture
    }

    fn classify(&self, sentences: &[String]) -> Result<Vec<ObligationLabel>, GatewayError> {
        sentences
            .iter()
            .enumerate()
            .map(|(index, s)| {
                let hash = obligation_hash(s);
                self.store
                    .obligations
                    .get(&hash)
                    .copied()
                    .ok_or(GatewayError::FixtureMiss { index, hash })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nli::Gateway;
    use std::sync::Arc;

    fn probs(e: f64, c: f64, n: f64) -> NliProbs {
        NliProbs::new(e, c, n).unwrap()
    }

    #[test]
    fn fixture_echoes_stored_triple() {
        let mut store = FixtureStore::new();
        store.insert_nli(NliRole::Matrix, "The firm must report.", "Firms report.", probs(0.7, 0.1, 0.2));
        let gw = Gateway::uniform(Arc::new(FixtureBackend::new(store)));
        let out = gw
            .score_nli(&[NliPair::new("The firm must report.", "Firms report.")], NliRole::Matrix)
            .unwrap();
        assert_eq!(out, vec![probs(0.7, 0.1, 0.2)]);
    }

    #[test]
    fn miss_names_the_pair_index() {
        let mut store = FixtureStore::new();
        store
            .insert_nli(NliRole::Matrix, "p0", "h", probs(0.5, 0.2, 0.3))
            .insert_nli(NliRole::Matrix, "p1", "h", probs(0.4, 0.3, 0.3));
        let gw = Gateway::uniform(Arc::new(FixtureBackend::new(store)));
        let pairs = vec![NliPair::new("p0", "h"), NliPair::new("p1", "h"), NliPair::new("p2", "h")];
        match gw.score_nli(&pairs, NliRole::Matrix) {
            Err(GatewayError::FixtureMiss { index, hash }) => {
                assert_eq!(index, 2);
                assert_eq!(hash, pair_hash(NliRole::Matrix, "p2", "h"));
            }
            other => panic!("unexpected {other:?}"),
        }
        // role is part of the key
        assert!(gw.score_nli(&pairs[..1], NliRole::Coverage).is_err());
    }

    #[test]
    fn obligation_lookup_and_miss() {
        let mut store = FixtureStore::new();
        store.insert_obligation("You must file.", ObligationLabel { is_obligation: true, confidence: 0.97 });
        let gw = Gateway::uniform(Arc::new(FixtureBackend::new(store)));
        let got = gw.classify_obligations(&["You must file.".into()]).unwrap();
        assert!(got[0].is_obligation);
        assert!(matches!(
            gw.classify_obligations(&["You must file.".into(), "Other.".into()]),
            Err(GatewayError::FixtureMiss { index: 1, .. })
        ));
    }

    #[test]
    fn file_round_trip_and_verification() {
        let mut store = FixtureStore::new();
        store.insert_nli(NliRole::Coverage, "o", "a", probs(0.8, 0.0, 0.2));
        store.insert_obligation("o", ObligationLabel { is_obligation: true, confidence: 1.0 });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.json");
        store.save(&path).unwrap();
        assert_eq!(FixtureStore::load(&path).unwrap(), store);

        let mut tampered = store.clone();
        tampered.nli_manifest[0].premise = "changed".into();
        assert!(FixtureStore::from_json_str(&tampered.to_json_string()).is_err());
        let bad = r#"{"nli": {"x": {"entailment": 0.9, "contradiction": 0.9, "neutral": 0.0}}}"#;
        assert!(FixtureStore::from_json_str(bad).is_err());
    }
}
