use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{encoder_to_dsl, validate_definition, DefinitionError, EncoderDefinition};
use crate::expr::RelationName;

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("invalid definition for {relation}: {source}")]
    Invalid {
        relation: RelationName,
        #[source]
        source: DefinitionError,
    },
    #[error("failed to access registry file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed registry file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Active encoder per relation plus the append-only library of accepted
/// definitions. Builtins are active until something else is installed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderRegistry {
    active: BTreeMap<RelationName, EncoderDefinition>,
    library: Vec<EncoderDefinition>,
    #[serde(default)]
    generation: u64,
}

impl Default for EncoderRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl EncoderRegistry {
    pub fn with_builtins() -> Self {
        let active = RelationName::ALL.iter().map(|&r| (r, encoder_to_dsl(r))).collect();
        Self {
            active,
            library: Vec::new(),
            generation: 0,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, RegistryError> {
        let mut reg: EncoderRegistry = serde_json::from_str(text)?;
        // relations missing from the file fall back to their builtin
        for r in RelationName::ALL {
            reg.active.entry(r).or_insert_with(|| encoder_to_dsl(r));
        }
        for def in reg.active.values().chain(reg.library.iter()) {
            validate_definition(def).map_err(|source| RegistryError::Invalid {
                relation: def.relation,
                source,
            })?;
        }
        Ok(reg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RegistryError> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serialization is infallible")
    }

    pub fn active(&self, relation: RelationName) -> &EncoderDefinition {
        &self.active[&relation]
    }

    pub fn library(&self) -> &[EncoderDefinition] {
        &self.library
    }

    /// Incremented on every change to the active set.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Most recently accepted definition for `relation`, if any.
    pub fn accepted(&self, relation: RelationName) -> Option<&EncoderDefinition> {
        self.library.iter().rev().find(|d| d.relation == relation)
    }

    /// Makes `def` active without recording it in the library.
    pub fn install(&mut self, def: EncoderDefinition) -> Result<(), RegistryError> {
        validate_definition(&def).map_err(|source| RegistryError::Invalid {
            relation: def.relation,
            source,
        })?;
        self.active.insert(def.relation, def);
        self.generation += 1;
        Ok(())
    }

    /// Appends `def` to the library and makes it active.
    pub fn accept(&mut self, def: EncoderDefinition) -> Result<(), RegistryError> {
        self.install(def.clone())?;
        self.library.push(def);
        Ok(())
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        RegistrySnapshot {
            encoders: Arc::new(self.active.clone()),
            generation: self.generation,
        }
    }
}

/// Immutable view of the active encoders taken at the start of a run.
#[derive(Debug, Clone)]
pub struct RegistrySnapshot {
    encoders: Arc<BTreeMap<RelationName, EncoderDefinition>>,
    generation: u64,
}

impl RegistrySnapshot {
    pub fn from_definitions(defs: impl IntoIterator<Item = EncoderDefinition>) -> Self {
        Self {
            encoders: Arc::new(defs.into_iter().map(|d| (d.relation, d)).collect()),
            generation: 0,
        }
    }

    pub fn get(&self, relation: RelationName) -> Option<&EncoderDefinition> {
        self.encoders.get(&relation)
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::dsl::build::*;

    #[test]
    fn builtins_are_active_for_every_relation() {
        let reg = EncoderRegistry::with_builtins();
        for r in RelationName::ALL {
            assert_eq!(reg.active(r).relation, r);
            assert!(reg.accepted(r).is_none());
        }
    }

    #[test]
    fn accept_appends_and_activates() {
        let mut reg = EncoderRegistry::with_builtins();
        let snap = reg.snapshot();
        let def = EncoderDefinition {
            relation: RelationName::Near,
            metadata: "test".into(),
            body: c(0.5),
        };
        reg.accept(def.clone()).unwrap();
        assert_eq!(reg.active(RelationName::Near), &def);
        assert_eq!(reg.accepted(RelationName::Near), Some(&def));
        assert_eq!(reg.library().len(), 1);
        assert_eq!(reg.generation(), 1);
        // the earlier snapshot is unaffected
        assert_eq!(snap.get(RelationName::Near).unwrap().metadata, "builtin");
    }

    #[test]
    fn invalid_install_is_rejected() {
        let mut reg = EncoderRegistry::with_builtins();
        let def = EncoderDefinition {
            relation: RelationName::Large,
            metadata: String::new(),
            body: center(crate::encoder::dsl::ObjRef::J, crate::encoder::dsl::Axis::X),
        };
        assert!(reg.install(def).is_err());
        assert_eq!(reg.generation(), 0);
    }

    #[test]
    fn file_round_trip() {
        let mut reg = EncoderRegistry::with_builtins();
        reg.accept(EncoderDefinition {
            relation: RelationName::Far,
            metadata: "x".into(),
            body: c(2.0),
        })
        .unwrap();
        let back = EncoderRegistry::from_json_str(&reg.to_json_string()).unwrap();
        assert_eq!(back, reg);
    }
}
