//! State directory layout: `ledger.log` (the chained reputation ledger)
//! and `registry/` with one canonical card document per DID. Load
//! re-verifies the ledger chain; a file that does not reproduce its
//! declared head digest is corrupt state.

use std::io;
use std::path::Path;

use acp_core::doc::{self, Value};
use acp_core::identity::Did;
use acp_core::reputation::Ledger;
use acp_core::semantic::validate_card;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt state: {0}")]
    CorruptState(String),
}

pub fn save_state(dir: &Path, ledger: &Ledger, cards: &[(Did, Value)]) -> Result<(), PersistError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("ledger.log"), ledger.to_file_string())?;
    let registry = dir.join("registry");
    std::fs::create_dir_all(&registry)?;
    for (did, card) in cards {
        // base58 ids are filesystem-safe
        let name = did.to_string().replace(':', "_");
        std::fs::write(registry.join(format!("{name}.json")), doc::encode(card))?;
    }
    Ok(())
}

/// Loads a state directory. A missing directory or missing pieces mean a
/// fresh state; present-but-inconsistent files are corruption.
pub fn load_state(dir: &Path) -> Result<(Ledger, Vec<(Did, Value)>), PersistError> {
    let ledger = match std::fs::read_to_string(dir.join("ledger.log")) {
        Ok(text) => {
            Ledger::from_file_str(&text).map_err(|e| PersistError::CorruptState(e.to_string()))?
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ledger::new(),
        Err(e) => return Err(e.into()),
    };

    let mut cards = Vec::new();
    let registry = dir.join("registry");
    if registry.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(&registry)?
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .map(|e| e.path())
            .collect();
        entries.sort();
        for path in entries {
            let bytes = std::fs::read(&path)?;
            let value = doc::decode(&bytes)
                .map_err(|e| PersistError::CorruptState(format!("{}: {e}", path.display())))?;
            let card = validate_card(&value)
                .map_err(|e| PersistError::CorruptState(format!("{}: {e}", path.display())))?;
            cards.push((card.identity, value));
        }
    }
    Ok((ledger, cards))
}
