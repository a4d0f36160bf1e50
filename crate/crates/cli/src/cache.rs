//! On-disk cache of derived equation systems, keyed by a hash of the
//! system description and the order. Entries are the plain text format of
//! [`MomentODESystem::to_text`].

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use cumulant_core::eom::{generate_closed_system, MomentODESystem, SystemSpec};

pub fn cache_key(sys: &SystemSpec, order: usize) -> String {
    let mut h = Sha256::new();
    h.update(b"cumulant-eom 1\n");
    h.update(format!("order {order}\n").as_bytes());
    h.update(sys.describe().as_bytes());
    hex::encode(h.finalize())
}

pub fn cache_path(dir: &Path, sys: &SystemSpec, order: usize) -> PathBuf {
    dir.join(format!("{}.eqs", cache_key(sys, order)))
}

/// Loads the system from `dir` or derives and stores it. Returns whether
/// the cache was hit. Unreadable entries are re-derived.
pub fn load_or_derive(sys: &SystemSpec, order: usize, dir: Option<&Path>) -> Result<(MomentODESystem, bool)> {
    let Some(dir) = dir else {
        return Ok((generate_closed_system(sys, order)?, false));
    };
    let path = cache_path(dir, sys, order);
    if let Ok(text) = fs::read_to_string(&path) {
        match MomentODESystem::from_text(&text) {
            Ok(ms) if ms.order == order && ms.n_sites == sys.n_sites => return Ok((ms, true)),
            Ok(_) => log::warn!("{}: cache entry does not match, re-deriving", path.display()),
            Err(e) => log::warn!("{}: {e}, re-deriving", path.display()),
        }
    }
    let ms = generate_closed_system(sys, order)?;
    fs::create_dir_all(dir).with_context(|| format!("creating cache dir {}", dir.display()))?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, ms.to_text()).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
    Ok((ms, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cumulant_core::models::{build_chain_system, DipoleChainParams};

    #[test]
    fn cached_equals_fresh() {
        let dir = tempfile::tempdir().unwrap();
        let sys = build_chain_system(&DipoleChainParams { n: 3, ..Default::default() }).unwrap();
        let (fresh, hit) = load_or_derive(&sys, 2, Some(dir.path())).unwrap();
        assert!(!hit);
        let (cached, hit) = load_or_derive(&sys, 2, Some(dir.path())).unwrap();
        assert!(hit);
        assert_eq!(cached.to_text(), fresh.to_text());
        assert_eq!(cached.to_text(), generate_closed_system(&sys, 2).unwrap().to_text());
    }

    #[test]
    fn key_depends_on_coefficients_and_order() {
        let a = build_chain_system(&DipoleChainParams { n: 2, ..Default::default() }).unwrap();
        let b = build_chain_system(&DipoleChainParams { n: 2, d_over_lambda: 0.2, ..Default::default() }).unwrap();
        assert_ne!(cache_key(&a, 1), cache_key(&b, 1));
        assert_ne!(cache_key(&a, 1), cache_key(&a, 2));
        assert_eq!(cache_key(&a, 2), cache_key(&a.clone(), 2));
    }

    #[test]
    fn corrupt_entry_is_rederived() {
        let dir = tempfile::tempdir().unwrap();
        let sys = build_chain_system(&DipoleChainParams { n: 2, ..Default::default() }).unwrap();
        fs::write(cache_path(dir.path(), &sys, 1), "garbage").unwrap();
        let (_, hit) = load_or_derive(&sys, 1, Some(dir.path())).unwrap();
        assert!(!hit);
        assert!(load_or_derive(&sys, 1, Some(dir.path())).unwrap().1);
    }
}
