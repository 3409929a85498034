//! Gate definitions on demand: a registry of in-process builders, remote
//! providers reached over a small binary protocol, and a memoizing cache.

pub mod builders;
pub mod remote;
pub mod wire;

use std::collections::HashMap;
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use num_rational::Rational64;
use thiserror::Error;

use crate::jaqal::number::format_rational;
use crate::pulse::GateDefinition;

pub use builders::{Calibration, Registry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("no gate named '{0}' is defined")]
    UnknownGate(String),
    #[error("gate provider at {addr} unavailable: {reason}")]
    RemoteUnavailable { addr: String, reason: String },
    #[error("gate '{name}' is invalid: {}", errors.join("; "))]
    InvalidDefinition { name: String, errors: Vec<String> },
    #[error("gate '{name}': {message}")]
    Builder { name: String, message: String },
    #[error("protocol error at byte {offset}: {reason}")]
    Protocol { offset: usize, reason: String },
}

/// Gate identity: name plus exact argument values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GateKey {
    pub name: String,
    pub args: Vec<Rational64>,
}

impl GateKey {
    pub fn new(name: impl Into<String>, args: Vec<Rational64>) -> GateKey {
        GateKey {
            name: name.into(),
            args,
        }
    }
}

impl fmt::Display for GateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        for a in &self.args {
            write!(f, " {}", format_rational(a))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope<'a> {
    Key(&'a GateKey),
    Name(&'a str),
    All,
}

#[derive(Debug, Clone)]
struct Entry {
    def: Arc<GateDefinition>,
    generation: u64,
    valid: bool,
    calibration: u64,
}

type EntryCell = Arc<Mutex<Option<Entry>>>;

/// Memoized definitions. Each key has its own lock, so one caller builds a
/// missing entry while others asking for the same key wait and everyone
/// else proceeds.
#[derive(Debug, Default)]
pub struct GateCache {
    entries: Mutex<HashMap<GateKey, EntryCell>>,
}

impl GateCache {
    fn cell(&self, key: &GateKey) -> EntryCell {
        let mut map = self.entries.lock().unwrap();
        match map.get(key) {
            Some(c) => c.clone(),
            None => {
                let c = EntryCell::default();
                map.insert(key.clone(), c.clone());
                c
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn generation(&self, key: &GateKey) -> Option<u64> {
        let cell = self.entries.lock().unwrap().get(key)?.clone();
        let g = cell.lock().unwrap().as_ref().map(|e| e.generation);
        g
    }

    /// Marks entries stale. Entries are never removed.
    pub fn invalidate(&self, scope: Scope) -> usize {
        let map = self.entries.lock().unwrap();
        let mut n = 0;
        for (k, cell) in map.iter() {
            let hit = match scope {
                Scope::Key(key) => k == key,
                Scope::Name(name) => k.name == name,
                Scope::All => true,
            };
            if hit {
                if let Some(e) = cell.lock().unwrap().as_mut() {
                    if e.valid {
                        e.valid = false;
                        n += 1;
                    }
                }
            }
        }
        n
    }

    pub fn keys(&self) -> Vec<GateKey> {
        let mut k: Vec<_> = self.entries.lock().unwrap().keys().cloned().collect();
        k.sort();
        k
    }
}

/// Where a gate name is resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub prefix: String,
    pub addr: SocketAddr,
}

/// Resolves gate calls to definitions, consulting the cache first.
pub struct Provider {
    registry: Registry,
    routes: Vec<Route>,
    calibration: RwLock<Calibration>,
    cache: GateCache,
    builds: AtomicU64,
    pub timeout: Duration,
    pub retries: u32,
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(100);

impl Provider {
    pub fn new(registry: Registry, calibration: Calibration) -> Provider {
        Provider {
            registry,
            routes: Vec::new(),
            calibration: RwLock::new(calibration),
            cache: GateCache::default(),
            builds: AtomicU64::new(0),
            timeout: DEFAULT_TIMEOUT,
            retries: 1,
        }
    }

    /// Standard builders with the default calibration.
    pub fn standard() -> Provider {
        Provider::new(Registry::standard(), Calibration::default())
    }

    /// Sends every name starting with `prefix` to a remote provider.
    pub fn route(mut self, prefix: impl Into<String>, addr: SocketAddr) -> Provider {
        self.routes.push(Route {
            prefix: prefix.into(),
            addr,
        });
        self
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn cache(&self) -> &GateCache {
        &self.cache
    }

    pub fn calibration(&self) -> Calibration {
        self.calibration.read().unwrap().clone()
    }

    /// Replaces the calibration; cached entries built against the old one
    /// are rebuilt on their next fetch.
    pub fn set_calibration(&self, c: Calibration) {
        *self.calibration.write().unwrap() = c;
    }

    /// Builder or remote invocations so far.
    pub fn builds(&self) -> u64 {
        self.builds.load(Ordering::Relaxed)
    }

    pub fn invalidate(&self, scope: Scope) -> usize {
        self.cache.invalidate(scope)
    }

    pub fn fetch(&self, key: &GateKey) -> Result<Arc<GateDefinition>, ProviderError> {
        let calibration = self.calibration();
        let chash = calibration.hash_value();
        let cell = self.cache.cell(key);
        let mut slot = cell.lock().unwrap();
        if let Some(e) = slot.as_ref() {
            if e.valid && e.calibration == chash {
                return Ok(e.def.clone());
            }
        }
        let def = Arc::new(self.build(key, &calibration)?);
        let generation = slot.as_ref().map_or(0, |e| e.generation + 1);
        *slot = Some(Entry {
            def: def.clone(),
            generation,
            valid: true,
            calibration: chash,
        });
        Ok(def)
    }

    /// Builds without consulting the cache.
    pub fn build(&self, key: &GateKey, calibration: &Calibration) -> Result<GateDefinition, ProviderError> {
        self.builds.fetch_add(1, Ordering::Relaxed);
        let def = match self.routes.iter().find(|r| key.name.starts_with(&r.prefix)) {
            Some(r) => remote::fetch(r.addr, key, self.timeout, self.retries)?,
            None => self.registry.build(key, calibration)?,
        };
        let errors = def.validate();
        if !errors.is_empty() {
            return Err(ProviderError::InvalidDefinition {
                name: key.name.clone(),
                errors: errors.iter().map(ToString::to_string).collect(),
            });
        }
        Ok(def)
    }
}

pub(crate) fn hash_f64s(values: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    for v in values {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(name: &str, args: &[i64]) -> GateKey {
        GateKey::new(name, args.iter().map(|&a| Rational64::from_integer(a)).collect())
    }

    #[test]
    fn second_fetch_is_cached() {
        let p = Provider::standard();
        let a = p.fetch(&key("Sx", &[0])).unwrap();
        let b = p.fetch(&key("Sx", &[0])).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(p.builds(), 1);
    }

    #[test]
    fn invalidation_rebuilds() {
        let p = Provider::standard();
        let k = key("Sx", &[0]);
        p.fetch(&k).unwrap();
        assert_eq!(p.invalidate(Scope::Key(&k)), 1);
        p.fetch(&k).unwrap();
        assert_eq!(p.builds(), 2);
        assert_eq!(p.cache().generation(&k), Some(1));
    }

    #[test]
    fn invalidate_scopes() {
        let p = Provider::standard();
        assert_eq!(p.invalidate(Scope::All), 0);
        for q in 0..3 {
            p.fetch(&key("Sx", &[q])).unwrap();
        }
        for q in 0..7 {
            p.fetch(&key("Sy", &[q])).unwrap();
        }
        assert_eq!(p.invalidate(Scope::Name("Sx")), 3);
        assert_eq!(p.invalidate(Scope::All), 7);
        assert_eq!(p.cache().len(), 10);
    }

    #[test]
    fn unknown_gate() {
        let p = Provider::standard();
        assert_eq!(
            p.fetch(&key("Nope", &[])).unwrap_err(),
            ProviderError::UnknownGate("Nope".into())
        );
    }

    #[test]
    fn calibration_change_rebuilds() {
        let p = Provider::standard();
        let k = key("Px", &[1]);
        let a = p.fetch(&k).unwrap();
        let mut c = p.calibration();
        c.qubit_amp *= 0.5;
        p.set_calibration(c);
        let b = p.fetch(&k).unwrap();
        assert_ne!(a, b);
        assert_eq!(p.builds(), 2);
    }

    #[test]
    fn concurrent_fetch_builds_once() {
        let p = Arc::new(Provider::standard());
        let k = key("MS", &[0, 1]);
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let p = p.clone();
                let k = k.clone();
                std::thread::spawn(move || p.fetch(&k).unwrap())
            })
            .collect();
        let defs: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(defs.windows(2).all(|w| Arc::ptr_eq(&w[0], &w[1])));
        assert_eq!(p.builds(), 1);
    }
}
