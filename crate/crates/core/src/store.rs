//! Bounded program cache keyed by cluster id.
//!
//! Capacity is enforced on both entry count and total program bytes; when
//! either is exceeded the least recently used entries are evicted. Recency is
//! a monotonic counter. Evicting an entry never touches its cluster.
//!
//! On-disk layout:
//!
//! ```text
//! {dir}/index                     one JSON record per line: cluster_id, file, size, created_at_ms
//! {dir}/programs/{cluster_id}.prog  serialized ProgramSource
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterId;
use crate::program::{compile, CompileError, CompileOptions, CompiledProgram, ProgramSource};
use crate::prompt::now_ms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStoreConfig {
    pub max_entries: usize,
    pub max_total_bytes: usize,
}

impl Default for CacheStoreConfig {
    fn default() -> Self {
        Self {
            max_entries: 4096,
            max_total_bytes: 64 * 1024 * 1024,
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cache io: {0}")]
    Io(#[from] std::io::Error),
    #[error("cache index line {line}: {message}")]
    Index { line: usize, message: String },
    #[error("cached program for cluster {cluster_id}: {source}")]
    Program {
        cluster_id: ClusterId,
        source: CompileError,
    },
}

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub cluster_id: ClusterId,
    pub program: CompiledProgram,
    pub created_at_ms: u64,
    pub last_used: u64,
    pub hits: u64,
    pub size_bytes: usize,
}

#[derive(Debug, Default)]
struct Inner {
    entries: HashMap<ClusterId, CacheEntry>,
    by_recency: BTreeMap<u64, ClusterId>,
    clock: u64,
    total_bytes: usize,
}

impl Inner {
    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    fn remove(&mut self, id: ClusterId) -> Option<CacheEntry> {
        let entry = self.entries.remove(&id)?;
        self.by_recency.remove(&entry.last_used);
        self.total_bytes -= entry.size_bytes;
        Some(entry)
    }

    fn touch(&mut self, id: ClusterId) -> Option<&mut CacheEntry> {
        let now = self.tick();
        let entry = self.entries.get_mut(&id)?;
        self.by_recency.remove(&entry.last_used);
        entry.last_used = now;
        self.by_recency.insert(now, id);
        Some(entry)
    }
}

#[derive(Debug)]
pub struct CacheStore {
    config: CacheStoreConfig,
    inner: Mutex<Inner>,
}

#[derive(Serialize, Deserialize)]
struct IndexRecord {
    cluster_id: ClusterId,
    file: String,
    size: usize,
    created_at_ms: u64,
}

impl CacheStore {
    pub fn new(config: CacheStoreConfig) -> Self {
        Self {
            config,
            inner: Mutex::new(Inner::default()),
        }
    }

    pub fn config(&self) -> CacheStoreConfig {
        self.config
    }

    /// Inserts or replaces the entry for `cluster_id`, then evicts least
    /// recently used entries until both caps hold. Returns evicted ids.
    pub fn put(&self, cluster_id: ClusterId, program: CompiledProgram) -> Vec<ClusterId> {
        self.put_at(cluster_id, program, now_ms())
    }

    fn put_at(&self, cluster_id: ClusterId, program: CompiledProgram, created_at_ms: u64) -> Vec<ClusterId> {
        let mut inner = self.inner.lock();
        inner.remove(cluster_id);
        let now = inner.tick();
        let size_bytes = program.size_bytes();
        inner.total_bytes += size_bytes;
        inner.by_recency.insert(now, cluster_id);
        inner.entries.insert(
            cluster_id,
            CacheEntry {
                cluster_id,
                program,
                created_at_ms,
                last_used: now,
                hits: 0,
                size_bytes,
            },
        );
        let mut evicted = Vec::new();
        while inner.entries.len() > self.config.max_entries
            || inner.total_bytes > self.config.max_total_bytes
        {
            let Some((_, &oldest)) = inner.by_recency.iter().next() else {
                break;
            };
            inner.remove(oldest);
            evicted.push(oldest);
        }
        evicted
    }

    /// Returns the entry, bumping its recency and hit count.
    pub fn get(&self, cluster_id: ClusterId) -> Option<CacheEntry> {
        let mut inner = self.inner.lock();
        let entry = inner.touch(cluster_id)?;
        entry.hits += 1;
        Some(entry.clone())
    }

    /// Returns the entry without affecting recency or hits.
    pub fn peek(&self, cluster_id: ClusterId) -> Option<CacheEntry> {
        self.inner.lock().entries.get(&cluster_id).cloned()
    }

    pub fn contains(&self, cluster_id: ClusterId) -> bool {
        self.inner.lock().entries.contains_key(&cluster_id)
    }

    /// Removes a program reported as wrong. Returns whether one existed.
    pub fn delete_for_feedback(&self, cluster_id: ClusterId) -> bool {
        self.inner.lock().remove(cluster_id).is_some()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_bytes(&self) -> usize {
        self.inner.lock().total_bytes
    }

    /// Cluster ids from least to most recently used.
    pub fn lru_order(&self) -> Vec<ClusterId> {
        self.inner.lock().by_recency.values().copied().collect()
    }

    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        let programs = dir.join("programs");
        fs::create_dir_all(&programs)?;
        let inner = self.inner.lock();
        let mut index = fs::File::create(dir.join("index.tmp"))?;
        for id in inner.by_recency.values() {
            let entry = &inner.entries[id];
            let file = format!("programs/{id}.prog");
            fs::write(dir.join(&file), entry.program.source().to_json())?;
            let record = IndexRecord {
                cluster_id: *id,
                file,
                size: entry.size_bytes,
                created_at_ms: entry.created_at_ms,
            };
            writeln!(index, "{}", serde_json::to_string(&record).expect("index record serializes"))?;
        }
        index.sync_all()?;
        fs::rename(dir.join("index.tmp"), dir.join("index"))?;
        Ok(())
    }

    /// Loads a saved cache. Entries come back in index order with fresh
    /// recency and zero hits. A missing directory yields an empty store.
    pub fn load(dir: &Path, config: CacheStoreConfig, options: &CompileOptions) -> Result<Self, StoreError> {
        let store = Self::new(config);
        let index_path = dir.join("index");
        if !index_path.exists() {
            return Ok(store);
        }
        let reader = BufReader::new(fs::File::open(index_path)?);
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: IndexRecord = serde_json::from_str(&line).map_err(|e| StoreError::Index {
                line: line_no,
                message: e.to_string(),
            })?;
            if record.file.contains("..") || Path::new(&record.file).is_absolute() {
                return Err(StoreError::Index {
                    line: line_no,
                    message: format!("program path {} escapes the cache directory", record.file),
                });
            }
            let text = fs::read_to_string(dir.join(&record.file))?;
            let program = ProgramSource::from_json(&text)
                .and_then(|src| compile(src, options))
                .map_err(|source| StoreError::Program {
                    cluster_id: record.cluster_id,
                    source,
                })?;
            store.put_at(record.cluster_id, program, record.created_at_ms);
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::PatternRule;

    fn program(padding: usize) -> CompiledProgram {
        compile(
            ProgramSource::declarative("x", vec![PatternRule::plain("x", "y".repeat(padding))]),
            &CompileOptions::default(),
        )
        .unwrap()
    }

    fn store(max_entries: usize) -> CacheStore {
        CacheStore::new(CacheStoreConfig {
            max_entries,
            max_total_bytes: usize::MAX,
        })
    }

    #[test]
    fn evicts_oldest_insert() {
        let s = store(2);
        assert!(s.put(1, program(1)).is_empty());
        assert!(s.put(2, program(1)).is_empty());
        assert_eq!(s.put(3, program(1)), vec![1]);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn get_refreshes_recency() {
        let s = store(2);
        s.put(1, program(1));
        s.put(2, program(1));
        assert!(s.get(1).is_some());
        assert_eq!(s.put(3, program(1)), vec![2]);
        assert!(s.contains(1));
    }

    #[test]
    fn get_counts_hits() {
        let s = store(4);
        assert!(s.get(9).is_none());
        s.put(9, program(1));
        s.get(9);
        s.get(9);
        assert_eq!(s.get(9).unwrap().hits, 3);
        assert_eq!(s.peek(9).unwrap().hits, 3);
    }

    #[test]
    fn byte_cap_is_enforced() {
        let one = program(100).size_bytes();
        let s = CacheStore::new(CacheStoreConfig {
            max_entries: 100,
            max_total_bytes: one * 2,
        });
        s.put(1, program(100));
        s.put(2, program(100));
        assert_eq!(s.put(3, program(100)), vec![1]);
        assert!(s.total_bytes() <= one * 2);
        // an entry larger than the whole budget evicts everything, itself included
        let huge = CacheStore::new(CacheStoreConfig {
            max_entries: 100,
            max_total_bytes: 10,
        });
        assert_eq!(huge.put(5, program(1)), vec![5]);
        assert!(huge.is_empty());
    }

    #[test]
    fn replacing_an_entry_keeps_accounting() {
        let s = store(4);
        s.put(1, program(10));
        s.put(1, program(20));
        assert_eq!(s.len(), 1);
        assert_eq!(s.total_bytes(), program(20).size_bytes());
    }

    #[test]
    fn feedback_deletion_is_idempotent() {
        let s = store(4);
        s.put(1, program(1));
        assert!(s.delete_for_feedback(1));
        assert!(!s.delete_for_feedback(1));
        assert_eq!(s.total_bytes(), 0);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(8);
        s.put(4, program(3));
        s.put(7, program(5));
        s.get(4);
        s.save(dir.path()).unwrap();
        assert!(dir.path().join("programs/4.prog").exists());
        let back = CacheStore::load(dir.path(), s.config(), &CompileOptions::default()).unwrap();
        assert_eq!(back.lru_order(), vec![7, 4]);
        assert_eq!(back.peek(4).unwrap().hits, 0);
        assert_eq!(back.peek(7).unwrap().program.source(), s.peek(7).unwrap().program.source());
    }

    #[test]
    fn corrupt_index_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("index"), "not json\n").unwrap();
        assert!(matches!(
            CacheStore::load(dir.path(), CacheStoreConfig::default(), &CompileOptions::default()),
            Err(StoreError::Index { line: 1, .. })
        ));
        let escaping = r#"{"cluster_id":1,"file":"../x","size":1,"created_at_ms":0}"#;
        fs::write(dir.path().join("index"), format!("{escaping}\n")).unwrap();
        assert!(CacheStore::load(dir.path(), CacheStoreConfig::default(), &CompileOptions::default()).is_err());
    }

    #[test]
    fn missing_directory_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let s = CacheStore::load(&dir.path().join("nope"), CacheStoreConfig::default(), &CompileOptions::default()).unwrap();
        assert!(s.is_empty());
    }
}
