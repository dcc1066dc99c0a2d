//! Persistent response cache: an SQLite file mapping request digests to the
//! canonical request and the raw reply text.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::GatewayError;

/// SHA-256 of a canonical request, as 64 lowercase hex characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn of_canonical(canonical_json: &str) -> Self {
        CacheKey(hex::encode(Sha256::digest(canonical_json.as_bytes())))
    }

    pub fn parse(hex_digest: &str) -> Option<Self> {
        (hex_digest.len() == 64 && hex_digest.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')))
            .then(|| CacheKey(hex_digest.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Serialize a JSON value with object keys sorted at every depth and no
/// insignificant whitespace.
pub fn canonical_json(value: &Value) -> String {
    fn write(value: &Value, out: &mut String) {
        match value {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(k).expect("string serializes"));
                    out.push(':');
                    write(&map[k], out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(v, out);
                }
                out.push(']');
            }
            other => out.push_str(&serde_json::to_string(other).expect("scalar serializes")),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

/// One archived cache entry, the line format of exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub digest: CacheKey,
    pub request: Value,
    pub response: String,
}

pub struct ResponseCache {
    conn: Connection,
}

impl fmt::Debug for ResponseCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ResponseCache").finish_non_exhaustive()
    }
}

fn now_secs() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

impl ResponseCache {
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        Self::init(Connection::open(path)?)
    }

    pub fn in_memory() -> Result<Self, GatewayError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, GatewayError> {
        conn.execute_batch(
            "CREATE TABLE IF NOT EXISTS responses (
                 digest TEXT PRIMARY KEY,
                 request TEXT NOT NULL,
                 response TEXT NOT NULL,
                 created_at INTEGER NOT NULL
             );",
        )?;
        Ok(ResponseCache { conn })
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<String>, GatewayError> {
        Ok(self
            .conn
            .query_row(
                "SELECT response FROM responses WHERE digest = ?1",
                params![key.as_str()],
                |row| row.get(0),
            )
            .optional()?)
    }

    pub fn contains(&self, key: &CacheKey) -> Result<bool, GatewayError> {
        Ok(self.get(key)?.is_some())
    }

    /// Insert or replace an entry.
    pub fn put(&self, key: &CacheKey, request_json: &str, response: &str) -> Result<(), GatewayError> {
        self.conn.execute(
            "INSERT OR REPLACE INTO responses (digest, request, response, created_at)
             VALUES (?1, ?2, ?3, ?4)",
            params![key.as_str(), request_json, response, now_secs()],
        )?;
        Ok(())
    }

    pub fn remove(&self, key: &CacheKey) -> Result<bool, GatewayError> {
        let n = self
            .conn
            .execute("DELETE FROM responses WHERE digest = ?1", params![key.as_str()])?;
        Ok(n > 0)
    }

    pub fn len(&self) -> Result<usize, GatewayError> {
        let n: i64 = self
            .conn
            .query_row("SELECT COUNT(*) FROM responses", [], |row| row.get(0))?;
        Ok(n as usize)
    }

    pub fn is_empty(&self) -> Result<bool, GatewayError> {
        Ok(self.len()? == 0)
    }

    /// All entries ordered by digest.
    pub fn records(&self) -> Result<Vec<CacheRecord>, GatewayError> {
        let mut stmt = self
            .conn
            .prepare("SELECT digest, request, response FROM responses ORDER BY digest")?;
        let rows = stmt.query_map([], |row| {
            Ok((row.get::<_, String>(0)?, row.get::<_, String>(1)?, row.get::<_, String>(2)?))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (digest, request, response) = row?;
            out.push(CacheRecord {
                digest: CacheKey(digest),
                request: serde_json::from_str(&request)?,
                response,
            });
        }
        Ok(out)
    }

    /// Write every entry as one JSON line, sorted by digest.
    pub fn export_jsonl<W: Write>(&self, mut out: W) -> Result<usize, GatewayError> {
        let records = self.records()?;
        for record in &records {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(records.len())
    }

    /// Load exported lines. Each digest is recomputed from its request and
    /// must match.
    pub fn import_jsonl<R: BufRead>(&self, input: R) -> Result<usize, GatewayError> {
        let mut count = 0;
        let tx = self.conn.unchecked_transaction()?;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CacheRecord = serde_json::from_str(&line).map_err(|e| GatewayError::CacheFormat {
                line: idx + 1,
                message: e.to_string(),
            })?;
            let canonical = canonical_json(&record.request);
            if CacheKey::of_canonical(&canonical) != record.digest {
                return Err(GatewayError::CacheFormat {
                    line: idx + 1,
                    message: format!("digest {} does not match its request", record.digest),
                });
            }
            tx.execute(
                "INSERT OR REPLACE INTO responses (digest, request, response, created_at)
                 VALUES (?1, ?2, ?3, ?4)",
                params![record.digest.as_str(), canonical, record.response, now_secs()],
            )?;
            count += 1;
        }
        tx.commit()?;
        Ok(count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_json_sorts_and_compacts() {
        let a = json!({"b": 1, "a": {"y": [1, 2], "x": "s"}});
        assert_eq!(canonical_json(&a), r#"{"a":{"x":"s","y":[1,2]},"b":1}"#);
        let b: Value = serde_json::from_str("{ \"a\" : { \"y\":[1, 2],\"x\":\"s\"},\n \"b\":1 }").unwrap();
        assert_eq!(canonical_json(&a), canonical_json(&b));
    }

    #[test]
    fn put_get_export_import() {
        let cache = ResponseCache::in_memory().unwrap();
        let req = json!({"model": "m", "prompt": "p", "temperature": 0.7, "repetition_index": 0});
        let canonical = canonical_json(&req);
        let key = CacheKey::of_canonical(&canonical);
        assert_eq!(key.as_str().len(), 64);
        assert!(cache.get(&key).unwrap().is_none());
        cache.put(&key, &canonical, "A").unwrap();
        assert_eq!(cache.get(&key).unwrap().as_deref(), Some("A"));

        let mut buf = Vec::new();
        assert_eq!(cache.export_jsonl(&mut buf).unwrap(), 1);
        let other = ResponseCache::in_memory().unwrap();
        assert_eq!(other.import_jsonl(buf.as_slice()).unwrap(), 1);
        assert_eq!(other.records().unwrap(), cache.records().unwrap());
    }

    #[test]
    fn import_rejects_tampered_digest() {
        let cache = ResponseCache::in_memory().unwrap();
        let line = format!(
            "{{\"digest\":\"{}\",\"request\":{{\"model\":\"m\"}},\"response\":\"A\"}}\n",
            "0".repeat(64)
        );
        assert!(matches!(
            cache.import_jsonl(line.as_bytes()),
            Err(GatewayError::CacheFormat { line: 1, .. })
        ));
    }

    #[test]
    fn persists_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.sqlite");
        let key = CacheKey::of_canonical("{}");
        {
            let cache = ResponseCache::open(&path).unwrap();
            cache.put(&key, "{}", "B").unwrap();
        }
        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.get(&key).unwrap().as_deref(), Some("B"));
        assert!(cache.remove(&key).unwrap());
        assert!(cache.is_empty().unwrap());
    }
}
