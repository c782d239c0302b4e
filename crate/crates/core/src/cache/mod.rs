//! Persistent sketch cache and the parallel caching driver.

pub mod store;
pub mod workers;

pub use store::{record_len, CacheHeader, CacheStore, IndexEntry, OpenMode, PutOutcome, HEADER_LEN};
pub use workers::{run_cache_workers, CacheRunOptions, CacheSummary};
