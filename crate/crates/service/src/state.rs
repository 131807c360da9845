use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use lru::LruCache;
use serde::Serialize;
use weightscape::checkpoint;
use weightscape::perturb::apply;
use weightscape::render::{GridProvenance, LatentRef};
use weightscape::{Checkpoint, GeneratorGraph, GraphConfig, PerturbationPlan};

use crate::error::{ApiError, ApiResult};

/// A loaded base checkpoint and the graph it runs on. Shared read-only.
pub struct Base {
    /// File the checkpoint was loaded from; recorded in provenance.
    pub source: String,
    pub graph: Arc<GeneratorGraph>,
    pub checkpoint: Arc<Checkpoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistoryItem {
    pub plan: Option<String>,
    pub grid_id: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanRecord {
    pub plan_id: String,
    pub plan: String,
}

pub struct Session {
    pub id: String,
    pub base: Arc<Base>,
    pub plans: Vec<PlanRecord>,
    pub current: Option<PerturbationPlan>,
    pub locked: Vec<LatentRef>,
    pub history: Vec<HistoryItem>,
}

pub struct ServiceConfig {
    pub base: PathBuf,
    pub graph: String,
    pub gallery: PathBuf,
    pub cache_capacity: usize,
}

pub struct AppState {
    pub(crate) default_base: Arc<Base>,
    pub(crate) gallery: PathBuf,
    bases: Mutex<HashMap<(String, String), Arc<Base>>>,
    pub(crate) sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    pub(crate) grids: Mutex<HashMap<String, Arc<GridProvenance>>>,
    derived: Mutex<LruCache<(u64, String), Arc<Checkpoint>>>,
    pub(crate) png_cache: Mutex<LruCache<String, Arc<Vec<u8>>>>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn load_base(path: &str, graph: &str) -> ApiResult<Base> {
    let cfg = GraphConfig::resolve(graph)
        .map_err(|e| ApiError::bad_request("invalid_graph", e.to_string()))?;
    let graph = GeneratorGraph::build(cfg)
        .map_err(|e| ApiError::bad_request("invalid_graph", e.to_string()))?;
    let ck = checkpoint::load(path)
        .map_err(|e| ApiError::bad_request("invalid_base", format!("{path}: {e}")))?
        .canonicalize(&graph);
    graph
        .bind(&ck)
        .map_err(|e| ApiError::bad_request("manifest_mismatch", e.to_string()))?;
    Ok(Base {
        source: path.to_string(),
        graph: Arc::new(graph),
        checkpoint: Arc::new(ck),
    })
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Result<Self, String> {
        let source = config.base.to_string_lossy().into_owned();
        let base = load_base(&source, &config.graph).map_err(|e| e.message)?;
        std::fs::create_dir_all(&config.gallery)
            .map_err(|e| format!("{}: {e}", config.gallery.display()))?;
        let cap = NonZeroUsize::new(config.cache_capacity.max(1)).expect("positive");
        let base = Arc::new(base);
        let mut bases = HashMap::new();
        bases.insert((source, config.graph), base.clone());
        Ok(Self {
            default_base: base,
            gallery: config.gallery,
            bases: Mutex::new(bases),
            sessions: Mutex::new(HashMap::new()),
            grids: Mutex::new(HashMap::new()),
            derived: Mutex::new(LruCache::new(cap)),
            png_cache: Mutex::new(LruCache::new(cap)),
        })
    }

    pub fn gallery_dir(&self) -> &Path {
        &self.gallery
    }

    /// The base at `path` for `graph`, loading it on first use.
    pub(crate) fn base(&self, path: &str, graph: &str) -> ApiResult<Arc<Base>> {
        let key = (path.to_string(), graph.to_string());
        if let Some(b) = lock(&self.bases).get(&key) {
            return Ok(b.clone());
        }
        let loaded = Arc::new(load_base(path, graph)?);
        Ok(lock(&self.bases).entry(key).or_insert(loaded).clone())
    }

    /// Base for a provenance column: matched by source and graph name.
    pub(crate) fn base_for(&self, source: &str, graph_name: &str) -> ApiResult<Arc<Base>> {
        let known = lock(&self.bases)
            .iter()
            .find(|((src, _), b)| src == source && b.graph.config().name == graph_name)
            .map(|(_, b)| b.clone());
        match known {
            Some(b) => Ok(b),
            None => self.base(source, graph_name),
        }
    }

    /// `base` with `plans` applied in order, through the bounded cache.
    pub(crate) fn derive(&self, base: &Arc<Checkpoint>, plans: &[String]) -> ApiResult<Arc<Checkpoint>> {
        let mut current = base.clone();
        for text in plans {
            let parent = current.as_ref();
            let key = (parent.checksum(), text.clone());
            if let Some(hit) = lock(&self.derived).get(&key).cloned() {
                current = hit;
                continue;
            }
            let plan: PerturbationPlan = text
                .parse()
                .map_err(|e: weightscape::PerturbError| ApiError::bad_request("invalid_plan", e.to_string()))?;
            let derived = apply(parent, &plan)
                .map_err(|e| ApiError::bad_request("invalid_plan", e.to_string()))?;
            let ck = Arc::new(derived.checkpoint);
            lock(&self.derived).put(key, ck.clone());
            current = ck;
        }
        Ok(current)
    }

    pub fn cached_derivations(&self) -> usize {
        lock(&self.derived).len()
    }

    pub(crate) fn session(&self, id: &str) -> ApiResult<Arc<tokio::sync::Mutex<Session>>> {
        lock(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    pub(crate) fn grid(&self, id: &str) -> ApiResult<Arc<GridProvenance>> {
        lock(&self.grids)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("grid", id))
    }

    pub(crate) fn insert_session(&self, session: Session) {
        let id = session.id.clone();
        lock(&self.sessions).insert(id, Arc::new(tokio::sync::Mutex::new(session)));
    }

    pub(crate) fn insert_grid(&self, id: String, provenance: GridProvenance) {
        lock(&self.grids).insert(id, Arc::new(provenance));
    }

    pub(crate) fn cached_png(&self, id: &str) -> Option<Arc<Vec<u8>>> {
        lock(&self.png_cache).get(id).cloned()
    }

    pub(crate) fn store_png(&self, id: String, png: Arc<Vec<u8>>) {
        lock(&self.png_cache).put(id, png);
    }
}
