//! HTTP session API over a shared base checkpoint.
//!
//! Every grid is stored as its provenance record only; image bytes are
//! re-rendered from it on demand (with a bounded byte cache in front).

mod error;
mod state;

use std::collections::BTreeSet;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use weightscape::manifest::parse_block_set;
use weightscape::perturb::MaskSpec;
use weightscape::render::{
    encode_png, latent_at, render_grid, to_pixels, ColumnProvenance, GridProvenance, ImageGrid, LatentRef,
    RowInput,
};
use weightscape::rng::fnv1a64;
use weightscape::{Checkpoint, Mode, ParamKind, PerturbationPlan, RenderRequest, StatsMode, Variant};

pub use error::{ApiError, ApiResult};
pub use state::{AppState, Base, ServiceConfig};
use state::{HistoryItem, PlanRecord, Session};

/// Upper bound on latents per render and on classes per render.
pub const MAX_AXIS: usize = 64;

type Shared = Arc<AppState>;
type Body<T> = Result<Json<T>, JsonRejection>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/plan", post(set_plan))
        .route("/sessions/{id}/render", post(render))
        .route("/sessions/{id}/lock-latent", post(lock_latent))
        .route("/sessions/{id}/save", post(save_pick))
        .route("/grids/{file}", get(grid_png))
        .route("/grids/{id}/provenance", get(grid_provenance))
        .route("/gallery", get(gallery))
        .with_state(state)
}

/// Serves `router(state)` on an already bound listener until the process ends.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::new(state))).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn health(State(st): State<Shared>) -> Json<Value> {
    let b = &st.default_base;
    Json(json!({
        "status": "ok",
        "graph": b.graph.config().name,
        "base": b.source,
        "base_checksum": format!("{:016x}", b.checkpoint.checksum()),
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewSession {
    base: Option<String>,
    graph_config: Option<String>,
}

async fn create_session(State(st): State<Shared>, body: Body<NewSession>) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    let default = st.default_base.clone();
    let base = match (req.base, req.graph_config) {
        (None, None) => default,
        (path, graph) => {
            let path = path.unwrap_or_else(|| default.source.clone());
            let graph = graph.unwrap_or_else(|| default.graph.config().name.clone());
            let st2 = st.clone();
            blocking(move || st2.base(&path, &graph)).await?
        }
    };
    let id = format!("s{}", uuid::Uuid::new_v4().simple());
    let body = json!({
        "session_id": id,
        "graph": base.graph.config().name,
        "base": base.source,
        "base_checksum": format!("{:016x}", base.checkpoint.checksum()),
    });
    st.insert_session(Session {
        id,
        base,
        plans: Vec::new(),
        current: None,
        locked: Vec::new(),
        history: Vec::new(),
    });
    Ok((axum::http::StatusCode::CREATED, Json(body)))
}

async fn session_info(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = st.session(&id)?;
    let s = session.lock().await;
    Ok(Json(json!({
        "session_id": s.id,
        "graph": s.base.graph.config().name,
        "base": s.base.source,
        "plans": s.plans,
        "current_plan": s.current.as_ref().map(ToString::to_string),
        "locked": s.locked,
        "history": s.history,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum BlockList {
    Text(String),
    List(Vec<String>),
}

impl BlockList {
    fn text(&self) -> String {
        match self {
            BlockList::Text(t) => t.clone(),
            BlockList::List(l) => l.join(","),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskBody {
    pattern: String,
    #[serde(default)]
    blocks: Option<BlockList>,
    fraction: f64,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanBody {
    mode: String,
    alpha: Option<f64>,
    #[serde(default)]
    seed: u64,
    blocks: Option<BlockList>,
    kinds: Option<Vec<String>>,
    stats: Option<String>,
    mask: Option<MaskBody>,
}

fn invalid_plan(message: impl Into<String>) -> ApiError {
    ApiError::bad_request("invalid_plan", message)
}

fn build_plan(body: PlanBody) -> ApiResult<PerturbationPlan> {
    let mode: Mode = body.mode.parse().map_err(|e: weightscape::PerturbError| invalid_plan(e.to_string()))?;
    let blocks = |list: &Option<BlockList>| -> ApiResult<BTreeSet<_>> {
        match list {
            Some(l) => parse_block_set(&l.text()).map_err(|e| invalid_plan(e.to_string())),
            None => Ok(BTreeSet::new()),
        }
    };
    let mut plan = match mode {
        Mode::Multiplicative => PerturbationPlan::multiplicative(body.alpha.unwrap_or(0.35), body.seed),
        Mode::BlockRandomize => PerturbationPlan::block_randomize(blocks(&body.blocks)?, body.seed),
        Mode::MaskedSubstitute => {
            let m = body
                .mask
                .as_ref()
                .ok_or_else(|| invalid_plan("masked_substitute needs a `mask` object"))?;
            let spec = MaskSpec {
                pattern: m.pattern.clone(),
                blocks: blocks(&m.blocks)?,
                fraction: m.fraction,
                seed: m.seed,
            };
            PerturbationPlan::masked_substitute(spec, body.seed)
        }
    };
    if let Some(kinds) = &body.kinds {
        plan.kinds = kinds
            .iter()
            .map(|k| k.parse::<ParamKind>().map_err(|e| invalid_plan(e.to_string())))
            .collect::<ApiResult<_>>()?;
    }
    if let Some(stats) = &body.stats {
        plan.stats_mode = stats.parse::<StatsMode>().map_err(invalid_plan)?;
    }
    plan.validate().map_err(|e| invalid_plan(e.to_string()))?;
    Ok(plan)
}

async fn set_plan(State(st): State<Shared>, Path(id): Path<String>, body: Body<PlanBody>) -> ApiResult<Json<Value>> {
    let Json(body) = body?;
    let session = st.session(&id)?;
    let plan = build_plan(body)?;
    let mut s = session.lock().await;
    // applying once surfaces data-dependent errors and warms the cache
    let (st2, base, text) = (st.clone(), s.base.checkpoint.clone(), plan.to_string());
    blocking(move || st2.derive(&base, &[text]).map(|_| ())).await?;
    let record = PlanRecord {
        plan_id: format!("{}-p{}", s.id, s.plans.len() + 1),
        plan: plan.to_string(),
    };
    s.plans.push(record.clone());
    s.current = Some(plan);
    Ok(Json(json!({ "plan_id": record.plan_id, "plan": record.plan })))
}

fn default_count() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderBody {
    classes: Vec<usize>,
    #[serde(default)]
    latent_seed: u64,
    #[serde(default = "default_count")]
    count: usize,
    #[serde(default)]
    compare_base: bool,
    /// One column per seed, each the current plan under that seed.
    seeds: Option<Vec<u64>>,
}

fn grid_id(provenance: &GridProvenance) -> String {
    format!("g{:016x}", fnv1a64(provenance.to_json().as_bytes()))
}

/// Regenerates a grid from its provenance record alone.
fn render_provenance(st: &AppState, prov: &GridProvenance) -> ApiResult<ImageGrid> {
    let mut graph = None;
    let mut variants = Vec::with_capacity(prov.columns.len());
    for col in &prov.columns {
        let source = col
            .source
            .as_deref()
            .ok_or_else(|| ApiError::internal(format!("column `{}` has no source", col.label)))?;
        let base = st.base_for(source, &prov.graph)?;
        let ck = st.derive(&base.checkpoint, &col.plans)?;
        let checksum = format!("{:016x}", ck.checksum());
        if checksum != col.checksum {
            return Err(ApiError::internal(format!(
                "column `{}` reproduces checksum {checksum}, provenance says {}",
                col.label, col.checksum
            )));
        }
        graph.get_or_insert(base.graph.clone());
        variants.push(Variant::new(col.label.clone(), ck));
    }
    let graph = graph.ok_or_else(|| ApiError::internal("grid has no columns"))?;
    let (latents, classes) = prov.layout();
    let request = RenderRequest {
        latents,
        classes,
        variants,
    };
    render_grid(&graph, &request).map_err(|e| ApiError::bad_request("render_failed", e.to_string()))
}

async fn render(State(st): State<Shared>, Path(id): Path<String>, body: Body<RenderBody>) -> ApiResult<Json<Value>> {
    let Json(req) = body?;
    let session = st.session(&id)?;
    let mut s = session.lock().await;
    let cfg = s.base.graph.config();
    if req.classes.is_empty() || req.classes.len() > MAX_AXIS {
        return Err(ApiError::bad_request("invalid_request", format!("need 1..={MAX_AXIS} classes")));
    }
    if let Some(&c) = req.classes.iter().find(|&&c| c >= cfg.num_classes) {
        return Err(ApiError::bad_request(
            "invalid_request",
            format!("class {c} out of range for {} classes", cfg.num_classes),
        ));
    }
    let latents: Vec<LatentRef> = if s.locked.is_empty() {
        if req.count == 0 || req.count > MAX_AXIS {
            return Err(ApiError::bad_request("invalid_request", format!("count must be in 1..={MAX_AXIS}")));
        }
        (0..req.count)
            .map(|index| LatentRef {
                seed: req.latent_seed,
                index,
            })
            .collect()
    } else {
        s.locked.clone()
    };

    let mut columns: Vec<(String, Vec<String>)> = Vec::new();
    if let Some(plan) = &s.current {
        match &req.seeds {
            Some(seeds) if !seeds.is_empty() => {
                for &seed in seeds {
                    let p = plan.with_seed(seed);
                    columns.push((format!("seed={seed}"), vec![p.to_string()]));
                }
            }
            _ => columns.push((format!("seed={}", plan.seed), vec![plan.to_string()])),
        }
    }
    if req.compare_base || columns.is_empty() {
        columns.push(("base".into(), Vec::new()));
    }

    let st2 = st.clone();
    let base = s.base.clone();
    let (id, prov, png) = blocking(move || {
        let mut cols = Vec::with_capacity(columns.len());
        for (label, plans) in columns {
            let ck = st2.derive(&base.checkpoint, &plans)?;
            cols.push(ColumnProvenance {
                label,
                checksum: format!("{:016x}", ck.checksum()),
                plans,
                source: Some(base.source.clone()),
            });
        }
        let rows: Vec<RowInput> = req
            .classes
            .iter()
            .flat_map(|&class| latents.iter().map(move |&latent| RowInput { latent, class }))
            .collect();
        let prov = GridProvenance {
            graph: base.graph.config().name.clone(),
            resolution: base.graph.output_resolution(),
            rows,
            columns: cols,
        };
        let id = grid_id(&prov);
        let png = match st2.cached_png(&id) {
            Some(p) => p,
            None => {
                let grid = render_provenance(&st2, &prov)?;
                Arc::new(grid.encode_png().map_err(|e| ApiError::internal(e.to_string()))?)
            }
        };
        Ok((id, prov, png))
    })
    .await?;

    let (rows, cols) = (prov.rows.len(), prov.columns.len());
    let res = prov.resolution;
    st.store_png(id.clone(), png);
    st.insert_grid(id.clone(), prov);
    let plan = s.current.as_ref().map(ToString::to_string);
    s.history.push(HistoryItem {
        plan,
        grid_id: id.clone(),
    });
    Ok(Json(json!({
        "grid_id": id,
        "rows": rows,
        "cols": cols,
        "width": cols * res,
        "height": rows * res,
        "image": format!("/grids/{id}.png"),
        "provenance": format!("/grids/{id}/provenance"),
    })))
}

async fn grid_png(State(st): State<Shared>, Path(file): Path<String>) -> ApiResult<impl IntoResponse> {
    let id = file
        .strip_suffix(".png")
        .ok_or_else(|| ApiError::not_found("grid image", &file))?
        .to_string();
    let prov = st.grid(&id)?;
    let png = match st.cached_png(&id) {
        Some(p) => p,
        None => {
            let st2 = st.clone();
            let png = blocking(move || {
                let grid = render_provenance(&st2, &prov)?;
                grid.encode_png().map_err(|e| ApiError::internal(e.to_string()))
            })
            .await?;
            let png = Arc::new(png);
            st.store_png(id, png.clone());
            png
        }
    };
    Ok(([(header::CONTENT_TYPE, "image/png")], png.as_ref().clone()))
}

async fn grid_provenance(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<GridProvenance>> {
    Ok(Json(st.grid(&id)?.as_ref().clone()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LockBody {
    #[serde(default)]
    latent_seed: u64,
    #[serde(default)]
    index: usize,
    /// Drops all pins instead of adding one.
    #[serde(default)]
    clear: bool,
}

async fn lock_latent(State(st): State<Shared>, Path(id): Path<String>, body: Body<LockBody>) -> ApiResult<Json<Value>> {
    let Json(req) = body?;
    let session = st.session(&id)?;
    let mut s = session.lock().await;
    if req.clear {
        s.locked.clear();
    } else {
        let latent = LatentRef {
            seed: req.latent_seed,
            index: req.index,
        };
        if !s.locked.contains(&latent) {
            if s.locked.len() >= MAX_AXIS {
                return Err(ApiError::bad_request("invalid_request", "too many locked latents"));
            }
            s.locked.push(latent);
        }
    }
    Ok(Json(json!({ "locked": s.locked })))
}

/// A saved tile and everything needed to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub pick_id: String,
    pub grid_id: String,
    pub row: usize,
    pub col: usize,
    pub graph: String,
    /// Base checkpoint file.
    pub source: String,
    /// Plan texts applied to the base, in order.
    pub plans: Vec<String>,
    pub checksum: String,
    pub latent: LatentRef,
    pub class: usize,
    /// Tile PNG next to this record.
    pub image: String,
}

impl Pick {
    /// Renders the tile from the record alone.
    pub fn render(&self, base: &Checkpoint, graph: &weightscape::GeneratorGraph) -> Result<Vec<u8>, String> {
        let mut ck = base.clone();
        for text in &self.plans {
            let plan: PerturbationPlan = text.parse().map_err(|e: weightscape::PerturbError| e.to_string())?;
            ck = weightscape::perturb::apply(&ck, &plan).map_err(|e| e.to_string())?.checkpoint;
        }
        let checksum = format!("{:016x}", ck.checksum());
        if checksum != self.checksum {
            return Err(format!("derived checksum {checksum} differs from recorded {}", self.checksum));
        }
        let z = latent_at(self.latent.seed, self.latent.index, graph.config().latent_dim);
        let img = graph.forward(&ck, &z, self.class).map_err(|e| e.to_string())?;
        let res = graph.output_resolution();
        encode_png(res, res, &to_pixels(&img)).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Deserialize)]
struct TileRef {
    row: usize,
    col: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SaveBody {
    grid_id: String,
    tile: TileRef,
}

async fn save_pick(State(st): State<Shared>, Path(id): Path<String>, body: Body<SaveBody>) -> ApiResult<Json<Pick>> {
    let Json(req) = body?;
    let _session = st.session(&id)?;
    let prov = st.grid(&req.grid_id)?;
    let (row, col) = (req.tile.row, req.tile.col);
    let (Some(row_input), Some(column)) = (prov.rows.get(row), prov.columns.get(col)) else {
        return Err(ApiError::bad_request(
            "invalid_request",
            format!("tile ({row}, {col}) outside {}x{} grid", prov.rows.len(), prov.columns.len()),
        )
        .with_detail(json!({ "rows": prov.rows.len(), "cols": prov.columns.len() })));
    };
    let pick_id = format!("{}-r{row}c{col}", req.grid_id);
    let pick = Pick {
        pick_id: pick_id.clone(),
        grid_id: req.grid_id.clone(),
        row,
        col,
        graph: prov.graph.clone(),
        source: column.source.clone().unwrap_or_default(),
        plans: column.plans.clone(),
        checksum: column.checksum.clone(),
        latent: row_input.latent,
        class: row_input.class,
        image: format!("{pick_id}.png"),
    };
    let st2 = st.clone();
    let record = pick.clone();
    blocking(move || {
        let base = st2.base_for(&record.source, &record.graph)?;
        let ck = st2.derive(&base.checkpoint, &record.plans)?;
        let z = latent_at(record.latent.seed, record.latent.index, base.graph.config().latent_dim);
        let img = base
            .graph
            .forward(&ck, &z, record.class)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let res = base.graph.output_resolution();
        let png = encode_png(res, res, &to_pixels(&img)).map_err(|e| ApiError::internal(e.to_string()))?;
        let dir = st2.gallery_dir();
        let io = |e: std::io::Error| ApiError::internal(format!("gallery write failed: {e}"));
        std::fs::write(dir.join(&record.image), png).map_err(io)?;
        let text = serde_json::to_string_pretty(&record).expect("serializable") + "\n";
        std::fs::write(dir.join(format!("{}.json", record.pick_id)), text).map_err(io)?;
        Ok(())
    })
    .await?;
    Ok(Json(pick))
}

async fn gallery(State(st): State<Shared>) -> ApiResult<Json<Value>> {
    let dir = st.gallery_dir().to_path_buf();
    let picks = blocking(move || {
        let entries = std::fs::read_dir(&dir).map_err(|e| ApiError::internal(e.to_string()))?;
        let mut picks: Vec<Pick> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .filter_map(|p| std::fs::read_to_string(p).ok())
            .filter_map(|t| serde_json::from_str(&t).ok())
            .collect();
        picks.sort_by(|a, b| a.pick_id.cmp(&b.pick_id));
        Ok(picks)
    })
    .await?;
    Ok(Json(json!({ "picks": picks })))
}
