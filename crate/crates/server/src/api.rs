use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use intent_canvas::analytics::{build_linkograph, linkograph_metrics, session_diversity};
use intent_canvas::reuse::{self, PathMenu};
use intent_canvas::{
    BlockId, Error, MetricsReport, NewBlock, PropertyAction, PropertyKind, PropertyOrigin, PropertySpec, RefineAction,
    SuggestionId,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::ApiError;
use crate::state::AppState;

type Shared = Arc<AppState>;
type ApiResult<T> = Result<T, ApiError>;

pub const OPENAPI: &str = include_str!("../openapi.json");

/// Every route, for the spec-coverage check.
pub const ROUTES: &[(&str, &str)] = &[
    ("get", "/v1/health"),
    ("get", "/v1/spec"),
    ("get", "/v1/sessions"),
    ("post", "/v1/sessions"),
    ("get", "/v1/sessions/{session_id}"),
    ("get", "/v1/sessions/{session_id}/events"),
    ("post", "/v1/sessions/{session_id}/properties"),
    ("delete", "/v1/sessions/{session_id}/properties/{name}"),
    ("post", "/v1/sessions/{session_id}/blocks"),
    ("get", "/v1/sessions/{session_id}/blocks/{block_id}"),
    ("post", "/v1/sessions/{session_id}/blocks/{block_id}/suggestions:refine"),
    ("post", "/v1/sessions/{session_id}/blocks/{block_id}/results"),
    ("post", "/v1/sessions/{session_id}/blocks/{block_id}/recommend"),
    ("post", "/v1/sessions/{session_id}/links"),
    ("post", "/v1/sessions/{session_id}/recommend"),
    ("post", "/v1/sessions/{session_id}/copy-block"),
    ("post", "/v1/sessions/{session_id}/copy-path"),
    ("get", "/v1/sessions/{session_id}/analytics"),
    ("get", "/v1/sessions/{session_id}/evolution"),
    ("get", "/v1/sessions/{session_id}/layout"),
    ("put", "/v1/sessions/{session_id}/layout"),
    ("get", "/v1/sessions/{session_id}/images/{file}"),
];

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/spec", get(spec))
        .route("/v1/sessions", get(list_sessions).post(create_session))
        .route("/v1/sessions/{session_id}", get(get_session))
        .route("/v1/sessions/{session_id}/events", get(get_events))
        .route("/v1/sessions/{session_id}/properties", post(add_property))
        .route("/v1/sessions/{session_id}/properties/{name}", delete(remove_property))
        .route("/v1/sessions/{session_id}/blocks", post(create_block))
        .route("/v1/sessions/{session_id}/blocks/{block_id}", get(get_block))
        .route("/v1/sessions/{session_id}/blocks/{block_id}/suggestions:refine", post(refine))
        .route("/v1/sessions/{session_id}/blocks/{block_id}/results", post(realize))
        .route("/v1/sessions/{session_id}/blocks/{block_id}/recommend", post(recommend_for_block))
        .route("/v1/sessions/{session_id}/links", post(link))
        .route("/v1/sessions/{session_id}/recommend", post(recommend))
        .route("/v1/sessions/{session_id}/copy-block", post(copy_block))
        .route("/v1/sessions/{session_id}/copy-path", post(copy_path))
        .route("/v1/sessions/{session_id}/analytics", get(analytics))
        .route("/v1/sessions/{session_id}/evolution", get(evolution))
        .route("/v1/sessions/{session_id}/layout", get(get_layout).put(put_layout))
        .route("/v1/sessions/{session_id}/images/{file}", get(get_image))
        .fallback(|| async { ApiError::not_found("no such route") })
        .with_state(state)
}

/// Parse a JSON body with closed schemas; an empty body reads as `{}`.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    let raw: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    serde_json::from_slice(raw).map_err(|e| ApiError::invalid(format!("invalid request body: {e}")))
}

fn raw_json(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn health(State(st): State<Shared>) -> Json<Value> {
    let unhealthy: Vec<Value> = st
        .unhealthy()
        .into_iter()
        .map(|(id, reason)| json!({"session_id": id, "reason": reason}))
        .collect();
    Json(json!({
        "status": if unhealthy.is_empty() { "ok" } else { "degraded" },
        "sessions": st.session_ids().len(),
        "unhealthy": unhealthy,
    }))
}

async fn spec() -> Response {
    raw_json(StatusCode::OK, OPENAPI.to_owned())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    topic: String,
    #[serde(default)]
    seed: Option<u64>,
}

async fn create_session(State(st): State<Shared>, bytes: Bytes) -> ApiResult<Response> {
    let req: CreateSession = body(&bytes)?;
    if req.topic.trim().is_empty() {
        return Err(ApiError::invalid("topic must be nonempty"));
    }
    let slot = st.create_session(req.topic, req.seed).await?;
    let live = slot.live.lock().await;
    let s = &live.session;
    Ok((
        StatusCode::CREATED,
        Json(json!({"session_id": s.id(), "topic": s.topic(), "seed": s.seed(), "properties": s.properties()})),
    )
        .into_response())
}

async fn list_sessions(State(st): State<Shared>) -> ApiResult<Json<Value>> {
    let mut out = Vec::new();
    for id in st.session_ids() {
        let row = st
            .read(&id, |l| {
                json!({"session_id": id, "topic": l.session.topic(), "blocks": l.session.blocks().len(), "last_seq": l.session.last_seq()})
            })
            .await?;
        out.push(row);
    }
    Ok(Json(json!({ "sessions": out })))
}

async fn get_session(State(st): State<Shared>, Path(sid): Path<String>) -> ApiResult<Response> {
    let snapshot = st.read(&sid, |l| l.session.canonical_json()).await?;
    Ok(raw_json(StatusCode::OK, snapshot))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EventsQuery {
    #[serde(default)]
    after: u64,
}

async fn get_events(State(st): State<Shared>, Path(sid): Path<String>, Query(q): Query<EventsQuery>) -> ApiResult<Json<Value>> {
    let events = st
        .read(&sid, |l| l.log.iter().filter(|e| e.seq > q.after).cloned().collect::<Vec<_>>())
        .await?;
    Ok(Json(json!({ "events": events })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AddProperty {
    name: String,
    kind: PropertyKind,
}

async fn add_property(State(st): State<Shared>, Path(sid): Path<String>, bytes: Bytes) -> ApiResult<Response> {
    let req: AddProperty = body(&bytes)?;
    let props = st
        .mutate(&sid, move |_, s| {
            s.mutate_properties(PropertyAction::Add(PropertySpec::new(req.name.trim(), req.kind, PropertyOrigin::Custom)))
                .map(<[_]>::to_vec)
        })
        .await?;
    Ok((StatusCode::CREATED, Json(json!({ "properties": props }))).into_response())
}

async fn remove_property(State(st): State<Shared>, Path((sid, name)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let props = st
        .mutate(&sid, move |_, s| s.mutate_properties(PropertyAction::Remove(name)).map(<[_]>::to_vec))
        .await?;
    Ok(Json(json!({ "properties": props })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBlock {
    property: String,
    direction: String,
    typicality: i64,
    #[serde(default)]
    parent: Option<BlockId>,
    /// Result item (by suggestion id) the new block branches from.
    #[serde(default)]
    anchor_result_item: Option<SuggestionId>,
}

async fn create_block(State(st): State<Shared>, Path(sid): Path<String>, bytes: Bytes) -> ApiResult<Response> {
    let req: CreateBlock = body(&bytes)?;
    let block = st
        .mutate(&sid, move |engine, s| {
            let id = engine.create_block(
                s,
                NewBlock {
                    property: req.property,
                    direction: req.direction,
                    typicality: req.typicality,
                    parent: req.parent,
                    anchor_result_item: req.anchor_result_item,
                    evolution_parent: None,
                },
            )?;
            s.block(&id).cloned()
        })
        .await?;
    Ok((StatusCode::CREATED, Json(json!({ "block": block }))).into_response())
}

async fn get_block(State(st): State<Shared>, Path((sid, bid)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let bid = BlockId(bid);
    let out = st
        .read(&sid, |l| {
            let s = &l.session;
            s.block(&bid).map(|b| {
                json!({
                    "block": b,
                    "parent": s.parent_of(&bid),
                    "children": s.children_of(&bid),
                    "latest_result": s.latest_result(&bid),
                })
            })
        })
        .await??;
    Ok(Json(out))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Refine {
    mode: RefineAction,
    #[serde(default)]
    anchor: Option<SuggestionId>,
}

async fn refine(State(st): State<Shared>, Path((sid, bid)): Path<(String, String)>, bytes: Bytes) -> ApiResult<Json<Value>> {
    let req: Refine = body(&bytes)?;
    let bid = BlockId(bid);
    let (changed, block) = st
        .mutate(&sid, move |engine, s| {
            let before = s.block(&bid)?.suggestions.clone();
            let after = engine.refine(s, &bid, req.mode, req.anchor.as_ref())?;
            let changed: Vec<_> = after.into_iter().filter(|x| !before.contains(x)).collect();
            Ok((changed, s.block(&bid)?.clone()))
        })
        .await?;
    Ok(Json(json!({"changed": changed, "block": block})))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct Empty {}

async fn realize(State(st): State<Shared>, Path((sid, bid)): Path<(String, String)>, bytes: Bytes) -> ApiResult<Response> {
    let Empty {} = body(&bytes)?;
    let bid = BlockId(bid);
    let result = st.mutate(&sid, move |engine, s| engine.realize(s, &bid)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "result": result }))).into_response())
}

async fn recommend_for_block(State(st): State<Shared>, Path((sid, bid)): Path<(String, String)>, bytes: Bytes) -> ApiResult<Json<Value>> {
    let Empty {} = body(&bytes)?;
    let bid = BlockId(bid);
    let rec = st
        .mutate(&sid, move |engine, s| {
            let property = s.block(&bid)?.property.clone();
            engine.recommend(s, &property, Some(&bid))
        })
        .await?;
    Ok(Json(json!(rec)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Recommend {
    property: String,
    #[serde(default)]
    context: Option<BlockId>,
}

async fn recommend(State(st): State<Shared>, Path(sid): Path<String>, bytes: Bytes) -> ApiResult<Json<Value>> {
    let req: Recommend = body(&bytes)?;
    let rec = st
        .mutate(&sid, move |engine, s| engine.recommend(s, &req.property, req.context.as_ref()))
        .await?;
    Ok(Json(json!(rec)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Link {
    parent: BlockId,
    child: BlockId,
}

async fn link(State(st): State<Shared>, Path(sid): Path<String>, bytes: Bytes) -> ApiResult<Response> {
    let req: Link = body(&bytes)?;
    let (p, c) = (req.parent.clone(), req.child.clone());
    st.mutate(&sid, move |_, s| s.link_blocks(&p, &c)).await?;
    Ok((StatusCode::CREATED, Json(json!({"parent": req.parent, "child": req.child}))).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CopyBlock {
    source: BlockId,
    #[serde(default)]
    parent: Option<BlockId>,
}

async fn copy_block(State(st): State<Shared>, Path(sid): Path<String>, bytes: Bytes) -> ApiResult<Response> {
    let req: CopyBlock = body(&bytes)?;
    let block = st
        .mutate(&sid, move |engine, s| {
            let id = engine.copy_block(s, &req.source, req.parent.as_ref())?;
            s.block(&id).cloned()
        })
        .await?;
    Ok((StatusCode::CREATED, Json(json!({ "block": block }))).into_response())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CopyMode {
    Literal,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Choice {
    Literal,
    V1,
    V2,
    V3,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CopyPath {
    mode: CopyMode,
    path: Vec<BlockId>,
    #[serde(default)]
    parent: Option<BlockId>,
    /// Second phase of an adaptive copy: the menu from the first call.
    #[serde(default)]
    menu_id: Option<String>,
    #[serde(default)]
    choice: Option<Choice>,
}

/// A variant menu awaiting the user's choice.
#[derive(Serialize, Deserialize)]
struct PendingMenu {
    path: Vec<BlockId>,
    parent: Option<BlockId>,
    menu: PathMenu,
}

fn menu_id(session: &str, pending: &PendingMenu) -> String {
    let mut h = Sha256::new();
    h.update(session.as_bytes());
    h.update(serde_json::to_vec(pending).expect("menu serializes"));
    format!("m-{}", &hex::encode(h.finalize())[..16])
}

fn variants_json(menu: &PathMenu) -> Value {
    let mut out = vec![json!({"choice": Choice::Literal, "steps": menu.literal})];
    for (c, steps) in [Choice::V1, Choice::V2, Choice::V3].into_iter().zip(&menu.variants) {
        out.push(json!({"choice": c, "steps": steps}));
    }
    Value::from(out)
}

async fn copy_path(State(st): State<Shared>, Path(sid): Path<String>, bytes: Bytes) -> ApiResult<Response> {
    let req: CopyPath = body(&bytes)?;
    match (req.mode, req.menu_id, req.choice) {
        (CopyMode::Literal, None, None | Some(Choice::Literal)) => {
            let ids = st
                .mutate(&sid, move |engine, s| engine.copy_path_literal(s, &req.path, req.parent.as_ref()))
                .await?;
            Ok((StatusCode::CREATED, Json(json!({"choice": Choice::Literal, "block_ids": ids}))).into_response())
        }
        (CopyMode::Literal, _, _) => Err(ApiError::invalid("literal copies take no menu_id or variant choice")),
        (CopyMode::Adaptive, None, None) => {
            let slot = st.slot(&sid)?;
            let session = slot.live.lock().await.session.clone();
            let engine = slot.engine.clone();
            let (path, parent) = (req.path.clone(), req.parent.clone());
            let menu = tokio::task::spawn_blocking(move || engine.adaptive_menu(&session, &path, parent.as_ref()))
                .await
                .map_err(|e| ApiError::internal(e.to_string()))??;
            let pending = PendingMenu {
                path: req.path,
                parent: req.parent,
                menu,
            };
            let id = menu_id(&sid, &pending);
            slot.dir.write_menu(&id, &pending)?;
            Ok(Json(json!({"menu_id": id, "variants": variants_json(&pending.menu)})).into_response())
        }
        (CopyMode::Adaptive, Some(id), Some(choice)) => {
            let slot = st.slot(&sid)?;
            let pending: PendingMenu = slot
                .dir
                .read_menu(&id)?
                .ok_or_else(|| ApiError::not_found(format!("menu {id}")))?;
            if pending.path != req.path || pending.parent != req.parent {
                return Err(ApiError::invalid("path and parent must match the menu request"));
            }
            let ids = st
                .mutate(&sid, move |engine, s| match choice {
                    Choice::Literal => engine.copy_path_literal(s, &pending.path, pending.parent.as_ref()),
                    v => {
                        let n = match v {
                            Choice::V1 => 1,
                            Choice::V2 => 2,
                            _ => 3,
                        };
                        engine.apply_adaptive(s, &pending.path, pending.parent.as_ref(), &pending.menu, n)
                    }
                })
                .await?;
            Ok((StatusCode::CREATED, Json(json!({"choice": choice, "block_ids": ids}))).into_response())
        }
        (CopyMode::Adaptive, _, _) => Err(ApiError::invalid("an adaptive choice needs both menu_id and choice")),
    }
}

async fn analytics(State(st): State<Shared>, Path(sid): Path<String>) -> ApiResult<Json<Value>> {
    let slot = st.slot(&sid)?;
    let session = slot.live.lock().await.session.clone();
    let engine = slot.engine.clone();
    let out = tokio::task::spawn_blocking(move || {
        let graph = build_linkograph(&session);
        let metrics: MetricsReport = linkograph_metrics(&graph);
        let diversity = match session_diversity(&session, engine.providers.store.as_ref(), &engine.embeddings) {
            Ok(d) => json!({"max_cosine_distance": d}),
            Err(Error::NotEnoughData(reason)) => json!({"max_cosine_distance": null, "reason": reason}),
            Err(e) => return Err(ApiError::from(e)),
        };
        Ok(json!({"metrics": metrics, "linkograph": graph, "diversity": diversity}))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(out))
}

async fn evolution(State(st): State<Shared>, Path(sid): Path<String>) -> ApiResult<Json<Value>> {
    let graphs = st
        .read(&sid, |l| {
            l.session
                .properties()
                .iter()
                .map(|p| reuse::evolution_graph(&l.session, &p.name))
                .collect::<intent_canvas::Result<Vec<_>>>()
        })
        .await??;
    Ok(Json(json!({ "graphs": graphs })))
}

async fn get_layout(State(st): State<Shared>, Path(sid): Path<String>) -> ApiResult<Json<Value>> {
    let slot = st.slot(&sid)?;
    let _live = slot.live.lock().await;
    Ok(Json(json!({ "layout": slot.dir.read_layout()? })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PutLayout {
    layout: Value,
}

/// Geometry is client-owned: stored verbatim, never interpreted.
async fn put_layout(State(st): State<Shared>, Path(sid): Path<String>, bytes: Bytes) -> ApiResult<Json<Value>> {
    let req: PutLayout = body(&bytes)?;
    let slot = st.slot(&sid)?;
    let _live = slot.live.lock().await;
    slot.dir.write_layout(&req.layout)?;
    Ok(Json(json!({ "layout": req.layout })))
}

async fn get_image(State(st): State<Shared>, Path((sid, file)): Path<(String, String)>) -> ApiResult<Response> {
    let slot = st.slot(&sid)?;
    let (stem, ext) = file.split_once('.').ok_or_else(|| ApiError::not_found(format!("image {file}")))?;
    let media = match ext {
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "webp" => "image/webp",
        _ => return Err(ApiError::not_found(format!("image {file}"))),
    };
    if stem.len() != 64 || !stem.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ApiError::not_found(format!("image {file}")));
    }
    let bytes = std::fs::read(slot.dir.root.join("images").join(&file)).map_err(|_| ApiError::not_found(format!("image {file}")))?;
    Ok(([(header::CONTENT_TYPE, media), (header::CACHE_CONTROL, "public, max-age=31536000, immutable")], bytes).into_response())
}
