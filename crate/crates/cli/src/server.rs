//! HTTP backend for interactive diagnosis sessions.
//!
//! Every session lives behind its own async mutex, so requests to one
//! session are handled in arrival order while different sessions proceed
//! in parallel. Model parameters are shared read-only.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};
use tower_http::cors::{Any, CorsLayer};

use toc_core::codec::{SequenceCodec, Token};
use toc_core::error::SimError;
use toc_core::lstm::{forward_prefix, softmax, Checkpoint};
use toc_core::operator::{derive_seed, write_jsonl};
use toc_core::robot::{NodeKind, RobotConfig};
use toc_core::sim::{start_session, Operator, SessionLog, SessionState};

/// Number of proposals returned by `/suggest`.
pub const SUGGESTIONS: usize = 5;

pub struct ServiceState {
    config: Arc<RobotConfig>,
    codec: SequenceCodec,
    model: Option<Arc<Checkpoint>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionState>>>>,
    next_session: AtomicU64,
    master_seed: u64,
    data_out: PathBuf,
    append_lock: Mutex<()>,
}

impl ServiceState {
    /// The codec follows the checkpoint's encoding options when a model is
    /// loaded; `Checkpoint::from_bytes` has already checked its vocabulary.
    pub fn new(config: Arc<RobotConfig>, model: Option<Checkpoint>, master_seed: u64, data_out: PathBuf) -> Self {
        let codec = match &model {
            Some(ckpt) => ckpt.codec_for(&config),
            None => SequenceCodec::new(&config),
        };
        Self {
            config,
            codec,
            model: model.map(Arc::new),
            sessions: RwLock::new(HashMap::new()),
            next_session: AtomicU64::new(0),
            master_seed,
            data_out,
            append_lock: Mutex::new(()),
        }
    }

    async fn session(&self, id: &str) -> Result<Arc<Mutex<SessionState>>, ApiError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session `{id}`")))
    }
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Conflict(String),
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(ErrorBody { error })).into_response()
    }
}

impl From<SimError> for ApiError {
    fn from(err: SimError) -> Self {
        match err {
            SimError::AlreadyResolved => ApiError::Conflict(err.to_string()),
            SimError::UnknownFault(_) | SimError::UnknownSensor(_) | SimError::UnknownAction(_) => {
                ApiError::BadRequest(err.to_string())
            }
            other => ApiError::Internal(other.to_string()),
        }
    }
}

/// Parses a JSON body; an empty body means "all defaults" when allowed.
fn parse_body<T: DeserializeOwned + Default>(body: &Bytes, allow_empty: bool) -> Result<T, ApiError> {
    if allow_empty && body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed body: {e}")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub fault_id: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SensorView {
    pub id: String,
    pub label: String,
    pub group: String,
    pub color_key: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ActionView {
    pub id: String,
    pub label: String,
    pub group: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub symptom_message: String,
    pub sensors: Vec<SensorView>,
    pub actions: Vec<ActionView>,
}

#[derive(Debug, Default, Deserialize)]
pub struct RevealRequest {
    pub sensor_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RevealResponse {
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Default, Deserialize)]
pub struct ActionRequest {
    pub action_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ActionResponse {
    pub resolved: bool,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Suggestion {
    pub kind: String,
    pub entity_id: String,
    pub score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub suggestions: Vec<Suggestion>,
    pub model_loaded: bool,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TaxonomyTree {
    pub id: String,
    pub label: String,
    pub level: u8,
    pub kind: NodeKind,
    /// Sensor or action id attached to a leaf.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub entity_id: Option<String>,
    pub children: Vec<TaxonomyTree>,
}

/// Level-2 ancestor of a leaf, used for grouping and colouring.
fn group_of(config: &RobotConfig, leaf: &str) -> String {
    config
        .taxonomy_path(leaf)
        .ok()
        .and_then(|path| path.get(2).map(|s| s.to_string()))
        .unwrap_or_default()
}

fn leaf_label(config: &RobotConfig, leaf: &str) -> String {
    config.node(leaf).map(|n| n.label.clone()).unwrap_or_else(|| leaf.to_string())
}

async fn create_session(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Json<SessionCreated>, ApiError> {
    let req: CreateSession = parse_body(&body, true)?;
    let counter = state.next_session.fetch_add(1, Ordering::SeqCst);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(state.master_seed, counter));
    let config = &state.config;
    let fault_id = match req.fault_id {
        Some(id) => id,
        None => config.faults[rng.random_range(0..config.faults.len())].id.clone(),
    };
    let seed = req.seed.unwrap_or_else(|| rng.random());
    let session_id = format!("hum-{counter:05}");
    let session = start_session(config.clone(), &fault_id, seed)?
        .with_session_id(session_id.clone())
        .with_operator(Operator::Human);
    let response = SessionCreated {
        session_id: session_id.clone(),
        symptom_message: session.symptom_message().to_string(),
        sensors: config
            .sensors
            .iter()
            .map(|s| {
                let group = group_of(config, &s.taxonomy_leaf);
                SensorView {
                    id: s.id.clone(),
                    label: leaf_label(config, &s.taxonomy_leaf),
                    color_key: group.clone(),
                    group,
                }
            })
            .collect(),
        actions: config
            .actions
            .iter()
            .map(|a| ActionView {
                id: a.id.clone(),
                label: a.label.clone(),
                group: group_of(config, &a.taxonomy_leaf),
            })
            .collect(),
    };
    state
        .sessions
        .write()
        .await
        .insert(session_id, Arc::new(Mutex::new(session)));
    Ok(Json(response))
}

async fn reveal(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<RevealResponse>, ApiError> {
    let session = state.session(&id).await?;
    let req: RevealRequest = parse_body(&body, false)?;
    let mut session = session.lock().await;
    let value = session.reveal_sensor(&req.sensor_id)?;
    let unit = state
        .config
        .sensor(&req.sensor_id)
        .map(|s| s.unit.clone())
        .unwrap_or_default();
    Ok(Json(RevealResponse { value, unit }))
}

async fn action(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ActionResponse>, ApiError> {
    let session = state.session(&id).await?;
    let req: ActionRequest = parse_body(&body, false)?;
    let resolved = session.lock().await.trigger_action(&req.action_id)?;
    Ok(Json(ActionResponse { resolved }))
}

/// Top next-step proposals for the session so far. Only READ/ACT tokens are
/// proposed; scores are softmax probabilities over the whole vocabulary.
pub fn suggestions(checkpoint: &Checkpoint, codec: &SequenceCodec, session: &SessionState) -> Result<Vec<Suggestion>, ApiError> {
    let internal = |e: &dyn std::fmt::Display| ApiError::Internal(e.to_string());
    let mut prefix = codec.encode_header(&session.fault().id).map_err(|e| internal(&e))?;
    for step in session.steps() {
        prefix.push(codec.encode_step(step).map_err(|e| internal(&e))?);
    }
    let (logits, _) = forward_prefix(&checkpoint.params, &prefix).map_err(|e| internal(&e))?;
    let probs = softmax(&logits);
    let mut ranked: Vec<(usize, f64)> = probs
        .into_iter()
        .enumerate()
        .filter(|(id, _)| codec.kind_of(*id).is_ok_and(|k| k.is_step()))
        .collect();
    // Highest score first; lower token id on ties.
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(SUGGESTIONS)
        .map(|(id, score)| {
            let token = codec.decode_token(id).map_err(|e| internal(&e))?;
            let kind = match token {
                Token::Read(_) => "read",
                _ => "act",
            };
            Ok(Suggestion {
                kind: kind.to_string(),
                entity_id: token.entity().unwrap_or_default().to_string(),
                score,
            })
        })
        .collect()
}

async fn suggest(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> Result<Json<SuggestResponse>, ApiError> {
    let session = state.session(&id).await?;
    let Some(model) = state.model.clone() else {
        return Ok(Json(SuggestResponse {
            suggestions: Vec::new(),
            model_loaded: false,
        }));
    };
    let snapshot = session.lock().await.clone();
    let suggestions = suggestions(&model, &state.codec, &snapshot)?;
    Ok(Json(SuggestResponse {
        suggestions,
        model_loaded: true,
    }))
}

/// Persists the session as one JSONL line and closes it.
async fn finish(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> Result<Json<SessionLog>, ApiError> {
    let session = state.session(&id).await?;
    let log = session.lock().await.finalize();
    {
        let _guard = state.append_lock.lock().await;
        let mut line = Vec::new();
        write_jsonl(std::slice::from_ref(&log), &mut line).map_err(|e| ApiError::Internal(e.to_string()))?;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&state.data_out)
            .map_err(|e| ApiError::Internal(format!("{}: {e}", state.data_out.display())))?;
        file.write_all(&line).map_err(|e| ApiError::Internal(e.to_string()))?;
    }
    state.sessions.write().await.remove(&id);
    Ok(Json(log))
}

/// Builds the nested taxonomy from the flat node list.
pub fn taxonomy_tree(config: &RobotConfig) -> Option<TaxonomyTree> {
    let mut entities: HashMap<&str, &str> = HashMap::new();
    for s in &config.sensors {
        entities.insert(&s.taxonomy_leaf, &s.id);
    }
    for a in &config.actions {
        entities.insert(&a.taxonomy_leaf, &a.id);
    }
    fn build(config: &RobotConfig, entities: &HashMap<&str, &str>, id: &str) -> TaxonomyTree {
        let node = config.node(id).expect("validated taxonomy");
        TaxonomyTree {
            id: node.id.clone(),
            label: node.label.clone(),
            level: node.level,
            kind: node.kind,
            entity_id: entities.get(id).map(|e| e.to_string()),
            children: config
                .taxonomy
                .iter()
                .filter(|n| n.parent_id.as_deref() == Some(id))
                .map(|n| build(config, entities, &n.id))
                .collect(),
        }
    }
    let root = config.taxonomy.iter().find(|n| n.parent_id.is_none())?;
    Some(build(config, &entities, &root.id))
}

async fn taxonomy(State(state): State<Arc<ServiceState>>) -> Result<Json<TaxonomyTree>, ApiError> {
    taxonomy_tree(&state.config)
        .map(Json)
        .ok_or_else(|| ApiError::Internal("taxonomy has no root".into()))
}

pub fn router(state: Arc<ServiceState>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{id}/reveal", post(reveal))
        .route("/api/session/{id}/action", post(action))
        .route("/api/session/{id}/suggest", get(suggest))
        .route("/api/session/{id}/finish", post(finish))
        .route("/api/config/taxonomy", get(taxonomy))
        .layer(cors)
        .with_state(state)
}
