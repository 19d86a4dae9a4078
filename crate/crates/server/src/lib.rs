//! JSON-over-HTTP front end for [`csrm::serving::ServingState`].
//!
//! | route            | body                          | reply                        |
//! |------------------|-------------------------------|------------------------------|
//! | `POST /score`    | `{query, product_ids}`        | `{generation, results}`      |
//! | `POST /refresh`  | optional `{products}`         | `{generation, products}`     |
//! | `GET /healthz`   |                               | `{generation, cache_size}`   |

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use csrm::corpus::Product;
use csrm::serving::{ScoreResponse, ServingState, StudentPair};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

/// Produces the catalog (and optionally new students) for a refresh without a body.
pub type Reloader =
    Arc<dyn Fn() -> csrm::Result<(Vec<Product>, Option<StudentPair>)> + Send + Sync>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutePaths {
    pub score: String,
    pub refresh: String,
    pub health: String,
}

impl Default for RoutePaths {
    fn default() -> Self {
        RoutePaths {
            score: "/score".into(),
            refresh: "/refresh".into(),
            health: "/healthz".into(),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub serving: Arc<ServingState>,
    pub reload: Option<Reloader>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub query: String,
    pub product_ids: Vec<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefreshRequest {
    #[serde(default)]
    pub products: Option<Vec<Product>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RefreshResponse {
    pub generation: u64,
    pub products: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub generation: u64,
    pub cache_size: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

impl From<csrm::Error> for ApiError {
    fn from(e: csrm::Error) -> Self {
        let status = match e {
            csrm::Error::Validation(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

async fn score(
    State(app): State<AppState>,
    Json(req): Json<ScoreRequest>,
) -> Result<Json<ScoreResponse>, ApiError> {
    let serving = app.serving.clone();
    let out = tokio::task::spawn_blocking(move || serving.score(&req.query, &req.product_ids))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(out))
}

async fn refresh(
    State(app): State<AppState>,
    body: Bytes,
) -> Result<Json<RefreshResponse>, ApiError> {
    let req: RefreshRequest = if body.iter().all(u8::is_ascii_whitespace) {
        RefreshRequest::default()
    } else {
        serde_json::from_slice(&body)
            .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("refresh body: {e}")))?
    };
    let out = tokio::task::spawn_blocking(move || -> csrm::Result<RefreshResponse> {
        let (products, students) = match (req.products, &app.reload) {
            (Some(products), _) => (products, None),
            (None, Some(reload)) => reload()?,
            (None, None) => {
                return Err(csrm::Error::Validation(
                    "no products in the body and no reload source configured".into(),
                ));
            }
        };
        let generation = app.serving.refresh_index(&products, students)?;
        Ok(RefreshResponse {
            generation,
            products: products.len(),
        })
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(out))
}

async fn health(State(app): State<AppState>) -> Json<Health> {
    Json(Health {
        generation: app.serving.generation().id,
        cache_size: app.serving.cache_size(),
    })
}

pub fn router(app: AppState, paths: &RoutePaths) -> Router {
    Router::new()
        .route(&paths.score, post(score))
        .route(&paths.refresh, post(refresh))
        .route(&paths.health, get(health))
        .with_state(app)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    app: AppState,
    paths: &RoutePaths,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app, paths))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server on its own thread and runtime.
pub struct RunningServer {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl RunningServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn start(addr: &str, app: AppState, paths: RoutePaths) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()?;
        let listener = runtime.block_on(TcpListener::bind(addr))?;
        let bound = listener.local_addr()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(serve(listener, app, &paths, async {
                let _ = stopped.await;
            }))
        });
        log::info!("listening on {bound}");
        Ok(RunningServer {
            addr: bound,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    /// Blocks until the server exits on its own.
    pub fn join(mut self) -> std::io::Result<()> {
        self.thread
            .take()
            .map_or(Ok(()), |t| t.join().expect("server thread panicked"))
    }

    pub fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.thread
            .take()
            .map_or(Ok(()), |t| t.join().expect("server thread panicked"))
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
    }
}
