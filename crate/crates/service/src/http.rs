//! Serves a [`Handler`] over HTTP/1.1.
//!
//! Handlers are synchronous, so each request runs on tokio's blocking pool.
//! The runtime lives on its own thread and callers never see async code.

use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, HeaderMap, StatusCode, Uri};
use tokio::sync::oneshot;

use crate::transport::{Handler, Method, Request, Response};

const BODY_LIMIT: usize = 256 * 1024 * 1024;

/// A running HTTP listener. Dropping it shuts the listener down.
pub struct HttpServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl HttpServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the listener stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.stop();
    }
}

async fn dispatch(
    State(handler): State<Arc<dyn Handler>>,
    method: axum::http::Method,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> axum::response::Response {
    let method = match method {
        axum::http::Method::GET => Method::Get,
        axum::http::Method::POST => Method::Post,
        _ => return to_axum(Response::error(405, "MethodNotAllowed", "only GET and POST are served")),
    };
    let query = uri
        .query()
        .map(|q| form_urlencoded::parse(q.as_bytes()).into_owned().collect())
        .unwrap_or_default();
    let headers = headers
        .iter()
        .filter_map(|(k, v)| v.to_str().ok().map(|v| (k.as_str().to_owned(), v.to_owned())))
        .collect();
    let request = Request { method, path: uri.path().to_owned(), query, headers, body: body.to_vec() };
    match tokio::task::spawn_blocking(move || handler.handle(&request)).await {
        Ok(response) => to_axum(response),
        Err(e) => to_axum(Response::error(500, "Internal", &e.to_string())),
    }
}

fn to_axum(response: Response) -> axum::response::Response {
    let status = StatusCode::from_u16(response.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    axum::response::Response::builder()
        .status(status)
        .header(header::CONTENT_TYPE, response.content_type)
        .body(axum::body::Body::from(response.body))
        .expect("static response parts are valid")
}

/// Binds `addr` (port 0 picks a free one) and serves `handler` until the
/// returned value is dropped.
pub fn serve(handler: Arc<dyn Handler>, addr: SocketAddr) -> std::io::Result<HttpServer> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = axum::Router::new()
        .fallback(dispatch)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(handler);
    let thread = std::thread::Builder::new().name(format!("http-{addr}")).spawn(move || {
        runtime.block_on(async move {
            let listener = match tokio::net::TcpListener::from_std(listener) {
                Ok(l) => l,
                Err(e) => {
                    log::error!("listener setup failed: {e}");
                    return;
                }
            };
            let shutdown = async {
                let _ = rx.await;
            };
            if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
                log::error!("http server stopped: {e}");
            }
        });
    })?;
    Ok(HttpServer { addr, shutdown: Some(tx), thread: Some(thread) })
}
