use std::io::Write;

use feedmon_server::{serve as serve_api, AppState, ServerConfig};

use crate::error::CliError;
use crate::ServeCmd;

pub fn serve(c: &ServeCmd) -> Result<(), CliError> {
    let mut cfg = match &c.config {
        Some(path) => ServerConfig::load(path)?,
        None => ServerConfig::default(),
    };
    if let Some(b) = &c.bind {
        cfg.bind = b.clone();
    }
    if let Some(t) = c.tick_ms {
        cfg.tick_ms = t;
    }
    if let Some(n) = c.max_live_sessions {
        cfg.max_live_sessions = n;
    }
    if let Some(d) = &c.records_dir {
        cfg.records_dir = d.clone();
    }
    for path in cfg.models.values().chain(&cfg.fsm).chain(&cfg.simulator) {
        std::fs::metadata(path).map_err(|e| CliError::io(path, e))?;
    }
    let state = AppState::from_config(&cfg).map_err(|e| CliError::Validation(e.to_string()))?;

    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::io("<runtime>".as_ref(), e))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.bind)
            .await
            .map_err(|e| CliError::io(cfg.bind.as_ref(), e))?;
        let addr = listener.local_addr().map_err(|e| CliError::io(cfg.bind.as_ref(), e))?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        serve_api(listener, state, shutdown_signal())
            .await
            .map_err(|e| CliError::io(cfg.bind.as_ref(), e))
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
