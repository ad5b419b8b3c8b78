//! Serve a harness over a real socket for the duration of a test. Simulator
//! deliveries are left for the test to route, by hand or with `pump`.

use std::net::SocketAddr;

use kforge_core::server::serve;
use tokio::sync::oneshot;

use super::Harness;

pub struct TestServer {
    pub base: String,
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
}

impl TestServer {
    pub async fn start(h: &Harness, rate_limit_per_minute: u32) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel::<()>();
        let kb = h.kb.clone();
        tokio::spawn(async move {
            serve(listener, kb, None, rate_limit_per_minute, async {
                let _ = rx.await;
            })
            .await
            .unwrap();
        });
        TestServer {
            base: format!("http://{addr}"),
            addr,
            stop: Some(tx),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
    }
}
