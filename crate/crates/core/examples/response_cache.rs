//! The gateway's content-addressed response cache: a second run over the
//! same requests is served from disk without touching the backend.
//!
//! ```bash
//! cargo run -p clarify-core --example response_cache
//! ```

use std::sync::Arc;

use clarify_core::gateway::{cache_key, Gateway, GatewayRequest, Message, MockBackend, MockEntry, ResponseCache};

fn gateway(dir: &std::path::Path, backend: Arc<MockBackend>) -> std::io::Result<Gateway> {
    let mut gw = Gateway::new().with_cache(Some(ResponseCache::on_disk(dir)?));
    gw.register("lm", backend);
    Ok(gw)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let requests: Vec<GatewayRequest> = ["capital of peru", "capital of chile", "capital of peru"]
        .iter()
        .map(|q| GatewayRequest::new("lm", vec![Message::user(format!("Question: {q}\nAnswer:"))]))
        .collect();
    let script = || {
        Arc::new(MockBackend::new(vec![
            MockEntry::complete("peru", " Lima"),
            MockEntry::complete("chile", " Santiago"),
        ]))
    };

    let first = script();
    let gw = gateway(dir.path(), first.clone())?;
    for r in &requests {
        println!("{} -> {:?}", &cache_key(r)[..12], gw.complete(r)?.text);
    }
    println!("first run: {} backend calls, {} cached entries", first.call_count(), gw.cache().map_or(0, |c| c.len()));

    // Sampled requests with distinct sample indices get distinct keys.
    let sampled = requests[0].clone().temperature(1.0).sample_index(3);
    println!("sampled key {} differs", &cache_key(&sampled)[..12]);

    let second = script();
    let gw = gateway(dir.path(), second.clone())?;
    for r in &requests {
        gw.complete(r)?;
    }
    println!("second run: {} backend calls", second.call_count());
    Ok(())
}
