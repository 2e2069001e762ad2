//! Kill/restart over real sockets: every acknowledged submission must
//! survive an abrupt stop of the server runtime.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::sync::Arc;

use deid_review::model::{Roster, RosterVideo};
use deid_review::ReviewService;

fn roster(dir: &Path) -> Roster {
    Roster {
        seed: 3,
        raters: vec!["r1".into(), "r2".into()],
        clinicians: vec![],
        videos: (0..20)
            .map(|i| RosterVideo {
                id: format!("v{i}"),
                path: dir.join(format!("v{i}.bin")),
                real: None,
            })
            .collect(),
    }
}

/// Start a server on its own runtime; dropping the runtime kills it
/// without any graceful shutdown.
fn start(dir: &Path) -> (tokio::runtime::Runtime, SocketAddr) {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(1).enable_all().build().unwrap();
    let service = Arc::new(ReviewService::open(roster(dir), &dir.join("events.jsonl")).unwrap());
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(async move {
        axum::serve(listener, deid_review::http::router(service)).await.unwrap();
    });
    (rt, addr)
}

fn http(addr: SocketAddr, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    let status = out[9..12].parse().unwrap();
    let body = out.split("\r\n\r\n").nth(1).unwrap_or("").to_string();
    (status, body)
}

#[test]
fn acknowledged_submissions_survive_kill_and_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (rt, addr) = start(dir.path());
    let mut acked = Vec::new();
    for i in 0..20 {
        let rater = if i % 2 == 0 { "r1" } else { "r2" };
        let opt = ["A", "B", "C"][i % 3];
        let (status, _) = http(
            addr,
            "POST",
            "/api/ratings",
            &format!(r#"{{"rater_id":"{rater}","video_id":"v{i}","option":"{opt}"}}"#),
        );
        assert_eq!(status, 200);
        acked.push((rater.to_string(), format!("v{i}"), opt.to_string()));
    }
    rt.shutdown_background();

    let (rt, addr) = start(dir.path());
    let (status, body) = http(addr, "GET", "/api/reports/realism", "");
    assert_eq!(status, 200);
    let rep: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(rep["n_records"], 20);
    for (rater, video, opt) in &acked {
        let counts = &rep["per_item"][video];
        let idx = ["A", "B", "C"].iter().position(|o| o == opt).unwrap();
        assert_eq!(counts[idx], 1, "{rater}/{video} lost");
    }
    rt.shutdown_background();
}
