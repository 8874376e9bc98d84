use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use promptrevert::remote::{RemoteCaptioner, RemoteConfig};
use promptrevert_core::captioner::CaptionProvider;
use promptrevert_core::types::ImageTensor;
use promptrevert_core::Error;

struct Mock {
    url: String,
    requests: Arc<Mutex<Vec<(String, Vec<u8>)>>>,
}

/// Serve `status` and `body` to every request until the test ends.
fn serve(status: u16, body: &'static str) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut payload = vec![0u8; length];
            reader.read_exact(&mut payload).unwrap();
            log.lock().unwrap().push((request_line.trim().to_string(), payload));
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    Mock { url, requests }
}

fn captioner(url: &str) -> RemoteCaptioner {
    RemoteCaptioner::new(RemoteConfig {
        base_url: url.to_string(),
        timeout_s: 5.0,
        retries: 2,
    })
    .unwrap()
}

fn image() -> ImageTensor {
    ImageTensor::new(2, 2, vec![0.5; 12]).unwrap()
}

#[test]
fn posts_a_png_and_reads_the_caption() {
    let mock = serve(200, r#"{"caption": "A Red Cat"}"#);
    let text = captioner(&format!("{}/", mock.url)).caption_text(&image()).unwrap();
    assert_eq!(text, "A Red Cat");
    let requests = mock.requests.lock().unwrap();
    assert_eq!(requests.len(), 1);
    let (line, payload) = &requests[0];
    assert!(line.starts_with("POST /caption "), "{line}");
    let body = String::from_utf8_lossy(payload);
    assert!(body.contains("name=\"image\""));
    assert!(payload.windows(4).any(|w| w == b"\x89PNG"));
}

#[test]
fn server_errors_are_retried_then_reported() {
    let mock = serve(500, "{}");
    let err = captioner(&mock.url).caption_text(&image()).unwrap_err();
    assert!(matches!(err, Error::Transport { retries: 2, ref message } if message.contains("500")), "{err}");
    assert_eq!(mock.requests.lock().unwrap().len(), 3);
}

#[test]
fn malformed_replies_are_protocol_errors() {
    let mock = serve(200, r#"{"label": "cat"}"#);
    let err = captioner(&mock.url).caption_text(&image()).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
    assert_eq!(mock.requests.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_service_is_a_transport_error() {
    // bind then drop to get a port nobody listens on
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = captioner(&format!("http://127.0.0.1:{port}")).caption_text(&image()).unwrap_err();
    assert!(matches!(err, Error::Transport { .. }), "{err}");
    assert!(RemoteCaptioner::new(RemoteConfig { timeout_s: 0.0, ..Default::default() }).is_err());
}
