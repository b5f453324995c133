//! Minimal HTTP/1.1 static file server for the browser console. GET and
//! HEAD only, one request per connection.

use std::fs;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

/// Served at `/` when no UI directory is configured.
const PLACEHOLDER: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>roadmark</title></head>
<body>
<h1>roadmark vehicle server</h1>
<p>No UI directory was given (<code>--ui-dir</code>). The JSON bridge is on the
WebSocket port listed in <a href=\"/config.json\">/config.json</a>.</p>
</body></html>
";

const MAX_HEAD: usize = 8 * 1024;

#[derive(Debug, Clone)]
pub struct StaticSite {
    root: Option<PathBuf>,
    /// Body of `/config.json`.
    config_json: String,
}

#[derive(Debug, PartialEq)]
pub struct Response {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl Response {
    fn text(status: u16, body: &str) -> Self {
        Response { status, content_type: "text/plain; charset=utf-8", body: body.as_bytes().to_vec() }
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        _ => "Internal Server Error",
    }
}

pub fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("html" | "htm") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("json" | "map") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("ico") => "image/x-icon",
        Some("wasm") => "application/wasm",
        Some("txt") => "text/plain; charset=utf-8",
        Some("woff2") => "font/woff2",
        _ => "application/octet-stream",
    }
}

fn percent_decode(s: &str) -> Option<String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = std::str::from_utf8(bytes.get(i + 1..i + 3)?).ok()?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

/// Maps a request target onto a relative file path; `None` for anything
/// that would leave the root.
pub fn sanitize(target: &str) -> Option<PathBuf> {
    let path = target.split(['?', '#']).next().unwrap_or("");
    let decoded = percent_decode(path)?;
    if !decoded.starts_with('/') || decoded.contains('\0') || decoded.contains('\\') {
        return None;
    }
    let mut rel = PathBuf::new();
    for c in Path::new(&decoded[1..]).components() {
        match c {
            Component::Normal(p) => rel.push(p),
            Component::CurDir => {}
            _ => return None,
        }
    }
    if decoded.ends_with('/') || rel.as_os_str().is_empty() {
        rel.push("index.html");
    }
    Some(rel)
}

impl StaticSite {
    pub fn new(root: Option<PathBuf>, config_json: String) -> Self {
        Self { root, config_json }
    }

    pub fn respond(&self, method: &str, target: &str) -> Response {
        if method != "GET" && method != "HEAD" {
            return Response::text(405, "method not allowed\n");
        }
        let Some(rel) = sanitize(target) else {
            return Response::text(404, "not found\n");
        };
        if rel == Path::new("config.json") {
            return Response { status: 200, content_type: "application/json", body: self.config_json.clone().into_bytes() };
        }
        let Some(root) = &self.root else {
            return if rel == Path::new("index.html") {
                Response { status: 200, content_type: "text/html; charset=utf-8", body: PLACEHOLDER.as_bytes().to_vec() }
            } else {
                Response::text(404, "not found\n")
            };
        };
        let path = root.join(&rel);
        match fs::read(&path) {
            Ok(body) => Response { status: 200, content_type: content_type(&path), body },
            Err(_) => Response::text(404, "not found\n"),
        }
    }

    fn handle(&self, mut stream: TcpStream) -> io::Result<()> {
        stream.set_read_timeout(Some(Duration::from_secs(5)))?;
        let mut head = Vec::new();
        let mut buf = [0u8; 1024];
        while !head.windows(4).any(|w| w == b"\r\n\r\n") {
            let n = stream.read(&mut buf)?;
            if n == 0 {
                break;
            }
            head.extend_from_slice(&buf[..n]);
            if head.len() > MAX_HEAD {
                break;
            }
        }
        let text = String::from_utf8_lossy(&head);
        let mut parts = text.lines().next().unwrap_or("").split_whitespace();
        let (method, target) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
        let resp = if method.is_empty() || target.is_empty() { Response::text(400, "bad request\n") } else { self.respond(method, target) };
        write!(
            stream,
            "HTTP/1.1 {} {}\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
            resp.status,
            reason(resp.status),
            resp.content_type,
            resp.body.len()
        )?;
        if method != "HEAD" {
            stream.write_all(&resp.body)?;
        }
        stream.flush()
    }
}

/// Accept loop; returns once `stop` is set.
pub fn serve_static(listener: TcpListener, site: Arc<StaticSite>, stop: Arc<AtomicBool>) -> io::Result<()> {
    listener.set_nonblocking(true)?;
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                let site = site.clone();
                thread::spawn(move || {
                    let _ = site.handle(stream);
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traversal_is_rejected() {
        assert_eq!(sanitize("/"), Some(PathBuf::from("index.html")));
        assert_eq!(sanitize("/app/main.js?v=2"), Some(PathBuf::from("app/main.js")));
        assert_eq!(sanitize("/assets/"), Some(PathBuf::from("assets/index.html")));
        assert_eq!(sanitize("/../etc/passwd"), None);
        assert_eq!(sanitize("/a/%2e%2e/%2e%2e/x"), None);
        assert_eq!(sanitize("relative"), None);
        assert_eq!(sanitize("/%zz"), None);
    }

    #[test]
    fn placeholder_without_root() {
        let site = StaticSite::new(None, "{}".into());
        assert_eq!(site.respond("GET", "/").status, 200);
        assert_eq!(site.respond("GET", "/app.js").status, 404);
        assert_eq!(site.respond("POST", "/").status, 405);
        let cfg = site.respond("GET", "/config.json");
        assert_eq!((cfg.status, cfg.body.as_slice()), (200, &b"{}"[..]));
    }

    #[test]
    fn content_types() {
        assert_eq!(content_type(Path::new("a/index.html")), "text/html; charset=utf-8");
        assert_eq!(content_type(Path::new("main.MJS")), "text/javascript; charset=utf-8");
        assert_eq!(content_type(Path::new("blob")), "application/octet-stream");
    }
}
