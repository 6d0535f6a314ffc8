//! Blocking JSON-over-HTTP with bearer auth and retry on transient failures.

use std::time::Duration;

use serde_json::Value;

use crate::error::ProviderError;

#[derive(Debug, Clone)]
pub(crate) struct JsonClient {
    client: reqwest::blocking::Client,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
}

impl JsonClient {
    pub(crate) fn new(api_key: Option<String>, timeout: Duration, max_retries: u32) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(JsonClient {
            client,
            api_key,
            max_retries,
            backoff: Duration::from_millis(200),
        })
    }

    #[cfg(test)]
    pub(crate) fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub(crate) fn post(&self, url: &str, body: &Value) -> Result<Value, ProviderError> {
        let mut attempt = 0;
        loop {
            match self.post_once(url, body) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    log::warn!("POST {url} failed ({e}); retry {}/{}", attempt + 1, self.max_retries);
                    std::thread::sleep(self.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value, ProviderError> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(format!("{e}: {text}")))
    }
}

pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

#[cfg(test)]
pub(crate) mod testing {
    //! One-shot local HTTP server replaying canned responses.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    pub(crate) struct Reply {
        status: u16,
        body: String,
    }

    impl Reply {
        pub(crate) fn json(body: &str) -> Self {
            Reply {
                status: 200,
                body: body.to_string(),
            }
        }

        pub(crate) fn status(status: u16, body: &str) -> Self {
            Reply {
                status,
                body: body.to_string(),
            }
        }
    }

    #[derive(Debug, Clone)]
    pub(crate) struct SeenRequest {
        pub path: String,
        pub authorization: Option<String>,
        pub body: String,
    }

    /// Serve `replies` in order, one per connection. Returns the base URL and
    /// the requests received so far.
    pub(crate) fn serve(replies: Vec<Reply>) -> (String, Arc<Mutex<Vec<SeenRequest>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        std::thread::spawn(move || {
            for reply in replies {
                let Ok((stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
                let mut len = 0;
                let mut auth = None;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    let h = h.trim_end();
                    if h.is_empty() {
                        break;
                    }
                    let (name, value) = h.split_once(':').unwrap_or((h, ""));
                    match name.to_ascii_lowercase().as_str() {
                        "content-length" => len = value.trim().parse().unwrap_or(0),
                        "authorization" => auth = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                log.lock().unwrap().push(SeenRequest {
                    path,
                    authorization: auth,
                    body: String::from_utf8_lossy(&body).into_owned(),
                });
                let mut stream = stream;
                let resp = format!(
                    "HTTP/1.1 {} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                    reply.status,
                    reply.body.len(),
                    reply.body
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        (url, seen)
    }
}
