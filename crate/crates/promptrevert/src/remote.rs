//! HTTP caption service client.
//!
//! `POST {base_url}/caption` with a multipart field `image` holding PNG bytes;
//! the service answers `{"caption": "..."}`.

use std::time::Duration;

use promptrevert_core::captioner::CaptionProvider;
use promptrevert_core::types::ImageTensor;
use promptrevert_core::Error;
use reqwest::blocking::{multipart, Client};
use serde::{Deserialize, Serialize};

use crate::io::encode_png;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout_s: f64,
    /// Extra attempts after the first failure.
    pub retries: u32,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            timeout_s: 30.0,
            retries: 2,
        }
    }
}

pub struct RemoteCaptioner {
    config: RemoteConfig,
    client: Client,
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl RemoteCaptioner {
    pub fn new(config: RemoteConfig) -> Result<Self, Error> {
        if !(config.timeout_s > 0.0) {
            return Err(Error::InvalidConfig("caption timeout must be positive".into()));
        }
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("http client: {e}")))?;
        Ok(Self { config, client })
    }

    fn endpoint(&self) -> String {
        format!("{}/caption", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, png: &[u8]) -> Result<String, Attempt> {
        let part = multipart::Part::bytes(png.to_vec())
            .file_name("image.png")
            .mime_str("image/png")
            .expect("static mime type");
        let form = multipart::Form::new().part("image", part);
        let resp = self
            .client
            .post(self.endpoint())
            .multipart(form)
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        let body = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        parse_caption(&body).map_err(Attempt::Fatal)
    }
}

/// Pull the `caption` string out of a response body.
pub fn parse_caption(body: &str) -> Result<String, Error> {
    #[derive(Deserialize)]
    struct Reply {
        caption: String,
    }
    serde_json::from_str::<Reply>(body)
        .map(|r| r.caption)
        .map_err(|e| Error::Protocol(format!("bad caption response: {e}")))
}

impl CaptionProvider for RemoteCaptioner {
    fn name(&self) -> &str {
        "remote"
    }

    fn caption_text(&self, x: &ImageTensor) -> Result<String, Error> {
        let png = encode_png(x).map_err(|e| Error::Format(e.to_string()))?;
        let mut last = String::new();
        for _ in 0..=self.config.retries {
            match self.attempt(&png) {
                Ok(caption) => return Ok(caption),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) => last = message,
            }
        }
        Err(Error::Transport {
            retries: self.config.retries,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_reply() {
        assert_eq!(parse_caption(r#"{"caption":"a cat"}"#).unwrap(), "a cat");
        let err = parse_caption(r#"{"label":"x"}"#).unwrap_err().to_string();
        assert!(err.contains("caption"), "{err}");
        assert!(matches!(parse_caption("not json"), Err(Error::Protocol(_))));
    }
}
