use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::sync::Mutex;
use std::time::Duration;

use super::{wire, Denoiser, DenoiserRequest, DenoiserResponse};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// Client for an external model server speaking [`wire`].
///
/// Idle connections are pooled; each call checks one out, so concurrent
/// callers each get their own connection. A connection that saw any error is
/// dropped rather than reused. There is no retry.
#[derive(Debug)]
pub struct RemoteDenoiser {
    addr: String,
    timeout: Option<Duration>,
    idle: Mutex<Vec<TcpStream>>,
}

impl RemoteDenoiser {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            timeout: None,
            idle: Mutex::new(Vec::new()),
        }
    }

    /// Sets a read/write timeout on every connection.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn checkout(&self) -> Result<TcpStream> {
        if let Some(stream) = self.idle.lock().expect("pool lock").pop() {
            return Ok(stream);
        }
        let stream = TcpStream::connect(&self.addr).map_err(Error::Transport)?;
        stream.set_nodelay(true).map_err(Error::Transport)?;
        stream
            .set_read_timeout(self.timeout)
            .map_err(Error::Transport)?;
        stream
            .set_write_timeout(self.timeout)
            .map_err(Error::Transport)?;
        Ok(stream)
    }

    fn exchange(stream: &TcpStream, req: &DenoiserRequest<'_>) -> Result<DenoiserResponse> {
        let mut writer = BufWriter::new(stream);
        wire::write_request(&mut writer, req)?;
        drop(writer);
        let mut reader = BufReader::new(stream);
        wire::read_response(&mut reader, req.latent)
    }
}

impl Denoiser for RemoteDenoiser {
    fn denoise(
        &self,
        req: &DenoiserRequest<'_>,
        _sched: &NoiseSchedule,
    ) -> Result<DenoiserResponse> {
        let stream = self.checkout()?;
        let resp = Self::exchange(&stream, req)?;
        self.idle.lock().expect("pool lock").push(stream);
        Ok(resp)
    }

    fn describe(&self) -> String {
        format!("remote:{}", self.addr)
    }
}

/// One-shot call over a fresh connection.
pub fn remote_denoise(req: &DenoiserRequest<'_>, endpoint: &str) -> Result<DenoiserResponse> {
    let stream = TcpStream::connect(endpoint).map_err(Error::Transport)?;
    RemoteDenoiser::exchange(&stream, req)
}
