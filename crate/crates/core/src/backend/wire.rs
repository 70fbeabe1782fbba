//! Length-prefixed binary protocol between the sampler and an external
//! model server.
//!
//! Every message is a frame:
//!
//! ```text
//! u32 LE  header length in bytes (1 ..= MAX_HEADER_LEN)
//! [u8]    UTF-8 JSON header
//! [f32]   little-endian payload, sizes implied by the header
//! ```
//!
//! Request header `{height, width, channels, timestep, schedule_id,
//! garment_channels, densepose_channels}`; payload is latent (H·W·channels),
//! garment (H·W·garment_channels), mask (H·W, values 0 or 1), densepose
//! (H·W·densepose_channels).
//!
//! Response header `{status, height, width, channels, message}` with status
//! `"ok"` or `"error"`. An ok response carries eps_cond then eps_uncond
//! (H·W·channels each); an error response carries no payload.
//!
//! One request is in flight per connection; a connection may carry any
//! number of sequential request/response pairs.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use serde::{Deserialize, Serialize};

use super::{DenoiserRequest, DenoiserResponse};
use crate::error::{Error, Result};
use crate::grid::{ConditionSet, Grid2D, Mask};

pub const MAX_HEADER_LEN: u32 = 1 << 20;
/// Upper bound on floats in a single payload section.
pub const MAX_PAYLOAD_FLOATS: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestHeader {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub timestep: usize,
    pub schedule_id: String,
    pub garment_channels: usize,
    pub densepose_channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseHeader {
    pub status: Status,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// A request decoded on the server side.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnedRequest {
    pub latent: Grid2D,
    pub condition: ConditionSet,
    pub timestep: usize,
    pub schedule_id: String,
}

impl OwnedRequest {
    pub fn as_request(&self) -> DenoiserRequest<'_> {
        DenoiserRequest {
            latent: &self.latent,
            condition: &self.condition,
            timestep: self.timestep,
            schedule_id: &self.schedule_id,
        }
    }
}

fn transport(e: io::Error) -> Error {
    Error::Transport(e)
}

fn write_header<W: Write, H: Serialize>(w: &mut W, header: &H) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let len = u32::try_from(json.len())
        .ok()
        .filter(|&l| l <= MAX_HEADER_LEN)
        .ok_or_else(|| Error::Protocol(format!("header of {} bytes too large", json.len())))?;
    w.write_all(&len.to_le_bytes()).map_err(transport)?;
    w.write_all(&json).map_err(transport)
}

fn write_floats<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(transport)
}

/// Reads a frame header. `Ok(None)` means the peer closed cleanly before a
/// new frame began.
fn read_header<R: Read, H: for<'de> Deserialize<'de>>(r: &mut R) -> Result<Option<H>> {
    let mut len_bytes = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len_bytes[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(Error::Transport(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "stream closed inside length prefix",
                )))
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(transport(e)),
        }
    }
    let len = u32::from_le_bytes(len_bytes);
    if len == 0 || len > MAX_HEADER_LEN {
        return Err(Error::Protocol(format!(
            "malformed header length {len} (allowed 1..={MAX_HEADER_LEN})"
        )));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(transport)?;
    serde_json::from_slice(&json)
        .map(Some)
        .map_err(|e| Error::Protocol(format!("bad header json: {e}")))
}

fn payload_len(parts: &[usize]) -> Result<usize> {
    parts
        .iter()
        .try_fold(1usize, |acc, &p| acc.checked_mul(p))
        .filter(|&n| n <= MAX_PAYLOAD_FLOATS)
        .ok_or_else(|| Error::Protocol(format!("payload dimensions {parts:?} too large")))
}

fn read_floats<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 4];
    r.read_exact(&mut buf).map_err(transport)?;
    Ok(buf
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect())
}

fn read_grid<R: Read>(r: &mut R, h: usize, w: usize, c: usize) -> Result<Grid2D> {
    let n = payload_len(&[h, w, c])?;
    let values = read_floats(r, n)?;
    Grid2D::new(h, w, c, values).map_err(|e| Error::Protocol(format!("invalid payload: {e}")))
}

pub fn write_request<W: Write>(w: &mut W, req: &DenoiserRequest<'_>) -> Result<()> {
    let (h, wd, c) = req.latent.dims();
    let header = RequestHeader {
        height: h,
        width: wd,
        channels: c,
        timestep: req.timestep,
        schedule_id: req.schedule_id.to_string(),
        garment_channels: req.condition.garment.channels(),
        densepose_channels: req.condition.densepose.channels(),
    };
    write_header(w, &header)?;
    write_floats(w, req.latent.values())?;
    write_floats(w, req.condition.garment.values())?;
    write_floats(w, req.condition.mask.to_grid().values())?;
    write_floats(w, req.condition.densepose.values())?;
    w.flush().map_err(transport)
}

pub fn read_request<R: Read>(r: &mut R) -> Result<Option<OwnedRequest>> {
    let Some(header) = read_header::<_, RequestHeader>(r)? else {
        return Ok(None);
    };
    let (h, w) = (header.height, header.width);
    if h == 0 || w == 0 || header.channels == 0 {
        return Err(Error::Protocol(format!(
            "empty raster {h}x{w}x{}",
            header.channels
        )));
    }
    let latent = read_grid(r, h, w, header.channels)?;
    let garment = read_grid(r, h, w, header.garment_channels)?;
    let mask_grid = read_grid(r, h, w, 1)?;
    let mask =
        Mask::from_grid(&mask_grid).map_err(|e| Error::Protocol(format!("mask payload: {e}")))?;
    let densepose = read_grid(r, h, w, header.densepose_channels)?;
    Ok(Some(OwnedRequest {
        latent,
        condition: ConditionSet::new(garment, mask, densepose)?,
        timestep: header.timestep,
        schedule_id: header.schedule_id,
    }))
}

/// Writes either a successful prediction or a server-side failure message.
pub fn write_response<W: Write>(
    w: &mut W,
    resp: std::result::Result<&DenoiserResponse, &str>,
) -> Result<()> {
    match resp {
        Ok(r) => {
            let (h, wd, c) = r.eps_cond.dims();
            if !r.eps_uncond.same_shape(&r.eps_cond) {
                return Err(Error::Contract(
                    "eps_cond and eps_uncond differ in shape".into(),
                ));
            }
            write_header(
                w,
                &ResponseHeader {
                    status: Status::Ok,
                    height: h,
                    width: wd,
                    channels: c,
                    message: None,
                },
            )?;
            write_floats(w, r.eps_cond.values())?;
            write_floats(w, r.eps_uncond.values())?;
        }
        Err(message) => write_header(
            w,
            &ResponseHeader {
                status: Status::Error,
                height: 0,
                width: 0,
                channels: 0,
                message: Some(message.to_string()),
            },
        )?,
    }
    w.flush().map_err(transport)
}

/// Reads one response and checks it against the latent it answers.
pub fn read_response<R: Read>(r: &mut R, latent: &Grid2D) -> Result<DenoiserResponse> {
    let header: ResponseHeader = read_header(r)?.ok_or_else(|| {
        Error::Transport(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            "server closed the connection before responding",
        ))
    })?;
    if header.status == Status::Error {
        return Err(Error::Remote(
            header
                .message
                .unwrap_or_else(|| "unspecified failure".into()),
        ));
    }
    let (h, w, c) = (header.height, header.width, header.channels);
    let eps_cond = read_grid(r, h, w, c)?;
    let eps_uncond = read_grid(r, h, w, c)?;
    let resp = DenoiserResponse {
        eps_cond,
        eps_uncond,
    };
    resp.check_against(latent)?;
    Ok(resp)
}

/// Answers requests on one connection until the peer disconnects.
pub fn serve_connection<F>(stream: TcpStream, handler: &F) -> Result<()>
where
    F: Fn(&DenoiserRequest<'_>) -> std::result::Result<DenoiserResponse, String>,
{
    let mut reader = BufReader::new(stream.try_clone().map_err(transport)?);
    let mut writer = BufWriter::new(stream);
    while let Some(req) = read_request(&mut reader)? {
        match handler(&req.as_request()) {
            Ok(resp) => write_response(&mut writer, Ok(&resp))?,
            Err(msg) => write_response(&mut writer, Err(&msg))?,
        }
    }
    Ok(())
}

/// Accepts connections forever, one thread per connection.
pub fn serve<F>(listener: TcpListener, handler: F) -> Result<()>
where
    F: Fn(&DenoiserRequest<'_>) -> std::result::Result<DenoiserResponse, String>
        + Send
        + Sync
        + 'static,
{
    let handler = std::sync::Arc::new(handler);
    for stream in listener.incoming() {
        let stream = stream.map_err(transport)?;
        let handler = handler.clone();
        thread::spawn(move || {
            // A misbehaving client only loses its own connection.
            let _ = serve_connection(stream, &*handler);
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn sample() -> (Grid2D, ConditionSet) {
        let latent =
            Grid2D::from_fn(3, 4, 3, |y, x, c| (y * 4 + x) as f64 * 0.25 - c as f64).unwrap();
        let cond = ConditionSet::new(
            Grid2D::filled(3, 4, 3, 0.5).unwrap(),
            Mask::from_fn(3, 4, |y, x| y > x).unwrap(),
            Grid2D::filled(3, 4, 1, 0.125).unwrap(),
        )
        .unwrap();
        (latent, cond)
    }

    #[test]
    fn request_round_trip_in_memory() {
        let (latent, cond) = sample();
        let req = DenoiserRequest::new(&latent, &cond, 7, "sched").unwrap();
        let mut buf = Vec::new();
        write_request(&mut buf, &req).unwrap();
        let back = read_request(&mut Cursor::new(buf)).unwrap().unwrap();
        assert_eq!(back.latent, latent);
        assert_eq!(back.condition, cond);
        assert_eq!(back.timestep, 7);
        assert_eq!(back.schedule_id, "sched");
    }

    #[test]
    fn header_layout_is_length_prefixed_json() {
        let (latent, cond) = sample();
        let req = DenoiserRequest::new(&latent, &cond, 2, "s").unwrap();
        let mut buf = Vec::new();
        write_request(&mut buf, &req).unwrap();
        let len = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&buf[4..4 + len]).unwrap();
        assert_eq!(header["height"], 3);
        assert_eq!(header["width"], 4);
        assert_eq!(header["channels"], 3);
        assert_eq!(header["timestep"], 2);
        // latent 36 + garment 36 + mask 12 + densepose 12 floats
        assert_eq!(buf.len(), 4 + len + 4 * (36 + 36 + 12 + 12));
        let first = f32::from_le_bytes(buf[4 + len..8 + len].try_into().unwrap());
        assert_eq!(first, latent.values()[0] as f32);
    }

    #[test]
    fn malformed_length_is_protocol_error() {
        let mut huge = Vec::from((MAX_HEADER_LEN + 1).to_le_bytes());
        huge.extend_from_slice(b"{}");
        assert!(matches!(
            read_request(&mut Cursor::new(huge)),
            Err(Error::Protocol(_))
        ));
        let zero = Vec::from(0u32.to_le_bytes());
        assert!(matches!(
            read_request(&mut Cursor::new(zero)),
            Err(Error::Protocol(_))
        ));
        let mut junk = Vec::from(3u32.to_le_bytes());
        junk.extend_from_slice(b"abc");
        assert!(matches!(
            read_request(&mut Cursor::new(junk)),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn truncation_is_transport_error() {
        let (latent, cond) = sample();
        let req = DenoiserRequest::new(&latent, &cond, 2, "s").unwrap();
        let mut buf = Vec::new();
        write_request(&mut buf, &req).unwrap();
        for cut in [2, 10, buf.len() - 1] {
            let r = read_request(&mut Cursor::new(buf[..cut].to_vec()));
            assert!(matches!(r, Err(Error::Transport(_))), "cut at {cut}: {r:?}");
        }
        assert!(read_request(&mut Cursor::new(Vec::new()))
            .unwrap()
            .is_none());
    }

    #[test]
    fn error_response_carries_message() {
        let mut buf = Vec::new();
        write_response(&mut buf, Err("model exploded")).unwrap();
        let latent = Grid2D::zeros(1, 1, 1).unwrap();
        match read_response(&mut Cursor::new(buf), &latent) {
            Err(Error::Remote(m)) => assert_eq!(m, "model exploded"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_shape_response_is_contract_error() {
        let resp = DenoiserResponse {
            eps_cond: Grid2D::zeros(2, 2, 3).unwrap(),
            eps_uncond: Grid2D::zeros(2, 2, 3).unwrap(),
        };
        let mut buf = Vec::new();
        write_response(&mut buf, Ok(&resp)).unwrap();
        let latent = Grid2D::zeros(2, 3, 3).unwrap();
        assert!(matches!(
            read_response(&mut Cursor::new(buf), &latent),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn non_binary_mask_payload_rejected() {
        let (latent, cond) = sample();
        let req = DenoiserRequest::new(&latent, &cond, 2, "s").unwrap();
        let mut buf = Vec::new();
        write_request(&mut buf, &req).unwrap();
        let len = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
        let mask_start = 4 + len + 4 * 72;
        buf[mask_start..mask_start + 4].copy_from_slice(&0.5f32.to_le_bytes());
        assert!(matches!(
            read_request(&mut Cursor::new(buf)),
            Err(Error::Protocol(_))
        ));
    }
}
