//! Readers and writers for every on-disk format, plus the synthetic scene
//! generator used by tests and the demo pipeline.
//!
//! Byte-level parsers take `&[u8]` and never panic on malformed input; the
//! path-based helpers wrap them with file IO.

pub mod config;
pub mod obj;
pub mod ply;
pub mod png_io;
pub mod synth;
pub mod tensor;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{read_json, to_json_pretty, write_json};
pub use obj::{read_obj, write_obj};
pub use ply::{read_ply, write_ply, PlyFormat};
pub use png_io::{read_depth_png, read_rgb_png, write_depth_png, write_rgb_png, DepthSidecar};
pub use synth::{synth_scene, synth_scene_with, SceneKind, SynthOptions, SynthScene, SynthView};
pub use tensor::{read_latent, read_sparse, read_tensor, write_latent, write_sparse, write_tensor, Tensor};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("truncated {what} at byte {offset}: expected {needed} more bytes, found {available}")]
    Truncated {
        what: &'static str,
        offset: usize,
        needed: u64,
        available: usize,
    },
    #[error("malformed {what} at byte {offset}: {message}")]
    Malformed {
        what: &'static str,
        offset: usize,
        message: String,
    },
    #[error("unknown PLY property `{name}` at byte {offset}")]
    UnknownProperty { name: String, offset: usize },
    #[error("{what} has {extra} unexpected trailing bytes at byte {offset}")]
    Trailing {
        what: &'static str,
        offset: usize,
        extra: usize,
    },
    #[error("png: {0}")]
    Png(String),
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Core(#[from] jga_core::CoreError),
    #[error(transparent)]
    Render(#[from] jga_render::RenderError),
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let wrap = |source| IoError::File {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(wrap)?;
    }
    std::fs::write(path, bytes).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Cursor over a byte slice that reports truncation with offsets.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.remaining() < n {
            return Err(IoError::Truncated {
                what: self.what,
                offset: self.pos,
                needed: n as u64,
                available: self.remaining(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<(), IoError> {
        if self.remaining() > 0 {
            return Err(IoError::Trailing {
                what: self.what,
                offset: self.pos,
                extra: self.remaining(),
            });
        }
        Ok(())
    }
}
