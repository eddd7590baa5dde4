use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:?}, expected \"PATK\"")]
    BadMagic([u8; 4]),
    #[error("unsupported tensor format version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("truncated tensor: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("tensor has {0} dimensions, at most 8 are supported")]
    TooManyDims(usize),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("pixel ({x:.4e}, {z:.4e}) m lies behind the probe plane")]
    BehindProbe { x: f64, z: f64 },
    #[error("time of flight {tof:.4e} s for pixel {pixel} is outside the RF record")]
    OutsideRecord { pixel: usize, tof: f64 },
    #[error("operator is degenerate (maps the probe vector to zero)")]
    DegenerateOperator,
    #[error("solver diverged at iteration {0}: non-finite objective")]
    Diverged(usize),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("constant image: {0}")]
    ConstantImage(&'static str),
    #[error("image {rows}x{cols} is smaller than the {window}x{window} window")]
    ImageTooSmall { rows: usize, cols: usize, window: usize },
    #[error("no overlap between reference and warped moving image")]
    EmptyOverlap,
    #[error("stack depth {0} too small, need at least 2")]
    StackTooSmall(usize),
    #[error("output directory {0} already exists (use force to overwrite)")]
    OutputExists(PathBuf),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("png encoding error: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
