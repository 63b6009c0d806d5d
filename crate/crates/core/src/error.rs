use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate lat={lat}, lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },

    #[error("local frame origin latitude {0} too close to a pole")]
    DegenerateFrame(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("traces are not aligned: {0}")]
    Misaligned(String),

    #[error("negative radiation value {0} cpm")]
    NegativeCpm(f64),

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Poi(#[from] crate::attack::poi::PoiError),
}
