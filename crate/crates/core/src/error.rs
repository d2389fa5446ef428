use std::path::PathBuf;

/// Errors produced by the curation and evaluation stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset root {0} does not exist")]
    MissingRoot(PathBuf),

    #[error("unknown class label {0:?} (no entry in the label map)")]
    UnknownLabel(String),

    #[error("invalid label map: {0}")]
    LabelMap(String),

    #[error("image decode failed for {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("image encode failed: {0}")]
    Encode(String),

    #[error("invalid dimensions {width}x{height}")]
    Dimensions { width: u32, height: u32 },

    #[error("records without a perceptual hash: {}", .0.join(", "))]
    MissingHash(Vec<String>),

    #[error(
        "catalog is not deduplicated: {count} hash(es) occur in more than one team (first: {example}); run dedup before split"
    )]
    NotDeduplicated { count: usize, example: String },

    #[error("invalid catalog: {0}")]
    Catalog(String),

    #[error("invalid split request: {0}")]
    Split(String),

    #[error("invalid metric input: {0}")]
    Metric(String),

    #[error("training error: {0}")]
    Train(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV error in {context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}

pub(crate) fn json_err(context: impl Into<String>) -> impl FnOnce(serde_json::Error) -> Error {
    let context = context.into();
    move |source| Error::Json { context, source }
}

pub(crate) fn csv_err(context: impl Into<String>) -> impl FnOnce(csv::Error) -> Error {
    let context = context.into();
    move |source| Error::Csv { context, source }
}
