use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("attack direction rejected: {0}")]
    DirectionRejected(String),

    #[error("input did not survive the initial noise level (caller must filter survivors)")]
    NotASurvivor,

    #[error("need at least one competing class (K >= 2)")]
    NoCompetingClass,

    #[error("targeted class equals the predicted class")]
    TargetIsPredicted,

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("insufficient vulnerable samples: only {got} NSS values at or below the threshold (need >= 3)")]
    InsufficientVulnerableSamples { got: usize },

    #[error("sample variance is zero")]
    ZeroVariance,

    #[error("bad IDX magic: expected {expected:#010x}, got {got:#010x}")]
    BadMagic { expected: u32, got: u32 },

    #[error("truncated IDX file: {0}")]
    TruncatedIdx(String),

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("training diverged: loss became non-finite at epoch {epoch} (try a smaller learning rate)")]
    DivergedLoss { epoch: usize },

    #[error("manifest hash mismatch: {file} carries {found}, manifest.json hashes to {expected}")]
    ManifestMismatch {
        file: String,
        found: String,
        expected: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
