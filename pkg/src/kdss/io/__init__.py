from .batch import BatchFile, BatchFormatError, read_batch, write_batch
from .digest import file_digest, fnv1a_64
from .manifest import (
    Manifest,
    ManifestError,
    PredictionError,
    StaleManifestError,
    load_subsample_set,
    read_batches,
    read_manifest,
    read_predictions,
    verify_parent,
    write_batches,
    write_predictions,
)
from .ply import (
    PlyBodyError,
    PlyEndianError,
    PlyError,
    PlyHeaderError,
    PlyTruncatedError,
    read_ply,
    write_ply,
)
