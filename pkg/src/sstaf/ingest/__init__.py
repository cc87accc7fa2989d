from .edf import AnnotationEvent, EdfHeader, EdfParseError, SignalHeader, parse_edf, read_edf, serialize_header
from .epochs import (CLASS_NAMES, DEFAULT_LABEL_MAP, EPOCH_LEN, MI_RUNS, Epoch, IngestSummary, RawEpoch,
                     epochs_from_recording, extract_epochs, select_mi_runs, standardize_length)
from .store import EpochSet, StoreError, is_epoch_store, read_epoch_store, write_epoch_store

__all__ = [
    "AnnotationEvent", "EdfHeader", "EdfParseError", "SignalHeader", "parse_edf", "read_edf",
    "serialize_header", "CLASS_NAMES", "DEFAULT_LABEL_MAP", "EPOCH_LEN", "MI_RUNS", "Epoch",
    "IngestSummary", "RawEpoch", "epochs_from_recording", "extract_epochs", "select_mi_runs",
    "standardize_length", "EpochSet", "StoreError", "is_epoch_store", "read_epoch_store",
    "write_epoch_store",
]
