from .csvio import CsvSchema, IngestReport, export_csv, ingest_csv
from .features import (
    DEFAULT_LAGS,
    CalendarFilter,
    Dataset,
    LagSpec,
    extract_samples,
    filter_days,
    split_train_test,
)
from .series import STEP, STEPS_PER_DAY, TimeSeries
from .synthetic import ProfileShape, default_base_profile, generate_feeder

__all__ = [
    "CalendarFilter", "CsvSchema", "DEFAULT_LAGS", "Dataset", "IngestReport", "LagSpec",
    "ProfileShape", "STEP", "STEPS_PER_DAY", "TimeSeries", "default_base_profile",
    "export_csv", "extract_samples", "filter_days", "generate_feeder", "ingest_csv",
    "split_train_test",
]
