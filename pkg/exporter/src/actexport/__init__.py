"""actexport: run a transformer over code samples and export pooled
per-layer hidden states as LPT tensor sets for the probing pipeline."""

__version__ = "0.1.0"

from actexport.export import ExportError, ExportJob, ExportResult, export
from actexport.loading import ModelLoadError, load_model_and_tokenizer
