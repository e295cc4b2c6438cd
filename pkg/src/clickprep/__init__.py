"""clickprep: clickstream cleaning and recommendation-metric evaluation.

Submodules follow the pipeline order: ingest, identity, behavior,
journey, outliers, metrics, validation; synth generates labeled test
logs, pipeline orchestrates, server backs the inspector UI.
"""

from .events import (
    CleaningReport,
    Event,
    EventLog,
    EventType,
    PageType,
    Price,
    Segment,
    validate_event,
)

__version__ = "0.1.0"

__all__ = [
    "Event",
    "EventLog",
    "EventType",
    "PageType",
    "Price",
    "Segment",
    "CleaningReport",
    "validate_event",
    "__version__",
]
