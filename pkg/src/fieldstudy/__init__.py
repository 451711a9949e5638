"""Self-hosted field-study orchestration platform.

Task scheduling, configurable multi-sensor log collection with
store-and-forward upload, idempotent ingestion into an append-only event
store, analytics for a monitoring dashboard, and a deterministic
virtual-device simulator that stands in for the mobile client.
"""

__version__ = "0.1.0"
