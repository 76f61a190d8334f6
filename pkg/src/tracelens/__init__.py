"""tracelens: full-trace instrumentation, a driven tracer, and analyzers."""

__version__ = "0.1.0"
