"""ropelab: a laboratory for two-axis rotary position encodings on video-style token
sequences, plus the evaluation and annotation tooling around them."""

__version__ = "0.1.0"
