"""Exceptions shared across file-format and pipeline code."""


class DataFormatError(Exception):
    """A file or stream does not conform to one of the binary or text
    formats this package defines (bad magic, truncation, out-of-range
    fields, unknown keys)."""
