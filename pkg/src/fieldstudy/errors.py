"""Error type shared across components; carries a machine-parsable code."""

from __future__ import annotations


class StudyError(Exception):
    """Operation failure with a stable ``code`` for wire/CLI error bodies."""

    def __init__(self, code: str, message: str):
        self.code = code
        self.message = message
        super().__init__(f"{code}: {message}")
