"""Error type shared by every layer.

All domain failures carry a stable machine-readable ``code`` (for example
``"root-exists"`` or ``"crl-stale"``).  The wire protocol and the CLI surface
that code verbatim.
"""

from __future__ import annotations


class PkiError(Exception):
    """A domain error identified by a short kebab-case code."""

    def __init__(self, code: str, detail: str = "") -> None:
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}" if detail else code)
