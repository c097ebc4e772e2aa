"""Authentication and red-team event records and their line parsers.

The auth format is a 9-field CSV record:
``time,src_user@dom,dst_user@dom,src_computer,dst_computer,auth_type,logon_type,orientation,success``
and the red-team format a 4-field record:
``time,user@dom,src_computer,dst_computer``.
Files may be plain text or gzip, UTF-8, LF or CRLF.
"""

from __future__ import annotations

import gzip
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

AUTH_NTLM = "NTLM"
KNOWN_AUTH_TYPES = ("NTLM", "Kerberos", "Negotiate")


class ParseError(ValueError):
    """Malformed input line; carries the 1-based line number when known."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class AuthEvent:
    time: int
    src_user: str
    dst_user: str
    src_computer: str
    dst_computer: str
    auth_type: str
    logon_type: str
    orientation: str
    success: bool

    def __post_init__(self):
        if self.time < 0:
            raise ValueError(f"AuthEvent time {self.time} < 0")
        if not self.src_computer or not self.dst_computer:
            raise ValueError("AuthEvent computers must be non-empty")

    @property
    def is_ntlm(self) -> bool:
        # Case-sensitive match per the log format.
        return self.auth_type == AUTH_NTLM

    @property
    def auth_kind(self) -> str:
        return self.auth_type if self.auth_type in KNOWN_AUTH_TYPES else "Other"


@dataclass(frozen=True)
class RedteamEvent:
    time: int
    user: str
    src_computer: str
    dst_computer: str

    def __post_init__(self):
        if self.time < 0:
            raise ValueError(f"RedteamEvent time {self.time} < 0")


def parse_auth_line(line: str, lineno: int | None = None) -> AuthEvent:
    fields = line.rstrip("\r\n").split(",")
    if len(fields) != 9:
        raise ParseError(f"expected 9 comma-separated fields, got {len(fields)}", lineno)
    try:
        t = int(fields[0])
    except ValueError:
        raise ParseError(f"non-integer time {fields[0]!r}", lineno) from None
    if t < 0:
        raise ParseError(f"negative time {t}", lineno)
    if not fields[3] or not fields[4]:
        raise ParseError("empty computer field", lineno)
    return AuthEvent(
        time=t,
        src_user=fields[1],
        dst_user=fields[2],
        src_computer=fields[3],
        dst_computer=fields[4],
        auth_type=fields[5],
        logon_type=fields[6],
        orientation=fields[7],
        success=fields[8] == "Success",
    )


def parse_redteam_line(line: str, lineno: int | None = None) -> RedteamEvent:
    fields = line.rstrip("\r\n").split(",")
    if len(fields) != 4:
        raise ParseError(f"expected 4 comma-separated fields, got {len(fields)}", lineno)
    try:
        t = int(fields[0])
    except ValueError:
        raise ParseError(f"non-integer time {fields[0]!r}", lineno) from None
    if t < 0:
        raise ParseError(f"negative time {t}", lineno)
    return RedteamEvent(time=t, user=fields[1], src_computer=fields[2], dst_computer=fields[3])


def _open_text(path: str | Path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8", newline="")
    return open(path, "rt", encoding="utf-8", newline="")


def read_auth_file(path: str | Path) -> Iterator[AuthEvent]:
    """Stream auth events from a plain or gzip CSV file; blank lines skipped."""
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            yield parse_auth_line(line, lineno)


def read_redteam_file(path: str | Path) -> list[RedteamEvent]:
    with _open_text(path) as fh:
        return [
            parse_redteam_line(line, lineno)
            for lineno, line in enumerate(fh, start=1)
            if line.strip()
        ]
