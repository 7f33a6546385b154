"""Little-endian binary primitives shared by the checkpoint and dataset formats."""

from __future__ import annotations

import struct


class FormatError(ValueError):
    """Malformed binary file."""


class MagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """File carries an unsupported format version."""


class TruncatedError(FormatError):
    """File ended before the declared content."""


def read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise TruncatedError(f"file truncated while reading {what} "
                             f"(wanted {n} bytes, got {len(data)})")
    return data


def expect_magic(f, magic):
    got = f.read(len(magic))
    if got != magic:
        raise MagicError(f"bad magic: expected {magic!r}, got {got!r}")


def expect_version(f, supported):
    v = read_u32(f, "format version")
    if v != supported:
        raise VersionError(f"unsupported format version {v} (supported: {supported})")
    return v


def read_u8(f, what):
    return read_exact(f, 1, what)[0]


def read_u16(f, what):
    return struct.unpack("<H", read_exact(f, 2, what))[0]


def read_u32(f, what):
    return struct.unpack("<I", read_exact(f, 4, what))[0]


def write_u8(f, v):
    f.write(struct.pack("<B", v))


def write_u16(f, v):
    f.write(struct.pack("<H", v))


def write_u32(f, v):
    f.write(struct.pack("<I", v))
