#!/usr/bin/env python3
"""Minimal standalone writer for the MANARWTS weight container.

Usage: write_container.py OUT

Writes two fixed entries so the Rust loader can be checked against a writer
that shares no code with it:
  "w"      shape (2, 3), values k * 0.25 - 0.5 for k = 0..5
  "b.bias" shape (4,),   values 1, -2, 3.5, 1e-3
"""
import struct
import sys

ENTRIES = [
    ("w", (2, 3), [k * 0.25 - 0.5 for k in range(6)]),
    ("b.bias", (4,), [1.0, -2.0, 3.5, 1e-3]),
]


def main(path):
    out = bytearray(b"MANARWTS")
    out += struct.pack("<II", 1, len(ENTRIES))
    for name, shape, values in ENTRIES:
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<II", 0, len(shape))
        out += struct.pack("<%dI" % len(shape), *shape)
        out += struct.pack("<%df" % len(values), *values)
    with open(path, "wb") as f:
        f.write(out)


if __name__ == "__main__":
    main(sys.argv[1])
