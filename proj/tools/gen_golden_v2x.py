#!/usr/bin/env python3
"""Writes the MSV2 golden fixtures from the byte-layout table alone.

Independent of the C++ encoder: struct packing plus zlib's CRC-32.
Usage: gen_golden_v2x.py OUT_DIR
"""
import struct
import sys
import zlib
from pathlib import Path

MAGIC = b"MSV2"
VERSION = 1


def header(seq, producer_ts, frame_ts, count, pred_k):
    h = MAGIC + struct.pack("<BIQQHB", VERSION, seq, producer_ts, frame_ts, count, pred_k)
    return h + struct.pack("<I", zlib.crc32(h))


def vehicle(vid, cls, lat_q, lon_q, heading_q, speed_q, predicted):
    body = struct.pack("<IBiiHHB", vid, cls, lat_q, lon_q, heading_q, speed_q, 0)
    for plat, plon in predicted:
        body += struct.pack("<ii", plat, plon)
    return body


def message(seq, producer_ts, frame_ts, pred_k, vehicles):
    data = header(seq, producer_ts, frame_ts, len(vehicles), pred_k) + b"".join(vehicles)
    return data + struct.pack("<I", zlib.crc32(data))


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else ".")
    out.mkdir(parents=True, exist_ok=True)
    empty = message(1, 1700000000000, 1699999999600, 3, [])
    # lat 42.2808100, lon -83.7430000, heading 90 deg, speed 5.5 m/s
    one = message(
        7,
        1700000000400,
        1700000000000,
        3,
        [
            vehicle(
                42,
                0,
                422808100,
                -837430000,
                7200,
                275,
                [(422808200, -837429000), (422808300, -837428000), (422808400, -837427000)],
            )
        ],
    )
    (out / "v2x_golden_empty.bin").write_bytes(empty)
    (out / "v2x_golden_one.bin").write_bytes(one)
    print(f"empty: {len(empty)} bytes, one vehicle: {len(one)} bytes")


if __name__ == "__main__":
    main()
