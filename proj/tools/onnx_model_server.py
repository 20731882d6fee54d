#!/usr/bin/env python3
"""Serve an ONNX map-cleaning model over the ttogm tile protocol.

    onnx_model_server.py MODEL.onnx [--threads N]

Reads requests from stdin and writes responses to stdout, little-endian:

    request  = b"TTOG" | u32 tile_size | u32 patch_id | tile_size^2 x f32
    response = same layout, echoing tile_size and patch_id

A header-only request with patch_id 0xFFFFFFFF is the handshake; the reply
carries the tile size the model accepts. The model takes one float32 input
of shape (1, 1, T, T) (batch and spatial axes may be dynamic) with values in
[0, 1] and returns the same shape. Diagnostics go to stderr.
"""

import argparse
import struct
import sys

HANDSHAKE_ID = 0xFFFFFFFF
HEADER = struct.Struct("<4sII")
MAGIC = b"TTOG"


def read_exact(stream, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


def fixed_tile_size(shape):
    """Spatial size fixed by the model, or None when the axes are dynamic."""
    if len(shape) != 4:
        raise ValueError(f"model input must be 4-D (N, 1, T, T), got shape {shape}")
    h, w = shape[2], shape[3]
    if isinstance(h, int) and isinstance(w, int):
        if h != w:
            raise ValueError(f"model input must be square, got {h}x{w}")
        return h
    return None


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("model")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    try:
        import numpy as np
        import onnxruntime as ort
    except ImportError as exc:
        print(f"onnx bridge: {exc}; install onnxruntime and numpy", file=sys.stderr)
        return 3

    try:
        opts = ort.SessionOptions()
        opts.intra_op_num_threads = args.threads
        opts.inter_op_num_threads = 1
        session = ort.InferenceSession(args.model, sess_options=opts, providers=["CPUExecutionProvider"])
        inp = session.get_inputs()[0]
        out_name = session.get_outputs()[0].name
        fixed = fixed_tile_size(inp.shape)
    except Exception as exc:  # onnxruntime raises several unrelated types
        print(f"onnx bridge: cannot load '{args.model}': {exc}", file=sys.stderr)
        return 3

    stdin, stdout = sys.stdin.buffer, sys.stdout.buffer
    while True:
        raw = read_exact(stdin, HEADER.size)
        if raw is None:
            return 0
        magic, tile, patch_id = HEADER.unpack(raw)
        if magic != MAGIC:
            print(f"onnx bridge: bad magic {magic!r}", file=sys.stderr)
            return 2
        if patch_id == HANDSHAKE_ID:
            stdout.write(HEADER.pack(MAGIC, fixed if fixed is not None else tile, patch_id))
            stdout.flush()
            continue
        payload = read_exact(stdin, tile * tile * 4)
        if payload is None:
            print("onnx bridge: truncated request", file=sys.stderr)
            return 2
        x = np.frombuffer(payload, dtype="<f4").reshape(1, 1, tile, tile)
        y = session.run([out_name], {inp.name: x})[0]
        y = np.asarray(y, dtype="<f4").reshape(-1)
        if y.size != tile * tile:
            print(f"onnx bridge: model returned {y.size} values for a {tile}x{tile} tile", file=sys.stderr)
            return 3
        stdout.write(HEADER.pack(MAGIC, tile, patch_id))
        stdout.write(y.tobytes())
        stdout.flush()


if __name__ == "__main__":
    sys.exit(main())
