"""Binary checkpoint format for trained networks.

Layout: ASCII header lines, then raw little-endian float64 tensors in the
order the header lists them::

    WHITENSEQ-CKPT
    version 1
    config <key> <value>        (one line per ModelConfig field)
    meta <key> <value>          (free-form run metadata)
    tensor <param|frozen> <name> <dim0>x<dim1>...
    end
    <payload bytes>
"""
from collections import OrderedDict
from dataclasses import fields

import numpy as np

from .exceptions import CheckpointError
from .model import ModelConfig, SeqRecNet

MAGIC = b"WHITENSEQ-CKPT"
VERSION = 1
_INT_FIELDS = {"n_items", "d_model", "n_blocks", "n_heads", "max_seq_len", "head_depth",
               "feature_dim"}


def save_checkpoint(path, net, meta=None):
    c = net.config
    lines = [MAGIC.decode(), f"version {VERSION}"]
    for f in fields(ModelConfig):
        value = getattr(c, f.name)
        value = getattr(value, "value", value)
        lines.append(f"config {f.name} {value!r}" if isinstance(value, float)
                     else f"config {f.name} {value}")
    for k, v in (meta or {}).items():
        if any(ch.isspace() for ch in str(k)) or "\n" in str(v):
            raise ValueError(f"meta entry {k!r} must be a single token / single line")
        lines.append(f"meta {k} {v}")
    tensors = [("param", k, v) for k, v in net.params.items()]
    tensors += [("frozen", k, net.frozen[k]) for k in sorted(net.frozen)]
    for kind, name, arr in tensors:
        lines.append(f"tensor {kind} {name} {'x'.join(str(s) for s in arr.shape)}")
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for _, _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(net, meta)``; tensors are restored bit-exactly."""
    with open(path, "rb") as fh:
        blob = fh.read()
    first, _, _ = blob.partition(b"\n")
    if first != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    marker = b"\nend\n"
    pos = blob.find(marker)
    if pos < 0:
        raise CheckpointError(f"{path}: truncated header")
    header = blob[:pos].decode("ascii").split("\n")[1:]
    payload = memoryview(blob)[pos + len(marker):]
    if not header or header[0] != f"version {VERSION}":
        raise CheckpointError(f"{path}: unsupported checkpoint {header[0] if header else ''!r}; "
                              f"this build reads version {VERSION}")
    config, meta, specs = {}, {}, []
    for line in header[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "config":
            key, _, value = rest.partition(" ")
            if key in _INT_FIELDS:
                config[key] = int(value)
            elif key == "dropout":
                config[key] = float(value)
            else:
                config[key] = value
        elif kind == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif kind == "tensor":
            role, name, shape = rest.split(" ")
            specs.append((role, name, tuple(int(s) for s in shape.split("x") if s)))
        else:
            raise CheckpointError(f"{path}: unknown header line {line!r}")
    params, frozen = OrderedDict(), {}
    offset = 0
    for role, name, shape in specs:
        nbytes = 8 * int(np.prod(shape))
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: payload too short for tensor {name}")
        arr = np.frombuffer(payload[offset:offset + nbytes], dtype="<f8").reshape(shape)
        offset += nbytes
        (params if role == "param" else frozen)[name] = arr.astype(np.float64)
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing bytes")
    return SeqRecNet(ModelConfig(**config), params, frozen), meta
