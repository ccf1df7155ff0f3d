"""Network container: per-layer weights and neuron constants, plus a
byte-stable checkpoint format.

Checkpoints are written as a JSON header followed by raw little-endian
array payloads, so saving the same network twice produces identical bytes
(no archive timestamps) and a load/save round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError
from .lif import LayerWeights, LifParams, NetworkSpec

_CKPT_MAGIC = b"SNNCKPT1"


@dataclass
class Network:
    spec: NetworkSpec
    weights: list  # LayerWeights, one per weight layer
    params: list  # LifParams, one per weight layer (post-synaptic side)

    def __post_init__(self):
        if len(self.weights) != self.spec.num_weight_layers or len(self.params) != len(
            self.weights
        ):
            raise ConfigError("weights/params do not match the network spec")
        for k, (w, p) in enumerate(zip(self.weights, self.params)):
            n_post, n_pre = self.spec.layer_sizes[k + 1], self.spec.layer_sizes[k]
            if w.w.shape != (n_post, n_pre):
                raise ConfigError(
                    f"layer {k}: weight shape {w.w.shape} != ({n_post}, {n_pre})"
                )
            if p.size != n_post:
                raise ConfigError(f"layer {k}: params sized {p.size} != {n_post}")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def weight_arrays(self) -> list:
        return [lw.w for lw in self.weights]


def init_network(
    spec: NetworkSpec,
    seed: int,
    alpha: float = 0.9,
    capacitance: float = 1.0,
    threshold: float = 1.0,
    grad_threshold: float = 0.75,
    beta: float = 10.0,
    weight_gain: float = 3.0,
) -> Network:
    """Fresh network with N(0, (gain/sqrt(fan_in))^2) float32 weights.

    The gain keeps early-layer activity in a useful range for spiking
    dynamics; it is deliberately larger than classic ANN initializations
    because sub-threshold neurons transmit nothing.
    """
    rng = np.random.default_rng(seed)
    weights, params = [], []
    for k in range(spec.num_weight_layers):
        n_pre, n_post = spec.layer_sizes[k], spec.layer_sizes[k + 1]
        scale = weight_gain / np.sqrt(n_pre)
        w = rng.normal(0.0, scale, size=(n_post, n_pre)).astype(np.float32)
        weights.append(LayerWeights(w))
        params.append(
            LifParams.uniform(
                n_post,
                alpha=alpha,
                capacitance=capacitance,
                threshold=threshold,
                grad_threshold=grad_threshold,
                beta=beta,
            )
        )
    return Network(spec=spec, weights=weights, params=params)


def _array_entry(name: str, arr: np.ndarray, payloads: list) -> dict:
    arr = np.ascontiguousarray(arr)
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    payloads.append(le.tobytes())
    return {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)}


def save_checkpoint(
    path,
    net: Network,
    optimizer_state=None,
    seed: int = 0,
    extra: dict | None = None,
) -> None:
    """Write network, optimizer state and RNG seed to `path`."""
    from .optim import optimizer_state_to_dict

    payloads: list = []
    arrays = []
    meta = {
        "spec": {
            "layer_sizes": list(net.spec.layer_sizes),
            "sparse_sizes": list(net.spec.sparse_sizes),
            "batch_size": net.spec.batch_size,
            "num_timesteps": net.spec.num_timesteps,
            "output_mode": net.spec.output_mode,
        },
        "seed": int(seed),
        "layers": [],
        "optimizer": None,
        "extra": extra or {},
    }
    for k, (w, p) in enumerate(zip(net.weights, net.params)):
        arrays.append(_array_entry(f"w{k}", w.w, payloads))
        arrays.append(_array_entry(f"thr{k}", p.threshold, payloads))
        arrays.append(_array_entry(f"gthr{k}", p.grad_threshold, payloads))
        meta["layers"].append(
            {"alpha": p.alpha, "capacitance": p.capacitance, "beta": p.beta}
        )
    if optimizer_state is not None:
        opt_meta, opt_arrays = optimizer_state_to_dict(optimizer_state)
        meta["optimizer"] = opt_meta
        for name, arr in opt_arrays:
            arrays.append(_array_entry(name, arr, payloads))
    meta["arrays"] = arrays
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for blob in payloads:
            f.write(blob)


def load_checkpoint(path):
    """Read a checkpoint; returns (Network, optimizer_state, seed, extra)."""
    from .optim import optimizer_state_from_dict

    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _CKPT_MAGIC:
            raise DataFormatError(f"bad checkpoint magic {magic!r}")
        (hlen,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(hlen).decode("utf-8"))
        data = {}
        for entry in meta["arrays"]:
            dt = np.dtype(entry["dtype"]).newbyteorder("<")
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = f.read(count * dt.itemsize)
            if len(raw) != count * dt.itemsize:
                raise DataFormatError("truncated checkpoint payload")
            data[entry["name"]] = (
                np.frombuffer(raw, dtype=dt).reshape(entry["shape"]).astype(dt.newbyteorder("="))
            )
    spec = NetworkSpec(
        layer_sizes=meta["spec"]["layer_sizes"],
        sparse_sizes=meta["spec"]["sparse_sizes"],
        batch_size=meta["spec"]["batch_size"],
        num_timesteps=meta["spec"]["num_timesteps"],
        output_mode=meta["spec"]["output_mode"],
    )
    weights, params = [], []
    for k, layer in enumerate(meta["layers"]):
        weights.append(LayerWeights(data[f"w{k}"]))
        params.append(
            LifParams(
                alpha=layer["alpha"],
                capacitance=layer["capacitance"],
                threshold=data[f"thr{k}"],
                grad_threshold=data[f"gthr{k}"],
                beta=layer["beta"],
            )
        )
    net = Network(spec=spec, weights=weights, params=params)
    opt_state = None
    if meta["optimizer"] is not None:
        opt_state = optimizer_state_from_dict(meta["optimizer"], data)
    return net, opt_state, meta["seed"], meta["extra"]
