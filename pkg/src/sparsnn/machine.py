"""Bulk-synchronous tile-machine simulator.

Models a manycore chip as `tiles_per_chip` tiles, each owning a fixed SRAM
budget, executing supersteps of local compute, data exchange and barrier
sync. Neurons live on tiles for the whole run; weights, weight gradients,
optimizer moments and state live with their post-synaptic neuron; spike
tensors are the only data crossing tile boundaries.

Cost accounting per algorithmic timestep and direction:

  compute(tile)   = sum over its neurons of B*(incoming_count*cycles_per_mac
                    + cycles_per_state_update)
  exchange bytes  = 4 bytes per spike id (plus an 8-byte per-row count
                    header) in sparse mode; 4 bytes per neuron per row in
                    dense mode. Backward moves gradient values instead of
                    ids, same sizes.
  superstep time  = max over tiles of (compute + local exchange share)
                    + sync_cycles_per_superstep        (BSP: max, not sum)

Traffic between chips is modeled as a separate exchange superstep with its
own sync, at `inter_chip_cycles_per_8_bytes` (doubled beyond a chip pair);
traffic within a chip rides the compute superstep at the intra rate.

Per-tile memory estimate for a neuron with fan-in F, batch B, T timesteps:
16*F (weights, weight grads, two optimizer moments at 4 bytes) plus
4*B*(4 + T) (four state arrays and a per-timestep membrane trace).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .config import coerce, load_flat_config
from .errors import ConfigError, ContractViolation, OutOfTileMemory
from .lif import NetworkSpec

WEAK_SCALE_CHIPS = (1, 2, 4, 8, 16)
_BEYOND_PAIR_FACTOR = 2.0


@dataclass
class CostParams:
    cycles_per_mac: float = 1.0
    cycles_per_state_update: float = 2.0
    intra_chip_cycles_per_8_bytes: float = 1.0
    inter_chip_cycles_per_8_bytes: float = 8.0
    sync_cycles_per_superstep: float = 100.0

    def __post_init__(self):
        if not self.intra_chip_cycles_per_8_bytes > 0:
            raise ConfigError("intra-chip byte cost must be > 0")
        if self.inter_chip_cycles_per_8_bytes < self.intra_chip_cycles_per_8_bytes:
            raise ConfigError("inter-chip byte cost must be >= intra-chip")


@dataclass
class MachineSpec:
    tiles_per_chip: int = 1472
    sram_per_tile: int = 624 * 1024
    num_chips: int = 1
    cost: CostParams = field(default_factory=CostParams)

    def __post_init__(self):
        if min(self.tiles_per_chip, self.sram_per_tile, self.num_chips) < 1:
            raise ConfigError("machine dimensions must be positive")

    @property
    def num_tiles(self) -> int:
        return self.tiles_per_chip * self.num_chips


_MACHINE_KEYS = {
    "tiles_per_chip": int,
    "sram_per_tile": int,
    "num_chips": int,
    "cycles_per_mac": float,
    "cycles_per_state_update": float,
    "intra_chip_cycles_per_8_bytes": float,
    "inter_chip_cycles_per_8_bytes": float,
    "sync_cycles_per_superstep": float,
}


def load_machine_config(path) -> MachineSpec:
    """Machine/cost description as a flat key=value file."""
    raw = load_flat_config(path, allowed_keys=set(_MACHINE_KEYS))
    values = {k: coerce(v, _MACHINE_KEYS[k]) for k, v in raw.items()}
    cost_kwargs = {
        k: values.pop(k) for k in list(values) if k in CostParams.__dataclass_fields__
    }
    return MachineSpec(cost=CostParams(**cost_kwargs), **values)


def neuron_bytes(fan_in: int, batch_size: int, num_timesteps: int) -> int:
    """SRAM bytes one neuron pins on its tile (see module docstring)."""
    return 16 * fan_in + 4 * batch_size * (4 + num_timesteps)


@dataclass
class TileMapping:
    """Neuron-to-tile assignment for the non-input layers of a network."""

    net: NetworkSpec
    machine: MachineSpec
    neurons_per_tile: int
    tile_of_neuron: list  # per weight layer: global tile id per neuron
    per_tile_bytes: np.ndarray

    def __post_init__(self):
        self.layer_hist = [
            np.bincount(t, minlength=self.machine.num_tiles)
            for t in self.tile_of_neuron
        ]
        self.layer_chips = [
            np.unique(t // self.machine.tiles_per_chip) for t in self.tile_of_neuron
        ]
        self.layer_tiles_by_chip = []
        for t in self.tile_of_neuron:
            tiles = np.unique(t)
            chips = tiles // self.machine.tiles_per_chip
            self.layer_tiles_by_chip.append(
                {int(c): tiles[chips == c] for c in np.unique(chips)}
            )

    @property
    def tiles_used(self) -> int:
        return int(sum((h > 0).sum() for h in self.layer_hist))


def map_neurons(
    net: NetworkSpec,
    machine: MachineSpec,
    neurons_per_tile: int,
    layer_chips: list | None = None,
) -> TileMapping:
    """Contiguous block assignment: layers in order, `neurons_per_tile`
    neurons on every occupied tile (the last may be partial).

    With `layer_chips`, each weight layer is pinned to the given chip and
    packing restarts per chip (used for weak scaling). Raises
    OutOfTileMemory when any tile's byte estimate exceeds its SRAM.
    """
    if neurons_per_tile < 1:
        raise ConfigError("neurons_per_tile must be >= 1")
    sizes = net.layer_sizes[1:]
    tile_of_neuron = []
    if layer_chips is None:
        idx = 0
        for n in sizes:
            ids = (np.arange(idx, idx + n) // neurons_per_tile).astype(np.int64)
            tile_of_neuron.append(ids)
            idx += n
        if idx and int(tile_of_neuron[-1][-1]) >= machine.num_tiles:
            raise ConfigError(
                f"{idx} neurons at {neurons_per_tile}/tile exceed "
                f"{machine.num_tiles} tiles"
            )
    else:
        if len(layer_chips) != len(sizes):
            raise ContractViolation("layer_chips must name one chip per weight layer")
        next_slot = {}
        for n, chip in zip(sizes, layer_chips):
            if not 0 <= chip < machine.num_chips:
                raise ConfigError(f"chip {chip} out of range")
            start = next_slot.get(chip, 0)
            slots = np.arange(start, start + n)
            if slots[-1] // neurons_per_tile >= machine.tiles_per_chip:
                raise ConfigError(f"chip {chip} out of tiles")
            tile_of_neuron.append(
                (chip * machine.tiles_per_chip + slots // neurons_per_tile).astype(
                    np.int64
                )
            )
            next_slot[chip] = start + n

    per_tile = np.zeros(machine.num_tiles, dtype=np.int64)
    for k, ids in enumerate(tile_of_neuron):
        fan_in = net.layer_sizes[k]
        per_tile += np.bincount(
            ids, minlength=machine.num_tiles
        ) * neuron_bytes(fan_in, net.batch_size, net.num_timesteps)
    over = np.nonzero(per_tile > machine.sram_per_tile)[0]
    if over.size:
        tile = int(over[0])
        raise OutOfTileMemory(tile, int(per_tile[tile]), machine.sram_per_tile)
    return TileMapping(
        net=net,
        machine=machine,
        neurons_per_tile=neurons_per_tile,
        tile_of_neuron=tile_of_neuron,
        per_tile_bytes=per_tile,
    )


@dataclass
class SuperstepCost:
    index: int
    timestep: int
    phase: str
    time_cycles: float
    compute_cycles: float  # max over tiles
    chip_cycles: np.ndarray  # per chip: max over its tiles
    chip_intra_bytes: np.ndarray
    chip_inter_bytes: np.ndarray

    @property
    def intra_bytes(self) -> float:
        return float(self.chip_intra_bytes.sum())

    @property
    def inter_bytes(self) -> float:
        return float(self.chip_inter_bytes.sum())


@dataclass
class CostLedger:
    supersteps: list
    num_chips: int

    @property
    def total_time_cycles(self) -> float:
        return float(sum(s.time_cycles for s in self.supersteps))

    @property
    def total_intra_bytes(self) -> float:
        return float(sum(s.intra_bytes for s in self.supersteps))

    @property
    def total_inter_bytes(self) -> float:
        return float(sum(s.inter_bytes for s in self.supersteps))

    @property
    def total_compute_cycles(self) -> float:
        return float(sum(s.compute_cycles for s in self.supersteps))

    @property
    def sync_count(self) -> int:
        return len(self.supersteps)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(
                ["superstep", "phase", "chip", "cycles", "intra_bytes", "inter_bytes"]
            )
            for s in self.supersteps:
                for chip in range(self.num_chips):
                    writer.writerow(
                        [
                            s.index,
                            s.phase,
                            chip,
                            repr(float(s.chip_cycles[chip])),
                            repr(float(s.chip_intra_bytes[chip])),
                            repr(float(s.chip_inter_bytes[chip])),
                        ]
                    )


def _spike_bytes(count: float, batch: int, dense_size: int, dense: bool) -> float:
    if dense:
        return 4.0 * dense_size * batch
    return 4.0 * count * batch + 8.0 * batch


class _Simulator:
    def __init__(self, net, mapping, machine, mode):
        if mapping.net is not net and mapping.net.layer_sizes != net.layer_sizes:
            raise ContractViolation("mapping was built for a different network")
        self.net = net
        self.mapping = mapping
        self.machine = machine
        self.dense = mode == "dense"
        self.cost = machine.cost
        self.num_tiles = machine.num_tiles
        self.num_chips = machine.num_chips
        self.records = []
        self.index = 0

    def _tile_tier(self, src_chips: np.ndarray, dst_chip: int):
        """(rate per 8 bytes, is_inter) for traffic reaching `dst_chip`."""
        if dst_chip in src_chips:
            return self.cost.intra_chip_cycles_per_8_bytes, False
        if any(int(c) // 2 == dst_chip // 2 for c in src_chips):
            return self.cost.inter_chip_cycles_per_8_bytes, True
        return _BEYOND_PAIR_FACTOR * self.cost.inter_chip_cycles_per_8_bytes, True

    def _edge_exchange(
        self, producer_layer: int, consumer_layer: int, bytes_total: float,
        intra_tile: np.ndarray, inter_tile: np.ndarray,
        intra_chip: np.ndarray, inter_chip: np.ndarray,
    ) -> None:
        """Spread one spike tensor over the consuming layer's tiles.

        producer_layer/consumer_layer index weight layers; producer -1
        means the network input, which is loaded host-side onto the
        consuming chip (always local).
        """
        mapping = self.mapping
        if producer_layer < 0:
            src_chips = mapping.layer_chips[consumer_layer]
        else:
            src_chips = mapping.layer_chips[producer_layer]
        for chip, tiles in mapping.layer_tiles_by_chip[consumer_layer].items():
            rate, is_inter = self._tile_tier(src_chips, chip)
            cycles = bytes_total / 8.0 * rate / len(tiles)
            if is_inter:
                inter_tile[tiles] += cycles
                inter_chip[chip] += bytes_total
            else:
                intra_tile[tiles] += cycles
                intra_chip[chip] += bytes_total

    def _emit(self, t: int, phase: str, tile_cycles: np.ndarray,
              intra_chip: np.ndarray, inter_chip: np.ndarray) -> None:
        chip_view = tile_cycles.reshape(self.num_chips, self.machine.tiles_per_chip)
        chip_max = chip_view.max(axis=1)
        compute_max = float(tile_cycles.max()) if tile_cycles.size else 0.0
        self.records.append(
            SuperstepCost(
                index=self.index,
                timestep=t,
                phase=phase,
                time_cycles=compute_max + self.cost.sync_cycles_per_superstep,
                compute_cycles=compute_max,
                chip_cycles=chip_max,
                chip_intra_bytes=intra_chip,
                chip_inter_bytes=inter_chip,
            )
        )
        self.index += 1

    def step(self, t: int, phase: str, in_counts: np.ndarray,
             edges: list) -> None:
        """One compute+intra superstep plus an inter-chip exchange
        superstep when any edge crosses chips.

        in_counts[l]: incoming activations per sample for weight layer l.
        edges: (producer_layer, consumer_layer, count) spike tensors moved
        this step.
        """
        net, mapping, cost = self.net, self.mapping, self.cost
        batch = net.batch_size
        compute = np.zeros(self.num_tiles)
        for l, hist in enumerate(mapping.layer_hist):
            per_neuron = batch * (
                in_counts[l] * cost.cycles_per_mac + cost.cycles_per_state_update
            )
            compute += hist * per_neuron
        intra_tile = np.zeros(self.num_tiles)
        inter_tile = np.zeros(self.num_tiles)
        intra_chip = np.zeros(self.num_chips)
        inter_chip = np.zeros(self.num_chips)
        for producer, consumer, count in edges:
            dense_size = net.layer_sizes[producer + 1] if producer >= 0 else net.layer_sizes[0]
            bytes_total = _spike_bytes(count, batch, dense_size, self.dense)
            self._edge_exchange(
                producer, consumer, bytes_total,
                intra_tile, inter_tile, intra_chip, inter_chip,
            )
        self._emit(
            t, phase, compute + intra_tile, intra_chip, np.zeros(self.num_chips)
        )
        if inter_chip.any():
            # Cross-chip traffic pays for its own superstep (and sync).
            self._emit(
                t, phase + "-exchange", inter_tile,
                np.zeros(self.num_chips), inter_chip,
            )


def simulate_batch(
    net: NetworkSpec,
    mapping: TileMapping,
    machine: MachineSpec,
    activity: np.ndarray | None,
    mode: str = "sparse",
    grad_activity: np.ndarray | None = None,
) -> CostLedger:
    """Model one training batch (forward and backward over all timesteps).

    `activity[t, k]` is the per-sample spike count of layer k (column 0 is
    the input layer) at step t; `grad_activity` the retained-entry count
    (defaults to `activity`). Dense mode ignores the counts and charges
    full tensors. The ledger is a pure function of the arguments.
    """
    if mode not in ("sparse", "dense"):
        raise ConfigError(f"unknown simulate mode {mode!r}")
    L = net.num_weight_layers
    T = net.num_timesteps
    num_layers = len(net.layer_sizes)
    if mode == "dense":
        activity = np.zeros((T, num_layers)) if activity is None else np.asarray(activity, dtype=float)
    else:
        activity = np.asarray(activity, dtype=float)
    if activity.shape != (T, num_layers):
        raise ContractViolation(
            f"activity shape {activity.shape} != ({T}, {num_layers})"
        )
    if np.any(activity < 0) or np.any(activity > np.asarray(net.layer_sizes)[None, :]):
        raise ContractViolation("activity counts must lie in [0, layer size]")
    grad = activity if grad_activity is None else np.asarray(grad_activity, dtype=float)
    if grad.shape != activity.shape:
        raise ContractViolation("grad_activity shape mismatch")

    sim = _Simulator(net, mapping, machine, mode)
    sizes = np.asarray(net.layer_sizes, dtype=float)

    for t in range(T):
        # Forward: layer l consumes layer l-1's spikes of this step.
        in_counts = np.array(
            [sizes[l] if mode == "dense" else activity[t, l] for l in range(L)]
        )
        edges = []
        for l in range(L):
            count = activity[t, l]
            edges.append((l - 1, l, count))
        sim.step(t, "forward", in_counts, edges)

    for t in range(T - 1, -1, -1):
        # Backward: weight grads read input spikes, input grads write
        # gradient entries back to the producing layer's tiles.
        in_counts = np.array(
            [
                2.0 * sizes[l]
                if mode == "dense"
                else activity[t, l] + grad[t, l]
                for l in range(L)
            ]
        )
        edges = []
        for l in range(1, L):
            count = grad[t, l]
            edges.append((l, l - 1, count))
        sim.step(t, "backward", in_counts, edges)

    return CostLedger(supersteps=sim.records, num_chips=machine.num_chips)


def acceleration_model(dense_ledger: CostLedger, sparse_ledger: CostLedger) -> float:
    """Modeled dense batch time over modeled sparse batch time."""
    sparse_time = sparse_ledger.total_time_cycles
    if sparse_time <= 0:
        raise ContractViolation("sparse ledger has no time (missing sync floor?)")
    return dense_ledger.total_time_cycles / sparse_time


def chained_spec(net_per_chip: NetworkSpec, k: int) -> tuple:
    """Replicate the hidden stack of `net_per_chip` k times, chaining the
    stacks; returns (spec, layer_chips) with stack i pinned to chip i."""
    hidden = list(net_per_chip.layer_sizes[1:-1])
    if not hidden:
        raise ConfigError("weak scaling needs at least one hidden layer")
    hidden_sparse = list(net_per_chip.sparse_sizes[1:])
    layers = [net_per_chip.layer_sizes[0]] + hidden * k + [net_per_chip.layer_sizes[-1]]
    sparse = [net_per_chip.sparse_sizes[0]] + hidden_sparse * k
    spec = NetworkSpec(
        layer_sizes=layers,
        sparse_sizes=sparse,
        batch_size=net_per_chip.batch_size,
        num_timesteps=net_per_chip.num_timesteps,
        output_mode=net_per_chip.output_mode,
    )
    chips = []
    for stack in range(k):
        chips.extend([stack] * len(hidden))
    chips.append(k - 1)  # readout rides the last chip
    return spec, chips


def saturated_activity(spec: NetworkSpec) -> np.ndarray:
    """Activity matrix with every spike tensor at capacity: the input and
    each hidden layer at its sparse size, the readout silent."""
    T = spec.num_timesteps
    num_layers = len(spec.layer_sizes)
    act = np.zeros((T, num_layers))
    for k, n_max in enumerate(spec.sparse_sizes):
        act[:, k] = n_max
    return act


def weak_scale_run(
    net_per_chip: NetworkSpec,
    machine: MachineSpec,
    neurons_per_tile: int = 2,
    mode: str = "sparse",
) -> float:
    """Modeled slowdown of running k chained replicas on k chips versus
    one replica on one chip; 1.0 for k = 1 by construction."""
    k = machine.num_chips
    if k not in WEAK_SCALE_CHIPS:
        raise ConfigError(f"unsupported chip count {k}; pick from {WEAK_SCALE_CHIPS}")

    def total(num_chips: int) -> float:
        spec, chips = chained_spec(net_per_chip, num_chips)
        mach = MachineSpec(
            tiles_per_chip=machine.tiles_per_chip,
            sram_per_tile=machine.sram_per_tile,
            num_chips=num_chips,
            cost=machine.cost,
        )
        mapping = map_neurons(spec, mach, neurons_per_tile, layer_chips=chips)
        return simulate_batch(
            spec, mapping, mach, saturated_activity(spec), mode=mode
        ).total_time_cycles

    return total(k) / total(1)
