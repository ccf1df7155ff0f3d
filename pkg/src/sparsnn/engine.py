"""Training engine: forward through time, backward through time, loss.

Execution modes
---------------
dense    binary spike matrices flow between layers; the reference path.
sparse   fixed-capacity SparseSpikeBatch tensors flow between layers;
         gradients exist only for retained entries. With capacities equal
         to the layer sizes and a very low secondary threshold this path
         reproduces the dense path exactly.
relaxed  the hard threshold is replaced by a smooth spike in float64;
         only used to validate the backward pass against finite
         differences (the relaxed forward is differentiable, so central
         differences of its loss are a ground truth).

The backward pass is the literal adjoint of the forward program, swept in
reverse time. Per layer it propagates gradients through the membrane decay
(alpha * (1 - S)), the current injection ((1 - alpha)/C), the threshold
(surrogate derivative), optionally the reset factor, and the current
computation (weight / input gradients). Weight gradients accumulate over
all timesteps in float64 and are rounded to float32 once at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractViolation
from .kernels import (
    GradientSet,
    dense_forward_current,
    dense_input_grad,
    dense_weight_grad,
    sparse_forward_current,
    sparse_input_grad,
    sparse_weight_grad,
)
from .lif import (
    MEMBRANE_SUM,
    SPIKE_COUNT,
    membrane_update,
    relaxed_spike,
    relaxed_spike_grad,
    surrogate,
    threshold_spikes_dense,
)
from .model import Network
from .rng import DropRng
from .sparse import SparseSpikeBatch, decode_to_dense, encode_binary, encode_sparse

DENSE = "dense"
SPARSE = "sparse"
RELAXED = "relaxed"

# Position stride reserved per training step so drop decisions never reuse
# a stream position across batches: one slot per (timestep, boundary).
MAX_BATCHES_PER_EPOCH = 1 << 20


@dataclass
class ForwardTrace:
    """Everything the backward sweep needs, recorded per weight layer.

    u[l][t], i_syn[l][t]: membrane/current at the start of step t.
    spikes[l]: (T, B, n) dense array, or a list of SparseSpikeBatch, or
        None for the non-spiking readout layer.
    inputs: the dense input frames (B, T, n_in).
    input_sparse: per-step sparse encodings of the input (sparse mode).
    """

    mode: str
    u: list
    i_syn: list
    spikes: list
    inputs: np.ndarray
    input_sparse: list | None
    num_timesteps: int


@dataclass
class EpochMetrics:
    mean_loss: float
    accuracy: float
    batches: int


def _rng_position(base: int, t: int, num_boundaries: int, boundary: int) -> int:
    return base + t * num_boundaries + boundary


def forward_pass(
    net: Network,
    inputs: np.ndarray,
    mode: str = DENSE,
    rng: DropRng | None = None,
    force_spikes: bool = False,
    threads: int = 1,
    record_trace: bool = True,
):
    """Run the network over all timesteps; returns (trace, scores).

    `inputs` is a (B, T, input_size) binary array. In sparse mode `rng`
    supplies drop decisions; its position is advanced internally by one
    slot per (timestep, layer boundary). `force_spikes` drives every
    spiking neuron above threshold each step, saturating spike batches at
    capacity (throughput lower-bound mode). With `record_trace=False` only
    the scores are computed (evaluation).
    """
    spec = net.spec
    inputs = np.asarray(inputs)
    if inputs.ndim != 3 or inputs.shape[1] != spec.num_timesteps or inputs.shape[2] != spec.input_size:
        raise ContractViolation(
            f"inputs shape {inputs.shape} != (B, {spec.num_timesteps}, {spec.input_size})"
        )
    if mode not in (DENSE, SPARSE, RELAXED):
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == SPARSE and rng is None:
        raise ConfigError("sparse mode needs a DropRng")
    dtype = np.float64 if mode == RELAXED else np.float32
    if mode == RELAXED and force_spikes:
        raise ConfigError("force_spikes is not meaningful in relaxed mode")

    batch = inputs.shape[0]
    T = spec.num_timesteps
    L = spec.num_weight_layers
    base = rng.position if rng is not None else 0
    spike_count_readout = spec.output_mode == SPIKE_COUNT

    u = [np.zeros((batch, spec.layer_sizes[l + 1]), dtype=dtype) for l in range(L)]
    i_syn = [np.zeros_like(u[l]) for l in range(L)]
    scores = np.zeros((batch, spec.output_size), dtype=dtype)

    trace = None
    if record_trace:
        trace = ForwardTrace(
            mode=mode,
            u=[np.empty((T,) + u[l].shape, dtype=dtype) for l in range(L)],
            i_syn=[np.empty((T,) + u[l].shape, dtype=dtype) for l in range(L)],
            spikes=[
                ([] if mode == SPARSE and _transmits_sparse(l, L, spike_count_readout) else
                 np.empty((T,) + u[l].shape, dtype=dtype))
                if _is_spiking(l, L, spike_count_readout)
                else None
                for l in range(L)
            ],
            inputs=inputs,
            input_sparse=[] if mode == SPARSE else None,
            num_timesteps=T,
        )

    for t in range(T):
        x_t = inputs[:, t, :]
        if mode == SPARSE:
            in_batch = encode_binary(
                x_t, spec.sparse_sizes[0], rng.at(_rng_position(base, t, L, 0))
            )
            if record_trace:
                trace.input_sparse.append(in_batch)
            s_prev = in_batch
        else:
            s_prev = x_t.astype(dtype)

        for l in range(L):
            params = net.params[l]
            spiking = _is_spiking(l, L, spike_count_readout)
            if spiking and force_spikes:
                u[l] = np.broadcast_to(
                    params.threshold + np.float32(1.0), u[l].shape
                ).astype(dtype)
            if record_trace:
                trace.u[l][t] = u[l]
                trace.i_syn[l][t] = i_syn[l]

            if spiking:
                if mode == RELAXED:
                    s_out = relaxed_spike(u[l] - params.threshold, params.beta)
                elif mode == SPARSE and _transmits_sparse(l, L, spike_count_readout):
                    out_batch = encode_sparse(
                        u[l],
                        params,
                        spec.sparse_sizes[l + 1],
                        rng.at(_rng_position(base, t, L, l + 1)),
                        with_grads=True,
                    )
                    s_out = decode_to_dense(out_batch, u[l].shape[1])
                    if record_trace:
                        trace.spikes[l].append(out_batch)
                else:
                    s_out = threshold_spikes_dense(u[l], params.threshold)
                if record_trace and not (
                    mode == SPARSE and _transmits_sparse(l, L, spike_count_readout)
                ):
                    trace.spikes[l][t] = s_out
                u[l] = membrane_update(u[l], s_out, i_syn[l], params)
            else:
                u[l] = membrane_update(
                    u[l], np.zeros_like(u[l]), i_syn[l], params
                )

            if mode == SPARSE:
                new_current = sparse_forward_current(net.weights[l], s_prev, threads)
            else:
                new_current = dense_forward_current(net.weights[l], s_prev, dtype=dtype)
            i_syn[l] = new_current

            if spiking:
                s_prev = out_batch if (
                    mode == SPARSE and _transmits_sparse(l, L, spike_count_readout)
                ) else s_out
            if l == L - 1:
                if spike_count_readout:
                    scores += s_out
                else:
                    scores += u[l]

    return trace, scores


def _is_spiking(l: int, num_layers: int, spike_count_readout: bool) -> bool:
    return l < num_layers - 1 or spike_count_readout


def _transmits_sparse(l: int, num_layers: int, spike_count_readout: bool) -> bool:
    """Output-layer spikes are only counted locally, never transmitted, so
    they stay dense even in sparse mode."""
    return l < num_layers - 1


def backward_pass(
    net: Network,
    trace: ForwardTrace,
    dl_dscores: np.ndarray,
    reset_grad: bool = True,
    threads: int = 1,
) -> list:
    """Reverse-time sweep over a recorded trace; returns one GradientSet
    per weight layer.

    `reset_grad` routes gradients through the (1 - S) reset factor using
    the surrogate derivative; in relaxed mode the reset path is part of the
    true derivative and is always taken.
    """
    spec = net.spec
    mode = trace.mode
    dtype = np.float64 if mode == RELAXED else np.float32
    dl_dscores = np.asarray(dl_dscores, dtype=dtype)
    batch = dl_dscores.shape[0]
    T = trace.num_timesteps
    L = spec.num_weight_layers
    spike_count_readout = spec.output_mode == SPIKE_COUNT
    if mode == RELAXED:
        reset_grad = True

    w64 = [w.w.astype(np.float64) for w in net.weights]
    dw_acc = [np.zeros_like(w64[l]) for l in range(L)]
    du = [np.zeros((batch, spec.layer_sizes[l + 1]), dtype=dtype) for l in range(L)]
    di = [np.zeros_like(du[l]) for l in range(L)]
    last_dspike = [None] * L

    for t in range(T - 1, -1, -1):
        ds_store = [None] * L
        for l in range(L - 1, -1, -1):
            params = net.params[l]
            dt = dtype
            alpha = dt(params.alpha)
            gain = dt((1.0 - params.alpha) / params.capacitance)
            u_t = trace.u[l][t]
            spiking = _is_spiking(l, L, spike_count_readout)
            sparse_out = (
                mode == SPARSE and spiking and _transmits_sparse(l, L, spike_count_readout)
            )

            if l == L - 1 and not spike_count_readout:
                du[l] = du[l] + dl_dscores

            di_t = gain * du[l]

            if spiking:
                if sparse_out:
                    out_batch = trace.spikes[l][t]
                    s_t = decode_to_dense(out_batch, u_t.shape[1])
                else:
                    s_t = trace.spikes[l][t]
                du_t = alpha * (dt(1) - s_t) * du[l]

                if sparse_out:
                    trans = ds_store[l]
                    for row in range(batch):
                        ng = int(out_batch.num_grads[row])
                        if ng == 0:
                            continue
                        ids = out_batch.ids[row, :ng]
                        ds_row = (
                            trans[row, :ng]
                            if trans is not None
                            else np.zeros(ng, dtype=dtype)
                        )
                        if reset_grad:
                            ds_row = ds_row + (-alpha) * u_t[row, ids] * du[l][row, ids]
                        du_t[row, ids] += out_batch.grad_values[row, :ng] * ds_row
                    last_dspike[l] = trans
                else:
                    ds_total = (
                        ds_store[l]
                        if ds_store[l] is not None
                        else np.zeros_like(u_t)
                    )
                    if l == L - 1 and spike_count_readout:
                        ds_total = ds_total + dl_dscores
                    if reset_grad:
                        ds_total = ds_total + (-alpha) * u_t * du[l]
                    if mode == RELAXED:
                        h = relaxed_spike_grad(u_t - params.threshold, params.beta)
                    else:
                        h = surrogate(u_t - params.threshold, params.beta)
                    du_t = du_t + h * ds_total
                    last_dspike[l] = ds_total
            else:
                du_t = alpha * du[l]

            if mode == SPARSE:
                s_in = trace.input_sparse[t] if l == 0 else trace.spikes[l - 1][t]
                sparse_weight_grad(di[l], s_in, dw_acc[l])
                if l > 0:
                    ds_store[l - 1] = sparse_input_grad(
                        di[l], net.weights[l], s_in, w64=w64[l]
                    )
            else:
                s_in = (
                    trace.inputs[:, t, :].astype(dtype)
                    if l == 0
                    else trace.spikes[l - 1][t]
                )
                dense_weight_grad(di[l], s_in, dw_acc[l])
                if l > 0:
                    ds_store[l - 1] = dense_input_grad(
                        di[l], net.weights[l], w64=w64[l], dtype=dtype
                    )

            du[l] = du_t
            di[l] = di_t

    grads = []
    for l in range(L):
        dspike = last_dspike[l]
        if dspike is None:
            dspike = np.zeros((batch, 0), dtype=dtype)
        grads.append(
            GradientSet(
                dl_dw=dw_acc[l].astype(dtype),
                dl_du=du[l],
                dl_dspike=dspike,
            )
        )
    return grads


def softmax_cross_entropy(scores: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of softmax(scores) against integer labels.

    Returns (loss, dl_dscores) with the gradient in the dtype of `scores`.
    """
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    z = scores.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    b = scores.shape[0]
    nll = -np.log(np.maximum(p[np.arange(b), labels], 1e-300))
    grad = p.copy()
    grad[np.arange(b), labels] -= 1.0
    grad /= b
    return float(nll.mean()), grad.astype(scores.dtype)


def relaxed_scores(net: Network, inputs: np.ndarray) -> np.ndarray:
    """Scores of the smooth (relaxed-spike) model, float64."""
    _, scores = forward_pass(net, inputs, mode=RELAXED, record_trace=False)
    return scores


def train_step(
    net: Network,
    frames: np.ndarray,
    labels: np.ndarray,
    opt_state,
    mode: str,
    rng: DropRng | None,
    reset_grad: bool = True,
    threads: int = 1,
    force_spikes: bool = False,
):
    """forward + loss + backward + optimizer update on one batch.

    Returns (loss, scores).
    """
    from .optim import optimizer_step

    trace, scores = forward_pass(
        net, frames, mode=mode, rng=rng, threads=threads, force_spikes=force_spikes
    )
    loss, dl_dscores = softmax_cross_entropy(scores, labels)
    grads = backward_pass(net, trace, dl_dscores, reset_grad=reset_grad, threads=threads)
    optimizer_step(net.weight_arrays(), [g.dl_dw for g in grads], opt_state)
    return loss, scores


def train_epoch(
    net: Network,
    dataset,
    opt_state,
    mode: str = DENSE,
    drop_seed: int = 0,
    epoch_index: int = 0,
    shuffle: bool = True,
    reset_grad: bool = True,
    threads: int = 1,
    force_spikes: bool = False,
) -> EpochMetrics:
    """One pass over `dataset` (a SpikeDataset or anything with the same
    minibatches() signature), updating the network in place."""
    spec = net.spec
    order_rng = (
        np.random.default_rng((drop_seed, epoch_index, 0xE90C)) if shuffle else None
    )
    stride = spec.num_timesteps * spec.num_weight_layers
    losses = []
    correct = 0
    seen = 0
    for bi, (frames, labels) in enumerate(
        dataset.minibatches(spec.batch_size, order_rng)
    ):
        if bi >= MAX_BATCHES_PER_EPOCH:
            raise ConfigError("too many batches per epoch for the drop stream")
        base = (epoch_index * MAX_BATCHES_PER_EPOCH + bi) * stride
        rng = DropRng(drop_seed, base) if mode == SPARSE else None
        loss, scores = train_step(
            net,
            frames,
            labels,
            opt_state,
            mode,
            rng,
            reset_grad=reset_grad,
            threads=threads,
            force_spikes=force_spikes,
        )
        losses.append(loss)
        correct += int((scores.argmax(axis=1) == labels).sum())
        seen += len(labels)
    if not losses:
        raise ConfigError("dataset yielded no batches at this batch size")
    return EpochMetrics(
        mean_loss=float(np.mean(losses)), accuracy=correct / seen, batches=len(losses)
    )


def evaluate(
    net: Network,
    dataset,
    mode: str = DENSE,
    drop_seed: int = 0,
    threads: int = 1,
) -> float:
    """Classification accuracy of the current weights on `dataset`."""
    spec = net.spec
    stride = spec.num_timesteps * spec.num_weight_layers
    correct = 0
    seen = 0
    for bi, (frames, labels) in enumerate(dataset.minibatches(spec.batch_size, None)):
        base = (1 << 40) + bi * stride
        rng = DropRng(drop_seed, base) if mode == SPARSE else None
        _, scores = forward_pass(
            net, frames, mode=mode, rng=rng, threads=threads, record_trace=False
        )
        correct += int((scores.argmax(axis=1) == labels).sum())
        seen += len(labels)
    if seen == 0:
        raise ConfigError("dataset yielded no batches at this batch size")
    return correct / seen
