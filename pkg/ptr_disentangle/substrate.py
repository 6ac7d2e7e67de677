import base64
import logging

import numpy as np

from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

from scipy.special import expit, softmax as _softmax

from .corpus import PADDING_ID, UNKNOWN_ID

logger = logging.getLogger(__name__)

DTYPES = ("float64", "float32")
STRUCTURAL_DIM = 6


class NumericFailure(ArithmeticError):
    """A loss or gradient became non-finite. `diagnostic` is JSON-serialisable."""

    def __init__(self, message: str, diagnostic: Optional[dict] = None):
        super().__init__(message)
        self.diagnostic = diagnostic or dict()


def feature_dim(hidden: int) -> int:
    """Length of f_ij: 6 structural values plus mean⊕max pooled enhanced vectors of both sides."""
    return STRUCTURAL_DIM + 2 * 2 * 4 * (2 * hidden)


class ParameterStore:
    """
        Named parameter arrays of the model. The order of names is fixed at construction and is
        the order used by the optimizer and by checkpoints.
    """

    def __init__(self, arrays: Dict[str, np.ndarray]):
        self._arrays: Dict[str, np.ndarray] = dict(arrays)

    @classmethod
    def initialize(cls,
                   vocab_size: int,
                   embed_dim: int = 128,
                   hidden: int = 256,
                   rng: Optional[np.random.Generator] = None,
                   dtype: str = "float64") -> "ParameterStore":

        if dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {DTYPES}, got {dtype!r}")

        rng = np.random.default_rng(0) if rng is None else rng
        lstm_bound = 1. / np.sqrt(hidden)
        head_bound = 1. / np.sqrt(feature_dim(hidden))

        def uniform(bound: float, *shape: int) -> np.ndarray:
            return rng.uniform(-bound, bound, size=shape).astype(dtype)

        arrays = {
            "embedding": uniform(0.05, vocab_size, embed_dim),
            "empty_message": uniform(0.05, 2 * hidden),
        }
        for direction in ("lstm_forward", "lstm_backward"):
            arrays[f"{direction}.W"] = uniform(lstm_bound, 4 * hidden, embed_dim)
            arrays[f"{direction}.U"] = uniform(lstm_bound, 4 * hidden, hidden)
            arrays[f"{direction}.b"] = uniform(lstm_bound, 4 * hidden)
        arrays["w_link"] = uniform(head_bound, feature_dim(hidden))
        arrays["w_pair"] = uniform(head_bound, feature_dim(hidden))

        return cls(arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value: np.ndarray):

        if name not in self._arrays:
            raise KeyError(f"unknown parameter {name!r}")
        if value.shape != self._arrays[name].shape:
            raise ValueError(f"{name}: shape {value.shape} does not match {self._arrays[name].shape}")

        self._arrays[name] = value

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    @property
    def names(self) -> List[str]:
        return list(self._arrays)

    @property
    def hidden(self) -> int:
        return self._arrays["lstm_forward.U"].shape[1]

    @property
    def dtype(self) -> np.dtype:
        return self._arrays["w_link"].dtype

    def zeros_like(self) -> Dict[str, np.ndarray]:
        return {name: np.zeros_like(array) for name, array in self._arrays.items()}

    def copy(self) -> "ParameterStore":
        return ParameterStore({name: array.copy() for name, array in self._arrays.items()})

    def astype(self, dtype: str) -> "ParameterStore":
        return ParameterStore({name: array.astype(dtype) for name, array in self._arrays.items()})

    def to_json_dict(self) -> dict:

        out = dict()
        for name, array in self._arrays.items():
            little_endian = array.astype(array.dtype.newbyteorder("<"), copy=False)
            out[name] = {
                "shape": list(array.shape),
                "dtype": array.dtype.name,
                "data": base64.b64encode(np.ascontiguousarray(little_endian).tobytes()).decode("ascii")
            }

        return out

    @classmethod
    def from_json_dict(cls, record: dict) -> "ParameterStore":

        arrays = dict()
        for name, entry in record.items():

            if entry["dtype"] not in DTYPES:
                raise ValueError(f"{name}: unsupported dtype {entry['dtype']!r}")

            raw = base64.b64decode(entry["data"])
            array = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]).newbyteorder("<"))
            arrays[name] = array.astype(entry["dtype"]).reshape(entry["shape"])

        return cls(arrays)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return _softmax(x, axis=axis)


def masked_softmax(x: np.ndarray, mask: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax where masked-out entries get exactly zero weight. Every row needs one valid entry."""
    return _softmax(np.where(mask, x, -np.inf), axis=axis)


def softmax_backward(y: np.ndarray, dy: np.ndarray, axis: int = -1) -> np.ndarray:
    return y * (dy - np.sum(dy * y, axis=axis, keepdims=True))


def tanh_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (1. - y ** 2)


def dropout_mask(shape: Tuple[int, ...],
                 rate: float,
                 rng: Optional[np.random.Generator],
                 dtype=np.float64) -> Optional[np.ndarray]:
    """Inverted dropout mask, or None when dropout is off (rate 0 or no generator)."""

    if rate <= 0. or rng is None:
        return None

    keep = rng.random(shape) >= rate
    return (keep / (1. - rate)).astype(dtype)


@dataclass
class LSTMCache:

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    gates: np.ndarray
    tanh_c: np.ndarray


def lstm_forward(x: np.ndarray, W: np.ndarray, U: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, LSTMCache]:
    """
        Unidirectional LSTM over right-padded batches, x of shape (N, L, E). Gate order is
        input, forget, cell, output. Outputs at padded positions are computed but carry no
        meaning; callers must not send gradient into them.
    """

    n_seq, length, _ = x.shape
    hidden = U.shape[1]

    xw = x @ W.T + b
    h = np.zeros((n_seq, hidden), dtype=x.dtype)
    c = np.zeros((n_seq, hidden), dtype=x.dtype)

    hs = np.empty((n_seq, length, hidden), dtype=x.dtype)
    h_prev = np.empty_like(hs)
    c_prev = np.empty_like(hs)
    tanh_c = np.empty_like(hs)
    gates = np.empty((n_seq, length, 4 * hidden), dtype=x.dtype)

    for t in range(length):

        z = xw[:, t] + h @ U.T
        i = expit(z[:, :hidden])
        f = expit(z[:, hidden:2 * hidden])
        g = np.tanh(z[:, 2 * hidden:3 * hidden])
        o = expit(z[:, 3 * hidden:])

        h_prev[:, t], c_prev[:, t] = h, c
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc

        gates[:, t] = np.concatenate([i, f, g, o], axis=1)
        tanh_c[:, t] = tc
        hs[:, t] = h

    return hs, LSTMCache(x, h_prev, c_prev, gates, tanh_c)


def lstm_backward(dhs: np.ndarray,
                  cache: LSTMCache,
                  W: np.ndarray,
                  U: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns dx, dW, dU, db."""

    n_seq, length, hidden = dhs.shape
    dxw = np.empty((n_seq, length, 4 * hidden), dtype=dhs.dtype)
    dh_next = np.zeros((n_seq, hidden), dtype=dhs.dtype)
    dc_next = np.zeros((n_seq, hidden), dtype=dhs.dtype)

    for t in reversed(range(length)):

        gates = cache.gates[:, t]
        i, f = gates[:, :hidden], gates[:, hidden:2 * hidden]
        g, o = gates[:, 2 * hidden:3 * hidden], gates[:, 3 * hidden:]
        tc = cache.tanh_c[:, t]

        dh = dhs[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1. - tc ** 2)
        di = dc * g
        dg = dc * i
        df = dc * cache.c_prev[:, t]
        dc_next = dc * f

        dz = np.concatenate([
            di * i * (1. - i),
            df * f * (1. - f),
            dg * (1. - g ** 2),
            do * o * (1. - o)
        ], axis=1)

        dxw[:, t] = dz
        dh_next = dz @ U

    dU = np.einsum("nlg,nlh->gh", dxw, cache.h_prev)
    dW = np.einsum("nlg,nle->ge", dxw, cache.x)
    db = dxw.sum(axis=(0, 1))
    dx = dxw @ W

    return dx, dW, dU, db


def _reversal_index(lengths: Sequence[int], length: int) -> np.ndarray:
    """Per-row permutation reversing the valid prefix and fixing the padding. It is an involution."""

    index = np.tile(np.arange(length), (len(lengths), 1))
    for row, n_valid in enumerate(lengths):
        index[row, :n_valid] = np.arange(n_valid)[::-1]

    return index


@dataclass
class BiLSTMCache:

    lengths: List[int]
    reversal: np.ndarray
    forward: LSTMCache
    backward: LSTMCache


def bilstm_forward(x: np.ndarray, lengths: Sequence[int], params: ParameterStore) -> Tuple[np.ndarray, BiLSTMCache]:

    reversal = _reversal_index(lengths, x.shape[1])[:, :, None]

    fw_out, fw_cache = lstm_forward(x, params["lstm_forward.W"], params["lstm_forward.U"], params["lstm_forward.b"])

    x_rev = np.take_along_axis(x, reversal, axis=1)
    bw_rev, bw_cache = lstm_forward(x_rev, params["lstm_backward.W"], params["lstm_backward.U"], params["lstm_backward.b"])
    bw_out = np.take_along_axis(bw_rev, reversal, axis=1)

    return np.concatenate([fw_out, bw_out], axis=2), BiLSTMCache(list(lengths), reversal, fw_cache, bw_cache)


def bilstm_backward(d_out: np.ndarray,
                    cache: BiLSTMCache,
                    params: ParameterStore) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """d_out must be zero at padded positions."""

    hidden = d_out.shape[2] // 2
    grads = dict()

    dx_fw, grads["lstm_forward.W"], grads["lstm_forward.U"], grads["lstm_forward.b"] = lstm_backward(
        d_out[:, :, :hidden], cache.forward, params["lstm_forward.W"], params["lstm_forward.U"]
    )

    d_bw_rev = np.take_along_axis(d_out[:, :, hidden:], cache.reversal, axis=1)
    dx_rev, grads["lstm_backward.W"], grads["lstm_backward.U"], grads["lstm_backward.b"] = lstm_backward(
        d_bw_rev, cache.backward, params["lstm_backward.W"], params["lstm_backward.U"]
    )

    return dx_fw + np.take_along_axis(dx_rev, cache.reversal, axis=1), grads


@dataclass
class EncodingCache:

    token_ids: List[np.ndarray]
    batch_rows: List[Optional[int]]  # row in the padded batch, None for empty messages
    padded_ids: Optional[np.ndarray]
    bilstm: Optional[BiLSTMCache]
    masks: List[Optional[np.ndarray]]


def _embedding_rows(token_ids: np.ndarray, n_rows: int) -> np.ndarray:
    """Ids grown past the embedding table (new speakers during a stream) read the UNKNOWN row."""
    return np.where(token_ids < n_rows, token_ids, UNKNOWN_ID)


def encode_sequences(token_id_lists: Sequence[Sequence[int]],
                     params: ParameterStore,
                     dropout: float = 0.,
                     rng: Optional[np.random.Generator] = None) -> Tuple[List[np.ndarray], EncodingCache]:
    """
        Bi-LSTM encodes a batch of token id sequences independently of each other. An empty
        sequence encodes to the single learned `empty_message` vector.
    """

    embedding = params["embedding"]
    token_ids = [_embedding_rows(np.asarray(ids, dtype=np.int64), embedding.shape[0]) for ids in token_id_lists]

    batch_rows: List[Optional[int]] = list()
    lengths = list()
    for ids in token_ids:
        batch_rows.append(len(lengths) if len(ids) else None)
        if len(ids):
            lengths.append(len(ids))

    outputs: List[Optional[np.ndarray]] = [None] * len(token_ids)
    padded_ids, bilstm_cache = None, None

    if lengths:
        padded_ids = np.full((len(lengths), max(lengths)), PADDING_ID, dtype=np.int64)
        for ids, row in zip(token_ids, batch_rows):
            if row is not None:
                padded_ids[row, :len(ids)] = ids

        bilstm_out, bilstm_cache = bilstm_forward(embedding[padded_ids], lengths, params)
        for position, row in enumerate(batch_rows):
            if row is not None:
                outputs[position] = bilstm_out[row, :lengths[row]]

    for position, row in enumerate(batch_rows):
        if row is None:
            outputs[position] = params["empty_message"][None, :]

    masks = list()
    for position, output in enumerate(outputs):
        mask = dropout_mask(output.shape, dropout, rng, output.dtype)
        masks.append(mask)
        if mask is not None:
            outputs[position] = output * mask

    return outputs, EncodingCache(token_ids, batch_rows, padded_ids, bilstm_cache, masks)


def encode_sequences_backward(d_outputs: Sequence[np.ndarray],
                              cache: EncodingCache,
                              params: ParameterStore) -> Dict[str, np.ndarray]:

    grads = params.zeros_like()

    d_outputs = [d if mask is None else d * mask for d, mask in zip(d_outputs, cache.masks)]

    for d_output, row in zip(d_outputs, cache.batch_rows):
        if row is None:
            grads["empty_message"] += d_output.sum(axis=0)

    if cache.bilstm is not None:

        n_rows, length = cache.padded_ids.shape
        d_bilstm = np.zeros((n_rows, length, 2 * params.hidden), dtype=params.dtype)
        for d_output, row in zip(d_outputs, cache.batch_rows):
            if row is not None:
                d_bilstm[row, :d_output.shape[0]] += d_output

        dx, lstm_grads = bilstm_backward(d_bilstm, cache.bilstm, params)
        for name, grad in lstm_grads.items():
            grads[name] += grad

        np.add.at(grads["embedding"], cache.padded_ids.reshape(-1), dx.reshape(-1, dx.shape[2]))

    return grads


def sequence_encode(token_ids: Sequence[int], params: ParameterStore) -> np.ndarray:
    """(L, 2H) token representations; position k is forward-state(k) ⊕ backward-state(k)."""

    outputs, _ = encode_sequences([token_ids], params)
    return outputs[0]


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(np.sum(grad.astype(np.float64) ** 2) for grad in grads.values())))


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:

    norm = global_norm(grads)
    if max_norm <= 0. or norm <= max_norm:
        return grads, norm

    scale = max_norm / norm
    return {name: grad * scale for name, grad in grads.items()}, norm


@dataclass
class OptimizerState:

    first_moment: Dict[str, np.ndarray]
    second_moment: Dict[str, np.ndarray]
    step: int = 0
    learning_rate: float = 1e-5
    l2: float = 1e-7
    dropout: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_parameters(cls, params: ParameterStore, **kwargs) -> "OptimizerState":
        return cls(params.zeros_like(), params.zeros_like(), **kwargs)


def adam_step(params: ParameterStore,
              grads: Dict[str, np.ndarray],
              state: OptimizerState) -> Tuple[ParameterStore, OptimizerState]:
    """
        One bias-corrected Adam update in place. The L2 penalty enters as `l2 * θ` added to the
        gradient before the moment updates.
    """

    if set(grads) != set(params.names):
        raise ValueError(f"gradient names {sorted(grads)} do not match parameters {params.names}")

    for name in params.names:
        if grads[name].shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {grads[name].shape} != parameter shape {params[name].shape}")
        if state.first_moment[name].shape != params[name].shape:
            raise ValueError(f"{name}: optimizer moments do not match the parameter shape")

    state.step += 1
    correction1 = 1. - state.beta1 ** state.step
    correction2 = 1. - state.beta2 ** state.step

    for name in params.names:

        theta = params[name]
        grad = grads[name] + state.l2 * theta

        m = state.first_moment[name] = state.beta1 * state.first_moment[name] + (1. - state.beta1) * grad
        v = state.second_moment[name] = state.beta2 * state.second_moment[name] + (1. - state.beta2) * grad ** 2

        update = state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        params[name] = (theta - update).astype(theta.dtype)

    return params, state


LossFunction = Callable[[Dict[str, np.ndarray]], Tuple[float, Dict[str, np.ndarray]]]


def check_gradients(loss_fn: LossFunction,
                    inputs: Dict[str, np.ndarray],
                    epsilon: float = 1e-5,
                    atol: float = 1e-7) -> float:
    """
        Compares analytic gradients with central finite differences for every entry of every input
        array. The error of one entry is |a - n| / (|a| + |n| + 1e-12); entries whose absolute
        difference is at most `atol` agree exactly, so round-off on zero gradients does not count.
        The maximum over all entries of all arrays is returned.

        `loss_fn` maps the (mutated in place) inputs to (loss, gradients).
    """

    if not (1e-6 <= epsilon <= 1e-4):
        raise ValueError(f"epsilon must lie in [1e-6, 1e-4], got {epsilon}")

    for name, array in inputs.items():
        if array.dtype != np.float64:
            raise ValueError(f"{name}: gradient checks need double precision, got {array.dtype}")

    loss, analytic = loss_fn(inputs)
    if not np.isfinite(loss):
        raise NumericFailure(f"non-finite loss {loss} at the unperturbed point")

    worst = 0.
    for name, array in inputs.items():

        numeric = np.zeros_like(array)

        for position in np.ndindex(array.shape):

            original = array[position]
            array[position] = original + epsilon
            loss_plus, _ = loss_fn(inputs)
            array[position] = original - epsilon
            loss_minus, _ = loss_fn(inputs)
            array[position] = original

            if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
                raise NumericFailure(f"non-finite loss while perturbing {name}{list(position)}")

            numeric[position] = (loss_plus - loss_minus) / (2. * epsilon)

        difference = np.abs(analytic[name] - numeric)
        relative = difference / (np.abs(analytic[name]) + np.abs(numeric) + 1e-12)
        error = np.max(np.where(difference > atol, relative, 0.), initial=0.)
        logger.debug("gradient check %s: relative error %.3e", name, error)
        worst = max(worst, float(error))

    return worst
